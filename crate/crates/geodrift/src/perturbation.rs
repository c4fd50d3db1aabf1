//! Bump profiles, the normal displacement `ψ` and the fluctuating surface.
//!
//! The fluctuating surface is the zero set of `Q(y) − Q(π(y)) + ε |∇Q(π(y))| ψ(π(y), t)`
//! where `π` is the foot point along normal lines. Writing points near `M`
//! as `z + s n(z)`, its embedding is `G(z) = z + s(z, t) n(z)` with
//! `s = ε ψ + O(ε²)`.

use nalgebra::{Matrix2, Matrix3x2};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::fermi_charts::FermiChart;
use crate::jet::{dot, Jet, Scalar};
use crate::quadrature::integrate;
use crate::surface_geometry::{ImplicitSurface, V3};

/// Half-width of `supp β` as a fraction of the chart half-width `δ₁`.
pub const BETA_FRACTION: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BumpKind {
    /// `u ↦ exp(−1/(1−u²))` on `(−1, 1)`.
    #[default]
    Smooth,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpProfile {
    pub kind: BumpKind,
    /// Normalization making the integral one.
    pub c: f64,
}

impl Default for BumpProfile {
    fn default() -> Self {
        BumpProfile::smooth()
    }
}

fn raw_bump<T: Scalar>(u: T) -> T {
    let w = 1.0 - u.val() * u.val();
    if w <= 0.0 {
        return T::cst(0.0);
    }
    (T::cst(-1.0) / (T::cst(1.0) - u * u)).exp()
}

impl BumpProfile {
    pub fn smooth() -> Self {
        let i = integrate(raw_bump::<f64>, -1.0, 1.0, 1e-15);
        BumpProfile { kind: BumpKind::Smooth, c: 1.0 / i }
    }

    pub fn eval_gen<T: Scalar>(&self, u: T) -> T {
        match self.kind {
            BumpKind::Smooth => raw_bump(u) * self.c,
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        self.eval_gen(u)
    }
}

/// Time profile `χ(θ)`, 2π-periodic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeProfile {
    Cos { amplitude: f64 },
    Constant { value: f64 },
}

impl Default for TimeProfile {
    fn default() -> Self {
        TimeProfile::Cos { amplitude: 1.0 }
    }
}

impl TimeProfile {
    pub fn eval_gen<T: Scalar>(&self, theta: T) -> T {
        match *self {
            TimeProfile::Cos { amplitude } => theta.cos() * amplitude,
            TimeProfile::Constant { value } => T::cst(value),
        }
    }

    /// `k`-th derivative.
    pub fn deriv(&self, theta: f64, k: u32) -> f64 {
        match *self {
            TimeProfile::Cos { amplitude } => {
                let (s, c) = theta.sin_cos();
                amplitude * [c, -s, -c, s][(k % 4) as usize]
            }
            TimeProfile::Constant { value } => {
                if k == 0 {
                    value
                } else {
                    0.0
                }
            }
        }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        self.deriv(theta, 0)
    }

    /// Flip the sign of the profile.
    pub fn negated(&self) -> Self {
        match *self {
            TimeProfile::Cos { amplitude } => TimeProfile::Cos { amplitude: -amplitude },
            TimeProfile::Constant { value } => TimeProfile::Constant { value: -value },
        }
    }

    pub fn sup_abs_deriv(&self, k: u32) -> f64 {
        match *self {
            TimeProfile::Cos { amplitude } => amplitude.abs(),
            TimeProfile::Constant { value } => {
                if k == 0 {
                    value.abs()
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    #[serde(default)]
    pub alpha: BumpProfile,
    pub rho: f64,
    /// Half-width of `supp β`.
    pub beta_width: f64,
    #[serde(default)]
    pub chi: TimeProfile,
    pub epsilon: f64,
    pub kappa_floor: f64,
}

impl PerturbationSpec {
    pub fn new(rho: f64, chi: TimeProfile, epsilon: f64, chart: &FermiChart) -> Self {
        PerturbationSpec {
            alpha: BumpProfile::smooth(),
            rho,
            beta_width: BETA_FRACTION * chart.delta1,
            chi,
            epsilon,
            kappa_floor: 1e-3,
        }
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        PerturbationSpec { epsilon, ..self.clone() }
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        PerturbationSpec { rho, ..self.clone() }
    }

    pub fn with_chi(&self, chi: TimeProfile) -> Self {
        PerturbationSpec { chi, ..self.clone() }
    }

    pub fn alpha_rho_gen<T: Scalar>(&self, u: T) -> T {
        self.alpha.eval_gen(u / self.rho) / self.rho
    }

    pub fn alpha_rho(&self, u: f64) -> f64 {
        self.alpha_rho_gen(u)
    }

    pub fn beta_gen<T: Scalar>(&self, x1: T) -> T {
        raw_bump(x1 / self.beta_width) * std::f64::consts::E
    }

    pub fn beta(&self, x1: f64) -> f64 {
        self.beta_gen(x1)
    }

    pub fn chi(&self, theta: f64) -> f64 {
        self.chi.eval(theta)
    }

    /// `2 αρ(x₀) β(x₁) χ(θ)`.
    pub fn reference_gbar00(&self, x: &[f64; 2], theta: f64) -> f64 {
        2.0 * self.alpha_rho(x[0]) * self.beta(x[1]) * self.chi(theta)
    }

    pub fn validate(&self, chart: &FermiChart) -> Result<()> {
        let bad = |m: String| Err(GeoError::InvalidConfig(m));
        if !(self.rho > 0.0) {
            return bad(format!("ρ > 0 violated: ρ = {}", self.rho));
        }
        if self.rho >= chart.delta0 {
            return bad(format!("ρ < δ₀ violated: ρ = {}, δ₀ = {}", self.rho, chart.delta0));
        }
        if self.rho >= crate::fermi_charts::CHART_BUFFER * chart.delta0 {
            return bad(format!("ρ < 0.9·δ₀ (chart buffer) violated: ρ = {}, δ₀ = {}", self.rho, chart.delta0));
        }
        if !(self.beta_width > 0.0 && self.beta_width < crate::fermi_charts::CHART_BUFFER * chart.delta1) {
            return bad(format!("supp β ⊂ (−0.9·δ₁, 0.9·δ₁) violated: width {}", self.beta_width));
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!("ε ≥ 0 violated: ε = {}", self.epsilon));
        }
        Ok(())
    }
}

/// Static and fluctuating pullback metrics at one chart point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricData {
    /// Static Fermi metric and its `x₀`, `x₁` derivatives.
    pub g: Matrix2<f64>,
    pub dg: [Matrix2<f64>; 2],
    /// Fluctuating metric and its `x₀`, `x₁`, `θ` derivatives.
    pub ge: Matrix2<f64>,
    pub dge: [Matrix2<f64>; 3],
    pub h: V3,
    pub dh: Matrix3x2<f64>,
}

fn metric_of(e: &[Jet; 3]) -> (Matrix2<f64>, [Matrix2<f64>; 3]) {
    let g = Matrix2::from_fn(|i, j| (0..3).map(|r| e[r].d(i) * e[r].d(j)).sum());
    let dg = std::array::from_fn(|k| {
        Matrix2::from_fn(|i, j| (0..3).map(|r| e[r].dd(i, k) * e[r].d(j) + e[r].d(i) * e[r].dd(j, k)).sum())
    });
    (g, dg)
}

/// A perturbation bound to its surface and chart.
#[derive(Clone, Copy, Debug)]
pub struct Fluctuation<'a> {
    pub surface: &'a ImplicitSurface,
    pub chart: &'a FermiChart,
    pub spec: &'a PerturbationSpec,
}

impl<'a> Fluctuation<'a> {
    pub fn new(surface: &'a ImplicitSurface, chart: &'a FermiChart, spec: &'a PerturbationSpec) -> Result<Self> {
        spec.validate(chart)?;
        let n = 200;
        let kmin = (0..=n)
            .map(|k| {
                let x0 = spec.rho * (2.0 * k as f64 / n as f64 - 1.0);
                chart.axis_curvature_gen(surface, x0).abs()
            })
            .fold(f64::INFINITY, f64::min);
        if kmin < spec.kappa_floor {
            return Err(GeoError::KappaVanishes(kmin));
        }
        Ok(Fluctuation { surface, chart, spec })
    }

    /// `ψ` in chart coordinates, without the `|∇Q|` normalization of the
    /// curvature: `−αρ(x₀) β(x₁) χ(θ) / κ̂(x₀)` with `κ̂ = κ / |∇Q|`.
    pub fn psi_chart_gen<T: Scalar>(&self, x: &[T; 2], theta: T) -> T {
        let a = self.spec.alpha_rho_gen(x[0]);
        let b = self.spec.beta_gen(x[1]);
        if a.val() == 0.0 || b.val() == 0.0 {
            return T::cst(0.0);
        }
        let k = self.chart.axis_curvature_gen(self.surface, x[0]);
        -(a * b * self.spec.chi.eval_gen(theta)) / k
    }

    pub fn psi_chart(&self, x: &[f64; 2], theta: f64) -> f64 {
        self.psi_chart_gen(x, theta)
    }

    /// `ψ(z, t)` for a point of `M`; zero outside the chart.
    pub fn psi(&self, z: &V3, t: f64) -> Result<f64> {
        match self.chart.fermi_inverse(self.surface, z) {
            Ok(x) => Ok(self.psi_chart(&x, t)),
            Err(GeoError::OutsideChart) => Ok(0.0),
            Err(e) => Err(e),
        }
    }

    /// Normal offset `s` of `G(h(x))` solving the level-set equation.
    fn offset_gen<T: Scalar>(&self, epsilon: f64, h: &[T; 3], psi: T) -> Result<[T; 3]> {
        let g = self.surface.grad_gen(h);
        let gn = dot(&g, &g).sqrt();
        let n = [-g[0] / gn, -g[1] / gn, -g[2] / gn];
        let mut s = psi * epsilon;
        let target = self.surface.q_gen(h) - gn * psi * epsilon;
        let mut extra = 0;
        for _ in 0..40 {
            let e = [h[0] + s * n[0], h[1] + s * n[1], h[2] + s * n[2]];
            let f = self.surface.q_gen(&e) - target;
            let fp = dot(&self.surface.grad_gen(&e), &n);
            let ds = f / fp;
            s -= ds;
            if ds.val().abs() <= 1e-14 {
                extra += 1;
                if extra > 2 {
                    return Ok([h[0] + s * n[0], h[1] + s * n[1], h[2] + s * n[2]]);
                }
            }
        }
        Err(GeoError::NoConvergence("fluctuating embedding offset".into()))
    }

    /// `G_{ε,θ}(h(x))`.
    pub fn embedding_gen<T: Scalar>(&self, epsilon: f64, x: &[T; 2], theta: T) -> Result<[T; 3]> {
        let h = self.chart.forward_gen(self.surface, x);
        let psi = self.psi_chart_gen(x, theta);
        if epsilon == 0.0 || psi.val() == 0.0 {
            return Ok(h);
        }
        self.offset_gen(epsilon, &h, psi)
    }

    /// `G_{ε,t}(z)` for a point of `M` (identity outside the chart).
    pub fn fluctuating_embedding(&self, epsilon: f64, z: &V3, t: f64) -> Result<V3> {
        let x = match self.chart.fermi_inverse(self.surface, z) {
            Ok(x) => x,
            Err(GeoError::OutsideChart) => return Ok(*z),
            Err(e) => return Err(e),
        };
        let psi = self.psi_chart(&x, t);
        if epsilon == 0.0 || psi == 0.0 {
            return Ok(*z);
        }
        self.offset_gen(epsilon, z, psi)
    }

    pub fn metric_data(&self, epsilon: f64, x: &[f64; 2], theta: f64) -> Result<MetricData> {
        let xj = [Jet::var(x[0], 0), Jet::var(x[1], 1)];
        let th = Jet::var(theta, 2);
        let h = self.chart.forward_gen(self.surface, &xj);
        let psi = self.psi_chart_gen(&xj, th);
        let e = if epsilon == 0.0 || psi.v == 0.0 { h } else { self.offset_gen(epsilon, &h, psi)? };
        let (g, dg3) = metric_of(&h);
        let (ge, dge) = metric_of(&e);
        Ok(MetricData {
            g,
            dg: [dg3[0], dg3[1]],
            ge,
            dge,
            h: [h[0].v, h[1].v, h[2].v],
            dh: Matrix3x2::from_fn(|r, c| h[r].d(c)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> PerturbationSpec {
        PerturbationSpec {
            alpha: BumpProfile::smooth(),
            rho: 0.2,
            beta_width: 0.08,
            chi: TimeProfile::Cos { amplitude: 1.0 },
            epsilon: 1e-3,
            kappa_floor: 1e-3,
        }
    }

    #[test]
    fn alpha_rho_normalized_and_scaled() {
        let s = spec();
        let i = integrate(|u| s.alpha_rho(u), -s.rho, s.rho, 1e-15);
        assert!((i - 1.0).abs() < 1e-10, "{i}");
        assert_eq!(s.alpha_rho(s.rho), 0.0);
        let half = s.with_rho(0.1);
        assert!((half.alpha_rho(0.0) / s.alpha_rho(0.0) - 2.0).abs() < 1e-12);
        assert!((s.beta(0.0) - 1.0).abs() < 1e-15);
        assert_eq!(s.beta(0.08), 0.0);
    }

    #[test]
    fn reference_gbar_values() {
        let s = spec();
        assert!((s.reference_gbar00(&[0.0, 0.0], 0.0) - 2.0 * s.alpha_rho(0.0)).abs() < 1e-15);
        assert!(s.reference_gbar00(&[0.0, 0.0], std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(s.reference_gbar00(&[0.0, 0.1], 0.0), 0.0);
        let avg = integrate(|t| s.chi(t), 0.0, 2.0 * std::f64::consts::PI, 1e-15);
        assert!(avg.abs() < 1e-12);
    }
}
