//! Transverse homoclinic orbit to the closed geodesic.
//!
//! Both invariant manifolds are parametrized by a fundamental domain of their
//! linear Floquet fibers through the geodesic's seed point: the unstable seed
//! at offset `±d λ^τ` and the stable seed at offset `b d λ^σ`, with
//! `τ, σ ∈ [0, 1)` and `b` the chosen stable branch. A mid section `Σ_c` is
//! placed on the first excursion of the backward stable orbit, where it is
//! farthest from the geodesic. The stable trace on `Σ_c` is a simple curve;
//! the unstable trace is a union of pieces, and a homoclinic point is a
//! transverse crossing of the two, refined by Newton in `(τ, σ)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{section_crossings, ClosedGeodesic, CrossingSearch, SectionHit};
use crate::error::{GeoError, Result};
use crate::geodesic_dynamics::{unpack, StaticFlow};
use crate::ode::IntegratorOptions;
use crate::section::Section;
use crate::surface_geometry::{norm, sub, ImplicitSurface, V3};

/// Section crossings closer than this to the geodesic's section point (in
/// `(u, ϑ)`) enter the asymptotic phase fits.
pub const NEAR_GEODESIC: f64 = 2e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HomoclinicSearch {
    /// Fiber offset used while scanning.
    pub search_offset: f64,
    /// Fiber offset of the final seeds (sets how far the tails reach).
    pub tail_offset: f64,
    /// Sign of the stable branch.
    pub stable_branch: f64,
    /// Crossings of `Σ_c` farther than this from its base are ignored.
    pub gate: f64,
    pub stable_samples: usize,
    pub scan_samples: usize,
    pub max_crossings: usize,
    /// Maximal integration time of a scanned unstable orbit.
    pub horizon: f64,
    pub angle_floor: f64,
    /// Arclength past the first near-geodesic crossing covered by the
    /// asymptotic phase fits.
    pub fit_window: f64,
    pub table_step: f64,
}

impl Default for HomoclinicSearch {
    fn default() -> Self {
        HomoclinicSearch {
            search_offset: 1e-6,
            tail_offset: 1e-9,
            stable_branch: -1.0,
            gate: 0.3,
            stable_samples: 400,
            scan_samples: 1000,
            max_crossings: 6,
            horizon: 250.0,
            angle_floor: 1e-3,
            fit_window: 32.0,
            table_step: 0.02,
        }
    }
}

/// Result of a three-parameter fit `c_k = a + B r^k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricFit {
    pub a: f64,
    pub b: f64,
    pub r: f64,
    /// RMS misfit relative to the largest deviation `|c_k - a|`.
    pub residual: f64,
    pub n: usize,
}

fn linear_ab(c: &[f64], r: f64) -> (f64, f64, f64) {
    let n = c.len() as f64;
    let (mut s1, mut s2, mut sc, mut sgc) = (0.0, 0.0, 0.0, 0.0);
    let mut p = 1.0;
    for &ck in c {
        s1 += p;
        s2 += p * p;
        sc += ck;
        sgc += p * ck;
        p *= r;
    }
    let det = n * s2 - s1 * s1;
    let (a, b) = if det.abs() < 1e-300 { (sc / n, 0.0) } else { ((s2 * sc - s1 * sgc) / det, (n * sgc - s1 * sc) / det) };
    let mut sse = 0.0;
    let mut p = 1.0;
    for &ck in c {
        let e = ck - a - b * p;
        sse += e * e;
        p *= r;
    }
    (a, b, sse)
}

/// Least-squares fit of `c_k = a + B r^k` by variable projection in `r`.
pub fn fit_geometric(c: &[f64]) -> Result<GeometricFit> {
    if c.len() < 4 {
        return Err(GeoError::FitFailed(format!("only {} samples", c.len())));
    }
    let sse = |r: f64| linear_ab(c, r).2;
    let mut best = (f64::INFINITY, 0.5);
    for i in 1..200 {
        let r = i as f64 / 200.0;
        let e = sse(r);
        if e < best.0 {
            best = (e, r);
        }
    }
    let (mut lo, mut hi) = ((best.1 - 0.005).max(1e-6), (best.1 + 0.005).min(1.0 - 1e-9));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let x1 = hi - g * (hi - lo);
        let x2 = lo + g * (hi - lo);
        if sse(x1) < sse(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    let r = 0.5 * (lo + hi);
    let (a, b, e) = linear_ab(c, r);
    let dev = c.iter().map(|x| (x - a).abs()).fold(0.0, f64::max);
    let rms = (e / c.len() as f64).sqrt();
    let residual = if dev > 0.0 { rms / dev } else { 0.0 };
    Ok(GeometricFit { a, b, r, residual, n: c.len() })
}

/// Fit of `log d = log C - rate |s|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub log_c: f64,
    /// RMS misfit relative to the spread of `log d`.
    pub residual: f64,
}

pub fn fit_decay(s: &[f64], d: &[f64]) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = s.iter().zip(d).filter(|(_, &d)| d > 0.0).map(|(&s, &d)| (s.abs(), d.ln())).collect();
    if pts.len() < 3 {
        return Err(GeoError::FitFailed("too few samples for the decay fit".into()));
    }
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let (mx, my) = (sx / n, sy / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rms = (pts.iter().map(|p| (p.1 - icpt - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    let spread = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) - pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    Ok(DecayFit { rate: -slope, log_c: icpt, residual: if spread > 0.0 { rms / spread } else { 0.0 } })
}

/// Unwrap `(-s_k) mod L` into a continuous sequence.
fn phase_offsets(times: &[f64], length: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(times.len());
    for &t in times {
        let mut c = (-t).rem_euclid(length);
        if let Some(&p) = out.last() {
            c += ((p - c) / length).round() * length;
        }
        out.push(c);
    }
    out
}

/// Geometric fit of the phase offsets of the crossings `cross` (ordered away
/// from the origin) lying within `window` of the first one.
pub fn fit_phase_window(cross: &[f64], window: f64, length: f64) -> Result<GeometricFit> {
    let Some(s0) = cross.first() else {
        return Err(GeoError::FitFailed("no crossings near the geodesic".into()));
    };
    let pts: Vec<f64> = cross.iter().copied().filter(|s| s.abs() - s0.abs() <= window + 1e-9).collect();
    let fit = fit_geometric(&phase_offsets(&pts, length))?;
    if fit.residual > 0.1 {
        return Err(GeoError::FitFailed(format!("phase fit residual {:.3}", fit.residual)));
    }
    Ok(fit)
}

/// Asymptotic phase of `state` (unit speed) on the stable (`direction = +1`)
/// or unstable (`-1`) manifold of the geodesic, obtained by fitting the
/// section crossing times of its orbit over time `horizon`.
pub fn asymptotic_phase(
    surface: &ImplicitSurface,
    geodesic: &ClosedGeodesic,
    state: &[f64; 6],
    direction: f64,
    horizon: f64,
    opts: &IntegratorOptions,
) -> Result<GeometricFit> {
    let dir = if direction < 0.0 { -1.0 } else { 1.0 };
    let search = CrossingSearch { t_min: 0.0, t_max: horizon, gate: 0.5 * surface.scale };
    let hits = section_crossings(surface, &geodesic.section, state, dir, opts, &search, usize::MAX)?;
    // Near-geodesic crossings, up to where the orbit starts to leave again.
    let mut near = Vec::new();
    let mut dmin = f64::INFINITY;
    for h in &hits {
        let x = geodesic.section.coords6(surface, &h.y);
        let d = (x[0] - geodesic.section_point[0]).hypot(x[1] - geodesic.section_point[1]);
        if d >= NEAR_GEODESIC {
            if near.is_empty() {
                continue;
            }
            break;
        }
        if d > 10.0 * dmin.max(1e-12) {
            break;
        }
        dmin = dmin.min(d);
        near.push(h.t);
    }
    let fit = fit_phase_window(&near, f64::INFINITY, geodesic.length_l)?;
    Ok(GeometricFit { a: (fit.a * geodesic.phase_scale).rem_euclid(2.0 * PI), ..fit })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomoclinicOrbit {
    /// `ξ(0)`, the crossing of the mid section.
    pub seed_z: V3,
    pub seed_v: V3,
    pub s_min: f64,
    pub table_step: f64,
    /// `(ξ, ξ')` at `s = s_min + k · table_step`.
    pub samples: Vec<[f64; 6]>,
    pub a_minus: f64,
    pub a_plus: f64,
    #[serde(rename = "Delta")]
    pub delta: f64,
    pub transversality_angle: f64,
    pub decay_rate: f64,
    pub fit_minus: GeometricFit,
    pub fit_plus: GeometricFit,
    pub decay_minus: DecayFit,
    pub decay_plus: DecayFit,
    /// Phases from the seed fiber times, for cross-checking the fits.
    pub a_minus_fiber: f64,
    pub a_plus_fiber: f64,
    /// Mismatch of the two halves at `ξ(0)`.
    pub seam: f64,
    pub mid_section: Section,
    pub unstable_sign: f64,
    pub tau: f64,
    pub sigma: f64,
    pub search: HomoclinicSearch,
    /// Crossing times of the geodesic's section on either tail.
    pub crossings_minus: Vec<f64>,
    pub crossings_plus: Vec<f64>,
    /// Passage times through the mid section from the two fiber seeds.
    pub t_unstable: f64,
    pub t_stable: f64,
    /// Arclength of the present origin on the orbit as found; the mid
    /// section, seam and fiber passage times refer to the original origin.
    #[serde(default)]
    pub origin_shift: f64,
}

impl HomoclinicOrbit {
    pub fn s_max(&self) -> f64 {
        self.s_min + self.table_step * (self.samples.len() - 1) as f64
    }

    pub fn seed(&self) -> [f64; 6] {
        crate::geodesic_dynamics::pack(&self.seed_z, &self.seed_v)
    }

    /// Tabulated node nearest to `s` and its arclength.
    pub fn node(&self, s: f64) -> (f64, [f64; 6]) {
        let k = ((s - self.s_min) / self.table_step).round().clamp(0.0, (self.samples.len() - 1) as f64) as usize;
        (self.s_min + k as f64 * self.table_step, self.samples[k])
    }

    /// `(ξ(s), ξ'(s))` by flowing from the nearest tabulated node.
    pub fn state_at(&self, surface: &ImplicitSurface, s: f64, opts: &IntegratorOptions) -> Result<[f64; 6]> {
        let (s0, y) = self.node(s);
        if s == s0 {
            return Ok(y);
        }
        let (z, v) = unpack(&y);
        let mut fl = StaticFlow::new(surface, z, v, 0.0, (s - s0).signum(), *opts);
        fl.run_to(s - s0)
    }

    /// `(a₋, a₊, Δ)` from fits over `window`, with the arclength origin moved
    /// to `x0`.
    pub fn phases(&self, geodesic: &ClosedGeodesic, window: f64, x0: f64) -> Result<(f64, f64, f64)> {
        let l = geodesic.length_l;
        let shift = |v: &[f64]| -> Vec<f64> { v.iter().map(|s| s - x0).collect() };
        let fm = fit_phase_window(&shift(&self.crossings_minus), window, l)?;
        let fp = fit_phase_window(&shift(&self.crossings_plus), window, l)?;
        let am = (fm.a * geodesic.phase_scale).rem_euclid(2.0 * PI);
        let ap = (fp.a * geodesic.phase_scale).rem_euclid(2.0 * PI);
        Ok((am, ap, (ap - am).rem_euclid(2.0 * PI)))
    }
}

impl HomoclinicOrbit {
    /// The same orbit with arclength origin moved to `ξ(x0)`; phases shift
    /// by `x0` and `Δ` is unchanged.
    pub fn recentered(&self, geodesic: &ClosedGeodesic, surface: &ImplicitSurface, x0: f64, opts: &IntegratorOptions) -> Result<Self> {
        let y = self.state_at(surface, x0, opts)?;
        let shift = |v: &[f64]| -> Vec<f64> { v.iter().map(|s| s - x0).collect() };
        let ps = geodesic.phase_scale;
        let crossings_minus = shift(&self.crossings_minus);
        let crossings_plus = shift(&self.crossings_plus);
        let fit_minus = fit_phase_window(&crossings_minus, self.search.fit_window, geodesic.length_l)?;
        let fit_plus = fit_phase_window(&crossings_plus, self.search.fit_window, geodesic.length_l)?;
        let a_minus = (fit_minus.a * ps).rem_euclid(2.0 * PI);
        let a_plus = (fit_plus.a * ps).rem_euclid(2.0 * PI);
        Ok(HomoclinicOrbit {
            seed_z: [y[0], y[1], y[2]],
            seed_v: [y[3], y[4], y[5]],
            s_min: self.s_min - x0,
            a_minus,
            a_plus,
            delta: (a_plus - a_minus).rem_euclid(2.0 * PI),
            fit_minus,
            fit_plus,
            a_minus_fiber: (self.a_minus_fiber + x0 * ps).rem_euclid(2.0 * PI),
            a_plus_fiber: (self.a_plus_fiber + x0 * ps).rem_euclid(2.0 * PI),
            crossings_minus,
            crossings_plus,
            origin_shift: self.origin_shift + x0,
            ..self.clone()
        })
    }

    /// `(a₋, a₊, Δ)` of the same orbit traversed at speed `j`: both tails are
    /// re-integrated from their tabulated ends at speed `j`, and the crossing
    /// times `t` of the geodesic's section become arclengths `j t`.
    pub fn phases_at_speed(
        &self,
        surface: &ImplicitSurface,
        geodesic: &ClosedGeodesic,
        j: f64,
        window: f64,
        opts: &IntegratorOptions,
    ) -> Result<(f64, f64, f64)> {
        let gs = &geodesic.section;
        let search = CrossingSearch { t_min: 0.0, t_max: 0.0, gate: 0.5 * surface.scale };
        let tail = |y: &[f64; 6], s0: f64, dir: f64| -> Result<Vec<f64>> {
            let yj: [f64; 6] = std::array::from_fn(|i| if i < 3 { y[i] } else { j * y[i] });
            let search = CrossingSearch { t_max: s0.abs() / j, ..search };
            let hits = section_crossings(surface, gs, &yj, dir, opts, &search, usize::MAX)?;
            Ok(hits
                .iter()
                .filter(|h| {
                    let x = gs.coords6(surface, &h.y);
                    (x[0] - geodesic.section_point[0]).hypot(x[1] - geodesic.section_point[1]) < NEAR_GEODESIC
                })
                .map(|h| s0 + j * h.t)
                .collect())
        };
        let mut minus = tail(&self.samples[0], self.s_min, 1.0)?;
        minus.sort_by(|a, b| b.total_cmp(a));
        let mut plus = tail(self.samples.last().expect("samples"), self.s_max(), -1.0)?;
        plus.sort_by(f64::total_cmp);
        let l = geodesic.length_l;
        let fm = fit_phase_window(&minus, window, l)?;
        let fp = fit_phase_window(&plus, window, l)?;
        let am = (fm.a * geodesic.phase_scale).rem_euclid(2.0 * PI);
        let ap = (fp.a * geodesic.phase_scale).rem_euclid(2.0 * PI);
        Ok((am, ap, (ap - am).rem_euclid(2.0 * PI)))
    }

    /// Smallest distance from the segment `|s − c| ≤ δ₀` to the parts of the
    /// tabulated orbit more than `δ₀ + gap` away from `c` in arclength.
    pub fn self_clearance(&self, c: f64, delta0: f64, gap: f64) -> f64 {
        let at = |k: usize| self.s_min + k as f64 * self.table_step;
        let seg: Vec<&[f64; 6]> =
            self.samples.iter().enumerate().filter(|(k, _)| (at(*k) - c).abs() <= delta0).map(|(_, y)| y).collect();
        let mut m = f64::INFINITY;
        for (k, q) in self.samples.iter().enumerate() {
            if (at(k) - c).abs() <= delta0 + gap {
                continue;
            }
            for p in &seg {
                m = m.min(norm(&sub(&[p[0], p[1], p[2]], &[q[0], q[1], q[2]])));
            }
        }
        m
    }
}

/// Arclength distance past the chart ends ignored by [`HomoclinicOrbit::self_clearance`].
pub const CLEARANCE_GAP: f64 = 0.6;

/// Chart centre on `ξ` within `|c| ≤ range` maximizing the self-clearance of
/// the segment of half-length `δ₀`, among centres whose segment keeps
/// `clearance` away from the geodesic.
pub fn select_chart_center(
    geodesic: &ClosedGeodesic,
    orbit: &HomoclinicOrbit,
    delta0: f64,
    clearance: f64,
    range: f64,
    step: f64,
) -> Result<(f64, f64)> {
    let n = (range / step).round() as i64;
    let candidates: Vec<f64> = (-n..=n).map(|k| k as f64 * step).collect();
    let scored: Vec<(f64, f64)> = candidates
        .par_iter()
        .filter_map(|&c| {
            let at = |k: usize| orbit.s_min + k as f64 * orbit.table_step;
            let seg = orbit.samples.iter().enumerate().filter(|(k, _)| (at(*k) - c).abs() <= delta0);
            let mut g = f64::INFINITY;
            for (_, p) in seg {
                for q in &geodesic.samples {
                    g = g.min(norm(&sub(&[p[0], p[1], p[2]], &[q[0], q[1], q[2]])));
                }
            }
            (g > clearance).then(|| (c, orbit.self_clearance(c, delta0, CLEARANCE_GAP)))
        })
        .collect();
    // Ties go to the centre closest to the original origin.
    scored
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.abs().total_cmp(&a.0.abs())))
        .ok_or_else(|| GeoError::NoHomoclinicFound("no chart centre clear of the geodesic".into()))
}

struct Ctx<'a> {
    surface: &'a ImplicitSurface,
    geo: &'a ClosedGeodesic,
    sec: Section,
    opts: IntegratorOptions,
    cfg: &'a HomoclinicSearch,
    lam: f64,
    l: f64,
    /// Passage time through `Σ_c` of the stable orbit with `σ = 0` at the
    /// search offset (negative).
    t_ref: f64,
}

#[derive(Clone, Copy, Debug)]
struct Hit {
    x: [f64; 2],
    t: f64,
    y: [f64; 6],
}

impl Ctx<'_> {
    fn stable_seed(&self, d: f64, sigma: f64) -> Result<[f64; 6]> {
        self.geo.stable_seed(self.surface, self.cfg.stable_branch.signum() * d * self.lam.powf(sigma))
    }

    fn unstable_seed(&self, d: f64, sign: f64, tau: f64) -> Result<[f64; 6]> {
        self.geo.unstable_seed(self.surface, sign * d * self.lam.powf(tau))
    }

    /// Periods between the search and tail offsets.
    fn shift(&self) -> f64 {
        (self.cfg.search_offset / self.cfg.tail_offset).ln() / self.lam.ln()
    }

    fn hit(&self, h: &SectionHit) -> Hit {
        Hit { x: self.sec.coords6(self.surface, &h.y), t: h.t, y: h.y }
    }

    /// Main-passage crossing of the stable orbit at offset `d`.
    fn s_cross(&self, d: f64, sigma: f64) -> Option<Hit> {
        let periods = (self.cfg.search_offset / d).ln() / self.lam.ln();
        let tc = -self.t_ref + (periods - sigma) * self.l;
        let y = self.stable_seed(d, sigma).ok()?;
        let search = CrossingSearch { t_min: (tc - 0.5 * self.l).max(0.0), t_max: tc + 0.5 * self.l, gate: self.cfg.gate };
        let hs = section_crossings(self.surface, &self.sec, &y, -1.0, &self.opts, &search, 1).ok()?;
        hs.first().map(|h| self.hit(h))
    }

    fn u_cross(&self, d: f64, sign: f64, tau: f64, t_lo: f64, t_hi: f64, max: usize) -> Vec<Hit> {
        let Ok(y) = self.unstable_seed(d, sign, tau) else { return vec![] };
        let search = CrossingSearch { t_min: t_lo, t_max: t_hi, gate: self.cfg.gate };
        section_crossings(self.surface, &self.sec, &y, 1.0, &self.opts, &search, max)
            .map(|v| v.iter().map(|h| self.hit(h)).collect())
            .unwrap_or_default()
    }
}

/// A converged homoclinic candidate in fiber coordinates.
#[derive(Clone, Copy, Debug)]
struct Candidate {
    sign: f64,
    tau: f64,
    sigma: f64,
    t_u: f64,
    angle: f64,
}

fn newton_pair(ctx: &Ctx, d: f64, sign: f64, tau0: f64, sigma0: f64, t_u: f64) -> Option<Candidate> {
    let uc = |tau: f64| ctx.u_cross(d, sign, tau, t_u - 1.0, t_u + 1.0, 1).first().copied();
    let sc = |sigma: f64| ctx.s_cross(d, sigma);
    let (mut tau, mut sigma) = (tau0, sigma0);
    let mut prev = f64::INFINITY;
    // Crossing noise scales like 1e-17 / d; size the difference step and the
    // stagnation threshold accordingly.
    let h = 1e-6 * (1e-6 / d).sqrt().max(1.0);
    let floor = 1e-15 / d;
    for _ in 0..30 {
        let (a, b) = (uc(tau)?, sc(sigma)?);
        let r = [a.x[0] - b.x[0], a.x[1] - b.x[1]];
        let (ap, am) = (uc(tau + h)?, uc(tau - h)?);
        let (bp, bm) = (sc(sigma + h)?, sc(sigma - h)?);
        let du = [(ap.x[0] - am.x[0]) / (2.0 * h), (ap.x[1] - am.x[1]) / (2.0 * h)];
        let ds = [(bp.x[0] - bm.x[0]) / (2.0 * h), (bp.x[1] - bm.x[1]) / (2.0 * h)];
        let rn = r[0].hypot(r[1]);
        let det = -du[0] * ds[1] + ds[0] * du[1];
        if rn < 1e-3 * floor || (rn < floor && rn > 0.5 * prev) {
            let angle = ((du[0] * ds[1] - du[1] * ds[0]) / (du[0].hypot(du[1]) * ds[0].hypot(ds[1]))).asin().abs();
            return Some(Candidate { sign, tau, sigma, t_u: a.t, angle });
        }
        prev = rn;
        let dtau = (-r[0] * -ds[1] + ds[0] * -r[1]) / det;
        let dsig = (du[0] * -r[1] + r[0] * du[1]) / det;
        if !(dtau.abs() < 0.05 && dsig.abs() < 0.05) {
            return None;
        }
        tau += dtau;
        sigma += dsig;
    }
    None
}

/// Farthest point from the geodesic on the first excursion of the backward
/// stable orbit: the base and normal of the mid section.
fn mid_section(surface: &ImplicitSurface, geo: &ClosedGeodesic, y: &[f64; 6], t_max: f64, opts: &IntegratorOptions) -> Result<(Section, f64)> {
    let (z, v) = unpack(y);
    let mut fl = StaticFlow::new(surface, z, v, 0.0, -1.0, opts.with_max_step(0.02));
    let dist = |y: &[f64; 6]| {
        geo.samples.iter().map(|g| norm(&sub(&[y[0], y[1], y[2]], &[g[0], g[1], g[2]]))).fold(f64::INFINITY, f64::min)
    };
    let mut best = (0.0, 0.0, *y);
    while -fl.t() < t_max {
        fl.step(None)?;
        let d = dist(&fl.y());
        if d > best.0 {
            best = (d, fl.t(), fl.y());
        }
    }
    let (z, v) = unpack(&best.2);
    Ok((Section::new(surface, v, z), best.1))
}

fn context<'a>(
    surface: &'a ImplicitSurface,
    geodesic: &'a ClosedGeodesic,
    cfg: &'a HomoclinicSearch,
    opts: &IntegratorOptions,
) -> Result<Ctx<'a>> {
    let lam = geodesic.floquet_multiplier;
    let l = geodesic.length_l;
    let d = cfg.search_offset;
    let y_ref = geodesic.stable_seed(surface, cfg.stable_branch.signum() * d)?;
    let exit_time = (1.0 / d).ln() / lam.ln() * l;
    let (sec, t_ref) = mid_section(surface, geodesic, &y_ref, exit_time + 1.5 * l, opts)?;
    Ok(Ctx { surface, geo: geodesic, sec, opts: *opts, cfg, lam, l, t_ref })
}

/// Continue a homoclinic orbit of a nearby surface (same search settings)
/// by Newton from its fiber parameters.
pub fn continue_homoclinic(
    surface: &ImplicitSurface,
    geodesic: &ClosedGeodesic,
    previous: &HomoclinicOrbit,
    opts: &IntegratorOptions,
) -> Result<HomoclinicOrbit> {
    let cfg = &previous.search;
    let ctx = context(surface, geodesic, cfg, opts)?;
    let c = newton_pair(&ctx, cfg.tail_offset, previous.unstable_sign, previous.tau, previous.sigma, previous.t_unstable)
        .ok_or_else(|| GeoError::NoHomoclinicFound("continuation step failed".into()))?;
    build_orbit(&ctx, c)
}

pub fn find_homoclinic(
    surface: &ImplicitSurface,
    geodesic: &ClosedGeodesic,
    cfg: &HomoclinicSearch,
    opts: &IntegratorOptions,
) -> Result<HomoclinicOrbit> {
    let ctx = context(surface, geodesic, cfg, opts)?;
    let (l, d) = (ctx.l, cfg.search_offset);

    // Stable trace on Σ_c: a simple curve over σ ∈ [-1/2, 1/2].
    let ns = cfg.stable_samples.max(8);
    let mut stab: Vec<(f64, Hit)> = (0..=ns)
        .into_par_iter()
        .filter_map(|k| {
            let sigma = -0.5 + k as f64 / ns as f64;
            ctx.s_cross(d, sigma).map(|h| (sigma, h))
        })
        .collect();
    stab.sort_by(|a, b| a.1.x[0].total_cmp(&b.1.x[0]));
    if stab.len() < 4 {
        return Err(GeoError::NoHomoclinicFound("stable trace misses the mid section".into()));
    }
    let stable_at = |u: f64| -> Option<(f64, f64)> {
        let k = stab.partition_point(|p| p.1.x[0] < u);
        if k == 0 || k == stab.len() {
            return None;
        }
        let (a, b) = (&stab[k - 1], &stab[k]);
        let f = (u - a.1.x[0]) / (b.1.x[0] - a.1.x[0]);
        Some((a.1.x[1] + f * (b.1.x[1] - a.1.x[1]), a.0 + f * (b.0 - a.0)))
    };

    // Unstable pieces: all gated crossings of Σ_c along each scanned orbit.
    let nu = cfg.scan_samples.max(8);
    let grid: Vec<(f64, f64)> = [1.0, -1.0].iter().flat_map(|&s| (0..nu).map(move |k| (s, k as f64 / nu as f64))).collect();
    let scans: Vec<Vec<(Hit, f64, f64)>> = grid
        .par_iter()
        .map(|&(sign, tau)| {
            ctx.u_cross(d, sign, tau, 0.0, cfg.horizon, cfg.max_crossings)
                .into_iter()
                .filter_map(|h| stable_at(h.x[0]).map(|(th, sg)| (h, h.x[1] - th, sg)))
                .collect()
        })
        .collect();

    let mut brackets = Vec::new();
    let mut min_mismatch = f64::INFINITY;
    for i in 0..grid.len() {
        for c in &scans[i] {
            min_mismatch = min_mismatch.min(c.1.abs());
        }
        if i == 0 || grid[i].0 != grid[i - 1].0 {
            continue;
        }
        for c in &scans[i] {
            for p in &scans[i - 1] {
                let same_piece = (c.0.t - p.0.t).abs() < 0.5 && (c.0.x[0] - p.0.x[0]).abs() < 0.05 && (c.1 - p.1).abs() < 0.05;
                if same_piece && (c.1 < 0.0) != (p.1 < 0.0) {
                    let w = p.1.abs() / (p.1.abs() + c.1.abs());
                    let tau = grid[i - 1].1 + w / nu as f64;
                    let sigma = p.2 + w * (c.2 - p.2);
                    brackets.push((grid[i].0, tau, sigma, 0.5 * (c.0.t + p.0.t)));
                }
            }
        }
    }
    if brackets.is_empty() {
        if min_mismatch < 1e-6 {
            return Err(GeoError::TangencySuspected(0.0));
        }
        return Err(GeoError::NoHomoclinicFound(format!("no sign change of the splitting (min mismatch {min_mismatch:.3e})")));
    }
    let cands: Vec<Candidate> =
        brackets.par_iter().filter_map(|&(sign, tau, sigma, t)| newton_pair(&ctx, d, sign, tau, sigma, t)).collect();
    if cands.is_empty() {
        return Err(GeoError::NoHomoclinicFound("Newton refinement failed for every bracket".into()));
    }
    let t_min = cands.iter().map(|c| c.t_u).fold(f64::INFINITY, f64::min);
    let best = cands
        .iter()
        .filter(|c| c.t_u < t_min + 0.5 * l)
        .max_by(|a, b| a.angle.total_cmp(&b.angle).then(b.tau.total_cmp(&a.tau)))
        .copied()
        .expect("nonempty");
    if best.angle < cfg.angle_floor {
        return Err(GeoError::TangencySuspected(best.angle));
    }

    // Move the seeds to the tail offset and re-solve.
    let shift = ctx.shift();
    let m = (shift + best.tau).floor();
    let tau_t = best.tau + shift - m;
    let t_u = best.t_u + m * l;
    let sig_shift = shift.round();
    let sigma_t = best.sigma + shift - sig_shift;
    let tail = newton_pair(&ctx, cfg.tail_offset, best.sign, tau_t, sigma_t, t_u)
        .ok_or_else(|| GeoError::NoHomoclinicFound("tail refinement failed".into()))?;
    build_orbit(&ctx, tail)
}

fn build_orbit(ctx: &Ctx, c: Candidate) -> Result<HomoclinicOrbit> {
    let (surface, geo, cfg) = (ctx.surface, ctx.geo, ctx.cfg);
    let d = cfg.tail_offset;
    let h = cfg.table_step;
    let hit_u = ctx
        .u_cross(d, c.sign, c.tau, c.t_u - 1.0, c.t_u + 1.0, 1)
        .first()
        .copied()
        .ok_or_else(|| GeoError::NoHomoclinicFound("lost unstable crossing".into()))?;
    let hit_s = ctx.s_cross(d, c.sigma).ok_or_else(|| GeoError::NoHomoclinicFound("lost stable crossing".into()))?;
    let (t_u, t_s) = (hit_u.t, -hit_s.t);
    let seam = super::state_distance(&hit_u.y, &hit_s.y);
    let gs = &geo.section;
    let gsearch = CrossingSearch { t_min: 0.0, t_max: f64::INFINITY, gate: 0.5 * surface.scale };
    let is_near = |y: &[f64; 6]| {
        let x = gs.coords6(surface, y);
        (x[0] - geo.section_point[0]).hypot(x[1] - geo.section_point[1]) < NEAR_GEODESIC
    };

    // s > 0: backward from the stable seed, ξ(s) = φ_{s - T_s}(w_s).
    let ws = ctx.stable_seed(d, c.sigma)?;
    let n_plus = (t_s / h).floor() as usize;
    let mut plus = vec![[0.0; 6]; n_plus + 1];
    let mut cross_plus = Vec::new();
    {
        let (z, v) = unpack(&ws);
        let mut fl = StaticFlow::new(surface, z, v, 0.0, -1.0, ctx.opts);
        let g = |_t: f64, y: &[f64; 6]| gs.value(&[y[0], y[1], y[2]]);
        let mut k = n_plus;
        plus[k] = if (n_plus as f64 * h - t_s).abs() < 1e-15 { ws } else { fl.run_to(n_plus as f64 * h - t_s)? };
        let mut g_prev = g(0.0, &fl.y());
        while k > 0 {
            let target = (k - 1) as f64 * h - t_s;
            fl.step(Some(target))?;
            let g_now = g(0.0, &fl.y());
            if (g_prev < 0.0) != (g_now < 0.0) {
                let (t, y) = fl.locate(g);
                let z = [y[0], y[1], y[2]];
                if y[3] * gs.normal[0] + y[4] * gs.normal[1] + y[5] * gs.normal[2] > 0.0
                    && norm(&sub(&z, &gs.base)) < gsearch.gate
                    && is_near(&y)
                {
                    cross_plus.push(t + t_s);
                }
            }
            g_prev = g_now;
            if fl.t() <= target {
                k -= 1;
                plus[k] = fl.y();
            }
        }
    }
    plus[0] = hit_s.y;
    cross_plus.sort_by(f64::total_cmp);

    // s < 0: forward from the unstable seed, ξ(s) = φ_{s + T_u}(w_u).
    let wu = ctx.unstable_seed(d, c.sign, c.tau)?;
    let n_minus = (t_u / h).floor() as usize;
    let mut minus = vec![[0.0; 6]; n_minus + 1];
    let mut cross_minus = Vec::new();
    {
        let (z, v) = unpack(&wu);
        let mut fl = StaticFlow::new(surface, z, v, 0.0, 1.0, ctx.opts);
        let g = |_t: f64, y: &[f64; 6]| gs.value(&[y[0], y[1], y[2]]);
        let mut k = n_minus;
        minus[k] = if (t_u - n_minus as f64 * h).abs() < 1e-15 { wu } else { fl.run_to(t_u - n_minus as f64 * h)? };
        let mut g_prev = g(0.0, &fl.y());
        while k > 0 {
            let target = t_u - (k - 1) as f64 * h;
            fl.step(Some(target))?;
            let g_now = g(0.0, &fl.y());
            if (g_prev < 0.0) != (g_now < 0.0) {
                let (t, y) = fl.locate(g);
                let z = [y[0], y[1], y[2]];
                if y[3] * gs.normal[0] + y[4] * gs.normal[1] + y[5] * gs.normal[2] > 0.0
                    && norm(&sub(&z, &gs.base)) < gsearch.gate
                    && is_near(&y)
                {
                    cross_minus.push(t - t_u);
                }
            }
            g_prev = g_now;
            if fl.t() >= target {
                k -= 1;
                minus[k] = fl.y();
            }
        }
    }
    cross_minus.sort_by(|a, b| b.total_cmp(a));

    let mut samples: Vec<[f64; 6]> = minus[1..].iter().rev().copied().collect();
    samples.extend_from_slice(&plus);
    let s_min = -(n_minus as f64) * h;

    let l = geo.length_l;
    let ps = geo.phase_scale;
    let fit_minus = fit_phase_window(&cross_minus, cfg.fit_window, l)?;
    let fit_plus = fit_phase_window(&cross_plus, cfg.fit_window, l)?;
    let a_minus = (fit_minus.a * ps).rem_euclid(2.0 * PI);
    let a_plus = (fit_plus.a * ps).rem_euclid(2.0 * PI);

    let mut orbit = HomoclinicOrbit {
        seed_z: [hit_s.y[0], hit_s.y[1], hit_s.y[2]],
        seed_v: [hit_s.y[3], hit_s.y[4], hit_s.y[5]],
        s_min,
        table_step: h,
        samples,
        a_minus,
        a_plus,
        delta: (a_plus - a_minus).rem_euclid(2.0 * PI),
        transversality_angle: c.angle,
        decay_rate: 0.0,
        fit_minus,
        fit_plus,
        decay_minus: DecayFit { rate: 0.0, log_c: 0.0, residual: 0.0 },
        decay_plus: DecayFit { rate: 0.0, log_c: 0.0, residual: 0.0 },
        a_minus_fiber: (t_u * ps).rem_euclid(2.0 * PI),
        a_plus_fiber: (-t_s * ps).rem_euclid(2.0 * PI),
        seam,
        mid_section: ctx.sec.clone(),
        unstable_sign: c.sign,
        tau: c.tau,
        sigma: c.sigma,
        search: cfg.clone(),
        crossings_minus: cross_minus,
        crossings_plus: cross_plus,
        t_unstable: t_u,
        t_stable: t_s,
        origin_shift: 0.0,
    };

    // Exponential approach to the geodesic along both tails.
    let decay = |cross: &[f64], a: f64| -> Result<DecayFit> {
        let mut s = Vec::new();
        let mut dd = Vec::new();
        for &sk in cross {
            let y = orbit.state_at(surface, sk, &ctx.opts)?;
            let g = geo.state_at_phase(surface, (sk * ps + a).rem_euclid(2.0 * PI), &ctx.opts)?;
            let dist = super::state_distance(&y, &g);
            if dist > 1e-6 && dist < 10.0 * NEAR_GEODESIC {
                s.push(sk);
                dd.push(dist);
            }
        }
        fit_decay(&s, &dd)
    };
    let dm = decay(&orbit.crossings_minus.clone(), a_minus)?;
    let dp = decay(&orbit.crossings_plus.clone(), a_plus)?;
    for f in [&dm, &dp] {
        if f.residual > 0.1 {
            return Err(GeoError::FitFailed(format!("decay fit residual {:.3}", f.residual)));
        }
    }
    orbit.decay_rate = dm.rate.min(dp.rate);
    orbit.decay_minus = dm;
    orbit.decay_plus = dp;
    Ok(orbit)
}

/// Largest `δ₀ ≤ max` for which `ξ([-δ₀, δ₀])` is simple and stays at least
/// `clearance` away from the geodesic (pairwise scan with spacing 1e-3).
pub fn select_delta0(
    surface: &ImplicitSurface,
    geodesic: &ClosedGeodesic,
    orbit: &HomoclinicOrbit,
    max: f64,
    clearance: f64,
    opts: &IntegratorOptions,
) -> Result<f64> {
    let mut delta = max;
    let spacing = 1e-3;
    let n = (max / spacing).ceil() as i64;
    let pts: Vec<V3> = (-n..=n)
        .map(|k| orbit.state_at(surface, k as f64 * spacing, opts).map(|y| [y[0], y[1], y[2]]))
        .collect::<Result<_>>()?;
    let gamma_pts: Vec<V3> = {
        let mut v = Vec::new();
        let m = 4096;
        for k in 0..m {
            let y = geodesic.state_at_phase(surface, 2.0 * PI * k as f64 / m as f64, opts)?;
            v.push([y[0], y[1], y[2]]);
        }
        v
    };
    for _ in 0..60 {
        let kmax = (delta / spacing).floor() as i64;
        let seg = &pts[(n - kmax) as usize..=(n + kmax) as usize];
        let clear = seg.iter().all(|p| gamma_pts.iter().all(|g| norm(&sub(p, g)) > clearance));
        // Points more than 0.1 apart in arclength must stay apart in space.
        let gap = (0.1 / spacing) as usize;
        let simple = (0..seg.len()).all(|i| ((i + gap)..seg.len()).all(|j| norm(&sub(&seg[i], &seg[j])) > 2.0 * spacing));
        if clear && simple {
            return Ok(delta);
        }
        delta *= 0.9;
    }
    Err(GeoError::NoHomoclinicFound("no admissible chart half-width".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_fit_recovers_parameters() {
        let c: Vec<f64> = (0..10).map(|k| 1.25 - 0.3 * 0.28f64.powi(k)).collect();
        let f = fit_geometric(&c).unwrap();
        assert!((f.a - 1.25).abs() < 1e-10, "{f:?}");
        assert!((f.r - 0.28).abs() < 1e-6 && (f.b + 0.3).abs() < 1e-6);
        assert!(f.residual < 1e-8);
        let flat = fit_geometric(&[0.5; 6]).unwrap();
        assert_eq!(flat.a, 0.5);
        assert_eq!(flat.residual, 0.0);
    }

    #[test]
    fn decay_fit_slope() {
        let s: Vec<f64> = (1..10).map(|k| k as f64).collect();
        let d: Vec<f64> = s.iter().map(|s| 2.0 * (-0.2 * s).exp()).collect();
        let f = fit_decay(&s, &d).unwrap();
        assert!((f.rate - 0.2).abs() < 1e-12 && f.residual < 1e-12);
    }

    #[test]
    fn offsets_unwrap() {
        let c = phase_offsets(&[1.0, 7.2, 13.5], 6.3);
        assert!((c[0] - 5.3).abs() < 1e-12);
        assert!((c[1] - 5.4).abs() < 1e-12);
        assert!((c[2] - 5.4).abs() < 1e-12);
    }
}
