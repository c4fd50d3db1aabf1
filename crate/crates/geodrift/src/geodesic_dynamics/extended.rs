//! The extended flow of `H* = ½ g_ε(x, θ)(p, p) + Θ` with chart switching.
//!
//! Outside the engagement box of the Fermi chart the metric is the static
//! one, and the flow is the ambient constrained geodesic flow with `θ̇ = 1`,
//! `Θ̇ = 0`. Inside, the state is `(x, η, θ, Θ)` with covelocity `η = g p`
//! for the static Fermi metric `g`, and
//! `K = ½ ηᵀ A η`, `A = g⁻¹ g_ε g⁻¹`.

use nalgebra::{Matrix2, Vector2};

use super::{geodesic_accel_gen, unpack, ChartTag, ExtendedState, StaticFlow, TrajSample, Trajectory};
use crate::error::{GeoError, Result};
use crate::ode::{IntegratorOptions, OdeSystem, Stepper};
use crate::perturbation::Fluctuation;
use crate::surface_geometry::{norm, sub, V3};

/// Ambient step bound near the chart, in units of arclength.
const NEAR_STEP: f64 = 0.02;

/// Chart Hamiltonian vector field on `(x₀, x₁, η₀, η₁, θ, Θ)`.
#[derive(Clone, Copy)]
pub struct ChartField<'a> {
    pub fl: Fluctuation<'a>,
    pub epsilon: f64,
}

/// `A`, `∂A/∂x₀`, `∂A/∂x₁`, `∂A/∂θ` at one point.
pub fn hamiltonian_matrices(fl: &Fluctuation, epsilon: f64, x: &[f64; 2], theta: f64) -> Result<[Matrix2<f64>; 4]> {
    let md = fl.metric_data(epsilon, x, theta)?;
    let p = md.g.try_inverse().ok_or(GeoError::ChartExit(*x))?;
    let a = p * md.ge * p;
    let mut out = [a, Matrix2::zeros(), Matrix2::zeros(), p * md.dge[2] * p];
    for k in 0..2 {
        let dp = -p * md.dg[k] * p;
        out[k + 1] = dp * md.ge * p + p * md.dge[k] * p + p * md.ge * dp;
    }
    Ok(out)
}

impl ChartField<'_> {
    fn eval(&self, y: &[f64; 6]) -> Result<[f64; 6]> {
        let [a, ax0, ax1, ath] = hamiltonian_matrices(&self.fl, self.epsilon, &[y[0], y[1]], y[4])?;
        let eta = Vector2::new(y[2], y[3]);
        let xd = a * eta;
        let q = |m: &Matrix2<f64>| -0.5 * eta.dot(&(m * eta));
        Ok([xd[0], xd[1], q(&ax0), q(&ax1), 1.0, q(&ath)])
    }

    /// `K = ½ ηᵀ A η`.
    pub fn energy(&self, y: &[f64; 6]) -> Result<f64> {
        let [a, ..] = hamiltonian_matrices(&self.fl, self.epsilon, &[y[0], y[1]], y[4])?;
        let eta = Vector2::new(y[2], y[3]);
        Ok(0.5 * eta.dot(&(a * eta)))
    }
}

impl OdeSystem<6> for ChartField<'_> {
    fn rhs(&self, _t: f64, y: &[f64; 6]) -> [f64; 6] {
        self.eval(y).unwrap_or([f64::NAN; 6])
    }
}

enum Mode<'a> {
    Ambient { flow: StaticFlow<'a>, theta0: f64, t0: f64, big_theta: f64 },
    Chart { stepper: Stepper<6> },
}

/// Stepwise integrator of the extended flow.
pub struct ExtendedFlow<'a> {
    pub fl: Fluctuation<'a>,
    pub epsilon: f64,
    opts: IntegratorOptions,
    dir: f64,
    mode: Mode<'a>,
    /// Number of chart passages completed.
    pub passages: usize,
}

impl<'a> ExtendedFlow<'a> {
    pub fn new(fl: Fluctuation<'a>, epsilon: f64, state: &ExtendedState, t0: f64, dir: f64, opts: IntegratorOptions) -> Result<Self> {
        let dir = if dir < 0.0 { -1.0 } else { 1.0 };
        let mut f = ExtendedFlow {
            fl,
            epsilon,
            opts,
            dir,
            mode: Mode::Ambient {
                flow: StaticFlow::new(fl.surface, state.z, state.v, t0, dir, opts),
                theta0: state.theta,
                t0,
                big_theta: state.big_theta,
            },
            passages: 0,
        };
        if let Some(x) = f.chart_coords(&state.z) {
            if f.fl.chart.in_buffer(&x) {
                f.enter(t0, state)?;
            }
        }
        f.adapt_step();
        Ok(f)
    }

    fn field(&self) -> ChartField<'a> {
        ChartField { fl: self.fl, epsilon: self.epsilon }
    }

    pub fn t(&self) -> f64 {
        match &self.mode {
            Mode::Ambient { flow, .. } => flow.t(),
            Mode::Chart { stepper } => stepper.t,
        }
    }

    pub fn chart_tag(&self) -> ChartTag {
        match self.mode {
            Mode::Ambient { .. } => ChartTag::Ambient,
            Mode::Chart { .. } => ChartTag::Fermi,
        }
    }

    /// Chart coordinates when `z` is close to the chart axis.
    fn chart_coords(&self, z: &V3) -> Option<[f64; 2]> {
        let c = self.fl.chart;
        let reach = 1.5 * c.delta1 + c.step;
        let near = c.nodes.iter().any(|y| norm(&sub(z, &[y[0], y[1], y[2]])) < reach);
        if !near {
            return None;
        }
        c.fermi_inverse(self.fl.surface, z).ok()
    }

    fn buffer_of(&self, z: &V3) -> f64 {
        match self.chart_coords(z) {
            Some(x) => self.fl.chart.buffer_value(&x),
            None => 1.0,
        }
    }

    fn adapt_step(&mut self) {
        let near = match &self.mode {
            Mode::Ambient { flow, .. } => {
                let (z, _) = unpack(&flow.y());
                let c = self.fl.chart;
                let reach = c.delta0 + 2.0 * c.delta1 + 0.5;
                c.nodes.iter().any(|y| norm(&sub(&z, &[y[0], y[1], y[2]])) < reach)
            }
            Mode::Chart { .. } => return,
        };
        if let Mode::Ambient { flow, .. } = &mut self.mode {
            let speed = flow.speed.max(1e-300);
            flow.stepper.opts.max_step = if near { self.opts.max_step.min(NEAR_STEP / speed) } else { self.opts.max_step };
        }
    }

    /// Switch to chart mode at time `t` with the given ambient state.
    fn enter(&mut self, t: f64, s: &ExtendedState) -> Result<()> {
        let (x, eta) = self.fl.chart.to_chart(self.fl.surface, &s.z, &s.v)?;
        let y = [x[0], x[1], eta[0], eta[1], s.theta, s.big_theta];
        let field = self.field();
        let mut opts = self.opts;
        opts.projection_enabled = false;
        // Step control alone can step over the thin corners of the support.
        opts.max_step = opts.max_step.min(NEAR_STEP / s.speed().max(1e-300));
        let stepper = Stepper::new(&field, t, y, self.dir, opts);
        self.mode = Mode::Chart { stepper };
        Ok(())
    }

    /// Ambient state from a chart state.
    fn chart_to_ambient(&self, y: &[f64; 6]) -> Result<ExtendedState> {
        let [a, ..] = hamiltonian_matrices(&self.fl, self.epsilon, &[y[0], y[1]], y[4])?;
        let xd = a * Vector2::new(y[2], y[3]);
        let (z, v) = self.fl.chart.to_ambient(self.fl.surface, &[y[0], y[1]], &[xd[0], xd[1]])?;
        Ok(ExtendedState::new(z, v, y[4], y[5]))
    }

    pub fn state(&self) -> Result<ExtendedState> {
        match &self.mode {
            Mode::Ambient { flow, theta0, t0, big_theta } => {
                let (z, v) = unpack(&flow.y());
                Ok(ExtendedState::new(z, v, theta0 + (flow.t() - t0), *big_theta))
            }
            Mode::Chart { stepper } => self.chart_to_ambient(&stepper.y),
        }
    }

    /// Current value of the Hamiltonian `H` (without `Θ`).
    pub fn hamiltonian(&self) -> Result<f64> {
        match &self.mode {
            Mode::Ambient { flow, .. } => {
                let (_, v) = unpack(&flow.y());
                Ok(0.5 * crate::jet::dot(&v, &v))
            }
            Mode::Chart { stepper } => self.field().energy(&stepper.y),
        }
    }

    /// Chart state `(x, η, θ, Θ)` when in chart mode.
    pub fn chart_state(&self) -> Option<[f64; 6]> {
        match &self.mode {
            Mode::Chart { stepper } => Some(stepper.y),
            Mode::Ambient { .. } => None,
        }
    }

    pub fn sample(&self) -> Result<TrajSample> {
        let state = self.state()?;
        let a = geodesic_accel_gen(self.fl.surface, &state.z, &state.v);
        Ok(TrajSample {
            t: self.t(),
            state,
            chart: self.chart_tag(),
            dzv: [state.v[0], state.v[1], state.v[2], a[0], a[1], a[2]],
            h: self.hamiltonian()?,
        })
    }

    /// One accepted step (not passing `t_end`), switching charts at the
    /// buffer shell when it is crossed.
    pub fn step(&mut self, t_end: Option<f64>) -> Result<()> {
        let field = self.field();
        match &mut self.mode {
            Mode::Ambient { flow, theta0, t0, big_theta } => {
                flow.step(t_end)?;
                let (theta0, t0, big) = (*theta0, *t0, *big_theta);
                let (z, _) = unpack(&flow.y());
                if self.buffer_of(&z) < 0.0 {
                    let Mode::Ambient { flow, .. } = &self.mode else { unreachable!() };
                    let (t, y) = flow.locate(|_, y| self.buffer_of(&[y[0], y[1], y[2]]));
                    let (z, v) = unpack(&y);
                    let s = ExtendedState::new(z, v, theta0 + (t - t0), big);
                    self.enter(t, &s)?;
                }
            }
            Mode::Chart { stepper } => {
                stepper.step(&field, t_end).map_err(|e| match e {
                    GeoError::StepFailure(_) => GeoError::ChartExit([stepper.y[0], stepper.y[1]]),
                    e => e,
                })?;
                let chart = self.fl.chart;
                if !chart.contains(&[stepper.y[0], stepper.y[1]]) && !chart.in_buffer(&[stepper.y_prev[0], stepper.y_prev[1]]) {
                    return Err(GeoError::ChartExit([stepper.y[0], stepper.y[1]]));
                }
                if chart.buffer_value(&[stepper.y[0], stepper.y[1]]) > 0.0 {
                    let (t, y) = stepper.locate(&field, |_, y| chart.buffer_value(&[y[0], y[1]]));
                    if self.fl.psi_chart(&[y[0], y[1]], y[4]) != 0.0 {
                        return Err(GeoError::ChartExit([y[0], y[1]]));
                    }
                    let s = self.chart_to_ambient(&y)?;
                    let flow = StaticFlow::new(self.fl.surface, s.z, s.v, t, self.dir, self.opts);
                    self.mode = Mode::Ambient { flow, theta0: s.theta, t0: t, big_theta: s.big_theta };
                    self.passages += 1;
                }
            }
        }
        self.adapt_step();
        Ok(())
    }

    pub fn run_to(&mut self, t_end: f64) -> Result<ExtendedState> {
        while (t_end - self.t()) * self.dir > 0.0 {
            self.step(Some(t_end))?;
        }
        self.state()
    }
}

/// Integrate the extended flow for time `T` (sign gives direction),
/// recording every accepted step.
pub fn integrate_extended(
    fl: &Fluctuation,
    epsilon: f64,
    state: &ExtendedState,
    t_total: f64,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    let mut flow = ExtendedFlow::new(*fl, epsilon, state, 0.0, t_total.signum(), *opts)?;
    let mut traj = Trajectory::default();
    traj.samples.push(flow.sample()?);
    while (t_total - flow.t()) * flow.dir > 0.0 {
        flow.step(Some(t_total))?;
        traj.samples.push(flow.sample()?);
    }
    Ok(traj)
}
