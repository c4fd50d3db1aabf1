//! Explicit Runge–Kutta integration: adaptive Dormand–Prince 8(5,3) with
//! step-wise access (so callers can project onto constraint manifolds between
//! steps) and event location, plus a fixed-step variant generic over
//! [`Scalar`] for differentiating flows with jets.

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::jet::Scalar;

mod tableau {
    pub const C: [f64; 12] = [
        0.0,
        0.526001519587677318785587544488E-01,
        0.789002279381515978178381316732E-01,
        0.118350341907227396726757197510E+00,
        0.281649658092772603273242802490E+00,
        0.333333333333333333333333333333E+00,
        0.25E+00,
        0.307692307692307692307692307692E+00,
        0.651282051282051282051282051282E+00,
        0.6E+00,
        0.857142857142857142857142857142E+00,
        1.0,
    ];

    pub const A: [&[f64]; 12] = [
        &[],
        &[5.26001519587677318785587544488E-2],
        &[1.97250569845378994544595329183E-2, 5.91751709536136983633785987549E-2],
        &[2.95875854768068491816892993775E-2, 0.0, 8.87627564304205475450678981324E-2],
        &[
            2.41365134159266685502369798665E-1,
            0.0,
            -8.84549479328286085344864962717E-1,
            9.24834003261792003115737966543E-1,
        ],
        &[
            3.7037037037037037037037037037E-2,
            0.0,
            0.0,
            1.70828608729473871279604482173E-1,
            1.25467687566822425016691814123E-1,
        ],
        &[
            3.7109375E-2,
            0.0,
            0.0,
            1.70252211019544039314978060272E-1,
            6.02165389804559606850219397283E-2,
            -1.7578125E-2,
        ],
        &[
            3.70920001185047927108779319836E-2,
            0.0,
            0.0,
            1.70383925712239993810214054705E-1,
            1.07262030446373284651809199168E-1,
            -1.53194377486244017527936158236E-2,
            8.27378916381402288758473766002E-3,
        ],
        &[
            6.24110958716075717114429577812E-1,
            0.0,
            0.0,
            -3.36089262944694129406857109825E0,
            -8.68219346841726006818189891453E-1,
            2.75920996994467083049415600797E1,
            2.01540675504778934086186788979E1,
            -4.34898841810699588477366255144E1,
        ],
        &[
            4.77662536438264365890433908527E-1,
            0.0,
            0.0,
            -2.48811461997166764192642586468E0,
            -5.90290826836842996371446475743E-1,
            2.12300514481811942347288949897E1,
            1.52792336328824235832596922938E1,
            -3.32882109689848629194453265587E1,
            -2.03312017085086261358222928593E-2,
        ],
        &[
            -9.3714243008598732571704021658E-1,
            0.0,
            0.0,
            5.18637242884406370830023853209E0,
            1.09143734899672957818500254654E0,
            -8.14978701074692612513997267357E0,
            -1.85200656599969598641566180701E1,
            2.27394870993505042818970056734E1,
            2.49360555267965238987089396762E0,
            -3.0467644718982195003823669022E0,
        ],
        &[
            2.27331014751653820792359768449E0,
            0.0,
            0.0,
            -1.05344954667372501984066689879E1,
            -2.00087205822486249909675718444E0,
            -1.79589318631187989172765950534E1,
            2.79488845294199600508499808837E1,
            -2.85899827713502369474065508674E0,
            -8.87285693353062954433549289258E0,
            1.23605671757943030647266201528E1,
            6.43392746015763530355970484046E-1,
        ],
    ];

    pub const B: [f64; 12] = [
        5.42937341165687622380535766363E-2,
        0.0,
        0.0,
        0.0,
        0.0,
        4.45031289275240888144113950566E0,
        1.89151789931450038304281599044E0,
        -5.8012039600105847814672114227E0,
        3.1116436695781989440891606237E-1,
        -1.52160949662516078556178806805E-1,
        2.01365400804030348374776537501E-1,
        4.47106157277725905176885569043E-2,
    ];

    pub const BHH: [f64; 3] = [
        0.244094488188976377952755905512E+00,
        0.733846688281611857341361741547E+00,
        0.220588235294117647058823529412E-01,
    ];

    pub const E: [f64; 12] = [
        0.1312004499419488073250102996E-01,
        0.0,
        0.0,
        0.0,
        0.0,
        -0.1225156446376204440720569753E+01,
        -0.4957589496572501915214079952E+00,
        0.1664377182454986536961530415E+01,
        -0.3503288487499736816886487290E+00,
        0.3341791187130174790297318841E+00,
        0.8192320648511571246570742613E-01,
        -0.2235530786388629525884427845E-01,
    ];
}

/// Right-hand side of an autonomous or nonautonomous ODE `y' = f(t, y)`.
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, t: f64, y: &[f64; N]) -> [f64; N];
}

impl<F, const N: usize> OdeSystem<N> for F
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    fn rhs(&self, t: f64, y: &[f64; N]) -> [f64; N] {
        self(t, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub projection_enabled: bool,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_max_steps() -> usize {
    2_000_000
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            rel_tol: 1e-12,
            abs_tol: 1e-12,
            max_step: 0.25,
            projection_enabled: true,
            max_steps: default_max_steps(),
        }
    }
}

impl IntegratorOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.rel_tol = tol;
        self.abs_tol = tol;
        self
    }

    pub fn with_max_step(mut self, h: f64) -> Self {
        self.max_step = h;
        self
    }
}

/// One raw DOP853 step of size `h` from `(t, y)` with `f = f(t, y)`.
/// Returns the 8th-order solution and the scaled error norm.
pub fn dop853_step<S: OdeSystem<N>, const N: usize>(
    sys: &S,
    t: f64,
    y: &[f64; N],
    f: &[f64; N],
    h: f64,
    opts: &IntegratorOptions,
) -> ([f64; N], f64) {
    let mut k = [[0.0; N]; 12];
    k[0] = *f;
    for s in 1..12 {
        let mut ys = *y;
        for (j, a) in tableau::A[s].iter().enumerate() {
            if *a != 0.0 {
                for i in 0..N {
                    ys[i] += h * a * k[j][i];
                }
            }
        }
        k[s] = sys.rhs(t + tableau::C[s] * h, &ys);
    }
    let mut yn = *y;
    let mut err = 0.0;
    let mut err2 = 0.0;
    for i in 0..N {
        let mut inc = 0.0;
        let mut est = 0.0;
        for s in 0..12 {
            inc += tableau::B[s] * k[s][i];
            est += tableau::E[s] * k[s][i];
        }
        yn[i] = y[i] + h * inc;
        let bhh = inc - tableau::BHH[0] * k[0][i] - tableau::BHH[1] * k[8][i] - tableau::BHH[2] * k[11][i];
        let sk = opts.abs_tol + opts.rel_tol * y[i].abs().max(yn[i].abs());
        err += (est / sk) * (est / sk);
        err2 += (bhh / sk) * (bhh / sk);
    }
    let mut deno = err + 0.01 * err2;
    if deno <= 0.0 {
        deno = 1.0;
    }
    let e = h.abs() * err * (1.0 / (deno * N as f64)).sqrt();
    (yn, e)
}

/// Stateful adaptive integrator. Each call to [`Stepper::step`] performs one
/// accepted step; the previous point is retained for event location.
#[derive(Clone, Debug)]
pub struct Stepper<const N: usize> {
    pub t: f64,
    pub y: [f64; N],
    pub f: [f64; N],
    pub t_prev: f64,
    pub y_prev: [f64; N],
    pub f_prev: [f64; N],
    pub h: f64,
    pub dir: f64,
    pub opts: IntegratorOptions,
    pub n_accepted: usize,
    pub n_rejected: usize,
    facold: f64,
    last_rejected: bool,
}

impl<const N: usize> Stepper<N> {
    /// `dir` is +1 for forward and -1 for backward integration.
    pub fn new<S: OdeSystem<N>>(sys: &S, t0: f64, y0: [f64; N], dir: f64, opts: IntegratorOptions) -> Self {
        let f0 = sys.rhs(t0, &y0);
        let dir = if dir < 0.0 { -1.0 } else { 1.0 };
        let h = initial_step(sys, t0, &y0, &f0, dir, &opts);
        Stepper {
            t: t0,
            y: y0,
            f: f0,
            t_prev: t0,
            y_prev: y0,
            f_prev: f0,
            h,
            dir,
            opts,
            n_accepted: 0,
            n_rejected: 0,
            facold: 1e-4,
            last_rejected: false,
        }
    }

    /// Replace the current state (e.g. after a projection) and refresh `f`.
    pub fn set_state<S: OdeSystem<N>>(&mut self, sys: &S, y: [f64; N]) {
        self.y = y;
        self.f = sys.rhs(self.t, &self.y);
    }

    /// Take one accepted step without passing `t_end` (if given).
    pub fn step<S: OdeSystem<N>>(&mut self, sys: &S, t_end: Option<f64>) -> Result<()> {
        let uround = 2.3e-16;
        loop {
            if self.n_accepted + self.n_rejected > self.opts.max_steps {
                return Err(GeoError::TooManySteps(self.opts.max_steps));
            }
            let mut h = self.h.abs().min(self.opts.max_step) * self.dir;
            let mut last = false;
            if let Some(te) = t_end {
                let rem = te - self.t;
                if rem * self.dir <= 0.0 {
                    return Ok(());
                }
                if (self.t + 1.01 * h - te) * self.dir > 0.0 {
                    h = rem;
                    last = true;
                }
            }
            if !last && (0.1 * h.abs() <= uround * self.t.abs() || h.abs() < 1e-14) {
                return Err(GeoError::StepFailure(self.t));
            }
            let (yn, err) = dop853_step(sys, self.t, &self.y, &self.f, h, &self.opts);
            let fac11 = err.powf(0.125);
            let fac = (fac11 / 0.9).clamp(1.0 / 6.0, 3.0);
            let mut hnew = h / fac;
            if err <= 1.0 && err.is_finite() {
                self.facold = err.max(1e-4);
                if self.last_rejected {
                    hnew = hnew.abs().min(h.abs()) * self.dir;
                }
                self.last_rejected = false;
                self.t_prev = self.t;
                self.y_prev = self.y;
                self.f_prev = self.f;
                self.t = if last { t_end.unwrap() } else { self.t + h };
                self.y = yn;
                self.f = sys.rhs(self.t, &self.y);
                self.n_accepted += 1;
                if !last || hnew.abs() > self.h.abs() {
                    self.h = hnew;
                }
                return Ok(());
            }
            self.n_rejected += 1;
            self.last_rejected = true;
            let shrink = if err.is_finite() { (fac11 / 0.9).min(3.0) } else { 10.0 };
            self.h = h / shrink.max(1.0 + 1e-3);
        }
    }

    /// Cubic Hermite interpolant on the last accepted step.
    pub fn hermite(&self, t: f64) -> [f64; N] {
        let h = self.t - self.t_prev;
        if h == 0.0 {
            return self.y;
        }
        let s = (t - self.t_prev) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        std::array::from_fn(|i| {
            h00 * self.y_prev[i] + h10 * h * self.f_prev[i] + h01 * self.y[i] + h11 * h * self.f[i]
        })
    }

    /// Exact-order state at time `t` inside the last step, by re-stepping
    /// from the previous point.
    pub fn state_at<S: OdeSystem<N>>(&self, sys: &S, t: f64) -> [f64; N] {
        let h = t - self.t_prev;
        if h == 0.0 {
            return self.y_prev;
        }
        if t == self.t {
            return self.y;
        }
        dop853_step(sys, self.t_prev, &self.y_prev, &self.f_prev, h, &self.opts).0
    }

    /// Locate a zero of `g` inside the last step (sign change assumed).
    pub fn locate<S: OdeSystem<N>, G: Fn(f64, &[f64; N]) -> f64>(&self, sys: &S, g: G) -> (f64, [f64; N]) {
        let ga = g(self.t_prev, &self.y_prev);
        let gb = g(self.t, &self.y);
        let h = self.t - self.t_prev;
        let phi = |s: f64| {
            let t = self.t_prev + s * h;
            g(t, &self.state_at(sys, t))
        };
        let s = brent(phi, 0.0, 1.0, ga, gb, 1e-15);
        let t = self.t_prev + s * h;
        (t, self.state_at(sys, t))
    }
}

fn initial_step<S: OdeSystem<N>, const N: usize>(
    sys: &S,
    t: f64,
    y: &[f64; N],
    f: &[f64; N],
    dir: f64,
    opts: &IntegratorOptions,
) -> f64 {
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..N {
        let sk = opts.abs_tol + opts.rel_tol * y[i].abs();
        dnf += (f[i] / sk).powi(2);
        dny += (y[i] / sk).powi(2);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
    h = h.min(opts.max_step);
    let y1: [f64; N] = std::array::from_fn(|i| y[i] + dir * h * f[i]);
    let f1 = sys.rhs(t + dir * h, &y1);
    let mut der2 = 0.0;
    for i in 0..N {
        let sk = opts.abs_tol + opts.rel_tol * y[i].abs();
        der2 += ((f1[i] - f[i]) / sk).powi(2);
    }
    let der2 = der2.sqrt() / h;
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 { (1e-6f64).max(h.abs() * 1e-3) } else { (0.01 / der12).powf(1.0 / 8.0) };
    (100.0 * h).min(h1).min(opts.max_step)
}

/// Brent's method on `[a, b]` with known end values of opposite sign.
pub fn brent<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, fa: f64, fb: f64, xtol: f64) -> f64 {
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return b;
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol * m.signum() };
        fb = f(b);
    }
    b
}

/// Fixed 8th-order step `y + h Σ bᵢ kᵢ` of an autonomous system, generic over
/// the scalar type (so `h` and `y` may carry derivatives).
pub fn rk8_step_gen<T: Scalar, F: Fn(&[T; N]) -> [T; N], const N: usize>(f: F, y: &[T; N], h: T) -> [T; N] {
    let zero = T::cst(0.0);
    let mut k: Vec<[T; N]> = Vec::with_capacity(12);
    k.push(f(y));
    for s in 1..12 {
        let mut ys = *y;
        for (j, a) in tableau::A[s].iter().enumerate() {
            if *a != 0.0 {
                for i in 0..N {
                    ys[i] += h * k[j][i] * *a;
                }
            }
        }
        k.push(f(&ys));
    }
    let mut yn = *y;
    for i in 0..N {
        let mut inc = zero;
        for s in 0..12 {
            if tableau::B[s] != 0.0 {
                inc += k[s][i] * tableau::B[s];
            }
        }
        yn[i] += h * inc;
    }
    yn
}
