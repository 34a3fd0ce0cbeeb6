//! Model ingredients: intensity Ψ(s, y), interaction kernel h, initial age law u0.
//!
//! Intensities are finite rank in the age variable:
//! Ψ(s, y) = a0(y) + a1(y)·(1 − e^{−s}). Every preset fits this form, and it
//! lets pairings ⟨μ, Ψ(·, y)⟩ be computed from two fixed age profiles.

use rand::RngCore;
use rand_distr::{Beta as BetaDist, Distribution};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as BetaLaw, Continuous, ContinuousCDF};

use crate::error::{check_finite, Error, Result};
use crate::quad::Composite;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Smoothness {
    C2b,
    C4b,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Intensity {
    Constant { rate: f64 },
    /// base + amp·tanh(y)·(1 − e^{−s})
    TanhSigmoid { base: f64, amp: f64 },
    /// max_rate·(1 − e^{−s}) / (1 + e^{−(offset + gain·y)})
    Logistic { max_rate: f64, offset: f64, gain: f64 },
    /// slope·y; unbounded, kept to exercise the assumption checks.
    LinearY { slope: f64, claimed_bound: f64 },
}

/// Ψ(·, y) frozen at one value of y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub a0: f64,
    pub a1: f64,
}

impl Section {
    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        if self.a1 == 0.0 {
            self.a0
        } else {
            self.a0 - self.a1 * (-s).exp_m1()
        }
    }

    /// Same as `eval` given `emx = e^{−s}`.
    #[inline]
    pub fn eval_emx(&self, emx: f64) -> f64 {
        self.a0 + self.a1 * (1.0 - emx)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Intensity {
    pub const RANK: usize = 2;

    /// Age profile m (0: constant, 1: 1 − e^{−s}) and its s-derivatives.
    pub fn profile(m: usize, s: f64, order: usize) -> f64 {
        match (m, order) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (_, 0) => -(-s).exp_m1(),
            (_, k) => {
                let e = (-s).exp();
                if k % 2 == 1 {
                    e
                } else {
                    -e
                }
            }
        }
    }

    /// Coefficients (a0, a1) and their y-derivatives of the given order.
    pub fn coefs(&self, y: f64, order: usize) -> [f64; 2] {
        match *self {
            Intensity::Constant { rate } => [if order == 0 { rate } else { 0.0 }, 0.0],
            Intensity::TanhSigmoid { base, amp } => {
                let th = y.tanh();
                let sech2 = 1.0 - th * th;
                let a1 = match order {
                    0 => th,
                    1 => sech2,
                    2 => -2.0 * th * sech2,
                    3 => sech2 * (6.0 * th * th - 2.0),
                    _ => sech2 * (16.0 * th - 24.0 * th * th * th),
                };
                [if order == 0 { base } else { 0.0 }, amp * a1]
            }
            Intensity::Logistic { max_rate, offset, gain } => {
                let g = sigmoid(offset + gain * y);
                let d = match order {
                    0 => g,
                    1 => gain * g * (1.0 - g),
                    2 => gain * gain * g * (1.0 - g) * (1.0 - 2.0 * g),
                    3 => gain.powi(3) * g * (1.0 - g) * (1.0 - 6.0 * g + 6.0 * g * g),
                    _ => gain.powi(4) * g * (1.0 - g) * (1.0 - 2.0 * g) * (1.0 - 12.0 * g + 12.0 * g * g),
                };
                [0.0, max_rate * d]
            }
            Intensity::LinearY { slope, .. } => [
                match order {
                    0 => slope * y,
                    1 => slope,
                    _ => 0.0,
                },
                0.0,
            ],
        }
    }

    pub fn section(&self, y: f64) -> Section {
        let [a0, a1] = self.coefs(y, 0);
        Section { a0, a1 }
    }

    /// ∂Ψ/∂y frozen at y.
    pub fn section_dy(&self, y: f64) -> Section {
        let [a0, a1] = self.coefs(y, 1);
        Section { a0, a1 }
    }

    pub fn eval(&self, s: f64, y: f64) -> f64 {
        self.section(y).eval(s)
    }

    pub fn d_dy(&self, s: f64, y: f64) -> f64 {
        self.section_dy(y).eval(s)
    }

    pub fn d2_dy2(&self, s: f64, y: f64) -> f64 {
        let [a0, a1] = self.coefs(y, 2);
        Section { a0, a1 }.eval(s)
    }

    /// ∂^k Ψ/∂s^k.
    pub fn d_ds(&self, s: f64, y: f64, order: usize) -> f64 {
        if order == 0 {
            return self.eval(s, y);
        }
        let [_, a1] = self.coefs(y, 0);
        a1 * Self::profile(1, s, order)
    }

    /// Declared ‖Ψ‖∞.
    pub fn sup_bound(&self) -> f64 {
        match *self {
            Intensity::Constant { rate } => rate,
            Intensity::TanhSigmoid { base, amp } => base + amp.abs(),
            Intensity::Logistic { max_rate, .. } => max_rate,
            Intensity::LinearY { claimed_bound, .. } => claimed_bound,
        }
    }

    /// Declared sup |∂Ψ/∂y|.
    pub fn lip_y(&self) -> f64 {
        match *self {
            Intensity::Constant { .. } => 0.0,
            Intensity::TanhSigmoid { amp, .. } => amp.abs(),
            Intensity::Logistic { max_rate, gain, .. } => max_rate * gain.abs() / 4.0,
            Intensity::LinearY { slope, .. } => slope.abs(),
        }
    }

    pub fn smoothness(&self) -> Smoothness {
        Smoothness::C4b
    }

    /// True when Ψ does not depend on y.
    pub fn is_y_free(&self) -> bool {
        matches!(self, Intensity::Constant { .. })
    }

    fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| Err(Error::InvalidParameter { name, reason: reason.into() });
        match *self {
            Intensity::Constant { rate } if !(rate >= 0.0 && rate.is_finite()) => bad("intensity.rate", "must be finite and >= 0"),
            Intensity::TanhSigmoid { base, amp } if !(base.is_finite() && amp.is_finite() && base >= amp.abs()) => {
                bad("intensity.base", "need base >= |amp| for a nonnegative intensity")
            }
            Intensity::Logistic { max_rate, offset, gain }
                if !(max_rate >= 0.0 && max_rate.is_finite() && offset.is_finite() && gain.is_finite()) =>
            {
                bad("intensity.max_rate", "must be finite and >= 0")
            }
            Intensity::LinearY { slope, claimed_bound } if !(slope.is_finite() && claimed_bound.is_finite()) => {
                bad("intensity.slope", "must be finite")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Zero,
    /// weight·e^{−rate·t}
    Exponential { weight: f64, rate: f64 },
    /// weight·rate^k t^{k−1} e^{−rate·t}/(k−1)!, integrates to weight.
    Erlang { weight: f64, rate: f64, shape: u32 },
    /// weight on [0, width); bounded but not Hölder.
    Boxcar { weight: f64, width: f64 },
}

fn factorial(k: u32) -> f64 {
    (1..=k).fold(1.0, |a, i| a * i as f64)
}

impl Kernel {
    pub fn eval(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match *self {
            Kernel::Zero => 0.0,
            Kernel::Exponential { weight, rate } => weight * (-rate * t).exp(),
            Kernel::Erlang { weight, rate, shape } => {
                let k = shape.max(1);
                weight * rate.powi(k as i32) * t.powi(k as i32 - 1) * (-rate * t).exp() / factorial(k - 1)
            }
            Kernel::Boxcar { weight, width } => {
                if t < width {
                    weight
                } else {
                    0.0
                }
            }
        }
    }

    /// Hölder constant and exponent, if h is Hölder continuous on ℝ₊.
    pub fn holder(&self) -> Option<(f64, f64)> {
        match *self {
            Kernel::Zero => Some((0.0, 1.0)),
            Kernel::Exponential { weight, rate } => Some((weight.abs() * rate, 1.0)),
            Kernel::Erlang { weight, rate, shape } => {
                let k = shape.max(1);
                if k == 1 {
                    return Some((weight.abs() * rate, 1.0));
                }
                // |h'| is maximal at t = 0 or at a root of h''.
                let hp = |t: f64| {
                    let c = weight * rate.powi(k as i32) / factorial(k - 1);
                    let km1 = (k - 1) as f64;
                    let pow = if k == 2 { 1.0 } else { t.powi(k as i32 - 2) };
                    c * pow * (-rate * t).exp() * (km1 - rate * t)
                };
                let km1 = (k - 1) as f64;
                let r = km1.sqrt();
                let cands = [0.0, (km1 - r).max(0.0) / rate, (km1 + r) / rate];
                Some((cands.iter().map(|&t| hp(t).abs()).fold(0.0, f64::max), 1.0))
            }
            Kernel::Boxcar { .. } => None,
        }
    }

    /// max_{[0,t]} |h|.
    pub fn running_max(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match *self {
            Kernel::Zero => 0.0,
            Kernel::Exponential { weight, .. } => weight.abs(),
            Kernel::Erlang { rate, shape, .. } => {
                let peak = (shape.max(1) - 1) as f64 / rate;
                self.eval(t.min(peak)).abs()
            }
            Kernel::Boxcar { weight, .. } => weight.abs(),
        }
    }

    /// Representation h(t) = Σ_j c_j t^j/j! e^{−rate·t}, when one exists.
    pub fn exp_poly(&self) -> Option<(f64, Vec<f64>)> {
        match *self {
            Kernel::Zero => Some((0.0, vec![0.0])),
            Kernel::Exponential { weight, rate } => Some((rate, vec![weight])),
            Kernel::Erlang { weight, rate, shape } => {
                let k = shape.max(1) as usize;
                let mut c = vec![0.0; k];
                c[k - 1] = weight * rate.powi(k as i32);
                Some((rate, c))
            }
            Kernel::Boxcar { .. } => None,
        }
    }

    /// ∫_0^t h.
    pub fn integral(&self, t: f64) -> f64 {
        Composite::new(0.0, t.max(1e-300), 64, 8).integrate(|z| self.eval(z))
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Kernel::Zero => true,
            Kernel::Exponential { weight, rate } => weight.is_finite() && rate.is_finite() && rate >= 0.0,
            Kernel::Erlang { weight, rate, shape } => weight.is_finite() && rate.is_finite() && rate > 0.0 && shape >= 1,
            Kernel::Boxcar { weight, width } => weight.is_finite() && width.is_finite() && width > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter { name: "kernel", reason: format!("{self:?}") })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDensity {
    Uniform { lo: f64, hi: f64 },
    /// Beta(a, b) stretched to [0, scale].
    Beta { a: f64, b: f64, scale: f64 },
}

impl InitialDensity {
    pub fn pdf(&self, s: f64) -> f64 {
        match *self {
            InitialDensity::Uniform { lo, hi } => {
                if s >= lo && s < hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            InitialDensity::Beta { a, b, scale } => {
                if s <= 0.0 || s >= scale {
                    0.0
                } else {
                    BetaLaw::new(a, b).unwrap().pdf(s / scale) / scale
                }
            }
        }
    }

    pub fn cdf(&self, s: f64) -> f64 {
        match *self {
            InitialDensity::Uniform { lo, hi } => ((s - lo) / (hi - lo)).clamp(0.0, 1.0),
            InitialDensity::Beta { a, b, scale } => {
                if s <= 0.0 {
                    0.0
                } else if s >= scale {
                    1.0
                } else {
                    BetaLaw::new(a, b).unwrap().cdf(s / scale)
                }
            }
        }
    }

    /// M_{S0}: sup of the support.
    pub fn support_bound(&self) -> f64 {
        match *self {
            InitialDensity::Uniform { hi, .. } => hi,
            InitialDensity::Beta { scale, .. } => scale,
        }
    }

    pub fn sample(&self, r: &mut impl RngCore) -> f64 {
        match *self {
            InitialDensity::Uniform { lo, hi } => lo + (hi - lo) * rng::uniform(r),
            InitialDensity::Beta { a, b, scale } => scale * BetaDist::new(a, b).unwrap().sample(r),
        }
    }

    /// Declared bound on the density, None when unbounded.
    pub fn sup_pdf(&self) -> Option<f64> {
        match *self {
            InitialDensity::Uniform { lo, hi } => Some(1.0 / (hi - lo)),
            InitialDensity::Beta { a, b, scale } => {
                if a < 1.0 || b < 1.0 {
                    None
                } else if a == 1.0 && b == 1.0 {
                    Some(1.0 / scale)
                } else {
                    let mode = (a - 1.0) / (a + b - 2.0);
                    Some(BetaLaw::new(a, b).unwrap().pdf(mode) / scale)
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            InitialDensity::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi > lo,
            InitialDensity::Beta { a, b, scale } => a > 0.0 && b > 0.0 && scale > 0.0 && scale.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter { name: "initial", reason: format!("{self:?}") })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: usize,
    pub horizon: f64,
    pub intensity: Intensity,
    pub kernel: Kernel,
    pub initial: InitialDensity,
}

impl ModelParams {
    pub fn new(n: usize, horizon: f64, intensity: Intensity, kernel: Kernel, initial: InitialDensity) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter { name: "n", reason: "need at least one particle".into() });
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter { name: "horizon", reason: format!("must be finite and > 0, got {horizon}") });
        }
        intensity.validate()?;
        kernel.validate()?;
        initial.validate()?;
        Ok(ModelParams { n, horizon, intensity, kernel, initial })
    }

    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(n, self.horizon, self.intensity.clone(), self.kernel.clone(), self.initial.clone())
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.n, horizon, self.intensity.clone(), self.kernel.clone(), self.initial.clone())
    }

    /// M_{S0} + T, the largest age reachable on [0, T].
    pub fn max_age(&self) -> f64 {
        self.initial.support_bound() + self.horizon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Ψ = 0.5 + 0.4·tanh(y)(1 − e^{−s}), h = e^{−t}, u0 = U[0, 1].
    Tanh,
    /// Ψ ≡ 0.5, h = e^{−t}, u0 = U[0, 1].
    Constant,
    /// Logistic Ψ, Erlang(2) kernel, Beta(2, 3) ages on [0, 2].
    LogisticErlang,
    /// Tanh Ψ with an inhibitory exponential kernel.
    Inhibitory,
    /// Ψ = y: fails boundedness.
    Unbounded,
    /// Tanh Ψ with a boxcar kernel: fails the Hölder condition only.
    Boxcar,
}

impl Preset {
    pub const ALL: [Preset; 6] =
        [Preset::Tanh, Preset::Constant, Preset::LogisticErlang, Preset::Inhibitory, Preset::Unbounded, Preset::Boxcar];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Tanh => "tanh",
            Preset::Constant => "constant",
            Preset::LogisticErlang => "logistic-erlang",
            Preset::Inhibitory => "inhibitory",
            Preset::Unbounded => "unbounded",
            Preset::Boxcar => "boxcar",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn params(&self, n: usize, horizon: f64) -> Result<ModelParams> {
        let tanh = Intensity::TanhSigmoid { base: 0.5, amp: 0.4 };
        let unif = InitialDensity::Uniform { lo: 0.0, hi: 1.0 };
        let expk = Kernel::Exponential { weight: 1.0, rate: 1.0 };
        let (psi, h, u0) = match self {
            Preset::Tanh => (tanh, expk, unif),
            Preset::Constant => (Intensity::Constant { rate: 0.5 }, expk, unif),
            Preset::LogisticErlang => (
                Intensity::Logistic { max_rate: 1.2, offset: -0.5, gain: 2.0 },
                Kernel::Erlang { weight: 1.5, rate: 2.0, shape: 2 },
                InitialDensity::Beta { a: 2.0, b: 3.0, scale: 2.0 },
            ),
            Preset::Inhibitory => (tanh, Kernel::Exponential { weight: -1.5, rate: 2.0 }, unif),
            Preset::Unbounded => (Intensity::LinearY { slope: 1.0, claimed_bound: 1.0 }, expk, unif),
            Preset::Boxcar => (tanh, Kernel::Boxcar { weight: 1.0, width: 0.75 }, unif),
        };
        ModelParams::new(n, horizon, psi, h, u0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub holds: bool,
    pub witness: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    pub lln: bool,
    pub tgn: bool,
    pub clt: bool,
}

impl AssumptionReport {
    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Names of failing checks.
    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.holds).map(|c| c.name.as_str()).collect()
    }
}

pub const A_U0_INF: &str = "u0_bounded_compact";
pub const A_H_INF: &str = "h_locally_bounded";
pub const A_PSI_Y_C2: &str = "psi_y_c2";
pub const A_PSI_INF: &str = "psi_bounded";
pub const A_PSI_S_C2B: &str = "psi_s_c2b";
pub const A_H_HOLDER: &str = "h_holder";
pub const A_PSI_S_C4B: &str = "psi_s_c4b";

/// Randomized check of the model assumptions with witnesses for failures.
///
/// Deterministic given `seed`. Non-finite evaluations are errors rather
/// than failed checks.
pub fn validate_assumptions(p: &ModelParams, sample_size: usize, seed: u64) -> Result<AssumptionReport> {
    if sample_size < 100 {
        return Err(Error::InvalidParameter { name: "sample_size", reason: "need at least 100 points".into() });
    }
    let mut r = rng::stream(seed, 0xA55E_0000);
    let t_max = p.horizon;
    let m = p.initial.support_bound();
    let s_max = m + t_max;
    let h_inf = p.kernel.running_max(t_max);
    let bound = p.intensity.sup_bound();
    let y_max = (2.0 * h_inf * bound.abs().max(1.0) * t_max).max(10.0);
    let mut checks = Vec::new();
    let mut record = |name: &str, witness: Option<String>| {
        checks.push(AssumptionCheck { name: name.to_string(), holds: witness.is_none(), witness });
    };

    // u0: bounded density, compact support, unit mass
    let mut w = None;
    if p.initial.sup_pdf().is_none() {
        let s = 1e-9 * m;
        w = Some(format!("density unbounded near the support edge, u0({s:e}) = {:e}", p.initial.pdf(s)));
    }
    let sup_pdf = p.initial.sup_pdf().unwrap_or(f64::INFINITY);
    for _ in 0..sample_size {
        let s = 2.0 * s_max * rng::uniform(&mut r);
        let v = check_finite("u0.pdf", p.initial.pdf(s), || format!("s={s}"))?;
        if w.is_none() && (v < 0.0 || v > sup_pdf * (1.0 + 1e-12) || (s > m && v != 0.0)) {
            w = Some(format!("u0({s}) = {v}"));
        }
    }
    let mass = Composite::new(0.0, m, 256, 8).integrate(|s| p.initial.pdf(s));
    if w.is_none() && (mass - 1.0).abs() > 1e-6 {
        w = Some(format!("u0 integrates to {mass}"));
    }
    record(A_U0_INF, w);

    // h locally bounded
    let mut w = None;
    for _ in 0..sample_size {
        let t = t_max * rng::uniform(&mut r);
        let v = check_finite("h", p.kernel.eval(t), || format!("t={t}"))?;
        if w.is_none() && v.abs() > p.kernel.running_max(t) * (1.0 + 1e-12) + 1e-300 {
            w = Some(format!("|h({t})| = {} exceeds running max {}", v.abs(), p.kernel.running_max(t)));
        }
    }
    record(A_H_INF, w);

    // Ψ: C² in y with bounded derivatives; derivative matches finite differences
    let mut w_y = None;
    let mut w_inf = None;
    let mut w_s = None;
    let psi = &p.intensity;
    let lip = psi.lip_y();
    for _ in 0..sample_size {
        let s = s_max * rng::uniform(&mut r);
        let y = y_max * (2.0 * rng::uniform(&mut r) - 1.0);
        let at = || format!("(s, y) = ({s}, {y})");
        let v = check_finite("psi", psi.eval(s, y), at)?;
        let dy = check_finite("psi.d_dy", psi.d_dy(s, y), at)?;
        check_finite("psi.d2_dy2", psi.d2_dy2(s, y), at)?;
        let step = 1e-4;
        let fd = (psi.eval(s, y + step) - psi.eval(s, y - step)) / (2.0 * step);
        if w_y.is_none() && ((fd - dy).abs() > 1e-6 || dy.abs() > lip * (1.0 + 1e-12) + 1e-15) {
            w_y = Some(format!("{}: dPsi/dy = {dy}, finite difference {fd}, declared Lipschitz {lip}", at()));
        }
        if w_inf.is_none() && (v < 0.0 || v > bound * (1.0 + 1e-12)) {
            w_inf = Some(format!("{}: Psi = {v} outside [0, {bound}]", at()));
        }
        for k in 1..=4 {
            let d = check_finite("psi.d_ds", psi.d_ds(s, y, k), at)?;
            if w_s.is_none() && d.abs() > 1e6 {
                w_s = Some(format!("{}: d^{k}Psi/ds^{k} = {d}", at()));
            }
        }
    }
    record(A_PSI_Y_C2, w_y);
    record(A_PSI_INF, w_inf);
    record(A_PSI_S_C2B, w_s.clone());

    // h Hölder
    let w = match p.kernel.holder() {
        None => Some(format!("{:?} has a jump, so no Hölder bound", p.kernel)),
        Some((c, beta)) => {
            let mut w = None;
            for _ in 0..sample_size {
                let a = t_max * rng::uniform(&mut r);
                let b = t_max * rng::uniform(&mut r);
                let lhs = (p.kernel.eval(a) - p.kernel.eval(b)).abs();
                let rhs = c * (a - b).abs().powf(beta);
                if w.is_none() && lhs > rhs * (1.0 + 1e-9) + 1e-14 {
                    w = Some(format!("|h({a}) - h({b})| = {lhs} > {rhs}"));
                }
            }
            w
        }
    };
    record(A_H_HOLDER, w);
    let w = if psi.smoothness() < Smoothness::C4b {
        Some("intensity is only C2 in s".to_string())
    } else {
        w_s
    };
    record(A_PSI_S_C4B, w);

    let holds = |n: &str| checks.iter().find(|c| c.name == n).map(|c| c.holds).unwrap_or(false);
    let lln = holds(A_U0_INF) && holds(A_H_INF) && holds(A_PSI_Y_C2) && holds(A_PSI_INF);
    let tgn = lln && holds(A_PSI_S_C2B);
    let clt = tgn && holds(A_H_HOLDER) && holds(A_PSI_S_C4B);
    Ok(AssumptionReport { checks, lln, tgn, clt })
}
