//! Inflation schedules in the whitened eigenbasis.
//!
//! Every coordinate starts with unit variance. Dimension `j` inflates as
//! `1 + gamma_j(t) = exp(rho g_j t)` and the whole state is rescaled by
//! `alpha(t)`, so that after rescaling the preserved dimensions keep unit
//! variance and the others shrink by `exp(-rho (g* - g_j) t)`.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::datasets::DatasetKind;
use crate::error::{Error, Result};

/// Largest exponent `rho g t` accepted before `exp` would overflow in downstream products.
pub const EXPONENT_LIMIT: f64 = 700.0;

pub const DEFAULT_RHO_PRP: f64 = 2.0;
pub const DEFAULT_RHO_PRR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// Equal rates in every dimension: the participation ratio is preserved.
    Prp,
    /// Faster rates in the preserved dimensions: the participation ratio drops.
    Prr,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "prp" => Ok(ScheduleKind::Prp),
            "prr" => Ok(ScheduleKind::Prr),
            _ => Err(Error::InvalidArgument(format!("unknown schedule kind '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InflationSchedule {
    kind: ScheduleKind,
    rho: f64,
    g: Vec<f64>,
    g_star: f64,
    t_max: f64,
}

/// Noise variances, rescaling factors, and their time derivatives at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleEval {
    pub t: f64,
    pub gamma: Array1<f64>,
    pub gamma_dot: Array1<f64>,
    pub alpha: Array1<f64>,
    pub alpha_dot: Array1<f64>,
}

impl InflationSchedule {
    pub fn new(kind: ScheduleKind, rho: f64, g: Vec<f64>, t_max: f64) -> Result<Self> {
        if g.is_empty() {
            return Err(Error::InvalidArgument("g must have at least one entry".into()));
        }
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
        }
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(Error::InvalidArgument(format!("t_max must be positive, got {t_max}")));
        }
        if let Some(v) = g.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("rates must be finite and nonnegative, got {v}")));
        }
        let g_star = g.iter().copied().fold(0.0_f64, f64::max);
        if g_star <= 0.0 {
            return Err(Error::InvalidArgument("at least one rate must be positive".into()));
        }
        if kind == ScheduleKind::Prp && g.iter().any(|&v| v != g_star) {
            return Err(Error::InvalidArgument("a PRP schedule needs equal rates in every dimension".into()));
        }
        let exponent = rho * g_star * t_max;
        if exponent > EXPONENT_LIMIT {
            return Err(Error::Overflow { exponent, limit: EXPONENT_LIMIT });
        }
        Ok(Self { kind, rho, g, g_star, t_max })
    }

    /// PR-preserving schedule with unit rates.
    pub fn prp(d: usize, rho: f64, t_max: f64) -> Result<Self> {
        Self::new(ScheduleKind::Prp, rho, vec![1.0; d], t_max)
    }

    pub fn prr(g: Vec<f64>, rho: f64, t_max: f64) -> Result<Self> {
        Self::new(ScheduleKind::Prr, rho, g, t_max)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn g_star(&self) -> f64 {
        self.g_star
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// Indices whose rate equals the maximum.
    pub fn preserved(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.g[j] == self.g_star).collect()
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.t_max) {
            return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: self.t_max });
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<ScheduleEval> {
        self.check_time(t)?;
        let d = self.dim();
        let mut gamma = Array1::zeros(d);
        let mut gamma_dot = Array1::zeros(d);
        for j in 0..d {
            let rate = self.rho * self.g[j];
            gamma[j] = (rate * t).exp_m1();
            gamma_dot[j] = rate * (rate * t).exp();
        }
        let rate = self.rho * self.g_star;
        let a = (-0.5 * rate * t).exp();
        let alpha = Array1::from_elem(d, a);
        let alpha_dot = Array1::from_elem(d, -0.5 * rate * a);
        Ok(ScheduleEval { t, gamma, gamma_dot, alpha, alpha_dot })
    }

    /// Noise variances only; cheaper than `eval` for training.
    pub fn gamma(&self, t: f64) -> Result<Array1<f64>> {
        self.check_time(t)?;
        Ok(self.g.iter().map(|g| (self.rho * g * t).exp_m1()).collect())
    }

    /// Per-dimension variance of the rescaled state at `t_max` when the data are whitened.
    pub fn latent_cov(&self) -> Array1<f64> {
        self.g.iter().map(|g| (self.rho * (g - self.g_star) * self.t_max).exp()).collect()
    }
}

impl ScheduleEval {
    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

/// Rates for `k` preserved dimensions at 2 followed by `d - k` compressed ones at `2 - ig`.
pub fn build_g(d: usize, k: usize, ig: f64) -> Result<Vec<f64>> {
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!("preserved count {k} must be in 1..={d}")));
    }
    if !(0.0..=2.0).contains(&ig) {
        return Err(Error::InvalidArgument(format!("inflation gap must be in [0, 2], got {ig}")));
    }
    Ok((0..d).map(|j| if j < k { 2.0 } else { 2.0 - ig }).collect())
}

/// Participation ratio `(sum v)^2 / sum v^2` of a nonnegative spectrum.
pub fn participation_ratio(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("empty spectrum".into()));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("spectrum entries must be finite and nonnegative, got {v}")));
    }
    let top = values.iter().copied().fold(0.0_f64, f64::max);
    if top == 0.0 {
        return Err(Error::Degenerate("spectrum is identically zero".into()));
    }
    let (s1, s2) = values.iter().fold((0.0, 0.0), |(a, b), v| {
        let u = v / top;
        (a + u, b + u * u)
    });
    Ok(s1 * s1 / s2)
}

fn inflated_spectrum(sigma0_sq: &[f64], g: &[f64], rho: f64, t: f64) -> Result<Vec<f64>> {
    if sigma0_sq.len() != g.len() {
        return Err(Error::DimensionMismatch { expected: sigma0_sq.len(), got: g.len() });
    }
    if sigma0_sq.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("sigma0_sq must be positive".into()));
    }
    // a common factor exp(rho g* t) cancels in both ratios
    let g_star = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(sigma0_sq.iter().zip(g).map(|(s, gj)| s * (rho * (gj - g_star) * t).exp()).collect())
}

/// Participation ratio of `diag(sigma0_sq * exp(rho g t))`.
pub fn pr_trajectory(sigma0_sq: &[f64], g: &[f64], rho: f64, t: f64) -> Result<f64> {
    participation_ratio(&inflated_spectrum(sigma0_sq, g, rho, t)?)
}

/// `(sum gamma)(sum g gamma) / sum g gamma^2` with `gamma = sigma0_sq * exp(rho g t)`:
/// the value the participation ratio is driven toward under inflation.
pub fn cal_r(sigma0_sq: &[f64], g: &[f64], rho: f64, t: f64) -> Result<f64> {
    let gamma = inflated_spectrum(sigma0_sq, g, rho, t)?;
    let s = gamma.iter().sum::<f64>();
    let sg = gamma.iter().zip(g).map(|(c, gj)| gj * c).sum::<f64>();
    let sgg = gamma.iter().zip(g).map(|(c, gj)| gj * c * c).sum::<f64>();
    if sgg == 0.0 || !sgg.is_finite() {
        return Err(Error::Degenerate("sum of g * gamma^2 is zero".into()));
    }
    Ok(s * sg / sgg)
}

/// Integration horizon used for the toy datasets.
pub fn toy_t_max(dataset: DatasetKind, kind: ScheduleKind) -> f64 {
    use DatasetKind::*;
    match (dataset, kind) {
        (Circles | Sine, ScheduleKind::Prp) => 7.01,
        (Moons, ScheduleKind::Prp) => 8.01,
        (SCurve | SCurveScaled, ScheduleKind::Prp) => 9.01,
        (Swirl | SwirlScaled, ScheduleKind::Prp) => 11.01,
        (Circles | Sine | Moons, ScheduleKind::Prr) => 11.01,
        (SCurve | SCurveScaled | Swirl | SwirlScaled, ScheduleKind::Prr) => 15.01,
        (CirclesEmbeddedPlane | CirclesEmbeddedCurved, ScheduleKind::Prp) => 7.01,
        (CirclesEmbeddedPlane | CirclesEmbeddedCurved, ScheduleKind::Prr) => 11.01,
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleJson {
    kind: ScheduleKind,
    d: usize,
    rho: f64,
    /// Run-length encoded `[value, count]` pairs.
    g: Vec<(f64, usize)>,
    t_max: f64,
}

impl Serialize for InflationSchedule {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut runs: Vec<(f64, usize)> = Vec::new();
        for &v in &self.g {
            match runs.last_mut() {
                Some((last, count)) if last.to_bits() == v.to_bits() => *count += 1,
                _ => runs.push((v, 1)),
            }
        }
        ScheduleJson { kind: self.kind, d: self.dim(), rho: self.rho, g: runs, t_max: self.t_max }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for InflationSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = ScheduleJson::deserialize(deserializer)?;
        let g: Vec<f64> = raw.g.iter().flat_map(|&(v, n)| std::iter::repeat_n(v, n)).collect();
        if g.len() != raw.d {
            return Err(D::Error::custom(format!("g expands to {} entries, expected d = {}", g.len(), raw.d)));
        }
        InflationSchedule::new(raw.kind, raw.rho, g, raw.t_max).map_err(D::Error::custom)
    }
}
