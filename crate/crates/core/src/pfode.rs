//! Probability-flow ODE for the rescaled state `x~ = alpha x`:
//!
//! `dx~/dt = -1/2 alpha gamma_dot s(x~/alpha, t) + (alpha_dot/alpha) x~`
//!
//! where `s` is the score of the inflated marginal. Integrated forward
//! ("inflate") or backward ("generate") with Euler or Heun steps.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::TrainedDenoiser;
use crate::error::{Error, Result};
use crate::schedule::{InflationSchedule, ScheduleEval};

/// Time at which network scores are evaluated when the flow asks for an earlier time.
pub const DEFAULT_SCORE_TIME_FLOOR: f64 = 1e-2;

/// Score of the inflated marginal, evaluated on rows of unscaled states.
pub trait ScoreSource: Sync {
    fn dim(&self) -> usize;

    fn score(&self, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>>;

    /// `(ds/dx)^T cotangent` for each row.
    fn score_vjp(&self, x: ArrayView2<f64>, t: f64, cotangent: ArrayView2<f64>) -> Result<Array2<f64>>;

    /// Whether `score` is finite at `t = 0`.
    fn defined_at_zero(&self) -> bool {
        true
    }
}

/// Exact score for whitened standard-normal data: `-x / (1 + gamma)`.
#[derive(Debug, Clone)]
pub struct OracleGaussian {
    schedule: InflationSchedule,
}

impl OracleGaussian {
    pub fn new(schedule: InflationSchedule) -> Self {
        Self { schedule }
    }
}

impl ScoreSource for OracleGaussian {
    fn dim(&self) -> usize {
        self.schedule.dim()
    }

    fn score(&self, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        let gamma = self.schedule.gamma(t)?;
        Ok(-&x / &gamma.mapv(|g| 1.0 + g))
    }

    fn score_vjp(&self, _x: ArrayView2<f64>, t: f64, cotangent: ArrayView2<f64>) -> Result<Array2<f64>> {
        let gamma = self.schedule.gamma(t)?;
        Ok(-&cotangent / &gamma.mapv(|g| 1.0 + g))
    }
}

/// Score `(D(x, t) - x) / gamma(t)` from a trained denoiser.
///
/// Times below `time_floor` are evaluated at `time_floor`, where the network
/// and `1/gamma` are both well conditioned.
#[derive(Debug, Clone, Copy)]
pub struct NetworkScore<'a> {
    model: &'a TrainedDenoiser,
    time_floor: f64,
}

impl<'a> NetworkScore<'a> {
    pub fn new(model: &'a TrainedDenoiser) -> Self {
        Self::with_floor(model, DEFAULT_SCORE_TIME_FLOOR.max(model.t_min()))
    }

    pub fn with_floor(model: &'a TrainedDenoiser, time_floor: f64) -> Self {
        Self { model, time_floor: time_floor.max(model.t_min()) }
    }

    pub fn model(&self) -> &TrainedDenoiser {
        self.model
    }

    pub fn time_floor(&self) -> f64 {
        self.time_floor
    }

    fn inv_gamma(&self, t: f64) -> Result<Array1<f64>> {
        Ok(self.model.precondition(t)?.gamma.mapv(f64::recip))
    }
}

impl ScoreSource for NetworkScore<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn score(&self, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        let t = t.max(self.time_floor);
        score_from_denoiser(self.model, x, t)
    }

    fn score_vjp(&self, x: ArrayView2<f64>, t: f64, cotangent: ArrayView2<f64>) -> Result<Array2<f64>> {
        let t = t.max(self.time_floor);
        let scaled = &cotangent * &self.inv_gamma(t)?;
        Ok(self.model.input_vjp(x, t, scaled.view())? - scaled)
    }
}

/// `(D(x, t) - x) / gamma(t)`; errors below the model's `t_min`.
pub fn score_from_denoiser(model: &TrainedDenoiser, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
    let pc = model.precondition(t)?;
    let d = model.denoise(x, t)?;
    Ok((d - x) / &pc.gamma)
}

/// `-x / (1 + gamma(t))` for whitened standard-normal data.
pub fn oracle_score(x: ArrayView2<f64>, t: f64, schedule: &InflationSchedule) -> Result<Array2<f64>> {
    OracleGaussian::new(schedule.clone()).score(x, t)
}

/// Exact score of the inflated point mass at `x1`: `-(x - x1) / gamma`.
#[derive(Debug, Clone)]
pub struct ConditionalDeltaScore {
    schedule: InflationSchedule,
    x1: Array1<f64>,
}

impl ConditionalDeltaScore {
    pub fn new(schedule: InflationSchedule, x1: Array1<f64>) -> Result<Self> {
        if x1.len() != schedule.dim() {
            return Err(Error::DimensionMismatch { expected: schedule.dim(), got: x1.len() });
        }
        Ok(Self { schedule, x1 })
    }

    fn gamma(&self, t: f64) -> Result<Array1<f64>> {
        let gamma = self.schedule.gamma(t)?;
        if gamma.iter().any(|&g| g <= 0.0) {
            return Err(Error::Degenerate(format!("point-mass score is singular at t = {t}")));
        }
        Ok(gamma)
    }
}

impl ScoreSource for ConditionalDeltaScore {
    fn dim(&self) -> usize {
        self.schedule.dim()
    }

    fn score(&self, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        Ok(-(&x - &self.x1) / &self.gamma(t)?)
    }

    fn score_vjp(&self, _x: ArrayView2<f64>, t: f64, cotangent: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(-&cotangent / &self.gamma(t)?)
    }

    fn defined_at_zero(&self) -> bool {
        false
    }
}

fn check_dims(x: &ArrayView2<f64>, schedule: &InflationSchedule, source: &dyn ScoreSource) -> Result<()> {
    if source.dim() != schedule.dim() {
        return Err(Error::DimensionMismatch { expected: schedule.dim(), got: source.dim() });
    }
    if x.ncols() != schedule.dim() {
        return Err(Error::DimensionMismatch { expected: schedule.dim(), got: x.ncols() });
    }
    Ok(())
}

fn rhs_with(ev: &ScheduleEval, x_tilde: ArrayView2<f64>, source: &dyn ScoreSource) -> Result<Array2<f64>> {
    let x = &x_tilde / &ev.alpha;
    let s = source.score(x.view(), ev.t)?;
    let coef = -0.5 * &ev.alpha * &ev.gamma_dot;
    let drift = &ev.alpha_dot / &ev.alpha;
    let mut out = s * &coef;
    Zip::from(&mut out).and(&x_tilde).and_broadcast(&drift).for_each(|o, &xt, &k| *o += k * xt);
    Ok(out)
}

/// Velocity of each row of the rescaled state `x_tilde` at time `t`.
pub fn rhs(
    x_tilde: ArrayView2<f64>,
    t: f64,
    schedule: &InflationSchedule,
    source: &dyn ScoreSource,
) -> Result<Array2<f64>> {
    check_dims(&x_tilde, schedule, source)?;
    rhs_with(&schedule.eval(t)?, x_tilde, source)
}

/// `(d rhs / d x_tilde)^T cotangent` for each row.
pub fn rhs_vjp(
    x_tilde: ArrayView2<f64>,
    t: f64,
    schedule: &InflationSchedule,
    source: &dyn ScoreSource,
    cotangent: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_dims(&x_tilde, schedule, source)?;
    let ev = schedule.eval(t)?;
    let x = &x_tilde / &ev.alpha;
    let scaled = &cotangent * &(-0.5 * &ev.alpha * &ev.gamma_dot);
    let through_score = source.score_vjp(x.view(), t, scaled.view())? / &ev.alpha;
    Ok(through_score + &cotangent * &(&ev.alpha_dot / &ev.alpha))
}

/// The same velocity written with uniform `c = sqrt(gamma)` and `alpha`:
/// `-alpha^2 c_dot c grad_x log p(x/alpha) + (alpha_dot/alpha) x`.
pub fn isotropic_rhs(
    x_tilde: ArrayView2<f64>,
    t: f64,
    schedule: &InflationSchedule,
    source: &dyn ScoreSource,
) -> Result<Array2<f64>> {
    check_dims(&x_tilde, schedule, source)?;
    let ev = schedule.eval(t)?;
    let uniform = |v: &Array1<f64>| v.iter().all(|&u| u == v[0]);
    if !(uniform(&ev.gamma) && uniform(&ev.alpha)) {
        return Err(Error::InvalidArgument("isotropic form needs equal rates in every dimension".into()));
    }
    let (gamma, gamma_dot, alpha, alpha_dot) = (ev.gamma[0], ev.gamma_dot[0], ev.alpha[0], ev.alpha_dot[0]);
    let c = gamma.sqrt();
    let c_dot = gamma_dot / (2.0 * c);
    // chain rule through x / alpha
    let grad = source.score((&x_tilde / alpha).view(), t)? / alpha;
    Ok(grad * (-alpha * alpha * c_dot * c) + &x_tilde * (alpha_dot / alpha))
}

/// Velocity of the Gaussian-path interpolant with mean `alpha x1` and
/// covariance `alpha^2 gamma`: `(alpha_dot/alpha + gamma_dot/(2 gamma)) (x - alpha x1) + alpha_dot x1`.
pub fn conditional_vf(
    x: ArrayView2<f64>,
    t: f64,
    x1: ArrayView1<f64>,
    schedule: &InflationSchedule,
) -> Result<Array2<f64>> {
    if x.ncols() != schedule.dim() || x1.len() != schedule.dim() {
        return Err(Error::DimensionMismatch { expected: schedule.dim(), got: x.ncols() });
    }
    let ev = schedule.eval(t)?;
    if ev.gamma.iter().any(|&g| g <= 0.0) {
        return Err(Error::Degenerate(format!("conditional covariance is singular at t = {t}")));
    }
    let mean = &ev.alpha * &x1;
    let coef = &ev.alpha_dot / &ev.alpha + 0.5 * &ev.gamma_dot / &ev.gamma;
    let transport = &ev.alpha_dot * &x1;
    Ok((&x - &mean) * &coef + &transport)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    /// Linearly spaced from 0 with step `h`; the last point is `t_max` exactly.
    Uniform { h: f64 },
    /// `t_i = i/(n-1) (t_max - eps_s) + eps_s`.
    Edm { n: usize, eps_s: f64 },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Uniform { h: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    times: Vec<f64>,
}

impl Discretization {
    pub fn new(spec: GridSpec, t_max: f64) -> Result<Self> {
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(Error::InvalidArgument(format!("t_max must be positive, got {t_max}")));
        }
        let times = match spec {
            GridSpec::Uniform { h } => {
                if !(h.is_finite() && h > 0.0) {
                    return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
                }
                let ratio = t_max / h;
                let steps = if (ratio - ratio.round()).abs() < 1e-9 { ratio.round() } else { ratio.ceil() } as usize;
                let steps = steps.max(1);
                let mut times: Vec<f64> = (0..steps).map(|i| i as f64 * h).collect();
                times.push(t_max);
                times
            }
            GridSpec::Edm { n, eps_s } => {
                if n < 2 {
                    return Err(Error::InvalidArgument(format!("need at least 2 grid points, got {n}")));
                }
                if !(eps_s >= 0.0 && eps_s < t_max) {
                    return Err(Error::InvalidArgument(format!("eps_s must be in [0, t_max), got {eps_s}")));
                }
                let mut times: Vec<f64> =
                    (0..n - 1).map(|i| i as f64 / (n - 1) as f64 * (t_max - eps_s) + eps_s).collect();
                times.push(t_max);
                times
            }
        };
        Self::from_times(times)
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidArgument("a grid needs at least two times".into()));
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("grid times must be nonnegative and strictly increasing".into()));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("non-empty grid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Forward in time: data to latent.
    Inflate,
    /// Backward in time: latent to data.
    Generate,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inflate" => Ok(Direction::Inflate),
            "generate" => Ok(Direction::Generate),
            _ => Err(Error::InvalidArgument(format!("unknown direction '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Euler,
    Heun,
}

impl std::str::FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Solver::Euler),
            "heun" => Ok(Solver::Heun),
            _ => Err(Error::InvalidArgument(format!("unknown solver '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegrateOptions {
    /// Retain every intermediate state, not just the endpoints.
    pub keep_states: bool,
    /// Split rows into chunks of this size and integrate them in parallel.
    pub chunk_rows: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub direction: Direction,
    /// Times in the order they were visited.
    pub times: Vec<f64>,
    /// One entry per visited time when states were kept; otherwise the start and end.
    pub states: Vec<Array2<f64>>,
}

impl Trajectory {
    pub fn start(&self) -> &Array2<f64> {
        &self.states[0]
    }

    pub fn last(&self) -> &Array2<f64> {
        self.states.last().expect("trajectory has states")
    }

    pub fn into_last(mut self) -> Array2<f64> {
        self.states.pop().expect("trajectory has states")
    }

    pub fn has_all_states(&self) -> bool {
        self.states.len() == self.times.len()
    }

    /// CSV of all rows at state index `k` with header `x0,...,x{d-1}`.
    pub fn write_slice_csv<W: Write>(&self, k: usize, writer: W) -> Result<()> {
        let state =
            self.states.get(k).ok_or_else(|| Error::InvalidArgument(format!("no stored state with index {k}")))?;
        let name = format!("t={}", self.times.get(k).copied().unwrap_or(f64::NAN));
        crate::datasets::PointCloud::new(name, state.clone())?.write_csv(writer)
    }

    /// `IFLOWT` block: magic, u64 LE header length, JSON header
    /// `{direction, times, stored, rows, dim}`, then LE f64 states.
    pub fn write_binary<W: Write>(&self, mut writer: W) -> Result<()> {
        #[derive(Serialize)]
        struct Header<'a> {
            direction: Direction,
            times: &'a [f64],
            stored: usize,
            rows: usize,
            dim: usize,
        }
        let (rows, dim) = self.states[0].dim();
        let header = serde_json::to_vec(&Header {
            direction: self.direction,
            times: &self.times,
            stored: self.states.len(),
            rows,
            dim,
        })?;
        writer.write_all(b"IFLOWT")?;
        writer.write_all(&(header.len() as u64).to_le_bytes())?;
        writer.write_all(&header)?;
        for state in &self.states {
            for v in state.iter() {
                writer.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

fn visiting_order(disc: &Discretization, direction: Direction) -> Vec<f64> {
    let mut times = disc.times().to_vec();
    if direction == Direction::Generate {
        times.reverse();
    }
    times
}

fn step_once(
    x: &Array2<f64>,
    t0: f64,
    t1: f64,
    last: bool,
    solver: Solver,
    schedule: &InflationSchedule,
    source: &dyn ScoreSource,
) -> Result<Array2<f64>> {
    let h = t1 - t0;
    let d0 = rhs_with(&schedule.eval(t0)?, x.view(), source)?;
    let predictor = x + &(&d0 * h);
    let skip_corrector = last && t1 == 0.0 && !source.defined_at_zero();
    if solver == Solver::Euler || skip_corrector {
        return Ok(predictor);
    }
    let d1 = rhs_with(&schedule.eval(t1)?, predictor.view(), source)?;
    Ok(x + &((d0 + d1) * (0.5 * h)))
}

fn integrate_serial(
    points: ArrayView2<f64>,
    times: &[f64],
    solver: Solver,
    schedule: &InflationSchedule,
    source: &dyn ScoreSource,
    keep_states: bool,
) -> Result<Vec<Array2<f64>>> {
    let mut states = vec![points.to_owned()];
    let mut x = points.to_owned();
    let n = times.len() - 1;
    for i in 0..n {
        x = step_once(&x, times[i], times[i + 1], i + 1 == n, solver, schedule, source)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationFailed { step: i, t: times[i + 1] });
        }
        if keep_states {
            states.push(x.clone());
        }
    }
    if !keep_states {
        states.push(x);
    }
    Ok(states)
}

/// Integrate every row of `points` (rescaled states) across the grid.
pub fn integrate(
    points: ArrayView2<f64>,
    disc: &Discretization,
    direction: Direction,
    solver: Solver,
    schedule: &InflationSchedule,
    source: &dyn ScoreSource,
    options: IntegrateOptions,
) -> Result<Trajectory> {
    check_dims(&points, schedule, source)?;
    if disc.end() > schedule.t_max() {
        return Err(Error::TimeOutOfRange { t: disc.end(), lo: 0.0, hi: schedule.t_max() });
    }
    let times = visiting_order(disc, direction);
    let states = match options.chunk_rows {
        Some(chunk) if chunk > 0 && chunk < points.nrows() => {
            let pieces: Vec<Vec<Array2<f64>>> = points
                .axis_chunks_iter(Axis(0), chunk)
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(|rows| integrate_serial(rows, &times, solver, schedule, source, options.keep_states))
                .collect::<Result<_>>()?;
            (0..pieces[0].len())
                .map(|k| {
                    let views: Vec<_> = pieces.iter().map(|p| p[k].view()).collect();
                    ndarray::concatenate(Axis(0), &views).expect("matching widths")
                })
                .collect()
        }
        _ => integrate_serial(points, &times, solver, schedule, source, options.keep_states)?,
    };
    Ok(Trajectory { direction, times, states })
}

/// Flow map from the start of the grid to its end in the given direction,
/// with reverse-mode differentiation through the unrolled steps.
pub struct UnrolledFlow<'a> {
    schedule: &'a InflationSchedule,
    source: &'a dyn ScoreSource,
    times: Vec<f64>,
    solver: Solver,
}

/// States retained by [`UnrolledFlow::forward`] for the backward pass.
pub struct FlowTape {
    inputs: Vec<Array2<f64>>,
    predictors: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl FlowTape {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

impl<'a> UnrolledFlow<'a> {
    pub fn new(
        schedule: &'a InflationSchedule,
        source: &'a dyn ScoreSource,
        disc: &Discretization,
        direction: Direction,
        solver: Solver,
    ) -> Result<Self> {
        if source.dim() != schedule.dim() {
            return Err(Error::DimensionMismatch { expected: schedule.dim(), got: source.dim() });
        }
        if disc.end() > schedule.t_max() {
            return Err(Error::TimeOutOfRange { t: disc.end(), lo: 0.0, hi: schedule.t_max() });
        }
        Ok(Self { schedule, source, times: visiting_order(disc, direction), solver })
    }

    fn uses_corrector(&self, i: usize) -> bool {
        let last = i + 2 == self.times.len();
        self.solver == Solver::Heun && !(last && self.times[i + 1] == 0.0 && !self.source.defined_at_zero())
    }

    pub fn forward(&self, x0: ArrayView2<f64>) -> Result<FlowTape> {
        check_dims(&x0, self.schedule, self.source)?;
        let mut inputs = Vec::with_capacity(self.times.len() - 1);
        let mut predictors = Vec::with_capacity(self.times.len() - 1);
        let mut x = x0.to_owned();
        for i in 0..self.times.len() - 1 {
            let (t0, t1) = (self.times[i], self.times[i + 1]);
            let h = t1 - t0;
            let d0 = rhs_with(&self.schedule.eval(t0)?, x.view(), self.source)?;
            let p = &x + &(&d0 * h);
            let next = if self.uses_corrector(i) {
                let d1 = rhs_with(&self.schedule.eval(t1)?, p.view(), self.source)?;
                &x + &((d0 + d1) * (0.5 * h))
            } else {
                p.clone()
            };
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::IntegrationFailed { step: i, t: t1 });
            }
            inputs.push(std::mem::replace(&mut x, next));
            predictors.push(p);
        }
        Ok(FlowTape { inputs, predictors, output: x })
    }

    /// `(d output / d x0)^T cotangent` for each row.
    pub fn backward(&self, tape: &FlowTape, cotangent: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut c = cotangent.to_owned();
        for i in (0..self.times.len() - 1).rev() {
            let (t0, t1) = (self.times[i], self.times[i + 1]);
            let h = t1 - t0;
            let x = &tape.inputs[i];
            // x' = x + h/2 (f(t0, x) + f(t1, p)),  p = x + h f(t0, x)
            let (c_k1, c_p) = if self.uses_corrector(i) {
                let c_k2 = &c * (0.5 * h);
                let c_p = rhs_vjp(tape.predictors[i].view(), t1, self.schedule, self.source, c_k2.view())?;
                (&c * (0.5 * h) + &c_p * h, c_p)
            } else {
                (&c * h, Array2::zeros(c.dim()))
            };
            let through_k1 = rhs_vjp(x.view(), t0, self.schedule, self.source, c_k1.view())?;
            c = c + c_p + through_k1;
        }
        Ok(c)
    }
}
