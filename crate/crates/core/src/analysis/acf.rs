//! Temporal autocorrelation of denoiser residuals along inflation paths.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::TrainedDenoiser;
use crate::error::{Error, Result};
use crate::pfode::{
    integrate, Direction, Discretization, IntegrateOptions, NetworkScore, Solver, DEFAULT_SCORE_TIME_FLOOR,
};
use crate::schedule::InflationSchedule;

/// Posterior mean `E[y | x]` when the data distribution is the empirical
/// measure on a reference set and `x = y + N(0, diag(gamma))`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealDenoiser {
    reference: Array2<f64>,
    schedule: InflationSchedule,
}

impl IdealDenoiser {
    pub fn new(reference: Array2<f64>, schedule: InflationSchedule) -> Result<Self> {
        if reference.ncols() != schedule.dim() {
            return Err(Error::DimensionMismatch { expected: schedule.dim(), got: reference.ncols() });
        }
        if reference.nrows() == 0 {
            return Err(Error::InvalidArgument("empty reference set".into()));
        }
        Ok(Self { reference, schedule })
    }

    pub fn reference(&self) -> ArrayView2<'_, f64> {
        self.reference.view()
    }

    pub fn denoise(&self, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        let gamma = self.schedule.gamma(t)?;
        if gamma.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::Degenerate(format!("noise variance vanishes at t = {t}")));
        }
        let inv: Vec<f64> = gamma.iter().map(|g| 0.5 / g).collect();
        let d = x.ncols();
        let rows: Vec<Array1<f64>> = (0..x.nrows())
            .into_par_iter()
            .map(|i| {
                let xi = x.row(i);
                let logw: Vec<f64> = self
                    .reference
                    .rows()
                    .into_iter()
                    .map(|r| -(0..d).map(|j| (xi[j] - r[j]).powi(2) * inv[j]).sum::<f64>())
                    .collect();
                let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut out = Array1::zeros(d);
                let mut total = 0.0;
                for (w, r) in logw.iter().zip(self.reference.rows()) {
                    let w = (w - max).exp();
                    total += w;
                    out.scaled_add(w, &r);
                }
                out / total
            })
            .collect();
        let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
        Ok(ndarray::concatenate(Axis(0), &views).expect("matching widths"))
    }
}

/// What a network output is compared with to form a residual.
#[derive(Debug, Clone, PartialEq)]
pub enum ResidualReference {
    /// The clean sample the trajectory started from.
    CleanSample,
    /// The exact denoiser for an empirical reference distribution.
    Ideal(IdealDenoiser),
}

impl ResidualReference {
    pub fn name(&self) -> &'static str {
        match self {
            ResidualReference::CleanSample => "clean_sample",
            ResidualReference::Ideal(_) => "ideal_denoiser",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcfOptions {
    pub solver: Solver,
    /// Network and reference are evaluated at `max(t, time_floor)`.
    pub time_floor: f64,
    /// Largest lag in grid steps; `None` uses every lag.
    pub max_lag: Option<usize>,
    pub chunk_rows: Option<usize>,
}

impl Default for AcfOptions {
    fn default() -> Self {
        Self { solver: Solver::Heun, time_floor: DEFAULT_SCORE_TIME_FLOOR, max_lag: None, chunk_rows: Some(500) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfReport {
    pub reference: String,
    pub n_trajectories: usize,
    pub lags: Vec<usize>,
    /// Elapsed time from the start of the grid after each lag.
    pub lag_times: Vec<f64>,
    pub values: Vec<f64>,
}

impl AcfReport {
    /// Largest `|acf|` over lags `>= lag`.
    pub fn max_abs_from(&self, lag: usize) -> f64 {
        self.lags.iter().zip(&self.values).filter(|(l, _)| **l >= lag).map(|(_, v)| v.abs()).fold(0.0, f64::max)
    }

    /// Mean `|acf|` over lags `>= lag`; `None` when no such lag exists.
    pub fn mean_abs_from(&self, lag: usize) -> Option<f64> {
        let tail: Vec<f64> =
            self.lags.iter().zip(&self.values).filter(|(l, _)| **l >= lag).map(|(_, v)| v.abs()).collect();
        (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

/// Normalized autocorrelation of residual series. `residuals[k]` holds the
/// residuals of all trajectories at time index `k`. Each (time, coordinate)
/// series is centered across trajectories and scaled by its standard
/// deviation; the value at lag `l` averages the resulting correlations over
/// all time pairs `(k, k + l)` and coordinates.
pub fn scaled_autocorrelation(residuals: &[Array2<f64>], max_lag: Option<usize>) -> Result<Vec<f64>> {
    let Some(first) = residuals.first() else {
        return Err(Error::InvalidArgument("no residuals".into()));
    };
    let (n, d) = first.dim();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two trajectories".into()));
    }
    if let Some(r) = residuals.iter().find(|r| r.dim() != (n, d)) {
        return Err(Error::DimensionMismatch { expected: n * d, got: r.len() });
    }
    let standardized: Vec<Array2<f64>> = residuals
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let mean = r.mean_axis(Axis(0)).expect("non-empty");
            let mut c = r - &mean;
            for (j, mut col) in c.columns_mut().into_iter().enumerate() {
                let sd = (col.dot(&col) / n as f64).sqrt();
                if !(sd > 0.0 && sd.is_finite()) {
                    return Err(Error::Degenerate(format!("residual coordinate {j} is constant at time index {k}")));
                }
                col /= sd;
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let t = residuals.len();
    let max_lag = max_lag.unwrap_or(t - 1).min(t - 1);
    Ok((0..=max_lag)
        .into_par_iter()
        .map(|lag| {
            let pairs = t - lag;
            let total: f64 = (0..pairs).map(|k| (&standardized[k] * &standardized[k + lag]).sum()).sum();
            total / (pairs * n * d) as f64
        })
        .collect())
}

/// Inflate `data` (clean points in whitened coordinates) with the network's
/// score, then correlate the residuals `D(x_k, t_k) - reference` over time.
pub fn residual_autocorrelation(
    model: &TrainedDenoiser,
    data: ArrayView2<f64>,
    disc: &Discretization,
    reference: &ResidualReference,
    options: &AcfOptions,
) -> Result<AcfReport> {
    let schedule = model.schedule();
    let source = NetworkScore::with_floor(model, options.time_floor);
    let traj = integrate(
        data,
        disc,
        Direction::Inflate,
        options.solver,
        schedule,
        &source,
        IntegrateOptions { keep_states: true, chunk_rows: options.chunk_rows },
    )?;
    let residuals: Vec<Array2<f64>> = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(&t, state)| {
            let te = t.max(options.time_floor);
            let alpha = schedule.eval(t)?.alpha;
            let x = state / &alpha;
            let out = model.denoise(x.view(), te)?;
            Ok(match reference {
                ResidualReference::CleanSample => out - data,
                ResidualReference::Ideal(ideal) => out - ideal.denoise(x.view(), te)?,
            })
        })
        .collect::<Result<_>>()?;
    let values = scaled_autocorrelation(&residuals, options.max_lag)?;
    let lags: Vec<usize> = (0..values.len()).collect();
    let lag_times = lags.iter().map(|&l| traj.times[l] - traj.times[0]).collect();
    Ok(AcfReport { reference: reference.name().into(), n_trajectories: data.nrows(), lags, lag_times, values })
}
