//! Experiment configuration: a TOML or JSON file, overridden by flags, and
//! validated before any computation starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::CoverageConfig;
use crate::datasets::{DatasetKind, DatasetSpec};
use crate::denoiser::TrainConfig;
use crate::error::{Error, Result};
use crate::hmc::{HmcConfig, OBSERVATION_NOISE_VAR};
use crate::pfode::{Discretization, GridSpec, Solver, DEFAULT_SCORE_TIME_FLOOR};
use crate::schedule::{build_g, toy_t_max, InflationSchedule, ScheduleKind, DEFAULT_RHO_PRP, DEFAULT_RHO_PRR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSection,
    pub schedule: ScheduleSection,
    pub train: TrainConfig,
    pub flow: FlowSection,
    pub coverage: CoverageConfig,
    pub acf: AcfSection,
    pub hmc: HmcSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            dataset: DatasetSection::default(),
            schedule: ScheduleSection::default(),
            train: TrainConfig::default(),
            flow: FlowSection::default(),
            coverage: CoverageConfig::default(),
            acf: AcfSection::default(),
            hmc: HmcSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    /// Training points.
    pub n: usize,
    /// Held-out points generated alongside the training set.
    pub holdout: usize,
    pub noise_sd: f64,
    pub thickness_sd: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let spec = DatasetSpec::new(DatasetKind::Circles, 0, 0.0, 0);
        Self { kind: DatasetKind::Circles, n: 20_000, holdout: 2000, noise_sd: 0.0, thickness_sd: spec.thickness_sd }
    }
}

/// How PR-reducing rates are built from `preserved` and `gap` when `g` is
/// not given explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapConstruction {
    /// Preserved dimensions at `1 + gap/2`, compressed at `1 - gap/2`.
    Softened,
    /// Preserved dimensions at 2, compressed at `2 - gap`.
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: ScheduleKind,
    /// Defaults to 2 for PRP and 1 for PRR.
    pub rho: Option<f64>,
    /// Defaults to the dataset's toy horizon.
    pub t_max: Option<f64>,
    pub preserved: usize,
    pub gap: f64,
    pub construction: GapConstruction,
    /// Explicit per-dimension rates; overrides `preserved`, `gap`, and `construction`.
    pub g: Option<Vec<f64>>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Prp,
            rho: None,
            t_max: None,
            preserved: 1,
            gap: 0.3,
            construction: GapConstruction::Softened,
            g: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub solver: Solver,
    pub grid: GridSpec,
    /// Networks are queried at `max(t, time_floor)`.
    pub time_floor: f64,
    pub chunk_rows: Option<usize>,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self {
            solver: Solver::Heun,
            grid: GridSpec::default(),
            time_floor: DEFAULT_SCORE_TIME_FLOOR,
            chunk_rows: Some(1000),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcfReferenceKind {
    CleanSample,
    Ideal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcfSection {
    pub n_trajectories: usize,
    pub reference: AcfReferenceKind,
    /// Training points forming the ideal denoiser's empirical measure.
    pub n_reference: usize,
    pub max_lag: Option<usize>,
}

impl Default for AcfSection {
    fn default() -> Self {
        Self { n_trajectories: 1000, reference: AcfReferenceKind::CleanSample, n_reference: 2000, max_lag: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmcSection {
    pub n_obs: usize,
    pub noise_var: f64,
    /// Grid points of the generation grid inside the likelihood.
    pub grid_points: usize,
    pub leapfrog_steps: usize,
    /// Defaults to 1e-2 for PRP and 1e-3 for PRR.
    pub step_size: Option<f64>,
    pub samples: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for HmcSection {
    fn default() -> Self {
        let c = HmcConfig::default();
        Self {
            n_obs: 200,
            noise_var: OBSERVATION_NOISE_VAR,
            grid_points: 33,
            leapfrog_steps: c.leapfrog_steps,
            step_size: None,
            samples: c.samples,
            burn_in: c.burn_in,
            thin: c.thin,
        }
    }
}

impl RunConfig {
    /// Parse a `.toml` or `.json` file; other extensions are tried as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Ok(serde_json::from_str(&text)?),
            _ => toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
        }
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            kind: self.dataset.kind,
            n: self.dataset.n + self.dataset.holdout,
            noise_sd: self.dataset.noise_sd,
            seed: self.seed,
            thickness_sd: self.dataset.thickness_sd,
        }
    }

    pub fn build_schedule(&self) -> Result<InflationSchedule> {
        let s = &self.schedule;
        let d = self.dataset.kind.dim();
        let t_max = s.t_max.unwrap_or_else(|| toy_t_max(self.dataset.kind, s.kind));
        match s.kind {
            ScheduleKind::Prp => {
                if s.g.is_some() {
                    return Err(Error::Config("explicit rates apply only to prr schedules".into()));
                }
                InflationSchedule::prp(d, s.rho.unwrap_or(DEFAULT_RHO_PRP), t_max)
            }
            ScheduleKind::Prr => {
                let g = match &s.g {
                    Some(g) if g.len() != d => {
                        return Err(Error::Config(format!("schedule.g has {} entries for {d} dimensions", g.len())))
                    }
                    Some(g) => g.clone(),
                    None => match s.construction {
                        GapConstruction::Standard => build_g(d, s.preserved, s.gap)?,
                        GapConstruction::Softened => {
                            build_g(d, s.preserved, s.gap)?.into_iter().map(|v| v - 1.0 + 0.5 * s.gap).collect()
                        }
                    },
                };
                InflationSchedule::prr(g, s.rho.unwrap_or(DEFAULT_RHO_PRR), t_max)
            }
        }
    }

    pub fn discretization(&self, t_max: f64) -> Result<Discretization> {
        Discretization::new(self.flow.grid, t_max)
    }

    pub fn hmc_config(&self, kind: ScheduleKind) -> HmcConfig {
        let base = HmcConfig::for_schedule(kind);
        HmcConfig {
            leapfrog_steps: self.hmc.leapfrog_steps,
            step_size: self.hmc.step_size.unwrap_or(base.step_size),
            samples: self.hmc.samples,
            burn_in: self.hmc.burn_in,
            thin: self.hmc.thin,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.n == 0 {
            return Err(Error::Config("dataset.n must be positive".into()));
        }
        if !(self.dataset.noise_sd >= 0.0 && self.dataset.noise_sd.is_finite()) {
            return Err(Error::Config("dataset.noise_sd must be finite and nonnegative".into()));
        }
        if !(self.flow.time_floor >= 0.0 && self.flow.time_floor.is_finite()) {
            return Err(Error::Config("flow.time_floor must be finite and nonnegative".into()));
        }
        if self.flow.chunk_rows == Some(0) {
            return Err(Error::Config("flow.chunk_rows must be positive".into()));
        }
        if self.acf.n_trajectories < 2 || self.acf.n_reference == 0 {
            return Err(Error::Config("acf needs at least two trajectories and one reference point".into()));
        }
        if self.hmc.n_obs == 0 || self.hmc.grid_points < 2 {
            return Err(Error::Config("hmc needs observations and at least two grid points".into()));
        }
        if !(self.hmc.noise_var > 0.0 && self.hmc.noise_var.is_finite()) {
            return Err(Error::Config("hmc.noise_var must be positive".into()));
        }
        self.train.validate()?;
        self.hmc_config(self.schedule.kind).validate()?;
        let schedule = self.build_schedule()?;
        self.discretization(schedule.t_max())?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
