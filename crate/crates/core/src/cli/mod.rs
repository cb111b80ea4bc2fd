//! Command-line front end. Every command writes `metrics.json`,
//! `manifest.json`, and its CSV/SVG artifacts into the output directory.

pub mod config;
pub mod svg;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{
    coverage_experiment, residual_autocorrelation, roundtrip_mse, AcfOptions, IdealDenoiser, ResidualReference,
};
use crate::checks;
use crate::datasets::{prepare, split, unwhiten, whiten, DatasetKind, EigenFrame, PointCloud};
use crate::denoiser::{train_with_progress, TrainedDenoiser};
use crate::error::{Error, Result};
use crate::hmc::{
    hmc_run_with_progress, summarize, synthesize_observations, weights_from_logits, GmmPosterior, GmmPrior,
};
use crate::linalg::covariance;
use crate::pfode::{
    integrate, Direction, Discretization, GridSpec, IntegrateOptions, NetworkScore, Solver, UnrolledFlow,
};
use crate::rng::RngStream;
use crate::schedule::{participation_ratio, pr_trajectory, ScheduleKind};
use config::{AcfReferenceKind, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "inflare",
    version,
    about = "Inflationary probability-flow ODEs: training, flows, and calibration experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate, standardize, and whiten a toy dataset.
    GenData(Common),
    /// Train a preconditioned denoiser and save an IFLOW1 checkpoint.
    Train(TrainArgs),
    /// Integrate points through the flow in one direction.
    Flow(FlowArgs),
    /// Inflate held-out points and generate them back.
    Roundtrip(ModelArgs),
    /// Transport latent Mahalanobis balls and recount their coverage.
    Coverage(CoverageArgs),
    /// Sample mixture weights by HMC through the generative map.
    Hmc(HmcArgs),
    /// Participation ratio of a spectrum.
    Pr(PrArgs),
    /// Autocorrelation of denoiser residuals along inflation paths.
    ResidualAcf(AcfArgs),
    /// Run the analytic invariant suite.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML or JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dataset: Option<DatasetKind>,
    /// Training points.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub holdout: Option<usize>,
    #[arg(long)]
    pub schedule: Option<ScheduleKind>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Explicit comma-separated PR-reducing rates.
    #[arg(long, value_delimiter = ',')]
    pub g: Option<Vec<f64>>,
    #[arg(long)]
    pub solver: Option<Solver>,
    /// Uniform grid step.
    #[arg(long)]
    pub step: Option<f64>,
    /// Skip SVG plots.
    #[arg(long)]
    pub no_svg: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub common: Common,
    /// Trained checkpoint.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "inflate")]
    pub direction: Direction,
    /// Whitened input points (CSV header x0,x1,...); defaults to held-out
    /// data when inflating and latent samples when generating.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub n_test: Option<usize>,
}

#[derive(Debug, Args)]
pub struct HmcArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub n_obs: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AcfArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_parser = parse_reference)]
    pub reference: Option<AcfReferenceKind>,
    #[arg(long)]
    pub n_trajectories: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PrArgs {
    /// Comma-separated nonnegative eigenvalues.
    #[arg(long, value_delimiter = ',', required = true)]
    pub eigvals: Vec<f64>,
    /// Rates for the inflated spectrum; with `--time`, also report the PR at that time.
    #[arg(long, value_delimiter = ',', requires = "time")]
    pub rates: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, requires = "rates")]
    pub time: Option<f64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value = "out")]
    pub output_dir: PathBuf,
}

fn parse_reference(s: &str) -> std::result::Result<AcfReferenceKind, String> {
    match s {
        "clean-sample" | "clean_sample" => Ok(AcfReferenceKind::CleanSample),
        "ideal" => Ok(AcfReferenceKind::Ideal),
        _ => Err(format!("expected clean-sample or ideal, got '{s}'")),
    }
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("INFLARE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // A pool may already exist when running in-process more than once.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(c) => gen_data(&c),
        Command::Train(a) => train_cmd(&a),
        Command::Flow(a) => flow_cmd(&a),
        Command::Roundtrip(a) => roundtrip_cmd(&a),
        Command::Coverage(a) => coverage_cmd(&a),
        Command::Hmc(a) => hmc_cmd(&a),
        Command::Pr(a) => pr_cmd(&a),
        Command::ResidualAcf(a) => acf_cmd(&a),
        Command::OracleCheck(a) => oracle_cmd(&a),
    }
}

/// File config (or defaults), then `INFLARE_SEED` when the file sets no
/// seed, then flags.
pub fn resolve_config(c: &Common) -> Result<RunConfig> {
    let (mut cfg, file_seed) = match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let has_seed = match path.extension().and_then(|e| e.to_str()) {
                Some("json") => serde_json::from_str::<serde_json::Value>(&text)?.get("seed").is_some(),
                _ => text.parse::<toml::Table>().map(|t| t.contains_key("seed")).unwrap_or(false),
            };
            (RunConfig::load(path)?, has_seed)
        }
        None => (RunConfig::default(), false),
    };
    if !file_seed {
        if let Some(seed) = std::env::var("INFLARE_SEED").ok().and_then(|v| v.parse().ok()) {
            cfg.seed = seed;
        }
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
        cfg.coverage.seed = seed;
    }
    if let Some(v) = &c.output_dir {
        cfg.output_dir = v.clone();
    }
    if let Some(v) = c.dataset {
        cfg.dataset.kind = v;
    }
    if let Some(v) = c.n {
        cfg.dataset.n = v;
    }
    if let Some(v) = c.holdout {
        cfg.dataset.holdout = v;
    }
    if let Some(v) = c.schedule {
        cfg.schedule.kind = v;
    }
    if let Some(v) = c.rho {
        cfg.schedule.rho = Some(v);
    }
    if let Some(v) = c.t_max {
        cfg.schedule.t_max = Some(v);
    }
    if let Some(v) = &c.g {
        cfg.schedule.g = Some(v.clone());
    }
    if let Some(v) = c.solver {
        cfg.flow.solver = v;
        cfg.coverage.solver = v;
    }
    if let Some(h) = c.step {
        cfg.flow.grid = GridSpec::Uniform { h };
        cfg.coverage.grid = GridSpec::Uniform { h };
    }
    Ok(cfg)
}

/// Collects metrics and artifacts for one command and writes them out.
pub struct Output {
    dir: PathBuf,
    command: &'static str,
    config_hash: String,
    seed: u64,
    svg: bool,
    metrics: BTreeMap<String, f64>,
    artifacts: Vec<PathBuf>,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    metrics: &'a BTreeMap<String, f64>,
    artifacts: Vec<String>,
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: &'a str,
    seed: u64,
    artifacts: Vec<ManifestEntry>,
}

impl Output {
    pub fn new(dir: &Path, command: &'static str, config_hash: String, seed: u64, svg: bool) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command,
            config_hash,
            seed,
            svg,
            metrics: BTreeMap::new(),
            artifacts: Vec::new(),
        })
    }

    fn for_config(cfg: &RunConfig, command: &'static str, no_svg: bool) -> Result<Self> {
        Self::new(&cfg.output_dir, command, cfg.hash(), cfg.seed, !no_svg)
    }

    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.artifacts.push(p.clone());
        p
    }

    pub fn write_points(&mut self, name: &str, pc: &PointCloud) -> Result<()> {
        let p = self.path(name);
        pc.write_csv(BufWriter::new(File::create(p)?))
    }

    pub fn write_rows<R: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = R>) -> Result<()> {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(p)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        serde_json::to_writer_pretty(BufWriter::new(File::create(p)?), value)?;
        Ok(())
    }

    fn write_svg(&mut self, name: &str, body: impl FnOnce() -> String) -> Result<()> {
        if self.svg {
            let p = self.path(name);
            std::fs::write(p, body())?;
        }
        Ok(())
    }

    fn register(&mut self, path: PathBuf) {
        self.artifacts.push(path);
    }

    pub fn finish(self) -> Result<()> {
        let names: Vec<String> = self.artifacts.iter().map(|p| p.display().to_string()).collect();
        let metrics = MetricsFile {
            command: self.command,
            config_hash: &self.config_hash,
            seed: self.seed,
            metrics: &self.metrics,
            artifacts: names.clone(),
        };
        std::fs::write(self.dir.join("metrics.json"), serde_json::to_string_pretty(&metrics)?)?;
        let artifacts = self
            .artifacts
            .iter()
            .zip(names)
            .map(|(p, path)| Ok(ManifestEntry { path, sha256: hex::encode(Sha256::digest(std::fs::read(p)?)) }))
            .collect::<Result<_>>()?;
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: &self.config_hash,
            seed: self.seed,
            artifacts,
        };
        std::fs::write(self.dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

/// Standardized cloud, its frame, and the whitened train/held-out split.
struct Prepared {
    standardized: PointCloud,
    frame: EigenFrame,
    train: PointCloud,
    holdout: Option<PointCloud>,
}

fn prepare_data(cfg: &RunConfig, frame: Option<&EigenFrame>) -> Result<Prepared> {
    let (standardized, own) = prepare(&cfg.dataset_spec())?;
    let frame = frame.cloned().unwrap_or(own);
    let w = whiten(&standardized, &frame)?;
    let (train, holdout) = if cfg.dataset.holdout == 0 {
        (w, None)
    } else {
        let (a, b) = split(&w, cfg.dataset.n)?;
        (a, Some(b))
    };
    Ok(Prepared { standardized, frame, train, holdout })
}

fn load_model(cfg: &RunConfig, path: &Path) -> Result<TrainedDenoiser> {
    let model = TrainedDenoiser::load(path)?;
    if model.dim() != cfg.dataset.kind.dim() {
        return Err(Error::Config(format!(
            "model has {} dimensions but dataset {} has {}",
            model.dim(),
            cfg.dataset.kind.name(),
            cfg.dataset.kind.dim()
        )));
    }
    Ok(model)
}

fn holdout(p: &Prepared) -> Result<&PointCloud> {
    p.holdout.as_ref().ok_or_else(|| Error::Config("dataset.holdout must be positive for this command".into()))
}

fn model_disc(cfg: &RunConfig, model: &TrainedDenoiser) -> Result<Discretization> {
    cfg.discretization(model.schedule().t_max())
}

fn integrate_with(
    cfg: &RunConfig,
    model: &TrainedDenoiser,
    x: ArrayView2<f64>,
    direction: Direction,
) -> Result<Array2<f64>> {
    let src = NetworkScore::with_floor(model, cfg.flow.time_floor);
    let options = IntegrateOptions { keep_states: false, chunk_rows: cfg.flow.chunk_rows };
    Ok(integrate(x, &model_disc(cfg, model)?, direction, cfg.flow.solver, model.schedule(), &src, options)?.into_last())
}

fn gen_data(c: &Common) -> Result<()> {
    let cfg = resolve_config(c)?;
    cfg.validate()?;
    let p = prepare_data(&cfg, None)?;
    let mut out = Output::for_config(&cfg, "gen-data", c.no_svg)?;
    out.write_points("data.csv", &p.standardized)?;
    out.write_points("train_whitened.csv", &p.train)?;
    if let Some(h) = &p.holdout {
        out.write_points("holdout_whitened.csv", h)?;
    }
    out.write_json("frame.json", &p.frame)?;
    out.metric("n_points", p.standardized.len() as f64);
    out.metric("dim", p.standardized.dim() as f64);
    for (j, v) in p.frame.sigma0_sq.iter().enumerate() {
        out.metric(format!("sigma0_sq_{j}"), *v);
    }
    out.metric("participation_ratio", participation_ratio(&p.frame.sigma0_sq)?);
    out.write_svg("data.svg", || svg::scatter(cfg.dataset.kind.name(), &[p.standardized.points()]))?;
    out.finish()
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut cfg = resolve_config(&a.common)?;
    if let Some(v) = a.steps {
        cfg.train.steps = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.train.learning_rate = v;
    }
    cfg.validate()?;
    let schedule = cfg.build_schedule()?;
    let p = prepare_data(&cfg, None)?;
    let report_every = (cfg.train.steps / cfg.train.log_every / 20).max(1) * cfg.train.log_every;
    let model = train_with_progress(&p.train, &p.frame, &schedule, &cfg.train, |lp| {
        if lp.step % report_every == 0 {
            eprintln!("step {:>7}  loss {:.5}", lp.step, lp.loss);
        }
    })?;
    let mut out = Output::for_config(&cfg, "train", a.common.no_svg)?;
    let path = cfg.output_dir.join("model.iflow");
    model.save(&path)?;
    out.register(path);
    let curve = &model.meta().loss_curve;
    out.write_rows("loss.csv", curve.iter())?;
    let tail = &curve[curve.len().saturating_sub(10)..];
    out.metric("final_loss", tail.iter().map(|l| l.loss).sum::<f64>() / tail.len() as f64);
    out.metric("steps", cfg.train.steps as f64);
    out.metric("t_max", schedule.t_max());
    let steps: Vec<f64> = curve.iter().map(|l| l.step as f64).collect();
    let losses: Vec<f64> = curve.iter().map(|l| l.loss).collect();
    out.write_svg("loss.svg", || svg::lines("training loss", &[(&steps, &losses)]))?;
    out.finish()
}

fn flow_cmd(a: &FlowArgs) -> Result<()> {
    let cfg = resolve_config(&a.model.common)?;
    cfg.validate()?;
    let model = load_model(&cfg, &a.model.model)?;
    let d = model.dim();
    let input = match (&a.input, a.direction) {
        (Some(path), _) => PointCloud::read_csv("input", File::open(path)?)?,
        (None, Direction::Inflate) => holdout(&prepare_data(&cfg, Some(model.frame()))?)?.clone(),
        (None, Direction::Generate) => {
            let cov = model.schedule().latent_cov();
            let n = cfg.dataset.holdout.max(1);
            let mut rng = RngStream::new(cfg.seed);
            PointCloud::new("latent", Array2::from_shape_fn((n, d), |(_, j)| cov[j].sqrt() * rng.normal()))?
        }
    };
    if input.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: input.dim() });
    }
    let end = integrate_with(&cfg, &model, input.points(), a.direction)?;
    let end = PointCloud::new("output", end)?;
    let mut out = Output::for_config(&cfg, "flow", a.model.common.no_svg)?;
    out.write_points("input.csv", &input)?;
    out.write_points("output.csv", &end)?;
    if a.direction == Direction::Generate {
        out.write_points("output_data_space.csv", &unwhiten(&end, model.frame())?)?;
    }
    let cov = covariance(end.points());
    for j in 0..d {
        out.metric(format!("output_var_{j}"), cov[[j, j]]);
    }
    out.metric("n_points", end.len() as f64);
    out.metric("t_max", model.schedule().t_max());
    if d >= 2 {
        out.write_svg("flow.svg", || {
            svg::scatter("input (green) and output (orange)", &[input.points(), end.points()])
        })?;
    }
    out.finish()
}

fn roundtrip_cmd(a: &ModelArgs) -> Result<()> {
    let cfg = resolve_config(&a.common)?;
    cfg.validate()?;
    let model = load_model(&cfg, &a.model)?;
    let p = prepare_data(&cfg, Some(model.frame()))?;
    let x = holdout(&p)?.points();
    let z = integrate_with(&cfg, &model, x, Direction::Inflate)?;
    let back = integrate_with(&cfg, &model, z.view(), Direction::Generate)?;
    let mut out = Output::for_config(&cfg, "roundtrip", a.common.no_svg)?;
    out.metric("roundtrip_mse", roundtrip_mse(x, back.view())?);
    let cov = covariance(z.view());
    for (j, want) in model.schedule().latent_cov().iter().enumerate() {
        out.metric(format!("latent_var_{j}"), cov[[j, j]]);
        out.metric(format!("expected_latent_var_{j}"), *want);
    }
    out.metric("n_points", x.nrows() as f64);
    let table = concatenate(Axis(1), &[x, z.view(), back.view()]).expect("same rows");
    let d = model.dim();
    let header: Vec<String> = ["x", "z", "xr"].iter().flat_map(|p| (0..d).map(move |j| format!("{p}{j}"))).collect();
    let path = out.path("roundtrip.csv");
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    for row in table.rows() {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    out.write_svg("roundtrip.svg", || svg::scatter("original (green) and reconstructed (orange)", &[x, back.view()]))?;
    out.write_svg("latent.svg", || svg::scatter("latent", &[z.view()]))?;
    out.finish()
}

fn coverage_cmd(a: &CoverageArgs) -> Result<()> {
    let mut cfg = resolve_config(&a.model.common)?;
    if let Some(n) = a.n_test {
        cfg.coverage.n_test = n;
    }
    cfg.validate()?;
    let model = load_model(&cfg, &a.model.model)?;
    let src = NetworkScore::with_floor(&model, cfg.flow.time_floor);
    let reports = coverage_experiment(&src, model.schedule(), &cfg.coverage)?;
    let mut out = Output::for_config(&cfg, "coverage", a.model.common.no_svg)?;
    let mut worst = 0.0_f64;
    for r in &reports {
        let dir = match r.direction {
            Direction::Inflate => "inflate",
            Direction::Generate => "generate",
        };
        out.metric(format!("change_{dir}_r{}", r.radius), r.change());
        worst = worst.max(r.change().abs());
    }
    out.metric("max_abs_change", worst);
    out.metric("all_boundaries_valid", reports.iter().all(|r| r.boundary_valid) as u8 as f64);
    #[derive(Serialize)]
    struct Row {
        direction: Direction,
        radius: f64,
        frac_before: f64,
        frac_after: f64,
        change: f64,
        n_test: usize,
        n_vertices: usize,
        boundary_valid: bool,
    }
    out.write_rows(
        "coverage.csv",
        reports.iter().map(|r| Row {
            direction: r.direction,
            radius: r.radius,
            frac_before: r.frac_before,
            frac_after: r.frac_after,
            change: r.change(),
            n_test: r.n_test,
            n_vertices: r.n_vertices,
            boundary_valid: r.boundary_valid,
        }),
    )?;
    let series: Vec<(Vec<f64>, Vec<f64>)> = [Direction::Generate, Direction::Inflate]
        .iter()
        .map(|d| {
            let rs: Vec<_> = reports.iter().filter(|r| r.direction == *d).collect();
            (rs.iter().map(|r| r.radius).collect(), rs.iter().map(|r| r.change()).collect())
        })
        .collect();
    out.write_svg("coverage.svg", || {
        let refs: Vec<(&[f64], &[f64])> = series.iter().map(|(x, y)| (x.as_slice(), y.as_slice())).collect();
        svg::lines("coverage change by radius: generate (green), round trip (orange)", &refs)
    })?;
    out.finish()
}

fn hmc_cmd(a: &HmcArgs) -> Result<()> {
    let mut cfg = resolve_config(&a.model.common)?;
    if let Some(v) = a.n_obs {
        cfg.hmc.n_obs = v;
    }
    if let Some(v) = a.samples {
        cfg.hmc.samples = v;
    }
    if let Some(v) = a.burn_in {
        cfg.hmc.burn_in = v;
    }
    if let Some(v) = a.step_size {
        cfg.hmc.step_size = Some(v);
    }
    cfg.validate()?;
    let model = load_model(&cfg, &a.model.model)?;
    let schedule = model.schedule();
    if schedule.dim() != 2 {
        return Err(Error::Config("the mixture calibration experiment is two-dimensional".into()));
    }
    let prior = GmmPrior::calibration(schedule.kind());
    let src = NetworkScore::with_floor(&model, cfg.flow.time_floor);
    let disc = Discretization::new(GridSpec::Edm { n: cfg.hmc.grid_points, eps_s: 0.0 }, schedule.t_max())?;
    let flow = UnrolledFlow::new(schedule, &src, &disc, Direction::Generate, cfg.flow.solver)?;
    let obs = synthesize_observations(&prior, cfg.hmc.n_obs, cfg.hmc.noise_var, &flow, &mut RngStream::new(cfg.seed))?;
    let target = GmmPosterior { obs: &obs, prior: &prior, flow: &flow };
    let hmc = cfg.hmc_config(schedule.kind());
    let total = hmc.iterations();
    let mut accepted_so_far = 0usize;
    let chain = hmc_run_with_progress(&hmc, &target.truth()?, &target, |iter, acc| {
        accepted_so_far += acc as usize;
        if (iter + 1) % 25 == 0 || iter + 1 == total {
            eprintln!("iteration {}/{total}  acceptance {:.3}", iter + 1, accepted_so_far as f64 / (iter + 1) as f64);
        }
    })?;
    let logits = target.logit_samples(&chain);
    let summary = summarize(logits.view())?;
    let mut out = Output::for_config(&cfg, "hmc", a.model.common.no_svg)?;
    let truth = prior.weights().to_vec();
    for (k, (m, s)) in summary.means.iter().zip(&summary.sds).enumerate() {
        out.metric(format!("w{k}_mean"), *m);
        out.metric(format!("w{k}_sd"), *s);
        out.metric(format!("w{k}_lower"), summary.lower[k]);
        out.metric(format!("w{k}_upper"), summary.upper[k]);
        out.metric(format!("w{k}_true"), truth[k]);
    }
    let max_dev = summary.means.iter().zip(&truth).map(|(m, t)| (m - t).abs()).fold(0.0, f64::max);
    out.metric("max_mean_deviation", max_dev);
    out.metric("truth_covered", summary.covers(&truth) as u8 as f64);
    out.metric("acceptance_rate", chain.acceptance_rate());
    out.metric("retained_samples", chain.samples.nrows() as f64);
    let weights: Vec<Vec<f64>> = logits.rows().into_iter().map(|l| weights_from_logits(l).to_vec()).collect();
    let path = out.path("weights.csv");
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..truth.len()).map(|k| format!("w{k}")))?;
    for row in &weights {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    out.write_json("summary.json", &summary)?;
    let idx: Vec<f64> = (0..weights.len()).map(|i| i as f64).collect();
    let traces: Vec<Vec<f64>> = (0..truth.len()).map(|k| weights.iter().map(|r| r[k]).collect()).collect();
    out.write_svg("weights.svg", || {
        let refs: Vec<(&[f64], &[f64])> = traces.iter().map(|t| (idx.as_slice(), t.as_slice())).collect();
        svg::lines("weight traces", &refs)
    })?;
    out.finish()
}

fn pr_cmd(a: &PrArgs) -> Result<()> {
    let pr = participation_ratio(&a.eigvals)?;
    println!("{pr:?}");
    let at_time = match (&a.rates, a.time) {
        (Some(g), Some(t)) => {
            let v = pr_trajectory(&a.eigvals, g, a.rho, t)?;
            println!("{v:?}");
            Some(v)
        }
        _ => None,
    };
    if let Some(dir) = &a.output_dir {
        let mut out = Output::new(dir, "pr", hex::encode(Sha256::digest(format!("{a:?}"))), 0, false)?;
        out.metric("participation_ratio", pr);
        if let Some(v) = at_time {
            out.metric("participation_ratio_at_time", v);
        }
        out.finish()?;
    }
    Ok(())
}

fn acf_cmd(a: &AcfArgs) -> Result<()> {
    let mut cfg = resolve_config(&a.model.common)?;
    if let Some(r) = a.reference {
        cfg.acf.reference = r;
    }
    if let Some(n) = a.n_trajectories {
        cfg.acf.n_trajectories = n;
    }
    cfg.validate()?;
    let model = load_model(&cfg, &a.model.model)?;
    let p = prepare_data(&cfg, Some(model.frame()))?;
    let held = holdout(&p)?.points();
    let n = cfg.acf.n_trajectories.min(held.nrows());
    let data = held.slice(ndarray::s![..n, ..]);
    let reference = match cfg.acf.reference {
        AcfReferenceKind::CleanSample => ResidualReference::CleanSample,
        AcfReferenceKind::Ideal => {
            let m = cfg.acf.n_reference.min(p.train.len());
            let refs = p.train.points().slice(ndarray::s![..m, ..]).to_owned();
            ResidualReference::Ideal(IdealDenoiser::new(refs, model.schedule().clone())?)
        }
    };
    let options = AcfOptions {
        solver: cfg.flow.solver,
        time_floor: cfg.flow.time_floor,
        max_lag: cfg.acf.max_lag,
        chunk_rows: cfg.flow.chunk_rows,
    };
    let report = residual_autocorrelation(&model, data, &model_disc(&cfg, &model)?, &reference, &options)?;
    let mut out = Output::for_config(&cfg, "residual-acf", a.model.common.no_svg)?;
    out.metric("n_trajectories", n as f64);
    out.metric("mean_abs_beyond_10", report.mean_abs_from(10).unwrap_or(f64::NAN));
    out.metric("max_abs_beyond_10", report.max_abs_from(10));
    #[derive(Serialize)]
    struct Row {
        lag: usize,
        lag_time: f64,
        value: f64,
    }
    out.write_rows(
        "acf.csv",
        report.lags.iter().zip(&report.lag_times).zip(&report.values).map(|((&lag, &lag_time), &value)| Row {
            lag,
            lag_time,
            value,
        }),
    )?;
    out.write_svg("acf.svg", || {
        svg::lines(&format!("residual autocorrelation ({})", report.reference), &[(&report.lag_times, &report.values)])
    })?;
    out.finish()
}

fn oracle_cmd(a: &OracleArgs) -> Result<()> {
    let mut out = Output::new(&a.output_dir, "oracle-check", String::new(), 0, false)?;
    #[derive(Serialize)]
    struct Row {
        name: &'static str,
        passed: bool,
        seconds: f64,
        detail: String,
    }
    let mut rows = Vec::new();
    for (name, result) in checks::run_all() {
        let row = match result {
            Ok(o) => Row { name, passed: o.passed, seconds: o.seconds, detail: o.detail },
            Err(e) => Row { name, passed: false, seconds: 0.0, detail: format!("error: {e}") },
        };
        println!("{} {name}: {}", if row.passed { "PASS" } else { "FAIL" }, row.detail);
        out.metric(format!("{name}_passed"), row.passed as u8 as f64);
        rows.push(row);
    }
    let failed = rows.iter().filter(|r| !r.passed).count();
    out.metric("failed", failed as f64);
    out.write_rows("checks.csv", rows)?;
    out.finish()?;
    if failed > 0 {
        return Err(Error::Degenerate(format!("{failed} analytic check(s) failed")));
    }
    Ok(())
}
