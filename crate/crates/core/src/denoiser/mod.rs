//! Preconditioned denoiser `D(x, t) = c_skip x + c_out F(c_in x; c_noise)`,
//! its denoising score-matching loss, and Adam training with an EMA copy.

mod checkpoint;
mod mlp;

pub use checkpoint::CHECKPOINT_MAGIC;
pub use mlp::{ForwardCache, LayerSlot, Mlp};

use ndarray::{Array1, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::datasets::{EigenFrame, PointCloud};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::schedule::InflationSchedule;

/// Per-dimension preconditioning factors at one time (whitened coordinates).
#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    pub t: f64,
    pub gamma: Array1<f64>,
    pub c_in: Array1<f64>,
    pub c_skip: Array1<f64>,
    pub c_out: Array1<f64>,
    pub lambda: Array1<f64>,
    pub c_noise: f64,
}

pub fn precondition(schedule: &InflationSchedule, t: f64, t_min: f64, m: f64) -> Result<Preconditioner> {
    if t < t_min {
        return Err(Error::TimeOutOfRange { t, lo: t_min, hi: schedule.t_max() });
    }
    let gamma = schedule.gamma(t)?;
    if let Some(j) = gamma.iter().position(|&g| g <= 0.0) {
        return Err(Error::Degenerate(format!("noise variance of dimension {j} is zero at t = {t}")));
    }
    let c_in = gamma.mapv(|g| (1.0 + g).sqrt().recip());
    let c_skip = gamma.mapv(|g| (1.0 + g).recip());
    let c_out = gamma.mapv(|g| (g / (1.0 + g)).sqrt());
    let lambda = c_out.mapv(f64::recip);
    Ok(Preconditioner { t, gamma, c_in, c_skip, c_out, lambda, c_noise: (m - 1.0) * t })
}

/// Distribution of training times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeSampling {
    /// `t ~ U(t_min, t_max)`.
    Uniform,
    /// `log t ~ U(log t_lo, log t_max)`. Concentrates samples at small times,
    /// where the whitened denoiser differs from the Gaussian one.
    LogUniform { t_lo: f64 },
}

impl TimeSampling {
    fn sample(self, rng: &mut RngStream, t_min: f64, t_max: f64) -> f64 {
        match self {
            TimeSampling::Uniform => rng.uniform_range(t_min, t_max),
            TimeSampling::LogUniform { t_lo } => rng.uniform_range(t_lo.max(t_min).ln(), t_max.ln()).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// EMA half-life measured in training samples.
    pub ema_half_life: f64,
    pub t_min: f64,
    pub time_sampling: TimeSampling,
    /// Scale `M` in `c_noise = (M - 1) t`.
    pub c_noise_scale: f64,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub seed: u64,
    /// Loss-curve resolution: one averaged entry per this many steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            batch_size: 512,
            steps: 20_000,
            ema_half_life: 5e5,
            t_min: 1e-7,
            time_sampling: TimeSampling::LogUniform { t_lo: 1e-3 },
            c_noise_scale: 1000.0,
            hidden: vec![128, 128, 128],
            embed_dim: 64,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    /// Full-scale settings: batch 8192 at learning rate 1e-5, uniform times.
    pub fn full_scale() -> Self {
        Self { learning_rate: 1e-5, batch_size: 8192, time_sampling: TimeSampling::Uniform, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive =
            [("learning_rate", self.learning_rate), ("ema_half_life", self.ema_half_life), ("t_min", self.t_min)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.c_noise_scale.is_finite() && self.c_noise_scale > 1.0) {
            return Err(Error::Config(format!("c_noise_scale must exceed 1, got {}", self.c_noise_scale)));
        }
        if self.batch_size == 0 || self.steps == 0 || self.log_every == 0 {
            return Err(Error::Config("batch_size, steps, and log_every must be positive".into()));
        }
        if let TimeSampling::LogUniform { t_lo } = self.time_sampling {
            if !(t_lo.is_finite() && t_lo > 0.0) {
                return Err(Error::Config(format!("time_sampling.t_lo must be positive, got {t_lo}")));
            }
        }
        if !self.embed_dim.is_multiple_of(2) {
            return Err(Error::Config("embed_dim must be even".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub steps_completed: usize,
    pub samples_seen: usize,
    pub loss_curve: Vec<LossPoint>,
}

/// Network inputs, embedding scalars, and regression targets for clean rows
/// `y` noised at per-row times `t` with standard-normal draws `z`.
///
/// With `n = sqrt(gamma) z`, the target `(y - c_skip (y + n)) / c_out`
/// simplifies to `(sqrt(gamma) y - z) / sqrt(1 + gamma)`.
pub fn training_pairs(
    schedule: &InflationSchedule,
    c_noise_scale: f64,
    y: ArrayView2<f64>,
    t: &[f64],
    z: ArrayView2<f64>,
) -> Result<(Array2<f64>, Vec<f64>, Array2<f64>)> {
    let (b, d) = y.dim();
    if d != schedule.dim() {
        return Err(Error::DimensionMismatch { expected: schedule.dim(), got: d });
    }
    if t.len() != b || z.dim() != (b, d) {
        return Err(Error::DimensionMismatch { expected: b, got: t.len().min(z.nrows()) });
    }
    let mut input = Array2::zeros((b, d));
    let mut target = Array2::zeros((b, d));
    for i in 0..b {
        let gamma = schedule.gamma(t[i])?;
        for j in 0..d {
            let g = gamma[j];
            if g <= 0.0 {
                return Err(Error::Degenerate(format!("noise variance of dimension {j} is zero at t = {}", t[i])));
            }
            let root = (1.0 + g).sqrt();
            let sg = g.sqrt();
            input[[i, j]] = (y[[i, j]] + sg * z[[i, j]]) / root;
            target[[i, j]] = (sg * y[[i, j]] - z[[i, j]]) / root;
        }
    }
    let c_noise = t.iter().map(|&ti| (c_noise_scale - 1.0) * ti).collect();
    Ok((input, c_noise, target))
}

/// Mean per-sample squared error and its parameter gradient for fixed
/// times and noise draws.
pub fn loss_and_grad_fixed(
    net: &Mlp,
    params: &[f64],
    schedule: &InflationSchedule,
    c_noise_scale: f64,
    y: ArrayView2<f64>,
    t: &[f64],
    z: ArrayView2<f64>,
) -> Result<(f64, Vec<f64>)> {
    if y.nrows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let (input, c_noise, target) = training_pairs(schedule, c_noise_scale, y, t, z)?;
    let cache = net.forward_cached(params, input.view(), &c_noise)?;
    let resid = &cache.output() - &target;
    let b = y.nrows() as f64;
    let loss = resid.iter().map(|r| r * r).sum::<f64>() / b;
    let d_out = resid.mapv(|r| 2.0 * r / b);
    let mut grad = vec![0.0; params.len()];
    net.backward(params, &cache, d_out.view(), Some(&mut grad));
    Ok((loss, grad))
}

/// Loss and gradient with `t` drawn per `config.time_sampling` and Gaussian noise drawn from `rng`.
pub fn loss_and_grad(
    net: &Mlp,
    params: &[f64],
    batch: ArrayView2<f64>,
    rng: &mut RngStream,
    schedule: &InflationSchedule,
    config: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let b = batch.nrows();
    let t: Vec<f64> = (0..b).map(|_| config.time_sampling.sample(rng, config.t_min, schedule.t_max())).collect();
    let z = rng.normal_matrix(b, batch.ncols());
    loss_and_grad_fixed(net, params, schedule, config.c_noise_scale, batch, &t, z.view())
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.step);
        let bc2 = 1.0 - Self::BETA2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + Self::EPS);
        }
    }
}

pub fn train(
    data: &PointCloud,
    frame: &EigenFrame,
    schedule: &InflationSchedule,
    config: &TrainConfig,
) -> Result<TrainedDenoiser> {
    train_with_progress(data, frame, schedule, config, |_| {})
}

/// As [`train`], calling `on_log` with each averaged loss-curve entry.
pub fn train_with_progress(
    data: &PointCloud,
    frame: &EigenFrame,
    schedule: &InflationSchedule,
    config: &TrainConfig,
    mut on_log: impl FnMut(&LossPoint),
) -> Result<TrainedDenoiser> {
    config.validate()?;
    let d = schedule.dim();
    if data.dim() != d || frame.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: data.dim() });
    }
    if config.t_min >= schedule.t_max() {
        return Err(Error::Config("t_min must be below t_max".into()));
    }
    if let TimeSampling::LogUniform { t_lo } = config.time_sampling {
        if t_lo >= schedule.t_max() {
            return Err(Error::Config("time_sampling.t_lo must be below t_max".into()));
        }
    }
    if let Some(j) = schedule.g().iter().position(|&g| g <= 0.0) {
        return Err(Error::Config(format!("dimension {j} has rate 0; its noise-free target cannot be learned")));
    }
    let net = Mlp::new(d, config.embed_dim, &config.hidden)?;
    let root = RngStream::new(config.seed);
    let mut params = net.init(&mut root.substream(0));
    let mut rng = root.substream(1);
    let mut ema = params.clone();
    let mut adam = Adam::new(params.len());
    let decay = 0.5_f64.powf(config.batch_size as f64 / config.ema_half_life);
    let pts = data.points();
    let n = data.len();
    let mut batch = Array2::zeros((config.batch_size, d));
    let mut meta = TrainingMeta::default();
    let mut window = 0.0;
    for step in 0..config.steps {
        for mut row in batch.rows_mut() {
            row.assign(&pts.row(rng.below(n)));
        }
        let (loss, grad) = loss_and_grad(&net, &params, batch.view(), &mut rng, schedule, config)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        adam.update(&mut params, &grad, config.learning_rate);
        for (e, p) in ema.iter_mut().zip(&params) {
            *e = decay * *e + (1.0 - decay) * p;
        }
        window += loss;
        let done = step + 1;
        if done % config.log_every == 0 || done == config.steps {
            let span = (done - 1) % config.log_every + 1;
            let point = LossPoint { step: done, loss: window / span as f64 };
            on_log(&point);
            meta.loss_curve.push(point);
            window = 0.0;
        }
    }
    meta.steps_completed = config.steps;
    meta.samples_seen = config.steps * config.batch_size;
    TrainedDenoiser::from_parts(net, params, ema, schedule.clone(), frame.clone(), config.clone(), meta)
}

/// Which parameter copy evaluates the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weights {
    Raw,
    Ema,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedDenoiser {
    net: Mlp,
    params: Vec<f64>,
    ema: Vec<f64>,
    schedule: InflationSchedule,
    frame: EigenFrame,
    config: TrainConfig,
    meta: TrainingMeta,
}

impl TrainedDenoiser {
    pub fn from_parts(
        net: Mlp,
        params: Vec<f64>,
        ema: Vec<f64>,
        schedule: InflationSchedule,
        frame: EigenFrame,
        config: TrainConfig,
        meta: TrainingMeta,
    ) -> Result<Self> {
        if params.len() != net.param_count() {
            return Err(Error::DimensionMismatch { expected: net.param_count(), got: params.len() });
        }
        if ema.len() != params.len() {
            return Err(Error::DimensionMismatch { expected: params.len(), got: ema.len() });
        }
        if schedule.dim() != net.dim() || frame.dim() != net.dim() {
            return Err(Error::DimensionMismatch { expected: net.dim(), got: schedule.dim() });
        }
        Ok(Self { net, params, ema, schedule, frame, config, meta })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn ema_params(&self) -> &[f64] {
        &self.ema
    }

    pub fn schedule(&self) -> &InflationSchedule {
        &self.schedule
    }

    pub fn frame(&self) -> &EigenFrame {
        &self.frame
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    pub fn dim(&self) -> usize {
        self.net.dim()
    }

    pub fn t_min(&self) -> f64 {
        self.config.t_min
    }

    pub fn precondition(&self, t: f64) -> Result<Preconditioner> {
        precondition(&self.schedule, t, self.config.t_min, self.config.c_noise_scale)
    }

    fn weights(&self, which: Weights) -> &[f64] {
        match which {
            Weights::Raw => &self.params,
            Weights::Ema => &self.ema,
        }
    }

    /// Denoised estimate for each row of `x` at time `t`, using the EMA weights.
    pub fn denoise(&self, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        self.denoise_with(Weights::Ema, x, t)
    }

    pub fn denoise_with(&self, which: Weights, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        let pc = self.precondition(t)?;
        let input = &x * &pc.c_in;
        let c_noise = vec![pc.c_noise; x.nrows()];
        let f = self.net.forward(self.weights(which), input.view(), &c_noise)?;
        let mut out = &x * &pc.c_skip;
        Zip::from(&mut out).and(&f).and_broadcast(&pc.c_out).for_each(|o, &fv, &co| *o += co * fv);
        Ok(out)
    }

    /// `(dD/dx)^T cotangent` for each row, using the EMA weights.
    pub fn input_vjp(&self, x: ArrayView2<f64>, t: f64, cotangent: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.input_vjp_with(Weights::Ema, x, t, cotangent)
    }

    pub fn input_vjp_with(
        &self,
        which: Weights,
        x: ArrayView2<f64>,
        t: f64,
        cotangent: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        if cotangent.dim() != x.dim() {
            return Err(Error::DimensionMismatch { expected: x.nrows(), got: cotangent.nrows() });
        }
        let pc = self.precondition(t)?;
        let input = &x * &pc.c_in;
        let c_noise = vec![pc.c_noise; x.nrows()];
        let params = self.weights(which);
        let cache = self.net.forward_cached(params, input.view(), &c_noise)?;
        let d_f = &cotangent * &pc.c_out;
        let d_input = self.net.backward(params, &cache, d_f.view(), None);
        Ok(&cotangent * &pc.c_skip + d_input * &pc.c_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::EigenFrame;
    use crate::schedule::{build_g, InflationSchedule};
    use approx::assert_relative_eq;
    use ndarray::array;

    fn tiny(embed: usize, hidden: &[usize], seed: u64) -> (Mlp, Vec<f64>) {
        let net = Mlp::new(2, embed, hidden).unwrap();
        let params = net.init(&mut RngStream::new(seed));
        (net, params)
    }

    #[test]
    fn preconditioner_closed_forms() {
        // gamma = 3 at rho g t = ln 4
        let s = InflationSchedule::prp(1, 2.0, 7.01).unwrap();
        let p = precondition(&s, 4.0_f64.ln() / 2.0, 1e-7, 1000.0).unwrap();
        assert_relative_eq!(p.gamma[0], 3.0, max_relative = 1e-14);
        assert_relative_eq!(p.c_in[0], 0.5, max_relative = 1e-14);
        assert_relative_eq!(p.c_skip[0], 0.25, max_relative = 1e-14);
        assert_relative_eq!(p.c_out[0], 0.8660254037844386, max_relative = 1e-14);
        assert_relative_eq!(p.lambda[0], 1.1547005383792517, max_relative = 1e-14);
        assert_eq!(precondition(&s, 0.5, 1e-7, 1000.0).unwrap().c_noise, 499.5);
    }

    #[test]
    fn preconditioner_identities_on_grid() {
        let s = InflationSchedule::prr(build_g(3, 2, 1.02).unwrap(), 1.0, 15.01).unwrap();
        for i in 0..100 {
            let t = 1e-7 + (15.01 - 1e-7) * i as f64 / 99.0;
            let p = precondition(&s, t, 1e-7, 1000.0).unwrap();
            for j in 0..3 {
                assert!((p.c_in[j].powi(2) * (1.0 + p.gamma[j]) - 1.0).abs() <= 1e-12);
                assert!((p.lambda[j] * p.c_out[j] - 1.0).abs() <= 1e-12);
                assert!((p.c_skip[j] + p.c_out[j].powi(2) - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn preconditioner_rejects_small_times_and_zero_rates() {
        let s = InflationSchedule::prp(2, 2.0, 7.01).unwrap();
        assert!(matches!(precondition(&s, 1e-8, 1e-7, 1000.0), Err(Error::TimeOutOfRange { .. })));
        let flat = InflationSchedule::prr(vec![2.0, 0.0], 1.0, 11.01).unwrap();
        assert!(matches!(precondition(&flat, 1.0, 1e-7, 1000.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn target_has_unit_moments_under_gaussian_data() {
        let s = InflationSchedule::prr(vec![1.15, 0.85], 1.0, 11.01).unwrap();
        let mut rng = RngStream::new(31);
        let n = 100_000;
        let y = rng.normal_matrix(n, 2);
        let z = rng.normal_matrix(n, 2);
        let t: Vec<f64> = (0..n).map(|_| rng.uniform_range(1e-7, 11.01)).collect();
        let (_, _, target) = training_pairs(&s, 1000.0, y.view(), &t, z.view()).unwrap();
        for col in target.columns() {
            let m = col.mean().unwrap();
            let v = col.var(0.0);
            assert!(m.abs() < 0.03, "mean {m}");
            assert!((v - 1.0).abs() < 0.03, "var {v}");
        }
    }

    fn fd_check(net: &Mlp, params: &[f64], s: &InflationSchedule, y: &Array2<f64>, t: &[f64], z: &Array2<f64>) {
        let (_, grad) = loss_and_grad_fixed(net, params, s, 1000.0, y.view(), t, z.view()).unwrap();
        let h = 1e-5;
        let mut p = params.to_vec();
        for k in 0..params.len() {
            p[k] = params[k] + h;
            let (up, _) = loss_and_grad_fixed(net, &p, s, 1000.0, y.view(), t, z.view()).unwrap();
            p[k] = params[k] - h;
            let (dn, _) = loss_and_grad_fixed(net, &p, s, 1000.0, y.view(), t, z.view()).unwrap();
            p[k] = params[k];
            let fd = (up - dn) / (2.0 * h);
            let err = (fd - grad[k]).abs() / grad[k].abs().max(fd.abs()).max(1e-6);
            assert!(err <= 1e-4, "param {k}: analytic {} vs fd {fd}", grad[k]);
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let s = InflationSchedule::prp(2, 2.0, 7.01).unwrap();
        let mut rng = RngStream::new(8);
        let y = rng.normal_matrix(4, 2);
        let z = rng.normal_matrix(4, 2);
        let t = [0.01, 0.3, 1.2, 3.0];
        let (net, params) = tiny(0, &[8], 2);
        assert_eq!(net.widths(), &[2, 8, 2]);
        fd_check(&net, &params, &s, &y, &t, &z);
        let (net, params) = tiny(4, &[6, 5], 3);
        fd_check(&net, &params, &s, &y, &t, &z);
    }

    #[test]
    fn one_hidden_unit_by_hand() {
        // d = 1, no embedding, w1 = 0.5, b1 = 0.1, w2 = -0.3, b2 = 0.2
        // y = 0.8, t = 0.25, z = 0.6, rho = 2: gamma = e^0.5 - 1
        let net = Mlp::new(1, 0, &[1]).unwrap();
        let params = [0.5, 0.1, -0.3, 0.2];
        let s = InflationSchedule::prp(1, 2.0, 7.01).unwrap();
        let (loss, grad) =
            loss_and_grad_fixed(&net, &params, &s, 1000.0, array![[0.8]].view(), &[0.25], array![[0.6]].view())
                .unwrap();
        // u = (0.8 + 0.6 sqrt(gamma)) / sqrt(1 + gamma)         = 0.99940343...
        // h = 0.5 u + 0.1, a = h sigmoid(h), F = -0.3 a + 0.2
        // target = (0.8 sqrt(gamma) - 0.6) / sqrt(1 + gamma)    = 0.03453661...
        assert_relative_eq!(loss, 0.002432000128170476, max_relative = 1e-12);
        let want = [-0.023148665929043927, -0.02316248389165949, 0.03818585987865216, 0.09863062664650318];
        for (g, w) in grad.iter().zip(want) {
            assert_relative_eq!(*g, w, max_relative = 1e-12);
        }
    }

    fn model_with(params: Vec<f64>, net: Mlp, s: InflationSchedule) -> TrainedDenoiser {
        let d = net.dim();
        TrainedDenoiser::from_parts(
            net,
            params.clone(),
            params,
            s,
            EigenFrame::identity(d),
            TrainConfig::default(),
            TrainingMeta::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_parameters_give_skip_path() {
        let net = Mlp::new(2, 8, &[16]).unwrap();
        let n = net.param_count();
        let s = InflationSchedule::prp(2, 2.0, 7.01).unwrap();
        let model = model_with(vec![0.0; n], net, s);
        let x = array![[1.0, -2.0], [0.3, 0.7]];
        let t = 0.4;
        let pc = model.precondition(t).unwrap();
        let d = model.denoise(x.view(), t).unwrap();
        assert_eq!(d, &x * &pc.c_skip);
        let cot = array![[0.5, 2.0], [-1.0, 0.25]];
        assert_eq!(model.input_vjp(x.view(), t, cot.view()).unwrap(), &cot * &pc.c_skip);
        assert!(model.input_vjp(x.view(), t, Array2::zeros((2, 2)).view()).unwrap().iter().all(|&v| v == 0.0));
        assert!(model.denoise(x.view(), 1e-9).is_err());
    }

    #[test]
    fn input_vjp_matches_finite_differences() {
        let (net, params) = tiny(8, &[16, 16], 12);
        let s = InflationSchedule::prr(vec![1.15, 0.85], 1.0, 11.01).unwrap();
        let model = model_with(params, net, s);
        let mut rng = RngStream::new(5);
        let x = rng.normal_matrix(3, 2);
        let cot = rng.normal_matrix(3, 2);
        let dir = rng.normal_matrix(3, 2);
        for &t in &[0.05, 1.0, 6.0] {
            let vjp = model.input_vjp(x.view(), t, cot.view()).unwrap();
            let h = 1e-5;
            let up = model.denoise((&x + &(&dir * h)).view(), t).unwrap();
            let dn = model.denoise((&x - &(&dir * h)).view(), t).unwrap();
            for i in 0..3 {
                let fd: f64 = (0..2).map(|j| cot[[i, j]] * (up[[i, j]] - dn[[i, j]]) / (2.0 * h)).sum();
                let an: f64 = (0..2).map(|j| vjp[[i, j]] * dir[[i, j]]).sum();
                assert!((fd - an).abs() / an.abs().max(1e-6) <= 1e-4, "t {t} row {i}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let mut rng = RngStream::new(9);
        let data = PointCloud::new("gauss", rng.normal_matrix(2000, 2)).unwrap();
        let s = InflationSchedule::prp(2, 2.0, 7.01).unwrap();
        let cfg = TrainConfig { steps: 300, batch_size: 64, hidden: vec![32, 32], embed_dim: 16, ..Default::default() };
        let a = train(&data, &EigenFrame::identity(2), &s, &cfg).unwrap();
        let b = train(&data, &EigenFrame::identity(2), &s, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.ema_params(), b.ema_params());
        assert_eq!(a.meta().loss_curve.len(), 3);
        let net = Mlp::new(2, 16, &[32, 32]).unwrap();
        let init = net.init(&mut RngStream::new(cfg.seed).substream(0));
        let x = rng.normal_matrix(512, 2);
        let z = rng.normal_matrix(512, 2);
        let t: Vec<f64> = (0..512).map(|i| 7.01 * (i as f64 + 0.5) / 512.0).collect();
        let eval = |p: &[f64]| loss_and_grad_fixed(&net, p, &s, cfg.c_noise_scale, x.view(), &t, z.view()).unwrap().0;
        let (before, after) = (eval(&init), eval(a.params()));
        assert!(after < before, "{before} -> {after}");
    }

    #[test]
    fn training_rejects_zero_rates_and_bad_config() {
        let data = PointCloud::new("g", RngStream::new(1).normal_matrix(10, 2)).unwrap();
        let flat = InflationSchedule::prr(vec![2.0, 0.0], 1.0, 11.01).unwrap();
        assert!(train(&data, &EigenFrame::identity(2), &flat, &TrainConfig::default()).is_err());
        let s = InflationSchedule::prp(2, 2.0, 7.01).unwrap();
        let bad = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(matches!(train(&data, &EigenFrame::identity(2), &s, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn log_uniform_times_span_the_horizon_geometrically() {
        let mut rng = RngStream::new(4);
        let sampling = TimeSampling::LogUniform { t_lo: 1e-3 };
        let mut t: Vec<f64> = (0..20_000).map(|_| sampling.sample(&mut rng, 1e-7, 7.01)).collect();
        assert!(t.iter().all(|&v| (1e-3..=7.01).contains(&v)));
        t.sort_by(f64::total_cmp);
        let median = t[t.len() / 2];
        assert!((median / (1e-3_f64 * 7.01).sqrt() - 1.0).abs() < 0.1, "median {median}");
        let bad = TrainConfig { time_sampling: TimeSampling::LogUniform { t_lo: 0.0 }, ..Default::default() };
        assert!(bad.validate().is_err());
        let cfg: TrainConfig = toml::from_str("time_sampling = { kind = \"uniform\" }").unwrap();
        assert_eq!(cfg.time_sampling, TimeSampling::Uniform);
    }

    #[test]
    fn empty_batch_rejected() {
        let (net, params) = tiny(0, &[4], 1);
        let s = InflationSchedule::prp(2, 2.0, 7.01).unwrap();
        let e = Array2::<f64>::zeros((0, 2));
        assert!(loss_and_grad_fixed(&net, &params, &s, 1000.0, e.view(), &[], e.view()).is_err());
    }
}
