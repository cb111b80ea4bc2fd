//! Posterior sampling over Gaussian-mixture weights and latents when the
//! observations are generated by the flow, using Hamiltonian Monte Carlo
//! with gradients taken through the unrolled integrator.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::pfode::UnrolledFlow;
use crate::rng::RngStream;
use crate::schedule::ScheduleKind;

/// Variance of the isotropic noise added to generated observations.
pub const OBSERVATION_NOISE_VAR: f64 = 1e-2;

/// Consecutive rejections after which a run is abandoned.
pub const MAX_CONSECUTIVE_REJECTIONS: usize = 100;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mixture of axis-aligned Gaussians over latent points.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPrior {
    means: Array2<f64>,
    covs: Array2<f64>,
    weights: Array1<f64>,
}

impl GmmPrior {
    /// `means` and `covs` are `K x d`; `weights` lie on the simplex.
    pub fn new(means: Array2<f64>, covs: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let k = weights.len();
        if k < 2 {
            return Err(Error::InvalidArgument("a mixture needs at least two components".into()));
        }
        if means.nrows() != k || covs.dim() != means.dim() {
            return Err(Error::DimensionMismatch { expected: k, got: means.nrows().min(covs.nrows()) });
        }
        ensure_finite(means.iter(), || "mixture means".into())?;
        if covs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::InvalidArgument("mixture variances must be positive".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (weights.sum() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("mixture weights must be nonnegative and sum to 1".into()));
        }
        Ok(Self { means, covs, weights })
    }

    /// Ground-truth mixtures for the 2D circles experiments.
    pub fn calibration(kind: ScheduleKind) -> Self {
        let means = ndarray::array![[0.0, 0.0], [-5e-2, 0.0], [5e-2, 0.0]];
        let covs = match kind {
            ScheduleKind::Prp => ndarray::array![[0.5625, 0.5625], [1e-2, 1.0], [1.0, 1e-2]],
            ScheduleKind::Prr => ndarray::array![[0.5625, 5.625e-3], [1e-2, 1e-2], [1.0, 1e-4]],
        };
        Self::new(means, covs, ndarray::array![0.5, 0.25, 0.25]).expect("valid mixture")
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn means(&self) -> ArrayView2<'_, f64> {
        self.means.view()
    }

    pub fn covs(&self) -> ArrayView2<'_, f64> {
        self.covs.view()
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn with_weights(&self, weights: Array1<f64>) -> Result<Self> {
        Self::new(self.means.clone(), self.covs.clone(), weights)
    }

    /// `n` draws and their component labels.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> (Array2<f64>, Vec<usize>) {
        let d = self.dim();
        let mut z = Array2::zeros((n, d));
        let mut labels = Vec::with_capacity(n);
        for mut row in z.rows_mut() {
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut comp = self.components() - 1;
            for (i, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    comp = i;
                    break;
                }
            }
            for j in 0..d {
                row[j] = self.means[[comp, j]] + self.covs[[comp, j]].sqrt() * rng.normal();
            }
            labels.push(comp);
        }
        (z, labels)
    }

    /// `sum_j log sum_i w_i N(z_j; mu_i, Sigma_i)` with its gradients in `z`
    /// and in `log w`.
    fn log_density_terms(&self, z: ArrayView2<f64>, log_w: &[f64]) -> (f64, Array2<f64>, Vec<f64>) {
        let (k, d) = (self.components(), self.dim());
        let log_norm: Vec<f64> =
            (0..k).map(|i| -0.5 * (d as f64 * LN_2PI + self.covs.row(i).iter().map(|c| c.ln()).sum::<f64>())).collect();
        let mut total = 0.0;
        let mut grad_z = Array2::zeros(z.dim());
        let mut grad_log_w = vec![0.0; k];
        let mut terms = vec![0.0; k];
        for (j, zj) in z.rows().into_iter().enumerate() {
            for i in 0..k {
                let quad: f64 = (0..d).map(|c| (zj[c] - self.means[[i, c]]).powi(2) / self.covs[[i, c]]).sum();
                terms[i] = log_w[i] + log_norm[i] - 0.5 * quad;
            }
            let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
            total += max + sum.ln();
            for i in 0..k {
                let r = (terms[i] - max).exp() / sum;
                grad_log_w[i] += r;
                for c in 0..d {
                    grad_z[[j, c]] -= r * (zj[c] - self.means[[i, c]]) / self.covs[[i, c]];
                }
            }
        }
        (total, grad_z, grad_log_w)
    }
}

/// Weights from free logits: `softmax([0, logits])`.
pub fn weights_from_logits(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(0.0_f64, f64::max);
    let mut w = Array1::zeros(logits.len() + 1);
    w[0] = (-max).exp();
    for (k, l) in logits.iter().enumerate() {
        w[k + 1] = (l - max).exp();
    }
    let total = w.sum();
    w / total
}

/// Inverse of [`weights_from_logits`]; weights must be positive.
pub fn logits_from_weights(weights: ArrayView1<f64>) -> Result<Array1<f64>> {
    if weights.len() < 2 || weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidArgument("weights must be positive with at least two entries".into()));
    }
    Ok(weights.slice(s![1..]).mapv(|w| (w / weights[0]).ln()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub x_obs: Array2<f64>,
    pub noise_var: f64,
    pub z_true: Array2<f64>,
    pub labels: Vec<usize>,
    pub w_true: Array1<f64>,
}

/// Draw latents from `prior`, push them through the generative map `flow`,
/// and add isotropic noise of variance `noise_var`.
pub fn synthesize_observations(
    prior: &GmmPrior,
    n: usize,
    noise_var: f64,
    flow: &UnrolledFlow,
    rng: &mut RngStream,
) -> Result<ObservationSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one observation".into()));
    }
    if !(noise_var.is_finite() && noise_var >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {noise_var}")));
    }
    let (z, labels) = prior.sample(n, &mut rng.substream(0));
    let clean = flow.forward(z.view())?.output().clone();
    let mut noise = rng.substream(1);
    let sd = noise_var.sqrt();
    let x_obs = clean.mapv(|v| v + sd * noise.normal());
    Ok(ObservationSet { x_obs, noise_var, z_true: z, labels, w_true: prior.weights.clone() })
}

/// Log posterior over latents `z` and free weight logits, up to a constant:
/// Gaussian likelihood of the observations around `G(z)`, mixture prior on
/// `z`, flat Dirichlet prior on the weights, and the log-Jacobian of the
/// softmax map. Returns the value and gradients in `z` and the logits.
pub fn log_posterior_and_grad(
    z: ArrayView2<f64>,
    logits: ArrayView1<f64>,
    obs: &ObservationSet,
    prior: &GmmPrior,
    flow: &UnrolledFlow,
) -> Result<(f64, Array2<f64>, Array1<f64>)> {
    if z.dim() != obs.x_obs.dim() {
        return Err(Error::DimensionMismatch { expected: obs.x_obs.len(), got: z.len() });
    }
    if logits.len() + 1 != prior.components() {
        return Err(Error::DimensionMismatch { expected: prior.components() - 1, got: logits.len() });
    }
    if !(obs.noise_var > 0.0) {
        return Err(Error::InvalidArgument("posterior needs positive observation noise".into()));
    }
    ensure_finite(z.iter().chain(logits.iter()), || "sampler state".into())?;
    let tape = flow.forward(z)?;
    let resid = &obs.x_obs - tape.output();
    let n_entries = resid.len() as f64;
    let log_lik = -0.5 * resid.iter().map(|r| r * r).sum::<f64>() / obs.noise_var
        - 0.5 * n_entries * (LN_2PI + obs.noise_var.ln());
    let grad_lik = flow.backward(&tape, (&resid / obs.noise_var).view())?;

    let w = weights_from_logits(logits);
    let log_w: Vec<f64> = w.iter().map(|v| v.ln()).collect();
    let (log_prior, grad_prior, mut a) = prior.log_density_terms(z, &log_w);
    // log |d w / d logits| = sum_i log w_i; the flat Dirichlet is constant.
    let log_jac: f64 = log_w.iter().sum();
    for ai in &mut a {
        *ai += 1.0;
    }
    let a_total: f64 = a.iter().sum();
    let grad_logits = Array1::from_shape_fn(logits.len(), |k| a[k + 1] - w[k + 1] * a_total);

    let value = log_lik + log_prior + log_jac;
    if !value.is_finite() {
        return Err(Error::NonFinite("log posterior".into()));
    }
    Ok((value, grad_lik + grad_prior, grad_logits))
}

/// Differentiable log density over a flat parameter vector.
pub trait HmcTarget {
    fn dim(&self) -> usize;
    fn log_prob_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// The flow-based mixture posterior with state `[z (row-major), logits]`.
pub struct GmmPosterior<'a> {
    pub obs: &'a ObservationSet,
    pub prior: &'a GmmPrior,
    pub flow: &'a UnrolledFlow<'a>,
}

impl GmmPosterior<'_> {
    pub fn pack(z: ArrayView2<f64>, logits: ArrayView1<f64>) -> Vec<f64> {
        z.iter().chain(logits.iter()).copied().collect()
    }

    /// State at the ground-truth latents and weights.
    pub fn truth(&self) -> Result<Vec<f64>> {
        Ok(Self::pack(self.obs.z_true.view(), logits_from_weights(self.obs.w_true.view())?.view()))
    }

    fn split<'t>(&self, theta: &'t [f64]) -> Result<(ArrayView2<'t, f64>, ArrayView1<'t, f64>)> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: theta.len() });
        }
        let nz = self.obs.x_obs.len();
        let z = ArrayView2::from_shape(self.obs.x_obs.dim(), &theta[..nz]).expect("length checked");
        Ok((z, ArrayView1::from(&theta[nz..])))
    }

    /// Logit columns of a chain's samples.
    pub fn logit_samples(&self, chain: &Chain) -> Array2<f64> {
        chain.samples.slice(s![.., self.obs.x_obs.len()..]).to_owned()
    }
}

impl HmcTarget for GmmPosterior<'_> {
    fn dim(&self) -> usize {
        self.obs.x_obs.len() + self.prior.components() - 1
    }

    fn log_prob_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (z, logits) = self.split(theta)?;
        let (v, gz, gl) = log_posterior_and_grad(z, logits, self.obs, self.prior, self.flow)?;
        Ok((v, gz.iter().chain(gl.iter()).copied().collect()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmcConfig {
    pub leapfrog_steps: usize,
    pub step_size: f64,
    /// Retained samples after burn-in and thinning.
    pub samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self { leapfrog_steps: 15, step_size: 1e-2, samples: 300, burn_in: 500, thin: 5, seed: 0 }
    }
}

impl HmcConfig {
    pub fn for_schedule(kind: ScheduleKind) -> Self {
        let step_size = match kind {
            ScheduleKind::Prp => 1e-2,
            ScheduleKind::Prr => 1e-3,
        };
        Self { step_size, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.leapfrog_steps == 0 {
            return Err(Error::Config("leapfrog_steps must be at least 1".into()));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::Config(format!("step_size must be positive, got {}", self.step_size)));
        }
        if self.samples == 0 || self.thin == 0 {
            return Err(Error::Config("samples and thin must be positive".into()));
        }
        Ok(())
    }

    pub fn iterations(&self) -> usize {
        self.burn_in + self.samples * self.thin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    /// Retained states, one per row.
    pub samples: Array2<f64>,
    pub proposals: usize,
    pub accepted: usize,
    /// `H(end) - H(start)` of every proposal (infinite when the trajectory failed).
    pub energy_errors: Vec<f64>,
}

impl Chain {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

/// Phase-space point reached by a leapfrog trajectory.
pub struct LeapfrogEnd {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub log_prob: f64,
    pub grad: Vec<f64>,
}

/// `steps` leapfrog steps from `(q, p)` given the gradient at `q`.
pub fn leapfrog(
    target: &dyn HmcTarget,
    q: &[f64],
    p: &[f64],
    grad: &[f64],
    step: f64,
    steps: usize,
) -> Result<LeapfrogEnd> {
    let mut q = q.to_vec();
    let mut p: Vec<f64> = p.iter().zip(grad).map(|(pi, g)| pi + 0.5 * step * g).collect();
    let mut log_prob = f64::NAN;
    let mut grad = grad.to_vec();
    for l in 0..steps {
        for (qi, pi) in q.iter_mut().zip(&p) {
            *qi += step * pi;
        }
        (log_prob, grad) = target.log_prob_and_grad(&q)?;
        let scale = if l + 1 == steps { 0.5 } else { 1.0 };
        for (pi, g) in p.iter_mut().zip(&grad) {
            *pi += scale * step * g;
        }
    }
    Ok(LeapfrogEnd { q, p, log_prob, grad })
}

fn kinetic(p: &[f64]) -> f64 {
    0.5 * p.iter().map(|v| v * v).sum::<f64>()
}

pub fn hmc_run(config: &HmcConfig, init: &[f64], target: &dyn HmcTarget) -> Result<Chain> {
    hmc_run_with_progress(config, init, target, |_, _| {})
}

/// HMC with standard-normal momenta; `on_iter(iteration, accepted)` runs
/// after every proposal.
pub fn hmc_run_with_progress(
    config: &HmcConfig,
    init: &[f64],
    target: &dyn HmcTarget,
    mut on_iter: impl FnMut(usize, bool),
) -> Result<Chain> {
    config.validate()?;
    if init.len() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), got: init.len() });
    }
    let mut rng = RngStream::new(config.seed);
    let mut q = init.to_vec();
    let (mut log_prob, mut grad) = target.log_prob_and_grad(&q)?;
    let mut rows: Vec<f64> = Vec::with_capacity(config.samples * q.len());
    let (mut accepted, mut streak) = (0, 0);
    let mut energy_errors = Vec::with_capacity(config.iterations());
    for iter in 0..config.iterations() {
        let p: Vec<f64> = (0..q.len()).map(|_| rng.normal()).collect();
        let h0 = -log_prob + kinetic(&p);
        let delta = match leapfrog(target, &q, &p, &grad, config.step_size, config.leapfrog_steps) {
            Ok(end) => {
                let dh = -end.log_prob + kinetic(&end.p) - h0;
                (dh, Some(end))
            }
            Err(Error::NonFinite(_) | Error::IntegrationFailed { .. }) => (f64::INFINITY, None),
            Err(e) => return Err(e),
        };
        let u = rng.uniform();
        let accept = match delta {
            (dh, Some(end)) if dh.is_finite() && u.ln() < -dh => {
                q = end.q;
                log_prob = end.log_prob;
                grad = end.grad;
                true
            }
            _ => false,
        };
        energy_errors.push(if delta.0.is_nan() { f64::INFINITY } else { delta.0 });
        if accept {
            accepted += 1;
            streak = 0;
        } else {
            streak += 1;
            if streak >= MAX_CONSECUTIVE_REJECTIONS {
                return Err(Error::AllRejected(streak));
            }
        }
        if iter >= config.burn_in && (iter - config.burn_in + 1).is_multiple_of(config.thin) {
            rows.extend_from_slice(&q);
        }
        on_iter(iter, accept);
    }
    let dim = q.len();
    let samples = Array2::from_shape_vec((rows.len() / dim, dim), rows).expect("whole rows");
    Ok(Chain { samples, proposals: config.iterations(), accepted, energy_errors })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// 2.5% and 97.5% sample quantiles of each weight.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl WeightSummary {
    /// Whether every entry of `w` lies within its central 95% interval.
    pub fn covers(&self, w: &[f64]) -> bool {
        w.iter().enumerate().all(|(k, v)| self.lower[k] <= *v && *v <= self.upper[k])
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Weight statistics over logit samples (one sample per row).
pub fn summarize(logits: ArrayView2<f64>) -> Result<WeightSummary> {
    if logits.nrows() == 0 {
        return Err(Error::InvalidArgument("empty chain".into()));
    }
    let weights: Vec<Array1<f64>> = logits.rows().into_iter().map(weights_from_logits).collect();
    let views: Vec<_> = weights.iter().map(|w| w.view().insert_axis(Axis(0))).collect();
    let w = ndarray::concatenate(Axis(0), &views).expect("equal lengths");
    let means = w.mean_axis(Axis(0)).expect("non-empty").to_vec();
    let sds = w.std_axis(Axis(0), 0.0).to_vec();
    let (mut lower, mut upper) = (Vec::new(), Vec::new());
    for col in w.columns() {
        let mut sorted = col.to_vec();
        sorted.sort_by(f64::total_cmp);
        lower.push(quantile(&sorted, 0.025));
        upper.push(quantile(&sorted, 0.975));
    }
    Ok(WeightSummary { means, sds, lower, upper })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::EigenFrame;
    use crate::denoiser::{Mlp, TrainConfig, TrainedDenoiser, TrainingMeta};
    use crate::pfode::{Direction, Discretization, GridSpec, NetworkScore, OracleGaussian, Solver};
    use crate::schedule::InflationSchedule;
    use ndarray::array;

    struct StdNormal(usize);

    impl HmcTarget for StdNormal {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_prob_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((-0.5 * theta.iter().map(|v| v * v).sum::<f64>(), theta.iter().map(|v| -v).collect()))
        }
    }

    #[test]
    fn table_values() {
        let p = GmmPrior::calibration(ScheduleKind::Prp);
        assert_eq!(p.means().row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(p.covs().row(0).to_vec(), vec![0.5625, 0.5625]);
        assert_eq!(p.weights().to_vec(), vec![0.5, 0.25, 0.25]);
        let r = GmmPrior::calibration(ScheduleKind::Prr);
        assert_eq!(r.covs().row(2).to_vec(), vec![1.0, 1e-4]);
        assert!(p.with_weights(array![0.5, 0.6, -0.1]).is_err());
    }

    #[test]
    fn logit_round_trip() {
        let w = array![0.5, 0.25, 0.25];
        let l = logits_from_weights(w.view()).unwrap();
        let back = weights_from_logits(l.view());
        for (a, b) in w.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(logits_from_weights(array![1.0, 0.0].view()).is_err());
    }

    fn prp_identity() -> (InflationSchedule, OracleGaussian, Discretization) {
        let s = InflationSchedule::prp(2, 2.0, 7.01).unwrap();
        let disc = Discretization::new(GridSpec::Edm { n: 33, eps_s: 0.0 }, 7.01).unwrap();
        (s.clone(), OracleGaussian::new(s), disc)
    }

    #[test]
    fn identity_generator_observations() {
        let (s, src, disc) = prp_identity();
        let flow = UnrolledFlow::new(&s, &src, &disc, Direction::Generate, Solver::Heun).unwrap();
        let prior = GmmPrior::calibration(ScheduleKind::Prp);
        let mut rng = RngStream::new(4);
        let exact = synthesize_observations(&prior, 50, 0.0, &flow, &mut rng.clone()).unwrap();
        assert!(exact.x_obs.iter().zip(exact.z_true.iter()).all(|(a, b)| (a - b).abs() <= 1e-12));
        let noisy = synthesize_observations(&prior, 50, 1e-2, &flow, &mut rng).unwrap();
        assert_eq!(noisy.z_true, exact.z_true);
        let resid = (&noisy.x_obs - &noisy.z_true).mapv(|v| v * v).mean().unwrap();
        assert!(resid > 0.005 && resid < 0.02, "{resid}");
        assert!(synthesize_observations(&prior, 0, 1e-2, &flow, &mut RngStream::new(0)).is_err());
    }

    fn tiny_model() -> TrainedDenoiser {
        let s = InflationSchedule::prr(vec![1.15, 0.85], 1.0, 2.0).unwrap();
        let net = Mlp::new(2, 4, &[8]).unwrap();
        let params: Vec<f64> = net.init(&mut RngStream::new(8)).iter().map(|p| 0.5 * p).collect();
        TrainedDenoiser::from_parts(
            net,
            params.clone(),
            params,
            s,
            EigenFrame::identity(2),
            TrainConfig::default(),
            TrainingMeta::default(),
        )
        .unwrap()
    }

    #[test]
    fn posterior_gradient_matches_finite_differences() {
        let model = tiny_model();
        let s = model.schedule().clone();
        let src = NetworkScore::new(&model);
        let disc = Discretization::new(GridSpec::Edm { n: 9, eps_s: 0.0 }, 2.0).unwrap();
        let flow = UnrolledFlow::new(&s, &src, &disc, Direction::Generate, Solver::Heun).unwrap();
        let prior = GmmPrior::calibration(ScheduleKind::Prp);
        let obs = synthesize_observations(&prior, 2, 1e-2, &flow, &mut RngStream::new(12)).unwrap();
        let target = GmmPosterior { obs: &obs, prior: &prior, flow: &flow };
        let mut theta = target.truth().unwrap();
        theta.iter_mut().enumerate().for_each(|(i, v)| *v += 0.05 * (i as f64 - 2.0));
        let (_, grad) = target.log_prob_and_grad(&theta).unwrap();
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd =
                (target.log_prob_and_grad(&plus).unwrap().0 - target.log_prob_and_grad(&minus).unwrap().0) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(1e-3);
            assert!(rel <= 1e-3, "coordinate {i}: analytic {} fd {fd}", grad[i]);
        }
    }

    #[test]
    fn likelihood_decays_away_from_truth() {
        let (s, src, disc) = prp_identity();
        let flow = UnrolledFlow::new(&s, &src, &disc, Direction::Generate, Solver::Heun).unwrap();
        let prior = GmmPrior::calibration(ScheduleKind::Prp);
        let obs = synthesize_observations(&prior, 20, 1e-2, &flow, &mut RngStream::new(1)).unwrap();
        let logits = logits_from_weights(obs.w_true.view()).unwrap();
        let at = log_posterior_and_grad(obs.z_true.view(), logits.view(), &obs, &prior, &flow).unwrap().0;
        let shifted = &obs.z_true + 10.0;
        let away = log_posterior_and_grad(shifted.view(), logits.view(), &obs, &prior, &flow).unwrap().0;
        assert!(at > away);
    }

    #[test]
    fn axis_exchange_symmetry() {
        // Components 1 and 2 mirror each other under swapping the two axes
        // once their means are centered.
        let (s, src, disc) = prp_identity();
        let flow = UnrolledFlow::new(&s, &src, &disc, Direction::Generate, Solver::Heun).unwrap();
        let cal = GmmPrior::calibration(ScheduleKind::Prp);
        let prior = GmmPrior::new(Array2::zeros((3, 2)), cal.covs().to_owned(), array![0.5, 0.3, 0.2]).unwrap();
        let swapped = prior.with_weights(array![0.5, 0.2, 0.3]).unwrap();
        let obs = synthesize_observations(&prior, 30, 1e-2, &flow, &mut RngStream::new(2)).unwrap();
        let reflect = |a: &Array2<f64>| a.slice(s![.., ..;-1]).to_owned();
        let mirrored = ObservationSet { x_obs: reflect(&obs.x_obs), z_true: reflect(&obs.z_true), ..obs.clone() };
        let z = &obs.z_true + 0.1;
        let l = array![0.3, -0.4];
        let a = log_posterior_and_grad(z.view(), l.view(), &obs, &prior, &flow).unwrap().0;
        let b =
            log_posterior_and_grad(reflect(&z).view(), array![-0.4, 0.3].view(), &mirrored, &swapped, &flow).unwrap().0;
        assert!((a - b).abs() <= 1e-9 * a.abs(), "{a} {b}");
    }

    #[test]
    fn leapfrog_is_reversible() {
        let (s, src, disc) = prp_identity();
        let flow = UnrolledFlow::new(&s, &src, &disc, Direction::Generate, Solver::Heun).unwrap();
        let prior = GmmPrior::calibration(ScheduleKind::Prp);
        let obs = synthesize_observations(&prior, 5, 1e-2, &flow, &mut RngStream::new(3)).unwrap();
        let target = GmmPosterior { obs: &obs, prior: &prior, flow: &flow };
        let q0 = target.truth().unwrap();
        let (_, g0) = target.log_prob_and_grad(&q0).unwrap();
        let p0: Vec<f64> = RngStream::new(5).normal_vec(q0.len()).to_vec();
        let end = leapfrog(&target, &q0, &p0, &g0, 1e-2, 15).unwrap();
        let neg: Vec<f64> = end.p.iter().map(|v| -v).collect();
        let back = leapfrog(&target, &end.q, &neg, &end.grad, 1e-2, 15).unwrap();
        for (a, b) in back.q.iter().zip(&q0) {
            assert!((a - b).abs() <= 1e-10);
        }
        for (a, b) in back.p.iter().zip(&p0) {
            assert!((a + b).abs() <= 1e-10);
        }
    }

    #[test]
    fn energy_error_is_second_order() {
        let target = StdNormal(4);
        let q = vec![0.3, -1.0, 0.5, 2.0];
        let p = vec![1.0, 0.2, -0.7, 0.1];
        let (lp, g) = target.log_prob_and_grad(&q).unwrap();
        let dh = |step: f64, steps: usize| {
            let end = leapfrog(&target, &q, &p, &g, step, steps).unwrap();
            (-end.log_prob + kinetic(&end.p) - (-lp + kinetic(&p))).abs()
        };
        let ratio = dh(0.2, 5) / dh(0.05, 20);
        assert!((12.0..=20.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn standard_normal_target() {
        let config = HmcConfig { leapfrog_steps: 10, step_size: 0.1, samples: 2000, burn_in: 100, thin: 1, seed: 3 };
        let chain = hmc_run(&config, &[0.0], &StdNormal(1)).unwrap();
        let rate = chain.acceptance_rate();
        assert!(rate > 0.5 && rate < 1.0, "{rate}");
        let x = chain.samples.column(0);
        assert!(x.mean().unwrap().abs() < 0.1);
        assert!((x.var(0.0) - 1.0).abs() < 0.15);
        assert_eq!(hmc_run(&config, &[0.0], &StdNormal(1)).unwrap(), chain);
    }

    #[test]
    fn kolmogorov_smirnov_on_gaussian() {
        let config = HmcConfig { leapfrog_steps: 12, step_size: 0.13, samples: 10_000, burn_in: 100, thin: 1, seed: 9 };
        let chain = hmc_run(&config, &[0.5], &StdNormal(1)).unwrap();
        let mut x = chain.samples.column(0).to_vec();
        x.sort_by(f64::total_cmp);
        let n = x.len() as f64;
        let cdf = |v: f64| 0.5 * (1.0 + libm::erf(v / std::f64::consts::SQRT_2));
        let ks = x
            .iter()
            .enumerate()
            .map(|(i, &v)| (cdf(v) - i as f64 / n).abs().max((cdf(v) - (i + 1) as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(ks <= 0.02, "{ks}");
    }

    #[test]
    fn persistent_rejection_aborts() {
        struct Cliff;
        impl HmcTarget for Cliff {
            fn dim(&self) -> usize {
                1
            }
            fn log_prob_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
                if theta[0] == 0.0 {
                    Ok((0.0, vec![0.0]))
                } else {
                    Err(Error::NonFinite("off the cliff".into()))
                }
            }
        }
        let err = hmc_run(&HmcConfig::default(), &[0.0], &Cliff).unwrap_err();
        assert!(matches!(err, Error::AllRejected(100)));
    }

    #[test]
    fn summaries() {
        let truth = logits_from_weights(array![0.5, 0.25, 0.25].view()).unwrap();
        let rows = Array2::from_shape_fn((10, 2), |(_, k)| truth[k]);
        let sum = summarize(rows.view()).unwrap();
        for (m, w) in sum.means.iter().zip([0.5, 0.25, 0.25]) {
            assert!((m - w).abs() < 1e-12);
        }
        assert!(sum.sds.iter().all(|s| s.abs() < 1e-12));
        assert!(summarize(Array2::zeros((0, 2)).view()).is_err());
    }
}
