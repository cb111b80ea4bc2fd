//! Analytic invariant suite: closed-form and finite-difference oracles that
//! need no trained network. Shared by the `oracle-check` command and the
//! acceptance tests.

use std::f64::consts::PI;
use std::time::Instant;

use ndarray::Array2;
use serde::Serialize;

use crate::analysis::{coverage_fraction, make_ball_boundary, participation_ratio, BoundarySet};
use crate::datasets::EigenFrame;
use crate::denoiser::{loss_and_grad_fixed, precondition, Mlp, TrainConfig, TrainedDenoiser, TrainingMeta};
use crate::error::Result;
use crate::hmc::{synthesize_observations, GmmPosterior, GmmPrior, HmcTarget};
use crate::pfode::{
    conditional_vf, integrate, isotropic_rhs, rhs, ConditionalDeltaScore, Direction, Discretization, GridSpec,
    IntegrateOptions, NetworkScore, OracleGaussian, Solver, UnrolledFlow,
};
use crate::rng::RngStream;
use crate::schedule::{build_g, pr_trajectory, InflationSchedule, ScheduleKind};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value against its tolerance.
    pub detail: String,
    pub seconds: f64,
}

fn outcome(name: &'static str, start: Instant, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// PRP with the Gaussian oracle score has a vanishing field: 10^4 whitened
/// Gaussian points must not move.
pub fn prp_zero_field() -> Result<CheckOutcome> {
    let start = Instant::now();
    let s = InflationSchedule::prp(2, 2.0, 7.01)?;
    let src = OracleGaussian::new(s.clone());
    let disc = Discretization::new(GridSpec::default(), s.t_max())?;
    let x = RngStream::new(1).normal_matrix(10_000, 2);
    let mut worst = 0.0_f64;
    for dir in [Direction::Inflate, Direction::Generate] {
        let end = integrate(x.view(), &disc, dir, Solver::Heun, &s, &src, IntegrateOptions::default())?.into_last();
        worst = worst.max(max_abs(&(end - &x)));
    }
    Ok(outcome("prp_zero_field", start, worst <= 1e-12, format!("max |x_end - x_0| = {worst:.3e} (tol 1e-12)")))
}

/// PR is constant under PRP and converges to the preserved count under PRR.
pub fn pr_dynamics() -> Result<CheckOutcome> {
    let start = Instant::now();
    let spectrum = [3.0, 1.0, 0.25];
    let pr0 = participation_ratio(&spectrum)?;
    let mut drift = 0.0_f64;
    for k in 0..=100 {
        let t = 7.01 * k as f64 / 100.0;
        drift = drift.max((pr_trajectory(&spectrum, &[1.0; 3], 2.0, t)? - pr0).abs());
    }
    let g = build_g(3, 2, 1.02)?;
    let limit = pr_trajectory(&[1.0; 3], &g, 1.0, 30.0)?;
    let gap = (limit - 2.0).abs();
    Ok(outcome(
        "pr_dynamics",
        start,
        drift <= 1e-12 && gap <= 1e-8,
        format!("PRP drift {drift:.3e} (tol 1e-12); PRR |PR(30) - 2| = {gap:.3e} (tol 1e-8)"),
    ))
}

/// Compressed latent variance for IG = 1.02, rho = 1, t_max = 15.01 against
/// the reported 2.15e-7.
pub fn latent_compressed_variance() -> Result<CheckOutcome> {
    let start = Instant::now();
    let s = InflationSchedule::prr(build_g(3, 2, 1.02)?, 1.0, 15.01)?;
    let v = s.latent_cov()[2];
    let rel = (v - 2.15e-7).abs() / 2.15e-7;
    Ok(outcome(
        "latent_compressed_variance",
        start,
        rel <= 0.05,
        format!("latent variance {v:.4e}, relative gap {rel:.3} to 2.15e-7 (tol 0.05)"),
    ))
}

pub fn preconditioner_identities() -> Result<CheckOutcome> {
    let start = Instant::now();
    let s = InflationSchedule::prr(vec![2.0, 1.4, 0.98], 1.0, 15.01)?;
    let mut worst = 0.0_f64;
    for k in 0..100 {
        let t = 1e-3 + (15.01 - 1e-3) * k as f64 / 99.0;
        let p = precondition(&s, t, 1e-7, 1000.0)?;
        for j in 0..3 {
            let g = p.gamma[j];
            worst = worst
                .max((p.c_in[j].powi(2) * (1.0 + g) - 1.0).abs())
                .max((p.lambda[j] * p.c_out[j] - 1.0).abs())
                .max((p.c_skip[j] + p.c_out[j].powi(2) - 1.0).abs());
        }
    }
    Ok(outcome(
        "preconditioner_identities",
        start,
        worst <= 1e-12,
        format!("max identity error {worst:.3e} (tol 1e-12)"),
    ))
}

/// Conditional flow-matching field against the ODE with the exact
/// conditional score, and the isotropic closed form against the general one.
pub fn equivalences() -> Result<CheckOutcome> {
    let start = Instant::now();
    let s = InflationSchedule::prr(build_g(3, 2, 1.02)?, 1.0, 15.01)?;
    let mut rng = RngStream::new(17);
    let mut fm = 0.0_f64;
    for _ in 0..1000 {
        let x = rng.normal_matrix(1, 3);
        let x1 = rng.normal_vec(3);
        let t = rng.uniform_range(1e-3, 15.01);
        let src = ConditionalDeltaScore::new(s.clone(), x1.clone())?;
        let a = rhs(x.view(), t, &s, &src)?;
        let b = conditional_vf(x.view(), t, x1.view(), &s)?;
        fm = fm.max(max_abs(&(&a - &b)) / (1.0 + max_abs(&a)));
    }
    let p = InflationSchedule::prp(3, 2.0, 7.01)?;
    let mut iso = 0.0_f64;
    for _ in 0..200 {
        let src = ConditionalDeltaScore::new(p.clone(), rng.normal_vec(3))?;
        let x = rng.normal_matrix(4, 3);
        let t = rng.uniform_range(0.01, 7.01);
        let a = rhs(x.view(), t, &p, &src)?;
        let b = isotropic_rhs(x.view(), t, &p, &src)?;
        iso = iso.max(max_abs(&(&a - &b)) / (1.0 + max_abs(&a)));
    }
    Ok(outcome(
        "equivalences",
        start,
        fm <= 1e-10 && iso <= 1e-12,
        format!("flow matching {fm:.3e} (tol 1e-10); isotropic {iso:.3e} (tol 1e-12)"),
    ))
}

/// Endpoint error ratios under step halving on the PRR oracle field, whose
/// solution is an exact exponential.
pub fn solver_order() -> Result<CheckOutcome> {
    let start = Instant::now();
    let s = InflationSchedule::prr(build_g(3, 2, 1.02)?, 1.0, 15.01)?;
    let src = OracleGaussian::new(s.clone());
    let x = RngStream::new(4).normal_matrix(100, 3);
    let g_star = s.g_star();
    let exact =
        Array2::from_shape_fn(x.dim(), |(i, j)| x[[i, j]] * (0.5 * s.rho() * (s.g()[j] - g_star) * s.t_max()).exp());
    let err = |h: f64, solver| -> Result<f64> {
        let disc = Discretization::new(GridSpec::Uniform { h }, s.t_max())?;
        let out = integrate(x.view(), &disc, Direction::Inflate, solver, &s, &src, IntegrateOptions::default())?;
        Ok(max_abs(&(out.into_last() - &exact)))
    };
    let heun = err(0.02, Solver::Heun)? / err(0.01, Solver::Heun)?;
    let euler = err(0.02, Solver::Euler)? / err(0.01, Solver::Euler)?;
    Ok(outcome(
        "solver_order",
        start,
        (3.5..=4.5).contains(&heun) && (1.8..=2.2).contains(&euler),
        format!("Heun ratio {heun:.3} (want [3.5, 4.5]); Euler ratio {euler:.3} (want [1.8, 2.2])"),
    ))
}

fn tiny_model(seed: u64) -> Result<TrainedDenoiser> {
    let s = InflationSchedule::prr(vec![1.15, 0.85], 1.0, 2.0)?;
    let net = Mlp::new(2, 4, &[8])?;
    let params: Vec<f64> = net.init(&mut RngStream::new(seed)).iter().map(|p| 0.5 * p).collect();
    TrainedDenoiser::from_parts(
        net,
        params.clone(),
        params,
        s,
        EigenFrame::identity(2),
        TrainConfig::default(),
        TrainingMeta::default(),
    )
}

fn relative(analytic: f64, fd: f64, floor: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(floor)
}

/// Parameter gradients and input VJPs of tiny networks, and the HMC
/// posterior gradient, against central finite differences.
pub fn gradient_oracles() -> Result<CheckOutcome> {
    let start = Instant::now();
    let h = 1e-5;
    let s = InflationSchedule::prp(2, 2.0, 7.01)?;
    let mut rng = RngStream::new(8);
    let net = Mlp::new(2, 0, &[8])?;
    let params = net.init(&mut rng);
    let y = rng.normal_matrix(4, 2);
    let z = rng.normal_matrix(4, 2);
    let t = [0.01, 0.3, 1.2, 3.0];
    let (_, grad) = loss_and_grad_fixed(&net, &params, &s, 1000.0, y.view(), &t, z.view())?;
    let mut p = params.clone();
    let mut param_err = 0.0_f64;
    for k in 0..params.len() {
        p[k] = params[k] + h;
        let up = loss_and_grad_fixed(&net, &p, &s, 1000.0, y.view(), &t, z.view())?.0;
        p[k] = params[k] - h;
        let dn = loss_and_grad_fixed(&net, &p, &s, 1000.0, y.view(), &t, z.view())?.0;
        p[k] = params[k];
        param_err = param_err.max(relative(grad[k], (up - dn) / (2.0 * h), 1e-6));
    }

    let model = tiny_model(12)?;
    let x = rng.normal_matrix(3, 2);
    let cot = rng.normal_matrix(3, 2);
    let dir = rng.normal_matrix(3, 2);
    let mut vjp_err = 0.0_f64;
    for &t in &[0.05, 0.5, 1.9] {
        let vjp = model.input_vjp(x.view(), t, cot.view())?;
        let up = model.denoise((&x + &(&dir * h)).view(), t)?;
        let dn = model.denoise((&x - &(&dir * h)).view(), t)?;
        let fd = (&cot * &(up - dn)).sum() / (2.0 * h);
        let an = (&vjp * &dir).sum();
        vjp_err = vjp_err.max(relative(an, fd, 1e-6));
    }

    let ms = model.schedule().clone();
    let src = NetworkScore::new(&model);
    let disc = Discretization::new(GridSpec::Edm { n: 9, eps_s: 0.0 }, ms.t_max())?;
    let flow = UnrolledFlow::new(&ms, &src, &disc, Direction::Generate, Solver::Heun)?;
    let prior = GmmPrior::calibration(ScheduleKind::Prp);
    let obs = synthesize_observations(&prior, 2, 1e-2, &flow, &mut RngStream::new(12))?;
    let target = GmmPosterior { obs: &obs, prior: &prior, flow: &flow };
    let mut theta = target.truth()?;
    theta.iter_mut().enumerate().for_each(|(i, v)| *v += 0.05 * (i as f64 - 2.0));
    let (_, g) = target.log_prob_and_grad(&theta)?;
    let mut hmc_err = 0.0_f64;
    for i in 0..theta.len() {
        let mut tp = theta.clone();
        tp[i] += h;
        let up = target.log_prob_and_grad(&tp)?.0;
        tp[i] = theta[i] - h;
        let dn = target.log_prob_and_grad(&tp)?.0;
        hmc_err = hmc_err.max(relative(g[i], (up - dn) / (2.0 * h), 1e-3));
    }
    Ok(outcome(
        "gradient_oracles",
        start,
        param_err <= 1e-4 && vjp_err <= 1e-4 && hmc_err <= 1e-3,
        format!(
            "parameter {param_err:.2e} (tol 1e-4); input VJP {vjp_err:.2e} (tol 1e-4); posterior {hmc_err:.2e} (tol 1e-3)"
        ),
    ))
}

/// Signed-angle winding number of a closed loop around `p`.
pub fn winding_number(vertices: &Array2<f64>, p: [f64; 2]) -> i64 {
    let n = vertices.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let (a, b) = (vertices.row(i), vertices.row((i + 1) % n));
        let (ax, ay, bx, by) = (a[0] - p[0], a[1] - p[1], b[0] - p[0], b[1] - p[1]);
        total += (ax * by - ay * bx).atan2(ax * bx + ay * by);
    }
    (total / (2.0 * PI)).round() as i64
}

/// Even-odd containment against winding numbers on random star-shaped
/// polygons, and Gaussian mass inside the unit Mahalanobis circle.
pub fn containment() -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rng = RngStream::new(21);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let n = 3 + rng.below(60);
        let mut angles: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.0, 2.0 * PI)).collect();
        angles.sort_by(f64::total_cmp);
        let radii: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.2, 2.0)).collect();
        let verts =
            Array2::from_shape_fn((n, 2), |(k, j)| radii[k] * if j == 0 { angles[k].cos() } else { angles[k].sin() });
        let template: BoundarySet = make_ball_boundary(2, 1.0, &[1.0, 1.0], n)?;
        let poly = template.with_vertices(verts.clone())?;
        let pts = Array2::from_shape_fn((10_000, 2), |_| rng.uniform_range(-2.5, 2.5));
        let ours = coverage_fraction(pts.view(), &poly)?;
        let inside = pts.rows().into_iter().filter(|r| winding_number(&verts, [r[0], r[1]]) != 0).count();
        worst = worst.max((ours - inside as f64 / pts.nrows() as f64).abs());
    }
    let cov = [1.0, 1.0];
    let circle = make_ball_boundary(2, 1.0, &cov, 2000)?;
    let g = RngStream::new(22).normal_matrix(100_000, 2);
    let frac = coverage_fraction(g.view(), &circle)?;
    let want = 1.0 - (-0.5f64).exp();
    Ok(outcome(
        "containment",
        start,
        worst <= 1e-12 && (frac - want).abs() <= 0.01,
        format!("winding mismatch {worst:.1e} (tol 1e-12); unit-radius mass {frac:.5} vs {want:.5} (tol 0.01)"),
    ))
}

/// Every analytic check, in a fixed order.
pub fn run_all() -> Vec<(&'static str, Result<CheckOutcome>)> {
    vec![
        ("prp_zero_field", prp_zero_field()),
        ("pr_dynamics", pr_dynamics()),
        ("latent_compressed_variance", latent_compressed_variance()),
        ("preconditioner_identities", preconditioner_identities()),
        ("equivalences", equivalences()),
        ("solver_order", solver_order()),
        ("gradient_oracles", gradient_oracles()),
        ("containment", containment()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_analytic_check_passes() {
        for (name, result) in run_all() {
            let o = result.unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(o.passed, "{name}: {}", o.detail);
        }
    }

    #[test]
    fn winding_number_of_square() {
        let sq = ndarray::array![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert_eq!(winding_number(&sq, [0.5, 0.5]), 1);
        assert_eq!(winding_number(&sq, [1.5, 0.5]), 0);
        let rev = ndarray::array![[0.0, 1.0], [1.0, 1.0], [1.0, 0.0], [0.0, 0.0]];
        assert_eq!(winding_number(&rev, [0.5, 0.5]), -1);
    }
}
