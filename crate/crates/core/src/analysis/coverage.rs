//! Calibration check: Mahalanobis balls in the latent space are transported
//! with test points through generation and back through inflation, and the
//! fraction of points inside each transported boundary is recounted.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::boundary::{make_ball_boundary, BoundarySet};
use crate::error::{Error, Result};
use crate::pfode::{integrate, Direction, Discretization, GridSpec, IntegrateOptions, ScoreSource, Solver};
use crate::rng::RngStream;
use crate::schedule::InflationSchedule;

/// Fraction of rows of `points` inside `boundary`.
pub fn coverage_fraction(points: ArrayView2<f64>, boundary: &BoundarySet) -> Result<f64> {
    if points.ncols() != boundary.dim() {
        return Err(Error::DimensionMismatch { expected: boundary.dim(), got: points.ncols() });
    }
    if points.nrows() == 0 {
        return Err(Error::InvalidArgument("no test points".into()));
    }
    let inside: usize = (0..points.nrows()).into_par_iter().filter(|&i| boundary.contains(points.row(i))).count();
    Ok(inside as f64 / points.nrows() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageConfig {
    /// Mahalanobis radii of the latent balls.
    pub radii: Vec<f64>,
    pub n_test: usize,
    /// Target vertex count per boundary (3D meshes round to an icosphere level).
    pub n_vertices: usize,
    pub solver: Solver,
    pub grid: GridSpec,
    pub seed: u64,
    /// Rows per parallel integration chunk.
    pub chunk_rows: Option<usize>,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            radii: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5],
            n_test: 5000,
            n_vertices: 200,
            solver: Solver::Heun,
            grid: GridSpec::default(),
            seed: 0,
            chunk_rows: Some(1000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub radius: f64,
    pub direction: Direction,
    /// Coverage of the untransported latent ball.
    pub frac_before: f64,
    /// For generation, coverage in data space; for inflation, coverage
    /// after the full round trip back to the latent space.
    pub frac_after: f64,
    pub n_test: usize,
    pub n_vertices: usize,
    /// Whether the transported boundary is still simple (2D) or a closed
    /// consistently oriented mesh (3D).
    pub boundary_valid: bool,
}

impl CoverageReport {
    pub fn change(&self) -> f64 {
        self.frac_after - self.frac_before
    }
}

/// Generate latent test points and ball boundaries to data space, then
/// inflate them back, recording coverage for each radius after each leg.
pub fn coverage_experiment(
    source: &dyn ScoreSource,
    schedule: &InflationSchedule,
    config: &CoverageConfig,
) -> Result<Vec<CoverageReport>> {
    let d = schedule.dim();
    if config.n_test == 0 {
        return Err(Error::InvalidArgument("n_test must be positive".into()));
    }
    if config.radii.is_empty() {
        return Err(Error::InvalidArgument("no radii given".into()));
    }
    let cov = schedule.latent_cov().to_vec();
    let boundaries: Vec<BoundarySet> =
        config.radii.iter().map(|&r| make_ball_boundary(d, r, &cov, config.n_vertices)).collect::<Result<_>>()?;

    let mut rng = RngStream::new(config.seed);
    let sd: Vec<f64> = cov.iter().map(|c| c.sqrt()).collect();
    let test = Array2::from_shape_fn((config.n_test, d), |(_, j)| sd[j] * rng.normal());

    let mut blocks = vec![test.view()];
    blocks.extend(boundaries.iter().map(|b| b.vertices()));
    let latent = concatenate(Axis(0), &blocks).expect("matching widths");

    let disc = Discretization::new(config.grid, schedule.t_max())?;
    let options = IntegrateOptions { keep_states: false, chunk_rows: config.chunk_rows };
    let data =
        integrate(latent.view(), &disc, Direction::Generate, config.solver, schedule, source, options)?.into_last();
    let back = integrate(data.view(), &disc, Direction::Inflate, config.solver, schedule, source, options)?.into_last();

    let mut reports = Vec::with_capacity(2 * boundaries.len());
    for (direction, state) in [(Direction::Generate, &data), (Direction::Inflate, &back)] {
        let points = state.slice(s![..config.n_test, ..]);
        let mut offset = config.n_test;
        for (b, &radius) in boundaries.iter().zip(&config.radii) {
            let moved = b.with_vertices(state.slice(s![offset..offset + b.len(), ..]).to_owned())?;
            offset += b.len();
            reports.push(CoverageReport {
                radius,
                direction,
                frac_before: coverage_fraction(test.view(), b)?,
                frac_after: coverage_fraction(points, &moved)?,
                n_test: config.n_test,
                n_vertices: b.len(),
                boundary_valid: moved.validate().is_ok(),
            });
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pfode::OracleGaussian;
    use ndarray::Array1;
    use std::f64::consts::PI;

    /// Winding number of a closed loop around `p`, by summed signed angles.
    fn winding(loop_pts: ArrayView2<f64>, p: [f64; 2]) -> i64 {
        let n = loop_pts.nrows();
        let mut total = 0.0;
        for i in 0..n {
            let a = loop_pts.row(i);
            let b = loop_pts.row((i + 1) % n);
            let (ax, ay) = (a[0] - p[0], a[1] - p[1]);
            let (bx, by) = (b[0] - p[0], b[1] - p[1]);
            total += (ax * by - ay * bx).atan2(ax * bx + ay * by);
        }
        (total / (2.0 * PI)).round() as i64
    }

    #[test]
    fn even_odd_matches_winding_number() {
        let mut rng = RngStream::new(11);
        // Star-shaped simple polygon.
        let n = 40;
        let verts = Array2::from_shape_fn((n, 2), |(k, j)| {
            let th = 2.0 * PI * k as f64 / n as f64;
            let r = 1.0 + 0.5 * (5.0 * th).sin();
            r * if j == 0 { th.cos() } else { th.sin() }
        });
        let b = make_ball_boundary(2, 1.0, &[1.0, 1.0], n).unwrap().with_vertices(verts.clone()).unwrap();
        b.validate().unwrap();
        for _ in 0..2000 {
            let p = [rng.uniform_range(-2.0, 2.0), rng.uniform_range(-2.0, 2.0)];
            let inside = b.contains(Array1::from(p.to_vec()).view());
            assert_eq!(inside, winding(verts.view(), p) != 0, "{p:?}");
        }
    }

    #[test]
    fn gaussian_coverage_matches_chi_square() {
        let cov = [2.0, 0.5];
        let b = make_ball_boundary(2, 1.0, &cov, 400).unwrap();
        let mut rng = RngStream::new(5);
        let n = 20_000;
        let pts = Array2::from_shape_fn((n, 2), |(_, j)| cov[j].sqrt() * rng.normal());
        let frac = coverage_fraction(pts.view(), &b).unwrap();
        assert!((frac - (1.0 - (-0.5f64).exp())).abs() < 0.01, "{frac}");
    }

    #[test]
    fn sphere_coverage_matches_chi_square() {
        let cov = [1.0, 3.0, 0.2];
        let b = make_ball_boundary(3, 1.5, &cov, 2000).unwrap();
        let mut rng = RngStream::new(6);
        let n = 20_000;
        let pts = Array2::from_shape_fn((n, 3), |(_, j)| cov[j].sqrt() * rng.normal());
        let frac = coverage_fraction(pts.view(), &b).unwrap();
        // P(chi2_3 <= 2.25), reduced slightly because the mesh is inscribed.
        let exact = 0.477_832_810_4;
        assert!(frac < exact + 0.01 && frac > exact - 0.03, "{frac}");
    }

    #[test]
    fn oracle_flow_preserves_coverage() {
        let s = InflationSchedule::prr(vec![1.2, 0.8], 1.0, 3.0).unwrap();
        let src = OracleGaussian::new(s.clone());
        let config = CoverageConfig {
            radii: vec![1.0, 2.0],
            n_test: 2000,
            n_vertices: 100,
            grid: GridSpec::Uniform { h: 0.05 },
            ..CoverageConfig::default()
        };
        let reports = coverage_experiment(&src, &s, &config).unwrap();
        assert_eq!(reports.len(), 4);
        for r in &reports {
            assert!(r.boundary_valid);
            assert!(r.change().abs() <= 1e-3, "{r:?}");
        }
        assert!((reports[0].frac_before - (1.0 - (-0.5f64).exp())).abs() < 0.03);
    }
}
