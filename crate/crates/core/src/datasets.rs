//! Toy point clouds, standardization, and the whitened eigenbasis.

use std::f64::consts::PI;
use std::io::{Read, Write};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{column_means, covariance, orthonormal_columns, sym_eig};
use crate::rng::RngStream;

/// Relative floor applied to covariance eigenvalues before whitening.
pub const EIGENVALUE_FLOOR: f64 = 1e-6;

const PLANE_EMBEDDING_SEED: u64 = 0x00C1_4C1E_5EED;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub name: String,
    points: Array2<f64>,
}

impl PointCloud {
    pub fn new(name: impl Into<String>, points: Array2<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::InvalidArgument("point cloud needs at least one point".into()));
        }
        if points.ncols() == 0 {
            return Err(Error::InvalidArgument("point cloud needs at least one coordinate".into()));
        }
        ensure_finite(points.iter(), || "point cloud".into())?;
        Ok(Self { name: name.into(), points })
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn into_points(self) -> Array2<f64> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Write as CSV with header `x0,...,x{d-1}`; values use the shortest
    /// representation that parses back to the same f64.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record((0..self.dim()).map(|j| format!("x{j}")))?;
        for row in self.points.rows() {
            w.write_record(row.iter().map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(name: impl Into<String>, reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let d = headers.len();
        for (j, h) in headers.iter().enumerate() {
            if h.trim() != format!("x{j}") {
                return Err(Error::InvalidArgument(format!("unexpected CSV header '{h}' in column {j}")));
            }
        }
        let mut flat = Vec::new();
        let mut rows = 0;
        for record in r.records() {
            let record = record?;
            if record.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: record.len() });
            }
            for field in record.iter() {
                let v: f64 =
                    field.trim().parse().map_err(|_| Error::InvalidArgument(format!("not a number: '{field}'")))?;
                flat.push(v);
            }
            rows += 1;
        }
        let points = Array2::from_shape_vec((rows, d), flat).expect("row-major shape");
        Self::new(name, points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Circles,
    Moons,
    Sine,
    SCurve,
    Swirl,
    CirclesEmbeddedPlane,
    CirclesEmbeddedCurved,
    SCurveScaled,
    SwirlScaled,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 9] = [
        DatasetKind::Circles,
        DatasetKind::Moons,
        DatasetKind::Sine,
        DatasetKind::SCurve,
        DatasetKind::Swirl,
        DatasetKind::CirclesEmbeddedPlane,
        DatasetKind::CirclesEmbeddedCurved,
        DatasetKind::SCurveScaled,
        DatasetKind::SwirlScaled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Circles => "circles",
            DatasetKind::Moons => "moons",
            DatasetKind::Sine => "sine",
            DatasetKind::SCurve => "s_curve",
            DatasetKind::Swirl => "swirl",
            DatasetKind::CirclesEmbeddedPlane => "circles_embedded_plane",
            DatasetKind::CirclesEmbeddedCurved => "circles_embedded_curved",
            DatasetKind::SCurveScaled => "s_curve_scaled",
            DatasetKind::SwirlScaled => "swirl_scaled",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            DatasetKind::Circles | DatasetKind::Moons | DatasetKind::Sine => 2,
            _ => 3,
        }
    }

    /// Scaled variants come out of `generate` already standardized, with the
    /// thickness coordinate (last column) shrunk.
    pub fn is_prestandardized(self) -> bool {
        matches!(self, DatasetKind::SCurveScaled | DatasetKind::SwirlScaled)
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown dataset kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n: usize,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of the thickness coordinate in the scaled variants.
    #[serde(default = "default_thickness_sd")]
    pub thickness_sd: f64,
}

fn default_thickness_sd() -> f64 {
    0.5_f64.sqrt()
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, n: usize, noise_sd: f64, seed: u64) -> Self {
        Self { kind, n, noise_sd, seed, thickness_sd: default_thickness_sd() }
    }
}

/// Orthonormal 3x2 map used by `circles_embedded_plane`.
pub fn plane_embedding() -> Array2<f64> {
    let mut rng = RngStream::new(PLANE_EMBEDDING_SEED);
    orthonormal_columns(rng.normal_matrix(3, 2).view()).expect("random 3x2 matrix has full rank")
}

pub fn generate(spec: &DatasetSpec) -> Result<PointCloud> {
    if spec.n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if !(spec.noise_sd.is_finite() && spec.noise_sd >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise_sd must be >= 0, got {}", spec.noise_sd)));
    }
    let mut rng = RngStream::new(spec.seed);
    let n = spec.n;
    let mut points = match spec.kind {
        DatasetKind::Circles => circles(&mut rng, n),
        DatasetKind::Moons => moons(&mut rng, n),
        DatasetKind::Sine => sine(&mut rng, n),
        DatasetKind::SCurve | DatasetKind::SCurveScaled => s_curve(&mut rng, n),
        DatasetKind::Swirl | DatasetKind::SwirlScaled => swirl(&mut rng, n),
        DatasetKind::CirclesEmbeddedPlane => circles(&mut rng, n).dot(&plane_embedding().t()),
        DatasetKind::CirclesEmbeddedCurved => {
            let flat = circles(&mut rng, n);
            Array2::from_shape_fn((n, 3), |(i, j)| match j {
                2 => flat[[i, 1]].signum() * flat[[i, 1]] * flat[[i, 1]],
                _ => flat[[i, j]],
            })
        }
    };
    if spec.noise_sd > 0.0 {
        let mut noise = rng.substream(1);
        points.mapv_inplace(|v| v + spec.noise_sd * noise.normal());
    }
    if spec.kind.is_prestandardized() {
        if !(spec.thickness_sd.is_finite() && spec.thickness_sd > 0.0) {
            return Err(Error::InvalidArgument("thickness_sd must be positive".into()));
        }
        let (std, _, _) = standardize(&PointCloud::new(spec.kind.name(), points)?)?;
        let std = std.into_points();
        // (x, thickness, z) -> (x, z, thickness)
        points = Array2::from_shape_fn((n, 3), |(i, j)| match j {
            0 => std[[i, 0]],
            1 => std[[i, 2]],
            _ => spec.thickness_sd * std[[i, 1]],
        });
    }
    PointCloud::new(spec.kind.name(), points)
}

fn sine(rng: &mut RngStream, n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, 2));
    for mut row in out.rows_mut() {
        let x = rng.uniform_range(-PI, PI);
        row[0] = x;
        row[1] = (2.0 * x).sin();
    }
    out
}

fn circles(rng: &mut RngStream, n: usize) -> Array2<f64> {
    let n_outer = n.div_ceil(2);
    let order = rng.permutation(n);
    let mut out = Array2::zeros((n, 2));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let radius = if order[i] < n_outer { 1.0 } else { 0.5 };
        let theta = rng.uniform_range(0.0, 2.0 * PI);
        row[0] = radius * theta.cos();
        row[1] = radius * theta.sin();
    }
    out
}

fn moons(rng: &mut RngStream, n: usize) -> Array2<f64> {
    let n_upper = n.div_ceil(2);
    let order = rng.permutation(n);
    let mut out = Array2::zeros((n, 2));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let theta = rng.uniform_range(0.0, PI);
        if order[i] < n_upper {
            row[0] = theta.cos();
            row[1] = theta.sin();
        } else {
            row[0] = 1.0 - theta.cos();
            row[1] = 1.0 - theta.sin() - 0.5;
        }
    }
    out
}

fn s_curve(rng: &mut RngStream, n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, 3));
    for mut row in out.rows_mut() {
        let theta = rng.uniform_range(-1.5 * PI, 1.5 * PI);
        let u = rng.uniform_range(0.0, 2.0);
        row[0] = theta.sin();
        row[1] = u;
        row[2] = theta.signum() * (theta.cos() - 1.0);
    }
    out
}

fn swirl(rng: &mut RngStream, n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, 3));
    for mut row in out.rows_mut() {
        let theta = rng.uniform_range(PI, 4.0 * PI);
        let y = rng.uniform();
        row[0] = theta * theta.cos() / (3.0 * PI);
        row[1] = y;
        row[2] = theta * theta.sin() / (3.0 * PI);
    }
    out
}

/// Shift and scale each coordinate to mean 0 and (population) variance 1.
///
/// Returns the standardized cloud together with the per-coordinate mean and
/// scale, so `original = standardized * scale + mean`.
pub fn standardize(pc: &PointCloud) -> Result<(PointCloud, Array1<f64>, Array1<f64>)> {
    let pts = pc.points();
    let mean = column_means(pts);
    let centered = &pts - &mean;
    let n = pts.nrows() as f64;
    let mut scale = Array1::zeros(pc.dim());
    for (j, col) in centered.columns().into_iter().enumerate() {
        let var = col.iter().map(|v| v * v).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > f64::EPSILON * (1.0 + mean[j].abs())) {
            return Err(Error::Degenerate(format!("coordinate {j} is constant")));
        }
        scale[j] = sd;
    }
    let mut out = centered / &scale;
    // one refinement pass absorbs the rounding left by the first division
    let resid_mean = column_means(out.view());
    out -= &resid_mean;
    for (j, mut col) in out.columns_mut().into_iter().enumerate() {
        let sd = (col.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        col.mapv_inplace(|v| v / sd);
        scale[j] *= sd;
    }
    let mean = mean + &(resid_mean * &scale);
    Ok((PointCloud::new(pc.name.clone(), out)?, mean, scale))
}

/// Mean, eigenvectors, and (floored) eigenvalues of a data covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenFrame {
    pub mean: Vec<f64>,
    /// Row-major d x d matrix whose columns are eigenvectors.
    pub basis: Vec<f64>,
    pub sigma0_sq: Vec<f64>,
}

impl EigenFrame {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn basis_matrix(&self) -> Array2<f64> {
        let d = self.dim();
        Array2::from_shape_vec((d, d), self.basis.clone()).expect("square basis")
    }

    pub fn from_parts(mean: Array1<f64>, basis: Array2<f64>, sigma0_sq: Array1<f64>) -> Result<Self> {
        let d = mean.len();
        if basis.dim() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, got: basis.nrows() });
        }
        if sigma0_sq.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: sigma0_sq.len() });
        }
        if sigma0_sq.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument("eigenvalues must be positive".into()));
        }
        Ok(Self { mean: mean.to_vec(), basis: basis.iter().copied().collect(), sigma0_sq: sigma0_sq.to_vec() })
    }

    /// Identity frame: zero mean, axis basis, unit variances.
    pub fn identity(d: usize) -> Self {
        Self::from_parts(Array1::zeros(d), Array2::eye(d), Array1::ones(d)).expect("valid identity")
    }
}

pub fn estimate_eigenframe(pc: &PointCloud) -> Result<EigenFrame> {
    let d = pc.dim();
    if pc.len() <= d {
        return Err(Error::InvalidArgument(format!("need more than {d} points, got {}", pc.len())));
    }
    let cov = covariance(pc.points());
    let (vals, vecs) = sym_eig(cov.view())?;
    let top = vals[0];
    if !(top > 0.0) {
        return Err(Error::Degenerate("covariance is zero".into()));
    }
    let floor = EIGENVALUE_FLOOR * top;
    let floored = vals.mapv(|v| v.max(floor));
    EigenFrame::from_parts(column_means(pc.points()), vecs, floored)
}

fn check_frame(pc: &PointCloud, frame: &EigenFrame) -> Result<()> {
    if frame.dim() != pc.dim() {
        return Err(Error::DimensionMismatch { expected: frame.dim(), got: pc.dim() });
    }
    Ok(())
}

/// Map to whitened eigen-coordinates: `diag(1/sigma0) W^T (x - mean)`.
pub fn whiten(pc: &PointCloud, frame: &EigenFrame) -> Result<PointCloud> {
    check_frame(pc, frame)?;
    let mean = Array1::from(frame.mean.clone());
    let sd = Array1::from(frame.sigma0_sq.clone()).mapv(f64::sqrt);
    let rotated = (&pc.points() - &mean).dot(&frame.basis_matrix());
    PointCloud::new(pc.name.clone(), rotated / &sd)
}

pub fn unwhiten(pc: &PointCloud, frame: &EigenFrame) -> Result<PointCloud> {
    check_frame(pc, frame)?;
    let mean = Array1::from(frame.mean.clone());
    let sd = Array1::from(frame.sigma0_sq.clone()).mapv(f64::sqrt);
    let scaled = &pc.points() * &sd;
    PointCloud::new(pc.name.clone(), scaled.dot(&frame.basis_matrix().t()) + &mean)
}

/// Split a cloud into its first `n` rows and the rest.
pub fn split(pc: &PointCloud, n: usize) -> Result<(PointCloud, PointCloud)> {
    if n == 0 || n >= pc.len() {
        return Err(Error::InvalidArgument(format!("split point {n} out of range for {} rows", pc.len())));
    }
    let pts = pc.points();
    Ok((
        PointCloud::new(pc.name.clone(), pts.slice(s![..n, ..]).to_owned())?,
        PointCloud::new(pc.name.clone(), pts.slice(s![n.., ..]).to_owned())?,
    ))
}

/// Generate, standardize (unless the kind is pre-standardized), and whiten.
pub fn prepare(spec: &DatasetSpec) -> Result<(PointCloud, EigenFrame)> {
    let raw = generate(spec)?;
    let std = if spec.kind.is_prestandardized() { raw } else { standardize(&raw)?.0 };
    let frame = estimate_eigenframe(&std)?;
    Ok((std, frame))
}

pub fn sample_variances(points: ArrayView2<f64>) -> Array1<f64> {
    points.var_axis(Axis(0), 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn spec(kind: DatasetKind, n: usize) -> DatasetSpec {
        DatasetSpec::new(kind, n, 0.0, 17)
    }

    #[test]
    fn circles_on_two_radii() {
        let pc = generate(&spec(DatasetKind::Circles, 4)).unwrap();
        let mut radii: Vec<f64> = pc.points().rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        radii.sort_by(f64::total_cmp);
        for (i, r) in radii.iter().enumerate() {
            let want = if i < 2 { 0.5 } else { 1.0 };
            assert!((r - want).abs() < 1e-12, "{radii:?}");
        }
    }

    #[test]
    fn noiseless_points_lie_on_manifolds() {
        let n = 500;
        for kind in DatasetKind::ALL {
            if kind.is_prestandardized() {
                continue;
            }
            let pc = generate(&spec(kind, n)).unwrap();
            assert_eq!(pc.dim(), kind.dim());
            let mut n_upper = 0;
            for (i, p) in pc.points().rows().into_iter().enumerate() {
                let resid = match kind {
                    DatasetKind::Circles => {
                        let r = p.dot(&p).sqrt();
                        (r - 1.0).abs().min((r - 0.5).abs())
                    }
                    DatasetKind::Moons => {
                        let upper = (p[0].powi(2) + p[1].powi(2)).sqrt() - 1.0;
                        let lower = ((1.0 - p[0]).powi(2) + (0.5 - p[1]).powi(2)).sqrt() - 1.0;
                        if upper.abs() <= lower.abs() {
                            n_upper += 1;
                        }
                        upper.abs().min(lower.abs())
                    }
                    DatasetKind::Sine => (p[1] - (2.0 * p[0]).sin()).abs(),
                    DatasetKind::SCurve => {
                        // x = sin(theta), z = sign(theta)(cos(theta) - 1) => x^2 + (|z| - 1)^2 = 1
                        let on_curve = (p[0].powi(2) + (p[2].abs() - 1.0).powi(2) - 1.0).abs();
                        on_curve + if (0.0..=2.0).contains(&p[1]) { 0.0 } else { 1.0 }
                    }
                    DatasetKind::Swirl => {
                        // radius in the x-z plane equals theta / 3pi and the angle matches theta
                        let theta = (p[0].powi(2) + p[2].powi(2)).sqrt() * 3.0 * PI;
                        (p[0] - theta * theta.cos() / (3.0 * PI)).abs()
                            + (p[2] - theta * theta.sin() / (3.0 * PI)).abs()
                    }
                    DatasetKind::CirclesEmbeddedPlane => {
                        let m = plane_embedding();
                        let coords = m.t().dot(&p);
                        let back = m.dot(&coords);
                        let r = coords.dot(&coords).sqrt();
                        (&back - &p).mapv(f64::abs).sum() + (r - 1.0).abs().min((r - 0.5).abs())
                    }
                    DatasetKind::CirclesEmbeddedCurved => {
                        let r = (p[0].powi(2) + p[1].powi(2)).sqrt();
                        (p[2] - p[1].signum() * p[1] * p[1]).abs() + (r - 1.0).abs().min((r - 0.5).abs())
                    }
                    _ => unreachable!(),
                };
                assert!(resid < 1e-12, "{kind:?} point {i}: residual {resid}");
            }
            if kind == DatasetKind::Moons {
                assert_eq!(n_upper, n / 2);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in DatasetKind::ALL {
            let a = generate(&DatasetSpec::new(kind, 50, 0.1, 3)).unwrap();
            let b = generate(&DatasetSpec::new(kind, 50, 0.1, 3)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn embedded_plane_is_rank_two() {
        let pc = generate(&spec(DatasetKind::CirclesEmbeddedPlane, 400)).unwrap();
        let (vals, _) = sym_eig(covariance(pc.points()).view()).unwrap();
        assert!(vals[2].abs() < 1e-12, "{vals}");
    }

    #[test]
    fn embedded_plane_whitens_to_two_dimensions() {
        let pc = generate(&spec(DatasetKind::CirclesEmbeddedPlane, 400)).unwrap();
        let frame = estimate_eigenframe(&pc).unwrap();
        let w = whiten(&pc, &frame).unwrap();
        let third = w.points().column(2).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(third <= 1e-5, "third coordinate {third}");
    }

    #[test]
    fn scaled_thickness_variance() {
        let pc = generate(&DatasetSpec::new(DatasetKind::SCurveScaled, 100_000, 0.0, 8)).unwrap();
        let var = sample_variances(pc.points());
        assert!((var[2] - 0.5).abs() < 0.025, "{var}");
        assert!((var[0] - 1.0).abs() < 1e-9 && (var[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn standardize_two_values() {
        let pc = PointCloud::new("t", array![[0.0, 5.0], [2.0, 7.0]]).unwrap();
        let (out, mean, scale) = standardize(&pc).unwrap();
        assert_eq!(out.points(), array![[-1.0, -1.0], [1.0, 1.0]]);
        assert_eq!(mean, array![1.0, 6.0]);
        assert_eq!(scale, array![1.0, 1.0]);
    }

    #[test]
    fn standardize_fixed_point_and_constant_error() {
        let pc = generate(&DatasetSpec::new(DatasetKind::Moons, 300, 0.1, 2)).unwrap();
        let (once, _, _) = standardize(&pc).unwrap();
        let m = column_means(once.points());
        let v = sample_variances(once.points());
        assert!(m.iter().all(|x| x.abs() < 1e-10) && v.iter().all(|x| (x - 1.0).abs() < 1e-10));
        let (twice, _, _) = standardize(&once).unwrap();
        let diff = (&twice.points() - &once.points()).mapv(f64::abs).fold(0.0_f64, |a, b| a.max(*b));
        assert!(diff < 1e-10);

        let flat = PointCloud::new("c", array![[1.0, 3.0], [2.0, 3.0], [4.0, 3.0]]).unwrap();
        assert!(matches!(standardize(&flat), Err(Error::Degenerate(_))));
    }

    #[test]
    fn eigenframe_of_axis_gaussian() {
        let mut rng = RngStream::new(4);
        let pts = Array2::from_shape_fn((100_000, 2), |(_, j)| if j == 0 { 2.0 } else { 1.0 } * rng.normal());
        let pc = PointCloud::new("g", pts).unwrap();
        let frame = estimate_eigenframe(&pc).unwrap();
        assert!((frame.sigma0_sq[0] / 4.0 - 1.0).abs() < 0.05);
        assert!((frame.sigma0_sq[1] - 1.0).abs() < 0.05);

        let w = whiten(&pc, &frame).unwrap();
        let cov = covariance(w.points());
        assert!((cov[[0, 0]] - 1.0).abs() < 0.05 && (cov[[1, 1]] - 1.0).abs() < 0.05 && cov[[0, 1]].abs() < 0.05);
        let again = estimate_eigenframe(&w).unwrap();
        assert!(again.sigma0_sq.iter().all(|v| (v - 1.0).abs() < 1e-9));

        let back = unwhiten(&w, &frame).unwrap();
        let err = (&back.points() - &pc.points()).mapv(f64::abs).fold(0.0_f64, |a, b| a.max(*b));
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn eigenframe_needs_more_points_than_dims() {
        let pc = PointCloud::new("t", array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(estimate_eigenframe(&pc).is_err());
    }

    #[test]
    fn whiten_dimension_mismatch() {
        let pc = PointCloud::new("t", array![[0.0, 1.0, 2.0]]).unwrap();
        assert!(matches!(whiten(&pc, &EigenFrame::identity(2)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn floored_frame_stays_finite() {
        let pc = generate(&spec(DatasetKind::CirclesEmbeddedPlane, 100)).unwrap();
        let frame = estimate_eigenframe(&pc).unwrap();
        assert_eq!(frame.sigma0_sq[2], EIGENVALUE_FLOOR * frame.sigma0_sq[0]);
        let w = whiten(&pc, &frame).unwrap();
        assert!(w.points().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let pc = generate(&DatasetSpec::new(DatasetKind::Swirl, 64, 0.3, 12)).unwrap();
        let mut buf = Vec::new();
        pc.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"x0,x1,x2\n"));
        let back = PointCloud::read_csv("swirl", buf.as_slice()).unwrap();
        assert_eq!(back.points(), pc.points());
    }
}
