//! Evaluation metrics: participation ratio, round-trip error, transported
//! coverage sets, and autocorrelation of denoiser residuals along flows.

mod acf;
mod boundary;
mod coverage;

pub use acf::{
    residual_autocorrelation, scaled_autocorrelation, AcfOptions, AcfReport, IdealDenoiser, ResidualReference,
};
pub use boundary::{make_ball_boundary, BoundarySet, Topology};
pub use coverage::{coverage_experiment, coverage_fraction, CoverageConfig, CoverageReport};

use ndarray::ArrayView2;

use crate::error::{Error, Result};
pub use crate::schedule::participation_ratio;

/// `tr(S)^2 / tr(S^2)` of a symmetric covariance, without diagonalizing.
pub fn participation_ratio_cov(cov: ArrayView2<f64>) -> Result<f64> {
    let n = cov.nrows();
    if cov.ncols() != n || n == 0 {
        return Err(Error::DimensionMismatch { expected: n, got: cov.ncols() });
    }
    let trace: f64 = cov.diag().sum();
    let trace_sq: f64 = cov.iter().zip(cov.t().iter()).map(|(a, b)| a * b).sum();
    if !(trace_sq > 0.0) {
        return Err(Error::Degenerate("covariance is zero".into()));
    }
    Ok(trace * trace / trace_sq)
}

/// Mean over points of the mean squared coordinate error.
pub fn roundtrip_mse(original: ArrayView2<f64>, reconstructed: ArrayView2<f64>) -> Result<f64> {
    if original.dim() != reconstructed.dim() {
        return Err(Error::DimensionMismatch { expected: original.len(), got: reconstructed.len() });
    }
    if original.is_empty() {
        return Err(Error::InvalidArgument("no points".into()));
    }
    let sum: f64 = original.iter().zip(reconstructed.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / original.len() as f64)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mid = 0.5 * (i + j) as f64;
        for &k in &order[i..=j] {
            out[k] = mid;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation, with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("need at least two values".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("constant ranks".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Euclidean distances between all row pairs `(i, j)`, `i < j`, after
/// dividing each coordinate by `scale`.
pub fn pairwise_distances(points: ArrayView2<f64>, scale: &[f64]) -> Vec<f64> {
    let n = points.nrows();
    let mut out = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = (0..points.ncols()).map(|k| ((points[[i, k]] - points[[j, k]]) / scale[k]).powi(2)).sum();
            out.push(d2.sqrt());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use ndarray::{array, Array2};

    #[test]
    fn participation_ratio_examples() {
        assert_eq!(participation_ratio(&[1.0; 5]).unwrap(), 5.0);
        assert_eq!(participation_ratio(&[1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(participation_ratio(&[4.0, 1.0, 1.0]).unwrap(), 2.0);
        assert!(participation_ratio(&[0.0, 0.0]).is_err());
        assert!(participation_ratio(&[]).is_err());
    }

    #[test]
    fn covariance_form_matches_spectrum() {
        let b = RngStream::new(2).normal_matrix(5, 5);
        let cov = b.t().dot(&b);
        let (vals, _) = crate::linalg::sym_eig(cov.view()).unwrap();
        let a = participation_ratio_cov(cov.view()).unwrap();
        let e = participation_ratio(&vals.mapv(|v| v.max(0.0)).to_vec()).unwrap();
        assert!((a - e).abs() < 1e-10 * a);
        assert!(participation_ratio_cov(Array2::<f64>::zeros((2, 2)).view()).is_err());
    }

    #[test]
    fn roundtrip_mse_examples() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(roundtrip_mse(a.view(), a.view()).unwrap(), 0.0);
        let eps = 0.3;
        let mut b = a.clone();
        b.column_mut(1).mapv_inplace(|v| v + eps);
        assert!((roundtrip_mse(a.view(), b.view()).unwrap() - eps * eps / 2.0).abs() < 1e-15);
        assert!(roundtrip_mse(a.view(), array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!((spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 3.0, 2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }
}
