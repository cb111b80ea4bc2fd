//! Dense helpers: symmetric eigendecomposition by cyclic Jacobi rotations,
//! sample moments, and thin QR.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{ensure_finite, Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues in descending order and the matching orthonormal
/// eigenvectors as columns. Each eigenvector is signed so that its
/// largest-magnitude entry is positive.
pub fn sym_eig(s: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: s.ncols() });
    }
    ensure_finite(s.iter(), || "sym_eig input".into())?;
    let scale = s.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (s[[i, j]] - s[[j, i]]).abs();
            if diff > SYMMETRY_TOL * scale {
                return Err(Error::NonSymmetric { row: i, col: j, diff });
            }
        }
    }

    // symmetrize exactly so rotations see a consistent matrix
    let mut a = Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (s[[i, j]] + s[[j, i]]));
    let mut v = Array2::<f64>::eye(n);

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum();
        let total: f64 = a.iter().map(|x| x * x).sum();
        if off <= f64::EPSILON * f64::EPSILON * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                let tau = sn / (1.0 + c);

                a[[p, p]] = app - t * apq;
                a[[q, q]] = aqq + t * apq;
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let arp = a[[r, p]];
                        let arq = a[[r, q]];
                        let new_rp = arp - sn * (arq + tau * arp);
                        let new_rq = arq + sn * (arp - tau * arq);
                        a[[r, p]] = new_rp;
                        a[[p, r]] = new_rp;
                        a[[r, q]] = new_rq;
                        a[[q, r]] = new_rq;
                    }
                }
                for r in 0..n {
                    let vrp = v[[r, p]];
                    let vrq = v[[r, q]];
                    v[[r, p]] = vrp - sn * (vrq + tau * vrp);
                    v[[r, q]] = vrq + sn * (vrp - tau * vrq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]));
    let values = Array1::from_iter(order.iter().map(|&i| a[[i, i]]));
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src).to_owned();
        let pivot = col.iter().copied().fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            col.mapv_inplace(|x| -x);
        }
        vectors.column_mut(dst).assign(&col);
    }
    Ok((values, vectors))
}

pub fn column_means(points: ArrayView2<f64>) -> Array1<f64> {
    points.mean_axis(Axis(0)).expect("non-empty point set")
}

/// Population (divide-by-N) covariance of the rows of `points`.
pub fn covariance(points: ArrayView2<f64>) -> Array2<f64> {
    let n = points.nrows() as f64;
    let mean = column_means(points);
    let centered = &points - &mean;
    centered.t().dot(&centered) / n
}

/// Thin QR by modified Gram-Schmidt; returns the orthonormal factor.
pub fn orthonormal_columns(m: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut q = m.to_owned();
    for j in 0..q.ncols() {
        for k in 0..j {
            let proj = q.column(k).dot(&q.column(j));
            let qk = q.column(k).to_owned();
            q.column_mut(j).scaled_add(-proj, &qk);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        if norm < 1e-12 {
            return Err(Error::Degenerate("columns are linearly dependent".into()));
        }
        q.column_mut(j).mapv_inplace(|x| x / norm);
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use ndarray::array;

    fn reconstruct(vals: &Array1<f64>, vecs: &Array2<f64>) -> Array2<f64> {
        let scaled = vecs * vals;
        scaled.dot(&vecs.t())
    }

    fn frobenius(m: &Array2<f64>) -> f64 {
        m.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let (vals, vecs) = sym_eig(Array2::<f64>::eye(3).view()).unwrap();
        assert_eq!(vals, array![1.0, 1.0, 1.0]);
        let gram = vecs.t().dot(&vecs);
        assert!(frobenius(&(gram - Array2::<f64>::eye(3))) < 1e-12);
    }

    #[test]
    fn diagonal_input_is_axis_aligned() {
        let (vals, vecs) = sym_eig(array![[1.0, 0.0], [0.0, 4.0]].view()).unwrap();
        assert_eq!(vals, array![4.0, 1.0]);
        assert_eq!(vecs, array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn two_by_two_by_hand() {
        // characteristic polynomial (2-l)^2 - 1 = 0 gives l = 3, 1
        let (vals, vecs) = sym_eig(array![[2.0, 1.0], [1.0, 2.0]].view()).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-14 && (vals[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((vecs[[0, 0]] - h).abs() < 1e-14 && (vecs[[1, 0]] - h).abs() < 1e-14);
        // largest-magnitude entries tie for the second vector; either sign pattern is (1,-1)/sqrt2
        assert!((vecs[[0, 1]] + vecs[[1, 1]]).abs() < 1e-14);
        assert!((vecs[[0, 1]].abs() - h).abs() < 1e-14);
    }

    #[test]
    fn rejects_asymmetric_and_nonfinite() {
        assert!(matches!(sym_eig(array![[1.0, 2.0], [0.0, 1.0]].view()), Err(Error::NonSymmetric { .. })));
        assert!(matches!(sym_eig(array![[f64::NAN, 0.0], [0.0, 1.0]].view()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn random_symmetric_matrices_reconstruct() {
        let mut rng = RngStream::new(99);
        for trial in 0..100 {
            let d = 1 + trial % 12;
            let b = rng.normal_matrix(d, d);
            let s = &b + &b.t();
            let (vals, vecs) = sym_eig(s.view()).unwrap();
            assert!(frobenius(&(reconstruct(&vals, &vecs) - &s)) < 1e-9, "trial {trial}");
            let gram = vecs.t().dot(&vecs);
            for ((i, j), g) in gram.indexed_iter() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-10, "trial {trial}");
            }
            assert!(vals.windows(2).into_iter().all(|w| w[0] >= w[1]));
            for col in vecs.columns() {
                let pivot = col.iter().copied().fold(0.0_f64, |b, x| if x.abs() > b.abs() { x } else { b });
                assert!(pivot > 0.0);
            }
        }
    }

    #[test]
    fn gram_schmidt_is_orthonormal() {
        let mut rng = RngStream::new(5);
        let q = orthonormal_columns(rng.normal_matrix(3, 2).view()).unwrap();
        let g = q.t().dot(&q);
        assert!(frobenius(&(g - Array2::<f64>::eye(2))) < 1e-14);
    }
}
