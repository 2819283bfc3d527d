//! Dense matrix exponential for small generators.
//!
//! Two routes: a spectral one (`V diag(exp(λt)) V⁻¹`) used when the matrix
//! has a well-conditioned eigenbasis, and scaling-and-squaring with a
//! truncated Taylor series for everything else, including defective
//! generators such as the two-level system at `r = Γ`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Eigenbases with a condition number at or above this are rejected.
pub const MAX_EIGENBASIS_CONDITION: f64 = 1e8;

/// Which route produced an exponential.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpmRoute {
    Eigen,
    Series,
}

/// `exp(a * t)`, choosing the spectral route when it is safe.
pub fn expm(a: &DMatrix<f64>, t: f64) -> Result<(DMatrix<f64>, ExpmRoute)> {
    if a.iter().any(|v| !v.is_finite()) || !t.is_finite() {
        return Err(Error::NonFinite {
            context: "matrix exponential",
        });
    }
    if t < 0.0 {
        return Err(Error::Domain {
            what: "dt",
            value: t,
        });
    }
    if let Some(e) = expm_eigen(a, t) {
        return Ok((e, ExpmRoute::Eigen));
    }
    Ok((expm_series(a, t), ExpmRoute::Series))
}

pub(crate) fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Scaling and squaring with a Taylor series evaluated by Horner's rule.
pub fn expm_series(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = one_norm(a) * t;
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let x = a * (t / 2f64.powi(squarings));
    let terms = taylor_terms(one_norm(&x));

    let id = DMatrix::<f64>::identity(n, n);
    let mut e = id.clone();
    for k in (1..=terms).rev() {
        e = &id + (&x * e) / k as f64;
    }
    for _ in 0..squarings {
        e = &e * &e;
    }
    e
}

/// Number of Taylor terms needed for a remainder below 1e-20 at this norm.
pub(crate) fn taylor_terms(norm: f64) -> usize {
    let mut term = 1.0;
    let mut k = 0;
    while k < 60 {
        k += 1;
        term *= norm / k as f64;
        if term < 1e-20 {
            break;
        }
    }
    k.max(1)
}

/// Spectral route; `None` when the eigenbasis is missing or ill-conditioned.
pub fn expm_eigen(a: &DMatrix<f64>, t: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let scale = one_norm(a).max(1.0);
    let lambdas = a.clone().complex_eigenvalues();
    let ac: DMatrix<Complex64> = a.map(|v| Complex64::new(v, 0.0));

    let mut vecs: DMatrix<Complex64> = DMatrix::zeros(n, n);
    let mut filled = vec![false; n];
    for i in 0..n {
        if filled[i] {
            continue;
        }
        // Cluster numerically coincident eigenvalues and ask for a basis of
        // the whole eigenspace at once.
        let cluster: Vec<usize> = (i..n)
            .filter(|&j| !filled[j] && (lambdas[j] - lambdas[i]).norm() <= 1e-9 * scale)
            .collect();
        let shifted = &ac - DMatrix::<Complex64>::identity(n, n) * lambdas[i];
        let svd = shifted.clone().svd(false, true);
        let v_t = svd.v_t?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&p, &q| svd.singular_values[p].total_cmp(&svd.singular_values[q]));
        for (slot, &col) in cluster.iter().zip(order.iter()) {
            let v = v_t.row(col).adjoint();
            let residual = (&shifted * &v).norm();
            if residual > 1e-9 * scale {
                return None;
            }
            vecs.set_column(*slot, &v);
            filled[*slot] = true;
        }
    }

    let sv = vecs.clone().svd(false, false).singular_values;
    let (smax, smin) = sv
        .iter()
        .fold((0.0f64, f64::INFINITY), |(hi, lo), s| (hi.max(*s), lo.min(*s)));
    if smin.is_nan() || smin <= 0.0 || smax / smin >= MAX_EIGENBASIS_CONDITION {
        return None;
    }
    let inv = vecs.clone().try_inverse()?;
    let mut scaled = vecs;
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= (lambdas[j] * t).exp();
    }
    let e = scaled * inv;
    Some(e.map(|z| z.re))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_level_conditional(r: f64, gamma: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-r, 0.0, r, -gamma])
    }

    #[test]
    fn zero_matrix_gives_identity() {
        let z = DMatrix::<f64>::zeros(3, 3);
        let (e, _) = expm(&z, 7.0).unwrap();
        assert_eq!(e, DMatrix::identity(3, 3));
        assert_eq!(expm_series(&z, 7.0), DMatrix::identity(3, 3));
    }

    #[test]
    fn defective_generator_uses_series() {
        let a = two_level_conditional(1.0, 1.0);
        assert!(expm_eigen(&a, 1.0).is_none());
        let (e, route) = expm(&a, 2.0).unwrap();
        assert_eq!(route, ExpmRoute::Series);
        // sigma_22 = r t exp(-t) at r = gamma = 1
        assert!((e[(1, 0)] - 2.0 * (-2.0f64).exp()).abs() < 1e-14);
        assert!((e[(0, 0)] - (-2.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn routes_agree_on_diagonalizable_generators() {
        let cases = [
            DMatrix::from_row_slice(3, 3, &[-5.0, 1.0, 0.01, 5.0, -1.1, 0.5, 0.0, 0.1, -0.51]),
            DMatrix::from_row_slice(3, 3, &[-1000.0, 0.8, 0.0, 1000.0, -1.0, 0.0, 0.0, 0.0, 0.0]),
            // cyclic 1 -> 2 -> 3 -> 1 has complex eigenvalues
            DMatrix::from_row_slice(3, 3, &[-1.0, 0.0, 1.0, 1.0, -1.0, 0.0, 0.0, 1.0, -1.0]),
        ];
        for a in cases {
            for t in [1e-3, 0.01, 1.0, 10.0] {
                let eig = expm_eigen(&a, t).expect("diagonalizable");
                let ser = expm_series(&a, t);
                let diff = (&eig - &ser).amax();
                assert!(diff < 1e-12, "t = {t}: {diff:e}");
            }
        }
    }

    #[test]
    fn repeated_but_diagonalizable_eigenvalues() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-2.0, -2.0, 0.0]));
        let e = expm_eigen(&a, 1.5).expect("diagonal matrix has an eigenbasis");
        assert!((e[(0, 0)] - (-3.0f64).exp()).abs() < 1e-15);
        assert!((e[(1, 1)] - (-3.0f64).exp()).abs() < 1e-15);
        assert!((e[(2, 2)] - 1.0).abs() < 1e-15);
        assert!(e[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_and_negative_time() {
        let mut a = DMatrix::<f64>::zeros(2, 2);
        assert!(matches!(expm(&a, -1.0), Err(Error::Domain { .. })));
        a[(0, 1)] = f64::NAN;
        assert!(matches!(expm(&a, 1.0), Err(Error::NonFinite { .. })));
    }
}
