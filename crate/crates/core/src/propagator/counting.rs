//! Exponentials of count-resolved generators.
//!
//! A count-resolved generator on `N + 1` blocks of three levels is
//! block-lower-bidiagonal with identical diagonal blocks `A` and identical
//! sub-diagonal blocks `B`. Writing it as the matrix polynomial `A + z B`
//! (with `z^n` marking block `n`), its exponential is block-Toeplitz and
//! equals `exp(t (A + z B)) mod z^(N+1)`. We compute that polynomial by
//! scaling and squaring in the truncated ring, which costs `O(N²)` 3×3
//! products instead of dense `O(N³)` work on the full matrix.

use nalgebra::{Matrix3, Vector3};

use super::expm::taylor_terms;

/// Matrix polynomial `Σ_k coeffs[k] z^k`, truncated at degree `coeffs.len() - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockToeplitz {
    pub coeffs: Vec<Matrix3<f64>>,
}

impl BlockToeplitz {
    fn identity(cutoff: usize) -> Self {
        let mut coeffs = vec![Matrix3::zeros(); cutoff + 1];
        coeffs[0] = Matrix3::identity();
        Self { coeffs }
    }

    pub fn cutoff(&self) -> usize {
        self.coeffs.len() - 1
    }

    fn mul(&self, other: &Self) -> Self {
        let n = self.coeffs.len();
        let mut out = vec![Matrix3::zeros(); n];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.iter().all(|v| *v == 0.0) {
                continue;
            }
            for (j, b) in other.coeffs[..n - i].iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self { coeffs: out }
    }

    /// `(A + z B) * self`, truncated.
    fn mul_linear(&self, a: &Matrix3<f64>, b: &Matrix3<f64>) -> Self {
        let n = self.coeffs.len();
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let mut c = a * self.coeffs[k];
            if k > 0 {
                c += b * self.coeffs[k - 1];
            }
            out.push(c);
        }
        Self { coeffs: out }
    }

    /// Applies the block-Toeplitz operator to a block vector of equal length.
    pub fn apply(&self, blocks: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let n = self.coeffs.len().min(blocks.len());
        (0..n)
            .map(|k| {
                let mut acc = Vector3::zeros();
                for j in 0..=k {
                    acc += self.coeffs[j] * blocks[k - j];
                }
                acc
            })
            .collect()
    }
}

fn abs_norm(m: &Matrix3<f64>) -> f64 {
    (0..3)
        .map(|c| m.column(c).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(t (diag + z coupling)) mod z^(cutoff+1)`.
pub fn exp_block_bidiagonal(
    diag: &Matrix3<f64>,
    coupling: &Matrix3<f64>,
    t: f64,
    cutoff: usize,
) -> BlockToeplitz {
    // The 1-norm of the full block matrix is bounded by that of |A| + |B|.
    let norm = abs_norm(&(diag.abs() + coupling.abs())) * t;
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scale = t / 2f64.powi(squarings);
    let a = diag * scale;
    let b = coupling * scale;
    let terms = taylor_terms(abs_norm(&(a.abs() + b.abs())));

    let id = BlockToeplitz::identity(cutoff);
    let mut e = id.clone();
    for k in (1..=terms).rev() {
        let mut next = e.mul_linear(&a, &b);
        for c in next.coeffs.iter_mut() {
            *c /= k as f64;
        }
        next.coeffs[0] += Matrix3::identity();
        e = next;
    }
    for _ in 0..squarings {
        e = e.mul(&e);
    }
    e
}

/// Dense `3(N+1)`-dimensional form of the same generator; test oracle only.
#[cfg(test)]
pub(crate) fn dense_block_bidiagonal(
    diag: &Matrix3<f64>,
    coupling: &Matrix3<f64>,
    cutoff: usize,
) -> nalgebra::DMatrix<f64> {
    let d = 3 * (cutoff + 1);
    let mut m = nalgebra::DMatrix::zeros(d, d);
    for n in 0..=cutoff {
        m.view_mut((3 * n, 3 * n), (3, 3)).copy_from(diag);
        if n < cutoff {
            m.view_mut((3 * n + 3, 3 * n), (3, 3)).copy_from(coupling);
        }
    }
    m
}
