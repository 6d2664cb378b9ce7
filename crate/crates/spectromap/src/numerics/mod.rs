//! Dense complex linear algebra and randomness primitives.
//!
//! Conventions used throughout the crate:
//!
//! - Matrices are row-major [`ndarray::Array2`] of `Complex<f64>`.
//! - `vec` denotes **column stacking**: `vec(X)[j*m + i] = X[i, j]` for an
//!   `m x n` matrix, so that `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.
//! - `kron(A, B)` places `A` on the outer (slow) index and `B` on the inner
//!   (fast) index; [`partial_trace_b`] traces out the inner factor.

use ndarray::{Array1, Array2, ArrayView2, ShapeBuilder, Zip};
use ndarray_linalg::{Eig, EigVals, Eigh, UPLO};
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

mod arnoldi;
pub mod assignment;
mod expm;
mod rng;

pub use arnoldi::{arnoldi_ritz_values, max_modulus_arnoldi, shifted_inverse_extreme};
pub use expm::matrix_exp;
pub use rng::Seed;

/// Complex double-precision scalar.
pub type C64 = Complex<f64>;
/// Dense complex matrix, row-major.
pub type CMat = Array2<C64>;
/// Dense complex vector.
pub type CVec = Array1<C64>;
/// Dense real matrix, row-major.
pub type RMat = Array2<f64>;

/// Errors from the linear-algebra primitives.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("matrix is numerically rank deficient (column {col})")]
    RankDeficient { col: usize },
    #[error("eigensolver failed to converge")]
    NoConvergence,
}

/// Complex matrix with independent standard complex Gaussian entries
/// (real and imaginary parts each standard normal).
pub fn ginibre(rows: usize, cols: usize, seed: Seed) -> CMat {
    assert!(rows >= 1 && cols >= 1, "ginibre requires positive dimensions");
    ginibre_with(&mut seed.rng(), rows, cols)
}

/// [`ginibre`] drawing from an existing stream.
pub fn ginibre_with<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    CMat::from_shape_fn((rows, cols), |_| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

/// Thin QR decomposition `G = Q R` with the diagonal of `R` real and strictly
/// positive, which makes the factorization unique for full-column-rank `G`.
///
/// `G` must have at least as many rows as columns. Returns `Q` (same shape as
/// `G`, isometric columns) and square upper-triangular `R`.
pub fn qr_positive(g: &CMat) -> Result<(CMat, CMat), NumericsError> {
    let (m, n) = g.dim();
    if m < n {
        return Err(NumericsError::ShapeMismatch {
            expected: format!("rows >= cols"),
            found: format!("{m}x{n}"),
        });
    }
    let scale = g.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();

    // Householder reduction; reflectors stored as unit vectors w_k.
    let mut r = g.clone();
    let mut reflectors: Vec<CVec> = Vec::with_capacity(n);
    for k in 0..n {
        let mut w = CVec::zeros(m - k);
        let norm_x = {
            let mut s = 0.0;
            for i in k..m {
                s += r[(i, k)].norm_sqr();
            }
            s.sqrt()
        };
        if norm_x > 0.0 {
            let x0 = r[(k, k)];
            let phase = if x0.norm() > 0.0 { x0 / x0.norm() } else { C64::new(1.0, 0.0) };
            // v = x + phase * ||x|| e1, normalized; H = I - 2 w w†.
            for i in k..m {
                w[i - k] = r[(i, k)];
            }
            w[0] += phase * norm_x;
            let wn = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if wn > 0.0 {
                w.mapv_inplace(|z| z / wn);
                // Apply H to the trailing block of R.
                for j in k..n {
                    let mut dot = C64::new(0.0, 0.0);
                    for i in k..m {
                        dot += w[i - k].conj() * r[(i, j)];
                    }
                    let dot = dot * 2.0;
                    for i in k..m {
                        let delta = w[i - k] * dot;
                        r[(i, j)] -= delta;
                    }
                }
            }
        }
        reflectors.push(w);
    }

    // Accumulate thin Q by applying the reflectors to the first n columns of I.
    let mut q = CMat::zeros((m, n));
    for j in 0..n {
        q[(j, j)] = C64::new(1.0, 0.0);
    }
    for k in (0..n).rev() {
        let w = &reflectors[k];
        for j in 0..n {
            let mut dot = C64::new(0.0, 0.0);
            for i in k..m {
                dot += w[i - k].conj() * q[(i, j)];
            }
            let dot = dot * 2.0;
            for i in k..m {
                let delta = w[i - k] * dot;
                q[(i, j)] -= delta;
            }
        }
    }

    // Rotate column phases so diag(R) is real and positive.
    let mut r_out = CMat::zeros((n, n));
    for i in 0..n {
        let d = r[(i, i)];
        if d.norm() <= 1e-12 * scale {
            return Err(NumericsError::RankDeficient { col: i });
        }
        let phase = d / d.norm();
        for j in 0..m {
            let z = q[(j, i)] * phase;
            q[(j, i)] = z;
        }
        for j in i..n {
            r_out[(i, j)] = phase.conj() * r[(i, j)];
        }
        r_out[(i, i)] = C64::new(d.norm(), 0.0);
    }
    Ok((q, r_out))
}

/// Haar-distributed `d x d` unitary (QR of a Ginibre matrix with the
/// positive-diagonal phase correction).
pub fn haar_unitary(d: usize, seed: Seed) -> CMat {
    haar_unitary_with(&mut seed.rng(), d)
}

/// [`haar_unitary`] drawing from an existing stream.
pub fn haar_unitary_with<R: Rng + ?Sized>(rng: &mut R, d: usize) -> CMat {
    let g = ginibre_with(rng, d, d);
    let (q, _) = qr_positive(&g).expect("Ginibre matrices are almost surely full rank");
    q
}

/// Eigenvalues and right eigenvectors of a general complex square matrix.
pub fn eig_general(a: &CMat) -> Result<(CVec, CMat), NumericsError> {
    a.eig().map_err(|_| NumericsError::NoConvergence)
}

/// Eigenvalues only of a general complex square matrix.
pub fn eigvals_general(a: &CMat) -> Result<CVec, NumericsError> {
    a.eigvals().map_err(|_| NumericsError::NoConvergence)
}

/// Eigendecomposition of a Hermitian matrix; eigenvalues ascending, the
/// columns of the returned matrix are the eigenvectors.
pub fn eigh_hermitian(a: &CMat) -> Result<(Array1<f64>, CMat), NumericsError> {
    // The LAPACK binding reads the buffer column-major; for a row-major
    // Hermitian matrix that conjugates the input and hence the eigenvectors.
    // Hand it a column-major copy so the column convention always holds.
    let mut f_order = CMat::zeros(a.raw_dim().f());
    f_order.assign(a);
    f_order
        .eigh(UPLO::Lower)
        .map_err(|_| NumericsError::NoConvergence)
}

/// Conjugate transpose.
pub fn dagger(a: &ArrayView2<C64>) -> CMat {
    let (m, n) = a.dim();
    CMat::from_shape_fn((n, m), |(i, j)| a[(j, i)].conj())
}

/// Matrix trace.
pub fn trace(a: &CMat) -> C64 {
    a.diag().sum()
}

/// Kronecker product with `a` on the outer index and `b` on the inner index.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ma, na) = a.dim();
    let (mb, nb) = b.dim();
    let mut out = CMat::zeros((ma * mb, na * nb));
    for ia in 0..ma {
        for ja in 0..na {
            let aij = a[(ia, ja)];
            if aij == C64::new(0.0, 0.0) {
                continue;
            }
            let mut block = out.slice_mut(ndarray::s![
                ia * mb..(ia + 1) * mb,
                ja * nb..(ja + 1) * nb
            ]);
            Zip::from(&mut block).and(b).for_each(|o, &bz| *o += aij * bz);
        }
    }
    out
}

/// Column-stacking vectorization: `vec(X)[j*m + i] = X[i, j]`.
pub fn vec_col(x: &CMat) -> CVec {
    let (m, n) = x.dim();
    CVec::from_shape_fn(m * n, |k| x[(k % m, k / m)])
}

/// Inverse of [`vec_col`].
pub fn unvec_col(v: &CVec, m: usize, n: usize) -> CMat {
    assert_eq!(v.len(), m * n, "unvec_col: length mismatch");
    CMat::from_shape_fn((m, n), |(i, j)| v[j * m + i])
}

/// Partial trace over the inner (second) Kronecker factor:
/// `partial_trace_b(kron(A, B)) = trace(B) * A`.
pub fn partial_trace_b(m: &CMat, da: usize, db: usize) -> Result<CMat, NumericsError> {
    if m.dim() != (da * db, da * db) {
        return Err(NumericsError::ShapeMismatch {
            expected: format!("{0}x{0}", da * db),
            found: format!("{}x{}", m.dim().0, m.dim().1),
        });
    }
    let mut out = CMat::zeros((da, da));
    for a in 0..da {
        for c in 0..da {
            let mut s = C64::new(0.0, 0.0);
            for b in 0..db {
                s += m[(a * db + b, c * db + b)];
            }
            out[(a, c)] = s;
        }
    }
    Ok(out)
}

/// Involutive index permutation exchanging the Choi and superoperator
/// representations of a map on `d x d` matrices (both are `d² x d²`).
///
/// With column stacking, the superoperator of `ρ ↦ K ρ K†` is
/// `conj(K) ⊗ K` and its Choi matrix is `vec(K) vec(K)†`; this permutation
/// maps one to the other and satisfies `reshuffle(reshuffle(M)) = M`.
pub fn reshuffle(m: &CMat, d: usize) -> Result<CMat, NumericsError> {
    if m.dim() != (d * d, d * d) {
        return Err(NumericsError::ShapeMismatch {
            expected: format!("{0}x{0}", d * d),
            found: format!("{}x{}", m.dim().0, m.dim().1),
        });
    }
    let mut out = CMat::zeros((d * d, d * d));
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                for e in 0..d {
                    out[(a * d + b, c * d + e)] = m[(e * d + b, c * d + a)];
                }
            }
        }
    }
    Ok(out)
}

/// Frobenius norm.
pub fn fro_norm(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Hermitian part `(A + A†)/2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    let ad = dagger(&a.view());
    (a + &ad).mapv(|z| z * 0.5)
}

/// `f(A)` for Hermitian `A` via eigendecomposition.
pub fn hermitian_func(a: &CMat, f: impl Fn(f64) -> f64) -> Result<CMat, NumericsError> {
    let (vals, vecs) = eigh_hermitian(a)?;
    let d = a.dim().0;
    let mut out = CMat::zeros((d, d));
    for k in 0..d {
        let fk = f(vals[k]);
        if fk == 0.0 {
            continue;
        }
        let col = vecs.column(k);
        for i in 0..d {
            for j in 0..d {
                out[(i, j)] += col[i] * col[j].conj() * fk;
            }
        }
    }
    Ok(out)
}
