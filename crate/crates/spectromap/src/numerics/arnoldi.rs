//! Krylov estimation of extreme eigenvalue moduli for large non-Hermitian
//! matrices, with optional deflation of one known eigenvalue through its left
//! eigenvector.
//!
//! Trace-preserving superoperators always have the leading eigenvalue 1 with
//! left eigenvector `vec(I)`; its orthogonal complement is exactly invariant,
//! so projecting the Krylov basis onto that complement removes the trivial
//! eigenvalue while leaving the rest of the spectrum untouched.

use ndarray_linalg::{Factorize, Solve};

use super::{eig_general, ginibre_with, CMat, CVec, NumericsError, Seed, C64};

fn project_out(x: &mut CVec, u: &CVec, u_norm_sqr: f64) {
    let overlap: C64 = u.iter().zip(x.iter()).map(|(a, b)| a.conj() * b).sum();
    let c = overlap / u_norm_sqr;
    for (xi, ui) in x.iter_mut().zip(u.iter()) {
        *xi -= ui * c;
    }
}

/// Ritz values of `matvec` from `steps` Arnoldi iterations, each paired with
/// its residual bound `|h_{m+1,m}| |e_mᵀ y|`. If `deflate` is given, the
/// iteration is confined to the orthogonal complement of that (left
/// eigenvector) direction.
pub fn arnoldi_ritz_values(
    mut matvec: impl FnMut(&CVec) -> CVec,
    dim: usize,
    steps: usize,
    deflate: Option<&CVec>,
    seed: Seed,
) -> Result<Vec<(C64, f64)>, NumericsError> {
    let steps = steps.min(dim.saturating_sub(usize::from(deflate.is_some()))).max(1);
    let u_norm_sqr = deflate.map(|u| u.iter().map(|z| z.norm_sqr()).sum::<f64>());

    let mut rng = seed.rng();
    let mut v0: CVec = ginibre_with(&mut rng, dim, 1).column(0).to_owned();
    if let (Some(u), Some(un)) = (deflate, u_norm_sqr) {
        project_out(&mut v0, u, un);
    }
    let n0 = v0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v0.mapv_inplace(|z| z / n0);

    let mut basis: Vec<CVec> = vec![v0];
    let mut h = CMat::zeros((steps + 1, steps));
    let mut m_eff = steps;
    let mut beta_last = 0.0;

    for j in 0..steps {
        let mut w = matvec(&basis[j]);
        if let (Some(u), Some(un)) = (deflate, u_norm_sqr) {
            project_out(&mut w, u, un);
        }
        // Modified Gram-Schmidt with one reorthogonalization pass.
        for _pass in 0..2 {
            for i in 0..=j {
                let c: C64 = basis[i].iter().zip(w.iter()).map(|(a, b)| a.conj() * b).sum();
                h[(i, j)] += c;
                for (wi, bi) in w.iter_mut().zip(basis[i].iter()) {
                    *wi -= bi * c;
                }
            }
        }
        let beta = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        h[(j + 1, j)] = C64::new(beta, 0.0);
        beta_last = beta;
        if beta < 1e-12 {
            m_eff = j + 1;
            break;
        }
        w.mapv_inplace(|z| z / beta);
        basis.push(w);
        beta_last = beta;
    }

    let h_sq = h.slice(ndarray::s![0..m_eff, 0..m_eff]).to_owned();
    let (vals, vecs) = eig_general(&h_sq)?;
    let mut out = Vec::with_capacity(m_eff);
    for k in 0..m_eff {
        let tail = vecs[(m_eff - 1, k)].norm();
        out.push((vals[k], beta_last * tail));
    }
    Ok(out)
}

/// Largest eigenvalue modulus of the operator given by `matvec`, as
/// `(estimate, relative residual bound)`.
pub fn max_modulus_arnoldi(
    matvec: impl FnMut(&CVec) -> CVec,
    dim: usize,
    steps: usize,
    deflate: Option<&CVec>,
    seed: Seed,
) -> Result<(f64, f64), NumericsError> {
    let ritz = arnoldi_ritz_values(matvec, dim, steps, deflate, seed)?;
    let (theta, res) = ritz
        .into_iter()
        .max_by(|a, b| a.0.norm().total_cmp(&b.0.norm()))
        .ok_or(NumericsError::NoConvergence)?;
    Ok((theta.norm(), res / theta.norm().max(f64::MIN_POSITIVE)))
}

/// Smallest eigenvalue modulus of `s`, estimated by Arnoldi iteration on
/// `s⁻¹` (one LU factorization, then triangular solves). Returns
/// `(estimate, relative residual bound)`.
pub fn shifted_inverse_extreme(
    s: &CMat,
    steps: usize,
    deflate: Option<&CVec>,
    seed: Seed,
) -> Result<(f64, f64), NumericsError> {
    let lu = s.factorize().map_err(|_| NumericsError::NoConvergence)?;
    let dim = s.dim().0;
    let matvec = |x: &CVec| -> CVec { lu.solve(x).expect("LU solve failed") };
    let ritz = arnoldi_ritz_values(matvec, dim, steps, deflate, seed)?;
    let (theta, res) = ritz
        .into_iter()
        .max_by(|a, b| a.0.norm().total_cmp(&b.0.norm()))
        .ok_or(NumericsError::NoConvergence)?;
    let tn = theta.norm();
    if tn == 0.0 {
        return Err(NumericsError::NoConvergence);
    }
    Ok((1.0 / tn, res / tn))
}
