//! Random generators of ground-truth channels: Lindblad-type generators with
//! their exponential maps, and the diluted-unitary ensemble together with the
//! asymptotic radii of its bulk spectrum.
//!
//! Generators act on column-stacked density matrices. A generator assembled
//! from a Hamiltonian `H` and a positive semidefinite dissipator `Φ_C` (held
//! in Choi form, `Φ_C = Σ_j vec(L_j) vec(L_j)†`) is
//!
//! ```text
//! L = −iα (I ⊗ H − Hᵀ ⊗ I) + reshuffle(Φ_C) − ½ (M ⊗ I + I ⊗ Mᵀ),
//! M = Tr_B(Φ_C) = (Σ_j L_j† L_j)ᵀ,
//! ```
//!
//! the vectorized form of
//! `ρ̇ = −iα [H, ρ] + Σ_j (L_j ρ L_j† − ½{L_j† L_j, ρ})`. The relative sign
//! between the two halves of the anticommutator term is the one for which
//! `vec(I)† L = 0` holds identically, i.e. the flow preserves the trace.
//!
//! Diluted unitaries mix a Haar-random unitary conjugation of weight `1 − p`
//! with a random rank-`r` dissipative channel of weight `p`. For large `d`
//! the bulk of their spectrum (everything except the trivial eigenvalue 1)
//! concentrates on an annulus, or a disc, with radii
//! `R± = √((1 − p)² ± p²/r)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::{ChannelError, KrausMap};
use crate::numerics::{
    dagger, eigh_hermitian, ginibre, haar_unitary, hermitian_part, kron, matrix_exp,
    partial_trace_b, qr_positive, reshuffle, unvec_col, CMat, NumericsError, Seed, C64,
};

/// Errors from ensemble sampling and map construction.
#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("invalid ensemble parameters: {0}")]
    InvalidParams(String),
    #[error(
        "exponential map is not completely positive \
         (most negative Choi eigenvalue {min_eig:.3e})"
    )]
    NotCp { min_eig: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Parameters of a random Lindblad-type generator: system dimension `d`,
/// dissipator rank `r` (number of jump operators), Hamiltonian weight
/// `alpha ≥ 0`, map strength `beta ≥ 0`, and the sampling seed.
///
/// `beta` does not enter the generator itself — it scales the exponent in
/// [`lindblad_map`] — but belongs to the parameter set because truth maps are
/// specified as `(generator, strength)` pairs.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LindbladParams {
    pub d: usize,
    pub r: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: Seed,
}

impl LindbladParams {
    /// Validating constructor: `d ≥ 2`, `1 ≤ r ≤ d²`, `alpha, beta ≥ 0`.
    pub fn new(
        d: usize,
        r: usize,
        alpha: f64,
        beta: f64,
        seed: Seed,
    ) -> Result<Self, EnsembleError> {
        if d < 2 {
            return Err(EnsembleError::InvalidParams(format!(
                "dimension must be at least 2, got {d}"
            )));
        }
        if r < 1 || r > d * d {
            return Err(EnsembleError::InvalidParams(format!(
                "dissipator rank must lie in [1, d²] = [1, {}], got {r}",
                d * d
            )));
        }
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(EnsembleError::InvalidParams(format!(
                "Hamiltonian weight must be finite and nonnegative, got {alpha}"
            )));
        }
        if !beta.is_finite() || beta < 0.0 {
            return Err(EnsembleError::InvalidParams(format!(
                "map strength must be finite and nonnegative, got {beta}"
            )));
        }
        Ok(LindbladParams { d, r, alpha, beta, seed })
    }
}

/// Parameters of the diluted-unitary ensemble: dimension `d`, dissipative
/// weight `p ∈ (0, 1)`, and dissipator Kraus rank `r ∈ [1, d²]`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DUParams {
    pub d: usize,
    pub p: f64,
    pub r: usize,
}

impl DUParams {
    /// Validating constructor for the ranges stated on the fields.
    pub fn new(d: usize, p: f64, r: usize) -> Result<Self, EnsembleError> {
        if d < 2 {
            return Err(EnsembleError::InvalidParams(format!(
                "dimension must be at least 2, got {d}"
            )));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(EnsembleError::InvalidParams(format!(
                "dissipative weight must lie strictly inside (0, 1), got {p}"
            )));
        }
        if r < 1 || r > d * d {
            return Err(EnsembleError::InvalidParams(format!(
                "Kraus rank must lie in [1, d²] = [1, {}], got {r}",
                d * d
            )));
        }
        Ok(DUParams { d, p, r })
    }
}

/// Assembles the generator superoperator from a Hamiltonian `h` (`d x d`,
/// Hermitian) and a Choi-form dissipator `phi_c` (`d² x d²`, positive
/// semidefinite):
///
/// `L = −iα (I ⊗ H − Hᵀ ⊗ I) + reshuffle(Φ_C) − ½ (M ⊗ I + I ⊗ Mᵀ)`
///
/// with `M = Tr_B(Φ_C)`. Building blocks are not re-validated beyond their
/// shapes; callers are expected to pass a Hermitian `h` and a PSD `phi_c`.
pub fn lindbladian_from_parts(
    alpha: f64,
    h: &CMat,
    phi_c: &CMat,
) -> Result<CMat, EnsembleError> {
    let d = h.dim().0;
    if h.dim() != (d, d) {
        return Err(NumericsError::ShapeMismatch {
            expected: "square Hamiltonian".into(),
            found: format!("{}x{}", h.dim().0, h.dim().1),
        }
        .into());
    }
    if phi_c.dim() != (d * d, d * d) {
        return Err(NumericsError::ShapeMismatch {
            expected: format!("{0}x{0} dissipator", d * d),
            found: format!("{}x{}", phi_c.dim().0, phi_c.dim().1),
        }
        .into());
    }
    let eye = CMat::eye(d);

    // M = Tr_B(Φ_C) equals (Σ L†L)ᵀ in the column-stacking convention, so the
    // anticommutator −½{Σ L†L, ρ} vectorizes to −½ (M ⊗ I + I ⊗ Mᵀ).
    let m = partial_trace_b(phi_c, d, d)?;
    let mt = m.t().to_owned();
    let sink = (kron(&m, &eye) + kron(&eye, &mt)).mapv(|z| z * (-0.5));

    let jump = reshuffle(phi_c, d)?;

    let ht = h.t().to_owned();
    let ham = (kron(&eye, h) - kron(&ht, &eye)).mapv(|z| z * C64::new(0.0, -alpha));

    Ok(ham + jump + sink)
}

/// Draws a random generator: `H = (G + G†)/2` from a `d x d` Ginibre matrix
/// (a GUE sample), and `Φ_C = G_φ G_φ†` from a `d² x r` Ginibre matrix, then
/// assembles them with weight `alpha` via [`lindbladian_from_parts`].
///
/// The result is `beta`-independent; [`lindblad_map`] applies the strength.
pub fn random_lindbladian(params: &LindbladParams) -> CMat {
    let d = params.d;
    let g = ginibre(d, d, params.seed.derive("hamiltonian"));
    let h = hermitian_part(&g);
    let g_phi = ginibre(d * d, params.r, params.seed.derive("dissipator"));
    let phi_c = g_phi.dot(&dagger(&g_phi.view()));
    lindbladian_from_parts(params.alpha, &h, &phi_c)
        .expect("shapes are consistent by construction")
}

/// Exponentiates a generator into a channel: the superoperator `exp(βL)` and
/// its Kraus form, extracted from the Choi eigendecomposition. Eigenvalues
/// down to −1e-6 are treated as rounding noise and clipped at zero; anything
/// more negative reports [`EnsembleError::NotCp`], which signals a generator
/// that is not of Lindblad type (or a sign error in its assembly).
pub fn lindblad_map(l: &CMat, beta: f64) -> Result<(CMat, KrausMap), EnsembleError> {
    let side = l.dim().0;
    if l.dim() != (side, side) {
        return Err(NumericsError::ShapeMismatch {
            expected: "square generator".into(),
            found: format!("{}x{}", l.dim().0, l.dim().1),
        }
        .into());
    }
    let d = (side as f64).sqrt().round() as usize;
    if d * d != side {
        return Err(EnsembleError::InvalidParams(format!(
            "generator side {side} is not the square of a system dimension"
        )));
    }
    if !beta.is_finite() || beta < 0.0 {
        return Err(EnsembleError::InvalidParams(format!(
            "map strength must be finite and nonnegative, got {beta}"
        )));
    }

    let superop = matrix_exp(&l.mapv(|z| z * beta))?;

    // The Choi matrix of exp(βL) is Hermitian up to rounding; symmetrize
    // before the eigendecomposition so the clip thresholds see real spectra.
    let choi = hermitian_part(&reshuffle(&superop, d)?);
    let (vals, vecs) = eigh_hermitian(&choi)?;
    let min_eig = vals[0];
    if min_eig < -1e-6 {
        return Err(EnsembleError::NotCp { min_eig });
    }
    let vmax = vals[vals.len() - 1].max(0.0);
    let cut = vmax * 1e-12;
    let mut ops = Vec::new();
    for k in 0..vals.len() {
        if vals[k] > cut {
            let w = vecs.column(k).mapv(|z| z * vals[k].sqrt());
            ops.push(unvec_col(&w, d, d));
        }
    }
    let kraus = KrausMap::from_operators(ops)?;
    Ok((superop, kraus))
}

/// Samples a diluted unitary: the Kraus set `{√(1−p) · U} ∪ {√p · K_j}` with
/// `U` Haar-distributed and `{K_j}` a complete rank-`r` Kraus set obtained by
/// splitting the Q factor of an `rd x d` Ginibre matrix into `r` blocks. Both
/// parts are trace-preserving on their own, so the mixture is CPTP for any
/// `p`.
pub fn sample_diluted_unitary(params: &DUParams, seed: Seed) -> KrausMap {
    let DUParams { d, p, r } = *params;
    let u = haar_unitary(d, seed.derive("unitary"));
    let g = ginibre(r * d, d, seed.derive("dissipator"));
    let (q, _) = qr_positive(&g).expect("Ginibre matrices are almost surely full rank");

    let mut ops = Vec::with_capacity(r + 1);
    ops.push(u.mapv(|z| z * (1.0 - p).sqrt()));
    let sp = p.sqrt();
    for j in 0..r {
        let block = q.slice(ndarray::s![j * d..(j + 1) * d, ..]).mapv(|z| z * sp);
        ops.push(block);
    }
    KrausMap::from_operators(ops).expect("a mixture of two trace-preserving parts is CPTP")
}

/// Asymptotic bulk radii `R± = √((1−p)² ± p²/r)` of the diluted-unitary
/// ensemble, returned as `(R₋, R₊)`. `R₋` is `None` when `(1−p)² < p²/r`,
/// where the annulus closes into a disc.
pub fn du_radii(p: f64, r: usize) -> (Option<f64>, f64) {
    assert!((0.0..=1.0).contains(&p), "dissipative weight out of range: {p}");
    assert!(r >= 1, "Kraus rank must be at least 1");
    let a = (1.0 - p) * (1.0 - p);
    let b = p * p / r as f64;
    let r_plus = (a + b).sqrt();
    let r_minus = if a < b { None } else { Some((a - b).sqrt()) };
    (r_minus, r_plus)
}
