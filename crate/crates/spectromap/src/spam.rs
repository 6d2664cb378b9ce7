//! State-preparation and measurement (SPAM) models and their parameterizations.
//!
//! Two readout models are supported. The *corruption* model composes ideal
//! projective readout with a column-stochastic confusion matrix `C`, so the
//! outcome distribution is `p_j = Σ_l C_jl ⟨l|ρ|l⟩`; it is what the
//! measurement-prediction formula consumes. The *POVM* model keeps a full set
//! of effects `{E_j}` (positive, summing to the identity) and reduces to a
//! corruption matrix through the diagonal map `C_jl = (E_j)_ll`.
//!
//! Both models come with surjective unconstrained parameterizations used by
//! the fitters: an arbitrary complex matrix `A` maps to the state
//! `ρ0 = A A† / Tr(A A†)`, an arbitrary real matrix maps to a stochastic
//! matrix by column-wise absolute-value normalization, and a list of Ginibre
//! factors `{G_j}` maps to a POVM by `E_j = D^{-1/2} G_j G_j† D^{-1/2}` with
//! `D = Σ_j G_j G_j†`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    assignment::min_cost_assignment, dagger, eigh_hermitian, fro_norm, ginibre_with,
    hermitian_func, hermitian_part, trace, CMat, NumericsError, RMat, Seed, C64,
};

/// Errors from SPAM-model construction and analysis.
#[derive(Debug, Error)]
pub enum SpamError {
    #[error("state factor A A† has vanishing trace")]
    ZeroTrace,
    #[error("corruption factor column {0} sums to zero")]
    ZeroColumn(usize),
    #[error("state is not a density matrix: {0}")]
    NotState(String),
    #[error("matrix is not column-stochastic: {0}")]
    NotStochastic(String),
    #[error("effects do not form a POVM: {0}")]
    NotPovm(String),
    #[error("parameter vector has length {found}, expected {expected}")]
    BadParamLength { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("serialization: {0}")]
    Serialization(String),
}

/// Tolerance on Hermiticity, positivity and normalization checks at
/// construction.
pub const SPAM_TOL: f64 = 1e-9;

// --- corruption-model SPAM ---------------------------------------------------

/// Prepared state plus classical readout confusion.
///
/// `rho0` is a density matrix (the state actually prepared when the ideal
/// `|0…0⟩` is requested) and `corruption` is column-stochastic: entry `(j, l)`
/// is the probability of observing outcome `j` given the post-circuit state
/// `|l⟩`.
#[derive(Clone, Debug)]
pub struct SpamModel {
    rho0: CMat,
    corruption: RMat,
}

impl SpamModel {
    /// Validating constructor: `rho0` Hermitian, PSD, unit trace; `corruption`
    /// square of matching dimension, entrywise nonnegative, columns summing to
    /// one. All checks within [`SPAM_TOL`].
    pub fn new(rho0: CMat, corruption: RMat) -> Result<Self, SpamError> {
        let d = rho0.dim().0;
        if rho0.dim() != (d, d) || d == 0 {
            return Err(SpamError::Shape(format!(
                "state must be square and nonempty, found {}x{}",
                rho0.dim().0,
                rho0.dim().1
            )));
        }
        if corruption.dim() != (d, d) {
            return Err(SpamError::Shape(format!(
                "corruption must be {d}x{d}, found {}x{}",
                corruption.dim().0,
                corruption.dim().1
            )));
        }
        let herm_dev = fro_norm(&(&rho0 - &dagger(&rho0.view())));
        if herm_dev > SPAM_TOL {
            return Err(SpamError::NotState(format!(
                "Hermiticity deviation {herm_dev:.3e}"
            )));
        }
        let tr_dev = (trace(&rho0) - C64::new(1.0, 0.0)).norm();
        if tr_dev > SPAM_TOL {
            return Err(SpamError::NotState(format!("trace deviates by {tr_dev:.3e}")));
        }
        let (evals, _) = eigh_hermitian(&hermitian_part(&rho0))?;
        if let Some(min) = evals.iter().cloned().reduce(f64::min) {
            if min < -SPAM_TOL {
                return Err(SpamError::NotState(format!("eigenvalue {min:.3e} < 0")));
            }
        }
        for ((j, l), &v) in corruption.indexed_iter() {
            if v < -SPAM_TOL {
                return Err(SpamError::NotStochastic(format!(
                    "entry ({j}, {l}) = {v:.3e} < 0"
                )));
            }
        }
        for l in 0..d {
            let s: f64 = corruption.column(l).sum();
            if (s - 1.0).abs() > SPAM_TOL {
                return Err(SpamError::NotStochastic(format!(
                    "column {l} sums to {s}"
                )));
            }
        }
        Ok(SpamModel { rho0, corruption })
    }

    /// Ideal SPAM: `ρ0 = |0⟩⟨0|`, no readout confusion.
    pub fn ideal(d: usize) -> Self {
        let mut rho0 = CMat::zeros((d, d));
        rho0[(0, 0)] = C64::new(1.0, 0.0);
        SpamModel { rho0, corruption: RMat::eye(d) }
    }

    pub fn dim(&self) -> usize {
        self.rho0.dim().0
    }

    pub fn rho0(&self) -> &CMat {
        &self.rho0
    }

    pub fn corruption(&self) -> &RMat {
        &self.corruption
    }

    /// The corruption rows as diagonal POVM effects `E_j = Σ_l C_jl |l⟩⟨l|`.
    ///
    /// Useful for code paths that treat both readout models uniformly.
    pub fn effects(&self) -> Vec<CMat> {
        let d = self.dim();
        (0..d)
            .map(|j| {
                let mut e = CMat::zeros((d, d));
                for l in 0..d {
                    e[(l, l)] = C64::new(self.corruption[(j, l)], 0.0);
                }
                e
            })
            .collect()
    }

    /// JSON serialization `{d, rho0, corruption}` with row-major entries.
    pub fn to_json(&self) -> String {
        let d = self.dim();
        let file = SpamModelFile {
            d,
            rho0: self.rho0.iter().map(|z| [z.re, z.im]).collect(),
            corruption: self.corruption.iter().cloned().collect(),
        };
        serde_json::to_string_pretty(&file).expect("serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, SpamError> {
        let file: SpamModelFile =
            serde_json::from_str(text).map_err(|e| SpamError::Serialization(e.to_string()))?;
        let d = file.d;
        if file.rho0.len() != d * d || file.corruption.len() != d * d {
            return Err(SpamError::Serialization(format!(
                "expected {} entries per block, found {} and {}",
                d * d,
                file.rho0.len(),
                file.corruption.len()
            )));
        }
        let rho0 =
            CMat::from_shape_fn((d, d), |(i, j)| {
                C64::new(file.rho0[i * d + j][0], file.rho0[i * d + j][1])
            });
        let corruption = RMat::from_shape_vec((d, d), file.corruption)
            .map_err(|e| SpamError::Serialization(e.to_string()))?;
        SpamModel::new(rho0, corruption)
    }
}

#[derive(Serialize, Deserialize)]
struct SpamModelFile {
    d: usize,
    /// Row-major `[re, im]` entries of the prepared state.
    rho0: Vec<[f64; 2]>,
    /// Row-major entries of the confusion matrix.
    corruption: Vec<f64>,
}

/// Unconstrained SPAM parameters for the corruption model: `3 d²` reals.
///
/// Layout: `Re A_ρ` (row-major, `d²`), `Im A_ρ` (`d²`), then the real
/// corruption factor `A_C` (row-major, `d²`). `A_ρ` maps to the state through
/// [`params_to_state`]; `A_C` maps to the confusion matrix through
/// [`params_to_corruption`].
#[derive(Clone, Debug)]
pub struct SpamParams {
    pub d: usize,
    pub data: Vec<f64>,
}

impl SpamParams {
    pub fn new(d: usize, data: Vec<f64>) -> Result<Self, SpamError> {
        if data.len() != 3 * d * d {
            return Err(SpamError::BadParamLength { expected: 3 * d * d, found: data.len() });
        }
        Ok(SpamParams { d, data })
    }

    /// The complex state factor `A_ρ`.
    pub fn state_factor(&self) -> CMat {
        let d = self.d;
        CMat::from_shape_fn((d, d), |(i, j)| {
            C64::new(self.data[i * d + j], self.data[d * d + i * d + j])
        })
    }

    /// The real corruption factor `A_C`.
    pub fn corruption_factor(&self) -> RMat {
        let d = self.d;
        RMat::from_shape_fn((d, d), |(i, j)| self.data[2 * d * d + i * d + j])
    }

    /// Assemble the corresponding model.
    pub fn to_model(&self) -> Result<SpamModel, SpamError> {
        let rho0 = params_to_state(&self.state_factor())?;
        let corruption = params_to_corruption(&self.corruption_factor())?;
        SpamModel::new(rho0, corruption)
    }
}

/// `ρ0 = A A† / Tr(A A†)`: surjective onto density matrices of the factor's
/// rank.
pub fn params_to_state(a: &CMat) -> Result<CMat, SpamError> {
    let aad = a.dot(&dagger(&a.view()));
    let t = trace(&aad).re;
    if t <= f64::EPSILON * a.len() as f64 {
        return Err(SpamError::ZeroTrace);
    }
    Ok(aad.mapv(|z| z / t))
}

/// Column-stochastic matrix from an arbitrary real factor:
/// `C_jl = |A_jl| / Σ_k |A_kl|`.
pub fn params_to_corruption(a: &RMat) -> Result<RMat, SpamError> {
    let (rows, cols) = a.dim();
    let mut c = RMat::zeros((rows, cols));
    for l in 0..cols {
        let s: f64 = a.column(l).iter().map(|v| v.abs()).sum();
        if s <= f64::EPSILON * rows as f64 {
            return Err(SpamError::ZeroColumn(l));
        }
        for j in 0..rows {
            c[(j, l)] = a[(j, l)].abs() / s;
        }
    }
    Ok(c)
}

// --- POVM-model SPAM ----------------------------------------------------------

/// A positive operator-valued measure: effects `E_j ⪰ 0` with `Σ_j E_j = I`.
#[derive(Clone, Debug)]
pub struct PovmSet {
    d: usize,
    elements: Vec<CMat>,
}

impl PovmSet {
    /// Validating constructor: every effect Hermitian PSD, the set summing to
    /// the identity, all within [`SPAM_TOL`].
    pub fn new(elements: Vec<CMat>) -> Result<Self, SpamError> {
        if elements.is_empty() {
            return Err(SpamError::NotPovm("no effects".into()));
        }
        let d = elements[0].dim().0;
        let mut sum = CMat::zeros((d, d));
        for (j, e) in elements.iter().enumerate() {
            if e.dim() != (d, d) {
                return Err(SpamError::Shape(format!(
                    "effect {j} is {}x{}, expected {d}x{d}",
                    e.dim().0,
                    e.dim().1
                )));
            }
            let herm_dev = fro_norm(&(e - &dagger(&e.view())));
            if herm_dev > SPAM_TOL {
                return Err(SpamError::NotPovm(format!(
                    "effect {j} Hermiticity deviation {herm_dev:.3e}"
                )));
            }
            let (evals, _) = eigh_hermitian(&hermitian_part(e))?;
            if let Some(min) = evals.iter().cloned().reduce(f64::min) {
                if min < -SPAM_TOL {
                    return Err(SpamError::NotPovm(format!(
                        "effect {j} has eigenvalue {min:.3e} < 0"
                    )));
                }
            }
            sum = sum + e;
        }
        let dev = fro_norm(&(&sum - &CMat::eye(d)));
        if dev > SPAM_TOL {
            return Err(SpamError::NotPovm(format!(
                "effects sum deviates from identity by {dev:.3e}"
            )));
        }
        Ok(PovmSet { d, elements })
    }

    /// Ideal computational-basis readout `E_j = |j⟩⟨j|`.
    pub fn ideal(d: usize) -> Self {
        let elements = (0..d)
            .map(|j| {
                let mut e = CMat::zeros((d, d));
                e[(j, j)] = C64::new(1.0, 0.0);
                e
            })
            .collect();
        PovmSet { d, elements }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn outcomes(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[CMat] {
        &self.elements
    }

    /// JSON serialization `{d, n_out, elements}` with row-major `[re, im]`
    /// entries, one inner list per effect.
    pub fn to_json(&self) -> String {
        let file = PovmFile {
            d: self.d,
            n_out: self.elements.len(),
            elements: self
                .elements
                .iter()
                .map(|e| e.iter().map(|z| [z.re, z.im]).collect())
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, SpamError> {
        let file: PovmFile =
            serde_json::from_str(text).map_err(|e| SpamError::Serialization(e.to_string()))?;
        if file.elements.len() != file.n_out {
            return Err(SpamError::Serialization(format!(
                "n_out = {} but {} effects present",
                file.n_out,
                file.elements.len()
            )));
        }
        let d = file.d;
        let mut elements = Vec::with_capacity(file.n_out);
        for flat in &file.elements {
            if flat.len() != d * d {
                return Err(SpamError::Serialization(format!(
                    "effect has {} entries, expected {}",
                    flat.len(),
                    d * d
                )));
            }
            elements.push(CMat::from_shape_fn((d, d), |(i, j)| {
                C64::new(flat[i * d + j][0], flat[i * d + j][1])
            }));
        }
        PovmSet::new(elements)
    }
}

#[derive(Serialize, Deserialize)]
struct PovmFile {
    d: usize,
    n_out: usize,
    elements: Vec<Vec<[f64; 2]>>,
}

/// Unconstrained POVM parameters: one complex Ginibre factor per outcome,
/// `2 n_out d²` reals in total.
///
/// Layout: for each outcome `j` in order, `Re G_j` (row-major, `d²`) followed
/// by `Im G_j` (`d²`). The factors map to effects through
/// [`povm_from_ginibre`].
#[derive(Clone, Debug)]
pub struct PovmParams {
    pub d: usize,
    pub n_out: usize,
    pub data: Vec<f64>,
}

impl PovmParams {
    pub fn new(d: usize, n_out: usize, data: Vec<f64>) -> Result<Self, SpamError> {
        if data.len() != 2 * n_out * d * d {
            return Err(SpamError::BadParamLength {
                expected: 2 * n_out * d * d,
                found: data.len(),
            });
        }
        Ok(PovmParams { d, n_out, data })
    }

    /// The complex factors `{G_j}`.
    pub fn factors(&self) -> Vec<CMat> {
        let d = self.d;
        (0..self.n_out)
            .map(|j| {
                let base = 2 * j * d * d;
                CMat::from_shape_fn((d, d), |(i, k)| {
                    C64::new(self.data[base + i * d + k], self.data[base + d * d + i * d + k])
                })
            })
            .collect()
    }

    pub fn to_povm(&self) -> Result<PovmSet, SpamError> {
        povm_from_ginibre(&self.factors())
    }
}

/// POVM from arbitrary complex factors: with `H_j = G_j G_j†` and
/// `D = Σ_j H_j`, the effects are `E_j = D^{-1/2} H_j D^{-1/2}`.
///
/// Surjective onto POVMs with invertible `D`; positivity and completeness hold
/// by construction.
pub fn povm_from_ginibre(factors: &[CMat]) -> Result<PovmSet, SpamError> {
    if factors.is_empty() {
        return Err(SpamError::NotPovm("no factors".into()));
    }
    let d = factors[0].dim().0;
    let mut dsum = CMat::zeros((d, d));
    let hs: Vec<CMat> = factors
        .iter()
        .map(|g| {
            let h = g.dot(&dagger(&g.view()));
            dsum = &dsum + &h;
            h
        })
        .collect();
    let dinv_sqrt = hermitian_func(&dsum, |x| {
        if x <= 0.0 {
            0.0
        } else {
            1.0 / x.sqrt()
        }
    })?;
    let elements = hs
        .iter()
        .map(|h| dinv_sqrt.dot(h).dot(&dinv_sqrt))
        .map(|e| hermitian_part(&e))
        .collect();
    PovmSet::new(elements)
}

/// The effective confusion matrix of a POVM under ideal state preparation:
/// `C_jl = (E_j)_ll`. Column-stochastic whenever the effects form a POVM.
pub fn povm_to_corruption(povm: &PovmSet) -> RMat {
    let d = povm.dim();
    let mut c = RMat::zeros((povm.outcomes(), d));
    for (j, e) in povm.elements().iter().enumerate() {
        for l in 0..d {
            c[(j, l)] = e[(l, l)].re.max(0.0);
        }
    }
    c
}

/// Diagonal-POVM view of a square confusion matrix: effects
/// `E_j = Σ_l C_jl |l⟩⟨l|`.
///
/// Right inverse of [`povm_to_corruption`] on computational-basis-diagonal
/// readouts; it lets confusion-matrix fits be scored with [`povm_fidelity`].
pub fn corruption_to_povm(c: &RMat) -> Result<PovmSet, SpamError> {
    let (rows, cols) = c.dim();
    if rows != cols {
        return Err(SpamError::Shape(format!(
            "confusion matrix is {rows}x{cols}, expected square"
        )));
    }
    let elements = (0..rows)
        .map(|j| {
            let mut e = CMat::zeros((cols, cols));
            for l in 0..cols {
                e[(l, l)] = C64::new(c[(j, l)], 0.0);
            }
            e
        })
        .collect();
    PovmSet::new(elements)
}

/// Mean effect fidelity between two POVMs with matching outcome counts:
/// `F = (1/d) Σ_j Tr √(√A_j B_j √A_j)`.
///
/// Equals 1 exactly when the POVMs coincide.
pub fn povm_fidelity(a: &PovmSet, b: &PovmSet) -> Result<f64, SpamError> {
    if a.dim() != b.dim() || a.outcomes() != b.outcomes() {
        return Err(SpamError::Shape(format!(
            "POVMs of dimension {} / {} with {} / {} outcomes",
            a.dim(),
            b.dim(),
            a.outcomes(),
            b.outcomes()
        )));
    }
    let mut total = 0.0;
    for (ea, eb) in a.elements().iter().zip(b.elements()) {
        let sa = hermitian_func(ea, |x| x.max(0.0).sqrt())?;
        let m = sa.dot(eb).dot(&sa);
        let (evals, _) = eigh_hermitian(&hermitian_part(&m))?;
        total += evals.iter().map(|&x| x.max(0.0).sqrt()).sum::<f64>();
    }
    Ok(total / a.dim() as f64)
}

/// Benchmark SPAM with tunable quality: the prepared state is
/// `c1 |0⟩⟨0| + (1 − c1) δρ` with `δρ` a random density matrix, and the
/// readout POVM is `E_j = c2 |j⟩⟨j| + (1 − c2) δE_j` with `{δE_j}` a random
/// POVM. Returns the corruption-model view (reduced through
/// [`povm_to_corruption`]) alongside the full POVM.
pub fn synthetic_spam(d: usize, c1: f64, c2: f64, seed: Seed) -> (SpamModel, PovmSet) {
    assert!((0.0..=1.0).contains(&c1) && (0.0..=1.0).contains(&c2));
    let mut rng = seed.rng();
    let g = ginibre_with(&mut rng, d, d);
    let delta_rho = params_to_state(&g).expect("Ginibre factor has nonzero trace");
    let mut rho0 = delta_rho.mapv(|z| z * (1.0 - c1));
    rho0[(0, 0)] += c1;

    let factors: Vec<CMat> = (0..d).map(|_| ginibre_with(&mut rng, d, d)).collect();
    let delta = povm_from_ginibre(&factors).expect("Ginibre factors give a valid POVM");
    let elements: Vec<CMat> = delta
        .elements()
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let mut out = e.mapv(|z| z * (1.0 - c2));
            out[(j, j)] += c2;
            out
        })
        .collect();
    let povm = PovmSet::new(elements).expect("convex mixture of POVMs is a POVM");
    let model = SpamModel::new(rho0, povm_to_corruption(&povm))
        .expect("synthetic state and corruption are valid");
    (model, povm)
}

// --- canonicalization ---------------------------------------------------------

/// Undo the basis-relabeling gauge freedom of a fitted SPAM model.
///
/// Tomography data cannot distinguish a model from its relabeled twin
/// `(P ρ0 P†, C Pᵀ)` for a permutation matrix `P`: the model's internal basis
/// labels are arbitrary, while outcome labels (rows of `C`) are physical.
/// This searches all `d!` relabelings for the one minimizing
/// `‖ρ0′ − |0⟩⟨0|‖_F + ‖C′ − I‖_F` and returns the relabeled model together
/// with the permutation `σ` (new index → old index). The search is exact:
/// for each candidate image of index 0 the remaining labels reduce to a
/// linear assignment problem.
pub fn canonicalize_spam(model: &SpamModel) -> (SpamModel, Vec<usize>) {
    let d = model.dim();
    let rho_diag: Vec<f64> = (0..d).map(|l| model.rho0[(l, l)].re).collect();
    let rho_sq = fro_norm(&model.rho0).powi(2);
    let sigma = best_relabeling(rho_sq, &rho_diag, &model.corruption);
    let rho0 = CMat::from_shape_fn((d, d), |(a, b)| model.rho0[(sigma[a], sigma[b])]);
    let corruption = RMat::from_shape_fn((d, d), |(j, l)| model.corruption[(j, sigma[l])]);
    let out = SpamModel::new(rho0, corruption)
        .expect("relabeling preserves state and stochasticity");
    (out, sigma)
}

/// POVM-model analogue of [`canonicalize_spam`]: the same relabeling acts on
/// the state by conjugation and on every effect by `E_j′[a, b] = E_j[σ(a), σ(b)]`,
/// scored through the effective confusion matrix.
pub fn canonicalize_povm(rho0: &CMat, povm: &PovmSet) -> (CMat, PovmSet, Vec<usize>) {
    let d = povm.dim();
    let c = povm_to_corruption(povm);
    let rho_diag: Vec<f64> = (0..d).map(|l| rho0[(l, l)].re).collect();
    let rho_sq = fro_norm(rho0).powi(2);
    let sigma = best_relabeling(rho_sq, &rho_diag, &c);
    let rho_out = CMat::from_shape_fn((d, d), |(a, b)| rho0[(sigma[a], sigma[b])]);
    let elements = povm
        .elements()
        .iter()
        .map(|e| CMat::from_shape_fn((d, d), |(a, b)| e[(sigma[a], sigma[b])]))
        .collect();
    let povm_out = PovmSet::new(elements).expect("relabeling preserves the POVM");
    (rho_out, povm_out, sigma)
}

/// Exact minimizer of `‖ρ0′ − |0⟩⟨0|‖_F + ‖C′ − I‖_F` over relabelings.
///
/// Both norms depend on σ only through `ρ_diag[σ(0)]` and `Σ_l C[l, σ(l)]`,
/// so fixing `σ(0) = m` turns the rest into a linear assignment problem;
/// the outer loop over `m` keeps the square roots exact.
fn best_relabeling(rho_sq: f64, rho_diag: &[f64], c: &RMat) -> Vec<usize> {
    let d = rho_diag.len();
    if d == 1 {
        return vec![0];
    }
    let c_sq: f64 = c.iter().map(|v| v * v).sum();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for m in 0..d {
        let cols: Vec<usize> = (0..d).filter(|&k| k != m).collect();
        let cost: Vec<Vec<f64>> = (1..d)
            .map(|l| cols.iter().map(|&k| -c[(l, k)]).collect())
            .collect();
        let (assign, _) = min_cost_assignment(&cost);
        let mut sigma = vec![m];
        sigma.extend(assign.iter().map(|&k| cols[k]));
        let diag_sum: f64 = (0..d).map(|l| c[(l, sigma[l])]).sum();
        let state_term = (rho_sq + 1.0 - 2.0 * rho_diag[m]).max(0.0).sqrt();
        let corr_term = (c_sq + d as f64 - 2.0 * diag_sum).max(0.0).sqrt();
        let objective = state_term + corr_term;
        if best.as_ref().map_or(true, |(b, _)| objective < *b) {
            best = Some((objective, sigma));
        }
    }
    best.expect("at least one relabeling").1
}
