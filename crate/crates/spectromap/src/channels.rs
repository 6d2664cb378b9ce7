//! Kraus-form CPTP maps, their real parameterization, and spectra.
//!
//! A channel of Kraus rank `r` on a `d`-dimensional system is
//! `T(ρ) = Σ_s K_s ρ K_s†` with `Σ_s K_s† K_s = I`. The parameterization used
//! for retrieval maps an unconstrained real vector θ of length `2 r d²` onto
//! the Kraus operators: θ is reassembled into a complex `r·d x d` matrix `G`
//! (first half real parts, second half imaginary parts, both row-major), the
//! unique QR factorization with positive-diagonal `R` yields an isometry `Q`,
//! and `Q` is split vertically into the `r` Kraus blocks. Every CPTP map of
//! rank ≤ r is reached by this map, and small steps in θ stay in the CPTP set.

use ndarray::s;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    dagger, eigh_hermitian, eigvals_general, fro_norm, qr_positive, reshuffle, unvec_col,
    vec_col, CMat, CVec, NumericsError, C64,
};

/// Errors from channel construction and analysis.
#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("Kraus operators do not satisfy the trace-preservation condition (deficit {deficit:.3e})")]
    NotCptp { deficit: f64 },
    #[error("parameter vector has length {found}, expected {expected} (= 2 r d²)")]
    BadParamLength { expected: usize, found: usize },
    #[error("operator shape mismatch: {0}")]
    Shape(String),
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("serialization: {0}")]
    Serialization(String),
}

/// A CPTP map in Kraus form.
#[derive(Clone, Debug)]
pub struct KrausMap {
    d: usize,
    ops: Vec<CMat>,
}

/// Tolerance on `‖Σ K†K − I‖_F` accepted at construction.
pub const CPTP_TOL: f64 = 1e-9;

impl KrausMap {
    /// Validating constructor: all operators `d x d`, `Σ K†K = I` within
    /// [`CPTP_TOL`] in Frobenius norm.
    pub fn from_operators(ops: Vec<CMat>) -> Result<Self, ChannelError> {
        if ops.is_empty() {
            return Err(ChannelError::Shape("no Kraus operators".into()));
        }
        let d = ops[0].dim().0;
        for k in &ops {
            if k.dim() != (d, d) {
                return Err(ChannelError::Shape(format!(
                    "expected {d}x{d}, found {}x{}",
                    k.dim().0,
                    k.dim().1
                )));
            }
        }
        let mut acc = CMat::zeros((d, d));
        for k in &ops {
            acc = acc + dagger(&k.view()).dot(k);
        }
        let deficit = fro_norm(&(&acc - &CMat::eye(d)));
        if deficit > CPTP_TOL {
            return Err(ChannelError::NotCptp { deficit });
        }
        Ok(KrausMap { d, ops })
    }

    /// Identity channel.
    pub fn identity(d: usize) -> Self {
        KrausMap { d, ops: vec![CMat::eye(d)] }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Kraus rank (number of stored operators).
    pub fn rank(&self) -> usize {
        self.ops.len()
    }

    pub fn operators(&self) -> &[CMat] {
        &self.ops
    }

    /// `T(ρ) = Σ K ρ K†`.
    pub fn apply(&self, rho: &CMat) -> CMat {
        let mut out = CMat::zeros((self.d, self.d));
        for k in &self.ops {
            out = out + k.dot(rho).dot(&dagger(&k.view()));
        }
        out
    }

    /// Action on a column-stacked vector, without materializing the
    /// superoperator: `y = S x` where `S = Σ conj(K) ⊗ K`.
    pub fn apply_vec(&self, x: &CVec) -> CVec {
        let rho = unvec_col(x, self.d, self.d);
        vec_col(&self.apply(&rho))
    }

    /// Superoperator `Σ conj(K) ⊗ K` in the column-stacking convention,
    /// assembled as the reshuffle of the Choi matrix: one Gram-matrix product
    /// instead of a Kronecker product per operator, which matters at large
    /// dimension.
    pub fn to_superop(&self) -> CMat {
        reshuffle(&self.to_choi(), self.d).expect("Choi matrix is d²×d² by construction")
    }

    /// Choi matrix `Σ vec(K) vec(K)†` (positive semidefinite, trace `d`),
    /// computed as `V V†` where the columns of `V` are the vectorized Kraus
    /// operators.
    pub fn to_choi(&self) -> CMat {
        let dd = self.d * self.d;
        let mut v = CMat::zeros((dd, self.ops.len()));
        for (j, k) in self.ops.iter().enumerate() {
            v.column_mut(j).assign(&vec_col(k));
        }
        let vh = dagger(&v.view());
        v.dot(&vh)
    }
}

/// Anything acting as a channel on density matrices.
///
/// Implemented by [`KrausMap`] and by [`SuperopChannel`], so that code
/// consuming ground-truth maps (e.g. synthetic tomography) works with both
/// Kraus sets and raw superoperators such as Lindblad exponentials.
pub trait ChannelApply {
    fn dim(&self) -> usize;
    fn apply(&self, rho: &CMat) -> CMat;
}

impl ChannelApply for KrausMap {
    fn dim(&self) -> usize {
        self.d
    }

    fn apply(&self, rho: &CMat) -> CMat {
        KrausMap::apply(self, rho)
    }
}

/// A channel held as its `d²×d²` superoperator in the column-stacking
/// convention.
#[derive(Clone, Debug)]
pub struct SuperopChannel {
    d: usize,
    s: CMat,
}

impl SuperopChannel {
    /// Wrap a `d²×d²` superoperator matrix.
    pub fn new(s: CMat) -> Result<Self, ChannelError> {
        let dd = s.dim().0;
        let d = (dd as f64).sqrt().round() as usize;
        if s.dim() != (dd, dd) || d * d != dd {
            return Err(ChannelError::Shape(format!(
                "superoperator must be d²×d², found {}x{}",
                s.dim().0,
                s.dim().1
            )));
        }
        Ok(SuperopChannel { d, s })
    }

    pub fn matrix(&self) -> &CMat {
        &self.s
    }
}

impl ChannelApply for SuperopChannel {
    fn dim(&self) -> usize {
        self.d
    }

    fn apply(&self, rho: &CMat) -> CMat {
        unvec_col(&self.s.dot(&vec_col(rho)), self.d, self.d)
    }
}

/// Real parameter vector θ for a rank-`r` channel on dimension `d`.
///
/// Layout: the first `r d²` entries are the real parts and the last `r d²`
/// the imaginary parts of the stacked `r·d x d` matrix `G`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub d: usize,
    pub r: usize,
    pub data: Vec<f64>,
}

impl ParamVector {
    pub fn new(d: usize, r: usize, data: Vec<f64>) -> Result<Self, ChannelError> {
        let expected = 2 * r * d * d;
        if data.len() != expected {
            return Err(ChannelError::BadParamLength { expected, found: data.len() });
        }
        Ok(ParamVector { d, r, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Reassemble the stacked complex matrix `G` (`r·d x d`).
    pub fn to_g(&self) -> CMat {
        let (d, r) = (self.d, self.r);
        let half = r * d * d;
        CMat::from_shape_fn((r * d, d), |(i, j)| {
            C64::new(self.data[i * d + j], self.data[half + i * d + j])
        })
    }

    /// Inverse of [`Self::to_g`].
    pub fn from_g(d: usize, r: usize, g: &CMat) -> Self {
        assert_eq!(g.dim(), (r * d, d));
        let half = r * d * d;
        let mut data = vec![0.0; 2 * half];
        for i in 0..r * d {
            for j in 0..d {
                data[i * d + j] = g[(i, j)].re;
                data[half + i * d + j] = g[(i, j)].im;
            }
        }
        ParamVector { d, r, data }
    }
}

/// Map an unconstrained parameter vector onto a CPTP map of rank ≤ `r`.
///
/// Fails with `RankDeficient` only on the measure-zero set where the stacked
/// matrix `G` loses column rank.
pub fn params_to_kraus(theta: &ParamVector) -> Result<KrausMap, ChannelError> {
    let g = theta.to_g();
    let (q, _r) = qr_positive(&g)?;
    let d = theta.d;
    let ops: Vec<CMat> = (0..theta.r)
        .map(|s_idx| q.slice(s![s_idx * d..(s_idx + 1) * d, ..]).to_owned())
        .collect();
    // Q has isometric columns by construction, so the CPTP condition holds to
    // rounding; validate anyway to keep the constructor's invariant.
    KrausMap::from_operators(ops)
}

/// Eigenvalue spectrum of a channel: `d²` complex values, sorted by modulus
/// descending, then real part descending, then imaginary part descending,
/// with the eigenvalue closest to 1 stored first.
///
/// Invariants checked at construction: an eigenvalue equals 1 (within 1e-8),
/// the multiset is closed under complex conjugation (within 1e-8), and no
/// modulus exceeds 1 + 1e-6.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    values: Vec<C64>,
}

impl Spectrum {
    pub fn new(mut values: Vec<C64>) -> Result<Self, ChannelError> {
        sort_spectrum(&mut values);
        if values.is_empty() {
            return Err(ChannelError::InvalidSpectrum("empty".into()));
        }
        // Locate the trivial eigenvalue. For maps with peripheral spectrum
        // (e.g. unitary channels) rounding noise in the moduli can sort
        // another unit-circle eigenvalue first, so search rather than insist
        // on index 0, then rotate the 1 to the front.
        let (k, dist) = values
            .iter()
            .enumerate()
            .map(|(i, z)| (i, (z - C64::new(1.0, 0.0)).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty");
        if dist > 1e-8 {
            return Err(ChannelError::InvalidSpectrum(format!(
                "no eigenvalue equal to 1 (closest is {})",
                values[k]
            )));
        }
        values[..=k].rotate_right(1);
        let max_mod = values.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if max_mod > 1.0 + 1e-6 {
            return Err(ChannelError::InvalidSpectrum(format!(
                "modulus {max_mod} exceeds 1"
            )));
        }
        // Conjugation closure: greedily pair each value with a conjugate.
        let mut unmatched: Vec<C64> = values.clone();
        while let Some(z) = unmatched.pop() {
            if z.im.abs() <= 1e-8 {
                continue;
            }
            let target = z.conj();
            let found = unmatched
                .iter()
                .enumerate()
                .map(|(i, w)| (i, (w - target).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match found {
                Some((i, dist)) if dist <= 1e-8 => {
                    unmatched.swap_remove(i);
                }
                _ => {
                    return Err(ChannelError::InvalidSpectrum(format!(
                        "no conjugate partner for {z}"
                    )))
                }
            }
        }
        Ok(Spectrum { values })
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Eigenvalues with the leading (trivial) one removed.
    pub fn bulk(&self) -> &[C64] {
        &self.values[1..]
    }

    /// CSV serialization with columns `re,im`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("re,im\n");
        for z in &self.values {
            out.push_str(&format!("{},{}\n", z.re, z.im));
        }
        out
    }

    /// Parse the format produced by [`Self::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, ChannelError> {
        let mut values = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (ln == 0 && line == "re,im") {
                continue;
            }
            let mut parts = line.split(',');
            let re: f64 = parts
                .next()
                .ok_or_else(|| ChannelError::Serialization(format!("line {}: missing re", ln + 1)))?
                .trim()
                .parse()
                .map_err(|e| ChannelError::Serialization(format!("line {}: {e}", ln + 1)))?;
            let im: f64 = parts
                .next()
                .ok_or_else(|| ChannelError::Serialization(format!("line {}: missing im", ln + 1)))?
                .trim()
                .parse()
                .map_err(|e| ChannelError::Serialization(format!("line {}: {e}", ln + 1)))?;
            if parts.next().is_some() {
                return Err(ChannelError::Serialization(format!(
                    "line {}: expected two columns",
                    ln + 1
                )));
            }
            values.push(C64::new(re, im));
        }
        Spectrum::new(values)
    }
}

/// Sort eigenvalues by modulus descending, then Re descending, then Im descending.
pub fn sort_spectrum(values: &mut [C64]) {
    values.sort_by(|a, b| {
        b.norm()
            .total_cmp(&a.norm())
            .then(b.re.total_cmp(&a.re))
            .then(b.im.total_cmp(&a.im))
    });
}

/// Spectrum of a channel (eigenvalues of its superoperator).
pub fn spectrum(map: &KrausMap) -> Result<Spectrum, ChannelError> {
    let s = map.to_superop();
    let vals = eigvals_general(&s)?;
    Spectrum::new(vals.to_vec())
}

/// Composition `a ∘ b` (apply `b` first, then `a`), with the Kraus rank of the
/// result capped at `d²` by an eigendecomposition of the composed Choi matrix.
pub fn compose(a: &KrausMap, b: &KrausMap) -> Result<KrausMap, ChannelError> {
    if a.dim() != b.dim() {
        return Err(ChannelError::Shape(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let d = a.dim();
    let s = a.to_superop().dot(&b.to_superop());
    let choi = reshuffle(&s, d)?;
    kraus_from_choi(&choi, d)
}

/// Kraus operators of a CP map from its (positive semidefinite) Choi matrix.
pub fn kraus_from_choi(choi: &CMat, d: usize) -> Result<KrausMap, ChannelError> {
    let (vals, vecs) = eigh_hermitian(choi)?;
    let vmax = vals.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let tol = vmax * 1e-12;
    let mut ops = Vec::new();
    for k in 0..vals.len() {
        if vals[k] > tol {
            let w = vecs.column(k).mapv(|z| z * vals[k].sqrt());
            ops.push(unvec_col(&w.to_owned(), d, d));
        }
    }
    KrausMap::from_operators(ops)
}

/// The unitary channel `ρ ↦ U ρ U†`.
pub fn unitary_channel(u: &CMat) -> Result<KrausMap, ChannelError> {
    let (m, n) = u.dim();
    if m != n {
        return Err(ChannelError::Shape(format!("expected square, found {m}x{n}")));
    }
    let ud = dagger(&u.view());
    let deficit = fro_norm(&(&ud.dot(u) - &CMat::eye(n)));
    if deficit > CPTP_TOL {
        return Err(ChannelError::NotCptp { deficit });
    }
    Ok(KrausMap { d: n, ops: vec![u.clone()] })
}

// --- file format ------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct KrausMapFile {
    d: usize,
    r: usize,
    /// Row-major [re, im] entries, one inner list per Kraus operator.
    kraus: Vec<Vec<[f64; 2]>>,
}

impl KrausMap {
    /// JSON serialization `{d, r, kraus}` with row-major `[re, im]` entries.
    pub fn to_json(&self) -> String {
        let file = KrausMapFile {
            d: self.d,
            r: self.rank(),
            kraus: self
                .ops
                .iter()
                .map(|k| k.iter().map(|z| [z.re, z.im]).collect())
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, ChannelError> {
        let file: KrausMapFile =
            serde_json::from_str(text).map_err(|e| ChannelError::Serialization(e.to_string()))?;
        if file.kraus.len() != file.r {
            return Err(ChannelError::Serialization(format!(
                "r = {} but {} operators present",
                file.r,
                file.kraus.len()
            )));
        }
        let d = file.d;
        let mut ops = Vec::with_capacity(file.r);
        for flat in &file.kraus {
            if flat.len() != d * d {
                return Err(ChannelError::Serialization(format!(
                    "operator has {} entries, expected {}",
                    flat.len(),
                    d * d
                )));
            }
            ops.push(CMat::from_shape_fn((d, d), |(i, j)| {
                C64::new(flat[i * d + j][0], flat[i * d + j][1])
            }));
        }
        KrausMap::from_operators(ops)
    }
}

/// Single-qubit Pauli matrices (I, X, Y, Z).
pub fn paulis() -> [CMat; 4] {
    let zero = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    [
        CMat::eye(2),
        CMat::from_shape_vec((2, 2), vec![zero, one, one, zero]).unwrap(),
        CMat::from_shape_vec((2, 2), vec![zero, -i, i, zero]).unwrap(),
        CMat::from_shape_vec((2, 2), vec![one, zero, zero, -one]).unwrap(),
    ]
}

/// Single-qubit depolarizing channel with error probability `p`:
/// `T(ρ) = (1 − p) ρ + p I/2`.
pub fn depolarizing(p: f64) -> KrausMap {
    let [id, x, y, z] = paulis();
    let ops = vec![
        id.mapv(|v| v * (1.0 - 3.0 * p / 4.0).sqrt()),
        x.mapv(|v| v * (p / 4.0).sqrt()),
        y.mapv(|v| v * (p / 4.0).sqrt()),
        z.mapv(|v| v * (p / 4.0).sqrt()),
    ];
    KrausMap::from_operators(ops).expect("depolarizing Kraus set is CPTP")
}
