//! Pauli-string measurement modes, outcome-probability prediction, synthetic
//! shot sampling, and the tomography dataset format.
//!
//! A mode pairs a per-qubit preparation among the six Pauli eigenstates with a
//! per-qubit measurement basis among x, y, z — `18ⁿ` modes in total. For a
//! mode `(s, b)`, a channel `T` and SPAM model `(ρ0, C)`, the predicted
//! outcome distribution is
//! `p_j = Σ_l C_jl (P_b T(P_s ρ0 P_s†) P_b†)_ll`,
//! where `P_s` prepares the requested product state from `ρ0` and `P_b`
//! rotates the measurement basis onto the computational one. Qubit 1 is the
//! most significant bit of the outcome index.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::channels::ChannelApply;
use crate::numerics::{dagger, kron, CMat, RMat, Seed, C64};
use crate::spam::{PovmSet, SpamModel};

/// Version tag of the single-qubit preparation/measurement gate tables; part
/// of the dataset file contract.
pub const GATE_CONVENTION: &str = "v1";

/// Errors from mode handling, sampling and dataset I/O.
#[derive(Debug, Error)]
pub enum TomographyError {
    #[error("requested {requested} modes but only {available} exist")]
    TooManyModes { requested: u64, available: u64 },
    #[error("malformed mode string: {0}")]
    BadMode(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mode {mode_index}: probability {value} outside [0, 1]")]
    InvalidProbabilities { mode_index: usize, value: f64 },
    #[error("invalid dataset: {0}")]
    BadDataset(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-qubit preparation: the six single-qubit Pauli eigenstates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Prep {
    XPlus,
    XMinus,
    YPlus,
    YMinus,
    ZPlus,
    ZMinus,
}

impl Prep {
    /// All preparations, in the encoding order used by mode indices.
    pub const ALL: [Prep; 6] =
        [Prep::XPlus, Prep::XMinus, Prep::YPlus, Prep::YMinus, Prep::ZPlus, Prep::ZMinus];

    fn token(self) -> &'static str {
        match self {
            Prep::XPlus => "+x",
            Prep::XMinus => "-x",
            Prep::YPlus => "+y",
            Prep::YMinus => "-y",
            Prep::ZPlus => "+z",
            Prep::ZMinus => "-z",
        }
    }
}

/// Per-qubit measurement basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Basis {
    X,
    Y,
    Z,
}

impl Basis {
    /// All bases, in the encoding order used by mode indices.
    pub const ALL: [Basis; 3] = [Basis::X, Basis::Y, Basis::Z];

    fn token(self) -> char {
        match self {
            Basis::X => 'x',
            Basis::Y => 'y',
            Basis::Z => 'z',
        }
    }
}

/// One tomography setting: a preparation string and a measurement-basis
/// string, one entry per qubit (qubit 1 first).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliMode {
    pub prep: Vec<Prep>,
    pub basis: Vec<Basis>,
}

impl PauliMode {
    pub fn new(prep: Vec<Prep>, basis: Vec<Basis>) -> Result<Self, TomographyError> {
        if prep.len() != basis.len() || prep.is_empty() {
            return Err(TomographyError::ShapeMismatch(format!(
                "{} preparations vs {} bases",
                prep.len(),
                basis.len()
            )));
        }
        Ok(PauliMode { prep, basis })
    }

    pub fn qubits(&self) -> usize {
        self.prep.len()
    }

    /// Encode as strings like `("+x-z+y", "xzy")`.
    pub fn encode(&self) -> (String, String) {
        let mut s = String::new();
        let mut b = String::new();
        for (&p, &m) in self.prep.iter().zip(&self.basis) {
            s.push_str(p.token());
            b.push(m.token());
        }
        (s, b)
    }

    /// Parse the string encoding produced by [`PauliMode::encode`].
    pub fn decode(s: &str, b: &str) -> Result<Self, TomographyError> {
        let sc: Vec<char> = s.chars().collect();
        if sc.len() % 2 != 0 || sc.is_empty() {
            return Err(TomographyError::BadMode(format!("prep string {s:?}")));
        }
        let mut prep = Vec::with_capacity(sc.len() / 2);
        for pair in sc.chunks(2) {
            prep.push(match (pair[0], pair[1]) {
                ('+', 'x') => Prep::XPlus,
                ('-', 'x') => Prep::XMinus,
                ('+', 'y') => Prep::YPlus,
                ('-', 'y') => Prep::YMinus,
                ('+', 'z') => Prep::ZPlus,
                ('-', 'z') => Prep::ZMinus,
                _ => return Err(TomographyError::BadMode(format!("prep token {pair:?}"))),
            });
        }
        let mut basis = Vec::with_capacity(b.len());
        for c in b.chars() {
            basis.push(match c {
                'x' => Basis::X,
                'y' => Basis::Y,
                'z' => Basis::Z,
                _ => return Err(TomographyError::BadMode(format!("basis token {c:?}"))),
            });
        }
        PauliMode::new(prep, basis)
    }

    /// Position in the canonical enumeration of all `18ⁿ` modes: one base-18
    /// digit `3·prep + basis` per qubit, qubit 1 most significant. Inverse of
    /// [`mode_from_index`].
    pub fn index(&self) -> u64 {
        let mut idx = 0u64;
        for (&p, &m) in self.prep.iter().zip(&self.basis) {
            let pd = Prep::ALL.iter().position(|&q| q == p).unwrap() as u64;
            let bd = Basis::ALL.iter().position(|&q| q == m).unwrap() as u64;
            idx = idx * 18 + pd * 3 + bd;
        }
        idx
    }
}

/// Total number of modes on `n` qubits: `18ⁿ`.
pub fn mode_count(n: usize) -> u64 {
    assert!(n >= 1);
    18u64.pow(n as u32)
}

/// The mode at a given position of the canonical enumeration (inverse of
/// [`PauliMode::index`]); qubit 1 is the most significant digit.
pub fn mode_from_index(n: usize, mut index: u64) -> PauliMode {
    let mut prep = vec![Prep::ZPlus; n];
    let mut basis = vec![Basis::Z; n];
    for q in (0..n).rev() {
        let digit = (index % 18) as usize;
        index /= 18;
        prep[q] = Prep::ALL[digit / 3];
        basis[q] = Basis::ALL[digit % 3];
    }
    PauliMode { prep, basis }
}

/// Draw `n_m` distinct modes uniformly without replacement, returned in
/// canonical index order.
pub fn sample_modes(n: usize, n_m: usize, seed: Seed) -> Result<Vec<PauliMode>, TomographyError> {
    let total = mode_count(n);
    if n_m as u64 > total {
        return Err(TomographyError::TooManyModes { requested: n_m as u64, available: total });
    }
    let mut rng = seed.rng();
    let indices: BTreeSet<u64> = if (n_m as u64) * 2 > total {
        // Dense regime: partial Fisher–Yates over the full enumeration.
        let mut all: Vec<u64> = (0..total).collect();
        for k in 0..n_m {
            let j = rng.random_range(k..all.len());
            all.swap(k, j);
        }
        all[..n_m].iter().cloned().collect()
    } else {
        // Sparse regime: rejection sampling.
        let mut set = BTreeSet::new();
        while set.len() < n_m {
            set.insert(rng.random_range(0..total));
        }
        set
    };
    Ok(indices.into_iter().map(|i| mode_from_index(n, i)).collect())
}

/// All `18ⁿ` modes in canonical order.
pub fn all_modes(n: usize) -> Vec<PauliMode> {
    (0..mode_count(n)).map(|i| mode_from_index(n, i)).collect()
}

fn hadamard() -> CMat {
    let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    CMat::from_shape_vec((2, 2), vec![h, h, h, -h]).unwrap()
}

fn pauli_x() -> CMat {
    let zero = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    CMat::from_shape_vec((2, 2), vec![zero, one, one, zero]).unwrap()
}

fn phase_s() -> CMat {
    let zero = C64::new(0.0, 0.0);
    CMat::from_shape_vec((2, 2), vec![C64::new(1.0, 0.0), zero, zero, C64::new(0.0, 1.0)])
        .unwrap()
}

/// Single-qubit preparation gate: maps `|0⟩` to the requested eigenstate.
fn prep_gate(p: Prep) -> CMat {
    match p {
        Prep::ZPlus => CMat::eye(2),
        Prep::ZMinus => pauli_x(),
        Prep::XPlus => hadamard(),
        Prep::XMinus => hadamard().dot(&pauli_x()),
        Prep::YPlus => phase_s().dot(&hadamard()),
        Prep::YMinus => phase_s().dot(&hadamard()).dot(&pauli_x()),
    }
}

/// Single-qubit basis-change gate: maps the named Pauli eigenstates onto the
/// computational basis.
fn meas_gate(b: Basis) -> CMat {
    match b {
        Basis::Z => CMat::eye(2),
        Basis::X => hadamard(),
        Basis::Y => hadamard().dot(&dagger(&phase_s().view())),
    }
}

/// Tensor product of per-qubit preparation gates, `P_s = ⊗_i V(s_i)`.
pub fn prep_unitary(prep: &[Prep]) -> CMat {
    let mut u = prep_gate(prep[0]);
    for &p in &prep[1..] {
        u = kron(&u, &prep_gate(p));
    }
    u
}

/// Tensor product of per-qubit basis changes, `P_b = ⊗_i M(b_i)`.
pub fn meas_unitary(basis: &[Basis]) -> CMat {
    let mut u = meas_gate(basis[0]);
    for &b in &basis[1..] {
        u = kron(&u, &meas_gate(b));
    }
    u
}

/// Readout half of a SPAM truth: a confusion matrix or a full POVM.
#[derive(Clone, Copy, Debug)]
pub enum Readout<'a> {
    Corruption(&'a RMat),
    Povm(&'a PovmSet),
}

/// Outcome distribution of one mode for an arbitrary channel, state and
/// readout. Shared by prediction and synthetic sampling.
pub fn mode_probs<T: ChannelApply + ?Sized>(
    channel: &T,
    rho0: &CMat,
    readout: Readout<'_>,
    mode: &PauliMode,
) -> Result<Vec<f64>, TomographyError> {
    let d = channel.dim();
    if rho0.dim() != (d, d) || 1usize << mode.qubits() != d {
        return Err(TomographyError::ShapeMismatch(format!(
            "channel dim {d}, state {}x{}, mode on {} qubits",
            rho0.dim().0,
            rho0.dim().1,
            mode.qubits()
        )));
    }
    let ps = prep_unitary(&mode.prep);
    let pb = meas_unitary(&mode.basis);
    let rho_s = ps.dot(rho0).dot(&dagger(&ps.view()));
    let tau = channel.apply(&rho_s);
    let w = pb.dot(&tau).dot(&dagger(&pb.view()));
    let probs = match readout {
        Readout::Corruption(c) => {
            if c.dim() != (d, d) {
                return Err(TomographyError::ShapeMismatch(format!(
                    "corruption is {}x{}, expected {d}x{d}",
                    c.dim().0,
                    c.dim().1
                )));
            }
            (0..d)
                .map(|j| (0..d).map(|l| c[(j, l)] * w[(l, l)].re).sum())
                .collect()
        }
        Readout::Povm(povm) => {
            if povm.dim() != d {
                return Err(TomographyError::ShapeMismatch(format!(
                    "POVM dim {} vs channel dim {d}",
                    povm.dim()
                )));
            }
            povm.elements()
                .iter()
                .map(|e| {
                    e.iter()
                        .zip(w.t().iter())
                        .map(|(a, b)| (a * b).re)
                        .sum::<f64>()
                })
                .collect()
        }
    };
    Ok(probs)
}

/// Predicted outcome distribution of Eq.-style corruption readout:
/// `p_j = Σ_l C_jl (P_b T(P_s ρ0 P_s†) P_b†)_ll`.
pub fn predict_probs<T: ChannelApply + ?Sized>(
    channel: &T,
    spam: &SpamModel,
    mode: &PauliMode,
) -> Result<Vec<f64>, TomographyError> {
    mode_probs(channel, spam.rho0(), Readout::Corruption(spam.corruption()), mode)
}

/// One record of a tomography dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeRecord {
    pub mode: PauliMode,
    pub freqs: Vec<f64>,
}

/// A set of measured (or simulated) outcome frequencies, `N_s` shots per
/// mode.
#[derive(Clone, Debug, PartialEq)]
pub struct TomographyDataset {
    pub n: usize,
    pub n_s: u64,
    pub records: Vec<ModeRecord>,
}

impl TomographyDataset {
    /// Validating constructor: each frequency vector has length `2ⁿ`, is
    /// nonnegative, sums to 1 within 1e-9, and every entry is an integer
    /// multiple of `1/N_s`. `N_s = 0` marks an exact-probability dataset
    /// (see [`exact_dataset`]); the shot-multiple check is then skipped.
    pub fn new(n: usize, n_s: u64, records: Vec<ModeRecord>) -> Result<Self, TomographyError> {
        let d = 1usize << n;
        for (k, rec) in records.iter().enumerate() {
            if rec.mode.qubits() != n {
                return Err(TomographyError::BadDataset(format!(
                    "record {k}: mode on {} qubits, dataset on {n}",
                    rec.mode.qubits()
                )));
            }
            if rec.freqs.len() != d {
                return Err(TomographyError::BadDataset(format!(
                    "record {k}: {} frequencies, expected {d}",
                    rec.freqs.len()
                )));
            }
            let mut sum = 0.0;
            for &f in &rec.freqs {
                if f < 0.0 {
                    return Err(TomographyError::BadDataset(format!(
                        "record {k}: negative frequency {f}"
                    )));
                }
                if n_s > 0 {
                    let shots = f * n_s as f64;
                    if (shots - shots.round()).abs() > 1e-6 {
                        return Err(TomographyError::BadDataset(format!(
                            "record {k}: frequency {f} is not a multiple of 1/{n_s}"
                        )));
                    }
                }
                sum += f;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(TomographyError::BadDataset(format!(
                    "record {k}: frequencies sum to {sum}"
                )));
            }
        }
        Ok(TomographyDataset { n, n_s, records })
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Serialize: one JSON header line, then one `s;b;f_0,..,f_{d−1}` line
    /// per record. Floats print in shortest round-trip form, so parsing
    /// recovers them bit-exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let header = serde_json::json!({
            "n": self.n,
            "N_s": self.n_s,
            "gate_convention": GATE_CONVENTION,
        });
        out.push_str(&header.to_string());
        out.push('\n');
        for rec in &self.records {
            let (s, b) = rec.mode.encode();
            let _ = write!(out, "{s};{b};");
            for (i, f) in rec.freqs.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{f}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TomographyError> {
        let mut lines = text.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| TomographyError::Parse("empty dataset".into()))?;
        let header: serde_json::Value = serde_json::from_str(header_line)
            .map_err(|e| TomographyError::Parse(format!("header: {e}")))?;
        let n = header["n"]
            .as_u64()
            .ok_or_else(|| TomographyError::Parse("header lacks n".into()))?
            as usize;
        let n_s = header["N_s"]
            .as_u64()
            .ok_or_else(|| TomographyError::Parse("header lacks N_s".into()))?;
        let convention = header["gate_convention"].as_str().unwrap_or_default();
        if convention != GATE_CONVENTION {
            return Err(TomographyError::Parse(format!(
                "gate convention {convention:?} not supported (expected {GATE_CONVENTION:?})"
            )));
        }
        let mut records = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, ';');
            let (s, b, fs) = match (parts.next(), parts.next(), parts.next()) {
                (Some(s), Some(b), Some(fs)) => (s, b, fs),
                _ => {
                    return Err(TomographyError::Parse(format!(
                        "line {}: expected s;b;freqs",
                        lineno + 2
                    )))
                }
            };
            let mode = PauliMode::decode(s, b)?;
            let freqs = fs
                .split(',')
                .map(|tok| {
                    tok.parse::<f64>().map_err(|e| {
                        TomographyError::Parse(format!("line {}: {e}", lineno + 2))
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            records.push(ModeRecord { mode, freqs });
        }
        TomographyDataset::new(n, n_s, records)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), TomographyError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, TomographyError> {
        let text = std::fs::read_to_string(path)?;
        TomographyDataset::from_text(&text)
    }
}

/// Simulate `n_s` shots per mode from a ground-truth channel and SPAM.
///
/// Per-mode RNG streams are derived from `(seed, mode position)`, so the
/// records are reproducible independently of evaluation order. Probabilities
/// outside `[−1e-9, 1+1e-9]` abort; tiny negative values are clipped before
/// sampling.
pub fn simulate_frequencies<T: ChannelApply + ?Sized>(
    channel: &T,
    rho0: &CMat,
    readout: Readout<'_>,
    modes: &[PauliMode],
    n_s: u64,
    seed: Seed,
) -> Result<TomographyDataset, TomographyError> {
    if n_s == 0 {
        return Err(TomographyError::BadDataset(
            "shot count must be positive; use exact_dataset for exact probabilities".into(),
        ));
    }
    let d = channel.dim();
    let n = modes.first().map_or(0, |m| m.qubits());
    let mut records = Vec::with_capacity(modes.len());
    for (k, mode) in modes.iter().enumerate() {
        let probs = mode_probs(channel, rho0, readout, mode)?;
        let mut clipped = Vec::with_capacity(d);
        for &p in &probs {
            if !(-1e-9..=1.0 + 1e-9).contains(&p) {
                return Err(TomographyError::InvalidProbabilities { mode_index: k, value: p });
            }
            clipped.push(p.max(0.0));
        }
        let total: f64 = clipped.iter().sum();
        let mut cumulative = Vec::with_capacity(d);
        let mut acc = 0.0;
        for &p in &clipped {
            acc += p / total;
            cumulative.push(acc);
        }
        let mut counts = vec![0u64; d];
        let mut rng = seed.derive_indices(&[k as u64]).rng();
        for _ in 0..n_s {
            let u: f64 = rng.random();
            let j = cumulative.iter().position(|&c| u < c).unwrap_or(d - 1);
            counts[j] += 1;
        }
        let freqs = counts.iter().map(|&c| c as f64 / n_s as f64).collect();
        records.push(ModeRecord { mode: mode.clone(), freqs });
    }
    TomographyDataset::new(n, n_s, records)
}

/// [`simulate_frequencies`] with both truth halves taken from a corruption
/// SPAM model.
pub fn simulate_with_model<T: ChannelApply + ?Sized>(
    channel: &T,
    spam: &SpamModel,
    modes: &[PauliMode],
    n_s: u64,
    seed: Seed,
) -> Result<TomographyDataset, TomographyError> {
    simulate_frequencies(channel, spam.rho0(), Readout::Corruption(spam.corruption()), modes, n_s, seed)
}

/// All `6ⁿ` preparation strings paired with the all-`z` measurement basis:
/// the modes of a readout-calibration run, where the circuit is replaced by
/// the identity and only computational-basis statistics are collected.
pub fn calibration_modes(n: usize) -> Vec<PauliMode> {
    assert!(n >= 1);
    let mut modes = Vec::with_capacity(6usize.pow(n as u32));
    let mut prep = vec![Prep::XPlus; n];
    let mut digits = vec![0usize; n];
    loop {
        for (q, &dig) in digits.iter().enumerate() {
            prep[q] = Prep::ALL[dig];
        }
        modes.push(PauliMode {
            prep: prep.clone(),
            basis: vec![Basis::Z; n],
        });
        // Odometer increment with the leftmost digit most significant.
        let mut q = n;
        loop {
            if q == 0 {
                return modes;
            }
            q -= 1;
            digits[q] += 1;
            if digits[q] < 6 {
                break;
            }
            digits[q] = 0;
        }
    }
}

/// Noiseless dataset holding exact outcome probabilities instead of finite
/// frequencies, marked by `N_s = 0`.
pub fn exact_dataset<T: ChannelApply + ?Sized>(
    channel: &T,
    rho0: &CMat,
    readout: Readout<'_>,
    modes: &[PauliMode],
) -> Result<TomographyDataset, TomographyError> {
    let n = modes.first().map_or(0, |m| m.qubits());
    let mut records = Vec::with_capacity(modes.len());
    for (k, mode) in modes.iter().enumerate() {
        let probs = mode_probs(channel, rho0, readout, mode)?;
        let mut clipped = Vec::with_capacity(probs.len());
        for &p in &probs {
            if !(-1e-9..=1.0 + 1e-9).contains(&p) {
                return Err(TomographyError::InvalidProbabilities { mode_index: k, value: p });
            }
            clipped.push(p.max(0.0));
        }
        records.push(ModeRecord { mode: mode.clone(), freqs: clipped });
    }
    TomographyDataset::new(n, 0, records)
}

/// Split a dataset into disjoint train/test parts of sizes
/// `⌊fraction · N_m⌋` and the remainder, by a seeded shuffle.
pub fn split(
    ds: &TomographyDataset,
    train_fraction: f64,
    seed: Seed,
) -> (TomographyDataset, TomographyDataset) {
    use rand::seq::SliceRandom;
    assert!(train_fraction > 0.0 && train_fraction < 1.0);
    let mut order: Vec<usize> = (0..ds.records.len()).collect();
    order.shuffle(&mut seed.rng());
    let n_train = (train_fraction * ds.records.len() as f64).floor() as usize;
    let pick = |idx: &[usize]| TomographyDataset {
        n: ds.n,
        n_s: ds.n_s,
        records: idx.iter().map(|&i| ds.records[i].clone()).collect(),
    };
    (pick(&order[..n_train]), pick(&order[n_train..]))
}
