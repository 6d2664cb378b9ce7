//! Hardware-efficient parameterized circuits and the expressibility metric.
//!
//! A circuit on `n` qubits consists of `ℓ` identical blocks, each holding a
//! layer of `R_y` rotations, a layer of `R_z` rotations, and a ladder of CNOT
//! gates between neighboring qubits — `2nℓ` angles in total. Qubit 1 is the
//! most significant bit of the computational-basis index.
//!
//! Expressibility compares the distribution of `F = |⟨0|U|0⟩|²` over random
//! angle draws against the Haar value `p(F) = (d−1)(1−F)^{d−2}` via a
//! histogram KL divergence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{kron, CMat, CVec, Seed, C64};

/// Errors from circuit construction.
#[derive(Debug, Error)]
pub enum CircuitError {
    #[error("need at least one qubit and one block, got n = {n}, depth = {depth}")]
    EmptyCircuit { n: usize, depth: usize },
    #[error("angle vector has length {found}, expected {expected} (= 2 n ℓ)")]
    BadAngleCount { expected: usize, found: usize },
}

/// Direction of the CNOT ladder within a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Ladder {
    /// Control `i`, target `i+1`, applied for ascending `i` (default).
    #[default]
    Up,
    /// Mirror image: control `i+1`, target `i`, applied for descending `i`.
    Down,
}

/// Order of the two single-qubit rotation layers within a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RotOrder {
    /// `R_y` layer first, then `R_z` layer (default).
    #[default]
    Yz,
    /// `R_z` layer first, then `R_y` layer.
    Zy,
}

/// A fully specified circuit instance.
///
/// Angles are stored per block: first the `R_y` angles `φ_1..φ_n` (qubit 1
/// first), then the `R_z` angles `ϕ_1..ϕ_n`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub n: usize,
    pub depth: usize,
    pub angles: Vec<f64>,
    #[serde(default)]
    pub ladder: Ladder,
    #[serde(default)]
    pub rot_order: RotOrder,
}

impl CircuitSpec {
    pub fn new(
        n: usize,
        depth: usize,
        angles: Vec<f64>,
        ladder: Ladder,
        rot_order: RotOrder,
    ) -> Result<Self, CircuitError> {
        if n == 0 || depth == 0 {
            return Err(CircuitError::EmptyCircuit { n, depth });
        }
        if angles.len() != 2 * n * depth {
            return Err(CircuitError::BadAngleCount {
                expected: 2 * n * depth,
                found: angles.len(),
            });
        }
        Ok(CircuitSpec { n, depth, angles, ladder, rot_order })
    }

    /// Hilbert-space dimension `2ⁿ`.
    pub fn dim(&self) -> usize {
        1 << self.n
    }

    /// `R_y` angle of 1-based `qubit` in 0-based `block`.
    fn phi_y(&self, block: usize, qubit: usize) -> f64 {
        self.angles[block * 2 * self.n + (qubit - 1)]
    }

    /// `R_z` angle of 1-based `qubit` in 0-based `block`.
    fn phi_z(&self, block: usize, qubit: usize) -> f64 {
        self.angles[block * 2 * self.n + self.n + (qubit - 1)]
    }
}

/// Draw a circuit with all `2nℓ` angles i.i.d. uniform on `[0, 2π)`, using the
/// default ladder and rotation-order conventions.
pub fn sample_angles(n: usize, depth: usize, seed: Seed) -> CircuitSpec {
    use rand::Rng;
    assert!(n >= 1 && depth >= 1);
    let mut rng = seed.rng();
    let angles = (0..2 * n * depth)
        .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
        .collect();
    CircuitSpec { n, depth, angles, ladder: Ladder::default(), rot_order: RotOrder::default() }
}

/// `R_y(θ) = exp(−i θ σ_y / 2)`.
fn rot_y(theta: f64) -> CMat {
    let c = C64::new((theta / 2.0).cos(), 0.0);
    let s = C64::new((theta / 2.0).sin(), 0.0);
    CMat::from_shape_vec((2, 2), vec![c, -s, s, c]).unwrap()
}

/// `R_z(θ) = exp(−i θ σ_z / 2)`.
fn rot_z(theta: f64) -> CMat {
    let zero = C64::new(0.0, 0.0);
    CMat::from_shape_vec(
        (2, 2),
        vec![C64::from_polar(1.0, -theta / 2.0), zero, zero, C64::from_polar(1.0, theta / 2.0)],
    )
    .unwrap()
}

/// CNOT on adjacent qubits with the control on the more significant factor.
fn cnot_control_high() -> CMat {
    let mut m = CMat::zeros((4, 4));
    let one = C64::new(1.0, 0.0);
    m[(0, 0)] = one;
    m[(1, 1)] = one;
    m[(2, 3)] = one;
    m[(3, 2)] = one;
    m
}

/// CNOT on adjacent qubits with the control on the less significant factor.
fn cnot_control_low() -> CMat {
    let mut m = CMat::zeros((4, 4));
    let one = C64::new(1.0, 0.0);
    m[(0, 0)] = one;
    m[(2, 2)] = one;
    m[(1, 3)] = one;
    m[(3, 1)] = one;
    m
}

/// Embed a two-qubit gate on the adjacent pair `(i, i+1)`, 1-based.
fn embed_pair(gate: &CMat, i: usize, n: usize) -> CMat {
    let left = 1usize << (i - 1);
    let right = 1usize << (n - i - 1);
    kron(&kron(&CMat::eye(left), gate), &CMat::eye(right))
}

/// Tensor product of per-qubit 2×2 rotations, qubit 1 outermost.
fn rotation_layer(spec: &CircuitSpec, block: usize, rot: fn(f64) -> CMat, angle: fn(&CircuitSpec, usize, usize) -> f64) -> CMat {
    let mut layer = rot(angle(spec, block, 1));
    for q in 2..=spec.n {
        layer = kron(&layer, &rot(angle(spec, block, q)));
    }
    layer
}

/// The full circuit unitary, blocks applied in sequence (block 1 first).
pub fn build_unitary(spec: &CircuitSpec) -> CMat {
    let d = spec.dim();
    let mut u = CMat::eye(d);
    for b in 0..spec.depth {
        let y_layer = rotation_layer(spec, b, rot_y, CircuitSpec::phi_y);
        let z_layer = rotation_layer(spec, b, rot_z, CircuitSpec::phi_z);
        let mut block = match spec.rot_order {
            RotOrder::Yz => z_layer.dot(&y_layer),
            RotOrder::Zy => y_layer.dot(&z_layer),
        };
        if spec.n > 1 {
            match spec.ladder {
                Ladder::Up => {
                    for i in 1..spec.n {
                        block = embed_pair(&cnot_control_high(), i, spec.n).dot(&block);
                    }
                }
                Ladder::Down => {
                    for i in (1..spec.n).rev() {
                        block = embed_pair(&cnot_control_low(), i, spec.n).dot(&block);
                    }
                }
            }
        }
        u = block.dot(&u);
    }
    u
}

/// Apply a 2×2 gate to 1-based `qubit` of a state vector in place.
fn apply_one_qubit(psi: &mut CVec, n: usize, qubit: usize, g: &CMat) {
    let mask = 1usize << (n - qubit);
    for b in 0..psi.len() {
        if b & mask == 0 {
            let b1 = b | mask;
            let a0 = psi[b];
            let a1 = psi[b1];
            psi[b] = g[(0, 0)] * a0 + g[(0, 1)] * a1;
            psi[b1] = g[(1, 0)] * a0 + g[(1, 1)] * a1;
        }
    }
}

/// Apply CNOT (1-based control and target) to a state vector in place.
fn apply_cnot(psi: &mut CVec, n: usize, control: usize, target: usize) {
    let cm = 1usize << (n - control);
    let tm = 1usize << (n - target);
    for b in 0..psi.len() {
        if b & cm != 0 && b & tm == 0 {
            psi.swap(b, b | tm);
        }
    }
}

/// Evolve `|0…0⟩` through the circuit without materializing the unitary.
pub fn apply_to_zero_state(spec: &CircuitSpec) -> CVec {
    let d = spec.dim();
    let mut psi = CVec::zeros(d);
    psi[0] = C64::new(1.0, 0.0);
    for b in 0..spec.depth {
        let layers: [(fn(f64) -> CMat, fn(&CircuitSpec, usize, usize) -> f64); 2] =
            match spec.rot_order {
                RotOrder::Yz => [(rot_y, CircuitSpec::phi_y), (rot_z, CircuitSpec::phi_z)],
                RotOrder::Zy => [(rot_z, CircuitSpec::phi_z), (rot_y, CircuitSpec::phi_y)],
            };
        for (rot, angle) in layers {
            for q in 1..=spec.n {
                let g = rot(angle(spec, b, q));
                apply_one_qubit(&mut psi, spec.n, q, &g);
            }
        }
        match spec.ladder {
            Ladder::Up => {
                for i in 1..spec.n {
                    apply_cnot(&mut psi, spec.n, i, i + 1);
                }
            }
            Ladder::Down => {
                for i in (1..spec.n).rev() {
                    apply_cnot(&mut psi, spec.n, i + 1, i);
                }
            }
        }
    }
    psi
}

/// `F = |⟨0|U|0⟩|²` for one circuit instance.
pub fn zero_state_fidelity(spec: &CircuitSpec) -> f64 {
    apply_to_zero_state(spec)[0].norm_sqr().min(1.0)
}

/// `N_sample` fidelity values over independent angle draws.
///
/// Draw `k` uses the child seed at index `k`, so samples are reproducible and
/// order-independent regardless of how the loop is scheduled.
pub fn fidelity_samples(n: usize, depth: usize, n_sample: usize, seed: Seed) -> Vec<f64> {
    (0..n_sample)
        .map(|k| {
            let spec = sample_angles(n, depth, seed.derive_indices(&[k as u64]));
            zero_state_fidelity(&spec)
        })
        .collect()
}

/// Haar density of the zero-state fidelity: `p(F) = (d−1)(1−F)^{d−2}`.
pub fn haar_fidelity_pdf(d: usize, f: f64) -> f64 {
    assert!(d >= 2);
    (d as f64 - 1.0) * (1.0 - f).powi(d as i32 - 2)
}

/// `N_sample` draws from the Haar fidelity density via its inverse CDF,
/// `F = 1 − (1 − u)^{1/(d−1)}`.
pub fn haar_fidelity_samples(d: usize, n_sample: usize, seed: Seed) -> Vec<f64> {
    use rand::Rng;
    assert!(d >= 2);
    let mut rng = seed.rng();
    (0..n_sample)
        .map(|_| {
            let u: f64 = rng.random();
            1.0 - (1.0 - u).powf(1.0 / (d as f64 - 1.0))
        })
        .collect()
}

/// Histogram of `[0, 1]`-valued samples over `n_bins` equal bins, with one
/// pseudo-count added to every bin. The final bin is closed above.
fn regularized_histogram(samples: &[f64], n_bins: usize) -> Vec<f64> {
    let mut counts = vec![1.0f64; n_bins];
    for &s in samples {
        let k = ((s * n_bins as f64) as usize).min(n_bins - 1);
        counts[k] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    counts.iter_mut().for_each(|c| *c /= total);
    counts
}

/// KL divergence between two histogrammed sample sets on `[0, 1]`.
///
/// Both histograms receive one pseudo-count per bin before normalization,
/// which keeps the divergence finite when bins are empty and vanishes when
/// the sample sets coincide.
pub fn kl_histogram(p_samples: &[f64], q_samples: &[f64], n_bins: usize) -> f64 {
    assert!(n_bins >= 1);
    let p = regularized_histogram(p_samples, n_bins);
    let q = regularized_histogram(q_samples, n_bins);
    p.iter().zip(&q).map(|(&pi, &qi)| pi * (pi / qi).ln()).sum()
}

/// Reference distribution used by [`expressibility`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// Bin-integrated Haar density, scaled to the sample count.
    Analytic,
    /// A fresh set of draws from the Haar density (finite-size comparison).
    Sampled,
}

/// Expressibility of the depth-`ℓ` circuit family: KL divergence between the
/// histogram of circuit fidelity samples and the Haar reference.
///
/// The `Sampled` baseline histograms `n_sample` independent Haar draws; the
/// `Analytic` baseline integrates the Haar density over each bin and scales
/// the masses to `n_sample` expected counts so both sides receive the same
/// pseudo-count regularization.
pub fn expressibility(
    n: usize,
    depth: usize,
    n_sample: usize,
    n_bins: usize,
    seed: Seed,
    baseline: Baseline,
) -> f64 {
    assert!(n_bins >= 1 && n_sample >= 1);
    let d = 1usize << n;
    let circuit = fidelity_samples(n, depth, n_sample, seed.derive("circuit-draws"));
    match baseline {
        Baseline::Sampled => {
            let haar = haar_fidelity_samples(d, n_sample, seed.derive("haar-baseline"));
            kl_histogram(&circuit, &haar, n_bins)
        }
        Baseline::Analytic => {
            let p = regularized_histogram(&circuit, n_bins);
            let mut q = vec![1.0f64; n_bins];
            for (k, qk) in q.iter_mut().enumerate() {
                let a = k as f64 / n_bins as f64;
                let b = (k + 1) as f64 / n_bins as f64;
                let mass = (1.0 - a).powi(d as i32 - 1) - (1.0 - b).powi(d as i32 - 1);
                *qk += n_sample as f64 * mass;
            }
            let total: f64 = q.iter().sum();
            q.iter_mut().for_each(|c| *c /= total);
            p.iter().zip(&q).map(|(&pi, &qi)| pi * (pi / qi).ln()).sum()
        }
    }
}
