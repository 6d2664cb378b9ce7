//! Loss evaluation and analytic gradients for the quadratic tomography loss.
//!
//! Everything here is organized around adjoint (reverse-mode) rules written
//! by hand. The convention for a complex parameter matrix `A` is that the
//! stored adjoint `Ā` packs the two real gradients as `Ā = ∂L/∂Re A +
//! i ∂L/∂Im A`, so that `dL = Re⟨Ā, dA⟩` and the real/imaginary parts of `Ā`
//! can be copied straight into the packed real parameter layouts.
//!
//! The map engine exploits two structural facts to keep iterations cheap:
//! the prepared state of a mode depends only on its preparation string, so
//! channel outputs are computed once per distinct preparation; and the
//! per-mode adjoint accumulation `Σ_m τ̄_m K ρ_m` factors through the shared
//! operator `Σ_i ρ_iᵀ ⊗ (Σ_{m∈i} τ̄_m)`, so the Kraus adjoints cost one
//! matrix–vector product per operator instead of one product per mode.

use std::collections::BTreeMap;

use ndarray::{s, Array1};

use crate::numerics::{
    dagger, eigh_hermitian, kron, qr_positive, unvec_col, vec_col, C64, CMat, CVec, RMat,
};
use crate::spam::SpamModel;
use crate::tomography::{meas_unitary, prep_unitary, Basis, Prep, TomographyDataset};

use super::RetrievalError;

/// Adjoint of the thin QR factorization with positive real diagonal,
/// propagating a cotangent `Q̄` back to the input matrix.
///
/// With `N = Q†Q̄`, the result is `Ḡ = (Q̄ − Q N + Q D) R⁻†`, where `D` is
/// strictly lower triangular with `D_ab = N_ab − conj(N_ba)` plus the
/// imaginary diagonal `D_aa = i·Im N_aa`. The diagonal term is what pins the
/// phase freedom removed by the positive-diagonal convention.
pub(crate) fn qr_pullback(q: &CMat, r: &CMat, qbar: &CMat) -> CMat {
    let n = r.dim().0;
    let nmat = dagger(&q.view()).dot(qbar);
    let mut dmat = CMat::zeros((n, n));
    for a in 0..n {
        for b in 0..a {
            dmat[(a, b)] = nmat[(a, b)] - nmat[(b, a)].conj();
        }
        dmat[(a, a)] = C64::new(0.0, nmat[(a, a)].im);
    }
    let w = qbar - &q.dot(&nmat) + q.dot(&dmat);
    solve_right_rdagger(&w, r)
}

/// Solve `X R† = W` for `X`, with `R` upper triangular (row-wise back
/// substitution).
fn solve_right_rdagger(w: &CMat, r: &CMat) -> CMat {
    let (m, n) = w.dim();
    let mut x = CMat::zeros((m, n));
    for i in 0..m {
        for k in (0..n).rev() {
            let mut acc = w[(i, k)];
            for j in k + 1..n {
                acc -= r[(k, j)].conj() * x[(i, j)];
            }
            x[(i, k)] = acc / r[(k, k)].conj();
        }
    }
    x
}

/// Pack a complex adjoint matrix into the real θ layout (`Re` half then `Im`
/// half, row-major).
fn pack_adjoint(gbar: &CMat) -> Vec<f64> {
    let (rows, cols) = gbar.dim();
    let half = rows * cols;
    let mut out = vec![0.0; 2 * half];
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = gbar[(i, j)].re;
            out[half + i * cols + j] = gbar[(i, j)].im;
        }
    }
    out
}

/// Complex matrix from the packed real layout (`Re` half then `Im` half).
fn complex_from_packed(rows: usize, cols: usize, data: &[f64]) -> CMat {
    let half = rows * cols;
    CMat::from_shape_fn((rows, cols), |(i, j)| {
        C64::new(data[i * cols + j], data[half + i * cols + j])
    })
}

/// Dataset view with preparation and measurement unitaries deduplicated, so
/// per-iteration work is shared across modes with a common preparation or
/// basis string.
pub(crate) struct ModeTables {
    pub prep_us: Vec<CMat>,
    pub meas_us: Vec<CMat>,
    pub mode_prep: Vec<usize>,
    pub mode_meas: Vec<usize>,
    pub freqs: Vec<Vec<f64>>,
}

impl ModeTables {
    pub fn build(ds: &TomographyDataset) -> Result<Self, RetrievalError> {
        if ds.is_empty() {
            return Err(RetrievalError::BadDataset("dataset has no records".into()));
        }
        let mut prep_index: BTreeMap<Vec<Prep>, usize> = BTreeMap::new();
        let mut meas_index: BTreeMap<Vec<Basis>, usize> = BTreeMap::new();
        let mut prep_us = Vec::new();
        let mut meas_us = Vec::new();
        let mut mode_prep = Vec::with_capacity(ds.len());
        let mut mode_meas = Vec::with_capacity(ds.len());
        let mut freqs = Vec::with_capacity(ds.len());
        for rec in &ds.records {
            let pi = *prep_index.entry(rec.mode.prep.clone()).or_insert_with(|| {
                prep_us.push(prep_unitary(&rec.mode.prep));
                prep_us.len() - 1
            });
            let bi = *meas_index.entry(rec.mode.basis.clone()).or_insert_with(|| {
                meas_us.push(meas_unitary(&rec.mode.basis));
                meas_us.len() - 1
            });
            mode_prep.push(pi);
            mode_meas.push(bi);
            freqs.push(rec.freqs.clone());
        }
        Ok(ModeTables { prep_us, meas_us, mode_prep, mode_meas, freqs })
    }

    pub fn n_modes(&self) -> usize {
        self.freqs.len()
    }

    /// `true` at position `i` iff every basis character of mode `i` is `z`
    /// (the measurement unitary is the identity).
    fn all_z(&self, ds: &TomographyDataset) -> bool {
        ds.records
            .iter()
            .all(|rec| rec.mode.basis.iter().all(|&b| b == Basis::Z))
    }
}

/// Loss/gradient engine for map retrieval with the SPAM model frozen.
pub(crate) struct MapEngine {
    d: usize,
    r: usize,
    tables: ModeTables,
    corruption: RMat,
    /// Prepared states `P_s ρ0 P_s†` per distinct preparation.
    rho_mats: Vec<CMat>,
    rho_vecs: Vec<CVec>,
}

impl MapEngine {
    pub fn new(
        spam: &SpamModel,
        ds: &TomographyDataset,
        r: usize,
    ) -> Result<Self, RetrievalError> {
        let d = ds.dim();
        if spam.dim() != d {
            return Err(RetrievalError::ShapeMismatch(format!(
                "SPAM dimension {} vs dataset dimension {d}",
                spam.dim()
            )));
        }
        if r < 1 || r > d * d {
            return Err(RetrievalError::BadDataset(format!(
                "rank {r} outside 1..={}",
                d * d
            )));
        }
        let tables = ModeTables::build(ds)?;
        let rho_mats: Vec<CMat> = tables
            .prep_us
            .iter()
            .map(|ps| ps.dot(spam.rho0()).dot(&dagger(&ps.view())))
            .collect();
        let rho_vecs = rho_mats.iter().map(vec_col).collect();
        Ok(MapEngine {
            d,
            r,
            tables,
            corruption: spam.corruption().clone(),
            rho_mats,
            rho_vecs,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.tables.n_modes()
    }

    pub fn n_params(&self) -> usize {
        2 * self.r * self.d * self.d
    }

    /// Evaluate the loss (and optionally its gradient) at the packed
    /// parameter point `theta`, restricted to `batch` mode indices if given.
    pub fn eval(
        &self,
        theta: &[f64],
        want_grad: bool,
        batch: Option<&[usize]>,
    ) -> Result<(f64, Option<Vec<f64>>), RetrievalError> {
        let (d, r) = (self.d, self.r);
        if theta.len() != self.n_params() {
            return Err(RetrievalError::ShapeMismatch(format!(
                "{} parameters, expected {}",
                theta.len(),
                self.n_params()
            )));
        }
        let g = complex_from_packed(r * d, d, theta);
        let (q, rmat) = qr_positive(&g).map_err(RetrievalError::Numerics)?;

        // Superoperator of the candidate map, then one channel application
        // per distinct preparation.
        let mut sop = CMat::zeros((d * d, d * d));
        for s_idx in 0..r {
            let k = q.slice(s![s_idx * d..(s_idx + 1) * d, ..]).to_owned();
            sop += &kron(&k.mapv(|z| z.conj()), &k);
        }
        let taus: Vec<CMat> = self
            .rho_vecs
            .iter()
            .map(|v| unvec_col(&sop.dot(v), d, d))
            .collect();

        let full: Vec<usize>;
        let modes: &[usize] = match batch {
            Some(b) => b,
            None => {
                full = (0..self.n_modes()).collect();
                &full
            }
        };

        let mut total = 0.0;
        let mut tbar_sums: Vec<Option<CMat>> = vec![None; self.rho_mats.len()];
        let mut qv = vec![0.0; d];
        let mut resid = vec![0.0; d];
        for &m in modes {
            let pi = self.tables.mode_prep[m];
            let bi = self.tables.mode_meas[m];
            let pb = &self.tables.meas_us[bi];
            let x = pb.dot(&taus[pi]);
            for l in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for b in 0..d {
                    acc += x[(l, b)] * pb[(l, b)].conj();
                }
                qv[l] = acc.re;
            }
            let f = &self.tables.freqs[m];
            for j in 0..d {
                let mut p = 0.0;
                for l in 0..d {
                    p += self.corruption[(j, l)] * qv[l];
                }
                let rj = p - f[j];
                total += rj * rj;
                resid[j] = rj;
            }
            if want_grad {
                // τ̄ = P_b† diag(q̄) P_b with q̄_l = 2 Σ_j resid_j C_jl.
                let mut scaled = pb.clone();
                for l in 0..d {
                    let mut qbar = 0.0;
                    for j in 0..d {
                        qbar += 2.0 * resid[j] * self.corruption[(j, l)];
                    }
                    for b in 0..d {
                        scaled[(l, b)] *= qbar;
                    }
                }
                let tbar = dagger(&pb.view()).dot(&scaled);
                match &mut tbar_sums[pi] {
                    Some(acc) => *acc += &tbar,
                    slot => *slot = Some(tbar),
                }
            }
        }
        if !want_grad {
            return Ok((total, None));
        }

        // K̄_s = 2 Σ_m τ̄_m K_s ρ_m = 2 unvec(A vec K_s) with
        // A = Σ_i ρ_iᵀ ⊗ τ̄sum_i.
        let mut a = CMat::zeros((d * d, d * d));
        for (i, tbar) in tbar_sums.iter().enumerate() {
            if let Some(tbar) = tbar {
                a += &kron(&self.rho_mats[i].t().to_owned(), tbar);
            }
        }
        let mut qbar_mat = CMat::zeros((r * d, d));
        for s_idx in 0..r {
            let k = q.slice(s![s_idx * d..(s_idx + 1) * d, ..]).to_owned();
            let kbar = unvec_col(&a.dot(&vec_col(&k)), d, d).mapv(|z| z * 2.0);
            qbar_mat.slice_mut(s![s_idx * d..(s_idx + 1) * d, ..]).assign(&kbar);
        }
        let gbar = qr_pullback(&q, &rmat, &qbar_mat);
        Ok((total, Some(pack_adjoint(&gbar))))
    }
}

/// Shared state-factor pullback: given the accumulated `ρ̄0` and the factor
/// `A` with `ρ0 = AA†/Tr(AA†)`, return `Ā`.
fn state_factor_adjoint(rhobar: &CMat, rho0: &CMat, a: &CMat, t: f64) -> CMat {
    let inner = rhobar
        .iter()
        .zip(rho0.iter())
        .map(|(x, y)| (x.conj() * y).re)
        .sum::<f64>();
    let d = rho0.dim().0;
    let mut mbar = rhobar.mapv(|z| z / t);
    for i in 0..d {
        mbar[(i, i)] -= inner / t;
    }
    mbar.dot(a).mapv(|z| z * 2.0)
}

/// Loss/gradient engine for the corruption-model SPAM fit. The channel is the
/// identity and every mode must measure in the all-`z` basis.
pub(crate) struct SpamCorruptionEngine {
    d: usize,
    tables: ModeTables,
}

impl SpamCorruptionEngine {
    pub fn new(ds: &TomographyDataset) -> Result<Self, RetrievalError> {
        let tables = ModeTables::build(ds)?;
        if !tables.all_z(ds) {
            return Err(RetrievalError::BadDataset(
                "SPAM fitting requires computational-basis readout for every mode".into(),
            ));
        }
        Ok(SpamCorruptionEngine { d: ds.dim(), tables })
    }

    pub fn n_modes(&self) -> usize {
        self.tables.n_modes()
    }

    pub fn n_params(&self) -> usize {
        3 * self.d * self.d
    }

    pub fn eval(
        &self,
        omega: &[f64],
        want_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>), RetrievalError> {
        let d = self.d;
        if omega.len() != self.n_params() {
            return Err(RetrievalError::ShapeMismatch(format!(
                "{} parameters, expected {}",
                omega.len(),
                self.n_params()
            )));
        }
        let a = complex_from_packed(d, d, &omega[..2 * d * d]);
        let m = a.dot(&dagger(&a.view()));
        let t = (0..d).map(|i| m[(i, i)].re).sum::<f64>();
        if t <= f64::EPSILON * (d * d) as f64 {
            return Err(RetrievalError::IllConditioned(
                "state factor has vanishing trace".into(),
            ));
        }
        let rho0 = m.mapv(|z| z / t);

        let bslice = &omega[2 * d * d..];
        let mut col_sums = vec![0.0; d];
        for l in 0..d {
            for j in 0..d {
                col_sums[l] += bslice[j * d + l].abs();
            }
            if col_sums[l] <= f64::EPSILON * d as f64 {
                return Err(RetrievalError::IllConditioned(format!(
                    "corruption factor column {l} has vanishing norm"
                )));
            }
        }
        let mut c = RMat::zeros((d, d));
        for j in 0..d {
            for l in 0..d {
                c[(j, l)] = bslice[j * d + l].abs() / col_sums[l];
            }
        }

        let rho_s: Vec<CMat> = self
            .tables
            .prep_us
            .iter()
            .map(|ps| ps.dot(&rho0).dot(&dagger(&ps.view())))
            .collect();

        let mut total = 0.0;
        let n_prep = rho_s.len();
        let mut qbar_groups = vec![vec![0.0; d]; n_prep];
        let mut cbar = RMat::zeros((d, d));
        let mut resid = vec![0.0; d];
        for m_idx in 0..self.n_modes() {
            let pi = self.tables.mode_prep[m_idx];
            let qv: Vec<f64> = (0..d).map(|l| rho_s[pi][(l, l)].re).collect();
            let f = &self.tables.freqs[m_idx];
            for j in 0..d {
                let mut p = 0.0;
                for l in 0..d {
                    p += c[(j, l)] * qv[l];
                }
                let rj = p - f[j];
                total += rj * rj;
                resid[j] = rj;
            }
            if want_grad {
                for l in 0..d {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += 2.0 * resid[j] * c[(j, l)];
                        cbar[(j, l)] += 2.0 * resid[j] * qv[l];
                    }
                    qbar_groups[pi][l] += acc;
                }
            }
        }
        if !want_grad {
            return Ok((total, None));
        }

        // ρ̄0 = Σ_i P_i† diag(q̄_i) P_i.
        let mut rhobar = CMat::zeros((d, d));
        for (i, qbar) in qbar_groups.iter().enumerate() {
            let ps = &self.tables.prep_us[i];
            let mut scaled = ps.clone();
            for l in 0..d {
                for b in 0..d {
                    scaled[(l, b)] *= qbar[l];
                }
            }
            rhobar += &dagger(&ps.view()).dot(&scaled);
        }
        let abar = state_factor_adjoint(&rhobar, &rho0, &a, t);

        // Column-normalization pullback through C_jl = |B_jl| / Σ_k |B_kl|.
        let mut grad = vec![0.0; self.n_params()];
        grad[..2 * d * d].copy_from_slice(&pack_adjoint(&abar));
        for l in 0..d {
            let dot: f64 = (0..d).map(|j| cbar[(j, l)] * c[(j, l)]).sum();
            for mrow in 0..d {
                let v = bslice[mrow * d + l];
                let sign = if v == 0.0 { 0.0 } else { v.signum() };
                grad[2 * d * d + mrow * d + l] = sign / col_sums[l] * (cbar[(mrow, l)] - dot);
            }
        }
        Ok((total, Some(grad)))
    }
}

/// Loss/gradient engine for the POVM-model SPAM fit: parameters are the state
/// factor followed by one Ginibre factor per outcome; the effects are
/// `E_j = D^{-1/2} G_j G_j† D^{-1/2}` with `D = Σ_j G_j G_j†`.
pub(crate) struct SpamPovmEngine {
    d: usize,
    tables: ModeTables,
}

impl SpamPovmEngine {
    pub fn new(ds: &TomographyDataset) -> Result<Self, RetrievalError> {
        let tables = ModeTables::build(ds)?;
        if !tables.all_z(ds) {
            return Err(RetrievalError::BadDataset(
                "SPAM fitting requires computational-basis readout for every mode".into(),
            ));
        }
        Ok(SpamPovmEngine { d: ds.dim(), tables })
    }

    pub fn n_modes(&self) -> usize {
        self.tables.n_modes()
    }

    pub fn n_params(&self) -> usize {
        2 * self.d * self.d + 2 * self.d * self.d * self.d
    }

    pub fn eval(
        &self,
        omega: &[f64],
        want_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>), RetrievalError> {
        let d = self.d;
        if omega.len() != self.n_params() {
            return Err(RetrievalError::ShapeMismatch(format!(
                "{} parameters, expected {}",
                omega.len(),
                self.n_params()
            )));
        }
        let a = complex_from_packed(d, d, &omega[..2 * d * d]);
        let m = a.dot(&dagger(&a.view()));
        let t = (0..d).map(|i| m[(i, i)].re).sum::<f64>();
        if t <= f64::EPSILON * (d * d) as f64 {
            return Err(RetrievalError::IllConditioned(
                "state factor has vanishing trace".into(),
            ));
        }
        let rho0 = m.mapv(|z| z / t);

        let factors: Vec<CMat> = (0..d)
            .map(|j| complex_from_packed(d, d, &omega[2 * d * d * (j + 1)..2 * d * d * (j + 2)]))
            .collect();
        let hs: Vec<CMat> = factors.iter().map(|g| g.dot(&dagger(&g.view()))).collect();
        let mut dsum = CMat::zeros((d, d));
        for h in &hs {
            dsum += h;
        }
        let (evals, u) = eigh_hermitian(&dsum).map_err(RetrievalError::Numerics)?;
        let lam_min = evals.iter().cloned().fold(f64::INFINITY, f64::min);
        if lam_min <= 1e-12 * evals.iter().cloned().fold(0.0, f64::max).max(1.0) {
            return Err(RetrievalError::IllConditioned(format!(
                "POVM normalizer nearly singular (smallest eigenvalue {lam_min:.3e})"
            )));
        }
        // W = D^{-1/2}.
        let udag = dagger(&u.view());
        let mut w = u.clone();
        for (col, &lam) in evals.iter().enumerate() {
            let sc = lam.powf(-0.5);
            for row in 0..d {
                w[(row, col)] *= sc;
            }
        }
        let w = w.dot(&udag);
        let effects: Vec<CMat> = hs.iter().map(|h| w.dot(h).dot(&w)).collect();

        let rho_s: Vec<CMat> = self
            .tables
            .prep_us
            .iter()
            .map(|ps| ps.dot(&rho0).dot(&dagger(&ps.view())))
            .collect();

        let n_prep = rho_s.len();
        let mut total = 0.0;
        // coeff[i][j] = Σ_{modes with prep i} 2·resid_j.
        let mut coeff = vec![vec![0.0; d]; n_prep];
        for m_idx in 0..self.n_modes() {
            let pi = self.tables.mode_prep[m_idx];
            let f = &self.tables.freqs[m_idx];
            for j in 0..d {
                let p = effects[j]
                    .iter()
                    .zip(rho_s[pi].t().iter())
                    .map(|(x, y)| (x * y).re)
                    .sum::<f64>();
                let rj = p - f[j];
                total += rj * rj;
                if want_grad {
                    coeff[pi][j] += 2.0 * rj;
                }
            }
        }
        if !want_grad {
            return Ok((total, None));
        }

        // Ē_j = Σ_i coeff[i][j] ρ_i and ρ̄0 = Σ_i P_i† (Σ_j coeff[i][j] E_j) P_i.
        let mut ebars: Vec<CMat> = vec![CMat::zeros((d, d)); d];
        let mut rhobar = CMat::zeros((d, d));
        for i in 0..n_prep {
            let mut esum = CMat::zeros((d, d));
            for j in 0..d {
                if coeff[i][j] != 0.0 {
                    ebars[j] += &rho_s[i].mapv(|z| z * coeff[i][j]);
                    esum += &effects[j].mapv(|z| z * coeff[i][j]);
                }
            }
            let ps = &self.tables.prep_us[i];
            rhobar += &dagger(&ps.view()).dot(&esum).dot(ps);
        }
        let abar = state_factor_adjoint(&rhobar, &rho0, &a, t);

        // W̄ = Σ_j (Ē_j W H_j + H_j W Ē_j), then the inverse-square-root
        // pullback via the eigenbasis divided-difference kernel.
        let mut wbar = CMat::zeros((d, d));
        for j in 0..d {
            let wh = w.dot(&hs[j]);
            wbar += &ebars[j].dot(&wh);
            wbar += &wh.t().mapv(|z| z.conj()).dot(&ebars[j]);
        }
        let dbar = inv_sqrt_pullback(&evals, &u, &udag, &wbar);

        let mut grad = vec![0.0; self.n_params()];
        grad[..2 * d * d].copy_from_slice(&pack_adjoint(&abar));
        for j in 0..d {
            let hbar = w.dot(&ebars[j]).dot(&w) + &dbar;
            let gbar = hbar.dot(&factors[j]).mapv(|z| z * 2.0);
            grad[2 * d * d * (j + 1)..2 * d * d * (j + 2)]
                .copy_from_slice(&pack_adjoint(&gbar));
        }
        Ok((total, Some(grad)))
    }
}

/// Pullback of `W = f(D)` for `f(x) = x^{-1/2}` on a Hermitian `D = U Λ U†`:
/// `D̄ = U [F ∘ (U† W̄ U)] U†` with the divided-difference kernel
/// `F_ab = (f(λ_a) − f(λ_b))/(λ_a − λ_b)` and `F_aa = f′(λ_a)`.
fn inv_sqrt_pullback(evals: &Array1<f64>, u: &CMat, udag: &CMat, wbar: &CMat) -> CMat {
    let n = evals.len();
    let mut core = udag.dot(wbar).dot(u);
    for a in 0..n {
        for b in 0..n {
            let (la, lb) = (evals[a], evals[b]);
            let scale = la.abs().max(lb.abs()).max(1e-300);
            let coeff = if (la - lb).abs() > 1e-12 * scale {
                (la.powf(-0.5) - lb.powf(-0.5)) / (la - lb)
            } else {
                -0.5 * (0.5 * (la + lb)).powf(-1.5)
            };
            core[(a, b)] *= coeff;
        }
    }
    u.dot(&core).dot(udag)
}

/// Joint engine: map parameters and corruption-model SPAM parameters fitted
/// together, packed as `[θ_map | ω_spam]`.
pub(crate) struct JointEngine {
    d: usize,
    r: usize,
    tables: ModeTables,
}

impl JointEngine {
    pub fn new(ds: &TomographyDataset, r: usize) -> Result<Self, RetrievalError> {
        let d = ds.dim();
        if r < 1 || r > d * d {
            return Err(RetrievalError::BadDataset(format!(
                "rank {r} outside 1..={}",
                d * d
            )));
        }
        let tables = ModeTables::build(ds)?;
        Ok(JointEngine { d, r, tables })
    }

    pub fn n_modes(&self) -> usize {
        self.tables.n_modes()
    }

    pub fn n_map_params(&self) -> usize {
        2 * self.r * self.d * self.d
    }

    pub fn n_params(&self) -> usize {
        self.n_map_params() + 3 * self.d * self.d
    }

    pub fn eval(
        &self,
        params: &[f64],
        want_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>), RetrievalError> {
        let (d, r) = (self.d, self.r);
        if params.len() != self.n_params() {
            return Err(RetrievalError::ShapeMismatch(format!(
                "{} parameters, expected {}",
                params.len(),
                self.n_params()
            )));
        }
        let (theta, omega) = params.split_at(self.n_map_params());

        let g = complex_from_packed(r * d, d, theta);
        let (q, rmat) = qr_positive(&g).map_err(RetrievalError::Numerics)?;
        let mut sop = CMat::zeros((d * d, d * d));
        for s_idx in 0..r {
            let k = q.slice(s![s_idx * d..(s_idx + 1) * d, ..]).to_owned();
            sop += &kron(&k.mapv(|z| z.conj()), &k);
        }

        let a = complex_from_packed(d, d, &omega[..2 * d * d]);
        let m = a.dot(&dagger(&a.view()));
        let t = (0..d).map(|i| m[(i, i)].re).sum::<f64>();
        if t <= f64::EPSILON * (d * d) as f64 {
            return Err(RetrievalError::IllConditioned(
                "state factor has vanishing trace".into(),
            ));
        }
        let rho0 = m.mapv(|z| z / t);
        let bslice = &omega[2 * d * d..];
        let mut col_sums = vec![0.0; d];
        for l in 0..d {
            for j in 0..d {
                col_sums[l] += bslice[j * d + l].abs();
            }
            if col_sums[l] <= f64::EPSILON * d as f64 {
                return Err(RetrievalError::IllConditioned(format!(
                    "corruption factor column {l} has vanishing norm"
                )));
            }
        }
        let mut c = RMat::zeros((d, d));
        for j in 0..d {
            for l in 0..d {
                c[(j, l)] = bslice[j * d + l].abs() / col_sums[l];
            }
        }

        let rho_s: Vec<CMat> = self
            .tables
            .prep_us
            .iter()
            .map(|ps| ps.dot(&rho0).dot(&dagger(&ps.view())))
            .collect();
        let taus: Vec<CMat> = rho_s
            .iter()
            .map(|rho| unvec_col(&sop.dot(&vec_col(rho)), d, d))
            .collect();

        let n_prep = rho_s.len();
        let mut total = 0.0;
        let mut tbar_sums: Vec<Option<CMat>> = vec![None; n_prep];
        let mut cbar = RMat::zeros((d, d));
        let mut qv = vec![0.0; d];
        let mut resid = vec![0.0; d];
        for m_idx in 0..self.n_modes() {
            let pi = self.tables.mode_prep[m_idx];
            let bi = self.tables.mode_meas[m_idx];
            let pb = &self.tables.meas_us[bi];
            let x = pb.dot(&taus[pi]);
            for l in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for b in 0..d {
                    acc += x[(l, b)] * pb[(l, b)].conj();
                }
                qv[l] = acc.re;
            }
            let f = &self.tables.freqs[m_idx];
            for j in 0..d {
                let mut p = 0.0;
                for l in 0..d {
                    p += c[(j, l)] * qv[l];
                }
                let rj = p - f[j];
                total += rj * rj;
                resid[j] = rj;
            }
            if want_grad {
                let mut scaled = pb.clone();
                for l in 0..d {
                    let mut qbar = 0.0;
                    for j in 0..d {
                        qbar += 2.0 * resid[j] * c[(j, l)];
                        cbar[(j, l)] += 2.0 * resid[j] * qv[l];
                    }
                    for b in 0..d {
                        scaled[(l, b)] *= qbar;
                    }
                }
                let tbar = dagger(&pb.view()).dot(&scaled);
                match &mut tbar_sums[pi] {
                    Some(acc) => *acc += &tbar,
                    slot => *slot = Some(tbar),
                }
            }
        }
        if !want_grad {
            return Ok((total, None));
        }

        // Map half, as in the frozen-SPAM engine.
        let mut amat = CMat::zeros((d * d, d * d));
        for (i, tbar) in tbar_sums.iter().enumerate() {
            if let Some(tbar) = tbar {
                amat += &kron(&rho_s[i].t().to_owned(), tbar);
            }
        }
        let mut qbar_mat = CMat::zeros((r * d, d));
        for s_idx in 0..r {
            let k = q.slice(s![s_idx * d..(s_idx + 1) * d, ..]).to_owned();
            let kbar = unvec_col(&amat.dot(&vec_col(&k)), d, d).mapv(|z| z * 2.0);
            qbar_mat.slice_mut(s![s_idx * d..(s_idx + 1) * d, ..]).assign(&kbar);
        }
        let gbar = qr_pullback(&q, &rmat, &qbar_mat);

        // State half: pull τ̄ back through the channel (adjoint channel is
        // the superoperator conjugate transpose), then through P_s and the
        // factor map.
        let sop_dag = dagger(&sop.view());
        let mut rhobar = CMat::zeros((d, d));
        for (i, tbar) in tbar_sums.iter().enumerate() {
            if let Some(tbar) = tbar {
                let rsbar = unvec_col(&sop_dag.dot(&vec_col(tbar)), d, d);
                let ps = &self.tables.prep_us[i];
                rhobar += &dagger(&ps.view()).dot(&rsbar).dot(ps);
            }
        }
        let abar = state_factor_adjoint(&rhobar, &rho0, &a, t);

        let mut grad = vec![0.0; self.n_params()];
        grad[..self.n_map_params()].copy_from_slice(&pack_adjoint(&gbar));
        let spam_grad = &mut grad[self.n_map_params()..];
        spam_grad[..2 * d * d].copy_from_slice(&pack_adjoint(&abar));
        for l in 0..d {
            let dot: f64 = (0..d).map(|j| cbar[(j, l)] * c[(j, l)]).sum();
            for mrow in 0..d {
                let v = bslice[mrow * d + l];
                let sign = if v == 0.0 { 0.0 } else { v.signum() };
                spam_grad[2 * d * d + mrow * d + l] =
                    sign / col_sums[l] * (cbar[(mrow, l)] - dot);
            }
        }
        Ok((total, Some(grad)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{params_to_kraus, ParamVector};
    use crate::numerics::{fro_norm, ginibre, Seed};
    use crate::spam::synthetic_spam;
    use crate::tomography::{predict_probs, sample_modes, simulate_with_model};

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    fn central_diff(eval: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        (eval(&xp) - eval(&xm)) / (2.0 * h)
    }

    /// A dataset from a generic truth, used by the gradient checks.
    fn test_dataset(n: usize, n_m: usize, seed: u64) -> (TomographyDataset, SpamModel) {
        let d = 1usize << n;
        let (spam, _) = synthetic_spam(d, 0.9, 0.85, Seed(seed));
        let theta = ParamVector::new(
            d,
            2,
            ginibre(2 * 2 * d * d, 1, Seed(seed + 1)).iter().map(|z| z.re).collect(),
        )
        .unwrap();
        let truth = params_to_kraus(&theta).unwrap();
        let modes = sample_modes(n, n_m, Seed(seed + 2)).unwrap();
        let ds = simulate_with_model(&truth, &spam, &modes, 512, Seed(seed + 3)).unwrap();
        (ds, spam)
    }

    #[test]
    fn qr_pullback_matches_finite_differences() {
        // Scalar objective L(G) = Re⟨Z, Q(G)⟩ for a fixed random Z, whose
        // exact gradient is the pullback of the constant cotangent Z.
        let (m, n) = (6, 3);
        let g0 = ginibre(m, n, Seed(31));
        let z = ginibre(m, n, Seed(32));
        let eval = |x: &[f64]| {
            let g = complex_from_packed(m, n, x);
            let (q, _) = qr_positive(&g).unwrap();
            q.iter().zip(z.iter()).map(|(qi, zi)| (zi.conj() * qi).re).sum::<f64>()
        };
        let x0 = pack_adjoint(&g0);
        let (q, r) = qr_positive(&g0).unwrap();
        let gbar = qr_pullback(&q, &r, &z);
        let analytic = pack_adjoint(&gbar);
        for i in (0..x0.len()).step_by(5) {
            let fd = central_diff(&eval, &x0, i, 1e-6);
            assert!(
                rel_err(fd, analytic[i]) < 1e-5,
                "coordinate {i}: fd {fd:.9e} vs analytic {:.9e}",
                analytic[i]
            );
        }
    }

    #[test]
    fn map_loss_matches_direct_summation() {
        let (ds, spam) = test_dataset(1, 5, 40);
        let d = ds.dim();
        let r = 2;
        let engine = MapEngine::new(&spam, &ds, r).unwrap();
        let theta: Vec<f64> =
            ginibre(2 * r * d * d, 1, Seed(44)).iter().map(|z| z.re).collect();
        let (fast, _) = engine.eval(&theta, false, None).unwrap();

        let map = params_to_kraus(&ParamVector::new(d, r, theta).unwrap()).unwrap();
        let mut slow = 0.0;
        for rec in &ds.records {
            let p = predict_probs(&map, &spam, &rec.mode).unwrap();
            for j in 0..d {
                slow += (p[j] - rec.freqs[j]).powi(2);
            }
        }
        assert!((fast - slow).abs() < 1e-14, "fast {fast} vs direct {slow}");
    }

    #[test]
    fn map_gradient_matches_finite_differences() {
        let (ds, spam) = test_dataset(1, 8, 50);
        let d = ds.dim();
        let r = 3;
        let engine = MapEngine::new(&spam, &ds, r).unwrap();
        let theta: Vec<f64> =
            ginibre(2 * r * d * d, 1, Seed(51)).iter().map(|z| z.re).collect();
        let (_, grad) = engine.eval(&theta, true, None).unwrap();
        let grad = grad.unwrap();
        let eval = |x: &[f64]| engine.eval(x, false, None).unwrap().0;
        for i in 0..theta.len() {
            let fd = central_diff(&eval, &theta, i, 1e-5);
            assert!(
                rel_err(fd, grad[i]) < 1e-5,
                "coordinate {i}: fd {fd:.9e} vs analytic {:.9e}",
                grad[i]
            );
        }
    }

    #[test]
    fn mixing_kraus_operators_is_a_flat_direction() {
        // Replacing G by (U ⊗ I) G mixes the Kraus operators by a unitary on
        // the operator index and leaves the channel — hence the loss —
        // unchanged. The gradient must be orthogonal to that orbit.
        let (ds, spam) = test_dataset(1, 8, 60);
        let d = ds.dim();
        let r = 3;
        let engine = MapEngine::new(&spam, &ds, r).unwrap();
        let theta: Vec<f64> =
            ginibre(2 * r * d * d, 1, Seed(61)).iter().map(|z| z.re).collect();
        let (_, grad) = engine.eval(&theta, true, None).unwrap();
        let grad = grad.unwrap();

        // Anti-Hermitian generator on the operator index.
        let z = ginibre(r, r, Seed(62));
        let gen = &z - &dagger(&z.view());
        let g = complex_from_packed(r * d, d, &theta);
        let mut dg = CMat::zeros((r * d, d));
        for s_out in 0..r {
            for s_in in 0..r {
                let block = g.slice(s![s_in * d..(s_in + 1) * d, ..]);
                let scaled = block.mapv(|v| v * gen[(s_out, s_in)]);
                let mut target = dg.slice_mut(s![s_out * d..(s_out + 1) * d, ..]);
                target += &scaled;
            }
        }
        let direction = pack_adjoint(&dg);
        let deriv: f64 = grad.iter().zip(&direction).map(|(a, b)| a * b).sum();
        let dir_norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(
            deriv.abs() / dir_norm.max(1e-12) < 1e-6,
            "directional derivative along the gauge orbit: {deriv:.3e}"
        );

        // The flat direction is real, not an artifact of a small gradient.
        let grad_norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(grad_norm > 1e-3);

        // Finite check: the loss itself is invariant under the finite mixing.
        let u = crate::numerics::haar_unitary(r, Seed(63));
        let mut g_mixed = CMat::zeros((r * d, d));
        for s_out in 0..r {
            for s_in in 0..r {
                let block = g.slice(s![s_in * d..(s_in + 1) * d, ..]);
                let scaled = block.mapv(|v| v * u[(s_out, s_in)]);
                let mut target = g_mixed.slice_mut(s![s_out * d..(s_out + 1) * d, ..]);
                target += &scaled;
            }
        }
        let (l0, _) = engine.eval(&theta, false, None).unwrap();
        let (l1, _) = engine.eval(&pack_adjoint(&g_mixed), false, None).unwrap();
        assert!((l0 - l1).abs() < 1e-10, "loss moved under operator mixing");
    }

    #[test]
    fn corruption_spam_gradient_matches_finite_differences() {
        let n = 2;
        let d = 1usize << n;
        let (spam, _) = synthetic_spam(d, 0.85, 0.8, Seed(70));
        let modes = crate::tomography::calibration_modes(n);
        let truth = crate::channels::KrausMap::identity(d);
        let ds = simulate_with_model(&truth, &spam, &modes, 256, Seed(71)).unwrap();
        let engine = SpamCorruptionEngine::new(&ds).unwrap();
        let omega: Vec<f64> =
            ginibre(3 * d * d, 1, Seed(72)).iter().map(|z| z.re * 0.7 + 0.4).collect();
        let (_, grad) = engine.eval(&omega, true).unwrap();
        let grad = grad.unwrap();
        let eval = |x: &[f64]| engine.eval(x, false).unwrap().0;
        for i in (0..omega.len()).step_by(2) {
            let fd = central_diff(&eval, &omega, i, 1e-5);
            assert!(
                rel_err(fd, grad[i]) < 1e-5,
                "coordinate {i}: fd {fd:.9e} vs analytic {:.9e}",
                grad[i]
            );
        }
    }

    #[test]
    fn povm_spam_gradient_matches_finite_differences() {
        let n = 1;
        let d = 1usize << n;
        let (spam, _) = synthetic_spam(d, 0.85, 0.8, Seed(80));
        let modes = crate::tomography::calibration_modes(n);
        let truth = crate::channels::KrausMap::identity(d);
        let ds = simulate_with_model(&truth, &spam, &modes, 256, Seed(81)).unwrap();
        let engine = SpamPovmEngine::new(&ds).unwrap();
        let omega: Vec<f64> = ginibre(2 * d * d + 2 * d * d * d, 1, Seed(82))
            .iter()
            .map(|z| z.re)
            .collect();
        let (_, grad) = engine.eval(&omega, true).unwrap();
        let grad = grad.unwrap();
        let eval = |x: &[f64]| engine.eval(x, false).unwrap().0;
        for i in 0..omega.len() {
            let fd = central_diff(&eval, &omega, i, 1e-5);
            assert!(
                rel_err(fd, grad[i]) < 1e-5,
                "coordinate {i}: fd {fd:.9e} vs analytic {:.9e}",
                grad[i]
            );
        }
    }

    #[test]
    fn joint_gradient_matches_finite_differences() {
        let (ds, _) = test_dataset(1, 10, 90);
        let d = ds.dim();
        let r = 2;
        let engine = JointEngine::new(&ds, r).unwrap();
        let mut params: Vec<f64> =
            ginibre(engine.n_params(), 1, Seed(91)).iter().map(|z| z.re).collect();
        // Keep the corruption factor away from sign flips.
        for v in params[engine.n_map_params() + 2 * d * d..].iter_mut() {
            *v = v.abs() + 0.3;
        }
        let (_, grad) = engine.eval(&params, true).unwrap();
        let grad = grad.unwrap();
        let eval = |x: &[f64]| engine.eval(x, false).unwrap().0;
        for i in (0..params.len()).step_by(3) {
            let fd = central_diff(&eval, &params, i, 1e-5);
            assert!(
                rel_err(fd, grad[i]) < 1e-5,
                "coordinate {i}: fd {fd:.9e} vs analytic {:.9e}",
                grad[i]
            );
        }
    }

    #[test]
    fn batched_losses_sum_to_full_loss() {
        let (ds, spam) = test_dataset(1, 9, 100);
        let engine = MapEngine::new(&spam, &ds, 2).unwrap();
        let theta: Vec<f64> =
            ginibre(engine.n_params(), 1, Seed(101)).iter().map(|z| z.re).collect();
        let (full, _) = engine.eval(&theta, false, None).unwrap();
        let (a, _) = engine.eval(&theta, false, Some(&[0, 1, 2, 3])).unwrap();
        let (b, _) = engine.eval(&theta, false, Some(&[4, 5, 6, 7, 8])).unwrap();
        assert!((full - (a + b)).abs() < 1e-12);
    }

    #[test]
    fn povm_engine_matches_povm_assembly() {
        // The engine's forward effects agree with the factor-to-POVM map used
        // elsewhere, so the fitted parameters can be exported faithfully.
        let d = 4;
        let data: Vec<f64> =
            ginibre(2 * d * d + 2 * d * d * d, 1, Seed(110)).iter().map(|z| z.re).collect();
        let params =
            crate::spam::PovmParams::new(d, d, data[2 * d * d..].to_vec()).unwrap();
        let povm = params.to_povm().unwrap();
        // Recompute the effects the way the engine does.
        let factors = params.factors();
        let hs: Vec<CMat> = factors.iter().map(|g| g.dot(&dagger(&g.view()))).collect();
        let mut dsum = CMat::zeros((d, d));
        for h in &hs {
            dsum += h;
        }
        let (evals, u) = eigh_hermitian(&dsum).unwrap();
        let udag = dagger(&u.view());
        let mut w = u.clone();
        for (col, &lam) in evals.iter().enumerate() {
            for row in 0..d {
                w[(row, col)] *= lam.powf(-0.5);
            }
        }
        let w = w.dot(&udag);
        for (j, e) in povm.elements().iter().enumerate() {
            let engine_e = w.dot(&hs[j]).dot(&w);
            assert!(fro_norm(&(e - &engine_e)) < 1e-10);
        }
    }
}
