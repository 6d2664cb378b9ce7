//! Retrieval of SPAM models and CPTP maps from tomography datasets.
//!
//! Fitting minimizes the quadratic loss
//!
//! ```text
//! L = Σ_modes Σ_j (p̂_j − f_j)²
//! ```
//!
//! between predicted outcome probabilities and measured frequencies, by Adam
//! over unconstrained real parameters. Physicality is enforced by
//! construction: map parameters pass through the isometry factor of a QR
//! decomposition, states through a normalized Gram factor, confusion matrices
//! through column normalization, and POVMs through a normalized Gram family.
//! All gradients are analytic (see [`grad`](self) internals); no numerical
//! differentiation is used anywhere in the optimization path.
//!
//! The usual workflow is [`fit_spam`] on readout-calibration data first, then
//! [`fit_map`] on circuit data with the fitted SPAM frozen, and finally
//! [`kl_eval`] on held-out modes to score the retrieved map.

mod adam;
mod grad;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::{params_to_kraus, ChannelError, KrausMap, ParamVector};
use crate::numerics::{eigh_hermitian, ginibre, C64, CMat, NumericsError, Seed};
use crate::spam::{
    canonicalize_povm, canonicalize_spam, params_to_corruption, params_to_state,
    povm_to_corruption, PovmParams, PovmSet, SpamError, SpamModel, SpamParams,
};
use crate::tomography::{predict_probs, TomographyDataset, TomographyError};

use adam::Adam;
use grad::{JointEngine, MapEngine, SpamCorruptionEngine, SpamPovmEngine};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("bad dataset: {0}")]
    BadDataset(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("ill-conditioned intermediate: {0}")]
    IllConditioned(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Spam(#[from] SpamError),
    #[error(transparent)]
    Tomography(#[from] TomographyError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Gradient batching: all modes every iteration, or seeded mini-batches of a
/// fixed number of modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Batch {
    Full,
    Modes(usize),
}

/// Optimizer settings shared by the SPAM and map fits.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub batch: Batch,
    /// Scale of the random component of the initial point.
    pub init_scale: f64,
    /// Seed for initialization and mini-batch shuffling.
    pub seed: Seed,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_iters: 5000,
            batch: Batch::Full,
            init_scale: 0.1,
            seed: Seed(0),
        }
    }
}

/// Outcome of one optimization run. `final_loss` always refers to the
/// returned (best) iterate, and `loss_trace` holds the per-iteration
/// objective (batch objective under mini-batching).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub final_loss: f64,
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    /// Seconds spent in the optimizer loop.
    pub wall_time: f64,
    /// Heuristic stagnation flag: the best loss stopped improving well above
    /// zero. Reported for diagnostics; never an error.
    pub no_progress: bool,
}

/// Quadratic tomography loss of a candidate parameter vector against a
/// dataset, with the SPAM model frozen.
pub fn loss(
    theta: &ParamVector,
    spam: &SpamModel,
    ds: &TomographyDataset,
) -> Result<f64, RetrievalError> {
    if theta.d != ds.dim() {
        return Err(RetrievalError::ShapeMismatch(format!(
            "parameters on dimension {}, dataset on {}",
            theta.d,
            ds.dim()
        )));
    }
    let engine = MapEngine::new(spam, ds, theta.r)?;
    Ok(engine.eval(&theta.data, false, None)?.0)
}

/// Analytic gradient of [`loss`] with respect to the packed real parameters,
/// in the same layout as [`ParamVector::data`].
pub fn grad_loss(
    theta: &ParamVector,
    spam: &SpamModel,
    ds: &TomographyDataset,
) -> Result<Vec<f64>, RetrievalError> {
    if theta.d != ds.dim() {
        return Err(RetrievalError::ShapeMismatch(format!(
            "parameters on dimension {}, dataset on {}",
            theta.d,
            ds.dim()
        )));
    }
    let engine = MapEngine::new(spam, ds, theta.r)?;
    let (_, grad) = engine.eval(&theta.data, true, None)?;
    Ok(grad.expect("gradient requested"))
}

/// Which SPAM parameterization to fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpamFitModel {
    /// Prepared state plus classical confusion matrix.
    Corruption,
    /// Prepared state plus full POVM readout.
    Povm,
}

/// A fitted SPAM description, already canonicalized (internal basis labels
/// chosen to make the state closest to `|0⟩⟨0|` and the readout closest to
/// ideal).
#[derive(Clone, Debug)]
pub enum FittedSpam {
    Corruption(SpamModel),
    Povm { rho0: CMat, povm: PovmSet },
}

impl FittedSpam {
    /// Corruption-model view of the fit; the POVM variant reduces its
    /// effects to their diagonal.
    pub fn model(&self) -> Result<SpamModel, RetrievalError> {
        match self {
            FittedSpam::Corruption(m) => Ok(m.clone()),
            FittedSpam::Povm { rho0, povm } => {
                Ok(SpamModel::new(rho0.clone(), povm_to_corruption(povm))?)
            }
        }
    }
}

/// Fit a SPAM model to readout-calibration data: all modes must measure in
/// the computational basis, and the channel is fixed to the identity.
///
/// The result is canonicalized before being returned, so gauge-equivalent
/// datasets produce the same model.
pub fn fit_spam(
    ds: &TomographyDataset,
    model: SpamFitModel,
    cfg: &FitConfig,
) -> Result<(FittedSpam, FitReport), RetrievalError> {
    let d = ds.dim();
    match model {
        SpamFitModel::Corruption => {
            let engine = SpamCorruptionEngine::new(ds)?;
            let mut omega = vec![0.0; engine.n_params()];
            // State factor near |0⟩⟨0|, confusion factor near the identity.
            let ga = ginibre(d, d, cfg.seed.derive("spam-state-init"));
            let gb = ginibre(d, d, cfg.seed.derive("spam-corruption-init"));
            for i in 0..d {
                for j in 0..d {
                    omega[i * d + j] = cfg.init_scale * ga[(i, j)].re;
                    omega[d * d + i * d + j] = cfg.init_scale * ga[(i, j)].im;
                    omega[2 * d * d + i * d + j] =
                        if i == j { 1.0 } else { 0.0 } + cfg.init_scale * gb[(i, j)].re.abs();
                }
            }
            omega[0] += 1.0;
            let (best, report) =
                run_adam(omega, engine.n_modes(), cfg, |x, g, _| engine.eval(x, g))?;
            let params = SpamParams::new(d, best)?;
            let fitted = SpamModel::new(
                params_to_state(&params.state_factor())?,
                params_to_corruption(&params.corruption_factor())?,
            )?;
            let (canonical, _) = canonicalize_spam(&fitted);
            Ok((FittedSpam::Corruption(canonical), report))
        }
        SpamFitModel::Povm => {
            let engine = SpamPovmEngine::new(ds)?;
            let mut omega = vec![0.0; engine.n_params()];
            let ga = ginibre(d, d, cfg.seed.derive("spam-state-init"));
            for i in 0..d {
                for j in 0..d {
                    omega[i * d + j] = cfg.init_scale * ga[(i, j)].re;
                    omega[d * d + i * d + j] = cfg.init_scale * ga[(i, j)].im;
                }
            }
            omega[0] += 1.0;
            // One factor per outcome, each near the corresponding projector.
            for out in 0..d {
                let gj = ginibre(d, d, cfg.seed.derive_indices(&[9000, out as u64]));
                let base = 2 * d * d * (out + 1);
                for i in 0..d {
                    for j in 0..d {
                        omega[base + i * d + j] = cfg.init_scale * gj[(i, j)].re;
                        omega[base + d * d + i * d + j] = cfg.init_scale * gj[(i, j)].im;
                    }
                }
                omega[base + out * d + out] += 1.0;
            }
            let (best, report) =
                run_adam(omega, engine.n_modes(), cfg, |x, g, _| engine.eval(x, g))?;
            let mut state_data = best[..2 * d * d].to_vec();
            state_data.resize(3 * d * d, 0.0);
            let a = SpamParams::new(d, state_data)?;
            let rho0 = params_to_state(&a.state_factor())?;
            let povm = PovmParams::new(d, d, best[2 * d * d..].to_vec())?.to_povm()?;
            let (rho0, povm, _) = canonicalize_povm(&rho0, &povm);
            Ok((FittedSpam::Povm { rho0, povm }, report))
        }
    }
}

/// Fit a rank-`r` CPTP map to a tomography dataset with the SPAM model
/// frozen.
///
/// The initial point is the identity channel's stacked factor plus
/// `init_scale` times a Ginibre perturbation. Returns the best-loss iterate
/// seen during the run, not necessarily the last one.
pub fn fit_map(
    ds: &TomographyDataset,
    spam: &SpamModel,
    r: usize,
    cfg: &FitConfig,
) -> Result<(KrausMap, FitReport), RetrievalError> {
    let d = ds.dim();
    let engine = MapEngine::new(spam, ds, r)?;
    let theta0 = map_init(d, r, cfg);
    let (best, report) =
        run_adam(theta0, engine.n_modes(), cfg, |x, g, b| engine.eval(x, g, b))?;
    let map = params_to_kraus(&ParamVector::new(d, r, best)?)?;
    Ok((map, report))
}

/// [`fit_map`] with the corruption-model SPAM refined jointly alongside the
/// map, starting from `spam0`. Off the default path: joint refinement can
/// absorb channel error into SPAM error, so it is only offered explicitly.
///
/// The returned SPAM keeps the gauge of `spam0` rather than being
/// re-canonicalized, so the refinement stays comparable to its start point.
pub fn fit_map_joint(
    ds: &TomographyDataset,
    spam0: &SpamModel,
    r: usize,
    cfg: &FitConfig,
) -> Result<(KrausMap, SpamModel, FitReport), RetrievalError> {
    let d = ds.dim();
    if spam0.dim() != d {
        return Err(RetrievalError::ShapeMismatch(format!(
            "SPAM dimension {} vs dataset dimension {d}",
            spam0.dim()
        )));
    }
    let engine = JointEngine::new(ds, r)?;
    let mut params = map_init(d, r, cfg);
    params.extend(spam_params_of(spam0)?);
    let (best, report) = run_adam(params, engine.n_modes(), cfg, |x, g, _| engine.eval(x, g))?;
    let (theta, omega) = best.split_at(2 * r * d * d);
    let map = params_to_kraus(&ParamVector::new(d, r, theta.to_vec())?)?;
    let sp = SpamParams::new(d, omega.to_vec())?;
    let spam = SpamModel::new(
        params_to_state(&sp.state_factor())?,
        params_to_corruption(&sp.corruption_factor())?,
    )?;
    Ok((map, spam, report))
}

/// Identity-plus-noise initial point for the map parameters.
fn map_init(d: usize, r: usize, cfg: &FitConfig) -> Vec<f64> {
    let mut g0 = ginibre(r * d, d, cfg.seed.derive("map-init")).mapv(|z| z * cfg.init_scale);
    for i in 0..d {
        g0[(i, i)] += C64::new(1.0, 0.0);
    }
    ParamVector::from_g(d, r, &g0).data
}

/// Invert a SPAM model into factor parameters: the state factor is `U √Λ`
/// from the state's eigendecomposition, and the confusion matrix is its own
/// factor (column normalization fixes it).
fn spam_params_of(spam: &SpamModel) -> Result<Vec<f64>, RetrievalError> {
    let d = spam.dim();
    let (evals, u) = eigh_hermitian(spam.rho0())?;
    let mut a = u;
    for (col, &lam) in evals.iter().enumerate() {
        let sc = lam.max(0.0).sqrt();
        for row in 0..d {
            a[(row, col)] *= sc;
        }
    }
    let mut out = vec![0.0; 3 * d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = a[(i, j)].re;
            out[d * d + i * d + j] = a[(i, j)].im;
            out[2 * d * d + i * d + j] = spam.corruption()[(i, j)];
        }
    }
    Ok(out)
}

/// Adam driver shared by every fit: runs `cfg.max_iters` updates, traces the
/// objective, and tracks the best iterate (by full loss at epoch boundaries
/// under mini-batching).
fn run_adam<E>(
    mut theta: Vec<f64>,
    n_modes: usize,
    cfg: &FitConfig,
    mut eval: E,
) -> Result<(Vec<f64>, FitReport), RetrievalError>
where
    E: FnMut(&[f64], bool, Option<&[usize]>) -> Result<(f64, Option<Vec<f64>>), RetrievalError>,
{
    let start = std::time::Instant::now();
    let mut adam = Adam::new(theta.len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut best_loss = f64::INFINITY;
    let mut best_theta = theta.clone();

    match cfg.batch {
        Batch::Full => {
            for _ in 0..cfg.max_iters {
                let (l, g) = eval(&theta, true, None)?;
                trace.push(l);
                if l < best_loss {
                    best_loss = l;
                    best_theta.copy_from_slice(&theta);
                }
                adam.step(&mut theta, &g.expect("gradient requested"));
            }
        }
        Batch::Modes(b) => {
            let b = b.clamp(1, n_modes);
            let shuffle_seed = cfg.seed.derive("batch-shuffle");
            let mut order: Vec<usize> = (0..n_modes).collect();
            let mut epoch = 0u64;
            let mut pos = n_modes;
            for _ in 0..cfg.max_iters {
                if pos + b > n_modes {
                    use rand::seq::SliceRandom;
                    order.shuffle(&mut shuffle_seed.derive_indices(&[epoch]).rng());
                    epoch += 1;
                    pos = 0;
                    let (lf, _) = eval(&theta, false, None)?;
                    if lf < best_loss {
                        best_loss = lf;
                        best_theta.copy_from_slice(&theta);
                    }
                }
                let batch = &order[pos..pos + b];
                pos += b;
                let (l, g) = eval(&theta, true, Some(batch))?;
                trace.push(l);
                adam.step(&mut theta, &g.expect("gradient requested"));
            }
        }
    }
    let (lf, _) = eval(&theta, false, None)?;
    if lf < best_loss {
        best_loss = lf;
        best_theta.copy_from_slice(&theta);
    }

    let no_progress = detect_stagnation(&trace, best_loss, n_modes);
    Ok((
        best_theta,
        FitReport {
            final_loss: best_loss,
            loss_trace: trace,
            iterations: cfg.max_iters,
            wall_time: start.elapsed().as_secs_f64(),
            no_progress,
        },
    ))
}

/// A run stagnated if the final fifth of the iterations brought essentially
/// no improvement while the loss stayed far from zero.
fn detect_stagnation(trace: &[f64], best: f64, n_modes: usize) -> bool {
    if trace.len() < 100 {
        return false;
    }
    let tail_start = trace.len() - trace.len() / 5;
    let before = trace[..tail_start].iter().cloned().fold(f64::INFINITY, f64::min);
    before - best <= 1e-12 * before.max(1.0) && best > 1e-9 * n_modes as f64
}

/// Plain Kullback–Leibler divergence `Σ_j f_j ln(f_j / p_j)` with the
/// `0·ln 0 = 0` convention.
pub fn kl_divergence(f: &[f64], p: &[f64]) -> f64 {
    f.iter()
        .zip(p)
        .map(|(&fj, &pj)| if fj > 0.0 { fj * (fj / pj.max(1e-300)).ln() } else { 0.0 })
        .sum()
}

/// Held-out evaluation of a retrieved map: mean KL divergence and its
/// inverse.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KlEval {
    pub mean_kl: f64,
    pub inverse: f64,
}

/// Mean (over modes) KL divergence between measured frequencies and the
/// map's predictions, with `1/(2 N_s)` pseudo-mass added to every outcome on
/// both sides before renormalizing. With exact-probability datasets
/// (`N_s = 0`) no pseudo-mass is added.
pub fn kl_eval(
    map: &KrausMap,
    spam: &SpamModel,
    ds: &TomographyDataset,
) -> Result<KlEval, RetrievalError> {
    if ds.is_empty() {
        return Err(RetrievalError::BadDataset("dataset has no records".into()));
    }
    let eps = if ds.n_s > 0 { 0.5 / ds.n_s as f64 } else { 0.0 };
    let mut total = 0.0;
    for rec in &ds.records {
        let pred = predict_probs(map, spam, &rec.mode)?;
        let f: Array1<f64> = rec.freqs.iter().map(|&x| x + eps).collect();
        let p: Array1<f64> = pred.iter().map(|&x| x.max(0.0) + eps).collect();
        let fs = f.sum();
        let ps = p.sum();
        let fnorm: Vec<f64> = f.iter().map(|&x| x / fs).collect();
        let pnorm: Vec<f64> = p.iter().map(|&x| x / ps).collect();
        total += kl_divergence(&fnorm, &pnorm);
    }
    let mean_kl = total / ds.len() as f64;
    Ok(KlEval { mean_kl, inverse: 1.0 / mean_kl })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{depolarizing, spectrum, unitary_channel};
    use crate::numerics::{fro_norm, RMat};
    use crate::spam::synthetic_spam;
    use crate::tomography::{
        all_modes, calibration_modes, exact_dataset, sample_modes, simulate_with_model,
        Basis, ModeRecord, PauliMode, Prep, Readout,
    };
    use approx::assert_abs_diff_eq;

    fn identity_theta(d: usize, r: usize) -> ParamVector {
        let mut g = CMat::zeros((r * d, d));
        for i in 0..d {
            g[(i, i)] = C64::new(1.0, 0.0);
        }
        ParamVector::from_g(d, r, &g)
    }

    #[test]
    fn loss_of_single_mode_example() {
        // Prediction (1, 0) against frequencies (0, 1): loss (1−0)² + (0−1)² = 2.
        let spam = SpamModel::ideal(2);
        let mode = PauliMode::new(vec![Prep::ZPlus], vec![Basis::Z]).unwrap();
        let ds = TomographyDataset::new(
            1,
            1,
            vec![ModeRecord { mode, freqs: vec![0.0, 1.0] }],
        )
        .unwrap();
        let theta = identity_theta(2, 1);
        let l = loss(&theta, &spam, &ds).unwrap();
        assert_abs_diff_eq!(l, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_exact_interpolant() {
        let d = 4;
        let r = 3;
        let theta = ParamVector::new(
            d,
            r,
            ginibre(2 * r * d * d, 1, Seed(7)).iter().map(|z| z.re).collect(),
        )
        .unwrap();
        let truth = params_to_kraus(&theta).unwrap();
        let (spam, _) = synthetic_spam(d, 0.92, 0.9, Seed(8));
        let modes = sample_modes(2, 40, Seed(9)).unwrap();
        let ds = exact_dataset(
            &truth,
            spam.rho0(),
            Readout::Corruption(spam.corruption()),
            &modes,
        )
        .unwrap();
        let grad = grad_loss(&theta, &spam, &ds).unwrap();
        let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-8, "gradient norm {norm:.3e} at the interpolant");
    }

    #[test]
    fn fit_recovers_identity_channel_at_rank_one() {
        let d = 2;
        let spam = SpamModel::ideal(d);
        let truth = KrausMap::identity(d);
        let ds = exact_dataset(
            &truth,
            spam.rho0(),
            Readout::Corruption(spam.corruption()),
            &all_modes(1),
        )
        .unwrap();
        let cfg = FitConfig { max_iters: 1500, seed: Seed(15), ..FitConfig::default() };
        let (map, _) = fit_map(&ds, &spam, 1, &cfg).unwrap();
        let dev = fro_norm(&(map.to_superop() - KrausMap::identity(d).to_superop()));
        assert!(dev < 1e-3, "channel action deviates from identity by {dev:.3e}");
    }

    #[test]
    fn fit_recovers_depolarizing_channel() {
        let truth = depolarizing(0.4);
        let spam = SpamModel::ideal(2);
        let modes = all_modes(1);
        let ds = exact_dataset(
            &truth,
            spam.rho0(),
            Readout::Corruption(spam.corruption()),
            &modes,
        )
        .unwrap();
        let cfg = FitConfig { max_iters: 3000, seed: Seed(21), ..FitConfig::default() };
        let (map, report) = fit_map(&ds, &spam, 4, &cfg).unwrap();
        assert!(report.final_loss < 1e-8, "final loss {:.3e}", report.final_loss);
        let spec = spectrum(&map).unwrap();
        let expected = [1.0, 0.6, 0.6, 0.6];
        for (got, want) in spec.values().iter().zip(expected) {
            assert!(
                (got - C64::new(want, 0.0)).norm() < 2e-3,
                "eigenvalue {got} vs {want}"
            );
        }
    }

    #[test]
    fn fit_loss_never_exceeds_initial_loss() {
        let d = 2;
        let truth = unitary_channel(&crate::numerics::haar_unitary(d, Seed(30))).unwrap();
        let (spam, _) = synthetic_spam(d, 0.9, 0.9, Seed(31));
        let ds =
            simulate_with_model(&truth, &spam, &all_modes(1), 1024, Seed(32)).unwrap();
        let cfg = FitConfig { max_iters: 400, seed: Seed(33), ..FitConfig::default() };
        let (_, report) = fit_map(&ds, &spam, 2, &cfg).unwrap();
        assert!(report.final_loss <= report.loss_trace[0] + 1e-15);
        assert!(!report.no_progress);
    }

    #[test]
    fn fit_is_deterministic_in_the_seed() {
        let truth = depolarizing(0.2);
        let (spam, _) = synthetic_spam(2, 0.95, 0.95, Seed(40));
        let ds =
            simulate_with_model(&truth, &spam, &all_modes(1), 512, Seed(41)).unwrap();
        let cfg = FitConfig { max_iters: 120, seed: Seed(42), ..FitConfig::default() };
        let (map_a, rep_a) = fit_map(&ds, &spam, 2, &cfg).unwrap();
        let (map_b, rep_b) = fit_map(&ds, &spam, 2, &cfg).unwrap();
        assert_eq!(rep_a.loss_trace, rep_b.loss_trace);
        assert_eq!(rep_a.final_loss, rep_b.final_loss);
        for (a, b) in map_a.operators().iter().zip(map_b.operators()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn minibatch_fit_runs_and_descends() {
        let truth = depolarizing(0.3);
        let (spam, _) = synthetic_spam(2, 0.95, 0.95, Seed(50));
        let ds =
            simulate_with_model(&truth, &spam, &all_modes(1), 1024, Seed(51)).unwrap();
        let cfg = FitConfig {
            max_iters: 600,
            batch: Batch::Modes(6),
            seed: Seed(52),
            ..FitConfig::default()
        };
        let (_, report) = fit_map(&ds, &spam, 2, &cfg).unwrap();
        let full_start = {
            let theta = ParamVector::new(2, 2, map_init(2, 2, &cfg)).unwrap();
            loss(&theta, &spam, &ds).unwrap()
        };
        assert!(report.final_loss < full_start);
    }

    #[test]
    fn ideal_calibration_recovers_ideal_spam() {
        // With a perfect truth the degeneracy valley between state purity and
        // readout sharpness is pinned at its boundary, so parameters (not
        // just predictions) must come back.
        let n = 2;
        let d = 1usize << n;
        let identity = KrausMap::identity(d);
        let ideal = SpamModel::ideal(d);
        for seed in 0..5u64 {
            let ds = simulate_with_model(
                &identity,
                &ideal,
                &calibration_modes(n),
                1024,
                Seed(600 + seed),
            )
            .unwrap();
            let cfg = FitConfig {
                max_iters: 1500,
                seed: Seed(610 + seed),
                ..FitConfig::default()
            };
            let (fitted, _) = fit_spam(&ds, SpamFitModel::Corruption, &cfg).unwrap();
            let model = match fitted {
                FittedSpam::Corruption(m) => m,
                _ => unreachable!(),
            };
            // Fidelity to the pure target is just the ⟨0|ρ|0⟩ element.
            let fid = model.rho0()[(0, 0)].re;
            assert!(fid > 0.999, "seed {seed}: state fidelity {fid}");
            let cdev = model
                .corruption()
                .iter()
                .zip(RMat::eye(d).iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(cdev < 0.02, "seed {seed}: confusion deviation {cdev}");
        }
    }

    #[test]
    fn spam_fits_reproduce_calibration_statistics() {
        // A non-ideal SPAM truth is only identifiable up to a
        // depolarization-versus-readout-blur trade-off, so fits are scored on
        // the distributions they predict rather than on raw parameters.
        let n = 1;
        let d = 1usize << n;
        let (truth_spam, truth_povm) = synthetic_spam(d, 0.9, 0.85, Seed(70));
        let identity = KrausMap::identity(d);
        let modes = calibration_modes(n);
        let ds = crate::tomography::simulate_frequencies(
            &identity,
            truth_spam.rho0(),
            Readout::Povm(&truth_povm),
            &modes,
            200_000,
            Seed(71),
        )
        .unwrap();
        let cfg = FitConfig { max_iters: 2500, seed: Seed(72), ..FitConfig::default() };

        // The POVM model can represent the truth exactly; the confusion-matrix
        // model approximates off-diagonal effects diagonally, leaving an
        // irreducible residual of order 1e-2 on x/y preparations.
        for (model, tol) in [(SpamFitModel::Corruption, 0.03), (SpamFitModel::Povm, 0.01)] {
            let (fitted, report) = fit_spam(&ds, model, &cfg).unwrap();
            assert!(report.final_loss < 1e-3, "{model:?} loss {}", report.final_loss);
            for mode in &modes {
                let truth_p = crate::tomography::mode_probs(
                    &identity,
                    truth_spam.rho0(),
                    Readout::Povm(&truth_povm),
                    mode,
                )
                .unwrap();
                let fit_p = match &fitted {
                    FittedSpam::Corruption(m) => predict_probs(&identity, m, mode).unwrap(),
                    FittedSpam::Povm { rho0, povm } => {
                        crate::tomography::mode_probs(&identity, rho0, Readout::Povm(povm), mode)
                            .unwrap()
                    }
                };
                for (a, b) in truth_p.iter().zip(&fit_p) {
                    assert!(
                        (a - b).abs() < tol,
                        "{model:?}: prediction {b} vs truth {a}"
                    );
                }
            }
        }
    }

    #[test]
    fn spam_fit_rejects_non_computational_readout() {
        let (spam, _) = synthetic_spam(2, 0.9, 0.9, Seed(80));
        let truth = KrausMap::identity(2);
        let mode = PauliMode::new(vec![Prep::ZPlus], vec![Basis::X]).unwrap();
        let ds = simulate_with_model(&truth, &spam, &[mode], 100, Seed(81)).unwrap();
        let err = fit_spam(&ds, SpamFitModel::Corruption, &FitConfig::default());
        assert!(matches!(err, Err(RetrievalError::BadDataset(_))));
    }

    #[test]
    fn joint_refinement_does_not_regress() {
        let d = 2;
        let truth = depolarizing(0.25);
        let (spam, _) = synthetic_spam(d, 0.93, 0.93, Seed(90));
        let mut modes = all_modes(1);
        modes.extend(calibration_modes(1));
        let ds = simulate_with_model(&truth, &spam, &modes, 4096, Seed(91)).unwrap();
        let cfg = FitConfig { max_iters: 500, seed: Seed(92), ..FitConfig::default() };
        let (_, frozen_report) = fit_map(&ds, &spam, 2, &cfg).unwrap();
        let (_, _, joint_report) = fit_map_joint(&ds, &spam, 2, &cfg).unwrap();
        // Joint refinement has strictly more freedom, so with the true SPAM
        // as its start it should do at least as well up to optimizer noise.
        assert!(joint_report.final_loss < frozen_report.final_loss * 1.5 + 1e-6);
    }

    #[test]
    fn kl_divergence_hand_value() {
        let kl = kl_divergence(&[0.75, 0.25], &[0.5, 0.5]);
        let expected = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert_abs_diff_eq!(kl, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(kl, 0.1308, epsilon = 5e-5);
    }

    #[test]
    fn kl_eval_scores_good_fits_better() {
        let d = 2;
        let truth = depolarizing(0.3);
        let spam = SpamModel::ideal(d);
        let ds = simulate_with_model(&truth, &spam, &all_modes(1), 4096, Seed(100)).unwrap();
        let good = kl_eval(&truth, &spam, &ds).unwrap();
        let bad_map = depolarizing(0.9);
        let bad = kl_eval(&bad_map, &spam, &ds).unwrap();
        assert!(good.mean_kl > 0.0);
        assert!(good.mean_kl < bad.mean_kl);
        assert_abs_diff_eq!(good.inverse, 1.0 / good.mean_kl, epsilon = 1e-12);
    }

    #[test]
    fn kl_eval_is_zero_on_exact_predictions() {
        let truth = depolarizing(0.15);
        let spam = SpamModel::ideal(2);
        let ds = exact_dataset(
            &truth,
            spam.rho0(),
            Readout::Corruption(spam.corruption()),
            &all_modes(1),
        )
        .unwrap();
        let score = kl_eval(&truth, &spam, &ds).unwrap();
        assert!(score.mean_kl.abs() < 1e-12);
    }
}
