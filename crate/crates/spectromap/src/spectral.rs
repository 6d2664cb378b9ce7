//! Distances between eigenvalue clouds, diluted-unitary ensemble fitting, and
//! annulus/disc classification of a channel's bulk spectrum.
//!
//! The workhorse distance is a squared L2 distance between Gaussian kernel
//! density estimates of two clouds, which has a closed form: the integral of
//! a product of two width-σ kernels is a width-√2·σ kernel evaluated at the
//! difference of the centers, so the distance reduces to a double sum over
//! point pairs. The bandwidth σ is taken from the data as the mean
//! nearest-neighbor spacing. The trivial eigenvalue λ₁ = 1, present in every
//! channel spectrum, is excluded from both the bandwidth estimate and the
//! distance on both sides.
//!
//! Ensemble fitting scans a (p, r) grid of diluted-unitary parameters and
//! returns the cell whose sampled spectra lie closest to the target cloud on
//! average. Grids can be large, so the ensemble spectra are precomputed into
//! a reusable [`DuBank`]; fits against different targets (trials, perturbed
//! bandwidths, alternative metrics) then cost only the distance scans.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::{spectrum, ChannelError, Spectrum};
use crate::ensembles::{du_radii, sample_diluted_unitary, DUParams, EnsembleError};
use crate::numerics::{assignment::min_cost_assignment, NumericsError, Seed, C64};

/// Errors from spectral analysis.
#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("all eigenvalues coincide; supply a bandwidth explicitly")]
    DegenerateSpectrum,
    #[error("point clouds differ in size: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },
    #[error("need at least 2 bulk eigenvalues, found {found}")]
    TooFewPoints { found: usize },
    #[error("bandwidth must be positive and finite, got {sigma}")]
    BadSigma { sigma: f64 },
    #[error("invalid search grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Kernel bandwidth from the data: the mean over bulk eigenvalues of the
/// Euclidean distance to the nearest other bulk eigenvalue. The leading
/// eigenvalue is excluded — it sits at 1 in every spectrum and would
/// otherwise contribute a constant unrelated to the bulk geometry.
pub fn kde_sigma(spec: &Spectrum) -> Result<f64, SpectralError> {
    let bulk = spec.bulk();
    if bulk.len() < 2 {
        return Err(SpectralError::TooFewPoints { found: bulk.len() });
    }
    let mut total = 0.0;
    for (i, a) in bulk.iter().enumerate() {
        let mut nearest = f64::INFINITY;
        for (j, b) in bulk.iter().enumerate() {
            if i != j {
                nearest = nearest.min((a - b).norm());
            }
        }
        total += nearest;
    }
    let sigma = total / bulk.len() as f64;
    if sigma == 0.0 {
        return Err(SpectralError::DegenerateSpectrum);
    }
    Ok(sigma)
}

/// Lexicographic order on point clouds, used to evaluate the symmetric
/// distance formulas in an argument-independent order so that
/// `distance(a, b)` and `distance(b, a)` run bit-identical arithmetic.
fn lex_le(a: &[C64], b: &[C64]) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    true
}

/// Closed-form squared L2 distance between the Gaussian KDEs of two equal
/// size clouds: `(1/N²) Σ_{ij} [N(xᵢ; xⱼ) + N(yᵢ; yⱼ) − 2 N(xᵢ; yⱼ)]` with
/// 2-D isotropic kernels of width σ′ = √2·σ.
fn kernel_l2(a: &[C64], b: &[C64], sigma: f64) -> f64 {
    let (x, y) = if lex_le(a, b) { (a, b) } else { (b, a) };
    let sp2 = 2.0 * sigma * sigma; // σ′²
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sp2);
    let kernel = |u: &C64, v: &C64| (-((u - v).norm_sqr()) / (2.0 * sp2)).exp() * norm;

    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            sxx += kernel(&x[i], &x[j]);
            syy += kernel(&y[i], &y[j]);
            sxy += kernel(&x[i], &y[j]);
        }
    }
    let n2 = (x.len() * x.len()) as f64;
    ((sxx + syy - 2.0 * sxy) / n2).max(0.0)
}

fn checked_bulks<'a>(
    sa: &'a Spectrum,
    sb: &'a Spectrum,
) -> Result<(&'a [C64], &'a [C64]), SpectralError> {
    let a = sa.bulk();
    let b = sb.bulk();
    if a.len() != b.len() {
        return Err(SpectralError::SizeMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(SpectralError::TooFewPoints { found: 0 });
    }
    Ok((a, b))
}

/// Squared L2 distance between the Gaussian KDEs of two bulk spectra
/// (leading eigenvalues excluded on both sides). Nonnegative, exactly
/// symmetric in its arguments, and zero iff the bulk multisets coincide.
pub fn spectral_distance(
    sa: &Spectrum,
    sb: &Spectrum,
    sigma: f64,
) -> Result<f64, SpectralError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(SpectralError::BadSigma { sigma });
    }
    let (a, b) = checked_bulks(sa, sb)?;
    Ok(kernel_l2(a, b, sigma))
}

/// 2-Wasserstein distance between two bulk spectra viewed as uniform
/// empirical measures: `W₂² = (1/N) min_π Σ |aᵢ − b_π(i)|²` over permutations,
/// solved exactly by minimum-cost matching. A bandwidth-free comparator for
/// cross-checking ensemble fits.
pub fn wasserstein2_distance(sa: &Spectrum, sb: &Spectrum) -> Result<f64, SpectralError> {
    let (a, b) = checked_bulks(sa, sb)?;
    Ok(wasserstein2_bulk(a, b))
}

fn wasserstein2_bulk(a: &[C64], b: &[C64]) -> f64 {
    let n = a.len();
    let cost: Vec<Vec<f64>> = a
        .iter()
        .map(|x| b.iter().map(|y| (x - y).norm_sqr()).collect())
        .collect();
    let (_, total) = min_cost_assignment(&cost);
    (total.max(0.0) / n as f64).sqrt()
}

/// Result of fitting a spectrum to the diluted-unitary ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DUFit {
    pub p_star: f64,
    pub r_star: usize,
    /// Minimum mean distance over the evaluated grid.
    pub sd_star: f64,
    /// Bandwidth used for the kernel distance.
    pub sigma: f64,
    pub samples_per_point: usize,
    /// Human-readable description of the (p, r) search grid.
    pub grid: String,
}

/// Distance used when scanning the ensemble grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitMetric {
    /// Closed-form squared L2 distance between Gaussian KDEs.
    KernelL2,
    /// Exact 2-Wasserstein distance (bandwidth-free comparator).
    Wasserstein2,
}

/// Precomputed bulk spectra of diluted unitaries over a (p, r) grid,
/// `samples_per_point` draws per cell. Sampling is seeded per cell from the
/// grid indices, so a bank is deterministic in `(seed, grids, m)` and
/// independent of evaluation order.
pub struct DuBank {
    d: usize,
    grid_p: Vec<f64>,
    grid_r: Vec<usize>,
    samples_per_point: usize,
    /// Indexed `[p_idx * grid_r.len() + r_idx][sample]`.
    spectra: Vec<Vec<Vec<C64>>>,
}

impl DuBank {
    pub fn dim(&self) -> usize {
        self.d
    }

    /// One-line description of the grid for reports.
    pub fn grid_description(&self) -> String {
        let pmin = self.grid_p.iter().cloned().fold(f64::INFINITY, f64::min);
        let pmax = self.grid_p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let rmin = self.grid_r.iter().min().expect("grid validated nonempty");
        let rmax = self.grid_r.iter().max().expect("grid validated nonempty");
        format!(
            "p: {} points in [{pmin:.3}, {pmax:.3}]; r: {} points in [{rmin}, {rmax}]",
            self.grid_p.len(),
            self.grid_r.len(),
        )
    }
}

/// Samples the ensemble over the grid and stores the bulk spectra.
pub fn du_spectrum_bank(
    d: usize,
    grid_p: &[f64],
    grid_r: &[usize],
    samples_per_point: usize,
    seed: Seed,
) -> Result<DuBank, SpectralError> {
    if grid_p.is_empty() || grid_r.is_empty() {
        return Err(SpectralError::InvalidGrid("empty grid axis".into()));
    }
    if samples_per_point < 1 {
        return Err(SpectralError::InvalidGrid("need at least one sample per cell".into()));
    }
    let mut spectra = Vec::with_capacity(grid_p.len() * grid_r.len());
    for (pi, &p) in grid_p.iter().enumerate() {
        for (ri, &r) in grid_r.iter().enumerate() {
            let params = DUParams::new(d, p, r)?;
            let cell_seed = seed.derive_indices(&[pi as u64, ri as u64]);
            let mut cell = Vec::with_capacity(samples_per_point);
            for s in 0..samples_per_point {
                let map = sample_diluted_unitary(&params, cell_seed.derive_indices(&[s as u64]));
                cell.push(spectrum(&map)?.bulk().to_vec());
            }
            spectra.push(cell);
        }
    }
    Ok(DuBank {
        d,
        grid_p: grid_p.to_vec(),
        grid_r: grid_r.to_vec(),
        samples_per_point,
        spectra,
    })
}

/// Does a cell with mean distance `sd` at `(p, r)` beat the incumbent
/// `(best_sd, best_p, best_r)`? Ties go to smaller `r`, then smaller `p`.
fn cell_improves(sd: f64, p: f64, r: usize, best: Option<(f64, f64, usize)>) -> bool {
    match best {
        None => true,
        Some((bsd, bp, br)) => {
            sd < bsd || (sd == bsd && (r < br || (r == br && p < bp)))
        }
    }
}

/// Scans a precomputed bank for the grid cell whose sampled spectra best
/// match `spec` under the chosen metric, averaging the distance over the
/// cell's samples.
pub fn fit_du_with_bank(
    spec: &Spectrum,
    bank: &DuBank,
    sigma: f64,
    metric: FitMetric,
) -> Result<DUFit, SpectralError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(SpectralError::BadSigma { sigma });
    }
    let target = spec.bulk();
    let expected = bank.d * bank.d - 1;
    if target.len() != expected {
        return Err(SpectralError::SizeMismatch { left: target.len(), right: expected });
    }

    let mut best: Option<(f64, f64, usize)> = None;
    for (pi, &p) in bank.grid_p.iter().enumerate() {
        for (ri, &r) in bank.grid_r.iter().enumerate() {
            let cell = &bank.spectra[pi * bank.grid_r.len() + ri];
            let mut mean = 0.0;
            for sample in cell {
                mean += match metric {
                    FitMetric::KernelL2 => kernel_l2(target, sample, sigma),
                    FitMetric::Wasserstein2 => wasserstein2_bulk(target, sample),
                };
            }
            mean /= cell.len() as f64;
            if cell_improves(mean, p, r, best) {
                best = Some((mean, p, r));
            }
        }
    }
    let (sd_star, p_star, r_star) = best.expect("grid validated nonempty");
    Ok(DUFit {
        p_star,
        r_star,
        sd_star,
        sigma,
        samples_per_point: bank.samples_per_point,
        grid: bank.grid_description(),
    })
}

/// Fits `spec` to the diluted-unitary ensemble over the given grid with the
/// kernel distance, estimating the bandwidth from `spec` itself.
pub fn fit_du(
    spec: &Spectrum,
    d: usize,
    grid_p: &[f64],
    grid_r: &[usize],
    m_samples: usize,
    seed: Seed,
) -> Result<DUFit, SpectralError> {
    let sigma = kde_sigma(spec)?;
    let bank = du_spectrum_bank(d, grid_p, grid_r, m_samples, seed)?;
    fit_du_with_bank(spec, &bank, sigma, FitMetric::KernelL2)
}

/// Default dissipation-weight grid: 0.02 to 0.98 in steps of 0.02.
pub fn default_grid_p() -> Vec<f64> {
    (1..=49).map(|k| 0.02 * k as f64).collect()
}

/// Default rank grid: every integer rank from 1 to d².
pub fn default_grid_r(d: usize) -> Vec<usize> {
    (1..=d * d).collect()
}

/// Shape of the bulk spectral support of a fitted ensemble member.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportShape {
    Annulus,
    Disc,
}

/// Disc iff `(1 − p*)² < p*²/r*`, i.e. iff the inner radius R₋ is not real.
pub fn classify_support(fit: &DUFit) -> SupportShape {
    match du_radii(fit.p_star, fit.r_star).0 {
        Some(_) => SupportShape::Annulus,
        None => SupportShape::Disc,
    }
}

/// Extreme bulk moduli `(min |λ_j|, max |λ_j|)` over `j ≥ 2`.
pub fn radii_empirical(spec: &Spectrum) -> Result<(f64, f64), SpectralError> {
    let bulk = spec.bulk();
    if bulk.is_empty() {
        return Err(SpectralError::TooFewPoints { found: 0 });
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for z in bulk {
        lo = lo.min(z.norm());
        hi = hi.max(z.norm());
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{depolarizing, unitary_channel, KrausMap};
    use crate::numerics::{ginibre_with, haar_unitary};
    use rand::Rng;

    fn spec_of(values: Vec<C64>) -> Spectrum {
        Spectrum::new(values).unwrap()
    }

    fn re(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn kde_sigma_of_two_points_is_their_distance() {
        let s = spec_of(vec![re(1.0), re(0.5), re(0.4)]);
        assert!((kde_sigma(&s).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn kde_sigma_of_a_regular_grid_is_the_spacing() {
        let mut values = vec![re(1.0)];
        for k in 0..9 {
            values.push(re(-0.4 + 0.1 * k as f64));
        }
        let s = spec_of(values);
        assert!((kde_sigma(&s).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn kde_sigma_matches_a_pairwise_scan_oracle() {
        // 15 bulk points: 7 conjugate pairs plus one real value.
        let mut rng = Seed(80).rng();
        let mut values = vec![re(1.0), re(0.11)];
        let g = ginibre_with(&mut rng, 7, 1);
        for z in g.column(0).iter() {
            let z = z * 0.25;
            values.push(z);
            values.push(z.conj());
        }
        let s = spec_of(values);

        let bulk = s.bulk();
        assert_eq!(bulk.len(), 15);
        let mut total = 0.0;
        for i in 0..bulk.len() {
            let mut dists: Vec<f64> = (0..bulk.len())
                .filter(|&j| j != i)
                .map(|j| (bulk[i] - bulk[j]).norm())
                .collect();
            dists.sort_by(f64::total_cmp);
            total += dists[0];
        }
        let oracle = total / bulk.len() as f64;
        assert_eq!(kde_sigma(&s).unwrap(), oracle);
    }

    #[test]
    fn kde_sigma_rejects_degenerate_and_tiny_spectra() {
        let s = spec_of(vec![re(1.0), re(0.5), re(0.5), re(0.5)]);
        assert!(matches!(kde_sigma(&s), Err(SpectralError::DegenerateSpectrum)));

        let s = spec_of(vec![re(1.0), re(0.3)]);
        assert!(matches!(kde_sigma(&s), Err(SpectralError::TooFewPoints { found: 1 })));
    }

    #[test]
    fn spectral_distance_is_zero_exactly_on_identical_clouds() {
        let mut rng = Seed(81).rng();
        let mut values = vec![re(1.0), re(-0.2)];
        for z in ginibre_with(&mut rng, 5, 1).column(0).iter() {
            values.push(z * 0.3);
            values.push((z * 0.3).conj());
        }
        let a = spec_of(values.clone());
        let b = spec_of(values);
        assert_eq!(spectral_distance(&a, &b, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn spectral_distance_singleton_closed_form() {
        let x = 0.3;
        let sigma = 0.2;
        let a = spec_of(vec![re(1.0), re(x)]);
        let b = spec_of(vec![re(1.0), re(0.0)]);
        let sd = spectral_distance(&a, &b, sigma).unwrap();

        let sp2 = 2.0 * sigma * sigma;
        let expected =
            1.0 / (2.0 * std::f64::consts::PI * sp2) * 2.0 * (1.0 - (-x * x / (2.0 * sp2)).exp());
        assert!((sd - expected).abs() < 1e-14, "sd {sd} vs closed form {expected}");
    }

    /// Direct 2-D Simpson quadrature of ∫ (p_a − p_b)² dλ for the singleton
    /// pair and for random clouds.
    #[test]
    fn spectral_distance_matches_numerical_quadrature() {
        fn kde(points: &[C64], sigma: f64, z: C64) -> f64 {
            let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma * points.len() as f64);
            points
                .iter()
                .map(|p| (-((z - p).norm_sqr()) / (2.0 * sigma * sigma)).exp() * norm)
                .sum()
        }
        fn quadrature(a: &[C64], b: &[C64], sigma: f64) -> f64 {
            // Simpson in both axes over a box that contains all mass.
            let lo = -2.0;
            let hi = 2.0;
            let n = 800; // even
            let h = (hi - lo) / n as f64;
            let w1 = |k: usize| -> f64 {
                if k == 0 || k == n {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                }
            };
            let mut total = 0.0;
            for ix in 0..=n {
                let x = lo + ix as f64 * h;
                for iy in 0..=n {
                    let y = lo + iy as f64 * h;
                    let z = C64::new(x, y);
                    let diff = kde(a, sigma, z) - kde(b, sigma, z);
                    total += w1(ix) * w1(iy) * diff * diff;
                }
            }
            total * h * h / 9.0
        }

        let singleton_a = spec_of(vec![re(1.0), re(0.3)]);
        let singleton_b = spec_of(vec![re(1.0), re(0.0)]);
        let sd = spectral_distance(&singleton_a, &singleton_b, 0.2).unwrap();
        let quad = quadrature(singleton_a.bulk(), singleton_b.bulk(), 0.2);
        assert!((sd - quad).abs() < 1e-8, "singleton: {sd} vs quadrature {quad}");

        let mut rng = Seed(82).rng();
        for trial in 0..5u64 {
            let mut make = |n_pairs: usize, extra: f64| {
                let mut values = vec![re(1.0), re(extra)];
                for z in ginibre_with(&mut rng, n_pairs, 1).column(0).iter() {
                    values.push(z * 0.25);
                    values.push((z * 0.25).conj());
                }
                spec_of(values)
            };
            let a = make(2, 0.15);
            let b = make(2, -0.2);
            let sigma = 0.15 + 0.02 * trial as f64;
            let sd = spectral_distance(&a, &b, sigma).unwrap();
            let quad = quadrature(a.bulk(), b.bulk(), sigma);
            assert!(
                (sd - quad).abs() < 1e-6,
                "trial {trial}: {sd} vs quadrature {quad}"
            );
        }
    }

    #[test]
    fn spectral_distance_is_exactly_symmetric() {
        let mut rng = Seed(83).rng();
        for _ in 0..4 {
            let mut make = |off: f64| {
                let mut values = vec![re(1.0), re(off)];
                for z in ginibre_with(&mut rng, 3, 1).column(0).iter() {
                    values.push(z * 0.3);
                    values.push((z * 0.3).conj());
                }
                spec_of(values)
            };
            let a = make(0.4);
            let b = make(-0.3);
            let fwd = spectral_distance(&a, &b, 0.17).unwrap();
            let rev = spectral_distance(&b, &a, 0.17).unwrap();
            assert_eq!(fwd, rev);
        }
    }

    #[test]
    fn spectral_distance_validates_inputs() {
        let a = spec_of(vec![re(1.0), re(0.3), re(0.2)]);
        let b = spec_of(vec![re(1.0), re(0.3)]);
        assert!(matches!(
            spectral_distance(&a, &b, 0.2),
            Err(SpectralError::SizeMismatch { left: 2, right: 1 })
        ));
        assert!(matches!(
            spectral_distance(&a, &a, 0.0),
            Err(SpectralError::BadSigma { .. })
        ));
        assert!(matches!(
            spectral_distance(&a, &a, -1.0),
            Err(SpectralError::BadSigma { .. })
        ));
    }

    #[test]
    fn wasserstein_distance_on_singletons_is_the_point_distance() {
        let a = spec_of(vec![re(1.0), re(0.4)]);
        let b = spec_of(vec![re(1.0), re(0.0)]);
        assert!((wasserstein2_distance(&a, &b).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(wasserstein2_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn wasserstein_distance_matches_brute_force_matching() {
        let mut rng = Seed(84).rng();
        let mut make = || {
            let mut values = vec![re(1.0), re(0.1 + rng.random_range(0.0..0.2))];
            for z in ginibre_with(&mut rng, 2, 1).column(0).iter() {
                values.push(z * 0.3);
                values.push((z * 0.3).conj());
            }
            spec_of(values)
        };
        let a = make();
        let b = make();
        let w = wasserstein2_distance(&a, &b).unwrap();

        // Exhaustive minimum over all 5! matchings.
        let xa = a.bulk();
        let xb = b.bulk();
        let mut idx: Vec<usize> = (0..xb.len()).collect();
        let mut best = f64::INFINITY;
        permute(&mut idx, 0, &mut |perm| {
            let total: f64 = perm
                .iter()
                .enumerate()
                .map(|(i, &j)| (xa[i] - xb[j]).norm_sqr())
                .sum();
            best = best.min(total);
        });
        let expected = (best / xa.len() as f64).sqrt();
        assert!((w - expected).abs() < 1e-12, "{w} vs brute force {expected}");

        fn permute(idx: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
            if k == idx.len() {
                visit(idx);
                return;
            }
            for i in k..idx.len() {
                idx.swap(k, i);
                permute(idx, k + 1, visit);
                idx.swap(k, i);
            }
        }
    }

    #[test]
    fn tie_breaking_prefers_smaller_rank_then_smaller_weight() {
        assert!(cell_improves(1.0, 0.5, 8, None));
        assert!(cell_improves(0.9, 0.5, 8, Some((1.0, 0.2, 2))));
        assert!(!cell_improves(1.1, 0.5, 8, Some((1.0, 0.2, 2))));
        // Equal distance: smaller r wins regardless of p.
        assert!(cell_improves(1.0, 0.9, 1, Some((1.0, 0.2, 2))));
        assert!(!cell_improves(1.0, 0.9, 3, Some((1.0, 0.2, 2))));
        // Equal distance and rank: smaller p wins.
        assert!(cell_improves(1.0, 0.1, 2, Some((1.0, 0.2, 2))));
        assert!(!cell_improves(1.0, 0.3, 2, Some((1.0, 0.2, 2))));
    }

    #[test]
    fn fit_du_is_deterministic_in_the_seed() {
        let d = 4;
        let truth = DUParams::new(d, 0.5, 4).unwrap();
        let map = sample_diluted_unitary(&truth, Seed(85));
        let spec = spectrum(&map).unwrap();
        let grid_p = [0.3, 0.5, 0.7];
        let grid_r = [1, 4, 16];
        let f1 = fit_du(&spec, d, &grid_p, &grid_r, 1, Seed(86)).unwrap();
        let f2 = fit_du(&spec, d, &grid_p, &grid_r, 1, Seed(86)).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn unitary_spectrum_fits_to_the_most_unitary_grid_point() {
        // The minimum grid p must put the near-unitary ring within a kernel
        // width of the unit circle; the bandwidth chosen by kde_sigma for a
        // unitary product spectrum is small, so widely separated rings would
        // all register as equally non-overlapping.
        for trial in 0..3u64 {
            let d = 4;
            let u = haar_unitary(d, Seed(87).derive_indices(&[trial]));
            let spec = spectrum(&unitary_channel(&u).unwrap()).unwrap();
            let grid_p = [0.05, 0.3, 0.6, 0.9];
            let grid_r = [1, 4];
            let fit =
                fit_du(&spec, d, &grid_p, &grid_r, 3, Seed(88).derive_indices(&[trial])).unwrap();
            assert_eq!(
                fit.p_star, 0.05,
                "unit-circle support must pick the smallest p (trial {trial})"
            );
        }
    }

    #[test]
    fn fit_recovers_coarse_ensemble_parameters() {
        let d = 8;
        let truth = DUParams::new(d, 0.5, 8).unwrap();
        let map = sample_diluted_unitary(&truth, Seed(89));
        let spec = spectrum(&map).unwrap();
        let grid_p = [0.2, 0.35, 0.5, 0.65, 0.8];
        let grid_r = [1, 4, 8, 16, 64];
        let fit = fit_du(&spec, d, &grid_p, &grid_r, 3, Seed(90)).unwrap();
        assert!(
            (fit.p_star - 0.5).abs() <= 0.15,
            "p* = {} too far from 0.5 (sd {})",
            fit.p_star,
            fit.sd_star
        );
        // Neighboring large ranks produce nearly identical annuli at this
        // dimension; the robust claim is that the rank-1 near-disc is ruled out.
        assert!(fit.r_star > 1, "r* = 1 implies a filled disc, not the observed annulus");
    }

    #[test]
    fn bank_reuse_reproduces_the_direct_fit() {
        let d = 4;
        let map = sample_diluted_unitary(&DUParams::new(d, 0.4, 2).unwrap(), Seed(91));
        let spec = spectrum(&map).unwrap();
        let grid_p = [0.2, 0.4, 0.6];
        let grid_r = [1, 2, 4];
        let direct = fit_du(&spec, d, &grid_p, &grid_r, 2, Seed(92)).unwrap();
        let bank = du_spectrum_bank(d, &grid_p, &grid_r, 2, Seed(92)).unwrap();
        let sigma = kde_sigma(&spec).unwrap();
        let via_bank = fit_du_with_bank(&spec, &bank, sigma, FitMetric::KernelL2).unwrap();
        assert_eq!(direct, via_bank);
    }

    #[test]
    fn classify_support_matches_the_radii_condition() {
        let fit = |p: f64, r: usize| DUFit {
            p_star: p,
            r_star: r,
            sd_star: 0.0,
            sigma: 0.1,
            samples_per_point: 1,
            grid: String::new(),
        };
        assert_eq!(classify_support(&fit(0.71, 23)), SupportShape::Annulus);
        assert_eq!(classify_support(&fit(0.9, 1)), SupportShape::Disc);
        assert_eq!(classify_support(&fit(0.0, 5)), SupportShape::Annulus);
    }

    #[test]
    fn empirical_radii_of_known_channels() {
        let ident = spectrum(&KrausMap::identity(4)).unwrap();
        assert_eq!(radii_empirical(&ident).unwrap(), (1.0, 1.0));

        let depol = spectrum(&depolarizing(0.4)).unwrap();
        let (lo, hi) = radii_empirical(&depol).unwrap();
        assert!((lo - 0.6).abs() < 1e-12);
        assert!((hi - 0.6).abs() < 1e-12);
    }

    #[test]
    fn default_grids_cover_the_documented_ranges() {
        let p = default_grid_p();
        assert_eq!(p.len(), 49);
        assert!((p[0] - 0.02).abs() < 1e-15);
        assert!((p[48] - 0.98).abs() < 1e-15);
        let r = default_grid_r(16);
        assert_eq!(r.len(), 256);
        assert_eq!(r[0], 1);
        assert_eq!(r[255], 256);
    }
}
