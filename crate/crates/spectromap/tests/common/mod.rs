//! Helpers shared between integration-test binaries.

use spectromap::ensembles::{du_radii, sample_diluted_unitary, DUParams};
use spectromap::numerics::{max_modulus_arnoldi, shifted_inverse_extreme, vec_col, CMat, Seed};

/// Outcome of the large-dimension diluted-unitary radii experiment.
pub struct RadiiExperiment {
    pub mean_max: f64,
    pub mean_min: f64,
    pub r_plus: f64,
    pub r_minus: f64,
}

/// Samples `n_samples` diluted unitaries at d = 64 with the given dissipation
/// weight and rank, and estimates the extreme bulk eigenvalue moduli of each
/// by Krylov iteration (outer radius: Arnoldi on the Kraus matrix-vector
/// product; inner radius: Arnoldi on the inverse via one LU factorization),
/// deflating the trivial eigenvalue 1 through its left eigenvector vec(I).
/// Returns ensemble means next to the asymptotic radii, which must both be
/// real for the chosen parameters.
///
/// The Krylov estimators are validated against dense spectra at small
/// dimension in the library tests. Per-sample cost is dominated by the LU
/// factorization, not by the iteration count, so the step counts are sized
/// generously: the Ritz values pin the annulus edges to a fraction of a
/// percent.
pub fn du_radii_experiment_d64(
    p: f64,
    r: usize,
    n_samples: usize,
    verbose: bool,
) -> RadiiExperiment {
    let d = 64;
    let params = DUParams::new(d, p, r).unwrap();
    let (r_minus, r_plus) = du_radii(params.p, params.r);
    let r_minus = r_minus.expect("(1−p)² ≥ p²/r for these parameters");

    let eye_vec = vec_col(&CMat::eye(d));
    let root = Seed(407).derive_indices(&[(p * 1000.0).round() as u64, r as u64]);

    let mut sum_max = 0.0;
    let mut sum_min = 0.0;
    for k in 0..n_samples as u64 {
        let map = sample_diluted_unitary(&params, root.derive_indices(&[k]));

        let (max_est, max_res) = max_modulus_arnoldi(
            |x| map.apply_vec(x),
            d * d,
            120,
            Some(&eye_vec),
            root.derive_indices(&[k, 1]),
        )
        .unwrap();

        let superop = map.to_superop();
        let (min_est, min_res) =
            shifted_inverse_extreme(&superop, 70, Some(&eye_vec), root.derive_indices(&[k, 2]))
                .unwrap();

        if verbose {
            println!(
                "sample {k:2}: max {max_est:.4} (res {max_res:.1e}), \
                 min {min_est:.4} (res {min_res:.1e})"
            );
        }
        sum_max += max_est;
        sum_min += min_est;
    }

    RadiiExperiment {
        mean_max: sum_max / n_samples as f64,
        mean_min: sum_min / n_samples as f64,
        r_plus,
        r_minus,
    }
}
