//! `spectromap` — command-line front end for the map-retrieval and
//! spectral-analysis library.
//!
//! Every subcommand reads/writes plain files (JSON, CSV, or the text
//! tomography format) so runs can be scripted and diffed. Errors are printed
//! to stderr as one JSON object; usage errors exit 2, data errors exit 1.

mod pipeline;
mod util;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use spectromap::channels::{spectrum, KrausMap, Spectrum};
use spectromap::circuits::{expressibility, Baseline};
use spectromap::ensembles::{
    du_radii, lindblad_map, random_lindbladian, sample_diluted_unitary, DUParams, LindbladParams,
};
use spectromap::numerics::Seed;
use spectromap::retrieval::{fit_map, fit_map_joint, fit_spam, kl_eval, SpamFitModel};
use spectromap::spam::{synthetic_spam, SpamModel};
use spectromap::spectral::{du_spectrum_bank, fit_du_with_bank, kde_sigma, FitMetric};
use spectromap::tomography::{
    all_modes, calibration_modes, exact_dataset, sample_modes, simulate_with_model, Readout,
    TomographyDataset, GATE_CONVENTION,
};

use pipeline::{deterministic_report, du_fit_file, fit_config, run_pipeline};
use util::{
    data, data_at, float_grid, int_grid, read_text, write_text, CliError, DuFitFile,
    SCHEMA_VERSION,
};

fn long_version() -> String {
    format!(
        "{} (config schema v{SCHEMA_VERSION}, gate convention {GATE_CONVENTION})",
        env!("CARGO_PKG_VERSION")
    )
}

#[derive(Parser)]
#[command(name = "spectromap", version = long_version(), about = "Retrieve quantum maps from tomography data and fit their spectra to random-map ensembles")]
struct Cli {
    /// Cap BLAS/OpenMP threads (sets OPENBLAS_NUM_THREADS and OMP_NUM_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TruthKind {
    Lindblad,
    Du,
    Circuit,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SpamModelArg {
    Corruption,
    Povm,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    Kernel,
    Wasserstein,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BaselineArg {
    Sampled,
    Analytic,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a ground-truth channel and write it as Kraus-operator JSON.
    GenTruth {
        /// Channel family: a map generated by a random Lindbladian, a
        /// diluted-unitary draw, or a random layered circuit.
        #[arg(long, value_enum)]
        kind: TruthKind,
        /// Hilbert-space dimension (lindblad, du).
        #[arg(long)]
        d: Option<usize>,
        /// Dissipator Kraus rank (lindblad, du).
        #[arg(long)]
        rank: Option<usize>,
        /// Hamiltonian weight (lindblad).
        #[arg(long)]
        alpha: Option<f64>,
        /// Map strength (lindblad).
        #[arg(long)]
        beta: Option<f64>,
        /// Dissipative weight in (0, 1) (du).
        #[arg(long)]
        p: Option<f64>,
        /// Qubit count (circuit).
        #[arg(long)]
        n: Option<usize>,
        /// Layer count (circuit).
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate Pauli-mode tomography data for a channel under a SPAM model.
    GenData {
        /// Channel JSON; absent means the identity channel.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Qubit count.
        #[arg(long)]
        n: usize,
        /// SPAM model JSON. Mutually exclusive with --c1/--c2.
        #[arg(long)]
        spam: Option<PathBuf>,
        /// Synthetic-SPAM preparation coefficient (with --c2).
        #[arg(long)]
        c1: Option<f64>,
        /// Synthetic-SPAM readout coefficient (with --c1).
        #[arg(long)]
        c2: Option<f64>,
        /// "all", "calibration", or a mode count to sample.
        #[arg(long, default_value = "all")]
        modes: String,
        /// Shots per mode; 0 stores exact probabilities.
        #[arg(long, default_value_t = 1024)]
        shots: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset path (text format).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a SPAM model to readout-calibration data.
    FitSpam {
        /// Calibration dataset (text format).
        #[arg(long)]
        data: PathBuf,
        /// Readout parameterization to fit.
        #[arg(long, value_enum, default_value_t = SpamModelArg::Corruption)]
        model: SpamModelArg,
        /// Output SPAM JSON (corruption view).
        #[arg(long)]
        out: PathBuf,
        /// Optional optimizer report JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Optional POVM JSON (povm model only).
        #[arg(long)]
        povm_out: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        init_scale: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Retrieve a CPTP map from tomography data with the SPAM model frozen
    /// (or refined jointly with --joint-spam).
    FitMap {
        /// Training dataset (text format).
        #[arg(long)]
        data: PathBuf,
        /// SPAM model JSON.
        #[arg(long)]
        spam: PathBuf,
        /// Kraus rank of the fitted map.
        #[arg(long)]
        rank: usize,
        /// Output channel JSON.
        #[arg(long)]
        out: PathBuf,
        /// Optional optimizer report JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Refine the SPAM model jointly with the map.
        #[arg(long)]
        joint_spam: bool,
        /// Output path for the refined SPAM (requires --joint-spam).
        #[arg(long)]
        spam_out: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Modes per mini-batch; 0 or absent = full batch.
        #[arg(long)]
        batch_modes: Option<usize>,
        #[arg(long)]
        init_scale: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Held-out evaluation: mean KL divergence of predictions vs. data.
    KlEval {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        spam: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output JSON; absent prints to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Eigenvalues of a channel's superoperator, as CSV.
    Spectrum {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Accepted for script uniformity; the spectrum is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit a spectrum to the diluted-unitary ensemble over a (p, rank) grid.
    FitDu {
        /// Spectrum CSV.
        #[arg(long)]
        spectrum: PathBuf,
        /// Hilbert-space dimension of the map the spectrum came from.
        #[arg(long)]
        d: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.02)]
        p_min: f64,
        #[arg(long, default_value_t = 0.98)]
        p_max: f64,
        #[arg(long, default_value_t = 0.02)]
        p_step: f64,
        #[arg(long, default_value_t = 1)]
        r_min: usize,
        /// Defaults to d².
        #[arg(long)]
        r_max: Option<usize>,
        #[arg(long, default_value_t = 1)]
        r_step: usize,
        /// Ensemble samples per grid point.
        #[arg(long, default_value_t = 5)]
        samples: usize,
        #[arg(long, value_enum, default_value_t = MetricArg::Kernel)]
        metric: MetricArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Expressibility (KL divergence to the Haar baseline) per circuit depth.
    Expressibility {
        #[arg(long)]
        n: usize,
        /// Maximum depth; one CSV row per depth 1..=depth.
        #[arg(long)]
        depth: usize,
        #[arg(long, default_value_t = 10000)]
        samples: usize,
        #[arg(long, default_value_t = 75)]
        bins: usize,
        #[arg(long, value_enum, default_value_t = BaselineArg::Sampled)]
        baseline: BaselineArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; absent prints to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot-ready CSV tables for a spectrum and (optionally) its ensemble fit.
    PlotData {
        /// Spectrum CSV.
        #[arg(long)]
        spectrum: PathBuf,
        /// Ensemble-fit JSON from fit-du.
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the full config-driven pipeline: truth → data → fits → spectra.
    Run {
        /// Pipeline TOML config.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::GenTruth { .. } => "gen-truth",
            Cmd::GenData { .. } => "gen-data",
            Cmd::FitSpam { .. } => "fit-spam",
            Cmd::FitMap { .. } => "fit-map",
            Cmd::KlEval { .. } => "kl-eval",
            Cmd::Spectrum { .. } => "spectrum",
            Cmd::FitDu { .. } => "fit-du",
            Cmd::Expressibility { .. } => "expressibility",
            Cmd::PlotData { .. } => "plot-data",
            Cmd::Run { .. } => "run",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        // Must happen before the first BLAS call in this process.
        std::env::set_var("OPENBLAS_NUM_THREADS", t.to_string());
        std::env::set_var("OMP_NUM_THREADS", t.to_string());
    }
    let name = cli.command.name();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, msg, code) = match e {
                CliError::Usage(m) => ("usage", m, 2),
                CliError::Data(m) => ("data", m, 1),
            };
            let obj = serde_json::json!({ "command": name, "kind": kind, "error": msg });
            eprintln!("{obj}");
            ExitCode::from(code)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::GenTruth { kind, d, rank, alpha, beta, p, n, depth, seed, out } => {
            gen_truth(kind, d, rank, alpha, beta, p, n, depth, seed, &out)
        }
        Cmd::GenData { map, n, spam, c1, c2, modes, shots, seed, out } => {
            gen_data(map.as_deref(), n, spam.as_deref(), c1, c2, &modes, shots, seed, &out)
        }
        Cmd::FitSpam {
            data,
            model,
            out,
            report,
            povm_out,
            iters,
            learning_rate,
            init_scale,
            seed,
        } => cmd_fit_spam(
            &data,
            model,
            &out,
            report.as_deref(),
            povm_out.as_deref(),
            iters,
            learning_rate,
            init_scale,
            seed,
        ),
        Cmd::FitMap {
            data,
            spam,
            rank,
            out,
            report,
            joint_spam,
            spam_out,
            iters,
            learning_rate,
            batch_modes,
            init_scale,
            seed,
        } => cmd_fit_map(
            &data,
            &spam,
            rank,
            &out,
            report.as_deref(),
            joint_spam,
            spam_out.as_deref(),
            iters,
            learning_rate,
            batch_modes,
            init_scale,
            seed,
        ),
        Cmd::KlEval { map, spam, data, out } => cmd_kl_eval(&map, &spam, &data, out.as_deref()),
        Cmd::Spectrum { map, out, seed: _ } => cmd_spectrum(&map, &out),
        Cmd::FitDu {
            spectrum,
            d,
            out,
            p_min,
            p_max,
            p_step,
            r_min,
            r_max,
            r_step,
            samples,
            metric,
            seed,
        } => cmd_fit_du(
            &spectrum, d, &out, p_min, p_max, p_step, r_min, r_max, r_step, samples, metric, seed,
        ),
        Cmd::Expressibility { n, depth, samples, bins, baseline, seed, out } => {
            cmd_expressibility(n, depth, samples, bins, baseline, seed, out.as_deref())
        }
        Cmd::PlotData { spectrum, fit, out_dir } => {
            cmd_plot_data(&spectrum, fit.as_deref(), &out_dir)
        }
        Cmd::Run { config, out_dir } => run_pipeline(&config, out_dir.as_deref()),
    }
}

/// Reject a flag that the chosen kind does not use.
fn forbid<T>(kind: &str, flag: &str, value: &Option<T>) -> Result<(), CliError> {
    if value.is_some() {
        return Err(CliError::Usage(format!("--{flag} does not apply to kind {kind}")));
    }
    Ok(())
}

/// Require a flag for the chosen kind.
fn need<T: Copy>(kind: &str, flag: &str, value: Option<T>) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("kind {kind} requires --{flag}")))
}

#[allow(clippy::too_many_arguments)]
fn gen_truth(
    kind: TruthKind,
    d: Option<usize>,
    rank: Option<usize>,
    alpha: Option<f64>,
    beta: Option<f64>,
    p: Option<f64>,
    n: Option<usize>,
    depth: Option<usize>,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let seed = Seed(seed);
    let map: KrausMap = match kind {
        TruthKind::Lindblad => {
            forbid("lindblad", "p", &p)?;
            forbid("lindblad", "n", &n)?;
            forbid("lindblad", "depth", &depth)?;
            let d = need("lindblad", "d", d)?;
            let rank = need("lindblad", "rank", rank)?;
            let alpha = need("lindblad", "alpha", alpha)?;
            let beta = need("lindblad", "beta", beta)?;
            let params = LindbladParams::new(d, rank, alpha, beta, seed).map_err(data)?;
            let l = random_lindbladian(&params);
            lindblad_map(&l, beta).map_err(data)?.1
        }
        TruthKind::Du => {
            forbid("du", "alpha", &alpha)?;
            forbid("du", "beta", &beta)?;
            forbid("du", "n", &n)?;
            forbid("du", "depth", &depth)?;
            let d = need("du", "d", d)?;
            let p = need("du", "p", p)?;
            let rank = need("du", "rank", rank)?;
            let params = DUParams::new(d, p, rank).map_err(data)?;
            sample_diluted_unitary(&params, seed)
        }
        TruthKind::Circuit => {
            forbid("circuit", "d", &d)?;
            forbid("circuit", "rank", &rank)?;
            forbid("circuit", "alpha", &alpha)?;
            forbid("circuit", "beta", &beta)?;
            forbid("circuit", "p", &p)?;
            let n = need("circuit", "n", n)?;
            let depth = need("circuit", "depth", depth)?;
            if n == 0 || depth == 0 {
                return Err(CliError::Usage("circuit needs n ≥ 1 and depth ≥ 1".into()));
            }
            let spec = spectromap::circuits::sample_angles(n, depth, seed);
            spectromap::channels::unitary_channel(&spectromap::circuits::build_unitary(&spec))
                .map_err(data)?
        }
    };
    write_text(out, &map.to_json())
}

#[allow(clippy::too_many_arguments)]
fn gen_data(
    map: Option<&Path>,
    n: usize,
    spam: Option<&Path>,
    c1: Option<f64>,
    c2: Option<f64>,
    modes: &str,
    shots: u64,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Usage("need at least one qubit".into()));
    }
    let seed = Seed(seed);
    let d = 1usize << n;
    let channel = match map {
        Some(path) => {
            let m = KrausMap::from_json(&read_text(path)?)
                .map_err(|e| data_at(&path.display().to_string(), e))?;
            if m.dim() != d {
                return Err(CliError::Data(format!(
                    "channel dimension {} does not match 2^{n} = {d}",
                    m.dim()
                )));
            }
            m
        }
        None => KrausMap::identity(d),
    };
    let spam_model = match (spam, c1, c2) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            return Err(CliError::Usage(
                "--spam and --c1/--c2 are mutually exclusive".into(),
            ))
        }
        (Some(path), None, None) => {
            let m = SpamModel::from_json(&read_text(path)?)
                .map_err(|e| data_at(&path.display().to_string(), e))?;
            if m.dim() != d {
                return Err(CliError::Data(format!(
                    "SPAM dimension {} does not match 2^{n} = {d}",
                    m.dim()
                )));
            }
            m
        }
        (None, Some(c1), Some(c2)) => synthetic_spam(d, c1, c2, seed.derive("spam-truth")).0,
        (None, None, None) => SpamModel::ideal(d),
        (None, _, _) => {
            return Err(CliError::Usage("--c1 and --c2 must be given together".into()))
        }
    };
    let mode_list = match modes {
        "all" => all_modes(n),
        "calibration" => calibration_modes(n),
        count => {
            let m: usize = count.parse().map_err(|_| {
                CliError::Usage(format!(
                    "modes must be \"all\", \"calibration\", or a count, got {count:?}"
                ))
            })?;
            sample_modes(n, m, seed.derive("modes")).map_err(data)?
        }
    };
    let ds = if shots == 0 {
        exact_dataset(
            &channel,
            spam_model.rho0(),
            Readout::Corruption(spam_model.corruption()),
            &mode_list,
        )
        .map_err(data)?
    } else {
        simulate_with_model(&channel, &spam_model, &mode_list, shots, seed.derive("data"))
            .map_err(data)?
    };
    ds.write_file(out).map_err(|e| data_at(&out.display().to_string(), e))
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit_spam(
    data_path: &Path,
    model: SpamModelArg,
    out: &Path,
    report: Option<&Path>,
    povm_out: Option<&Path>,
    iters: Option<usize>,
    learning_rate: Option<f64>,
    init_scale: Option<f64>,
    seed: u64,
) -> Result<(), CliError> {
    if matches!(model, SpamModelArg::Corruption) && povm_out.is_some() {
        return Err(CliError::Usage(
            "--povm-out only applies to --model povm".into(),
        ));
    }
    let ds = TomographyDataset::read_file(data_path)
        .map_err(|e| data_at(&data_path.display().to_string(), e))?;
    let model = match model {
        SpamModelArg::Corruption => SpamFitModel::Corruption,
        SpamModelArg::Povm => SpamFitModel::Povm,
    };
    let cfg = fit_config(iters, learning_rate, None, init_scale, Seed(seed));
    let (fitted, rep) = fit_spam(&ds, model, &cfg).map_err(data)?;
    write_text(out, &fitted.model().map_err(data)?.to_json())?;
    if let Some(path) = povm_out {
        match &fitted {
            spectromap::retrieval::FittedSpam::Povm { povm, .. } => {
                write_text(path, &povm.to_json())?
            }
            spectromap::retrieval::FittedSpam::Corruption(_) => unreachable!("checked above"),
        }
    }
    if let Some(path) = report {
        write_text(
            path,
            &serde_json::to_string_pretty(&deterministic_report(&rep)).expect("serializable"),
        )?;
    }
    println!("final loss {:.6e} after {} iterations", rep.final_loss, rep.iterations);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit_map(
    data_path: &Path,
    spam_path: &Path,
    rank: usize,
    out: &Path,
    report: Option<&Path>,
    joint_spam: bool,
    spam_out: Option<&Path>,
    iters: Option<usize>,
    learning_rate: Option<f64>,
    batch_modes: Option<usize>,
    init_scale: Option<f64>,
    seed: u64,
) -> Result<(), CliError> {
    if spam_out.is_some() && !joint_spam {
        return Err(CliError::Usage("--spam-out requires --joint-spam".into()));
    }
    let ds = TomographyDataset::read_file(data_path)
        .map_err(|e| data_at(&data_path.display().to_string(), e))?;
    let spam = SpamModel::from_json(&read_text(spam_path)?)
        .map_err(|e| data_at(&spam_path.display().to_string(), e))?;
    let cfg = fit_config(iters, learning_rate, batch_modes, init_scale, Seed(seed));
    let rep = if joint_spam {
        let (map, refined, rep) = fit_map_joint(&ds, &spam, rank, &cfg).map_err(data)?;
        write_text(out, &map.to_json())?;
        if let Some(path) = spam_out {
            write_text(path, &refined.to_json())?;
        }
        rep
    } else {
        let (map, rep) = fit_map(&ds, &spam, rank, &cfg).map_err(data)?;
        write_text(out, &map.to_json())?;
        rep
    };
    if let Some(path) = report {
        write_text(
            path,
            &serde_json::to_string_pretty(&deterministic_report(&rep)).expect("serializable"),
        )?;
    }
    println!("final loss {:.6e} after {} iterations", rep.final_loss, rep.iterations);
    Ok(())
}

fn cmd_kl_eval(
    map_path: &Path,
    spam_path: &Path,
    data_path: &Path,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let map = KrausMap::from_json(&read_text(map_path)?)
        .map_err(|e| data_at(&map_path.display().to_string(), e))?;
    let spam = SpamModel::from_json(&read_text(spam_path)?)
        .map_err(|e| data_at(&spam_path.display().to_string(), e))?;
    let ds = TomographyDataset::read_file(data_path)
        .map_err(|e| data_at(&data_path.display().to_string(), e))?;
    let kl = kl_eval(&map, &spam, &ds).map_err(data)?;
    let json = serde_json::to_string_pretty(&kl).expect("serializable");
    match out {
        Some(path) => write_text(path, &json),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn cmd_spectrum(map_path: &Path, out: &Path) -> Result<(), CliError> {
    let map = KrausMap::from_json(&read_text(map_path)?)
        .map_err(|e| data_at(&map_path.display().to_string(), e))?;
    let spec = spectrum(&map).map_err(data)?;
    write_text(out, &spec.to_csv())
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit_du(
    spectrum_path: &Path,
    d: usize,
    out: &Path,
    p_min: f64,
    p_max: f64,
    p_step: f64,
    r_min: usize,
    r_max: Option<usize>,
    r_step: usize,
    samples: usize,
    metric: MetricArg,
    seed: u64,
) -> Result<(), CliError> {
    let spec = Spectrum::from_csv(&read_text(spectrum_path)?)
        .map_err(|e| data_at(&spectrum_path.display().to_string(), e))?;
    if d < 2 {
        return Err(CliError::Usage("dimension must be at least 2".into()));
    }
    let grid_p = float_grid(p_min, p_max, p_step)?;
    let grid_r = int_grid(r_min, r_max.unwrap_or(d * d), r_step)?;
    let metric = match metric {
        MetricArg::Kernel => FitMetric::KernelL2,
        MetricArg::Wasserstein => FitMetric::Wasserstein2,
    };
    let sigma = kde_sigma(&spec).map_err(data)?;
    let bank = du_spectrum_bank(d, &grid_p, &grid_r, samples, Seed(seed)).map_err(data)?;
    let fit = fit_du_with_bank(&spec, &bank, sigma, metric).map_err(data)?;
    let file = du_fit_file(fit, &spec, metric)?;
    write_text(out, &serde_json::to_string_pretty(&file).expect("serializable"))?;
    println!(
        "best cell p = {}, rank = {} (distance {:.6e})",
        file.fit.p_star, file.fit.r_star, file.fit.sd_star
    );
    Ok(())
}

fn cmd_expressibility(
    n: usize,
    depth: usize,
    samples: usize,
    bins: usize,
    baseline: BaselineArg,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if n == 0 || depth == 0 || samples == 0 || bins == 0 {
        return Err(CliError::Usage(
            "n, depth, samples, and bins must all be at least 1".into(),
        ));
    }
    let baseline = match baseline {
        BaselineArg::Sampled => Baseline::Sampled,
        BaselineArg::Analytic => Baseline::Analytic,
    };
    let mut csv = String::from("l,n_sample,value\n");
    for l in 1..=depth {
        let value =
            expressibility(n, l, samples, bins, Seed(seed).derive_indices(&[l as u64]), baseline);
        csv.push_str(&format!("{l},{samples},{value}\n"));
    }
    match out {
        Some(path) => write_text(path, &csv),
        None => {
            print!("{csv}");
            std::io::stdout().flush().ok();
            Ok(())
        }
    }
}

fn cmd_plot_data(spectrum_path: &Path, fit: Option<&Path>, out_dir: &Path) -> Result<(), CliError> {
    let spec = Spectrum::from_csv(&read_text(spectrum_path)?)
        .map_err(|e| data_at(&spectrum_path.display().to_string(), e))?;
    std::fs::create_dir_all(out_dir).map_err(|e| data_at(&out_dir.display().to_string(), e))?;

    let mut eig = String::from("re,im\n");
    for z in spec.values() {
        eig.push_str(&format!("{},{}\n", z.re, z.im));
    }
    write_text(&out_dir.join("eigenvalues.csv"), &eig)?;

    let fit_file: Option<DuFitFile> = match fit {
        Some(path) => Some(
            serde_json::from_str(&read_text(path)?)
                .map_err(|e| data_at(&path.display().to_string(), e))?,
        ),
        None => None,
    };

    let mut circles = String::from("curve,re,im\n");
    let ring = |label: &str, radius: f64, out: &mut String| {
        for k in 0..=256 {
            let t = 2.0 * std::f64::consts::PI * k as f64 / 256.0;
            out.push_str(&format!("{label},{},{}\n", radius * t.cos(), radius * t.sin()));
        }
    };
    ring("unit", 1.0, &mut circles);
    if let Some(f) = &fit_file {
        ring("outer", f.r_plus, &mut circles);
        if let Some(rm) = f.r_minus {
            ring("inner", rm, &mut circles);
        }
    }
    write_text(&out_dir.join("circles.csv"), &circles)?;

    if let Some(f) = &fit_file {
        let mut radii = String::from("p,r_minus,r_plus\n");
        for i in 1..=99 {
            let p = i as f64 / 100.0;
            let (rm, rp) = du_radii(p, f.fit.r_star);
            let rm_str = rm.map(|v| v.to_string()).unwrap_or_default();
            radii.push_str(&format!("{p},{rm_str},{rp}\n"));
        }
        write_text(&out_dir.join("radii_vs_p.csv"), &radii)?;

        let mut pts = String::from(
            "p_star,r_star,empirical_min,empirical_max,r_minus_star,r_plus_star\n",
        );
        let rm_str = f.r_minus.map(|v| v.to_string()).unwrap_or_default();
        pts.push_str(&format!(
            "{},{},{},{},{rm_str},{}\n",
            f.fit.p_star, f.fit.r_star, f.empirical_min, f.empirical_max, f.r_plus
        ));
        write_text(&out_dir.join("points.csv"), &pts)?;
    }
    Ok(())
}
