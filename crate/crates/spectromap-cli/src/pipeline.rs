//! Config-driven end-to-end pipeline: ground truth → synthetic tomography
//! (map data plus a readout-calibration run) → SPAM fit → map fit →
//! spectra → ensemble fits, with every artifact hashed into a manifest.
//!
//! Configs are TOML with a versioned schema; unknown keys are rejected so a
//! typo cannot silently fall back to a default. Every stage derives its seed
//! from the global seed and the stage name, so a rerun with the same config
//! reproduces every artifact bit for bit (optimizer wall times are zeroed in
//! written reports for exactly this reason).

use std::path::Path;

use serde::{Deserialize, Serialize};

use spectromap::channels::{spectrum, KrausMap, Spectrum};
use spectromap::circuits::{build_unitary, sample_angles};
use spectromap::ensembles::{
    du_radii, lindblad_map, random_lindbladian, sample_diluted_unitary, DUParams, LindbladParams,
};
use spectromap::numerics::Seed;
use spectromap::retrieval::{fit_map, fit_spam, kl_eval, Batch, FitConfig, FitReport, SpamFitModel};
use spectromap::spam::{synthetic_spam, SpamModel};
use spectromap::spectral::{
    classify_support, default_grid_p, default_grid_r, du_spectrum_bank, fit_du_with_bank,
    kde_sigma, radii_empirical, FitMetric,
};
use spectromap::tomography::{
    all_modes, calibration_modes, exact_dataset, sample_modes, simulate_with_model, split,
    Readout, TomographyDataset, GATE_CONVENTION,
};

use crate::util::{data, data_at, float_grid, int_grid, read_text, sha256_hex, write_text, CliError, DuFitFile, SCHEMA_VERSION};

/// Top-level pipeline configuration. Field names are the config file schema.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub experiment: String,
    pub seed: u64,
    pub out_dir: String,
    pub truth: TruthConfig,
    pub spam: SpamStage,
    pub data: DataStage,
    pub fit: FitStage,
    pub spectral: SpectralStage,
}

/// Ground-truth channel selection, mirroring `gen-truth`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
pub enum TruthConfig {
    Lindblad { d: usize, rank: usize, alpha: f64, beta: f64 },
    Du { d: usize, p: f64, rank: usize },
    Circuit { n: usize, depth: usize },
}

/// Synthetic SPAM truth plus the model to fit against the calibration run.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpamStage {
    pub c1: f64,
    pub c2: f64,
    /// "corruption" or "povm".
    pub fit_model: String,
    #[serde(default)]
    pub iters: Option<usize>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub init_scale: Option<f64>,
}

/// Tomography-data stage.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataStage {
    /// Qubit count; the truth channel must act on dimension 2ⁿ.
    pub n: usize,
    /// Number of sampled modes, or the string "all".
    pub modes: ModesSpec,
    /// Shots per mode; 0 stores exact probabilities.
    pub shots: u64,
    /// Fraction of modes kept for training; the rest are held out.
    pub train_fraction: f64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ModesSpec {
    Count(u64),
    Keyword(String),
}

/// Map-retrieval stage.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitStage {
    pub rank: usize,
    #[serde(default)]
    pub iters: Option<usize>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    /// 0 or absent = full-batch gradients.
    #[serde(default)]
    pub batch_modes: Option<usize>,
    #[serde(default)]
    pub init_scale: Option<f64>,
}

/// Ensemble-fit stage; absent grid fields fall back to the library defaults.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralStage {
    #[serde(default)]
    pub p_min: Option<f64>,
    #[serde(default)]
    pub p_max: Option<f64>,
    #[serde(default)]
    pub p_step: Option<f64>,
    #[serde(default)]
    pub r_min: Option<usize>,
    #[serde(default)]
    pub r_max: Option<usize>,
    #[serde(default)]
    pub r_step: Option<usize>,
    #[serde(default)]
    pub samples_per_point: Option<usize>,
    /// "kernel" (default) or "wasserstein".
    #[serde(default)]
    pub metric: Option<String>,
}

/// One entry of the artifact manifest.
#[derive(Debug, Serialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Manifest written at the end of a run (or after a failed stage, with the
/// artifacts produced so far).
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub gate_convention: &'static str,
    pub experiment: String,
    pub seed: u64,
    pub train_modes: Option<usize>,
    pub test_modes: Option<usize>,
    pub failed_stage: Option<String>,
    pub artifacts: Vec<ArtifactEntry>,
}

pub fn parse_fit_model(name: &str) -> Result<SpamFitModel, CliError> {
    match name {
        "corruption" => Ok(SpamFitModel::Corruption),
        "povm" => Ok(SpamFitModel::Povm),
        other => Err(CliError::Usage(format!(
            "unknown SPAM fit model {other:?} (expected \"corruption\" or \"povm\")"
        ))),
    }
}

pub fn parse_metric(name: &str) -> Result<FitMetric, CliError> {
    match name {
        "kernel" => Ok(FitMetric::KernelL2),
        "wasserstein" => Ok(FitMetric::Wasserstein2),
        other => Err(CliError::Usage(format!(
            "unknown metric {other:?} (expected \"kernel\" or \"wasserstein\")"
        ))),
    }
}

/// A [`FitConfig`] from optional overrides on top of the defaults.
pub fn fit_config(
    iters: Option<usize>,
    learning_rate: Option<f64>,
    batch_modes: Option<usize>,
    init_scale: Option<f64>,
    seed: Seed,
) -> FitConfig {
    let mut cfg = FitConfig::default();
    if let Some(it) = iters {
        cfg.max_iters = it;
    }
    if let Some(lr) = learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(m) = batch_modes {
        if m > 0 {
            cfg.batch = Batch::Modes(m);
        }
    }
    if let Some(s) = init_scale {
        cfg.init_scale = s;
    }
    cfg.seed = seed;
    cfg
}

/// Strip nondeterministic timing from a report so written artifacts are
/// byte-stable across reruns.
pub fn deterministic_report(report: &FitReport) -> FitReport {
    let mut r = report.clone();
    r.wall_time = 0.0;
    r
}

/// Serialize an ensemble fit together with the derived quantities used for
/// plotting and classification.
pub fn du_fit_file(
    fit: spectromap::spectral::DUFit,
    spec: &Spectrum,
    metric: FitMetric,
) -> Result<DuFitFile, CliError> {
    let (r_minus, r_plus) = du_radii(fit.p_star, fit.r_star);
    let support = classify_support(&fit);
    let (empirical_min, empirical_max) = radii_empirical(spec).map_err(data)?;
    Ok(DuFitFile {
        fit,
        r_minus,
        r_plus,
        support,
        empirical_min,
        empirical_max,
        metric: match metric {
            FitMetric::KernelL2 => "kernel".into(),
            FitMetric::Wasserstein2 => "wasserstein".into(),
        },
    })
}

/// Collects artifacts as they are written and renders the manifest.
struct ArtifactLog<'a> {
    dir: &'a Path,
    entries: Vec<ArtifactEntry>,
}

impl<'a> ArtifactLog<'a> {
    fn write(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        write_text(&path, content)?;
        self.entries.push(ArtifactEntry {
            name: name.to_string(),
            path: name.to_string(),
            sha256: sha256_hex(content),
            bytes: content.len(),
        });
        println!("[{}] wrote {name}", self.entries.len());
        Ok(())
    }
}

/// Execute a full pipeline run from a config file. On stage failure the
/// partial manifest (with `failed_stage` set) is still written before the
/// error is returned.
pub fn run_pipeline(config_path: &Path, out_dir_override: Option<&Path>) -> Result<(), CliError> {
    let text = read_text(config_path)?;
    let cfg: PipelineConfig = toml::from_str(&text)
        .map_err(|e| data_at(&format!("config {}", config_path.display()), e))?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(CliError::Data(format!(
            "config schema version {} not supported (expected {SCHEMA_VERSION})",
            cfg.schema_version
        )));
    }

    let out_dir = out_dir_override
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| Path::new(&cfg.out_dir).to_path_buf());
    std::fs::create_dir_all(&out_dir).map_err(|e| data_at(&out_dir.display().to_string(), e))?;

    let mut log = ArtifactLog { dir: &out_dir, entries: Vec::new() };
    let mut train_modes = None;
    let mut test_modes = None;

    let result = run_stages(&cfg, &mut log, &mut train_modes, &mut test_modes);

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        gate_convention: GATE_CONVENTION,
        experiment: cfg.experiment.clone(),
        seed: cfg.seed,
        train_modes,
        test_modes,
        failed_stage: result.as_ref().err().map(|(stage, _)| stage.clone()),
        artifacts: log.entries,
    };
    let manifest_json =
        serde_json::to_string_pretty(&manifest).expect("manifest serialization is infallible");
    write_text(&out_dir.join("manifest.json"), &manifest_json)?;
    println!("[manifest] wrote manifest.json ({} artifacts)", manifest.artifacts.len());

    result.map_err(|(stage, e)| match e {
        CliError::Usage(m) => CliError::Usage(format!("stage {stage}: {m}")),
        CliError::Data(m) => CliError::Data(format!("stage {stage}: {m}")),
    })
}

/// The stage chain proper; returns the failing stage's name alongside the
/// error so the manifest can record it.
fn run_stages(
    cfg: &PipelineConfig,
    log: &mut ArtifactLog,
    train_modes: &mut Option<usize>,
    test_modes: &mut Option<usize>,
) -> Result<(), (String, CliError)> {
    let seed = Seed(cfg.seed);
    let stage = |name: &str| name.to_string();

    // --- gen-truth -------------------------------------------------------
    let truth_seed = seed.derive("truth");
    let truth_map: KrausMap = match cfg.truth {
        TruthConfig::Lindblad { d, rank, alpha, beta } => (|| {
            let params =
                LindbladParams::new(d, rank, alpha, beta, truth_seed).map_err(data)?;
            let l = random_lindbladian(&params);
            let (_, map) = lindblad_map(&l, beta).map_err(data)?;
            Ok(map)
        })()
        .map_err(|e| (stage("gen-truth"), e))?,
        TruthConfig::Du { d, p, rank } => (|| {
            let params = DUParams::new(d, p, rank).map_err(data)?;
            Ok(sample_diluted_unitary(&params, truth_seed))
        })()
        .map_err(|e| (stage("gen-truth"), e))?,
        TruthConfig::Circuit { n, depth } => (|| {
            if n == 0 || depth == 0 {
                return Err(CliError::Data("circuit needs n ≥ 1 and depth ≥ 1".into()));
            }
            let spec = sample_angles(n, depth, truth_seed);
            spectromap::channels::unitary_channel(&build_unitary(&spec)).map_err(data)
        })()
        .map_err(|e| (stage("gen-truth"), e))?,
    };
    let d = truth_map.dim();
    if d != 1usize << cfg.data.n {
        return Err((
            stage("gen-truth"),
            CliError::Data(format!(
                "truth dimension {d} does not match 2^{} for {}-qubit tomography",
                cfg.data.n, cfg.data.n
            )),
        ));
    }
    log.write("truth.json", &truth_map.to_json()).map_err(|e| (stage("gen-truth"), e))?;

    // --- SPAM truth ------------------------------------------------------
    let (spam_truth, _povm_truth) =
        synthetic_spam(d, cfg.spam.c1, cfg.spam.c2, seed.derive("spam-truth"));
    log.write("spam_truth.json", &spam_truth.to_json()).map_err(|e| (stage("gen-truth"), e))?;

    // --- gen-data: map stage and SPAM-only calibration stage -------------
    let gen = || -> Result<(TomographyDataset, TomographyDataset, TomographyDataset), CliError> {
        let n = cfg.data.n;
        let modes = match &cfg.data.modes {
            ModesSpec::Count(m) => {
                sample_modes(n, *m as usize, seed.derive("modes")).map_err(data)?
            }
            ModesSpec::Keyword(word) if word == "all" => all_modes(n),
            ModesSpec::Keyword(other) => {
                return Err(CliError::Data(format!(
                    "modes must be a count or \"all\", got {other:?}"
                )))
            }
        };
        let ds = synth_dataset(&truth_map, &spam_truth, &modes, cfg.data.shots, seed.derive("data"))?;
        if !(cfg.data.train_fraction > 0.0 && cfg.data.train_fraction < 1.0) {
            return Err(CliError::Data(format!(
                "train_fraction must lie strictly between 0 and 1, got {}",
                cfg.data.train_fraction
            )));
        }
        let (train, test) = split(&ds, cfg.data.train_fraction, seed.derive("split"));
        if train.is_empty() || test.is_empty() {
            return Err(CliError::Data(format!(
                "split of {} modes at fraction {} leaves an empty side",
                ds.len(),
                cfg.data.train_fraction
            )));
        }
        let cal_modes = calibration_modes(n);
        let cal = synth_dataset(
            &KrausMap::identity(d),
            &spam_truth,
            &cal_modes,
            cfg.data.shots,
            seed.derive("data-calibration"),
        )?;
        Ok((train, test, cal))
    };
    let (train, test, cal) = gen().map_err(|e| (stage("gen-data"), e))?;
    *train_modes = Some(train.len());
    *test_modes = Some(test.len());
    log.write("data_train.txt", &train.to_text()).map_err(|e| (stage("gen-data"), e))?;
    log.write("data_test.txt", &test.to_text()).map_err(|e| (stage("gen-data"), e))?;
    log.write("calibration.txt", &cal.to_text()).map_err(|e| (stage("gen-data"), e))?;

    // --- fit-spam ---------------------------------------------------------
    let spam_fit: SpamModel = (|| {
        let model = parse_fit_model(&cfg.spam.fit_model)?;
        let fc = fit_config(
            cfg.spam.iters,
            cfg.spam.learning_rate,
            None,
            cfg.spam.init_scale,
            seed.derive("fit-spam"),
        );
        let (fitted, report) = fit_spam(&cal, model, &fc).map_err(data)?;
        let model_view = fitted.model().map_err(data)?;
        log.write("spam_fit.json", &model_view.to_json())?;
        log.write(
            "spam_fit_report.json",
            &serde_json::to_string_pretty(&deterministic_report(&report)).expect("serializable"),
        )?;
        Ok(model_view)
    })()
    .map_err(|e| (stage("fit-spam"), e))?;

    // --- fit-map ----------------------------------------------------------
    let retrieved: KrausMap = (|| {
        if cfg.fit.rank < 1 || cfg.fit.rank > d * d {
            return Err(CliError::Data(format!(
                "fit rank {} outside 1..={}",
                cfg.fit.rank,
                d * d
            )));
        }
        let fc = fit_config(
            cfg.fit.iters,
            cfg.fit.learning_rate,
            cfg.fit.batch_modes,
            cfg.fit.init_scale,
            seed.derive("fit-map"),
        );
        let (map, report) = fit_map(&train, &spam_fit, cfg.fit.rank, &fc).map_err(data)?;
        log.write("map_fit.json", &map.to_json())?;
        log.write(
            "fit_report.json",
            &serde_json::to_string_pretty(&deterministic_report(&report)).expect("serializable"),
        )?;
        Ok(map)
    })()
    .map_err(|e| (stage("fit-map"), e))?;

    // --- held-out evaluation ----------------------------------------------
    (|| {
        let kl = kl_eval(&retrieved, &spam_fit, &test).map_err(data)?;
        log.write("kl.json", &serde_json::to_string_pretty(&kl).expect("serializable"))
    })()
    .map_err(|e| (stage("kl-eval"), e))?;

    // --- spectra ------------------------------------------------------------
    let (truth_spec, retrieved_spec) = (|| {
        let ts = spectrum(&truth_map).map_err(data)?;
        let rs = spectrum(&retrieved).map_err(data)?;
        log.write("truth_spectrum.csv", &ts.to_csv())?;
        log.write("retrieved_spectrum.csv", &rs.to_csv())?;
        Ok((ts, rs))
    })()
    .map_err(|e| (stage("spectrum"), e))?;

    // --- fit-du -------------------------------------------------------------
    (|| {
        let sp = &cfg.spectral;
        let grid_p = match (sp.p_min, sp.p_max, sp.p_step) {
            (None, None, None) => default_grid_p(),
            (mn, mx, st) => {
                float_grid(mn.unwrap_or(0.02), mx.unwrap_or(0.98), st.unwrap_or(0.02))?
            }
        };
        let grid_r = match (sp.r_min, sp.r_max, sp.r_step) {
            (None, None, None) => default_grid_r(d),
            (mn, mx, st) => int_grid(mn.unwrap_or(1), mx.unwrap_or(d * d), st.unwrap_or(1))?,
        };
        let m = sp.samples_per_point.unwrap_or(5);
        let metric = parse_metric(sp.metric.as_deref().unwrap_or("kernel"))?;
        let bank =
            du_spectrum_bank(d, &grid_p, &grid_r, m, seed.derive("fit-du")).map_err(data)?;
        for (label, spec) in [("retrieved", &retrieved_spec), ("truth", &truth_spec)] {
            let sigma = kde_sigma(spec).map_err(data)?;
            let fit = fit_du_with_bank(spec, &bank, sigma, metric).map_err(data)?;
            let file = du_fit_file(fit, spec, metric)?;
            log.write(
                &format!("fit_du_{label}.json"),
                &serde_json::to_string_pretty(&file).expect("serializable"),
            )?;
        }
        Ok(())
    })()
    .map_err(|e| (stage("fit-du"), e))?;

    Ok(())
}

/// Finite-shot simulation, or an exact-probability dataset when `shots = 0`.
fn synth_dataset(
    channel: &KrausMap,
    spam: &SpamModel,
    modes: &[spectromap::tomography::PauliMode],
    shots: u64,
    seed: Seed,
) -> Result<TomographyDataset, CliError> {
    if shots == 0 {
        exact_dataset(channel, spam.rho0(), Readout::Corruption(spam.corruption()), modes)
            .map_err(data)
    } else {
        simulate_with_model(channel, spam, modes, shots, seed).map_err(data)
    }
}
