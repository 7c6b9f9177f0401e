//! End-to-end experiments: corrupt the training labels, learn the graph, recover, train, predict
//! and score against clean held-out labels.
//!
//! [`compare_arms`] trains the same regressor on three versions of the training labels (clean,
//! recovered, noisy) with identical splits and noise draws. Repetition `r` uses
//! `split_seed + r` for the partition and `noise.seed + r` for the corruption.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{self, LdlDataset, NoiseSpec, SynthSpec};
use crate::graph::{laplacian, learn_affinity};
use crate::metrics::{self, Measure, MetricReport, RankTable};
use crate::msvr::{self, KernelSpec, MsvrConfig, MsvrModel};
use crate::recovery::{self, RecoveryConfig};
use crate::{Error, Matrix, Result};

/// Where the clean data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Files { features: PathBuf, labels: PathBuf },
    Synthetic {
        spec: SynthSpec,
        /// Start the training labels from the generator's sparse corruption instead of the
        /// clean matrix; `noise` is applied on top.
        #[serde(default)]
        planted_corruption: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default = "default_noise")]
    pub noise: NoiseSpec,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub recovery: RecoveryConfig,
    #[serde(default)]
    pub msvr: MsvrConfig,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
}

fn default_noise() -> NoiseSpec {
    NoiseSpec {
        mean: 0.0,
        scale: 0.2,
        seed: 0,
    }
}

fn default_gamma() -> f64 {
    1.0
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_repetitions() -> usize {
    10
}

impl ExperimentConfig {
    /// Defaults for everything except the data source.
    pub fn new(data: DataSource) -> Self {
        Self {
            data,
            noise: default_noise(),
            gamma: default_gamma(),
            recovery: RecoveryConfig::default(),
            msvr: MsvrConfig::default(),
            kernel: KernelSpec::default(),
            train_fraction: default_train_fraction(),
            split_seed: 0,
            repetitions: default_repetitions(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::InvalidSpec("repetitions must be at least 1".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidSpec(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidFraction(self.train_fraction));
        }
        self.noise.validate()?;
        self.recovery.validate()?;
        self.msvr.validate()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Sets one of the sweepable parameters.
    pub fn set_parameter(&mut self, name: &str, value: f64) -> Result<()> {
        match name {
            "alpha" => self.recovery.alpha = value,
            "beta" => self.recovery.beta = value,
            "gamma" => self.gamma = value,
            "kappa" => self.msvr.kappa = value,
            "nu" => self.msvr.nu = value,
            other => return Err(Error::UnknownParameter(other.to_owned())),
        }
        Ok(())
    }

    pub fn load_data(&self) -> Result<ExperimentData> {
        match &self.data {
            DataSource::Files { features, labels } => Ok(ExperimentData {
                clean: dataset::load_dataset(features, labels)?,
                planted: None,
            }),
            DataSource::Synthetic {
                spec,
                planted_corruption,
            } => {
                let synth = dataset::synthesize(spec)?;
                Ok(ExperimentData {
                    clean: synth.clean,
                    planted: planted_corruption.then_some(synth.corrupted),
                })
            }
        }
    }
}

/// Clean data plus, optionally, a pre-corrupted copy of its labels.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub clean: LdlDataset,
    pub planted: Option<LdlDataset>,
}

impl ExperimentData {
    pub fn new(clean: LdlDataset) -> Self {
        Self { clean, planted: None }
    }
}

/// The three training-label variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    GroundTruthTrained,
    RecoveredTrained,
    NoisyTrained,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::GroundTruthTrained, Arm::RecoveredTrained, Arm::NoisyTrained];

    pub fn name(self) -> &'static str {
        match self {
            Arm::GroundTruthTrained => "ground_truth_trained",
            Arm::RecoveredTrained => "recovered_trained",
            Arm::NoisyTrained => "noisy_trained",
        }
    }
}

/// Training inputs of one repetition. Test labels are kept apart in [`HeldOut`].
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub features: Matrix,
    pub clean_labels: Matrix,
    pub noisy_labels: Matrix,
}

#[derive(Debug, Clone)]
pub struct HeldOut {
    pub features: Matrix,
    pub labels: Matrix,
}

/// Splits, then corrupts the training labels of repetition `rep`.
pub fn prepare_repetition(data: &ExperimentData, config: &ExperimentConfig, rep: usize) -> Result<(TrainingSet, HeldOut)> {
    let seed_offset = rep as u64;
    let (train_rows, test_rows) = dataset::split_indices(
        data.clean.n(),
        config.train_fraction,
        config.split_seed.wrapping_add(seed_offset),
    )?;
    let train = data.clean.select_rows(&train_rows);
    let test = data.clean.select_rows(&test_rows);
    let base = match &data.planted {
        Some(planted) => planted.select_rows(&train_rows),
        None => train.clone(),
    };
    let noise = NoiseSpec {
        seed: config.noise.seed.wrapping_add(seed_offset),
        ..config.noise
    };
    let noisy = dataset::corrupt(&base, &noise)?;
    Ok((
        TrainingSet {
            features: train.features().clone(),
            clean_labels: train.labels().clone(),
            noisy_labels: noisy.labels().clone(),
        },
        HeldOut {
            features: test.features().clone(),
            labels: test.labels().clone(),
        },
    ))
}

/// A trained arm and anything worth reporting about how it was trained.
#[derive(Debug, Clone)]
pub struct TrainedArm {
    pub arm: Arm,
    pub model: MsvrModel,
    pub warnings: Vec<String>,
    /// Digest of the label matrix the arm was trained on before any recovery.
    pub input_digest: String,
}

/// Recovers the training labels and renormalizes the recovered rows onto the simplex.
pub fn recover_labels(features: &Matrix, noisy: &Matrix, config: &ExperimentConfig) -> Result<(Matrix, Vec<String>)> {
    let graph = learn_affinity(features, config.gamma)?;
    let lap = laplacian(&graph);
    let result = recovery::recover(noisy, &lap, &config.recovery)?;
    let mut warnings = Vec::new();
    if !result.converged {
        warnings.push(format!(
            "recovery did not converge in {} iterations (residual {:.3e})",
            result.iterations,
            result.final_residual()
        ));
    }
    if result.d_tilde.norm() <= 1e-3 * noisy.norm() {
        warnings.push(format!(
            "recovery moved almost all label mass into the error term; alpha = {} is likely too small for {} rows",
            config.recovery.alpha,
            noisy.nrows()
        ));
    }
    Ok((result.recovered_distributions()?, warnings))
}

/// Trains one arm using only the training set.
pub fn train_arm(arm: Arm, train: &TrainingSet, config: &ExperimentConfig) -> Result<TrainedArm> {
    let source = match arm {
        Arm::GroundTruthTrained => &train.clean_labels,
        Arm::RecoveredTrained | Arm::NoisyTrained => &train.noisy_labels,
    };
    let input_digest = digest(source);
    let mut warnings = Vec::new();
    let targets = if arm == Arm::RecoveredTrained {
        let (labels, w) = recover_labels(&train.features, source, config)?;
        warnings.extend(w);
        labels
    } else {
        source.clone()
    };
    let (model, diag) = msvr::fit(&train.features, &targets, &config.msvr, &config.kernel)?;
    if !diag.converged {
        warnings.push(format!(
            "{}: IRWLS did not converge in {} iterations",
            arm.name(),
            diag.iterations
        ));
    }
    Ok(TrainedArm {
        arm,
        model,
        warnings,
        input_digest,
    })
}

/// Scores a trained arm on the held-out set.
pub fn evaluate_arm(trained: &TrainedArm, held_out: &HeldOut) -> Result<MetricReport> {
    let pred = trained.model.predict(&held_out.features)?;
    let mut report = metrics::report(&held_out.labels, &pred)?;
    report.warnings = trained.warnings.clone();
    Ok(report)
}

/// SHA-256 of a matrix's shape and bit patterns.
pub fn digest(m: &Matrix) -> String {
    let mut h = Sha256::new();
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for v in m.transpose().iter() {
        h.update(v.to_bits().to_le_bytes());
    }
    let bytes = h.finalize();
    bytes.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Runs the recovered-label pipeline for every repetition.
///
/// With one repetition the report is that run's per-instance summary; otherwise it holds the
/// mean of the per-run means and their standard deviation across runs.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<MetricReport> {
    let data = config.load_data()?;
    run_pipeline_on(&data, config)
}

pub fn run_pipeline_on(data: &ExperimentData, config: &ExperimentConfig) -> Result<MetricReport> {
    config.validate()?;
    let reports: Vec<MetricReport> = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| {
            let (train, held_out) = prepare_repetition(data, config, rep)?;
            let trained = train_arm(Arm::RecoveredTrained, &train, config)?;
            evaluate_arm(&trained, &held_out)
        })
        .collect::<Result<_>>()?;
    for w in reports.iter().flat_map(|r| &r.warnings) {
        log::warn!("{w}");
    }
    Ok(MetricReport::aggregate(&reports))
}

/// Input and evaluation digests of one repetition, one entry per arm in [`Arm::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionDigests {
    pub train_inputs: [String; 3],
    pub test_labels: [String; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanSummary {
    pub measure: Measure,
    pub chi2: f64,
    pub f_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub ground_truth_trained: MetricReport,
    pub recovered_trained: MetricReport,
    pub noisy_trained: MetricReport,
    /// `repetitions × 7 × 3`: measure means per repetition, arms in [`Arm::ALL`] order.
    pub per_repetition: Vec<[[f64; 3]; 7]>,
    pub digests: Vec<RepetitionDigests>,
    /// Friedman statistics of the three arms across repetitions, where defined.
    #[serde(default)]
    pub friedman: Vec<FriedmanSummary>,
}

impl ComparisonReport {
    pub fn arm(&self, arm: Arm) -> &MetricReport {
        match arm {
            Arm::GroundTruthTrained => &self.ground_truth_trained,
            Arm::RecoveredTrained => &self.recovered_trained,
            Arm::NoisyTrained => &self.noisy_trained,
        }
    }

    /// Per-measure rank tables of the arms, one dataset row per repetition.
    pub fn rank_tables(&self) -> Result<Vec<(Measure, RankTable)>> {
        let algorithms: Vec<String> = Arm::ALL.iter().map(|a| a.name().to_owned()).collect();
        let datasets: Vec<String> = (0..self.per_repetition.len()).map(|r| format!("rep{r}")).collect();
        Measure::ALL
            .iter()
            .map(|&m| {
                let scores: Vec<Vec<f64>> = self
                    .per_repetition
                    .iter()
                    .map(|rep| rep[m.index()].to_vec())
                    .collect();
                let table = metrics::average_ranks(&scores, m.higher_is_better(), algorithms.clone(), datasets.clone())?;
                Ok((m, table))
            })
            .collect()
    }
}

/// Trains and scores all three arms on identical splits and noise draws.
pub fn compare_arms(config: &ExperimentConfig) -> Result<ComparisonReport> {
    let data = config.load_data()?;
    compare_arms_on(&data, config)
}

pub fn compare_arms_on(data: &ExperimentData, config: &ExperimentConfig) -> Result<ComparisonReport> {
    config.validate()?;
    let runs: Vec<([MetricReport; 3], RepetitionDigests)> = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| {
            let (train, held_out) = prepare_repetition(data, config, rep)?;
            let mut reports = Vec::with_capacity(3);
            let mut inputs = Vec::with_capacity(3);
            let mut tests = Vec::with_capacity(3);
            for arm in Arm::ALL {
                let trained = train_arm(arm, &train, config)?;
                reports.push(evaluate_arm(&trained, &held_out)?);
                inputs.push(trained.input_digest);
                tests.push(digest(&held_out.labels));
            }
            let reports: [MetricReport; 3] = reports.try_into().expect("three arms");
            let digests = RepetitionDigests {
                train_inputs: inputs.try_into().expect("three arms"),
                test_labels: tests.try_into().expect("three arms"),
            };
            Ok((reports, digests))
        })
        .collect::<Result<_>>()?;

    let per_repetition = runs
        .iter()
        .map(|(reports, _)| {
            let mut cube = [[0.0; 3]; 7];
            for (a, r) in reports.iter().enumerate() {
                for (k, v) in r.means().into_iter().enumerate() {
                    cube[k][a] = v;
                }
            }
            cube
        })
        .collect();
    let per_arm = |a: usize| {
        let reports: Vec<MetricReport> = runs.iter().map(|(r, _)| r[a].clone()).collect();
        MetricReport::aggregate(&reports)
    };
    let mut report = ComparisonReport {
        ground_truth_trained: per_arm(0),
        recovered_trained: per_arm(1),
        noisy_trained: per_arm(2),
        per_repetition,
        digests: runs.into_iter().map(|(_, d)| d).collect(),
        friedman: Vec::new(),
    };
    if config.repetitions >= 2 {
        for (measure, table) in report.rank_tables()? {
            if let Ok((chi2, f_f)) = metrics::friedman(&table) {
                report.friedman.push(FriedmanSummary { measure, chi2, f_f });
            }
        }
    }
    Ok(report)
}

/// Parameters accepted by [`sweep`].
pub const SWEEP_PARAMETERS: [&str; 5] = ["alpha", "beta", "gamma", "kappa", "nu"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub report: MetricReport,
}

/// One pipeline run per value of `parameter`, everything else fixed.
pub fn sweep(config: &ExperimentConfig, parameter: &str, values: &[f64]) -> Result<Vec<SweepPoint>> {
    let data = config.load_data()?;
    sweep_on(&data, config, parameter, values)
}

pub fn sweep_on(data: &ExperimentData, config: &ExperimentConfig, parameter: &str, values: &[f64]) -> Result<Vec<SweepPoint>> {
    if !SWEEP_PARAMETERS.contains(&parameter) {
        return Err(Error::UnknownParameter(parameter.to_owned()));
    }
    values
        .par_iter()
        .map(|&value| {
            let mut cfg = config.clone();
            cfg.set_parameter(parameter, value)?;
            Ok(SweepPoint {
                value,
                report: run_pipeline_on(data, &cfg)?,
            })
        })
        .collect()
}

/// Plot-ready sweep table: the parameter value, then mean and std of every measure.
pub fn sweep_csv(parameter: &str, points: &[SweepPoint]) -> String {
    let mut out = String::from(parameter);
    for m in Measure::ALL {
        let _ = write!(out, ",{0},{0}_std", m.name());
    }
    out.push('\n');
    for p in points {
        let _ = write!(out, "{}", p.value);
        for m in Measure::ALL {
            let _ = write!(out, ",{},{}", p.report.get(m), p.report.stds[m.index()]);
        }
        out.push('\n');
    }
    out
}

/// Rank tables of every measure stacked into one CSV with a leading `measure` column.
pub fn ranks_csv(tables: &[(Measure, RankTable)]) -> String {
    let mut out = String::new();
    for (i, (measure, table)) in tables.iter().enumerate() {
        for (line_no, line) in table.to_csv().lines().enumerate() {
            if line_no == 0 {
                if i == 0 {
                    let _ = writeln!(out, "measure,{line}");
                }
                continue;
            }
            let _ = writeln!(out, "{measure},{line}");
        }
    }
    out
}

/// Writes `config-echo.json` into `dir`, creating it if needed.
pub fn write_config_echo(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config-echo.json"), serde_json::to_string_pretty(config)?)?;
    Ok(())
}

/// Writes `comparison.json` and `ranks.csv`.
pub fn write_comparison(dir: &Path, report: &ComparisonReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("comparison.json"), serde_json::to_string_pretty(report)?)?;
    std::fs::write(dir.join("ranks.csv"), ranks_csv(&report.rank_tables()?))?;
    Ok(())
}

pub fn write_sweep(dir: &Path, parameter: &str, points: &[SweepPoint]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("sweep.csv"), sweep_csv(parameter, points))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(DataSource::Synthetic {
            spec: SynthSpec {
                n: 40,
                m: 5,
                d: 4,
                rank: 2,
                error_fraction: 0.05,
                seed: 3,
            },
            planted_corruption: false,
        });
        cfg.repetitions = 2;
        cfg.noise.scale = 0.05;
        cfg
    }

    #[test]
    fn unknown_sweep_parameter() {
        let cfg = small_config();
        assert!(matches!(sweep(&cfg, "delta", &[1.0]), Err(Error::UnknownParameter(_))));
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let cfg = small_config();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);

        let minimal: ExperimentConfig = serde_json::from_str(
            r#"{"data":{"kind":"files","features":"x.csv","labels":"y.csv"}}"#,
        )
        .unwrap();
        assert_eq!(minimal.recovery, RecoveryConfig::default());
        assert_eq!(minimal.repetitions, 10);
        assert_eq!(minimal.train_fraction, 0.8);
    }

    #[test]
    fn zero_repetitions_rejected() {
        let mut cfg = small_config();
        cfg.repetitions = 0;
        assert!(run_pipeline(&cfg).is_err());
    }

    #[test]
    fn repetitions_draw_distinct_noise() {
        let cfg = small_config();
        let data = cfg.load_data().unwrap();
        let (a, _) = prepare_repetition(&data, &cfg, 0).unwrap();
        let (b, _) = prepare_repetition(&data, &cfg, 1).unwrap();
        let (a2, _) = prepare_repetition(&data, &cfg, 0).unwrap();
        assert_ne!(digest(&a.noisy_labels), digest(&b.noisy_labels));
        assert_eq!(digest(&a.noisy_labels), digest(&a2.noisy_labels));
    }

    #[test]
    fn ranks_csv_layout() {
        let cfg = small_config();
        let report = compare_arms(&cfg).unwrap();
        let csv = ranks_csv(&report.rank_tables().unwrap());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "measure,dataset,ground_truth_trained,recovered_trained,noisy_trained");
        assert_eq!(lines.len(), 1 + 7 * 2);
        assert!(lines[1].starts_with("chebyshev,rep0,"));
    }
}
