use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ldlr_core::dataset::{self, read_matrix_csv, write_matrix_csv, SynthSpec};
use ldlr_core::graph::{laplacian, learn_affinity};
use ldlr_core::harness::{self, DataSource, ExperimentConfig};
use ldlr_core::msvr::{self, Bandwidth, KernelKind};
use ldlr_core::recovery;
use ldlr_core::{metrics, LdlDataset, Measure, MetricReport, MsvrModel};

use crate::{Command, KernelArg, Overrides};

/// What a successful command reports back to `main`.
pub struct Status {
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl Status {
    fn done() -> Self {
        Self {
            converged: true,
            warnings: Vec::new(),
        }
    }

    fn from_warnings(warnings: Vec<String>) -> Self {
        let stalled: Vec<String> = warnings.into_iter().filter(|w| w.contains("did not converge")).collect();
        Self {
            converged: stalled.is_empty(),
            warnings: stalled,
        }
    }
}

pub fn run(command: Command) -> Result<Status> {
    match command {
        Command::Corrupt(o) => corrupt(&o),
        Command::Graph(o) => graph(&o),
        Command::Recover(o) => recover(&o),
        Command::Train(o) => train(&o),
        Command::Predict { model, common } => predict(&model, &common),
        Command::Eval { truth, pred, out } => eval(&truth, &pred, out.as_deref()),
        Command::Compare(o) => compare(&o),
        Command::Sweep { param, values, common } => sweep(&param, &values, &common),
        Command::Synth {
            n,
            m,
            d,
            rank,
            error_fraction,
            seed,
            out,
        } => synth(
            &SynthSpec {
                n,
                m,
                d,
                rank,
                error_fraction,
                seed,
            },
            &out,
        ),
    }
}

/// The config file (or defaults) with every given flag applied on top.
pub fn resolve_config(o: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match &o.config {
        Some(path) => ExperimentConfig::from_json_file(path).with_context(|| format!("--config {}", path.display()))?,
        None => ExperimentConfig::new(DataSource::Files {
            features: PathBuf::new(),
            labels: PathBuf::new(),
        }),
    };
    if o.features.is_some() || o.labels.is_some() {
        let (old_features, old_labels) = match &cfg.data {
            DataSource::Files { features, labels } => (features.clone(), labels.clone()),
            DataSource::Synthetic { .. } => (PathBuf::new(), PathBuf::new()),
        };
        cfg.data = DataSource::Files {
            features: o.features.clone().unwrap_or(old_features),
            labels: o.labels.clone().unwrap_or(old_labels),
        };
    }
    let numeric = [
        ("alpha", o.alpha),
        ("beta", o.beta),
        ("gamma", o.gamma),
        ("kappa", o.kappa),
        ("nu", o.nu),
    ];
    for (name, value) in numeric {
        if let Some(v) = value {
            cfg.set_parameter(name, v)?;
        }
    }
    if let Some(e) = o.epsilon {
        cfg.msvr.epsilon = e;
    }
    if let Some(kind) = o.kernel {
        cfg.kernel.kind = match kind {
            KernelArg::Linear => KernelKind::Linear,
            KernelArg::Rbf => KernelKind::Rbf,
        };
    }
    if let Some(b) = &o.bandwidth {
        cfg.kernel.bandwidth = b.parse::<Bandwidth>().context("--bandwidth")?;
    }
    if let Some(mean) = o.noise_mean {
        cfg.noise.mean = mean;
    }
    if let Some(scale) = o.noise_scale {
        cfg.noise.scale = scale;
    }
    if let Some(seed) = o.seed {
        cfg.noise.seed = seed;
        cfg.split_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn input_paths(cfg: &ExperimentConfig) -> Result<(&Path, &Path)> {
    match &cfg.data {
        DataSource::Files { features, labels } => {
            if features.as_os_str().is_empty() {
                bail!("--features is required");
            }
            if labels.as_os_str().is_empty() {
                bail!("--labels is required");
            }
            Ok((features, labels))
        }
        DataSource::Synthetic { .. } => bail!("this command needs --features and --labels files"),
    }
}

fn features_path(cfg: &ExperimentConfig) -> Result<&Path> {
    match &cfg.data {
        DataSource::Files { features, .. } if !features.as_os_str().is_empty() => Ok(features),
        _ => bail!("--features is required"),
    }
}

fn out_dir(o: &Overrides) -> Result<&Path> {
    let dir = o.out.as_deref().context("--out is required")?;
    fs::create_dir_all(dir).with_context(|| format!("--out {}", dir.display()))?;
    Ok(dir)
}

fn load(cfg: &ExperimentConfig) -> Result<LdlDataset> {
    let (features, labels) = input_paths(cfg)?;
    Ok(dataset::load_dataset(features, labels)?)
}

fn print_report(report: &MetricReport) {
    for line in report.summary_lines() {
        println!("{line}");
    }
}

fn corrupt(o: &Overrides) -> Result<Status> {
    let cfg = resolve_config(o)?;
    let data = load(&cfg)?;
    let dir = out_dir(o)?;
    let noisy = dataset::corrupt(&data, &cfg.noise)?;
    write_matrix_csv(dir.join("corrupted.csv"), noisy.labels(), data.names())?;
    println!("corrupted {} rows × {} labels", noisy.n(), noisy.m());
    Ok(Status::done())
}

fn graph(o: &Overrides) -> Result<Status> {
    let cfg = resolve_config(o)?;
    let features = read_matrix_csv(features_path(&cfg)?)?.data;
    let dir = out_dir(o)?;
    let g = learn_affinity(&features, cfg.gamma)?;
    let lap = laplacian(&g);
    write_matrix_csv(dir.join("affinity.csv"), &g.affinity, None)?;
    write_matrix_csv(dir.join("laplacian.csv"), &lap.laplacian, None)?;
    println!("graph over {} instances, gamma {}", features.nrows(), cfg.gamma);
    Ok(Status::done())
}

fn recover(o: &Overrides) -> Result<Status> {
    let cfg = resolve_config(o)?;
    let data = load(&cfg)?;
    let dir = out_dir(o)?;
    let lap = laplacian(&learn_affinity(data.features(), cfg.gamma)?);
    let result = recovery::recover(data.labels(), &lap, &cfg.recovery)?;
    write_matrix_csv(dir.join("d_tilde.csv"), &result.d_tilde, data.names())?;
    write_matrix_csv(dir.join("error.csv"), &result.error, data.names())?;
    fs::write(dir.join("diagnostics.json"), serde_json::to_string_pretty(&result.diagnostics())?)?;
    println!(
        "recovery {} after {} iterations, residual {:.3e}",
        if result.converged { "converged" } else { "stopped" },
        result.iterations,
        result.final_residual()
    );
    Ok(if result.converged {
        Status::done()
    } else {
        Status {
            converged: false,
            warnings: vec![format!("ADMM reached max_iters = {}", cfg.recovery.max_iters)],
        }
    })
}

fn train(o: &Overrides) -> Result<Status> {
    let cfg = resolve_config(o)?;
    let data = load(&cfg)?;
    let dir = out_dir(o)?;
    let (model, diag) = msvr::fit_dataset(&data, &cfg.msvr, &cfg.kernel)?;
    fs::write(dir.join("model.json"), model.to_json()?)?;
    println!(
        "trained on {} instances in {} iterations, objective {:.6}",
        data.n(),
        diag.iterations,
        model.training_objective
    );
    Ok(if diag.converged {
        Status::done()
    } else {
        Status {
            converged: false,
            warnings: vec![format!("IRWLS reached max_iters = {}", cfg.msvr.max_iters)],
        }
    })
}

fn predict(model_path: &Path, o: &Overrides) -> Result<Status> {
    let cfg = resolve_config(o)?;
    let text = fs::read_to_string(model_path).with_context(|| format!("--model {}", model_path.display()))?;
    let model = MsvrModel::from_json(&text).context("--model")?;
    let features = read_matrix_csv(features_path(&cfg)?)?.data;
    let dir = out_dir(o)?;
    let pred = model.predict(&features)?;
    write_matrix_csv(dir.join("predictions.csv"), &pred, None)?;
    println!("predicted {} rows", pred.nrows());
    Ok(Status::done())
}

fn eval(truth: &Path, pred: &Path, out: Option<&Path>) -> Result<Status> {
    let t = read_matrix_csv(truth).context("--truth")?.data;
    let p = read_matrix_csv(pred).context("--pred")?.data;
    let report = metrics::report(&t, &p)?;
    print_report(&report);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(Status::done())
}

fn compare(o: &Overrides) -> Result<Status> {
    let cfg = resolve_config(o)?;
    let dir = out_dir(o)?;
    let report = harness::compare_arms(&cfg)?;
    harness::write_config_echo(dir, &cfg)?;
    harness::write_comparison(dir, &report)?;
    for m in Measure::ALL {
        println!(
            "{} ground_truth_trained {:.6} recovered_trained {:.6} noisy_trained {:.6}",
            m.name(),
            report.ground_truth_trained.get(m),
            report.recovered_trained.get(m),
            report.noisy_trained.get(m)
        );
    }
    let warnings = [&report.ground_truth_trained, &report.recovered_trained, &report.noisy_trained]
        .into_iter()
        .flat_map(|r| r.warnings.iter().cloned())
        .collect();
    Ok(Status::from_warnings(warnings))
}

fn sweep(param: &str, values: &[f64], o: &Overrides) -> Result<Status> {
    let cfg = resolve_config(o)?;
    let dir = out_dir(o)?;
    let points = harness::sweep(&cfg, param, values).with_context(|| format!("--param {param}"))?;
    harness::write_config_echo(dir, &cfg)?;
    harness::write_sweep(dir, param, &points)?;
    for p in &points {
        let cheb = p.report.get(Measure::Chebyshev);
        let cos = p.report.get(Measure::Cosine);
        println!("{param} {} chebyshev {cheb:.6} cosine {cos:.6}", p.value);
    }
    Ok(Status::from_warnings(points.into_iter().flat_map(|p| p.report.warnings).collect()))
}

fn synth(spec: &SynthSpec, out: &Path) -> Result<Status> {
    let s = dataset::synthesize(spec)?;
    fs::create_dir_all(out)?;
    write_matrix_csv(out.join("features.csv"), s.clean.features(), None)?;
    write_matrix_csv(out.join("labels.csv"), s.clean.labels(), None)?;
    write_matrix_csv(out.join("corrupted.csv"), s.corrupted.labels(), None)?;
    write_matrix_csv(out.join("planted_error.csv"), &s.planted_error, None)?;
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&s.manifest())?)?;
    println!("synthesized {} × {} labels, {} planted entries", spec.n, spec.m, s.planted_nonzeros());
    Ok(Status::done())
}
