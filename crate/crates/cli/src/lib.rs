//! Batch harness behind the `survstack` binary.
//!
//! A run is an [`ExperimentSpec`]: a command plus everything needed to
//! reproduce it. Each run writes its outputs into `out_dir` together with
//! `manifest.json`, which [`replay`] re-executes.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use survstack::coxph::{cox_fit, cox_fit_l1, default_lambda_grid};
use survstack::experiments::{
    run_auc_experiment, run_compare_coefficients, run_compare_paths, run_curve_experiment, run_verify_equivalence,
    ExperimentConfig, Method, ORACLE_ROW,
};
use survstack::simgen::{simulate, SimulatedData};
use survstack::stacker::{stack, stack_centered, stack_time_varying, StackForm};
use survstack::stacklogit::{logistic_fit, logistic_fit_l1, verify_equivalence};
use survstack::survdata::{load_csv, validate, write_longitudinal_csv, ColumnMapping, SurvivalDataset};
use survstack::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Fit,
    Stack,
    CompareCoefficients,
    ComparePaths,
    Curve,
    Auc,
    VerifyEquivalence,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Stack => "stack",
            Command::CompareCoefficients => "compare-coefficients",
            Command::ComparePaths => "compare-paths",
            Command::Curve => "curve",
            Command::Auc => "auc",
            Command::VerifyEquivalence => "verify-equivalence",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub command: Command,
    /// Survival CSV for `fit`, `stack` and `verify-equivalence`; a
    /// simulated dataset is used when absent.
    pub input: Option<PathBuf>,
    pub columns: ColumnMapping,
    pub out_dir: PathBuf,
    pub experiment: ExperimentConfig,
    /// Stack layout for `stack`.
    pub form: StackForm,
    /// Also fit the L1 path in `fit`.
    pub l1_path: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub seed: u64,
    pub spec: ExperimentSpec,
    pub outputs: Vec<OutputFile>,
}

/// Writes `contents` to `dir/name` through a temporary file and a rename.
fn write_atomic(dir: &Path, name: &str, write: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        write(&mut w)?;
        std::io::Write::flush(&mut w)?;
    }
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    write_atomic(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        std::io::Write::write_all(w, b"\n")?;
        Ok(())
    })
}

struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        write_json(self.dir, name, value)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn csv(&mut self, name: &str, write: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
        write_atomic(self.dir, name, write)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn load_or_simulate(spec: &ExperimentSpec) -> Result<SimulatedData> {
    match &spec.input {
        Some(path) => Ok(SimulatedData::Static(load_csv(path, &spec.columns)?)),
        None => simulate(&spec.experiment.sim),
    }
}

fn require_static(data: SimulatedData, command: Command) -> Result<SurvivalDataset> {
    match data {
        SimulatedData::Static(ds) => Ok(ds),
        SimulatedData::TimeVarying(_) => Err(Error::InvalidArgument(format!(
            "{} needs a static dataset; time_varying data is supported by simulate, stack and compare-coefficients",
            command.name()
        ))),
    }
}

/// Runs a spec, writing outputs and the manifest; returns the manifest.
pub fn run(spec: &ExperimentSpec) -> Result<Manifest> {
    fs::create_dir_all(&spec.out_dir)?;
    let mut out = Outputs {
        dir: &spec.out_dir,
        files: Vec::new(),
    };
    let cfg = &spec.experiment;
    match spec.command {
        Command::Simulate => {
            match simulate(&cfg.sim)? {
                SimulatedData::Static(ds) => out.csv("data.csv", |w| survstack::survdata::write_csv(&ds, w))?,
                SimulatedData::TimeVarying(long) => out.csv("data.csv", |w| write_longitudinal_csv(&long, w))?,
            }
            out.json("sim_config.json", &cfg.sim)?;
        }
        Command::Fit => {
            let ds = require_static(load_or_simulate(spec)?, spec.command)?;
            let warnings: Vec<String> = validate(&ds).iter().map(|w| w.to_string()).collect();
            out.json("warnings.json", &warnings)?;
            for &method in &cfg.methods {
                match method {
                    Method::Cox => {
                        out.json("cox.json", &cox_fit(&ds, &cfg.cox)?)?;
                        if spec.l1_path {
                            out.json("cox_l1.json", &cox_fit_l1(&ds, &default_lambda_grid(&ds)?)?)?;
                        }
                    }
                    Method::StackLogistic => {
                        let stacked = stack(&ds)?;
                        out.json("stack-logistic.json", &logistic_fit(&stacked, &cfg.logistic)?)?;
                        if spec.l1_path {
                            let path = logistic_fit_l1(&stacked, &default_lambda_grid(&ds)?)?;
                            out.json("stack-logistic_l1.json", &path)?;
                        }
                    }
                    other => {
                        return Err(Error::InvalidArgument(format!(
                            "fit reports coefficients for cox and stack-logistic only; use `curve` for {}",
                            other.name()
                        )))
                    }
                }
            }
        }
        Command::Stack => {
            let stacked = match load_or_simulate(spec)? {
                SimulatedData::Static(ds) => match spec.form {
                    StackForm::Indicator => stack(&ds)?,
                    StackForm::Centered => stack_centered(&ds)?,
                },
                SimulatedData::TimeVarying(long) => stack_time_varying(&long, spec.form)?,
            };
            out.csv("stacked.csv", |w| stacked.write_csv(w))?;
        }
        Command::CompareCoefficients => {
            let report = run_compare_coefficients(cfg)?;
            out.csv("coefficients.csv", |w| report.write_csv(w))?;
            out.json("summary.json", &report.summary)?;
        }
        Command::ComparePaths => {
            let report = run_compare_paths(cfg)?;
            out.csv("paths.csv", |w| report.write_csv(w))?;
            let failed: Vec<usize> = report
                .replicates
                .iter()
                .filter(|r| r.status != survstack::experiments::ReplicateStatus::Ok)
                .map(|r| r.replicate)
                .collect();
            out.json(
                "summary.json",
                &serde_json::json!({
                    "sign_agreement": report.sign_agreement,
                    "failed_replicates": failed,
                }),
            )?;
        }
        Command::Curve => {
            let report = run_curve_experiment(cfg)?;
            out.csv("curves.csv", |w| report.write_curves_csv(w))?;
            out.csv("ise.csv", |w| report.write_ise_csv(w))?;
            let km: Vec<f64> = report.replicates.iter().map(|r| r.km_max_abs_diff).collect();
            out.json(
                "summary.json",
                &serde_json::json!({
                    "methods": report.summary,
                    "null_vs_kaplan_meier_max_abs_diff": km,
                }),
            )?;
        }
        Command::Auc => {
            let report = run_auc_experiment(cfg)?;
            out.csv("auc.csv", |w| report.write_csv(w))?;
            let mut rows: Vec<String> = cfg.methods.iter().map(|m| m.name().to_string()).collect();
            rows.push(ORACLE_ROW.to_string());
            let table: Vec<serde_json::Value> = rows
                .iter()
                .map(|m| {
                    serde_json::json!({
                        "method": m,
                        "c_linear_predictor": finite_or_null(report.mean(m, |r| r.linear_predictor)),
                        "c_midpoint": finite_or_null(report.mean(m, |r| r.midpoint)),
                        "c_area": finite_or_null(report.mean(m, |r| r.area)),
                    })
                })
                .collect();
            let undefined = report
                .replicates
                .iter()
                .flat_map(|r| &r.rows)
                .filter(|r| r.midpoint.is_none())
                .count();
            out.json(
                "summary.json",
                &serde_json::json!({
                    "metric": "harrell_c (reported as AUC)",
                    "mean_over_replicates": table,
                    "undefined_entries": undefined,
                }),
            )?;
        }
        Command::VerifyEquivalence => match &spec.input {
            Some(_) => {
                let ds = require_static(load_or_simulate(spec)?, spec.command)?;
                let beta = cox_fit(&ds, &cfg.cox)?.coefficients;
                let report = verify_equivalence(&ds, &beta)?;
                out.csv("equivalence.csv", |w| report.write_csv(w))?;
            }
            None => {
                let reps = run_verify_equivalence(cfg)?;
                for r in &reps {
                    out.csv(&format!("equivalence_rep{}.csv", r.replicate), |w| {
                        r.report.write_csv(w)
                    })?;
                }
                let summary: Vec<serde_json::Value> = reps
                    .iter()
                    .map(|r| {
                        serde_json::json!({
                            "replicate": r.replicate,
                            "seed": r.seed,
                            "largest_set_intercept_gap": r.largest_set_gap,
                            "smallest_decile_mean_gap": r.small_sets_mean_gap,
                            "largest_decile_mean_gap": r.large_sets_mean_gap,
                        })
                    })
                    .collect();
                out.json("summary.json", &summary)?;
            }
        },
    }

    let outputs = out
        .files
        .iter()
        .map(|f| {
            Ok(OutputFile {
                file: f.clone(),
                bytes: fs::metadata(spec.out_dir.join(f))?.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        core_version: survstack::VERSION.to_string(),
        seed: cfg.seed,
        spec: spec.clone(),
        outputs,
    };
    write_json(&spec.out_dir, MANIFEST_FILE, &manifest)?;
    Ok(manifest)
}

fn finite_or_null(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Reruns the configuration stored in a manifest, optionally into another directory.
pub fn replay(manifest_path: &Path, out_dir: Option<PathBuf>) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_reader(fs::File::open(manifest_path)?)?;
    let mut spec = manifest.spec;
    if let Some(dir) = out_dir {
        spec.out_dir = dir;
    }
    run(&spec)
}

/// `{"error": {"kind": ..., "message": ...}}`
pub fn error_json(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}
