//! Ablation harness: trains every requested temporal family under identical
//! settings and reports one metric row per family.
//!
//! The dataset is synthesized once and the probe classifier is trained once
//! and frozen, so every row is scored by the same fixed metric. Each family
//! trains in its own subdirectory of the report directory and its best
//! checkpoint (highest surrogate score seen during training) is re-evaluated
//! for the report. A family whose training diverges contributes a row with
//! NaN metrics instead of aborting the grid, so the surviving rows are still
//! comparable.

use std::fs;
use std::path::Path;

use crate::data::{synth_dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::{reference_stats, train_probe};
use crate::nn::derive_seed;
use crate::temporal::{Family, TemporalSpec};
use crate::videogan::{
    evaluate_on_config, family_label, load_model, train_gan, GanConfig, GanModel, TrainOptions,
};

/// The family tokens accepted by the ablation grid, in report order.
pub const FAMILY_TOKENS: [&str; 6] = ["conv1d", "lstm", "ode1", "ode2", "ode3", "sde"];

/// Stream of the data seed reserved for probe-classifier initialization (the
/// training loop itself only draws batch indices from stream 0).
const PROBE_STREAM: u64 = 6;

/// Seed for the frozen probe classifier shared by training and ablation.
pub fn probe_seed(cfg: &GanConfig) -> u64 {
    derive_seed(cfg.seeds.data, PROBE_STREAM, 0)
}

/// Parses one family token into (family, differential order). The order is 0
/// for the discrete baselines, which have no differential structure.
pub fn parse_family_token(token: &str) -> Result<(Family, usize)> {
    match token {
        "conv1d" => Ok((Family::Conv1d, 0)),
        "lstm" => Ok((Family::Lstm, 0)),
        "ode1" => Ok((Family::Ode, 1)),
        "ode2" => Ok((Family::Ode, 2)),
        "ode3" => Ok((Family::Ode, 3)),
        "sde" => Ok((Family::Sde, 1)),
        other => Err(Error::config(format!(
            "unknown family {other:?}; valid families are {}",
            FAMILY_TOKENS.join(", ")
        ))),
    }
}

/// Builds the spec for one family token from the shared base settings.
///
/// Discrete baselines drop the solver and prepend settings (they have
/// neither); continuous families keep the base solver only when its method
/// suits them, falling back to the family default otherwise so one config can
/// drive the whole grid.
pub fn spec_for_token(base: &TemporalSpec, token: &str) -> Result<TemporalSpec> {
    let (family, order) = parse_family_token(token)?;
    let mut spec = base.clone();
    spec.family = family;
    spec.order = order.max(1);
    match family {
        Family::Conv1d | Family::Lstm => {
            spec.solver = None;
            spec.prepend_fcn_depth = 0;
        }
        Family::Ode => {
            if spec.solver.is_some_and(|s| s.method == crate::solvers::Method::EulerMaruyama) {
                spec.solver = None;
            }
        }
        Family::Sde => {
            if spec.solver.is_some_and(|s| s.method != crate::solvers::Method::EulerMaruyama) {
                spec.solver = None;
            }
        }
    }
    Ok(spec)
}

// ---------------------------------------------------------------------------
// Report rows
// ---------------------------------------------------------------------------

/// One ablation report row: identity of the family, its size, the best
/// checkpoint's scores, and the measured wall-clock cost per optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub family: String,
    pub order: usize,
    pub fx_shape: String,
    pub param_count: usize,
    pub is_mean: f64,
    pub is_std: f64,
    pub fid: f64,
    pub seconds_per_step: f64,
}

pub const REPORT_HEADER: &str =
    "family,order,fx_shape,param_count,is_mean,is_std,fid,seconds_per_step";

impl MetricReport {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.family,
            self.order,
            self.fx_shape,
            self.param_count,
            self.is_mean,
            self.is_std,
            self.fid,
            self.seconds_per_step
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Io(format!(
                "report row has {} fields, expected 8: {line:?}",
                fields.len()
            )));
        }
        let int = |i: usize| -> Result<usize> {
            fields[i].parse().map_err(|_| Error::Io(format!("bad integer in report row {line:?}")))
        };
        let num = |i: usize| -> Result<f64> {
            fields[i].parse().map_err(|_| Error::Io(format!("bad number in report row {line:?}")))
        };
        Ok(MetricReport {
            family: fields[0].to_string(),
            order: int(1)?,
            fx_shape: fields[2].to_string(),
            param_count: int(3)?,
            is_mean: num(4)?,
            is_std: num(5)?,
            fid: num(6)?,
            seconds_per_step: num(7)?,
        })
    }
}

/// Writes the report as CSV: header row then one line per family.
pub fn write_report_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut out = String::with_capacity(64 * (reports.len() + 1));
    out.push_str(REPORT_HEADER);
    out.push('\n');
    for row in reports {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Reads a report CSV written by [`write_report_csv`].
pub fn read_report_csv(path: &Path) -> Result<Vec<MetricReport>> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == REPORT_HEADER => {}
        other => {
            return Err(Error::Io(format!(
                "{}: expected report header, got {other:?}",
                path.display()
            )))
        }
    }
    lines.map(MetricReport::from_csv).collect()
}

// ---------------------------------------------------------------------------
// The grid
// ---------------------------------------------------------------------------

fn fx_label(spec: &TemporalSpec) -> String {
    match spec.family {
        Family::Ode | Family::Sde => spec.fx_shape.as_str().to_string(),
        _ => "-".to_string(),
    }
}

/// Mean seconds per step recorded before a run died, if any were logged.
fn last_logged_seconds(dir: &Path) -> f64 {
    let Ok(text) = fs::read_to_string(dir.join("timing.csv")) else {
        return f64::NAN;
    };
    text.lines()
        .skip(1)
        .filter_map(|l| l.split(',').nth(1)?.parse::<f64>().ok())
        .last()
        .unwrap_or(f64::NAN)
}

/// Trains every spec under identical data, probe, seeds and budget, then
/// reports the best checkpoint of each. Specs must agree on latent dimension
/// and frame count, and the frame count must match the dataset's.
pub fn ablation_run(
    specs: &[TemporalSpec],
    gan: &GanConfig,
    dataset_spec: &SyntheticSpec,
    out_dir: &Path,
    opts: &TrainOptions,
) -> Result<Vec<MetricReport>> {
    let first = specs
        .first()
        .ok_or_else(|| Error::config("the ablation needs at least one family"))?;
    if specs.iter().any(|s| s.latent_dim != first.latent_dim) {
        return Err(Error::config("all ablation families must share one latent_dim"));
    }
    if specs.iter().any(|s| s.seq_len != first.seq_len) {
        return Err(Error::config("all ablation families must share one seq_len"));
    }
    if first.seq_len != dataset_spec.seq_len {
        return Err(Error::config(format!(
            "families generate {} frames but the dataset has {}",
            first.seq_len, dataset_spec.seq_len
        )));
    }
    gan.validate()?;

    let data = synth_dataset(dataset_spec)?;
    let probe = train_probe(&data, probe_seed(gan))?;
    let reference = reference_stats(&probe, &data)?;

    let mut reports = Vec::with_capacity(specs.len());
    for spec in specs {
        let label = family_label(spec);
        let dir = out_dir.join(&label);
        fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;

        let mut model = GanModel::build(spec, gan.seeds.params)?;
        let param_count = model.temporal().param_count();
        let order = if spec.family == Family::Conv1d || spec.family == Family::Lstm {
            0
        } else {
            spec.order
        };
        let mut row = MetricReport {
            family: label,
            order,
            fx_shape: fx_label(spec),
            param_count,
            is_mean: f64::NAN,
            is_std: f64::NAN,
            fid: f64::NAN,
            seconds_per_step: f64::NAN,
        };

        match train_gan(&mut model, gan, &data, &probe, &dir, opts) {
            Ok(outcome) => {
                let (best, _) = load_model(&dir.join("best.ndck"))?;
                let values = evaluate_on_config(&best, gan, &probe, &reference, opts)?;
                row.is_mean = values.is_mean;
                row.is_std = values.is_std;
                row.fid = values.fid;
                row.seconds_per_step = outcome.seconds_per_step;
            }
            // A diverged family is a result, not a reason to drop the grid.
            Err(Error::Training(_)) => {
                row.seconds_per_step = last_logged_seconds(&dir);
            }
            Err(e) => return Err(e),
        }
        reports.push(row);
    }
    Ok(reports)
}

// ---------------------------------------------------------------------------
