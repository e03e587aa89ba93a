//! Experiment configuration: one strict JSON document describing the whole
//! pipeline, fully validated before any compute.
//!
//! Unknown keys are rejected, every random stream's seed must be written out
//! explicitly (there is no wall-clock fallback), and cross-section
//! consistency (frame counts, image size, solver/family fit) is checked at
//! load time so long jobs fail in milliseconds on a typo.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::data::{DatasetKind, SyntheticSpec};
use crate::error::{Error, Result};
use crate::solvers::{Method, SolverSpec};
use crate::temporal::{Family, FxShape, TemporalSpec};
use crate::videogan::{GanConfig, GanSeeds, Phi, IMAGE_SIDE};

// ---------------------------------------------------------------------------
// Raw document
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemporalSection {
    family: String,
    #[serde(default = "default_order")]
    order: usize,
    #[serde(default = "default_fx_shape")]
    fx_shape: String,
    latent_dim: usize,
    num_frames: usize,
    #[serde(default)]
    prepend_fcn_depth: usize,
    #[serde(default)]
    param_budget: Option<usize>,
    seed: u64,
}

fn default_order() -> usize {
    1
}

fn default_fx_shape() -> String {
    "single_layer".to_string()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedsSection {
    params: u64,
    data: u64,
    noise: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GanSection {
    phi: String,
    batch_size: usize,
    total_steps: usize,
    metric_interval: usize,
    seeds: SeedsSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSection {
    kind: String,
    num_classes: usize,
    num_frames: usize,
    height: usize,
    width: usize,
    samples_per_class: usize,
    seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSection {
    method: String,
    steps_per_unit: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    temporal: TemporalSection,
    gan: GanSection,
    dataset: DatasetSection,
    #[serde(default)]
    solver: Option<SolverSection>,
    output_dir: String,
}

// ---------------------------------------------------------------------------
// Resolved configuration
// ---------------------------------------------------------------------------

/// A parsed and fully validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub temporal: TemporalSpec,
    pub gan: GanConfig,
    pub dataset: SyntheticSpec,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parses a JSON string; every error names the offending key or value.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document =
            serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        resolve(doc)
    }

    /// Reads and parses a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

fn resolve(doc: Document) -> Result<ExperimentConfig> {
    let solver = match doc.solver {
        Some(s) => {
            let method = Method::parse(&s.method)?;
            Some(SolverSpec { method, steps_per_unit: s.steps_per_unit })
        }
        None => None,
    };

    let temporal = TemporalSpec {
        family: Family::parse(&doc.temporal.family)?,
        latent_dim: doc.temporal.latent_dim,
        seq_len: doc.temporal.num_frames,
        order: doc.temporal.order,
        fx_shape: FxShape::parse(&doc.temporal.fx_shape)?,
        param_budget: doc.temporal.param_budget,
        prepend_fcn_depth: doc.temporal.prepend_fcn_depth,
        solver,
        seed: doc.temporal.seed,
    };
    temporal.validate()?;

    let gan = GanConfig {
        phi: Phi::parse(&doc.gan.phi)?,
        batch_size: doc.gan.batch_size,
        total_steps: doc.gan.total_steps,
        metric_interval: doc.gan.metric_interval,
        seeds: GanSeeds {
            params: doc.gan.seeds.params,
            data: doc.gan.seeds.data,
            noise: doc.gan.seeds.noise,
        },
    };
    gan.validate()?;

    let dataset = SyntheticSpec {
        kind: DatasetKind::parse(&doc.dataset.kind)?,
        num_classes: doc.dataset.num_classes,
        seq_len: doc.dataset.num_frames,
        height: doc.dataset.height,
        width: doc.dataset.width,
        samples_per_class: doc.dataset.samples_per_class,
        seed: doc.dataset.seed,
    };
    dataset.validate()?;

    if temporal.seq_len != dataset.seq_len {
        return Err(Error::config(format!(
            "temporal.num_frames is {} but dataset.num_frames is {}; the generator must produce exactly the dataset's frame count",
            temporal.seq_len, dataset.seq_len
        )));
    }
    if dataset.height != IMAGE_SIDE || dataset.width != IMAGE_SIDE {
        return Err(Error::config(format!(
            "dataset.height and dataset.width must be {IMAGE_SIDE} (the image generator's fixed output size), got {}x{}",
            dataset.height, dataset.width
        )));
    }
    if doc.output_dir.is_empty() {
        return Err(Error::config("output_dir must not be empty"));
    }

    Ok(ExperimentConfig {
        temporal,
        gan,
        dataset,
        output_dir: PathBuf::from(doc.output_dir),
    })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_json() -> String {
        r#"{
            "temporal": {
                "family": "ode",
                "order": 2,
                "latent_dim": 8,
                "num_frames": 16,
                "seed": 7
            },
            "gan": {
                "phi": "bce",
                "batch_size": 4,
                "total_steps": 100,
                "metric_interval": 50,
                "seeds": { "params": 1, "data": 2, "noise": 3 }
            },
            "dataset": {
                "kind": "moving_bar",
                "num_classes": 2,
                "num_frames": 16,
                "height": 16,
                "width": 16,
                "samples_per_class": 64,
                "seed": 4
            },
            "solver": { "method": "rk4", "steps_per_unit": 4 },
            "output_dir": "runs/demo"
        }"#
        .to_string()
    }

    #[test]
    fn a_complete_document_resolves_with_defaults_applied() {
        let cfg = ExperimentConfig::from_json(&sample_json()).unwrap();
        assert_eq!(cfg.temporal.family, Family::Ode);
        assert_eq!(cfg.temporal.order, 2);
        assert_eq!(cfg.temporal.fx_shape, FxShape::SingleLayer);
        assert_eq!(cfg.temporal.prepend_fcn_depth, 0);
        assert_eq!(cfg.temporal.solver, Some(SolverSpec { method: Method::Rk4, steps_per_unit: 4 }));
        assert_eq!(cfg.gan.phi, Phi::Bce);
        assert_eq!(cfg.gan.seeds.noise, 3);
        assert_eq!(cfg.dataset.kind, DatasetKind::MovingBar);
        assert_eq!(cfg.output_dir, PathBuf::from("runs/demo"));
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let text = sample_json().replace("\"order\": 2,", "\"order\": 2, \"warmup\": 5,");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("warmup"), "{err}");
    }

    #[test]
    fn missing_seeds_are_rejected_by_name() {
        let text = sample_json().replace("\"params\": 1, ", "");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("params"), "{err}");

        let text = sample_json().replace("\"seed\": 7", "\"seed\": 7, \"extra\": 1");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
    }

    #[test]
    fn cross_section_consistency_is_enforced() {
        // Frame-count mismatch between generator and dataset.
        let text = sample_json().replace("\"num_frames\": 16,\n                \"seed\": 7", "\"num_frames\": 8,\n                \"seed\": 7");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("num_frames"), "{err}");

        // The image pipeline is fixed at 16x16.
        let text = sample_json().replace("\"height\": 16", "\"height\": 32");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("16"), "{err}");

        // Solver method incompatible with the family.
        let text = sample_json().replace("\"method\": \"rk4\"", "\"method\": \"euler_maruyama\"");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("deterministic"), "{err}");
    }

    #[test]
    fn malformed_json_and_bad_enums_fail_as_config_errors() {
        let err = ExperimentConfig::from_json("{ not json").unwrap_err();
        assert!(matches!(err, Error::Config(_)));

        let text = sample_json().replace("\"bce\"", "\"wasserstein\"");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("wasserstein"), "{err}");

        let text = sample_json().replace("\"moving_bar\"", "\"pong\"");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("pong"), "{err}");
    }
}
