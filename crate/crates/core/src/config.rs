//! Experiment configuration: a flat key = value file with a versioned
//! schema, strict unknown-key rejection, and command-line overrides.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::monitor::{CostFractions, ProfileParams};
use crate::scheduler::{arm_grid, default_arm_grid, ArmConfig, CostModel};

pub const SCHEMA_VERSION: u32 = 1;

/// Orchestration mode of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Grouping plus per-group bandit over (frequency, depth) arms.
    Hierfedlora,
    /// One global group, frequency 1, full depth.
    FlatBaseline,
    /// Grouping with a fixed (frequency, depth) arm, no bandit.
    FixedArm,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Hierfedlora => "hierfedlora",
            Mode::FlatBaseline => "flat_baseline",
            Mode::FixedArm => "fixed_arm",
        };
        f.write_str(s)
    }
}

fn default_num_classes() -> usize { 10 }
fn default_input_dim() -> usize { 16 }
fn default_hidden_dim() -> usize { 16 }
fn default_num_layers() -> usize { 4 }
fn default_rank() -> usize { 4 }
fn default_samples_per_device() -> usize { 80 }
fn default_eval_samples() -> usize { 2000 }
fn default_task_noise() -> f64 { 0.3 }
fn default_non_iid_level() -> f64 { 10.0 }
fn default_rounds() -> u64 { 100 }
fn default_local_steps() -> usize { 20 }
fn default_batch_size() -> usize { 16 }
fn default_learning_rate() -> f64 { 0.3 }
fn default_groups() -> usize { 10 }
fn default_lambda() -> f64 { 0.5 }
fn default_discount() -> f64 { 0.9 }
fn default_mixing() -> f64 { 0.5 }
fn default_alpha() -> f64 { 0.8 }
fn default_rho_grid() -> Vec<u32> { vec![1, 2, 5, 10] }
fn default_fixed_rho() -> u32 { 1 }
fn default_forward_cost() -> f64 { 10.0 }
fn default_per_layer_backward_cost() -> f64 { 2.0 }
fn default_per_layer_payload() -> u64 { 1 }
fn default_compute_budget() -> f64 { 17.0 }
fn default_comm_budget() -> f64 { 15.0 }
fn default_regroup_every() -> u64 { 20 }
fn default_mode_change_every() -> u64 { 20 }
fn default_noise_sigma() -> f64 { 0.1 }
fn default_forward_fraction() -> f64 { 0.4 }
fn default_backprop_fraction() -> f64 { 0.05 }
fn default_compute_time_range() -> [f64; 2] { [0.5, 5.0] }
fn default_upload_time_range() -> [f64; 2] { [0.02, 0.2] }
fn default_mode_multiplier_range() -> [f64; 2] { [0.5, 2.0] }
fn default_data_seed() -> u64 { 1 }
fn default_noise_seed() -> u64 { 2 }
fn default_bandit_seed() -> u64 { 3 }
fn default_kmeans_seed() -> u64 { 4 }
fn default_accuracy_targets() -> Vec<f64> { vec![0.5, 0.6, 0.7, 0.8, 0.9] }
fn default_count_downlink() -> bool { true }
fn default_dump_dataset() -> bool { false }

/// Everything a run needs. Unknown keys are rejected so typos fail loudly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub mode: Mode,
    /// Number of devices.
    pub n: usize,

    // Task and model.
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_num_layers")]
    pub num_layers: usize,
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default = "default_samples_per_device")]
    pub samples_per_device: usize,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default = "default_task_noise")]
    pub task_noise: f64,
    #[serde(default = "default_non_iid_level")]
    pub non_iid_level: f64,

    // Training loop.
    #[serde(default = "default_rounds")]
    pub rounds: u64,
    #[serde(default = "default_local_steps")]
    pub local_steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,

    // Grouping and scheduling.
    #[serde(default = "default_groups")]
    pub groups: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default = "default_mixing")]
    pub mixing_v: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_rho_grid")]
    pub rho_grid: Vec<u32>,
    /// Empty means quarter points of the layer stack.
    #[serde(default)]
    pub depth_grid: Vec<u32>,
    #[serde(default = "default_fixed_rho")]
    pub fixed_rho: u32,
    /// 0 means full depth.
    #[serde(default)]
    pub fixed_depth: u32,
    #[serde(default = "default_regroup_every")]
    pub regroup_every: u64,

    // Cost model and budgets.
    #[serde(default = "default_forward_cost")]
    pub forward_cost: f64,
    #[serde(default = "default_per_layer_backward_cost")]
    pub per_layer_backward_cost: f64,
    #[serde(default = "default_per_layer_payload")]
    pub per_layer_payload: u64,
    #[serde(default = "default_compute_budget")]
    pub compute_budget: f64,
    #[serde(default = "default_comm_budget")]
    pub comm_budget: f64,

    // Simulated hardware.
    #[serde(default = "default_mode_change_every")]
    pub mode_change_every: u64,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_forward_fraction")]
    pub forward_fraction: f64,
    #[serde(default = "default_backprop_fraction")]
    pub backprop_fraction: f64,
    #[serde(default = "default_compute_time_range")]
    pub compute_time_range: [f64; 2],
    #[serde(default = "default_upload_time_range")]
    pub upload_time_range: [f64; 2],
    #[serde(default = "default_mode_multiplier_range")]
    pub mode_multiplier_range: [f64; 2],

    // Named seed streams.
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
    #[serde(default = "default_noise_seed")]
    pub noise_seed: u64,
    #[serde(default = "default_bandit_seed")]
    pub bandit_seed: u64,
    #[serde(default = "default_kmeans_seed")]
    pub kmeans_seed: u64,

    // Reporting.
    #[serde(default = "default_accuracy_targets")]
    pub accuracy_targets: Vec<f64>,
    #[serde(default = "default_count_downlink")]
    pub count_downlink: bool,
    #[serde(default = "default_dump_dataset")]
    pub dump_dataset: bool,
}

impl ExperimentConfig {
    /// Parse a config document, then apply `key=value` overrides in order.
    pub fn from_str_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Error::config(format!("config parse failed: {e}")))?;
        for ov in overrides {
            let (key, value) = ov
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override '{ov}' is not key=value")))?;
            let key = key.trim();
            let value = value.trim();
            // Accept bare words as strings so `mode=flat_baseline` works.
            let parsed: toml::Value = match format!("v = {value}").parse::<toml::Table>() {
                Ok(t) => t["v"].clone(),
                Err(_) => toml::Value::String(value.to_string()),
            };
            table.insert(key.to_string(), parsed);
        }
        let config: ExperimentConfig = table
            .try_into()
            .map_err(|e| Error::config(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &std::path::Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str_with_overrides(&text, overrides)
    }

    /// Serialize with every default materialized.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::runtime(format!("serialize failed: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(Error::config(format!("{field}: {msg}")));
        if self.schema_version != SCHEMA_VERSION {
            return fail(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            );
        }
        if self.n == 0 {
            return fail("n", "must be >= 1".into());
        }
        if self.num_classes < 2 {
            return fail("num_classes", "must be >= 2".into());
        }
        if self.num_layers == 0 {
            return fail("num_layers", "must be >= 1".into());
        }
        if self.rank == 0 || self.rank > self.input_dim.min(self.hidden_dim) {
            return fail("rank", format!("must lie in 1..={}", self.input_dim.min(self.hidden_dim)));
        }
        if self.samples_per_device == 0 {
            return fail("samples_per_device", "must be >= 1".into());
        }
        if self.eval_samples == 0 {
            return fail("eval_samples", "must be >= 1".into());
        }
        if self.task_noise < 0.0 {
            return fail("task_noise", "must be >= 0".into());
        }
        if self.non_iid_level < 0.0 || !self.non_iid_level.is_finite() {
            return fail("non_iid_level", "must be finite and >= 0".into());
        }
        if self.rounds == 0 {
            return fail("rounds", "must be >= 1".into());
        }
        if self.local_steps == 0 {
            return fail("local_steps", "must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be >= 1".into());
        }
        if self.learning_rate <= 0.0 {
            return fail("learning_rate", "must be > 0".into());
        }
        if self.groups == 0 {
            return fail("groups", "must be >= 1".into());
        }
        for (field, v) in [
            ("lambda", self.lambda),
            ("mixing_v", self.mixing_v),
            ("alpha", self.alpha),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(field, "must lie in [0, 1]".into());
            }
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return fail("discount", "must lie in (0, 1]".into());
        }
        if self.rho_grid.is_empty() {
            return fail("rho_grid", "must contain at least one frequency".into());
        }
        if let Some(&max_rho) = self.rho_grid.iter().max() {
            if max_rho == 0 {
                return fail("rho_grid", "frequencies must be >= 1".into());
            }
            if self.local_steps < max_rho as usize {
                return fail(
                    "local_steps",
                    format!("must be >= max frequency {max_rho} in rho_grid"),
                );
            }
        }
        for &d in &self.depth_grid {
            if d == 0 || d as usize > self.num_layers {
                return fail("depth_grid", format!("depth {d} outside 1..={}", self.num_layers));
            }
        }
        if self.fixed_rho == 0 || self.fixed_rho as usize > self.local_steps {
            return fail("fixed_rho", format!("must lie in 1..={}", self.local_steps));
        }
        if self.fixed_depth as usize > self.num_layers {
            return fail("fixed_depth", format!("must lie in 0..={} (0 = full)", self.num_layers));
        }
        if self.regroup_every == 0 {
            return fail("regroup_every", "must be >= 1".into());
        }
        if self.forward_cost <= 0.0 || self.per_layer_backward_cost <= 0.0 {
            return fail("forward_cost", "cost terms must be > 0".into());
        }
        if self.per_layer_payload == 0 {
            return fail("per_layer_payload", "must be >= 1".into());
        }
        if self.compute_budget <= 0.0 || self.comm_budget <= 0.0 {
            return fail("compute_budget", "budgets must be > 0".into());
        }
        if self.mode_change_every == 0 {
            return fail("mode_change_every", "must be >= 1".into());
        }
        if self.noise_sigma < 0.0 {
            return fail("noise_sigma", "must be >= 0".into());
        }
        if self.forward_fraction <= 0.0 || self.backprop_fraction <= 0.0 {
            return fail("forward_fraction", "cost fractions must be > 0".into());
        }
        for (field, range) in [
            ("compute_time_range", self.compute_time_range),
            ("upload_time_range", self.upload_time_range),
            ("mode_multiplier_range", self.mode_multiplier_range),
        ] {
            if range[0] <= 0.0 || range[1] < range[0] {
                return fail(field, "must be a positive, ordered [lo, hi]".into());
            }
        }
        for &t in &self.accuracy_targets {
            if !(0.0..=1.0).contains(&t) {
                return fail("accuracy_targets", format!("target {t} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Fine-tuning depth of the fixed arm, with 0 meaning the full stack.
    pub fn resolved_fixed_depth(&self) -> u32 {
        if self.fixed_depth == 0 {
            self.num_layers as u32
        } else {
            self.fixed_depth
        }
    }

    pub fn arm_grid(&self) -> Vec<ArmConfig> {
        if self.depth_grid.is_empty() {
            default_arm_grid(&self.rho_grid, self.num_layers)
        } else {
            arm_grid(&self.rho_grid, &self.depth_grid)
        }
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel {
            forward_cost: self.forward_cost,
            per_layer_backward: self.per_layer_backward_cost,
            per_layer_payload: self.per_layer_payload,
            compute_budget: self.compute_budget,
            comm_budget: self.comm_budget,
            mixing: self.mixing_v,
        }
    }

    pub fn cost_fractions(&self) -> CostFractions {
        CostFractions {
            forward: self.forward_fraction,
            backprop_per_layer: self.backprop_fraction,
        }
    }

    pub fn profile_params(&self) -> ProfileParams {
        ProfileParams {
            compute_range: (self.compute_time_range[0], self.compute_time_range[1]),
            upload_range: (self.upload_time_range[0], self.upload_time_range[1]),
            mode_range: (self.mode_multiplier_range[0], self.mode_multiplier_range[1]),
            mode_interval: self.mode_change_every,
        }
    }

    pub fn model_dims(&self) -> crate::model::ModelDims {
        crate::model::ModelDims {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            num_classes: self.num_classes,
            rank: self.rank,
        }
    }

    /// Minimal document for tests and examples.
    pub fn minimal(mode: Mode, n: usize) -> Self {
        let text = format!("schema_version = 1\nmode = \"{mode}\"\nn = {n}\n");
        Self::from_str_with_overrides(&text, &[]).expect("minimal config is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "schema_version = 1\nmode = \"flat_baseline\"\nn = 4\n";

    #[test]
    fn missing_required_field_names_it() {
        let err = ExperimentConfig::from_str_with_overrides("schema_version = 1\nmode = \"flat_baseline\"\n", &[])
            .unwrap_err();
        assert!(err.to_string().contains('n'), "message was: {err}");
        assert!(err.to_string().contains("missing field"), "message was: {err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ExperimentConfig::from_str_with_overrides(
            &format!("{BASE}not_a_field = 3\n"),
            &[],
        )
        .unwrap_err();
        assert!(err.to_string().contains("not_a_field"), "message was: {err}");
    }

    #[test]
    fn overrides_supersede_file_values() {
        let cfg = ExperimentConfig::from_str_with_overrides(
            BASE,
            &["mode=hierfedlora".into(), "n=12".into(), "learning_rate=0.05".into()],
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::Hierfedlora);
        assert_eq!(cfg.n, 12);
        assert_eq!(cfg.learning_rate, 0.05);
    }

    #[test]
    fn round_trip_materializes_defaults() {
        let cfg = ExperimentConfig::from_str_with_overrides(BASE, &[]).unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert!(text.contains("learning_rate"));
        assert!(text.contains("rho_grid"));
        let back = ExperimentConfig::from_str_with_overrides(&text, &[]).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn validation_reports_field_names() {
        for (ov, field) in [
            ("n=0", "n"),
            ("learning_rate=-1.0", "learning_rate"),
            ("discount=0.0", "discount"),
            ("rho_grid=[30]", "local_steps"),
            ("depth_grid=[9]", "depth_grid"),
            ("schema_version=2", "schema_version"),
        ] {
            let err =
                ExperimentConfig::from_str_with_overrides(BASE, &[ov.to_string()]).unwrap_err();
            assert!(
                err.to_string().contains(field),
                "override {ov}: message was {err}"
            );
        }
    }

    #[test]
    fn fixed_depth_zero_means_full_stack() {
        let cfg = ExperimentConfig::from_str_with_overrides(BASE, &[]).unwrap();
        assert_eq!(cfg.resolved_fixed_depth(), cfg.num_layers as u32);
        let cfg =
            ExperimentConfig::from_str_with_overrides(BASE, &["fixed_depth=2".into()]).unwrap();
        assert_eq!(cfg.resolved_fixed_depth(), 2);
    }

    #[test]
    fn default_budgets_keep_most_of_the_grid() {
        let cfg = ExperimentConfig::from_str_with_overrides(BASE, &[]).unwrap();
        let arms = cfg.arm_grid();
        let (feasible, fallback) = crate::scheduler::feasible_arms(&arms, &cfg.cost_model());
        assert!(!fallback);
        let share = feasible.len() as f64 / arms.len() as f64;
        assert!((0.4..=0.8).contains(&share), "feasible share {share}");
    }
}
