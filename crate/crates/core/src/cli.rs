//! Run and sweep entry points behind the command-line binary.
//!
//! `run` executes one experiment from a config file plus overrides and
//! writes its artifacts atomically. `sweep` expands a cartesian grid of
//! axis values and seeds over a base config, runs each combination in its
//! own directory (skipping ones that already finished), and folds all
//! summaries into one comparison table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::config::ExperimentConfig;
use crate::datagen::{partition, ClassTask, PartitionSpec};
use crate::engine::{run_experiment, Summary};
use crate::error::{Error, Result};
use crate::logging::{
    dataset_csv, write_atomic, write_partial, write_run, DATASET_FILE, SUMMARY_FILE,
};
use crate::rng::{stream, tags};

/// Outcome of a single completed run.
#[derive(Debug)]
pub struct RunOutcome {
    pub summary: Summary,
    pub out_dir: PathBuf,
}

/// Execute one experiment and write artifacts into `out_dir`.
pub fn run(config_path: &Path, overrides: &[String], out_dir: &Path) -> Result<RunOutcome> {
    let cfg = ExperimentConfig::from_file(config_path, overrides)?;
    run_config(&cfg, out_dir)
}

/// Run an already-validated config.
pub fn run_config(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    let resolved = cfg.to_toml_string()?;
    match run_experiment(cfg) {
        Ok(output) => {
            write_run(out_dir, &output, &resolved)?;
            if cfg.dump_dataset {
                let mut task_rng = stream(cfg.data_seed, &[tags::TASK]);
                let task =
                    ClassTask::new(cfg.num_classes, cfg.input_dim, cfg.task_noise, &mut task_rng)?;
                let spec = PartitionSpec {
                    num_devices: cfg.n,
                    num_classes: cfg.num_classes,
                    non_iid_level: cfg.non_iid_level,
                    samples_per_device: cfg.samples_per_device,
                    seed: cfg.data_seed,
                };
                let datasets: Vec<_> =
                    partition(&task, &spec)?.into_iter().map(|(d, _)| d).collect();
                write_atomic(&out_dir.join(DATASET_FILE), dataset_csv(&datasets).as_bytes())?;
            }
            Ok(RunOutcome {
                summary: output.summary,
                out_dir: out_dir.to_path_buf(),
            })
        }
        Err((e, partial)) => {
            if let Err(werr) = write_partial(out_dir, &partial) {
                log::error!("could not preserve partial logs: {werr}");
            }
            Err(e)
        }
    }
}

/// Grid description for a sweep.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub schema_version: u32,
    /// Base config path; relative paths resolve against the spec file.
    pub base_config: String,
    /// Output directory; relative paths resolve against the spec file.
    pub out_dir: String,
    /// Base seeds; each expands to the four named streams.
    pub seeds: Vec<u64>,
    /// Parameter name -> list of values to sweep.
    #[serde(default)]
    pub axes: BTreeMap<String, Vec<toml::Value>>,
}

impl SweepSpec {
    pub fn from_file(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let spec: SweepSpec = toml::from_str(&text)
            .map_err(|e| Error::config(format!("sweep spec parse failed: {e}")))?;
        if spec.schema_version != crate::config::SCHEMA_VERSION {
            return Err(Error::config(format!(
                "schema_version: expected {}, got {}",
                crate::config::SCHEMA_VERSION,
                spec.schema_version
            )));
        }
        if spec.seeds.is_empty() {
            return Err(Error::config("seeds: must list at least one seed"));
        }
        for (axis, values) in &spec.axes {
            if values.is_empty() {
                return Err(Error::config(format!("axes.{axis}: empty value list")));
            }
        }
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((spec, base))
    }
}

/// One sweep combination: axis assignments plus a seed.
#[derive(Debug, Clone)]
struct Combo {
    assignments: Vec<(String, toml::Value)>,
    seed: u64,
}

impl Combo {
    fn dir_name(&self) -> String {
        let mut parts: Vec<String> = self
            .assignments
            .iter()
            .map(|(k, v)| format!("{k}={}", value_label(v)))
            .collect();
        parts.push(format!("seed={}", self.seed));
        parts.join(",").replace('/', "_")
    }

    fn overrides(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .assignments
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        out.push(format!("data_seed={}", self.seed));
        out.push(format!("noise_seed={}", self.seed.wrapping_add(1)));
        out.push(format!("bandit_seed={}", self.seed.wrapping_add(2)));
        out.push(format!("kmeans_seed={}", self.seed.wrapping_add(3)));
        out
    }
}

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn expand_combos(spec: &SweepSpec) -> Vec<Combo> {
    let axes: Vec<(&String, &Vec<toml::Value>)> = spec.axes.iter().collect();
    let mut combos: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
    for (key, values) in axes {
        let mut next = Vec::with_capacity(combos.len() * values.len());
        for base in &combos {
            for v in values {
                let mut assignment = base.clone();
                assignment.push((key.clone(), v.clone()));
                next.push(assignment);
            }
        }
        combos = next;
    }
    let mut out = Vec::with_capacity(combos.len() * spec.seeds.len());
    for assignments in combos {
        for &seed in &spec.seeds {
            out.push(Combo {
                assignments: assignments.clone(),
                seed,
            });
        }
    }
    out
}

#[derive(Debug, Clone)]
struct ComboResult {
    combo: Combo,
    status: String,
    summary: Option<Summary>,
}

/// Run every combination of a sweep; returns the number of failures.
pub fn sweep(spec_path: &Path, jobs: usize) -> Result<usize> {
    let (spec, base_dir) = SweepSpec::from_file(spec_path)?;
    let base_config_path = base_dir.join(&spec.base_config);
    let out_root = base_dir.join(&spec.out_dir);

    // Validate the base config and every axis key before running anything.
    let base_cfg = ExperimentConfig::from_file(&base_config_path, &[])?;
    let known: toml::Table = toml::Table::try_from(&base_cfg)
        .map_err(|e| Error::config(format!("cannot introspect config fields: {e}")))?;
    for axis in spec.axes.keys() {
        if !known.contains_key(axis) {
            return Err(Error::config(format!(
                "axes.{axis}: no such field in the experiment config"
            )));
        }
    }

    let combos = expand_combos(&spec);
    println!(
        "sweep: {} combinations ({} axis points x {} seeds)",
        combos.len(),
        combos.len() / spec.seeds.len(),
        spec.seeds.len()
    );

    let run_one = |combo: &Combo| -> ComboResult {
        let dir = out_root.join(combo.dir_name());
        let summary_path = dir.join(SUMMARY_FILE);
        if summary_path.exists() {
            let loaded = std::fs::read_to_string(&summary_path)
                .ok()
                .and_then(|s| serde_json::from_str::<Summary>(&s).ok());
            if let Some(summary) = loaded {
                return ComboResult {
                    combo: combo.clone(),
                    status: "skipped".into(),
                    summary: Some(summary),
                };
            }
        }
        match run(&base_config_path, &combo.overrides(), &dir) {
            Ok(outcome) => ComboResult {
                combo: combo.clone(),
                status: "ok".into(),
                summary: Some(outcome.summary),
            },
            Err(e) => {
                log::error!("combination {} failed: {e}", combo.dir_name());
                ComboResult {
                    combo: combo.clone(),
                    status: "failed".into(),
                    summary: None,
                }
            }
        }
    };

    let mut results: Vec<ComboResult> = if jobs <= 1 {
        combos.iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::runtime(format!("thread pool: {e}")))?;
        pool.install(|| combos.par_iter().map(run_one).collect())
    };

    results.sort_by(|a, b| {
        let ka: Vec<String> = a.combo.assignments.iter().map(|(_, v)| value_label(v)).collect();
        let kb: Vec<String> = b.combo.assignments.iter().map(|(_, v)| value_label(v)).collect();
        ka.cmp(&kb).then(a.combo.seed.cmp(&b.combo.seed))
    });

    let axis_names: Vec<&String> = spec.axes.keys().collect();
    let mut csv = String::new();
    for name in &axis_names {
        csv.push_str(name);
        csv.push(',');
    }
    csv.push_str(
        "seed,status,final_accuracy,final_loss,simulated_time,traffic_payload_units,rounds\n",
    );
    for r in &results {
        for (_, v) in &r.combo.assignments {
            csv.push_str(&value_label(v));
            csv.push(',');
        }
        match &r.summary {
            Some(s) => csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.combo.seed,
                r.status,
                s.final_accuracy,
                s.final_loss,
                s.simulated_time,
                s.traffic_payload_units,
                s.rounds
            )),
            None => csv.push_str(&format!("{},{},,,,,\n", r.combo.seed, r.status)),
        }
    }
    write_atomic(&out_root.join("comparison.csv"), csv.as_bytes())?;

    let failures = results.iter().filter(|r| r.status == "failed").count();
    Ok(failures)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config_text() -> String {
        [
            "schema_version = 1",
            "mode = \"flat_baseline\"",
            "n = 2",
            "num_classes = 2",
            "input_dim = 4",
            "hidden_dim = 4",
            "num_layers = 2",
            "samples_per_device = 8",
            "eval_samples = 16",
            "rounds = 2",
            "local_steps = 10",
            "batch_size = 4",
        ]
        .join("\n")
    }

    #[test]
    fn run_writes_all_artifacts_and_leaves_config_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("exp.toml");
        std::fs::write(&config_path, tiny_config_text()).unwrap();
        let before = std::fs::read_to_string(&config_path).unwrap();
        let out = dir.path().join("out");
        let outcome = run(&config_path, &[], &out).unwrap();
        assert_eq!(outcome.summary.rounds, 2);
        for file in ["rounds.csv", "monitor.csv", "events.jsonl", "summary.json", "config.resolved.toml"] {
            assert!(out.join(file).exists(), "{file} missing");
        }
        assert_eq!(std::fs::read_to_string(&config_path).unwrap(), before);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("exp.toml");
        std::fs::write(&config_path, tiny_config_text()).unwrap();
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        run(&config_path, &[], &out_a).unwrap();
        run(&config_path, &[], &out_b).unwrap();
        for file in ["rounds.csv", "monitor.csv", "events.jsonl", "summary.json"] {
            let a = std::fs::read(out_a.join(file)).unwrap();
            let b = std::fs::read(out_b.join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between reruns");
        }
    }

    #[test]
    fn sweep_expands_runs_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("base.toml");
        std::fs::write(&config_path, tiny_config_text()).unwrap();
        let spec_path = dir.path().join("sweep.toml");
        std::fs::write(
            &spec_path,
            [
                "schema_version = 1",
                "base_config = \"base.toml\"",
                "out_dir = \"sweep_out\"",
                "seeds = [1, 2, 3]",
                "axes.mode = [\"flat_baseline\", \"fixed_arm\"]",
            ]
            .join("\n"),
        )
        .unwrap();
        let failures = sweep(&spec_path, 2).unwrap();
        assert_eq!(failures, 0);
        let comparison =
            std::fs::read_to_string(dir.path().join("sweep_out/comparison.csv")).unwrap();
        let rows: Vec<&str> = comparison.lines().collect();
        assert_eq!(rows.len(), 1 + 6, "2 modes x 3 seeds");
        assert!(rows[0].starts_with("mode,seed,status"));
        // Sorted by axis value then seed.
        assert!(rows[1].starts_with("fixed_arm,1,"));
        assert!(rows[3].starts_with("fixed_arm,3,"));
        assert!(rows[4].starts_with("flat_baseline,1,"));

        // Second invocation resumes: everything skipped, same table.
        let failures = sweep(&spec_path, 1).unwrap();
        assert_eq!(failures, 0);
        let comparison2 =
            std::fs::read_to_string(dir.path().join("sweep_out/comparison.csv")).unwrap();
        for (before, after) in comparison.lines().zip(comparison2.lines()) {
            let b: Vec<&str> = before.split(',').collect();
            let a: Vec<&str> = after.split(',').collect();
            assert_eq!(b.first(), a.first());
            assert_eq!(b.last(), a.last());
        }
        assert!(comparison2.contains("skipped"));
    }

    #[test]
    fn sweep_rejects_unknown_axis() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("base.toml");
        std::fs::write(&config_path, tiny_config_text()).unwrap();
        let spec_path = dir.path().join("sweep.toml");
        std::fs::write(
            &spec_path,
            [
                "schema_version = 1",
                "base_config = \"base.toml\"",
                "out_dir = \"sweep_out\"",
                "seeds = [1]",
                "axes.bogus_knob = [1, 2]",
            ]
            .join("\n"),
        )
        .unwrap();
        let err = sweep(&spec_path, 1).unwrap_err();
        assert!(err.to_string().contains("bogus_knob"));
    }
}
