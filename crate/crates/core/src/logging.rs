//! Run artifacts: round log, monitor dump, event log, summary.
//!
//! All files are written atomically (temp file in the same directory, then
//! rename); an aborted run keeps whatever was recorded under a `.partial`
//! suffix. Column orders are fixed and floats print in shortest
//! round-trip form, so identical runs produce byte-identical files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::datagen::DeviceDataset;
use crate::engine::{ExperimentOutput, RoundRecord, Summary};
use crate::error::{Error, Result};

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const MONITOR_FILE: &str = "monitor.csv";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const DATASET_FILE: &str = "dataset.csv";

/// Write `content` to `path` through a temp file + rename.
pub fn write_atomic(path: &Path, content: &[u8]) -> Result<()> {
    let parent = path
        .parent()
        .ok_or_else(|| Error::runtime(format!("{} has no parent dir", path.display())))?;
    fs::create_dir_all(parent)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(content)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub const ROUNDS_HEADER: &str = "scope,round,group,rho,depth,members,group_time,waiting,kl,utility,delta_f,raw_reward,norm_reward,ucb_top3,round_time,sim_time,traffic,eval_loss,eval_accuracy";

/// Round log: one row per group per round plus one global row per round.
pub fn rounds_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from(ROUNDS_HEADER);
    out.push('\n');
    for rec in records {
        for g in &rec.groups {
            let members = g
                .members
                .iter()
                .map(|m| m.to_string())
                .collect::<Vec<_>>()
                .join(";");
            let ucb = g
                .ucb_top
                .iter()
                .map(|(arm, score)| format!("{arm}:{score}"))
                .collect::<Vec<_>>()
                .join(";");
            out.push_str(&format!(
                "group,{},{},{},{},{},{},{},{},{},{},{},{},{},,,,,\n",
                rec.round,
                g.group,
                g.arm.rho,
                g.arm.depth,
                members,
                g.group_time,
                g.waiting,
                g.kl,
                g.utility,
                g.loss_drop,
                g.raw_reward,
                g.norm_reward,
                ucb
            ));
        }
        out.push_str(&format!(
            "global,{},,,,,,,,,,,,,{},{},{},{},{}\n",
            rec.round, rec.round_time, rec.sim_time, rec.traffic, rec.eval_loss, rec.eval_accuracy
        ));
    }
    out
}

pub const MONITOR_HEADER: &str =
    "round,device,true_compute_rate,est_compute_rate,true_upload_rate,est_upload_rate";

pub fn monitor_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from(MONITOR_HEADER);
    out.push('\n');
    for rec in records {
        for row in &rec.monitor {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                rec.round,
                row.device,
                row.true_compute_rate,
                row.est_compute_rate,
                row.true_upload_rate,
                row.est_upload_rate
            ));
        }
    }
    out
}

pub fn events_jsonl(records: &[RoundRecord]) -> Result<String> {
    let mut out = String::new();
    for rec in records {
        for event in &rec.events {
            let line = serde_json::to_string(event)
                .map_err(|e| Error::runtime(format!("event serialize failed: {e}")))?;
            out.push_str(&line);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn summary_json(summary: &Summary) -> Result<String> {
    serde_json::to_string_pretty(summary)
        .map_err(|e| Error::runtime(format!("summary serialize failed: {e}")))
}

/// One row per sample: device, class, then raw features.
pub fn dataset_csv(datasets: &[DeviceDataset]) -> String {
    let dim = datasets.first().map_or(0, |d| d.features.ncols());
    let mut out = String::from("device,class");
    for j in 0..dim {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for (device, data) in datasets.iter().enumerate() {
        for (row, &label) in data.features.rows().into_iter().zip(&data.labels) {
            out.push_str(&format!("{device},{label}"));
            for v in row.iter() {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    out
}

/// Write every artifact of a completed run into `dir`.
pub fn write_run(dir: &Path, output: &ExperimentOutput, resolved_config: &str) -> Result<()> {
    write_atomic(&dir.join(ROUNDS_FILE), rounds_csv(&output.records).as_bytes())?;
    write_atomic(&dir.join(MONITOR_FILE), monitor_csv(&output.records).as_bytes())?;
    write_atomic(&dir.join(EVENTS_FILE), events_jsonl(&output.records)?.as_bytes())?;
    write_atomic(&dir.join(SUMMARY_FILE), summary_json(&output.summary)?.as_bytes())?;
    write_atomic(&dir.join(RESOLVED_CONFIG_FILE), resolved_config.as_bytes())?;
    Ok(())
}

/// Preserve the logs of an aborted run under `.partial` names.
pub fn write_partial(dir: &Path, records: &[RoundRecord]) -> Result<()> {
    write_atomic(
        &partial_path(&dir.join(ROUNDS_FILE)),
        rounds_csv(records).as_bytes(),
    )?;
    write_atomic(
        &partial_path(&dir.join(EVENTS_FILE)),
        events_jsonl(records)?.as_bytes(),
    )?;
    Ok(())
}

fn partial_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".partial");
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::engine::run_experiment;

    fn tiny_output() -> ExperimentOutput {
        let cfg = ExperimentConfig::from_str_with_overrides(
            "schema_version = 1\nmode = \"flat_baseline\"\nn = 2\n",
            &[
                "num_classes=2".into(),
                "input_dim=4".into(),
                "hidden_dim=4".into(),
                "num_layers=2".into(),
                "samples_per_device=8".into(),
                "eval_samples=20".into(),
                "rounds=2".into(),
                "local_steps=10".into(),
                "batch_size=4".into(),
            ],
        )
        .unwrap();
        run_experiment(&cfg).unwrap()
    }

    #[test]
    fn round_csv_has_group_and_global_rows() {
        let out = tiny_output();
        let csv = rounds_csv(&out.records);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], ROUNDS_HEADER);
        let groups = lines.iter().filter(|l| l.starts_with("group,")).count();
        let globals = lines.iter().filter(|l| l.starts_with("global,")).count();
        assert_eq!(globals, 2);
        assert_eq!(groups, 2); // one group per round in flat mode
        let cols = lines[0].split(',').count();
        for line in &lines[1..] {
            assert_eq!(line.split(',').count(), cols, "ragged row: {line}");
        }
    }

    #[test]
    fn events_are_one_json_object_per_line() {
        let out = tiny_output();
        let jsonl = events_jsonl(&out.records).unwrap();
        for line in jsonl.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("kind").is_some());
            assert!(v.get("sim_time").is_some());
        }
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert!(!path.with_extension("tmp").exists());
    }

    #[test]
    fn identical_outputs_serialize_identically() {
        let a = tiny_output();
        let b = tiny_output();
        assert_eq!(rounds_csv(&a.records), rounds_csv(&b.records));
        assert_eq!(
            events_jsonl(&a.records).unwrap(),
            events_jsonl(&b.records).unwrap()
        );
        assert_eq!(
            summary_json(&a.summary).unwrap(),
            summary_json(&b.summary).unwrap()
        );
    }
}
