//! Round orchestration over simulated clocks.
//!
//! A round distributes the global adapters, runs depth-restricted local
//! SGD on every device, averages adapters within each group after every
//! segment of steps, then aggregates layer-wise across groups: a layer is
//! averaged over exactly the devices whose depth covers it and keeps its
//! previous value when nobody tuned it. Timing, waiting and traffic are
//! accounted per segment; all reductions run in ascending device order so
//! runs are bitwise reproducible.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Mode};
use crate::datagen::{partition, ClassTask, DeviceDataset, LabelDistribution, PartitionSpec};
use crate::error::{Error, Result};
use crate::grouping::{build_groups, waiting_time, GroupPlan, GroupingInputs};
use crate::model::{AdapterDelta, Batch, LayeredAdapterModel};
use crate::monitor::{
    generate_profiles, predicted_round_time, sample_round_times, CostFractions, DeviceProfile,
    Monitor,
};
use crate::rng::{stream, tags};
use crate::scheduler::{
    feasible_arms, raw_utility, ArmConfig, BanditState, CostModel, RewardEvent, RewardNormalizer,
};

/// Deterministic batch schedule for one device-round: a shuffled index
/// permutation read cyclically in fixed-size windows.
pub fn batch_schedule(
    dataset_len: usize,
    batch_size: usize,
    steps: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..dataset_len).collect();
    for i in (1..perm.len()).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    (0..steps)
        .map(|step| {
            (0..batch_size)
                .map(|j| perm[(step * batch_size + j) % dataset_len])
                .collect()
        })
        .collect()
}

/// Step counts of the intra-round segments: frequency-1 equal segments of
/// floor(T / rho) with the remainder folded into the last one.
pub fn segment_sizes(total_steps: usize, rho: u32) -> Vec<usize> {
    let rho = rho as usize;
    let base = total_steps / rho;
    let mut sizes = vec![base; rho - 1];
    sizes.push(total_steps - base * (rho - 1));
    sizes
}

/// One sync or aggregation, stamped with its simulated completion time.
#[derive(Debug, Clone, Serialize)]
pub struct SyncEvent {
    pub round: u64,
    pub group: usize,
    pub segment: usize,
    pub kind: EventKind,
    pub sim_time: f64,
    pub payload_units: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    IntraGroupSync,
    GlobalAggregation,
}

/// Per-group slice of a round record.
#[derive(Debug, Clone)]
pub struct GroupRoundRecord {
    pub group: usize,
    pub members: Vec<usize>,
    pub arm: ArmConfig,
    pub group_time: f64,
    pub waiting: f64,
    pub kl: f64,
    pub utility: f64,
    pub loss_drop: f64,
    pub raw_reward: f64,
    pub norm_reward: f64,
    /// Top-scoring arms at selection time (bandit mode only).
    pub ucb_top: Vec<(ArmConfig, f64)>,
}

/// Per-device monitor dump line.
#[derive(Debug, Clone)]
pub struct MonitorRow {
    pub device: usize,
    pub true_compute_rate: f64,
    pub est_compute_rate: f64,
    pub true_upload_rate: f64,
    pub est_upload_rate: f64,
}

/// Everything observed in one round.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: u64,
    pub groups: Vec<GroupRoundRecord>,
    /// Wall-clock length of this round (slowest group).
    pub round_time: f64,
    /// Cumulative simulated seconds including this round.
    pub sim_time: f64,
    /// Cumulative payload units including this round.
    pub traffic: u64,
    pub eval_loss: f64,
    pub eval_accuracy: f64,
    pub events: Vec<SyncEvent>,
    pub monitor: Vec<MonitorRow>,
}

/// Simulated seconds at which each accuracy target was first reached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeToAccuracy {
    pub target: f64,
    pub sim_time: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub mode: String,
    pub rounds: u64,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub simulated_time: f64,
    pub traffic_payload_units: u64,
    pub time_to_accuracy: Vec<TimeToAccuracy>,
    pub num_groups_final: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<RoundRecord>,
    pub summary: Summary,
    /// Global model after the last round.
    pub final_model: LayeredAdapterModel,
}

/// Forward-only evaluation: mean loss and argmax accuracy. Ties in the
/// argmax resolve to the lowest class index.
pub fn evaluate(model: &LayeredAdapterModel, eval: &Batch) -> Result<(f64, f64)> {
    let out = model.forward(eval)?;
    let mut correct = 0usize;
    for (row, &label) in out.logits.rows().into_iter().zip(&eval.labels) {
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for (c, &v) in row.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok((out.loss, correct as f64 / eval.len() as f64))
}

struct DeviceState {
    dataset: DeviceDataset,
    profile: DeviceProfile,
    local_batch: Batch,
}

/// Mutable state threaded through the rounds.
pub struct Engine {
    cfg: ExperimentConfig,
    devices: Vec<DeviceState>,
    eval: Batch,
    global: LayeredAdapterModel,
    monitor: Monitor,
    plan: GroupPlan,
    bandits: Vec<BanditState>,
    normalizer: RewardNormalizer,
    cost_model: CostModel,
    fractions: CostFractions,
    arms: Vec<ArmConfig>,
    feasible: Vec<usize>,
    phi0: LabelDistribution,
    sim_time: f64,
    traffic: u64,
}

impl Engine {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let cfg = cfg.clone();
        let mut task_rng = stream(cfg.data_seed, &[tags::TASK]);
        let task = ClassTask::new(cfg.num_classes, cfg.input_dim, cfg.task_noise, &mut task_rng)?;
        let spec = PartitionSpec {
            num_devices: cfg.n,
            num_classes: cfg.num_classes,
            non_iid_level: cfg.non_iid_level,
            samples_per_device: cfg.samples_per_device,
            seed: cfg.data_seed,
        };
        let parts = partition(&task, &spec)?;
        let distributions: Vec<LabelDistribution> =
            parts.iter().map(|(_, d)| d.clone()).collect();
        let profiles = generate_profiles(
            &distributions,
            &cfg.profile_params(),
            cfg.rounds,
            cfg.noise_seed,
        );
        let devices = parts
            .into_iter()
            .zip(profiles)
            .map(|((dataset, _), profile)| {
                let local_batch = dataset.as_batch(cfg.num_classes)?;
                Ok(DeviceState {
                    dataset,
                    profile,
                    local_batch,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut eval_rng = stream(cfg.data_seed, &[tags::EVAL]);
        let eval = task
            .balanced_eval(cfg.eval_samples, &mut eval_rng)?
            .as_batch(cfg.num_classes)?;

        let mut init_rng = stream(cfg.data_seed, &[tags::MODEL_INIT]);
        let global = LayeredAdapterModel::init(cfg.model_dims(), &mut init_rng)?;

        let mut monitor = Monitor::new(cfg.n, cfg.alpha)?;
        // Profiling pass: one full-depth step per device seeds the
        // estimates before any scheduling decision needs them.
        let fractions = cfg.cost_fractions();
        for (i, dev) in devices.iter().enumerate() {
            let mut rng = stream(cfg.noise_seed, &[tags::TIME_NOISE, i as u64, 0]);
            let (c, u) = sample_round_times(
                &dev.profile,
                cfg.num_layers,
                1,
                0,
                fractions,
                cfg.noise_sigma,
                &mut rng,
            );
            monitor.observe(
                i,
                c / fractions.step_weight(cfg.num_layers),
                u / cfg.num_layers as f64,
            )?;
        }

        let phi0 = LabelDistribution::weighted_mean(
            &distributions.iter().map(|d| (d, 1.0)).collect::<Vec<_>>(),
        )?;

        let cost_model = cfg.cost_model();
        cost_model.validate()?;
        let arms = cfg.arm_grid();
        let (feasible, fallback) = feasible_arms(&arms, &cost_model);
        if fallback && cfg.mode == Mode::Hierfedlora {
            log::warn!("budgets exclude every arm; bandit restricted to the cheapest");
        }

        let mut engine = Self {
            devices,
            eval,
            global,
            monitor,
            plan: GroupPlan {
                groups: Vec::new(),
                lambda: cfg.lambda,
            },
            bandits: Vec::new(),
            normalizer: RewardNormalizer::new(),
            cost_model,
            fractions,
            arms,
            feasible,
            phi0,
            sim_time: 0.0,
            traffic: 0,
            cfg,
        };
        engine.rebuild_plan(1)?;
        Ok(engine)
    }

    fn effective_groups(&self) -> usize {
        match self.cfg.mode {
            Mode::FlatBaseline => 1,
            _ => self.cfg.groups,
        }
    }

    /// Predicted per-device round times under the reference arm
    /// (frequency 1, full depth), from estimates only.
    fn predicted_times(&self) -> Vec<f64> {
        (0..self.devices.len())
            .map(|i| {
                predicted_round_time(
                    self.monitor.estimate(i),
                    1,
                    self.cfg.num_layers,
                    self.cfg.local_steps,
                    self.fractions,
                )
                .expect("estimates initialized by the profiling pass")
            })
            .collect()
    }

    fn rebuild_plan(&mut self, round: u64) -> Result<()> {
        let distributions: Vec<LabelDistribution> = self
            .devices
            .iter()
            .map(|d| d.profile.label_distribution.clone())
            .collect();
        let counts: Vec<usize> = self.devices.iter().map(|d| d.dataset.len()).collect();
        let times = self.predicted_times();
        let inputs = GroupingInputs {
            distributions: &distributions,
            sample_counts: &counts,
            predicted_times: &times,
        };
        let new_plan = build_groups(
            &inputs,
            self.effective_groups(),
            self.cfg.lambda,
            &self.phi0,
            self.cfg.kmeans_seed.wrapping_add(round),
        )?;

        // Bandit state survives regrouping: each new group inherits from
        // the old group contributing most of its members (ties toward the
        // lower old index).
        let num_arms = self.arms.len();
        let new_bandits = if self.bandits.is_empty() {
            (0..new_plan.num_groups())
                .map(|_| BanditState::new(num_arms, self.cfg.discount))
                .collect::<Result<Vec<_>>>()?
        } else {
            let old_assign = self.plan.assignment(self.devices.len());
            new_plan
                .groups
                .iter()
                .map(|g| {
                    let mut votes = vec![0usize; self.bandits.len()];
                    for &m in &g.members {
                        let old = old_assign[m];
                        if old != usize::MAX {
                            votes[old] += 1;
                        }
                    }
                    let donor = (0..votes.len())
                        .max_by(|&a, &b| votes[a].cmp(&votes[b]).then(b.cmp(&a)))
                        .expect("at least one old group");
                    Ok(self.bandits[donor].clone())
                })
                .collect::<Result<Vec<_>>>()?
        };
        self.plan = new_plan;
        self.bandits = new_bandits;
        Ok(())
    }

    /// Arm of each group for this round, plus the scores behind bandit
    /// choices.
    fn select_arms(&self) -> Result<Vec<(ArmConfig, Vec<(ArmConfig, f64)>)>> {
        let mut out = Vec::with_capacity(self.plan.num_groups());
        for k in 0..self.plan.num_groups() {
            match self.cfg.mode {
                Mode::FlatBaseline => {
                    out.push((
                        ArmConfig {
                            rho: 1,
                            depth: self.cfg.num_layers as u32,
                        },
                        Vec::new(),
                    ));
                }
                Mode::FixedArm => {
                    out.push((
                        ArmConfig {
                            rho: self.cfg.fixed_rho,
                            depth: self.cfg.resolved_fixed_depth(),
                        },
                        Vec::new(),
                    ));
                }
                Mode::Hierfedlora => {
                    let idx = self.bandits[k].select(&self.feasible)?;
                    let scores = self.bandits[k]
                        .ucb_scores(&self.feasible)
                        .into_iter()
                        .take(3)
                        .map(|(i, s)| (self.arms[i], s))
                        .collect();
                    out.push((self.arms[idx], scores));
                }
            }
        }
        Ok(out)
    }

    /// Execute one round; mutates the global model, clocks and traffic.
    fn run_round(
        &mut self,
        round: u64,
        arms: &[(ArmConfig, Vec<(ArmConfig, f64)>)],
    ) -> Result<RoundRecord> {
        let cfg = &self.cfg;
        let steps = cfg.local_steps;
        let mut events = Vec::new();
        let mut group_records = Vec::with_capacity(self.plan.num_groups());
        let mut group_deltas: Vec<AdapterDelta> = Vec::with_capacity(self.plan.num_groups());
        let mut all_device_times: Vec<f64> = vec![0.0; self.devices.len()];
        let mut round_time: f64 = 0.0;
        let mut measurements: Vec<(f64, f64, usize)> = Vec::with_capacity(self.devices.len());

        for (k, (arm, ucb_top)) in arms.iter().enumerate() {
            let group = &self.plan.groups[k];
            if group.members.is_empty() {
                log::warn!("round {round}: group {k} is empty, skipping");
                continue;
            }
            let depth = arm.depth as usize;
            let segments = segment_sizes(steps, arm.rho);

            // Every member starts the round from the global adapters.
            let mut models: Vec<LayeredAdapterModel> = group
                .members
                .iter()
                .map(|_| self.global.clone())
                .collect();
            let start_losses: Vec<f64> = group
                .members
                .iter()
                .map(|&i| self.global.loss_on(&self.devices[i].local_batch))
                .collect::<Result<Vec<_>>>()?;

            let schedules: Vec<Vec<Vec<usize>>> = group
                .members
                .iter()
                .map(|&i| {
                    let mut rng = stream(cfg.data_seed, &[tags::BATCH, i as u64, round]);
                    batch_schedule(self.devices[i].dataset.len(), cfg.batch_size, steps, &mut rng)
                })
                .collect();

            // Ground-truth times for the whole round, one draw per device.
            let times: Vec<(f64, f64)> = group
                .members
                .iter()
                .map(|&i| {
                    let mut rng = stream(cfg.noise_seed, &[tags::TIME_NOISE, i as u64, round]);
                    sample_round_times(
                        &self.devices[i].profile,
                        depth,
                        steps,
                        round,
                        self.fractions,
                        cfg.noise_sigma,
                        &mut rng,
                    )
                })
                .collect();

            let payload_up: u64 =
                group.members.len() as u64 * depth as u64 * cfg.per_layer_payload;
            let mut group_time = 0.0;
            let mut cursor = 0usize;
            let mut synced: Option<AdapterDelta> = None;
            for (s, &seg) in segments.iter().enumerate() {
                for (m, &dev_idx) in group.members.iter().enumerate() {
                    for step in cursor..cursor + seg {
                        let batch = self.devices[dev_idx]
                            .dataset
                            .batch_from_indices(&schedules[m][step], cfg.num_classes)?;
                        let loss = models[m].local_step(&batch, depth, cfg.learning_rate)?;
                        if !loss.is_finite() {
                            return Err(Error::runtime(format!(
                                "loss diverged at round {round}, group {k}, device {dev_idx}, step {step}"
                            )));
                        }
                    }
                }
                cursor += seg;

                // Intra-group aggregation in ascending member order.
                let deltas: Vec<AdapterDelta> = group
                    .members
                    .iter()
                    .enumerate()
                    .map(|(m, &dev_idx)| models[m].extract_delta(depth, round, k, dev_idx))
                    .collect::<Result<Vec<_>>>()?;
                let mean = AdapterDelta::mean(&deltas)?;
                for model in &mut models {
                    model.apply_delta(&mean)?;
                }

                let seg_fraction = seg as f64 / steps as f64;
                let max_compute = times
                    .iter()
                    .map(|&(c, _)| c * seg_fraction)
                    .fold(f64::NEG_INFINITY, f64::max);
                let max_upload = times
                    .iter()
                    .map(|&(_, u)| u)
                    .fold(f64::NEG_INFINITY, f64::max);
                let redistribution = if cfg.count_downlink { max_upload } else { 0.0 };
                group_time += max_compute + max_upload + redistribution;

                let payload = payload_up + if cfg.count_downlink { payload_up } else { 0 };
                self.traffic += payload;
                events.push(SyncEvent {
                    round,
                    group: k,
                    segment: s,
                    kind: EventKind::IntraGroupSync,
                    sim_time: self.sim_time + group_time,
                    payload_units: payload,
                });
                synced = Some(mean);
            }

            // Ungated per-device active time this round.
            let device_times: Vec<f64> = times
                .iter()
                .map(|&(c, u)| c + arm.rho as f64 * u)
                .collect();
            for (m, &dev_idx) in group.members.iter().enumerate() {
                all_device_times[dev_idx] = device_times[m];
            }
            let waiting = waiting_time(&device_times);

            let end_losses: Vec<f64> = group
                .members
                .iter()
                .enumerate()
                .map(|(m, &i)| models[m].loss_on(&self.devices[i].local_batch))
                .collect::<Result<Vec<_>>>()?;
            let mean_start = start_losses.iter().sum::<f64>() / start_losses.len() as f64;
            let mean_end = end_losses.iter().sum::<f64>() / end_losses.len() as f64;
            let loss_drop = mean_start - mean_end;
            if !loss_drop.is_finite() {
                return Err(Error::runtime(format!(
                    "loss diverged at round {round}, group {k}"
                )));
            }

            for (m, &dev_idx) in group.members.iter().enumerate() {
                let (c, u) = times[m];
                measurements.push((
                    c / (steps as f64 * self.fractions.step_weight(depth)),
                    u / depth as f64,
                    dev_idx,
                ));
            }

            round_time = round_time.max(group_time);
            group_deltas.push(synced.expect("at least one segment per round"));
            group_records.push(GroupRoundRecord {
                group: k,
                members: group.members.clone(),
                arm: *arm,
                group_time,
                waiting,
                kl: group.kl,
                utility: group.utility,
                loss_drop,
                raw_reward: 0.0,
                norm_reward: 0.0,
                ucb_top: ucb_top.clone(),
            });
        }

        // Layer-wise global aggregation: a layer averages over exactly the
        // devices whose depth covers it, in ascending device order; layers
        // nobody tuned keep the previous global adapters.
        let assignment = self.plan.assignment(self.devices.len());
        let num_layers = cfg.num_layers;
        for l in 0..num_layers {
            let mut contributions: Vec<(ndarray::Array2<f64>, ndarray::Array2<f64>)> = Vec::new();
            for dev_idx in 0..self.devices.len() {
                let k = assignment[dev_idx];
                let record_idx = group_records.iter().position(|g| g.group == k);
                let Some(record_idx) = record_idx else {
                    continue;
                };
                let delta = &group_deltas[record_idx];
                if l >= delta.start_layer {
                    let pair = &delta.pairs[l - delta.start_layer];
                    contributions.push((pair.0.clone(), pair.1.clone()));
                }
            }
            if contributions.is_empty() {
                continue;
            }
            let scale = 1.0 / contributions.len() as f64;
            let mut down = ndarray::Array2::zeros(contributions[0].0.raw_dim());
            let mut up = ndarray::Array2::zeros(contributions[0].1.raw_dim());
            for (d, u) in &contributions {
                down += d;
                up += u;
            }
            let layer_delta = AdapterDelta {
                round,
                group: 0,
                device: 0,
                start_layer: l,
                pairs: vec![(down * scale, up * scale)],
            };
            // Apply single-layer updates through a suffix-shaped delta by
            // splicing into a full extraction.
            let mut full = self.global.extract_delta(num_layers, round, 0, 0)?;
            full.pairs[l] = layer_delta.pairs.into_iter().next().expect("one pair");
            self.global.apply_delta(&full)?;
        }

        self.sim_time += round_time;
        events.push(SyncEvent {
            round,
            group: usize::MAX,
            segment: 0,
            kind: EventKind::GlobalAggregation,
            sim_time: self.sim_time,
            payload_units: 0,
        });

        // Reward bookkeeping: floor the waiting term at 1% of the median
        // device time this round.
        let mut sorted_times: Vec<f64> = all_device_times
            .iter()
            .cloned()
            .filter(|t| *t > 0.0)
            .collect();
        sorted_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if sorted_times.is_empty() {
            0.0
        } else if sorted_times.len() % 2 == 1 {
            sorted_times[sorted_times.len() / 2]
        } else {
            0.5 * (sorted_times[sorted_times.len() / 2 - 1]
                + sorted_times[sorted_times.len() / 2])
        };
        let waiting_floor = 0.01 * median;
        for rec in &mut group_records {
            let blended = self.cost_model.blended_cost(rec.arm);
            let raw = raw_utility(rec.loss_drop, blended, rec.waiting, waiting_floor)?;
            let norm = self.normalizer.normalize(raw);
            rec.raw_reward = raw;
            rec.norm_reward = norm;
            if cfg.mode == Mode::Hierfedlora {
                let arm_idx = self
                    .arms
                    .iter()
                    .position(|a| a == &rec.arm)
                    .expect("selected arm comes from the grid");
                self.bandits[rec.group].update(arm_idx, norm)?;
                self.bandits[rec.group].history.push(RewardEvent {
                    round,
                    group: rec.group,
                    arm: rec.arm,
                    loss_drop: rec.loss_drop,
                    blended_cost: blended,
                    waiting: rec.waiting,
                    raw_utility: raw,
                    normalized: norm,
                });
            }
        }

        // Monitor updates and dump rows (per-unit rates).
        let mut monitor_rows = Vec::with_capacity(measurements.len());
        measurements.sort_by_key(|&(_, _, dev)| dev);
        for (rate_c, rate_u, dev_idx) in measurements {
            self.monitor.observe(dev_idx, rate_c, rate_u)?;
            let profile = &self.devices[dev_idx].profile;
            let mult = profile.mode_multiplier(round);
            monitor_rows.push(MonitorRow {
                device: dev_idx,
                true_compute_rate: profile.base_compute * mult,
                est_compute_rate: self.monitor.estimate(dev_idx).compute().unwrap_or(f64::NAN),
                true_upload_rate: profile.base_upload * mult,
                est_upload_rate: self.monitor.estimate(dev_idx).upload().unwrap_or(f64::NAN),
            });
        }

        let (eval_loss, eval_accuracy) = evaluate(&self.global, &self.eval)?;
        if !eval_loss.is_finite() {
            return Err(Error::runtime(format!("eval loss diverged at round {round}")));
        }

        Ok(RoundRecord {
            round,
            groups: group_records,
            round_time,
            sim_time: self.sim_time,
            traffic: self.traffic,
            eval_loss,
            eval_accuracy,
            events,
            monitor: monitor_rows,
        })
    }

    /// Run all rounds. On divergence the error carries the partial records.
    pub fn run(mut self) -> std::result::Result<ExperimentOutput, (Error, Vec<RoundRecord>)> {
        let rounds = self.cfg.rounds;
        let regroup_every = self.cfg.regroup_every;
        let mut records: Vec<RoundRecord> = Vec::with_capacity(rounds as usize);
        for h in 1..=rounds {
            if h > 1 && (h - 1) % regroup_every == 0 {
                if let Err(e) = self.rebuild_plan(h) {
                    return Err((e, records));
                }
            }
            let arms = match self.select_arms() {
                Ok(a) => a,
                Err(e) => return Err((e, records)),
            };
            match self.run_round(h, &arms) {
                Ok(rec) => records.push(rec),
                Err(e) => return Err((e, records)),
            }
        }
        let summary = summarize(&self.cfg, &records, self.plan.num_groups());
        Ok(ExperimentOutput {
            records,
            summary,
            final_model: self.global,
        })
    }
}

/// Run one experiment end to end.
pub fn run_experiment(
    cfg: &ExperimentConfig,
) -> std::result::Result<ExperimentOutput, (Error, Vec<RoundRecord>)> {
    let engine = Engine::new(cfg).map_err(|e| (e, Vec::new()))?;
    engine.run()
}

fn summarize(cfg: &ExperimentConfig, records: &[RoundRecord], num_groups: usize) -> Summary {
    let last = records.last();
    let time_to_accuracy = cfg
        .accuracy_targets
        .iter()
        .map(|&target| TimeToAccuracy {
            target,
            sim_time: records
                .iter()
                .find(|r| r.eval_accuracy >= target)
                .map(|r| r.sim_time),
        })
        .collect();
    Summary {
        schema_version: crate::config::SCHEMA_VERSION,
        mode: cfg.mode.to_string(),
        rounds: records.len() as u64,
        final_accuracy: last.map_or(0.0, |r| r.eval_accuracy),
        final_loss: last.map_or(f64::NAN, |r| r.eval_loss),
        simulated_time: last.map_or(0.0, |r| r.sim_time),
        traffic_payload_units: last.map_or(0, |r| r.traffic),
        time_to_accuracy,
        num_groups_final: num_groups,
    }
}

/// First simulated time at which `records` reached `target` accuracy.
pub fn time_to_accuracy(records: &[RoundRecord], target: f64) -> Option<f64> {
    records
        .iter()
        .find(|r| r.eval_accuracy >= target)
        .map(|r| r.sim_time)
}
