//! Per-group arm selection over (aggregation frequency, depth) pairs.
//!
//! Each group runs a discounted UCB bandit restricted to arms that fit its
//! compute and communication budgets. Rewards divide a round's loss drop by
//! its resource cost and waiting time, squashed into [0, 1] by a running
//! min-max normalizer shared across groups. With discount 1 the policy is
//! classical UCB1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One arm: intra-group aggregation frequency and fine-tuning depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArmConfig {
    pub rho: u32,
    pub depth: u32,
}

impl std::fmt::Display for ArmConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.rho, self.depth)
    }
}

/// Full grid from a frequency list and a layer count: depths at quarter
/// points of the stack, rounded, deduplicated.
pub fn default_arm_grid(rho_grid: &[u32], num_layers: usize) -> Vec<ArmConfig> {
    let mut depths: Vec<u32> = [0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|f| ((num_layers as f64 * f).round() as u32).clamp(1, num_layers as u32))
        .collect();
    depths.dedup();
    arm_grid(rho_grid, &depths)
}

pub fn arm_grid(rho_grid: &[u32], depth_grid: &[u32]) -> Vec<ArmConfig> {
    let mut arms = Vec::new();
    for &rho in rho_grid {
        for &depth in depth_grid {
            arms.push(ArmConfig { rho, depth });
        }
    }
    arms
}

/// Resource model: forward cost, per-layer backward cost, per-layer payload,
/// and the budgets arms must satisfy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    /// Compute cost of a full forward pass.
    pub forward_cost: f64,
    /// Compute cost of backward work for one layer's adapters.
    pub per_layer_backward: f64,
    /// Payload units for one layer's adapters.
    pub per_layer_payload: u64,
    /// Compute budget per round.
    pub compute_budget: f64,
    /// Communication budget per round.
    pub comm_budget: f64,
    /// Weight of compute vs communication in the blended cost.
    pub mixing: f64,
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if self.forward_cost <= 0.0
            || self.per_layer_backward <= 0.0
            || self.per_layer_payload == 0
            || self.compute_budget <= 0.0
            || self.comm_budget <= 0.0
        {
            return Err(Error::config("cost model entries must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mixing) {
            return Err(Error::config("mixing weight must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Compute cost of one step at the given depth: forward + d·backward.
    pub fn compute_cost(&self, depth: u32) -> f64 {
        self.forward_cost + depth as f64 * self.per_layer_backward
    }

    /// Communication cost of one round: rho·d·payload.
    pub fn comm_cost(&self, arm: ArmConfig) -> u64 {
        arm.rho as u64 * arm.depth as u64 * self.per_layer_payload
    }

    pub fn is_feasible(&self, arm: ArmConfig) -> bool {
        self.compute_cost(arm.depth) <= self.compute_budget
            && self.comm_cost(arm) as f64 <= self.comm_budget
    }

    /// Blended resource cost used in the reward denominator.
    pub fn blended_cost(&self, arm: ArmConfig) -> f64 {
        self.mixing * self.compute_cost(arm.depth)
            + (1.0 - self.mixing) * self.comm_cost(arm) as f64
    }
}

/// Indices of arms within budget. When nothing fits, falls back to the
/// single cheapest arm (lowest frequency, then lowest depth) and says so.
pub fn feasible_arms(arms: &[ArmConfig], cost_model: &CostModel) -> (Vec<usize>, bool) {
    let feasible: Vec<usize> = arms
        .iter()
        .enumerate()
        .filter(|(_, a)| cost_model.is_feasible(**a))
        .map(|(i, _)| i)
        .collect();
    if !feasible.is_empty() {
        return (feasible, false);
    }
    let cheapest = arms
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.rho.cmp(&b.rho).then(a.depth.cmp(&b.depth)))
        .map(|(i, _)| i)
        .expect("arm grid is nonempty");
    log::warn!("no arm satisfies the budgets; falling back to {}", arms[cheapest]);
    (vec![cheapest], true)
}

/// A recorded reward observation, kept for diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardEvent {
    pub round: u64,
    pub group: usize,
    pub arm: ArmConfig,
    pub loss_drop: f64,
    pub blended_cost: f64,
    pub waiting: f64,
    pub raw_utility: f64,
    pub normalized: f64,
}

/// Discounted pull counts and reward sums for one group's arms.
///
/// Every update multiplies all counts and sums by the discount, then adds an
/// undiscounted 1 / reward to the chosen arm, so with discount 1 the counts
/// are raw pull counts and the averages are plain empirical means.
#[derive(Debug, Clone)]
pub struct BanditState {
    counts: Vec<f64>,
    reward_sums: Vec<f64>,
    raw_pulls: Vec<u64>,
    pub discount: f64,
    pub history: Vec<RewardEvent>,
}

impl BanditState {
    pub fn new(num_arms: usize, discount: f64) -> Result<Self> {
        if num_arms == 0 {
            return Err(Error::config("bandit needs at least one arm"));
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(Error::config("discount must lie in (0, 1]"));
        }
        Ok(Self {
            counts: vec![0.0; num_arms],
            reward_sums: vec![0.0; num_arms],
            raw_pulls: vec![0; num_arms],
            discount,
            history: Vec::new(),
        })
    }

    pub fn num_arms(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, arm: usize) -> f64 {
        self.counts[arm]
    }

    pub fn raw_pulls(&self, arm: usize) -> u64 {
        self.raw_pulls[arm]
    }

    /// Sum of discounted counts over all arms.
    pub fn total_count(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn mean_reward(&self, arm: usize) -> Option<f64> {
        if self.counts[arm] > 0.0 {
            Some(self.reward_sums[arm] / self.counts[arm])
        } else {
            None
        }
    }

    /// Upper confidence bound of one arm; unpulled arms score +infinity.
    pub fn ucb(&self, arm: usize) -> f64 {
        let n = self.counts[arm];
        if n <= 0.0 {
            return f64::INFINITY;
        }
        let total = self.total_count();
        let exploration = (2.0 * total.ln() / n).max(0.0).sqrt();
        self.reward_sums[arm] / n + exploration
    }

    /// Scores of the given arms, highest first; ties keep lower arm index
    /// first.
    pub fn ucb_scores(&self, feasible: &[usize]) -> Vec<(usize, f64)> {
        let mut scores: Vec<(usize, f64)> = feasible.iter().map(|&i| (i, self.ucb(i))).collect();
        scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scores
    }

    /// Highest-UCB feasible arm; ties break toward the lowest arm index.
    pub fn select(&self, feasible: &[usize]) -> Result<usize> {
        if feasible.is_empty() {
            return Err(Error::config("cannot select from an empty feasible set"));
        }
        let mut best = feasible[0];
        let mut best_score = self.ucb(best);
        for &arm in &feasible[1..] {
            let score = self.ucb(arm);
            if score > best_score || (score == best_score && arm < best) {
                best = arm;
                best_score = score;
            }
        }
        Ok(best)
    }

    /// Discount everything, then credit the chosen arm.
    pub fn update(&mut self, arm: usize, reward: f64) -> Result<()> {
        if arm >= self.counts.len() {
            return Err(Error::protocol(format!("arm {arm} out of range")));
        }
        if !reward.is_finite() {
            return Err(Error::protocol("reward must be finite"));
        }
        for c in &mut self.counts {
            *c *= self.discount;
        }
        for s in &mut self.reward_sums {
            *s *= self.discount;
        }
        self.counts[arm] += 1.0;
        self.reward_sums[arm] += reward;
        self.raw_pulls[arm] += 1;
        Ok(())
    }
}

/// Min-max squash of raw utilities into [0, 1], shared across groups.
///
/// The window bounds decay toward each new value, so the normalizer tracks
/// the current reward scale instead of letting one early outlier flatten
/// everything that follows. Negative utilities clamp to zero before
/// entering the window, so a round that increases the loss scores 0.
#[derive(Debug, Clone)]
pub struct RewardNormalizer {
    min: Option<f64>,
    max: Option<f64>,
    window_decay: f64,
}

impl Default for RewardNormalizer {
    fn default() -> Self {
        Self {
            min: None,
            max: None,
            window_decay: 0.9,
        }
    }
}

impl RewardNormalizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn normalize(&mut self, raw: f64) -> f64 {
        let clamped = raw.max(0.0);
        let d = self.window_decay;
        let min = self
            .min
            .map_or(clamped, |m| (d * m + (1.0 - d) * clamped).min(clamped));
        let max = self
            .max
            .map_or(clamped, |m| (d * m + (1.0 - d) * clamped).max(clamped));
        self.min = Some(min);
        self.max = Some(max);
        let width = max - min;
        if width <= 0.0 {
            // No spread observed yet; the midpoint keeps early rewards
            // uninformative instead of spuriously extreme.
            0.5
        } else {
            ((clamped - min) / width).clamp(0.0, 1.0)
        }
    }
}

/// Raw utility of a round: loss drop per unit blended cost and waiting
/// time. `waiting_floor` guards the division for perfectly even groups.
pub fn raw_utility(loss_drop: f64, blended_cost: f64, waiting: f64, waiting_floor: f64) -> Result<f64> {
    if !loss_drop.is_finite() || !blended_cost.is_finite() || !waiting.is_finite() {
        return Err(Error::protocol("reward inputs must be finite"));
    }
    if blended_cost <= 0.0 {
        return Err(Error::protocol("blended cost must be positive"));
    }
    if waiting < 0.0 {
        return Err(Error::protocol("waiting time cannot be negative"));
    }
    let floor = if waiting_floor > 0.0 { waiting_floor } else { f64::MIN_POSITIVE };
    Ok(loss_drop / (blended_cost * waiting.max(floor)))
}

/// Cumulative regret of a chosen-arm sequence against per-arm expected
/// rewards (synthetic-bandit diagnostics).
pub fn cumulative_regret(chosen: &[usize], expected: &[f64]) -> Vec<f64> {
    let best = expected.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::with_capacity(chosen.len());
    let mut acc = 0.0;
    for &arm in chosen {
        acc += best - expected[arm];
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, tags};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn grid_2x2() -> Vec<ArmConfig> {
        arm_grid(&[1, 2], &[1, 2])
    }

    fn cost_model(compute_budget: f64, comm_budget: f64) -> CostModel {
        CostModel {
            forward_cost: 10.0,
            per_layer_backward: 2.0,
            per_layer_payload: 3,
            compute_budget,
            comm_budget,
            mixing: 0.5,
        }
    }

    #[test]
    fn cost_arithmetic_matches_closed_forms() {
        let cm = cost_model(100.0, 100.0);
        assert_eq!(cm.compute_cost(6), 22.0);
        let arm = ArmConfig { rho: 5, depth: 4 };
        assert_eq!(cm.comm_cost(arm), 60);
        assert!(cm.is_feasible(arm));
        let tight = cost_model(100.0, 59.0);
        assert!(!tight.is_feasible(arm));
        let tight_compute = cost_model(21.9, 100.0);
        assert!(!tight_compute.is_feasible(ArmConfig { rho: 1, depth: 6 }));
    }

    #[test]
    fn tight_budgets_leave_only_the_cheapest_arm() {
        // forward 10 + 1 layer * 2 = 12 compute; 1 * 1 * 3 = 3 payload.
        let cm = cost_model(12.0, 3.0);
        let arms = grid_2x2();
        let (feasible, fallback) = feasible_arms(&arms, &cm);
        assert!(!fallback);
        assert_eq!(feasible, vec![0]);
        assert_eq!(arms[0], ArmConfig { rho: 1, depth: 1 });
    }

    #[test]
    fn empty_feasible_set_falls_back_to_cheapest() {
        let cm = cost_model(1.0, 1.0);
        let arms = grid_2x2();
        let (feasible, fallback) = feasible_arms(&arms, &cm);
        assert!(fallback);
        assert_eq!(feasible, vec![0]);
    }

    #[test]
    fn cold_start_selects_lowest_index() {
        let state = BanditState::new(4, 1.0).unwrap();
        let all: Vec<usize> = (0..4).collect();
        assert_eq!(state.select(&all).unwrap(), 0);
    }

    #[test]
    fn unpulled_arm_beats_any_pulled_arm() {
        let mut state = BanditState::new(2, 1.0).unwrap();
        state.update(0, 1.0).unwrap();
        assert_eq!(state.select(&[0, 1]).unwrap(), 1);
    }

    #[test]
    fn every_arm_pulled_once_before_any_twice() {
        let mut state = BanditState::new(5, 0.9).unwrap();
        let all: Vec<usize> = (0..5).collect();
        let mut seen = vec![0u32; 5];
        for _ in 0..5 {
            let arm = state.select(&all).unwrap();
            assert_eq!(seen[arm], 0, "arm {arm} repeated during cold start");
            seen[arm] += 1;
            state.update(arm, 0.7).unwrap();
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn undiscounted_mean_is_plain_average() {
        let mut state = BanditState::new(2, 1.0).unwrap();
        let rewards = [0.3, 0.9, 0.6, 0.0, 1.0];
        for &r in &rewards {
            state.update(0, r).unwrap();
        }
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        assert_eq!(state.mean_reward(0).unwrap(), mean);
        assert_eq!(state.count(0), rewards.len() as f64);
    }

    #[test]
    fn discounted_mean_matches_two_step_recursion() {
        let mut state = BanditState::new(1, 0.5).unwrap();
        state.update(0, 1.0).unwrap();
        state.update(0, 0.0).unwrap();
        // counts: 0.5*1 + 1 = 1.5; sums: 0.5*1 + 0 = 0.5.
        assert_relative_eq!(state.mean_reward(0).unwrap(), 1.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn total_count_is_sum_of_arm_counts() {
        let mut state = BanditState::new(3, 0.8).unwrap();
        for (arm, r) in [(0, 0.5), (1, 0.2), (0, 0.9), (2, 0.1), (1, 0.4)] {
            state.update(arm, r).unwrap();
            let total: f64 = (0..3).map(|a| state.count(a)).sum();
            assert_relative_eq!(state.total_count(), total, max_relative = 1e-12);
        }
    }

    /// Reference UCB1, written independently of BanditState: plain pull
    /// counts, empirical means, sqrt(2 ln t / n) bonus, lowest index on
    /// ties and during cold start.
    struct RefUcb1 {
        counts: Vec<u64>,
        sums: Vec<f64>,
    }

    impl RefUcb1 {
        fn new(arms: usize) -> Self {
            Self {
                counts: vec![0; arms],
                sums: vec![0.0; arms],
            }
        }

        fn select(&self) -> usize {
            if let Some(idx) = self.counts.iter().position(|&c| c == 0) {
                return idx;
            }
            let t: u64 = self.counts.iter().sum();
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for i in 0..self.counts.len() {
                let n = self.counts[i] as f64;
                let score = self.sums[i] / n + (2.0 * (t as f64).ln() / n).sqrt();
                if score > best_score {
                    best = i;
                    best_score = score;
                }
            }
            best
        }

        fn update(&mut self, arm: usize, reward: f64) {
            self.counts[arm] += 1;
            self.sums[arm] += reward;
        }
    }

    #[test]
    fn undiscounted_policy_tracks_reference_ucb1_exactly() {
        for seed in 0..10u64 {
            let mut rng = stream(seed, &[tags::PROFILE]);
            let arms = 4;
            let steps = 500;
            // Recorded reward table: reward of arm a at step s.
            let table: Vec<Vec<f64>> = (0..steps)
                .map(|_| (0..arms).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect();
            let mut ours = BanditState::new(arms, 1.0).unwrap();
            let mut reference = RefUcb1::new(arms);
            let all: Vec<usize> = (0..arms).collect();
            for row in &table {
                let a = ours.select(&all).unwrap();
                let b = reference.select();
                assert_eq!(a, b, "policies diverged at seed {seed}");
                ours.update(a, row[a]).unwrap();
                reference.update(b, row[b]);
            }
        }
    }

    #[test]
    fn good_arm_dominates_after_exploration() {
        let mut state = BanditState::new(2, 1.0).unwrap();
        let all = vec![0usize, 1];
        for _ in 0..200 {
            let arm = state.select(&all).unwrap();
            let reward = if arm == 0 { 0.9 } else { 0.1 };
            state.update(arm, reward).unwrap();
        }
        assert!(
            state.raw_pulls(0) >= 150,
            "good arm pulled only {} times",
            state.raw_pulls(0)
        );
    }

    #[test]
    fn bernoulli_regret_is_small_at_long_horizon() {
        let expected = [0.9, 0.1];
        let mut rates = Vec::new();
        for seed in 0..20u64 {
            let mut rng = stream(seed, &[tags::TIME_NOISE]);
            let mut state = BanditState::new(2, 1.0).unwrap();
            let all = vec![0usize, 1];
            let mut chosen = Vec::with_capacity(500);
            for _ in 0..500 {
                let arm = state.select(&all).unwrap();
                let reward = if rng.gen::<f64>() < expected[arm] { 1.0 } else { 0.0 };
                state.update(arm, reward).unwrap();
                chosen.push(arm);
            }
            let regret = cumulative_regret(&chosen, &expected);
            rates.push(regret[499] / 500.0);
        }
        let mean: f64 = rates.iter().sum::<f64>() / rates.len() as f64;
        assert!(mean < 0.08, "mean regret rate {mean}");
    }

    #[test]
    fn regret_of_oracle_play_is_zero_and_series_monotone() {
        let expected = [0.4, 0.7, 0.2];
        let oracle = vec![1usize; 50];
        let series = cumulative_regret(&oracle, &expected);
        assert!(series.iter().all(|&r| r == 0.0));

        let mixed = vec![0, 1, 2, 1, 0];
        let series = cumulative_regret(&mixed, &expected);
        for w in series.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn negative_loss_drop_normalizes_to_zero() {
        let mut norm = RewardNormalizer::new();
        norm.normalize(2.0);
        norm.normalize(0.5);
        let raw = raw_utility(-0.3, 1.0, 1.0, 0.01).unwrap();
        assert!(raw < 0.0);
        assert_eq!(norm.normalize(raw), 0.0);
    }

    #[test]
    fn normalized_rewards_stay_in_unit_interval() {
        let mut norm = RewardNormalizer::new();
        let mut rng = stream(4, &[tags::TIME_NOISE]);
        for _ in 0..500 {
            let raw = rng.gen_range(-5.0..50.0);
            let v = norm.normalize(raw);
            assert!((0.0..=1.0).contains(&v), "normalized {v} out of range");
        }
    }

    #[test]
    fn waiting_floor_guards_division() {
        let u = raw_utility(1.0, 2.0, 0.0, 0.25).unwrap();
        assert_relative_eq!(u, 1.0 / (2.0 * 0.25), max_relative = 1e-12);
        assert!(raw_utility(f64::NAN, 1.0, 0.0, 0.1).is_err());
        assert!(raw_utility(1.0, 1.0, f64::INFINITY, 0.1).is_err());
    }

    #[test]
    fn default_grid_covers_quarter_depths() {
        let arms = default_arm_grid(&[1, 2, 5, 10], 4);
        assert_eq!(arms.len(), 16);
        assert!(arms.contains(&ArmConfig { rho: 10, depth: 1 }));
        assert!(arms.contains(&ArmConfig { rho: 1, depth: 4 }));
        // Small stacks deduplicate collapsed depths.
        let arms = default_arm_grid(&[1], 2);
        let depths: Vec<u32> = arms.iter().map(|a| a.depth).collect();
        assert_eq!(depths, vec![1, 2]);
    }
}
