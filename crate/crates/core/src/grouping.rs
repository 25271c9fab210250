//! Device grouping.
//!
//! Devices are clustered by label distribution, then groups are formed
//! greedily: each pass pulls the slowest unassigned device from every
//! cluster as candidates and admits them while the group's divergence from
//! the global mix keeps strictly falling. A hill-climbing pass of swaps and
//! moves then lowers the summed group utility, which blends normalized
//! waiting time and divergence.

use crate::datagen::LabelDistribution;
use crate::error::{Error, Result};
use crate::rng::{stream, tags};
use rand::Rng;

/// Kullback-Leibler divergence in nats.
///
/// Terms with zero mass in `a` contribute nothing; mass in `a` where `b`
/// is empty yields +infinity so such candidates sort last.
pub fn kl_divergence(a: &LabelDistribution, b: &LabelDistribution) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut total = 0.0;
    for (&pa, &pb) in a.probs().iter().zip(b.probs()) {
        if pa > 0.0 {
            if pb <= 0.0 {
                return f64::INFINITY;
            }
            total += pa * (pa / pb).ln();
        }
    }
    total
}

/// Mean gap between each member's predicted round time and the slowest
/// member's.
pub fn waiting_time(times: &[f64]) -> f64 {
    if times.is_empty() {
        return 0.0;
    }
    let slowest = times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    times.iter().map(|t| (t - slowest).abs()).sum::<f64>() / times.len() as f64
}

/// Inputs shared by all phases of plan construction; indexed by device id.
#[derive(Debug, Clone)]
pub struct GroupingInputs<'a> {
    pub distributions: &'a [LabelDistribution],
    pub sample_counts: &'a [usize],
    pub predicted_times: &'a [f64],
}

impl GroupingInputs<'_> {
    fn validate(&self) -> Result<()> {
        let n = self.distributions.len();
        if n == 0 {
            return Err(Error::config("cannot group zero devices"));
        }
        if self.sample_counts.len() != n || self.predicted_times.len() != n {
            return Err(Error::dimension("grouping input lengths differ"));
        }
        Ok(())
    }

    /// Sample-size-weighted mean distribution of a member set.
    fn group_distribution(&self, members: &[usize]) -> Result<LabelDistribution> {
        let pairs: Vec<(&LabelDistribution, f64)> = members
            .iter()
            .map(|&i| (&self.distributions[i], self.sample_counts[i] as f64))
            .collect();
        LabelDistribution::weighted_mean(&pairs)
    }
}

/// One group with its diagnostics.
#[derive(Debug, Clone)]
pub struct GroupInfo {
    pub members: Vec<usize>,
    pub distribution: LabelDistribution,
    pub kl: f64,
    pub waiting: f64,
    pub utility: f64,
}

/// A full partition of the fleet.
#[derive(Debug, Clone)]
pub struct GroupPlan {
    pub groups: Vec<GroupInfo>,
    pub lambda: f64,
}

impl GroupPlan {
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn total_utility(&self) -> f64 {
        self.groups.iter().map(|g| g.utility).sum()
    }

    pub fn mean_kl(&self) -> f64 {
        self.groups.iter().map(|g| g.kl).sum::<f64>() / self.groups.len() as f64
    }

    /// Group index of each device.
    pub fn assignment(&self, num_devices: usize) -> Vec<usize> {
        let mut assign = vec![usize::MAX; num_devices];
        for (k, g) in self.groups.iter().enumerate() {
            for &i in &g.members {
                assign[i] = k;
            }
        }
        assign
    }

    pub fn validate_partition(&self, num_devices: usize) -> Result<()> {
        let mut seen = vec![false; num_devices];
        for g in &self.groups {
            if g.members.is_empty() {
                return Err(Error::protocol("empty group in plan"));
            }
            for &i in &g.members {
                if i >= num_devices || seen[i] {
                    return Err(Error::protocol(format!("device {i} misassigned")));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::protocol("plan does not cover all devices"));
        }
        Ok(())
    }
}

/// Lloyd's k-means with k-means++ seeding over distribution vectors.
///
/// Ties (equal distances) break toward the lowest centroid / device index;
/// empty clusters steal the point farthest from its centroid.
fn kmeans(points: &[&[f64]], k: usize, iters: usize, tol: f64, rng: &mut impl Rng) -> Vec<usize> {
    let n = points.len();
    let dim = points[0].len();
    let k = k.min(n).max(1);

    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..n)].to_vec());
    while centroids.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|c| dist2(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let idx = if total <= 0.0 {
            // All points coincide with a centroid; any choice is equivalent.
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in weights.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.push(points[idx].to_vec());
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..iters {
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = dist2(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assignment[i] = best;
        }
        // Rescue empty clusters with the worst-fitting point.
        for c in 0..k {
            if !assignment.contains(&c) {
                let farthest = (0..n)
                    .max_by(|&a, &b| {
                        let da = dist2(points[a], &centroids[assignment[a]]);
                        let db = dist2(points[b], &centroids[assignment[b]]);
                        da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                    })
                    .expect("nonempty points");
                assignment[farthest] = c;
            }
        }
        let mut moved = 0.0;
        for c in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| assignment[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            let mut mean = vec![0.0; dim];
            for &i in &members {
                for (m, &v) in mean.iter_mut().zip(points[i]) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= members.len() as f64;
            }
            moved += dist2(&mean, &centroids[c]).sqrt();
            centroids[c] = mean;
        }
        if moved < tol {
            break;
        }
    }
    assignment
}

const KMEANS_ITERS: usize = 50;
const KMEANS_TOL: f64 = 1e-6;

/// Moves/swaps evaluated per device during refinement.
const REFINE_BUDGET_PER_DEVICE: usize = 10;

/// Build a plan for the fleet.
///
/// `k` is both the cluster count of the seeding phase and the target group
/// count; `lambda` weights waiting time against divergence inside the
/// utility; `phi0` is the global mean distribution the groups should
/// approximate; `seed` drives the k-means seeding only.
pub fn build_groups(
    inputs: &GroupingInputs<'_>,
    k: usize,
    lambda: f64,
    phi0: &LabelDistribution,
    seed: u64,
) -> Result<GroupPlan> {
    inputs.validate()?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config("lambda must lie in [0, 1]"));
    }
    let n = inputs.distributions.len();
    let k = if k == 0 {
        return Err(Error::config("group count must be >= 1"));
    } else if k > n {
        log::warn!("group count {k} exceeds {n} devices; clamping");
        n
    } else {
        k
    };

    // Fast path: one group holding everything.
    let mut member_sets: Vec<Vec<usize>> = if k == 1 {
        vec![(0..n).collect()]
    } else {
        greedy_groups(inputs, k, phi0, seed)?
    };

    refine(inputs, &mut member_sets, lambda, phi0, seed);

    let groups = member_sets
        .iter()
        .map(|members| group_info(inputs, members, lambda, phi0, &member_sets))
        .collect::<Result<Vec<_>>>()?;
    let plan = GroupPlan { groups, lambda };
    plan.validate_partition(n)?;
    Ok(plan)
}

/// Clustering plus greedy admission passes.
fn greedy_groups(
    inputs: &GroupingInputs<'_>,
    k: usize,
    phi0: &LabelDistribution,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let n = inputs.distributions.len();
    let points: Vec<&[f64]> = inputs.distributions.iter().map(|d| d.probs()).collect();
    let mut rng = stream(seed, &[tags::KMEANS]);
    let clusters = kmeans(&points, k, KMEANS_ITERS, KMEANS_TOL, &mut rng);

    let mut remaining: Vec<Vec<usize>> = vec![Vec::new(); k];
    for i in 0..n {
        remaining[clusters[i]].push(i);
    }

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut unassigned = n;
    while unassigned > 0 {
        let last_group = groups.len() + 1 == k;
        let mut members: Vec<usize> = Vec::new();
        let mut current_kl = f64::INFINITY;
        loop {
            // Candidate set: slowest unassigned device of each cluster.
            let candidates: Vec<usize> = remaining
                .iter()
                .filter_map(|set| {
                    set.iter()
                        .copied()
                        .max_by(|&a, &b| {
                            inputs.predicted_times[a]
                                .partial_cmp(&inputs.predicted_times[b])
                                .unwrap()
                                .then(b.cmp(&a))
                        })
                })
                .collect();
            if candidates.is_empty() {
                break;
            }
            let mut best: Option<(usize, f64)> = None;
            for &cand in &candidates {
                let mut trial = members.clone();
                trial.push(cand);
                let dist = inputs.group_distribution(&trial)?;
                let kl = kl_divergence(&dist, phi0);
                let better = match best {
                    None => true,
                    Some((b, bkl)) => kl < bkl || (kl == bkl && cand < b),
                };
                if better {
                    best = Some((cand, kl));
                }
            }
            let (chosen, kl) = best.expect("nonempty candidates");
            // Admit at least one device; afterwards only strict improvement
            // grows the group, unless it is the final group which must
            // absorb every leftover.
            if !members.is_empty() && kl >= current_kl && !last_group {
                break;
            }
            members.push(chosen);
            current_kl = kl;
            for set in &mut remaining {
                set.retain(|&i| i != chosen);
            }
            unassigned -= 1;
        }
        members.sort_unstable();
        groups.push(members);
    }
    Ok(groups)
}

/// Normalization bounds fixed over one refinement invocation.
struct Bounds {
    kl: (f64, f64),
    wait: (f64, f64),
}

impl Bounds {
    fn from_groups(inputs: &GroupingInputs<'_>, sets: &[Vec<usize>], phi0: &LabelDistribution) -> Self {
        let mut kls = Vec::with_capacity(sets.len());
        let mut waits = Vec::with_capacity(sets.len());
        for members in sets {
            let (kl, wait) = raw_terms(inputs, members, phi0);
            kls.push(kl);
            waits.push(wait);
        }
        let finite_max = |v: &[f64]| {
            v.iter()
                .cloned()
                .filter(|x| x.is_finite())
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        Self {
            kl: (min(&kls), finite_max(&kls)),
            wait: (min(&waits), finite_max(&waits)),
        }
    }

    fn norm(value: f64, (lo, hi): (f64, f64)) -> f64 {
        if !value.is_finite() {
            return 1.0;
        }
        let width = hi - lo;
        if width <= 0.0 {
            0.0
        } else {
            ((value - lo) / width).clamp(0.0, 1.0)
        }
    }

    fn utility(&self, lambda: f64, kl: f64, wait: f64) -> f64 {
        lambda * Self::norm(wait, self.wait) + (1.0 - lambda) * Self::norm(kl, self.kl)
    }
}

fn raw_terms(inputs: &GroupingInputs<'_>, members: &[usize], phi0: &LabelDistribution) -> (f64, f64) {
    let dist = inputs
        .group_distribution(members)
        .expect("nonempty member set");
    let kl = kl_divergence(&dist, phi0);
    let times: Vec<f64> = members.iter().map(|&i| inputs.predicted_times[i]).collect();
    (kl, waiting_time(&times))
}

/// First-improvement hill climbing over moves and swaps, cyclic scan,
/// bounded by a fixed evaluation budget. Moves never empty a group.
fn refine(
    inputs: &GroupingInputs<'_>,
    sets: &mut Vec<Vec<usize>>,
    lambda: f64,
    phi0: &LabelDistribution,
    seed: u64,
) {
    if sets.len() < 2 {
        return;
    }
    let n = inputs.distributions.len();
    let bounds = Bounds::from_groups(inputs, sets, phi0);
    let group_utility = |members: &[usize]| -> f64 {
        let (kl, wait) = raw_terms(inputs, members, phi0);
        bounds.utility(lambda, kl, wait)
    };
    let mut utilities: Vec<f64> = sets.iter().map(|m| group_utility(m)).collect();

    // Candidate stream: every (device, other group) move followed by every
    // cross-group ordered pair swap, scanned cyclically.
    let mut budget = REFINE_BUDGET_PER_DEVICE * n;
    let _ = seed; // candidate order is deterministic; no sampling needed
    let mut improved_in_cycle = true;
    while budget > 0 && improved_in_cycle {
        improved_in_cycle = false;
        'scan: for a in 0..sets.len() {
            for b in 0..sets.len() {
                if a == b {
                    continue;
                }
                // Moves a -> b. Accepted moves shrink `sets[a]`, so the
                // cursor stays put after an acceptance.
                let mut pos = 0;
                while pos < sets[a].len() && sets[a].len() > 1 {
                    if budget == 0 {
                        break 'scan;
                    }
                    budget -= 1;
                    let device = sets[a][pos];
                    let mut new_a = sets[a].clone();
                    new_a.retain(|&d| d != device);
                    let mut new_b = sets[b].clone();
                    new_b.push(device);
                    new_b.sort_unstable();
                    let ua = group_utility(&new_a);
                    let ub = group_utility(&new_b);
                    if ua + ub < utilities[a] + utilities[b] - 1e-12 {
                        sets[a] = new_a;
                        sets[b] = new_b;
                        utilities[a] = ua;
                        utilities[b] = ub;
                        improved_in_cycle = true;
                    } else {
                        pos += 1;
                    }
                }
                // Swaps between a and b keep both sizes fixed.
                if a < b {
                    let mut pa = 0;
                    while pa < sets[a].len() {
                        let mut pb = 0;
                        while pb < sets[b].len() {
                            if budget == 0 {
                                break 'scan;
                            }
                            budget -= 1;
                            let da = sets[a][pa];
                            let db = sets[b][pb];
                            let mut new_a = sets[a].clone();
                            let mut new_b = sets[b].clone();
                            new_a.retain(|&d| d != da);
                            new_b.retain(|&d| d != db);
                            new_a.push(db);
                            new_b.push(da);
                            new_a.sort_unstable();
                            new_b.sort_unstable();
                            let ua = group_utility(&new_a);
                            let ub = group_utility(&new_b);
                            if ua + ub < utilities[a] + utilities[b] - 1e-12 {
                                sets[a] = new_a;
                                sets[b] = new_b;
                                utilities[a] = ua;
                                utilities[b] = ub;
                                improved_in_cycle = true;
                            }
                            pb += 1;
                        }
                        pa += 1;
                    }
                }
            }
        }
    }
}

fn group_info(
    inputs: &GroupingInputs<'_>,
    members: &[usize],
    lambda: f64,
    phi0: &LabelDistribution,
    all_sets: &[Vec<usize>],
) -> Result<GroupInfo> {
    let distribution = inputs.group_distribution(members)?;
    let kl = kl_divergence(&distribution, phi0);
    let times: Vec<f64> = members.iter().map(|&i| inputs.predicted_times[i]).collect();
    let waiting = waiting_time(&times);
    let bounds = Bounds::from_groups(inputs, all_sets, phi0);
    let utility = bounds.utility(lambda, kl, waiting);
    Ok(GroupInfo {
        members: members.to_vec(),
        distribution,
        kl,
        waiting,
        utility,
    })
}

/// Uniform-random partition into `k` nonempty groups; comparison baseline.
pub fn random_groups(n: usize, k: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let k = k.min(n).max(1);
    loop {
        let mut sets: Vec<Vec<usize>> = vec![Vec::new(); k];
        for i in 0..n {
            sets[rng.gen_range(0..k)].push(i);
        }
        if sets.iter().all(|s| !s.is_empty()) {
            return sets;
        }
    }
}
