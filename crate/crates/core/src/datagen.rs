//! Synthetic classification data and skew-controlled device partitioning.
//!
//! The task is a Gaussian mixture: one unit-norm mean per class, shared
//! isotropic covariance. Devices draw their label mix from a Dirichlet
//! whose concentration is the inverse of the configured non-IID level, so
//! level 0 is exactly IID and level 10 is close to one class per device.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::rng::{stream, tags};

/// Categorical distribution over class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    probs: Vec<f64>,
}

impl LabelDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::config("label distribution cannot be empty"));
        }
        if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::config("label probabilities must lie in [0, 1]"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "label probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self {
            probs: vec![1.0 / num_classes as f64; num_classes],
        }
    }

    /// Exact empirical frequencies of integer counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::config("cannot derive a distribution from zero samples"));
        }
        Ok(Self {
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Weighted mean of several distributions; weights need not normalize.
    pub fn weighted_mean(dists: &[(&LabelDistribution, f64)]) -> Result<Self> {
        let first = dists
            .first()
            .ok_or_else(|| Error::config("cannot average zero distributions"))?;
        let len = first.0.len();
        let total: f64 = dists.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return Err(Error::config("distribution weights must sum to > 0"));
        }
        let mut probs = vec![0.0; len];
        for (d, w) in dists {
            if d.len() != len {
                return Err(Error::dimension("distribution lengths differ"));
            }
            for (acc, &p) in probs.iter_mut().zip(d.probs()) {
                *acc += w * p;
            }
        }
        for p in &mut probs {
            *p /= total;
        }
        Ok(Self { probs })
    }
}

/// How to split synthetic data across devices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub num_devices: usize,
    pub num_classes: usize,
    /// Non-IID level p; 0 means IID, otherwise Dirichlet concentration 1/p.
    pub non_iid_level: f64,
    pub samples_per_device: usize,
    pub seed: u64,
}

impl PartitionSpec {
    fn validate(&self) -> Result<()> {
        if self.num_devices == 0 {
            return Err(Error::config("num_devices must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be >= 2"));
        }
        if self.non_iid_level < 0.0 || !self.non_iid_level.is_finite() {
            return Err(Error::config("non_iid_level must be finite and >= 0"));
        }
        if self.samples_per_device == 0 {
            return Err(Error::config("samples_per_device must be >= 1"));
        }
        Ok(())
    }
}

/// Gaussian-mixture generator with one unit-norm mean per class.
#[derive(Debug, Clone)]
pub struct ClassTask {
    means: Array2<f64>,
    noise_sigma: f64,
}

impl ClassTask {
    pub fn new(
        num_classes: usize,
        input_dim: usize,
        noise_sigma: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::config("num_classes must be >= 2"));
        }
        if input_dim == 0 {
            return Err(Error::config("input_dim must be >= 1"));
        }
        if noise_sigma < 0.0 {
            return Err(Error::config("noise_sigma must be >= 0"));
        }
        let mut means = Array2::<f64>::zeros((num_classes, input_dim));
        for mut row in means.rows_mut() {
            loop {
                for v in row.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let norm = row.dot(&row).sqrt();
                if norm > 1e-9 {
                    row.mapv_inplace(|v| v / norm);
                    break;
                }
            }
        }
        // Unit-norm draws in dim >= 2 are pairwise distinct almost surely;
        // fail loudly rather than silently producing an unlearnable task.
        for a in 0..num_classes {
            for b in (a + 1)..num_classes {
                let diff = &means.row(a) - &means.row(b);
                if diff.dot(&diff).sqrt() < 1e-6 {
                    return Err(Error::config("class means collided; use another seed"));
                }
            }
        }
        Ok(Self { means, noise_sigma })
    }

    pub fn num_classes(&self) -> usize {
        self.means.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn sample_features(&self, class: usize, rng: &mut impl Rng) -> Array1<f64> {
        let mut x = self.means.row(class).to_owned();
        for v in x.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v += self.noise_sigma * n;
        }
        x
    }

    /// Dataset with exactly `counts[c]` samples of each class, shuffled.
    pub fn sample_by_counts(&self, counts: &[usize], rng: &mut impl Rng) -> Result<DeviceDataset> {
        if counts.len() != self.num_classes() {
            return Err(Error::dimension("counts length must equal num_classes"));
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::config("dataset must contain at least one sample"));
        }
        let mut labels = Vec::with_capacity(total);
        for (class, &c) in counts.iter().enumerate() {
            labels.extend(std::iter::repeat(class).take(c));
        }
        // Fisher-Yates so batches mix classes.
        for i in (1..labels.len()).rev() {
            let j = rng.gen_range(0..=i);
            labels.swap(i, j);
        }
        let mut features = Array2::zeros((total, self.input_dim()));
        for (mut row, &y) in features.rows_mut().into_iter().zip(&labels) {
            row.assign(&self.sample_features(y, rng));
        }
        Ok(DeviceDataset { features, labels })
    }

    /// Dataset whose labels are independent draws from `prior`.
    pub fn sample_with_prior(
        &self,
        prior: &LabelDistribution,
        count: usize,
        rng: &mut impl Rng,
    ) -> Result<DeviceDataset> {
        if prior.len() != self.num_classes() {
            return Err(Error::dimension("prior length must equal num_classes"));
        }
        if count == 0 {
            return Err(Error::config("dataset must contain at least one sample"));
        }
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = prior.len() - 1;
            for (c, &p) in prior.probs().iter().enumerate() {
                acc += p;
                if u < acc {
                    chosen = c;
                    break;
                }
            }
            labels.push(chosen);
        }
        let mut features = Array2::zeros((count, self.input_dim()));
        for (mut row, &y) in features.rows_mut().into_iter().zip(&labels) {
            row.assign(&self.sample_features(y, rng));
        }
        Ok(DeviceDataset { features, labels })
    }

    /// Class-balanced evaluation set (largest-remainder split of `count`).
    pub fn balanced_eval(&self, count: usize, rng: &mut impl Rng) -> Result<DeviceDataset> {
        let uniform = vec![1.0 / self.num_classes() as f64; self.num_classes()];
        let counts = largest_remainder(&uniform, count);
        self.sample_by_counts(&counts, rng)
    }
}

/// One device's local samples.
#[derive(Debug, Clone)]
pub struct DeviceDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl DeviceDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0usize; num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn empirical_distribution(&self, num_classes: usize) -> Result<LabelDistribution> {
        LabelDistribution::from_counts(&self.label_counts(num_classes))
    }

    /// View the whole dataset as a single batch.
    pub fn as_batch(&self, num_classes: usize) -> Result<Batch> {
        Batch::new(self.features.clone(), self.labels.clone(), num_classes)
    }

    /// Batch assembled from the given sample indices.
    pub fn batch_from_indices(&self, indices: &[usize], num_classes: usize) -> Result<Batch> {
        let mut features = Array2::zeros((indices.len(), self.features.ncols()));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &idx) in indices.iter().enumerate() {
            features.row_mut(row).assign(&self.features.row(idx));
            labels.push(self.labels[idx]);
        }
        Batch::new(features, labels, num_classes)
    }
}

/// Allocate `total` integer slots proportionally to `proportions`, assigning
/// leftovers to the largest fractional remainders (ties to the lowest index).
pub fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = proportions.iter().sum();
    let scaled: Vec<f64> = proportions
        .iter()
        .map(|&p| p / sum * total as f64)
        .collect();
    let mut counts: Vec<usize> = scaled.iter().map(|&s| s.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in 0..(total - assigned) {
        counts[order[i % order.len()]] += 1;
    }
    counts
}

/// Dirichlet proportions computed in log space.
///
/// Tiny concentrations (level 10 with many classes means alpha of 0.01)
/// underflow the usual gamma-normalize route to 0/0; sampling
/// log Gamma(alpha) via Gamma(alpha + 1) and log U / alpha stays finite.
pub fn dirichlet_proportions(alphas: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
    if alphas.iter().any(|&a| a <= 0.0 || !a.is_finite()) {
        return Err(Error::config("dirichlet concentrations must be positive"));
    }
    let mut logs = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let boosted = Gamma::new(alpha + 1.0, 1.0)
            .map_err(|e| Error::config(format!("gamma setup failed: {e}")))?;
        let g: f64 = boosted.sample(rng);
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        logs.push(g.ln() + u.ln() / alpha);
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut props: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = props.iter().sum();
    for p in &mut props {
        *p /= sum;
    }
    Ok(props)
}

/// Partition synthetic data across devices with Dirichlet label skew.
///
/// Returns each device's dataset together with its exact empirical label
/// distribution. Level 0 bypasses the Dirichlet and realizes the uniform
/// prior up to integer rounding.
pub fn partition(
    task: &ClassTask,
    spec: &PartitionSpec,
) -> Result<Vec<(DeviceDataset, LabelDistribution)>> {
    spec.validate()?;
    if task.num_classes() != spec.num_classes {
        return Err(Error::dimension("task and spec class counts differ"));
    }
    if spec.samples_per_device < spec.num_classes {
        log::warn!(
            "samples_per_device {} < num_classes {}: some classes round to zero",
            spec.samples_per_device,
            spec.num_classes
        );
    }
    let uniform = vec![1.0 / spec.num_classes as f64; spec.num_classes];
    let mut out = Vec::with_capacity(spec.num_devices);
    for device in 0..spec.num_devices {
        let mut dev_rng = stream(spec.seed, &[tags::PARTITION, device as u64]);
        let proportions = if spec.non_iid_level == 0.0 {
            uniform.clone()
        } else {
            let delta = 1.0 / spec.non_iid_level;
            let alphas: Vec<f64> = uniform.iter().map(|&q| delta * q).collect();
            dirichlet_proportions(&alphas, &mut dev_rng)?
        };
        let counts = largest_remainder(&proportions, spec.samples_per_device);
        let mut sample_rng = stream(spec.seed, &[tags::SHUFFLE, device as u64]);
        let dataset = task.sample_by_counts(&counts, &mut sample_rng)?;
        let dist = LabelDistribution::from_counts(&counts)?;
        out.push((dataset, dist));
    }
    Ok(out)
}
