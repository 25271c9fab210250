//! Device capacity tracking.
//!
//! Each simulated device has hidden ground truth (per-step compute rate,
//! per-layer upload rate, a mode schedule that rescales both every few
//! rounds) which the engine samples to produce measurements. The
//! coordinator side only ever sees [`CapacityEstimate`] values smoothed by
//! an exponential moving average; grouping and scheduling read estimates,
//! never the truth.

use rand::Rng;
use rand_distr::{Distribution, LogNormal};

use crate::datagen::LabelDistribution;
use crate::error::{Error, Result};
use crate::rng::{stream, tags};

/// Ground truth for one simulated device. Hidden from the scheduler.
#[derive(Debug, Clone)]
pub struct DeviceProfile {
    pub device_id: usize,
    /// Per-step compute rate at depth weight 1 (simulated seconds).
    pub base_compute: f64,
    /// Upload seconds per layer of adapter payload.
    pub base_upload: f64,
    /// Piecewise-constant capability multipliers over rounds.
    pub mode_multipliers: Vec<f64>,
    /// Rounds between mode changes.
    pub mode_interval: u64,
    pub label_distribution: LabelDistribution,
}

impl DeviceProfile {
    pub fn mode_multiplier(&self, round: u64) -> f64 {
        if self.mode_multipliers.is_empty() {
            return 1.0;
        }
        let epoch = (round / self.mode_interval.max(1)) as usize;
        self.mode_multipliers[epoch % self.mode_multipliers.len()]
    }
}

/// How a step's compute cost splits between the full forward pass and the
/// per-layer backward work.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostFractions {
    pub forward: f64,
    pub backprop_per_layer: f64,
}

impl CostFractions {
    pub fn step_weight(&self, depth: usize) -> f64 {
        self.forward + depth as f64 * self.backprop_per_layer
    }
}

/// Draw one round's ground-truth (compute, upload-per-sync) times.
///
/// Compute covers all `steps`; upload is the cost of sending one sync's
/// `depth` adapter layers. Noise is lognormal with mean 1, so sigma 0 is
/// exactly deterministic.
pub fn sample_round_times(
    profile: &DeviceProfile,
    depth: usize,
    steps: usize,
    round: u64,
    fractions: CostFractions,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> (f64, f64) {
    assert!(depth >= 1, "depth must be >= 1");
    let mult = profile.mode_multiplier(round);
    let (noise_c, noise_u) = if noise_sigma > 0.0 {
        let ln = LogNormal::new(-0.5 * noise_sigma * noise_sigma, noise_sigma)
            .expect("valid lognormal");
        (ln.sample(rng), ln.sample(rng))
    } else {
        (1.0, 1.0)
    };
    let compute =
        steps as f64 * profile.base_compute * mult * fractions.step_weight(depth) * noise_c;
    let upload = depth as f64 * profile.base_upload * mult * noise_u;
    (compute, upload)
}

/// EMA-smoothed view of one device's capacity, in per-unit rates
/// (compute seconds per weighted step, upload seconds per layer).
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityEstimate {
    compute: Option<f64>,
    upload: Option<f64>,
    pub alpha: f64,
}

impl CapacityEstimate {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config("alpha must lie in [0, 1]"));
        }
        Ok(Self {
            compute: None,
            upload: None,
            alpha,
        })
    }

    /// Fold in one round's measurements. The first observation initializes
    /// the estimate; afterwards new = alpha * old + (1 - alpha) * measured.
    pub fn observe(&mut self, measured_compute: f64, measured_upload: f64) -> Result<()> {
        if measured_compute <= 0.0
            || measured_upload <= 0.0
            || !measured_compute.is_finite()
            || !measured_upload.is_finite()
        {
            return Err(Error::protocol(format!(
                "measurements must be positive and finite, got ({measured_compute}, {measured_upload})"
            )));
        }
        self.compute = Some(match self.compute {
            None => measured_compute,
            Some(prev) => self.alpha * prev + (1.0 - self.alpha) * measured_compute,
        });
        self.upload = Some(match self.upload {
            None => measured_upload,
            Some(prev) => self.alpha * prev + (1.0 - self.alpha) * measured_upload,
        });
        Ok(())
    }

    pub fn compute(&self) -> Option<f64> {
        self.compute
    }

    pub fn upload(&self) -> Option<f64> {
        self.upload
    }

    pub fn is_initialized(&self) -> bool {
        self.compute.is_some() && self.upload.is_some()
    }
}

/// Predicted round time (compute + all uploads) for a device under a given
/// (frequency, depth) configuration.
pub fn predicted_round_time(
    estimate: &CapacityEstimate,
    rho: u32,
    depth: usize,
    steps: usize,
    fractions: CostFractions,
) -> Option<f64> {
    let compute = estimate.compute()?;
    let upload = estimate.upload()?;
    Some(
        steps as f64 * fractions.step_weight(depth) * compute
            + rho as f64 * depth as f64 * upload,
    )
}

/// Capacity estimates for a fleet, keyed by device index.
#[derive(Debug, Clone)]
pub struct Monitor {
    estimates: Vec<CapacityEstimate>,
}

impl Monitor {
    pub fn new(num_devices: usize, alpha: f64) -> Result<Self> {
        let proto = CapacityEstimate::new(alpha)?;
        Ok(Self {
            estimates: vec![proto; num_devices],
        })
    }

    pub fn observe(
        &mut self,
        device: usize,
        measured_compute: f64,
        measured_upload: f64,
    ) -> Result<()> {
        self.estimates
            .get_mut(device)
            .ok_or_else(|| Error::protocol(format!("unknown device {device}")))?
            .observe(measured_compute, measured_upload)
    }

    pub fn estimate(&self, device: usize) -> &CapacityEstimate {
        &self.estimates[device]
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }
}

/// Knobs for synthesizing a heterogeneous fleet.
#[derive(Debug, Clone, Copy)]
pub struct ProfileParams {
    pub compute_range: (f64, f64),
    pub upload_range: (f64, f64),
    pub mode_range: (f64, f64),
    pub mode_interval: u64,
}

impl Default for ProfileParams {
    fn default() -> Self {
        Self {
            compute_range: (0.5, 5.0),
            upload_range: (0.02, 0.2),
            mode_range: (0.5, 2.0),
            mode_interval: 20,
        }
    }
}

fn log_uniform(range: (f64, f64), rng: &mut impl Rng) -> f64 {
    let (lo, hi) = range;
    if (hi - lo).abs() < f64::EPSILON {
        return lo;
    }
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

/// Synthesize device ground truth: log-uniform base rates plus a per-device
/// mode schedule long enough to cover `rounds`.
pub fn generate_profiles(
    distributions: &[LabelDistribution],
    params: &ProfileParams,
    rounds: u64,
    seed: u64,
) -> Vec<DeviceProfile> {
    let epochs = (rounds / params.mode_interval.max(1) + 2) as usize;
    distributions
        .iter()
        .enumerate()
        .map(|(device, dist)| {
            let mut rng = stream(seed, &[tags::PROFILE, device as u64]);
            let base_compute = log_uniform(params.compute_range, &mut rng);
            let base_upload = log_uniform(params.upload_range, &mut rng);
            let mode_multipliers = (0..epochs)
                .map(|_| log_uniform(params.mode_range, &mut rng))
                .collect();
            DeviceProfile {
                device_id: device,
                base_compute,
                base_upload,
                mode_multipliers,
                mode_interval: params.mode_interval,
                label_distribution: dist.clone(),
            }
        })
        .collect()
}
