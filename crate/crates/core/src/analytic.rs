//! Closed-form scaling model for multi-instance training.
//!
//! With `n` instances in a ring, epoch time is approximated as
//!
//! ```text
//! T(n) = t1 / n + (tau + 2G / (n B)) (n - 1)
//! ```
//!
//! where `t1` is the single-instance epoch time, `tau` the pairwise latency,
//! `B` the link bandwidth and `G` the gradient volume. Rewriting,
//! `T(n) = (t1 - 2G/B) / n + tau (n - 1) + 2G/B`, which is convex in `n` when
//! `t1 >= 2G/B` and is minimised near `sqrt((t1 - 2G/B) / tau)`.

use serde::Serialize;

use crate::dnnmodel::{sync_layer_count, total_gradient_bytes, ModelDescriptor};
use crate::{Error, Result};

/// Ratio separating "much smaller" from comparable in [`classify_regime`].
pub const REGIME_FACTOR: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScalingParams {
    /// Single-instance epoch time, seconds.
    pub t1: f64,
    /// Average pairwise latency between instances, seconds.
    pub tau: f64,
    /// Bytes per second.
    pub bandwidth: f64,
    pub gradient_bytes: f64,
}

impl ScalingParams {
    pub fn new(t1: f64, tau: f64, bandwidth: f64, gradient_bytes: f64) -> Result<Self> {
        let p = ScalingParams {
            t1,
            tau,
            bandwidth,
            gradient_bytes,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t1.is_finite() && self.t1 > 0.0) {
            return Err(Error::domain(format!("t1 must be positive, got {}", self.t1)));
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::domain(format!("tau must be non-negative, got {}", self.tau)));
        }
        if self.bandwidth.is_nan() || self.bandwidth <= 0.0 {
            return Err(Error::domain(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        if !(self.gradient_bytes.is_finite() && self.gradient_bytes >= 0.0) {
            return Err(Error::domain(format!(
                "gradient volume must be non-negative, got {}",
                self.gradient_bytes
            )));
        }
        Ok(())
    }

    /// `t1 - 2G/B`: the part of `T(n)` that shrinks as `1/n`.
    pub fn divisible_time(&self) -> f64 {
        self.t1 - 2.0 * self.gradient_bytes / self.bandwidth
    }
}

/// Network overhead of `n` instances: `(tau + 2G/(nB)) (n - 1)`.
pub fn network_stall_n(p: &ScalingParams, n: u32) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let n = f64::from(n);
    (p.tau + 2.0 * p.gradient_bytes / (n * p.bandwidth)) * (n - 1.0)
}

pub fn scaling_time(p: &ScalingParams, n: u32) -> f64 {
    p.t1 / f64::from(n.max(1)) + network_stall_n(p, n)
}

/// Instance count in `1..=n_max` minimising [`scaling_time`].
///
/// Evaluates the two integers around the continuous optimum and keeps the
/// cheaper; ties go to the smaller count.
pub fn optimal_instance_count(p: &ScalingParams, n_max: u32) -> Result<u32> {
    if n_max < 1 {
        return Err(Error::domain("n_max must be at least 1"));
    }
    p.validate()?;
    let divisible = p.divisible_time();
    if divisible <= 0.0 {
        // communication already outweighs the work that parallelises
        return Ok(1);
    }
    if p.tau == 0.0 {
        log::warn!("zero latency: scaling time decreases without bound, returning n_max = {n_max}");
        return Ok(n_max);
    }
    let optimum = (divisible / p.tau).sqrt();
    let clamp = |x: f64| x.max(1.0).min(f64::from(n_max)) as u32;
    let (lo, hi) = (clamp(optimum.floor()), clamp(optimum.ceil()));
    Ok(if scaling_time(p, hi) < scaling_time(p, lo) {
        hi
    } else {
        lo
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Per-layer transfer time is much smaller than the link latency; the
    /// layer count drives communication time.
    LatencyDominated,
    /// Per-layer transfer time is much larger than the latency; the gradient
    /// volume drives communication time.
    BandwidthDominated,
    Mixed,
}

pub fn classify_regime(m: &ModelDescriptor, tau: f64, bandwidth: f64) -> Regime {
    if tau == 0.0 {
        return Regime::BandwidthDominated;
    }
    let layers = sync_layer_count(m);
    if layers == 0 {
        return Regime::LatencyDominated;
    }
    let per_layer = total_gradient_bytes(m) as f64 / (f64::from(layers) * bandwidth);
    if per_layer < tau / REGIME_FACTOR {
        Regime::LatencyDominated
    } else if per_layer > tau * REGIME_FACTOR {
        Regime::BandwidthDominated
    } else {
        Regime::Mixed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnnmodel::{make_synthetic, preset};
    use proptest::prelude::*;

    fn params(t1: f64, tau: f64, bandwidth: f64, g: f64) -> ScalingParams {
        ScalingParams::new(t1, tau, bandwidth, g).unwrap()
    }

    #[test]
    fn network_stall_examples() {
        let p = params(10.0, 4.0, 1e9, 0.0);
        assert_eq!(network_stall_n(&p, 1), 0.0);
        assert_eq!(network_stall_n(&p, 5), 16.0);
        let q = params(10.0, 0.0, 1e9, 1e9);
        assert_eq!(network_stall_n(&q, 4), 1.5);
        assert_eq!(network_stall_n(&params(10.0, 3.0, 1.0, 1e12), 1), 0.0);
    }

    #[test]
    fn scaling_time_examples() {
        let p = params(100.0, 4.0, 1e9, 0.0);
        assert_eq!(scaling_time(&p, 1), 100.0);
        assert_eq!(scaling_time(&p, 4), 37.0);
        assert_eq!(scaling_time(&p, 5), 36.0);
        assert!((scaling_time(&p, 6) - 36.666_666_666_666_664).abs() < 1e-12);
    }

    #[test]
    fn optimum_examples() {
        assert_eq!(optimal_instance_count(&params(100.0, 4.0, 1e9, 0.0), 20).unwrap(), 5);
        assert_eq!(optimal_instance_count(&params(1.0, 4.0, 1e9, 0.0), 20).unwrap(), 1);
        assert_eq!(optimal_instance_count(&params(100.0, 4.0, 1e9, 0.0), 3).unwrap(), 3);
        assert!(optimal_instance_count(&params(100.0, 4.0, 1e9, 0.0), 0).is_err());
    }

    #[test]
    fn zero_latency_returns_n_max() {
        assert_eq!(optimal_instance_count(&params(100.0, 0.0, 1e9, 1e6), 17).unwrap(), 17);
    }

    #[test]
    fn gradient_volume_shifts_the_optimum() {
        // t1 - 2G/B = 100 - 50 = 50, so the optimum is near sqrt(50) = 7.07,
        // not sqrt(100) = 10.
        let p = params(100.0, 1.0, 1e9, 25e9);
        let brute = (1..=40)
            .min_by(|&a, &b| scaling_time(&p, a).total_cmp(&scaling_time(&p, b)))
            .unwrap();
        assert_eq!(brute, 7);
        assert_eq!(optimal_instance_count(&p, 40).unwrap(), 7);
    }

    #[test]
    fn not_convex_when_transfer_outweighs_t1() {
        // 2G/B = 10 > t1 = 1: the 1/n term has a negative coefficient.
        let p = params(1.0, 0.01, 1e9, 5e9);
        let second = scaling_time(&p, 3) - 2.0 * scaling_time(&p, 2) + scaling_time(&p, 1);
        assert!(second < 0.0);
        assert_eq!(optimal_instance_count(&p, 10).unwrap(), 1);
    }

    #[test]
    fn invalid_params() {
        assert!(ScalingParams::new(0.0, 1.0, 1.0, 0.0).is_err());
        assert!(ScalingParams::new(1.0, -1.0, 1.0, 0.0).is_err());
        assert!(ScalingParams::new(1.0, 1.0, 0.0, 0.0).is_err());
        assert!(ScalingParams::new(1.0, 1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn regime_examples() {
        let res = preset("resnet152").unwrap();
        // per-layer 234e6 / (152 * 12.5e9) = 1.23e-4 s, just above tau / 10
        assert_eq!(classify_regime(&res, 1e-3, 12.5e9), Regime::Mixed);
        assert_eq!(classify_regime(&res, 2e-3, 12.5e9), Regime::LatencyDominated);
        assert_eq!(classify_regime(&res, 0.0, 12.5e9), Regime::BandwidthDominated);
        assert_eq!(classify_regime(&res, 1e-6, 1.25e9), Regime::BandwidthDominated);
        let empty = make_synthetic(4, 0, 1e-3).unwrap();
        assert_eq!(classify_regime(&empty, 1e-3, 1e9), Regime::LatencyDominated);
    }

    proptest! {
        #[test]
        fn network_stall_nondecreasing(
            tau in 1e-6f64..10.0, b in 1e6f64..1e12, g in 0.0f64..1e10, n in 1u32..200
        ) {
            let p = params(1.0, tau, b, g);
            prop_assert!(network_stall_n(&p, n + 1) >= network_stall_n(&p, n));
        }

        #[test]
        fn latency_eventually_dominates(
            t1 in 1.0f64..1e4, tau in 1e-3f64..10.0, b in 1e8f64..1e12, g in 0.0f64..1e9
        ) {
            let p = params(t1, tau, b, g);
            let n = 1_000_000u32;
            let ratio = scaling_time(&p, n) / (f64::from(n) * tau);
            prop_assert!((ratio - 1.0).abs() < 0.05);
        }

        #[test]
        fn optimum_is_scale_free_without_gradients(
            t1 in 1e-2f64..1e5, tau in 1e-4f64..100.0, c in 1e-3f64..1e3, n_max in 1u32..100
        ) {
            let a = optimal_instance_count(&params(t1, tau, 1e9, 0.0), n_max).unwrap();
            let b = optimal_instance_count(&params(t1 * c, tau * c, 1e9, 0.0), n_max).unwrap();
            // Scaling can only flip an exact tie at the half-integer boundary.
            if a != b {
                let p = params(t1, tau, 1e9, 0.0);
                let (fa, fb) = (scaling_time(&p, a), scaling_time(&p, b));
                prop_assert!((fa - fb).abs() <= 1e-12 * fa.abs());
            }
        }
    }
}
