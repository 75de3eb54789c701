//! Calibrated synthetic crackling generator.
//!
//! Produces a stick-slip fluctuation signal: `f` rises linearly during stick
//! phases and loses a stochastically sampled amplitude at drop instants. Drop
//! amplitudes follow three regimes matching the observed event statistics: a
//! structureless noise plateau at low amplitude, a scale-invariant power-law
//! regime, and an exponential cutoff for the rare largest events.

use super::EventSeries;
use crate::error::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Smallest generated drop amplitude; also the natural anchor for the
/// class-1 threshold on calibrated streams.
pub const AMPLITUDE_FLOOR: f64 = 0.01;

/// Below this amplitude the sampling density is flat (structureless noise
/// events); above it the density follows the configured power law.
pub const NOISE_ROLLOVER: f64 = 9.0 * AMPLITUDE_FLOOR;

pub const GENERATOR_SCHEMA_VERSION: u32 = 1;

fn default_schema_version() -> u32 {
    GENERATOR_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    /// Exponent of the scale-invariant regime (density ∝ Δ^exponent).
    pub power_law_exponent: f64,
    /// Scale of the exponential cutoff multiplying the density.
    pub cutoff_amplitude: f64,
    /// Desired fraction of steps with no drop.
    pub zero_fraction_target: f64,
    /// Slope of f during stick phases.
    pub loading_rate: f64,
    pub rng_seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            schema_version: GENERATOR_SCHEMA_VERSION,
            power_law_exponent: -1.3,
            cutoff_amplitude: 10.0,
            zero_fraction_target: 0.937,
            loading_rate: 0.065,
            rng_seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != GENERATOR_SCHEMA_VERSION {
            return Err(Error::config(format!(
                "generator schema_version {} unsupported (expected {GENERATOR_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let fields = [
            ("power_law_exponent", self.power_law_exponent),
            ("cutoff_amplitude", self.cutoff_amplitude),
            ("zero_fraction_target", self.zero_fraction_target),
            ("loading_rate", self.loading_rate),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite, got {v}")));
            }
        }
        if self.power_law_exponent >= 0.0 {
            return Err(Error::config("power_law_exponent must be negative"));
        }
        if !(self.cutoff_amplitude > 0.0) {
            return Err(Error::config("cutoff_amplitude must be positive"));
        }
        if !(self.zero_fraction_target > 0.0 && self.zero_fraction_target < 1.0) {
            return Err(Error::config("zero_fraction_target must be in (0,1)"));
        }
        if !(self.loading_rate > 0.0) {
            return Err(Error::config("loading_rate must be positive"));
        }
        Ok(())
    }

    /// Unnormalized sampling density of drop amplitudes. Exposed so that
    /// reported statistics can be checked against the law they came from.
    pub fn amplitude_density(&self, delta: f64) -> f64 {
        if delta < AMPLITUDE_FLOOR {
            return 0.0;
        }
        let base = if delta < NOISE_ROLLOVER {
            NOISE_ROLLOVER.powf(self.power_law_exponent)
        } else {
            delta.powf(self.power_law_exponent)
        };
        base * (-delta / self.cutoff_amplitude).exp()
    }
}

/// Generates a calibrated stick-slip event series of `length` steps.
/// Deterministic for a fixed seed.
pub fn synthesize(config: &GeneratorConfig, length: usize) -> Result<EventSeries> {
    config.validate()?;
    if length < 1000 {
        return Err(Error::config(format!("length {length} below minimum 1000")));
    }

    let nonzero_target = 1.0 - config.zero_fraction_target;
    // A stick step always follows a drop, so the stationary drop fraction p
    // relates to the per-stick-step trigger probability q by p = q/(1+q).
    let trigger_p = nonzero_target / (1.0 - nonzero_target);

    let mut rng = ChaCha12Rng::seed_from_u64(config.rng_seed);
    let mut f = Vec::with_capacity(length);
    let mut delta_f = vec![0.0f64; length];
    f.push(0.0);
    let mut prev_was_drop = false;
    for t in 1..length {
        let trigger = !prev_was_drop && rng.random::<f64>() < trigger_p;
        if trigger {
            let amp = sample_amplitude(&mut rng, config);
            f.push(f[t - 1] - amp);
            delta_f[t] = amp;
            prev_was_drop = true;
        } else {
            f.push(f[t - 1] + config.loading_rate);
            prev_was_drop = false;
        }
    }
    EventSeries::new(f, delta_f)
}

/// Rejection sampling of the three-regime amplitude law.
fn sample_amplitude(rng: &mut ChaCha12Rng, config: &GeneratorConfig) -> f64 {
    let alpha = config.power_law_exponent;
    let gamma = config.cutoff_amplitude;
    if alpha < -1.0 {
        // proposal: pure power law on [floor, inf); dominates both regimes
        loop {
            let u: f64 = (1.0 - rng.random::<f64>()).max(f64::MIN_POSITIVE);
            let x = AMPLITUDE_FLOOR * u.powf(1.0 / (alpha + 1.0));
            let accept = if x < NOISE_ROLLOVER {
                (x / NOISE_ROLLOVER).powf(-alpha) * (-x / gamma).exp()
            } else {
                (-x / gamma).exp()
            };
            if rng.random::<f64>() < accept {
                return x;
            }
        }
    } else {
        // shallow exponents: proposal is the shifted exponential, with the
        // flat plateau level as the envelope constant
        loop {
            let u: f64 = (1.0 - rng.random::<f64>()).max(f64::MIN_POSITIVE);
            let x = AMPLITUDE_FLOOR - gamma * u.ln();
            let accept = if x < NOISE_ROLLOVER { 1.0 } else { (x / NOISE_ROLLOVER).powf(alpha) };
            if rng.random::<f64>() < accept {
                return x;
            }
        }
    }
}
