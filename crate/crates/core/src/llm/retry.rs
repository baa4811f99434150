use std::thread;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LlmError;

/// Exponential backoff with proportional jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub multiplier: f64,
    /// Fraction of the nominal delay added or removed at random.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay_ms: 500, multiplier: 2.0, jitter: 0.2 }
    }
}

impl RetryPolicy {
    /// A policy that never sleeps; convenient for tests.
    pub fn immediate(max_attempts: u32) -> Self {
        Self { max_attempts, base_delay_ms: 0, multiplier: 1.0, jitter: 0.0 }
    }

    /// Nominal delay before retry number `retry` (1-based), without jitter.
    pub fn nominal_delay(&self, retry: u32) -> Duration {
        let factor = self.multiplier.powi(retry.saturating_sub(1) as i32);
        Duration::from_secs_f64(self.base_delay_ms as f64 * factor / 1000.0)
    }

    fn jittered_delay(&self, retry: u32) -> Duration {
        let nominal = self.nominal_delay(retry).as_secs_f64();
        if nominal == 0.0 || self.jitter <= 0.0 {
            return Duration::from_secs_f64(nominal);
        }
        let spread = rand::rng().random_range(-self.jitter..=self.jitter);
        Duration::from_secs_f64((nominal * (1.0 + spread)).max(0.0))
    }
}

/// Runs `op` until it succeeds, fails with a non-transient error, or the
/// attempt budget is spent. Returns the outcome and the number of attempts.
pub fn with_retry<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut(u32) -> Result<T, LlmError>,
) -> (Result<T, LlmError>, u32) {
    let max = policy.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        match op(attempt) {
            Ok(v) => return (Ok(v), attempt),
            Err(e) if e.is_transient() && attempt < max => {
                tracing::debug!(attempt, error = %e, "transient backend failure, retrying");
                thread::sleep(policy.jittered_delay(attempt));
                attempt += 1;
            }
            Err(e) => return (Err(e), attempt),
        }
    }
}
