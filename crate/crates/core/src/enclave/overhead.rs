use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Emulated cost of crossing the boundary: a fixed part per call plus a part
/// per KiB of sealed input.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OverheadModel {
    pub per_call_ms: f64,
    pub per_kb_ms: f64,
}

impl OverheadModel {
    pub const NONE: Self = Self {
        per_call_ms: 0.0,
        per_kb_ms: 0.0,
    };

    pub fn new(per_call_ms: f64, per_kb_ms: f64) -> Result<Self, String> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if ok(per_call_ms) && ok(per_kb_ms) {
            Ok(Self { per_call_ms, per_kb_ms })
        } else {
            Err(format!("overhead must be finite and >= 0, got ({per_call_ms}, {per_kb_ms})"))
        }
    }

    pub fn is_none(&self) -> bool {
        self.per_call_ms == 0.0 && self.per_kb_ms == 0.0
    }

    pub fn cost(&self, bytes: usize) -> Duration {
        let ms = self.per_call_ms + self.per_kb_ms * bytes as f64 / 1024.0;
        Duration::from_secs_f64(ms / 1000.0)
    }

    pub fn disclosure(&self) -> String {
        format!(
            "emulated boundary overhead: per_call_ms={} per_kb_ms={}",
            self.per_call_ms, self.per_kb_ms
        )
    }
}

/// Waits for `d` with sub-millisecond precision: sleeps through most of it,
/// then spins.
pub fn precise_delay(d: Duration) {
    if d.is_zero() {
        return;
    }
    let deadline = Instant::now() + d;
    let slack = Duration::from_millis(2);
    if d > slack {
        std::thread::sleep(d - slack);
    }
    while Instant::now() < deadline {
        std::hint::spin_loop();
    }
}
