//! Trapezoidal pulse-train voltage protocols.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A train of identical unipolar trapezoidal pulses.
///
/// Pulse `n` starts at `n / repetition_rate`. Within the pulse the voltage
/// ramps linearly up over `rise_time`, holds `amplitude`, and ramps down over
/// `fall_time` so that it returns to zero at `pulse_width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseProtocol {
    /// Plateau voltage, V.
    pub amplitude: f64,
    /// Pulse duration including both ramps, s.
    pub pulse_width: f64,
    pub count: u32,
    /// Pulses per second, Hz.
    pub repetition_rate: f64,
    pub rise_time: f64,
    pub fall_time: f64,
    /// Time simulated after the end of the last pulse, s.
    #[serde(default)]
    pub post_burst_hold: f64,
}

/// Default generator slew used for ESOPE bursts, s.
pub const DEFAULT_EDGE_TIME: f64 = 1e-6;

impl PulseProtocol {
    /// Standard electrochemotherapy burst: eight 100 µs pulses at 5 kHz.
    pub fn esope(amplitude: f64) -> Self {
        Self {
            amplitude,
            pulse_width: 100e-6,
            count: 8,
            repetition_rate: 5e3,
            rise_time: DEFAULT_EDGE_TIME,
            fall_time: DEFAULT_EDGE_TIME,
            post_burst_hold: 0.0,
        }
    }

    /// ESOPE burst for a nominal field `field` (V/m) across a gap `height` (m).
    pub fn esope_for_field(field: f64, height: f64) -> Self {
        Self::esope(field * height)
    }

    pub fn with_edges(mut self, rise: f64, fall: f64) -> Self {
        self.rise_time = rise;
        self.fall_time = fall;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.amplitude.is_finite() {
            return Err(Error::Config("pulse amplitude must be finite".into()));
        }
        if self.count == 0 {
            return Ok(());
        }
        for (name, v) in [
            ("pulse_width", self.pulse_width),
            ("repetition_rate", self.repetition_rate),
            ("rise_time", self.rise_time),
            ("fall_time", self.fall_time),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.post_burst_hold >= 0.0) {
            return Err(Error::Config("post_burst_hold must be non-negative".into()));
        }
        if self.pulse_width * self.repetition_rate >= 1.0 {
            return Err(Error::Config(format!(
                "pulse width {} s does not fit in the period {} s",
                self.pulse_width,
                self.period()
            )));
        }
        if self.rise_time + self.fall_time >= self.pulse_width {
            return Err(Error::Config("rise_time + fall_time must be shorter than the pulse".into()));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        1.0 / self.repetition_rate
    }

    /// End of the simulated window: last pulse end plus the hold.
    pub fn duration(&self) -> f64 {
        if self.count == 0 {
            return self.post_burst_hold;
        }
        (self.count - 1) as f64 * self.period() + self.pulse_width + self.post_burst_hold
    }

    pub fn pulse_start(&self, n: u32) -> f64 {
        n as f64 * self.period()
    }

    /// Index of the pulse whose period contains `t`, if any.
    fn pulse_index(&self, t: f64) -> Option<(u32, f64)> {
        if self.count == 0 || t < 0.0 {
            return None;
        }
        let n = (t * self.repetition_rate).floor() as i64;
        // guard against t landing a hair below an exact period boundary
        let n = n.clamp(0, self.count as i64 - 1) as u32;
        let local = t - self.pulse_start(n);
        if local < 0.0 || local > self.pulse_width {
            // `local` may exceed the width only inside the gap
            return None;
        }
        Some((n, local))
    }

    /// Terminal voltage at time `t`.
    pub fn voltage_at(&self, t: f64) -> f64 {
        let Some((_, s)) = self.pulse_index(t) else {
            return 0.0;
        };
        let fall_start = self.pulse_width - self.fall_time;
        if s < self.rise_time {
            self.amplitude * s / self.rise_time
        } else if s <= fall_start {
            self.amplitude
        } else {
            self.amplitude * (self.pulse_width - s) / self.fall_time
        }
    }

    /// Left derivative dU/dt at `t` (the slope of the segment ending at `t`).
    pub fn slope_at(&self, t: f64) -> f64 {
        let Some((_, s)) = self.pulse_index(t) else {
            return 0.0;
        };
        let fall_start = self.pulse_width - self.fall_time;
        if s > 0.0 && s <= self.rise_time {
            self.amplitude / self.rise_time
        } else if s > fall_start && s <= self.pulse_width {
            -self.amplitude / self.fall_time
        } else {
            0.0
        }
    }

    /// Start and end instants of every ramp, sorted.
    pub fn edge_times(&self) -> Vec<f64> {
        (0..self.count)
            .flat_map(|n| {
                let t0 = self.pulse_start(n);
                [
                    t0,
                    t0 + self.rise_time,
                    t0 + self.pulse_width - self.fall_time,
                    t0 + self.pulse_width,
                ]
            })
            .collect()
    }

    /// Rising-edge completion and falling-edge start of pulse `n`: the
    /// plateau interval.
    pub fn plateau(&self, n: u32) -> (f64, f64) {
        let t0 = self.pulse_start(n);
        (t0 + self.rise_time, t0 + self.pulse_width - self.fall_time)
    }

    /// Samples the waveform every `dt` and writes a `t,U` CSV.
    pub fn write_waveform_csv(&self, path: impl AsRef<Path>, dt: f64) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "t,U")?;
        let n = (self.duration() / dt).round() as u64;
        for i in 0..=n {
            let t = i as f64 * dt;
            writeln!(w, "{:e},{:e}", t, self.voltage_at(t))?;
        }
        Ok(())
    }
}
