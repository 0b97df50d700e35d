//! Simulated versus measured current traces.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::protocol::PulseProtocol;
use crate::trace::{MeasuredTrace, SimTrace};

/// Time after the end of each rising ramp during which the dispersive
/// transient dominates the current, s.
pub const DISPERSIVE_SETTLE: f64 = 5e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlateauRow {
    pub pulse: u32,
    /// Mean currents over the settled plateau, A.
    pub simulated: f64,
    pub measured: f64,
    pub rel_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    /// `||I_sim - I_meas|| / ||I_meas||` over the overlap.
    pub rel_l2: f64,
    pub max_abs: f64,
    pub samples: usize,
    /// `(t, I_sim - I_meas)` at the measured instants inside the overlap.
    pub residuals: Vec<[f64; 2]>,
    pub plateaus: Vec<PlateauRow>,
}

/// Settled plateau window of pulse `n`.
pub fn settled_plateau(protocol: &PulseProtocol, n: u32) -> (f64, f64) {
    let (a, b) = protocol.plateau(n);
    ((a + DISPERSIVE_SETTLE).min(b), b)
}

/// Evaluates `sim` at the measured instants that fall inside both traces.
pub fn compare(sim: &SimTrace, meas: &MeasuredTrace, protocol: Option<&PulseProtocol>) -> Result<CompareReport> {
    meas.validate()?;
    if sim.is_empty() || meas.is_empty() {
        return Err(Error::Config("cannot compare an empty trace".into()));
    }
    let lo = sim.samples[0].t.max(meas.t[0]);
    let hi = sim.end_time().min(*meas.t.last().unwrap());
    let idx: Vec<usize> = (0..meas.len()).filter(|&k| meas.t[k] >= lo && meas.t[k] <= hi).collect();
    if hi < lo || idx.is_empty() {
        return Err(Error::Config(format!(
            "time ranges do not overlap: simulation [{}, {}] s, measurement [{}, {}] s",
            sim.samples[0].t,
            sim.end_time(),
            meas.t[0],
            meas.t.last().unwrap()
        )));
    }
    let mut residuals = Vec::with_capacity(idx.len());
    let (mut num, mut den, mut max_abs) = (0.0, 0.0, 0.0f64);
    for &k in &idx {
        let d = sim.at(meas.t[k]).i - meas.i[k];
        num += d * d;
        den += meas.i[k] * meas.i[k];
        max_abs = max_abs.max(d.abs());
        residuals.push([meas.t[k], d]);
    }
    let rel_l2 = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };

    let mut plateaus = Vec::new();
    if let Some(p) = protocol {
        for n in 0..p.count {
            let (a, b) = settled_plateau(p, n);
            let inside: Vec<usize> = idx.iter().copied().filter(|&k| meas.t[k] >= a && meas.t[k] <= b).collect();
            if inside.is_empty() {
                continue;
            }
            let count = inside.len() as f64;
            let measured = inside.iter().map(|&k| meas.i[k]).sum::<f64>() / count;
            let simulated = inside.iter().map(|&k| sim.at(meas.t[k]).i).sum::<f64>() / count;
            plateaus.push(PlateauRow {
                pulse: n + 1,
                simulated,
                measured,
                rel_diff: if measured != 0.0 { (simulated - measured) / measured } else { 0.0 },
            });
        }
    }
    Ok(CompareReport {
        rel_l2,
        max_abs,
        samples: idx.len(),
        residuals,
        plateaus,
    })
}

/// Time after the start of each ramp excluded from pointwise checks, s.
pub const EDGE_EXCLUSION: f64 = 1e-6;

/// Worst pointwise current mismatch between two simulations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Discrepancy {
    /// Relative error where the reference carries at least a tenth of its
    /// peak current, and error relative to the peak elsewhere.
    pub max_rel: f64,
    pub at: f64,
    pub samples: usize,
}

/// Compares `test` at its own sample instants against `reference`
/// (interpolated), skipping the first [`EDGE_EXCLUSION`] of every ramp.
pub fn pointwise_discrepancy(test: &SimTrace, reference: &SimTrace, protocol: &PulseProtocol) -> Discrepancy {
    let peak = reference.samples.iter().map(|s| s.i.abs()).fold(0.0, f64::max);
    let ramp_starts: Vec<f64> = (0..protocol.count)
        .flat_map(|n| {
            let t0 = protocol.pulse_start(n);
            [t0, t0 + protocol.pulse_width - protocol.fall_time]
        })
        .collect();
    let mut d = Discrepancy {
        max_rel: 0.0,
        at: 0.0,
        samples: 0,
    };
    for s in &test.samples {
        if ramp_starts.iter().any(|&a| s.t >= a && s.t <= a + EDGE_EXCLUSION) {
            continue;
        }
        let r = reference.at(s.t).i;
        let err = if peak == 0.0 {
            (s.i - r).abs()
        } else if r.abs() >= 0.1 * peak {
            (s.i - r).abs() / r.abs()
        } else {
            (s.i - r).abs() / peak
        };
        d.samples += 1;
        if err > d.max_rel {
            d.max_rel = err;
            d.at = s.t;
        }
    }
    d
}
