//! Simulation and measurement time series, with CSV I/O.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of a simulation trace. Pore states, apparent conductivity and
/// temperature are sampled at the sample centre.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    /// Time, s.
    pub t: f64,
    /// Terminal voltage, V.
    #[serde(rename = "U")]
    pub u: f64,
    /// Terminal current, A.
    #[serde(rename = "I")]
    pub i: f64,
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    /// Apparent conductivity, S/m.
    pub sigma_app: f64,
    /// Temperature, K.
    #[serde(rename = "T")]
    pub temperature: f64,
}

impl TraceSample {
    fn lerp(&self, other: &Self, w: f64) -> Self {
        let l = |a: f64, b: f64| a + (b - a) * w;
        Self {
            t: l(self.t, other.t),
            u: l(self.u, other.u),
            i: l(self.i, other.i),
            p0: l(self.p0, other.p0),
            p1: l(self.p1, other.p1),
            p2: l(self.p2, other.p2),
            sigma_app: l(self.sigma_app, other.sigma_app),
            temperature: l(self.temperature, other.temperature),
        }
    }
}

/// Time series produced by a simulation run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimTrace {
    pub samples: Vec<TraceSample>,
    /// Reference temperature, K.
    pub t0: f64,
    /// Optional centre auxiliary fields (axial component), one row per
    /// sample and one column per Debye pole.
    pub aux: Option<Vec<Vec<f64>>>,
}

impl SimTrace {
    pub fn new(t0: f64) -> Self {
        Self {
            samples: Vec::new(),
            t0,
            aux: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn currents(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.i).collect()
    }

    pub fn end_time(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    /// Temperature rise at the last sample, K.
    pub fn final_delta_t(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.temperature - self.t0)
    }

    pub fn max_sigma_app(&self) -> f64 {
        self.samples.iter().map(|s| s.sigma_app).fold(0.0, f64::max)
    }

    /// Linear interpolation at `t`, clamped to the trace ends.
    pub fn at(&self, t: f64) -> TraceSample {
        let s = &self.samples;
        match s.len() {
            0 => TraceSample::default(),
            1 => s[0],
            _ => {
                if t <= s[0].t {
                    return s[0];
                }
                if t >= s[s.len() - 1].t {
                    return s[s.len() - 1];
                }
                let k = s.partition_point(|x| x.t <= t);
                let (a, b) = (&s[k - 1], &s[k]);
                let w = if b.t > a.t { (t - a.t) / (b.t - a.t) } else { 0.0 };
                a.lerp(b, w)
            }
        }
    }

    /// Resamples onto the uniform grid `0, dt, 2dt, ...` up to the last
    /// sample (which is always included).
    pub fn resample(&self, dt: f64) -> SimTrace {
        let mut out = SimTrace::new(self.t0);
        if self.samples.is_empty() || !(dt > 0.0) {
            return out;
        }
        let start = self.samples[0].t;
        let end = self.end_time();
        let n = ((end - start) / dt + 1e-9).floor() as usize;
        for k in 0..=n {
            out.samples.push(self.at(start + k as f64 * dt));
        }
        if end - out.end_time() > 1e-9 * dt {
            out.samples.push(self.samples[self.samples.len() - 1]);
        }
        if let Some(aux) = &self.aux {
            let ts = self.times();
            let cols = aux.first().map_or(0, Vec::len);
            let columns: Vec<Vec<f64>> =
                (0..cols).map(|c| aux.iter().map(|row| row[c]).collect()).collect();
            out.aux = Some(
                out.samples
                    .iter()
                    .map(|s| columns.iter().map(|col| interp(&ts, col, s.t)).collect())
                    .collect(),
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for s in &self.samples {
            w.serialize(s)?;
        }
        if self.samples.is_empty() {
            w.write_record(["t", "U", "I", "p0", "p1", "p2", "sigma_app", "T"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, t0: f64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let samples = r.deserialize().collect::<std::result::Result<Vec<TraceSample>, _>>()?;
        Ok(Self {
            samples,
            t0,
            aux: None,
        })
    }

    /// Centre pore states: `t,p0,p1,p2`.
    pub fn write_states_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "p0", "p1", "p2"])?;
        for s in &self.samples {
            w.write_record([s.t, s.p0, s.p1, s.p2].map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Centre temperature: `t,T,dT`.
    pub fn write_temperature_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "T", "dT"])?;
        for s in &self.samples {
            w.write_record([s.t, s.temperature, s.temperature - self.t0].map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Centre auxiliary fields: `t,e1,...,eN`. Fails when the run did not
    /// record them.
    pub fn write_aux_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let aux = self
            .aux
            .as_ref()
            .ok_or_else(|| Error::Config("trace has no auxiliary-field columns".into()))?;
        let poles = aux.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=poles).map(|k| format!("e{k}")));
        w.write_record(&header)?;
        for (s, row) in self.samples.iter().zip(aux) {
            let mut rec = vec![s.t.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Free-form provenance of a measured trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub sample_id: String,
    /// Sample temperature during the measurement, K.
    pub temperature: Option<f64>,
}

/// An averaged oscilloscope recording: voltage and current against time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasuredTrace {
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    pub i: Vec<f64>,
    pub meta: TraceMeta,
}

#[derive(Debug, Serialize, Deserialize)]
struct MeasuredRow {
    t: f64,
    #[serde(rename = "U")]
    u: f64,
    #[serde(rename = "I")]
    i: f64,
}

impl MeasuredTrace {
    pub fn new(t: Vec<f64>, u: Vec<f64>, i: Vec<f64>, meta: TraceMeta) -> Result<Self> {
        let tr = Self { t, u, i, meta };
        tr.validate()?;
        Ok(tr)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t.len() != self.u.len() || self.t.len() != self.i.len() {
            return Err(Error::Config("measured trace columns differ in length".into()));
        }
        if let Some(k) = self.t.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Config(format!(
                "measured trace time is not strictly increasing at row {}",
                k + 2
            )));
        }
        Ok(())
    }

    /// Copies the time, voltage and current columns of a simulation.
    pub fn from_sim(sim: &SimTrace, sample_id: &str) -> Self {
        Self {
            t: sim.samples.iter().map(|s| s.t).collect(),
            u: sim.samples.iter().map(|s| s.u).collect(),
            i: sim.samples.iter().map(|s| s.i).collect(),
            meta: TraceMeta {
                sample_id: sample_id.to_string(),
                temperature: Some(sim.t0),
            },
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Reads a `t,U,I` CSV in SI units.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let mut tr = MeasuredTrace {
            meta: TraceMeta {
                sample_id: path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                temperature: None,
            },
            ..Default::default()
        };
        for row in r.deserialize() {
            let row: MeasuredRow = row?;
            tr.t.push(row.t);
            tr.u.push(row.u);
            tr.i.push(row.i);
        }
        tr.validate()?;
        Ok(tr)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for k in 0..self.t.len() {
            w.serialize(MeasuredRow {
                t: self.t[k],
                u: self.u[k],
                i: self.i[k],
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Piecewise-linear interpolation of `(xs, ys)` at `x`, clamped at the ends.
/// `xs` must be sorted.
pub fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => ys[0],
        n => {
            if x <= xs[0] {
                return ys[0];
            }
            if x >= xs[n - 1] {
                return ys[n - 1];
            }
            let k = xs.partition_point(|v| *v <= x);
            let (x0, x1) = (xs[k - 1], xs[k]);
            let w = (x - x0) / (x1 - x0);
            ys[k - 1] + (ys[k] - ys[k - 1]) * w
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_trace() -> SimTrace {
        let mut tr = SimTrace::new(293.15);
        for k in 0..=10 {
            let t = k as f64 * 0.3;
            tr.samples.push(TraceSample {
                t,
                u: 2.0 * t,
                i: -t,
                temperature: 293.15 + t,
                ..Default::default()
            });
        }
        tr
    }

    #[test]
    fn resampling_is_exact_for_linear_data() {
        let r = ramp_trace().resample(0.25);
        assert_eq!(r.samples[0].t, 0.0);
        assert!((r.end_time() - 3.0).abs() < 1e-12);
        for s in &r.samples {
            assert!((s.u - 2.0 * s.t).abs() < 1e-12);
            assert!((s.i + s.t).abs() < 1e-12);
        }
        assert!((r.final_delta_t() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let tr = ramp_trace();
        tr.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t,U,I,p0,p1,p2,sigma_app,T\n"));
        assert_eq!(SimTrace::read_csv(&p, 293.15).unwrap(), tr);

        let m = MeasuredTrace::from_sim(&tr, "x");
        let q = dir.path().join("m.csv");
        m.write_csv(&q).unwrap();
        assert!(std::fs::read_to_string(&q).unwrap().starts_with("t,U,I\n"));
        let back = MeasuredTrace::read_csv(&q).unwrap();
        assert_eq!(back.i, m.i);
    }

    #[test]
    fn measured_trace_requires_increasing_time() {
        let bad = MeasuredTrace::new(vec![0.0, 1.0, 1.0], vec![0.0; 3], vec![0.0; 3], TraceMeta::default());
        assert!(bad.is_err());
        let bad = MeasuredTrace::new(vec![0.0, 1.0], vec![0.0; 3], vec![0.0; 2], TraceMeta::default());
        assert!(bad.is_err());
    }

    #[test]
    fn interp_clamps() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [0.0, 10.0, 0.0];
        assert_eq!(interp(&xs, &ys, -1.0), 0.0);
        assert_eq!(interp(&xs, &ys, 0.5), 5.0);
        assert_eq!(interp(&xs, &ys, 1.5), 5.0);
        assert_eq!(interp(&xs, &ys, 3.0), 0.0);
    }
}
