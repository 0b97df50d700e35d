//! Zero-dimensional model: the full constitutive law evaluated under the
//! uniform field `E = U / h` of an ideal parallel-plate sample.
//!
//! This path shares only parameter types with the field solver. Auxiliary
//! fields use the closed-form ramp response, pore states a Heun step and
//! temperature the trapezoidal rule, all on a uniform fine step.

use crate::electroporation::{state_derivative, PoreState};
use crate::error::{Error, Result};
use crate::material::{sigma_p_unchecked, sigma_t, EpParams, MaterialModel, VACUUM_PERMITTIVITY};
use crate::mesh::AxiGeometry;
use crate::protocol::PulseProtocol;
use crate::trace::{SimTrace, TraceSample};

/// Default step, s.
pub const ORACLE_DT: f64 = 1e-8;

/// Largest step accepted: the edge resolution of the field solver.
pub const ORACLE_DT_MAX: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct LumpedState {
    /// Auxiliary field per Debye pole, V/m.
    pub e_aux: Vec<f64>,
    pub pores: PoreState,
    /// K.
    pub temperature: f64,
}

impl LumpedState {
    pub fn at_rest(m: &MaterialModel) -> Self {
        Self {
            e_aux: vec![0.0; m.poles.len()],
            pores: PoreState::default(),
            temperature: m.t0,
        }
    }
}

fn heun(p: &PoreState, e0: f64, e1: f64, h: f64, ep: &EpParams) -> PoreState {
    let k1 = state_derivative(p, e0, ep);
    let mid = PoreState {
        p0: p.p0 + h * k1.p0,
        p1: p.p1 + h * k1.p1,
        p2: p.p2 + h * k1.p2,
    };
    let k2 = state_derivative(&mid, e1, ep);
    PoreState {
        p0: (p.p0 + 0.5 * h * (k1.p0 + k2.p0)).clamp(0.0, 1.0),
        p1: (p.p1 + 0.5 * h * (k1.p1 + k2.p1)).clamp(0.0, 1.0),
        p2: (p.p2 + 0.5 * h * (k1.p2 + k2.p2)).clamp(0.0, 1.0),
    }
}

fn conductivity(m: &MaterialModel, ep: Option<&EpParams>, p: &PoreState, temperature: f64) -> f64 {
    let sp = ep.map_or(m.sigma_s, |ep| sigma_p_unchecked(m.sigma_s, p, ep));
    sigma_t(sp, temperature, m)
}

/// Integrates the uniform-field model over `protocol`.
///
/// `ep = None` disables electroporation. With `output_dt = None` every
/// internal step is recorded; otherwise the trace is resampled. The trace
/// carries the auxiliary fields.
pub fn lumped_run(
    m: &MaterialModel,
    ep: Option<&EpParams>,
    protocol: &PulseProtocol,
    geom: &AxiGeometry,
    dt: f64,
    output_dt: Option<f64>,
) -> Result<SimTrace> {
    let trace = integrate(m, ep, protocol, geom, dt, true)?;
    Ok(match output_dt {
        Some(d) => trace.resample(d),
        None => trace,
    })
}

/// [`lumped_run`] at full step resolution without auxiliary columns.
pub fn lumped_trace(
    m: &MaterialModel,
    ep: Option<&EpParams>,
    protocol: &PulseProtocol,
    geom: &AxiGeometry,
    dt: f64,
) -> Result<SimTrace> {
    integrate(m, ep, protocol, geom, dt, false)
}

fn integrate(
    m: &MaterialModel,
    ep: Option<&EpParams>,
    protocol: &PulseProtocol,
    geom: &AxiGeometry,
    dt: f64,
    record_aux: bool,
) -> Result<SimTrace> {
    m.validate()?;
    protocol.validate()?;
    geom.validate()?;
    if !(dt > 0.0 && dt <= ORACLE_DT_MAX) {
        return Err(Error::Config(format!(
            "oracle step must lie in (0, {ORACLE_DT_MAX}] s, got {dt}"
        )));
    }
    let area = geom.sample_area();
    let height = geom.sample_height;
    let eps_inf = VACUUM_PERMITTIVITY * m.eps_inf;
    let cap = m.heat_capacity();

    let mut st = LumpedState::at_rest(m);
    let mut trace = SimTrace::new(m.t0);
    let mut aux_rows = Vec::new();
    trace.samples.push(TraceSample {
        sigma_app: conductivity(m, ep, &st.pores, st.temperature),
        temperature: st.temperature,
        ..Default::default()
    });
    aux_rows.push(st.e_aux.clone());

    let mut breaks = vec![0.0];
    breaks.extend(protocol.edge_times().into_iter().filter(|&t| t > 0.0));
    let end = protocol.duration();
    if end > *breaks.last().unwrap() {
        breaks.push(end);
    }

    let mut q_prev = 0.0;
    for seg in breaks.windows(2) {
        let (ta, tb) = (seg[0], seg[1]);
        let n = ((tb - ta) / dt - 1e-9).ceil().max(1.0) as usize;
        let h = (tb - ta) / n as f64;
        let ua = protocol.voltage_at(ta);
        let ub = protocol.voltage_at(tb);
        let slope = (ub - ua) / (tb - ta) / height;
        for k in 0..n {
            let t1 = if k + 1 == n { tb } else { ta + (k + 1) as f64 * h };
            let t0 = ta + k as f64 * h;
            let e0 = (ua + (ub - ua) * (t0 - ta) / (tb - ta)) / height;
            let e1 = (ua + (ub - ua) * (t1 - ta) / (tb - ta)) / height;
            let hh = t1 - t0;

            let mut j_disp = 0.0;
            for (aux, pole) in st.e_aux.iter_mut().zip(&m.poles) {
                let tau = pole.tau;
                let decay = (-hh / tau).exp();
                *aux = e1 - tau * slope + (*aux - e0 + tau * slope) * decay;
                j_disp += pole.conductance() * (e1 - *aux);
            }
            if let Some(ep) = ep {
                st.pores = heun(&st.pores, e0.abs(), e1.abs(), hh, ep);
            }
            let sigma = conductivity(m, ep, &st.pores, st.temperature);
            let j = sigma * e1 + eps_inf * slope + j_disp;
            let q = j * e1;
            st.temperature += 0.5 * hh * (q_prev + q) / cap;
            q_prev = q;
            if !st.temperature.is_finite() || !j.is_finite() {
                return Err(Error::Numerical(format!("non-finite state at t = {t1} s")));
            }

            trace.samples.push(TraceSample {
                t: t1,
                u: e1 * height,
                i: area * j,
                p0: st.pores.p0,
                p1: st.pores.p1,
                p2: st.pores.p2,
                sigma_app: sigma,
                temperature: st.temperature,
            });
            if record_aux {
                aux_rows.push(st.e_aux.clone());
            }
        }
    }
    if record_aux {
        trace.aux = Some(aux_rows);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> AxiGeometry {
        AxiGeometry::default()
    }

    #[test]
    fn null_stimulus_stays_at_rest() {
        let m = MaterialModel::potato_tuber();
        let p = PulseProtocol::esope(0.0);
        let tr = lumped_run(&m, m.ep.as_ref(), &p, &geom(), 2e-8, Some(1e-6)).unwrap();
        for s in &tr.samples {
            assert_eq!(s.i, 0.0);
            // the logistic targets are not exactly zero at E = 0
            assert!(s.p0 < 5e-4 && s.p1 < 5e-4 && s.p2 < 5e-4);
            assert_eq!(s.temperature, m.t0);
        }
    }

    #[test]
    fn empty_protocol_gives_single_sample() {
        let m = MaterialModel::potato_tuber();
        let mut p = PulseProtocol::esope(100.0);
        p.count = 0;
        let tr = lumped_run(&m, m.ep.as_ref(), &p, &geom(), 1e-8, None).unwrap();
        assert_eq!(tr.len(), 1);
    }

    #[test]
    fn static_slab_current() {
        let mut m = MaterialModel::potato_tuber();
        m.poles.clear();
        m.chi = 0.0;
        let p = PulseProtocol::esope(50.0);
        let tr = lumped_run(&m, None, &p, &geom(), 1e-8, None).unwrap();
        let i = tr.at(50e-6).i;
        let want = m.sigma_s * 1e4 * std::f64::consts::PI * 9.25e-3f64.powi(2);
        assert!((i - want).abs() < 1e-9, "{i} vs {want}");
        assert!((i - 58.0e-3).abs() < 0.1e-3);
    }

    #[test]
    fn dispersive_current_at_end_of_plateau() {
        let m = MaterialModel::potato_tuber();
        let p = PulseProtocol::esope(50.0);
        let tr = lumped_run(&m, None, &p, &geom(), 1e-8, None).unwrap();
        let i = tr.at(99e-6).i;
        assert!((i - 72.2e-3).abs() < 0.5e-3, "{i}");
        // multi-exponential decay after the rising edge
        let a = tr.at(3e-6).i;
        let b = tr.at(20e-6).i;
        assert!(a > b && b > i);
    }

    #[test]
    fn closed_form_aux_is_exact_for_a_single_pole() {
        let mut m = MaterialModel::potato_tuber();
        m.poles.truncate(1);
        m.poles[0].tau = 2e-6;
        let p = PulseProtocol::esope(100.0).with_edges(10e-6, 10e-6);
        let tr = lumped_run(&m, None, &p, &geom(), 1e-7, None).unwrap();
        let aux = tr.aux.as_ref().unwrap();
        // after the ramp E holds: e = E - tau s (1 - exp(-tr/tau)) exp(-(t - tr)/tau)
        let e = 100.0 / 5e-3;
        let s = e / 10e-6;
        let tau: f64 = 2e-6;
        for (row, smp) in aux.iter().zip(&tr.samples) {
            let t = smp.t;
            if t > 10e-6 && t < 90e-6 {
                let want = e - tau * s * (1.0 - (-10e-6 / tau).exp()) * (-(t - 10e-6) / tau).exp();
                assert!((row[0] - want).abs() < 1e-9 * e, "{t}");
            }
        }
    }

    #[test]
    fn step_halving_is_converged() {
        let m = MaterialModel::potato_tuber();
        let p = PulseProtocol::esope(500.0);
        let a = lumped_run(&m, m.ep.as_ref(), &p, &geom(), 2e-8, Some(1e-6)).unwrap();
        let b = lumped_run(&m, m.ep.as_ref(), &p, &geom(), 1e-8, Some(1e-6)).unwrap();
        let imax = a.samples.iter().map(|s| s.i.abs()).fold(0.0, f64::max);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((x.i - y.i).abs() <= 5e-3 * y.i.abs().max(0.1 * imax));
        }
        let (da, db) = (a.final_delta_t(), b.final_delta_t());
        assert!(((da - db) / db).abs() < 5e-3);
    }

    #[test]
    fn high_field_pulse_heating() {
        let m = MaterialModel::potato_tuber();
        let p = PulseProtocol::esope(500.0);
        let tr = lumped_run(&m, m.ep.as_ref(), &p, &geom(), 1e-8, None).unwrap();
        let last = p.pulse_start(7);
        let before = tr.at(last).temperature;
        let after = tr.at(last + 100e-6).temperature;
        assert!(tr.at(last + 50e-6).sigma_app > 0.45);
        let d = after - before;
        assert!((0.10..=0.13).contains(&d), "{d}");
    }

    #[test]
    fn rejects_coarse_steps() {
        let m = MaterialModel::potato_tuber();
        let p = PulseProtocol::esope(1.0);
        assert!(lumped_run(&m, None, &p, &geom(), 1e-6, None).is_err());
    }
}
