//! Time-domain Debye dispersion through auxiliary fields.
//!
//! Every pole `k` carries an auxiliary field `e_k` obeying
//! `tau_k de_k/dt = E - e_k` and contributes the current density
//! `(eps0 dEps_k / tau_k) (E - e_k)`. The auxiliary equation is linear with
//! constant coefficients, so a step can be integrated exactly for a given
//! shape of `E` within the step.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::material::{complex_conductivity, MaterialModel, VACUUM_PERMITTIVITY};

/// Auxiliary fields for `dofs × comps` field samples and `poles` poles.
///
/// Layout is `[dof][comp][pole]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdeState {
    poles: usize,
    comps: usize,
    values: Vec<f64>,
}

impl AdeState {
    pub fn zeros(poles: usize, dofs: usize, comps: usize) -> Self {
        Self {
            poles,
            comps,
            values: vec![0.0; poles * dofs * comps],
        }
    }

    pub fn poles(&self) -> usize {
        self.poles
    }

    pub fn comps(&self) -> usize {
        self.comps
    }

    /// Number of field samples (`dofs × comps`).
    pub fn samples(&self) -> usize {
        if self.poles == 0 {
            0
        } else {
            self.values.len() / self.poles
        }
    }

    /// Auxiliary fields of one field sample, one entry per pole.
    pub fn sample(&self, index: usize) -> &[f64] {
        &self.values[index * self.poles..(index + 1) * self.poles]
    }

    pub fn sample_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.values[index * self.poles..(index + 1) * self.poles]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn check(&self, field: &[f64], m: &MaterialModel) -> Result<()> {
        if m.poles.len() != self.poles {
            return Err(Error::Config(format!(
                "auxiliary state has {} poles, material has {}",
                self.poles,
                m.poles.len()
            )));
        }
        if field.len() != self.samples() && self.poles > 0 {
            return Err(Error::Config(format!(
                "field has {} samples, auxiliary state expects {}",
                field.len(),
                self.samples()
            )));
        }
        if let Some(bad) = field.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite field sample {bad} in auxiliary update"
            )));
        }
        Ok(())
    }

    /// Exact update for a field held constant over the step.
    pub fn step_constant(&mut self, field: &[f64], dt: f64, m: &MaterialModel) -> Result<()> {
        self.check(field, m)?;
        let decay: Vec<f64> = m.poles.iter().map(|p| (-dt / p.tau).exp()).collect();
        for (s, &e) in field.iter().enumerate() {
            for (aux, a) in self.sample_mut(s).iter_mut().zip(&decay) {
                *aux = e + (*aux - e) * a;
            }
        }
        Ok(())
    }

    /// Exact update for a field varying linearly from `prev` to `next`
    /// across the step.
    pub fn step_linear(
        &mut self,
        prev: &[f64],
        next: &[f64],
        dt: f64,
        m: &MaterialModel,
    ) -> Result<()> {
        self.check(next, m)?;
        self.check(prev, m)?;
        let coeffs = LinearStepCoefficients::new(m, dt);
        for (s, (&e0, &e1)) in prev.iter().zip(next).enumerate() {
            for (k, aux) in self.sample_mut(s).iter_mut().enumerate() {
                *aux = coeffs.advance(k, *aux, e0, e1);
            }
        }
        Ok(())
    }
}

/// Per-pole constants of the exact first-order-hold update over a step `h`:
/// `e' = a e + (1 - c) E1 + (c - a) E0` with `a = exp(-h/tau)` and
/// `c = tau (1 - a) / h`.
#[derive(Debug, Clone)]
pub struct LinearStepCoefficients {
    pub decay: Vec<f64>,
    pub lag: Vec<f64>,
    pub conductance: Vec<f64>,
}

impl LinearStepCoefficients {
    pub fn new(m: &MaterialModel, dt: f64) -> Self {
        let decay: Vec<f64> = m.poles.iter().map(|p| (-dt / p.tau).exp()).collect();
        let lag = m
            .poles
            .iter()
            .zip(&decay)
            .map(|(p, a)| {
                let x = dt / p.tau;
                // tau (1 - a) / h, with the series for tiny steps
                if x < 1e-8 {
                    1.0 - 0.5 * x
                } else {
                    -(-x).exp_m1() / x
                }
                .min(1.0)
                .max(*a)
            })
            .collect();
        let conductance = m.poles.iter().map(|p| p.conductance()).collect();
        Self {
            decay,
            lag,
            conductance,
        }
    }

    #[inline]
    pub fn advance(&self, k: usize, aux: f64, e0: f64, e1: f64) -> f64 {
        let a = self.decay[k];
        let c = self.lag[k];
        a * aux + (1.0 - c) * e1 + (c - a) * e0
    }

    /// Conductance that multiplies the end-of-step field in the summed pole
    /// current: `sum g_k c_k`.
    pub fn implicit_conductance(&self) -> f64 {
        self.conductance.iter().zip(&self.lag).map(|(g, c)| g * c).sum()
    }

    /// Part of the end-of-step pole current that depends only on the
    /// start-of-step state: `sum g_k (a_k e_k + (c_k - a_k) E0)`.
    pub fn history_current(&self, aux: &[f64], e0: f64) -> f64 {
        aux.iter()
            .enumerate()
            .map(|(k, &ek)| {
                self.conductance[k] * (self.decay[k] * ek + (self.lag[k] - self.decay[k]) * e0)
            })
            .sum()
    }
}

/// Functional form of [`AdeState::step_constant`].
pub fn ade_step(state: &AdeState, field: &[f64], dt: f64, m: &MaterialModel) -> Result<AdeState> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("time step must be positive, got {dt}")));
    }
    let mut next = state.clone();
    next.step_constant(field, dt, m)?;
    Ok(next)
}

/// Summed dispersive current density `sum_k g_k (E - e_k)` per field sample.
pub fn pole_current_density(state: &AdeState, field: &[f64], m: &MaterialModel) -> Result<Vec<f64>> {
    if m.poles.len() != state.poles {
        return Err(Error::Config(format!(
            "auxiliary state has {} poles, material has {}",
            state.poles,
            m.poles.len()
        )));
    }
    if state.poles == 0 {
        return Ok(vec![0.0; field.len()]);
    }
    if field.len() != state.samples() {
        return Err(Error::Config(format!(
            "field has {} samples, auxiliary state expects {}",
            field.len(),
            state.samples()
        )));
    }
    Ok(field
        .iter()
        .enumerate()
        .map(|(s, &e)| {
            state
                .sample(s)
                .iter()
                .zip(&m.poles)
                .map(|(ek, p)| p.conductance() * (e - ek))
                .sum()
        })
        .collect())
}

/// Outcome of a time-domain admittance measurement.
#[derive(Debug, Clone, Copy)]
pub struct AdmittanceCheck {
    pub freq: f64,
    /// Complex conductivity extracted from the time-domain response, S/m.
    pub measured: Complex64,
    /// `j w eps0 eps_r*(w)` from the frequency-domain model, S/m.
    pub expected: Complex64,
    /// `|measured - expected| / |expected|`.
    pub rel_error: f64,
    pub dt: f64,
    pub steps: u64,
}

const ADMITTANCE_MAX_STEPS: u64 = 2_000_000_000;

/// Drives the auxiliary-field system with a unit sinusoid and extracts the
/// steady-state complex conductivity by projecting the total current
/// density onto `sin` and `cos` over the last `cycles` periods.
///
/// The step is `min(tau_min / 20, period / 200)`. Enough extra periods are
/// simulated first for every pole transient to decay below 1e-7 of the
/// response.
pub fn sinusoidal_admittance_check(m: &MaterialModel, freq: f64, cycles: u32) -> Result<AdmittanceCheck> {
    if !(freq > 0.0 && freq.is_finite()) {
        return Err(Error::Domain(format!("frequency must be positive, got {freq}")));
    }
    if cycles < 10 {
        return Err(Error::Domain(format!("need at least 10 cycles, got {cycles}")));
    }
    let omega = 2.0 * std::f64::consts::PI * freq;
    let period = 1.0 / freq;
    let expected = complex_conductivity(m, omega);

    let mut dt = period / 200.0;
    if let Some(tau_min) = m.tau_min() {
        dt = dt.min(tau_min / 20.0);
    }
    let per_cycle = (period / dt).ceil() as u64;
    let dt = period / per_cycle as f64;

    let scale = expected.norm();
    let settle = m
        .poles
        .iter()
        .map(|p| {
            let x = omega * p.tau;
            let amp = p.conductance() * x / (1.0 + x * x).sqrt();
            if amp <= 1e-7 * scale {
                0.0
            } else {
                p.tau * (amp / (1e-7 * scale)).ln()
            }
        })
        .fold(0.0, f64::max);
    let settle_cycles = (settle / period).ceil() as u64;
    let total_cycles = settle_cycles + cycles as u64;
    let steps = total_cycles * per_cycle;
    if steps > ADMITTANCE_MAX_STEPS {
        return Err(Error::Numerical(format!(
            "admittance check at {freq} Hz needs {steps} steps"
        )));
    }

    let coeffs = LinearStepCoefficients::new(m, dt);
    let mut aux = vec![0.0; m.poles.len()];
    let eps_inf = VACUUM_PERMITTIVITY * m.eps_inf;
    let measure_from = settle_cycles * per_cycle;
    let half = measure_from + (cycles as u64 / 2) * per_cycle;
    let (mut s_sin, mut s_cos) = ([0.0; 2], [0.0; 2]);
    let mut e_prev = 0.0;
    for n in 1..=steps {
        let phase = omega * (n as f64 * dt);
        let (sin, cos) = phase.sin_cos();
        let e = sin;
        for (k, ek) in aux.iter_mut().enumerate() {
            *ek = coeffs.advance(k, *ek, e_prev, e);
        }
        e_prev = e;
        if n > measure_from {
            let pole_j: f64 = aux
                .iter()
                .zip(&coeffs.conductance)
                .map(|(ek, g)| g * (e - ek))
                .sum();
            let j = m.sigma_s * e + eps_inf * omega * cos + pole_j;
            let slot = usize::from(n > half);
            s_sin[slot] += j * sin;
            s_cos[slot] += j * cos;
        }
    }
    let samples = (cycles as u64 * per_cycle) as f64;
    let measured = Complex64::new(
        2.0 * (s_sin[0] + s_sin[1]) / samples,
        2.0 * (s_cos[0] + s_cos[1]) / samples,
    );
    if !(measured.re.is_finite() && measured.im.is_finite()) {
        return Err(Error::Numerical(format!("non-finite admittance at {freq} Hz")));
    }
    // Steady state: both halves of the window must give the same projection.
    let first_cycles = (cycles / 2) as f64 * per_cycle as f64;
    let second_cycles = samples - first_cycles;
    let first = Complex64::new(2.0 * s_sin[0] / first_cycles, 2.0 * s_cos[0] / first_cycles);
    let second = Complex64::new(2.0 * s_sin[1] / second_cycles, 2.0 * s_cos[1] / second_cycles);
    if (first - second).norm() > 1e-4 * measured.norm() {
        return Err(Error::Numerical(format!(
            "no steady state at {freq} Hz: window halves differ by {:.3e}",
            (first - second).norm() / measured.norm()
        )));
    }
    Ok(AdmittanceCheck {
        freq,
        measured,
        expected,
        rel_error: (measured - expected).norm() / expected.norm(),
        dt,
        steps,
    })
}

/// `n` frequencies spaced logarithmically over `[f_lo, f_hi]`, endpoints
/// included.
pub fn log_spaced(f_lo: f64, f_hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![f_lo],
        _ => {
            let (a, b) = (f_lo.ln(), f_hi.ln());
            (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::DebyePole;

    fn single_pole(tau: f64) -> MaterialModel {
        let mut m = MaterialModel::potato_tuber();
        m.poles = vec![DebyePole { delta_eps: 1e4, tau }];
        m
    }

    #[test]
    fn step_response_after_one_time_constant() {
        let m = single_pole(1e-6);
        let s = AdeState::zeros(1, 1, 1);
        let s = ade_step(&s, &[5.0], 1e-6, &m).unwrap();
        assert!((s.values()[0] - 5.0 * (1.0 - (-1.0f64).exp())).abs() < 1e-14);
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let m = MaterialModel::potato_tuber();
        let mut s = AdeState::zeros(4, 2, 1);
        for v in s.values.iter_mut() {
            *v = 3.5;
        }
        let next = ade_step(&s, &[3.5, 3.5], 0.37, &m).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn semigroup_property() {
        let m = single_pole(2e-6);
        let mut fine = AdeState::zeros(1, 1, 1);
        for _ in 0..10 {
            fine.step_constant(&[7.0], 0.2e-6, &m).unwrap();
        }
        let coarse = ade_step(&AdeState::zeros(1, 1, 1), &[7.0], 2e-6, &m).unwrap();
        assert!((fine.values()[0] - coarse.values()[0]).abs() < 1e-13);
    }

    #[test]
    fn linear_hold_is_exact_for_a_ramp() {
        // tau e' = E - e with E = s t, e(0) = 0: e(t) = s (t - tau (1 - exp(-t/tau)))
        let tau = 1e-6;
        let m = single_pole(tau);
        let slope = 1e10;
        let mut st = AdeState::zeros(1, 1, 1);
        let h = 0.3e-6;
        let mut t = 0.0;
        for _ in 0..7 {
            st.step_linear(&[slope * t], &[slope * (t + h)], h, &m).unwrap();
            t += h;
        }
        let exact = slope * (t - tau * (1.0 - (-t / tau).exp()));
        assert!((st.values()[0] - exact).abs() < 1e-9 * exact.abs());
    }

    #[test]
    fn pole_current_examples() {
        let m = MaterialModel::potato_tuber();
        let mut s = AdeState::zeros(4, 1, 1);
        s.sample_mut(0).copy_from_slice(&[1e4; 4]);
        assert_eq!(pole_current_density(&s, &[1e4], &m).unwrap(), vec![0.0]);

        let s = AdeState::zeros(4, 1, 1);
        let j = pole_current_density(&s, &[1e4], &m).unwrap()[0];
        let oracle: f64 = [
            (2.251149e6, 3.783432e-3),
            (2.917574e4, 2.309457e-5),
            (1.836403e4, 1.005246e-6),
            (1.052989e4, 1.658463e-7),
        ]
        .iter()
        .map(|(d, t)| 8.8541878128e-12 * d / t * 1e4)
        .sum();
        assert!((j - oracle).abs() < 1e-9 * oracle);
        // 7.40 kA/m², the gap between the high-frequency limit and sigma_s
        assert!((j / 1e3 - 7.40).abs() < 0.01);
    }

    #[test]
    fn single_pole_current_decays_exponentially() {
        let tau = 1e-6;
        let m = single_pole(tau);
        let g = m.poles[0].conductance();
        let mut s = AdeState::zeros(1, 1, 1);
        for n in 1..=20 {
            s.step_constant(&[1.0], 0.25e-6, &m).unwrap();
            let j = pole_current_density(&s, &[1.0], &m).unwrap()[0];
            let t = n as f64 * 0.25e-6;
            assert!((j - g * (-t / tau).exp()).abs() < 1e-12 * g);
        }
    }

    #[test]
    fn mismatched_pole_count_is_a_configuration_error() {
        let m = MaterialModel::potato_tuber();
        let s = AdeState::zeros(3, 1, 1);
        assert!(matches!(pole_current_density(&s, &[1.0], &m), Err(Error::Config(_))));
        assert!(matches!(ade_step(&s, &[1.0], 1e-6, &m), Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_field_aborts_the_step() {
        let m = MaterialModel::potato_tuber();
        let s = AdeState::zeros(4, 1, 1);
        assert!(matches!(ade_step(&s, &[f64::NAN], 1e-6, &m), Err(Error::Numerical(_))));
    }

    #[test]
    fn admittance_at_1khz_matches_frequency_domain() {
        let m = MaterialModel::potato_tuber();
        let r = sinusoidal_admittance_check(&m, 1e3, 10).unwrap();
        assert!(r.rel_error < 5e-3, "{r:?}");
    }

    #[test]
    fn admittance_at_100khz_matches_frequency_domain() {
        let m = MaterialModel::potato_tuber();
        let r = sinusoidal_admittance_check(&m, 1e5, 10).unwrap();
        assert!(r.rel_error < 5e-3, "{r:?}");
    }

    #[test]
    fn dispersionless_medium_is_conductor_plus_capacitor() {
        let mut m = MaterialModel::potato_tuber();
        m.poles.clear();
        let f = 3e4;
        let r = sinusoidal_admittance_check(&m, f, 10).unwrap();
        let w = 2.0 * std::f64::consts::PI * f;
        let want = Complex64::new(m.sigma_s, w * VACUUM_PERMITTIVITY * m.eps_inf);
        assert!((r.measured - want).norm() < 1e-6 * want.norm());
    }

    #[test]
    fn dispersive_power_is_non_negative_over_a_cycle() {
        let m = MaterialModel::potato_tuber();
        for f in [40.0, 1e3, 1e5, 1e7] {
            let w = 2.0 * std::f64::consts::PI * f;
            let per_cycle = 4000;
            let dt = 1.0 / f / per_cycle as f64;
            let coeffs = LinearStepCoefficients::new(&m, dt);
            let mut aux = vec![0.0; 4];
            let mut e_prev = 0.0;
            let mut power = 0.0;
            for n in 1..=(3 * per_cycle) {
                let e = (w * n as f64 * dt).sin();
                for (k, ek) in aux.iter_mut().enumerate() {
                    *ek = coeffs.advance(k, *ek, e_prev, e);
                }
                e_prev = e;
                if n > 2 * per_cycle {
                    let j: f64 = aux
                        .iter()
                        .zip(&coeffs.conductance)
                        .map(|(ek, g)| g * (e - ek))
                        .sum();
                    power += e * j;
                }
            }
            assert!(power >= 0.0, "{f} Hz: {power}");
        }
    }

    #[test]
    fn admittance_rejects_bad_arguments() {
        let m = MaterialModel::potato_tuber();
        assert!(sinusoidal_admittance_check(&m, 0.0, 10).is_err());
        assert!(sinusoidal_admittance_check(&m, 1e3, 9).is_err());
    }

    #[test]
    fn log_spacing_hits_endpoints() {
        let f = log_spaced(40.0, 1e7, 10);
        assert_eq!(f.len(), 10);
        assert!((f[0] - 40.0).abs() < 1e-9 && (f[9] - 1e7).abs() < 1e-3);
    }
}
