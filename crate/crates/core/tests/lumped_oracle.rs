use epsim_core::fit::nelder_mead;
use epsim_core::{lumped_trace, AxiGeometry, MaterialModel, PulseProtocol};

/// Least-squares amplitudes of `columns` against `y` by modified
/// Gram-Schmidt; returns the residual norm.
fn projection_residual(columns: &[Vec<f64>], y: &[f64]) -> f64 {
    let mut q: Vec<Vec<f64>> = Vec::new();
    for c in columns {
        let mut v = c.clone();
        for u in &q {
            let d: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(x, a)| *x -= d * a);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-300 {
            return f64::INFINITY;
        }
        v.iter_mut().for_each(|x| *x /= n);
        q.push(v);
    }
    let mut r = y.to_vec();
    for u in &q {
        let d: f64 = u.iter().zip(&r).map(|(a, b)| a * b).sum();
        r.iter_mut().zip(u).for_each(|(x, a)| *x -= d * a);
    }
    r.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn step_response_time_constants_are_recovered() {
    let mut m = MaterialModel::potato_tuber();
    m.chi = 0.0;
    let truth: Vec<f64> = m.poles.iter().map(|p| p.tau).collect();

    // one long pulse so the slowest mode decays
    let rise = 0.1e-6;
    let p = PulseProtocol {
        amplitude: 50.0,
        pulse_width: 20e-3,
        count: 1,
        repetition_rate: 40.0,
        rise_time: rise,
        fall_time: rise,
        post_burst_hold: 0.0,
    };
    let tr = lumped_trace(&m, None, &p, &AxiGeometry::default(), 1e-7).unwrap();

    // log-spaced samples on the solver grid after the ramp
    let mut idx: Vec<usize> = (0..240)
        .map(|k| {
            let t = rise + 0.1e-6 * (19.9e-3 / 0.1e-6f64).powf(k as f64 / 239.0);
            (t / 1e-7).round() as usize
        })
        .collect();
    idx.dedup();
    let ts: Vec<f64> = idx.iter().map(|&i| tr.samples[i].t - rise).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| tr.samples[i].i).collect();
    // relative weighting
    let w: Vec<f64> = ys.iter().map(|y| 1.0 / y.abs()).collect();
    let yw: Vec<f64> = ys.iter().zip(&w).map(|(y, w)| y * w).collect();

    // unit coordinate u maps to tau = truth * 4^(u - 0.5)
    let to_tau = |u: &[f64]| -> Vec<f64> { u.iter().zip(&truth).map(|(u, t)| t * 4f64.powf(u - 0.5)).collect() };
    let objective = |u: &[f64]| {
        let taus = to_tau(u);
        let mut cols = vec![w.clone()];
        for tau in &taus {
            cols.push(ts.iter().zip(&w).map(|(t, w)| w * (-t / tau).exp()).collect());
        }
        projection_residual(&cols, &yw)
    };
    let mut x = vec![0.3, 0.7, 0.35, 0.62];
    for _ in 0..4 {
        x = nelder_mead(objective, &x, 0.05, 4000, 1e-14, 1e-10).x;
    }
    for (got, want) in to_tau(&x).iter().zip(&truth) {
        assert!(((got - want) / want).abs() < 0.01, "tau {got:e} vs {want:e}");
    }
}

#[test]
fn parameter_free_model_is_ohmic() {
    let mut m = MaterialModel::potato_tuber();
    m.poles.clear();
    m.chi = 0.0;
    let g = AxiGeometry::default();
    let p = PulseProtocol::esope_for_field(40e3, g.sample_height);
    let tr = lumped_trace(&m, None, &p, &g, 1e-8).unwrap();
    let eps_c = epsim_core::material::VACUUM_PERMITTIVITY * m.eps_inf * g.sample_area() / g.sample_height;
    for s in tr.samples.iter().step_by(97) {
        let want = s.u * m.sigma_s * g.sample_area() / g.sample_height + eps_c * p.slope_at(s.t);
        assert!((s.i - want).abs() <= 1e-9 * want.abs().max(1e-6), "t = {}", s.t);
    }
}
