//! Electroporation parameter estimation against current traces.
//!
//! Minimises the weighted relative squared current error of the lumped
//! model with a bounded Nelder-Mead simplex, restarted from several seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lumped::lumped_trace;
use crate::material::{EpField, EpParams, MaterialModel};
use crate::mesh::AxiGeometry;
use crate::protocol::PulseProtocol;
use crate::trace::{MeasuredTrace, TraceMeta};

/// Lumped-model step used while fitting, s.
pub const FIT_DT: f64 = 5e-8;

/// A parameter is reported insensitive when moving it by the probe step
/// raises the objective by less than this fraction of the optimum (or of
/// [`OBJECTIVE_FLOOR`] when the optimum is smaller).
pub const INSENSITIVE_RATIO: f64 = 0.05;
pub const OBJECTIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeParam {
    pub field: EpField,
    pub lower: f64,
    pub upper: f64,
}

impl FreeParam {
    /// Bounds `[lo, hi]` times the value in `ep`.
    pub fn scaled(field: EpField, ep: &EpParams, lo: f64, hi: f64) -> Self {
        let v = ep.get(field);
        Self {
            field,
            lower: lo * v,
            upper: hi * v,
        }
    }

    fn to_unit(&self, v: f64) -> f64 {
        ((v - self.lower) / (self.upper - self.lower)).clamp(0.0, 1.0)
    }

    fn from_unit(&self, u: f64) -> f64 {
        self.lower + u.clamp(0.0, 1.0) * (self.upper - self.lower)
    }
}

/// One measured trace and the protocol that produced it.
#[derive(Debug, Clone)]
pub struct FitTrace {
    pub measured: MeasuredTrace,
    pub protocol: PulseProtocol,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct FitProblem {
    /// Dispersion, thermal and static properties held fixed.
    pub material: MaterialModel,
    /// Values of the frozen parameters, and the "reference" seed.
    pub start: EpParams,
    pub free: Vec<FreeParam>,
    pub traces: Vec<FitTrace>,
    pub geometry: AxiGeometry,
    pub dt: f64,
}

impl FitProblem {
    pub fn validate(&self) -> Result<()> {
        if self.traces.is_empty() {
            return Err(Error::Fit("fit problem has no traces".into()));
        }
        for p in &self.free {
            if !(p.lower.is_finite() && p.upper.is_finite() && p.lower < p.upper) {
                return Err(Error::Fit(format!(
                    "bounds for {} must be finite with lower < upper, got [{}, {}]",
                    p.field, p.lower, p.upper
                )));
            }
            if p.lower <= 0.0 {
                return Err(Error::Fit(format!("lower bound for {} must be positive", p.field)));
            }
        }
        for (i, p) in self.free.iter().enumerate() {
            if self.free[..i].iter().any(|q| q.field == p.field) {
                return Err(Error::Fit(format!("parameter {} listed twice", p.field)));
            }
        }
        if self.traces.iter().any(|t| !(t.weight >= 0.0 && t.weight.is_finite())) {
            return Err(Error::Fit("trace weights must be finite and non-negative".into()));
        }
        if !(self.traces.iter().map(|t| t.weight).sum::<f64>() > 0.0) {
            return Err(Error::Fit("trace weights sum to zero".into()));
        }
        for t in &self.traces {
            t.measured.validate()?;
            t.protocol.validate()?;
        }
        Ok(())
    }

    /// Parameters with the free entries taken from unit coordinates `x`.
    pub fn params_at(&self, x: &[f64]) -> EpParams {
        let mut ep = self.start;
        for (p, &u) in self.free.iter().zip(x) {
            ep.set(p.field, p.from_unit(u));
        }
        ep
    }

    pub fn unit_coords(&self, ep: &EpParams) -> Vec<f64> {
        self.free.iter().map(|p| p.to_unit(ep.get(p.field))).collect()
    }

    /// `||I_sim - I_meas||² / ||I_meas||²` for every trace.
    pub fn residuals(&self, ep: &EpParams) -> Result<Vec<f64>> {
        ep.validate()?;
        self.traces
            .par_iter()
            .map(|tr| {
                let sim = lumped_trace(&self.material, Some(ep), &tr.protocol, &self.geometry, self.dt)?;
                let (mut num, mut den) = (0.0, 0.0);
                for (&t, &i) in tr.measured.t.iter().zip(&tr.measured.i) {
                    let d = sim.at(t).i - i;
                    num += d * d;
                    den += i * i;
                }
                if den > 0.0 {
                    Ok(num / den)
                } else {
                    Ok(num)
                }
            })
            .collect()
    }

    /// Weighted mean of the per-trace residuals. The terms are summed in
    /// sorted order, so the value does not depend on trace order.
    pub fn objective(&self, ep: &EpParams) -> Result<f64> {
        let r = self.residuals(ep)?;
        let w_sum: f64 = {
            let mut w: Vec<f64> = self.traces.iter().map(|t| t.weight).collect();
            w.sort_by(f64::total_cmp);
            w.iter().sum()
        };
        let mut terms: Vec<f64> = r.iter().zip(&self.traces).map(|(r, t)| r * t.weight / w_sum).collect();
        terms.sort_by(f64::total_cmp);
        Ok(terms.iter().sum())
    }

    fn objective_at(&self, x: &[f64]) -> f64 {
        match self.objective(&self.params_at(x)) {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedKind {
    /// Centre of the bounds box.
    Midpoint,
    /// The problem's starting parameters.
    Reference,
    /// Uniform random point in the bounds, from the options seed.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub seeds: Vec<SeedKind>,
    pub rng_seed: u64,
    /// Objective evaluations allowed per seed.
    pub max_evals: usize,
    /// Relative objective spread at which a simplex is converged.
    pub ftol: f64,
    /// Simplex diameter (unit coordinates) at which it is converged.
    pub xtol: f64,
    /// Fresh simplices built around the best vertex after convergence.
    pub restarts: usize,
    /// Probe step in unit coordinates for the curvature check.
    pub probe_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            seeds: vec![SeedKind::Midpoint, SeedKind::Reference, SeedKind::Random],
            rng_seed: 7,
            max_evals: 1500,
            ftol: 1e-8,
            xtol: 1e-4,
            restarts: 2,
            probe_step: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogEntry {
    pub seed: usize,
    pub evals: usize,
    pub best: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedResult {
    pub kind: SeedKind,
    pub start: Vec<f64>,
    pub objective: f64,
    pub evals: usize,
    pub params: EpParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sensitivity {
    pub field: EpField,
    /// Mean objective rise over the two probe points.
    pub rise: f64,
    pub insensitive: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub params: EpParams,
    pub objective: f64,
    pub per_trace: Vec<f64>,
    pub seeds: Vec<SeedResult>,
    pub log: Vec<LogEntry>,
    pub sensitivity: Vec<Sensitivity>,
    pub evaluations: usize,
}

impl FitReport {
    pub fn insensitive(&self) -> Vec<EpField> {
        self.sensitivity.iter().filter(|s| s.insensitive).map(|s| s.field).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    /// Best value after each iteration.
    pub history: Vec<(usize, f64)>,
}

/// Nelder-Mead on the unit box. Trial points are projected onto the box;
/// non-finite values count as +inf. Uses dimension-adapted coefficients.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: f64,
    max_evals: usize,
    ftol: f64,
    xtol: f64,
) -> SimplexResult {
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let project = |x: &mut Vec<f64>| x.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    if n == 0 {
        let v = eval(x0, &mut evals);
        return SimplexResult {
            x: Vec::new(),
            f: v,
            evals,
            history: vec![(evals, v)],
        };
    }
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);

    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] = if p[i] + step <= 1.0 { p[i] + step } else { p[i] - step };
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p, &mut evals)).collect();
    let mut history = Vec::new();

    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        history.push((evals, vals[0]));

        let spread = vals[n] - vals[0];
        let diam = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread.is_finite() && spread <= ftol * vals[0].abs().max(1e-300) && diam <= xtol {
            break;
        }
        if diam <= xtol * 1e-3 {
            break;
        }

        let mut centroid = vec![0.0; n];
        for p in &pts[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut x: Vec<f64> = centroid.iter().zip(&pts[n]).map(|(c, w)| c + t * (c - w)).collect();
            project(&mut x);
            x
        };
        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr < vals[0] {
            let xe = along(alpha * gamma);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let x = along(alpha * rho);
            let v = eval(&x, &mut evals);
            (x, v)
        } else {
            let x = along(-rho);
            let v = eval(&x, &mut evals);
            (x, v)
        };
        if fc < vals[n].min(fr) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        for i in 1..=n {
            let best = pts[0].clone();
            for (v, b) in pts[i].iter_mut().zip(&best) {
                *v = b + sigma * (*v - b);
            }
            vals[i] = eval(&pts[i], &mut evals);
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    history.push((evals, vals[best]));
    SimplexResult {
        x: pts[best].clone(),
        f: vals[best],
        evals,
        history,
    }
}

fn seed_point(kind: SeedKind, problem: &FitProblem, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = problem.free.len();
    match kind {
        SeedKind::Midpoint => vec![0.5; n],
        SeedKind::Reference => problem.unit_coords(&problem.start),
        SeedKind::Random => (0..n).map(|_| rng.gen::<f64>()).collect(),
    }
}

/// Runs the multi-start fit and the curvature probe at the optimum.
pub fn fit(problem: &FitProblem, options: &FitOptions) -> Result<FitReport> {
    problem.validate()?;
    if options.seeds.is_empty() {
        return Err(Error::Fit("no seeds configured".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.rng_seed);
    let mut seeds = Vec::new();
    let mut log = Vec::new();
    let mut evaluations = 0;

    for (si, &kind) in options.seeds.iter().enumerate() {
        let start = seed_point(kind, problem, &mut rng);
        let mut x = start.clone();
        let mut best = f64::INFINITY;
        let mut used = 0;
        for round in 0..=options.restarts {
            let step = if round == 0 { 0.1 } else { 0.05 };
            let budget = options.max_evals.saturating_sub(used).max(1);
            let r = nelder_mead(|p| problem.objective_at(p), &x, step, budget, options.ftol, options.xtol);
            log.extend(r.history.iter().map(|&(e, b)| LogEntry {
                seed: si,
                evals: used + e,
                best: b,
            }));
            used += r.evals;
            let improved = r.f < best * (1.0 - 1e-6);
            if r.f <= best {
                best = r.f;
                x = r.x;
            }
            if !improved || used >= options.max_evals || problem.free.is_empty() {
                break;
            }
        }
        evaluations += used;
        seeds.push(SeedResult {
            kind,
            start,
            objective: best,
            evals: used,
            params: problem.params_at(&x),
        });
    }

    let best = seeds
        .iter()
        .filter(|s| s.objective.is_finite())
        .min_by(|a, b| a.objective.total_cmp(&b.objective))
        .ok_or_else(|| Error::Fit("objective is non-finite at every seed".into()))?
        .clone();
    let x_best = problem.unit_coords(&best.params);
    let per_trace = problem.residuals(&best.params)?;

    let scale = best.objective.max(OBJECTIVE_FLOOR);
    let mut sensitivity = Vec::new();
    for (i, p) in problem.free.iter().enumerate() {
        let h = options.probe_step;
        let mut rises = Vec::new();
        for dir in [-1.0, 1.0] {
            let mut x = x_best.clone();
            x[i] = (x[i] + dir * h).clamp(0.0, 1.0);
            if x[i] != x_best[i] {
                rises.push(problem.objective_at(&x) - best.objective);
                evaluations += 1;
            }
        }
        let rise = rises.iter().sum::<f64>() / rises.len().max(1) as f64;
        sensitivity.push(Sensitivity {
            field: p.field,
            rise,
            insensitive: rise < INSENSITIVE_RATIO * scale,
        });
    }

    Ok(FitReport {
        params: best.params,
        objective: best.objective,
        per_trace,
        seeds,
        log,
        sensitivity,
        evaluations,
    })
}

/// ESOPE traces at the given field levels from the lumped model, sampled
/// every `sample_dt` with multiplicative Gaussian current noise of relative
/// size `noise`.
pub fn synthetic_traces(
    material: &MaterialModel,
    ep: &EpParams,
    fields: &[f64],
    geometry: &AxiGeometry,
    sample_dt: f64,
    noise: f64,
    seed: u64,
) -> Result<Vec<FitTrace>> {
    let normal = Normal::new(0.0, noise.max(0.0))
        .map_err(|e| Error::Config(format!("invalid noise level {noise}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &field in fields {
        let protocol = PulseProtocol::esope_for_field(field, geometry.sample_height);
        let sim = lumped_trace(material, Some(ep), &protocol, geometry, crate::lumped::ORACLE_DT)?.resample(sample_dt);
        let mut m = MeasuredTrace::from_sim(&sim, &format!("synthetic_{:.0}", field));
        for i in m.i.iter_mut() {
            *i *= 1.0 + normal.sample(&mut rng);
        }
        m.meta = TraceMeta {
            sample_id: m.meta.sample_id,
            temperature: Some(material.t0),
        };
        out.push(FitTrace {
            measured: m,
            protocol,
            weight: 1.0,
        });
    }
    Ok(out)
}
