//! Axisymmetric electro-quasistatic solver on linear triangles.
//!
//! Each step solves `div(sigma_eff grad phi) = div J_h`, where `sigma_eff`
//! collects the conduction term, the backward-difference companion of the
//! instantaneous permittivity and the implicit part of the exact
//! auxiliary-field update, and `J_h` is the matching history current. The
//! system stays symmetric positive definite. Pore, auxiliary and
//! temperature updates follow the field solve.

use serde::{Deserialize, Serialize};

use crate::dispersion::{AdeState, LinearStepCoefficients};
use crate::electroporation::{state_step, PoreConcentrations, PoreState};
use crate::error::{Error, Result};
use crate::linalg::{pcg, BandCholesky, BandedSym};
use crate::material::{sigma_p_unchecked, sigma_t, EpParams, MaterialModel, VACUUM_PERMITTIVITY};
use crate::mesh::{build_geometry, AxiGeometry, BoundaryTag, Mesh, MeshOptions, Region};
use crate::protocol::PulseProtocol;
use crate::thermal::{shape_gradients, thermal_step, ConductionOperator, ThermalField, ThermalMode};
use crate::trace::{SimTrace, TraceSample};

/// Relative max-norm change of the element conductances above which the
/// system is refactorised; below it the old factor preconditions CG.
pub const REFACTOR_THRESHOLD: f64 = 1e-3;

const PCG_TOL: f64 = 1e-12;
const PCG_MAX_ITER: usize = 200;

/// Time-step schedule: fine steps near pulse edges, coarse steps elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepController {
    pub dt_transition: f64,
    pub dt_plateau: f64,
    /// Half-width of the fine-step window around every edge instant, s.
    pub transition_window: f64,
}

impl Default for StepController {
    fn default() -> Self {
        Self {
            dt_transition: 0.1e-6,
            dt_plateau: 1e-6,
            transition_window: 2e-6,
        }
    }
}

impl StepController {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_transition > 0.0 && self.dt_transition <= self.dt_plateau && self.dt_plateau.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < dt_transition <= dt_plateau, got {} and {}",
                self.dt_transition, self.dt_plateau
            )));
        }
        if !(self.transition_window >= 0.0) {
            return Err(Error::Config("transition_window must be non-negative".into()));
        }
        Ok(())
    }

    /// Both step sizes halved, same window.
    pub fn halved(&self) -> Self {
        Self {
            dt_transition: 0.5 * self.dt_transition,
            dt_plateau: 0.5 * self.dt_plateau,
            ..*self
        }
    }

    /// Step end instants covering `[0, duration]`, starting with 0. Every
    /// edge instant is hit exactly.
    pub fn step_times(&self, protocol: &PulseProtocol) -> Vec<f64> {
        let end = protocol.duration();
        let edges = protocol.edge_times();
        let mut breaks = vec![0.0, end];
        for &e in &edges {
            breaks.extend([e, e - self.transition_window, e + self.transition_window]);
        }
        breaks.retain(|&t| (0.0..=end).contains(&t));
        breaks.sort_by(f64::total_cmp);
        breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * end.max(1e-9));

        let mut times = vec![0.0];
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mid = 0.5 * (a + b);
            let near = edges.iter().any(|&e| (mid - e).abs() < self.transition_window);
            let dt = if near { self.dt_transition } else { self.dt_plateau };
            let n = ((b - a) / dt - 1e-9).ceil().max(1.0) as usize;
            for k in 1..n {
                times.push(a + (b - a) * k as f64 / n as f64);
            }
            times.push(b);
        }
        times
    }
}

/// Solver options independent of material and protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FemOptions {
    pub mesh: MeshOptions,
    pub controller: StepController,
    pub thermal: ThermalMode,
    /// Output resampling interval, s; `None` keeps every step.
    pub output_dt: Option<f64>,
    /// Record centre auxiliary fields in the trace.
    pub record_aux: bool,
}

impl Default for FemOptions {
    fn default() -> Self {
        Self {
            mesh: MeshOptions::default(),
            controller: StepController::default(),
            thermal: ThermalMode::Adiabatic,
            output_dt: Some(0.1e-6),
            record_aux: false,
        }
    }
}

/// Full discrete state. Potentials and temperatures are nodal; fields,
/// currents, auxiliary fields and pore states are per element.
#[derive(Debug, Clone)]
pub struct SystemState {
    pub phi: Vec<f64>,
    pub ade: AdeState,
    pub pores: PoreConcentrations,
    pub temp: ThermalField,
    pub t: f64,
    /// Element fields `(E_r, E_z)`, V/m.
    pub field: Vec<[f64; 2]>,
    /// Element total current densities, A/m².
    pub current: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub steps: usize,
    pub factorizations: usize,
    pub pcg_iterations: usize,
    /// Largest `|I_terminal + I_ground| / |I_terminal|` over steps carrying
    /// current.
    pub max_charge_mismatch: f64,
    /// Largest apparent conductivity over all sample elements and steps.
    pub max_sigma_app: f64,
    pub max_delta_t: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: SimTrace,
    pub diagnostics: RunDiagnostics,
}

/// Dirichlet role of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fixed {
    Free,
    Terminal,
    Ground,
}

/// Conduction stiffness with Dirichlet rows applied.
#[derive(Debug, Clone)]
pub struct ConductionSystem {
    pub matrix: BandedSym,
    pub rhs: Vec<f64>,
}

fn element_geometry(mesh: &Mesh) -> (Vec<[[f64; 2]; 3]>, Vec<f64>) {
    let grads = (0..mesh.elements.len())
        .map(|e| shape_gradients(mesh.elements[e].nodes.map(|i| mesh.nodes[i]), mesh.area(e)))
        .collect();
    let weights = (0..mesh.elements.len()).map(|e| mesh.revolved_volume(e)).collect();
    (grads, weights)
}

fn dirichlet_roles(mesh: &Mesh) -> Result<Vec<Fixed>> {
    let mut roles = vec![Fixed::Free; mesh.nodes.len()];
    let ground = mesh.tagged_nodes(BoundaryTag::Ground);
    let terminal = mesh.tagged_nodes(BoundaryTag::Terminal);
    if ground.is_empty() {
        return Err(Error::Config("mesh has no ground boundary; the system is singular".into()));
    }
    if terminal.is_empty() {
        return Err(Error::Config("mesh has no terminal boundary".into()));
    }
    for i in terminal {
        roles[i] = Fixed::Terminal;
    }
    for i in ground {
        if roles[i] == Fixed::Terminal {
            return Err(Error::Config(format!("node {i} is both terminal and ground")));
        }
        roles[i] = Fixed::Ground;
    }
    Ok(roles)
}

fn assemble(
    mesh: &Mesh,
    grads: &[[[f64; 2]; 3]],
    weights: &[f64],
    sigma: &[f64],
    history: Option<&[[f64; 2]]>,
    bw: usize,
) -> (BandedSym, Vec<f64>) {
    let n = mesh.nodes.len();
    let mut k = BandedSym::zeros(n, bw);
    let mut f = vec![0.0; n];
    for (e, tri) in mesh.elements.iter().enumerate() {
        let g = &grads[e];
        let w = weights[e];
        let s = w * sigma[e];
        for a in 0..3 {
            for b in 0..=a {
                let v = s * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                k.add(tri.nodes[a], tri.nodes[b], v);
            }
            if let Some(h) = history {
                f[tri.nodes[a]] -= w * (h[e][0] * g[a][0] + h[e][1] * g[a][1]);
            }
        }
    }
    (k, f)
}

fn apply_dirichlet(k: &mut BandedSym, f: &mut [f64], roles: &[Fixed], u: f64) {
    let n = k.dim();
    let bw = k.bandwidth();
    let value = |r: Fixed| match r {
        Fixed::Terminal => u,
        _ => 0.0,
    };
    for j in 0..n {
        if roles[j] == Fixed::Free {
            continue;
        }
        let v = value(roles[j]);
        if v != 0.0 {
            let lo = j.saturating_sub(bw);
            let hi = (j + bw).min(n - 1);
            for i in lo..=hi {
                if roles[i] == Fixed::Free {
                    f[i] -= k.get(i, j) * v;
                }
            }
        }
    }
    for j in 0..n {
        if roles[j] != Fixed::Free {
            k.constrain(j);
            f[j] = value(roles[j]);
        }
    }
}

/// Assembles `div(sigma grad phi) = 0` with `phi = u` on the terminal and
/// `phi = 0` on the ground; other boundaries are insulating.
pub fn assemble_conduction(mesh: &Mesh, sigma: &[f64], u: f64) -> Result<ConductionSystem> {
    if sigma.len() != mesh.elements.len() {
        return Err(Error::Config(format!(
            "{} conductivities for {} elements",
            sigma.len(),
            mesh.elements.len()
        )));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(Error::Domain(format!("conductivity must be positive, got {s}")));
    }
    let roles = dirichlet_roles(mesh)?;
    let (grads, weights) = element_geometry(mesh);
    let (mut matrix, mut rhs) = assemble(mesh, &grads, &weights, sigma, None, mesh.bandwidth());
    apply_dirichlet(&mut matrix, &mut rhs, &roles, u);
    Ok(ConductionSystem { matrix, rhs })
}

/// Steady conduction potential.
pub fn solve_conduction(mesh: &Mesh, sigma: &[f64], u: f64) -> Result<Vec<f64>> {
    let sys = assemble_conduction(mesh, sigma, u)?;
    let mut phi = sys.rhs;
    sys.matrix.cholesky()?.solve_in_place(&mut phi);
    Ok(phi)
}

/// Current leaving the terminal into the sample for a steady potential.
pub fn conduction_current(mesh: &Mesh, sigma: &[f64], phi: &[f64]) -> Result<f64> {
    let roles = dirichlet_roles(mesh)?;
    let (grads, weights) = element_geometry(mesh);
    let mut total = 0.0;
    for (e, tri) in mesh.elements.iter().enumerate() {
        let g = &grads[e];
        let field = element_field(g, tri.nodes.map(|i| phi[i]));
        let j = [sigma[e] * field[0], sigma[e] * field[1]];
        for a in 0..3 {
            if roles[tri.nodes[a]] == Fixed::Terminal {
                total -= weights[e] * (g[a][0] * j[0] + g[a][1] * j[1]);
            }
        }
    }
    Ok(total)
}

#[inline]
fn element_field(g: &[[f64; 2]; 3], phi: [f64; 3]) -> [f64; 2] {
    [
        -(g[0][0] * phi[0] + g[1][0] * phi[1] + g[2][0] * phi[2]),
        -(g[0][1] * phi[0] + g[1][1] * phi[1] + g[2][1] * phi[2]),
    ]
}

#[inline]
fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Time-domain solver bound to one mesh and material set.
#[derive(Debug, Clone)]
pub struct Simulator {
    mesh: Mesh,
    sample: MaterialModel,
    electrode: MaterialModel,
    ep: Option<EpParams>,
    mode: ThermalMode,
    conduction: Option<ConductionOperator>,
    grads: Vec<[[f64; 2]; 3]>,
    weights: Vec<f64>,
    /// `int N_a 2 pi r dA` per element and local node.
    node_mass: Vec<[f64; 3]>,
    /// Sum of `node_mass` over sample elements per node.
    node_volume: Vec<f64>,
    roles: Vec<Fixed>,
    bw: usize,
    center_elements: Vec<usize>,
    state: SystemState,
    factor: Option<BandCholesky>,
    factor_sigma: Vec<f64>,
    coeffs: Option<(f64, LinearStepCoefficients)>,
    q_prev: Vec<f64>,
    terminal_current: f64,
    ground_current: f64,
    diagnostics: RunDiagnostics,
    trace: SimTrace,
    aux_rows: Vec<Vec<f64>>,
    record_aux: bool,
}

impl Simulator {
    pub fn new(mesh: Mesh, sample: MaterialModel, ep: Option<EpParams>, mode: ThermalMode) -> Result<Self> {
        sample.validate()?;
        if let Some(ep) = &ep {
            ep.validate()?;
        }
        let electrode = MaterialModel::electrode_316l();
        let roles = dirichlet_roles(&mesh)?;
        let (grads, weights) = element_geometry(&mesh);
        if let Some(e) = (0..mesh.elements.len()).find(|&e| !(mesh.area(e) > 0.0)) {
            return Err(Error::Geometry(format!("element {e} is degenerate or clockwise")));
        }
        let n = mesh.nodes.len();
        let ne = mesh.elements.len();
        let mut node_mass = vec![[0.0; 3]; ne];
        let mut node_volume = vec![0.0; n];
        for (e, tri) in mesh.elements.iter().enumerate() {
            let p = tri.nodes.map(|i| mesh.nodes[i]);
            let r_sum: f64 = p.iter().map(|q| q[0]).sum();
            for a in 0..3 {
                let m = 2.0 * std::f64::consts::PI * mesh.area(e) * (p[a][0] + r_sum) / 12.0;
                node_mass[e][a] = m;
                if tri.region == Region::Sample {
                    node_volume[tri.nodes[a]] += m;
                }
            }
        }
        let conduction = match mode {
            ThermalMode::Diffusive => Some(ConductionOperator::new(&mesh, sample.k_thermal)),
            ThermalMode::Adiabatic => None,
        };
        let center_elements: Vec<usize> = mesh
            .elements_around(mesh.center_node)
            .into_iter()
            .filter(|&e| mesh.elements[e].region == Region::Sample)
            .collect();
        if center_elements.is_empty() {
            return Err(Error::Geometry("no sample element touches the centre node".into()));
        }
        let bw = mesh.bandwidth();
        let state = SystemState {
            phi: vec![0.0; n],
            ade: AdeState::zeros(sample.poles.len(), ne, 2),
            pores: PoreConcentrations::at_rest(ne),
            temp: ThermalField::uniform(n, sample.t0),
            t: 0.0,
            field: vec![[0.0; 2]; ne],
            current: vec![[0.0; 2]; ne],
        };
        Ok(Self {
            trace: SimTrace::new(sample.t0),
            mesh,
            sample,
            electrode,
            ep,
            mode,
            conduction,
            grads,
            weights,
            node_mass,
            node_volume,
            roles,
            bw,
            center_elements,
            state,
            factor: None,
            factor_sigma: Vec::new(),
            coeffs: None,
            q_prev: vec![0.0; n],
            terminal_current: 0.0,
            ground_current: 0.0,
            diagnostics: RunDiagnostics::default(),
            aux_rows: Vec::new(),
            record_aux: false,
        })
    }

    /// Replaces the plate-electrode material.
    pub fn with_electrode_material(mut self, m: MaterialModel) -> Result<Self> {
        m.validate()?;
        self.electrode = m;
        Ok(self)
    }

    pub fn record_aux(mut self, on: bool) -> Self {
        self.record_aux = on;
        self
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn diagnostics(&self) -> &RunDiagnostics {
        &self.diagnostics
    }

    /// Trace recorded so far at full step resolution.
    pub fn partial_trace(&self) -> &SimTrace {
        &self.trace
    }

    /// Current flowing from the terminal into the sample after the last
    /// step, A.
    pub fn terminal_current(&self) -> f64 {
        self.terminal_current
    }

    /// Current through the ground boundary with the same orientation; equal
    /// and opposite to the terminal current.
    pub fn ground_current(&self) -> f64 {
        self.ground_current
    }

    fn material(&self, e: usize) -> &MaterialModel {
        match self.mesh.elements[e].region {
            Region::Sample => &self.sample,
            Region::Electrode => &self.electrode,
        }
    }

    fn element_temperature(&self, e: usize) -> f64 {
        let t = &self.state.temp.temperature;
        self.mesh.elements[e].nodes.iter().map(|&i| t[i]).sum::<f64>() / 3.0
    }

    /// Apparent conductivity of an element for given pore state.
    fn sigma_app(&self, e: usize, p: &PoreState, temperature: f64) -> f64 {
        let m = self.material(e);
        let base = match (&self.ep, self.mesh.elements[e].region) {
            (Some(ep), Region::Sample) => sigma_p_unchecked(m.sigma_s, p, ep),
            _ => m.sigma_s,
        };
        sigma_t(base, temperature, m)
    }

    fn step_coefficients(&mut self, dt: f64) -> LinearStepCoefficients {
        match &self.coeffs {
            Some((h, c)) if *h == dt => c.clone(),
            _ => {
                let c = LinearStepCoefficients::new(&self.sample, dt);
                self.coeffs = Some((dt, c.clone()));
                c
            }
        }
    }

    /// Advances the state by `dt` to terminal voltage `u`.
    pub fn time_step(&mut self, u: f64, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!("time step must be positive, got {dt}")));
        }
        if !u.is_finite() {
            return Err(Error::Domain(format!("terminal voltage must be finite, got {u}")));
        }
        let ne = self.mesh.elements.len();
        let poles = self.sample.poles.len();
        let coeffs = self.step_coefficients(dt);
        let implicit_g = coeffs.implicit_conductance();

        // predictor: pores advanced with the start-of-step field
        let predicted: Vec<PoreState> = match &self.ep {
            Some(ep) => (0..ne)
                .map(|e| {
                    let p = &self.state.pores.as_slice()[e];
                    if self.mesh.elements[e].region == Region::Sample {
                        state_step(p, norm(self.state.field[e]), dt, ep)
                    } else {
                        *p
                    }
                })
                .collect(),
            None => self.state.pores.as_slice().to_vec(),
        };

        let mut sigma_eff = vec![0.0; ne];
        let mut history = vec![[0.0; 2]; ne];
        for e in 0..ne {
            let m = self.material(e);
            let companion = VACUUM_PERMITTIVITY * m.eps_inf / dt;
            let e0 = self.state.field[e];
            let sig = self.sigma_app(e, &predicted[e], self.element_temperature(e));
            let sample = self.mesh.elements[e].region == Region::Sample;
            sigma_eff[e] = sig + companion + if sample { implicit_g } else { 0.0 };
            for c in 0..2 {
                history[e][c] = companion * e0[c];
                if sample && poles > 0 {
                    history[e][c] += coeffs.history_current(self.state.ade.sample(2 * e + c), e0[c]);
                }
            }
        }

        let (mut k, mut f) = assemble(&self.mesh, &self.grads, &self.weights, &sigma_eff, Some(&history), self.bw);
        apply_dirichlet(&mut k, &mut f, &self.roles, u);

        let reuse = self.factor.is_some()
            && self.factor_sigma.len() == ne
            && sigma_eff
                .iter()
                .zip(&self.factor_sigma)
                .all(|(s, s0)| (s - s0).abs() <= REFACTOR_THRESHOLD * s0);
        let mut phi = self.state.phi.clone();
        for (i, r) in self.roles.iter().enumerate() {
            match r {
                Fixed::Terminal => phi[i] = u,
                Fixed::Ground => phi[i] = 0.0,
                Fixed::Free => {}
            }
        }
        let mut solved = false;
        if reuse {
            let factor = self.factor.as_ref().unwrap();
            if let Ok(it) = pcg(&k, factor, &f, &mut phi, PCG_TOL, PCG_MAX_ITER) {
                self.diagnostics.pcg_iterations += it;
                solved = true;
            }
        }
        if !solved {
            let factor = k.clone().cholesky().map_err(|err| {
                Error::Numerical(format!("field solve failed at t = {:e} s: {err}", self.state.t + dt))
            })?;
            phi.copy_from_slice(&f);
            factor.solve_in_place(&mut phi);
            self.factor = Some(factor);
            self.factor_sigma = sigma_eff.clone();
            self.diagnostics.factorizations += 1;
        }
        if let Some(bad) = phi.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite potential at node {bad}")));
        }

        // new fields, currents and terminal reactions
        let mut field = vec![[0.0; 2]; ne];
        let mut current = vec![[0.0; 2]; ne];
        let (mut i_term, mut i_ground) = (0.0, 0.0);
        for (e, tri) in self.mesh.elements.iter().enumerate() {
            let g = &self.grads[e];
            let ef = element_field(g, tri.nodes.map(|i| phi[i]));
            let j = [
                sigma_eff[e] * ef[0] - history[e][0],
                sigma_eff[e] * ef[1] - history[e][1],
            ];
            for a in 0..3 {
                let r = -self.weights[e] * (g[a][0] * j[0] + g[a][1] * j[1]);
                match self.roles[tri.nodes[a]] {
                    Fixed::Terminal => i_term += r,
                    Fixed::Ground => i_ground += r,
                    Fixed::Free => {}
                }
            }
            field[e] = ef;
            current[e] = j;
        }

        // auxiliary fields
        if poles > 0 {
            for e in 0..ne {
                if self.mesh.elements[e].region != Region::Sample {
                    continue;
                }
                let e0 = self.state.field[e];
                let e1 = field[e];
                for c in 0..2 {
                    let aux = self.state.ade.sample_mut(2 * e + c);
                    for (k, slot) in aux.iter_mut().enumerate() {
                        *slot = coeffs.advance(k, *slot, e0[c], e1[c]);
                    }
                }
            }
        }

        // corrector: pores from the pre-step state with the mid-step field
        if let Some(ep) = &self.ep {
            for e in 0..ne {
                if self.mesh.elements[e].region != Region::Sample {
                    continue;
                }
                let mag = 0.5 * (norm(self.state.field[e]) + norm(field[e]));
                let p = &mut self.state.pores.as_mut_slice()[e];
                *p = state_step(p, mag, dt, ep);
            }
        }

        // Joule heating projected onto the nodes of the sample
        let n = self.mesh.nodes.len();
        let mut q = vec![0.0; n];
        for (e, tri) in self.mesh.elements.iter().enumerate() {
            if tri.region != Region::Sample {
                continue;
            }
            let qe = current[e][0] * field[e][0] + current[e][1] * field[e][1];
            for a in 0..3 {
                q[tri.nodes[a]] += qe * self.node_mass[e][a];
            }
        }
        for (qi, v) in q.iter_mut().zip(&self.node_volume) {
            if *v > 0.0 {
                *qi /= v;
            }
        }
        let q_mid: Vec<f64> = q.iter().zip(&self.q_prev).map(|(a, b)| 0.5 * (a + b)).collect();
        thermal_step(&mut self.state.temp, &q_mid, dt, &self.sample, self.mode, self.conduction.as_ref())?;
        self.q_prev = q;

        self.state.phi = phi;
        self.state.field = field;
        self.state.current = current;
        self.state.t += dt;
        self.terminal_current = i_term;
        self.ground_current = i_ground;

        let d = &mut self.diagnostics;
        d.steps += 1;
        if i_term.abs() > 1e-9 {
            d.max_charge_mismatch = d.max_charge_mismatch.max((i_term + i_ground).abs() / i_term.abs());
        }
        let mut max_sig: f64 = 0.0;
        for e in 0..ne {
            if self.mesh.elements[e].region == Region::Sample {
                let s = self.sigma_app(e, &self.state.pores.as_slice()[e], self.element_temperature(e));
                max_sig = max_sig.max(s);
            }
        }
        self.diagnostics.max_sigma_app = self.diagnostics.max_sigma_app.max(max_sig);
        self.diagnostics.max_delta_t = self.diagnostics.max_delta_t.max(self.state.temp.max_rise());
        Ok(())
    }

    fn centre_sample(&self, u: f64) -> TraceSample {
        let ce = &self.center_elements;
        let n = ce.len() as f64;
        let mut p = PoreState::default();
        let mut sig = 0.0;
        for &e in ce {
            let s = &self.state.pores.as_slice()[e];
            p.p0 += s.p0 / n;
            p.p1 += s.p1 / n;
            p.p2 += s.p2 / n;
            sig += self.sigma_app(e, s, self.element_temperature(e)) / n;
        }
        TraceSample {
            t: self.state.t,
            u,
            i: self.terminal_current,
            p0: p.p0,
            p1: p.p1,
            p2: p.p2,
            sigma_app: sig,
            temperature: self.state.temp.temperature[self.mesh.center_node],
        }
    }

    fn centre_aux(&self) -> Vec<f64> {
        let poles = self.sample.poles.len();
        let n = self.center_elements.len() as f64;
        let mut row = vec![0.0; poles];
        for &e in &self.center_elements {
            let axial = self.state.ade.sample(2 * e + 1);
            for (r, a) in row.iter_mut().zip(axial) {
                *r += a / n;
            }
        }
        row
    }

    fn record(&mut self, u: f64) {
        let s = self.centre_sample(u);
        self.trace.samples.push(s);
        if self.record_aux {
            let row = self.centre_aux();
            self.aux_rows.push(row);
        }
    }

    /// Runs `protocol` from the current state. On failure the steps taken
    /// so far remain available through [`Simulator::partial_trace`].
    pub fn run(
        &mut self,
        protocol: &PulseProtocol,
        controller: &StepController,
        output_dt: Option<f64>,
    ) -> Result<RunOutput> {
        protocol.validate()?;
        controller.validate()?;
        self.trace = SimTrace::new(self.sample.t0);
        self.aux_rows.clear();
        let t_start = self.state.t;
        self.record(protocol.voltage_at(0.0));
        let times = controller.step_times(protocol);
        for w in times.windows(2) {
            let u = protocol.voltage_at(w[1]);
            self.time_step(u, w[1] - w[0])?;
            // keep the clock on the schedule
            self.state.t = t_start + w[1];
            self.record(u);
        }
        let mut trace = self.trace.clone();
        if self.record_aux {
            trace.aux = Some(self.aux_rows.clone());
        }
        if let Some(d) = output_dt {
            trace = trace.resample(d);
        }
        Ok(RunOutput {
            trace,
            diagnostics: self.diagnostics.clone(),
        })
    }
}

/// Builds the mesh and runs `protocol` on it.
pub fn run_protocol(
    geom: &AxiGeometry,
    material: &MaterialModel,
    ep: Option<&EpParams>,
    protocol: &PulseProtocol,
    options: &FemOptions,
) -> Result<RunOutput> {
    let mesh = build_geometry(geom, &options.mesh)?;
    let mut sim = Simulator::new(mesh, material.clone(), ep.cloned(), options.thermal)?.record_aux(options.record_aux);
    sim.run(protocol, &options.controller, options.output_dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slab() -> Mesh {
        build_geometry(&AxiGeometry::default(), &MeshOptions::default()).unwrap()
    }

    #[test]
    fn uniform_slab_has_linear_potential() {
        let mesh = slab();
        let sigma = vec![0.3; mesh.elements.len()];
        let phi = solve_conduction(&mesh, &sigma, 50.0).unwrap();
        for (p, x) in phi.iter().zip(&mesh.nodes) {
            let want = 50.0 * (x[1] + 2.5e-3) / 5e-3;
            assert!((p - want).abs() < 1e-9, "{p} vs {want}");
        }
        let i = conduction_current(&mesh, &sigma, &phi).unwrap();
        let want = 0.3 * 1e4 * std::f64::consts::PI * 9.25e-3f64.powi(2);
        assert!(((i - want) / want).abs() < 1e-10);

        let doubled = vec![0.6; mesh.elements.len()];
        let phi2 = solve_conduction(&mesh, &doubled, 50.0).unwrap();
        let i2 = conduction_current(&mesh, &doubled, &phi2).unwrap();
        assert!((i2 / i - 2.0).abs() < 1e-10);
    }

    #[test]
    fn two_layer_stack_divides_like_series_resistors() {
        let mesh = slab();
        let (s_low, s_high) = (0.1, 0.4);
        let sigma: Vec<f64> = (0..mesh.elements.len())
            .map(|e| if mesh.centroid(e)[1] < 0.0 { s_low } else { s_high })
            .collect();
        let phi = solve_conduction(&mesh, &sigma, 100.0).unwrap();
        // equal thicknesses: resistances scale with 1/sigma
        let r_low = 1.0 / s_low;
        let r_high = 1.0 / s_high;
        let want = 100.0 * r_low / (r_low + r_high);
        assert!((phi[mesh.center_node] - want).abs() < 1e-9);
    }

    #[test]
    fn missing_ground_is_a_configuration_error() {
        let mut mesh = slab();
        mesh.boundary.retain(|b| b.tag != BoundaryTag::Ground);
        let sigma = vec![1.0; mesh.elements.len()];
        assert!(matches!(assemble_conduction(&mesh, &sigma, 1.0), Err(Error::Config(_))));
        let sigma = vec![0.0; slab().elements.len()];
        assert!(assemble_conduction(&slab(), &sigma, 1.0).is_err());
    }

    #[test]
    fn schedule_hits_edges_and_respects_limits() {
        let c = StepController::default();
        let p = PulseProtocol::esope(100.0);
        let times = c.step_times(&p);
        assert_eq!(times[0], 0.0);
        assert!((times.last().unwrap() - p.duration()).abs() < 1e-15);
        for e in p.edge_times() {
            assert!(times.iter().any(|t| (t - e).abs() < 1e-15), "edge {e}");
        }
        for w in times.windows(2) {
            let dt = w[1] - w[0];
            assert!(dt > 0.0 && dt <= c.dt_plateau * (1.0 + 1e-9));
            let mid = 0.5 * (w[0] + w[1]);
            if p.edge_times().iter().any(|e| (mid - e).abs() < 1e-6) {
                assert!(dt <= c.dt_transition * (1.0 + 1e-9));
            }
        }
        assert!(StepController { dt_transition: 2e-6, ..c }.validate().is_err());
    }

    #[test]
    fn zero_voltage_keeps_rest_state() {
        let m = MaterialModel::potato_tuber();
        let out = run_protocol(
            &AxiGeometry::default(),
            &m,
            m.ep.as_ref(),
            &PulseProtocol::esope(0.0),
            &FemOptions::default(),
        )
        .unwrap();
        for s in &out.trace.samples {
            assert_eq!(s.i, 0.0);
            assert!(s.p0 < 5e-4 && s.p1 < 5e-4 && s.p2 < 5e-4);
            assert_eq!(s.temperature, m.t0);
        }
    }

    #[test]
    fn static_slab_current_from_time_stepping() {
        let mut m = MaterialModel::potato_tuber();
        m.poles.clear();
        m.chi = 0.0;
        let mut sim = Simulator::new(slab(), m, None, ThermalMode::Adiabatic).unwrap();
        sim.time_step(50.0, 1e-6).unwrap();
        sim.time_step(50.0, 1e-6).unwrap();
        let i = sim.terminal_current();
        assert!((i - 58.0e-3).abs() < 0.1e-3, "{i}");
        assert!((i + sim.ground_current()).abs() < 1e-9 * i);
    }

    #[test]
    fn factor_is_reused_on_plateaus() {
        let m = MaterialModel::potato_tuber();
        let mut p = PulseProtocol::esope(50.0);
        p.count = 1;
        let out = run_protocol(&AxiGeometry::default(), &m, m.ep.as_ref(), &p, &FemOptions::default()).unwrap();
        let d = out.diagnostics;
        assert!(d.factorizations < d.steps / 2, "{d:?}");
        assert!(d.max_charge_mismatch < 1e-6, "{d:?}");
    }
}
