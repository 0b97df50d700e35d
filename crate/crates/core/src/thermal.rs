//! Joule heating and heat conduction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::material::MaterialModel;
use crate::mesh::{Mesh, Region};

/// Temperatures, K, one per degree of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalField {
    pub temperature: Vec<f64>,
    pub t0: f64,
}

impl ThermalField {
    pub fn uniform(dofs: usize, t0: f64) -> Self {
        Self {
            temperature: vec![t0; dofs],
            t0,
        }
    }

    pub fn rise(&self, dof: usize) -> f64 {
        self.temperature[dof] - self.t0
    }

    pub fn max_rise(&self) -> f64 {
        self.temperature
            .iter()
            .map(|t| t - self.t0)
            .fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.temperature.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThermalMode {
    /// Pointwise heating without conduction.
    #[default]
    Adiabatic,
    /// Heating plus explicit conduction with an insulated exterior.
    Diffusive,
}

/// Pointwise `J · E`, W/m³.
pub fn joule_power_density(current: &[[f64; 2]], field: &[[f64; 2]]) -> Result<Vec<f64>> {
    if current.len() != field.len() {
        return Err(Error::Config(format!(
            "current density has {} samples, field has {}",
            current.len(),
            field.len()
        )));
    }
    Ok(current
        .iter()
        .zip(field)
        .map(|(j, e)| j[0] * e[0] + j[1] * e[1])
        .collect())
}

/// Nodal heat conduction on the sample region of a mesh: row-sum lumped
/// volumes and the axisymmetric conductance matrix `∫ k ∇Ni·∇Nj 2πr dA`.
#[derive(Debug, Clone)]
pub struct ConductionOperator {
    /// Lumped revolved volume per node; zero outside the thermal domain.
    pub volumes: Vec<f64>,
    /// Off-diagonal couplings per node as `(neighbour, K_ij)`.
    neighbours: Vec<Vec<(usize, f64)>>,
    diagonal: Vec<f64>,
}

impl ConductionOperator {
    pub fn new(mesh: &Mesh, k_thermal: f64) -> Self {
        let n = mesh.nodes.len();
        let mut volumes = vec![0.0; n];
        let mut diagonal = vec![0.0; n];
        let mut neighbours: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (e, tri) in mesh.elements.iter().enumerate() {
            if tri.region != Region::Sample {
                continue;
            }
            let area = mesh.area(e);
            let p = tri.nodes.map(|i| mesh.nodes[i]);
            let r_sum: f64 = p.iter().map(|q| q[0]).sum();
            for a in 0..3 {
                // exact row sum of the axisymmetric mass matrix
                volumes[tri.nodes[a]] +=
                    2.0 * std::f64::consts::PI * area * (p[a][0] + r_sum) / 12.0;
            }
            let grads = shape_gradients(p, area);
            let w = k_thermal * mesh.revolved_volume(e);
            for a in 0..3 {
                for b in 0..3 {
                    let kab = w * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                    let (i, j) = (tri.nodes[a], tri.nodes[b]);
                    if i == j {
                        diagonal[i] += kab;
                    } else if let Some(slot) = neighbours[i].iter_mut().find(|(n, _)| *n == j) {
                        slot.1 += kab;
                    } else {
                        neighbours[i].push((j, kab));
                    }
                }
            }
        }
        Self {
            volumes,
            neighbours,
            diagonal,
        }
    }

    /// Largest explicit step that keeps the update a convex combination.
    pub fn stable_dt(&self, heat_capacity: f64) -> f64 {
        (0..self.volumes.len())
            .filter(|&i| self.volumes[i] > 0.0)
            .map(|i| {
                let row: f64 =
                    self.diagonal[i].abs() + self.neighbours[i].iter().map(|(_, k)| k.abs()).sum::<f64>();
                if row > 0.0 {
                    heat_capacity * self.volumes[i] / row
                } else {
                    f64::INFINITY
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn explicit_step(&self, t: &mut [f64], q: &[f64], dt: f64, heat_capacity: f64) {
        let old = t.to_vec();
        for i in 0..t.len() {
            let v = self.volumes[i];
            if v <= 0.0 {
                continue;
            }
            let flux: f64 = self.diagonal[i] * old[i]
                + self.neighbours[i].iter().map(|&(j, k)| k * old[j]).sum::<f64>();
            t[i] = old[i] + dt * (q[i] * v - flux) / (heat_capacity * v);
        }
    }
}

/// Gradients of the three linear shape functions of a triangle.
pub fn shape_gradients(p: [[f64; 2]; 3], area: f64) -> [[f64; 2]; 3] {
    let inv = 1.0 / (2.0 * area);
    [
        [(p[1][1] - p[2][1]) * inv, (p[2][0] - p[1][0]) * inv],
        [(p[2][1] - p[0][1]) * inv, (p[0][0] - p[2][0]) * inv],
        [(p[0][1] - p[1][1]) * inv, (p[1][0] - p[0][0]) * inv],
    ]
}

const MAX_HALVINGS: u32 = 40;

/// Advances temperatures by `dt` under power density `q` (W/m³, per DOF).
///
/// Adiabatic: `T += q dt / (rho cp)`. Diffusive: explicit conduction on
/// `operator`; a step longer than the stability limit is rejected and
/// retried as two halves.
pub fn thermal_step(
    field: &mut ThermalField,
    q: &[f64],
    dt: f64,
    m: &MaterialModel,
    mode: ThermalMode,
    operator: Option<&ConductionOperator>,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("time step must be positive, got {dt}")));
    }
    if q.len() != field.temperature.len() {
        return Err(Error::Config(format!(
            "power density has {} samples, temperature field has {}",
            q.len(),
            field.temperature.len()
        )));
    }
    let heat_capacity = m.heat_capacity();
    match mode {
        ThermalMode::Adiabatic => {
            for (t, &qi) in field.temperature.iter_mut().zip(q) {
                *t += qi * dt / heat_capacity;
            }
        }
        ThermalMode::Diffusive => {
            let op = operator
                .ok_or_else(|| Error::Config("diffusive thermal mode needs a conduction operator".into()))?;
            let limit = op.stable_dt(heat_capacity);
            let mut halvings = 0;
            let mut sub = dt;
            while sub > limit {
                sub *= 0.5;
                halvings += 1;
                if halvings > MAX_HALVINGS {
                    return Err(Error::Numerical(format!(
                        "thermal step {dt} s exceeds the stability limit {limit} s"
                    )));
                }
            }
            for _ in 0..(1u64 << halvings) {
                op.explicit_step(&mut field.temperature, q, sub, heat_capacity);
            }
        }
    }
    if let Some(bad) = field.temperature.iter().find(|t| !t.is_finite() || **t < 0.0) {
        return Err(Error::Numerical(format!("invalid temperature {bad} K")));
    }
    Ok(())
}
