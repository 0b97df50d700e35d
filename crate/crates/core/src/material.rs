//! Material parameters and the algebraic parts of the tissue model: the
//! multipole Debye permittivity, the pore-state conductivity increment and
//! the linear temperature coefficient.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::electroporation::PoreState;
use crate::error::{Error, Result};

/// Vacuum permittivity, F/m (CODATA 2018).
pub const VACUUM_PERMITTIVITY: f64 = 8.8541878128e-12;

const POTATO_TUBER_JSON: &str = include_str!("../presets/potato_tuber.json");
const ELECTRODE_316L_JSON: &str = include_str!("../presets/electrode_316L.json");

/// Names of the presets compiled into the crate.
pub const PRESET_NAMES: [&str; 2] = ["potato_tuber", "electrode_316L"];

/// One relaxation pole of a Debye dispersion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DebyePole {
    /// Relative permittivity increment.
    pub delta_eps: f64,
    /// Relaxation time, s.
    pub tau: f64,
}

impl DebyePole {
    pub fn new(delta_eps: f64, tau: f64) -> Result<Self> {
        let pole = Self { delta_eps, tau };
        pole.validate()?;
        Ok(pole)
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta_eps > 0.0 && self.delta_eps.is_finite()) {
            return Err(Error::Config(format!(
                "pole delta_eps must be positive, got {}",
                self.delta_eps
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!(
                "pole tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    /// High-frequency conductance of the pole, `eps0 * delta_eps / tau` (S/m).
    pub fn conductance(&self) -> f64 {
        VACUUM_PERMITTIVITY * self.delta_eps / self.tau
    }
}

/// The twelve parameters of the three-state pore kinetics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpParams {
    /// Centre of the prepore logistic, V/m.
    #[serde(rename = "E0")]
    pub e0: f64,
    /// Slope width of the prepore logistic, V/m.
    #[serde(rename = "dE0")]
    pub de0: f64,
    /// Centre of the initial-pore logistic, V/m.
    #[serde(rename = "E1")]
    pub e1: f64,
    /// Slope width of the initial-pore logistic, V/m.
    #[serde(rename = "dE1")]
    pub de1: f64,
    /// Prepore time constant, s.
    pub tau0: f64,
    /// Initial-pore growth time, s.
    #[serde(rename = "tau1G")]
    pub tau1_grow: f64,
    /// Initial-pore decay time, s.
    #[serde(rename = "tau1D")]
    pub tau1_decay: f64,
    /// Expanded-pore growth time, s.
    #[serde(rename = "tau2G")]
    pub tau2_grow: f64,
    /// Expanded-pore decay time, s.
    #[serde(rename = "tau2D")]
    pub tau2_decay: f64,
    /// Conductivity increment at full prepore concentration, S/m.
    #[serde(rename = "sigP0")]
    pub sig_p0: f64,
    /// Conductivity increment at full initial-pore concentration, S/m.
    #[serde(rename = "sigP1")]
    pub sig_p1: f64,
    /// Conductivity increment at full expanded-pore concentration, S/m.
    #[serde(rename = "sigP2")]
    pub sig_p2: f64,
}

impl EpParams {
    /// Potato tuber parameter set.
    pub fn potato_tuber() -> Self {
        MaterialModel::potato_tuber()
            .ep
            .expect("potato preset carries electroporation parameters")
    }

    pub fn validate(&self) -> Result<()> {
        for field in EpField::ALL {
            let v = self.get(field);
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "electroporation parameter {field} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, field: EpField) -> f64 {
        match field {
            EpField::E0 => self.e0,
            EpField::DE0 => self.de0,
            EpField::E1 => self.e1,
            EpField::DE1 => self.de1,
            EpField::Tau0 => self.tau0,
            EpField::Tau1G => self.tau1_grow,
            EpField::Tau1D => self.tau1_decay,
            EpField::Tau2G => self.tau2_grow,
            EpField::Tau2D => self.tau2_decay,
            EpField::SigP0 => self.sig_p0,
            EpField::SigP1 => self.sig_p1,
            EpField::SigP2 => self.sig_p2,
        }
    }

    pub fn set(&mut self, field: EpField, value: f64) {
        let slot = match field {
            EpField::E0 => &mut self.e0,
            EpField::DE0 => &mut self.de0,
            EpField::E1 => &mut self.e1,
            EpField::DE1 => &mut self.de1,
            EpField::Tau0 => &mut self.tau0,
            EpField::Tau1G => &mut self.tau1_grow,
            EpField::Tau1D => &mut self.tau1_decay,
            EpField::Tau2G => &mut self.tau2_grow,
            EpField::Tau2D => &mut self.tau2_decay,
            EpField::SigP0 => &mut self.sig_p0,
            EpField::SigP1 => &mut self.sig_p1,
            EpField::SigP2 => &mut self.sig_p2,
        };
        *slot = value;
    }

    /// Sum of the three conductivity increments.
    pub fn sigma_increment_max(&self) -> f64 {
        self.sig_p0 + self.sig_p1 + self.sig_p2
    }
}

/// Names a single [`EpParams`] field. Used to select free parameters in fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EpField {
    E0,
    #[serde(rename = "dE0")]
    DE0,
    E1,
    #[serde(rename = "dE1")]
    DE1,
    #[serde(rename = "tau0")]
    Tau0,
    #[serde(rename = "tau1G")]
    Tau1G,
    #[serde(rename = "tau1D")]
    Tau1D,
    #[serde(rename = "tau2G")]
    Tau2G,
    #[serde(rename = "tau2D")]
    Tau2D,
    #[serde(rename = "sigP0")]
    SigP0,
    #[serde(rename = "sigP1")]
    SigP1,
    #[serde(rename = "sigP2")]
    SigP2,
}

impl EpField {
    pub const ALL: [EpField; 12] = [
        EpField::E0,
        EpField::DE0,
        EpField::E1,
        EpField::DE1,
        EpField::Tau0,
        EpField::Tau1G,
        EpField::Tau1D,
        EpField::Tau2G,
        EpField::Tau2D,
        EpField::SigP0,
        EpField::SigP1,
        EpField::SigP2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EpField::E0 => "E0",
            EpField::DE0 => "dE0",
            EpField::E1 => "E1",
            EpField::DE1 => "dE1",
            EpField::Tau0 => "tau0",
            EpField::Tau1G => "tau1G",
            EpField::Tau1D => "tau1D",
            EpField::Tau2G => "tau2G",
            EpField::Tau2D => "tau2D",
            EpField::SigP0 => "sigP0",
            EpField::SigP1 => "sigP1",
            EpField::SigP2 => "sigP2",
        }
    }
}

impl fmt::Display for EpField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EpField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EpField::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown electroporation parameter '{s}'")))
    }
}

/// Dielectric, conductive and thermophysical description of one material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    /// High-frequency relative permittivity.
    pub eps_inf: f64,
    /// Static conductivity, S/m.
    pub sigma_s: f64,
    pub poles: Vec<DebyePole>,
    /// Density, kg/m³.
    pub rho: f64,
    /// Specific heat, J/(kg·K).
    pub cp: f64,
    /// Thermal conductivity, W/(m·K).
    pub k_thermal: f64,
    /// Conductivity temperature coefficient, 1/K.
    pub chi: f64,
    /// Reference (initial) temperature, K.
    #[serde(rename = "T0")]
    pub t0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ep: Option<EpParams>,
}

impl MaterialModel {
    /// Potato tuber tissue: 4-pole Debye fit, thermophysical data at 20 °C
    /// and the fitted electroporation parameters.
    pub fn potato_tuber() -> Self {
        Self::from_json_str(POTATO_TUBER_JSON).expect("built-in preset is valid")
    }

    /// 316L stainless steel plate electrode.
    pub fn electrode_316l() -> Self {
        Self::from_json_str(ELECTRODE_316L_JSON).expect("built-in preset is valid")
    }

    /// Looks up a compiled-in preset by name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "potato_tuber" => Ok(Self::potato_tuber()),
            "electrode_316L" => Ok(Self::electrode_316l()),
            other => Err(Error::Config(format!(
                "unknown material preset '{other}' (known: {})",
                PRESET_NAMES.join(", ")
            ))),
        }
    }

    /// Resolves either a preset name or a path to a preset JSON file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if PRESET_NAMES.contains(&name_or_path) {
            Self::preset(name_or_path)
        } else {
            Self::load(name_or_path)
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_inf >= 1.0) {
            return Err(Error::Config(format!("eps_inf must be >= 1, got {}", self.eps_inf)));
        }
        if !(self.sigma_s > 0.0 && self.sigma_s.is_finite()) {
            return Err(Error::Config(format!("sigma_s must be positive, got {}", self.sigma_s)));
        }
        for (name, v) in [("rho", self.rho), ("cp", self.cp), ("k_thermal", self.k_thermal)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.chi >= 0.0 && self.chi.is_finite()) {
            return Err(Error::Config(format!("chi must be non-negative, got {}", self.chi)));
        }
        if !(self.t0 >= 0.0 && self.t0.is_finite()) {
            return Err(Error::Config(format!("T0 must be a valid temperature, got {}", self.t0)));
        }
        for pole in &self.poles {
            pole.validate()?;
        }
        if let Some(ep) = &self.ep {
            ep.validate()?;
        }
        Ok(())
    }

    /// The electroporation parameters, or a configuration error if the
    /// material has none.
    pub fn ep_params(&self) -> Result<&EpParams> {
        self.ep
            .as_ref()
            .ok_or_else(|| Error::Config("material has no electroporation parameters".into()))
    }

    /// Volumetric heat capacity `rho * cp`, J/(m³·K).
    pub fn heat_capacity(&self) -> f64 {
        self.rho * self.cp
    }

    /// Shortest pole relaxation time, if any poles exist.
    pub fn tau_min(&self) -> Option<f64> {
        self.poles.iter().map(|p| p.tau).reduce(f64::min)
    }
}

/// Complex relative permittivity `eps_inf + sigma_s/(j w eps0) + sum dEps/(1 + j w tau)`.
pub fn complex_permittivity(m: &MaterialModel, omega: f64) -> Result<Complex64> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::Domain(format!(
            "complex permittivity needs omega > 0, got {omega}"
        )));
    }
    let j = Complex64::i();
    let mut eps = Complex64::new(m.eps_inf, 0.0) + m.sigma_s / (j * omega * VACUUM_PERMITTIVITY);
    for pole in &m.poles {
        eps += pole.delta_eps / (1.0 + j * omega * pole.tau);
    }
    Ok(eps)
}

/// Real (conductive) part of the complex conductivity implied by the Debye
/// model: `sigma_s + sum eps0 dEps w² tau / (1 + w² tau²)`.
pub fn equivalent_conductivity(m: &MaterialModel, omega: f64) -> f64 {
    let w2 = omega * omega;
    m.sigma_s
        + m.poles
            .iter()
            .map(|p| VACUUM_PERMITTIVITY * p.delta_eps * w2 * p.tau / (1.0 + w2 * p.tau * p.tau))
            .sum::<f64>()
}

/// Limit of [`equivalent_conductivity`] as omega goes to infinity.
pub fn equivalent_conductivity_limit(m: &MaterialModel) -> f64 {
    m.sigma_s + m.poles.iter().map(DebyePole::conductance).sum::<f64>()
}

/// Complex admittivity `j w eps0 eps_r*(w)`, S/m. Well defined at omega = 0.
pub fn complex_conductivity(m: &MaterialModel, omega: f64) -> Complex64 {
    let j = Complex64::i();
    let mut y = Complex64::new(m.sigma_s, omega * VACUUM_PERMITTIVITY * m.eps_inf);
    for pole in &m.poles {
        let jwt = j * omega * pole.tau;
        y += pole.conductance() * jwt / (1.0 + jwt);
    }
    y
}

/// Static conductivity raised by the pore-state concentrations.
pub fn sigma_p(base: f64, p: &PoreState, ep: &EpParams) -> Result<f64> {
    for (name, v) in [("p0", p.p0), ("p1", p.p1), ("p2", p.p2)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("concentration {name} = {v} outside [0, 1]")));
        }
    }
    Ok(sigma_p_unchecked(base, p, ep))
}

/// [`sigma_p`] without the range check, for the solver inner loops where the
/// pore update already clamps.
#[inline]
pub fn sigma_p_unchecked(base: f64, p: &PoreState, ep: &EpParams) -> f64 {
    base + ep.sig_p0 * p.p0 + ep.sig_p1 * p.p1 + ep.sig_p2 * p.p2
}

/// Temperature-corrected conductivity `sig_p * (1 + chi (T - T0))`.
#[inline]
pub fn sigma_t(sig_p: f64, temperature: f64, m: &MaterialModel) -> f64 {
    sig_p * (1.0 + m.chi * (temperature - m.t0))
}
