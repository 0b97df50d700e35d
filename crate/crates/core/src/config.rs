//! JSON run and fit configurations, reference data and run manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fem::{run_protocol, FemOptions, RunDiagnostics};
use crate::fit::{FitOptions, FreeParam, FIT_DT};
use crate::lumped::{lumped_run, ORACLE_DT};
use crate::material::{EpField, EpParams, MaterialModel};
use crate::mesh::AxiGeometry;
use crate::protocol::{PulseProtocol, DEFAULT_EDGE_TIME};
use crate::trace::SimTrace;

/// Nominal fields of the standard ESOPE sweep, V/m.
pub const REFERENCE_FIELDS: [f64; 8] = [10e3, 20e3, 30e3, 40e3, 50e3, 60e3, 80e3, 100e3];

/// Published centre temperature rise after the burst at each of
/// [`REFERENCE_FIELDS`], K.
pub const REFERENCE_DELTA_T: [f64; 8] = [0.0, 0.004, 0.025, 0.074, 0.1822, 0.3046, 0.5647, 0.8862];

/// Parses JSON, reporting errors with their line and column.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_json(&text, &path.display().to_string())
}

/// A material given by preset name, JSON file path or inline definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaterialSpec {
    Named(String),
    Inline(MaterialModel),
}

impl Default for MaterialSpec {
    fn default() -> Self {
        MaterialSpec::Named("potato_tuber".into())
    }
}

impl MaterialSpec {
    /// Paths resolve relative to `base`.
    pub fn resolve(&self, base: &Path) -> Result<MaterialModel> {
        match self {
            MaterialSpec::Inline(m) => {
                m.validate()?;
                Ok(m.clone())
            }
            MaterialSpec::Named(name) => {
                if crate::material::PRESET_NAMES.contains(&name.as_str()) {
                    MaterialModel::preset(name)
                } else {
                    MaterialModel::resolve(&base.join(name).to_string_lossy())
                }
            }
        }
    }

    /// File referenced by this spec, if any.
    pub fn file(&self, base: &Path) -> Option<PathBuf> {
        match self {
            MaterialSpec::Named(n) if !crate::material::PRESET_NAMES.contains(&n.as_str()) => Some(base.join(n)),
            _ => None,
        }
    }
}

/// Pulse train description. Defaults to the ESOPE burst; give exactly one
/// of `amplitude` (V) or `field` (V/m, multiplied by the sample height).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSpec {
    pub amplitude: Option<f64>,
    pub field: Option<f64>,
    pub pulse_width: f64,
    pub count: u32,
    pub repetition_rate: f64,
    pub rise_time: f64,
    pub fall_time: f64,
    pub post_burst_hold: f64,
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        let p = PulseProtocol::esope(0.0);
        Self {
            amplitude: None,
            field: None,
            pulse_width: p.pulse_width,
            count: p.count,
            repetition_rate: p.repetition_rate,
            rise_time: DEFAULT_EDGE_TIME,
            fall_time: DEFAULT_EDGE_TIME,
            post_burst_hold: 0.0,
        }
    }
}

impl ProtocolSpec {
    pub fn for_field(field: f64) -> Self {
        Self {
            field: Some(field),
            ..Default::default()
        }
    }

    pub fn resolve(&self, height: f64) -> Result<PulseProtocol> {
        let amplitude = match (self.amplitude, self.field) {
            (Some(a), None) => a,
            (None, Some(f)) => f * height,
            _ => {
                return Err(Error::Config(
                    "protocol needs exactly one of `amplitude` or `field`".into(),
                ))
            }
        };
        let p = PulseProtocol {
            amplitude,
            pulse_width: self.pulse_width,
            count: self.count,
            repetition_rate: self.repetition_rate,
            rise_time: self.rise_time,
            fall_time: self.fall_time,
            post_burst_hold: self.post_burst_hold,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    Fem,
    Lumped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Output directory, relative to the config file.
    pub dir: PathBuf,
    /// File name prefix; defaults to the subcommand (`run` or `fit`).
    pub prefix: Option<String>,
    pub plots: bool,
    /// Extra per-quantity CSVs (states, temperature, auxiliary fields).
    pub extra_csv: bool,
}

impl OutputSpec {
    pub fn prefix_or<'a>(&'a self, default: &'a str) -> &'a str {
        self.prefix.as_deref().unwrap_or(default)
    }
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            prefix: None,
            plots: true,
            extra_csv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub material: MaterialSpec,
    /// Electroporation parameters; defaults to those of the material.
    pub electroporation: Option<EpParams>,
    /// Disable pore kinetics entirely.
    pub disable_electroporation: bool,
    pub protocol: ProtocolSpec,
    pub geometry: AxiGeometry,
    pub solver: SolverKind,
    pub fem: FemOptions,
    /// Step of the lumped solver, s.
    pub lumped_dt: f64,
    /// Also run the other solver and report the current discrepancy.
    pub cross_check: bool,
    /// Field levels for `sweep`, V/m.
    pub sweep_fields: Vec<f64>,
    pub output: OutputSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            material: MaterialSpec::default(),
            electroporation: None,
            disable_electroporation: false,
            protocol: ProtocolSpec::for_field(100e3),
            geometry: AxiGeometry::default(),
            solver: SolverKind::Fem,
            fem: FemOptions::default(),
            lumped_dt: ORACLE_DT,
            cross_check: false,
            sweep_fields: REFERENCE_FIELDS.to_vec(),
            output: OutputSpec::default(),
        }
    }
}

/// A run configuration with files resolved.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub config: RunConfig,
    pub material: MaterialModel,
    pub ep: Option<EpParams>,
    pub base_dir: PathBuf,
    pub inputs: Vec<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        parse_json(text, origin)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }

    pub fn resolve(&self, base_dir: &Path) -> Result<ResolvedRun> {
        self.geometry.validate()?;
        self.fem.controller.validate()?;
        if !(self.lumped_dt > 0.0) {
            return Err(Error::Config("lumped_dt must be positive".into()));
        }
        let material = self.material.resolve(base_dir)?;
        let ep = if self.disable_electroporation {
            None
        } else {
            match self.electroporation {
                Some(ep) => {
                    ep.validate()?;
                    Some(ep)
                }
                None => material.ep,
            }
        };
        self.protocol.resolve(self.geometry.sample_height)?;
        Ok(ResolvedRun {
            config: self.clone(),
            material,
            ep,
            base_dir: base_dir.to_path_buf(),
            inputs: self.material.file(base_dir).into_iter().collect(),
        })
    }
}

/// Result of one simulation.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    /// Output trace, resampled when the configuration asks for it.
    pub trace: SimTrace,
    /// Every solver step.
    pub raw: SimTrace,
    pub diagnostics: Option<RunDiagnostics>,
}

impl ResolvedRun {
    pub fn protocol(&self) -> Result<PulseProtocol> {
        self.config.protocol.resolve(self.config.geometry.sample_height)
    }

    /// Runs `solver` on `protocol`.
    pub fn simulate(&self, solver: SolverKind, protocol: &PulseProtocol) -> Result<SimOutcome> {
        let c = &self.config;
        let (raw, diagnostics) = match solver {
            SolverKind::Fem => {
                let opts = FemOptions {
                    output_dt: None,
                    ..c.fem
                };
                let out = run_protocol(&c.geometry, &self.material, self.ep.as_ref(), protocol, &opts)?;
                (out.trace, Some(out.diagnostics))
            }
            SolverKind::Lumped => {
                let tr = lumped_run(&self.material, self.ep.as_ref(), protocol, &c.geometry, c.lumped_dt, None)?;
                (tr, None)
            }
        };
        let trace = match c.fem.output_dt {
            Some(d) => raw.resample(d),
            None => raw.clone(),
        };
        Ok(SimOutcome {
            trace,
            raw,
            diagnostics,
        })
    }
}

/// One measured trace in a fit configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitTraceSpec {
    /// `t,U,I` CSV, relative to the config file.
    pub path: PathBuf,
    pub protocol: ProtocolSpec,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

/// Synthetic measurements generated from the starting parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub fields: Vec<f64>,
    pub noise: f64,
    pub seed: u64,
    pub sample_dt: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            fields: REFERENCE_FIELDS.to_vec(),
            noise: 0.01,
            seed: 11,
            sample_dt: 0.5e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub material: MaterialSpec,
    /// Starting (and frozen) parameter values; defaults to the material's.
    pub start: Option<EpParams>,
    /// Free parameters with bounds; empty means all twelve with bounds
    /// `[0.5, 2] ×` the start value. Use `[]` together with
    /// `frozen = true` for a pure objective evaluation.
    pub free: Vec<FreeParam>,
    pub frozen: bool,
    pub traces: Vec<FitTraceSpec>,
    pub synthetic: Option<SyntheticSpec>,
    pub geometry: AxiGeometry,
    pub dt: f64,
    pub options: FitOptions,
    /// Re-run the field solver with the fitted parameters.
    pub validate_fem: bool,
    pub output: OutputSpec,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            material: MaterialSpec::default(),
            start: None,
            free: Vec::new(),
            frozen: false,
            traces: Vec::new(),
            synthetic: None,
            geometry: AxiGeometry::default(),
            dt: FIT_DT,
            options: FitOptions::default(),
            validate_fem: true,
            output: OutputSpec::default(),
        }
    }
}

impl FitConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }

    pub fn start_params(&self, material: &MaterialModel) -> Result<EpParams> {
        match (self.start, material.ep) {
            (Some(ep), _) | (None, Some(ep)) => {
                ep.validate()?;
                Ok(ep)
            }
            (None, None) => Err(Error::Config(
                "fit needs starting electroporation parameters (`start` or a material with `ep`)".into(),
            )),
        }
    }

    pub fn free_params(&self, start: &EpParams) -> Vec<FreeParam> {
        if self.frozen {
            Vec::new()
        } else if self.free.is_empty() {
            EpField::ALL.iter().map(|&f| FreeParam::scaled(f, start, 0.5, 2.0)).collect()
        } else {
            self.free.clone()
        }
    }
}

/// Git-style content hash: SHA-256 of `"blob <len>\0" + content`, hex.
pub fn git_blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

/// Reproducibility record written next to every run's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            tool: "epsim".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            summary: serde_json::Value::Null,
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.inputs.push(InputHash {
            path: path.display().to_string(),
            sha256: git_blob_hash(&bytes),
        });
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git_convention() {
        // sha256 of "blob 0\0"
        assert_eq!(
            git_blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
        assert_ne!(git_blob_hash(b"a"), git_blob_hash(b"b"));
    }

    #[test]
    fn defaults_parse_from_empty_object() {
        let c = RunConfig::from_json("{}", "inline").unwrap();
        assert_eq!(c, RunConfig::default());
        let r = c.resolve(Path::new(".")).unwrap();
        assert_eq!(r.protocol().unwrap().amplitude, 500.0);
        assert!(r.ep.is_some());
    }

    #[test]
    fn errors_carry_line_and_column() {
        let text = "{\n  \"solver\": \"fem\",\n  \"protocol\": {\"count\": \"eight\"}\n}";
        let err = RunConfig::from_json(text, "cfg.json").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let err = RunConfig::from_json("{\"bogus\": 1}", "cfg.json").unwrap_err().to_string();
        assert!(err.contains("bogus") && err.contains("line 1"), "{err}");
    }

    #[test]
    fn protocol_needs_one_amplitude_source() {
        let both = ProtocolSpec {
            amplitude: Some(1.0),
            field: Some(1.0),
            ..Default::default()
        };
        assert!(both.resolve(5e-3).is_err());
        assert!(ProtocolSpec::default().resolve(5e-3).is_err());
        let p = ProtocolSpec::for_field(40e3).resolve(5e-3).unwrap();
        assert_eq!(p.amplitude, 200.0);
    }

    #[test]
    fn reference_tables_line_up() {
        assert_eq!(REFERENCE_FIELDS.len(), REFERENCE_DELTA_T.len());
        assert!(REFERENCE_DELTA_T.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn fit_defaults_free_all_parameters() {
        let c = FitConfig::default();
        let ep = EpParams::potato_tuber();
        assert_eq!(c.free_params(&ep).len(), 12);
        let frozen = FitConfig {
            frozen: true,
            ..FitConfig::default()
        };
        assert!(frozen.free_params(&ep).is_empty());
    }
}
