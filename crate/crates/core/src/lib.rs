//! Dynamic tissue electroporation simulation: Debye dispersion, pore
//! kinetics, Joule heating and an axisymmetric field solver.

pub mod compare;
pub mod config;
pub mod dispersion;
pub mod electroporation;
pub mod error;
pub mod fit;
pub mod fem;
pub mod linalg;
pub mod lumped;
pub mod material;
pub mod mesh;
pub mod protocol;
pub mod thermal;
pub mod trace;

pub use compare::{compare, CompareReport};
pub use config::{FitConfig, Manifest, RunConfig, SolverKind, REFERENCE_DELTA_T, REFERENCE_FIELDS};
pub use dispersion::{AdeState, LinearStepCoefficients};
pub use electroporation::{PoreConcentrations, PoreState};
pub use error::{Error, Result};
pub use fit::{fit, FitOptions, FitProblem, FitReport, FitTrace, FreeParam};
pub use fem::{run_protocol, FemOptions, RunDiagnostics, RunOutput, Simulator, StepController, SystemState};
pub use lumped::{lumped_run, lumped_trace, LumpedState, ORACLE_DT};
pub use material::{DebyePole, EpField, EpParams, MaterialModel};
pub use mesh::{build_geometry, AxiGeometry, Mesh, MeshOptions};
pub use protocol::PulseProtocol;
pub use thermal::{ThermalField, ThermalMode};
pub use trace::{MeasuredTrace, SimTrace, TraceMeta, TraceSample};
