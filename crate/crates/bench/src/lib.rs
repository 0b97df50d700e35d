//! Fixtures shared by the benchmarks.

use epsim_core::{build_geometry, AxiGeometry, Mesh, MeshOptions, PulseProtocol};

/// Default sample mesh at the given refinement.
pub fn sample_mesh(refinement: usize) -> Mesh {
    let opts = MeshOptions {
        refinement,
        ..MeshOptions::default()
    };
    build_geometry(&AxiGeometry::default(), &opts).expect("default geometry meshes")
}

/// A single ESOPE pulse at `field` V/m.
pub fn single_pulse(field: f64) -> PulseProtocol {
    let mut p = PulseProtocol::esope_for_field(field, AxiGeometry::default().sample_height);
    p.count = 1;
    p
}
