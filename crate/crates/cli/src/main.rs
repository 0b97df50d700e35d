mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use epsim_core::compare::{pointwise_discrepancy, Discrepancy};
use epsim_core::config::{parse_json, ProtocolSpec, ResolvedRun, REFERENCE_DELTA_T, REFERENCE_FIELDS};
use epsim_core::dispersion::{log_spaced, sinusoidal_admittance_check};
use epsim_core::fit::synthetic_traces;
use epsim_core::mesh::mesh_quality;
use epsim_core::{
    build_geometry, compare, fit, run_protocol, Error, FemOptions, FitConfig, FitProblem, FitTrace, Manifest,
    MaterialModel, MeasuredTrace, PulseProtocol, Result, RunConfig, SimTrace, SolverKind, AxiGeometry,
};
use serde::Serialize;
use serde_json::json;

/// Largest FEM/lumped current discrepancy accepted by a cross-check.
const CROSS_CHECK_TOL: f64 = 0.02;

/// Largest admittance error accepted by `dispersion-check`.
const ADMITTANCE_TOL: f64 = 5e-3;

#[derive(Parser)]
#[command(name = "epsim", version, about = "Electroporation of dispersive tissue under pulsed fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Fem,
    Lumped,
}

impl From<Solver> for SolverKind {
    fn from(s: Solver) -> Self {
        match s {
            Solver::Fem => SolverKind::Fem,
            Solver::Lumped => SolverKind::Lumped,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one pulse protocol.
    Run {
        config: PathBuf,
        /// Overrides the solver of the config.
        #[arg(long, value_enum)]
        solver: Option<Solver>,
        /// Also run the other solver and report the current discrepancy.
        #[arg(long)]
        cross_check: bool,
        /// Output directory (default: from the config, relative to it).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the protocol at several field levels and tabulate the heating.
    Sweep {
        config: PathBuf,
        /// Field levels in V/m, comma separated (default: from the config).
        #[arg(long, value_delimiter = ',')]
        fields: Vec<f64>,
        #[arg(long, value_enum)]
        solver: Option<Solver>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit electroporation parameters to measured or synthetic traces.
    Fit {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a simulated trace with a measured `t,U,I` trace.
    Compare {
        sim: PathBuf,
        meas: PathBuf,
        /// ESOPE field level in V/m, enables the per-pulse plateau table.
        #[arg(long, conflicts_with = "protocol")]
        field: Option<f64>,
        /// Protocol JSON (same schema as the `protocol` entry of a run config).
        #[arg(long)]
        protocol: Option<PathBuf>,
        /// Sample height used to turn a field into a voltage, m.
        #[arg(long, default_value_t = AxiGeometry::default().sample_height)]
        height: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value = "compare")]
        prefix: String,
    },
    /// Write the mesh of a run config as JSON and SVG.
    MeshDump {
        /// Run config (default: built-in geometry).
        config: Option<PathBuf>,
        #[arg(long)]
        refinement: Option<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value = "mesh")]
        prefix: String,
    },
    /// Check the time-domain dispersion against its frequency response.
    DispersionCheck {
        /// Preset name or material JSON file.
        #[arg(long, default_value = "potato_tuber")]
        material: String,
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[arg(long, default_value_t = 40.0)]
        f_min: f64,
        #[arg(long, default_value_t = 10e6)]
        f_max: f64,
        #[arg(long, default_value_t = 10)]
        cycles: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) => 3,
        Error::Fit(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = std::env::args().skip(1).collect::<Vec<_>>().join(" ");
    let result = match cli.command {
        Command::Run {
            config,
            solver,
            cross_check,
            out,
        } => run_cmd(&config, solver.map(Into::into), cross_check, out, &command),
        Command::Sweep {
            config,
            fields,
            solver,
            out,
        } => sweep_cmd(&config, &fields, solver.map(Into::into), out, &command),
        Command::Fit { config, out } => fit_cmd(&config, out, &command),
        Command::Compare {
            sim,
            meas,
            field,
            protocol,
            height,
            out,
            prefix,
        } => compare_cmd(&sim, &meas, field, protocol.as_deref(), height, &out, &prefix),
        Command::MeshDump {
            config,
            refinement,
            out,
            prefix,
        } => mesh_cmd(config.as_deref(), refinement, &out, &prefix),
        Command::DispersionCheck {
            material,
            points,
            f_min,
            f_max,
            cycles,
            out,
        } => dispersion_cmd(&material, points, f_min, f_max, cycles, out.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn output_dir(base: &Path, configured: &Path, over: Option<PathBuf>) -> Result<PathBuf> {
    let dir = over.unwrap_or_else(|| base.join(configured));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_run(path: &Path) -> Result<(RunConfig, ResolvedRun)> {
    let cfg = RunConfig::load(path)?;
    let resolved = cfg.resolve(&config_dir(path))?;
    Ok((cfg, resolved))
}

fn new_manifest(command: &str, config: &impl Serialize, config_path: &Path, run: Option<&ResolvedRun>) -> Result<Manifest> {
    let mut m = Manifest::new(command, config)?;
    m.add_input(config_path)?;
    if let Some(r) = run {
        for p in &r.inputs {
            m.add_input(p)?;
        }
    }
    Ok(m)
}

/// Writes the trace CSV, the optional extra CSVs and the plots.
fn write_trace(trace: &SimTrace, run: &ResolvedRun, dir: &Path, prefix: &str) -> Result<Vec<String>> {
    let mut files = Vec::new();
    let name = format!("{prefix}_trace.csv");
    trace.write_csv(dir.join(&name))?;
    files.push(name);
    let out = &run.config.output;
    if out.extra_csv {
        let name = format!("{prefix}_states.csv");
        trace.write_states_csv(dir.join(&name))?;
        files.push(name);
        let name = format!("{prefix}_temperature.csv");
        trace.write_temperature_csv(dir.join(&name))?;
        files.push(name);
        if trace.aux.is_some() {
            let name = format!("{prefix}_aux.csv");
            trace.write_aux_csv(dir.join(&name))?;
            files.push(name);
        }
    }
    if out.plots {
        files.extend(plot::trace_plots(trace, dir, prefix)?);
    }
    Ok(files)
}

#[derive(Serialize)]
struct CrossCheck {
    reference: &'static str,
    discrepancy: Discrepancy,
    tolerance: f64,
    passed: bool,
}

fn cross_check(run: &ResolvedRun, solver: SolverKind, raw: &SimTrace, protocol: &PulseProtocol) -> Result<CrossCheck> {
    // FEM steps are compared against the finely stepped lumped trace
    let (fem, lumped) = match solver {
        SolverKind::Fem => (raw.clone(), run.simulate(SolverKind::Lumped, protocol)?.raw),
        SolverKind::Lumped => (run.simulate(SolverKind::Fem, protocol)?.raw, raw.clone()),
    };
    let d = pointwise_discrepancy(&fem, &lumped, protocol);
    Ok(CrossCheck {
        reference: "lumped",
        discrepancy: d,
        tolerance: CROSS_CHECK_TOL,
        passed: d.max_rel <= CROSS_CHECK_TOL,
    })
}

fn run_cmd(path: &Path, solver: Option<SolverKind>, force_check: bool, out: Option<PathBuf>, command: &str) -> Result<u8> {
    let (cfg, run) = load_run(path)?;
    let solver = solver.unwrap_or(cfg.solver);
    let dir = output_dir(&config_dir(path), &cfg.output.dir, out)?;
    let prefix = cfg.output.prefix_or("run");
    let protocol = run.protocol()?;
    let outcome = run.simulate(solver, &protocol)?;

    let mut manifest = new_manifest(command, &cfg, path, Some(&run))?;
    manifest.outputs = write_trace(&outcome.trace, &run, &dir, prefix)?;

    let check = if cfg.cross_check || force_check {
        let c = cross_check(&run, solver, &outcome.raw, &protocol)?;
        let name = format!("{prefix}_crosscheck.json");
        std::fs::write(dir.join(&name), serde_json::to_string_pretty(&c)? + "\n")?;
        manifest.outputs.push(name);
        println!(
            "cross-check: max discrepancy {:.3}% at t = {:.2} us ({})",
            100.0 * c.discrepancy.max_rel,
            c.discrepancy.at * 1e6,
            if c.passed { "ok" } else { "above tolerance" }
        );
        Some(c)
    } else {
        None
    };

    let tr = &outcome.trace;
    manifest.summary = json!({
        "solver": solver,
        "protocol": protocol,
        "samples": tr.len(),
        "final_delta_t": tr.final_delta_t(),
        "max_sigma_app": tr.max_sigma_app(),
        "diagnostics": outcome.diagnostics,
        "cross_check": check,
    });
    let name = format!("{prefix}_manifest.json");
    manifest.outputs.push(name.clone());
    manifest.write(dir.join(&name))?;
    println!(
        "{} samples, final dT = {:.5} K, max sigma = {:.4} S/m -> {}",
        tr.len(),
        tr.final_delta_t(),
        tr.max_sigma_app(),
        dir.display()
    );
    Ok(0)
}

fn field_tag(field: f64) -> String {
    let kv = field / 1e3;
    if kv.fract() == 0.0 {
        format!("{kv:.0}kVm")
    } else {
        format!("{kv}kVm").replace('.', "p")
    }
}

fn reference_delta_t(field: f64) -> Option<f64> {
    REFERENCE_FIELDS.iter().position(|&f| f == field).map(|k| REFERENCE_DELTA_T[k])
}

fn sweep_cmd(path: &Path, fields: &[f64], solver: Option<SolverKind>, out: Option<PathBuf>, command: &str) -> Result<u8> {
    let (cfg, run) = load_run(path)?;
    let solver = solver.unwrap_or(cfg.solver);
    let dir = output_dir(&config_dir(path), &cfg.output.dir, out)?;
    let prefix = cfg.output.prefix_or("run");
    let fields = if fields.is_empty() { cfg.sweep_fields.clone() } else { fields.to_vec() };
    if fields.is_empty() {
        return Err(Error::Config("sweep needs at least one field level".into()));
    }
    let mut manifest = new_manifest(command, &cfg, path, Some(&run))?;
    let mut rows = Vec::new();
    let mut summary = csv::Writer::from_path(dir.join(format!("{prefix}_summary.csv")))?;
    summary.write_record([
        "field",
        "delta_t_final",
        "delta_t_reference",
        "rel_diff",
        "max_sigma_app",
        "peak_current",
    ])?;
    for &field in &fields {
        let spec = ProtocolSpec {
            amplitude: None,
            field: Some(field),
            ..cfg.protocol
        };
        let protocol = spec.resolve(cfg.geometry.sample_height)?;
        let outcome = run.simulate(solver, &protocol)?;
        let tr = &outcome.trace;
        manifest
            .outputs
            .extend(write_trace(tr, &run, &dir, &format!("{prefix}_{}", field_tag(field)))?);
        let dt = tr.final_delta_t();
        let reference = reference_delta_t(field);
        let rel = reference.filter(|&r| r > 0.0).map(|r| (dt - r) / r);
        let peak = tr.samples.iter().map(|s| s.i.abs()).fold(0.0, f64::max);
        summary.write_record([
            field.to_string(),
            dt.to_string(),
            reference.map_or(String::new(), |r| r.to_string()),
            rel.map_or(String::new(), |r| r.to_string()),
            tr.max_sigma_app().to_string(),
            peak.to_string(),
        ])?;
        println!(
            "{:>6.1} kV/m: dT = {:.5} K{}",
            field / 1e3,
            dt,
            reference.map_or(String::new(), |r| format!(" (reference {r})"))
        );
        rows.push(json!({
            "field": field,
            "delta_t_final": dt,
            "delta_t_reference": reference,
            "max_sigma_app": tr.max_sigma_app(),
            "diagnostics": outcome.diagnostics,
        }));
    }
    summary.flush()?;
    manifest.outputs.push(format!("{prefix}_summary.csv"));
    if cfg.output.plots && fields.len() > 1 {
        let name = format!("{prefix}_summary.svg");
        let sim: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (r["field"].as_f64().unwrap() / 1e3, r["delta_t_final"].as_f64().unwrap()))
            .collect();
        let reference: Vec<(f64, f64)> = fields
            .iter()
            .filter_map(|&f| reference_delta_t(f).map(|r| (f / 1e3, r)))
            .collect();
        let mut series = vec![("simulated", sim)];
        if !reference.is_empty() {
            series.push(("reference", reference));
        }
        plot::line_chart(&dir.join(&name), "Temperature rise after the burst", "E [kV/m]", "dT [K]", &series)?;
        manifest.outputs.push(name);
    }
    manifest.summary = json!({ "solver": solver, "levels": rows });
    let name = format!("{prefix}_manifest.json");
    manifest.outputs.push(name.clone());
    manifest.write(dir.join(&name))?;
    Ok(0)
}

#[derive(Serialize)]
struct FemValidation {
    trace: usize,
    rel_l2_vs_measured: f64,
    lumped_discrepancy: Discrepancy,
}

fn fit_cmd(path: &Path, out: Option<PathBuf>, command: &str) -> Result<u8> {
    let cfg = FitConfig::load(path)?;
    let base = config_dir(path);
    cfg.geometry.validate()?;
    let material = cfg.material.resolve(&base)?;
    let start = cfg.start_params(&material)?;
    let dir = output_dir(&base, &cfg.output.dir, out)?;
    let prefix = cfg.output.prefix_or("fit");
    let mut manifest = new_manifest(command, &cfg, path, None)?;
    if let Some(f) = cfg.material.file(&base) {
        manifest.add_input(&f)?;
    }

    let mut traces = Vec::new();
    for spec in &cfg.traces {
        let file = base.join(&spec.path);
        manifest.add_input(&file)?;
        traces.push(FitTrace {
            measured: MeasuredTrace::read_csv(&file)?,
            protocol: spec.protocol.resolve(cfg.geometry.sample_height)?,
            weight: spec.weight,
        });
    }
    if let Some(s) = &cfg.synthetic {
        traces.extend(synthetic_traces(
            &material,
            &start,
            &s.fields,
            &cfg.geometry,
            s.sample_dt,
            s.noise,
            s.seed,
        )?);
    }
    let problem = FitProblem {
        material: material.clone(),
        start,
        free: cfg.free_params(&start),
        traces,
        geometry: cfg.geometry,
        dt: cfg.dt,
    };
    let report = fit(&problem, &cfg.options)?;

    let name = format!("{prefix}_params.json");
    std::fs::write(dir.join(&name), serde_json::to_string_pretty(&report.params)? + "\n")?;
    manifest.outputs.push(name);

    let name = format!("{prefix}_log.csv");
    let mut log = csv::Writer::from_path(dir.join(&name))?;
    log.write_record(["seed", "evals", "best"])?;
    for e in &report.log {
        log.write_record([e.seed.to_string(), e.evals.to_string(), e.best.to_string()])?;
    }
    log.flush()?;
    manifest.outputs.push(name);

    let mut validation = Vec::new();
    if cfg.validate_fem {
        for (k, tr) in problem.traces.iter().enumerate() {
            let opts = FemOptions {
                output_dt: None,
                ..FemOptions::default()
            };
            let fem = run_protocol(&cfg.geometry, &material, Some(&report.params), &tr.protocol, &opts)?.trace;
            let lumped = epsim_core::lumped_trace(
                &material,
                Some(&report.params),
                &tr.protocol,
                &cfg.geometry,
                epsim_core::ORACLE_DT,
            )?;
            let c = compare(&fem, &tr.measured, Some(&tr.protocol))?;
            validation.push(FemValidation {
                trace: k,
                rel_l2_vs_measured: c.rel_l2,
                lumped_discrepancy: pointwise_discrepancy(&fem, &lumped, &tr.protocol),
            });
            if cfg.output.plots {
                let name = format!("{prefix}_trace{k}.svg");
                let meas: Vec<(f64, f64)> = tr.measured.t.iter().zip(&tr.measured.i).map(|(t, i)| (t * 1e6, *i)).collect();
                let sim: Vec<(f64, f64)> = fem.samples.iter().map(|s| (s.t * 1e6, s.i)).collect();
                plot::line_chart(
                    &dir.join(&name),
                    &format!("Trace {k}: measured and fitted"),
                    "t [us]",
                    "I [A]",
                    &[("measured", meas), ("fitted (field solver)", sim)],
                )?;
                manifest.outputs.push(name);
            }
        }
    }

    let name = format!("{prefix}_report.json");
    let body = json!({ "fit": report, "fem_validation": validation });
    std::fs::write(dir.join(&name), serde_json::to_string_pretty(&body)? + "\n")?;
    manifest.outputs.push(name);

    manifest.summary = json!({
        "objective": report.objective,
        "evaluations": report.evaluations,
        "free": problem.free.len(),
        "traces": problem.traces.len(),
        "insensitive": report.insensitive(),
    });
    let name = format!("{prefix}_manifest.json");
    manifest.outputs.push(name.clone());
    manifest.write(dir.join(&name))?;

    println!("objective {:.4e} after {} evaluations", report.objective, report.evaluations);
    for p in &problem.free {
        let s = report.sensitivity.iter().find(|s| s.field == p.field);
        println!(
            "  {:<6} {:>12.5e}  (start {:.5e}){}",
            p.field.to_string(),
            report.params.get(p.field),
            start.get(p.field),
            if s.is_some_and(|s| s.insensitive) { "  insensitive" } else { "" }
        );
    }
    Ok(0)
}

fn compare_cmd(
    sim_path: &Path,
    meas_path: &Path,
    field: Option<f64>,
    protocol_path: Option<&Path>,
    height: f64,
    dir: &Path,
    prefix: &str,
) -> Result<u8> {
    let sim = SimTrace::read_csv(sim_path, 0.0)?;
    let meas = MeasuredTrace::read_csv(meas_path)?;
    let protocol = match (field, protocol_path) {
        (Some(f), _) => Some(PulseProtocol::esope_for_field(f, height)),
        (None, Some(p)) => {
            let text = std::fs::read_to_string(p)?;
            let spec: ProtocolSpec = parse_json(&text, &p.display().to_string())?;
            Some(spec.resolve(height)?)
        }
        (None, None) => None,
    };
    let report = compare(&sim, &meas, protocol.as_ref())?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join(format!("{prefix}_report.json")),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    let mut w = csv::Writer::from_path(dir.join(format!("{prefix}_residuals.csv")))?;
    w.write_record(["t", "residual"])?;
    for [t, r] in &report.residuals {
        w.write_record([t.to_string(), r.to_string()])?;
    }
    w.flush()?;
    println!(
        "relative L2 error {:.4}% over {} samples, max |dI| = {:.4e} A",
        100.0 * report.rel_l2,
        report.samples,
        report.max_abs
    );
    for row in &report.plateaus {
        println!(
            "  pulse {}: sim {:.5e} A, meas {:.5e} A ({:+.3}%)",
            row.pulse,
            row.simulated,
            row.measured,
            100.0 * row.rel_diff
        );
    }
    Ok(0)
}

fn mesh_cmd(config: Option<&Path>, refinement: Option<usize>, dir: &Path, prefix: &str) -> Result<u8> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut opts = cfg.fem.mesh;
    if let Some(r) = refinement {
        opts.refinement = r;
    }
    let mesh = build_geometry(&cfg.geometry, &opts)?;
    std::fs::create_dir_all(dir)?;
    mesh.write_json(dir.join(format!("{prefix}.json")))?;
    plot::mesh_plot(&mesh, &dir.join(format!("{prefix}.svg")))?;
    let q = mesh_quality(&mesh);
    println!(
        "{} nodes, {} elements, min angle {:.1} deg, max aspect {:.2}, bandwidth {}",
        mesh.nodes.len(),
        mesh.elements.len(),
        q.min_angle_deg,
        q.max_aspect_ratio,
        mesh.bandwidth()
    );
    if !q.passed() {
        return Err(Error::Geometry("mesh fails the quality limits".into()));
    }
    Ok(0)
}

fn dispersion_cmd(material: &str, points: usize, f_min: f64, f_max: f64, cycles: u32, out: Option<&Path>) -> Result<u8> {
    let m = MaterialModel::resolve(material)?;
    if points == 0 || !(f_min > 0.0 && f_max >= f_min) {
        return Err(Error::Config("need points > 0 and 0 < f-min <= f-max".into()));
    }
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for f in log_spaced(f_min, f_max, points) {
        let r = sinusoidal_admittance_check(&m, f, cycles)?;
        println!(
            "{:>12.4e} Hz  measured {:.6e}{:+.6e}j  expected {:.6e}{:+.6e}j  error {:.4}%",
            f,
            r.measured.re,
            r.measured.im,
            r.expected.re,
            r.expected.im,
            100.0 * r.rel_error
        );
        worst = worst.max(r.rel_error);
        rows.push(r);
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("dispersion_check.csv"))?;
        w.write_record(["freq", "measured_re", "measured_im", "expected_re", "expected_im", "rel_error"])?;
        for r in &rows {
            w.write_record(
                [r.freq, r.measured.re, r.measured.im, r.expected.re, r.expected.im, r.rel_error].map(|v| v.to_string()),
            )?;
        }
        w.flush()?;
    }
    if worst > ADMITTANCE_TOL {
        eprintln!("worst admittance error {:.4}% exceeds {:.1}%", 100.0 * worst, 100.0 * ADMITTANCE_TOL);
        return Ok(3);
    }
    Ok(0)
}
