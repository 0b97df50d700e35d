use epsim_core::fit::{synthetic_traces, FIT_DT};
use epsim_core::{
    compare, fit, lumped_trace, run_protocol, AxiGeometry, EpField, EpParams, Error, FemOptions, FitOptions,
    FitProblem, FitTrace, FreeParam, MaterialModel, MeasuredTrace, PulseProtocol, ORACLE_DT,
};

fn problem(fields: &[f64], noise: f64, free: &[EpField]) -> FitProblem {
    let m = MaterialModel::potato_tuber();
    let ep = EpParams::potato_tuber();
    let g = AxiGeometry::default();
    let traces = synthetic_traces(&m, &ep, fields, &g, 0.5e-6, noise, 3).unwrap();
    FitProblem {
        material: m,
        start: ep,
        free: free.iter().map(|&f| FreeParam::scaled(f, &ep, 0.5, 2.0)).collect(),
        traces,
        geometry: g,
        dt: FIT_DT,
    }
}

#[test]
fn objective_ignores_trace_order() {
    let mut p = problem(&[20e3, 50e3, 100e3], 0.01, &[]);
    p.traces[0].weight = 0.5;
    p.traces[2].weight = 3.0;
    let mut ep = p.start;
    ep.e0 *= 1.1;
    ep.sig_p1 *= 0.8;
    let a = p.objective(&ep).unwrap();
    p.traces.rotate_left(1);
    let b = p.objective(&ep).unwrap();
    p.traces.reverse();
    let c = p.objective(&ep).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(a.to_bits(), c.to_bits());
}

#[test]
fn objective_ignores_uniform_weight_scaling() {
    let mut p = problem(&[30e3, 80e3], 0.01, &[]);
    let mut ep = p.start;
    ep.e1 *= 1.2;
    let a = p.objective(&ep).unwrap();
    for s in [1e-3, 7.0, 1e4] {
        for t in p.traces.iter_mut() {
            t.weight *= s;
        }
        let b = p.objective(&ep).unwrap();
        assert!(((a - b) / a).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn frozen_fit_only_evaluates_the_objective() {
    let p = problem(&[60e3], 0.01, &[]);
    let opts = FitOptions::default();
    let r = fit(&p, &opts).unwrap();
    assert_eq!(r.params, p.start);
    assert_eq!(r.evaluations, opts.seeds.len());
    assert!(r.sensitivity.is_empty());
    assert_eq!(r.objective, p.objective(&p.start).unwrap());
    // 1% multiplicative noise gives a relative squared error near 1e-4
    assert!(r.objective > 5e-5 && r.objective < 2e-4, "{}", r.objective);
}

#[test]
fn noiseless_two_parameter_fit_is_exact() {
    let p = problem(&[30e3, 60e3, 100e3], 0.0, &[EpField::E0, EpField::SigP0]);
    let opts = FitOptions {
        seeds: vec![epsim_core::fit::SeedKind::Midpoint],
        ..FitOptions::default()
    };
    let r = fit(&p, &opts).unwrap();
    for f in [EpField::E0, EpField::SigP0] {
        let (got, want) = (r.params.get(f), p.start.get(f));
        assert!(((got - want) / want).abs() < 1e-3, "{f}: {got} vs {want}");
    }
    assert!(r.insensitive().is_empty());
}

#[test]
fn subthreshold_trace_flags_kinetic_parameters() {
    let p = problem(&[10e3], 0.01, &EpField::ALL);
    let opts = FitOptions {
        max_evals: 300,
        restarts: 0,
        ..FitOptions::default()
    };
    let r = fit(&p, &opts).unwrap();
    let flagged = r.insensitive();
    for f in [
        EpField::Tau0,
        EpField::Tau1G,
        EpField::Tau1D,
        EpField::Tau2G,
        EpField::Tau2D,
        EpField::SigP0,
        EpField::SigP1,
        EpField::SigP2,
    ] {
        assert!(flagged.contains(&f), "{f} not flagged: {:?}", r.sensitivity);
    }
}

#[test]
fn non_finite_measurements_fail_the_fit() {
    let mut p = problem(&[40e3], 0.0, &[EpField::E0]);
    p.traces[0].measured.i[10] = f64::NAN;
    match fit(&p, &FitOptions::default()) {
        Err(Error::Fit(msg)) => assert!(msg.contains("non-finite"), "{msg}"),
        other => panic!("expected a fit error, got {other:?}"),
    }
}

#[test]
fn problems_without_traces_or_with_bad_bounds_are_rejected() {
    let mut p = problem(&[40e3], 0.0, &[EpField::E0]);
    p.free[0].upper = p.free[0].lower;
    assert!(matches!(p.validate(), Err(Error::Fit(_))));
    let empty = FitProblem {
        traces: Vec::<FitTrace>::new(),
        ..problem(&[40e3], 0.0, &[])
    };
    assert!(matches!(empty.validate(), Err(Error::Fit(_))));
}

#[test]
fn field_solver_matches_lumped_pseudo_measurement() {
    let m = MaterialModel::potato_tuber();
    let g = AxiGeometry::default();
    let proto = PulseProtocol::esope_for_field(80e3, g.sample_height);
    let meas = MeasuredTrace::from_sim(
        &lumped_trace(&m, m.ep.as_ref(), &proto, &g, ORACLE_DT).unwrap().resample(0.5e-6),
        "oracle",
    );
    let opts = FemOptions {
        output_dt: None,
        ..FemOptions::default()
    };
    let sim = run_protocol(&g, &m, m.ep.as_ref(), &proto, &opts).unwrap().trace;
    let r = compare(&sim, &meas, Some(&proto)).unwrap();
    assert!(r.rel_l2 < 0.02, "{}", r.rel_l2);
    assert_eq!(r.plateaus.len(), 8);
    assert!(r.plateaus.iter().all(|row| row.rel_diff.abs() < 0.02));
}
