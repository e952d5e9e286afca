//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each, and exits non-zero if a criterion fails that is not listed in
//! `KNOWN_FAILING`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use cavfb_cli::{execute, parse_config, Experiment, Overrides};
use cavfb_core::kraus::{born_distribution, random_equivalence};
use cavfb_core::metrology::thin_emissions;
use cavfb_core::{
    amplitude_trace, annihilation_op, apply_jump, build_conditional_generator, build_effective_state, equivalence_check,
    estimate_g2, fit_scaling, make_coherent_state, make_feedback_rule, postselect, run_ensemble, run_trajectory,
    sequential_distribution, Averaging, Backend, CoherentAmplitude, DecayRate, FockOperator, LindbladGenerator,
    Observable, RecordMode, SimConfig, TruncationDim,
};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Criteria whose failure is understood and documented in the README.
const KNOWN_FAILING: &[usize] = &[5];

type Criterion = (usize, &'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn dim(d: usize) -> TruncationDim {
    TruncationDim::new(d).unwrap()
}

fn amp(r: f64, theta: f64) -> CoherentAmplitude {
    CoherentAmplitude::new(r, theta).unwrap()
}

fn oracle_config(feedback: bool) -> SimConfig {
    SimConfig {
        dim: dim(30),
        alpha0: amp(1.0, 0.0),
        phi: if feedback { PI / 2.0 } else { 0.0 },
        feedback_magnitude: if feedback { 1.0 } else { 0.0 },
        feedback_direction: None,
        kappa: DecayRate::new(1.0).unwrap(),
        dt: 0.01,
        n_steps: 200,
        leakage_budget: None,
        backend: Backend::Fock,
        record: RecordMode::Full,
    }
}

fn criterion_1() -> Verdict {
    let times = [0.25, 0.5, 1.0, 2.0];
    let mut parts = Vec::new();
    let mut pass = true;
    for feedback in [false, true] {
        let cfg = oracle_config(feedback);
        let ens = run_ensemble(&cfg, 10_000, 11).unwrap();
        let gen = LindbladGenerator::for_config(&cfg).unwrap();
        let report = equivalence_check(&ens, &gen, &Observable::ALL, &times).unwrap();
        pass &= report.passed() && report.rows.len() == 12;
        parts.push(format!(
            "{}: max |z| = {:.2}",
            if feedback { "feedback" } else { "no feedback" },
            report.max_abs_z()
        ));
    }
    Verdict::new(pass, parts.join(", "))
}

fn criterion_2() -> Verdict {
    let d = dim(60);
    let prep = make_coherent_state(amp(2.0, 0.0), d);
    let g = build_conditional_generator(FockOperator::zero(d), annihilation_op(d), DecayRate::new(1.0).unwrap()).unwrap();
    let after = apply_jump(&g, None, &prep.state).unwrap();
    let fid = after.fidelity(&prep.state).unwrap();
    Verdict::new(fid > 1.0 - 1e-6, format!("fidelity = 1 - {:.2e}", 1.0 - fid))
}

fn criterion_3() -> Verdict {
    let d = dim(60);
    let prep = make_coherent_state(amp(2.0, 0.0), d);
    let g = build_conditional_generator(FockOperator::zero(d), annihilation_op(d), DecayRate::new(1.0).unwrap()).unwrap();
    let fb = make_feedback_rule(PI, 2.0, d).unwrap();
    let post_jump_n = apply_jump(&g, Some(&fb), &prep.state).unwrap().mean_photon_number();

    let base = SimConfig {
        dim: d,
        leakage_budget: None,
        ..SimConfig::fig3(PI)
    };
    // A one-step run consumes the same random stream as step 0 of a long run.
    let emitters: Vec<u64> = (0..2000u64)
        .filter(|&s| run_trajectory(&base.with_steps(1), s).unwrap().emitted(0))
        .collect();
    let long = base.with_steps(10_000);
    let mut max_n = post_jump_n;
    let mut later = 0usize;
    for &s in &emitters {
        let rec = run_trajectory(&long, s).unwrap();
        later += rec.emission_count() - 1;
        max_n = rec.n_trace.iter().copied().fold(max_n, f64::max);
    }
    Verdict::new(
        !emitters.is_empty() && post_jump_n < 1e-8 && max_n < 1e-8 && later == 0,
        format!(
            "post-jump <n> = {post_jump_n:.1e}, {} emitting seeds, max <n> = {max_n:.1e}, later emissions = {later}",
            emitters.len()
        ),
    )
}

fn criterion_4() -> Verdict {
    let grid: Vec<usize> = (1..=10).map(|i| 50 * i - 1).collect(); // t = 0.5, 1.0, ..., 5.0
    let mut curves = BTreeMap::new();
    for frac in [0.96, 0.98, 1.0] {
        let cfg = SimConfig {
            backend: Backend::Coherent,
            record: RecordMode::Thin,
            ..SimConfig::fig3(frac * PI)
        };
        let ens = run_ensemble(&cfg, 10_000, 4).unwrap();
        let trace = amplitude_trace(&postselect(&ens).unwrap(), Averaging::ModulusOfMean).unwrap();
        curves.insert((frac * 100.0).round() as u32, trace);
    }
    let reference = &curves[&100];
    let flat = reference.iter().take_while(|(t, _)| *t <= 5.0 + 1e-9).all(|(_, a)| *a < 1e-3);
    let mut pass = flat;
    let mut parts = vec![format!("phi=pi below 1e-3: {flat}")];
    for key in [96u32, 98] {
        let c = &curves[&key];
        let crossing = c.iter().find(|(t, a)| *t < 5.0 && *a > 0.1).map(|(t, _)| *t);
        let gaps: Vec<f64> = grid.iter().map(|&k| (c[k].1 / reference[k].1).ln()).collect();
        let separating = gaps.windows(2).all(|w| w[1] > w[0]);
        pass &= crossing.is_some() && separating;
        parts.push(format!(
            "0.{key}pi crosses 0.1 at t = {}, log-gap increasing: {separating}",
            crossing.map_or("never".into(), |t| format!("{t:.2}"))
        ));
    }
    Verdict::new(pass, parts.join("; "))
}

fn criterion_5() -> Verdict {
    let cfg = parse_config("", Some(Experiment::Scaling), &Overrides::default()).unwrap();
    let fit = fit_scaling(&cfg.sim, &cfg.scan.n_list, cfg.scan.dphi, cfg.n_traj, cfg.master_seed, cfg.scan.phase).unwrap();
    let in_band = (-0.85..=-0.55).contains(&fit.exponent);
    Verdict::new(
        in_band && fit.surpasses_sql(),
        format!(
            "exponent = {:.3} +/- {:.3} over N = {:?}, band [-0.85, -0.55]: {in_band}, below -0.5 by 2 sigma: {}",
            fit.exponent,
            fit.exponent_err,
            cfg.scan.n_list,
            fit.surpasses_sql()
        ),
    )
}

fn criterion_6() -> Verdict {
    let cfg = SimConfig {
        feedback_magnitude: 0.0,
        backend: Backend::Coherent,
        record: RecordMode::Emissions,
        ..SimConfig::fig3(PI).with_steps(300)
    };
    let ens = run_ensemble(&cfg, 200_000, 6).unwrap();
    let thinned = thin_emissions(&ens, 0.5, 66).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for step_t in [25, 50, 100] {
        let full = estimate_g2(&ens, step_t).unwrap();
        let thin = estimate_g2(&thinned, step_t).unwrap();
        let z_full = (full.g2 - 1.0) / full.std_err;
        let z_thin = (thin.g2 - full.g2) / full.std_err.hypot(thin.std_err);
        pass &= z_full.abs() < 3.0 && z_thin.abs() < 3.0;
        parts.push(format!(
            "t={:.2}: g2 = {:.3}({:.3}), thinned {:.3}({:.3})",
            cfg.time_after_step(step_t),
            full.g2,
            full.std_err,
            thin.g2,
            thin.std_err
        ));
    }
    Verdict::new(pass, parts.join("; "))
}

fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let summary = random_equivalence(&mut rng, 200, 8).unwrap();

    let (theta, chi) = (PI / 5.0, 0.4);
    let psi = cavfb_core::QubitState::new(swap_input(theta, chi)).unwrap();
    let basis = [
        [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
        [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
    ]
    .map(|[a, b]| cavfb_core::kraus::C2::new(a, b));
    let kp = cavfb_core::KrausPair::swap(basis).unwrap();
    let seq = sequential_distribution(&psi, &kp, 2).unwrap();
    let born = born_distribution(&build_effective_state(&psi, &kp, 2).unwrap(), kp.basis());
    // K0 = |1><0| fires on the |0> component, then only K1 can follow.
    let closed = [("00", 0.0), ("01", theta.cos().powi(2)), ("10", theta.sin().powi(2)), ("11", 0.0)];
    let swap_err = closed
        .iter()
        .map(|&(bits, p)| (seq.prob(bits).unwrap() - p).abs().max((born.prob(bits).unwrap() - p).abs()))
        .fold(0.0, f64::max);
    Verdict::new(
        summary.max_abs_diff < 1e-12 && swap_err < 1e-12,
        format!(
            "{} instances max diff = {:.1e}; swap closed form error = {swap_err:.1e}",
            summary.instances, summary.max_abs_diff
        ),
    )
}

fn swap_input(theta: f64, chi: f64) -> cavfb_core::kraus::C2 {
    cavfb_core::kraus::C2::new(Complex64::new(theta.cos(), 0.0), Complex64::from_polar(theta.sin(), chi))
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn criterion_8() -> Verdict {
    let runs = [
        (Experiment::OracleCheck, 2_000, vec!["sim.feedback_magnitude=1".to_string(), "sim.phi_over_pi=0.5".into()]),
        (Experiment::Fig3Trace, 5_000, vec![]),
        (Experiment::G2Scan, 20_000, vec![]),
    ];
    let tmp = tempfile::tempdir().unwrap();
    let mut pass = true;
    let mut compared = 0;
    for (exp, n_traj, set) in runs {
        let mut outputs = Vec::new();
        for workers in [1usize, 8] {
            let ov = Overrides {
                seed: Some(2024),
                n_traj: Some(n_traj),
                output_dir: Some(tmp.path().join(format!("{}-{workers}", exp.name()))),
                set: set.clone(),
            };
            let cfg = parse_config("", Some(exp), &ov).unwrap();
            execute(&cfg, Some(workers)).unwrap();
            outputs.push(csv_files(&cfg.output_dir));
        }
        pass &= !outputs[0].is_empty() && outputs[0] == outputs[1];
        compared += outputs[0].len();
    }
    Verdict::new(pass, format!("{compared} CSV files compared across 1 and 8 workers"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "unraveling matches master equation", criterion_1),
        (2, "coherent-state jump transparency", criterion_2),
        (3, "vacuum trapping at phi = pi", criterion_3),
        (4, "post-selected amplitude separation", criterion_4),
        (5, "phase-uncertainty scaling exponent", criterion_5),
        (6, "g2 baseline and detector-efficiency invariance", criterion_6),
        (7, "sequential Kraus equivalence", criterion_7),
        (8, "worker-count determinism", criterion_8),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        let start = Instant::now();
        let v = run();
        let secs = start.elapsed().as_secs_f64();
        let status = if v.pass { "PASS" } else { "FAIL" };
        let note = if !v.pass && KNOWN_FAILING.contains(&id) { " (known)" } else { "" };
        println!("criterion {id} {status}{note}: {name} [{secs:.1}s] {}", v.detail);
        if !v.pass && !KNOWN_FAILING.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
