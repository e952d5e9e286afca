use cavfb_core::fock::{self, CoherentAmplitude, TruncationDim};
use cavfb_core::kraus::{self, KrausPair, QubitState};
use cavfb_core::metrology::fit_power_law;
use cavfb_core::trajectory::{self, Backend, SimConfig};
use cavfb_core::dynamics::{self, DecayRate, TimeStep};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn amplitude() -> impl Strategy<Value = CoherentAmplitude> {
    (0.0f64..1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(r, p)| CoherentAmplitude::new(r, p).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn displacements_compose_up_to_phase(a in amplitude(), b in amplitude()) {
        let d = TruncationDim::new(40).unwrap();
        let vac = fock::vacuum(d);
        let da = fock::displacement_op(a, d);
        let db = fock::displacement_op(b, d);
        let v = da.matrix() * (db.matrix() * vac.amplitudes());
        let (za, zb) = (a.to_complex(), b.to_complex());
        let phase = ((za * zb.conj() - za.conj() * zb) * 0.5).exp();
        let target = fock::make_coherent_state(CoherentAmplitude::from_complex(za + zb), d).state;
        let diff = (v - target.amplitudes() * phase).norm();
        prop_assert!(diff < 1e-10, "diff {diff:e}");
    }

    #[test]
    fn kraus_sequential_equals_born(seed in any::<u64>(), n in 1usize..=8, isometry in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi = QubitState::random(&mut rng);
        let kp = if isometry { KrausPair::random_isometry(&mut rng) } else { KrausPair::random(&mut rng) };
        let seq = kraus::sequential_distribution(&psi, &kp, n).unwrap();
        let eff = kraus::build_effective_state(&psi, &kp, n).unwrap();
        let born = kraus::born_distribution(&eff, kp.basis());
        prop_assert!(seq.max_abs_diff(&born) < 1e-12);
        prop_assert!((seq.total() - 1.0).abs() < 1e-10);
        prop_assert!((eff.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn power_law_fit_recovers_exponent(exp in -2.0f64..0.5, c in 0.01f64..100.0, start in 2usize..50) {
        let xy: Vec<(f64, f64)> = (0..6).map(|i| {
            let n = (start * 2usize.pow(i)) as f64;
            (n, c * n.powf(exp))
        }).collect();
        let (e, err, b) = fit_power_law(&xy).unwrap();
        prop_assert!((e - exp).abs() < 1e-12);
        prop_assert!(err < 1e-12);
        prop_assert!((b - c.ln()).abs() < 1e-10);
    }

    #[test]
    fn no_jump_survival_never_exceeds_one(r in 0.0f64..3.0, p in 0.0f64..6.3, dt in 0.0f64..0.1) {
        let d = TruncationDim::new(40).unwrap();
        let g = dynamics::build_conditional_generator(
            fock::FockOperator::zero(d),
            fock::annihilation_op(d),
            DecayRate::new(1.0).unwrap(),
        ).unwrap();
        let k0 = dynamics::no_jump_propagator(&g, TimeStep::new(dt, DecayRate::new(1.0).unwrap()).unwrap());
        let psi = fock::make_coherent_state(CoherentAmplitude::new(r, p).unwrap(), d).state;
        let (_, survival) = dynamics::apply_no_jump(&k0, &psi).unwrap();
        prop_assert!(survival <= 1.0 + 1e-12);
        // <α|e^{-κΔt c†c}|α> = exp(-|α|²(1 - e^{-κΔt}))
        prop_assert!((survival - (-r * r * (1.0 - (-dt).exp())).exp()).abs() < 1e-9);
    }

    #[test]
    fn coherent_trajectories_stay_finite_and_flag_consistent(seed in any::<u64>(), phi in 0.0f64..6.3) {
        let cfg = SimConfig { backend: Backend::Coherent, n_steps: 300, ..SimConfig::fig3(phi) };
        let rec = trajectory::run_trajectory(&cfg, seed).unwrap();
        prop_assert_eq!(rec.n_steps(), 300);
        for k in 0..300 {
            if rec.emitted(k) {
                prop_assert!(rec.p_trace[k] > 0.0);
            }
            prop_assert!(rec.amp_trace[k].norm().is_finite());
        }
    }
}

#[test]
fn no_feedback_records_have_zero_amplitude_variance() {
    let cfg = SimConfig {
        feedback_magnitude: 0.0,
        n_steps: 100,
        ..SimConfig::fig3(0.0)
    };
    let ens = trajectory::run_ensemble(&cfg, 50, 8).unwrap();
    let first = &ens.records[0].amp_trace;
    for r in &ens.records {
        for (a, b) in r.amp_trace.iter().zip(first) {
            assert!((a - b).norm() < 1e-12);
        }
    }
    assert!(first.iter().all(|z| z.im.abs() < 1e-12 && z.re > 0.0));
}
