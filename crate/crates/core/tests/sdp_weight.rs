use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use tsteer::assemblage::{build_assemblage, lhs_assemblage, strategy_table, Assemblage};
use tsteer::channels::{make_channel, ChannelSpec};
use tsteer::metrics::{default_bases, fidelity_table, steering_parameter};
use tsteer::qubit::ComplexMatrix2;
use tsteer::scalar::Tolerances;
use tsteer::sdp::{build_weight_sdp, check_feasibility, solve, steerable_weight, unitary_invariance_check, SdpStatus, SolverOptions};

#[derive(Deserialize)]
struct Fixtures {
    cases: Vec<Case>,
}

#[derive(Deserialize)]
struct Case {
    name: String,
    bases: Vec<usize>,
    visibility: f64,
    primal_value: f64,
}

fn fixtures() -> Vec<Case> {
    let text = include_str!("fixtures/reference_weights.json");
    serde_json::from_str::<Fixtures>(text).unwrap().cases
}

fn asm(spec: ChannelSpec, bases: &[usize]) -> Assemblage<f64> {
    build_assemblage(&make_channel(&spec).unwrap(), bases).unwrap()
}

fn random_unitary(rng: &mut impl Rng) -> ComplexMatrix2<f64> {
    let axis = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0f64..1.0)];
    let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (s, c) = (0.5 * theta).sin_cos();
    // exp(−iθ n·σ/2) = cos(θ/2) I − i sin(θ/2) n·σ
    let n = axis.map(|a| a / norm);
    let i = num_complex::Complex::new(0.0, 1.0);
    let ns = ComplexMatrix2::from_pauli_coords([0.0, n[0], n[1], n[2]]);
    ComplexMatrix2::identity().scale(c) - ns.scale_complex(i * s)
}

#[test]
fn reference_fixtures() {
    for case in fixtures() {
        let a = asm(ChannelSpec::depolarizing(case.visibility), &case.bases);
        let p = build_weight_sdp(&a).unwrap();
        let sol = solve(&p, &SolverOptions::default());
        assert_eq!(sol.status, SdpStatus::Optimal, "{}", case.name);
        assert!((sol.primal_value - case.primal_value).abs() < 1e-6, "{}: {} vs {}", case.name, sol.primal_value, case.primal_value);
        assert!(sol.gap <= 1e-8, "{}: gap {}", case.name, sol.gap);
        let w = steerable_weight(&a, &SolverOptions::default()).unwrap();
        assert!(check_feasibility(&p, &w.lhs_witness).feasible(1e-12), "{}", case.name);
        assert!((w.certified_primal - sol.primal_value).abs() < 1e-6, "{}", case.name);
    }
}

#[test]
fn n2_depolarizing_sweep_matches_steering_threshold() {
    let thr = std::f64::consts::FRAC_1_SQRT_2;
    for k in 0..=100 {
        let v = k as f64 / 100.0;
        let spec = ChannelSpec::depolarizing(v);
        let w = steerable_weight(&asm(spec.clone(), &[1, 3]), &SolverOptions::default()).unwrap();
        if v <= thr {
            assert_eq!(w.w_t, 0.0, "v = {v}");
        } else {
            // closed form (v − 1/√2)/(1 − 1/√2)
            let expect = (v - thr) / (1.0 - thr);
            assert!((w.w_t - expect).abs() < 1e-6, "v = {v}: {} vs {expect}", w.w_t);
        }
        let s = steering_parameter(&fidelity_table(&make_channel::<f64>(&spec).unwrap(), &[1, 3]).unwrap());
        if (v - thr).abs() > 1e-3 {
            assert_eq!(w.w_t > 0.0, s > 1.0, "v = {v}");
        }
    }
}

#[test]
fn lhs_models_have_zero_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [2usize, 3] {
        let t = strategy_table(n).unwrap();
        let bases = default_bases(n).unwrap();
        for _ in 0..10 {
            let weights: Vec<f64> = (0..t.strategies()).map(|_| rng.gen_range(0.0..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let states: Vec<_> = weights
                .iter()
                .map(|w| {
                    let r = [rng.gen_range(-0.57..0.57), rng.gen_range(-0.57..0.57), rng.gen_range(-0.57..0.57)];
                    ComplexMatrix2::from_pauli_coords([0.5, 0.5 * r[0], 0.5 * r[1], 0.5 * r[2]]).scale(w / total)
                })
                .collect();
            let a = lhs_assemblage(&t, &bases, &states, &Tolerances::default()).unwrap();
            let w = steerable_weight(&a, &SolverOptions::default()).unwrap();
            assert!(w.w_t_raw.abs() < 1e-6, "{}", w.w_t_raw);
            assert_eq!(w.w_t, 0.0);
        }
    }
}

#[test]
fn unitary_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let opts = SolverOptions::default();
    let catalog = [
        (ChannelSpec::Identity, vec![1, 3]),
        (ChannelSpec::depolarizing(0.9), vec![1, 3]),
        (ChannelSpec::PhaseDamping { p: 0.25, axis: 3 }, vec![1, 2, 3]),
        (ChannelSpec::AmplitudeDamping { g: 0.3 }, vec![1, 3]),
        (ChannelSpec::Identity, vec![1, 2, 3]),
    ];
    for (spec, bases) in catalog {
        let a = asm(spec, &bases);
        for _ in 0..4 {
            let d = unitary_invariance_check(&a, &random_unitary(&mut rng), &opts).unwrap();
            assert!(d <= 2e-7, "{d}");
        }
    }
    let sx = tsteer::qubit::pauli::<f64>(1).unwrap();
    assert!(unitary_invariance_check(&asm(ChannelSpec::Identity, &[1, 3]), &sx, &opts).unwrap() <= 2e-7);
}

#[test]
fn weight_is_convex() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let opts = SolverOptions::default();
    for _ in 0..10 {
        let a1 = asm(ChannelSpec::depolarizing(rng.gen_range(0.5..1.0)), &[1, 3]);
        let a2 = asm(ChannelSpec::AmplitudeDamping { g: rng.gen_range(0.0..1.0) }, &[1, 3]);
        let mid = a1.mix(&a2, 0.5).unwrap();
        let w = |a: &Assemblage<f64>| steerable_weight(a, &opts).unwrap().w_t_raw;
        assert!(w(&mid) <= 0.5 * w(&a1) + 0.5 * w(&a2) + 1e-7);
    }
}

#[test]
fn weight_monotone_under_depolarizing_postprocessing() {
    let opts = SolverOptions::default();
    for spec in [ChannelSpec::Identity, ChannelSpec::AmplitudeDamping { g: 0.2 }, ChannelSpec::PhaseDamping { p: 0.1, axis: 3 }] {
        let a = asm(spec, &[1, 2, 3]);
        let base = steerable_weight(&a, &opts).unwrap().w_t_raw;
        for k in 0..=10 {
            let v = k as f64 / 10.0;
            let noisy = a.map_channel(&make_channel(&ChannelSpec::depolarizing(v)).unwrap());
            assert!(steerable_weight(&noisy, &opts).unwrap().w_t_raw <= base + 1e-7);
        }
    }
}

#[test]
fn weight_at_n3_cloner_point() {
    // S_3 = 4/3 for depolarizing(2/3); the weight there is reported, not a threshold.
    let w = steerable_weight(&asm(ChannelSpec::UniversalCloner, &[1, 2, 3]), &SolverOptions::default()).unwrap();
    println!("w_t at S_3 = 4/3: {:.9}", w.w_t_raw);
    assert!((0.0..=1.0).contains(&w.w_t));
}

#[test]
fn problem_dump_is_json() {
    let p = build_weight_sdp(&asm(ChannelSpec::depolarizing(0.9), &[1, 3])).unwrap();
    let v = serde_json::to_value(&p).unwrap();
    assert_eq!(v["N"], 2);
    assert_eq!(v["conic"]["cones"].as_array().unwrap().len(), 8);
    let sol = solve(&p, &SolverOptions::default());
    let s = serde_json::to_value(&sol).unwrap();
    assert_eq!(s["status"], "optimal");
}
