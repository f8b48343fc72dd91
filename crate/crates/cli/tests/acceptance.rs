//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::Value;

use tsteer::assemblage::{build_assemblage, lhs_assemblage, strategy_table, Assemblage};
use tsteer::channels::{make_channel, preset_catalog, ChannelSpec};
use tsteer::metrics::{
    bhatia_davis_check, branch_resolved_steering, default_bases, fidelity_table, individual_threshold, qber,
    qber_lower_bound, qber_upper_bound, steering_parameter, variance_identity_check, Protocol,
};
use tsteer::qkd::{run_session, simulate_rounds, SessionConfig, DEFAULT_TOMOGRAPHY_FRACTION};
use tsteer::qubit::ComplexMatrix2;
use tsteer::scalar::Tolerances;
use tsteer::sdp::{build_weight_sdp, check_feasibility, solve, steerable_weight, unitary_invariance_check, SdpStatus, SolverOptions};
use tsteer::selftest::random_pauli_channel;

type Outcome = Result<String, String>;

fn tsteer(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_tsteer")).args(args).output().expect("run tsteer");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn json(text: &str) -> Value {
    serde_json::from_str(text).expect("JSON output")
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within_budget(elapsed: Duration, budget_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < budget_s, format!("runtime {:.2}s exceeds {budget_s}s", elapsed.as_secs_f64()))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (code, text) = tsteer(&["selftest"]);
    let (code_json, out) = tsteer(&["selftest", "--format", "json"]);
    let elapsed = start.elapsed() / 2;
    ensure(code == 0 && code_json == 0, format!("selftest exit codes {code}, {code_json}"))?;
    ensure(text.contains("0.146446609406726") && text.contains("0.166666666666667"), "threshold values not printed")?;
    let v = json(&out);
    let q2 = 0.5 * (1.0 - std::f64::consts::FRAC_1_SQRT_2);
    let expect = [(2, q2, 1.0, 1.0), (3, 1.0 / 6.0, 4.0 / 3.0, 4.0 / 3.0)];
    let mut worst = 0.0f64;
    for (row, (n, q, s, m)) in v["thresholds"].as_array().ok_or("no thresholds")?.iter().zip(expect) {
        ensure(row["n"] == n, "threshold rows out of order")?;
        for (key, want) in [("q_n", q), ("s_threshold", s), ("monogamy_threshold", m)] {
            worst = worst.max((row[key].as_f64().ok_or("missing value")? - want).abs());
        }
    }
    ensure(worst <= 1e-12, format!("threshold deviation {worst:.2e}"))?;
    within_budget(elapsed, 1.0)?;
    Ok(format!("max deviation {worst:.1e}, {:.0} ms", elapsed.as_secs_f64() * 1e3))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let cases = [
        ("{\"kind\":\"universal_cloner_preset\"}", "3", 1.0 / 6.0, 4.0 / 3.0),
        ("{\"kind\":\"phase_covariant_preset\"}", "2", individual_threshold(2).unwrap(), 1.0),
    ];
    let mut notes = Vec::new();
    for (channel, n, q_want, s_want) in cases {
        let (code, out) = tsteer(&["analyze", "--channel", channel, "--n", n]);
        ensure(code == 0, format!("analyze exit code {code}"))?;
        let v = json(&out);
        let q = v["qber"].as_f64().ok_or("no qber")?;
        let s = v["s"].as_f64().ok_or("no s")?;
        ensure((q - q_want).abs() <= 1e-10, format!("N={n}: QBER {q} vs {q_want}"))?;
        ensure((s - s_want).abs() <= 1e-10, format!("N={n}: S {s} vs {s_want}"))?;
        ensure(v["verdict"]["secure"] == false, format!("N={n}: verdict secure"))?;
        notes.push(format!("N={n} QBER {q:.10} S {s:.10} insecure"));
    }
    within_budget(start.elapsed() / 2, 1.0)?;
    Ok(notes.join("; "))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    for (protocol, n) in [(Protocol::Bb84, 2usize), (Protocol::B98, 3)] {
        let bases = default_bases(n).unwrap();
        let spec = ChannelSpec::intercept_resend(&bases);
        let ch = make_channel::<f64>(&spec).unwrap();
        let analytic = branch_resolved_steering(&ch, &bases).unwrap();
        ensure((analytic - 1.0).abs() <= 1e-10, format!("N={n}: analytic branch-resolved S {analytic}"))?;
        let q_want = (n as f64 - 1.0) / (2.0 * n as f64);
        let q_exact = qber(&fidelity_table(&ch, &bases).unwrap());
        ensure((q_exact - q_want).abs() <= 1e-12, format!("N={n}: analytic QBER {q_exact}"))?;

        let r = run_session(&SessionConfig::new(protocol, spec, 100_000, 3000 + n as u64)).map_err(|e| e.to_string())?;
        let rep = r.report.as_ref().ok_or("no report")?;
        let br = rep.branch_resolved.s;
        ensure((br.value - 1.0).abs() <= 3.0 * br.stderr, format!("N={n}: simulated branch-resolved S {} ± {}", br.value, br.stderr))?;
        let q = r.qber_hat.ok_or("no sifted rounds")?;
        ensure((q.qber - q_want).abs() <= 3.0 * q.stderr, format!("N={n}: simulated QBER {} ± {}", q.qber, q.stderr))?;
        notes.push(format!("N={n} S_br {:.4}±{:.4} QBER {:.4}", br.value, br.stderr, q.qber));
    }
    within_budget(start.elapsed(), 30.0)?;
    Ok(notes.join("; "))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut violations, mut worst_identity, mut worst_slack) = (0, 0.0f64, f64::INFINITY);
    for n in [2usize, 3] {
        let bases = default_bases(n).unwrap();
        for _ in 0..1000 {
            let t = fidelity_table(&make_channel::<f64>(&random_pauli_channel(&mut rng)).unwrap(), &bases).unwrap();
            let (s, q) = (steering_parameter(&t), qber(&t));
            let lo = qber_lower_bound(s, n).unwrap();
            let hi = qber_upper_bound(s, n, t.min(), t.max()).unwrap();
            if q < lo - 1e-10 || q > hi + 1e-10 {
                violations += 1;
            }
            worst_identity = worst_identity.max(variance_identity_check(&t));
            worst_slack = worst_slack.min(bhatia_davis_check(&t));
        }
    }
    ensure(violations == 0, format!("{violations} sandwich violations"))?;
    ensure(worst_identity < 1e-12, format!("variance identity residual {worst_identity:.2e}"))?;
    ensure(worst_slack >= -1e-12, format!("Bhatia–Davis slack {worst_slack:.2e}"))?;
    within_budget(start.elapsed(), 10.0)?;
    Ok(format!("2000 draws, 0 violations, identity residual {worst_identity:.1e}, min slack {worst_slack:.1e}"))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for n in [2usize, 3] {
        let bases = default_bases(n).unwrap();
        for k in 0..=100 {
            let t = fidelity_table(&make_channel::<f64>(&ChannelSpec::depolarizing(k as f64 / 100.0)).unwrap(), &bases).unwrap();
            let s = steering_parameter(&t);
            worst = worst.max((qber(&t) - 0.5 * (1.0 - (s / n as f64).sqrt())).abs());
        }
    }
    ensure(worst < 1e-12, format!("max deviation {worst:.2e}"))?;
    within_budget(start.elapsed(), 1.0)?;
    Ok(format!("max |QBER − ½(1−√(S/N))| {worst:.1e}"))
}

fn criterion_6() -> Outcome {
    #[derive(Deserialize)]
    struct Row {
        value: f64,
        s_n: f64,
        w_t: f64,
    }
    let start = Instant::now();
    let (code, out) = tsteer(&[
        "sweep", "--channel", "{\"kind\":\"depolarizing\",\"v\":0}", "--n", "2", "--param", "v", "--from", "0", "--to", "1", "--steps",
        "101", "--format", "csv",
    ]);
    let elapsed = start.elapsed();
    ensure(code == 0, format!("sweep exit code {code}"))?;
    let rows: Vec<Row> = csv::Reader::from_reader(out.as_bytes()).deserialize().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    ensure(rows.len() == 101, format!("{} rows", rows.len()))?;
    let thr = std::f64::consts::FRAC_1_SQRT_2;
    let (mut max_below, mut min_above) = (0.0f64, f64::INFINITY);
    for r in &rows {
        if r.value <= thr - 1e-3 {
            max_below = max_below.max(r.w_t);
        }
        if r.value >= thr + 1e-2 {
            min_above = min_above.min(r.w_t);
        }
        if (r.value - thr).abs() > 2e-3 {
            ensure((r.w_t > 0.0) == (r.s_n > 1.0), format!("v = {}: w_t {} but S_2 {}", r.value, r.w_t, r.s_n))?;
        }
    }
    ensure(max_below <= 1e-6, format!("w_t {max_below:.2e} below threshold"))?;
    ensure(min_above >= 1e-4, format!("w_t {min_above:.2e} above threshold"))?;
    within_budget(elapsed, 60.0)?;
    Ok(format!("max w_t below {max_below:.1e}, min w_t above {min_above:.2e}, {:.0} ms", elapsed.as_secs_f64() * 1e3))
}

fn criterion_7() -> Outcome {
    #[derive(Deserialize)]
    struct Case {
        name: String,
        bases: Vec<usize>,
        visibility: f64,
        primal_value: f64,
    }
    #[derive(Deserialize)]
    struct Fixtures {
        cases: Vec<Case>,
    }
    let fixtures: Fixtures = serde_json::from_str(include_str!("../../core/tests/fixtures/reference_weights.json")).unwrap();
    ensure(fixtures.cases.len() == 5, "expected five fixtures")?;
    let opts = SolverOptions::default();
    let psd_tol = Tolerances::default().psd_tol;
    let (mut worst_primal, mut worst_gap, mut worst_eig) = (0.0f64, 0.0f64, f64::INFINITY);
    for c in &fixtures.cases {
        let asm = build_assemblage(&make_channel(&ChannelSpec::depolarizing(c.visibility)).unwrap(), &c.bases).unwrap();
        let p = build_weight_sdp(&asm).unwrap();
        let sol = solve(&p, &opts);
        ensure(sol.status == SdpStatus::Optimal, format!("{}: {:?}", c.name, sol.status))?;
        worst_primal = worst_primal.max((sol.primal_value - c.primal_value).abs());
        worst_gap = worst_gap.max(sol.gap);
        let f = check_feasibility(&p, &sol.rho_gamma);
        ensure(f.feasible(psd_tol), format!("{}: {f:?}", c.name))?;
        worst_eig = worst_eig.min(f.positivity_min_eigenvalue.min(f.lmi_min_eigenvalue));
    }
    ensure(worst_primal <= 1e-6, format!("primal deviation {worst_primal:.2e}"))?;
    ensure(worst_gap <= 1e-8, format!("duality gap {worst_gap:.2e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_lhs = 0.0f64;
    for n in [2usize, 3] {
        let table = strategy_table(n).unwrap();
        let bases = default_bases(n).unwrap();
        for _ in 0..10 {
            let w: Vec<f64> = (0..table.strategies()).map(|_| rng.gen_range(0.0..1.0)).collect();
            let total: f64 = w.iter().sum();
            let states: Vec<_> = w
                .iter()
                .map(|x| {
                    let r: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.57..0.57));
                    ComplexMatrix2::from_pauli_coords([0.5, 0.5 * r[0], 0.5 * r[1], 0.5 * r[2]]).scale(x / total)
                })
                .collect();
            let asm = lhs_assemblage(&table, &bases, &states, &Tolerances::default()).unwrap();
            worst_lhs = worst_lhs.max(steerable_weight(&asm, &opts).map_err(|e| e.to_string())?.w_t.abs());
        }
    }
    ensure(worst_lhs <= 1e-6, format!("LHS w_t {worst_lhs:.2e}"))?;
    Ok(format!("primal Δ {worst_primal:.1e}, gap {worst_gap:.1e}, min eigenvalue {worst_eig:.1e}, 20 LHS w_t ≤ {worst_lhs:.1e}"))
}

/// `R_z(α) R_y(β) R_z(γ)` from the unitary channel's Kraus operator.
fn random_unitary(rng: &mut ChaCha8Rng) -> ComplexMatrix2<f64> {
    let tau = std::f64::consts::TAU;
    let rot = |axis, angle| make_channel::<f64>(&ChannelSpec::Unitary { axis, angle }).unwrap().kraus()[0].operator;
    rot(3, rng.gen_range(0.0..tau)) * rot(2, rng.gen_range(0.0..tau)) * rot(3, rng.gen_range(0.0..tau))
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let opts = SolverOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let catalog: [(ChannelSpec, &[usize]); 5] = [
        (ChannelSpec::Identity, &[1, 3]),
        (ChannelSpec::depolarizing(0.9), &[1, 3]),
        (ChannelSpec::PhaseDamping { p: 0.25, axis: 3 }, &[1, 2, 3]),
        (ChannelSpec::AmplitudeDamping { g: 0.3 }, &[1, 3]),
        (ChannelSpec::UniversalCloner, &[1, 2, 3]),
    ];
    let assemblages: Vec<Assemblage<f64>> =
        catalog.iter().map(|(s, b)| build_assemblage(&make_channel(s).unwrap(), b).unwrap()).collect();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let u = random_unitary(&mut rng);
        for a in &assemblages {
            worst = worst.max(unitary_invariance_check(a, &u, &opts).map_err(|e| e.to_string())?);
        }
    }
    ensure(worst <= 2e-7, format!("max |Δw_t| {worst:.2e}"))?;
    within_budget(start.elapsed(), 60.0)?;
    Ok(format!("100 pairs, max |Δw_t| {worst:.1e}"))
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let mut count = 0;
    let mut worst_z = 0.0f64;
    for (protocol, n) in [(Protocol::Bb84, 2usize), (Protocol::B98, 3)] {
        let bases = default_bases(n).unwrap();
        for (name, spec) in preset_catalog(&bases) {
            let want = qber(&fidelity_table(&make_channel::<f64>(&spec).unwrap(), &bases).unwrap());
            // sifted fraction is (1 − tomography fraction)/N; aim 10% above 10^5
            let rounds = (110_000.0 * n as f64 / (1.0 - DEFAULT_TOMOGRAPHY_FRACTION)).ceil() as u64;
            let cfg = SessionConfig::new(protocol, spec, rounds, 9000 + count);
            let a = simulate_rounds(&cfg).map_err(|e| e.to_string())?;
            let b = simulate_rounds(&cfg).map_err(|e| e.to_string())?;
            ensure(a.records == b.records && a.counts == b.counts, format!("{name} N={n}: runs differ"))?;
            ensure(a.sifted_length >= 100_000, format!("{name} N={n}: only {} sifted rounds", a.sifted_length))?;
            let q = a.qber_hat.ok_or("no sifted rounds")?;
            let sigma = (want * (1.0 - want) / q.n as f64).sqrt();
            let dev = (q.qber - want).abs();
            if sigma > 0.0 {
                worst_z = worst_z.max(dev / sigma);
            }
            ensure(dev <= 3.0 * sigma + 1e-15, format!("{name} N={n}: QBER {} vs {want} (σ {sigma:.2e})", q.qber))?;
            count += 1;
        }
    }
    within_budget(start.elapsed(), 60.0)?;
    Ok(format!("{count} sessions within 3σ (max {worst_z:.2}σ), deterministic reruns, {:.1} s", start.elapsed().as_secs_f64()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("threshold constants", criterion_1),
        ("cloner attack reproduction", criterion_2),
        ("classical-copying saturation", criterion_3),
        ("sandwich property", criterion_4),
        ("isotropic saturation", criterion_5),
        ("w_t threshold", criterion_6),
        ("SDP correctness", criterion_7),
        ("unitary invariance of w_t", criterion_8),
        ("Monte Carlo convergence", criterion_9),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("acceptance {}: PASS  {name}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("acceptance {}: FAIL  {name}: {why}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
