//! Invariant catalog run by `tsteer selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assemblage::{lhs_assemblage, strategy_table};
use crate::channels::{make_channel, preset_catalog, Channel, ChannelSpec, Plane};
use crate::error::Result;
use crate::metrics::{
    bhatia_davis_check, branch_resolved_steering, default_bases, fidelity_table, individual_threshold,
    monogamy_threshold, qber, qber_lower_bound, qber_upper_bound, s_threshold, security_verdict,
    steering_parameter, variance_identity_check, AttackMode, FidelityTable,
};
use crate::qubit::ComplexMatrix2;
use crate::scalar::Tolerances;
use crate::sdp::{steerable_weight, SolverOptions};

pub const SANDWICH_DRAWS: usize = 1000;
pub const SANDWICH_TOL: f64 = 1e-10;
pub const IDENTITY_TOL: f64 = 1e-12;
pub const EXACT_TOL: f64 = 1e-12;
const SEED: u64 = 0x5eed;

/// Deliberate defects for negative-control runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Uses `½(1 + √(S/N))` as the QBER lower bound.
    FlippedLowerBoundSign,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub n: Option<usize>,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub n: usize,
    pub q_n: f64,
    pub s_threshold: f64,
    pub monogamy_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestReport {
    pub thresholds: Vec<ThresholdRow>,
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn threshold_table() -> Result<Vec<ThresholdRow>> {
    [2, 3]
        .into_iter()
        .map(|n| {
            let q = individual_threshold(n)?;
            Ok(ThresholdRow { n, q_n: q, s_threshold: s_threshold(n, q), monogamy_threshold: monogamy_threshold(n) })
        })
        .collect()
}

/// Pauli channel with weights drawn uniformly from the probability simplex.
pub fn random_pauli_channel(rng: &mut impl Rng) -> ChannelSpec {
    let mut e: [f64; 4] = std::array::from_fn(|_| -rng.gen::<f64>().max(f64::MIN_POSITIVE).ln());
    let total: f64 = e.iter().sum();
    e.iter_mut().for_each(|x| *x /= total);
    ChannelSpec::Pauli { p_x: e[1], p_y: e[2], p_z: e[3] }
}

fn lower_bound(s: f64, n: usize, fault: Option<Fault>) -> Result<f64> {
    match fault {
        None => qber_lower_bound(s, n),
        Some(Fault::FlippedLowerBoundSign) => Ok(0.5 * (1.0 + (s / n as f64).sqrt())),
    }
}

fn check(name: &'static str, n: Option<usize>, passed: bool, detail: String) -> Check {
    Check { name, n, passed, detail }
}

fn thresholds_check() -> Result<Check> {
    let rows = threshold_table()?;
    let expect = [(0.5 * (1.0 - std::f64::consts::FRAC_1_SQRT_2), 1.0, 1.0), (1.0 / 6.0, 4.0 / 3.0, 4.0 / 3.0)];
    let err = rows
        .iter()
        .zip(expect)
        .map(|(r, (q, s, m))| (r.q_n - q).abs().max((r.s_threshold - s).abs()).max((r.monogamy_threshold - m).abs()))
        .fold(0.0, f64::max);
    Ok(check("threshold_table", None, err <= EXACT_TOL, format!("max deviation {err:.2e}")))
}

fn cptp_check() -> Result<Check> {
    let mut worst = 0.0f64;
    let mut failing = Vec::new();
    for (name, spec) in preset_catalog(&[1, 2, 3]) {
        let report = make_channel::<f64>(&spec)?.validate();
        worst = worst.max(report.residual);
        if !report.trace_preserving {
            failing.push(name);
        }
    }
    Ok(check("cptp_presets", None, failing.is_empty(), format!("max residual {worst:.2e}, failing {failing:?}")))
}

fn random_tables(n: usize) -> Result<Vec<FidelityTable<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + n as u64);
    let bases = default_bases(n)?;
    (0..SANDWICH_DRAWS).map(|_| fidelity_table(&make_channel(&random_pauli_channel(&mut rng))?, &bases)).collect()
}

fn sandwich_checks(n: usize, fault: Option<Fault>) -> Result<Vec<Check>> {
    let tables = random_tables(n)?;
    let (mut violations, mut worst_identity, mut worst_slack) = (0, 0.0f64, f64::INFINITY);
    for t in &tables {
        let s = steering_parameter(t);
        let q = qber(t);
        let lo = lower_bound(s, n, fault)?;
        let hi = qber_upper_bound(s, n, t.min(), t.max())?;
        if q < lo - SANDWICH_TOL || q > hi + SANDWICH_TOL {
            violations += 1;
        }
        worst_identity = worst_identity.max(variance_identity_check(t));
        worst_slack = worst_slack.min(bhatia_davis_check(t));
    }
    Ok(vec![
        check("qber_sandwich", Some(n), violations == 0, format!("{violations} violations in {} draws", tables.len())),
        check("variance_identity", Some(n), worst_identity < IDENTITY_TOL, format!("max residual {worst_identity:.2e}")),
        check("bhatia_davis", Some(n), worst_slack >= -IDENTITY_TOL, format!("min slack {worst_slack:.2e}")),
    ])
}

fn isotropic_check(n: usize, fault: Option<Fault>) -> Result<Check> {
    let bases = default_bases(n)?;
    let mut worst = 0.0f64;
    for k in 0..=100 {
        let t = fidelity_table(&make_channel::<f64>(&ChannelSpec::depolarizing(k as f64 / 100.0))?, &bases)?;
        worst = worst.max((qber(&t) - lower_bound(steering_parameter(&t), n, fault)?).abs());
    }
    Ok(check("isotropic_saturation", Some(n), worst < EXACT_TOL, format!("max |QBER − lower| {worst:.2e}")))
}

fn lhs_check(n: usize) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0x1b5);
    let table = strategy_table(n)?;
    let bases = default_bases(n)?;
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let w: Vec<f64> = (0..table.strategies()).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        let states: Vec<_> = w
            .iter()
            .map(|x| {
                let r: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.55..0.55));
                ComplexMatrix2::from_pauli_coords([0.5, 0.5 * r[0], 0.5 * r[1], 0.5 * r[2]]).scale(x / total)
            })
            .collect();
        let asm = lhs_assemblage(&table, &bases, &states, &Tolerances::default())?;
        worst = worst.max(steerable_weight(&asm, &SolverOptions::default())?.w_t_raw.abs());
    }
    Ok(check("lhs_zero_weight", Some(n), worst <= 1e-6, format!("max |w_t| {worst:.2e}")))
}

fn attack_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let cases = [
        ("universal_cloner", ChannelSpec::UniversalCloner, 3, 1.0 / 6.0, 4.0 / 3.0),
        ("phase_covariant", ChannelSpec::PhaseCovariant { plane: Plane::default() }, 2, individual_threshold(2)?, 1.0),
    ];
    for (name, spec, n, q_expect, s_expect) in cases {
        let t = fidelity_table(&make_channel::<f64>(&spec)?, &default_bases(n)?)?;
        let (s, q) = (steering_parameter(&t), qber(&t));
        let v = security_verdict(s, n, AttackMode::Individual, None)?;
        let ok = (q - q_expect).abs() < 1e-10 && (s - s_expect).abs() < 1e-10 && !v.secure;
        out.push(check(name, Some(n), ok, format!("QBER {q:.12}, S {s:.12}, secure {}", v.secure)));
    }
    for n in [2, 3] {
        let bases = default_bases(n)?;
        let ch: Channel<f64> = make_channel(&ChannelSpec::intercept_resend(&bases))?;
        let br = branch_resolved_steering(&ch, &bases)?;
        let q = qber(&fidelity_table(&ch, &bases)?);
        let q_expect = (n as f64 - 1.0) / (2.0 * n as f64);
        let ok = (br - 1.0).abs() <= 1e-10 && (q - q_expect).abs() <= 1e-12;
        out.push(check("intercept_resend_saturation", Some(n), ok, format!("branch-resolved S {br:.12}, QBER {q:.12}")));
    }
    Ok(out)
}

pub fn run_selftest() -> Result<SelftestReport> {
    run_selftest_with(None)
}

pub fn run_selftest_with(fault: Option<Fault>) -> Result<SelftestReport> {
    let mut checks = vec![thresholds_check()?, cptp_check()?];
    for n in [2, 3] {
        checks.extend(sandwich_checks(n, fault)?);
        checks.push(isotropic_check(n, fault)?);
        checks.push(lhs_check(n)?);
    }
    checks.extend(attack_checks()?);
    Ok(SelftestReport { thresholds: threshold_table()?, checks })
}
