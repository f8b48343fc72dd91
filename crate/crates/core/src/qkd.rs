//! Seeded Monte Carlo simulation of BB84 (N = 2) and six-state (N = 3)
//! sessions over a channel, and the analysis that turns the recorded rounds
//! into a [`SteeringReport`].
//!
//! Every round draws from its own ChaCha8 stream (stream index = round
//! index), so results do not depend on how rounds are split across threads.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assemblage::{build_assemblage, reconstruct, Priors, TomographyCounts};
use crate::channels::{make_channel, Channel, ChannelSpec};
use crate::error::{domain, Error, Result};
use crate::metrics::{
    branch_resolved_steering, default_bases, fidelity_table, security_verdict, AttackMode, FidelityTable, Protocol,
    SecurityVerdict, SteeringSummary,
};
use crate::qubit::{check_basis, labels_for, DensityMatrix, MubLabel, Outcome};
use crate::sdp::{steerable_weight, SolverOptions, WeightResult};

pub const DEFAULT_TOMOGRAPHY_FRACTION: f64 = 0.25;
pub const DEFAULT_BASIS_PAIR: [usize; 2] = [1, 3];
/// Upper limit on rounds per session; records are kept in memory.
pub const MAX_ROUNDS: u64 = 100_000_000;

/// How Bob picks his basis on key rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sifting {
    /// Bob follows the pre-shared basis sequence: `j = i`.
    #[default]
    PreShared,
    /// Bob picks uniformly among the protocol bases; mismatches are sifted out.
    RandomBasis,
}

fn default_fraction() -> f64 {
    DEFAULT_TOMOGRAPHY_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub protocol: Protocol,
    pub channel: ChannelSpec,
    pub rounds: u64,
    pub seed: u64,
    /// Fraction of rounds where Bob measures a uniformly random Pauli basis.
    #[serde(default = "default_fraction")]
    pub tomography_fraction: f64,
    /// BB84 only.
    #[serde(default)]
    pub basis_pair: Option<[usize; 2]>,
    #[serde(default)]
    pub sifting: Sifting,
}

impl SessionConfig {
    pub fn new(protocol: Protocol, channel: ChannelSpec, rounds: u64, seed: u64) -> Self {
        Self {
            protocol,
            channel,
            rounds,
            seed,
            tomography_fraction: DEFAULT_TOMOGRAPHY_FRACTION,
            basis_pair: None,
            sifting: Sifting::PreShared,
        }
    }

    /// Alice's bases, ascending.
    pub fn bases(&self) -> Result<Vec<usize>> {
        match (self.protocol, self.basis_pair) {
            (Protocol::Bb84, None) => Ok(DEFAULT_BASIS_PAIR.to_vec()),
            (Protocol::Bb84, Some([x, y])) => {
                check_basis(x)?;
                check_basis(y)?;
                if x == y {
                    return domain(format!("basis pair needs two distinct bases, got {{{x}, {y}}}"));
                }
                Ok(vec![x.min(y), x.max(y)])
            }
            (Protocol::B98, None) => default_bases(3),
            (Protocol::B98, Some(_)) => domain("basis_pair only applies to BB84"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return domain("rounds must be at least 1");
        }
        if self.rounds > MAX_ROUNDS {
            return domain(format!("rounds {} exceeds the limit of {MAX_ROUNDS}", self.rounds));
        }
        if !(self.tomography_fraction > 0.0 && self.tomography_fraction <= 1.0) {
            return domain(format!("tomography_fraction must lie in (0, 1], got {}", self.tomography_fraction));
        }
        self.bases()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Key,
    Tomography,
}

/// One protocol round. Field order is the per-round CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RoundRecord {
    pub round: u64,
    pub i: usize,
    pub a: Outcome,
    pub j: usize,
    pub b: Outcome,
    pub purpose: Purpose,
    /// Index into the channel's Kraus list.
    pub branch: usize,
}

/// What the branch index in a [`RoundRecord`] means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchRecord {
    /// The eavesdropper's classical record (intercept-resend).
    Eavesdropper,
    /// Internal Kraus index, unobservable in a real session.
    Diagnostic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QberEstimate {
    pub qber: f64,
    /// Binomial standard error `√(q(1−q)/n)`.
    pub stderr: f64,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionResult {
    pub config: SessionConfig,
    pub bases: Vec<usize>,
    pub branch_labels: Vec<String>,
    pub branch_record: BranchRecord,
    pub sifted_length: u64,
    pub qber_hat: Option<QberEstimate>,
    pub counts: TomographyCounts,
    pub report: Option<SteeringReport>,
    /// Why `report` is absent.
    pub report_error: Option<String>,
    #[serde(skip)]
    pub records: Vec<RoundRecord>,
}

impl SessionResult {
    /// Per-round CSV: `round,i,a,j,b,purpose,branch`.
    pub fn write_rounds_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.records {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Per-preparation branch probabilities and Bob's `P(+1)` for `σ_1..σ_3`.
struct BranchSampler {
    cumulative: Vec<f64>,
    index: Vec<usize>,
    p_plus: Vec<[f64; 3]>,
}

impl BranchSampler {
    fn new(channel: &Channel<f64>, label: MubLabel) -> Result<Self> {
        let branches = channel.branch_decompose(&DensityMatrix::mub_state(label));
        let total: f64 = branches.iter().map(|b| b.q_lambda).sum();
        let mut acc = 0.0;
        let mut out = Self { cumulative: vec![], index: vec![], p_plus: vec![] };
        for br in &branches {
            acc += br.q_lambda / total;
            out.cumulative.push(acc);
            out.index.push(br.index);
            let mut p = [0.0; 3];
            for (j, slot) in p.iter_mut().enumerate() {
                *slot = br.state.fidelity_to_pure(MubLabel::new(j + 1, Outcome::Plus)?);
            }
            out.p_plus.push(p);
        }
        Ok(out)
    }

    fn pick(&self, u: f64) -> usize {
        self.cumulative.iter().position(|&c| u < c).unwrap_or(self.cumulative.len() - 1)
    }
}

/// Runs a session and, when the tomography data suffice, its analysis
/// against the configured channel.
pub fn run_session(cfg: &SessionConfig) -> Result<SessionResult> {
    let mut result = simulate_rounds(cfg)?;
    match analyze(&result, Some(&cfg.channel)) {
        Ok(r) => result.report = Some(r),
        Err(Error::InsufficientData(msg)) => result.report_error = Some(msg),
        Err(e) => return Err(e),
    }
    Ok(result)
}

/// The sampling part of [`run_session`], without analysis.
pub fn simulate_rounds(cfg: &SessionConfig) -> Result<SessionResult> {
    cfg.validate()?;
    let bases = cfg.bases()?;
    let channel: Channel<f64> = make_channel(&cfg.channel)?;
    let samplers: BTreeMap<MubLabel, BranchSampler> =
        labels_for(&bases).into_iter().map(|l| Ok((l, BranchSampler::new(&channel, l)?))).collect::<Result<_>>()?;
    let key = ChaCha8Rng::seed_from_u64(cfg.seed).get_seed();

    let records: Vec<RoundRecord> = (0..cfg.rounds)
        .into_par_iter()
        .map(|round| {
            let mut rng = ChaCha8Rng::from_seed(key);
            rng.set_stream(round);
            let tomography = rng.gen_bool(cfg.tomography_fraction);
            let i = bases[rng.gen_range(0..bases.len())];
            let a = if rng.gen::<bool>() { Outcome::Plus } else { Outcome::Minus };
            let sampler = &samplers[&MubLabel::new(i, a).expect("valid")];
            let k = sampler.pick(rng.gen::<f64>());
            let (j, purpose) = if tomography {
                (rng.gen_range(1..=3), Purpose::Tomography)
            } else {
                match cfg.sifting {
                    Sifting::PreShared => (i, Purpose::Key),
                    Sifting::RandomBasis => (bases[rng.gen_range(0..bases.len())], Purpose::Key),
                }
            };
            let b = if rng.gen::<f64>() < sampler.p_plus[k][j - 1] { Outcome::Plus } else { Outcome::Minus };
            RoundRecord { round, i, a, j, b, purpose, branch: sampler.index[k] }
        })
        .collect();

    let mut counts = TomographyCounts::new();
    for r in records.iter().filter(|r| r.purpose == Purpose::Tomography) {
        counts.add(MubLabel::new(r.i, r.a)?, r.j, r.b, 1)?;
    }
    let sifted = sift(&records);
    let qber_hat = if sifted.is_empty() { None } else { Some(estimate_qber(&sifted)?) };
    Ok(SessionResult {
        config: cfg.clone(),
        bases,
        branch_labels: channel.kraus().iter().map(|k| k.label.clone()).collect(),
        branch_record: if cfg.channel.exposes_eavesdropper_record() {
            BranchRecord::Eavesdropper
        } else {
            BranchRecord::Diagnostic
        },
        sifted_length: sifted.len() as u64,
        qber_hat,
        counts,
        report: None,
        report_error: None,
        records,
    })
}

/// Key rounds with matching bases, in order.
pub fn sift(records: &[RoundRecord]) -> Vec<RoundRecord> {
    records.iter().filter(|r| r.purpose == Purpose::Key && r.i == r.j).copied().collect()
}

pub fn estimate_qber(sifted: &[RoundRecord]) -> Result<QberEstimate> {
    if sifted.is_empty() {
        return Err(Error::InsufficientData("no sifted rounds".into()));
    }
    let n = sifted.len() as u64;
    let errors = sifted.iter().filter(|r| r.a != r.b).count() as f64;
    let q = errors / n as f64;
    Ok(QberEstimate { qber: q, stderr: (q * (1.0 - q) / n as f64).sqrt(), n })
}

/// `Σ_λ (n_λ,match − n_λ,miss)² / (n_λ · n)` and its delta-method variance
/// under multinomial sampling of the `(λ, b)` cells.
fn steering_term(cells: &BTreeMap<usize, [u64; 2]>) -> (f64, f64) {
    let n: u64 = cells.values().flatten().sum();
    if n == 0 {
        return (0.0, 0.0);
    }
    let nf = n as f64;
    let (mut value, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for [hit, miss] in cells.values() {
        let (p, q) = (*hit as f64 / nf, *miss as f64 / nf);
        if p + q == 0.0 {
            continue;
        }
        let e = (p - q) / (p + q);
        value += (p - q) * e;
        for (prob, grad) in [(p, 2.0 * e - e * e), (q, -2.0 * e - e * e)] {
            m1 += prob * grad;
            m2 += prob * grad * grad;
        }
    }
    (value, (m2 - m1 * m1).max(0.0) / nf)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchResolved {
    pub s: Estimate,
    pub record: BranchRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delta {
    pub quantity: &'static str,
    pub empirical: f64,
    pub analytic: f64,
    pub delta: f64,
    /// Empirical standard error, when one is available.
    pub stderr: Option<f64>,
}

impl Delta {
    /// `|delta| ≤ k·stderr`; true when no standard error is attached.
    pub fn within(&self, k: f64) -> bool {
        self.stderr.map_or(true, |s| self.delta.abs() <= k * s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticComparison {
    pub channel: ChannelSpec,
    pub summary: SteeringSummary<f64>,
    pub w_t: f64,
    pub deltas: Vec<Delta>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteeringReport {
    pub protocol: Protocol,
    pub bases: Vec<usize>,
    /// Summary of the empirical fidelity table (rounds with `j = i`).
    pub summary: SteeringSummary<f64>,
    pub fidelities: FidelityTable<f64>,
    pub s_stderr: f64,
    pub branch_resolved: BranchResolved,
    pub key_qber: Option<QberEstimate>,
    pub qber_lower_bound: f64,
    pub qber_upper_bound: f64,
    /// The key QBER's 3σ window meets `[lower, upper]` widened by the 3σ
    /// uncertainty of the lower bound.
    pub sandwich_consistent: Option<bool>,
    pub weight: WeightResult,
    /// Preparations whose tomographic estimate had to be projected to a state.
    pub projected: Vec<MubLabel>,
    pub verdicts: Vec<SecurityVerdict>,
    pub empirical_vs_analytic: Option<AnalyticComparison>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnalysisOptions {
    /// Unconditional-mode QBER threshold.
    pub q_override: Option<f64>,
    pub solver: SolverOptions,
}

pub fn analyze(result: &SessionResult, known_channel: Option<&ChannelSpec>) -> Result<SteeringReport> {
    analyze_with(result, known_channel, &AnalysisOptions::default())
}

pub fn analyze_with(result: &SessionResult, known_channel: Option<&ChannelSpec>, opts: &AnalysisOptions) -> Result<SteeringReport> {
    let bases = &result.bases;
    let n = bases.len();
    let recon = reconstruct(&result.counts, &Priors::Equal)?;
    if recon.assemblage.bases() != bases.as_slice() {
        return Err(Error::InsufficientData(format!("tomography covers bases {:?}, expected {bases:?}", recon.assemblage.bases())));
    }

    // (i, a) → branch → [b = a, b ≠ a] over rounds measured in Alice's basis
    let mut cells: BTreeMap<MubLabel, BTreeMap<usize, [u64; 2]>> = BTreeMap::new();
    for r in result.records.iter().filter(|r| r.i == r.j) {
        let slot = cells.entry(MubLabel::new(r.i, r.a)?).or_default().entry(r.branch).or_default();
        slot[usize::from(r.a != r.b)] += 1;
    }
    let mut values = Vec::with_capacity(n);
    let (mut s_var, mut br_s, mut br_var) = (0.0, 0.0, 0.0);
    for &i in bases {
        let mut pair = [0.0; 2];
        for a in Outcome::BOTH {
            let l = MubLabel::new(i, a)?;
            let by_branch = cells.get(&l).ok_or_else(|| Error::InsufficientData(format!("no rounds for {l} measured in basis {i}")))?;
            let merged: [u64; 2] = by_branch.values().fold([0, 0], |acc, c| [acc[0] + c[0], acc[1] + c[1]]);
            pair[a.index()] = merged[0] as f64 / (merged[0] + merged[1]) as f64;
            s_var += steering_term(&BTreeMap::from([(0, merged)])).1;
            let (v, var) = steering_term(by_branch);
            br_s += v;
            br_var += var;
        }
        values.push(pair);
    }
    let fidelities = FidelityTable::new(bases.clone(), values)?;
    let mut summary = SteeringSummary::from_table(&fidelities);
    summary.branch_resolved_s = Some(0.5 * br_s);
    let s_stderr = 0.5 * s_var.sqrt();
    let branch_resolved = BranchResolved {
        s: Estimate { value: 0.5 * br_s, stderr: 0.5 * br_var.sqrt() },
        record: result.branch_record,
    };

    let lower = summary.lower_bound()?;
    let upper = summary.upper_bound()?;
    let key_qber = result.qber_hat;
    let sandwich_consistent = key_qber.map(|q| {
        // dL/dS = −1 / (4√(S·N))
        let lower_err = if summary.s > 0.0 { s_stderr / (4.0 * (summary.s * n as f64).sqrt()) } else { 0.0 };
        let slack = 3.0 * (q.stderr + lower_err);
        q.qber + slack >= lower && q.qber - slack <= upper
    });

    let weight = steerable_weight(&recon.assemblage, &opts.solver)?;
    let verdicts = vec![
        security_verdict(summary.s, n, AttackMode::Individual, None)?,
        security_verdict(summary.s, n, AttackMode::Unconditional, opts.q_override)?,
    ];

    let empirical_vs_analytic = known_channel
        .map(|spec| -> Result<AnalyticComparison> {
            let ch: Channel<f64> = make_channel(spec)?;
            let table = fidelity_table(&ch, bases)?;
            let mut analytic = SteeringSummary::from_table(&table);
            analytic.branch_resolved_s = Some(branch_resolved_steering(&ch, bases)?);
            let w = steerable_weight(&build_assemblage(&ch, bases)?, &opts.solver)?;
            let mut deltas = vec![
                delta("S_N", summary.s, analytic.s, Some(s_stderr)),
                delta("S_N_branch_resolved", branch_resolved.s.value, analytic.branch_resolved_s.unwrap_or(f64::NAN), Some(branch_resolved.s.stderr)),
                delta("qber_table", summary.qber, analytic.qber, None),
                delta("w_t", weight.w_t, w.w_t, None),
            ];
            if let Some(q) = key_qber {
                deltas.insert(2, delta("qber", q.qber, analytic.qber, Some(q.stderr)));
            }
            Ok(AnalyticComparison { channel: spec.clone(), summary: analytic, w_t: w.w_t, deltas })
        })
        .transpose()?;

    Ok(SteeringReport {
        protocol: result.config.protocol,
        bases: bases.clone(),
        summary,
        fidelities,
        s_stderr,
        branch_resolved,
        key_qber,
        qber_lower_bound: lower,
        qber_upper_bound: upper,
        sandwich_consistent,
        weight,
        projected: recon.projected,
        verdicts,
        empirical_vs_analytic,
    })
}

fn delta(quantity: &'static str, empirical: f64, analytic: f64, stderr: Option<f64>) -> Delta {
    Delta { quantity, empirical, analytic, delta: empirical - analytic, stderr }
}
