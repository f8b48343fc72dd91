//! Output records shared by `analyze` and `sweep`.

use serde::Serialize;

use tsteer::assemblage::build_assemblage;
use tsteer::channels::{make_channel, Channel, ChannelSpec};
use tsteer::metrics::{
    bhatia_davis_check, branch_resolved_steering, fidelity_table, security_verdict, variance_identity_check,
    AttackMode, SecurityVerdict, SteeringSummary,
};
use tsteer::qubit::MubLabel;
use tsteer::sdp::{steerable_weight, SdpStatus, SolverOptions, WeightResult};
use tsteer::Result;

pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Clone, Copy)]
pub struct AnalysisOptions {
    pub mode: AttackMode,
    pub q_override: Option<f64>,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, Serialize)]
pub struct FidelityEntry {
    pub i: usize,
    pub a: i8,
    pub fidelity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SdpBrief {
    pub status: SdpStatus,
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub certified_primal: f64,
    pub iterations: usize,
}

impl SdpBrief {
    pub fn from(w: &WeightResult) -> Self {
        Self {
            status: w.solution.status,
            primal_value: w.solution.primal_value,
            dual_value: w.solution.dual_value,
            gap: w.solution.gap,
            certified_primal: w.certified_primal,
            iterations: w.solution.iterations,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChannelAnalysis {
    pub channel: ChannelSpec,
    pub bases: Vec<usize>,
    pub fidelities: Vec<FidelityEntry>,
    #[serde(flatten)]
    pub summary: SteeringSummary<f64>,
    pub qber_lower_bound: f64,
    pub qber_upper_bound: f64,
    pub variance_identity_residual: f64,
    pub bhatia_davis_slack: f64,
    pub w_t: f64,
    pub w_t_raw: f64,
    pub sdp: SdpBrief,
    pub verdict: SecurityVerdict,
}

pub fn analyze_channel(spec: &ChannelSpec, bases: &[usize], opts: &AnalysisOptions) -> Result<ChannelAnalysis> {
    let ch: Channel<f64> = make_channel(spec)?;
    let table = fidelity_table(&ch, bases)?;
    let mut summary = SteeringSummary::from_table(&table);
    summary.branch_resolved_s = Some(branch_resolved_steering(&ch, bases)?);
    let weight = steerable_weight(&build_assemblage(&ch, bases)?, &opts.solver)?;
    let verdict = security_verdict(summary.s, bases.len(), opts.mode, opts.q_override)?;
    Ok(ChannelAnalysis {
        channel: spec.clone(),
        bases: bases.to_vec(),
        fidelities: table
            .iter()
            .map(|(l, f): (MubLabel, f64)| FidelityEntry { i: l.basis(), a: l.outcome().sign(), fidelity: f })
            .collect(),
        summary,
        qber_lower_bound: summary.lower_bound()?,
        qber_upper_bound: summary.upper_bound()?,
        variance_identity_residual: variance_identity_check(&table),
        bhatia_davis_slack: bhatia_davis_check(&table),
        w_t: weight.w_t,
        w_t_raw: weight.w_t_raw,
        sdp: SdpBrief::from(&weight),
        verdict,
    })
}

/// Flat CSV row; `param` and `value` are empty outside sweeps.
#[derive(Debug, Clone, Serialize)]
pub struct CsvRow {
    pub schema_version: &'static str,
    pub param: Option<String>,
    pub value: Option<f64>,
    pub n: usize,
    pub s_n: f64,
    pub s_n_branch_resolved: Option<f64>,
    pub qber: f64,
    pub qber_lower_bound: f64,
    pub qber_upper_bound: f64,
    pub variance_identity_residual: f64,
    pub bhatia_davis_slack: f64,
    pub w_t: f64,
    pub w_t_raw: f64,
    pub sdp_status: SdpStatus,
    pub secure: bool,
    pub monogamous: bool,
}

impl CsvRow {
    pub fn new(a: &ChannelAnalysis, param: Option<(&str, f64)>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            param: param.map(|p| p.0.to_string()),
            value: param.map(|p| p.1),
            n: a.summary.n,
            s_n: a.summary.s,
            s_n_branch_resolved: a.summary.branch_resolved_s,
            qber: a.summary.qber,
            qber_lower_bound: a.qber_lower_bound,
            qber_upper_bound: a.qber_upper_bound,
            variance_identity_residual: a.variance_identity_residual,
            bhatia_davis_slack: a.bhatia_davis_slack,
            w_t: a.w_t,
            w_t_raw: a.w_t_raw,
            sdp_status: a.sdp.status,
            secure: a.verdict.secure,
            monogamous: a.verdict.monogamous,
        }
    }
}

/// Any output record tagged with the schema version.
#[derive(Debug, Serialize)]
pub struct Versioned<'a, T: Serialize> {
    pub schema_version: &'static str,
    pub command: &'static str,
    #[serde(flatten)]
    pub body: &'a T,
}

pub fn versioned<'a, T: Serialize>(command: &'static str, body: &'a T) -> Versioned<'a, T> {
    Versioned { schema_version: SCHEMA_VERSION, command, body }
}
