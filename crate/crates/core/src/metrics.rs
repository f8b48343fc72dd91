//! Temporal-steering parameter `S_N`, QBER and the analytic bounds relating
//! them, plus the security verdicts for BB84 (`N = 2`) and the six-state
//! protocol (`N = 3`).
//!
//! Two steering estimators are provided:
//!
//! * [`steering_parameter`] works on the channel-averaged (observed) fidelities.
//!   This is what Alice and Bob can measure, and it is the quantity in every
//!   QBER bound.
//! * [`branch_resolved_steering`] squares the conditional expectation inside
//!   each Kraus branch before averaging. It needs the branch label `λ`, which
//!   a real adversary does not disclose, so treat it as a diagnostic. For the
//!   intercept-resend attack it equals one exactly.
//!
//! By convexity the branch-resolved value is never below the observed one.

use serde::{Deserialize, Serialize};

use crate::channels::Channel;
use crate::error::{domain, invalid, Error, Result};
use crate::qubit::{labels_for, DensityMatrix, MubLabel, Outcome};
use crate::scalar::Real;

/// Tolerance on probability normalization for conditional statistics.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Distance to a threshold that counts as sitting on it. Verdicts use strict
/// inequalities, so a value within this band of a threshold is not secure.
pub const THRESHOLD_TOL: f64 = 1e-12;

/// Default unconditional-security QBER threshold.
pub const DEFAULT_UNCONDITIONAL_Q: f64 = 0.1;

/// Default Pauli bases for `N` mutually unbiased bases: `{σ_x, σ_z}` or all three.
pub fn default_bases(n: usize) -> Result<Vec<usize>> {
    match n {
        2 => Ok(vec![1, 3]),
        3 => Ok(vec![1, 2, 3]),
        _ => domain(format!("number of bases must be 2 or 3, got {n}")),
    }
}

pub(crate) fn check_bases(bases: &[usize]) -> Result<()> {
    if !(2..=3).contains(&bases.len()) {
        return domain(format!("number of bases must be 2 or 3, got {}", bases.len()));
    }
    for (k, &b) in bases.iter().enumerate() {
        crate::qubit::check_basis(b)?;
        if bases[..k].contains(&b) {
            return domain(format!("duplicate basis {b} in {bases:?}"));
        }
    }
    Ok(())
}

/// Transmission fidelities `F_{i,a}` for each of the `2N` basis states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct FidelityTable<T> {
    bases: Vec<usize>,
    /// `values[k] = [F(bases[k], +1), F(bases[k], −1)]`.
    values: Vec<[T; 2]>,
}

impl<T: Real> FidelityTable<T> {
    pub fn new(bases: Vec<usize>, values: Vec<[T; 2]>) -> Result<Self> {
        check_bases(&bases)?;
        if values.len() != bases.len() {
            return invalid(format!("expected {} fidelity pairs, got {}", bases.len(), values.len()));
        }
        if let Some(f) = values.iter().flatten().find(|f| !(T::zero()..=T::one()).contains(*f)) {
            return invalid(format!("fidelity {f} outside [0, 1]"));
        }
        Ok(Self { bases, values })
    }

    pub fn n(&self) -> usize {
        self.bases.len()
    }

    pub fn bases(&self) -> &[usize] {
        &self.bases
    }

    pub fn get(&self, label: MubLabel) -> Option<T> {
        let k = self.bases.iter().position(|&b| b == label.basis())?;
        Some(self.values[k][label.outcome().index()])
    }

    pub fn iter(&self) -> impl Iterator<Item = (MubLabel, T)> + '_ {
        labels_for(&self.bases).into_iter().map(move |l| (l, self.get(l).expect("label from own bases")))
    }

    fn all(&self) -> impl Iterator<Item = T> + '_ {
        self.values.iter().flatten().copied()
    }

    fn count(&self) -> T {
        T::from_usize(2 * self.n()).expect("small count")
    }

    pub fn mean(&self) -> T {
        self.all().fold(T::zero(), |a, f| a + f) / self.count()
    }

    /// Population variance of the `2N` fidelities.
    pub fn variance(&self) -> T {
        let mean = self.mean();
        self.all().fold(T::zero(), |a, f| a + (f - mean) * (f - mean)) / self.count()
    }

    pub fn min(&self) -> T {
        self.all().fold(T::infinity(), |a, f| a.min(f))
    }

    pub fn max(&self) -> T {
        self.all().fold(T::neg_infinity(), |a, f| a.max(f))
    }
}

/// `F_{i,a} = ⟨a, A_i| Φ(|a, A_i⟩⟨a, A_i|) |a, A_i⟩` for each basis in `bases`.
pub fn fidelity_table<T: Real>(channel: &Channel<T>, bases: &[usize]) -> Result<FidelityTable<T>> {
    check_bases(bases)?;
    let values = bases
        .iter()
        .map(|&b| {
            let f = |a| -> Result<T> {
                let l = MubLabel::new(b, a)?;
                Ok(channel.apply(&DensityMatrix::mub_state(l))?.fidelity_to_pure(l))
            };
            Ok([f(Outcome::Plus)?, f(Outcome::Minus)?])
        })
        .collect::<Result<Vec<_>>>()?;
    FidelityTable::new(bases.to_vec(), values)
}

/// `S_N = ½ Σ_{i,a} (2F_{i,a} − 1)²`.
pub fn steering_parameter<T: Real>(table: &FidelityTable<T>) -> T {
    let two = T::lit(2.0);
    let sum = table.all().fold(T::zero(), |acc, f| {
        let e = two * f - T::one();
        acc + e * e
    });
    sum * T::lit(0.5)
}

/// Outcome statistics for one of Alice's bases, with Bob measuring the same basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisStatistics<T> {
    pub basis: usize,
    /// `[P(a=+1|A_i), P(a=−1|A_i)]`.
    pub prior: [T; 2],
    /// `conditional[a][b] = P(b | A_i = a, B_i)` with index 0 for `+1`.
    pub conditional: [[T; 2]; 2],
}

/// `Σ_i Σ_a P(a|A_i) ⟨B_i⟩²_{a|A_i}`, where `⟨B_i⟩_{a|A_i} = Σ_b b P(b|A_i=a, B_i)`.
pub fn steering_parameter_from_statistics<T: Real>(stats: &[BasisStatistics<T>]) -> Result<T> {
    let tol = T::tol(NORMALIZATION_TOL);
    let bases: Vec<usize> = stats.iter().map(|s| s.basis).collect();
    check_bases(&bases)?;
    let mut total = T::zero();
    for s in stats {
        let probs = s.prior.iter().chain(s.conditional.iter().flatten());
        if probs.clone().any(|&p| p < -tol || p > T::one() + tol || !p.is_finite()) {
            return invalid(format!("basis {}: probability outside [0, 1]", s.basis));
        }
        if (s.prior[0] + s.prior[1] - T::one()).abs() > tol {
            return invalid(format!("basis {}: priors are not normalized", s.basis));
        }
        for (a, row) in s.conditional.iter().enumerate() {
            if (row[0] + row[1] - T::one()).abs() > tol {
                return invalid(format!("basis {}: P(b|a) for row {a} is not normalized", s.basis));
            }
            let expectation = row[0] - row[1];
            total = total + s.prior[a] * expectation * expectation;
        }
    }
    Ok(total)
}

/// Exact Born-rule statistics for a channel with equal priors.
pub fn statistics_from_channel<T: Real>(channel: &Channel<T>, bases: &[usize]) -> Result<Vec<BasisStatistics<T>>> {
    check_bases(bases)?;
    let half = T::lit(0.5);
    bases
        .iter()
        .map(|&b| {
            let mut conditional = [[T::zero(); 2]; 2];
            for a in Outcome::BOTH {
                let out = channel.apply(&DensityMatrix::mub_state(MubLabel::new(b, a)?))?;
                for bob in Outcome::BOTH {
                    conditional[a.index()][bob.index()] = out.fidelity_to_pure(MubLabel::new(b, bob)?);
                }
            }
            Ok(BasisStatistics { basis: b, prior: [half, half], conditional })
        })
        .collect()
}

/// `½ Σ_{i,a} Σ_λ q_λ(i,a) (2F^{(λ)}_{i,a} − 1)²` with `F^{(λ)}` the fidelity
/// of the post-branch state.
pub fn branch_resolved_steering<T: Real>(channel: &Channel<T>, bases: &[usize]) -> Result<T> {
    check_bases(bases)?;
    let two = T::lit(2.0);
    let mut total = T::zero();
    for l in labels_for(bases) {
        let input = DensityMatrix::mub_state(l);
        channel.apply(&input)?;
        for br in channel.branch_decompose(&input) {
            let e = two * br.state.fidelity_to_pure(l) - T::one();
            total = total + br.q_lambda * e * e;
        }
    }
    Ok(total * T::lit(0.5))
}

/// `QBER_N = 1 − F_N`.
pub fn qber<T: Real>(table: &FidelityTable<T>) -> T {
    T::one() - table.mean()
}

fn check_n(n: usize) -> Result<f64> {
    match n {
        2 | 3 => Ok(n as f64),
        _ => domain(format!("number of bases must be 2 or 3, got {n}")),
    }
}

fn check_s<T: Real>(s: T, n: usize) -> Result<T> {
    let nf = T::lit(check_n(n)?);
    let slack = T::tol(1e-12) * nf;
    if !s.is_finite() || s < -slack || s > nf + slack {
        return domain(format!("steering parameter {s} outside [0, {n}]"));
    }
    Ok(s.max(T::zero()).min(nf))
}

/// `½(1 − √(S_N/N))`, the smallest QBER compatible with `S_N`.
pub fn qber_lower_bound<T: Real>(s: T, n: usize) -> Result<T> {
    let s = check_s(s, n)?;
    let nf = T::lit(n as f64);
    Ok(T::lit(0.5) * (T::one() - (s / nf).sqrt()))
}

/// Largest QBER compatible with `S_N` when every fidelity lies in `[m, M]`.
///
/// Follows from combining the variance identity with the Bhatia–Davis
/// inequality `σ² ≤ (M − F_N)(F_N − m)`:
/// `QBER·(M + m − 1) ≤ (M − 1)(1 − m) + (1 − S_N/N)/4`.
/// At `M = 1` this is `(M − S_N/N)/(4m)`. When `M + m ≤ 1` the inequality no
/// longer bounds the QBER from above and the trivial bound `1 − m` is returned.
pub fn qber_upper_bound<T: Real>(s: T, n: usize, m: T, big_m: T) -> Result<T> {
    let s = check_s(s, n)?;
    if !(m > T::zero() && m <= big_m && big_m <= T::one()) {
        return domain(format!("need 0 < m ≤ M ≤ 1, got m = {m}, M = {big_m}"));
    }
    let nf = T::lit(n as f64);
    let quarter = T::lit(0.25);
    let coeff = big_m + m - T::one();
    if coeff <= T::zero() {
        return Ok(T::one() - m);
    }
    Ok(((big_m - T::one()) * (T::one() - m) + quarter * (T::one() - s / nf)) / coeff)
}

/// `|σ² − [QBER(1 − QBER) + (S_N − N)/(4N)]|`.
pub fn variance_identity_check<T: Real>(table: &FidelityTable<T>) -> T {
    let q = qber(table);
    let s = steering_parameter(table);
    let nf = T::lit(table.n() as f64);
    let predicted = q * (T::one() - q) + (s - nf) / (T::lit(4.0) * nf);
    (table.variance() - predicted).abs()
}

/// Bhatia–Davis slack `(M − F_N)(F_N − m) − σ²`, non-negative for every table.
pub fn bhatia_davis_check<T: Real>(table: &FidelityTable<T>) -> T {
    let mean = table.mean();
    (table.max() - mean) * (mean - table.min()) - table.variance()
}

/// `4N(½ − QBER)²`: the steering parameter under isotropic noise.
pub fn symmetric_noise_s<T: Real>(qber: T, n: usize) -> Result<T> {
    let nf = T::lit(check_n(n)?);
    if !(T::zero()..=T::one()).contains(&qber) {
        return domain(format!("QBER {qber} outside [0, 1]"));
    }
    let d = T::lit(0.5) - qber;
    Ok(T::lit(4.0) * nf * d * d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "BB84")]
    Bb84,
    #[serde(rename = "B98")]
    B98,
}

impl Protocol {
    pub fn n(self) -> usize {
        match self {
            Protocol::Bb84 => 2,
            Protocol::B98 => 3,
        }
    }

    pub fn from_n(n: usize) -> Result<Self> {
        match n {
            2 => Ok(Protocol::Bb84),
            3 => Ok(Protocol::B98),
            _ => domain(format!("number of bases must be 2 or 3, got {n}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    /// Thresholds set by optimal cloning: `q_2 = ½(1 − 1/√2)`, `q_3 = 1/6`.
    Individual,
    /// A configurable unconditional-security QBER threshold.
    Unconditional,
}

impl std::str::FromStr for AttackMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "individual" => Ok(AttackMode::Individual),
            "unconditional" => Ok(AttackMode::Unconditional),
            _ => domain(format!("unknown attack mode '{s}'")),
        }
    }
}

/// Individual-attack QBER threshold `q_N`.
pub fn individual_threshold(n: usize) -> Result<f64> {
    match n {
        2 => Ok(0.5 * (1.0 - std::f64::consts::FRAC_1_SQRT_2)),
        3 => Ok(1.0 / 6.0),
        _ => domain(format!("number of bases must be 2 or 3, got {n}")),
    }
}

/// `N(1 − 2q)²`.
pub fn s_threshold(n: usize, q: f64) -> f64 {
    let d = 1.0 - 2.0 * q;
    n as f64 * d * d
}

/// `2^{N−1}/N`.
pub fn monogamy_threshold(n: usize) -> f64 {
    (1u32 << (n - 1)) as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecurityVerdict {
    pub protocol: Protocol,
    pub mode: AttackMode,
    pub n: usize,
    pub s: f64,
    pub q_threshold: f64,
    /// `N(1 − 2q_N)²`.
    pub s_threshold: f64,
    /// `2^{N−1}/N`.
    pub monogamy_threshold: f64,
    pub secure: bool,
    pub monogamous: bool,
}

/// `secure ⇔ S_N > N(1 − 2q_N)²`, `monogamous ⇔ S_N > 2^{N−1}/N`, both strict.
pub fn security_verdict(s: f64, n: usize, mode: AttackMode, q_override: Option<f64>) -> Result<SecurityVerdict> {
    let protocol = Protocol::from_n(n)?;
    let q = match (mode, q_override) {
        (AttackMode::Individual, None) => individual_threshold(n)?,
        (AttackMode::Individual, Some(_)) => {
            return domain("a QBER override only applies to unconditional mode");
        }
        (AttackMode::Unconditional, q) => q.unwrap_or(DEFAULT_UNCONDITIONAL_Q),
    };
    if !(q > 0.0 && q < 0.5) {
        return domain(format!("QBER threshold must lie in (0, 1/2), got {q}"));
    }
    if !s.is_finite() {
        return domain("steering parameter is not finite");
    }
    let s_thr = s_threshold(n, q);
    let mono = monogamy_threshold(n);
    Ok(SecurityVerdict {
        protocol,
        mode,
        n,
        s,
        q_threshold: q,
        s_threshold: s_thr,
        monogamy_threshold: mono,
        secure: s > s_thr + THRESHOLD_TOL,
        monogamous: s > mono + THRESHOLD_TOL,
    })
}

/// Everything derived from one fidelity table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringSummary<T> {
    pub s: T,
    pub n: usize,
    pub qber: T,
    pub f_mean: T,
    pub variance: T,
    /// Smallest fidelity.
    pub m: T,
    /// Largest fidelity.
    #[serde(rename = "M")]
    pub big_m: T,
    pub branch_resolved_s: Option<T>,
}

impl<T: Real> SteeringSummary<T> {
    pub fn from_table(table: &FidelityTable<T>) -> Self {
        Self {
            s: steering_parameter(table),
            n: table.n(),
            qber: qber(table),
            f_mean: table.mean(),
            variance: table.variance(),
            m: table.min(),
            big_m: table.max(),
            branch_resolved_s: None,
        }
    }

    pub fn lower_bound(&self) -> Result<T> {
        qber_lower_bound(self.s, self.n)
    }

    pub fn upper_bound(&self) -> Result<T> {
        qber_upper_bound(self.s, self.n, self.m, self.big_m)
    }
}
