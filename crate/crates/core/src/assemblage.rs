//! Assemblages `{ρ_{a|A_i}}`: construction from a channel, local-hidden-state
//! models built from deterministic response tables, and tomographic
//! reconstruction from Bob's outcome counts.
//!
//! Members are keyed by the Pauli basis index `i` of Alice's observable. The
//! observables `A_1 … A_N` of the response tables are the bases in ascending
//! order, so for BB84 with bases `{σ_x, σ_z}` the table's `A_2` is `σ_z`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::channels::Channel;
use crate::error::{domain, invalid, Error, Result};
use crate::metrics::check_bases;
use crate::qubit::{labels_for, outer, pauli, ComplexMatrix2, DensityMatrix, MubLabel, Outcome};
use crate::scalar::{Real, Tolerances};

/// Tolerance on `|tr Σ_a ρ_{a|A_i} − 1|`.
pub const CONSISTENCY_TOL: f64 = 1e-8;

/// Subnormalized conditional states indexed by `(i, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assemblage<T> {
    bases: Vec<usize>,
    /// `members[k][outcome.index()]` for `bases[k]`.
    members: Vec<[ComplexMatrix2<T>; 2]>,
}

impl<T: Real> Assemblage<T> {
    /// Validated constructor: every member Hermitian and PSD, and the
    /// consistency relation holding for every basis.
    pub fn new(members: Vec<(MubLabel, ComplexMatrix2<T>)>, tol: &Tolerances) -> Result<Self> {
        let asm = Self::from_raw(members, tol)?;
        for (l, m) in asm.iter() {
            let [lo, _] = m.hermitian_eigenvalues();
            if lo < -tol.psd::<T>() {
                return invalid(format!("member {l} has negative eigenvalue {lo}"));
            }
        }
        let residual = check_consistency(&asm);
        if residual > T::tol(CONSISTENCY_TOL) {
            return invalid(format!("consistency residual {residual} exceeds {CONSISTENCY_TOL}"));
        }
        Ok(asm)
    }

    /// Structural checks only: a complete set of Hermitian members over 2 or 3
    /// distinct bases. Positivity and consistency are left to the caller.
    pub fn from_raw(members: Vec<(MubLabel, ComplexMatrix2<T>)>, tol: &Tolerances) -> Result<Self> {
        let mut map: BTreeMap<MubLabel, ComplexMatrix2<T>> = BTreeMap::new();
        for (l, m) in members {
            if !m.is_finite() || !m.is_hermitian(tol.herm()) {
                return invalid(format!("member {l} is not a finite Hermitian matrix"));
            }
            if map.insert(l, m).is_some() {
                return invalid(format!("duplicate member {l}"));
            }
        }
        let mut bases: Vec<usize> = map.keys().map(|l| l.basis()).collect();
        bases.dedup();
        check_bases(&bases)?;
        let members = bases
            .iter()
            .map(|&b| {
                let get = |a| {
                    let l = MubLabel::new(b, a)?;
                    map.get(&l).copied().ok_or_else(|| Error::Validation(format!("missing member {l}")))
                };
                Ok([get(Outcome::Plus)?, get(Outcome::Minus)?])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { bases, members })
    }

    pub fn n(&self) -> usize {
        self.bases.len()
    }

    pub fn bases(&self) -> &[usize] {
        &self.bases
    }

    /// Position `0..N` of a Pauli basis among the assemblage's observables.
    pub fn position(&self, basis: usize) -> Option<usize> {
        self.bases.iter().position(|&b| b == basis)
    }

    pub fn member(&self, label: MubLabel) -> Option<&ComplexMatrix2<T>> {
        let k = self.position(label.basis())?;
        Some(&self.members[k][label.outcome().index()])
    }

    pub fn iter(&self) -> impl Iterator<Item = (MubLabel, &ComplexMatrix2<T>)> + '_ {
        labels_for(&self.bases).into_iter().map(move |l| (l, self.member(l).expect("own label")))
    }

    fn map_members(&self, f: impl Fn(&ComplexMatrix2<T>) -> ComplexMatrix2<T>) -> Self {
        Self {
            bases: self.bases.clone(),
            members: self.members.iter().map(|[p, m]| [f(p), f(m)]).collect(),
        }
    }

    /// `U ρ_{a|A_i} U†` for every member.
    pub fn conjugate(&self, u: &ComplexMatrix2<T>) -> Self {
        self.map_members(|m| m.conjugate_by(u))
    }

    /// Post-processing of every member by a channel.
    pub fn map_channel(&self, channel: &Channel<T>) -> Self {
        self.map_members(|m| channel.apply_matrix(m))
    }

    /// `w·self + (1 − w)·other`, member by member.
    pub fn mix(&self, other: &Self, w: T) -> Result<Self> {
        if self.bases != other.bases {
            return invalid("cannot mix assemblages over different bases");
        }
        let members = self
            .members
            .iter()
            .zip(&other.members)
            .map(|(a, b)| [a[0].scale(w) + b[0].scale(T::one() - w), a[1].scale(w) + b[1].scale(T::one() - w)])
            .collect();
        Ok(Self { bases: self.bases.clone(), members })
    }

    pub fn cast<U: Real>(&self) -> Assemblage<U> {
        Assemblage {
            bases: self.bases.clone(),
            members: self.members.iter().map(|[p, m]| [p.cast(), m.cast()]).collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
struct RawMember<T> {
    i: usize,
    a: i64,
    matrix: ComplexMatrix2<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
struct RawAssemblage<T> {
    #[serde(rename = "N")]
    n: usize,
    members: Vec<RawMember<T>>,
}

impl<T: Real + Serialize> Serialize for Assemblage<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RawAssemblage {
            n: self.n(),
            members: self
                .iter()
                .map(|(l, m)| RawMember { i: l.basis(), a: l.outcome().sign() as i64, matrix: *m })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de, T: Real + Deserialize<'de>> Deserialize<'de> for Assemblage<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawAssemblage::<T>::deserialize(d)?;
        let members = raw
            .members
            .into_iter()
            .map(|m| Ok((MubLabel::new(m.i, Outcome::from_sign(m.a)?)?, m.matrix)))
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        let asm = Assemblage::new(members, &Tolerances::default()).map_err(D::Error::custom)?;
        if asm.n() != raw.n {
            return Err(D::Error::custom(format!("N = {} but members cover {} bases", raw.n, asm.n())));
        }
        Ok(asm)
    }
}

/// Deterministic response functions `D_γ(a|A_i)`.
///
/// Rows are ordered `(−1|A_1, +1|A_1, −1|A_2, +1|A_2, …)` and columns
/// `γ = 1 … 2^N` follow the published tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StrategyTable {
    n: usize,
    rows: Vec<Vec<u8>>,
}

const TABLE_N2: [[u8; 4]; 4] = [[0, 0, 1, 1], [1, 1, 0, 0], [1, 0, 1, 0], [0, 1, 0, 1]];

const TABLE_N3: [[u8; 8]; 6] = [
    [0, 0, 0, 0, 1, 1, 1, 1],
    [1, 1, 1, 1, 0, 0, 0, 0],
    [0, 0, 1, 1, 0, 0, 1, 1],
    [1, 1, 0, 0, 1, 1, 0, 0],
    [0, 1, 0, 1, 0, 1, 0, 1],
    [1, 0, 1, 0, 1, 0, 1, 0],
];

pub fn strategy_table(n: usize) -> Result<StrategyTable> {
    let rows = match n {
        2 => TABLE_N2.iter().map(|r| r.to_vec()).collect(),
        3 => TABLE_N3.iter().map(|r| r.to_vec()).collect(),
        _ => return domain(format!("strategy tables exist for N = 2 or 3, got {n}")),
    };
    Ok(StrategyTable { n, rows })
}

impl StrategyTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn strategies(&self) -> usize {
        1 << self.n
    }

    /// Row index of `(a | A_{position+1})`.
    pub fn row(position: usize, outcome: Outcome) -> usize {
        2 * position + if outcome == Outcome::Plus { 1 } else { 0 }
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }

    /// `D_γ(a|A_{position+1})` for `gamma ∈ 0..2^N`.
    pub fn value(&self, gamma: usize, position: usize, outcome: Outcome) -> bool {
        self.rows[Self::row(position, outcome)][gamma] == 1
    }

    /// The assignment `A_k ↦ a` made by strategy `gamma`.
    pub fn assignment(&self, gamma: usize) -> Vec<Outcome> {
        (0..self.n)
            .map(|k| if self.value(gamma, k, Outcome::Plus) { Outcome::Plus } else { Outcome::Minus })
            .collect()
    }
}

/// `ρ_{a|A_i} = ½ Φ(|a, A_i⟩⟨a, A_i|)` with equal priors.
pub fn build_assemblage<T: Real>(channel: &Channel<T>, bases: &[usize]) -> Result<Assemblage<T>> {
    check_bases(bases)?;
    let mut sorted = bases.to_vec();
    sorted.sort_unstable();
    let half = T::lit(0.5);
    let members = labels_for(&sorted)
        .into_iter()
        .map(|l| Ok((l, channel.apply(&DensityMatrix::mub_state(l))?.matrix().scale(half))))
        .collect::<Result<Vec<_>>>()?;
    Assemblage::from_raw(members, &Tolerances::default())
}

/// `max_i |tr Σ_a ρ_{a|A_i} − 1|`.
pub fn check_consistency<T: Real>(asm: &Assemblage<T>) -> T {
    asm.members
        .iter()
        .map(|[p, m]| (p.trace().re + m.trace().re - T::one()).abs())
        .fold(T::zero(), |a, r| a.max(r))
}

/// Unsteerable assemblage `ρ_{a|A_i} = Σ_γ D_γ(a|A_i) ρ_γ` over the given bases.
pub fn lhs_assemblage<T: Real>(
    table: &StrategyTable,
    bases: &[usize],
    states: &[ComplexMatrix2<T>],
    tol: &Tolerances,
) -> Result<Assemblage<T>> {
    check_bases(bases)?;
    if bases.len() != table.n() {
        return invalid(format!("table is for N = {} but {} bases given", table.n(), bases.len()));
    }
    if states.len() != table.strategies() {
        return invalid(format!("need {} hidden states, got {}", table.strategies(), states.len()));
    }
    let mut total = T::zero();
    for (g, s) in states.iter().enumerate() {
        if !s.is_hermitian(tol.herm()) || s.hermitian_eigenvalues()[0] < -tol.psd::<T>() {
            return invalid(format!("hidden state {} is not PSD", g + 1));
        }
        total = total + s.trace().re;
    }
    if (total - T::one()).abs() > tol.trace::<T>() {
        return invalid(format!("hidden states have total trace {total}, expected 1"));
    }
    let mut sorted = bases.to_vec();
    sorted.sort_unstable();
    let members = labels_for(&sorted)
        .into_iter()
        .map(|l| {
            let k = sorted.iter().position(|&b| b == l.basis()).expect("own basis");
            let m = states
                .iter()
                .enumerate()
                .filter(|(g, _)| table.value(*g, k, l.outcome()))
                .fold(ComplexMatrix2::zero(), |acc, (_, s)| acc + *s);
            (l, m)
        })
        .collect();
    Assemblage::new(members, tol)
}

/// Norm of each member's off-diagonal block in its own `A_i` eigenbasis:
/// the part of the assemblage that `S_N` ignores.
pub fn offdiagonal_remainder<T: Real>(asm: &Assemblage<T>) -> Vec<(MubLabel, T)> {
    asm.iter()
        .map(|(l, m)| {
            let plus = MubLabel::new(l.basis(), Outcome::Plus).expect("valid").ket::<T>();
            let minus = MubLabel::new(l.basis(), Outcome::Minus).expect("valid").ket::<T>();
            let e = m.entries();
            let mv = [e[0][0] * minus[0] + e[0][1] * minus[1], e[1][0] * minus[0] + e[1][1] * minus[1]];
            let coupling = plus[0].conj() * mv[0] + plus[1].conj() * mv[1];
            (l, T::SQRT_2() * coupling.norm())
        })
        .collect()
}

/// Bob's outcome counts per preparation `(i, a)`: `n[j−1][b]` for measuring `σ_j`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TomographyCounts {
    cells: BTreeMap<MubLabel, [[u64; 2]; 3]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CountRow {
    i: usize,
    a: i64,
    j: usize,
    b: i64,
    count: u64,
}

impl TomographyCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, prep: MubLabel, j: usize, b: Outcome, count: u64) -> Result<()> {
        crate::qubit::check_basis(j)?;
        let cell = self.cells.entry(prep).or_default();
        cell[j - 1][b.index()] += count;
        Ok(())
    }

    pub fn get(&self, prep: MubLabel, j: usize, b: Outcome) -> u64 {
        self.cells.get(&prep).map_or(0, |c| c[j - 1][b.index()])
    }

    pub fn preparations(&self) -> impl Iterator<Item = MubLabel> + '_ {
        self.cells.keys().copied()
    }

    pub fn total(&self, prep: MubLabel) -> u64 {
        self.cells.get(&prep).map_or(0, |c| c.iter().flatten().sum())
    }

    pub fn merge(&mut self, other: &TomographyCounts) {
        for (l, c) in &other.cells {
            let cell = self.cells.entry(*l).or_default();
            for j in 0..3 {
                for b in 0..2 {
                    cell[j][b] += c[j][b];
                }
            }
        }
    }

    /// Expected counts `shots · P(b | ρ, σ_j)` rounded to integers; exact for
    /// probabilities that are multiples of `1/shots`.
    pub fn from_assemblage(asm: &Assemblage<f64>, shots: u64) -> Self {
        let mut out = Self::new();
        for (l, m) in asm.iter() {
            let tr = m.trace().re;
            for j in 1..=3 {
                for b in Outcome::BOTH {
                    let proj = MubLabel::new(j, b).expect("valid").projector::<f64>();
                    let p = if tr > 0.0 { (*m * proj).trace().re / tr } else { 0.5 };
                    out.add(l, j, b, (p * shots as f64).round() as u64).expect("valid basis");
                }
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for (l, c) in &self.cells {
            for j in 1..=3 {
                for b in Outcome::BOTH {
                    wr.serialize(CountRow {
                        i: l.basis(),
                        a: l.outcome().sign() as i64,
                        j,
                        b: b.sign() as i64,
                        count: c[j - 1][b.index()],
                    })?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut out = Self::new();
        for row in rd.deserialize() {
            let row: CountRow = row?;
            let prep = MubLabel::new(row.i, Outcome::from_sign(row.a)?)?;
            out.add(prep, row.j, Outcome::from_sign(row.b)?, row.count)?;
        }
        Ok(out)
    }
}

impl Serialize for TomographyCounts {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = s.serialize_seq(Some(self.cells.len() * 6))?;
        for (l, c) in &self.cells {
            for j in 1..=3 {
                for b in Outcome::BOTH {
                    seq.serialize_element(&CountRow {
                        i: l.basis(),
                        a: l.outcome().sign() as i64,
                        j,
                        b: b.sign() as i64,
                        count: c[j - 1][b.index()],
                    })?;
                }
            }
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for TomographyCounts {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<CountRow>::deserialize(d)?;
        let mut out = Self::new();
        for row in rows {
            let prep = MubLabel::new(row.i, Outcome::from_sign(row.a).map_err(D::Error::custom)?).map_err(D::Error::custom)?;
            let b = Outcome::from_sign(row.b).map_err(D::Error::custom)?;
            out.add(prep, row.j, b, row.count).map_err(D::Error::custom)?;
        }
        Ok(out)
    }
}

/// How `P(a|A_i)` is assigned when rebuilding an assemblage from counts.
#[derive(Debug, Clone, PartialEq)]
pub enum Priors {
    /// `P(a|A_i) = ½`.
    Equal,
    /// Relative frequency of each preparation among the tomography counts.
    FromCounts,
    /// Externally estimated priors, e.g. from sifted key rounds.
    Explicit(BTreeMap<MubLabel, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reconstruction {
    pub assemblage: Assemblage<f64>,
    /// Preparations whose linear-inversion estimate was not PSD and was projected.
    pub projected: Vec<MubLabel>,
    /// Linear-inversion Bloch vector per preparation, before projection.
    pub raw_bloch: Vec<(MubLabel, [f64; 3])>,
}

/// Closest unit-trace PSD matrix obtained by clipping negative eigenvalues.
fn project_psd(m: &ComplexMatrix2<f64>) -> ComplexMatrix2<f64> {
    let (vals, vecs) = m.hermitian_eigen();
    let clipped = [vals[0].max(0.0), vals[1].max(0.0)];
    let tr = clipped[0] + clipped[1];
    outer(&vecs[0]).scale(clipped[0] / tr) + outer(&vecs[1]).scale(clipped[1] / tr)
}

/// Linear-inversion tomography `ρ̂ = ½(I + Σ_j r̂_j σ_j)` per preparation,
/// projected to the PSD cone when needed, then weighted by the prior.
pub fn reconstruct(counts: &TomographyCounts, priors: &Priors) -> Result<Reconstruction> {
    let labels: Vec<MubLabel> = counts.preparations().collect();
    if labels.is_empty() {
        return Err(Error::InsufficientData("no tomography counts".into()));
    }
    let mut bases: Vec<usize> = labels.iter().map(|l| l.basis()).collect();
    bases.dedup();
    check_bases(&bases)?;

    let mut members = Vec::new();
    let mut projected = Vec::new();
    let mut raw_bloch = Vec::new();
    for l in labels_for(&bases) {
        let mut r = [0.0; 3];
        for j in 1..=3 {
            let plus = counts.get(l, j, Outcome::Plus);
            let minus = counts.get(l, j, Outcome::Minus);
            let total = plus + minus;
            if total == 0 {
                return Err(Error::InsufficientData(format!("no counts for preparation {l} measured in basis {j}")));
            }
            r[j - 1] = (plus as f64 - minus as f64) / total as f64;
        }
        raw_bloch.push((l, r));
        let mut rho = ComplexMatrix2::from_pauli_coords([0.5, 0.5 * r[0], 0.5 * r[1], 0.5 * r[2]]);
        if rho.hermitian_eigenvalues()[0] < 0.0 {
            rho = project_psd(&rho);
            projected.push(l);
        }
        let prior = match priors {
            Priors::Equal => 0.5,
            Priors::FromCounts => {
                let own = counts.total(l) as f64;
                let both = own + counts.total(MubLabel::new(l.basis(), l.outcome().flip())?) as f64;
                own / both
            }
            Priors::Explicit(map) => *map
                .get(&l)
                .ok_or_else(|| Error::InsufficientData(format!("no prior for preparation {l}")))?,
        };
        members.push((l, rho.scale(prior)));
    }
    let assemblage = Assemblage::new(members, &Tolerances::default())?;
    Ok(Reconstruction { assemblage, projected, raw_bloch })
}

/// `σ_j` expectation value of an assemblage member, normalized by its trace.
pub fn member_bloch(m: &ComplexMatrix2<f64>) -> Result<[f64; 3]> {
    let tr = m.trace().re;
    if tr <= 0.0 {
        return invalid("member has zero trace");
    }
    let mut r = [0.0; 3];
    for (j, slot) in r.iter_mut().enumerate() {
        *slot = (*m * pauli::<f64>(j + 1)?).trace().re / tr;
    }
    Ok(r)
}
