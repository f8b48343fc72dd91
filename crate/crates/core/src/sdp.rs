//! Temporal steerable weight via a small semidefinite program.
//!
//! The program is
//!
//! ```text
//! maximize   Σ_γ tr ρ_γ
//! subject to ρ_{a|A_i} − Σ_γ D_γ(a|A_i) ρ_γ ⪰ 0,   ρ_γ ⪰ 0,
//! ```
//!
//! and `w_t = 1 − max`. Every block is a 2×2 Hermitian matrix. Writing
//! `X = x₀I + x⃗·σ⃗`, the condition `X ⪰ 0` becomes `x₀ ≥ |x⃗|`, so the SDP is a
//! real second-order cone program
//!
//! ```text
//! minimize cᵀx  subject to  Gx + s = h,  s ∈ K
//! ```
//!
//! with dual `maximize −hᵀz  subject to  Gᵀz + c = 0,  z ∈ K`, solved by an
//! infeasible-start primal-dual interior-point method with Nesterov–Todd
//! scaling and Mehrotra's predictor-corrector.
//!
//! Rank-deficient members (pure conditional states) leave the primal without
//! an interior point. Before solving, each such member pins the `ρ_γ` it
//! bounds to the ray through its range, or to zero when two members disagree.
//! The reduced problem has the same feasible set and is strictly feasible, so
//! the iteration stays well conditioned.
//!
//! In matrix form the dual reads `minimize Σ_r tr(ρ_r Z_r)` subject to
//! `Σ_r D_γ(r) Z_r ⪰ I` on every face; the `Z_r` are returned as the
//! certificate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::assemblage::{check_consistency, strategy_table, Assemblage, StrategyTable, CONSISTENCY_TOL};
use crate::error::{invalid, Error, Result};
use crate::qubit::{labels_for, outer, ComplexMatrix2, MubLabel};
use crate::scalar::Tolerances;

pub const DEFAULT_SDP_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;
/// Weights below this are reported as 0; the raw value is kept.
pub const WEIGHT_REPORT_FLOOR: f64 = 1e-6;
/// Member eigenvalues at or below this count as zero for facial reduction.
pub const SINGULAR_TOL: f64 = 1e-11;

const STEP_FRACTION: f64 = 0.98;
const UNITARY_TOL: f64 = 1e-10;
const SAME_RAY_TOL: f64 = 1e-9;
/// Slack allowed in the direct eigenvalue check of a certified witness.
const CERTIFY_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_SDP_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Result<Self> {
        if !(tol.is_finite() && tol > 0.0) {
            return invalid(format!("solver tolerance must be positive, got {tol}"));
        }
        Ok(Self { tol, ..Self::default() })
    }
}

/// The face of the PSD cone a block is restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "face", rename_all = "snake_case")]
pub enum Face {
    /// Any 2×2 PSD matrix; 4 real coordinates.
    Full,
    /// `t·|ψ⟩⟨ψ|` with `t ≥ 0`; 1 real coordinate.
    Ray { vector: [Complex<f64>; 2] },
    /// Fixed at zero.
    Zero,
}

impl Face {
    pub fn dim(&self) -> usize {
        match self {
            Face::Full => 4,
            Face::Ray { .. } => 1,
            Face::Zero => 0,
        }
    }

    /// Matrix with coordinates `x` on this face.
    fn matrix(&self, x: &[f64]) -> ComplexMatrix2<f64> {
        match self {
            Face::Full => ComplexMatrix2::from_pauli_coords([x[0], x[1], x[2], x[3]]),
            Face::Ray { vector } => outer(vector).scale(x[0]),
            Face::Zero => ComplexMatrix2::zero(),
        }
    }

    /// Matrix of a dual variable `z` under the pairing `tr(S Z) = sᵀz`.
    fn dual_matrix(&self, z: &[f64]) -> ComplexMatrix2<f64> {
        match self {
            Face::Full => ComplexMatrix2::from_pauli_coords([0.5 * z[0], 0.5 * z[1], 0.5 * z[2], 0.5 * z[3]]),
            _ => self.matrix(z),
        }
    }
}

/// Conic data `(c, G, h)` in real coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicForm {
    pub c: Vec<f64>,
    /// Row-major `G`, `h.len()` rows by `c.len()` columns.
    pub g: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    /// Dimension of every second-order cone, in order; dimension 1 is `ℝ₊`.
    pub cones: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SdpProblem {
    #[serde(rename = "N")]
    pub n: usize,
    pub bases: Vec<usize>,
    pub table: StrategyTable,
    /// LMI constants `ρ_{a|A_i}`, in table row order.
    pub lmi_labels: Vec<MubLabel>,
    pub lmi_constants: Vec<ComplexMatrix2<f64>>,
    /// Face of each LMI slack after reduction.
    pub lmi_faces: Vec<Face>,
    /// Face of each `ρ_γ` after reduction.
    pub variable_faces: Vec<Face>,
    /// Reduced problem. The first `c.len()` rows of `G` are `−I`.
    pub conic: ConicForm,
}

impl SdpProblem {
    pub fn variables(&self) -> usize {
        self.table.strategies()
    }

    pub fn lmi_count(&self) -> usize {
        self.lmi_constants.len()
    }

    pub fn psd_constraint_count(&self) -> usize {
        self.lmi_count() + self.variables()
    }

    /// `ρ_r − Σ_γ D_γ(r) ρ_γ` for every LMI row.
    pub fn lmi_slacks(&self, rho: &[ComplexMatrix2<f64>]) -> Vec<ComplexMatrix2<f64>> {
        (0..self.lmi_count())
            .map(|r| {
                rho.iter()
                    .enumerate()
                    .filter(|(g, _)| self.table.rows()[r][*g] == 1)
                    .fold(self.lmi_constants[r], |acc, (_, m)| acc - *m)
            })
            .collect()
    }

    fn rho_from(&self, x: &[f64]) -> Vec<ComplexMatrix2<f64>> {
        let off = offsets(self.variable_faces.iter().map(Face::dim));
        self.variable_faces.iter().zip(off).map(|(f, o)| f.matrix(&x[o..o + f.dim()])).collect()
    }
}

fn offsets(dims: impl Iterator<Item = usize>) -> Vec<usize> {
    dims.scan(0, |acc, d| {
        let o = *acc;
        *acc += d;
        Some(o)
    })
    .collect()
}

fn same_ray(a: &[Complex<f64>; 2], b: &[Complex<f64>; 2]) -> bool {
    let overlap = a[0].conj() * b[0] + a[1].conj() * b[1];
    overlap.norm_sqr() >= 1.0 - SAME_RAY_TOL
}

/// `⟨ψ|M|ψ⟩` for a Hermitian `M`.
fn expectation(m: &ComplexMatrix2<f64>, psi: &[Complex<f64>; 2]) -> f64 {
    let e = m.entries();
    let mv = [e[0][0] * psi[0] + e[0][1] * psi[1], e[1][0] * psi[0] + e[1][1] * psi[1]];
    (psi[0].conj() * mv[0] + psi[1].conj() * mv[1]).re
}

/// Builds the weight SDP for a consistent assemblage.
pub fn build_weight_sdp(asm: &Assemblage<f64>) -> Result<SdpProblem> {
    let residual = check_consistency(asm);
    if residual > CONSISTENCY_TOL {
        return invalid(format!("assemblage is inconsistent (residual {residual:.3e})"));
    }
    let n = asm.n();
    let table = strategy_table(n)?;
    let k = table.strategies();
    let rows = 2 * n;

    let mut lmi_labels = vec![None; rows];
    for l in labels_for(asm.bases()) {
        let pos = asm.position(l.basis()).expect("own basis");
        lmi_labels[StrategyTable::row(pos, l.outcome())] = Some(l);
    }
    let lmi_labels: Vec<MubLabel> = lmi_labels.into_iter().map(|l| l.expect("complete")).collect();
    let lmi_constants: Vec<_> = lmi_labels.iter().map(|l| *asm.member(*l).expect("member")).collect();

    let lmi_faces: Vec<Face> = lmi_constants
        .iter()
        .map(|m| {
            let (vals, vecs) = m.hermitian_eigen();
            if vals[1] <= SINGULAR_TOL {
                Face::Zero
            } else if vals[0] <= SINGULAR_TOL {
                Face::Ray { vector: vecs[1] }
            } else {
                Face::Full
            }
        })
        .collect();
    let variable_faces: Vec<Face> = (0..k)
        .map(|g| {
            (0..rows).filter(|r| table.rows()[*r][g] == 1).fold(Face::Full, |face, r| match (face, lmi_faces[r]) {
                (Face::Zero, _) | (_, Face::Zero) => Face::Zero,
                (f, Face::Full) => f,
                (Face::Full, ray) => ray,
                (Face::Ray { vector: a }, Face::Ray { vector: b }) => {
                    if same_ray(&a, &b) {
                        face
                    } else {
                        Face::Zero
                    }
                }
            })
        })
        .collect();

    let var_off = offsets(variable_faces.iter().map(Face::dim));
    let nx: usize = variable_faces.iter().map(Face::dim).sum();
    let mut c = vec![0.0; nx];
    let mut cones = Vec::new();
    let mut g_rows: Vec<Vec<f64>> = Vec::new();
    let mut h = Vec::new();

    // ρ_γ on its face
    for (face, &o) in variable_faces.iter().zip(&var_off) {
        match face {
            Face::Full => c[o] = -2.0,
            Face::Ray { .. } => c[o] = -1.0,
            Face::Zero => continue,
        }
        for d in 0..face.dim() {
            let mut row = vec![0.0; nx];
            row[o + d] = -1.0;
            g_rows.push(row);
            h.push(0.0);
        }
        cones.push(face.dim());
    }
    // LMI slacks on their faces
    for r in 0..rows {
        let members = (0..k).filter(|g| table.rows()[r][*g] == 1);
        match lmi_faces[r] {
            Face::Zero => {}
            Face::Full => {
                let mut block = vec![vec![0.0; nx]; 4];
                for g in members {
                    let o = var_off[g];
                    match variable_faces[g] {
                        Face::Full => (0..4).for_each(|d| block[d][o + d] = 1.0),
                        Face::Ray { vector } => {
                            let pc = outer(&vector).pauli_coords();
                            (0..4).for_each(|d| block[d][o] = pc[d]);
                        }
                        Face::Zero => {}
                    }
                }
                g_rows.extend(block);
                h.extend(lmi_constants[r].pauli_coords());
                cones.push(4);
            }
            Face::Ray { vector } => {
                let mut row = vec![0.0; nx];
                for g in members {
                    if let Face::Ray { vector: v } = variable_faces[g] {
                        row[var_off[g]] = expectation(&outer(&v), &vector);
                    }
                }
                g_rows.push(row);
                h.push(expectation(&lmi_constants[r], &vector));
                cones.push(1);
            }
        }
    }
    let conic = ConicForm { c, g: g_rows, h, cones };
    Ok(SdpProblem { n, bases: asm.bases().to_vec(), table, lmi_labels, lmi_constants, lmi_faces, variable_faces, conic })
}

// --- second-order cone algebra on slices of any length ≥ 1 -------------------

fn jdot(a: &[f64], b: &[f64]) -> f64 {
    a[0] * b[0] - a[1..].iter().zip(&b[1..]).map(|(x, y)| x * y).sum::<f64>()
}

fn tail_norm(a: &[f64]) -> f64 {
    a[1..].iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Jordan product `u ∘ v = (uᵀv, u₀v⃗ + v₀u⃗)`.
fn jordan(u: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = (0..u.len()).map(|i| u[0] * v[i] + v[0] * u[i]).collect();
    out[0] = u.iter().zip(v).map(|(a, b)| a * b).sum();
    out
}

/// Solves `λ ∘ u = r` for `λ` in the cone interior.
fn jordan_div(l: &[f64], r: &[f64]) -> Vec<f64> {
    let u0 = jdot(l, r) / jdot(l, l);
    let mut out: Vec<f64> = (0..l.len()).map(|i| (r[i] - u0 * l[i]) / l[0]).collect();
    out[0] = u0;
    out
}

/// Largest `α` keeping `x + αd` in the cone, `∞` if unbounded.
fn max_step(x: &[f64], d: &[f64]) -> f64 {
    if x.len() == 1 {
        return if d[0] < 0.0 { -x[0] / d[0] } else { f64::INFINITY };
    }
    let a = jdot(d, d);
    let b = jdot(x, d);
    let c = jdot(x, x);
    if c <= 0.0 || x[0] <= 0.0 {
        return 0.0;
    }
    let scale = d.iter().map(|v| v * v).sum::<f64>();
    if a.abs() <= 1e-14 * scale {
        return if b < 0.0 { -c / (2.0 * b) } else { f64::INFINITY };
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let q = -(b + b.signum() * disc.sqrt());
    let roots = [q / a, if q != 0.0 { c / q } else { f64::INFINITY }];
    roots.into_iter().filter(|&r| r > 0.0).fold(f64::INFINITY, f64::min)
}

/// Nesterov–Todd scaling of one cone: `W z = W⁻¹ s = λ`.
#[derive(Debug, Clone)]
struct NtScaling {
    w: DMatrix<f64>,
    w_inv: DMatrix<f64>,
}

impl NtScaling {
    fn new(s: &[f64], z: &[f64]) -> Self {
        let d = s.len();
        let sn = jdot(s, s).sqrt();
        let zn = jdot(z, z).sqrt();
        let sb: Vec<f64> = s.iter().map(|v| v / sn).collect();
        let zb: Vec<f64> = z.iter().map(|v| v / zn).collect();
        let dot: f64 = sb.iter().zip(&zb).map(|(a, b)| a * b).sum();
        let gamma = ((1.0 + dot) / 2.0).sqrt();
        let mut wb: Vec<f64> = (0..d).map(|i| (sb[i] - zb[i]) / (2.0 * gamma)).collect();
        wb[0] = (sb[0] + zb[0]) / (2.0 * gamma);
        let eta = (sn / zn).sqrt();
        // W̄ = [[w₀, w⃗ᵀ], [w⃗, I + w⃗w⃗ᵀ/(1 + w₀)]], W̄⁻¹ = J W̄ J
        let wbar = DMatrix::from_fn(d, d, |i, j| match (i, j) {
            (0, 0) => wb[0],
            (0, j) => wb[j],
            (i, 0) => wb[i],
            (i, j) => (if i == j { 1.0 } else { 0.0 }) + wb[i] * wb[j] / (1.0 + wb[0]),
        });
        let w_inv = DMatrix::from_fn(d, d, |i, j| {
            let sign = if (i == 0) != (j == 0) { -1.0 } else { 1.0 };
            sign * wbar[(i, j)] / eta
        });
        Self { w: wbar * eta, w_inv }
    }

    fn apply(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum()).collect()
    }
}

#[derive(Clone)]
struct Iterate {
    x: DVector<f64>,
    s: DVector<f64>,
    z: DVector<f64>,
}

#[derive(Debug, Clone)]
struct Layout {
    ranges: Vec<std::ops::Range<usize>>,
}

impl Layout {
    fn new(cones: &[usize]) -> Self {
        let off = offsets(cones.iter().copied());
        Self { ranges: off.iter().zip(cones).map(|(&o, &d)| o..o + d).collect() }
    }

    fn slices<'a>(&'a self, v: &'a DVector<f64>) -> impl Iterator<Item = &'a [f64]> + 'a {
        self.ranges.iter().map(move |r| &v.as_slice()[r.clone()])
    }
}

struct Kkt<'a> {
    g: &'a DMatrix<f64>,
    layout: &'a Layout,
    scalings: Vec<NtScaling>,
    lambda: Vec<Vec<f64>>,
    /// Thin QR factors of `A = W⁻¹G`.
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl Kkt<'_> {
    /// Newton direction for complementarity target `rc` (per cone), primal
    /// residual `rp = h − Gx − s` and dual residual `rd = −(Gᵀz + c)`.
    ///
    /// In scaled variables `z̃ = WΔz`, `s̃ = W⁻¹Δs` the system is `Aᵀz̃ = rd`,
    /// `AΔx + s̃ = W⁻¹rp`, `s̃ + z̃ = λ⧵rc`; it is solved through the QR
    /// factors without forming `AᵀA`.
    fn solve(&self, rc: &[Vec<f64>], rp: &DVector<f64>, rd: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let m = rp.len();
        let mut b = DVector::zeros(m);
        for (k, range) in self.layout.ranges.iter().enumerate() {
            let u = jordan_div(&self.lambda[k], &rc[k]);
            let rpk = NtScaling::apply(&self.scalings[k].w_inv, &rp.as_slice()[range.clone()]);
            for (i, idx) in range.clone().enumerate() {
                b[idx] = rpk[i] - u[i];
            }
        }
        let y = self.r.tr_solve_upper_triangular(rd).expect("nonsingular R") + self.q.tr_mul(&b);
        let dx = self.r.solve_upper_triangular(&y).expect("nonsingular R");
        let zt = &self.q * &y - &b;
        let mut dz = DVector::zeros(m);
        for (k, range) in self.layout.ranges.iter().enumerate() {
            let v = NtScaling::apply(&self.scalings[k].w_inv, &zt.as_slice()[range.clone()]);
            dz.as_mut_slice()[range.clone()].copy_from_slice(&v);
        }
        // The first rows of G are −I: the positivity duals absorb rounding so
        // that Gᵀdz = rd holds exactly.
        let err = self.g.tr_mul(&dz) - rd;
        for (i, e) in err.iter().enumerate() {
            dz[i] += e;
        }
        let ds = rp - self.g * &dx;
        (dx, ds, dz)
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Shifts `v` along the cone identity `e = (1, 0, …)` of every cone into the interior.
fn shift_into_cone(v: &mut DVector<f64>, layout: &Layout) {
    let t = layout.slices(v).map(|x| tail_norm(x) - x[0]).fold(f64::NEG_INFINITY, f64::max);
    if t >= -1e-8 {
        for r in &layout.ranges {
            v[r.start] += 1.0 + t;
        }
    }
}

fn step_to_boundary(layout: &Layout, it: &Iterate, ds: &DVector<f64>, dz: &DVector<f64>) -> f64 {
    let sa = layout.slices(&it.s).zip(layout.slices(ds)).map(|(x, d)| max_step(x, d));
    let za = layout.slices(&it.z).zip(layout.slices(dz)).map(|(x, d)| max_step(x, d));
    sa.chain(za).fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy)]
struct Progress {
    primal_value: f64,
    dual_value: f64,
    complementarity: f64,
    rp: f64,
    rd: f64,
}

impl Progress {
    fn gap(&self) -> f64 {
        (self.dual_value - self.primal_value).abs()
    }

    fn worst(&self) -> f64 {
        self.gap().max(self.complementarity).max(self.rp).max(self.rd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfeasibilityCertificate {
    pub member: MubLabel,
    pub eigenvalue: f64,
    /// Unit vector `v` with `⟨v|ρ_r|v⟩ < 0`.
    pub vector: [Complex<f64>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub rho_gamma: Vec<ComplexMatrix2<f64>>,
    /// `Σ_γ tr ρ_γ` at the returned iterate.
    pub primal_value: f64,
    /// Dual objective `Σ_r tr(ρ_r Z_r)`, an upper bound on the optimum.
    pub dual_value: f64,
    /// `|dual_value − primal_value|`.
    pub gap: f64,
    /// `sᵀz`.
    pub complementarity: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    /// Dual matrices `Z_r` for the LMIs, in table row order.
    pub lmi_duals: Vec<ComplexMatrix2<f64>>,
    /// Dual matrices `Y_γ` for `ρ_γ ⪰ 0`.
    pub positivity_duals: Vec<ComplexMatrix2<f64>>,
    pub infeasibility: Option<InfeasibilityCertificate>,
}

fn non_psd_member(problem: &SdpProblem, tol: f64) -> Option<InfeasibilityCertificate> {
    problem.lmi_labels.iter().zip(&problem.lmi_constants).find_map(|(l, m)| {
        let (vals, vecs) = m.hermitian_eigen();
        (vals[0] < -tol).then_some(InfeasibilityCertificate { member: *l, eigenvalue: vals[0], vector: vecs[0] })
    })
}

/// Solves the weight SDP. Deterministic for identical inputs.
pub fn solve(problem: &SdpProblem, opts: &SolverOptions) -> SdpSolution {
    let cf = &problem.conic;
    let nx = cf.c.len();
    let m = cf.h.len();
    let layout = Layout::new(&cf.cones);
    let g = DMatrix::from_fn(m, nx, |i, j| cf.g[i][j]);
    let h = DVector::from_column_slice(&cf.h);
    let c = DVector::from_column_slice(&cf.c);

    let finish = |it: &Iterate, status: SdpStatus, iterations: usize, p: &Progress, cert| {
        let mut blocks = layout.slices(&it.z);
        let mut dual = |f: &Face| if f.dim() == 0 { ComplexMatrix2::zero() } else { f.dual_matrix(blocks.next().expect("block")) };
        let positivity_duals = problem.variable_faces.iter().map(&mut dual).collect();
        let lmi_duals = problem.lmi_faces.iter().map(&mut dual).collect();
        SdpSolution {
            status,
            rho_gamma: problem.rho_from(it.x.as_slice()),
            primal_value: p.primal_value,
            dual_value: p.dual_value,
            gap: p.gap(),
            complementarity: p.complementarity,
            primal_residual: p.rp,
            dual_residual: p.rd,
            iterations,
            lmi_duals,
            positivity_duals,
            infeasibility: cert,
        }
    };
    let progress = |it: &Iterate| -> (Progress, DVector<f64>, DVector<f64>) {
        let rp = &h - &g * &it.x - &it.s;
        let rd = -(g.tr_mul(&it.z) + &c);
        let p = Progress {
            primal_value: -c.dot(&it.x),
            dual_value: h.dot(&it.z),
            complementarity: it.s.dot(&it.z),
            rp: inf_norm(&rp),
            rd: inf_norm(&rd),
        };
        (p, rp, rd)
    };

    let zero = Iterate { x: DVector::zeros(nx), s: h.clone(), z: DVector::zeros(m) };
    if let Some(cert) = non_psd_member(problem, Tolerances::default().psd_tol) {
        let (p, _, _) = progress(&zero);
        return finish(&zero, SdpStatus::Infeasible, 0, &p, Some(cert));
    }
    if nx == 0 {
        // every ρ_γ is pinned to zero
        let (p, _, _) = progress(&zero);
        return finish(&zero, SdpStatus::Optimal, 0, &p, None);
    }

    // Least-squares primal point and least-norm dual point, shifted inside K.
    let Some(chol0) = g.tr_mul(&g).cholesky() else {
        let (p, _, _) = progress(&zero);
        return finish(&zero, SdpStatus::NumericalFailure, 0, &p, None);
    };
    let x = chol0.solve(&g.tr_mul(&h));
    let mut s = &h - &g * &x;
    shift_into_cone(&mut s, &layout);
    let mut z = -(&g * chol0.solve(&c));
    shift_into_cone(&mut z, &layout);
    let mut it = Iterate { x, s, z };

    let mut best: Option<(Iterate, Progress, usize)> = None;
    for iter in 0..=opts.max_iter {
        let (p, rp, rd) = progress(&it);
        if p.worst() <= opts.tol {
            return finish(&it, SdpStatus::Optimal, iter, &p, None);
        }
        if best.as_ref().map_or(true, |(_, b, _)| p.worst() < b.worst()) {
            best = Some((it.clone(), p, iter));
        }
        if iter == opts.max_iter {
            break;
        }

        let scalings: Vec<NtScaling> = layout.slices(&it.s).zip(layout.slices(&it.z)).map(|(s, z)| NtScaling::new(s, z)).collect();
        let lambda: Vec<Vec<f64>> = scalings.iter().zip(layout.slices(&it.z)).map(|(sc, z)| NtScaling::apply(&sc.w, z)).collect();
        let mut a = DMatrix::zeros(m, nx);
        for (sc, range) in scalings.iter().zip(&layout.ranges) {
            let block = &sc.w_inv * g.rows(range.start, range.len());
            a.rows_mut(range.start, range.len()).copy_from(&block);
        }
        let qr = a.qr();
        let r = qr.r();
        if (0..nx).any(|i| !(r[(i, i)].abs() > 0.0 && r[(i, i)].is_finite())) {
            break;
        }
        let kkt = Kkt { g: &g, layout: &layout, scalings, lambda, q: qr.q(), r };

        // Predictor.
        let rc_aff: Vec<Vec<f64>> = kkt.lambda.iter().map(|l| jordan(l, l).iter().map(|v| -v).collect()).collect();
        let (_, ds_a, dz_a) = kkt.solve(&rc_aff, &rp, &rd);
        let alpha_aff = step_to_boundary(&layout, &it, &ds_a, &dz_a).min(1.0);
        let mu = p.complementarity / layout.ranges.len() as f64;
        let s_aff = &it.s + &ds_a * alpha_aff;
        let z_aff = &it.z + &dz_a * alpha_aff;
        let sigma = (s_aff.dot(&z_aff) / p.complementarity).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let rc: Vec<Vec<f64>> = layout
            .ranges
            .iter()
            .enumerate()
            .map(|(k, range)| {
                let sc = &kkt.scalings[k];
                let a = NtScaling::apply(&sc.w_inv, &ds_a.as_slice()[range.clone()]);
                let b = NtScaling::apply(&sc.w, &dz_a.as_slice()[range.clone()]);
                let corr = jordan(&a, &b);
                let ll = jordan(&kkt.lambda[k], &kkt.lambda[k]);
                let mut out: Vec<f64> = ll.iter().zip(&corr).map(|(l, c)| -l - c).collect();
                out[0] += sigma * mu;
                out
            })
            .collect();
        let (dx, ds, dz) = kkt.solve(&rc, &rp, &rd);
        let alpha = (STEP_FRACTION * step_to_boundary(&layout, &it, &ds, &dz)).min(1.0);
        if !(alpha > 0.0) || !dx.iter().chain(ds.iter()).chain(dz.iter()).all(|v| v.is_finite()) {
            break;
        }
        it.x += &dx * alpha;
        it.s += &ds * alpha;
        it.z += &dz * alpha;
    }

    let (it, p, iters) = best.expect("at least one iterate evaluated");
    finish(&it, SdpStatus::NumericalFailure, iters, &p, None)
}

/// Direct eigenvalue check of a candidate `{ρ_γ}`: the smallest eigenvalue
/// among all `ρ_γ` and among all LMI slacks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub positivity_min_eigenvalue: f64,
    pub lmi_min_eigenvalue: f64,
}

impl FeasibilityReport {
    pub fn feasible(&self, tol: f64) -> bool {
        self.positivity_min_eigenvalue >= -tol && self.lmi_min_eigenvalue >= -tol
    }
}

pub fn check_feasibility(problem: &SdpProblem, rho: &[ComplexMatrix2<f64>]) -> FeasibilityReport {
    let min_eig = |ms: &mut dyn Iterator<Item = ComplexMatrix2<f64>>| ms.map(|m| m.hermitian_eigenvalues()[0]).fold(f64::INFINITY, f64::min);
    FeasibilityReport {
        positivity_min_eigenvalue: min_eig(&mut rho.iter().copied()),
        lmi_min_eigenvalue: min_eig(&mut problem.lmi_slacks(rho).into_iter()),
    }
}

/// Turns a near-feasible solver output into a feasible point: clip negative
/// eigenvalues of each `ρ_γ`, then scale all of them by the largest
/// `t ∈ [0, 1]` that keeps every LMI slack PSD.
fn certify(problem: &SdpProblem, rho: &[ComplexMatrix2<f64>]) -> Vec<ComplexMatrix2<f64>> {
    let clipped: Vec<_> = rho
        .iter()
        .map(|m| {
            let (vals, vecs) = m.hermitian_eigen();
            outer(&vecs[0]).scale(vals[0].max(0.0)) + outer(&vecs[1]).scale(vals[1].max(0.0))
        })
        .collect();
    let floor = problem.lmi_constants.iter().map(|m| m.hermitian_eigenvalues()[0]).fold(0.0, f64::min) - CERTIFY_TOL;
    let ok = |t: f64| {
        let scaled: Vec<_> = clipped.iter().map(|m| m.scale(t)).collect();
        check_feasibility(problem, &scaled).lmi_min_eigenvalue >= floor
    };
    if ok(1.0) {
        return clipped;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clipped.iter().map(|m| m.scale(lo)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightResult {
    /// `1 − primal_value` clamped to `[0, 1]`, reported as 0 below the floor.
    pub w_t: f64,
    /// `1 − primal_value` before clamping and flooring.
    pub w_t_raw: f64,
    pub solution: SdpSolution,
    /// A feasible `{ρ_γ}` close to the optimum: the unsteerable part.
    pub lhs_witness: Vec<ComplexMatrix2<f64>>,
    /// `Σ_γ tr` of the witness, a lower bound on the optimum.
    pub certified_primal: f64,
    pub feasibility: FeasibilityReport,
}

impl WeightResult {
    pub fn is_steerable(&self) -> bool {
        self.w_t > 0.0
    }
}

pub fn weight_from_solution(problem: &SdpProblem, solution: SdpSolution) -> WeightResult {
    let lhs_witness = certify(problem, &solution.rho_gamma);
    let certified_primal = lhs_witness.iter().map(|m| m.trace().re).sum();
    let feasibility = check_feasibility(problem, &lhs_witness);
    let w_t_raw = 1.0 - solution.primal_value;
    let w_t = if w_t_raw < WEIGHT_REPORT_FLOOR { 0.0 } else { w_t_raw.min(1.0) };
    WeightResult { w_t, w_t_raw, solution, lhs_witness, certified_primal, feasibility }
}

/// `w_t` of an assemblage. Non-PSD members are a validation error, solver
/// breakdown a solver error.
pub fn steerable_weight(asm: &Assemblage<f64>, opts: &SolverOptions) -> Result<WeightResult> {
    let problem = build_weight_sdp(asm)?;
    let solution = solve(&problem, opts);
    match solution.status {
        SdpStatus::Optimal => Ok(weight_from_solution(&problem, solution)),
        SdpStatus::Infeasible => {
            let cert = solution.infeasibility.as_ref().expect("certificate");
            invalid(format!("assemblage member {} has negative eigenvalue {:.3e}", cert.member, cert.eigenvalue))
        }
        SdpStatus::NumericalFailure => Err(Error::Solver(format!(
            "no convergence after {} iterations (gap {:.3e}, residuals {:.3e}/{:.3e})",
            solution.iterations, solution.gap, solution.primal_residual, solution.dual_residual
        ))),
    }
}

/// `|w_t(asm) − w_t(U·asm·U†)|` using raw weights.
pub fn unitary_invariance_check(asm: &Assemblage<f64>, u: &ComplexMatrix2<f64>, opts: &SolverOptions) -> Result<f64> {
    let uu = *u * u.adjoint();
    if !u.is_finite() || (uu - ComplexMatrix2::identity()).frobenius_norm() > UNITARY_TOL {
        return invalid("matrix is not unitary");
    }
    let a = steerable_weight(asm, opts)?;
    let b = steerable_weight(&asm.conjugate(u), opts)?;
    Ok((a.w_t_raw - b.w_t_raw).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemblage::{build_assemblage, lhs_assemblage};
    use crate::channels::{make_channel, ChannelSpec};
    use approx::assert_abs_diff_eq;

    fn asm(spec: ChannelSpec, bases: &[usize]) -> Assemblage<f64> {
        build_assemblage(&make_channel(&spec).unwrap(), bases).unwrap()
    }

    #[test]
    fn nt_scaling_identities() {
        let s = [2.0, 0.3, -0.5, 1.1];
        let z = [1.5, -0.7, 0.2, 0.4];
        let sc = NtScaling::new(&s, &z);
        let a = NtScaling::apply(&sc.w, &z);
        let b = NtScaling::apply(&sc.w_inv, &s);
        for d in 0..4 {
            assert_abs_diff_eq!(a[d], b[d], epsilon = 1e-13);
        }
        let id = NtScaling::apply(&sc.w, &NtScaling::apply(&sc.w_inv, &[0.3, 0.1, -0.2, 0.5]));
        for (d, v) in [0.3, 0.1, -0.2, 0.5].iter().enumerate() {
            assert_abs_diff_eq!(id[d], v, epsilon = 1e-13);
        }
    }

    #[test]
    fn jordan_division_inverts_product() {
        let l = [2.0, 0.5, -0.3, 0.9];
        let u = [0.4, -1.0, 0.7, 0.2];
        let back = jordan_div(&l, &jordan(&l, &u));
        for d in 0..4 {
            assert_abs_diff_eq!(back[d], u[d], epsilon = 1e-13);
        }
    }

    #[test]
    fn step_to_boundary_examples() {
        assert_abs_diff_eq!(max_step(&[1.0, 0.0, 0.0, 0.0], &[-1.0, 0.0, 0.0, 0.0]), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(max_step(&[1.0, 0.0, 0.0, 0.0], &[0.0, 2.0, 0.0, 0.0]), 0.5, epsilon = 1e-15);
        assert_eq!(max_step(&[1.0, 0.0, 0.0, 0.0], &[1.0, 0.5, 0.0, 0.0]), f64::INFINITY);
    }

    #[test]
    fn problem_dimensions() {
        let p2 = build_weight_sdp(&asm(ChannelSpec::Identity, &[1, 3])).unwrap();
        assert_eq!((p2.variables(), p2.lmi_count(), p2.psd_constraint_count()), (4, 4, 8));
        let p3 = build_weight_sdp(&asm(ChannelSpec::depolarizing(0.5), &[1, 2, 3])).unwrap();
        assert_eq!((p3.variables(), p3.lmi_count(), p3.psd_constraint_count()), (8, 6, 14));
        assert_eq!(p3.conic.g.len(), 56);
        assert_eq!(p3.conic.c.len(), 32);
    }

    #[test]
    fn pure_members_reduce_faces() {
        // noiseless: every ρ_γ is bounded by two orthogonal pure states
        let p = build_weight_sdp(&asm(ChannelSpec::Identity, &[1, 3])).unwrap();
        assert!(p.variable_faces.iter().all(|f| *f == Face::Zero));
        assert!(p.conic.c.is_empty());
        let sol = solve(&p, &SolverOptions::default());
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert_eq!(sol.primal_value, 0.0);

        // amplitude damping at g = 1 leaves rank-one members on one ray
        let p = build_weight_sdp(&asm(ChannelSpec::AmplitudeDamping { g: 1.0 }, &[1, 3])).unwrap();
        assert!(p.variable_faces.iter().any(|f| matches!(f, Face::Ray { .. })));
        let w = steerable_weight(&asm(ChannelSpec::AmplitudeDamping { g: 1.0 }, &[1, 3]), &SolverOptions::default()).unwrap();
        assert!(w.w_t_raw.abs() < 1e-6, "{}", w.w_t_raw);
    }

    #[test]
    fn ray_cone_steps() {
        assert_abs_diff_eq!(max_step(&[2.0], &[-4.0]), 0.5, epsilon = 1e-15);
        assert_eq!(max_step(&[2.0], &[1.0]), f64::INFINITY);
    }

    #[test]
    fn fully_depolarized_point_is_feasible_with_objective_one() {
        for n in [2usize, 3] {
            let bases = crate::metrics::default_bases(n).unwrap();
            let p = build_weight_sdp(&asm(ChannelSpec::depolarizing(0.0), &bases)).unwrap();
            let k = p.variables();
            let rho = vec![ComplexMatrix2::identity().scale(1.0 / (2 * k) as f64); k];
            let f = check_feasibility(&p, &rho);
            assert!(f.feasible(1e-15));
            let obj: f64 = rho.iter().map(|m| m.trace().re).sum();
            assert_abs_diff_eq!(obj, 1.0, epsilon = 1e-15);

            let sol = solve(&p, &SolverOptions::default());
            assert_eq!(sol.status, SdpStatus::Optimal);
            assert_abs_diff_eq!(sol.primal_value, 1.0, epsilon = 1e-8);
            assert!(sol.gap < 1e-9);
        }
    }

    #[test]
    fn inconsistent_assemblage_rejected() {
        let a = asm(ChannelSpec::depolarizing(0.5), &[1, 3]);
        let members: Vec<_> = a.iter().map(|(l, m)| (l, m.scale(1.1))).collect();
        let bad = Assemblage::from_raw(members, &Tolerances::default()).unwrap();
        assert!(build_weight_sdp(&bad).is_err());
    }

    #[test]
    fn non_psd_member_gives_infeasibility_certificate() {
        let a = asm(ChannelSpec::Identity, &[1, 3]);
        let tilt = ComplexMatrix2::from_pauli_coords([0.0, 0.0, 0.0, 0.05]);
        let members: Vec<_> = a
            .iter()
            .map(|(l, m)| (l, if l.basis() == 1 { *m + if l.outcome().sign() > 0 { tilt } else { -tilt } } else { *m }))
            .collect();
        let bad = Assemblage::from_raw(members, &Tolerances::default()).unwrap();
        let p = build_weight_sdp(&bad).unwrap();
        let sol = solve(&p, &SolverOptions::default());
        assert_eq!(sol.status, SdpStatus::Infeasible);
        let cert = sol.infeasibility.unwrap();
        assert!(cert.eigenvalue < 0.0);
        assert!(matches!(steerable_weight(&bad, &SolverOptions::default()), Err(Error::Validation(_))));
    }

    #[test]
    fn lhs_model_has_zero_weight() {
        let t = strategy_table(2).unwrap();
        let states: Vec<_> = (0..4)
            .map(|g| {
                let l = labels_for(&[1, 2, 3])[g];
                crate::qubit::DensityMatrix::<f64>::mub_state(l).matrix().scale(0.25)
            })
            .collect();
        let a = lhs_assemblage(&t, &[1, 3], &states, &Tolerances::default()).unwrap();
        let w = steerable_weight(&a, &SolverOptions::default()).unwrap();
        assert_eq!(w.w_t, 0.0);
        assert!(w.w_t_raw.abs() < 1e-6);
        assert!(w.feasibility.feasible(1e-12));
    }

    #[test]
    fn noiseless_assemblage_is_maximally_steerable() {
        let w = steerable_weight(&asm(ChannelSpec::Identity, &[1, 3]), &SolverOptions::default()).unwrap();
        assert!(w.w_t > 1.0 - 1e-6, "{w:?}");
        assert!(w.feasibility.feasible(1e-12));
    }

    #[test]
    fn dual_certificate_is_dual_feasible() {
        let p = build_weight_sdp(&asm(ChannelSpec::depolarizing(0.9), &[1, 3])).unwrap();
        let sol = solve(&p, &SolverOptions::default());
        assert_eq!(sol.status, SdpStatus::Optimal);
        // Σ_r D_γ(r) Z_r − Y_γ = I, Z_r, Y_γ ⪰ 0, dual objective = Σ tr(ρ_r Z_r)
        for g in 0..p.variables() {
            let sum = (0..p.lmi_count())
                .filter(|r| p.table.rows()[*r][g] == 1)
                .fold(-sol.positivity_duals[g], |acc, r| acc + sol.lmi_duals[r]);
            assert!((sum - ComplexMatrix2::identity()).frobenius_norm() < 1e-7);
        }
        let dual: f64 = p.lmi_constants.iter().zip(&sol.lmi_duals).map(|(a, z)| (*a * *z).trace().re).sum();
        assert_abs_diff_eq!(dual, sol.dual_value, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.primal_value, (1.0 - 0.9) / (1.0 - 0.5f64.sqrt()), epsilon = 1e-6);
    }

    #[test]
    fn unitary_check_rejects_non_unitary() {
        let a = asm(ChannelSpec::Identity, &[1, 3]);
        assert!(unitary_invariance_check(&a, &ComplexMatrix2::identity().scale(2.0), &SolverOptions::default()).is_err());
        assert_eq!(unitary_invariance_check(&a, &ComplexMatrix2::identity(), &SolverOptions::default()).unwrap(), 0.0);
    }
}
