//! Qubit channels as labelled Kraus decompositions, plus the catalog of
//! noise models and eavesdropper presets.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::qubit::{check_basis, labels_for, pauli, ComplexMatrix2, DensityMatrix, MubLabel};
use crate::scalar::Real;

/// Trace-preservation tolerance on `‖Σ K†K − I‖`.
pub const TP_TOL: f64 = 1e-10;

/// Branch probability below which `branch_decompose` drops a branch.
pub const BRANCH_CUTOFF: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Serialize + Copy")]
pub struct KrausBranch<T> {
    pub label: String,
    pub operator: ComplexMatrix2<T>,
}

/// A CPTP map given by an ordered list of labelled Kraus operators.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel<T> {
    kraus: Vec<KrausBranch<T>>,
    tp_residual: T,
}

/// One Kraus branch `λ` acting on a particular input state.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutcome<T> {
    pub lambda: String,
    /// Index of the branch in the channel's Kraus list.
    pub index: usize,
    pub q_lambda: T,
    pub state: DensityMatrix<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub residual: f64,
    pub branch_count: usize,
    pub trace_preserving: bool,
}

impl<T: Real> Channel<T> {
    /// Builds a channel and rejects Kraus sets that are not trace preserving.
    pub fn from_kraus(kraus: Vec<KrausBranch<T>>) -> Result<Self> {
        let ch = Self::from_kraus_unvalidated(kraus)?;
        if ch.tp_residual > T::tol(TP_TOL) {
            return invalid(format!("Kraus operators are not trace preserving (residual {})", ch.tp_residual));
        }
        Ok(ch)
    }

    /// Builds a channel without the trace-preservation check. `apply` still
    /// refuses to run a non-TP channel; `validate` reports on it.
    pub fn from_kraus_unvalidated(kraus: Vec<KrausBranch<T>>) -> Result<Self> {
        if kraus.is_empty() {
            return invalid("channel needs at least one Kraus operator");
        }
        if kraus.iter().any(|k| !k.operator.is_finite()) {
            return invalid("Kraus operator has non-finite entries");
        }
        let sum = kraus
            .iter()
            .fold(ComplexMatrix2::zero(), |acc, k| acc + k.operator.adjoint() * k.operator);
        let tp_residual = (sum - ComplexMatrix2::identity()).frobenius_norm();
        Ok(Self { kraus, tp_residual })
    }

    pub fn identity() -> Self {
        Self::from_kraus(vec![branch("I", ComplexMatrix2::identity())]).expect("identity is TP")
    }

    pub fn kraus(&self) -> &[KrausBranch<T>] {
        &self.kraus
    }

    pub fn len(&self) -> usize {
        self.kraus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kraus.is_empty()
    }

    pub fn validate(&self) -> ValidationReport {
        ValidationReport {
            residual: self.tp_residual.to_f64_lossy(),
            branch_count: self.kraus.len(),
            trace_preserving: self.tp_residual <= T::tol(TP_TOL),
        }
    }

    fn ensure_tp(&self) -> Result<()> {
        if self.tp_residual > T::tol(TP_TOL) {
            return invalid(format!("channel is not trace preserving (residual {})", self.tp_residual));
        }
        Ok(())
    }

    /// `Σ_λ K_λ ρ K_λ†`.
    pub fn apply(&self, rho: &DensityMatrix<T>) -> Result<DensityMatrix<T>> {
        self.ensure_tp()?;
        Ok(DensityMatrix::new_unchecked(self.apply_matrix(rho.matrix())))
    }

    /// The linear map on arbitrary 2×2 matrices (subnormalized members, etc.).
    pub fn apply_matrix(&self, m: &ComplexMatrix2<T>) -> ComplexMatrix2<T> {
        self.kraus.iter().fold(ComplexMatrix2::zero(), |acc, k| acc + m.conjugate_by(&k.operator))
    }

    /// Per-branch probabilities `q_λ = tr(K_λ ρ K_λ†)` and normalized
    /// post-branch states. Branches with `q_λ` below [`BRANCH_CUTOFF`] are omitted.
    pub fn branch_decompose(&self, rho: &DensityMatrix<T>) -> Vec<BranchOutcome<T>> {
        self.kraus
            .iter()
            .enumerate()
            .filter_map(|(index, k)| {
                let unnorm = rho.matrix().conjugate_by(&k.operator);
                let q = unnorm.trace().re;
                (q >= T::lit(BRANCH_CUTOFF)).then(|| BranchOutcome {
                    lambda: k.label.clone(),
                    index,
                    q_lambda: q,
                    state: DensityMatrix::new_unchecked(unnorm.scale(q.recip())),
                })
            })
            .collect()
    }

    /// Applies `self` first, then `next`.
    pub fn then(&self, next: &Channel<T>) -> Result<Channel<T>> {
        let mut kraus = Vec::with_capacity(self.len() * next.len());
        for a in &self.kraus {
            for b in &next.kraus {
                let op = b.operator * a.operator;
                if op.frobenius_norm() > T::zero() {
                    kraus.push(branch(format!("{};{}", a.label, b.label), op));
                }
            }
        }
        Channel::from_kraus_unvalidated(kraus)
    }

    /// Fidelity of the output to every input eigenstate in `bases`.
    pub fn eigenstate_fidelities(&self, bases: &[usize]) -> Result<Vec<(MubLabel, T)>> {
        labels_for(bases)
            .into_iter()
            .map(|l| Ok((l, self.apply(&DensityMatrix::mub_state(l))?.fidelity_to_pure(l))))
            .collect()
    }
}

fn branch<T>(label: impl Into<String>, operator: ComplexMatrix2<T>) -> KrausBranch<T> {
    KrausBranch { label: label.into(), operator }
}

/// Great circle of the Bloch sphere used by the phase-covariant preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Xy,
    #[default]
    Xz,
    Yz,
}

impl Plane {
    fn out_of_plane(self) -> usize {
        match self {
            Plane::Xy => 3,
            Plane::Xz => 2,
            Plane::Yz => 1,
        }
    }
}

fn default_z() -> usize {
    3
}

/// Declarative channel description, the JSON input format of the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    Identity,
    /// `exp(−i·angle·σ_axis/2)`: a Bloch rotation by `angle` about `axis`.
    Unitary { axis: usize, angle: f64 },
    /// Bloch visibility `v`: `r → v·r`.
    Depolarizing { v: f64 },
    /// Dephasing along `axis`; the two perpendicular Bloch components shrink by `1 − 2p`.
    PhaseDamping {
        p: f64,
        #[serde(default = "default_z")]
        axis: usize,
    },
    AmplitudeDamping { g: f64 },
    Pauli { p_x: f64, p_y: f64, p_z: f64 },
    /// Measure in a uniformly random basis from `bases`, resend the eigenstate.
    InterceptResend { bases: Vec<usize> },
    /// Effective channel of the optimal universal cloner: `depolarizing(2/3)`.
    #[serde(alias = "universal_cloner_preset")]
    UniversalCloner,
    /// Effective channel of the optimal phase-covariant cloner for `plane`.
    #[serde(alias = "phase_covariant_preset")]
    PhaseCovariant {
        #[serde(default)]
        plane: Plane,
    },
    /// Parts applied in list order.
    Composite { parts: Vec<ChannelSpec> },
    Kraus {
        operators: Vec<ComplexMatrix2<f64>>,
        #[serde(default)]
        labels: Option<Vec<String>>,
    },
}

/// Bloch multipliers of the phase-covariant preset in its own plane.
pub fn phase_covariant_multipliers(plane: Plane) -> [f64; 3] {
    let mut m = [std::f64::consts::FRAC_1_SQRT_2; 3];
    m[plane.out_of_plane() - 1] = 0.5;
    m
}

/// Pauli-channel weights `(p_I, p_x, p_y, p_z)` for Bloch multipliers `(λ_x, λ_y, λ_z)`.
pub fn pauli_weights_from_multipliers(l: [f64; 3]) -> [f64; 4] {
    let [x, y, z] = l;
    [
        (1.0 + x + y + z) / 4.0,
        (1.0 + x - y - z) / 4.0,
        (1.0 - x + y - z) / 4.0,
        (1.0 - x - y + z) / 4.0,
    ]
}

fn unit_interval(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        domain(format!("{name} must lie in [0, 1], got {x}"))
    }
}

fn pauli_channel<T: Real>(w: [f64; 4]) -> Result<Channel<T>> {
    if w.iter().any(|&p| p < -1e-15) {
        return domain(format!("Pauli weights {w:?} violate complete positivity"));
    }
    let names = ["I", "X", "Y", "Z"];
    let mut kraus = Vec::new();
    for (k, &p) in w.iter().enumerate() {
        let p = p.max(0.0);
        if p == 0.0 {
            continue;
        }
        let sigma = if k == 0 { ComplexMatrix2::identity() } else { pauli::<T>(k)? };
        kraus.push(branch(names[k], sigma.scale(T::lit(p.sqrt()))));
    }
    Channel::from_kraus(kraus)
}

impl ChannelSpec {
    pub fn depolarizing(v: f64) -> Self {
        ChannelSpec::Depolarizing { v }
    }

    pub fn intercept_resend(bases: &[usize]) -> Self {
        ChannelSpec::InterceptResend { bases: bases.to_vec() }
    }

    /// Names of the scalar parameters accepted by [`ChannelSpec::with_param`].
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            ChannelSpec::Unitary { .. } => &["angle"],
            ChannelSpec::Depolarizing { .. } => &["v"],
            ChannelSpec::PhaseDamping { .. } => &["p"],
            ChannelSpec::AmplitudeDamping { .. } => &["g"],
            ChannelSpec::Pauli { .. } => &["p_x", "p_y", "p_z"],
            _ => &[],
        }
    }

    /// Copy of the spec with one named scalar parameter replaced.
    pub fn with_param(&self, name: &str, value: f64) -> Result<Self> {
        let mut out = self.clone();
        let slot = match (&mut out, name) {
            (ChannelSpec::Unitary { angle, .. }, "angle") => angle,
            (ChannelSpec::Depolarizing { v }, "v") => v,
            (ChannelSpec::PhaseDamping { p, .. }, "p") => p,
            (ChannelSpec::AmplitudeDamping { g }, "g") => g,
            (ChannelSpec::Pauli { p_x, .. }, "p_x") => p_x,
            (ChannelSpec::Pauli { p_y, .. }, "p_y") => p_y,
            (ChannelSpec::Pauli { p_z, .. }, "p_z") => p_z,
            _ => {
                return Err(Error::Domain(format!(
                    "unknown parameter '{name}' for this channel kind (known: {:?})",
                    self.param_names()
                )))
            }
        };
        *slot = value;
        Ok(out)
    }

    /// True when the Kraus labels record an eavesdropper's classical outcome.
    pub fn exposes_eavesdropper_record(&self) -> bool {
        match self {
            ChannelSpec::InterceptResend { .. } => true,
            ChannelSpec::Composite { parts } => parts.iter().any(Self::exposes_eavesdropper_record),
            _ => false,
        }
    }
}

/// Named presets used by the self-test, the simulator checks and the CLI.
/// Intercept-resend attacks every basis in `bases`.
pub fn preset_catalog(bases: &[usize]) -> Vec<(&'static str, ChannelSpec)> {
    vec![
        ("identity", ChannelSpec::Identity),
        ("depolarizing_0.9", ChannelSpec::depolarizing(0.9)),
        ("phase_damping_0.25_z", ChannelSpec::PhaseDamping { p: 0.25, axis: 3 }),
        ("amplitude_damping_0.3", ChannelSpec::AmplitudeDamping { g: 0.3 }),
        ("universal_cloner", ChannelSpec::UniversalCloner),
        ("phase_covariant", ChannelSpec::PhaseCovariant { plane: Plane::default() }),
        ("intercept_resend", ChannelSpec::intercept_resend(bases)),
    ]
}

/// Builds the channel described by `spec`.
pub fn make_channel<T: Real>(spec: &ChannelSpec) -> Result<Channel<T>> {
    match spec {
        ChannelSpec::Identity => Ok(Channel::identity()),
        ChannelSpec::Unitary { axis, angle } => {
            check_basis(*axis)?;
            if !angle.is_finite() {
                return domain("rotation angle must be finite");
            }
            let half = angle / 2.0;
            let u = ComplexMatrix2::identity().scale(T::lit(half.cos()))
                + pauli::<T>(*axis)?.scale_complex(Complex::new(T::zero(), T::lit(-half.sin())));
            Channel::from_kraus(vec![branch(format!("U{axis}"), u)])
        }
        ChannelSpec::Depolarizing { v } => {
            unit_interval("visibility v", *v)?;
            let (pi, pk) = ((1.0 + 3.0 * v) / 4.0, (1.0 - v) / 4.0);
            pauli_channel([pi, pk, pk, pk])
        }
        ChannelSpec::PhaseDamping { p, axis } => {
            unit_interval("dephasing p", *p)?;
            check_basis(*axis)?;
            let mut w = [1.0 - p, 0.0, 0.0, 0.0];
            w[*axis] = *p;
            pauli_channel(w)
        }
        ChannelSpec::AmplitudeDamping { g } => {
            unit_interval("damping g", *g)?;
            let (o, z) = (T::one(), T::zero());
            let k0 = ComplexMatrix2::from_real([[o, z], [z, T::lit((1.0 - g).sqrt())]]);
            let k1 = ComplexMatrix2::from_real([[z, T::lit(g.sqrt())], [z, z]]);
            let mut kraus = vec![branch("K0", k0)];
            if *g > 0.0 {
                kraus.push(branch("K1", k1));
            }
            Channel::from_kraus(kraus)
        }
        ChannelSpec::Pauli { p_x, p_y, p_z } => {
            for (n, p) in [("p_x", p_x), ("p_y", p_y), ("p_z", p_z)] {
                unit_interval(n, *p)?;
            }
            let p_i = 1.0 - p_x - p_y - p_z;
            if p_i < -1e-12 {
                return domain(format!("Pauli weights sum to {} > 1", p_x + p_y + p_z));
            }
            pauli_channel([p_i.max(0.0), *p_x, *p_y, *p_z])
        }
        ChannelSpec::InterceptResend { bases } => {
            if bases.is_empty() {
                return domain("intercept-resend needs at least one basis");
            }
            let mut sorted = bases.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != bases.len() {
                return domain(format!("duplicate basis in {bases:?}"));
            }
            let weight = T::lit((bases.len() as f64).sqrt().recip());
            let kraus = labels_for(bases)
                .into_iter()
                .map(|l| {
                    check_basis(l.basis())?;
                    Ok(branch(
                        format!("eve:basis={},a={}", l.basis(), l.outcome()),
                        l.projector::<T>().scale(weight),
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            Channel::from_kraus(kraus)
        }
        ChannelSpec::UniversalCloner => make_channel(&ChannelSpec::Depolarizing { v: 2.0 / 3.0 }),
        ChannelSpec::PhaseCovariant { plane } => {
            pauli_channel(pauli_weights_from_multipliers(phase_covariant_multipliers(*plane)))
        }
        ChannelSpec::Composite { parts } => {
            let (first, rest) = parts
                .split_first()
                .ok_or_else(|| Error::Domain("composite channel needs at least one part".into()))?;
            let mut ch = make_channel::<T>(first)?;
            for p in rest {
                ch = ch.then(&make_channel(p)?)?;
            }
            ch.ensure_tp()?;
            Ok(ch)
        }
        ChannelSpec::Kraus { operators, labels } => {
            if let Some(l) = labels {
                if l.len() != operators.len() {
                    return invalid("kraus labels and operators differ in length");
                }
            }
            let kraus = operators
                .iter()
                .enumerate()
                .map(|(k, op)| {
                    let label = labels.as_ref().map_or_else(|| format!("K{k}"), |l| l[k].clone());
                    branch(label, op.cast::<T>())
                })
                .collect();
            Channel::from_kraus(kraus)
        }
    }
}
