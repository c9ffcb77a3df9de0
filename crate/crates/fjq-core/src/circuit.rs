//! Circuit domain model: branches, constraint groups, sources, fluxes.
//!
//! A `CircuitGraph` is a directed multigraph over named nodes. Each branch
//! carries its element class and, for reactive elements, a one-variable energy
//! function of its own charge (capacitive classes) or flux (inductive
//! classes). Transformers and gyrators are *groups* of port branches tied
//! together by a constraint matrix; they never store energy.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use num_traits::{Signed, Zero};

use crate::energy::EnergyExpr;
use crate::matrix::Mat;
use crate::rational::{rat_to_f64, Rat};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchKind {
    Capacitor,
    Inductor,
    VoltageSource,
    CurrentSource,
    Resistor,
    TransformerPort,
    GyratorPort,
}

impl BranchKind {
    /// Capacitive classes store energy in charge; inductive ones in flux.
    pub fn is_capacitive(self) -> bool {
        matches!(self, BranchKind::Capacitor)
    }

    pub fn is_inductive(self) -> bool {
        matches!(self, BranchKind::Inductor)
    }

    pub fn is_reactive(self) -> bool {
        self.is_capacitive() || self.is_inductive()
    }
}

/// Time-dependent source amplitude.
///
/// The first three variants are what the netlist grammar can spell. The
/// combinators below them never appear in input files; they are produced
/// internally when external fluxes are rewritten into series voltage sources
/// (a chord may collect a rational combination of several loop fluxes, and the
/// source strength is the time derivative of that combination).
#[derive(Clone, Debug, PartialEq)]
pub enum SourceWaveform {
    Constant {
        value: Rat,
    },
    Sinusoid {
        amplitude: Rat,
        omega: Rat,
        phase: Rat,
    },
    /// Breakpoints strictly increasing in time; constant extension outside.
    PiecewiseLinear {
        breakpoints: Vec<(Rat, Rat)>,
    },
    Scaled(Rat, Box<SourceWaveform>),
    Sum(Vec<SourceWaveform>),
    Derivative(Box<SourceWaveform>),
}

impl SourceWaveform {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            SourceWaveform::Constant { value } => rat_to_f64(value),
            SourceWaveform::Sinusoid {
                amplitude,
                omega,
                phase,
            } => {
                rat_to_f64(amplitude)
                    * libm::sin(rat_to_f64(omega) * t + rat_to_f64(phase))
            }
            SourceWaveform::PiecewiseLinear { breakpoints } => pwl_eval(breakpoints, t, false),
            SourceWaveform::Scaled(k, inner) => rat_to_f64(k) * inner.eval(t),
            SourceWaveform::Sum(parts) => parts.iter().map(|p| p.eval(t)).sum(),
            SourceWaveform::Derivative(inner) => inner.eval_derivative(t),
        }
    }

    fn eval_derivative(&self, t: f64) -> f64 {
        match self {
            SourceWaveform::Constant { .. } => 0.0,
            SourceWaveform::Sinusoid {
                amplitude,
                omega,
                phase,
            } => {
                rat_to_f64(amplitude)
                    * rat_to_f64(omega)
                    * libm::cos(rat_to_f64(omega) * t + rat_to_f64(phase))
            }
            SourceWaveform::PiecewiseLinear { breakpoints } => pwl_eval(breakpoints, t, true),
            SourceWaveform::Scaled(k, inner) => rat_to_f64(k) * inner.eval_derivative(t),
            SourceWaveform::Sum(parts) => parts.iter().map(|p| p.eval_derivative(t)).sum(),
            // Second derivatives never arise in the pipeline (sources are
            // split at most once); forbid silently wrong output.
            SourceWaveform::Derivative(_) => panic!("second waveform derivative requested"),
        }
    }

    /// Symbolic time derivative, staying inside the enum. The sinusoid case
    /// could be closed as a phase-shifted sinusoid, but π/2 is not rational;
    /// the `Derivative` wrapper keeps evaluation exact instead.
    pub fn derivative(&self) -> SourceWaveform {
        match self {
            SourceWaveform::Constant { .. } => SourceWaveform::Constant { value: Rat::zero() },
            other => SourceWaveform::Derivative(Box::new(other.clone())),
        }
    }

    pub fn is_identically_zero(&self) -> bool {
        match self {
            SourceWaveform::Constant { value } => value.is_zero(),
            SourceWaveform::Sinusoid { amplitude, .. } => amplitude.is_zero(),
            SourceWaveform::PiecewiseLinear { breakpoints } => {
                breakpoints.iter().all(|(_, v)| v.is_zero())
            }
            SourceWaveform::Scaled(k, inner) => k.is_zero() || inner.is_identically_zero(),
            SourceWaveform::Sum(parts) => parts.iter().all(|p| p.is_identically_zero()),
            SourceWaveform::Derivative(inner) => matches!(
                inner.as_ref(),
                SourceWaveform::Constant { .. }
            ) || inner.is_identically_zero(),
        }
    }
}

fn pwl_eval(breakpoints: &[(Rat, Rat)], t: f64, derivative: bool) -> f64 {
    if breakpoints.is_empty() {
        return 0.0;
    }
    let ts: Vec<f64> = breakpoints.iter().map(|(a, _)| rat_to_f64(a)).collect();
    let vs: Vec<f64> = breakpoints.iter().map(|(_, b)| rat_to_f64(b)).collect();
    if t <= ts[0] {
        return if derivative { 0.0 } else { vs[0] };
    }
    for i in 1..ts.len() {
        if t <= ts[i] {
            let slope = (vs[i] - vs[i - 1]) / (ts[i] - ts[i - 1]);
            return if derivative {
                slope
            } else {
                vs[i - 1] + slope * (t - ts[i - 1])
            };
        }
    }
    if derivative {
        0.0
    } else {
        *vs.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub id: String,
    pub kind: BranchKind,
    /// Node indices into `CircuitGraph::nodes`; current is positive tail→head.
    pub tail: usize,
    pub head: usize,
    /// One-variable energy in the branch's own charge/flux (reactive kinds).
    pub energy: Option<EnergyExpr>,
    /// Resistance for resistors.
    pub value: Option<Rat>,
    pub waveform: Option<SourceWaveform>,
    pub compact_flux: bool,
    pub compact_charge: bool,
    /// Owning constraint-group id for transformer/gyrator ports.
    pub group: Option<String>,
}

impl Branch {
    fn bare(id: &str, kind: BranchKind, tail: usize, head: usize) -> Branch {
        Branch {
            id: id.to_string(),
            kind,
            tail,
            head,
            energy: None,
            value: None,
            waveform: None,
            compact_flux: false,
            compact_charge: false,
            group: None,
        }
    }

    pub fn capacitor(id: &str, tail: usize, head: usize, c: Rat) -> Branch {
        let mut b = Branch::bare(id, BranchKind::Capacitor, tail, head);
        b.energy = Some(crate::energy::capacitor_energy(&c));
        b
    }

    pub fn inductor(id: &str, tail: usize, head: usize, l: Rat) -> Branch {
        let mut b = Branch::bare(id, BranchKind::Inductor, tail, head);
        b.energy = Some(crate::energy::inductor_energy(&l));
        b
    }

    /// Capacitive branch with an explicit energy function of its charge.
    pub fn capacitive_energy(id: &str, tail: usize, head: usize, h: EnergyExpr) -> Branch {
        let mut b = Branch::bare(id, BranchKind::Capacitor, tail, head);
        b.energy = Some(h);
        b
    }

    /// Inductive branch with an explicit energy function of its flux.
    pub fn inductive_energy(id: &str, tail: usize, head: usize, h: EnergyExpr) -> Branch {
        let mut b = Branch::bare(id, BranchKind::Inductor, tail, head);
        b.energy = Some(h);
        b
    }

    pub fn josephson(id: &str, tail: usize, head: usize, ej: Rat, phi0: Rat) -> Branch {
        let mut b = Branch::bare(id, BranchKind::Inductor, tail, head);
        b.energy = Some(crate::energy::josephson_energy(&ej, &phi0));
        b.compact_flux = true;
        b
    }

    pub fn phase_slip(id: &str, tail: usize, head: usize, ep: Rat, qe: Rat) -> Branch {
        let mut b = Branch::bare(id, BranchKind::Capacitor, tail, head);
        b.energy = Some(crate::energy::phase_slip_energy(&ep, &qe));
        b.compact_charge = true;
        b
    }

    pub fn resistor(id: &str, tail: usize, head: usize, r: Rat) -> Branch {
        let mut b = Branch::bare(id, BranchKind::Resistor, tail, head);
        b.value = Some(r);
        b
    }

    pub fn voltage_source(id: &str, tail: usize, head: usize, w: SourceWaveform) -> Branch {
        let mut b = Branch::bare(id, BranchKind::VoltageSource, tail, head);
        b.waveform = Some(w);
        b
    }

    pub fn current_source(id: &str, tail: usize, head: usize, w: SourceWaveform) -> Branch {
        let mut b = Branch::bare(id, BranchKind::CurrentSource, tail, head);
        b.waveform = Some(w);
        b
    }

    pub fn transformer_port(id: &str, tail: usize, head: usize, group: &str) -> Branch {
        let mut b = Branch::bare(id, BranchKind::TransformerPort, tail, head);
        b.group = Some(group.to_string());
        b
    }

    pub fn gyrator_port(id: &str, tail: usize, head: usize, group: &str) -> Branch {
        let mut b = Branch::bare(id, BranchKind::GyratorPort, tail, head);
        b.group = Some(group.to_string());
        b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GroupKind {
    /// Belevitch transformer: with `m` left and `n` right ports the turns
    /// matrix is `n×m`; current constraint `[N | I]`, voltage `[I | −Nᵀ]`.
    Transformer { turns: Mat },
    /// Two-port gyrator with impedance `R`; coupling is the antisymmetric
    /// admittance on the port pair.
    Gyrator { impedance: Rat, coupling: Mat },
    /// Raw scattering-form group: rows `R(P+S)dq − (P−S)dφ = 0` appended
    /// verbatim. Programmatic input only (no netlist spelling).
    Scattering { impedance: Rat, s: Mat },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintGroup {
    pub id: String,
    pub kind: GroupKind,
    /// Branch indices, ordered: left ports then right ports (transformer) or
    /// the port pair (gyrator).
    pub members: Vec<usize>,
}

impl ConstraintGroup {
    pub fn transformer(id: &str, members: Vec<usize>, turns: Mat) -> ConstraintGroup {
        ConstraintGroup {
            id: id.to_string(),
            kind: GroupKind::Transformer { turns },
            members,
        }
    }

    pub fn gyrator(id: &str, members: Vec<usize>, r: Rat) -> ConstraintGroup {
        let inv = r.recip();
        let coupling = Mat::from_rows(vec![
            vec![Rat::zero(), inv.clone()],
            vec![-inv, Rat::zero()],
        ]);
        ConstraintGroup {
            id: id.to_string(),
            kind: GroupKind::Gyrator {
                impedance: r,
                coupling,
            },
            members,
        }
    }
}

/// An external flux threading a declared loop.
#[derive(Clone, Debug, PartialEq)]
pub struct ExternalFluxDecl {
    pub id: String,
    /// Signed branch traversals: `(branch index, along orientation?)`.
    pub loop_branches: Vec<(usize, bool)>,
    pub waveform: SourceWaveform,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CircuitGraph {
    pub nodes: Vec<String>,
    pub branches: Vec<Branch>,
    pub groups: Vec<ConstraintGroup>,
    pub external_fluxes: Vec<ExternalFluxDecl>,
}

/// Machine-readable validation/parse diagnostic codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiagCode {
    UnknownElementKind,
    DanglingNode,
    DuplicateId,
    MalformedGroup,
    BadRational,
    NonAntisymmetricGyrator,
    SelfLoop,
    MissingParameter,
    ConflictingCompactness,
    NotACycle,
    NonPositiveResistor,
    MisplacedEnergy,
    MalformedWaveform,
    MalformedLine,
}

#[derive(Clone, Debug)]
pub struct Diagnostic {
    pub code: DiagCode,
    pub message: String,
    /// 1-based source line, when the graph came from a netlist.
    pub line: Option<usize>,
    pub column: Option<usize>,
}

impl Diagnostic {
    pub fn new(code: DiagCode, message: String) -> Diagnostic {
        Diagnostic {
            code,
            message,
            line: None,
            column: None,
        }
    }
}

impl core::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{:?} at {}:{}: {}", self.code, l, c, self.message),
            (Some(l), None) => write!(f, "{:?} at line {}: {}", self.code, l, self.message),
            _ => write!(f, "{:?}: {}", self.code, self.message),
        }
    }
}

impl CircuitGraph {
    pub fn new(node_names: &[&str]) -> CircuitGraph {
        CircuitGraph {
            nodes: node_names.iter().map(|s| s.to_string()).collect(),
            ..CircuitGraph::default()
        }
    }

    pub fn num_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn branch_index(&self, id: &str) -> Option<usize> {
        self.branches.iter().position(|b| b.id == id)
    }

    /// Branch indices of the sources, in branch order, voltage sources first
    /// then current sources — the ordering the source selector matrix uses.
    pub fn source_branches(&self) -> Vec<usize> {
        let v = self
            .branches
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BranchKind::VoltageSource)
            .map(|(i, _)| i);
        let c = self
            .branches
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BranchKind::CurrentSource)
            .map(|(i, _)| i);
        v.chain(c).collect()
    }

    /// Checks every type invariant; an empty list means the graph is valid.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut push = |code, msg: String| out.push(Diagnostic::new(code, msg));

        let mut seen = Vec::new();
        for b in &self.branches {
            if seen.contains(&&b.id) {
                push(DiagCode::DuplicateId, format!("duplicate branch id {}", b.id));
            }
            seen.push(&b.id);
            if b.tail >= self.nodes.len() || b.head >= self.nodes.len() {
                push(
                    DiagCode::DanglingNode,
                    format!("branch {} references an undeclared node", b.id),
                );
                continue;
            }
            if b.tail == b.head {
                push(DiagCode::SelfLoop, format!("branch {} is a self-loop", b.id));
            }
            if b.compact_flux && b.compact_charge {
                push(
                    DiagCode::ConflictingCompactness,
                    format!("branch {} flags both compact variables", b.id),
                );
            }
            match b.kind {
                BranchKind::Capacitor | BranchKind::Inductor => {
                    if b.energy.is_none() {
                        push(
                            DiagCode::MissingParameter,
                            format!("reactive branch {} lacks an energy function", b.id),
                        );
                    } else if b.energy.as_ref().unwrap().nvars() != 1 {
                        push(
                            DiagCode::MisplacedEnergy,
                            format!("branch {} energy must be single-variable", b.id),
                        );
                    }
                }
                BranchKind::Resistor => match &b.value {
                    Some(r) if r.is_positive() => {}
                    _ => push(
                        DiagCode::NonPositiveResistor,
                        format!("resistor {} needs a positive R", b.id),
                    ),
                },
                BranchKind::VoltageSource | BranchKind::CurrentSource => {
                    if b.waveform.is_none() {
                        push(
                            DiagCode::MissingParameter,
                            format!("source {} lacks a waveform", b.id),
                        );
                    }
                }
                BranchKind::TransformerPort | BranchKind::GyratorPort => {
                    if b.energy.is_some() {
                        push(
                            DiagCode::MisplacedEnergy,
                            format!("port branch {} may not carry energy", b.id),
                        );
                    }
                    let owner = b.group.as_ref().and_then(|g| {
                        self.groups.iter().find(|grp| {
                            &grp.id == g
                                && grp
                                    .members
                                    .iter()
                                    .any(|&m| self.branches.get(m).map(|x| &x.id) == Some(&b.id))
                        })
                    });
                    if owner.is_none() {
                        push(
                            DiagCode::MalformedGroup,
                            format!("port branch {} belongs to no matching group", b.id),
                        );
                    }
                }
            }
            if let Some(SourceWaveform::PiecewiseLinear { breakpoints }) = &b.waveform {
                if breakpoints.windows(2).any(|w| w[0].0 >= w[1].0) {
                    push(
                        DiagCode::MalformedWaveform,
                        format!("branch {}: pwl breakpoints must strictly increase", b.id),
                    );
                }
            }
        }

        let mut group_ids = Vec::new();
        for g in &self.groups {
            if group_ids.contains(&&g.id) {
                push(DiagCode::DuplicateId, format!("duplicate group id {}", g.id));
            }
            group_ids.push(&g.id);
            if g.members.iter().any(|&m| m >= self.branches.len()) {
                push(
                    DiagCode::MalformedGroup,
                    format!("group {} references an unknown branch", g.id),
                );
                continue;
            }
            match &g.kind {
                GroupKind::Transformer { turns } => {
                    let n = turns.nrows();
                    let m = turns.ncols();
                    if g.members.len() != n + m {
                        push(
                            DiagCode::MalformedGroup,
                            format!(
                                "transformer {}: {} ports but turns matrix is {}x{}",
                                g.id,
                                g.members.len(),
                                n,
                                m
                            ),
                        );
                    }
                    for &mb in &g.members {
                        if self.branches[mb].kind != BranchKind::TransformerPort {
                            push(
                                DiagCode::MalformedGroup,
                                format!("group {} member {} is not a transformer port", g.id, mb),
                            );
                        }
                    }
                }
                GroupKind::Gyrator { coupling, .. } => {
                    if g.members.len() != 2 {
                        push(
                            DiagCode::MalformedGroup,
                            format!("gyrator {} must have exactly 2 ports", g.id),
                        );
                    }
                    if !coupling.is_antisymmetric() {
                        push(
                            DiagCode::NonAntisymmetricGyrator,
                            format!("gyrator {} coupling is not antisymmetric", g.id),
                        );
                    }
                    for &mb in &g.members {
                        if self.branches[mb].kind != BranchKind::GyratorPort {
                            push(
                                DiagCode::MalformedGroup,
                                format!("group {} member {} is not a gyrator port", g.id, mb),
                            );
                        }
                    }
                }
                GroupKind::Scattering { s, .. } => {
                    if s.nrows() != s.ncols() || s.nrows() != g.members.len() {
                        push(
                            DiagCode::MalformedGroup,
                            format!("scattering group {}: S must be square over its ports", g.id),
                        );
                    }
                }
            }
        }

        for f in &self.external_fluxes {
            // A closed cycle: signed endpoint sums cancel at every node.
            let mut node_sum = vec![0i64; self.nodes.len()];
            let mut ok = true;
            for &(bi, along) in &f.loop_branches {
                let Some(b) = self.branches.get(bi) else {
                    ok = false;
                    continue;
                };
                let (from, to) = if along { (b.tail, b.head) } else { (b.head, b.tail) };
                node_sum[from] += 1;
                node_sum[to] -= 1;
            }
            if !ok || node_sum.iter().any(|&s| s != 0) || f.loop_branches.is_empty() {
                push(
                    DiagCode::NotACycle,
                    format!("external flux {} does not trace a closed cycle", f.id),
                );
            }
        }
        out
    }
}
