//! The constraint-reduction loop: find zero modes of the (dissipation-
//! corrected) two-form, classify them as gauge or dynamical, eliminate what
//! can be eliminated, and iterate until the remaining structure has
//! homogeneous full rank or an obstruction is found.
//!
//! Source waveforms enter as extra symbols appended after the coordinates, so
//! time-dependent couplings ride through every substitution symbolically and
//! eliminated coordinates may legitimately depend on a drive voltage.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::{One, Zero};

use crate::circuit::{
    Branch, BranchKind, CircuitGraph, DiagCode, Diagnostic, SourceWaveform,
};
use crate::energy::{Affine, EnergyExpr};
use crate::matrix::{canonical_block, darboux_congruence, Mat};
use crate::pfaff::{assemble_pfaff, kernel_embedding, tellegen_check, Compactness, CoordKind};
use crate::rational::Rat;
use crate::structure::{build_structure, StructureError};
use crate::symbolics::{
    solve_extremum, total_energy, verify_extremum, ExtremumError, Verdict,
};
use crate::topology::{fundamental_matrices, loop_in_chord_basis};

/// Affine map `ζ-side coords = z·x + s·sources + c`, used to carry the
/// original reduced coordinates through every basis change and elimination so
/// trajectories of the final model can be lifted back.
#[derive(Clone, Debug)]
pub struct AffineMap {
    pub z: Mat,
    pub s: Mat,
    pub c: Vec<Rat>,
}

impl AffineMap {
    pub fn identity(m: usize, ns: usize) -> AffineMap {
        AffineMap {
            z: Mat::identity(m),
            s: Mat::zeros(m, ns),
            c: vec![Rat::zero(); m],
        }
    }

    /// Right-composition with `x = e·x' + f·sources + g`.
    pub fn compose(&self, e: &Mat, f: &Mat, g: &[Rat]) -> AffineMap {
        let z = self.z.mul(e);
        let s = self.z.mul(f).add(&self.s);
        let zg = self.z.mul_vec(g);
        let c = self
            .c
            .iter()
            .zip(&zg)
            .map(|(a, b)| a + b)
            .collect();
        AffineMap { z, s, c }
    }

    /// Numeric lift of final coordinates (plus source values) back to the
    /// round-0 coordinates.
    pub fn apply_f64(&self, x: &[f64], sources: &[f64]) -> Vec<f64> {
        let zf = self.z.to_f64();
        let sf = self.s.to_f64();
        (0..self.z.nrows())
            .map(|r| {
                let mut acc = crate::rational::rat_to_f64(&self.c[r]);
                for (j, xv) in x.iter().enumerate() {
                    acc += zf[r][j] * xv;
                }
                for (j, sv) in sources.iter().enumerate() {
                    acc += sf[r][j] * sv;
                }
                acc
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KindHint {
    PureCharge,
    PureFlux,
    Mixed,
}

#[derive(Clone, Debug)]
pub enum ModeClass {
    Gauge,
    Dynamical { constraint: EnergyExpr },
}

#[derive(Clone, Debug)]
pub struct ZeroMode {
    pub vector: Vec<Rat>,
    pub kind_hint: KindHint,
    pub classification: Option<ModeClass>,
}

/// Kernel basis of a two-form with per-mode support hints.
pub fn zero_modes(e: &Mat, kinds: &[CoordKind]) -> Vec<ZeroMode> {
    let k = e.kernel_basis();
    (0..k.ncols())
        .map(|c| {
            let vector: Vec<Rat> = (0..k.nrows()).map(|r| k[(r, c)].clone()).collect();
            let mut pure_q = true;
            let mut pure_phi = true;
            for (i, v) in vector.iter().enumerate() {
                if v.is_zero() {
                    continue;
                }
                match kinds[i] {
                    CoordKind::ChargeLike => pure_phi = false,
                    CoordKind::FluxLike => pure_q = false,
                    CoordKind::Mixed => {
                        pure_q = false;
                        pure_phi = false;
                    }
                }
            }
            let kind_hint = if pure_q {
                KindHint::PureCharge
            } else if pure_phi {
                KindHint::PureFlux
            } else {
                KindHint::Mixed
            };
            ZeroMode {
                vector,
                kind_hint,
                classification: None,
            }
        })
        .collect()
}

/// Gauge iff the directional derivative of the (source-augmented) energy
/// along the mode is the zero expression; otherwise the expression is the
/// dynamical constraint itself.
pub fn classify(mode: &ZeroMode, u: &EnergyExpr) -> ModeClass {
    let mut w = mode.vector.clone();
    w.resize(u.nvars(), Rat::zero());
    let constraint = u.directional_derivative(&w);
    if constraint.is_zero() {
        ModeClass::Gauge
    } else {
        ModeClass::Dynamical { constraint }
    }
}

#[derive(Clone, Debug)]
pub enum ObstructionKind {
    TopologicalPhaseSpace,
    NonHomogeneousRank { witness: EnergyExpr },
    NonIntegrable,
    UnresolvedLinearConstraint,
}

#[derive(Clone, Debug)]
pub struct ObstructionReport {
    pub kind: ObstructionKind,
    pub detail: String,
    pub stage: usize,
}

#[derive(Clone, Debug)]
pub struct ReductionStep {
    /// Basis change applied this round: `z_old = transform · z_new`.
    pub transform: Mat,
    /// Indices (new basis) of the zero-mode coordinates handled this round.
    pub zero_coords: Vec<usize>,
    pub dropped_gauge: Vec<usize>,
    /// Affine eliminations, coefficients over new-basis coords ⧺ sources.
    pub solved: Vec<(usize, Affine)>,
    pub remaining_implicit: Vec<usize>,
    /// Filled on the final (Darboux) step.
    pub canonical_pairs: usize,
}

/// A coordinate kept only as the root of an invertible implicit constraint:
/// its value is pinned by ∂H/∂w = 0, resolved numerically during dynamics.
#[derive(Clone, Debug)]
pub struct ImplicitCoord {
    pub index: usize,
    pub verdict: Verdict,
}

/// Round-0 snapshot, before any Darboux transform or elimination.
#[derive(Clone, Debug)]
pub struct InitialData {
    pub e_reduced: Mat,
    pub rayleigh: Mat,
    pub coord_names: Vec<String>,
    /// Source-augmented potential over the initial coordinates.
    pub potential: EnergyExpr,
}

#[derive(Clone, Debug)]
pub struct HamiltonianModel {
    /// (position, momentum) name pairs of the canonical block.
    pub pairs: Vec<(String, String)>,
    /// Final two-form: canonical pair block ⊕ zero block.
    pub two_form: Mat,
    /// Inverse of the two-form on its image; zero on the degenerate block.
    pub poisson: Mat,
    /// Over final coordinates followed by the source symbols.
    pub hamiltonian: EnergyExpr,
    pub rayleigh: Mat,
    pub coord_names: Vec<String>,
    pub compact_flags: Vec<Compactness>,
    /// Names and waveforms of the source symbols, in symbol order.
    pub sources: Vec<(String, SourceWaveform)>,
    pub implicit: Vec<ImplicitCoord>,
    pub advisories: Vec<ObstructionKind>,
    pub provenance: Vec<ReductionStep>,
    /// Lift of final coordinates back to the round-0 reduced coordinates.
    pub embedding: AffineMap,
    pub initial: InitialData,
}

impl HamiltonianModel {
    pub fn dim(&self) -> usize {
        self.two_form.nrows()
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    /// Gradient components of H at the implicit coordinates: the equations a
    /// dynamics driver must solve numerically each step.
    pub fn implicit_equations(&self) -> Vec<(usize, EnergyExpr)> {
        self.implicit
            .iter()
            .map(|ic| (ic.index, self.hamiltonian.gradient_component(ic.index)))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub enum ReductionFailure {
    Obstruction(ObstructionReport),
    Structure(StructureError),
    Tellegen(Vec<String>),
    InvalidFlux(Diagnostic),
    IterationCapExceeded,
}

const MAX_ROUNDS: usize = 8;

struct State {
    e: Mat,
    ray: Mat,
    /// Over current coords ⧺ source symbols.
    u: EnergyExpr,
    names: Vec<String>,
    kinds: Vec<CoordKind>,
    compact: Vec<Compactness>,
    implicit: Vec<ImplicitCoord>,
    emb: AffineMap,
    steps: Vec<ReductionStep>,
    wcount: usize,
    ns: usize,
}

impl State {
    fn dim(&self) -> usize {
        self.e.nrows()
    }
}

fn combine_kind(kinds: &[CoordKind], col: &[Rat]) -> CoordKind {
    let mut seen: Option<CoordKind> = None;
    for (i, v) in col.iter().enumerate() {
        if v.is_zero() {
            continue;
        }
        match seen {
            None => seen = Some(kinds[i]),
            Some(k) if k == kinds[i] => {}
            Some(_) => return CoordKind::Mixed,
        }
    }
    seen.unwrap_or(CoordKind::Mixed)
}

fn combine_compact(flags: &[Compactness], col: &[Rat]) -> Compactness {
    let touched: Vec<usize> = (0..col.len()).filter(|&i| !col[i].is_zero()).collect();
    if touched.len() == 1 {
        return flags[touched[0]];
    }
    if touched.iter().any(|&i| flags[i] != Compactness::Extended) {
        Compactness::PossiblyCompact
    } else {
        Compactness::Extended
    }
}

/// Greedy completion of `fixed ⧺ modes` to a full basis by unit vectors;
/// returns the chosen unit-vector indices in increasing order.
fn complete_basis(m: usize, fixed_cols: &Mat) -> Vec<usize> {
    let mut chosen = Vec::new();
    let mut current = fixed_cols.clone();
    for i in 0..m {
        if current.ncols() == m {
            break;
        }
        let mut e_i = Mat::zeros(m, 1);
        e_i[(i, 0)] = Rat::one();
        let trial = current.hstack(&e_i);
        if trial.rank() == trial.ncols() {
            chosen.push(i);
            current = trial;
        }
    }
    chosen
}

/// One round of the loop. `Ok(true)` means a reduction happened, `Ok(false)`
/// that no zero modes remain and the caller should finalize.
fn reduce_once(state: &mut State, stage: usize) -> Result<bool, ObstructionReport> {
    let m = state.dim();
    let ns = state.ns;
    // Dissipation-corrected left zero modes: wᵀ(E − Ray) = 0. Restrict to the
    // complement of the implicit coordinates, which stay pinned.
    let a_t = state.e.sub(&state.ray).transpose();
    let implicit_idx: Vec<usize> = state.implicit.iter().map(|ic| ic.index).collect();
    let keep: Vec<usize> = (0..m).filter(|i| !implicit_idx.contains(i)).collect();
    let a_sub = a_t
        .select_rows(&keep)
        .transpose()
        .select_rows(&keep)
        .transpose();
    let k_sub = a_sub.kernel_basis();
    if k_sub.ncols() == 0 {
        return Ok(false);
    }
    // Embed the modes back into the full index set.
    let mut modes = Mat::zeros(m, k_sub.ncols());
    for (r_sub, &r) in keep.iter().enumerate() {
        for c in 0..k_sub.ncols() {
            modes[(r, c)] = k_sub[(r_sub, c)].clone();
        }
    }

    // Basis: implicit coords first (identity), then completion, then modes.
    let mut fixed = Mat::zeros(m, implicit_idx.len());
    for (c, &i) in implicit_idx.iter().enumerate() {
        fixed[(i, c)] = Rat::one();
    }
    let completion = complete_basis(m, &fixed.hstack(&modes));
    let mut cols: Vec<Vec<Rat>> = Vec::new();
    let mut new_names = Vec::new();
    let mut new_implicit_index = Vec::new();
    for (c, &i) in implicit_idx.iter().enumerate() {
        cols.push((0..m).map(|r| fixed[(r, c)].clone()).collect());
        new_names.push(state.names[i].clone());
        new_implicit_index.push(cols.len() - 1);
    }
    for &i in &completion {
        let mut col = vec![Rat::zero(); m];
        col[i] = Rat::one();
        cols.push(col);
        new_names.push(state.names[i].clone());
    }
    let first_zero = cols.len();
    for c in 0..modes.ncols() {
        cols.push((0..m).map(|r| modes[(r, c)].clone()).collect());
        state.wcount += 1;
        new_names.push(format!("w_{}", state.wcount));
    }
    let t = Mat::from_fn(m, m, |r, c| cols[c][r].clone());
    debug_assert_eq!(t.rank(), m);

    // Transform everything into the adapted basis.
    let e_new = t.transpose().mul(&state.e.mul(&t));
    let ray_new = t.transpose().mul(&state.ray.mul(&t));
    let mut t_aug = Mat::zeros(m + ns, m + ns);
    for r in 0..m {
        for c in 0..m {
            t_aug[(r, c)] = t[(r, c)].clone();
        }
    }
    for j in 0..ns {
        t_aug[(m + j, m + j)] = Rat::one();
    }
    let u_new = state.u.substitute(&t_aug, &vec![Rat::zero(); m + ns]);
    let kinds_new: Vec<CoordKind> = (0..m).map(|c| combine_kind(&state.kinds, &cols[c])).collect();
    let compact_new: Vec<Compactness> =
        (0..m).map(|c| combine_compact(&state.compact, &cols[c])).collect();

    // Classify each zero coordinate.
    let zero_coords: Vec<usize> = (first_zero..m).collect();
    let mut gauge = Vec::new();
    let mut dynamical = Vec::new();
    for &z in &zero_coords {
        if u_new.gradient_component(z).is_zero() {
            gauge.push(z);
        } else {
            dynamical.push(z);
        }
    }

    let mut solved: Vec<(usize, Affine)> = Vec::new();
    let mut new_implicits: Vec<ImplicitCoord> = Vec::new();
    if !dynamical.is_empty() {
        let sol = solve_extremum(&u_new, &dynamical).map_err(|err| match err {
            ExtremumError::LinearDependentOnVar { detail } => ObstructionReport {
                kind: ObstructionKind::UnresolvedLinearConstraint,
                detail,
                stage,
            },
        })?;
        if !verify_extremum(&u_new, &sol) {
            return Err(ObstructionReport {
                kind: ObstructionKind::NonIntegrable,
                detail: String::from("affine constraint solutions do not commute"),
                stage,
            });
        }
        for imp in &sol.implicit {
            if !imp.couples.is_empty() {
                return Err(ObstructionReport {
                    kind: ObstructionKind::NonIntegrable,
                    detail: format!(
                        "implicit constraints on {} coupled coordinates cannot be separated",
                        imp.couples.len() + 1
                    ),
                    stage,
                });
            }
            if imp.verdict == Verdict::Inconclusive {
                return Err(ObstructionReport {
                    kind: ObstructionKind::NonHomogeneousRank {
                        witness: imp.witness.clone().unwrap_or_else(|| {
                            imp.second_derivative.clone()
                        }),
                    },
                    detail: String::from(
                        "constraint second derivative changes sign; the implicit solution fails",
                    ),
                    stage,
                });
            }
            new_implicits.push(ImplicitCoord {
                index: imp.var,
                verdict: imp.verdict,
            });
        }
        solved = sol.solved;
        // Free (flat) directions stay; they become gauge modes next round.
    }

    // Elimination map: keep everything except gauge-dropped and solved.
    let removed: Vec<usize> = gauge
        .iter()
        .chain(solved.iter().map(|(v, _)| v))
        .copied()
        .collect();
    let kept: Vec<usize> = (0..m).filter(|i| !removed.contains(i)).collect();
    let mk = kept.len();
    let mut e_map = Mat::zeros(m, mk);
    let mut f_map = Mat::zeros(m, ns);
    let mut g_off = vec![Rat::zero(); m];
    for (new_c, &old) in kept.iter().enumerate() {
        e_map[(old, new_c)] = Rat::one();
    }
    for (v, a) in &solved {
        for (j, coeff) in a.coeffs.iter().enumerate() {
            if coeff.is_zero() {
                continue;
            }
            if j < m {
                let new_c = kept
                    .iter()
                    .position(|&kcol| kcol == j)
                    .expect("solution references an eliminated coordinate");
                e_map[(*v, new_c)] = coeff.clone();
            } else {
                f_map[(*v, j - m)] = coeff.clone();
            }
        }
        g_off[*v] = a.offset.clone();
    }

    // Apply the elimination.
    let mut full = Mat::zeros(m + ns, mk + ns);
    let mut full_off = vec![Rat::zero(); m + ns];
    for r in 0..m {
        for c in 0..mk {
            full[(r, c)] = e_map[(r, c)].clone();
        }
        for c in 0..ns {
            full[(r, mk + c)] = f_map[(r, c)].clone();
        }
        full_off[r] = g_off[r].clone();
    }
    for j in 0..ns {
        full[(m + j, mk + j)] = Rat::one();
    }
    state.u = u_new.substitute(&full, &full_off);
    state.e = e_map.transpose().mul(&e_new.mul(&e_map));
    state.ray = e_map.transpose().mul(&ray_new.mul(&e_map));
    state.names = kept.iter().map(|&i| new_names[i].clone()).collect();
    state.kinds = kept.iter().map(|&i| kinds_new[i]).collect();
    state.compact = kept.iter().map(|&i| compact_new[i]).collect();
    state.emb = state.emb.compose(&t, &Mat::zeros(m, ns), &vec![Rat::zero(); m]);
    state.emb = state.emb.compose(&e_map, &f_map, &g_off);
    let reindex = |old: usize| kept.iter().position(|&k| k == old).expect("kept index");
    state.implicit = new_implicit_index
        .iter()
        .map(|&i| ImplicitCoord {
            index: reindex(i),
            verdict: Verdict::Invertible,
        })
        .chain(new_implicits.iter().map(|ic| ImplicitCoord {
            index: reindex(ic.index),
            verdict: ic.verdict,
        }))
        .collect();
    state.steps.push(ReductionStep {
        transform: t,
        zero_coords,
        dropped_gauge: gauge,
        solved,
        remaining_implicit: state.implicit.iter().map(|ic| ic.index).collect(),
        canonical_pairs: 0,
    });
    Ok(true)
}

/// Final Darboux split: canonical pairs on the regular block, resistive and
/// implicit coordinates in the zero block.
fn finalize(mut state: State, graph: &CircuitGraph) -> HamiltonianModel {
    let m = state.dim();
    let ns = state.ns;
    let implicit_idx: Vec<usize> = state.implicit.iter().map(|ic| ic.index).collect();
    let rest: Vec<usize> = (0..m).filter(|i| !implicit_idx.contains(i)).collect();
    let e_rr = state
        .e
        .select_rows(&rest)
        .transpose()
        .select_rows(&rest)
        .transpose();
    let frame = darboux_congruence(&e_rr);
    let p = frame.pairs;
    // Assemble the full transform: Darboux on the regular block, identity on
    // the implicit coordinates, implicit coords after the zero block.
    let mut t = Mat::zeros(m, m);
    for c in 0..rest.len() {
        for (r_sub, &r) in rest.iter().enumerate() {
            t[(r, c)] = frame.s[(r_sub, c)].clone();
        }
    }
    for (k, &i) in implicit_idx.iter().enumerate() {
        t[(i, rest.len() + k)] = Rat::one();
    }
    let e_final = t.transpose().mul(&state.e.mul(&t));
    debug_assert_eq!(
        e_final,
        canonical_block(p, m - 2 * p),
        "darboux split did not canonicalize the two-form"
    );
    let ray_final = t.transpose().mul(&state.ray.mul(&t));
    let mut t_aug = Mat::zeros(m + ns, m + ns);
    for r in 0..m {
        for c in 0..m {
            t_aug[(r, c)] = t[(r, c)].clone();
        }
    }
    for j in 0..ns {
        t_aug[(m + j, m + j)] = Rat::one();
    }
    let h_final = state.u.substitute(&t_aug, &vec![Rat::zero(); m + ns]);
    let emb = state.emb.compose(&t, &Mat::zeros(m, ns), &vec![Rat::zero(); m]);

    let cols: Vec<Vec<Rat>> = (0..m).map(|c| t.col(c)).collect();
    let compact_flags: Vec<Compactness> =
        (0..m).map(|c| combine_compact(&state.compact, &cols[c])).collect();
    let mut names = Vec::new();
    let mut pairs = Vec::new();
    for i in 0..p {
        names.push(format!("x_{}", i + 1));
    }
    for i in 0..p {
        names.push(format!("p_{}", i + 1));
        pairs.push((format!("x_{}", i + 1), format!("p_{}", i + 1)));
    }
    for i in 0..rest.len() - 2 * p {
        names.push(format!("r_{}", i + 1));
    }
    for &i in &implicit_idx {
        names.push(state.names[i].clone());
    }

    let mut poisson = Mat::zeros(m, m);
    for i in 0..p {
        poisson[(i, p + i)] = -Rat::one();
        poisson[(p + i, i)] = Rat::one();
    }

    let mut advisories = Vec::new();
    if compact_flags[..2 * p]
        .iter()
        .any(|f| *f == Compactness::Compact)
    {
        advisories.push(ObstructionKind::TopologicalPhaseSpace);
    }

    let implicit: Vec<ImplicitCoord> = implicit_idx
        .iter()
        .enumerate()
        .map(|(k, _)| ImplicitCoord {
            index: rest.len() + k,
            verdict: Verdict::Invertible,
        })
        .collect();
    if let Some(last) = state.steps.last_mut() {
        last.canonical_pairs = p;
    }
    let sources = source_symbols(graph);
    HamiltonianModel {
        pairs,
        two_form: e_final,
        poisson,
        hamiltonian: h_final,
        rayleigh: ray_final,
        coord_names: names,
        compact_flags,
        sources,
        implicit,
        advisories,
        provenance: state.steps,
        embedding: emb,
        initial: state_initial_placeholder(),
    }
}

// The initial snapshot is attached by `run_reduction`; this placeholder keeps
// `finalize` self-contained.
fn state_initial_placeholder() -> InitialData {
    InitialData {
        e_reduced: Mat::zeros(0, 0),
        rayleigh: Mat::zeros(0, 0),
        coord_names: Vec::new(),
        potential: EnergyExpr::zero(0),
    }
}

/// The source symbols, in the order their coordinates are appended to the
/// energy: voltage sources first, then current sources, by declaration.
pub fn source_symbols(graph: &CircuitGraph) -> Vec<(String, SourceWaveform)> {
    let mut out = Vec::new();
    for kind in [BranchKind::VoltageSource, BranchKind::CurrentSource] {
        for br in &graph.branches {
            if br.kind == kind {
                if let Some(w) = &br.waveform {
                    out.push((br.id.clone(), w.clone()));
                }
            }
        }
    }
    out
}

pub fn run_reduction(graph: &CircuitGraph) -> Result<HamiltonianModel, ReductionFailure> {
    run_reduction_with_offsets(graph, None)
}

pub fn run_reduction_with_offsets(
    graph: &CircuitGraph,
    offsets: Option<&[Rat]>,
) -> Result<HamiltonianModel, ReductionFailure> {
    let graph = if graph.external_fluxes.is_empty() {
        graph.clone()
    } else {
        flux_to_sources(graph).map_err(ReductionFailure::InvalidFlux)?
    };
    let topo = fundamental_matrices(&graph);
    let pfaff = assemble_pfaff(&graph, &topo);
    let space = kernel_embedding(&pfaff, &graph);
    let report = tellegen_check(&space, &graph);
    if !report.is_ok() {
        return Err(ReductionFailure::Tellegen(report.violations));
    }
    let bundle = build_structure(&space, &graph).map_err(ReductionFailure::Structure)?;
    let b = graph.branches.len();
    let zero_off = vec![Rat::zero(); 2 * b];
    let offsets = offsets.unwrap_or(&zero_off);
    let te = total_energy(&graph, &space, offsets);
    let m = space.dim();

    // Augment with source symbols: U = H + Σ_α S_α z^α with S from the exact
    // source map contracted against one symbol per source branch.
    let symbols = source_symbols(&graph);
    let ns = symbols.len();
    let mut u = te.h.extend_vars(ns);
    {
        let mut slot_of = Vec::new();
        for kind in [BranchKind::VoltageSource, BranchKind::CurrentSource] {
            for (i, br) in graph.branches.iter().enumerate() {
                if br.kind == kind && br.waveform.is_some() {
                    slot_of.push(match kind {
                        BranchKind::VoltageSource => b + i,
                        _ => i,
                    });
                }
            }
        }
        for alpha in 0..m {
            for (j, &slot) in slot_of.iter().enumerate() {
                let c = &bundle.source_map[(alpha, slot)];
                if !c.is_zero() {
                    u = u.add(&EnergyExpr::quad_term(m + ns, alpha, m + j, c.clone()));
                }
            }
        }
    }

    let initial = InitialData {
        e_reduced: bundle.e_reduced.clone(),
        rayleigh: bundle.rayleigh.clone(),
        coord_names: space.coord_names.clone(),
        potential: u.clone(),
    };

    let mut state = State {
        e: bundle.e_reduced,
        ray: bundle.rayleigh,
        u,
        names: space.coord_names.clone(),
        kinds: space.coord_kind.clone(),
        compact: space.coord_compact.clone(),
        implicit: Vec::new(),
        emb: AffineMap::identity(m, ns),
        steps: Vec::new(),
        wcount: 0,
        ns,
    };
    let mut rounds = 0;
    loop {
        if rounds >= MAX_ROUNDS {
            return Err(ReductionFailure::IterationCapExceeded);
        }
        match reduce_once(&mut state, rounds + 1) {
            Ok(true) => rounds += 1,
            Ok(false) => break,
            Err(obs) => return Err(ReductionFailure::Obstruction(obs)),
        }
    }
    let mut model = finalize(state, &graph);
    model.initial = initial;
    Ok(model)
}

/// Converts declared external loop fluxes into series voltage sources on the
/// chords carrying them: each chord with a nonzero flux assignment is split
/// at a fresh node, and a source with waveform Φ̇ is inserted in series.
pub fn flux_to_sources(graph: &CircuitGraph) -> Result<CircuitGraph, Diagnostic> {
    if graph.external_fluxes.is_empty() {
        return Ok(graph.clone());
    }
    let topo = fundamental_matrices(graph);
    let b = graph.branches.len();
    let mut per_branch: Vec<Option<SourceWaveform>> = vec![None; b];
    for decl in &graph.external_fluxes {
        let coeffs = loop_in_chord_basis(&topo, &decl.loop_branches)?;
        for (i, c) in coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let chord = topo.chords[i];
            let contribution =
                SourceWaveform::Scaled(c.clone(), Box::new(decl.waveform.clone()));
            per_branch[chord] = Some(match per_branch[chord].take() {
                None => contribution,
                Some(prev) => SourceWaveform::Sum(vec![prev, contribution]),
            });
        }
    }
    let mut out = graph.clone();
    out.external_fluxes.clear();
    for (i, flux) in per_branch.into_iter().enumerate() {
        let Some(flux) = flux else { continue };
        if flux.is_identically_zero() {
            continue;
        }
        let mid = out.nodes.len();
        out.nodes.push(format!("{}__emf", graph.branches[i].id));
        let old_head = out.branches[i].head;
        out.branches[i].head = mid;
        out.branches.push(Branch::voltage_source(
            &format!("V__{}", graph.branches[i].id),
            mid,
            old_head,
            SourceWaveform::Derivative(Box::new(flux)),
        ));
    }
    // Sanity: no diagnostics should be introduced by the rewrite.
    debug_assert!(out
        .validate()
        .iter()
        .all(|d| d.code != DiagCode::DanglingNode));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::ExternalFluxDecl;
    use crate::rational::{rat, rat_i};
    use num_traits::Signed;

    fn m(rows: &[&[i64]]) -> Mat {
        Mat::from_rows(
            rows.iter()
                .map(|r| r.iter().map(|&x| rat_i(x)).collect())
                .collect(),
        )
    }

    fn parallel_rlc(c: i64, l: i64, r: i64) -> CircuitGraph {
        let mut g = CircuitGraph::new(&["0", "1"]);
        g.branches.push(Branch::capacitor("C", 0, 1, rat_i(c)));
        g.branches.push(Branch::inductor("L", 0, 1, rat_i(l)));
        g.branches.push(Branch::resistor("R", 0, 1, rat_i(r)));
        g
    }

    /// Star circuit: capacitors around the perimeter, inductors as spokes to
    /// the center node, oriented to match the reference cutset.
    fn star(c: [Rat; 3], l: [Rat; 3]) -> CircuitGraph {
        let mut g = CircuitGraph::new(&["center", "1", "2", "3"]);
        let [c1, c2, c3] = c;
        let [l1, l2, l3] = l;
        g.branches.push(Branch::inductor("L1", 1, 0, l1));
        g.branches.push(Branch::inductor("L2", 2, 0, l2));
        g.branches.push(Branch::inductor("L3", 3, 0, l3));
        g.branches.push(Branch::capacitor("C1", 1, 2, c1));
        g.branches.push(Branch::capacitor("C2", 2, 3, c2));
        g.branches.push(Branch::capacitor("C3", 3, 1, c3));
        g
    }

    #[test]
    fn rlc_model_matches_the_hand_derivation() {
        // C = 2, L = 3, R = 7: one canonical pair, no sources, no implicit
        // coordinates. The round-0 snapshot carries e = [[0,−R],[R,0]] and
        // U with Q matrix [[1/C + R²/L, R²/L], [R²/L, R²/L]].
        let model = run_reduction(&parallel_rlc(2, 3, 7)).unwrap();
        assert_eq!(model.pairs.len(), 1);
        assert_eq!(model.dim(), 2);
        assert!(model.implicit.is_empty());
        assert!(model.advisories.is_empty());
        assert_eq!(model.num_sources(), 0);
        assert_eq!(model.two_form, m(&[&[0, 1], &[-1, 0]]));
        assert_eq!(model.initial.e_reduced, m(&[&[0, -7], &[7, 0]]));
        let q0 = model.initial.potential.quad_matrix();
        let expected = Mat::from_rows(vec![
            vec![rat(101, 6), rat(49, 3)],
            vec![rat(49, 3), rat(49, 3)],
        ]);
        assert_eq!(q0, &expected);
        // Dissipation survives the reduction: the final Rayleigh matrix is
        // nonzero and symmetric.
        assert!(!model.rayleigh.is_zero());
        assert_eq!(model.rayleigh, model.rayleigh.transpose());
    }

    fn flip_second(mx: &Mat) -> Mat {
        let mut f = mx.clone();
        f[(0, 1)] = -f[(0, 1)].clone();
        f[(1, 0)] = -f[(1, 0)].clone();
        f
    }

    /// Runs the star circuit and checks the final quadratic form against the
    /// closed-form inverse-capacitance and inverse-inductance matrices
    ///   C⁻¹ = (1/C*²)[[C₂+C₃, −C₂], [−C₂, C₁+C₂]],  C*² = C₁C₂ + (C₁+C₂)C₃,
    ///   L⁻¹ = (1/L*²)[[L₁+L₃,  L₁], [ L₁, L₁+L₂]],  L*² = L₁L₂ + (L₁+L₂)L₃.
    /// The comparison is entrywise modulo the canonical pair reflection
    /// (x₂, p₂) → (−x₂, −p₂), which is pure Darboux-basis choice: it leaves
    /// the two-form invariant and only flips the off-diagonal signs.
    fn check_star(c: [Rat; 3], l: [Rat; 3]) {
        let model = run_reduction(&star(c.clone(), l.clone())).unwrap();
        assert_eq!(model.pairs.len(), 2);
        assert_eq!(model.dim(), 4);
        assert!(model.implicit.is_empty());
        assert!(model.advisories.is_empty());
        let h = &model.hamiltonian;
        assert!(h.trig_terms().is_empty());
        assert!(h.linear_part().iter().all(|x| x.is_zero()));
        let q = h.quad_matrix();
        for i in 0..2 {
            for j in 2..4 {
                assert!(q[(i, j)].is_zero(), "position/momentum cross-coupling");
            }
        }
        let [c1, c2, c3] = c;
        let [l1, l2, l3] = l;
        let cs = &c1 * &c2 + (&c1 + &c2) * &c3;
        let ls = &l1 * &l2 + (&l1 + &l2) * &l3;
        let cinv = Mat::from_rows(vec![
            vec![(&c2 + &c3) / &cs, -(&c2 / &cs)],
            vec![-(&c2 / &cs), (&c1 + &c2) / &cs],
        ]);
        let linv = Mat::from_rows(vec![
            vec![(&l1 + &l3) / &ls, &l1 / &ls],
            vec![&l1 / &ls, (&l1 + &l2) / &ls],
        ]);
        let xb = q.select_rows(&[0, 1]).select_cols(&[0, 1]);
        let pb = q.select_rows(&[2, 3]).select_cols(&[2, 3]);
        let ok = (xb == cinv && pb == linv)
            || (flip_second(&xb) == cinv && flip_second(&pb) == linv)
            || (xb == linv && pb == cinv)
            || (flip_second(&xb) == linv && flip_second(&pb) == cinv);
        assert!(
            ok,
            "final blocks do not match the reference matrices:\nx-block\n{}\np-block\n{}",
            crate::pfaff::render_matrix(&xb),
            crate::pfaff::render_matrix(&pb)
        );
    }

    #[test]
    fn star_circuit_reduces_to_the_closed_form_normal_modes() {
        check_star(
            [rat_i(2), rat_i(3), rat_i(5)],
            [rat_i(7), rat_i(11), rat_i(13)],
        );
        check_star([rat_i(1), rat_i(1), rat_i(1)], [rat_i(1), rat_i(1), rat_i(1)]);
        check_star(
            [rat(1, 2), rat(3, 4), rat(2, 5)],
            [rat(5, 3), rat(7, 2), rat(1, 6)],
        );
        check_star(
            [rat_i(3), rat(1, 7), rat_i(4)],
            [rat(9, 2), rat_i(2), rat(5, 11)],
        );
        check_star(
            [rat_i(13), rat_i(8), rat_i(21)],
            [rat_i(34), rat_i(55), rat_i(89)],
        );
    }

    #[test]
    fn star_zero_modes_split_into_pure_charge_and_pure_flux() {
        let g = star(
            [rat_i(2), rat_i(3), rat_i(5)],
            [rat_i(7), rat_i(11), rat_i(13)],
        );
        let topo = fundamental_matrices(&g);
        let pfaff = assemble_pfaff(&g, &topo);
        let space = kernel_embedding(&pfaff, &g);
        let bundle = build_structure(&space, &g).unwrap();
        let modes = zero_modes(&bundle.e_reduced, &space.coord_kind);
        assert_eq!(modes.len(), 2);
        let hints: Vec<KindHint> = modes.iter().map(|zm| zm.kind_hint).collect();
        assert!(hints.contains(&KindHint::PureCharge));
        assert!(hints.contains(&KindHint::PureFlux));
        // Both modes see a potential gradient, so neither is gauge: the
        // charge mode hits the capacitor energies, the flux mode the
        // inductor energies.
        let u = total_energy(&g, &space, &alloc::vec![Rat::zero(); 12]);
        for mode in &modes {
            assert!(matches!(classify(mode, &u.h), ModeClass::Dynamical { .. }));
        }
    }

    #[test]
    fn driven_lc_keeps_the_source_coupling() {
        // V — C — L around a loop; the model should end up a single
        // canonical pair whose Hamiltonian still references the source
        // symbol appended after the coordinates.
        let mut g = CircuitGraph::new(&["0", "1", "2"]);
        g.branches.push(Branch::voltage_source(
            "V",
            0,
            1,
            SourceWaveform::Constant { value: rat_i(5) },
        ));
        g.branches.push(Branch::capacitor("C", 1, 2, rat_i(2)));
        g.branches.push(Branch::inductor("L", 2, 0, rat_i(3)));
        let model = run_reduction(&g).unwrap();
        assert_eq!(model.num_sources(), 1);
        assert_eq!(model.pairs.len(), 1);
        assert_eq!(model.dim(), 2);
        let source_var = model.dim();
        assert!(model.hamiltonian.depends_on(source_var));
    }

    #[test]
    fn series_rc_relaxes_without_a_false_constraint() {
        // R and C in a loop: the Pfaff system has rank 3 over 4 branch
        // variables, leaving one coordinate. Its two-form vanishes but the
        // Rayleigh correction keeps it out of the zero-mode kernel, so the
        // relaxation degree of freedom survives as a resistive coordinate
        // instead of being eliminated as a spurious constraint.
        let mut g = CircuitGraph::new(&["0", "1"]);
        g.branches.push(Branch::capacitor("C", 0, 1, rat_i(2)));
        g.branches.push(Branch::resistor("R", 1, 0, rat_i(7)));
        let model = run_reduction(&g).unwrap();
        assert_eq!(model.pairs.len(), 0);
        assert_eq!(model.dim(), 1);
        assert!(model.implicit.is_empty());
        assert!(!model.rayleigh.is_zero());
        assert!(model.hamiltonian.depends_on(0));
    }

    /// Cosine-energy branch in *series* with a linear inductor, closed by a
    /// capacitor. The node between the two inductive branches carries no
    /// capacitance, so the relative flux is a zero-mode direction whose
    /// constraint carries the cosine; with the energy written directly as
    /// −E·cos(φ) the steepness ratio is β = E·L exactly.
    fn lj_loop(e_num: i64, e_den: i64, l: i64, c: i64) -> CircuitGraph {
        let mut g = CircuitGraph::new(&["0", "1", "2"]);
        g.branches.push(Branch::capacitor("C", 0, 1, rat_i(c)));
        g.branches.push(Branch::inductor("L", 1, 2, rat_i(l)));
        let cos_energy = EnergyExpr::trig(
            -rat(e_num, e_den),
            0,
            crate::energy::TrigKind::Cos,
            false,
            Affine::var(1, 0),
        );
        g.branches
            .push(Branch::inductive_energy("J", 2, 0, cos_energy));
        let model_check = g.validate();
        assert!(model_check.is_empty(), "{:?}", model_check);
        g
    }

    #[test]
    fn gentle_cosine_loop_keeps_an_invertible_implicit_coordinate() {
        // β = 1/2 < 1: the extremum equation ∂U/∂w = 0 is monotone, so the
        // slaved coordinate is retained implicitly and the rest is one
        // canonical pair.
        let model = run_reduction(&lj_loop(1, 2, 1, 1)).unwrap();
        assert_eq!(model.pairs.len(), 1);
        assert_eq!(model.implicit.len(), 1);
        assert_eq!(model.dim(), 3);
        assert_eq!(model.implicit[0].verdict, Verdict::Invertible);
        // The implicit equation still carries the cosine.
        let eqs = model.implicit_equations();
        assert_eq!(eqs.len(), 1);
        assert!(!eqs[0].1.trig_terms().is_empty());
    }

    #[test]
    fn steep_cosine_loop_reports_a_rank_obstruction() {
        // β = 2 ≥ 1: the second derivative 1 + 2cos(·) changes sign, so the
        // extremum is not globally solvable and the failure carries the
        // normalized witness.
        let err = run_reduction(&lj_loop(2, 1, 1, 1)).unwrap_err();
        let ReductionFailure::Obstruction(report) = err else {
            panic!("expected an obstruction");
        };
        let ObstructionKind::NonHomogeneousRank { witness } = report.kind else {
            panic!("expected a rank obstruction, got {:?}", report.kind);
        };
        assert_eq!(witness.constant_part(), &rat_i(1));
        assert_eq!(witness.trig_terms().len(), 1);
        let t = &witness.trig_terms()[0];
        assert_eq!(t.coeff.clone().abs(), rat_i(2));
        assert_eq!(t.coeff_pi, 0);
    }

    #[test]
    fn flux_bias_becomes_a_derivative_voltage_source() {
        let mut g = CircuitGraph::new(&["0", "1"]);
        g.branches.push(Branch::capacitor("C", 0, 1, rat_i(1)));
        g.branches.push(Branch::inductor("L", 1, 0, rat_i(1)));
        g.external_fluxes.push(ExternalFluxDecl {
            id: "phi_x".into(),
            loop_branches: alloc::vec![(0, true), (1, true)],
            waveform: SourceWaveform::Sinusoid {
                amplitude: rat_i(3),
                omega: rat_i(2),
                phase: rat_i(0),
            },
        });
        let rewritten = flux_to_sources(&g).unwrap();
        assert!(rewritten.external_fluxes.is_empty());
        assert_eq!(rewritten.branches.len(), 3);
        assert_eq!(rewritten.nodes.len(), 3);
        let emf = &rewritten.branches[2];
        assert_eq!(emf.kind, BranchKind::VoltageSource);
        assert!(matches!(
            emf.waveform,
            Some(SourceWaveform::Derivative(_))
        ));
        // The full pipeline accepts the biased circuit directly and reports
        // the induced source.
        let model = run_reduction(&g).unwrap();
        assert_eq!(model.num_sources(), 1);
        assert_eq!(model.pairs.len(), 1);
    }

    #[test]
    fn zero_flux_declaration_leaves_the_graph_alone() {
        let mut g = CircuitGraph::new(&["0", "1"]);
        g.branches.push(Branch::capacitor("C", 0, 1, rat_i(1)));
        g.branches.push(Branch::inductor("L", 1, 0, rat_i(1)));
        g.external_fluxes.push(ExternalFluxDecl {
            id: "phi_x".into(),
            loop_branches: alloc::vec![(0, true), (1, true)],
            waveform: SourceWaveform::Constant { value: rat_i(0) },
        });
        let rewritten = flux_to_sources(&g).unwrap();
        assert!(rewritten.external_fluxes.is_empty());
        assert_eq!(rewritten.branches.len(), 2);
        assert_eq!(rewritten.nodes.len(), 2);
    }

    #[test]
    fn trajectory_lift_back_reproduces_initial_coordinates() {
        // For the RLC the embedding is a linear map from the two final
        // coordinates to the two round-0 coordinates; pushing the final
        // two-form and potential through it must recover the snapshot.
        let model = run_reduction(&parallel_rlc(2, 3, 7)).unwrap();
        let emb = &model.embedding;
        assert_eq!(emb.z.nrows(), 2);
        assert_eq!(emb.z.ncols(), 2);
        assert!(emb.c.iter().all(|x| x.is_zero()));
        // z₀ᵀ E₀ z₀ pulled back through the embedding equals the final e.
        let pulled = emb
            .z
            .transpose()
            .mul(&model.initial.e_reduced)
            .mul(&emb.z);
        assert_eq!(pulled, model.two_form);
        // And the potential agrees after substitution.
        let subbed = model.initial.potential.substitute(
            &emb.z,
            &alloc::vec![Rat::zero(); 2],
        );
        assert_eq!(subbed.quad_matrix(), model.hamiltonian.quad_matrix());
    }
}
