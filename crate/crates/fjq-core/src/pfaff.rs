//! Pfaff constraint system over the 2B branch differentials and its kernel.
//!
//! Column convention everywhere: `[dq_1 .. dq_B | dφ_1 .. dφ_B]` in branch
//! declaration order. The constraint rows are Kirchhoff (cutset on charges,
//! loops on fluxes), Belevitch transformer rows, resistor constitutive rows
//! `R dq − dφ = 0`, gyrator rows, and verbatim scattering rows. The kernel of
//! the stacked matrix, collected as columns of `K`, is the reduced
//! configuration space: `F K = 0` exactly and `M = 2B − rank F`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::{One, Zero};

use crate::circuit::{BranchKind, CircuitGraph, GroupKind};
use crate::matrix::Mat;
use crate::rational::{fmt_rat, Rat};
use crate::topology::TopologyData;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockLabel {
    Kirchhoff,
    Transformer,
    Resistor,
    Gyrator,
    Scattering,
}

#[derive(Clone, Debug)]
pub struct PfaffSystem {
    /// Constraint rows × 2B.
    pub f: Mat,
    /// Labeled row ranges, in assembly order.
    pub blocks: Vec<(BlockLabel, core::ops::Range<usize>)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoordKind {
    ChargeLike,
    FluxLike,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Compactness {
    Extended,
    Compact,
    PossiblyCompact,
}

/// The reduced configuration space: a kernel basis of the Pfaff matrix with
/// per-coordinate reporting metadata.
#[derive(Clone, Debug)]
pub struct ReducedSpace {
    /// 2B × M embedding, `F·k = 0`.
    pub k: Mat,
    pub coord_names: Vec<String>,
    pub coord_kind: Vec<CoordKind>,
    pub coord_compact: Vec<Compactness>,
    pub branch_order: Vec<String>,
}

impl ReducedSpace {
    pub fn dim(&self) -> usize {
        self.k.ncols()
    }

    pub fn num_branches(&self) -> usize {
        self.k.nrows() / 2
    }
}

pub fn assemble_pfaff(graph: &CircuitGraph, topo: &TopologyData) -> PfaffSystem {
    let b = graph.branches.len();
    let mut rows: Vec<Vec<Rat>> = Vec::new();
    let mut blocks = Vec::new();
    let mark = |blocks: &mut Vec<(BlockLabel, core::ops::Range<usize>)>,
                    label,
                    start: usize,
                    end: usize| {
        if end > start {
            blocks.push((label, start..end));
        }
    };

    // Kirchhoff: diag(F_C, F_L).
    let start = rows.len();
    for r in 0..topo.cutset.nrows() {
        let mut row = vec![Rat::zero(); 2 * b];
        row[..b].clone_from_slice(topo.cutset.row(r));
        rows.push(row);
    }
    for r in 0..topo.loop_matrix.nrows() {
        let mut row = vec![Rat::zero(); 2 * b];
        row[b..].clone_from_slice(topo.loop_matrix.row(r));
        rows.push(row);
    }
    mark(&mut blocks, BlockLabel::Kirchhoff, start, rows.len());

    // Belevitch transformers: currents [N | I], voltages [I | −Nᵀ] on the
    // group's ports (left ports first, then right, per member order).
    let start = rows.len();
    for g in &graph.groups {
        let GroupKind::Transformer { turns } = &g.kind else {
            continue;
        };
        let m = turns.ncols();
        let n = turns.nrows();
        let left = &g.members[..m];
        let right = &g.members[m..];
        for i in 0..n {
            let mut row = vec![Rat::zero(); 2 * b];
            for (j, &lb) in left.iter().enumerate() {
                row[lb] = turns[(i, j)].clone();
            }
            row[right[i]] = Rat::one();
            rows.push(row);
        }
        for j in 0..m {
            let mut row = vec![Rat::zero(); 2 * b];
            row[b + left[j]] = Rat::one();
            for (i, &rb) in right.iter().enumerate() {
                row[b + rb] = -turns[(i, j)].clone();
            }
            rows.push(row);
        }
    }
    mark(&mut blocks, BlockLabel::Transformer, start, rows.len());

    // Resistors: R dq_r − dφ_r = 0.
    let start = rows.len();
    for (i, br) in graph.branches.iter().enumerate() {
        if br.kind == BranchKind::Resistor {
            let mut row = vec![Rat::zero(); 2 * b];
            row[i] = br.value.clone().expect("validated resistor");
            row[b + i] = -Rat::one();
            rows.push(row);
        }
    }
    mark(&mut blocks, BlockLabel::Resistor, start, rows.len());

    // Gyrators: dq_port − Y dφ_ports = 0 on each group.
    let start = rows.len();
    for g in &graph.groups {
        let GroupKind::Gyrator { coupling, .. } = &g.kind else {
            continue;
        };
        for (k, &pk) in g.members.iter().enumerate() {
            let mut row = vec![Rat::zero(); 2 * b];
            row[pk] = Rat::one();
            for (j, &pj) in g.members.iter().enumerate() {
                row[b + pj] = -coupling[(k, j)].clone();
            }
            rows.push(row);
        }
    }
    mark(&mut blocks, BlockLabel::Gyrator, start, rows.len());

    // Scattering groups, appended verbatim: R(P+S)dq − (P−S)dφ = 0.
    let start = rows.len();
    for g in &graph.groups {
        let GroupKind::Scattering { impedance, s } = &g.kind else {
            continue;
        };
        for (k, _) in g.members.iter().enumerate() {
            let mut row = vec![Rat::zero(); 2 * b];
            for (j, &pj) in g.members.iter().enumerate() {
                let delta = if k == j { Rat::one() } else { Rat::zero() };
                row[pj] = impedance * (&delta + &s[(k, j)]);
                row[b + pj] = -(&delta - &s[(k, j)]);
            }
            rows.push(row);
        }
    }
    mark(&mut blocks, BlockLabel::Scattering, start, rows.len());

    PfaffSystem {
        f: Mat::from_rows(rows),
        blocks,
    }
}

/// True for branches whose variables are tied down by non-Kirchhoff
/// constraint rows; their columns take RREF pivots first so the kernel's free
/// variables fall on reactive/source branches (matching hand derivations).
fn is_constraint_element(graph: &CircuitGraph, branch: usize) -> bool {
    matches!(
        graph.branches[branch].kind,
        BranchKind::Resistor | BranchKind::TransformerPort | BranchKind::GyratorPort
    ) || graph.groups.iter().any(|g| {
        matches!(g.kind, GroupKind::Scattering { .. }) && g.members.contains(&branch)
    })
}

pub fn kernel_embedding(pfaff: &PfaffSystem, graph: &CircuitGraph) -> ReducedSpace {
    let b = graph.branches.len();
    // Pivot priority: constraint-element columns first (their variables are
    // tied down by constitutive rows), then the remaining flux columns, then
    // the remaining charge columns. Reactive charges thus become the free
    // variables, which reproduces the hand-derived loop-charge embeddings.
    let mut order: Vec<usize> = (0..2 * b).collect();
    order.sort_by_key(|&col| {
        let class = if is_constraint_element(graph, col % b) {
            0u8
        } else if col >= b {
            1
        } else {
            2
        };
        (class, col)
    });
    let (mut k, mut free_vars) = pfaff.f.kernel_with_free_vars(&order);
    // Present charge-defined coordinates before flux-defined ones, mirroring
    // the diag(F_Lᵀ, F_Cᵀ) layout of the pure-Kirchhoff kernel.
    let mut perm: Vec<usize> = (0..k.ncols()).collect();
    perm.sort_by_key(|&c| free_vars[c]);
    k = k.select_cols(&perm);
    free_vars = perm.iter().map(|&c| free_vars[c]).collect();

    let nonreciprocal = graph
        .groups
        .iter()
        .any(|g| !matches!(g.kind, GroupKind::Transformer { .. }));
    let mut coord_kind = Vec::new();
    for c in 0..k.ncols() {
        let has_q = (0..b).any(|r| !k[(r, c)].is_zero());
        let has_phi = (b..2 * b).any(|r| !k[(r, c)].is_zero());
        // Cross-support caused by resistive slaving alone keeps the defining
        // free variable's character; non-reciprocal couplings genuinely mix.
        coord_kind.push(match (has_q, has_phi) {
            (true, false) => CoordKind::ChargeLike,
            (false, true) => CoordKind::FluxLike,
            _ if !nonreciprocal && free_vars[c] < b => CoordKind::ChargeLike,
            _ if !nonreciprocal => CoordKind::FluxLike,
            _ => CoordKind::Mixed,
        });
    }
    let (mut nq, mut nphi, mut nz) = (0usize, 0usize, 0usize);
    let coord_names = coord_kind
        .iter()
        .map(|kind| match kind {
            CoordKind::ChargeLike => {
                nq += 1;
                format!("Q_{}", nq)
            }
            CoordKind::FluxLike => {
                nphi += 1;
                format!("Phi_{}", nphi)
            }
            CoordKind::Mixed => {
                nz += 1;
                format!("z_{}", nz)
            }
        })
        .collect();
    let coord_compact = vec![Compactness::Extended; k.ncols()];
    let mut space = ReducedSpace {
        k,
        coord_names,
        coord_kind,
        coord_compact,
        branch_order: graph.branches.iter().map(|br| br.id.clone()).collect(),
    };
    propagate_compactness(&mut space, graph);
    space
}

/// Conservative compactness propagation: a coordinate supported on exactly
/// one branch variable inherits that variable's compactness outright; touching
/// a compact variable among others only *may* make it compact.
pub fn propagate_compactness(space: &mut ReducedSpace, graph: &CircuitGraph) {
    let b = graph.branches.len();
    for c in 0..space.k.ncols() {
        let support: Vec<usize> = (0..2 * b)
            .filter(|&r| !space.k[(r, c)].is_zero())
            .collect();
        let touches_compact = support.iter().any(|&r| {
            let br = &graph.branches[r % b];
            if r < b {
                br.compact_charge
            } else {
                br.compact_flux
            }
        });
        space.coord_compact[c] = if !touches_compact {
            Compactness::Extended
        } else if support.len() == 1 {
            Compactness::Compact
        } else {
            Compactness::PossiblyCompact
        };
    }
}

/// Result of the Tellegen identity self-checks on an embedding.
#[derive(Clone, Debug, Default)]
pub struct TellegenReport {
    pub violations: Vec<String>,
}

impl TellegenReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Verifies the global identity `K_qᵀ K_φ = 0` and the local ones on the
/// transformer and gyrator branch sets. A violation means the assembly is
/// inconsistent and must abort the pipeline.
pub fn tellegen_check(space: &ReducedSpace, graph: &CircuitGraph) -> TellegenReport {
    let b = graph.branches.len();
    let kq = space.k.select_rows(&(0..b).collect::<Vec<_>>());
    let kphi = space.k.select_rows(&(b..2 * b).collect::<Vec<_>>());
    let mut report = TellegenReport::default();

    if !kq.transpose().mul(&kphi).is_zero() {
        report
            .violations
            .push("global Tellegen identity K_q' * K_phi != 0".into());
    }
    for (label, kinds) in [
        ("transformer", BranchKind::TransformerPort),
        ("gyrator", BranchKind::GyratorPort),
    ] {
        let idx: Vec<usize> = graph
            .branches
            .iter()
            .enumerate()
            .filter(|(_, br)| br.kind == kinds)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let kq_s = kq.select_rows(&idx);
        let kphi_s = kphi.select_rows(&idx);
        let sym = kq_s
            .transpose()
            .mul(&kphi_s)
            .add(&kphi_s.transpose().mul(&kq_s));
        if !sym.is_zero() {
            report
                .violations
                .push(format!("local Tellegen identity fails on the {} set", label));
        }
    }
    report
}

/// Projector onto a set of branches as a B×B diagonal 0/1 matrix.
pub fn branch_projector(graph: &CircuitGraph, pred: impl Fn(&BranchKind) -> bool) -> Mat {
    let b = graph.branches.len();
    let mut p = Mat::zeros(b, b);
    for (i, br) in graph.branches.iter().enumerate() {
        if pred(&br.kind) {
            p[(i, i)] = Rat::one();
        }
    }
    p
}

/// Human-oriented one-line description of the block structure.
pub fn describe_blocks(pfaff: &PfaffSystem) -> String {
    let parts: Vec<String> = pfaff
        .blocks
        .iter()
        .map(|(label, range)| format!("{:?}: rows {}..{}", label, range.start, range.end))
        .collect();
    parts.join(", ")
}

/// Pretty-printing helper for reporting K entries.
pub fn render_matrix(m: &Mat) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        out.push('[');
        for c in 0..m.ncols() {
            if c > 0 {
                out.push_str(", ");
            }
            out.push_str(&fmt_rat(&m[(r, c)]));
        }
        out.push_str("]\n");
    }
    out
}
