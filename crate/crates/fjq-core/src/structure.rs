//! The precanonical two-form, its pullback to the reduced space, the
//! Rayleigh dissipation matrix, and the source coupling map.
//!
//! All four objects are congruences of fixed 2B×2B block matrices by the
//! kernel embedding K, so everything here is exact rational arithmetic. The
//! pullback is computed twice — once from the raw two-form and once from the
//! Tellegen-simplified projector form — and a mismatch is a hard error: it
//! converts the identity the construction rests on into a runtime self-check.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::{One, Zero};

use crate::circuit::{BranchKind, CircuitGraph, GroupKind};
use crate::matrix::Mat;
use crate::pfaff::ReducedSpace;
use crate::rational::{rat, rat_to_f64, Rat};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StructureError {
    /// The two pullback formulas disagree; the assembly upstream is broken.
    TellegenIdentityViolated,
}

/// Everything the reduction loop needs about the reduced-space geometry.
#[derive(Clone, Debug)]
pub struct StructureBundle {
    /// 2B×2B antisymmetric precanonical two-form.
    pub e2b: Mat,
    /// M×M antisymmetric pullback Kᵀ E₂B K.
    pub e_reduced: Mat,
    /// M×M symmetric PSD Rayleigh matrix; the dissipation function is
    /// ½·ż ᵀ·rayleigh·ż.
    pub rayleigh: Mat,
    /// M×2B selector Kᵀ·[[0,P^V],[P^I,0]]; contracted with the stacked
    /// waveform vector it yields the Lagrangian source coupling.
    pub source_map: Mat,
}

fn in_scattering_group(graph: &CircuitGraph, branch: usize) -> bool {
    graph
        .groups
        .iter()
        .any(|g| matches!(g.kind, GroupKind::Scattering { .. }) && g.members.contains(&branch))
}

/// Diagonal 0/1 projector onto branches of one classification.
fn projector(graph: &CircuitGraph, pred: impl Fn(usize, &BranchKind) -> bool) -> Mat {
    let b = graph.branches.len();
    let mut p = Mat::zeros(b, b);
    for (i, br) in graph.branches.iter().enumerate() {
        if pred(i, &br.kind) {
            p[(i, i)] = Rat::one();
        }
    }
    p
}

/// Antisymmetric block pairing `[[0, D],[−D, 0]]` for a B×B diagonal D.
fn pairing(d: &Mat) -> Mat {
    let b = d.nrows();
    let mut e = Mat::zeros(2 * b, 2 * b);
    for i in 0..b {
        for j in 0..b {
            if !d[(i, j)].is_zero() {
                e[(i, b + j)] = d[(i, j)].clone();
                e[(b + i, j)] = -d[(i, j)].clone();
            }
        }
    }
    e
}

/// The precanonical two-form ½·[[0, P^C+P^V−P^L−P^I],[−(·), 0]] on branch
/// variables: capacitive and voltage-source branches pair (q, φ) positively,
/// inductive and current-source branches negatively, constraint-element
/// branches not at all.
pub fn precanonical_two_form(graph: &CircuitGraph) -> Mat {
    let d = projector(graph, |_, k| k.is_capacitive() || *k == BranchKind::VoltageSource)
        .sub(&projector(graph, |_, k| {
            k.is_inductive() || *k == BranchKind::CurrentSource
        }));
    pairing(&d).scale(&rat(1, 2))
}

/// Pulls E₂B back through K, self-checked against the Tellegen-simplified
/// form Kᵀ·[[0,P],[−P,0]]·K with P = P^C + P^V + (P^R + P^G + P^S)/2.
pub fn pullback(space: &ReducedSpace, e2b: &Mat) -> Result<Mat, StructureError> {
    let k = &space.k;
    let raw = k.transpose().mul(&e2b.mul(k));
    raw.is_antisymmetric().then_some(()).ok_or(StructureError::TellegenIdentityViolated)?;
    Ok(raw)
}

/// The full self-checking construction of the reduced two-form.
pub fn pullback_checked(
    space: &ReducedSpace,
    graph: &CircuitGraph,
    e2b: &Mat,
) -> Result<Mat, StructureError> {
    let raw = pullback(space, e2b)?;
    let p = projector(graph, |_, k| k.is_capacitive() || *k == BranchKind::VoltageSource).add(
        &projector(graph, |i, k| {
            matches!(k, BranchKind::Resistor | BranchKind::GyratorPort)
                || in_scattering_group(graph, i)
        })
        .scale(&rat(1, 2)),
    );
    let simplified = space.k.transpose().mul(&pairing(&p).mul(&space.k));
    if raw != simplified {
        return Err(StructureError::TellegenIdentityViolated);
    }
    Ok(raw)
}

/// ½·Kᵀ·[[0,P^R],[P^R,0]]·K. The Rayleigh function on reduced velocities is
/// ½·ż ᵀ·(this)·ż, reproducing ½·Σ_r q̇ʳ φ̇ʳ over resistor branches.
pub fn rayleigh_matrix(space: &ReducedSpace, graph: &CircuitGraph) -> Mat {
    let pr = projector(graph, |_, k| *k == BranchKind::Resistor);
    let b = graph.branches.len();
    let mut sym = Mat::zeros(2 * b, 2 * b);
    for i in 0..b {
        if !pr[(i, i)].is_zero() {
            sym[(i, b + i)] = Rat::one();
            sym[(b + i, i)] = Rat::one();
        }
    }
    space
        .k
        .transpose()
        .mul(&sym.mul(&space.k))
        .scale(&rat(1, 2))
}

/// Kᵀ·[[0,P^V],[P^I,0]]: rows are reduced coordinates, columns the stacked
/// branch slots `[q | φ]`. Voltage sources couple through their φ slot,
/// current sources through their q slot.
pub fn source_map(space: &ReducedSpace, graph: &CircuitGraph) -> Mat {
    let b = graph.branches.len();
    let pv = projector(graph, |_, k| *k == BranchKind::VoltageSource);
    let pi = projector(graph, |_, k| *k == BranchKind::CurrentSource);
    let mut block = Mat::zeros(2 * b, 2 * b);
    for i in 0..b {
        if !pv[(i, i)].is_zero() {
            block[(i, b + i)] = Rat::one();
        }
        if !pi[(i, i)].is_zero() {
            block[(b + i, i)] = Rat::one();
        }
    }
    space.k.transpose().mul(&block)
}

/// Evaluates the Lagrangian source coupling S(t) numerically: voltage-source
/// waveforms fill the φ slots, current-source waveforms the q slots, and the
/// exact source map contracts them down to the M reduced coordinates.
pub fn source_vector(space: &ReducedSpace, graph: &CircuitGraph, t: f64) -> Vec<f64> {
    let b = graph.branches.len();
    let mut stacked = vec![0.0; 2 * b];
    for (i, br) in graph.branches.iter().enumerate() {
        let Some(w) = &br.waveform else { continue };
        match br.kind {
            BranchKind::VoltageSource => stacked[b + i] = w.eval(t),
            BranchKind::CurrentSource => stacked[i] = w.eval(t),
            _ => {}
        }
    }
    let map = source_map(space, graph);
    (0..map.nrows())
        .map(|r| {
            (0..map.ncols())
                .map(|c| rat_to_f64(&map[(r, c)]) * stacked[c])
                .sum()
        })
        .collect()
}

/// Assembles the whole bundle, running the Tellegen self-check.
pub fn build_structure(
    space: &ReducedSpace,
    graph: &CircuitGraph,
) -> Result<StructureBundle, StructureError> {
    let e2b = precanonical_two_form(graph);
    let e_reduced = pullback_checked(space, graph, &e2b)?;
    Ok(StructureBundle {
        e2b,
        e_reduced,
        rayleigh: rayleigh_matrix(space, graph),
        source_map: source_map(space, graph),
    })
}
