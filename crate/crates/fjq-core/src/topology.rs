//! Graph topology: incidence, fundamental cutset and loop matrices.
//!
//! The cutset matrix F_C is the reduced row echelon form of the incidence
//! matrix with its identically-zero rows discarded; its pivot columns are the
//! spanning tree (one per connected component), the free columns the chords.
//! The loop matrix F_L is the canonical kernel basis of F_C written in rows,
//! so each row is the fundamental loop of one chord and F_L F_Cᵀ = 0 holds by
//! construction. Everything is exact, so these identities are equalities, not
//! tolerances.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::{One, Zero};

use crate::circuit::{CircuitGraph, DiagCode, Diagnostic};
use crate::matrix::Mat;
use crate::rational::Rat;

#[derive(Clone, Debug)]
pub struct TopologyData {
    /// N×B incidence: +1 where the branch leaves the node, −1 where it enters.
    pub incidence: Mat,
    /// Fundamental cutset matrix, (N − N_C) × B.
    pub cutset: Mat,
    /// Fundamental loop matrix, (B − N + N_C) × B.
    pub loop_matrix: Mat,
    /// Pivot branch indices of the RREF (a spanning forest).
    pub tree_branches: Vec<usize>,
    /// Free branch indices (one fundamental loop each).
    pub chords: Vec<usize>,
    /// Connected-component count N_C.
    pub components: usize,
}

pub fn incidence_matrix(graph: &CircuitGraph) -> Mat {
    let mut a = Mat::zeros(graph.nodes.len(), graph.branches.len());
    for (b, br) in graph.branches.iter().enumerate() {
        a[(br.tail, b)] = Rat::one();
        a[(br.head, b)] = -Rat::one();
    }
    a
}

fn component_count(graph: &CircuitGraph) -> usize {
    // Union-find over nodes; isolated nodes count as components too.
    let mut parent: Vec<usize> = (0..graph.nodes.len()).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for br in &graph.branches {
        let (a, b) = (find(&mut parent, br.tail), find(&mut parent, br.head));
        if a != b {
            parent[a] = b;
        }
    }
    (0..graph.nodes.len())
        .filter(|&i| find(&mut parent, i) == i)
        .count()
}

pub fn fundamental_matrices(graph: &CircuitGraph) -> TopologyData {
    let incidence = incidence_matrix(graph);
    let (rref, pivots) = incidence.rref();
    let cutset = rref.select_rows(&(0..pivots.len()).collect::<Vec<_>>());
    let tree_branches = pivots.clone();
    let chords: Vec<usize> = (0..graph.branches.len())
        .filter(|c| !tree_branches.contains(c))
        .collect();
    // Loop rows: canonical kernel basis of F_C, one row per chord, with a
    // unit entry at that chord.
    let loop_matrix = cutset.kernel_basis().transpose();
    let components = component_count(graph);
    debug_assert_eq!(cutset.nrows(), graph.nodes.len() - components);
    TopologyData {
        incidence,
        cutset,
        loop_matrix,
        tree_branches,
        chords,
        components,
    }
}

/// Expresses a signed branch loop in the fundamental (chord) loop basis.
///
/// The fundamental loops are the rows of F_L, one per chord, each carrying a
/// unit entry at its own chord; a cycle's coefficient on basis element `i` is
/// therefore just its signed multiplicity on chord `i`. Reconstruction is then
/// verified exactly; failure means the input was not a cycle.
pub fn loop_in_chord_basis(
    topo: &TopologyData,
    loop_branches: &[(usize, bool)],
) -> Result<Vec<Rat>, Diagnostic> {
    let b = topo.incidence.ncols();
    let mut l = vec![Rat::zero(); b];
    for &(bi, along) in loop_branches {
        if bi >= b {
            return Err(Diagnostic::new(
                DiagCode::NotACycle,
                format!("loop references unknown branch index {}", bi),
            ));
        }
        if along {
            l[bi] += Rat::one();
        } else {
            l[bi] -= Rat::one();
        }
    }
    let coeffs: Vec<Rat> = topo.chords.iter().map(|&c| l[c].clone()).collect();
    // Σ_i coeff_i · (row i of F_L) must reproduce l exactly.
    let mut recon = vec![Rat::zero(); b];
    for (i, coeff) in coeffs.iter().enumerate() {
        if coeff.is_zero() {
            continue;
        }
        for j in 0..b {
            if !topo.loop_matrix[(i, j)].is_zero() {
                recon[j] += coeff * &topo.loop_matrix[(i, j)];
            }
        }
    }
    if recon != l {
        return Err(Diagnostic::new(
            DiagCode::NotACycle,
            "signed branch list is outside the cycle space".into(),
        ));
    }
    Ok(coeffs)
}
