//! Total-energy assembly and extremum solving for constraint elimination.
//!
//! `total_energy` writes H(z) = Σ h_b((Kz+ζ₀)_b) over the reactive branches.
//! `solve_extremum` eliminates zero-mode coordinates from ∂H/∂w = 0: the
//! trig-free ones jointly and exactly by rational elimination, the
//! trig-bearing ones per coordinate as implicit equations with an interval
//! invertibility verdict on the second derivative.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::{Signed, Zero};

use crate::circuit::CircuitGraph;
use crate::energy::{Affine, EnergyExpr};
use crate::matrix::Mat;
use crate::pfaff::ReducedSpace;
use crate::rational::Rat;

/// H as an expression over the M reduced coordinates, plus the integration
/// constants it was built with.
#[derive(Clone, Debug)]
pub struct TotalEnergy {
    pub h: EnergyExpr,
    pub offsets: Vec<Rat>,
}

/// Sums every reactive branch's stored energy function, evaluated at the
/// branch's own variable written through the kernel embedding: capacitive
/// branches read their charge row of K, inductive ones their flux row.
/// Sources and constraint elements carry no energy.
pub fn total_energy(graph: &CircuitGraph, space: &ReducedSpace, offsets: &[Rat]) -> TotalEnergy {
    let b = graph.branches.len();
    assert_eq!(offsets.len(), 2 * b, "offsets are per branch variable");
    let m = space.dim();
    let mut h = EnergyExpr::zero(m);
    for (i, br) in graph.branches.iter().enumerate() {
        let Some(energy) = &br.energy else { continue };
        let row = if br.kind.is_capacitive() {
            i
        } else if br.kind.is_inductive() {
            b + i
        } else {
            continue;
        };
        let k_row = Mat::from_rows(vec![space.k.row(row).to_vec()]);
        h = h.add(&energy.substitute(&k_row, &[offsets[row].clone()]));
    }
    TotalEnergy {
        h,
        offsets: offsets.to_vec(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Invertible,
    Inconclusive,
}

/// One nonlinear constraint ∂H/∂w = 0 kept in implicit form.
#[derive(Clone, Debug)]
pub struct ImplicitEq {
    pub var: usize,
    pub equation: EnergyExpr,
    pub second_derivative: EnergyExpr,
    pub verdict: Verdict,
    /// For Inconclusive verdicts: the second derivative normalized so its
    /// constant term is 1 — the factor whose sign change blocks inversion.
    pub witness: Option<EnergyExpr>,
    /// Other unsolved constraint variables this equation couples to.
    pub couples: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct ExtremumSolution {
    /// Affine eliminations w = a(ξ), self-reference-free.
    pub solved: Vec<(usize, Affine)>,
    /// Constraint variables the energy does not pin down (flat directions).
    pub free: Vec<usize>,
    /// Per-coordinate implicit equations for the trig-bearing variables.
    pub implicit: Vec<ImplicitEq>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExtremumError {
    /// A combination of the extremum equations involves none of the requested
    /// variables yet is not identically zero: the energy is effectively
    /// affine along some constraint direction and the equation degenerates
    /// into a relation among the surviving coordinates.
    LinearDependentOnVar { detail: String },
}

/// Solves ∂H/∂w = 0 for the listed coordinates.
///
/// Variables outside `vars` (including any trailing source symbols) are
/// treated as parameters and may appear in the solutions.
pub fn solve_extremum(u: &EnergyExpr, vars: &[usize]) -> Result<ExtremumSolution, ExtremumError> {
    assert!(!vars.is_empty(), "no variables to solve for");
    let n = u.nvars();
    let (linear_vars, trig_vars): (Vec<usize>, Vec<usize>) =
        vars.iter().partition(|&&v| u.is_polynomial_in(v));

    let mut out = ExtremumSolution::default();

    // Joint Gauss–Jordan elimination of the trig-free block. Each gradient
    // row is affine; pivots are taken only in the requested columns so every
    // other variable stays parametric on the right-hand side.
    let mut rows: Vec<(Vec<Rat>, Rat)> = linear_vars
        .iter()
        .map(|&v| {
            let g = u.gradient_component(v);
            debug_assert!(g.trig_terms().is_empty() && g.quad_matrix().is_zero());
            (g.linear_part().to_vec(), g.constant_part().clone())
        })
        .collect();
    let mut pivots: Vec<(usize, usize)> = Vec::new(); // (row, var)
    for &v in &linear_vars {
        let taken: Vec<usize> = pivots.iter().map(|&(r, _)| r).collect();
        let Some(r) = (0..rows.len()).find(|r| !taken.contains(r) && !rows[*r].0[v].is_zero())
        else {
            continue;
        };
        let inv = rows[r].0[v].clone().recip();
        for c in rows[r].0.iter_mut() {
            *c *= &inv;
        }
        rows[r].1 *= &inv;
        let (pivot_coeffs, pivot_const) = rows[r].clone();
        for (r2, row) in rows.iter_mut().enumerate() {
            if r2 == r || row.0[v].is_zero() {
                continue;
            }
            let f = row.0[v].clone();
            for (c, pc) in row.0.iter_mut().zip(&pivot_coeffs) {
                *c -= &f * pc;
            }
            row.1 -= &f * &pivot_const;
        }
        pivots.push((r, v));
    }
    // Residual rows must be identically zero, or the system degenerates.
    let pivot_rows: Vec<usize> = pivots.iter().map(|&(r, _)| r).collect();
    for (r, row) in rows.iter().enumerate() {
        if pivot_rows.contains(&r) {
            continue;
        }
        if row.0.iter().any(|c| !c.is_zero()) || !row.1.is_zero() {
            return Err(ExtremumError::LinearDependentOnVar {
                detail: String::from(
                    "an extremum equation is independent of every constraint variable",
                ),
            });
        }
    }
    for &(r, v) in &pivots {
        let mut a = Affine::zero(n);
        for (j, c) in rows[r].0.iter().enumerate() {
            if j != v && !c.is_zero() {
                a.coeffs[j] = -c.clone();
            }
        }
        a.offset = -rows[r].1.clone();
        out.solved.push((v, a));
    }
    let solved_vars: Vec<usize> = pivots.iter().map(|&(_, v)| v).collect();
    out.free = linear_vars
        .iter()
        .copied()
        .filter(|v| !solved_vars.contains(v))
        .collect();

    // Trig-bearing variables: apply the affine eliminations first, then keep
    // each remaining equation implicit with an interval verdict.
    let mut reduced = u.clone();
    for (v, a) in &out.solved {
        reduced = reduced.substitute_var(*v, a);
    }
    for &v in &trig_vars {
        let equation = reduced.gradient_component(v);
        let couples: Vec<usize> = trig_vars
            .iter()
            .copied()
            .filter(|&v2| v2 != v && equation.depends_on(v2))
            .collect();
        let second = reduced.hessian_entry(v, v);
        let (verdict, witness) = match second.certified_range() {
            Some((lo, _)) if lo.is_positive() => (Verdict::Invertible, None),
            Some((_, hi)) if hi.is_negative() => (Verdict::Invertible, None),
            _ => {
                let c = second.constant_part().clone();
                let w = if c.is_zero() {
                    second.clone()
                } else {
                    second.scale(&c.recip())
                };
                (Verdict::Inconclusive, Some(w))
            }
        };
        out.implicit.push(ImplicitEq {
            var: v,
            equation,
            second_derivative: second,
            verdict,
            witness,
            couples,
        });
    }
    Ok(out)
}

/// Checks that the affine solutions really extremize: substituting them back
/// must annihilate every solved gradient component. Used as a round-1
/// integrability assertion by the reduction loop.
pub fn verify_extremum(u: &EnergyExpr, sol: &ExtremumSolution) -> bool {
    let mut reduced = u.clone();
    for (v, a) in &sol.solved {
        reduced = reduced.substitute_var(*v, a);
    }
    sol.solved
        .iter()
        .all(|(v, _)| reduced.gradient_component(*v).is_zero())
}

/// Human-readable label for an implicit verdict, used in reports.
pub fn verdict_label(v: Verdict) -> String {
    match v {
        Verdict::Invertible => format!("Invertible"),
        Verdict::Inconclusive => format!("Inconclusive"),
    }
}
