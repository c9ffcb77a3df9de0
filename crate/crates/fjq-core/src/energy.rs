//! Symbolic energy expressions.
//!
//! Every energy function the engine manipulates lives in one closed class:
//!
//! ```text
//!   E(x) = ½ xᵀ Q x + lᵀ x + c  +  Σ_k  c_k π^{p_k} · trig_k( π^{σ_k} (a_k·x + b_k) )
//! ```
//!
//! with all of `Q, l, c, c_k, a_k, b_k` exact rationals, `trig ∈ {cos, sin}`,
//! and optional single π factors so that Josephson/phase-slip energies with
//! `2π/Φ₀`-style arguments stay exact. The class is closed under addition,
//! scaling, partial differentiation, and affine substitution — which is
//! everything the reduction pipeline ever does to an energy — and it admits a
//! decidable zero test: by the Lindemann–Weierstrass/Niven family of results a
//! nonzero-coefficient trig term of non-degenerate argument never cancels a
//! rational, and degenerate (constant, π-rational) arguments are folded away
//! during canonicalization.
//!
//! Variables are indexed `0..nvars`. By convention the pipeline appends
//! "source symbols" (waveform values at time t) after the true coordinates, so
//! time-dependent couplings ride through substitutions with no special cases.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use num_traits::{One, Signed, Zero};

use crate::matrix::Mat;
use crate::rational::{fmt_rat, parse_rat, rat, rat_to_f64, Rat};

/// Affine form `a·x + b` with exact coefficients.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Affine {
    pub coeffs: Vec<Rat>,
    pub offset: Rat,
}

impl Affine {
    pub fn zero(nvars: usize) -> Self {
        Affine {
            coeffs: vec![Rat::zero(); nvars],
            offset: Rat::zero(),
        }
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut a = Affine::zero(nvars);
        a.coeffs[i] = Rat::one();
        a
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        let mut acc = rat_to_f64(&self.offset);
        for (c, xi) in self.coeffs.iter().zip(x) {
            if !c.is_zero() {
                acc += rat_to_f64(c) * xi;
            }
        }
        acc
    }

    /// Applies `x = M y + o` (M is `nvars_old x nvars_new`).
    fn substitute(&self, m: &Mat, o: &[Rat]) -> Affine {
        let mut coeffs = vec![Rat::zero(); m.ncols()];
        let mut offset = self.offset.clone();
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            for j in 0..m.ncols() {
                if !m[(i, j)].is_zero() {
                    coeffs[j] += c * &m[(i, j)];
                }
            }
            offset += c * &o[i];
        }
        Affine { coeffs, offset }
    }

    fn scale(&self, k: &Rat) -> Affine {
        Affine {
            coeffs: self.coeffs.iter().map(|c| c * k).collect(),
            offset: &self.offset * k,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum TrigKind {
    Cos,
    Sin,
}

/// One term `coeff · π^coeff_pi · trig( π^{arg_pi} (a·x + b) )`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrigTerm {
    pub coeff: Rat,
    pub coeff_pi: u32,
    pub kind: TrigKind,
    pub arg_pi: bool,
    pub arg: Affine,
}

impl TrigTerm {
    fn eval_f64(&self, x: &[f64]) -> f64 {
        let mut arg = self.arg.eval_f64(x);
        if self.arg_pi {
            arg *= core::f64::consts::PI;
        }
        let t = match self.kind {
            TrigKind::Cos => libm::cos(arg),
            TrigKind::Sin => libm::sin(arg),
        };
        rat_to_f64(&self.coeff) * libm::pow(core::f64::consts::PI, self.coeff_pi as f64) * t
    }
}

/// Canonical symbolic energy: quadratic form plus trigonometric terms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnergyExpr {
    nvars: usize,
    /// Symmetric matrix of the quadratic part `½ xᵀ Q x`.
    quad: Mat,
    lin: Vec<Rat>,
    constant: Rat,
    trig: Vec<TrigTerm>,
}

/// Rational bracketing of π, tight enough for every interval verdict here.
/// (355/113 overshoots π by ~2.7e-7; 333/106 undershoots by ~8.3e-5.)
pub const PI_LO: (i64, i64) = (333, 106);
pub const PI_HI: (i64, i64) = (355, 113);

impl EnergyExpr {
    pub fn zero(nvars: usize) -> Self {
        EnergyExpr {
            nvars,
            quad: Mat::zeros(nvars, nvars),
            lin: vec![Rat::zero(); nvars],
            constant: Rat::zero(),
            trig: Vec::new(),
        }
    }

    pub fn constant(nvars: usize, c: Rat) -> Self {
        let mut e = EnergyExpr::zero(nvars);
        e.constant = c;
        e
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = EnergyExpr::zero(nvars);
        e.lin[i] = Rat::one();
        e
    }

    pub fn from_affine(a: &Affine) -> Self {
        let mut e = EnergyExpr::zero(a.coeffs.len());
        e.lin = a.coeffs.clone();
        e.constant = a.offset.clone();
        e
    }

    /// `c · x_i · x_j` as a quadratic term.
    pub fn quad_term(nvars: usize, i: usize, j: usize, c: Rat) -> Self {
        let mut e = EnergyExpr::zero(nvars);
        if i == j {
            e.quad[(i, i)] = &c + &c;
        } else {
            e.quad[(i, j)] = c.clone();
            e.quad[(j, i)] = c;
        }
        e
    }

    /// `coeff · π^{coeff_pi} · trig(π^{arg_pi}(a·x+b))`.
    pub fn trig(coeff: Rat, coeff_pi: u32, kind: TrigKind, arg_pi: bool, arg: Affine) -> Self {
        let mut e = EnergyExpr::zero(arg.coeffs.len());
        e.trig.push(TrigTerm {
            coeff,
            coeff_pi,
            kind,
            arg_pi,
            arg,
        });
        e.canonicalize();
        e
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn quad_matrix(&self) -> &Mat {
        &self.quad
    }

    pub fn linear_part(&self) -> &[Rat] {
        &self.lin
    }

    pub fn constant_part(&self) -> &Rat {
        &self.constant
    }

    pub fn trig_terms(&self) -> &[TrigTerm] {
        &self.trig
    }

    pub fn add(&self, other: &EnergyExpr) -> EnergyExpr {
        assert_eq!(self.nvars, other.nvars, "variable count mismatch");
        let mut out = EnergyExpr {
            nvars: self.nvars,
            quad: self.quad.add(&other.quad),
            lin: self
                .lin
                .iter()
                .zip(&other.lin)
                .map(|(a, b)| a + b)
                .collect(),
            constant: &self.constant + &other.constant,
            trig: self
                .trig
                .iter()
                .chain(other.trig.iter())
                .cloned()
                .collect(),
        };
        out.canonicalize();
        out
    }

    pub fn scale(&self, k: &Rat) -> EnergyExpr {
        let mut out = EnergyExpr {
            nvars: self.nvars,
            quad: self.quad.scale(k),
            lin: self.lin.iter().map(|c| c * k).collect(),
            constant: &self.constant * k,
            trig: self
                .trig
                .iter()
                .map(|t| {
                    let mut t = t.clone();
                    t.coeff *= k;
                    t
                })
                .collect(),
        };
        out.canonicalize();
        out
    }

    pub fn sub(&self, other: &EnergyExpr) -> EnergyExpr {
        self.add(&other.scale(&-Rat::one()))
    }

    /// Product — defined only when the result stays in the class: at least one
    /// factor must be trig-free and of polynomial degree compatible with a
    /// total degree ≤ 2 and no (trig × non-constant) mixing.
    pub fn mul(&self, other: &EnergyExpr) -> Result<EnergyExpr, ExprError> {
        // Order so that `b` is the "simpler" factor if possible.
        let (a, b) = (self, other);
        if b.is_constant_expr() {
            return Ok(a.scale_by_const(b));
        }
        if a.is_constant_expr() {
            return Ok(b.scale_by_const(a));
        }
        if !a.trig.is_empty() || !b.trig.is_empty() {
            return Err(ExprError::OutsideClass(
                "product of a trigonometric term with a non-constant factor".into(),
            ));
        }
        if !a.quad.is_zero() || !b.quad.is_zero() {
            return Err(ExprError::OutsideClass(
                "polynomial degree above 2 in a product".into(),
            ));
        }
        // affine × affine → quadratic
        let mut out = EnergyExpr::zero(self.nvars);
        for i in 0..self.nvars {
            for j in 0..self.nvars {
                let q = &a.lin[i] * &b.lin[j] + &b.lin[i] * &a.lin[j];
                out.quad[(i, j)] = q;
            }
        }
        for i in 0..self.nvars {
            out.lin[i] = &a.lin[i] * &b.constant + &b.lin[i] * &a.constant;
        }
        out.constant = &a.constant * &b.constant;
        Ok(out)
    }

    pub fn pow(&self, n: u32) -> Result<EnergyExpr, ExprError> {
        match n {
            0 => Ok(EnergyExpr::constant(self.nvars, Rat::one())),
            1 => Ok(self.clone()),
            2 => self.mul(self),
            _ => Err(ExprError::OutsideClass(format!(
                "power {} exceeds the quadratic class",
                n
            ))),
        }
    }

    fn is_constant_expr(&self) -> bool {
        self.quad.is_zero() && self.lin.iter().all(|c| c.is_zero()) && self.trig.is_empty()
    }

    fn scale_by_const(&self, c: &EnergyExpr) -> EnergyExpr {
        self.scale(&c.constant)
    }

    /// Decidable structural zero test (after canonicalization).
    pub fn is_zero(&self) -> bool {
        self.quad.is_zero()
            && self.lin.iter().all(|c| c.is_zero())
            && self.constant.is_zero()
            && self.trig.is_empty()
    }

    /// True when no trig term involves variable `i` (the variable enters at
    /// most quadratically).
    pub fn is_polynomial_in(&self, i: usize) -> bool {
        self.trig.iter().all(|t| t.arg.coeffs[i].is_zero())
    }

    pub fn depends_on(&self, i: usize) -> bool {
        !self.lin[i].is_zero()
            || (0..self.nvars).any(|j| !self.quad[(i, j)].is_zero())
            || self.trig.iter().any(|t| !t.arg.coeffs[i].is_zero())
    }

    /// ∂E/∂x_i, exactly.
    pub fn gradient_component(&self, i: usize) -> EnergyExpr {
        let mut out = EnergyExpr::zero(self.nvars);
        // ∂(½xᵀQx)/∂x_i = (Qx)_i
        out.lin = (0..self.nvars).map(|j| self.quad[(i, j)].clone()).collect();
        out.constant = self.lin[i].clone();
        for t in &self.trig {
            let a = &t.arg.coeffs[i];
            if a.is_zero() {
                continue;
            }
            let (kind, sign) = match t.kind {
                TrigKind::Cos => (TrigKind::Sin, -Rat::one()),
                TrigKind::Sin => (TrigKind::Cos, Rat::one()),
            };
            out.trig.push(TrigTerm {
                coeff: &t.coeff * a * sign,
                coeff_pi: t.coeff_pi + u32::from(t.arg_pi),
                kind,
                arg_pi: t.arg_pi,
                arg: t.arg.clone(),
            });
        }
        out.canonicalize();
        out
    }

    pub fn gradient(&self) -> Vec<EnergyExpr> {
        (0..self.nvars).map(|i| self.gradient_component(i)).collect()
    }

    pub fn hessian_entry(&self, i: usize, j: usize) -> EnergyExpr {
        self.gradient_component(i).gradient_component(j)
    }

    /// Directional derivative `w·∇E` for a rational vector `w`.
    pub fn directional_derivative(&self, w: &[Rat]) -> EnergyExpr {
        let mut out = EnergyExpr::zero(self.nvars);
        for (i, wi) in w.iter().enumerate() {
            if !wi.is_zero() {
                out = out.add(&self.gradient_component(i).scale(wi));
            }
        }
        out
    }

    /// Applies the substitution `x = M y + o`; returns the energy over `y`.
    pub fn substitute(&self, m: &Mat, offsets: &[Rat]) -> EnergyExpr {
        assert_eq!(m.nrows(), self.nvars, "substitution shape mismatch");
        assert_eq!(offsets.len(), self.nvars);
        let new_n = m.ncols();
        // ½(My+o)ᵀQ(My+o) = ½yᵀ(MᵀQM)y + (oᵀQM)y + ½oᵀQo
        let qm = self.quad.mul(m);
        let new_quad = m.transpose().mul(&qm);
        let oq = self.quad.mul_vec(offsets);
        let new_lin: Vec<Rat> = (0..new_n)
            .map(|j| {
                let mut acc = Rat::zero();
                for i in 0..self.nvars {
                    if !oq[i].is_zero() {
                        acc += &oq[i] * &m[(i, j)];
                    }
                    if !self.lin[i].is_zero() {
                        acc += &self.lin[i] * &m[(i, j)];
                    }
                }
                acc
            })
            .collect();
        let mut new_const = self.constant.clone();
        for i in 0..self.nvars {
            if !offsets[i].is_zero() {
                new_const += &self.lin[i] * &offsets[i];
                new_const += &oq[i] * &offsets[i] * rat(1, 2);
            }
        }
        let mut out = EnergyExpr {
            nvars: new_n,
            quad: new_quad,
            lin: new_lin,
            constant: new_const,
            trig: self
                .trig
                .iter()
                .map(|t| TrigTerm {
                    coeff: t.coeff.clone(),
                    coeff_pi: t.coeff_pi,
                    kind: t.kind,
                    arg_pi: t.arg_pi,
                    arg: t.arg.substitute(m, offsets),
                })
                .collect(),
        };
        out.canonicalize();
        out
    }

    /// Substitutes one variable by an affine form of the *same* variable set
    /// (the replaced variable must not appear on the right-hand side); the
    /// variable remains in the indexing but the result no longer depends on it.
    pub fn substitute_var(&self, i: usize, rhs: &Affine) -> EnergyExpr {
        assert!(rhs.coeffs[i].is_zero(), "self-referential substitution");
        let mut m = Mat::identity(self.nvars);
        let mut o = vec![Rat::zero(); self.nvars];
        for j in 0..self.nvars {
            m[(i, j)] = rhs.coeffs[j].clone();
        }
        m[(i, i)] = Rat::zero();
        o[i] = rhs.offset.clone();
        self.substitute(&m, &o)
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nvars);
        let mut acc = rat_to_f64(&self.constant);
        for i in 0..self.nvars {
            if !self.lin[i].is_zero() {
                acc += rat_to_f64(&self.lin[i]) * x[i];
            }
            for j in 0..self.nvars {
                if !self.quad[(i, j)].is_zero() {
                    acc += 0.5 * rat_to_f64(&self.quad[(i, j)]) * x[i] * x[j];
                }
            }
        }
        for t in &self.trig {
            acc += t.eval_f64(x);
        }
        acc
    }

    /// Certified rational interval containing the range of the expression,
    /// valid when the polynomial part is constant (trig terms bounded by ±1,
    /// π bracketed rationally). Returns `None` if a variable enters the
    /// polynomial part, making the range unbounded.
    pub fn certified_range(&self) -> Option<(Rat, Rat)> {
        if !self.quad.is_zero() || self.lin.iter().any(|c| !c.is_zero()) {
            return None;
        }
        let pi_hi = rat(PI_HI.0, PI_HI.1);
        let mut lo = self.constant.clone();
        let mut hi = self.constant.clone();
        for t in &self.trig {
            // |coeff|·π^p magnitude-bounded with the upper π bracket.
            let mut mag = t.coeff.abs();
            for _ in 0..t.coeff_pi {
                mag *= &pi_hi;
            }
            lo -= &mag;
            hi += &mag;
        }
        Some((lo, hi))
    }

    /// Renders the canonical display form, with variable names supplied.
    pub fn display(&self, names: &[&str]) -> String {
        let mut parts: Vec<String> = Vec::new();
        for i in 0..self.nvars {
            for j in i..self.nvars {
                let q = if i == j {
                    self.quad[(i, i)].clone().div_two()
                } else {
                    self.quad[(i, j)].clone()
                };
                if q.is_zero() {
                    continue;
                }
                let mono = if i == j {
                    format!("{}^2", names[i])
                } else {
                    format!("{}*{}", names[i], names[j])
                };
                parts.push(coeff_times(&q, &mono));
            }
        }
        for (i, c) in self.lin.iter().enumerate() {
            if !c.is_zero() {
                parts.push(coeff_times(c, names[i]));
            }
        }
        if !self.constant.is_zero() {
            parts.push(fmt_rat(&self.constant));
        }
        for t in &self.trig {
            let mut arg_parts: Vec<String> = Vec::new();
            for (i, c) in t.arg.coeffs.iter().enumerate() {
                if !c.is_zero() {
                    arg_parts.push(coeff_times(c, names[i]));
                }
            }
            if !t.arg.offset.is_zero() {
                arg_parts.push(fmt_rat(&t.arg.offset));
            }
            let mut arg = join_sum(&arg_parts);
            if arg.is_empty() {
                arg = "0".to_string();
            }
            if t.arg_pi {
                arg = format!("pi*({})", arg);
            }
            let f = match t.kind {
                TrigKind::Cos => "cos",
                TrigKind::Sin => "sin",
            };
            let pi_fac = match t.coeff_pi {
                0 => String::new(),
                1 => "pi*".to_string(),
                p => format!("pi^{}*", p),
            };
            let coeff = if t.coeff.is_one() && pi_fac.is_empty() {
                String::new()
            } else {
                format!("{}*{}", fmt_rat(&t.coeff), pi_fac)
            };
            parts.push(format!("{}{}({})", coeff, f, arg));
        }
        if parts.is_empty() {
            "0".to_string()
        } else {
            join_sum(&parts)
        }
    }

    /// Sorts and merges trig terms, folds degenerate arguments, drops zeros.
    fn canonicalize(&mut self) {
        let mut kept: Vec<TrigTerm> = Vec::new();
        for mut t in core::mem::take(&mut self.trig) {
            if t.coeff.is_zero() {
                continue;
            }
            // Sign normalization: make the leading arg entry positive.
            let lead = t
                .arg
                .coeffs
                .iter()
                .find(|c| !c.is_zero())
                .cloned()
                .unwrap_or_else(|| t.arg.offset.clone());
            if lead.is_negative() {
                t.arg = t.arg.scale(&-Rat::one());
                if t.kind == TrigKind::Sin {
                    t.coeff = -t.coeff;
                }
            }
            if t.arg.is_constant() {
                // Exact folds: sin/cos of half-integer multiples of π, and
                // sin(0); other constant arguments stay symbolic (their value
                // is irrational and must not be floated).
                let twice = &t.arg.offset + &t.arg.offset;
                if t.arg_pi && twice.is_integer() {
                    let half_steps: num_bigint::BigInt = twice.to_integer();
                    let q = (half_steps.clone() % 4i32 + 4i32) % 4i32;
                    let q: i32 = q.try_into().unwrap();
                    let val = match (t.kind, q) {
                        (TrigKind::Cos, 0) => 1,
                        (TrigKind::Cos, 2) => -1,
                        (TrigKind::Cos, _) => 0,
                        (TrigKind::Sin, 1) => 1,
                        (TrigKind::Sin, 3) => -1,
                        (TrigKind::Sin, _) => 0,
                    };
                    if t.coeff_pi == 0 {
                        self.constant += &t.coeff * rat(val.into(), 1);
                        continue;
                    }
                    if val == 0 {
                        continue;
                    }
                    // Nonzero value times π^p: keep symbolic (rare; arises
                    // only from fully collapsed Josephson arguments).
                } else if !t.arg_pi && t.arg.offset.is_zero() {
                    match t.kind {
                        TrigKind::Sin => continue,
                        TrigKind::Cos => {
                            if t.coeff_pi == 0 {
                                self.constant += &t.coeff;
                                continue;
                            }
                        }
                    }
                }
            }
            kept.push(t);
        }
        kept.sort_by(|a, b| trig_key(a).cmp(&trig_key(b)));
        let mut merged: Vec<TrigTerm> = Vec::new();
        for t in kept {
            if let Some(last) = merged.last_mut() {
                if last.kind == t.kind
                    && last.arg_pi == t.arg_pi
                    && last.coeff_pi == t.coeff_pi
                    && last.arg == t.arg
                {
                    last.coeff += &t.coeff;
                    continue;
                }
            }
            merged.push(t);
        }
        merged.retain(|t| !t.coeff.is_zero());
        self.trig = merged;
    }

    /// Appends `extra` fresh variables (used to adjoin source symbols).
    pub fn extend_vars(&self, extra: usize) -> EnergyExpr {
        let new_n = self.nvars + extra;
        let mut m = Mat::zeros(self.nvars, new_n);
        for i in 0..self.nvars {
            m[(i, i)] = Rat::one();
        }
        self.substitute(&m, &vec![Rat::zero(); self.nvars])
    }
}

fn trig_key(t: &TrigTerm) -> (TrigKind, bool, u32, Vec<String>, String) {
    (
        t.kind,
        t.arg_pi,
        t.coeff_pi,
        t.arg.coeffs.iter().map(fmt_rat).collect(),
        fmt_rat(&t.arg.offset),
    )
}

fn coeff_times(c: &Rat, mono: &str) -> String {
    if c.is_one() {
        mono.to_string()
    } else if (-c.clone()).is_one() {
        format!("-{}", mono)
    } else {
        format!("{}*{}", fmt_rat(c), mono)
    }
}

fn join_sum(parts: &[String]) -> String {
    let mut out = String::new();
    for (i, p) in parts.iter().enumerate() {
        if i == 0 {
            out.push_str(p);
        } else if let Some(stripped) = p.strip_prefix('-') {
            out.push_str(" - ");
            out.push_str(stripped);
        } else {
            out.push_str(" + ");
            out.push_str(p);
        }
    }
    out
}

trait DivTwo {
    fn div_two(self) -> Rat;
}
impl DivTwo for Rat {
    fn div_two(self) -> Rat {
        self * rat(1, 2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExprError {
    OutsideClass(String),
    Parse { position: usize, message: String },
}

impl core::fmt::Display for ExprError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ExprError::OutsideClass(m) => write!(f, "expression outside supported class: {}", m),
            ExprError::Parse { position, message } => {
                write!(f, "parse error at offset {}: {}", position, message)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Branch-energy constructors (keyword forms of the netlist).
// ---------------------------------------------------------------------------

/// `q²/2C` in the branch's own variable.
pub fn capacitor_energy(c: &Rat) -> EnergyExpr {
    EnergyExpr::quad_term(1, 0, 0, c.recip() * rat(1, 2))
}

/// `φ²/2L`.
pub fn inductor_energy(l: &Rat) -> EnergyExpr {
    EnergyExpr::quad_term(1, 0, 0, l.recip() * rat(1, 2))
}

/// `−E_J·cos(2πφ/Φ₀)` with rational `Φ₀` kept exact via a π-tagged argument.
pub fn josephson_energy(ej: &Rat, phi0: &Rat) -> EnergyExpr {
    let a = rat(2, 1) / phi0.clone();
    EnergyExpr::trig(
        -ej.clone(),
        0,
        TrigKind::Cos,
        true,
        Affine {
            coeffs: vec![a],
            offset: Rat::zero(),
        },
    )
}

/// `−E_P·cos(2πq/2e) = −E_P·cos(π q/e)`.
pub fn phase_slip_energy(ep: &Rat, qe: &Rat) -> EnergyExpr {
    EnergyExpr::trig(
        -ep.clone(),
        0,
        TrigKind::Cos,
        true,
        Affine {
            coeffs: vec![qe.recip()],
            offset: Rat::zero(),
        },
    )
}

// ---------------------------------------------------------------------------
// Text parser for `energy expr=` fields: sums of products of rationals, `x`,
// `x^2`, and `cos`/`sin` of affine arguments (with an optional `pi` factor
// inside the argument).
// ---------------------------------------------------------------------------

/// Parses a single-variable energy expression such as
/// `1/2*x^2 + -1*cos(x)` or `-3*cos(pi*(2*x+1))`.
pub fn parse_energy_expr(text: &str) -> Result<EnergyExpr, ExprError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let e = p.parse_sum()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, message: &str) -> ExprError {
        ExprError::Parse {
            position: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, b: u8) -> bool {
        if self.peek() == Some(b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn parse_sum(&mut self) -> Result<EnergyExpr, ExprError> {
        let mut acc = self.parse_product()?;
        loop {
            if self.eat(b'+') {
                acc = acc.add(&self.parse_product()?);
            } else if self.eat(b'-') {
                acc = acc.sub(&self.parse_product()?);
            } else {
                return Ok(acc);
            }
        }
    }

    fn parse_product(&mut self) -> Result<EnergyExpr, ExprError> {
        let mut acc = self.parse_power()?;
        while self.eat(b'*') {
            let rhs = self.parse_power()?;
            acc = acc.mul(&rhs)?;
        }
        Ok(acc)
    }

    fn parse_power(&mut self) -> Result<EnergyExpr, ExprError> {
        let base = self.parse_atom()?;
        if self.eat(b'^') {
            let n = self.parse_integer()?;
            return base.pow(n);
        }
        Ok(base)
    }

    fn parse_integer(&mut self) -> Result<u32, ExprError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected an integer exponent"));
        }
        core::str::from_utf8(&self.src[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| self.err("exponent out of range"))
    }

    fn parse_atom(&mut self) -> Result<EnergyExpr, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.parse_sum()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(e)
            }
            Some(b'-') => {
                self.pos += 1;
                Ok(self.parse_power()?.scale(&-Rat::one()))
            }
            Some(b'x') if !self.ident_continues(1) => {
                self.pos += 1;
                Ok(EnergyExpr::var(1, 0))
            }
            Some(c) if c.is_ascii_digit() => {
                let r = self.parse_rational()?;
                Ok(EnergyExpr::constant(1, r))
            }
            Some(_) => {
                if self.keyword("cos") {
                    self.parse_trig(TrigKind::Cos)
                } else if self.keyword("sin") {
                    self.parse_trig(TrigKind::Sin)
                } else {
                    Err(self.err("expected a number, 'x', 'cos', or 'sin'"))
                }
            }
            None => Err(self.err("unexpected end of expression")),
        }
    }

    fn ident_continues(&self, offset: usize) -> bool {
        self.src
            .get(self.pos + offset)
            .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_')
    }

    fn keyword(&mut self, kw: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(kw.as_bytes())
            && !self
                .src
                .get(self.pos + kw.len())
                .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_')
        {
            self.pos += kw.len();
            true
        } else {
            false
        }
    }

    fn parse_rational(&mut self) -> Result<Rat, ExprError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_digit()
                || self.src[self.pos] == b'/'
                || self.src[self.pos] == b'.')
        {
            self.pos += 1;
        }
        let token = core::str::from_utf8(&self.src[start..self.pos]).unwrap();
        parse_rat(token).map_err(|_| self.err("malformed rational"))
    }

    /// Parses `cos(...)`/`sin(...)` whose body must be affine in `x`, with an
    /// optional single `pi*` factor applied to the whole argument.
    fn parse_trig(&mut self, kind: TrigKind) -> Result<EnergyExpr, ExprError> {
        if !self.eat(b'(') {
            return Err(self.err("expected '(' after cos/sin"));
        }
        let arg_pi = if self.keyword("pi") {
            if !self.eat(b'*') {
                return Err(self.err("expected '*' after pi"));
            }
            true
        } else {
            false
        };
        let body = self.parse_sum()?;
        if !self.eat(b')') {
            return Err(self.err("expected ')'"));
        }
        if !body.quad.is_zero() || !body.trig.is_empty() {
            return Err(ExprError::OutsideClass(
                "trig argument must be affine in x".into(),
            ));
        }
        Ok(EnergyExpr::trig(
            Rat::one(),
            0,
            kind,
            arg_pi,
            Affine {
                coeffs: body.lin.clone(),
                offset: body.constant.clone(),
            },
        ))
    }
}
