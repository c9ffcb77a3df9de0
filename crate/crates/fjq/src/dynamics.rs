//! Fixed-step numerical integration of reduced models and of the full
//! (round-0) constrained system, with conservation monitors.
//!
//! The reduced equations of motion are `(ω − M)·ż = ∇H(z, s(t))` where ω is
//! the final two-form, M the Rayleigh matrix, and the source symbols are
//! evaluated from their waveforms each step. Implicit coordinates (retained
//! roots of invertible constraints) are resolved by guarded Newton iteration
//! before every gradient evaluation, and their velocities follow from
//! differentiating the constraint along the flow.
//!
//! Everything exact is converted to floating point once at setup; the
//! integrators themselves are plain RK4 and implicit midpoint.

use fjq_core::circuit::SourceWaveform;
use fjq_core::energy::EnergyExpr;
use fjq_core::rational::rat_to_f64;
use fjq_core::reduction::HamiltonianModel;
use fjq_core::{Mat, Rat};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Rk4,
    ImplicitMidpoint,
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub t_end: f64,
    pub dt: f64,
    pub method: Method,
    /// Named initial coordinate values; unnamed coordinates start at zero.
    pub initial: Vec<(String, f64)>,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl SimConfig {
    pub fn new(t_end: f64, dt: f64) -> SimConfig {
        SimConfig {
            t_end,
            dt,
            method: Method::Rk4,
            initial: Vec::new(),
            newton_tol: 1e-12,
            newton_max_iter: 50,
        }
    }

    pub fn with_initial(mut self, name: &str, value: f64) -> SimConfig {
        self.initial.push((name.to_string(), value));
        self
    }

    pub fn with_method(mut self, method: Method) -> SimConfig {
        self.method = method;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DynError {
    /// ω − M is exactly singular on the non-implicit block.
    SingularKineticForm,
    NewtonDivergence { t: f64 },
    /// The implicit constraint's second derivative fell below 1e−9 in
    /// magnitude: the trajectory is approaching a rank-change locus where
    /// the implicit velocity diverges. Physical singularity, not numerical.
    BifurcationProximity { t: f64 },
    /// The full-system oracle handles linear constitutive relations only.
    NonlinearConstraintUnsupported,
    UnknownCoordinate(String),
}

impl std::fmt::Display for DynError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DynError::SingularKineticForm => write!(f, "two-form minus Rayleigh is singular"),
            DynError::NewtonDivergence { t } => {
                write!(f, "Newton iteration diverged at t = {}", t)
            }
            DynError::BifurcationProximity { t } => write!(
                f,
                "implicit constraint near a rank-change locus at t = {}",
                t
            ),
            DynError::NonlinearConstraintUnsupported => {
                write!(f, "full-system oracle supports linear constraints only")
            }
            DynError::UnknownCoordinate(n) => write!(f, "unknown coordinate '{}'", n),
        }
    }
}
impl std::error::Error for DynError {}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub names: Vec<String>,
    pub times: Vec<f64>,
    /// One state row per recorded time.
    pub states: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
    /// Instantaneous Rayleigh power 2𝓕 = żᵀMż.
    pub rayleigh_power: Vec<f64>,
    /// Cumulative ∫2𝓕 dτ, integrated alongside the state.
    pub dissipated: Vec<f64>,
    /// Max |∂H/∂w| over implicit coordinates (zero-mode constraint residual
    /// for the oracle), after resolution.
    pub constraint_residual: Vec<f64>,
}

impl Trajectory {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(self.states.iter().map(|row| row[i]).collect())
    }
}

/// CSV rendering: time, coordinates, then the monitor columns.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::from("t");
    for n in &traj.names {
        out.push(',');
        out.push_str(n);
    }
    out.push_str(",energy,rayleigh_power,dissipated,constraint_residual\n");
    for (i, t) in traj.times.iter().enumerate() {
        out.push_str(&format!("{:.12e}", t));
        for v in &traj.states[i] {
            out.push_str(&format!(",{:.12e}", v));
        }
        out.push_str(&format!(
            ",{:.12e},{:.12e},{:.12e},{:.12e}\n",
            traj.energy[i], traj.rayleigh_power[i], traj.dissipated[i],
            traj.constraint_residual[i]
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Reduced-model system
// ---------------------------------------------------------------------------

fn mat_sub(a: &Mat, b: &Mat) -> Mat {
    let mut out = a.clone();
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            out[(r, c)] = &a[(r, c)] - &b[(r, c)];
        }
    }
    out
}

fn select_square(m: &Mat, idx: &[usize]) -> Mat {
    m.select_rows(idx).select_cols(idx)
}

struct ReducedSystem {
    dim: usize,
    grad: Vec<EnergyExpr>,
    hamiltonian: EnergyExpr,
    /// Indices of the ordinary (two-form governed) coordinates.
    explicit: Vec<usize>,
    implicit: Vec<usize>,
    /// Exact inverse of (ω − M) on the explicit block, as floats.
    a_inv: Vec<Vec<f64>>,
    rayleigh: Vec<Vec<f64>>,
    /// Per implicit coordinate: constraint g = ∂H/∂w, its derivative
    /// ∂²H/∂w², and the cross Hessian entries used for the velocity chain
    /// rule (over all dim + ns variables).
    constraints: Vec<(EnergyExpr, EnergyExpr, Vec<EnergyExpr>)>,
    sources: Vec<SourceWaveform>,
    source_rates: Vec<SourceWaveform>,
    newton_tol: f64,
    newton_max_iter: usize,
}

impl ReducedSystem {
    fn new(model: &HamiltonianModel, cfg: &SimConfig) -> Result<ReducedSystem, DynError> {
        let dim = model.dim();
        let implicit: Vec<usize> = model.implicit.iter().map(|ic| ic.index).collect();
        let explicit: Vec<usize> = (0..dim).filter(|i| !implicit.contains(i)).collect();
        let a = mat_sub(&model.two_form, &model.rayleigh);
        let a_inv = select_square(&a, &explicit)
            .inverse()
            .ok_or(DynError::SingularKineticForm)?
            .to_f64();
        let total = dim + model.num_sources();
        let grad = model.hamiltonian.gradient();
        debug_assert_eq!(grad.len(), total);
        let constraints = implicit
            .iter()
            .map(|&w| {
                let g = model.hamiltonian.gradient_component(w);
                let gw = model.hamiltonian.hessian_entry(w, w);
                let cross = (0..total)
                    .map(|j| model.hamiltonian.hessian_entry(w, j))
                    .collect();
                (g, gw, cross)
            })
            .collect();
        Ok(ReducedSystem {
            dim,
            grad,
            hamiltonian: model.hamiltonian.clone(),
            explicit,
            implicit,
            a_inv,
            rayleigh: model.rayleigh.to_f64(),
            constraints,
            sources: model.sources.iter().map(|(_, w)| w.clone()).collect(),
            source_rates: model.sources.iter().map(|(_, w)| w.derivative()).collect(),
            newton_tol: cfg.newton_tol,
            newton_max_iter: cfg.newton_max_iter,
        })
    }

    fn full_point(&self, z: &[f64], t: f64) -> Vec<f64> {
        let mut point = z.to_vec();
        point.extend(self.sources.iter().map(|w| w.eval(t)));
        point
    }

    /// Resolves implicit coordinates in place on the full point.
    fn project(&self, point: &mut [f64], t: f64) -> Result<(), DynError> {
        for (k, &w) in self.implicit.iter().enumerate() {
            let (g, gw, _) = &self.constraints[k];
            let mut converged = false;
            for _ in 0..self.newton_max_iter {
                let gv = g.eval_f64(point);
                let gpv = gw.eval_f64(point);
                if gpv.abs() < 1e-9 {
                    return Err(DynError::BifurcationProximity { t });
                }
                if gv.abs() <= self.newton_tol * (1.0 + point[w].abs() * gpv.abs()) {
                    converged = true;
                    break;
                }
                point[w] -= gv / gpv;
            }
            if !converged {
                return Err(DynError::NewtonDivergence { t });
            }
        }
        Ok(())
    }

    /// ż and the instantaneous Rayleigh power, with implicit coordinates
    /// projected onto their constraint first.
    fn field(&self, z: &[f64], t: f64) -> Result<(Vec<f64>, f64, Vec<f64>), DynError> {
        let mut point = self.full_point(z, t);
        self.project(&mut point, t)?;
        let mut zdot = vec![0.0; self.dim];
        for (row, &i) in self.explicit.iter().enumerate() {
            let mut acc = 0.0;
            for (col, &j) in self.explicit.iter().enumerate() {
                acc += self.a_inv[row][col] * self.grad[j].eval_f64(&point);
            }
            zdot[i] = acc;
        }
        // Implicit velocities from d/dt (∂H/∂w) = 0 along the flow.
        let s_rates: Vec<f64> = self.source_rates.iter().map(|w| w.eval(t)).collect();
        for (k, &w) in self.implicit.iter().enumerate() {
            let (_, gw, cross) = &self.constraints[k];
            let gpv = gw.eval_f64(&point);
            if gpv.abs() < 1e-9 {
                return Err(DynError::BifurcationProximity { t });
            }
            let mut acc = 0.0;
            for &j in &self.explicit {
                acc += cross[j].eval_f64(&point) * zdot[j];
            }
            for (m, rate) in s_rates.iter().enumerate() {
                acc += cross[self.dim + m].eval_f64(&point) * rate;
            }
            zdot[w] = -acc / gpv;
        }
        let mut power = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                power += zdot[i] * self.rayleigh[i][j] * zdot[j];
            }
        }
        Ok((zdot, power, point))
    }
}

fn initial_state(names: &[String], cfg: &SimConfig) -> Result<Vec<f64>, DynError> {
    let mut z = vec![0.0; names.len()];
    for (name, value) in &cfg.initial {
        let i = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| DynError::UnknownCoordinate(name.clone()))?;
        z[i] = *value;
    }
    Ok(z)
}

/// Equations of motion of the reduced model at one state: returns ż over the
/// model coordinates (implicit coordinates resolved internally).
pub fn vector_field(
    model: &HamiltonianModel,
    state: &[f64],
    t: f64,
) -> Result<Vec<f64>, DynError> {
    let cfg = SimConfig::new(1.0, 1.0);
    let sys = ReducedSystem::new(model, &cfg)?;
    Ok(sys.field(state, t)?.0)
}

/// Fixed-step integration with energy, Rayleigh-power, cumulative
/// dissipation, and constraint-residual monitors.
pub fn integrate(model: &HamiltonianModel, cfg: &SimConfig) -> Result<Trajectory, DynError> {
    let sys = ReducedSystem::new(model, cfg)?;
    let z0 = initial_state(&model.coord_names, cfg)?;
    run_integration(
        sys,
        z0,
        model.coord_names.clone(),
        cfg,
    )
}

fn run_integration(
    sys: ReducedSystem,
    mut z: Vec<f64>,
    names: Vec<String>,
    cfg: &SimConfig,
) -> Result<Trajectory, DynError> {
    assert!(cfg.dt > 0.0 && cfg.t_end > 0.0, "dt and t_end must be positive");
    let steps = (cfg.t_end / cfg.dt).round().max(1.0) as usize;
    let mut traj = Trajectory {
        names,
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        energy: Vec::with_capacity(steps + 1),
        rayleigh_power: Vec::with_capacity(steps + 1),
        dissipated: Vec::with_capacity(steps + 1),
        constraint_residual: Vec::with_capacity(steps + 1),
    };
    // Start on the constraint manifold.
    {
        let mut point = sys.full_point(&z, 0.0);
        sys.project(&mut point, 0.0)?;
        z.copy_from_slice(&point[..sys.dim]);
    }
    let mut dissipated = 0.0;
    let record = |traj: &mut Trajectory,
                  sys: &ReducedSystem,
                  z: &[f64],
                  t: f64,
                  dissipated: f64|
     -> Result<(), DynError> {
        let (_, power, point) = sys.field(z, t)?;
        traj.times.push(t);
        traj.states.push(point[..sys.dim].to_vec());
        traj.energy.push(sys.hamiltonian.eval_f64(&point));
        traj.rayleigh_power.push(power);
        traj.dissipated.push(dissipated);
        let mut resid: f64 = 0.0;
        for (g, _, _) in &sys.constraints {
            resid = resid.max(g.eval_f64(&point).abs());
        }
        traj.constraint_residual.push(resid);
        Ok(())
    };
    record(&mut traj, &sys, &z, 0.0, dissipated)?;

    // Augmented state: coordinates plus the cumulative dissipation integral.
    let f = |y: &[f64], t: f64| -> Result<Vec<f64>, DynError> {
        let (zdot, power, _) = sys.field(&y[..sys.dim], t)?;
        let mut dy = zdot;
        dy.push(power);
        Ok(dy)
    };
    let mut y: Vec<f64> = z.clone();
    y.push(0.0);
    for n in 0..steps {
        let t = n as f64 * cfg.dt;
        y = match cfg.method {
            Method::Rk4 => rk4_step(&f, &y, t, cfg.dt)?,
            Method::ImplicitMidpoint => {
                implicit_midpoint_step(&f, &y, t, cfg.dt, cfg.newton_tol, cfg.newton_max_iter)?
            }
        };
        z.copy_from_slice(&y[..sys.dim]);
        dissipated = y[sys.dim];
        record(&mut traj, &sys, &z, (n + 1) as f64 * cfg.dt, dissipated)?;
        // Keep the stored state consistent with the projected one.
        let mut point = sys.full_point(&z, (n + 1) as f64 * cfg.dt);
        sys.project(&mut point, (n + 1) as f64 * cfg.dt)?;
        y[..sys.dim].copy_from_slice(&point[..sys.dim]);
    }
    Ok(traj)
}

fn rk4_step<F>(f: &F, y: &[f64], t: f64, h: f64) -> Result<Vec<f64>, DynError>
where
    F: Fn(&[f64], f64) -> Result<Vec<f64>, DynError>,
{
    let add = |a: &[f64], b: &[f64], s: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(x, k)| x + s * k).collect()
    };
    let k1 = f(y, t)?;
    let k2 = f(&add(y, &k1, h / 2.0), t + h / 2.0)?;
    let k3 = f(&add(y, &k2, h / 2.0), t + h / 2.0)?;
    let k4 = f(&add(y, &k3, h), t + h)?;
    Ok(y.iter()
        .enumerate()
        .map(|(i, x)| x + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

fn implicit_midpoint_step<F>(
    f: &F,
    y: &[f64],
    t: f64,
    h: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, DynError>
where
    F: Fn(&[f64], f64) -> Result<Vec<f64>, DynError>,
{
    let mut next = {
        // Explicit Euler predictor.
        let k = f(y, t)?;
        y.iter().zip(&k).map(|(x, k)| x + h * k).collect::<Vec<_>>()
    };
    for _ in 0..max_iter {
        let mid: Vec<f64> = y.iter().zip(&next).map(|(a, b)| 0.5 * (a + b)).collect();
        let k = f(&mid, t + h / 2.0)?;
        let candidate: Vec<f64> = y.iter().zip(&k).map(|(x, k)| x + h * k).collect();
        let delta: f64 = candidate
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale: f64 = candidate.iter().map(|v| v.abs()).fold(1.0, f64::max);
        next = candidate;
        if delta <= tol * scale {
            return Ok(next);
        }
    }
    Err(DynError::NewtonDivergence { t })
}

// ---------------------------------------------------------------------------
// Full-system oracle
// ---------------------------------------------------------------------------

/// Integrates the round-0 constrained system directly: the constitutive flow
/// `(E₀ − M₀)·ż = ∇U(z, s(t))` over the kernel-embedded coordinates, with
/// each zero mode of `E₀ − M₀` replaced by its differentiated constraint row
/// (or a frozen-gauge row when the constraint is identically satisfied). The
/// initial state is the reduced initial condition lifted through the model's
/// embedding, so the two integrations can be compared coordinate by
/// coordinate.
pub fn full_system_oracle(
    model: &HamiltonianModel,
    cfg: &SimConfig,
) -> Result<Trajectory, DynError> {
    let init = &model.initial;
    if !init.potential.trig_terms().is_empty() {
        return Err(DynError::NonlinearConstraintUnsupported);
    }
    let m0 = init.coord_names.len();
    let ns = model.num_sources();
    let q = init.potential.quad_matrix(); // (m0+ns)², ∇U = Q·x + lin
    let a0 = mat_sub(&init.e_reduced, &init.rayleigh);
    let modes = a0.transpose().kernel_basis(); // columns w with wᵀA₀ = 0

    // Assemble the square system B·ż = rhs(z, t) exactly.
    let mut rows: Vec<Vec<Rat>> = Vec::new();
    // Row provenance: Left(i) = flow row i; Right(k) = constraint/gauge row.
    enum RowKind {
        Flow(usize),
        Constraint(usize),
        Gauge,
    }
    let mut kinds: Vec<RowKind> = Vec::new();
    for i in 0..m0 {
        rows.push((0..m0).map(|j| a0[(i, j)].clone()).collect());
        kinds.push(RowKind::Flow(i));
    }
    let mut constraint_rows: Vec<Vec<Rat>> = Vec::new(); // wᵀ over coords
    let mut constraint_src: Vec<Vec<Rat>> = Vec::new(); // wᵀ·Q source block
    for k in 0..modes.ncols() {
        let w: Vec<Rat> = (0..m0).map(|r| modes[(r, k)].clone()).collect();
        let coeff: Vec<Rat> = (0..m0)
            .map(|j| {
                (0..m0)
                    .map(|r| &w[r] * &q[(r, j)])
                    .fold(Rat::default(), |a, b| a + b)
            })
            .collect();
        let src: Vec<Rat> = (0..ns)
            .map(|j| {
                (0..m0)
                    .map(|r| &w[r] * &q[(r, m0 + j)])
                    .fold(Rat::default(), |a, b| a + b)
            })
            .collect();
        let lin_part: Rat = (0..m0)
            .map(|r| &w[r] * &init.potential.linear_part()[r])
            .fold(Rat::default(), |a, b| a + b);
        let is_gauge = coeff.iter().all(|c| c == &Rat::default())
            && src.iter().all(|c| c == &Rat::default())
            && lin_part == Rat::default();
        if is_gauge {
            // Pure gauge direction: freeze its velocity.
            rows.push(w.clone());
            kinds.push(RowKind::Gauge);
        } else {
            rows.push(coeff.clone());
            kinds.push(RowKind::Constraint(constraint_rows.len()));
            constraint_rows.push(w);
            constraint_src.push(src);
        }
    }
    // Greedily select m0 independent rows, flow rows last so the
    // differentiated constraints always displace the rows they replace.
    let all = Mat::from_rows(rows.clone());
    let mut selected: Vec<usize> = Vec::new();
    let mut order: Vec<usize> = (m0..all.nrows()).collect();
    order.extend(0..m0);
    for r in order {
        if selected.len() == m0 {
            break;
        }
        let mut trial = selected.clone();
        trial.push(r);
        trial.sort_unstable();
        if all.select_rows(&trial).rank() == trial.len() {
            selected = trial;
        }
    }
    if selected.len() != m0 {
        return Err(DynError::SingularKineticForm);
    }
    let b = all.select_rows(&selected);
    let b_inv = b.inverse().ok_or(DynError::SingularKineticForm)?.to_f64();

    let qf = q.to_f64();
    let lin: Vec<f64> = init.potential.linear_part().iter().map(rat_to_f64).collect();
    let sources: Vec<SourceWaveform> = model.sources.iter().map(|(_, w)| w.clone()).collect();
    let source_rates: Vec<SourceWaveform> = sources.iter().map(|w| w.derivative()).collect();
    let csrc: Vec<Vec<f64>> = constraint_src
        .iter()
        .map(|row| row.iter().map(rat_to_f64).collect())
        .collect();
    let cro: Vec<Vec<f64>> = constraint_rows
        .iter()
        .map(|row| row.iter().map(rat_to_f64).collect())
        .collect();
    let ray0 = init.rayleigh.to_f64();

    let grad_at = |z: &[f64], s: &[f64], i: usize| -> f64 {
        let mut acc = lin[i];
        for j in 0..m0 {
            acc += qf[i][j] * z[j];
        }
        for j in 0..ns {
            acc += qf[i][m0 + j] * s[j];
        }
        acc
    };
    let field = |z: &[f64], t: f64| -> Result<Vec<f64>, DynError> {
        let s: Vec<f64> = sources.iter().map(|w| w.eval(t)).collect();
        let sdot: Vec<f64> = source_rates.iter().map(|w| w.eval(t)).collect();
        let rhs: Vec<f64> = selected
            .iter()
            .map(|&r| match kinds[r] {
                RowKind::Flow(i) => grad_at(z, &s, i),
                RowKind::Constraint(k) => {
                    -(0..ns).map(|j| csrc[k][j] * sdot[j]).sum::<f64>()
                }
                RowKind::Gauge => 0.0,
            })
            .collect();
        Ok((0..m0)
            .map(|i| (0..m0).map(|j| b_inv[i][j] * rhs[j]).sum())
            .collect())
    };

    // Lift the reduced initial condition; it satisfies the constraints by
    // construction (the eliminations solved exactly these equations).
    let x0 = initial_state(&model.coord_names, cfg)?;
    let s0: Vec<f64> = sources.iter().map(|w| w.eval(0.0)).collect();
    let mut z = model.embedding.apply_f64(&x0, &s0);

    let steps = (cfg.t_end / cfg.dt).round().max(1.0) as usize;
    let mut traj = Trajectory {
        names: init.coord_names.clone(),
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        energy: Vec::with_capacity(steps + 1),
        rayleigh_power: Vec::with_capacity(steps + 1),
        dissipated: Vec::with_capacity(steps + 1),
        constraint_residual: Vec::with_capacity(steps + 1),
    };
    let mut dissipated = 0.0;
    let record = |traj: &mut Trajectory, z: &[f64], t: f64, dissipated: f64| {
        let s: Vec<f64> = sources.iter().map(|w| w.eval(t)).collect();
        let mut point = z.to_vec();
        point.extend(s.iter().copied());
        traj.times.push(t);
        traj.states.push(z.to_vec());
        traj.energy.push(init.potential.eval_f64(&point));
        let zdot = field(z, t).unwrap_or_else(|_| vec![0.0; m0]);
        let mut power = 0.0;
        for i in 0..m0 {
            for j in 0..m0 {
                power += zdot[i] * ray0[i][j] * zdot[j];
            }
        }
        traj.rayleigh_power.push(power);
        traj.dissipated.push(dissipated);
        let mut resid: f64 = 0.0;
        for w in &cro {
            let g: f64 = (0..m0).map(|i| w[i] * grad_at(z, &s, i)).sum();
            resid = resid.max(g.abs());
        }
        traj.constraint_residual.push(resid);
    };
    record(&mut traj, &z, 0.0, dissipated);
    let f_aug = |y: &[f64], t: f64| -> Result<Vec<f64>, DynError> {
        let mut dy = field(&y[..m0], t)?;
        let mut power = 0.0;
        for i in 0..m0 {
            for j in 0..m0 {
                power += dy[i] * ray0[i][j] * dy[j];
            }
        }
        dy.push(power);
        Ok(dy)
    };
    let mut y = z.clone();
    y.push(0.0);
    for n in 0..steps {
        let t = n as f64 * cfg.dt;
        y = match cfg.method {
            Method::Rk4 => rk4_step(&f_aug, &y, t, cfg.dt)?,
            Method::ImplicitMidpoint => {
                implicit_midpoint_step(&f_aug, &y, t, cfg.dt, cfg.newton_tol, cfg.newton_max_iter)?
            }
        };
        z = y[..m0].to_vec();
        dissipated = y[m0];
        record(&mut traj, &z, (n + 1) as f64 * cfg.dt, dissipated);
    }
    Ok(traj)
}

/// Lifts a reduced trajectory through the model's embedding, producing the
/// round-0 coordinate series the oracle integrates directly.
pub fn lift_trajectory(model: &HamiltonianModel, traj: &Trajectory) -> Vec<Vec<f64>> {
    traj.times
        .iter()
        .zip(&traj.states)
        .map(|(&t, state)| {
            let s: Vec<f64> = model.sources.iter().map(|(_, w)| w.eval(t)).collect();
            model.embedding.apply_f64(state, &s)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Slaved-pair analysis
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlavedPairReport {
    /// (position, momentum) name pairs with zero Poisson feedback: both
    /// velocities are functions of the source waveforms (and possibly other
    /// coordinates' constants) but not of the pair itself.
    pub pairs: Vec<(String, String)>,
}

/// A canonical pair is slaved when one of its members evolves under the
/// sources alone: some gradient component of the pair depends only on source
/// symbols (and on at least one of them). That member can be integrated in
/// closed form and substituted, dragging its conjugate along passively, so
/// the pair contributes no independent degree of freedom to the driven
/// dynamics.
pub fn slaved_pair_report(model: &HamiltonianModel) -> SlavedPairReport {
    let mut report = SlavedPairReport::default();
    if model.sources.is_empty() {
        return report;
    }
    let p = model.pairs.len();
    let dim = model.dim();
    for k in 0..p {
        let (x, mom) = (k, p + k);
        let coord_free =
            |g: &EnergyExpr| (0..dim).all(|j| !g.depends_on(j));
        let source_coupled = |g: &EnergyExpr| {
            (dim..dim + model.num_sources()).any(|j| g.depends_on(j))
        };
        let slaved = [x, mom].iter().any(|&i| {
            let g = model.hamiltonian.gradient_component(i);
            coord_free(&g) && source_coupled(&g)
        });
        if slaved {
            report.pairs.push(model.pairs[k].clone());
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use fjq_core::circuit::{Branch, CircuitGraph};
    use fjq_core::energy::{Affine, TrigKind};
    use fjq_core::rational::{rat, rat_i};
    use fjq_core::reduction::run_reduction;

    fn lc_graph() -> CircuitGraph {
        let mut g = CircuitGraph::new(&["0", "1"]);
        g.branches.push(Branch::capacitor("C", 0, 1, rat_i(2)));
        g.branches.push(Branch::inductor("L", 1, 0, rat_i(3)));
        g
    }

    fn rlc_graph() -> CircuitGraph {
        let mut g = CircuitGraph::new(&["0", "1"]);
        g.branches.push(Branch::capacitor("C", 0, 1, rat_i(2)));
        g.branches.push(Branch::inductor("L", 0, 1, rat_i(3)));
        g.branches.push(Branch::resistor("R", 0, 1, rat_i(7)));
        g
    }

    fn star_graph() -> CircuitGraph {
        let mut g = CircuitGraph::new(&["center", "1", "2", "3"]);
        g.branches.push(Branch::inductor("L1", 1, 0, rat_i(7)));
        g.branches.push(Branch::inductor("L2", 2, 0, rat_i(11)));
        g.branches.push(Branch::inductor("L3", 3, 0, rat_i(13)));
        g.branches.push(Branch::capacitor("C1", 1, 2, rat_i(2)));
        g.branches.push(Branch::capacitor("C2", 2, 3, rat_i(3)));
        g.branches.push(Branch::capacitor("C3", 3, 1, rat_i(5)));
        g
    }

    fn driven_lc_graph() -> CircuitGraph {
        let mut g = CircuitGraph::new(&["0", "1", "2"]);
        g.branches.push(Branch::voltage_source(
            "V",
            0,
            1,
            SourceWaveform::Sinusoid {
                amplitude: rat_i(5),
                omega: rat_i(1),
                phase: rat(1, 3),
            },
        ));
        g.branches.push(Branch::capacitor("C", 1, 2, rat_i(2)));
        g.branches.push(Branch::inductor("L", 2, 0, rat_i(3)));
        g
    }

    fn cosine_loop_graph() -> CircuitGraph {
        // Series C-L-cosine loop with steepness ratio E*L = 1/2, so the
        // cosine coordinate is retained as an invertible implicit root.
        let mut g = CircuitGraph::new(&["0", "1", "2"]);
        g.branches.push(Branch::capacitor("C", 0, 1, rat_i(1)));
        g.branches.push(Branch::inductor("L", 1, 2, rat_i(1)));
        let cos_energy = fjq_core::energy::EnergyExpr::trig(
            -rat(1, 2),
            0,
            TrigKind::Cos,
            false,
            Affine::var(1, 0),
        );
        g.branches
            .push(Branch::inductive_energy("J", 2, 0, cos_energy));
        g
    }

    fn energy_drift(traj: &Trajectory) -> f64 {
        let e0 = traj.energy[0];
        let scale = traj
            .energy
            .iter()
            .map(|e| e.abs())
            .fold(1.0_f64, f64::max);
        traj.energy
            .iter()
            .map(|e| (e - e0).abs())
            .fold(0.0_f64, f64::max)
            / scale
    }

    #[test]
    fn lc_oscillation_conserves_energy_and_returns_after_one_period() {
        let model = run_reduction(&lc_graph()).unwrap();
        let period = 2.0 * std::f64::consts::PI * 6.0_f64.sqrt();
        let cfg = SimConfig::new(10.0 * period, period / 1000.0)
            .with_initial(&model.coord_names[0].clone(), 1.0);
        let traj = integrate(&model, &cfg).unwrap();
        assert!(energy_drift(&traj) < 1e-8, "drift {}", energy_drift(&traj));
        // After exactly one period the state recurs.
        let x = traj.column(&model.coord_names[0]).unwrap();
        assert!((x[1000] - x[0]).abs() < 1e-5, "x(T) = {}", x[1000]);
        // No dissipation anywhere.
        assert!(traj.rayleigh_power.iter().all(|p| p.abs() < 1e-12));
        assert!(traj.dissipated.last().unwrap().abs() < 1e-10);
    }

    #[test]
    fn implicit_midpoint_preserves_the_quadratic_energy() {
        let model = run_reduction(&lc_graph()).unwrap();
        let cfg = SimConfig::new(50.0, 0.05)
            .with_initial(&model.coord_names[0].clone(), 1.0)
            .with_method(Method::ImplicitMidpoint);
        let traj = integrate(&model, &cfg).unwrap();
        // The midpoint rule conserves quadratic invariants up to the
        // fixed-point tolerance even at this coarse step.
        assert!(energy_drift(&traj) < 1e-6, "drift {}", energy_drift(&traj));
    }

    #[test]
    fn rlc_energy_balance_accounts_for_dissipation() {
        let model = run_reduction(&rlc_graph()).unwrap();
        let cfg = SimConfig::new(10.0, 0.001)
            .with_initial(&model.coord_names[0].clone(), 1.0);
        let traj = integrate(&model, &cfg).unwrap();
        let e0 = traj.energy[0];
        assert!(e0 > 0.0);
        // Energy decays and H + ∫2F stays constant.
        assert!(*traj.energy.last().unwrap() < e0);
        for i in 0..traj.times.len() {
            let balance = traj.energy[i] + traj.dissipated[i] - e0;
            assert!(
                balance.abs() < 1e-6 * e0.max(1.0),
                "balance violated at step {}: {}",
                i,
                balance
            );
        }
        assert!(traj.rayleigh_power.iter().all(|p| *p >= -1e-12));
    }

    #[test]
    fn oracle_matches_the_reduced_flow_for_the_rlc_loop() {
        let model = run_reduction(&rlc_graph()).unwrap();
        let cfg = SimConfig::new(5.0, 0.001)
            .with_initial(&model.coord_names[0].clone(), 1.0);
        let reduced = integrate(&model, &cfg).unwrap();
        let oracle = full_system_oracle(&model, &cfg).unwrap();
        let lifted = lift_trajectory(&model, &reduced);
        let mut scale = 1e-30_f64;
        for row in &oracle.states {
            for v in row {
                scale = scale.max(v.abs());
            }
        }
        let mut sup = 0.0_f64;
        for (a, b) in lifted.iter().zip(&oracle.states) {
            for (x, y) in a.iter().zip(b) {
                sup = sup.max((x - y).abs());
            }
        }
        assert!(sup / scale < 1e-5, "sup-norm mismatch {}", sup / scale);
    }

    #[test]
    fn oracle_matches_the_reduced_flow_for_the_star() {
        let model = run_reduction(&star_graph()).unwrap();
        let cfg = SimConfig::new(20.0, 0.002)
            .with_initial(&model.coord_names[0].clone(), 1.0)
            .with_initial(&model.coord_names[1].clone(), -0.5);
        let reduced = integrate(&model, &cfg).unwrap();
        assert!(energy_drift(&reduced) < 1e-8);
        let oracle = full_system_oracle(&model, &cfg).unwrap();
        let lifted = lift_trajectory(&model, &reduced);
        let mut scale = 1e-30_f64;
        for row in &oracle.states {
            for v in row {
                scale = scale.max(v.abs());
            }
        }
        let mut sup = 0.0_f64;
        for (a, b) in lifted.iter().zip(&oracle.states) {
            for (x, y) in a.iter().zip(b) {
                sup = sup.max((x - y).abs());
            }
        }
        assert!(sup / scale < 1e-5, "sup-norm mismatch {}", sup / scale);
        // The eliminated zero-mode constraints hold along the oracle flow.
        assert!(oracle
            .constraint_residual
            .iter()
            .all(|r| *r < 1e-6 * scale));
    }

    #[test]
    fn oracle_tracks_a_sinusoidally_driven_lc() {
        let model = run_reduction(&driven_lc_graph()).unwrap();
        let cfg = SimConfig::new(10.0, 0.001)
            .with_initial(&model.coord_names[0].clone(), 1.0);
        let reduced = integrate(&model, &cfg).unwrap();
        let oracle = full_system_oracle(&model, &cfg).unwrap();
        let lifted = lift_trajectory(&model, &reduced);
        let mut scale = 1e-30_f64;
        let mut sup = 0.0_f64;
        for (a, b) in lifted.iter().zip(&oracle.states) {
            for (x, y) in a.iter().zip(b) {
                scale = scale.max(y.abs());
                sup = sup.max((x - y).abs());
            }
        }
        assert!(sup / scale < 1e-5, "sup-norm mismatch {}", sup / scale);
    }

    #[test]
    fn cosine_loop_flow_resolves_the_implicit_coordinate() {
        let model = run_reduction(&cosine_loop_graph()).unwrap();
        assert_eq!(model.implicit.len(), 1);
        let cfg = SimConfig::new(10.0, 0.001)
            .with_initial(&model.coord_names[0].clone(), 0.3);
        let traj = integrate(&model, &cfg).unwrap();
        // No dissipation, so the on-shell Hamiltonian is a first integral
        // even though one coordinate is only known through its constraint.
        assert!(energy_drift(&traj) < 1e-7, "drift {}", energy_drift(&traj));
        // The constraint is satisfied at every recorded step.
        assert!(traj
            .constraint_residual
            .iter()
            .all(|r| *r < 1e-9), "max residual {:?}",
            traj.constraint_residual.iter().cloned().fold(0.0, f64::max));
        // The oracle refuses the trigonometric potential.
        assert_eq!(
            full_system_oracle(&model, &cfg).unwrap_err(),
            DynError::NonlinearConstraintUnsupported
        );
    }

    #[test]
    fn slaved_report_is_empty_without_sources() {
        let model = run_reduction(&star_graph()).unwrap();
        assert_eq!(slaved_pair_report(&model).pairs.len(), 0);
        let driven = run_reduction(&driven_lc_graph()).unwrap();
        // The driven LC pair feeds back on itself, so it is not slaved.
        assert_eq!(slaved_pair_report(&driven).pairs.len(), 0);
    }

    #[test]
    fn csv_output_is_deterministic_and_well_formed() {
        let model = run_reduction(&lc_graph()).unwrap();
        let cfg = SimConfig::new(1.0, 0.1)
            .with_initial(&model.coord_names[0].clone(), 1.0);
        let a = trajectory_csv(&integrate(&model, &cfg).unwrap());
        let b = trajectory_csv(&integrate(&model, &cfg).unwrap());
        assert_eq!(a, b);
        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(lines.len(), 12);
        assert!(lines[0].starts_with("t,"));
        assert!(lines[0].ends_with(",energy,rayleigh_power,dissipated,constraint_residual"));
        let cols = lines[0].split(',').count();
        assert!(lines[1..].iter().all(|l| l.split(',').count() == cols));
    }

    #[test]
    fn unknown_initial_coordinate_is_rejected() {
        let model = run_reduction(&lc_graph()).unwrap();
        let cfg = SimConfig::new(1.0, 0.1).with_initial("nope", 1.0);
        assert_eq!(
            integrate(&model, &cfg).unwrap_err(),
            DynError::UnknownCoordinate("nope".into())
        );
    }
}
