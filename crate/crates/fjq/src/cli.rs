//! Command-line front end: batch analysis, reduction, simulation, and
//! self-checking of circuit netlists.
//!
//! Exit codes are part of the interface: 0 on success, 1 on netlist
//! diagnostics (printed with source locations), 2 on internal errors, 3 when
//! the reduction halts on a structural obstruction (the obstruction document
//! is still written). Identical inputs produce byte-identical outputs.

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fjq_core::circuit::{CircuitGraph, Diagnostic};
use fjq_core::pfaff::{
    assemble_pfaff, describe_blocks, kernel_embedding, render_matrix, tellegen_check, Compactness,
    CoordKind, ReducedSpace,
};
use fjq_core::rational::parse_rat;
use fjq_core::reduction::{run_reduction_with_offsets, HamiltonianModel, ReductionFailure};
use fjq_core::structure::{build_structure, pullback_checked};
use fjq_core::symbolics::verdict_label;
use fjq_core::topology::fundamental_matrices;
use fjq_core::{Mat, Rat};

use crate::dynamics::{
    full_system_oracle, integrate, lift_trajectory, trajectory_csv, DynError, Method, SimConfig,
};
use crate::model_io::{document_for, emit_document, emit_summary};
use crate::netlist::parse_netlist;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DIAGNOSTICS: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;
pub const EXIT_OBSTRUCTION: i32 = 3;

#[derive(Parser)]
#[command(
    name = "fjq",
    about = "Symbolic-numeric reduction of circuit netlists to Hamiltonian models",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Netlist file to read.
    input: PathBuf,
    /// Reorder the branch list before analysis: comma-separated branch ids,
    /// a permutation of the netlist's branches. Emulates alternative
    /// spanning-tree choices.
    #[arg(long, value_name = "id,...")]
    order: Option<String>,
    /// Extra progress detail on stderr.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct ReduceArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Expansion-point offsets: one line per branch, `<id> <charge> <flux>`,
    /// exact rationals. Unlisted branches expand around zero.
    #[arg(long, value_name = "file")]
    offsets: Option<PathBuf>,
    /// Write the output here instead of stdout.
    #[arg(long, value_name = "file")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Rk4,
    Midpoint,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    reduce: ReduceArgs,
    /// Fixed integration step.
    #[arg(long, default_value_t = 0.001)]
    dt: f64,
    /// Final time.
    #[arg(long, default_value_t = 10.0)]
    t_end: f64,
    #[arg(long, value_enum, default_value = "rk4")]
    method: MethodArg,
    /// Initial value for a reduced coordinate, `name=value`; repeatable.
    /// Coordinates not named start at zero.
    #[arg(long = "init", value_name = "name=value")]
    init: Vec<String>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Replace the computed kernel embedding with a matrix read from this
    /// file (whitespace-separated rationals, one row per line) before the
    /// invariant suite runs. Exists to validate external derivations; a
    /// wrong matrix fails the Tellegen check.
    #[arg(long, value_name = "file")]
    k_override: Option<PathBuf>,
    /// Seed for the randomized gradient probe points.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Print spanning-tree data and fundamental cutset/loop matrices.
    Topology(CommonArgs),
    /// Print the full structural analysis: topology, Pfaff blocks, kernel
    /// embedding, reduced two-form, and the Tellegen report.
    Analyze(CommonArgs),
    /// Run the reduction and write the model document (JSON).
    Reduce(ReduceArgs),
    /// Reduce, integrate the reduced flow, and write a trajectory CSV.
    Simulate(SimulateArgs),
    /// Run the invariant suite on one netlist and print PASS/FAIL lines.
    Check(CheckArgs),
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; usage errors are
            // diagnostics.
            let code = if e.use_stderr() { EXIT_DIAGNOSTICS } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Topology(args) => cmd_topology(&args),
        Command::Analyze(args) => cmd_analyze(&args),
        Command::Reduce(args) => cmd_reduce(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Check(args) => cmd_check(&args),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn print_diagnostics(path: &PathBuf, diags: &[Diagnostic]) {
    for d in diags {
        let loc = match (d.line, d.column) {
            (Some(l), Some(c)) => format!("{}:{}:{}", path.display(), l, c),
            (Some(l), None) => format!("{}:{}", path.display(), l),
            _ => format!("{}", path.display()),
        };
        eprintln!("error[{:?}] {}: {}", d.code, loc, d.message);
    }
}

fn load_graph(args: &CommonArgs) -> Result<CircuitGraph, i32> {
    let text = match fs::read_to_string(&args.input) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {}", args.input.display(), e);
            return Err(EXIT_DIAGNOSTICS);
        }
    };
    let mut graph = match parse_netlist(&text) {
        Ok(g) => g,
        Err(diags) => {
            print_diagnostics(&args.input, &diags);
            return Err(EXIT_DIAGNOSTICS);
        }
    };
    if let Some(order) = &args.order {
        graph = match reorder_branches(&graph, order) {
            Ok(g) => g,
            Err(msg) => {
                eprintln!("error: --order {}", msg);
                return Err(EXIT_DIAGNOSTICS);
            }
        };
    }
    if args.verbose {
        eprintln!(
            "parsed {} nodes, {} branches",
            graph.nodes.len(),
            graph.branches.len()
        );
    }
    Ok(graph)
}

fn reorder_branches(graph: &CircuitGraph, order: &str) -> Result<CircuitGraph, String> {
    let ids: Vec<&str> = order.split(',').map(str::trim).collect();
    if ids.len() != graph.branches.len() {
        return Err(format!(
            "lists {} ids but the netlist has {} branches",
            ids.len(),
            graph.branches.len()
        ));
    }
    let mut out = graph.clone();
    out.branches.clear();
    let mut seen = std::collections::BTreeSet::new();
    for id in ids {
        if !seen.insert(id.to_string()) {
            return Err(format!("repeats branch '{}'", id));
        }
        let i = graph
            .branch_index(id)
            .ok_or_else(|| format!("names unknown branch '{}'", id))?;
        out.branches.push(graph.branches[i].clone());
    }
    Ok(out)
}

fn load_offsets(graph: &CircuitGraph, path: &PathBuf) -> Result<Vec<Rat>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {}", path.display(), e))?;
    let b = graph.branches.len();
    let mut offsets = vec![Rat::default(); 2 * b];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(format!(
                "line {}: expected `<branch> <charge> <flux>`",
                lineno + 1
            ));
        }
        let i = graph
            .branch_index(tokens[0])
            .ok_or_else(|| format!("line {}: unknown branch '{}'", lineno + 1, tokens[0]))?;
        offsets[i] = parse_rat(tokens[1]).map_err(|e| format!("line {}: {}", lineno + 1, e))?;
        offsets[b + i] = parse_rat(tokens[2]).map_err(|e| format!("line {}: {}", lineno + 1, e))?;
    }
    Ok(offsets)
}

fn write_output(out: &Option<PathBuf>, content: &str) -> Result<(), i32> {
    match out {
        Some(path) => fs::write(path, content).map_err(|e| {
            eprintln!("error: cannot write {}: {}", path.display(), e);
            EXIT_INTERNAL
        }),
        None => {
            emit(content);
            Ok(())
        }
    }
}

/// Stdout writer that tolerates a closed pipe (e.g. `fjq ... | head`).
fn emit(s: &str) {
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(s.as_bytes());
    let _ = stdout.flush();
}

fn kind_label(k: CoordKind) -> &'static str {
    match k {
        CoordKind::ChargeLike => "charge-like",
        CoordKind::FluxLike => "flux-like",
        CoordKind::Mixed => "mixed",
    }
}

fn compact_label(c: Compactness) -> &'static str {
    match c {
        Compactness::Extended => "extended",
        Compactness::Compact => "compact",
        Compactness::PossiblyCompact => "possibly compact",
    }
}

fn topology_section(graph: &CircuitGraph) -> String {
    let topo = fundamental_matrices(graph);
    let id_of = |i: &usize| graph.branches[*i].id.clone();
    let mut s = String::new();
    s.push_str("# Topology\n");
    s.push_str(&format!(
        "nodes: {}  branches: {}  components: {}\n",
        graph.nodes.len(),
        graph.branches.len(),
        topo.components
    ));
    s.push_str(&format!(
        "tree: {}\n",
        topo.tree_branches.iter().map(id_of).collect::<Vec<_>>().join(", ")
    ));
    s.push_str(&format!(
        "chords: {}\n",
        topo.chords.iter().map(id_of).collect::<Vec<_>>().join(", ")
    ));
    s.push_str("incidence:\n");
    s.push_str(&render_matrix(&topo.incidence));
    s.push_str("cutset (tree rows x branches):\n");
    s.push_str(&render_matrix(&topo.cutset));
    s.push_str("loops (chord rows x branches):\n");
    s.push_str(&render_matrix(&topo.loop_matrix));
    s
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_topology(args: &CommonArgs) -> i32 {
    let graph = match load_graph(args) {
        Ok(g) => g,
        Err(code) => return code,
    };
    emit(&topology_section(&graph));
    EXIT_OK
}

fn cmd_analyze(args: &CommonArgs) -> i32 {
    let graph = match load_graph(args) {
        Ok(g) => g,
        Err(code) => return code,
    };
    let graph = match fjq_core::reduction::flux_to_sources(&graph) {
        Ok(g) => g,
        Err(d) => {
            print_diagnostics(&args.input, std::slice::from_ref(&d));
            return EXIT_DIAGNOSTICS;
        }
    };
    let mut out = topology_section(&graph);
    let topo = fundamental_matrices(&graph);
    let pfaff = assemble_pfaff(&graph, &topo);
    out.push_str("\n# Pfaff system\n");
    out.push_str(&describe_blocks(&pfaff));
    if !out.ends_with('\n') {
        out.push('\n');
    }
    out.push_str("F:\n");
    out.push_str(&render_matrix(&pfaff.f));
    let space = kernel_embedding(&pfaff, &graph);
    out.push_str("\n# Kernel embedding\n");
    for i in 0..space.dim() {
        out.push_str(&format!(
            "  {}  ({}, {})\n",
            space.coord_names[i],
            kind_label(space.coord_kind[i]),
            compact_label(space.coord_compact[i])
        ));
    }
    out.push_str("K:\n");
    out.push_str(&render_matrix(&space.k));
    match build_structure(&space, &graph) {
        Ok(bundle) => {
            out.push_str("\n# Reduced two-form\n");
            out.push_str(&render_matrix(&bundle.e_reduced));
            out.push_str("\n# Rayleigh matrix\n");
            out.push_str(&render_matrix(&bundle.rayleigh));
        }
        Err(e) => {
            eprintln!("internal error: {:?}", e);
            return EXIT_INTERNAL;
        }
    }
    let report = tellegen_check(&space, &graph);
    out.push_str("\n# Tellegen report\n");
    if report.is_ok() {
        out.push_str("all charge/flux pairings consistent\n");
    } else {
        for v in &report.violations {
            out.push_str(&format!("violation: {}\n", v));
        }
    }
    emit(&out);
    if report.is_ok() {
        EXIT_OK
    } else {
        EXIT_INTERNAL
    }
}

fn reduce_model(
    graph: &CircuitGraph,
    args: &ReduceArgs,
) -> Result<Result<HamiltonianModel, ReductionFailure>, i32> {
    let offsets = match &args.offsets {
        Some(path) => match load_offsets(graph, path) {
            Ok(o) => Some(o),
            Err(msg) => {
                eprintln!("error: --offsets {}", msg);
                return Err(EXIT_DIAGNOSTICS);
            }
        },
        None => None,
    };
    Ok(run_reduction_with_offsets(graph, offsets.as_deref()))
}

fn cmd_reduce(args: &ReduceArgs) -> i32 {
    let graph = match load_graph(&args.common) {
        Ok(g) => g,
        Err(code) => return code,
    };
    let result = match reduce_model(&graph, args) {
        Ok(r) => r,
        Err(code) => return code,
    };
    let doc = document_for(&result);
    if write_output(&args.out, &emit_document(&doc)).is_err() {
        return EXIT_INTERNAL;
    }
    if args.common.verbose {
        eprintln!("{}", emit_summary(&result));
    }
    match &result {
        Ok(_) => EXIT_OK,
        Err(ReductionFailure::Obstruction(_)) => EXIT_OBSTRUCTION,
        Err(ReductionFailure::InvalidFlux(d)) => {
            print_diagnostics(&args.common.input, std::slice::from_ref(d));
            EXIT_DIAGNOSTICS
        }
        Err(other) => {
            eprintln!("internal error: {}", crate::model_io::failure_message(other));
            EXIT_INTERNAL
        }
    }
}

fn cmd_simulate(args: &SimulateArgs) -> i32 {
    let graph = match load_graph(&args.reduce.common) {
        Ok(g) => g,
        Err(code) => return code,
    };
    let result = match reduce_model(&graph, &args.reduce) {
        Ok(r) => r,
        Err(code) => return code,
    };
    let model = match result {
        Ok(m) => m,
        Err(ReductionFailure::Obstruction(_)) => {
            eprintln!("error: reduction halted on a structural obstruction; run `fjq reduce` for the report");
            return EXIT_OBSTRUCTION;
        }
        Err(ReductionFailure::InvalidFlux(d)) => {
            print_diagnostics(&args.reduce.common.input, std::slice::from_ref(&d));
            return EXIT_DIAGNOSTICS;
        }
        Err(other) => {
            eprintln!("internal error: {}", crate::model_io::failure_message(&other));
            return EXIT_INTERNAL;
        }
    };
    let mut cfg = SimConfig::new(args.t_end, args.dt).with_method(match args.method {
        MethodArg::Rk4 => Method::Rk4,
        MethodArg::Midpoint => Method::ImplicitMidpoint,
    });
    for spec in &args.init {
        let Some((name, value)) = spec.split_once('=') else {
            eprintln!("error: --init expects name=value, got '{}'", spec);
            return EXIT_DIAGNOSTICS;
        };
        let Ok(v) = value.trim().parse::<f64>() else {
            eprintln!("error: --init '{}': bad number", spec);
            return EXIT_DIAGNOSTICS;
        };
        cfg.initial.push((name.trim().to_string(), v));
    }
    if args.dt <= 0.0 || args.t_end <= 0.0 {
        eprintln!("error: --dt and --t-end must be positive");
        return EXIT_DIAGNOSTICS;
    }
    // Verdicts go to stderr so the CSV stream stays clean.
    for ic in &model.implicit {
        eprintln!(
            "implicit coordinate {}: {}",
            model.coord_names[ic.index],
            verdict_label(ic.verdict)
        );
    }
    let traj = match integrate(&model, &cfg) {
        Ok(t) => t,
        Err(DynError::UnknownCoordinate(n)) => {
            eprintln!(
                "error: --init names unknown coordinate '{}' (coordinates: {})",
                n,
                model.coord_names.join(", ")
            );
            return EXIT_DIAGNOSTICS;
        }
        Err(e) => {
            eprintln!("error: integration failed: {}", e);
            return EXIT_INTERNAL;
        }
    };
    if write_output(&args.reduce.out, &trajectory_csv(&traj)).is_err() {
        return EXIT_INTERNAL;
    }
    EXIT_OK
}

struct CheckPrinter {
    color: bool,
    failed: bool,
}

impl CheckPrinter {
    fn new() -> CheckPrinter {
        let color = matches!(std::env::var("FJQ_COLOR").as_deref(), Ok("1"));
        CheckPrinter {
            color,
            failed: false,
        }
    }

    fn report(&mut self, name: &str, outcome: Result<(), String>) {
        match outcome {
            Ok(()) => {
                let tag = if self.color { "\x1b[32mPASS\x1b[0m" } else { "PASS" };
                emit(&format!("{} {}\n", tag, name));
            }
            Err(detail) => {
                self.failed = true;
                let tag = if self.color { "\x1b[31mFAIL\x1b[0m" } else { "FAIL" };
                emit(&format!("{} {}: {}\n", tag, name, detail));
            }
        }
    }

    fn skip(&self, name: &str, why: &str) {
        emit(&format!("SKIP {}: {}\n", name, why));
    }
}

fn load_k_override(path: &PathBuf, space: &ReducedSpace) -> Result<Mat, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {}", path.display(), e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<Rat>, _> = line.split_whitespace().map(parse_rat).collect();
        rows.push(row.map_err(|e| format!("line {}: {}", lineno + 1, e))?);
    }
    if rows.is_empty() {
        return Err("file holds no matrix rows".into());
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err("ragged rows".into());
    }
    let m = Mat::from_rows(rows);
    if m.nrows() != space.k.nrows() || m.ncols() != space.k.ncols() {
        return Err(format!(
            "expected a {}x{} matrix, got {}x{}",
            space.k.nrows(),
            space.k.ncols(),
            m.nrows(),
            m.ncols()
        ));
    }
    Ok(m)
}

fn cmd_check(args: &CheckArgs) -> i32 {
    let graph = match load_graph(&args.common) {
        Ok(g) => g,
        Err(code) => return code,
    };
    let graph = match fjq_core::reduction::flux_to_sources(&graph) {
        Ok(g) => g,
        Err(d) => {
            print_diagnostics(&args.common.input, std::slice::from_ref(&d));
            return EXIT_DIAGNOSTICS;
        }
    };
    let mut printer = CheckPrinter::new();
    let topo = fundamental_matrices(&graph);
    let pfaff = assemble_pfaff(&graph, &topo);
    let mut space = kernel_embedding(&pfaff, &graph);
    if let Some(path) = &args.k_override {
        match load_k_override(path, &space) {
            Ok(k) => space.k = k,
            Err(msg) => {
                eprintln!("error: --k-override {}", msg);
                return EXIT_DIAGNOSTICS;
            }
        }
    }

    // 1. Tellegen pairings on the (possibly overridden) embedding.
    let report = tellegen_check(&space, &graph);
    printer.report(
        "tellegen",
        if report.is_ok() {
            Ok(())
        } else {
            Err(report.violations.join("; "))
        },
    );

    // 2. Pullback identity: the direct and projector constructions of the
    // reduced two-form must agree exactly.
    let e2b = fjq_core::structure::precanonical_two_form(&graph);
    printer.report(
        "pullback-identity",
        pullback_checked(&space, &graph, &e2b)
            .map(|_| ())
            .map_err(|e| format!("{:?}", e)),
    );

    // The remaining checks need the reduced model; with a corrupted
    // embedding in play they would test nothing meaningful.
    let result = run_reduction_with_offsets(&graph, None);
    match &result {
        Ok(model) => {
            printer.report("gradient-fd", gradient_fd_check(model, args.seed));
            match oracle_check(model) {
                Ok(outcome) => printer.report("oracle-comparison", outcome),
                Err(why) => printer.skip("oracle-comparison", &why),
            }
        }
        Err(ReductionFailure::Obstruction(_)) => {
            printer.skip("gradient-fd", "reduction halted on an obstruction");
            printer.skip("oracle-comparison", "reduction halted on an obstruction");
        }
        Err(other) => {
            printer.report(
                "reduction",
                Err(crate::model_io::failure_message(other)),
            );
        }
    }

    if printer.failed {
        EXIT_DIAGNOSTICS
    } else {
        EXIT_OK
    }
}

/// Symbolic gradient against central finite differences at seeded random
/// points; relative tolerance 1e-6.
fn gradient_fd_check(model: &HamiltonianModel, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.dim() + model.num_sources();
    if n == 0 {
        return Ok(());
    }
    let grad = model.hamiltonian.gradient();
    let h = 1e-5;
    for trial in 0..20 {
        let point: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for i in 0..n {
            let mut plus = point.clone();
            let mut minus = point.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd =
                (model.hamiltonian.eval_f64(&plus) - model.hamiltonian.eval_f64(&minus)) / (2.0 * h);
            let sym = grad[i].eval_f64(&point);
            let scale = sym.abs().max(fd.abs()).max(1.0);
            if (fd - sym).abs() / scale > 1e-6 {
                return Err(format!(
                    "trial {} component {}: symbolic {} vs fd {}",
                    trial, i, sym, fd
                ));
            }
        }
    }
    Ok(())
}

/// Reduced flow versus the directly integrated constrained system over a
/// short horizon. Outer Err means not applicable (printed as SKIP).
fn oracle_check(model: &HamiltonianModel) -> Result<Result<(), String>, String> {
    if !model.initial.potential.trig_terms().is_empty() {
        return Err("nonlinear constitutive relations".into());
    }
    if model.dim() == 0 {
        return Err("no dynamical coordinates".into());
    }
    let mut cfg = SimConfig::new(2.0, 0.001);
    if let Some(name) = model.coord_names.first() {
        cfg.initial.push((name.clone(), 1.0));
    }
    let reduced = match integrate(model, &cfg) {
        Ok(t) => t,
        Err(e) => return Ok(Err(format!("reduced integration failed: {}", e))),
    };
    let oracle = match full_system_oracle(model, &cfg) {
        Ok(t) => t,
        Err(DynError::NonlinearConstraintUnsupported) => {
            return Err("nonlinear constitutive relations".into())
        }
        Err(e) => return Ok(Err(format!("oracle integration failed: {}", e))),
    };
    let lifted = lift_trajectory(model, &reduced);
    let mut scale = 1.0_f64;
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
    Ok(if sup / scale < 1e-5 {
        Ok(())
    } else {
        Err(format!("relative sup-norm {}", sup / scale))
    })
}
