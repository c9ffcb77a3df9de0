//! Line-oriented netlist front end.
//!
//! One declaration per line, `#` starts a comment:
//!
//! ```text
//! node <id>...
//! branch <id> <kind> <tail> <head> [key=value]... [compact=flux|charge|none]
//! transformer <id> left=<id,...> right=<id,...> N=[[r,...],[...]]
//! gyrator <id> ports=<id1,id2> R=<rational>
//! extflux <id> loop=<±id,...> waveform=<spec>
//! ```
//!
//! Branch kinds: `cap` (`C=` or `expr=`), `ind` (`L=` or `expr=`),
//! `josephson` (`EJ=`, `phi0=`), `phaseslip` (`EP=`, `qe=`), `res` (`R=`),
//! `vsource`/`isource` (`wave=`), `tport`/`gport` (`group=`). Waveform specs:
//! `const:<v>`, `sin:<amp>,<omega>,<phase>`, `pwl:(t,v);(t,v);...`. All
//! numbers are exact rationals (`p/q` or decimal).
//!
//! Branch order in the graph is declaration order, and every downstream
//! matrix indexes branches in that order. `parse_netlist` and
//! `serialize_netlist` round-trip: parsing a serialized valid graph yields
//! the graph back field-for-field.

use std::collections::HashMap;

use fjq_core::circuit::{
    Branch, BranchKind, CircuitGraph, ConstraintGroup, DiagCode, Diagnostic, ExternalFluxDecl,
    GroupKind, SourceWaveform,
};
use fjq_core::energy::parse_energy_expr;
use fjq_core::rational::{fmt_rat, parse_rat};
use fjq_core::{Mat, Rat};

fn diag(code: DiagCode, message: impl Into<String>, line: usize) -> Diagnostic {
    let mut d = Diagnostic::new(code, message.into());
    d.line = Some(line);
    d
}

/// Splits `key=value` off a token; the value may itself contain `=`-free
/// separators like `:` and `,`.
fn key_value(token: &str) -> Option<(&str, &str)> {
    token.split_once('=')
}

fn parse_waveform(spec: &str, line: usize) -> Result<SourceWaveform, Diagnostic> {
    let bad = |msg: &str| diag(DiagCode::MalformedWaveform, msg.to_string(), line);
    let (tag, rest) = spec
        .split_once(':')
        .ok_or_else(|| bad("waveform must be const:…, sin:…, or pwl:…"))?;
    let num = |t: &str| {
        parse_rat(t).map_err(|e| diag(DiagCode::BadRational, e.to_string(), line))
    };
    match tag {
        "const" => Ok(SourceWaveform::Constant { value: num(rest)? }),
        "sin" => {
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() != 3 {
                return Err(bad("sin takes amplitude,omega,phase"));
            }
            Ok(SourceWaveform::Sinusoid {
                amplitude: num(parts[0])?,
                omega: num(parts[1])?,
                phase: num(parts[2])?,
            })
        }
        "pwl" => {
            let mut breakpoints = Vec::new();
            for piece in rest.split(';') {
                let inner = piece
                    .strip_prefix('(')
                    .and_then(|p| p.strip_suffix(')'))
                    .ok_or_else(|| bad("pwl breakpoints are (t,v);(t,v);…"))?;
                let (t, v) = inner
                    .split_once(',')
                    .ok_or_else(|| bad("pwl breakpoint needs a time and a value"))?;
                breakpoints.push((num(t)?, num(v)?));
            }
            if breakpoints.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(bad("pwl breakpoints must be strictly increasing in time"));
            }
            Ok(SourceWaveform::PiecewiseLinear { breakpoints })
        }
        _ => Err(bad("waveform must be const:…, sin:…, or pwl:…")),
    }
}

fn render_waveform(w: &SourceWaveform) -> Result<String, Diagnostic> {
    match w {
        SourceWaveform::Constant { value } => Ok(format!("const:{}", fmt_rat(value))),
        SourceWaveform::Sinusoid {
            amplitude,
            omega,
            phase,
        } => Ok(format!(
            "sin:{},{},{}",
            fmt_rat(amplitude),
            fmt_rat(omega),
            fmt_rat(phase)
        )),
        SourceWaveform::PiecewiseLinear { breakpoints } => {
            let parts: Vec<String> = breakpoints
                .iter()
                .map(|(t, v)| format!("({},{})", fmt_rat(t), fmt_rat(v)))
                .collect();
            Ok(format!("pwl:{}", parts.join(";")))
        }
        _ => Err(Diagnostic::new(
            DiagCode::MalformedWaveform,
            "derived waveform has no netlist spelling".into(),
        )),
    }
}

/// Parses a rational matrix literal `[[a,b],[c,d]]`.
fn parse_matrix(text: &str, line: usize) -> Result<Mat, Diagnostic> {
    let bad = |msg: &str| diag(DiagCode::MalformedGroup, msg.to_string(), line);
    let inner = text
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| bad("matrix literal must be [[…],[…]]"))?;
    let mut rows: Vec<Vec<Rat>> = Vec::new();
    let mut rest = inner;
    while !rest.is_empty() {
        let row_src = rest
            .strip_prefix('[')
            .ok_or_else(|| bad("expected '[' starting a matrix row"))?;
        let (row_text, after) = row_src
            .split_once(']')
            .ok_or_else(|| bad("unterminated matrix row"))?;
        let mut row = Vec::new();
        for entry in row_text.split(',') {
            row.push(
                parse_rat(entry).map_err(|e| diag(DiagCode::BadRational, e.to_string(), line))?,
            );
        }
        if let Some(prev) = rows.first() {
            if prev.len() != row.len() {
                return Err(bad("matrix rows have unequal lengths"));
            }
        }
        rows.push(row);
        rest = after.strip_prefix(',').unwrap_or(after);
    }
    if rows.is_empty() {
        return Err(bad("empty matrix literal"));
    }
    Ok(Mat::from_rows(rows))
}

struct LineCtx<'a> {
    line_no: usize,
    tokens: Vec<&'a str>,
}

pub fn parse_netlist(text: &str) -> Result<CircuitGraph, Vec<Diagnostic>> {
    let mut graph = CircuitGraph::default();
    let mut diags: Vec<Diagnostic> = Vec::new();
    let mut node_index: HashMap<String, usize> = HashMap::new();
    let mut deferred: Vec<LineCtx> = Vec::new();

    // Pass 1: nodes and branches in file order; group and flux declarations
    // are deferred so they may reference branches declared below them.
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "node" => {
                for &name in &tokens[1..] {
                    if node_index.contains_key(name) {
                        diags.push(diag(
                            DiagCode::DuplicateId,
                            format!("node {} declared twice", name),
                            line_no,
                        ));
                        continue;
                    }
                    node_index.insert(name.to_string(), graph.nodes.len());
                    graph.nodes.push(name.to_string());
                }
            }
            "branch" => {
                match parse_branch(&tokens, line_no, &node_index, &graph) {
                    Ok(b) => graph.branches.push(b),
                    Err(d) => diags.push(d),
                }
            }
            "transformer" | "gyrator" | "extflux" => {
                deferred.push(LineCtx { line_no, tokens });
            }
            other => diags.push(diag(
                DiagCode::MalformedLine,
                format!("unknown declaration '{}'", other),
                line_no,
            )),
        }
    }

    // Pass 2: constraint groups and external fluxes.
    for ctx in deferred {
        let res = match ctx.tokens[0] {
            "transformer" => parse_transformer(&ctx, &mut graph),
            "gyrator" => parse_gyrator(&ctx, &mut graph),
            _ => parse_extflux(&ctx, &mut graph),
        };
        if let Err(d) = res {
            diags.push(d);
        }
    }

    if diags.is_empty() {
        diags.extend(graph.validate());
    }
    if diags.is_empty() {
        Ok(graph)
    } else {
        Err(diags)
    }
}

fn parse_branch(
    tokens: &[&str],
    line: usize,
    node_index: &HashMap<String, usize>,
    graph: &CircuitGraph,
) -> Result<Branch, Diagnostic> {
    if tokens.len() < 5 {
        return Err(diag(
            DiagCode::MalformedLine,
            "branch needs: branch <id> <kind> <tail> <head> [key=value]…",
            line,
        ));
    }
    let id = tokens[1];
    let kind_tok = tokens[2];
    if graph.branch_index(id).is_some() {
        return Err(diag(
            DiagCode::DuplicateId,
            format!("branch {} declared twice", id),
            line,
        ));
    }
    let node = |name: &str| {
        node_index.get(name).copied().ok_or_else(|| {
            diag(
                DiagCode::DanglingNode,
                format!("branch {} references undeclared node {}", id, name),
                line,
            )
        })
    };
    let tail = node(tokens[3])?;
    let head = node(tokens[4])?;

    let mut params: HashMap<&str, &str> = HashMap::new();
    for tok in &tokens[5..] {
        let Some((k, v)) = key_value(tok) else {
            return Err(diag(
                DiagCode::MalformedLine,
                format!("expected key=value, found '{}'", tok),
                line,
            ));
        };
        if params.insert(k, v).is_some() {
            return Err(diag(
                DiagCode::MalformedLine,
                format!("parameter {} given twice", k),
                line,
            ));
        }
    }

    let num = |key: &str| -> Result<Rat, Diagnostic> {
        let v = params.get(key).ok_or_else(|| {
            diag(
                DiagCode::MissingParameter,
                format!("branch {} needs {}=", id, key),
                line,
            )
        })?;
        parse_rat(v).map_err(|e| diag(DiagCode::BadRational, e.to_string(), line))
    };
    let expr = |key: &str| {
        parse_energy_expr(params[key])
            .map_err(|e| diag(DiagCode::MalformedLine, e.to_string(), line))
    };
    let wave = |key: &str| -> Result<SourceWaveform, Diagnostic> {
        let v = params.get(key).ok_or_else(|| {
            diag(
                DiagCode::MissingParameter,
                format!("branch {} needs {}=", id, key),
                line,
            )
        })?;
        parse_waveform(v, line)
    };
    let group = |key: &str| -> Result<&str, Diagnostic> {
        params.get(key).copied().ok_or_else(|| {
            diag(
                DiagCode::MissingParameter,
                format!("branch {} needs {}=", id, key),
                line,
            )
        })
    };

    let mut branch = match kind_tok {
        "cap" => {
            if params.contains_key("expr") {
                Branch::capacitive_energy(id, tail, head, expr("expr")?)
            } else {
                Branch::capacitor(id, tail, head, num("C")?)
            }
        }
        "ind" => {
            if params.contains_key("expr") {
                Branch::inductive_energy(id, tail, head, expr("expr")?)
            } else {
                Branch::inductor(id, tail, head, num("L")?)
            }
        }
        "josephson" => Branch::josephson(id, tail, head, num("EJ")?, num("phi0")?),
        "phaseslip" => Branch::phase_slip(id, tail, head, num("EP")?, num("qe")?),
        "res" => Branch::resistor(id, tail, head, num("R")?),
        "vsource" => Branch::voltage_source(id, tail, head, wave("wave")?),
        "isource" => Branch::current_source(id, tail, head, wave("wave")?),
        "tport" => Branch::transformer_port(id, tail, head, group("group")?),
        "gport" => Branch::gyrator_port(id, tail, head, group("group")?),
        other => {
            return Err(diag(
                DiagCode::UnknownElementKind,
                format!("unknown branch kind '{}'", other),
                line,
            ))
        }
    };

    let known: &[&str] = match kind_tok {
        "cap" => &["C", "expr", "compact"],
        "ind" => &["L", "expr", "compact"],
        "josephson" => &["EJ", "phi0", "compact"],
        "phaseslip" => &["EP", "qe", "compact"],
        "res" => &["R"],
        "vsource" | "isource" => &["wave"],
        _ => &["group"],
    };
    for k in params.keys() {
        if !known.contains(k) {
            let code = if *k == "expr" || *k == "C" || *k == "L" {
                DiagCode::MisplacedEnergy
            } else {
                DiagCode::MalformedLine
            };
            return Err(diag(
                code,
                format!("parameter {}= not valid for kind {}", k, kind_tok),
                line,
            ));
        }
    }

    if let Some(&c) = params.get("compact") {
        match c {
            "flux" => {
                branch.compact_flux = true;
                branch.compact_charge = false;
            }
            "charge" => {
                branch.compact_charge = true;
                branch.compact_flux = false;
            }
            "none" => {
                branch.compact_flux = false;
                branch.compact_charge = false;
            }
            other => {
                return Err(diag(
                    DiagCode::MalformedLine,
                    format!("compact= must be flux, charge, or none (got '{}')", other),
                    line,
                ))
            }
        }
    }
    Ok(branch)
}

fn parse_transformer(ctx: &LineCtx, graph: &mut CircuitGraph) -> Result<(), Diagnostic> {
    let line = ctx.line_no;
    let id = ctx.tokens.get(1).copied().ok_or_else(|| {
        diag(DiagCode::MalformedLine, "transformer needs an id", line)
    })?;
    let mut left: Option<Vec<usize>> = None;
    let mut right: Option<Vec<usize>> = None;
    let mut turns: Option<Mat> = None;
    for tok in &ctx.tokens[2..] {
        match key_value(tok) {
            Some(("left", v)) => left = Some(resolve_members(v, graph, id, line)?),
            Some(("right", v)) => right = Some(resolve_members(v, graph, id, line)?),
            Some(("N", v)) => turns = Some(parse_matrix(v, line)?),
            _ => {
                return Err(diag(
                    DiagCode::MalformedLine,
                    format!("unexpected token '{}' in transformer", tok),
                    line,
                ))
            }
        }
    }
    let (Some(left), Some(right), Some(turns)) = (left, right, turns) else {
        return Err(diag(
            DiagCode::MalformedGroup,
            format!("transformer {} needs left=, right=, N=", id),
            line,
        ));
    };
    let mut members = left;
    members.extend(right);
    graph
        .groups
        .push(ConstraintGroup::transformer(id, members, turns));
    Ok(())
}

fn parse_gyrator(ctx: &LineCtx, graph: &mut CircuitGraph) -> Result<(), Diagnostic> {
    let line = ctx.line_no;
    let id = ctx.tokens.get(1).copied().ok_or_else(|| {
        diag(DiagCode::MalformedLine, "gyrator needs an id", line)
    })?;
    let mut ports: Option<Vec<usize>> = None;
    let mut r: Option<Rat> = None;
    for tok in &ctx.tokens[2..] {
        match key_value(tok) {
            Some(("ports", v)) => ports = Some(resolve_members(v, graph, id, line)?),
            Some(("R", v)) => {
                r = Some(
                    parse_rat(v).map_err(|e| diag(DiagCode::BadRational, e.to_string(), line))?,
                )
            }
            _ => {
                return Err(diag(
                    DiagCode::MalformedLine,
                    format!("unexpected token '{}' in gyrator", tok),
                    line,
                ))
            }
        }
    }
    let (Some(ports), Some(r)) = (ports, r) else {
        return Err(diag(
            DiagCode::MalformedGroup,
            format!("gyrator {} needs ports= and R=", id),
            line,
        ));
    };
    if ports.len() != 2 {
        return Err(diag(
            DiagCode::MalformedGroup,
            format!("gyrator {} needs exactly two ports", id),
            line,
        ));
    }
    graph.groups.push(ConstraintGroup::gyrator(id, ports, r));
    Ok(())
}

fn parse_extflux(ctx: &LineCtx, graph: &mut CircuitGraph) -> Result<(), Diagnostic> {
    let line = ctx.line_no;
    let id = ctx.tokens.get(1).copied().ok_or_else(|| {
        diag(DiagCode::MalformedLine, "extflux needs an id", line)
    })?;
    let mut loop_branches: Option<Vec<(usize, bool)>> = None;
    let mut waveform: Option<SourceWaveform> = None;
    for tok in &ctx.tokens[2..] {
        match key_value(tok) {
            Some(("loop", v)) => {
                let mut lb = Vec::new();
                for part in v.split(',') {
                    let (along, name) = match part.strip_prefix('-') {
                        Some(rest) => (false, rest),
                        None => (true, part.strip_prefix('+').unwrap_or(part)),
                    };
                    let bi = graph.branch_index(name).ok_or_else(|| {
                        diag(
                            DiagCode::NotACycle,
                            format!("extflux {} references unknown branch {}", id, name),
                            line,
                        )
                    })?;
                    lb.push((bi, along));
                }
                loop_branches = Some(lb);
            }
            Some(("waveform", v)) => waveform = Some(parse_waveform(v, line)?),
            _ => {
                return Err(diag(
                    DiagCode::MalformedLine,
                    format!("unexpected token '{}' in extflux", tok),
                    line,
                ))
            }
        }
    }
    let (Some(loop_branches), Some(waveform)) = (loop_branches, waveform) else {
        return Err(diag(
            DiagCode::MalformedLine,
            format!("extflux {} needs loop= and waveform=", id),
            line,
        ));
    };
    graph.external_fluxes.push(ExternalFluxDecl {
        id: id.to_string(),
        loop_branches,
        waveform,
    });
    Ok(())
}

fn resolve_members(
    list: &str,
    graph: &CircuitGraph,
    group: &str,
    line: usize,
) -> Result<Vec<usize>, Diagnostic> {
    list.split(',')
        .map(|name| {
            graph.branch_index(name).ok_or_else(|| {
                diag(
                    DiagCode::MalformedGroup,
                    format!("group {} references unknown branch {}", group, name),
                    line,
                )
            })
        })
        .collect()
}

/// Renders a graph back to netlist text. Only graphs expressible in the
/// grammar are supported: derived waveforms (flux-rewrite products) and raw
/// scattering groups have no spelling and are rejected.
pub fn serialize_netlist(graph: &CircuitGraph) -> Result<String, Diagnostic> {
    let mut out = String::new();
    if !graph.nodes.is_empty() {
        out.push_str("node");
        for n in &graph.nodes {
            out.push(' ');
            out.push_str(n);
        }
        out.push('\n');
    }
    for b in &graph.branches {
        let tail = &graph.nodes[b.tail];
        let head = &graph.nodes[b.head];
        let extra;
        let kind = match b.kind {
            BranchKind::Capacitor => {
                extra = format!(" expr={}", energy_text(b)?);
                "cap"
            }
            BranchKind::Inductor => {
                extra = format!(" expr={}", energy_text(b)?);
                "ind"
            }
            BranchKind::Resistor => {
                extra = format!(" R={}", fmt_rat(b.value.as_ref().expect("resistor value")));
                "res"
            }
            BranchKind::VoltageSource | BranchKind::CurrentSource => {
                let w = b.waveform.as_ref().expect("source waveform");
                extra = format!(" wave={}", render_waveform(w)?);
                if b.kind == BranchKind::VoltageSource {
                    "vsource"
                } else {
                    "isource"
                }
            }
            BranchKind::TransformerPort => {
                extra = format!(" group={}", b.group.as_deref().expect("port group"));
                "tport"
            }
            BranchKind::GyratorPort => {
                extra = format!(" group={}", b.group.as_deref().expect("port group"));
                "gport"
            }
        };
        let compact = if b.compact_flux {
            " compact=flux"
        } else if b.compact_charge {
            " compact=charge"
        } else {
            ""
        };
        out.push_str(&format!(
            "branch {} {} {} {}{}{}\n",
            b.id, kind, tail, head, extra, compact
        ));
    }
    for g in &graph.groups {
        match &g.kind {
            GroupKind::Transformer { turns } => {
                let n_right = turns.nrows();
                let n_left = g.members.len() - n_right;
                let name = |&i: &usize| graph.branches[i].id.clone();
                let left: Vec<String> = g.members[..n_left].iter().map(name).collect();
                let right: Vec<String> = g.members[n_left..].iter().map(name).collect();
                out.push_str(&format!(
                    "transformer {} left={} right={} N={}\n",
                    g.id,
                    left.join(","),
                    right.join(","),
                    matrix_text(turns)
                ));
            }
            GroupKind::Gyrator { impedance, .. } => {
                let ports: Vec<String> = g
                    .members
                    .iter()
                    .map(|&i| graph.branches[i].id.clone())
                    .collect();
                out.push_str(&format!(
                    "gyrator {} ports={} R={}\n",
                    g.id,
                    ports.join(","),
                    fmt_rat(impedance)
                ));
            }
            GroupKind::Scattering { .. } => {
                return Err(Diagnostic::new(
                    DiagCode::MalformedGroup,
                    format!("scattering group {} has no netlist spelling", g.id),
                ));
            }
        }
    }
    for f in &graph.external_fluxes {
        let parts: Vec<String> = f
            .loop_branches
            .iter()
            .map(|&(bi, along)| {
                format!(
                    "{}{}",
                    if along { "+" } else { "-" },
                    graph.branches[bi].id
                )
            })
            .collect();
        out.push_str(&format!(
            "extflux {} loop={} waveform={}\n",
            f.id,
            parts.join(","),
            render_waveform(&f.waveform)?
        ));
    }
    Ok(out)
}

fn energy_text(b: &Branch) -> Result<String, Diagnostic> {
    let e = b.energy.as_ref().ok_or_else(|| {
        Diagnostic::new(
            DiagCode::MissingParameter,
            format!("reactive branch {} lacks an energy function", b.id),
        )
    })?;
    Ok(e.display(&["x"]).replace(' ', ""))
}

fn matrix_text(m: &Mat) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|r| {
            let entries: Vec<String> = (0..m.ncols()).map(|c| fmt_rat(&m[(r, c)])).collect();
            format!("[{}]", entries.join(","))
        })
        .collect();
    format!("[{}]", rows.join(","))
}
