//! Model document serialization and human-readable summaries.
//!
//! Documents are JSON with every number carried as an exact rational string
//! (`"p/q"` or `"p"`), never a float, so `load(emit(x)) = x` holds
//! bit-for-bit. Field order is fixed by the struct definitions, making the
//! output byte-identical across runs. Documents use the `.fjq.json`
//! extension.

use serde::{Deserialize, Serialize};

use fjq_core::circuit::SourceWaveform;
use fjq_core::energy::{Affine, EnergyExpr, TrigKind};
use fjq_core::pfaff::Compactness;
use fjq_core::rational::{fmt_rat, parse_rat};
use fjq_core::reduction::{
    AffineMap, HamiltonianModel, ObstructionKind, ObstructionReport, ReductionFailure,
    ReductionStep,
};
use fjq_core::symbolics::Verdict;
use fjq_core::{Mat, Rat};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub result: DocResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DocResult {
    Model(ModelDoc),
    Obstruction(ObstructionDoc),
    /// Structural failures (Tellegen violation, invalid flux declaration,
    /// iteration cap): not a classified obstruction, but still a document.
    Failure { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub pairs: Vec<(String, String)>,
    pub coord_names: Vec<String>,
    pub compact_flags: Vec<String>,
    pub two_form: MatDoc,
    pub poisson: MatDoc,
    pub hamiltonian: ExprDoc,
    pub rayleigh: MatDoc,
    pub sources: Vec<SourceDoc>,
    pub implicit: Vec<ImplicitDoc>,
    pub advisories: Vec<ObstructionKindDoc>,
    pub provenance: Vec<StepDoc>,
    pub embedding: AffineMapDoc,
    pub initial: InitialDoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstructionDoc {
    pub obstruction: ObstructionKindDoc,
    pub detail: String,
    pub stage: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstructionKindDoc {
    pub class: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<ExprDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatDoc {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExprDoc {
    pub nvars: usize,
    pub quad: MatDoc,
    pub lin: Vec<String>,
    pub constant: String,
    pub trig: Vec<TrigDoc>,
    /// Canonical display form; informational only.
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigDoc {
    pub coeff: String,
    pub coeff_pi: u32,
    pub kind: String,
    pub arg_pi: bool,
    pub arg_coeffs: Vec<String>,
    pub arg_offset: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceDoc {
    pub name: String,
    pub waveform: WaveDoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WaveDoc {
    Constant {
        value: String,
    },
    Sinusoid {
        amplitude: String,
        omega: String,
        phase: String,
    },
    PiecewiseLinear {
        breakpoints: Vec<(String, String)>,
    },
    Scaled {
        factor: String,
        inner: Box<WaveDoc>,
    },
    Sum {
        terms: Vec<WaveDoc>,
    },
    Derivative {
        inner: Box<WaveDoc>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImplicitDoc {
    pub index: usize,
    pub verdict: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDoc {
    pub transform: MatDoc,
    pub zero_coords: Vec<usize>,
    pub dropped_gauge: Vec<usize>,
    pub solved: Vec<(usize, AffineDoc)>,
    pub remaining_implicit: Vec<usize>,
    pub canonical_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineDoc {
    pub coeffs: Vec<String>,
    pub offset: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMapDoc {
    pub z: MatDoc,
    pub s: MatDoc,
    pub c: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialDoc {
    pub coord_names: Vec<String>,
    pub e_reduced: MatDoc,
    pub rayleigh: MatDoc,
    pub potential: ExprDoc,
}

// ---------------------------------------------------------------------------
// Core → document
// ---------------------------------------------------------------------------

fn mat_doc(m: &Mat) -> MatDoc {
    MatDoc {
        rows: m.nrows(),
        cols: m.ncols(),
        entries: (0..m.nrows())
            .map(|r| (0..m.ncols()).map(|c| fmt_rat(&m[(r, c)])).collect())
            .collect(),
    }
}

fn expr_doc(e: &EnergyExpr, names: &[String]) -> ExprDoc {
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    ExprDoc {
        nvars: e.nvars(),
        quad: mat_doc(e.quad_matrix()),
        lin: e.linear_part().iter().map(fmt_rat).collect(),
        constant: fmt_rat(e.constant_part()),
        trig: e
            .trig_terms()
            .iter()
            .map(|t| TrigDoc {
                coeff: fmt_rat(&t.coeff),
                coeff_pi: t.coeff_pi,
                kind: match t.kind {
                    TrigKind::Cos => "cos".into(),
                    TrigKind::Sin => "sin".into(),
                },
                arg_pi: t.arg_pi,
                arg_coeffs: t.arg.coeffs.iter().map(fmt_rat).collect(),
                arg_offset: fmt_rat(&t.arg.offset),
            })
            .collect(),
        text: e.display(&name_refs),
    }
}

fn wave_doc(w: &SourceWaveform) -> WaveDoc {
    match w {
        SourceWaveform::Constant { value } => WaveDoc::Constant {
            value: fmt_rat(value),
        },
        SourceWaveform::Sinusoid {
            amplitude,
            omega,
            phase,
        } => WaveDoc::Sinusoid {
            amplitude: fmt_rat(amplitude),
            omega: fmt_rat(omega),
            phase: fmt_rat(phase),
        },
        SourceWaveform::PiecewiseLinear { breakpoints } => WaveDoc::PiecewiseLinear {
            breakpoints: breakpoints
                .iter()
                .map(|(t, v)| (fmt_rat(t), fmt_rat(v)))
                .collect(),
        },
        SourceWaveform::Scaled(k, inner) => WaveDoc::Scaled {
            factor: fmt_rat(k),
            inner: Box::new(wave_doc(inner)),
        },
        SourceWaveform::Sum(terms) => WaveDoc::Sum {
            terms: terms.iter().map(wave_doc).collect(),
        },
        SourceWaveform::Derivative(inner) => WaveDoc::Derivative {
            inner: Box::new(wave_doc(inner)),
        },
    }
}

fn compactness_str(c: Compactness) -> String {
    match c {
        Compactness::Extended => "extended".into(),
        Compactness::Compact => "compact".into(),
        Compactness::PossiblyCompact => "possibly_compact".into(),
    }
}

fn obstruction_kind_doc(kind: &ObstructionKind, names: &[String]) -> ObstructionKindDoc {
    match kind {
        ObstructionKind::TopologicalPhaseSpace => ObstructionKindDoc {
            class: "topological_phase_space".into(),
            witness: None,
        },
        ObstructionKind::NonHomogeneousRank { witness } => ObstructionKindDoc {
            class: "non_homogeneous_rank".into(),
            witness: Some(expr_doc(witness, names)),
        },
        ObstructionKind::NonIntegrable => ObstructionKindDoc {
            class: "non_integrable".into(),
            witness: None,
        },
        ObstructionKind::UnresolvedLinearConstraint => ObstructionKindDoc {
            class: "unresolved_linear_constraint".into(),
            witness: None,
        },
    }
}

fn affine_doc(a: &Affine) -> AffineDoc {
    AffineDoc {
        coeffs: a.coeffs.iter().map(fmt_rat).collect(),
        offset: fmt_rat(&a.offset),
    }
}

fn step_doc(s: &ReductionStep) -> StepDoc {
    StepDoc {
        transform: mat_doc(&s.transform),
        zero_coords: s.zero_coords.clone(),
        dropped_gauge: s.dropped_gauge.clone(),
        solved: s
            .solved
            .iter()
            .map(|(i, a)| (*i, affine_doc(a)))
            .collect(),
        remaining_implicit: s.remaining_implicit.clone(),
        canonical_pairs: s.canonical_pairs,
    }
}

fn affine_map_doc(m: &AffineMap) -> AffineMapDoc {
    AffineMapDoc {
        z: mat_doc(&m.z),
        s: mat_doc(&m.s),
        c: m.c.iter().map(fmt_rat).collect(),
    }
}

/// Variable names for expressions over coordinates ⧺ source symbols.
fn augmented_names(model: &HamiltonianModel, base: &[String]) -> Vec<String> {
    let mut names = base.to_vec();
    names.extend(model.sources.iter().map(|(n, _)| n.clone()));
    names
}

pub fn model_document(model: &HamiltonianModel) -> ModelDocument {
    let h_names = augmented_names(model, &model.coord_names);
    let init_names = augmented_names(model, &model.initial.coord_names);
    ModelDocument {
        schema_version: SCHEMA_VERSION,
        result: DocResult::Model(ModelDoc {
            pairs: model.pairs.clone(),
            coord_names: model.coord_names.clone(),
            compact_flags: model
                .compact_flags
                .iter()
                .map(|&c| compactness_str(c))
                .collect(),
            two_form: mat_doc(&model.two_form),
            poisson: mat_doc(&model.poisson),
            hamiltonian: expr_doc(&model.hamiltonian, &h_names),
            rayleigh: mat_doc(&model.rayleigh),
            sources: model
                .sources
                .iter()
                .map(|(name, w)| SourceDoc {
                    name: name.clone(),
                    waveform: wave_doc(w),
                })
                .collect(),
            implicit: model
                .implicit
                .iter()
                .map(|ic| ImplicitDoc {
                    index: ic.index,
                    verdict: match ic.verdict {
                        Verdict::Invertible => "invertible".into(),
                        Verdict::Inconclusive => "inconclusive".into(),
                    },
                })
                .collect(),
            advisories: model
                .advisories
                .iter()
                .map(|k| obstruction_kind_doc(k, &h_names))
                .collect(),
            provenance: model.provenance.iter().map(step_doc).collect(),
            embedding: affine_map_doc(&model.embedding),
            initial: InitialDoc {
                coord_names: model.initial.coord_names.clone(),
                e_reduced: mat_doc(&model.initial.e_reduced),
                rayleigh: mat_doc(&model.initial.rayleigh),
                potential: expr_doc(&model.initial.potential, &init_names),
            },
        }),
    }
}

pub fn obstruction_document(report: &ObstructionReport) -> ModelDocument {
    // Witness expressions are displayed over generic coordinate names.
    let names: Vec<String> = match &report.kind {
        ObstructionKind::NonHomogeneousRank { witness } => {
            (0..witness.nvars()).map(|i| format!("w_{}", i + 1)).collect()
        }
        _ => Vec::new(),
    };
    ModelDocument {
        schema_version: SCHEMA_VERSION,
        result: DocResult::Obstruction(ObstructionDoc {
            obstruction: obstruction_kind_doc(&report.kind, &names),
            detail: report.detail.clone(),
            stage: report.stage,
        }),
    }
}

pub fn document_for(result: &Result<HamiltonianModel, ReductionFailure>) -> ModelDocument {
    match result {
        Ok(model) => model_document(model),
        Err(ReductionFailure::Obstruction(report)) => obstruction_document(report),
        Err(other) => ModelDocument {
            schema_version: SCHEMA_VERSION,
            result: DocResult::Failure {
                message: failure_message(other),
            },
        },
    }
}

pub fn failure_message(f: &ReductionFailure) -> String {
    match f {
        ReductionFailure::Obstruction(r) => format!("obstruction at stage {}: {}", r.stage, r.detail),
        ReductionFailure::Structure(_) => {
            "two-form pullback failed the Tellegen self-consistency identity".into()
        }
        ReductionFailure::Tellegen(msgs) => format!("Tellegen check failed: {}", msgs.join("; ")),
        ReductionFailure::InvalidFlux(d) => format!("invalid external flux: {}", d.message),
        ReductionFailure::IterationCapExceeded => {
            "reduction did not terminate within the iteration cap".into()
        }
    }
}

pub fn emit_document(doc: &ModelDocument) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("document serialization");
    s.push('\n');
    s
}

pub fn load_document(text: &str) -> Result<ModelDocument, serde_json::Error> {
    serde_json::from_str(text)
}

// ---------------------------------------------------------------------------
// Document → core (exact reconstruction)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct DocError(pub String);

impl std::fmt::Display for DocError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "malformed model document: {}", self.0)
    }
}
impl std::error::Error for DocError {}

fn rat_of(s: &str) -> Result<Rat, DocError> {
    parse_rat(s).map_err(|e| DocError(e.to_string()))
}

pub fn mat_from_doc(doc: &MatDoc) -> Result<Mat, DocError> {
    let mut m = Mat::zeros(doc.rows, doc.cols);
    if doc.entries.len() != doc.rows {
        return Err(DocError("matrix row count mismatch".into()));
    }
    for (r, row) in doc.entries.iter().enumerate() {
        if row.len() != doc.cols {
            return Err(DocError("matrix column count mismatch".into()));
        }
        for (c, entry) in row.iter().enumerate() {
            m[(r, c)] = rat_of(entry)?;
        }
    }
    Ok(m)
}

pub fn expr_from_doc(doc: &ExprDoc) -> Result<EnergyExpr, DocError> {
    let n = doc.nvars;
    let quad = mat_from_doc(&doc.quad)?;
    if quad.nrows() != n || quad.ncols() != n {
        return Err(DocError("quadratic block shape mismatch".into()));
    }
    let mut e = EnergyExpr::zero(n);
    for i in 0..n {
        for j in i..n {
            let q = quad[(i, j)].clone();
            if q == Rat::default() {
                continue;
            }
            let c = if i == j { q / Rat::from_integer(2.into()) } else { q };
            e = e.add(&EnergyExpr::quad_term(n, i, j, c));
        }
    }
    let mut lin = Vec::with_capacity(n);
    for s in &doc.lin {
        lin.push(rat_of(s)?);
    }
    if lin.len() != n {
        return Err(DocError("linear part length mismatch".into()));
    }
    e = e.add(&EnergyExpr::from_affine(&Affine {
        coeffs: lin,
        offset: rat_of(&doc.constant)?,
    }));
    for t in &doc.trig {
        let kind = match t.kind.as_str() {
            "cos" => TrigKind::Cos,
            "sin" => TrigKind::Sin,
            other => return Err(DocError(format!("unknown trig kind '{}'", other))),
        };
        let mut coeffs = Vec::with_capacity(n);
        for s in &t.arg_coeffs {
            coeffs.push(rat_of(s)?);
        }
        if coeffs.len() != n {
            return Err(DocError("trig argument length mismatch".into()));
        }
        e = e.add(&EnergyExpr::trig(
            rat_of(&t.coeff)?,
            t.coeff_pi,
            kind,
            t.arg_pi,
            Affine {
                coeffs,
                offset: rat_of(&t.arg_offset)?,
            },
        ));
    }
    Ok(e)
}

pub fn wave_from_doc(doc: &WaveDoc) -> Result<SourceWaveform, DocError> {
    Ok(match doc {
        WaveDoc::Constant { value } => SourceWaveform::Constant {
            value: rat_of(value)?,
        },
        WaveDoc::Sinusoid {
            amplitude,
            omega,
            phase,
        } => SourceWaveform::Sinusoid {
            amplitude: rat_of(amplitude)?,
            omega: rat_of(omega)?,
            phase: rat_of(phase)?,
        },
        WaveDoc::PiecewiseLinear { breakpoints } => SourceWaveform::PiecewiseLinear {
            breakpoints: breakpoints
                .iter()
                .map(|(t, v)| Ok((rat_of(t)?, rat_of(v)?)))
                .collect::<Result<_, DocError>>()?,
        },
        WaveDoc::Scaled { factor, inner } => {
            SourceWaveform::Scaled(rat_of(factor)?, Box::new(wave_from_doc(inner)?))
        }
        WaveDoc::Sum { terms } => SourceWaveform::Sum(
            terms
                .iter()
                .map(wave_from_doc)
                .collect::<Result<_, DocError>>()?,
        ),
        WaveDoc::Derivative { inner } => {
            SourceWaveform::Derivative(Box::new(wave_from_doc(inner)?))
        }
    })
}

// ---------------------------------------------------------------------------
// Human-readable summary
// ---------------------------------------------------------------------------

fn render_mat(m: &Mat) -> String {
    fjq_core::pfaff::render_matrix(m)
}

pub fn emit_summary(result: &Result<HamiltonianModel, ReductionFailure>) -> String {
    match result {
        Ok(model) => model_summary(model),
        Err(ReductionFailure::Obstruction(report)) => {
            let names: Vec<String> = match &report.kind {
                ObstructionKind::NonHomogeneousRank { witness } => (0..witness.nvars())
                    .map(|i| format!("w_{}", i + 1))
                    .collect(),
                _ => Vec::new(),
            };
            let kind_doc = obstruction_kind_doc(&report.kind, &names);
            let mut out = format!(
                "obstruction ({}) at reduction stage {}\n  {}\n",
                kind_doc.class, report.stage, report.detail
            );
            if let Some(w) = kind_doc.witness {
                out.push_str(&format!("  witness: {}\n", w.text));
            }
            out
        }
        Err(other) => format!("reduction failed: {}\n", failure_message(other)),
    }
}

fn model_summary(model: &HamiltonianModel) -> String {
    let mut out = String::new();
    let gauge_dropped: usize = model
        .provenance
        .iter()
        .map(|s| s.dropped_gauge.len())
        .sum();
    let pair_word = if model.pairs.len() == 1 { "pair" } else { "pairs" };
    let gauge_word = if gauge_dropped == 1 {
        "gauge mode"
    } else {
        "gauge modes"
    };
    out.push_str(&format!(
        "{} canonical {}; {} {} eliminated\n",
        model.pairs.len(),
        pair_word,
        gauge_dropped,
        gauge_word
    ));
    if model.dim() == 0 {
        out.push_str("0 dynamical degrees of freedom\n");
        return out;
    }
    for (x, p) in &model.pairs {
        out.push_str(&format!("  pair: ({}, {})\n", x, p));
    }
    for ic in &model.implicit {
        out.push_str(&format!(
            "  implicit coordinate: {} ({})
",
            model.coord_names[ic.index],
            fjq_core::symbolics::verdict_label(ic.verdict)
        ));
    }
    let names: Vec<String> = augmented_names(model, &model.coord_names);
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    out.push_str(&format!(
        "H = {}\n",
        model.hamiltonian.display(&name_refs)
    ));
    out.push_str("Poisson matrix:\n");
    out.push_str(&render_mat(&model.poisson));
    if model.rayleigh.is_zero() {
        out.push_str("no dissipation\n");
    } else {
        // The stored matrix M defines the dissipation function ½ żᵀM ż.
        let vel_names: Vec<String> = model
            .coord_names
            .iter()
            .map(|n| format!("d{}/dt", n))
            .collect();
        let vel_refs: Vec<&str> = vel_names.iter().map(|s| s.as_str()).collect();
        let mut f = EnergyExpr::zero(model.dim());
        for i in 0..model.dim() {
            for j in i..model.dim() {
                let c = if i == j {
                    model.rayleigh[(i, i)].clone() / Rat::from_integer(2.into())
                } else {
                    model.rayleigh[(i, j)].clone()
                };
                if c != Rat::default() {
                    f = f.add(&EnergyExpr::quad_term(model.dim(), i, j, c));
                }
            }
        }
        out.push_str(&format!("Rayleigh dissipation = {}\n", f.display(&vel_refs)));
    }
    if !model.sources.is_empty() {
        out.push_str("sources:\n");
        for (name, w) in &model.sources {
            out.push_str(&format!("  {} = {:?}\n", name, w));
        }
    }
    for (i, c) in model.compact_flags.iter().enumerate() {
        if *c != Compactness::Extended {
            out.push_str(&format!(
                "  compactness: {} is {}\n",
                model.coord_names[i],
                compactness_str(*c)
            ));
        }
    }
    for adv in &model.advisories {
        let doc = obstruction_kind_doc(adv, &names);
        out.push_str(&format!("advisory: {}\n", doc.class));
    }
    out
}
