//! `logpi1`: command-line front end. Exit status 0 means a result was
//! computed (whatever the verdict), 2 a malformed command line, 3 bad input.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use logpi1_core::bar::{build_bar_for_model, report as bar_report};
use logpi1_core::cdga::{validate, Cdga};
use logpi1_core::curve_monodromy::{
    analyze, loop_check, presentation, validate_graph, BaseDatum, GraphInput, Stability, Witness,
};
use logpi1_core::exactlin::format_scalar;
use logpi1_core::minimal::{check_minimality, dual_lie, MinimalModel, MinimalModelJson};
use logpi1_core::nilpotent_lie::{
    display_scalar, GroupElement, InnerVerdict, LieAutomorphism, LieError, LieExpr, NilpotentLie,
};

#[derive(Parser)]
#[command(name = "logpi1", version, about = "Exact 1-minimal models, bar constructions and curve monodromy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Write the JSON report to this file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for instance-level parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Stable,
    MinimalSemistable,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a cdga, a minimal model, or a dual graph.
    Validate {
        file: PathBuf,
        /// Stability notion for dual graphs.
        #[arg(long, value_enum, default_value_t = Kind::MinimalSemistable)]
        kind: Kind,
    },
    /// Build the Q-stage minimal model of a cdga.
    MinimalModel {
        file: PathBuf,
        #[arg(long, default_value_t = 3)]
        stages: usize,
    },
    /// Bar construction of the minimal model: H⁰, indecomposables, E₁.
    Bar {
        file: PathBuf,
        #[arg(long, default_value_t = 3)]
        stages: usize,
        #[arg(long, default_value_t = 3)]
        cap: usize,
    },
    /// Truncated nilpotent Lie algebras.
    Lie {
        #[command(subcommand)]
        command: LieCommand,
    },
    /// Dual graphs of degenerating curves.
    Curve {
        #[command(subcommand)]
        command: CurveCommand,
    },
}

#[derive(Subcommand)]
enum LieCommand {
    /// Graded dimensions of a free algebra, optionally modulo relators.
    Dims {
        #[arg(long)]
        gens: usize,
        #[arg(long, default_value_t = 4)]
        q: usize,
        /// Relator such as "[x1,x2]+[x3,x4]"; repeatable.
        #[arg(long)]
        relator: Vec<String>,
    },
    /// log(exp x · exp y) in the free algebra on x, y.
    Bch {
        #[arg(long, default_value_t = 4)]
        q: usize,
        #[arg(default_value = "x")]
        x: String,
        #[arg(default_value = "y")]
        y: String,
    },
    /// Decide whether an automorphism given in a JSON file is inner.
    Inner { file: PathBuf },
}

#[derive(Subcommand)]
enum CurveCommand {
    Presentation {
        file: PathBuf,
        #[arg(long)]
        q: Option<usize>,
    },
    Analyze {
        file: PathBuf,
        #[arg(long)]
        q: Option<usize>,
    },
    Loop {
        file: PathBuf,
        /// Edge ids of the loop, comma separated; found automatically if absent.
        #[arg(long, value_delimiter = ',')]
        cycle: Option<Vec<String>>,
    },
}

/// Input for `lie inner`: generator images as expressions.
#[derive(Deserialize)]
struct InnerInput {
    generators: Vec<String>,
    q: usize,
    #[serde(default)]
    relators: Vec<String>,
    images: BTreeMap<String, String>,
}

/// A computed result: a JSON report plus its text summary.
struct Outcome {
    report: Value,
    summary: String,
}

fn input_error(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_cdga(path: &Path) -> Result<Cdga, String> {
    let v = read_json(path)?;
    Cdga::from_json(&serde_json::from_value(v).map_err(input_error)?).map_err(input_error)
}

fn load_graph(path: &Path) -> Result<GraphInput, String> {
    serde_json::from_value(read_json(path)?).map_err(input_error)
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialize")
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

fn run_validate(file: &Path, kind: Kind) -> Result<Outcome, String> {
    let v = read_json(file)?;
    if v.get("vertices").is_some() {
        let g: GraphInput = serde_json::from_value(v).map_err(input_error)?;
        let kind = match kind {
            Kind::Stable => Stability::Stable,
            Kind::MinimalSemistable => Stability::MinimalSemistable,
        };
        validate_graph(&g.graph, kind).map_err(input_error)?;
        return Ok(Outcome {
            report: json!({"object": "dual_graph", "kind": to_value(&kind), "valid": true}),
            summary: "valid dual graph".into(),
        });
    }
    if v.get("stages").is_some() {
        let j: MinimalModelJson = serde_json::from_value(v).map_err(input_error)?;
        let m = MinimalModel::from_json(&j).map_err(input_error)?;
        let r = check_minimality(&m, m.source());
        if let Some((stage, why)) = r.failure {
            return Err(format!("minimal model fails at stage {stage}: {why}"));
        }
        return Ok(Outcome {
            report: json!({"object": "minimal_model", "valid": true, "stage_dims": m.stage_dims()}),
            summary: format!("valid minimal model, stage dims {}", join(&m.stage_dims())),
        });
    }
    let a = Cdga::from_json(&serde_json::from_value(v).map_err(input_error)?).map_err(input_error)?;
    let r = validate(&a);
    if let Some(why) = r.violation {
        return Err(format!("invalid cdga: {why:?}"));
    }
    Ok(Outcome {
        report: json!({"object": "cdga", "valid": true, "dims": a.dims()}),
        summary: format!("valid cdga, dims {}", join(&a.dims())),
    })
}

fn run_minimal(file: &Path, stages: usize) -> Result<Outcome, String> {
    let a = load_cdga(file)?;
    let m = MinimalModel::build(&a, stages).map_err(input_error)?;
    let check = check_minimality(&m, &a);
    let lie = dual_lie(&m).map_err(input_error)?;
    let mut summary = format!("stage dims: {}\n", join(&m.stage_dims()));
    summary += &format!("dual Lie gr dims: {}\n", join(&lie.lie.gr_dims()));
    summary += &format!("minimality: {}", if check.passed() { "passed" } else { "FAILED" });
    for k in m.stage_dims().first().copied().unwrap_or(0)..m.generators().len() {
        summary += &format!("\n  {}", m.format_differential(k));
    }
    let report = json!({
        "stages": stages,
        "stage_dims": m.stage_dims(),
        "dual_lie_gr_dims": lie.lie.gr_dims(),
        "minimality_passed": check.passed(),
        "relative_h2": check.relative_h2,
        "model": to_value(&m.to_json().map_err(input_error)?),
    });
    Ok(Outcome { report, summary })
}

fn run_bar(file: &Path, stages: usize, cap: usize) -> Result<Outcome, String> {
    let a = load_cdga(file)?;
    let m = MinimalModel::build(&a, stages).map_err(input_error)?;
    let bar = build_bar_for_model(&m, cap).map_err(input_error)?;
    let r = bar_report(&bar).map_err(input_error)?;
    let summary = format!(
        "gr H0 dims: {}\nindecomposable dims: {}\nE1 routes agree: {}\nHopf axioms: {}\ncomparison with M1: isomorphism {}, intertwines {}",
        join(&r.gr_dims),
        join(&r.indecomposable_dims),
        r.e1_agree,
        if r.hopf_axioms.is_ok() { "hold" } else { "FAIL" },
        r.comparison_isomorphism,
        r.comparison_intertwines,
    );
    Ok(Outcome { report: to_value(&r), summary })
}

fn generator_names(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("x{i}")).collect()
}

fn build_lie(gens: Vec<String>, q: usize, relators: &[String]) -> Result<NilpotentLie, String> {
    let free = NilpotentLie::free(gens, q).map_err(input_error)?;
    if relators.is_empty() {
        return Ok(free);
    }
    let exprs = relators.iter().map(|r| LieExpr::parse(r)).collect::<Result<Vec<_>, _>>().map_err(input_error)?;
    free.quotient_by_exprs(&exprs).map_err(input_error)
}

fn run_lie(cmd: &LieCommand) -> Result<Outcome, String> {
    match cmd {
        LieCommand::Dims { gens, q, relator } => {
            let lie = build_lie(generator_names(*gens), *q, relator)?;
            let dims = lie.gr_dims();
            Ok(Outcome {
                report: json!({"generators": lie.generators(), "q": q, "gr_dims": dims}),
                summary: join(&dims),
            })
        }
        LieCommand::Bch { q, x, y } => {
            let lie = build_lie(vec!["x".into(), "y".into()], *q, &[])?;
            let ex = lie.eval(&LieExpr::parse(x).map_err(input_error)?).map_err(input_error)?;
            let ey = lie.eval(&LieExpr::parse(y).map_err(input_error)?).map_err(input_error)?;
            let z = lie.bch(&GroupElement(ex), &GroupElement(ey)).map_err(input_error)?;
            Ok(Outcome {
                report: json!({"q": q, "x": x, "y": y, "bch": lie.element_to_json(&z.0)}),
                summary: lie.format(&z.0),
            })
        }
        LieCommand::Inner { file } => {
            let input: InnerInput = serde_json::from_value(read_json(file)?).map_err(input_error)?;
            let lie = build_lie(input.generators.clone(), input.q, &input.relators)?;
            let mut images = Vec::new();
            for g in lie.generators() {
                let expr = input.images.get(g).map(String::as_str).unwrap_or(g.as_str());
                images.push(lie.eval(&LieExpr::parse(expr).map_err(input_error)?).map_err(input_error)?);
            }
            let phi = LieAutomorphism::new(&lie, images).map_err(input_error)?;
            Ok(match lie.is_inner(&phi) {
                Ok(InnerVerdict::Inner { witness, .. }) => Outcome {
                    summary: format!("inner, d = {}", lie.format(&witness)),
                    report: json!({"verdict": "inner", "witness": lie.element_to_json(&witness)}),
                },
                Ok(InnerVerdict::NotInner(ob)) => Outcome {
                    summary: format!("not inner (obstruction degree {}→{})", ob.degree, ob.degree + 1),
                    report: json!({
                        "verdict": "not_inner",
                        "degree": ob.degree,
                        "forced_vanishing": ob.forced_vanishing(),
                        "generator": ob.generator.map(|i| lie.generators()[i].clone()),
                    }),
                },
                Err(LieError::Undecided(why)) => Outcome {
                    summary: format!("undecided: {why}"),
                    report: json!({"verdict": "undecided", "reason": why}),
                },
                Err(e) => return Err(e.to_string()),
            })
        }
    }
}

fn run_curve(cmd: &CurveCommand) -> Result<Outcome, String> {
    match cmd {
        CurveCommand::Presentation { file, q } => {
            let g = load_graph(file)?;
            let q = q.or(g.q).unwrap_or(4);
            let p = presentation(&g.graph, q).map_err(input_error)?;
            let side_map = |m: &BTreeMap<(String, u8), _>| -> BTreeMap<String, Value> {
                m.iter().map(|((e, s), x)| (format!("{e}:{s}"), to_value(&p.lie.element_to_json(x)))).collect()
            };
            let blocks: BTreeMap<&String, Vec<&String>> = p
                .blocks
                .iter()
                .map(|(v, idx)| (v, idx.iter().map(|&i| &p.lie.generators()[i]).collect()))
                .collect();
            let mut summary = format!("generators: {}\ngr dims: {}", p.lie.generators().join(" "), join(&p.lie.gr_dims()));
            for ((e, s), x) in &p.residues {
                summary += &format!("\ne({e}, {s}) = {}", p.lie.format(x));
            }
            let report = json!({
                "q": q,
                "lie": to_value(&p.lie.to_json()),
                "symbols": p.symbols,
                "relations": p.relations.iter().map(|r| r.to_string()).collect::<Vec<_>>(),
                "residues": side_map(&p.residues),
                "gluing": side_map(&p.gluing),
                "blocks": to_value(&blocks),
            });
            Ok(Outcome { report, summary })
        }
        CurveCommand::Analyze { file, q } => {
            let g = load_graph(file)?;
            let q = q.or(g.q).unwrap_or(4);
            let base = match g.base.clone() {
                Some(b) => b,
                None => match g.graph.edges.first() {
                    Some(e) => BaseDatum::Tangential { edge: e.id.clone(), side: 1 },
                    None => BaseDatum::Good { vertex: g.graph.vertices.first().map(|v| v.id.clone()).unwrap_or_default() },
                },
            };
            let r = analyze(&g.graph, &base, q).map_err(input_error)?;
            let detail = match &r.witness {
                Witness::Obstruction { degree, .. } => format!(" (obstruction degree {}→{})", degree, degree + 1),
                Witness::LoopPairing { length, value } => {
                    format!(" (loop of length {length}, pairing {})", value.strip_suffix("/1").unwrap_or(value))
                }
                Witness::Inner { .. } => " (inner witness)".into(),
                Witness::Identity | Witness::Reason { .. } => String::new(),
            };
            let mut summary = format!("{}{}", r.verdict, detail);
            for t in &r.trace {
                summary += &format!("\n  {t}");
            }
            Ok(Outcome { report: to_value(&r), summary })
        }
        CurveCommand::Loop { file, cycle } => {
            let g = load_graph(file)?;
            let v = loop_check(&g.graph, cycle.as_deref()).map_err(input_error)?;
            Ok(Outcome {
                report: json!({"pairing": format_scalar(&v)}),
                summary: format!("loop pairing {}", display_scalar(&v)),
            })
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome, String> {
    match &cli.command {
        Command::Validate { file, kind } => run_validate(file, *kind),
        Command::MinimalModel { file, stages } => run_minimal(file, *stages),
        Command::Bar { file, stages, cap } => run_bar(file, *stages, *cap),
        Command::Lie { command } => run_lie(command),
        Command::Curve { command } => run_curve(command),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match run(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    // serde_json's default map is ordered, so this is canonical.
    let text = serde_json::to_string_pretty(&outcome.report).expect("json values serialize") + "\n";
    if let Some(path) = &cli.out {
        if let Err(e) = fs::write(path, &text) {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(3);
        }
    }
    let shown = match cli.format {
        Format::Json => text,
        Format::Text => outcome.summary + "\n",
    };
    // A closed pipe downstream is not an error of ours.
    let _ = std::io::stdout().write_all(shown.as_bytes());
    ExitCode::SUCCESS
}
