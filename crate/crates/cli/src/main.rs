use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use metalevel::algebra::{self, OptimizeMode, VerdictKind};
use metalevel::automata::{self, PruneOptions};
use metalevel::chase;
use metalevel::graphdb::{check_description_binding, validate_graph, GraphDatabase};
use metalevel::io;
use metalevel::model::{validate_all, Instance, Schema};
use metalevel::pathquery::{eval_from_root, parse_path_query, PathQuery};

#[derive(Parser)]
#[command(name = "metalevel", version, about = "Meta-data driven query optimization")]
struct Cli {
    /// Exit with status 1 when a command reports findings.
    #[arg(long, global = true)]
    fail_on_findings: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Constraint,
    Instance,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a schema and instance.
    Validate {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        instance: PathBuf,
    },
    /// Print the description query M(Q).
    RewriteM {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        query: PathBuf,
        /// Translate differences as well (not containment-preserving).
        #[arg(long)]
        with_diff: bool,
    },
    /// Optimize a query against the meta-level of an instance.
    Optimize {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        constraints: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "constraint")]
        mode: Mode,
    },
    /// Chase the conjunctive form of a query with implication constraints.
    Chase {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        constraints: PathBuf,
    },
    /// Evaluate an algebra query.
    Eval {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        query: PathBuf,
    },
    /// Prune a path query against meta-data.
    Prune {
        /// Query text, or a file containing it.
        #[arg(long)]
        query: String,
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        import_meta_restrictions: bool,
        /// Write the product automaton in DOT format.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Evaluate a path query from the root of a graph.
    GraphEval {
        #[arg(long)]
        query: String,
        #[arg(long)]
        db: PathBuf,
    },
    /// Check a description binding between two graphs.
    CheckSim {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        mu: PathBuf,
        #[arg(long)]
        strict: bool,
    },
}

/// Errors that abort a command; reported with exit status 2.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Outcome = Result<bool, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn in_file<T, E: std::fmt::Display>(path: &Path, r: Result<T, E>) -> Result<T, Failure> {
    r.map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn load_schema(path: &Path) -> Result<Schema, Failure> {
    in_file(path, io::parse_schema(&read(path)?))
}

fn load_both(schema: &Path, instance: &Path) -> Result<(Schema, Instance), Failure> {
    let s = load_schema(schema)?;
    let i = in_file(instance, io::parse_instance(&read(instance)?))?;
    let violations = validate_all(&s, &i);
    if !violations.is_empty() {
        return Err(Failure(io::IoError::Invalid(violations).to_string()));
    }
    Ok((s, i))
}

fn load_query(path: &Path) -> Result<algebra::Query, Failure> {
    in_file(path, io::parse_algebra_query(&read(path)?))
}

fn load_graph(path: &Path) -> Result<GraphDatabase, Failure> {
    in_file(path, io::load_graph_xml(&read(path)?))
}

fn path_query(arg: &str) -> Result<PathQuery, Failure> {
    let path = Path::new(arg);
    let text = if path.is_file() { read(path)? } else { arg.to_string() };
    parse_path_query(text.trim()).map_err(|e| Failure(format!("query: {e}")))
}

fn run(command: Command, out: &mut impl Write) -> Outcome {
    match command {
        Command::Validate { schema, instance } => {
            let s = load_schema(&schema)?;
            let i = in_file(&instance, io::parse_instance(&read(&instance)?))?;
            let violations = validate_all(&s, &i);
            let mut lines: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            lines.sort();
            for l in &lines {
                writeln!(out, "{l}")?;
            }
            if lines.is_empty() {
                writeln!(out, "ok")?;
            }
            Ok(!lines.is_empty())
        }
        Command::RewriteM {
            schema,
            query,
            with_diff,
        } => {
            let s = load_schema(&schema)?;
            let q = load_query(&query)?;
            let m = if with_diff {
                algebra::m_rewrite_with_diff(&q, &s)?
            } else {
                algebra::m_rewrite(&q, &s)?
            };
            writeln!(out, "{m}")?;
            Ok(false)
        }
        Command::Optimize {
            schema,
            instance,
            query,
            constraints,
            mode,
        } => {
            let (s, i) = load_both(&schema, &instance)?;
            let q = load_query(&query)?;
            let ics = match &constraints {
                Some(p) => in_file(p, io::load_constraints(&read(p)?))?,
                None => Vec::new(),
            };
            let mode = match mode {
                Mode::Constraint => OptimizeMode::Constraint,
                Mode::Instance => OptimizeMode::Instance,
            };
            let meta_id = instance
                .file_stem()
                .map_or("meta".into(), |s| s.to_string_lossy().into_owned());
            let opt = algebra::optimize_with_meta(&q, &s, &i, &meta_id, mode, &ics)?;
            writeln!(out, "{}", opt.query)?;
            for v in &opt.verdicts {
                writeln!(out, "# {v}")?;
            }
            Ok(opt.verdicts.iter().any(|v| v.kind != VerdictKind::Unchanged))
        }
        Command::Chase {
            schema,
            query,
            constraints,
        } => {
            let s = load_schema(&schema)?;
            let q = load_query(&query)?;
            let ics = in_file(&constraints, io::load_constraints(&read(&constraints)?))?;
            let form = chase::conjunctive_form(&q, &s)?;
            let (chased, facts) = chase::chase_apply(&form.cq, &ics);
            writeln!(out, "{chased}")?;
            for f in &facts {
                writeln!(out, "# derived {f}")?;
            }
            let conflict = chase::is_unsatisfiable(&chased);
            if let Some((a, b)) = &conflict {
                writeln!(out, "# unsatisfiable: {a} contradicts {b}")?;
            }
            Ok(conflict.is_some())
        }
        Command::Eval {
            schema,
            instance,
            query,
        } => {
            let (s, i) = load_both(&schema, &instance)?;
            let q = load_query(&query)?;
            let result = algebra::eval_algebra(&q, &s, &i)?;
            writeln!(out, "# {}", result.row.join(" "))?;
            for t in &result.tuples {
                let t: Vec<&str> = t.iter().map(|o| o.as_str()).collect();
                writeln!(out, "{}", t.join(" "))?;
            }
            Ok(false)
        }
        Command::Prune {
            query,
            meta,
            import_meta_restrictions,
            dot,
        } => {
            let q = path_query(&query)?;
            let m = load_graph(&meta)?;
            let opts = PruneOptions {
                import_meta_restrictions,
            };
            if let Some(dot) = dot {
                let prod = automata::product_with(&automata::query_to_fsa(&q), &automata::graph_to_fsa(&m), opts);
                fs::write(&dot, automata::trim(&prod).to_dot())
                    .map_err(|e| Failure(format!("{}: {e}", dot.display())))?;
            }
            writeln!(out, "{}", automata::prune_with(&q, &m, opts))?;
            Ok(false)
        }
        Command::GraphEval { query, db } => {
            let q = path_query(&query)?;
            let g = load_graph(&db)?;
            for n in eval_from_root(&q, &g) {
                writeln!(out, "{n}")?;
            }
            Ok(false)
        }
        Command::CheckSim { db, meta, mu, strict } => {
            let i = load_graph(&db)?;
            let m = load_graph(&meta)?;
            let binding = in_file(&mu, io::load_binding(&read(&mu)?))?;
            let mut lines: Vec<String> = validate_graph(&i)
                .iter()
                .map(|v| format!("{}: {v}", db.display()))
                .chain(validate_graph(&m).iter().map(|v| format!("{}: {v}", meta.display())))
                .chain(
                    check_description_binding(&i, &m, &binding, strict)
                        .iter()
                        .map(|v| v.to_string()),
                )
                .collect();
            lines.sort();
            for l in &lines {
                writeln!(out, "{l}")?;
            }
            if lines.is_empty() {
                writeln!(out, "ok")?;
            }
            Ok(!lines.is_empty())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    match run(cli.command, &mut stdout.lock()) {
        Ok(true) if cli.fail_on_findings => ExitCode::from(1),
        Ok(_) => ExitCode::SUCCESS,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
