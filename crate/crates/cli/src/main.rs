mod fail;
mod fsio;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use sprinkle_qo::analytics::{
    collect_metrics, complexity_params, unfinished_row, MetricsReport, MetricsRow,
};
use sprinkle_qo::joindag::DEFAULT_MAX_EDGES;
use sprinkle_qo::naive::DEFAULT_MAX_OPS;
use sprinkle_qo::optimizer::DEFAULT_MAX_JOINS;
use sprinkle_qo::{
    all_base_joins, build_complete_history, build_incremental, load_catalog, load_history,
    optimize_joindag, optimize_naive, parse_query, save_history, Catalog, Error, HistoryDag, Mode,
    OptimizeOptions, Optimized, Plan, QueryMetrics,
};

use fail::{Failure, Outcome};
use fsio::{read, write_atomic, HistoryLock};

#[derive(Parser)]
#[command(name = "sprinkle-qo", version, about = "Join-DAG query optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one query and write the chosen plan.
    Optimize(OptimizeArgs),
    /// Optimize every .sql file in a directory under each mode and write a CSV report.
    Bench(BenchArgs),
    /// Manage a persistent history join DAG.
    Histdag {
        #[command(subcommand)]
        action: HistAction,
    },
}

#[derive(Args)]
struct SchemaArgs {
    #[arg(long)]
    schema: PathBuf,
    /// Statistics file; overrides stats embedded in the schema.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct Limits {
    /// Operations (joins + selects) per query block in naive mode.
    #[arg(long, default_value_t = DEFAULT_MAX_OPS)]
    max_ops: usize,
    /// Joins per query block in join-DAG mode.
    #[arg(long, default_value_t = DEFAULT_MAX_JOINS)]
    max_joins: usize,
    /// Required to raise any limit above its default.
    #[arg(long = "i-know-this-is-factorial")]
    factorial_ok: bool,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    mode: Mode,
    /// History join DAG to start from (join-DAG mode); read, never modified.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Plan output (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    /// DAG export (Graphviz DOT).
    #[arg(long)]
    dot: Option<PathBuf>,
    /// One-row metrics CSV.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    limits: Limits,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "naive,joindag")]
    modes: Vec<Mode>,
    #[arg(long)]
    report: PathBuf,
    /// History join DAG to start the workload from; read, never modified.
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    limits: Limits,
}

#[derive(Subcommand)]
enum HistAction {
    /// Build the complete history over every foreign-key edge.
    Build {
        #[command(flatten)]
        schema: SchemaArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_EDGES)]
        max_edges: usize,
        #[arg(long = "i-know-this-is-factorial")]
        factorial_ok: bool,
    },
    /// Add a query's join conditions to an existing history.
    Add {
        #[arg(long)]
        history: PathBuf,
        #[command(flatten)]
        schema: SchemaArgs,
        #[arg(long)]
        query: PathBuf,
    },
    /// Print version, known joins and node counts.
    Show {
        #[arg(long)]
        history: PathBuf,
        /// Check the history against this schema.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, requires = "schema")]
        stats: Option<PathBuf>,
    },
    ExportDot {
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        dot: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, requires = "schema")]
        stats: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            return report(&Failure::Usage(
                msg.trim_start_matches("error: ").trim_end().to_string(),
            ));
        }
    };
    let result = match cli.command {
        Command::Optimize(a) => cmd_optimize(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Histdag { action } => cmd_histdag(action),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(&f),
    }
}

fn report(f: &Failure) -> ExitCode {
    let msg = f.to_string().replace('\n', " ");
    eprintln!("ERR:{}:{}: {msg}", f.code(), f.kind());
    ExitCode::from(f.code() as u8)
}

fn init_logging() {
    let level = match std::env::var("SPRINKLE_QO_LOG").as_deref() {
        Ok("debug") => log::LevelFilter::Debug,
        Ok("info") => log::LevelFilter::Info,
        _ => log::LevelFilter::Error,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
}

fn catalog(schema: &Path, stats: Option<&Path>) -> Outcome<Catalog> {
    let stats = stats.map(read).transpose()?;
    Ok(load_catalog(&read(schema)?, stats.as_deref())?)
}

impl SchemaArgs {
    fn load(&self) -> Outcome<Catalog> {
        catalog(&self.schema, self.stats.as_deref())
    }
}

fn optional_catalog(schema: Option<&Path>, stats: Option<&Path>) -> Outcome<Option<Catalog>> {
    schema.map(|s| catalog(s, stats)).transpose()
}

impl Limits {
    fn options(&self) -> Outcome<OptimizeOptions> {
        if !self.factorial_ok
            && (self.max_ops > DEFAULT_MAX_OPS || self.max_joins > DEFAULT_MAX_JOINS)
        {
            return Err(Failure::Usage(format!(
                "--max-ops above {DEFAULT_MAX_OPS} or --max-joins above {DEFAULT_MAX_JOINS} needs --i-know-this-is-factorial"
            )));
        }
        Ok(OptimizeOptions {
            max_ops: self.max_ops,
            max_joins: self.max_joins,
            ..OptimizeOptions::default()
        })
    }
}

fn query_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "query".into())
}

/// Loads the history at `path`, or builds the complete history from the
/// schema when the file does not exist yet. Without a path the workload
/// starts from an empty history.
fn starting_history(path: Option<&Path>, cat: &Catalog) -> Outcome<HistoryDag> {
    let Some(path) = path else {
        return Ok(HistoryDag::empty(cat));
    };
    if !path.exists() {
        info!(
            "{} not found; building the complete history",
            path.display()
        );
        return Ok(build_complete_history(cat, DEFAULT_MAX_EDGES)?);
    }
    let _lock = HistoryLock::shared(path)?;
    let h = load_history(path)?;
    h.check_catalog(cat)?;
    Ok(h)
}

#[derive(Serialize)]
struct PlanFile<'a> {
    query_id: &'a str,
    mode: Mode,
    metrics: &'a QueryMetrics,
    plan: &'a Plan,
}

fn to_json<T: Serialize>(v: &T) -> Outcome<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn run(
    mode: Mode,
    query: &sprinkle_qo::Query,
    cat: &Catalog,
    history: &mut HistoryDag,
    id: &str,
    opts: &OptimizeOptions,
) -> Result<Optimized, Error> {
    match mode {
        Mode::Naive => optimize_naive(query, cat, id, opts),
        Mode::Joindag => optimize_joindag(query, cat, history, id, opts),
    }
}

fn cmd_optimize(a: OptimizeArgs) -> Outcome {
    let opts = a.limits.options()?;
    let cat = a.schema.load()?;
    let query = parse_query(&read(&a.query)?, &cat)?;
    let id = query_id(&a.query);
    let mut history = match a.mode {
        Mode::Joindag => starting_history(a.history.as_deref(), &cat)?,
        Mode::Naive => HistoryDag::empty(&cat),
    };
    let out = run(a.mode, &query, &cat, &mut history, &id, &opts)?;
    let m = &out.metrics;

    println!("query: {id}");
    println!("mode: {}", a.mode.as_str());
    match a.mode {
        Mode::Naive => println!("permutations: {}", m.permutations.unwrap_or(0)),
        Mode::Joindag => println!("join_combinations: {}", m.join_combinations.unwrap_or(0)),
    }
    println!("eq_nodes: {}", m.eq_nodes);
    println!("op_nodes: {}", m.op_nodes);
    println!("plans: {}", m.plans);
    println!("best_cost: {}", m.best_cost);

    if let Some(path) = &a.out {
        write_atomic(
            path,
            &to_json(&PlanFile {
                query_id: &id,
                mode: a.mode,
                metrics: m,
                plan: &out.plan,
            })?,
        )?;
    }
    if let Some(path) = &a.dot {
        write_atomic(path, out.dag.export_dot().as_bytes())?;
    }
    if let Some(path) = &a.report {
        let params = complexity_params(&query, &cat)?;
        let report = MetricsReport {
            rows: vec![collect_metrics(&id, m, &params)],
        };
        write_atomic(path, report.to_csv()?.as_bytes())?;
    }
    Ok(())
}

fn sql_files(dir: &Path) -> Outcome<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", dir.display())))?
    {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "sql") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn cmd_bench(a: BenchArgs) -> Outcome {
    let opts = a.limits.options()?;
    let cat = a.schema.load()?;
    let mut history = starting_history(a.history.as_deref(), &cat)?;
    let mut rows: Vec<MetricsRow> = Vec::new();
    for file in sql_files(&a.queries)? {
        let id = query_id(&file);
        let parsed = read(&file).and_then(|text| Ok(parse_query(&text, &cat)?));
        let query = match parsed {
            Ok(q) => q,
            Err(f) => {
                warn!("{id}: {f}");
                rows.extend(
                    a.modes
                        .iter()
                        .map(|&mode| unfinished_row(&id, mode, None, "error", &f.to_string())),
                );
                continue;
            }
        };
        let params = complexity_params(&query, &cat).ok();
        for &mode in &a.modes {
            let row = match run(mode, &query, &cat, &mut history, &id, &opts) {
                Ok(out) => match &params {
                    Some(p) => collect_metrics(&id, &out.metrics, p),
                    None => unfinished_row(
                        &id,
                        mode,
                        None,
                        "error",
                        "complexity parameters unavailable",
                    ),
                },
                Err(e @ Error::LimitExceeded { .. }) => {
                    info!("{id} {}: skipped ({e})", mode.as_str());
                    unfinished_row(&id, mode, params.as_ref(), "skipped", &e.to_string())
                }
                Err(e) => {
                    warn!("{id} {}: {e}", mode.as_str());
                    unfinished_row(&id, mode, params.as_ref(), "error", &e.to_string())
                }
            };
            rows.push(row);
        }
    }
    let n = rows.len();
    write_atomic(&a.report, MetricsReport { rows }.to_csv()?.as_bytes())?;
    println!("rows: {n}");
    Ok(())
}

fn cmd_histdag(action: HistAction) -> Outcome {
    match action {
        HistAction::Build {
            schema,
            out,
            max_edges,
            factorial_ok,
        } => {
            if max_edges > DEFAULT_MAX_EDGES && !factorial_ok {
                return Err(Failure::Usage(format!(
                    "--max-edges above {DEFAULT_MAX_EDGES} needs --i-know-this-is-factorial"
                )));
            }
            let cat = schema.load()?;
            let _lock = HistoryLock::exclusive(&out)?;
            let h = build_complete_history(&cat, max_edges)?;
            save_history(&h, &out)?;
            show(&h);
        }
        HistAction::Add {
            history,
            schema,
            query,
        } => {
            let cat = schema.load()?;
            let q = parse_query(&read(&query)?, &cat)?;
            let _lock = HistoryLock::exclusive(&history)?;
            let old = load_history(&history)?;
            let h = build_incremental(&old, &all_base_joins(&q), &cat)?;
            save_history(&h, &history)?;
            show(&h);
        }
        HistAction::Show {
            history,
            schema,
            stats,
        } => {
            let h = locked_load(
                &history,
                optional_catalog(schema.as_deref(), stats.as_deref())?.as_ref(),
            )?;
            show(&h);
        }
        HistAction::ExportDot {
            history,
            dot,
            schema,
            stats,
        } => {
            let h = locked_load(
                &history,
                optional_catalog(schema.as_deref(), stats.as_deref())?.as_ref(),
            )?;
            write_atomic(&dot, h.dag.export_dot().as_bytes())?;
        }
    }
    Ok(())
}

fn locked_load(path: &Path, cat: Option<&Catalog>) -> Outcome<HistoryDag> {
    let _lock = HistoryLock::shared(path)?;
    let h = load_history(path)?;
    if let Some(cat) = cat {
        h.check_catalog(cat)?;
    }
    Ok(h)
}

fn show(h: &HistoryDag) {
    let c = h.dag.count_nodes();
    println!("version: {}", h.version);
    println!("known_joins: {}", h.known_joins.len());
    for j in h.known_joins.keys() {
        println!("  {j}");
    }
    println!("eq_nodes: {}", c.eq_total);
    println!("op_nodes: {}", c.op_count);
}
