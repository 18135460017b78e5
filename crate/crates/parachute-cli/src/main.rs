//! Command-line driver: ingest CSVs into a bundle, attach parachute
//! columns, inspect information flow, execute queries, and run the
//! workload experiments. One command per process, exit code 0 or 1.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use parachute::attach::{build_and_attach, AttachOptions};
use parachute::bench::{
    bench_queries, generate_snowflake, insert_bench, predicted_extra_bytes, sweep,
    InsertBenchOptions, SweepOptions,
};
use parachute::catalog::{ParachuteKind, Schema};
use parachute::db::Database;
use parachute::engine::{run_query, ExecMode, ExecOptions};
use parachute::oracle::{dangling_report, yannakakis_reduce, DanglingReport, OracleSets};
use parachute::planner::{
    analyze_flow, blocked_pairs, greedy_plan, query_id, FlowMode, PlanNode, Query,
};
use parachute::value::Value;

#[derive(Parser)]
#[command(name = "parachute", version, about = "Columnar engine with precomputed join-induced filter columns")]
struct Cli {
    /// Seed for sampling, data generation, and benchmarks.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest per-table CSVs under a schema and write a bundle directory.
    Load {
        /// Schema definition, JSON.
        #[arg(long)]
        schema: PathBuf,
        /// Directory holding one <table>.csv per schema table.
        #[arg(long)]
        data: PathBuf,
        /// Bundle directory to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the parachute columns listed in a spec file and save them
    /// into the bundle.
    Attach {
        #[arg(long)]
        bundle: PathBuf,
        /// JSON array of {fk_table, pk_table, source_column, kind}.
        #[arg(long)]
        spec: PathBuf,
        /// Parachute bit width.
        #[arg(long)]
        pbw: u32,
        /// Mark rows without a join partner instead of failing on them.
        #[arg(long)]
        relaxed: bool,
    },
    /// Print a query's pipelines, the information-flow closure, and the
    /// filters whose effect cannot reach their FK neighbors.
    Analyze {
        #[arg(long)]
        bundle: PathBuf,
        /// Query, JSON.
        #[arg(long)]
        query: PathBuf,
        /// Plan tree, JSON; derived greedily when absent.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// psf, lip, or build-push.
        #[arg(long, value_parser = parse_flow_mode)]
        flow_mode: FlowMode,
    },
    /// Execute a query and write its metrics.
    Run {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        query: PathBuf,
        /// Plan tree, JSON; derived greedily when absent.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// off, psf, parachute, or both.
        #[arg(long, value_parser = parse_exec_mode)]
        mode: ExecMode,
        /// Exact non-dangling row sets; read from this file when it
        /// exists, otherwise computed and saved there.
        #[arg(long)]
        oracle: Option<PathBuf>,
        /// Metrics JSON output path.
        #[arg(long)]
        metrics: PathBuf,
        /// Also write the result summary as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact semi-join reduction: per-alias surviving row counts.
    Oracle {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        query: PathBuf,
        /// Write the surviving row sets as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a deterministic snowflake dataset: schema, CSVs, attach
    /// spec, and query suite.
    Generate {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Fact-table size multiplier.
        #[arg(long, default_value_t = 1)]
        scale: usize,
        /// Queries generated per template.
        #[arg(long, default_value_t = 2)]
        per_template: usize,
    },
    /// Dangling-fraction sweep over bit widths and execution modes.
    Sweep {
        #[arg(long, default_value_t = 1)]
        scale: usize,
        /// Bit widths, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = vec![2u32, 4, 8, 16])]
        pbw: Vec<u32>,
        /// Modes, comma separated; all four when absent.
        #[arg(long, value_delimiter = ',', value_parser = parse_exec_mode)]
        modes: Option<Vec<ExecMode>>,
        #[arg(long, default_value_t = 2)]
        per_template: usize,
        /// Full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Per-cell summary as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Insert maintenance timing, split into join-lookup and column-write
    /// phases for a numeric and a string descriptor.
    InsertBench {
        #[arg(long, default_value_t = 1)]
        scale: usize,
        #[arg(long, default_value_t = 8)]
        pbw: u32,
        /// Batch sizes as fractions of the fact table, comma separated.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

/// One entry of an attach spec file.
#[derive(Serialize, Deserialize)]
struct AttachRequest {
    fk_table: String,
    pk_table: String,
    source_column: String,
    kind: ParachuteKind,
}

fn parse_exec_mode(s: &str) -> Result<ExecMode, parachute::Error> {
    s.parse()
}

fn parse_flow_mode(s: &str) -> Result<FlowMode, String> {
    match s {
        "psf" => Ok(FlowMode::Psf),
        "lip" => Ok(FlowMode::Lip),
        "build-push" => Ok(FlowMode::BuildPush),
        other => Err(format!("unknown flow mode '{other}' (expected psf, lip, or build-push)")),
    }
}

fn main() -> ExitCode {
    let env = env_logger::Env::new().filter_or("PARACHUTE_LOG", "error");
    env_logger::Builder::from_env(env).format_timestamp(None).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprint!("{e}");
            return ExitCode::FAILURE;
        }
        Err(e) => {
            // Help and version go to stdout and are not failures.
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), String> {
    let seed = cli.seed;
    match cli.command {
        Command::Load { schema, data, out } => cmd_load(&schema, &data, &out),
        Command::Attach { bundle, spec, pbw, relaxed } => {
            cmd_attach(&bundle, &spec, pbw, relaxed, seed)
        }
        Command::Analyze { bundle, query, plan, flow_mode } => {
            cmd_analyze(&bundle, &query, plan.as_deref(), flow_mode)
        }
        Command::Run { bundle, query, plan, mode, oracle, metrics, out } => {
            cmd_run(&bundle, &query, plan.as_deref(), mode, oracle.as_deref(), &metrics, out.as_deref())
        }
        Command::Oracle { bundle, query, out } => cmd_oracle(&bundle, &query, out.as_deref()),
        Command::Generate { out, scale, per_template } => {
            cmd_generate(&out, seed, scale, per_template)
        }
        Command::Sweep { scale, pbw, modes, per_template, json, csv } => {
            cmd_sweep(seed, scale, pbw, modes, per_template, json.as_deref(), csv.as_deref())
        }
        Command::InsertBench { scale, pbw, fractions, repeats, json } => {
            cmd_insert_bench(seed, scale, pbw, fractions, repeats, json.as_deref())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, String> {
    let bytes = fs::read(path)
        .map_err(|e| format!("cannot read {what} '{}': {e}", path.display()))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| format!("invalid {what} '{}': {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T, what: &str) -> Result<(), String> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| format!("cannot serialize {what}: {e}"))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| format!("cannot write {what} '{}': {e}", path.display()))
}

fn load_bundle(path: &Path) -> Result<Database, String> {
    Database::load(path).map_err(|e| format!("cannot load bundle '{}': {e}", path.display()))
}

fn load_query(db: &Database, path: &Path) -> Result<Query, String> {
    let query: Query = read_json(path, "query")?;
    query.validate(&db.catalog.schema).map_err(|e| e.to_string())?;
    Ok(query)
}

fn load_plan(path: Option<&Path>) -> Result<Option<PlanNode>, String> {
    match path {
        Some(p) => Ok(Some(read_json(p, "plan")?)),
        None => Ok(None),
    }
}

fn cmd_load(schema_path: &Path, data: &Path, out: &Path) -> Result<(), String> {
    let schema: Schema = read_json(schema_path, "schema")?;
    let mut db = Database::new(schema);
    let tables: Vec<String> =
        db.catalog.schema.tables.iter().map(|t| t.name.clone()).collect();
    for table in &tables {
        let csv = data.join(format!("{table}.csv"));
        if !csv.is_file() {
            return Err(format!("missing CSV for table '{table}': {}", csv.display()));
        }
        let rows = db.load_csv(table, &csv).map_err(|e| e.to_string())?;
        println!("{table}: {rows} rows");
    }
    db.save(out).map_err(|e| e.to_string())?;
    println!("bundle written to {}", out.display());
    Ok(())
}

fn cmd_attach(
    bundle: &Path,
    spec: &Path,
    pbw: u32,
    relaxed: bool,
    seed: u64,
) -> Result<(), String> {
    let mut db = load_bundle(bundle)?;
    let requests: Vec<AttachRequest> = read_json(spec, "attach spec")?;
    if requests.is_empty() {
        return Err(format!("attach spec '{}' lists no descriptors", spec.display()));
    }
    let opts = AttachOptions { seed, strict: !relaxed, ..AttachOptions::default() };
    for req in &requests {
        let stats = build_and_attach(
            &mut db,
            &req.fk_table,
            &req.pk_table,
            &req.source_column,
            pbw,
            req.kind,
            &opts,
        )
        .map_err(|e| e.to_string())?;
        println!(
            "descriptor {} {}.{} [{}]: {} bytes, build {} us (join {}, write {}), {} lookups, {} without partner",
            stats.descriptor_id,
            stats.fk_table,
            stats.parachute_column,
            req.kind.as_str(),
            stats.reported_bytes,
            stats.build_micros,
            stats.join_micros,
            stats.write_micros,
            stats.join_lookups,
            stats.no_partner_rows,
        );
    }
    let formula = predicted_extra_bytes(&db).map_err(|e| e.to_string())?;
    println!(
        "attached {} descriptors at pbw {pbw}; extra space {} bytes (formula {formula})",
        requests.len(),
        db.extra_bytes(),
    );
    db.save(bundle).map_err(|e| e.to_string())?;
    Ok(())
}

fn render_plan(plan: &PlanNode) -> String {
    match plan {
        PlanNode::Scan { alias } => alias.clone(),
        PlanNode::Join { build, probe } => {
            format!("({} joins {})", render_plan(build), render_plan(probe))
        }
    }
}

fn print_matrix(title: &str, names: &[String], m: &[Vec<bool>]) {
    println!("{title}");
    let width = names.iter().map(|n| n.len()).max().unwrap_or(1).max(2);
    print!("{:width$}", "");
    for n in names {
        print!(" {n:>width$}");
    }
    println!();
    for (i, n) in names.iter().enumerate() {
        print!("{n:>width$}");
        for j in 0..names.len() {
            print!(" {:>width$}", if m[i][j] { "x" } else { "." });
        }
        println!();
    }
}

fn cmd_analyze(
    bundle: &Path,
    query_path: &Path,
    plan_path: Option<&Path>,
    mode: FlowMode,
) -> Result<(), String> {
    let db = load_bundle(bundle)?;
    let query = load_query(&db, query_path)?;
    let plan = match load_plan(plan_path)? {
        Some(p) => p,
        None => greedy_plan(&query, &db).map_err(|e| e.to_string())?,
    };
    let analysis =
        analyze_flow(&db.catalog.schema, &query, &plan, mode).map_err(|e| e.to_string())?;
    let report = blocked_pairs(&query, &analysis, &db.catalog).map_err(|e| e.to_string())?;

    println!("plan: {}", render_plan(&plan));
    for (p, members) in analysis.pipelines.members.iter().enumerate() {
        println!(
            "pipeline {p}: probes {}, members [{}]",
            analysis.pipelines.probe_leaf[p],
            members.join(", "),
        );
    }
    print_matrix(
        "reachability closure, x = row alias reaches column alias:",
        &analysis.aliases,
        &analysis.closure,
    );
    if report.pairs.is_empty() {
        println!("blocked pairs: none");
    } else {
        println!("blocked pairs:");
        for p in &report.pairs {
            println!(
                "  filter {} on {}.{} cannot reach {} ({}); descriptor {} carries it",
                p.filter_index, p.source_alias, p.column, p.target_alias, p.target_table,
                p.descriptor_id,
            );
        }
    }
    for r in &report.refusals {
        println!(
            "  filter {} not translatable via descriptor {}: {}",
            r.filter_index, r.descriptor_id, r.reason,
        );
    }
    Ok(())
}

/// What `run` writes to its metrics file.
#[derive(Serialize)]
struct RunArtifact<'a> {
    metrics: &'a parachute::engine::ExecMetrics,
    blocked: &'a parachute::planner::BlockedReport,
    plan: &'a PlanNode,
    #[serde(skip_serializing_if = "Option::is_none")]
    dangling: Option<&'a DanglingReport>,
}

#[derive(Serialize)]
struct RunSummary {
    query_id: u64,
    mode: ExecMode,
    result_rows: u64,
    result_checksum: u64,
    micros: u64,
    parachute_predicates: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    dangling_fraction: Option<f64>,
}

fn cmd_run(
    bundle: &Path,
    query_path: &Path,
    plan_path: Option<&Path>,
    mode: ExecMode,
    oracle_path: Option<&Path>,
    metrics_path: &Path,
    out: Option<&Path>,
) -> Result<(), String> {
    let db = load_bundle(bundle)?;
    let query = load_query(&db, query_path)?;
    let plan = load_plan(plan_path)?;
    let opts = ExecOptions::with_mode(mode);
    let (metrics, blocked, plan_used) =
        run_query(&db, &query, plan.as_ref(), &opts).map_err(|e| e.to_string())?;

    let dangling = match oracle_path {
        Some(path) => {
            let sets: OracleSets = if path.is_file() {
                read_json(path, "oracle sets")?
            } else {
                let sets = yannakakis_reduce(&db, &query).map_err(|e| e.to_string())?;
                write_json(path, &sets, "oracle sets")?;
                sets
            };
            Some(dangling_report(&metrics, &sets).map_err(|e| e.to_string())?)
        }
        None => None,
    };

    let artifact = RunArtifact {
        metrics: &metrics,
        blocked: &blocked,
        plan: &plan_used,
        dangling: dangling.as_ref(),
    };
    write_json(metrics_path, &artifact, "metrics")?;

    let summary = RunSummary {
        query_id: metrics.query_id,
        mode: metrics.mode,
        result_rows: metrics.result_rows,
        result_checksum: metrics.result_checksum,
        micros: metrics.micros,
        parachute_predicates: blocked.pairs.len(),
        dangling_fraction: dangling.as_ref().map(|d| d.fraction),
    };
    println!(
        "query {:016x} mode {}: {} rows, checksum {:016x}, {} us, {} parachute predicates",
        summary.query_id,
        summary.mode,
        summary.result_rows,
        summary.result_checksum,
        summary.micros,
        summary.parachute_predicates,
    );
    if let Some(d) = &dangling {
        println!("dangling fraction: {:.6}", d.fraction);
    }
    if let Some(out) = out {
        write_json(out, &summary, "result summary")?;
    }
    Ok(())
}

fn cmd_oracle(bundle: &Path, query_path: &Path, out: Option<&Path>) -> Result<(), String> {
    let db = load_bundle(bundle)?;
    let query = load_query(&db, query_path)?;
    let sets = yannakakis_reduce(&db, &query).map_err(|e| e.to_string())?;
    println!("query {:016x}", query_id(&query));
    for (i, alias) in sets.aliases.iter().enumerate() {
        let table = query.table_of(alias).map_err(|e| e.to_string())?;
        let total = db.table(table).map_err(|e| e.to_string())?.row_count;
        println!("{alias} ({table}): {} of {total} rows survive", sets.sets[i].len());
    }
    if let Some(out) = out {
        write_json(out, &sets, "oracle sets")?;
    }
    Ok(())
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Int(x) => x.to_string(),
        Value::Str(s) => s.clone(),
    }
}

fn cmd_generate(out: &Path, seed: u64, scale: usize, per_template: usize) -> Result<(), String> {
    let db = generate_snowflake(seed, scale).map_err(|e| e.to_string())?;
    let data_dir = out.join("data");
    fs::create_dir_all(&data_dir)
        .map_err(|e| format!("cannot create '{}': {e}", data_dir.display()))?;

    write_json(&out.join("schema.json"), &db.catalog.schema, "schema")?;

    for def in &db.catalog.schema.tables {
        let table = db.table(&def.name).map_err(|e| e.to_string())?;
        let path = data_dir.join(format!("{}.csv", def.name));
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| format!("cannot write '{}': {e}", path.display()))?;
        w.write_record(def.columns.iter().map(|c| c.name.as_str()))
            .map_err(|e| e.to_string())?;
        for row in 0..table.row_count {
            let record: Vec<String> = def
                .columns
                .iter()
                .map(|c| csv_cell(&table.columns[&c.name].value(row)))
                .collect();
            w.write_record(&record).map_err(|e| e.to_string())?;
        }
        w.flush().map_err(|e| e.to_string())?;
        println!("{}: {} rows", path.display(), table.row_count);
    }

    // Same columns the sweep attaches; the transitive copy must come last
    // so its source column exists by the time it is built.
    let requests = vec![
        AttachRequest {
            fk_table: "detail".into(),
            pk_table: "dtype".into(),
            source_column: "name".into(),
            kind: ParachuteKind::LowcardString,
        },
        AttachRequest {
            fk_table: "item".into(),
            pk_table: "detail".into(),
            source_column: "year".into(),
            kind: ParachuteKind::NumericHistogram,
        },
        AttachRequest {
            fk_table: "tag_map".into(),
            pk_table: "tag".into(),
            source_column: "word".into(),
            kind: ParachuteKind::StringFingerprint,
        },
        AttachRequest {
            fk_table: "tag_map".into(),
            pk_table: "item".into(),
            source_column: "parachute_detail_year".into(),
            kind: ParachuteKind::NumericHistogram,
        },
    ];
    write_json(&out.join("attach_spec.json"), &requests, "attach spec")?;

    let queries = bench_queries(seed, per_template);
    write_json(&out.join("queries.json"), &queries, "query suite")?;
    println!(
        "wrote schema.json, attach_spec.json, queries.json ({} queries) under {}",
        queries.len(),
        out.display(),
    );
    Ok(())
}

fn cmd_sweep(
    seed: u64,
    scale: usize,
    pbws: Vec<u32>,
    modes: Option<Vec<ExecMode>>,
    per_template: usize,
    json: Option<&Path>,
    csv_path: Option<&Path>,
) -> Result<(), String> {
    let opts = SweepOptions {
        seed,
        scale,
        pbws,
        modes: modes.unwrap_or_else(|| ExecMode::ALL.to_vec()),
        per_template,
        attach: AttachOptions { seed, ..AttachOptions::default() },
    };
    let report = sweep(&opts).map_err(|e| e.to_string())?;
    println!("pbw  mode       queries  dangling  exec_s    extra_bytes");
    for c in &report.cells {
        println!(
            "{:<4} {:<10} {:<8} {:.6}  {:.6}  {}",
            c.pbw, c.mode.to_string(), c.queries, c.dangling_fraction, c.exec_seconds,
            c.extra_space_bytes,
        );
    }
    if let Some(path) = json {
        write_json(path, &report, "sweep report")?;
    }
    if let Some(path) = csv_path {
        let mut f = fs::File::create(path)
            .map_err(|e| format!("cannot write '{}': {e}", path.display()))?;
        let mut emit = |line: String| {
            writeln!(f, "{line}").map_err(|e| format!("cannot write '{}': {e}", path.display()))
        };
        emit("pbw,mode,dangling_fraction,exec_seconds,extra_space_bytes".into())?;
        for c in &report.cells {
            emit(format!(
                "{},{},{:.6},{:.6},{}",
                c.pbw, c.mode, c.dangling_fraction, c.exec_seconds, c.extra_space_bytes,
            ))?;
        }
    }
    Ok(())
}

fn cmd_insert_bench(
    seed: u64,
    scale: usize,
    pbw: u32,
    fractions: Option<Vec<f64>>,
    repeats: usize,
    json: Option<&Path>,
) -> Result<(), String> {
    let defaults = InsertBenchOptions::default();
    let opts = InsertBenchOptions {
        seed,
        scale,
        pbw,
        fractions: fractions.unwrap_or(defaults.fractions),
        repeats,
    };
    let report = insert_bench(&opts).map_err(|e| e.to_string())?;
    for r in &report.rows {
        println!(
            "fraction {:.4} ({} rows): numeric lookup {} ns write {} ns, string lookup {} ns write {} ns",
            r.fraction,
            r.batch_rows,
            r.numeric_lookup_nanos,
            r.numeric_write_nanos,
            r.string_lookup_nanos,
            r.string_write_nanos,
        );
    }
    if let Some(path) = json {
        write_json(path, &report, "insert bench report")?;
    }
    Ok(())
}
