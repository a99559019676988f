//! The `pacq` command-line surface: load, run, explain, oracle, diff, bench,
//! gen, mia-bound. Exit codes: 0 success, 1 user error, 2 privacy rejection
//! (reason code on stderr), 3 internal error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::aggregates::{bench::run_bench, CountTier, SumTier, TierConfig};
use crate::catalog::{Classification, PrivacyCatalog};
use crate::datagen::{
    generate, generate_mini_tpch, DistName, DistributionSpec, KeyLayout, MINI_SCHEMA_DDL,
};
use crate::engine::{
    execute_oracle, pac_diff, run_query, Database, EngineError, ExecConfig,
};
use crate::planner::{explain, normalize, pac_rewrite, parse_query, schema_of};
use crate::relcore::{write_csv, Relation};
use crate::worlds::{mia_bound, MiaBoundQuery, WorldsError};

#[derive(Parser)]
#[command(name = "pacq", version, about = "PAC-private analytical query engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// session seed: fixes the query salt, secret world, and RNG stream
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// release the secret world's value exactly (diagnostics)
    #[arg(long, global = true)]
    no_noise: bool,

    /// count-kernel tier (also selects naive sums and unpruned min/max)
    #[arg(long, global = true, value_parser = ["naive", "predicated", "swar"], default_value = "swar")]
    agg_tier: String,

    /// use the 25-level approximate integer sums
    #[arg(long, global = true)]
    approx: bool,

    /// buffered aggregate states (on/off)
    #[arg(long, global = true, value_parser = ["on", "off"], default_value = "on")]
    buffered: String,

    /// machine-readable output where supported
    #[arg(long, global = true)]
    json: bool,

    /// worker threads for the bench harness
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Classify, rewrite, and execute a query over CSV tables
    Run(QueryArgs),
    /// Print the rewritten plan and the rewrite trace
    Explain {
        #[command(flatten)]
        query: QueryArgs,
        /// emit the rewritten plan as JSON instead of text
        #[arg(long, value_parser = ["json"])]
        dump_plan: Option<String>,
    },
    /// Execute the 64-fold materialized-worlds reference semantics
    Oracle(QueryArgs),
    /// Full-outer diff of privatized vs exact results
    Diff {
        #[command(flatten)]
        query: QueryArgs,
        /// number of leading output columns forming the join key
        #[arg(long, default_value_t = 1)]
        key_cols: usize,
    },
    /// Kernel micro-benchmarks; emits a tier-comparison CSV
    Bench {
        /// count | sum | minmax
        #[arg(long, default_value = "count")]
        kernel: String,
        #[arg(long, default_value_t = 100_000_000)]
        rows: u64,
        #[arg(long, default_value_t = 1)]
        groups: u64,
        #[arg(long, default_value = "uniform_int")]
        dist: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate benchmark distributions or the mini PU schema
    Gen {
        #[arg(long)]
        dist: Option<String>,
        #[arg(long, default_value_t = 1_000_000)]
        rows: usize,
        #[arg(long, default_value_t = 1)]
        keys: u64,
        #[arg(long, default_value = "scattered")]
        layout: String,
        /// generate customer/orders/lineitem/part plus schema.pac.sql
        #[arg(long)]
        mini_tpch: bool,
        /// output file (distribution) or directory (mini schema)
        #[arg(long)]
        out: PathBuf,
    },
    /// Membership-inference success bound from prior and total MI
    MiaBound {
        #[arg(long)]
        prior: f64,
        /// total mutual information in nats
        #[arg(long)]
        mi: Option<f64>,
        /// number of released cells (with --per-cell)
        #[arg(long)]
        cells: Option<u64>,
        /// per-cell budget in nats (with --cells)
        #[arg(long)]
        per_cell: Option<f64>,
    },
}

#[derive(Args)]
struct QueryArgs {
    /// privacy DDL file (.pac.sql)
    #[arg(long)]
    schema: PathBuf,
    /// per-cell mutual-information budget in nats
    #[arg(long, default_value_t = 1.0 / 128.0)]
    mi: f64,
    /// directory of <table>.csv files
    #[arg(long)]
    data: Option<PathBuf>,
    /// query file, or literal SQL
    #[arg(long)]
    query: String,
    /// write the result CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

struct UserError(String);

impl<E: std::fmt::Display> From<E> for UserError {
    fn from(e: E) -> Self {
        UserError(e.to_string())
    }
}

pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successes; everything else is a user error
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(UserError(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn tier_config(cli: &Cli) -> TierConfig {
    let mut t = match cli.agg_tier.as_str() {
        "naive" => TierConfig::naive(),
        "predicated" => TierConfig {
            count_tier: CountTier::Predicated,
            sum_tier: SumTier::Cascading,
            ..TierConfig::default()
        },
        _ => TierConfig::default(),
    };
    t.approx_sum = cli.approx;
    t.buffered = cli.buffered == "on";
    t
}

fn dispatch(cli: &Cli) -> Result<i32, UserError> {
    let config = |mi: f64| ExecConfig {
        seed: cli.seed,
        mi_budget: mi,
        noise_enabled: !cli.no_noise,
        tiers: tier_config(cli),
    };
    match &cli.command {
        Command::Run(q) => cmd_run(q, &config(q.mi), cli.json),
        Command::Explain { query, dump_plan } => cmd_explain(query, dump_plan.as_deref()),
        Command::Oracle(q) => cmd_oracle(q, &config(q.mi)),
        Command::Diff { query, key_cols } => cmd_diff(query, &config(query.mi), *key_cols, cli.json),
        Command::Bench { kernel, rows, groups, dist, out } => {
            cmd_bench(kernel, *rows, *groups, dist, out.as_deref(), cli)
        }
        Command::Gen { dist, rows, keys, layout, mini_tpch, out } => {
            cmd_gen(dist.as_deref(), *rows, *keys, layout, *mini_tpch, out, cli.seed)
        }
        Command::MiaBound { prior, mi, cells, per_cell } => {
            cmd_mia_bound(*prior, *mi, *cells, *per_cell, cli.json)
        }
    }
}

fn load_catalog(schema_path: &Path) -> Result<PrivacyCatalog, UserError> {
    let text = fs::read_to_string(schema_path)
        .map_err(|e| UserError(format!("reading {}: {e}", schema_path.display())))?;
    let mut catalog = PrivacyCatalog::new();
    catalog.load_ddl(&text)?;
    Ok(catalog)
}

fn load_data(catalog: &PrivacyCatalog, dir: &Path) -> Result<Database, UserError> {
    let mut db = Database::new();
    for table in &catalog.table_order {
        let path = dir.join(format!("{table}.csv"));
        let file = fs::File::open(&path)
            .map_err(|e| UserError(format!("reading {}: {e}", path.display())))?;
        let rel = crate::relcore::read_csv(file, &catalog.schemas[table])?;
        db.insert(table.clone(), rel);
    }
    Ok(db)
}

fn read_query(q: &str) -> Result<String, UserError> {
    let path = Path::new(q);
    if path.exists() {
        Ok(fs::read_to_string(path).map_err(|e| UserError(format!("reading query: {e}")))?)
    } else {
        Ok(q.to_string())
    }
}

fn emit_relation(rel: &Relation, out: Option<&Path>, json: bool) -> Result<(), UserError> {
    let bytes = if json {
        let columns: Vec<&str> = rel.schema.names();
        let rows: Vec<Vec<serde_json::Value>> = (0..rel.row_count())
            .map(|i| rel.row(i).iter().map(value_to_json).collect())
            .collect();
        let mut v = serde_json::to_vec_pretty(&serde_json::json!({
            "columns": columns,
            "rows": rows,
        }))
        .map_err(|e| UserError(e.to_string()))?;
        v.push(b'\n');
        v
    } else {
        let mut v = Vec::new();
        write_csv(&mut v, rel)?;
        v
    };
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| UserError(e.to_string()))?,
        None => std::io::stdout().write_all(&bytes).map_err(|e| UserError(e.to_string()))?,
    }
    Ok(())
}

fn value_to_json(v: &crate::relcore::Value) -> serde_json::Value {
    use crate::relcore::Value as V;
    match v {
        V::Null => serde_json::Value::Null,
        V::Int64(x) => serde_json::json!(x),
        V::Float64(x) => serde_json::json!(x),
        V::Boolean(b) => serde_json::json!(b),
        other => serde_json::json!(other.render()),
    }
}

fn cmd_run(q: &QueryArgs, config: &ExecConfig, json: bool) -> Result<i32, UserError> {
    let catalog = load_catalog(&q.schema)?;
    let data_dir = q.data.as_deref().ok_or_else(|| UserError("run needs --data".into()))?;
    let db = load_data(&catalog, data_dir)?;
    let sql = read_query(&q.query)?;
    match run_query(&sql, &catalog, &db, config) {
        Ok(outcome) => match outcome.classification {
            Classification::Rejected { reason, message } => {
                eprintln!("rejected: {}: {message}", reason.code());
                Ok(2)
            }
            _ => {
                let rel = outcome.result.expect("accepted queries produce a result");
                emit_relation(&rel, q.out.as_deref(), json)?;
                if outcome.cells_released > 0 {
                    eprintln!(
                        "released {} cells, total MI {} nats",
                        outcome.cells_released, outcome.total_mi
                    );
                }
                Ok(0)
            }
        },
        Err(EngineError::Worlds(WorldsError::SuspiciousGroup { updates, worlds })) => {
            eprintln!(
                "rejected: SuspiciousGroup: {updates} updates landed in only {worlds} worlds"
            );
            Ok(2)
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_explain(q: &QueryArgs, dump_plan: Option<&str>) -> Result<i32, UserError> {
    let catalog = load_catalog(&q.schema)?;
    let sql = read_query(&q.query)?;
    let plan = normalize(parse_query(&sql, &catalog.schemas)?);
    schema_of(&plan, &catalog.schemas)?;
    let classification = crate::catalog::classify(&plan, &catalog);
    if let Classification::Rejected { reason, message } = classification {
        eprintln!("rejected: {}: {message}", reason.code());
        return Ok(2);
    }
    let (rewritten, trace) = if classification == Classification::Rewritable {
        pac_rewrite(&plan, &catalog)?
    } else {
        (plan, Default::default())
    };
    if dump_plan == Some("json") {
        let text = serde_json::to_string_pretty(&rewritten).map_err(|e| UserError(e.to_string()))?;
        println!("{text}");
    } else {
        print!("{}", explain(&rewritten, &trace));
    }
    Ok(0)
}

fn cmd_oracle(q: &QueryArgs, config: &ExecConfig) -> Result<i32, UserError> {
    let catalog = load_catalog(&q.schema)?;
    let data_dir = q.data.as_deref().ok_or_else(|| UserError("oracle needs --data".into()))?;
    let db = load_data(&catalog, data_dir)?;
    let sql = read_query(&q.query)?;
    let plan = normalize(parse_query(&sql, &catalog.schemas)?);
    schema_of(&plan, &catalog.schemas)?;
    match crate::catalog::classify(&plan, &catalog) {
        Classification::Rewritable => {}
        Classification::Rejected { reason, message } => {
            eprintln!("rejected: {}: {message}", reason.code());
            return Ok(2);
        }
        Classification::Inconspicuous => {
            return Err(UserError("oracle needs a rewritable query".into()))
        }
    }
    let rel = execute_oracle(&plan, &db, &catalog, config)?;
    emit_relation(&rel, q.out.as_deref(), false)?;
    Ok(0)
}

fn cmd_diff(
    q: &QueryArgs,
    config: &ExecConfig,
    key_cols: usize,
    json: bool,
) -> Result<i32, UserError> {
    let catalog = load_catalog(&q.schema)?;
    let data_dir = q.data.as_deref().ok_or_else(|| UserError("diff needs --data".into()))?;
    let db = load_data(&catalog, data_dir)?;
    let sql = read_query(&q.query)?;
    let report = pac_diff(&sql, &catalog, &db, config, key_cols)?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(|e| UserError(e.to_string()))?
        );
    } else {
        for (class, row) in &report.rows {
            let cells: Vec<String> = row.iter().map(|v| v.render()).collect();
            println!("{} {}", class.symbol(), cells.join("  "));
        }
        println!(
            "mape={:.6} precision={:.4} recall={:.4} matched={} missing={} spurious={}",
            report.mape,
            report.precision,
            report.recall,
            report.matched,
            report.missing,
            report.spurious
        );
    }
    Ok(0)
}

fn cmd_bench(
    kernel: &str,
    rows: u64,
    groups: u64,
    dist: &str,
    out: Option<&Path>,
    cli: &Cli,
) -> Result<i32, UserError> {
    let name: DistName = dist.parse()?;
    let chunk_rows = rows.min(1 << 20) as usize;
    let mut spec = DistributionSpec::new(name, chunk_rows, cli.seed);
    spec.keys = groups;
    let kernels: Vec<&str> =
        if kernel == "all" { vec!["count", "sum", "minmax"] } else { vec![kernel] };
    let mut lines = vec![crate::aggregates::bench::BenchResult::csv_header().to_string()];
    for k in kernels {
        for r in run_bench(k, &spec, rows, cli.threads, cli.buffered == "on") {
            lines.push(r.to_csv_row());
        }
    }
    let text = lines.join("\n") + "\n";
    match out {
        Some(path) => fs::write(path, text).map_err(|e| UserError(e.to_string()))?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn cmd_gen(
    dist: Option<&str>,
    rows: usize,
    keys: u64,
    layout: &str,
    mini_tpch: bool,
    out: &Path,
    seed: u64,
) -> Result<i32, UserError> {
    if mini_tpch {
        fs::create_dir_all(out).map_err(|e| UserError(e.to_string()))?;
        let db = generate_mini_tpch(rows, seed);
        for (name, rel) in db.tables() {
            let file = fs::File::create(out.join(format!("{name}.csv")))
                .map_err(|e| UserError(e.to_string()))?;
            write_csv(file, rel)?;
        }
        fs::write(out.join("schema.pac.sql"), MINI_SCHEMA_DDL)
            .map_err(|e| UserError(e.to_string()))?;
        return Ok(0);
    }
    let name: DistName =
        dist.ok_or_else(|| UserError("gen needs --dist or --mini-tpch".into()))?.parse()?;
    let layout: KeyLayout = layout.parse()?;
    let spec = DistributionSpec { name, rows, seed, keys, layout };
    let rel = generate(&spec);
    let file = fs::File::create(out).map_err(|e| UserError(e.to_string()))?;
    write_csv(file, &rel)?;
    Ok(0)
}

fn cmd_mia_bound(
    prior: f64,
    mi: Option<f64>,
    cells: Option<u64>,
    per_cell: Option<f64>,
    json: bool,
) -> Result<i32, UserError> {
    let total_mi = match (mi, cells, per_cell) {
        (Some(m), None, None) => m,
        (None, Some(c), Some(b)) => c as f64 * b,
        _ => {
            return Err(UserError(
                "mia-bound needs either --mi or both --cells and --per-cell".into(),
            ))
        }
    };
    let q = MiaBoundQuery::new(prior, total_mi)
        .ok_or_else(|| UserError("prior must be in (0,1) and MI nonnegative".into()))?;
    let bound = mia_bound(q);
    if json {
        println!(
            "{}",
            serde_json::json!({ "prior": prior, "total_mi": total_mi, "bound": bound })
        );
    } else {
        println!("{bound:.6}");
    }
    Ok(0)
}
