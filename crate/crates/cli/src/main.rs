//! Command-line front end: table estimates, MI summaries, feature ranking,
//! prequential runs and oracle validation.
//!
//! Exit codes: 0 success, 1 input error, 2 numeric failure.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bayes_mi::covariance::{covariance, covariance_general, precision_field};
use bayes_mi::dataio::{discretize, parse_table_file, ClassColumn, Dataset, ParseOptions};
use bayes_mi::harness::{emit_report, run_prequential, summarize_features, RunConfig};
use bayes_mi::mi::{credible_interval, lower_probability, tail_probability};
use bayes_mi::oracle::{validation_suite, SuiteConfig};
use bayes_mi::{
    apply_prior, decide, fit_mode, rank_features, summarize, ContingencyTable, Error, FilterConfig, FilterKind,
    MiSummary, ModeOptions, PriorSpec, VariancePath,
};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "bayes-mi", version, about = "Bayesian mutual information from incomplete categorical data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Posterior mode and covariance of a contingency table.
    Estimate(TableArgs),
    /// Mean, variance and credible interval of the mutual information.
    Mi {
        #[command(flatten)]
        table: TableArgs,
        #[command(flatten)]
        filter: FilterArgs,
        /// Credible level of the interval.
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
    /// Per-feature filter decisions over a whole dataset.
    FilterRank {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        filter: FilterArgs,
        #[arg(long = "filter", default_value = "FF")]
        filter_kind: FilterKind,
    },
    /// Prequential runs and report files.
    Prequential {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        filter: FilterArgs,
        /// Filters to run (repeatable); all three by default.
        #[arg(long = "filter")]
        filters: Vec<FilterKind>,
        /// Shuffle seeds (repeatable); file order when absent.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Keep class-missing counts and use the general variance path.
        #[arg(long)]
        general: bool,
        /// Significance level of the paired t test.
        #[arg(long, default_value_t = 0.05)]
        level: f64,
        #[arg(long, default_value = "report")]
        out_dir: PathBuf,
    },
    /// Compare analytic values against Monte-Carlo and grid oracles.
    OracleCheck {
        #[arg(long, default_value_t = 1_000_000)]
        draws: usize,
        #[arg(long, default_value_t = 200)]
        resolution: usize,
        #[arg(long, default_value_t = 20_240_601)]
        seed: u64,
        /// Also write the report as JSON here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct TableArgs {
    /// JSON table `{"joint": [[..]], "feature_missing": [..], "class_missing": [..]}`; `-` for stdin.
    table: PathBuf,
    /// uniform, jeffreys, haldane, perks or a pseudo-count.
    #[arg(long, default_value = "uniform")]
    prior: PriorSpec,
    /// Force the factored general path.
    #[arg(long)]
    general_path: bool,
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[arg(long, default_value_t = FilterConfig::DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = FilterConfig::DEFAULT_P_BAR)]
    pbar: f64,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Delimited data file.
    data: PathBuf,
    /// Class column index, or `last`.
    #[arg(long, default_value = "last")]
    class_column: ClassColumn,
    #[arg(long, default_value = "?")]
    missing_token: String,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[arg(long)]
    header: bool,
    /// Equal-frequency bins for numeric columns.
    #[arg(long, default_value_t = 5)]
    bins: usize,
    #[arg(long, default_value = "uniform")]
    prior: PriorSpec,
}

#[derive(Debug, serde::Deserialize)]
struct TableInput {
    joint: Vec<Vec<f64>>,
    #[serde(default)]
    feature_missing: Option<Vec<f64>>,
    #[serde(default)]
    class_missing: Option<Vec<f64>>,
}

fn read_input(path: &Path) -> Result<String, Error> {
    if path.as_os_str() == "-" {
        let mut text = String::new();
        io::stdin().read_to_string(&mut text)?;
        Ok(text)
    } else {
        Ok(fs::read_to_string(path)?)
    }
}

fn load_table(path: &Path) -> Result<ContingencyTable, Error> {
    let input: TableInput = serde_json::from_str(&read_input(path)?)?;
    let r = input.joint.len();
    let s = input.joint.first().map_or(0, Vec::len);
    if input.joint.iter().any(|row| row.len() != s) {
        return Err(Error::InvalidTable("joint rows differ in length".into()));
    }
    ContingencyTable::new(
        r,
        s,
        input.joint.concat(),
        input.feature_missing.unwrap_or_else(|| vec![0.0; r]),
        input.class_missing.unwrap_or_else(|| vec![0.0; s]),
    )
}

fn load_dataset(args: &DataArgs) -> Result<Dataset, Error> {
    let delimiter = u8::try_from(args.delimiter)
        .map_err(|_| Error::InvalidArgument(format!("delimiter '{}' is not ASCII", args.delimiter)))?;
    let options = ParseOptions {
        delimiter,
        missing_token: args.missing_token.clone(),
        class_column: args.class_column,
        has_header: args.header,
        ..ParseOptions::default()
    };
    let raw = parse_table_file(&args.data, &options)?;
    let (data, report) = discretize(&raw, args.bins)?;
    for &c in &report.constant {
        eprintln!("note: column '{}' is constant (single bin)", data.columns[c].name);
    }
    for &c in &report.all_missing {
        eprintln!("note: column '{}' has no observed values", data.columns[c].name);
    }
    Ok(data)
}

fn summary_json(s: &MiSummary) -> Value {
    json!({
        "mean": s.mean,
        "variance": s.variance,
        "sd": s.sd(),
        "i_max": s.i_max,
        "path": s.path,
        "total": s.total,
        "degenerate": s.degenerate,
        "variance_clamped": s.variance_clamped,
    })
}

fn estimate(args: &TableArgs) -> Result<Value, Error> {
    let table = load_table(&args.table)?;
    let counts = apply_prior(&table, &args.prior)?;
    let mode = fit_mode(&counts, ModeOptions::default())?;
    let regular = counts.regularized();
    let regular_mode = fit_mode(&regular, ModeOptions::default())?;
    let field = precision_field(&regular, &regular_mode.pi_hat)?;
    let cov = if args.general_path {
        covariance_general(&field)?
    } else {
        covariance(&field)?
    };
    Ok(json!({
        "mode": mode.pi_hat.to_rows(),
        "path": mode.path,
        "iterations": mode.iterations,
        "residual": mode.residual,
        "floored_exponents": counts.floored(),
        "covariance": cov.to_rows(),
    }))
}

fn mi(args: &TableArgs, filter: &FilterArgs, level: f64) -> Result<Value, Error> {
    let table = load_table(&args.table)?;
    let counts = apply_prior(&table, &args.prior)?;
    let path = if args.general_path {
        VariancePath::General
    } else {
        VariancePath::Auto
    };
    let summary = summarize(&counts, ModeOptions::default(), path)?;
    let (lo, hi) = credible_interval(&summary, level)?;
    let decisions: serde_json::Map<String, Value> = FilterKind::ALL
        .iter()
        .map(|&kind| {
            let config = FilterConfig::new(kind, filter.epsilon, filter.pbar)?;
            Ok((kind.to_string(), serde_json::to_value(decide(&config, &summary))?))
        })
        .collect::<Result<_, Error>>()?;
    Ok(json!({
        "summary": summary_json(&summary),
        "interval": {"level": level, "lower": lo, "upper": hi},
        "p_above_epsilon": tail_probability(&summary, filter.epsilon),
        "p_below_epsilon": lower_probability(&summary, filter.epsilon),
        "decisions": decisions,
    }))
}

fn filter_rank(data: &DataArgs, filter: &FilterArgs, kind: FilterKind) -> Result<Value, Error> {
    let dataset = load_dataset(data)?;
    let config = FilterConfig::new(kind, filter.epsilon, filter.pbar)?;
    let mut run = RunConfig::new(config);
    run.prior = data.prior.clone();
    let summaries = summarize_features(&dataset, &run)?;
    let idle = MiSummary::from_moments(0.0, 0.0, 0.0);
    let filled: Vec<MiSummary> = summaries.iter().map(|s| s.unwrap_or(idle)).collect();
    let ranking = rank_features(&filled, &config);
    let columns = dataset.feature_columns();
    let features: Vec<Value> = ranking
        .order
        .iter()
        .enumerate()
        .map(|(rank, &f)| {
            let d = &ranking.decisions[f];
            json!({
                "rank": rank + 1,
                "feature": dataset.columns[columns[f]].name,
                "categories": dataset.columns[columns[f]].cardinality(),
                "include": d.include && summaries[f].is_some(),
                "mean": d.mi_mean,
                "sd": d.mi_sd,
                "tail_prob": d.tail_prob,
            })
        })
        .collect();
    Ok(json!({
        "filter": config,
        "instances": dataset.n_instances(),
        "features": features,
    }))
}

#[allow(clippy::too_many_arguments)]
fn prequential(
    data: &DataArgs,
    filter: &FilterArgs,
    kinds: &[FilterKind],
    seeds: &[u64],
    general: bool,
    level: f64,
    out_dir: &Path,
) -> Result<Value, Error> {
    let dataset = load_dataset(data)?;
    let kinds = if kinds.is_empty() { &FilterKind::ALL[..] } else { kinds };
    let seeds: Vec<Option<u64>> = if seeds.is_empty() {
        vec![None]
    } else {
        seeds.iter().copied().map(Some).collect()
    };
    let mut records = Vec::new();
    for &seed in &seeds {
        for &kind in kinds {
            let mut config = RunConfig::new(FilterConfig::new(kind, filter.epsilon, filter.pbar)?);
            config.prior = data.prior.clone();
            config.seed = seed;
            config.keep_class_missing = general;
            records.push(run_prequential(&dataset, &config)?);
        }
    }
    let files = emit_report(&records, out_dir, level)?;
    let runs: Vec<Value> = records
        .iter()
        .map(|r| {
            json!({
                "filter": r.filter.kind,
                "seed": r.seed,
                "accuracy": r.accuracy(),
                "mean_selected": r.mean_selected(),
            })
        })
        .collect();
    Ok(json!({"summary": files.summary, "runs": runs}))
}

fn oracle_check(draws: usize, resolution: usize, seed: u64, out_dir: Option<&Path>) -> Result<(Value, bool), Error> {
    let checks = validation_suite(SuiteConfig {
        draws,
        grid_resolution: resolution,
        seed,
    })?;
    let all_pass = checks.iter().all(|c| c.pass);
    for c in &checks {
        eprintln!(
            "{} {}: analytic {:.6e}, oracle {:.6e} (±{:.1e})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.analytic,
            c.oracle,
            c.oracle_error
        );
    }
    let report = json!({"pass": all_pass, "checks": checks});
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("oracle_check.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok((report, all_pass))
}

fn run(cli: Cli) -> Result<(Value, bool), Error> {
    match cli.command {
        Command::Estimate(args) => estimate(&args).map(|v| (v, true)),
        Command::Mi { table, filter, level } => mi(&table, &filter, level).map(|v| (v, true)),
        Command::FilterRank {
            data,
            filter,
            filter_kind,
        } => filter_rank(&data, &filter, filter_kind).map(|v| (v, true)),
        Command::Prequential {
            data,
            filter,
            filters,
            seeds,
            general,
            level,
            out_dir,
        } => prequential(&data, &filter, &filters, &seeds, general, level, &out_dir).map(|v| (v, true)),
        Command::OracleCheck {
            draws,
            resolution,
            seed,
            out_dir,
        } => oracle_check(draws, resolution, seed, out_dir.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok((value, ok)) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("JSON values serialize"));
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
