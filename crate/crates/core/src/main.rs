use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fairgen::bounds::MiConfig;
use fairgen::data::{group_counts, Dataset};
use fairgen::fairness::ScoreMode;
use fairgen::harness::{self, BoundRow, ExperimentConfig};
use fairgen::oracles::{self, Lemma};
use fairgen::trainer::Method;
use fairgen::{Error, Result};

#[derive(Parser)]
#[command(name = "fairgen", version, about = "Fairness generalization gaps and their bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset and report its encoding and group counts.
    Ingest,
    /// Train over the supersample grid and measure fairness gaps.
    Gaps,
    /// Measure gaps and estimate the loss-difference bound.
    Bounds,
    /// Compare test fairness with and without batch balancing.
    Table1,
    /// Check the concentration inequalities on random small instances.
    Oracles,
    /// Correlate bounds with gaps from a previous `bounds` run.
    Scatter {
        /// `bounds.jsonl`, or the directory holding it.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Compare analytic and numerical gradients of every training objective.
    GradCheck,
}

#[derive(Args)]
struct Overrides {
    /// JSON configuration file; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    dataset: Option<String>,
    #[arg(long, global = true)]
    sensitive: Option<String>,
    #[arg(long, global = true)]
    method: Option<Method>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Comma-separated sample sizes.
    #[arg(long, global = true, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long, global = true)]
    m1: Option<usize>,
    #[arg(long, global = true)]
    m2: Option<usize>,
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    balanced: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Score test predictions as 0/1 at this threshold instead of soft scores.
    #[arg(long, global = true)]
    hard_threshold: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_path(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.dataset {
            cfg.dataset = v.clone();
        }
        if let Some(v) = &self.sensitive {
            cfg.sensitive = v.clone();
        }
        if let Some(v) = self.method {
            cfg.method = v;
        }
        if self.lambda.is_some() {
            cfg.lambda = self.lambda;
        }
        if let Some(v) = &self.n {
            cfg.n = v.clone();
        }
        if let Some(v) = self.m1 {
            cfg.m1 = v;
        }
        if let Some(v) = self.m2 {
            cfg.m2 = v;
        }
        if self.m.is_some() {
            cfg.m = self.m;
        }
        if let Some(k) = self.k {
            cfg.mi = MiConfig { k, ..cfg.mi };
        }
        if self.balanced {
            cfg.balanced = true;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
            cfg.oracles.seed = v;
        }
        if let Some(threshold) = self.hard_threshold {
            cfg.score_mode = ScoreMode::Hard { threshold };
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        Ok(cfg)
    }
}

fn check(label: &str, pass: bool, detail: impl std::fmt::Display) -> bool {
    println!("{label:<28} {} {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(dir.join(name), text)?;
    Ok(())
}

#[derive(Serialize)]
struct IngestReport {
    rows: usize,
    feature_dim: usize,
    num_classes: usize,
    group_counts: [usize; 2],
    subgroup_counts: Vec<[usize; 2]>,
    max_abs_column_mean: f64,
    max_column_variance_error: f64,
}

fn ingest_report(d: &Dataset) -> IngestReport {
    let rows = d.len();
    let mut max_mean: f64 = 0.0;
    let mut max_var: f64 = 0.0;
    for j in 0..d.feature_dim() {
        let col: Vec<f64> = d.iter().map(|s| s.x[j]).collect();
        let mean = col.iter().sum::<f64>() / rows as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64;
        // One-hot columns only hold 0/1 and are left unscaled.
        if col.iter().all(|&v| v == 0.0 || v == 1.0) {
            continue;
        }
        max_mean = max_mean.max(mean.abs());
        max_var = max_var.max((var - 1.0).abs().min(var));
    }
    let gc = group_counts(d);
    IngestReport {
        rows,
        feature_dim: d.feature_dim(),
        num_classes: d.num_classes(),
        group_counts: gc.dp,
        subgroup_counts: gc.eo.clone(),
        max_abs_column_mean: max_mean,
        max_column_variance_error: max_var,
    }
}

fn print_bound_rows(rows: &[BoundRow]) -> bool {
    let mut ok = true;
    for row in rows {
        ok &= check(
            &format!("bound n={}", row.n),
            row.dominates(),
            format_args!(
                "bound={:.5}±{:.5} |gap|={:.5}±{:.5} coeff={:.3e} mi={:.4}",
                row.bound.value, row.bound.std, row.gap.mean_abs_gap, row.gap.std_abs_gap, row.bound.coefficient, row.bound.mi
            ),
        );
    }
    ok
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = cli.opts.resolve()?;
    let out = cfg.out.clone();
    match &cli.command {
        Command::Ingest => {
            let d = cfg.load()?;
            let rep = ingest_report(&d);
            println!(
                "rows={} feature_dim={} classes={} groups={:?} subgroups={:?}",
                rep.rows, rep.feature_dim, rep.num_classes, rep.group_counts, rep.subgroup_counts
            );
            if let Some(dir) = &out {
                write_json(dir, "ingest.json", &rep)?;
            }
            let ok = check("standardized means", rep.max_abs_column_mean <= 1e-9, format_args!("{:.3e}", rep.max_abs_column_mean));
            Ok(check("standardized variances", rep.max_column_variance_error <= 1e-6, format_args!("{:.3e}", rep.max_column_variance_error)) && ok)
        }
        Command::Gaps => {
            let d = cfg.load()?;
            let rep = harness::run_gap_experiment(&cfg, &d)?;
            for s in &rep.summary {
                println!(
                    "n={:<6} gap={:.5}±{:.5} |gap|={:.5}±{:.5} test_acc={:.4}",
                    s.n, s.mean_gap, s.std_gap, s.mean_abs_gap, s.std_abs_gap, s.mean_test_accuracy
                );
            }
            if let Some(dir) = &out {
                harness::emit_gaps(dir, &rep)?;
            }
            let complete = harness::check_complete(&cfg, &rep.records).is_ok();
            let ok = check("records complete", complete, rep.records.len());
            Ok(check("summary recomputes", harness::summarize(&rep.records) == rep.summary, "") && ok)
        }
        Command::Bounds => {
            let d = cfg.load()?;
            let rep = harness::run_bound_experiment(&cfg, &d)?;
            if let Some(dir) = &out {
                harness::emit_bounds(dir, &rep)?;
            }
            let ok = print_bound_rows(&rep.rows);
            Ok(check("bounds finite", rep.all_finite(), "") && ok)
        }
        Command::Table1 => {
            let d = cfg.load()?;
            let rep = harness::run_table1(&cfg, &d)?;
            if let Some(dir) = &out {
                harness::emit_table1(dir, &rep)?;
            }
            let mut ok = true;
            for s in &rep.summary {
                ok &= check(
                    &format!("balancing {} n={}", s.method, s.n),
                    2 * s.balanced_wins > s.repeats,
                    format_args!(
                        "unbalanced={:.4} balanced={:.4} wins={}/{}",
                        s.mean_unbalanced, s.mean_balanced, s.balanced_wins, s.repeats
                    ),
                );
            }
            Ok(ok)
        }
        Command::Oracles => {
            let mut ok = true;
            let mut reports = Vec::new();
            for lemma in Lemma::ALL {
                let r = oracles::run_suite(lemma, &cfg.oracles)?;
                println!("{r}");
                ok &= r.pass;
                reports.push(r);
            }
            let ss = oracles::chain_instance(cfg.oracles.seed)?;
            let info = oracles::check_data_processing(&ss, cfg.metric)?;
            ok &= check(
                "data-processing",
                info.ordered(),
                format_args!(
                    "delta={:.6} losses={:.6} predictions={:.6}",
                    info.delta_vs_anchor, info.losses_vs_selection, info.predictions_vs_selection
                ),
            );
            if let Some(dir) = &out {
                fs::create_dir_all(dir)?;
                harness::write_jsonl(dir.join("oracles.jsonl"), &reports)?;
                write_json(dir, "data_processing.json", &info)?;
            }
            Ok(ok)
        }
        Command::Scatter { input } => {
            let path = input.clone().or_else(|| out.clone()).ok_or_else(|| {
                Error::Argument("scatter needs --input or --out pointing at a bounds run".into())
            })?;
            let file = if path.is_dir() { path.join("bounds.jsonl") } else { path };
            let rows: Vec<BoundRow> = harness::read_jsonl(&file)?;
            let points: Vec<(f64, f64)> = rows
                .iter()
                .flat_map(|row| row.bound.per_z.iter().zip(&row.per_z_abs_gap).map(|(b, g)| (b.value, *g)))
                .collect();
            let stats = harness::scatter_stats(&points)?;
            if let Some(dir) = &out {
                write_json(dir, "scatter.json", &stats)?;
            }
            Ok(check(
                "scatter correlation",
                stats.r >= cfg.min_correlation,
                format_args!("r={:.4} slope={:.4} intercept={:.5} points={}", stats.r, stats.slope, stats.intercept, stats.points),
            ))
        }
        Command::GradCheck => {
            let d = cfg.load()?;
            let rows = harness::run_grad_check(&cfg, &d)?;
            let mut ok = true;
            for r in &rows {
                let arch = match &r.arch {
                    fairgen::trainer::Arch::LogReg => "logreg".to_string(),
                    fairgen::trainer::Arch::Mlp { hidden } => format!("mlp{hidden:?}"),
                };
                ok &= check(&format!("grad {} {arch}", r.method), r.pass, format_args!("max_rel_err={:.3e}", r.max_relative_error));
            }
            if let Some(dir) = &out {
                fs::create_dir_all(dir)?;
                harness::write_jsonl(dir.join("grad_check.jsonl"), &rows)?;
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
