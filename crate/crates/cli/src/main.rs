use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drtune::experiment::{
    run_all, run_far, run_reach, run_tune, Experiment, FarTable, ReachReport, ReachRow, TuneTable,
};

#[derive(Parser)]
#[command(
    name = "drtune",
    version,
    about = "Moment-based anomaly detector tuning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tune thresholds and write thresholds.csv and moments.csv.
    Tune(Common),
    /// Tune, then measure empirical false-alarm rates into far.csv.
    Far(Common),
    /// Tune, then write reach_<alpha>.csv boundaries and areas.csv.
    Reach(Common),
    /// Run every stage on one set of thresholds.
    All(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, default_value = "configs/gaussian.toml")]
    config: PathBuf,
    /// Output directory; overrides the config's output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noise seed; overrides the config's noise.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the summary on stdout.
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn load(&self) -> drtune::Result<(Experiment, PathBuf)> {
        let mut exp = Experiment::load(&self.config)?;
        if let Some(seed) = self.seed {
            exp = exp.with_seed(seed);
        }
        let out = self
            .out
            .clone()
            .unwrap_or_else(|| exp.config.output.dir.clone());
        Ok((exp, out))
    }
}

fn print_tune(table: &TuneTable) {
    println!("moments: {}", table.moments.to_csv_row());
    for row in &table.rows {
        match &row.result {
            Ok(t) => println!(
                "k = {}  alpha = {:.4}  worst-case rate = {:.5}  ({})",
                row.order, t.alpha, t.achieved_worst_case, t.method
            ),
            Err(e) => println!("k = {}  failed: {e}", row.order),
        }
    }
    println!(
        "chi-squared({})  alpha = {:.4}",
        table.chi_squared.k, table.chi_squared.alpha
    );
}

fn print_far(far: &FarTable) {
    for r in &far.rows {
        println!(
            "{:<16} alpha = {:>8.4}  rate = {:.5} +/- {:.5}  ({} of {})",
            r.method.to_string(),
            r.alpha,
            r.rate,
            r.std_error,
            r.alarms,
            r.steps
        );
    }
}

fn print_reach(report: &ReachReport) {
    let mut rows: Vec<&ReachRow> = report.rows.iter().collect();
    rows.sort_by(|a, b| b.bound.alpha.total_cmp(&a.bound.alpha));
    println!("w_bar = {}", report.w_bar);
    for r in rows {
        println!(
            "{:<16} alpha = {:>8.4}  area = {:.6e}  attack alarms = {} of {}",
            r.method.to_string(),
            r.bound.alpha,
            r.bound.volume,
            r.attack_alarms,
            report.attack_steps
        );
    }
    let yes = |b: bool| if b { "yes" } else { "NO" };
    println!(
        "areas strictly decreasing: {}; support functions nested: {}",
        yes(report.comparison.strictly_decreasing),
        yes(report.comparison.nested())
    );
}

fn run(cli: Cli) -> drtune::Result<()> {
    match cli.command {
        Command::Tune(c) => {
            let (exp, out) = c.load()?;
            let table = run_tune(&exp, &out)?;
            if !c.quiet {
                print_tune(&table);
            }
        }
        Command::Far(c) => {
            let (exp, out) = c.load()?;
            let (table, far) = run_far(&exp, &out)?;
            if !c.quiet {
                print_tune(&table);
                print_far(&far);
            }
        }
        Command::Reach(c) => {
            let (exp, out) = c.load()?;
            let (_, report) = run_reach(&exp, &out)?;
            if !c.quiet {
                print_reach(&report);
            }
        }
        Command::All(c) => {
            let (exp, out) = c.load()?;
            let all = run_all(&exp, &out)?;
            if !c.quiet {
                print_tune(&all.tune);
                print_far(&all.far);
                print_reach(&all.reach);
                println!("wrote {}", out.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
