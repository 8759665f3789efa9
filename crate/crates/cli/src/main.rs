use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use platoon_core::config::ExperimentConfig;
use platoon_core::experiment::{self, Overrides, RangeOutcome, Stages};

/// Platoon simulations with communication range r.
#[derive(Parser)]
#[command(name = "platoon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the reference scenario for every range in `sweep.r_list`.
    Simulate(Common),
    /// Certify, simulate and verify every range; optionally sweep `sweep.eps_list`.
    Sweep(Common),
    /// Write contraction certificates.
    Certify(Common),
    /// Calibrate the slack, search ε* and check both envelopes.
    Verify(Common),
    /// Length sweep with the nearest-neighbour controller.
    StringStability(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    config: PathBuf,
    /// Seed of disturbances and initial perturbations.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fixed integration step in seconds.
    #[arg(long)]
    step: Option<f64>,
    /// Simulation horizon in seconds.
    #[arg(long)]
    horizon: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::from_path(&self.config)?;
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            step: self.step,
            horizon: self.horizon,
        }
        .apply(&mut cfg)?;
        fs::create_dir_all(&cfg.output.dir)
            .with_context(|| format!("creating {}", cfg.output.dir.display()))?;
        Ok(cfg)
    }
}

fn print_ranges(outcomes: &[RangeOutcome]) {
    for o in outcomes {
        let mut line = format!("r = {:>3}  m = {:>3}", o.r, o.m());
        match &o.certificate {
            Ok(c) => line += &format!("  eta2 = {:.6}  eps_bar = {}", c.eta2, c.eps_bar),
            Err(e) => line += &format!("  certification failed: {e}"),
        }
        if let Some(v) = o.max_overshoot {
            line += &format!("  max |x - e| = {v:.6} m");
        }
        if let Some(v) = o.envelope_asymptote {
            line += &format!("  asymptote = {v:.4} m");
        }
        if let Some(c) = &o.calibration {
            match c.eps_star {
                Some(e) => line += &format!("  eps* = {e:.6}"),
                None => line += "  eps* not found",
            }
        }
        if let Some((x, y)) = &o.reports {
            line += &format!("  x-envelope {}  y-envelope {}", verdict(x.holds()), verdict(y.holds()));
        }
        println!("{line}");
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "holds"
    } else {
        "violated"
    }
}

fn run_stages(cfg: &ExperimentConfig, stages: Stages) -> Result<Vec<RangeOutcome>> {
    let outcomes = experiment::run_ranges(cfg, stages)?;
    experiment::write_outcomes(cfg, &outcomes, &cfg.output.dir)?;
    print_ranges(&outcomes);
    Ok(outcomes)
}

fn out_file(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(args) => {
            let cfg = args.load()?;
            run_stages(&cfg, Stages { simulate: true, verify: false })?;
        }
        Command::Certify(args) => {
            let cfg = args.load()?;
            run_stages(&cfg, Stages { simulate: false, verify: false })?;
        }
        Command::Verify(args) => {
            let cfg = args.load()?;
            run_stages(&cfg, Stages { simulate: false, verify: true })?;
        }
        Command::Sweep(args) => {
            let cfg = args.load()?;
            run_stages(&cfg, Stages { simulate: true, verify: true })?;
            if !cfg.sweep.eps_list.is_empty() {
                let rows = experiment::sweep_eps(&cfg)?;
                experiment::write_sweep(&rows, out_file(&cfg.output.dir, "sweep.csv")?)?;
                for row in &rows {
                    println!("r = {:>3}  eps = {:<8}  max |x - e| = {:.6} m", row.r, row.eps, row.max_overshoot);
                }
            }
        }
        Command::StringStability(args) => {
            let cfg = args.load()?;
            let table = experiment::run_string_stability(&cfg)?;
            table.write_csv(out_file(&cfg.output.dir, "string_stability.csv")?)?;
            for row in &table.rows {
                println!(
                    "n = {:>3}  eta = {:.4}  max |x - e| = {:.6} m",
                    row.n, row.eta, row.max_overshoot
                );
            }
            println!("length-free bound = {:.4} m", table.bound);
            println!("all within bound: {}", table.all_within_bound());
        }
    }
    Ok(())
}
