use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use salmut::exact::{argmax, rvia_solve, scan, unimodality_from_scan, RviaOptions};
use salmut::harness::{self, compare, gradient_check, run_experiment, Algorithm, ExperimentConfig, ModelConfig};
use salmut::Execution;

#[derive(Parser, Debug)]
#[command(name = "salmut", version, about = "Threshold-structured admission control: exact oracles and online learners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Relative value iteration: optimal thresholds and gain.
    Solve(Common),
    /// Average reward of every ordered integer threshold vector.
    Scan(Common),
    /// Closed-form gradient against central finite differences.
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        delta: f64,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Run one algorithm (or all) over the configured seeds.
    Learn {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_algorithm)]
        algorithm: Option<Algorithm>,
    },
    /// Run every algorithm and print the comparison table.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Exit nonzero if any check fails.
        #[arg(long)]
        check: bool,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Service rate; overrides the config.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_iter: Option<u64>,
    #[arg(long)]
    stride: Option<u64>,
    #[arg(long)]
    include_g_term: Option<bool>,
    /// Run on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: salmut::HarnessError| e.to_string())
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(mu) = self.mu {
            cfg.model.mu = mu;
        }
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(n) = self.max_iter {
            cfg.max_iterations = n;
        }
        if let Some(k) = self.stride {
            cfg.stride = k;
        }
        if let Some(g) = self.include_g_term {
            cfg.include_g_term = g;
        }
        if self.sequential {
            cfg.execution = Execution::Sequential;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn solve(common: &Common) -> Result<ExitCode> {
    let cfg = common.config()?;
    let model = cfg.model.build()?;
    let sol = rvia_solve(&model, &RviaOptions::default())?;
    println!("thresholds {:?}", sol.thresholds);
    println!("gain {}", sol.gain);
    println!("sweeps {}", sol.values.iterations);
    println!("values {:?}", sol.values.values);
    if let Some(dir) = &common.out {
        ensure_dir(dir)?;
        write_json(&dir.join("solve.json"), &sol)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run_scan(common: &Common) -> Result<ExitCode> {
    let cfg = common.config()?;
    let model = cfg.model.build()?;
    let rows = scan(&model, cfg.execution)?;
    let best = argmax(&rows);
    let report = unimodality_from_scan(&model, &rows);
    println!("evaluated {}", best.evaluated);
    println!("argmax {:?}", best.thresholds);
    println!("sigma {}", best.gain);
    println!("unimodality violations {}", report.violations.len());
    if let Some(dir) = &common.out {
        ensure_dir(dir)?;
        harness::write_scan(&dir.join("scan.csv"), &rows)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn grad_check(common: &Common, samples: usize, delta: f64, tolerance: f64) -> Result<ExitCode> {
    let cfg = common.config()?;
    let model = cfg.model.build()?;
    let seed = cfg.seeds[0];
    let report = gradient_check(&model, samples, seed, delta, cfg.execution)?;
    for p in &report.points {
        println!("tau {:?} analytic {:?} numeric {:?} rel {:e}", p.tau, p.analytic, p.numeric, p.relative_error);
    }
    println!("max relative error {:e}", report.max_relative_error);
    if let Some(dir) = &common.out {
        ensure_dir(dir)?;
        write_json(&dir.join("grad_check.json"), &report)?;
    }
    Ok(if report.max_relative_error < tolerance { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn learn(common: &Common, algorithm: Option<Algorithm>) -> Result<ExitCode> {
    let mut cfg = common.config()?;
    if let Some(a) = algorithm {
        cfg.algorithm = a;
    }
    let exp = run_experiment(&cfg, common.out.as_deref())?;
    let s = &exp.summary;
    println!("optimal {:?} sigma {}", s.optimal_policy, s.optimal_sigma);
    for a in &s.algorithms {
        println!(
            "{}: median convergence {:?}, median sigma {:?}, median rho {:?}",
            a.algorithm, a.median_convergence, a.median_final_sigma, a.median_final_rho
        );
        for (seed, policy) in a.seeds.iter().zip(&a.final_policy) {
            println!("  seed {seed}: policy {policy:?}");
        }
    }
    for f in &s.failures {
        eprintln!("failed {} seed {}: {}", f.algorithm, f.seed, f.error);
    }
    Ok(if s.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn run_compare(common: &Common, check: bool) -> Result<ExitCode> {
    let configs: Vec<ExperimentConfig> = if common.config.is_some() || common.mu.is_some() {
        vec![common.config()?]
    } else {
        [4.0, 2.0]
            .iter()
            .map(|&mu| {
                let mut cfg = common.config()?;
                cfg.model = ModelConfig { mu, ..cfg.model };
                Ok(cfg)
            })
            .collect::<Result<_>>()?
    };
    let mut all_passed = true;
    let mut tables = Vec::new();
    for mut cfg in configs {
        cfg.algorithm = Algorithm::All;
        let out = common.out.as_ref().map(|d| d.join(format!("mu{}", cfg.model.mu)));
        let exp = run_experiment(&cfg, out.as_deref())?;
        if !exp.summary.failures.is_empty() {
            for f in &exp.summary.failures {
                eprintln!("failed {} seed {}: {}", f.algorithm, f.seed, f.error);
            }
            all_passed = false;
        }
        let table = compare(&exp.summary);
        print!("{table}");
        all_passed &= table.passed();
        tables.push(table);
    }
    if let Some(dir) = &common.out {
        ensure_dir(dir)?;
        write_json(&dir.join("comparison.json"), &tables)?;
    }
    if check && !all_passed {
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(c) => solve(c),
        Command::Scan(c) => run_scan(c),
        Command::GradCheck { common, samples, delta, tolerance } => {
            if *samples == 0 {
                Err(anyhow::anyhow!("--samples must be positive"))
            } else {
                grad_check(common, *samples, *delta, *tolerance)
            }
        }
        Command::Learn { common, algorithm } => learn(common, *algorithm),
        Command::Compare { common, check } => run_compare(common, *check),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
