use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use msab::bench::{self, BenchConfig};
use msab::checks;
use msab::config::{BirthKind, ExperimentConfig};
use msab::experiment;

const EXIT_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "msab", version, about = "Multi-sensor adaptive birth: simulation, oracle checks and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run Monte Carlo tracking trials of a scenario and write CSV metrics.
    Simulate {
        /// Experiment configuration (TOML).
        config: PathBuf,
        #[arg(long, value_parser = parse_birth)]
        birth: BirthKind,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        /// Overrides `scenario.seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run one of the randomized verification suites.
    Oracle {
        #[arg(long = "case", value_enum)]
        case: OracleCase,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time the birth sampler across sensor counts and fit the log-log slope.
    Bench {
        /// Sensor counts: a range `a..b` (inclusive) or a list `2,3,4,6,8`.
        #[arg(long, default_value = "2,3,4,6,8", value_parser = parse_sensors)]
        sensors: SensorCounts,
        #[arg(long, default_value_t = 20)]
        measurements: usize,
        #[arg(long = "gibbs-iters", default_value_t = 1000)]
        gibbs_iters: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleCase {
    Tv,
    Bound,
    BackendXcheck,
}

fn parse_birth(s: &str) -> Result<BirthKind, String> {
    s.parse().map_err(|e: msab::Error| e.to_string())
}

#[derive(Clone)]
struct SensorCounts(Vec<usize>);

fn parse_sensors(s: &str) -> Result<SensorCounts, String> {
    let bad = |_| format!("invalid sensor list `{s}`");
    let v: Vec<usize> = match s.split_once("..") {
        Some((a, b)) => {
            let (a, b): (usize, usize) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
            (a..=b).collect()
        }
        None => s.split(',').map(|x| x.trim().parse().map_err(bad)).collect::<Result<_, _>>()?,
    };
    if v.is_empty() || v.contains(&0) {
        return Err(format!("sensor counts must be positive: `{s}`"));
    }
    Ok(SensorCounts(v))
}

/// Failure that maps to a specific exit code.
enum Failure {
    Usage(anyhow::Error),
    Failed(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Failed(e)
    }
}

fn threads_from_env() -> Result<Option<usize>, Failure> {
    match std::env::var("MSAB_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::Usage(anyhow::anyhow!("MSAB_THREADS: expected a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

fn simulate(config: PathBuf, birth: BirthKind, trials: usize, seed: Option<u64>, out: PathBuf) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(&config).map_err(|e| Failure::Usage(e.into()))?;
    if let Some(s) = seed {
        cfg.scenario.seed = s;
    }
    experiment::check_compatible(&cfg, birth).map_err(|e| Failure::Usage(e.into()))?;
    if trials == 0 {
        return Err(Failure::Usage(anyhow::anyhow!("--trials must be at least 1")));
    }
    let results = experiment::run_trials(&cfg, birth, trials, None).context("running trials")?;
    experiment::write_outputs(&out, &cfg, birth, trials, &results).context("writing outputs")?;
    let n = results.len() as f64;
    let mean = |f: &dyn Fn(&experiment::TrialResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    println!("birth: {birth}, trials: {trials}, seed: {}", cfg.scenario.seed);
    println!("mean OSPA(2): {:.3}", mean(&|r| r.mean_ospa2()));
    println!("mean |cardinality error| (lagged): {:.3}", mean(&|r| r.mean_abs_lagged_cardinality_error()));
    println!("mean birth components: {:.3}", mean(&|r| r.mean_birth_components()));
    println!("mean tuple space: {:.1}", mean(&|r| r.mean_tuple_space()));
    println!("wrote {}", out.display());
    Ok(())
}

fn oracle(case: OracleCase, seed: u64) -> Result<(), Failure> {
    let passed = match case {
        OracleCase::Tv => {
            let r = checks::tv_suite(seed, 20, 4000).context("tv suite")?;
            for (i, d) in r.distances.iter().enumerate() {
                println!("instance {i:2}: tv {d:.4}");
            }
            println!("max tv distance {:.4}, threshold {}", r.max(), r.threshold);
            r.passed()
        }
        OracleCase::Bound => {
            let r = checks::bound_suite(seed, 100).context("bound suite")?;
            for (i, c) in r.checks.iter().enumerate() {
                println!(
                    "instance {i:3}: l1_distance {:.3e} <= bound {:.3e}: {}",
                    c.l1_distance,
                    c.bound,
                    c.holds()
                );
            }
            println!(
                "{} instances, {} violations, max l1/bound {:.3}",
                r.checks.len(),
                r.violations(),
                r.max_ratio()
            );
            r.violations() == 0
        }
        OracleCase::BackendXcheck => {
            let r = checks::backend_xcheck_suite(seed, 20, 10_000).context("backend cross-check")?;
            for (i, d) in r.distances.iter().enumerate() {
                println!("instance {i:2}: weight tv {d:.4}");
            }
            println!("max normalized-weight discrepancy {:.4}, threshold {}", r.max(), r.threshold);
            r.passed()
        }
    };
    println!("{}", if passed { "PASS" } else { "FAIL" });
    if passed {
        Ok(())
    } else {
        Err(Failure::Failed(anyhow::anyhow!("oracle check failed")))
    }
}

fn run_bench(cfg: BenchConfig, out: PathBuf) -> Result<(), Failure> {
    let points = bench::run(&cfg).context("benchmark")?;
    let mut w = csv::Writer::from_path(&out).with_context(|| format!("creating {}", out.display()))?;
    for p in &points {
        w.serialize(p).context("writing csv")?;
        println!("V = {:2}: {:.4} s", p.sensors, p.seconds);
    }
    w.flush().context("writing csv")?;
    if points.len() >= 2 {
        println!("log-log slope: {:.3}", bench::sensor_slope(&points));
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = threads_from_env()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.into()))?;
    }
    match cli.command {
        Command::Simulate {
            config,
            birth,
            trials,
            seed,
            out,
        } => simulate(config, birth, trials, seed, out),
        Command::Oracle { case, seed } => oracle(case, seed),
        Command::Bench {
            sensors,
            measurements,
            gibbs_iters,
            repeats,
            seed,
            out,
        } => {
            if measurements == 0 || gibbs_iters == 0 {
                return Err(Failure::Usage(anyhow::anyhow!("--measurements and --gibbs-iters must be positive")));
            }
            run_bench(
                BenchConfig {
                    sensors: sensors.0,
                    measurements,
                    iterations: gibbs_iters,
                    repeats,
                    seed,
                },
                out,
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Failed(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILED)
        }
    }
}
