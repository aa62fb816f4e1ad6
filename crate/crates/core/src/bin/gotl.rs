use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gotl::checks;
use gotl::config::KeyValues;
use gotl::experiment::{fit_source, run_experiment, run_mpc_study, ExperimentConfig, ExperimentId};
use gotl::mpc::pareto_filter;
use gotl::par::Execution;
use gotl::sim::ScenarioConfig;
use gotl::Error;

#[derive(Parser)]
#[command(
    name = "gotl",
    version,
    about = "Online transfer learning experiments for thermal-zone prediction and heating control"
)]
struct Cli {
    /// Seed: replaces the scenario seed for `simulate`, shifts every scenario
    /// seed for experiments.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for all outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Key-value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one house under the thermostat and write its dataset.
    Simulate {
        /// Output file stem and domain id.
        #[arg(long, default_value = "scenario")]
        name: String,
    },
    /// Fit the source predictor of an experiment and write its coefficients.
    FitSource {
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
    },
    /// Run a prediction experiment and write its metrics and weights.
    RunExp {
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
    },
    /// Sweep kappa and write the comfort-heating curves.
    MpcCurve {
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
    },
    /// Run the built-in invariant checks.
    Validate,
}

fn experiment_config(
    cli: &Cli,
    positional: &Option<PathBuf>,
    preset: &Option<String>,
    fallback: ExperimentId,
) -> gotl::Result<ExperimentConfig> {
    let path = positional.as_ref().or(cli.config.as_ref());
    let cfg = match (path, preset) {
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "give either a config file or --preset, not both".into(),
            ))
        }
        (Some(p), None) => ExperimentConfig::load(p)?,
        (None, Some(tag)) => ExperimentConfig::preset(ExperimentId::from_tag(tag)?),
        (None, None) => ExperimentConfig::preset(fallback),
    };
    let cfg = match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> gotl::Result<std::fs::File> {
    std::fs::create_dir_all(dir)?;
    Ok(std::fs::File::create(dir.join(name))?)
}

fn run(cli: &Cli) -> gotl::Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match &cli.command {
        Command::Simulate { name } => {
            let mut sc = match &cli.config {
                Some(p) => {
                    let kv = KeyValues::load(p)?;
                    kv.reject_unknown(&ScenarioConfig::known_keys())?;
                    ScenarioConfig::from_key_values(&kv, "")?
                }
                None => ScenarioConfig::default(),
            };
            if let Some(s) = cli.seed {
                sc.seed = s;
            }
            let run = sc.simulate(name)?;
            run.dataset
                .write_csv(create(&cli.out_dir, &format!("{name}.csv"))?)?;
            println!(
                "{name}: {} samples, {:.1} kWh delivered",
                run.dataset.len(),
                run.heat_kwh.iter().sum::<f64>()
            );
        }
        Command::FitSource { config, preset } => {
            let cfg = experiment_config(cli, config, preset, ExperimentId::Exp1)?;
            let fit = fit_source(&cfg, exec)?;
            let file = format!("{}_source_model.csv", cfg.id.tag());
            fit.model.write_csv(create(&cli.out_dir, &file)?)?;
            match fit.components {
                Some(m) => println!("{file}: combined source, {m} transfer components"),
                None => println!("{file}: single source"),
            }
        }
        Command::RunExp { config, preset } => {
            let cfg = experiment_config(cli, config, preset, ExperimentId::Exp1)?;
            let out = run_experiment(&cfg, exec)?;
            out.save(&cli.out_dir)?;
            let last = out.rows.last().expect("at least one interval");
            println!(
                "{}: {} intervals, final alpha {:.3}, ewma rmse source {:.3} target {:.3} gotl {:.3} ensemble {:.3}",
                cfg.id.tag(),
                out.rows.len(),
                last.alpha,
                last.ewma_source,
                last.ewma_target,
                last.ewma_gotl,
                last.ewma_ensemble
            );
        }
        Command::MpcCurve { config, preset } => {
            let cfg = experiment_config(cli, config, preset, ExperimentId::Mpc)?;
            let study = run_mpc_study(&cfg, exec)?;
            study.save(&cli.out_dir)?;
            for c in &study.curves {
                println!(
                    "{}: {} of {} points non-dominated",
                    c.name,
                    pareto_filter(&c.points).len(),
                    c.points.len()
                );
                for p in &c.points {
                    println!(
                        "  kappa {:>8} comfort {:>12.3} heating {:>10.2} kWh",
                        p.kappa, p.comfort, p.heating_kwh
                    );
                }
            }
        }
        Command::Validate => {
            let results = checks::run_all(cli.seed.unwrap_or(0))?;
            let failed = results.iter().filter(|c| !c.passed).count();
            for c in &results {
                println!(
                    "{} {} ({})",
                    if c.passed { "ok  " } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            if failed > 0 {
                return Err(Error::IllConditioned(format!(
                    "{failed} invariant check(s) failed"
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
