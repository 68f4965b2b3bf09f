use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use pchan_core::fixtures::Case;
use pchan_core::machine::{compile_model, CompileOptions};
use pchan_core::model::parse_choreography;
use pchan_harness::{
    break_even, evaluate, measure_case, mutate_traces, replay_conformance, run_scenario, variant_traces, Mix,
    ScenarioKind, ScenarioSpec,
};
use pchan_trigger::SimConfig;

#[derive(Parser)]
#[command(name = "pchan", version, about = "Process channel compiler and evaluation harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Structured,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a choreography into a state machine description.
    Compile {
        model: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the reduced net as PNML.
        #[arg(long)]
        pnml: Option<PathBuf>,
    },
    /// Run one dispute scenario and print its cost report.
    RunScenario {
        #[arg(long)]
        case: Case,
        #[arg(long, default_value_t = 0)]
        variant: usize,
        #[arg(long)]
        kind: ScenarioKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        window: u64,
        /// Write the ledger transaction log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Replay the conforming variants and seeded mutants through a channel.
    Conformance {
        #[arg(long)]
        case: Case,
        #[arg(long, default_value_t = 2000)]
        mutants: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Runs until the channel deployment pays off at a given dispute rate.
    BreakEven {
        #[arg(long, default_value_t = 0.05)]
        mix: f64,
        #[arg(long)]
        case: Option<Case>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 10)]
        horizon: u64,
    },
    /// Cost table over both cases and the usual dispute rates.
    Report {
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 10)]
        window: u64,
        #[arg(long, default_value_t = 10)]
        horizon: u64,
        /// Write the cumulative savings series as CSV.
        #[arg(long)]
        series: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Cmd) -> Result<bool, Box<dyn std::error::Error>> {
    match cmd {
        Cmd::Compile { model, output, pnml } => {
            let xml = fs::read(&model)?;
            let compiled = compile_model(&parse_choreography(&xml)?, CompileOptions::default())?;
            fs::write(&output, serde_json::to_string_pretty(&compiled.machine.dump())?)?;
            if let Some(p) = pnml {
                fs::write(p, compiled.reduced.to_pnml())?;
            }
            let m = &compiled.machine;
            println!(
                "{} places, {} manual and {} autonomous transitions",
                m.place_count,
                m.manual_count(),
                m.autonomous_count()
            );
            Ok(true)
        }
        Cmd::RunScenario { case, variant, kind, seed, window, log } => {
            let spec = ScenarioSpec::new(case, variant, kind).seed(seed).window(window);
            match run_scenario(&spec) {
                Ok(run) => {
                    if let Some(p) = log {
                        fs::write(p, &run.ledger_log)?;
                    }
                    println!("{}", serde_json::to_string_pretty(&run)?);
                    Ok(true)
                }
                Err(e @ pchan_harness::HarnessError::Invariant(_)) => {
                    eprintln!("{e}");
                    Ok(false)
                }
                Err(e) => Err(e.into()),
            }
        }
        Cmd::Conformance { case, mutants, seed } => {
            let machine = Arc::new(case.compile().machine);
            let variants = variant_traces(case);
            let mut traces = variants.clone();
            traces.extend(mutate_traces(&case.model(), &machine, &variants, mutants, seed)?);
            let r = replay_conformance(machine, &traces, SimConfig::default())?;
            println!(
                "{case}: {} traces, {} conforming, {} rejected, {} incomplete, {} misclassified, {} false accepts, {} unstable",
                r.traces, r.conforming, r.rejected, r.incomplete, r.misclassified, r.false_accepts, r.unstable
            );
            Ok(r.sound() && r.conforming == variants.len())
        }
        Cmd::BreakEven { mix, case, seeds, horizon } => {
            let cases = case.map_or(Case::ALL.to_vec(), |c| vec![c]);
            for c in cases {
                let costs = measure_case(c, seeds, SimConfig::default().dispute_window)?;
                let b = break_even(&costs, Mix::disputes(mix), horizon);
                let runs = b.runs.map_or("never".to_string(), |r| r.to_string());
                println!("{c}: {:.0} saved per run, break-even after {runs} runs", b.per_run_savings);
                for (k, v) in b.cumulative_savings.iter().enumerate() {
                    println!("  {:>3} {v:>12.0}", k + 1);
                }
            }
            Ok(true)
        }
        Cmd::Report { format, seeds, window, horizon, series } => {
            let ev = match evaluate(seeds, window, horizon) {
                Ok(ev) => ev,
                Err(e @ pchan_harness::HarnessError::Invariant(_)) => {
                    eprintln!("{e}");
                    return Ok(false);
                }
                Err(e) => return Err(e.into()),
            };
            match format {
                Format::Table => print!("{}", ev.table()),
                Format::Structured => println!("{}", ev.structured()),
            }
            if let Some(p) = series {
                ev.write_series(fs::File::create(p)?)?;
            }
            Ok(true)
        }
    }
}
