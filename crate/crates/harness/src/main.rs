use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pmor_harness::{Experiment, ExperimentConfig, HarnessResult, OutputDir, PipelineState, RunReport, Stage};

#[derive(Parser)]
#[command(name = "pmor", about = "Projection-based reduced-order model experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration; defaults describe the Burgers experiment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts and reports.
    #[arg(long, default_value = "pmor-out")]
    out: PathBuf,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the HDM and write training snapshots.
    HdmRun(Common),
    /// Build POD bases from stored snapshots.
    PodBuild(Common),
    /// Simulate reduced models with the stored bases.
    RomRun(Common),
    /// Train ECSW samples for the stored bases.
    EcswTrain(Common),
    /// Simulate hyperreduced models with the stored samples.
    HpromRun(Common),
    /// Compute relative errors of stored runs against the HDM and write the report.
    Compare(Common),
    /// Run all configured stages once per viscosity, each in its own subdirectory.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Viscosities to sweep.
        #[arg(long = "viscosity", num_args = 1.., default_values_t = vec![1e-2, 1e-3, 1e-4])]
        viscosities: Vec<f64>,
    },
}

fn load_config(common: &Common) -> HarnessResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn print_summary(report: &RunReport) {
    for run in &report.runs {
        let status = match run.classification {
            pmor_harness::Classification::Completed => "completed".to_string(),
            pmor_harness::Classification::DivergedAt { t, .. } => format!("diverged at t={t}"),
        };
        let n = run.reduced_dim.map_or(String::new(), |n| format!(" n={n}"));
        println!("{:<32}{n:>7}  {status:<20} {:>9.3}s", run.label, run.wall_clock);
        if let Some(errs) = report.errors.get(&run.label) {
            for (q, e) in errs {
                println!("    RE[{q}] = {e:.4}%");
            }
        }
    }
}

/// Runs one stage against the artifacts already in `out`.
fn stage_command(common: &Common, stage: Stage) -> HarnessResult<()> {
    let cfg = load_config(common)?;
    let experiment = Experiment::new(cfg.clone())?;
    let dir = OutputDir::new(&common.out)?;
    let mut state = PipelineState::default();
    if stage != Stage::Hdm {
        dir.load_state(&mut state)?;
    }
    experiment.run_stage(stage, &mut state)?;
    dir.save_state(&state, true)?;
    let report = RunReport::new(&cfg, experiment.qoi_labels(), &state);
    if stage == Stage::Compare || stage == Stage::Hdm {
        dir.write_report(&report, cfg.report.write_csv)?;
    } else if cfg.report.write_csv {
        for run in &report.runs {
            dir.write_histories(run)?;
        }
    }
    print_summary(&report);
    Ok(())
}

fn sweep(common: &Common, viscosities: &[f64]) -> HarnessResult<()> {
    let base = load_config(common)?;
    let mut summary = Vec::new();
    for &nu in viscosities {
        let mut cfg = base.clone();
        cfg.model.viscosity = nu;
        cfg.name = format!("{}_nu{nu:e}", base.name);
        let out = common.out.join(format!("nu_{nu:e}"));
        println!("== viscosity {nu:e} -> {}", out.display());
        let report = pmor_harness::run_experiment(&cfg, Some(Path::new(&out)))?;
        print_summary(&report);
        summary.push(serde_json::json!({
            "viscosity": nu,
            "directory": out,
            "errors": report.errors,
            "classifications": report.runs.iter().map(|r| (r.label.clone(), r.classification)).collect::<std::collections::BTreeMap<_, _>>(),
        }));
    }
    std::fs::create_dir_all(&common.out).map_err(|e| pmor_harness::HarnessError::io(&common.out, e))?;
    let path = common.out.join("sweep.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| pmor_harness::HarnessError::io(&path, e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::HdmRun(c) => stage_command(c, Stage::Hdm),
        Command::PodBuild(c) => stage_command(c, Stage::Pod),
        Command::RomRun(c) => stage_command(c, Stage::Rom),
        Command::EcswTrain(c) => stage_command(c, Stage::Ecsw),
        Command::HpromRun(c) => stage_command(c, Stage::Hprom),
        Command::Compare(c) => stage_command(c, Stage::Compare),
        Command::Sweep { common, viscosities } => sweep(common, viscosities),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
