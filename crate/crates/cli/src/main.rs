use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ods_core::harness::{self, ExperimentConfig, ResultTree};
use ods_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ods",
    version,
    about = "Seeded ODS/ODI attack experiments on synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset file.
    GenData(Common),
    /// Train the target, robust twin and surrogates.
    Train(Common),
    /// Run every configured attack and write traces.
    Attack(Common),
    /// Measure ODI and transferred-ODS output diversity.
    Diversity(Common),
    /// Rebuild summary tables and report.txt from the traces.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// All stages in order.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment TOML. Defaults to the copy saved in the output directory.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for the per-input fan-out.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let path = self
            .config
            .clone()
            .unwrap_or_else(|| ResultTree::new(&self.out).config());
        let mut cfg = ExperimentConfig::load(&path)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn stage<T>(
    name: &str,
    common: &Common,
    f: impl FnOnce(&ExperimentConfig, &ResultTree) -> Result<T>,
) -> Result<()> {
    let cfg = common.load().map_err(|e| e.in_stage("config"))?;
    f(&cfg, &ResultTree::new(&common.out)).map_err(|e| e.in_stage(name))?;
    Ok(())
}

fn print_report(out: &Path) -> Result<()> {
    let r = harness::report(&ResultTree::new(out)).map_err(|e| e.in_stage("report"))?;
    print!("{}", r.to_text());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => stage("gen-data", &c, harness::stage_gen_data),
        Command::Train(c) => stage("train", &c, harness::stage_train),
        Command::Attack(c) => stage("attack", &c, harness::stage_attack),
        Command::Diversity(c) => stage("diversity", &c, |cfg, tree| {
            match harness::stage_diversity(cfg, tree)? {
                Some(d) => {
                    for (m, p) in [("start", &d.start), ("transfer", &d.transfer)] {
                        println!(
                            "{m}: {} {:.4} vs {} {:.4} (ratio {:.2})",
                            p.treatment,
                            p.treatment_mean,
                            p.baseline,
                            p.baseline_mean,
                            p.ratio()
                        );
                    }
                }
                None => println!("no diversity block in the config"),
            }
            Ok(())
        }),
        Command::Report { out } => print_report(&out),
        Command::Run(c) => {
            let cfg = c.load().map_err(|e| e.in_stage("config"))?;
            let res = harness::run_experiment(&cfg, &c.out)?;
            print!("{}", res.report.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let stage = e.stage().unwrap_or("ods").to_string();
            let mut msg = e.to_string();
            if let Error::Stage { source, .. } = &e {
                msg = source.to_string();
            }
            eprintln!("error [{stage}]: {msg}");
            ExitCode::FAILURE
        }
    }
}
