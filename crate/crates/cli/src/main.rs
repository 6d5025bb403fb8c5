use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use cpf_cli::pipeline::{self, read_json, Layout};
use cpf_cli::PipelineConfig;
use cpf_core::replay::CampaignCriteria;

#[derive(Parser)]
#[command(name = "cpf", version, about = "Campaign performance forecasting by auction replay and calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline configuration JSON; defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root of the artifact tree.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<(PipelineConfig, Layout)> {
        Ok((PipelineConfig::load_or_default(self.config.as_deref())?, Layout::new(&self.out)))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic world.
    GenWorld(Common),
    /// Generate the day auction log, UTS relation and action log.
    GenLogs(Common),
    /// Train the click and conversion response models.
    TrainUrf(Common),
    /// Write urf.ndjson for the sampled auctions.
    EmitUrf(Common),
    /// Sample campaigns, replay them and simulate their true delivery.
    BuildDataset(Common),
    /// Replay one campaign over a log directory.
    Replay {
        #[arg(long)]
        criteria: PathBuf,
        #[arg(long, alias = "logs-dir")]
        logs: PathBuf,
        #[arg(long)]
        scale_factor: Option<f64>,
    },
    /// Train the MTL_N calibrator and the MTL_1 ablation.
    TrainCalibrator(Common),
    /// Score replay and calibrators on the evaluation split.
    Evaluate(Common),
    /// pctr disturbance sweep.
    Disturb(Common),
    /// Run every stage from world generation to the disturbance sweep.
    Pipeline(Common),
    /// Serve forecasts over HTTP.
    Serve(cpf_service::ServeArgs),
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenWorld(c) => {
            let (cfg, out) = c.load()?;
            let w = pipeline::gen_world_stage(&cfg, &out)?;
            println!("world: {} users, {} tags, {} advertisers", w.users.len(), w.tags.len(), w.advertisers.len());
        }
        Command::GenLogs(c) => {
            let (cfg, out) = c.load()?;
            let m = pipeline::gen_logs_stage(&cfg, &out)?;
            println!("logs for {} written to {}", m.log_date, out.logs().display());
        }
        Command::TrainUrf(c) => {
            let (cfg, out) = c.load()?;
            let e = pipeline::train_urf_stage(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&e)?);
        }
        Command::EmitUrf(c) => {
            let (_, out) = c.load()?;
            println!("{} urf records", pipeline::emit_urf_stage(&out)?);
        }
        Command::BuildDataset(c) => {
            let (cfg, out) = c.load()?;
            let s = pipeline::build_dataset_stage(&cfg, &out)?;
            println!("train {} / valid {} / eval {}", s.train.len(), s.valid.len(), s.eval.len());
        }
        Command::Replay { criteria, logs, scale_factor } => {
            let c: CampaignCriteria<f64> = read_json(&criteria)?;
            let r = pipeline::replay_criteria(&logs, &c, scale_factor)?;
            println!("{}", serde_json::to_string(&r)?);
        }
        Command::TrainCalibrator(c) => {
            let (cfg, out) = c.load()?;
            let r = pipeline::train_calibrator_stage(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::Evaluate(c) => {
            let (_, out) = c.load()?;
            print!("{}", pipeline::evaluate_stage(&out)?.to_markdown());
        }
        Command::Disturb(c) => {
            let (cfg, out) = c.load()?;
            pipeline::disturb_stage(&cfg, &out)?;
            println!("{}", out.report().join("disturbance.csv").display());
        }
        Command::Pipeline(c) => {
            let (cfg, out) = c.load()?;
            print!("{}", pipeline::run_all(&cfg, &out)?.to_markdown());
        }
        Command::Serve(args) => {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async {
                tokio::select! {
                    r = cpf_service::serve(args) => r.map_err(anyhow::Error::from),
                    _ = tokio::signal::ctrl_c() => Ok(()),
                }
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
