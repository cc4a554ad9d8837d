use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tdsv::cli::{
    self, CliError, FINAL_CHECKPOINT, GRADCHECK_TOLERANCE,
};
use tdsv::config::RunConfig;

#[derive(Parser)]
#[command(name = "tdsv", about = "Keyword-conditioned speaker verification experiments")]
struct Cli {
    /// Flat `key = value` config file; flags below override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (checkpoints, logs, results).
    #[arg(long, global = true)]
    out: Option<String>,
    /// Checkpoint to evaluate or visualize; defaults to <out>/model.atnw.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Attention scoring function.
    #[arg(long, global = true, value_parser = ["bo", "l", "sl", "nl", "snl"])]
    scoring: Option<String>,
    /// d-vector mode.
    #[arg(long, global = true, value_parser = ["baseline", "basic", "cross", "divided"])]
    mode: Option<String>,
    /// Weight maxpooling applied to attention weights.
    #[arg(long, global = true, value_parser = ["none", "sliding", "topk"])]
    pooling: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic feature corpus and manifest.
    GenData,
    /// Train a model on the generated corpus (requires --seed).
    Train,
    /// Evaluate a checkpoint on the held-out split.
    Eval,
    /// Check analytic gradients against finite differences for every
    /// scoring x mode x pooling combination.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Self-test: corrupt one gradient and expect the run to fail.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Export attention-weight heatmaps (PGM + CSV) per pooling setting.
    VizWeights {
        /// Number of held-out utterances per image.
        #[arg(long, default_value_t = 16)]
        batch: usize,
    },
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &cli.out {
        config.set("out-dir", out)?;
    }
    if let Some(scoring) = &cli.scoring {
        config.set("scoring", scoring)?;
    }
    if let Some(mode) = &cli.mode {
        config.set("mode", mode)?;
    }
    if let Some(pooling) = &cli.pooling {
        config.set("pooling", pooling)?;
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<ExitCode, CliError> {
    let config = build_config(cli)?;
    let checkpoint = cli
        .checkpoint
        .clone()
        .unwrap_or_else(|| Path::new(&config.out_dir).join(FINAL_CHECKPOINT));
    match &cli.command {
        Command::GenData => {
            cli::cmd_gen_data(&config)?;
            println!("corpus written to {}", config.data_dir);
        }
        Command::Train => {
            if cli.seed.is_none() {
                eprintln!("train requires an explicit --seed");
                return Ok(ExitCode::from(1));
            }
            let summary = cli::cmd_train(&config)?;
            if summary.resumed_from > 0 {
                println!("resumed from step {}", summary.resumed_from);
            }
            println!(
                "trained {} steps; mean loss over last 100 steps: {:.6}",
                summary.steps_run, summary.mean_loss_last_100
            );
            println!("checkpoint: {}", summary.final_checkpoint.display());
        }
        Command::Eval => {
            let (path, matrix) = cli::cmd_eval(&config, &checkpoint)?;
            for (enroll, verify, r, _) in &matrix.cells {
                println!("enroll {} / verify {}: EER {:.4}", enroll.tag(), verify.tag(), r.eer);
            }
            println!("average EER {:.4}", matrix.average_eer());
            println!("results: {}", path.display());
        }
        Command::Gradcheck { seeds, corrupt } => {
            let rows = cli::run_gradcheck(*seeds, *corrupt);
            let mut failed = 0;
            for row in &rows {
                let ok = row.max_rel_err < GRADCHECK_TOLERANCE;
                println!(
                    "{:<4} {:<8} {:<8} max-rel-err {:.3e} {}",
                    row.scoring,
                    row.mode,
                    row.pooling,
                    row.max_rel_err,
                    if ok { "ok" } else { "FAIL" }
                );
                failed += usize::from(!ok);
            }
            println!("{} of {} combinations passed", rows.len() - failed, rows.len());
            if failed > 0 {
                return Ok(ExitCode::from(3));
            }
        }
        Command::VizWeights { batch } => {
            for path in cli::cmd_viz_weights(&config, &checkpoint, *batch)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's default exit code for usage errors is 2; this tool
            // reserves 2 for data errors.
            let is_help = e.use_stderr();
            e.print().expect("write clap message");
            return if is_help { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
