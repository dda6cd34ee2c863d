use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ugrn::eval::EvalMethod;
use ugrn::pipeline::{Pipeline, RunConfig};
use ugrn::{Error, Result};

/// Universal GRN inference from a frozen expression-reconstruction model.
#[derive(Parser)]
#[command(name = "ugrn", version)]
struct Cli {
    #[command(subcommand)]
    stage: Stage,

    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "ugrn.toml")]
    config: PathBuf,

    /// Output directory; defaults to `run/` next to the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Evaluates only this method: origin-pert, origin-attn, pert, emb, vvp, gdt or ens.
    #[arg(long, global = true)]
    method: Option<EvalMethod>,

    /// Overrides the N/P ratio of the sampled pair sets.
    #[arg(long, global = true)]
    ratio: Option<f64>,

    /// Feature cache directory.
    #[arg(long, global = true, env = "UGRN_CACHE_DIR")]
    cache_dir: Option<PathBuf>,

    /// Accept inputs written under a different manifest.
    #[arg(long, global = true)]
    allow_mixed_manifest: bool,

    /// Overwrite stale feature caches instead of failing.
    #[arg(long, global = true)]
    refresh: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Stage {
    /// Write the synthetic datasets.
    Simulate,
    /// Fit the backend and write its checkpoint.
    Pretrain,
    /// Sample labelled pairs and cache their features.
    Extract,
    /// Train the translators.
    Train,
    /// Run the protocol and sweep and write the report.
    Evaluate,
    /// Validate and print the stored report.
    Report,
    /// Every stage in order.
    Run,
}

fn pipeline(cli: &Cli) -> Result<Pipeline> {
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(method) = cli.method {
        config.methods = vec![method];
    }
    if let Some(ratio) = cli.ratio {
        config.ratio = ratio;
    }
    let out = cli.out.clone().unwrap_or_else(|| config.base_dir.join("run"));
    let mut p = Pipeline::new(config, out)?;
    if let Some(dir) = &cli.cache_dir {
        p = p.with_cache_dir(dir);
    }
    p.allow_mixed_manifest = cli.allow_mixed_manifest;
    p.refresh = cli.refresh;
    Ok(p)
}

/// Runs the stage; `Ok(false)` when a protocol cell failed.
fn execute(cli: &Cli) -> Result<bool> {
    let p = pipeline(cli)?;
    log::info!("manifest {}", p.manifest_hash());
    let report = match cli.stage {
        Stage::Simulate => return p.simulate().map(|_| true),
        Stage::Pretrain => return p.pretrain().map(|_| true),
        Stage::Extract => {
            for w in p.extract()? {
                log::warn!("{:?}: {}", w.kind, w.detail);
            }
            return Ok(true);
        }
        Stage::Train => return p.train().map(|_| true),
        Stage::Evaluate => p.evaluate()?,
        Stage::Report => p.report()?,
        Stage::Run => p.run()?,
    };
    print!("{}", report.to_table());
    Ok(report.protocol.errors.is_empty())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Bad arguments are user errors; help and version are not errors.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: some protocol cells failed; see the report");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> ExitCode {
    if e.is_user_error() {
        ExitCode::from(1)
    } else {
        ExitCode::from(2)
    }
}
