use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shifcon::pipeline::{
    cmd_dump, cmd_eval, cmd_export_lda, cmd_profile, cmd_select, cmd_train, cmd_vectors,
    parse_layers, run_ablation, run_beta_sweep, run_pipeline, Manifest, Overrides, PipelineConfig,
};
use shifcon::training::Variant;
use shifcon::{Error, Result};

const THREADS_VAR: &str = "SHIFCON_THREADS";

#[derive(Debug, Parser)]
#[command(name = "shifcon", version, about = "Shift projection and contrastive alignment on a toy multilingual transformer")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "shifcon-out")]
    out: PathBuf,
    /// Fraction of layers in the shift area.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Manual shift area `L_to:L_bk`.
    #[arg(long, global = true)]
    layers: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Corpus, stage 1, calibration, area selection, stage 2 and evaluation.
    Pipeline,
    /// Hidden states of a checkpoint on the calibration split.
    Dump {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Record dominant-like states with this plan's hooks.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Language vectors from a dump.
    Vectors {
        #[arg(long)]
        dump: PathBuf,
    },
    /// Per-layer distance profiles from a dump.
    Profile {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        vectors: Option<PathBuf>,
    },
    /// Shift area from a profile.
    Select {
        #[arg(long)]
        profile: PathBuf,
    },
    /// Two-stage training of the configured variant.
    Train,
    /// Held-out metrics of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Trains the ablation variants from one stage-1 model.
    Ablate {
        /// Comma-separated subset of msft_only, shifcon, no_shift, no_mcl.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
    },
    /// One stage-2 model per beta from one stage-1 model.
    BetaSweep {
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
    },
    /// LDA coordinates of pooled sentence states as CSV.
    ExportLda {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        components: Option<Vec<usize>>,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_VAR} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot configure {n} worker threads: {e}")))
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let overrides = Overrides {
        seed: common.seed,
        beta: common.beta,
        layers: common.layers.as_deref().map(parse_layers).transpose()?,
    };
    let cfg = cfg.with_overrides(&overrides);
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let cfg = load_config(&cli.common)?;
    let out = cli.common.out.as_path();
    let manifest: Manifest = match cli.command {
        Command::Pipeline => {
            let (report, manifest) = run_pipeline(&cfg, out)?;
            println!(
                "area {}..{}  non-dominant accuracy {:.4} -> {:.4}  consistency {:.3} -> {:.3}  area distance {:.3} -> {:.3}",
                report.area.l_to,
                report.area.l_bk,
                report.stage1.non_dominant_accuracy,
                report.stage2.non_dominant_accuracy,
                report.stage1.non_dominant_consistency,
                report.stage2.non_dominant_consistency,
                report.stage1.area_distance.mean,
                report.stage2.area_distance.mean,
            );
            manifest
        }
        Command::Dump { checkpoint, plan } => cmd_dump(&cfg, &checkpoint, plan.as_deref(), out)?,
        Command::Vectors { dump } => cmd_vectors(&cfg, &dump, out)?,
        Command::Profile { dump, vectors } => cmd_profile(&cfg, &dump, vectors.as_deref(), out)?,
        Command::Select { profile } => cmd_select(&cfg, &profile, out)?,
        Command::Train => cmd_train(&cfg, out)?,
        Command::Eval { checkpoint, plan } => cmd_eval(&cfg, &checkpoint, plan.as_deref(), out)?,
        Command::Ablate { variants } => {
            let variants = match variants {
                Some(names) => names.iter().map(|n| n.parse()).collect::<Result<Vec<Variant>>>()?,
                None => Variant::ALL.to_vec(),
            };
            let (report, manifest) = run_ablation(&cfg, &variants, out)?;
            print!("{}", report.to_csv());
            manifest
        }
        Command::BetaSweep { betas } => {
            let betas = betas.unwrap_or_else(|| cfg.beta_sweep.clone());
            let (report, manifest) = run_beta_sweep(&cfg, &betas, out)?;
            print!("{}", report.to_csv());
            manifest
        }
        Command::ExportLda { dump, layer, components } => {
            cmd_export_lda(&cfg, &dump, layer, components.as_deref(), out)?
        }
    };
    println!(
        "{}: {} artifact(s) in {}",
        manifest.command,
        manifest.artifacts.len(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
