use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use ragaxai::model::{Readout, Variant};
use ragaxai::xai_slime::TargetMode;
use ragaxai_cli::{
    cmd_eval_saliency, cmd_explain, cmd_extract, cmd_predict, cmd_synth, cmd_train, EvalOptions, ExplainMethod,
    ExplainOptions, MethodChoice, Outcome, PredictOptions, RunConfig, SynthOptions,
};

/// Raga identification from tonic-normalized chromagrams, with GradCAM++
/// and SoundLIME explanations.
#[derive(Parser)]
#[command(name = "ragaxai", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: CPU count).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    annotations: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Cache one chromagram per 30 s chunk of every manifest song.
    Extract,
    /// Train a model and report on the test split.
    Train {
        /// CN1+T, CN1+LSTM+T, CN2+LSTM+T or CN2+LSTM.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long, value_parser = parse_readout)]
        readout: Option<Readout>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        patience: Option<usize>,
    },
    /// Classify cached feature files.
    Predict {
        features: Vec<PathBuf>,
        /// Tonic pitch class (0 = C) of every input.
        #[arg(long)]
        tonic: Option<u8>,
    },
    /// Explain the model's decision on cached feature files.
    Explain {
        features: Vec<PathBuf>,
        #[arg(long, value_enum)]
        method: ExplainMethod,
        #[arg(long)]
        tonic: Option<u8>,
        /// Class to explain instead of the predicted one.
        #[arg(long)]
        target: Option<String>,
        /// Write a grayscale PGM overlay per clip.
        #[arg(long)]
        overlay: bool,
        #[command(flatten)]
        slime: SlimeFlags,
    },
    /// Score explanations against expert annotations.
    EvalSaliency {
        #[arg(long, value_enum, default_value = "both")]
        method: MethodChoice,
        #[arg(long, default_value_t = ragaxai::evalsal::DEFAULT_BIN_WIDTH)]
        bin_width: f64,
        #[command(flatten)]
        slime: SlimeFlags,
    },
    /// Generate the synthetic raga corpus.
    Synth {
        #[arg(long, default_value_t = 20)]
        songs_per_class: usize,
        #[arg(long, default_value_t = 60.0)]
        min_duration: f64,
        #[arg(long, default_value_t = 100.0)]
        max_duration: f64,
        /// Skip writing WAV files.
        #[arg(long)]
        no_audio: bool,
    },
}

#[derive(Args)]
struct SlimeFlags {
    #[arg(long)]
    slime_samples: Option<usize>,
    #[arg(long)]
    slime_ridge: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    slime_mode: Option<TargetMode>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: ragaxai::Error| e.to_string())
}

fn parse_readout(s: &str) -> Result<Readout, String> {
    serde_json::from_value(serde_json::Value::String(s.to_lowercase())).map_err(|_| format!("unknown readout {s}"))
}

fn parse_mode(s: &str) -> Result<TargetMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_lowercase())).map_err(|_| format!("unknown mode {s}"))
}

fn run_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
        if v.is_some() {
            slot.clone_from(v);
        }
    };
    set(&mut cfg.manifest, &c.manifest);
    set(&mut cfg.cache_dir, &c.cache_dir);
    set(&mut cfg.checkpoint, &c.checkpoint);
    set(&mut cfg.annotations, &c.annotations);
    if let Some(d) = &c.out_dir {
        cfg.out_dir.clone_from(d);
    }
    if let Some(j) = c.jobs {
        cfg.jobs = j;
    }
    let seed = c.seed.unwrap_or(cfg.seed);
    Ok(cfg.with_seed(seed))
}

fn apply_slime(cfg: &mut RunConfig, f: &SlimeFlags) {
    if let Some(n) = f.slime_samples {
        cfg.slime.samples = n;
    }
    if let Some(r) = f.slime_ridge {
        cfg.slime.ridge = r;
    }
    if let Some(m) = f.slime_mode {
        cfg.slime.mode = m;
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let mut cfg = run_config(&cli.common)?;
    match cli.command {
        Command::Extract => cmd_extract(&cfg),
        Command::Train {
            variant,
            readout,
            max_epochs,
            batch_size,
            learning_rate,
            patience,
        } => {
            let h = &mut cfg.hyperparams;
            if let Some(v) = max_epochs {
                h.max_epochs = v;
            }
            if let Some(v) = batch_size {
                h.batch_size = v;
            }
            if let Some(v) = learning_rate {
                h.learning_rate = v;
            }
            if let Some(v) = patience {
                h.patience = v;
            }
            if let Some(v) = variant {
                cfg.variant = v;
            }
            if let Some(v) = readout {
                cfg.readout = v;
            }
            let s = cmd_train(&cfg)?;
            eprintln!(
                "chunk weighted F1 {:.4}, song weighted F1 {:.4}",
                s.chunk_weighted_f1, s.song_weighted_f1
            );
            Ok(Outcome::default())
        }
        Command::Predict { features, tonic } => cmd_predict(&cfg, &PredictOptions { features, tonic }),
        Command::Explain {
            features,
            method,
            tonic,
            target,
            overlay,
            slime,
        } => {
            apply_slime(&mut cfg, &slime);
            cmd_explain(
                &cfg,
                &ExplainOptions {
                    features,
                    method,
                    tonic,
                    target,
                    overlay,
                },
            )
        }
        Command::EvalSaliency {
            method,
            bin_width,
            slime,
        } => {
            apply_slime(&mut cfg, &slime);
            cmd_eval_saliency(&cfg, &EvalOptions { method, bin_width })
        }
        Command::Synth {
            songs_per_class,
            min_duration,
            max_duration,
            no_audio,
        } => {
            let cache_dir = cfg.cache_dir.clone();
            cmd_synth(
                &cfg,
                &SynthOptions {
                    songs_per_class,
                    min_duration,
                    max_duration,
                    audio: !no_audio,
                    cache_dir,
                },
            )
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            for f in &outcome.failures {
                eprintln!("failed: {f}");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
