use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eegctc::error::Error;
use eegctc::model::{decode_signal, Sample};
use eegctc::synth::{self, io::Dataset};
use eegctc::tensor::stream;
use eegctc::train::{self, evaluate, load_checkpoint, make_bank, TrainConfig};

#[derive(Parser)]
#[command(
    name = "eegctc",
    version,
    about = "Train and evaluate a CNN-LSTM-CTC decoder on synthetic imagined-speech EEG"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a segment bank and/or a sample dataset file
    Generate(GenerateCmd),
    /// Train a decoder; writes metrics.jsonl and checkpoint.ckpt
    Train(TrainCmd),
    /// Evaluate a checkpoint on a dataset file
    Eval(EvalCmd),
    /// Decode the samples of a signal file with a trained checkpoint
    Decode(DecodeCmd),
}

/// Configuration source plus per-key overrides. Every key of the JSON
/// config file has a matching flag.
#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    adam_beta1: Option<f64>,
    #[arg(long)]
    adam_beta2: Option<f64>,
    #[arg(long)]
    adam_eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hidden_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Segment bank file replacing the surrogate generator
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long)]
    len_min: Option<usize>,
    #[arg(long)]
    len_max: Option<usize>,
    #[arg(long)]
    ext_min: Option<usize>,
    #[arg(long)]
    ext_max: Option<usize>,
    #[arg(long)]
    smooth_window: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    segment_len: Option<usize>,
    /// Comma-separated class labels
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    /// Comma-separated per-class frequencies in cycles per segment
    #[arg(long, value_delimiter = ',')]
    class_freqs: Option<Vec<f64>>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    amp_jitter: Option<f64>,
    #[arg(long)]
    random_phase: Option<bool>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig, Error> {
        let mut cfg = match &self.config {
            None => TrainConfig::default(),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Arg(format!("malformed config {}: {e}", path.display())))?
            }
        };
        macro_rules! apply {
            ($($field:ident -> $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        apply!(
            iterations -> cfg.iterations,
            batch_size -> cfg.batch_size,
            eval_interval -> cfg.eval_interval,
            test_size -> cfg.test_size,
            learning_rate -> cfg.learning_rate,
            adam_beta1 -> cfg.adam_beta1,
            adam_beta2 -> cfg.adam_beta2,
            adam_eps -> cfg.adam_eps,
            seed -> cfg.seed,
            hidden_size -> cfg.hidden_size,
            dropout -> cfg.dropout,
            len_min -> cfg.synth.len_min,
            len_max -> cfg.synth.len_max,
            ext_min -> cfg.synth.ext_min,
            ext_max -> cfg.synth.ext_max,
            smooth_window -> cfg.synth.smooth_window,
            channels -> cfg.synth.channels,
            segment_len -> cfg.synth.segment_len,
            labels -> cfg.synth.labels,
            class_freqs -> cfg.synth.class_freqs,
            amplitude -> cfg.synth.amplitude,
            noise_sigma -> cfg.synth.noise_sigma,
            amp_jitter -> cfg.synth.amp_jitter,
            random_phase -> cfg.synth.random_phase,
        );
        if let Some(bank) = &self.bank {
            cfg.bank_path = Some(bank.display().to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenerateCmd {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output path for the segment bank
    #[arg(long)]
    bank_out: Option<PathBuf>,
    /// Output path for a sample dataset
    #[arg(long)]
    dataset_out: Option<PathBuf>,
    /// Number of samples for --dataset-out
    #[arg(long, default_value_t = 64)]
    count: usize,
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for metrics and checkpoints
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args)]
struct DecodeCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Signal file in the dataset container format
    #[arg(long)]
    signal: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let informational = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if informational {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = exit_code(&e);
            if code == 1 {
                eprintln!("run with --help for usage");
            }
            ExitCode::from(code)
        }
    }
}

/// Usage-class failures (bad flags, missing input files, malformed
/// configuration) exit 1; runtime failures exit 2.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Arg(_) | Error::Config { .. } | Error::Parse { .. } => 1,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Generate(cmd) => generate(cmd),
        Cmd::Train(cmd) => train(cmd),
        Cmd::Eval(cmd) => eval(cmd),
        Cmd::Decode(cmd) => decode(cmd),
    }
}

fn generate(cmd: GenerateCmd) -> Result<(), Error> {
    if cmd.bank_out.is_none() && cmd.dataset_out.is_none() {
        return Err(Error::Arg(
            "generate: nothing to do; pass --bank-out and/or --dataset-out".into(),
        ));
    }
    let cfg = cmd.config.resolve()?;
    let bank = make_bank(&cfg)?;
    if let Some(path) = &cmd.bank_out {
        synth::io::save_bank(path, &bank)?;
        println!(
            "wrote bank {}: {} classes x {} segments of {}x{}",
            path.display(),
            bank.n_classes(),
            bank.class(0).len(),
            bank.channels(),
            bank.segment_len()
        );
    }
    if let Some(path) = &cmd.dataset_out {
        if cmd.count == 0 {
            return Err(Error::Arg("generate: --count must be at least 1".into()));
        }
        let samples = synth::gen_dataset(&cfg.synth, &bank, cfg.seed, stream::DATASET, cmd.count)?;
        let ds = Dataset {
            channels: cfg.synth.channels,
            segment_len: cfg.synth.segment_len,
            labels: cfg.synth.labels.clone(),
            samples,
        };
        synth::io::save_dataset(path, &ds)?;
        println!("wrote dataset {}: {} samples", path.display(), cmd.count);
    }
    Ok(())
}

fn train(cmd: TrainCmd) -> Result<(), Error> {
    let cfg = cmd.config.resolve()?;
    let alphabet = cfg.alphabet()?;
    let outcome = train::run_training(&cfg, &cmd.out)?;
    println!("\nfirst decoded test samples:");
    print!("{}", outcome.final_report.render_pairs(&alphabet));
    println!(
        "\nfinal cled {:.4} after {} iterations",
        outcome.final_report.cled,
        outcome.metrics.last().map_or(0, |m| m.iteration)
    );
    println!("metrics: {}", outcome.metrics_path.display());
    println!("checkpoint: {}", outcome.checkpoint_path.display());
    Ok(())
}

fn load_dataset_for(params_cfg: &TrainConfig, path: &PathBuf) -> Result<Vec<Sample>, Error> {
    let ds = synth::io::load_dataset(path)?;
    if ds.channels != params_cfg.synth.channels || ds.segment_len != params_cfg.synth.segment_len {
        return Err(Error::Config {
            op: "eval",
            msg: format!(
                "dataset geometry {}x{} does not match checkpoint {}x{}",
                ds.channels,
                ds.segment_len,
                params_cfg.synth.channels,
                params_cfg.synth.segment_len
            ),
        });
    }
    if ds.labels != params_cfg.synth.labels {
        return Err(Error::Config {
            op: "eval",
            msg: format!(
                "dataset classes {:?} do not match checkpoint {:?}",
                ds.labels, params_cfg.synth.labels
            ),
        });
    }
    Ok(ds
        .samples
        .into_iter()
        .map(|s| Sample {
            signal: s.signal,
            label: s.label,
        })
        .collect())
}

fn eval(cmd: EvalCmd) -> Result<(), Error> {
    let ck = load_checkpoint(&cmd.checkpoint)?;
    let alphabet = ck.config.alphabet()?;
    let testset = load_dataset_for(&ck.config, &cmd.dataset)?;
    let report = evaluate(&ck.params, &testset)?;
    println!(
        "cled {:.4} over {} samples (checkpoint at iteration {})",
        report.cled,
        testset.len(),
        ck.iteration
    );
    println!("first decoded samples:");
    print!("{}", report.render_pairs(&alphabet));
    Ok(())
}

fn decode(cmd: DecodeCmd) -> Result<(), Error> {
    let ck = load_checkpoint(&cmd.checkpoint)?;
    let alphabet = ck.config.alphabet()?;
    let testset = load_dataset_for(&ck.config, &cmd.signal)?;
    for sample in &testset {
        let decoded = decode_signal(&ck.params, &sample.signal)?;
        println!("{}", decoded.to_names(&alphabet));
    }
    Ok(())
}
