//! Training and evaluation: a fresh synthetic batch before every iteration,
//! Adam updates, periodic test-set evaluation with a decode listing, JSONL
//! metrics and binary checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod metrics;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use metrics::{edit_distance, mean_normalized_edit_distance, Metrics};

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctc::{Alphabet, LabelSequence};
use crate::error::{Error, Result};
use crate::model::{batch_loss, decode_signal, train_batch, ModelParams, Sample, StepOutcome};
use crate::synth::{self, SegmentBank, SynthConfig, SyntheticSample};
use crate::tensor::{derive_seed, stream, Prng};

/// Full run configuration; JSON-serializable, every field optional in the
/// file (defaults below).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub eval_interval: usize,
    pub test_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub hidden_size: usize,
    pub dropout: f64,
    /// Segment bank file; when absent the surrogate generator is used.
    pub bank_path: Option<String>,
    pub synth: SynthConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 200,
            batch_size: 128,
            eval_interval: 100,
            test_size: 64,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
            hidden_size: 64,
            dropout: 0.5,
            bank_path: None,
            synth: SynthConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::config("TrainConfig", msg));
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if self.eval_interval == 0 {
            return fail("evaluation interval must be at least 1".into());
        }
        if self.test_size == 0 {
            return fail("test-set size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail(format!("learning rate {} invalid", self.learning_rate));
        }
        if self.hidden_size == 0 {
            return fail("hidden size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} must be in [0,1)", self.dropout));
        }
        self.synth.validate()
    }

    pub fn alphabet(&self) -> Result<Alphabet> {
        self.synth.alphabet()
    }
}

/// Test-set evaluation: the mean normalized edit distance and the first 20
/// decoded-vs-true pairs for inspection.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub cled: f64,
    /// (decoded, truth), at most the first 20 samples.
    pub pairs: Vec<(LabelSequence, LabelSequence)>,
}

impl EvalReport {
    /// Human-readable decode listing.
    pub fn render_pairs(&self, alphabet: &Alphabet) -> String {
        let mut out = String::new();
        for (i, (dec, truth)) in self.pairs.iter().enumerate() {
            let mark = if dec == truth { "=" } else { "!" };
            out.push_str(&format!(
                "{:>3} {} decoded [{}] truth [{}]\n",
                i + 1,
                mark,
                dec.to_names(alphabet),
                truth.to_names(alphabet)
            ));
        }
        out
    }

    pub fn exact_matches(&self) -> usize {
        self.pairs.iter().filter(|(d, t)| d == t).count()
    }
}

/// Decode every test sample in inference mode and average the normalized
/// edit distance. The result does not depend on test-set ordering.
pub fn evaluate(params: &ModelParams, testset: &[Sample]) -> Result<EvalReport> {
    if testset.is_empty() {
        return Err(Error::Arg("evaluate: empty test set".into()));
    }
    if testset.iter().any(|s| s.label.is_empty()) {
        return Err(Error::Arg(
            "evaluate: test labels must be non-empty (edit distance is length-normalized)".into(),
        ));
    }
    let decoded: Vec<LabelSequence> = testset
        .par_iter()
        .map(|s| decode_signal(params, &s.signal))
        .collect::<Result<_>>()?;
    let pairs: Vec<(LabelSequence, LabelSequence)> = decoded
        .into_iter()
        .zip(testset.iter().map(|s| s.label.clone()))
        .collect();
    let cled = mean_normalized_edit_distance(&pairs);
    Ok(EvalReport {
        cled,
        pairs: pairs.into_iter().take(20).collect(),
    })
}

/// One optimization step over a fresh batch: zero gradients, accumulate the
/// mean batch gradient, apply Adam. Infeasible samples are skipped and
/// counted in the outcome.
pub fn train_step(
    params: &mut ModelParams,
    opt: &mut Adam,
    batch: &[Sample],
    rng: &mut Prng,
) -> Result<StepOutcome> {
    params.zero_grads();
    let out = train_batch(params, batch, rng)?;
    opt.step(params)?;
    Ok(out)
}

/// Build the segment bank: load from file when configured, otherwise
/// synthesize the surrogate bank from the master seed.
pub fn make_bank(cfg: &TrainConfig) -> Result<SegmentBank> {
    match &cfg.bank_path {
        None => {
            let mut rng = Prng::new(derive_seed(cfg.seed, stream::BANK, 0));
            synth::make_surrogate_bank(&cfg.synth, &mut rng)
        }
        Some(path) => {
            let bank = synth::io::load_bank(path)?;
            if bank.channels() != cfg.synth.channels || bank.segment_len() != cfg.synth.segment_len
            {
                return Err(Error::config(
                    "make_bank",
                    format!(
                        "bank geometry {}x{} does not match configured {}x{}",
                        bank.channels(),
                        bank.segment_len(),
                        cfg.synth.channels,
                        cfg.synth.segment_len
                    ),
                ));
            }
            if bank.labels() != cfg.synth.labels.as_slice() {
                return Err(Error::config(
                    "make_bank",
                    format!(
                        "bank classes {:?} do not match configured {:?}",
                        bank.labels(),
                        cfg.synth.labels
                    ),
                ));
            }
            Ok(bank)
        }
    }
}

fn to_sample(s: SyntheticSample) -> Sample {
    Sample {
        signal: s.signal,
        label: s.label,
    }
}

/// The fixed test set, derived from the master seed before training.
pub fn test_samples(cfg: &TrainConfig, bank: &SegmentBank) -> Result<Vec<Sample>> {
    Ok(
        synth::gen_dataset(&cfg.synth, bank, cfg.seed, stream::TEST, cfg.test_size)?
            .into_iter()
            .map(to_sample)
            .collect(),
    )
}

/// Training batch for one iteration; per-sample seeds come from a global
/// sample index so generation order never matters.
fn train_batch_samples(cfg: &TrainConfig, bank: &SegmentBank, start: u64) -> Result<Vec<Sample>> {
    (0..cfg.batch_size)
        .into_par_iter()
        .map(|j| {
            synth::synth_sample(
                &cfg.synth,
                bank,
                derive_seed(cfg.seed, stream::TRAIN, start + j as u64),
            )
            .map(to_sample)
        })
        .collect()
}

/// Everything a finished run leaves behind.
#[derive(Debug)]
pub struct RunOutcome {
    pub metrics: Vec<Metrics>,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub final_report: EvalReport,
    pub params: ModelParams,
}

/// Full training run: fixed test set up front, evaluation at iteration 0
/// and every `eval_interval` iterations (and at the end), one JSONL metrics
/// line and a checkpoint per evaluation. Deterministic function of the
/// configuration.
pub fn run_training(cfg: &TrainConfig, out_dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let metrics_path = out_dir.join("metrics.jsonl");
    let checkpoint_path = out_dir.join("checkpoint.ckpt");
    let mut metrics_file = fs::File::create(&metrics_path)
        .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;

    let alphabet = cfg.alphabet()?;
    let bank = make_bank(cfg)?;
    let testset = test_samples(cfg, &bank)?;
    let mut params = ModelParams::init(
        cfg.synth.channels,
        cfg.synth.segment_len,
        cfg.hidden_size,
        alphabet.n_total(),
        cfg.dropout,
        &mut Prng::new(derive_seed(cfg.seed, stream::INIT, 0)),
    )?;
    let mut opt = Adam::new(
        &params,
        cfg.learning_rate,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
    );
    let mut dropout_rng = Prng::new(derive_seed(cfg.seed, stream::DROPOUT, 0));
    let started = Instant::now();
    let mut all_metrics = Vec::new();

    let emit = |m: &Metrics, file: &mut fs::File| -> Result<()> {
        let line = serde_json::to_string(m)
            .map_err(|e| Error::Diagnostic(format!("metrics serialization failed: {e}")))?;
        writeln!(file, "{line}").map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
        println!(
            "iteration {:>6}  loss {:>10.4}  cled {:>7.4}  elapsed {:.1}s",
            m.iteration, m.loss, m.cled, m.seconds
        );
        Ok(())
    };

    // Iteration 0: pre-training loss on the first batch (forward only) and
    // an evaluation with freshly initialized statistics.
    let first_batch = train_batch_samples(cfg, &bank, 0)?;
    let loss0 = batch_loss(&params, &first_batch)?.mean_loss;
    let mut final_report = evaluate(&params, &testset)?;
    let m0 = Metrics {
        iteration: 0,
        loss: loss0,
        cled: final_report.cled,
        seconds: started.elapsed().as_secs_f64(),
    };
    emit(&m0, &mut metrics_file)?;
    save_checkpoint(&checkpoint_path, cfg, 0, &params, &opt)?;
    all_metrics.push(m0);

    let mut pending = Some(first_batch);
    let mut interval_losses = Vec::new();
    for k in 1..=cfg.iterations {
        let batch = match pending.take() {
            Some(b) => b,
            None => train_batch_samples(cfg, &bank, ((k - 1) * cfg.batch_size) as u64)?,
        };
        let out = train_step(&mut params, &mut opt, &batch, &mut dropout_rng)?;
        if out.skipped > 0 {
            eprintln!("iteration {k}: skipped {} infeasible samples", out.skipped);
        }
        interval_losses.push(out.mean_loss);
        if k % cfg.eval_interval == 0 || k == cfg.iterations {
            let report = evaluate(&params, &testset)?;
            let mean_loss = interval_losses.iter().sum::<f64>() / interval_losses.len() as f64;
            interval_losses.clear();
            let m = Metrics {
                iteration: k,
                loss: mean_loss,
                cled: report.cled,
                seconds: started.elapsed().as_secs_f64(),
            };
            emit(&m, &mut metrics_file)?;
            save_checkpoint(&checkpoint_path, cfg, k as u64, &params, &opt)?;
            all_metrics.push(m);
            final_report = report;
        }
    }
    metrics_file
        .flush()
        .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;

    Ok(RunOutcome {
        metrics: all_metrics,
        metrics_path,
        checkpoint_path,
        final_report,
        params,
    })
}
