//! Acceptance suite: one test per exit criterion, each printing a PASS or
//! FAIL line. Run with:
//!
//! ```text
//! cargo test -p eegctc --test acceptance -- --nocapture
//! ```
//!
//! The two long criteria (end-to-end convergence and the decode listing)
//! share a single default-configuration training run.

use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use eegctc::ctc::{collapse, ctc_loss, label_prob_bruteforce, CtcOutcome, LabelSequence};
use eegctc::eegnet;
use eegctc::model::{batch_loss, train_batch, ModelParams, Sample};
use eegctc::tensor::{grad_check, softmax_rows, Prng, Tensor};
use eegctc::train::{
    edit_distance, evaluate, load_checkpoint, make_bank, run_training, save_checkpoint,
    test_samples, RunOutcome, TrainConfig,
};

fn verdict(id: u32, desc: &str, pass: bool, detail: &str) {
    println!(
        "criterion {id}: {} — {desc} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {id} FAIL: {detail}");
}

fn random_posteriors(t: usize, n: usize, rng: &mut Prng) -> Tensor {
    let logits = Tensor::from_fn(vec![t, n], |_| 2.0 * rng.normal());
    softmax_rows(&logits).unwrap()
}

#[test]
fn criterion_1_forward_backward_agrees_with_bruteforce() {
    let started = Instant::now();
    let mut rng = Prng::new(101);
    let mut worst: f64 = 0.0;
    for case in 0..200u64 {
        let t = 1 + (case % 6) as usize;
        let n = 2 + (case % 3) as usize; // up to 4 including blank
        let y = random_posteriors(t, n, &mut rng);
        let l_len = (case % 4) as usize; // up to 3
        let l = LabelSequence::new((0..l_len).map(|_| rng.index(n - 1)).collect(), n - 1).unwrap();
        let brute = label_prob_bruteforce(&y, &l).unwrap();
        match ctc_loss(&y, &l).unwrap() {
            CtcOutcome::Finite { nll, .. } => {
                worst = worst.max(((-nll).exp() - brute).abs());
            }
            CtcOutcome::Infeasible => {
                worst = worst.max(brute);
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        1,
        "forward-backward matches exhaustive enumeration over 200 instances",
        worst < 1e-9 && elapsed < 10.0,
        &format!("max abs diff {worst:.3e}, {elapsed:.2}s"),
    );
}

#[test]
fn criterion_2_label_probabilities_partition_unity() {
    let started = Instant::now();
    let mut rng = Prng::new(202);
    let mut worst: f64 = 0.0;
    for t in 1..=4usize {
        for n in 2..=4usize {
            let y = random_posteriors(t, n, &mut rng);
            let n_real = n - 1;
            let mut total = 0.0;
            for len in 0..=t {
                let mut digits = vec![0usize; len];
                'seqs: loop {
                    let l = LabelSequence::new(digits.clone(), n_real).unwrap();
                    total += label_prob_bruteforce(&y, &l).unwrap();
                    let mut i = 0;
                    loop {
                        if i == len {
                            break 'seqs;
                        }
                        digits[i] += 1;
                        if digits[i] < n_real {
                            break;
                        }
                        digits[i] = 0;
                        i += 1;
                    }
                }
            }
            worst = worst.max((total - 1.0).abs());
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        2,
        "collapse partitions path space: label probabilities sum to 1",
        worst < 1e-9 && elapsed < 5.0,
        &format!("max |sum-1| {worst:.3e}, {elapsed:.2}s"),
    );
}

#[test]
fn criterion_3_end_to_end_gradient_fidelity() {
    let started = Instant::now();
    let mut rng = Prng::new(303);
    let params = ModelParams::init(4, 50, 8, 4, 0.0, &mut rng).unwrap();
    let mut sig_rng = Prng::new(307);
    let batch = vec![Sample {
        signal: Tensor::from_fn(vec![4, 150], |_| sig_rng.normal()),
        label: LabelSequence::new(vec![0], 3).unwrap(),
    }];

    let mut work = params.clone();
    work.zero_grads();
    train_batch(&mut work, &batch, &mut Prng::new(305)).unwrap();
    let analytic = work.flat_trainable_grads();
    let theta = params.flat_trainable();
    let f = |t: &[f64]| {
        let mut p = params.clone();
        p.set_flat_trainable(t)?;
        Ok(batch_loss(&p, &batch)?.mean_loss)
    };
    // Steps small enough that no pooling argmax flips inside the central-
    // difference window at this probe point, yet large enough that the
    // loss-rounding noise on the exactly-zero conv-bias gradients stays
    // under the tolerance; two steps for a step-robust verdict.
    let rel_a = grad_check(&f, &theta, &analytic, 5e-5).unwrap();
    let rel_b = grad_check(&f, &theta, &analytic, 3e-5).unwrap();
    let rel = rel_a.max(rel_b);
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        3,
        "full-pipeline analytic gradients match finite differences",
        rel < 1e-3 && elapsed < 120.0,
        &format!(
            "{} parameters, max rel err {rel_a:.3e} (h=5e-5) / {rel_b:.3e} (h=3e-5), {elapsed:.1}s",
            theta.len()
        ),
    );
}

#[test]
fn criterion_4_feature_extractor_shape_trace() {
    let mut rng = Prng::new(404);
    let params = eegnet::EegnetParams::init(118, 50, 0.5, &mut rng).unwrap();
    let x = Tensor::from_fn(vec![1, 118, 50], |_| rng.normal());
    let (feats, cache) = eegnet::forward_batch_train(&params, &x, &mut rng).unwrap();
    let expected: Vec<Vec<usize>> = vec![
        vec![20, 50],
        vec![20, 50, 5],
        vec![10, 10, 5],
        vec![10, 10, 5],
        vec![5, 2, 5],
    ];
    let pass = cache.trace == expected && feats.shape() == [1, 50];
    verdict(
        4,
        "118-channel forward trace reproduces the reference shapes",
        pass,
        &format!("trace {:?}", cache.trace),
    );
}

#[test]
fn criterion_5_collapse_reference_examples() {
    // Labels a=0, b=1, blank=2.
    let aab = LabelSequence::new(vec![0, 0, 1], 2).unwrap();
    let first = collapse(&[0, 2, 0, 1, 2], 2);
    let second = collapse(&[2, 0, 0, 2, 2, 0, 1, 1], 2);
    let pass = first == aab && second == aab;
    verdict(
        5,
        "collapse maps both reference paths to the same sequence",
        pass,
        &format!("got {:?} and {:?}", first.as_slice(), second.as_slice()),
    );
}

struct ConvergentRun {
    cfg: TrainConfig,
    outcome: RunOutcome,
}

static RUN: OnceLock<ConvergentRun> = OnceLock::new();

/// Default configuration trained for up to 500 iterations, shared by the
/// convergence and decode-listing criteria.
fn convergent_run() -> &'static ConvergentRun {
    RUN.get_or_init(|| {
        let cfg = TrainConfig {
            iterations: 500,
            ..TrainConfig::default()
        };
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-run");
        let started = Instant::now();
        let outcome = run_training(&cfg, &dir).expect("training run failed");
        println!(
            "[acceptance] shared 500-iteration run finished in {:.0}s",
            started.elapsed().as_secs_f64()
        );
        ConvergentRun { cfg, outcome }
    })
}

#[test]
fn criterion_6_end_to_end_convergence() {
    let run = convergent_run();
    let m = &run.outcome.metrics;
    let initial = m.first().expect("iteration-0 record");
    let best = m.iter().map(|r| r.cled).fold(f64::INFINITY, f64::min);
    let pass = initial.iteration == 0 && initial.cled > 0.5 && best <= 0.05;
    verdict(
        6,
        "default config: untrained cled > 0.5 and cled <= 0.05 within 500 iterations",
        pass,
        &format!(
            "iteration-0 cled {:.3}, best cled {:.4} (trajectory: {})",
            initial.cled,
            best,
            m.iter()
                .map(|r| format!("{}:{:.3}", r.iteration, r.cled))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    );
}

#[test]
fn criterion_7_decode_listing_matches_truth() {
    let run = convergent_run();
    let report = &run.outcome.final_report;
    let matches = report.exact_matches();
    let total = report.pairs.len();
    verdict(
        7,
        "first-20 decode listing shows at least 19/20 exact matches",
        total == 20 && matches >= 19,
        &format!("{matches}/{total} exact"),
    );

    // Exercise the decode subcommand end to end with the trained
    // checkpoint: an exactly-decoded test sample must print its truth.
    let idx = report
        .pairs
        .iter()
        .position(|(d, t)| d == t)
        .expect("at least one exact decode");
    let bank = make_bank(&run.cfg).unwrap();
    let testset = test_samples(&run.cfg, &bank).unwrap();
    let alphabet = run.cfg.alphabet().unwrap();
    let sample = &testset[idx];
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-decode");
    std::fs::create_dir_all(&dir).unwrap();
    let signal_path = dir.join("one.eegs");
    eegctc::synth::io::save_dataset(
        &signal_path,
        &eegctc::synth::io::Dataset {
            channels: run.cfg.synth.channels,
            segment_len: run.cfg.synth.segment_len,
            labels: run.cfg.synth.labels.clone(),
            samples: vec![eegctc::synth::SyntheticSample {
                signal: sample.signal.clone(),
                label: sample.label.clone(),
                seed: 0,
            }],
        },
    )
    .unwrap();
    let output = std::process::Command::new(env!("CARGO_BIN_EXE_eegctc"))
        .args(["decode", "--checkpoint"])
        .arg(&run.outcome.checkpoint_path)
        .arg("--signal")
        .arg(&signal_path)
        .output()
        .expect("decode subcommand runs");
    let stdout = String::from_utf8_lossy(&output.stdout);
    let expected = sample.label.to_names(&alphabet);
    assert!(
        output.status.success() && stdout.trim() == expected,
        "decode printed {stdout:?}, expected {expected:?}"
    );
}

#[test]
fn criterion_8_determinism_and_checkpoint_round_trip() {
    // Two CLI train invocations with the same config file must produce
    // byte-identical metrics logs.
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-determinism");
    std::fs::create_dir_all(&dir).unwrap();
    let config_path = dir.join("config.json");
    std::fs::write(
        &config_path,
        r#"{
  "iterations": 4,
  "batch_size": 4,
  "eval_interval": 2,
  "test_size": 4,
  "hidden_size": 8,
  "seed": 7,
  "synth": {"channels": 4, "len_min": 1, "len_max": 3, "ext_max": 2}
}"#,
    )
    .unwrap();
    for out in ["a", "b"] {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_eegctc"))
            .args(["train", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(dir.join(out))
            .stdout(std::process::Stdio::null())
            .status()
            .expect("train subcommand runs");
        assert!(status.success());
    }
    let log_a = std::fs::read(dir.join("a/metrics.jsonl")).unwrap();
    let log_b = std::fs::read(dir.join("b/metrics.jsonl")).unwrap();

    // Checkpoint round trip: reloading must leave evaluation bit-identical.
    let cfg: TrainConfig =
        serde_json::from_str(&std::fs::read_to_string(&config_path).unwrap()).unwrap();
    let bank = make_bank(&cfg).unwrap();
    let testset = test_samples(&cfg, &bank).unwrap();
    let restored = load_checkpoint(dir.join("a/checkpoint.ckpt")).unwrap();
    let eval_1 = evaluate(&restored.params, &testset).unwrap();
    let resaved = dir.join("resaved.ckpt");
    save_checkpoint(
        &resaved,
        &restored.config,
        restored.iteration,
        &restored.params,
        &restored.adam,
    )
    .unwrap();
    let reloaded = load_checkpoint(&resaved).unwrap();
    let eval_2 = evaluate(&reloaded.params, &testset).unwrap();

    let pass = log_a == log_b
        && !log_a.is_empty()
        && eval_1.cled.to_bits() == eval_2.cled.to_bits()
        && eval_1.pairs == eval_2.pairs;
    verdict(
        8,
        "identical configs give byte-identical logs; checkpoints restore evaluation bit-exactly",
        pass,
        &format!(
            "log {} bytes, cled {:.4} == {:.4}",
            log_a.len(),
            eval_1.cled,
            eval_2.cled
        ),
    );
}

/// Supporting invariant for the shared run: the mean training loss over
/// the final evaluation interval is below the mean over the first.
#[test]
fn training_loss_decreases_in_the_large() {
    let run = convergent_run();
    let m = &run.outcome.metrics;
    // metrics[0] is the pre-training record; interval means start at [1].
    let first = m[1].loss;
    let last = m.last().unwrap().loss;
    assert!(
        last < first,
        "interval-mean loss did not decrease: {first} -> {last}"
    );
}

#[test]
fn criterion_9_edit_distance_metric_axioms() {
    let started = Instant::now();
    let mut rng = Prng::new(909);
    let random_seq = |rng: &mut Prng| {
        let len = rng.index(9);
        LabelSequence::new((0..len).map(|_| rng.index(3)).collect(), 3).unwrap()
    };
    let mut checked = 0usize;
    for _ in 0..10_000 {
        let a = random_seq(&mut rng);
        let b = random_seq(&mut rng);
        let c = random_seq(&mut rng);
        let ab = edit_distance(&a, &b);
        assert_eq!(ab, edit_distance(&b, &a), "symmetry violated");
        assert_eq!(edit_distance(&a, &a), 0, "identity violated");
        if ab == 0 {
            assert_eq!(a, b, "indiscernibles violated");
        }
        assert!(
            ab <= edit_distance(&a, &c) + edit_distance(&c, &b),
            "triangle inequality violated"
        );
        checked += 1;
    }
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        9,
        "edit distance satisfies the metric axioms on 10^4 random triples",
        checked == 10_000 && elapsed < 5.0,
        &format!("{checked} triples, {elapsed:.2}s"),
    );
}
