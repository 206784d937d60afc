//! Synthetic sentence-level imagined-speech EEG: class-conditioned segment
//! banks, random label sequences, random per-element extension, segment
//! sampling, temporal concatenation and moving-average smoothing. A
//! surrogate oscillator bank stands in for real recordings; real banks load
//! from the container format in [`io`].

pub mod io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctc::{Alphabet, LabelSequence};
use crate::error::{Error, Result};
use crate::tensor::{derive_seed, Prng, Tensor};

/// Segments recorded per class, mirroring the per-class training-set size of
/// the source recordings.
pub const SEGMENTS_PER_CLASS: usize = 30;

/// Everything the generator needs: sequence-length and extension ranges,
/// smoothing window, signal geometry and the surrogate oscillator
/// parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Unextended label-sequence length range, inclusive.
    pub len_min: usize,
    pub len_max: usize,
    /// Per-element extension (repeat count) range, inclusive.
    pub ext_min: usize,
    pub ext_max: usize,
    /// Centered moving-average window in samples; odd. 1 disables smoothing.
    pub smooth_window: usize,
    pub channels: usize,
    pub segment_len: usize,
    /// Class names; these become the decoder alphabet.
    pub labels: Vec<String>,
    /// Per-class oscillation frequency in cycles per segment; distinct.
    pub class_freqs: Vec<f64>,
    pub amplitude: f64,
    pub noise_sigma: f64,
    /// Relative per-channel amplitude jitter in [0,1).
    pub amp_jitter: f64,
    /// Random per-segment phase; disable for noise-free regression tests.
    pub random_phase: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            len_min: 2,
            len_max: 8,
            ext_min: 1,
            ext_max: 4,
            smooth_window: 5,
            channels: 8,
            segment_len: 50,
            labels: vec!["a".into(), "u".into(), "rest".into()],
            class_freqs: vec![3.0, 7.0, 11.0],
            amplitude: 1.0,
            noise_sigma: 0.3,
            amp_jitter: 0.2,
            random_phase: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::config("SynthConfig", msg));
        if self.len_min < 1 || self.len_min > self.len_max {
            return fail(format!(
                "label length range [{}, {}] invalid",
                self.len_min, self.len_max
            ));
        }
        if self.ext_min < 1 || self.ext_min > self.ext_max {
            return fail(format!(
                "extension range [{}, {}] invalid",
                self.ext_min, self.ext_max
            ));
        }
        if self.smooth_window == 0 || self.smooth_window.is_multiple_of(2) {
            return fail(format!(
                "smoothing window {} must be odd and >= 1",
                self.smooth_window
            ));
        }
        if self.channels == 0 || self.segment_len == 0 {
            return fail("channels and segment length must be positive".into());
        }
        if self.labels.is_empty() {
            return fail("at least one class label required".into());
        }
        if self.labels.len() != self.class_freqs.len() {
            return fail(format!(
                "{} labels but {} class frequencies",
                self.labels.len(),
                self.class_freqs.len()
            ));
        }
        if self.labels.len() < 2 && self.len_max > 1 {
            return fail("multi-label sequences need at least two classes".into());
        }
        for (i, a) in self.class_freqs.iter().enumerate() {
            if self.class_freqs[..i].iter().any(|b| b == a) {
                return fail(format!("class frequencies must be distinct, {a} repeats"));
            }
        }
        if !(0.0..1.0).contains(&self.amp_jitter) {
            return fail(format!(
                "amplitude jitter {} must be in [0,1)",
                self.amp_jitter
            ));
        }
        if self.noise_sigma < 0.0 || self.amplitude <= 0.0 {
            return fail("amplitude must be positive and noise sigma non-negative".into());
        }
        Alphabet::new(self.labels.clone()).map(|_| ())
    }

    pub fn alphabet(&self) -> Result<Alphabet> {
        Alphabet::new(self.labels.clone())
    }
}

/// Per-class collections of EEG segments sharing one geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentBank {
    channels: usize,
    segment_len: usize,
    labels: Vec<String>,
    classes: Vec<Vec<Tensor>>,
}

impl SegmentBank {
    pub fn new(
        channels: usize,
        segment_len: usize,
        labels: Vec<String>,
        classes: Vec<Vec<Tensor>>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::config("SegmentBank", "empty class list"));
        }
        if labels.len() != classes.len() {
            return Err(Error::dim(
                "SegmentBank",
                "class axis",
                labels.len(),
                classes.len(),
            ));
        }
        for (label, segs) in labels.iter().zip(&classes) {
            if segs.is_empty() {
                return Err(Error::config(
                    "SegmentBank",
                    format!("class {label:?} has no segments"),
                ));
            }
            for seg in segs {
                if seg.shape() != [channels, segment_len] {
                    return Err(Error::config(
                        "SegmentBank",
                        format!(
                            "class {label:?} segment of shape {:?}, expected [{channels}, {segment_len}]",
                            seg.shape()
                        ),
                    ));
                }
            }
        }
        Ok(SegmentBank {
            channels,
            segment_len,
            labels,
            classes,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn segment_len(&self) -> usize {
        self.segment_len
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn class(&self, index: usize) -> &[Tensor] {
        &self.classes[index]
    }

    pub fn max_abs(&self) -> f64 {
        self.classes
            .iter()
            .flatten()
            .flat_map(|s| s.data())
            .fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

/// One generated sample: the concatenated smoothed signal and the
/// *unextended* label sequence it encodes, plus the seed it was derived
/// from.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub signal: Tensor, // [C, S*M]
    pub label: LabelSequence,
    pub seed: u64,
}

/// Class-conditioned oscillator bank standing in for real recordings: each
/// segment is a sinusoid at its class frequency with per-segment phase,
/// per-channel amplitude jitter and additive Gaussian noise. Values are
/// quantized to f32 so a bank round-trips bit-identically through the
/// container format.
pub fn make_surrogate_bank(cfg: &SynthConfig, rng: &mut Prng) -> Result<SegmentBank> {
    cfg.validate()?;
    let (c, s) = (cfg.channels, cfg.segment_len);
    let mut classes = Vec::with_capacity(cfg.labels.len());
    for &freq in &cfg.class_freqs {
        let mut segs = Vec::with_capacity(SEGMENTS_PER_CLASS);
        for _ in 0..SEGMENTS_PER_CLASS {
            let phase = if cfg.random_phase {
                rng.uniform_in(0.0, std::f64::consts::TAU)
            } else {
                0.0
            };
            let mut data = vec![0.0; c * s];
            for ci in 0..c {
                let amp = cfg.amplitude * (1.0 + cfg.amp_jitter * rng.uniform_in(-1.0, 1.0));
                for t in 0..s {
                    let clean =
                        amp * (std::f64::consts::TAU * freq * t as f64 / s as f64 + phase).sin();
                    let v = clean + cfg.noise_sigma * rng.normal();
                    data[ci * s + t] = v as f32 as f64;
                }
            }
            segs.push(Tensor::new(vec![c, s], data)?);
        }
        classes.push(segs);
    }
    SegmentBank::new(c, s, cfg.labels.clone(), classes)
}

/// Random label sequence: length uniform in the configured range, each
/// element uniform over the classes with consecutive elements forced
/// distinct (otherwise extension would fuse them into one indistinguishable
/// run).
pub fn gen_label_sequence(cfg: &SynthConfig, rng: &mut Prng) -> LabelSequence {
    let n = cfg.labels.len();
    let len = rng.range_inclusive(cfg.len_min, cfg.len_max);
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let next = if i == 0 || n == 1 {
            rng.index(n)
        } else {
            let prev = out[i - 1];
            let r = rng.index(n - 1);
            if r < prev {
                r
            } else {
                r + 1
            }
        };
        out.push(next);
    }
    LabelSequence::new(out, n).expect("indices drawn in range")
}

/// Replicate each element k times, k drawn uniformly per element from the
/// extension range; order preserved.
pub fn extend_labels(l: &LabelSequence, cfg: &SynthConfig, rng: &mut Prng) -> Vec<usize> {
    let mut out = Vec::new();
    for &s in l.as_slice() {
        let k = rng.range_inclusive(cfg.ext_min, cfg.ext_max);
        out.extend(std::iter::repeat_n(s, k));
    }
    out
}

/// For each element of the extended sequence choose one segment of that
/// class uniformly, concatenate along time, and smooth each channel with a
/// centered moving average (shrunken windows at the edges).
pub fn assemble_signal(
    extended: &[usize],
    bank: &SegmentBank,
    cfg: &SynthConfig,
    rng: &mut Prng,
) -> Result<Tensor> {
    if extended.is_empty() {
        return Err(Error::Arg(
            "assemble_signal: empty extended sequence".into(),
        ));
    }
    if let Some(&bad) = extended.iter().find(|&&s| s >= bank.n_classes()) {
        return Err(Error::config(
            "assemble_signal",
            format!(
                "class {bad} missing from a bank of {} classes",
                bank.n_classes()
            ),
        ));
    }
    let (c, s) = (bank.channels(), bank.segment_len());
    let m = extended.len();
    let total = s * m;
    let mut out = Tensor::zeros(vec![c, total]);
    for (i, &class) in extended.iter().enumerate() {
        let segs = bank.class(class);
        let seg = &segs[rng.index(segs.len())];
        let dst = out.data_mut();
        for ci in 0..c {
            dst[ci * total + i * s..ci * total + (i + 1) * s]
                .copy_from_slice(&seg.data()[ci * s..(ci + 1) * s]);
        }
    }
    if cfg.smooth_window > 1 {
        let dst = out.data_mut();
        for ci in 0..c {
            let row = smooth(&dst[ci * total..(ci + 1) * total], cfg.smooth_window);
            dst[ci * total..(ci + 1) * total].copy_from_slice(&row);
        }
    }
    Ok(out)
}

/// Centered moving average with shrunken windows at the edges.
fn smooth(row: &[f64], w: usize) -> Vec<f64> {
    let n = row.len();
    let r = w / 2;
    let mut prefix = vec![0.0; n + 1];
    for (i, &v) in row.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(r);
            let hi = (i + r + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// One sample as a pure function of (config, bank, seed): random label
/// sequence, random extension, segment assembly. The stored label is the
/// unextended sequence.
pub fn synth_sample(cfg: &SynthConfig, bank: &SegmentBank, seed: u64) -> Result<SyntheticSample> {
    let mut rng = Prng::new(seed);
    let label = gen_label_sequence(cfg, &mut rng);
    let extended = extend_labels(&label, cfg, &mut rng);
    let signal = assemble_signal(&extended, bank, cfg, &mut rng)?;
    Ok(SyntheticSample {
        signal,
        label,
        seed,
    })
}

/// Generate `count` samples with per-sample seeds derived from
/// (master, tag, index). Order- and scheduling-independent: parallel and
/// serial generation produce identical datasets.
pub fn gen_dataset(
    cfg: &SynthConfig,
    bank: &SegmentBank,
    master_seed: u64,
    tag: u64,
    count: usize,
) -> Result<Vec<SyntheticSample>> {
    (0..count)
        .into_par_iter()
        .map(|i| synth_sample(cfg, bank, derive_seed(master_seed, tag, i as u64)))
        .collect()
}
