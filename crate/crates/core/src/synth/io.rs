//! Binary containers for segment banks and sample datasets (little-endian).
//!
//! Bank (`EEGB`): magic, version u32, channels u32, segment length u32,
//! class count u32; then per class: label (u32 length + UTF-8 bytes),
//! segment count u32, segments as raw f32 values, channel-major (C rows of
//! S values).
//!
//! Dataset (`EEGS`): magic, version u32, channels u32, segment length u32,
//! class count u32, class labels as above, sample count u32; then per
//! sample: label sequence (u32 count + u32 class indices), segment count M
//! u32, and the C x (S*M) signal as raw f32 values, channel-major.

use std::fs;
use std::path::Path;

use super::{SegmentBank, SyntheticSample};
use crate::binio::{put_f32s, put_str, put_u32, Reader};
use crate::ctc::LabelSequence;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BANK_MAGIC: [u8; 4] = *b"EEGB";
pub const DATASET_MAGIC: [u8; 4] = *b"EEGS";
pub const FORMAT_VERSION: u32 = 1;

/// A dataset as stored on disk: geometry, class names and samples. Samples
/// loaded from a file carry seed 0 (the container does not record
/// provenance).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub channels: usize,
    pub segment_len: usize,
    pub labels: Vec<String>,
    pub samples: Vec<SyntheticSample>,
}

pub fn save_bank(path: impl AsRef<Path>, bank: &SegmentBank) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&BANK_MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_u32(&mut buf, bank.channels() as u32);
    put_u32(&mut buf, bank.segment_len() as u32);
    put_u32(&mut buf, bank.n_classes() as u32);
    for (k, label) in bank.labels().iter().enumerate() {
        put_str(&mut buf, label);
        let segs = bank.class(k);
        put_u32(&mut buf, segs.len() as u32);
        for seg in segs {
            put_f32s(&mut buf, seg.data());
        }
    }
    write_file(path, &buf)
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<SegmentBank> {
    let path = path.as_ref();
    let buf = read_file(path)?;
    let mut r = Reader::new(path, &buf);
    r.expect_magic(BANK_MAGIC)?;
    r.expect_version(FORMAT_VERSION)?;
    let channels = r.u32()? as usize;
    let segment_len = r.u32()? as usize;
    let n_classes = r.u32()? as usize;
    if n_classes == 0 {
        return Err(r.invalid("empty class list"));
    }
    if channels == 0 || segment_len == 0 {
        return Err(r.invalid("zero channel count or segment length"));
    }
    let mut labels = Vec::with_capacity(n_classes);
    let mut classes = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        labels.push(r.string()?);
        let count = r.u32()? as usize;
        if count == 0 {
            return Err(r.invalid("class with zero segments"));
        }
        let mut segs = Vec::with_capacity(count);
        for _ in 0..count {
            let data = r.f32s(channels * segment_len)?;
            segs.push(Tensor::new(vec![channels, segment_len], data)?);
        }
        classes.push(segs);
    }
    r.finish()?;
    SegmentBank::new(channels, segment_len, labels, classes)
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&DATASET_MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_u32(&mut buf, ds.channels as u32);
    put_u32(&mut buf, ds.segment_len as u32);
    put_u32(&mut buf, ds.labels.len() as u32);
    for label in &ds.labels {
        put_str(&mut buf, label);
    }
    put_u32(&mut buf, ds.samples.len() as u32);
    for sample in &ds.samples {
        put_u32(&mut buf, sample.label.len() as u32);
        for &s in sample.label.as_slice() {
            put_u32(&mut buf, s as u32);
        }
        let m = sample.signal.shape()[1] / ds.segment_len;
        put_u32(&mut buf, m as u32);
        put_f32s(&mut buf, sample.signal.data());
    }
    write_file(path, &buf)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let buf = read_file(path)?;
    let mut r = Reader::new(path, &buf);
    r.expect_magic(DATASET_MAGIC)?;
    r.expect_version(FORMAT_VERSION)?;
    let channels = r.u32()? as usize;
    let segment_len = r.u32()? as usize;
    if channels == 0 || segment_len == 0 {
        return Err(r.invalid("zero channel count or segment length"));
    }
    let n_classes = r.u32()? as usize;
    if n_classes == 0 {
        return Err(r.invalid("empty class list"));
    }
    let mut labels = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        labels.push(r.string()?);
    }
    let n_samples = r.u32()? as usize;
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let l_len = r.u32()? as usize;
        let mut indices = Vec::with_capacity(l_len);
        for _ in 0..l_len {
            let idx = r.u32()? as usize;
            if idx >= n_classes {
                return Err(r.invalid(format!(
                    "label index {idx} out of range for {n_classes} classes"
                )));
            }
            indices.push(idx);
        }
        let label = LabelSequence::new(indices, n_classes)?;
        let m = r.u32()? as usize;
        if m == 0 {
            return Err(r.invalid("sample with zero segments"));
        }
        let data = r.f32s(channels * segment_len * m)?;
        samples.push(SyntheticSample {
            signal: Tensor::new(vec![channels, segment_len * m], data)?,
            label,
            seed: 0,
        });
    }
    r.finish()?;
    Ok(Dataset {
        channels,
        segment_len,
        labels,
        samples,
    })
}

fn write_file(path: impl AsRef<Path>, buf: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ParseError;
    use crate::synth::{gen_dataset, make_surrogate_bank, SynthConfig};
    use crate::tensor::Prng;

    #[test]
    fn bank_round_trip_is_bit_identical() {
        let cfg = SynthConfig::default();
        let mut rng = Prng::new(1);
        let bank = make_surrogate_bank(&cfg, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.eegb");
        save_bank(&path, &bank).unwrap();
        let loaded = load_bank(&path).unwrap();
        assert_eq!(bank, loaded);
    }

    #[test]
    fn dataset_save_load_save_is_byte_identical() {
        let cfg = SynthConfig::default();
        let mut rng = Prng::new(2);
        let bank = make_surrogate_bank(&cfg, &mut rng).unwrap();
        let samples = gen_dataset(&cfg, &bank, 7, 1, 5).unwrap();
        let ds = Dataset {
            channels: cfg.channels,
            segment_len: cfg.segment_len,
            labels: cfg.labels.clone(),
            samples,
        };
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.eegs");
        let p2 = dir.path().join("b.eegs");
        save_dataset(&p1, &ds).unwrap();
        let loaded = load_dataset(&p1).unwrap();
        save_dataset(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(loaded.labels, ds.labels);
        assert_eq!(loaded.samples.len(), 5);
        for (a, b) in loaded.samples.iter().zip(&ds.samples) {
            assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn truncation_reports_expected_and_actual_bytes() {
        let cfg = SynthConfig::default();
        let mut rng = Prng::new(3);
        let bank = make_surrogate_bank(&cfg, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.eegb");
        save_bank(&path, &bank).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_bank(&path).unwrap_err();
        match err {
            Error::Parse {
                kind: ParseError::Truncated { expected, got },
                ..
            } => assert!(got < expected, "{got} vs {expected}"),
            other => panic!("expected truncation error, got {other}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.eegb");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(
            load_bank(&path).unwrap_err(),
            Error::Parse {
                kind: ParseError::BadMagic { .. },
                ..
            }
        ));
    }

    #[test]
    fn empty_class_list_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.eegb");
        let mut buf = Vec::new();
        buf.extend_from_slice(&BANK_MAGIC);
        put_u32(&mut buf, FORMAT_VERSION);
        put_u32(&mut buf, 8);
        put_u32(&mut buf, 50);
        put_u32(&mut buf, 0); // no classes
        std::fs::write(&path, &buf).unwrap();
        assert!(matches!(
            load_bank(&path).unwrap_err(),
            Error::Parse {
                kind: ParseError::Invalid(_),
                ..
            }
        ));
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v9.eegb");
        let mut buf = Vec::new();
        buf.extend_from_slice(&BANK_MAGIC);
        put_u32(&mut buf, 9);
        std::fs::write(&path, &buf).unwrap();
        assert!(matches!(
            load_bank(&path).unwrap_err(),
            Error::Parse {
                kind: ParseError::Version(9),
                ..
            }
        ));
    }

    #[test]
    fn out_of_range_label_index_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("badidx.eegs");
        let mut buf = Vec::new();
        buf.extend_from_slice(&DATASET_MAGIC);
        put_u32(&mut buf, FORMAT_VERSION);
        put_u32(&mut buf, 1); // channels
        put_u32(&mut buf, 2); // segment length
        put_u32(&mut buf, 1); // one class
        put_str(&mut buf, "a");
        put_u32(&mut buf, 1); // one sample
        put_u32(&mut buf, 1); // label length 1
        put_u32(&mut buf, 5); // index out of range
        std::fs::write(&path, &buf).unwrap();
        assert!(matches!(
            load_dataset(&path).unwrap_err(),
            Error::Parse {
                kind: ParseError::Invalid(_),
                ..
            }
        ));
    }
}
