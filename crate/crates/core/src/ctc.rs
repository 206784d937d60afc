//! Connectionist temporal classification: the collapse mapping from frame
//! paths to label sequences, path/label probabilities, the forward-backward
//! loss with analytic logit gradients, and greedy best-path decoding.
//!
//! Convention used throughout: for a posterior matrix with n columns, the
//! blank symbol is the last column (index n-1); real labels occupy 0..n-1.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Upper bound on n^T for the exhaustive path enumeration oracle.
const ENUM_BOUND: f64 = 1e7;

/// The label set: an ordered list of distinct label names, with the blank
/// symbol implicitly appended at index `n_labels()`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    labels: Vec<String>,
}

impl Alphabet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Arg(
                "alphabet must contain at least one label".into(),
            ));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(Error::Arg(format!("duplicate alphabet label {a:?}")));
            }
        }
        Ok(Alphabet { labels })
    }

    /// Number of real labels |L| (blank excluded).
    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    /// Size of the blank-extended alphabet, n = |L| + 1.
    pub fn n_total(&self) -> usize {
        self.labels.len() + 1
    }

    /// Index of the blank symbol (last).
    pub fn blank(&self) -> usize {
        self.labels.len()
    }

    pub fn name(&self, index: usize) -> &str {
        if index == self.blank() {
            "_"
        } else {
            &self.labels[index]
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }
}

impl Default for Alphabet {
    fn default() -> Self {
        Alphabet::new(vec!["a".into(), "u".into(), "rest".into()]).expect("valid defaults")
    }
}

/// A variable-length sequence over the real labels; never contains blank.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    /// Validates every index against the number of real labels.
    pub fn new(indices: Vec<usize>, n_labels: usize) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= n_labels) {
            return Err(Error::Arg(format!(
                "label index {bad} out of range for {n_labels} labels"
            )));
        }
        Ok(LabelSequence(indices))
    }

    pub fn empty() -> Self {
        LabelSequence(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Space-separated label names.
    pub fn to_names(&self, alphabet: &Alphabet) -> String {
        self.0
            .iter()
            .map(|&i| alphabet.name(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// The collapse mapping: merge consecutive identical symbols, then delete
/// blanks. The order matters; dropping blanks first would merge repeats that
/// a blank was separating.
pub fn collapse(path: &[usize], blank: usize) -> LabelSequence {
    let mut out = Vec::new();
    let mut prev: Option<usize> = None;
    for &s in path {
        if prev != Some(s) {
            if s != blank {
                out.push(s);
            }
            prev = Some(s);
        }
    }
    LabelSequence(out)
}

/// Probability of one frame path: the product of per-frame posteriors along
/// it. `path` holds indices into the blank-extended alphabet.
pub fn path_prob(y: &Tensor, path: &[usize]) -> Result<f64> {
    let (t, n) = posterior_dims(y)?;
    if path.len() != t {
        return Err(Error::Arg(format!(
            "path length {} does not match {} posterior frames",
            path.len(),
            t
        )));
    }
    let mut p = 1.0;
    for (ti, &s) in path.iter().enumerate() {
        if s >= n {
            return Err(Error::Arg(format!(
                "path symbol {s} out of range for n={n}"
            )));
        }
        p *= y.data()[ti * n + s];
    }
    Ok(p)
}

/// Label-sequence probability by exhaustive enumeration of all n^T paths,
/// keeping those that collapse to `l`. This is the verification oracle for
/// the forward-backward implementation and is deliberately brute force;
/// it refuses inputs where n^T exceeds the enumeration bound.
pub fn label_prob_bruteforce(y: &Tensor, l: &LabelSequence) -> Result<f64> {
    let (t, n) = posterior_dims(y)?;
    if (n as f64).powi(t as i32) > ENUM_BOUND {
        return Err(Error::Resource(format!(
            "label_prob_bruteforce: {n}^{t} paths exceed the {ENUM_BOUND:e} bound"
        )));
    }
    let blank = n - 1;
    let mut path = vec![0usize; t];
    let mut total = 0.0;
    loop {
        if collapse(&path, blank) == *l {
            total += path_prob(y, &path)?;
        }
        // Odometer increment over base-n digits.
        let mut i = 0;
        loop {
            if i == t {
                return Ok(total);
            }
            path[i] += 1;
            if path[i] < n {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Result of the forward-backward loss. `Infeasible` signals a label with no
/// valid alignment (probability zero), so the caller can skip the sample.
#[derive(Clone, Debug)]
pub enum CtcOutcome {
    Finite {
        /// Negative log probability of the label sequence.
        nll: f64,
        /// Gradient of the nll w.r.t. the pre-softmax logits, [T,n].
        logit_grad: Tensor,
    },
    Infeasible,
}

impl CtcOutcome {
    pub fn nll(&self) -> Option<f64> {
        match self {
            CtcOutcome::Finite { nll, .. } => Some(*nll),
            CtcOutcome::Infeasible => None,
        }
    }
}

/// Negative log label probability and its gradient w.r.t. the pre-softmax
/// logits, computed by the forward-backward dynamic program over the
/// blank-extended label in log space.
pub fn ctc_loss(y: &Tensor, l: &LabelSequence) -> Result<CtcOutcome> {
    let (t_len, n) = posterior_dims(y)?;
    let blank = n - 1;
    if let Some(&bad) = l.as_slice().iter().find(|&&s| s >= blank) {
        return Err(Error::Arg(format!(
            "label index {bad} out of range for {} real labels",
            blank
        )));
    }
    let ext = blank_extended(l, blank);
    let s_len = ext.len();
    let ly = |t: usize, k: usize| y.data()[t * n + k].ln();

    // Forward variable, emission included: alpha[t][s] sums paths over
    // frames 0..=t ending at extended-label position s.
    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![neg; t_len * s_len];
    alpha[0] = ly(0, ext[0]);
    if s_len > 1 {
        alpha[1] = ly(0, ext[1]);
    }
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let mut acc = prev[s];
            if s >= 1 {
                acc = logsumexp2(acc, prev[s - 1]);
            }
            if s >= 2 && ext[s] != blank && ext[s] != ext[s - 2] {
                acc = logsumexp2(acc, prev[s - 2]);
            }
            cur[s] = acc + ly(t, ext[s]);
        }
    }
    let log_p = if s_len > 1 {
        logsumexp2(
            alpha[(t_len - 1) * s_len + s_len - 1],
            alpha[(t_len - 1) * s_len + s_len - 2],
        )
    } else {
        alpha[(t_len - 1) * s_len]
    };
    if log_p == f64::NEG_INFINITY {
        return Ok(CtcOutcome::Infeasible);
    }

    // Backward variable, emission included.
    let mut beta = vec![neg; t_len * s_len];
    beta[(t_len - 1) * s_len + s_len - 1] = ly(t_len - 1, ext[s_len - 1]);
    if s_len > 1 {
        beta[(t_len - 1) * s_len + s_len - 2] = ly(t_len - 1, ext[s_len - 2]);
    }
    for t in (0..t_len - 1).rev() {
        let (head, tail) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut head[t * s_len..];
        let next = &tail[..s_len];
        for s in 0..s_len {
            let mut acc = next[s];
            if s + 1 < s_len {
                acc = logsumexp2(acc, next[s + 1]);
            }
            if s + 2 < s_len && ext[s + 2] != blank && ext[s + 2] != ext[s] {
                acc = logsumexp2(acc, next[s + 2]);
            }
            cur[s] = acc + ly(t, ext[s]);
        }
    }

    // d nll / d logit[t][k] = y[t][k] - (1/p) sum_{s: ext[s]=k} a_t(s) b_t(s) / y[t][k],
    // assembled in log space. alpha and beta each include the frame-t
    // emission, hence the single division by it.
    let mut grad = vec![0.0; t_len * n];
    let mut gsum = vec![neg; n];
    for t in 0..t_len {
        gsum.iter_mut().for_each(|v| *v = neg);
        for s in 0..s_len {
            let ab = alpha[t * s_len + s] + beta[t * s_len + s];
            if ab == f64::NEG_INFINITY {
                continue;
            }
            let k = ext[s];
            gsum[k] = logsumexp2(gsum[k], ab - ly(t, k));
        }
        for k in 0..n {
            let marginal = if gsum[k] == f64::NEG_INFINITY {
                0.0
            } else {
                (gsum[k] - log_p).exp()
            };
            grad[t * n + k] = y.data()[t * n + k] - marginal;
        }
    }
    Ok(CtcOutcome::Finite {
        nll: -log_p,
        logit_grad: Tensor::new(vec![t_len, n], grad)?,
    })
}

/// Best-path decoding: per-frame argmax (ties to the lowest index), then
/// collapse.
pub fn greedy_decode(y: &Tensor) -> Result<LabelSequence> {
    let (t, n) = posterior_dims(y)?;
    let blank = n - 1;
    let mut path = Vec::with_capacity(t);
    for ti in 0..t {
        let row = &y.data()[ti * n..(ti + 1) * n];
        let mut best = 0usize;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        path.push(best);
    }
    Ok(collapse(&path, blank))
}

fn posterior_dims(y: &Tensor) -> Result<(usize, usize)> {
    if y.rank() != 2 {
        return Err(Error::Arg(format!(
            "posterior matrix must be rank 2, got rank {}",
            y.rank()
        )));
    }
    let (t, n) = (y.shape()[0], y.shape()[1]);
    if t == 0 || n < 2 {
        return Err(Error::Arg(format!("degenerate posterior shape {t}x{n}")));
    }
    Ok((t, n))
}

/// Interleave blanks around every label: [_, l1, _, l2, ..., _].
fn blank_extended(l: &LabelSequence, blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * l.len() + 1);
    ext.push(blank);
    for &s in l.as_slice() {
        ext.push(s);
        ext.push(blank);
    }
    ext
}

fn logsumexp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{softmax_rows, Prng};
    use proptest::prelude::*;

    // Labels a=0, b=1, blank=2 for readability in the collapse tests.
    const A: usize = 0;
    const B: usize = 1;
    const BL: usize = 2;

    fn seq(v: &[usize]) -> LabelSequence {
        LabelSequence::new(v.to_vec(), 9).unwrap()
    }

    /// Random posterior matrix with strictly positive rows summing to 1.
    fn random_posteriors(t: usize, n: usize, rng: &mut Prng) -> Tensor {
        let logits = Tensor::from_fn(vec![t, n], |_| 2.0 * rng.normal());
        softmax_rows(&logits).unwrap()
    }

    #[test]
    fn collapse_merges_then_drops_blanks() {
        assert_eq!(collapse(&[A, BL, A, B, BL], BL), seq(&[A, A, B]));
        assert_eq!(collapse(&[BL, A, A, BL, BL, A, B, B], BL), seq(&[A, A, B]));
        assert_eq!(collapse(&[BL, BL, BL], BL), LabelSequence::empty());
    }

    #[test]
    fn path_prob_uniform_and_onehot() {
        let y = Tensor::full(vec![2, 4], 0.25);
        assert!((path_prob(&y, &[0, 3]).unwrap() - 1.0 / 16.0).abs() < 1e-15);

        let y = Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(path_prob(&y, &[0, 1]).unwrap(), 1.0);
        assert_eq!(path_prob(&y, &[1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn path_prob_rejects_length_mismatch() {
        let y = Tensor::full(vec![3, 4], 0.25);
        assert!(path_prob(&y, &[0, 1]).is_err());
    }

    #[test]
    fn path_probs_partition_unity() {
        let mut rng = Prng::new(21);
        for &(t, n) in &[(2usize, 3usize), (4, 3), (5, 4)] {
            let y = random_posteriors(t, n, &mut rng);
            let mut total = 0.0;
            let mut path = vec![0usize; t];
            'outer: loop {
                total += path_prob(&y, &path).unwrap();
                let mut i = 0;
                loop {
                    if i == t {
                        break 'outer;
                    }
                    path[i] += 1;
                    if path[i] < n {
                        break;
                    }
                    path[i] = 0;
                    i += 1;
                }
            }
            assert!((total - 1.0).abs() < 1e-10, "T={t} n={n}: {total}");
        }
    }

    #[test]
    fn bruteforce_single_frame() {
        // T=1: p([a]) is just the frame-0 posterior of a.
        let y = Tensor::new(vec![1, 3], vec![0.6, 0.3, 0.1]).unwrap();
        assert!((label_prob_bruteforce(&y, &seq(&[A])).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn bruteforce_two_frames_hand_enumeration() {
        // Paths collapsing to [a] with T=2: (a,a), (a,_), (_,a).
        let y = Tensor::new(vec![2, 3], vec![0.5, 0.2, 0.3, 0.1, 0.6, 0.3]).unwrap();
        let expect = 0.5 * 0.1 + 0.5 * 0.3 + 0.3 * 0.1;
        let got = label_prob_bruteforce(&y, &seq(&[A])).unwrap();
        assert!((got - expect).abs() < 1e-15, "{got} vs {expect}");
    }

    #[test]
    fn bruteforce_impossible_label_is_zero() {
        let y = Tensor::full(vec![1, 3], 1.0 / 3.0);
        assert_eq!(label_prob_bruteforce(&y, &seq(&[A, B])).unwrap(), 0.0);
        // Repeated label needs a separating blank: minimum T is 3.
        let y = Tensor::full(vec![2, 3], 1.0 / 3.0);
        assert_eq!(label_prob_bruteforce(&y, &seq(&[A, A])).unwrap(), 0.0);
    }

    #[test]
    fn bruteforce_refuses_huge_enumeration() {
        let y = Tensor::full(vec![30, 4], 0.25);
        assert!(matches!(
            label_prob_bruteforce(&y, &seq(&[A])),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn forward_backward_matches_bruteforce() {
        let mut rng = Prng::new(33);
        for case in 0..60 {
            let t = 1 + (case % 6);
            let n = 2 + (case % 3);
            let y = random_posteriors(t, n, &mut rng);
            let max_l = (case % 4).min(t);
            let l =
                LabelSequence::new((0..max_l).map(|_| rng.index(n - 1)).collect(), n - 1).unwrap();
            let brute = label_prob_bruteforce(&y, &l).unwrap();
            match ctc_loss(&y, &l).unwrap() {
                CtcOutcome::Finite { nll, .. } => {
                    let p = (-nll).exp();
                    assert!(
                        (p - brute).abs() < 1e-9,
                        "case {case}: fb {p} vs brute {brute}"
                    );
                }
                CtcOutcome::Infeasible => {
                    assert_eq!(brute, 0.0, "case {case}: infeasible but brute {brute}");
                }
            }
        }
    }

    #[test]
    fn one_hot_single_frame_gives_zero_loss() {
        let y = Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        match ctc_loss(&y, &seq(&[A])).unwrap() {
            CtcOutcome::Finite { nll, .. } => assert!(nll.abs() < 1e-12, "nll {nll}"),
            CtcOutcome::Infeasible => panic!("should be feasible"),
        }
    }

    #[test]
    fn empty_label_probability_is_all_blank_path() {
        let y = Tensor::new(vec![2, 3], vec![0.5, 0.2, 0.3, 0.1, 0.6, 0.3]).unwrap();
        match ctc_loss(&y, &LabelSequence::empty()).unwrap() {
            CtcOutcome::Finite { nll, .. } => {
                assert!(((-nll).exp() - 0.3 * 0.3).abs() < 1e-12);
            }
            CtcOutcome::Infeasible => panic!("all-blank path exists"),
        }
    }

    #[test]
    fn infeasible_when_label_longer_than_frames() {
        let y = Tensor::full(vec![1, 3], 1.0 / 3.0);
        assert!(matches!(
            ctc_loss(&y, &seq(&[A, B])).unwrap(),
            CtcOutcome::Infeasible
        ));
        // Zero posterior mass on the only required label.
        let y = Tensor::new(vec![2, 3], vec![0.0, 0.5, 0.5, 0.0, 0.5, 0.5]).unwrap();
        assert!(matches!(
            ctc_loss(&y, &seq(&[A])).unwrap(),
            CtcOutcome::Infeasible
        ));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        use crate::tensor::grad_check;
        let mut rng = Prng::new(44);
        for case in 0..20 {
            let t = 2 + (case % 4);
            let n = 3 + (case % 2);
            let logits = Tensor::from_fn(vec![t, n], |_| rng.normal());
            let len = 1 + (case % 2);
            let l =
                LabelSequence::new((0..len).map(|_| rng.index(n - 1)).collect(), n - 1).unwrap();
            let y = softmax_rows(&logits).unwrap();
            let analytic = match ctc_loss(&y, &l).unwrap() {
                CtcOutcome::Finite { logit_grad, .. } => logit_grad,
                CtcOutcome::Infeasible => continue,
            };
            let shape = vec![t, n];
            let f = |theta: &[f64]| {
                let lg = Tensor::new(shape.clone(), theta.to_vec())?;
                let yy = softmax_rows(&lg)?;
                match ctc_loss(&yy, &l)? {
                    CtcOutcome::Finite { nll, .. } => Ok(nll),
                    CtcOutcome::Infeasible => Ok(f64::INFINITY),
                }
            };
            let rel = grad_check(f, logits.data(), analytic.data(), 1e-6).unwrap();
            assert!(rel < 1e-4, "case {case}: rel {rel}");
        }
    }

    #[test]
    fn loss_is_permutation_covariant() {
        let mut rng = Prng::new(55);
        let n = 4; // 3 labels + blank
        let y = random_posteriors(6, n, &mut rng);
        let l = seq(&[0, 2, 1]);
        let perm = [2usize, 0, 1]; // relabeling of the 3 real labels
        let y2 = Tensor::from_fn(vec![6, n], |i| {
            let (t, k) = (i / n, i % n);
            if k == n - 1 {
                y.at2(t, n - 1)
            } else {
                // column k of y2 is column perm^-1(k)... build directly:
                // y2[t][perm[j]] = y[t][j]  <=>  y2[t][k] = y[t][inv[k]]
                let inv = perm.iter().position(|&p| p == k).unwrap();
                y.at2(t, inv)
            }
        });
        let l2 = LabelSequence::new(l.as_slice().iter().map(|&s| perm[s]).collect(), 3).unwrap();
        let a = ctc_loss(&y, &l).unwrap().nll().unwrap();
        let b = ctc_loss(&y2, &l2).unwrap().nll().unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn log_space_survives_tiny_probabilities() {
        // Every step of the alignment has probability >= 1e-300; the loss
        // must come out finite.
        let tiny = 1e-300;
        let y = Tensor::new(
            vec![3, 3],
            vec![
                tiny,
                0.0,
                1.0 - tiny,
                tiny,
                0.0,
                1.0 - tiny,
                tiny,
                0.0,
                1.0 - tiny,
            ],
        )
        .unwrap();
        match ctc_loss(&y, &seq(&[A])).unwrap() {
            CtcOutcome::Finite { nll, .. } => assert!(nll.is_finite(), "nll {nll}"),
            CtcOutcome::Infeasible => panic!("alignment exists"),
        }
    }

    #[test]
    fn greedy_decode_follows_argmax_path() {
        // One-hot posteriors along the path a _ a b _ decode to a a b.
        let path = [A, BL, A, B, BL];
        let y = Tensor::from_fn(vec![5, 3], |i| {
            let (t, k) = (i / 3, i % 3);
            if path[t] == k {
                1.0
            } else {
                0.0
            }
        });
        assert_eq!(greedy_decode(&y).unwrap(), seq(&[A, A, B]));
    }

    #[test]
    fn greedy_decode_ties_take_lowest_index() {
        let y = Tensor::full(vec![4, 4], 0.25);
        assert_eq!(greedy_decode(&y).unwrap(), seq(&[0]));
    }

    #[test]
    fn partition_property_small_exhaustive() {
        let mut rng = Prng::new(66);
        let (t, n) = (3usize, 4usize);
        let y = random_posteriors(t, n, &mut rng);
        let n_real = n - 1;
        let mut total = 0.0;
        // All label sequences of length 0..=T over the real labels.
        for len in 0..=t {
            let mut digits = vec![0usize; len];
            loop {
                let l = LabelSequence::new(digits.clone(), n_real).unwrap();
                total += label_prob_bruteforce(&y, &l).unwrap();
                let mut i = 0;
                loop {
                    if i == len {
                        break;
                    }
                    digits[i] += 1;
                    if digits[i] < n_real {
                        break;
                    }
                    digits[i] = 0;
                    i += 1;
                }
                if i == len {
                    break;
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-9, "total {total}");
    }

    #[test]
    fn alphabet_defaults_and_lookup() {
        let a = Alphabet::default();
        assert_eq!(a.n_labels(), 3);
        assert_eq!(a.n_total(), 4);
        assert_eq!(a.blank(), 3);
        assert_eq!(a.name(2), "rest");
        assert_eq!(a.name(3), "_");
        assert_eq!(a.index_of("u"), Some(1));
        assert!(Alphabet::new(vec!["x".into(), "x".into()]).is_err());
    }

    #[test]
    fn label_sequence_rejects_out_of_range() {
        assert!(LabelSequence::new(vec![0, 3], 3).is_err());
        assert!(LabelSequence::new(vec![0, 2], 3).is_ok());
    }

    proptest! {
        /// A blank-free, repeat-free path collapses to itself.
        #[test]
        fn collapse_identity_on_repeat_free(raw in proptest::collection::vec(0usize..3, 0..12)) {
            let mut path = Vec::new();
            for s in raw {
                if path.last() != Some(&s) {
                    path.push(s);
                }
            }
            let blank = 3;
            let collapsed = collapse(&path, blank);
            prop_assert_eq!(collapsed.as_slice(), &path[..]);
        }

        /// Inserting a blank between two distinct symbols never changes the
        /// collapse output.
        #[test]
        fn blank_insertion_between_distinct_is_invisible(
            path in proptest::collection::vec(0usize..4, 2..14),
            pos in 1usize..13,
        ) {
            let blank = 3;
            prop_assume!(pos < path.len());
            prop_assume!(path[pos - 1] != path[pos]);
            let mut inserted = path.clone();
            inserted.insert(pos, blank);
            prop_assert_eq!(collapse(&inserted, blank), collapse(&path, blank));
        }
    }
}
