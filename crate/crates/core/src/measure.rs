//! Ergodic shift-invariant measures: Bernoulli products and stationary Markov
//! chains on the full shift.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::word::Word;

const SUM_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShiftMeasure {
    Bernoulli {
        probs: Vec<f64>,
    },
    Markov {
        transition: Vec<Vec<f64>>,
        stationary: Vec<f64>,
    },
}

/// Quasi-Bernoulli / sub-multiplicative certificate for a measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureRegularity {
    pub quasi_bernoulli: bool,
    pub submultiplicative: bool,
    pub constant_c: Option<f64>,
}

fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Shannon entropy (nats) of a probability vector with `0 log 0 = 0`.
pub fn shannon_entropy(p: &[f64]) -> f64 {
    -p.iter().copied().map(xlogx).sum::<f64>()
}

fn check_prob_vector(p: &[f64], path: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid(path, "empty probability vector"));
    }
    if let Some(i) = p.iter().position(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invalid(
            format!("{path}[{i}]"),
            format!("entry {} is not a nonnegative finite number", p[i]),
        ));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::invalid(
            path,
            format!("entries sum to {s}, expected 1"),
        ));
    }
    Ok(())
}

fn is_irreducible(p: &[Vec<f64>]) -> bool {
    let n = p.len();
    (0..n).all(|start| {
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if p[i][j] > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    })
}

/// Stationary vector by power iteration on the lazy chain `(P + I) / 2`,
/// which shares the stationary vector of `P` and is aperiodic.
fn stationary_vector(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = p.len();
    let mut v = vec![1.0 / n as f64; n];
    for _ in 0..5_000_000 {
        let mut next = vec![0.0; n];
        for i in 0..n {
            next[i] += 0.5 * v[i];
            for j in 0..n {
                next[j] += 0.5 * v[i] * p[i][j];
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let change: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        if change < 1e-13 {
            return Ok(v);
        }
    }
    Err(Error::Numeric(
        "stationary vector power iteration did not converge".into(),
    ))
}

impl ShiftMeasure {
    pub fn bernoulli(probs: Vec<f64>) -> Result<Self> {
        check_prob_vector(&probs, "probs")?;
        Ok(ShiftMeasure::Bernoulli { probs })
    }

    pub fn uniform(n: usize) -> Self {
        ShiftMeasure::Bernoulli {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Stationary Markov measure. The chain must be irreducible; its
    /// stationary vector is computed here.
    pub fn markov(transition: Vec<Vec<f64>>) -> Result<Self> {
        let n = transition.len();
        if n == 0 {
            return Err(Error::invalid("transition", "empty transition matrix"));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid(
                    format!("transition[{i}]"),
                    format!("row has length {}, expected {n}", row.len()),
                ));
            }
            check_prob_vector(row, &format!("transition[{i}]"))?;
        }
        if !is_irreducible(&transition) {
            return Err(Error::invalid("transition", "chain is not irreducible"));
        }
        let stationary = stationary_vector(&transition)?;
        let m = ShiftMeasure::Markov {
            transition,
            stationary,
        };
        m.validate()?;
        Ok(m)
    }

    /// Re-check every invariant; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        match self {
            ShiftMeasure::Bernoulli { probs } => check_prob_vector(probs, "probs"),
            ShiftMeasure::Markov {
                transition,
                stationary,
            } => {
                let n = transition.len();
                if stationary.len() != n {
                    return Err(Error::invalid(
                        "stationary",
                        "length differs from transition matrix",
                    ));
                }
                for (i, row) in transition.iter().enumerate() {
                    if row.len() != n {
                        return Err(Error::invalid(
                            format!("transition[{i}]"),
                            "row length mismatch",
                        ));
                    }
                    check_prob_vector(row, &format!("transition[{i}]"))?;
                }
                check_prob_vector(stationary, "stationary")?;
                for j in 0..n {
                    let pj: f64 = (0..n).map(|i| stationary[i] * transition[i][j]).sum();
                    if (pj - stationary[j]).abs() > STATIONARY_TOL {
                        return Err(Error::invalid(
                            format!("stationary[{j}]"),
                            "not stationary for the transition matrix",
                        ));
                    }
                }
                if !is_irreducible(transition) {
                    return Err(Error::invalid("transition", "chain is not irreducible"));
                }
                Ok(())
            }
        }
    }

    pub fn alphabet_size(&self) -> usize {
        match self {
            ShiftMeasure::Bernoulli { probs } => probs.len(),
            ShiftMeasure::Markov { transition, .. } => transition.len(),
        }
    }

    /// One-symbol marginal.
    pub fn marginal(&self) -> &[f64] {
        match self {
            ShiftMeasure::Bernoulli { probs } => probs,
            ShiftMeasure::Markov { stationary, .. } => stationary,
        }
    }

    /// Kolmogorov-Sinai entropy in nats.
    pub fn entropy(&self) -> f64 {
        match self {
            ShiftMeasure::Bernoulli { probs } => shannon_entropy(probs),
            ShiftMeasure::Markov {
                transition,
                stationary,
            } => stationary
                .iter()
                .zip(transition)
                .map(|(pi, row)| pi * shannon_entropy(row))
                .sum(),
        }
    }

    /// Measure of the cylinder `[w]_0`. Symbols outside the alphabet have
    /// probability zero.
    pub fn cylinder_prob(&self, w: &Word) -> Result<f64> {
        w.validate(self.alphabet_size())?;
        let s = w.symbols();
        Ok(match self {
            ShiftMeasure::Bernoulli { probs } => s.iter().map(|&j| probs[j]).product(),
            ShiftMeasure::Markov {
                transition,
                stationary,
            } => {
                stationary[s[0]]
                    * s.windows(2)
                        .map(|p| transition[p[0]][p[1]])
                        .product::<f64>()
            }
        })
    }

    pub fn sampler(&self) -> WordSampler {
        let table = |p: &[f64]| {
            WeightedIndex::new(p.iter().copied()).expect("validated probability vector")
        };
        match self {
            ShiftMeasure::Bernoulli { probs } => WordSampler {
                initial: table(probs),
                rows: None,
            },
            ShiftMeasure::Markov {
                transition,
                stationary,
            } => WordSampler {
                initial: table(stationary),
                rows: Some(transition.iter().map(|r| table(r)).collect()),
            },
        }
    }

    /// Word of the given length distributed as the one-sided marginal of the
    /// measure on coordinates `0..length`.
    pub fn sample_word<R: Rng + ?Sized>(&self, length: usize, rng: &mut R) -> Result<Word> {
        if length == 0 {
            return Err(Error::Precondition(
                "sample length must be at least 1".into(),
            ));
        }
        let mut w = vec![0; length];
        self.sampler().fill(&mut w, rng);
        Ok(Word(w))
    }

    /// Like [`sample_word`](Self::sample_word) but conditioned on the first
    /// symbol being `start`.
    pub fn sample_word_from<R: Rng + ?Sized>(
        &self,
        start: usize,
        length: usize,
        rng: &mut R,
    ) -> Result<Word> {
        if length == 0 {
            return Err(Error::Precondition(
                "sample length must be at least 1".into(),
            ));
        }
        crate::word::check_symbols(&[start], self.alphabet_size())?;
        let mut w = vec![0; length];
        w[0] = start;
        self.sampler().continue_fill(&mut w, rng);
        Ok(Word(w))
    }

    pub fn regularity(&self) -> MeasureRegularity {
        match self {
            ShiftMeasure::Bernoulli { .. } => MeasureRegularity {
                quasi_bernoulli: true,
                submultiplicative: true,
                constant_c: Some(1.0),
            },
            ShiftMeasure::Markov {
                transition,
                stationary,
            } => {
                // m([IJ]) / (m([I]) m([J])) = P[last(I)][first(J)] / stationary[first(J)]
                let mut upper = 0.0f64;
                let mut lower = f64::INFINITY;
                for row in transition {
                    for (j, &pij) in row.iter().enumerate() {
                        let ratio = pij / stationary[j];
                        upper = upper.max(ratio);
                        lower = lower.min(ratio);
                    }
                }
                if lower > 0.0 {
                    MeasureRegularity {
                        quasi_bernoulli: true,
                        submultiplicative: true,
                        constant_c: Some(upper.max(1.0 / lower).max(1.0)),
                    }
                } else {
                    MeasureRegularity {
                        quasi_bernoulli: false,
                        submultiplicative: upper.is_finite(),
                        constant_c: upper.is_finite().then_some(upper.max(1.0)),
                    }
                }
            }
        }
    }
}

/// Precomputed sampling tables for a [`ShiftMeasure`].
#[derive(Debug, Clone)]
pub struct WordSampler {
    initial: WeightedIndex<f64>,
    rows: Option<Vec<WeightedIndex<f64>>>,
}

impl WordSampler {
    pub fn fill<R: Rng + ?Sized>(&self, out: &mut [usize], rng: &mut R) {
        if out.is_empty() {
            return;
        }
        match &self.rows {
            None => out.iter_mut().for_each(|s| *s = self.initial.sample(rng)),
            Some(_) => {
                out[0] = self.initial.sample(rng);
                self.continue_fill(out, rng);
            }
        }
    }

    /// Fill `out[1..]` given `out[0]`.
    pub fn continue_fill<R: Rng + ?Sized>(&self, out: &mut [usize], rng: &mut R) {
        match &self.rows {
            None => out
                .iter_mut()
                .skip(1)
                .for_each(|s| *s = self.initial.sample(rng)),
            Some(rows) => {
                for k in 1..out.len() {
                    out[k] = rows[out[k - 1]].sample(rng);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::word::all_words;
    use approx::assert_relative_eq;

    fn sticky() -> ShiftMeasure {
        ShiftMeasure::markov(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_relative_eq!(
            ShiftMeasure::uniform(2).entropy(),
            2f64.ln(),
            epsilon = 1e-15
        );
        assert_eq!(
            ShiftMeasure::bernoulli(vec![1.0, 0.0]).unwrap().entropy(),
            0.0
        );
        let m = ShiftMeasure::markov(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_relative_eq!(m.entropy(), 2f64.ln(), epsilon = 1e-13);
    }

    #[test]
    fn stationary_vector_of_sticky_chain() {
        let m = sticky();
        let pi = m.marginal();
        assert_relative_eq!(pi[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(pi[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn periodic_chain_has_stationary_vector() {
        let m = ShiftMeasure::markov(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_relative_eq!(m.marginal()[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn cylinder_examples() {
        let b = ShiftMeasure::bernoulli(vec![0.3, 0.7]).unwrap();
        assert_relative_eq!(
            b.cylinder_prob(&Word(vec![0, 1, 1])).unwrap(),
            0.147,
            epsilon = 1e-15
        );
        let u = ShiftMeasure::uniform(2);
        assert_eq!(
            u.cylinder_prob(&Word(vec![1, 0, 1, 1, 0])).unwrap(),
            1.0 / 32.0
        );
        assert_relative_eq!(
            sticky().cylinder_prob(&Word(vec![0, 0])).unwrap(),
            0.6,
            epsilon = 1e-12
        );
        assert!(u.cylinder_prob(&Word(vec![])).is_err());
    }

    #[test]
    fn cylinders_sum_to_one() {
        for m in [
            ShiftMeasure::bernoulli(vec![0.2, 0.5, 0.3]).unwrap(),
            sticky(),
        ] {
            for n in 1..=7 {
                let total: f64 = all_words(m.alphabet_size(), n)
                    .map(|w| m.cylinder_prob(&w).unwrap())
                    .sum();
                assert!((total - 1.0).abs() < 1e-9, "n={n} total={total}");
            }
        }
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(matches!(
            ShiftMeasure::bernoulli(vec![0.5, 0.4]),
            Err(Error::Invalid { .. })
        ));
        let e = ShiftMeasure::markov(vec![vec![0.5, 0.5], vec![0.3, 0.6]]).unwrap_err();
        assert_eq!(
            e,
            Error::invalid(
                "transition[1]",
                "entries sum to 0.8999999999999999, expected 1"
            )
        );
        let reducible = ShiftMeasure::markov(vec![vec![1.0, 0.0], vec![0.5, 0.5]]);
        assert!(reducible.is_err());
    }

    #[test]
    fn sampling_examples() {
        let mut r = rng::stream(1, 0);
        let atom = ShiftMeasure::bernoulli(vec![1.0, 0.0]).unwrap();
        assert_eq!(atom.sample_word(5, &mut r).unwrap(), Word(vec![0; 5]));

        let flip = ShiftMeasure::markov(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let w = flip.sample_word_from(0, 8, &mut r).unwrap();
        assert_eq!(w, Word::periodic(&[0, 1], 8));

        let n = 1_000_000;
        let w = ShiftMeasure::uniform(2).sample_word(n, &mut r).unwrap();
        let ones = w.symbols().iter().filter(|&&s| s == 1).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((ones - n as f64 / 2.0).abs() < 3.0 * sigma);
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = sticky();
        let a = m.sample_word(100, &mut rng::stream(9, 3)).unwrap();
        let b = m.sample_word(100, &mut rng::stream(9, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn regularity_examples() {
        let b = ShiftMeasure::bernoulli(vec![0.3, 0.7])
            .unwrap()
            .regularity();
        assert!(b.quasi_bernoulli);
        assert_eq!(b.constant_c, Some(1.0));

        let half = ShiftMeasure::markov(vec![vec![0.5, 0.5], vec![0.5, 0.5]])
            .unwrap()
            .regularity();
        assert_relative_eq!(half.constant_c.unwrap(), 1.0, epsilon = 1e-12);

        // ratios P_ij / pi_j with pi = (2/3, 1/3): 1.35, 0.3, 0.3, 2.4; worst inverse is 10/3
        let s = sticky().regularity();
        assert!(s.quasi_bernoulli && s.submultiplicative);
        assert_relative_eq!(s.constant_c.unwrap(), 10.0 / 3.0, epsilon = 1e-10);

        let gappy = ShiftMeasure::markov(vec![vec![0.0, 1.0], vec![0.5, 0.5]])
            .unwrap()
            .regularity();
        assert!(!gappy.quasi_bernoulli);
        assert!(gappy.submultiplicative);
        assert!(gappy.constant_c.unwrap() >= 1.0);
    }

    #[test]
    fn quasi_bernoulli_bounds_hold_exhaustively() {
        let m = sticky();
        let c = m.regularity().constant_c.unwrap();
        for lu in 1..=4 {
            for lv in 1..=4 {
                for u in all_words(2, lu) {
                    for v in all_words(2, lv) {
                        let joint = m.cylinder_prob(&u.concat(&v)).unwrap();
                        let prod = m.cylinder_prob(&u).unwrap() * m.cylinder_prob(&v).unwrap();
                        assert!(joint <= c * prod * (1.0 + 1e-12));
                        assert!(joint >= prod / c * (1.0 - 1e-12));
                    }
                }
            }
        }
    }

    #[test]
    fn shannon_mcmillan_breiman() {
        for m in [ShiftMeasure::bernoulli(vec![0.3, 0.7]).unwrap(), sticky()] {
            let h = m.entropy();
            for seed in 0..10 {
                let n = 100_000;
                let w = m.sample_word(n, &mut rng::stream(seed, 0)).unwrap();
                let s = w.symbols();
                // log of the cylinder probability, accumulated in log space
                let log_p = match &m {
                    ShiftMeasure::Bernoulli { probs } => {
                        s.iter().map(|&j| probs[j].ln()).sum::<f64>()
                    }
                    ShiftMeasure::Markov {
                        transition,
                        stationary,
                    } => {
                        stationary[s[0]].ln()
                            + s.windows(2)
                                .map(|p| transition[p[0]][p[1]].ln())
                                .sum::<f64>()
                    }
                };
                let empirical = -log_p / n as f64;
                assert!(
                    (empirical - h).abs() < 0.01,
                    "seed {seed}: {empirical} vs {h}"
                );
            }
        }
    }

    use proptest::prelude::*;

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.05f64..1.0, n).prop_map(|w| {
            let total: f64 = w.iter().sum();
            w.iter().map(|x| x / total).collect()
        })
    }

    fn any_measure() -> impl Strategy<Value = ShiftMeasure> {
        (2usize..=3).prop_flat_map(|n| {
            prop_oneof![
                simplex(n).prop_map(|p| ShiftMeasure::bernoulli(p).unwrap()),
                prop::collection::vec(simplex(n), n).prop_map(|t| ShiftMeasure::markov(t).unwrap()),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn cylinder_probabilities_sum_to_one(m in any_measure(), n in 1usize..=5) {
            let total: f64 = all_words(m.alphabet_size(), n).map(|w| m.cylinder_prob(&w).unwrap()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "{total}");
        }

        #[test]
        fn cylinders_are_consistent_under_extension(m in any_measure(), w in prop::collection::vec(0usize..2, 1..6)) {
            let w = Word(w);
            let parent = m.cylinder_prob(&w).unwrap();
            let children: f64 = (0..m.alphabet_size())
                .map(|a| m.cylinder_prob(&w.concat(&Word(vec![a]))).unwrap())
                .sum();
            prop_assert!((parent - children).abs() < 1e-12);
        }

        #[test]
        fn entropy_is_at_most_log_alphabet(m in any_measure()) {
            prop_assert!(m.entropy() >= 0.0);
            prop_assert!(m.entropy() <= (m.alphabet_size() as f64).ln() + 1e-12);
        }
    }
}
