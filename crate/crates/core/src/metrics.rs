//! Perplexity and corpus BLEU.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::data::{make_batches, EncodedPair, Vocabulary};
use crate::decode::{translate_all, DecodeConfig};
use crate::error::{Error, Result};
use crate::model::NmtModel;

pub const MAX_ORDER: usize = 4;

/// `exp(-mean log p)` over unmasked tokens (natural log throughout).
pub fn perplexity(token_log_probs: &[(f64, bool)]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for &(lp, m) in token_log_probs {
        if !m {
            continue;
        }
        if lp > 0.0 || lp.is_nan() {
            return Err(Error::Contract(format!("log-probability {lp} is not <= 0")));
        }
        total += lp;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Contract("perplexity of zero tokens".into()));
    }
    Ok((-total / count as f64).exp())
}

/// How candidate length shortfall is penalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Brevity {
    /// `min(1, candidate_len / reference_len)`
    #[default]
    Ratio,
    /// `exp(1 - reference_len / candidate_len)` when shorter, else 1
    Exponential,
}

impl Brevity {
    pub fn factor(self, candidate_len: usize, reference_len: usize) -> f64 {
        if candidate_len >= reference_len {
            return 1.0;
        }
        if candidate_len == 0 {
            return 0.0;
        }
        let (c, r) = (candidate_len as f64, reference_len as f64);
        match self {
            Brevity::Ratio => c / r,
            Brevity::Exponential => (1.0 - r / c).exp(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BleuReport {
    /// Clipped n-gram precisions for n = 1..=4.
    pub precisions: [f64; MAX_ORDER],
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub brevity: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
    /// In `[0, 1]`.
    pub score: f64,
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BLEU = {:.6} ({:.2})", self.score, 100.0 * self.score)?;
        for (i, p) in self.precisions.iter().enumerate() {
            writeln!(f, "p{} = {:.6} ({}/{})", i + 1, p, self.matches[i], self.totals[i])?;
        }
        writeln!(f, "brevity = {:.6}", self.brevity)?;
        writeln!(f, "candidate_length = {}", self.candidate_len)?;
        write!(f, "reference_length = {}", self.reference_len)
    }
}

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU with one reference per candidate.
///
/// Matches are clipped by the reference count of each n-gram and summed over
/// the corpus before dividing. An order with no n-grams on either side is
/// vacuously precise (1); any zero precision makes the score 0.
pub fn corpus_bleu<T: Hash + Eq>(candidates: &[Vec<T>], references: &[Vec<T>], brevity: Brevity) -> Result<BleuReport> {
    if candidates.len() != references.len() {
        return Err(Error::Data(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Contract("BLEU of an empty corpus".into()));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let mut ref_totals = [0usize; MAX_ORDER];
    let (mut candidate_len, mut reference_len) = (0, 0);
    for (cand, reference) in candidates.iter().zip(references) {
        candidate_len += cand.len();
        reference_len += reference.len();
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(reference, n);
            for (gram, count) in ngram_counts(cand, n) {
                matches[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += cand.len().saturating_sub(n - 1);
            ref_totals[n - 1] += reference.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for i in 0..MAX_ORDER {
        precisions[i] = match (totals[i], ref_totals[i]) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (t, _) => matches[i] as f64 / t as f64,
        };
    }
    let brevity_factor = brevity.factor(candidate_len, reference_len);
    let geo = if precisions.contains(&0.0) {
        0.0
    } else {
        precisions.iter().product::<f64>().powf(1.0 / MAX_ORDER as f64)
    };
    Ok(BleuReport {
        precisions,
        matches,
        totals,
        brevity: brevity_factor,
        candidate_len,
        reference_len,
        score: brevity_factor * geo,
    })
}

/// Whitespace-tokenizes lines for [`corpus_bleu`].
pub fn tokenize_lines<S: AsRef<str>>(lines: &[S]) -> Vec<Vec<String>> {
    lines
        .iter()
        .map(|l| l.as_ref().split_whitespace().map(str::to_owned).collect())
        .collect()
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub perplexity: f64,
    pub bleu: BleuReport,
    pub translations: Vec<Vec<String>>,
}

/// Teacher-forced perplexity over a parallel set.
pub fn corpus_perplexity(model: &NmtModel, pairs: &[EncodedPair], batch_size: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Contract("perplexity of an empty set".into()));
    }
    let mut all = Vec::new();
    for batch in make_batches(pairs, batch_size, false, 0) {
        all.extend(model.gold_log_probs(&batch)?);
    }
    perplexity(&all)
}

/// Dev perplexity from gold log-probabilities and BLEU of decoded outputs
/// against each pair's reference tokens.
pub fn evaluate_model(
    model: &NmtModel,
    pairs: &[EncodedPair],
    tgt_vocab: &Vocabulary,
    decode: &DecodeConfig,
    threads: usize,
) -> Result<Evaluation> {
    let ppl = corpus_perplexity(model, pairs, 32)?;
    let sources: Vec<Vec<usize>> = pairs.iter().map(|p| p.source_tokens().to_vec()).collect();
    let decoded = translate_all(model, &sources, decode, threads)?;
    let translations: Vec<Vec<String>> = decoded
        .iter()
        .map(|nbest| {
            tgt_vocab
                .decode(&nbest[0].tokens)
                .into_iter()
                .map(str::to_owned)
                .collect()
        })
        .collect();
    let references: Vec<Vec<String>> = pairs.iter().map(|p| p.reference.clone()).collect();
    let bleu = corpus_bleu(&translations, &references, Brevity::Ratio)?;
    Ok(Evaluation {
        perplexity: ppl,
        bleu,
        translations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn uniform_perplexity_is_vocab_size() {
        let lp = vec![((0.1f64).ln(), true); 7];
        assert!((perplexity(&lp).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn perfect_model_perplexity_is_one() {
        assert_eq!(perplexity(&[(0.0, true), (0.0, true)]).unwrap(), 1.0);
    }

    #[test]
    fn hand_perplexity() {
        let p = perplexity(&[(-1.0, true), (-3.0, true), (-50.0, false)]).unwrap();
        assert!((p - 2f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn perplexity_contract() {
        assert!(perplexity(&[(-1.0, false)]).is_err());
        assert!(perplexity(&[(0.5, true)]).is_err());
    }

    #[test]
    fn identity_scores_one() {
        let c = vec![toks("the cat sat on the mat"), toks("a b")];
        let r = c.clone();
        let rep = corpus_bleu(&c, &r, Brevity::Ratio).unwrap();
        assert_eq!(rep.score, 1.0);
        assert_eq!(rep.precisions, [1.0; 4]);
    }

    #[test]
    fn repeated_word_is_clipped() {
        let rep = corpus_bleu(&[toks("the the the the")], &[toks("the cat sat down")], Brevity::Ratio).unwrap();
        assert_eq!(rep.precisions[0], 0.25);
        assert_eq!(rep.precisions[1], 0.0);
        assert_eq!(rep.score, 0.0);
    }

    #[test]
    fn half_length_halves_the_score() {
        let rep = corpus_bleu(&[toks("a b c d")], &[toks("a b c d e f g h")], Brevity::Ratio).unwrap();
        assert_eq!(rep.precisions, [1.0; 4]);
        assert_eq!(rep.brevity, 0.5);
        assert_eq!(rep.score, 0.5);
    }

    #[test]
    fn brevity_variants_agree_unless_short() {
        assert_eq!(Brevity::Ratio.factor(5, 5), Brevity::Exponential.factor(5, 5));
        assert_eq!(Brevity::Ratio.factor(9, 5), Brevity::Exponential.factor(9, 5));
        assert_ne!(Brevity::Ratio.factor(4, 5), Brevity::Exponential.factor(4, 5));
        assert!((Brevity::Exponential.factor(4, 8) - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn mismatched_or_empty_corpora() {
        let empty: Vec<Vec<&str>> = vec![];
        assert!(matches!(
            corpus_bleu(&empty, &empty, Brevity::Ratio),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            corpus_bleu(&[toks("a")], &empty, Brevity::Ratio),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn report_invariant_holds() {
        let rep = corpus_bleu(
            &[toks("the cat sat on a mat today"), toks("x y z w")],
            &[toks("the cat sat on the mat"), toks("x y z w v")],
            Brevity::Ratio,
        )
        .unwrap();
        let expected = rep.brevity * rep.precisions.iter().product::<f64>().powf(0.25);
        assert_eq!(rep.score, expected);
        assert!(rep.precisions.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    fn corpus() -> impl Strategy<Value = Vec<(Vec<u8>, Vec<u8>)>> {
        proptest::collection::vec(
            (
                proptest::collection::vec(0u8..5, 1..9),
                proptest::collection::vec(0u8..5, 1..9),
            ),
            1..6,
        )
    }

    proptest! {
        #[test]
        fn bleu_is_permutation_invariant(pairs in corpus(), rot in 0usize..6) {
            let (c, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let a = corpus_bleu(&c, &r, Brevity::Ratio).unwrap();
            let k = rot % pairs.len();
            let mut shifted = pairs.clone();
            shifted.rotate_left(k);
            let (c2, r2): (Vec<_>, Vec<_>) = shifted.into_iter().unzip();
            let b = corpus_bleu(&c2, &r2, Brevity::Ratio).unwrap();
            prop_assert_eq!(a.matches, b.matches);
            prop_assert!((a.score - b.score).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&a.score));
        }

        #[test]
        fn bleu_is_one_only_for_exact_match(refs in proptest::collection::vec(proptest::collection::vec(0u8..5, 1..9), 1..5), line in 0usize..5, pos in 0usize..9, delta in 1u8..5) {
            let rep = corpus_bleu(&refs, &refs, Brevity::Ratio).unwrap();
            prop_assert_eq!(rep.score, 1.0);
            let mut cands = refs.clone();
            let l = line % cands.len();
            let p = pos % cands[l].len();
            cands[l][p] = (cands[l][p] + delta) % 5;
            let rep = corpus_bleu(&cands, &refs, Brevity::Ratio).unwrap();
            prop_assert!(rep.score < 1.0);
            let rep = corpus_bleu(&refs, &cands, Brevity::Ratio).unwrap();
            prop_assert!(rep.score < 1.0);
        }

        #[test]
        fn clipping_caps_unigram_matches(reference in proptest::collection::vec(0u8..4, 1..8), word in 0u8..4, extra in 1usize..6) {
            let mut cand = reference.clone();
            let base = corpus_bleu(std::slice::from_ref(&cand), std::slice::from_ref(&reference), Brevity::Ratio).unwrap();
            cand.extend(std::iter::repeat_n(word, extra));
            let dup = corpus_bleu(&[cand], std::slice::from_ref(&reference), Brevity::Ratio).unwrap();
            prop_assert_eq!(dup.matches[0], base.matches[0]);
            prop_assert!(dup.precisions[0] <= base.precisions[0]);
        }

        #[test]
        fn perplexity_ignores_padding_layout(lps in proptest::collection::vec(-5.0f64..0.0, 1..20), pads in proptest::collection::vec(0usize..20, 0..10)) {
            let plain: Vec<(f64, bool)> = lps.iter().map(|&l| (l, true)).collect();
            let mut padded = plain.clone();
            for &p in &pads {
                let at = p % (padded.len() + 1);
                padded.insert(at, (-100.0, false));
            }
            let mut reversed = plain.clone();
            reversed.reverse();
            let a = perplexity(&plain).unwrap();
            prop_assert!((a - perplexity(&padded).unwrap()).abs() < 1e-9 * a);
            prop_assert!((a - perplexity(&reversed).unwrap()).abs() < 1e-9 * a);
        }
    }
}
