//! Parallel corpora, vocabularies and padded batches.
//!
//! Input text is assumed to be tokenized already: tokens are separated by
//! whitespace and otherwise treated as opaque UTF-8 strings.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<unk>", "<sos>", "<eos>"];

/// Sentences longer than this (in tokens, before framing) are skipped.
pub const DEFAULT_MAX_SENTENCE_TOKENS: usize = 100;

#[derive(Clone, Debug, Default)]
pub struct VocabOptions {
    /// Total size including the four reserved tokens.
    pub max_size: Option<usize>,
    /// Tokens seen fewer times are left out.
    pub min_freq: usize,
}

/// Bijection between tokens and ids with `<pad> <unk> <sos> <eos>` fixed at
/// ids 0..=3. Unlisted tokens look up as `<unk>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Ranks tokens by frequency, ties broken lexicographically.
    pub fn build<'a, I>(lines: I, options: &VocabOptions) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut saw_line = false;
        for line in lines {
            saw_line = true;
            for tok in line.split_whitespace() {
                if !SPECIAL_TOKENS.contains(&tok) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        if !saw_line {
            return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= options.min_freq.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        if let Some(max) = options.max_size {
            ranked.truncate(max.saturating_sub(SPECIAL_TOKENS.len()));
        }
        let tokens = SPECIAL_TOKENS
            .iter()
            .copied()
            .chain(ranked.into_iter().map(|(t, _)| t))
            .map(str::to_owned)
            .collect();
        Self::from_tokens(tokens)
    }

    /// Takes an explicit id order; the reserved tokens must come first.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len() || tokens.iter().zip(SPECIAL_TOKENS).any(|(a, b)| a != b) {
            return Err(Error::Data(format!("vocabulary must start with {SPECIAL_TOKENS:?}")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!("invalid vocabulary token {t:?} at id {i}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// One token per line; line number minus one is the id.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_owned).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, line: &str) -> Vec<usize> {
        line.split_whitespace().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(SPECIAL_TOKENS[UNK]))
            .collect()
    }

    /// SHA-256 over the newline-joined token list, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// One sentence pair as model ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPair {
    /// Source ids followed by `<eos>`.
    pub src: Vec<usize>,
    /// `<sos>` followed by target ids.
    pub tgt_in: Vec<usize>,
    /// Target ids followed by `<eos>`.
    pub tgt_out: Vec<usize>,
    /// The target tokens as written, the reference for BLEU.
    pub reference: Vec<String>,
}

impl EncodedPair {
    /// Source ids without the trailing `<eos>`.
    pub fn source_tokens(&self) -> &[usize] {
        &self.src[..self.src.len() - 1]
    }
}

/// Frames a sentence pair. Returns `None` (and logs) if either side has no
/// tokens.
pub fn encode_pair(src: &str, tgt: &str, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> Option<EncodedPair> {
    let s = src_vocab.encode(src);
    let t = tgt_vocab.encode(tgt);
    if s.is_empty() || t.is_empty() {
        log::warn!("skipping sentence pair with an empty side: {src:?} ||| {tgt:?}");
        return None;
    }
    let mut src_ids = s;
    src_ids.push(EOS);
    let mut tgt_in = Vec::with_capacity(t.len() + 1);
    tgt_in.push(SOS);
    tgt_in.extend_from_slice(&t);
    let mut tgt_out = t;
    tgt_out.push(EOS);
    Some(EncodedPair {
        src: src_ids,
        tgt_in,
        tgt_out,
        reference: tgt.split_whitespace().map(str::to_owned).collect(),
    })
}

/// Encodes a corpus, skipping empty pairs and pairs with a side longer than
/// `max_tokens`.
pub fn encode_corpus<S: AsRef<str>, T: AsRef<str>>(
    pairs: &[(S, T)],
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    max_tokens: usize,
) -> Vec<EncodedPair> {
    let mut out = Vec::with_capacity(pairs.len());
    for (i, (s, t)) in pairs.iter().enumerate() {
        let Some(p) = encode_pair(s.as_ref(), t.as_ref(), src_vocab, tgt_vocab) else {
            continue;
        };
        if p.src.len() - 1 > max_tokens || p.tgt_out.len() - 1 > max_tokens {
            log::warn!("skipping pair {i}: longer than {max_tokens} tokens");
            continue;
        }
        out.push(p);
    }
    out
}

pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

pub fn write_lines<S: AsRef<str>>(path: impl AsRef<Path>, lines: &[S]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for l in lines {
        writeln!(f, "{}", l.as_ref()).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

/// Reads two line-aligned files.
pub fn read_parallel(src: impl AsRef<Path>, tgt: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let s = read_lines(&src)?;
    let t = read_lines(&tgt)?;
    if s.len() != t.len() {
        return Err(Error::Data(format!(
            "{} has {} lines but {} has {}",
            src.as_ref().display(),
            s.len(),
            tgt.as_ref().display(),
            t.len()
        )));
    }
    Ok(s.into_iter().zip(t).collect())
}

/// A padded, masked batch. All matrices are `batch × len`, row-major as
/// nested vectors; masks are true exactly on real tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedBatch {
    pub src: Vec<Vec<usize>>,
    pub src_mask: Vec<Vec<bool>>,
    pub tgt_in: Vec<Vec<usize>>,
    pub tgt_out: Vec<Vec<usize>>,
    pub tgt_mask: Vec<Vec<bool>>,
    /// Position of each row's pair in the input to [`make_batches`].
    pub indices: Vec<usize>,
}

fn pad(rows: &[&[usize]]) -> (Vec<Vec<usize>>, Vec<Vec<bool>>) {
    let len = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    rows.iter()
        .map(|r| {
            let mut ids = r.to_vec();
            ids.resize(len, PAD);
            let mask = (0..len).map(|i| i < r.len()).collect();
            (ids, mask)
        })
        .unzip()
}

impl PaddedBatch {
    pub fn from_pairs(pairs: &[&EncodedPair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let (src, src_mask) = pad(&pairs.iter().map(|p| p.src.as_slice()).collect::<Vec<_>>());
        let (tgt_in, tgt_mask) = pad(&pairs.iter().map(|p| p.tgt_in.as_slice()).collect::<Vec<_>>());
        let (tgt_out, _) = pad(&pairs.iter().map(|p| p.tgt_out.as_slice()).collect::<Vec<_>>());
        Ok(PaddedBatch {
            src,
            src_mask,
            tgt_in,
            tgt_out,
            tgt_mask,
            indices: (0..pairs.len()).collect(),
        })
    }

    pub fn single(pair: &EncodedPair) -> Self {
        Self::from_pairs(&[pair]).expect("one pair")
    }

    pub fn batch_size(&self) -> usize {
        self.src.len()
    }

    pub fn src_len(&self) -> usize {
        self.src[0].len()
    }

    pub fn tgt_len(&self) -> usize {
        self.tgt_in[0].len()
    }

    /// Count of real target tokens (the predictions scored).
    pub fn target_tokens(&self) -> usize {
        self.tgt_mask.iter().flatten().filter(|&&m| m).count()
    }
}

/// Groups pairs into padded batches.
///
/// With `bucketing`, pairs are shuffled, stably sorted by source length and
/// cut into consecutive batches, so similar lengths share a batch; the batch
/// order is shuffled afterwards. Without it, shuffled pairs are cut
/// directly. All randomness comes from `seed`.
pub fn make_batches(pairs: &[EncodedPair], batch_size: usize, bucketing: bool, seed: u64) -> Vec<PaddedBatch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    if bucketing {
        order.sort_by_key(|&i| pairs[i].src.len());
    }
    let mut batches: Vec<PaddedBatch> = order
        .chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&EncodedPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let mut b = PaddedBatch::from_pairs(&refs).expect("non-empty chunk");
            b.indices = chunk.to_vec();
            b
        })
        .collect();
    if bucketing {
        batches.shuffle(&mut rng);
    }
    batches
}
