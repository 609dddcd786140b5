//! Greedy and beam-search decoding.
//!
//! Search is written against [`StepModel`], a left-to-right conditional
//! distribution over a fixed vocabulary, so it can be exercised on
//! hand-written probability tables as well as on [`NmtModel`]. Decoding never
//! touches the reconstructor.

use std::cmp::Ordering;

use crate::data::{EOS, SOS};
use crate::error::{Error, Result};
use crate::model::{EncodedSource, NmtModel};
use crate::tensor::Tensor;

/// Environment variable capping decode/evaluation threads.
pub const THREADS_ENV: &str = "RHNMT_THREADS";

/// Per-hypothesis next-token log-probabilities and successor states.
pub type StepOutput<S> = (Vec<Vec<f64>>, Vec<S>);

pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    fn initial_state(&self) -> Self::State;

    /// Natural-log next-token distributions, one row per hypothesis, for
    /// hypotheses whose last token is `prev[i]`, and their next states.
    fn step(&self, prev: &[usize], states: &[Self::State]) -> Result<StepOutput<Self::State>>;
}

/// [`NmtModel`] conditioned on one source sentence.
pub struct Translator<'m> {
    model: &'m NmtModel,
    source: EncodedSource,
}

impl<'m> Translator<'m> {
    /// `src_tokens` are the source ids without `<eos>`.
    pub fn new(model: &'m NmtModel, src_tokens: &[usize]) -> Result<Self> {
        Ok(Translator {
            model,
            source: model.encode_source(src_tokens)?,
        })
    }
}

impl StepModel for Translator<'_> {
    type State = Vec<Tensor>;

    fn vocab_size(&self) -> usize {
        self.model.config().tgt_vocab_size
    }

    fn initial_state(&self) -> Self::State {
        self.source.initial_decoder_state()
    }

    fn step(&self, prev: &[usize], states: &[Self::State]) -> Result<StepOutput<Self::State>> {
        let (lp, next) = self.model.step_hypotheses(&self.source, prev, states)?;
        let rows = (0..lp.rows()).map(|r| lp.row(r).to_vec()).collect();
        Ok((rows, next))
    }
}

/// A decoded sequence, `<sos>`/`<eos>` excluded.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    /// Sum of natural-log probabilities of every emitted token, `<eos>`
    /// included.
    pub log_prob: f64,
    /// Length-normalized score used for final ranking.
    pub score: f64,
    /// True when `<eos>` was emitted; false when cut at `max_len`.
    pub finished: bool,
}

impl Decoded {
    pub fn truncated(&self) -> bool {
        !self.finished
    }

    /// Number of decoding steps taken, `<eos>` included.
    pub fn steps(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }
}

fn normalized(log_prob: f64, steps: usize) -> f64 {
    log_prob / steps.max(1) as f64
}

/// Default step cap for a source of `src_len` tokens.
pub fn default_max_len(src_len: usize) -> usize {
    2 * src_len + 10
}

/// Repeatedly takes the most probable token (lowest id on ties) until
/// `<eos>` or `max_len` steps.
pub fn greedy_decode<M: StepModel>(model: &M, max_len: usize) -> Result<Decoded> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let mut state = model.initial_state();
    let mut prev = SOS;
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..max_len {
        let (lp, mut next) = model.step(&[prev], &[state])?;
        let row = &lp[0];
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        log_prob += row[best];
        if best == EOS {
            let steps = tokens.len() + 1;
            return Ok(Decoded {
                tokens,
                log_prob,
                score: normalized(log_prob, steps),
                finished: true,
            });
        }
        tokens.push(best);
        prev = best;
        state = next.swap_remove(0);
    }
    let steps = tokens.len();
    Ok(Decoded {
        tokens,
        log_prob,
        score: normalized(log_prob, steps),
        finished: false,
    })
}

/// A partial hypothesis in the beam.
#[derive(Clone, Debug)]
pub struct Hypothesis<S> {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub state: S,
    pub finished: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BeamConfig {
    pub beam_width: usize,
    pub max_len: usize,
}

/// Ranks by descending score, then by lexicographically smaller tokens.
fn rank(a_score: f64, a_tokens: &[usize], b_score: f64, b_tokens: &[usize]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_tokens.cmp(b_tokens))
}

/// Beam search.
///
/// Each step expands every live hypothesis with every vocabulary entry and
/// keeps the `beam_width` best by accumulated log-probability. Kept
/// candidates ending in `<eos>` move to the finished set; search stops once
/// `beam_width` hypotheses have finished or after `max_len` steps. Finished
/// hypotheses are ranked by `log_prob / steps`; if none finished, the live
/// beam is ranked instead. Returns at most `beam_width` results, best first.
pub fn beam_decode<M: StepModel>(model: &M, config: BeamConfig) -> Result<Vec<Decoded>> {
    let BeamConfig { beam_width, max_len } = config;
    if beam_width == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let vocab = model.vocab_size();
    let mut beam = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: model.initial_state(),
        finished: false,
    }];
    let mut finished: Vec<Hypothesis<()>> = Vec::new();

    for _ in 0..max_len {
        if beam.is_empty() || finished.len() >= beam_width {
            break;
        }
        let prev: Vec<usize> = beam.iter().map(|h| h.tokens.last().copied().unwrap_or(SOS)).collect();
        let states: Vec<M::State> = beam.iter().map(|h| h.state.clone()).collect();
        let (log_probs, next_states) = model.step(&prev, &states)?;

        // (score, hypothesis index, token)
        let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(beam.len() * vocab);
        for (i, (h, row)) in beam.iter().zip(&log_probs).enumerate() {
            for (tok, &lp) in row.iter().enumerate() {
                candidates.push((h.log_prob + lp, i, tok));
            }
        }
        // all live hypotheses have equal length, so comparing (prefix, token)
        // is the lexicographic order of the extended sequences
        let order = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
            b.0.total_cmp(&a.0)
                .then_with(|| beam[a.1].tokens.cmp(&beam[b.1].tokens))
                .then_with(|| a.2.cmp(&b.2))
        };
        if candidates.len() > beam_width {
            candidates.select_nth_unstable_by(beam_width - 1, order);
            candidates.truncate(beam_width);
        }
        candidates.sort_by(order);

        let mut next_beam = Vec::with_capacity(candidates.len());
        for (score, i, tok) in candidates {
            if tok == EOS {
                finished.push(Hypothesis {
                    tokens: beam[i].tokens.clone(),
                    log_prob: score,
                    state: (),
                    finished: true,
                });
            } else {
                let mut tokens = beam[i].tokens.clone();
                tokens.push(tok);
                next_beam.push(Hypothesis {
                    tokens,
                    log_prob: score,
                    state: next_states[i].clone(),
                    finished: false,
                });
            }
        }
        beam = next_beam;
    }

    let mut pool: Vec<Decoded> = if finished.is_empty() {
        beam.into_iter()
            .map(|h| Decoded {
                score: normalized(h.log_prob, h.tokens.len()),
                tokens: h.tokens,
                log_prob: h.log_prob,
                finished: false,
            })
            .collect()
    } else {
        finished
            .into_iter()
            .map(|h| Decoded {
                score: normalized(h.log_prob, h.tokens.len() + 1),
                tokens: h.tokens,
                log_prob: h.log_prob,
                finished: true,
            })
            .collect()
    };
    pool.sort_by(|a, b| rank(a.score, &a.tokens, b.score, &b.tokens));
    pool.truncate(beam_width);
    Ok(pool)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeConfig {
    /// 1 selects greedy search.
    pub beam_width: usize,
    /// Step cap; `None` uses [`default_max_len`] of the source length.
    pub max_len: Option<usize>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_width: 1,
            max_len: None,
        }
    }
}

/// Decodes one sentence; returns the ranked n-best list (a single entry for
/// greedy search).
pub fn translate(model: &NmtModel, src_tokens: &[usize], config: &DecodeConfig) -> Result<Vec<Decoded>> {
    let translator = Translator::new(model, src_tokens)?;
    let max_len = config.max_len.unwrap_or_else(|| default_max_len(src_tokens.len()));
    if config.beam_width == 1 {
        Ok(vec![greedy_decode(&translator, max_len)?])
    } else {
        beam_decode(
            &translator,
            BeamConfig {
                beam_width: config.beam_width,
                max_len,
            },
        )
    }
}

/// Thread count from `RHNMT_THREADS`, else the machine's parallelism.
pub fn thread_limit() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Decodes many sentences over up to `threads` threads; output order
/// matches input order and does not depend on the thread count.
pub fn translate_all(
    model: &NmtModel,
    sources: &[Vec<usize>],
    config: &DecodeConfig,
    threads: usize,
) -> Result<Vec<Vec<Decoded>>> {
    let threads = threads.clamp(1, sources.len().max(1));
    if threads == 1 {
        return sources.iter().map(|s| translate(model, s, config)).collect();
    }
    let chunk = sources.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = sources
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|s| translate(model, s, config))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(sources.len());
        for h in handles {
            out.extend(h.join().expect("decode thread panicked")?);
        }
        Ok(out)
    })
}
