#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rhnmt::data::{encode_corpus, EncodedPair, VocabOptions, Vocabulary, EOS};
use rhnmt::decode::StepModel;
use rhnmt::model::ModelConfig;
use rhnmt::rhn::RhnCellConfig;
use rhnmt::train::TrainingConfig;
use rhnmt::{Graph, ParamStore, Result, Tensor, Var};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Element `(i, j)` of a row-major parameter found by name.
fn entry(store: &ParamStore, name: &str, i: usize, j: usize) -> f64 {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let t = store.value(id);
    let cols = t.len() / t.shape()[0];
    t.data()[i * cols + j]
}

fn bias(store: &ParamStore, name: &str, j: usize) -> f64 {
    store.value(store.find(name).unwrap()).data()[j]
}

/// One RHN time step for a single example, written with plain loops:
///
/// h = tanh(x·W_H·[l=1] + s·R_H + b_H), t = σ(x·W_T·[l=1] + s·R_T + b_T),
/// c = σ(x·W_C·[l=1] + s·R_C + b_C) or 1 − t, s ← h·t + s·c.
pub fn scalar_rhn_step(store: &ParamStore, prefix: &str, cfg: &RhnCellConfig, x: &[f64], s0: &[f64]) -> Vec<f64> {
    let (m, n) = (cfg.input_size, cfg.hidden_size);
    let mut s = s0.to_vec();
    for l in 0..cfg.depth {
        let mut next = vec![0.0; n];
        for j in 0..n {
            let gate = |w: &str, r: &str, b: &str| {
                let mut acc = bias(store, &format!("{prefix}.l{l}.{b}"), j);
                for (i, si) in s.iter().enumerate() {
                    acc += si * entry(store, &format!("{prefix}.l{l}.{r}"), i, j);
                }
                if l == 0 {
                    for (i, xi) in x.iter().enumerate().take(m) {
                        acc += xi * entry(store, &format!("{prefix}.{w}"), i, j);
                    }
                }
                acc
            };
            let h = gate("w_h", "r_h", "b_h").tanh();
            let t = sigmoid(gate("w_t", "r_t", "b_t"));
            let c = if cfg.coupled_carry {
                1.0 - t
            } else {
                sigmoid(gate("w_c", "r_c", "b_c"))
            };
            next[j] = h * t + s[j] * c;
        }
        s = next;
    }
    s
}

/// Randomizes every parameter, biases included, to `U(-bound, bound)`.
pub fn randomize(store: &mut ParamStore, bound: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v = rng.random_range(-bound..bound);
        }
    }
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

fn random_sentence(words: &[String], min: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let len = rng.random_range(min..=max);
    (0..len)
        .map(|_| words[rng.random_range(0..words.len())].clone())
        .collect()
}

/// 50 copy pairs over 8 words: a vocabulary of 12 with the reserved tokens.
pub fn copy_corpus(seed: u64) -> (Vocabulary, Vec<EncodedPair>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..8).map(|i| format!("w{i}")).collect();
    let lines: Vec<String> = (0..50)
        .map(|_| random_sentence(&words, 3, 6, &mut rng).join(" "))
        .collect();
    let vocab = Vocabulary::build(lines.iter().map(String::as_str), &VocabOptions::default()).unwrap();
    let pairs: Vec<(&String, &String)> = lines.iter().map(|l| (l, l)).collect();
    let encoded = encode_corpus(&pairs, &vocab, &vocab, 100);
    (vocab, encoded)
}

pub fn copy_model_config(vocab: &Vocabulary, beta: f64) -> ModelConfig {
    ModelConfig {
        hidden: 32,
        depth: 2,
        layers: 1,
        src_vocab_size: vocab.len(),
        tgt_vocab_size: vocab.len(),
        coupled_carry: false,
        dropout: 0.0,
        beta,
    }
}

/// The default recipe with dropout off, capped at 300 updates.
pub fn copy_training(beta: f64) -> TrainingConfig {
    TrainingConfig {
        dropout: 0.0,
        beta,
        epochs: 1000,
        max_steps: Some(300),
        ..TrainingConfig::default()
    }
}

pub struct ToyCorpus {
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub pairs: Vec<EncodedPair>,
    pub lines: Vec<(String, String)>,
}

/// A synthetic language pair: each of 20 source words has a fixed target
/// word, adjacent word pairs swap order, and sentences have 3 to 8 words.
pub fn toy_corpus(size: usize, seed: u64) -> ToyCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..20).map(|i| format!("s{i}")).collect();
    let lexicon: HashMap<&str, String> = words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), format!("t{}", (i * 7 + 3) % 20)))
        .collect();
    let lines: Vec<(String, String)> = (0..size)
        .map(|_| {
            let src = random_sentence(&words, 3, 8, &mut rng);
            let mut tgt: Vec<String> = src.iter().map(|w| lexicon[w.as_str()].clone()).collect();
            for pair in tgt.chunks_mut(2) {
                pair.reverse();
            }
            (src.join(" "), tgt.join(" "))
        })
        .collect();
    let opts = VocabOptions::default();
    let src_vocab = Vocabulary::build(lines.iter().map(|(s, _)| s.as_str()), &opts).unwrap();
    let tgt_vocab = Vocabulary::build(lines.iter().map(|(_, t)| t.as_str()), &opts).unwrap();
    let pairs = encode_corpus(&lines, &src_vocab, &tgt_vocab, 100);
    ToyCorpus {
        src_vocab,
        tgt_vocab,
        pairs,
        lines,
    }
}

/// A next-token model given by explicit tables keyed on the emitted
/// prefix, with a fallback distribution for unlisted prefixes.
pub struct TableModel {
    pub vocab: usize,
    pub tables: HashMap<Vec<usize>, Vec<f64>>,
    pub fallback: Vec<f64>,
}

impl TableModel {
    fn log_probs(&self, prefix: &[usize]) -> Vec<f64> {
        let p = self.tables.get(prefix).unwrap_or(&self.fallback);
        p.iter().map(|v| v.ln()).collect()
    }
}

/// Tokens emitted so far, given a state that recorded every fed `prev`
/// (the first being `<sos>`).
pub fn emitted(state: &[usize]) -> &[usize] {
    &state[state.len().min(1)..]
}

/// A model whose distribution depends on the emitted prefix only through
/// `TableModel::tables`, wrapped so the state is the emitted prefix.
pub struct PrefixModel(pub TableModel);

impl StepModel for PrefixModel {
    type State = Vec<usize>;

    fn vocab_size(&self) -> usize {
        self.0.vocab
    }

    fn initial_state(&self) -> Self::State {
        Vec::new()
    }

    fn step(&self, prev: &[usize], states: &[Self::State]) -> Result<rhnmt::decode::StepOutput<Self::State>> {
        let mut lps = Vec::with_capacity(states.len());
        let mut next = Vec::with_capacity(states.len());
        for (s, &p) in states.iter().zip(prev) {
            let mut fed = s.clone();
            fed.push(p);
            lps.push(self.0.log_probs(emitted(&fed)));
            next.push(fed);
        }
        Ok((lps, next))
    }
}

/// Vocabulary of 6: ids 0..=2 are reserved and nearly impossible, 3 is
/// `<eos>`, 4 and 5 are words `a` and `b`. Greedy takes `a` first but the
/// best normalized finished sequence is `b <eos>`.
pub fn hand_beam_model() -> PrefixModel {
    let tiny = 1e-4;
    let dist = |eos: f64, a: f64, b: f64| {
        let rest = 1.0 - 3.0 * tiny;
        let z = eos + a + b;
        vec![tiny, tiny, tiny, rest * eos / z, rest * a / z, rest * b / z]
    };
    let mut tables = HashMap::new();
    tables.insert(vec![], dist(0.1, 0.5, 0.4));
    tables.insert(vec![4], dist(0.3, 0.35, 0.35));
    tables.insert(vec![5], dist(0.9, 0.05, 0.05));
    tables.insert(vec![4, 4], dist(0.6, 0.2, 0.2));
    tables.insert(vec![4, 5], dist(0.2, 0.1, 0.7));
    tables.insert(vec![5, 4], dist(0.5, 0.25, 0.25));
    tables.insert(vec![5, 5], dist(0.4, 0.3, 0.3));
    PrefixModel(TableModel {
        vocab: 6,
        tables,
        fallback: dist(0.5, 0.25, 0.25),
    })
}

/// Best finished sequence within `max_len` steps by `log_prob / steps`,
/// ties to the lexicographically smaller sequence, by enumerating every
/// sequence. Returns `(tokens, log_prob, score)`.
pub fn brute_force_best<M: StepModel>(model: &M, max_len: usize) -> (Vec<usize>, f64, f64) {
    let mut best: Option<(Vec<usize>, f64, f64)> = None;
    // (emitted tokens, log_prob, state)
    let mut frontier = vec![(Vec::<usize>::new(), 0.0, model.initial_state())];
    for _ in 0..max_len {
        let mut next_frontier = Vec::new();
        for (tokens, lp, state) in frontier {
            let prev = tokens.last().copied().unwrap_or(rhnmt::data::SOS);
            let (rows, states) = model.step(&[prev], &[state]).unwrap();
            for (tok, &l) in rows[0].iter().enumerate() {
                let total = lp + l;
                if tok == EOS {
                    let score = total / (tokens.len() + 1) as f64;
                    let better = match &best {
                        None => true,
                        Some((bt, _, bs)) => score > *bs || (score == *bs && tokens < *bt),
                    };
                    if better {
                        best = Some((tokens.clone(), total, score));
                    }
                } else {
                    let mut t = tokens.clone();
                    t.push(tok);
                    next_frontier.push((t, total, states[0].clone()));
                }
            }
        }
        frontier = next_frontier;
    }
    best.expect("some sequence finishes")
}

pub type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var> + Sync>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    /// Builds a scalar from the inputs; non-scalar op outputs are reduced
    /// against fixed random weights so every output entry matters.
    pub f: OpFn,
    pub dropout_seed: Option<u64>,
}

fn reduce(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(v).to_vec();
    let w = g.constant(Tensor::uniform(&shape, 1.0, &mut rng));
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

fn case(name: &'static str, inputs: Vec<Tensor>, f: OpFn) -> OpCase {
    OpCase {
        name,
        inputs,
        f,
        dropout_seed: None,
    }
}

/// One gradient-check case per differentiable graph operation.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize]| random_tensor(shape, &mut rng);
    let mut cases = vec![
        case(
            "matmul",
            vec![r(&[2, 3]), r(&[3, 4])],
            Box::new(|g, v| {
                let y = g.matmul(v[0], v[1])?;
                reduce(g, y, 1)
            }),
        ),
        case(
            "add",
            vec![r(&[2, 3]), r(&[2, 3])],
            Box::new(|g, v| {
                let y = g.add(v[0], v[1])?;
                reduce(g, y, 2)
            }),
        ),
        case(
            "sub",
            vec![r(&[2, 3]), r(&[2, 3])],
            Box::new(|g, v| {
                let y = g.sub(v[0], v[1])?;
                reduce(g, y, 3)
            }),
        ),
        case(
            "mul",
            vec![r(&[2, 3]), r(&[2, 3])],
            Box::new(|g, v| {
                let y = g.mul(v[0], v[1])?;
                reduce(g, y, 4)
            }),
        ),
        case(
            "scale",
            vec![r(&[3, 2])],
            Box::new(|g, v| {
                let y = g.scale(v[0], -1.7);
                reduce(g, y, 5)
            }),
        ),
        case(
            "one_minus",
            vec![r(&[3, 2])],
            Box::new(|g, v| {
                let y = g.one_minus(v[0]);
                reduce(g, y, 6)
            }),
        ),
        case(
            "tanh",
            vec![r(&[2, 4])],
            Box::new(|g, v| {
                let y = g.tanh(v[0]);
                reduce(g, y, 7)
            }),
        ),
        case(
            "sigmoid",
            vec![r(&[2, 4])],
            Box::new(|g, v| {
                let y = g.sigmoid(v[0]);
                reduce(g, y, 8)
            }),
        ),
        case(
            "add_bias",
            vec![r(&[3, 4]), r(&[4])],
            Box::new(|g, v| {
                let y = g.add_bias(v[0], v[1])?;
                reduce(g, y, 9)
            }),
        ),
        case(
            "mul_const",
            vec![r(&[2, 3])],
            Box::new(|g, v| {
                let y = g.mul_const(v[0], vec![0.5, -2.0, 0.0, 1.5, 3.0, -0.25])?;
                reduce(g, y, 10)
            }),
        ),
        case(
            "gather_rows",
            vec![r(&[5, 3])],
            Box::new(|g, v| {
                let y = g.gather_rows(v[0], &[4, 0, 4, 2])?;
                reduce(g, y, 11)
            }),
        ),
        case(
            "concat_cols",
            vec![r(&[2, 3]), r(&[2, 2])],
            Box::new(|g, v| {
                let y = g.concat_cols(v[0], v[1])?;
                reduce(g, y, 12)
            }),
        ),
        case(
            "concat_rows",
            vec![r(&[2, 3]), r(&[1, 3]), r(&[3, 3])],
            Box::new(|g, v| {
                let y = g.concat_rows(v)?;
                reduce(g, y, 13)
            }),
        ),
        case(
            "stack",
            vec![r(&[2, 3]), r(&[2, 3])],
            Box::new(|g, v| {
                let y = g.stack(v)?;
                reduce(g, y, 14)
            }),
        ),
        case(
            "attn_scores",
            vec![r(&[2, 3]), r(&[4, 2, 3])],
            Box::new(|g, v| {
                let y = g.attn_scores(v[0], v[1])?;
                reduce(g, y, 15)
            }),
        ),
        case(
            "masked_softmax",
            vec![r(&[2, 4])],
            Box::new(|g, v| {
                let y = g.masked_softmax(v[0], &[true, true, false, true, true, false, false, true])?;
                reduce(g, y, 16)
            }),
        ),
        case(
            "weighted_sum",
            vec![r(&[2, 4]), r(&[4, 2, 3])],
            Box::new(|g, v| {
                let y = g.weighted_sum(v[0], v[1])?;
                reduce(g, y, 17)
            }),
        ),
        case(
            "softmax_cross_entropy",
            vec![r(&[4, 5])],
            Box::new(|g, v| g.softmax_cross_entropy(v[0], &[1, 4, 0, 2], &[true, true, false, true])),
        ),
        case("sum", vec![r(&[3, 3])], Box::new(|g, v| Ok(g.sum(v[0])))),
    ];
    cases.push(OpCase {
        name: "dropout",
        inputs: vec![r(&[3, 4])],
        f: Box::new(|g, v| {
            let y = g.dropout(v[0])?;
            reduce(g, y, 18)
        }),
        dropout_seed: Some(99),
    });
    cases
}

pub fn run_op_case(c: &OpCase) -> Result<rhnmt::gradcheck::GradCheckReport> {
    match c.dropout_seed {
        Some(seed) => rhnmt::gradcheck::check_inputs_in(|| Graph::with_dropout(0.3, seed), &c.inputs, &c.f),
        None => rhnmt::gradcheck::check_inputs(&c.inputs, &c.f),
    }
}

/// A pair of random word ids (4 and up) framed as the data pipeline does.
pub fn random_pair(rng: &mut ChaCha8Rng, src_vocab: usize, tgt_vocab: usize, max_len: usize) -> EncodedPair {
    let mut words = |v: usize| -> Vec<usize> {
        (0..rng.random_range(1..=max_len))
            .map(|_| rng.random_range(4..v))
            .collect()
    };
    let src = words(src_vocab);
    let tgt = words(tgt_vocab);
    EncodedPair {
        src: src.iter().copied().chain([EOS]).collect(),
        tgt_in: [rhnmt::data::SOS].into_iter().chain(tgt.iter().copied()).collect(),
        tgt_out: tgt.iter().copied().chain([EOS]).collect(),
        reference: tgt.iter().map(|t| format!("w{t}")).collect(),
    }
}

pub fn tiny_config(hidden: usize, depth: usize, layers: usize, coupled_carry: bool, beta: f64) -> ModelConfig {
    ModelConfig {
        hidden,
        depth,
        layers,
        src_vocab_size: 9,
        tgt_vocab_size: 11,
        coupled_carry,
        dropout: 0.0,
        beta,
    }
}
