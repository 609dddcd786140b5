//! The attention encoder-decoder translation model.
//!
//! Source tokens are embedded and run through a stack of RHN layers. The
//! decoder is a second RHN stack that starts from the encoder's final state
//! and is fed the previous gold (or predicted) target token; at each step its
//! top state `h_t` attends over the encoder states with a bilinear score
//! `h_t · W_a · h_s`, and the context `c_t` is combined as
//! `h̃_t = tanh([c_t; h_t] · W_c + b_c)` before projecting to the target
//! vocabulary. When `beta > 0` a reconstructor, a third RHN stack with its
//! own attention over the decoder states, is trained to regenerate the
//! source sentence. It is never used for inference.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{PaddedBatch, EOS, SOS};
use crate::error::{Error, Result};
use crate::rhn::{StackedCell, INIT_BOUND};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Embedding entries start uniform in `±√3`, i.e. with unit variance.
/// Every other matrix uses the RHN bound of `±0.08`.
pub const EMBEDDING_INIT_BOUND: f64 = 1.732_050_807_568_877_2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden units per RHN layer; also the embedding width.
    pub hidden: usize,
    /// Recurrence depth: highway micro-layers per time step.
    pub depth: usize,
    /// RHN layers stacked in space.
    pub layers: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub coupled_carry: bool,
    pub dropout: f64,
    /// Weight of the reconstruction loss; 0 builds no reconstructor.
    pub beta: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("depth", self.depth),
            ("layers", self.layers),
            ("src_vocab_size", self.src_vocab_size),
            ("tgt_vocab_size", self.tgt_vocab_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta {} must be finite and >= 0", self.beta)));
        }
        Ok(())
    }

    pub fn has_reconstructor(&self) -> bool {
        self.beta > 0.0
    }
}

/// Bilinear-score attention plus the attentional combiner.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub w_a: ParamId,
    pub w_c: ParamId,
    pub b_c: ParamId,
}

impl AttentionParams {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, n: usize, rng: &mut R) -> Self {
        AttentionParams {
            w_a: store.add(format!("{prefix}.w_a"), Tensor::uniform(&[n, n], INIT_BOUND, rng)),
            w_c: store.add(format!("{prefix}.w_c"), Tensor::uniform(&[2 * n, n], INIT_BOUND, rng)),
            b_c: store.add(format!("{prefix}.b_c"), Tensor::zeros(&[n])),
        }
    }

    fn ids(&self) -> [ParamId; 3] {
        [self.w_a, self.w_c, self.b_c]
    }

    /// Returns `(context, weights)` for a query `h` (`B × n`) over `keys`
    /// (`S × B × n`). `mask` is `B × S` row-major.
    pub fn attend(&self, g: &mut Graph, store: &ParamStore, h: Var, keys: Var, mask: &[bool]) -> Result<(Var, Var)> {
        let w_a = g.param(store, self.w_a);
        let q = g.matmul(h, w_a)?;
        let scores = g.attn_scores(q, keys)?;
        let weights = g.masked_softmax(scores, mask)?;
        let context = g.weighted_sum(weights, keys)?;
        Ok((context, weights))
    }

    /// `tanh([context; h] · W_c + b_c)`
    pub fn combine(&self, g: &mut Graph, store: &ParamStore, context: Var, h: Var) -> Result<Var> {
        let joined = g.concat_cols(context, h)?;
        let w_c = g.param(store, self.w_c);
        let b_c = g.param(store, self.b_c);
        let pre = g.matmul(joined, w_c)?;
        let pre = g.add_bias(pre, b_c)?;
        Ok(g.tanh(pre))
    }
}

#[derive(Clone, Debug)]
pub struct Projection {
    pub w: ParamId,
    pub b: ParamId,
}

impl Projection {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, n: usize, v: usize, rng: &mut R) -> Self {
        Projection {
            w: store.add(format!("{prefix}.w"), Tensor::uniform(&[n, v], INIT_BOUND, rng)),
            b: store.add(format!("{prefix}.b"), Tensor::zeros(&[v])),
        }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }
}

/// Training-only decoder from target hidden states back to the source.
#[derive(Clone, Debug)]
pub struct ReconstructorParams {
    pub cell: StackedCell,
    pub attention: AttentionParams,
    pub output: Projection,
}

impl ReconstructorParams {
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.cell.param_ids();
        ids.extend(self.attention.ids());
        ids.extend([self.output.w, self.output.b]);
        ids
    }
}

/// Encoder states for one batch.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// Top-layer state at every source position (`B × n` each).
    pub states: Vec<Var>,
    /// The same states stacked as `S × B × n`.
    pub keys: Var,
    /// Per-layer state after each row's last real token; the decoder's
    /// initial state.
    pub final_states: Vec<Var>,
    /// `B × S` row-major validity mask.
    pub mask: Vec<bool>,
}

/// Result of a teacher-forced decoder pass.
#[derive(Clone, Debug)]
pub struct TeacherForced {
    /// Batch mean of per-sentence summed cross-entropy.
    pub loss: Var,
    /// Summed cross-entropy over every target token of the batch.
    pub nll_sum: Var,
    /// `(T·B) × V_tgt`, time-major rows.
    pub logits: Var,
    /// Gold ids and mask aligned with `logits` rows.
    pub targets: Vec<usize>,
    pub target_mask: Vec<bool>,
    /// Top-layer decoder state at every target step (`B × n` each).
    pub hidden_states: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Losses {
    pub decoder: Var,
    pub reconstructor: Option<Var>,
    /// `L_d + beta · L_r`, or `L_d` itself without a reconstructor.
    pub total: Var,
    pub nll_sum: Var,
    pub target_tokens: usize,
}

#[derive(Clone, Debug)]
pub struct NmtModel {
    config: ModelConfig,
    params: ParamStore,
    src_embedding: ParamId,
    tgt_embedding: ParamId,
    encoder: StackedCell,
    decoder: StackedCell,
    attention: AttentionParams,
    output: Projection,
    reconstructor: Option<ReconstructorParams>,
}

fn column(rows: &[Vec<usize>], t: usize) -> Vec<usize> {
    rows.iter().map(|r| r[t]).collect()
}

fn flatten_mask(mask: &[Vec<bool>]) -> Vec<bool> {
    mask.iter().flatten().copied().collect()
}

impl NmtModel {
    /// Builds a freshly initialized model; all randomness comes from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let n = config.hidden;
        let src_embedding = params.add(
            "src_embedding",
            Tensor::uniform(&[config.src_vocab_size, n], EMBEDDING_INIT_BOUND, &mut rng),
        );
        let tgt_embedding = params.add(
            "tgt_embedding",
            Tensor::uniform(&[config.tgt_vocab_size, n], EMBEDDING_INIT_BOUND, &mut rng),
        );
        let stack = |params: &mut ParamStore, prefix: &str, rng: &mut ChaCha8Rng| {
            StackedCell::build(
                params,
                prefix,
                n,
                n,
                config.depth,
                config.layers,
                config.coupled_carry,
                rng,
            )
        };
        let encoder = stack(&mut params, "encoder", &mut rng)?;
        let decoder = stack(&mut params, "decoder", &mut rng)?;
        let attention = AttentionParams::new(&mut params, "attention", n, &mut rng);
        let output = Projection::new(&mut params, "output", n, config.tgt_vocab_size, &mut rng);
        let reconstructor = if config.has_reconstructor() {
            Some(ReconstructorParams {
                cell: stack(&mut params, "reconstructor.cell", &mut rng)?,
                attention: AttentionParams::new(&mut params, "reconstructor.attention", n, &mut rng),
                output: Projection::new(&mut params, "reconstructor.output", n, config.src_vocab_size, &mut rng),
            })
        } else {
            None
        };
        Ok(NmtModel {
            config,
            params,
            src_embedding,
            tgt_embedding,
            encoder,
            decoder,
            attention,
            output,
            reconstructor,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn encoder(&self) -> &StackedCell {
        &self.encoder
    }

    pub fn decoder(&self) -> &StackedCell {
        &self.decoder
    }

    pub fn attention(&self) -> &AttentionParams {
        &self.attention
    }

    pub fn reconstructor(&self) -> Option<&ReconstructorParams> {
        self.reconstructor.as_ref()
    }

    pub fn has_reconstructor(&self) -> bool {
        self.reconstructor.is_some()
    }

    /// Total scalar parameters over every tensor present.
    pub fn count_parameters(&self) -> usize {
        self.params.count()
    }

    fn embed(&self, g: &mut Graph, table: ParamId, ids: &[usize]) -> Result<Var> {
        let table = g.param(&self.params, table);
        let e = g.gather_rows(table, ids)?;
        g.dropout(e)
    }

    /// Runs the encoder over a padded `B × S` id matrix.
    pub fn encode(&self, g: &mut Graph, src: &[Vec<usize>], src_mask: &[Vec<bool>]) -> Result<EncoderOutput> {
        let batch = src.len();
        let len = src.first().map_or(0, Vec::len);
        if batch == 0 || len == 0 {
            return Err(Error::Contract("encode needs a non-empty source batch".into()));
        }
        if src.iter().any(|r| r.len() != len) || src_mask.len() != batch {
            return Err(Error::Contract("ragged source batch".into()));
        }
        let xs = (0..len)
            .map(|t| self.embed(g, self.src_embedding, &column(src, t)))
            .collect::<Result<Vec<_>>>()?;
        let n = self.config.hidden;
        let mut layer_states = self.encoder.zero_state(g, batch);
        let mut states = Vec::with_capacity(len);
        for (t, &x) in xs.iter().enumerate() {
            let next = self.encoder.step(g, &self.params, x, &layer_states)?;
            let valid: Vec<bool> = src_mask.iter().map(|m| m[t]).collect();
            layer_states = if valid.iter().all(|&v| v) {
                next
            } else {
                // Padded rows keep their previous state.
                let keep: Vec<f64> = valid
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(f64::from(u8::from(v)), n))
                    .collect();
                layer_states
                    .iter()
                    .zip(next)
                    .map(|(&prev, new)| {
                        let delta = g.sub(new, prev)?;
                        let delta = g.mul_const(delta, keep.clone())?;
                        g.add(prev, delta)
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            states.push(*layer_states.last().expect("non-empty stack"));
        }
        let keys = g.stack(&states)?;
        Ok(EncoderOutput {
            states,
            keys,
            final_states: layer_states,
            mask: flatten_mask(src_mask),
        })
    }

    /// Bilinear attention with the model's decoder-side parameters.
    pub fn attend(&self, g: &mut Graph, h: Var, keys: Var, mask: &[bool]) -> Result<(Var, Var)> {
        self.attention.attend(g, &self.params, h, keys, mask)
    }

    /// One decoder step up to the attentional hidden state `h̃`.
    ///
    /// Returns `(h̃, new per-layer states, attention weights)`.
    pub fn decoder_hidden_step(
        &self,
        g: &mut Graph,
        prev_ids: &[usize],
        states: &[Var],
        keys: Var,
        mask: &[bool],
    ) -> Result<(Var, Vec<Var>, Var)> {
        let x = self.embed(g, self.tgt_embedding, prev_ids)?;
        let next = self.decoder.step(g, &self.params, x, states)?;
        let h = *next.last().expect("non-empty stack");
        let (context, weights) = self.attend(g, h, keys, mask)?;
        let h_tilde = self.attention.combine(g, &self.params, context, h)?;
        Ok((h_tilde, next, weights))
    }

    /// One decoder step to vocabulary logits (`B × V_tgt`).
    pub fn decode_step(
        &self,
        g: &mut Graph,
        prev_ids: &[usize],
        states: &[Var],
        keys: Var,
        mask: &[bool],
    ) -> Result<(Var, Vec<Var>, Var)> {
        let (h_tilde, next, weights) = self.decoder_hidden_step(g, prev_ids, states, keys, mask)?;
        let logits = self.output.apply(g, &self.params, h_tilde)?;
        Ok((logits, next, weights))
    }

    /// Teacher-forced decoder loss `L_d` for a batch.
    pub fn forward_teacher_forced(&self, g: &mut Graph, batch: &PaddedBatch) -> Result<TeacherForced> {
        let b = batch.batch_size();
        if b == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        let enc = self.encode(g, &batch.src, &batch.src_mask)?;
        let mut states = enc.final_states.clone();
        let steps = batch.tgt_len();
        let mut combined = Vec::with_capacity(steps);
        let mut hidden_states = Vec::with_capacity(steps);
        let mut targets = Vec::with_capacity(steps * b);
        let mut target_mask = Vec::with_capacity(steps * b);
        for t in 0..steps {
            let prev = column(&batch.tgt_in, t);
            let (h_tilde, next, _) = self.decoder_hidden_step(g, &prev, &states, enc.keys, &enc.mask)?;
            states = next;
            hidden_states.push(*states.last().expect("non-empty stack"));
            combined.push(h_tilde);
            targets.extend(column(&batch.tgt_out, t));
            target_mask.extend(batch.tgt_mask.iter().map(|m| m[t]));
        }
        let all = g.concat_rows(&combined)?;
        let logits = self.output.apply(g, &self.params, all)?;
        let nll_sum = g.softmax_cross_entropy(logits, &targets, &target_mask)?;
        let loss = g.scale(nll_sum, 1.0 / b as f64);
        Ok(TeacherForced {
            loss,
            nll_sum,
            logits,
            targets,
            target_mask,
            hidden_states,
        })
    }

    /// Reconstruction loss `L_r`: regenerate the gold source, teacher forced,
    /// attending over decoder states `hidden` masked by `tgt_mask`.
    pub fn reconstruct(
        &self,
        g: &mut Graph,
        hidden: &[Var],
        tgt_mask: &[Vec<bool>],
        batch: &PaddedBatch,
    ) -> Result<Var> {
        let rec = self
            .reconstructor
            .as_ref()
            .ok_or_else(|| Error::Config("model has no reconstructor (beta = 0)".into()))?;
        let b = batch.batch_size();
        let keys = g.stack(hidden)?;
        let mask = flatten_mask(tgt_mask);
        let mut states = rec.cell.zero_state(g, b);
        let mut combined = Vec::with_capacity(batch.src_len());
        let mut targets = Vec::new();
        let mut target_mask = Vec::new();
        for t in 0..batch.src_len() {
            let prev: Vec<usize> = if t == 0 {
                vec![SOS; b]
            } else {
                column(&batch.src, t - 1)
            };
            let x = self.embed(g, self.src_embedding, &prev)?;
            states = rec.cell.step(g, &self.params, x, &states)?;
            let h = *states.last().expect("non-empty stack");
            let (context, _) = rec.attention.attend(g, &self.params, h, keys, &mask)?;
            combined.push(rec.attention.combine(g, &self.params, context, h)?);
            targets.extend(column(&batch.src, t));
            target_mask.extend(batch.src_mask.iter().map(|m| m[t]));
        }
        let all = g.concat_rows(&combined)?;
        let logits = rec.output.apply(g, &self.params, all)?;
        let nll = g.softmax_cross_entropy(logits, &targets, &target_mask)?;
        Ok(g.scale(nll, 1.0 / b as f64))
    }

    /// The training objective `L = L_d + beta · L_r`. With `beta = 0` the
    /// reconstructor is not run and `total` is the `L_d` node itself.
    pub fn losses(&self, g: &mut Graph, batch: &PaddedBatch, beta: f64) -> Result<Losses> {
        if beta > 0.0 && self.reconstructor.is_none() {
            return Err(Error::Config(format!(
                "beta = {beta} needs a reconstructor, but the model was built without one"
            )));
        }
        let tf = self.forward_teacher_forced(g, batch)?;
        let (reconstructor, total) = if beta > 0.0 {
            let l_r = self.reconstruct(g, &tf.hidden_states, &batch.tgt_mask, batch)?;
            let weighted = g.scale(l_r, beta);
            (Some(l_r), g.add(tf.loss, weighted)?)
        } else {
            (None, tf.loss)
        };
        Ok(Losses {
            decoder: tf.loss,
            reconstructor,
            total,
            nll_sum: tf.nll_sum,
            target_tokens: batch.target_tokens(),
        })
    }

    /// Natural-log probability of every gold target token, with its mask,
    /// from one teacher-forced pass without dropout.
    pub fn gold_log_probs(&self, batch: &PaddedBatch) -> Result<Vec<(f64, bool)>> {
        let mut g = Graph::new();
        let tf = self.forward_teacher_forced(&mut g, batch)?;
        let ls = g.value(tf.logits).log_softmax_rows();
        Ok(tf
            .targets
            .iter()
            .zip(&tf.target_mask)
            .enumerate()
            .map(|(r, (&t, &m))| (if m { ls.at(r, t) } else { 0.0 }, m))
            .collect())
    }

    /// Encodes one source sentence (ids without `<eos>`) for decoding.
    pub fn encode_source(&self, src_tokens: &[usize]) -> Result<EncodedSource> {
        let mut ids = src_tokens.to_vec();
        ids.push(EOS);
        let mut g = Graph::new();
        let enc = self.encode(&mut g, &[ids.clone()], &[vec![true; ids.len()]])?;
        Ok(EncodedSource {
            keys: g.value(enc.keys).clone(),
            final_states: enc.final_states.iter().map(|&v| g.value(v).clone()).collect(),
            len: ids.len(),
        })
    }

    /// Advances `B` hypotheses over one encoded source. Returns
    /// log-probabilities (`B × V_tgt`) and the new per-hypothesis states.
    pub fn step_hypotheses(
        &self,
        source: &EncodedSource,
        prev_ids: &[usize],
        states: &[Vec<Tensor>],
    ) -> Result<(Tensor, Vec<Vec<Tensor>>)> {
        let b = prev_ids.len();
        if b == 0 || states.len() != b {
            return Err(Error::Contract("one state per hypothesis required".into()));
        }
        let n = self.config.hidden;
        let mut g = Graph::new();
        let mut keys = Vec::with_capacity(source.len * b * n);
        for s in 0..source.len {
            let row = source.keys.row(s);
            for _ in 0..b {
                keys.extend_from_slice(row);
            }
        }
        let keys = g.constant(Tensor::new(vec![source.len, b, n], keys)?);
        let mask = vec![true; b * source.len];
        let layer_vars = (0..self.decoder.layers())
            .map(|k| {
                let rows: Vec<Vec<f64>> = states.iter().map(|s| s[k].data().to_vec()).collect();
                Ok(g.constant(Tensor::from_rows(&rows)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let (logits, next, _) = self.decode_step(&mut g, prev_ids, &layer_vars, keys, &mask)?;
        let log_probs = g.value(logits).log_softmax_rows();
        let new_states = (0..b)
            .map(|r| {
                next.iter()
                    .map(|&v| Tensor::new(vec![1, n], g.value(v).row(r).to_vec()))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((log_probs, new_states))
    }
}

/// Encoder states of a single sentence, detached from any graph.
#[derive(Clone, Debug)]
pub struct EncodedSource {
    /// `S × 1 × n`
    keys: Tensor,
    final_states: Vec<Tensor>,
    len: usize,
}

impl EncodedSource {
    /// Per-layer `1 × n` decoder state before the first target token.
    pub fn initial_decoder_state(&self) -> Vec<Tensor> {
        self.final_states.clone()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}
