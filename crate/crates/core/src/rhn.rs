//! Recurrent Highway Network layers.
//!
//! One RHN layer applies `depth` highway micro-layers per time step. With
//! `s_0` the previous step's state, micro-layer `l` computes
//!
//! ```text
//! h_l = tanh(x·W_H [l = 1] + s_{l-1}·R_H[l] + b_H[l])
//! t_l = σ   (x·W_T [l = 1] + s_{l-1}·R_T[l] + b_T[l])
//! c_l = σ   (x·W_C [l = 1] + s_{l-1}·R_C[l] + b_C[l])     (or 1 - t_l when coupled)
//! s_l = h_l ⊙ t_l + s_{l-1} ⊙ c_l
//! ```
//!
//! and the step's output state is `s_depth`. The input enters only the
//! first micro-layer. Matrices use the row-vector convention: `x` is
//! `batch × m`, `W_*` is `m × n` and `R_*` is `n × n`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Uniform init bound for every weight matrix.
pub const INIT_BOUND: f64 = 0.08;
/// Initial carry bias, so fresh cells start close to the identity map.
pub const CARRY_BIAS_INIT: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RhnCellConfig {
    pub input_size: usize,
    pub hidden_size: usize,
    pub depth: usize,
    pub coupled_carry: bool,
}

impl RhnCellConfig {
    /// Scalar parameter count implied by the shapes.
    pub fn parameter_count(&self) -> usize {
        let (m, n, l) = (self.input_size, self.hidden_size, self.depth);
        let families = if self.coupled_carry { 2 } else { 3 };
        families * m * n + families * l * (n * n + n)
    }
}

#[derive(Clone, Debug)]
struct MicroLayer {
    r_h: ParamId,
    r_t: ParamId,
    r_c: Option<ParamId>,
    b_h: ParamId,
    b_t: ParamId,
    b_c: Option<ParamId>,
}

/// Parameter handles for one RHN layer.
#[derive(Clone, Debug)]
pub struct RhnCell {
    config: RhnCellConfig,
    w_h: ParamId,
    w_t: ParamId,
    w_c: Option<ParamId>,
    layers: Vec<MicroLayer>,
}

impl RhnCell {
    /// Registers the cell's tensors in `store` under `prefix`.
    ///
    /// Matrices are drawn from `U(-0.08, 0.08)`. The carry bias starts at
    /// +1; in the coupled variant the transform bias starts at -1 instead.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        config: RhnCellConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let RhnCellConfig {
            input_size: m,
            hidden_size: n,
            depth,
            coupled_carry,
        } = config;
        if m == 0 || n == 0 || depth == 0 {
            return Err(Error::Config(format!(
                "RHN cell needs positive sizes and depth, got {config:?}"
            )));
        }
        let mut mat = |store: &mut ParamStore, name: String, rows: usize| {
            store.add(name, Tensor::uniform(&[rows, n], INIT_BOUND, rng))
        };
        let w_h = mat(store, format!("{prefix}.w_h"), m);
        let w_t = mat(store, format!("{prefix}.w_t"), m);
        let w_c = (!coupled_carry).then(|| mat(store, format!("{prefix}.w_c"), m));
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let r_h = mat(store, format!("{prefix}.l{l}.r_h"), n);
            let r_t = mat(store, format!("{prefix}.l{l}.r_t"), n);
            let r_c = (!coupled_carry).then(|| mat(store, format!("{prefix}.l{l}.r_c"), n));
            let b_h = store.add(format!("{prefix}.l{l}.b_h"), Tensor::zeros(&[n]));
            let t_bias = if coupled_carry { -CARRY_BIAS_INIT } else { 0.0 };
            let b_t = store.add(format!("{prefix}.l{l}.b_t"), Tensor::full(&[n], t_bias));
            let b_c =
                (!coupled_carry).then(|| store.add(format!("{prefix}.l{l}.b_c"), Tensor::full(&[n], CARRY_BIAS_INIT)));
            layers.push(MicroLayer {
                r_h,
                r_t,
                r_c,
                b_h,
                b_t,
                b_c,
            });
        }
        Ok(RhnCell {
            config,
            w_h,
            w_t,
            w_c,
            layers,
        })
    }

    pub fn config(&self) -> &RhnCellConfig {
        &self.config
    }

    pub fn input_size(&self) -> usize {
        self.config.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    /// Every tensor the cell owns, input matrices first.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.w_h, self.w_t];
        ids.extend(self.w_c);
        for l in &self.layers {
            ids.extend([l.r_h, l.r_t]);
            ids.extend(l.r_c);
            ids.extend([l.b_h, l.b_t]);
            ids.extend(l.b_c);
        }
        ids
    }

    pub fn parameter_count(&self) -> usize {
        self.config.parameter_count()
    }

    /// One time step: `s_prev` (`batch × n`) to `s_depth`.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, s_prev: Var) -> Result<Var> {
        let (xs, ss) = (g.shape(x).to_vec(), g.shape(s_prev).to_vec());
        if xs.len() != 2
            || ss.len() != 2
            || xs[1] != self.config.input_size
            || ss[1] != self.config.hidden_size
            || xs[0] != ss[0]
        {
            return Err(Error::Dimension {
                op: "rhn_step",
                left: xs,
                right: ss,
            });
        }

        let input_term = |g: &mut Graph, id: ParamId| -> Result<Var> {
            let w = g.param(store, id);
            g.matmul(x, w)
        };
        let x_h = input_term(g, self.w_h)?;
        let x_t = input_term(g, self.w_t)?;
        let x_c = self.w_c.map(|id| input_term(g, id)).transpose()?;

        let mut s = s_prev;
        for (l, layer) in self.layers.iter().enumerate() {
            let first = l == 0;
            let pre = |g: &mut Graph, r: ParamId, b: ParamId, xw: Option<Var>| -> Result<Var> {
                let r = g.param(store, r);
                let mut acc = g.matmul(s, r)?;
                if let Some(xw) = xw.filter(|_| first) {
                    acc = g.add(acc, xw)?;
                }
                let b = g.param(store, b);
                g.add_bias(acc, b)
            };
            let h = pre(g, layer.r_h, layer.b_h, Some(x_h))?;
            let h = g.tanh(h);
            let t = pre(g, layer.r_t, layer.b_t, Some(x_t))?;
            let t = g.sigmoid(t);
            let c = match (layer.r_c, layer.b_c) {
                (Some(r), Some(b)) => {
                    let c = pre(g, r, b, x_c)?;
                    g.sigmoid(c)
                }
                _ => g.one_minus(t),
            };
            let write = g.mul(h, t)?;
            let carry = g.mul(s, c)?;
            s = g.add(write, carry)?;
        }
        Ok(s)
    }

    /// Runs [`RhnCell::step`] along the time axis, returning every state.
    pub fn unroll(&self, g: &mut Graph, store: &ParamStore, xs: &[Var], s0: Var) -> Result<Vec<Var>> {
        if xs.is_empty() {
            return Err(Error::Contract("rhn_unroll over an empty sequence".into()));
        }
        let mut states = Vec::with_capacity(xs.len());
        let mut s = s0;
        for &x in xs {
            s = self.step(g, store, x, s)?;
            states.push(s);
        }
        Ok(states)
    }
}

/// RHN layers stacked in space: each time step feeds cell `k`'s output into
/// cell `k + 1`. Dropout (from the graph) is applied between cells only.
#[derive(Clone, Debug)]
pub struct StackedCell {
    cells: Vec<RhnCell>,
}

impl StackedCell {
    pub fn new(cells: Vec<RhnCell>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Config("a stack needs at least one cell".into()));
        }
        for (k, pair) in cells.windows(2).enumerate() {
            if pair[1].input_size() != pair[0].hidden_size() {
                return Err(Error::Config(format!(
                    "cell {} expects input width {} but cell {} produces {}",
                    k + 1,
                    pair[1].input_size(),
                    k,
                    pair[0].hidden_size()
                )));
            }
        }
        Ok(StackedCell { cells })
    }

    /// `layers` cells of equal width; the first reads `input_size` columns.
    #[allow(clippy::too_many_arguments)]
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        depth: usize,
        layers: usize,
        coupled_carry: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let cells = (0..layers)
            .map(|k| {
                let config = RhnCellConfig {
                    input_size: if k == 0 { input_size } else { hidden_size },
                    hidden_size,
                    depth,
                    coupled_carry,
                };
                RhnCell::new(store, &format!("{prefix}.{k}"), config, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cells)
    }

    pub fn cells(&self) -> &[RhnCell] {
        &self.cells
    }

    pub fn layers(&self) -> usize {
        self.cells.len()
    }

    pub fn hidden_size(&self) -> usize {
        self.cells.last().map_or(0, RhnCell::hidden_size)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.cells.iter().flat_map(RhnCell::param_ids).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.cells.iter().map(RhnCell::parameter_count).sum()
    }

    /// Zero initial state for every cell.
    pub fn zero_state(&self, g: &mut Graph, batch: usize) -> Vec<Var> {
        self.cells
            .iter()
            .map(|c| g.constant(Tensor::zeros(&[batch, c.hidden_size()])))
            .collect()
    }

    /// One time step through every cell; returns the new per-cell states
    /// (the last one is the stack's output).
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, states: &[Var]) -> Result<Vec<Var>> {
        if states.len() != self.cells.len() {
            return Err(Error::Contract(format!(
                "stack of {} cells given {} states",
                self.cells.len(),
                states.len()
            )));
        }
        let mut input = x;
        let mut next = Vec::with_capacity(self.cells.len());
        for (k, (cell, &s)) in self.cells.iter().zip(states).enumerate() {
            if k > 0 {
                input = g.dropout(input)?;
            }
            let s = cell.step(g, store, input, s)?;
            next.push(s);
            input = s;
        }
        Ok(next)
    }

    /// Unrolls the stack; returns the top cell's state at every step and the
    /// final state of every cell.
    pub fn unroll(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        xs: &[Var],
        init: Vec<Var>,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        if xs.is_empty() {
            return Err(Error::Contract("rhn_unroll over an empty sequence".into()));
        }
        let mut states = init;
        let mut outputs = Vec::with_capacity(xs.len());
        for &x in xs {
            states = self.step(g, store, x, &states)?;
            outputs.push(*states.last().expect("non-empty stack"));
        }
        Ok((outputs, states))
    }
}
