use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{orthogonal, xavier_uniform, ParamGroup, ParamId, ParamStore};
use super::Tensor;

/// Affine map `x W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self::with_group(store, name, input, output, ParamGroup::Default, rng)
    }

    pub fn with_group(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        group: ParamGroup,
        rng: &mut impl Rng,
    ) -> Self {
        Linear {
            w: store.add(format!("{name}.w"), xavier_uniform(input, output, rng), group),
            b: store.add(format!("{name}.b"), Tensor::zeros(1, output), group),
        }
    }

    pub fn output_dim(&self, store: &ParamStore) -> usize {
        store.get(self.w).cols
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }
}

/// Feed-forward stack: gelu hidden layers with dropout after each, then an
/// optional linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Ffn {
    pub hidden: Vec<Linear>,
    pub output: Option<Linear>,
    pub dropout: f64,
}

impl Ffn {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: &[usize],
        output: Option<usize>,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut d = input;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Linear::new(store, &format!("{name}.h{i}"), d, h, rng));
            d = h;
        }
        let output = output.map(|o| Linear::new(store, &format!("{name}.out"), d, o, rng));
        Ffn {
            hidden: layers,
            output,
            dropout,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let mut h = x;
        for layer in &self.hidden {
            let z = layer.forward(g, h);
            let a = g.gelu(z);
            h = g.dropout(a, self.dropout);
        }
        match &self.output {
            Some(out) => out.forward(g, h),
            None => h,
        }
    }
}

/// Single-direction LSTM layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lstm {
    pub w: ParamId,
    pub b: ParamId,
    pub u: ParamId,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let h4 = 4 * hidden;
        // One orthogonal block per gate.
        let mut u = Tensor::zeros(hidden, h4);
        for gate in 0..4 {
            let q = orthogonal(hidden, rng);
            for r in 0..hidden {
                u.row_mut(r)[gate * hidden..(gate + 1) * hidden].copy_from_slice(q.row(r));
            }
        }
        Lstm {
            w: store.add(format!("{name}.w"), xavier_uniform(input, h4, rng), ParamGroup::Default),
            b: store.add(format!("{name}.b"), Tensor::zeros(1, h4), ParamGroup::Default),
            u: store.add(format!("{name}.u"), u, ParamGroup::Default),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, reverse: bool) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let u = g.param(self.u);
        let xw = g.matmul(x, w);
        let xp = g.add_row(xw, b);
        g.lstm(xp, u, reverse)
    }
}

/// Bidirectional LSTM; output rows are `[forward; backward]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        BiLstm {
            fwd: Lstm::new(store, &format!("{name}.fwd"), input, hidden, rng),
            bwd: Lstm::new(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let f = self.fwd.forward(g, x, false);
        let b = self.bwd.forward(g, x, true);
        g.concat_cols(&[f, b])
    }
}
