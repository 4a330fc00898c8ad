use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{axpy, dot};
use super::Tensor;

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
struct LstmCache {
    /// Post-activation gates per step, layout `[i, f, g, o]`.
    gates: Tensor,
    /// Cell state per step.
    cells: Tensor,
    reverse: bool,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Lookup(ParamId, Vec<usize>),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather(Var, Vec<usize>),
    SliceCols(Var, usize),
    Transpose(Var),
    Dropout(Var, Vec<f64>),
    Softmax(Var),
    MaxRows(Var, Vec<usize>),
    MeanRows(Var),
    Sum(Var),
    Lstm(Var, Var, LstmCache),
    Custom(Vec<(Var, Tensor)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Reverse-mode autodiff tape over a borrowed parameter store.
#[derive(Debug)]
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    training: bool,
    rng: ChaCha8Rng,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore, training: bool, seed: u64) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Evaluation-mode graph: dropout is the identity.
    pub fn eval(store: &'p ParamStore) -> Self {
        Graph::new(store, false, 0)
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(self.store.get(id).clone(), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Rows of an embedding table, without materializing the whole table.
    pub fn lookup(&mut self, table: ParamId, ids: &[usize]) -> Var {
        let t = self.store.get(table);
        let mut out = Tensor::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(out, Op::Lookup(table, ids.to_vec()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes differ");
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!((1, self.value(a).cols), r.shape(), "add_row shapes differ");
        let mut v = self.value(a).clone();
        for i in 0..v.rows {
            axpy(1.0, &r.data, v.row_mut(i));
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes differ");
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let v = Tensor::from_vec(x.rows, x.cols, data);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| gelu(x).0);
        self.push(v, Op::Gelu(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows, rows, "concat_cols row counts differ");
                out.row_mut(r)[off..off + t.cols].copy_from_slice(t.row(r));
                off += t.cols;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "concat_rows column counts differ");
            data.extend_from_slice(&t.data);
            rows += t.rows;
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather(&mut self, a: Var, rows: &[usize]) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(rows.len(), t.cols);
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(t.row(r));
        }
        self.push(out, Op::Gather(a, rows.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let idx: Vec<usize> = (start..end).collect();
        self.gather(a, &idx)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(t.rows, end - start);
        for r in 0..t.rows {
            out.row_mut(r).copy_from_slice(&t.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(t.cols, t.rows);
        for r in 0..t.rows {
            for c in 0..t.cols {
                out.set(c, r, t.get(r, c));
            }
        }
        self.push(out, Op::Transpose(a))
    }

    /// Inverted dropout; the identity outside training or at rate 0.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Var {
        if !self.training || rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let t = self.value(a);
        let data = t.data.iter().zip(&mask).map(|(x, m)| x * m).collect();
        let v = Tensor::from_vec(t.rows, t.cols, data);
        self.push(v, Op::Dropout(a, mask))
    }

    /// Softmax over all entries of `a`.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut v = t.map(|x| (x - m).exp());
        let z: f64 = v.data.iter().sum();
        v.scale(1.0 / z);
        self.push(v, Op::Softmax(a))
    }

    /// Column-wise max over rows, giving `1 x n`. Ties go to the first row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert!(t.rows > 0, "max over zero rows");
        let mut arg = vec![0usize; t.cols];
        let mut out = t.row(0).to_vec();
        for r in 1..t.rows {
            for (c, v) in t.row(r).iter().enumerate() {
                if *v > out[c] {
                    out[c] = *v;
                    arg[c] = r;
                }
            }
        }
        self.push(Tensor::row_vector(out), Op::MaxRows(a, arg))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert!(t.rows > 0, "mean over zero rows");
        let mut out = vec![0.0; t.cols];
        for r in 0..t.rows {
            axpy(1.0 / t.rows as f64, t.row(r), &mut out);
        }
        self.push(Tensor::row_vector(out), Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::row_vector(vec![s]), Op::Sum(a))
    }

    /// Unidirectional LSTM over a `T x 4H` pre-projected input (`x W + b`),
    /// recurrent weights `u: H x 4H`, zero initial state. Gate layout is
    /// `[i, f, g, o]`. Returns `T x H` hidden states in input order.
    pub fn lstm(&mut self, xproj: Var, u: Var, reverse: bool) -> Var {
        let xp = self.value(xproj);
        let uw = self.value(u);
        let (steps, h4) = xp.shape();
        let h = h4 / 4;
        assert_eq!(uw.shape(), (h, h4), "lstm recurrent weight shape");
        let mut gates = Tensor::zeros(steps, h4);
        let mut cells = Tensor::zeros(steps, h);
        let mut hidden = Tensor::zeros(steps, h);
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        let mut z = vec![0.0; h4];
        for k in 0..steps {
            let t = if reverse { steps - 1 - k } else { k };
            z.copy_from_slice(xp.row(t));
            for (j, &hv) in h_prev.iter().enumerate() {
                if hv != 0.0 {
                    axpy(hv, uw.row(j), &mut z);
                }
            }
            let g = gates.row_mut(t);
            for j in 0..h {
                g[j] = sigmoid(z[j]);
                g[h + j] = sigmoid(z[h + j]);
                g[2 * h + j] = z[2 * h + j].tanh();
                g[3 * h + j] = sigmoid(z[3 * h + j]);
            }
            let g = gates.row(t).to_vec();
            for j in 0..h {
                let c = g[h + j] * c_prev[j] + g[j] * g[2 * h + j];
                cells.set(t, j, c);
                hidden.set(t, j, g[3 * h + j] * c.tanh());
            }
            h_prev.copy_from_slice(hidden.row(t));
            c_prev.copy_from_slice(cells.row(t));
        }
        let cache = LstmCache { gates, cells, reverse };
        self.push(hidden, Op::Lstm(xproj, u, cache))
    }

    /// Scalar node with externally computed local gradients `d out / d input`.
    pub fn custom_scalar(&mut self, value: f64, inputs: Vec<(Var, Tensor)>) -> Var {
        for (v, g) in &inputs {
            assert_eq!(self.shape(*v), g.shape(), "custom gradient shape");
        }
        self.push(Tensor::row_vector(vec![value]), Op::Custom(inputs))
    }

    /// Gradients of the scalar `loss` with respect to every parameter reached.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(1, 1, 1.0));
        let mut out = Gradients::new(self.store.len());
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut acc = |v: Var, f: &dyn Fn(&mut Tensor)| {
                let (r, c) = self.nodes[v.0].value.shape();
                f(grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)));
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::Lookup(id, ids) => {
                    let t = self.store.get(*id);
                    let slot = out.slot(*id, t.rows, t.cols);
                    for (r, &i) in ids.iter().enumerate() {
                        axpy(1.0, g.row(r), slot.row_mut(i));
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, &|ga| ga.add_matmul_nt(&g, bv));
                    acc(*b, &|gb| gb.add_matmul_tn(av, &g));
                }
                Op::Add(a, b) => {
                    acc(*a, &|ga| ga.add_assign(&g));
                    acc(*b, &|gb| gb.add_assign(&g));
                }
                Op::AddRow(a, row) => {
                    acc(*a, &|ga| ga.add_assign(&g));
                    acc(*row, &|gr| {
                        for r in 0..g.rows {
                            axpy(1.0, g.row(r), &mut gr.data);
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, &|ga| {
                        for i in 0..g.len() {
                            ga.data[i] += g.data[i] * bv.data[i];
                        }
                    });
                    acc(*b, &|gb| {
                        for i in 0..g.len() {
                            gb.data[i] += g.data[i] * av.data[i];
                        }
                    });
                }
                Op::Scale(a, s) => acc(*a, &|ga| axpy(*s, &g.data, &mut ga.data)),
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(*a, &|ga| {
                        for i in 0..g.len() {
                            ga.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(*a, &|ga| {
                        for i in 0..g.len() {
                            ga.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
                        }
                    });
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    acc(*a, &|ga| {
                        for i in 0..g.len() {
                            ga.data[i] += g.data[i] * gelu(x.data[i]).1;
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        acc(p, &|gp| {
                            for r in 0..g.rows {
                                axpy(1.0, &g.row(r)[off..off + w], gp.row_mut(r));
                            }
                        });
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        acc(p, &|gp| axpy(1.0, &g.data[off..off + n], &mut gp.data));
                        off += n;
                    }
                }
                Op::Gather(a, rows) => acc(*a, &|ga| {
                    for (i, &r) in rows.iter().enumerate() {
                        axpy(1.0, g.row(i), ga.row_mut(r));
                    }
                }),
                Op::SliceCols(a, start) => acc(*a, &|ga| {
                    for r in 0..g.rows {
                        axpy(1.0, g.row(r), &mut ga.row_mut(r)[*start..*start + g.cols]);
                    }
                }),
                Op::Transpose(a) => acc(*a, &|ga| {
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            ga.data[c * g.rows + r] += g.get(r, c);
                        }
                    }
                }),
                Op::Dropout(a, mask) => acc(*a, &|ga| {
                    for i in 0..g.len() {
                        ga.data[i] += g.data[i] * mask[i];
                    }
                }),
                Op::Softmax(a) => {
                    let y = &node.value;
                    let gy = dot(&g.data, &y.data);
                    acc(*a, &|ga| {
                        for i in 0..g.len() {
                            ga.data[i] += y.data[i] * (g.data[i] - gy);
                        }
                    });
                }
                Op::MaxRows(a, arg) => acc(*a, &|ga| {
                    for (c, &r) in arg.iter().enumerate() {
                        let cols = ga.cols;
                        ga.data[r * cols + c] += g.data[c];
                    }
                }),
                Op::MeanRows(a) => acc(*a, &|ga| {
                    let n = ga.rows as f64;
                    for r in 0..ga.rows {
                        axpy(1.0 / n, &g.data, ga.row_mut(r));
                    }
                }),
                Op::Sum(a) => acc(*a, &|ga| {
                    for v in &mut ga.data {
                        *v += g.data[0];
                    }
                }),
                Op::Lstm(xproj, u, cache) => {
                    let (dx, du) = lstm_backward(&g, self.value(*u), cache);
                    acc(*xproj, &|gx| gx.add_assign(&dx));
                    acc(*u, &|gu| gu.add_assign(&du));
                }
                Op::Custom(inputs) => {
                    for (v, local) in inputs {
                        acc(*v, &|gv| axpy(g.data[0], &local.data, &mut gv.data));
                    }
                }
            }
        }
        out
    }
}

fn lstm_backward(grad_h: &Tensor, u: &Tensor, cache: &LstmCache) -> (Tensor, Tensor) {
    let (steps, h) = grad_h.shape();
    let h4 = 4 * h;
    let mut dx = Tensor::zeros(steps, h4);
    let mut du = Tensor::zeros(h, h4);
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; h4];
    // Walk the recurrence backwards relative to its forward direction.
    for k in (0..steps).rev() {
        let t = if cache.reverse { steps - 1 - k } else { k };
        let prev = if k == 0 {
            None
        } else if cache.reverse {
            Some(t + 1)
        } else {
            Some(t - 1)
        };
        let g = cache.gates.row(t);
        let c = cache.cells.row(t);
        for j in 0..h {
            let (i_g, f_g, g_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = c[j].tanh();
            let dh = grad_h.get(t, j) + dh_next[j];
            let dc = dh * o_g * (1.0 - tc * tc) + dc_next[j];
            let c_prev = prev.map_or(0.0, |p| cache.cells.get(p, j));
            dz[j] = dc * g_g * i_g * (1.0 - i_g);
            dz[h + j] = dc * c_prev * f_g * (1.0 - f_g);
            dz[2 * h + j] = dc * i_g * (1.0 - g_g * g_g);
            dz[3 * h + j] = dh * tc * o_g * (1.0 - o_g);
            dc_next[j] = dc * f_g;
        }
        dx.row_mut(t).copy_from_slice(&dz);
        match prev {
            Some(p) => {
                // h_prev = o * tanh(c) at step p
                for j in 0..h {
                    let hp = cache.gates.get(p, 3 * h + j) * cache.cells.get(p, j).tanh();
                    if hp != 0.0 {
                        axpy(hp, &dz, du.row_mut(j));
                    }
                    dh_next[j] = dot(u.row(j), &dz);
                }
            }
            None => dh_next.iter_mut().for_each(|v| *v = 0.0),
        }
    }
    (dx, du)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// GELU value and derivative.
#[inline]
fn gelu(x: f64) -> (f64, f64) {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
    (y, dy)
}

/// Summed binary cross-entropy on logits `z` (`n x 1`) against 0/1 targets.
pub fn bce_with_logits(g: &mut Graph, logits: Var, targets: &[f64]) -> Var {
    let z = g.value(logits);
    assert_eq!(z.len(), targets.len(), "bce target count");
    let mut loss = 0.0;
    let mut local = Tensor::zeros(z.rows, z.cols);
    for (i, (&zi, &y)) in z.data.iter().zip(targets).enumerate() {
        loss += softplus(zi) - y * zi;
        local.data[i] = sigmoid(zi) - y;
    }
    g.custom_scalar(loss, vec![(logits, local)])
}
