//! Tensor-level reverse-mode differentiation tape.
//!
//! Every operation appends one node holding its forward value and the indices
//! of its inputs. [`Tape::backward`] walks the node list in reverse from a
//! scalar root and accumulates gradients into every node that depends on a
//! trainable leaf.

use crate::diffcore::params::{ParamId, ParamStore};
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        Var(i)
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Dense {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Affine {
        x: usize,
        scale: T,
    },
    Relu(usize),
    LeakyRelu(usize, T),
    Sigmoid(usize),
    Softplus(usize),
    Log(usize),
    Exp(usize),
    Square(usize),
    Elementwise {
        x: usize,
        deriv: fn(T) -> T,
    },
    MaskedSoftmax(usize),
    TokenWeightedSum {
        weights: usize,
        emb: usize,
        width: usize,
    },
    Embed {
        table: usize,
        ids: Vec<usize>,
        mask: Vec<bool>,
    },
    ConcatCols(usize, usize),
    ConcatRows(usize, usize),
    SelectRows {
        x: usize,
        idx: Vec<usize>,
    },
    SumCols(usize),
    MeanAll(usize),
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// A recording of one forward computation.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the root with respect to `v`, or `None` if `v` does not
    /// influence the root through a differentiable path.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn check_finite<T: Scalar>(t: &Tensor<T>, what: &'static str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// A differentiable leaf that is not tied to a parameter store.
    pub fn var(&mut self, value: Tensor<T>) -> Result<Var> {
        check_finite(&value, "input")?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// A non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        check_finite(&value, "input")?;
        Ok(self.push(value, Op::Leaf, false))
    }

    /// Leaf holding a copy of a stored parameter; its gradient is routed back
    /// to the store by [`ParamStore::accumulate`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    /// Parameter copy that does not receive gradient (frozen use).
    pub fn frozen_param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Leaf, false)
    }

    pub(crate) fn param_leaves(&self) -> impl Iterator<Item = (usize, ParamId)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (i, p)))
    }

    /// Affine map `x · wᵀ + b` with `x: batch × in`, `w: out × in`, `b: 1 × out`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs[1] != ws[1] {
            return Err(Error::Shape {
                op: "dense",
                left: xs,
                right: ws,
            });
        }
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs != [1, ws[0]] {
                return Err(Error::Shape {
                    op: "dense bias",
                    left: ws,
                    right: bs,
                });
            }
        }
        let (batch, inner, out) = (xs[0], xs[1], ws[0]);
        let mut y = Tensor::zeros(batch, out);
        {
            let xv = self.value(x);
            let wv = self.value(w);
            let bias = b.map(|b| self.value(b).data().to_vec());
            let yd = y.data_mut();
            for r in 0..batch {
                let xr = xv.row_slice(r);
                for o in 0..out {
                    let wr = &wv.data()[o * inner..(o + 1) * inner];
                    let mut acc = T::zero();
                    for k in 0..inner {
                        acc += xr[k] * wr[k];
                    }
                    if let Some(bias) = &bias {
                        acc += bias[o];
                    }
                    yd[r * out + o] = acc;
                }
            }
        }
        let needs = self.needs(x.0) || self.needs(w.0) || b.is_some_and(|b| self.needs(b.0));
        Ok(self.push(
            y,
            Op::Dense {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
            },
            needs,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let av = self.value(a);
        let bv = self.value(b);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.rows(), av.cols(), data)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(out, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a.0, b.0))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(x).map(f);
        let needs = self.needs(x.0);
        self.push(out, op, needs)
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        self.unary(x, |v| scale * v + shift, Op::Affine { x: x.0, scale })
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.affine(x, s, T::zero())
    }

    /// `1 − x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -T::one(), T::one())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x.0))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { slope * v },
            Op::LeakyRelu(x.0, slope),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Scalar::sigmoid, Op::Sigmoid(x.0))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Scalar::softplus, Op::Softplus(x.0))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, T::ln, Op::Log(x.0))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, T::exp, Op::Exp(x.0))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x.0))
    }

    /// User-supplied elementwise function with its derivative.
    pub fn elementwise(&mut self, x: Var, f: fn(T) -> T, deriv: fn(T) -> T) -> Var {
        self.unary(x, f, Op::Elementwise { x: x.0, deriv })
    }

    /// Row-wise softmax with max-subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let [rows, cols] = self.shape(x);
        let mask = vec![true; rows * cols];
        self.masked_softmax(x, &mask)
            .expect("full mask is always shaped correctly")
    }

    /// Row-wise softmax over the positions where `mask` is true; masked
    /// positions receive exactly zero weight, as if their logits were −∞.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let [rows, cols] = self.shape(x);
        if mask.len() != rows * cols {
            return Err(Error::Shape {
                op: "masked_softmax",
                left: [rows, cols],
                right: [1, mask.len()],
            });
        }
        let xv = self.value(x);
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let m = &mask[r * cols..(r + 1) * cols];
            let xr = xv.row_slice(r);
            let Some(max) = xr
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| v)
                .reduce(T::max)
            else {
                return Err(Error::invalid(format!("softmax row {r} is fully masked")));
            };
            let od = &mut out.data_mut()[r * cols..(r + 1) * cols];
            let mut sum = T::zero();
            for c in 0..cols {
                if m[c] {
                    let e = (xr[c] - max).exp();
                    od[c] = e;
                    sum += e;
                }
            }
            for v in od.iter_mut() {
                *v /= sum;
            }
        }
        let needs = self.needs(x.0);
        Ok(self.push(out, Op::MaskedSoftmax(x.0), needs))
    }

    /// For `weights: b × n` and `emb: b × (n·width)`, returns the `b × width`
    /// matrix whose row `r` is `Σ_i weights[r,i] · emb[r, i·width .. (i+1)·width]`.
    pub fn token_weighted_sum(&mut self, weights: Var, emb: Var, width: usize) -> Result<Var> {
        let (ws, es) = (self.shape(weights), self.shape(emb));
        if ws[0] != es[0] || ws[1] * width != es[1] {
            return Err(Error::Shape {
                op: "token_weighted_sum",
                left: ws,
                right: es,
            });
        }
        let (rows, n) = (ws[0], ws[1]);
        let wv = self.value(weights);
        let ev = self.value(emb);
        let mut out = Tensor::zeros(rows, width);
        for r in 0..rows {
            let er = ev.row_slice(r);
            let wr = wv.row_slice(r);
            let od = &mut out.data_mut()[r * width..(r + 1) * width];
            for i in 0..n {
                let a = wr[i];
                if a == T::zero() {
                    continue;
                }
                for (o, &e) in od.iter_mut().zip(&er[i * width..(i + 1) * width]) {
                    *o += a * e;
                }
            }
        }
        let needs = self.needs(weights.0) || self.needs(emb.0);
        Ok(self.push(
            out,
            Op::TokenWeightedSum {
                weights: weights.0,
                emb: emb.0,
                width,
            },
            needs,
        ))
    }

    /// Embedding lookup. `ids` and `mask` describe `b` rows of `n` slots each;
    /// the result is `b × (n·width)` with zero vectors in masked-out slots.
    pub fn embed(&mut self, table: Var, ids: &[usize], mask: &[bool], n: usize) -> Result<Var> {
        let [vocab, width] = self.shape(table);
        if n == 0 || ids.len() != mask.len() || ids.len() % n != 0 || ids.is_empty() {
            return Err(Error::Shape {
                op: "embed",
                left: [ids.len(), n],
                right: [mask.len(), n],
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::invalid(format!(
                "token id {bad} out of range for table of {vocab} rows"
            )));
        }
        let rows = ids.len() / n;
        let tv = self.value(table);
        let mut out = Tensor::zeros(rows, n * width);
        {
            let od = out.data_mut();
            for (slot, (&id, &keep)) in ids.iter().zip(mask).enumerate() {
                if keep {
                    od[slot * width..(slot + 1) * width].copy_from_slice(tv.row_slice(id));
                }
            }
        }
        let needs = self.needs(table.0);
        Ok(self.push(
            out,
            Op::Embed {
                table: table.0,
                ids: ids.to_vec(),
                mask: mask.to_vec(),
            },
            needs,
        ))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[0] != sb[0] {
            return Err(Error::Shape {
                op: "concat_cols",
                left: sa,
                right: sb,
            });
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(sa[0] * (sa[1] + sb[1]));
        for r in 0..sa[0] {
            data.extend_from_slice(av.row_slice(r));
            data.extend_from_slice(bv.row_slice(r));
        }
        let out = Tensor::new(sa[0], sa[1] + sb[1], data)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(out, Op::ConcatCols(a.0, b.0), needs))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[1] {
            return Err(Error::Shape {
                op: "concat_rows",
                left: sa,
                right: sb,
            });
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let out = Tensor::new(sa[0] + sb[0], sa[1], data)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(out, Op::ConcatRows(a.0, b.0), needs))
    }

    /// Gathers rows by index (repeats allowed).
    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let [rows, _] = self.shape(x);
        if idx.is_empty() || idx.iter().any(|&i| i >= rows) {
            return Err(Error::invalid(format!(
                "row selection out of range for {rows} rows"
            )));
        }
        let out = self.value(x).select_rows(idx);
        let needs = self.needs(x.0);
        Ok(self.push(
            out,
            Op::SelectRows {
                x: x.0,
                idx: idx.to_vec(),
            },
            needs,
        ))
    }

    /// Sum over columns: `b × c → b × 1`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows()).map(|r| xv.row_slice(r).iter().copied().sum()).collect();
        let out = Tensor::new(xv.rows(), 1, data).expect("rows > 0");
        let needs = self.needs(x.0);
        self.push(out, Op::SumCols(x.0), needs)
    }

    /// Mean of all entries: `→ 1 × 1`.
    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = T::from_usize(xv.len()).expect("length fits scalar");
        let out = Tensor::scalar(xv.data().iter().copied().sum::<T>() / n);
        let needs = self.needs(x.0);
        self.push(out, Op::MeanAll(x.0), needs)
    }

    /// Per-row cross-entropy `−log softmax(logits_r)[labels_r]`: `b × c → b × 1`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let [rows, cols] = self.shape(logits);
        if labels.len() != rows {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: [rows, cols],
                right: [labels.len(), 1],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {cols} classes"
            )));
        }
        let lv = self.value(logits);
        let mut probs = Tensor::zeros(rows, cols);
        let mut loss = Vec::with_capacity(rows);
        for r in 0..rows {
            let lr = lv.row_slice(r);
            let max = lr.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = lr.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            for c in 0..cols {
                probs.set(r, c, (lr[c] - lse).exp());
            }
            loss.push(lse - lr[labels[r]]);
        }
        let out = Tensor::new(rows, 1, loss)?;
        let needs = self.needs(logits.0);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Reverse pass from a `1 × 1` root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.shape(root) != [1, 1] {
            return Err(Error::Shape {
                op: "backward root",
                left: self.shape(root),
                right: [1, 1],
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let acc = |target: usize, grads: &mut [Option<Tensor<T>>], f: &dyn Fn(&mut Tensor<T>)| {
            if !self.nodes[target].needs_grad {
                return;
            }
            let slot = grads[target].get_or_insert_with(|| {
                let s = self.nodes[target].value.shape();
                Tensor::zeros(s[0], s[1])
            });
            f(slot);
        };
        let zip_acc = |t: &mut Tensor<T>, f: &dyn Fn(usize) -> T| {
            for (k, v) in t.data_mut().iter_mut().enumerate() {
                *v += f(k);
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let xv = &self.nodes[*x].value;
                let wv = &self.nodes[*w].value;
                let (batch, inner, outd) = (xv.rows(), xv.cols(), wv.rows());
                acc(*x, grads, &|gx| {
                    let gxd = gx.data_mut();
                    for r in 0..batch {
                        for o in 0..outd {
                            let go = gd[r * outd + o];
                            if go == T::zero() {
                                continue;
                            }
                            let wr = &wv.data()[o * inner..(o + 1) * inner];
                            for (d, &wk) in gxd[r * inner..(r + 1) * inner].iter_mut().zip(wr) {
                                *d += go * wk;
                            }
                        }
                    }
                });
                acc(*w, grads, &|gw| {
                    let gwd = gw.data_mut();
                    for r in 0..batch {
                        let xr = xv.row_slice(r);
                        for o in 0..outd {
                            let go = gd[r * outd + o];
                            if go == T::zero() {
                                continue;
                            }
                            for (d, &xk) in gwd[o * inner..(o + 1) * inner].iter_mut().zip(xr) {
                                *d += go * xk;
                            }
                        }
                    }
                });
                if let Some(b) = b {
                    acc(*b, grads, &|gb| {
                        let gbd = gb.data_mut();
                        for r in 0..batch {
                            for o in 0..outd {
                                gbd[o] += gd[r * outd + o];
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                acc(*a, grads, &|t| zip_acc(t, &|k| gd[k]));
                acc(*b, grads, &|t| zip_acc(t, &|k| gd[k]));
            }
            Op::Sub(a, b) => {
                acc(*a, grads, &|t| zip_acc(t, &|k| gd[k]));
                acc(*b, grads, &|t| zip_acc(t, &|k| -gd[k]));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                acc(*a, grads, &|t| zip_acc(t, &|k| gd[k] * bv[k]));
                acc(*b, grads, &|t| zip_acc(t, &|k| gd[k] * av[k]));
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                acc(*a, grads, &|t| zip_acc(t, &|k| gd[k] / bv[k]));
                acc(*b, grads, &|t| zip_acc(t, &|k| -gd[k] * av[k] / (bv[k] * bv[k])));
            }
            Op::Affine { x, scale } => {
                let s = *scale;
                acc(*x, grads, &|t| zip_acc(t, &|k| gd[k] * s));
            }
            Op::Relu(x) => {
                let xv = self.nodes[*x].value.data();
                acc(*x, grads, &|t| {
                    zip_acc(t, &|k| if xv[k] > T::zero() { gd[k] } else { T::zero() })
                });
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.nodes[*x].value.data();
                let s = *slope;
                acc(*x, grads, &|t| {
                    zip_acc(t, &|k| if xv[k] > T::zero() { gd[k] } else { s * gd[k] })
                });
            }
            Op::Sigmoid(x) => {
                let y = out.data();
                acc(*x, grads, &|t| zip_acc(t, &|k| gd[k] * y[k] * (T::one() - y[k])));
            }
            Op::Softplus(x) => {
                let xv = self.nodes[*x].value.data();
                acc(*x, grads, &|t| zip_acc(t, &|k| gd[k] * xv[k].sigmoid()));
            }
            Op::Log(x) => {
                let xv = self.nodes[*x].value.data();
                acc(*x, grads, &|t| zip_acc(t, &|k| gd[k] / xv[k]));
            }
            Op::Exp(x) => {
                let y = out.data();
                acc(*x, grads, &|t| zip_acc(t, &|k| gd[k] * y[k]));
            }
            Op::Square(x) => {
                let xv = self.nodes[*x].value.data();
                let two = T::one() + T::one();
                acc(*x, grads, &|t| zip_acc(t, &|k| gd[k] * two * xv[k]));
            }
            Op::Elementwise { x, deriv } => {
                let xv = self.nodes[*x].value.data();
                acc(*x, grads, &|t| zip_acc(t, &|k| gd[k] * deriv(xv[k])));
            }
            Op::MaskedSoftmax(x) => {
                let cols = out.cols();
                acc(*x, grads, &|t| {
                    let td = t.data_mut();
                    for r in 0..out.rows() {
                        let y = out.row_slice(r);
                        let gr = &gd[r * cols..(r + 1) * cols];
                        let dot: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for c in 0..cols {
                            td[r * cols + c] += y[c] * (gr[c] - dot);
                        }
                    }
                });
            }
            Op::TokenWeightedSum {
                weights,
                emb,
                width,
            } => {
                let width = *width;
                let wv = &self.nodes[*weights].value;
                let ev = &self.nodes[*emb].value;
                let (rows, n) = (wv.rows(), wv.cols());
                acc(*weights, grads, &|t| {
                    let td = t.data_mut();
                    for r in 0..rows {
                        let gr = &gd[r * width..(r + 1) * width];
                        let er = ev.row_slice(r);
                        for i in 0..n {
                            let e = &er[i * width..(i + 1) * width];
                            td[r * n + i] += e.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
                        }
                    }
                });
                acc(*emb, grads, &|t| {
                    let td = t.data_mut();
                    for r in 0..rows {
                        let gr = &gd[r * width..(r + 1) * width];
                        let wr = wv.row_slice(r);
                        let base = r * n * width;
                        for i in 0..n {
                            let a = wr[i];
                            if a == T::zero() {
                                continue;
                            }
                            let seg = &mut td[base + i * width..base + (i + 1) * width];
                            for (d, &gj) in seg.iter_mut().zip(gr) {
                                *d += a * gj;
                            }
                        }
                    }
                });
            }
            Op::Embed { table, ids, mask } => {
                let width = self.nodes[*table].value.cols();
                acc(*table, grads, &|t| {
                    let td = t.data_mut();
                    for (slot, (&id, &keep)) in ids.iter().zip(mask).enumerate() {
                        if !keep {
                            continue;
                        }
                        let src = &gd[slot * width..(slot + 1) * width];
                        for (d, &s) in td[id * width..(id + 1) * width].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[*a].value.cols();
                let cb = self.nodes[*b].value.cols();
                let cols = ca + cb;
                acc(*a, grads, &|t| {
                    let td = t.data_mut();
                    for r in 0..out.rows() {
                        for c in 0..ca {
                            td[r * ca + c] += gd[r * cols + c];
                        }
                    }
                });
                acc(*b, grads, &|t| {
                    let td = t.data_mut();
                    for r in 0..out.rows() {
                        for c in 0..cb {
                            td[r * cb + c] += gd[r * cols + ca + c];
                        }
                    }
                });
            }
            Op::ConcatRows(a, b) => {
                let na = self.nodes[*a].value.len();
                acc(*a, grads, &|t| zip_acc(t, &|k| gd[k]));
                acc(*b, grads, &|t| zip_acc(t, &|k| gd[na + k]));
            }
            Op::SelectRows { x, idx } => {
                let cols = out.cols();
                acc(*x, grads, &|t| {
                    let td = t.data_mut();
                    for (r, &src) in idx.iter().enumerate() {
                        for c in 0..cols {
                            td[src * cols + c] += gd[r * cols + c];
                        }
                    }
                });
            }
            Op::SumCols(x) => {
                let cols = self.nodes[*x].value.cols();
                acc(*x, grads, &|t| zip_acc(t, &|k| gd[k / cols]));
            }
            Op::MeanAll(x) => {
                let n = T::from_usize(self.nodes[*x].value.len()).expect("length fits scalar");
                let g0 = gd[0] / n;
                acc(*x, grads, &|t| zip_acc(t, &|_| g0));
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let cols = probs.cols();
                acc(*logits, grads, &|t| {
                    let td = t.data_mut();
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..cols {
                            let onehot = if c == label { T::one() } else { T::zero() };
                            td[r * cols + c] += gd[r] * (probs.get(r, c) - onehot);
                        }
                    }
                });
            }
        }
    }
}
