//! Reverse-mode automatic differentiation over 2-D `f64` tensors.
//!
//! A [`Tape`] records operations as they are evaluated; [`Tape::backward`]
//! walks the record in reverse and accumulates parameter gradients.
//! Parameters are read in place from a borrowed [`ParamStore`].

use ndarray::{concatenate, s, Array2, Axis, Zip};

use crate::error::{NnError, Result};
use crate::params::{Grads, ParamStore};

pub const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    LayerNorm(Var),
    Silu(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    BceLogit {
        a: Var,
        row: usize,
        col: usize,
        label: bool,
    },
    CrossEntropy {
        a: Var,
        row: usize,
        target: usize,
    },
    SqErr {
        a: Var,
        target: Array2<f64>,
        mask: Array2<f64>,
    },
}

struct Node {
    op: Op,
    value: Option<Array2<f64>>,
    // LayerNorm: per-row 1/σ; softmax and activations reuse `value`
    aux: Option<Array2<f64>>,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let th = (C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn scalar(x: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), x)
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: vec![] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Array2<f64>, aux: Option<Array2<f64>>) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            aux,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        match &self.nodes[v.0].op {
            Op::Param(i) => self.params.get(*i),
            _ => self.nodes[v.0].value.as_ref().expect("non-parameter nodes hold values"),
        }
    }

    pub fn input(&mut self, x: Array2<f64>) -> Var {
        self.push(Op::Input, x, None)
    }

    pub fn param(&mut self, i: usize) -> Var {
        self.nodes.push(Node {
            op: Op::Param(i),
            value: None,
            aux: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), v, None)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(Op::MatMulNt(a, b), v, None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v, None)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v, None)
    }

    /// `a + row` with `row` of shape `1 × n` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(Op::AddRow(a, row), v, None)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        self.push(Op::Scale(a, s), v, None)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(Op::AddConst(a), v, None)
    }

    /// Per-row normalization to zero mean and unit variance, no affine part.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.ncols() as f64;
        let mut y = x.clone();
        let mut inv = Array2::zeros((x.nrows(), 1));
        for (mut row, r) in y.rows_mut().into_iter().zip(inv.iter_mut()) {
            let m = row.sum() / n;
            let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            *r = 1.0 / (var + LN_EPS).sqrt();
            let rr = *r;
            row.mapv_inplace(|v| (v - m) * rr);
        }
        self.push(Op::LayerNorm(a), y, Some(inv))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * sigmoid(x));
        self.push(Op::Silu(a), v, None)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(Op::Gelu(a), v, None)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut y = self.value(a).clone();
        for mut row in y.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        self.push(Op::SoftmaxRows(a), y, None)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(Op::SliceCols(a, start), v, None)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("row counts agree");
        self.push(Op::ConcatCols(parts.to_vec()), v, None)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("column counts agree");
        self.push(Op::ConcatRows(parts.to_vec()), v, None)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), idx);
        self.push(Op::GatherRows(a, idx.to_vec()), v, None)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = scalar(self.value(a).sum());
        self.push(Op::Sum(a), v, None)
    }

    /// Binary cross-entropy on the logit `a[row, col]`.
    pub fn bce_logit(&mut self, a: Var, row: usize, col: usize, label: bool) -> Var {
        let l = self.value(a)[[row, col]];
        let y = if label { 1.0 } else { 0.0 };
        let v = scalar(softplus(l) - y * l);
        self.push(Op::BceLogit { a, row, col, label }, v, None)
    }

    /// Softmax cross-entropy of row `row` against class `target`.
    pub fn cross_entropy(&mut self, a: Var, row: usize, target: usize) -> Var {
        let r = self.value(a).row(row);
        let m = r.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
        let lse = m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let v = scalar(lse - r[target]);
        self.push(Op::CrossEntropy { a, row, target }, v, None)
    }

    /// `Σ mask · (a − target)²`.
    pub fn sq_err(&mut self, a: Var, target: Array2<f64>, mask: Array2<f64>) -> Var {
        let d = self.value(a) - &target;
        let v = scalar((&d * &d * &mask).sum());
        self.push(Op::SqErr { a, target, mask }, v, None)
    }

    /// Accumulates `scale · ∂loss/∂θ` into `grads`. `loss` must be `1 × 1`.
    pub fn backward(&self, loss: Var, scale: f64, grads: &mut Grads) -> Result<()> {
        if self.value(loss).dim() != (1, 1) {
            return Err(NnError::Graph("backward needs a scalar loss".into()));
        }
        let mut adj: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(scalar(scale));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, d: Array2<f64>| match &mut adj[v.0] {
                Some(x) => *x += &d,
                slot => *slot = Some(d),
            };
            match &node.op {
                Op::Input => {}
                Op::Param(p) => grads.tensors[*p] += &g,
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&self.value(*b).t()));
                    acc(*b, self.value(*a).t().dot(&g));
                }
                Op::MatMulNt(a, b) => {
                    acc(*a, g.dot(self.value(*b)));
                    acc(*b, g.t().dot(self.value(*a)));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * self.value(*b));
                    acc(*b, &g * self.value(*a));
                }
                Op::AddRow(a, row) => {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g);
                }
                Op::Scale(a, s) => acc(*a, g * *s),
                Op::AddConst(a) => acc(*a, g),
                Op::LayerNorm(a) => {
                    let y = node.value.as_ref().expect("value");
                    let inv = node.aux.as_ref().expect("ln cache");
                    let n = y.ncols() as f64;
                    let mut dx = Array2::zeros(y.raw_dim());
                    for r in 0..y.nrows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let mg = gr.sum() / n;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        let ir = inv[[r, 0]];
                        Zip::from(dx.row_mut(r))
                            .and(&gr)
                            .and(&yr)
                            .for_each(|d, &gg, &yy| *d = ir * (gg - mg - yy * mgy));
                    }
                    acc(*a, dx);
                }
                Op::Silu(a) => {
                    let x = self.value(*a);
                    let mut d = g;
                    Zip::from(&mut d).and(x).for_each(|d, &x| {
                        let s = sigmoid(x);
                        *d *= s * (1.0 + x * (1.0 - s));
                    });
                    acc(*a, d);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut d = g;
                    Zip::from(&mut d).and(x).for_each(|d, &x| *d *= gelu_grad(x));
                    acc(*a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().expect("value");
                    let mut d = &g * y;
                    for (mut dr, yr) in d.rows_mut().into_iter().zip(y.rows()) {
                        let s = dr.sum();
                        Zip::from(&mut dr).and(&yr).for_each(|d, &y| *d -= y * s);
                    }
                    acc(*a, d);
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(p, g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        acc(p, g.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    for (r, &src) in idx.iter().enumerate() {
                        let mut dst = d.row_mut(src);
                        dst += &g.row(r);
                    }
                    acc(*a, d);
                }
                Op::Sum(a) => {
                    let v = g[[0, 0]];
                    acc(*a, Array2::from_elem(self.value(*a).raw_dim(), v));
                }
                Op::BceLogit { a, row, col, label } => {
                    let l = self.value(*a)[[*row, *col]];
                    let y = if *label { 1.0 } else { 0.0 };
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    d[[*row, *col]] = g[[0, 0]] * (sigmoid(l) - y);
                    acc(*a, d);
                }
                Op::CrossEntropy { a, row, target } => {
                    let x = self.value(*a);
                    let r = x.row(*row);
                    let m = r.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
                    let z: f64 = r.iter().map(|v| (v - m).exp()).sum();
                    let mut d = Array2::zeros(x.raw_dim());
                    for (c, v) in r.iter().enumerate() {
                        d[[*row, c]] = g[[0, 0]] * ((v - m).exp() / z - if c == *target { 1.0 } else { 0.0 });
                    }
                    acc(*a, d);
                }
                Op::SqErr { a, target, mask } => {
                    let d = (self.value(*a) - target) * mask * (2.0 * g[[0, 0]]);
                    acc(*a, d);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use igd_core::rng::keyed_rng;

    type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

    fn check(shapes: &[(usize, usize)], build: &Build) {
        let mut ps = ParamStore::new();
        let mut rng = keyed_rng(3, &[]);
        for (i, &(r, c)) in shapes.iter().enumerate() {
            ps.normal(format!("p{i}"), r, c, 0.7, &mut rng);
        }
        let eval = |ps: &ParamStore| {
            let mut tape = Tape::new(ps);
            let vars: Vec<Var> = (0..ps.len()).map(|i| tape.param(i)).collect();
            let out = build(&mut tape, &vars);
            (tape.value(out)[[0, 0]], {
                let mut g = ps.zeros_like();
                tape.backward(out, 1.0, &mut g).unwrap();
                g
            })
        };
        let (_, g) = eval(&ps);
        let h = 1e-5;
        for p in 0..ps.len() {
            for idx in 0..ps.get(p).len() {
                let (r, c) = (idx / ps.get(p).ncols(), idx % ps.get(p).ncols());
                let mut plus = ps.clone();
                plus.get_mut(p)[[r, c]] += h;
                let mut minus = ps.clone();
                minus.get_mut(p)[[r, c]] -= h;
                let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let an = g.tensors[p][[r, c]];
                assert!(
                    (fd - an).abs() < 1e-6 * (1.0 + fd.abs()),
                    "param {p} [{r},{c}] fd {fd} an {an}"
                );
            }
        }
    }

    #[test]
    fn matmul_and_transposed_matmul() {
        check(&[(3, 4), (4, 2), (5, 2)], &|t, v| {
            let a = t.matmul(v[0], v[1]);
            let b = t.matmul_nt(a, v[2]);
            let c = t.mul(b, b);
            t.sum(c)
        });
    }

    #[test]
    fn normalization_and_activations() {
        check(&[(3, 5), (1, 5)], &|t, v| {
            let a = t.layer_norm(v[0]);
            let b = t.add_row(a, v[1]);
            let c = t.gelu(b);
            let d = t.silu(c);
            let e = t.softmax_rows(d);
            let f = t.mul(e, v[0]);
            let g = t.add_const(f, 0.3);
            let h = t.scale(g, -1.7);
            t.sum(h)
        });
    }

    #[test]
    fn slicing_concatenation_and_gathering() {
        check(&[(4, 6), (2, 3)], &|t, v| {
            let a = t.slice_cols(v[0], 1, 3);
            let b = t.slice_cols(v[0], 3, 3);
            let c = t.concat_cols(&[b, a]);
            let d = t.gather_rows(v[1], &[1, 0, 1, 1]);
            let e = t.concat_rows(&[d, v[1]]);
            let f = t.concat_cols(&[e, e]);
            let g = t.gather_rows(f, &[0, 1, 2, 3]);
            let h = t.mul(g, c);
            let i = t.mul(h, h);
            t.sum(i)
        });
    }

    #[test]
    fn losses() {
        check(&[(2, 4), (1, 3)], &|t, v| {
            let a = t.bce_logit(v[0], 1, 2, true);
            let b = t.bce_logit(v[0], 0, 3, false);
            let c = t.cross_entropy(v[0], 1, 0);
            let d = t.sq_err(
                v[1],
                ndarray::array![[0.5, -1.0, 2.0]],
                ndarray::array![[1.0, 0.0, 1.0]],
            );
            let ab = t.add(a, b);
            let cd = t.add(c, d);
            t.add(ab, cd)
        });
    }

    #[test]
    fn loss_values() {
        let ps = ParamStore::new();
        let mut t = Tape::new(&ps);
        let z = t.input(Array2::zeros((1, 4)));
        let bce = t.bce_logit(z, 0, 0, true);
        let ce = t.cross_entropy(z, 0, 2);
        assert!((t.value(bce)[[0, 0]] - 2f64.ln()).abs() < 1e-15);
        assert!((t.value(ce)[[0, 0]] - 4f64.ln()).abs() < 1e-15);
        let big = t.input(Array2::from_elem((1, 1), 40.0));
        let near_zero = t.bce_logit(big, 0, 0, true);
        assert!(t.value(near_zero)[[0, 0]] < 1e-15);
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let mut ps = ParamStore::new();
        ps.normal("w", 2, 2, 1.0, &mut keyed_rng(0, &[]));
        let mut t = Tape::new(&ps);
        let w = t.param(0);
        let z = t.scale(w, 0.0);
        let s = t.sum(z);
        let mut g = ps.zeros_like();
        t.backward(s, 1.0, &mut g).unwrap();
        assert!(g.tensors[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalars() {
        let ps = ParamStore::new();
        let mut t = Tape::new(&ps);
        let x = t.input(Array2::zeros((2, 2)));
        let mut g = ps.zeros_like();
        assert!(t.backward(x, 1.0, &mut g).is_err());
    }
}
