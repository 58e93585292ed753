use std::cell::RefCell;
use std::rc::Rc;

use super::conv::ConvGeometry;
use super::{Scalar, Tensor};

#[derive(Clone)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Minimum(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Tanh(usize),
    Sigmoid(usize),
    Elu(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    ClampMin(usize, T),
    Sum(usize),
    Mean(usize),
    SumCols(usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
    Reshape(usize),
    Conv {
        x: usize,
        w: usize,
        b: usize,
        geom: ConvGeometry,
        cols: Rc<Vec<T>>,
    },
    ConvTranspose {
        x: usize,
        w: usize,
        b: usize,
        geom: ConvGeometry,
    },
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records operations for a single forward pass and replays them in reverse.
///
/// A tape is meant to be short-lived: build one per loss evaluation, call
/// [`Tape::backward`], then drop it.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(1024)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, parents: &[usize]) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = parents.iter().any(|&p| nodes[p].needs_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn leaf(&self, value: Rc<Tensor<T>>, needs_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&self, value: Rc<Tensor<T>>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(Rc::new(value), false)
    }

    pub fn constant_rc(&self, value: Rc<Tensor<T>>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t, T>]) -> Var<'t, T> {
        assert!(!parts.is_empty());
        let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let rows = vals[0].rows();
        let cols: usize = vals.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for v in &vals {
                assert_eq!(v.rows(), rows, "concat_cols row mismatch");
                data.extend_from_slice(v.row(r));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        self.push(Tensor::new(rows, cols, data), Op::ConcatCols(ids.clone()), &ids)
    }

    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t, T>]) -> Var<'t, T> {
        assert!(!parts.is_empty());
        let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = vals.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::vstack(&refs);
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        self.push(out, Op::ConcatRows(ids.clone()), &ids)
    }

    /// Reverse pass from a 1×1 `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.len(), 1, "backward() needs a scalar loss");
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![T::one()]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            let out = &node.value;
            let val = |i: usize| nodes[i].value.clone();
            let wants = |i: usize| nodes[i].needs_grad;
            let mut acc = |i: usize, f: &mut dyn FnMut(&mut [T])| {
                if !nodes[i].needs_grad {
                    return;
                }
                let slot = grads[i].get_or_insert_with(|| vec![T::zero(); nodes[i].value.len()]);
                f(slot);
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    if wants(*a) {
                        acc(*a, &mut |s| T::gemm(m, n, k, &g, false, bv.data(), true, s, true));
                    }
                    if wants(*b) {
                        acc(*b, &mut |s| T::gemm(k, m, n, av.data(), true, &g, false, s, true));
                    }
                }
                Op::AddRow(a, b) => {
                    acc(*a, &mut |s| add_into(s, &g));
                    let n = out.cols();
                    acc(*b, &mut |s| {
                        for row in g.chunks(n) {
                            add_into(s, row);
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |s| add_into(s, &g));
                    acc(*b, &mut |s| add_into(s, &g));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |s| add_into(s, &g));
                    acc(*b, &mut |s| s.iter_mut().zip(&g).for_each(|(x, &d)| *x = *x - d));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    acc(*a, &mut |s| zip3(s, &g, bv.data(), |d, y| d * y));
                    acc(*b, &mut |s| zip3(s, &g, av.data(), |d, x| d * x));
                }
                Op::Div(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    acc(*a, &mut |s| zip3(s, &g, bv.data(), |d, y| d / y));
                    acc(*b, &mut |s| {
                        for ((x, &d), (&p, &q)) in s.iter_mut().zip(&g).zip(av.data().iter().zip(bv.data())) {
                            *x = *x - d * p / (q * q);
                        }
                    });
                }
                Op::Minimum(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    acc(*a, &mut |s| {
                        for ((x, &d), (&p, &q)) in s.iter_mut().zip(&g).zip(av.data().iter().zip(bv.data())) {
                            if p <= q {
                                *x = *x + d;
                            }
                        }
                    });
                    acc(*b, &mut |s| {
                        for ((x, &d), (&p, &q)) in s.iter_mut().zip(&g).zip(av.data().iter().zip(bv.data())) {
                            if p > q {
                                *x = *x + d;
                            }
                        }
                    });
                }
                Op::Scale(a, c) => acc(*a, &mut |s| zip2(s, &g, |d| d * *c)),
                Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |s| add_into(s, &g)),
                Op::Tanh(a) => acc(*a, &mut |s| zip3(s, &g, out.data(), |d, y| d * (T::one() - y * y))),
                Op::Sigmoid(a) => acc(*a, &mut |s| zip3(s, &g, out.data(), |d, y| d * y * (T::one() - y))),
                Op::Elu(a) => {
                    let xv = val(*a);
                    acc(*a, &mut |s| {
                        for ((x, &d), (&inp, &y)) in s.iter_mut().zip(&g).zip(xv.data().iter().zip(out.data())) {
                            *x = *x + if inp > T::zero() { d } else { d * (y + T::one()) };
                        }
                    });
                }
                Op::Softplus(a) => {
                    let xv = val(*a);
                    acc(*a, &mut |s| zip3(s, &g, xv.data(), |d, x| d * sigmoid(x)));
                }
                Op::Exp(a) => acc(*a, &mut |s| zip3(s, &g, out.data(), |d, y| d * y)),
                Op::Log(a) => {
                    let xv = val(*a);
                    acc(*a, &mut |s| zip3(s, &g, xv.data(), |d, x| d / x));
                }
                Op::Square(a) => {
                    let xv = val(*a);
                    let two = T::one() + T::one();
                    acc(*a, &mut |s| zip3(s, &g, xv.data(), |d, x| two * d * x));
                }
                Op::ClampMin(a, c) => {
                    let xv = val(*a);
                    acc(*a, &mut |s| zip3(s, &g, xv.data(), |d, x| if x > *c { d } else { T::zero() }));
                }
                Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|x| *x = *x + g[0])),
                Op::Mean(a) => {
                    let n = T::from_usize(nodes[*a].value.len()).unwrap();
                    acc(*a, &mut |s| s.iter_mut().for_each(|x| *x = *x + g[0] / n));
                }
                Op::SumCols(a) => {
                    let n = nodes[*a].value.cols();
                    acc(*a, &mut |s| {
                        for (row, &d) in s.chunks_mut(n).zip(&g) {
                            row.iter_mut().for_each(|x| *x = *x + d);
                        }
                    });
                }
                Op::ConcatCols(ids) => {
                    let total = out.cols();
                    let mut offset = 0;
                    for &p in ids {
                        let n = nodes[p].value.cols();
                        acc(p, &mut |s| {
                            for (dst, src) in s.chunks_mut(n).zip(g.chunks(total)) {
                                add_into(dst, &src[offset..offset + n]);
                            }
                        });
                        offset += n;
                    }
                }
                Op::SliceCols(a, start) => {
                    let total = nodes[*a].value.cols();
                    let n = out.cols();
                    acc(*a, &mut |s| {
                        for (dst, src) in s.chunks_mut(total).zip(g.chunks(n)) {
                            add_into(&mut dst[*start..*start + n], src);
                        }
                    });
                }
                Op::ConcatRows(ids) => {
                    let mut offset = 0;
                    for &p in ids {
                        let n = nodes[p].value.len();
                        acc(p, &mut |s| add_into(s, &g[offset..offset + n]));
                        offset += n;
                    }
                }
                Op::SliceRows(a, start) => {
                    let cols = out.cols();
                    let off = start * cols;
                    acc(*a, &mut |s| add_into(&mut s[off..off + g.len()], &g));
                }
                Op::Conv { x, w, b, geom, cols } => {
                    let rows = out.rows() * geom.out_h * geom.out_w;
                    let (pl, co) = (geom.patch_len(), geom.out_c);
                    if wants(*w) {
                        acc(*w, &mut |s| T::gemm(pl, rows, co, &cols[..], true, &g, false, s, true));
                    }
                    acc(*b, &mut |s| {
                        for px in g.chunks(co) {
                            add_into(s, px);
                        }
                    });
                    if wants(*x) {
                        let wv = val(*w);
                        let mut dcols = vec![T::zero(); rows * pl];
                        T::gemm(rows, co, pl, &g, false, wv.data(), true, &mut dcols, false);
                        let dx = geom.col2im(&dcols, out.rows());
                        acc(*x, &mut |s| add_into(s, &dx));
                    }
                }
                Op::ConvTranspose { x, w, b, geom } => {
                    let n = out.rows();
                    let rows = n * geom.out_h * geom.out_w;
                    let (pl, ci) = (geom.patch_len(), geom.out_c);
                    let dcols = geom.im2col(&g, n);
                    if wants(*x) {
                        let wv = val(*w);
                        acc(*x, &mut |s| T::gemm(rows, pl, ci, &dcols, false, wv.data(), true, s, true));
                    }
                    if wants(*w) {
                        let xv = val(*x);
                        acc(*w, &mut |s| T::gemm(ci, rows, pl, xv.data(), true, &dcols, false, s, true));
                    }
                    let c = geom.in_c;
                    acc(*b, &mut |s| {
                        for px in g.chunks(c) {
                            add_into(s, px);
                        }
                    });
                }
            }
        }

        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        Gradients { grads, shapes }
    }
}

/// Gradients of a scalar loss with respect to tape leaves.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`; zeros if `v` did not influence it.
    pub fn get(&self, v: Var<'_, T>) -> Tensor<T> {
        let (r, c) = self.shapes[v.id];
        match &self.grads[v.id] {
            Some(g) => Tensor::new(r, c, g.clone()),
            None => Tensor::zeros(r, c),
        }
    }

    pub fn take(&mut self, v: Var<'_, T>) -> Tensor<T> {
        let (r, c) = self.shapes[v.id];
        match self.grads[v.id].take() {
            Some(g) => Tensor::new(r, c, g),
            None => Tensor::zeros(r, c),
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    debug_assert_eq!(dst.len(), src.len());
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
}

#[inline]
fn zip2<T: Scalar>(dst: &mut [T], g: &[T], f: impl Fn(T) -> T) {
    dst.iter_mut().zip(g).for_each(|(d, &x)| *d = *d + f(x));
}

#[inline]
fn zip3<T: Scalar>(dst: &mut [T], g: &[T], other: &[T], f: impl Fn(T, T) -> T) {
    for ((d, &x), &y) in dst.iter_mut().zip(g).zip(other) {
        *d = *d + f(x, y);
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    /// Same value, cut off from the gradient.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant_rc(self.value())
    }

    fn unary(&self, op: Op<T>, f: impl Fn(T) -> T) -> Var<'t, T> {
        let v = self.value().map(f);
        self.tape.push(v, op, &[self.id])
    }

    fn binary(&self, other: Var<'t, T>, op: Op<T>, f: impl Fn(T, T) -> T) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        self.tape
            .push(Tensor::new(a.rows(), a.cols(), data), op, &[self.id, other.id])
    }

    pub fn matmul(&self, other: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.cols(), b.rows(), "matmul inner dimension mismatch");
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
        self.tape
            .push(Tensor::new(m, n, out), Op::MatMul(self.id, other.id), &[self.id, other.id])
    }

    /// Adds a `1×n` row to every row.
    pub fn add_row(&self, row: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), row.value());
        assert_eq!(b.len(), a.cols(), "bias length mismatch");
        let mut data = a.data().to_vec();
        for r in data.chunks_mut(a.cols()) {
            add_into(r, b.data());
        }
        self.tape.push(
            Tensor::new(a.rows(), a.cols(), data),
            Op::AddRow(self.id, row.id),
            &[self.id, row.id],
        )
    }

    pub fn div(&self, other: Var<'t, T>) -> Var<'t, T> {
        self.binary(other, Op::Div(self.id, other.id), |x, y| x / y)
    }

    pub fn minimum(&self, other: Var<'t, T>) -> Var<'t, T> {
        self.binary(other, Op::Minimum(self.id, other.id), |x, y| if x <= y { x } else { y })
    }

    pub fn scale(&self, c: T) -> Var<'t, T> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn add_scalar(&self, c: T) -> Var<'t, T> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn tanh(&self) -> Var<'t, T> {
        self.unary(Op::Tanh(self.id), |x| x.tanh())
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn elu(&self) -> Var<'t, T> {
        self.unary(Op::Elu(self.id), |x| if x > T::zero() { x } else { x.exp() - T::one() })
    }

    pub fn softplus(&self) -> Var<'t, T> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn exp(&self) -> Var<'t, T> {
        self.unary(Op::Exp(self.id), |x| x.exp())
    }

    pub fn ln(&self) -> Var<'t, T> {
        self.unary(Op::Log(self.id), |x| x.ln())
    }

    pub fn square(&self) -> Var<'t, T> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    /// `max(x, c)` elementwise; no gradient flows where `x ≤ c`.
    pub fn clamp_min(&self, c: T) -> Var<'t, T> {
        self.unary(Op::ClampMin(self.id, c), |x| x.max(c))
    }

    pub fn sum(&self) -> Var<'t, T> {
        let s = self.value().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(&self) -> Var<'t, T> {
        let m = self.value().mean();
        self.tape.push(Tensor::scalar(m), Op::Mean(self.id), &[self.id])
    }

    /// Sums each row, giving an `m×1` column.
    pub fn sum_cols(&self) -> Var<'t, T> {
        let v = self.value();
        let data = (0..v.rows()).map(|r| v.row(r).iter().copied().sum()).collect();
        self.tape
            .push(Tensor::new(v.rows(), 1, data), Op::SumCols(self.id), &[self.id])
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Var<'t, T> {
        let v = self.value();
        assert!(start + len <= v.cols(), "slice_cols out of range");
        let mut data = Vec::with_capacity(v.rows() * len);
        for r in 0..v.rows() {
            data.extend_from_slice(&v.row(r)[start..start + len]);
        }
        self.tape
            .push(Tensor::new(v.rows(), len, data), Op::SliceCols(self.id, start), &[self.id])
    }

    pub fn slice_rows(&self, start: usize, count: usize) -> Var<'t, T> {
        let v = self.value();
        assert!(start + count <= v.rows(), "slice_rows out of range");
        self.tape
            .push(v.slice_rows(start, count), Op::SliceRows(self.id, start), &[self.id])
    }

    pub fn reshape(&self, rows: usize, cols: usize) -> Var<'t, T> {
        let v = self.value().as_ref().clone().reshaped(rows, cols);
        self.tape.push(v, Op::Reshape(self.id), &[self.id])
    }

    /// 2-D convolution. `self` is `n × geom.in_size()` (HWC per row), `weight`
    /// is `patch_len × out_c`, `bias` is `1 × out_c`.
    pub fn conv2d(&self, weight: Var<'t, T>, bias: Var<'t, T>, geom: ConvGeometry) -> Var<'t, T> {
        let x = self.value();
        assert_eq!(x.cols(), geom.in_size(), "conv input size mismatch");
        let wv = weight.value();
        assert_eq!(wv.shape(), (geom.patch_len(), geom.out_c), "conv weight shape mismatch");
        let n = x.rows();
        let cols = geom.im2col(x.data(), n);
        let rows = n * geom.out_h * geom.out_w;
        let mut out = vec![T::zero(); rows * geom.out_c];
        T::gemm(rows, geom.patch_len(), geom.out_c, &cols, false, wv.data(), false, &mut out, false);
        let bv = bias.value();
        for px in out.chunks_mut(geom.out_c) {
            add_into(px, bv.data());
        }
        self.tape.push(
            Tensor::new(n, geom.out_size(), out),
            Op::Conv {
                x: self.id,
                w: weight.id,
                b: bias.id,
                geom,
                cols: Rc::new(cols),
            },
            &[self.id, weight.id, bias.id],
        )
    }

    /// Transposed convolution: the adjoint of [`conv2d`](Self::conv2d) with
    /// geometry `geom`. `self` is `n × geom.out_size()`, `weight` is
    /// `out_c × patch_len`, `bias` is `1 × in_c`; the result is
    /// `n × geom.in_size()`.
    pub fn conv_transpose2d(&self, weight: Var<'t, T>, bias: Var<'t, T>, geom: ConvGeometry) -> Var<'t, T> {
        let x = self.value();
        assert_eq!(x.cols(), geom.out_size(), "transposed conv input size mismatch");
        let wv = weight.value();
        assert_eq!(wv.shape(), (geom.out_c, geom.patch_len()), "transposed conv weight shape mismatch");
        let n = x.rows();
        let rows = n * geom.out_h * geom.out_w;
        let mut cols = vec![T::zero(); rows * geom.patch_len()];
        T::gemm(rows, geom.out_c, geom.patch_len(), x.data(), false, wv.data(), false, &mut cols, false);
        let mut out = geom.col2im(&cols, n);
        let bv = bias.value();
        for px in out.chunks_mut(geom.in_c) {
            add_into(px, bv.data());
        }
        self.tape.push(
            Tensor::new(n, geom.in_size(), out),
            Op::ConvTranspose {
                x: self.id,
                w: weight.id,
                b: bias.id,
                geom,
            },
            &[self.id, weight.id, bias.id],
        )
    }
}

impl<'t, T: Scalar> std::ops::Add for Var<'t, T> {
    type Output = Var<'t, T>;
    fn add(self, rhs: Self) -> Self::Output {
        self.binary(rhs, Op::Add(self.id, rhs.id), |x, y| x + y)
    }
}

impl<'t, T: Scalar> std::ops::Sub for Var<'t, T> {
    type Output = Var<'t, T>;
    fn sub(self, rhs: Self) -> Self::Output {
        self.binary(rhs, Op::Sub(self.id, rhs.id), |x, y| x - y)
    }
}

impl<'t, T: Scalar> std::ops::Mul for Var<'t, T> {
    type Output = Var<'t, T>;
    fn mul(self, rhs: Self) -> Self::Output {
        self.binary(rhs, Op::Mul(self.id, rhs.id), |x, y| x * y)
    }
}

impl<'t, T: Scalar> std::ops::Neg for Var<'t, T> {
    type Output = Var<'t, T>;
    fn neg(self) -> Self::Output {
        self.scale(-T::one())
    }
}
