//! A small reverse-mode automatic differentiation tape over dense `f64`
//! matrices.
//!
//! Every value is a 2-D matrix; vectors are `1 × n` or `n × 1`. The tape is
//! rebuilt for every forward pass: register leaves with [`Tape::leaf`], build
//! the expression with the op methods, then call [`Tape::backward`] on a
//! `1 × 1` result.

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Sqrt(Var),
    Square(Var),
    SumAll(Var),
    SumCols(Var),
    Transpose(Var),
    Gather(Var, Rc<[usize]>),
    ScatterAdd(Var, Rc<[usize]>),
    SegmentSoftmax(Var, Rc<[usize]>),
    LogSoftmax(Var),
    Pick(Var, Rc<[usize]>),
    ConcatCols(Var, Var),
    NormalizeRows(Var),
    Detach,
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient for `v`; zeros if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn row_log_softmax(a: &Mat) -> Mat {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
        let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|x| x - lse);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A constant: no gradient flows into or through it.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Detach)
    }

    /// Copy of `a` cut off from the graph.
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.push(v, Op::Detach)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// `a (n×c) + row (1×c)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    /// `a (n×c) ⊙ row (1×c)` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    /// `a (n×c) ⊙ col (n×1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let v = self.value(a) * self.value(col);
        self.push(v, Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        self.push(v, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Sum of all entries, as `1 × 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums, `n × c → n × 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumCols(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    /// Rows of `a` selected by `index` (with repetition).
    pub fn gather_rows(&mut self, a: Var, index: impl Into<Rc<[usize]>>) -> Var {
        let index = index.into();
        let v = self.value(a).select(Axis(0), &index);
        self.push(v, Op::Gather(a, index))
    }

    /// Segment sum: output row `target[i]` accumulates input row `i`.
    pub fn scatter_add_rows(&mut self, a: Var, target: impl Into<Rc<[usize]>>, rows: usize) -> Var {
        let target = target.into();
        let src = self.value(a);
        assert_eq!(src.nrows(), target.len(), "scatter index length");
        let mut v = Mat::zeros((rows, src.ncols()));
        for (i, &t) in target.iter().enumerate() {
            let mut dst = v.row_mut(t);
            dst += &src.row(i);
        }
        self.push(v, Op::ScatterAdd(a, target))
    }

    /// Softmax of an `n × 1` score column within each segment.
    pub fn segment_softmax(&mut self, scores: Var, segment: impl Into<Rc<[usize]>>) -> Var {
        let segment = segment.into();
        let x = self.value(scores);
        assert_eq!(x.ncols(), 1, "segment softmax expects a column");
        let segs = segment.iter().copied().max().map_or(0, |m| m + 1);
        let mut maxes = vec![f64::NEG_INFINITY; segs];
        for (i, &s) in segment.iter().enumerate() {
            maxes[s] = maxes[s].max(x[[i, 0]]);
        }
        let mut sums = vec![0.0; segs];
        let mut v = Mat::zeros(x.raw_dim());
        for (i, &s) in segment.iter().enumerate() {
            let e = (x[[i, 0]] - maxes[s]).exp();
            v[[i, 0]] = e;
            sums[s] += e;
        }
        for (i, &s) in segment.iter().enumerate() {
            v[[i, 0]] /= sums[s];
        }
        self.push(v, Op::SegmentSoftmax(scores, segment))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = row_log_softmax(self.value(a));
        self.push(v, Op::LogSoftmax(a))
    }

    /// Picks entry `a[i, col[i]]` of every row, `n × c → n × 1`.
    pub fn pick(&mut self, a: Var, col: impl Into<Rc<[usize]>>) -> Var {
        let col = col.into();
        let src = self.value(a);
        let v = Mat::from_shape_fn((col.len(), 1), |(i, _)| src[[i, col[i]]]);
        self.push(v, Op::Pick(a, col))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let v = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat_cols requires equal row counts");
        self.push(v, Op::ConcatCols(a, b))
    }

    /// Scales every row to unit L2 norm. Rows must be nonzero.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let n = row.dot(&row).sqrt();
            row.mapv_inplace(|x| x / n);
        }
        self.push(v, Op::NormalizeRows(a))
    }

    /// Row-wise Euclidean norm, `n × c → n × 1`.
    pub fn row_norms(&mut self, a: Var) -> Var {
        let sq = self.square(a);
        let s = self.sum_cols(sq);
        self.sqrt(s)
    }

    /// Gradients of the `1 × 1` node `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Mat::from_elem((1, 1), 1.0));

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = &node.value;
            match &node.op {
                Op::Leaf | Op::Detach => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, -&g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * self.value(*b));
                    acc(&mut grads, *b, &g * self.value(*a));
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g.clone());
                }
                Op::MulRow(a, row) => {
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, &g * self.value(*row));
                }
                Op::MulCol(a, col) => {
                    let gc = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *col, gc);
                    acc(&mut grads, *a, &g * self.value(*col));
                }
                Op::Scale(a, k) => acc(&mut grads, *a, &g * *k),
                Op::AddScalar(a) => acc(&mut grads, *a, g.clone()),
                Op::Sigmoid(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(val).for_each(|d, &y| *d *= y * (1.0 - y));
                    acc(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(val).for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(&mut grads, *a, d);
                }
                Op::Relu(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(&mut grads, *a, d);
                }
                Op::Sqrt(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(val).for_each(|d, &y| *d = if y > 0.0 { *d / (2.0 * y) } else { 0.0 });
                    acc(&mut grads, *a, d);
                }
                Op::Square(a) => {
                    let d = &g * self.value(*a) * 2.0;
                    acc(&mut grads, *a, d);
                }
                Op::SumAll(a) => {
                    let d = Mat::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    acc(&mut grads, *a, d);
                }
                Op::SumCols(a) => {
                    let shape = self.value(*a).raw_dim();
                    let d = g.broadcast(shape).expect("column broadcast").to_owned();
                    acc(&mut grads, *a, d);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Gather(a, index) => {
                    let mut d = Mat::zeros(self.value(*a).raw_dim());
                    for (i, &r) in index.iter().enumerate() {
                        let mut dst = d.row_mut(r);
                        dst += &g.row(i);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::ScatterAdd(a, target) => {
                    let d = g.select(Axis(0), target);
                    acc(&mut grads, *a, d);
                }
                Op::SegmentSoftmax(a, segment) => {
                    let segs = segment.iter().copied().max().map_or(0, |m| m + 1);
                    let mut dots = vec![0.0; segs];
                    for (i, &s) in segment.iter().enumerate() {
                        dots[s] += g[[i, 0]] * val[[i, 0]];
                    }
                    let d = Mat::from_shape_fn(val.raw_dim(), |(i, _)| val[[i, 0]] * (g[[i, 0]] - dots[segment[i]]));
                    acc(&mut grads, *a, d);
                }
                Op::LogSoftmax(a) => {
                    let mut d = g.clone();
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(val.rows()) {
                        let gs = drow.sum();
                        Zip::from(&mut drow).and(&yrow).for_each(|d, &y| *d -= y.exp() * gs);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Pick(a, col) => {
                    let mut d = Mat::zeros(self.value(*a).raw_dim());
                    for (i, &c) in col.iter().enumerate() {
                        d[[i, c]] += g[[i, 0]];
                    }
                    acc(&mut grads, *a, d);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).ncols();
                    acc(&mut grads, *a, g.slice(s![.., ..ca]).to_owned());
                    acc(&mut grads, *b, g.slice(s![.., ca..]).to_owned());
                }
                Op::NormalizeRows(a) => {
                    let x = self.value(*a);
                    let mut d = Mat::zeros(x.raw_dim());
                    for i in 0..x.nrows() {
                        let n = x.row(i).dot(&x.row(i)).sqrt();
                        let y = val.row(i);
                        let gi = g.row(i);
                        let proj = y.dot(&gi);
                        let mut di = d.row_mut(i);
                        Zip::from(&mut di).and(&gi).and(&y).for_each(|d, &g, &y| *d = (g - y * proj) / n);
                    }
                    acc(&mut grads, *a, d);
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central differences of `f` around `x`, entry by entry.
    fn numeric(x: &Mat, f: &dyn Fn(&Mat) -> f64) -> Mat {
        let h = 1e-6;
        let mut g = Mat::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut p = x.clone();
            p[[r, c]] += h;
            let mut m = x.clone();
            m[[r, c]] -= h;
            g[[r, c]] = (f(&p) - f(&m)) / (2.0 * h);
        }
        g
    }

    fn check(x: Mat, build: impl Fn(&mut Tape, Var) -> Var) {
        let eval = |m: &Mat| {
            let mut t = Tape::new();
            let v = t.leaf(m.clone());
            let o = build(&mut t, v);
            t.scalar(o)
        };
        let mut t = Tape::new();
        let v = t.leaf(x.clone());
        let o = build(&mut t, v);
        let g = t.backward(o);
        let analytic = g.get(v).cloned().unwrap_or_else(|| Mat::zeros(x.raw_dim()));
        let num = numeric(&x, &eval);
        let err = (&analytic - &num).mapv(f64::abs).fold(0.0_f64, |a, &b| a.max(b));
        assert!(err < 1e-6, "max abs err {err}\nanalytic {analytic}\nnumeric {num}");
    }

    fn sample() -> Mat {
        array![[0.3, -1.2, 0.7], [1.1, 0.4, -0.5], [-0.8, 0.9, 0.2], [0.05, -0.3, 1.4]]
    }

    #[test]
    fn elementwise_and_reductions() {
        check(sample(), |t, x| {
            let a = t.sigmoid(x);
            let b = t.tanh(x);
            let c = t.mul(a, b);
            let d = t.square(c);
            let e = t.add_scalar(d, 1.0);
            let f = t.sqrt(e);
            let g = t.scale(f, 0.7);
            let h = t.relu(x);
            let i = t.sub(g, h);
            t.mean(i)
        });
    }

    #[test]
    fn matmul_broadcasts_and_concat() {
        let w = array![[0.2, -0.1], [0.4, 0.3], [-0.6, 0.5]];
        check(sample(), move |t, x| {
            let wv = t.constant(w.clone());
            let y = t.matmul(x, wv);
            let rowv = t.constant(array![[0.1, -0.2]]);
            let y = t.add_row(y, rowv);
            let col = t.sum_cols(y);
            let z = t.mul_col(y, col);
            let r = t.gather_rows(x, vec![0, 0, 2]);
            let rt = t.transpose(r);
            let sq = t.matmul(rt, r);
            let zz = t.concat_cols(z, y);
            let a = t.sum(zz);
            let b = t.sum(sq);
            let row = t.gather_rows(x, vec![1]);
            let gated = t.mul_row(x, row);
            let c = t.sum(gated);
            let ab = t.add(a, b);
            t.add(ab, c)
        });
    }

    #[test]
    fn softmaxes_scatter_and_normalisation() {
        check(sample(), |t, x| {
            let scores = t.sum_cols(x);
            let alpha = t.segment_softmax(scores, vec![0, 1, 0, 0]);
            let weighted = t.mul_col(x, alpha);
            let agg = t.scatter_add_rows(weighted, vec![1, 0, 1, 1], 2);
            let ls = t.log_softmax(x);
            let picked = t.pick(ls, vec![0, 2, 1, 1]);
            let n = t.normalize_rows(x);
            let norms = t.row_norms(agg);
            let a = t.sum(picked);
            let nn = t.gather_rows(n, vec![3]);
            let nt = t.transpose(nn);
            let prod = t.matmul(n, nt);
            let sq = t.square(prod);
            let b = t.sum(sq);
            let c = t.sum(norms);
            let ab = t.add(a, b);
            t.add(ab, c)
        });
    }

    #[test]
    fn segment_softmax_sums_to_one() {
        let mut t = Tape::new();
        let x = t.leaf(array![[0.3], [2.0], [-1.0], [0.5], [4.0]]);
        let a = t.segment_softmax(x, vec![2, 0, 2, 0, 1]);
        let v = t.value(a);
        assert!((v[[1, 0]] + v[[3, 0]] - 1.0).abs() < 1e-12);
        assert!((v[[0, 0]] + v[[2, 0]] - 1.0).abs() < 1e-12);
        assert_eq!(v[[4, 0]], 1.0);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, 2.0]]);
        let d = t.detach(x);
        let y = t.mul(x, d);
        let s = t.sum(y);
        let g = t.backward(s);
        assert_eq!(g.get(x).unwrap(), &array![[1.0, 2.0]]);
    }
}
