//! Reverse-mode tape.
//!
//! Every primitive appends one node holding its forward value. Nodes can
//! only reference earlier nodes, so creation order is a topological order
//! and the backward sweep simply walks the node list from the output down.

use super::kernels;
use super::tensor::{sign, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Relu(Var),
    Tanh(Var),
    Abs(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    SumCols(Var),
    Sum(Var),
    Mean(Var),
    RowNorm(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Record of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros if nothing flowed into it.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
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

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input or parameter. Rank-1 leaves are stored as single rows.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if sa.rows() != sb.rows() || sa.cols() != sb.cols() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                sa.shape(),
                sb.shape()
            )));
        }
        Ok(())
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.shape().len() != 2 || xv.cols() != wv.cols() || bv.len() != wv.rows() {
            return Err(Error::Shape(format!(
                "affine: input {:?}, weight {:?}, bias {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let y = kernels::affine(xv, wv, bv);
        Ok(self.push(y, Op::Affine { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = kernels::relu(self.value(x)).as_matrix();
        self.push(y, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = kernels::tanh(self.value(x)).as_matrix();
        self.push(y, Op::Tanh(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::abs).as_matrix();
        self.push(y, Op::Abs(x))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_parts(vec![av.rows(), av.cols()], data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let y = self.zip(a, b, |x, y| x + y);
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        let y = self.zip(a, b, |x, y| x - y);
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        let y = self.zip(a, b, |x, y| x * y);
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).map(|v| v * c).as_matrix();
        self.push(y, Op::Scale(x, c))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v * v).as_matrix();
        self.push(y, Op::Square(x))
    }

    /// Column-wise concatenation of equally tall matrices.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let rows = self.value(*first).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(Error::Shape("concat: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let y = Tensor::from_parts(vec![rows, cols], data);
        Ok(self.push(y, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..start + len` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if len == 0 || start + len > xv.cols() {
            return Err(Error::Shape(format!(
                "slice {start}..{} of {} columns",
                start + len,
                xv.cols()
            )));
        }
        let rows = xv.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let y = Tensor::from_parts(vec![rows, len], data);
        Ok(self.push(y, Op::Slice { x, start }))
    }

    /// Row sums as a `[B, 1]` column.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let y = Tensor::from_parts(vec![xv.rows(), 1], data);
        self.push(y, Op::SumCols(x))
    }

    /// Row means as a `[B, 1]` column.
    pub fn mean_cols(&mut self, x: Var) -> Var {
        let c = self.value(x).cols() as f64;
        let s = self.sum_cols(x);
        self.scale(s, 1.0 / c)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let y = Tensor::scalar(xv.sum() / xv.len() as f64);
        self.push(y, Op::Mean(x))
    }

    /// Euclidean norm of each row as a `[B, 1]` column. The gradient at a
    /// zero row is taken to be zero.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows())
            .map(|r| xv.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let y = Tensor::from_parts(vec![xv.rows(), 1], data);
        self.push(y, Op::RowNorm(x))
    }

    /// Runs the reverse sweep from `output`, seeded with `seed`.
    ///
    /// A tape supports exactly one backward pass.
    pub fn backward(&mut self, output: Var, seed: &Tensor) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let out = &self.nodes[output.0].value;
        if out.rows() != seed.rows() || out.cols() != seed.cols() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                seed.shape(),
                out.shape()
            )));
        }
        self.consumed = true;

        let shapes: Vec<Vec<usize>> = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::from_parts(
            shapes[output.0].clone(),
            seed.data().to_vec(),
        ));

        for idx in (0..=output.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(dy);
                    continue;
                }
                Op::Affine { x, w, b } => {
                    let (xv, wv) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                    let (batch, inp, out) = (xv.rows(), xv.cols(), wv.rows());
                    let (dyd, xd, wd) = (dy.data(), xv.data(), wv.data());
                    let mut dx = vec![0.0; batch * inp];
                    let mut dw = vec![0.0; out * inp];
                    let mut db = vec![0.0; out];
                    for r in 0..batch {
                        let xr = &xd[r * inp..(r + 1) * inp];
                        let dxr = &mut dx[r * inp..(r + 1) * inp];
                        for o in 0..out {
                            let g = dyd[r * out + o];
                            if g == 0.0 {
                                continue;
                            }
                            db[o] += g;
                            let wr = &wd[o * inp..(o + 1) * inp];
                            let dwr = &mut dw[o * inp..(o + 1) * inp];
                            for i in 0..inp {
                                dxr[i] += g * wr[i];
                                dwr[i] += g * xr[i];
                            }
                        }
                    }
                    accumulate(&mut grads, &shapes, *x, dx);
                    accumulate(&mut grads, &shapes, *w, dw);
                    accumulate(&mut grads, &shapes, *b, db);
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let dx = dy
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, &shapes, *x, dx);
                }
                Op::Tanh(x) => {
                    let dx = dy
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads, &shapes, *x, dx);
                }
                Op::Abs(x) => {
                    let xv = &self.nodes[x.0].value;
                    let dx = dy
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(g, v)| g * sign(*v))
                        .collect();
                    accumulate(&mut grads, &shapes, *x, dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, &shapes, *a, dy.data().to_vec());
                    accumulate(&mut grads, &shapes, *b, dy.into_data());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, &shapes, *a, dy.data().to_vec());
                    accumulate(
                        &mut grads,
                        &shapes,
                        *b,
                        dy.data().iter().map(|g| -g).collect(),
                    );
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let da = dy
                        .data()
                        .iter()
                        .zip(bv.data())
                        .map(|(g, v)| g * v)
                        .collect();
                    let db = dy
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(g, v)| g * v)
                        .collect();
                    accumulate(&mut grads, &shapes, *a, da);
                    accumulate(&mut grads, &shapes, *b, db);
                }
                Op::Scale(x, c) => {
                    let dx = dy.data().iter().map(|g| g * c).collect();
                    accumulate(&mut grads, &shapes, *x, dx);
                }
                Op::Square(x) => {
                    let xv = &self.nodes[x.0].value;
                    let dx = dy
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(g, v)| 2.0 * v * g)
                        .collect();
                    accumulate(&mut grads, &shapes, *x, dx);
                }
                Op::Concat(parts) => {
                    let rows = dy.rows();
                    let total = dy.cols();
                    let mut offset = 0;
                    for p in parts {
                        let pc = self.nodes[p.0].value.cols();
                        let mut dp = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            dp.extend_from_slice(
                                &dy.data()[r * total + offset..r * total + offset + pc],
                            );
                        }
                        accumulate(&mut grads, &shapes, *p, dp);
                        offset += pc;
                    }
                }
                Op::Slice { x, start } => {
                    let xv = &self.nodes[x.0].value;
                    let (rows, cols, len) = (xv.rows(), xv.cols(), dy.cols());
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        dx[r * cols + start..r * cols + start + len].copy_from_slice(dy.row(r));
                    }
                    accumulate(&mut grads, &shapes, *x, dx);
                }
                Op::SumCols(x) => {
                    let xv = &self.nodes[x.0].value;
                    let cols = xv.cols();
                    let dx = (0..xv.len()).map(|k| dy.data()[k / cols]).collect();
                    accumulate(&mut grads, &shapes, *x, dx);
                }
                Op::Sum(x) => {
                    let n = self.nodes[x.0].value.len();
                    accumulate(&mut grads, &shapes, *x, vec![dy.data()[0]; n]);
                }
                Op::Mean(x) => {
                    let n = self.nodes[x.0].value.len();
                    accumulate(&mut grads, &shapes, *x, vec![dy.data()[0] / n as f64; n]);
                }
                Op::RowNorm(x) => {
                    let xv = &self.nodes[x.0].value;
                    let cols = xv.cols();
                    let mut dx = vec![0.0; xv.len()];
                    for r in 0..xv.rows() {
                        let norm = node.value.data()[r];
                        if norm > 0.0 {
                            let g = dy.data()[r] / norm;
                            for c in 0..cols {
                                dx[r * cols + c] = g * xv.data()[r * cols + c];
                            }
                        }
                    }
                    accumulate(&mut grads, &shapes, *x, dx);
                }
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], shapes: &[Vec<usize>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(Tensor::from_parts(shapes[v.0].clone(), g)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_backward_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let y = tape.sum(x);
        assert!(tape.backward(y, &Tensor::scalar(1.0)).is_ok());
        assert!(matches!(
            tape.backward(y, &Tensor::scalar(1.0)),
            Err(Error::TapeConsumed)
        ));
    }

    #[test]
    fn seed_shape_must_match() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let y = tape.square(x);
        assert!(matches!(
            tape.backward(y, &Tensor::scalar(1.0)),
            Err(Error::Shape(_))
        ));
        assert!(!tape.is_consumed());
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f = sum(x * x + x) -> df/dx = 2x + 1
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.5, -2.0]).unwrap());
        let xx = tape.mul(x, x).unwrap();
        let s = tape.add(xx, x).unwrap();
        let f = tape.sum(s);
        let g = tape.backward(f, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(g.get(x).data(), &[4.0, -3.0]);
    }

    #[test]
    fn row_norm_gradient_is_zero_at_origin() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0, 0.0]).unwrap());
        let n = tape.row_norm(x);
        let g = tape.backward(n, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(g.get(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn concat_and_slice_route_gradients() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::vector(vec![3.0]).unwrap());
        let c = tape.concat(&[a, b]).unwrap();
        let s = tape.slice_cols(c, 1, 2).unwrap();
        let sq = tape.square(s);
        let f = tape.sum(sq);
        let g = tape.backward(f, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(g.get(a).data(), &[0.0, 4.0]);
        assert_eq!(g.get(b).data(), &[6.0]);
    }
}
