//! Define-by-run reverse-mode differentiation tape.
//!
//! A [`Tape`] records every operation as it executes; [`Tape::backward`]
//! replays the records in reverse to accumulate gradients. The graph is
//! rebuilt each training step, which keeps recurrent unrolling trivial: the
//! unrolled steps are just more nodes on the tape.

use std::cell::{Cell, Ref, RefCell};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::array::Array;
use crate::TensorError;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`]. Cheap to copy; only valid on the
/// tape that produced it (enforced at use).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    /// Matrix plus a `1×cols` bias row broadcast over rows.
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    /// Non-affine layer normalization over each row; `inv_std[r]` is
    /// `1/sqrt(var_r + eps)`, saved for the backward pass.
    LayerNorm { x: Var, inv_std: Vec<f64> },
    /// Saved mask entries are `0` or `1/(1-p)` so forward is a plain product.
    Dropout { x: Var, mask: Vec<f64> },
    ConcatRows(Var, Var),
    SliceRows { x: Var, start: usize },
    Mse(Var, Var),
    Sum(Var),
}

struct Node {
    value: Array,
    op: Op,
}

/// Append-only record of one forward computation.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Array>>>,
    backward_done: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            backward_done: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        self.grads.borrow_mut().push(None);
        Var { tape: self.id, idx: nodes.len() - 1 }
    }

    fn check(&self, v: Var, op: &'static str) -> Result<(), TensorError> {
        if v.tape != self.id {
            return Err(TensorError::ForeignVar { op });
        }
        Ok(())
    }

    fn shape_of(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.idx].value.shape()
    }

    /// Records an input value. Every leaf receives a gradient slot; whether
    /// it is a trainable parameter or constant data is the caller's concern.
    pub fn leaf(&self, value: Array) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Immutable view of a recorded value.
    pub fn value(&self, v: Var) -> Ref<'_, Array> {
        assert_eq!(v.tape, self.id, "Var used on a different tape");
        Ref::map(self.nodes.borrow(), |nodes| &nodes[v.idx].value)
    }

    /// Removes and returns the accumulated gradient of `v`, if any.
    /// `None` either before `backward` or when `v` does not influence the loss.
    pub fn take_grad(&self, v: Var) -> Option<Array> {
        assert_eq!(v.tape, self.id, "Var used on a different tape");
        self.grads.borrow_mut()[v.idx].take()
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(a, "matmul")?;
        self.check(b, "matmul")?;
        let (ar, ac) = self.shape_of(a);
        let (br, bc) = self.shape_of(b);
        if ac != br {
            return Err(TensorError::ShapeMismatch { op: "matmul", lhs: (ar, ac), rhs: (br, bc) });
        }
        let nodes = self.nodes.borrow();
        let value = nodes[a.idx].value.matmul(&nodes[b.idx].value);
        drop(nodes);
        Ok(self.push(value, Op::Matmul(a, b)))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(a, "add")?;
        self.check(b, "add")?;
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch { op: "add", lhs: sa, rhs: sb });
        }
        let nodes = self.nodes.borrow();
        let value = nodes[a.idx].value.zip_map(&nodes[b.idx].value, |x, y| x + y);
        drop(nodes);
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// `x + bias`, where `bias` is a `1×cols` row added to every row of `x`.
    pub fn add_bias(&self, x: Var, bias: Var) -> Result<Var, TensorError> {
        self.check(x, "add_bias")?;
        self.check(bias, "add_bias")?;
        let (xr, xc) = self.shape_of(x);
        let (br, bc) = self.shape_of(bias);
        if br != 1 || bc != xc {
            return Err(TensorError::ShapeMismatch { op: "add_bias", lhs: (xr, xc), rhs: (br, bc) });
        }
        let nodes = self.nodes.borrow();
        let xv = &nodes[x.idx].value;
        let bv = &nodes[bias.idx].value;
        let mut value = xv.clone();
        for r in 0..xr {
            for (o, &b) in value.row_mut(r).iter_mut().zip(bv.as_slice()) {
                *o += b;
            }
        }
        drop(nodes);
        Ok(self.push(value, Op::AddBias(x, bias)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(a, "sub")?;
        self.check(b, "sub")?;
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch { op: "sub", lhs: sa, rhs: sb });
        }
        let nodes = self.nodes.borrow();
        let value = nodes[a.idx].value.zip_map(&nodes[b.idx].value, |x, y| x - y);
        drop(nodes);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(a, "mul")?;
        self.check(b, "mul")?;
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch { op: "mul", lhs: sa, rhs: sb });
        }
        let nodes = self.nodes.borrow();
        let value = nodes[a.idx].value.zip_map(&nodes[b.idx].value, |x, y| x * y);
        drop(nodes);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Multiplication by a compile-time constant (not a tracked value).
    pub fn scale(&self, x: Var, c: f64) -> Result<Var, TensorError> {
        self.check(x, "scale")?;
        let value = self.nodes.borrow()[x.idx].value.map(|v| c * v);
        Ok(self.push(value, Op::Scale(x, c)))
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var, TensorError> {
        self.check(x, "sigmoid")?;
        let value = self.nodes.borrow()[x.idx].value.map(|v| 1.0 / (1.0 + (-v).exp()));
        Ok(self.push(value, Op::Sigmoid(x)))
    }

    pub fn tanh(&self, x: Var) -> Result<Var, TensorError> {
        self.check(x, "tanh")?;
        let value = self.nodes.borrow()[x.idx].value.map(f64::tanh);
        Ok(self.push(value, Op::Tanh(x)))
    }

    /// Normalizes each row to zero mean / unit variance (no learned affine).
    pub fn layer_norm(&self, x: Var, eps: f64) -> Result<Var, TensorError> {
        self.check(x, "layer_norm")?;
        let nodes = self.nodes.borrow();
        let xv = &nodes[x.idx].value;
        let (rows, cols) = xv.shape();
        if cols == 0 {
            return Err(TensorError::ShapeMismatch { op: "layer_norm", lhs: (rows, cols), rhs: (rows, 1) });
        }
        let n = cols as f64;
        let mut value = Array::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (o, &v) in value.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        drop(nodes);
        Ok(self.push(value, Op::LayerNorm { x, inv_std }))
    }

    /// Inverted dropout: zeroes each entry with probability `p` and rescales
    /// survivors by `1/(1-p)` so the expected value is unchanged. `uniform`
    /// must yield draws in `[0, 1)`. Identity when `p == 0` or not training.
    pub fn dropout(
        &self,
        x: Var,
        p: f64,
        training: bool,
        uniform: &mut dyn FnMut() -> f64,
    ) -> Result<Var, TensorError> {
        self.check(x, "dropout")?;
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                message: format!("probability {p} outside [0, 1)"),
            });
        }
        if p == 0.0 || !training {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - p);
        let nodes = self.nodes.borrow();
        let xv = &nodes[x.idx].value;
        let mask: Vec<f64> =
            (0..xv.len()).map(|_| if uniform() < p { 0.0 } else { keep_scale }).collect();
        let mut value = xv.clone();
        for (v, &m) in value.as_mut_slice().iter_mut().zip(&mask) {
            *v *= m;
        }
        drop(nodes);
        Ok(self.push(value, Op::Dropout { x, mask }))
    }

    /// Stacks `a` on top of `b` (column counts must match).
    pub fn concat_rows(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(a, "concat_rows")?;
        self.check(b, "concat_rows")?;
        let (ar, ac) = self.shape_of(a);
        let (br, bc) = self.shape_of(b);
        if ac != bc {
            return Err(TensorError::ShapeMismatch { op: "concat_rows", lhs: (ar, ac), rhs: (br, bc) });
        }
        let nodes = self.nodes.borrow();
        let mut data = Vec::with_capacity((ar + br) * ac);
        data.extend_from_slice(nodes[a.idx].value.as_slice());
        data.extend_from_slice(nodes[b.idx].value.as_slice());
        let value = Array::from_vec(ar + br, ac, data);
        drop(nodes);
        Ok(self.push(value, Op::ConcatRows(a, b)))
    }

    /// Rows `start..start+len` of `x` as a new value.
    pub fn slice_rows(&self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        self.check(x, "slice_rows")?;
        let (rows, cols) = self.shape_of(x);
        if start + len > rows || len == 0 {
            return Err(TensorError::InvalidArgument {
                op: "slice_rows",
                message: format!("rows {start}..{} of a {rows}-row array", start + len),
            });
        }
        let nodes = self.nodes.borrow();
        let value =
            Array::from_vec(len, cols, nodes[x.idx].value.as_slice()[start * cols..(start + len) * cols].to_vec());
        drop(nodes);
        Ok(self.push(value, Op::SliceRows { x, start }))
    }

    /// Mean squared error over all elements; result is a `1×1` scalar.
    pub fn mse(&self, pred: Var, target: Var) -> Result<Var, TensorError> {
        self.check(pred, "mse")?;
        self.check(target, "mse")?;
        let (sp, st) = (self.shape_of(pred), self.shape_of(target));
        if sp != st {
            return Err(TensorError::ShapeMismatch { op: "mse", lhs: sp, rhs: st });
        }
        let nodes = self.nodes.borrow();
        let pv = &nodes[pred.idx].value;
        let tv = &nodes[target.idx].value;
        let n = pv.len() as f64;
        let sum: f64 = pv.as_slice().iter().zip(tv.as_slice()).map(|(&p, &t)| (p - t) * (p - t)).sum();
        drop(nodes);
        Ok(self.push(Array::scalar(sum / n), Op::Mse(pred, target)))
    }

    /// Sum of all elements; result is a `1×1` scalar.
    pub fn sum(&self, x: Var) -> Result<Var, TensorError> {
        self.check(x, "sum")?;
        let total: f64 = self.nodes.borrow()[x.idx].value.as_slice().iter().sum();
        Ok(self.push(Array::scalar(total), Op::Sum(x)))
    }

    /// Accumulates `d loss / d v` for every node that feeds `loss`.
    /// `loss` must be scalar; calling twice on one tape is an error.
    pub fn backward(&self, loss: Var) -> Result<(), TensorError> {
        self.check(loss, "backward")?;
        if self.backward_done.get() {
            return Err(TensorError::BackwardTwice);
        }
        let loss_shape = self.shape_of(loss);
        if loss_shape != (1, 1) {
            return Err(TensorError::NotScalarLoss { shape: loss_shape });
        }
        self.backward_done.set(true);

        let nodes = self.nodes.borrow();
        let mut grads = self.grads.borrow_mut();
        grads[loss.idx] = Some(Array::scalar(1.0));

        for i in (0..=loss.idx).rev() {
            // A node's gradient is final once reached: all consumers have
            // larger indices and were already processed.
            let Some(g) = grads[i].take() else { continue };
            match &nodes[i].op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let da = g.matmul_nt(&nodes[b.idx].value);
                    let db = nodes[a.idx].value.matmul_tn(&g);
                    add_grad(&mut grads[a.idx], da);
                    add_grad(&mut grads[b.idx], db);
                }
                Op::Add(a, b) => {
                    add_grad(&mut grads[a.idx], g.clone());
                    add_grad(&mut grads[b.idx], g.clone());
                }
                Op::AddBias(x, bias) => {
                    let cols = g.cols();
                    let mut db = Array::zeros(1, cols);
                    for r in 0..g.rows() {
                        for (o, &v) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    add_grad(&mut grads[bias.idx], db);
                    add_grad(&mut grads[x.idx], g.clone());
                }
                Op::Sub(a, b) => {
                    add_grad(&mut grads[a.idx], g.clone());
                    add_grad(&mut grads[b.idx], g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(&nodes[b.idx].value, |gv, bv| gv * bv);
                    let db = g.zip_map(&nodes[a.idx].value, |gv, av| gv * av);
                    add_grad(&mut grads[a.idx], da);
                    add_grad(&mut grads[b.idx], db);
                }
                Op::Scale(x, c) => add_grad(&mut grads[x.idx], g.map(|v| c * v)),
                Op::Sigmoid(x) => {
                    let dx = g.zip_map(&nodes[i].value, |gv, y| gv * y * (1.0 - y));
                    add_grad(&mut grads[x.idx], dx);
                }
                Op::Tanh(x) => {
                    let dx = g.zip_map(&nodes[i].value, |gv, y| gv * (1.0 - y * y));
                    add_grad(&mut grads[x.idx], dx);
                }
                Op::LayerNorm { x, inv_std } => {
                    // y = (x - mean) * inv_std with biased row variance:
                    // dx = inv_std/C * (C*g - sum(g) - y * dot(g, y))
                    let y = &nodes[i].value;
                    let (rows, cols) = y.shape();
                    let n = cols as f64;
                    let mut dx = Array::zeros(rows, cols);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let yr = y.row(r);
                        let sum_g: f64 = gr.iter().sum();
                        let dot_gy: f64 = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        let is = inv_std[r];
                        for ((o, &gv), &yv) in dx.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o = is / n * (n * gv - sum_g - yv * dot_gy);
                        }
                    }
                    add_grad(&mut grads[x.idx], dx);
                }
                Op::Dropout { x, mask } => {
                    let mut dx = g.clone();
                    for (v, &m) in dx.as_mut_slice().iter_mut().zip(mask) {
                        *v *= m;
                    }
                    add_grad(&mut grads[x.idx], dx);
                }
                Op::ConcatRows(a, b) => {
                    let (ar, cols) = self::shape(&nodes[a.idx].value);
                    let (br, _) = self::shape(&nodes[b.idx].value);
                    let da = Array::from_vec(ar, cols, g.as_slice()[..ar * cols].to_vec());
                    let db = Array::from_vec(br, cols, g.as_slice()[ar * cols..].to_vec());
                    add_grad(&mut grads[a.idx], da);
                    add_grad(&mut grads[b.idx], db);
                }
                Op::SliceRows { x, start } => {
                    let (rows, cols) = self::shape(&nodes[x.idx].value);
                    let mut dx = Array::zeros(rows, cols);
                    for r in 0..g.rows() {
                        dx.row_mut(start + r).copy_from_slice(g.row(r));
                    }
                    add_grad(&mut grads[x.idx], dx);
                }
                Op::Mse(pred, target) => {
                    let pv = &nodes[pred.idx].value;
                    let tv = &nodes[target.idx].value;
                    let gs = g.item() * 2.0 / pv.len() as f64;
                    let dp = pv.zip_map(tv, |p, t| gs * (p - t));
                    let dt = dp.map(|v| -v);
                    add_grad(&mut grads[pred.idx], dp);
                    add_grad(&mut grads[target.idx], dt);
                }
                Op::Sum(x) => {
                    let (rows, cols) = self::shape(&nodes[x.idx].value);
                    add_grad(&mut grads[x.idx], Array::filled(rows, cols, g.item()));
                }
            }
            grads[i] = Some(g);
        }
        Ok(())
    }
}

fn shape(a: &Array) -> (usize, usize) {
    a.shape()
}

fn add_grad(slot: &mut Option<Array>, delta: Array) {
    match slot {
        None => *slot = Some(delta),
        Some(existing) => existing.add_in_place(&delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_points_of_activations() {
        let tape = Tape::new();
        let x = tape.leaf(Array::scalar(0.0));
        assert_eq!(tape.value(tape.sigmoid(x).unwrap()).item(), 0.5);
        assert_eq!(tape.value(tape.tanh(x).unwrap()).item(), 0.0);
    }

    #[test]
    fn layer_norm_two_point_row() {
        let tape = Tape::new();
        let x = tape.leaf(Array::from_vec(1, 2, vec![1.0, 3.0]));
        let y = tape.layer_norm(x, 1e-5).unwrap();
        let v = tape.value(y);
        assert!((v.get(0, 0) + 1.0).abs() < 1e-5, "got {}", v.get(0, 0));
        assert!((v.get(0, 1) - 1.0).abs() < 1e-5, "got {}", v.get(0, 1));
    }

    #[test]
    fn dropout_identity_when_disabled() {
        let tape = Tape::new();
        let x = tape.leaf(Array::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let mut no_rng = || panic!("rng must not be consulted");
        let eval_mode = tape.dropout(x, 0.5, false, &mut no_rng).unwrap();
        assert_eq!(eval_mode, x);
        let p_zero = tape.dropout(x, 0.0, true, &mut no_rng).unwrap();
        assert_eq!(p_zero, x);
    }

    #[test]
    fn mse_of_identical_inputs_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Array::from_vec(1, 3, vec![1.0, -2.0, 0.5]));
        let y = tape.leaf(Array::from_vec(1, 3, vec![1.0, -2.0, 0.5]));
        let loss = tape.mse(x, y).unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
        tape.backward(loss).unwrap();
        let g = tape.take_grad(x).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sum_of_matmul_gradient_structure() {
        // loss = sum(A·B) gives dA = 1·Bᵀ, checked on 2×2 by hand.
        let tape = Tape::new();
        let a = tape.leaf(Array::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(Array::from_vec(2, 2, vec![5.0, 6.0, 7.0, 8.0]));
        let prod = tape.matmul(a, b).unwrap();
        let loss = tape.sum(prod).unwrap();
        tape.backward(loss).unwrap();
        let da = tape.take_grad(a).unwrap();
        // row sums of B: [5+6, 7+8] broadcast over A's rows
        assert_eq!(da.as_slice(), &[11.0, 15.0, 11.0, 15.0]);
        let db = tape.take_grad(b).unwrap();
        // column sums of A: [1+3, 2+4] broadcast over B's columns
        assert_eq!(db.as_slice(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let tape = Tape::new();
        let x = tape.leaf(Array::scalar(2.0));
        let loss = tape.mul(x, x).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(TensorError::BackwardTwice)));
    }

    #[test]
    fn foreign_var_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let x = t1.leaf(Array::scalar(1.0));
        assert!(matches!(t2.sigmoid(x), Err(TensorError::ForeignVar { .. })));
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(Array::zeros(2, 3));
        let b = tape.leaf(Array::zeros(2, 2));
        let err = tape.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("2x2"), "unhelpful message: {msg}");
    }

    #[test]
    fn concat_then_slice_round_trips() {
        let tape = Tape::new();
        let a = tape.leaf(Array::from_vec(1, 2, vec![1.0, 2.0]));
        let b = tape.leaf(Array::from_vec(2, 2, vec![3.0, 4.0, 5.0, 6.0]));
        let cat = tape.concat_rows(a, b).unwrap();
        let back = tape.slice_rows(cat, 1, 2).unwrap();
        assert_eq!(tape.value(back).as_slice(), tape.value(b).as_slice());
    }
}
