//! A small reverse-mode tape covering exactly the operations the network and
//! its losses are composed of.
//!
//! Every operation records its output value on the tape. [`Tape::backward`]
//! walks the nodes in reverse insertion order, which is a valid topological
//! order because a node can only reference nodes recorded before it.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamId, ParameterSet};
use crate::tensor::{self, Matrix};

/// Probabilities below this are clamped before taking the logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(usize, usize),
    AddBias(usize, usize),
    Relu(usize),
    SliceCols { src: usize, start: usize },
    ConcatCols(Vec<usize>),
    /// Mean soft-target cross-entropy of `softmax(logits / temperature)`;
    /// `probs` caches that softmax.
    SoftTargetCe {
        logits: usize,
        targets: Matrix,
        temperature: f64,
        probs: Matrix,
    },
    Sum(Vec<usize>),
    SumAll(usize),
    Scale(usize, f64),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for later differentiation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
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
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.index].value
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, var: Var) -> Result<usize> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(Error::State("variable was not recorded on this tape".into()));
        }
        Ok(var.index)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// A value that gradients do not flow into.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Reads a parameter's current value onto the tape.
    pub fn param(&mut self, params: &ParameterSet, id: ParamId) -> Var {
        self.push(params.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        let needs = self.needs(ia) || self.needs(ib);
        Ok(self.push(value, Op::MatMul(ia, ib), needs))
    }

    /// Adds a `1 × d` bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.check(x)?, self.check(bias)?);
        let b = &self.nodes[ib].value;
        let xv = &self.nodes[ix].value;
        if b.rows() != 1 || b.cols() != xv.cols() {
            return Err(Error::dim(
                "add_bias",
                format!("{}x{}", xv.rows(), xv.cols()),
                format!("bias {}x{}", b.rows(), b.cols()),
            ));
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for (o, bv) in value.row_mut(r).iter_mut().zip(b.values()) {
                *o += bv;
            }
        }
        let needs = self.needs(ix) || self.needs(ib);
        Ok(self.push(value, Op::AddBias(ix, ib), needs))
    }

    /// `x · w + b` with `b` stored as a `1 × d_out` row.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let value = tensor::relu(&self.nodes[ix].value);
        let needs = self.needs(ix);
        Ok(self.push(value, Op::Relu(ix), needs))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let value = self.nodes[ix].value.slice_cols(start, end)?;
        let needs = self.needs(ix);
        Ok(self.push(value, Op::SliceCols { src: ix, start }, needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let blocks: Vec<Matrix> = idx.iter().map(|&i| self.nodes[i].value.clone()).collect();
        let value = Matrix::concat_cols(&blocks)?;
        let needs = idx.iter().any(|&i| self.needs(i));
        Ok(self.push(value, Op::ConcatCols(idx), needs))
    }

    /// `-(1/N) Σ_i Σ_j targets_ij · log(max(softmax(logits_i / T)_j, 1e-12))`.
    pub fn soft_target_cross_entropy(
        &mut self,
        logits: Var,
        targets: Matrix,
        temperature: f64,
    ) -> Result<Var> {
        let il = self.check(logits)?;
        let (loss, probs) = soft_target_ce_value(&self.nodes[il].value, &targets, temperature)?;
        let needs = self.needs(il);
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::SoftTargetCe {
                logits: il,
                targets,
                temperature,
                probs,
            },
            needs,
        ))
    }

    /// Elementwise sum of same-shaped values.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let first = *idx
            .first()
            .ok_or_else(|| Error::Argument("sum of zero terms".into()))?;
        let mut value = self.nodes[first].value.clone();
        for &i in &idx[1..] {
            value.same_shape(&self.nodes[i].value, "sum")?;
            value.add_assign(&self.nodes[i].value);
        }
        let needs = idx.iter().any(|&i| self.needs(i));
        Ok(self.push(value, Op::Sum(idx), needs))
    }

    /// Sum of all entries as a `1 × 1` value.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let value = Matrix::filled(1, 1, self.nodes[ix].value.sum());
        let needs = self.needs(ix);
        Ok(self.push(value, Op::SumAll(ix), needs))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let ix = self.check(x)?;
        let value = self.nodes[ix].value.map(|v| v * factor);
        let needs = self.needs(ix);
        Ok(self.push(value, Op::Scale(ix, factor), needs))
    }

    /// Gradients of the scalar `loss` with respect to every parameter in `params`.
    ///
    /// Parameters that never appeared on the tape get zero gradients.
    pub fn backward(&self, loss: Var, params: &ParameterSet) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called before any forward pass".into()));
        }
        let root = self.check(loss)?;
        if self.nodes[root].value.shape() != (1, 1) {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got {:?}",
                self.nodes[root].value.shape()
            )));
        }

        let mut out = Gradients::zeros_like(params);
        let mut grads: Vec<Option<Matrix>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let slot = out.get_mut(*id);
                    if slot.shape() != g.shape() {
                        return Err(Error::dim(
                            "backward param",
                            format!("{:?}", slot.shape()),
                            format!("{:?}", g.shape()),
                        ));
                    }
                    slot.add_assign(&g);
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.matmul_t(&self.nodes[*b].value);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = self.nodes[*a].value.t_matmul(&g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::AddBias(x, b) => {
                    if self.needs(*b) {
                        let mut gb = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (acc, v) in gb.values_mut().iter_mut().zip(g.row(r)) {
                                *acc += v;
                            }
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    for (gv, &out_v) in gx.values_mut().iter_mut().zip(node.value.values()) {
                        if out_v <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SliceCols { src, start } => {
                    let (rows, cols) = self.nodes[*src].value.shape();
                    let mut gs = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        gs.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *src, gs);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let width = self.nodes[p].value.cols();
                        if self.needs(p) {
                            accumulate(&mut grads, p, g.slice_cols(offset, offset + width)?);
                        }
                        offset += width;
                    }
                }
                Op::SoftTargetCe {
                    logits,
                    targets,
                    temperature,
                    probs,
                } => {
                    let upstream = g.get(0, 0);
                    let gl = soft_target_ce_grad(targets, probs, *temperature, upstream);
                    accumulate(&mut grads, *logits, gl);
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        if self.needs(p) {
                            accumulate(&mut grads, p, g.clone());
                        }
                    }
                }
                Op::SumAll(x) => {
                    let (rows, cols) = self.nodes[*x].value.shape();
                    accumulate(&mut grads, *x, Matrix::filled(rows, cols, g.get(0, 0)));
                }
                Op::Scale(x, factor) => {
                    let mut gx = g;
                    gx.scale_assign(*factor);
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], index: usize, g: Matrix) {
    match &mut grads[index] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Loss value and the cached `softmax(logits / T)`.
pub(crate) fn soft_target_ce_value(
    logits: &Matrix,
    targets: &Matrix,
    temperature: f64,
) -> Result<(f64, Matrix)> {
    logits.same_shape(targets, "soft-target cross-entropy")?;
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Argument(format!("temperature must be > 0, got {temperature}")));
    }
    if !logits.is_finite() {
        return Err(Error::Numeric("non-finite logits in loss".into()));
    }
    let mut probs = logits.map(|v| v / temperature);
    let mut total = 0.0;
    for r in 0..probs.rows() {
        tensor::softmax_in_place(probs.row_mut(r));
        for (&p, &q) in targets.row(r).iter().zip(probs.row(r)) {
            if p != 0.0 {
                total -= p * q.max(LOG_CLAMP).ln();
            }
        }
    }
    Ok((total / logits.rows() as f64, probs))
}

/// d/dz of the mean soft-target cross-entropy. Entries whose probability sits
/// under the log clamp contribute nothing, matching the clamped forward value.
fn soft_target_ce_grad(targets: &Matrix, probs: &Matrix, temperature: f64, upstream: f64) -> Matrix {
    let n = probs.rows() as f64;
    let scale = upstream / (n * temperature);
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = targets.row(r);
        let q = probs.row(r);
        let unclamped_mass: f64 = p
            .iter()
            .zip(q)
            .filter(|(_, &qv)| qv >= LOG_CLAMP)
            .map(|(&pv, _)| pv)
            .sum();
        for (k, o) in out.row_mut(r).iter_mut().enumerate() {
            let own = if q[k] >= LOG_CLAMP { p[k] } else { 0.0 };
            *o = scale * (q[k] * unclamped_mass - own);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_weights_has_unit_gradient() {
        let mut params = ParameterSet::new();
        let id = params.add("w", Matrix::filled(2, 3, 0.7)).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&params, id);
        let loss = tape.sum_all(w).unwrap();
        let grads = tape.backward(loss, &params).unwrap();
        assert_eq!(grads.get(id), &Matrix::filled(2, 3, 1.0));
    }

    #[test]
    fn zero_scaled_loss_gives_zero_gradients() {
        let mut params = ParameterSet::new();
        let w = params.add("w", Matrix::filled(3, 2, 0.3)).unwrap();
        let b = params.add("b", Matrix::filled(1, 2, 0.1)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::filled(4, 3, 1.5));
        let wv = tape.param(&params, w);
        let bv = tape.param(&params, b);
        let h = tape.dense(x, wv, bv).unwrap();
        let s = tape.sum_all(h).unwrap();
        let loss = tape.scale(s, 0.0).unwrap();
        let grads = tape.backward(loss, &params).unwrap();
        assert!(grads.iter().all(|(_, g)| g.values().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let params = ParameterSet::new();
        let mut other = Tape::new();
        let foreign = other.constant(Matrix::zeros(1, 1));
        let tape = Tape::new();
        assert!(matches!(tape.backward(foreign, &params), Err(Error::State(_))));

        let mut tape = Tape::new();
        tape.constant(Matrix::zeros(1, 1));
        assert!(matches!(tape.backward(foreign, &params), Err(Error::State(_))));
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let params = ParameterSet::new();
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::zeros(2, 2));
        assert!(matches!(tape.backward(x, &params), Err(Error::State(_))));
    }

    #[test]
    fn soft_target_ce_gradient_matches_finite_differences() {
        let logits = Matrix::from_rows(&[[0.3, -1.2, 2.0], [1.0, 0.5, -0.5]]).unwrap();
        let targets = Matrix::from_rows(&[[0.2, 0.3, 0.5], [0.0, 1.0, 0.0]]).unwrap();
        for t in [1.0, 2.0, 4.0] {
            let (_, probs) = soft_target_ce_value(&logits, &targets, t).unwrap();
            let g = soft_target_ce_grad(&targets, &probs, t, 1.0);
            let h = 1e-6;
            for i in 0..logits.len() {
                let mut plus = logits.clone();
                plus.values_mut()[i] += h;
                let mut minus = logits.clone();
                minus.values_mut()[i] -= h;
                let fd = (soft_target_ce_value(&plus, &targets, t).unwrap().0
                    - soft_target_ce_value(&minus, &targets, t).unwrap().0)
                    / (2.0 * h);
                assert!((fd - g.values()[i]).abs() < 1e-8, "T={t} i={i}");
            }
        }
    }
}
