//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and returns gradients for every node. Parameters live
//! in a [`ParamStore`] and are borrowed into the tape, so one tape is built per
//! mini-batch and dropped before the optimizer mutates the store.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Optimizer group of a parameter; groups carry separate learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    Head,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Matrix,
}

/// Named, ordered parameter storage.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Serialized form of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Matrix) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            group,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copy of every parameter value, in id order.
    pub fn snapshot(&self) -> Vec<Matrix> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Inverse of [`ParamStore::snapshot`].
    pub fn restore(&mut self, values: Vec<Matrix>) {
        assert_eq!(values.len(), self.params.len(), "snapshot from a different model");
        for (p, v) in self.params.iter_mut().zip(values) {
            assert_eq!(p.value.dim(), v.dim(), "snapshot shape mismatch for `{}`", p.name);
            p.value = v;
        }
    }

    pub fn to_named(&self) -> BTreeMap<String, StoredTensor> {
        self.params
            .iter()
            .map(|p| {
                let (r, c) = p.value.dim();
                let data = p.value.iter().copied().collect();
                (p.name.clone(), StoredTensor { shape: [r, c], data })
            })
            .collect()
    }

    /// Overwrite every parameter from a named map. Names and shapes must match exactly.
    pub fn load_named(&mut self, named: &BTreeMap<String, StoredTensor>) -> Result<()> {
        self.load_subset("", named)
    }

    /// Overwrite every parameter whose name starts with `prefix` from `named`,
    /// which must cover exactly those parameters.
    pub fn load_subset(&mut self, prefix: &str, named: &BTreeMap<String, StoredTensor>) -> Result<()> {
        let mut expected = 0;
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            expected += 1;
            let stored = named
                .get(&p.name)
                .ok_or_else(|| Error::Load(format!("missing tensor `{}`", p.name)))?;
            let (r, c) = p.value.dim();
            if stored.shape != [r, c] || stored.data.len() != r * c {
                return Err(Error::Load(format!(
                    "tensor `{}` has shape {:?}, model expects [{r}, {c}]",
                    p.name, stored.shape
                )));
            }
            p.value = Array2::from_shape_vec((r, c), stored.data.clone())
                .map_err(|e| Error::Load(e.to_string()))?;
        }
        if named.len() != expected {
            return Err(Error::Load(format!(
                "{} tensors supplied for {expected} parameters under `{prefix}`",
                named.len()
            )));
        }
        Ok(())
    }
}

/// Uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn uniform_fan_in<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

pub fn normal_init<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Matrix {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulConst(Var, Matrix),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    SumAll(Var),
    CbFocal {
        logits: Var,
        labels: Vec<usize>,
        weights: Vec<f64>,
        gamma: f64,
    },
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
}

/// Recorded forward computation.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of a scalar output with respect to every node.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for a parameter; `None` if it did not take part in the pass.
    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(&id).and_then(|v| self.wrt(*v))
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Cow<'a, Matrix>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(Cow::Owned(m), Op::Leaf)
    }

    /// Borrow a parameter into the tape; repeated calls return the same node.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(Cow::Borrowed(store.get(id)), Op::Leaf);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(Cow::Owned(out), Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(Cow::Owned(out), Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(Cow::Owned(out), Op::Add(a, b))
    }

    /// Broadcast-add a 1×c row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let out = self.value(a) + self.value(row);
        self.push(Cow::Owned(out), Op::AddRow(a, row))
    }

    /// Broadcast-multiply every row of `a` by a 1×c row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let out = self.value(a) * self.value(row);
        self.push(Cow::Owned(out), Op::MulRow(a, row))
    }

    pub fn mul_const(&mut self, a: Var, mask: Matrix) -> Var {
        let out = self.value(a) * &mask;
        self.push(Cow::Owned(out), Op::MulConst(a, mask))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a) * s;
        self.push(Cow::Owned(out), Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(Cow::Owned(out), Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(Cow::Owned(out), Op::Relu(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .mapv(|x| 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()));
        self.push(Cow::Owned(out), Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(Cow::Owned(out), Op::SoftmaxRows(a))
    }

    /// Per-row standardization (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let cols = x.ncols() as f64;
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in out.rows_mut() {
            let mean = row.sum() / cols;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / cols;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| v * inv);
            inv_std.push(inv);
        }
        self.push(Cow::Owned(out), Op::LayerNorm { x: a, inv_std })
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let out = t.select(Axis(0), ids);
        self.push(
            Cow::Owned(out),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(Cow::Owned(out), Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(Cow::Owned(out), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(Cow::Owned(out), Op::SliceRows { x: a, start })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(Cow::Owned(out), Op::SliceCols { x: a, start })
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(Cow::Owned(out), Op::SumAll(a))
    }

    /// Mean class-balanced focal loss over the rows of `logits` (1×1 output).
    pub fn cb_focal_loss(&mut self, logits: Var, labels: &[usize], weights: &[f64], gamma: f64) -> Var {
        let value = crate::loss::focal_loss_with_weights(self.value(logits), labels, weights, gamma);
        self.push(
            Cow::Owned(Array2::from_elem((1, 1), value)),
            Op::CbFocal {
                logits,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
                gamma,
            },
        )
    }

    /// Gradients of the 1×1 node `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Array2::ones((1, 1)));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].clone() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[row.0], gr);
                    accumulate(&mut grads[a.0], g);
                }
                Op::MulRow(a, row) => {
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ga = &g * self.value(*row);
                    accumulate(&mut grads[row.0], gr);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::MulConst(a, mask) => accumulate(&mut grads[a.0], g * mask),
                Op::Scale(a, s) => accumulate(&mut grads[a.0], g * *s),
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = ndarray::Zip::from(&g).and(&**y).map_collect(|&g, &y| g * (1.0 - y * y));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let ga = ndarray::Zip::from(&g)
                        .and(x)
                        .map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let ga = ndarray::Zip::from(&g).and(x).map_collect(|&g, &x| {
                        let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
                        let d = 0.5 * (1.0 + t)
                            + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x);
                        g * d
                    });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &*node.value;
                    let mut ga = &g * y;
                    for (mut row, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        row.zip_mut_with(&yrow, |r, &yv| *r -= yv * dot);
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::LayerNorm { x, inv_std } => {
                    let xhat = &*node.value;
                    let cols = xhat.ncols() as f64;
                    let mut ga = g.clone();
                    for ((mut row, xh), &inv) in ga.rows_mut().into_iter().zip(xhat.rows()).zip(inv_std) {
                        let mean_g = row.sum() / cols;
                        let mean_gx = row.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / cols;
                        row.zip_mut_with(&xh, |r, &h| *r = inv * (*r - mean_g - h * mean_gx));
                    }
                    accumulate(&mut grads[x.0], ga);
                }
                Op::Gather { table, ids } => {
                    let mut gt = Array2::zeros(self.value(*table).dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut dst = gt.row_mut(id);
                        dst += &g.row(r);
                    }
                    accumulate(&mut grads[table.0], gt);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        accumulate(&mut grads[p.0], g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        accumulate(&mut grads[p.0], g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceRows { x, start } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    gx.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::SliceCols { x, start } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::CbFocal {
                    logits,
                    labels,
                    weights,
                    gamma,
                } => {
                    let gl = crate::loss::focal_loss_grad_with_weights(
                        self.value(*logits),
                        labels,
                        weights,
                        *gamma,
                    ) * g[[0, 0]];
                    accumulate(&mut grads[logits.0], gl);
                }
            }
        }
        Gradients {
            grads,
            params: self.params.clone(),
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of d(sum(f(x) ⊙ w))/dx for every input entry.
    fn check<F>(inputs: Vec<Matrix>, f: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let eval = |inputs: &[Matrix], weights: Option<&Matrix>| -> (f64, Option<Vec<Matrix>>, Matrix) {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
            let out = f(&mut tape, &vars);
            let w = weights.cloned().unwrap_or_else(|| Array2::ones(tape.value(out).dim()));
            let weighted = tape.mul_const(out, w.clone());
            let total = tape.sum_all(weighted);
            let value = tape.value(total)[[0, 0]];
            let grads = weights.map(|_| {
                let g = tape.backward(total);
                vars.iter()
                    .map(|v| g.wrt(*v).cloned().unwrap_or_else(|| Array2::zeros(tape.value(*v).dim())))
                    .collect()
            });
            (value, grads, w)
        };
        let (_, _, shape_probe) = eval(&inputs, None);
        let w = random(&mut rng, shape_probe.nrows(), shape_probe.ncols());
        let (_, grads, _) = eval(&inputs, Some(&w));
        let grads = grads.unwrap();
        let h = 1e-6;
        for (k, input) in inputs.iter().enumerate() {
            for idx in 0..input.len() {
                let (r, c) = (idx / input.ncols(), idx % input.ncols());
                let mut plus = inputs.clone();
                plus[k][[r, c]] += h;
                let mut minus = inputs.clone();
                minus[k][[r, c]] -= h;
                let numeric = (eval(&plus, Some(&w)).0 - eval(&minus, Some(&w)).0) / (2.0 * h);
                let analytic = grads[k][[r, c]];
                let denom = numeric.abs().max(analytic.abs()).max(1e-6);
                assert!(
                    (numeric - analytic).abs() / denom < 1e-5,
                    "input {k} [{r},{c}]: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn grad_matmul_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check(vec![random(&mut rng, 3, 4), random(&mut rng, 4, 2)], |t, v| t.matmul(v[0], v[1]));
        check(vec![random(&mut rng, 3, 4), random(&mut rng, 5, 4)], |t, v| t.matmul_t(v[0], v[1]));
    }

    #[test]
    fn grad_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 3, 4);
        let row = random(&mut rng, 1, 4);
        check(vec![a.clone(), b], |t, v| t.add(v[0], v[1]));
        check(vec![a.clone(), row.clone()], |t, v| t.add_row(v[0], v[1]));
        check(vec![a.clone(), row], |t, v| t.mul_row(v[0], v[1]));
        check(vec![a.clone()], |t, v| t.scale(v[0], -1.7));
        check(vec![a.clone()], |t, v| t.tanh(v[0]));
        check(vec![a.clone()], |t, v| t.gelu(v[0]));
        // keep relu inputs away from the kink
        let shifted = a.mapv(|x| if x.abs() < 0.05 { x + 0.2 } else { x });
        check(vec![shifted], |t, v| t.relu(v[0]));
        let mask = random(&mut rng, 3, 4);
        check(vec![a], move |t, v| t.mul_const(v[0], mask.clone()));
    }

    #[test]
    fn grad_softmax_and_layer_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        check(vec![random(&mut rng, 3, 5)], |t, v| t.softmax_rows(v[0]));
        check(vec![random(&mut rng, 3, 5)], |t, v| t.layer_norm(v[0], 1e-5));
    }

    #[test]
    fn grad_structural() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let table = random(&mut rng, 6, 3);
        check(vec![table], |t, v| t.gather(v[0], &[4, 1, 4, 0]));
        check(vec![random(&mut rng, 2, 3), random(&mut rng, 2, 2)], |t, v| t.concat_cols(&[v[0], v[1]]));
        check(vec![random(&mut rng, 2, 3), random(&mut rng, 1, 3)], |t, v| t.concat_rows(&[v[0], v[1]]));
        check(vec![random(&mut rng, 5, 4)], |t, v| t.slice_rows(v[0], 1, 3));
        check(vec![random(&mut rng, 5, 4)], |t, v| t.slice_cols(v[0], 2, 2));
    }

    #[test]
    fn grad_focal_loss_node() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        check(vec![random(&mut rng, 4, 4).mapv(|x| 3.0 * x)], |t, v| {
            t.cb_focal_loss(v[0], &[0, 3, 1, 1], &[0.5, 1.0, 1.2, 1.3], 2.0)
        });
    }

    #[test]
    fn param_reused_once_and_grads_sum() {
        let mut store = ParamStore::new();
        let id = store.add("w", ParamGroup::Head, Array2::from_elem((1, 1), 3.0));
        let mut tape = Tape::new();
        let a = tape.param(&store, id);
        let b = tape.param(&store, id);
        assert_eq!(a, b);
        let sq = tape.mul_row(a, b);
        let out = tape.sum_all(sq);
        let g = tape.backward(out);
        assert_eq!(g.param(id).unwrap()[[0, 0]], 6.0);
    }

    #[test]
    fn load_named_checks_shapes() {
        let mut store = ParamStore::new();
        store.add("a", ParamGroup::Head, Array2::zeros((2, 2)));
        let mut named = store.to_named();
        named.get_mut("a").unwrap().shape = [4, 1];
        assert!(matches!(store.load_named(&named), Err(Error::Load(_))));
    }
}
