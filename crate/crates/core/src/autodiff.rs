//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Operations evaluate eagerly and append a node to the [`Tape`]. A node
//! records which parents it was computed from and how; [`Tape::backward`]
//! walks the tape in reverse creation order, which is a valid reverse
//! topological order because parents always precede their children.
//!
//! ```
//! use redcore::autodiff::Tape;
//! use redcore::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.var(Tensor::vector(vec![3.0]).unwrap()).unwrap();
//! let sq = tape.mul_elem(x, x).unwrap();
//! let y = tape.sum(sq);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
//! ```
//!
//! Broadcasting is limited to adding a row-vector bias to every row of a
//! matrix. Any other shape mismatch is a [`Error::Shape`].

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`]. Ids increase in creation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows = 0,
    Cols = 1,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRowBias(Var, Var),
    Sub(Var, Var),
    MulElem(Var, Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Clamp { a: Var, lo: f64, hi: f64 },
    Concat { parts: Vec<Var>, axis: Axis },
    Slice { a: Var, axis: Axis, start: usize },
    Scale(Var, f64),
    Sum(Var),
    Mean { a: Var, axis: Axis },
    SelectRows { a: Var, rows: Vec<usize> },
    WhereRows { mask: Vec<bool>, a: Var, b: Var },
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Tensor },
    GaussianKl { mu: Var, log_var: Var },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
}

/// Gradients of one scalar root with respect to every node it depends on.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the root.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn check_finite(op: &str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidTensor(format!("{op} produced a non-finite value")))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, grad: None, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of the node (zero until a backward pass runs).
    pub fn grad(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        node.grad.clone().unwrap_or_else(|| Tensor::zeros(node.value.shape()))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// New leaf node.
    pub fn var(&mut self, t: Tensor) -> Result<Var> {
        if !t.is_finite() {
            return Err(Error::InvalidTensor("leaf value is not finite".into()));
        }
        Ok(self.push(t, Op::Leaf))
    }

    /// A leaf holding a copy of `v`'s value: gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (_, k) = av.require_2d("matmul")?;
        let (k2, _) = bv.require_2d("matmul")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: shapes {:?} and {:?} are incompatible",
                av.shape(),
                bv.shape()
            )));
        }
        let out = av.matmul(bv);
        check_finite("matmul", &out)?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Elementwise sum. `b` may also be a row vector (`[c]` or `[1, c]`)
    /// added to every row of a `[n, c]` matrix `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let out = av.zip_with(bv, |x, y| x + y);
            check_finite("add", &out)?;
            return Ok(self.push(out, Op::Add(a, b)));
        }
        let is_row_bias = av.shape().len() == 2
            && match bv.shape() {
                [c] => *c == av.shape()[1],
                [1, c] => *c == av.shape()[1],
                _ => false,
            };
        if !is_row_bias {
            return Err(Error::shape(format!(
                "add: shapes {:?} and {:?} differ",
                av.shape(),
                bv.shape()
            )));
        }
        let c = av.cols();
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (x, b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        check_finite("add", &out)?;
        Ok(self.push(out, Op::AddRowBias(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("sub", av, bv)?;
        let out = av.zip_with(bv, |x, y| x - y);
        check_finite("sub", &out)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("mul_elem", av, bv)?;
        let out = av.zip_with(bv, |x, y| x * y);
        check_finite("mul_elem", &out)?;
        Ok(self.push(out, Op::MulElem(a, b)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        check_finite("exp", &out)?;
        Ok(self.push(out, Op::Exp(a)))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping bites.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp { a, lo, hi })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        check_finite("scale", &out)?;
        Ok(self.push(out, Op::Scale(a, c)))
    }

    /// Concatenates 2-d nodes along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let (r0, c0) = self.value(*first).require_2d("concat")?;
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).require_2d("concat")?;
            let ok = match axis {
                Axis::Rows => c == c0,
                Axis::Cols => r == r0,
            };
            if !ok {
                return Err(Error::shape(format!(
                    "concat along {axis:?}: shapes {:?} and {:?} are incompatible",
                    self.value(*first).shape(),
                    self.value(p).shape()
                )));
            }
            dims.push((r, c));
        }
        let out = match axis {
            Axis::Rows => {
                let rows: usize = dims.iter().map(|d| d.0).sum();
                let mut data = Vec::with_capacity(rows * c0);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::from_parts(vec![rows, c0], data)
            }
            Axis::Cols => {
                let cols: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(r0 * cols);
                for r in 0..r0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(r));
                    }
                }
                Tensor::from_parts(vec![r0, cols], data)
            }
        };
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// The half-open index range `start..end` along `axis` of a 2-d node.
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = av.require_2d("slice")?;
        let extent = match axis {
            Axis::Rows => r,
            Axis::Cols => c,
        };
        if start >= end || end > extent {
            return Err(Error::shape(format!(
                "slice {start}..{end} along {axis:?} out of bounds for shape {:?}",
                av.shape()
            )));
        }
        let out = match axis {
            Axis::Rows => Tensor::from_parts(vec![end - start, c], av.data()[start * c..end * c].to_vec()),
            Axis::Cols => {
                let w = end - start;
                let mut data = Vec::with_capacity(r * w);
                for i in 0..r {
                    data.extend_from_slice(&av.row(i)[start..end]);
                }
                Tensor::from_parts(vec![r, w], data)
            }
        };
        Ok(self.push(out, Op::Slice { a, axis, start }))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Mean along `axis`, keeping the reduced dimension: `Rows` gives
    /// `[1, c]`, `Cols` gives `[r, 1]`.
    pub fn mean(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = av.require_2d("mean")?;
        let out = match axis {
            Axis::Rows => {
                let mut acc = vec![0.0; c];
                for i in 0..r {
                    for (s, v) in acc.iter_mut().zip(av.row(i)) {
                        *s += v;
                    }
                }
                Tensor::from_parts(vec![1, c], acc.into_iter().map(|s| s / r as f64).collect())
            }
            Axis::Cols => Tensor::from_parts(
                vec![r, 1],
                (0..r).map(|i| av.row(i).iter().sum::<f64>() / c as f64).collect(),
            ),
        };
        Ok(self.push(out, Op::Mean { a, axis }))
    }

    /// Gathers rows of a 2-d node.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let (r, _) = av.require_2d("select_rows")?;
        if rows.is_empty() {
            return Err(Error::shape("select_rows with no rows"));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::shape(format!(
                "select_rows: row {bad} out of bounds for shape {:?}",
                av.shape()
            )));
        }
        let out = av.select_rows(rows);
        Ok(self.push(
            out,
            Op::SelectRows {
                a,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Row `n` of the result is row `n` of `a` when `mask[n]`, else of `b`.
    pub fn where_rows(&mut self, mask: &[bool], a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("where_rows", av, bv)?;
        let (r, c) = av.require_2d("where_rows")?;
        if mask.len() != r {
            return Err(Error::shape(format!(
                "where_rows: mask of length {} for {r} rows",
                mask.len()
            )));
        }
        let mut data = Vec::with_capacity(r * c);
        for (i, &m) in mask.iter().enumerate() {
            data.extend_from_slice(if m { av.row(i) } else { bv.row(i) });
        }
        let out = Tensor::from_parts(vec![r, c], data);
        Ok(self.push(
            out,
            Op::WhereRows {
                mask: mask.to_vec(),
                a,
                b,
            },
        ))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (n, classes) = lv.require_2d("softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(Error::shape(format!(
                "softmax_cross_entropy: {} labels for {n} rows",
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Label { label, classes });
        }
        let mut probs = Vec::with_capacity(n * classes);
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let log_z = max + sum_exp.ln();
            loss += log_z - row[y];
            probs.extend(row.iter().map(|&v| (v - log_z).exp()));
        }
        let out = Tensor::scalar(loss / n as f64);
        Ok(self.push(
            out,
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs: Tensor::from_parts(vec![n, classes], probs),
            },
        ))
    }

    /// `KL(N(mu, diag(exp(log_var))) || N(0, I))` summed over the feature
    /// axis and averaged over rows.
    pub fn gaussian_kl(&mut self, mu: Var, log_var: Var) -> Result<Var> {
        let (mv, lv) = (self.value(mu), self.value(log_var));
        same_shape("gaussian_kl", mv, lv)?;
        let (n, _) = mv.require_2d("gaussian_kl")?;
        let total: f64 = mv
            .data()
            .iter()
            .zip(lv.data())
            .map(|(&m, &l)| 0.5 * (m * m + l.exp() - l - 1.0))
            .sum();
        let out = Tensor::scalar(total / n as f64);
        check_finite("gaussian_kl", &out)?;
        Ok(self.push(out, Op::GaussianKl { mu, log_var }))
    }

    /// Reverse pass from a scalar root. The result is also added into each
    /// node's accumulated gradient; call [`Tape::zero_grad`] between passes.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if !self.value(root).is_scalar() {
            return Err(Error::shape(format!(
                "backward from non-scalar root of shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(&grads) {
            if let Some(g) = g {
                match &mut node.grad {
                    Some(acc) => acc.add_assign(g),
                    None => node.grad = Some(g.clone()),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let mut send = |v: Var, contrib: Tensor| match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                send(*a, g.matmul_t(bv));
                send(*b, av.t_matmul(g));
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::AddRowBias(a, b) => {
                send(*a, g.clone());
                let c = g.cols();
                let mut acc = vec![0.0; c];
                for i in 0..g.rows() {
                    for (s, v) in acc.iter_mut().zip(g.row(i)) {
                        *s += v;
                    }
                }
                send(*b, Tensor::from_parts(self.value(*b).shape().to_vec(), acc));
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|x| -x));
            }
            Op::MulElem(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                send(*a, g.zip_with(bv, |x, y| x * y));
                send(*b, g.zip_with(av, |x, y| x * y));
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                send(*a, g.zip_with(av, |x, v| if v > 0.0 { x } else { 0.0 }));
            }
            Op::Tanh(a) => {
                send(*a, g.zip_with(&node.value, |x, t| x * (1.0 - t * t)));
            }
            Op::Exp(a) => {
                send(*a, g.zip_with(&node.value, |x, e| x * e));
            }
            Op::Clamp { a, lo, hi } => {
                let av = self.value(*a);
                send(
                    *a,
                    g.zip_with(av, |x, v| if v >= *lo && v <= *hi { x } else { 0.0 }),
                );
            }
            Op::Concat { parts, axis } => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let (r, c) = (pv.rows(), pv.cols());
                    let piece = match axis {
                        Axis::Rows => Tensor::from_parts(
                            vec![r, c],
                            g.data()[offset * c..(offset + r) * c].to_vec(),
                        ),
                        Axis::Cols => {
                            let mut data = Vec::with_capacity(r * c);
                            for i in 0..r {
                                data.extend_from_slice(&g.row(i)[offset..offset + c]);
                            }
                            Tensor::from_parts(vec![r, c], data)
                        }
                    };
                    offset += match axis {
                        Axis::Rows => r,
                        Axis::Cols => c,
                    };
                    send(p, piece);
                }
            }
            Op::Slice { a, axis, start } => {
                let av = self.value(*a);
                let mut full = Tensor::zeros(av.shape());
                let c = av.cols();
                match axis {
                    Axis::Rows => {
                        full.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    }
                    Axis::Cols => {
                        let w = g.cols();
                        for i in 0..g.rows() {
                            full.data_mut()[i * c + start..i * c + start + w]
                                .copy_from_slice(g.row(i));
                        }
                    }
                }
                send(*a, full);
            }
            Op::Scale(a, c) => send(*a, g.map(|x| x * c)),
            Op::Sum(a) => {
                let gv = g.item();
                send(*a, Tensor::full(self.value(*a).shape(), gv));
            }
            Op::Mean { a, axis } => {
                let av = self.value(*a);
                let (r, c) = (av.rows(), av.cols());
                let mut full = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        full[i * c + j] = match axis {
                            Axis::Rows => g.data()[j] / r as f64,
                            Axis::Cols => g.data()[i] / c as f64,
                        };
                    }
                }
                send(*a, Tensor::from_parts(vec![r, c], full));
            }
            Op::SelectRows { a, rows } => {
                let av = self.value(*a);
                let c = av.cols();
                let mut full = Tensor::zeros(av.shape());
                for (k, &r) in rows.iter().enumerate() {
                    for (dst, src) in full.data_mut()[r * c..(r + 1) * c]
                        .iter_mut()
                        .zip(g.row(k))
                    {
                        *dst += src;
                    }
                }
                send(*a, full);
            }
            Op::WhereRows { mask, a, b } => {
                let c = g.cols();
                let mut ga = Tensor::zeros(g.shape());
                let mut gb = Tensor::zeros(g.shape());
                for (i, &m) in mask.iter().enumerate() {
                    let dst = if m { &mut ga } else { &mut gb };
                    dst.data_mut()[i * c..(i + 1) * c].copy_from_slice(g.row(i));
                }
                send(*a, ga);
                send(*b, gb);
            }
            Op::SoftmaxCe {
                logits,
                labels,
                probs,
            } => {
                let scale = g.item() / labels.len() as f64;
                let mut d = probs.clone();
                let c = d.cols();
                for (i, &y) in labels.iter().enumerate() {
                    d.data_mut()[i * c + y] -= 1.0;
                }
                send(*logits, d.map(|x| x * scale));
            }
            Op::GaussianKl { mu, log_var } => {
                let (mv, lv) = (self.value(*mu), self.value(*log_var));
                let scale = g.item() / mv.rows() as f64;
                send(*mu, mv.map(|m| m * scale));
                send(*log_var, lv.map(|l| 0.5 * (l.exp() - 1.0) * scale));
            }
        }
    }
}

/// Floor on the relative-error denominator of the gradient checkers.
pub const FD_FLOOR: f64 = 1e-6;

/// Central-difference gradient check of a scalar function built on a tape.
///
/// `f` receives a fresh tape and a leaf holding the input and must return a
/// scalar node. The numerical estimate `n` uses the five-point stencil with
/// step `h`. Returns the largest per-coordinate relative error
/// `|a - n| / max(|a|, |n|, FD_FLOOR)` against the analytic gradient `a`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    check_gradients(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(x),
        h,
    )
}

/// Multi-input version of [`finite_diff_check`]: every coordinate of every
/// input is perturbed.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let errs = check_gradients_many(|tape, vars| Ok(vec![f(tape, vars)?]), inputs, h)?;
    Ok(errs[0])
}

/// [`check_gradients`] for several scalar roots computed by one forward
/// pass. Returns the worst relative error of each root.
pub fn check_gradients_many<F>(f: F, inputs: &[Tensor], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Vec<Var>>,
{
    let eval = |inputs: &[Tensor]| -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = inputs
            .iter()
            .map(|t| tape.var(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let roots = f(&mut tape, &vars)?;
        Ok(roots.iter().map(|&r| tape.value(r).item()).collect())
    };

    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.var(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let roots = f(&mut tape, &vars)?;
    let analytic: Vec<Vec<Tensor>> = roots
        .iter()
        .map(|&r| {
            let grads = tape.backward(r)?;
            Ok(vars
                .iter()
                .zip(inputs)
                .map(|(v, x)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut worst = vec![0.0f64; roots.len()];
    let mut probe = inputs.to_vec();
    for k in 0..inputs.len() {
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            let mut at = |offset: f64| -> Result<Vec<f64>> {
                probe[k].data_mut()[i] = orig + offset;
                eval(&probe)
            };
            let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
            probe[k].data_mut()[i] = orig;
            for (r, w) in worst.iter_mut().enumerate() {
                let numeric = (8.0 * (p1[r] - m1[r]) - (p2[r] - m2[r])) / (12.0 * h);
                let a = analytic[r][k].data()[i];
                let denom = a.abs().max(numeric.abs()).max(FD_FLOOR);
                *w = w.max((a - numeric).abs() / denom);
            }
        }
    }
    Ok(worst)
}
