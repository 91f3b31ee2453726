// Define-by-run reverse-mode tape.
//
// Every operation appends one node holding its forward value and whatever the
// backward rule needs. Node ids are push order, so an input id is always
// smaller than its consumer's and a single reverse sweep visits each node once.

use std::sync::Arc;

use super::{check_shape, Tensor};
use crate::error::{Result, SumError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnaryKind {
    Exp,
    Log,
    Sqrt,
    Silu,
    Gelu,
    Sigmoid,
    Softplus,
    Neg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReduceKind {
    Sum,
    Mean,
    /// Population variance (divides by the element count).
    Var,
}

/// Operation names, used for reporting and for fault injection in the
/// gradient-check harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpTag {
    Leaf,
    Binary(BinaryKind),
    Unary(UnaryKind),
    Affine,
    MatMul,
    Reduce(ReduceKind),
    Reshape,
    Gather,
    LayerNormCore,
    DwConv3x3,
    SelectiveScan,
}

impl OpTag {
    pub fn name(self) -> &'static str {
        match self {
            OpTag::Leaf => "leaf",
            OpTag::Binary(BinaryKind::Add) => "add",
            OpTag::Binary(BinaryKind::Sub) => "sub",
            OpTag::Binary(BinaryKind::Mul) => "mul",
            OpTag::Binary(BinaryKind::Div) => "div",
            OpTag::Binary(BinaryKind::Min) => "min",
            OpTag::Binary(BinaryKind::Max) => "max",
            OpTag::Unary(UnaryKind::Exp) => "exp",
            OpTag::Unary(UnaryKind::Log) => "log",
            OpTag::Unary(UnaryKind::Sqrt) => "sqrt",
            OpTag::Unary(UnaryKind::Silu) => "silu",
            OpTag::Unary(UnaryKind::Gelu) => "gelu",
            OpTag::Unary(UnaryKind::Sigmoid) => "sigmoid",
            OpTag::Unary(UnaryKind::Softplus) => "softplus",
            OpTag::Unary(UnaryKind::Neg) => "neg",
            OpTag::Affine => "affine",
            OpTag::MatMul => "matmul",
            OpTag::Reduce(ReduceKind::Sum) => "sum",
            OpTag::Reduce(ReduceKind::Mean) => "mean",
            OpTag::Reduce(ReduceKind::Var) => "var",
            OpTag::Reshape => "reshape",
            OpTag::Gather => "gather",
            OpTag::LayerNormCore => "layer_norm",
            OpTag::DwConv3x3 => "dwconv3x3",
            OpTag::SelectiveScan => "selective_scan",
        }
    }

    pub fn from_name(name: &str) -> Option<OpTag> {
        ALL_TAGS.iter().copied().find(|t| t.name() == name)
    }
}

const ALL_TAGS: [OpTag; 25] = [
    OpTag::Leaf,
    OpTag::Binary(BinaryKind::Add),
    OpTag::Binary(BinaryKind::Sub),
    OpTag::Binary(BinaryKind::Mul),
    OpTag::Binary(BinaryKind::Div),
    OpTag::Binary(BinaryKind::Min),
    OpTag::Binary(BinaryKind::Max),
    OpTag::Unary(UnaryKind::Exp),
    OpTag::Unary(UnaryKind::Log),
    OpTag::Unary(UnaryKind::Sqrt),
    OpTag::Unary(UnaryKind::Silu),
    OpTag::Unary(UnaryKind::Gelu),
    OpTag::Unary(UnaryKind::Sigmoid),
    OpTag::Unary(UnaryKind::Softplus),
    OpTag::Unary(UnaryKind::Neg),
    OpTag::Affine,
    OpTag::MatMul,
    OpTag::Reduce(ReduceKind::Sum),
    OpTag::Reduce(ReduceKind::Mean),
    OpTag::Reduce(ReduceKind::Var),
    OpTag::Reshape,
    OpTag::Gather,
    OpTag::LayerNormCore,
    OpTag::DwConv3x3,
    OpTag::SelectiveScan,
];

/// How the right operand of a binary op maps onto the left operand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// Right operand is a vector over the last axis of the left.
    Channel(usize),
    /// Right operand holds a single value.
    Scalar,
}

impl Broadcast {
    #[inline]
    fn index(self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Channel(c) => i % c,
            Broadcast::Scalar => 0,
        }
    }
}

enum Op {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        bcast: Broadcast,
    },
    Unary {
        kind: UnaryKind,
        x: Var,
    },
    Affine {
        x: Var,
        scale: f64,
    },
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Reduce {
        kind: ReduceKind,
        x: Var,
        // output index of every input element
        map: Vec<usize>,
        count: usize,
        mean: Vec<f64>,
    },
    Reshape {
        x: Var,
    },
    Gather {
        x: Var,
        index: Arc<[usize]>,
    },
    LayerNormCore {
        x: Var,
        width: usize,
        rstd: Vec<f64>,
    },
    DwConv3x3 {
        x: Var,
        kernel: Var,
        bias: Var,
        h: usize,
        w: usize,
        c: usize,
    },
    SelectiveScan {
        inputs: ScanInputs,
        len: usize,
        channels: usize,
        state: usize,
        // h_t for every step, [L, C, N]
        states: Vec<f64>,
    },
}

/// Operands of the fused selective-scan recurrence.
#[derive(Clone, Copy, Debug)]
pub struct ScanInputs {
    /// `[L, C]` input sequence.
    pub x: Var,
    /// `[L, C]` positive step sizes.
    pub delta: Var,
    /// `[C, N]` negative state-transition rates.
    pub a: Var,
    /// `[L, N]` input projection per step.
    pub b: Var,
    /// `[L, N]` output projection per step.
    pub c: Var,
    /// `[C]` skip weights.
    pub d: Var,
}

impl Op {
    fn tag(&self) -> OpTag {
        match self {
            Op::Leaf => OpTag::Leaf,
            Op::Binary { kind, .. } => OpTag::Binary(*kind),
            Op::Unary { kind, .. } => OpTag::Unary(*kind),
            Op::Affine { .. } => OpTag::Affine,
            Op::MatMul { .. } => OpTag::MatMul,
            Op::Reduce { kind, .. } => OpTag::Reduce(*kind),
            Op::Reshape { .. } => OpTag::Reshape,
            Op::Gather { .. } => OpTag::Gather,
            Op::LayerNormCore { .. } => OpTag::LayerNormCore,
            Op::DwConv3x3 { .. } => OpTag::DwConv3x3,
            Op::SelectiveScan { .. } => OpTag::SelectiveScan,
        }
    }
}

struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    checked: bool,
    fault: Option<OpTag>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// `None` when the node did not receive any gradient.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zero-filled when `v` is detached from the loss.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.lens[v.0]],
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const SOFTPLUS_THRESHOLD: f64 = 30.0;
// sqrt(2 / pi)
const GELU_K: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// tanh-approximated GELU: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > SOFTPLUS_THRESHOLD {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn slot<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    nodes: &[Node],
    v: Var,
) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let len = node.value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

impl Tape {
    /// A checked tape: every forward op rejects NaN/inf results.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            checked: true,
            fault: None,
        }
    }

    pub fn unchecked() -> Self {
        Self {
            checked: false,
            ..Self::new()
        }
    }

    /// Negate the backward rule of the first recorded node tagged `tag`. Only
    /// the gradient-check harness uses this, to prove that it catches a broken
    /// rule. A single node keeps paired faults from cancelling.
    pub fn inject_fault(&mut self, tag: Option<OpTag>) {
        self.fault = tag;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("node shapes are validated on push")
    }

    /// Single value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Result<Var> {
        if self.checked && value.iter().any(|v| !v.is_finite()) {
            return Err(SumError::NonFinite {
                op: op.tag().name(),
            });
        }
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Record a leaf. Gradients are tracked when `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            value: t.data().to_vec(),
            shape: t.shape().to_vec(),
            op: Op::Leaf,
            requires_grad: t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Result<Var> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(SumError::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        self.push(data, shape.to_vec(), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        self.input(shape, data, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.nodes.push(Node {
            value: vec![v],
            shape: vec![1],
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    // ── elementwise ────────────────────────────────────────────────────

    fn broadcast(&self, a: Var, b: Var) -> Result<Broadcast> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            Ok(Broadcast::Same)
        } else if self.nodes[b.0].value.len() == 1 {
            Ok(Broadcast::Scalar)
        } else if sb.len() == 1 && sa.last() == Some(&sb[0]) {
            Ok(Broadcast::Channel(sb[0]))
        } else {
            Err(SumError::shape(format!("cannot broadcast {sb:?} onto {sa:?}")))
        }
    }

    /// Binary op; `b` must match `a`'s shape, be a vector over `a`'s last
    /// axis, or hold a single value.
    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let bcast = self.broadcast(a, b)?;
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        if self.checked && kind == BinaryKind::Div {
            if let Some(j) = bv.iter().position(|&v| v == 0.0) {
                return Err(SumError::Domain {
                    op: "div",
                    detail: format!("zero divisor at index {j}"),
                });
            }
        }
        let f: fn(f64, f64) -> f64 = match kind {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
            BinaryKind::Div => |x, y| x / y,
            BinaryKind::Min => f64::min,
            BinaryKind::Max => f64::max,
        };
        let out: Vec<f64> = av
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv[bcast.index(i)]))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(out, shape, Op::Binary { kind, a, b, bcast }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Min, a, b)
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Max, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if self.checked {
            let bad = match kind {
                UnaryKind::Log => xv.iter().position(|&v| v < 0.0),
                UnaryKind::Sqrt => xv.iter().position(|&v| v < 0.0),
                _ => None,
            };
            if let Some(i) = bad {
                return Err(SumError::Domain {
                    op: OpTag::Unary(kind).name(),
                    detail: format!("negative argument {} at index {i}", xv[i]),
                });
            }
        }
        let f: fn(f64) -> f64 = match kind {
            UnaryKind::Exp => f64::exp,
            UnaryKind::Log => f64::ln,
            UnaryKind::Sqrt => f64::sqrt,
            UnaryKind::Silu => |v| v * sigmoid(v),
            UnaryKind::Gelu => gelu,
            UnaryKind::Sigmoid => sigmoid,
            UnaryKind::Softplus => softplus,
            UnaryKind::Neg => |v| -v,
        };
        let out = xv.iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires_grad(x);
        self.push(out, shape, Op::Unary { kind, x }, rg)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sqrt, x)
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Silu, x)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Gelu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Softplus, x)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Neg, x)
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let out = self.nodes[x.0].value.iter().map(|&v| scale * v + shift).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires_grad(x);
        self.push(out, shape, Op::Affine { x, scale }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.nodes[x.0].value.iter().map(|&v| v + c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires_grad(x);
        self.push(out, shape, Op::Affine { x, scale: 1.0 }, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.affine(x, c, 0.0)
    }

    // ── linear algebra ─────────────────────────────────────────────────

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(SumError::shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(out, vec![m, n], Op::MatMul { a, b, m, k, n }, rg)
    }

    // ── reductions and rearrangement ───────────────────────────────────

    /// Reduce over `axes`; the result drops those axes (`[1]` if none remain).
    pub fn reduce(&mut self, kind: ReduceKind, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let rank = shape.len();
        let mut reduced = vec![false; rank];
        for &ax in axes {
            if ax >= rank {
                return Err(SumError::InvalidAxis { axis: ax, rank });
            }
            reduced[ax] = true;
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect();
        let count: usize = shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| r)
            .map(|(&d, _)| d)
            .product();
        let out_shape = if out_shape.is_empty() { vec![1] } else { out_shape };
        let out_len: usize = out_shape.iter().product();

        // output stride for each input axis (0 on reduced axes)
        let mut ostride = vec![0usize; rank];
        let mut acc = 1;
        for ax in (0..rank).rev() {
            if !reduced[ax] {
                ostride[ax] = acc;
                acc *= shape[ax];
            }
        }
        let xv = &self.nodes[x.0].value;
        let mut map = Vec::with_capacity(xv.len());
        let mut idx = vec![0usize; rank];
        let mut o = 0usize;
        for _ in 0..xv.len() {
            map.push(o);
            // increment the multi-index, tracking the output offset
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                o += ostride[ax];
                if idx[ax] < shape[ax] {
                    break;
                }
                o -= ostride[ax] * shape[ax];
                idx[ax] = 0;
            }
        }
        let mut sums = vec![0.0; out_len];
        for (v, &o) in xv.iter().zip(&map) {
            sums[o] += v;
        }
        let n = count as f64;
        let (out, mean) = match kind {
            ReduceKind::Sum => (sums, Vec::new()),
            ReduceKind::Mean => (sums.iter().map(|s| s / n).collect(), Vec::new()),
            ReduceKind::Var => {
                let mean: Vec<f64> = sums.iter().map(|s| s / n).collect();
                let mut var = vec![0.0; out_len];
                for (v, &o) in xv.iter().zip(&map) {
                    let d = v - mean[o];
                    var[o] += d * d;
                }
                var.iter_mut().for_each(|v| *v /= n);
                (var, mean)
            }
        };
        let rg = self.requires_grad(x);
        self.push(
            out,
            out_shape,
            Op::Reduce {
                kind,
                x,
                map,
                count,
                mean,
            },
            rg,
        )
    }

    pub fn sum(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(ReduceKind::Sum, x, axes)
    }

    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(ReduceKind::Mean, x, axes)
    }

    pub fn var(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(ReduceKind::Var, x, axes)
    }

    fn all_axes(&self, x: Var) -> Vec<usize> {
        (0..self.shape(x).len()).collect()
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes = self.all_axes(x);
        self.sum(x, &axes)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let axes = self.all_axes(x);
        self.mean(x, &axes)
    }

    pub fn var_all(&mut self, x: Var) -> Result<Var> {
        let axes = self.all_axes(x);
        self.var(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n = check_shape(shape)?;
        if n != self.nodes[x.0].value.len() {
            return Err(SumError::shape(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape(x)
            )));
        }
        let out = self.nodes[x.0].value.clone();
        let rg = self.requires_grad(x);
        self.push(out, shape.to_vec(), Op::Reshape { x }, rg)
    }

    /// `out[i] = x[index[i]]`, reshaped to `shape`. Covers permutations,
    /// row selection and patch rearrangements; the backward rule scatter-adds.
    pub fn gather(&mut self, x: Var, index: Arc<[usize]>, shape: &[usize]) -> Result<Var> {
        let n = check_shape(shape)?;
        if n != index.len() {
            return Err(SumError::shape(format!(
                "gather of {} indices into {shape:?}",
                index.len()
            )));
        }
        let xv = &self.nodes[x.0].value;
        if let Some(&bad) = index.iter().find(|&&i| i >= xv.len()) {
            return Err(SumError::shape(format!(
                "gather index {bad} out of bounds for {} values",
                xv.len()
            )));
        }
        let out = index.iter().map(|&i| xv[i]).collect();
        let rg = self.requires_grad(x);
        self.push(out, shape.to_vec(), Op::Gather { x, index }, rg)
    }

    // ── fused kernels ──────────────────────────────────────────────────

    /// Normalize each row over the last axis: `(x - mean) / sqrt(var + eps)`
    /// with population variance. No affine part.
    pub fn layer_norm_core(&mut self, x: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().expect("shapes are non-empty");
        let xv = &self.nodes[x.0].value;
        let rows = xv.len() / width;
        let mut out = vec![0.0; xv.len()];
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xv[r * width..(r + 1) * width];
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let rs = 1.0 / (var + eps).sqrt();
            for (o, v) in out[r * width..(r + 1) * width].iter_mut().zip(row) {
                *o = (v - mean) * rs;
            }
            rstd.push(rs);
        }
        let rg = self.requires_grad(x);
        self.push(out, shape, Op::LayerNormCore { x, width, rstd }, rg)
    }

    /// Depthwise 3x3 cross-correlation over `[H, W, C]` with zero padding,
    /// stride 1. `kernel` is `[C, 3, 3]`, `bias` is `[C]`.
    pub fn dwconv3x3(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 {
            return Err(SumError::shape(format!("dwconv input {sx:?}, want [H, W, C]")));
        }
        let (h, w, c) = (sx[0], sx[1], sx[2]);
        if self.shape(kernel) != [c, 3, 3] || self.shape(bias) != [c] {
            return Err(SumError::shape(format!(
                "dwconv kernel {:?} / bias {:?} for {c} channels",
                self.shape(kernel),
                self.shape(bias)
            )));
        }
        let xv = &self.nodes[x.0].value;
        let kv = &self.nodes[kernel.0].value;
        let bv = &self.nodes[bias.0].value;
        let mut out = vec![0.0; h * w * c];
        for i in 0..h {
            for j in 0..w {
                let o = &mut out[(i * w + j) * c..(i * w + j + 1) * c];
                o.copy_from_slice(bv);
                for di in 0..3 {
                    let ii = i as isize + di as isize - 1;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for dj in 0..3 {
                        let jj = j as isize + dj as isize - 1;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        let src = &xv[(ii as usize * w + jj as usize) * c..][..c];
                        for ch in 0..c {
                            o[ch] += kv[ch * 9 + di * 3 + dj] * src[ch];
                        }
                    }
                }
            }
        }
        let rg = self.requires_grad(x) || self.requires_grad(kernel) || self.requires_grad(bias);
        self.push(
            out,
            sx,
            Op::DwConv3x3 {
                x,
                kernel,
                bias,
                h,
                w,
                c,
            },
            rg,
        )
    }

    /// Linear-time selective state-space recurrence, per channel `c` and
    /// state index `n`:
    ///
    /// ```text
    /// h_t[c,n] = exp(delta_t[c] * a[c,n]) * h_{t-1}[c,n] + delta_t[c] * b_t[n] * x_t[c]
    /// y_t[c]   = sum_n c_t[n] * h_t[c,n] + d[c] * x_t[c]
    /// ```
    ///
    /// with `h_0 = 0`. One left-to-right pass, `O(L*C*N)` time; every `h_t`
    /// is kept for the backward sweep.
    pub fn selective_scan(&mut self, inp: ScanInputs) -> Result<Var> {
        let sx = self.shape(inp.x).to_vec();
        if sx.len() != 2 {
            return Err(SumError::shape(format!("scan input {sx:?}, want [L, C]")));
        }
        let (len, ch) = (sx[0], sx[1]);
        let sa = self.shape(inp.a).to_vec();
        if sa.len() != 2 || sa[0] != ch {
            return Err(SumError::shape(format!("scan A {sa:?} for {ch} channels")));
        }
        let n = sa[1];
        if self.shape(inp.delta) != [len, ch]
            || self.shape(inp.b) != [len, n]
            || self.shape(inp.c) != [len, n]
            || self.shape(inp.d) != [ch]
        {
            return Err(SumError::shape(format!(
                "scan operands delta {:?}, B {:?}, C {:?}, D {:?} for L={len}, C={ch}, N={n}",
                self.shape(inp.delta),
                self.shape(inp.b),
                self.shape(inp.c),
                self.shape(inp.d)
            )));
        }
        let x = &self.nodes[inp.x.0].value;
        let dt = &self.nodes[inp.delta.0].value;
        let a = &self.nodes[inp.a.0].value;
        let bm = &self.nodes[inp.b.0].value;
        let cm = &self.nodes[inp.c.0].value;
        let d = &self.nodes[inp.d.0].value;

        let mut states = vec![0.0; len * ch * n];
        let mut h = vec![0.0; ch * n];
        let mut out = vec![0.0; len * ch];
        for t in 0..len {
            let bt = &bm[t * n..(t + 1) * n];
            let ct = &cm[t * n..(t + 1) * n];
            for c in 0..ch {
                let xv = x[t * ch + c];
                let dv = dt[t * ch + c];
                let hc = &mut h[c * n..(c + 1) * n];
                let ac = &a[c * n..(c + 1) * n];
                let mut y = d[c] * xv;
                for k in 0..n {
                    hc[k] = (dv * ac[k]).exp() * hc[k] + dv * bt[k] * xv;
                    y += ct[k] * hc[k];
                }
                out[t * ch + c] = y;
            }
            states[t * ch * n..(t + 1) * ch * n].copy_from_slice(&h);
        }
        let rg = [inp.x, inp.delta, inp.a, inp.b, inp.c, inp.d]
            .iter()
            .any(|&v| self.requires_grad(v));
        self.push(
            out,
            vec![len, ch],
            Op::SelectiveScan {
                inputs: inp,
                len,
                channels: ch,
                state: n,
                states,
            },
            rg,
        )
    }

    // ── backward ───────────────────────────────────────────────────────

    /// Reverse sweep from a one-element `loss`. Gradients accumulate over
    /// every consumer of a node. A loss that does not depend on any
    /// grad-requiring leaf yields all-zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lens: Vec<usize> = self.nodes.iter().map(|n| n.value.len()).collect();
        if lens[loss.0] != 1 {
            return Err(SumError::Gradient(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads, lens });
        }
        grads[loss.0] = Some(vec![1.0]);
        let nodes = &self.nodes;
        let faulty = self
            .fault
            .and_then(|tag| nodes.iter().position(|n| n.requires_grad && n.op.tag() == tag));

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(mut g) = grads[id].take() else {
                continue;
            };
            if faulty == Some(id) {
                g.iter_mut().for_each(|v| *v = -*v);
            }
            backward_node(node, &g, nodes, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, lens })
    }
}

fn backward_node(node: &Node, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
    match &node.op {
        Op::Leaf => {}
        Op::Binary { kind, a, b, bcast } => {
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            let bc = *bcast;
            if let Some(ga) = slot(grads, nodes, *a) {
                match kind {
                    BinaryKind::Add | BinaryKind::Sub => {
                        ga.iter_mut().zip(g).for_each(|(o, g)| *o += g)
                    }
                    BinaryKind::Mul => {
                        for (i, o) in ga.iter_mut().enumerate() {
                            *o += g[i] * bv[bc.index(i)];
                        }
                    }
                    BinaryKind::Div => {
                        for (i, o) in ga.iter_mut().enumerate() {
                            *o += g[i] / bv[bc.index(i)];
                        }
                    }
                    BinaryKind::Min => {
                        for (i, o) in ga.iter_mut().enumerate() {
                            if av[i] <= bv[bc.index(i)] {
                                *o += g[i];
                            }
                        }
                    }
                    BinaryKind::Max => {
                        for (i, o) in ga.iter_mut().enumerate() {
                            if av[i] >= bv[bc.index(i)] {
                                *o += g[i];
                            }
                        }
                    }
                }
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                for (i, &gi) in g.iter().enumerate() {
                    let j = bc.index(i);
                    let contrib = match kind {
                        BinaryKind::Add => gi,
                        BinaryKind::Sub => -gi,
                        BinaryKind::Mul => gi * av[i],
                        BinaryKind::Div => -gi * av[i] / (bv[j] * bv[j]),
                        BinaryKind::Min => {
                            if av[i] <= bv[j] {
                                0.0
                            } else {
                                gi
                            }
                        }
                        BinaryKind::Max => {
                            if av[i] >= bv[j] {
                                0.0
                            } else {
                                gi
                            }
                        }
                    };
                    gb[j] += contrib;
                }
            }
        }
        Op::Unary { kind, x } => {
            let xv = &nodes[x.0].value;
            let y = &node.value;
            if let Some(gx) = slot(grads, nodes, *x) {
                for i in 0..gx.len() {
                    let d = match kind {
                        UnaryKind::Exp => y[i],
                        UnaryKind::Log => 1.0 / xv[i],
                        UnaryKind::Sqrt => 0.5 / y[i],
                        UnaryKind::Silu => {
                            let s = sigmoid(xv[i]);
                            s * (1.0 + xv[i] * (1.0 - s))
                        }
                        UnaryKind::Gelu => gelu_grad(xv[i]),
                        UnaryKind::Sigmoid => y[i] * (1.0 - y[i]),
                        UnaryKind::Softplus => {
                            if xv[i] > SOFTPLUS_THRESHOLD {
                                1.0
                            } else {
                                sigmoid(xv[i])
                            }
                        }
                        UnaryKind::Neg => -1.0,
                    };
                    gx[i] += g[i] * d;
                }
            }
        }
        Op::Affine { x, scale } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                gx.iter_mut().zip(g).for_each(|(o, g)| *o += scale * g);
            }
        }
        Op::MatMul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            if let Some(ga) = slot(grads, nodes, *a) {
                // ga = g . b^T
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bv[p * n..(p + 1) * n];
                        ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                // gb = a^T . g
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = av[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *o += aip * gv;
                        }
                    }
                }
            }
        }
        Op::Reduce {
            kind,
            x,
            map,
            count,
            mean,
        } => {
            let xv = &nodes[x.0].value;
            let n = *count as f64;
            if let Some(gx) = slot(grads, nodes, *x) {
                for (i, &o) in map.iter().enumerate() {
                    gx[i] += match kind {
                        ReduceKind::Sum => g[o],
                        ReduceKind::Mean => g[o] / n,
                        ReduceKind::Var => g[o] * 2.0 * (xv[i] - mean[o]) / n,
                    };
                }
            }
        }
        Op::Reshape { x } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                gx.iter_mut().zip(g).for_each(|(o, g)| *o += g);
            }
        }
        Op::Gather { x, index } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                for (&i, gv) in index.iter().zip(g) {
                    gx[i] += gv;
                }
            }
        }
        Op::LayerNormCore { x, width, rstd } => {
            let xhat = &node.value;
            let w = *width;
            if let Some(gx) = slot(grads, nodes, *x) {
                for (r, rs) in rstd.iter().enumerate() {
                    let gr = &g[r * w..(r + 1) * w];
                    let xr = &xhat[r * w..(r + 1) * w];
                    let mg = gr.iter().sum::<f64>() / w as f64;
                    let mgx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / w as f64;
                    for ((o, gv), xh) in gx[r * w..(r + 1) * w].iter_mut().zip(gr).zip(xr) {
                        *o += rs * (gv - mg - xh * mgx);
                    }
                }
            }
        }
        Op::DwConv3x3 {
            x,
            kernel,
            bias,
            h,
            w,
            c,
        } => {
            let (h, w, c) = (*h, *w, *c);
            let xv = &nodes[x.0].value;
            let kv = &nodes[kernel.0].value;
            let taps = |i: usize, j: usize, f: &mut dyn FnMut(usize, usize, usize)| {
                for di in 0..3 {
                    let ii = i as isize + di as isize - 1;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for dj in 0..3 {
                        let jj = j as isize + dj as isize - 1;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        f(di * 3 + dj, ii as usize, jj as usize);
                    }
                }
            };
            if let Some(gx) = slot(grads, nodes, *x) {
                for i in 0..h {
                    for j in 0..w {
                        let go = &g[(i * w + j) * c..][..c];
                        taps(i, j, &mut |tap, ii, jj| {
                            let dst = &mut gx[(ii * w + jj) * c..][..c];
                            for ch in 0..c {
                                dst[ch] += go[ch] * kv[ch * 9 + tap];
                            }
                        });
                    }
                }
            }
            if let Some(gk) = slot(grads, nodes, *kernel) {
                for i in 0..h {
                    for j in 0..w {
                        let go = &g[(i * w + j) * c..][..c];
                        taps(i, j, &mut |tap, ii, jj| {
                            let src = &xv[(ii * w + jj) * c..][..c];
                            for ch in 0..c {
                                gk[ch * 9 + tap] += go[ch] * src[ch];
                            }
                        });
                    }
                }
            }
            if let Some(gb) = slot(grads, nodes, *bias) {
                for px in g.chunks(c) {
                    gb.iter_mut().zip(px).for_each(|(o, v)| *o += v);
                }
            }
        }
        Op::SelectiveScan {
            inputs,
            len,
            channels,
            state,
            states,
        } => scan_backward(inputs, *len, *channels, *state, states, g, nodes, grads),
    }
}

#[allow(clippy::too_many_arguments)]
fn scan_backward(
    inp: &ScanInputs,
    len: usize,
    ch: usize,
    n: usize,
    states: &[f64],
    g: &[f64],
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
) {
    let x = &nodes[inp.x.0].value;
    let dt = &nodes[inp.delta.0].value;
    let a = &nodes[inp.a.0].value;
    let bm = &nodes[inp.b.0].value;
    let cm = &nodes[inp.c.0].value;
    let d = &nodes[inp.d.0].value;

    let mut gx = vec![0.0; len * ch];
    let mut gdt = vec![0.0; len * ch];
    let mut ga = vec![0.0; ch * n];
    let mut gb = vec![0.0; len * n];
    let mut gc = vec![0.0; len * n];
    let mut gd = vec![0.0; ch];
    // running dL/dh_t
    let mut gh = vec![0.0; ch * n];

    for t in (0..len).rev() {
        let ht = &states[t * ch * n..(t + 1) * ch * n];
        let hprev = if t > 0 {
            Some(&states[(t - 1) * ch * n..t * ch * n])
        } else {
            None
        };
        let bt = &bm[t * n..(t + 1) * n];
        let ct = &cm[t * n..(t + 1) * n];
        for c in 0..ch {
            let gy = g[t * ch + c];
            let xv = x[t * ch + c];
            let dv = dt[t * ch + c];
            gd[c] += gy * xv;
            let mut gxv = gy * d[c];
            let mut gdv = 0.0;
            for k in 0..n {
                let idx = c * n + k;
                gc[t * n + k] += gy * ht[idx];
                let ghk = gh[idx] + gy * ct[k];
                let da = (dv * a[idx]).exp();
                let hp = hprev.map_or(0.0, |h| h[idx]);
                gdv += ghk * (a[idx] * da * hp + bt[k] * xv);
                ga[idx] += ghk * dv * da * hp;
                gb[t * n + k] += ghk * dv * xv;
                gxv += ghk * dv * bt[k];
                gh[idx] = ghk * da;
            }
            gx[t * ch + c] += gxv;
            gdt[t * ch + c] += gdv;
        }
    }

    for (v, local) in [
        (inp.x, gx),
        (inp.delta, gdt),
        (inp.a, ga),
        (inp.b, gb),
        (inp.c, gc),
        (inp.d, gd),
    ] {
        if let Some(dst) = slot(grads, nodes, v) {
            dst.iter_mut().zip(&local).for_each(|(o, l)| *o += l);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_examples() {
        let mut t = Tape::new();
        let a = t.constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = t.constant(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c), &[3.0, 4.0, 5.0, 6.0]);

        let a = t.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = t.constant(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c), &[19.0, 22.0, 43.0, 50.0]);

        let a = t.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let b = t.constant(&[2, 3], vec![0.0; 6]).unwrap();
        assert!(matches!(t.matmul(a, b), Err(SumError::InvalidShape(_))));
    }

    #[test]
    fn elementwise_examples() {
        let mut t = Tape::new();
        let z = t.scalar(0.0);
        let s = t.silu(z).unwrap();
        assert_eq!(t.item(s), 0.0);
        let sp = t.softplus(z).unwrap();
        assert!(close(t.item(sp), std::f64::consts::LN_2, 1e-12));
        let a = t.constant(&[2], vec![1.0, 2.0]).unwrap();
        let b = t.constant(&[2], vec![3.0, 4.0]).unwrap();
        let c = t.add(a, b).unwrap();
        assert_eq!(t.value(c), &[4.0, 6.0]);
        let big = t.scalar(100.0);
        let sp = t.softplus(big).unwrap();
        assert_eq!(t.item(sp), 100.0);
    }

    #[test]
    fn channel_and_scalar_broadcast() {
        let mut t = Tape::new();
        let x = t.constant(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let v = t.constant(&[3], vec![10.0, 20.0, 30.0]).unwrap();
        let y = t.add(x, v).unwrap();
        assert_eq!(t.value(y), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let s = t.scalar(2.0);
        let y = t.mul(x, s).unwrap();
        assert_eq!(t.value(y), &[2.0, 4.0, 6.0, 8.0, 10.0, 12.0]);
        let bad = t.constant(&[2], vec![1.0, 1.0]).unwrap();
        assert!(t.add(x, bad).is_err());
    }

    #[test]
    fn checked_mode_domain_errors() {
        let mut t = Tape::new();
        let x = t.constant(&[2], vec![1.0, -1.0]).unwrap();
        assert!(matches!(t.log(x), Err(SumError::Domain { .. })));
        assert!(matches!(t.sqrt(x), Err(SumError::Domain { .. })));
        let z = t.constant(&[2], vec![1.0, 0.0]).unwrap();
        assert!(matches!(t.div(x, z), Err(SumError::Domain { .. })));
        let zero = t.scalar(0.0);
        assert!(matches!(t.log(zero), Err(SumError::NonFinite { .. })));

        let mut u = Tape::unchecked();
        let zero = u.scalar(0.0);
        let l = u.log(zero).unwrap();
        assert_eq!(u.item(l), f64::NEG_INFINITY);
    }

    #[test]
    fn reduce_examples() {
        let mut t = Tape::new();
        let x = t.constant(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let s = t.sum_all(x).unwrap();
        assert_eq!(t.item(s), 6.0);
        let x = t.constant(&[2], vec![2.0, 4.0]).unwrap();
        let m = t.mean_all(x).unwrap();
        assert_eq!(t.item(m), 3.0);
        let x = t.constant(&[2], vec![1.0, 3.0]).unwrap();
        let v = t.var_all(x).unwrap();
        assert_eq!(t.item(v), 1.0);
        assert!(matches!(
            t.sum(x, &[1]),
            Err(SumError::InvalidAxis { axis: 1, rank: 1 })
        ));
    }

    #[test]
    fn reduce_over_middle_axis() {
        let mut t = Tape::new();
        let x = t
            .constant(&[2, 3, 2], (0..12).map(f64::from).collect())
            .unwrap();
        let s = t.sum(x, &[1]).unwrap();
        assert_eq!(t.shape(s), &[2, 2]);
        assert_eq!(t.value(s), &[6.0, 9.0, 24.0, 27.0]);
    }

    #[test]
    fn backward_square() {
        let mut t = Tape::new();
        let x = t.input(&[2], vec![1.0, 2.0], true).unwrap();
        let sq = t.mul(x, x).unwrap();
        let l = t.sum_all(sq).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_matmul_column_of_ones() {
        let mut t = Tape::new();
        let x = t.constant(&[1, 2], vec![1.0, 1.0]).unwrap();
        let w = t.input(&[2, 1], vec![0.3, -0.7], true).unwrap();
        let y = t.matmul(x, w).unwrap();
        let l = t.sum_all(y).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(w).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_accumulates_over_consumers() {
        let mut t = Tape::new();
        let x = t.input(&[2], vec![0.5, -1.5], true).unwrap();
        let a = t.scale(x, 3.0).unwrap();
        let b = t.exp(x).unwrap();
        let s = t.add(a, b).unwrap();
        let l = t.sum_all(s).unwrap();
        let g = t.backward(l).unwrap();
        let gx = g.get(x).unwrap();
        for (i, v) in [0.5f64, -1.5].iter().enumerate() {
            assert!(close(gx[i], 3.0 + v.exp(), 1e-12));
        }
    }

    #[test]
    fn detached_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.input(&[2], vec![1.0, 2.0], true).unwrap();
        let c = t.constant(&[2], vec![3.0, 4.0]).unwrap();
        let l = t.sum_all(c).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(x), vec![0.0, 0.0]);
        let nonscalar = t.add(x, c).unwrap();
        assert!(t.backward(nonscalar).is_err());
    }

    #[test]
    fn gather_scatter() {
        let mut t = Tape::new();
        let x = t.input(&[3], vec![1.0, 2.0, 3.0], true).unwrap();
        let idx: Arc<[usize]> = vec![2, 0, 2].into();
        let y = t.gather(x, idx, &[3]).unwrap();
        assert_eq!(t.value(y), &[3.0, 1.0, 3.0]);
        let l = t.sum_all(y).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 0.0, 2.0]);
    }

    #[test]
    fn tag_names_round_trip() {
        for tag in ALL_TAGS {
            assert_eq!(OpTag::from_name(tag.name()), Some(tag));
        }
    }
}
