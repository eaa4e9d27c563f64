//! Graph builders: an eager evaluator and a recording tape.
//!
//! Model code is written once against [`Graph`]. [`Eager`] only evaluates;
//! [`Tape`] evaluates through the same kernels and records enough to run one
//! reverse pass into a [`ParamStore`].

use std::sync::Arc;

use super::ops::{self, GatherPlan, Op};
use super::params::ParamStore;
use super::tensor::{Kind, Value};
use crate::error::{Error, Result};

/// Handle to a value inside a graph builder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub trait Graph {
    fn constant(&mut self, value: Value) -> Var;

    /// Leaf bound to the named parameter segment.
    fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var>;

    fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var>;

    fn value(&self, v: Var) -> &Value;

    /// Applies a parameter-free primitive given by name.
    fn apply_named(&mut self, name: &str, inputs: &[Var]) -> Result<Var> {
        let op: Op = name.parse()?;
        self.apply(op, inputs)
    }

    fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }
    fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Sub, &[a, b])
    }
    fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.apply(Op::Scale(c), &[x])
    }
    fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul, &[a, b])
    }
    fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMul, &[a, b])
    }
    fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.apply(Op::AddBias, &[x, b])
    }
    fn sin(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Sin, &[x])
    }
    fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Relu, &[x])
    }
    fn exp(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Exp, &[x])
    }
    fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Sqrt, &[x])
    }
    fn abs(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Abs, &[x])
    }
    fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Sigmoid, &[x])
    }
    fn abs2(&mut self, z: Var) -> Result<Var> {
        self.apply(Op::Abs2, &[z])
    }
    fn polar(&mut self, amplitude: Var, phase: Var) -> Result<Var> {
        self.apply(Op::Polar, &[amplitude, phase])
    }
    fn to_complex(&mut self, re: Var, im: Var) -> Result<Var> {
        self.apply(Op::ToComplex, &[re, im])
    }
    fn crop(&mut self, x: Var, positions: Arc<Vec<(usize, usize)>>, h: usize, w: usize) -> Result<Var> {
        self.apply(Op::Crop { positions, h, w }, &[x])
    }
    fn embed(&mut self, x: Var, positions: Arc<Vec<(usize, usize)>>, rows: usize, cols: usize) -> Result<Var> {
        self.apply(Op::Embed { positions, rows, cols }, &[x])
    }
    fn gather(&mut self, table: Var, plan: Arc<GatherPlan>) -> Result<Var> {
        self.apply(Op::Gather(plan), &[table])
    }
    fn mean(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Mean, &[x])
    }
    fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Sum, &[x])
    }
    fn smooth_l1(&mut self, target: Var, prediction: Var, beta: f64) -> Result<Var> {
        self.apply(Op::SmoothL1 { beta }, &[target, prediction])
    }
    fn fft2c(&mut self, z: Var) -> Result<Var> {
        self.apply(Op::Fft2c, &[z])
    }
    fn ifft2c(&mut self, z: Var) -> Result<Var> {
        self.apply(Op::Ifft2c, &[z])
    }
    fn normalize_max(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::NormalizeMax, &[x])
    }
    fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        self.apply(Op::Reshape(shape), &[x])
    }
}

fn param_value(store: &ParamStore, name: &str) -> Result<(Value, usize, usize)> {
    let seg = store.segment(name)?;
    let data = store.values()[seg.offset..seg.offset + seg.len].to_vec();
    Ok((Value::real(seg.shape.clone(), data)?, seg.offset, seg.len))
}

/// Tape-free evaluation.
#[derive(Default)]
pub struct Eager {
    values: Vec<Value>,
}

impl Eager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn take(mut self, v: Var) -> Value {
        self.values.swap_remove(v.0)
    }
}

impl Graph for Eager {
    fn constant(&mut self, value: Value) -> Var {
        self.values.push(value);
        Var(self.values.len() - 1)
    }

    fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let (v, _, _) = param_value(store, name)?;
        Ok(self.constant(v))
    }

    fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        let args: Vec<&Value> = inputs.iter().map(|v| &self.values[v.0]).collect();
        let out = ops::forward(&op, &args)?;
        Ok(self.constant(out))
    }

    fn value(&self, v: Var) -> &Value {
        &self.values[v.0]
    }
}

struct Node {
    op: Option<Op>,
    inputs: Vec<Var>,
    value: Value,
    /// `(offset, len)` into the parameter store for parameter leaves.
    param: Option<(usize, usize)>,
    requires_grad: bool,
}

/// Append-only record of a forward pass. Nodes only reference earlier nodes,
/// so the node order is a topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    differentiated: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Total node count, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded primitive applications.
    pub fn op_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.op.is_some()).count()
    }

    /// Primitive names in recording order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().filter_map(|n| n.op.as_ref().map(Op::name)).collect()
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a scalar output; writes `d output / d param` into
    /// `store`'s gradient vector (zeroed first).
    pub fn backward(&mut self, output: Var, store: &mut ParamStore) -> Result<()> {
        let v = &self.node(output)?.value;
        if v.kind() != Kind::Real || v.numel() != 1 {
            return Err(Error::Tape(format!(
                "backward needs a real scalar output (got {:?}{:?}); pass an explicit cotangent",
                v.kind(),
                v.shape()
            )));
        }
        let seed = Value::real(v.shape().to_vec(), vec![1.0])?;
        self.backward_with(output, seed, store)
    }

    /// Reverse pass seeded with an explicit cotangent for `output`.
    pub fn backward_with(&mut self, output: Var, cotangent: Value, store: &mut ParamStore) -> Result<()> {
        if self.differentiated {
            return Err(Error::Tape(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        {
            let v = &self.node(output)?.value;
            if v.kind() != cotangent.kind() || v.shape() != cotangent.shape() {
                return Err(Error::Tape(format!(
                    "cotangent {:?}{:?} does not match output {:?}{:?}",
                    cotangent.kind(),
                    cotangent.shape(),
                    v.kind(),
                    v.shape()
                )));
            }
        }
        self.differentiated = true;
        store.zero_grads();
        let mut adjoints: Vec<Option<Value>> = (0..=output.0).map(|_| None).collect();
        adjoints[output.0] = Some(cotangent);
        for i in (0..=output.0).rev() {
            let Some(adj) = adjoints[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Some((offset, len)) = node.param {
                let g = adj.as_real()?;
                if g.data.len() != len {
                    return Err(Error::Tape("parameter adjoint has wrong length".into()));
                }
                for (dst, src) in store.grads_mut()[offset..offset + len].iter_mut().zip(&g.data) {
                    *dst += src;
                }
                continue;
            }
            let Some(op) = &node.op else { continue };
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let args: Vec<&Value> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let grads = ops::backward(op, &args, &node.value, &adj, &needs)?;
            for (input, g) in node.inputs.iter().zip(grads) {
                let Some(g) = g else { continue };
                match &mut adjoints[input.0] {
                    Some(acc) => acc.accumulate(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| Error::Tape(format!("unknown node {}", v.0)))
    }
}

impl Graph for Tape {
    fn constant(&mut self, value: Value) -> Var {
        self.push(Node {
            op: None,
            inputs: vec![],
            value,
            param: None,
            requires_grad: false,
        })
    }

    fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let (value, offset, len) = param_value(store, name)?;
        Ok(self.push(Node {
            op: None,
            inputs: vec![],
            value,
            param: Some((offset, len)),
            requires_grad: true,
        }))
    }

    fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.differentiated {
            return Err(Error::Tape("tape already differentiated".into()));
        }
        for v in inputs {
            self.node(*v)?;
        }
        let value = {
            let args: Vec<&Value> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            ops::forward(&op, &args)?
        };
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(Node {
            op: Some(op),
            inputs: inputs.to_vec(),
            value,
            param: None,
            requires_grad,
        }))
    }

    fn value(&self, v: Var) -> &Value {
        &self.nodes[v.0].value
    }
}

/// Evaluates `build` on a fresh tape, returning the tape and its output.
pub fn tape_forward<F>(build: F) -> Result<(Tape, Var)>
where
    F: FnOnce(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = build(&mut tape)?;
    Ok((tape, out))
}
