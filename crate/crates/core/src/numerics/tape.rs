use super::ops::{self, Primitive};
use super::{NumericsError, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node<R> {
    value: Tensor<R>,
    prim: Option<Primitive>,
    inputs: Vec<Var>,
    needs_grad: bool,
}

/// Per-forward-pass gradient tape.
///
/// Values live on the tape; [`Tape::backward`] consumes it, so the recorded
/// graph is freed once adjoints have been computed.
pub struct Tape<R> {
    nodes: Vec<Node<R>>,
    record: bool,
    relu_signs: Option<Vec<bool>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    /// A tape that records for a later backward pass.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), record: true, relu_signs: None }
    }

    /// A tape for inference: nothing requires a gradient.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), record: false, relu_signs: None }
    }

    /// An inference tape that also logs whether each ReLU input was positive.
    pub fn inference_tracking_relu() -> Self {
        Self { nodes: Vec::new(), record: false, relu_signs: Some(Vec::new()) }
    }

    /// Sign pattern of every ReLU input seen so far, when tracking.
    pub fn relu_signs(&self) -> Option<&[bool]> {
        self.relu_signs.as_deref()
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<R>, prim: Option<Primitive>, inputs: Vec<Var>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, prim, inputs, needs_grad: needs_grad && self.record });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<R>, requires_grad: bool) -> Var {
        self.push(value, None, Vec::new(), requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Applies a primitive, recording it when any input requires a gradient.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var, NumericsError> {
        let out = {
            let xs: Vec<&Tensor<R>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            if let (Primitive::Relu, Some(signs)) = (&prim, self.relu_signs.as_mut()) {
                signs.extend(xs[0].data().iter().map(|&v| v > R::zero()));
            }
            ops::forward(&prim, &xs)?
        };
        if !out.all_finite() {
            return Err(NumericsError::NonFinite { op: prim.name().to_string() });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let (prim, inputs) = if needs_grad { (Some(prim), inputs.to_vec()) } else { (None, Vec::new()) };
        Ok(self.push(out, prim, inputs, needs_grad))
    }

    /// Dynamic entry point keyed by primitive name and JSON attributes.
    pub fn apply_named(&mut self, kind: &str, inputs: &[Var], attrs: &serde_json::Value) -> Result<Var, NumericsError> {
        let prim = Primitive::from_name(kind, attrs)?;
        self.apply(prim, inputs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Div, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NumericsError> {
        self.apply(Primitive::Scale(c), &[a])
    }

    pub fn add_broadcast(&mut self, x: Var, b: Var, axis: usize) -> Result<Var, NumericsError> {
        self.apply(Primitive::AddBroadcast { axis }, &[x, b])
    }

    pub fn mul_broadcast(&mut self, x: Var, s: Var, axis: usize) -> Result<Var, NumericsError> {
        self.apply(Primitive::MulBroadcast { axis }, &[x, s])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NumericsError> {
        match b {
            Some(b) => self.apply(Primitive::Linear, &[x, w, b]),
            None => self.apply(Primitive::Linear, &[x, w]),
        }
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var, NumericsError> {
        let prim = Primitive::Conv2d { stride, padding };
        match b {
            Some(b) => self.apply(prim, &[x, w, b]),
            None => self.apply(prim, &[x, w]),
        }
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Upsample2, &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Softmax, &[x])
    }

    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var, NumericsError> {
        self.apply(Primitive::LayerNorm { eps }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Relu, &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Gelu, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Sigmoid, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Mean, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Sum, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        self.apply(Primitive::Reshape { shape: shape.to_vec() }, &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Transpose, &[x])
    }

    pub fn window_partition(
        &mut self,
        x: Var,
        grid: (usize, usize),
        window: usize,
        shift: usize,
    ) -> Result<Var, NumericsError> {
        self.apply(Primitive::WindowPartition { grid_h: grid.0, grid_w: grid.1, window, shift }, &[x])
    }

    pub fn window_merge(
        &mut self,
        x: Var,
        grid: (usize, usize),
        window: usize,
        shift: usize,
    ) -> Result<Var, NumericsError> {
        self.apply(Primitive::WindowMerge { grid_h: grid.0, grid_w: grid.1, window, shift }, &[x])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, NumericsError> {
        self.apply(Primitive::Concat { axis }, xs)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var, NumericsError> {
        self.apply(Primitive::Slice { axis, start, end }, &[x])
    }

    /// Mean squared difference between two equally shaped values.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    /// Reverse pass from a scalar output. Consumes the tape.
    pub fn backward(self, output: Var) -> Result<Gradients<R>, NumericsError> {
        let shape = self.nodes[output.0].value.shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(NumericsError::NonScalarOutput(shape));
        }
        let mut grads: Vec<Option<Vec<R>>> = vec![None; self.nodes.len()];
        if !self.nodes[output.0].needs_grad {
            return Ok(Gradients { grads });
        }
        grads[output.0] = Some(vec![R::one()]);
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            let Some(prim) = node.prim.as_ref() else { continue };
            let Some(g) = grads[i].take() else { continue };
            let xs: Vec<&Tensor<R>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let want: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].needs_grad).collect();
            let input_grads = ops::backward(prim, &xs, &node.value, &g, &want);
            for ((v, gi), w) in node.inputs.iter().zip(input_grads).zip(want) {
                let (Some(gi), true) = (gi, w) else { continue };
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        for (i, g) in grads.iter().enumerate() {
            if g.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(NumericsError::NonFinite { op: format!("backward at node {i}") });
            }
        }
        Ok(Gradients { grads })
    }
}

/// Adjoints of the leaves of a consumed tape.
pub struct Gradients<R> {
    grads: Vec<Option<Vec<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, v: Var) -> Option<&[R]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}
