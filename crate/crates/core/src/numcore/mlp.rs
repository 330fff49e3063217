//! Fully connected networks with layered backprop and forward-mode tangents.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Layout, ParamVector, Segment};
use super::scalar::Scalar;
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(T::zero()),
        }
    }

    /// Derivative given pre-activation `z` and output `y`.
    fn derivative<T: Scalar>(self, z: T, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Transform applied to the last affine layer.
#[derive(Clone, Debug, PartialEq)]
pub enum OutputTransform<T> {
    Linear,
    Softmax,
    /// `mid + half * tanh(z)` mapping onto `[low, high]` per output.
    BoundedTanh { low: Vec<T>, high: Vec<T> },
    /// `low + (high - low) * sigmoid(z)` per output.
    BoundedSigmoid { low: Vec<T>, high: Vec<T> },
    /// Plain activation, used when the network is a trunk feeding other heads.
    Hidden(Activation),
}

/// Pre- and post-activation values of one forward pass.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    /// `inputs[i]` is the input of layer `i`; `inputs[0]` is the network input.
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    output: Vec<T>,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> &[T] {
        &self.output
    }

    pub fn input(&self) -> &[T] {
        &self.inputs[0]
    }
}

/// Gradient of a scalar w.r.t. the parameters and the input of a network.
#[derive(Clone, Debug)]
pub struct MlpGrad<T> {
    pub params: ParamVector<T>,
    pub input: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    activation: Activation,
    output: OutputTransform<T>,
    params: ParamVector<T>,
}

fn weight_name(layer: usize) -> String {
    format!("l{layer}.weight")
}

fn bias_name(layer: usize) -> String {
    format!("l{layer}.bias")
}

impl<T: Scalar> Mlp<T> {
    /// Zero-initialized network. `sizes` lists the input width, every hidden
    /// width, then the output width.
    pub fn new(sizes: &[usize], activation: Activation, output: OutputTransform<T>) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let out = *sizes.last().unwrap();
        match &output {
            OutputTransform::BoundedTanh { low, high } | OutputTransform::BoundedSigmoid { low, high } => {
                check_dim("output bounds", out, low.len())?;
                check_dim("output bounds", out, high.len())?;
                if low.iter().zip(high).any(|(l, h)| l >= h) {
                    return Err(Error::Config("output bounds need low < high".into()));
                }
            }
            OutputTransform::Softmax if out < 1 => {
                return Err(Error::Config("softmax needs at least one output".into()));
            }
            _ => {}
        }
        let mut segments = Vec::new();
        for (i, w) in sizes.windows(2).enumerate() {
            segments.push(Segment::new(weight_name(i), vec![w[1], w[0]]));
            segments.push(Segment::new(bias_name(i), vec![w[1]]));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            output,
            params: ParamVector::zeros(Layout::new(segments)?),
        })
    }

    /// Uniform `±1/sqrt(fan_in)` weights; the final layer is multiplied by `final_scale`.
    pub fn initialized<R: Rng + ?Sized>(mut self, rng: &mut R, final_scale: f64) -> Self {
        let layers = self.num_layers();
        for i in 0..layers {
            let fan_in = self.sizes[i];
            let bound = 1.0 / (fan_in as f64).sqrt();
            let scale = if i + 1 == layers { final_scale } else { 1.0 };
            for name in [weight_name(i), bias_name(i)] {
                let seg = self.params.segment_mut(&name).unwrap();
                for v in seg.iter_mut() {
                    *v = T::lit(scale * rng.random_range(-bound..bound));
                }
            }
        }
        self
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_transform(&self) -> &OutputTransform<T> {
        &self.output
    }

    pub fn params(&self) -> &ParamVector<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector<T> {
        &mut self.params
    }

    pub fn layout(&self) -> &Layout {
        self.params.layout()
    }

    fn layer(&self, i: usize) -> (&[T], &[T]) {
        let w = self.params.segment(&weight_name(i)).unwrap();
        let b = self.params.segment(&bias_name(i)).unwrap();
        (w, b)
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_trace(input)?.output)
    }

    pub fn forward_trace(&self, input: &[T]) -> Result<Trace<T>> {
        check_dim("network input", self.input_dim(), input.len())?;
        let layers = self.num_layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers);
        let mut current = input.to_vec();
        for i in 0..layers {
            let (w, b) = self.layer(i);
            let (fan_in, fan_out) = (self.sizes[i], self.sizes[i + 1]);
            let z: Vec<T> = (0..fan_out)
                .map(|r| {
                    let row = &w[r * fan_in..(r + 1) * fan_in];
                    row.iter().zip(&current).fold(b[r], |acc, (&wv, &xv)| acc + wv * xv)
                })
                .collect();
            let next = if i + 1 < layers {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                self.apply_output(&z)
            };
            inputs.push(std::mem::replace(&mut current, next));
            pre.push(z);
        }
        Ok(Trace {
            inputs,
            pre,
            output: current,
        })
    }

    fn apply_output(&self, z: &[T]) -> Vec<T> {
        match &self.output {
            OutputTransform::Linear => z.to_vec(),
            OutputTransform::Softmax => softmax(z),
            OutputTransform::BoundedTanh { low, high } => z
                .iter()
                .zip(low.iter().zip(high))
                .map(|(&v, (&l, &h))| {
                    let half = (h - l) / T::lit(2.0);
                    l + half + half * v.tanh()
                })
                .collect(),
            OutputTransform::BoundedSigmoid { low, high } => z
                .iter()
                .zip(low.iter().zip(high))
                .map(|(&v, (&l, &h))| l + (h - l) * sigmoid(v))
                .collect(),
            OutputTransform::Hidden(act) => z.iter().map(|&v| act.apply(v)).collect(),
        }
    }

    /// Pulls an output-space vector back through the output transform.
    fn output_vjp(&self, trace: &Trace<T>, upstream: &[T]) -> Vec<T> {
        let z = trace.pre.last().unwrap();
        let y = &trace.output;
        match &self.output {
            OutputTransform::Linear => upstream.to_vec(),
            OutputTransform::Softmax => {
                let inner = y.iter().zip(upstream).fold(T::zero(), |acc, (&p, &u)| acc + p * u);
                y.iter().zip(upstream).map(|(&p, &u)| p * (u - inner)).collect()
            }
            OutputTransform::BoundedTanh { low, high } => z
                .iter()
                .zip(upstream)
                .zip(low.iter().zip(high))
                .map(|((&zv, &u), (&l, &h))| {
                    let t = zv.tanh();
                    u * (h - l) / T::lit(2.0) * (T::one() - t * t)
                })
                .collect(),
            OutputTransform::BoundedSigmoid { low, high } => z
                .iter()
                .zip(upstream)
                .zip(low.iter().zip(high))
                .map(|((&zv, &u), (&l, &h))| {
                    let s = sigmoid(zv);
                    u * (h - l) * s * (T::one() - s)
                })
                .collect(),
            OutputTransform::Hidden(act) => z
                .iter()
                .zip(y)
                .zip(upstream)
                .map(|((&zv, &yv), &u)| u * act.derivative(zv, yv))
                .collect(),
        }
    }

    fn check_trace(&self, trace: &Trace<T>) -> Result<()> {
        let fits = trace.inputs.len() == self.num_layers()
            && trace
                .inputs
                .iter()
                .zip(&self.sizes)
                .all(|(x, &s)| x.len() == s)
            && trace.output.len() == self.output_dim();
        if fits {
            Ok(())
        } else {
            Err(Error::Usage("trace was not produced by this network".into()))
        }
    }

    /// Vector-Jacobian product: gradient of `upstream · output` w.r.t. params and input.
    pub fn backward(&self, trace: &Trace<T>, upstream: &[T]) -> Result<MlpGrad<T>> {
        self.check_trace(trace)?;
        check_dim("upstream gradient", self.output_dim(), upstream.len())?;
        let mut grad = self.params.zeros_like();
        let mut delta = self.output_vjp(trace, upstream);
        for i in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[i], self.sizes[i + 1]);
            let x = &trace.inputs[i];
            {
                let gw = grad.segment_mut(&weight_name(i)).unwrap();
                for r in 0..fan_out {
                    let d = delta[r];
                    for (c, &xv) in x.iter().enumerate() {
                        gw[r * fan_in + c] += d * xv;
                    }
                }
            }
            grad.segment_mut(&bias_name(i)).unwrap().copy_from_slice(&delta);
            let (w, _) = self.layer(i);
            let mut dx = vec![T::zero(); fan_in];
            for r in 0..fan_out {
                let d = delta[r];
                for (c, g) in dx.iter_mut().enumerate() {
                    *g += w[r * fan_in + c] * d;
                }
            }
            if i > 0 {
                let z = &trace.pre[i - 1];
                for (c, g) in dx.iter_mut().enumerate() {
                    *g *= self.activation.derivative(z[c], x[c]);
                }
            }
            delta = dx;
        }
        Ok(MlpGrad {
            params: grad,
            input: delta,
        })
    }

    /// Jacobian-vector product: directional derivative of the output when the
    /// parameters move along `param_tangent` and the input along `input_tangent`.
    pub fn jvp(&self, trace: &Trace<T>, param_tangent: &[T], input_tangent: Option<&[T]>) -> Result<Vec<T>> {
        self.check_trace(trace)?;
        check_dim("parameter tangent", self.params.len(), param_tangent.len())?;
        let mut dx = match input_tangent {
            Some(t) => {
                check_dim("input tangent", self.input_dim(), t.len())?;
                t.to_vec()
            }
            None => vec![T::zero(); self.input_dim()],
        };
        let layers = self.num_layers();
        let layout = self.layout();
        for i in 0..layers {
            let (fan_in, fan_out) = (self.sizes[i], self.sizes[i + 1]);
            let (w, _) = self.layer(i);
            let dw = &param_tangent[layout.range(&weight_name(i)).unwrap()];
            let db = &param_tangent[layout.range(&bias_name(i)).unwrap()];
            let x = &trace.inputs[i];
            let dz: Vec<T> = (0..fan_out)
                .map(|r| {
                    let mut acc = db[r];
                    for c in 0..fan_in {
                        acc += dw[r * fan_in + c] * x[c] + w[r * fan_in + c] * dx[c];
                    }
                    acc
                })
                .collect();
            dx = if i + 1 < layers {
                let y = &trace.inputs[i + 1];
                dz.iter()
                    .zip(&trace.pre[i])
                    .zip(y)
                    .map(|((&d, &z), &yv)| d * self.activation.derivative(z, yv))
                    .collect()
            } else {
                self.output_jvp(trace, &dz)
            };
        }
        Ok(dx)
    }

    fn output_jvp(&self, trace: &Trace<T>, dz: &[T]) -> Vec<T> {
        // Every output transform here is elementwise except softmax, whose
        // Jacobian is symmetric, so the VJP and JVP coincide.
        self.output_vjp(trace, dz)
    }
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}
