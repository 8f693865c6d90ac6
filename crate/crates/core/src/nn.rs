//! Small fully connected networks and the Adam optimizer.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Multilayer perceptron with ELU hidden activations and a linear output layer.
///
/// Parameters are stored as `[w0, b0, w1, b1, ...]` with `w: [in, out]` and `b: [1, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<Tensor>,
}

/// Graph handles of an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    ids: Vec<NodeId>,
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`. A zero output layer makes the
    /// initial network output identically zero.
    pub fn new(sizes: &[usize], rng: &mut Rng, zero_output: bool) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut params = Vec::with_capacity(2 * (sizes.len() - 1));
        for (l, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let last = l + 2 == sizes.len();
            let w = if last && zero_output {
                Tensor::zeros(&[fan_in, fan_out])
            } else {
                let std = (1.0 / fan_in as f64).sqrt();
                let data = rng.normals(fan_in * fan_out).into_iter().map(|x| x * std).collect();
                Tensor::new(vec![fan_in, fan_out], data).unwrap()
            };
            params.push(w);
            params.push(Tensor::zeros(&[1, fan_out]));
        }
        Self { sizes: sizes.to_vec(), params }
    }

    /// Rebuilds a network from stored parameters, checking every shape.
    pub fn from_params(sizes: &[usize], params: Vec<Tensor>) -> Result<Self> {
        if sizes.len() < 2 || params.len() != 2 * (sizes.len() - 1) {
            return Err(Error::Shape(format!("{} tensors for layer sizes {sizes:?}", params.len())));
        }
        for (l, pair) in sizes.windows(2).enumerate() {
            let (w, b) = (&params[2 * l], &params[2 * l + 1]);
            if w.shape() != [pair[0], pair[1]] || b.shape() != [1, pair[1]] {
                return Err(Error::Shape(format!(
                    "layer {l} has shapes {:?} and {:?}, expected [{}, {}] and [1, {}]",
                    w.shape(),
                    b.shape(),
                    pair[0],
                    pair[1],
                    pair[1]
                )));
            }
        }
        Ok(Self { sizes: sizes.to_vec(), params })
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

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} entries, network has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Registers the parameters as graph leaves.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        let ids = self
            .params
            .iter()
            .map(|p| if trainable { g.param(p.clone()) } else { g.constant(p.clone()) })
            .collect();
        BoundMlp { ids }
    }

    /// Forward pass without recording a graph.
    pub fn forward_values(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        let layers = self.params.len() / 2;
        for l in 0..layers {
            let mut z = h.matmul(&self.params[2 * l])?;
            let (rows, cols) = z.dims2();
            let b = self.params[2 * l + 1].data();
            let zd = z.data_mut();
            for r in 0..rows {
                for c in 0..cols {
                    zd[r * cols + c] += b[c];
                }
            }
            if l + 1 < layers {
                for v in zd.iter_mut() {
                    if *v <= 0.0 {
                        *v = v.exp_m1();
                    }
                }
            }
            h = z;
        }
        Ok(h)
    }
}

impl BoundMlp {
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let layers = self.ids.len() / 2;
        let mut h = x;
        for l in 0..layers {
            let z = g.matmul(h, self.ids[2 * l])?;
            let z = g.add(z, self.ids[2 * l + 1])?;
            h = if l + 1 < layers { g.elu(z) } else { z };
        }
        Ok(h)
    }

    /// Gradients for each parameter in storage order.
    pub fn grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.ids.iter().map(|&id| grads.wrt(id)).collect()
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// Adam with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gi;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = md[i] / c1;
                let vhat = vd[i] / c2;
                pd[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_and_value_forward_agree() {
        let mut rng = Rng::new(1);
        let net = Mlp::new(&[3, 8, 8, 2], &mut rng, false);
        let x = Tensor::new(vec![4, 3], rng.normals(12)).unwrap();
        let mut g = Graph::new();
        let b = net.bind(&mut g, true);
        let xi = g.constant(x.clone());
        let y = b.forward(&mut g, xi).unwrap();
        assert!(g.value(y).max_abs_diff(&net.forward_values(&x).unwrap()) < 1e-12);
    }

    #[test]
    fn zero_output_layer_gives_zero() {
        let net = Mlp::new(&[2, 4, 3], &mut Rng::new(0), true);
        let y = net.forward_values(&Tensor::ones(&[5, 2])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![Tensor::ones(&[2, 2])];
        let mut adam = Adam::new(&params);
        adam.step(&mut params, &[Tensor::zeros(&[2, 2])], 1e-3);
        assert_eq!(params[0], Tensor::ones(&[2, 2]));
    }

    #[test]
    fn flat_round_trip() {
        let mut net = Mlp::new(&[2, 3, 1], &mut Rng::new(4), false);
        let mut flat = net.flat();
        flat[0] = 42.0;
        net.set_flat(&flat).unwrap();
        assert_eq!(net.flat(), flat);
        assert!(net.set_flat(&flat[1..]).is_err());
    }
}
