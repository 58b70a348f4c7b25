//! A small tanh multilayer perceptron producing a scalar natural parameter.
//!
//! Gradients in parameters and inputs are computed by hand-written reverse
//! mode. The directional derivative of the parameter gradient (needed for
//! exact Hessian-vector products) is computed by a forward tangent pushed
//! through both the forward and backward passes, so second-order products are
//! exact rather than finite-difference approximations.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffcore::{ParamLayout, ParameterVector};
use crate::expfam::NaturalParamModel;

/// Fully connected tanh network with layer sizes
/// `[input, hidden..., 1]`; the final layer is linear.
#[derive(Debug, Clone)]
pub struct Mlp {
    sizes: Vec<usize>,
    layout: Arc<ParamLayout>,
}

struct Forward {
    // activations per layer; index 0 is the input
    activations: Vec<Vec<f64>>,
}

impl Mlp {
    /// `input_dim` inputs, the given hidden widths, scalar output.
    pub fn new(input_dim: usize, hidden: &[usize]) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut blocks = Vec::new();
        for l in 1..sizes.len() {
            blocks.push((format!("w{l}"), sizes[l] * sizes[l - 1]));
            blocks.push((format!("b{l}"), sizes[l]));
        }
        Self {
            sizes,
            layout: Arc::new(ParamLayout::new(blocks)),
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn weight_range(&self, layer: usize) -> std::ops::Range<usize> {
        self.layout.block_range(&format!("w{layer}")).unwrap()
    }

    fn bias_range(&self, layer: usize) -> std::ops::Range<usize> {
        self.layout.block_range(&format!("b{layer}")).unwrap()
    }

    /// Glorot-style random initialization; deterministic per rng state.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterVector {
        let mut values = vec![0.0; self.layout.total_len()];
        for l in 1..=self.layers() {
            let fan_in = self.sizes[l - 1] as f64;
            let scale = (1.0 / fan_in).sqrt();
            for v in &mut values[self.weight_range(l)] {
                *v = scale * rng.sample::<f64, _>(StandardNormal);
            }
            // biases stay zero
        }
        ParameterVector::new(values, Arc::clone(&self.layout)).expect("finite init")
    }

    fn forward(&self, params: &ParameterVector, x: &[f64]) -> Forward {
        debug_assert_eq!(x.len(), self.sizes[0]);
        let p = params.as_slice();
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(x.to_vec());
        for l in 1..=self.layers() {
            let (n_out, n_in) = (self.sizes[l], self.sizes[l - 1]);
            let w = &p[self.weight_range(l)];
            let b = &p[self.bias_range(l)];
            let prev = &activations[l - 1];
            let mut z = vec![0.0; n_out];
            for i in 0..n_out {
                let row = &w[i * n_in..(i + 1) * n_in];
                z[i] = b[i] + crate::diffcore::dot(row, prev);
            }
            if l < self.layers() {
                for v in &mut z {
                    *v = v.tanh();
                }
            }
            activations.push(z);
        }
        Forward { activations }
    }
}

impl NaturalParamModel for Mlp {
    fn param_dim(&self) -> usize {
        self.layout.total_len()
    }

    fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    fn layout(&self) -> Arc<ParamLayout> {
        Arc::clone(&self.layout)
    }

    fn eta(&self, params: &ParameterVector, x: &[f64]) -> f64 {
        let forward = self.forward(params, x);
        forward.activations[self.layers()][0]
    }

    fn eta_grad(&self, params: &ParameterVector, x: &[f64]) -> ParameterVector {
        let forward = self.forward(params, x);
        let p = params.as_slice();
        let mut grad = vec![0.0; self.param_dim()];
        // delta over pre-activations; output layer is linear with scalar output
        let mut delta = vec![1.0];
        for l in (1..=self.layers()).rev() {
            let (n_out, n_in) = (self.sizes[l], self.sizes[l - 1]);
            let w = &p[self.weight_range(l)];
            let prev = &forward.activations[l - 1];
            let w_range = self.weight_range(l);
            let b_range = self.bias_range(l);
            for i in 0..n_out {
                grad[b_range.start + i] = delta[i];
                for j in 0..n_in {
                    grad[w_range.start + i * n_in + j] = delta[i] * prev[j];
                }
            }
            if l > 1 {
                let mut next = vec![0.0; n_in];
                for (j, slot) in next.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for i in 0..n_out {
                        acc += w[i * n_in + j] * delta[i];
                    }
                    // activation derivative: 1 - tanh² = 1 - a²
                    *slot = acc * (1.0 - prev[j] * prev[j]);
                }
                delta = next;
            }
        }
        params.with_values(grad)
    }

    fn eta_input_grad(&self, params: &ParameterVector, x: &[f64]) -> Vec<f64> {
        let forward = self.forward(params, x);
        let p = params.as_slice();
        let mut delta = vec![1.0];
        for l in (1..=self.layers()).rev() {
            let (n_out, n_in) = (self.sizes[l], self.sizes[l - 1]);
            let w = &p[self.weight_range(l)];
            let prev = &forward.activations[l - 1];
            let mut next = vec![0.0; n_in];
            for (j, slot) in next.iter_mut().enumerate() {
                let mut acc = 0.0;
                for i in 0..n_out {
                    acc += w[i * n_in + j] * delta[i];
                }
                if l > 1 {
                    acc *= 1.0 - prev[j] * prev[j];
                }
                *slot = acc;
            }
            delta = next;
        }
        delta
    }

    fn eta_dir_grad(
        &self,
        params: &ParameterVector,
        x: &[f64],
        direction: &ParameterVector,
    ) -> ParameterVector {
        let forward = self.forward(params, x);
        let p = params.as_slice();
        let v = direction.as_slice();
        let layers = self.layers();

        // forward tangent of every activation in the direction of `v`
        let mut tangents: Vec<Vec<f64>> = Vec::with_capacity(layers + 1);
        tangents.push(vec![0.0; self.sizes[0]]);
        for l in 1..=layers {
            let (n_out, n_in) = (self.sizes[l], self.sizes[l - 1]);
            let w = &p[self.weight_range(l)];
            let vw = &v[self.weight_range(l)];
            let vb = &v[self.bias_range(l)];
            let prev = &forward.activations[l - 1];
            let prev_t = &tangents[l - 1];
            let act = &forward.activations[l];
            let mut t = vec![0.0; n_out];
            for (i, slot) in t.iter_mut().enumerate() {
                let row = &w[i * n_in..(i + 1) * n_in];
                let vrow = &vw[i * n_in..(i + 1) * n_in];
                let mut acc = vb[i];
                acc += crate::diffcore::dot(vrow, prev);
                acc += crate::diffcore::dot(row, prev_t);
                if l < layers {
                    acc *= 1.0 - act[i] * act[i];
                }
                *slot = acc;
            }
            tangents.push(t);
        }

        // backward pass carrying (delta, tangent of delta)
        let mut grad_t = vec![0.0; self.param_dim()];
        let mut delta = vec![1.0];
        let mut delta_t = vec![0.0];
        for l in (1..=layers).rev() {
            let (n_out, n_in) = (self.sizes[l], self.sizes[l - 1]);
            let w = &p[self.weight_range(l)];
            let vw = &v[self.weight_range(l)];
            let prev = &forward.activations[l - 1];
            let prev_t = &tangents[l - 1];
            let w_range = self.weight_range(l);
            let b_range = self.bias_range(l);
            for i in 0..n_out {
                grad_t[b_range.start + i] = delta_t[i];
                for j in 0..n_in {
                    grad_t[w_range.start + i * n_in + j] =
                        delta_t[i] * prev[j] + delta[i] * prev_t[j];
                }
            }
            if l > 1 {
                let mut next = vec![0.0; n_in];
                let mut next_t = vec![0.0; n_in];
                for j in 0..n_in {
                    let mut pre = 0.0;
                    let mut pre_t = 0.0;
                    for i in 0..n_out {
                        pre += w[i * n_in + j] * delta[i];
                        pre_t += vw[i * n_in + j] * delta[i] + w[i * n_in + j] * delta_t[i];
                    }
                    let s = 1.0 - prev[j] * prev[j];
                    let s_t = -2.0 * prev[j] * prev_t[j];
                    next[j] = pre * s;
                    next_t[j] = pre_t * s + pre * s_t;
                }
                delta = next;
                delta_t = next_t;
            }
        }
        params.with_values(grad_t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (Mlp, ParameterVector, Vec<f64>) {
        let mlp = Mlp::new(3, &[5, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = mlp.init_params(&mut rng);
        let x = vec![0.4, -0.8, 1.2];
        (mlp, params, x)
    }

    #[test]
    fn eta_grad_matches_finite_differences() {
        let (mlp, params, x) = fixture();
        let grad = mlp.eta_grad(&params, &x);
        let h = 1e-6;
        for j in 0..params.len() {
            let mut plus = params.clone();
            plus.as_mut_slice()[j] += h;
            let mut minus = params.clone();
            minus.as_mut_slice()[j] -= h;
            let fd = (mlp.eta(&plus, &x) - mlp.eta(&minus, &x)) / (2.0 * h);
            assert!(
                (fd - grad.as_slice()[j]).abs() < 1e-7,
                "param {j}: fd={fd} analytic={}",
                grad.as_slice()[j]
            );
        }
    }

    #[test]
    fn input_grad_matches_finite_differences() {
        let (mlp, params, x) = fixture();
        let grad = mlp.eta_input_grad(&params, &x);
        let h = 1e-6;
        for j in 0..x.len() {
            let mut plus = x.clone();
            plus[j] += h;
            let mut minus = x.clone();
            minus[j] -= h;
            let fd = (mlp.eta(&params, &plus) - mlp.eta(&params, &minus)) / (2.0 * h);
            assert!((fd - grad[j]).abs() < 1e-7, "input {j}");
        }
    }

    #[test]
    fn dir_grad_matches_finite_differences() {
        let (mlp, params, x) = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dir = params.with_values(
            (0..params.len())
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect(),
        );
        let exact = mlp.eta_dir_grad(&params, &x, &dir);
        let h = 1e-5;
        let plus = mlp.eta_grad(&params.axpy(h, &dir), &x);
        let minus = mlp.eta_grad(&params.axpy(-h, &dir), &x);
        let fd = plus.sub(&minus).scale(1.0 / (2.0 * h));
        for j in 0..params.len() {
            assert!(
                (fd.as_slice()[j] - exact.as_slice()[j]).abs() < 1e-6,
                "param {j}: fd={} exact={}",
                fd.as_slice()[j],
                exact.as_slice()[j]
            );
        }
    }

    #[test]
    fn dir_grad_is_exactly_linear() {
        let (mlp, params, x) = fixture();
        let u = params.with_values((0..params.len()).map(|i| (i as f64 * 0.37).sin()).collect());
        let w = params.with_values((0..params.len()).map(|i| (i as f64 * 0.11).cos()).collect());
        let lhs = mlp.eta_dir_grad(&params, &x, &u.scale(2.0).axpy(-3.0, &w));
        let rhs = mlp
            .eta_dir_grad(&params, &x, &u)
            .scale(2.0)
            .axpy(-3.0, &mlp.eta_dir_grad(&params, &x, &w));
        for j in 0..params.len() {
            let diff = (lhs.as_slice()[j] - rhs.as_slice()[j]).abs();
            assert!(diff < 1e-12 * (1.0 + rhs.max_norm()), "param {j}");
        }
    }
}
