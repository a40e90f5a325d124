//! Dense layers and the ReLU activation, with explicit backward passes.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};

use super::tensor::Tensor2;

/// A dense affine layer `y = x W^T + b` with He-uniform initialization.
///
/// The layer owns its gradient buffers; `backward` accumulates into them and
/// `zero_grads` resets them, so several loss terms can contribute to one
/// optimizer step. `forward` caches its input for the matching `backward`.
/// Weight rows are generated in row-major order, so two layers built from the
/// same stream share their leading rows' initial values even if their output
/// widths differ.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    weights: Tensor2, // out x in
    bias: Vec<f64>,
    grad_weights: Tensor2,
    grad_bias: Vec<f64>,
    cached_input: Option<Tensor2>,
}

impl DenseLayer {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config("layer dims must be > 0".into()));
        }
        let limit = (6.0 / in_dim as f64).sqrt();
        let dist = Uniform::new(-limit, limit);
        let mut weights = Tensor2::zeros(out_dim, in_dim);
        for w in weights.data_mut() {
            *w = dist.sample(rng);
        }
        Ok(DenseLayer {
            weights,
            bias: vec![0.0; out_dim],
            grad_weights: Tensor2::zeros(out_dim, in_dim),
            grad_bias: vec![0.0; out_dim],
            cached_input: None,
        })
    }

    pub fn from_parts(weights: Tensor2, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::Shape(format!(
                "bias length {} vs {} output rows",
                bias.len(),
                weights.rows()
            )));
        }
        let grad_weights = Tensor2::zeros(weights.rows(), weights.cols());
        let grad_bias = vec![0.0; bias.len()];
        Ok(DenseLayer {
            weights,
            bias,
            grad_weights,
            grad_bias,
            cached_input: None,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Tensor2 {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Forward pass; caches the input for the next `backward` call.
    pub fn forward(&mut self, input: &Tensor2) -> Result<Tensor2> {
        let out = self.infer(input)?;
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    /// Forward pass without touching the backward cache.
    pub fn infer(&self, input: &Tensor2) -> Result<Tensor2> {
        if input.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "dense forward: input cols {} vs layer in_dim {}",
                input.cols(),
                self.in_dim()
            )));
        }
        let mut out = input.matmul_nt(&self.weights)?;
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += *b;
            }
        }
        Ok(out)
    }

    /// Post-activation output of the latest cached forward pass, recomputed
    /// on demand is not possible, so this exposes the cached input instead.
    pub fn cached_input(&self) -> Option<&Tensor2> {
        self.cached_input.as_ref()
    }

    /// Accumulates parameter gradients for the cached forward pass and
    /// returns the gradient with respect to the layer input.
    pub fn backward(&mut self, grad_out: &Tensor2) -> Result<Tensor2> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or_else(|| Error::Shape("dense backward without forward".into()))?;
        if grad_out.rows() != input.rows() || grad_out.cols() != self.out_dim() {
            return Err(Error::Shape(format!(
                "dense backward: grad {}x{} vs expected {}x{}",
                grad_out.rows(),
                grad_out.cols(),
                input.rows(),
                self.out_dim()
            )));
        }
        let in_dim = self.in_dim();
        let mut grad_in = Tensor2::zeros(input.rows(), in_dim);
        for n in 0..input.rows() {
            let g = grad_out.row(n);
            let x = input.row(n);
            let gi = grad_in.row_mut(n);
            for (o, &go) in g.iter().enumerate() {
                self.grad_bias[o] += go;
                let wrow = self.weights.row(o);
                let gwrow = self.grad_weights.row_mut(o);
                for d in 0..in_dim {
                    gwrow[d] = go.mul_add(x[d], gwrow[d]);
                    gi[d] = go.mul_add(wrow[d], gi[d]);
                }
            }
        }
        Ok(grad_in)
    }

    pub fn zero_grads(&mut self) {
        self.grad_weights.fill(0.0);
        self.grad_bias.fill(0.0);
    }

    pub fn grad_weights(&self) -> &Tensor2 {
        &self.grad_weights
    }

    pub fn grad_bias(&self) -> &[f64] {
        &self.grad_bias
    }

    /// Visits (parameter, gradient) slice pairs in canonical order
    /// (weights first, then bias).
    pub fn visit_params<F: FnMut(&mut [f64], &[f64])>(&mut self, f: &mut F) {
        let DenseLayer {
            weights,
            bias,
            grad_weights,
            grad_bias,
            ..
        } = self;
        f(weights.data_mut(), grad_weights.data());
        f(bias, grad_bias);
    }

    /// Read-only traversal in the same canonical order as `visit_params`.
    pub fn visit_param_values<F: FnMut(&[f64])>(&self, f: &mut F) {
        f(self.weights.data());
        f(&self.bias);
    }

    /// Mutable traversal in the same canonical order as `visit_params`.
    pub fn visit_param_slices<F: FnMut(&mut [f64])>(&mut self, f: &mut F) {
        f(self.weights.data_mut());
        f(&mut self.bias);
    }
}

/// Elementwise `max(0, x)`.
pub fn relu(input: &Tensor2) -> Tensor2 {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Masks `grad_out` where the forward activation was clamped to zero.
/// `post` is the post-ReLU output of the forward pass; entries that are zero
/// there (inputs <= 0) pass no gradient.
pub fn relu_backward(grad_out: &Tensor2, post: &Tensor2) -> Result<Tensor2> {
    if grad_out.rows() != post.rows() || grad_out.cols() != post.cols() {
        return Err(Error::Shape("relu backward: shape mismatch".into()));
    }
    let mut out = grad_out.clone();
    for (g, &p) in out.data_mut().iter_mut().zip(post.data()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn identity_weights_pass_input_through() {
        let w = Tensor2::from_vec(2, 2, vec![1., 0., 0., 1.]).unwrap();
        let layer = DenseLayer::from_parts(w, vec![0., 0.]).unwrap();
        let x = Tensor2::from_vec(1, 2, vec![3., 4.]).unwrap();
        assert_eq!(layer.infer(&x).unwrap().data(), &[3., 4.]);
    }

    #[test]
    fn forced_arithmetic_single_unit() {
        let w = Tensor2::from_vec(1, 2, vec![1., 1.]).unwrap();
        let layer = DenseLayer::from_parts(w, vec![1.]).unwrap();
        let x = Tensor2::from_vec(1, 2, vec![2., 3.]).unwrap();
        assert_eq!(layer.infer(&x).unwrap().data(), &[6.]);
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let mut rng = substream(0, "t");
        let mut layer = DenseLayer::new(3, 2, &mut rng).unwrap();
        let x = Tensor2::zeros(1, 4);
        assert!(matches!(layer.forward(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn relu_clamps_and_masks() {
        let x = Tensor2::from_vec(1, 2, vec![-1., 2.]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0., 2.]);
        let g = Tensor2::from_vec(1, 2, vec![5., 5.]).unwrap();
        let gi = relu_backward(&g, &y).unwrap();
        assert_eq!(gi.data(), &[0., 5.]);
    }

    #[test]
    fn relu_all_negative_is_zero_everywhere() {
        let x = Tensor2::from_vec(2, 2, vec![-1., -2., -3., -0.5]).unwrap();
        let y = relu(&x);
        assert!(y.data().iter().all(|&v| v == 0.0));
        let g = Tensor2::from_vec(2, 2, vec![1., 1., 1., 1.]).unwrap();
        let gi = relu_backward(&g, &y).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_gradient_matches_finite_differences() {
        // Random 4x3 layer; scalar loss = sum of squared outputs.
        let mut rng = substream(42, "fd");
        let mut layer = DenseLayer::new(3, 4, &mut rng).unwrap();
        let x = Tensor2::from_vec(2, 3, vec![0.3, -0.7, 0.1, 0.9, 0.2, -0.4]).unwrap();

        let loss = |layer: &DenseLayer, x: &Tensor2| -> f64 {
            let y = layer.infer(x).unwrap();
            y.data().iter().map(|v| v * v).sum::<f64>()
        };

        let y = layer.forward(&x).unwrap();
        let mut grad_out = y.clone();
        for v in grad_out.data_mut() {
            *v *= 2.0;
        }
        let grad_in = layer.backward(&grad_out).unwrap();

        let eps = 1e-5;
        // Weights.
        for o in 0..4 {
            for d in 0..3 {
                let orig = layer.weights.get(o, d);
                layer.weights.set(o, d, orig + eps);
                let up = loss(&layer, &x);
                layer.weights.set(o, d, orig - eps);
                let down = loss(&layer, &x);
                layer.weights.set(o, d, orig);
                let numeric = (up - down) / (2.0 * eps);
                let analytic = layer.grad_weights.get(o, d);
                let rel = (analytic - numeric).abs() / numeric.abs().max(1e-8);
                assert!(rel < 1e-5, "weight ({o},{d}): {analytic} vs {numeric}");
            }
        }
        // Bias.
        for o in 0..4 {
            let orig = layer.bias[o];
            layer.bias[o] = orig + eps;
            let up = loss(&layer, &x);
            layer.bias[o] = orig - eps;
            let down = loss(&layer, &x);
            layer.bias[o] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let rel = (layer.grad_bias[o] - numeric).abs() / numeric.abs().max(1e-8);
            assert!(rel < 1e-5);
        }
        // Inputs.
        let mut xm = x.clone();
        for n in 0..2 {
            for d in 0..3 {
                let orig = xm.get(n, d);
                xm.set(n, d, orig + eps);
                let up = loss(&layer, &xm);
                xm.set(n, d, orig - eps);
                let down = loss(&layer, &xm);
                xm.set(n, d, orig);
                let numeric = (up - down) / (2.0 * eps);
                let rel = (grad_in.get(n, d) - numeric).abs() / numeric.abs().max(1e-8);
                assert!(rel < 1e-5);
            }
        }
    }
}
