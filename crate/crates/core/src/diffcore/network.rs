//! Fully-connected backbone with a classification head.
//!
//! The default model is `input -> hidden ReLU layers -> linear head`. The
//! head has `K` outputs for close-set-only models or `K+1` when the last
//! column is the out-of-distribution class. An optional auxiliary `K`-way
//! head on the shared backbone exists for the dual-head ablation.
//!
//! Training uses `forward_*`/`backward_*` pairs: each forward caches layer
//! inputs, each backward consumes the caches of the matching forward and
//! accumulates parameter gradients. A network instance is therefore
//! single-threaded during training; `infer_*` methods are pure and safe on
//! shared snapshots.

use rand::Rng;

use crate::error::{Error, Result};

use super::layer::{relu, relu_backward, DenseLayer};
use super::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HeadSel {
    Main,
    Aux,
}

#[derive(Debug, Clone)]
pub struct Network {
    num_classes: usize,
    backbone: Vec<DenseLayer>,
    head: DenseLayer,
    aux_head: Option<DenseLayer>,
}

impl Network {
    /// Builds a network with He-uniform init. `ood_slot` adds the extra head
    /// output for the OOD class; `dual_head` adds the auxiliary `K`-way head.
    ///
    /// Layers draw from `rng` in order (backbone, main head, aux head) and
    /// weight rows are generated sequentially, so models that differ only in
    /// trailing structure share the initial values of everything before it.
    pub fn new<R: Rng>(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        ood_slot: bool,
        dual_head: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        let mut backbone = Vec::with_capacity(hidden.len());
        let mut prev = input_dim;
        for &width in hidden {
            backbone.push(DenseLayer::new(prev, width, rng)?);
            prev = width;
        }
        let head_width = num_classes + usize::from(ood_slot);
        let head = DenseLayer::new(prev, head_width, rng)?;
        let aux_head = if dual_head {
            Some(DenseLayer::new(prev, num_classes, rng)?)
        } else {
            None
        };
        Ok(Network {
            num_classes,
            backbone,
            head,
            aux_head,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Index of the OOD class column, when the head has one.
    pub fn ood_class(&self) -> Option<usize> {
        (self.head.out_dim() == self.num_classes + 1).then_some(self.num_classes)
    }

    pub fn head_width(&self) -> usize {
        self.head.out_dim()
    }

    pub fn has_aux_head(&self) -> bool {
        self.aux_head.is_some()
    }

    pub fn input_dim(&self) -> usize {
        self.backbone
            .first()
            .map(DenseLayer::in_dim)
            .unwrap_or_else(|| self.head.in_dim())
    }

    pub fn backbone(&self) -> &[DenseLayer] {
        &self.backbone
    }

    pub fn head(&self) -> &DenseLayer {
        &self.head
    }

    pub fn aux_head(&self) -> Option<&DenseLayer> {
        self.aux_head.as_ref()
    }

    pub fn from_parts(
        num_classes: usize,
        backbone: Vec<DenseLayer>,
        head: DenseLayer,
        aux_head: Option<DenseLayer>,
    ) -> Self {
        Network {
            num_classes,
            backbone,
            head,
            aux_head,
        }
    }

    fn run_backbone_infer(&self, x: &Tensor2) -> Result<Tensor2> {
        let mut h = x.clone();
        for layer in &self.backbone {
            h = relu(&layer.infer(&h)?);
        }
        Ok(h)
    }

    /// Pure forward through the main head (no caching, no gradients).
    pub fn infer_main(&self, x: &Tensor2) -> Result<Tensor2> {
        let h = self.run_backbone_infer(x)?;
        self.head.infer(&h)
    }

    /// Pure forward through the auxiliary head.
    pub fn infer_aux(&self, x: &Tensor2) -> Result<Tensor2> {
        let aux = self
            .aux_head
            .as_ref()
            .ok_or_else(|| Error::Config("no auxiliary head".into()))?;
        let h = self.run_backbone_infer(x)?;
        aux.infer(&h)
    }

    /// Logits of the head that serves the close-set task: the auxiliary head
    /// when present, the main head otherwise. Callers restrict to the first
    /// `K` columns.
    pub fn infer_close(&self, x: &Tensor2) -> Result<Tensor2> {
        if self.aux_head.is_some() {
            self.infer_aux(x)
        } else {
            self.infer_main(x)
        }
    }

    fn forward_with(&mut self, x: &Tensor2, sel: HeadSel) -> Result<Tensor2> {
        let mut h = x.clone();
        for layer in &mut self.backbone {
            h = relu(&layer.forward(&h)?);
        }
        match sel {
            HeadSel::Main => self.head.forward(&h),
            HeadSel::Aux => self
                .aux_head
                .as_mut()
                .ok_or_else(|| Error::Config("no auxiliary head".into()))?
                .forward(&h),
        }
    }

    fn backward_with(&mut self, grad_logits: &Tensor2, sel: HeadSel) -> Result<Tensor2> {
        let mut g = match sel {
            HeadSel::Main => self.head.backward(grad_logits)?,
            HeadSel::Aux => self
                .aux_head
                .as_mut()
                .ok_or_else(|| Error::Config("no auxiliary head".into()))?
                .backward(grad_logits)?,
        };
        for i in (0..self.backbone.len()).rev() {
            let masked = {
                let post = if i + 1 == self.backbone.len() {
                    match sel {
                        HeadSel::Main => self.head.cached_input(),
                        HeadSel::Aux => self.aux_head.as_ref().and_then(|a| a.cached_input()),
                    }
                } else {
                    self.backbone[i + 1].cached_input()
                }
                .ok_or_else(|| Error::Shape("backward without forward".into()))?;
                relu_backward(&g, post)?
            };
            g = self.backbone[i].backward(&masked)?;
        }
        Ok(g)
    }

    /// Caching forward through the main head, for training.
    pub fn forward_main(&mut self, x: &Tensor2) -> Result<Tensor2> {
        self.forward_with(x, HeadSel::Main)
    }

    /// Backward for the latest `forward_main`; accumulates gradients and
    /// returns the gradient with respect to the input batch.
    pub fn backward_main(&mut self, grad_logits: &Tensor2) -> Result<Tensor2> {
        self.backward_with(grad_logits, HeadSel::Main)
    }

    pub fn forward_aux(&mut self, x: &Tensor2) -> Result<Tensor2> {
        self.forward_with(x, HeadSel::Aux)
    }

    pub fn backward_aux(&mut self, grad_logits: &Tensor2) -> Result<Tensor2> {
        self.backward_with(grad_logits, HeadSel::Aux)
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.backbone {
            layer.zero_grads();
        }
        self.head.zero_grads();
        if let Some(aux) = &mut self.aux_head {
            aux.zero_grads();
        }
    }

    /// Visits (parameter, gradient) slice pairs in canonical order:
    /// backbone layers bottom-up, main head, auxiliary head.
    pub fn visit_params<F: FnMut(&mut [f64], &[f64])>(&mut self, f: &mut F) {
        for layer in &mut self.backbone {
            layer.visit_params(f);
        }
        self.head.visit_params(f);
        if let Some(aux) = &mut self.aux_head {
            aux.visit_params(f);
        }
    }

    pub fn visit_param_values<F: FnMut(&[f64])>(&self, f: &mut F) {
        for layer in &self.backbone {
            layer.visit_param_values(f);
        }
        self.head.visit_param_values(f);
        if let Some(aux) = &self.aux_head {
            aux.visit_param_values(f);
        }
    }

    pub fn visit_param_slices<F: FnMut(&mut [f64])>(&mut self, f: &mut F) {
        for layer in &mut self.backbone {
            layer.visit_param_slices(f);
        }
        self.head.visit_param_slices(f);
        if let Some(aux) = &mut self.aux_head {
            aux.visit_param_slices(f);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_param_values(&mut |s: &[f64]| n += s.len());
        n
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit_param_values(&mut |s: &[f64]| out.extend_from_slice(s));
        out
    }

    pub fn flatten_grads(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |_: &mut [f64], g: &[f64]| out.extend_from_slice(g));
        out
    }

    pub fn load_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "load_params: {} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        self.visit_param_slices(&mut |s: &mut [f64]| {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::loss::softmax_cross_entropy;
    use crate::rng::substream;

    fn sample_input(rows: usize, cols: usize, seed: u64) -> Tensor2 {
        use rand::Rng;
        let mut rng = substream(seed, "input");
        let mut t = Tensor2::zeros(rows, cols);
        for v in t.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    }

    #[test]
    fn infer_and_forward_agree() {
        let mut rng = substream(11, "model.init");
        let mut net = Network::new(5, &[8, 8], 3, true, false, &mut rng).unwrap();
        let x = sample_input(4, 5, 1);
        let a = net.infer_main(&x).unwrap();
        let b = net.forward_main(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.cols(), 4); // K+1
    }

    #[test]
    fn load_flatten_round_trip() {
        let mut rng = substream(12, "model.init");
        let mut net = Network::new(3, &[4], 2, true, true, &mut rng).unwrap();
        let params = net.flatten_params();
        assert_eq!(params.len(), net.param_count());
        let mut bumped = params.clone();
        for p in &mut bumped {
            *p += 0.5;
        }
        net.load_params(&bumped).unwrap();
        assert_eq!(net.flatten_params(), bumped);
    }

    #[test]
    fn shared_prefix_init_with_narrower_head() {
        // Same stream, ood_slot on/off: backbone and the first K head rows
        // must coincide; the extra row consumes extra draws afterwards.
        let mut rng_a = substream(9, "model.init");
        let a = Network::new(4, &[6], 3, true, false, &mut rng_a).unwrap();
        let mut rng_b = substream(9, "model.init");
        let b = Network::new(4, &[6], 3, false, false, &mut rng_b).unwrap();
        assert_eq!(
            a.backbone[0].weights().data(),
            b.backbone[0].weights().data()
        );
        for row in 0..3 {
            assert_eq!(a.head.weights().row(row), b.head.weights().row(row));
        }
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let mut rng = substream(13, "model.init");
        let mut net = Network::new(4, &[6], 3, true, true, &mut rng).unwrap();
        assert!(net.param_count() <= 200);
        let x = sample_input(5, 4, 2);
        let targets = vec![0, 3, 2, 1, 3];
        let mask = vec![1.0; 5];

        net.zero_grads();
        let logits = net.forward_main(&x).unwrap();
        let ce = softmax_cross_entropy(&logits, &targets, &mask, 4).unwrap();
        net.backward_main(&ce.grad).unwrap();
        let analytic = net.flatten_grads();

        let base = net.flatten_params();
        let eps = 1e-5;
        let mut max_rel: f64 = 0.0;
        for i in 0..base.len() {
            let mut up = base.clone();
            up[i] += eps;
            net.load_params(&up).unwrap();
            let lu = softmax_cross_entropy(&net.infer_main(&x).unwrap(), &targets, &mask, 4)
                .unwrap()
                .loss;
            let mut down = base.clone();
            down[i] -= eps;
            net.load_params(&down).unwrap();
            let ld = softmax_cross_entropy(&net.infer_main(&x).unwrap(), &targets, &mask, 4)
                .unwrap()
                .loss;
            let numeric = (lu - ld) / (2.0 * eps);
            let denom = numeric.abs().max(analytic[i].abs()).max(1e-6);
            max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
        }
        net.load_params(&base).unwrap();
        assert!(max_rel < 1e-4, "max rel error {max_rel}");
    }

    #[test]
    fn aux_head_gradient_reaches_backbone_only_via_aux() {
        let mut rng = substream(14, "model.init");
        let mut net = Network::new(4, &[6], 3, true, true, &mut rng).unwrap();
        let x = sample_input(2, 4, 3);
        net.zero_grads();
        let logits = net.forward_aux(&x).unwrap();
        assert_eq!(logits.cols(), 3);
        let ce = softmax_cross_entropy(&logits, &[0, 1], &[1.0, 1.0], 3).unwrap();
        net.backward_aux(&ce.grad).unwrap();
        // Main head got no gradient; aux and backbone did.
        assert!(net.head.grad_weights().data().iter().all(|&g| g == 0.0));
        assert!(net
            .aux_head
            .as_ref()
            .unwrap()
            .grad_weights()
            .data()
            .iter()
            .any(|&g| g != 0.0));
        assert!(net.backbone[0]
            .grad_weights()
            .data()
            .iter()
            .any(|&g| g != 0.0));
    }
}
