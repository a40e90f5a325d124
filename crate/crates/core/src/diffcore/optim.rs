//! SGD with momentum, and EMA tracking of a teacher copy.

use crate::error::{Error, Result};

use super::network::Network;

/// Momentum SGD settings. The update is the common deep-learning recurrence
///
/// ```text
/// v <- momentum * v + grad + weight_decay * param
/// param <- param - learning_rate * v
/// ```
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.03,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// One momentum-SGD update over aligned parameter/gradient/velocity slices.
pub fn sgd_step_slice(params: &mut [f64], grads: &[f64], velocity: &mut [f64], cfg: &SgdConfig) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), velocity.len());
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let g = g + cfg.weight_decay * *p;
        *v = cfg.momentum * *v + g;
        *p -= cfg.learning_rate * *v;
    }
}

/// Optimizer state: one velocity buffer per parameter tensor of the network,
/// in the network's canonical parameter order.
#[derive(Debug, Clone)]
pub struct SgdOptimizer {
    cfg: SgdConfig,
    velocity: Vec<Vec<f64>>,
}

impl SgdOptimizer {
    pub fn new(cfg: SgdConfig, net: &Network) -> Result<Self> {
        cfg.validate()?;
        let mut velocity = Vec::new();
        net.visit_param_values(&mut |slice: &[f64]| velocity.push(vec![0.0; slice.len()]));
        Ok(SgdOptimizer { cfg, velocity })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.cfg
    }

    /// Applies one step using the gradients accumulated in the network.
    pub fn step(&mut self, net: &mut Network) {
        let mut i = 0;
        let cfg = self.cfg;
        let velocity = &mut self.velocity;
        net.visit_params(&mut |params: &mut [f64], grads: &[f64]| {
            sgd_step_slice(params, grads, &mut velocity[i], &cfg);
            i += 1;
        });
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn velocity_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.velocity
    }
}

/// EMA update `teacher <- alpha * teacher + (1 - alpha) * student`, applied
/// elementwise over every parameter. `alpha = 0` copies the student.
pub fn ema_update(teacher: &mut Network, student: &Network, alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config("ema alpha must be in [0, 1)".into()));
    }
    let mut student_slices: Vec<&[f64]> = Vec::new();
    student.visit_param_values(&mut |s: &[f64]| student_slices.push(s));
    let mut i = 0;
    let mut mismatch = false;
    teacher.visit_param_slices(&mut |t: &mut [f64]| {
        let Some(s) = student_slices.get(i) else {
            mismatch = true;
            return;
        };
        if s.len() != t.len() {
            mismatch = true;
            return;
        }
        for (tv, &sv) in t.iter_mut().zip(*s) {
            *tv = alpha * *tv + (1.0 - alpha) * sv;
        }
        i += 1;
    });
    if mismatch || i != student_slices.len() {
        return Err(Error::Shape("ema: teacher/student parameter layout differs".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn plain_sgd_step() {
        let cfg = SgdConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let mut p = [1.0];
        let mut v = [0.0];
        sgd_step_slice(&mut p, &[1.0], &mut v, &cfg);
        assert!((p[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let cfg = SgdConfig::default();
        let mut p = [1.25, -0.5];
        let mut v = [0.0, 0.0];
        sgd_step_slice(&mut p, &[0.0, 0.0], &mut v, &cfg);
        assert_eq!(p, [1.25, -0.5]);
    }

    #[test]
    fn momentum_matches_hand_unrolled_recurrence() {
        // v1 = g1, p1 = p0 - lr*v1; v2 = m*v1 + g2, p2 = p1 - lr*v2.
        let cfg = SgdConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let (g1, g2) = (0.5, -0.25);
        let mut p = [2.0];
        let mut v = [0.0];
        sgd_step_slice(&mut p, &[g1], &mut v, &cfg);
        sgd_step_slice(&mut p, &[g2], &mut v, &cfg);

        let v1 = g1;
        let p1 = 2.0 - 0.1 * v1;
        let v2 = 0.9 * v1 + g2;
        let p2 = p1 - 0.1 * v2;
        assert!((p[0] - p2).abs() < 1e-15);
        assert!((v[0] - v2).abs() < 1e-15);
    }

    fn tiny_net(seed: u64) -> Network {
        let mut rng = substream(seed, "model.init");
        Network::new(3, &[4], 2, true, false, &mut rng).unwrap()
    }

    #[test]
    fn ema_scalar_case() {
        // alpha=0.999, teacher=1, student=0 -> 0.999
        let mut t = 1.0;
        t = 0.999 * t + (1.0 - 0.999) * 0.0;
        assert!((t - 0.999).abs() < 1e-15);
    }

    #[test]
    fn ema_fixed_point_when_equal() {
        let student = tiny_net(1);
        let mut teacher = student.clone();
        let before = teacher.flatten_params();
        ema_update(&mut teacher, &student, 0.999).unwrap();
        assert_eq!(before, teacher.flatten_params());
    }

    #[test]
    fn ema_alpha_zero_copies_student() {
        let student = tiny_net(2);
        let mut teacher = tiny_net(3);
        ema_update(&mut teacher, &student, 0.0).unwrap();
        assert_eq!(teacher.flatten_params(), student.flatten_params());
    }

    #[test]
    fn ema_gap_shrinks_geometrically() {
        let student = tiny_net(4);
        let mut teacher = tiny_net(5);
        let alpha = 0.9;
        let s = student.flatten_params();
        let t0 = teacher.flatten_params();
        let n = 7;
        for _ in 0..n {
            ema_update(&mut teacher, &student, alpha).unwrap();
        }
        let tn = teacher.flatten_params();
        let scale = alpha.powi(n);
        for ((t, s), t_n) in t0.iter().zip(&s).zip(&tn) {
            let expected = s + scale * (t - s);
            assert!((t_n - expected).abs() < 1e-12);
        }
    }
}
