//! The curriculum OOD threshold.
//!
//! The ID threshold `tau` is fixed. The OOD threshold `tau_ood` is rescaled
//! every iteration from the ratio of confident-OOD to confident-ID
//! pseudo-label counts, clamped to `[tau_min, tau]`:
//!
//! ```text
//! tau_ood = clamp( (count_ood / count_id) * tau, tau_min, tau )
//! ```
//!
//! Both counters tally samples whose confidence exceeded the *fixed* `tau`.
//! They are exponentially decayed running counts rather than raw per-batch
//! tallies; instantaneous batch counts are far too noisy at small batch
//! sizes.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdController {
    tau: f64,
    tau_min: f64,
    tau_ood: f64,
    count_ood: f64,
    count_id: f64,
    decay: f64,
}

impl ThresholdController {
    /// `tau_ood` starts at the conservative upper bound `tau` and opens up
    /// once confident ID predictions appear.
    pub fn new(tau: f64, tau_min: f64, decay: f64) -> Result<Self> {
        if !(0.0 < tau_min && tau_min < tau && tau < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < tau_min < tau < 1, got tau_min={tau_min}, tau={tau}"
            )));
        }
        if !(0.0 < decay && decay <= 1.0) {
            return Err(Error::Config("decay must be in (0, 1]".into()));
        }
        Ok(ThresholdController {
            tau,
            tau_min,
            tau_ood: tau,
            count_ood: 0.0,
            count_id: 0.0,
            decay,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn tau_min(&self) -> f64 {
        self.tau_min
    }

    pub fn tau_ood(&self) -> f64 {
        self.tau_ood
    }

    pub fn counts(&self) -> (f64, f64) {
        (self.count_ood, self.count_id)
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// Adds one batch's confident pseudo-label tallies.
    pub fn record(&mut self, confident_ood: usize, confident_id: usize) {
        self.count_ood += confident_ood as f64;
        self.count_id += confident_id as f64;
    }

    /// Recomputes `tau_ood` from the current counters, then decays them.
    /// With no confident ID predictions yet the ratio is undefined and
    /// `tau_ood` is left unchanged. Returns the new `tau_ood`.
    pub fn cpl_update(&mut self) -> f64 {
        if self.count_id > 0.0 {
            let raw = (self.count_ood / self.count_id) * self.tau;
            self.tau_ood = raw.clamp(self.tau_min, self.tau);
        }
        self.count_ood *= self.decay;
        self.count_id *= self.decay;
        self.tau_ood
    }

    pub(crate) fn restore(
        tau: f64,
        tau_min: f64,
        tau_ood: f64,
        count_ood: f64,
        count_id: f64,
        decay: f64,
    ) -> Result<Self> {
        let mut ctrl = ThresholdController::new(tau, tau_min, decay)?;
        if !(tau_min..=tau).contains(&tau_ood) {
            return Err(Error::Checkpoint(format!(
                "tau_ood {tau_ood} outside [{tau_min}, {tau}]"
            )));
        }
        ctrl.tau_ood = tau_ood;
        ctrl.count_ood = count_ood;
        ctrl.count_id = count_id;
        Ok(ctrl)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctrl() -> ThresholdController {
        ThresholdController::new(0.95, 0.5, 1.0).unwrap()
    }

    #[test]
    fn low_ratio_clamps_to_tau_min() {
        let mut c = ctrl();
        c.record(20, 100);
        // raw = 0.2 * 0.95 = 0.19 -> clamped to 0.5
        assert_eq!(c.cpl_update(), 0.5);
    }

    #[test]
    fn in_range_ratio_passes_through() {
        let mut c = ctrl();
        c.record(90, 100);
        let t = c.cpl_update();
        assert!((t - 0.855).abs() < 1e-12);
    }

    #[test]
    fn no_confident_id_leaves_threshold_unchanged() {
        let mut c = ctrl();
        c.record(5, 0);
        assert_eq!(c.cpl_update(), 0.95);
        assert_eq!(c.tau_ood(), 0.95);
    }

    #[test]
    fn high_ratio_clamps_to_tau() {
        let mut c = ctrl();
        c.record(500, 100);
        assert_eq!(c.cpl_update(), 0.95);
    }

    #[test]
    fn counters_decay_after_update() {
        let mut c = ThresholdController::new(0.95, 0.5, 0.5).unwrap();
        c.record(8, 16);
        c.cpl_update();
        assert_eq!(c.counts(), (4.0, 8.0));
    }

    #[test]
    fn invalid_bounds_are_rejected() {
        assert!(ThresholdController::new(0.5, 0.5, 1.0).is_err());
        assert!(ThresholdController::new(0.95, 0.0, 1.0).is_err());
        assert!(ThresholdController::new(1.0, 0.5, 1.0).is_err());
    }
}
