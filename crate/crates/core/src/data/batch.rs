//! Epoch-shuffled batch sampling over labeled and unlabeled pools.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{Stream, StreamState};

/// Draws fixed-size index batches from a pool of `n` samples.
///
/// When the batch fits the pool, each epoch is a fresh shuffle consumed in
/// contiguous chunks (the ragged tail is dropped). When the batch is larger
/// than the pool, each batch samples indices uniformly with replacement.
/// The sampler owns its RNG, so its draw sequence is independent of every
/// other stream and can be checkpointed exactly.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    n: usize,
    batch: usize,
    order: Vec<u32>,
    pos: usize,
    rng: Stream,
}

impl EpochSampler {
    pub fn new(n: usize, batch: usize, mut rng: Stream) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("cannot sample from an empty pool".into()));
        }
        if batch == 0 {
            return Err(Error::Config("batch size must be > 0".into()));
        }
        let order = if batch <= n {
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.shuffle(&mut rng);
            order
        } else {
            Vec::new()
        };
        Ok(EpochSampler {
            n,
            batch,
            order,
            pos: 0,
            rng,
        })
    }

    pub fn pool_size(&self) -> usize {
        self.n
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.batch > self.n {
            return (0..self.batch)
                .map(|_| self.rng.gen_range(0..self.n))
                .collect();
        }
        if self.pos + self.batch > self.n {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + self.batch]
            .iter()
            .map(|&i| i as usize)
            .collect();
        self.pos += self.batch;
        out
    }

    pub(crate) fn state(&self) -> SamplerState {
        SamplerState {
            n: self.n,
            batch: self.batch,
            order: self.order.clone(),
            pos: self.pos,
            rng: StreamState::capture(&self.rng),
        }
    }

    pub(crate) fn from_state(state: SamplerState) -> Self {
        EpochSampler {
            n: state.n,
            batch: state.batch,
            order: state.order,
            pos: state.pos,
            rng: state.rng.restore(),
        }
    }
}

/// Serializable sampler position for bit-exact resume.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SamplerState {
    pub n: usize,
    pub batch: usize,
    pub order: Vec<u32>,
    pub pos: usize,
    pub rng: StreamState,
}

/// Paired sampling: a batch of `B` labeled indices plus `mu * B` unlabeled
/// indices per step.
#[derive(Debug, Clone)]
pub struct PairedBatcher {
    labeled: EpochSampler,
    unlabeled: EpochSampler,
}

impl PairedBatcher {
    pub fn new(
        n_labeled: usize,
        n_unlabeled: usize,
        batch: usize,
        mu: usize,
        labeled_rng: Stream,
        unlabeled_rng: Stream,
    ) -> Result<Self> {
        if mu == 0 {
            return Err(Error::Config("mu must be > 0".into()));
        }
        Ok(PairedBatcher {
            labeled: EpochSampler::new(n_labeled, batch, labeled_rng)?,
            unlabeled: EpochSampler::new(n_unlabeled, batch * mu, unlabeled_rng)?,
        })
    }

    pub fn next_pair(&mut self) -> (Vec<usize>, Vec<usize>) {
        (self.labeled.next_batch(), self.unlabeled.next_batch())
    }

    pub fn labeled(&self) -> &EpochSampler {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &EpochSampler {
        &self.unlabeled
    }

    pub(crate) fn state(&self) -> (SamplerState, SamplerState) {
        (self.labeled.state(), self.unlabeled.state())
    }

    pub(crate) fn from_states(labeled: SamplerState, unlabeled: SamplerState) -> Self {
        PairedBatcher {
            labeled: EpochSampler::from_state(labeled),
            unlabeled: EpochSampler::from_state(unlabeled),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn batch_sizes_are_exact() {
        let mut b = PairedBatcher::new(
            100,
            900,
            4,
            7,
            substream(1, "batch.labeled"),
            substream(1, "batch.unlabeled"),
        )
        .unwrap();
        let (x, u) = b.next_pair();
        assert_eq!(x.len(), 4);
        assert_eq!(u.len(), 28);
    }

    #[test]
    fn oversized_batch_samples_with_replacement() {
        let mut s = EpochSampler::new(3, 8, substream(2, "batch")).unwrap();
        let batch = s.next_batch();
        assert_eq!(batch.len(), 8);
        assert!(batch.iter().all(|&i| i < 3));
    }

    #[test]
    fn epoch_covers_pool_without_repeats() {
        let mut s = EpochSampler::new(10, 5, substream(3, "batch")).unwrap();
        let mut seen: Vec<usize> = s.next_batch();
        seen.extend(s.next_batch());
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn fixed_seed_fixes_the_batch_sequence() {
        let run = || {
            let mut s = EpochSampler::new(50, 7, substream(4, "batch")).unwrap();
            (0..20).map(|_| s.next_batch()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn state_round_trip_resumes_exactly() {
        let mut s = EpochSampler::new(20, 6, substream(5, "batch")).unwrap();
        for _ in 0..5 {
            s.next_batch();
        }
        let state = s.state();
        let ahead: Vec<_> = (0..10).map(|_| s.next_batch()).collect();
        let mut resumed = EpochSampler::from_state(state);
        let resumed_ahead: Vec<_> = (0..10).map(|_| resumed.next_batch()).collect();
        assert_eq!(ahead, resumed_ahead);
    }
}
