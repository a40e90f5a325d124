//! Fixed-capacity FIFO memory of selected OOD candidates.

use std::collections::VecDeque;

use rand::Rng;

use crate::diffcore::Tensor2;
use crate::error::{Error, Result};

/// One stored candidate: the raw (un-augmented) feature vector plus its
/// hidden ground-truth tag. The tag is written by whoever built the batch and
/// read only by diagnostics; no training loss sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry {
    pub features: Vec<f64>,
    pub truth_is_ood: Option<bool>,
}

/// First-in first-out queue of OOD candidates, all implicitly labeled with
/// the sentinel class. Pushing past capacity evicts the oldest entry.
#[derive(Debug, Clone)]
pub struct OodMemoryQueue {
    capacity: usize,
    entries: VecDeque<QueueEntry>,
}

impl OodMemoryQueue {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("queue capacity must be > 0".into()));
        }
        Ok(OodMemoryQueue {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, features: Vec<f64>, truth_is_ood: Option<bool>) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(QueueEntry {
            features,
            truth_is_ood,
        });
    }

    /// Draws `n` stored feature vectors uniformly with replacement.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Tensor2> {
        if self.entries.is_empty() {
            return Err(Error::EmptyQueue(
                "sample requested before any candidate was enqueued",
            ));
        }
        let dim = self.entries[0].features.len();
        let mut out = Tensor2::zeros(n, dim);
        for r in 0..n {
            let pick = rng.gen_range(0..self.entries.len());
            out.row_mut(r).copy_from_slice(&self.entries[pick].features);
        }
        Ok(out)
    }

    /// Fraction of entries whose hidden tag is OOD, over the entries that
    /// carry a tag; absent when the queue is empty or no tags were supplied.
    pub fn purity(&self) -> Option<f64> {
        let tagged: Vec<bool> = self.entries.iter().filter_map(|e| e.truth_is_ood).collect();
        if tagged.is_empty() {
            return None;
        }
        let ood = tagged.iter().filter(|&&t| t).count();
        Some(ood as f64 / tagged.len() as f64)
    }

    pub fn entries(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.iter()
    }

    pub(crate) fn from_entries(capacity: usize, entries: Vec<QueueEntry>) -> Result<Self> {
        if entries.len() > capacity {
            return Err(Error::Checkpoint("queue longer than its capacity".into()));
        }
        let mut q = OodMemoryQueue::new(capacity)?;
        q.entries.extend(entries);
        Ok(q)
    }
}
