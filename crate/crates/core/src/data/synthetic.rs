//! Synthetic open-set benchmarks: well-separated isotropic Gaussian clusters.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diffcore::Tensor2;
use crate::error::{Error, Result};
use crate::rng::substream;

use super::dataset::Dataset;

const MEAN_RETRIES: usize = 1000;

/// Generates `K + num_ood_clusters` unit-variance Gaussian clusters whose
/// means are pairwise at least `cluster_separation` apart. The first `K`
/// clusters are the ID classes `0..K-1`; every sample from the remaining
/// clusters carries the OOD sentinel label `K`. Deterministic per seed.
pub fn make_synthetic_openset(
    num_id_classes: usize,
    num_ood_clusters: usize,
    dim: usize,
    cluster_separation: f64,
    per_cluster: usize,
    seed: u64,
) -> Result<Dataset> {
    if num_id_classes < 2 {
        return Err(Error::Config("need at least 2 ID classes".into()));
    }
    if num_ood_clusters < 1 {
        return Err(Error::Config("need at least 1 OOD cluster".into()));
    }
    if dim < 2 {
        return Err(Error::Config("need dim >= 2".into()));
    }
    let mut rng = substream(seed, "data.synthetic");
    let total_clusters = num_id_classes + num_ood_clusters;

    // Means drawn at the separation scale, resampled until all pairwise
    // distances clear the bound.
    let mean_dist = Normal::new(0.0, cluster_separation.max(1.0)).unwrap();
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(total_clusters);
    for c in 0..total_clusters {
        let mut placed = false;
        for _ in 0..MEAN_RETRIES {
            let candidate: Vec<f64> = (0..dim).map(|_| mean_dist.sample(&mut rng)).collect();
            let ok = means.iter().all(|m| dist(m, &candidate) >= cluster_separation);
            if ok {
                means.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place mean {c} at separation {cluster_separation} in dim {dim}"
            )));
        }
    }

    let unit = Normal::new(0.0, 1.0).unwrap();
    let n = total_clusters * per_cluster;
    let mut features = Tensor2::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (c, mean) in means.iter().enumerate() {
        let label = c.min(num_id_classes);
        for _ in 0..per_cluster {
            let dst = features.row_mut(row);
            for (d, m) in dst.iter_mut().zip(mean) {
                *d = m + unit.sample(&mut rng);
            }
            labels.push(label);
            row += 1;
        }
    }
    Dataset::new(features, labels)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Uniform random vector helper for tests and probes.
pub fn random_tensor<R: Rng>(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R) -> Tensor2 {
    let mut t = Tensor2::zeros(rows, cols);
    for v in t.data_mut() {
        *v = rng.gen_range(lo..hi);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{softmax_cross_entropy, Network, SgdConfig, SgdOptimizer};

    #[test]
    fn size_and_labels_are_exact() {
        let ds = make_synthetic_openset(4, 2, 3, 6.0, 50, 7).unwrap();
        assert_eq!(ds.len(), 300);
        assert_eq!(ds.labels.iter().filter(|&&l| l == 4).count(), 100);
        assert!(ds.labels.iter().all(|&l| l <= 4));
    }

    #[test]
    fn fixed_seed_reproduces_bytes() {
        let a = make_synthetic_openset(3, 1, 5, 8.0, 20, 123).unwrap();
        let b = make_synthetic_openset(3, 1, 5, 8.0, 20, 123).unwrap();
        let abytes: Vec<u64> = a.features.data().iter().map(|v| v.to_bits()).collect();
        let bbytes: Vec<u64> = b.features.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(abytes, bbytes);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn infeasible_separation_errors() {
        // 2-d space cannot hold 12 means pairwise 1000 sigma apart drawn at
        // that scale... it actually can; force failure with a tiny scale by
        // requesting an absurd cluster count in dim 2 at huge separation.
        let r = make_synthetic_openset(200, 200, 2, 1e9, 1, 3);
        assert!(matches!(r, Err(Error::Generation(_))));
    }

    /// A linear softmax probe trained on the true 3-way labels separates
    /// K=2 ID clusters + 1 OOD cluster at separation 10 perfectly.
    #[test]
    fn linear_probe_separates_wide_clusters() {
        let ds = make_synthetic_openset(2, 1, 4, 10.0, 60, 42).unwrap();
        let mut rng = substream(0, "model.init");
        let mut probe = Network::new(4, &[], 2, true, false, &mut rng).unwrap();
        let mut opt = SgdOptimizer::new(
            SgdConfig {
                learning_rate: 0.1,
                momentum: 0.9,
                weight_decay: 0.0,
            },
            &probe,
        )
        .unwrap();
        let mask = vec![1.0; ds.len()];
        for _ in 0..300 {
            probe.zero_grads();
            let logits = probe.forward_main(&ds.features).unwrap();
            let ce = softmax_cross_entropy(&logits, &ds.labels, &mask, 3).unwrap();
            probe.backward_main(&ce.grad).unwrap();
            opt.step(&mut probe);
        }
        let logits = probe.infer_main(&ds.features).unwrap();
        let correct = (0..ds.len())
            .filter(|&i| {
                let row = logits.row(i);
                let pred = (0..3).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
                pred == ds.labels[i]
            })
            .count();
        assert_eq!(correct, ds.len(), "probe accuracy below 100%");
    }
}
