//! The five-variant ablation grid over head structure and the two
//! self-training losses.

use crate::error::{Error, Result};

use super::compare::{render_table, CompareRow};
use super::config::{Algorithm, ExperimentConfig};
use super::runner::{run_experiment, RunOptions, RunOutcome};

/// Variant names in the order they are run and tabulated.
pub const ABLATION_VARIANTS: [&str; 5] =
    ["fixmatch", "dual-head", "no-close", "no-open", "full"];

/// Derives the five ablation configs from a full-SCOMatch base config:
///
/// * `fixmatch`  — OOD class and open-set loss disabled; without the OOD
///   supervision the queue is unusable and the method falls back to FixMatch.
/// * `dual-head` — a separate `K`-way head takes the labeled loss and the
///   close-set self-training, the `(K+1)` head keeps the rest.
/// * `no-close`  — close-set self-training removed.
/// * `no-open`   — open-set self-training removed.
/// * `full`      — the base config unchanged.
///
/// Each variant writes under `<output_dir>/<name>`.
pub fn ablation_variants(base: &ExperimentConfig) -> Result<Vec<(String, ExperimentConfig)>> {
    if base.algorithm != Algorithm::Scomatch {
        return Err(Error::Config(
            "the ablation grid starts from a scomatch config".into(),
        ));
    }
    if !(base.scomatch.ood_class_enabled
        && base.scomatch.use_open_loss
        && base.scomatch.use_close_loss
        && !base.scomatch.dual_head)
    {
        return Err(Error::Config(
            "the ablation base config must be the full method".into(),
        ));
    }
    let mut out = Vec::with_capacity(ABLATION_VARIANTS.len());
    for name in ABLATION_VARIANTS {
        let mut cfg = base.clone();
        cfg.output_dir = base.output_dir.join(name);
        match name {
            "fixmatch" => {
                cfg.scomatch.ood_class_enabled = false;
                cfg.scomatch.use_open_loss = false;
            }
            "dual-head" => cfg.scomatch.dual_head = true,
            "no-close" => cfg.scomatch.use_close_loss = false,
            "no-open" => cfg.scomatch.use_open_loss = false,
            "full" => {}
            _ => unreachable!(),
        }
        out.push((name.to_string(), cfg));
    }
    Ok(out)
}

/// Runs all five variants and returns their outcomes plus the rendered
/// comparison table.
pub fn ablation_suite(
    base: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<(Vec<(String, RunOutcome)>, String)> {
    let variants = ablation_variants(base)?;
    let mut outcomes = Vec::with_capacity(variants.len());
    for (name, cfg) in variants {
        let outcome = run_experiment(&cfg, opts)?;
        outcomes.push((name, outcome));
    }
    let rows: Vec<CompareRow> = outcomes
        .iter()
        .map(|(name, o)| CompareRow {
            name: name.clone(),
            summary: o.summary.clone(),
        })
        .collect();
    Ok((outcomes, render_table(&rows)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentConfig;

    fn base() -> ExperimentConfig {
        let toml = r#"
version = 1
algorithm = "scomatch"
seeds = [1]
total_iterations = 10
eval_every = 10
output_dir = "runs/ablate-test"

[dataset]
kind = "synthetic"

[dataset.synthetic]
num_ood_clusters = 1
dim = 4
cluster_separation = 8.0
per_cluster = 50

[split]
num_id_classes = 2
labels_per_class = 5
unlabeled_size = 60
mismatch_ratio = 0.5

[model]
hidden = [8]

[train]
batch_size = 4
mu = 2
tau = 0.95
lambda = 1.0
ema_alpha = 0.99
"#;
        ExperimentConfig::from_toml_str(toml).unwrap()
    }

    #[test]
    fn five_variants_with_expected_toggles() {
        let variants = ablation_variants(&base()).unwrap();
        assert_eq!(variants.len(), 5);
        let by_name: std::collections::HashMap<_, _> = variants.into_iter().collect();
        let fm = &by_name["fixmatch"].scomatch;
        assert!(!fm.ood_class_enabled && !fm.use_open_loss);
        assert!(by_name["dual-head"].scomatch.dual_head);
        assert!(!by_name["no-close"].scomatch.use_close_loss);
        assert!(!by_name["no-open"].scomatch.use_open_loss);
        assert_eq!(by_name["full"].scomatch, base().scomatch);
        for (name, cfg) in &by_name {
            assert!(cfg.output_dir.ends_with(name));
        }
    }

    #[test]
    fn non_scomatch_base_is_rejected() {
        let mut cfg = base();
        cfg.algorithm = Algorithm::Fixmatch;
        assert!(ablation_variants(&cfg).is_err());
    }
}
