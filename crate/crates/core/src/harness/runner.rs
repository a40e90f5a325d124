//! Config-driven training runs: dataset assembly, the train/eval loop,
//! metric logs, summaries and checkpoint resume.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{FixMatchTrainer, SupervisedTrainer};
use crate::checkpoint::{restore_checkpoint, save_checkpoint};
use crate::data::{
    load_idx, make_synthetic_openset, split_open_set, Dataset, OpenSetSplit, PairedBatcher,
    SplitConfig,
};
use crate::diffcore::Network;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::harness::config::{
    Algorithm, DatasetKind, EvalTarget, ExperimentConfig,
};
use crate::rng::{substream, substream_u64};
use crate::scomatch::{IterationReport, LabeledBatch, ScoMatchTrainer, UnlabeledBatch};

pub const METRICS_SCHEMA: &str = "osslab-metrics-v1";
pub const SUMMARY_SCHEMA: &str = "osslab-summary-v1";

const METRICS_HEADER: &str = "iteration,loss_sup_id,loss_sup_ood,loss_open,loss_close,\
loss_aux_sup,loss_total,tau_ood,accept_id,accept_ood,queue_len,queue_purity,\
pseudo_correct,pseudo_wrong,close_acc,open_acc,auc";

/// One evaluation-point row of the metrics log. Loss columns are means over
/// the window since the previous evaluation (empty when the term never
/// fired); accept and pseudo counts are sums over the same window;
/// `tau_ood`, `queue_len` and `queue_purity` are instantaneous.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub loss_sup_id: Option<f64>,
    pub loss_sup_ood: Option<f64>,
    pub loss_open: Option<f64>,
    pub loss_close: Option<f64>,
    pub loss_aux_sup: Option<f64>,
    pub loss_total: f64,
    pub tau_ood: Option<f64>,
    pub accept_id: u64,
    pub accept_ood: u64,
    pub queue_len: u64,
    pub queue_purity: Option<f64>,
    pub pseudo_correct: u64,
    pub pseudo_wrong: u64,
    pub close_acc: f64,
    pub open_acc: f64,
    pub auc: f64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            fmt_opt(self.loss_sup_id),
            fmt_opt(self.loss_sup_ood),
            fmt_opt(self.loss_open),
            fmt_opt(self.loss_close),
            fmt_opt(self.loss_aux_sup),
            self.loss_total,
            fmt_opt(self.tau_ood),
            self.accept_id,
            self.accept_ood,
            self.queue_len,
            fmt_opt(self.queue_purity),
            self.pseudo_correct,
            self.pseudo_wrong,
            self.close_acc,
            self.open_acc,
            self.auc
        )
    }

    fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 17 {
            return Err(Error::Format(format!(
                "metrics row has {} fields, expected 17",
                f.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::Format(format!("metrics row: bad float {s:?}: {e}")))
        };
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        let int = |s: &str| -> Result<u64> {
            s.parse()
                .map_err(|e| Error::Format(format!("metrics row: bad count {s:?}: {e}")))
        };
        Ok(MetricsRow {
            iteration: int(f[0])?,
            loss_sup_id: opt(f[1])?,
            loss_sup_ood: opt(f[2])?,
            loss_open: opt(f[3])?,
            loss_close: opt(f[4])?,
            loss_aux_sup: opt(f[5])?,
            loss_total: num(f[6])?,
            tau_ood: opt(f[7])?,
            accept_id: int(f[8])?,
            accept_ood: int(f[9])?,
            queue_len: int(f[10])?,
            queue_purity: opt(f[11])?,
            pseudo_correct: int(f[12])?,
            pseudo_wrong: int(f[13])?,
            close_acc: num(f[14])?,
            open_acc: num(f[15])?,
            auc: num(f[16])?,
        })
    }
}

/// Reads a metrics log, checking the schema line.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = File::open(path).map_err(|e| {
        Error::Format(format!("cannot open metrics file {}: {e}", path.display()))
    })?;
    let mut lines = BufReader::new(file).lines();
    let schema = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty metrics file", path.display())))??;
    if schema.trim() != format!("# schema={METRICS_SCHEMA}") {
        return Err(Error::Format(format!(
            "{}: schema line {schema:?} does not match {METRICS_SCHEMA}",
            path.display()
        )));
    }
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: missing header", path.display())))??;
    if header != METRICS_HEADER {
        return Err(Error::Format(format!(
            "{}: header drifted from the {METRICS_SCHEMA} schema",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if !line.is_empty() {
            rows.push(MetricsRow::from_csv(&line)?);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
}

fn stat(values: &[f64]) -> MetricStat {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MetricStat { mean, std }
}

/// Cross-seed summary of a run, persisted as `summary.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: String,
    pub algorithm: Algorithm,
    pub total_iterations: u64,
    pub seeds: Vec<u64>,
    pub dataset_fingerprint: String,
    pub close_acc: MetricStat,
    pub open_acc: MetricStat,
    pub auc: MetricStat,
}

impl Summary {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("summary.toml");
        let text = std::fs::read_to_string(&path).map_err(|e| {
            Error::Format(format!("cannot read summary {}: {e}", path.display()))
        })?;
        let summary: Summary =
            toml::from_str(&text).map_err(|e| Error::Format(format!("summary parse: {e}")))?;
        if summary.schema != SUMMARY_SCHEMA {
            return Err(Error::Format(format!(
                "{}: schema {} does not match {SUMMARY_SCHEMA}",
                path.display(),
                summary.schema
            )));
        }
        Ok(summary)
    }
}

/// Per-seed results held in memory (the same rows land in `metrics.csv`).
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub final_row: MetricsRow,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: Summary,
    pub seeds: Vec<SeedOutcome>,
    pub output_dir: PathBuf,
}

/// CLI-level overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed_override: Option<u64>,
    pub eval_override: Option<EvalTarget>,
    pub resume: Option<PathBuf>,
}

/// A trainer of any of the three algorithms, driven uniformly by the run
/// loop. The supervised baseline ignores the unlabeled batch.
#[derive(Debug, Clone)]
pub enum AnyTrainer {
    Supervised(SupervisedTrainer),
    FixMatch(FixMatchTrainer),
    ScoMatch(ScoMatchTrainer),
}

impl AnyTrainer {
    pub fn build(cfg: &ExperimentConfig, input_dim: usize, seed: u64) -> Result<Self> {
        let hidden = &cfg.model.hidden;
        Ok(match cfg.algorithm {
            Algorithm::Supervised => AnyTrainer::Supervised(SupervisedTrainer::new(
                cfg.supervised_config(),
                cfg.optimizer,
                cfg.augment,
                input_dim,
                hidden,
                seed,
            )?),
            Algorithm::Fixmatch => AnyTrainer::FixMatch(FixMatchTrainer::new(
                cfg.fixmatch_config(),
                cfg.optimizer,
                cfg.augment,
                input_dim,
                hidden,
                seed,
            )?),
            Algorithm::Scomatch => AnyTrainer::ScoMatch(ScoMatchTrainer::new(
                cfg.scomatch_config()?,
                cfg.optimizer,
                cfg.augment,
                input_dim,
                hidden,
                seed,
            )?),
        })
    }

    pub fn train_iteration(
        &mut self,
        x: &LabeledBatch,
        u: &UnlabeledBatch,
    ) -> Result<IterationReport> {
        match self {
            AnyTrainer::Supervised(t) => t.train_iteration(x),
            AnyTrainer::FixMatch(t) => t.train_iteration(x, u),
            AnyTrainer::ScoMatch(t) => t.train_iteration(x, u),
        }
    }

    pub fn student(&self) -> &Network {
        match self {
            AnyTrainer::Supervised(t) => t.student(),
            AnyTrainer::FixMatch(t) => t.student(),
            AnyTrainer::ScoMatch(t) => t.student(),
        }
    }

    pub fn teacher(&self) -> &Network {
        match self {
            AnyTrainer::Supervised(t) => t.teacher(),
            AnyTrainer::FixMatch(t) => t.teacher(),
            AnyTrainer::ScoMatch(t) => t.teacher(),
        }
    }

    pub fn iteration(&self) -> u64 {
        match self {
            AnyTrainer::Supervised(t) => t.iteration(),
            AnyTrainer::FixMatch(t) => t.iteration(),
            AnyTrainer::ScoMatch(t) => t.iteration(),
        }
    }

    /// Whether the trailing head column is being trained as the OOD class
    /// (drives the AUC score rule).
    pub fn ood_head_active(&self) -> bool {
        matches!(self, AnyTrainer::ScoMatch(t) if t.config().ood_class_enabled)
    }

    pub fn queue_purity(&self) -> Option<f64> {
        match self {
            AnyTrainer::ScoMatch(t) => t.queue().purity(),
            _ => None,
        }
    }

    pub fn queue_len(&self) -> u64 {
        match self {
            AnyTrainer::ScoMatch(t) => t.queue().len() as u64,
            _ => 0,
        }
    }
}

/// Builds the per-seed data split. The generator and split seeds are named
/// substreams of the run seed, so different algorithms see identical data
/// under a shared seed.
pub fn build_split(cfg: &ExperimentConfig, seed: u64) -> Result<OpenSetSplit> {
    let k = cfg.k();
    match cfg.dataset.kind {
        DatasetKind::Synthetic => {
            let spec = cfg
                .dataset
                .synthetic
                .as_ref()
                .ok_or_else(|| Error::Config("dataset.synthetic missing".into()))?;
            let ds = make_synthetic_openset(
                k,
                spec.num_ood_clusters,
                spec.dim,
                spec.cluster_separation,
                spec.per_cluster,
                substream_u64(seed, "data.gen"),
            )?;
            split_open_set(
                &ds,
                &SplitConfig {
                    num_id_classes: k,
                    labels_per_class: cfg.split.labels_per_class,
                    unlabeled_size: cfg.split.unlabeled_size,
                    mismatch_ratio: cfg.split.mismatch_ratio,
                    seed: substream_u64(seed, "data.split"),
                },
            )
        }
        DatasetKind::Mnist => {
            let spec = cfg
                .dataset
                .mnist
                .as_ref()
                .ok_or_else(|| Error::Config("dataset.mnist missing".into()))?;
            let train = load_idx(&spec.train_images, &spec.train_labels)?;
            let mut split = split_open_set(
                &train,
                &SplitConfig {
                    num_id_classes: k,
                    labels_per_class: cfg.split.labels_per_class,
                    unlabeled_size: cfg.split.unlabeled_size,
                    mismatch_ratio: cfg.split.mismatch_ratio,
                    seed: substream_u64(seed, "data.split"),
                },
            )?;
            if let (Some(ti), Some(tl)) = (&spec.test_images, &spec.test_labels) {
                split.test = load_idx(ti, tl)?.with_ood_sentinel(k);
            }
            Ok(split)
        }
        DatasetKind::Csv => {
            let spec = cfg
                .dataset
                .csv
                .as_ref()
                .ok_or_else(|| Error::Config("dataset.csv missing".into()))?;
            OpenSetSplit::import_csv(&spec.path)
        }
    }
}

struct Window {
    sums: [f64; 6],
    counts: [u64; 6],
    accept_id: u64,
    accept_ood: u64,
    pseudo_correct: u64,
    pseudo_wrong: u64,
    last_tau_ood: Option<f64>,
}

impl Window {
    fn new() -> Self {
        Window {
            sums: [0.0; 6],
            counts: [0; 6],
            accept_id: 0,
            accept_ood: 0,
            pseudo_correct: 0,
            pseudo_wrong: 0,
            last_tau_ood: None,
        }
    }

    fn add(&mut self, r: &IterationReport) {
        let terms = [
            Some(r.loss_sup_id),
            r.loss_sup_ood,
            r.loss_open,
            r.loss_close,
            r.loss_aux_sup,
            Some(r.loss_total),
        ];
        for (i, t) in terms.iter().enumerate() {
            if let Some(v) = t {
                self.sums[i] += v;
                self.counts[i] += 1;
            }
        }
        self.accept_id += r.accepted_id as u64;
        self.accept_ood += r.accepted_ood as u64;
        self.pseudo_correct += r.pseudo_correct.unwrap_or(0) as u64;
        self.pseudo_wrong += r.pseudo_wrong.unwrap_or(0) as u64;
        self.last_tau_ood = r.tau_ood;
    }

    fn mean(&self, i: usize) -> Option<f64> {
        (self.counts[i] > 0).then(|| self.sums[i] / self.counts[i] as f64)
    }

    fn reset(&mut self) {
        *self = Window::new();
    }
}

pub fn seed_dir(output_dir: &Path, seed: u64) -> PathBuf {
    output_dir.join(format!("seed_{seed}"))
}

/// Runs the experiment: every seed, metric logs, final checkpoints and the
/// cross-seed summary. Seeds run in parallel; each owns its state and files.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let seeds: Vec<u64> = match opts.seed_override {
        Some(s) => vec![s],
        None => cfg.seeds.clone(),
    };
    if opts.resume.is_some() && seeds.len() != 1 {
        return Err(Error::Config(
            "--resume applies to a single seed; use --seed-override".into(),
        ));
    }
    let mut cfg = cfg.clone();
    if let Some(target) = opts.eval_override {
        cfg.eval_on = target;
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(
        cfg.output_dir.join("config.resolved.toml"),
        cfg.to_toml_string()?,
    )?;

    let outcomes: Result<Vec<SeedOutcome>> = seeds
        .par_iter()
        .map(|&seed| run_seed(&cfg, seed, opts.resume.as_deref()))
        .collect();
    let outcomes = outcomes?;

    let collect = |f: fn(&MetricsRow) -> f64| -> Vec<f64> {
        outcomes.iter().map(|o| f(&o.final_row)).collect()
    };
    let summary = Summary {
        schema: SUMMARY_SCHEMA.to_string(),
        algorithm: cfg.algorithm,
        total_iterations: cfg.total_iterations,
        seeds: seeds.clone(),
        dataset_fingerprint: format!("{:#018x}", cfg.dataset_fingerprint()),
        close_acc: stat(&collect(|r| r.close_acc)),
        open_acc: stat(&collect(|r| r.open_acc)),
        auc: stat(&collect(|r| r.auc)),
    };
    let summary_text =
        toml::to_string_pretty(&summary).map_err(|e| Error::Config(format!("summary: {e}")))?;
    std::fs::write(cfg.output_dir.join("summary.toml"), summary_text)?;

    Ok(RunOutcome {
        summary,
        seeds: outcomes,
        output_dir: cfg.output_dir.clone(),
    })
}

fn run_seed(cfg: &ExperimentConfig, seed: u64, resume: Option<&Path>) -> Result<SeedOutcome> {
    let split = build_split(cfg, seed)?;
    let k = cfg.k();
    let input_dim = split.labeled.dim();
    let mut trainer = AnyTrainer::build(cfg, input_dim, seed)?;
    let mut batcher = PairedBatcher::new(
        split.labeled.len(),
        split.unlabeled.len(),
        cfg.train.batch_size,
        cfg.train.mu,
        substream(seed, "batch.labeled"),
        substream(seed, "batch.unlabeled"),
    )?;

    let dir = seed_dir(&cfg.output_dir, seed);
    std::fs::create_dir_all(&dir)?;
    let metrics_path = dir.join("metrics.csv");

    let start_iteration = match resume {
        Some(ckpt) => {
            let it = restore_checkpoint(ckpt, &mut trainer, &mut batcher, cfg.fingerprint(), seed)?;
            if it >= cfg.total_iterations {
                return Err(Error::Config(format!(
                    "checkpoint is at iteration {it}, nothing left before total_iterations {}",
                    cfg.total_iterations
                )));
            }
            it
        }
        None => 0,
    };

    let mut log: BufWriter<File> = if resume.is_some() {
        // Appending after a resume: the schema line is already there.
        read_metrics_csv(&metrics_path)?;
        BufWriter::new(OpenOptions::new().append(true).open(&metrics_path)?)
    } else {
        let mut w = BufWriter::new(File::create(&metrics_path)?);
        writeln!(w, "# schema={METRICS_SCHEMA}")?;
        writeln!(w, "{METRICS_HEADER}")?;
        w
    };

    let mut window = Window::new();
    let mut rows = Vec::new();
    for t in start_iteration + 1..=cfg.total_iterations {
        let (x_idx, u_idx) = batcher.next_pair();
        let xs = split.labeled.subset(&x_idx);
        let us = split.unlabeled.subset(&u_idx);
        let x = LabeledBatch {
            features: xs.features,
            labels: xs.labels,
        };
        let u = UnlabeledBatch {
            features: us.features,
            truth: Some(us.labels),
        };
        let report = trainer.train_iteration(&x, &u)?;
        window.add(&report);

        if t % cfg.eval_every == 0 || t == cfg.total_iterations {
            let net = match cfg.eval_on {
                EvalTarget::Teacher => trainer.teacher(),
                EvalTarget::Student => trainer.student(),
            };
            let metrics = evaluate(
                net,
                &split.test,
                k,
                trainer.ood_head_active(),
                trainer.queue_purity(),
                window.pseudo_correct as usize,
                window.pseudo_wrong as usize,
            )?;
            let row = MetricsRow {
                iteration: t,
                loss_sup_id: window.mean(0),
                loss_sup_ood: window.mean(1),
                loss_open: window.mean(2),
                loss_close: window.mean(3),
                loss_aux_sup: window.mean(4),
                loss_total: window.mean(5).unwrap_or(0.0),
                tau_ood: window.last_tau_ood,
                accept_id: window.accept_id,
                accept_ood: window.accept_ood,
                queue_len: trainer.queue_len(),
                queue_purity: metrics.queue_purity,
                pseudo_correct: window.pseudo_correct,
                pseudo_wrong: window.pseudo_wrong,
                close_acc: metrics.close_acc,
                open_acc: metrics.open_acc,
                auc: metrics.auc,
            };
            writeln!(log, "{}", row.to_csv())?;
            log.flush()?;
            if t == cfg.total_iterations {
                write_confusion_csv(&dir.join("confusion.csv"), &metrics.confusion)?;
            }
            rows.push(row);
            window.reset();
        }
    }
    drop(log);

    save_checkpoint(
        &dir.join("checkpoint.bin"),
        &trainer,
        &batcher,
        cfg.fingerprint(),
        seed,
    )?;

    let final_row = rows
        .last()
        .cloned()
        .ok_or_else(|| Error::Config("run produced no evaluation rows".into()))?;
    Ok(SeedOutcome {
        seed,
        rows,
        final_row,
    })
}

fn write_confusion_csv(path: &Path, confusion: &[Vec<usize>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let k = confusion.len() - 1;
    let header: Vec<String> = (0..k)
        .map(|c| format!("pred_{c}"))
        .chain(["pred_ood".to_string()])
        .collect();
    writeln!(w, "truth,{}", header.join(","))?;
    for (r, row) in confusion.iter().enumerate() {
        let name = if r == k {
            "ood".to_string()
        } else {
            r.to_string()
        };
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        writeln!(w, "{name},{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}
