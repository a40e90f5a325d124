//! Dataset containers and the CSV fixture format.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::diffcore::Tensor2;
use crate::error::{Error, Result};

/// A set of feature vectors with one class index per row.
///
/// Class indices `0..K-1` are the in-distribution classes. Every
/// out-of-distribution sample carries the sentinel index `K`, regardless of
/// which unseen class it came from. On unlabeled and test data the labels are
/// hidden ground truth: evaluation and diagnostics may read them, training
/// losses never do.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor2,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Tensor2, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        if !features.all_finite() {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Dataset { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Copies the given rows (features and labels) into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Number of samples labeled with the OOD sentinel for `k` ID classes.
    pub fn count_ood(&self, k: usize) -> usize {
        self.labels.iter().filter(|&&l| l >= k).count()
    }

    /// Clamps every label `>= k` to the OOD sentinel `k`.
    pub fn with_ood_sentinel(mut self, k: usize) -> Dataset {
        for l in &mut self.labels {
            *l = (*l).min(k);
        }
        self
    }
}

/// Which pool a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Labeled,
    Unlabeled,
    Test,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Labeled => "labeled",
            Role::Unlabeled => "unlabeled",
            Role::Test => "test",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "labeled" => Ok(Role::Labeled),
            "unlabeled" => Ok(Role::Unlabeled),
            "test" => Ok(Role::Test),
            other => Err(Error::Format(format!("unknown role {other:?}"))),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The three pools of an open-set SSL task.
#[derive(Debug, Clone)]
pub struct OpenSetSplit {
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    pub test: Dataset,
}

impl OpenSetSplit {
    /// Writes the split as one CSV file with header `f0..f{d-1},label,role`.
    /// Floats use shortest round-trip formatting, so import is lossless.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        let dim = self.labeled.dim();
        let header: Vec<String> = (0..dim)
            .map(|i| format!("f{i}"))
            .chain(["label".into(), "role".into()])
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (ds, role) in [
            (&self.labeled, Role::Labeled),
            (&self.unlabeled, Role::Unlabeled),
            (&self.test, Role::Test),
        ] {
            for r in 0..ds.len() {
                for v in ds.features.row(r) {
                    write!(w, "{v},")?;
                }
                writeln!(w, "{},{role}", ds.labels[r])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a split written by `export_csv` (row order within a role is
    /// preserved; roles may be interleaved).
    pub fn import_csv(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty CSV".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[cols.len() - 2] != "label" || cols[cols.len() - 1] != "role" {
            return Err(Error::Format(
                "CSV header must end with `label,role`".into(),
            ));
        }
        let dim = cols.len() - 2;
        let mut pools: [(Vec<Vec<f64>>, Vec<usize>); 3] = Default::default();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 2 {
                return Err(Error::Format(format!(
                    "line {}: {} fields, expected {}",
                    lineno + 2,
                    fields.len(),
                    dim + 2
                )));
            }
            let mut feat = Vec::with_capacity(dim);
            for f in &fields[..dim] {
                feat.push(f.parse::<f64>().map_err(|e| {
                    Error::Format(format!("line {}: bad float {f:?}: {e}", lineno + 2))
                })?);
            }
            let label: usize = fields[dim]
                .parse()
                .map_err(|e| Error::Format(format!("line {}: bad label: {e}", lineno + 2)))?;
            let role = Role::parse(fields[dim + 1])?;
            let slot = match role {
                Role::Labeled => &mut pools[0],
                Role::Unlabeled => &mut pools[1],
                Role::Test => &mut pools[2],
            };
            slot.0.push(feat);
            slot.1.push(label);
        }
        let [l, u, t] = pools;
        Ok(OpenSetSplit {
            labeled: Dataset::new(Tensor2::from_rows(&l.0)?, l.1)?,
            unlabeled: Dataset::new(Tensor2::from_rows(&u.0)?, u.1)?,
            test: Dataset::new(Tensor2::from_rows(&t.0)?, t.1)?,
        })
    }
}
