//! Cross-run comparison tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::runner::Summary;

#[derive(Debug, Clone)]
pub struct CompareRow {
    pub name: String,
    pub summary: Summary,
}

/// Loads `summary.toml` from each run directory and refuses to tabulate runs
/// whose dataset specs differ.
pub fn load_comparison(dirs: &[PathBuf]) -> Result<Vec<CompareRow>> {
    if dirs.is_empty() {
        return Err(Error::Config("compare needs at least one run dir".into()));
    }
    let mut rows = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let summary = Summary::load(dir)?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        rows.push(CompareRow { name, summary });
    }
    let reference = &rows[0].summary.dataset_fingerprint;
    for row in &rows[1..] {
        if &row.summary.dataset_fingerprint != reference {
            return Err(Error::Config(format!(
                "run {:?} was produced on a different dataset spec ({} vs {}); \
                 comparisons across datasets are not meaningful",
                row.name, row.summary.dataset_fingerprint, reference
            )));
        }
    }
    Ok(rows)
}

/// Renders the comparison as a fixed-width text table mirroring the
/// ACC_close / ACC_open / AUC column set.
pub fn render_table(rows: &[CompareRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>20} {:>20} {:>20}\n",
        "run", "ACC_close", "ACC_open", "AUC"
    ));
    for row in rows {
        let s = &row.summary;
        out.push_str(&format!(
            "{:<24} {:>20} {:>20} {:>20}\n",
            row.name,
            format!("{:.4} ± {:.4}", s.close_acc.mean, s.close_acc.std),
            format!("{:.4} ± {:.4}", s.open_acc.mean, s.open_acc.std),
            format!("{:.4} ± {:.4}", s.auc.mean, s.auc.std),
        ));
    }
    out
}

pub fn write_compare_csv(rows: &[CompareRow], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "run,close_acc_mean,close_acc_std,open_acc_mean,open_acc_std,auc_mean,auc_std"
    )?;
    for row in rows {
        let s = &row.summary;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            row.name,
            s.close_acc.mean,
            s.close_acc.std,
            s.open_acc.mean,
            s.open_acc.std,
            s.auc.mean,
            s.auc.std
        )?;
    }
    w.flush()?;
    Ok(())
}
