//! Plot-ready data files from a finished run directory: two-column
//! `(round, value)` files whose value text is copied verbatim from the
//! source CSVs.

use crate::CliError;
use std::path::Path;

#[derive(Debug)]
pub struct PlotSummary {
    pub files: Vec<String>,
}

/// Reads `history.csv` in `dir` and writes `train_loss.dat` and
/// `test_loss.dat`; when `bound.csv` is present (analysis ran), also writes
/// `bound.dat`.
pub fn emit_plot_data(dir: &Path) -> Result<PlotSummary, CliError> {
    let history_path = dir.join("history.csv");
    let text = std::fs::read_to_string(&history_path).map_err(|e| {
        CliError::Run(format!(
            "missing history: cannot read {}: {e}",
            history_path.display()
        ))
    })?;
    let mut train = String::new();
    let mut test = String::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 3 {
            return Err(CliError::Run(format!(
                "malformed history row: '{line}' in {}",
                history_path.display()
            )));
        }
        train.push_str(&format!("{} {}\n", cols[0], cols[1]));
        test.push_str(&format!("{} {}\n", cols[0], cols[2]));
    }
    let mut files = Vec::new();
    for (name, contents) in [("train_loss.dat", &train), ("test_loss.dat", &test)] {
        let path = dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        files.push(name.to_string());
    }
    let bound_path = dir.join("bound.csv");
    if bound_path.exists() {
        let bound_text = std::fs::read_to_string(&bound_path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", bound_path.display())))?;
        let mut bound = String::new();
        for line in bound_text.lines().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() >= 2 {
                bound.push_str(&format!("{} {}\n", cols[0], cols[1]));
            }
        }
        let path = dir.join("bound.dat");
        std::fs::write(&path, bound)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        files.push("bound.dat".to_string());
    }
    Ok(PlotSummary { files })
}
