use std::fs;
use std::path::Path;

use thiserror::Error;

use super::engine::RoundResult;

pub const HIST_BINS: usize = 100;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write results: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot write CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// Bin counts of width 1.0 over [0, 100]; 100 lands in the last bin.
pub fn histogram<'a>(values: impl IntoIterator<Item = &'a f64>) -> [u64; HIST_BINS] {
    let mut bins = [0u64; HIST_BINS];
    for &v in values {
        if (0.0..=100.0).contains(&v) {
            bins[(v.floor() as usize).min(HIST_BINS - 1)] += 1;
        }
    }
    bins
}

/// Writes `rounds.json`, `stats.csv` and `hist.csv` into `out_dir`,
/// creating it if needed.
pub fn export_results(results: &[RoundResult], out_dir: impl AsRef<Path>) -> Result<(), ExportError> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;

    let json = serde_json::to_string_pretty(results).expect("results serialize");
    fs::write(dir.join("rounds.json"), json + "\n")?;

    let mut stats = csv::Writer::from_path(dir.join("stats.csv"))?;
    stats.write_record([
        "round", "n", "avg", "min", "max", "std", "median", "mode", "target", "exact_winners", "band_winners",
    ])?;
    for r in results {
        let s = &r.stats;
        stats.write_record([
            r.round_index.to_string(),
            r.reports.len().to_string(),
            s.avg.to_string(),
            s.min.to_string(),
            s.max.to_string(),
            s.std.to_string(),
            s.median.to_string(),
            s.mode.to_string(),
            r.target.to_string(),
            r.exact_winners.len().to_string(),
            r.band_winners.len().to_string(),
        ])?;
    }
    stats.flush()?;

    let mut hist = csv::Writer::from_path(dir.join("hist.csv"))?;
    hist.write_record(["round", "bin_start", "bin_end", "count"])?;
    for r in results {
        for (b, count) in histogram(r.reports.values()).iter().enumerate() {
            hist.write_record([r.round_index.to_string(), b.to_string(), (b + 1).to_string(), count.to_string()])?;
        }
    }
    hist.flush()?;
    Ok(())
}
