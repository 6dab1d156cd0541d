//! CSV data for rank and difference histograms.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{FalsificationReport, FalsifyError};

pub const RANK_HISTOGRAM_FILE: &str = "rank_histogram.csv";
pub const DIFF_HISTOGRAM_FILE: &str = "diff_histogram.csv";

/// Writes whichever histogram the report carries into `dir`.
pub fn emit_plot_data(
    report: &FalsificationReport,
    dir: &Path,
) -> Result<Vec<PathBuf>, FalsifyError> {
    emit_plot_data_with_header(report, dir, None)
}

/// Like [`emit_plot_data`], with an optional `# ...` first line.
pub fn emit_plot_data_with_header(
    report: &FalsificationReport,
    dir: &Path,
    header: Option<&str>,
) -> Result<Vec<PathBuf>, FalsifyError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if let Some(rank) = &report.rank_summary {
        let path = dir.join(RANK_HISTOGRAM_FILE);
        let mut w = BufWriter::new(File::create(&path)?);
        write_header(&mut w, header)?;
        writeln!(w, "rank,count,proportion,null_expectation")?;
        for b in &rank.histogram {
            writeln!(w, "{},{},{},{}", b.rank, b.count, b.proportion, rank.null_expectation)?;
        }
        w.flush()?;
        written.push(path);
    }
    if let Some(diff) = &report.diff_summary {
        let path = dir.join(DIFF_HISTOGRAM_FILE);
        let mut w = BufWriter::new(File::create(&path)?);
        write_header(&mut w, header)?;
        writeln!(w, "bin_left,bin_right,count")?;
        for b in &diff.histogram {
            writeln!(w, "{},{},{}", b.lower, b.upper, b.count)?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

fn write_header(w: &mut impl Write, header: Option<&str>) -> std::io::Result<()> {
    if let Some(h) = header {
        for line in h.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    Ok(())
}
