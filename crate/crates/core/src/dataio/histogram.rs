use super::annotations::ClipAnnotation;
use super::report::EvalReport;
use crate::error::{Error, Result};

/// Half-open fixed-width bins `[edge_i, edge_{i+1})`; the last bin also
/// holds its right edge.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
}

// Guards against 0.15 / 0.05 landing at 2.9999999.
const BIN_NUDGE: f64 = 1e-9;

impl Histogram {
    /// Bins over `[lo, hi]` with the given width. Values outside are an error.
    pub fn fixed_width(lo: f64, hi: f64, width: f64, values: &[f64]) -> Result<Self> {
        if !(width > 0.0) || !(hi > lo) {
            return Err(Error::contract(format!("bad histogram range [{lo}, {hi}] width {width}")));
        }
        let nbins = ((hi - lo) / width - BIN_NUDGE).ceil().max(1.0) as usize;
        let bin_edges: Vec<f64> = (0..=nbins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0; nbins];
        for &v in values {
            if !v.is_finite() || v < lo || v > hi {
                return Err(Error::contract(format!("value {v} outside histogram range [{lo}, {hi}]")));
            }
            let b = (((v - lo) / width + BIN_NUDGE).floor() as usize).min(nbins - 1);
            counts[b] += 1;
        }
        Ok(Self { bin_edges, counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Index of the fullest bin, lowest on ties.
    pub fn mode_bin(&self) -> usize {
        crate::tasks::argmax(&self.counts.iter().map(|&c| c as f64).collect::<Vec<_>>())
    }

    pub fn midpoint(&self, bin: usize) -> f64 {
        0.5 * (self.bin_edges[bin] + self.bin_edges[bin + 1])
    }

    /// Two tab-separated columns, `bin_left` and `count`, with a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("bin_left\tcount\n");
        for (edge, count) in self.bin_edges.iter().zip(&self.counts) {
            out.push_str(&format!("{edge:.4}\t{count}\n"));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyAnalysis {
    pub histogram: Histogram,
    pub mode_midpoint: f64,
    pub mean: f64,
}

/// Histogram of normalized keyframe positions over clips that have one.
pub fn frequency_analysis(annotations: &[ClipAnnotation], bin_width: f64) -> Result<FrequencyAnalysis> {
    let values: Vec<f64> = annotations.iter().filter_map(ClipAnnotation::normalized_pnr).collect();
    if values.is_empty() {
        return Err(Error::EmptyInput("no clips with a keyframe".into()));
    }
    let histogram = Histogram::fixed_width(0.0, 1.0, bin_width, &values)?;
    let mode_midpoint = histogram.midpoint(histogram.mode_bin());
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(FrequencyAnalysis {
        histogram,
        mode_midpoint,
        mean,
    })
}

/// Histogram of per-clip absolute errors from a report, from zero up to the
/// largest error.
pub fn error_distribution(report: &EvalReport, bin_width: f64) -> Result<Histogram> {
    let errors: Vec<f64> = report.per_clip.iter().map(|c| c.error).collect();
    if errors.is_empty() {
        return Err(Error::EmptyInput("report has no per-clip results".into()));
    }
    let max = errors.iter().cloned().fold(0.0, f64::max);
    Histogram::fixed_width(0.0, max.max(bin_width), bin_width, &errors)
}
