//! Beat alignment metrics.
//!
//! `B_a` is the size of a maximum one-to-one matching between generated and
//! reference beats where a pair is admissible iff `|gen - ref| <= tolerance`.
//! With a uniform tolerance the admissible sets are intervals over sorted
//! lists, so a two-pointer sweep that matches the earliest admissible pair
//! is optimal.
//!
//! BCS = B_a / B_g (precision), BHS = B_a / B_t (recall), F1 is their
//! harmonic mean.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::audio::{BeatList, TempoEstimate};

pub const DEFAULT_TOLERANCE: f64 = 0.2;
pub const DEFAULT_PHASE_RANGE: f64 = 1.0;
pub const DEFAULT_PHASE_STEP: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cannot aggregate an empty list of reports")]
    Empty,
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("phase search needs 0 < step <= range, got step {step}, range {range}")]
    BadPhaseSearch { step: f64, range: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub b_g: usize,
    pub b_t: usize,
    pub b_a: usize,
    pub bcs: f64,
    pub bhs: f64,
    pub f1: f64,
    /// Matched `(generated, reference)` times.
    pub pairs: Vec<(f64, f64)>,
    /// True when either list is empty and a ratio was undefined.
    pub degenerate: bool,
}

impl AlignmentReport {
    fn from_counts(b_g: usize, b_t: usize, pairs: Vec<(f64, f64)>) -> Self {
        let b_a = pairs.len();
        let bcs = if b_g > 0 { b_a as f64 / b_g as f64 } else { 0.0 };
        let bhs = if b_t > 0 { b_a as f64 / b_t as f64 } else { 0.0 };
        Self {
            b_g,
            b_t,
            b_a,
            bcs,
            bhs,
            f1: f1_score(bcs, bhs),
            pairs,
            degenerate: b_g == 0 || b_t == 0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialization cannot fail")
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(bcs: f64, bhs: f64) -> f64 {
    if bcs + bhs > 0.0 {
        2.0 * bcs * bhs / (bcs + bhs)
    } else {
        0.0
    }
}

/// Maximum one-to-one matching within `tolerance` seconds.
pub fn match_beats(gen: &BeatList, reference: &BeatList, tolerance: f64) -> Result<AlignmentReport, MetricsError> {
    if !(tolerance > 0.0) {
        return Err(MetricsError::BadTolerance(tolerance));
    }
    Ok(match_sorted(gen.times(), reference.times(), tolerance))
}

fn match_sorted(gen: &[f64], reference: &[f64], tolerance: f64) -> AlignmentReport {
    let mut pairs = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < gen.len() && j < reference.len() {
        let (g, r) = (gen[i], reference[j]);
        if (g - r).abs() <= tolerance {
            pairs.push((g, r));
            i += 1;
            j += 1;
        } else if g < r {
            i += 1;
        } else {
            j += 1;
        }
    }
    AlignmentReport::from_counts(gen.len(), reference.len(), pairs)
}

pub fn tempo_difference(gen: TempoEstimate, reference: TempoEstimate) -> f64 {
    (gen.bpm - reference.bpm).abs()
}

/// Mean absolute tempo difference over paired estimates; `None` when empty.
pub fn mean_tempo_difference(pairs: &[(TempoEstimate, TempoEstimate)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    Some(pairs.iter().map(|&(g, r)| tempo_difference(g, r)).sum::<f64>() / pairs.len() as f64)
}

/// Dataset-level view over per-clip reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentSummary {
    pub clips: usize,
    pub b_g: usize,
    pub b_t: usize,
    pub b_a: usize,
    /// Unweighted means of the per-clip values; `f1` is the headline number.
    pub bcs: f64,
    pub bhs: f64,
    pub f1: f64,
    /// Harmonic mean of the mean BCS and mean BHS.
    pub f1_of_means: f64,
    /// Ratios over beats pooled across all clips.
    pub pooled_bcs: f64,
    pub pooled_bhs: f64,
    pub pooled_f1: f64,
    pub degenerate_clips: usize,
}

pub fn aggregate_reports(reports: &[AlignmentReport]) -> Result<AlignmentSummary, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&AlignmentReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let (bcs, bhs, f1) = (mean(|r| r.bcs), mean(|r| r.bhs), mean(|r| r.f1));
    let b_g = reports.iter().map(|r| r.b_g).sum();
    let b_t = reports.iter().map(|r| r.b_t).sum();
    let b_a = reports.iter().map(|r| r.b_a).sum();
    let ratio = |a: usize, b: usize| if b > 0 { a as f64 / b as f64 } else { 0.0 };
    let (pooled_bcs, pooled_bhs) = (ratio(b_a, b_g), ratio(b_a, b_t));
    Ok(AlignmentSummary {
        clips: reports.len(),
        b_g,
        b_t,
        b_a,
        bcs,
        bhs,
        f1,
        f1_of_means: f1_score(bcs, bhs),
        pooled_bcs,
        pooled_bhs,
        pooled_f1: f1_score(pooled_bcs, pooled_bhs),
        degenerate_clips: reports.iter().filter(|r| r.degenerate).count(),
    })
}

/// One CSV row per clip followed by a `summary` row.
pub fn reports_to_csv(names: &[String], reports: &[AlignmentReport], summary: &AlignmentSummary) -> String {
    let mut out = String::from("clip,b_g,b_t,b_a,bcs,bhs,f1,degenerate\n");
    for (name, r) in names.iter().zip(reports) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            name, r.b_g, r.b_t, r.b_a, r.bcs, r.bhs, r.f1, r.degenerate
        );
    }
    let _ = writeln!(
        out,
        "summary,{},{},{},{},{},{},{}",
        summary.b_g,
        summary.b_t,
        summary.b_a,
        summary.bcs,
        summary.bhs,
        summary.f1,
        summary.degenerate_clips > 0
    );
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseAlignment {
    /// Shift added to every generated beat.
    pub offset: f64,
    pub report: AlignmentReport,
}

/// Phase search parameters, all in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSearch {
    pub range: f64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for PhaseSearch {
    fn default() -> Self {
        Self {
            range: DEFAULT_PHASE_RANGE,
            step: DEFAULT_PHASE_STEP,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

/// Finds the global shift of `gen` that maximises F1 against `reference`.
///
/// Offsets `k * step` for `|k| <= round(range / step)` are scored. Among
/// offsets with the same F1 the one with the smallest mean absolute
/// residual over matched pairs wins, then the smallest `|offset|`, then
/// the negative one.
pub fn phase_align(gen: &BeatList, reference: &BeatList, search: PhaseSearch) -> Result<PhaseAlignment, MetricsError> {
    if !(search.step > 0.0 && search.range >= search.step) {
        return Err(MetricsError::BadPhaseSearch {
            step: search.step,
            range: search.range,
        });
    }
    if !(search.tolerance > 0.0) {
        return Err(MetricsError::BadTolerance(search.tolerance));
    }
    let n = (search.range / search.step).round() as i64;
    // Visit 0, -1, +1, -2, +2, ... so a strict improvement test implements
    // the |offset| and sign tie-breaks.
    let order = std::iter::once(0).chain((1..=n).flat_map(|k| [-k, k]));
    let mut best: Option<(f64, f64, PhaseAlignment)> = None;
    let mut shifted = Vec::with_capacity(gen.len());
    for k in order {
        let offset = k as f64 * search.step;
        shifted.clear();
        shifted.extend(gen.times().iter().map(|t| t + offset));
        let report = match_sorted(&shifted, reference.times(), search.tolerance);
        let residual = if report.pairs.is_empty() {
            f64::INFINITY
        } else {
            report.pairs.iter().map(|(g, r)| (g - r).abs()).sum::<f64>() / report.pairs.len() as f64
        };
        let better = match &best {
            None => true,
            Some((f1, res, _)) => report.f1 > *f1 || (report.f1 == *f1 && residual < *res),
        };
        if better {
            best = Some((report.f1, residual, PhaseAlignment { offset, report }));
        }
    }
    Ok(best.expect("offset 0 is always evaluated").2)
}
