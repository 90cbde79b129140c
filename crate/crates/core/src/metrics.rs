//! Frame-level and note-level precision/recall/F1, including the
//! note-with-offset family and the velocity-aware family, plus per-piece
//! aggregation.
//!
//! Note matching is maximum-cardinality bipartite matching over candidate
//! pairs (equal pitch, onset within tolerance, optionally offset within
//! `max(min_tolerance, ratio * ref_duration)`). The velocity family takes
//! the offset-matched pairs, fits a global scale and offset from estimated
//! to normalized reference velocities by least squares, and keeps a match
//! only when its rescaled residual is strictly below `tau`.

use crate::labels::make_frame_labels;
use crate::types::{FrameGrid, NoteSequence};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("rolls disagree on sample rate or hop: {0:?} vs {1:?}")]
    GridMismatch(FrameGrid, FrameGrid),
    #[error("cannot aggregate zero reports")]
    EmptyAggregate,
}

/// Matching tolerances. Defaults follow the common transcription contract:
/// onsets within +/-50 ms, offsets within 20% of the reference duration or
/// 50 ms (whichever is greater), velocity residual below 0.1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingConfig {
    pub onset_tolerance_s: f64,
    pub offset_ratio: f64,
    pub offset_min_tolerance_s: f64,
    pub velocity_tau: f64,
    pub require_offset: bool,
    pub require_velocity: bool,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig {
            onset_tolerance_s: 0.05,
            offset_ratio: 0.2,
            offset_min_tolerance_s: 0.05,
            velocity_tau: 0.1,
            require_offset: false,
            require_velocity: false,
        }
    }
}

impl MatchingConfig {
    pub fn note_only() -> Self {
        Self::default()
    }

    pub fn with_offset() -> Self {
        MatchingConfig {
            require_offset: true,
            ..Self::default()
        }
    }

    pub fn with_offset_and_velocity() -> Self {
        MatchingConfig {
            require_offset: true,
            require_velocity: true,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricScores {
    #[serde(rename = "p")]
    pub precision: f64,
    #[serde(rename = "r")]
    pub recall: f64,
    pub f1: f64,
}

impl MetricScores {
    /// Precision is 1 when nothing was predicted, recall is 1 when there is
    /// nothing to find, and F1 is 0 when precision + recall is 0.
    fn from_counts(tp: usize, fp: usize, r#fn: usize) -> Self {
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + r#fn == 0 {
            1.0
        } else {
            tp as f64 / (tp + r#fn) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MetricScores {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub r#fn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReportCounts {
    pub frame: MatchCounts,
    pub note: MatchCounts,
    pub note_with_offset: MatchCounts,
    pub note_with_offset_velocity: MatchCounts,
}

/// Scores for the four metric families of one piece (or an aggregate).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub piece: String,
    pub frame: MetricScores,
    pub note: MetricScores,
    pub note_with_offset: MetricScores,
    pub note_with_offset_velocity: MetricScores,
    pub counts: ReportCounts,
}

/// Cell-wise precision/recall/F1 between two binary rolls.
///
/// The shorter roll is zero-padded in time; sample rate and hop must agree.
pub fn frame_metrics(
    reference: &crate::types::BinaryRoll,
    estimate: &crate::types::BinaryRoll,
) -> Result<(MetricScores, MatchCounts), MetricsError> {
    let (rg, eg) = (reference.grid, estimate.grid);
    if rg.sample_rate != eg.sample_rate || rg.hop_length != eg.hop_length {
        return Err(MetricsError::GridMismatch(rg, eg));
    }
    let n = rg.n_frames.max(eg.n_frames);
    let (mut tp, mut fp, mut r#fn) = (0usize, 0usize, 0usize);
    for t in 0..n {
        for p in 0..crate::types::NUM_PITCHES {
            let r = t < rg.n_frames && reference.values()[[t, p]] == 1;
            let e = t < eg.n_frames && estimate.values()[[t, p]] == 1;
            match (r, e) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => r#fn += 1,
                (false, false) => {}
            }
        }
    }
    Ok((
        MetricScores::from_counts(tp, fp, r#fn),
        MatchCounts { tp, fp, r#fn },
    ))
}

fn offset_tolerance(cfg: &MatchingConfig, ref_duration: f64) -> f64 {
    cfg.offset_min_tolerance_s
        .max(cfg.offset_ratio * ref_duration)
}

/// Maximum-cardinality matching between reference and estimated notes.
///
/// `(r, e)` is a candidate iff pitches are equal, `|onset_r - onset_e| <=
/// onset_tolerance_s`, and, when `require_offset`, the offsets differ by at
/// most `max(offset_min_tolerance_s, offset_ratio * duration_r)`. Each note
/// is used at most once; pairs are returned sorted by reference index.
pub fn match_notes(
    reference: &NoteSequence,
    estimate: &NoteSequence,
    cfg: &MatchingConfig,
) -> Vec<(usize, usize)> {
    let refs = reference.notes();
    let ests = estimate.notes();

    let adjacency: Vec<Vec<usize>> = refs
        .iter()
        .map(|r| {
            ests.iter()
                .enumerate()
                .filter(|(_, e)| {
                    r.pitch == e.pitch
                        && (r.onset_s - e.onset_s).abs() <= cfg.onset_tolerance_s
                        && (!cfg.require_offset
                            || (r.offset_s - e.offset_s).abs()
                                <= offset_tolerance(cfg, r.duration_s()))
                })
                .map(|(j, _)| j)
                .collect()
        })
        .collect();

    let mut est_match: Vec<Option<usize>> = vec![None; ests.len()];
    for r in 0..refs.len() {
        let mut seen = vec![false; ests.len()];
        augment(r, &adjacency, &mut seen, &mut est_match);
    }

    let mut pairs: Vec<(usize, usize)> = est_match
        .iter()
        .enumerate()
        .filter_map(|(e, r)| r.map(|r| (r, e)))
        .collect();
    pairs.sort_unstable();
    pairs
}

fn augment(
    r: usize,
    adjacency: &[Vec<usize>],
    seen: &mut [bool],
    est_match: &mut [Option<usize>],
) -> bool {
    for &e in &adjacency[r] {
        if seen[e] {
            continue;
        }
        seen[e] = true;
        if est_match[e].is_none() || augment(est_match[e].unwrap(), adjacency, seen, est_match) {
            est_match[e] = Some(r);
            return true;
        }
    }
    false
}

/// Least-squares scale and offset mapping `v_est` onto `v_ref`.
///
/// Degenerate inputs (variance of `v_est` below 1e-12) fall back to the
/// limit `m = 0`, `b = mean(v_ref)`.
pub fn velocity_regression(v_est: &[f64], v_ref: &[f64]) -> (f64, f64) {
    assert_eq!(v_est.len(), v_ref.len());
    let m = v_est.len() as f64;
    let mean_e = v_est.iter().sum::<f64>() / m;
    let mean_r = v_ref.iter().sum::<f64>() / m;
    let var_sum: f64 = v_est.iter().map(|e| (e - mean_e) * (e - mean_e)).sum();
    if var_sum / m < 1e-12 {
        return (0.0, mean_r);
    }
    let cov_sum: f64 = v_est
        .iter()
        .zip(v_ref)
        .map(|(e, r)| (e - mean_e) * (r - mean_r))
        .sum();
    let slope = cov_sum / var_sum;
    (slope, mean_r - slope * mean_e)
}

/// Which matches survive the rescaled-residual test `|m*v_e + b - v_r| < tau`
/// (strict). `v_ref` must already be normalized to `[0, 1]`.
pub fn velocity_filter_values(v_ref: &[f64], v_est: &[f64], tau: f64) -> Vec<bool> {
    if v_ref.is_empty() {
        return Vec::new();
    }
    let (m, b) = velocity_regression(v_est, v_ref);
    v_est
        .iter()
        .zip(v_ref)
        .map(|(e, r)| (m * e + b - r).abs() < tau)
        .collect()
}

/// Filters offset-matched pairs by the velocity criterion.
///
/// Reference velocities are normalized by the maximum velocity over the
/// whole reference sequence; estimated velocities enter on the raw MIDI
/// scale (the criterion is invariant to any positive affine map of them).
pub fn velocity_filter(
    reference: &NoteSequence,
    estimate: &NoteSequence,
    matches: &[(usize, usize)],
    tau: f64,
) -> Vec<(usize, usize)> {
    if matches.is_empty() {
        return Vec::new();
    }
    let v_max = reference
        .notes()
        .iter()
        .map(|n| n.velocity)
        .max()
        .expect("matches imply a non-empty reference");
    let v_ref: Vec<f64> = matches
        .iter()
        .map(|&(r, _)| f64::from(reference.notes()[r].velocity) / f64::from(v_max))
        .collect();
    let v_est: Vec<f64> = matches
        .iter()
        .map(|&(_, e)| f64::from(estimate.notes()[e].velocity))
        .collect();
    velocity_filter_values(&v_ref, &v_est, tau)
        .into_iter()
        .zip(matches)
        .filter_map(|(keep, &pair)| keep.then_some(pair))
        .collect()
}

fn note_family_scores(n_ref: usize, n_est: usize, n_matched: usize) -> (MetricScores, MatchCounts) {
    let counts = MatchCounts {
        tp: n_matched,
        fp: n_est - n_matched,
        r#fn: n_ref - n_matched,
    };
    (
        MetricScores::from_counts(counts.tp, counts.fp, counts.r#fn),
        counts,
    )
}

/// All four metric families for one piece, at the given tolerances.
///
/// Frame scores are computed over 32 ms-quantized rolls of both sequences
/// on `grid`, so they are reproducible from MIDI alone.
pub fn evaluate_piece_with(
    reference: &NoteSequence,
    estimate: &NoteSequence,
    grid: FrameGrid,
    cfg: &MatchingConfig,
) -> EvalReport {
    let ref_roll = make_frame_labels(reference, grid);
    let est_roll = make_frame_labels(estimate, grid);
    let (frame, frame_counts) = frame_metrics(&ref_roll, &est_roll).expect("same grid");

    let onset_only = MatchingConfig {
        require_offset: false,
        require_velocity: false,
        ..*cfg
    };
    let with_offset = MatchingConfig {
        require_offset: true,
        require_velocity: false,
        ..*cfg
    };

    let note_matches = match_notes(reference, estimate, &onset_only);
    let offset_matches = match_notes(reference, estimate, &with_offset);
    let velocity_matches = velocity_filter(reference, estimate, &offset_matches, cfg.velocity_tau);

    let (n_ref, n_est) = (reference.len(), estimate.len());
    let (note, note_counts) = note_family_scores(n_ref, n_est, note_matches.len());
    let (note_with_offset, offset_counts) = note_family_scores(n_ref, n_est, offset_matches.len());
    let (note_with_offset_velocity, velocity_counts) =
        note_family_scores(n_ref, n_est, velocity_matches.len());

    EvalReport {
        piece: String::new(),
        frame,
        note,
        note_with_offset,
        note_with_offset_velocity,
        counts: ReportCounts {
            frame: frame_counts,
            note: note_counts,
            note_with_offset: offset_counts,
            note_with_offset_velocity: velocity_counts,
        },
    }
}

/// [`evaluate_piece_with`] at the default tolerances.
pub fn evaluate_piece(
    reference: &NoteSequence,
    estimate: &NoteSequence,
    grid: FrameGrid,
) -> EvalReport {
    evaluate_piece_with(reference, estimate, grid, &MatchingConfig::default())
}

/// Arithmetic mean of each precision/recall/F1 field across pieces (the
/// per-piece convention, not a recomputation from pooled counts); counts
/// are summed for reference.
pub fn aggregate(reports: &[EvalReport]) -> Result<EvalReport, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyAggregate);
    }
    let n = reports.len() as f64;
    let mean = |get: &dyn Fn(&EvalReport) -> MetricScores| MetricScores {
        precision: reports.iter().map(|r| get(r).precision).sum::<f64>() / n,
        recall: reports.iter().map(|r| get(r).recall).sum::<f64>() / n,
        f1: reports.iter().map(|r| get(r).f1).sum::<f64>() / n,
    };
    let sum = |get: &dyn Fn(&EvalReport) -> MatchCounts| MatchCounts {
        tp: reports.iter().map(|r| get(r).tp).sum(),
        fp: reports.iter().map(|r| get(r).fp).sum(),
        r#fn: reports.iter().map(|r| get(r).r#fn).sum(),
    };
    Ok(EvalReport {
        piece: "aggregate".to_string(),
        frame: mean(&|r| r.frame),
        note: mean(&|r| r.note),
        note_with_offset: mean(&|r| r.note_with_offset),
        note_with_offset_velocity: mean(&|r| r.note_with_offset_velocity),
        counts: ReportCounts {
            frame: sum(&|r| r.counts.frame),
            note: sum(&|r| r.counts.note),
            note_with_offset: sum(&|r| r.counts.note_with_offset),
            note_with_offset_velocity: sum(&|r| r.counts.note_with_offset_velocity),
        },
    })
}
