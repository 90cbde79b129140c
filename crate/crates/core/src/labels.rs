//! Frame/onset/velocity training targets and the frame-loss weight matrix,
//! quantized from continuous-time note sequences.

use crate::types::{BinaryRoll, FrameGrid, NoteSequence, Posteriorgram, NUM_PITCHES};
use ndarray::Array2;

/// Notes are truncated to at most this length before onset quantization;
/// at the 32 ms frame size almost every onset spans exactly two frames.
pub const DEFAULT_ONSET_LENGTH_S: f64 = 0.032;

/// Weight applied across a note's onset frames, decaying afterwards.
pub const DEFAULT_WEIGHT_C: f64 = 5.0;

/// The four per-(pitch, frame) training targets for one piece.
#[derive(Debug, Clone)]
pub struct LabelSet {
    pub frames: BinaryRoll,
    pub onsets: BinaryRoll,
    pub weights: Array2<f64>,
    pub velocities: Array2<f64>,
}

impl LabelSet {
    /// Builds all four targets with the default onset length and weight.
    pub fn from_sequence(seq: &NoteSequence, grid: FrameGrid) -> Self {
        Self::with_params(seq, grid, DEFAULT_ONSET_LENGTH_S, DEFAULT_WEIGHT_C)
    }

    pub fn with_params(seq: &NoteSequence, grid: FrameGrid, onset_length_s: f64, c: f64) -> Self {
        let frames = make_frame_labels(seq, grid);
        let onsets = make_onset_labels(seq, grid, onset_length_s);
        let weights = make_weights(&frames, &onsets, c);
        let velocities = make_velocity_labels(seq, &onsets, grid);
        LabelSet {
            frames,
            onsets,
            weights,
            velocities,
        }
    }

    /// Ideal posteriorgrams and velocity predictions for this label set,
    /// as produced by a model that reproduced the labels perfectly.
    pub fn ideal_predictions(&self) -> (Posteriorgram, Posteriorgram, Array2<f64>) {
        (
            self.onsets.to_posteriorgram(),
            self.frames.to_posteriorgram(),
            self.velocities.clone(),
        )
    }
}

/// Frames covered by `[onset, offset)` with any positive overlap, as an
/// inclusive index range. `None` when nothing on the grid is covered.
fn covered_frames(grid: &FrameGrid, onset_s: f64, offset_s: f64) -> Option<(usize, usize)> {
    if grid.n_frames == 0 || offset_s <= onset_s || onset_s < 0.0 {
        return None;
    }
    let grid_end = grid.n_frames as f64 * grid.frame_duration();
    if onset_s >= grid_end {
        return None;
    }
    let first = grid.time_to_frame(onset_s);
    let mut last = grid.time_to_frame(offset_s.min(grid_end));
    // a note ending exactly on a frame boundary does not reach that frame
    if last > first {
        let (start, _) = grid.frame_interval(last).expect("in range");
        if start >= offset_s {
            last -= 1;
        }
    }
    Some((first, last))
}

/// `frames(p, t) = 1` iff the note interval overlaps frame `t` by any
/// positive amount.
pub fn make_frame_labels(seq: &NoteSequence, grid: FrameGrid) -> BinaryRoll {
    let mut roll = BinaryRoll::zeros(grid);
    for n in seq.notes() {
        if let Some((first, last)) = covered_frames(&grid, n.onset_s, n.offset_s) {
            for t in first..=last {
                roll.values_mut()[[t, n.pitch.index()]] = 1;
            }
        }
    }
    roll
}

/// Frame labels of notes truncated to `min(duration, onset_length_s)`.
pub fn make_onset_labels(seq: &NoteSequence, grid: FrameGrid, onset_length_s: f64) -> BinaryRoll {
    assert!(onset_length_s > 0.0);
    let mut roll = BinaryRoll::zeros(grid);
    for n in seq.notes() {
        let offset = n.onset_s + n.duration_s().min(onset_length_s);
        if let Some((first, last)) = covered_frames(&grid, n.onset_s, offset) {
            for t in first..=last {
                roll.values_mut()[[t, n.pitch.index()]] = 1;
            }
        }
    }
    roll
}

/// Per-cell multipliers for the frame loss.
///
/// For a note starting at frame `t1`, completing its onset at `t2` (the last
/// onset-labeled frame) and ending at `t3`: weight `c` on `t1..=t2`,
/// `c / (t - t2)` on `t2+1..=t3`, and 1 elsewhere. The decay is applied as
/// written, without flooring, so it drops below 1 once `t - t2 > c`. Where
/// same-pitch notes abut inside one frame run, each later onset starts a new
/// note whose weights override the previous note's tail.
pub fn make_weights(frames: &BinaryRoll, onsets: &BinaryRoll, c: f64) -> Array2<f64> {
    let n_frames = frames.grid.n_frames;
    let mut weights = Array2::from_elem((n_frames, NUM_PITCHES), 1.0);
    let f = frames.values();
    let o = onsets.values();

    for p in 0..NUM_PITCHES {
        let mut t = 0;
        while t < n_frames {
            if f[[t, p]] == 0 {
                t += 1;
                continue;
            }
            let run_start = t;
            while t < n_frames && f[[t, p]] == 1 {
                t += 1;
            }
            let run_end = t - 1;

            // note boundaries inside the run: the run start plus every
            // later 0->1 transition of the onset roll
            let mut starts = vec![run_start];
            for s in (run_start + 1)..=run_end {
                if o[[s, p]] == 1 && o[[s - 1, p]] == 0 {
                    starts.push(s);
                }
            }
            for (k, &t1) in starts.iter().enumerate() {
                let t3 = starts.get(k + 1).map_or(run_end, |&next| next - 1);
                let mut t2 = t1;
                while t2 < t3 && o[[t2 + 1, p]] == 1 {
                    t2 += 1;
                }
                for frame in t1..=t3 {
                    weights[[frame, p]] = if frame <= t2 {
                        c
                    } else {
                        c / (frame - t2) as f64
                    };
                }
            }
        }
    }
    weights
}

/// Writes each note's normalized velocity `v / v_max` at that note's
/// onset-labeled frames; zero elsewhere.
pub fn make_velocity_labels(
    seq: &NoteSequence,
    onsets: &BinaryRoll,
    grid: FrameGrid,
) -> Array2<f64> {
    let mut velocities = Array2::zeros((grid.n_frames, NUM_PITCHES));
    let Some(v_max) = seq.notes().iter().map(|n| n.velocity).max() else {
        return velocities;
    };
    let o = onsets.values();
    for n in seq.notes() {
        let value = f64::from(n.velocity) / f64::from(v_max);
        if let Some((first, last)) = covered_frames(&grid, n.onset_s, n.offset_s) {
            // the note's own onset run: contiguous onset frames from its start
            let mut t = first;
            while t <= last && o[[t, n.pitch.index()]] == 1 {
                velocities[[t, n.pitch.index()]] = value;
                t += 1;
            }
        }
    }
    velocities
}
