//! Domain types and the frame-grid arithmetic shared by every other module.
//!
//! All time values are `f64` seconds; frame indices are `usize`. Types here
//! are immutable values after construction and safe to share across threads.

use ndarray::Array2;
use thiserror::Error;

/// Number of piano keys modeled (MIDI 21..=108).
pub const NUM_PITCHES: usize = 88;

/// Lowest modeled MIDI pitch (A0).
pub const PITCH_MIN: u8 = 21;

/// Highest modeled MIDI pitch (C8).
pub const PITCH_MAX: u8 = 108;

#[derive(Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("MIDI pitch {0} outside the 88-key range {PITCH_MIN}..={PITCH_MAX}")]
    PitchOutOfRange(u8),
    #[error("velocity {0} outside 1..=127")]
    VelocityOutOfRange(u8),
    #[error("note times invalid: onset {onset_s}, offset {offset_s}")]
    InvalidNoteTimes { onset_s: f64, offset_s: f64 },
    #[error("notes not sorted by (onset, pitch) at index {0}")]
    UnsortedNotes(usize),
    #[error("same-pitch notes overlap at index {0}")]
    OverlappingNotes(usize),
    #[error("duration {duration_s} shorter than last offset {max_offset_s}")]
    DurationTooShort { duration_s: f64, max_offset_s: f64 },
    #[error("frame index {index} out of range for grid with {n_frames} frames")]
    FrameOutOfRange { index: usize, n_frames: usize },
    #[error("matrix shape {rows}x{cols} does not match grid ({n_frames} frames x {NUM_PITCHES})")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        n_frames: usize,
    },
    #[error("probability entry {value} at ({row}, {col}) outside [0, 1]")]
    ProbabilityOutOfRange { row: usize, col: usize, value: f64 },
    #[error("roll entry {value} at ({row}, {col}) is not 0 or 1")]
    NotBinary { row: usize, col: usize, value: u8 },
}

/// One of the 88 piano keys, stored as its MIDI note number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pitch(u8);

impl Pitch {
    pub fn from_midi(midi_number: u8) -> Result<Self, TypeError> {
        if (PITCH_MIN..=PITCH_MAX).contains(&midi_number) {
            Ok(Pitch(midi_number))
        } else {
            Err(TypeError::PitchOutOfRange(midi_number))
        }
    }

    /// Pitch for a roll column index in `0..88`.
    pub fn from_index(index: usize) -> Result<Self, TypeError> {
        if index < NUM_PITCHES {
            Ok(Pitch(PITCH_MIN + index as u8))
        } else {
            Err(TypeError::PitchOutOfRange(
                PITCH_MIN.wrapping_add(index as u8),
            ))
        }
    }

    pub fn midi_number(self) -> u8 {
        self.0
    }

    /// Column index into T x 88 matrices: `midi_number - 21`.
    pub fn index(self) -> usize {
        (self.0 - PITCH_MIN) as usize
    }
}

/// One pitched note with onset/offset times in seconds and a MIDI velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoteEvent {
    pub pitch: Pitch,
    pub onset_s: f64,
    pub offset_s: f64,
    pub velocity: u8,
}

impl NoteEvent {
    pub fn new(pitch: Pitch, onset_s: f64, offset_s: f64, velocity: u8) -> Result<Self, TypeError> {
        if !(1..=127).contains(&velocity) {
            return Err(TypeError::VelocityOutOfRange(velocity));
        }
        if !onset_s.is_finite() || !offset_s.is_finite() || onset_s < 0.0 || offset_s <= onset_s {
            return Err(TypeError::InvalidNoteTimes { onset_s, offset_s });
        }
        Ok(NoteEvent {
            pitch,
            onset_s,
            offset_s,
            velocity,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.offset_s - self.onset_s
    }
}

/// Ordered collection of notes for one piece.
///
/// Invariants: notes sorted by `(onset_s, pitch)`, two notes of the same
/// pitch never overlap in time, and `duration_s` covers the last offset.
#[derive(Debug, Clone, PartialEq)]
pub struct NoteSequence {
    notes: Vec<NoteEvent>,
    duration_s: f64,
}

impl NoteSequence {
    pub fn empty() -> Self {
        NoteSequence {
            notes: Vec::new(),
            duration_s: 0.0,
        }
    }

    /// Builds a sequence, validating ordering and same-pitch exclusivity.
    pub fn new(notes: Vec<NoteEvent>, duration_s: f64) -> Result<Self, TypeError> {
        for i in 1..notes.len() {
            let (a, b) = (&notes[i - 1], &notes[i]);
            if (b.onset_s, b.pitch) < (a.onset_s, a.pitch) {
                return Err(TypeError::UnsortedNotes(i));
            }
        }
        let mut last_offset_per_pitch = [f64::NEG_INFINITY; NUM_PITCHES];
        let mut max_offset: f64 = 0.0;
        for (i, n) in notes.iter().enumerate() {
            let slot = &mut last_offset_per_pitch[n.pitch.index()];
            if n.onset_s < *slot {
                return Err(TypeError::OverlappingNotes(i));
            }
            *slot = n.offset_s;
            max_offset = max_offset.max(n.offset_s);
        }
        if duration_s < max_offset {
            return Err(TypeError::DurationTooShort {
                duration_s,
                max_offset_s: max_offset,
            });
        }
        Ok(NoteSequence { notes, duration_s })
    }

    /// Sorts the notes by `(onset_s, pitch)` first, then validates.
    pub fn from_unsorted(mut notes: Vec<NoteEvent>, duration_s: f64) -> Result<Self, TypeError> {
        notes.sort_by(|a, b| {
            (a.onset_s, a.pitch)
                .partial_cmp(&(b.onset_s, b.pitch))
                .expect("note times are finite")
        });
        Self::new(notes, duration_s)
    }

    pub fn notes(&self) -> &[NoteEvent] {
        &self.notes
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }
}

/// Time-quantization context shared by all matrix types.
///
/// Frame `i` covers the half-open interval `[i*d, (i+1)*d)` with
/// `d = hop_length / sample_rate` (exactly 0.032 s at the 512/16000 default).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameGrid {
    pub sample_rate: u32,
    pub hop_length: u32,
    pub n_frames: usize,
}

impl FrameGrid {
    pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
    pub const DEFAULT_HOP_LENGTH: u32 = 512;

    pub fn new(sample_rate: u32, hop_length: u32, n_frames: usize) -> Self {
        assert!(sample_rate > 0 && hop_length > 0);
        FrameGrid {
            sample_rate,
            hop_length,
            n_frames,
        }
    }

    /// Grid with the default 512-sample hop at 16 kHz, covering `duration_s`.
    pub fn for_duration(duration_s: f64) -> Self {
        let fd = Self::DEFAULT_HOP_LENGTH as f64 / Self::DEFAULT_SAMPLE_RATE as f64;
        let n_frames = (duration_s / fd).ceil() as usize;
        Self::new(
            Self::DEFAULT_SAMPLE_RATE,
            Self::DEFAULT_HOP_LENGTH,
            n_frames,
        )
    }

    pub fn frame_duration(&self) -> f64 {
        self.hop_length as f64 / self.sample_rate as f64
    }

    /// Frame index containing time `t` (seconds), clamped to the grid.
    ///
    /// Boundary times belong to the later frame. The result is kept
    /// consistent with [`FrameGrid::frame_interval`] even when `i * d`
    /// rounds: the initial floor-division guess is nudged so that
    /// `time_to_frame(frame_interval(i).0) == i` holds for every frame.
    pub fn time_to_frame(&self, t: f64) -> usize {
        assert!(t >= 0.0 && t.is_finite(), "time_to_frame requires t >= 0");
        assert!(self.n_frames > 0, "time_to_frame on an empty grid");
        let fd = self.frame_duration();
        let last = self.n_frames - 1;
        let guess = (t / fd).floor();
        let mut i = if guess >= last as f64 {
            last
        } else {
            guess as usize
        };
        while i + 1 < self.n_frames && (i + 1) as f64 * fd <= t {
            i += 1;
        }
        while i > 0 && i as f64 * fd > t {
            i -= 1;
        }
        i
    }

    /// Half-open time interval `[start, end)` covered by frame `i`.
    pub fn frame_interval(&self, i: usize) -> Result<(f64, f64), TypeError> {
        if i >= self.n_frames {
            return Err(TypeError::FrameOutOfRange {
                index: i,
                n_frames: self.n_frames,
            });
        }
        let fd = self.frame_duration();
        Ok((i as f64 * fd, (i + 1) as f64 * fd))
    }
}

fn check_shape(grid: &FrameGrid, rows: usize, cols: usize) -> Result<(), TypeError> {
    if rows != grid.n_frames || cols != NUM_PITCHES {
        Err(TypeError::ShapeMismatch {
            rows,
            cols,
            n_frames: grid.n_frames,
        })
    } else {
        Ok(())
    }
}

/// T x 88 matrix of per-frame, per-pitch probabilities on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriorgram {
    pub grid: FrameGrid,
    values: Array2<f64>,
}

impl Posteriorgram {
    /// Validates the shape and that every entry lies in `[0, 1]`.
    pub fn new(grid: FrameGrid, values: Array2<f64>) -> Result<Self, TypeError> {
        check_shape(&grid, values.nrows(), values.ncols())?;
        for ((row, col), &v) in values.indexed_iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(TypeError::ProbabilityOutOfRange { row, col, value: v });
            }
        }
        Ok(Posteriorgram { grid, values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// T x 88 matrix of {0, 1} activity on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryRoll {
    pub grid: FrameGrid,
    values: Array2<u8>,
}

impl BinaryRoll {
    pub fn new(grid: FrameGrid, values: Array2<u8>) -> Result<Self, TypeError> {
        check_shape(&grid, values.nrows(), values.ncols())?;
        for ((row, col), &v) in values.indexed_iter() {
            if v > 1 {
                return Err(TypeError::NotBinary { row, col, value: v });
            }
        }
        Ok(BinaryRoll { grid, values })
    }

    pub fn zeros(grid: FrameGrid) -> Self {
        BinaryRoll {
            values: Array2::zeros((grid.n_frames, NUM_PITCHES)),
            grid,
        }
    }

    pub fn values(&self) -> &Array2<u8> {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut Array2<u8> {
        &mut self.values
    }

    /// Ideal probabilities: 1.0 where active, 0.0 elsewhere.
    pub fn to_posteriorgram(&self) -> Posteriorgram {
        Posteriorgram {
            grid: self.grid,
            values: self.values.mapv(f64::from),
        }
    }
}
