//! Posteriorgram-to-notes decoding.
//!
//! Two interchangeable strategies live behind [`DecodeStrategy`] and are
//! selectable by name at runtime:
//!
//! * `"onset-gated"` — the default. A note may only start in a frame where
//!   the onset detector also fires; frame-activation runs with no gating
//!   onset are dropped entirely.
//! * `"frames-only"` — run-length segmentation of the frame activations
//!   with no onset gate, the ablation contrast. Velocity is fixed at 64.

use crate::types::{FrameGrid, NoteEvent, NoteSequence, Pitch, Posteriorgram, NUM_PITCHES};
use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("posteriorgram grids disagree: {0:?} vs {1:?}")]
    GridMismatch(FrameGrid, FrameGrid),
    #[error("velocity matrix is {got:?}, expected {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("unknown decode strategy \"{0}\"")]
    UnknownStrategy(String),
}

/// Inference thresholds and the velocity mapping `v_midi = scale * v + bias`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    pub onset_threshold: f64,
    pub frame_threshold: f64,
    pub velocity_scale: f64,
    pub velocity_bias: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            onset_threshold: 0.5,
            frame_threshold: 0.5,
            velocity_scale: 80.0,
            velocity_bias: 10.0,
        }
    }
}

impl DecoderConfig {
    /// Clips the prediction to `[0, 1]` and maps it to a MIDI velocity,
    /// rounded to the nearest integer: 0 maps to 10 and 1 to 90 at the
    /// default scale/bias.
    pub fn midi_velocity(&self, v_pred: f64) -> u8 {
        let v = v_pred.clamp(0.0, 1.0);
        (self.velocity_scale * v + self.velocity_bias).round() as u8
    }
}

/// A posteriorgram-to-notes decoding algorithm.
pub trait DecodeStrategy: Send + Sync {
    /// Registry name, as selectable from config or CLI.
    fn name(&self) -> &'static str;

    fn decode(
        &self,
        onsets: &Posteriorgram,
        frames: &Posteriorgram,
        velocities: &Array2<f64>,
        cfg: &DecoderConfig,
    ) -> Result<NoteSequence, DecodeError>;
}

/// Onset-conditioned inference: frame activation may only open a note when
/// the onset detector agrees in the same frame.
pub struct OnsetGatedDecoder;

/// Plain run-length segmentation of frame activations, no onset gate.
pub struct FramesOnlyDecoder;

static ONSET_GATED: OnsetGatedDecoder = OnsetGatedDecoder;
static FRAMES_ONLY: FramesOnlyDecoder = FramesOnlyDecoder;

/// All registered strategies, default first.
pub fn strategies() -> [&'static dyn DecodeStrategy; 2] {
    [&ONSET_GATED, &FRAMES_ONLY]
}

pub fn strategy_by_name(name: &str) -> Result<&'static dyn DecodeStrategy, DecodeError> {
    strategies()
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| DecodeError::UnknownStrategy(name.to_string()))
}

impl DecodeStrategy for OnsetGatedDecoder {
    fn name(&self) -> &'static str {
        "onset-gated"
    }

    fn decode(
        &self,
        onsets: &Posteriorgram,
        frames: &Posteriorgram,
        velocities: &Array2<f64>,
        cfg: &DecoderConfig,
    ) -> Result<NoteSequence, DecodeError> {
        if onsets.grid != frames.grid {
            return Err(DecodeError::GridMismatch(onsets.grid, frames.grid));
        }
        if velocities.dim() != frames.values().dim() {
            return Err(DecodeError::ShapeMismatch {
                expected: frames.values().dim(),
                got: velocities.dim(),
            });
        }
        Ok(scan(frames, Some(onsets), Some(velocities), cfg))
    }
}

impl DecodeStrategy for FramesOnlyDecoder {
    fn name(&self) -> &'static str {
        "frames-only"
    }

    fn decode(
        &self,
        _onsets: &Posteriorgram,
        frames: &Posteriorgram,
        _velocities: &Array2<f64>,
        cfg: &DecoderConfig,
    ) -> Result<NoteSequence, DecodeError> {
        Ok(scan(frames, None, None, cfg))
    }
}

/// Onset-gated decoding (the default strategy).
pub fn decode(
    onsets: &Posteriorgram,
    frames: &Posteriorgram,
    velocities: &Array2<f64>,
    cfg: &DecoderConfig,
) -> Result<NoteSequence, DecodeError> {
    ONSET_GATED.decode(onsets, frames, velocities, cfg)
}

/// Ungated decoding of the frame channel alone; velocity fixed at 64.
pub fn decode_frames_only(
    frames: &Posteriorgram,
    cfg: &DecoderConfig,
) -> Result<NoteSequence, DecodeError> {
    Ok(scan(frames, None, None, cfg))
}

/// Per-pitch run-length scan shared by both strategies.
///
/// A note starts at frame `t` when the frame activation clears its
/// threshold, no note of that pitch is open, and (when gating) the onset
/// activation clears its threshold in the same frame. An open note
/// continues while the frame activation stays at or above threshold and
/// ends at the start time of the first frame below it (or at end of
/// piece). Onsets inside an open note do not retrigger; after a gap a
/// fresh onset is required. Velocity is read at the starting frame only.
fn scan(
    frames: &Posteriorgram,
    onsets: Option<&Posteriorgram>,
    velocities: Option<&Array2<f64>>,
    cfg: &DecoderConfig,
) -> NoteSequence {
    let grid = frames.grid;
    let fd = grid.frame_duration();
    let f = frames.values();
    let mut notes = Vec::new();

    for p in 0..NUM_PITCHES {
        let pitch = Pitch::from_index(p).expect("p < 88");
        let mut open: Option<(usize, u8)> = None; // (start frame, velocity)
        for t in 0..grid.n_frames {
            let frame_active = f[[t, p]] >= cfg.frame_threshold;
            match open {
                Some((start, velocity)) => {
                    if !frame_active {
                        notes.push(make_note(pitch, start, t, fd, velocity));
                        open = None;
                    }
                }
                None => {
                    let gate = match onsets {
                        Some(o) => o.values()[[t, p]] >= cfg.onset_threshold,
                        None => true,
                    };
                    if frame_active && gate {
                        let velocity = match velocities {
                            Some(v) => cfg.midi_velocity(v[[t, p]]),
                            None => 64,
                        };
                        open = Some((t, velocity));
                    }
                }
            }
        }
        if let Some((start, velocity)) = open {
            notes.push(make_note(pitch, start, grid.n_frames, fd, velocity));
        }
    }

    let duration = grid.n_frames as f64 * fd;
    NoteSequence::from_unsorted(notes, duration)
        .expect("per-pitch runs are disjoint and at least one frame long")
}

fn make_note(pitch: Pitch, start: usize, end: usize, fd: f64, velocity: u8) -> NoteEvent {
    NoteEvent::new(
        pitch,
        start as f64 * fd,
        end as f64 * fd,
        velocity.clamp(1, 127),
    )
    .expect("end > start by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> FrameGrid {
        FrameGrid::new(16_000, 512, n)
    }

    struct Builder {
        onsets: Array2<f64>,
        frames: Array2<f64>,
        velocities: Array2<f64>,
        grid: FrameGrid,
    }

    impl Builder {
        fn new(n_frames: usize) -> Self {
            Builder {
                onsets: Array2::zeros((n_frames, NUM_PITCHES)),
                frames: Array2::zeros((n_frames, NUM_PITCHES)),
                velocities: Array2::zeros((n_frames, NUM_PITCHES)),
                grid: grid(n_frames),
            }
        }

        fn frame_run(mut self, p: usize, t0: usize, t1: usize) -> Self {
            for t in t0..=t1 {
                self.frames[[t, p]] = 1.0;
            }
            self
        }

        fn onset(mut self, p: usize, t: usize) -> Self {
            self.onsets[[t, p]] = 1.0;
            self
        }

        fn velocity(mut self, p: usize, t: usize, v: f64) -> Self {
            self.velocities[[t, p]] = v;
            self
        }

        fn decode(&self) -> NoteSequence {
            decode(
                &Posteriorgram::new(self.grid, self.onsets.clone()).unwrap(),
                &Posteriorgram::new(self.grid, self.frames.clone()).unwrap(),
                &self.velocities,
                &DecoderConfig::default(),
            )
            .unwrap()
        }

        fn decode_frames_only(&self) -> NoteSequence {
            decode_frames_only(
                &Posteriorgram::new(self.grid, self.frames.clone()).unwrap(),
                &DecoderConfig::default(),
            )
            .unwrap()
        }
    }

    #[test]
    fn gated_run_produces_one_note() {
        let out = Builder::new(16).frame_run(39, 3, 10).onset(39, 3).decode();
        assert_eq!(out.len(), 1);
        let n = out.notes()[0];
        assert_eq!(n.pitch.midi_number(), 60);
        assert!((n.onset_s - 0.096).abs() < 1e-12);
        assert!((n.offset_s - 0.352).abs() < 1e-12, "offset {}", n.offset_s);
    }

    #[test]
    fn run_without_onset_is_filtered_out() {
        let b = Builder::new(16).frame_run(39, 3, 10);
        assert!(b.decode().is_empty());
        assert_eq!(b.decode_frames_only().len(), 1);
    }

    #[test]
    fn velocity_mapping_endpoints_and_clipping() {
        let cfg = DecoderConfig::default();
        assert_eq!(cfg.midi_velocity(0.0), 10);
        assert_eq!(cfg.midi_velocity(1.0), 90);
        assert_eq!(cfg.midi_velocity(1.7), 90);
        assert_eq!(cfg.midi_velocity(-0.3), 10);

        let out = Builder::new(8)
            .frame_run(0, 1, 2)
            .onset(0, 1)
            .velocity(0, 1, 1.7)
            .decode();
        assert_eq!(out.notes()[0].velocity, 90);
    }

    #[test]
    fn two_frame_onset_overlapping_run_start_gates() {
        // onset spans frames 2..3; frame run starts at 3: the shared frame
        // gates the note
        let out = Builder::new(10)
            .frame_run(5, 3, 6)
            .onset(5, 2)
            .onset(5, 3)
            .decode();
        assert_eq!(out.len(), 1);
        assert_eq!(out.notes()[0].onset_s, 3.0 * 0.032);
    }

    #[test]
    fn onset_strictly_before_run_does_not_gate() {
        let out = Builder::new(10).frame_run(5, 3, 6).onset(5, 2).decode();
        assert!(out.is_empty());
    }

    #[test]
    fn consecutive_onsets_do_not_retrigger() {
        let out = Builder::new(12)
            .frame_run(7, 2, 9)
            .onset(7, 2)
            .onset(7, 5)
            .onset(7, 6)
            .decode();
        assert_eq!(out.len(), 1);
        assert_eq!(out.notes()[0].onset_s, 2.0 * 0.032);
    }

    #[test]
    fn reactivation_after_gap_needs_fresh_onset() {
        let b = Builder::new(16)
            .frame_run(4, 2, 5)
            .frame_run(4, 8, 11)
            .onset(4, 2);
        let out = b.decode();
        assert_eq!(out.len(), 1, "second run has no onset");
        let both = Builder::new(16)
            .frame_run(4, 2, 5)
            .frame_run(4, 8, 11)
            .onset(4, 2)
            .onset(4, 8)
            .decode();
        assert_eq!(both.len(), 2);
    }

    #[test]
    fn late_onset_starts_note_mid_run() {
        let out = Builder::new(16).frame_run(3, 3, 10).onset(3, 6).decode();
        assert_eq!(out.len(), 1);
        let n = out.notes()[0];
        assert_eq!(n.onset_s, 6.0 * 0.032);
        assert!((n.offset_s - 11.0 * 0.032).abs() < 1e-12);
    }

    #[test]
    fn run_to_end_of_piece_closes_at_grid_end() {
        let out = Builder::new(8).frame_run(0, 5, 7).onset(0, 5).decode();
        assert_eq!(out.notes()[0].offset_s, 8.0 * 0.032);
    }

    #[test]
    fn empty_posteriorgram_decodes_to_empty() {
        let b = Builder::new(6);
        assert!(b.decode().is_empty());
        assert!(b.decode_frames_only().is_empty());
    }

    #[test]
    fn frames_only_velocity_is_64() {
        let out = Builder::new(8).frame_run(2, 1, 3).decode_frames_only();
        assert_eq!(out.notes()[0].velocity, 64);
    }

    #[test]
    fn gate_vacuous_when_every_run_starts_with_onset() {
        let b = Builder::new(20)
            .frame_run(10, 1, 4)
            .onset(10, 1)
            .frame_run(30, 7, 12)
            .onset(30, 7);
        let gated = b.decode();
        let ungated = b.decode_frames_only();
        assert_eq!(gated.len(), ungated.len());
        for (a, b) in gated.notes().iter().zip(ungated.notes()) {
            assert_eq!(a.pitch, b.pitch);
            assert_eq!(a.onset_s, b.onset_s);
            assert_eq!(a.offset_s, b.offset_s);
        }
    }

    #[test]
    fn registry_finds_both_strategies() {
        assert_eq!(
            strategy_by_name("onset-gated").unwrap().name(),
            "onset-gated"
        );
        assert_eq!(
            strategy_by_name("frames-only").unwrap().name(),
            "frames-only"
        );
        assert!(matches!(
            strategy_by_name("viterbi"),
            Err(DecodeError::UnknownStrategy(_))
        ));
    }

    #[test]
    fn grid_mismatch_rejected() {
        let onsets = Posteriorgram::new(grid(4), Array2::zeros((4, NUM_PITCHES))).unwrap();
        let frames = Posteriorgram::new(grid(5), Array2::zeros((5, NUM_PITCHES))).unwrap();
        let v = Array2::zeros((5, NUM_PITCHES));
        assert!(matches!(
            decode(&onsets, &frames, &v, &DecoderConfig::default()),
            Err(DecodeError::GridMismatch(..))
        ));
    }

    /// Per-pitch set of active frames in the decoded output.
    fn support(seq: &NoteSequence, g: &FrameGrid) -> Vec<Vec<bool>> {
        let mut s = vec![vec![false; g.n_frames]; NUM_PITCHES];
        for n in seq.notes() {
            let first = g.time_to_frame(n.onset_s);
            let last = g.time_to_frame(n.offset_s - 1e-9);
            for cell in &mut s[n.pitch.index()][first..=last] {
                *cell = true;
            }
        }
        s
    }

    fn arb_rolls(n_frames: usize) -> impl Strategy<Value = (Array2<f64>, Array2<f64>)> {
        let cells = n_frames * NUM_PITCHES;
        (
            prop::collection::vec(0.0f64..1.0, cells),
            prop::collection::vec(0.0f64..1.0, cells),
        )
            .prop_map(move |(o, f)| {
                (
                    Array2::from_shape_vec((n_frames, NUM_PITCHES), o).unwrap(),
                    Array2::from_shape_vec((n_frames, NUM_PITCHES), f).unwrap(),
                )
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn gated_support_is_subset_of_ungated((o, f) in arb_rolls(12)) {
            let g = grid(12);
            let onsets = Posteriorgram::new(g, o).unwrap();
            let frames = Posteriorgram::new(g, f).unwrap();
            let v = Array2::zeros((12, NUM_PITCHES));
            let cfg = DecoderConfig::default();
            let gated = decode(&onsets, &frames, &v, &cfg).unwrap();
            let ungated = decode_frames_only(&frames, &cfg).unwrap();
            let sg = support(&gated, &g);
            let su = support(&ungated, &g);
            for p in 0..NUM_PITCHES {
                for t in 0..12 {
                    prop_assert!(!sg[p][t] || su[p][t]);
                }
            }
            // no same-pitch overlap, minimum one frame
            for n in gated.notes().iter().chain(ungated.notes()) {
                prop_assert!(n.duration_s() >= g.frame_duration() - 1e-12);
            }
        }

        #[test]
        fn adding_an_onset_is_monotone(
            (o, f) in arb_rolls(10),
            t in 0usize..10,
            p in 0usize..NUM_PITCHES,
        ) {
            let g = grid(10);
            let frames = Posteriorgram::new(g, f).unwrap();
            let v = Array2::zeros((10, NUM_PITCHES));
            let cfg = DecoderConfig::default();

            let before = decode(&Posteriorgram::new(g, o.clone()).unwrap(), &frames, &v, &cfg).unwrap();
            let mut o2 = o;
            o2[[t, p]] = 1.0;
            let after = decode(&Posteriorgram::new(g, o2).unwrap(), &frames, &v, &cfg).unwrap();

            prop_assert!(after.len() >= before.len());
            let sb = support(&before, &g);
            let sa = support(&after, &g);
            for p in 0..NUM_PITCHES {
                for t in 0..10 {
                    prop_assert!(!sb[p][t] || sa[p][t], "support shrank at ({p}, {t})");
                }
            }
        }

        #[test]
        fn ideal_label_round_trip(
            raw in prop::collection::vec(
                (0usize..NUM_PITCHES, 0usize..40, 2usize..20, 1u8..=127),
                1..12,
            )
        ) {
            use crate::labels::LabelSet;
            use crate::types::NoteEvent;

            // frame-aligned synthetic notes with same-pitch gaps >= 2 frames
            let fd = 0.032;
            let mut by_pitch: std::collections::HashMap<usize, usize> = Default::default();
            let mut notes = Vec::new();
            for (p, start, dur, vel) in raw {
                let s = by_pitch.get(&p).map_or(start, |&e| start.max(e + 2));
                let e = s + dur;
                by_pitch.insert(p, e);
                notes.push(NoteEvent::new(
                    Pitch::from_index(p).unwrap(),
                    s as f64 * fd + 0.004,
                    e as f64 * fd - 0.004,
                    vel,
                ).unwrap());
            }
            let dur = notes.iter().map(|n| n.offset_s).fold(0.0, f64::max);
            let seq = NoteSequence::from_unsorted(notes, dur + 0.1).unwrap();

            let g = FrameGrid::for_duration(seq.duration_s());
            let labels = LabelSet::from_sequence(&seq, g);
            let (po, pf, pv) = labels.ideal_predictions();
            let decoded = decode(&po, &pf, &pv, &DecoderConfig::default()).unwrap();

            prop_assert_eq!(decoded.len(), seq.len());
            let mut dec: Vec<_> = decoded.notes().to_vec();
            dec.sort_by(|a, b| (a.pitch, a.onset_s).partial_cmp(&(b.pitch, b.onset_s)).unwrap());
            let mut refs: Vec<_> = seq.notes().to_vec();
            refs.sort_by(|a, b| (a.pitch, a.onset_s).partial_cmp(&(b.pitch, b.onset_s)).unwrap());
            for (d, r) in dec.iter().zip(&refs) {
                prop_assert_eq!(d.pitch, r.pitch);
                prop_assert!((d.onset_s - r.onset_s).abs() <= 0.032 + 1e-12);
                prop_assert!((d.offset_s - r.offset_s).abs() <= 0.032 + 1e-12);
            }
        }
    }
}
