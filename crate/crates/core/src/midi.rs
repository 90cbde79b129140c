//! Standard MIDI File reading/writing, sustain-pedal translation, and
//! velocity normalization.
//!
//! Parsing resolves note-on/note-off pairs to seconds through the tempo map
//! and reports sustain-pedal (CC64) state changes separately; pedal
//! translation into longer note durations is a second, explicit step
//! ([`apply_sustain`]) so labels and metrics can choose either view.

use crate::types::{NoteEvent, NoteSequence, Pitch, TypeError, PITCH_MAX, PITCH_MIN};
use std::collections::HashMap;
use thiserror::Error;

/// CC64 values at or above this mean "pedal down".
const SUSTAIN_ON_THRESHOLD: u8 = 64;

/// Fixed output timing: 120 BPM at 220 ticks per quarter = 440 ticks/s.
const WRITE_TICKS_PER_QUARTER: u16 = 220;
const WRITE_TEMPO_USPQ: u32 = 500_000;
const WRITE_TICKS_PER_SECOND: f64 = 440.0;

#[derive(Debug, Error)]
pub enum MidiError {
    #[error("malformed MIDI at byte {offset}: {detail}")]
    Malformed { offset: usize, detail: String },
    #[error("SMPTE time division is not supported")]
    SmpteTimecode,
    #[error("unsupported SMF format {0} (only type 0 and 1)")]
    UnsupportedFormat(u16),
    #[error("empty sequence")]
    EmptySequence,
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// Non-fatal conditions encountered while parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MidiWarning {
    /// Note-on never closed; the note was ended at the final event time.
    DanglingNoteOn { pitch: u8, channel: u8 },
    /// Notes outside the 88-key range are dropped.
    PitchOutOfRange { pitch: u8, count: usize },
    /// Note with no positive duration after resolution; dropped.
    ZeroDurationNote { pitch: u8 },
    /// Note-off without a matching note-on; ignored.
    OrphanNoteOff { pitch: u8, channel: u8 },
    /// Same-pitch overlap in the input; the earlier note was truncated.
    TruncatedOverlap { pitch: u8 },
}

impl std::fmt::Display for MidiWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MidiWarning::DanglingNoteOn { pitch, channel } => {
                write!(
                    f,
                    "dangling note-on (pitch {pitch}, channel {channel}) closed at end of file"
                )
            }
            MidiWarning::PitchOutOfRange { pitch, count } => {
                write!(
                    f,
                    "dropped {count} note(s) at pitch {pitch} outside the 88-key range"
                )
            }
            MidiWarning::ZeroDurationNote { pitch } => {
                write!(f, "dropped zero-duration note at pitch {pitch}")
            }
            MidiWarning::OrphanNoteOff { pitch, channel } => {
                write!(
                    f,
                    "ignored note-off with no open note (pitch {pitch}, channel {channel})"
                )
            }
            MidiWarning::TruncatedOverlap { pitch } => {
                write!(f, "truncated overlapping note at pitch {pitch}")
            }
        }
    }
}

/// Sustain-pedal state change, already thresholded (CC64 >= 64 is "on").
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PedalEvent {
    pub time_s: f64,
    pub on: bool,
}

/// Result of [`parse_midi`]: notes without sustain applied, the pedal
/// timeline, and any warnings.
#[derive(Debug)]
pub struct MidiParse {
    pub sequence: NoteSequence,
    pub pedal: Vec<PedalEvent>,
    pub warnings: Vec<MidiWarning>,
}

// ---------------------------------------------------------------------------
// raw event layer

#[derive(Debug, Clone, Copy)]
enum RawEventKind {
    NoteOn { pitch: u8, velocity: u8 },
    NoteOff { pitch: u8 },
    Sustain { value: u8 },
}

#[derive(Debug, Clone, Copy)]
struct RawEvent {
    tick: u64,
    channel: u8,
    kind: RawEventKind,
}

/// All tracks merged: tick-ordered events plus the tempo map.
#[derive(Debug)]
struct RawMidiTrack {
    ticks_per_quarter: u16,
    events: Vec<RawEvent>,
    /// (tick, microseconds per quarter); non-empty, starts at tick 0.
    tempo: Vec<(u64, u32)>,
    final_tick: u64,
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    fn malformed(&self, detail: impl Into<String>) -> MidiError {
        MidiError::Malformed {
            offset: self.pos,
            detail: detail.into(),
        }
    }

    fn u8(&mut self) -> Result<u8, MidiError> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| self.malformed("unexpected end of file"))?;
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16, MidiError> {
        Ok(u16::from_be_bytes([self.u8()?, self.u8()?]))
    }

    fn u32(&mut self) -> Result<u32, MidiError> {
        Ok(u32::from_be_bytes([
            self.u8()?,
            self.u8()?,
            self.u8()?,
            self.u8()?,
        ]))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.malformed(format!("chunk runs past end of file ({n} bytes)")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn vlq(&mut self) -> Result<u32, MidiError> {
        let mut value: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | u32::from(b & 0x7F);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(self.malformed("variable-length quantity longer than 4 bytes"))
    }
}

fn parse_raw(bytes: &[u8]) -> Result<RawMidiTrack, MidiError> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4)?;
    if magic != b"MThd" {
        return Err(MidiError::Malformed {
            offset: 0,
            detail: "missing MThd header".into(),
        });
    }
    let header_len = r.u32()? as usize;
    if header_len < 6 {
        return Err(r.malformed(format!("header length {header_len} < 6")));
    }
    let format = r.u16()?;
    if format > 1 {
        return Err(MidiError::UnsupportedFormat(format));
    }
    let n_tracks = r.u16()?;
    let division = r.u16()?;
    if division & 0x8000 != 0 {
        return Err(MidiError::SmpteTimecode);
    }
    if division == 0 {
        return Err(r.malformed("ticks-per-quarter of zero"));
    }
    r.take(header_len - 6)?;

    let mut events = Vec::new();
    let mut tempo_events: Vec<(u64, u32)> = Vec::new();
    let mut final_tick = 0u64;

    for _ in 0..n_tracks {
        let tag = r.take(4)?;
        if tag != b"MTrk" {
            return Err(MidiError::Malformed {
                offset: r.pos - 4,
                detail: "missing MTrk chunk tag".into(),
            });
        }
        let track_len = r.u32()? as usize;
        let track_end = r
            .pos
            .checked_add(track_len)
            .filter(|&e| e <= r.bytes.len())
            .ok_or_else(|| r.malformed("track length runs past end of file"))?;

        let mut tick: u64 = 0;
        let mut running_status: Option<u8> = None;
        while r.pos < track_end {
            tick += u64::from(r.vlq()?);
            let first = r.u8()?;
            let status = if first & 0x80 != 0 {
                if first < 0xF0 {
                    running_status = Some(first);
                }
                first
            } else {
                // running status: first is already a data byte
                r.pos -= 1;
                running_status.ok_or_else(|| r.malformed("data byte with no running status"))?
            };

            match status & 0xF0 {
                0x80 | 0x90 | 0xA0 | 0xB0 | 0xE0 => {
                    let d1 = r.u8()?;
                    let d2 = r.u8()?;
                    if d1 & 0x80 != 0 || d2 & 0x80 != 0 {
                        return Err(r.malformed("data byte with high bit set"));
                    }
                    let channel = status & 0x0F;
                    match status & 0xF0 {
                        0x90 if d2 > 0 => events.push(RawEvent {
                            tick,
                            channel,
                            kind: RawEventKind::NoteOn {
                                pitch: d1,
                                velocity: d2,
                            },
                        }),
                        // note-on with velocity 0 is a note-off
                        0x80 | 0x90 => events.push(RawEvent {
                            tick,
                            channel,
                            kind: RawEventKind::NoteOff { pitch: d1 },
                        }),
                        0xB0 if d1 == 64 => events.push(RawEvent {
                            tick,
                            channel,
                            kind: RawEventKind::Sustain { value: d2 },
                        }),
                        _ => {}
                    }
                }
                0xC0 | 0xD0 => {
                    let d1 = r.u8()?;
                    if d1 & 0x80 != 0 {
                        return Err(r.malformed("data byte with high bit set"));
                    }
                }
                0xF0 => match status {
                    0xFF => {
                        running_status = None;
                        let meta_type = r.u8()?;
                        let len = r.vlq()? as usize;
                        let data = r.take(len)?;
                        if meta_type == 0x51 {
                            if data.len() != 3 {
                                return Err(r.malformed("tempo meta event not 3 bytes"));
                            }
                            let uspq = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                            tempo_events.push((tick, uspq.max(1)));
                        }
                        if meta_type == 0x2F {
                            final_tick = final_tick.max(tick);
                            r.pos = track_end;
                            break;
                        }
                    }
                    0xF0 | 0xF7 => {
                        running_status = None;
                        let len = r.vlq()? as usize;
                        r.take(len)?;
                    }
                    other => {
                        return Err(r.malformed(format!("unsupported status byte {other:#04x}")));
                    }
                },
                _ => unreachable!(),
            }
            final_tick = final_tick.max(tick);
        }
        r.pos = track_end;
    }

    events.sort_by_key(|e| e.tick);
    tempo_events.sort_by_key(|&(t, _)| t);
    let mut tempo = Vec::with_capacity(tempo_events.len() + 1);
    if tempo_events.first().map(|&(t, _)| t != 0).unwrap_or(true) {
        tempo.push((0, 500_000));
    }
    for (t, uspq) in tempo_events {
        if tempo.last().map(|&(lt, _)| lt == t).unwrap_or(false) {
            tempo.last_mut().unwrap().1 = uspq;
        } else {
            tempo.push((t, uspq));
        }
    }

    Ok(RawMidiTrack {
        ticks_per_quarter: division,
        events,
        tempo,
        final_tick,
    })
}

/// Piecewise-linear tick-to-seconds conversion over the tempo map.
struct TempoMap {
    /// (tick, seconds at tick, microseconds per quarter from tick on)
    segments: Vec<(u64, f64, u32)>,
    ticks_per_quarter: f64,
}

impl TempoMap {
    fn new(raw: &RawMidiTrack) -> Self {
        let tpq = f64::from(raw.ticks_per_quarter);
        let mut segments = Vec::with_capacity(raw.tempo.len());
        let mut time = 0.0;
        let mut prev_tick = 0u64;
        let mut prev_uspq = raw.tempo[0].1;
        for &(tick, uspq) in &raw.tempo {
            time += (tick - prev_tick) as f64 * f64::from(prev_uspq) * 1e-6 / tpq;
            segments.push((tick, time, uspq));
            prev_tick = tick;
            prev_uspq = uspq;
        }
        TempoMap {
            segments,
            ticks_per_quarter: tpq,
        }
    }

    fn time_at(&self, tick: u64) -> f64 {
        let idx = match self.segments.binary_search_by_key(&tick, |&(t, _, _)| t) {
            Ok(i) => i,
            Err(i) => i - 1, // segments start at tick 0
        };
        let (seg_tick, seg_time, uspq) = self.segments[idx];
        seg_time + (tick - seg_tick) as f64 * f64::from(uspq) * 1e-6 / self.ticks_per_quarter
    }
}

/// Parses an SMF type-0 or type-1 file.
///
/// Notes are resolved to seconds via the tempo map; note-on with velocity 0
/// is treated as note-off; sustain is *not* yet applied. Channel 10
/// (percussion) is ignored; the remaining channels are merged. Same-pitch
/// overlaps are resolved by truncating the earlier note at the later onset.
pub fn parse_midi(bytes: &[u8]) -> Result<MidiParse, MidiError> {
    let raw = parse_raw(bytes)?;
    let tempo = TempoMap::new(&raw);
    let mut warnings = Vec::new();

    let mut open: HashMap<(u8, u8), (u64, u8)> = HashMap::new();
    let mut notes_raw: Vec<(u8, f64, f64, u8)> = Vec::new(); // pitch, on, off, vel
    let mut pedal = Vec::new();
    let mut dropped_pitches: HashMap<u8, usize> = HashMap::new();

    let close = |open_entry: Option<(u64, u8)>,
                 pitch: u8,
                 off_tick: u64,
                 notes_raw: &mut Vec<(u8, f64, f64, u8)>|
     -> bool {
        if let Some((on_tick, velocity)) = open_entry {
            notes_raw.push((
                pitch,
                tempo.time_at(on_tick),
                tempo.time_at(off_tick),
                velocity,
            ));
            true
        } else {
            false
        }
    };

    for ev in &raw.events {
        if ev.channel == 9 {
            continue; // percussion
        }
        match ev.kind {
            RawEventKind::NoteOn { pitch, velocity } => {
                if !(PITCH_MIN..=PITCH_MAX).contains(&pitch) {
                    *dropped_pitches.entry(pitch).or_insert(0) += 1;
                    continue;
                }
                // a second note-on on an open key truncates the first
                if close(
                    open.remove(&(ev.channel, pitch)),
                    pitch,
                    ev.tick,
                    &mut notes_raw,
                ) {
                    warnings.push(MidiWarning::TruncatedOverlap { pitch });
                }
                open.insert((ev.channel, pitch), (ev.tick, velocity));
            }
            RawEventKind::NoteOff { pitch } => {
                if !(PITCH_MIN..=PITCH_MAX).contains(&pitch) {
                    continue;
                }
                if !close(
                    open.remove(&(ev.channel, pitch)),
                    pitch,
                    ev.tick,
                    &mut notes_raw,
                ) {
                    warnings.push(MidiWarning::OrphanNoteOff {
                        pitch,
                        channel: ev.channel,
                    });
                }
            }
            RawEventKind::Sustain { value } => pedal.push(PedalEvent {
                time_s: tempo.time_at(ev.tick),
                on: value >= SUSTAIN_ON_THRESHOLD,
            }),
        }
    }

    // dangling note-ons close at the final event time
    let mut dangling: Vec<_> = open.into_iter().collect();
    dangling.sort_by_key(|&((ch, p), _)| (ch, p));
    for ((channel, pitch), entry) in dangling {
        close(Some(entry), pitch, raw.final_tick, &mut notes_raw);
        warnings.push(MidiWarning::DanglingNoteOn { pitch, channel });
    }

    for (pitch, count) in {
        let mut v: Vec<_> = dropped_pitches.into_iter().collect();
        v.sort_unstable();
        v
    } {
        warnings.push(MidiWarning::PitchOutOfRange { pitch, count });
    }

    // resolve cross-channel same-pitch overlaps: earlier note truncated
    notes_raw.sort_by(|a, b| (a.1, a.0).partial_cmp(&(b.1, b.0)).unwrap());
    let mut last_open_per_pitch: HashMap<u8, usize> = HashMap::new();
    let mut truncations: Vec<(usize, f64)> = Vec::new();
    for i in 0..notes_raw.len() {
        let (pitch, onset, _, _) = notes_raw[i];
        if let Some(&j) = last_open_per_pitch.get(&pitch) {
            if notes_raw[j].2 > onset {
                truncations.push((j, onset));
                warnings.push(MidiWarning::TruncatedOverlap { pitch });
            }
        }
        last_open_per_pitch.insert(pitch, i);
    }
    for (j, new_offset) in truncations {
        notes_raw[j].2 = new_offset;
    }

    let mut max_time = tempo.time_at(raw.final_tick);
    let mut notes = Vec::with_capacity(notes_raw.len());
    for (pitch, onset, offset, velocity) in notes_raw {
        if offset <= onset {
            warnings.push(MidiWarning::ZeroDurationNote { pitch });
            continue;
        }
        max_time = max_time.max(offset);
        notes.push(NoteEvent::new(
            Pitch::from_midi(pitch)?,
            onset,
            offset,
            velocity,
        )?);
    }

    let sequence = NoteSequence::from_unsorted(notes, max_time)?;
    Ok(MidiParse {
        sequence,
        pedal,
        warnings,
    })
}

/// Translates sustain-pedal state into longer note durations.
///
/// A note active when sustain goes down, or starting while sustain is held,
/// is extended to the earliest of: the pedal release, the next onset of the
/// same pitch, or the end of the piece. Notes are never shortened; onsets
/// and velocities are untouched.
pub fn apply_sustain(seq: &NoteSequence, pedal: &[PedalEvent]) -> NoteSequence {
    let duration = seq.duration_s();
    let intervals = pedal_intervals(pedal, duration);
    if intervals.is_empty() || seq.is_empty() {
        return seq.clone();
    }

    // next onset of the same pitch, by original onsets
    let notes = seq.notes();
    let mut next_same_pitch = vec![f64::INFINITY; notes.len()];
    let mut last_seen: HashMap<u8, usize> = HashMap::new();
    for (i, n) in notes.iter().enumerate() {
        if let Some(&j) = last_seen.get(&n.pitch.midi_number()) {
            next_same_pitch[j] = n.onset_s;
        }
        last_seen.insert(n.pitch.midi_number(), i);
    }

    let mut out = Vec::with_capacity(notes.len());
    for (i, n) in notes.iter().enumerate() {
        let mut offset = n.offset_s;
        for &(on_t, off_t) in &intervals {
            let active_at_pedal_down = n.onset_s <= on_t && on_t < offset;
            let starts_while_held = on_t <= n.onset_s && n.onset_s < off_t;
            if active_at_pedal_down || starts_while_held {
                let target = off_t.min(next_same_pitch[i]).min(duration);
                offset = offset.max(target);
            }
        }
        out.push(NoteEvent {
            offset_s: offset,
            ..*n
        });
    }

    NoteSequence::new(out, duration).expect("extension preserves ordering and exclusivity")
}

/// Collapses pedal events into half-open `[down, up)` intervals, clamped to
/// `[0, duration]`. A trailing pedal-down holds to the end of the piece.
fn pedal_intervals(pedal: &[PedalEvent], duration: f64) -> Vec<(f64, f64)> {
    let mut intervals = Vec::new();
    let mut down_at: Option<f64> = None;
    for ev in pedal {
        let t = ev.time_s.clamp(0.0, duration);
        match (ev.on, down_at) {
            (true, None) => down_at = Some(t),
            (false, Some(start)) => {
                if t > start {
                    intervals.push((start, t));
                }
                down_at = None;
            }
            _ => {}
        }
    }
    if let Some(start) = down_at {
        if duration > start {
            intervals.push((start, duration));
        }
    }
    intervals
}

/// Velocities divided by the maximum velocity in the piece.
///
/// Every output lies in `(0, 1]` and at least one equals exactly 1.0.
pub fn normalize_velocities(seq: &NoteSequence) -> Result<Vec<f64>, MidiError> {
    if seq.is_empty() {
        return Err(MidiError::EmptySequence);
    }
    let v_max = seq
        .notes()
        .iter()
        .map(|n| n.velocity)
        .max()
        .expect("non-empty");
    Ok(seq
        .notes()
        .iter()
        .map(|n| f64::from(n.velocity) / f64::from(v_max))
        .collect())
}

fn push_vlq(out: &mut Vec<u8>, value: u32) {
    let mut buf = [0u8; 4];
    let mut n = 0;
    let mut v = value;
    loop {
        buf[n] = (v & 0x7F) as u8;
        v >>= 7;
        n += 1;
        if v == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        let mut b = buf[i];
        if i > 0 {
            b |= 0x80;
        }
        out.push(b);
    }
}

/// Writes an SMF type-0 file at a fixed 120 BPM with 220 ticks per quarter.
///
/// `parse_midi(write_midi(s))` reproduces pitches and velocities exactly and
/// times to within one tick (~2.3 ms). Sub-tick notes are stretched to one
/// tick so the on/off pair survives the round trip.
pub fn write_midi(seq: &NoteSequence) -> Vec<u8> {
    // kind 0 = note-off, 1 = note-on; offs sort first at equal ticks so a
    // repeated pitch closes before it reopens
    let mut events: Vec<(u64, u8, u8, u8)> = Vec::with_capacity(seq.len() * 2);
    for n in seq.notes() {
        let on_tick = (n.onset_s * WRITE_TICKS_PER_SECOND).round() as u64;
        let off_tick = ((n.offset_s * WRITE_TICKS_PER_SECOND).round() as u64).max(on_tick + 1);
        events.push((on_tick, 1, n.pitch.midi_number(), n.velocity));
        events.push((off_tick, 0, n.pitch.midi_number(), 0));
    }
    events.sort_by_key(|&(tick, kind, pitch, _)| (tick, kind, pitch));

    let mut track = Vec::new();
    // tempo meta at tick 0
    push_vlq(&mut track, 0);
    track.extend_from_slice(&[0xFF, 0x51, 0x03]);
    track.extend_from_slice(&WRITE_TEMPO_USPQ.to_be_bytes()[1..]);

    let mut prev_tick = 0u64;
    for (tick, kind, pitch, velocity) in events {
        push_vlq(&mut track, (tick - prev_tick) as u32);
        prev_tick = tick;
        match kind {
            1 => track.extend_from_slice(&[0x90, pitch, velocity]),
            _ => track.extend_from_slice(&[0x80, pitch, 0]),
        }
    }
    // end of track
    push_vlq(&mut track, 0);
    track.extend_from_slice(&[0xFF, 0x2F, 0x00]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes()); // format 0
    out.extend_from_slice(&1u16.to_be_bytes()); // one track
    out.extend_from_slice(&WRITE_TICKS_PER_QUARTER.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pitch(n: u8) -> Pitch {
        Pitch::from_midi(n).unwrap()
    }

    fn note(p: u8, on: f64, off: f64, vel: u8) -> NoteEvent {
        NoteEvent::new(pitch(p), on, off, vel).unwrap()
    }

    /// Hand-built SMF: header (format 0, 1 track, given tpq) + one track.
    fn smf(tpq: u16, track: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"MThd");
        out.extend_from_slice(&6u32.to_be_bytes());
        out.extend_from_slice(&0u16.to_be_bytes());
        out.extend_from_slice(&1u16.to_be_bytes());
        out.extend_from_slice(&tpq.to_be_bytes());
        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(track.len() as u32).to_be_bytes());
        out.extend_from_slice(track);
        out
    }

    #[test]
    fn single_note_default_tempo() {
        // note-on (60, vel 64) at tick 0, note-off at tick 480, 480 tpq:
        // 480 ticks = 1 quarter = 0.5 s at the default 500000 us/quarter
        let track = [
            0x00, 0x90, 60, 64, // on
            0x83, 0x60, 0x80, 60, 0, // delta 480 (VLQ 83 60), off
            0x00, 0xFF, 0x2F, 0x00,
        ];
        let parsed = parse_midi(&smf(480, &track)).unwrap();
        assert_eq!(
            parsed.sequence.notes(),
            &[note(60, 0.0, 0.5, 64)],
            "480 ticks at 480 tpq / 500000 uspq is exactly half a second"
        );
        assert!(parsed.warnings.is_empty());
    }

    #[test]
    fn empty_track_parses_to_empty_sequence() {
        let track = [0x00, 0xFF, 0x2F, 0x00];
        let parsed = parse_midi(&smf(480, &track)).unwrap();
        assert!(parsed.sequence.is_empty());
    }

    #[test]
    fn velocity_zero_note_on_acts_as_note_off() {
        let off_track = [
            0x00, 0x90, 60, 64, 0x60, 0x80, 60, 0, 0x00, 0xFF, 0x2F, 0x00,
        ];
        let vel0_track = [
            0x00, 0x90, 60, 64, 0x60, 0x90, 60, 0, 0x00, 0xFF, 0x2F, 0x00,
        ];
        let a = parse_midi(&smf(480, &off_track)).unwrap();
        let b = parse_midi(&smf(480, &vel0_track)).unwrap();
        assert_eq!(a.sequence, b.sequence);
    }

    #[test]
    fn running_status_supported() {
        // two notes sharing one 0x90 status byte
        let track = [
            0x00, 0x90, 60, 64, //
            0x10, 62, 70, // running status note-on
            0x10, 60, 0, // running status off (vel 0)
            0x10, 62, 0, //
            0x00, 0xFF, 0x2F, 0x00,
        ];
        let parsed = parse_midi(&smf(480, &track)).unwrap();
        assert_eq!(parsed.sequence.len(), 2);
    }

    #[test]
    fn tempo_change_scales_later_events() {
        // tempo doubles speed at tick 480; note spans both segments
        let track = [
            0x00, 0x90, 60, 64, //
            0x83, 0x60, 0xFF, 0x51, 0x03, 0x03, 0xD0, 0x90, // 250000 uspq at tick 480
            0x83, 0x60, 0x80, 60, 0, // off at tick 960
            0x00, 0xFF, 0x2F, 0x00,
        ];
        let parsed = parse_midi(&smf(480, &track)).unwrap();
        let n = parsed.sequence.notes()[0];
        assert!((n.onset_s - 0.0).abs() < 1e-12);
        assert!((n.offset_s - 0.75).abs() < 1e-12, "0.5 s + 0.25 s");
    }

    #[test]
    fn format_1_merges_tracks_and_uses_shared_tempo() {
        // track 0: tempo only (250000 us/quarter); tracks 1-2: one note each
        let tempo_track = [
            0x00, 0xFF, 0x51, 0x03, 0x03, 0xD0, 0x90, 0x00, 0xFF, 0x2F, 0x00,
        ];
        let note_track_a = [
            0x00, 0x90, 60, 64, 0x83, 0x60, 0x80, 60, 0, 0x00, 0xFF, 0x2F, 0x00,
        ];
        let note_track_b = [
            0x00, 0x91, 64, 70, 0x83, 0x60, 0x81, 64, 0, 0x00, 0xFF, 0x2F, 0x00,
        ];
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MThd");
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&1u16.to_be_bytes());
        bytes.extend_from_slice(&3u16.to_be_bytes());
        bytes.extend_from_slice(&480u16.to_be_bytes());
        for track in [&tempo_track[..], &note_track_a[..], &note_track_b[..]] {
            bytes.extend_from_slice(b"MTrk");
            bytes.extend_from_slice(&(track.len() as u32).to_be_bytes());
            bytes.extend_from_slice(track);
        }
        let parsed = parse_midi(&bytes).unwrap();
        assert_eq!(parsed.sequence.len(), 2);
        for n in parsed.sequence.notes() {
            assert!(
                (n.offset_s - 0.25).abs() < 1e-12,
                "480 ticks at 250000 uspq"
            );
        }
    }

    #[test]
    fn dangling_note_on_closes_at_final_event() {
        let track = [
            0x00, 0x90, 60, 64, //
            0x83, 0x60, 0x90, 62, 64, // second note-on at tick 480
            0x83, 0x60, 0x80, 62, 0, // off for 62 at tick 960
            0x00, 0xFF, 0x2F, 0x00,
        ];
        let parsed = parse_midi(&smf(480, &track)).unwrap();
        assert!(parsed
            .warnings
            .iter()
            .any(|w| matches!(w, MidiWarning::DanglingNoteOn { pitch: 60, .. })));
        let n = parsed
            .sequence
            .notes()
            .iter()
            .find(|n| n.pitch.midi_number() == 60)
            .unwrap();
        assert!((n.offset_s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_pitches_dropped_with_warning() {
        let track = [
            0x00, 0x90, 15, 64, //
            0x10, 0x80, 15, 0, //
            0x00, 0xFF, 0x2F, 0x00,
        ];
        let parsed = parse_midi(&smf(480, &track)).unwrap();
        assert!(parsed.sequence.is_empty());
        assert!(parsed.warnings.iter().any(|w| matches!(
            w,
            MidiWarning::PitchOutOfRange {
                pitch: 15,
                count: 1
            }
        )));
    }

    #[test]
    fn percussion_channel_ignored() {
        let track = [
            0x00, 0x99, 60, 64, // channel 10
            0x10, 0x89, 60, 0, //
            0x00, 0xFF, 0x2F, 0x00,
        ];
        let parsed = parse_midi(&smf(480, &track)).unwrap();
        assert!(parsed.sequence.is_empty());
    }

    #[test]
    fn sustain_events_thresholded_at_64() {
        let track = [
            0x00, 0xB0, 64, 127, //
            0x10, 0xB0, 64, 63, //
            0x10, 0xB0, 64, 64, //
            0x00, 0xFF, 0x2F, 0x00,
        ];
        let parsed = parse_midi(&smf(480, &track)).unwrap();
        let states: Vec<bool> = parsed.pedal.iter().map(|p| p.on).collect();
        assert_eq!(states, vec![true, false, true]);
    }

    #[test]
    fn malformed_header_reports_offset() {
        let err = parse_midi(b"MThX rest").unwrap_err();
        assert!(matches!(err, MidiError::Malformed { offset: 0, .. }));
        let err = parse_midi(b"MT").unwrap_err();
        assert!(matches!(err, MidiError::Malformed { .. }));
    }

    #[test]
    fn sustain_extends_to_pedal_release() {
        let seq = NoteSequence::new(vec![note(60, 1.0, 2.0, 64)], 5.0).unwrap();
        let pedal = [
            PedalEvent {
                time_s: 1.5,
                on: true,
            },
            PedalEvent {
                time_s: 4.0,
                on: false,
            },
        ];
        let out = apply_sustain(&seq, &pedal);
        assert_eq!(out.notes(), &[note(60, 1.0, 4.0, 64)]);
    }

    #[test]
    fn sustain_cut_by_same_pitch_replay() {
        let seq =
            NoteSequence::new(vec![note(60, 1.0, 2.0, 64), note(60, 3.0, 3.5, 80)], 5.0).unwrap();
        let pedal = [PedalEvent {
            time_s: 1.5,
            on: true,
        }];
        let out = apply_sustain(&seq, &pedal);
        assert_eq!(out.notes()[0], note(60, 1.0, 3.0, 64));
        // the replayed note is itself held to the end of the piece
        assert_eq!(out.notes()[1], note(60, 3.0, 5.0, 80));
    }

    #[test]
    fn no_pedal_is_identity() {
        let seq = NoteSequence::new(vec![note(60, 1.0, 2.0, 64)], 5.0).unwrap();
        assert_eq!(apply_sustain(&seq, &[]), seq);
    }

    #[test]
    fn pedal_after_note_release_does_not_extend() {
        let seq = NoteSequence::new(vec![note(60, 1.0, 2.0, 64)], 5.0).unwrap();
        let pedal = [
            PedalEvent {
                time_s: 2.5,
                on: true,
            },
            PedalEvent {
                time_s: 4.0,
                on: false,
            },
        ];
        assert_eq!(apply_sustain(&seq, &pedal), seq);
    }

    #[test]
    fn normalize_velocity_examples() {
        let seq =
            NoteSequence::new(vec![note(60, 0.0, 1.0, 40), note(62, 0.0, 1.0, 80)], 1.0).unwrap();
        assert_eq!(normalize_velocities(&seq).unwrap(), vec![0.5, 1.0]);

        let single = NoteSequence::new(vec![note(60, 0.0, 1.0, 100)], 1.0).unwrap();
        assert_eq!(normalize_velocities(&single).unwrap(), vec![1.0]);

        let uniform = NoteSequence::new(
            vec![
                note(60, 0.0, 1.0, 64),
                note(62, 0.0, 1.0, 64),
                note(64, 0.0, 1.0, 64),
            ],
            1.0,
        )
        .unwrap();
        assert_eq!(normalize_velocities(&uniform).unwrap(), vec![1.0, 1.0, 1.0]);

        assert!(matches!(
            normalize_velocities(&NoteSequence::empty()),
            Err(MidiError::EmptySequence)
        ));
    }

    #[test]
    fn write_empty_sequence_is_valid_smf() {
        let bytes = write_midi(&NoteSequence::empty());
        let parsed = parse_midi(&bytes).unwrap();
        assert!(parsed.sequence.is_empty());
    }

    #[test]
    fn single_note_round_trip_within_one_tick() {
        let tick = 1.0 / 440.0;
        let seq = NoteSequence::new(vec![note(60, 0.1234, 0.9876, 77)], 2.0).unwrap();
        let back = parse_midi(&write_midi(&seq)).unwrap().sequence;
        assert_eq!(back.len(), 1);
        let n = back.notes()[0];
        assert_eq!(n.pitch.midi_number(), 60);
        assert_eq!(n.velocity, 77);
        assert!((n.onset_s - 0.1234).abs() <= tick);
        assert!((n.offset_s - 0.9876).abs() <= tick);
    }

    prop_compose! {
        fn arb_sequence(max_notes: usize)(
            raw in prop::collection::vec(
                (21u8..=108, 0.0f64..20.0, 0.01f64..2.0, 1u8..=127),
                0..max_notes,
            )
        ) -> NoteSequence {
            // stack same-pitch notes end to end so they never overlap
            let mut by_pitch: HashMap<u8, f64> = HashMap::new();
            let mut notes = Vec::new();
            for (p, onset, dur, vel) in raw {
                let start = by_pitch.get(&p).copied().map_or(onset, |e| e.max(onset));
                let note = NoteEvent::new(pitch(p), start, start + dur, vel).unwrap();
                by_pitch.insert(p, note.offset_s);
                notes.push(note);
            }
            let dur = notes.iter().map(|n| n.offset_s).fold(0.0, f64::max);
            NoteSequence::from_unsorted(notes, dur).unwrap()
        }
    }

    proptest! {
        #[test]
        fn round_trip_preserves_fields(seq in arb_sequence(40)) {
            let back = parse_midi(&write_midi(&seq)).unwrap().sequence;
            prop_assert_eq!(back.len(), seq.len());
            let tick = 1.0 / 440.0;
            // quantization can collapse distinct onsets to the same tick,
            // reordering the (onset, pitch) sort; pair notes by pitch
            let by_pitch = |s: &NoteSequence| {
                let mut v = s.notes().to_vec();
                v.sort_by(|a, b| {
                    (a.pitch, a.onset_s).partial_cmp(&(b.pitch, b.onset_s)).unwrap()
                });
                v
            };
            for (a, b) in by_pitch(&seq).iter().zip(&by_pitch(&back)) {
                prop_assert_eq!(a.pitch, b.pitch);
                prop_assert_eq!(a.velocity, b.velocity);
                prop_assert!((a.onset_s - b.onset_s).abs() <= tick);
                prop_assert!((a.offset_s - b.offset_s).abs() <= tick);
            }
        }

        #[test]
        fn sustain_never_shortens_or_moves_onsets(
            seq in arb_sequence(25),
            pedal_times in prop::collection::vec((0.0f64..22.0, any::<bool>()), 0..12),
        ) {
            let mut pedal: Vec<PedalEvent> = pedal_times
                .into_iter()
                .map(|(t, on)| PedalEvent { time_s: t, on })
                .collect();
            pedal.sort_by(|a, b| a.time_s.partial_cmp(&b.time_s).unwrap());
            let out = apply_sustain(&seq, &pedal);
            prop_assert_eq!(out.len(), seq.len());
            for (a, b) in seq.notes().iter().zip(out.notes()) {
                prop_assert_eq!(a.pitch, b.pitch);
                prop_assert_eq!(a.velocity, b.velocity);
                prop_assert_eq!(a.onset_s, b.onset_s);
                prop_assert!(b.offset_s >= a.offset_s);
            }
            // same-pitch exclusivity still holds (NoteSequence::new checked it,
            // but assert explicitly against the sorted notes)
            let mut last: HashMap<u8, f64> = HashMap::new();
            for n in out.notes() {
                if let Some(&prev_off) = last.get(&n.pitch.midi_number()) {
                    prop_assert!(n.onset_s >= prev_off);
                }
                last.insert(n.pitch.midi_number(), n.offset_s);
            }
        }

        #[test]
        fn normalized_velocities_max_is_one(seq in arb_sequence(30)) {
            prop_assume!(!seq.is_empty());
            let v = normalize_velocities(&seq).unwrap();
            let max = v.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(max, 1.0);
            prop_assert!(v.iter().all(|&x| x > 0.0 && x <= 1.0));
        }
    }
}
