//! The log-mel spectrogram input representation and training-time audio
//! splitting.
//!
//! Fixed analysis parameters: 16 kHz audio, 2048-point FFT, 512-sample hop,
//! Hann window, reflect-centered framing, and a 229-band Slaney-style mel
//! filterbank from 30 Hz to 8 kHz. Log amplitude uses a 1e-5 floor.

use crate::types::{FrameGrid, NoteSequence};
use crate::wav::WavFile;
use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};
use thiserror::Error;

pub const FFT_SIZE: usize = 2048;
pub const HOP_LENGTH: usize = 512;
pub const SAMPLE_RATE: u32 = 16_000;
pub const MEL_BINS: usize = 229;
pub const MEL_FMIN_HZ: f64 = 30.0;
pub const MEL_FMAX_HZ: f64 = 8_000.0;
pub const LOG_FLOOR: f64 = 1e-5;

const FFT_BINS: usize = FFT_SIZE / 2 + 1;

#[derive(Debug, Error, PartialEq)]
pub enum FrontendError {
    #[error("empty audio")]
    EmptyAudio,
    #[error("audio is at {0} Hz; resample to 16 kHz first")]
    WrongSampleRate(u32),
}

/// Mono audio in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        AudioBuffer {
            samples,
            sample_rate,
        }
    }

    /// Mono-mixes a decoded WAV and resamples it to 16 kHz.
    pub fn from_wav(wav: &WavFile) -> Self {
        let mono = wav.mono_f64();
        if wav.sample_rate == SAMPLE_RATE {
            return AudioBuffer::new(mono, SAMPLE_RATE);
        }
        AudioBuffer::new(resample(&mono, wav.sample_rate, SAMPLE_RATE), SAMPLE_RATE)
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Windowed-sinc resampler (64 taps, Hann-windowed, DC-normalized).
pub fn resample(input: &[f64], from_rate: u32, to_rate: u32) -> Vec<f64> {
    assert!(from_rate > 0 && to_rate > 0);
    if from_rate == to_rate || input.is_empty() {
        return input.to_vec();
    }
    const HALF_TAPS: isize = 32;
    let step = f64::from(from_rate) / f64::from(to_rate);
    let cutoff = (f64::from(to_rate) / f64::from(from_rate)).min(1.0);
    let out_len =
        ((input.len() as u64 * u64::from(to_rate)).div_ceil(u64::from(from_rate))) as usize;

    let sinc = |x: f64| -> f64 {
        if x.abs() < 1e-12 {
            1.0
        } else {
            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
        }
    };

    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let center = n as f64 * step;
        let j0 = center.floor() as isize;
        let mut acc = 0.0;
        let mut kernel_sum = 0.0;
        for j in (j0 - HALF_TAPS + 1)..=(j0 + HALF_TAPS) {
            let x = center - j as f64;
            let window = 0.5 * (1.0 + (std::f64::consts::PI * x / HALF_TAPS as f64).cos());
            let w = cutoff * sinc(cutoff * x) * window;
            kernel_sum += w;
            if (0..input.len() as isize).contains(&j) {
                acc += input[j as usize] * w;
            }
        }
        out.push(if kernel_sum.abs() > 1e-12 {
            acc / kernel_sum
        } else {
            acc
        });
    }
    out
}

/// Mirror indexing without repeating the edge sample.
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= len as isize {
        k = period - k;
    }
    k as usize
}

fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Magnitude STFT: `ceil(len / 512)` frames by 1025 bins, frame `i` centered
/// at sample `i * 512` with reflect padding.
pub fn stft_magnitude(audio: &AudioBuffer) -> Result<Array2<f64>, FrontendError> {
    if audio.samples.is_empty() {
        return Err(FrontendError::EmptyAudio);
    }
    let samples = &audio.samples;
    let n_frames = samples.len().div_ceil(HOP_LENGTH);
    let window = hann_window(FFT_SIZE);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FFT_SIZE);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];

    let mut out = Array2::zeros((n_frames, FFT_BINS));
    let mut buf = vec![Complex::default(); FFT_SIZE];
    let half = (FFT_SIZE / 2) as isize;
    for frame in 0..n_frames {
        let center = (frame * HOP_LENGTH) as isize;
        for (i, w) in window.iter().enumerate() {
            let src = reflect_index(center - half + i as isize, samples.len());
            buf[i] = Complex::new(samples[src] * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, v) in buf.iter().take(FFT_BINS).enumerate() {
            out[[frame, k]] = v.norm();
        }
    }
    Ok(out)
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1_000.0;
    const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / (6.4f64.ln() / 27.0)
    } else {
        hz / F_SP
    }
}

fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_MEL: f64 = 15.0;
    if mel >= MIN_LOG_MEL {
        1_000.0 * ((mel - MIN_LOG_MEL) * (6.4f64.ln() / 27.0)).exp()
    } else {
        F_SP * mel
    }
}

/// 229 x 1025 triangular filterbank on the mel scale, area-normalized so
/// filter peaks are `2 / (upper - lower)`.
pub fn mel_filterbank() -> Array2<f64> {
    let mel_lo = hz_to_mel(MEL_FMIN_HZ);
    let mel_hi = hz_to_mel(MEL_FMAX_HZ);
    let band_edges: Vec<f64> = (0..MEL_BINS + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (MEL_BINS + 1) as f64))
        .collect();

    let bin_hz = f64::from(SAMPLE_RATE) / FFT_SIZE as f64;
    let mut fb = Array2::zeros((MEL_BINS, FFT_BINS));
    for m in 0..MEL_BINS {
        let (lower, center, upper) = (band_edges[m], band_edges[m + 1], band_edges[m + 2]);
        let enorm = 2.0 / (upper - lower);
        for k in 0..FFT_BINS {
            let f = k as f64 * bin_hz;
            let rising = (f - lower) / (center - lower);
            let falling = (upper - f) / (upper - center);
            let w = rising.min(falling).max(0.0);
            fb[[m, k]] = w * enorm;
        }
    }
    fb
}

/// Log-amplitude mel spectrogram, `T x 229`.
#[derive(Debug, Clone)]
pub struct MelSpectrogram {
    pub grid: FrameGrid,
    pub values: Array2<f64>,
}

/// `ln(filterbank . magnitude + 1e-5)` per frame.
pub fn log_mel(audio: &AudioBuffer) -> Result<MelSpectrogram, FrontendError> {
    if audio.sample_rate != SAMPLE_RATE {
        return Err(FrontendError::WrongSampleRate(audio.sample_rate));
    }
    let magnitude = stft_magnitude(audio)?;
    let fb = mel_filterbank();
    let mel = magnitude.dot(&fb.t());
    let values = mel.mapv(|x| (x + LOG_FLOOR).ln());
    let grid = FrameGrid::new(SAMPLE_RATE, HOP_LENGTH as u32, values.nrows());
    Ok(MelSpectrogram { grid, values })
}

/// Intervals with no active notes, as `[start, end)` within `[0, duration]`.
fn silent_gaps(seq: &NoteSequence, duration: f64) -> Vec<(f64, f64)> {
    let mut busy: Vec<(f64, f64)> = seq
        .notes()
        .iter()
        .map(|n| (n.onset_s, n.offset_s))
        .collect();
    busy.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (s, e) in busy {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    let mut gaps = Vec::new();
    let mut cursor = 0.0;
    for (s, e) in merged {
        if s > cursor {
            gaps.push((cursor, s.min(duration)));
        }
        cursor = cursor.max(e);
        if cursor >= duration {
            break;
        }
    }
    if cursor < duration {
        gaps.push((cursor, duration));
    }
    gaps
}

fn nearest_zero_crossing(
    samples: &[f64],
    center: usize,
    min_idx: usize,
    max_idx: usize,
) -> Option<usize> {
    let sign = |x: f64| x >= 0.0;
    let crossing = |k: usize| k + 1 < samples.len() && sign(samples[k]) != sign(samples[k + 1]);
    if min_idx > max_idx {
        return None;
    }
    let center = center.clamp(min_idx, max_idx);
    let reach = (center - min_idx).max(max_idx - center);
    for d in 0..=reach {
        if center >= min_idx + d && crossing(center - d) {
            return Some(center - d);
        }
        if center + d <= max_idx && crossing(center + d) {
            return Some(center + d);
        }
    }
    None
}

/// Split points approximately every `target_s` seconds.
///
/// Each split prefers the nearest silent gap (no active notes) within
/// +/-1 s of the target; otherwise it lands on the zero crossing nearest
/// the target. Returned sample indices are strictly increasing and at
/// least one second away from either end of the piece. Audio no longer
/// than the target yields no splits.
pub fn find_splits(audio: &AudioBuffer, seq: &NoteSequence, target_s: f64) -> Vec<usize> {
    assert!(target_s > 0.0);
    let sr = f64::from(audio.sample_rate);
    let duration = audio.duration_s();
    if duration <= target_s {
        return Vec::new();
    }
    let gaps = silent_gaps(seq, duration);
    let min_idx = sr.ceil() as usize;
    let max_idx = ((duration - 1.0) * sr).floor() as usize;

    let mut splits: Vec<usize> = Vec::new();
    let mut k = 1usize;
    loop {
        let target = k as f64 * target_s;
        k += 1;
        if target > duration - 1.0 {
            break;
        }
        let lo = (target - 1.0).max(1.0);
        let hi = (target + 1.0).min(duration - 1.0);

        // nearest reachable point of any silent gap inside the window
        let gap_point = gaps
            .iter()
            .filter_map(|&(gs, ge)| {
                let reach_lo = gs.max(lo);
                let reach_hi = (ge - 1.0 / sr).min(hi);
                (reach_lo <= reach_hi).then(|| target.clamp(reach_lo, reach_hi))
            })
            .min_by(|a, b| (a - target).abs().partial_cmp(&(b - target).abs()).unwrap());

        let idx = match gap_point {
            Some(t) => (t * sr).round() as usize,
            None => {
                let center = (target * sr).round() as usize;
                nearest_zero_crossing(&audio.samples, center, min_idx, max_idx)
                    .unwrap_or(center.clamp(min_idx, max_idx))
            }
        };
        let idx = idx.clamp(min_idx, max_idx);
        if splits.last().is_none_or(|&prev| idx > prev) {
            splits.push(idx);
        }
    }
    splits
}
