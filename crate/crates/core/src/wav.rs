//! PCM WAV reading and writing.
//!
//! Supports 16-bit integer and 32-bit IEEE float samples, mono or stereo
//! (any channel count reads fine; channels are averaged when a mono view is
//! requested). Unknown RIFF chunks are skipped.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed WAV at byte {offset}: {detail}")]
    Malformed { offset: usize, detail: String },
    #[error("unsupported WAV: {0}")]
    Unsupported(String),
}

/// Interleaved sample payload in its on-disk representation.
#[derive(Debug, Clone, PartialEq)]
pub enum WavData {
    I16(Vec<i16>),
    F32(Vec<f32>),
}

impl WavData {
    pub fn len(&self) -> usize {
        match self {
            WavData::I16(v) => v.len(),
            WavData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WavFile {
    pub sample_rate: u32,
    pub channels: u16,
    pub data: WavData,
}

impl WavFile {
    /// Frames per channel.
    pub fn n_frames(&self) -> usize {
        self.data.len() / self.channels as usize
    }

    /// Channel-averaged samples scaled into `[-1, 1]`.
    pub fn mono_f64(&self) -> Vec<f64> {
        let ch = self.channels as usize;
        let frame_value = |frame: usize| -> f64 {
            let mut acc = 0.0;
            for c in 0..ch {
                acc += match &self.data {
                    WavData::I16(v) => f64::from(v[frame * ch + c]) / 32768.0,
                    WavData::F32(v) => f64::from(v[frame * ch + c]),
                };
            }
            acc / ch as f64
        };
        (0..self.n_frames()).map(frame_value).collect()
    }
}

pub fn read_wav(bytes: &[u8]) -> Result<WavFile, WavError> {
    let err = |offset: usize, detail: &str| WavError::Malformed {
        offset,
        detail: detail.to_string(),
    };
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(err(0, "missing RIFF header"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(err(8, "missing WAVE tag"));
    }

    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None; // tag, channels, rate, bits
    let mut data: Option<(usize, usize)> = None; // offset, len
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(err(pos, "chunk runs past end of file"));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(err(pos, "fmt chunk shorter than 16 bytes"));
                }
                let tag = u16::from_le_bytes(bytes[body..body + 2].try_into().unwrap());
                let channels = u16::from_le_bytes(bytes[body + 2..body + 4].try_into().unwrap());
                let rate = u32::from_le_bytes(bytes[body + 4..body + 8].try_into().unwrap());
                let bits = u16::from_le_bytes(bytes[body + 14..body + 16].try_into().unwrap());
                format = Some((tag, channels, rate, bits));
            }
            b"data" => data = Some((body, size)),
            _ => {}
        }
        pos = body + size + (size & 1); // chunks are word-aligned
    }

    let (tag, channels, sample_rate, bits) =
        format.ok_or_else(|| err(bytes.len(), "no fmt chunk"))?;
    if channels == 0 {
        return Err(WavError::Unsupported("zero channels".into()));
    }
    let (data_off, data_len) = data.ok_or_else(|| err(bytes.len(), "no data chunk"))?;
    let payload = &bytes[data_off..data_off + data_len];

    let data = match (tag, bits) {
        (1, 16) => WavData::I16(
            payload
                .chunks_exact(2)
                .map(|b| i16::from_le_bytes([b[0], b[1]]))
                .collect(),
        ),
        (3, 32) => WavData::F32(
            payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        ),
        (tag, bits) => {
            return Err(WavError::Unsupported(format!(
                "format tag {tag} with {bits} bits (PCM16 and float32 only)"
            )))
        }
    };
    Ok(WavFile {
        sample_rate,
        channels,
        data,
    })
}

pub fn read_wav_file<P: AsRef<Path>>(path: P) -> Result<WavFile, WavError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    read_wav(&bytes)
}

pub fn write_wav<W: Write>(
    w: &mut W,
    sample_rate: u32,
    channels: u16,
    data: &WavData,
) -> io::Result<()> {
    let (format_tag, bits): (u16, u16) = match data {
        WavData::I16(_) => (1, 16),
        WavData::F32(_) => (3, 32),
    };
    let bytes_per_sample = u32::from(bits / 8);
    let data_len = data.len() as u32 * bytes_per_sample;
    let block_align = u32::from(channels) * bytes_per_sample;

    w.write_all(b"RIFF")?;
    w.write_all(&(36 + data_len).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&format_tag.to_le_bytes())?;
    w.write_all(&channels.to_le_bytes())?;
    w.write_all(&sample_rate.to_le_bytes())?;
    w.write_all(&(sample_rate * block_align).to_le_bytes())?;
    w.write_all(&(block_align as u16).to_le_bytes())?;
    w.write_all(&bits.to_le_bytes())?;
    w.write_all(b"data")?;
    w.write_all(&data_len.to_le_bytes())?;
    match data {
        WavData::I16(v) => {
            for s in v {
                w.write_all(&s.to_le_bytes())?;
            }
        }
        WavData::F32(v) => {
            for s in v {
                w.write_all(&s.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn write_wav_file<P: AsRef<Path>>(
    path: P,
    sample_rate: u32,
    channels: u16,
    data: &WavData,
) -> io::Result<()> {
    let mut f = io::BufWriter::new(File::create(path)?);
    write_wav(&mut f, sample_rate, channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn i16_round_trip() {
        let samples: Vec<i16> = vec![0, 100, -100, i16::MAX, i16::MIN];
        let mut bytes = Vec::new();
        write_wav(&mut bytes, 16_000, 1, &WavData::I16(samples.clone())).unwrap();
        let back = read_wav(&bytes).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        assert_eq!(back.channels, 1);
        assert_eq!(back.data, WavData::I16(samples));
    }

    #[test]
    fn f32_round_trip() {
        let samples = vec![0.0f32, 0.5, -0.25, 1.0];
        let mut bytes = Vec::new();
        write_wav(&mut bytes, 44_100, 1, &WavData::F32(samples.clone())).unwrap();
        let back = read_wav(&bytes).unwrap();
        assert_eq!(back.data, WavData::F32(samples));
    }

    #[test]
    fn stereo_mono_average() {
        let samples: Vec<i16> = vec![16384, -16384, 8192, 8192];
        let mut bytes = Vec::new();
        write_wav(&mut bytes, 16_000, 2, &WavData::I16(samples)).unwrap();
        let mono = read_wav(&bytes).unwrap().mono_f64();
        assert_eq!(mono.len(), 2);
        assert!((mono[0] - 0.0).abs() < 1e-9);
        assert!((mono[1] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn skips_unknown_chunks() {
        let mut bytes = Vec::new();
        write_wav(&mut bytes, 16_000, 1, &WavData::I16(vec![1, 2, 3])).unwrap();
        // splice a LIST chunk between fmt and data
        let mut spliced = bytes[..36].to_vec();
        spliced.extend_from_slice(b"LIST");
        spliced.extend_from_slice(&4u32.to_le_bytes());
        spliced.extend_from_slice(b"info");
        spliced.extend_from_slice(&bytes[36..]);
        let riff_len = (spliced.len() - 8) as u32;
        spliced[4..8].copy_from_slice(&riff_len.to_le_bytes());
        let back = read_wav(&spliced).unwrap();
        assert_eq!(back.data, WavData::I16(vec![1, 2, 3]));
    }

    #[test]
    fn rejects_garbage_and_unsupported() {
        assert!(matches!(
            read_wav(b"not a wav"),
            Err(WavError::Malformed { offset: 0, .. })
        ));
        // 8-bit PCM is not supported
        let mut bytes = Vec::new();
        write_wav(&mut bytes, 16_000, 1, &WavData::I16(vec![0])).unwrap();
        bytes[34] = 8; // bits-per-sample field
        assert!(matches!(read_wav(&bytes), Err(WavError::Unsupported(_))));
    }
}
