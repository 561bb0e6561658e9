//! WAV file I/O and basic clip surgery.
//!
//! The reader accepts mono or multichannel RIFF/WAVE files holding 16-bit
//! PCM or 32-bit IEEE float samples (including the WAVE_FORMAT_EXTENSIBLE
//! wrapping of either) and mixes channels down to mono by averaging. The
//! writer emits mono PCM16 or float32. Everything else in the crate works on
//! [`AudioClip`]: normalized `f32` samples plus the sample rate and a gain
//! factor that undoes peak normalization on decode.

use std::path::Path;

use crate::error::{Error, Result};

/// Mono audio in memory.
///
/// `samples` are nominally in `[-1, 1]` but are not clamped. `gain` is the
/// factor that restores the original level after [`normalize_peak`]; it is
/// `1.0` for untouched clips and composes across repeated normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub gain: f32,
}

impl AudioClip {
    /// Creates a clip with unit gain. The sample rate must be positive.
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArg("sample rate must be positive".into()));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
            gain: 1.0,
        })
    }

    /// Clip length in seconds.
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Largest absolute sample value (zero for an empty clip).
    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, &s| m.max(s.abs()))
    }
}

/// On-disk sample encodings this crate reads and writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavSampleFormat {
    Pcm16,
    Float32,
}

impl WavSampleFormat {
    /// Stored size of one sample, in bytes.
    pub fn bytes_per_sample(&self) -> u32 {
        match self {
            WavSampleFormat::Pcm16 => 2,
            WavSampleFormat::Float32 => 4,
        }
    }
}

const TAG_PCM: u16 = 1;
const TAG_FLOAT: u16 = 3;
const TAG_EXTENSIBLE: u16 = 0xFFFE;

/// Reads a WAV file and mixes it down to mono. See [`load_wav_with_format`].
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    load_wav_with_format(path).map(|(clip, _)| clip)
}

/// Reads a WAV file, also reporting the sample encoding found on disk.
///
/// Multichannel frames become the per-frame mean of their channels. PCM16
/// values map to float as `v / 32768`; float32 samples pass through
/// unchanged. A trailing partial frame, if any, is ignored.
pub fn load_wav_with_format(path: impl AsRef<Path>) -> Result<(AudioClip, WavSampleFormat)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes)
}

/// Parses WAV bytes already in memory. Exposed for tests.
pub fn parse_wav(bytes: &[u8]) -> Result<(AudioClip, WavSampleFormat)> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::WavFormat("missing RIFF/WAVE header".into()));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12usize;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::WavFormat("chunk extends past end of file".into()))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => fmt = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            _ => {} // LIST, fact, cue, ... are skipped
        }
        // Chunk bodies are padded to even length.
        pos = body_end + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| Error::WavFormat("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::WavFormat("missing data chunk".into()))?;

    let bytes_per_sample = (fmt.bits_per_sample / 8) as usize;
    let frame_bytes = bytes_per_sample * fmt.channels as usize;
    let frames = data.len() / frame_bytes;

    let mut samples = Vec::with_capacity(frames);
    for f in 0..frames {
        let frame = &data[f * frame_bytes..(f + 1) * frame_bytes];
        let mut acc = 0.0f64;
        for c in 0..fmt.channels as usize {
            let s = &frame[c * bytes_per_sample..(c + 1) * bytes_per_sample];
            acc += match fmt.format {
                WavSampleFormat::Pcm16 => {
                    i16::from_le_bytes(s.try_into().unwrap()) as f64 / 32768.0
                }
                WavSampleFormat::Float32 => {
                    f32::from_le_bytes(s.try_into().unwrap()) as f64
                }
            };
        }
        samples.push((acc / fmt.channels as f64) as f32);
    }

    let clip = AudioClip::new(samples, fmt.sample_rate)?;
    Ok((clip, fmt.format))
}

struct FmtChunk {
    format: WavSampleFormat,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk> {
    if body.len() < 16 {
        return Err(Error::WavFormat("fmt chunk shorter than 16 bytes".into()));
    }
    let mut tag = u16::from_le_bytes(body[0..2].try_into().unwrap());
    let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
    let sample_rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
    let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());

    if tag == TAG_EXTENSIBLE {
        // WAVEFORMATEXTENSIBLE: the real tag is the first two bytes of the
        // SubFormat GUID at offset 24.
        if body.len() < 26 {
            return Err(Error::WavFormat("extensible fmt chunk too short".into()));
        }
        tag = u16::from_le_bytes(body[24..26].try_into().unwrap());
    }

    if channels == 0 {
        return Err(Error::WavFormat("zero channels".into()));
    }
    if sample_rate == 0 {
        return Err(Error::WavFormat("zero sample rate".into()));
    }

    let format = match (tag, bits) {
        (TAG_PCM, 16) => WavSampleFormat::Pcm16,
        (TAG_FLOAT, 32) => WavSampleFormat::Float32,
        _ => return Err(Error::UnsupportedWavCodec { tag, bits }),
    };

    Ok(FmtChunk {
        format,
        channels,
        sample_rate,
        bits_per_sample: bits,
    })
}

/// Writes a mono WAV file in the requested encoding.
///
/// PCM16 samples are `round(v * 32768)` (ties away from zero) clamped to
/// `[-32768, 32767]`, so `1.0` saturates to `32767`. Float32 output stores
/// the samples verbatim.
pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>, format: WavSampleFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = render_wav(clip, format);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Serializes a clip to WAV bytes. Exposed for tests.
pub fn render_wav(clip: &AudioClip, format: WavSampleFormat) -> Vec<u8> {
    let n = clip.samples.len();
    let bps = format.bytes_per_sample();
    let data_len = n as u32 * bps;
    // RIFF body: "WAVE" + fmt chunk (+ fact chunk for float) + data chunk.
    let fact_len = match format {
        WavSampleFormat::Pcm16 => 0,
        WavSampleFormat::Float32 => 12,
    };
    let riff_size = 4 + 24 + fact_len + 8 + data_len;

    let mut out = Vec::with_capacity(riff_size as usize + 8);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&riff_size.to_le_bytes());
    out.extend_from_slice(b"WAVE");

    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    let tag = match format {
        WavSampleFormat::Pcm16 => TAG_PCM,
        WavSampleFormat::Float32 => TAG_FLOAT,
    };
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // channels
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * bps).to_le_bytes()); // byte rate
    out.extend_from_slice(&(bps as u16).to_le_bytes()); // block align
    out.extend_from_slice(&((bps * 8) as u16).to_le_bytes()); // bits

    if format == WavSampleFormat::Float32 {
        out.extend_from_slice(b"fact");
        out.extend_from_slice(&4u32.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }

    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    match format {
        WavSampleFormat::Pcm16 => {
            for &s in &clip.samples {
                let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        WavSampleFormat::Float32 => {
            for &s in &clip.samples {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
    }
    out
}

/// Keeps the first `seconds` of a clip (`floor(seconds * rate)` samples).
/// A clip already at or below that length is returned unchanged.
pub fn crop(clip: &AudioClip, seconds: f64) -> Result<AudioClip> {
    if seconds.is_nan() || seconds <= 0.0 {
        return Err(Error::InvalidArg(format!(
            "crop length must be positive, got {seconds}"
        )));
    }
    let keep = (seconds * clip.sample_rate as f64).floor() as usize;
    let keep = keep.min(clip.samples.len());
    Ok(AudioClip {
        samples: clip.samples[..keep].to_vec(),
        ..*clip
    })
}

/// Resamples by linear interpolation to `new_rate`.
///
/// The output holds `round(n * new_rate / old_rate)` samples; output index
/// `i` reads fractional input position `i * old_rate / new_rate`, holding the
/// final sample beyond the last input. Returns a bit-identical copy when the
/// rate is unchanged.
pub fn resample_linear(clip: &AudioClip, new_rate: u32) -> Result<AudioClip> {
    if new_rate == 0 {
        return Err(Error::InvalidArg("sample rate must be positive".into()));
    }
    if new_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let n = clip.samples.len();
    let new_len =
        (n as f64 * new_rate as f64 / clip.sample_rate as f64).round() as usize;
    let ratio = clip.sample_rate as f64 / new_rate as f64;
    let mut samples = Vec::with_capacity(new_len);
    for i in 0..new_len {
        let p = i as f64 * ratio;
        let i0 = p.floor() as usize;
        let v = if i0 + 1 >= n {
            clip.samples[n - 1] as f64
        } else {
            let frac = p - i0 as f64;
            let a = clip.samples[i0] as f64;
            let b = clip.samples[i0 + 1] as f64;
            a + frac * (b - a)
        };
        samples.push(v as f32);
    }
    Ok(AudioClip {
        samples,
        sample_rate: new_rate,
        gain: clip.gain,
    })
}

/// Rescales so the largest absolute sample equals `peak` (in `(0, 1]`),
/// folding the inverse scale into `gain` so decode can restore the original
/// level. Fails on an all-zero clip.
pub fn normalize_peak(clip: &AudioClip, peak: f32) -> Result<AudioClip> {
    if !(peak > 0.0 && peak <= 1.0) {
        return Err(Error::InvalidArg(format!(
            "target peak must be in (0, 1], got {peak}"
        )));
    }
    let m = clip.peak();
    if m == 0.0 {
        return Err(Error::AllZeroClip);
    }
    let scale = peak / m;
    Ok(AudioClip {
        samples: clip.samples.iter().map(|&s| s * scale).collect(),
        sample_rate: clip.sample_rate,
        gain: clip.gain * (m / peak),
    })
}
