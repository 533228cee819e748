//! WAV reading and writing. Samples are exchanged as one `Vec<f64>` per
//! channel in [-1, 1]; files are written as 32-bit float PCM.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct WavAudio {
    pub sample_rate: u32,
    /// One vector per channel, equal lengths.
    pub channels: Vec<Vec<f64>>,
}

impl WavAudio {
    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn frame_count(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frame_count() as f64 / self.sample_rate as f64
    }
}

fn hound_error(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::InvalidInput(format!("{}: {other}", path.display())),
    }
}

/// Reads a 16/24-bit integer or 32-bit float PCM WAV into per-channel f64.
pub fn read_wav(path: impl AsRef<Path>) -> Result<WavAudio> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| hound_error(path, e))?;
    let spec = reader.spec();
    let m = spec.channels as usize;
    if m == 0 {
        return Err(Error::InvalidInput(format!(
            "{}: zero channels",
            path.display()
        )));
    }
    let mut channels = vec![Vec::new(); m];
    match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => {
            for (i, s) in reader.samples::<f32>().enumerate() {
                let s = s.map_err(|e| hound_error(path, e))?;
                channels[i % m].push(s as f64);
            }
        }
        (hound::SampleFormat::Int, bits @ (16 | 24)) => {
            let scale = 1.0 / (1i64 << (bits - 1)) as f64;
            for (i, s) in reader.samples::<i32>().enumerate() {
                let s = s.map_err(|e| hound_error(path, e))?;
                channels[i % m].push(s as f64 * scale);
            }
        }
        (fmt, bits) => {
            return Err(Error::InvalidInput(format!(
                "{}: unsupported sample format {fmt:?}/{bits} bits (want int16, int24 or float32)",
                path.display()
            )));
        }
    }
    Ok(WavAudio {
        sample_rate: spec.sample_rate,
        channels,
    })
}

/// Writes per-channel f64 samples as a 32-bit float PCM WAV.
pub fn write_wav(path: impl AsRef<Path>, sample_rate: u32, channels: &[Vec<f64>]) -> Result<()> {
    let path = path.as_ref();
    if channels.is_empty() {
        return Err(Error::InvalidInput("no channels to write".into()));
    }
    let frames = channels[0].len();
    if channels.iter().any(|c| c.len() != frames) {
        return Err(Error::dims(
            "write_wav",
            format!("{frames} samples per channel"),
            "unequal channel lengths".to_string(),
        ));
    }
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| hound_error(path, e))?;
    for t in 0..frames {
        for channel in channels {
            writer
                .write_sample(channel[t] as f32)
                .map_err(|e| hound_error(path, e))?;
        }
    }
    writer.finalize().map_err(|e| hound_error(path, e))
}
