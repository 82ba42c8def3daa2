//! RIFF WAV reading and writing (PCM 16-bit or 32-bit float, any channel count).

use std::io::{Seek, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DspError, Result, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SampleFormat {
    #[default]
    Pcm16,
    Float32,
}

impl SampleFormat {
    pub fn spec(self, channels: u16, sample_rate: u32) -> hound::WavSpec {
        match self {
            SampleFormat::Pcm16 => hound::WavSpec {
                channels,
                sample_rate,
                bits_per_sample: 16,
                sample_format: hound::SampleFormat::Int,
            },
            SampleFormat::Float32 => hound::WavSpec {
                channels,
                sample_rate,
                bits_per_sample: 32,
                sample_format: hound::SampleFormat::Float,
            },
        }
    }
}

pub(crate) fn write_sample<W: Write + Seek>(
    writer: &mut hound::WavWriter<W>,
    format: SampleFormat,
    sample: f32,
) -> Result<()> {
    let s = sample.clamp(-1.0, 1.0);
    match format {
        SampleFormat::Pcm16 => writer.write_sample((s * i16::MAX as f32).round() as i16)?,
        SampleFormat::Float32 => writer.write_sample(s)?,
    }
    Ok(())
}

/// Reads every channel of a WAV file, deinterleaved.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Vec<Waveform>> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader.samples::<f32>().collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Int, bits) if bits <= 32 => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
        _ => return Err(DspError::Wav(hound::Error::Unsupported)),
    };
    (0..channels)
        .map(|c| {
            let samples = interleaved.iter().skip(c).step_by(channels).copied().collect();
            Waveform::new(samples, spec.sample_rate)
        })
        .collect()
}

/// Writes equal-length channels as one interleaved file.
pub fn write_wav(path: impl AsRef<Path>, channels: &[Waveform], format: SampleFormat) -> Result<()> {
    let first = channels.first().ok_or(DspError::EmptySignal)?;
    let rate = first.sample_rate();
    let len = first.len();
    if channels.iter().any(|c| c.sample_rate() != rate || c.len() != len) {
        return Err(DspError::InvalidConfig(
            "channels must share sample rate and length".into(),
        ));
    }
    let mut writer = hound::WavWriter::create(path, format.spec(channels.len() as u16, rate))?;
    for i in 0..len {
        for c in channels {
            write_sample(&mut writer, format, c.samples()[i])?;
        }
    }
    writer.finalize()?;
    Ok(())
}

pub fn write_mono(path: impl AsRef<Path>, w: &Waveform, format: SampleFormat) -> Result<()> {
    write_wav(path, std::slice::from_ref(w), format)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_roundtrip_is_exact_and_pcm_is_close() {
        let dir = tempfile::tempdir().unwrap();
        let a = Waveform::new(vec![0.0, 0.5, -0.25, 0.999], 48_000).unwrap();
        let b = Waveform::new(vec![0.1, -0.1, 0.2, -0.2], 48_000).unwrap();

        let path = dir.path().join("f.wav");
        write_wav(&path, &[a.clone(), b.clone()], SampleFormat::Float32).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back, vec![a.clone(), b.clone()]);

        let path = dir.path().join("i.wav");
        write_mono(&path, &a, SampleFormat::Pcm16).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), 1);
        for (x, y) in back[0].samples().iter().zip(a.samples()) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn mismatched_channels_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = Waveform::new(vec![0.0; 4], 48_000).unwrap();
        let b = Waveform::new(vec![0.0; 5], 48_000).unwrap();
        assert!(write_wav(dir.path().join("x.wav"), &[a, b], SampleFormat::Pcm16).is_err());
    }
}
