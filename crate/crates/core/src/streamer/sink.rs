use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::dsp::wav::{write_sample, SampleFormat};

use super::{Result, StreamError};

/// Destination for the emitter's blocks. Every call carries one equal-length
/// slice per channel.
pub trait Sink: Send {
    fn write(&mut self, block: &[Vec<f32>]) -> Result<()>;
    /// Flushes and closes. Called once, also after a failed write.
    fn finalize(&mut self) -> Result<()>;
}

fn sink_err(e: impl std::fmt::Display) -> StreamError {
    StreamError::Sink(e.to_string())
}

/// Keeps everything in memory; used by tests and the bench.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct MemorySink {
    pub channels: Vec<Vec<f32>>,
    pub finalized: bool,
}

impl Sink for MemorySink {
    fn write(&mut self, block: &[Vec<f32>]) -> Result<()> {
        if self.channels.is_empty() {
            self.channels = vec![Vec::new(); block.len()];
        }
        for (dst, src) in self.channels.iter_mut().zip(block) {
            dst.extend_from_slice(src);
        }
        Ok(())
    }

    fn finalize(&mut self) -> Result<()> {
        self.finalized = true;
        Ok(())
    }
}

/// Discards audio, counting frames.
#[derive(Debug, Default, Clone, Copy, PartialEq)]
pub struct NullSink {
    pub frames: u64,
}

impl Sink for NullSink {
    fn write(&mut self, block: &[Vec<f32>]) -> Result<()> {
        self.frames += block.first().map_or(0, |b| b.len()) as u64;
        Ok(())
    }

    fn finalize(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Hashes the interleaved `f32` little-endian stream instead of storing it,
/// so long runs can be compared bit for bit.
#[derive(Debug, Default, Clone)]
pub struct DigestSink {
    hasher: Sha256,
    pub frames: u64,
}

impl DigestSink {
    pub fn hex(&self) -> String {
        self.hasher.clone().finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl Sink for DigestSink {
    fn write(&mut self, block: &[Vec<f32>]) -> Result<()> {
        let frames = block.first().map_or(0, |b| b.len());
        for i in 0..frames {
            for ch in block {
                self.hasher.update(ch[i].to_le_bytes());
            }
        }
        self.frames += frames as u64;
        Ok(())
    }

    fn finalize(&mut self) -> Result<()> {
        Ok(())
    }
}

type Writer = hound::WavWriter<BufWriter<File>>;

/// One interleaved multichannel WAV file. The header is rewritten every
/// `flush_every` frames so the file stays readable if the process dies.
pub struct WavSink {
    writer: Option<Writer>,
    format: SampleFormat,
    channels: usize,
    flush_every: u64,
    since_flush: u64,
}

impl WavSink {
    pub fn create(
        path: impl AsRef<Path>,
        channels: usize,
        sample_rate: u32,
        format: SampleFormat,
        flush_every: u64,
    ) -> Result<Self> {
        let writer = hound::WavWriter::create(path, format.spec(channels as u16, sample_rate)).map_err(sink_err)?;
        Ok(Self { writer: Some(writer), format, channels, flush_every, since_flush: 0 })
    }
}

impl Sink for WavSink {
    fn write(&mut self, block: &[Vec<f32>]) -> Result<()> {
        if block.len() != self.channels {
            return Err(StreamError::Sink(format!("{} channels for a {}-channel file", block.len(), self.channels)));
        }
        let w = self.writer.as_mut().ok_or_else(|| sink_err("sink already finalized"))?;
        let frames = block.first().map_or(0, |b| b.len());
        for i in 0..frames {
            for ch in block {
                write_sample(w, self.format, ch[i]).map_err(sink_err)?;
            }
        }
        self.since_flush += frames as u64;
        if self.flush_every > 0 && self.since_flush >= self.flush_every {
            w.flush().map_err(sink_err)?;
            self.since_flush = 0;
        }
        Ok(())
    }

    fn finalize(&mut self) -> Result<()> {
        match self.writer.take() {
            Some(w) => w.finalize().map_err(sink_err),
            None => Ok(()),
        }
    }
}

/// One mono WAV per channel, `ch0.wav`, `ch1.wav`, … in a directory.
pub struct MonoDirSink {
    writers: Vec<Writer>,
    paths: Vec<PathBuf>,
    format: SampleFormat,
}

impl MonoDirSink {
    pub fn create(dir: impl AsRef<Path>, channels: usize, sample_rate: u32, format: SampleFormat) -> Result<Self> {
        std::fs::create_dir_all(dir.as_ref()).map_err(sink_err)?;
        let mut writers = Vec::with_capacity(channels);
        let mut paths = Vec::with_capacity(channels);
        for ch in 0..channels {
            let p = dir.as_ref().join(format!("ch{ch}.wav"));
            writers.push(hound::WavWriter::create(&p, format.spec(1, sample_rate)).map_err(sink_err)?);
            paths.push(p);
        }
        Ok(Self { writers, paths, format })
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }
}

impl Sink for MonoDirSink {
    fn write(&mut self, block: &[Vec<f32>]) -> Result<()> {
        if block.len() != self.writers.len() {
            return Err(StreamError::Sink(format!("{} channels for {} files", block.len(), self.writers.len())));
        }
        for (w, ch) in self.writers.iter_mut().zip(block) {
            for &s in ch {
                write_sample(w, self.format, s).map_err(sink_err)?;
            }
        }
        Ok(())
    }

    fn finalize(&mut self) -> Result<()> {
        for w in self.writers.drain(..) {
            w.finalize().map_err(sink_err)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::wav::read_wav;

    fn block(n: usize, ch: usize, base: f32) -> Vec<Vec<f32>> {
        (0..ch).map(|c| (0..n).map(|i| base + 0.01 * c as f32 + 0.0001 * i as f32).collect()).collect()
    }

    #[test]
    fn interleaved_file_reads_back_per_channel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.wav");
        let mut s = WavSink::create(&p, 8, 48_000, SampleFormat::Float32, 100).unwrap();
        s.write(&block(150, 8, 0.1)).unwrap();
        s.write(&block(50, 8, -0.2)).unwrap();
        s.finalize().unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.len(), 8);
        assert_eq!(back[3].len(), 200);
        assert_eq!(back[3].samples()[0], 0.1 + 0.03);
        assert!(s.write(&block(1, 8, 0.0)).is_err());
    }

    #[test]
    fn periodic_flush_leaves_a_readable_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("live.wav");
        let mut s = WavSink::create(&p, 2, 48_000, SampleFormat::Pcm16, 64).unwrap();
        s.write(&block(100, 2, 0.0)).unwrap();
        // not finalized: header must already describe the flushed frames
        let back = read_wav(&p).unwrap();
        assert_eq!(back[0].len(), 100);
        s.finalize().unwrap();
    }

    #[test]
    fn digest_tracks_content_and_order() {
        let mut a = DigestSink::default();
        let mut b = DigestSink::default();
        a.write(&block(10, 2, 0.0)).unwrap();
        b.write(&block(4, 2, 0.0)).unwrap();
        assert_ne!(a.hex(), b.hex());
        let mut c = DigestSink::default();
        c.write(&block(10, 2, 0.0)).unwrap();
        assert_eq!(a.hex(), c.hex());
        assert_eq!(a.frames, 10);
        let swapped: Vec<Vec<f32>> = block(10, 2, 0.0).into_iter().rev().collect();
        let mut d = DigestSink::default();
        d.write(&swapped).unwrap();
        assert_ne!(a.hex(), d.hex());
    }

    #[test]
    fn mono_directory_and_channel_count_check() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = MonoDirSink::create(dir.path().join("m"), 3, 48_000, SampleFormat::Pcm16).unwrap();
        s.write(&block(10, 3, 0.0)).unwrap();
        assert!(s.write(&block(10, 2, 0.0)).is_err());
        s.finalize().unwrap();
        for p in s.paths() {
            assert_eq!(read_wav(p).unwrap()[0].len(), 10);
        }
    }
}
