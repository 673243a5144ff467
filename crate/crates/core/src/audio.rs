//! Mono audio clips and WAV file IO.
//!
//! Audio is accepted as PCM WAV; multi-channel input is downmixed by
//! averaging. No resampling or other transcoding is performed.

use std::path::Path;

use crate::error::{Error, Result};

/// A finite, real-valued mono sample sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    /// Builds a clip, rejecting non-finite samples and a zero sample rate.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Audio("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Audio("samples must be finite".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub(crate) fn from_parts(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copies `len` samples starting at `start`; the range must lie inside
    /// the clip.
    pub fn slice(&self, start: usize, len: usize) -> AudioClip {
        assert!(start + len <= self.samples.len(), "slice out of range");
        AudioClip::from_parts(self.samples[start..start + len].to_vec(), self.sample_rate)
    }

    /// Zero-pads at the end up to `n_samples`; longer clips are returned
    /// unchanged.
    pub fn padded_to(&self, n_samples: usize) -> AudioClip {
        if self.samples.len() >= n_samples {
            return self.clone();
        }
        let mut samples = self.samples.clone();
        samples.resize(n_samples, 0.0);
        AudioClip::from_parts(samples, self.sample_rate)
    }
}

/// Reads a PCM WAV file as mono, averaging channels.
pub fn read_wav_mono(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Audio(format!("{}: zero channels", path.display())));
    }

    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?,
    };

    let mut mono = Vec::with_capacity(interleaved.len() / channels);
    for frame in interleaved.chunks_exact(channels) {
        mono.push(frame.iter().sum::<f64>() / channels as f64);
    }
    AudioClip::new(mono, spec.sample_rate)
}

/// Writes a mono clip as 16-bit PCM WAV. Samples are clamped to [-1, 1].
pub fn write_wav_mono(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    for &s in clip.samples() {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Reads a WAV file's duration in seconds from its header.
pub fn wav_duration_s(path: impl AsRef<Path>) -> Result<f64> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    Ok(reader.duration() as f64 / spec.sample_rate as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_samples() {
        assert!(AudioClip::new(vec![0.0, f64::NAN], 8000).is_err());
        assert!(AudioClip::new(vec![0.0, 1.0], 0).is_err());
    }

    #[test]
    fn padding_appends_zeros() {
        let clip = AudioClip::new(vec![0.5, -0.5], 4).unwrap();
        let padded = clip.padded_to(5);
        assert_eq!(padded.samples(), &[0.5, -0.5, 0.0, 0.0, 0.0]);
        assert_eq!(clip.padded_to(1).samples(), clip.samples());
    }

    #[test]
    fn wav_round_trip_mono() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let clip = AudioClip::new(vec![0.0, 0.25, -0.25, 1.0], 8000).unwrap();
        write_wav_mono(&path, &clip).unwrap();
        let back = read_wav_mono(&path).unwrap();
        assert_eq!(back.sample_rate(), 8000);
        assert_eq!(back.len(), 4);
        for (a, b) in back.samples().iter().zip(clip.samples()) {
            assert!((a - b).abs() < 1.0 / 32000.0, "{a} vs {b}");
        }
        assert!((wav_duration_s(&path).unwrap() - 4.0 / 8000.0).abs() < 1e-12);
    }

    #[test]
    fn stereo_downmix_averages() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        // frame 0: 0.5 / -0.5 -> 0.0; frame 1: 0.5 / 0.5 -> 0.5
        for v in [16384i16, -16384, 16384, 16384] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let clip = read_wav_mono(&path).unwrap();
        assert_eq!(clip.len(), 2);
        assert!(clip.samples()[0].abs() < 1e-9);
        assert!((clip.samples()[1] - 0.5).abs() < 1e-3);
    }
}
