//! Log-magnitude mel-style spectral features.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub win_ms: f64,
    pub hop_ms: f64,
    /// Floor applied to band energies before the natural log.
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_mels: 64,
            win_ms: 25.0,
            hop_ms: 10.0,
            log_floor: 1e-10,
        }
    }
}

/// Time-major spectral feature matrix (`frames` x `bins`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    data: Vec<f64>,
    frames: usize,
    bins: usize,
}

impl FeatureSequence {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank: `n_mels` rows over `n_bins` linear-frequency
/// power bins.
fn mel_filterbank(n_mels: usize, n_bins: usize, sample_rate: u32, fft_size: usize) -> Vec<Vec<f64>> {
    let fmax = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(fmax);
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / fft_size as f64;

    let mut bank = vec![vec![0.0; n_bins]; n_mels];
    for (m, filter) in bank.iter_mut().enumerate() {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        for (bin, w) in filter.iter_mut().enumerate() {
            let f = bin as f64 * bin_hz;
            if f > lo && f < center {
                *w = (f - lo) / (center - lo);
            } else if (f - center).abs() < 1e-12 {
                *w = 1.0;
            } else if f > center && f < hi {
                *w = (hi - f) / (hi - center);
            }
        }
    }
    bank
}

/// Extracts deterministic log-mel features at the configured frame rate.
/// The clip must contain at least one full analysis window.
pub fn featurize_audio(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureSequence> {
    if clip.is_empty() {
        return Err(Error::InvalidInput("cannot featurize an empty clip".into()));
    }
    let sr = clip.sample_rate();
    let win = ((sr as f64 * cfg.win_ms / 1000.0).round() as usize).max(1);
    let hop = ((sr as f64 * cfg.hop_ms / 1000.0).round() as usize).max(1);
    if clip.len() < win {
        return Err(Error::InvalidInput(format!(
            "clip of {} samples is shorter than one {win}-sample window",
            clip.len()
        )));
    }

    let fft_size = win.next_power_of_two();
    let n_bins = fft_size / 2 + 1;
    let n_frames = (clip.len() - win) / hop + 1;
    let bank = mel_filterbank(cfg.n_mels, n_bins, sr, fft_size);
    let hann: Vec<f64> = (0..win)
        .map(|i| {
            if win == 1 {
                1.0
            } else {
                0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (win - 1) as f64).cos()
            }
        })
        .collect();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(fft_size);
    let samples = clip.samples();

    let mut data = Vec::with_capacity(n_frames * cfg.n_mels);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    for t in 0..n_frames {
        let start = t * hop;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < win {
                Complex::new(samples[start + i] * hann[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm_sqr()).collect();
        for filter in &bank {
            let energy: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
            data.push(energy.max(cfg.log_floor).ln());
        }
    }

    Ok(FeatureSequence {
        data,
        frames: n_frames,
        bins: cfg.n_mels,
    })
}
