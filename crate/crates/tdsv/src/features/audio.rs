//! Windowing and log-mel-filterbank extraction for 16 kHz mono PCM.
//!
//! 25 ms windows (400 samples) with 15 ms overlap (160-sample hop), Hann
//! window, 512-point real FFT, 40 triangular mel filters spanning
//! 125-7500 Hz, natural log with floor 1e-10.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{FeatureMatrix, FEATURE_DIM};
use crate::error::DataError;

pub const SAMPLE_RATE: u32 = 16_000;
pub const WINDOW_SAMPLES: usize = 400;
pub const HOP_SAMPLES: usize = 160;
pub const FFT_SIZE: usize = 512;
pub const MEL_LOW_HZ: f64 = 125.0;
pub const MEL_HIGH_HZ: f64 = 7500.0;
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>) -> Self {
        AudioClip { samples, sample_rate: SAMPLE_RATE }
    }
}

/// Split a clip into Hann-windowed 400-sample frames at a 160-sample hop.
pub fn frame_signal(clip: &AudioClip) -> Result<Vec<Vec<f64>>, DataError> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(DataError::Invalid(format!(
            "expected sample rate {SAMPLE_RATE}, got {}",
            clip.sample_rate
        )));
    }
    if clip.samples.len() < WINDOW_SAMPLES {
        return Err(DataError::Invalid(format!(
            "clip too short: {} samples, need at least {WINDOW_SAMPLES}",
            clip.samples.len()
        )));
    }
    let window: Vec<f64> = (0..WINDOW_SAMPLES)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WINDOW_SAMPLES as f64).cos())
        .collect();
    let count = (clip.samples.len() - WINDOW_SAMPLES) / HOP_SAMPLES + 1;
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * HOP_SAMPLES;
        let frame: Vec<f64> = clip.samples[start..start + WINDOW_SAMPLES]
            .iter()
            .zip(&window)
            .map(|(s, w)| s * w)
            .collect();
        frames.push(frame);
    }
    Ok(frames)
}

/// Triangular mel filterbank over FFT bin center frequencies.
/// Returns `FEATURE_DIM` filters, each a vector of FFT_SIZE/2+1 weights.
pub fn mel_filterbank() -> Vec<Vec<f64>> {
    let num_bins = FFT_SIZE / 2 + 1;
    let mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
    let hz = |mel: f64| 700.0 * (10f64.powf(mel / 2595.0) - 1.0);
    let lo = mel(MEL_LOW_HZ);
    let hi = mel(MEL_HIGH_HZ);
    let edges: Vec<f64> = (0..FEATURE_DIM + 2)
        .map(|i| hz(lo + (hi - lo) * i as f64 / (FEATURE_DIM + 1) as f64))
        .collect();
    let bin_freq = |k: usize| k as f64 * SAMPLE_RATE as f64 / FFT_SIZE as f64;
    (0..FEATURE_DIM)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..num_bins)
                .map(|k| {
                    let f = bin_freq(k);
                    if f > left && f < center {
                        (f - left) / (center - left)
                    } else if f >= center && f < right {
                        (right - f) / (right - center)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Center frequency (Hz) of a mel filter, for test construction.
pub fn mel_filter_center_hz(bin: usize) -> f64 {
    let mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
    let hz = |mel: f64| 700.0 * (10f64.powf(mel / 2595.0) - 1.0);
    let lo = mel(MEL_LOW_HZ);
    let hi = mel(MEL_HIGH_HZ);
    hz(lo + (hi - lo) * (bin + 1) as f64 / (FEATURE_DIM + 1) as f64)
}

/// Log-mel features from windowed frames: power spectrum -> mel filters ->
/// natural log with floor.
pub fn log_mel(frames: &[Vec<f64>]) -> FeatureMatrix {
    let filters = mel_filterbank();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(FFT_SIZE);
    let mut data = Vec::with_capacity(frames.len() * FEATURE_DIM);
    for frame in frames {
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .map(|&s| Complex::new(s, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(FFT_SIZE)
            .collect();
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..FFT_SIZE / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        for filter in &filters {
            let energy: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
            data.push(energy.max(LOG_FLOOR).ln());
        }
    }
    FeatureMatrix::new(frames.len(), FEATURE_DIM, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_window_exactly() {
        let clip = AudioClip::new(vec![0.0; 400]);
        assert_eq!(frame_signal(&clip).unwrap().len(), 1);
    }

    #[test]
    fn eighty_frames_exact_and_floor() {
        // 400 + 79*160 = 13040
        let clip = AudioClip::new(vec![0.0; 13040]);
        assert_eq!(frame_signal(&clip).unwrap().len(), 80);
        let clip = AudioClip::new(vec![0.0; 13199]);
        assert_eq!(frame_signal(&clip).unwrap().len(), 80);
    }

    #[test]
    fn short_clip_rejected() {
        let clip = AudioClip::new(vec![0.0; 399]);
        assert!(frame_signal(&clip).is_err());
    }

    #[test]
    fn zero_signal_hits_log_floor() {
        let clip = AudioClip::new(vec![0.0; 13040]);
        let feats = log_mel(&frame_signal(&clip).unwrap());
        assert_eq!(feats.num_frames, 80);
        assert!(feats.data.iter().all(|&x| x == LOG_FLOOR.ln()));
    }

    #[test]
    fn tone_at_filter_center_peaks_in_that_bin() {
        let bin = 20;
        let freq = mel_filter_center_hz(bin);
        let samples: Vec<f64> = (0..13040)
            .map(|n| (2.0 * std::f64::consts::PI * freq * n as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        let feats = log_mel(&frame_signal(&AudioClip::new(samples)).unwrap());
        let mid = feats.frame(40);
        let argmax = mid
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, bin);
    }

    #[test]
    fn doubling_amplitude_shifts_log_energy() {
        let samples: Vec<f64> = (0..13040)
            .map(|n| (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        let doubled: Vec<f64> = samples.iter().map(|s| s * 2.0).collect();
        let a = log_mel(&frame_signal(&AudioClip::new(samples)).unwrap());
        let b = log_mel(&frame_signal(&AudioClip::new(doubled)).unwrap());
        let shift = 2.0 * 2f64.ln();
        for (x, y) in a.data.iter().zip(&b.data) {
            if *x > LOG_FLOOR.ln() + 1.0 && *y > LOG_FLOOR.ln() + 1.0 {
                assert!((y - x - shift).abs() < 1e-9, "shift {} != {}", y - x, shift);
            }
        }
    }
}
