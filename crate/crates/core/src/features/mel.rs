//! Log mel-filterbank extraction: 25 ms Hamming window, 10 ms hop,
//! 512-point FFT, 80 triangular HTK-scale filters over 20-7600 Hz,
//! natural log with a 1e-6 power floor.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::array::Array;
use crate::error::{CoreError, Result};
use crate::features::Waveform;

pub const NUM_MEL_BINS: usize = 80;
pub const WINDOW_SAMPLES: usize = 400;
pub const HOP_SAMPLES: usize = 160;
pub const FFT_SIZE: usize = 512;
pub const MEL_LOW_HZ: f64 = 20.0;
pub const MEL_HIGH_HZ: f64 = 7600.0;
pub const LOG_FLOOR: f64 = 1e-6;

/// 80 x T map of log mel energies.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    bins: Array,
    frame_hop_seconds: f64,
}

impl MelSpectrogram {
    pub fn new(bins: Array) -> Self {
        assert_eq!(bins.shape()[0], NUM_MEL_BINS, "mel map must have 80 bins");
        Self {
            bins,
            frame_hop_seconds: HOP_SAMPLES as f64 / 16_000.0,
        }
    }

    pub fn bins(&self) -> &Array {
        &self.bins
    }

    pub fn num_frames(&self) -> usize {
        self.bins.shape()[1]
    }

    pub fn frame_hop_seconds(&self) -> f64 {
        self.frame_hop_seconds
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filter weights: `NUM_MEL_BINS x (FFT_SIZE/2 + 1)`.
pub fn mel_filterbank() -> Array {
    let n_bins = FFT_SIZE / 2 + 1;
    let mel_lo = hz_to_mel(MEL_LOW_HZ);
    let mel_hi = hz_to_mel(MEL_HIGH_HZ);
    let centers: Vec<f64> = (0..NUM_MEL_BINS + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (NUM_MEL_BINS + 1) as f64))
        .collect();
    let mut fb = Array::zeros(&[NUM_MEL_BINS, n_bins]);
    for m in 0..NUM_MEL_BINS {
        let (left, center, right) = (centers[m], centers[m + 1], centers[m + 2]);
        for k in 0..n_bins {
            let hz = k as f64 * 16_000.0 / FFT_SIZE as f64;
            let w = if hz >= left && hz <= center {
                (hz - left) / (center - left)
            } else if hz > center && hz <= right {
                (right - hz) / (right - center)
            } else {
                0.0
            };
            fb.set2(m, k, w);
        }
    }
    fb
}

fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Log mel-filterbank features of a waveform.
pub fn logmel(wave: &Waveform) -> Result<MelSpectrogram> {
    let samples = wave.samples();
    if samples.len() < WINDOW_SAMPLES {
        return Err(CoreError::TooShort {
            needed: WINDOW_SAMPLES,
            got: samples.len(),
        });
    }
    let num_frames = 1 + (samples.len() - WINDOW_SAMPLES) / HOP_SAMPLES;
    let window = hamming(WINDOW_SAMPLES);
    let fb = mel_filterbank();
    let n_freq = FFT_SIZE / 2 + 1;

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(FFT_SIZE);
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];

    let mut out = Array::zeros(&[NUM_MEL_BINS, num_frames]);
    let mut power = vec![0.0; n_freq];
    for t in 0..num_frames {
        let start = t * HOP_SAMPLES;
        for i in 0..FFT_SIZE {
            buf[i] = if i < WINDOW_SAMPLES {
                Complex::new(samples[start + i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        for m in 0..NUM_MEL_BINS {
            let energy: f64 = fb
                .row(m)
                .iter()
                .zip(&power)
                .map(|(w, p)| w * p)
                .sum();
            out.set2(m, t, (energy + LOG_FLOOR).ln());
        }
    }
    Ok(MelSpectrogram::new(out))
}

/// Per-utterance, per-bin mean/variance normalization over time.
pub fn instance_normalize(mel: &MelSpectrogram) -> MelSpectrogram {
    const EPS: f64 = 1e-12;
    let bins = mel.bins();
    let t = bins.shape()[1];
    assert!(t >= 2, "instance_normalize requires at least 2 frames");
    let mut out = Array::zeros(bins.shape());
    for m in 0..bins.shape()[0] {
        let row = bins.row(m);
        let mean = row.iter().sum::<f64>() / t as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
        let inv = 1.0 / (var + EPS).sqrt();
        for (j, v) in row.iter().enumerate() {
            out.set2(m, j, (v - mean) * inv);
        }
    }
    MelSpectrogram::new(out)
}
