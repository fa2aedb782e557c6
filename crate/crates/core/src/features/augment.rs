//! Synthetic additive-noise augmentation. Stands in for corpus-based
//! noise/reverberation during desk-scale training: white noise or a
//! babble-like mixture of modulated tones, mixed at a target SNR.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::features::{Waveform, SAMPLE_RATE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Babble,
}

fn noise_signal(kind: NoiseKind, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match kind {
        NoiseKind::White => {
            let dist = Normal::new(0.0, 1.0).expect("valid normal");
            (0..len).map(|_| dist.sample(rng)).collect()
        }
        NoiseKind::Babble => {
            let voices = 8;
            let mut out = vec![0.0; len];
            for _ in 0..voices {
                let f0 = rng.gen_range(100.0..1000.0);
                let am = rng.gen_range(1.0..6.0);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                let am_phase = rng.gen_range(0.0..std::f64::consts::TAU);
                for (i, o) in out.iter_mut().enumerate() {
                    let t = i as f64 / SAMPLE_RATE as f64;
                    let env = 0.5 * (1.0 + (std::f64::consts::TAU * am * t + am_phase).sin());
                    *o += env * (std::f64::consts::TAU * f0 * t + phase).sin();
                }
            }
            out
        }
    }
}

/// Mix noise into `wave` at `snr_db`. Silent inputs pass through.
pub fn add_noise(wave: &Waveform, kind: NoiseKind, snr_db: f64, rng: &mut ChaCha8Rng) -> Waveform {
    let signal_power = wave.samples().iter().map(|v| v * v).sum::<f64>() / wave.len() as f64;
    if signal_power == 0.0 {
        return wave.clone();
    }
    let noise = noise_signal(kind, wave.len(), rng);
    let noise_power = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    let target_noise_power = signal_power / 10f64.powf(snr_db / 10.0);
    let gain = (target_noise_power / noise_power.max(1e-30)).sqrt();
    let mixed = wave
        .samples()
        .iter()
        .zip(&noise)
        .map(|(s, n)| s + gain * n)
        .collect();
    Waveform::new(mixed).expect("non-empty mix")
}
