//! Duration manipulation: center/random cropping with the
//! duplicate-then-crop rule for short inputs, and interpolation-based
//! upsampling for the attention analysis.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::features::{Waveform, SAMPLE_RATE};
use crate::kernels::linear_resample;

fn target_len(seconds: f64) -> usize {
    (seconds * SAMPLE_RATE as f64).round() as usize
}

/// Tile the waveform until it reaches at least `len` samples.
fn tiled(samples: &[f64], len: usize) -> Vec<f64> {
    if samples.len() >= len {
        return samples.to_vec();
    }
    let reps = len.div_ceil(samples.len());
    let mut out = Vec::with_capacity(reps * samples.len());
    for _ in 0..reps {
        out.extend_from_slice(samples);
    }
    out
}

/// Center crop to `target_seconds`, duplicating first when the input
/// is shorter than the target.
pub fn crop_middle(wave: &Waveform, target_seconds: f64) -> Waveform {
    let target = target_len(target_seconds);
    let buf = tiled(wave.samples(), target);
    let start = (buf.len() - target) / 2;
    Waveform::new(buf[start..start + target].to_vec()).expect("non-empty crop")
}

/// Uniform random crop to `seconds`, same duplication rule.
pub fn random_crop(wave: &Waveform, seconds: f64, rng: &mut ChaCha8Rng) -> Waveform {
    let target = target_len(seconds);
    let buf = tiled(wave.samples(), target);
    let start = rng.gen_range(0..=buf.len() - target);
    Waveform::new(buf[start..start + target].to_vec()).expect("non-empty crop")
}

/// Linear-interpolation upsampling by `factor >= 1`. The sample-rate
/// metadata is left unchanged: the output plays the same content at a
/// coarser effective resolution.
pub fn upsample(wave: &Waveform, factor: f64) -> Waveform {
    assert!(factor >= 1.0, "upsample factor must be >= 1");
    if factor == 1.0 {
        return wave.clone();
    }
    Waveform::new(linear_resample(wave.samples(), factor)).expect("non-empty resample")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::seeded_rng;

    fn ramp(n: usize) -> Waveform {
        Waveform::new((0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn center_crop_window_arithmetic() {
        // 10 s input, 3 s target: samples [56000, 104000).
        let out = crop_middle(&ramp(160_000), 3.0);
        assert_eq!(out.len(), 48_000);
        assert_eq!(out.samples()[0], 56_000.0);
        assert_eq!(*out.samples().last().unwrap(), 103_999.0);
    }

    #[test]
    fn exact_length_is_identity() {
        let w = ramp(48_000);
        assert_eq!(crop_middle(&w, 3.0), w);
    }

    #[test]
    fn short_input_tiles_then_center_crops() {
        // 1 s input, 1.5 s target: 2x tile is 32000 samples, center
        // crop starts at (32000 - 24000) / 2 = 4000.
        let out = crop_middle(&ramp(16_000), 1.5);
        assert_eq!(out.len(), 24_000);
        assert_eq!(out.samples()[0], 4_000.0);
        assert_eq!(out.samples()[12_000], 0.0); // wrap point of the tile
    }

    #[test]
    fn crop_lengths_exact_for_all_short_inputs() {
        let target = 800; // 0.05 s
        for len in 1..=5 * target {
            let out = crop_middle(&ramp(len), target as f64 / SAMPLE_RATE as f64);
            assert_eq!(out.len(), target, "input len {len}");
        }
    }

    #[test]
    fn random_crop_reproducible_and_sized() {
        let w = ramp(80_000);
        let a = random_crop(&w, 2.0, &mut seeded_rng(11, 1));
        let b = random_crop(&w, 2.0, &mut seeded_rng(11, 1));
        assert_eq!(a, b);
        assert_eq!(a.len(), 32_000);
    }

    #[test]
    fn random_crop_offsets_uniform_chi_square() {
        // 10^4 draws into 16 bins; chi-square critical value for 15
        // degrees of freedom at p = 0.01 is 30.578.
        let w = ramp(4_000);
        let target = 2_000usize;
        let mut rng = seeded_rng(5, 2);
        let bins = 16usize;
        let span = w.len() - target + 1;
        let mut counts = vec![0usize; bins];
        let draws = 10_000;
        for _ in 0..draws {
            let c = random_crop(&w, target as f64 / SAMPLE_RATE as f64, &mut rng);
            let offset = c.samples()[0] as usize;
            counts[offset * bins / span] += 1;
        }
        let expected: Vec<f64> = (0..bins)
            .map(|b| {
                let lo = (b * span).div_ceil(bins);
                let hi = ((b + 1) * span).div_ceil(bins);
                draws as f64 * (hi - lo) as f64 / span as f64
            })
            .collect();
        let chi2: f64 = counts
            .iter()
            .zip(&expected)
            .map(|(&c, &e)| (c as f64 - e) * (c as f64 - e) / e)
            .sum();
        assert!(chi2 < 30.578, "chi-square {chi2} rejects uniformity");
    }

    #[test]
    fn upsample_identity_and_half_step_pattern() {
        let w = Waveform::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(upsample(&w, 1.0), w);
        let up = upsample(&w, 2.0);
        assert_eq!(up.len(), 4);
        assert_eq!(&up.samples()[..3], &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn upsample_preserves_bandlimited_energy() {
        let n = 16_000;
        let samples: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        let w = Waveform::new(samples).unwrap();
        let up = upsample(&w, 1.5);
        let power = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
        let ratio_db = 10.0 * (power(up.samples()) / power(w.samples())).log10();
        assert!(ratio_db.abs() < 1.0, "power shifted by {ratio_db} dB");
    }
}
