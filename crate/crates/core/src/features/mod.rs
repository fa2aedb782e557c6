//! Acoustic front-end: 16 kHz waveforms in, normalized 80-bin log-mel
//! feature maps out, plus the duration utilities used by evaluation.

mod augment;
mod duration;
mod mel;
mod wav;

pub use augment::{add_noise, NoiseKind};
pub use duration::{crop_middle, random_crop, upsample};
pub use mel::{instance_normalize, logmel, mel_filterbank, MelSpectrogram};
pub use wav::{read_wav, write_wav};

use crate::error::{CoreError, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono 16 kHz waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(CoreError::TooShort { needed: 1, got: 0 });
        }
        Ok(Self {
            samples,
            sample_rate: SAMPLE_RATE,
        })
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

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}
