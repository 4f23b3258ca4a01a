use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel extent of every convolution in both networks.
pub const KERNEL: usize = 3;
/// Zero padding of every convolution; keeps stride-1 layers size-preserving.
pub const PADDING: usize = 1;

/// Architecture hyperparameters shared by the cAE and the VAE.
///
/// Each encoder stage is a stride-2 convolution followed by ReLU, so the
/// bottleneck feature map is `input_dims / 2^stages` per axis with
/// `channels.last()` channels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub input_dims: [usize; 3],
    pub latent_dim: usize,
    pub channels: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_dims: [64, 64, 64],
            latent_dim: 512,
            channels: vec![16, 32, 64, 128],
        }
    }
}

impl ArchConfig {
    /// The reduced configuration used for desk-scale runs: 16³ input, n_z = 32.
    pub fn desk() -> Self {
        Self {
            input_dims: [16, 16, 16],
            latent_dim: 32,
            channels: vec![8, 16],
        }
    }

    pub fn stage_count(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be >= 1".into()));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config(format!(
                "channel schedule {:?} must be non-empty and positive",
                self.channels
            )));
        }
        let div = 1usize << self.stage_count();
        for (axis, &d) in self.input_dims.iter().enumerate() {
            if d == 0 || d % div != 0 {
                return Err(Error::Config(format!(
                    "input extent {d} on axis {axis} is not divisible by 2^{} = {div}",
                    self.stage_count()
                )));
            }
        }
        Ok(())
    }

    /// Spatial extent of the bottleneck feature map.
    pub fn bottleneck_dims(&self) -> [usize; 3] {
        self.input_dims.map(|d| d >> self.stage_count())
    }

    pub fn bottleneck_channels(&self) -> usize {
        *self.channels.last().expect("validated schedule")
    }

    /// Length of the flattened bottleneck feature map.
    pub fn flat_len(&self) -> usize {
        self.bottleneck_channels() * self.bottleneck_dims().iter().product::<usize>()
    }

    /// `(in, out)` channels of each encoder convolution.
    pub fn encoder_channels(&self) -> Vec<(usize, usize)> {
        let mut prev = 1;
        self.channels
            .iter()
            .map(|&c| {
                let pair = (prev, c);
                prev = c;
                pair
            })
            .collect()
    }

    /// `(in, out)` channels of each decoder block, mirroring the encoder.
    pub fn decoder_channels(&self) -> Vec<(usize, usize)> {
        let s = self.stage_count();
        (0..s)
            .map(|i| {
                let cin = self.channels[s - 1 - i];
                let cout = self.channels[(s as isize - 2 - i as isize).max(0) as usize];
                (cin, cout)
            })
            .collect()
    }
}
