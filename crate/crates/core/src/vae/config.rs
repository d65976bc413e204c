use serde::{Deserialize, Serialize};

use super::VaeError;

/// Architecture hyperparameters of the convolutional VAE.
///
/// The encoder applies one stride-2 convolution per entry of
/// `channel_widths`; the decoder mirrors it with transposed convolutions whose
/// output padding is solved so every decoder stage restores the matching
/// encoder resolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    pub in_channels: usize,
    pub spatial: usize,
    pub channel_widths: Vec<usize>,
    pub latent_dim: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Default for VaeConfig {
    /// 16 x 210 x 210 input, widths 16-32-64-128-256, 100 latent units.
    fn default() -> Self {
        VaeConfig {
            in_channels: 16,
            spatial: 210,
            channel_widths: vec![16, 32, 64, 128, 256],
            latent_dim: 100,
            kernel: 3,
            stride: 2,
            padding: 1,
        }
    }
}

impl VaeConfig {
    pub fn conv_out(&self, n: usize) -> usize {
        (n + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Transposed-convolution output size before output padding.
    pub fn deconv_out(&self, n: usize) -> usize {
        (n - 1) * self.stride + self.kernel - 2 * self.padding
    }

    pub fn depth(&self) -> usize {
        self.channel_widths.len()
    }

    /// Spatial size entering each encoder stage, plus the bottleneck size:
    /// `[210, 105, 53, 27, 14, 7]` for the default config.
    pub fn encoder_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.spatial];
        for _ in 0..self.depth() {
            let last = *sizes.last().unwrap();
            sizes.push(self.conv_out(last));
        }
        sizes
    }

    /// Channel count entering each encoder stage, plus the bottleneck width.
    pub fn encoder_channels(&self) -> Vec<usize> {
        let mut channels = vec![self.in_channels];
        channels.extend(&self.channel_widths);
        channels
    }

    /// Output padding of each decoder stage, innermost first.
    pub fn decoder_output_padding(&self) -> Vec<usize> {
        let sizes = self.encoder_sizes();
        (0..self.depth())
            .rev()
            .map(|level| sizes[level] - self.deconv_out(sizes[level + 1]))
            .collect()
    }

    /// `(in_channels, out_channels, in_size, out_size)` of each decoder stage,
    /// innermost first.
    pub fn decoder_stages(&self) -> Vec<(usize, usize, usize, usize)> {
        let sizes = self.encoder_sizes();
        let channels = self.encoder_channels();
        (0..self.depth())
            .rev()
            .map(|level| (channels[level + 1], channels[level], sizes[level + 1], sizes[level]))
            .collect()
    }

    pub fn bottleneck_size(&self) -> usize {
        *self.encoder_sizes().last().unwrap()
    }

    /// Length of the flattened encoder output.
    pub fn flat_features(&self) -> usize {
        let s = self.bottleneck_size();
        self.channel_widths.last().copied().unwrap_or(0) * s * s
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.spatial * self.spatial
    }

    pub fn validate(&self) -> Result<(), VaeError> {
        let bad = |msg: String| Err(VaeError::InvalidConfig(msg));
        if self.in_channels == 0 || self.latent_dim == 0 || self.channel_widths.is_empty() {
            return bad("channels, latent size and depth must be positive".into());
        }
        if self.channel_widths.contains(&0) {
            return bad("channel widths must be positive".into());
        }
        if self.kernel == 0 || self.stride == 0 || 2 * self.padding >= self.kernel + self.stride {
            return bad("unsupported kernel/stride/padding".into());
        }
        let mut n = self.spatial;
        for _ in 0..self.depth() {
            if n + 2 * self.padding < self.kernel {
                return bad(format!("spatial size {} collapses before the bottleneck", self.spatial));
            }
            let next = self.conv_out(n);
            if next == 0 || self.deconv_out(next) > n || n - self.deconv_out(next) >= self.stride {
                return bad(format!("no output padding restores size {n} from {next}"));
            }
            n = next;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_chain() {
        let c = VaeConfig::default();
        c.validate().unwrap();
        assert_eq!(c.encoder_sizes(), vec![210, 105, 53, 27, 14, 7]);
        assert_eq!(c.encoder_channels(), vec![16, 16, 32, 64, 128, 256]);
        assert_eq!(c.flat_features(), 12544);
        assert_eq!(c.decoder_output_padding(), vec![1, 0, 0, 0, 1]);
        assert_eq!(
            c.decoder_stages(),
            vec![
                (256, 128, 7, 14),
                (128, 64, 14, 27),
                (64, 32, 27, 53),
                (32, 16, 53, 105),
                (16, 16, 105, 210)
            ]
        );
    }

    #[test]
    fn reduced_config() {
        let c = VaeConfig {
            in_channels: 2,
            spatial: 8,
            channel_widths: vec![2, 4],
            latent_dim: 4,
            ..VaeConfig::default()
        };
        c.validate().unwrap();
        assert_eq!(c.encoder_sizes(), vec![8, 4, 2]);
        assert_eq!(c.decoder_output_padding(), vec![1, 1]);
        assert_eq!(c.flat_features(), 16);
    }

    #[test]
    fn rejects_degenerate() {
        let mut c = VaeConfig::default();
        c.channel_widths.clear();
        assert!(c.validate().is_err());
        let c = VaeConfig {
            spatial: 0,
            ..VaeConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
