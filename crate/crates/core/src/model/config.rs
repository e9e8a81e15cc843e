use crate::autodiff::FuseMode;
use crate::error::{Error, Result};

/// How features are halved between pyramid levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DownsampleMode {
    /// 2×2 max pooling, stride 2.
    MaxPool,
    /// 3×3 convolution, stride 2, padding 1.
    StridedConv,
}

/// Architecture hyperparameters of a pyramid network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CnpConfig {
    /// Total pyramid levels, level 0 is full resolution.
    pub levels: usize,
    /// Nonlinear 3×3 transform layers inside each mapping block.
    pub transform_layers: usize,
    pub feature_channels: usize,
    pub embed_channels: usize,
    pub input_channels: usize,
    pub output_channels: usize,
    pub fusion: FuseMode,
    pub downsample: DownsampleMode,
    /// Add the prediction to input channels
    /// `residual_channel..residual_channel + output_channels`.
    pub residual: bool,
    pub residual_channel: usize,
}

impl Default for CnpConfig {
    fn default() -> Self {
        CnpConfig {
            levels: 5,
            transform_layers: 1,
            feature_channels: 56,
            embed_channels: 12,
            input_channels: 3,
            output_channels: 1,
            fusion: FuseMode::Sum,
            downsample: DownsampleMode::MaxPool,
            residual: false,
            residual_channel: 0,
        }
    }
}

impl CnpConfig {
    pub fn with_levels(mut self, levels: usize) -> Self {
        self.levels = levels;
        self
    }

    pub fn with_transform_layers(mut self, s: usize) -> Self {
        self.transform_layers = s;
        self
    }

    pub fn with_channels(mut self, input: usize, output: usize) -> Self {
        self.input_channels = input;
        self.output_channels = output;
        self
    }

    pub fn with_width(mut self, features: usize, embed: usize) -> Self {
        self.feature_channels = features;
        self.embed_channels = embed;
        self
    }

    pub fn with_fusion(mut self, fusion: FuseMode) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn with_residual(mut self, channel: usize) -> Self {
        self.residual = true;
        self.residual_channel = channel;
        self
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels.max(1) - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::Config("levels must be at least 1".into()));
        }
        if !(1..=3).contains(&self.transform_layers) {
            return Err(Error::Config(format!(
                "transform layers must be in 1..=3, got {}",
                self.transform_layers
            )));
        }
        if self.embed_channels == 0 || self.feature_channels <= self.embed_channels {
            return Err(Error::Config(format!(
                "need feature channels > embed channels > 0, got {} and {}",
                self.feature_channels, self.embed_channels
            )));
        }
        if self.input_channels == 0 || self.output_channels == 0 {
            return Err(Error::Config("input and output channel counts must be positive".into()));
        }
        if self.residual && self.residual_channel + self.output_channels > self.input_channels {
            return Err(Error::Config(format!(
                "residual channels {}..{} exceed the {} input channels",
                self.residual_channel,
                self.residual_channel + self.output_channels,
                self.input_channels
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        CnpConfig::default().validate().unwrap();
        assert_eq!(CnpConfig::default().size_multiple(), 16);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(CnpConfig::default().with_levels(0).validate().is_err());
        assert!(CnpConfig::default().with_transform_layers(4).validate().is_err());
        assert!(CnpConfig::default().with_width(12, 12).validate().is_err());
        assert!(CnpConfig::default().with_channels(3, 1).with_residual(3).validate().is_err());
        CnpConfig::default().with_channels(3, 1).with_residual(2).validate().unwrap();
    }
}
