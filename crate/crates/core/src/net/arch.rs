use crate::error::{Error, Result};

/// Shape of the reference encoder-decoder.
///
/// Stage widths: a full-resolution stage of `base_width` channels, then two
/// stride-2 stages and a bottleneck of `deep_width` channels. The decoder
/// mirrors them with skip concatenation at both resolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Architecture {
    pub height: usize,
    pub width: usize,
    pub base_width: usize,
    pub deep_width: usize,
    pub time_dim: usize,
    /// Largest step index the network is defined for.
    pub t_max: usize,
}

impl Architecture {
    pub fn reference(height: usize, width: usize, t_max: usize) -> Self {
        Self { height, width, base_width: 16, deep_width: 32, time_dim: 32, t_max }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        if self.base_width == 0 || self.deep_width == 0 {
            return Err(Error::InvalidArgument("channel widths must be positive".into()));
        }
        if self.time_dim < 2 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument("time embedding dimension must be even and >= 2".into()));
        }
        if self.t_max == 0 {
            return Err(Error::InvalidArgument("t_max must be positive".into()));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!(
            "unet2 size={}x{} widths={}/{} time_dim={} t_max={}",
            self.height, self.width, self.base_width, self.deep_width, self.time_dim, self.t_max
        )
    }
}
