use crate::error::{Error, Result};

/// Network shape and ablation switches.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    /// Number of encoder levels `L`; level `p` runs at `1/2^p` resolution.
    pub levels: usize,
    /// Output channels of each encoder level, `levels` entries.
    pub widths: Vec<usize>,
    pub kernel: usize,
    /// Share of a fused level's channels reserved for the same-level feature.
    pub reservation: f64,
    /// Largest disparity the heads can emit, as a fraction of image width.
    pub d_max: f64,
    /// Optical center `(row, col)` in input-image pixels; image center when unset.
    pub principal_point: Option<(f64, f64)>,
    pub coordconv: bool,
    pub fusion: bool,
    pub refinement: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            levels: 5,
            widths: vec![16, 32, 64, 128, 256],
            kernel: 3,
            reservation: 0.5,
            d_max: 0.3,
            principal_point: None,
            coordconv: true,
            fusion: true,
            refinement: true,
        }
    }
}

/// Number of disparity scales the network emits.
pub const NUM_SCALES: usize = 4;

impl ArchConfig {
    /// A configuration with `levels` levels whose widths double from `base`.
    pub fn with_levels(levels: usize, base: usize) -> Self {
        ArchConfig {
            levels,
            widths: (0..levels).map(|p| base << p).collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 3 {
            return Err(Error::Config(format!("arch.levels must be at least 3, got {}", self.levels)));
        }
        if self.widths.len() != self.levels {
            return Err(Error::Config(format!(
                "arch.widths has {} entries for {} levels",
                self.widths.len(),
                self.levels
            )));
        }
        if let Some(&w) = self.widths.iter().find(|&&w| w < 3) {
            return Err(Error::Config(format!("arch.widths entries must be at least 3, got {w}")));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("arch.kernel must be odd, got {}", self.kernel)));
        }
        if !(self.reservation > 0.0 && self.reservation < 1.0) {
            return Err(Error::Config(format!(
                "arch.reservation must lie in (0, 1), got {}",
                self.reservation
            )));
        }
        if !(self.d_max > 0.0 && self.d_max <= 1.0) {
            return Err(Error::Config(format!("arch.d_max must lie in (0, 1], got {}", self.d_max)));
        }
        Ok(())
    }

    /// Input extents must be multiples of this.
    pub fn required_multiple(&self) -> usize {
        1 << self.levels
    }

    /// Channels of a level as seen by consumers, including coordinate channels.
    pub(crate) fn augmented(&self, width: usize) -> usize {
        width + if self.coordconv { 3 } else { 0 }
    }

    /// Decoder width at level `p` (0 is full resolution).
    pub fn decoder_width(&self, p: usize) -> usize {
        if p == 0 {
            (self.widths[0] / 4).max(4)
        } else {
            (self.widths[p - 1] / 2).max(4)
        }
    }
}

/// Split of a fused level's `width` channels between the same-level feature
/// and each of `neighbors` adjacent levels: `(same, per_neighbor)`.
pub fn fusion_budget(width: usize, reservation: f64, neighbors: usize) -> (usize, usize) {
    if neighbors == 0 {
        return (width, 0);
    }
    // Never less than an equal share, so boundary levels with a single
    // neighbor still favour the same-level feature.
    let reserved = (reservation * width as f64).ceil() as usize;
    let equal_share = width.div_ceil(neighbors + 1);
    let same = reserved.max(equal_share).clamp(1, width.saturating_sub(neighbors).max(1));
    let per_neighbor = ((width - same) / neighbors).max(1);
    (width - per_neighbor * neighbors, per_neighbor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_is_valid() {
        ArchConfig::default().validate().unwrap();
        assert_eq!(ArchConfig::with_levels(3, 16).widths, vec![16, 32, 64]);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            ArchConfig { levels: 2, widths: vec![8, 16], ..Default::default() },
            ArchConfig { widths: vec![8, 16], ..Default::default() },
            ArchConfig { kernel: 4, ..Default::default() },
            ArchConfig { reservation: 1.0, ..Default::default() },
            ArchConfig { reservation: 0.0, ..Default::default() },
            ArchConfig { d_max: 0.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn default_budget_gives_half_to_same_level() {
        assert_eq!(fusion_budget(64, 0.5, 2), (32, 16));
        assert_eq!(fusion_budget(16, 0.5, 1), (8, 8));
        assert_eq!(fusion_budget(16, 0.5, 0), (16, 0));
    }

    proptest! {
        #[test]
        fn budget_fills_width_and_favours_same_level(width in 3usize..512, neighbors in 1usize..=2, r in 0.3334f64..0.99) {
            let (same, nb) = fusion_budget(width, r, neighbors);
            prop_assert_eq!(same + nb * neighbors, width);
            prop_assert!(nb >= 1);
            prop_assert!(same >= nb, "same {} neighbor {}", same, nb);
        }
    }
}
