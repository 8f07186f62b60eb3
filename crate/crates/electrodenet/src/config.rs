//! Filterbank and strategy constants shared by every pipeline stage.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Per-channel FFT-bin allocation: contiguous runs of bins starting at
/// `start_bin`, one run per channel, each with a combination gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAllocation {
    pub widths: Vec<usize>,
    pub start_bin: usize,
    pub gains: Vec<f64>,
}

impl ChannelAllocation {
    /// Default 22-channel table: single bins for the lowest nine channels
    /// (250 Hz..1250 Hz), widths growing monotonically above.
    pub fn default_22() -> Self {
        ChannelAllocation {
            widths: vec![
                1, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 5, 5, 6, 7, 8,
            ],
            start_bin: 2,
            gains: vec![1.0; 22],
        }
    }

    pub fn num_channels(&self) -> usize {
        self.widths.len()
    }

    /// Bin range `[lo, hi)` of channel `m`.
    pub fn channel_bins(&self, m: usize) -> (usize, usize) {
        let lo = self.start_bin + self.widths[..m].iter().sum::<usize>();
        (lo, lo + self.widths[m])
    }

    /// Band edge frequencies of channel `m`: center frequencies of its
    /// first and last bin at the given bin width in Hz.
    pub fn channel_band_hz(&self, m: usize, bin_hz: f64) -> (f64, f64) {
        let (lo, hi) = self.channel_bins(m);
        (lo as f64 * bin_hz, (hi - 1) as f64 * bin_hz)
    }

    pub fn validate(&self, num_bins: usize) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::invalid("allocation has no channels"));
        }
        if self.widths.len() != self.gains.len() {
            return Err(Error::invalid("widths/gains length mismatch"));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("channel width must be positive"));
        }
        if self.gains.iter().any(|&g| g <= 0.0) {
            return Err(Error::invalid("channel gain must be positive"));
        }
        let total: usize = self.widths.iter().sum();
        if total + self.start_bin > num_bins {
            return Err(Error::invalid(format!(
                "allocation spans bins {}..{} but only {} bins exist",
                self.start_bin,
                self.start_bin + total,
                num_bins
            )));
        }
        Ok(())
    }

    /// Parse the text table format: one `width gain` line per channel,
    /// with an optional leading `start_bin <n>` line. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut widths = Vec::new();
        let mut gains = Vec::new();
        let mut start_bin = 2usize;
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "start_bin" {
                start_bin = fields
                    .get(1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::invalid(format!("line {}: bad start_bin", ln + 1)))?;
                continue;
            }
            if fields.len() != 2 {
                return Err(Error::invalid(format!(
                    "line {}: expected `width gain`",
                    ln + 1
                )));
            }
            widths.push(
                fields[0]
                    .parse()
                    .map_err(|_| Error::invalid(format!("line {}: bad width", ln + 1)))?,
            );
            gains.push(
                fields[1]
                    .parse()
                    .map_err(|_| Error::invalid(format!("line {}: bad gain", ln + 1)))?,
            );
        }
        Ok(ChannelAllocation {
            widths,
            start_bin,
            gains,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("start_bin {}\n", self.start_bin);
        for (w, g) in self.widths.iter().zip(&self.gains) {
            out.push_str(&format!("{} {}\n", w, g));
        }
        out
    }
}

/// Front-end constants: frame length K, bin count L, channel count M,
/// maxima count N, hop, and the bin-to-channel allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub num_bins: usize,
    pub num_channels: usize,
    pub num_maxima: usize,
    pub hop: usize,
    pub allocation: ChannelAllocation,
}

impl StrategyConfig {
    pub fn new(num_maxima: usize) -> Result<Self> {
        let cfg = StrategyConfig {
            sample_rate: 16_000,
            frame_len: 128,
            num_bins: 65,
            num_channels: 22,
            num_maxima,
            hop: 16,
            allocation: ChannelAllocation::default_22(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_bins != self.frame_len / 2 + 1 {
            return Err(Error::invalid("num_bins must equal frame_len/2 + 1"));
        }
        if self.num_maxima < 1 || self.num_maxima > self.num_channels {
            return Err(Error::invalid("num_maxima must be in 1..=num_channels"));
        }
        if self.hop < 1 || self.hop > self.frame_len {
            return Err(Error::invalid("hop must be in 1..=frame_len"));
        }
        if self.allocation.num_channels() != self.num_channels {
            return Err(Error::invalid("allocation channel count != num_channels"));
        }
        self.allocation.validate(self.num_bins)
    }

    /// FFT bin spacing in Hz (125 Hz at the defaults).
    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.frame_len as f64
    }
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig::new(8).expect("default config is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = StrategyConfig::default();
        assert_eq!(cfg.num_bins, 65);
        assert_eq!(cfg.bin_hz(), 125.0);
        assert_eq!(cfg.allocation.widths.iter().sum::<usize>(), 63);
    }

    #[test]
    fn default_allocation_anchors_within_one_bin() {
        // Quoted channel labels: (1-based channel, Hz).
        let anchors = [
            (1, 250.0),
            (8, 1125.0),
            (9, 1250.0),
            (12, 1937.0),
            (17, 3812.0),
            (18, 4375.0),
            (19, 5000.0),
            (21, 6500.0),
        ];
        let cfg = StrategyConfig::default();
        for (ch, hz) in anchors {
            let (lo, hi) = cfg.allocation.channel_band_hz(ch - 1, cfg.bin_hz());
            let label = (lo * hi).sqrt();
            assert!(
                (label - hz).abs() <= 125.0,
                "channel {ch}: label {label:.1} vs anchor {hz}"
            );
        }
    }

    #[test]
    fn allocation_text_roundtrip() {
        let alloc = ChannelAllocation::default_22();
        let parsed = ChannelAllocation::parse(&alloc.to_text()).unwrap();
        assert_eq!(alloc, parsed);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(StrategyConfig::new(0).is_err());
        assert!(StrategyConfig::new(23).is_err());
        let mut cfg = StrategyConfig::default();
        cfg.hop = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = StrategyConfig::default();
        cfg.allocation.start_bin = 10;
        assert!(cfg.validate().is_err());
    }
}
