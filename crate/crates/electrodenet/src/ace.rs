//! Back half of the ACE strategy: N-of-M maxima selection, loudness growth
//! mapping, and electrodogram assembly and file I/O.

use crate::config::StrategyConfig;
use crate::dsp::{self, ChannelEnvelopeFrame};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Loudness growth function parameters in linear envelope units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingConfig {
    pub base_level: f64,
    pub sat_level: f64,
    pub rho: f64,
}

impl MappingConfig {
    /// Standard Nucleus steepness with base at 4/256 of saturation.
    pub fn with_sat(sat_level: f64) -> Self {
        MappingConfig {
            base_level: sat_level * 4.0 / 256.0,
            sat_level,
            rho: 416.2064,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_level >= 0.0 && self.base_level < self.sat_level) {
            return Err(Error::invalid("require 0 <= base_level < sat_level"));
        }
        if self.rho <= 0.0 {
            return Err(Error::invalid("rho must be positive"));
        }
        Ok(())
    }

    /// Map one envelope value to a [0,1] stimulation level.
    pub fn lgf(&self, v: f64) -> f64 {
        let x = ((v - self.base_level) / (self.sat_level - self.base_level)).clamp(0.0, 1.0);
        (1.0 + self.rho * x).ln() / (1.0 + self.rho).ln()
    }
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig::with_sat(1.0)
    }
}

/// Which envelope domain an electrodogram's amplitudes live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvelopeSource {
    /// Post-selection envelopes before loudness mapping (linear units).
    PreLgf,
    /// Mapped stimulation levels in [0,1].
    PostLgf,
}

/// One frame of sparse stimulation amplitudes (at most N nonzero).
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusFrame {
    pub amplitudes: Vec<f64>,
}

impl StimulusFrame {
    /// Number of channels actually stimulated this frame.
    pub fn selected_count(&self) -> usize {
        self.amplitudes.iter().filter(|&&a| a > 0.0).count()
    }
}

/// Time-ordered stimulation pattern for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Electrodogram {
    pub frames: Vec<StimulusFrame>,
    pub hop: usize,
    pub sample_rate: u32,
    pub num_maxima: usize,
}

impl Electrodogram {
    pub fn num_channels(&self) -> usize {
        self.frames.first().map_or(0, |f| f.amplitudes.len())
    }
}

/// Keep the N largest envelopes, zero the rest. Ties at the cut prefer the
/// lower channel index. Zero envelopes never produce a nonzero output.
pub fn select_maxima(env: &ChannelEnvelopeFrame, n: usize) -> Result<ChannelEnvelopeFrame> {
    let m = env.envelopes.len();
    if n < 1 || n > m {
        return Err(Error::invalid(format!("N = {n} out of range 1..={m}")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    // Stable descending sort by value keeps lower indices first among ties.
    order.sort_by(|&a, &b| env.envelopes[b].partial_cmp(&env.envelopes[a]).unwrap());
    let mut out = vec![0.0; m];
    for &idx in order.iter().take(n) {
        out[idx] = env.envelopes[idx];
    }
    Ok(ChannelEnvelopeFrame { envelopes: out })
}

/// Apply the loudness growth function to a selected envelope frame.
/// Values at or below base_level map to zero and drop out of the
/// selected-count accounting.
pub fn apply_lgf(selected: &ChannelEnvelopeFrame, map: &MappingConfig) -> StimulusFrame {
    let amplitudes = selected
        .envelopes
        .iter()
        .map(|&v| if v > 0.0 { map.lgf(v) } else { 0.0 })
        .collect();
    StimulusFrame { amplitudes }
}

/// Full ACE pipeline for one utterance. `source` picks whether the emitted
/// amplitudes are mapped stimulation levels or raw post-selection envelopes
/// (the latter feed the vocoder by default).
pub fn ace_encode_with(
    signal: &[f64],
    cfg: &StrategyConfig,
    map: &MappingConfig,
    source: EnvelopeSource,
) -> Result<Electrodogram> {
    cfg.validate()?;
    map.validate()?;
    let mut frames = Vec::new();
    for (_, env) in dsp::encode_envelope_stream(signal, cfg)? {
        let selected = select_maxima(&env, cfg.num_maxima)?;
        let frame = match source {
            EnvelopeSource::PostLgf => apply_lgf(&selected, map),
            EnvelopeSource::PreLgf => StimulusFrame {
                amplitudes: selected.envelopes,
            },
        };
        frames.push(frame);
    }
    Ok(Electrodogram {
        frames,
        hop: cfg.hop,
        sample_rate: cfg.sample_rate,
        num_maxima: cfg.num_maxima,
    })
}

/// ACE pipeline emitting mapped stimulation levels.
pub fn ace_encode(
    signal: &[f64],
    cfg: &StrategyConfig,
    map: &MappingConfig,
) -> Result<Electrodogram> {
    ace_encode_with(signal, cfg, map, EnvelopeSource::PostLgf)
}

const ELGR_MAGIC: &[u8; 4] = b"ELGR";
const ELGR_VERSION: u32 = 1;

/// Write the binary electrodogram format: magic "ELGR", u32 version, u32 M,
/// u32 N, u32 hop, u32 sample_rate, u64 frame_count, then dense rows of M
/// little-endian f32 amplitudes.
pub fn write_elgr<W: Write>(w: &mut W, elgr: &Electrodogram) -> std::io::Result<()> {
    let m = elgr.num_channels() as u32;
    w.write_all(ELGR_MAGIC)?;
    w.write_all(&ELGR_VERSION.to_le_bytes())?;
    w.write_all(&m.to_le_bytes())?;
    w.write_all(&(elgr.num_maxima as u32).to_le_bytes())?;
    w.write_all(&(elgr.hop as u32).to_le_bytes())?;
    w.write_all(&elgr.sample_rate.to_le_bytes())?;
    w.write_all(&(elgr.frames.len() as u64).to_le_bytes())?;
    for frame in &elgr.frames {
        for &a in &frame.amplitudes {
            w.write_all(&(a as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_elgr<R: Read>(r: &mut R) -> Result<Electrodogram> {
    let mut head = [0u8; 4];
    r.read_exact(&mut head)
        .map_err(|_| Error::Truncated("electrodogram header".into()))?;
    if &head != ELGR_MAGIC {
        return Err(Error::Format("bad electrodogram magic".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut u32buf)
            .map_err(|_| Error::Truncated("electrodogram header".into()))?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let version = read_u32(r)?;
    if version != ELGR_VERSION {
        return Err(Error::Format(format!(
            "unsupported electrodogram version {version}"
        )));
    }
    let m = read_u32(r)? as usize;
    let n = read_u32(r)? as usize;
    let hop = read_u32(r)? as usize;
    let sample_rate = read_u32(r)?;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)
        .map_err(|_| Error::Truncated("electrodogram header".into()))?;
    let frame_count = u64::from_le_bytes(u64buf) as usize;
    let mut frames = Vec::with_capacity(frame_count);
    let mut f32buf = [0u8; 4];
    for _ in 0..frame_count {
        let mut amplitudes = Vec::with_capacity(m);
        for _ in 0..m {
            r.read_exact(&mut f32buf)
                .map_err(|_| Error::Truncated("electrodogram frames".into()))?;
            amplitudes.push(f32::from_le_bytes(f32buf) as f64);
        }
        frames.push(StimulusFrame { amplitudes });
    }
    Ok(Electrodogram {
        frames,
        hop,
        sample_rate,
        num_maxima: n,
    })
}

/// CSV export: header `frame,channel,amplitude`, one row per nonzero
/// stimulus. Channels are 1-based as in the electrodogram plots.
pub fn elgr_to_csv(elgr: &Electrodogram) -> String {
    let mut out = String::from("frame,channel,amplitude\n");
    for (f, frame) in elgr.frames.iter().enumerate() {
        for (ch, &a) in frame.amplitudes.iter().enumerate() {
            if a > 0.0 {
                out.push_str(&format!("{},{},{}\n", f, ch + 1, a));
            }
        }
    }
    out
}
