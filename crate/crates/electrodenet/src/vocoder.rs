//! Tone-vocoder resynthesis: channel amplitudes modulate continuous-phase
//! sine carriers and are summed back into an audible waveform.

use crate::ace::{Electrodogram, EnvelopeSource};
use crate::config::ChannelAllocation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum OutputNormalization {
    RmsTarget,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocoderConfig {
    /// One sine frequency per channel, strictly increasing, below Nyquist.
    pub carrier_freqs: Vec<f64>,
    pub envelope_source: EnvelopeSource,
    pub output_normalization: OutputNormalization,
    pub rms_target: f64,
}

impl VocoderConfig {
    pub fn new(carrier_freqs: Vec<f64>) -> Self {
        VocoderConfig {
            carrier_freqs,
            envelope_source: EnvelopeSource::PreLgf,
            output_normalization: OutputNormalization::RmsTarget,
            rms_target: 0.05,
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.carrier_freqs.is_empty() {
            return Err(Error::invalid("no carrier frequencies"));
        }
        let nyquist = sample_rate as f64 / 2.0;
        for w in self.carrier_freqs.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid("carriers must be strictly increasing"));
            }
        }
        if self
            .carrier_freqs
            .iter()
            .any(|&f| !(f > 0.0 && f < nyquist))
        {
            return Err(Error::invalid(format!(
                "carriers must lie in (0, {nyquist}) Hz"
            )));
        }
        if self.rms_target <= 0.0 {
            return Err(Error::invalid("rms_target must be positive"));
        }
        Ok(())
    }
}

impl Default for VocoderConfig {
    fn default() -> Self {
        let alloc = ChannelAllocation::default_22();
        VocoderConfig::new(carrier_defaults(&alloc, 125.0))
    }
}

/// Default carrier per channel: geometric mean of the channel's band-edge
/// frequencies, rounded to 0.1 Hz (e.g. channel 12 spanning 1875-2000 Hz
/// gets a 1936.5 Hz carrier).
pub fn carrier_defaults(allocation: &ChannelAllocation, bin_hz: f64) -> Vec<f64> {
    (0..allocation.num_channels())
        .map(|m| {
            let (lo, hi) = allocation.channel_band_hz(m, bin_hz);
            ((lo * hi).sqrt() * 10.0).round() / 10.0
        })
        .collect()
}

/// Resynthesize an electrodogram. Frame amplitudes are linearly
/// interpolated to the sample rate (held past the final frame) and
/// multiply continuous-phase sines; channels are summed.
pub fn vocode(elgr: &Electrodogram, vcfg: &VocoderConfig) -> Result<Vec<f64>> {
    vcfg.validate(elgr.sample_rate)?;
    let m = elgr.num_channels();
    if m != vcfg.carrier_freqs.len() {
        return Err(Error::invalid(format!(
            "electrodogram has {m} channels, vocoder expects {}",
            vcfg.carrier_freqs.len()
        )));
    }
    let hop = elgr.hop;
    let n_frames = elgr.frames.len();
    let n_samples = n_frames * hop;
    let fs = elgr.sample_rate as f64;
    let mut out = vec![0.0; n_samples];
    let two_pi = 2.0 * std::f64::consts::PI;
    for ch in 0..m {
        let omega = two_pi * vcfg.carrier_freqs[ch] / fs;
        let mut phase = 0.0f64;
        for n in 0..n_samples {
            // Envelope at sample n: interpolate between frame values
            // anchored at multiples of the hop.
            let f = n / hop;
            let a0 = elgr.frames[f].amplitudes[ch];
            let a1 = if f + 1 < n_frames {
                elgr.frames[f + 1].amplitudes[ch]
            } else {
                a0
            };
            let frac = (n - f * hop) as f64 / hop as f64;
            let amp = a0 + (a1 - a0) * frac;
            out[n] += amp * phase.sin();
            phase += omega;
            if phase > two_pi {
                phase -= two_pi;
            }
        }
    }
    if let OutputNormalization::RmsTarget = vcfg.output_normalization {
        let r = crate::corpus::rms(&out);
        if r > 0.0 {
            let scale = vcfg.rms_target / r;
            for v in &mut out {
                *v *= scale;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ace::StimulusFrame;
    use crate::config::StrategyConfig;
    use crate::corpus::rms;

    fn raw_config(carriers: Vec<f64>) -> VocoderConfig {
        VocoderConfig {
            carrier_freqs: carriers,
            envelope_source: EnvelopeSource::PreLgf,
            output_normalization: OutputNormalization::None,
            rms_target: 0.05,
        }
    }

    fn constant_elgr(amps: &[f64], frames: usize) -> Electrodogram {
        Electrodogram {
            frames: (0..frames)
                .map(|_| StimulusFrame {
                    amplitudes: amps.to_vec(),
                })
                .collect(),
            hop: 16,
            sample_rate: 16_000,
            num_maxima: amps.len(),
        }
    }

    #[test]
    fn zero_electrodogram_is_silence() {
        let elgr = constant_elgr(&[0.0, 0.0], 100);
        let out = vocode(&elgr, &raw_config(vec![500.0, 1000.0])).unwrap();
        assert_eq!(out.len(), 100 * 16);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_channel_has_sine_rms() {
        let a = 0.3;
        let elgr = constant_elgr(&[a], 1000);
        let out = vocode(&elgr, &raw_config(vec![1000.0])).unwrap();
        let r = rms(&out);
        let expect = a / 2f64.sqrt();
        assert!((r / expect - 1.0).abs() < 0.01, "rms {r} vs {expect}");
    }

    #[test]
    fn two_carriers_peak_at_expected_bins() {
        // Carriers on exact bin centers of the 128-point analyzer so the
        // spectral-peak check has no leakage ambiguity.
        let elgr = constant_elgr(&[0.5, 0.25], 64);
        let out = vocode(&elgr, &raw_config(vec![1000.0, 3000.0])).unwrap();
        let cfg = StrategyConfig::default();
        let analyzer = crate::dsp::Analyzer::new(&cfg);
        // Skip the first frame (interp ramp from the held first value is
        // flat for constant input, but keep away from edges anyway).
        let frame = analyzer.analyze(&out[128..256]).unwrap();
        let mags = &frame.magnitudes;
        // Bins: 1000/125 = 8, 3000/125 = 24. The Hann window leaks half
        // the peak into each immediate neighbor, so exempt those too.
        let peak_floor = mags[8].min(mags[24]);
        for (k, &mag) in mags.iter().enumerate() {
            if (7..=9).contains(&k) || (23..=25).contains(&k) {
                continue;
            }
            assert!(
                mag < peak_floor * 0.05,
                "unexpected energy at bin {k}: {mag} vs floor {peak_floor}"
            );
        }
        // Relative magnitudes follow the amplitudes.
        assert!((mags[8] / mags[24] - 2.0).abs() < 0.01);
    }

    #[test]
    fn linearity_in_amplitudes() {
        let mut elgr = constant_elgr(&[0.0; 3], 50);
        for (i, frame) in elgr.frames.iter_mut().enumerate() {
            frame.amplitudes = vec![
                (i as f64 * 0.37).sin().abs(),
                (i as f64 * 0.11).cos().abs(),
                if i % 3 == 0 { 0.8 } else { 0.0 },
            ];
        }
        let vcfg = raw_config(vec![500.0, 1500.0, 4000.0]);
        let base = vocode(&elgr, &vcfg).unwrap();
        let c = 2.5;
        let mut scaled = elgr.clone();
        for frame in &mut scaled.frames {
            for a in &mut frame.amplitudes {
                *a *= c;
            }
        }
        let out = vocode(&scaled, &vcfg).unwrap();
        for (y, x) in out.iter().zip(&base) {
            assert!((y - c * x).abs() < 1e-9);
        }
    }

    #[test]
    fn phase_continuity_bound() {
        let amps = [0.4, 0.3];
        let freqs = [700.0, 2200.0];
        let elgr = constant_elgr(&amps, 200);
        let out = vocode(&elgr, &raw_config(freqs.to_vec())).unwrap();
        let fs = 16_000.0;
        let bound: f64 = amps
            .iter()
            .zip(&freqs)
            .map(|(a, f)| a * 2.0 * std::f64::consts::PI * f / fs)
            .sum();
        for w in out.windows(2) {
            assert!((w[1] - w[0]).abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn energy_ordering_under_amplitude_increase() {
        let mut elgr = constant_elgr(&[0.2, 0.1], 80);
        let vcfg = raw_config(vec![1000.0, 2000.0]);
        let base = vocode(&elgr, &vcfg).unwrap();
        elgr.frames[40].amplitudes[0] = 0.9;
        let bumped = vocode(&elgr, &vcfg).unwrap();
        let e = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        assert!(e(&bumped) >= e(&base));
    }

    #[test]
    fn normalization_hits_rms_target() {
        let mut vcfg = VocoderConfig::default();
        vcfg.rms_target = 0.05;
        let elgr = constant_elgr(&vec![0.4; 22], 100);
        let out = vocode(&elgr, &vcfg).unwrap();
        assert!((rms(&out) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn default_carriers_match_channel_labels() {
        let alloc = ChannelAllocation::default_22();
        let carriers = carrier_defaults(&alloc, 125.0);
        assert_eq!(carriers.len(), 22);
        assert_eq!(carriers[0], 250.0);
        // Channel 12 spans bins 15-16 (1875-2000 Hz).
        assert!((carriers[11] - 1936.5).abs() < 1e-9);
        for w in carriers.windows(2) {
            assert!(w[1] > w[0]);
        }
        assert!(carriers.iter().all(|&f| f < 8000.0));
        // Each carrier lies within its band.
        for (m, &f) in carriers.iter().enumerate() {
            let (lo, hi) = alloc.channel_band_hz(m, 125.0);
            assert!(f >= lo - 0.05 && f <= hi + 0.05);
        }
    }

    #[test]
    fn channel_count_mismatch_rejected() {
        let elgr = constant_elgr(&[0.1, 0.2], 10);
        assert!(vocode(&elgr, &raw_config(vec![1000.0])).is_err());
        assert!(raw_config(vec![2000.0, 1000.0]).validate(16_000).is_err());
        assert!(raw_config(vec![1000.0, 9000.0]).validate(16_000).is_err());
    }
}
