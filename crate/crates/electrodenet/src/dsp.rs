//! Framing, Hann windowing, FFT analysis, and power-sum envelope detection:
//! the front half of the ACE signal path.

use crate::config::StrategyConfig;
use crate::error::{Error, Result};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::sync::Arc;

/// One frame of linear FFT-bin magnitudes (bins 0..=K/2).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrame {
    pub magnitudes: Vec<f64>,
}

/// Per-channel envelopes for one analysis frame, pre-mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEnvelopeFrame {
    pub envelopes: Vec<f64>,
}

/// Periodic Hann window, w[n] = 0.5 (1 - cos(2 pi n / K)).
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()))
        .collect()
}

/// Cut a signal into hop-advanced K-sample frames; the tail is zero-padded.
/// An empty signal yields no frames.
pub fn frame_signal(signal: &[f64], cfg: &StrategyConfig) -> Vec<Vec<f64>> {
    if signal.is_empty() {
        return Vec::new();
    }
    let k = cfg.frame_len;
    let n_frames = signal.len().div_ceil(cfg.hop);
    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let start = f * cfg.hop;
        let mut frame = vec![0.0; k];
        let avail = signal.len().saturating_sub(start).min(k);
        frame[..avail].copy_from_slice(&signal[start..start + avail]);
        frames.push(frame);
    }
    frames
}

/// Reusable FFT analyzer for a fixed frame length.
pub struct Analyzer {
    window: Vec<f64>,
    fft: Arc<dyn rustfft::Fft<f64>>,
    frame_len: usize,
    num_bins: usize,
}

impl Analyzer {
    pub fn new(cfg: &StrategyConfig) -> Self {
        let mut planner = FftPlanner::new();
        Analyzer {
            window: hann_window(cfg.frame_len),
            fft: planner.plan_fft_forward(cfg.frame_len),
            frame_len: cfg.frame_len,
            num_bins: cfg.num_bins,
        }
    }

    /// Magnitudes of the K-point DFT of the Hann-windowed frame.
    pub fn analyze(&self, frame: &[f64]) -> Result<SpectralFrame> {
        if frame.len() != self.frame_len {
            return Err(Error::invalid(format!(
                "frame length {} != {}",
                frame.len(),
                self.frame_len
            )));
        }
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .map(|(&x, &w)| Complex::new(x * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        Ok(SpectralFrame {
            magnitudes: buf[..self.num_bins].iter().map(|c| c.norm()).collect(),
        })
    }
}

/// Hann-window and FFT one frame.
pub fn analyze_frame(frame: &[f64], cfg: &StrategyConfig) -> Result<SpectralFrame> {
    Analyzer::new(cfg).analyze(frame)
}

/// Power-sum combination of L bins into M channel envelopes:
/// envelope[m] = gain[m] * sqrt(sum of squared magnitudes over the channel's bins).
pub fn detect_envelopes(spec: &SpectralFrame, cfg: &StrategyConfig) -> ChannelEnvelopeFrame {
    let alloc = &cfg.allocation;
    let envelopes = (0..cfg.num_channels)
        .map(|m| {
            let (lo, hi) = alloc.channel_bins(m);
            let power: f64 = spec.magnitudes[lo..hi].iter().map(|v| v * v).sum();
            alloc.gains[m] * power.sqrt()
        })
        .collect();
    ChannelEnvelopeFrame { envelopes }
}

/// Full front half for one utterance: paired (bins, envelopes) per frame.
/// The paired sequence is the per-utterance distillation dataset.
pub fn encode_envelope_stream(
    signal: &[f64],
    cfg: &StrategyConfig,
) -> Result<Vec<(SpectralFrame, ChannelEnvelopeFrame)>> {
    let analyzer = Analyzer::new(cfg);
    frame_signal(signal, cfg)
        .iter()
        .map(|frame| {
            let spec = analyzer.analyze(frame)?;
            let env = detect_envelopes(&spec, cfg);
            Ok((spec, env))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Naive O(K^2) DFT magnitude oracle.
    fn naive_dft_mag(frame: &[f64], window: &[f64], num_bins: usize) -> Vec<f64> {
        let k = frame.len();
        (0..num_bins)
            .map(|bin| {
                let (mut re, mut im) = (0.0, 0.0);
                for n in 0..k {
                    let phase = -2.0 * std::f64::consts::PI * bin as f64 * n as f64 / k as f64;
                    let x = frame[n] * window[n];
                    re += x * phase.cos();
                    im += x * phase.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn framing_counts_and_layout() {
        let cfg = StrategyConfig::default();
        let signal: Vec<f64> = (0..128).map(|i| i as f64).collect();
        let frames = frame_signal(&signal, &cfg);
        assert_eq!(frames.len(), 8);
        assert_eq!(frames[0], signal);
        assert_eq!(frames[1][..112], signal[16..]);
        assert!(frames[1][112..].iter().all(|&v| v == 0.0));

        assert_eq!(frame_signal(&[], &cfg).len(), 0);
        assert_eq!(frame_signal(&vec![0.0; 1600], &cfg).len(), 100);
        assert_eq!(frame_signal(&vec![0.0; 16000], &cfg).len(), 1000);
    }

    #[test]
    fn analyze_zero_frame() {
        let cfg = StrategyConfig::default();
        let spec = analyze_frame(&vec![0.0; 128], &cfg).unwrap();
        assert_eq!(spec.magnitudes, vec![0.0; 65]);
    }

    #[test]
    fn analyze_rejects_wrong_length() {
        let cfg = StrategyConfig::default();
        assert!(analyze_frame(&vec![0.0; 64], &cfg).is_err());
    }

    #[test]
    fn all_ones_frame_gives_window_sum_at_dc() {
        let cfg = StrategyConfig::default();
        let spec = analyze_frame(&vec![1.0; 128], &cfg).unwrap();
        // Periodic Hann sums to K/2 = 64 exactly.
        assert!((spec.magnitudes[0] - 64.0).abs() < 1e-9);
        for bin in 3..65 {
            assert!(spec.magnitudes[bin] < 1e-9, "bin {bin} leaked");
        }
        let window = hann_window(128);
        let oracle = naive_dft_mag(&vec![1.0; 128], &window, 65);
        for bin in 0..65 {
            assert!((spec.magnitudes[bin] - oracle[bin]).abs() < 1e-9);
        }
    }

    #[test]
    fn sine_peak_at_expected_bin() {
        let cfg = StrategyConfig::default();
        let frame: Vec<f64> = (0..128)
            .map(|n| (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 16000.0).sin())
            .collect();
        let spec = analyze_frame(&frame, &cfg).unwrap();
        let peak = spec
            .magnitudes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 8); // 1000 Hz / 125 Hz per bin
        let window = hann_window(128);
        let oracle = naive_dft_mag(&frame, &window, 65);
        assert!((spec.magnitudes[8] - oracle[8]).abs() < 1e-9);
    }

    #[test]
    fn fft_matches_naive_dft_on_random_frames() {
        let cfg = StrategyConfig::default();
        let window = hann_window(128);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let frame: Vec<f64> = (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let spec = analyze_frame(&frame, &cfg).unwrap();
            let oracle = naive_dft_mag(&frame, &window, 65);
            for bin in 0..65 {
                assert!((spec.magnitudes[bin] - oracle[bin]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn magnitude_scaling_is_linear() {
        let cfg = StrategyConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frame: Vec<f64> = (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scaled: Vec<f64> = frame.iter().map(|&x| 7.5 * x).collect();
        let a = analyze_frame(&frame, &cfg).unwrap();
        let b = analyze_frame(&scaled, &cfg).unwrap();
        for bin in 0..65 {
            let rel = (b.magnitudes[bin] - 7.5 * a.magnitudes[bin]).abs()
                / (7.5 * a.magnitudes[bin]).max(1e-30);
            assert!(rel < 1e-9 || b.magnitudes[bin].abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_full_spectrum() {
        let cfg = StrategyConfig::default();
        let window = hann_window(128);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frame: Vec<f64> = (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Two-sided spectrum energy from the one-sided magnitudes.
        let spec = analyze_frame(&frame, &cfg).unwrap();
        let mut spec_energy = spec.magnitudes[0].powi(2) + spec.magnitudes[64].powi(2);
        for bin in 1..64 {
            spec_energy += 2.0 * spec.magnitudes[bin].powi(2);
        }
        let time_energy: f64 = frame
            .iter()
            .zip(&window)
            .map(|(&x, &w)| (x * w) * (x * w))
            .sum();
        let rel = (spec_energy - 128.0 * time_energy).abs() / (128.0 * time_energy);
        assert!(rel < 1e-6);
    }

    #[test]
    fn envelope_power_sum_three_four_five() {
        let cfg = StrategyConfig::default();
        // Channel 10 covers two bins under the default allocation.
        let (lo, hi) = cfg.allocation.channel_bins(9);
        assert_eq!(hi - lo, 2);
        let mut mags = vec![0.0; 65];
        mags[lo] = 3.0;
        mags[lo + 1] = 4.0;
        let env = detect_envelopes(&SpectralFrame { magnitudes: mags }, &cfg);
        assert!((env.envelopes[9] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_matches_bruteforce_oracle() {
        let cfg = StrategyConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let mags: Vec<f64> = (0..65).map(|_| rng.gen_range(0.0..10.0)).collect();
            let spec = SpectralFrame {
                magnitudes: mags.clone(),
            };
            let env = detect_envelopes(&spec, &cfg);
            for m in 0..22 {
                let (lo, hi) = cfg.allocation.channel_bins(m);
                let mut power = 0.0;
                for b in lo..hi {
                    power += mags[b] * mags[b];
                }
                let expect = cfg.allocation.gains[m] * power.sqrt();
                assert!((env.envelopes[m] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn envelope_monotone_in_bin_magnitude() {
        let cfg = StrategyConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mags: Vec<f64> = (0..65).map(|_| rng.gen_range(0.0..10.0)).collect();
        let base = detect_envelopes(
            &SpectralFrame {
                magnitudes: mags.clone(),
            },
            &cfg,
        );
        for bin in 0..65 {
            let mut bumped = mags.clone();
            bumped[bin] += 1.0;
            let env = detect_envelopes(&SpectralFrame { magnitudes: bumped }, &cfg);
            for m in 0..22 {
                assert!(env.envelopes[m] >= base.envelopes[m] - 1e-12);
            }
        }
    }

    #[test]
    fn stream_pairs_align_with_framing() {
        let cfg = StrategyConfig::default();
        let zero = encode_envelope_stream(&vec![0.0; 320], &cfg).unwrap();
        assert_eq!(zero.len(), 20);
        assert!(zero
            .iter()
            .all(|(s, e)| s.magnitudes.iter().all(|&v| v == 0.0)
                && e.envelopes.iter().all(|&v| v == 0.0)));

        let one = encode_envelope_stream(&vec![0.5; 10], &cfg).unwrap();
        assert_eq!(one.len(), 1);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sig: Vec<f64> = (0..5000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pairs = encode_envelope_stream(&sig, &cfg).unwrap();
        assert_eq!(pairs.len(), frame_signal(&sig, &cfg).len());
    }
}
