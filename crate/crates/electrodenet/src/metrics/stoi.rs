//! Short-time objective intelligibility: one-third-octave band envelopes
//! compared over 384 ms segments after silent-frame removal.

use super::resample::to_10k;
use crate::error::{Error, Result};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

const FS: f64 = 10_000.0;
const FRAME: usize = 256;
const HOP: usize = 128;
const NFFT: usize = 512;
const NUM_BANDS: usize = 15;
const LOWEST_CF: f64 = 150.0;
const SEG_FRAMES: usize = 30;
const DYN_RANGE_DB: f64 = 40.0;
const CLIP_DB: f64 = -15.0;

fn hann(len: usize) -> Vec<f64> {
    crate::dsp::hann_window(len)
}

/// Drop frames whose clean-signal energy is more than 40 dB below the
/// loudest frame, overlap-adding the survivors back into waveforms.
fn remove_silent_frames(clean: &[f64], proc_: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann(FRAME);
    let n_frames = if clean.len() < FRAME {
        0
    } else {
        (clean.len() - FRAME) / HOP + 1
    };
    let mut energies = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let start = f * HOP;
        let e: f64 = clean[start..start + FRAME]
            .iter()
            .zip(&w)
            .map(|(&x, &wn)| (x * wn) * (x * wn))
            .sum();
        energies.push(10.0 * (e + 1e-300).log10());
    }
    let max_e = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..n_frames)
        .filter(|&f| energies[f] > max_e - DYN_RANGE_DB)
        .collect();
    let out_len = if keep.is_empty() {
        0
    } else {
        keep.len() * HOP + (FRAME - HOP)
    };
    let mut c_out = vec![0.0; out_len];
    let mut p_out = vec![0.0; out_len];
    for (slot, &f) in keep.iter().enumerate() {
        let src = f * HOP;
        let dst = slot * HOP;
        for n in 0..FRAME {
            c_out[dst + n] += clean[src + n] * w[n];
            p_out[dst + n] += proc_[src + n] * w[n];
        }
    }
    (c_out, p_out)
}

/// One-third-octave band edges over the 512-point FFT grid: 15 bands with
/// center frequencies 150·2^(k/3).
fn band_bins() -> Vec<(usize, usize)> {
    let bin_hz = FS / NFFT as f64;
    (0..NUM_BANDS)
        .map(|k| {
            let cf = LOWEST_CF * 2f64.powf(k as f64 / 3.0);
            let lo = cf / 2f64.powf(1.0 / 6.0);
            let hi = cf * 2f64.powf(1.0 / 6.0);
            let lo_bin = (lo / bin_hz).ceil() as usize;
            let hi_bin = ((hi / bin_hz).ceil() as usize).min(NFFT / 2 + 1);
            (lo_bin, hi_bin)
        })
        .collect()
}

/// STFT magnitude-squared, then one-third-octave band magnitudes per frame:
/// rows are frames, columns the 15 bands.
fn band_spectrogram(signal: &[f64]) -> Vec<[f64; NUM_BANDS]> {
    let w = hann(FRAME);
    let bands = band_bins();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(NFFT);
    let n_frames = if signal.len() < FRAME {
        0
    } else {
        (signal.len() - FRAME) / HOP + 1
    };
    let mut out = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let start = f * HOP;
        let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
        for n in 0..FRAME {
            buf[n] = Complex::new(signal[start + n] * w[n], 0.0);
        }
        fft.process(&mut buf);
        let mut row = [0.0; NUM_BANDS];
        for (j, &(lo, hi)) in bands.iter().enumerate() {
            row[j] = buf[lo..hi]
                .iter()
                .map(|c| c.norm_sqr())
                .sum::<f64>()
                .sqrt();
        }
        out.push(row);
    }
    out
}

fn segment_correlation(x: &[[f64; NUM_BANDS]], y: &[[f64; NUM_BANDS]]) -> f64 {
    let clip = 10f64.powf(CLIP_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for end in SEG_FRAMES..=x.len() {
        let xs = &x[end - SEG_FRAMES..end];
        let ys = &y[end - SEG_FRAMES..end];
        for j in 0..NUM_BANDS {
            let xj: Vec<f64> = xs.iter().map(|r| r[j]).collect();
            let yj: Vec<f64> = ys.iter().map(|r| r[j]).collect();
            let x_norm: f64 = xj.iter().map(|v| v * v).sum::<f64>().sqrt();
            let y_norm: f64 = yj.iter().map(|v| v * v).sum::<f64>().sqrt();
            let alpha = if y_norm > 0.0 { x_norm / y_norm } else { 0.0 };
            // Normalize the degraded band to the clean energy, clip 15 dB
            // below the clean envelope.
            let yc: Vec<f64> = yj
                .iter()
                .zip(&xj)
                .map(|(&yv, &xv)| (alpha * yv).min(xv * (1.0 + clip)))
                .collect();
            let mx = xj.iter().sum::<f64>() / SEG_FRAMES as f64;
            let my = yc.iter().sum::<f64>() / SEG_FRAMES as f64;
            let mut sxy = 0.0;
            let mut sxx = 0.0;
            let mut syy = 0.0;
            for t in 0..SEG_FRAMES {
                let dx = xj[t] - mx;
                let dy = yc[t] - my;
                sxy += dx * dy;
                sxx += dx * dx;
                syy += dy * dy;
            }
            let d = if sxx > 0.0 && syy > 0.0 {
                sxy / (sxx * syy).sqrt()
            } else if sxx == 0.0 && syy == 0.0 {
                1.0
            } else {
                0.0
            };
            total += d;
            count += 1;
        }
    }
    total / count as f64
}

/// STOI over 16 kHz inputs. `processed` is truncated or zero-padded to the
/// clean length before scoring.
pub fn stoi(clean: &[f64], processed: &[f64]) -> Result<f64> {
    let mut proc_: Vec<f64> = processed.to_vec();
    proc_.resize(clean.len(), 0.0);
    let c10 = to_10k(clean);
    let p10 = to_10k(&proc_);
    let (c, p) = remove_silent_frames(&c10, &p10);
    let min_len = FRAME + (SEG_FRAMES - 1) * HOP;
    if c.len() < min_len {
        return Err(Error::TooShort(format!(
            "need {min_len} active samples at 10 kHz, have {}",
            c.len()
        )));
    }
    let xs = band_spectrogram(&c);
    let ys = band_spectrogram(&p);
    Ok(segment_correlation(&xs, &ys))
}
