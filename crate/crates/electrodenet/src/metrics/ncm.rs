//! Normalized covariance metric: band envelope correlations mapped through
//! an apparent-SNR transmission index and band-importance weighting.

use crate::error::{Error, Result};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

const FS: f64 = 16_000.0;
const ENV_RATE: f64 = 100.0;
const ENV_LP_HZ: f64 = 32.0;
const SNR_CLAMP_DB: f64 = 15.0;

#[derive(Debug, Clone, PartialEq)]
pub struct NcmConfig {
    pub num_bands: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    /// Band-importance weights; normalized internally.
    pub weights: Vec<f64>,
}

impl Default for NcmConfig {
    fn default() -> Self {
        // Importance-style weighting: a broad emphasis over the 1-3 kHz
        // region in the spirit of the articulation-index band tables.
        let num_bands = 20;
        let cfg = NcmConfig {
            num_bands,
            low_hz: 150.0,
            high_hz: 7000.0,
            weights: Vec::new(),
        };
        let weights = (0..num_bands)
            .map(|j| {
                let (lo, hi) = cfg.band_edges(j);
                let cf = (lo * hi).sqrt();
                // Log-frequency Gaussian bump centered near 1.8 kHz.
                let z = ((cf / 1800.0).ln() / 1.0f64).powi(2);
                (0.5 + (-0.5 * z).exp()).max(0.1)
            })
            .collect();
        NcmConfig { weights, ..cfg }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl NcmConfig {
    /// Mel-spaced band edges for band `j`.
    pub fn band_edges(&self, j: usize) -> (f64, f64) {
        let m_lo = hz_to_mel(self.low_hz);
        let m_hi = hz_to_mel(self.high_hz);
        let step = (m_hi - m_lo) / self.num_bands as f64;
        (
            mel_to_hz(m_lo + j as f64 * step),
            mel_to_hz(m_lo + (j + 1) as f64 * step),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_bands < 1 || self.weights.len() != self.num_bands {
            return Err(Error::invalid("NCM weights must match band count"));
        }
        if !(0.0 < self.low_hz && self.low_hz < self.high_hz && self.high_hz <= FS / 2.0) {
            return Err(Error::invalid("NCM band range out of order"));
        }
        if self.weights.iter().any(|&w| w < 0.0) || self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("NCM weights must be nonnegative, not all zero"));
        }
        Ok(())
    }
}

/// One biquad section, direct form II transposed.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    fn run(&self, x: &mut [f64]) {
        let mut z1 = 0.0;
        let mut z2 = 0.0;
        for v in x {
            let input = *v;
            let y = self.b0 * input + z1;
            z1 = self.b1 * input - self.a1 * y + z2;
            z2 = self.b2 * input - self.a2 * y;
            *v = y;
        }
    }
}

/// 4th-order Butterworth low-pass as two bilinear-transformed sections,
/// applied forward only (causal).
pub fn butter4_lowpass(signal: &mut [f64], fc: f64, fs: f64) {
    let omega = (std::f64::consts::PI * fc / fs).tan();
    // Section damping ratios: sin((2k+1)pi/8) for a 4th-order prototype.
    for &zeta in &[
        (std::f64::consts::PI / 8.0).sin(),
        (3.0 * std::f64::consts::PI / 8.0).sin(),
    ] {
        let d = 1.0 + 2.0 * zeta * omega + omega * omega;
        let sec = Biquad {
            b0: omega * omega / d,
            b1: 2.0 * omega * omega / d,
            b2: omega * omega / d,
            a1: 2.0 * (omega * omega - 1.0) / d,
            a2: (1.0 - 2.0 * zeta * omega + omega * omega) / d,
        };
        sec.run(signal);
    }
}

/// Brick-wall FFT band split of the whole utterance.
fn band_signals(signal: &[f64], cfg: &NcmConfig) -> Vec<Vec<f64>> {
    let n = signal.len().next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut spec = vec![Complex::new(0.0, 0.0); n];
    for (s, &x) in spec.iter_mut().zip(signal) {
        *s = Complex::new(x, 0.0);
    }
    fft.process(&mut spec);
    let bin_hz = FS / n as f64;
    (0..cfg.num_bands)
        .map(|j| {
            let (lo, hi) = cfg.band_edges(j);
            let lo_bin = (lo / bin_hz).ceil() as usize;
            let hi_bin = ((hi / bin_hz).ceil() as usize).min(n / 2 + 1);
            let mut band = vec![Complex::new(0.0, 0.0); n];
            for k in lo_bin..hi_bin {
                band[k] = spec[k];
                if k > 0 && k < n / 2 {
                    band[n - k] = spec[n - k];
                }
            }
            ifft.process(&mut band);
            band[..signal.len()]
                .iter()
                .map(|c| c.re / n as f64)
                .collect()
        })
        .collect()
}

/// Full-wave rectify, 32 Hz low-pass, decimate to the 100 Hz envelope rate.
fn envelope(band: &[f64]) -> Vec<f64> {
    let mut rect: Vec<f64> = band.iter().map(|v| v.abs()).collect();
    butter4_lowpass(&mut rect, ENV_LP_HZ, FS);
    let step = (FS / ENV_RATE) as usize;
    rect.iter().step_by(step).cloned().collect()
}

fn normalized_covariance(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        None
    } else {
        Some(sab / (saa * sbb).sqrt())
    }
}

pub fn ncm_with(clean: &[f64], processed: &[f64], cfg: &NcmConfig) -> Result<f64> {
    cfg.validate()?;
    let mut proc_: Vec<f64> = processed.to_vec();
    proc_.resize(clean.len(), 0.0);
    let min_env = 30; // 0.3 s of envelope at 100 Hz
    if clean.len() < min_env * (FS / ENV_RATE) as usize {
        return Err(Error::TooShort(format!(
            "need at least {} samples for NCM, have {}",
            min_env * (FS / ENV_RATE) as usize,
            clean.len()
        )));
    }
    let c_bands = band_signals(clean, cfg);
    let p_bands = band_signals(&proc_, cfg);
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..cfg.num_bands {
        let ce = envelope(&c_bands[j]);
        let pe = envelope(&p_bands[j]);
        let r = match normalized_covariance(&ce, &pe) {
            Some(r) => r,
            // Flat clean envelope carries no information: skip the band.
            None => {
                if crate::corpus::rms(&ce) == crate::corpus::rms(&pe) {
                    continue;
                }
                0.0
            }
        };
        let r2 = (r * r).min(1.0 - 1e-15);
        let snr = (10.0 * (r2 / (1.0 - r2)).log10()).clamp(-SNR_CLAMP_DB, SNR_CLAMP_DB);
        let ti = (snr + SNR_CLAMP_DB) / (2.0 * SNR_CLAMP_DB);
        num += cfg.weights[j] * ti;
        den += cfg.weights[j];
    }
    if den == 0.0 {
        return Err(Error::TooShort("no informative bands for NCM".into()));
    }
    Ok(num / den)
}

pub fn ncm(clean: &[f64], processed: &[f64]) -> Result<f64> {
    ncm_with(clean, processed, &NcmConfig::default())
}
