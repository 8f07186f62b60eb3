//! Corpus tools: noise generation (white, speech-shaped, file-based),
//! SNR mixing, and train/test split manifests.

use crate::error::{Error, Result};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseKind {
    Ssn,
    White,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub seed: u64,
    #[serde(default)]
    pub source_path: Option<String>,
    /// FIR taps fitted to the corpus long-term spectrum (SSN only).
    #[serde(default)]
    pub ssn_filter: Option<Vec<f64>>,
    /// Set when file noise was shorter than a target and had to loop.
    #[serde(default)]
    pub looped: bool,
}

/// One evaluation condition; `snr_db = None` is the quiet condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixCondition {
    pub snr_db: Option<f64>,
    pub noise_label: String,
}

impl MixCondition {
    pub fn snr_label(&self) -> String {
        match self.snr_db {
            Some(db) => format!("{db}"),
            None => "quiet".to_string(),
        }
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Seeded Gaussian white noise (Box-Muller), approximately unit RMS.
pub fn gen_white(seed: u64, length: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(length + 1);
    while out.len() < length {
        let u1: f64 = loop {
            let v = rng.gen::<f64>();
            if v > 0.0 {
                break v;
            }
        };
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(r * theta.cos());
        out.push(r * theta.sin());
    }
    out.truncate(length);
    out
}

/// Mix noise into clean speech at an exact full-utterance RMS SNR.
/// `noise` must be at least as long as `clean`; its leading samples are used
/// (crop with an offset upstream for variety).
pub fn mix_at_snr(clean: &[f64], noise: &[f64], snr_db: f64) -> Result<Vec<f64>> {
    if noise.len() < clean.len() {
        return Err(Error::invalid("noise shorter than clean signal"));
    }
    let clean_rms = rms(clean);
    let noise_rms = rms(&noise[..clean.len()]);
    if clean_rms == 0.0 || noise_rms == 0.0 {
        return Err(Error::invalid("zero-RMS signal in SNR mixing"));
    }
    let scale = clean_rms / (noise_rms * 10f64.powf(snr_db / 20.0));
    Ok(clean
        .iter()
        .zip(noise)
        .map(|(&c, &n)| c + scale * n)
        .collect())
}

/// Apply a condition: quiet passes the clean signal through bit-exactly.
pub fn apply_condition(clean: &[f64], noise: &[f64], cond: &MixCondition) -> Result<Vec<f64>> {
    match cond.snr_db {
        None => Ok(clean.to_vec()),
        Some(db) => mix_at_snr(clean, noise, db),
    }
}

/// Welch-averaged one-sided power spectrum: Hann window, 50% overlap.
pub fn welch_psd(signal: &[f64], nfft: usize) -> Vec<f64> {
    let hop = nfft / 2;
    let window = crate::dsp::hann_window(nfft);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(nfft);
    let mut acc = vec![0.0; nfft / 2 + 1];
    let mut count = 0usize;
    let mut start = 0;
    while start + nfft <= signal.len() {
        let mut buf: Vec<Complex<f64>> = signal[start..start + nfft]
            .iter()
            .zip(&window)
            .map(|(&x, &w)| Complex::new(x * w, 0.0))
            .collect();
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf[..nfft / 2 + 1]) {
            *a += c.norm_sqr();
        }
        count += 1;
        start += hop;
    }
    if count > 0 {
        for a in &mut acc {
            *a /= count as f64;
        }
    }
    acc
}

const SSN_TAPS: usize = 512;
const SSN_NFFT: usize = 256;

/// Fit a 512-tap near-linear-phase FIR to the corpus long-term average
/// spectrum (Welch, 256-point, pooled over all utterances).
pub fn fit_ssn(corpus: &[Vec<f64>], seed: u64) -> Result<NoiseSpec> {
    if corpus.is_empty() || corpus.iter().all(|u| u.len() < SSN_NFFT) {
        return Err(Error::invalid("empty corpus for SSN fitting"));
    }
    // Pool Welch periodograms across utterances, weighted by segment count.
    let mut acc = vec![0.0; SSN_NFFT / 2 + 1];
    let mut total_segments = 0usize;
    for utt in corpus {
        if utt.len() < SSN_NFFT {
            continue;
        }
        let segs = (utt.len() - SSN_NFFT) / (SSN_NFFT / 2) + 1;
        let psd = welch_psd(utt, SSN_NFFT);
        for (a, p) in acc.iter_mut().zip(&psd) {
            *a += p * segs as f64;
        }
        total_segments += segs;
    }
    for a in &mut acc {
        *a /= total_segments as f64;
    }
    let target_mag: Vec<f64> = acc.iter().map(|&p| p.sqrt().max(1e-12)).collect();

    // Frequency sampling on a 512-point grid: interpolate the 129-bin
    // target, inverse FFT, center, Hann-window to 512 taps.
    let grid = SSN_TAPS;
    let half = grid / 2;
    let mut spectrum = vec![Complex::new(0.0, 0.0); grid];
    for k in 0..=half {
        let pos = k as f64 * (SSN_NFFT / 2) as f64 / half as f64;
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        let mag = if lo + 1 <= SSN_NFFT / 2 {
            target_mag[lo] * (1.0 - frac) + target_mag[lo + 1] * frac
        } else {
            target_mag[SSN_NFFT / 2]
        };
        spectrum[k] = Complex::new(mag, 0.0);
        if k > 0 && k < half {
            spectrum[grid - k] = Complex::new(mag, 0.0);
        }
    }
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(grid);
    ifft.process(&mut spectrum);
    let window = crate::dsp::hann_window(SSN_TAPS);
    let taps: Vec<f64> = (0..SSN_TAPS)
        .map(|n| {
            // Rotate so the (zero-phase) impulse response is centered.
            let src = (n + half) % grid;
            spectrum[src].re / grid as f64 * window[n]
        })
        .collect();
    Ok(NoiseSpec {
        kind: NoiseKind::Ssn,
        seed,
        source_path: None,
        ssn_filter: Some(taps),
        looped: false,
    })
}

fn convolve(signal: &[f64], taps: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; signal.len()];
    for (n, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        let k_max = taps.len().min(n + 1);
        for k in 0..k_max {
            acc += taps[k] * signal[n - k];
        }
        *o = acc;
    }
    out
}

/// Generate a unit-RMS noise buffer from a spec. File noise shorter than
/// the requested length is looped (and flagged in the returned spec).
pub fn gen_noise(spec: &NoiseSpec, length: usize) -> Result<(Vec<f64>, bool)> {
    match spec.kind {
        NoiseKind::White => Ok((gen_white(spec.seed, length), false)),
        NoiseKind::Ssn => {
            let taps = spec
                .ssn_filter
                .as_ref()
                .ok_or_else(|| Error::invalid("SSN spec missing fitted taps"))?;
            // Extra lead-in swallows the filter transient.
            let white = gen_white(spec.seed, length + taps.len());
            let filtered = convolve(&white, taps);
            let out: Vec<f64> = filtered[taps.len()..].to_vec();
            let r = rms(&out);
            if r == 0.0 {
                return Err(Error::invalid("SSN generation produced silence"));
            }
            Ok((out.iter().map(|v| v / r).collect(), false))
        }
        NoiseKind::File => {
            let path = spec
                .source_path
                .as_ref()
                .ok_or_else(|| Error::invalid("file noise spec missing path"))?;
            let samples = crate::wav::read_wav(Path::new(path))?;
            if samples.is_empty() {
                return Err(Error::invalid(format!("{path}: empty noise file")));
            }
            let looped = samples.len() < length;
            let mut out = Vec::with_capacity(length);
            while out.len() < length {
                let take = (length - out.len()).min(samples.len());
                out.extend_from_slice(&samples[..take]);
            }
            let r = rms(&out);
            if r == 0.0 {
                return Err(Error::invalid(format!("{path}: zero-RMS noise")));
            }
            Ok((out.iter().map(|v| v / r).collect(), looped))
        }
    }
}

/// Seeded crop offset for a noise buffer longer than the target.
pub fn noise_offset(noise_len: usize, clean_len: usize, rng: &mut impl RngCore) -> usize {
    if noise_len <= clean_len {
        0
    } else {
        (rng.next_u64() % (noise_len - clean_len + 1) as u64) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub tag: String,
    pub split: Split,
}

/// Text manifest, one `path<TAB>tag<TAB>split` line per file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Format(format!(
                    "manifest line {}: expected path<TAB>tag<TAB>split",
                    ln + 1
                )));
            }
            let split = match fields[2] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => {
                    return Err(Error::Format(format!(
                        "manifest line {}: unknown split `{other}`",
                        ln + 1
                    )))
                }
            };
            entries.push(ManifestEntry {
                path: fields[0].to_string(),
                tag: fields[1].to_string(),
                split,
            });
        }
        Ok(Manifest { entries })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.path, e.tag, e.split.as_str()));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Manifest::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn paths(&self, split: Split) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.path.as_str())
            .collect()
    }
}

/// Partition (path, tag) pairs into a manifest by a disjoint tag rule:
/// everything whose tag is in `train_tags` trains, the rest tests.
pub fn split_manifest(corpus: &[(String, String)], train_tags: &[String]) -> Result<Manifest> {
    let train_set: BTreeSet<&str> = train_tags.iter().map(|s| s.as_str()).collect();
    if train_set.len() != train_tags.len() {
        return Err(Error::invalid("duplicate tags in split rule"));
    }
    let mut entries = Vec::with_capacity(corpus.len());
    for (path, tag) in corpus {
        let split = if train_set.contains(tag.as_str()) {
            Split::Train
        } else {
            Split::Test
        };
        entries.push(ManifestEntry {
            path: path.clone(),
            tag: tag.clone(),
            split,
        });
    }
    let manifest = Manifest { entries };
    let n_train = manifest.paths(Split::Train).len();
    let n_test = manifest.paths(Split::Test).len();
    if n_train == 0 || n_test == 0 {
        return Err(Error::invalid(format!(
            "degenerate split: {n_train} train / {n_test} test"
        )));
    }
    Ok(manifest)
}
