//! Synthetic speech-like test corpus: harmonic voices with formant
//! coloring, syllabic amplitude modulation, unvoiced (fricative-like)
//! consonant segments at syllable boundaries, and a small noise floor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn speech_like(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = 16_000.0;
    let f0: f64 = rng.gen_range(100.0..280.0);
    let syllable_hz: f64 = rng.gen_range(2.0..5.0);
    let syll_phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let vibrato_hz: f64 = rng.gen_range(3.0..7.0);
    let formants = [
        (rng.gen_range(300.0..900.0), 180.0),
        (rng.gen_range(900.0..2200.0), 300.0),
        (rng.gen_range(2200.0..3800.0), 450.0),
    ];
    let n_harm = ((6500.0 / f0) as usize).max(1);
    let weights: Vec<f64> = (1..=n_harm)
        .map(|h| {
            let f = h as f64 * f0;
            let resonance: f64 = formants
                .iter()
                .map(|&(cf, bw): &(f64, f64)| (-((f - cf) / bw).powi(2)).exp())
                .sum();
            (resonance + 0.03) / (h as f64).powf(0.4)
        })
        .collect();
    let phases: Vec<f64> = (0..n_harm)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    let noise: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // Fricative source: high-pass shaped noise (first difference), with a
    // random spectral tilt so consonants differ across utterances.
    let fric_gain: f64 = rng.gen_range(0.25..0.6);
    let fric: Vec<f64> = {
        let raw: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut hp = vec![0.0; len];
        for n in 1..len {
            hp[n] = raw[n] - 0.85 * raw[n - 1];
        }
        hp
    };

    let mut out = Vec::with_capacity(len);
    let mut f0_phase = 0.0f64;
    for n in 0..len {
        let t = n as f64 / fs;
        let f_inst = f0 * (1.0 + 0.015 * (std::f64::consts::TAU * vibrato_hz * t).sin());
        f0_phase += std::f64::consts::TAU * f_inst / fs;
        let cycle = (std::f64::consts::TAU * syllable_hz * t + syll_phase).sin();
        // Voiced vowels on syllable peaks, unvoiced consonants in the gaps.
        let syllabic = (0.55 + 0.45 * cycle).powf(1.5);
        let unvoiced = (0.5 - 0.5 * cycle).powi(2);
        let mut v = 0.0;
        for (h, (&w, &ph)) in weights.iter().zip(&phases).enumerate() {
            v += w * ((h + 1) as f64 * f0_phase + ph).sin();
        }
        out.push(syllabic * v + fric_gain * unvoiced * fric[n] + 0.015 * noise[n]);
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    for v in &mut out {
        *v *= 0.1 / rms;
    }
    out
}

pub fn corpus(first_seed: u64, count: usize, len: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| speech_like(first_seed + i as u64, len))
        .collect()
}
