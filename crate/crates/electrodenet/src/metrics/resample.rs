//! Rational-rate polyphase resampling with a Kaiser-windowed sinc
//! prototype. Used to bring 16 kHz signals to the 10 kHz STOI rate.

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half_x2 = (x / 2.0) * (x / 2.0);
    for k in 1..50 {
        term *= half_x2 / (k as f64 * k as f64);
        sum += term;
        if term < 1e-16 * sum {
            break;
        }
    }
    sum
}

fn kaiser(n: usize, len: usize, beta: f64) -> f64 {
    let m = (len - 1) as f64;
    let r = 2.0 * n as f64 / m - 1.0;
    bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(beta)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Windowed-sinc prototype for up-by-`l`, down-by-`m`: 64 taps per phase,
/// Kaiser beta = 8, cutoff at the tighter of the two Nyquist limits.
fn prototype(l: usize, m: usize) -> Vec<f64> {
    const TAPS_PER_PHASE: usize = 64;
    // Odd length gives an integer group delay of (len-1)/2 upsampled
    // samples, which the resampler compensates exactly.
    let len = TAPS_PER_PHASE * l + 1;
    let center = (len - 1) as f64 / 2.0;
    let stretch = l.max(m) as f64;
    (0..len)
        .map(|n| {
            let t = (n as f64 - center) / stretch;
            l as f64 * sinc(t) / stretch * kaiser(n, len, 8.0)
        })
        .collect()
}

/// Resample by the rational factor l/m, zero-phase (group delay
/// compensated). Output length ceil(len·l/m).
pub fn resample(signal: &[f64], l: usize, m: usize) -> Vec<f64> {
    assert!(l >= 1 && m >= 1);
    if l == m {
        return signal.to_vec();
    }
    let h = prototype(l, m);
    let delay = (h.len() - 1) / 2;
    let out_len = (signal.len() * l).div_ceil(m);
    let mut out = vec![0.0; out_len];
    for (j, o) in out.iter_mut().enumerate() {
        // Upsampled-domain index of this output sample, shifted by the
        // filter's group delay.
        let pos = j * m + delay;
        // Taps n with (pos - n) divisible by l hit real input samples.
        let first = pos % l;
        let mut acc = 0.0;
        let mut n = first;
        while n < h.len() && n <= pos {
            let i = (pos - n) / l;
            if i < signal.len() {
                acc += h[n] * signal[i];
            }
            n += l;
        }
        *o = acc;
    }
    out
}

/// 16 kHz to 10 kHz (up 5, down 8).
pub fn to_10k(signal: &[f64]) -> Vec<f64> {
    resample(signal, 5, 8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_length_is_ceiling_ratio() {
        assert_eq!(to_10k(&vec![0.0; 16_000]).len(), 10_000);
        assert_eq!(to_10k(&vec![0.0; 16_001]).len(), 10_001);
        assert_eq!(resample(&vec![0.0; 100], 1, 1).len(), 100);
    }

    #[test]
    fn tone_survives_resampling() {
        // 1 kHz tone at 16 kHz should come out as a 1 kHz tone at 10 kHz
        // with near-unit amplitude away from the edges.
        let x: Vec<f64> = (0..16_000)
            .map(|n| (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 16_000.0).sin())
            .collect();
        let y = to_10k(&x);
        for (j, &v) in y.iter().enumerate().skip(200).take(y.len() - 400) {
            let expect = (2.0 * std::f64::consts::PI * 1000.0 * j as f64 / 10_000.0).sin();
            assert!((v - expect).abs() < 0.01, "sample {j}: {v} vs {expect}");
        }
    }

    #[test]
    fn high_band_is_rejected() {
        // 6 kHz is above the 5 kHz output Nyquist: it must not alias in.
        let x: Vec<f64> = (0..16_000)
            .map(|n| (2.0 * std::f64::consts::PI * 6000.0 * n as f64 / 16_000.0).sin())
            .collect();
        let y = to_10k(&x);
        let peak = y
            .iter()
            .skip(200)
            .take(y.len() - 400)
            .fold(0.0f64, |a, &v| a.max(v.abs()));
        assert!(peak < 0.01, "aliased energy: {peak}");
    }

    #[test]
    fn dc_gain_is_unity() {
        let x = vec![1.0; 8000];
        let y = to_10k(&x);
        let mid = y.len() / 2;
        assert!((y[mid] - 1.0).abs() < 1e-3);
    }
}
