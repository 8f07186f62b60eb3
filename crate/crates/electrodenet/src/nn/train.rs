//! MAE + Adam training loop over paired (FFT bins, channel envelope)
//! frames, deterministic under a fixed seed.

use super::layers::Layer;
use super::model::{ArchId, NetworkModel, INPUT_BINS, OUTPUT_CHANNELS};
use crate::error::{Error, Result};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which ACE stage provides the training target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetMode {
    /// Pre-mapping envelopes across all M channels.
    MChannels,
    /// Post-selection N-of-M frames (zeros outside the maxima).
    NOfM,
}

impl TargetMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m" | "m-channels" | "m_channels" => Ok(TargetMode::MChannels),
            "n-of-m" | "n_of_m" | "nofm" => Ok(TargetMode::NOfM),
            other => Err(Error::invalid(format!("unknown target mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub seed: u64,
    pub target_mode: TargetMode,
    /// Maxima count for N-of-M targets; CS models use their own budget.
    pub num_maxima: usize,
    /// Level augmentation: each training frame (chunk for sequence models)
    /// is scaled by a random gain in ±this many dB, applied identically to
    /// input and target. The teacher mapping is level-linear, so the
    /// augmented pairs are exact; 0 disables.
    pub gain_jitter_db: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 100,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 128,
            seq_len: 32,
            seed: 0,
            target_mode: TargetMode::MChannels,
            num_maxima: 8,
            gain_jitter_db: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 {
            return Err(Error::invalid("learning_rate must be nonnegative"));
        }
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size < 1 || self.seq_len < 1 {
            return Err(Error::invalid("batch_size and seq_len must be >= 1"));
        }
        if !self.gain_jitter_db.is_finite() || self.gain_jitter_db < 0.0 {
            return Err(Error::invalid("gain_jitter_db must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One utterance of paired frames: inputs [T x 65], targets [T x 22].
#[derive(Debug, Clone)]
pub struct TrainUtterance {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    fn new(model: &NetworkModel) -> Self {
        let shapes: Vec<usize> = model.layers.iter().map(|l| l.param_count()).collect();
        Adam {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    fn apply(
        &mut self,
        model: &mut NetworkModel,
        grads: &[super::layers::LayerGrad],
        cfg: &TrainConfig,
    ) {
        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - cfg.beta1.powf(t);
        let bias2 = 1.0 - cfg.beta2.powf(t);
        for (idx, layer) in model.layers.iter_mut().enumerate() {
            let mut flat = Vec::with_capacity(self.m[idx].len());
            grads[idx].flatten_into(&mut flat);
            if flat.is_empty() {
                continue;
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let mut i = 0;
            layer.for_each_param_mut(&mut |p| {
                let g = flat[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
                i += 1;
            });
        }
    }
}

/// 99th percentile of the pooled input features, the corpus-wide scale
/// divided out of the inputs before training.
pub fn input_scale(utterances: &[TrainUtterance]) -> f64 {
    let mut values: Vec<f64> = utterances
        .iter()
        .flat_map(|u| u.inputs.iter().copied())
        .collect();
    if values.is_empty() {
        return 1.0;
    }
    let idx = ((values.len() - 1) as f64 * 0.99).round() as usize;
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[idx].max(1e-12)
}

/// Divide the scale into the first linear layer so the trained model
/// consumes raw FFT magnitudes with no side metadata.
fn fold_input_scale(model: &mut NetworkModel, scale: f64) {
    match model.layers.first_mut() {
        Some(Layer::Dense { w, .. }) => *w /= scale,
        Some(Layer::Conv1d { w, .. }) => {
            for wt in w {
                *wt /= scale;
            }
        }
        _ => {}
    }
}

/// Train in place; returns per-epoch mean training loss.
pub fn train(
    model: &mut NetworkModel,
    utterances: &[TrainUtterance],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if utterances.is_empty() || utterances.iter().all(|u| u.inputs.nrows() == 0) {
        return Err(Error::invalid("empty training dataset"));
    }
    for u in utterances {
        if u.inputs.ncols() != INPUT_BINS || u.targets.ncols() != OUTPUT_CHANNELS {
            return Err(Error::invalid("utterance feature width mismatch"));
        }
        if u.inputs.nrows() != u.targets.nrows() {
            return Err(Error::invalid("utterance input/target length mismatch"));
        }
    }
    let scale = input_scale(utterances);
    let scaled: Vec<TrainUtterance> = utterances
        .iter()
        .map(|u| {
            let targets = match cfg.target_mode {
                TargetMode::MChannels => u.targets.clone(),
                // Post-selection targets: zero everything outside the
                // per-frame maxima before the network ever sees them.
                TargetMode::NOfM => {
                    let n = model.n_topk().unwrap_or(cfg.num_maxima);
                    let mut t = u.targets.clone();
                    for mut row in t.rows_mut() {
                        let frame = crate::dsp::ChannelEnvelopeFrame {
                            envelopes: row.to_vec(),
                        };
                        let kept = crate::ace::select_maxima(&frame, n)?.envelopes;
                        for (v, k) in row.iter_mut().zip(kept) {
                            *v = k;
                        }
                    }
                    t
                }
            };
            Ok(TrainUtterance {
                inputs: &u.inputs / scale,
                targets,
            })
        })
        .collect::<Result<_>>()?;

    let per_frame = !matches!(model.arch, ArchId::Cnn | ArchId::Lstm);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model);
    let mut history = Vec::with_capacity(cfg.epochs);

    if per_frame {
        // Frame-at-a-time: pool frames across utterances, shuffled batches.
        let inputs = ndarray::concatenate(
            Axis(0),
            &scaled.iter().map(|u| u.inputs.view()).collect::<Vec<_>>(),
        )
        .unwrap();
        let targets = ndarray::concatenate(
            Axis(0),
            &scaled.iter().map(|u| u.targets.view()).collect::<Vec<_>>(),
        )
        .unwrap();
        let n = inputs.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let mut x = inputs.select(Axis(0), batch);
                let mut t = targets.select(Axis(0), batch);
                if cfg.gain_jitter_db > 0.0 {
                    for (mut xr, mut tr) in x.rows_mut().into_iter().zip(t.rows_mut()) {
                        let db = rng.gen_range(-cfg.gain_jitter_db..=cfg.gain_jitter_db);
                        let g = 10f64.powf(db / 20.0);
                        xr *= g;
                        tr *= g;
                    }
                }
                let (loss, grads) = model.backward(x.view(), t.view())?;
                adam.apply(model, &grads, cfg);
                epoch_loss += loss * batch.len() as f64;
            }
            history.push(epoch_loss / n as f64);
        }
    } else {
        // Sequence models: causal chunks, state reset at chunk boundaries.
        let mut chunks: Vec<(usize, usize, usize)> = Vec::new(); // (utt, start, len)
        for (ui, u) in scaled.iter().enumerate() {
            let t_len = u.inputs.nrows();
            let mut start = 0;
            while start < t_len {
                let len = cfg.seq_len.min(t_len - start);
                chunks.push((ui, start, len));
                start += len;
            }
        }
        let total_frames: usize = chunks.iter().map(|c| c.2).sum();
        let mut order: Vec<usize> = (0..chunks.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for &ci in &order {
                let (ui, start, len) = chunks[ci];
                let mut x = scaled[ui]
                    .inputs
                    .slice(ndarray::s![start..start + len, ..])
                    .to_owned();
                let mut t = scaled[ui]
                    .targets
                    .slice(ndarray::s![start..start + len, ..])
                    .to_owned();
                if cfg.gain_jitter_db > 0.0 {
                    let db = rng.gen_range(-cfg.gain_jitter_db..=cfg.gain_jitter_db);
                    let g = 10f64.powf(db / 20.0);
                    x *= g;
                    t *= g;
                }
                let (loss, grads) = model.backward(x.view(), t.view())?;
                adam.apply(model, &grads, cfg);
                epoch_loss += loss * len as f64;
            }
            history.push(epoch_loss / total_frames as f64);
        }
    }

    if history.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("training loss diverged to NaN/Inf"));
    }
    fold_input_scale(model, scale);
    Ok(history)
}
