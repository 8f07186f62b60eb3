//! Network assembly: the four architectures, forward/backward over causal
//! sequences, and MAE loss gradients.

use super::layers::{Cache, CsMode, Layer, LayerGrad};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const INPUT_BINS: usize = 65;
pub const OUTPUT_CHANNELS: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchId {
    Dnn,
    Cnn,
    Lstm,
    DnnCs,
    DnnCsVt,
}

impl ArchId {
    pub fn is_cs(&self) -> bool {
        matches!(self, ArchId::DnnCs | ArchId::DnnCsVt)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ArchId::Dnn => "DNN",
            ArchId::Cnn => "CNN",
            ArchId::Lstm => "LSTM",
            ArchId::DnnCs => "DNN-CS",
            ArchId::DnnCsVt => "DNN-CS-VT",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dnn" => Ok(ArchId::Dnn),
            "cnn" => Ok(ArchId::Cnn),
            "lstm" => Ok(ArchId::Lstm),
            "dnn-cs" => Ok(ArchId::DnnCs),
            "dnn-cs-vt" => Ok(ArchId::DnnCsVt),
            other => Err(Error::invalid(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub arch: ArchId,
    pub layers: Vec<Layer>,
}

fn init_dense(rng: &mut ChaCha8Rng, out: usize, input: usize) -> Layer {
    let bound = (6.0 / (input + out) as f64).sqrt();
    let w = Array2::from_shape_fn((out, input), |_| rng.gen_range(-bound..bound));
    Layer::Dense {
        w,
        b: Array1::zeros(out),
    }
}

fn init_conv(rng: &mut ChaCha8Rng, out: usize, input: usize, kernel: usize) -> Layer {
    let bound = (6.0 / ((input + out) * kernel) as f64).sqrt();
    let w = (0..kernel)
        .map(|_| Array2::from_shape_fn((out, input), |_| rng.gen_range(-bound..bound)))
        .collect();
    Layer::Conv1d {
        w,
        b: Array1::zeros(out),
        kernel,
        padding: kernel - 1,
    }
}

fn init_lstm(rng: &mut ChaCha8Rng, hidden: usize, input: usize, double_bias: bool) -> Layer {
    let bound_ih = (6.0 / (input + 4 * hidden) as f64).sqrt();
    let bound_hh = (6.0 / (5 * hidden) as f64).sqrt();
    Layer::Lstm {
        w_ih: Array2::from_shape_fn((4 * hidden, input), |_| rng.gen_range(-bound_ih..bound_ih)),
        w_hh: Array2::from_shape_fn((4 * hidden, hidden), |_| rng.gen_range(-bound_hh..bound_hh)),
        b_ih: Array1::zeros(4 * hidden),
        b_hh: double_bias.then(|| Array1::zeros(4 * hidden)),
    }
}

impl NetworkModel {
    /// Build one of the fixed architectures with seeded initialization.
    /// `n_topk` is only read by the CS variants; `lstm_double_bias` selects
    /// the two-bias LSTM convention.
    pub fn build(arch: ArchId, n_topk: usize, seed: u64, lstm_double_bias: bool) -> Result<Self> {
        if arch.is_cs() && !(1..=OUTPUT_CHANNELS).contains(&n_topk) {
            return Err(Error::invalid("n_topk must be in 1..=22"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let layers = match arch {
            ArchId::Dnn => vec![
                init_dense(rng, 1024, INPUT_BINS),
                Layer::Relu,
                init_dense(rng, 512, 1024),
                Layer::Relu,
                init_dense(rng, 256, 512),
                Layer::Relu,
                init_dense(rng, OUTPUT_CHANNELS, 256),
            ],
            ArchId::Cnn => vec![
                init_conv(rng, 1024, INPUT_BINS, 3),
                Layer::Relu,
                init_conv(rng, 512, 1024, 3),
                Layer::Relu,
                init_dense(rng, 256, 512),
                Layer::Relu,
                init_dense(rng, OUTPUT_CHANNELS, 256),
            ],
            ArchId::Lstm => vec![
                init_conv(rng, 1024, INPUT_BINS, 3),
                Layer::Relu,
                init_lstm(rng, 512, 1024, lstm_double_bias),
                init_dense(rng, 256, 512),
                Layer::Relu,
                init_dense(rng, OUTPUT_CHANNELS, 256),
            ],
            ArchId::DnnCs | ArchId::DnnCsVt => {
                let mode = if arch == ArchId::DnnCs {
                    CsMode::Custom
                } else {
                    CsMode::Vanilla
                };
                vec![
                    init_dense(rng, 1024, INPUT_BINS),
                    Layer::Relu,
                    init_dense(rng, 512, 1024),
                    Layer::Relu,
                    init_dense(rng, 256, 512),
                    Layer::Relu,
                    init_dense(rng, OUTPUT_CHANNELS, 256),
                    Layer::CsSelect { k: n_topk, mode },
                    Layer::Relu,
                ]
            }
        };
        Ok(NetworkModel { arch, layers })
    }

    pub fn count_params(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// CS budget of the selection layer, if the model has one.
    pub fn n_topk(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            Layer::CsSelect { k, .. } => Some(*k),
            _ => None,
        })
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != INPUT_BINS {
            return Err(Error::invalid(format!(
                "input width {} != {INPUT_BINS}",
                input.ncols()
            )));
        }
        Ok(())
    }

    /// Run the network over a [T x 65] causal sequence, producing [T x 22].
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward_with_cs_masks(input, None)
    }

    /// Forward with the CS masks pinned (used by finite-difference checks).
    pub fn forward_with_cs_masks(
        &self,
        input: ArrayView2<f64>,
        frozen: Option<&[Vec<bool>]>,
    ) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        let mut x = input.to_owned();
        for layer in &self.layers {
            let frozen_for_layer = match layer {
                Layer::CsSelect { .. } => frozen,
                _ => None,
            };
            let (out, _) = layer.forward(x.view(), frozen_for_layer);
            x = out;
        }
        Ok(x)
    }

    /// CS masks the selection layer would use for this input, if any.
    pub fn compute_cs_masks(&self, input: ArrayView2<f64>) -> Result<Option<Vec<Vec<bool>>>> {
        self.check_input(&input)?;
        let (_, caches) = self.forward_cached(input);
        Ok(caches.into_iter().find_map(|c| match c {
            Cache::CsSelect { mask } => Some(mask),
            _ => None,
        }))
    }

    /// Forward keeping caches, returning also the CS masks actually used.
    fn forward_cached(&self, input: ArrayView2<f64>) -> (Array2<f64>, Vec<Cache>) {
        let mut x = input.to_owned();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = layer.forward(x.view(), None);
            caches.push(cache);
            x = out;
        }
        (x, caches)
    }

    /// Mean absolute error over every output element; the subgradient at
    /// exactly zero is zero.
    pub fn mae_loss(output: &Array2<f64>, target: &ArrayView2<f64>) -> f64 {
        let n = output.len() as f64;
        output
            .iter()
            .zip(target.iter())
            .map(|(&y, &t)| (y - t).abs())
            .sum::<f64>()
            / n
    }

    /// Forward + backward for one sequence: returns (loss, per-layer grads).
    pub fn backward(
        &self,
        input: ArrayView2<f64>,
        target: ArrayView2<f64>,
    ) -> Result<(f64, Vec<LayerGrad>)> {
        self.check_input(&input)?;
        let (output, caches) = self.forward_cached(input);
        if target.dim() != output.dim() {
            return Err(Error::invalid("target shape mismatch"));
        }
        let loss = Self::mae_loss(&output, &target);
        let n = output.len() as f64;
        let mut grad = ndarray::Zip::from(&output)
            .and(&target)
            .map_collect(|&y, &t| {
                let d = y - t;
                if d > 0.0 {
                    1.0 / n
                } else if d < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                }
            });
        let mut grads = vec![LayerGrad::None; self.layers.len()];
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let (dx, g) = layer.backward(&caches[idx], &grad);
            grads[idx] = g;
            grad = dx;
        }
        Ok((loss, grads))
    }
}
