//! Python bindings: the ACE/network encoding pipelines, tone vocoder,
//! intelligibility metrics, and model training/serialization.

use electrodenet::ace::{self, EnvelopeSource, MappingConfig};
use electrodenet::config::StrategyConfig;
use electrodenet::corpus;
use electrodenet::enet;
use electrodenet::metrics;
use electrodenet::nn;
use electrodenet::vocoder;
use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: electrodenet::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Stimulation pattern: one amplitude row per 1 ms frame.
#[pyclass]
#[derive(Clone)]
struct Electrodogram {
    inner: ace::Electrodogram,
}

#[pymethods]
impl Electrodogram {
    #[getter]
    fn frames(&self) -> Vec<Vec<f64>> {
        self.inner.frames.iter().map(|f| f.amplitudes.clone()).collect()
    }

    #[getter]
    fn hop(&self) -> usize {
        self.inner.hop
    }

    #[getter]
    fn sample_rate(&self) -> u32 {
        self.inner.sample_rate
    }

    #[getter]
    fn num_maxima(&self) -> usize {
        self.inner.num_maxima
    }

    fn selected_counts(&self) -> Vec<usize> {
        self.inner.frames.iter().map(|f| f.selected_count()).collect()
    }

    fn to_csv(&self) -> String {
        ace::elgr_to_csv(&self.inner)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let mut file = std::fs::File::create(path)
            .map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?;
        ace::write_elgr(&mut file, &self.inner)
            .map_err(|e| PyValueError::new_err(format!("{path}: {e}")))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?;
        Ok(Electrodogram {
            inner: ace::read_elgr(&mut bytes.as_slice()).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.frames.len()
    }
}

/// A trainable network model (DNN, CNN, LSTM, or the CS variants).
#[pyclass]
struct Model {
    inner: nn::NetworkModel,
}

fn to_array2(rows: &[Vec<f64>], what: &str) -> PyResult<Array2<f64>> {
    let t = rows.len();
    let width = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err(format!("{what}: ragged rows")));
    }
    let mut out = Array2::zeros((t, width));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

#[pymethods]
impl Model {
    /// arch: "dnn" | "cnn" | "lstm" | "dnn-cs" | "dnn-cs-vt"
    #[new]
    #[pyo3(signature = (arch, n_topk = 8, seed = 0))]
    fn new(arch: &str, n_topk: usize, seed: u64) -> PyResult<Self> {
        let arch = nn::ArchId::parse(arch).map_err(err)?;
        Ok(Model {
            inner: nn::NetworkModel::build(arch, n_topk, seed, true).map_err(err)?,
        })
    }

    #[getter]
    fn arch(&self) -> String {
        self.inner.arch.name().to_string()
    }

    fn count_params(&self) -> usize {
        self.inner.count_params()
    }

    fn n_topk(&self) -> Option<usize> {
        self.inner.n_topk()
    }

    /// Forward pass over [T x 65] spectral-frame rows -> [T x 22].
    fn forward(&self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = to_array2(&inputs, "inputs")?;
        let y = self.inner.forward(x.view()).map_err(err)?;
        Ok(y.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    /// Train on (inputs, targets) utterance pairs; returns per-epoch loss.
    #[pyo3(signature = (utterances, epochs = 100, learning_rate = 1e-4, seed = 0, target_mode = "m", num_maxima = 8, gain_jitter_db = 0.0))]
    fn train(
        &mut self,
        utterances: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
        epochs: usize,
        learning_rate: f64,
        seed: u64,
        target_mode: &str,
        num_maxima: usize,
        gain_jitter_db: f64,
    ) -> PyResult<Vec<f64>> {
        let data: Vec<nn::TrainUtterance> = utterances
            .iter()
            .map(|(i, t)| {
                Ok(nn::TrainUtterance {
                    inputs: to_array2(i, "inputs")?,
                    targets: to_array2(t, "targets")?,
                })
            })
            .collect::<PyResult<_>>()?;
        let cfg = nn::TrainConfig {
            epochs,
            learning_rate,
            seed,
            target_mode: nn::TargetMode::parse(target_mode).map_err(err)?,
            batch_size: 128,
            seq_len: 32,
            num_maxima,
            gain_jitter_db,
            ..Default::default()
        };
        nn::train(&mut self.inner, &data, &cfg).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        nn::save_model_file(std::path::Path::new(path), &self.inner).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Model {
            inner: nn::load_model_file(std::path::Path::new(path)).map_err(err)?,
        })
    }
}

/// ACE strategy: 16 kHz samples -> electrodogram with N maxima.
#[pyfunction]
#[pyo3(signature = (signal, num_maxima = 8, post_lgf = true))]
fn ace_encode(signal: Vec<f64>, num_maxima: usize, post_lgf: bool) -> PyResult<Electrodogram> {
    let cfg = StrategyConfig::new(num_maxima).map_err(err)?;
    let source = if post_lgf {
        EnvelopeSource::PostLgf
    } else {
        EnvelopeSource::PreLgf
    };
    Ok(Electrodogram {
        inner: ace::ace_encode_with(&signal, &cfg, &MappingConfig::default(), source)
            .map_err(err)?,
    })
}

/// Network pipeline; CS models skip the external channel selection.
#[pyfunction]
#[pyo3(signature = (signal, model, num_maxima = 12, post_lgf = true))]
fn enet_encode(
    signal: Vec<f64>,
    model: &Model,
    num_maxima: usize,
    post_lgf: bool,
) -> PyResult<Electrodogram> {
    let cfg = StrategyConfig::new(num_maxima).map_err(err)?;
    let map = MappingConfig::default();
    let source = if post_lgf {
        EnvelopeSource::PostLgf
    } else {
        EnvelopeSource::PreLgf
    };
    let inner = if model.inner.arch.is_cs() {
        enet::electrodenet_cs_encode_with(&signal, &model.inner, &cfg, &map, source)
    } else {
        enet::electrodenet_encode_with(&signal, &model.inner, &cfg, &map, source)
    }
    .map_err(err)?;
    Ok(Electrodogram { inner })
}

/// Teacher pairs for distillation: ([T x 65] bins, [T x 22] envelopes).
#[pyfunction]
fn teacher_pairs(signal: Vec<f64>) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let cfg = StrategyConfig::default();
    let utt = enet::pairs_for_signal(&signal, &cfg).map_err(err)?;
    Ok((
        utt.inputs.rows().into_iter().map(|r| r.to_vec()).collect(),
        utt.targets.rows().into_iter().map(|r| r.to_vec()).collect(),
    ))
}

/// Tone-vocoder resynthesis to 16 kHz samples.
#[pyfunction]
#[pyo3(signature = (elgr, normalize = true, rms_target = 0.05))]
fn vocode(elgr: &Electrodogram, normalize: bool, rms_target: f64) -> PyResult<Vec<f64>> {
    let mut vcfg = vocoder::VocoderConfig::default();
    vcfg.rms_target = rms_target;
    if !normalize {
        vcfg.output_normalization = vocoder::OutputNormalization::None;
    }
    vocoder::vocode(&elgr.inner, &vcfg).map_err(err)
}

#[pyfunction]
fn stoi(clean: Vec<f64>, processed: Vec<f64>) -> PyResult<f64> {
    metrics::stoi(&clean, &processed).map_err(err)
}

#[pyfunction]
fn ncm(clean: Vec<f64>, processed: Vec<f64>) -> PyResult<f64> {
    metrics::ncm(&clean, &processed).map_err(err)
}

/// (mse, lcc, srcc); correlations are None when degenerate.
#[pyfunction]
fn correlate(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, Option<f64>, Option<f64>)> {
    let r = metrics::correlate("all", &a, &b).map_err(err)?;
    Ok((r.mse, r.lcc, r.srcc))
}

#[pyfunction]
fn gen_white(seed: u64, length: usize) -> Vec<f64> {
    corpus::gen_white(seed, length)
}

#[pyfunction]
fn mix_at_snr(clean: Vec<f64>, noise: Vec<f64>, snr_db: f64) -> PyResult<Vec<f64>> {
    corpus::mix_at_snr(&clean, &noise, snr_db).map_err(err)
}

#[pymodule]
fn electrodenet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Electrodogram>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(ace_encode, m)?)?;
    m.add_function(wrap_pyfunction!(enet_encode, m)?)?;
    m.add_function(wrap_pyfunction!(teacher_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(vocode, m)?)?;
    m.add_function(wrap_pyfunction!(stoi, m)?)?;
    m.add_function(wrap_pyfunction!(ncm, m)?)?;
    m.add_function(wrap_pyfunction!(correlate, m)?)?;
    m.add_function(wrap_pyfunction!(gen_white, m)?)?;
    m.add_function(wrap_pyfunction!(mix_at_snr, m)?)?;
    Ok(())
}
