//! Neural sound-coding pipelines: FFT bins feed a trained network whose
//! output either goes through external N-of-M selection (plain variant) or
//! is already sparse courtesy of an in-network selection layer (CS variant),
//! then through loudness mapping. Also: distillation dataset assembly and
//! channel-usage statistics.

use crate::ace::{
    apply_lgf, select_maxima, Electrodogram, EnvelopeSource, MappingConfig, StimulusFrame,
};
use crate::config::StrategyConfig;
use crate::dsp::{encode_envelope_stream, ChannelEnvelopeFrame};
use crate::error::{Error, Result};
use crate::nn::{NetworkModel, TrainUtterance};
use ndarray::Array2;
use std::collections::BTreeMap;
use std::path::Path;

/// Teacher-generated (spectral frame, channel envelope) pairs, one training
/// utterance per source file. Built from clean speech only.
#[derive(Debug, Clone)]
pub struct DistillationDataset {
    pub utterances: Vec<TrainUtterance>,
    pub paths: Vec<String>,
    pub tag: String,
    pub clean_only: bool,
    /// Files that failed to load: (path, reason). Building continues past
    /// them.
    pub errors: Vec<(String, String)>,
}

impl DistillationDataset {
    pub fn total_frames(&self) -> usize {
        self.utterances.iter().map(|u| u.inputs.nrows()).sum()
    }

    /// Cumulative frame offsets marking utterance boundaries.
    pub fn boundaries(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.utterances.len());
        let mut acc = 0;
        for u in &self.utterances {
            acc += u.inputs.nrows();
            out.push(acc);
        }
        out
    }
}

/// Run the ACE front end over one clean signal and package the pairs.
pub fn pairs_for_signal(signal: &[f64], cfg: &StrategyConfig) -> Result<TrainUtterance> {
    let pairs = encode_envelope_stream(signal, cfg)?;
    let t = pairs.len();
    let mut inputs = Array2::zeros((t, cfg.num_bins));
    let mut targets = Array2::zeros((t, cfg.num_channels));
    for (f, (spec, env)) in pairs.into_iter().enumerate() {
        for (k, v) in spec.magnitudes.into_iter().enumerate() {
            inputs[[f, k]] = v;
        }
        for (m, v) in env.envelopes.into_iter().enumerate() {
            targets[[f, m]] = v;
        }
    }
    Ok(TrainUtterance { inputs, targets })
}

/// Build a distillation dataset from clean in-memory utterances.
pub fn dataset_from_signals(
    signals: &[Vec<f64>],
    cfg: &StrategyConfig,
    tag: &str,
) -> Result<DistillationDataset> {
    let mut utterances = Vec::with_capacity(signals.len());
    for s in signals {
        utterances.push(pairs_for_signal(s, cfg)?);
    }
    Ok(DistillationDataset {
        utterances,
        paths: (0..signals.len()).map(|i| format!("<memory:{i}>")).collect(),
        tag: tag.to_string(),
        clean_only: true,
        errors: Vec::new(),
    })
}

/// Build a distillation dataset from WAV files. Unreadable or invalid
/// files are collected as per-file errors; the build keeps going.
pub fn build_dataset(paths: &[String], cfg: &StrategyConfig, tag: &str) -> DistillationDataset {
    let mut dataset = DistillationDataset {
        utterances: Vec::new(),
        paths: Vec::new(),
        tag: tag.to_string(),
        clean_only: true,
        errors: Vec::new(),
    };
    for path in paths {
        let result = crate::wav::read_wav(Path::new(path))
            .and_then(|signal| pairs_for_signal(&signal, cfg));
        match result {
            Ok(utt) => {
                dataset.utterances.push(utt);
                dataset.paths.push(path.clone());
            }
            Err(e) => dataset.errors.push((path.clone(), e.to_string())),
        }
    }
    dataset
}

fn network_envelopes(
    signal: &[f64],
    model: &NetworkModel,
    cfg: &StrategyConfig,
) -> Result<Array2<f64>> {
    let utt = pairs_for_signal(signal, cfg)?;
    model.forward(utt.inputs.view())
}

/// Plain pipeline: network mimics envelope detection only; channel
/// selection and loudness mapping stay external. Network outputs are
/// clamped at zero before selection (envelopes are magnitudes).
pub fn electrodenet_encode_with(
    signal: &[f64],
    model: &NetworkModel,
    cfg: &StrategyConfig,
    map: &MappingConfig,
    source: EnvelopeSource,
) -> Result<Electrodogram> {
    if model.arch.is_cs() {
        return Err(Error::invalid(format!(
            "{} embeds channel selection; use the CS encode path",
            model.arch.name()
        )));
    }
    cfg.validate()?;
    map.validate()?;
    let out = network_envelopes(signal, model, cfg)?;
    let mut frames = Vec::with_capacity(out.nrows());
    for row in out.rows() {
        let env = ChannelEnvelopeFrame {
            envelopes: row.iter().map(|&v| v.max(0.0)).collect(),
        };
        let selected = select_maxima(&env, cfg.num_maxima)?;
        frames.push(match source {
            EnvelopeSource::PostLgf => apply_lgf(&selected, map),
            EnvelopeSource::PreLgf => StimulusFrame {
                amplitudes: selected.envelopes,
            },
        });
    }
    Ok(Electrodogram {
        frames,
        hop: cfg.hop,
        sample_rate: cfg.sample_rate,
        num_maxima: cfg.num_maxima,
    })
}

pub fn electrodenet_encode(
    signal: &[f64],
    model: &NetworkModel,
    cfg: &StrategyConfig,
    map: &MappingConfig,
) -> Result<Electrodogram> {
    electrodenet_encode_with(signal, model, cfg, map, EnvelopeSource::PostLgf)
}

/// CS pipeline: the network's selection layer already produced a sparse
/// nonnegative frame, so only loudness mapping follows.
pub fn electrodenet_cs_encode_with(
    signal: &[f64],
    model: &NetworkModel,
    cfg: &StrategyConfig,
    map: &MappingConfig,
    source: EnvelopeSource,
) -> Result<Electrodogram> {
    if !model.arch.is_cs() {
        return Err(Error::invalid(format!(
            "{} has no selection layer; use the plain encode path",
            model.arch.name()
        )));
    }
    cfg.validate()?;
    map.validate()?;
    let n_topk = model
        .n_topk()
        .ok_or_else(|| Error::invalid("CS model missing selection layer"))?;
    let out = network_envelopes(signal, model, cfg)?;
    let mut frames = Vec::with_capacity(out.nrows());
    for row in out.rows() {
        let env = ChannelEnvelopeFrame {
            envelopes: row.to_vec(),
        };
        frames.push(match source {
            EnvelopeSource::PostLgf => apply_lgf(&env, map),
            EnvelopeSource::PreLgf => StimulusFrame {
                amplitudes: env.envelopes,
            },
        });
    }
    Ok(Electrodogram {
        frames,
        hop: cfg.hop,
        sample_rate: cfg.sample_rate,
        num_maxima: n_topk,
    })
}

pub fn electrodenet_cs_encode(
    signal: &[f64],
    model: &NetworkModel,
    cfg: &StrategyConfig,
    map: &MappingConfig,
) -> Result<Electrodogram> {
    electrodenet_cs_encode_with(signal, model, cfg, map, EnvelopeSource::PostLgf)
}

/// Distribution of per-frame selected-channel counts against the target
/// maxima setting.
#[derive(Debug, Clone, PartialEq)]
pub struct CsUsageStats {
    pub histogram: BTreeMap<usize, usize>,
    pub n_topk: usize,
    pub total_frames: usize,
    pub pct_below: f64,
    pub pct_equal: f64,
    pub pct_above: f64,
}

impl CsUsageStats {
    pub fn is_empty(&self) -> bool {
        self.total_frames == 0
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n_cs,frames,percent\n");
        for (&n_cs, &count) in &self.histogram {
            let pct = 100.0 * count as f64 / self.total_frames as f64;
            out.push_str(&format!("{n_cs},{count},{pct}\n"));
        }
        out
    }
}

/// Histogram the per-frame stimulated-channel counts of an electrodogram.
/// An empty stream yields the explicit empty marker (percentages zero).
pub fn cs_usage(elgr: &Electrodogram, n_topk: usize) -> CsUsageStats {
    let mut histogram = BTreeMap::new();
    for frame in &elgr.frames {
        *histogram.entry(frame.selected_count()).or_insert(0) += 1;
    }
    let total = elgr.frames.len();
    let pct = |pred: &dyn Fn(usize) -> bool| -> f64 {
        if total == 0 {
            return 0.0;
        }
        let hits: usize = histogram
            .iter()
            .filter(|(&n, _)| pred(n))
            .map(|(_, &c)| c)
            .sum();
        100.0 * hits as f64 / total as f64
    };
    CsUsageStats {
        pct_below: pct(&|n| n < n_topk),
        pct_equal: pct(&|n| n == n_topk),
        pct_above: pct(&|n| n > n_topk),
        histogram,
        n_topk,
        total_frames: total,
    }
}

/// Channels a CS model never selects across a probe dataset (1-based in
/// reports, 0-based here). Empty iff every channel fires at least once.
pub fn channel_deactivation_report(
    model: &NetworkModel,
    probe: &DistillationDataset,
) -> Result<Vec<usize>> {
    if !model.arch.is_cs() {
        return Err(Error::invalid("deactivation report needs a CS model"));
    }
    if probe.utterances.is_empty() {
        return Err(Error::invalid("empty probe dataset"));
    }
    let channels = probe.utterances[0].targets.ncols();
    let mut seen = vec![false; channels];
    for utt in &probe.utterances {
        let out = model.forward(utt.inputs.view())?;
        for row in out.rows() {
            for (m, &v) in row.iter().enumerate() {
                if v > 0.0 {
                    seen[m] = true;
                }
            }
        }
    }
    Ok((0..channels).filter(|&m| !seen[m]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ace::ace_encode;
    use crate::nn::{ArchId, Layer};
    use ndarray::{Array1, Array2};

    fn test_signal(len: usize) -> Vec<f64> {
        (0..len)
            .map(|n| {
                let t = n as f64 / 16_000.0;
                (2.0 * std::f64::consts::PI * 440.0 * t).sin()
                    + 0.5 * (2.0 * std::f64::consts::PI * 1900.0 * t).sin()
            })
            .collect()
    }

    #[test]
    fn dataset_pairs_match_oracle_recomputation() {
        let cfg = StrategyConfig::default();
        let signal = test_signal(4000);
        let ds = dataset_from_signals(&[signal.clone()], &cfg, "t").unwrap();
        let pairs = encode_envelope_stream(&signal, &cfg).unwrap();
        assert_eq!(ds.utterances[0].inputs.nrows(), pairs.len());
        for (f, (spec, env)) in pairs.iter().enumerate() {
            for (k, &v) in spec.magnitudes.iter().enumerate() {
                assert_eq!(ds.utterances[0].inputs[[f, k]], v);
            }
            for (m, &v) in env.envelopes.iter().enumerate() {
                assert_eq!(ds.utterances[0].targets[[f, m]], v);
            }
        }
    }

    #[test]
    fn dataset_boundaries_accumulate() {
        let cfg = StrategyConfig::default();
        // 16000 samples -> 1000 frames; 32000 -> 2000 frames.
        let ds = dataset_from_signals(
            &[test_signal(16_000), test_signal(32_000)],
            &cfg,
            "t",
        )
        .unwrap();
        assert_eq!(ds.boundaries(), vec![1000, 3000]);
        assert_eq!(ds.total_frames(), 3000);
    }

    #[test]
    fn zero_utterance_gives_zero_pairs() {
        let cfg = StrategyConfig::default();
        let ds = dataset_from_signals(&[vec![0.0; 2000]], &cfg, "t").unwrap();
        assert!(ds.utterances[0].inputs.iter().all(|&v| v == 0.0));
        assert!(ds.utterances[0].targets.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn build_dataset_collects_per_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.wav");
        crate::wav::write_wav(&good, &test_signal(2000), crate::wav::WavFormat::Float32).unwrap();
        let bad = dir.path().join("missing.wav");
        let cfg = StrategyConfig::default();
        let paths = vec![
            good.display().to_string(),
            bad.display().to_string(),
        ];
        let ds = build_dataset(&paths, &cfg, "t");
        assert_eq!(ds.utterances.len(), 1);
        assert_eq!(ds.errors.len(), 1);
        assert!(ds.errors[0].0.contains("missing.wav"));
    }

    #[test]
    fn arch_gating_between_pipelines() {
        let cfg = StrategyConfig::default();
        let map = MappingConfig::default();
        let signal = test_signal(1000);
        let cs = NetworkModel::build(ArchId::DnnCs, 8, 0, true).unwrap();
        let plain = NetworkModel::build(ArchId::Dnn, 8, 0, true).unwrap();
        assert!(electrodenet_encode(&signal, &cs, &cfg, &map).is_err());
        assert!(electrodenet_cs_encode(&signal, &plain, &cfg, &map).is_err());
    }

    #[test]
    fn plain_pipeline_respects_n_of_m_and_alignment() {
        let cfg = StrategyConfig::new(8).unwrap();
        let map = MappingConfig::default();
        let signal = test_signal(5000);
        let model = NetworkModel::build(ArchId::Dnn, 8, 1, true).unwrap();
        let elgr = electrodenet_encode(&signal, &model, &cfg, &map).unwrap();
        let ace = ace_encode(&signal, &cfg, &map).unwrap();
        assert_eq!(elgr.frames.len(), ace.frames.len());
        assert_eq!(elgr.hop, ace.hop);
        for frame in &elgr.frames {
            assert!(frame.selected_count() <= 8);
            assert!(frame.amplitudes.iter().all(|&a| a >= 0.0));
        }
    }

    #[test]
    fn cs_pipeline_never_exceeds_n_topk() {
        let cfg = StrategyConfig::default();
        let map = MappingConfig::default();
        let signal = test_signal(5000);
        for n_topk in [8, 12] {
            let model = NetworkModel::build(ArchId::DnnCs, n_topk, 2, true).unwrap();
            let elgr = electrodenet_cs_encode(&signal, &model, &cfg, &map).unwrap();
            let stats = cs_usage(&elgr, n_topk);
            assert_eq!(stats.pct_above, 0.0);
            assert!((stats.pct_below + stats.pct_equal + stats.pct_above - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let cfg = StrategyConfig::default();
        let map = MappingConfig::default();
        let signal = test_signal(3000);
        let model = NetworkModel::build(ArchId::DnnCs, 8, 3, true).unwrap();
        let a = electrodenet_cs_encode(&signal, &model, &cfg, &map).unwrap();
        let b = electrodenet_cs_encode(&signal, &model, &cfg, &map).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cs_usage_histogram_and_percentages() {
        let frames: Vec<StimulusFrame> = (0..100)
            .map(|i| {
                let n_cs = if i < 98 { 12 } else { 11 };
                StimulusFrame {
                    amplitudes: (0..22).map(|m| if m < n_cs { 0.5 } else { 0.0 }).collect(),
                }
            })
            .collect();
        let elgr = Electrodogram {
            frames,
            hop: 16,
            sample_rate: 16_000,
            num_maxima: 12,
        };
        let stats = cs_usage(&elgr, 12);
        assert_eq!(stats.pct_below, 2.0);
        assert_eq!(stats.pct_equal, 98.0);
        assert_eq!(stats.pct_above, 0.0);
        assert_eq!(stats.histogram[&12], 98);
        assert_eq!(stats.histogram[&11], 2);
        assert_eq!(stats.histogram.values().sum::<usize>(), 100);
        let csv = stats.to_csv();
        assert!(csv.starts_with("n_cs,frames,percent\n"));
        assert!(csv.contains("12,98,98\n"));
    }

    #[test]
    fn empty_stream_yields_empty_marker() {
        let elgr = Electrodogram {
            frames: Vec::new(),
            hop: 16,
            sample_rate: 16_000,
            num_maxima: 8,
        };
        let stats = cs_usage(&elgr, 8);
        assert!(stats.is_empty());
        assert!(stats.histogram.is_empty());
    }

    #[test]
    fn deactivation_report_flags_dead_channel() {
        let cfg = StrategyConfig::default();
        let ds = dataset_from_signals(&[test_signal(2000)], &cfg, "t").unwrap();
        // Hand-built CS model: dense map whose channel 5 output is always
        // negative, everything else driven by total input energy.
        let mut w = Array2::zeros((22, 65));
        for m in 0..22 {
            for k in 0..65 {
                w[[m, k]] = 0.1 + m as f64 * 0.01;
            }
        }
        let mut b = Array1::zeros(22);
        for m in 0..22 {
            w.row_mut(m).map_inplace(|v| *v = v.abs());
        }
        w.row_mut(5).map_inplace(|v| *v = -v.abs());
        b[5] = -1.0;
        let model = NetworkModel {
            arch: ArchId::DnnCs,
            layers: vec![
                Layer::Dense { w, b },
                Layer::CsSelect {
                    k: 22,
                    mode: crate::nn::CsMode::Custom,
                },
            ],
        };
        let report = channel_deactivation_report(&model, &ds).unwrap();
        assert_eq!(report, vec![5]);
        // Healthy model with k = 22 selects every positive channel.
        let healthy = NetworkModel::build(ArchId::DnnCs, 22, 4, true).unwrap();
        let _ = channel_deactivation_report(&healthy, &ds).unwrap();
    }

    #[test]
    fn forced_negative_frame_gives_empty_stimulus() {
        let mut w = Array2::zeros((22, 65));
        w.fill(-0.5);
        let model = NetworkModel {
            arch: ArchId::DnnCs,
            layers: vec![
                Layer::Dense {
                    w,
                    b: Array1::from_elem(22, -0.1),
                },
                Layer::CsSelect {
                    k: 8,
                    mode: crate::nn::CsMode::Custom,
                },
            ],
        };
        let cfg = StrategyConfig::default();
        let map = MappingConfig::default();
        let elgr = electrodenet_cs_encode(&test_signal(1000), &model, &cfg, &map).unwrap();
        for frame in &elgr.frames {
            assert_eq!(frame.selected_count(), 0);
        }
    }
}
