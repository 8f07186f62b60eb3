//! Paired-score correlation analysis: MSE, linear correlation, and
//! Spearman rank correlation with average ranks for ties.

use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// One correlation summary for a group of score pairs. `lcc`/`srcc` are
/// `None` when the statistic is undefined (fewer than two pairs or a
/// zero-variance side) — a degenerate report, never NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub grouping: String,
    pub n_pairs: usize,
    pub mse: f64,
    pub lcc: Option<f64>,
    pub srcc: Option<f64>,
}

impl CorrelationReport {
    pub fn is_degenerate(&self) -> bool {
        self.lcc.is_none() || self.srcc.is_none()
    }

    pub fn csv_header() -> &'static str {
        "grouping,n,mse,lcc,srcc"
    }

    pub fn csv_row(&self) -> String {
        let cell = |v: &Option<f64>| match v {
            Some(x) => format!("{x}"),
            None => "degenerate".to_string(),
        };
        format!(
            "{},{},{},{},{}",
            self.grouping,
            self.n_pairs,
            self.mse,
            cell(&self.lcc),
            cell(&self.srcc)
        )
    }
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average 1-based rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
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
        Some(sab / (saa.sqrt() * sbb.sqrt()))
    }
}

/// MSE, LCC (population covariance), and SRCC (Pearson over average
/// ranks) of paired scores. Exactly symmetric in argument order.
pub fn correlate(grouping: &str, a: &[f64], b: &[f64]) -> Result<CorrelationReport> {
    if a.len() != b.len() {
        return Err(Error::invalid("score vectors differ in length"));
    }
    let n = a.len();
    let mse = if n == 0 {
        0.0
    } else {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            / n as f64
    };
    if n < 2 {
        return Ok(CorrelationReport {
            grouping: grouping.to_string(),
            n_pairs: n,
            mse,
            lcc: None,
            srcc: None,
        });
    }
    let lcc = pearson(a, b);
    let srcc = pearson(&average_ranks(a), &average_ranks(b));
    Ok(CorrelationReport {
        grouping: grouping.to_string(),
        n_pairs: n,
        mse,
        lcc,
        srcc,
    })
}

/// Correlate within each labelled group, then pooled across all of them.
/// Groups with fewer than two pairs come back degenerate, not as errors.
pub fn per_snr_breakdown(
    groups: &[(String, Vec<(f64, f64)>)],
) -> Result<Vec<CorrelationReport>> {
    let mut out = Vec::with_capacity(groups.len() + 1);
    let mut all_a = Vec::new();
    let mut all_b = Vec::new();
    for (label, pairs) in groups {
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        out.push(correlate(label, &a, &b)?);
        all_a.extend_from_slice(&a);
        all_b.extend_from_slice(&b);
    }
    out.push(correlate("pooled", &all_a, &all_b)?);
    Ok(out)
}

/// One scored sentence-condition cell of the evaluation table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub sentence_id: String,
    pub strategy: String,
    pub noise: String,
    /// `None` is the quiet condition.
    pub snr_db: Option<f64>,
    pub predictor: String,
    pub score: f64,
}

fn snr_label(snr: &Option<f64>) -> String {
    match snr {
        Some(db) => format!("{db}"),
        None => "quiet".to_string(),
    }
}

pub fn scores_to_csv(rows: &[ScoreRow]) -> String {
    let mut out = String::from("sentence_id,strategy,noise,snr_db,predictor,score\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.sentence_id,
            r.strategy,
            r.noise,
            snr_label(&r.snr_db),
            r.predictor,
            r.score
        ));
    }
    out
}

pub fn scores_from_csv(text: &str) -> Result<Vec<ScoreRow>> {
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::Format(format!("score CSV line {}: 6 fields", ln + 1)));
        }
        let snr_db = if f[3] == "quiet" {
            None
        } else {
            Some(
                f[3].parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad SNR `{}`", f[3])))?,
            )
        };
        let score = f[5]
            .parse::<f64>()
            .map_err(|_| Error::Format(format!("bad score `{}`", f[5])))?;
        rows.push(ScoreRow {
            sentence_id: f[0].to_string(),
            strategy: f[1].to_string(),
            noise: f[2].to_string(),
            snr_db,
            predictor: f[4].to_string(),
            score,
        });
    }
    Ok(rows)
}

/// Pair two strategies' scores on (sentence, noise, SNR, predictor),
/// grouped by SNR label. Any cell present on one side only is a hard
/// error — correlation needs exactly matched conditions.
pub fn pair_scores(
    rows: &[ScoreRow],
    strategy_a: &str,
    strategy_b: &str,
) -> Result<Vec<(String, Vec<(f64, f64)>)>> {
    type Key = (String, String, String, String);
    let collect = |strategy: &str| -> BTreeMap<Key, f64> {
        rows.iter()
            .filter(|r| r.strategy == strategy)
            .map(|r| {
                (
                    (
                        r.sentence_id.clone(),
                        r.noise.clone(),
                        snr_label(&r.snr_db),
                        r.predictor.clone(),
                    ),
                    r.score,
                )
            })
            .collect()
    };
    let a = collect(strategy_a);
    let b = collect(strategy_b);
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("no scores for one of the strategies"));
    }
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (key, &va) in &a {
        match b.get(key) {
            Some(&vb) => groups.entry(key.2.clone()).or_default().push((va, vb)),
            None => {
                return Err(Error::PairingMismatch(format!(
                    "{strategy_b} missing {key:?}"
                )))
            }
        }
    }
    for key in b.keys() {
        if !a.contains_key(key) {
            return Err(Error::PairingMismatch(format!(
                "{strategy_a} missing {key:?}"
            )));
        }
    }
    Ok(groups.into_iter().collect())
}
