//! Follow-up patch prediction from ranked atlases, and prediction metrics.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::{Patch, Timepoint};
use crate::ranking::AtlasRanking;
use crate::similarity::{quotient_map, QuotientBounds};

/// How an atlas follow-up patch is carried over to the test subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transfer {
    /// Use the atlas follow-up patch as is.
    PlainAverage,
    /// Multiply the atlas follow-up patch by the baseline quotient
    /// `test_t1 / atlas_t1`.
    QuotientMapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    /// Weights proportional to the ranking scores.
    Similarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionConfig {
    pub k: usize,
    pub transfer: Transfer,
    pub weighting: Weighting,
    pub bounds: QuotientBounds,
    /// Upper clamp of predicted intensities.
    pub intensity_max: f64,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig {
            k: 1,
            transfer: Transfer::PlainAverage,
            weighting: Weighting::Uniform,
            bounds: QuotientBounds::default(),
            intensity_max: 1.0,
        }
    }
}

/// Combines the follow-up patches of the top-`k` atlases into a prediction
/// for the test subject.
pub fn predict_followup(
    ranking: &AtlasRanking,
    atlases_t1: &[Patch],
    atlases_t2: &[Patch],
    test_t1: &Patch,
    cfg: &PredictionConfig,
) -> Result<Patch> {
    if cfg.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if cfg.k > ranking.len() {
        return Err(Error::invalid(format!(
            "k = {} exceeds the {} ranked atlases",
            cfg.k,
            ranking.len()
        )));
    }
    let by_id_t1: HashMap<usize, &Patch> = atlases_t1.iter().map(|p| (p.subject_id, p)).collect();
    let by_id_t2: HashMap<usize, &Patch> = atlases_t2.iter().map(|p| (p.subject_id, p)).collect();
    let top = ranking.top(cfg.k);
    let weights: Vec<f64> = match cfg.weighting {
        Weighting::Uniform => vec![1.0; top.len()],
        Weighting::Similarity => {
            let w: Vec<f64> = top.iter().map(|e| e.score.max(0.0)).collect();
            if w.iter().sum::<f64>() > 0.0 {
                w
            } else {
                vec![1.0; top.len()]
            }
        }
    };
    let total: f64 = weights.iter().sum();
    let dim = test_t1.len();
    let mut out = vec![0.0; dim];
    for (entry, &wt) in top.iter().zip(&weights) {
        let t2 = by_id_t2
            .get(&entry.subject_id)
            .ok_or_else(|| Error::invalid(format!("no follow-up patch for atlas {}", entry.subject_id)))?;
        if t2.len() != dim {
            return Err(Error::invalid("atlas follow-up patch has the wrong length"));
        }
        match cfg.transfer {
            Transfer::PlainAverage => {
                for (o, &v) in out.iter_mut().zip(&t2.values) {
                    *o += wt * v;
                }
            }
            Transfer::QuotientMapped => {
                let t1 = by_id_t1
                    .get(&entry.subject_id)
                    .ok_or_else(|| Error::invalid(format!("no baseline patch for atlas {}", entry.subject_id)))?;
                let alpha = quotient_map(&test_t1.values, &t1.values, cfg.bounds)?;
                for ((o, &v), &a) in out.iter_mut().zip(&t2.values).zip(&alpha) {
                    *o += wt * (a * v).clamp(0.0, cfg.intensity_max);
                }
            }
        }
    }
    for o in &mut out {
        *o = (*o / total).clamp(0.0, cfg.intensity_max);
    }
    Ok(Patch::new(test_t1.landmark_id, test_t1.subject_id, Timepoint::T2, out))
}

/// Mean absolute error between two patches.
pub fn mae(p: &[f64], q: &[f64]) -> Result<f64> {
    crate::sas::prediction_error(p, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pearson {
    pub r: f64,
    /// One of the vectors had zero variance; `r` is reported as 0.
    pub degenerate: bool,
}

/// Sample Pearson correlation.
pub fn pearson(p: &[f64], q: &[f64]) -> Result<Pearson> {
    if p.len() != q.len() {
        return Err(Error::invalid("pearson inputs differ in length"));
    }
    if p.len() < 2 {
        return Err(Error::invalid("pearson needs at least two values"));
    }
    let n = p.len() as f64;
    let mp = p.iter().sum::<f64>() / n;
    let mq = q.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in p.iter().zip(q) {
        let da = a - mp;
        let db = b - mq;
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(Pearson { r: 0.0, degenerate: true });
    }
    Ok(Pearson {
        r: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}
