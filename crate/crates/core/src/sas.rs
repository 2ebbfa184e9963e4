//! Supervised atlas selection.
//!
//! For every ordered pair of training subjects `(s → s′)` at a landmark, the
//! baseline intensity quotient `α = p_s′ / p_s` transfers the follow-up patch
//! of `s` onto `s′`; the mean absolute error of that transfer is the target.
//! Two linear regressors learn the error from the positive and negative
//! directional disparities of the pair. At test time every atlas is scored by
//! the mean of both regressors and the lowest-error atlases win.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::Patch;
use crate::ranking::{AtlasRanking, RankedAtlas, Strategy};
use crate::similarity::{directional_disparities, quotient_map, QuotientBounds};
use crate::svr::{train_svr, LinearSvr, SvrParams};

/// Mean element-wise absolute difference.
pub fn prediction_error(truth: &[f64], predicted: &[f64]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::invalid(format!(
            "patch length mismatch: {} vs {}",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("cannot compare empty patches"));
    }
    let sum: f64 = truth.iter().zip(predicted).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRow {
    pub source: usize,
    pub target: usize,
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
    pub error: f64,
}

/// Ordered-pair disparity/error training set at one landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct PairErrorDataset {
    pub landmark_id: usize,
    pub rows: Vec<PairRow>,
}

fn check_aligned(t1: &[Patch], t2: &[Patch]) -> Result<()> {
    if t1.len() != t2.len() {
        return Err(Error::invalid("baseline and follow-up patch lists differ in length"));
    }
    for (a, b) in t1.iter().zip(t2) {
        if a.subject_id != b.subject_id || a.landmark_id != b.landmark_id || a.len() != b.len() {
            return Err(Error::invalid(format!(
                "patch lists are misaligned at subject {} / {}",
                a.subject_id, b.subject_id
            )));
        }
    }
    if let Some(first) = t1.first() {
        if t1.iter().any(|p| p.len() != first.len() || p.landmark_id != first.landmark_id) {
            return Err(Error::invalid("patches differ in length or landmark"));
        }
    }
    Ok(())
}

/// Builds the `n·(n−1)` ordered rows for aligned baseline/follow-up patches.
pub fn build_pair_error_dataset(t1: &[Patch], t2: &[Patch], bounds: QuotientBounds) -> Result<PairErrorDataset> {
    check_aligned(t1, t2)?;
    let n = t1.len();
    if n < 2 {
        return Err(Error::invalid("pair dataset needs at least two subjects"));
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|s| (0..n).filter(move |&t| t != s).map(move |t| (s, t)))
        .collect();
    let rows = pairs
        .into_par_iter()
        .map(|(s, t)| -> Result<PairRow> {
            let alpha = quotient_map(&t1[t].values, &t1[s].values, bounds)?;
            let predicted: Vec<f64> = alpha.iter().zip(&t2[s].values).map(|(a, p)| a * p).collect();
            let error = prediction_error(&t2[t].values, &predicted)?;
            let d = directional_disparities(&t1[s].values, &t1[t].values)?;
            Ok(PairRow {
                source: t1[s].subject_id,
                target: t1[t].subject_id,
                plus: d.plus,
                minus: d.minus,
                error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PairErrorDataset {
        landmark_id: t1[0].landmark_id,
        rows,
    })
}

/// The bidirectional error regressors of one landmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRegressorPair {
    pub landmark_id: usize,
    pub plus: LinearSvr,
    pub minus: LinearSvr,
}

impl ErrorRegressorPair {
    /// Mean of both regressors' predicted error.
    pub fn predict_error(&self, plus: &[f64], minus: &[f64]) -> f64 {
        0.5 * (self.plus.predict(plus) + self.minus.predict(minus))
    }
}

/// Fits `f⁺` on positive disparities and `f⁻` on negative disparities, both
/// regressing the same per-row error.
pub fn train_error_regressors(ds: &PairErrorDataset, params: SvrParams) -> Result<ErrorRegressorPair> {
    if ds.rows.is_empty() {
        return Err(Error::invalid("pair dataset is empty"));
    }
    let targets: Vec<f64> = ds.rows.iter().map(|r| r.error).collect();
    let plus_rows: Vec<&[f64]> = ds.rows.iter().map(|r| r.plus.as_slice()).collect();
    let minus_rows: Vec<&[f64]> = ds.rows.iter().map(|r| r.minus.as_slice()).collect();
    let (plus, minus) = rayon::join(
        || train_svr(&plus_rows, &targets, params),
        || train_svr(&minus_rows, &targets, params),
    );
    Ok(ErrorRegressorPair {
        landmark_id: ds.landmark_id,
        plus: plus?,
        minus: minus?,
    })
}

/// Scores every atlas by the predicted error of transferring it onto the test
/// patch; the test patch plays the target role.
pub fn rank_atlases_sas(pair: &ErrorRegressorPair, atlases_t1: &[Patch], test: &[f64]) -> Result<AtlasRanking> {
    let mut entries = Vec::with_capacity(atlases_t1.len());
    for atlas in atlases_t1 {
        if atlas.len() != pair.plus.dim() {
            return Err(Error::invalid("atlas patch does not match regressor dimension"));
        }
        let d = directional_disparities(&atlas.values, test)?;
        entries.push(RankedAtlas {
            subject_id: atlas.subject_id,
            score: pair.predict_error(&d.plus, &d.minus),
        });
    }
    Ok(AtlasRanking::new(Strategy::Sas, entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::Timepoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn patch(subject: usize, tp: Timepoint, values: Vec<f64>) -> Patch {
        Patch::new(0, subject, tp, values)
    }

    #[test]
    fn prediction_error_examples() {
        assert_eq!(prediction_error(&[0.5, 0.2], &[0.5, 0.2]).unwrap(), 0.0);
        assert_eq!(prediction_error(&[1.0, 2.0, 3.0], &[2.0, 2.0, 5.0]).unwrap(), 1.0);
        assert!(prediction_error(&[1.0], &[1.0, 2.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<f64> = (0..1331).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..1331).map(|_| rng.random()).collect();
        let mut s = 0.0;
        for i in 0..1331 {
            s += (a[i] - b[i]).abs();
        }
        assert!((prediction_error(&a, &b).unwrap() - s / 1331.0).abs() < 1e-15);
    }

    #[test]
    fn identical_subjects_have_zero_error() {
        let t1 = vec![patch(0, Timepoint::T1, vec![0.3, 0.6]), patch(1, Timepoint::T1, vec![0.3, 0.6])];
        let t2 = vec![patch(0, Timepoint::T2, vec![0.2, 0.5]), patch(1, Timepoint::T2, vec![0.2, 0.5])];
        let ds = build_pair_error_dataset(&t1, &t2, QuotientBounds::default()).unwrap();
        assert_eq!(ds.rows.len(), 2);
        assert!(ds.rows.iter().all(|r| r.error == 0.0));
    }

    #[test]
    fn consistent_scaling_transfers_exactly() {
        let t1 = vec![patch(0, Timepoint::T1, vec![1.0, 2.0]), patch(1, Timepoint::T1, vec![2.0, 4.0])];
        let t2 = vec![patch(0, Timepoint::T2, vec![2.0, 4.0]), patch(1, Timepoint::T2, vec![4.0, 8.0])];
        let ds = build_pair_error_dataset(&t1, &t2, QuotientBounds::default()).unwrap();
        let ab = ds.rows.iter().find(|r| r.source == 0 && r.target == 1).unwrap();
        assert_eq!(ab.error, 0.0);
        assert_eq!(ab.plus, vec![1.0, 2.0]);
        assert_eq!(ab.minus, vec![0.0, 0.0]);
    }

    #[test]
    fn misaligned_lists_are_rejected() {
        let t1 = vec![patch(0, Timepoint::T1, vec![1.0]), patch(1, Timepoint::T1, vec![2.0])];
        let t2 = vec![patch(1, Timepoint::T2, vec![2.0]), patch(0, Timepoint::T2, vec![4.0])];
        assert!(build_pair_error_dataset(&t1, &t2, QuotientBounds::default()).is_err());
        assert!(build_pair_error_dataset(&t1[..1], &t2[..1], QuotientBounds::default()).is_err());
    }

    #[test]
    fn ranking_is_permutation_and_ties_go_to_lower_id() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 5;
        let mut t1: Vec<Patch> = (0..n)
            .map(|s| patch(s, Timepoint::T1, (0..6).map(|_| 0.1 + rng.random::<f64>()).collect()))
            .collect();
        t1[3].values = t1[1].values.clone();
        let t2: Vec<Patch> = t1
            .iter()
            .map(|p| {
                let v = p.values.iter().map(|v| v * 0.9 + 0.05 * rng.random::<f64>()).collect();
                patch(p.subject_id, Timepoint::T2, v)
            })
            .collect();
        let ds = build_pair_error_dataset(&t1, &t2, QuotientBounds::default()).unwrap();
        let pair = train_error_regressors(&ds, SvrParams::default()).unwrap();
        let test: Vec<f64> = (0..6).map(|_| 0.1 + rng.random::<f64>()).collect();
        let r = rank_atlases_sas(&pair, &t1, &test).unwrap();
        assert!(r.entries[0].score < r.entries[n - 1].score);
        let mut ids: Vec<usize> = r.entries.iter().map(|e| e.subject_id).collect();
        let pos1 = ids.iter().position(|&i| i == 1).unwrap();
        let pos3 = ids.iter().position(|&i| i == 3).unwrap();
        assert_eq!(pos3, pos1 + 1);
        ids.sort();
        assert_eq!(ids, (0..n).collect::<Vec<_>>());
    }
}
