//! Per-landmark linear SVM classifiers with Platt calibration and
//! posterior-weighted majority voting.
//!
//! Labels are `-1` for normal controls and `+1` for the disease class.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::svm::{augmented_gram, solve_dual, sub_gram, LinearSvm, SvmSolverParams};
use crate::svr::dot;

pub const CONTROL: f64 = -1.0;
pub const DISEASE: f64 = 1.0;

/// Powers of two from `2^lo` to `2^hi` inclusive.
pub fn power_of_two_grid(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|e| 2f64.powi(e)).collect()
}

/// The default cost grid, `2^-6 ..= 2^15`.
pub fn default_c_grid() -> Vec<f64> {
    power_of_two_grid(-6, 15)
}

/// Stratified assignment of samples to `folds` folds; returns the fold index
/// of each sample. Within each class the order is shuffled by `rng`.
pub fn stratified_folds<R: rand::Rng>(labels: &[f64], folds: usize, rng: &mut R) -> Vec<usize> {
    let mut assignment = vec![0; labels.len()];
    let mut offset = 0;
    for class in [CONTROL, DISEASE] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        for (k, &i) in idx.iter().enumerate() {
            assignment[i] = (offset + k) % folds;
        }
        offset += idx.len();
    }
    assignment
}

fn class_counts(labels: &[f64]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y == DISEASE).count();
    (labels.len() - pos, pos)
}

/// Fold count actually usable for stratified CV.
fn effective_folds(labels: &[f64], folds: usize, what: &str) -> usize {
    let (neg, pos) = class_counts(labels);
    let min = neg.min(pos);
    if min < folds {
        log::warn!("{what}: smallest class has {min} samples, reducing {folds} folds to {min}");
        min
    } else {
        folds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub c: f64,
    pub folds: usize,
    /// Mean fold accuracy per grid value, in grid order.
    pub accuracies: Vec<f64>,
}

/// Stratified k-fold selection of the SVM cost on a precomputed augmented
/// Gram matrix. Highest mean accuracy wins; ties go to the smaller cost.
pub fn tune_c_on_gram(
    gram: &[f64],
    labels: &[f64],
    grid: &[f64],
    folds: usize,
    seed: u64,
    solver: SvmSolverParams,
) -> Result<CvOutcome> {
    if grid.is_empty() {
        return Err(Error::invalid("cost grid is empty"));
    }
    if folds < 2 {
        return Err(Error::invalid("cross-validation needs at least two folds"));
    }
    let n = labels.len();
    let folds = effective_folds(labels, folds, "cost tuning");
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]));
    if grid.len() == 1 || folds < 2 {
        let c = grid[order[0]];
        return Ok(CvOutcome {
            c,
            folds,
            accuracies: vec![f64::NAN; grid.len()],
        });
    }
    let mut rng = stream_rng(seed, "cv-folds", &[]);
    let assign = stratified_folds(labels, folds, &mut rng);
    let mut acc_sum = vec![0.0; grid.len()];
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| assign[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| assign[i] == f).collect();
        let g = sub_gram(gram, n, &train);
        let y: Vec<f64> = train.iter().map(|&i| labels[i]).collect();
        let mut warm: Option<Vec<f64>> = None;
        for &gi in &order {
            let sol = solve_dual(&g, &y, grid[gi], warm.as_deref(), solver)?;
            // decision(x_t) = Σ α_i y_i K(x_i, x_t) over the augmented Gram.
            let correct = test
                .iter()
                .filter(|&&t| {
                    let dec: f64 = train
                        .iter()
                        .zip(&sol.alpha)
                        .zip(&y)
                        .map(|((&i, &a), &yi)| a * yi * gram[i * n + t])
                        .sum();
                    let pred = if dec > 0.0 { DISEASE } else { CONTROL };
                    pred == labels[t]
                })
                .count();
            acc_sum[gi] += correct as f64 / test.len() as f64;
            warm = Some(sol.alpha);
        }
    }
    let accuracies: Vec<f64> = acc_sum.iter().map(|a| a / folds as f64).collect();
    let mut best = order[0];
    for &gi in &order {
        if accuracies[gi] > accuracies[best] {
            best = gi;
        }
    }
    Ok(CvOutcome {
        c: grid[best],
        folds,
        accuracies,
    })
}

/// Stratified k-fold selection of the SVM cost over `grid`.
pub fn tune_c_nested_cv<R: AsRef<[f64]>>(
    rows: &[R],
    labels: &[f64],
    grid: &[f64],
    folds: usize,
    seed: u64,
    solver: SvmSolverParams,
) -> Result<CvOutcome> {
    let gram = augmented_gram(rows, solver.bias_scale);
    tune_c_on_gram(&gram, labels, grid, folds, seed, solver)
}

/// Sigmoid `P(+1 | f) = 1 / (1 + exp(A f + B))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Platt {
    pub a: f64,
    pub b: f64,
    /// Newton iterations failed to converge and the fallback was used.
    pub fallback: bool,
}

impl Platt {
    pub fn probability(&self, decision: f64) -> f64 {
        let z = self.a * decision + self.b;
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}

/// Negative log-likelihood of the smoothed targets under `(a, b)`.
pub fn platt_nll(decisions: &[f64], labels: &[f64], a: f64, b: f64) -> f64 {
    let (neg, pos) = class_counts(labels);
    let hi = (pos as f64 + 1.0) / (pos as f64 + 2.0);
    let lo = 1.0 / (neg as f64 + 2.0);
    decisions
        .iter()
        .zip(labels)
        .map(|(&f, &y)| {
            let t = if y > 0.0 { hi } else { lo };
            let z = a * f + b;
            if z >= 0.0 {
                t * z + (1.0 + (-z).exp()).ln()
            } else {
                (t - 1.0) * z + (1.0 + z.exp()).ln()
            }
        })
        .sum()
}

/// Regularised maximum-likelihood sigmoid fit by damped Newton iterations.
pub fn platt_calibrate(decisions: &[f64], labels: &[f64]) -> Result<Platt> {
    if decisions.len() != labels.len() {
        return Err(Error::invalid("decision values and labels differ in length"));
    }
    let (neg, pos) = class_counts(labels);
    if neg == 0 || pos == 0 {
        return Err(Error::invalid("platt calibration needs both classes"));
    }
    let hi = (pos as f64 + 1.0) / (pos as f64 + 2.0);
    let lo = 1.0 / (neg as f64 + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&y| if y > 0.0 { hi } else { lo }).collect();

    let max_iter = 100;
    let min_step = 1e-10;
    let sigma = 1e-12;
    let tol = 1e-10;

    let mut a = 0.0;
    let mut b = ((neg as f64 + 1.0) / (pos as f64 + 1.0)).ln();
    let mut fval = platt_nll(decisions, labels, a, b);
    for _ in 0..max_iter {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (sigma, sigma, 0.0, 0.0, 0.0);
        for (&f, &t) in decisions.iter().zip(&targets) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = t - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < tol && g2.abs() < tol {
            return Ok(Platt { a, b, fallback: false });
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut moved = false;
        while step >= min_step {
            let na = a + step * da;
            let nb = b + step * db;
            let nf = platt_nll(decisions, labels, na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if !moved {
            // Line search cannot improve further; accept if the gradient is small.
            if g1.abs() < 1e-6 && g2.abs() < 1e-6 {
                return Ok(Platt { a, b, fallback: false });
            }
            break;
        }
    }
    log::warn!("platt calibration did not converge; using fallback sigmoid");
    Ok(Platt {
        a: -1.0,
        b: 0.0,
        fallback: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub c_grid: Vec<f64>,
    pub cv_folds: usize,
    pub platt_folds: usize,
    pub standardize: bool,
    pub std_floor: f64,
    pub solver: SvmSolverParams,
    /// Skip tuning and use this cost.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_c: Option<f64>,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        ClassifierParams {
            c_grid: default_c_grid(),
            cv_folds: 5,
            platt_folds: 3,
            standardize: true,
            std_floor: 1e-8,
            solver: SvmSolverParams::default(),
            fixed_c: None,
        }
    }
}

/// Per-dimension affine map fitted on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit<R: AsRef<[f64]>>(rows: &[R], floor: f64) -> Standardizer {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, &x) in mean.iter_mut().zip(r.as_ref()) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((v, &x), &m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var.into_iter().map(|v| (v / n).sqrt().max(floor)).collect();
        Standardizer { mean, scale }
    }

    pub fn identity(d: usize) -> Standardizer {
        Standardizer {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect()
    }
}

/// A calibrated linear SVM at one landmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkClassifier {
    pub landmark_id: usize,
    pub svm: LinearSvm,
    pub platt: Platt,
    pub standardizer: Standardizer,
    pub cv: CvOutcome,
}

impl LandmarkClassifier {
    pub fn decision(&self, raw: &[f64]) -> f64 {
        dot(&self.svm.weights, &self.standardizer.apply(raw)) + self.svm.bias
    }

    /// `P(disease | x)`.
    pub fn probability(&self, raw: &[f64]) -> f64 {
        self.platt.probability(self.decision(raw))
    }

    /// Predicted label and the posterior of that label.
    pub fn vote(&self, raw: &[f64]) -> LandmarkVote {
        let p = self.probability(raw);
        if p > 0.5 {
            LandmarkVote { label: DISEASE, posterior: p }
        } else {
            LandmarkVote {
                label: CONTROL,
                posterior: 1.0 - p,
            }
        }
    }
}

/// Trains one landmark's classifier: standardise, tune the cost by stratified
/// CV, calibrate on out-of-fold decision values, refit on all rows.
pub fn train_landmark_classifier<R: AsRef<[f64]>>(
    landmark_id: usize,
    rows: &[R],
    labels: &[f64],
    params: &ClassifierParams,
    seed: u64,
) -> Result<LandmarkClassifier> {
    if rows.len() != labels.len() || rows.is_empty() {
        return Err(Error::invalid("classifier rows and labels differ in length or are empty"));
    }
    let (neg, pos) = class_counts(labels);
    if neg == 0 || pos == 0 {
        return Err(Error::Config("training data contains a single class".into()));
    }
    let d = rows[0].as_ref().len();
    let standardizer = if params.standardize {
        Standardizer::fit(rows, params.std_floor)
    } else {
        Standardizer::identity(d)
    };
    let x: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.apply(r.as_ref())).collect();
    let n = x.len();
    let gram = augmented_gram(&x, params.solver.bias_scale);

    let cv = match params.fixed_c {
        Some(c) => CvOutcome {
            c,
            folds: 0,
            accuracies: Vec::new(),
        },
        None => tune_c_on_gram(&gram, labels, &params.c_grid, params.cv_folds, seed, params.solver)?,
    };

    // Out-of-fold decision values for calibration.
    let folds = effective_folds(labels, params.platt_folds, "platt calibration").max(1);
    let mut decisions = vec![0.0; n];
    if folds >= 2 {
        let mut rng = stream_rng(seed, "platt-folds", &[]);
        let assign = stratified_folds(labels, folds, &mut rng);
        for f in 0..folds {
            let train: Vec<usize> = (0..n).filter(|&i| assign[i] != f).collect();
            let y: Vec<f64> = train.iter().map(|&i| labels[i]).collect();
            let g = sub_gram(&gram, n, &train);
            let sol = solve_dual(&g, &y, cv.c, None, params.solver)?;
            for t in (0..n).filter(|&i| assign[i] == f) {
                decisions[t] = train
                    .iter()
                    .zip(&sol.alpha)
                    .zip(&y)
                    .map(|((&i, &a), &yi)| a * yi * gram[i * n + t])
                    .sum();
            }
        }
    }
    let full = solve_dual(&gram, labels, cv.c, None, params.solver)?;
    let svm = LinearSvm::from_dual(&x, labels, &full.alpha, cv.c, params.solver.bias_scale);
    if folds < 2 {
        for (dv, xi) in decisions.iter_mut().zip(&x) {
            *dv = svm.decision(xi);
        }
    }
    let platt = platt_calibrate(&decisions, labels)?;
    Ok(LandmarkClassifier {
        landmark_id,
        svm,
        platt,
        standardizer,
        cv,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkVote {
    pub label: f64,
    pub posterior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResult {
    /// One entry per landmark; `None` marks an abstention.
    pub votes: Vec<Option<LandmarkVote>>,
    pub score_control: f64,
    pub score_disease: f64,
    pub label: f64,
}

/// Posterior-weighted majority vote; ties go to the control class.
pub fn weighted_vote(votes: &[Option<LandmarkVote>]) -> Result<VoteResult> {
    if votes.iter().all(|v| v.is_none()) {
        return Err(Error::invalid("no landmark cast a vote"));
    }
    let mut score_control = 0.0;
    let mut score_disease = 0.0;
    for v in votes.iter().flatten() {
        if !(0.0..=1.0).contains(&v.posterior) {
            return Err(Error::invalid(format!("posterior {} outside [0, 1]", v.posterior)));
        }
        if v.label > 0.0 {
            score_disease += v.posterior;
        } else {
            score_control += v.posterior;
        }
    }
    let label = if score_disease > score_control { DISEASE } else { CONTROL };
    Ok(VoteResult {
        votes: votes.to_vec(),
        score_control,
        score_disease,
        label,
    })
}

/// Votes every landmark classifier on its feature vector; missing features
/// abstain.
pub fn classify_subject(classifiers: &[LandmarkClassifier], features: &[Option<Vec<f64>>]) -> Result<VoteResult> {
    if classifiers.len() != features.len() {
        return Err(Error::invalid("one feature slot per landmark classifier is required"));
    }
    let votes: Vec<Option<LandmarkVote>> = classifiers
        .iter()
        .zip(features)
        .map(|(clf, f)| match f {
            Some(x) => Some(clf.vote(x)),
            None => {
                log::info!("landmark {} abstains: no feature vector", clf.landmark_id);
                None
            }
        })
        .collect();
    weighted_vote(&votes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn default_grid_has_22_powers_of_two() {
        let g = default_c_grid();
        assert_eq!(g.len(), 22);
        assert_eq!(g[0], 2f64.powi(-6));
        assert_eq!(g[21], 2f64.powi(15));
        assert!(g.windows(2).all(|w| w[1] == 2.0 * w[0]));
    }

    #[test]
    fn stratified_folds_balance_classes() {
        let labels: Vec<f64> = (0..20).map(|i| if i < 10 { CONTROL } else { DISEASE }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = stratified_folds(&labels, 5, &mut rng);
        for f in 0..5 {
            let neg = (0..10).filter(|&i| a[i] == f).count();
            let pos = (10..20).filter(|&i| a[i] == f).count();
            assert_eq!((neg, pos), (2, 2));
        }
    }

    fn blobs(seed: u64, n: usize, sep: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = if i % 2 == 0 { CONTROL } else { DISEASE };
            rows.push(vec![y * sep + noise.sample(&mut rng), noise.sample(&mut rng)]);
            labels.push(y);
        }
        (rows, labels)
    }

    #[test]
    fn tuning_singleton_grid_and_separable_tiebreak() {
        let (rows, labels) = blobs(3, 20, 10.0);
        let p = SvmSolverParams::default();
        assert_eq!(tune_c_nested_cv(&rows, &labels, &[0.5], 5, 1, p).unwrap().c, 0.5);
        let grid = default_c_grid();
        let out = tune_c_nested_cv(&rows, &labels, &grid, 5, 1, p).unwrap();
        assert!(out.accuracies.iter().all(|&a| a == 1.0));
        assert_eq!(out.c, grid[0]);
        let again = tune_c_nested_cv(&rows, &labels, &grid, 5, 1, p).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn tuning_reduces_folds_for_small_classes() {
        let (rows, labels) = blobs(4, 6, 1.0);
        let out = tune_c_nested_cv(&rows, &labels, &[0.1, 1.0], 5, 1, SvmSolverParams::default()).unwrap();
        assert_eq!(out.folds, 3);
    }

    #[test]
    fn platt_symmetric_data_has_zero_offset() {
        let decisions = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0, -1.5, 1.5];
        let labels = [CONTROL, CONTROL, DISEASE, CONTROL, DISEASE, DISEASE, CONTROL, DISEASE];
        let p = platt_calibrate(&decisions, &labels).unwrap();
        assert!(!p.fallback);
        assert!(p.b.abs() < 1e-6);
        assert!((p.probability(0.0) - 0.5).abs() < 1e-6);
        assert!(p.a < 0.0);
    }

    #[test]
    fn platt_probability_is_monotone() {
        let (rows, labels) = blobs(5, 30, 1.0);
        let decisions: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let p = platt_calibrate(&decisions, &labels).unwrap();
        assert!(p.a < 0.0);
        let mut prev = 0.0;
        for i in -50..50 {
            let q = p.probability(i as f64 * 0.2);
            assert!(q >= prev);
            prev = q;
        }
    }

    #[test]
    fn platt_needs_both_classes() {
        assert!(platt_calibrate(&[1.0, 2.0], &[DISEASE, DISEASE]).is_err());
    }

    #[test]
    fn vote_examples() {
        let v = |label, posterior| Some(LandmarkVote { label, posterior });
        assert_eq!(weighted_vote(&[v(DISEASE, 0.9), v(CONTROL, 0.6)]).unwrap().label, DISEASE);
        assert_eq!(weighted_vote(&[v(DISEASE, 0.5), v(CONTROL, 0.5)]).unwrap().label, CONTROL);
        assert!(weighted_vote(&[None]).is_err());
        assert!(weighted_vote(&[v(DISEASE, 1.5)]).is_err());
        let r = weighted_vote(&[v(DISEASE, 1.0), None, v(DISEASE, 1.0)]).unwrap();
        assert_eq!(r.score_disease, 2.0);
    }

    #[test]
    fn landmark_classifier_learns_blobs() {
        let (rows, labels) = blobs(6, 40, 3.0);
        let clf = train_landmark_classifier(0, &rows, &labels, &ClassifierParams::default(), 9).unwrap();
        let correct = rows
            .iter()
            .zip(&labels)
            .filter(|(r, &y)| clf.vote(r).label == y)
            .count();
        assert!(correct >= 36);
        assert!(clf.platt.a < 0.0);
        let again = train_landmark_classifier(0, &rows, &labels, &ClassifierParams::default(), 9).unwrap();
        assert_eq!(clf, again);
    }

    #[test]
    fn classify_subject_single_and_abstaining() {
        let (rows, labels) = blobs(7, 20, 4.0);
        let clf = train_landmark_classifier(0, &rows, &labels, &ClassifierParams::default(), 1).unwrap();
        let x = vec![4.0, 0.0];
        let r = classify_subject(std::slice::from_ref(&clf), &[Some(x.clone())]).unwrap();
        assert_eq!(r.label, clf.vote(&x).label);
        let two = vec![clf.clone(), clf];
        let r = classify_subject(&two, &[Some(x), None]).unwrap();
        assert!(r.votes[1].is_none());
        assert!(classify_subject(&two, &[None, None]).is_err());
    }
}
