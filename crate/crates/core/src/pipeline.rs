//! Leave-one-out evaluation: per held-out subject, landmarks, atlas
//! selection, follow-up prediction and the landmark classifier ensemble are
//! all built from the remaining subjects only.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{train_landmark_classifier, weighted_vote, LandmarkClassifier, LandmarkVote, VoteResult};
use crate::cohort::{Class, Cohort};
use crate::config::{Arm, CTuning, FollowupSource, PipelineConfig, RoiConfig, Threshold};
use crate::error::{Error, Result};
use crate::landmarks::{
    auto_threshold, edge_density_map, extract_landmark_patch, select_landmarks, sobel_edge_map, thin_landmarks,
    Landmark, Patch, Timepoint,
};
use crate::mkml::{optimize_similarity, rank_atlases_mkml, SimilarityModel};
use crate::ranking::{AtlasRanking, RankedAtlas};
use crate::report::{ArmMetrics, EvaluationReport, FoldDiagnostics, LandmarkDiagnostics, RoiReport, SubjectArm, SubjectResult, Timings};
use crate::rng::stream_seed;
use crate::sas::{build_pair_error_dataset, rank_atlases_sas, train_error_regressors, ErrorRegressorPair};
use crate::similarity::{build_kernel_bank, default_knn, sigma_grid, KernelOptions};
use crate::svr::SvrParams;
use crate::trajectory::{mae, pearson, predict_followup, PredictionConfig};
use crate::volume::Volume;

/// Sobel edge maps of every subject's label map for one ROI. Each map only
/// depends on its own subject, so folds select from a shared list.
pub fn roi_edges(cohort: &Cohort, roi: &RoiConfig) -> Result<Vec<Volume>> {
    cohort
        .subjects
        .par_iter()
        .map(|s| sobel_edge_map(&s.label, roi.label, roi.sobel))
        .collect()
}

/// Threshold and landmarks from the edge maps of `train` only.
pub fn fold_landmarks(edges: &[Volume], train: &[usize], roi: &RoiConfig) -> Result<(f64, Vec<Landmark>)> {
    let selected: Vec<&Volume> = train.iter().map(|&i| &edges[i]).collect();
    let density = edge_density_map(&selected)?;
    let threshold = match roi.edge_threshold {
        Threshold::Value(t) => t,
        Threshold::Auto => auto_threshold(&density)
            .ok_or_else(|| Error::Data(format!("roi {:?}: no edges in the training label maps", roi.name)))?,
    };
    let lms = select_landmarks(&density, threshold, roi.patch_side / 2, &roi.name)?;
    Ok((threshold, thin_landmarks(lms, roi.max_landmarks)))
}

/// Training-side products of one landmark in one fold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LandmarkArtifacts {
    pub landmark_id: usize,
    pub sas: Option<ErrorRegressorPair>,
    pub mkml: Option<SimilarityModel>,
    /// Follow-up features of the training subjects, per predicting arm.
    pub train_followup: Vec<(Arm, Vec<Vec<f64>>)>,
    pub classifiers: Vec<(Arm, LandmarkClassifier)>,
}

/// Everything a fold derives from its training subjects.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldArtifacts {
    pub held_out: usize,
    pub roi: String,
    pub train: Vec<usize>,
    pub threshold: f64,
    pub landmarks: Vec<Landmark>,
    pub per_landmark: Vec<Option<LandmarkArtifacts>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionQuality {
    pub mae: f64,
    pub pearson: f64,
    pub degenerate: bool,
}

/// Held-out side of one landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkOutcome {
    pub landmark_id: usize,
    pub votes: Vec<(Arm, LandmarkVote)>,
    pub quality: Vec<(Arm, PredictionQuality)>,
    pub diagnostics: LandmarkDiagnostics,
    pub predicted_t2: Vec<(Arm, Patch)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub artifacts: Option<FoldArtifacts>,
    pub outcomes: Vec<Option<LandmarkOutcome>>,
    pub diagnostics: FoldDiagnostics,
}

struct FoldContext<'a> {
    cohort: &'a Cohort,
    cfg: &'a PipelineConfig,
    roi: &'a RoiConfig,
    roi_index: usize,
    held_out: usize,
    train: Vec<usize>,
    labels: Vec<f64>,
    /// Per-ROI cost shared by every landmark, when tuning is shared.
    shared_c: Option<f64>,
}

fn arm_index(arm: Arm) -> u64 {
    match arm {
        Arm::Baseline => 0,
        Arm::Sas => 1,
        Arm::Mkml => 2,
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

fn remap(ranking: AtlasRanking, ids: &[usize]) -> AtlasRanking {
    let entries = ranking
        .entries
        .into_iter()
        .map(|e| RankedAtlas {
            subject_id: ids[e.subject_id],
            score: e.score,
        })
        .collect();
    AtlasRanking::new(ranking.strategy, entries)
}

struct ArmPredictions {
    train: Vec<Vec<f64>>,
    test: Patch,
}

fn sas_predictions(
    ctx: &FoldContext,
    t1: &[Patch],
    t2: &[Patch],
    test_t1: &Patch,
    pcfg: &PredictionConfig,
    seed: u64,
) -> Result<(ErrorRegressorPair, ArmPredictions)> {
    let ds = build_pair_error_dataset(t1, t2, ctx.cfg.quotient_bounds)?;
    let params = SvrParams { seed, ..ctx.cfg.svr };
    let pair = train_error_regressors(&ds, params)?;
    let mut train = Vec::with_capacity(t1.len());
    for p in t1 {
        let ranking = rank_atlases_sas(&pair, t1, &p.values)?.without(p.subject_id);
        train.push(predict_followup(&ranking, t1, t2, p, pcfg)?.values);
    }
    let ranking = rank_atlases_sas(&pair, t1, &test_t1.values)?;
    let test = predict_followup(&ranking, t1, t2, test_t1, pcfg)?;
    Ok((pair, ArmPredictions { train, test }))
}

fn mkml_predictions(
    ctx: &FoldContext,
    t1: &[Patch],
    t2: &[Patch],
    test_t1: &Patch,
    pcfg: &PredictionConfig,
) -> Result<(SimilarityModel, ArmPredictions)> {
    let params = ctx.cfg.mkml.params(ctx.roi.mkml.c);
    let sigmas = sigma_grid(ctx.roi.mkml.m);
    let knn = |n: usize| {
        if ctx.cfg.mkml.knn > 0 {
            ctx.cfg.mkml.knn.min(n - 1)
        } else {
            default_knn(n)
        }
    };
    let ids: Vec<usize> = t1.iter().map(|p| p.subject_id).collect();
    let vals: Vec<&[f64]> = t1.iter().map(|p| p.values.as_slice()).collect();
    let bank = build_kernel_bank(&vals, &sigmas, knn(vals.len()), KernelOptions::default())?;
    let model = optimize_similarity(&bank, &params)?;
    let mut train = Vec::with_capacity(t1.len());
    for (i, p) in t1.iter().enumerate() {
        let ranking = remap(rank_atlases_mkml(&model, i)?, &ids);
        train.push(predict_followup(&ranking, t1, t2, p, pcfg)?.values);
    }
    // The held-out baseline patch joins the manifold as the last row.
    let mut all = vals.clone();
    all.push(&test_t1.values);
    let bank = build_kernel_bank(&all, &sigmas, knn(all.len()), KernelOptions::default())?;
    let test_model = optimize_similarity(&bank, &params)?;
    let mut ids_all = ids.clone();
    ids_all.push(test_t1.subject_id);
    let ranking = remap(rank_atlases_mkml(&test_model, vals.len())?, &ids_all);
    let test = predict_followup(&ranking, t1, t2, test_t1, pcfg)?;
    Ok((model, ArmPredictions { train, test }))
}

fn landmark_task(ctx: &FoldContext, lm: &Landmark) -> Result<(LandmarkArtifacts, LandmarkOutcome)> {
    let side = ctx.roi.patch_side;
    let subjects = &ctx.cohort.subjects;
    let mut t1 = Vec::with_capacity(ctx.train.len());
    let mut t2 = Vec::with_capacity(ctx.train.len());
    for &i in &ctx.train {
        t1.push(extract_landmark_patch(&subjects[i].t1, lm, side, i, Timepoint::T1)?);
        t2.push(extract_landmark_patch(&subjects[i].t2, lm, side, i, Timepoint::T2)?);
    }
    let h = ctx.held_out;
    let test_t1 = extract_landmark_patch(&subjects[h].t1, lm, side, h, Timepoint::T1)?;
    let base_seed = stream_seed(
        ctx.cfg.seed,
        "landmark",
        &[h as u64, ctx.roi_index as u64, lm.index as u64],
    );

    let mut artifacts = LandmarkArtifacts {
        landmark_id: lm.index,
        sas: None,
        mkml: None,
        train_followup: Vec::new(),
        classifiers: Vec::new(),
    };
    let mut diagnostics = LandmarkDiagnostics {
        landmark_id: lm.index,
        coord: lm.coord,
        density: lm.density,
        ..Default::default()
    };
    let mut predicted: Vec<(Arm, ArmPredictions)> = Vec::new();
    if ctx.cfg.has_arm(Arm::Sas) {
        let pcfg = ctx.roi.sas_prediction(ctx.cfg.quotient_bounds, ctx.cfg.intensity_max);
        let (pair, preds) = sas_predictions(ctx, &t1, &t2, &test_t1, &pcfg, stream_seed(base_seed, "svr", &[]))?;
        diagnostics.svr_converged = Some(pair.plus.diagnostics.converged && pair.minus.diagnostics.converged);
        artifacts.sas = Some(pair);
        predicted.push((Arm::Sas, preds));
    }
    if ctx.cfg.has_arm(Arm::Mkml) {
        let pcfg = ctx.roi.mkml_prediction(ctx.cfg.quotient_bounds, ctx.cfg.intensity_max);
        let (model, preds) = mkml_predictions(ctx, &t1, &t2, &test_t1, &pcfg)?;
        diagnostics.mkml_iterations = Some(model.iterations);
        diagnostics.mkml_degenerate = Some(model.eigengap_degenerate);
        artifacts.mkml = Some(model);
        predicted.push((Arm::Mkml, preds));
    }

    let truth = extract_landmark_patch(&subjects[h].t2, lm, side, h, Timepoint::T2)?;
    let mut quality = Vec::new();
    for (arm, p) in &predicted {
        let r = pearson(&p.test.values, &truth.values)?;
        quality.push((
            *arm,
            PredictionQuality {
                mae: mae(&p.test.values, &truth.values)?,
                pearson: r.r,
                degenerate: r.degenerate,
            },
        ));
    }

    let mut params = ctx.cfg.classifier_params();
    params.fixed_c = ctx.shared_c;
    let mut votes = Vec::new();
    for arm in Arm::ALL.into_iter().filter(|a| ctx.cfg.has_arm(*a)) {
        let (rows, test_row): (Vec<Vec<f64>>, Vec<f64>) = match arm {
            Arm::Baseline => (t1.iter().map(|p| p.values.clone()).collect(), test_t1.values.clone()),
            _ => {
                let preds = &predicted.iter().find(|(a, _)| *a == arm).expect("arm was predicted").1;
                let followup: Vec<Vec<f64>> = match ctx.cfg.train_followup {
                    FollowupSource::Predicted => preds.train.clone(),
                    FollowupSource::GroundTruth => t2.iter().map(|p| p.values.clone()).collect(),
                };
                let rows = t1.iter().zip(&followup).map(|(a, b)| concat(&a.values, b)).collect();
                artifacts.train_followup.push((arm, followup));
                (rows, concat(&test_t1.values, &preds.test.values))
            }
        };
        let seed = stream_seed(base_seed, "classifier", &[arm_index(arm)]);
        let clf = train_landmark_classifier(lm.index, &rows, &ctx.labels, &params, seed)?;
        diagnostics.c.push((arm, clf.cv.c));
        if clf.platt.fallback {
            diagnostics.platt_fallback.push(arm);
        }
        votes.push((arm, clf.vote(&test_row)));
        artifacts.classifiers.push((arm, clf));
    }
    let predicted_t2 = predicted.into_iter().map(|(a, p)| (a, p.test)).collect();
    Ok((
        artifacts,
        LandmarkOutcome {
            landmark_id: lm.index,
            votes,
            quality,
            diagnostics,
            predicted_t2,
        },
    ))
}

fn training_indices(cohort: &Cohort, held_out: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let train: Vec<usize> = (0..cohort.len()).filter(|&i| i != held_out).collect();
    let labels: Vec<f64> = train.iter().map(|&i| cohort.subjects[i].class.label()).collect();
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::Config(format!(
            "training fold without subject {} contains a single class",
            cohort.subjects[held_out].id
        )));
    }
    Ok((train, labels))
}

/// Chooses one cost per ROI from up to four evenly spaced landmarks.
fn shared_cost(ctx: &FoldContext, landmarks: &[Landmark]) -> Result<f64> {
    let params = ctx.cfg.classifier_params();
    let picks: Vec<&Landmark> = if landmarks.len() <= 4 {
        landmarks.iter().collect()
    } else {
        (0..4).map(|i| &landmarks[i * landmarks.len() / 4]).collect()
    };
    let grid = &params.c_grid;
    let mut acc = vec![0.0; grid.len()];
    for lm in &picks {
        let rows: Vec<Vec<f64>> = ctx
            .train
            .iter()
            .map(|&i| crate::landmarks::extract_patch(&ctx.cohort.subjects[i].t1, lm.coord, ctx.roi.patch_side))
            .collect::<Result<_>>()?;
        let rows: Vec<Vec<f64>> = if params.standardize {
            let st = crate::classify::Standardizer::fit(&rows, params.std_floor);
            rows.iter().map(|r| st.apply(r)).collect()
        } else {
            rows
        };
        let seed = stream_seed(ctx.cfg.seed, "shared-c", &[ctx.held_out as u64, lm.index as u64]);
        let out = crate::classify::tune_c_nested_cv(&rows, &ctx.labels, grid, params.cv_folds, seed, params.solver)?;
        for (a, v) in acc.iter_mut().zip(&out.accuracies) {
            *a += if v.is_nan() { 0.0 } else { *v };
        }
    }
    let mut best = 0;
    for (g, &a) in acc.iter().enumerate() {
        if a > acc[best] {
            best = g;
        }
    }
    Ok(grid[best])
}

/// One leave-one-out fold for one ROI.
pub fn run_fold(
    cohort: &Cohort,
    edges: &[Volume],
    cfg: &PipelineConfig,
    roi_index: usize,
    held_out: usize,
    keep_artifacts: bool,
) -> Result<FoldOutcome> {
    let roi = &cfg.rois[roi_index];
    let (train, labels) = training_indices(cohort, held_out)?;
    let (threshold, landmarks) = fold_landmarks(edges, &train, roi)?;
    if landmarks.is_empty() {
        return Err(Error::Data(format!(
            "roi {:?}: no landmark above threshold {threshold} with full patch support",
            roi.name
        )));
    }
    let mut ctx = FoldContext {
        cohort,
        cfg,
        roi,
        roi_index,
        held_out,
        train,
        labels,
        shared_c: None,
    };
    if cfg.c_tuning == CTuning::SharedPerRoi {
        ctx.shared_c = Some(shared_cost(&ctx, &landmarks)?);
    }
    let results: Vec<Result<(LandmarkArtifacts, LandmarkOutcome)>> =
        landmarks.par_iter().map(|lm| landmark_task(&ctx, lm)).collect();

    let mut outcomes = Vec::with_capacity(landmarks.len());
    let mut per_landmark = Vec::with_capacity(landmarks.len());
    let mut diag_lms = Vec::with_capacity(landmarks.len());
    for (lm, r) in landmarks.iter().zip(results) {
        match r {
            Ok((a, o)) => {
                diag_lms.push(o.diagnostics.clone());
                per_landmark.push(Some(a));
                outcomes.push(Some(o));
            }
            Err(e) => {
                log::warn!(
                    "fold {} roi {:?}: landmark {} skipped: {e}",
                    cohort.subjects[held_out].id,
                    roi.name,
                    lm.index
                );
                diag_lms.push(LandmarkDiagnostics {
                    landmark_id: lm.index,
                    coord: lm.coord,
                    density: lm.density,
                    error: Some(e.to_string()),
                    ..Default::default()
                });
                per_landmark.push(None);
                outcomes.push(None);
            }
        }
    }
    let diagnostics = FoldDiagnostics {
        held_out: cohort.subjects[held_out].id.clone(),
        threshold,
        n_landmarks: landmarks.len(),
        shared_c: ctx.shared_c,
        landmarks: diag_lms,
    };
    let artifacts = keep_artifacts.then(|| FoldArtifacts {
        held_out,
        roi: roi.name.clone(),
        train: ctx.train.clone(),
        threshold,
        landmarks,
        per_landmark,
    });
    Ok(FoldOutcome {
        artifacts,
        outcomes,
        diagnostics,
    })
}

fn vote_arm(outcomes: &[Option<LandmarkOutcome>], arm: Arm) -> Result<VoteResult> {
    let votes: Vec<Option<LandmarkVote>> = outcomes
        .iter()
        .map(|o| o.as_ref().and_then(|o| o.votes.iter().find(|(a, _)| *a == arm).map(|(_, v)| *v)))
        .collect();
    weighted_vote(&votes).map_err(|_| Error::Data(format!("no landmark produced a {} vote", arm.name())))
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

fn subject_arm(outcomes: &[Option<LandmarkOutcome>], arm: Arm) -> Result<SubjectArm> {
    let vote = vote_arm(outcomes, arm)?;
    let qualities: Vec<PredictionQuality> = outcomes
        .iter()
        .flatten()
        .filter_map(|o| o.quality.iter().find(|(a, _)| *a == arm).map(|(_, q)| *q))
        .collect();
    Ok(SubjectArm {
        strategy: arm,
        predicted: Class::from_label(vote.label),
        score_control: vote.score_control,
        score_disease: vote.score_disease,
        abstentions: vote.votes.iter().filter(|v| v.is_none()).count(),
        mae: mean(qualities.iter().map(|q| q.mae)),
        pearson: mean(qualities.iter().map(|q| q.pearson)),
    })
}

fn run_roi(cohort: &Cohort, cfg: &PipelineConfig, roi_index: usize) -> Result<RoiReport> {
    let roi = &cfg.rois[roi_index];
    let edges = roi_edges(cohort, roi)?;
    let folds: Vec<Result<(SubjectResult, FoldDiagnostics)>> = (0..cohort.len())
        .into_par_iter()
        .map(|h| {
            let fold = run_fold(cohort, &edges, cfg, roi_index, h, false)?;
            let arms = cfg
                .arms_in_order()
                .into_iter()
                .map(|arm| subject_arm(&fold.outcomes, arm))
                .collect::<Result<Vec<_>>>()?;
            log::info!("roi {:?}: fold {} done", roi.name, cohort.subjects[h].id);
            Ok((
                SubjectResult {
                    id: cohort.subjects[h].id.clone(),
                    class: cohort.subjects[h].class,
                    arms,
                },
                fold.diagnostics,
            ))
        })
        .collect();
    let mut subjects = Vec::with_capacity(folds.len());
    let mut diagnostics = Vec::with_capacity(folds.len());
    for f in folds {
        let (s, d) = f?;
        subjects.push(s);
        diagnostics.push(d);
    }
    let arms = cfg
        .arms_in_order()
        .into_iter()
        .map(|arm| ArmMetrics::from_subjects(arm, &subjects))
        .collect();
    Ok(RoiReport {
        roi: roi.name.clone(),
        label: roi.label,
        arms,
        subjects,
        folds: diagnostics,
    })
}

/// Full leave-one-out evaluation of every configured ROI and arm.
pub fn run_loocv(cohort: &Cohort, cfg: &PipelineConfig) -> Result<(EvaluationReport, Timings)> {
    cfg.validate()?;
    if cohort.len() < 3 {
        return Err(Error::Data("leave-one-out needs at least three subjects".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    let start = Instant::now();
    let mut rois = Vec::with_capacity(cfg.rois.len());
    let mut roi_seconds = Vec::with_capacity(cfg.rois.len());
    for r in 0..cfg.rois.len() {
        let t = Instant::now();
        rois.push(pool.install(|| run_roi(cohort, cfg, r))?);
        roi_seconds.push((cfg.rois[r].name.clone(), t.elapsed().as_secs_f64()));
    }
    let report = EvaluationReport::new(cfg, cohort.len(), rois);
    let timings = Timings {
        total_seconds: start.elapsed().as_secs_f64(),
        roi_seconds,
        threads: pool.current_num_threads(),
    };
    Ok((report, timings))
}

/// Leave-one-out fold artifacts for a single held-out subject, for
/// inspection and leakage checks.
pub fn fold_artifacts(cohort: &Cohort, cfg: &PipelineConfig, roi_index: usize, held_out: usize) -> Result<FoldOutcome> {
    let edges = roi_edges(cohort, &cfg.rois[roi_index])?;
    run_fold(cohort, &edges, cfg, roi_index, held_out, true)
}
