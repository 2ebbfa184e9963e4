mod common;

use common::{small_config, small_spec};
use patchevo::cohort::{Class, Cohort};
use patchevo::config::Arm;
use patchevo::pipeline::{fold_artifacts, run_loocv};
use patchevo::report::{emit_report, metrics_rows, read_metrics_csv, ArmMetrics, EvaluationReport};
use patchevo::synth::{generate_cohort, ClassParams, CohortSpec};
use patchevo::trajectory::Transfer;
use patchevo::volume::{Volume, VolumeKind};
use patchevo::Error;

/// Replaces every volume of subject `h` with unrelated content.
fn poison(cohort: &Cohort, h: usize) -> Cohort {
    let mut subjects = cohort.subjects.clone();
    let s = &mut subjects[h];
    let dims = s.t1.dims();
    let junk = |seed: usize| -> Vec<f64> { (0..dims.iter().product::<usize>()).map(|i| ((i * 7919 + seed) % 97) as f64 / 97.0).collect() };
    s.t1 = Volume::new(dims, [1.0; 3], VolumeKind::Intensity, junk(1)).unwrap();
    s.t2 = Volume::new(dims, [1.0; 3], VolumeKind::Intensity, junk(2)).unwrap();
    let label: Vec<f64> = (0..s.label.len()).map(|i| (i % 3 == 0) as i64 as f64).collect();
    s.label = Volume::new(dims, [1.0; 3], VolumeKind::Label, label).unwrap();
    s.class = match s.class {
        Class::Control => Class::Disease,
        Class::Disease => Class::Control,
    };
    Cohort::new(subjects).unwrap()
}

#[test]
fn poisoning_the_held_out_subject_leaves_training_artifacts_unchanged() {
    let cohort = generate_cohort(&small_spec(1)).unwrap();
    let cfg = small_config(1);
    for h in [0, 13] {
        let clean = fold_artifacts(&cohort, &cfg, 0, h).unwrap();
        let dirty = fold_artifacts(&poison(&cohort, h), &cfg, 0, h).unwrap();
        let (a, b) = (clean.artifacts.unwrap(), dirty.artifacts.unwrap());
        assert!(!a.landmarks.is_empty());
        assert!(a.per_landmark.iter().all(|l| l.is_some()));
        assert!(!a.train.contains(&h));
        assert_eq!(a, b, "fold {h} training artifacts depend on the held-out subject");
        // The held-out side does see the change.
        assert_ne!(clean.outcomes, dirty.outcomes);
    }
}

#[test]
fn thread_count_does_not_change_report_bytes() {
    let cohort = generate_cohort(&small_spec(2)).unwrap();
    let mut cfg = small_config(2);
    cfg.threads = 1;
    let one = run_loocv(&cohort, &cfg).unwrap().0.to_json();
    cfg.threads = 3;
    let three = run_loocv(&cohort, &cfg).unwrap().0.to_json();
    assert_eq!(one, three);
}

#[test]
fn repeated_runs_are_byte_identical_and_metrics_recompute() {
    let cohort = generate_cohort(&small_spec(3)).unwrap();
    let cfg = small_config(3);
    let (a, _) = run_loocv(&cohort, &cfg).unwrap();
    let (b, _) = run_loocv(&cohort, &cfg).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    for roi in &a.rois {
        assert_eq!(roi.subjects.len(), cohort.len());
        for arm in &roi.arms {
            assert_eq!(&ArmMetrics::from_subjects(arm.strategy, &roi.subjects), arm);
        }
        let sas = roi.arms.iter().find(|m| m.strategy == Arm::Sas).unwrap();
        assert!(sas.mae.is_some() && sas.pearson.is_some());
    }
}

#[test]
fn report_tables_round_trip() {
    let cohort = generate_cohort(&small_spec(4)).unwrap();
    let (report, _) = run_loocv(&cohort, &small_config(4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path()).unwrap();
    let back = read_metrics_csv(&dir.path().join("metrics.csv")).unwrap();
    let rows = metrics_rows(&report);
    assert_eq!(back.len(), 3);
    for (x, y) in back.iter().zip(&rows) {
        assert_eq!((&x.roi, &x.strategy), (&y.roi, &y.strategy));
        assert!((x.accuracy - y.accuracy).abs() < 1e-12);
        for (p, q) in [(x.sensitivity, y.sensitivity), (x.specificity, y.specificity), (x.mae, y.mae), (x.pearson, y.pearson)] {
            assert_eq!(p.is_some(), q.is_some());
            if let (Some(p), Some(q)) = (p, q) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }
    let loaded = EvaluationReport::load(&dir.path().join("report.json")).unwrap();
    assert_eq!(loaded, report);

    let mut empty = report.clone();
    empty.rois.clear();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&empty, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(text, "roi,strategy,accuracy,sensitivity,specificity,mae,pearson\n");
}

#[test]
fn four_separable_subjects_are_all_classified() {
    let spec = CohortSpec {
        n_per_class: 2,
        noise_std: 0.005,
        anatomy_jitter: 0.0,
        disease: ClassParams {
            atrophy_rate_mean: 0.10,
            atrophy_rate_std: 0.0,
            baseline_shrink: 0.25,
        },
        control: ClassParams {
            atrophy_rate_mean: 0.01,
            atrophy_rate_std: 0.0,
            baseline_shrink: 0.0,
        },
        ..small_spec(5)
    };
    let cohort = generate_cohort(&spec).unwrap();
    let mut cfg = small_config(5);
    cfg.rois[0].mkml.c = 1;
    // A class with a single training subject gets its in-fold follow-up from
    // the other class under plain copying; the quotient keeps its own
    // appearance.
    cfg.rois[0].mkml.transfer = Transfer::QuotientMapped;
    let (report, _) = run_loocv(&cohort, &cfg).unwrap();
    for arm in &report.rois[0].arms {
        assert_eq!(arm.accuracy, 1.0, "{}", arm.strategy.name());
    }
}

#[test]
fn single_class_training_fold_is_a_config_error() {
    let cohort = generate_cohort(&small_spec(6)).unwrap();
    // One disease subject among controls: holding it out leaves one class.
    let subjects: Vec<_> = cohort.subjects.iter().take(11).cloned().collect();
    let cohort = Cohort::new(subjects).unwrap();
    let err = run_loocv(&cohort, &small_config(6)).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
}
