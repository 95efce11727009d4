mod common;

use common::*;
use nondiff_svi::metrics::{estimate_elbo_with_se, timing_table, variance_ratio_table, write_table, TableError};
use nondiff_svi::rng::seeded;
use nondiff_svi::variational::VariationalParams;
use nondiff_svi::{run_svi, EstimatorKind, Family, RunConfig, RunSummary};

fn summary(kind: EstimatorKind, stepsize: f64) -> RunSummary {
    let m = model(JUMP_MODEL);
    let cfg = RunConfig {
        estimator: kind,
        iterations: 20,
        stepsize,
        eval_interval: 10,
        elbo_samples: 10,
        ..RunConfig::default()
    };
    RunSummary::from_result("jump", &m, &cfg, &run_svi(&m, &cfg, None)).unwrap()
}

#[test]
fn standard_error_scales_with_inverse_root_sample_count() {
    let m = model(JUMP_MODEL);
    let p = VariationalParams::new(vec![0.2], vec![0.1], Family::MeanField);
    let (_, small) = estimate_elbo_with_se(&m, &p, 10_000, &mut seeded(0)).unwrap();
    let (_, large) = estimate_elbo_with_se(&m, &p, 160_000, &mut seeded(1)).unwrap();
    let ratio = small / large;
    assert!((ratio - 4.0).abs() < 0.2, "{ratio}");
}

#[test]
fn identical_runs_give_unit_ratios() {
    let score = summary(EstimatorKind::Score, 0.001);
    let mut ours = score.clone();
    ours.estimator = EstimatorKind::Ours;
    let rows = variance_ratio_table(&[score, ours]).unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!((r.score, r.ours, r.repar), (1.0, Some(1.0), None));
    }
}

#[test]
fn ratios_follow_scaled_variances() {
    let score = summary(EstimatorKind::Score, 0.001);
    let mut repar = score.clone();
    repar.estimator = EstimatorKind::Repar;
    repar.mean_var_cmp = score.mean_var_cmp.map(|v| v / 100.0);
    repar.mean_var_nrm = score.mean_var_nrm.map(|v| v * 100.0);
    let rows = variance_ratio_table(&[repar, score]).unwrap();
    let cmp = rows.iter().find(|r| r.variance == "var_cmp").unwrap();
    let nrm = rows.iter().find(|r| r.variance == "var_nrm").unwrap();
    assert!((cmp.repar.unwrap() - 0.01).abs() < 1e-12);
    assert!((nrm.repar.unwrap() - 100.0).abs() < 1e-9);
}

#[test]
fn groups_are_split_by_stepsize() {
    let runs = [summary(EstimatorKind::Score, 0.001), summary(EstimatorKind::Score, 0.01)];
    assert_eq!(variance_ratio_table(&runs).unwrap().len(), 4);
}

#[test]
fn mismatched_runs_are_rejected() {
    let score = summary(EstimatorKind::Score, 0.001);
    let mut ours = summary(EstimatorKind::Ours, 0.001);
    ours.iterations = 40;
    assert!(matches!(
        variance_ratio_table(&[score.clone(), ours]),
        Err(TableError::MismatchedRunConfigs(_))
    ));
    assert!(variance_ratio_table(&[score.clone(), score]).is_err());
    assert!(variance_ratio_table(&[summary(EstimatorKind::Ours, 0.001)]).is_err());
}

#[test]
fn timing_table_divides_ours_by_repar() {
    let mut repar = summary(EstimatorKind::Repar, 0.001);
    let mut ours = summary(EstimatorKind::Ours, 0.001);
    repar.mean_iter_ms = 2.0;
    ours.mean_iter_ms = 3.0;
    let rows = timing_table(&[repar, ours]);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].ours_over_repar, Some(1.5));
    assert_eq!(rows[0].score_ms, None);

    let mut buf = Vec::new();
    write_table(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "model,N,score_ms,repar_ms,ours_ms,ours_over_repar");
    assert_eq!(text.lines().nth(1).unwrap(), "jump,1,,2.0,3.0,1.5");
}
