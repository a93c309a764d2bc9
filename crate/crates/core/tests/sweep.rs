use iccr::channel_model::{AntennaConfig, FeedbackKind, FeedbackMode};
use iccr::montecarlo::{estimate_dof_sweep, run_batch, NoiseSetting, TrialBatchSpec};

fn spec(config: AntennaConfig, kind: FeedbackKind, snrs: Vec<f64>) -> TrialBatchSpec {
    TrialBatchSpec {
        config,
        mode: FeedbackMode::everywhere(kind),
        trials: 300,
        base_seed: 11,
        noise: NoiseSetting::SnrDb(snrs),
    }
}

#[test]
fn slope_moves_toward_sum_dof_as_snr_grows() {
    let cases = [
        (AntennaConfig::siso(), FeedbackKind::DelayedCsit, 4.0 / 3.0),
        (AntennaConfig::siso(), FeedbackKind::DelayedOutput, 4.0 / 3.0),
        (
            AntennaConfig::new(1, 2, 2).unwrap(),
            FeedbackKind::DelayedCsit,
            12.0 / 5.0,
        ),
        (
            AntennaConfig::new(1, 4, 2).unwrap(),
            FeedbackKind::DelayedShannon,
            8.0 / 3.0,
        ),
    ];
    for (config, kind, exact) in cases {
        let low = estimate_dof_sweep(&spec(config, kind, vec![30.0, 40.0])).unwrap();
        let high = estimate_dof_sweep(&spec(config, kind, vec![50.0, 60.0])).unwrap();
        let (lo, hi) = (low.sum_dof_estimate.unwrap(), high.sum_dof_estimate.unwrap());
        assert!(
            (hi - exact).abs() < (lo - exact).abs(),
            "{config}: {lo} then {hi} vs {exact}"
        );
        assert!((hi - exact).abs() < 0.1 * exact);
    }
}

#[test]
fn rates_are_nonnegative_and_increasing() {
    let res = estimate_dof_sweep(&spec(
        AntennaConfig::new(2, 1, 2).unwrap(),
        FeedbackKind::DelayedCsit,
        vec![0.0, 10.0, 20.0, 30.0],
    ))
    .unwrap();
    assert!(res.points.windows(2).all(|w| w[1].mean_sum_rate > w[0].mean_sum_rate));
    assert!(res
        .points
        .iter()
        .all(|p| p.mean_sum_rate >= 0.0 && p.included + p.excluded == 300));
}

#[test]
fn noisy_batches_account_for_every_trial() {
    let stats = run_batch(&spec(
        AntennaConfig::new(2, 3, 1).unwrap(),
        FeedbackKind::DelayedOutput,
        vec![20.0, 40.0],
    ))
    .unwrap();
    assert_eq!(stats.len(), 2);
    for s in &stats {
        assert_eq!(s.decodable + s.filtered + s.degenerate + s.undecodable, s.trials);
    }
    assert!(stats[1].max_symbol_error_p50.unwrap() < stats[0].max_symbol_error_p50.unwrap());
}
