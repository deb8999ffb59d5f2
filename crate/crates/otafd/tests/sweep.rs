use std::path::PathBuf;

use otafd::config::{parse_config, resolve, Overrides, ResolvedConfig};
use otafd::experiment::{design_from_config, log_grid, mean_std, prepare, replication_seed, run_sweep_epsilon};
use otafd_core::distill::DpBudget;
use otafd_core::transceiver::{threshold_rounds, ClassRegime, Threshold};

const ROUNDS: u64 = 40;

fn config(epsilon: f64) -> ResolvedConfig {
    let text = format!(
        r#"{{"seed": 21, "devices": 4, "classes": 3, "rounds": {ROUNDS},
            "privacy": {{"epsilon": {epsilon}, "delta": 1e-11}},
            "data": {{"source": "synthetic", "dims": 3, "train_per_class": 20, "test_per_class": 5, "separation": 5}}}}"#
    );
    resolve(parse_config(&text).unwrap(), Overrides::default(), PathBuf::new()).unwrap()
}

#[test]
fn loose_privacy_needs_no_artificial_noise() {
    // the threshold scales with epsilon^2; pick epsilon so that it clears T
    let probe = config(0.01);
    let sim = prepare(&probe, replication_seed(probe.seed, 0)).unwrap().sim;
    let channel = sim.channel(1).unwrap();
    let Threshold::Finite(t0) = threshold_rounds(&channel, &sim.config().powers, 3, sim.stringencies()).unwrap() else {
        panic!("privacy is active");
    };
    let loose = 0.01 * (ROUNDS as f64 / t0).sqrt() * 1.01;
    let tight = 0.01 * (ROUNDS as f64 / t0).sqrt() * 0.2;

    let cfg = config(loose);
    let report = design_from_config(&cfg, 1).unwrap();
    assert!(report.threshold_rounds.unwrap() >= ROUNDS as f64);
    assert!(report.p2_mag.iter().flatten().all(|p| *p == 0.0));
    assert!(report.regimes.iter().all(|r| *r == ClassRegime::ChannelNoise));
    // with P2 = 0 the noise term is receiver noise alone
    let sim = prepare(&cfg, replication_seed(cfg.seed, 0)).unwrap().sim;
    let sigma2 = sim.channel(1).unwrap().noise_var();
    for (i, phi) in report.phi2.iter().enumerate() {
        let expected: f64 =
            (0..3).map(|k| sim.partition().weight(i, k) * 3.0 * sigma2 / (report.lambda[k] * report.lambda[k])).sum();
        assert!((phi - expected).abs() <= 1e-12 * expected, "{phi} vs {expected}");
    }

    let strict = design_from_config(&config(tight), 1).unwrap();
    assert!(strict.p2_mag.iter().flatten().any(|p| *p > 0.0));
    assert!(strict.phi2.iter().zip(&report.phi2).all(|(s, l)| s >= l));
}

#[test]
fn phi2_is_monotone_per_replication() {
    // for a fixed horizon the channel and the data do not depend on epsilon
    let cfg = config(0.05);
    let mut cfg3 = cfg.clone();
    cfg3.replications = 3;
    let grid = log_grid(0.001, 0.1, 4);
    let result = run_sweep_epsilon(&cfg3, &grid, 1e-11).unwrap();
    for r in 0..3 {
        let series: Vec<f64> = result.points.iter().filter(|p| p.replication == r).map(|p| p.mean_phi2).collect();
        assert_eq!(series.len(), grid.len());
        assert!(series.windows(2).all(|w| w[1] <= w[0]), "{series:?}");
    }
    for a in &result.aggregates {
        let at: Vec<f64> = result.points.iter().filter(|p| p.epsilon == a.epsilon).map(|p| p.mean_phi2).collect();
        assert_eq!(mean_std(&at), (a.mean_phi2_mean, a.mean_phi2_std));
    }
}

#[test]
fn sweep_overrides_privacy_uniformly() {
    let cfg = config(0.05);
    let result = run_sweep_epsilon(&cfg, &[0.02], 1e-10).unwrap();
    let mut direct = cfg.clone();
    direct.privacy = Some(vec![DpBudget { epsilon: 0.02, delta: 1e-10 }; 4]);
    let log = prepare(&direct, replication_seed(cfg.seed, 0)).unwrap().sim.run().unwrap();
    let mean = log.records.iter().map(|r| r.mean_phi2()).sum::<f64>() / log.records.len() as f64;
    assert_eq!(result.points[0].mean_phi2, mean);
    assert_eq!(result.points[0].final_accuracy, log.final_accuracy().unwrap());
}

#[test]
fn grid_must_increase() {
    let cfg = config(0.05);
    for grid in [vec![], vec![0.1, 0.01], vec![0.01, 0.01], vec![-0.1]] {
        assert_eq!(run_sweep_epsilon(&cfg, &grid, 1e-11).unwrap_err().exit_code(), 2, "{grid:?}");
    }
}
