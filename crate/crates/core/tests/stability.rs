use vespo_core::harness::{reference_config, run_async_experiment};
use vespo_core::{AsyncConfig, Method, TrainLog};

fn async_run(method: Method, learning_rate: f64) -> TrainLog {
    let mut cfg = reference_config(method, 1);
    cfg.learning_rate = learning_rate;
    run_async_experiment(&cfg, &AsyncConfig { sync_interval: 4, ..AsyncConfig::default() }).unwrap()
}

#[test]
fn vespo_log_weights_stay_bounded_under_lag() {
    for lr in [0.2, 1.0, 4.0] {
        let log = async_run(Method::Vespo, lr);
        assert!(!log.diverged);
        assert!(log.max_abs_log_w() <= 20.0, "lr {lr}: {}", log.max_abs_log_w());
    }
}

#[test]
fn raw_is_log_weights_escape_at_large_steps() {
    let vespo = async_run(Method::Vespo, 4.0);
    let raw = async_run(Method::RawIs, 4.0);
    assert!(vespo.max_abs_log_w() <= 20.0);
    assert!(raw.diverged || raw.max_abs_log_w() > 20.0, "{}", raw.max_abs_log_w());
}

#[test]
fn mean_log_weight_is_zero_after_each_snapshot() {
    let mut cfg = reference_config(Method::RawIs, 4);
    cfg.steps = 40;
    let log = vespo_core::harness::run_sync_experiment(&cfg).unwrap();
    for row in log.rows.iter().step_by(4) {
        assert_eq!(row.mean_log_w, 0.0);
    }
    assert_eq!(log.trajectories_consumed, 40 * cfg.mbs);
}
