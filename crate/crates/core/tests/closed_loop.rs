//! Closed-loop behaviour of a briefly trained policy under the recovery
//! controller.

use std::sync::OnceLock;

use visuomotor::env::{generate_demos, success_metrics, ObservationMode, StepKind, Task};
use visuomotor::foresight::{collect_distillation_data, train_foresight, ForesightModel, ForesightTrainConfig};
use visuomotor::policy::{rollout, train_policy, Controller, PolicyConfig, PolicyModel, TrainConfig};
use visuomotor::recovery::{run_episode, ControllerConfig, RecoveryMode};
use visuomotor::uncertainty::max_window_sum;

fn trained() -> &'static (PolicyModel, ForesightModel) {
    static MODELS: OnceLock<(PolicyModel, ForesightModel)> = OnceLock::new();
    MODELS.get_or_init(|| {
        let ds = generate_demos(Task::Pushing, 24, 50, ObservationMode::OracleState, 60).unwrap();
        let cfg = PolicyConfig {
            obs_mode: ObservationMode::OracleState,
            lstm_width: 32,
            fc_width: 32,
            ..PolicyConfig::default()
        };
        let tc = TrainConfig {
            epochs: 6,
            ..TrainConfig::default()
        };
        let (policy, _) = train_policy(&ds, &cfg, &tc).unwrap();
        let data = collect_distillation_data(&policy, "test", Task::Pushing, 12, 8, 120, 3).unwrap();
        let fc = ForesightTrainConfig {
            epochs: 5,
            ..ForesightTrainConfig::default()
        };
        let (foresight, _) = train_foresight(&data, &fc).unwrap();
        (policy, foresight)
    })
}

fn controller(mode: RecoveryMode, threshold: f64) -> ControllerConfig {
    ControllerConfig {
        samples: 8,
        threshold,
        t_recovery_init: 10,
        recovery_steps: 5,
        mode,
        ..ControllerConfig::default()
    }
}

#[test]
fn recovery_log_obeys_gate_and_backoff() {
    let (policy, foresight) = trained();
    for mode in [RecoveryMode::MinUnc, RecoveryMode::Rand, RecoveryMode::Init] {
        for seed in 0..4u64 {
            let cfg = controller(mode, 0.0);
            let (rec, log) = run_episode(policy, Some(foresight), Task::Pushing, 100 + seed, &cfg, seed, seed as usize).unwrap();
            assert!(!log.is_empty(), "{mode} never activated");
            let mut last = 0;
            for (k, row) in log.iter().enumerate() {
                assert_eq!(row.mode, mode);
                assert_eq!(row.activation_index, k + 1);
                assert_eq!(row.t_recovery_at_gate, 10 << k);
                assert!(u64::from(row.tick - last) > row.t_recovery_at_gate);
                assert!(row.window_sum > row.threshold);
                assert!(row.end_tick >= row.tick);
                last = row.tick;
            }
            assert!(rec.len() as u32 <= cfg.max_steps);
            assert_eq!(rec.stage_flags, success_metrics(&rec));
            let recovery_ticks = rec.steps.iter().filter(|s| s.kind != StepKind::Policy).count();
            assert!(recovery_ticks > 0);
        }
    }
}

#[test]
fn unreachable_threshold_leaves_the_rollout_untouched() {
    let (policy, foresight) = trained();
    for seed in 0..4u64 {
        let cfg = controller(RecoveryMode::MinUnc, f64::INFINITY);
        let (rec, log) = run_episode(policy, Some(foresight), Task::Pushing, 200 + seed, &cfg, 40 + seed, 0).unwrap();
        let plain = rollout(policy, Task::Pushing, 200 + seed, Controller::McMean { samples: 8 }, cfg.max_steps, 40 + seed).unwrap();
        assert!(log.is_empty());
        assert_eq!(rec, plain);
        let u = rec.uncertainties();
        assert!(u.iter().all(|&v| v >= 0.0 && v.is_finite()));
        assert!(max_window_sum(&u, 20) >= u.iter().cloned().fold(0.0, f64::max));
    }
}

#[test]
fn episodes_are_reproducible_per_mode() {
    let (policy, foresight) = trained();
    for mode in RecoveryMode::ALL {
        let cfg = controller(mode, 0.05);
        let a = run_episode(policy, Some(foresight), Task::Pushing, 7, &cfg, 70, 1).unwrap();
        let b = run_episode(policy, Some(foresight), Task::Pushing, 7, &cfg, 70, 1).unwrap();
        assert_eq!(a, b);
        let other_noise = run_episode(policy, Some(foresight), Task::Pushing, 7, &cfg, 71, 1).unwrap();
        assert_ne!(a.0, other_noise.0);
    }
}
