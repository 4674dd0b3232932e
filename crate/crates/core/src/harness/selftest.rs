use crate::env::{reset, step, ActionCommand, GripperCommand, Task, Vec3};
use crate::policy::{PolicyConfig, PolicyModel};
use crate::recovery::{backtrack, should_recover, ControllerConfig, ControllerState, RecoveryMode};
use crate::rng::rng_for;
use crate::uncertainty::{pick_threshold, trace_covariance, transform_action, ValidationRecord};
use crate::env::ObservationMode;
use crate::Result;
use rand::Rng as _;

#[derive(Clone, Debug, PartialEq)]
pub struct SelftestCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> SelftestCheck {
    match f() {
        Ok((passed, detail)) => SelftestCheck { name, passed, detail },
        Err(e) => SelftestCheck {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// Fast oracle checks of the core building blocks; the full suite lives in
/// the test targets.
pub fn selftest() -> Vec<SelftestCheck> {
    vec![
        check("calibration transform examples", || {
            let a = transform_action([1.0, 0.0, 0.0], 0.5)?;
            let b = transform_action([0.0, 0.03, 0.04], 0.2)?;
            let c = transform_action([0.0, 0.0, 0.0], 0.7)?;
            let ok = close(&a, &[0.5, 0.5, 0.0, 0.0], 1e-9)
                && close(&b, &[0.01, 0.0, 0.48, 0.64], 1e-9)
                && close(&c, &[0.0; 4], 1e-9);
            Ok((ok, format!("{a:?} {b:?} {c:?}")))
        }),
        check("covariance trace against two-pass oracle", || {
            let mut rng = rng_for(1, &[]);
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let xs: Vec<[f64; 4]> = (0..50).map(|_| [(); 4].map(|_| rng.gen_range(-1.0..1.0))).collect();
                let n = xs.len() as f64;
                let mut oracle = 0.0;
                for d in 0..4 {
                    let mean = xs.iter().map(|x| x[d]).sum::<f64>() / n;
                    oracle += xs.iter().map(|x| (x[d] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                }
                worst = worst.max((trace_covariance(&xs)? - oracle).abs());
            }
            Ok((worst < 1e-9, format!("max deviation {worst:e}")))
        }),
        check("threshold worked example", || {
            let recs: Vec<ValidationRecord> = [(1.0, true), (2.0, true), (3.0, false), (4.0, false)]
                .iter()
                .enumerate()
                .map(|(i, &(u, s))| ValidationRecord {
                    episode_id: i,
                    max_u: u,
                    success: s,
                })
                .collect();
            let t = pick_threshold(&recs)?;
            Ok((t.i_star == Some(2) && t.c == 2.0, format!("i* {:?}, C {}", t.i_star, t.c)))
        }),
        check("recovery gate and backoff", || {
            let policy = PolicyModel::new(
                PolicyConfig {
                    obs_mode: ObservationMode::OracleState,
                    ..PolicyConfig::default()
                },
                100,
                0,
            )?;
            let cfg = ControllerConfig {
                threshold: 0.5,
                mode: RecoveryMode::MinUnc,
                ..ControllerConfig::default()
            };
            let mut cs = ControllerState::new(&policy, Task::Pushing, 0, &cfg)?;
            let mut ticks = Vec::new();
            for t in 1..=700 {
                cs.env.tick = t;
                cs.trace.push(1.0)?;
                if should_recover(&cs, &cfg) {
                    cs.activate();
                    ticks.push(t);
                }
            }
            Ok((ticks == [41, 122, 283, 604], format!("activations at {ticks:?}")))
        }),
        check("contact-free backtrack", || {
            let policy = PolicyModel::new(
                PolicyConfig {
                    obs_mode: ObservationMode::OracleState,
                    ..PolicyConfig::default()
                },
                100,
                0,
            )?;
            let cfg = ControllerConfig::default();
            let mut cs = ControllerState::new(&policy, Task::Pushing, 3, &cfg)?;
            let mut rng = rng_for(2, &[]);
            for _ in 0..15 {
                cs.push_entry(rng.gen_range(0.0..1.0));
                let d = Vec3::new(rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02), 0.005);
                cs.execute(ActionCommand::new(d, GripperCommand::NoOp), None, crate::env::StepKind::Policy);
            }
            backtrack(&mut cs, 1000);
            let err = cs.env.ee_pos.dist(cs.fifo.back().map_or(Vec3::ZERO, |e| e.ee_pos));
            Ok((err < 1e-9, format!("pose error {err:e}")))
        }),
        check("simulator determinism", || {
            let a = reset(Task::PickPlace, 9);
            let act = ActionCommand::new(Vec3::new(0.01, -0.02, 0.0), GripperCommand::Close);
            let ok = step(&a, &act) == step(&reset(Task::PickPlace, 9), &act);
            Ok((ok, String::new()))
        }),
    ]
}
