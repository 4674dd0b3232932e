use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rayon::ThreadPool;

use super::config::{EvalMode, RunConfig};
use super::manifest::{file_sha256, Manifest};
use super::report::{read_outcomes, write_mcnemar_csv, write_outcomes, BinningReport, EpisodeOutcome, McNemar, ResultsTable};
use crate::env::{generate_demos, read_dataset, write_dataset, DemoDataset, EpisodeRecord};
use crate::foresight::{
    collect_distillation_data, load_foresight, read_foresight_dataset, save_foresight, train_foresight,
    write_foresight_dataset, ForesightModel, ForesightReport, ForesightTrainConfig,
};
use crate::policy::{load_policy, rollout, save_policy, train_policy, write_curves_csv, Controller, PolicyModel, TrainReport};
use crate::recovery::{run_episode, write_recovery_log, RecoveryLogRow, RecoveryMode};
use crate::rng::{derive, stream};
use crate::uncertainty::{
    max_window_sum, pick_threshold, read_threshold_csv, read_validation_csv, write_threshold_csv, write_validation_csv,
    ThresholdResult, ValidationRecord,
};
use crate::{Error, Result};

pub const CONFIG_FILE: &str = "config.txt";
pub const DEMOS_FILE: &str = "demos.jsonl";
pub const POLICY_FILE: &str = "policy.ckpt";
pub const CURVES_FILE: &str = "curves.csv";
pub const VALIDATION_FILE: &str = "validation.csv";
pub const THRESHOLD_FILE: &str = "threshold.csv";
pub const FORESIGHT_DATA_FILE: &str = "foresight_data.jsonl";
pub const FORESIGHT_FILE: &str = "foresight.ckpt";
pub const FORESIGHT_CURVES_FILE: &str = "foresight_curves.csv";
pub const OUTCOMES_FILE: &str = "eval_episodes.csv";
pub const RECORDS_FILE: &str = "eval_records.jsonl";
pub const RECOVERY_LOG_FILE: &str = "recovery_log.csv";
pub const BINNING_EPISODES_FILE: &str = "binning_episodes.csv";
pub const RESULTS_CSV: &str = "results.csv";
pub const BINNING_CSV: &str = "binning.csv";
pub const MCNEMAR_CSV: &str = "mcnemar.csv";
pub const REPORT_FILE: &str = "report.txt";

/// Seed-list purposes under the evaluation seed.
mod purpose {
    pub const VALIDATION: u64 = 1;
    pub const EVALUATION: u64 = 2;
    pub const BINNING: u64 = 3;
    pub const FORESIGHT: u64 = 4;
}

const SCENE_LABEL: u64 = 0;
const NOISE_LABEL: u64 = 1;

/// Scene and noise seed of episode `i` of a seed list. All evaluation modes
/// draw from the same list, so their episodes are paired.
pub fn episode_seeds(eval_seed: u64, purpose: u64, i: usize) -> (u64, u64) {
    (
        derive(eval_seed, &[stream::EVAL, purpose, SCENE_LABEL, i as u64]),
        derive(eval_seed, &[stream::EVAL, purpose, NOISE_LABEL, i as u64]),
    )
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub outcomes: Vec<EpisodeOutcome>,
    pub records: Vec<(String, EpisodeRecord)>,
    pub recovery_log: Vec<RecoveryLogRow>,
    pub binning: Vec<ValidationRecord>,
    pub thresholds: Vec<(String, f64)>,
}

#[derive(Clone, Debug)]
pub struct Report {
    pub table: ResultsTable,
    pub binning: BinningReport,
    pub mcnemar: Vec<McNemar>,
    pub text: String,
}

/// Drives the stages of one run inside an output directory. Every stage
/// writes its outputs, the resolved configuration and a manifest.
pub struct Pipeline {
    cfg: RunConfig,
    config_text: String,
    out: PathBuf,
    pool: ThreadPool,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

impl Pipeline {
    /// `workers = 0` uses one worker per core.
    pub fn new(cfg: RunConfig, out: impl Into<PathBuf>, workers: usize) -> Result<Self> {
        cfg.validate()?;
        let out = out.into();
        fs::create_dir_all(&out)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        let resolved = cfg.resolved();
        Ok(Self {
            config_text: resolved.to_text(),
            cfg: resolved,
            out,
            pool,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn manifest(&self, stage: &str) -> Result<Manifest> {
        fs::write(self.path(CONFIG_FILE), &self.config_text)?;
        Ok(Manifest::new(stage, &self.config_text))
    }

    fn require(&self, stage: &str, name: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact {
                stage: stage.to_string(),
                path,
            })
        }
    }

    pub fn gen_demos(&self) -> Result<DemoDataset> {
        let c = &self.cfg;
        let ds = self
            .pool
            .install(|| generate_demos(c.task, c.demos, c.data_seed(), c.obs_mode, c.horizon))?;
        let mut w = create(&self.path(DEMOS_FILE))?;
        write_dataset(&mut w, &ds)?;
        w.flush()?;
        drop(w);
        let mut m = self.manifest("gen-demos")?;
        m.output(&self.out, DEMOS_FILE)?
            .note("episodes", ds.records.len())
            .note("attempts", ds.header.attempts)
            .note("ticks", ds.records.iter().map(EpisodeRecord::len).sum::<usize>());
        m.write(&self.out)?;
        log::info!("wrote {} demonstrations", ds.records.len());
        Ok(ds)
    }

    pub fn load_demos(&self) -> Result<DemoDataset> {
        let path = self.require("gen-demos", DEMOS_FILE)?;
        read_dataset(BufReader::new(File::open(path)?))
    }

    pub fn train(&self) -> Result<(PolicyModel, TrainReport)> {
        let ds = self.load_demos()?;
        let demos_sha = file_sha256(&self.path(DEMOS_FILE))?;
        let (model, report) = self
            .pool
            .install(|| train_policy(&ds, &self.cfg.policy, &self.cfg.train_config()))?;
        let mut w = create(&self.path(POLICY_FILE))?;
        save_policy(&mut w, &model)?;
        w.flush()?;
        drop(w);
        let mut w = create(&self.path(CURVES_FILE))?;
        write_curves_csv(&mut w, &report)?;
        w.flush()?;
        drop(w);
        let mut m = self.manifest("train")?;
        m.input("demos", &demos_sha)
            .output(&self.out, POLICY_FILE)?
            .output(&self.out, CURVES_FILE)?
            .note("initial_val_loss", report.initial_val_loss)
            .note("final_val_loss", report.final_val_loss)
            .note("train_ticks", report.train_ticks)
            .note("dropout_rates", format!("{:?}", model.dropout_rates()));
        m.write(&self.out)?;
        log::info!(
            "trained policy: validation loss {:.5} -> {:.5}",
            report.initial_val_loss,
            report.final_val_loss
        );
        Ok((model, report))
    }

    /// Loads the policy checkpoint and checks it against the train
    /// manifest; returns the model and its checksum.
    pub fn load_policy(&self) -> Result<(PolicyModel, String)> {
        let path = self.require("train", POLICY_FILE)?;
        let sha = file_sha256(&path)?;
        let m = Manifest::read(&self.out, "train")?;
        if m.output_sha(POLICY_FILE)? != sha {
            return Err(Error::ChainMismatch(format!(
                "{} does not match the checkpoint recorded by `train`; rerun `train`",
                path.display()
            )));
        }
        Ok((load_policy(BufReader::new(File::open(path)?))?, sha))
    }

    fn rollout_records(&self, policy: &PolicyModel, purpose: u64, n: usize) -> Result<Vec<ValidationRecord>> {
        let c = &self.cfg;
        self.pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let (scene, noise) = episode_seeds(c.eval_seed(), purpose, i);
                    let rec = rollout(
                        policy,
                        c.task,
                        scene,
                        Controller::McMean { samples: c.samples },
                        c.max_steps(),
                        noise,
                    )?;
                    Ok(ValidationRecord {
                        episode_id: i,
                        max_u: max_window_sum(&rec.uncertainties(), c.window),
                        success: rec.stage_flags.task,
                    })
                })
                .collect()
        })
    }

    pub fn pick_threshold(&self) -> Result<ThresholdResult> {
        let (policy, policy_sha) = self.load_policy()?;
        let records = self.rollout_records(&policy, purpose::VALIDATION, self.cfg.n_val)?;
        let result = pick_threshold(&records)?;
        let mut w = create(&self.path(VALIDATION_FILE))?;
        write_validation_csv(&mut w, &records)?;
        w.flush()?;
        drop(w);
        let mut w = create(&self.path(THRESHOLD_FILE))?;
        write_threshold_csv(&mut w, &result)?;
        w.flush()?;
        drop(w);
        let mut m = self.manifest("pick-threshold")?;
        m.input("policy", &policy_sha)
            .output(&self.out, VALIDATION_FILE)?
            .output(&self.out, THRESHOLD_FILE)?
            .note("c", result.c)
            .note("i_star", result.i_star.map_or_else(|| "none".into(), |i| i.to_string()))
            .note("r_bar", result.r_bar)
            .note("degenerate", result.degenerate);
        m.write(&self.out)?;
        log::info!("threshold C = {} (r_bar {:.3})", result.c, result.r_bar);
        Ok(result)
    }

    pub fn load_threshold(&self, policy_sha: &str) -> Result<ThresholdResult> {
        let path = self.require("pick-threshold", THRESHOLD_FILE)?;
        let m = Manifest::read(&self.out, "pick-threshold")?;
        m.expect_input("policy", policy_sha)?;
        if m.output_sha(THRESHOLD_FILE)? != file_sha256(&path)? {
            return Err(Error::ChainMismatch(format!("{} was modified after `pick-threshold`", path.display())));
        }
        read_threshold_csv(BufReader::new(File::open(path)?))
    }

    pub fn collect_foresight(&self) -> Result<()> {
        let (policy, policy_sha) = self.load_policy()?;
        let c = &self.cfg;
        let seed = derive(c.eval_seed(), &[stream::EVAL, purpose::FORESIGHT]);
        let ds = self.pool.install(|| {
            collect_distillation_data(&policy, &policy_sha, c.task, c.foresight_episodes, c.samples, c.max_steps(), seed)
        })?;
        let mut w = create(&self.path(FORESIGHT_DATA_FILE))?;
        write_foresight_dataset(&mut w, &ds)?;
        w.flush()?;
        drop(w);
        let mut m = self.manifest("collect-foresight")?;
        m.input("policy", &policy_sha)
            .output(&self.out, FORESIGHT_DATA_FILE)?
            .note("samples", ds.samples.len())
            .note("target_skew", ds.header.target_skew)
            .note("log_target", ds.header.log_target);
        m.write(&self.out)?;
        log::info!("collected {} foresight samples", ds.samples.len());
        Ok(())
    }

    pub fn train_foresight(&self) -> Result<(ForesightModel, ForesightReport)> {
        let (_, policy_sha) = self.load_policy()?;
        let path = self.require("collect-foresight", FORESIGHT_DATA_FILE)?;
        let data_sha = file_sha256(&path)?;
        let cm = Manifest::read(&self.out, "collect-foresight")?;
        cm.expect_input("policy", &policy_sha)?;
        if cm.output_sha(FORESIGHT_DATA_FILE)? != data_sha {
            return Err(Error::ChainMismatch(format!("{} was modified after `collect-foresight`", path.display())));
        }
        let ds = read_foresight_dataset(BufReader::new(File::open(path)?))?;
        if ds.header.policy_sha256 != policy_sha {
            return Err(Error::ChainMismatch("foresight data was collected with a different policy".into()));
        }
        let cfg = ForesightTrainConfig {
            epochs: self.cfg.foresight_epochs,
            hidden: self.cfg.foresight_hidden,
            seed: derive(self.cfg.train_seed(), &[stream::EVAL, purpose::FORESIGHT]),
            ..ForesightTrainConfig::default()
        };
        let (model, report) = train_foresight(&ds, &cfg)?;
        let mut w = create(&self.path(FORESIGHT_FILE))?;
        save_foresight(&mut w, &model, &policy_sha)?;
        w.flush()?;
        drop(w);
        let mut w = create(&self.path(FORESIGHT_CURVES_FILE))?;
        writeln!(w, "epoch,train_mse,val_mse")?;
        for (e, tr, va) in &report.curves {
            writeln!(w, "{e},{tr},{va}")?;
        }
        w.flush()?;
        drop(w);
        let mut m = self.manifest("train-foresight")?;
        m.input("policy", &policy_sha)
            .input("foresight_data", &data_sha)
            .output(&self.out, FORESIGHT_FILE)?
            .output(&self.out, FORESIGHT_CURVES_FILE)?
            .note("val_r2", report.val_r2)
            .note("val_mse", report.val_mse)
            .note("train_samples", report.train_samples)
            .note("val_samples", report.val_samples);
        m.write(&self.out)?;
        log::info!("foresight held-out R² {:.3}", report.val_r2);
        Ok((model, report))
    }

    pub fn load_foresight(&self, policy_sha: &str) -> Result<ForesightModel> {
        let path = self.require("train-foresight", FORESIGHT_FILE)?;
        let m = Manifest::read(&self.out, "train-foresight")?;
        m.expect_input("policy", policy_sha)?;
        if m.output_sha(FORESIGHT_FILE)? != file_sha256(&path)? {
            return Err(Error::ChainMismatch(format!("{} was modified after `train-foresight`", path.display())));
        }
        let (model, sha) = load_foresight(BufReader::new(File::open(path)?))?;
        if sha != policy_sha {
            return Err(Error::ChainMismatch("foresight checkpoint was distilled from a different policy".into()));
        }
        Ok(model)
    }

    fn threshold_for(&self, mode: RecoveryMode, picked: f64) -> f64 {
        self.cfg.threshold_override(mode).unwrap_or(picked)
    }

    /// Runs every configured mode on the shared evaluation seed list, plus
    /// the no-recovery binning set, then writes the report.
    pub fn evaluate(&self) -> Result<(Evaluation, Report)> {
        let c = &self.cfg;
        let (policy, policy_sha) = self.load_policy()?;
        let needs_threshold = c.modes.iter().any(|m| matches!(m, EvalMode::Bvmc(r) if *r != RecoveryMode::None));
        let (picked, threshold_sha) = if needs_threshold {
            let t = self.load_threshold(&policy_sha)?;
            (t.c, Some(file_sha256(&self.path(THRESHOLD_FILE))?))
        } else {
            (f64::INFINITY, None)
        };
        let foresight = if c.modes.contains(&EvalMode::Bvmc(RecoveryMode::MinUnc)) {
            Some(self.load_foresight(&policy_sha)?)
        } else {
            None
        };

        let mut outcomes = Vec::new();
        let mut records = Vec::new();
        let mut recovery_log = Vec::new();
        let mut thresholds = Vec::new();
        for &mode in &c.modes {
            let threshold = match mode {
                EvalMode::Bvmc(r) => self.threshold_for(r, picked),
                EvalMode::Vmc => f64::INFINITY,
            };
            thresholds.push((mode.key().to_string(), threshold));
            let runs: Vec<(EpisodeRecord, Vec<RecoveryLogRow>)> = self.pool.install(|| {
                (0..c.n_eval)
                    .into_par_iter()
                    .map(|i| {
                        let (scene, noise) = episode_seeds(c.eval_seed(), purpose::EVALUATION, i);
                        match mode {
                            EvalMode::Vmc => {
                                rollout(&policy, c.task, scene, Controller::Deterministic, c.max_steps(), noise)
                                    .map(|r| (r, Vec::new()))
                            }
                            EvalMode::Bvmc(r) => {
                                let cc = c.controller(r, threshold);
                                run_episode(&policy, foresight.as_ref(), c.task, scene, &cc, noise, i)
                            }
                        }
                    })
                    .collect::<Result<_>>()
            })?;
            for (i, (rec, log)) in runs.into_iter().enumerate() {
                let u = rec.uncertainties();
                outcomes.push(EpisodeOutcome {
                    mode: mode.key().to_string(),
                    episode_id: i,
                    scene_seed: rec.scene_seed,
                    steps: rec.len(),
                    flags: rec.stage_flags,
                    max_u: (mode != EvalMode::Vmc).then(|| max_window_sum(&u, c.window)),
                    activations: log.len(),
                });
                records.push((mode.key().to_string(), rec));
                recovery_log.extend(log);
            }
            log::info!("evaluated {}", mode.label());
        }
        let binning = self.rollout_records(&policy, purpose::BINNING, c.n_binning)?;

        let mut w = create(&self.path(OUTCOMES_FILE))?;
        write_outcomes(&mut w, &outcomes)?;
        w.flush()?;
        drop(w);
        let mut w = create(&self.path(RECORDS_FILE))?;
        for (i, (mode, rec)) in records.iter().enumerate() {
            let line = serde_json::json!({ "mode": mode, "episode_id": i % c.n_eval, "record": rec });
            serde_json::to_writer(&mut w, &line)?;
            writeln!(w)?;
        }
        w.flush()?;
        drop(w);
        let mut w = create(&self.path(RECOVERY_LOG_FILE))?;
        write_recovery_log(&mut w, &recovery_log)?;
        w.flush()?;
        drop(w);
        let mut w = create(&self.path(BINNING_EPISODES_FILE))?;
        write_validation_csv(&mut w, &binning)?;
        w.flush()?;
        drop(w);

        let mut m = self.manifest("evaluate")?;
        m.input("policy", &policy_sha);
        if let Some(sha) = &threshold_sha {
            m.input("threshold", sha);
        }
        if foresight.is_some() {
            m.input("foresight", &file_sha256(&self.path(FORESIGHT_FILE))?);
        }
        m.output(&self.out, OUTCOMES_FILE)?
            .output(&self.out, RECORDS_FILE)?
            .output(&self.out, RECOVERY_LOG_FILE)?
            .output(&self.out, BINNING_EPISODES_FILE)?;
        for (mode, t) in &thresholds {
            m.note(&format!("threshold.{mode}"), t);
        }
        m.write(&self.out)?;
        let report = self.report()?;
        Ok((
            Evaluation {
                outcomes,
                records,
                recovery_log,
                binning,
                thresholds,
            },
            report,
        ))
    }

    /// Rebuilds every summary from the raw per-episode files.
    pub fn report(&self) -> Result<Report> {
        let outcomes = read_outcomes(BufReader::new(File::open(self.require("evaluate", OUTCOMES_FILE)?)?))?;
        let binning_records =
            read_validation_csv(BufReader::new(File::open(self.require("evaluate", BINNING_EPISODES_FILE)?)?))?;
        let mut modes: Vec<EvalMode> = Vec::new();
        for o in &outcomes {
            let m: EvalMode = o.mode.parse()?;
            if !modes.contains(&m) {
                modes.push(m);
            }
        }
        modes.sort_by_key(|m| EvalMode::ALL.iter().position(|x| x == m));
        let table = ResultsTable::from_outcomes(self.cfg.task, &modes, &outcomes);
        let binning = BinningReport::new(&binning_records)?;
        let of = |key: &str| outcomes.iter().filter(|o| o.mode == key).collect::<Vec<_>>();
        let baseline = of("none");
        let mut mcnemar = Vec::new();
        if !baseline.is_empty() {
            for m in [RecoveryMode::Rand, RecoveryMode::Init, RecoveryMode::MinUnc] {
                let other = of(m.as_str());
                if !other.is_empty() {
                    mcnemar.push(McNemar::paired(&baseline, &other, m.as_str())?);
                }
            }
        }

        let mut w = create(&self.path(RESULTS_CSV))?;
        table.write_csv(&mut w)?;
        w.flush()?;
        drop(w);
        let mut w = create(&self.path(BINNING_CSV))?;
        binning.write_csv(&mut w)?;
        w.flush()?;
        drop(w);
        let mut w = create(&self.path(MCNEMAR_CSV))?;
        write_mcnemar_csv(&mut w, &mcnemar)?;
        w.flush()?;
        drop(w);

        let mut text = format!("task: {}\n\n", self.cfg.task);
        text.push_str(&table.to_text());
        text.push_str("\nsuccess vs maximum uncertainty (no recovery)\n");
        text.push_str(&format!("{:>4}{:>10}{:>14}{:>10}\n", "bin", "episodes", "mean max_u", "success"));
        for b in &binning.bins {
            text.push_str(&format!(
                "{:>4}{:>10}{:>14.5}{:>10.3}\n",
                b.index, b.episodes, b.mean_max_u, b.success_rate
            ));
        }
        text.push_str(&format!("spearman rank correlation: {:.3}\n", binning.spearman));
        if !mcnemar.is_empty() {
            text.push_str("\npaired against BVMC (task success)\n");
            text.push_str(&format!(
                "{:<10}{:>7}{:>11}{:>11}{:>9}{:>10}\n",
                "mode", "both", "only bvmc", "only mode", "neither", "p"
            ));
            for r in &mcnemar {
                text.push_str(&format!(
                    "{:<10}{:>7}{:>11}{:>11}{:>9}{:>10.4}\n",
                    r.mode, r.both, r.only_baseline, r.only_mode, r.neither, r.p_value
                ));
            }
        }
        fs::write(self.path(REPORT_FILE), &text)?;
        Ok(Report {
            table,
            binning,
            mcnemar,
            text,
        })
    }

    /// All stages in order.
    pub fn run_all(&self) -> Result<Report> {
        self.gen_demos()?;
        self.train()?;
        self.pick_threshold()?;
        if self.cfg.modes.contains(&EvalMode::Bvmc(RecoveryMode::MinUnc)) {
            self.collect_foresight()?;
            self.train_foresight()?;
        }
        Ok(self.evaluate()?.1)
    }
}
