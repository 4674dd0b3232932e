use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::config::EvalMode;
use crate::env::{StageFlags, Task};
use crate::uncertainty::ValidationRecord;
use crate::{Error, Result};

/// Binomial standard error of a success rate, in percentage points.
pub fn standard_error_pct(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    100.0 * (p * (1.0 - p) / n as f64).sqrt()
}

/// Summary of one evaluation episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub mode: String,
    pub episode_id: usize,
    pub scene_seed: u64,
    pub steps: usize,
    pub flags: StageFlags,
    /// Largest window sum; absent for the deterministic controller.
    pub max_u: Option<f64>,
    pub activations: usize,
}

const OUTCOME_HEADER: &str = "mode,episode_id,scene_seed,steps,reach,pick,task,max_u,activations";

pub fn write_outcomes<W: Write>(mut w: W, rows: &[EpisodeOutcome]) -> Result<()> {
    writeln!(w, "{OUTCOME_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.mode,
            r.episode_id,
            r.scene_seed,
            r.steps,
            u8::from(r.flags.reach),
            u8::from(r.flags.pick),
            u8::from(r.flags.task),
            r.max_u.map(|u| u.to_string()).unwrap_or_default(),
            r.activations
        )?;
    }
    Ok(())
}

fn num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("outcome line {line}: cannot parse `{s}`")))
}

fn flag(s: &str, line: usize) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::Format(format!("outcome line {line}: bad flag `{s}`"))),
    }
}

pub fn read_outcomes<R: BufRead>(r: R) -> Result<Vec<EpisodeOutcome>> {
    let mut lines = r.lines();
    if lines.next().transpose()?.as_deref() != Some(OUTCOME_HEADER) {
        return Err(Error::Format("episode outcome header missing".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let n = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::Format(format!("outcome line {n}: expected 9 fields, got {}", f.len())));
        }
        rows.push(EpisodeOutcome {
            mode: f[0].to_string(),
            episode_id: num(f[1], n)?,
            scene_seed: num(f[2], n)?,
            steps: num(f[3], n)?,
            flags: StageFlags {
                reach: flag(f[4], n)?,
                pick: flag(f[5], n)?,
                task: flag(f[6], n)?,
            },
            max_u: if f[7].is_empty() { None } else { Some(num(f[7], n)?) },
            activations: num(f[8], n)?,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCell {
    pub stage: String,
    pub successes: usize,
    pub pct: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub label: String,
    pub mode: String,
    pub episodes: usize,
    pub cells: Vec<StageCell>,
}

/// Stage success rates per controller, columns in task order
/// (reach, then pick where applicable, then the task itself).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub task: Task,
    pub rows: Vec<ResultsRow>,
}

impl ResultsTable {
    pub fn from_outcomes(task: Task, modes: &[EvalMode], outcomes: &[EpisodeOutcome]) -> Self {
        let stages = task.stage_names();
        let rows = modes
            .iter()
            .map(|m| {
                let mine: Vec<&EpisodeOutcome> = outcomes.iter().filter(|o| o.mode == m.key()).collect();
                let n = mine.len();
                let cells = stages
                    .iter()
                    .enumerate()
                    .map(|(k, stage)| {
                        let successes = mine.iter().filter(|o| o.flags.columns(task)[k]).count();
                        let p = if n == 0 { f64::NAN } else { successes as f64 / n as f64 };
                        StageCell {
                            stage: stage.to_string(),
                            successes,
                            pct: 100.0 * p,
                            se: standard_error_pct(p, n),
                        }
                    })
                    .collect();
                ResultsRow {
                    label: m.label().to_string(),
                    mode: m.key().to_string(),
                    episodes: n,
                    cells,
                }
            })
            .collect();
        Self { task, rows }
    }

    pub fn row(&self, mode: EvalMode) -> Option<&ResultsRow> {
        self.rows.iter().find(|r| r.mode == mode.key())
    }

    pub fn to_text(&self) -> String {
        let stages = self.task.stage_names();
        let mut s = String::new();
        let _ = write!(s, "{:<16}{:>9}", "model", "episodes");
        for st in stages {
            let _ = write!(s, "{:>16}", format!("{st} (%)"));
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:<16}{:>9}", r.label, r.episodes);
            for c in &r.cells {
                let _ = write!(s, "{:>16}", format!("{:.1} ± {:.1}", c.pct, c.se));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "model,mode,episodes,stage,successes,success_pct,se")?;
        for r in &self.rows {
            for c in &r.cells {
                writeln!(
                    w,
                    "{},{},{},{},{},{:.4},{:.4}",
                    r.label, r.mode, r.episodes, c.stage, c.successes, c.pct, c.se
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub index: usize,
    pub episodes: usize,
    pub mean_max_u: f64,
    pub success_rate: f64,
}

/// Episodes sorted by maximum uncertainty and cut into equal-size bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinningReport {
    pub bins: Vec<Bin>,
    /// Rank correlation between bin mean uncertainty and bin success rate.
    pub spearman: f64,
}

impl BinningReport {
    pub const BINS: usize = 10;

    pub fn new(records: &[ValidationRecord]) -> Result<Self> {
        if records.len() < Self::BINS {
            return Err(Error::InvalidInput(format!(
                "binning needs at least {} episodes, got {}",
                Self::BINS,
                records.len()
            )));
        }
        let mut sorted: Vec<&ValidationRecord> = records.iter().collect();
        sorted.sort_by(|a, b| a.max_u.total_cmp(&b.max_u).then(a.episode_id.cmp(&b.episode_id)));
        let base = sorted.len() / Self::BINS;
        let extra = sorted.len() % Self::BINS;
        let mut bins = Vec::with_capacity(Self::BINS);
        let mut start = 0;
        for index in 0..Self::BINS {
            let size = base + usize::from(index < extra);
            let chunk = &sorted[start..start + size];
            start += size;
            bins.push(Bin {
                index,
                episodes: size,
                mean_max_u: chunk.iter().map(|r| r.max_u).sum::<f64>() / size as f64,
                success_rate: chunk.iter().filter(|r| r.success).count() as f64 / size as f64,
            });
        }
        let x: Vec<f64> = bins.iter().map(|b| b.mean_max_u).collect();
        let y: Vec<f64> = bins.iter().map(|b| b.success_rate).collect();
        Ok(Self {
            spearman: spearman(&x, &y),
            bins,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin,episodes,mean_max_u,success_rate")?;
        for b in &self.bins {
            writeln!(w, "{},{},{},{}", b.index, b.episodes, b.mean_max_u, b.success_rate)?;
        }
        Ok(())
    }
}

/// Ranks starting at 1, tied values sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation (Pearson on average ranks). NaN when either side
/// is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Paired comparison of one recovery mode against the plain BVMC row on
/// shared scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    pub mode: String,
    pub both: usize,
    pub only_baseline: usize,
    pub only_mode: usize,
    pub neither: usize,
    /// Exact two-sided binomial p-value on the discordant pairs.
    pub p_value: f64,
}

fn ln_choose(n: usize, k: usize) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
}

pub fn mcnemar_exact_p(b: usize, c: usize) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let tail: f64 = (0..=b.min(c))
        .map(|k| (ln_choose(n, k) - n as f64 * std::f64::consts::LN_2).exp())
        .sum();
    (2.0 * tail).min(1.0)
}

impl McNemar {
    /// Pairs outcomes by episode id. Fails if the two modes did not see the
    /// same scenes.
    pub fn paired(baseline: &[&EpisodeOutcome], other: &[&EpisodeOutcome], mode: &str) -> Result<Self> {
        if baseline.len() != other.len() {
            return Err(Error::InvalidInput(format!(
                "cannot pair {} baseline episodes with {} `{mode}` episodes",
                baseline.len(),
                other.len()
            )));
        }
        let mut m = McNemar {
            mode: mode.to_string(),
            both: 0,
            only_baseline: 0,
            only_mode: 0,
            neither: 0,
            p_value: 1.0,
        };
        for (a, b) in baseline.iter().zip(other) {
            if a.episode_id != b.episode_id || a.scene_seed != b.scene_seed {
                return Err(Error::InvalidInput(format!(
                    "episode {} of `{mode}` is not paired with the baseline",
                    b.episode_id
                )));
            }
            match (a.flags.task, b.flags.task) {
                (true, true) => m.both += 1,
                (true, false) => m.only_baseline += 1,
                (false, true) => m.only_mode += 1,
                (false, false) => m.neither += 1,
            }
        }
        m.p_value = mcnemar_exact_p(m.only_baseline, m.only_mode);
        Ok(m)
    }
}

pub fn write_mcnemar_csv<W: Write>(mut w: W, rows: &[McNemar]) -> Result<()> {
    writeln!(w, "mode,both,only_bvmc,only_mode,neither,p_value")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{:.6}",
            r.mode, r.both, r.only_baseline, r.only_mode, r.neither, r.p_value
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recovery::RecoveryMode;
    use crate::rng::rng_for;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn outcome(mode: &str, id: usize, task: bool) -> EpisodeOutcome {
        EpisodeOutcome {
            mode: mode.into(),
            episode_id: id,
            scene_seed: 100 + id as u64,
            steps: 10,
            flags: StageFlags {
                reach: true,
                pick: false,
                task,
            },
            max_u: Some(0.1 * id as f64),
            activations: 0,
        }
    }

    #[test]
    fn standard_error_reference_value() {
        assert!((standard_error_pct(0.5, 100) - 5.0).abs() < 1e-12);
        assert_eq!(standard_error_pct(1.0, 40), 0.0);
    }

    #[test]
    fn table_counts_and_text() {
        let mut rows: Vec<EpisodeOutcome> = (0..4).map(|i| outcome("none", i, i < 3)).collect();
        rows.extend((0..4).map(|i| outcome("min_unc", i, true)));
        let modes = [EvalMode::Bvmc(RecoveryMode::None), EvalMode::Bvmc(RecoveryMode::MinUnc)];
        let t = ResultsTable::from_outcomes(Task::Pushing, &modes, &rows);
        let none = t.row(modes[0]).unwrap();
        assert_eq!(none.episodes, 4);
        assert_eq!(none.cells[0].pct, 100.0);
        assert_eq!(none.cells[1].successes, 3);
        assert_eq!(none.cells[1].pct, 75.0);
        let text = t.to_text();
        assert!(text.contains("BVMC + min unc"));
        let header = text.lines().next().unwrap();
        assert!(header.find("reach").unwrap() < header.find("push").unwrap());
        let pp = ResultsTable::from_outcomes(Task::PickPlace, &modes, &rows);
        let stages: Vec<&str> = pp.rows[0].cells.iter().map(|c| c.stage.as_str()).collect();
        assert_eq!(stages, ["reach", "pick", "place"]);
    }

    #[test]
    fn outcomes_round_trip() {
        let mut rows: Vec<EpisodeOutcome> = (0..3).map(|i| outcome("rand", i, i == 1)).collect();
        rows[2].max_u = None;
        let mut buf = Vec::new();
        write_outcomes(&mut buf, &rows).unwrap();
        assert_eq!(read_outcomes(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn ranks_and_spearman() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[9.0, 5.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]) - 0.8).abs() < 1e-12);
        assert!(spearman(&[1.0, 2.0], &[1.0, 1.0]).is_nan());
    }

    proptest! {
        #[test]
        fn bins_partition_in_sorted_order(n in 10usize..300, seed in any::<u64>()) {
            let mut rng = rng_for(seed, &[]);
            let recs: Vec<ValidationRecord> = (0..n)
                .map(|i| ValidationRecord { episode_id: i, max_u: rng.gen_range(0.0..1.0), success: rng.gen_bool(0.5) })
                .collect();
            let rep = BinningReport::new(&recs).unwrap();
            prop_assert_eq!(rep.bins.len(), 10);
            prop_assert_eq!(rep.bins.iter().map(|b| b.episodes).sum::<usize>(), n);
            let sizes: Vec<usize> = rep.bins.iter().map(|b| b.episodes).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for w in rep.bins.windows(2) {
                prop_assert!(w[0].mean_max_u <= w[1].mean_max_u);
            }
            let mut buf = Vec::new();
            rep.write_csv(&mut buf).unwrap();
            prop_assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 11);
        }
    }

    #[test]
    fn mcnemar_counts_and_p_value() {
        let base: Vec<EpisodeOutcome> = (0..6).map(|i| outcome("none", i, i % 2 == 0)).collect();
        let other: Vec<EpisodeOutcome> = (0..6).map(|i| outcome("min_unc", i, i != 0)).collect();
        let m = McNemar::paired(&base.iter().collect::<Vec<_>>(), &other.iter().collect::<Vec<_>>(), "min_unc").unwrap();
        assert_eq!((m.both, m.only_baseline, m.only_mode, m.neither), (2, 1, 3, 0));
        // Two-sided exact test on 1 vs 3: 2 * (1 + 4) / 16.
        assert!((m.p_value - 0.625).abs() < 1e-12);
        assert_eq!(mcnemar_exact_p(0, 0), 1.0);
        assert!((mcnemar_exact_p(0, 10) - 2.0 / 1024.0).abs() < 1e-15);
        let shifted: Vec<EpisodeOutcome> = (1..7).map(|i| outcome("rand", i, true)).collect();
        assert!(McNemar::paired(&base.iter().collect::<Vec<_>>(), &shifted.iter().collect::<Vec<_>>(), "rand").is_err());
    }
}
