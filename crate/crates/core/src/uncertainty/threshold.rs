use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Outcome of one validation rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub episode_id: usize,
    /// Largest sliding-window uncertainty sum over the episode.
    pub max_u: f64,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    /// 1-based rank in ascending `max_u` order.
    pub i: usize,
    pub max_u: f64,
    pub success: bool,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    /// Trigger threshold; `+inf` when the records cannot separate success
    /// from failure.
    pub c: f64,
    /// 1-based rank of the chosen record, `None` when degenerate.
    pub i_star: Option<usize>,
    pub r_bar: f64,
    pub degenerate: bool,
    pub scan: Vec<ScanRow>,
}

/// Chooses the threshold that maximises the expected number of extra
/// successes, assuming episodes above it recover at the overall success
/// rate: `objective(i) = |u > u_i| r̄ - |u > u_i, success|`.
pub fn pick_threshold(records: &[ValidationRecord]) -> Result<ThresholdResult> {
    if records.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "threshold selection needs at least two records, got {}",
            records.len()
        )));
    }
    if let Some(r) = records.iter().find(|r| !(r.max_u.is_finite() && r.max_u >= 0.0)) {
        return Err(Error::InvalidInput(format!(
            "episode {} has invalid max_u {}",
            r.episode_id, r.max_u
        )));
    }
    let n = records.len();
    let successes = records.iter().filter(|r| r.success).count();
    let r_bar = successes as f64 / n as f64;
    let mut sorted: Vec<&ValidationRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.max_u.total_cmp(&b.max_u).then(a.episode_id.cmp(&b.episode_id)));

    // suffix counts over the sorted order; ties in max_u share the count of
    // strictly larger values
    let mut scan = Vec::with_capacity(n);
    let mut j = 0;
    let mut above = n;
    let mut above_ok = successes;
    for (idx, r) in sorted.iter().enumerate() {
        while j < n && sorted[j].max_u <= r.max_u {
            above -= 1;
            if sorted[j].success {
                above_ok -= 1;
            }
            j += 1;
        }
        scan.push(ScanRow {
            i: idx + 1,
            max_u: r.max_u,
            success: r.success,
            objective: above as f64 * r_bar - above_ok as f64,
        });
    }

    if successes == 0 || successes == n {
        log::warn!(
            "all {n} validation episodes {}; recovery threshold disabled",
            if successes == 0 { "failed" } else { "succeeded" }
        );
        return Ok(ThresholdResult {
            c: f64::INFINITY,
            i_star: None,
            r_bar,
            degenerate: true,
            scan,
        });
    }
    let mut best = 0;
    for k in 1..n {
        if scan[k].objective > scan[best].objective {
            best = k;
        }
    }
    Ok(ThresholdResult {
        c: scan[best].max_u,
        i_star: Some(best + 1),
        r_bar,
        degenerate: false,
        scan,
    })
}

pub fn write_validation_csv<W: Write>(mut w: W, records: &[ValidationRecord]) -> Result<()> {
    writeln!(w, "episode_id,max_u,success")?;
    for r in records {
        writeln!(w, "{},{},{}", r.episode_id, r.max_u, u8::from(r.success))?;
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(s: Option<&str>, what: &str, line: usize) -> Result<T> {
    s.map(str::trim)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("line {line}: bad or missing {what}")))
}

fn parse_flag(s: Option<&str>, line: usize) -> Result<bool> {
    match s.map(str::trim) {
        Some("1") | Some("true") => Ok(true),
        Some("0") | Some("false") => Ok(false),
        _ => Err(Error::Format(format!("line {line}: bad success flag"))),
    }
}

pub fn read_validation_csv<R: BufRead>(r: R) -> Result<Vec<ValidationRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate().skip(1) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut f = line.split(',');
        out.push(ValidationRecord {
            episode_id: parse_field(f.next(), "episode_id", i + 1)?,
            max_u: parse_field(f.next(), "max_u", i + 1)?,
            success: parse_flag(f.next(), i + 1)?,
        });
    }
    Ok(out)
}

/// Summary line (`c,i_star,r_bar,degenerate`), a blank line, then the scan
/// table.
pub fn write_threshold_csv<W: Write>(mut w: W, t: &ThresholdResult) -> Result<()> {
    writeln!(w, "c,i_star,r_bar,degenerate")?;
    let i_star = t.i_star.map_or_else(|| "none".to_string(), |i| i.to_string());
    writeln!(w, "{},{},{},{}", t.c, i_star, t.r_bar, u8::from(t.degenerate))?;
    writeln!(w)?;
    writeln!(w, "i,max_u,success,objective")?;
    for row in &t.scan {
        writeln!(w, "{},{},{},{}", row.i, row.max_u, u8::from(row.success), row.objective)?;
    }
    Ok(())
}

pub fn read_threshold_csv<R: BufRead>(r: R) -> Result<ThresholdResult> {
    let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
    if lines.len() < 4 || lines[0] != "c,i_star,r_bar,degenerate" {
        return Err(Error::Format("threshold file lacks its summary header".into()));
    }
    let mut f = lines[1].split(',');
    let c: f64 = parse_field(f.next(), "c", 2)?;
    let i_star = match f.next().map(str::trim) {
        Some("none") => None,
        other => Some(parse_field(other, "i_star", 2)?),
    };
    let r_bar = parse_field(f.next(), "r_bar", 2)?;
    let degenerate = parse_flag(f.next(), 2)?;
    let mut scan = Vec::new();
    for (k, line) in lines.iter().enumerate().skip(4) {
        if line.trim().is_empty() {
            continue;
        }
        let mut f = line.split(',');
        scan.push(ScanRow {
            i: parse_field(f.next(), "i", k + 1)?,
            max_u: parse_field(f.next(), "max_u", k + 1)?,
            success: parse_flag(f.next(), k + 1)?,
            objective: parse_field(f.next(), "objective", k + 1)?,
        });
    }
    Ok(ThresholdResult {
        c,
        i_star,
        r_bar,
        degenerate,
        scan,
    })
}
