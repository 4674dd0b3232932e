use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sampling::{mc_sample, mean_delta};
use crate::env::geometry::MAX_STEP;
use crate::env::{EpisodeRecord, Vec3};
use crate::nn::LstmMemory;
use crate::policy::{prepare_episode, PolicyModel};
use crate::rng::{derive, stream};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub samples: usize,
    /// Per-episode median end-effector command error, averaged over episodes.
    pub error: f64,
    /// The per-episode medians, in episode order.
    pub per_episode: Vec<f64>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Error of the MC-mean command against expert demonstrations as a
/// function of the sample count. The policy is teacher-forced along each
/// recorded episode; entry `j` of `s_list` draws its noise independently of
/// every other entry.
pub fn mc_convergence_curve(
    model: &PolicyModel,
    episodes: &[EpisodeRecord],
    s_list: &[usize],
    noise_seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    if episodes.is_empty() {
        return Err(Error::InvalidInput("no episodes for the convergence curve".into()));
    }
    let k = model.config().frames;
    let prepared = episodes
        .iter()
        .map(|r| prepare_episode(r, model.config()))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(s_list.len());
    for (j, &s_count) in s_list.iter().enumerate() {
        let per_episode = prepared
            .par_iter()
            .enumerate()
            .map(|(e_idx, ep)| -> Result<f64> {
                let mut mem = LstmMemory::zeros(model.config().lstm_width);
                let mut errs = Vec::with_capacity(ep.len());
                for t in 0..ep.len() {
                    let s = model.encode(&ep.stacked(t, k), &ep.proprio[t])?;
                    let root = derive(noise_seed, &[stream::MC, j as u64, e_idx as u64, t as u64]);
                    let (set, _, next) = mc_sample(model, &s, &mem, s_count, root)?;
                    mem = next;
                    let m = Vec3::from(mean_delta(&set)?) * MAX_STEP;
                    let truth = Vec3::from(ep.targets[t].delta_ee) * MAX_STEP;
                    errs.push(m.dist(truth));
                }
                Ok(median(&mut errs))
            })
            .collect::<Result<Vec<f64>>>()?;
        let error = per_episode.iter().sum::<f64>() / per_episode.len() as f64;
        rows.push(ConvergenceRow {
            samples: s_count,
            error,
            per_episode,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
