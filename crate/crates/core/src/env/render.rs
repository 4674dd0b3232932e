use super::{EnvState, Observation, ObservationMode, Task, Vec3};
use crate::nn::Tensor;

pub const GRID_CELLS: usize = 16;
pub const GRID_CHANNELS: usize = 3;
pub const GRID_LEN: usize = GRID_CHANNELS * GRID_CELLS * GRID_CELLS;

// Quadratic B-spline, support radius 1.5 cells. Its integer translates sum
// to one, so the rendered mass does not depend on the sub-cell position.
fn bspline2(d: f64) -> f64 {
    let a = d.abs();
    if a <= 0.5 {
        0.75 - a * a
    } else if a < 1.5 {
        0.5 * (1.5 - a).powi(2)
    } else {
        0.0
    }
}

const PEAK_SCALE: f64 = 4.0 / 3.0;

fn axis_weights(coord: f64) -> [f64; GRID_CELLS] {
    let u = coord * GRID_CELLS as f64 - 0.5;
    let mut w = [0.0; GRID_CELLS];
    for (i, wi) in w.iter_mut().enumerate() {
        *wi = PEAK_SCALE * bspline2(i as f64 - u);
    }
    w
}

/// Max-composites the blob for planar point `p` into one channel
/// (`[row = y][col = x]`).
fn splat(channel: &mut [f64], p: Vec3) {
    let wx = axis_weights(p.x);
    let wy = axis_weights(p.y);
    for (row, &ry) in wy.iter().enumerate() {
        if ry == 0.0 {
            continue;
        }
        for (col, &cx) in wx.iter().enumerate() {
            let v = (ry * cx).min(1.0);
            let cell = &mut channel[row * GRID_CELLS + col];
            if v > *cell {
                *cell = v;
            }
        }
    }
}

pub fn observe(state: &EnvState, mode: ObservationMode) -> Observation {
    match mode {
        ObservationMode::OracleState => {
            let mut v = Vec::with_capacity(9);
            v.extend(state.ee_pos.to_array());
            v.extend(state.object_pos.to_array());
            v.extend(state.target_pos.to_array());
            Observation::State(v)
        }
        ObservationMode::GridImage => {
            let plane = GRID_CELLS * GRID_CELLS;
            let mut data = vec![0.0; GRID_LEN];
            let (ee, rest) = data.split_at_mut(plane);
            let (obj, target) = rest.split_at_mut(plane);
            splat(ee, state.ee_pos);
            splat(obj, state.object_pos);
            if state.task == Task::PickReach {
                splat(obj, state.stick_far_end());
            }
            splat(target, state.target_pos);
            Observation::Grid(
                Tensor::new(vec![GRID_CHANNELS, GRID_CELLS, GRID_CELLS], data)
                    .expect("grid shape matches buffer"),
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::reset;

    fn ee_channel(state: &EnvState) -> Vec<f64> {
        let obs = observe(state, ObservationMode::GridImage);
        obs.as_slice()[..GRID_CELLS * GRID_CELLS].to_vec()
    }

    #[test]
    fn cell_center_peaks_at_one() {
        let mut s = reset(Task::Pushing, 1);
        s.ee_pos = Vec3::new(5.5 / 16.0, 9.5 / 16.0, 0.1);
        let ch = ee_channel(&s);
        assert!((ch[9 * GRID_CELLS + 5] - 1.0).abs() < 1e-12);
        assert!(ch.iter().all(|&v| v <= ch[9 * GRID_CELLS + 5]));
    }

    #[test]
    fn values_are_unit_bounded_and_pure() {
        for seed in 0..20 {
            let s = reset(Task::PickReach, seed);
            let a = observe(&s, ObservationMode::GridImage);
            assert_eq!(a, observe(&s, ObservationMode::GridImage));
            assert!(a.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn blob_mass_is_translation_invariant() {
        // Reference mass from numerically integrating the continuous kernel
        // (midpoint rule) squared, since the kernel is separable.
        let n = 20_000;
        let h = 3.0 / n as f64;
        let axis: f64 = (0..n)
            .map(|k| PEAK_SCALE * bspline2(-1.5 + (k as f64 + 0.5) * h) * h)
            .sum();
        let reference = axis * axis;
        let mut s = reset(Task::Pushing, 1);
        for k in 0..200 {
            let x = 0.3 + 0.4 * k as f64 / 199.0;
            let y = 0.35 + 0.3 * ((k * 37) % 199) as f64 / 199.0;
            s.ee_pos = Vec3::new(x, y, 0.1);
            let mass: f64 = ee_channel(&s).iter().sum();
            assert!(
                (mass - reference).abs() / reference < 0.02,
                "mass {mass} vs {reference} at ({x}, {y})"
            );
        }
    }

    #[test]
    fn oracle_state_concatenates_positions() {
        let s = reset(Task::PickPlace, 4);
        let obs = observe(&s, ObservationMode::OracleState);
        let v = obs.as_slice();
        assert_eq!(v.len(), 9);
        assert_eq!(&v[3..6], &s.object_pos.to_array());
    }
}
