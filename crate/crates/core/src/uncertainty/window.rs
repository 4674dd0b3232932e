use crate::{Error, Result};

pub const DEFAULT_WINDOW: usize = 20;

/// Per-tick uncertainties with a sliding-window sum.
///
/// The window sum is re-added from the stored entries in tick order on
/// every push, so it always equals an offline recomputation bit for bit
/// (a running add/subtract would drift).
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyTrace {
    values: Vec<f64>,
    window: usize,
    sum: f64,
}

impl UncertaintyTrace {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidInput("window length must be positive".into()));
        }
        Ok(Self {
            values: Vec::new(),
            window,
            sum: 0.0,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn push(&mut self, u: f64) -> Result<f64> {
        if !(u.is_finite() && u >= 0.0) {
            return Err(Error::InvalidInput(format!("uncertainty {u} must be finite and non-negative")));
        }
        self.values.push(u);
        self.sum = Self::sum_of(&self.values, self.values.len(), self.window);
        Ok(self.sum)
    }

    fn sum_of(values: &[f64], t: usize, window: usize) -> f64 {
        values[t.saturating_sub(window)..t].iter().sum()
    }

    /// Sum of the latest `min(len, W)` entries.
    pub fn current(&self) -> Result<f64> {
        if self.values.is_empty() {
            return Err(Error::InvalidInput("window sum of an empty trace".into()));
        }
        Ok(self.sum)
    }

    /// Sum of entries `t-W+1 ..= t` (1-based `t`).
    pub fn window_sum(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.values.len() {
            return Err(Error::InvalidInput(format!(
                "window sum at t={t} requested from a trace of {} entries",
                self.values.len()
            )));
        }
        Ok(Self::sum_of(&self.values, t, self.window))
    }
}

/// Largest window sum over a whole uncertainty sequence (0 when empty).
pub fn max_window_sum(values: &[f64], window: usize) -> f64 {
    (1..=values.len())
        .map(|t| values[t.saturating_sub(window)..t].iter().sum::<f64>())
        .fold(0.0, f64::max)
}
