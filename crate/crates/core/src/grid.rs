use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("a time grid needs at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("grid is not strictly monotone at sample {index}")]
    NotMonotone { index: usize },
    #[error("grid contains a non-finite time at sample {index}")]
    NonFinite { index: usize },
    #[error("grid [{t0}, {t1}] contains the singular point t = {t}")]
    SingularPoint { t: f64, t0: f64, t1: f64 },
    #[error("invalid window [{t0}, {t1}]")]
    InvalidWindow { t0: f64, t1: f64 },
}

/// An analysis interval, always stored with `t0 < t1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub t0: f64,
    pub t1: f64,
}

impl Window {
    pub fn new(t0: f64, t1: f64) -> Result<Self, GridError> {
        if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
            return Err(GridError::InvalidWindow { t0, t1 });
        }
        Ok(Window { t0, t1 })
    }

    pub fn span(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0 && t <= self.t1
    }

    pub fn linspace(&self, n: usize) -> Vec<f64> {
        linspace(self.t0, self.t1, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// Strictly monotone sample times, increasing (forward) or decreasing (backward).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let h = (b - a) / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|i| a + h * i as f64).collect();
    v[n - 1] = b;
    v
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self, GridError> {
        if times.len() < 2 {
            return Err(GridError::TooFewSamples(times.len()));
        }
        if let Some(index) = times.iter().position(|t| !t.is_finite()) {
            return Err(GridError::NonFinite { index });
        }
        let forward = times[1] > times[0];
        for i in 1..times.len() {
            let ok = if forward { times[i] > times[i - 1] } else { times[i] < times[i - 1] };
            if !ok {
                return Err(GridError::NotMonotone { index: i });
            }
        }
        Ok(TimeGrid { times })
    }

    /// `n` equally spaced samples from `t0` to `t1` (either order).
    pub fn uniform(t0: f64, t1: f64, n: usize) -> Result<Self, GridError> {
        TimeGrid::new(linspace(t0, t1, n))
    }

    /// Samples with spacing at most `h` from `t0` to `t1`.
    pub fn with_max_step(t0: f64, t1: f64, h: f64) -> Result<Self, GridError> {
        let n = ((t1 - t0).abs() / h).ceil().max(1.0) as usize + 1;
        TimeGrid::uniform(t0, t1, n)
    }

    /// Geometric spacing from `t0 > 0` up to `t_switch` (ratio `ratio`), then uniform spacing
    /// `h` up to `t1`. Suited to coefficients singular at the origin.
    pub fn graded(t0: f64, t_switch: f64, t1: f64, ratio: f64, h: f64) -> Result<Self, GridError> {
        let mut times = vec![t0];
        let mut t = t0;
        while t * ratio < t_switch && (t * ratio - t) < h {
            t *= ratio;
            times.push(t);
        }
        let start = *times.last().unwrap_or(&t0);
        let n = ((t1 - start) / h).ceil().max(1.0) as usize;
        for i in 1..n {
            times.push(start + (t1 - start) * i as f64 / n as f64);
        }
        times.push(t1);
        TimeGrid::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn t1(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn direction(&self) -> Direction {
        if self.t1() > self.t0() {
            Direction::Forward
        } else {
            Direction::Backward
        }
    }

    pub fn window(&self) -> Window {
        Window { t0: self.t0().min(self.t1()), t1: self.t0().max(self.t1()) }
    }

    pub fn reversed(&self) -> TimeGrid {
        let mut times = self.times.clone();
        times.reverse();
        TimeGrid { times }
    }

    /// Index of the sample equal to `t` up to a relative tolerance of 1e-12.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-12 * (1.0 + t.abs());
        let idx = match self.direction() {
            Direction::Forward => self.times.partition_point(|&s| s < t - tol),
            Direction::Backward => self.times.partition_point(|&s| s > t + tol),
        };
        [idx.saturating_sub(1), idx, idx + 1]
            .into_iter()
            .filter(|&i| i < self.times.len())
            .find(|&i| (self.times[i] - t).abs() <= tol)
    }

    /// Index of the sample nearest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }

    /// Rejects grids whose closed span contains one of `singular`.
    pub fn check_avoids(&self, singular: &[f64]) -> Result<(), GridError> {
        let w = self.window();
        match singular.iter().find(|&&s| w.contains(s)) {
            Some(&t) => Err(GridError::SingularPoint { t, t0: w.t0, t1: w.t1 }),
            None => Ok(()),
        }
    }

    /// Uniform sample spacing when the grid is uniform to 1e-9 relative, else `None`.
    pub fn uniform_step(&self) -> Option<f64> {
        let h = (self.t1() - self.t0()) / (self.len() - 1) as f64;
        let uniform = self
            .times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1e-300));
        uniform.then_some(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_monotone() {
        assert!(matches!(TimeGrid::new(vec![0.0, 1.0, 1.0]), Err(GridError::NotMonotone { index: 2 })));
        assert!(TimeGrid::new(vec![0.0]).is_err());
    }

    #[test]
    fn backward_grids() {
        let g = TimeGrid::uniform(10.0, 0.0, 11).unwrap();
        assert_eq!(g.direction(), Direction::Backward);
        assert_eq!(g.index_of(3.0), Some(7));
        assert_eq!(g.window(), Window { t0: 0.0, t1: 10.0 });
    }

    #[test]
    fn singular_points_are_excluded() {
        let g = TimeGrid::uniform(-1.0, 1.0, 5).unwrap();
        assert!(g.check_avoids(&[0.0]).is_err());
        assert!(g.check_avoids(&[2.0]).is_ok());
    }

    #[test]
    fn graded_grid_is_monotone_and_reaches_end() {
        let g = TimeGrid::graded(0.01, 1.0, 20.0, 1.02, 0.01).unwrap();
        assert_eq!(g.t0(), 0.01);
        assert_eq!(g.t1(), 20.0);
        assert!(g.times().windows(2).all(|w| w[1] - w[0] <= 0.0100001));
    }
}
