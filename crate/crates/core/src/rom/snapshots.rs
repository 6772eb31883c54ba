use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite, Error, Result};

/// States stored column-wise with their timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
}

impl SnapshotSet {
    pub fn new(times: Vec<f64>, states: DMatrix<f64>) -> Result<Self> {
        if times.len() != states.ncols() {
            return Err(Error::dims("snapshot timestamps", states.ncols(), times.len()));
        }
        ensure_finite("snapshot timestamps", &times)?;
        ensure_finite("snapshot states", states.as_slice())?;
        Ok(Self { times, states })
    }

    pub fn from_columns(times: Vec<f64>, columns: &[DVector<f64>]) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.len());
        if let Some(bad) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::dims("snapshot length", n, bad.len()));
        }
        let states = if columns.is_empty() { DMatrix::zeros(0, 0) } else { DMatrix::from_columns(columns) };
        Self::new(times, states)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// State dimension `N`.
    pub fn dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.states.column(i).into_owned()
    }

    /// Every `k`-th snapshot, starting with the first.
    pub fn every(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("subsampling stride must be at least 1".into()));
        }
        let keep: Vec<usize> = (0..self.len()).step_by(k).collect();
        let times = keep.iter().map(|&i| self.times[i]).collect();
        Ok(Self { times, states: self.states.select_columns(&keep) })
    }
}

/// Which steps of a fixed-step trajectory fall on the sampling grid
/// `t₀, t₀ + Δs, t₀ + 2Δs, …` inside the training window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotSchedule {
    pub t0: f64,
    pub dt: f64,
    pub stride: usize,
    /// Last step index inside the window.
    pub last_step: usize,
}

impl SnapshotSchedule {
    pub fn new(t0: f64, dt: f64, delta_s: f64, window_end: f64) -> Result<Self> {
        if !(dt > 0.0) || !(delta_s > 0.0) {
            return Err(Error::Config("time step and sampling interval must be positive".into()));
        }
        let ratio = delta_s / dt;
        let stride = ratio.round();
        if stride < 1.0 || (ratio - stride).abs() > 1e-9 * ratio {
            return Err(Error::Config(format!(
                "sampling interval {delta_s} is not an integer multiple of the time step {dt}"
            )));
        }
        if window_end < t0 {
            return Err(Error::Config("training window ends before it starts".into()));
        }
        let last_step = ((window_end - t0) / dt + 1e-9).floor() as usize;
        Ok(Self { t0, dt, stride: stride as usize, last_step })
    }

    pub fn records(&self, step: usize) -> bool {
        step <= self.last_step && step % self.stride == 0
    }

    pub fn count(&self) -> usize {
        self.last_step / self.stride + 1
    }

    pub fn time(&self, step: usize) -> f64 {
        self.t0 + step as f64 * self.dt
    }
}

/// Accumulates snapshots while a simulation runs.
#[derive(Debug, Clone)]
pub struct SnapshotRecorder {
    schedule: SnapshotSchedule,
    times: Vec<f64>,
    columns: Vec<DVector<f64>>,
}

impl SnapshotRecorder {
    pub fn new(schedule: SnapshotSchedule) -> Self {
        Self { schedule, times: Vec::new(), columns: Vec::new() }
    }

    /// Offers the state reached after `step` steps; keeps it if scheduled.
    pub fn observe(&mut self, step: usize, state: &DVector<f64>) {
        if self.schedule.records(step) {
            self.times.push(self.schedule.time(step));
            self.columns.push(state.clone());
        }
    }

    pub fn finish(self) -> Result<SnapshotSet> {
        SnapshotSet::from_columns(self.times, &self.columns)
    }
}

/// Samples a stored trajectory (`trajectory[k]` at `t₀ + kΔt`).
pub fn collect_snapshots(
    trajectory: &[DVector<f64>],
    t0: f64,
    dt: f64,
    delta_s: f64,
    window_end: f64,
) -> Result<SnapshotSet> {
    let schedule = SnapshotSchedule::new(t0, dt, delta_s, window_end)?;
    let mut recorder = SnapshotRecorder::new(schedule);
    for (k, u) in trajectory.iter().enumerate() {
        recorder.observe(k, u);
    }
    recorder.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn long_window_counts() {
        assert_eq!(SnapshotSchedule::new(0.0, 0.01, 0.2, 150.0).unwrap().count(), 751);
        assert_eq!(SnapshotSchedule::new(0.0, 1e-3, 0.1, 20.0).unwrap().count(), 201);
    }

    #[test]
    fn recorder_matches_schedule_count() {
        let traj: Vec<_> = (0..=15_000).map(|k| DVector::from_element(1, k as f64)).collect();
        let set = collect_snapshots(&traj, 0.0, 0.01, 0.2, 150.0).unwrap();
        assert_eq!(set.len(), 751);
        assert!((set.times[750] - 150.0).abs() < 1e-9);
        assert_eq!(set.states[(0, 1)], 20.0);
    }

    #[test]
    fn every_step_sampling_includes_initial_state() {
        let traj: Vec<_> = (0..=7).map(|k| DVector::from_element(2, k as f64)).collect();
        let set = collect_snapshots(&traj, 0.0, 0.5, 0.5, 3.5).unwrap();
        assert_eq!(set.len(), 8);
        assert_eq!(set.times[0], 0.0);
    }

    #[test]
    fn non_multiple_interval_is_rejected() {
        assert!(matches!(SnapshotSchedule::new(0.0, 0.03, 0.1, 1.0), Err(Error::Config(_))));
        assert!(SnapshotSchedule::new(0.0, 0.1, 0.05, 1.0).is_err());
    }

    #[test]
    fn subsampling_keeps_first_and_every_kth() {
        let cols: Vec<_> = (0..25).map(|k| DVector::from_element(1, k as f64)).collect();
        let set = SnapshotSet::from_columns((0..25).map(f64::from).collect(), &cols).unwrap();
        let sub = set.every(10).unwrap();
        assert_eq!(sub.times, vec![0.0, 10.0, 20.0]);
    }
}
