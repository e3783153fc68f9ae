use serde::{Deserialize, Serialize};

use crate::dynamics::{integer_ratio, TimeGrid};
use crate::error::{invalid, Result};

/// Timing and sampling parameters of the control update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerParams {
    /// Planning horizon `t_f - t_0` in seconds.
    pub horizon: f64,
    pub dt_obs: f64,
    pub dt_ctrl: f64,
    /// Perturbation duration `ε`.
    pub eps: f64,
    pub n_samples: usize,
    /// Simulated computation latency.
    pub t_calc: f64,
    pub base_seed: u64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            horizon: 2.0,
            dt_obs: 0.2,
            dt_ctrl: 0.01,
            eps: 0.16,
            n_samples: 10,
            t_calc: 0.15,
            base_seed: 0,
        }
    }
}

fn cells(value: f64, dt: f64, what: &str) -> Result<usize> {
    integer_ratio(value, dt)
        .ok_or_else(|| invalid(format!("{what} {value} is not a multiple of the control step {dt}")))
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_ctrl > 0.0) || !(self.dt_obs > 0.0) || !(self.horizon > 0.0) {
            return Err(invalid("horizon and time steps must be positive"));
        }
        self.grid()?;
        if self.n_samples == 0 {
            return Err(invalid("at least one Monte Carlo sample is required"));
        }
        if !(self.eps >= 0.0) || self.eps >= self.dt_obs {
            return Err(invalid("perturbation duration must satisfy 0 <= eps < dt_obs"));
        }
        if !(self.t_calc >= 0.0) || self.t_calc >= self.dt_obs {
            return Err(invalid("computation latency must satisfy 0 <= t_calc < dt_obs"));
        }
        cells(self.eps, self.dt_ctrl, "eps")?;
        cells(self.t_calc, self.dt_ctrl, "t_calc")?;
        if self.t_calc + self.dt_obs > self.horizon + 1e-9 {
            return Err(invalid("perturbation window extends past the horizon"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.dt_ctrl, self.dt_obs, self.horizon)
    }

    pub fn n_cells(&self) -> Result<usize> {
        self.grid()?.n_steps()
    }

    pub fn calc_cells(&self) -> Result<usize> {
        cells(self.t_calc, self.dt_ctrl, "t_calc")
    }

    pub fn eps_cells(&self) -> Result<usize> {
        cells(self.eps, self.dt_ctrl, "eps")
    }

    /// Candidate insertion times `t0 + t_calc + ε + j Δt_c` for `j = 1, …` up to and including
    /// `t0 + t_calc + Δt_o`.
    pub fn tau_grid(&self, t0: f64) -> Result<Vec<f64>> {
        let first = self.calc_cells()? + self.eps_cells()?;
        let last = self.calc_cells()? + self.grid()?.steps_per_obs()?;
        if last <= first {
            return Err(invalid("empty insertion-time grid"));
        }
        Ok(((first + 1)..=last).map(|j| t0 + j as f64 * self.dt_ctrl).collect())
    }
}
