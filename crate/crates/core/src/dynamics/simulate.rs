use nalgebra::DVector;

use super::model::ScenarioModel;
use super::nominal::Nominal;
use super::schedule::ControlSchedule;
use crate::error::{invalid, Result, SacbpError};
use crate::linalg::all_finite;
use crate::rng::{rng_from_seed, SimRng};

/// Ratio `a / b` as an integer, if it is one (to 1e-6 relative).
pub(crate) fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    if !(b > 0.0) || !(a >= 0.0) {
        return None;
    }
    let r = a / b;
    let n = r.round();
    if (r - n).abs() <= 1e-6 * n.max(1.0) {
        Some(n as usize)
    } else {
        None
    }
}

/// Uniform timing of a hybrid rollout: Euler step `dt_ctrl`, jumps every `dt_obs`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub dt_ctrl: f64,
    pub dt_obs: f64,
    pub horizon: f64,
}

impl TimeGrid {
    pub fn new(dt_ctrl: f64, dt_obs: f64, horizon: f64) -> Result<Self> {
        let grid = Self { dt_ctrl, dt_obs, horizon };
        grid.steps_per_obs()?;
        grid.n_obs()?;
        Ok(grid)
    }

    pub fn steps_per_obs(&self) -> Result<usize> {
        match integer_ratio(self.dt_obs, self.dt_ctrl) {
            Some(s) if s >= 1 => Ok(s),
            _ => Err(invalid(format!(
                "observation interval {} is not a positive multiple of the control step {}",
                self.dt_obs, self.dt_ctrl
            ))),
        }
    }

    pub fn n_obs(&self) -> Result<usize> {
        integer_ratio(self.horizon, self.dt_obs).ok_or_else(|| {
            invalid(format!("horizon {} is not a multiple of {}", self.horizon, self.dt_obs))
        })
    }

    pub fn n_steps(&self) -> Result<usize> {
        Ok(self.n_obs()? * self.steps_per_obs()?)
    }
}

/// A sampled (or replayed) rollout of the hybrid system on the control grid.
#[derive(Clone, Debug)]
pub struct HybridTrajectory {
    pub t0: f64,
    pub dt: f64,
    pub steps_per_obs: usize,
    /// `K + 1` grid states; at an epoch this is the post-jump state.
    pub states: Vec<DVector<f64>>,
    /// `K` cell controls.
    pub controls: Vec<DVector<f64>>,
    /// Whether each cell control came from the feedback policy.
    pub feedback: Vec<bool>,
    pub jump_indices: Vec<usize>,
    /// Left limits `x(t_k⁻)` at each epoch.
    pub pre_jump_states: Vec<DVector<f64>>,
    pub observations: Vec<DVector<f64>>,
    /// Left-Riemann running cost accumulated up to each grid point.
    pub running_cost: Vec<f64>,
}

impl HybridTrajectory {
    pub fn n_steps(&self) -> usize {
        self.controls.len()
    }

    pub fn grid_times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|j| self.t0 + j as f64 * self.dt).collect()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least one state")
    }

    /// Epoch number `k` (0-based into `jump_indices`) if grid index `j` is a jump time.
    pub fn epoch_at(&self, j: usize) -> Option<usize> {
        if j > 0 && j % self.steps_per_obs == 0 {
            let k = j / self.steps_per_obs - 1;
            (k < self.jump_indices.len()).then_some(k)
        } else {
            None
        }
    }

    /// State at grid index `j`, taking the left limit at epochs.
    pub fn state_before(&self, j: usize) -> &DVector<f64> {
        match self.epoch_at(j) {
            Some(k) => &self.pre_jump_states[k],
            None => &self.states[j],
        }
    }

    pub fn grid_index(&self, t: f64) -> Result<usize> {
        let k = ((t - self.t0) / self.dt).round();
        if k < 0.0 || k as usize >= self.states.len() {
            return Err(SacbpError::OutsideSpan {
                t,
                start: self.t0,
                end: self.t0 + self.dt * self.n_steps() as f64,
            });
        }
        Ok(k as usize)
    }
}

/// Where the epoch observations come from.
pub enum ObservationSource<'a> {
    /// Draw from the model's generative sampler.
    Sample(&'a mut SimRng),
    /// Reuse a recorded observation sequence (common random numbers).
    Replay(&'a [DVector<f64>]),
}

impl ObservationSource<'_> {
    fn next(
        &mut self,
        model: &dyn ScenarioModel,
        k: usize,
        x_pre: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        match self {
            ObservationSource::Sample(rng) => Ok(model.sample_observation(x_pre, rng)),
            ObservationSource::Replay(ys) => ys
                .get(k)
                .cloned()
                .ok_or_else(|| invalid(format!("replayed sequence has no observation {k}"))),
        }
    }
}

/// Explicit-Euler flow of `model` from `t0` to `t1` under an open-loop schedule, without jumps.
pub fn euler_flow(
    model: &dyn ScenarioModel,
    x0: &DVector<f64>,
    schedule: &ControlSchedule,
    t0: f64,
    t1: f64,
) -> Result<Vec<DVector<f64>>> {
    if t1 < t0 {
        return Err(invalid("euler_flow requires t1 >= t0"));
    }
    let dt = schedule.dt();
    let first = integer_ratio(t0 - schedule.t0(), dt)
        .ok_or_else(|| invalid("t0 is not on the schedule grid"))?;
    let n = integer_ratio(t1 - t0, dt).ok_or_else(|| invalid("t1 - t0 is not a grid multiple"))?;
    if first + n > schedule.len() {
        return Err(SacbpError::OutsideSpan { t: t1, start: schedule.t0(), end: schedule.t_end() });
    }
    let mut path = Vec::with_capacity(n + 1);
    let mut x = x0.clone();
    path.push(x.clone());
    for j in first..first + n {
        x += model.flow(&x, schedule.value(j)) * dt;
        if !all_finite(&x) {
            return Err(SacbpError::NonFinite("euler flow state"));
        }
        path.push(x.clone());
    }
    Ok(path)
}

/// Forward-simulates the hybrid system from `x0` (the post-observation state at the nominal's
/// start time) over `grid.horizon`, applying a jump every `grid.dt_obs`.
pub fn simulate_hybrid(
    model: &dyn ScenarioModel,
    x0: &DVector<f64>,
    nominal: &Nominal,
    grid: &TimeGrid,
    mut observations: ObservationSource<'_>,
) -> Result<HybridTrajectory> {
    let dt = nominal.dt();
    if (dt - grid.dt_ctrl).abs() > 1e-12 * dt.max(1.0) {
        return Err(invalid("nominal control step differs from the time grid"));
    }
    if x0.len() != model.state_dim() {
        return Err(invalid("initial state has the wrong dimension"));
    }
    let steps_per_obs = grid.steps_per_obs()?;
    let n_steps = grid.n_steps()?;
    if nominal.n_cells() < n_steps {
        return Err(invalid("nominal control is shorter than the horizon"));
    }
    let n_obs = n_steps / steps_per_obs;

    let mut traj = HybridTrajectory {
        t0: nominal.t0(),
        dt,
        steps_per_obs,
        states: Vec::with_capacity(n_steps + 1),
        controls: Vec::with_capacity(n_steps),
        feedback: Vec::with_capacity(n_steps),
        jump_indices: Vec::with_capacity(n_obs),
        pre_jump_states: Vec::with_capacity(n_obs),
        observations: Vec::with_capacity(n_obs),
        running_cost: Vec::with_capacity(n_steps + 1),
    };
    let mut x = x0.clone();
    let mut acc = 0.0;
    traj.states.push(x.clone());
    traj.running_cost.push(acc);
    for j in 0..n_steps {
        let cell = nominal.control(j, &x);
        acc += dt * model.running_cost(&x, &cell.u);
        let mut next = &x + model.flow(&x, &cell.u) * dt;
        if !all_finite(&next) || !acc.is_finite() {
            return Err(SacbpError::NonFinite("rollout state"));
        }
        if (j + 1) % steps_per_obs == 0 {
            let k = traj.jump_indices.len();
            let y = observations.next(model, k, &next)?;
            let post = model.jump(&next, &y)?;
            if !all_finite(&post) {
                return Err(SacbpError::NonFinite("post-jump state"));
            }
            traj.jump_indices.push(j + 1);
            traj.pre_jump_states.push(next);
            traj.observations.push(y);
            next = post;
        }
        traj.controls.push(cell.u);
        traj.feedback.push(cell.feedback);
        traj.states.push(next.clone());
        traj.running_cost.push(acc);
        x = next;
    }
    Ok(traj)
}

/// [`simulate_hybrid`] with observations drawn from a stream seeded by `seed`.
pub fn simulate_nominal(
    model: &dyn ScenarioModel,
    x0: &DVector<f64>,
    nominal: &Nominal,
    grid: &TimeGrid,
    seed: u64,
) -> Result<HybridTrajectory> {
    let mut rng = rng_from_seed(seed);
    simulate_hybrid(model, x0, nominal, grid, ObservationSource::Sample(&mut rng))
}

/// Left-Riemann running cost plus the terminal cost at the final post-jump state.
pub fn total_cost(traj: &HybridTrajectory, model: &dyn ScenarioModel) -> f64 {
    traj.running_cost.last().copied().unwrap_or(0.0) + model.terminal_cost(traj.final_state())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ControlBox;
    use crate::scenarios::{ScalarTargetConfig, ScalarTargetModel};

    fn scalar(cfg: ScalarTargetConfig) -> ScalarTargetModel {
        ScalarTargetModel::new(cfg).unwrap()
    }

    fn constant(u: f64, dt: f64, n: usize) -> ControlSchedule {
        ControlSchedule::constant(0.0, dt, n, DVector::from_element(1, u), ControlBox::symmetric(1, 3.0).unwrap())
            .unwrap()
    }

    #[test]
    fn euler_flow_integrates_constant_control() {
        let m = scalar(ScalarTargetConfig { a: 0.0, initial: [0.0, 0.0, 1.0], ..Default::default() });
        let path = euler_flow(&m, &m.initial_state(), &constant(1.0, 0.01, 100), 0.0, 1.0).unwrap();
        assert_eq!(path.len(), 101);
        assert!((path[100][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn euler_flow_exponential_decay() {
        let m = scalar(ScalarTargetConfig { a: -1.0, initial: [1.0, 0.0, 1.0], ..Default::default() });
        let path = euler_flow(&m, &m.initial_state(), &constant(0.0, 1e-3, 1000), 0.0, 1.0).unwrap();
        let p = path.last().unwrap()[0];
        assert!((p - (-1.0f64).exp()).abs() < 2e-4, "{p}");
        assert!((p - 0.999f64.powi(1000)).abs() < 1e-12);
    }

    #[test]
    fn euler_flow_empty_interval() {
        let m = scalar(ScalarTargetConfig::default());
        let path = euler_flow(&m, &m.initial_state(), &constant(0.0, 0.01, 10), 0.05, 0.05).unwrap();
        assert_eq!(path, vec![m.initial_state()]);
        assert!(euler_flow(&m, &m.initial_state(), &constant(0.0, 0.01, 10), 0.05, 0.04).is_err());
    }

    #[test]
    fn zero_horizon_is_the_initial_state() {
        let m = scalar(ScalarTargetConfig::default());
        let nominal = Nominal::OpenLoop(constant(0.0, 0.01, 1));
        let traj = simulate_nominal(&m, &m.initial_state(), &nominal, &TimeGrid::new(0.01, 0.5, 0.0).unwrap(), 3).unwrap();
        assert_eq!(traj.states, vec![m.initial_state()]);
        assert!(traj.observations.is_empty());
        assert_eq!(total_cost(&traj, &m), m.terminal_cost(&m.initial_state()));
    }

    #[test]
    fn variance_sequence_matches_scalar_kalman_recursion() {
        let cfg = ScalarTargetConfig { a: 0.0, ..Default::default() };
        let m = scalar(cfg.clone());
        let grid = TimeGrid::new(0.01, cfg.dt_obs, 10.0).unwrap();
        let nominal = Nominal::OpenLoop(constant(0.0, 0.01, grid.n_steps().unwrap()));
        let traj = simulate_nominal(&m, &m.initial_state(), &nominal, &grid, 42).unwrap();
        assert_eq!(traj.jump_indices.len(), 20);
        let r = cfg.r0 + cfg.r1 * cfg.initial[0] * cfg.initial[0];
        let (mut mean, mut var) = (cfg.initial[1], cfg.initial[2]);
        for (k, &j) in traj.jump_indices.iter().enumerate() {
            let pred = var + cfg.q * cfg.dt_obs;
            let gain = pred / (pred + r);
            mean += gain * (traj.observations[k][0] - mean);
            var = pred * r / (pred + r);
            assert!((traj.states[j][2] - var).abs() <= 1e-15 * var, "epoch {k}");
            assert!((traj.states[j][1] - mean).abs() <= 1e-12 * (1.0 + mean.abs()), "epoch {k}");
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let m = scalar(ScalarTargetConfig::default());
        let grid = TimeGrid::new(0.01, 0.5, 2.0).unwrap();
        let nominal = Nominal::OpenLoop(constant(0.5, 0.01, 200));
        let a = simulate_nominal(&m, &m.initial_state(), &nominal, &grid, 9).unwrap();
        let b = simulate_nominal(&m, &m.initial_state(), &nominal, &grid, 9).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.observations, b.observations);
        let c = simulate_nominal(&m, &m.initial_state(), &nominal, &grid, 10).unwrap();
        assert_ne!(a.observations, c.observations);
    }

    #[test]
    fn total_cost_examples() {
        let zero = ScalarTargetConfig {
            cost_p: 0.0,
            cost_var: 0.0,
            terminal_p: 0.0,
            terminal_var: 0.0,
            terminal_mean: 0.0,
            ..Default::default()
        };
        let grid = TimeGrid::new(0.01, 2.0, 2.0).unwrap();
        let nominal = Nominal::OpenLoop(constant(0.0, 0.01, 200));
        let m = scalar(zero.clone());
        let traj = simulate_nominal(&m, &m.initial_state(), &nominal, &grid, 1).unwrap();
        assert_eq!(total_cost(&traj, &m), 0.0);

        // c = ½ cost_var s with s frozen until the single jump at t_f
        let unit = ScalarTargetConfig { cost_var: 2.0 / zero.initial[2], ..zero };
        let m = scalar(unit);
        let traj = simulate_nominal(&m, &m.initial_state(), &nominal, &grid, 1).unwrap();
        assert!((total_cost(&traj, &m) - 2.0).abs() <= 0.01);
    }
}
