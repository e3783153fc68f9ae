use nalgebra::DVector;
use rayon::prelude::*;

use super::params::PlannerParams;
use super::qp::{optimize_perturbation, PerturbationResult, VariationCoefficients};
use crate::adjoint::adjoint_backward;
use crate::dynamics::{simulate_nominal, Nominal, ScenarioModel, TimeGrid};
use crate::error::{invalid, Result, SacbpError};
use crate::rng::derive_seed;

/// Per-sample coefficients of `ν` at each candidate insertion time, from one forward rollout
/// and one backward costate pass.
pub fn sample_coefficients(
    model: &dyn ScenarioModel,
    x0: &DVector<f64>,
    nominal: &Nominal,
    grid: &TimeGrid,
    taus: &[f64],
    seed: u64,
) -> Result<Vec<VariationCoefficients>> {
    let traj = simulate_nominal(model, x0, nominal, grid, seed)?;
    let adj = adjoint_backward(&traj, nominal, model)?;
    let cu = model.control_cost_diag();
    taus.iter()
        .map(|&tau| {
            let j = traj.grid_index(tau)?;
            if j == 0 {
                return Err(invalid("insertion time at the nominal start"));
            }
            let w = model.control_coefficient(traj.state_before(j)).transpose() * adj.rho_before(j);
            Ok(VariationCoefficients::from_costate(w, &traj.controls[j - 1], cu))
        })
        .collect()
}

/// Monte Carlo averaged coefficients on the candidate grid. Samples run as a parallel map in
/// the current rayon pool; failed samples are dropped and the mean is taken over the rest in
/// index order. Returns the averages and the number of samples used.
pub fn mean_coefficients(
    model: &dyn ScenarioModel,
    x0: &DVector<f64>,
    nominal: &Nominal,
    params: &PlannerParams,
    taus: &[f64],
    epoch: u64,
) -> Result<(Vec<VariationCoefficients>, usize)> {
    let grid = params.grid()?;
    let samples: Vec<Result<Vec<VariationCoefficients>>> = (0..params.n_samples)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(params.base_seed, epoch, i as u64);
            sample_coefficients(model, x0, nominal, &grid, taus, seed)
        })
        .collect();
    let ok: Vec<_> = samples.into_iter().filter_map(|s| s.ok()).collect();
    let failed = params.n_samples - ok.len();
    if ok.is_empty() || 2 * failed > params.n_samples {
        return Err(SacbpError::RolloutsFailed { failed, total: params.n_samples });
    }
    let means = (0..taus.len())
        .map(|t| {
            let column: Vec<_> = ok.iter().map(|s| s[t].clone()).collect();
            VariationCoefficients::mean(&column)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((means, ok.len()))
}

/// The control update: immutable parameters, one call per observation epoch.
#[derive(Clone, Debug)]
pub struct SacbpPlanner {
    params: PlannerParams,
}

impl SacbpPlanner {
    pub fn new(params: PlannerParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &PlannerParams {
        &self.params
    }

    /// Finds the best single insertion for the nominal starting at `x0` and returns the
    /// perturbed nominal. `epoch` only feeds the per-sample seeds.
    pub fn update(
        &self,
        model: &dyn ScenarioModel,
        x0: &DVector<f64>,
        nominal: &Nominal,
        epoch: u64,
    ) -> Result<(Nominal, PerturbationResult)> {
        let p = &self.params;
        if (nominal.dt() - p.dt_ctrl).abs() > 1e-12 {
            return Err(invalid("nominal control step differs from the planner's"));
        }
        let taus = p.tau_grid(nominal.t0())?;
        let (means, n_eff) = mean_coefficients(model, x0, nominal, p, &taus, epoch)?;
        let candidates: Vec<_> = taus.into_iter().zip(means).collect();
        let mut result = optimize_perturbation(&candidates, model.control_cost_diag(), model.control_box())?;
        result.n_effective = n_eff;
        let plan = if result.applied {
            nominal.perturbed(result.tau_star, &result.v_star, p.eps)?
        } else {
            nominal.clone()
        };
        Ok((plan, result))
    }
}

/// One control update with a fresh planner.
pub fn sacbp_control_update(
    x0: &DVector<f64>,
    nominal: &Nominal,
    model: &dyn ScenarioModel,
    params: &PlannerParams,
) -> Result<(Nominal, PerturbationResult)> {
    SacbpPlanner::new(params.clone())?.update(model, x0, nominal, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ControlSchedule;
    use crate::scenarios::{ScalarTargetConfig, ScalarTargetModel};

    fn fixture(cfg: ScalarTargetConfig) -> (ScalarTargetModel, PlannerParams, Nominal) {
        let model = ScalarTargetModel::new(cfg).unwrap();
        let params = PlannerParams {
            horizon: 2.0,
            dt_obs: 0.5,
            dt_ctrl: 0.01,
            eps: 0.1,
            n_samples: 6,
            t_calc: 0.1,
            base_seed: 3,
        };
        let nominal = Nominal::OpenLoop(
            ControlSchedule::zeros(0.0, 0.01, 200, model.control_box().clone()).unwrap(),
        );
        (model, params, nominal)
    }

    #[test]
    fn zero_cost_keeps_nominal() {
        let cfg = ScalarTargetConfig {
            cost_p: 0.0,
            cost_var: 0.0,
            terminal_p: 0.0,
            terminal_var: 0.0,
            terminal_mean: 0.0,
            ..Default::default()
        };
        let (model, params, nominal) = fixture(cfg);
        let x0 = model.initial_state();
        let (plan, r) = sacbp_control_update(&x0, &nominal, &model, &params).unwrap();
        assert!(!r.applied);
        assert_eq!(r.nu_star, 0.0);
        for j in 0..200 {
            assert_eq!(plan.fixed_value(j), nominal.fixed_value(j));
        }
    }

    #[test]
    fn perturbation_stays_in_window() {
        let (model, params, nominal) = fixture(ScalarTargetConfig::default());
        let x0 = model.initial_state();
        let (plan, r) = sacbp_control_update(&x0, &nominal, &model, &params).unwrap();
        assert!(r.nu_star <= 0.0);
        assert!(r.tau_star > 0.2 + 1e-9 && r.tau_star <= 0.6 + 1e-9);
        assert_eq!(r.n_effective, 6);
        let changed: Vec<_> = (0..200).filter(|&j| plan.fixed_value(j) != nominal.fixed_value(j)).collect();
        if r.applied {
            let hi = (r.tau_star / 0.01).round() as usize;
            for j in changed {
                assert!(j < hi && j + 10 >= hi, "cell {j}");
            }
        } else {
            assert!(changed.is_empty());
        }
    }

    #[test]
    fn deterministic_across_pools() {
        let (model, params, nominal) = fixture(ScalarTargetConfig::default());
        let x0 = model.initial_state();
        let planner = SacbpPlanner::new(params).unwrap();
        let run = |n: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
            pool.install(|| planner.update(&model, &x0, &nominal, 4).unwrap().1)
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a, b);
    }
}
