use nalgebra::DVector;

use crate::adjoint::{adjoint_backward, cost_variation_adjoint};
use crate::dynamics::{simulate_hybrid, simulate_nominal, total_cost, Nominal, ObservationSource, ScenarioModel, TimeGrid};
use crate::error::{invalid, Result};
use crate::rng::derive_seed;

/// Finite-difference check of the mode insertion gradient against the costate formula.
#[derive(Clone, Debug)]
pub struct FdReport {
    pub eps: Vec<f64>,
    /// `(E[J(u^ε)] - E[J(u)]) / ε` per entry of `eps`.
    pub fd_mean: Vec<f64>,
    pub fd_stderr: Vec<f64>,
    /// Costate-based `E[ν]` over the same samples.
    pub nu_mean: f64,
    pub nu_stderr: f64,
    /// Standard error of the per-sample difference `FD_i - ν_i`.
    pub paired_stderr: Vec<f64>,
    pub n_samples: usize,
}

impl FdReport {
    /// `sqrt(se_fd² + se_ν²)` at entry `i`.
    pub fn pooled_stderr(&self, i: usize) -> f64 {
        (self.fd_stderr[i].powi(2) + self.nu_stderr.powi(2)).sqrt()
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// For each sample an observation sequence is drawn under the nominal and replayed for every
/// perturbed rollout, so the nominal and perturbed costs share their randomness. Each `ε` must
/// be a whole number of control steps.
pub fn mode_insertion_gradient_fd(
    model: &dyn ScenarioModel,
    nominal: &Nominal,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    tau: f64,
    v: &DVector<f64>,
    eps_list: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<FdReport> {
    if n_mc == 0 || eps_list.is_empty() {
        return Err(invalid("need at least one sample and one perturbation length"));
    }
    if eps_list.iter().any(|&e| !(e > 0.0) || e >= tau - nominal.t0()) {
        return Err(invalid("every perturbation length must lie in (0, τ - t0)"));
    }
    let perturbed: Vec<Nominal> = eps_list
        .iter()
        .map(|&e| nominal.perturbed(tau, v, e))
        .collect::<Result<_>>()?;
    let mut nus = Vec::with_capacity(n_mc);
    let mut fds = vec![Vec::with_capacity(n_mc); eps_list.len()];
    let mut diffs = vec![Vec::with_capacity(n_mc); eps_list.len()];
    for i in 0..n_mc {
        let traj = simulate_nominal(model, x0, nominal, grid, derive_seed(seed, 0, i as u64))?;
        let base = total_cost(&traj, model);
        let adj = adjoint_backward(&traj, nominal, model)?;
        let nu = cost_variation_adjoint(&adj, &traj, model, tau, v)?;
        nus.push(nu);
        for (e, pert) in perturbed.iter().enumerate() {
            let t = simulate_hybrid(model, x0, pert, grid, ObservationSource::Replay(&traj.observations))?;
            let fd = (total_cost(&t, model) - base) / eps_list[e];
            fds[e].push(fd);
            diffs[e].push(fd - nu);
        }
    }
    let (nu_mean, nu_stderr) = mean_and_stderr(&nus);
    let fd_stats: Vec<_> = fds.iter().map(|f| mean_and_stderr(f)).collect();
    Ok(FdReport {
        eps: eps_list.to_vec(),
        fd_mean: fd_stats.iter().map(|s| s.0).collect(),
        fd_stderr: fd_stats.iter().map(|s| s.1).collect(),
        nu_mean,
        nu_stderr,
        paired_stderr: diffs.iter().map(|d| mean_and_stderr(d).1).collect(),
        n_samples: n_mc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ControlSchedule;
    use crate::scenarios::{ScalarTargetConfig, ScalarTargetModel};

    #[test]
    fn nominal_insertion_has_zero_gradient() {
        let model = ScalarTargetModel::new(ScalarTargetConfig::default()).unwrap();
        let grid = TimeGrid::new(0.01, 0.5, 1.0).unwrap();
        let u0 = DVector::from_element(1, 0.4);
        let nominal = Nominal::OpenLoop(
            ControlSchedule::constant(0.0, 0.01, 100, u0.clone(), model.control_box().clone()).unwrap(),
        );
        let r = mode_insertion_gradient_fd(&model, &nominal, &model.initial_state(), &grid, 0.7, &u0, &[0.02], 16, 3)
            .unwrap();
        assert_eq!(r.fd_mean[0], 0.0);
        assert!(r.nu_mean.abs() < 1e-15);
    }

    #[test]
    fn first_order_agreement_on_scalar_fixture() {
        let model = ScalarTargetModel::new(ScalarTargetConfig::default()).unwrap();
        let grid = TimeGrid::new(0.001, 0.5, 1.0).unwrap();
        let nominal = Nominal::OpenLoop(ControlSchedule::zeros(0.0, 0.001, 1000, model.control_box().clone()).unwrap());
        let v = DVector::from_element(1, 1.5);
        let r = mode_insertion_gradient_fd(&model, &nominal, &model.initial_state(), &grid, 0.7, &v, &[0.004, 0.002], 8, 1)
            .unwrap();
        let e1 = (r.fd_mean[0] - r.nu_mean).abs();
        let e2 = (r.fd_mean[1] - r.nu_mean).abs();
        assert!(e2 < e1);
        assert!(e1 < 0.05 * r.nu_mean.abs());
    }
}
