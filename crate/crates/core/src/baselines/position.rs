use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlBox, Policy};
use crate::filters::GaussianBelief;

/// PD gains on the estimated pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PositionGains {
    pub kp: f64,
    pub kd: f64,
    pub k_theta: f64,
    pub k_omega: f64,
}

impl Default for PositionGains {
    fn default() -> Self {
        Self { kp: 2.0, kd: 2.5, k_theta: 1.0, k_omega: 1.0 }
    }
}

/// PD law toward the origin on the belief mean: `F = -k_p r̂ - k_d v̂` and
/// `M = -k_θ θ̂ - k_ω ω̂ - (R(θ̂)â) × F`, so that the commanded torque cancels the estimated
/// moment of the force. Each channel is clamped to the box.
#[derive(Clone, Debug)]
pub struct PositionController {
    gains: PositionGains,
    bounds: ControlBox,
}

const LATENT: usize = 11;

impl PositionController {
    pub fn new(gains: PositionGains, bounds: ControlBox) -> Self {
        Self { gains, bounds }
    }

    pub fn gains(&self) -> &PositionGains {
        &self.gains
    }

    /// Unclamped force and torque with their Jacobian with respect to the latent mean, applying
    /// the force clamp before the torque coupling.
    fn law(&self, m: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let g = &self.gains;
        let (s, c) = m[2].sin_cos();
        let (ax, ay) = (c * m[8] - s * m[9], s * m[8] + c * m[9]);
        let mut jac = DMatrix::zeros(3, LATENT);
        let mut u = DVector::zeros(3);
        for (k, vel) in [(0usize, 3usize), (1, 4)] {
            let raw = -g.kp * m[k] - g.kd * m[vel];
            let lo = self.bounds.lo()[k];
            let hi = self.bounds.hi()[k];
            u[k] = raw.clamp(lo, hi);
            if raw > lo && raw < hi {
                jac[(k, k)] = -g.kp;
                jac[(k, vel)] = -g.kd;
            }
        }
        let (fx, fy) = (u[0], u[1]);
        u[2] = -g.k_theta * m[2] - g.k_omega * m[5] - (ax * fy - ay * fx);
        jac[(2, 2)] = -g.k_theta - (-ay * fy - ax * fx);
        jac[(2, 5)] = -g.k_omega;
        jac[(2, 8)] = -(c * fy - s * fx);
        jac[(2, 9)] = -(-s * fy - c * fx);
        for i in 0..LATENT {
            let through_force = ay * jac[(0, i)] - ax * jac[(1, i)];
            jac[(2, i)] += through_force;
        }
        (u, jac)
    }

    fn clamped(&self, m: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let (mut u, mut jac) = self.law(m);
        let lo = self.bounds.lo()[2];
        let hi = self.bounds.hi()[2];
        if !(u[2] > lo && u[2] < hi) {
            jac.row_mut(2).fill(0.0);
        }
        u[2] = u[2].clamp(lo, hi);
        (u, jac)
    }
}

/// Position-controller output for a belief over the manipulation latent state.
pub fn position_controller(belief: &GaussianBelief, gains: &PositionGains, bounds: &ControlBox) -> DVector<f64> {
    PositionController::new(gains.clone(), bounds.clone()).clamped(belief.mean.as_slice()).0
}

impl Policy for PositionController {
    fn control(&self, x: &DVector<f64>) -> DVector<f64> {
        self.clamped(&x.as_slice()[..LATENT]).0
    }

    fn control_vjp(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let (_, jac) = self.clamped(&x.as_slice()[..LATENT]);
        let mut out = DVector::zeros(x.len());
        out.rows_mut(0, LATENT).copy_from(&(jac.transpose() * w));
        out
    }

    fn control_jvp(&self, x: &DVector<f64>, psi: &DVector<f64>) -> DVector<f64> {
        let (_, jac) = self.clamped(&x.as_slice()[..LATENT]);
        jac * psi.rows(0, LATENT)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::jacobian;

    fn bounds() -> ControlBox {
        ControlBox::new(DVector::from_vec(vec![-5.0, -5.0, -2.0]), DVector::from_vec(vec![5.0, 5.0, 2.0])).unwrap()
    }

    fn belief(mean: Vec<f64>) -> GaussianBelief {
        GaussianBelief { mean: DVector::from_vec(mean), cov: DMatrix::identity(LATENT, LATENT) }
    }

    #[test]
    fn origin_at_rest_gives_zero() {
        let mut m = vec![0.0; LATENT];
        m[8] = 0.3;
        let u = position_controller(&belief(m), &PositionGains::default(), &bounds());
        assert_eq!(u, DVector::zeros(3));
    }

    #[test]
    fn x_offset_gives_force_along_minus_x() {
        let mut m = vec![0.0; LATENT];
        m[0] = 0.5;
        let u = position_controller(&belief(m), &PositionGains::default(), &bounds());
        assert!(u[0] < 0.0);
        assert_eq!(u[1], 0.0);
    }

    #[test]
    fn doubling_gains_doubles_unclamped_output() {
        let m = vec![0.2, -0.1, 0.05, 0.1, 0.0, -0.05, 0.0, 0.0, 0.3, 0.2, 0.0];
        let g = PositionGains::default();
        let g2 = PositionGains { kp: 2.0 * g.kp, kd: 2.0 * g.kd, k_theta: 2.0 * g.k_theta, k_omega: 2.0 * g.k_omega };
        let u1 = position_controller(&belief(m.clone()), &g, &bounds());
        let u2 = position_controller(&belief(m), &g2, &bounds());
        assert!((u2 - u1 * 2.0).amax() < 1e-12);
    }

    #[test]
    fn output_stays_in_box() {
        let m = vec![30.0, -40.0, 3.0, 5.0, 1.0, 2.0, 0.0, 0.0, 1.0, -2.0, 0.0];
        let u = position_controller(&belief(m), &PositionGains::default(), &bounds());
        assert!(bounds().contains(&u));
    }

    #[test]
    fn vjp_matches_numeric_jacobian() {
        let ctl = PositionController::new(PositionGains::default(), bounds());
        let x = DVector::from_vec(vec![0.4, -0.3, 0.2, 0.1, 0.2, -0.1, 0.5, -0.2, 0.3, 0.2, 0.1, 7.0]);
        let jac = jacobian(|z| ctl.control(z), &x).unwrap();
        let w = DVector::from_vec(vec![0.3, -0.7, 1.1]);
        assert!((ctl.control_vjp(&x, &w) - jac.transpose() * &w).amax() < 1e-7);
        let psi = DVector::from_fn(12, |i, _| (i as f64 * 0.7).sin());
        assert!((ctl.control_jvp(&x, &psi) - jac * psi).amax() < 1e-7);
    }
}
