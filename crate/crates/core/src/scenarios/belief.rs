use nalgebra::{DMatrix, DVector};

use crate::dynamics::{BeliefStructure, ControlBox, ScenarioModel};
use crate::error::{invalid, Result};
use crate::filters::{
    ekf_update, ekf_update_jvp, ekf_update_vjp, moment_rhs, moment_rhs_jvp, moment_rhs_vjp,
    ContinuousSystem, GaussianBelief, MeasurementModel,
};
use crate::linalg::{sample_gaussian, unvec};
use crate::rng::SimRng;

/// Gaussian belief dynamics of a continuous-discrete EKF over `sys`, with the expected
/// quadratic cost `½μᵀC_xμ + ½tr(C_xΣ) + ½uᵀC_u u` and the same cost without the control term
/// at the end of the horizon.
///
/// The packed state is `μ ⊕ vec(Σ)`. Flow and jump derivatives are analytic reverse- and
/// forward-mode products.
pub struct EkfBeliefModel<S> {
    sys: S,
    cx: DMatrix<f64>,
    cu: DVector<f64>,
    bounds: ControlBox,
}

impl<S: ContinuousSystem + MeasurementModel> EkfBeliefModel<S> {
    pub fn new(sys: S, cx: DMatrix<f64>, cu: DVector<f64>, bounds: ControlBox) -> Result<Self> {
        let n = sys.state_dim();
        if cx.nrows() != n || cx.ncols() != n {
            return Err(invalid("state cost matrix has the wrong shape"));
        }
        if cu.len() != sys.control_dim() || bounds.dim() != cu.len() {
            return Err(invalid("control cost or box has the wrong dimension"));
        }
        if cu.iter().any(|c| !(*c > 0.0)) {
            return Err(invalid("control cost weights must be positive"));
        }
        Ok(Self { sys, cx, cu, bounds })
    }

    pub fn system(&self) -> &S {
        &self.sys
    }

    pub fn state_cost_matrix(&self) -> &DMatrix<f64> {
        &self.cx
    }

    pub fn latent_dim(&self) -> usize {
        self.sys.state_dim()
    }

    pub fn unpack(&self, x: &DVector<f64>) -> GaussianBelief {
        GaussianBelief::unpack(x.as_slice(), self.latent_dim())
    }

    fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.latent_dim();
        (x.rows(0, n).into_owned(), unvec(&x.as_slice()[n..], n))
    }

    fn join(&self, m: DVector<f64>, c: DMatrix<f64>) -> DVector<f64> {
        GaussianBelief { mean: m, cov: c }.pack()
    }

    fn quadratic(&self, x: &DVector<f64>) -> f64 {
        let (m, c) = self.split(x);
        0.5 * (m.dot(&(&self.cx * &m)) + (&self.cx * c).trace())
    }

    fn quadratic_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let (m, _) = self.split(x);
        self.join(&self.cx * m, self.cx.transpose() * 0.5)
    }
}

impl<S: ContinuousSystem + MeasurementModel> ScenarioModel for EkfBeliefModel<S> {
    fn structure(&self) -> BeliefStructure {
        BeliefStructure::General
    }

    fn state_dim(&self) -> usize {
        GaussianBelief::packed_len(self.latent_dim())
    }

    fn control_dim(&self) -> usize {
        self.cu.len()
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let (m, c) = self.split(x);
        let a = self.sys.drift_jacobian(&m);
        let ac = &a * &c;
        self.join(self.sys.drift(&m), &ac + ac.transpose() + self.sys.process_noise())
    }

    fn control_coefficient(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.latent_dim();
        let (m, c) = self.split(x);
        let b = self.sys.control_matrix(&m);
        let mut h = DMatrix::zeros(self.state_dim(), self.control_dim());
        for l in 0..self.control_dim() {
            let al = self.sys.control_column_jacobian(&m, l);
            let ac = &al * &c;
            let dc = &ac + ac.transpose();
            h.view_mut((0, l), (n, 1)).copy_from(&b.column(l));
            h.view_mut((n, l), (n * n, 1)).copy_from_slice(dc.as_slice());
        }
        h
    }

    fn flow(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (m, c) = self.split(x);
        let (dm, dc) = moment_rhs(&self.sys, &m, &c, u);
        self.join(dm, dc)
    }

    fn flow_vjp(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let (m, c) = self.split(x);
        let (lm, lc) = self.split(lambda);
        let (bm, bc) = moment_rhs_vjp(&self.sys, &m, &c, u, &lm, &lc);
        Ok(self.join(bm, bc))
    }

    fn flow_jvp(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        psi: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let (m, c) = self.split(x);
        let (dm, dc) = self.split(psi);
        let (om, oc) = moment_rhs_jvp(&self.sys, &m, &c, u, &dm, &dc);
        Ok(self.join(om, oc))
    }

    fn flow_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.state_dim();
        let mut jac = DMatrix::zeros(n, n);
        for i in 0..n {
            let e = DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
            jac.set_column(i, &self.flow_jvp(x, u, &e)?);
        }
        Ok(jac)
    }

    fn jump(&self, x_pre: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        let b = self.unpack(x_pre);
        Ok(ekf_update(&b, y, &self.sys)?.pack())
    }

    fn jump_vjp(
        &self,
        x_pre: &DVector<f64>,
        y: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let (m, c) = self.split(x_pre);
        let (lm, lc) = self.split(lambda);
        let (bm, bc) = ekf_update_vjp(&self.sys, &m, &c, y, &lm, &lc)?;
        Ok(self.join(bm, bc))
    }

    fn jump_jvp(
        &self,
        x_pre: &DVector<f64>,
        y: &DVector<f64>,
        psi: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let (m, c) = self.split(x_pre);
        let (dm, dc) = self.split(psi);
        let (om, oc) = ekf_update_jvp(&self.sys, &m, &c, y, &dm, &dc)?;
        Ok(self.join(om, oc))
    }

    fn state_cost(&self, x: &DVector<f64>) -> f64 {
        self.quadratic(x)
    }

    fn state_cost_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.quadratic_gradient(x)
    }

    fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        self.quadratic(x)
    }

    fn terminal_cost_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.quadratic_gradient(x)
    }

    fn control_cost_diag(&self) -> &DVector<f64> {
        &self.cu
    }

    fn control_box(&self) -> &ControlBox {
        &self.bounds
    }

    fn sample_observation(&self, x_pre: &DVector<f64>, rng: &mut SimRng) -> DVector<f64> {
        let b = self.unpack(x_pre);
        let latent = sample_gaussian(&b.mean, &b.cov, rng);
        let r = self.sys.measurement_noise();
        self.sys.measure(&latent) + sample_gaussian(&DVector::zeros(r.nrows()), r, rng)
    }

    fn predicted_observation(&self, x_pre: &DVector<f64>) -> DVector<f64> {
        self.sys.measure(&x_pre.rows(0, self.latent_dim()).into_owned())
    }
}
