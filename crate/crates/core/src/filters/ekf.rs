use nalgebra::{DMatrix, DVector};

use super::gaussian::GaussianBelief;
use crate::adjoint::{fd_step, jacobian};
use crate::error::{invalid, Result, SacbpError};
use crate::linalg::{frob, repair_pd, symmetrize, symmetrized};

/// Control-affine continuous-time system `ẋ = f(x) + B(x) u + w`, `w ~ N(0, Q)`.
pub trait ContinuousSystem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    fn control_matrix(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn process_noise(&self) -> &DMatrix<f64>;

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + self.control_matrix(x) * u
    }

    fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        jacobian(|z| self.drift(z), x)
            .unwrap_or_else(|_| DMatrix::from_element(x.len(), x.len(), f64::NAN))
    }

    /// `∂(B(x) e_l)/∂x`.
    fn control_column_jacobian(&self, x: &DVector<f64>, l: usize) -> DMatrix<f64> {
        jacobian(|z| self.control_matrix(z).column(l).into_owned(), x)
            .unwrap_or_else(|_| DMatrix::from_element(x.len(), x.len(), f64::NAN))
    }

    /// `A = ∂(f + B u)/∂x`.
    fn state_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let mut a = self.drift_jacobian(x);
        for (l, ul) in u.iter().enumerate() {
            if *ul != 0.0 {
                a += self.control_column_jacobian(x, l) * *ul;
            }
        }
        a
    }
}

/// Discrete measurement `y = h(x) + v`, `v ~ N(0, R)`.
pub trait MeasurementModel: Send + Sync {
    fn measurement_dim(&self) -> usize;
    fn measure(&self, x: &DVector<f64>) -> DVector<f64>;
    fn measurement_noise(&self) -> &DMatrix<f64>;

    fn measurement_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        jacobian(|z| self.measure(z), x).unwrap_or_else(|_| {
            DMatrix::from_element(self.measurement_dim(), x.len(), f64::NAN)
        })
    }
}

/// Right-hand side of the moment equations `μ̇ = f(μ, u)`, `Σ̇ = AΣ + ΣAᵀ + Q`.
pub fn moment_rhs<S: ContinuousSystem + ?Sized>(
    sys: &S,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    u: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let a = sys.state_jacobian(mean, u);
    let ac = &a * cov;
    let dcov = &ac + ac.transpose() + sys.process_noise();
    (sys.dynamics(mean, u), dcov)
}

/// One explicit-Euler step of the continuous prediction equations; the result is symmetrized.
pub fn ekf_predict_continuous<S: ContinuousSystem + ?Sized>(
    belief: &GaussianBelief,
    u: &DVector<f64>,
    sys: &S,
    dt: f64,
) -> Result<GaussianBelief> {
    let (dm, dc) = moment_rhs(sys, &belief.mean, &belief.cov, u);
    let mean = &belief.mean + dm * dt;
    let mut cov = &belief.cov + dc * dt;
    symmetrize(&mut cov);
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(SacbpError::NonFinite("EKF prediction"));
    }
    GaussianBelief::new(mean, cov)
}

/// Discrete linear predict `μ ← F μ + G u`, `Σ ← F Σ Fᵀ + Q`.
pub fn ekf_predict_discrete(
    belief: &GaussianBelief,
    f: &DMatrix<f64>,
    g: &DMatrix<f64>,
    u: &DVector<f64>,
    q: &DMatrix<f64>,
) -> Result<GaussianBelief> {
    let mean = f * &belief.mean + g * u;
    let mut cov = f * &belief.cov * f.transpose() + q;
    symmetrize(&mut cov);
    GaussianBelief::new(mean, cov)
}

struct UpdateParts {
    p: DMatrix<f64>,
    c: DMatrix<f64>,
    s_inv: DMatrix<f64>,
    w: DMatrix<f64>,
    k: DMatrix<f64>,
    n: DMatrix<f64>,
    r: DVector<f64>,
}

fn update_parts<M: MeasurementModel + ?Sized>(
    meas: &M,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<UpdateParts> {
    if y.len() != meas.measurement_dim() {
        return Err(invalid("observation has the wrong dimension"));
    }
    let p = symmetrized(cov);
    let c = meas.measurement_jacobian(mean);
    let n = &c * &p;
    let mut s = &n * c.transpose() + meas.measurement_noise();
    symmetrize(&mut s);
    let s_inv = s.cholesky().ok_or(SacbpError::SingularInnovation)?.inverse();
    let w = c.transpose() * &s_inv;
    let k = &p * &w;
    let r = y - meas.measure(mean);
    Ok(UpdateParts { p, c, s_inv, w, k, n, r })
}

/// EKF innovation update without PD repair: `K = PCᵀ(CPCᵀ + R)⁻¹`,
/// `μ⁺ = μ + K(y - h(μ))`, `Σ⁺ = P - KCP` with `P = sym(Σ)`.
///
/// The covariance is evaluated in Joseph form `(I - KC)P(I - KC)ᵀ + KRKᵀ`, which equals
/// `P - KCP` for this gain but does not lose definiteness to cancellation.
pub fn ekf_update_raw<M: MeasurementModel + ?Sized>(
    meas: &M,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<GaussianBelief> {
    let parts = update_parts(meas, mean, cov, y)?;
    let post_mean = mean + &parts.k * &parts.r;
    let n = parts.p.nrows();
    let a = DMatrix::identity(n, n) - &parts.k * &parts.c;
    let mut post_cov = &a * &parts.p * a.transpose() + &parts.k * meas.measurement_noise() * parts.k.transpose();
    symmetrize(&mut post_cov);
    GaussianBelief::new(post_mean, post_cov)
}

/// EKF innovation update; the posterior covariance is symmetrized and jitter-repaired.
pub fn ekf_update<M: MeasurementModel + ?Sized>(
    belief: &GaussianBelief,
    y: &DVector<f64>,
    meas: &M,
) -> Result<GaussianBelief> {
    let post = ekf_update_raw(meas, &belief.mean, &belief.cov, y)?;
    let cov = repair_pd(post.cov)?;
    GaussianBelief::new(post.mean, cov)
}

/// Reverse-mode derivative of [`ekf_update_raw`]: given output cotangents `(λ_μ, Λ_Σ)` returns
/// the input cotangents `(μ̄, Σ̄)`.
pub fn ekf_update_vjp<M: MeasurementModel + ?Sized>(
    meas: &M,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    y: &DVector<f64>,
    lam_mean: &DVector<f64>,
    lam_cov: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let UpdateParts { p, c, s_inv, w, k, n, r } = update_parts(meas, mean, cov, y)?;
    let ls = symmetrized(lam_cov);

    let mut p_bar = ls.clone();
    let mut k_bar = -&ls * n.transpose() + lam_mean * r.transpose();
    let n_bar = -k.transpose() * &ls;
    let mut mean_bar = lam_mean.clone();
    let r_bar = k.transpose() * lam_mean;

    // N = C P
    let mut c_bar = &n_bar * p.transpose();
    p_bar += c.transpose() * &n_bar;
    // K = P W
    p_bar += &k_bar * w.transpose();
    let w_bar = p.transpose() * &k_bar;
    k_bar.fill(0.0);
    // W = Cᵀ S⁻¹
    c_bar += &s_inv * w_bar.transpose();
    let s_inv_bar = &c * &w_bar;
    let s_bar = -(s_inv.transpose() * s_inv_bar * s_inv.transpose());
    // S = C P Cᵀ + R
    c_bar += &s_bar * &c * p.transpose() + s_bar.transpose() * &c * &p;
    p_bar += c.transpose() * &s_bar * &c;
    // r = y - h(μ)
    mean_bar -= c.transpose() * r_bar;
    // C = C(μ)
    add_jacobian_contraction(meas, mean, &c_bar, &mut mean_bar);

    symmetrize(&mut p_bar);
    Ok((mean_bar, p_bar))
}

fn add_jacobian_contraction<M: MeasurementModel + ?Sized>(
    meas: &M,
    mean: &DVector<f64>,
    c_bar: &DMatrix<f64>,
    mean_bar: &mut DVector<f64>,
) {
    if c_bar.iter().all(|v| *v == 0.0) {
        return;
    }
    let mut probe = mean.clone();
    for i in 0..mean.len() {
        let h = fd_step(mean[i]);
        probe[i] = mean[i] + h;
        let plus = meas.measurement_jacobian(&probe);
        probe[i] = mean[i] - h;
        let minus = meas.measurement_jacobian(&probe);
        probe[i] = mean[i];
        mean_bar[i] += frob(c_bar, &((plus - minus) / (2.0 * h)));
    }
}

/// Forward-mode derivative of [`ekf_update_raw`] along `(dμ, dΣ)`.
pub fn ekf_update_jvp<M: MeasurementModel + ?Sized>(
    meas: &M,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    y: &DVector<f64>,
    d_mean: &DVector<f64>,
    d_cov: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let UpdateParts { p, c, s_inv, w, k, n, r } = update_parts(meas, mean, cov, y)?;
    let dp = symmetrized(d_cov);
    let dc = matrix_directional(|z| meas.measurement_jacobian(z), mean, d_mean);
    let dn = &dc * &p + &c * &dp;
    let ds = &dc * &p * c.transpose() + &c * &dp * c.transpose() + &c * &p * dc.transpose();
    let ds_inv = -(&s_inv * ds * &s_inv);
    let dw = dc.transpose() * &s_inv + c.transpose() * ds_inv;
    let dk = &dp * &w + &p * dw;
    let dr = -(&c * d_mean);
    let dmean = d_mean + &dk * &r + &k * dr;
    let mut dcov = &dp - &dk * &n - &k * dn;
    symmetrize(&mut dcov);
    Ok((dmean, dcov))
}

/// Central-difference directional derivative of a matrix-valued function.
pub(crate) fn matrix_directional<F>(f: F, x: &DVector<f64>, d: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let dn = d.norm();
    let base = f(x);
    if dn == 0.0 {
        return DMatrix::zeros(base.nrows(), base.ncols());
    }
    let h = (1e-6 * x.norm() / dn).max(1e-6 / dn);
    (f(&(x + d * h)) - f(&(x - d * h))) / (2.0 * h)
}

/// Reverse-mode derivative of [`moment_rhs`] with respect to `(μ, Σ)`.
pub fn moment_rhs_vjp<S: ContinuousSystem + ?Sized>(
    sys: &S,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    u: &DVector<f64>,
    lam_mean: &DVector<f64>,
    lam_cov: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let a = sys.state_jacobian(mean, u);
    let mut mean_bar = a.transpose() * lam_mean;
    let g = lam_cov * cov.transpose() + lam_cov.transpose() * cov;
    let mut probe = mean.clone();
    for i in 0..mean.len() {
        let h = fd_step(mean[i]);
        probe[i] = mean[i] + h;
        let plus = sys.state_jacobian(&probe, u);
        probe[i] = mean[i] - h;
        let minus = sys.state_jacobian(&probe, u);
        probe[i] = mean[i];
        mean_bar[i] += frob(&g, &((plus - minus) / (2.0 * h)));
    }
    let cov_bar = a.transpose() * lam_cov + lam_cov * &a;
    (mean_bar, cov_bar)
}

/// Forward-mode derivative of [`moment_rhs`] along `(dμ, dΣ)`.
pub fn moment_rhs_jvp<S: ContinuousSystem + ?Sized>(
    sys: &S,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    u: &DVector<f64>,
    d_mean: &DVector<f64>,
    d_cov: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let a = sys.state_jacobian(mean, u);
    let da = matrix_directional(|z| sys.state_jacobian(z, u), mean, d_mean);
    let t1 = &da * cov + &a * d_cov;
    (&a * d_mean, &t1 + t1.transpose())
}
