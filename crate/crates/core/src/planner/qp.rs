use nalgebra::DVector;

use crate::dynamics::ControlBox;
use crate::error::{invalid, Result};

/// Coefficients of the expected cost variation `ν(v) = ½vᵀC_u v + wᵀv + κ`.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationCoefficients {
    pub w: DVector<f64>,
    pub kappa: f64,
}

impl VariationCoefficients {
    /// `w = Hᵀρ`, `κ = -wᵀu - ½uᵀC_u u` for one costate, control coefficient and nominal control.
    pub fn from_costate(rho_h: DVector<f64>, u_nom: &DVector<f64>, c_diag: &DVector<f64>) -> Self {
        let kappa = -rho_h.dot(u_nom) - 0.5 * quad(u_nom, c_diag);
        Self { w: rho_h, kappa }
    }

    pub fn value(&self, v: &DVector<f64>, c_diag: &DVector<f64>) -> f64 {
        0.5 * quad(v, c_diag) + self.w.dot(v) + self.kappa
    }

    /// Ordered average of per-sample coefficients.
    pub fn mean(samples: &[VariationCoefficients]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| invalid("no samples to average"))?;
        let mut w = DVector::zeros(first.w.len());
        let mut kappa = 0.0;
        for s in samples {
            w += &s.w;
            kappa += s.kappa;
        }
        let n = samples.len() as f64;
        Ok(Self { w: w / n, kappa: kappa / n })
    }
}

fn quad(v: &DVector<f64>, c: &DVector<f64>) -> f64 {
    v.iter().zip(c.iter()).map(|(x, ci)| ci * x * x).sum()
}

/// `½vᵀC_u v + ρ̄ᵀH(v - u) - ½uᵀC_u u` for a deterministic nominal state.
pub fn expected_cost_variation(
    v: &DVector<f64>,
    mean_rho_h: &DVector<f64>,
    u_nom: &DVector<f64>,
    c_diag: &DVector<f64>,
) -> f64 {
    VariationCoefficients::from_costate(mean_rho_h.clone(), u_nom, c_diag).value(v, c_diag)
}

/// Minimizer of `½vᵀ diag(c) v + wᵀv` over the box: the unconstrained solution `-w/c` clamped
/// per axis, exact because the Hessian is diagonal.
pub fn minimize_box_qp(w: &DVector<f64>, c_diag: &DVector<f64>, bounds: &ControlBox) -> DVector<f64> {
    let unconstrained = DVector::from_fn(w.len(), |i, _| -w[i] / c_diag[i]);
    bounds.clamp(&unconstrained)
}

/// Optimal insertion at one candidate time.
#[derive(Clone, Debug, PartialEq)]
pub struct TauCandidate {
    pub tau: f64,
    pub nu: f64,
    pub v: DVector<f64>,
}

/// Outcome of the per-update perturbation search.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationResult {
    pub tau_star: f64,
    pub v_star: DVector<f64>,
    pub nu_star: f64,
    pub per_tau_curve: Vec<TauCandidate>,
    /// False when no candidate lowers the expected cost, in which case the nominal is kept.
    pub applied: bool,
    pub n_effective: usize,
}

/// Minimizes `ν` at every candidate time and picks the smallest value, earliest time first on
/// ties. A non-negative optimum means no insertion helps: the result is marked as not applied
/// with `ν* = 0`.
pub fn optimize_perturbation(
    candidates: &[(f64, VariationCoefficients)],
    c_diag: &DVector<f64>,
    bounds: &ControlBox,
) -> Result<PerturbationResult> {
    if candidates.is_empty() {
        return Err(invalid("empty insertion-time grid"));
    }
    let mut curve = Vec::with_capacity(candidates.len());
    let mut best = 0;
    for (i, (tau, coeffs)) in candidates.iter().enumerate() {
        let v = minimize_box_qp(&coeffs.w, c_diag, bounds);
        let nu = coeffs.value(&v, c_diag);
        if !nu.is_finite() {
            return Err(crate::error::SacbpError::NonFinite("cost variation"));
        }
        curve.push(TauCandidate { tau: *tau, nu, v });
        if nu < curve[best].nu {
            best = i;
        }
    }
    let chosen = curve[best].clone();
    let applied = chosen.nu < 0.0;
    Ok(PerturbationResult {
        tau_star: chosen.tau,
        v_star: chosen.v,
        nu_star: if applied { chosen.nu } else { 0.0 },
        per_tau_curve: curve,
        applied,
        n_effective: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> ControlBox {
        ControlBox::symmetric(2, 1.0).unwrap()
    }

    #[test]
    fn nominal_control_gives_zero() {
        let c = DVector::from_vec(vec![1.0, 3.0]);
        let u = DVector::from_vec(vec![0.3, -0.2]);
        let w = DVector::from_vec(vec![2.0, -3.0]);
        assert_eq!(expected_cost_variation(&u, &w, &u, &c), 0.0);
    }

    #[test]
    fn hand_evaluated_value() {
        let c = DVector::from_vec(vec![1.0, 1.0]);
        let v = DVector::from_vec(vec![-1.0, 1.0]);
        let w = DVector::from_vec(vec![2.0, -3.0]);
        let nu = expected_cost_variation(&v, &w, &DVector::zeros(2), &c);
        assert!((nu + 4.0).abs() < 1e-15);
    }

    #[test]
    fn zero_costate_minimizer() {
        let c = DVector::from_vec(vec![2.0, 0.5]);
        let u = DVector::from_vec(vec![0.4, -0.6]);
        let coeffs = VariationCoefficients::from_costate(DVector::zeros(2), &u, &c);
        let v = minimize_box_qp(&coeffs.w, &c, &unit_box());
        assert_eq!(v, DVector::zeros(2));
        assert!((coeffs.value(&v, &c) + 0.5 * (2.0 * 0.16 + 0.5 * 0.36)).abs() < 1e-15);
    }

    #[test]
    fn saturated_and_interior_axes() {
        let c = DVector::from_vec(vec![1.0, 100.0]);
        let w = DVector::from_vec(vec![2.0, -3.0]);
        let v = minimize_box_qp(&w, &c, &unit_box());
        assert_eq!(v[0], -1.0);
        assert!((v[1] - 0.03).abs() < 1e-15);
    }

    #[test]
    fn constant_curve_ties_to_earliest() {
        let c = DVector::from_vec(vec![1.0, 1.0]);
        let coeffs = VariationCoefficients::from_costate(DVector::from_vec(vec![2.0, -3.0]), &DVector::zeros(2), &c);
        let cands: Vec<_> = (1..=4).map(|j| (j as f64 * 0.01, coeffs.clone())).collect();
        let r = optimize_perturbation(&cands, &c, &unit_box()).unwrap();
        assert_eq!(r.tau_star, 0.01);
        assert_eq!(r.v_star, DVector::from_vec(vec![-1.0, 1.0]));
        assert!((r.nu_star + 4.0).abs() < 1e-15);
        assert!(r.applied);
    }

    #[test]
    fn zero_costs_keep_nominal() {
        let c = DVector::from_vec(vec![1.0, 1.0]);
        let coeffs = VariationCoefficients::from_costate(DVector::zeros(2), &DVector::zeros(2), &c);
        let r = optimize_perturbation(&[(0.5, coeffs)], &c, &unit_box()).unwrap();
        assert!(!r.applied);
        assert_eq!(r.nu_star, 0.0);
    }
}
