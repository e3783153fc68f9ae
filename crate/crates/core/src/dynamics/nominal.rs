use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use super::schedule::{perturbation_cells, ControlBox, ControlSchedule};
use crate::adjoint::jacobian;
use crate::error::{invalid, Result};

/// Closed-loop nominal control `u = π(x)` over the augmented state.
pub trait Policy: Send + Sync {
    fn control(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `(∂π/∂x)ᵀ w`.
    fn control_vjp(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        match jacobian(|z| self.control(z), x) {
            Ok(jac) => jac.transpose() * w,
            Err(_) => DVector::from_element(x.len(), f64::NAN),
        }
    }

    /// `(∂π/∂x) psi`.
    fn control_jvp(&self, x: &DVector<f64>, psi: &DVector<f64>) -> DVector<f64> {
        match jacobian(|z| self.control(z), x) {
            Ok(jac) => jac * psi,
            Err(_) => DVector::from_element(self.control(x).len(), f64::NAN),
        }
    }
}

/// Constant-output policy, mostly useful for tests.
#[derive(Clone, Debug)]
pub struct ConstantPolicy(pub DVector<f64>);

impl Policy for ConstantPolicy {
    fn control(&self, _x: &DVector<f64>) -> DVector<f64> {
        self.0.clone()
    }

    fn control_vjp(&self, x: &DVector<f64>, _w: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }

    fn control_jvp(&self, _x: &DVector<f64>, _psi: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.0.len())
    }
}

/// A closed-loop policy on a control grid, with some cells pinned to fixed values
/// (committed controls and inserted perturbations).
#[derive(Clone)]
pub struct PolicySchedule {
    policy: Arc<dyn Policy>,
    t0: f64,
    dt: f64,
    pinned: Vec<Option<DVector<f64>>>,
    bounds: ControlBox,
}

impl fmt::Debug for PolicySchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PolicySchedule")
            .field("t0", &self.t0)
            .field("dt", &self.dt)
            .field("n_cells", &self.pinned.len())
            .field("pinned", &self.pinned.iter().filter(|p| p.is_some()).count())
            .finish()
    }
}

impl PolicySchedule {
    pub fn new(
        policy: Arc<dyn Policy>,
        t0: f64,
        dt: f64,
        n_cells: usize,
        bounds: ControlBox,
    ) -> Result<Self> {
        if !(dt > 0.0) || n_cells == 0 {
            return Err(invalid("policy schedule needs dt > 0 and at least one cell"));
        }
        Ok(Self { policy, t0, dt, pinned: vec![None; n_cells], bounds })
    }

    pub fn policy(&self) -> &Arc<dyn Policy> {
        &self.policy
    }

    pub fn pinned(&self, cell: usize) -> Option<&DVector<f64>> {
        self.pinned[cell].as_ref()
    }

    pub fn pin(&mut self, cell: usize, u: DVector<f64>) -> Result<()> {
        self.bounds.check(&u)?;
        self.pinned[cell] = Some(u);
        Ok(())
    }
}

/// Nominal control for the planner: an open-loop schedule or a closed-loop policy.
#[derive(Clone, Debug)]
pub enum Nominal {
    OpenLoop(ControlSchedule),
    ClosedLoop(PolicySchedule),
}

/// Control applied in one cell and whether it came from the feedback policy.
#[derive(Clone, Debug)]
pub struct CellControl {
    pub u: DVector<f64>,
    pub feedback: bool,
}

impl Nominal {
    pub fn t0(&self) -> f64 {
        match self {
            Nominal::OpenLoop(s) => s.t0(),
            Nominal::ClosedLoop(p) => p.t0,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            Nominal::OpenLoop(s) => s.dt(),
            Nominal::ClosedLoop(p) => p.dt,
        }
    }

    pub fn n_cells(&self) -> usize {
        match self {
            Nominal::OpenLoop(s) => s.len(),
            Nominal::ClosedLoop(p) => p.pinned.len(),
        }
    }

    pub fn bounds(&self) -> &ControlBox {
        match self {
            Nominal::OpenLoop(s) => s.bounds(),
            Nominal::ClosedLoop(p) => &p.bounds,
        }
    }

    pub fn policy(&self) -> Option<&Arc<dyn Policy>> {
        match self {
            Nominal::OpenLoop(_) => None,
            Nominal::ClosedLoop(p) => Some(&p.policy),
        }
    }

    pub fn is_closed_loop(&self) -> bool {
        matches!(self, Nominal::ClosedLoop(_))
    }

    /// Control for grid cell `cell` given the state at the start of that cell.
    pub fn control(&self, cell: usize, x: &DVector<f64>) -> CellControl {
        match self {
            Nominal::OpenLoop(s) => CellControl { u: s.value(cell).clone(), feedback: false },
            Nominal::ClosedLoop(p) => match &p.pinned[cell] {
                Some(u) => CellControl { u: u.clone(), feedback: false },
                None => CellControl { u: p.policy.control(x), feedback: true },
            },
        }
    }

    /// Fixed (state-independent) value of a cell, if it has one.
    pub fn fixed_value(&self, cell: usize) -> Option<&DVector<f64>> {
        match self {
            Nominal::OpenLoop(s) => Some(s.value(cell)),
            Nominal::ClosedLoop(p) => p.pinned[cell].as_ref(),
        }
    }

    pub fn cell_index(&self, t: f64) -> Result<usize> {
        match self {
            Nominal::OpenLoop(s) => s.cell_index(t),
            Nominal::ClosedLoop(p) => {
                let probe = ControlSchedule::zeros(p.t0, p.dt, p.pinned.len(), p.bounds.clone())?;
                probe.cell_index(t)
            }
        }
    }

    /// Holds `v` on `(tau - eps, tau]`; policy cells in that window become pinned.
    pub fn perturbed(&self, tau: f64, v: &DVector<f64>, eps: f64) -> Result<Nominal> {
        match self {
            Nominal::OpenLoop(s) => Ok(Nominal::OpenLoop(s.perturbed(tau, v, eps)?)),
            Nominal::ClosedLoop(p) => {
                p.bounds.check(v)?;
                let cells = perturbation_cells(p.t0, p.dt, p.pinned.len(), tau, eps)?;
                let mut out = p.clone();
                for j in cells {
                    out.pinned[j] = Some(v.clone());
                }
                Ok(Nominal::ClosedLoop(out))
            }
        }
    }

    /// A nominal starting at `t0` whose first `n_commit` cells replay the cells of `previous`
    /// covering the same times, and which otherwise follows `self`.
    pub fn with_committed_prefix(&self, previous: &Nominal, n_commit: usize) -> Result<Nominal> {
        let mut out = self.clone();
        let offset = ((self.t0() - previous.t0()) / self.dt()).round();
        if offset < 0.0 {
            return Err(invalid("previous plan starts after the new nominal"));
        }
        let offset = offset as usize;
        for j in 0..n_commit.min(self.n_cells()) {
            let src = offset + j;
            if src >= previous.n_cells() {
                break;
            }
            let fixed = previous.fixed_value(src).cloned();
            match (&mut out, fixed) {
                (Nominal::OpenLoop(s), Some(u)) => s.set_cell(j, u),
                (Nominal::ClosedLoop(p), Some(u)) => p.pinned[j] = Some(u),
                (Nominal::ClosedLoop(p), None) => p.pinned[j] = None,
                (Nominal::OpenLoop(_), None) => {}
            }
        }
        Ok(out)
    }
}
