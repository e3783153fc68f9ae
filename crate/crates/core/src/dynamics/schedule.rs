use nalgebra::DVector;

use crate::error::{invalid, Result, SacbpError};

const TIME_TOL: f64 = 1e-9;

/// Elementwise saturation bounds `lo <= u <= hi`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlBox {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl ControlBox {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(invalid("control box bounds must be non-empty and equal length"));
        }
        if lo.iter().zip(hi.iter()).any(|(a, b)| !(a <= b)) {
            return Err(invalid("control box requires lo <= hi"));
        }
        Ok(Self { lo, hi })
    }

    /// Box `[-limit, limit]^dim`.
    pub fn symmetric(dim: usize, limit: f64) -> Result<Self> {
        Self::new(DVector::from_element(dim, -limit), DVector::from_element(dim, limit))
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }

    pub fn contains(&self, u: &DVector<f64>) -> bool {
        u.len() == self.dim()
            && u.iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .all(|(x, (a, b))| *x >= a - 1e-12 && *x <= b + 1e-12)
    }

    pub fn clamp(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| u[i].clamp(self.lo[i], self.hi[i]))
    }

    pub(crate) fn check(&self, u: &DVector<f64>) -> Result<()> {
        if self.contains(u) {
            Ok(())
        } else {
            Err(SacbpError::OutsideBox(u.iter().copied().collect()))
        }
    }
}

/// Piecewise-constant control on a uniform grid. Cell `j` covers `(t0 + j dt, t0 + (j+1) dt]`;
/// the start time itself belongs to cell 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSchedule {
    t0: f64,
    dt: f64,
    values: Vec<DVector<f64>>,
    bounds: ControlBox,
}

impl ControlSchedule {
    pub fn new(t0: f64, dt: f64, values: Vec<DVector<f64>>, bounds: ControlBox) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid("schedule step must be positive"));
        }
        if values.is_empty() {
            return Err(invalid("schedule must have at least one cell"));
        }
        for u in &values {
            bounds.check(u)?;
        }
        Ok(Self { t0, dt, values, bounds })
    }

    pub fn constant(
        t0: f64,
        dt: f64,
        n_cells: usize,
        u: DVector<f64>,
        bounds: ControlBox,
    ) -> Result<Self> {
        Self::new(t0, dt, vec![u; n_cells], bounds)
    }

    pub fn zeros(t0: f64, dt: f64, n_cells: usize, bounds: ControlBox) -> Result<Self> {
        let m = bounds.dim();
        Self::constant(t0, dt, n_cells, DVector::zeros(m), bounds)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.dt * self.values.len() as f64
    }

    pub fn bounds(&self) -> &ControlBox {
        &self.bounds
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn value(&self, cell: usize) -> &DVector<f64> {
        &self.values[cell]
    }

    /// Index of the cell whose interval `(t_j, t_{j+1}]` contains `t`.
    pub fn cell_index(&self, t: f64) -> Result<usize> {
        let span_err = || SacbpError::OutsideSpan { t, start: self.t0, end: self.t_end() };
        let k = (t - self.t0) / self.dt;
        if k < -TIME_TOL || k > self.values.len() as f64 + TIME_TOL {
            return Err(span_err());
        }
        if k <= TIME_TOL {
            return Ok(0);
        }
        let idx = (k - TIME_TOL).ceil() as usize - 1;
        Ok(idx.min(self.values.len() - 1))
    }

    pub fn value_at(&self, t: f64) -> Result<&DVector<f64>> {
        Ok(&self.values[self.cell_index(t)?])
    }

    pub(crate) fn set_cell(&mut self, cell: usize, u: DVector<f64>) {
        self.values[cell] = u;
    }

    /// Cells overwritten by a perturbation on `(tau - eps, tau]`, as a half-open index range.
    pub fn perturbation_cells(&self, tau: f64, eps: f64) -> Result<std::ops::Range<usize>> {
        perturbation_cells(self.t0, self.dt, self.values.len(), tau, eps)
    }

    pub fn perturbed(&self, tau: f64, v: &DVector<f64>, eps: f64) -> Result<Self> {
        perturb_control(self, tau, v, eps)
    }
}

pub(crate) fn perturbation_cells(
    t0: f64,
    dt: f64,
    n_cells: usize,
    tau: f64,
    eps: f64,
) -> Result<std::ops::Range<usize>> {
    if !(eps >= 0.0) {
        return Err(invalid("perturbation duration must be nonnegative"));
    }
    let t_end = t0 + dt * n_cells as f64;
    if eps == 0.0 {
        return Ok(0..0);
    }
    let start_k = (tau - eps - t0) / dt;
    let end_k = ((tau - t0) / dt).round();
    if start_k < -TIME_TOL || end_k > n_cells as f64 || tau > t_end + TIME_TOL {
        return Err(SacbpError::OutsideSpan { t: tau, start: t0, end: t_end });
    }
    let first = (start_k + TIME_TOL).floor().max(0.0) as usize;
    let last = end_k as usize;
    Ok(first..last.max(first))
}

/// Returns a copy of `schedule` holding `v` on every cell that intersects `(tau - eps, tau]`.
/// `tau` is snapped to the nearest grid point.
pub fn perturb_control(
    schedule: &ControlSchedule,
    tau: f64,
    v: &DVector<f64>,
    eps: f64,
) -> Result<ControlSchedule> {
    schedule.bounds.check(v)?;
    let cells = schedule.perturbation_cells(tau, eps)?;
    let mut out = schedule.clone();
    for j in cells {
        out.set_cell(j, v.clone());
    }
    Ok(out)
}
