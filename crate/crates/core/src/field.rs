//! Cell-centred scalar fields and the density/pressure change of variables.

use crate::error::{check_exponent, PmedError, Result};
use crate::grid::Grid;

/// Which physical variable a [`Field`] stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variable {
    Density,
    Pressure,
}

/// Nonnegative per-cell values with compact support inside the box.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
    variable: Variable,
    exponent: f64,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>, variable: Variable, exponent: f64) -> Result<Self> {
        check_exponent(exponent)?;
        if values.len() != grid.len() {
            return Err(PmedError::InvalidField(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(PmedError::InvalidField(format!(
                "value {} at cell {i} is negative or not finite",
                values[i]
            )));
        }
        if let Some(i) = (0..values.len()).find(|&i| values[i] > 0.0 && grid.edge_distance(i) == 0) {
            return Err(PmedError::InvalidField(format!(
                "cell {i} on the outer ring is nonzero"
            )));
        }
        Ok(Self {
            grid,
            values,
            variable,
            exponent,
        })
    }

    /// Samples `f` at cell centres. `f` receives a `dim`-length slice.
    pub fn from_fn<F>(grid: &Grid, variable: Variable, exponent: f64, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64,
    {
        let dim = grid.dim();
        let values = (0..grid.len())
            .map(|i| {
                let p = grid.point(i);
                f(&p[..dim])
            })
            .collect();
        Self::new(grid.clone(), values, variable, exponent)
    }

    pub fn zeros(grid: &Grid, variable: Variable, exponent: f64) -> Result<Self> {
        Self::new(grid.clone(), vec![0.0; grid.len()], variable, exponent)
    }

    /// Trusted constructor for values produced by the solver.
    pub(crate) fn from_parts(grid: Grid, values: Vec<f64>, variable: Variable, exponent: f64) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid,
            values,
            variable,
            exponent,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn variable(&self) -> Variable {
        self.variable
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Multiplies every value by `c >= 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.grid.clone(),
            self.values.iter().map(|v| v * c).collect(),
            self.variable,
            self.exponent,
        )
    }

    /// Number of cells between the support and the nearest box face.
    pub fn support_margin(&self) -> Option<usize> {
        (0..self.values.len())
            .filter(|&i| self.values[i] > 0.0)
            .map(|i| self.grid.edge_distance(i))
            .min()
    }
}

/// `u = m/(m-1) * rho^(m-1)`.
pub fn pressure_from_density(rho: &Field, m: f64) -> Result<Field> {
    check_exponent(m)?;
    if rho.variable != Variable::Density {
        return Err(PmedError::InvalidField("expected a density field".into()));
    }
    let c = m / (m - 1.0);
    let values = rho
        .values
        .iter()
        .map(|&r| if r > 0.0 { c * r.powf(m - 1.0) } else { 0.0 })
        .collect();
    Ok(Field::from_parts(rho.grid.clone(), values, Variable::Pressure, m))
}

/// `rho = ((m-1)/m * u)^(1/(m-1))`.
pub fn density_from_pressure(u: &Field, m: f64) -> Result<Field> {
    check_exponent(m)?;
    if u.variable != Variable::Pressure {
        return Err(PmedError::InvalidField("expected a pressure field".into()));
    }
    let values = u
        .values
        .iter()
        .map(|&p| pressure_to_density_value(p, m))
        .collect();
    Ok(Field::from_parts(u.grid.clone(), values, Variable::Density, m))
}

pub(crate) fn pressure_to_density_value(p: f64, m: f64) -> f64 {
    if p > 0.0 {
        ((m - 1.0) / m * p).powf(1.0 / (m - 1.0))
    } else {
        0.0
    }
}

pub(crate) fn density_to_pressure_value(r: f64, m: f64) -> f64 {
    if r > 0.0 {
        m / (m - 1.0) * r.powf(m - 1.0)
    } else {
        0.0
    }
}

/// `h^dim * sum(values)`, summed in ascending index order.
pub fn integrate(f: &Field) -> f64 {
    let mut sum = 0.0;
    for v in &f.values {
        sum += v;
    }
    sum * f.grid.cell_volume()
}
