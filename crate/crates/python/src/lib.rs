//! Python bindings for `pmed-core`.
//!
//! Fields are exchanged as flat lists in row-major order (`idx = iy * n + ix`).

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use pmed_core::barriers::{self as core_barriers, BarenblattParams, WaveParams};
use pmed_core::cli;
use pmed_core::freeboundary as fb;
use pmed_core::solver::{ConstantTest, CosineTest};
use pmed_core::{Field as CoreField, Grid as CoreGrid, Potential as CorePotential, SolverConfig, Variable};

create_exception!(pmed, PmedError, PyException, "Error raised by the pmed library.");

/// `(point, velocity, predicted, law_residual)` for one boundary point.
type VelocityPoint = (Vec<f64>, f64, f64, f64);

fn to_py(e: pmed_core::PmedError) -> PyErr {
    PmedError::new_err(format!("[{}] {e}", e.code()))
}

fn variable_from(name: &str) -> PyResult<Variable> {
    match name {
        "density" => Ok(Variable::Density),
        "pressure" => Ok(Variable::Pressure),
        other => Err(PmedError::new_err(format!("unknown variable `{other}`"))),
    }
}

/// Uniform cell-centred grid on `[-L, L]^dim`.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Grid {
    inner: CoreGrid,
}

#[pymethods]
impl Grid {
    #[new]
    fn new(dim: usize, half_width: f64, spacing: f64) -> PyResult<Self> {
        CoreGrid::new(dim, half_width, spacing).map(|inner| Self { inner }).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn half_width(&self) -> f64 {
        self.inner.half_width()
    }

    #[getter]
    fn spacing(&self) -> f64 {
        self.inner.spacing()
    }

    #[getter]
    fn cells_per_axis(&self) -> usize {
        self.inner.cells_per_axis()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Cell centre of flat index `idx` as a list of `dim` coordinates.
    fn point(&self, idx: usize) -> PyResult<Vec<f64>> {
        if idx >= self.inner.len() {
            return Err(PmedError::new_err(format!("cell index {idx} out of range")));
        }
        Ok(self.inner.point(idx)[..self.inner.dim()].to_vec())
    }

    fn points(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len()).map(|i| self.inner.point(i)[..self.inner.dim()].to_vec()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Grid(dim={}, half_width={}, spacing={})",
            self.inner.dim(),
            self.inner.half_width(),
            self.inner.spacing()
        )
    }
}

#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Potential {
    inner: CorePotential,
}

#[pymethods]
impl Potential {
    /// `a |x|^2`.
    #[staticmethod]
    fn quadratic(a: f64, dim: usize) -> PyResult<Self> {
        CorePotential::quadratic(a, dim).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn zero(dim: usize) -> PyResult<Self> {
        CorePotential::zero(dim).map(|inner| Self { inner }).map_err(to_py)
    }

    /// `sum_k c_k |x|^(2k)`; the Hessian bound is taken over the box of half-width `half_width`.
    #[staticmethod]
    fn radial_polynomial(coefficients: Vec<f64>, dim: usize, half_width: f64) -> PyResult<Self> {
        CorePotential::radial_polynomial(&coefficients, dim, half_width)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn __call__(&self, x: Vec<f64>) -> PyResult<f64> {
        self.check(&x)?;
        Ok(self.inner.eval(&x))
    }

    fn grad(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(&x)?;
        Ok(self.inner.grad(&x))
    }

    fn laplacian(&self, x: Vec<f64>) -> PyResult<f64> {
        self.check(&x)?;
        Ok(self.inner.laplacian(&x))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn hessian_bound(&self) -> f64 {
        self.inner.hessian_bound()
    }

    #[getter]
    fn strictly_convex(&self) -> bool {
        self.inner.strictly_convex()
    }
}

impl Potential {
    fn check(&self, x: &[f64]) -> PyResult<()> {
        if x.len() != self.inner.dim() {
            return Err(PmedError::new_err(format!(
                "expected a point with {} coordinates, got {}",
                self.inner.dim(),
                x.len()
            )));
        }
        Ok(())
    }
}

/// Density or pressure values on a grid.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Field {
    inner: CoreField,
}

#[pymethods]
impl Field {
    #[new]
    #[pyo3(signature = (grid, values, m, variable = "density"))]
    fn new(grid: &Grid, values: Vec<f64>, m: f64, variable: &str) -> PyResult<Self> {
        CoreField::new(grid.inner.clone(), values, variable_from(variable)?, m)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    #[getter]
    fn variable(&self) -> &'static str {
        match self.inner.variable() {
            Variable::Density => "density",
            Variable::Pressure => "pressure",
        }
    }

    #[getter]
    fn exponent(&self) -> f64 {
        self.inner.exponent()
    }

    #[getter]
    fn grid(&self) -> Grid {
        Grid {
            inner: self.inner.grid().clone(),
        }
    }

    fn max(&self) -> f64 {
        self.inner.max()
    }

    /// Cell-centre quadrature of the field.
    fn integral(&self) -> f64 {
        pmed_core::integrate(&self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.values().len()
    }
}

#[pyfunction]
fn pressure_from_density(rho: &Field, m: f64) -> PyResult<Field> {
    pmed_core::pressure_from_density(&rho.inner, m)
        .map(|inner| Field { inner })
        .map_err(to_py)
}

#[pyfunction]
fn density_from_pressure(u: &Field, m: f64) -> PyResult<Field> {
    pmed_core::density_from_pressure(&u.inner, m)
        .map(|inner| Field { inner })
        .map_err(to_py)
}

/// Barenblatt density `rho(., t)` sampled on `grid`.
#[pyfunction]
#[pyo3(signature = (grid, t, tau = 1.0, c = 1.0, m = 2.0))]
fn barenblatt_density(grid: &Grid, t: f64, tau: f64, c: f64, m: f64) -> PyResult<Field> {
    BarenblattParams::new(tau, c, m, grid.inner.dim())
        .and_then(|p| p.density(&grid.inner, t))
        .map(|inner| Field { inner })
        .map_err(to_py)
}

/// Barenblatt pressure at a point.
#[pyfunction]
#[pyo3(signature = (x, t, tau = 1.0, c = 1.0, m = 2.0))]
fn barenblatt(x: Vec<f64>, t: f64, tau: f64, c: f64, m: f64) -> PyResult<f64> {
    let p = BarenblattParams::new(tau, c, m, x.len()).map_err(to_py)?;
    core_barriers::barenblatt(&x, t, &p).map_err(to_py)
}

#[pyfunction]
fn spherical_wave(x: Vec<f64>, t: f64, a: f64, omega: f64, b: f64, r: f64) -> f64 {
    core_barriers::spherical_wave(&x, t, &WaveParams { a, omega, b, r })
}

#[pyfunction]
fn validate_wave_params(a: f64, omega: f64, b: f64, r: f64, m: f64, n: usize) -> bool {
    core_barriers::validate_wave_params(a, omega, b, r, m, n)
}

#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Solver {
    inner: SolverConfig,
}

#[pymethods]
impl Solver {
    #[new]
    #[pyo3(signature = (m, potential, t_end, snapshot_every, cfl_safety = 0.4))]
    fn new(m: f64, potential: &Potential, t_end: f64, snapshot_every: f64, cfl_safety: f64) -> PyResult<Self> {
        let mut cfg = SolverConfig::new(m, potential.inner.clone()).with_times(t_end, snapshot_every);
        cfg.cfl_safety = cfl_safety;
        cfg.validate().map_err(to_py)?;
        Ok(Self { inner: cfg })
    }

    fn cfl_dt(&self, rho: &Field) -> PyResult<f64> {
        pmed_core::cfl_dt(&rho.inner, &self.inner).map_err(to_py)
    }

    /// One explicit step; returns `(density, clipped_mass, mass_change)`.
    fn step(&self, rho: &Field, dt: f64) -> PyResult<(Field, f64, f64)> {
        let out = pmed_core::step_density(&rho.inner, &self.inner, dt).map_err(to_py)?;
        Ok((Field { inner: out.density }, out.clipped_mass, out.mass_change))
    }

    fn simulate(&self, py: Python<'_>, rho0: &Field) -> PyResult<Trajectory> {
        let cfg = self.inner.clone();
        let rho0 = rho0.inner.clone();
        py.detach(move || pmed_core::simulate(&rho0, &cfg))
            .map(|inner| Trajectory { inner })
            .map_err(to_py)
    }

    fn compare(&self, py: Python<'_>, lo: &Field, hi: &Field) -> PyResult<Comparison> {
        let cfg = self.inner.clone();
        let (lo, hi) = (lo.inner.clone(), hi.inner.clone());
        let rep = py
            .detach(move || pmed_core::comparison_harness(&lo, &hi, &cfg))
            .map_err(to_py)?;
        Ok(Comparison {
            ordered: rep.ordered,
            max_violation: rep.max_violation,
            first_violation_time: rep.first_violation_time,
            tol_order: rep.tol_order,
            violations: rep.violations,
        })
    }
}

#[pyclass(frozen, skip_from_py_object)]
struct Trajectory {
    inner: pmed_core::Trajectory,
}

#[pymethods]
impl Trajectory {
    fn times(&self) -> Vec<f64> {
        self.inner.times()
    }

    fn masses(&self) -> Vec<f64> {
        self.inner.snapshots.iter().map(|s| s.mass).collect()
    }

    fn density(&self, k: usize) -> PyResult<Field> {
        self.inner
            .snapshots
            .get(k)
            .map(|s| Field {
                inner: s.density.clone(),
            })
            .ok_or_else(|| PmedError::new_err(format!("snapshot {k} out of range")))
    }

    fn __len__(&self) -> usize {
        self.inner.snapshots.len()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps
    }

    #[getter]
    fn max_dt(&self) -> f64 {
        self.inner.max_dt
    }

    #[getter]
    fn clipped_mass(&self) -> f64 {
        self.inner.last().clipped_mass
    }

    fn relative_mass_drift(&self) -> f64 {
        self.inner.relative_mass_drift()
    }

    /// Weak-form residual against `phi = 1` (`mode = None`) or the
    /// Neumann-compatible cosine of the given mode.
    #[pyo3(signature = (mode = None))]
    fn weak_residual(&self, mode: Option<u32>) -> f64 {
        match mode {
            None => pmed_core::weak_residual(&self.inner, &ConstantTest(1.0)),
            Some(k) => pmed_core::weak_residual(&self.inner, &CosineTest::new(self.inner.grid().half_width(), k)),
        }
    }

    /// Per snapshot interval: `(t, [(point, velocity, predicted, residual)])`.
    #[pyo3(signature = (threshold = None))]
    fn boundary_velocity(&self, threshold: Option<f64>) -> PyResult<Vec<(f64, Vec<VelocityPoint>)>> {
        let eps = threshold.unwrap_or_else(|| fb::default_threshold(&self.inner.initial().density));
        let dim = self.inner.grid().dim();
        let samples = fb::boundary_velocity(&self.inner, eps).map_err(to_py)?;
        Ok(samples
            .into_iter()
            .map(|s| {
                let pts = s
                    .points
                    .into_iter()
                    .map(|p| (p.point[..dim].to_vec(), p.velocity, p.predicted, p.law_residual))
                    .collect();
                (s.t, pts)
            })
            .collect())
    }
}

#[pyclass(frozen, get_all)]
struct Comparison {
    ordered: bool,
    max_violation: f64,
    first_violation_time: Option<f64>,
    tol_order: f64,
    violations: Vec<(f64, f64)>,
}

#[pyclass(frozen, get_all)]
struct Equilibrium {
    c_inf: f64,
    mass: f64,
    pressure: Field,
    boundary: Vec<Vec<f64>>,
}

#[pyfunction]
fn equilibrium_constant(target_mass: f64, potential: &Potential, m: f64, grid: &Grid) -> PyResult<f64> {
    fb::equilibrium_constant(target_mass, &potential.inner, m, &grid.inner).map_err(to_py)
}

#[pyfunction]
fn equilibrium_profile(target_mass: f64, potential: &Potential, m: f64, grid: &Grid) -> PyResult<Equilibrium> {
    let p = fb::equilibrium_profile(target_mass, &potential.inner, m, &grid.inner).map_err(to_py)?;
    let dim = grid.inner.dim();
    Ok(Equilibrium {
        c_inf: p.c_inf,
        mass: p.mass,
        pressure: Field { inner: p.pressure },
        boundary: p.boundary.points.iter().map(|q| q[..dim].to_vec()).collect(),
    })
}

#[pyfunction]
fn default_threshold(f: &Field) -> f64 {
    fb::default_threshold(&f.inner)
}

#[pyfunction]
#[pyo3(signature = (f, threshold = None))]
fn extract_boundary(f: &Field, threshold: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
    let eps = threshold.unwrap_or_else(|| fb::default_threshold(&f.inner));
    let dim = f.inner.grid().dim();
    let b = fb::extract_boundary(&f.inner, eps).map_err(to_py)?;
    Ok(b.points.iter().map(|p| p[..dim].to_vec()).collect())
}

fn boundary_set(points: &[Vec<f64>]) -> PyResult<fb::BoundarySet> {
    let dim = points.first().map_or(1, |p| p.len());
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        if p.len() != dim || !(1..=2).contains(&dim) {
            return Err(PmedError::new_err("points must all have 1 or all have 2 coordinates"));
        }
        out.push([p[0], if dim == 2 { p[1] } else { 0.0 }]);
    }
    Ok(fb::BoundarySet::new(dim, out, 0.0))
}

#[pyfunction]
fn hausdorff(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    fb::hausdorff(&boundary_set(&a)?, &boundary_set(&b)?).map_err(to_py)
}

#[pyfunction]
fn sublevel_shell_check(points: Vec<Vec<f64>>, potential: &Potential, c_inf: f64, eps: f64) -> PyResult<bool> {
    Ok(fb::sublevel_shell_check(&boundary_set(&points)?, &potential.inner, c_inf, eps))
}

#[pyclass(frozen, get_all)]
struct RunResult {
    passed: bool,
    summary: Vec<String>,
    files: Vec<(String, String)>,
}

/// Runs a full experiment from a JSON configuration string, returning the
/// files it would write instead of writing them.
#[pyfunction]
fn run_config(py: Python<'_>, command: &str, config: &str) -> PyResult<RunResult> {
    let cmd = match command {
        "simulate" => cli::Command::Simulate,
        "equilibrium" => cli::Command::Equilibrium,
        "verify-barriers" => cli::Command::VerifyBarriers,
        "compare" => cli::Command::Compare,
        "convergence" => cli::Command::Convergence,
        other => return Err(PmedError::new_err(format!("unknown command `{other}`"))),
    };
    let cfg = cli::parse_config(config, cmd).map_err(|e| PmedError::new_err(format!("[config] {e}")))?;
    let out = py.detach(move || cli::run(&cfg)).map_err(to_py)?;
    Ok(RunResult {
        passed: out.passed,
        summary: out.summary,
        files: out.files.into_iter().map(|f| (f.name, f.contents)).collect(),
    })
}

#[pymodule]
fn pmed(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PmedError", m.py().get_type::<PmedError>())?;
    m.add_class::<Grid>()?;
    m.add_class::<Potential>()?;
    m.add_class::<Field>()?;
    m.add_class::<Solver>()?;
    m.add_class::<Trajectory>()?;
    m.add_class::<Comparison>()?;
    m.add_class::<Equilibrium>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(pressure_from_density, m)?)?;
    m.add_function(wrap_pyfunction!(density_from_pressure, m)?)?;
    m.add_function(wrap_pyfunction!(barenblatt_density, m)?)?;
    m.add_function(wrap_pyfunction!(barenblatt, m)?)?;
    m.add_function(wrap_pyfunction!(spherical_wave, m)?)?;
    m.add_function(wrap_pyfunction!(validate_wave_params, m)?)?;
    m.add_function(wrap_pyfunction!(equilibrium_constant, m)?)?;
    m.add_function(wrap_pyfunction!(equilibrium_profile, m)?)?;
    m.add_function(wrap_pyfunction!(default_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(extract_boundary, m)?)?;
    m.add_function(wrap_pyfunction!(hausdorff, m)?)?;
    m.add_function(wrap_pyfunction!(sublevel_shell_check, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
