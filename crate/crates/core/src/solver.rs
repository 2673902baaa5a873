//! Explicit flux-form time stepping for `rho_t = div(grad(rho^m) + rho grad(Phi))`.
//!
//! The box is closed (no flux through the outer faces). Diffusion differences
//! `rho^m` across each face; the drift part is upwinded by the sign of the
//! face-centred `dPhi/dx_k`. Both fluxes are added to one cell and subtracted
//! from its neighbour, so the update conserves mass up to rounding.

use crate::error::{check_exponent, PmedError, Result};
use crate::field::{Field, Variable};
use crate::grid::Grid;
use crate::potential::Potential;

/// Cells that must separate the support from the box faces before a step.
pub const SUPPORT_MARGIN: usize = 2;

/// Floor for the drift speed in the CFL formula.
const TINY_SPEED: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub m: f64,
    pub potential: Potential,
    /// Fraction of the stability limit used per step, in `(0, 1]`.
    pub cfl_safety: f64,
    pub t_end: f64,
    pub snapshot_every: f64,
    /// Support threshold for boundary extraction. `None` means the
    /// grid-scaled default of `freeboundary::default_threshold`.
    pub support_threshold: Option<f64>,
}

impl SolverConfig {
    pub fn new(m: f64, potential: Potential) -> Self {
        Self {
            m,
            potential,
            cfl_safety: 0.4,
            t_end: 1.0,
            snapshot_every: 0.1,
            support_threshold: None,
        }
    }

    pub fn with_times(mut self, t_end: f64, snapshot_every: f64) -> Self {
        self.t_end = t_end;
        self.snapshot_every = snapshot_every;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_exponent(self.m)?;
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(PmedError::InvalidParameter {
                name: "cfl_safety",
                value: self.cfl_safety,
                reason: "must lie in (0, 1]",
            });
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(PmedError::InvalidParameter {
                name: "t_end",
                value: self.t_end,
                reason: "must be > 0",
            });
        }
        if !(self.snapshot_every > 0.0 && self.snapshot_every.is_finite()) {
            return Err(PmedError::InvalidParameter {
                name: "snapshot_every",
                value: self.snapshot_every,
                reason: "must be > 0",
            });
        }
        if let Some(eps) = self.support_threshold {
            if !(eps > 0.0) {
                return Err(PmedError::InvalidParameter {
                    name: "support_threshold",
                    value: eps,
                    reason: "must be > 0",
                });
            }
        }
        Ok(())
    }
}

/// Result of one explicit step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub density: Field,
    /// Mass removed by clipping negative roundoff to zero.
    pub clipped_mass: f64,
    /// `mass(after, before clipping) - mass(before)`.
    pub mass_change: f64,
}

/// Per-grid precomputation shared by every step of a run.
pub(crate) struct Stepper<'a> {
    grid: &'a Grid,
    cfg: &'a SolverConfig,
    /// `dPhi/dx_axis` at the face between cell `i` and `i + stride(axis)`,
    /// stored at index `i`. Entries for the last cell of a row are unused.
    face_grad: Vec<Vec<f64>>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(grid: &'a Grid, cfg: &'a SolverConfig) -> Result<Self> {
        if cfg.potential.dim() != grid.dim() {
            return Err(PmedError::InvalidInput(format!(
                "potential dimension {} does not match grid dimension {}",
                cfg.potential.dim(),
                grid.dim()
            )));
        }
        let dim = grid.dim();
        let n = grid.cells_per_axis();
        let h = grid.spacing();
        let mut g = [0.0; 2];
        let face_grad = (0..dim)
            .map(|axis| {
                (0..grid.len())
                    .map(|i| {
                        if grid.multi_index(i)[axis] + 1 >= n {
                            return 0.0;
                        }
                        let mut p = grid.point(i);
                        p[axis] += 0.5 * h;
                        cfg.potential.grad_into(&p[..dim], &mut g[..dim]);
                        g[axis]
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            grid,
            cfg,
            face_grad,
        })
    }

    pub(crate) fn cfl(&self, rho: &[f64]) -> f64 {
        let m = self.cfg.m;
        let dim = self.grid.dim();
        let h = self.grid.spacing();
        let mut d_max: f64 = 0.0;
        let mut v_max: f64 = 0.0;
        for (i, &r) in rho.iter().enumerate() {
            if r <= 0.0 {
                continue;
            }
            d_max = d_max.max(m * r.powf(m - 1.0));
            for axis in 0..dim {
                let s = self.grid.stride(axis);
                v_max = v_max.max(self.face_grad[axis][i].abs());
                if self.grid.multi_index(i)[axis] > 0 {
                    v_max = v_max.max(self.face_grad[axis][i - s].abs());
                }
            }
        }
        let v_max = v_max.max(TINY_SPEED);
        let diffusive = if d_max > 0.0 {
            h * h / (2.0 * dim as f64 * d_max)
        } else {
            f64::INFINITY
        };
        let advective = h / (2.0 * dim as f64 * v_max);
        (self.cfg.cfl_safety * diffusive.min(advective)).min(self.cfg.snapshot_every)
    }

    fn check_support(&self, rho: &[f64]) -> Result<()> {
        let touching = rho
            .iter()
            .enumerate()
            .any(|(i, &r)| r > 0.0 && self.grid.edge_distance(i) < SUPPORT_MARGIN);
        if touching {
            Err(PmedError::DomainOverflow)
        } else {
            Ok(())
        }
    }

    /// One update without the stability precondition check.
    pub(crate) fn advance(&self, rho: &[f64], dt: f64) -> Result<(Vec<f64>, f64, f64)> {
        self.check_support(rho)?;
        let m = self.cfg.m;
        let h = self.grid.spacing();
        let n = self.grid.cells_per_axis();
        let rate = dt / h;
        let powered: Vec<f64> = rho
            .iter()
            .map(|&r| if r > 0.0 { r.powf(m) } else { 0.0 })
            .collect();
        let mut out = rho.to_vec();
        for axis in 0..self.grid.dim() {
            let s = self.grid.stride(axis);
            let grads = &self.face_grad[axis];
            for a in 0..rho.len() {
                if self.grid.multi_index(a)[axis] + 1 >= n {
                    continue;
                }
                let b = a + s;
                if rho[a] == 0.0 && rho[b] == 0.0 {
                    continue;
                }
                let g = grads[a];
                let upwind = if g > 0.0 { rho[b] } else { rho[a] };
                let flux = (powered[b] - powered[a]) / h + upwind * g;
                out[a] += rate * flux;
                out[b] -= rate * flux;
            }
        }
        let vol = self.grid.cell_volume();
        let before: f64 = rho.iter().sum();
        let after: f64 = out.iter().sum();
        let mut clipped = 0.0;
        for v in &mut out {
            if *v < 0.0 {
                clipped -= *v;
                *v = 0.0;
            }
        }
        Ok((out, clipped * vol, (after - before) * vol))
    }
}

/// Stability-limited step size for the current state, capped at `snapshot_every`.
pub fn cfl_dt(rho: &Field, cfg: &SolverConfig) -> Result<f64> {
    cfg.validate()?;
    let stepper = Stepper::new(rho.grid(), cfg)?;
    Ok(stepper.cfl(rho.values()))
}

/// Advances `rho` by one explicit step of size `dt`.
pub fn step_density(rho: &Field, cfg: &SolverConfig, dt: f64) -> Result<StepOutcome> {
    cfg.validate()?;
    check_density(rho)?;
    let stepper = Stepper::new(rho.grid(), cfg)?;
    let limit = stepper.cfl(rho.values());
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(PmedError::StepTooLarge { dt, limit });
    }
    let (values, clipped_mass, mass_change) = stepper.advance(rho.values(), dt)?;
    Ok(StepOutcome {
        density: Field::from_parts(rho.grid().clone(), values, Variable::Density, cfg.m),
        clipped_mass,
        mass_change,
    })
}

fn check_density(rho: &Field) -> Result<()> {
    if rho.variable() != Variable::Density {
        return Err(PmedError::InvalidField("expected a density field".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub density: Field,
    pub mass: f64,
    /// Mass clipped away since `t = 0`.
    pub clipped_mass: f64,
}

/// Time-ordered snapshots of one run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub config: SolverConfig,
    /// Largest step taken (0 when no step was taken).
    pub max_dt: f64,
    pub steps: usize,
    /// Largest per-step relative mass change before clipping.
    pub max_step_mass_drift: f64,
}

impl Trajectory {
    pub fn initial(&self) -> &Snapshot {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory has the initial snapshot")
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn grid(&self) -> &Grid {
        self.snapshots[0].density.grid()
    }

    /// `max_k |mass(t_k) - mass(0)| / mass(0)` (0 for a zero-mass run).
    pub fn relative_mass_drift(&self) -> f64 {
        let m0 = self.initial().mass;
        if m0 == 0.0 {
            return 0.0;
        }
        self.snapshots
            .iter()
            .map(|s| (s.mass - m0).abs() / m0)
            .fold(0.0, f64::max)
    }
}

/// Runs until the last multiple of `snapshot_every` not exceeding `t_end`,
/// recording a snapshot at each multiple.
pub fn simulate(rho0: &Field, cfg: &SolverConfig) -> Result<Trajectory> {
    let mut runs = simulate_lockstep(std::slice::from_ref(rho0), cfg)?;
    Ok(runs.pop().expect("one run requested"))
}

/// Advances several initial states with a shared step size (the smallest
/// stability limit among them), so their snapshots align exactly.
pub(crate) fn simulate_lockstep(initial: &[Field], cfg: &SolverConfig) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let grid = initial[0].grid();
    for f in initial {
        check_density(f)?;
        if f.grid() != grid {
            return Err(PmedError::InvalidInput("initial fields live on different grids".into()));
        }
        if f.exponent() != cfg.m {
            return Err(PmedError::InvalidInput(format!(
                "field exponent {} differs from configured m = {}",
                f.exponent(),
                cfg.m
            )));
        }
    }
    let stepper = Stepper::new(grid, cfg)?;
    let vol = grid.cell_volume();
    let mass_of = |v: &[f64]| v.iter().sum::<f64>() * vol;

    let mut states: Vec<Vec<f64>> = initial.iter().map(|f| f.values().to_vec()).collect();
    let mut clipped = vec![0.0; initial.len()];
    let mut trajectories: Vec<Trajectory> = initial
        .iter()
        .map(|f| Trajectory {
            snapshots: vec![Snapshot {
                t: 0.0,
                density: f.clone(),
                mass: mass_of(f.values()),
                clipped_mass: 0.0,
            }],
            config: cfg.clone(),
            max_dt: 0.0,
            steps: 0,
            max_step_mass_drift: 0.0,
        })
        .collect();

    let n_snapshots = (cfg.t_end / cfg.snapshot_every + 1e-9).floor() as usize;
    let mut t = 0.0;
    for k in 1..=n_snapshots {
        let target = k as f64 * cfg.snapshot_every;
        loop {
            let remaining = target - t;
            if remaining <= 1e-12 * cfg.snapshot_every {
                break;
            }
            let limit = states
                .iter()
                .map(|s| stepper.cfl(s))
                .fold(f64::INFINITY, f64::min);
            let dt = limit.min(remaining);
            for (j, state) in states.iter_mut().enumerate() {
                let m0 = trajectories[j].snapshots[0].mass;
                let (next, c, drift) = stepper.advance(state, dt).map_err(|e| e.at_time(t))?;
                *state = next;
                clipped[j] += c;
                let tr = &mut trajectories[j];
                tr.steps += 1;
                tr.max_dt = tr.max_dt.max(dt);
                if m0 > 0.0 {
                    tr.max_step_mass_drift = tr.max_step_mass_drift.max(drift.abs() / m0);
                }
            }
            t += dt;
        }
        t = target;
        for (j, state) in states.iter().enumerate() {
            trajectories[j].snapshots.push(Snapshot {
                t,
                density: Field::from_parts(grid.clone(), state.clone(), Variable::Density, cfg.m),
                mass: mass_of(state),
                clipped_mass: clipped[j],
            });
        }
    }
    Ok(trajectories)
}

/// A smooth space-time test function with analytic derivatives.
pub trait TestFunction {
    fn value(&self, x: &[f64], t: f64) -> f64;
    fn time_derivative(&self, x: &[f64], t: f64) -> f64;
    fn gradient(&self, x: &[f64], t: f64, out: &mut [f64]);
    fn laplacian(&self, x: &[f64], t: f64) -> f64;
}

/// `phi = c`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantTest(pub f64);

impl TestFunction for ConstantTest {
    fn value(&self, _: &[f64], _: f64) -> f64 {
        self.0
    }
    fn time_derivative(&self, _: &[f64], _: f64) -> f64 {
        0.0
    }
    fn gradient(&self, _: &[f64], _: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn laplacian(&self, _: &[f64], _: f64) -> f64 {
        0.0
    }
}

/// `phi(x) = prod_k cos(w x_k)` with `w = mode * pi / L`, which has zero
/// normal derivative on the faces of `[-L, L]^dim`.
#[derive(Debug, Clone, Copy)]
pub struct CosineTest {
    wavenumber: f64,
}

impl CosineTest {
    pub fn new(half_width: f64, mode: u32) -> Self {
        Self {
            wavenumber: mode as f64 * std::f64::consts::PI / half_width,
        }
    }
}

impl TestFunction for CosineTest {
    fn value(&self, x: &[f64], _: f64) -> f64 {
        x.iter().map(|v| (self.wavenumber * v).cos()).product()
    }
    fn time_derivative(&self, _: &[f64], _: f64) -> f64 {
        0.0
    }
    fn gradient(&self, x: &[f64], _: f64, out: &mut [f64]) {
        let w = self.wavenumber;
        for k in 0..x.len() {
            let mut g = -w * (w * x[k]).sin();
            for (j, xj) in x.iter().enumerate() {
                if j != k {
                    g *= (w * xj).cos();
                }
            }
            out[k] = g;
        }
    }
    fn laplacian(&self, x: &[f64], t: f64) -> f64 {
        -(x.len() as f64) * self.wavenumber * self.wavenumber * self.value(x, t)
    }
}

/// Worst absolute defect, over all snapshot times `t`, of
/// `int rho(t) phi(t) - int rho(0) phi(0) - int_0^t int (rho phi_t + rho^m lap(phi) - rho grad(Phi).grad(phi))`.
///
/// Space integrals use the cell-centre rule; the time integral is the
/// trapezoid rule over snapshots.
pub fn weak_residual(traj: &Trajectory, phi: &dyn TestFunction) -> f64 {
    let grid = traj.grid();
    let dim = grid.dim();
    let vol = grid.cell_volume();
    let m = traj.config.m;
    let pot = &traj.config.potential;
    let points: Vec<[f64; 2]> = (0..grid.len()).map(|i| grid.point(i)).collect();
    let drift: Vec<[f64; 2]> = points
        .iter()
        .map(|p| {
            let mut g = [0.0; 2];
            pot.grad_into(&p[..dim], &mut g[..dim]);
            g
        })
        .collect();

    let pairing = |s: &Snapshot| -> (f64, f64) {
        let mut paired = 0.0;
        let mut integrand = 0.0;
        let mut gphi = [0.0; 2];
        for (i, &r) in s.density.values().iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let x = &points[i][..dim];
            phi.gradient(x, s.t, &mut gphi[..dim]);
            let dot: f64 = (0..dim).map(|k| drift[i][k] * gphi[k]).sum();
            paired += r * phi.value(x, s.t);
            integrand += r * phi.time_derivative(x, s.t) + r.powf(m) * phi.laplacian(x, s.t)
                - r * dot;
        }
        (paired * vol, integrand * vol)
    };

    let (p0, mut g_prev) = pairing(traj.initial());
    let mut t_prev = 0.0;
    let mut accumulated = 0.0;
    let mut worst: f64 = 0.0;
    for s in &traj.snapshots[1..] {
        let (p, g) = pairing(s);
        accumulated += 0.5 * (g + g_prev) * (s.t - t_prev);
        worst = worst.max((p - p0 - accumulated).abs());
        g_prev = g;
        t_prev = s.t;
    }
    worst
}

/// Outcome of running an ordered pair of initial states side by side.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub ordered: bool,
    /// Largest `max_i (lo_i - hi_i)` over snapshots (negative when strictly ordered).
    pub max_violation: f64,
    pub first_violation_time: Option<f64>,
    pub tol_order: f64,
    /// `(t, max_i (lo_i - hi_i))` per snapshot.
    pub violations: Vec<(f64, f64)>,
}

/// Runs both states and checks `lo <= hi + tol_order` at every snapshot,
/// with `tol_order = 10 (h + max dt)`.
pub fn comparison_harness(lo: &Field, hi: &Field, cfg: &SolverConfig) -> Result<ComparisonReport> {
    if lo.grid() != hi.grid() {
        return Err(PmedError::InvalidInput("fields live on different grids".into()));
    }
    if let Some(i) = (0..lo.values().len()).find(|&i| lo.values()[i] > hi.values()[i]) {
        return Err(PmedError::InvalidInput(format!(
            "initial data not ordered at cell {i}: {} > {}",
            lo.values()[i],
            hi.values()[i]
        )));
    }
    let runs = simulate_lockstep(&[lo.clone(), hi.clone()], cfg)?;
    let h = lo.grid().spacing();
    let tol_order = 10.0 * (h + runs[0].max_dt.max(runs[1].max_dt));
    let violations: Vec<(f64, f64)> = runs[0]
        .snapshots
        .iter()
        .zip(&runs[1].snapshots)
        .map(|(a, b)| {
            let v = a
                .density
                .values()
                .iter()
                .zip(b.density.values())
                .map(|(x, y)| x - y)
                .fold(f64::NEG_INFINITY, f64::max);
            (a.t, v)
        })
        .collect();
    let max_violation = violations.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let first_violation_time = violations.iter().find(|v| v.1 > tol_order).map(|v| v.0);
    Ok(ComparisonReport {
        ordered: first_violation_time.is_none(),
        max_violation,
        first_violation_time,
        tol_order,
        violations,
    })
}
