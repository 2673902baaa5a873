//! Free-boundary extraction and diagnostics: Hausdorff distance, the
//! mass-matched equilibrium `(C - Phi)_+`, sublevel-shell checks and
//! boundary velocities.

use crate::error::{check_exponent, PmedError, Result};
use crate::field::{density_to_pressure_value, pressure_to_density_value, Field, Variable};
use crate::grid::Grid;
use crate::potential::Potential;
use crate::solver::{Trajectory, SUPPORT_MARGIN};

/// Points sampled on `{f = threshold}`.
///
/// Coordinates are stored as 2-vectors; the second component is 0 in 1D.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySet {
    pub dim: usize,
    pub points: Vec<[f64; 2]>,
    pub t: Option<f64>,
    pub threshold: f64,
}

impl BoundarySet {
    pub fn new(dim: usize, points: Vec<[f64; 2]>, threshold: f64) -> Self {
        Self {
            dim,
            points,
            t: None,
            threshold,
        }
    }

    pub fn at_time(mut self, t: f64) -> Self {
        self.t = Some(t);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }
}

/// Grid-scaled support threshold `10 h max|f| / L`.
pub fn default_threshold(f: &Field) -> f64 {
    let g = f.grid();
    10.0 * g.spacing() * f.max() / g.half_width()
}

/// Crossings of the `threshold` level between neighbouring cells, located by
/// linear interpolation. Edges along x are listed first, then edges along y,
/// each in ascending cell order.
pub fn extract_boundary(f: &Field, threshold: f64) -> Result<BoundarySet> {
    if !(threshold > 0.0) {
        return Err(PmedError::InvalidParameter {
            name: "threshold",
            value: threshold,
            reason: "must be > 0",
        });
    }
    let grid = f.grid();
    let v = f.values();
    let n = grid.cells_per_axis();
    let h = grid.spacing();
    let mut points = Vec::new();
    for axis in 0..grid.dim() {
        let s = grid.stride(axis);
        for a in 0..v.len() {
            if grid.multi_index(a)[axis] + 1 >= n {
                continue;
            }
            let b = a + s;
            let (va, vb) = (v[a], v[b]);
            if (va > threshold) == (vb > threshold) {
                continue;
            }
            let frac = (threshold - va) / (vb - va);
            let mut p = grid.point(a);
            p[axis] += frac * h;
            points.push(p);
        }
    }
    Ok(BoundarySet::new(grid.dim(), points, threshold))
}

fn distance(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn directed(a: &BoundarySet, b: &BoundarySet) -> f64 {
    a.points
        .iter()
        .map(|p| {
            b.points
                .iter()
                .map(|q| distance(p, q))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance between two nonempty point sets.
pub fn hausdorff(a: &BoundarySet, b: &BoundarySet) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(PmedError::EmptyBoundary);
    }
    Ok(directed(a, b).max(directed(b, a)))
}

/// Stationary state `(C_inf - Phi)_+` carrying a prescribed density mass.
#[derive(Debug, Clone)]
pub struct EquilibriumProfile {
    pub c_inf: f64,
    pub pressure: Field,
    /// Points on `{Phi = C_inf}`, one per crossed grid edge.
    pub boundary: BoundarySet,
    pub mass: f64,
}

/// Discrete density mass of `(c - Phi)_+` on the grid.
fn equilibrium_mass(c: f64, phi: &[f64], m: f64, vol: f64) -> f64 {
    let mut sum = 0.0;
    for &p in phi {
        sum += pressure_to_density_value(c - p, m);
    }
    sum * vol
}

fn sample_potential(pot: &Potential, grid: &Grid) -> Vec<f64> {
    let dim = grid.dim();
    (0..grid.len())
        .map(|i| pot.eval(&grid.point(i)[..dim]))
        .collect()
}

fn fits_in_box(c: f64, phi: &[f64], grid: &Grid) -> bool {
    phi.iter()
        .enumerate()
        .all(|(i, &p)| p >= c || grid.edge_distance(i) >= SUPPORT_MARGIN)
}

/// Bisection for the `C` whose equilibrium density has mass `target_mass`.
pub fn equilibrium_constant(target_mass: f64, pot: &Potential, m: f64, grid: &Grid) -> Result<f64> {
    check_exponent(m)?;
    if !(target_mass > 0.0 && target_mass.is_finite()) {
        return Err(PmedError::InvalidParameter {
            name: "target_mass",
            value: target_mass,
            reason: "must be > 0",
        });
    }
    if !pot.strictly_convex() {
        return Err(PmedError::UnsupportedPotential);
    }
    if pot.dim() != grid.dim() {
        return Err(PmedError::InvalidInput("potential and grid dimensions differ".into()));
    }
    let phi = sample_potential(pot, grid);
    let vol = grid.cell_volume();
    let phi_min = pot.min_value().expect("strictly convex potentials carry a minimiser");
    let mass = |c: f64| equilibrium_mass(c, &phi, m, vol);

    let mut lo = phi_min;
    let mut width = 1.0;
    let mut hi = phi_min + width;
    while mass(hi) < target_mass {
        if !fits_in_box(hi, &phi, grid) {
            return Err(PmedError::DomainTooSmall { c: hi });
        }
        lo = hi;
        width *= 2.0;
        hi = phi_min + width;
    }
    let tol = 1e-10 * target_mass;
    let mut c = 0.5 * (lo + hi);
    for _ in 0..200 {
        c = 0.5 * (lo + hi);
        let mc = mass(c);
        if (mc - target_mass).abs() <= tol {
            break;
        }
        if mc < target_mass {
            lo = c;
        } else {
            hi = c;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    if !fits_in_box(c, &phi, grid) {
        return Err(PmedError::DomainTooSmall { c });
    }
    Ok(c)
}

/// Level-set points of `{Phi = c}` on grid edges, refined by bisection along
/// each crossed edge.
pub fn potential_level_set(pot: &Potential, c: f64, grid: &Grid) -> BoundarySet {
    let dim = grid.dim();
    let n = grid.cells_per_axis();
    let h = grid.spacing();
    let phi = sample_potential(pot, grid);
    let mut points = Vec::new();
    for axis in 0..dim {
        let s = grid.stride(axis);
        for a in 0..grid.len() {
            if grid.multi_index(a)[axis] + 1 >= n {
                continue;
            }
            let b = a + s;
            if (phi[a] < c) == (phi[b] < c) {
                continue;
            }
            let start = grid.point(a);
            let at = |frac: f64| {
                let mut p = start;
                p[axis] += frac * h;
                p
            };
            let below_at_start = phi[a] < c;
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let below = pot.eval(&at(mid)[..dim]) < c;
                if below == below_at_start {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            points.push(at(0.5 * (lo + hi)));
        }
    }
    BoundarySet::new(dim, points, 0.0)
}

/// Equilibrium constant, pressure field and its exact level-set boundary.
pub fn equilibrium_profile(
    target_mass: f64,
    pot: &Potential,
    m: f64,
    grid: &Grid,
) -> Result<EquilibriumProfile> {
    let c_inf = equilibrium_constant(target_mass, pot, m, grid)?;
    let pressure = Field::from_fn(grid, Variable::Pressure, m, |x| (c_inf - pot.eval(x)).max(0.0))
        .map_err(|_| PmedError::DomainTooSmall { c: c_inf })?;
    let phi = sample_potential(pot, grid);
    let mass = equilibrium_mass(c_inf, &phi, m, grid.cell_volume());
    Ok(EquilibriumProfile {
        c_inf,
        pressure,
        boundary: potential_level_set(pot, c_inf, grid),
        mass,
    })
}

/// True iff every point satisfies `c_inf - eps <= Phi(x) <= c_inf + eps`.
pub fn sublevel_shell_check(bset: &BoundarySet, pot: &Potential, c_inf: f64, eps: f64) -> bool {
    bset.points.iter().all(|p| {
        let v = pot.eval(&p[..bset.dim]);
        v >= c_inf - eps && v <= c_inf + eps
    })
}

/// Velocity estimate at one boundary point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointVelocity {
    pub point: [f64; 2],
    /// Outward normal velocity from nearest-point displacement.
    pub velocity: f64,
    /// `|grad u|` from the nearest fully interior cell.
    pub grad_norm: f64,
    /// `|grad u| + grad Phi . grad u / |grad u|`.
    pub predicted: f64,
    /// `velocity - predicted`, or NaN where `|grad u|` is below the floor.
    pub law_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySample {
    pub t: f64,
    pub points: Vec<PointVelocity>,
}

impl VelocitySample {
    pub fn max_abs_residual(&self) -> f64 {
        self.points
            .iter()
            .filter(|p| p.law_residual.is_finite())
            .map(|p| p.law_residual.abs())
            .fold(0.0, f64::max)
    }
}

const GRAD_FLOOR: f64 = 1e-8;

/// Centred-difference pressure gradients at cells whose whole stencil lies
/// above `threshold` in density.
fn interior_gradients(rho: &Field, threshold: f64) -> Vec<([f64; 2], [f64; 2])> {
    let grid = rho.grid();
    let m = rho.exponent();
    let dim = grid.dim();
    let h = grid.spacing();
    let n = grid.cells_per_axis();
    let v = rho.values();
    let u: Vec<f64> = v.iter().map(|&r| density_to_pressure_value(r, m)).collect();
    let mut out = Vec::new();
    for i in 0..v.len() {
        if v[i] <= threshold || grid.edge_distance(i) == 0 {
            continue;
        }
        if grid.neighbours(i).any(|j| v[j] <= threshold) {
            continue;
        }
        let mi = grid.multi_index(i);
        let mut g = [0.0; 2];
        for axis in 0..dim {
            debug_assert!(mi[axis] > 0 && mi[axis] + 1 < n);
            let s = grid.stride(axis);
            g[axis] = (u[i + s] - u[i - s]) / (2.0 * h);
        }
        out.push((grid.point(i), g));
    }
    out
}

/// Normal velocity of the extracted boundary between consecutive snapshots
/// and its defect against `V = |grad u| + grad Phi . grad u / |grad u|`.
pub fn boundary_velocity(traj: &Trajectory, threshold: f64) -> Result<Vec<VelocitySample>> {
    if traj.snapshots.len() < 3 {
        return Err(PmedError::InvalidInput(format!(
            "need at least 3 snapshots, got {}",
            traj.snapshots.len()
        )));
    }
    let sets: Vec<BoundarySet> = traj
        .snapshots
        .iter()
        .map(|s| extract_boundary(&s.density, threshold).map(|b| b.at_time(s.t)))
        .collect::<Result<_>>()?;
    let gaps: Vec<f64> = sets.iter().filter(|b| b.is_empty()).filter_map(|b| b.t).collect();
    if !gaps.is_empty() {
        return Err(PmedError::BoundaryGap(gaps));
    }
    let dim = traj.grid().dim();
    let pot = &traj.config.potential;
    let mut samples = Vec::with_capacity(sets.len() - 1);
    for k in 1..sets.len() {
        let dt = traj.snapshots[k].t - traj.snapshots[k - 1].t;
        let grads = interior_gradients(&traj.snapshots[k].density, threshold);
        let mut points = Vec::with_capacity(sets[k].len());
        for p in &sets[k].points {
            let q = sets[k - 1]
                .points
                .iter()
                .min_by(|a, b| distance(p, a).total_cmp(&distance(p, b)))
                .expect("nonempty");
            let nearest = grads
                .iter()
                .min_by(|a, b| distance(p, &a.0).total_cmp(&distance(p, &b.0)));
            let Some((_, g)) = nearest else {
                points.push(PointVelocity {
                    point: *p,
                    velocity: f64::NAN,
                    grad_norm: 0.0,
                    predicted: f64::NAN,
                    law_residual: f64::NAN,
                });
                continue;
            };
            let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
            let mut gphi = [0.0; 2];
            pot.grad_into(&p[..dim], &mut gphi[..dim]);
            let (velocity, predicted, law_residual) = if gn > GRAD_FLOOR {
                // outward normal of the positivity set points down the pressure gradient
                let normal = [-g[0] / gn, -g[1] / gn];
                let v = ((p[0] - q[0]) * normal[0] + (p[1] - q[1]) * normal[1]) / dt;
                let predicted = gn + (gphi[0] * g[0] + gphi[1] * g[1]) / gn;
                (v, predicted, v - predicted)
            } else {
                (f64::NAN, f64::NAN, f64::NAN)
            };
            points.push(PointVelocity {
                point: *p,
                velocity,
                grad_norm: gn,
                predicted,
                law_residual,
            });
        }
        samples.push(VelocitySample {
            t: traj.snapshots[k].t,
            points,
        });
    }
    Ok(samples)
}
