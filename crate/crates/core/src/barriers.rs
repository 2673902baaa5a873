//! Closed-form barriers in the pressure variable, their ball convolutions and
//! hyperbolic rescalings, and a sampling checker for the sub/supersolution
//! inequalities of
//!
//! `u_t = (m-1) u lap(u) + |grad u|^2 + grad u . grad Phi + (m-1) u lap(Phi)`.

use rayon::prelude::*;

use crate::error::{check_exponent, PmedError, Result};
use crate::field::{pressure_to_density_value, Field, Variable};
use crate::grid::Grid;
use crate::potential::Potential;

/// A function of `(x, t)` that may refuse to evaluate outside its domain.
pub trait SpaceTime: Send + Sync {
    fn eval(&self, x: &[f64], t: f64) -> Result<f64>;
}

impl<F> SpaceTime for F
where
    F: Fn(&[f64], f64) -> f64 + Send + Sync,
{
    fn eval(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok(self(x, t))
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Barenblatt pressure `(C (t+tau)^(2 lambda) - K |x|^2)_+ / (t+tau)` with
/// `lambda = 1/((m-1) d + 2)` and `K = lambda / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarenblattParams {
    pub tau: f64,
    pub c: f64,
    pub m: f64,
    pub d: usize,
}

impl BarenblattParams {
    pub fn new(tau: f64, c: f64, m: f64, d: usize) -> Result<Self> {
        check_exponent(m)?;
        if !(tau > 0.0) {
            return Err(PmedError::InvalidParameter {
                name: "tau",
                value: tau,
                reason: "must be > 0",
            });
        }
        if !(c > 0.0) {
            return Err(PmedError::InvalidParameter {
                name: "C",
                value: c,
                reason: "must be > 0",
            });
        }
        if d != 1 && d != 2 {
            return Err(PmedError::InvalidParameter {
                name: "d",
                value: d as f64,
                reason: "must be 1 or 2",
            });
        }
        Ok(Self { tau, c, m, d })
    }

    pub fn lambda(&self) -> f64 {
        1.0 / ((self.m - 1.0) * self.d as f64 + 2.0)
    }

    pub fn k(&self) -> f64 {
        0.5 * self.lambda()
    }

    /// Radius of the support, `sqrt(C/K) (t+tau)^lambda`.
    pub fn radius(&self, t: f64) -> Result<f64> {
        let s = self.shifted_time(t)?;
        Ok((self.c / self.k()).sqrt() * s.powf(self.lambda()))
    }

    /// `dr/dt = lambda sqrt(C/K) (t+tau)^(lambda-1)`.
    pub fn front_speed(&self, t: f64) -> Result<f64> {
        let s = self.shifted_time(t)?;
        Ok(self.lambda() * (self.c / self.k()).sqrt() * s.powf(self.lambda() - 1.0))
    }

    pub fn value(&self, x: &[f64], t: f64) -> Result<f64> {
        let s = self.shifted_time(t)?;
        let r2: f64 = x.iter().map(|v| v * v).sum();
        Ok((self.c * s.powf(2.0 * self.lambda()) - self.k() * r2).max(0.0) / s)
    }

    /// Density `((m-1)/m u)^(1/(m-1))` sampled at the cell centres of `grid`.
    pub fn density(&self, grid: &Grid, t: f64) -> Result<Field> {
        if grid.dim() != self.d {
            return Err(PmedError::InvalidInput(format!(
                "Barenblatt dimension {} does not match grid dimension {}",
                self.d,
                grid.dim()
            )));
        }
        let s = self.shifted_time(t)?;
        let m = self.m;
        Field::from_fn(grid, Variable::Density, m, |x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            let u = (self.c * s.powf(2.0 * self.lambda()) - self.k() * r2).max(0.0) / s;
            pressure_to_density_value(u, m)
        })
    }

    fn shifted_time(&self, t: f64) -> Result<f64> {
        let s = t + self.tau;
        if s > 0.0 {
            Ok(s)
        } else {
            Err(PmedError::InvalidTime(s))
        }
    }
}

/// Travelling-wave supersolution `A (|x| + omega t - B)_+`, valid on
/// `{|x| <= R} x [(B - R)/omega, 0]` when [`validate_wave_params`] holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveParams {
    pub a: f64,
    pub omega: f64,
    pub b: f64,
    pub r: f64,
}

impl WaveParams {
    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        self.a * (norm(x) + self.omega * t - self.b).max(0.0)
    }

    /// Radius of the inner free boundary, `B - omega t`.
    pub fn inner_radius(&self, t: f64) -> f64 {
        self.b - self.omega * t
    }

    /// Earliest time of the validity window, `(B - R)/omega`.
    pub fn start_time(&self) -> f64 {
        (self.b - self.r) / self.omega
    }
}

/// Hyperbolic rescaling data: `alpha`, the centre `(x0, t0)`, the frozen
/// drift `b = grad Phi(x0)` and the perturbation constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Rescaling {
    pub alpha: f64,
    pub x0: Vec<f64>,
    pub t0: f64,
    pub drift: Vec<f64>,
    pub c_pert: f64,
}

impl Rescaling {
    /// Freezes the drift at `x0` and takes `c_pert = hessian_bound + 1`.
    pub fn for_potential(alpha: f64, x0: &[f64], t0: f64, pot: &Potential) -> Result<Self> {
        check_alpha(alpha)?;
        if x0.len() != pot.dim() {
            return Err(PmedError::InvalidInput("x0 dimension does not match the potential".into()));
        }
        Ok(Self {
            alpha,
            x0: x0.to_vec(),
            t0,
            drift: pot.grad(x0),
            c_pert: pot.hessian_bound() + 1.0,
        })
    }

    /// Ball-convolution parameter used at unit scale, `c_pert * alpha`.
    pub fn convolution_alpha(&self) -> f64 {
        self.c_pert * self.alpha
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(PmedError::InvalidParameter {
            name: "alpha",
            value: alpha,
            reason: "must lie in (0, 1)",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierKind {
    Barenblatt,
    SphericalWave,
    RescaledBarenblatt,
    RescaledWave,
}

impl BarrierKind {
    pub fn name(&self) -> &'static str {
        match self {
            BarrierKind::Barenblatt => "barenblatt",
            BarrierKind::SphericalWave => "spherical_wave",
            BarrierKind::RescaledBarenblatt => "rescaled_barenblatt",
            BarrierKind::RescaledWave => "rescaled_wave",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BarrierSpec {
    Barenblatt(BarenblattParams),
    SphericalWave(WaveParams),
    RescaledBarenblatt(BarenblattParams, Rescaling),
    RescaledWave(WaveParams, Rescaling),
}

impl BarrierSpec {
    pub fn kind(&self) -> BarrierKind {
        match self {
            BarrierSpec::Barenblatt(_) => BarrierKind::Barenblatt,
            BarrierSpec::SphericalWave(_) => BarrierKind::SphericalWave,
            BarrierSpec::RescaledBarenblatt(..) => BarrierKind::RescaledBarenblatt,
            BarrierSpec::RescaledWave(..) => BarrierKind::RescaledWave,
        }
    }

    /// Builds the evaluable barrier.
    ///
    /// Rescaled kinds are the sup (Barenblatt) or inf (wave) convolution with
    /// parameter `c_pert * alpha`, pulled back through the hyperbolic
    /// rescaling. `ball_spacing` sets the convolution sampling lattice and
    /// `margin` widens the rescaling cylinder for finite differencing.
    pub fn evaluable(&self, ball_spacing: f64, margin: f64) -> Result<Box<dyn SpaceTime>> {
        Ok(match self.clone() {
            BarrierSpec::Barenblatt(p) => Box::new(BarenblattFn(p)),
            BarrierSpec::SphericalWave(p) => Box::new(move |x: &[f64], t: f64| p.value(x, t)),
            BarrierSpec::RescaledBarenblatt(p, rs) => {
                let conv = sup_convolution(BarenblattFn(p), rs.convolution_alpha(), ball_spacing)?;
                Box::new(hyperbolic_rescale(conv, &rs)?.with_margin(margin))
            }
            BarrierSpec::RescaledWave(p, rs) => {
                let wave = move |x: &[f64], t: f64| p.value(x, t);
                let conv = inf_convolution(wave, rs.convolution_alpha(), ball_spacing)?;
                Box::new(hyperbolic_rescale(conv, &rs)?.with_margin(margin))
            }
        })
    }
}

struct BarenblattFn(BarenblattParams);

impl SpaceTime for BarenblattFn {
    fn eval(&self, x: &[f64], t: f64) -> Result<f64> {
        self.0.value(x, t)
    }
}

pub fn barenblatt(x: &[f64], t: f64, params: &BarenblattParams) -> Result<f64> {
    params.value(x, t)
}

pub fn spherical_wave(x: &[f64], t: f64, params: &WaveParams) -> f64 {
    params.value(x, t)
}

/// `R/2 < B < R` and `omega/A > 1 + 2 (m-1)(n-1)(R-B)/R`.
pub fn validate_wave_params(a: f64, omega: f64, b: f64, r: f64, m: f64, n: usize) -> bool {
    if !(a > 0.0 && omega > 0.0 && r > 0.0) {
        return false;
    }
    let in_range = 0.5 * r < b && b < r;
    let threshold = 1.0 + 2.0 * (m - 1.0) * (n as f64 - 1.0) * (r - b) / r;
    in_range && omega / a > threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Extremum {
    Sup,
    Inf,
}

/// `e^(-alpha t) sup_{|y-x| <= alpha(1-t)} u(y,t)` or the dual
/// `e^(alpha t) inf_{...} u(y,t)`.
///
/// The ball is sampled on a lattice of spacing at most `spacing / 4`,
/// aligned so that the centre and the axis extremes are included; in 2D
/// the bounding circle is sampled at the same arc spacing.
#[derive(Debug, Clone)]
pub struct BallConvolution<W> {
    inner: W,
    alpha: f64,
    spacing: f64,
    mode: Extremum,
}

pub fn sup_convolution<W: SpaceTime>(u: W, alpha: f64, spacing: f64) -> Result<BallConvolution<W>> {
    BallConvolution::new(u, alpha, spacing, Extremum::Sup)
}

pub fn inf_convolution<W: SpaceTime>(u: W, alpha: f64, spacing: f64) -> Result<BallConvolution<W>> {
    BallConvolution::new(u, alpha, spacing, Extremum::Inf)
}

impl<W: SpaceTime> BallConvolution<W> {
    fn new(inner: W, alpha: f64, spacing: f64, mode: Extremum) -> Result<Self> {
        check_alpha(alpha)?;
        if !(spacing > 0.0) {
            return Err(PmedError::InvalidParameter {
                name: "spacing",
                value: spacing,
                reason: "must be > 0",
            });
        }
        Ok(Self {
            inner,
            alpha,
            spacing,
            mode,
        })
    }

    pub fn radius(&self, t: f64) -> f64 {
        self.alpha * (1.0 - t)
    }
}

impl<W: SpaceTime> SpaceTime for BallConvolution<W> {
    fn eval(&self, x: &[f64], t: f64) -> Result<f64> {
        let radius = self.radius(t);
        if radius < 0.0 {
            return Err(PmedError::InvalidInput(format!(
                "ball convolution evaluated at t = {t}, where the radius is negative"
            )));
        }
        let sup = self.mode == Extremum::Sup;
        let mut best = self.inner.eval(x, t)?;
        let mut y = [0.0; 2];
        let dim = x.len();
        let mut consider = |y: &[f64]| -> Result<()> {
            let v = self.inner.eval(y, t)?;
            if (sup && v > best) || (!sup && v < best) {
                best = v;
            }
            Ok(())
        };
        if radius > 0.0 {
            let n = (radius / (0.25 * self.spacing)).ceil().max(1.0) as i64;
            let step = radius / n as f64;
            match dim {
                1 => {
                    for i in -n..=n {
                        y[0] = x[0] + i as f64 * step;
                        consider(&y[..1])?;
                    }
                }
                _ => {
                    for i in -n..=n {
                        for j in -n..=n {
                            if i * i + j * j <= n * n {
                                y[0] = x[0] + i as f64 * step;
                                y[1] = x[1] + j as f64 * step;
                                consider(&y[..2])?;
                            }
                        }
                    }
                    let arcs = ((2.0 * std::f64::consts::PI * n as f64).ceil() as usize).max(8);
                    for k in 0..arcs {
                        let theta = 2.0 * std::f64::consts::PI * k as f64 / arcs as f64;
                        y[0] = x[0] + radius * theta.cos();
                        y[1] = x[1] + radius * theta.sin();
                        consider(&y[..2])?;
                    }
                }
            }
        }
        let weight = if sup {
            (-self.alpha * t).exp()
        } else {
            (self.alpha * t).exp()
        };
        Ok(weight * best)
    }
}

/// `alpha * w((x - x0 + b (t - t0))/alpha, (t - t0)/alpha)` on the cylinder
/// `B_alpha(x0) x [t0 - alpha, t0]`.
#[derive(Debug, Clone)]
pub struct Rescaled<W> {
    inner: W,
    alpha: f64,
    x0: Vec<f64>,
    t0: f64,
    drift: Vec<f64>,
    margin: f64,
}

pub fn hyperbolic_rescale<W: SpaceTime>(w: W, rescaling: &Rescaling) -> Result<Rescaled<W>> {
    let alpha = rescaling.alpha;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(PmedError::InvalidParameter {
            name: "alpha",
            value: alpha,
            reason: "must lie in (0, 1]",
        });
    }
    if rescaling.x0.len() != rescaling.drift.len() {
        return Err(PmedError::InvalidInput("x0 and drift dimensions differ".into()));
    }
    Ok(Rescaled {
        inner: w,
        alpha,
        x0: rescaling.x0.clone(),
        t0: rescaling.t0,
        drift: rescaling.drift.clone(),
        margin: 0.0,
    })
}

impl<W> Rescaled<W> {
    /// Accept evaluations up to `margin` outside the cylinder (in space and time).
    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin.max(0.0);
        self
    }
}

impl<W: SpaceTime> SpaceTime for Rescaled<W> {
    fn eval(&self, x: &[f64], t: f64) -> Result<f64> {
        let dist = x
            .iter()
            .zip(&self.x0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let slack = self.margin + 1e-12 * self.alpha;
        let in_time = t >= self.t0 - self.alpha - slack && t <= self.t0 + slack;
        if x.len() != self.x0.len() || dist > self.alpha + slack || !in_time {
            return Err(PmedError::OutOfCylinder { x: x.to_vec(), t });
        }
        let dt = t - self.t0;
        let mut y = [0.0; 2];
        for k in 0..x.len() {
            y[k] = (x[k] - self.x0[k] + self.drift[k] * dt) / self.alpha;
        }
        Ok(self.alpha * self.inner.eval(&y[..x.len()], dt / self.alpha)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Sub,
    Super,
}

/// Space-time sampling region: an axis-aligned box, optionally cut down to
/// a ball.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub t_lo: f64,
    pub t_hi: f64,
    pub ball: Option<(Vec<f64>, f64)>,
}

impl SampleRegion {
    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>, t_lo: f64, t_hi: f64) -> Self {
        Self {
            lo,
            hi,
            t_lo,
            t_hi,
            ball: None,
        }
    }

    /// `B_radius(center) x [t_lo, t_hi]`.
    pub fn cylinder(center: &[f64], radius: f64, t_lo: f64, t_hi: f64) -> Self {
        Self {
            lo: center.iter().map(|c| c - radius).collect(),
            hi: center.iter().map(|c| c + radius).collect(),
            t_lo,
            t_hi,
            ball: Some((center.to_vec(), radius)),
        }
    }

    fn points(&self, h: f64) -> Vec<[f64; 2]> {
        let dim = self.lo.len();
        let counts: Vec<usize> = (0..dim)
            .map(|k| ((self.hi[k] - self.lo[k]) / h + 1e-9).floor() as usize + 1)
            .collect();
        let ny = if dim == 2 { counts[1] } else { 1 };
        let mut out = Vec::new();
        for j in 0..ny {
            for i in 0..counts[0] {
                let p = [
                    self.lo[0] + i as f64 * h,
                    if dim == 2 { self.lo[1] + j as f64 * h } else { 0.0 },
                ];
                if let Some((c, r)) = &self.ball {
                    if norm(&[p[0] - c[0], if dim == 2 { p[1] - c[1] } else { 0.0 }]) > *r {
                        continue;
                    }
                }
                out.push(p);
            }
        }
        out
    }

    fn times(&self, count: usize) -> Vec<f64> {
        if count <= 1 || self.t_hi <= self.t_lo {
            return vec![self.t_lo];
        }
        (0..count)
            .map(|j| self.t_lo + (self.t_hi - self.t_lo) * j as f64 / (count - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualOptions {
    /// Spatial sampling step and finite-difference spacing.
    pub h_s: f64,
    pub time_samples: usize,
    /// Tolerance constant; `None` means `50 (1 + sup u + sup |grad u|)`.
    pub c_tol: Option<f64>,
    pub grad_floor: f64,
}

impl ResidualOptions {
    pub fn new(h_s: f64) -> Self {
        Self {
            h_s,
            time_samples: 11,
            c_tol: None,
            grad_floor: 1e-6,
        }
    }

    pub fn with_time_samples(mut self, n: usize) -> Self {
        self.time_samples = n;
        self
    }

    pub fn u_floor(&self) -> f64 {
        10.0 * self.h_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub check: Check,
    /// Lattice points visited (all times).
    pub samples: usize,
    /// Points with `u > u_floor` and a positive difference stencil.
    pub interior: usize,
    /// Interior points with a lattice neighbour at or below `u_floor`.
    pub boundary: usize,
    pub max_interior: f64,
    pub min_interior: f64,
    /// Extremes of `u_t - |grad u|^2 - grad Phi . grad u` at boundary points.
    pub max_boundary: f64,
    pub min_boundary: f64,
    /// Extremes of the velocity form `V - (|grad u| + grad Phi . grad u/|grad u|)`.
    pub max_velocity_defect: f64,
    pub min_velocity_defect: f64,
    pub tolerance: f64,
    pub eval_failures: usize,
    pub passed: bool,
}

impl ResidualReport {
    /// Signed worst interior residual in the direction the check forbids.
    pub fn worst_interior(&self) -> f64 {
        match self.check {
            Check::Sub => self.max_interior,
            Check::Super => self.min_interior,
        }
    }

    pub fn worst_boundary(&self) -> f64 {
        match self.check {
            Check::Sub => self.max_boundary,
            Check::Super => self.min_boundary,
        }
    }
}

struct PointResidual {
    interior: f64,
    boundary: Option<(f64, f64)>,
    u: f64,
    grad: f64,
}

enum Sample {
    Skipped,
    Failed,
    Used(PointResidual),
}

/// Samples the candidate on `region` and checks the sub- or supersolution
/// inequality with centred differences.
pub fn residual_pmed(
    candidate: &dyn SpaceTime,
    pot: &Potential,
    m: f64,
    check: Check,
    region: &SampleRegion,
    opts: &ResidualOptions,
) -> ResidualReport {
    let h = opts.h_s;
    let dim = region.lo.len();
    let dt = h * h;
    let u_floor = opts.u_floor();
    let points = region.points(h);
    let times = region.times(opts.time_samples);
    let jobs: Vec<([f64; 2], f64)> = times
        .iter()
        .flat_map(|&t| points.iter().map(move |&p| (p, t)))
        .collect();

    let eval_point = |(p, t): &([f64; 2], f64)| -> Sample {
        let x = &p[..dim];
        let at = |y: &[f64], s: f64| candidate.eval(y, s);
        let run = || -> Result<Option<PointResidual>> {
            let u = at(x, *t)?;
            if u <= u_floor {
                return Ok(None);
            }
            let mut grad = [0.0; 2];
            let mut lap = 0.0;
            let mut stencil_min = f64::INFINITY;
            let mut y = *p;
            for k in 0..dim {
                y[k] = p[k] + h;
                let up = at(&y[..dim], *t)?;
                y[k] = p[k] - h;
                let um = at(&y[..dim], *t)?;
                y[k] = p[k];
                stencil_min = stencil_min.min(up).min(um);
                grad[k] = (up - um) / (2.0 * h);
                lap += (up - 2.0 * u + um) / (h * h);
            }
            if stencil_min <= 0.0 {
                return Ok(None);
            }
            let ut = (at(x, t + dt)? - at(x, t - dt)?) / (2.0 * dt);
            let mut gphi = [0.0; 2];
            pot.grad_into(x, &mut gphi[..dim]);
            let g2: f64 = grad[..dim].iter().map(|g| g * g).sum();
            let gdot: f64 = (0..dim).map(|k| grad[k] * gphi[k]).sum();
            let interior = ut - (m - 1.0) * u * lap - g2 - gdot - (m - 1.0) * u * pot.laplacian(x);
            let gn = g2.sqrt();
            let boundary = (stencil_min <= u_floor && gn > opts.grad_floor).then(|| {
                let b = ut - g2 - gdot;
                (b, b / gn)
            });
            Ok(Some(PointResidual {
                interior,
                boundary,
                u,
                grad: gn,
            }))
        };
        match run() {
            Ok(Some(r)) => Sample::Used(r),
            Ok(None) => Sample::Skipped,
            Err(_) => Sample::Failed,
        }
    };

    let results: Vec<Sample> = jobs.par_iter().map(eval_point).collect();

    let mut report = ResidualReport {
        check,
        samples: jobs.len(),
        interior: 0,
        boundary: 0,
        max_interior: f64::NEG_INFINITY,
        min_interior: f64::INFINITY,
        max_boundary: f64::NEG_INFINITY,
        min_boundary: f64::INFINITY,
        max_velocity_defect: f64::NEG_INFINITY,
        min_velocity_defect: f64::INFINITY,
        tolerance: 0.0,
        eval_failures: 0,
        passed: false,
    };
    let mut sup_u: f64 = 0.0;
    let mut sup_grad: f64 = 0.0;
    for s in &results {
        match s {
            Sample::Skipped => {}
            Sample::Failed => report.eval_failures += 1,
            Sample::Used(r) => {
                report.interior += 1;
                report.max_interior = report.max_interior.max(r.interior);
                report.min_interior = report.min_interior.min(r.interior);
                sup_u = sup_u.max(r.u);
                sup_grad = sup_grad.max(r.grad);
                if let Some((b, v)) = r.boundary {
                    report.boundary += 1;
                    report.max_boundary = report.max_boundary.max(b);
                    report.min_boundary = report.min_boundary.min(b);
                    report.max_velocity_defect = report.max_velocity_defect.max(v);
                    report.min_velocity_defect = report.min_velocity_defect.min(v);
                }
            }
        }
    }
    let c_tol = opts.c_tol.unwrap_or(50.0 * (1.0 + sup_u + sup_grad));
    report.tolerance = c_tol * h;
    let tol = report.tolerance;
    let within = match check {
        Check::Sub => {
            report.max_interior <= tol && (report.boundary == 0 || report.max_boundary <= tol)
        }
        Check::Super => {
            report.min_interior >= -tol && (report.boundary == 0 || report.min_boundary >= -tol)
        }
    };
    report.passed = within && report.interior > 0 && report.eval_failures == 0;
    report
}
