//! Newmark time integration of the linear variable-coefficient wave equation
//! and of Westervelt's equation, the latter through a fixed-point iteration
//! on the acceleration in every time step.
//!
//! Both equations are written as
//!
//! ```text
//! (alpha u_tt, phi) + c^2 (grad u, grad phi) + b (grad u_t, grad phi)
//!     + (beta u_t, phi) + c (u_t, phi)_{absorbing} = (f, phi) + c^2 (g, phi)_{source}
//! ```
//!
//! with `alpha = 1 - 2k u`, `beta = -2k u_t` for Westervelt. Each step solves
//! one system of the form
//! `[M(alpha) + gamma dt C + beta_N dt^2 c^2 K] a = F - c^2 K u* - C v*`
//! with `C = b K + c B + M(beta)`.

mod newmark;
mod problems;

use std::sync::Arc;

use log::debug;

pub use newmark::{newmark_correct, newmark_predict, NewmarkParams};
pub use problems::{channel_initial_data, focus_source, mms_exact, ChannelData, FocusData, MmsCase};

use crate::assembly::{self, boundary_mass, interpolate_at, neumann_load, stiffness};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fespace::FeSpace;
use crate::linalg::{pcg_solve, SolverConfig, SparseMatrix};
use crate::mesh::{BoundaryTag, Point};

/// Degeneracy threshold on `1 - 2k max|u|`.
pub const DEFAULT_MARGIN_MIN: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialParams {
    /// Speed of sound (m/s).
    pub c: f64,
    /// Mass density (kg/m^3).
    pub rho: f64,
    /// Sound diffusivity (m^2/s).
    pub b: f64,
    /// Coefficient of nonlinearity.
    pub beta_a: f64,
}

impl MaterialParams {
    pub fn new(c: f64, rho: f64, b: f64, beta_a: f64) -> Result<Self> {
        if !(c > 0.0 && rho > 0.0 && b >= 0.0 && beta_a.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "material parameters need c > 0, rho > 0, b >= 0 (got c={c}, rho={rho}, b={b}, beta_a={beta_a})"
            )));
        }
        Ok(MaterialParams { c, rho, b, beta_a })
    }

    pub fn water() -> Self {
        MaterialParams { c: 1500.0, rho: 1000.0, b: 6e-9, beta_a: 3.5 }
    }

    /// `k = beta_a / (rho c^2)` (1/Pa).
    pub fn k(&self) -> f64 {
        self.beta_a / (self.rho * self.c * self.c)
    }

    /// Pressure at which `1 - 2k u` vanishes.
    pub fn degeneracy_pressure(&self) -> f64 {
        1.0 / (2.0 * self.k())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub final_time: f64,
    pub n_points: usize,
}

impl TimeGrid {
    pub fn new(final_time: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 || !(final_time > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "time grid needs T > 0 and at least 2 points (got T={final_time}, n={n_points})"
            )));
        }
        Ok(TimeGrid { final_time, n_points })
    }

    pub fn dt(&self) -> f64 {
        self.final_time / (self.n_points - 1) as f64
    }

    pub fn n_steps(&self) -> usize {
        self.n_points - 1
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Linearization {
    /// `2k u_t^2` linearized as `2k v^(i) u_t^(i+1)` and moved to the velocity operator.
    Implicit,
    /// `2k (v^(i))^2` kept on the right-hand side.
    Explicit,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedPointConfig {
    /// Relative tolerance on the change of the acceleration.
    pub tol: f64,
    pub max_iter: usize,
    /// Absolute floor (Pa/s^2) for the relative convergence test.
    pub floor: f64,
    pub linearization: Linearization,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig { tol: 1e-8, max_iter: 50, floor: 1.0, linearization: Linearization::Implicit }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    pub newmark: NewmarkParams,
    pub pcg: SolverConfig,
    pub fixed_point: FixedPointConfig,
    pub margin_min: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            newmark: NewmarkParams::default(),
            pcg: SolverConfig::default(),
            fixed_point: FixedPointConfig::default(),
            margin_min: DEFAULT_MARGIN_MIN,
        }
    }
}

/// Displacement (pressure), velocity and acceleration coefficients at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveState {
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
}

impl WaveState {
    pub fn zeros(n: usize) -> Self {
        WaveState { t: 0.0, u: vec![0.0; n], v: vec![0.0; n], a: vec![0.0; n] }
    }

    pub fn max_abs_u(&self) -> f64 {
        self.u.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

pub type SpaceTimeFn = Arc<dyn Fn(Point, f64) -> f64 + Send + Sync>;

/// Right-hand side of the linear equation.
#[derive(Clone)]
pub enum Forcing {
    None,
    /// `f(x, t)`, integrated against the basis at every step.
    Field(SpaceTimeFn),
    /// The load vector `F(t)` itself.
    Assembled(Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>),
}

impl Forcing {
    fn load(&self, space: &FeSpace, exec: Exec, t: f64) -> Option<Vec<f64>> {
        match self {
            Forcing::None => None,
            Forcing::Field(f) => {
                let quad = space.quadrature();
                Some(assembly::load_by(space, exec, |e, q| f(quad.point(e, q), t)))
            }
            Forcing::Assembled(f) => Some(f(t)),
        }
    }
}

/// Coefficients of the linear variable-coefficient equation.
#[derive(Clone)]
pub struct LinearCoefficients {
    pub alpha: SpaceTimeFn,
    pub beta: SpaceTimeFn,
    pub forcing: Forcing,
}

impl LinearCoefficients {
    /// `alpha = 1`, `beta = 0`, no forcing.
    pub fn unit() -> Self {
        LinearCoefficients { alpha: Arc::new(|_, _| 1.0), beta: Arc::new(|_, _| 0.0), forcing: Forcing::None }
    }
}

#[derive(Clone)]
pub enum Model {
    Westervelt,
    Linear(LinearCoefficients),
}

/// Spatially constant Neumann flux `g(t)` on the source boundary.
#[derive(Clone)]
pub struct NeumannSource {
    /// `int_{Gamma_N} phi_i ds`.
    pub trace: Vec<f64>,
    pub g: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

/// Time-independent operators of one discretization level.
#[derive(Clone)]
pub struct Operators {
    pub space: Arc<FeSpace>,
    pub material: MaterialParams,
    pub stiffness: SparseMatrix,
    /// Boundary mass on absorbing facets.
    pub absorbing: SparseMatrix,
    /// `b K + c B_absorbing`.
    pub damping: SparseMatrix,
    pub source: Option<NeumannSource>,
}

impl Operators {
    pub fn new(
        space: Arc<FeSpace>,
        material: MaterialParams,
        source: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    ) -> Self {
        let k = stiffness(&space);
        let absorbing = boundary_mass(&space, BoundaryTag::Absorbing);
        let mut damping = k.clone();
        damping.scale(material.b);
        damping.add_scaled(material.c, &absorbing).expect("shared pattern");
        let source = source.map(|g| NeumannSource { trace: neumann_load(&space, BoundaryTag::NeumannSource, 1.0), g });
        Operators { space, material, stiffness: k, absorbing, damping, source }
    }

    pub fn n_dofs(&self) -> usize {
        self.space.n_dofs()
    }

    /// Boundary source contribution `c^2 g(t) trace`, added into `rhs`.
    fn add_source(&self, t: f64, rhs: &mut [f64]) {
        if let Some(src) = &self.source {
            let s = self.material.c * self.material.c * (src.g)(t);
            for (r, tr) in rhs.iter_mut().zip(&src.trace) {
                *r += s * tr;
            }
        }
    }

    /// `c^2 beta_N dt^2 K + gamma dt (b K + c B)`.
    fn static_part(&self, dt: f64, p: NewmarkParams) -> SparseMatrix {
        let mut s = self.damping.clone();
        s.scale(p.gamma * dt);
        let c2 = self.material.c * self.material.c;
        s.add_scaled(c2 * p.beta * dt * dt, &self.stiffness).expect("shared pattern");
        s
    }
}

/// `1 - 2k max_i |u_i|`.
pub fn nondegeneracy_check(u: &[f64], k: f64) -> f64 {
    if k == 0.0 {
        return 1.0;
    }
    let m = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    1.0 - 2.0 * k * m
}

fn check_margin(u: &[f64], k: f64, margin_min: f64) -> Result<f64> {
    let margin = nondegeneracy_check(u, k);
    if !(margin > margin_min) {
        return Err(Error::DegenerateState { margin, threshold: margin_min });
    }
    Ok(margin)
}

/// One linear solve for the acceleration.
///
/// `mass_weight(e, q)` is the weight of the `a`-mass term, `velocity_term`
/// the vector `(beta v*, phi)` (already integrated), and `static_part` the
/// precomputed `gamma dt D + beta_N dt^2 c^2 K` (`None` for the initial
/// acceleration, where the mass matrix alone is inverted).
#[allow(clippy::too_many_arguments)]
fn solve_acceleration<W>(
    ops: &Operators,
    settings: &SolverSettings,
    mass_weight: W,
    static_part: Option<&SparseMatrix>,
    mut rhs: Vec<f64>,
    guess: &[f64],
) -> Result<Vec<f64>>
where
    W: Fn(usize, usize) -> f64 + Sync + Send,
{
    let space = &ops.space;
    let mut a_eff = assembly::weighted_mass_by(space, settings.pcg.exec, mass_weight);
    if let Some(s) = static_part {
        a_eff.add_scaled(1.0, s)?;
    }
    assembly::apply_dirichlet_mask(&mut a_eff, &mut rhs, space.dirichlet_mask());
    let mut x = guess.to_vec();
    space.zero_dirichlet(&mut x);
    pcg_solve(&a_eff, &rhs, &mut x, &settings.pcg)?;
    Ok(x)
}

/// `rhs = F - c^2 K u - D v`, with `D = b K + c B`.
fn base_rhs(ops: &Operators, exec: Exec, u: &[f64], v: &[f64], t: f64, forcing: Option<Vec<f64>>) -> Result<Vec<f64>> {
    let n = ops.n_dofs();
    let mut ku = vec![0.0; n];
    let mut dv = vec![0.0; n];
    ops.stiffness.spmv_into_with(exec, u, &mut ku)?;
    ops.damping.spmv_into_with(exec, v, &mut dv)?;
    let c2 = ops.material.c * ops.material.c;
    let mut rhs = forcing.unwrap_or_else(|| vec![0.0; n]);
    for i in 0..n {
        rhs[i] -= c2 * ku[i] + dv[i];
    }
    ops.add_source(t, &mut rhs);
    Ok(rhs)
}

/// Consistent initial acceleration from the equation at `t = 0`.
pub fn initial_acceleration(
    ops: &Operators,
    model: &Model,
    u0: &[f64],
    v0: &[f64],
    settings: &SolverSettings,
) -> Result<Vec<f64>> {
    let space = &ops.space;
    let exec = settings.pcg.exec;
    let n = ops.n_dofs();
    if u0.len() != n || v0.len() != n {
        return Err(Error::InvalidArgument("initial data length does not match the space".into()));
    }
    let quad = space.quadrature();
    match model {
        Model::Westervelt => {
            let k = ops.material.k();
            check_margin(u0, k, settings.margin_min)?;
            let mut rhs = base_rhs(ops, exec, u0, v0, 0.0, None)?;
            // + 2k (v0^2, phi)
            let nl = assembly::load_by(space, exec, |e, q| {
                let v = interpolate_at(space, v0, e, q);
                v * v
            });
            for (r, w) in rhs.iter_mut().zip(&nl) {
                *r += 2.0 * k * w;
            }
            let alpha: Vec<f64> = u0.iter().map(|u| 1.0 - 2.0 * k * u).collect();
            solve_acceleration(ops, settings, |e, q| interpolate_at(space, &alpha, e, q), None, rhs, &vec![0.0; n])
        }
        Model::Linear(coef) => {
            check_alpha(space, &*coef.alpha, 0.0)?;
            let forcing = coef.forcing.load(space, exec, 0.0);
            let mut rhs = base_rhs(ops, exec, u0, v0, 0.0, forcing)?;
            let bv = assembly::load_by(space, exec, |e, q| {
                (coef.beta)(quad.point(e, q), 0.0) * interpolate_at(space, v0, e, q)
            });
            for (r, w) in rhs.iter_mut().zip(&bv) {
                *r -= w;
            }
            solve_acceleration(ops, settings, |e, q| (coef.alpha)(quad.point(e, q), 0.0), None, rhs, &vec![0.0; n])
        }
    }
}

fn check_alpha(space: &FeSpace, alpha: &(dyn Fn(Point, f64) -> f64 + Send + Sync), t: f64) -> Result<()> {
    let quad = space.quadrature();
    let n = space.mesh().n_elements() * quad.n_qp();
    let min = (0..n).map(|k| alpha(quad.point(k / quad.n_qp(), k % quad.n_qp()), t)).fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::DegenerateState { margin: min, threshold: 0.0 });
    }
    Ok(())
}

/// One Newmark step of the linear variable-coefficient equation.
pub fn linear_step(
    ops: &Operators,
    state: &WaveState,
    coef: &LinearCoefficients,
    dt: f64,
    settings: &SolverSettings,
) -> Result<WaveState> {
    let static_part = ops.static_part(dt, settings.newmark);
    linear_step_with(ops, state, coef, dt, settings, &static_part)
}

fn linear_step_with(
    ops: &Operators,
    state: &WaveState,
    coef: &LinearCoefficients,
    dt: f64,
    settings: &SolverSettings,
    static_part: &SparseMatrix,
) -> Result<WaveState> {
    let space = &ops.space;
    let exec = settings.pcg.exec;
    let p = settings.newmark;
    let t = state.t + dt;
    check_alpha(space, &*coef.alpha, t)?;
    let (u_star, v_star) = newmark_predict(&state.u, &state.v, &state.a, dt, p);
    let forcing = coef.forcing.load(space, exec, t);
    let mut rhs = base_rhs(ops, exec, &u_star, &v_star, t, forcing)?;
    let quad = space.quadrature();
    let bv =
        assembly::load_by(space, exec, |e, q| (coef.beta)(quad.point(e, q), t) * interpolate_at(space, &v_star, e, q));
    for (r, w) in rhs.iter_mut().zip(&bv) {
        *r -= w;
    }
    let gdt = p.gamma * dt;
    let weight = |e: usize, q: usize| {
        let x = quad.point(e, q);
        (coef.alpha)(x, t) + gdt * (coef.beta)(x, t)
    };
    let a = solve_acceleration(ops, settings, weight, Some(static_part), rhs, &state.a)?;
    let (u, v) = newmark_correct(&u_star, &v_star, &a, dt, p);
    Ok(WaveState { t, u, v, a })
}

/// One Newmark step of Westervelt's equation. Returns the new state and the
/// number of fixed-point iterations (linear solves).
pub fn westervelt_step(
    ops: &Operators,
    state: &WaveState,
    dt: f64,
    settings: &SolverSettings,
) -> Result<(WaveState, usize)> {
    let static_part = ops.static_part(dt, settings.newmark);
    westervelt_step_with(ops, state, dt, settings, &static_part)
}

fn westervelt_step_with(
    ops: &Operators,
    state: &WaveState,
    dt: f64,
    settings: &SolverSettings,
    static_part: &SparseMatrix,
) -> Result<(WaveState, usize)> {
    let space = &ops.space;
    let exec = settings.pcg.exec;
    let p = settings.newmark;
    let fp = settings.fixed_point;
    let k = ops.material.k();
    let t = state.t + dt;
    let n = ops.n_dofs();

    let (u_star, v_star) = newmark_predict(&state.u, &state.v, &state.a, dt, p);
    let base = base_rhs(ops, exec, &u_star, &v_star, t, None)?;

    let mut a_it = state.a.clone();
    let mut change = f64::INFINITY;
    for iter in 1..=fp.max_iter {
        let (u_it, v_it) = newmark_correct(&u_star, &v_star, &a_it, dt, p);
        check_margin(&u_it, k, settings.margin_min)?;

        let mut rhs = base.clone();
        let a_new = match fp.linearization {
            Linearization::Implicit => {
                // beta = -2k v^(i): rhs gets +2k (v^(i) v*, phi)
                let bv = assembly::load_by(space, exec, |e, q| {
                    interpolate_at(space, &v_it, e, q) * interpolate_at(space, &v_star, e, q)
                });
                for (r, w) in rhs.iter_mut().zip(&bv) {
                    *r += 2.0 * k * w;
                }
                let gdt = p.gamma * dt;
                let weight: Vec<f64> = (0..n).map(|i| 1.0 - 2.0 * k * (u_it[i] + gdt * v_it[i])).collect();
                solve_acceleration(
                    ops,
                    settings,
                    |e, q| interpolate_at(space, &weight, e, q),
                    Some(static_part),
                    rhs,
                    &a_it,
                )?
            }
            Linearization::Explicit => {
                let vv = assembly::load_by(space, exec, |e, q| {
                    let v = interpolate_at(space, &v_it, e, q);
                    v * v
                });
                for (r, w) in rhs.iter_mut().zip(&vv) {
                    *r += 2.0 * k * w;
                }
                let alpha: Vec<f64> = u_it.iter().map(|u| 1.0 - 2.0 * k * u).collect();
                solve_acceleration(
                    ops,
                    settings,
                    |e, q| interpolate_at(space, &alpha, e, q),
                    Some(static_part),
                    rhs,
                    &a_it,
                )?
            }
        };

        change = exec.sum(n, |i| (a_new[i] - a_it[i]).powi(2)).sqrt();
        let scale = exec.norm2(&a_new).max(fp.floor);
        a_it = a_new;
        if change <= fp.tol * scale {
            let (u, v) = newmark_correct(&u_star, &v_star, &a_it, dt, p);
            check_margin(&u, k, settings.margin_min)?;
            return Ok((WaveState { t, u, v, a: a_it }, iter));
        }
    }
    Err(Error::FixedPointDivergence { iterations: fp.max_iter, change })
}

/// Per-step diagnostics, one row of the run summary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub fp_iters: usize,
    pub max_abs_u: f64,
    pub margin: f64,
}

/// A fully specified run on one discretization level.
#[derive(Clone)]
pub struct Problem {
    pub ops: Operators,
    pub model: Model,
    pub time: TimeGrid,
    pub settings: SolverSettings,
    pub u0: Vec<f64>,
    pub v0: Vec<f64>,
}

/// Time-marching state machine for one [`Problem`].
pub struct WaveSolver {
    problem: Problem,
    static_part: SparseMatrix,
    state: WaveState,
    step: usize,
    last_iters: usize,
}

impl WaveSolver {
    pub fn new(problem: Problem) -> Result<Self> {
        let a0 = initial_acceleration(&problem.ops, &problem.model, &problem.u0, &problem.v0, &problem.settings)
            .map_err(|e| e.at_step(0))?;
        let state = WaveState { t: 0.0, u: problem.u0.clone(), v: problem.v0.clone(), a: a0 };
        let static_part = problem.ops.static_part(problem.time.dt(), problem.settings.newmark);
        Ok(WaveSolver { problem, static_part, state, step: 0, last_iters: 0 })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.problem.ops.space
    }

    pub fn state(&self) -> &WaveState {
        &self.state
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.problem.time.n_steps()
    }

    fn k(&self) -> f64 {
        match self.problem.model {
            Model::Westervelt => self.problem.ops.material.k(),
            Model::Linear(_) => 0.0,
        }
    }

    pub fn record(&self) -> StepRecord {
        StepRecord {
            step: self.step,
            t: self.state.t,
            fp_iters: self.last_iters,
            max_abs_u: self.state.max_abs_u(),
            margin: nondegeneracy_check(&self.state.u, self.k()),
        }
    }

    /// Advances one time step.
    pub fn advance(&mut self) -> Result<StepRecord> {
        if self.is_finished() {
            return Err(Error::InvalidArgument("run already reached the final time".into()));
        }
        let pb = &self.problem;
        let dt = pb.time.dt();
        let next = self.step + 1;
        let (mut state, iters) = match &pb.model {
            Model::Westervelt => westervelt_step_with(&pb.ops, &self.state, dt, &pb.settings, &self.static_part),
            Model::Linear(coef) => {
                linear_step_with(&pb.ops, &self.state, coef, dt, &pb.settings, &self.static_part).map(|s| (s, 1))
            }
        }
        .map_err(|e| e.at_step(next))?;
        // Exact grid time, free of accumulated rounding.
        state.t = pb.time.time(next);
        self.state = state;
        self.step = next;
        self.last_iters = iters;
        debug!("step {next}: {iters} iterations, max|u| = {:.4e}", self.state.max_abs_u());
        Ok(self.record())
    }
}

/// Snapshots and per-step diagnostics of a run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub space: Arc<FeSpace>,
    pub snapshots: Vec<WaveState>,
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn max_abs_u(&self) -> f64 {
        self.steps.iter().map(|s| s.max_abs_u).fold(0.0, f64::max)
    }

    pub fn min_margin(&self) -> f64 {
        self.steps.iter().map(|s| s.margin).fold(f64::INFINITY, f64::min)
    }
}

/// Runs `problem` to the final time, calling `observe` after the initial
/// state and after every step.
pub fn run_with<F>(problem: Problem, mut observe: F) -> Result<Vec<StepRecord>>
where
    F: FnMut(&WaveSolver) -> Result<()>,
{
    let mut solver = WaveSolver::new(problem)?;
    let mut records = Vec::with_capacity(solver.problem.time.n_points);
    records.push(solver.record());
    observe(&solver)?;
    while !solver.is_finished() {
        records.push(solver.advance()?);
        observe(&solver)?;
    }
    Ok(records)
}

/// Runs `problem` and keeps every `stride`-th state (plus the final one).
pub fn run(problem: Problem, stride: usize) -> Result<Trajectory> {
    let stride = stride.max(1);
    let space = problem.ops.space.clone();
    let n_steps = problem.time.n_steps();
    let mut snapshots = Vec::new();
    let steps = run_with(problem, |s| {
        if s.step_index() % stride == 0 || s.step_index() == n_steps {
            snapshots.push(s.state().clone());
        }
        Ok(())
    })?;
    Ok(Trajectory { space, snapshots, steps })
}
