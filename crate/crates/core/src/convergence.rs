//! Space-time error norms, convergence orders, the quantity of interest
//! `q(u_h) = max_t |u_h(t)|_{L2}` and the power-law fit `alpha + beta h^gamma`.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::sync::Arc;

use crate::assembly::{mass, stiffness};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fespace::{transfer_matrix, ElementQuadrature, FeFunction, FeSpace, QuadratureRule};
use crate::linalg::SparseMatrix;
use crate::mesh::Point;
use crate::wavesolver::{Trajectory, WaveState};

/// Mass and stiffness matrices of a space, for `L2` norms and `H1` seminorms.
#[derive(Clone, Debug)]
pub struct Norms {
    space: Arc<FeSpace>,
    mass: SparseMatrix,
    stiffness: SparseMatrix,
    exec: Exec,
}

impl Norms {
    pub fn new(space: Arc<FeSpace>) -> Self {
        let mass = mass(&space);
        let stiffness = stiffness(&space);
        Norms { space, mass, stiffness, exec: Exec::default() }
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    /// `sqrt(x^T M x)`.
    pub fn l2(&self, x: &[f64]) -> f64 {
        form(&self.mass, self.exec, x)
    }

    /// `sqrt(x^T K x)`.
    pub fn h1(&self, x: &[f64]) -> f64 {
        form(&self.stiffness, self.exec, x)
    }
}

fn form(a: &SparseMatrix, exec: Exec, x: &[f64]) -> f64 {
    let mut y = vec![0.0; x.len()];
    a.spmv_into_with(exec, x, &mut y).expect("vector length matches the space");
    // Round-off can make x^T A x slightly negative for x in the kernel.
    exec.dot(x, &y).max(0.0).sqrt()
}

pub fn l2_norm(f: &FeFunction) -> f64 {
    form(&mass(f.space()), Exec::default(), f.dofs())
}

pub fn h1_seminorm(f: &FeFunction) -> f64 {
    form(&stiffness(f.space()), Exec::default(), f.dofs())
}

/// The five error norms of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NormReport {
    pub linf_l2_u: f64,
    pub linf_h1_u: f64,
    pub linf_l2_v: f64,
    pub linf_h1_v: f64,
    pub l2l2_a: f64,
}

impl NormReport {
    pub const NAMES: [&'static str; 5] = ["e_LinfL2_u", "e_LinfH1_u", "e_LinfL2_v", "e_LinfH1_v", "e_L2L2_a"];

    pub fn values(&self) -> [f64; 5] {
        [self.linf_l2_u, self.linf_h1_u, self.linf_l2_v, self.linf_h1_v, self.l2l2_a]
    }

    pub fn is_zero(&self) -> bool {
        self.values().iter().all(|&v| v == 0.0)
    }
}

/// Pointwise-in-time errors at one snapshot.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SnapshotErrors {
    pub l2_u: f64,
    pub h1_u: f64,
    pub l2_v: f64,
    pub h1_v: f64,
    pub l2_a: f64,
}

/// Streaming accumulation of [`NormReport`]: maxima over snapshots and a
/// trapezoidal rule over the snapshot times for the acceleration.
#[derive(Clone, Debug, Default)]
pub struct ErrorAccumulator {
    report: NormReport,
    integral: f64,
    last: Option<(f64, f64)>,
}

impl ErrorAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: f64, e: SnapshotErrors) {
        let r = &mut self.report;
        r.linf_l2_u = r.linf_l2_u.max(e.l2_u);
        r.linf_h1_u = r.linf_h1_u.max(e.h1_u);
        r.linf_l2_v = r.linf_l2_v.max(e.l2_v);
        r.linf_h1_v = r.linf_h1_v.max(e.h1_v);
        let a2 = e.l2_a * e.l2_a;
        if let Some((t0, a0)) = self.last {
            self.integral += 0.5 * (t - t0) * (a0 + a2);
        }
        self.last = Some((t, a2));
    }

    pub fn finish(&self) -> NormReport {
        NormReport { l2l2_a: self.integral.sqrt(), ..self.report }
    }
}

/// Compares runs on (possibly) different spaces in a common fine space.
#[derive(Clone, Debug)]
pub struct Comparator {
    norms: Arc<Norms>,
    transfer: Option<SparseMatrix>,
}

impl Comparator {
    /// `transfer` from `coarse` into the space of `norms`; identity when the spaces coincide.
    pub fn new(coarse: &Arc<FeSpace>, norms: Arc<Norms>) -> Result<Self> {
        let transfer =
            if Arc::ptr_eq(coarse, norms.space()) { None } else { Some(transfer_matrix(coarse, norms.space())?) };
        Ok(Comparator { norms, transfer })
    }

    fn lift(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.transfer {
            Some(p) => p.spmv(x),
            None => Ok(x.to_vec()),
        }
    }

    pub fn errors(&self, coarse: &WaveState, reference: &WaveState) -> Result<SnapshotErrors> {
        let diff = |x: &[f64], y: &[f64]| -> Result<Vec<f64>> {
            let mut d = self.lift(x)?;
            if d.len() != y.len() {
                return Err(Error::InvalidArgument("reference state does not match the comparison space".into()));
            }
            for (a, b) in d.iter_mut().zip(y) {
                *a -= b;
            }
            Ok(d)
        };
        let du = diff(&coarse.u, &reference.u)?;
        let dv = diff(&coarse.v, &reference.v)?;
        let da = diff(&coarse.a, &reference.a)?;
        let n = &self.norms;
        Ok(SnapshotErrors { l2_u: n.l2(&du), h1_u: n.h1(&du), l2_v: n.l2(&dv), h1_v: n.h1(&dv), l2_a: n.l2(&da) })
    }
}

fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Errors of `coarse` against `reference`, measured in the reference space.
pub fn trajectory_error(coarse: &Trajectory, reference: &Trajectory) -> Result<NormReport> {
    if coarse.snapshots.len() != reference.snapshots.len()
        || coarse.snapshots.iter().zip(&reference.snapshots).any(|(a, b)| !same_time(a.t, b.t))
    {
        return Err(Error::InvalidArgument("trajectories are not on the same time grid".into()));
    }
    let norms = Arc::new(Norms::new(reference.space.clone()));
    let cmp = Comparator::new(&coarse.space, norms)?;
    let mut acc = ErrorAccumulator::new();
    for (c, r) in coarse.snapshots.iter().zip(&reference.snapshots) {
        acc.push(r.t, cmp.errors(c, r)?);
    }
    Ok(acc.finish())
}

/// `log2(e_prev / e_next)`.
pub fn order(e_prev: f64, e_next: f64) -> Result<f64> {
    if !(e_prev > 0.0 && e_next > 0.0) {
        return Err(Error::InvalidArgument(format!("orders need positive errors, got {e_prev} and {e_next}")));
    }
    Ok((e_prev / e_next).log2())
}

/// Errors per level and the observed orders between consecutive levels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OrderTable {
    pub rows: Vec<(usize, NormReport)>,
}

impl OrderTable {
    pub const HEADER: &'static str = "level,e_LinfL2_u,ord,e_LinfH1_u,ord,e_LinfL2_v,ord,e_LinfH1_v,ord,e_L2L2_a,ord";

    pub fn new(mut rows: Vec<(usize, NormReport)>) -> Self {
        rows.sort_by_key(|r| r.0);
        OrderTable { rows }
    }

    /// Orders of row `i` against row `i - 1`; `None` for the first row,
    /// NaN where an error is zero.
    pub fn orders(&self, i: usize) -> Option<[f64; 5]> {
        if i == 0 || i >= self.rows.len() {
            return None;
        }
        let prev = self.rows[i - 1].1.values();
        let next = self.rows[i].1.values();
        let mut out = [f64::NAN; 5];
        for k in 0..5 {
            out[k] = order(prev[k], next[k]).unwrap_or(f64::NAN);
        }
        Some(out)
    }

    /// Orders of column `k` (see [`NormReport::NAMES`]) for rows `1..`.
    pub fn column_orders(&self, k: usize) -> Vec<f64> {
        (1..self.rows.len()).map(|i| self.orders(i).expect("row exists")[k]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(Self::HEADER);
        s.push('\n');
        for (i, (level, r)) in self.rows.iter().enumerate() {
            let _ = write!(s, "{level}");
            let ords = self.orders(i);
            for (k, e) in r.values().iter().enumerate() {
                let _ = write!(s, ",{e:.6e}");
                match ords {
                    Some(o) if o[k].is_finite() => {
                        let _ = write!(s, ",{:.4}", o[k]);
                    }
                    Some(_) => s.push_str(",NaN"),
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }
}

/// `q(u_h)`: largest `L2` norm of `u` over the snapshots.
pub fn qoi(traj: &Trajectory) -> f64 {
    let norms = Norms::new(traj.space.clone());
    traj.snapshots.iter().map(|s| norms.l2(&s.u)).fold(0.0, f64::max)
}

/// Result of [`fit_power`].
#[derive(Clone, Debug, PartialEq)]
pub struct PowerFit {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Sum of squared residuals.
    pub residual: f64,
    pub iterations: usize,
    /// Residual after every accepted step, starting with the initial guess.
    pub history: Vec<f64>,
}

impl PowerFit {
    pub const HEADER: &'static str = "alpha,beta,gamma,residual";

    pub fn eval(&self, h: f64) -> f64 {
        self.alpha + self.beta * h.powf(self.gamma)
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{:.12e},{:.12e},{:.12e},{:.6e}\n", Self::HEADER, self.alpha, self.beta, self.gamma, self.residual)
    }
}

const FIT_MAX_ITER: usize = 10_000;
const FIT_STEP_TOL: f64 = 1e-10;

fn fit_residual(h: &[f64], q: &[f64], p: [f64; 3]) -> f64 {
    h.iter().zip(q).map(|(&h, &q)| (p[0] + p[1] * h.powf(p[2]) - q).powi(2)).sum()
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if !d.is_finite() || d == 0.0 {
        return None;
    }
    let mut x = [0.0; 3];
    for (k, xk) in x.iter_mut().enumerate() {
        let mut m = a;
        for i in 0..3 {
            m[i][k] = b[i];
        }
        *xk = det(m) / d;
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Starting point for [`fit_power`] read off the data: `alpha` at the finest
/// `h`, `gamma = 2`, and `beta` through the coarsest point.
pub fn fit_start(h: &[f64], q: &[f64]) -> [f64; 3] {
    let by_h = |a: &(usize, &f64), b: &(usize, &f64)| a.1.total_cmp(b.1);
    let (Some((fine, _)), Some((coarse, _))) = (h.iter().enumerate().min_by(by_h), h.iter().enumerate().max_by(by_h))
    else {
        return [1.0, 1.0, 2.0];
    };
    let dh = h[coarse].powi(2) - h[fine].powi(2);
    let beta = if dh > 0.0 { (q[coarse] - q[fine]) / dh } else { 1.0 };
    [q[fine], if beta != 0.0 && beta.is_finite() { beta } else { 1.0 }, 2.0]
}

/// Least-squares fit of `q ~ alpha + beta h^gamma` by Gauss-Newton with
/// Levenberg-Marquardt damping, starting from `start = (alpha, beta, gamma)`.
pub fn fit_power(h: &[f64], q: &[f64], start: [f64; 3]) -> Result<PowerFit> {
    if h.len() != q.len() || h.len() < 3 {
        return Err(Error::InvalidArgument("power fit needs at least three (h, q) pairs".into()));
    }
    if h.iter().any(|&h| !(h > 0.0)) || q.iter().any(|q| !q.is_finite()) {
        return Err(Error::InvalidArgument("power fit needs h > 0 and finite q".into()));
    }
    let scale: f64 = q.iter().map(|q| q * q).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut p = start;
    let mut res = fit_residual(h, q, p);
    let mut history = vec![res];
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < FIT_MAX_ITER {
        iterations += 1;
        if res <= 1e-30 * scale {
            break;
        }
        // J^T J and J^T r with columns (1, h^g, beta h^g ln h).
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (&h, &q) in h.iter().zip(q) {
            let hg = h.powf(p[2]);
            let j = [1.0, hg, p[1] * hg * h.ln()];
            let r = p[0] + p[1] * hg - q;
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let diag_floor = 1e-12 * (jtj[0][0] + jtj[1][1] + jtj[2][2]);
        let mut accepted = false;
        let mut step = [0.0; 3];
        while lambda < 1e20 {
            let mut a = jtj;
            for k in 0..3 {
                a[k][k] += lambda * jtj[k][k].max(diag_floor);
            }
            let Some(d) = solve3(a, [-jtr[0], -jtr[1], -jtr[2]]) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
            let r = fit_residual(h, q, trial);
            if r.is_finite() && r <= res {
                step = d;
                p = trial;
                res = r;
                history.push(r);
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No damping level decreases the residual: a stationary point.
            break;
        }
        let small = (0..3).all(|k| step[k].abs() <= FIT_STEP_TOL * p[k].abs().max(1e-12));
        if small {
            break;
        }
    }
    if !p.iter().all(|v| v.is_finite()) {
        return Err(Error::FitFailure { reason: "parameters diverged".into(), residual: res });
    }
    if iterations >= FIT_MAX_ITER {
        return Err(Error::FitFailure {
            reason: format!("no convergence in {FIT_MAX_ITER} iterations"),
            residual: res,
        });
    }
    Ok(PowerFit { alpha: p[0], beta: p[1], gamma: p[2], residual: res, iterations, history })
}

/// `L2` and `H1`-seminorm distances between a discrete function and an
/// exact one, with a 5-point Gauss rule per direction.
#[derive(Clone, Debug)]
pub struct ExactErrors {
    space: Arc<FeSpace>,
    quad: ElementQuadrature,
}

impl ExactErrors {
    pub fn new(space: Arc<FeSpace>) -> Self {
        let quad = ElementQuadrature::new(space.mesh(), &QuadratureRule::gauss(space.dim(), 5));
        ExactErrors { space, quad }
    }

    /// `(|u_h - u|_{L2}, |u_h - u|_{H1})`.
    pub fn errors<U, G>(&self, dofs: &[f64], u: U, grad: G) -> (f64, f64)
    where
        U: Fn(Point) -> f64 + Sync + Send,
        G: Fn(Point) -> [f64; 2] + Sync + Send,
    {
        let mesh = self.space.mesh();
        let quad = &self.quad;
        let exec = Exec::default();
        let parts = exec.map_collect(mesh.n_elements(), |e| {
            let nodes = mesh.element(e);
            let (mut l2, mut h1) = (0.0, 0.0);
            for q in 0..quad.n_qp() {
                let (mut v, mut g) = (0.0, [0.0; 2]);
                for ((&i, s), dg) in nodes.iter().zip(quad.shape(q)).zip(quad.grads(e, q)) {
                    v += s * dofs[i];
                    g[0] += dg[0] * dofs[i];
                    g[1] += dg[1] * dofs[i];
                }
                let x = quad.point(e, q);
                let ge = grad(x);
                let w = quad.jxw(e, q);
                l2 += w * (v - u(x)).powi(2);
                h1 += w * ((g[0] - ge[0]).powi(2) + (g[1] - ge[1]).powi(2));
            }
            (l2, h1)
        });
        let (l2, h1) = parts.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
        (l2.sqrt(), h1.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::nodal_interpolate;
    use crate::mesh::{interval_mesh, BoundaryTag};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn unit(n: usize) -> Arc<FeSpace> {
        Arc::new(FeSpace::new(Arc::new(interval_mesh(1.0, n, BoundaryTag::Dirichlet).unwrap())))
    }

    #[test]
    fn norms_of_simple_functions() {
        let s = unit(7);
        let one = nodal_interpolate(&s, |_| 1.0).unwrap();
        assert_relative_eq!(l2_norm(&one), 1.0, max_relative = 1e-14);
        assert!(h1_seminorm(&one) < 1e-7);
        let x = nodal_interpolate(&s, |p| p[0]).unwrap();
        assert_relative_eq!(h1_seminorm(&x), 1.0, max_relative = 1e-14);
        assert_eq!(l2_norm(&FeFunction::zeros(s)), 0.0);
    }

    #[test]
    fn norms_of_interpolated_sine() {
        let s = unit(128);
        let f = nodal_interpolate(&s, |p| (PI * p[0]).sin()).unwrap();
        assert!((l2_norm(&f) - 0.5f64.sqrt()).abs() < 1e-4);
        assert!((h1_seminorm(&f) - PI / 2f64.sqrt()).abs() < 1e-3);
    }

    #[test]
    fn trapezoid_in_time() {
        let mut acc = ErrorAccumulator::new();
        acc.push(0.0, SnapshotErrors { l2_a: 3.0, ..Default::default() });
        acc.push(1.0, SnapshotErrors { l2_a: 4.0, ..Default::default() });
        assert_relative_eq!(acc.finish().l2l2_a, 12.5f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn order_examples() {
        assert_relative_eq!(order(4e-4, 1e-4).unwrap(), 2.0, max_relative = 1e-14);
        assert_relative_eq!(order(1e-3, 5e-4).unwrap(), 1.0, max_relative = 1e-14);
        assert!(order(0.0, 1.0).is_err());
        assert!(order(1.0, -1.0).is_err());
    }

    #[test]
    fn zero_errors_give_nan_orders() {
        let t = OrderTable::new(vec![(1, NormReport::default()), (2, NormReport::default())]);
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], OrderTable::HEADER);
        assert_eq!(lines[1], "1,0.000000e0,,0.000000e0,,0.000000e0,,0.000000e0,,0.000000e0,");
        assert_eq!(lines[2].matches("NaN").count(), 5);
    }

    #[test]
    fn fit_recovers_exact_model() {
        let h: Vec<f64> = (1..=4).map(|k| 10f64.powi(-k)).collect();
        let q: Vec<f64> = h.iter().map(|h| 1.0 + 2.0 * h.powf(1.5)).collect();
        let fit = fit_power(&h, &q, [1.0, 1.0, 2.0]).unwrap();
        assert_relative_eq!(fit.alpha, 1.0, max_relative = 1e-6);
        assert_relative_eq!(fit.beta, 2.0, max_relative = 1e-6);
        assert_relative_eq!(fit.gamma, 1.5, max_relative = 1e-6);
        assert!(fit.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn fit_terminates_on_constant_data() {
        let h = [0.1, 0.05, 0.025, 0.0125];
        let q = [3.0; 4];
        let fit = fit_power(&h, &q, [1.0, 1.0, 2.0]).unwrap();
        assert_relative_eq!(fit.alpha, 3.0, max_relative = 1e-6);
        assert!(fit.beta.abs() * 0.1f64.powf(fit.gamma) < 1e-6);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(fit_power(&[0.1, 0.2], &[1.0, 2.0], [1.0, 1.0, 2.0]).is_err());
        assert!(fit_power(&[0.1, 0.0, 0.3], &[1.0, 2.0, 3.0], [1.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn exact_error_of_interpolant() {
        let s = unit(64);
        let f = nodal_interpolate(&s, |p| p[0] * (1.0 - p[0])).unwrap();
        let ex = ExactErrors::new(s);
        let (l2, h1) = ex.errors(f.dofs(), |p| p[0] * (1.0 - p[0]), |p| [1.0 - 2.0 * p[0], 0.0]);
        // On each element the error is (x - x_i)(x_{i+1} - x).
        let h = 1.0 / 64.0;
        assert_relative_eq!(l2, h * h / 30f64.sqrt(), max_relative = 1e-8);
        assert_relative_eq!(h1, h / 3f64.sqrt(), max_relative = 1e-8);
    }
}
