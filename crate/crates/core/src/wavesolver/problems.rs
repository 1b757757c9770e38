//! Initial data, sources and manufactured solutions of the built-in experiments.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::Result;
use crate::fespace::{ritz_project_with, FeSpace};
use crate::linalg::SolverConfig;
use crate::mesh::Point;

use super::{Forcing, LinearCoefficients, SpaceTimeFn};

/// Gaussian pulse data of the channel experiment:
/// `u0 = A1 exp(-(x-mu)^2 / (2 s1^2))`, `u1 = A2 (x-mu) exp(-(x-mu)^2 / (2 s2^2))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelData {
    pub a1: f64,
    pub a2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub mu: f64,
}

impl Default for ChannelData {
    fn default() -> Self {
        ChannelData { a1: 1.2e8, a2: -1e11, sigma1: 0.015, sigma2: 0.02, mu: 0.1 }
    }
}

impl ChannelData {
    pub fn u0(&self, x: f64) -> f64 {
        let d = x - self.mu;
        self.a1 * (-d * d / (2.0 * self.sigma1 * self.sigma1)).exp()
    }

    pub fn du0(&self, x: f64) -> f64 {
        let s2 = self.sigma1 * self.sigma1;
        -(x - self.mu) / s2 * self.u0(x)
    }

    pub fn u1(&self, x: f64) -> f64 {
        let d = x - self.mu;
        self.a2 * d * (-d * d / (2.0 * self.sigma2 * self.sigma2)).exp()
    }

    pub fn du1(&self, x: f64) -> f64 {
        let d = x - self.mu;
        let s2 = self.sigma2 * self.sigma2;
        self.a2 * (1.0 - d * d / s2) * (-d * d / (2.0 * s2)).exp()
    }
}

/// Ritz projections `(R_h u0, R_h u1)` of the channel data.
pub fn channel_initial_data(
    space: &Arc<FeSpace>,
    data: &ChannelData,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let cfg = SolverConfig { tol: cfg.tol.min(1e-12), ..*cfg };
    let d = *data;
    let u0 = ritz_project_with(space, move |p: Point| [d.du0(p[0]), 0.0], &cfg)?;
    let u1 = ritz_project_with(space, move |p: Point| [d.du1(p[0]), 0.0], &cfg)?;
    Ok((u0.into_dofs(), u1.into_dofs()))
}

/// Transducer excitation of the focus experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocusData {
    /// Flux amplitude (Pa/m).
    pub g0: f64,
    /// Frequency (Hz).
    pub freq: f64,
}

impl Default for FocusData {
    fn default() -> Self {
        FocusData { g0: 1e7, freq: 60e3 }
    }
}

/// `g(t) = g0 sin(wt) (1 + sin(wt/4))` after the first period, `g0 sin(wt)` before.
pub fn focus_source(data: &FocusData) -> Arc<dyn Fn(f64) -> f64 + Send + Sync> {
    let FocusData { g0, freq } = *data;
    let omega = 2.0 * PI * freq;
    Arc::new(move |t: f64| {
        let s = (omega * t).sin();
        if t > 2.0 * PI / omega {
            g0 * s * (1.0 + (omega * t / 4.0).sin())
        } else {
            g0 * s
        }
    })
}

/// Manufactured solution `u = sin(pi x) (1 + t^2) e^{-t}` on the unit interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmsCase {
    pub c: f64,
    pub b: f64,
    /// `alpha = 1 + 0.5 sin(pi x) cos t`, `beta = 0.5 cos(pi x)`; otherwise `alpha = 1`, `beta = 0`.
    pub variable: bool,
}

impl Default for MmsCase {
    fn default() -> Self {
        MmsCase { c: 1.0, b: 0.1, variable: true }
    }
}

fn g(t: f64) -> [f64; 3] {
    let e = (-t).exp();
    [(1.0 + t * t) * e, -(t - 1.0) * (t - 1.0) * e, (t * t - 4.0 * t + 3.0) * e]
}

/// Exact `(u, u_t, u_tt)` and `(u_x, u_tx)` at `(x, t)`.
pub fn mms_exact(x: f64, t: f64) -> ([f64; 3], [f64; 2]) {
    let [g0, g1, g2] = g(t);
    let s = (PI * x).sin();
    let cx = PI * (PI * x).cos();
    ([s * g0, s * g1, s * g2], [cx * g0, cx * g1])
}

impl MmsCase {
    pub fn alpha(&self, x: f64, t: f64) -> f64 {
        if self.variable {
            1.0 + 0.5 * (PI * x).sin() * t.cos()
        } else {
            1.0
        }
    }

    pub fn beta(&self, x: f64, _t: f64) -> f64 {
        if self.variable {
            0.5 * (PI * x).cos()
        } else {
            0.0
        }
    }

    /// `f = alpha u_tt - c^2 u_xx - b u_txx + beta u_t`.
    pub fn forcing(&self, x: f64, t: f64) -> f64 {
        let [g0, g1, g2] = g(t);
        let s = (PI * x).sin();
        let p2 = PI * PI;
        s * (self.alpha(x, t) * g2 + self.c * self.c * p2 * g0 + self.b * p2 * g1) + self.beta(x, t) * s * g1
    }

    pub fn coefficients(&self) -> LinearCoefficients {
        let (a, b, f) = (*self, *self, *self);
        let alpha: SpaceTimeFn = Arc::new(move |p: Point, t| a.alpha(p[0], t));
        let beta: SpaceTimeFn = Arc::new(move |p: Point, t| b.beta(p[0], t));
        let forcing: SpaceTimeFn = Arc::new(move |p: Point, t| f.forcing(p[0], t));
        LinearCoefficients { alpha, beta, forcing: Forcing::Field(forcing) }
    }

    /// Ritz projections of `u(., 0)` and `u_t(., 0)`.
    pub fn initial_data(&self, space: &Arc<FeSpace>, cfg: &SolverConfig) -> Result<(Vec<f64>, Vec<f64>)> {
        let cfg = SolverConfig { tol: cfg.tol.min(1e-12), ..*cfg };
        let u0 = ritz_project_with(space, |p: Point| [mms_exact(p[0], 0.0).1[0], 0.0], &cfg)?;
        let u1 = ritz_project_with(space, |p: Point| [mms_exact(p[0], 0.0).1[1], 0.0], &cfg)?;
        Ok((u0.into_dofs(), u1.into_dofs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_derivatives_match_finite_differences() {
        let d = ChannelData::default();
        let h = 1e-7;
        for &x in &[0.05, 0.09, 0.1, 0.13] {
            let fd0 = (d.u0(x + h) - d.u0(x - h)) / (2.0 * h);
            let fd1 = (d.u1(x + h) - d.u1(x - h)) / (2.0 * h);
            assert_relative_eq!(d.du0(x), fd0, max_relative = 1e-6, epsilon = 1e3);
            assert_relative_eq!(d.du1(x), fd1, max_relative = 1e-6, epsilon = 1e3);
        }
    }

    #[test]
    fn source_switches_after_one_period() {
        let data = FocusData { g0: 2.0, freq: 1.0 };
        let g = focus_source(&data);
        assert_relative_eq!(g(0.25), 2.0, max_relative = 1e-14);
        // at t = 1.25: sin(2.5 pi) = 1, sin(2.5 pi / 4) = sin(5 pi / 8)
        let expected = 2.0 * (1.0 + (5.0 * PI / 8.0).sin());
        assert_relative_eq!(g(1.25), expected, max_relative = 1e-12);
    }

    #[test]
    fn manufactured_time_derivatives() {
        let h = 1e-5;
        for &t in &[0.0, 0.3, 1.0] {
            let [u, ut, utt] = mms_exact(0.3, t).0;
            let up = mms_exact(0.3, t + h).0;
            let um = mms_exact(0.3, t - h).0;
            assert_relative_eq!(ut, (up[0] - um[0]) / (2.0 * h), max_relative = 1e-8, epsilon = 1e-9);
            assert_relative_eq!(utt, (up[0] - 2.0 * u + um[0]) / (h * h), max_relative = 1e-4);
            assert_relative_eq!(utt, (up[1] - um[1]) / (2.0 * h), max_relative = 1e-8, epsilon = 1e-9);
        }
    }

    #[test]
    fn forcing_satisfies_the_equation() {
        let case = MmsCase::default();
        let (x, t, h) = (0.37, 0.6, 1e-4);
        let uxx = |x: f64, k: usize| {
            (mms_exact(x + h, t).0[k] - 2.0 * mms_exact(x, t).0[k] + mms_exact(x - h, t).0[k]) / (h * h)
        };
        let [_, ut, utt] = mms_exact(x, t).0;
        let lhs = case.alpha(x, t) * utt - case.c * case.c * uxx(x, 0) - case.b * uxx(x, 1) + case.beta(x, t) * ut;
        assert_relative_eq!(lhs, case.forcing(x, t), max_relative = 1e-6);
    }
}
