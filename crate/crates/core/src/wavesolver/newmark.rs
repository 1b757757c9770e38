use log::warn;

/// Newmark parameters `(beta, gamma)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewmarkParams {
    pub beta: f64,
    pub gamma: f64,
}

impl NewmarkParams {
    /// Dissipative choice used for the nonlinear acoustic experiments.
    pub const DISSIPATIVE: NewmarkParams = NewmarkParams { beta: 0.45, gamma: 0.75 };
    /// Trapezoidal rule; second order and non-dissipative.
    pub const AVERAGE_ACCELERATION: NewmarkParams = NewmarkParams { beta: 0.25, gamma: 0.5 };

    pub fn new(beta: f64, gamma: f64) -> Self {
        let p = NewmarkParams { beta, gamma };
        if !p.is_unconditionally_stable() {
            warn!("Newmark parameters (beta={beta}, gamma={gamma}) lie outside the unconditionally stable region");
        }
        p
    }

    /// `gamma >= 1/2` and `beta >= gamma/2`.
    pub fn is_unconditionally_stable(&self) -> bool {
        self.gamma >= 0.5 && self.beta >= self.gamma / 2.0
    }
}

impl Default for NewmarkParams {
    fn default() -> Self {
        Self::DISSIPATIVE
    }
}

/// Predictor: the parts of `u^{n+1}` and `v^{n+1}` known before `a^{n+1}`.
pub fn newmark_predict(u: &[f64], v: &[f64], a: &[f64], dt: f64, p: NewmarkParams) -> (Vec<f64>, Vec<f64>) {
    let cu = dt * dt * (0.5 - p.beta);
    let cv = dt * (1.0 - p.gamma);
    let u_star = u.iter().zip(v).zip(a).map(|((u, v), a)| u + dt * v + cu * a).collect();
    let v_star = v.iter().zip(a).map(|(v, a)| v + cv * a).collect();
    (u_star, v_star)
}

/// Corrector: `u = u* + beta dt^2 a`, `v = v* + gamma dt a`.
pub fn newmark_correct(u_star: &[f64], v_star: &[f64], a: &[f64], dt: f64, p: NewmarkParams) -> (Vec<f64>, Vec<f64>) {
    let cu = p.beta * dt * dt;
    let cv = p.gamma * dt;
    let u = u_star.iter().zip(a).map(|(u, a)| u + cu * a).collect();
    let v = v_star.iter().zip(a).map(|(v, a)| v + cv * a).collect();
    (u, v)
}
