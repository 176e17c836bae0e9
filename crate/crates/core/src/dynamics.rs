//! Dynamically-extended unicycle.
//!
//! State `[x, y, θ, v]`, control `[ω, a]`, continuous dynamics
//! `ẋ = [v cos θ, v sin θ, ω, a]`. Discretization is the exact zero-order-hold
//! integral over one step; speed is clamped into the speed limits afterwards.
//!
//! The position advance is written as
//! `Δp = e^{iθ} (v·dt·f₁(iω·dt) + a·dt²·f₂(iω·dt))` with
//! `fₙ(z) = ∫₀¹ u^{n-1} e^{zu} du`, which is evaluated by power series for
//! small `|ω·dt|` and in closed form otherwise. The same representation gives
//! the Jacobians analytically (`fₙ' = fₙ₊₁`).

use nalgebra::{Matrix4, Matrix4x2, Vector2, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Below this `|ω·dt|` the `fₙ` helpers are evaluated by power series.
const SERIES_THRESHOLD: f64 = 0.5;
const SERIES_TERMS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

impl AgentState {
    pub const fn new(x: f64, y: f64, theta: f64, v: f64) -> Self {
        Self { x, y, theta, v }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    /// Planar velocity `(v cos θ, v sin θ)`.
    pub fn velocity(&self) -> Vector2<f64> {
        Vector2::new(self.v * self.theta.cos(), self.v * self.theta.sin())
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.theta, self.v)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite() && self.v.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentControl {
    pub omega: f64,
    pub a: f64,
}

impl AgentControl {
    pub const ZERO: AgentControl = AgentControl { omega: 0.0, a: 0.0 };

    pub const fn new(omega: f64, a: f64) -> Self {
        Self { omega, a }
    }

    pub fn to_vector(&self) -> Vector2<f64> {
        Vector2::new(self.omega, self.a)
    }

    pub fn is_finite(&self) -> bool {
        self.omega.is_finite() && self.a.is_finite()
    }
}

/// Control and speed limits, each as an inclusive `[lower, upper]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub omega_bounds: (f64, f64),
    pub a_bounds: (f64, f64),
    pub v_bounds: (f64, f64),
}

impl Default for Limits {
    fn default() -> Self {
        Self { omega_bounds: (-1.0, 1.0), a_bounds: (-1.5, 1.5), v_bounds: (0.0, 1.5) }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<()> {
        let pairs = [("omega_bounds", self.omega_bounds), ("a_bounds", self.a_bounds), ("v_bounds", self.v_bounds)];
        for (name, (lo, hi)) in pairs {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidConfig(format!("{name}: [{lo}, {hi}]")));
            }
        }
        if self.v_bounds.0 < 0.0 {
            return Err(Error::InvalidConfig("v_bounds lower must be >= 0".into()));
        }
        Ok(())
    }

    pub fn clamp_control(&self, u: AgentControl) -> AgentControl {
        AgentControl { omega: u.omega.clamp(self.omega_bounds.0, self.omega_bounds.1), a: u.a.clamp(self.a_bounds.0, self.a_bounds.1) }
    }

    pub fn clamp_speed(&self, v: f64) -> f64 {
        v.clamp(self.v_bounds.0, self.v_bounds.1)
    }

    pub fn contains(&self, u: &AgentControl) -> bool {
        (self.omega_bounds.0..=self.omega_bounds.1).contains(&u.omega) && (self.a_bounds.0..=self.a_bounds.1).contains(&u.a)
    }
}

/// `fₙ(z) = ∫₀¹ u^{n-1} e^{zu} du` for purely imaginary `z = iφ`.
fn phi_integral(n: u32, phi: f64) -> Complex64 {
    let z = Complex64::new(0.0, phi);
    if phi.abs() < SERIES_THRESHOLD {
        // Σ z^k / (k! (k + n))
        let mut term = Complex64::new(1.0, 0.0);
        let mut sum = Complex64::new(0.0, 0.0);
        for k in 0..SERIES_TERMS {
            sum += term / (k as f64 + n as f64);
            term = term * z / (k as f64 + 1.0);
        }
        sum
    } else {
        // f₁ = (e^z − 1)/z, fₙ₊₁ = (e^z − n·fₙ)/z
        let ez = z.exp();
        let mut f = (ez - 1.0) / z;
        for k in 1..n {
            f = (ez - f * k as f64) / z;
        }
        f
    }
}

fn check_inputs(state: &AgentState, control: &AgentControl, dt: f64) -> Result<()> {
    if !state.is_finite() || !control.is_finite() {
        return Err(Error::NonFinite(format!("state {state:?}, control {control:?}")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::NonFinite(format!("dt = {dt}")));
    }
    Ok(())
}

/// Exact zero-order-hold propagation without the speed clamp.
///
/// This is the smooth map the optimizer linearizes; [`step`] adds the clamp.
pub fn propagate(state: &AgentState, control: &AgentControl, dt: f64) -> Result<AgentState> {
    check_inputs(state, control, dt)?;
    let phi = control.omega * dt;
    let heading = Complex64::from_polar(1.0, state.theta);
    let dp = heading * (phi_integral(1, phi) * (state.v * dt) + phi_integral(2, phi) * (control.a * dt * dt));
    Ok(AgentState { x: state.x + dp.re, y: state.y + dp.im, theta: state.theta + phi, v: state.v + control.a * dt })
}

/// One simulation step: exact zero-order hold, then speed clamped into `limits.v_bounds`.
pub fn step(state: &AgentState, control: &AgentControl, dt: f64, limits: &Limits) -> Result<AgentState> {
    let mut next = propagate(state, control, dt)?;
    next.v = limits.clamp_speed(next.v);
    Ok(next)
}

/// Affine model of the discrete map around `(state, control)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linearization {
    pub a: Matrix4<f64>,
    pub b: Matrix4x2<f64>,
    pub c: Vector4<f64>,
}

impl Linearization {
    pub fn apply(&self, x: &Vector4<f64>, u: &Vector2<f64>) -> Vector4<f64> {
        self.a * x + self.b * u + self.c
    }
}

/// First-order expansion of [`propagate`]: `next ≈ A·x + B·u + c`.
pub fn linearize(state: &AgentState, control: &AgentControl, dt: f64) -> Result<Linearization> {
    let next = propagate(state, control, dt)?;
    let phi = control.omega * dt;
    let heading = Complex64::from_polar(1.0, state.theta);
    let f1 = phi_integral(1, phi);
    let f2 = phi_integral(2, phi);
    let f3 = phi_integral(3, phi);
    let i = Complex64::new(0.0, 1.0);

    let dp = heading * (f1 * (state.v * dt) + f2 * (control.a * dt * dt));
    let d_theta = i * dp;
    let d_v = heading * f1 * dt;
    let d_a = heading * f2 * (dt * dt);
    let d_omega = heading * i * dt * (f2 * (state.v * dt) + f3 * (control.a * dt * dt));

    #[rustfmt::skip]
    let a = Matrix4::new(
        1.0, 0.0, d_theta.re, d_v.re,
        0.0, 1.0, d_theta.im, d_v.im,
        0.0, 0.0, 1.0,        0.0,
        0.0, 0.0, 0.0,        1.0,
    );
    #[rustfmt::skip]
    let b = Matrix4x2::new(
        d_omega.re, d_a.re,
        d_omega.im, d_a.im,
        dt,         0.0,
        0.0,        dt,
    );
    let c = next.to_vector() - a * state.to_vector() - b * control.to_vector();
    Ok(Linearization { a, b, c })
}

/// Second derivatives of the `x` and `y` components of [`propagate`] with
/// respect to `(θ, v, ω, a)`; every other entry of the map is affine.
pub fn position_hessians(state: &AgentState, control: &AgentControl, dt: f64) -> Result<[Matrix4<f64>; 2]> {
    check_inputs(state, control, dt)?;
    let phi = control.omega * dt;
    let h = Complex64::from_polar(1.0, state.theta);
    let i = Complex64::new(0.0, 1.0);
    let f: Vec<Complex64> = (1..=4).map(|n| phi_integral(n, phi)).collect();
    let (v, a) = (state.v, control.a);
    let p = h * (f[0] * (v * dt) + f[1] * (a * dt * dt));

    let tt = -p;
    let tv = i * h * f[0] * dt;
    let ta = i * h * f[1] * (dt * dt);
    let tw = -h * dt * (f[1] * (v * dt) + f[2] * (a * dt * dt));
    let vw = i * h * f[1] * (dt * dt);
    let aw = i * h * f[2] * (dt * dt * dt);
    let ww = -h * (dt * dt) * (f[2] * (v * dt) + f[3] * (a * dt * dt));
    let zero = Complex64::new(0.0, 0.0);

    #[rustfmt::skip]
    let m = [
        [tt, tv, tw, ta],
        [tv, zero, vw, zero],
        [tw, vw, ww, aw],
        [ta, zero, aw, zero],
    ];
    Ok([Matrix4::from_fn(|r, c| m[r][c].re), Matrix4::from_fn(|r, c| m[r][c].im)])
}

/// State sequence of length `controls.len() + 1` with the step size it was produced at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<AgentState>,
    pub controls: Vec<AgentControl>,
    pub dt: f64,
}

impl Trajectory {
    pub fn new(states: Vec<AgentState>, controls: Vec<AgentControl>, dt: f64) -> Result<Self> {
        if states.len() != controls.len() + 1 {
            return Err(Error::Dimension(format!("trajectory has {} states and {} controls", states.len(), controls.len())));
        }
        Ok(Self { states, controls, dt })
    }

    /// Number of controls (`T + 1` for a horizon-`T` plan).
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn initial(&self) -> &AgentState {
        &self.states[0]
    }

    pub fn terminal(&self) -> &AgentState {
        self.states.last().expect("trajectory always has a state")
    }

    pub fn positions(&self) -> impl Iterator<Item = Vector2<f64>> + '_ {
        self.states.iter().map(AgentState::position)
    }

    /// Euclidean norm of the stacked state and control differences.
    pub fn distance(&self, other: &Trajectory) -> f64 {
        let ds: f64 = self.states.iter().zip(&other.states).map(|(a, b)| (a.to_vector() - b.to_vector()).norm_squared()).sum();
        let du: f64 = self.controls.iter().zip(&other.controls).map(|(a, b)| (a.to_vector() - b.to_vector()).norm_squared()).sum();
        (ds + du).sqrt()
    }
}

pub fn rollout(initial: &AgentState, controls: &[AgentControl], dt: f64, limits: &Limits) -> Result<Trajectory> {
    if controls.is_empty() {
        return Err(Error::Dimension("rollout needs at least one control".into()));
    }
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*initial);
    let mut current = *initial;
    for u in controls {
        current = step(&current, u, dt, limits)?;
        states.push(current);
    }
    Ok(Trajectory { states, controls: controls.to_vec(), dt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn position_hessians_match_differenced_jacobians() {
        let s = AgentState::new(0.3, -0.2, 0.7, 1.1);
        let u = AgentControl { omega: 0.6, a: -0.4 };
        let dt = 0.1;
        let hs = position_hessians(&s, &u, dt).unwrap();
        // column k of the Jacobian over (θ, v, ω, a)
        let jac = |s: &AgentState, u: &AgentControl| {
            let l = linearize(s, u, dt).unwrap();
            [[l.a[(0, 2)], l.a[(0, 3)], l.b[(0, 0)], l.b[(0, 1)]], [l.a[(1, 2)], l.a[(1, 3)], l.b[(1, 0)], l.b[(1, 1)]]]
        };
        let h = 1e-6;
        for j in 0..4 {
            let shift = |sign: f64| {
                let mut s2 = s;
                let mut u2 = u;
                match j {
                    0 => s2.theta += sign * h,
                    1 => s2.v += sign * h,
                    2 => u2.omega += sign * h,
                    _ => u2.a += sign * h,
                }
                jac(&s2, &u2)
            };
            let (plus, minus) = (shift(1.0), shift(-1.0));
            for comp in 0..2 {
                for k in 0..4 {
                    let fd = (plus[comp][k] - minus[comp][k]) / (2.0 * h);
                    assert!((hs[comp][(k, j)] - fd).abs() < 1e-7, "comp {comp} ({k},{j}): {} vs {fd}", hs[comp][(k, j)]);
                }
            }
        }
    }

    #[test]
    fn straight_line_constant_speed() {
        let s = step(&AgentState::new(0.0, 0.0, 0.0, 1.0), &AgentControl::ZERO, 0.1, &Limits::default()).unwrap();
        assert_abs_diff_eq!(s.x, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(s.y, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.theta, 0.0);
        assert_abs_diff_eq!(s.v, 1.0);
    }

    #[test]
    fn pure_acceleration_from_rest() {
        let s = step(&AgentState::default(), &AgentControl::new(0.0, 1.5), 0.1, &Limits::default()).unwrap();
        assert_abs_diff_eq!(s.x, 0.0075, epsilon = 1e-15);
        assert_abs_diff_eq!(s.v, 0.15, epsilon = 1e-15);
    }

    #[test]
    fn closed_form_and_series_agree_at_the_switch() {
        for n in 1..=3 {
            let below = phi_integral(n, SERIES_THRESHOLD - 1e-12);
            let z = Complex64::new(0.0, SERIES_THRESHOLD - 1e-12);
            let ez = z.exp();
            let mut closed = (ez - 1.0) / z;
            for k in 1..n {
                closed = (ez - closed * k as f64) / z;
            }
            assert!((below - closed).norm() < 1e-14, "n={n}");
        }
    }

    #[test]
    fn small_turn_rate_is_continuous() {
        let s = AgentState::new(0.3, -0.2, FRAC_PI_4, 1.2);
        let a = propagate(&s, &AgentControl::new(0.0, 0.7), 0.1).unwrap();
        let b = propagate(&s, &AgentControl::new(1e-12, 0.7), 0.1).unwrap();
        assert!((a.to_vector() - b.to_vector()).amax() < 1e-9);
    }

    #[test]
    fn speed_is_clamped() {
        let lim = Limits::default();
        let s = step(&AgentState::new(0.0, 0.0, 0.0, 1.45), &AgentControl::new(0.0, 1.5), 0.1, &lim).unwrap();
        assert_eq!(s.v, 1.5);
        let s = step(&AgentState::new(0.0, 0.0, 0.0, 0.05), &AgentControl::new(0.0, -1.5), 0.1, &lim).unwrap();
        assert_eq!(s.v, 0.0);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let err = step(&AgentState::new(f64::NAN, 0.0, 0.0, 0.0), &AgentControl::ZERO, 0.1, &Limits::default());
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert!(step(&AgentState::default(), &AgentControl::ZERO, 0.0, &Limits::default()).is_err());
    }

    #[test]
    fn jacobian_entries_at_simple_points() {
        let lin = linearize(&AgentState::new(0.0, 0.0, 0.0, 1.0), &AgentControl::ZERO, 0.1).unwrap();
        assert_abs_diff_eq!(lin.a[(0, 3)], 0.1, epsilon = 1e-15);
        let lin = linearize(&AgentState::default(), &AgentControl::ZERO, 0.1).unwrap();
        assert_abs_diff_eq!(lin.b[(3, 1)], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn linearization_is_exact_at_the_expansion_point() {
        let s = AgentState::new(1.0, 2.0, 0.4, 0.9);
        let u = AgentControl::new(-0.6, 0.3);
        let lin = linearize(&s, &u, 0.1).unwrap();
        let next = propagate(&s, &u, 0.1).unwrap();
        let approx = lin.apply(&s.to_vector(), &u.to_vector());
        assert!((approx - next.to_vector()).amax() < 1e-14);
    }

    #[test]
    fn rollout_shapes() {
        let lim = Limits::default();
        let t = rollout(&AgentState::new(0.0, 0.0, 0.0, 1.0), &[AgentControl::ZERO; 25], 0.1, &lim).unwrap();
        assert_abs_diff_eq!(t.terminal().x, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(t.terminal().y, 0.0, epsilon = 1e-12);
        let t = rollout(&AgentState::default(), &[AgentControl::ZERO], 0.1, &lim).unwrap();
        assert_eq!((t.states.len(), t.controls.len()), (2, 1));
        assert!(rollout(&AgentState::default(), &[], 0.1, &lim).is_err());
    }
}
