//! Housner sloshing model of a tuned liquid damper, augmented with its two
//! unknown parameters as random-walk states.
//!
//! State `x = [ḋ, d, β, ω]`, input `u` = tank base acceleration, output the
//! reactive base force:
//!
//! ```text
//! ẋ = [-u - 2ξ x4 x1 - x4² x2,  x1,  0,  0]
//! y = -(1 - x3) m_t u + m_t x3 x4 x2 + m_t x3 x4 ξ x1
//! ```
//!
//! The force expression is implemented term for term as above, including
//! the single power of `ω` on the displacement term.

use nalgebra::{DMatrix, DVector, Matrix1x4, Matrix4, SVector, Vector4};
use serde::{Deserialize, Serialize};

use crate::filter::{independent_noise_shaping, FilterError, NonlinearModel};

/// Fixed physical constants and sampling time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HousnerParams {
    /// Total water mass, kg.
    pub m_t: f64,
    /// Damping ratio.
    pub xi: f64,
    /// Sampling time, s.
    pub ts: f64,
}

impl HousnerParams {
    pub fn new(m_t: f64, xi: f64, ts: f64) -> Result<Self, FilterError> {
        let params = Self { m_t, xi, ts };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.m_t > 0.0 && self.m_t.is_finite()) {
            return Err(FilterError::Domain(format!(
                "m_t must be positive, got {}",
                self.m_t
            )));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(FilterError::Domain(format!(
                "xi must lie in (0, 1), got {}",
                self.xi
            )));
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(FilterError::Domain(format!(
                "ts must be positive, got {}",
                self.ts
            )));
        }
        Ok(())
    }
}

impl Default for HousnerParams {
    /// Tank used in the shaking-table tests, sampled at 1 kHz.
    fn default() -> Self {
        Self {
            m_t: 171.520,
            xi: 0.005,
            ts: 0.001,
        }
    }
}

/// Named view of the augmented state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HousnerState {
    /// Water velocity ḋ, m/s.
    pub x1: f64,
    /// Water displacement d, m.
    pub x2: f64,
    /// Mass ratio β.
    pub x3: f64,
    /// Sloshing frequency ω, rad/s.
    pub x4: f64,
}

impl HousnerState {
    pub fn new(x1: f64, x2: f64, x3: f64, x4: f64) -> Self {
        Self { x1, x2, x3, x4 }
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.x1, self.x2, self.x3, self.x4)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }

    /// Mass ratio within (0, 1) and frequency positive. Diagnostic only.
    pub fn is_physical(&self) -> bool {
        self.x3 > 0.0 && self.x3 < 1.0 && self.x4 > 0.0
    }
}

/// Continuous-time drift.
pub fn drift(x: &Vector4<f64>, u: f64, params: &HousnerParams) -> Vector4<f64> {
    let (x1, x2, x4) = (x[0], x[1], x[3]);
    Vector4::new(-u - 2.0 * params.xi * x4 * x1 - x4 * x4 * x2, x1, 0.0, 0.0)
}

/// Reactive force at the tank base.
pub fn measurement(x: &Vector4<f64>, u: f64, params: &HousnerParams) -> f64 {
    let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
    let m = params.m_t;
    -(1.0 - x3) * m * u + m * x3 * x4 * x2 + m * x3 * x4 * params.xi * x1
}

pub fn drift_jacobian(x: &Vector4<f64>, _u: f64, params: &HousnerParams) -> Matrix4<f64> {
    let (x1, x2, x4) = (x[0], x[1], x[3]);
    let xi = params.xi;
    #[rustfmt::skip]
    let j = Matrix4::new(
        -2.0 * xi * x4, -x4 * x4, 0.0, -2.0 * xi * x1 - 2.0 * x4 * x2,
        1.0,            0.0,      0.0, 0.0,
        0.0,            0.0,      0.0, 0.0,
        0.0,            0.0,      0.0, 0.0,
    );
    j
}

pub fn measurement_jacobian(x: &Vector4<f64>, u: f64, params: &HousnerParams) -> Matrix1x4<f64> {
    let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
    let (m, xi) = (params.m_t, params.xi);
    Matrix1x4::new(
        m * x3 * x4 * xi,
        m * x3 * x4,
        m * u + m * x4 * x2 + m * x4 * xi * x1,
        m * x3 * x2 + m * x3 * xi * x1,
    )
}

/// Classical fourth-order Runge-Kutta step with the input held over the step.
pub fn rk4_step<const N: usize, F>(f: F, x: &SVector<f64, N>, u: f64, ts: f64) -> SVector<f64, N>
where
    F: Fn(&SVector<f64, N>, f64) -> SVector<f64, N>,
{
    rk4_step_timed(|_, state| f(state, u), x, ts)
}

/// RK4 step for a drift that also depends on the time offset `τ ∈ [0, ts]`
/// into the step.
pub fn rk4_step_timed<const N: usize, F>(f: F, x: &SVector<f64, N>, ts: f64) -> SVector<f64, N>
where
    F: Fn(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    let half = 0.5 * ts;
    let k1 = f(0.0, x);
    let k2 = f(half, &(x + k1 * half));
    let k3 = f(half, &(x + k2 * half));
    let k4 = f(ts, &(x + k3 * ts));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (ts / 6.0)
}

/// One sampling period of the Housner drift.
pub fn discrete_transition(x: &Vector4<f64>, u: f64, params: &HousnerParams) -> Vector4<f64> {
    rk4_step(|s, u| drift(s, u, params), x, u, params.ts)
}

/// Central-difference Jacobian of an RK4-discretized map, step
/// `1e-6 · max(1, |x_i|)` per coordinate.
pub fn rk4_jacobian<const N: usize, F>(
    f: F,
    x: &SVector<f64, N>,
    u: f64,
    ts: f64,
) -> nalgebra::SMatrix<f64, N, N>
where
    F: Fn(&SVector<f64, N>, f64) -> SVector<f64, N>,
{
    let mut jac = nalgebra::SMatrix::<f64, N, N>::zeros();
    for i in 0..N {
        let h = 1e-6 * x[i].abs().max(1.0);
        let mut plus = *x;
        let mut minus = *x;
        plus[i] += h;
        minus[i] -= h;
        // Use the actually representable spacing.
        let spacing = plus[i] - minus[i];
        let column = (rk4_step(&f, &plus, u, ts) - rk4_step(&f, &minus, u, ts)) / spacing;
        jac.set_column(i, &column);
    }
    jac
}

/// Jacobian of [`discrete_transition`].
pub fn discrete_jacobian(x: &Vector4<f64>, u: f64, params: &HousnerParams) -> Matrix4<f64> {
    rk4_jacobian(|s, u| drift(s, u, params), x, u, params.ts)
}

/// The Housner model as a [`NonlinearModel`] with independent process and
/// measurement noise (`BBᵀ = Q`, `DDᵀ = R`).
#[derive(Debug, Clone, PartialEq)]
pub struct HousnerModel {
    params: HousnerParams,
    b: DMatrix<f64>,
    d: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

/// Assembles the filter model. `q_diag` is the diagonal of the discrete
/// process covariance, `r` the measurement variance.
pub fn build_model(
    params: HousnerParams,
    q_diag: [f64; 4],
    r: f64,
) -> Result<HousnerModel, FilterError> {
    params.validate()?;
    if q_diag.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
        return Err(FilterError::Domain(format!(
            "process variances must be nonnegative, got {q_diag:?}"
        )));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(FilterError::Domain(format!(
            "measurement variance must be positive, got {r}"
        )));
    }
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(&q_diag));
    let r = DMatrix::from_element(1, 1, r);
    let (b, d) = independent_noise_shaping(&q, &r)?;
    Ok(HousnerModel { params, b, d, q, r })
}

fn as_vector4(x: &DVector<f64>) -> Vector4<f64> {
    Vector4::new(x[0], x[1], x[2], x[3])
}

impl HousnerModel {
    pub fn params(&self) -> &HousnerParams {
        &self.params
    }
}

impl NonlinearModel for HousnerModel {
    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let next = discrete_transition(&as_vector4(x), u[0], &self.params);
        DVector::from_column_slice(next.as_slice())
    }

    fn measurement(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, measurement(&as_vector4(x), u[0], &self.params))
    }

    fn transition_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let j = discrete_jacobian(&as_vector4(x), u[0], &self.params);
        DMatrix::from_column_slice(4, 4, j.as_slice())
    }

    fn measurement_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let j = measurement_jacobian(&as_vector4(x), u[0], &self.params);
        DMatrix::from_row_slice(1, 4, &[j[0], j[1], j[2], j[3]])
    }

    fn process_shaping(&self) -> &DMatrix<f64> {
        &self.b
    }

    fn measurement_shaping(&self) -> &DMatrix<f64> {
        &self.d
    }

    fn process_covariance(&self) -> DMatrix<f64> {
        self.q.clone()
    }

    fn measurement_covariance(&self) -> DMatrix<f64> {
        self.r.clone()
    }
}
