//! Extended and robust extended Kalman filter recursions.
//!
//! Both filters share the same gain and the same nominal Riccati prediction
//!
//! ```text
//! L_t     = V_t C_tᵀ (C_t V_t C_tᵀ + DDᵀ)^-1
//! x̂_{t|t} = x̂_t + L_t (y_t - h(x̂_t, u_t))
//! x̂_{t+1} = f(x̂_{t|t}, u_t)
//! P_{t+1} = A_t V_t A_tᵀ - A_t V_t C_tᵀ (C_t V_t C_tᵀ + DDᵀ)^-1 C_t V_t A_tᵀ + BBᵀ
//! ```
//!
//! The EKF carries `V_{t+1} = P_{t+1}`; the robust filter carries the least
//! favorable covariance `(P_{t+1}^-1 - θ_t I)^-1` (see [`robust`]).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

pub mod model;
pub mod robust;

pub use model::{
    check_joint_noise, independent_noise_shaping, joint_noise_covariance, psd_sqrt, LinearModel,
    NonlinearModel,
};
pub use robust::{
    gamma, kl_gaussian_zero_mean, robustify, robustify_with_theta, solve_theta, ThetaSolution,
    ToleranceSchedule, TOLERANCE_FLOOR,
};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("{what}: expected {expected:?}, found {found:?}")]
    Dimension {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("{what} is not positive definite: {matrix}")]
    NotPositiveDefinite {
        what: &'static str,
        matrix: DMatrix<f64>,
    },

    #[error("{what} is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { what: &'static str, asymmetry: f64 },

    #[error(
        "no theta root in bracket: gamma({bracket_high:e}) = {gamma_high:e} < target {target:e} (λ_max = {lambda_max:e})"
    )]
    NoRootInBracket {
        target: f64,
        gamma_high: f64,
        bracket_high: f64,
        lambda_max: f64,
    },

    #[error("theta bisection did not converge after {iterations} iterations (target {target:e}, theta {theta:e}, residual {residual:e})")]
    ThetaNotConverged {
        target: f64,
        theta: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("non-finite {what}")]
    NonFinite { what: &'static str },
}

/// `(M + Mᵀ) / 2`
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `M - Mᵀ`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

pub(crate) fn ensure_symmetric(m: &DMatrix<f64>, what: &'static str) -> Result<(), FilterError> {
    if !m.is_square() {
        return Err(FilterError::Dimension {
            what,
            expected: (m.nrows(), m.nrows()),
            found: m.shape(),
        });
    }
    let asym = asymmetry(m);
    if asym > 1e-12 * m.amax() {
        return Err(FilterError::NotSymmetric {
            what,
            asymmetry: asym,
        });
    }
    Ok(())
}

/// Predicted belief `N(x̂_t, V_t)` carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianBelief {
    /// Validated constructor: symmetric, positive definite, matching sizes.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self, FilterError> {
        let belief = Self { mean, covariance };
        belief.validate()?;
        Ok(belief)
    }

    pub fn from_diagonal(mean: &[f64], variances: &[f64]) -> Result<Self, FilterError> {
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_diagonal(&DVector::from_column_slice(variances)),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        let n = self.mean.len();
        if self.covariance.shape() != (n, n) {
            return Err(FilterError::Dimension {
                what: "belief covariance",
                expected: (n, n),
                found: self.covariance.shape(),
            });
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(FilterError::NonFinite {
                what: "belief mean",
            });
        }
        ensure_symmetric(&self.covariance, "belief covariance")?;
        if self.covariance.clone().cholesky().is_none() {
            return Err(FilterError::NotPositiveDefinite {
                what: "belief covariance",
                matrix: self.covariance.clone(),
            });
        }
        Ok(())
    }
}

/// Result of the correction half of a step.
#[derive(Debug, Clone)]
pub struct MeasurementUpdate {
    /// `x̂_{t|t}`
    pub filtered_mean: DVector<f64>,
    /// `L_t`, n × p.
    pub gain: DMatrix<f64>,
    /// `y_t - h(x̂_t, u_t)`
    pub innovation: DVector<f64>,
    /// `C_t` evaluated at the predicted mean.
    pub measurement_jacobian: DMatrix<f64>,
    /// Factor of `C_t V_t C_tᵀ + DDᵀ`.
    pub innovation_covariance: Cholesky<f64, Dyn>,
}

/// One step of either filter.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// `x̂_{t|t}`
    pub filtered_mean: DVector<f64>,
    /// `(x̂_{t+1}, V_{t+1})`
    pub predicted: GaussianBelief,
    /// `L_t`
    pub gain: DMatrix<f64>,
    /// `P_{t+1}` before robustification.
    pub nominal_predicted_cov: DMatrix<f64>,
    /// `θ_t`; zero for the EKF and when the tolerance floor is hit.
    pub theta: f64,
    pub innovation: DVector<f64>,
}

fn check_vector(what: &'static str, v: &DVector<f64>, len: usize) -> Result<(), FilterError> {
    if v.len() != len {
        return Err(FilterError::Dimension {
            what,
            expected: (len, 1),
            found: (v.len(), 1),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(FilterError::NonFinite { what });
    }
    Ok(())
}

/// Correction: gain from the current covariance and the measurement
/// Jacobian at the predicted mean.
pub fn measurement_update<M: NonlinearModel + ?Sized>(
    belief: &GaussianBelief,
    model: &M,
    y: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<MeasurementUpdate, FilterError> {
    let n = model.state_dim();
    let p = model.output_dim();
    check_vector("predicted mean", &belief.mean, n)?;
    check_vector("measurement", y, p)?;
    check_vector("input", u, model.input_dim())?;
    if belief.covariance.shape() != (n, n) {
        return Err(FilterError::Dimension {
            what: "belief covariance",
            expected: (n, n),
            found: belief.covariance.shape(),
        });
    }

    let v = &belief.covariance;
    let c = model.measurement_jacobian(&belief.mean, u);
    let cv = &c * v;
    let s = symmetrize(&(&cv * c.transpose() + model.measurement_covariance()));
    let chol = s
        .clone()
        .cholesky()
        .ok_or(FilterError::NotPositiveDefinite {
            what: "innovation covariance",
            matrix: s,
        })?;
    // S Lᵀ = C V
    let gain = chol.solve(&cv).transpose();
    let innovation = y - model.measurement(&belief.mean, u);
    let filtered_mean = &belief.mean + &gain * &innovation;
    if filtered_mean.iter().any(|x| !x.is_finite()) {
        return Err(FilterError::NonFinite {
            what: "filtered mean",
        });
    }
    Ok(MeasurementUpdate {
        filtered_mean,
        gain,
        innovation,
        measurement_jacobian: c,
        innovation_covariance: chol,
    })
}

/// Prediction: `x̂_{t+1} = f(x̂_{t|t}, u)` and the nominal Riccati update,
/// with `A_t` evaluated at the filtered mean.
pub fn time_update<M: NonlinearModel + ?Sized>(
    filtered_mean: &DVector<f64>,
    covariance: &DMatrix<f64>,
    model: &M,
    u: &DVector<f64>,
    correction: &MeasurementUpdate,
) -> Result<(DVector<f64>, DMatrix<f64>), FilterError> {
    let n = model.state_dim();
    check_vector("filtered mean", filtered_mean, n)?;
    let a = model.transition_jacobian(filtered_mean, u);
    let predicted_mean = model.transition(filtered_mean, u);
    check_vector("predicted mean", &predicted_mean, n)?;

    // V - V Cᵀ S^-1 C V
    let cv = &correction.measurement_jacobian * covariance;
    let reduction = cv.transpose() * correction.innovation_covariance.solve(&cv);
    let conditioned = covariance - reduction;
    let p_next = symmetrize(&(&a * conditioned * a.transpose() + model.process_covariance()));
    if p_next.iter().any(|x| !x.is_finite()) {
        return Err(FilterError::NonFinite {
            what: "predicted covariance",
        });
    }
    Ok((predicted_mean, p_next))
}

fn nominal_step<M: NonlinearModel + ?Sized>(
    belief: &GaussianBelief,
    model: &M,
    y: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(MeasurementUpdate, DVector<f64>, DMatrix<f64>), FilterError> {
    let correction = measurement_update(belief, model, y, u)?;
    let (mean, p_next) = time_update(
        &correction.filtered_mean,
        &belief.covariance,
        model,
        u,
        &correction,
    )?;
    Ok((correction, mean, p_next))
}

/// Standard EKF step.
pub fn ekf_step<M: NonlinearModel + ?Sized>(
    belief: &GaussianBelief,
    model: &M,
    y: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<StepOutput, FilterError> {
    let (correction, mean, p_next) = nominal_step(belief, model, y, u)?;
    Ok(StepOutput {
        filtered_mean: correction.filtered_mean,
        predicted: GaussianBelief {
            mean,
            covariance: p_next.clone(),
        },
        gain: correction.gain,
        nominal_predicted_cov: p_next,
        theta: 0.0,
        innovation: correction.innovation,
    })
}

/// Robust EKF step with KL tolerance `c`.
pub fn rekf_step<M: NonlinearModel + ?Sized>(
    belief: &GaussianBelief,
    model: &M,
    y: &DVector<f64>,
    u: &DVector<f64>,
    c: f64,
) -> Result<StepOutput, FilterError> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(FilterError::Domain(format!(
            "tolerance must be positive and finite, got {c}"
        )));
    }
    let (correction, mean, p_next) = nominal_step(belief, model, y, u)?;
    let (v_next, theta) = robustify_with_theta(&p_next, c)?;
    Ok(StepOutput {
        filtered_mean: correction.filtered_mean,
        predicted: GaussianBelief {
            mean,
            covariance: v_next,
        },
        gain: correction.gain,
        nominal_predicted_cov: p_next,
        theta: theta.map_or(0.0, |s| s.theta),
        innovation: correction.innovation,
    })
}

/// Which recursion a run uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterVariant {
    Ekf,
    Rekf(ToleranceSchedule),
}

impl FilterVariant {
    /// Step at sample index `t`.
    pub fn step<M: NonlinearModel + ?Sized>(
        &self,
        t: u64,
        belief: &GaussianBelief,
        model: &M,
        y: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<StepOutput, FilterError> {
        match self {
            FilterVariant::Ekf => ekf_step(belief, model, y, u),
            FilterVariant::Rekf(schedule) => rekf_step(belief, model, y, u, schedule.at(t)),
        }
    }
}
