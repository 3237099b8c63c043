//! KL-ball robustification of the predicted covariance.
//!
//! The least favorable transition density inside a KL ball of radius `c`
//! around the nominal one keeps the nominal mean and inflates the predicted
//! covariance to `V = (P^-1 - θ I)^-1`, where `θ > 0` solves `γ(P, θ) = c`:
//!
//! ```text
//! γ(P, θ) = ½ { log det(I - θP) + tr[(I - θP)^-1 - I] }
//!         = ½ Σ_i [ log(1 - θλ_i) + 1/(1 - θλ_i) - 1 ]
//! ```
//!
//! Everything here works on the eigenvalues of `P`, so `γ` is evaluated
//! without forming `I - θP` and stays accurate next to the pole at
//! `θ = 1/λ_max`.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{ensure_symmetric, symmetrize, FilterError};

/// Tolerances below this skip the θ solve entirely and return `V = P`.
pub const TOLERANCE_FLOOR: f64 = 1e-12;

/// Relative tolerance on `|γ(P, θ) - c|`.
pub const THETA_RELATIVE_TOL: f64 = 1e-9;

/// Bisection iteration cap.
pub const THETA_MAX_ITERATIONS: usize = 200;

/// Upper bracket sits this far (relatively) below the pole `1/λ_max`.
pub const BRACKET_MARGIN: f64 = 1e-9;

/// Below this value of `θλ` the per-eigenvalue term is summed as a series.
const SERIES_SWITCH: f64 = 1e-2;

/// Per-sample KL tolerance `c_t = c0 · exp(-decay · t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceSchedule {
    c0: f64,
    decay: f64,
}

impl ToleranceSchedule {
    pub fn new(c0: f64, decay: f64) -> Result<Self, FilterError> {
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(FilterError::Domain(format!(
                "initial tolerance must be positive and finite, got {c0}"
            )));
        }
        if !(decay >= 0.0 && decay.is_finite()) {
            return Err(FilterError::Domain(format!(
                "tolerance decay must be nonnegative and finite, got {decay}"
            )));
        }
        Ok(Self { c0, decay })
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// Tolerance at sample index `t`. Never returns zero, even once the
    /// exponential has underflowed.
    pub fn at(&self, t: u64) -> f64 {
        (self.c0 * (-self.decay * t as f64).exp()).max(f64::MIN_POSITIVE)
    }
}

/// Root of `γ(P, ·) = c` together with solver diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaSolution {
    pub theta: f64,
    /// `γ(P, θ) - c` at the returned root.
    pub gamma_residual: f64,
    pub iterations: usize,
    /// Upper end of the initial bracket, `(1 - 1e-9) / λ_max(P)`.
    pub bracket_high: f64,
}

/// `log(1 - a) + 1/(1 - a) - 1` for `a ∈ [0, 1)`.
///
/// For small `a` the two leading terms cancel, so the power series
/// `Σ_{k≥2} (k-1)/k · a^k` is used instead.
fn gamma_term(a: f64) -> f64 {
    if a < SERIES_SWITCH {
        let mut sum = 0.0;
        let mut power = a;
        for k in 2..=18 {
            power *= a;
            let kf = k as f64;
            sum += (kf - 1.0) / kf * power;
        }
        sum
    } else {
        (-a).ln_1p() + a / (1.0 - a)
    }
}

fn gamma_from_eigenvalues(eigenvalues: &[f64], theta: f64) -> f64 {
    0.5 * eigenvalues
        .iter()
        .map(|&lambda| gamma_term(theta * lambda))
        .sum::<f64>()
}

/// Eigenvalues of a symmetric matrix, rejecting anything not strictly PD.
fn pd_eigenvalues(p: &DMatrix<f64>, what: &'static str) -> Result<Vec<f64>, FilterError> {
    ensure_symmetric(p, what)?;
    let eigenvalues: Vec<f64> = p.clone().symmetric_eigenvalues().iter().copied().collect();
    if eigenvalues.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(FilterError::NotPositiveDefinite {
            what,
            matrix: p.clone(),
        });
    }
    Ok(eigenvalues)
}

fn lambda_max(eigenvalues: &[f64]) -> f64 {
    eigenvalues.iter().copied().fold(f64::MIN, f64::max)
}

/// `γ(P, θ)` for symmetric positive definite `P` and `0 ≤ θ < 1/λ_max(P)`.
pub fn gamma(p: &DMatrix<f64>, theta: f64) -> Result<f64, FilterError> {
    let eigenvalues = pd_eigenvalues(p, "gamma argument")?;
    let limit = 1.0 / lambda_max(&eigenvalues);
    if !(theta >= 0.0 && theta < limit) {
        return Err(FilterError::Domain(format!(
            "theta = {theta} outside [0, 1/λ_max) = [0, {limit})"
        )));
    }
    Ok(gamma_from_eigenvalues(&eigenvalues, theta))
}

/// KL divergence between `N(0, V)` and `N(0, P)`:
/// `½ [tr(P^-1 V) - n - log det V + log det P]`.
pub fn kl_gaussian_zero_mean(v: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<f64, FilterError> {
    if v.shape() != p.shape() || !v.is_square() {
        return Err(FilterError::Dimension {
            what: "KL covariance pair",
            expected: p.shape(),
            found: v.shape(),
        });
    }
    let n = v.nrows();
    let chol_v = v
        .clone()
        .cholesky()
        .ok_or_else(|| FilterError::NotPositiveDefinite {
            what: "KL first covariance",
            matrix: v.clone(),
        })?;
    let chol_p = p
        .clone()
        .cholesky()
        .ok_or_else(|| FilterError::NotPositiveDefinite {
            what: "KL second covariance",
            matrix: p.clone(),
        })?;
    let log_det = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let trace = chol_p.solve(v).trace();
    Ok(0.5 * (trace - n as f64 - log_det(&chol_v.l()) + log_det(&chol_p.l())))
}

fn solve_theta_eigen(eigenvalues: &[f64], c: f64) -> Result<ThetaSolution, FilterError> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(FilterError::Domain(format!(
            "tolerance must be positive and finite, got {c}"
        )));
    }
    let lambda_max = lambda_max(eigenvalues);
    let bracket_high = (1.0 - BRACKET_MARGIN) / lambda_max;
    let tol = THETA_RELATIVE_TOL * c.max(1e-12);

    let gamma_high = gamma_from_eigenvalues(eigenvalues, bracket_high);
    if !gamma_high.is_finite() || gamma_high < c {
        return Err(FilterError::NoRootInBracket {
            target: c,
            gamma_high,
            bracket_high,
            lambda_max,
        });
    }

    let (mut lo, mut hi) = (0.0, bracket_high);
    let mut theta = 0.5 * (lo + hi);
    let mut residual = f64::INFINITY;
    for iteration in 1..=THETA_MAX_ITERATIONS {
        theta = 0.5 * (lo + hi);
        residual = gamma_from_eigenvalues(eigenvalues, theta) - c;
        if residual.abs() <= tol {
            return Ok(ThetaSolution {
                theta,
                gamma_residual: residual,
                iterations: iteration,
                bracket_high,
            });
        }
        if residual < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
    }
    Err(FilterError::ThetaNotConverged {
        target: c,
        theta,
        residual,
        iterations: THETA_MAX_ITERATIONS,
    })
}

/// Bisection for the unique `θ ∈ (0, 1/λ_max(P))` with `γ(P, θ) = c`.
pub fn solve_theta(p: &DMatrix<f64>, c: f64) -> Result<ThetaSolution, FilterError> {
    let eigenvalues = pd_eigenvalues(p, "theta solver covariance")?;
    solve_theta_eigen(&eigenvalues, c)
}

/// `V = (P^-1 - θI)^-1` with `θ` solved for tolerance `c`, plus the `θ` used
/// (`None` when the tolerance floor short-circuits the solve).
pub fn robustify_with_theta(
    p: &DMatrix<f64>,
    c: f64,
) -> Result<(DMatrix<f64>, Option<ThetaSolution>), FilterError> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(FilterError::Domain(format!(
            "tolerance must be positive and finite, got {c}"
        )));
    }
    if c < TOLERANCE_FLOOR {
        return Ok((p.clone(), None));
    }
    ensure_symmetric(p, "predicted covariance")?;
    let eig = SymmetricEigen::new(p.clone());
    let eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if eigenvalues.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(FilterError::NotPositiveDefinite {
            what: "predicted covariance",
            matrix: p.clone(),
        });
    }
    let solution = solve_theta_eigen(&eigenvalues, c)?;
    let theta = solution.theta;

    // λ/(1-θλ) - λ = θλ²/(1-θλ): add the inflation to P rather than
    // rebuilding V from the eigenbasis, so V - P stays PSD to rounding.
    let inflation = eig
        .eigenvalues
        .map(|lambda| theta * lambda * lambda / (1.0 - theta * lambda));
    let u = &eig.eigenvectors;
    let correction = u * DMatrix::from_diagonal(&inflation) * u.transpose();
    let mut v = p + symmetrize(&correction);
    v = symmetrize(&v);
    Ok((v, Some(solution)))
}

/// Least favorable covariance `(P^-1 - θI)^-1` for KL tolerance `c`.
pub fn robustify(p: &DMatrix<f64>, c: f64) -> Result<DMatrix<f64>, FilterError> {
    robustify_with_theta(p, c).map(|(v, _)| v)
}
