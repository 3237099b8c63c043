//! Discrete-time nonlinear state-space models
//!
//! ```text
//! x_{t+1} = f(x_t, u_t) + B v_t
//! y_t     = h(x_t, u_t) + D v_t,     E[v_t v_sᵀ] = I δ_{t-s}
//! ```

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::FilterError;

/// A model the EKF/REKF recursions can run on.
///
/// Jacobians are evaluated wherever the recursion asks for them: the
/// measurement Jacobian at the predicted mean, the transition Jacobian at
/// the filtered mean.
pub trait NonlinearModel {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    fn noise_dim(&self) -> usize {
        self.process_shaping().ncols()
    }

    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn measurement(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn transition_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    fn measurement_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;

    /// `B`, n × m.
    fn process_shaping(&self) -> &DMatrix<f64>;
    /// `D`, p × m.
    fn measurement_shaping(&self) -> &DMatrix<f64>;

    /// `B Bᵀ`
    fn process_covariance(&self) -> DMatrix<f64> {
        let b = self.process_shaping();
        b * b.transpose()
    }

    /// `D Dᵀ`
    fn measurement_covariance(&self) -> DMatrix<f64> {
        let d = self.measurement_shaping();
        d * d.transpose()
    }
}

/// Symmetric square root of a PSD matrix. Negative eigenvalues within
/// rounding of zero are clamped; anything more negative is rejected.
pub fn psd_sqrt(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>, FilterError> {
    super::ensure_symmetric(m, what)?;
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    if eig
        .eigenvalues
        .iter()
        .any(|&l| l < -1e-12 * scale || !l.is_finite())
    {
        return Err(FilterError::NotPositiveDefinite {
            what,
            matrix: m.clone(),
        });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let u = &eig.eigenvectors;
    Ok(super::symmetrize(
        &(u * DMatrix::from_diagonal(&roots) * u.transpose()),
    ))
}

/// Noise shaping for independent process and measurement noise:
/// `B = [Q^½ | 0]`, `D = [0 | R^½]`, so `BBᵀ = Q`, `DDᵀ = R`, `BDᵀ = 0`.
pub fn independent_noise_shaping(
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>), FilterError> {
    if !q.is_square() || !r.is_square() {
        return Err(FilterError::Dimension {
            what: "noise covariance",
            expected: (q.nrows(), q.nrows()),
            found: q.shape(),
        });
    }
    if r.clone().cholesky().is_none() {
        return Err(FilterError::NotPositiveDefinite {
            what: "measurement noise covariance",
            matrix: r.clone(),
        });
    }
    let (n, p) = (q.nrows(), r.nrows());
    let mut b = DMatrix::zeros(n, n + p);
    let mut d = DMatrix::zeros(p, n + p);
    b.view_mut((0, 0), (n, n))
        .copy_from(&psd_sqrt(q, "process noise covariance")?);
    d.view_mut((0, n), (p, p))
        .copy_from(&psd_sqrt(r, "measurement noise covariance")?);
    Ok((b, d))
}

/// `K_{z|x} = [B; D][Bᵀ Dᵀ]`
pub fn joint_noise_covariance<M: NonlinearModel + ?Sized>(model: &M) -> DMatrix<f64> {
    let b = model.process_shaping();
    let d = model.measurement_shaping();
    let n = b.nrows();
    let p = d.nrows();
    let mut stacked = DMatrix::zeros(n + p, b.ncols());
    stacked.view_mut((0, 0), (n, b.ncols())).copy_from(b);
    stacked.view_mut((n, 0), (p, d.ncols())).copy_from(d);
    &stacked * stacked.transpose()
}

/// Checks that `K_{z|x}` is positive definite.
pub fn check_joint_noise<M: NonlinearModel + ?Sized>(model: &M) -> Result<(), FilterError> {
    let b = model.process_shaping();
    let d = model.measurement_shaping();
    if b.ncols() != d.ncols() {
        return Err(FilterError::Dimension {
            what: "measurement noise shaping",
            expected: (d.nrows(), b.ncols()),
            found: d.shape(),
        });
    }
    let k = joint_noise_covariance(model);
    if k.clone().cholesky().is_none() {
        return Err(FilterError::NotPositiveDefinite {
            what: "joint noise covariance",
            matrix: k,
        });
    }
    Ok(())
}

/// `x' = F x + G u + B v`, `y = H x + J u + D v`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl LinearModel {
    /// Linear model with a single unused input channel.
    pub fn new(
        f: DMatrix<f64>,
        h: DMatrix<f64>,
        b: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self, FilterError> {
        let (n, p) = (f.nrows(), h.nrows());
        Self::with_input(f, DMatrix::zeros(n, 1), h, DMatrix::zeros(p, 1), b, d)
    }

    pub fn with_input(
        f: DMatrix<f64>,
        g: DMatrix<f64>,
        h: DMatrix<f64>,
        j: DMatrix<f64>,
        b: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self, FilterError> {
        let n = f.nrows();
        let p = h.nrows();
        let q = g.ncols();
        let m = b.ncols();
        let checks = [
            ("transition matrix", (n, n), f.shape()),
            ("input matrix", (n, q), g.shape()),
            ("measurement matrix", (p, n), h.shape()),
            ("feedthrough matrix", (p, q), j.shape()),
            ("measurement noise shaping", (p, m), d.shape()),
        ];
        for (what, expected, found) in checks {
            if expected != found {
                return Err(FilterError::Dimension {
                    what,
                    expected,
                    found,
                });
            }
        }
        if b.nrows() != n {
            return Err(FilterError::Dimension {
                what: "process noise shaping",
                expected: (n, m),
                found: b.shape(),
            });
        }
        Ok(Self { f, g, h, j, b, d })
    }
}

impl NonlinearModel for LinearModel {
    fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    fn input_dim(&self) -> usize {
        self.g.ncols()
    }

    fn output_dim(&self) -> usize {
        self.h.nrows()
    }

    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.f * x + &self.g * u
    }

    fn measurement(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.h * x + &self.j * u
    }

    fn transition_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.f.clone()
    }

    fn measurement_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.h.clone()
    }

    fn process_shaping(&self) -> &DMatrix<f64> {
        &self.b
    }

    fn measurement_shaping(&self) -> &DMatrix<f64> {
        &self.d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn independent_shaping_reproduces_covariances() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = DMatrix::from_element(1, 1, 4.0);
        let (b, d) = independent_noise_shaping(&q, &r).unwrap();
        assert_eq!(b.shape(), (2, 3));
        assert_eq!(d.shape(), (1, 3));
        assert!((&b * b.transpose() - &q).amax() < 1e-14);
        assert!((&d * d.transpose() - &r).amax() < 1e-14);
        assert!((&b * d.transpose()).amax() == 0.0);
    }

    #[test]
    fn psd_sqrt_accepts_singular_diagonal() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.0, 9.0]));
        let s = psd_sqrt(&q, "q").unwrap();
        assert!((s[(0, 0)] - 2.0).abs() < 1e-15);
        assert_eq!(s[(1, 1)], 0.0);
        assert!((s[(2, 2)] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_singular_measurement_noise() {
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::zeros(1, 1);
        assert!(matches!(
            independent_noise_shaping(&q, &r),
            Err(FilterError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn joint_noise_check() {
        let (b, d) =
            independent_noise_shaping(&DMatrix::identity(2, 2), &DMatrix::identity(1, 1)).unwrap();
        let model = LinearModel::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 2),
            b,
            d.clone(),
        )
        .unwrap();
        assert!(check_joint_noise(&model).is_ok());

        let degenerate = LinearModel::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 2),
            DMatrix::zeros(2, 3),
            d,
        )
        .unwrap();
        assert!(check_joint_noise(&degenerate).is_err());
    }

    #[test]
    fn linear_model_dimension_errors() {
        let err = LinearModel::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 3),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 2),
        );
        assert!(matches!(err, Err(FilterError::Dimension { .. })));
    }
}
