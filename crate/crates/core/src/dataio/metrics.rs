use std::fmt;

use super::DataError;
use crate::housner::HousnerState;

/// One filter step as written to a trace file. `x` is the filtered mean
/// `x̂_{t|t}`; `v_diag` the diagonal of the covariance carried into the next
/// step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub x: [f64; 4],
    pub v_diag: [f64; 4],
    pub theta: f64,
    pub innovation: f64,
    /// `|x̂3 - β| / β`, when the truth is known.
    pub err_beta: Option<f64>,
    /// `|x̂4 - ω| / ω`, when the truth is known.
    pub err_omega: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EstimateTrace {
    pub rows: Vec<TraceRow>,
}

impl EstimateTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.rows
            .first()
            .is_some_and(|r| r.err_beta.is_some() && r.err_omega.is_some())
    }

    /// Rows whose parameter estimates left the physical range. The filter
    /// does not clamp them.
    pub fn non_physical_rows(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| !HousnerState::new(r.x[0], r.x[1], r.x[2], r.x[3]).is_physical())
            .count()
    }

    /// Fills the relative-error columns against known parameters.
    pub fn attach_truth(&mut self, true_beta: f64, true_omega: f64) {
        for row in &mut self.rows {
            row.err_beta = Some(relative_error(row.x[2], true_beta));
            row.err_omega = Some(relative_error(row.x[3], true_omega));
        }
    }
}

fn relative_error(estimate: f64, truth: f64) -> f64 {
    (estimate - truth).abs() / truth.abs()
}

/// Quality figures for one estimated parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterMetrics {
    pub terminal_error: f64,
    /// Earliest time after which the relative error stays at or below the
    /// threshold; `None` if the final sample is still above it.
    pub convergence_time: Option<f64>,
    /// Largest relative error from the convergence time onwards.
    pub max_post_convergence_error: Option<f64>,
    /// Absolute RMSE over the final 20 % of the horizon.
    pub tail_rmse: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub beta: ParameterMetrics,
    pub omega: ParameterMetrics,
}

/// Earliest `t*` with `errors[k] <= threshold` for every sample at or
/// after `t*`.
pub fn convergence_time(times: &[f64], errors: &[f64], threshold: f64) -> Option<usize> {
    match errors.iter().rposition(|&e| !(e <= threshold)) {
        None => (!times.is_empty()).then_some(0),
        Some(last_bad) if last_bad + 1 < errors.len() => Some(last_bad + 1),
        Some(_) => None,
    }
}

fn parameter_metrics(
    times: &[f64],
    estimates: &[f64],
    truth: f64,
    threshold: f64,
) -> ParameterMetrics {
    let errors: Vec<f64> = estimates
        .iter()
        .map(|&e| relative_error(e, truth))
        .collect();
    let converged = convergence_time(times, &errors, threshold);
    let tail_start = (estimates.len() as f64 * 0.8).floor() as usize;
    let tail = &estimates[tail_start.min(estimates.len() - 1)..];
    let tail_rmse =
        (tail.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / tail.len() as f64).sqrt();
    ParameterMetrics {
        terminal_error: *errors.last().expect("nonempty"),
        convergence_time: converged.map(|k| times[k]),
        max_post_convergence_error: converged
            .map(|k| errors[k..].iter().copied().fold(0.0, f64::max)),
        tail_rmse,
        threshold,
    }
}

pub fn compute_metrics(
    trace: &EstimateTrace,
    true_beta: f64,
    true_omega: f64,
    threshold_beta: f64,
    threshold_omega: f64,
) -> Result<Metrics, DataError> {
    if trace.is_empty() {
        return Err(DataError::Domain(
            "cannot compute metrics of an empty trace".into(),
        ));
    }
    if let Some(k) = trace.rows.windows(2).position(|w| !(w[1].t > w[0].t)) {
        return Err(DataError::Domain(format!(
            "trace time is not increasing at row {}",
            k + 1
        )));
    }
    let times: Vec<f64> = trace.rows.iter().map(|r| r.t).collect();
    let betas: Vec<f64> = trace.rows.iter().map(|r| r.x[2]).collect();
    let omegas: Vec<f64> = trace.rows.iter().map(|r| r.x[3]).collect();
    Ok(Metrics {
        beta: parameter_metrics(&times, &betas, true_beta, threshold_beta),
        omega: parameter_metrics(&times, &omegas, true_omega, threshold_omega),
    })
}

fn opt(v: Option<f64>, unit: &str) -> String {
    v.map_or_else(|| "never".to_string(), |v| format!("{v:.4}{unit}"))
}

impl fmt::Display for ParameterMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "terminal_err={:.3e} converged_at={} (thr {:.2}%) max_post_err={} tail_rmse={:.3e}",
            self.terminal_error,
            opt(self.convergence_time, " s"),
            self.threshold * 100.0,
            self.max_post_convergence_error
                .map_or_else(|| "n/a".to_string(), |v| format!("{v:.3e}")),
            self.tail_rmse
        )
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "beta : {}", self.beta)?;
        write!(f, "omega: {}", self.omega)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace_from(times: &[f64], beta: &[f64], omega: &[f64]) -> EstimateTrace {
        EstimateTrace {
            rows: times
                .iter()
                .zip(beta.iter().zip(omega))
                .map(|(&t, (&b, &w))| TraceRow {
                    t,
                    x: [0.0, 0.0, b, w],
                    v_diag: [1.0; 4],
                    theta: 0.0,
                    innovation: 0.0,
                    err_beta: None,
                    err_omega: None,
                })
                .collect(),
        }
    }

    #[test]
    fn exact_estimates_converge_immediately() {
        let times: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        let trace = trace_from(&times, &[0.612; 100], &[5.489; 100]);
        let m = compute_metrics(&trace, 0.612, 5.489, 0.01, 0.005).unwrap();
        assert_eq!(m.beta.terminal_error, 0.0);
        assert_eq!(m.beta.convergence_time, Some(0.0));
        assert_eq!(m.beta.max_post_convergence_error, Some(0.0));
        assert_eq!(m.omega.tail_rmse, 0.0);
    }

    #[test]
    fn convergence_at_first_sustained_entry() {
        // Error 5 % until 35 s, then 0.5 %; one earlier dip at 20 s.
        let times: Vec<f64> = (0..=100).map(|k| k as f64).collect();
        let beta: Vec<f64> = times
            .iter()
            .map(|&t| {
                if t >= 35.0 || t == 20.0 {
                    0.612 * 1.005
                } else {
                    0.612 * 1.05
                }
            })
            .collect();
        let trace = trace_from(&times, &beta, &[5.489; 101]);
        let m = compute_metrics(&trace, 0.612, 5.489, 0.01, 0.005).unwrap();
        assert_eq!(m.beta.convergence_time, Some(35.0));
        assert!((m.beta.max_post_convergence_error.unwrap() - 0.005).abs() < 1e-12);
    }

    #[test]
    fn never_converged_is_not_an_error() {
        let times = [0.0, 1.0, 2.0];
        let trace = trace_from(&times, &[0.0, 0.612, 0.0], &[5.489; 3]);
        let m = compute_metrics(&trace, 0.612, 5.489, 0.01, 0.005).unwrap();
        assert_eq!(m.beta.convergence_time, None);
        assert_eq!(m.beta.max_post_convergence_error, None);
        assert_eq!(m.omega.convergence_time, Some(0.0));
    }

    #[test]
    fn tail_rmse_uses_last_fifth() {
        let times: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let mut beta = vec![0.0; 10];
        beta[8] = 0.612 + 0.1;
        beta[9] = 0.612 - 0.1;
        let trace = trace_from(&times, &beta, &[5.489; 10]);
        let m = compute_metrics(&trace, 0.612, 5.489, 0.01, 0.005).unwrap();
        assert!((m.beta.tail_rmse - 0.1).abs() < 1e-12);
    }

    #[test]
    fn counts_non_physical_rows() {
        let trace = trace_from(
            &[0.0, 1.0, 2.0, 3.0],
            &[0.6, -0.1, 0.6, 1.5],
            &[5.0, 5.0, -5.0, 5.0],
        );
        assert_eq!(trace.non_physical_rows(), 3);
    }

    #[test]
    fn empty_and_unordered_traces_are_rejected() {
        assert!(compute_metrics(&EstimateTrace::default(), 0.6, 5.0, 0.01, 0.01).is_err());
        let trace = trace_from(&[0.0, 2.0, 1.0], &[0.6; 3], &[5.0; 3]);
        assert!(compute_metrics(&trace, 0.6, 5.0, 0.01, 0.01).is_err());
    }

    proptest! {
        #[test]
        fn looser_threshold_never_converges_later(
            errors in prop::collection::vec(0.0f64..0.1, 1..200),
            a in 0.0f64..0.1,
            b in 0.0f64..0.1,
        ) {
            let (tight, loose) = if a < b { (a, b) } else { (b, a) };
            let times: Vec<f64> = (0..errors.len()).map(|k| k as f64).collect();
            let t_tight = convergence_time(&times, &errors, tight);
            let t_loose = convergence_time(&times, &errors, loose);
            if let Some(tt) = t_tight {
                prop_assert!(t_loose.is_some_and(|tl| tl <= tt));
            }
        }
    }
}
