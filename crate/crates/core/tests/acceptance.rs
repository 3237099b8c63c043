//! Acceptance checks. Prints one `PASS`/`FAIL` line per criterion.
//!
//! Runs without the libtest harness so the lines reach the terminal even
//! when everything passes. Exits nonzero if a criterion fails that is not
//! listed in `KNOWN_UNMET`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rekf::dataio::{compute_metrics, write_trace_to, ExperimentConfig, FilterKind};
use rekf::experiment::{estimate_dataset, filter_model, run_steps, simulate};
use rekf::filter::{
    gamma, solve_theta, FilterVariant, GaussianBelief, LinearModel, NonlinearModel,
};
use rekf::housner::{
    drift, drift_jacobian, measurement, measurement_jacobian, rk4_step, HousnerParams,
};
use rekf::simulation::{mismatch_scenario, MismatchKind};

/// Criteria that fail on this implementation for reasons recorded in the
/// README. They still run and still print `FAIL`.
const KNOWN_UNMET: &[&str] = &["robust advantage"];

struct Outcome {
    pass: bool,
    detail: String,
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(config_path(name)).expect("shipped config loads")
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.1
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    a.qr().q()
}

fn lambda_max(p: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(p.clone()).eigenvalues.max()
}

/// `KL(N(0, V) || N(0, P))`, computed from explicit inverses and determinants.
fn kl_oracle(v: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let n = p.nrows() as f64;
    let p_inv = p.clone().try_inverse().unwrap();
    0.5 * ((&p_inv * v).trace() - n + p.determinant().ln() - v.determinant().ln())
}

fn gamma_kl_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p = random_pd(&mut rng, 4);
        let theta = rng.random_range(0.01..0.95) / lambda_max(&p);
        let v_inv = p.clone().try_inverse().unwrap() - DMatrix::identity(4, 4) * theta;
        let v = v_inv.try_inverse().unwrap();
        let v = (&v + v.transpose()) * 0.5;
        let g = gamma(&p, theta).unwrap();
        let kl = kl_oracle(&v, &p);
        worst = worst.max((g - kl).abs() / (1.0 + g));
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: worst <= 1e-10 && elapsed < Duration::from_secs(5),
        detail: format!("max |γ-KL|/(1+γ) = {worst:.2e} (≤ 1e-10), {elapsed:.2?} (< 5 s)"),
    }
}

fn theta_solver() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for &c in &[1e-8, 1e-5, 1e-3, 0.1, 1.0, 10.0] {
        for _ in 0..100 {
            let u = random_orthogonal(&mut rng, 4);
            let low = 10f64.powf(rng.random_range(-3.0..2.0));
            let condition = 10f64.powf(rng.random_range(0.0..6.0));
            let mut eig = [low, low * condition, 0.0, 0.0];
            eig[2] = low * condition.powf(rng.random_range(0.0..1.0));
            eig[3] = low * condition.powf(rng.random_range(0.0..1.0));
            let p = &u * DMatrix::from_diagonal(&DVector::from_row_slice(&eig)) * u.transpose();
            let p = (&p + p.transpose()) * 0.5;
            match solve_theta(&p, c) {
                Ok(sol) => {
                    let residual = (gamma(&p, sol.theta).unwrap() - c).abs() / c.max(1e-12);
                    let inside = sol.theta > 0.0 && sol.theta < 1.0 / lambda_max(&p);
                    if !inside {
                        failures.push(format!("θ = {} outside bracket for c = {c}", sol.theta));
                    }
                    worst = worst.max(residual);
                }
                Err(e) => failures.push(format!("c = {c}: {e}")),
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && worst <= 1e-9 && elapsed < Duration::from_secs(10);
    let mut detail = format!("max relative residual {worst:.2e} (≤ 1e-9), {elapsed:.2?} (< 10 s)");
    if let Some(first) = failures.first() {
        detail.push_str(&format!(", {} failures, first: {first}", failures.len()));
    }
    Outcome { pass, detail }
}

/// Textbook Kalman filter with the Joseph-form covariance update.
struct TextbookKf {
    f: DMatrix<f64>,
    h: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl TextbookKf {
    /// Returns `(x̂_{t|t}, x̂_{t+1}, P_{t+1})`.
    fn step(
        &self,
        x: &DVector<f64>,
        p: &DMatrix<f64>,
        y: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
        let n = x.len();
        let s = &self.h * p * self.h.transpose() + &self.r;
        let k = p * self.h.transpose() * s.try_inverse().unwrap();
        let filtered = x + &k * (y - &self.h * x);
        let i_kh = DMatrix::identity(n, n) - &k * &self.h;
        let p_filtered = &i_kh * p * i_kh.transpose() + &k * &self.r * k.transpose();
        let next = &self.f * &filtered;
        let p_next = &self.f * p_filtered * self.f.transpose() + &self.q;
        (filtered, next, p_next)
    }
}

fn ekf_matches_kf() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=5);
        let p = rng.random_range(1..=5);
        let mut f = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let row_sum = f.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max);
        f /= row_sum.max(1e-3) * 1.05;
        let h = DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
        let bq = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
        let dr = DMatrix::from_fn(p, p, |_, _| rng.random_range(-0.5..0.5))
            + DMatrix::identity(p, p) * 0.5;
        let mut b = DMatrix::zeros(n, n + p);
        b.view_mut((0, 0), (n, n)).copy_from(&bq);
        let mut d = DMatrix::zeros(p, n + p);
        d.view_mut((0, n), (p, p)).copy_from(&dr);
        let kf = TextbookKf {
            f: f.clone(),
            h: h.clone(),
            q: &bq * bq.transpose(),
            r: &dr * dr.transpose(),
        };
        let model = LinearModel::new(f.clone(), h.clone(), b, d).unwrap();

        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let p0 = random_pd(&mut rng, n);
        let mut belief = GaussianBelief::new(x0.clone(), p0.clone()).unwrap();
        let (mut kx, mut kp) = (x0, p0);
        let mut state = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let u = DVector::zeros(model.input_dim());
        for t in 0..100u64 {
            let y = &h * &state + DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
            state = &f * &state + DVector::from_fn(n, |_, _| rng.random_range(-0.3..0.3));
            let out = FilterVariant::Ekf.step(t, &belief, &model, &y, &u).unwrap();
            let (filtered, next, p_next) = kf.step(&kx, &kp, &y);
            worst = worst
                .max((&out.filtered_mean - &filtered).amax())
                .max((&out.predicted.mean - &next).amax());
            belief = out.predicted;
            kx = next;
            kp = p_next;
        }
    }
    Outcome {
        pass: worst <= 1e-10,
        detail: format!("max state-estimate deviation {worst:.2e} (≤ 1e-10)"),
    }
}

fn rk4_order() -> Outcome {
    let decay = |x: &nalgebra::SVector<f64, 1>, _u: f64| -x;
    let error = |ts: f64| {
        let x = nalgebra::SVector::<f64, 1>::new(1.0);
        (rk4_step(decay, &x, 0.0, ts)[0] - (-ts).exp()).abs()
    };
    let ratio = error(0.1) / error(0.05);
    Outcome {
        pass: (ratio - 32.0).abs() <= 3.2,
        detail: format!("error ratio {ratio:.3} (32 ± 10 %)"),
    }
}

fn relative_gap(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let gap = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    gap / scale
}

fn jacobian_agreement() -> Outcome {
    let params = HousnerParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = Vector4::<f64>::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.1..1.0),
            rng.random_range(1.0..10.0),
        );
        let u = rng.random_range(-3.0..3.0);
        let mut fd_drift = Vec::with_capacity(16);
        let mut fd_meas = Vec::with_capacity(4);
        let mut columns = Vec::with_capacity(4);
        for i in 0..4 {
            let h = 1e-6 * x[i].abs().max(1.0);
            let (mut plus, mut minus) = (x, x);
            plus[i] += h;
            minus[i] -= h;
            let spacing = plus[i] - minus[i];
            columns.push((drift(&plus, u, &params) - drift(&minus, u, &params)) / spacing);
            fd_meas
                .push((measurement(&plus, u, &params) - measurement(&minus, u, &params)) / spacing);
        }
        let analytic = drift_jacobian(&x, u, &params);
        let mut analytic_drift = Vec::with_capacity(16);
        for (j, column) in columns.iter().enumerate() {
            for i in 0..4 {
                fd_drift.push(column[i]);
                analytic_drift.push(analytic[(i, j)]);
            }
        }
        let analytic_meas: Vec<f64> = measurement_jacobian(&x, u, &params)
            .iter()
            .copied()
            .collect();
        worst = worst
            .max(relative_gap(&analytic_drift, &fd_drift))
            .max(relative_gap(&analytic_meas, &fd_meas));
    }
    Outcome {
        pass: worst <= 1e-6,
        detail: format!("max relative gap {worst:.2e} (≤ 1e-6)"),
    }
}

fn covariance_ordering() -> Outcome {
    let mut cfg = load("elcentro-like_ic-near.toml");
    cfg.filter.kind = FilterKind::Rekf;
    let data = simulate(&cfg).unwrap();
    let model = filter_model(&cfg).unwrap();
    let variant = cfg.filter.variant(FilterKind::Rekf).unwrap();
    let initial = GaussianBelief::from_diagonal(&cfg.filter.x0, &cfg.filter.v0).unwrap();
    let mut min_eig = f64::INFINITY;
    let mut steps = 0usize;
    let result = run_steps(
        &model,
        &variant,
        initial,
        &data.excitation.samples,
        &data.measurements.values,
        cfg.model.ts,
        |_, out| {
            let gap = &out.predicted.covariance - &out.nominal_predicted_cov;
            min_eig = min_eig.min(SymmetricEigen::new(gap).eigenvalues.min());
            steps += 1;
        },
    );
    match result {
        Ok(_) => Outcome {
            pass: steps == 100_000 && min_eig >= -1e-12,
            detail: format!("{steps} steps, min eigenvalue of V - P {min_eig:.2e} (≥ -1e-12)"),
        },
        Err(e) => Outcome {
            pass: false,
            detail: format!("run failed: {e}"),
        },
    }
}

fn convergence_line(cfg: &ExperimentConfig) -> Result<(bool, String), String> {
    let start = Instant::now();
    let data = simulate(cfg).map_err(|e| e.to_string())?;
    let trace = estimate_dataset(cfg, FilterKind::Rekf, &data).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let m = compute_metrics(
        &trace,
        data.truth.true_beta,
        data.truth.true_omega,
        0.02,
        0.01,
    )
    .map_err(|e| e.to_string())?;
    let within = |t: Option<f64>| t.is_some_and(|t| t <= 40.0);
    let bounded = |e: Option<f64>, thr: f64| e.is_some_and(|e| e <= thr);
    let pass = within(m.beta.convergence_time)
        && within(m.omega.convergence_time)
        && bounded(m.beta.max_post_convergence_error, 0.02)
        && bounded(m.omega.max_post_convergence_error, 0.01)
        && elapsed <= Duration::from_secs(10);
    let show = |t: Option<f64>| t.map_or("never".to_string(), |t| format!("{t:.2} s"));
    let show_err = |e: Option<f64>| e.map_or("n/a".to_string(), |e| format!("{:.3} %", e * 100.0));
    Ok((
        pass,
        format!(
            "β converged at {} (max after {}), ω converged at {} (max after {}), run {elapsed:.2?}",
            show(m.beta.convergence_time),
            show_err(m.beta.max_post_convergence_error),
            show(m.omega.convergence_time),
            show_err(m.omega.max_post_convergence_error),
        ),
    ))
}

fn convergence() -> Outcome {
    let cfg = load("elcentro-like_ic-near.toml");
    match convergence_line(&cfg) {
        Ok((pass, detail)) => Outcome {
            pass,
            detail: format!("q_scale {:e}: {detail}", cfg.filter.q_scale),
        },
        Err(e) => Outcome {
            pass: false,
            detail: e,
        },
    }
}

fn robust_advantage() -> Outcome {
    let base = load("elcentro-like_ic-low.toml");
    let scenarios = [
        (MismatchKind::WrongR, 4.0),
        (MismatchKind::CoarseTruthIntegration, 10.0),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (kind, magnitude) in scenarios {
        let wins: Vec<bool> = std::thread::scope(|scope| {
            let handles: Vec<_> = (1..=10u64)
                .map(|seed| {
                    let mut cfg = base.clone();
                    cfg.seed = seed;
                    cfg.data = mismatch_scenario(&cfg.data, kind, magnitude).unwrap();
                    scope.spawn(move || {
                        let data = simulate(&cfg).unwrap();
                        let tail = |kind| {
                            estimate_dataset(&cfg, kind, &data).ok().and_then(|trace| {
                                compute_metrics(
                                    &trace,
                                    data.truth.true_beta,
                                    data.truth.true_omega,
                                    0.02,
                                    0.01,
                                )
                                .ok()
                                .map(|m| (m.beta.tail_rmse, m.omega.tail_rmse))
                            })
                        };
                        match (tail(FilterKind::Ekf), tail(FilterKind::Rekf)) {
                            (Some(e), Some(r)) => r.0 <= e.0 && r.1 <= e.1,
                            (None, Some(_)) => true,
                            _ => false,
                        }
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let count = wins.iter().filter(|&&w| w).count();
        pass &= count >= 8;
        parts.push(format!("{kind:?} {count}/10"));
    }
    Outcome {
        pass,
        detail: format!(
            "REKF tail RMSE ≤ EKF on x3 and x4: {} (need ≥ 8 each)",
            parts.join(", ")
        ),
    }
}

fn degenerate_tolerance() -> Outcome {
    let mut cfg = load("elcentro-like_ic-near.toml");
    cfg.filter.c0 = 1e-13;
    let data = simulate(&cfg).unwrap();
    let bytes = |kind| {
        let trace = estimate_dataset(&cfg, kind, &data).unwrap();
        let mut out = Vec::new();
        write_trace_to(&mut out, &trace).unwrap();
        out
    };
    let (ekf, rekf) = (bytes(FilterKind::Ekf), bytes(FilterKind::Rekf));
    Outcome {
        pass: ekf == rekf,
        detail: format!(
            "c0 = 1e-13, {} trace bytes, identical: {}",
            ekf.len(),
            ekf == rekf
        ),
    }
}

fn main() -> ExitCode {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check); 9] = [
        ("gamma-KL identity", gamma_kl_identity),
        ("theta solver", theta_solver),
        ("EKF equals KF on linear systems", ekf_matches_kf),
        ("RK4 order", rk4_order),
        ("Jacobian agreement", jacobian_agreement),
        ("covariance ordering", covariance_ordering),
        ("convergence", convergence),
        ("robust advantage", robust_advantage),
        ("degenerate tolerance", degenerate_tolerance),
    ];
    let mut unexpected = 0;
    for (name, check) in criteria {
        let outcome = check();
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        let known = !outcome.pass && KNOWN_UNMET.contains(&name);
        println!(
            "acceptance {status} {name}: {}{}",
            outcome.detail,
            if known {
                " [known unmet, see README]"
            } else {
                ""
            }
        );
        if !outcome.pass && !known {
            unexpected += 1;
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} acceptance criteria failed unexpectedly");
        ExitCode::FAILURE
    }
}
