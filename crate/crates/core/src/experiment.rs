//! End-to-end experiment pipeline: synthetic data generation and filter runs
//! driven by an [`ExperimentConfig`].

use nalgebra::DVector;
use thiserror::Error;

use crate::dataio::{DataError, EstimateTrace, ExperimentConfig, FilterKind, TraceRow};
use crate::filter::{FilterError, FilterVariant, GaussianBelief, NonlinearModel, StepOutput};
use crate::housner::{build_model, HousnerModel};
use crate::simulation::{
    gen_excitation, simulate_truth, synthesize_measurements, ExcitationSignal, MeasurementSeries,
    SimError, TruthTrajectory,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("filter setup")]
    Setup(#[source] FilterError),
    #[error("filter failed at step {step} (t = {t} s)")]
    Step {
        step: usize,
        t: f64,
        #[source]
        source: FilterError,
    },
}

/// Generated excitation, truth and force record.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub excitation: ExcitationSignal,
    pub truth: TruthTrajectory,
    pub measurements: MeasurementSeries,
}

/// Generates data per the `[excitation]`, `[truth]` and `[data]` sections.
/// The excitation uses `seed`, the measurement noise `seed + 1`.
pub fn simulate(config: &ExperimentConfig) -> Result<Dataset, ExperimentError> {
    let excitation_cfg = config
        .excitation
        .as_ref()
        .ok_or_else(|| DataError::Config("simulation needs an [excitation] section".into()))?;
    let truth_cfg = config
        .truth
        .ok_or_else(|| DataError::Config("simulation needs a [truth] section".into()))?;
    let excitation = gen_excitation(
        &excitation_cfg.kind,
        excitation_cfg.duration,
        config.model.ts,
        config.seed,
    )?;
    let truth = simulate_truth(
        &excitation,
        &config.model,
        truth_cfg.beta,
        truth_cfg.omega,
        (truth_cfg.d0, truth_cfg.velocity0),
        config.data.substeps,
        config.data.hold,
    )?;
    let noise_seed = config.seed.wrapping_add(1);
    let measurements = synthesize_measurements(
        &truth,
        &excitation,
        &config.model,
        &config.data.noise,
        noise_seed,
    )?;
    Ok(Dataset {
        excitation,
        truth,
        measurements,
    })
}

pub fn filter_model(config: &ExperimentConfig) -> Result<HousnerModel, ExperimentError> {
    build_model(
        config.model,
        config.filter.process_diagonal(),
        config.filter.r,
    )
    .map_err(ExperimentError::Setup)
}

/// Runs `variant` over `(u_k, y_k)` pairs, calling `observe` after every
/// step. Returns the final predicted belief.
pub fn run_steps<M, F>(
    model: &M,
    variant: &FilterVariant,
    initial: GaussianBelief,
    u: &[f64],
    y: &[f64],
    ts: f64,
    mut observe: F,
) -> Result<GaussianBelief, ExperimentError>
where
    M: NonlinearModel + ?Sized,
    F: FnMut(usize, &StepOutput),
{
    if u.len() != y.len() {
        return Err(DataError::Domain(format!(
            "input has {} samples but measurement has {}",
            u.len(),
            y.len()
        ))
        .into());
    }
    let mut belief = initial;
    let mut u_vec = DVector::zeros(1);
    let mut y_vec = DVector::zeros(1);
    for k in 0..u.len() {
        u_vec[0] = u[k];
        y_vec[0] = y[k];
        let out = variant
            .step(k as u64, &belief, model, &y_vec, &u_vec)
            .map_err(|source| ExperimentError::Step {
                step: k,
                t: k as f64 * ts,
                source,
            })?;
        observe(k, &out);
        belief = out.predicted;
    }
    Ok(belief)
}

/// Runs the configured filter of the given kind and records its trace.
/// Relative-error columns are filled when `truth` is `Some((β, ω))`.
pub fn estimate(
    config: &ExperimentConfig,
    kind: FilterKind,
    u: &[f64],
    y: &[f64],
    truth: Option<(f64, f64)>,
) -> Result<EstimateTrace, ExperimentError> {
    let model = filter_model(config)?;
    let variant = config.filter.variant(kind)?;
    let initial = GaussianBelief::from_diagonal(&config.filter.x0, &config.filter.v0)
        .map_err(ExperimentError::Setup)?;
    let ts = config.model.ts;
    let mut rows = Vec::with_capacity(u.len());
    run_steps(&model, &variant, initial, u, y, ts, |k, out| {
        let x = &out.filtered_mean;
        let v = &out.predicted.covariance;
        rows.push(TraceRow {
            t: k as f64 * ts,
            x: [x[0], x[1], x[2], x[3]],
            v_diag: [v[(0, 0)], v[(1, 1)], v[(2, 2)], v[(3, 3)]],
            theta: out.theta,
            innovation: out.innovation[0],
            err_beta: None,
            err_omega: None,
        });
    })?;
    let mut trace = EstimateTrace { rows };
    if let Some((beta, omega)) = truth {
        trace.attach_truth(beta, omega);
    }
    Ok(trace)
}

/// [`estimate`] on a generated dataset, with errors against its truth.
pub fn estimate_dataset(
    config: &ExperimentConfig,
    kind: FilterKind,
    data: &Dataset,
) -> Result<EstimateTrace, ExperimentError> {
    estimate(
        config,
        kind,
        &data.excitation.samples,
        &data.measurements.values,
        Some((data.truth.true_beta, data.truth.true_omega)),
    )
}
