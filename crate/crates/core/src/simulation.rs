//! Synthetic ground truth for the TLD identification problem: excitation
//! signals, true sloshing trajectories and noisy force records.

use std::path::PathBuf;

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::DataError;
use crate::housner::{self, rk4_step_timed, HousnerParams, HousnerState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("truth trajectory became non-finite at step {step}")]
    Blowup { step: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Sampled base acceleration, m/s².
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationSignal {
    pub ts: f64,
    pub samples: Vec<f64>,
    pub label: String,
}

impl ExcitationSignal {
    pub fn new(ts: f64, samples: Vec<f64>, label: impl Into<String>) -> Result<Self, SimError> {
        if !(ts > 0.0 && ts.is_finite()) {
            return Err(SimError::Domain(format!(
                "sampling time must be positive, got {ts}"
            )));
        }
        if samples.is_empty() {
            return Err(SimError::Domain("excitation has no samples".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(SimError::Domain(format!(
                "excitation sample {i} is not finite"
            )));
        }
        Ok(Self {
            ts,
            samples,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.len() as f64).sqrt()
    }
}

/// Excitation generator settings. Serialized with a `kind` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExcitationKind {
    Sine {
        amplitude: f64,
        frequency_hz: f64,
    },
    /// Linear sweep from `f0_hz` to `f1_hz` over the whole duration.
    Chirp {
        amplitude: f64,
        f0_hz: f64,
        f1_hz: f64,
    },
    /// White Gaussian noise smoothed by a moving average whose first null
    /// sits at `cutoff_hz`, rescaled to the requested RMS.
    BandlimitedNoise {
        rms: f64,
        #[serde(default = "default_cutoff_hz")]
        cutoff_hz: f64,
    },
    /// `u` column of a signal CSV.
    FromFile {
        path: PathBuf,
    },
}

fn default_cutoff_hz() -> f64 {
    10.0
}

/// Number of samples covering `duration` at step `ts`.
pub fn sample_count(duration: f64, ts: f64) -> usize {
    (duration / ts).round() as usize
}

pub fn gen_excitation(
    kind: &ExcitationKind,
    duration: f64,
    ts: f64,
    seed: u64,
) -> Result<ExcitationSignal, SimError> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(SimError::Domain(format!(
            "duration must be positive, got {duration}"
        )));
    }
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(SimError::Domain(format!(
            "sampling time must be positive, got {ts}"
        )));
    }
    let n = sample_count(duration, ts);
    if n == 0 {
        return Err(SimError::Domain(format!(
            "duration {duration} s is shorter than one sample of {ts} s"
        )));
    }
    let time = |k: usize| k as f64 * ts;
    let tau = std::f64::consts::TAU;

    match kind {
        ExcitationKind::Sine {
            amplitude,
            frequency_hz,
        } => {
            let samples = (0..n)
                .map(|k| amplitude * (tau * frequency_hz * time(k)).sin())
                .collect();
            ExcitationSignal::new(ts, samples, format!("sine {frequency_hz} Hz"))
        }
        ExcitationKind::Chirp {
            amplitude,
            f0_hz,
            f1_hz,
        } => {
            let rate = (f1_hz - f0_hz) / duration;
            let samples = (0..n)
                .map(|k| {
                    let t = time(k);
                    amplitude * (tau * (f0_hz * t + 0.5 * rate * t * t)).sin()
                })
                .collect();
            ExcitationSignal::new(ts, samples, format!("chirp {f0_hz}-{f1_hz} Hz"))
        }
        ExcitationKind::BandlimitedNoise { rms, cutoff_hz } => {
            if !(*cutoff_hz > 0.0) || !(*rms >= 0.0) {
                return Err(SimError::Config(format!(
                    "band-limited noise needs cutoff > 0 and rms >= 0, got {cutoff_hz}, {rms}"
                )));
            }
            let window = ((1.0 / (cutoff_hz * ts)).round() as usize).max(1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let white: Vec<f64> = (0..n + window - 1)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let mut acc: f64 = white[..window].iter().sum();
            let mut smoothed = Vec::with_capacity(n);
            smoothed.push(acc);
            for k in 1..n {
                acc += white[k + window - 1] - white[k - 1];
                smoothed.push(acc);
            }
            let mean = smoothed.iter().sum::<f64>() / n as f64;
            let centered: Vec<f64> = smoothed.iter().map(|v| v - mean).collect();
            let current = (centered.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            let scale = if current > 0.0 { rms / current } else { 0.0 };
            let samples = centered.into_iter().map(|v| v * scale).collect();
            ExcitationSignal::new(
                ts,
                samples,
                format!("band-limited noise 0-{cutoff_hz} Hz, seed {seed}"),
            )
        }
        ExcitationKind::FromFile { path } => {
            let signal = crate::dataio::read_signal_csv(path)?;
            if ((signal.ts - ts) / ts).abs() > 1e-9 {
                return Err(SimError::Config(format!(
                    "{} is sampled at {} s, expected {ts} s",
                    path.display(),
                    signal.ts
                )));
            }
            ExcitationSignal::new(ts, signal.u, path.display().to_string())
        }
    }
}

/// How the sampled input is interpolated inside each sampling period when
/// integrating the truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputHold {
    /// Piecewise constant, as the filter model assumes.
    #[default]
    Zero,
    /// Linear between consecutive samples.
    Linear,
}

/// True trajectory: `states[k]` is the state at `t = k·ts`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrajectory {
    pub ts: f64,
    pub states: Vec<HousnerState>,
    pub true_beta: f64,
    pub true_omega: f64,
}

/// Integrates `d̈ + 2ξωḋ + ω²d = -u` with `substeps` RK4 steps per sample.
pub fn simulate_truth(
    excitation: &ExcitationSignal,
    params: &HousnerParams,
    true_beta: f64,
    true_omega: f64,
    initial: (f64, f64),
    substeps: usize,
    hold: InputHold,
) -> Result<TruthTrajectory, SimError> {
    if substeps == 0 {
        return Err(SimError::Domain("substeps must be at least 1".into()));
    }
    let (d0, v0) = initial;
    if ![true_beta, true_omega, d0, v0]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(SimError::Domain("truth parameters must be finite".into()));
    }
    let ts = excitation.ts;
    let h = ts / substeps as f64;
    let xi = params.xi;
    let u = &excitation.samples;

    let mut states = Vec::with_capacity(u.len() + 1);
    // [ḋ, d]
    let mut x = Vector2::new(v0, d0);
    states.push(HousnerState::new(v0, d0, true_beta, true_omega));
    for k in 0..u.len() {
        let (u0, slope) = match hold {
            InputHold::Zero => (u[k], 0.0),
            InputHold::Linear => {
                let next = u.get(k + 1).copied().unwrap_or(u[k]);
                (u[k], (next - u[k]) / ts)
            }
        };
        for s in 0..substeps {
            let offset = s as f64 * h;
            x = rk4_step_timed(
                |tau, state: &Vector2<f64>| {
                    let input = u0 + slope * (offset + tau);
                    Vector2::new(
                        -input
                            - 2.0 * xi * true_omega * state[0]
                            - true_omega * true_omega * state[1],
                        state[0],
                    )
                },
                &x,
                h,
            );
        }
        if !(x[0].is_finite() && x[1].is_finite()) {
            return Err(SimError::Blowup { step: k });
        }
        states.push(HousnerState::new(x[0], x[1], true_beta, true_omega));
    }
    Ok(TruthTrajectory {
        ts,
        states,
        true_beta,
        true_omega,
    })
}

/// Additive measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasurementNoise {
    Gaussian {
        variance: f64,
    },
    /// Student-t scaled to the given variance (requires `dof > 2`).
    StudentT {
        variance: f64,
        dof: f64,
    },
}

impl MeasurementNoise {
    pub fn variance(&self) -> f64 {
        match *self {
            MeasurementNoise::Gaussian { variance }
            | MeasurementNoise::StudentT { variance, .. } => variance,
        }
    }

    /// `n` i.i.d. draws, deterministic per seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match *self {
            MeasurementNoise::Gaussian { variance } => {
                if !(variance >= 0.0 && variance.is_finite()) {
                    return Err(SimError::Domain(format!(
                        "noise variance must be nonnegative, got {variance}"
                    )));
                }
                let sd = variance.sqrt();
                Ok((0..n)
                    .map(|_| sd * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect())
            }
            MeasurementNoise::StudentT { variance, dof } => {
                if !(dof > 2.0) || !(variance >= 0.0 && variance.is_finite()) {
                    return Err(SimError::Domain(format!(
                        "Student-t noise needs dof > 2 and variance >= 0, got {dof}, {variance}"
                    )));
                }
                let dist =
                    StudentT::new(dof).map_err(|e| SimError::Domain(format!("Student-t: {e}")))?;
                let scale = (variance * (dof - 2.0) / dof).sqrt();
                Ok((0..n).map(|_| scale * dist.sample(&mut rng)).collect())
            }
        }
    }
}

/// Force record aligned with the excitation: `values[k]` pairs with `u_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSeries {
    pub ts: f64,
    pub values: Vec<f64>,
    pub noise_seed: u64,
    pub r_true: f64,
}

/// `y_k = h(x_k, u_k) + w_k`.
pub fn synthesize_measurements(
    truth: &TruthTrajectory,
    excitation: &ExcitationSignal,
    params: &HousnerParams,
    noise: &MeasurementNoise,
    seed: u64,
) -> Result<MeasurementSeries, SimError> {
    if truth.states.len() != excitation.len() + 1 {
        return Err(SimError::Domain(format!(
            "truth has {} states for {} excitation samples",
            truth.states.len(),
            excitation.len()
        )));
    }
    let w = noise.sample(excitation.len(), seed)?;
    let values = excitation
        .samples
        .iter()
        .zip(&truth.states)
        .zip(w)
        .map(|((&u, state), w)| housner::measurement(&state.to_vector(), u, params) + w)
        .collect();
    Ok(MeasurementSeries {
        ts: excitation.ts,
        values,
        noise_seed: seed,
        r_true: noise.variance(),
    })
}

/// Data-generation settings that may deviate from the filter's nominal model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataGenConfig {
    /// RK4 substeps per sample for the truth.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub hold: InputHold,
    #[serde(default = "default_noise")]
    pub noise: MeasurementNoise,
}

fn default_substeps() -> usize {
    10
}

fn default_noise() -> MeasurementNoise {
    MeasurementNoise::Gaussian { variance: 1.0 }
}

impl Default for DataGenConfig {
    fn default() -> Self {
        Self {
            substeps: default_substeps(),
            hold: InputHold::Zero,
            noise: default_noise(),
        }
    }
}

/// Ways the generated data can depart from the nominal filter model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MismatchKind {
    /// Truth integrated on a fine grid with a linearly interpolated input,
    /// while the filter discretizes with one zero-order-hold RK4 step.
    CoarseTruthIntegration,
    /// Measurement noise variance scaled away from the nominal one.
    WrongR,
    /// Student-t measurement noise.
    HeavyTailedNoise,
}

impl std::str::FromStr for MismatchKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coarse_truth_integration" => Ok(Self::CoarseTruthIntegration),
            "wrong_R" | "wrong_r" => Ok(Self::WrongR),
            "heavy_tailed_noise" => Ok(Self::HeavyTailedNoise),
            other => Err(SimError::Config(format!(
                "unknown mismatch scenario `{other}`"
            ))),
        }
    }
}

/// Derives a mismatched data configuration from `base`.
///
/// `magnitude` is the substep count for `CoarseTruthIntegration`, the
/// variance factor for `WrongR` and the degrees of freedom for
/// `HeavyTailedNoise`.
pub fn mismatch_scenario(
    base: &DataGenConfig,
    kind: MismatchKind,
    magnitude: f64,
) -> Result<DataGenConfig, SimError> {
    if !(magnitude > 0.0 && magnitude.is_finite()) {
        return Err(SimError::Config(format!(
            "mismatch magnitude must be positive, got {magnitude}"
        )));
    }
    let mut cfg = *base;
    let variance = base.noise.variance();
    match kind {
        MismatchKind::CoarseTruthIntegration => {
            let substeps = magnitude.round() as usize;
            if substeps < 2 {
                return Err(SimError::Config(format!(
                    "coarse_truth_integration needs at least 2 substeps, got {magnitude}"
                )));
            }
            cfg.substeps = substeps;
            cfg.hold = InputHold::Linear;
        }
        MismatchKind::WrongR => {
            cfg.noise = MeasurementNoise::Gaussian {
                variance: variance * magnitude,
            };
        }
        MismatchKind::HeavyTailedNoise => {
            if magnitude <= 2.0 {
                return Err(SimError::Config(format!(
                    "heavy_tailed_noise needs dof > 2, got {magnitude}"
                )));
            }
            cfg.noise = MeasurementNoise::StudentT {
                variance,
                dof: magnitude,
            };
        }
    }
    Ok(cfg)
}
