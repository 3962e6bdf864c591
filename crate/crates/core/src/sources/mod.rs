//! Classical intensity models, their closed-form g² and photon generation.
//!
//! Every model is a stationary random intensity λ(t) in counts per second.
//! Photons are produced as a doubly stochastic Poisson process driven by a
//! piecewise-constant sampling of λ on a grid of `dt` picoseconds.

mod analytic;
mod photonize;
mod process;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use analytic::{analytic_g2, CorrelatorKind};
pub use photonize::{photonize, Photonizer, MAX_MEAN_COUNTS_PER_BIN};
pub use process::{OrnsteinUhlenbeck, TraceGenerator};

/// Parameters of a log-Gaussian Cox intensity
/// λ(t) = mean_rate · exp(σ·d(t) − σ²/2), where d(t) is a unit-variance
/// Gaussian process with covariance e^{−|τ|/τ_d}·cos(2πτ/T_osc).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LgcpParams {
    pub mean_rate: f64,
    pub sigma2: f64,
    pub tau_d_ps: f64,
    pub t_osc_ps: f64,
}

impl LgcpParams {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    fn validate(&self) -> Result<()> {
        check_rate("mean_rate", self.mean_rate)?;
        if !(self.sigma2.is_finite() && self.sigma2 >= 0.0) {
            return Err(Error::param("sigma2", "must be finite and >= 0"));
        }
        check_time("tau_d_ps", self.tau_d_ps)?;
        check_time("t_osc_ps", self.t_osc_ps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SourceModel {
    /// Constant intensity.
    Coherent {
        rate: f64,
    },
    /// Thermal light: |E|² of a complex Ornstein–Uhlenbeck field.
    Chaotic {
        rate: f64,
        tau_c_ps: f64,
    },
    /// A coherent or chaotic base multiplied by 1 + depth·cos(2πt/period + φ).
    Modulated {
        base: Box<SourceModel>,
        period_ps: f64,
        depth: f64,
    },
    /// `n_modes` rectangular pulse trains offset by `t_rep / n_modes`.
    /// Beam 0 is the summed intensity, beam 1 is mode 0.
    PulseTrainMultimode {
        n_modes: u32,
        t_rep_ps: u64,
        /// Defaults to `1 / n_modes`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        duty: Option<f64>,
        total_rate: f64,
    },
    LogGaussianCox(LgcpParams),
    /// Joint total/mode process: d_total(t) = g(t),
    /// d_mode(t) = ρ·g(t − Δ) + √(1 − ρ²)·h(t).
    CorrelatedPair {
        total: LgcpParams,
        mode: LgcpParams,
        rho: f64,
        delta_ps: i64,
    },
    /// Two statistically independent beams, one per bench arm.
    Independent {
        total: Box<SourceModel>,
        mode: Box<SourceModel>,
    },
}

/// Which physical intensity a trace represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceLabel {
    Total,
    Mode,
    Lamp,
}

/// Piecewise-constant sampled intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityTrace {
    pub dt_ps: u64,
    /// Counts per second, one value per `dt_ps` interval.
    pub samples: Vec<f64>,
    pub label: TraceLabel,
}

impl IntensityTrace {
    pub fn new(dt_ps: u64, samples: Vec<f64>, label: TraceLabel) -> Result<Self> {
        let trace = IntensityTrace {
            dt_ps,
            samples,
            label,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt_ps == 0 {
            return Err(Error::param("dt_ps", "must be positive"));
        }
        if let Some(i) = self
            .samples
            .iter()
            .position(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::param(
                "samples",
                format!("sample {i} is negative or not finite"),
            ));
        }
        Ok(())
    }

    pub fn duration_ps(&self) -> u64 {
        self.dt_ps * self.samples.len() as u64
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Debug export, header `t_ps,rate_cps`.
    pub fn write_csv<W: std::io::Write>(&self, sink: W) -> Result<()> {
        use std::io::Write;
        let mut sink = std::io::BufWriter::new(sink);
        writeln!(sink, "t_ps,rate_cps")?;
        for (k, v) in self.samples.iter().enumerate() {
            writeln!(sink, "{},{}", k as u64 * self.dt_ps, v)?;
        }
        sink.flush()?;
        Ok(())
    }
}

fn check_rate(name: &'static str, rate: f64) -> Result<()> {
    if rate.is_finite() && rate >= 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, "must be finite and >= 0"))
    }
}

fn check_time(name: &'static str, t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, "must be finite and > 0"))
    }
}

impl SourceModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            SourceModel::Coherent { rate } => check_rate("rate", *rate),
            SourceModel::Chaotic { rate, tau_c_ps } => {
                check_rate("rate", *rate)?;
                check_time("tau_c_ps", *tau_c_ps)
            }
            SourceModel::Modulated {
                base,
                period_ps,
                depth,
            } => {
                if !matches!(
                    **base,
                    SourceModel::Coherent { .. } | SourceModel::Chaotic { .. }
                ) {
                    return Err(Error::param("base", "must be coherent or chaotic"));
                }
                base.validate()?;
                check_time("period_ps", *period_ps)?;
                if !(0.0..=1.0).contains(depth) {
                    return Err(Error::param("depth", "must lie in [0, 1]"));
                }
                Ok(())
            }
            SourceModel::PulseTrainMultimode {
                n_modes,
                t_rep_ps,
                duty,
                total_rate,
            } => {
                if *n_modes == 0 {
                    return Err(Error::param("n_modes", "must be positive"));
                }
                if *t_rep_ps == 0 {
                    return Err(Error::param("t_rep_ps", "must be positive"));
                }
                if let Some(d) = duty {
                    if !(d.is_finite() && *d > 0.0 && *d <= 1.0) {
                        return Err(Error::param("duty", "must lie in (0, 1]"));
                    }
                }
                check_rate("total_rate", *total_rate)?;
                if self.pulse_on_width_scaled() == Some(0) {
                    return Err(Error::param("duty", "pulse width rounds to zero"));
                }
                Ok(())
            }
            SourceModel::LogGaussianCox(p) => p.validate(),
            SourceModel::CorrelatedPair {
                total, mode, rho, ..
            } => {
                total.validate()?;
                mode.validate()?;
                if !(rho.is_finite() && rho.abs() <= 1.0) {
                    return Err(Error::param("rho", "must lie in [-1, 1]"));
                }
                if total.tau_d_ps != mode.tau_d_ps || total.t_osc_ps != mode.t_osc_ps {
                    return Err(Error::param(
                        "mode",
                        "total and mode must share tau_d_ps and t_osc_ps",
                    ));
                }
                Ok(())
            }
            SourceModel::Independent { total, mode } => {
                for m in [total, mode] {
                    if m.beam_count() != 1 {
                        return Err(Error::param(
                            "independent",
                            "components must be single-beam models",
                        ));
                    }
                    m.validate()?;
                }
                Ok(())
            }
        }
    }

    /// 1 for single-beam models, 2 for models that emit (total, mode).
    pub fn beam_count(&self) -> usize {
        match self {
            SourceModel::PulseTrainMultimode { .. }
            | SourceModel::CorrelatedPair { .. }
            | SourceModel::Independent { .. } => 2,
            _ => 1,
        }
    }

    pub fn labels(&self) -> Vec<TraceLabel> {
        match self {
            SourceModel::Coherent { .. } => vec![TraceLabel::Total],
            SourceModel::Chaotic { .. } | SourceModel::Modulated { .. } => vec![TraceLabel::Lamp],
            SourceModel::LogGaussianCox(_) => vec![TraceLabel::Mode],
            _ => vec![TraceLabel::Total, TraceLabel::Mode],
        }
    }

    /// Shortest time constant the sampling grid must resolve.
    pub fn fastest_time_ps(&self) -> Option<f64> {
        match self {
            SourceModel::Coherent { .. } => None,
            SourceModel::Chaotic { tau_c_ps, .. } => Some(*tau_c_ps),
            SourceModel::Modulated {
                base, period_ps, ..
            } => Some(
                base.fastest_time_ps()
                    .map_or(*period_ps, |b| b.min(*period_ps)),
            ),
            SourceModel::PulseTrainMultimode { t_rep_ps, .. } => {
                let w = self.pulse_on_width_scaled()? as f64 / self.pulse_modes()? as f64;
                Some(w.min(*t_rep_ps as f64))
            }
            SourceModel::LogGaussianCox(p) => Some(p.tau_d_ps.min(p.t_osc_ps)),
            SourceModel::CorrelatedPair { total, mode, .. } => Some(
                total
                    .tau_d_ps
                    .min(total.t_osc_ps)
                    .min(mode.tau_d_ps)
                    .min(mode.t_osc_ps),
            ),
            SourceModel::Independent { total, mode } => {
                match (total.fastest_time_ps(), mode.fastest_time_ps()) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                }
            }
        }
    }

    /// Longest correlation time constant of the model.
    pub fn longest_time_ps(&self) -> Option<f64> {
        match self {
            SourceModel::Coherent { .. } => None,
            SourceModel::Chaotic { tau_c_ps, .. } => Some(*tau_c_ps),
            SourceModel::Modulated {
                base, period_ps, ..
            } => Some(
                base.longest_time_ps()
                    .map_or(*period_ps, |b| b.max(*period_ps)),
            ),
            SourceModel::PulseTrainMultimode { t_rep_ps, .. } => Some(*t_rep_ps as f64),
            SourceModel::LogGaussianCox(p) => Some(p.tau_d_ps.max(p.t_osc_ps)),
            SourceModel::CorrelatedPair {
                total, delta_ps, ..
            } => Some(
                total
                    .tau_d_ps
                    .max(total.t_osc_ps)
                    .max(delta_ps.unsigned_abs() as f64),
            ),
            SourceModel::Independent { total, mode } => {
                match (total.longest_time_ps(), mode.longest_time_ps()) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    (a, b) => a.or(b),
                }
            }
        }
    }

    /// Largest grid step allowed for this model: a tenth of its fastest time
    /// constant.
    pub fn max_dt_ps(&self) -> Option<u64> {
        self.fastest_time_ps().map(|t| (t / 10.0).floor() as u64)
    }

    pub fn check_dt(&self, dt_ps: u64) -> Result<()> {
        if dt_ps == 0 {
            return Err(Error::param("dt_ps", "must be positive"));
        }
        if let Some(max) = self.max_dt_ps() {
            if dt_ps > max {
                return Err(Error::DtTooCoarse { dt: dt_ps, max });
            }
        }
        if let SourceModel::CorrelatedPair { delta_ps, .. } = self {
            if delta_ps.unsigned_abs() % dt_ps != 0 {
                return Err(Error::param("delta_ps", "must be a multiple of dt"));
            }
        }
        if let SourceModel::Independent { total, mode } = self {
            total.check_dt(dt_ps)?;
            mode.check_dt(dt_ps)?;
        }
        Ok(())
    }

    fn pulse_modes(&self) -> Option<u64> {
        match self {
            SourceModel::PulseTrainMultimode { n_modes, .. } => Some(u64::from(*n_modes)),
            _ => None,
        }
    }

    /// Pulse on-width in units of ps / n_modes, so that the default duty of
    /// 1/n is exactly `t_rep`.
    pub(crate) fn pulse_on_width_scaled(&self) -> Option<u64> {
        match self {
            SourceModel::PulseTrainMultimode {
                n_modes,
                t_rep_ps,
                duty,
                ..
            } => Some(match duty {
                None => *t_rep_ps,
                Some(d) => (d * f64::from(*n_modes) * *t_rep_ps as f64).round() as u64,
            }),
            _ => None,
        }
    }
}

/// Samples the model on `[0, duration)` with step `dt`. Returns one trace
/// for single-beam models and `(total, mode)` for two-beam models.
pub fn sample_intensity(
    model: &SourceModel,
    duration_ps: u64,
    dt_ps: u64,
    seed: u64,
) -> Result<Vec<IntensityTrace>> {
    let mut generator = TraceGenerator::new(model, dt_ps, seed)?;
    if duration_ps < dt_ps {
        return Err(Error::param("duration_ps", "must be >= dt"));
    }
    if !duration_ps.is_multiple_of(dt_ps) {
        return Err(Error::param("duration_ps", "must be a multiple of dt"));
    }
    let n = (duration_ps / dt_ps) as usize;
    let mut beams = vec![Vec::new(); generator.beam_count()];
    generator.fill(&mut beams, n);
    Ok(beams
        .into_iter()
        .zip(model.labels())
        .map(|(samples, label)| IntensityTrace {
            dt_ps,
            samples,
            label,
        })
        .collect())
}

/// Every per-mode trace of a pulse-train model, for conservation checks.
pub fn sample_pulse_train_modes(
    model: &SourceModel,
    duration_ps: u64,
    dt_ps: u64,
    seed: u64,
) -> Result<Vec<IntensityTrace>> {
    let train = process::PulseTrain::new(model, dt_ps, seed)?;
    if !duration_ps.is_multiple_of(dt_ps) || duration_ps < dt_ps {
        return Err(Error::param(
            "duration_ps",
            "must be a positive multiple of dt",
        ));
    }
    let n = (duration_ps / dt_ps) as usize;
    Ok((0..train.n_modes())
        .map(|j| IntensityTrace {
            dt_ps,
            samples: (0..n as u64).map(|k| train.mode_rate(j, k)).collect(),
            label: TraceLabel::Mode,
        })
        .collect())
}

/// Brute-force ⟨a(t)·b(t + lag)⟩ / (⟨a⟩⟨b⟩) over overlapping samples, with
/// the means taken over the full traces.
pub fn trace_g2(a: &[f64], b: &[f64], lag: i64) -> f64 {
    let n = a.len().min(b.len());
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let shift = lag.unsigned_abs() as usize;
    if shift >= n || ma == 0.0 || mb == 0.0 {
        return f64::NAN;
    }
    let products: f64 = if lag >= 0 {
        (0..n - shift).map(|k| a[k] * b[k + shift]).sum()
    } else {
        (shift..n).map(|k| a[k] * b[k - shift]).sum()
    };
    products / (n - shift) as f64 / (ma * mb)
}
