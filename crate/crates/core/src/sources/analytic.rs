use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{LgcpParams, SourceModel};
use crate::error::{Error, Result};

/// The three correlator kinds: total beam with itself, single mode with
/// itself, and total (start) against mode (stop).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelatorKind {
    AutoTotal,
    AutoMode,
    Cross,
}

impl CorrelatorKind {
    fn name(self) -> &'static str {
        match self {
            CorrelatorKind::AutoTotal => "auto-total",
            CorrelatorKind::AutoMode => "auto-mode",
            CorrelatorKind::Cross => "cross",
        }
    }
}

fn damped_cos(p: &LgcpParams, tau: f64) -> f64 {
    (-tau.abs() / p.tau_d_ps).exp() * (TAU * tau / p.t_osc_ps).cos()
}

/// Overlap length of [0, w) and [d, d + w) on a circle of length T.
fn ring_overlap(w: f64, t: f64, d: f64) -> f64 {
    let d = d.rem_euclid(t);
    (w - d).max(0.0) + (d + w - t).max(0.0)
}

/// Exact ensemble g²(τ) of `model`, τ = t_b − t_a in picoseconds.
///
/// Single-beam models answer both auto kinds with the autocorrelation of
/// their one beam and reject `Cross`.
pub fn analytic_g2(model: &SourceModel, kind: CorrelatorKind, tau_ps: f64) -> Result<f64> {
    model.validate()?;
    let single = model.beam_count() == 1;
    if single && kind == CorrelatorKind::Cross {
        return Err(Error::UnsupportedCorrelator(kind.name()));
    }
    Ok(match model {
        SourceModel::Coherent { .. } => 1.0,
        SourceModel::Chaotic { tau_c_ps, .. } => 1.0 + (-2.0 * tau_ps.abs() / tau_c_ps).exp(),
        SourceModel::Modulated {
            base,
            period_ps,
            depth,
        } => {
            let envelope = 1.0 + 0.5 * depth * depth * (TAU * tau_ps / period_ps).cos();
            analytic_g2(base, kind, tau_ps)? * envelope
        }
        SourceModel::LogGaussianCox(p) => (p.sigma2 * damped_cos(p, tau_ps)).exp(),
        SourceModel::PulseTrainMultimode {
            n_modes, t_rep_ps, ..
        } => {
            let width_n = model.pulse_on_width_scaled().expect("pulse model");
            let n = f64::from(*n_modes);
            let t = *t_rep_ps as f64;
            let w = width_n as f64 / n;
            let tiles = width_n == *t_rep_ps;
            match kind {
                CorrelatorKind::AutoMode => t * ring_overlap(w, t, tau_ps) / (w * w),
                // With duty 1/n the summed intensity is constant.
                _ if tiles => 1.0,
                CorrelatorKind::Cross => {
                    let sum: f64 = (0..*n_modes)
                        .map(|k| ring_overlap(w, t, tau_ps + f64::from(k) * t / n))
                        .sum();
                    t * sum / (n * w * w)
                }
                CorrelatorKind::AutoTotal => {
                    let mut sum = 0.0;
                    for j in 0..*n_modes {
                        for k in 0..*n_modes {
                            let shift = (f64::from(k) - f64::from(j)) * t / n;
                            sum += ring_overlap(w, t, tau_ps + shift);
                        }
                    }
                    t * sum / (n * n * w * w)
                }
            }
        }
        SourceModel::CorrelatedPair {
            total,
            mode,
            rho,
            delta_ps,
        } => match kind {
            CorrelatorKind::AutoTotal => (total.sigma2 * damped_cos(total, tau_ps)).exp(),
            CorrelatorKind::AutoMode => (mode.sigma2 * damped_cos(mode, tau_ps)).exp(),
            CorrelatorKind::Cross => {
                let amp = total.sigma() * mode.sigma() * rho;
                (amp * damped_cos(total, tau_ps - *delta_ps as f64)).exp()
            }
        },
        SourceModel::Independent { total, mode } => match kind {
            CorrelatorKind::AutoTotal => analytic_g2(total, kind, tau_ps)?,
            CorrelatorKind::AutoMode => analytic_g2(mode, kind, tau_ps)?,
            CorrelatorKind::Cross => 1.0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const NS: f64 = 1_000.0;

    #[test]
    fn closed_forms() {
        let coherent = SourceModel::Coherent { rate: 1.0 };
        assert_eq!(
            analytic_g2(&coherent, CorrelatorKind::AutoTotal, 123.0).unwrap(),
            1.0
        );
        let chaotic = SourceModel::Chaotic {
            rate: 1.0,
            tau_c_ps: 1_000.0,
        };
        assert_eq!(
            analytic_g2(&chaotic, CorrelatorKind::AutoTotal, 0.0).unwrap(),
            2.0
        );
        assert!(matches!(
            analytic_g2(&chaotic, CorrelatorKind::Cross, 0.0),
            Err(Error::UnsupportedCorrelator("cross"))
        ));

        let lgcp = SourceModel::LogGaussianCox(LgcpParams {
            mean_rate: 1.0,
            sigma2: 6f64.ln(),
            tau_d_ps: 190.0 * NS,
            t_osc_ps: 40.0 * NS,
        });
        let g0 = analytic_g2(&lgcp, CorrelatorKind::AutoMode, 0.0).unwrap();
        assert!((g0 - 6.0).abs() < 1e-12);
        let g20 = analytic_g2(&lgcp, CorrelatorKind::AutoMode, 20.0 * NS).unwrap();
        let expect = (-(6f64.ln()) * (-20.0f64 / 190.0).exp()).exp();
        assert!((g20 - expect).abs() < 1e-12);
        assert!((g20 - 0.20).abs() < 0.005);
    }

    #[test]
    fn pulse_train_forms() {
        let m = SourceModel::PulseTrainMultimode {
            n_modes: 35,
            t_rep_ps: 350_000,
            duty: None,
            total_rate: 1.0,
        };
        assert_eq!(
            analytic_g2(&m, CorrelatorKind::AutoTotal, 777.0).unwrap(),
            1.0
        );
        assert_eq!(analytic_g2(&m, CorrelatorKind::Cross, 777.0).unwrap(), 1.0);
        let g0 = analytic_g2(&m, CorrelatorKind::AutoMode, 0.0).unwrap();
        assert!((g0 - 35.0).abs() < 1e-9);
        // Zero beyond one pulse width, back to the peak one period later.
        assert_eq!(
            analytic_g2(&m, CorrelatorKind::AutoMode, 20_000.0).unwrap(),
            0.0
        );
        let g_rep = analytic_g2(&m, CorrelatorKind::AutoMode, 350_000.0).unwrap();
        assert!((g_rep - 35.0).abs() < 1e-9);
        let half = analytic_g2(&m, CorrelatorKind::AutoMode, 5_000.0).unwrap();
        assert!((half - 17.5).abs() < 1e-9);
    }

    #[test]
    fn pulse_train_general_duty_means_are_consistent() {
        // Averaged over one period every g² integrates to 1.
        let m = SourceModel::PulseTrainMultimode {
            n_modes: 3,
            t_rep_ps: 300,
            duty: Some(0.5),
            total_rate: 1.0,
        };
        for kind in [
            CorrelatorKind::AutoTotal,
            CorrelatorKind::AutoMode,
            CorrelatorKind::Cross,
        ] {
            let mean: f64 = (0..3000)
                .map(|i| analytic_g2(&m, kind, i as f64 * 0.1).unwrap())
                .sum::<f64>()
                / 3000.0;
            assert!((mean - 1.0).abs() < 1e-3, "{kind:?}: {mean}");
        }
    }

    #[test]
    fn pair_cross_is_lagged() {
        let p = LgcpParams {
            mean_rate: 1.0,
            sigma2: 1.0,
            tau_d_ps: 190.0 * NS,
            t_osc_ps: 40.0 * NS,
        };
        let m = SourceModel::CorrelatedPair {
            total: p,
            mode: p,
            rho: -0.9,
            delta_ps: 40_000,
        };
        let at_delta = analytic_g2(&m, CorrelatorKind::Cross, 40.0 * NS).unwrap();
        assert!((at_delta - (-0.9f64).exp()).abs() < 1e-12);
        let ind = SourceModel::Independent {
            total: Box::new(SourceModel::Coherent { rate: 1.0 }),
            mode: Box::new(SourceModel::LogGaussianCox(p)),
        };
        assert_eq!(analytic_g2(&ind, CorrelatorKind::Cross, 0.0).unwrap(), 1.0);
        assert!(
            (analytic_g2(&ind, CorrelatorKind::AutoMode, 0.0).unwrap() - 1f64.exp()).abs() < 1e-12
        );
    }
}
