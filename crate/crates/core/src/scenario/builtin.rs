//! The shipped scenarios. Rates are chosen so that each correlogram holds
//! enough coincidences per 1 ns bin for its checks; see the README for the
//! reasoning behind each duration.

use super::config::{
    AnalysisOp, AnalysisRequest, BenchConfig, Check, CorrelogramRequest, Detector, ScenarioConfig,
};
use crate::analysis::ExtremumKind;
use crate::correlator::CorrelogramSpec;
use crate::error::{Error, Result};
use crate::sources::{LgcpParams, SourceModel};

const NS: u64 = 1_000;
const S: u64 = 1_000_000_000_000;

/// σ² values of the single-mode scenario family: ln 6, ln 8 and ln 10.
pub fn fig3_sigma2_grid() -> [f64; 3] {
    [6f64.ln(), 8f64.ln(), 10f64.ln()]
}

pub fn builtin_names() -> [&'static str; 7] {
    [
        "fig2-coherent",
        "fig3-singlemode",
        "fig4-anticorrelated",
        "fig4-semiclassical",
        "fig5-independent",
        "pulsetrain-35",
        "modulated-lamp",
    ]
}

pub fn builtin_scenarios() -> Vec<ScenarioConfig> {
    vec![
        fig2_coherent(),
        fig3_singlemode(fig3_sigma2_grid()[0]),
        fig4(-0.9),
        fig4(0.9),
        fig5_independent(),
        pulsetrain_35(),
        modulated_lamp(),
    ]
}

pub fn builtin_scenario(name: &str) -> Result<ScenarioConfig> {
    builtin_scenarios()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::UnknownScenario(name.to_string()))
}

fn spec() -> CorrelogramSpec {
    CorrelogramSpec {
        bin_width_ps: NS,
        tau_min_ps: -500_000,
        tau_max_ps: 500_000,
    }
}

fn corr(name: &str, a: Detector, b: Detector) -> CorrelogramRequest {
    CorrelogramRequest {
        name: name.into(),
        a,
        b,
        spec: spec(),
    }
}

fn analysis(name: &str, op: AnalysisOp) -> AnalysisRequest {
    AnalysisRequest {
        name: name.into(),
        op,
    }
}

fn range(metric: &str, min: Option<f64>, max: Option<f64>) -> Check {
    Check {
        metric: metric.into(),
        min,
        max,
        equals: None,
    }
}

fn is_true(metric: &str) -> Check {
    Check {
        metric: metric.into(),
        min: None,
        max: None,
        equals: Some(true),
    }
}

fn lgcp(mean_rate: f64, sigma2: f64) -> LgcpParams {
    LgcpParams {
        mean_rate,
        sigma2,
        tau_d_ps: 190_000.0,
        t_osc_ps: 40_000.0,
    }
}

fn witness() -> AnalysisRequest {
    analysis(
        "witness",
        AnalysisOp::Witness {
            auto_i: "d1_d2".into(),
            auto_v: "d3_d4".into(),
            cross: "d1_d3".into(),
        },
    )
}

fn four_way() -> Vec<CorrelogramRequest> {
    vec![
        corr("d1_d2", Detector::D1, Detector::D2),
        corr("d3_d4", Detector::D3, Detector::D4),
        corr("d1_d3", Detector::D1, Detector::D3),
    ]
}

/// Single-beam sources reach each detector with 0.5 · 0.5 · 0.65 of their
/// photons, two-beam sources with 0.5 · 0.65.
const SINGLE_BEAM_TO_DETECTOR: f64 = 0.1625;
const TWO_BEAM_TO_DETECTOR: f64 = 0.325;

/// Coherent light on D1×D2: about 1.5·10⁴ counts/s per detector for 600 s.
pub fn fig2_coherent() -> ScenarioConfig {
    ScenarioConfig {
        name: "fig2-coherent".into(),
        description: "Constant-intensity laser split onto D1 and D2; g2 must be flat.".into(),
        source: SourceModel::Coherent {
            rate: 1.5e4 / SINGLE_BEAM_TO_DETECTOR,
        },
        bench: BenchConfig::default(),
        duration_ps: 600 * S,
        dt_ps: 1_000 * 1_000 * NS,
        seed: 2002,
        correlograms: vec![corr("d1_d2", Detector::D1, Detector::D2)],
        analyses: vec![analysis(
            "flat",
            AnalysisOp::Flatness {
                correlogram: "d1_d2".into(),
            },
        )],
        checks: vec![
            range("/analyses/flat/max_abs_z", None, Some(4.0)),
            range("/analyses/flat/chi2_per_dof", Some(0.8), Some(1.2)),
        ],
    }
}

/// One log-Gaussian mode on D3×D4 with peak log-amplitude `sigma2`.
pub fn fig3_singlemode(sigma2: f64) -> ScenarioConfig {
    ScenarioConfig {
        name: "fig3-singlemode".into(),
        description: "A single longitudinal mode: bunched g2 with a damped 40 ns oscillation."
            .into(),
        source: SourceModel::LogGaussianCox(lgcp(4e5 / SINGLE_BEAM_TO_DETECTOR, sigma2)),
        bench: BenchConfig::default(),
        duration_ps: 2 * S,
        dt_ps: 4 * NS,
        seed: 3003,
        correlograms: vec![corr("d3_d4", Detector::D3, Detector::D4)],
        analyses: vec![
            analysis(
                "peak",
                AnalysisOp::PeakStats {
                    correlogram: "d3_d4".into(),
                },
            ),
            analysis(
                "fit",
                AnalysisOp::Fit {
                    correlogram: "d3_d4".into(),
                },
            ),
        ],
        checks: vec![
            range("/analyses/peak/g2_zero", Some(4.5), Some(11.0)),
            range("/analyses/peak/min_value", None, Some(0.25)),
            is_true("/analyses/fit/converged"),
            range("/analyses/fit/t_osc_ps", Some(38_000.0), Some(42_000.0)),
            range("/analyses/fit/tau_d_ps", Some(165_000.0), Some(215_000.0)),
        ],
    }
}

/// Total beam on arm 1, one mode on arm 2 (delayed 40 ns), coupled with
/// correlation `rho`. The total beam carries σ² = 0.5 of structure.
pub fn fig4(rho: f64) -> ScenarioConfig {
    let anti = rho < 0.0;
    let kind = if anti {
        ExtremumKind::Min
    } else {
        ExtremumKind::Max
    };
    let mut checks = vec![
        range("/analyses/extremum/lag_ps", Some(38_000.0), Some(42_000.0)),
        if anti {
            range("/analyses/extremum/value", None, Some(1.0))
        } else {
            range("/analyses/extremum/value", Some(1.0), None)
        },
        range("/analyses/witness/max_excess_sigma", None, Some(3.0)),
    ];
    if anti {
        checks.push(range("/analyses/antiphase/score", None, Some(-0.5)));
    }
    let rate = 4e5 / TWO_BEAM_TO_DETECTOR;
    ScenarioConfig {
        name: if anti {
            "fig4-anticorrelated"
        } else {
            "fig4-semiclassical"
        }
        .into(),
        description: if anti {
            "Mode intensity anticorrelated with the total beam; cross g2 dips at the 40 ns delay."
        } else {
            "Same bench with the coupling sign flipped; cross g2 peaks at the 40 ns delay."
        }
        .into(),
        source: SourceModel::CorrelatedPair {
            total: lgcp(rate, 0.5),
            mode: lgcp(rate, fig3_sigma2_grid()[0]),
            rho,
            delta_ps: 0,
        },
        bench: BenchConfig::default(),
        duration_ps: S,
        dt_ps: 4 * NS,
        seed: if anti { 4001 } else { 4002 },
        correlograms: four_way(),
        analyses: vec![
            analysis(
                "extremum",
                AnalysisOp::Extremum {
                    correlogram: "d1_d3".into(),
                    kind,
                    lo_ps: 20_000.0,
                    hi_ps: 60_000.0,
                    half_width_ps: 6_000.0,
                },
            ),
            analysis(
                "antiphase",
                AnalysisOp::Antiphase {
                    x: "d1_d3".into(),
                    y: "d1_d2".into(),
                },
            ),
            witness(),
        ],
        checks,
    }
}

/// Thermal lamp on arm 1 and an unrelated laser mode on arm 2.
pub fn fig5_independent() -> ScenarioConfig {
    let rate = 3e5 / TWO_BEAM_TO_DETECTOR;
    ScenarioConfig {
        name: "fig5-independent".into(),
        description: "Independent lamp and laser mode; the cross g2 must be flat.".into(),
        source: SourceModel::Independent {
            total: Box::new(SourceModel::Chaotic {
                rate,
                tau_c_ps: 40_000.0,
            }),
            mode: Box::new(SourceModel::LogGaussianCox(lgcp(
                rate,
                fig3_sigma2_grid()[0],
            ))),
        },
        bench: BenchConfig::default(),
        duration_ps: S,
        dt_ps: 4 * NS,
        seed: 5005,
        correlograms: four_way(),
        analyses: vec![
            analysis(
                "null",
                AnalysisOp::Flatness {
                    correlogram: "d1_d3".into(),
                },
            ),
            witness(),
        ],
        checks: vec![
            range("/analyses/null/max_abs_z", None, Some(4.0)),
            range("/analyses/witness/max_excess_sigma", None, Some(3.0)),
        ],
    }
}

/// 35 interleaved rectangular mode pulses: constant total, strongly bunched
/// single mode.
pub fn pulsetrain_35() -> ScenarioConfig {
    ScenarioConfig {
        name: "pulsetrain-35".into(),
        description: "35 modes taking turns; the total intensity is constant.".into(),
        source: SourceModel::PulseTrainMultimode {
            n_modes: 35,
            t_rep_ps: 350 * NS,
            duty: None,
            total_rate: 4e7,
        },
        bench: BenchConfig::default(),
        duration_ps: S / 5,
        dt_ps: NS,
        seed: 3535,
        correlograms: four_way(),
        analyses: vec![
            analysis(
                "total_flat",
                AnalysisOp::Flatness {
                    correlogram: "d1_d2".into(),
                },
            ),
            analysis(
                "mode_peak",
                AnalysisOp::PeakStats {
                    correlogram: "d3_d4".into(),
                },
            ),
            witness(),
        ],
        checks: vec![
            range("/trace/0/g2_zero", Some(1.0 - 1e-9), Some(1.0 + 1e-9)),
            range("/trace/1/g2_zero", Some(35.0 * 0.95), Some(35.0 * 1.05)),
            range("/analyses/total_flat/max_abs_z", None, Some(4.0)),
            range("/analyses/witness/max_excess_sigma", None, Some(3.0)),
        ],
    }
}

/// Thermal light with a slow 80 % intensity modulation: beyond the
/// coherence time the photons only follow the envelope.
pub fn modulated_lamp() -> ScenarioConfig {
    ScenarioConfig {
        name: "modulated-lamp".into(),
        description: "Chaotic lamp under a 200 ns envelope; g2 tracks the envelope only.".into(),
        source: SourceModel::Modulated {
            base: Box::new(SourceModel::Chaotic {
                rate: 1.5e6 / SINGLE_BEAM_TO_DETECTOR,
                tau_c_ps: 1_000.0,
            }),
            period_ps: 200_000.0,
            depth: 0.8,
        },
        bench: BenchConfig::default(),
        duration_ps: S / 50,
        dt_ps: 100,
        seed: 7007,
        correlograms: vec![corr("d1_d2", Detector::D1, Detector::D2)],
        analyses: vec![analysis(
            "envelope",
            AnalysisOp::AnalyticMatch {
                correlogram: "d1_d2".into(),
                kind: crate::sources::CorrelatorKind::AutoTotal,
                min_abs_tau_ps: 5_000.0,
            },
        )],
        checks: vec![range(
            "/analyses/envelope/chi2_per_dof",
            Some(0.85),
            Some(1.15),
        )],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seven_valid_builtins() {
        let all = builtin_scenarios();
        assert_eq!(all.len(), 7);
        for (cfg, name) in all.iter().zip(builtin_names()) {
            assert_eq!(cfg.name, name);
            let warnings = cfg.validate().unwrap();
            assert!(warnings.is_empty(), "{name}: {warnings:?}");
            let back = ScenarioConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(&back, cfg);
        }
        assert!(matches!(
            builtin_scenario("nope"),
            Err(Error::UnknownScenario(_))
        ));
    }

    #[test]
    fn sigma2_grid_is_ln_6_8_10() {
        for (s, n) in fig3_sigma2_grid().iter().zip([6.0f64, 8.0, 10.0]) {
            assert_eq!(*s, n.ln());
        }
    }
}
