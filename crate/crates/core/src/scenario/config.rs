use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::ExtremumKind;
use crate::correlator::CorrelogramSpec;
use crate::error::{Error, Result};
use crate::optics::DetectorModel;
use crate::sources::{CorrelatorKind, SourceModel};

/// The four detectors of the bench. D1/D2 sit behind arm 1, D3/D4 behind
/// the delayed arm 2. Each writes to channel `index()`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Detector {
    D1,
    D2,
    D3,
    D4,
}

impl Detector {
    pub const ALL: [Detector; 4] = [Detector::D1, Detector::D2, Detector::D3, Detector::D4];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn channel(self) -> u8 {
        self as u8
    }

    pub fn arm(self) -> usize {
        self.index() / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchPreset {
    /// Realistic avalanche photodiodes.
    #[default]
    FourDetector,
    /// Lossless, noiseless, instantaneous detectors.
    Ideal,
}

pub const DEFAULT_DETECTOR: DetectorModel = DetectorModel {
    efficiency: 0.65,
    dead_time_ps: 22_000,
    dark_rate: 100.0,
    jitter_sigma_ps: 150.0,
};

/// Bench preset with optional overrides.
///
/// Single-beam sources are divided between the arms by `source_split`;
/// two-beam sources send the total beam to arm 1 and the mode beam to arm 2.
/// Arm 2 is delayed by `delay_ps`, and tags delayed past the end of the
/// acquisition are lost.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default)]
    pub preset: BenchPreset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_split: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm1_split: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm2_split: Option<f64>,
    /// Transmission of the attenuator in arm 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attenuation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ps: Option<u64>,
    /// Applied to all four detectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorModel>,
    /// Per-detector models, D1 to D4. Takes precedence over `detector`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detectors: Option<[DetectorModel; 4]>,
}

/// Fully resolved bench parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bench {
    pub source_split: f64,
    pub arm1_split: f64,
    pub arm2_split: f64,
    pub attenuation: f64,
    pub delay_ps: u64,
    pub detectors: [DetectorModel; 4],
}

impl BenchConfig {
    pub fn resolve(&self) -> Bench {
        let base = match self.preset {
            BenchPreset::FourDetector => DEFAULT_DETECTOR,
            BenchPreset::Ideal => DetectorModel::IDEAL,
        };
        let detectors = self.detectors.unwrap_or([self.detector.unwrap_or(base); 4]);
        Bench {
            source_split: self.source_split.unwrap_or(0.5),
            arm1_split: self.arm1_split.unwrap_or(0.5),
            arm2_split: self.arm2_split.unwrap_or(0.5),
            attenuation: self.attenuation.unwrap_or(1.0),
            delay_ps: self.delay_ps.unwrap_or(40_000),
            detectors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelogramRequest {
    pub name: String,
    pub a: Detector,
    pub b: Detector,
    #[serde(default = "default_spec")]
    pub spec: CorrelogramSpec,
}

fn default_spec() -> CorrelogramSpec {
    CorrelogramSpec {
        bin_width_ps: 1_000,
        tau_min_ps: -500_000,
        tau_max_ps: 500_000,
    }
}

fn default_half_width() -> f64 {
    6_000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AnalysisOp {
    PeakStats {
        correlogram: String,
    },
    Fit {
        correlogram: String,
    },
    Flatness {
        correlogram: String,
    },
    Extremum {
        correlogram: String,
        kind: ExtremumKind,
        lo_ps: f64,
        hi_ps: f64,
        #[serde(default = "default_half_width")]
        half_width_ps: f64,
    },
    Antiphase {
        x: String,
        y: String,
    },
    /// Cauchy–Schwarz ratio of `cross` against the zero-lag bins of the two
    /// autocorrelations.
    Witness {
        auto_i: String,
        auto_v: String,
        cross: String,
    },
    /// Pointwise comparison with the closed-form g² of the source.
    AnalyticMatch {
        correlogram: String,
        kind: CorrelatorKind,
        /// Bins with |τ| below this are skipped.
        #[serde(default)]
        min_abs_tau_ps: f64,
    },
}

impl AnalysisOp {
    pub fn name(&self) -> &'static str {
        match self {
            AnalysisOp::PeakStats { .. } => "peak_stats",
            AnalysisOp::Fit { .. } => "fit",
            AnalysisOp::Flatness { .. } => "flatness",
            AnalysisOp::Extremum { .. } => "extremum",
            AnalysisOp::Antiphase { .. } => "antiphase",
            AnalysisOp::Witness { .. } => "witness",
            AnalysisOp::AnalyticMatch { .. } => "analytic_match",
        }
    }

    pub fn correlograms(&self) -> Vec<&str> {
        match self {
            AnalysisOp::PeakStats { correlogram }
            | AnalysisOp::Fit { correlogram }
            | AnalysisOp::Flatness { correlogram }
            | AnalysisOp::Extremum { correlogram, .. }
            | AnalysisOp::AnalyticMatch { correlogram, .. } => vec![correlogram],
            AnalysisOp::Antiphase { x, y } => vec![x, y],
            AnalysisOp::Witness {
                auto_i,
                auto_v,
                cross,
            } => vec![auto_i, auto_v, cross],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRequest {
    pub name: String,
    #[serde(flatten)]
    pub op: AnalysisOp,
}

/// A numeric expectation on the report, addressed by JSON pointer, for
/// example `/analyses/fit/t_osc_ps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    /// Expected boolean value instead of a range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equals: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub source: SourceModel,
    #[serde(default)]
    pub bench: BenchConfig,
    pub duration_ps: u64,
    /// Intensity sampling step.
    pub dt_ps: u64,
    pub seed: u64,
    pub correlograms: Vec<CorrelogramRequest>,
    #[serde(default)]
    pub analyses: Vec<AnalysisRequest>,
    #[serde(default)]
    pub checks: Vec<Check>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Rejects configurations that cannot run. Returns warnings for ones
    /// that can but are statistically questionable.
    pub fn validate(&self) -> Result<Vec<String>> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return bad(format!(
                "scenario name `{}` must be a non-empty identifier",
                self.name
            ));
        }
        self.source.validate()?;
        self.source.check_dt(self.dt_ps)?;
        if self.duration_ps < self.dt_ps || !self.duration_ps.is_multiple_of(self.dt_ps) {
            return bad("duration_ps must be a positive multiple of dt_ps".into());
        }
        let bench = self.bench.resolve();
        for (name, p) in [
            ("source_split", bench.source_split),
            ("arm1_split", bench.arm1_split),
            ("arm2_split", bench.arm2_split),
            ("attenuation", bench.attenuation),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("bench.{name} must lie in [0, 1]"));
            }
        }
        for d in &bench.detectors {
            d.validate()?;
        }

        let mut names = BTreeSet::new();
        for c in &self.correlograms {
            c.spec.validate()?;
            if !names.insert(c.name.as_str()) {
                return bad(format!("duplicate name `{}`", c.name));
            }
        }
        for a in &self.analyses {
            if !names.insert(a.name.as_str()) {
                return bad(format!("duplicate name `{}`", a.name));
            }
            for c in a.op.correlograms() {
                if !self.correlograms.iter().any(|r| r.name == c) {
                    return bad(format!(
                        "analysis `{}` refers to unknown correlogram `{c}`",
                        a.name
                    ));
                }
            }
        }
        for c in &self.checks {
            if !c.metric.starts_with('/') {
                return bad(format!(
                    "check metric `{}` must be a JSON pointer",
                    c.metric
                ));
            }
        }

        let mut warnings = Vec::new();
        if let Some(t) = self.source.longest_time_ps() {
            if (self.duration_ps as f64) < 100.0 * t {
                warnings.push(format!(
                    "duration {} ps is shorter than 100 x the longest model time constant ({t} ps)",
                    self.duration_ps
                ));
            }
        }
        Ok(warnings)
    }

    pub fn bench(&self) -> Bench {
        self.bench.resolve()
    }

    /// Detectors referenced by any correlogram.
    pub fn used_detectors(&self) -> BTreeSet<Detector> {
        self.correlograms.iter().flat_map(|c| [c.a, c.b]).collect()
    }
}
