use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use super::config::{AnalysisOp, Bench, Detector, ScenarioConfig};
use super::report::{
    Artifacts, CheckOutcome, CorrelogramSummary, FailureReport, ScenarioReport, TagCounts, Timing,
    TraceSummary,
};
use crate::analysis::{
    antiphase_score, cs_witness_with_errors, fit_damped_oscillation, flatness, locate_extremum,
    peak_stats,
};
use crate::correlator::{correlate, Channel, Correlogram};
use crate::error::{Error, Result};
use crate::optics::{attenuate_owned, delay, detect, split_owned};
use crate::rng::derive_seed;
use crate::sources::{analytic_g2, CorrelatorKind, Photonizer, SourceModel, TraceGenerator};
use crate::tags::{merge, write_stream_file, TagStream, TimeTag};

/// Samples generated per streaming step.
const CHUNK: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Validate,
    Source,
    Bench,
    Correlate,
    Analysis,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Validate => "validate",
            Stage::Source => "source",
            Stage::Bench => "bench",
            Stage::Correlate => "correlate",
            Stage::Analysis => "analysis",
            Stage::Write => "write",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

fn at(stage: Stage) -> impl FnOnce(Error) -> StageError {
    move |source| StageError { stage, source }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where CSVs, streams and `report.json` go. Nothing is written if unset.
    pub out_dir: Option<PathBuf>,
    /// Simulate all four detectors and write them to `detectors.ptt`.
    pub write_streams: bool,
    /// Skip correlation and analyses (streams only).
    pub skip_correlation: bool,
}

pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub correlograms: BTreeMap<String, Correlogram>,
    /// Detector clicks indexed by detector; `None` for unused detectors.
    pub detectors: Vec<Option<TagStream>>,
}

/// Runs a scenario in memory.
pub fn run_scenario(cfg: &ScenarioConfig) -> std::result::Result<ScenarioRun, StageError> {
    run_scenario_with(cfg, &RunOptions::default())
}

/// Runs a scenario end to end: sample → photonize → bench → correlate →
/// analyses → checks. On failure every artifact already written is removed
/// and a failure report naming the stage takes the place of the report.
pub fn run_scenario_with(
    cfg: &ScenarioConfig,
    opts: &RunOptions,
) -> std::result::Result<ScenarioRun, StageError> {
    let mut written = Vec::new();
    let result = run_inner(cfg, opts, &mut written);
    if let Err(e) = &result {
        for path in &written {
            let _ = fs::remove_file(path);
        }
        if let Some(dir) = &opts.out_dir {
            let failure = FailureReport {
                name: cfg.name.clone(),
                config: cfg.clone(),
                stage: e.stage.to_string(),
                error: e.source.to_string(),
            };
            if fs::create_dir_all(dir).is_ok() {
                let text = serde_json::to_string_pretty(&failure).expect("failure serializes");
                let _ = fs::write(dir.join("report.json"), text);
            }
        }
    }
    result
}

fn run_inner(
    cfg: &ScenarioConfig,
    opts: &RunOptions,
    written: &mut Vec<PathBuf>,
) -> std::result::Result<ScenarioRun, StageError> {
    let start = Instant::now();
    let mut warnings = cfg.validate().map_err(at(Stage::Validate))?;
    let bench = cfg.bench();
    let mut used = cfg.used_detectors();
    if opts.write_streams {
        used.extend(Detector::ALL);
    }
    let arms_used = [
        used.iter().any(|d| d.arm() == 0),
        used.iter().any(|d| d.arm() == 1),
    ];

    let t = Instant::now();
    let (beams, trace) = generate(cfg, arms_used).map_err(at(Stage::Source))?;
    let source_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut tags = TagCounts {
        beams: beams
            .iter()
            .map(|b| b.as_ref().map_or(0, |s| s.len() as u64))
            .collect(),
        ..Default::default()
    };
    let detectors = run_bench(cfg, &bench, beams, &used).map_err(at(Stage::Bench))?;
    for d in &used {
        let n = detectors[d.index()].as_ref().map_or(0, |s| s.len() as u64);
        tags.detectors.insert(*d, n);
        if n == 0 {
            warnings.push(format!("detector {d:?} recorded no clicks"));
        }
    }
    let bench_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut correlograms = BTreeMap::new();
    let mut summaries = BTreeMap::new();
    if !opts.skip_correlation {
        for req in &cfg.correlograms {
            let a = detectors[req.a.index()].as_ref().expect("simulated");
            let b = detectors[req.b.index()].as_ref().expect("simulated");
            let c = correlate(
                Channel::new(a, req.a.channel()),
                Channel::new(b, req.b.channel()),
                &req.spec,
            )
            .map_err(at(Stage::Correlate))?;
            let meta = c.meta.clone().expect("fresh correlogram");
            if meta.empty_input {
                warnings.push(format!("correlogram `{}` has an empty input", req.name));
            }
            summaries.insert(
                req.name.clone(),
                CorrelogramSummary {
                    a: req.a,
                    b: req.b,
                    spec: req.spec,
                    n_a: meta.n_a,
                    n_b: meta.n_b,
                    coincidences: c.counts.iter().sum(),
                    empty_input: meta.empty_input,
                },
            );
            correlograms.insert(req.name.clone(), c);
        }
    }
    let correlate_s = t.elapsed().as_secs_f64();

    let mut artifacts = Artifacts::default();
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| at(Stage::Write)(e.into()))?;
        for (name, c) in &correlograms {
            let path = dir.join(format!("{name}.csv"));
            written.push(path.clone());
            c.write_csv_file(&path).map_err(at(Stage::Write))?;
            artifacts
                .correlograms
                .insert(name.clone(), file_name(&path));
        }
        if opts.write_streams {
            let path = dir.join("detectors.ptt");
            written.push(path.clone());
            let merged = merge_detectors(&detectors, cfg).map_err(at(Stage::Write))?;
            write_stream_file(&merged, &path).map_err(at(Stage::Write))?;
            artifacts.streams = Some(file_name(&path));
        }
    }

    let t = Instant::now();
    let mut analyses = BTreeMap::new();
    let mut converged = true;
    if !opts.skip_correlation {
        for req in &cfg.analyses {
            let outcome = run_analysis(&req.op, &correlograms, &cfg.source);
            let block = match outcome {
                Ok((mut value, extra)) => {
                    if let AnalysisOp::Fit { .. } = req.op {
                        converged &= value["converged"].as_bool() == Some(true);
                    }
                    if let (Some(dir), Some(csv)) = (&opts.out_dir, extra) {
                        let path = dir.join(format!("{}.csv", req.name));
                        written.push(path.clone());
                        fs::write(&path, csv).map_err(|e| at(Stage::Write)(e.into()))?;
                        artifacts
                            .analyses
                            .insert(req.name.clone(), file_name(&path));
                    }
                    value["op"] = json!(req.op.name());
                    value
                }
                Err(e) => {
                    if let AnalysisOp::Fit { .. } = req.op {
                        converged = false;
                    }
                    json!({ "op": req.op.name(), "error": { "stage": "analysis", "message": e.to_string() } })
                }
            };
            analyses.insert(req.name.clone(), block);
        }
    }
    let analysis_s = t.elapsed().as_secs_f64();
    if !converged {
        warnings.push("a fit did not converge".into());
    }

    let mut report = ScenarioReport {
        name: cfg.name.clone(),
        config: cfg.clone(),
        bench,
        artifacts,
        trace,
        tags,
        correlograms: summaries,
        analyses,
        checks: Vec::new(),
        all_checks_passed: true,
        converged,
        warnings,
        timing: Timing {
            source_s,
            bench_s,
            correlate_s,
            analysis_s,
            total_s: 0.0,
        },
    };
    let value = serde_json::to_value(&report).expect("report serializes");
    // Checks read analysis metrics, so a streams-only run has none to evaluate.
    if !opts.skip_correlation {
        report.checks = cfg
            .checks
            .iter()
            .map(|c| CheckOutcome::evaluate(c, &value))
            .collect();
    }
    report.all_checks_passed = report.checks.iter().all(|c| c.passed);
    report.timing.total_s = start.elapsed().as_secs_f64();

    if let Some(dir) = &opts.out_dir {
        let path = dir.join("report.json");
        written.push(path.clone());
        fs::write(&path, report.to_json()).map_err(|e| at(Stage::Write)(e.into()))?;
    }
    Ok(ScenarioRun {
        report,
        correlograms,
        detectors,
    })
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

type Beams = Vec<Option<TagStream>>;

/// Streams the source through the photonizers. Beams whose arm is unused
/// are not photonized.
fn generate(cfg: &ScenarioConfig, arms_used: [bool; 2]) -> Result<(Beams, Vec<TraceSummary>)> {
    let dt = cfg.dt_ps;
    let mut generator = TraceGenerator::new(&cfg.source, dt, derive_seed(cfg.seed, "source"))?;
    let n_beams = generator.beam_count();
    let wanted: Vec<bool> = if n_beams == 1 {
        vec![arms_used[0] || arms_used[1]]
    } else {
        arms_used.to_vec()
    };
    let mut photonizers = (0..n_beams)
        .map(|b| Photonizer::new(derive_seed(cfg.seed, &format!("photons-{b}")), 0, dt))
        .collect::<Result<Vec<_>>>()?;
    let mut buffers = vec![Vec::new(); n_beams];
    let mut photons: Vec<Vec<TimeTag>> = vec![Vec::new(); n_beams];
    let mut sums = vec![(0.0f64, 0.0f64); n_beams];
    let total = cfg.duration_ps / dt;
    let mut done = 0u64;
    while done < total {
        let n = (total - done).min(CHUNK as u64) as usize;
        generator.fill(&mut buffers, n);
        for b in 0..n_beams {
            let (s1, s2) = buffers[b]
                .iter()
                .fold((0.0, 0.0), |(s1, s2), &x| (s1 + x, s2 + x * x));
            sums[b].0 += s1;
            sums[b].1 += s2;
            if wanted[b] {
                photonizers[b].push(&buffers[b], &mut photons[b])?;
            }
        }
        done += n as u64;
    }
    let trace = cfg
        .source
        .labels()
        .into_iter()
        .zip(&sums)
        .map(|(label, &(s1, s2))| TraceSummary {
            label,
            samples: total,
            mean_rate_cps: s1 / total as f64,
            g2_zero: if s1 > 0.0 {
                total as f64 * s2 / (s1 * s1)
            } else {
                f64::NAN
            },
        })
        .collect();
    let provenance = format!("{} seed {}", cfg.name, cfg.seed);
    let beams = photons
        .into_iter()
        .zip(wanted)
        .map(|(tags, w)| {
            w.then(|| {
                TagStream::from_parts_unchecked(1, cfg.duration_ps, 1, tags, provenance.clone())
            })
        })
        .collect();
    Ok((beams, trace))
}

/// Keeps the tags inside the acquisition window `[0, duration)`.
fn window(s: TagStream, duration: u64) -> TagStream {
    let provenance = s.provenance().to_string();
    let (res, count) = (s.resolution_ps(), s.channel_count());
    let mut tags = s.into_tags();
    tags.retain(|t| t.t < duration);
    TagStream::from_parts_unchecked(res, duration, count, tags, provenance)
}

fn run_bench(
    cfg: &ScenarioConfig,
    bench: &Bench,
    mut beams: Beams,
    used: &std::collections::BTreeSet<Detector>,
) -> Result<Vec<Option<TagStream>>> {
    let seed = |label: &str| derive_seed(cfg.seed, label);
    let (arm1, arm2) = if beams.len() == 1 {
        match beams.pop().flatten() {
            Some(s) => {
                let (a, b) = split_owned(s, bench.source_split, seed("source-split"))?;
                (Some(a), Some(b))
            }
            None => (None, None),
        }
    } else {
        let arm2 = beams.pop().flatten();
        (beams.pop().flatten(), arm2)
    };
    let wants = |d: Detector| used.contains(&d);

    let mut out: Vec<Option<TagStream>> = vec![None, None, None, None];
    let mut finish = |d: Detector, s: TagStream| -> Result<()> {
        let s = s.relabel(d.channel())?;
        let label = format!("detector-{d:?}");
        out[d.index()] = Some(detect(
            &s,
            &bench.detectors[d.index()],
            d.channel(),
            seed(&label),
        )?);
        Ok(())
    };

    let arm2 = arm2.filter(|_| wants(Detector::D3) || wants(Detector::D4));
    if let Some(arm) = arm1.filter(|_| wants(Detector::D1) || wants(Detector::D2)) {
        let arm = attenuate_owned(arm, bench.attenuation, seed("attenuation"))?;
        let (d1, d2) = split_owned(arm, bench.arm1_split, seed("arm1-split"))?;
        if wants(Detector::D1) {
            finish(Detector::D1, d1)?;
        }
        if wants(Detector::D2) {
            finish(Detector::D2, d2)?;
        }
    }
    if let Some(arm) = arm2 {
        let arm = window(delay(&arm, bench.delay_ps)?, cfg.duration_ps);
        let (d3, d4) = split_owned(arm, bench.arm2_split, seed("arm2-split"))?;
        if wants(Detector::D3) {
            finish(Detector::D3, d3)?;
        }
        if wants(Detector::D4) {
            finish(Detector::D4, d4)?;
        }
    }
    Ok(out)
}

fn merge_detectors(detectors: &[Option<TagStream>], cfg: &ScenarioConfig) -> Result<TagStream> {
    let mut merged = TagStream::empty(1, cfg.duration_ps, 4)?;
    for s in detectors.iter().flatten() {
        merged = merge(&merged, s)?;
    }
    let provenance = merged.provenance().to_string();
    Ok(TagStream::from_parts_unchecked(
        1,
        cfg.duration_ps,
        4,
        merged.into_tags(),
        provenance,
    ))
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("analysis result serializes")
}

fn zero_bin(c: &Correlogram) -> Result<(f64, f64)> {
    let k = c
        .spec
        .bin_of(0)
        .ok_or_else(|| Error::WindowTooNarrow("window does not cover zero lag".into()))?;
    Ok((c.g2[k], c.g2_err[k]))
}

/// Result fields of one analysis, plus CSV text for ops with per-bin output.
fn run_analysis(
    op: &AnalysisOp,
    cgs: &BTreeMap<String, Correlogram>,
    source: &SourceModel,
) -> Result<(Value, Option<String>)> {
    let get = |name: &str| &cgs[name];
    Ok(match op {
        AnalysisOp::PeakStats { correlogram } => (to_value(&peak_stats(get(correlogram))?), None),
        AnalysisOp::Fit { correlogram } => (
            to_value(&fit_damped_oscillation(get(correlogram), None)?),
            None,
        ),
        AnalysisOp::Flatness { correlogram } => (to_value(&flatness(get(correlogram))?), None),
        AnalysisOp::Extremum {
            correlogram,
            kind,
            lo_ps,
            hi_ps,
            half_width_ps,
        } => (
            to_value(&locate_extremum(
                get(correlogram),
                *kind,
                *lo_ps,
                *hi_ps,
                *half_width_ps,
            )?),
            None,
        ),
        AnalysisOp::Antiphase { x, y } => {
            (json!({ "score": antiphase_score(get(x), get(y))? }), None)
        }
        AnalysisOp::Witness {
            auto_i,
            auto_v,
            cross,
        } => {
            let gi = zero_bin(get(auto_i))?;
            let gv = zero_bin(get(auto_v))?;
            let w = cs_witness_with_errors(gi, gv, get(cross))?;
            let (kmax, _) =
                w.w.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .ok_or_else(|| Error::param("cross", "no bins"))?;
            let mut csv = Vec::new();
            w.write_csv(&mut csv)?;
            (
                json!({
                    "g_ii0": gi.0,
                    "g_ii0_err": gi.1,
                    "g_vv0": gv.0,
                    "g_vv0_err": gv.1,
                    "max_w": w.w[kmax],
                    "max_w_err": w.w_err[kmax],
                    "max_w_lag_ps": w.tau_ps[kmax],
                    "max_excess_sigma": w.max_excess_sigma(),
                }),
                Some(String::from_utf8(csv).expect("ascii csv")),
            )
        }
        AnalysisOp::AnalyticMatch {
            correlogram,
            kind,
            min_abs_tau_ps,
        } => (
            to_value(&analytic_match(
                get(correlogram),
                source,
                *kind,
                *min_abs_tau_ps,
            )?),
            None,
        ),
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AnalyticMatch {
    pub bins: usize,
    pub max_abs_z: f64,
    pub max_abs_z_lag_ps: f64,
    pub beyond_4_sigma: usize,
    pub chi2_per_dof: f64,
}

/// Pointwise z-scores of a correlogram against the source's closed-form g².
/// The error of bin k is the Poisson spread of its expected counts,
/// √(g²_k · norm_k), so empty and sparse bins are scored fairly.
pub fn analytic_match(
    c: &Correlogram,
    source: &SourceModel,
    kind: CorrelatorKind,
    min_abs_tau_ps: f64,
) -> Result<AnalyticMatch> {
    let mut out = AnalyticMatch {
        bins: 0,
        max_abs_z: 0.0,
        max_abs_z_lag_ps: f64::NAN,
        beyond_4_sigma: 0,
        chi2_per_dof: 0.0,
    };
    let mut chi2 = 0.0;
    for k in 0..c.n_bins() {
        let tau = c.spec.bin_center(k);
        if tau.abs() < min_abs_tau_ps || c.norm[k] <= 0.0 {
            continue;
        }
        let expect = analytic_g2(source, kind, tau)?;
        let sigma = (expect * c.norm[k]).sqrt();
        if !(sigma > 0.0) {
            continue;
        }
        let z = (c.g2[k] - expect) / sigma;
        chi2 += z * z;
        out.bins += 1;
        if z.abs() > 4.0 {
            out.beyond_4_sigma += 1;
        }
        if z.abs() > out.max_abs_z {
            out.max_abs_z = z.abs();
            out.max_abs_z_lag_ps = tau;
        }
    }
    if out.bins == 0 {
        return Err(Error::param("correlogram", "no bins to compare"));
    }
    out.chi2_per_dof = chi2 / out.bins as f64;
    Ok(out)
}
