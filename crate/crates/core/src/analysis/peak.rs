use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::correlator::Correlogram;
use crate::error::{Error, Result};

/// Half-width, in bins, of the moving average used to locate features.
const SMOOTH: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakStats {
    pub g2_zero: f64,
    pub g2_zero_err: f64,
    /// Lowest bin of the first dip below the baseline at positive lag.
    pub min_value: f64,
    pub min_lag_ps: f64,
    /// (g2_zero − min_value) / (g2_zero + min_value), in [0, 1] for
    /// non-negative curves.
    pub visibility: f64,
    pub baseline: f64,
}

fn smoothed(values: &[f64]) -> Vec<f64> {
    (0..values.len())
        .map(|k| {
            let lo = k.saturating_sub(SMOOTH);
            let hi = (k + SMOOTH + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Zero-lag value and the first oscillation minimum.
///
/// The dip window opens where the smoothed curve first falls below 1 at
/// positive lag and closes where it climbs back to 1. A curve that never
/// dips uses its lowest non-negative-lag bin. A dip that is still open at
/// the window edge is rejected.
pub fn peak_stats(c: &Correlogram) -> Result<PeakStats> {
    const BASELINE: f64 = 1.0;
    let k0 = c
        .spec
        .bin_of(0)
        .ok_or_else(|| Error::WindowTooNarrow("window does not cover zero lag".into()))?;
    let g2_zero = c.g2[k0];
    let smooth = smoothed(&c.g2);
    let mut entry = None;
    let mut exit = None;
    for (k, &m) in smooth.iter().enumerate().skip(k0) {
        match entry {
            None if m < BASELINE => entry = Some(k),
            Some(_) if m >= BASELINE => {
                exit = Some(k);
                break;
            }
            _ => {}
        }
    }
    let range = match (entry, exit) {
        (Some(a), Some(b)) => a..b,
        (Some(_), None) => {
            return Err(Error::WindowTooNarrow(
                "first dip does not close inside the window".into(),
            ))
        }
        (None, _) => k0..c.n_bins(),
    };
    let kmin = range
        .clone()
        .min_by(|&i, &j| c.g2[i].total_cmp(&c.g2[j]))
        .expect("non-empty range");
    let min_value = c.g2[kmin];
    let visibility = if g2_zero + min_value > 0.0 {
        (g2_zero - min_value) / (g2_zero + min_value)
    } else {
        0.0
    };
    Ok(PeakStats {
        g2_zero,
        g2_zero_err: c.g2_err[k0],
        min_value,
        min_lag_ps: c.spec.bin_center(kmin),
        visibility,
        baseline: BASELINE,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremumKind {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub kind: ExtremumKind,
    pub lag_ps: f64,
    pub value: f64,
    /// False when the quadratic refinement failed and the smoothed
    /// arg-extremum bin was used.
    pub refined: bool,
}

/// Finds the extremum of g² with bin centers in `[lo_ps, hi_ps]`.
///
/// The smoothed curve picks the bin; a count-weighted quadratic fit of
/// ln g² over ±`half_width_ps` around it gives the sub-bin position and
/// value.
pub fn locate_extremum(
    c: &Correlogram,
    kind: ExtremumKind,
    lo_ps: f64,
    hi_ps: f64,
    half_width_ps: f64,
) -> Result<Extremum> {
    let bins: Vec<usize> = (0..c.n_bins())
        .filter(|&k| (lo_ps..=hi_ps).contains(&c.spec.bin_center(k)))
        .collect();
    if bins.is_empty() {
        return Err(Error::WindowTooNarrow(format!(
            "no bins between {lo_ps} and {hi_ps} ps"
        )));
    }
    let smooth = smoothed(&c.g2);
    let pick = |i: &usize, j: &usize| smooth[*i].total_cmp(&smooth[*j]);
    let k = match kind {
        ExtremumKind::Min => bins.iter().copied().min_by(pick).unwrap(),
        ExtremumKind::Max => bins.iter().copied().max_by(pick).unwrap(),
    };
    let center = c.spec.bin_center(k);
    let fallback = Extremum {
        kind,
        lag_ps: center,
        value: smooth[k],
        refined: false,
    };

    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    let mut used = 0;
    for j in 0..c.n_bins() {
        let x = c.spec.bin_center(j) - center;
        if x.abs() > half_width_ps || c.counts[j] == 0 || c.g2[j] <= 0.0 {
            continue;
        }
        let x = x / half_width_ps;
        let w = c.counts[j] as f64;
        let row = Vector3::new(1.0, x, x * x);
        ata += w * row * row.transpose();
        aty += w * c.g2[j].ln() * row;
        used += 1;
    }
    if used < 4 {
        return Ok(fallback);
    }
    let Some(p) = ata.cholesky().map(|ch| ch.solve(&aty)) else {
        return Ok(fallback);
    };
    let (a, b, q) = (p[0], p[1], p[2]);
    let right_curvature = match kind {
        ExtremumKind::Min => q > 0.0,
        ExtremumKind::Max => q < 0.0,
    };
    let vertex = -b / (2.0 * q);
    if !right_curvature || vertex.abs() > 1.0 {
        return Ok(fallback);
    }
    Ok(Extremum {
        kind,
        lag_ps: center + vertex * half_width_ps,
        value: (a - b * b / (4.0 * q)).exp(),
        refined: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::test_util::synthetic;
    use crate::correlator::CorrelogramSpec;
    use crate::sources::{analytic_g2, CorrelatorKind, LgcpParams, SourceModel};

    fn spec() -> CorrelogramSpec {
        CorrelogramSpec::symmetric(1_000, 500_000).unwrap()
    }

    #[test]
    fn flat_curve() {
        let s = peak_stats(&synthetic(spec(), |_| 1.0, 100.0)).unwrap();
        assert_eq!(s.g2_zero, 1.0);
        assert_eq!(s.visibility, 0.0);
    }

    #[test]
    fn analytic_lgcp_peak() {
        let model = SourceModel::LogGaussianCox(LgcpParams {
            mean_rate: 1e4,
            sigma2: 9f64.ln(),
            tau_d_ps: 190_000.0,
            t_osc_ps: 40_000.0,
        });
        // Bins centered on integer ns so that the zero bin's center is 0.
        let spec = CorrelogramSpec::new(1_000, -500_500, 500_500).unwrap();
        let c = synthetic(
            spec,
            |t| analytic_g2(&model, CorrelatorKind::AutoTotal, t).unwrap(),
            1e6,
        );
        let s = peak_stats(&c).unwrap();
        assert!((s.g2_zero - 9.0).abs() < 1e-9);
        // First minimum half a period out.
        assert_eq!(s.min_lag_ps, 20_000.0);
        let expect = (-(9f64.ln()) * (-20.0f64 / 190.0).exp()).exp();
        assert!((s.min_value - expect).abs() < 1e-9);
        assert!(s.visibility > 0.9 && s.visibility < 1.0);
    }

    #[test]
    fn zero_lag_must_be_covered() {
        let c = synthetic(
            CorrelogramSpec::new(1_000, 1_000, 50_000).unwrap(),
            |_| 1.0,
            1.0,
        );
        assert!(matches!(peak_stats(&c), Err(Error::WindowTooNarrow(_))));
    }

    #[test]
    fn open_dip_rejected() {
        let c = synthetic(spec(), |t| if t < 5_000.0 { 2.0 } else { 0.5 }, 100.0);
        assert!(matches!(peak_stats(&c), Err(Error::WindowTooNarrow(_))));
    }

    #[test]
    fn extremum_sub_bin() {
        let c = synthetic(
            spec(),
            |t| (-0.8 * (2.0 * std::f64::consts::PI * (t - 40_300.0) / 40_000.0).cos()).exp(),
            1e6,
        );
        let m = locate_extremum(&c, ExtremumKind::Min, 20_000.0, 60_000.0, 5_000.0).unwrap();
        assert!(m.refined);
        assert!((m.lag_ps - 40_300.0).abs() < 100.0, "{m:?}");
        assert!((m.value - (-0.8f64).exp()).abs() < 0.01);
        let x = locate_extremum(&c, ExtremumKind::Max, 0.0, 40_000.0, 5_000.0).unwrap();
        assert!((x.lag_ps - 20_300.0).abs() < 100.0, "{x:?}");
    }
}
