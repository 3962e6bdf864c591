//! Signatures extracted from correlograms: zero-lag peak and visibility,
//! damped-oscillation fits, flatness tests, anti-phase comparison and the
//! Cauchy–Schwarz witness.

mod fit;
mod peak;
mod witness;

use serde::{Deserialize, Serialize};

use crate::correlator::Correlogram;
use crate::error::{Error, Result};

pub use fit::{fit_damped_oscillation, fit_log_curve, model, model_jacobian, FitParams, FitResult};
pub use peak::{locate_extremum, peak_stats, Extremum, ExtremumKind, PeakStats};
pub use witness::{cs_witness, cs_witness_with_errors, Witness};

/// Agreement of a correlogram with g² ≡ 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flatness {
    /// Largest |counts − E| / √E, E being the uncorrelated expectation.
    pub max_abs_z: f64,
    pub max_abs_z_lag_ps: f64,
    /// Largest |g2 − 1| / g2_err over non-empty bins.
    pub max_abs_z_observed: f64,
    /// Σ (counts − E)² / E.
    pub chi2: f64,
    pub dof: usize,
    pub chi2_per_dof: f64,
    pub empty_bins: usize,
}

/// Tests a correlogram against g² ≡ 1.
///
/// z-scores use the Poisson spread of the expected counts. Observed-count
/// errors shrink in downward fluctuations, which inflates the low tail at
/// modest counts per bin; they are reported separately.
pub fn flatness(c: &Correlogram) -> Result<Flatness> {
    let mut out = Flatness {
        max_abs_z: 0.0,
        max_abs_z_lag_ps: f64::NAN,
        max_abs_z_observed: 0.0,
        chi2: 0.0,
        dof: 0,
        chi2_per_dof: 0.0,
        empty_bins: 0,
    };
    for k in 0..c.n_bins() {
        let expected = c.expected_uncorrelated(k);
        if expected <= 0.0 {
            continue;
        }
        let n = c.counts[k] as f64;
        let z = (n - expected) / expected.sqrt();
        out.chi2 += z * z;
        out.dof += 1;
        if z.abs() > out.max_abs_z {
            out.max_abs_z = z.abs();
            out.max_abs_z_lag_ps = c.spec.bin_center(k);
        }
        if c.counts[k] > 0 {
            out.max_abs_z_observed = out
                .max_abs_z_observed
                .max(((c.g2[k] - 1.0) / c.g2_err[k]).abs());
        } else {
            out.empty_bins += 1;
        }
    }
    if out.dof == 0 {
        return Err(Error::param(
            "correlogram",
            "no bins with a defined expectation",
        ));
    }
    out.chi2_per_dof = out.chi2 / out.dof as f64;
    Ok(out)
}

/// Pearson correlation of (x.g2 − 1) and (y.g2 − 1) over bins where both
/// have counts. Values near −1 mean the curves oscillate in anti-phase.
pub fn antiphase_score(x: &Correlogram, y: &Correlogram) -> Result<f64> {
    if x.spec != y.spec || x.n_bins() != y.n_bins() {
        return Err(Error::SpecMismatch);
    }
    let used: Vec<usize> = (0..x.n_bins())
        .filter(|&k| x.counts[k] > 0 && y.counts[k] > 0)
        .collect();
    if used.len() < 2 {
        return Err(Error::param(
            "correlogram",
            "fewer than two shared non-empty bins",
        ));
    }
    let n = used.len() as f64;
    let mx = used.iter().map(|&k| x.g2[k] - 1.0).sum::<f64>() / n;
    let my = used.iter().map(|&k| y.g2[k] - 1.0).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &k in &used {
        let dx = x.g2[k] - 1.0 - mx;
        let dy = y.g2[k] - 1.0 - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::param(
            "correlogram",
            "constant curve has no correlation",
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}


#[cfg(test)]
mod tests {
    use super::test_util::synthetic;
    use super::*;
    use crate::correlator::CorrelogramSpec;

    fn spec() -> CorrelogramSpec {
        CorrelogramSpec::symmetric(1_000, 200_000).unwrap()
    }

    #[test]
    fn antiphase_extremes() {
        let x = synthetic(spec(), |t| 1.0 + 0.5 * (t / 7_000.0).cos(), 100.0);
        assert!((antiphase_score(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let mut y = x.clone();
        y.g2 = x.g2.iter().map(|g| 2.0 - g).collect();
        assert!((antiphase_score(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(
            antiphase_score(&x, &y).unwrap(),
            antiphase_score(&y, &x).unwrap()
        );
    }

    #[test]
    fn antiphase_rejects_mismatched_specs() {
        let x = synthetic(spec(), |_| 1.0, 100.0);
        let y = synthetic(
            CorrelogramSpec::symmetric(2_000, 200_000).unwrap(),
            |_| 1.0,
            100.0,
        );
        assert!(matches!(antiphase_score(&x, &y), Err(Error::SpecMismatch)));
    }

    #[test]
    fn flatness_of_exact_expectation() {
        let c = synthetic(spec(), |_| 1.0, 400.0);
        let f = flatness(&c).unwrap();
        assert_eq!(f.chi2, 0.0);
        assert_eq!(f.max_abs_z, 0.0);
        assert_eq!(f.dof, c.n_bins());
    }
}
