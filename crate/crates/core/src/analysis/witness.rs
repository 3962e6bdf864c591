use serde::{Deserialize, Serialize};

use crate::correlator::Correlogram;
use crate::error::{Error, Result};

/// Cauchy–Schwarz ratio W(τ) = g_iv(τ)² / (g_ii(0) · g_vv(0)) per bin.
/// Classical intensities satisfy W ≤ 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub tau_ps: Vec<f64>,
    pub w: Vec<f64>,
    pub w_err: Vec<f64>,
}

impl Witness {
    /// Largest (W − 1) / σ_W over bins with a nonzero error.
    pub fn max_excess_sigma(&self) -> f64 {
        self.w
            .iter()
            .zip(&self.w_err)
            .filter(|(_, &e)| e > 0.0)
            .map(|(&w, &e)| (w - 1.0) / e)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_w(&self) -> f64 {
        self.w.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv<W: std::io::Write>(&self, sink: W) -> Result<()> {
        use std::io::Write;
        let mut sink = std::io::BufWriter::new(sink);
        writeln!(sink, "tau_ps,w,w_err")?;
        for k in 0..self.w.len() {
            writeln!(sink, "{},{},{}", self.tau_ps[k], self.w[k], self.w_err[k])?;
        }
        sink.flush()?;
        Ok(())
    }
}

/// W with errors from the cross-correlogram only.
pub fn cs_witness(g_ii0: f64, g_vv0: f64, g_iv: &Correlogram) -> Result<Witness> {
    cs_witness_with_errors((g_ii0, 0.0), (g_vv0, 0.0), g_iv)
}

/// W with the uncertainties of the two zero-lag autocorrelations added in
/// quadrature to that of the cross-correlogram.
pub fn cs_witness_with_errors(
    g_ii0: (f64, f64),
    g_vv0: (f64, f64),
    g_iv: &Correlogram,
) -> Result<Witness> {
    for (name, (v, e)) in [("g_ii0", g_ii0), ("g_vv0", g_vv0)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::param(name, format!("must be positive, got {v}")));
        }
        if !(e >= 0.0) {
            return Err(Error::param(name, "error must be non-negative"));
        }
    }
    let denom = g_ii0.0 * g_vv0.0;
    let rel_auto = (g_ii0.1 / g_ii0.0).powi(2) + (g_vv0.1 / g_vv0.0).powi(2);
    let mut w = Vec::with_capacity(g_iv.n_bins());
    let mut w_err = Vec::with_capacity(g_iv.n_bins());
    for k in 0..g_iv.n_bins() {
        let g = g_iv.g2[k];
        let wk = g * g / denom;
        let rel_cross = if g > 0.0 {
            2.0 * g_iv.g2_err[k] / g
        } else {
            0.0
        };
        w.push(wk);
        w_err.push(wk * (rel_cross * rel_cross + rel_auto).sqrt());
    }
    Ok(Witness {
        tau_ps: g_iv.centers(),
        w,
        w_err,
    })
}
