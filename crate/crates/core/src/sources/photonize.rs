use rand::Rng as _;
use rand_distr::Exp1;

use super::IntensityTrace;
use crate::error::{Error, Result};
use crate::rng::{block_seed, rng, Rng};
use crate::tags::{TagStream, TimeTag};

/// Largest mean photon count accepted in one sampling interval.
pub const MAX_MEAN_COUNTS_PER_BIN: f64 = 1.0e6;

/// Samples per independently seeded block.
const BLOCK: u64 = 1 << 16;

/// Streaming doubly stochastic Poisson sampler.
///
/// Within each constant-rate interval the photon count is Poisson(λ·dt) and
/// positions are uniform; this is realised by the time-change construction
/// (unit exponential gaps in integrated intensity). Each block of samples
/// draws from its own RNG keyed by (seed, block index), so output does not
/// depend on how samples are pushed.
pub struct Photonizer {
    seed: u64,
    channel: u8,
    dt_ps: u64,
    dt_s: f64,
    index: u64,
    rng: Rng,
    remaining: f64,
}

impl Photonizer {
    pub fn new(seed: u64, channel: u8, dt_ps: u64) -> Result<Self> {
        if dt_ps == 0 {
            return Err(Error::param("dt_ps", "must be positive"));
        }
        let mut rng = rng(block_seed(seed, 0));
        let remaining = rng.sample(Exp1);
        Ok(Photonizer {
            seed,
            channel,
            dt_ps,
            dt_s: dt_ps as f64 * 1e-12,
            index: 0,
            rng,
            remaining,
        })
    }

    /// Samples consumed so far.
    pub fn position(&self) -> u64 {
        self.index
    }

    pub fn push(&mut self, samples: &[f64], out: &mut Vec<TimeTag>) -> Result<()> {
        for &rate in samples {
            if self.index.is_multiple_of(BLOCK) && self.index > 0 {
                self.rng = rng(block_seed(self.seed, self.index / BLOCK));
                self.remaining = self.rng.sample(Exp1);
            }
            let mass = rate * self.dt_s;
            if !(mass.is_finite() && mass >= 0.0) {
                return Err(Error::param("samples", "rates must be finite and >= 0"));
            }
            if mass > MAX_MEAN_COUNTS_PER_BIN {
                return Err(Error::CountBudget(mass));
            }
            if mass > 0.0 {
                let start = self.index * self.dt_ps;
                let mut used = 0.0;
                while self.remaining <= mass - used {
                    used += self.remaining;
                    let offset = ((used / mass) * self.dt_ps as f64) as u64;
                    out.push(TimeTag::new(
                        start + offset.min(self.dt_ps - 1),
                        self.channel,
                    ));
                    self.remaining = self.rng.sample(Exp1);
                }
                self.remaining -= mass - used;
            }
            self.index += 1;
        }
        Ok(())
    }
}

/// Photon detections of an intensity trace on `channel`.
pub fn photonize(trace: &IntensityTrace, seed: u64, channel: u8) -> Result<TagStream> {
    trace.validate()?;
    let mut p = Photonizer::new(seed, channel, trace.dt_ps)?;
    let mut tags = Vec::new();
    p.push(&trace.samples, &mut tags)?;
    let duration = trace.duration_ps().max(1);
    // Positions are nondecreasing within and across intervals.
    TagStream::new(1, duration, channel.saturating_add(1), tags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sources::TraceLabel;

    #[test]
    fn zero_trace_is_empty() {
        let t = IntensityTrace::new(100, vec![0.0; 1000], TraceLabel::Total).unwrap();
        assert!(photonize(&t, 1, 0).unwrap().is_empty());
    }

    #[test]
    fn constant_rate_count_is_poisson() {
        // 10⁶ c/s for 1 s: 10⁶ ± 4·10³ at 4σ.
        let t = IntensityTrace::new(1_000_000, vec![1e6; 1_000_000], TraceLabel::Total).unwrap();
        let s = photonize(&t, 77, 2).unwrap();
        assert!((s.len() as f64 - 1e6).abs() < 4_000.0, "{}", s.len());
        assert_eq!(s.channel_count(), 3);
        assert!(s.tags().iter().all(|tag| tag.channel == 2));
    }

    #[test]
    fn chunking_does_not_change_output() {
        let samples: Vec<f64> = (0..200_000)
            .map(|k| 1e7 * (1.0 + (k as f64 * 0.001).sin()))
            .collect();
        let t = IntensityTrace::new(500, samples.clone(), TraceLabel::Mode).unwrap();
        let whole = photonize(&t, 5, 0).unwrap();
        let mut p = Photonizer::new(5, 0, 500).unwrap();
        let mut tags = Vec::new();
        for chunk in samples.chunks(7_777) {
            p.push(chunk, &mut tags).unwrap();
        }
        assert_eq!(whole.tags(), tags.as_slice());
    }

    #[test]
    fn budget_overflow_rejected() {
        let t = IntensityTrace::new(1_000_000_000_000, vec![1e7], TraceLabel::Total).unwrap();
        assert!(matches!(photonize(&t, 1, 0), Err(Error::CountBudget(_))));
    }

    #[test]
    fn positions_are_uniform_within_intervals() {
        let t = IntensityTrace::new(1_000, vec![1e9; 2_000], TraceLabel::Total).unwrap();
        let s = photonize(&t, 3, 0).unwrap();
        let mut hist = [0usize; 10];
        for tag in s.tags() {
            hist[((tag.t % 1_000) / 100) as usize] += 1;
        }
        let expect = s.len() as f64 / 10.0;
        for h in hist {
            assert!((h as f64 - expect).abs() < 5.0 * expect.sqrt(), "{hist:?}");
        }
    }
}
