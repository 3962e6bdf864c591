use std::collections::VecDeque;
use std::f64::consts::TAU;

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{LgcpParams, SourceModel};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng, Rng};

/// Unit-variance Ornstein–Uhlenbeck process sampled on a fixed grid with the
/// exact AR(1) update x' = a·x + √(1 − a²)·ξ, a = e^{−dt/τ}.
#[derive(Debug, Clone)]
pub struct OrnsteinUhlenbeck {
    x: f64,
    decay: f64,
    kick: f64,
}

impl OrnsteinUhlenbeck {
    /// Starts from the stationary distribution.
    pub fn new(tau_ps: f64, dt_ps: u64, rng: &mut Rng) -> Self {
        let ratio = dt_ps as f64 / tau_ps;
        OrnsteinUhlenbeck {
            x: rng.sample(StandardNormal),
            decay: (-ratio).exp(),
            kick: (-(-2.0 * ratio).exp_m1()).sqrt(),
        }
    }

    pub fn value(&self) -> f64 {
        self.x
    }

    /// Returns the current value and advances one step.
    #[inline]
    pub fn step(&mut self, rng: &mut Rng) -> f64 {
        let current = self.x;
        let xi: f64 = rng.sample(StandardNormal);
        self.x = self.decay * self.x + self.kick * xi;
        current
    }
}

/// cos/sin of ω·k·dt by complex rotation, re-anchored to the exact value
/// every `ANCHOR` samples.
#[derive(Debug, Clone)]
struct Rotator {
    k: u64,
    dt_ps: f64,
    period_ps: f64,
    phase: f64,
    cos: f64,
    sin: f64,
    step_cos: f64,
    step_sin: f64,
}

impl Rotator {
    const ANCHOR: u64 = 1024;

    fn new(period_ps: f64, dt_ps: u64, phase: f64) -> Self {
        let step = TAU * dt_ps as f64 / period_ps;
        let mut r = Rotator {
            k: 0,
            dt_ps: dt_ps as f64,
            period_ps,
            phase,
            cos: 1.0,
            sin: 0.0,
            step_cos: step.cos(),
            step_sin: step.sin(),
        };
        r.anchor();
        r
    }

    fn anchor(&mut self) {
        let t = (self.k as f64 * self.dt_ps) % self.period_ps;
        let angle = TAU * t / self.period_ps + self.phase;
        self.cos = angle.cos();
        self.sin = angle.sin();
    }

    #[inline]
    fn next(&mut self) -> (f64, f64) {
        let out = (self.cos, self.sin);
        self.k += 1;
        if self.k.is_multiple_of(Self::ANCHOR) {
            self.anchor();
        } else {
            let c = self.cos * self.step_cos - self.sin * self.step_sin;
            self.sin = self.sin * self.step_cos + self.cos * self.step_sin;
            self.cos = c;
        }
        out
    }
}

/// Gaussian d(t) = x(t)cos ωt + y(t) sin ωt with covariance
/// e^{−|τ|/τ_d}·cos ωτ.
#[derive(Debug, Clone)]
struct DampedOscillation {
    x: OrnsteinUhlenbeck,
    y: OrnsteinUhlenbeck,
    rot: Rotator,
    rng: Rng,
}

impl DampedOscillation {
    fn new(tau_d_ps: f64, t_osc_ps: f64, dt_ps: u64, seed: u64) -> Self {
        let mut rng = rng(seed);
        let x = OrnsteinUhlenbeck::new(tau_d_ps, dt_ps, &mut rng);
        let y = OrnsteinUhlenbeck::new(tau_d_ps, dt_ps, &mut rng);
        DampedOscillation {
            x,
            y,
            rot: Rotator::new(t_osc_ps, dt_ps, 0.0),
            rng,
        }
    }

    #[inline]
    fn next(&mut self) -> f64 {
        let (c, s) = self.rot.next();
        let x = self.x.step(&mut self.rng);
        let y = self.y.step(&mut self.rng);
        x * c + y * s
    }
}

trait Beam: Send {
    fn fill(&mut self, out: &mut [f64]);
}

trait BeamPair: Send {
    fn fill(&mut self, total: &mut [f64], mode: &mut [f64]);
}

struct Constant(f64);

impl Beam for Constant {
    fn fill(&mut self, out: &mut [f64]) {
        out.fill(self.0);
    }
}

struct Chaotic {
    rate: f64,
    re: OrnsteinUhlenbeck,
    im: OrnsteinUhlenbeck,
    rng: Rng,
}

impl Beam for Chaotic {
    fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            let re = self.re.step(&mut self.rng);
            let im = self.im.step(&mut self.rng);
            *v = self.rate * 0.5 * (re * re + im * im);
        }
    }
}

struct Modulated {
    base: Box<dyn Beam>,
    depth: f64,
    rot: Rotator,
}

impl Beam for Modulated {
    fn fill(&mut self, out: &mut [f64]) {
        self.base.fill(out);
        for v in out {
            let (c, _) = self.rot.next();
            *v *= 1.0 + self.depth * c;
        }
    }
}

struct LogGaussian {
    mean: f64,
    sigma: f64,
    offset: f64,
    d: DampedOscillation,
}

impl LogGaussian {
    fn new(p: &LgcpParams, dt_ps: u64, seed: u64) -> Self {
        LogGaussian {
            mean: p.mean_rate,
            sigma: p.sigma(),
            offset: -0.5 * p.sigma2,
            d: DampedOscillation::new(p.tau_d_ps, p.t_osc_ps, dt_ps, seed),
        }
    }
}

impl Beam for LogGaussian {
    fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.mean * (self.sigma * self.d.next() + self.offset).exp();
        }
    }
}

/// Antiphased rectangular pulse trains. Mode j is on while
/// ((t + φ) mod T − j·T/n) mod T < w, evaluated at the start of each sample
/// in exact integer arithmetic (scaled by n).
pub(crate) struct PulseTrain {
    n: u64,
    t_rep: u64,
    /// On-width times n.
    width_n: u64,
    height: f64,
    phase: u64,
    dt: u64,
    k: u64,
}

impl PulseTrain {
    pub(crate) fn new(model: &SourceModel, dt_ps: u64, seed: u64) -> Result<Self> {
        model.validate()?;
        model.check_dt(dt_ps)?;
        let SourceModel::PulseTrainMultimode {
            n_modes,
            t_rep_ps,
            total_rate,
            ..
        } = model
        else {
            return Err(Error::param("model", "not a pulse-train model"));
        };
        let width_n = model.pulse_on_width_scaled().expect("pulse model");
        let mut rng = rng(derive_seed(seed, "pulse-phase"));
        Ok(PulseTrain {
            n: u64::from(*n_modes),
            t_rep: *t_rep_ps,
            width_n,
            // Mode mean = height · w / T = total_rate / n.
            height: total_rate * (*t_rep_ps as f64 / width_n as f64),
            phase: rng.random_range(0..*t_rep_ps),
            dt: dt_ps,
            k: 0,
        })
    }

    pub(crate) fn n_modes(&self) -> usize {
        self.n as usize
    }

    fn position_n(&self, k: u64) -> u128 {
        let t =
            (u128::from(k) * u128::from(self.dt) + u128::from(self.phase)) % u128::from(self.t_rep);
        t * u128::from(self.n)
    }

    pub(crate) fn mode_rate(&self, j: usize, k: u64) -> f64 {
        let span = u128::from(self.n) * u128::from(self.t_rep);
        let pos = self.position_n(k);
        let rel = (pos + span - (j as u128) * u128::from(self.t_rep)) % span;
        if rel < u128::from(self.width_n) {
            self.height
        } else {
            0.0
        }
    }

    /// Number of modes on at sample k: multiples of T in (pos − W, pos].
    fn modes_on(&self, k: u64) -> u64 {
        let pos = self.position_n(k) as i128;
        let t = i128::from(self.t_rep);
        let lo = pos - i128::from(self.width_n);
        (pos.div_euclid(t) - lo.div_euclid(t)) as u64
    }
}

impl BeamPair for PulseTrain {
    fn fill(&mut self, total: &mut [f64], mode: &mut [f64]) {
        for (tot, m) in total.iter_mut().zip(mode.iter_mut()) {
            *tot = self.height * self.modes_on(self.k) as f64;
            *m = self.mode_rate(0, self.k);
            self.k += 1;
        }
    }
}

struct Pair {
    total: (f64, f64, f64),
    mode: (f64, f64, f64),
    rho: f64,
    rho_c: f64,
    lag: i64,
    g: DampedOscillation,
    h: DampedOscillation,
    window: VecDeque<f64>,
}

impl Pair {
    fn new(
        total: &LgcpParams,
        mode: &LgcpParams,
        rho: f64,
        delta_ps: i64,
        dt_ps: u64,
        seed: u64,
    ) -> Self {
        let lag = delta_ps / dt_ps as i64;
        let mut g = DampedOscillation::new(
            total.tau_d_ps,
            total.t_osc_ps,
            dt_ps,
            derive_seed(seed, "pair-g"),
        );
        let h = DampedOscillation::new(
            mode.tau_d_ps,
            mode.t_osc_ps,
            dt_ps,
            derive_seed(seed, "pair-h"),
        );
        let window = (0..lag.unsigned_abs()).map(|_| g.next()).collect();
        let coeffs = |p: &LgcpParams| (p.mean_rate, p.sigma(), -0.5 * p.sigma2);
        Pair {
            total: coeffs(total),
            mode: coeffs(mode),
            rho,
            rho_c: (1.0 - rho * rho).max(0.0).sqrt(),
            lag,
            g,
            h,
            window,
        }
    }
}

impl BeamPair for Pair {
    fn fill(&mut self, total: &mut [f64], mode: &mut [f64]) {
        for (tot, m) in total.iter_mut().zip(mode.iter_mut()) {
            self.window.push_back(self.g.next());
            let newest = *self.window.back().unwrap();
            let oldest = self.window.pop_front().unwrap();
            // lag > 0: the mode sees g(t − Δ), i.e. the oldest value.
            let (g_total, g_mode) = if self.lag >= 0 {
                (newest, oldest)
            } else {
                (oldest, newest)
            };
            let d_mode = self.rho * g_mode + self.rho_c * self.h.next();
            let (mt, st, ot) = self.total;
            let (mm, sm, om) = self.mode;
            *tot = mt * (st * g_total + ot).exp();
            *m = mm * (sm * d_mode + om).exp();
        }
    }
}

struct Split(Box<dyn Beam>, Box<dyn Beam>);

impl BeamPair for Split {
    fn fill(&mut self, total: &mut [f64], mode: &mut [f64]) {
        self.0.fill(total);
        self.1.fill(mode);
    }
}

fn single_beam(model: &SourceModel, dt_ps: u64, seed: u64) -> Box<dyn Beam> {
    match model {
        SourceModel::Coherent { rate } => Box::new(Constant(*rate)),
        SourceModel::Chaotic { rate, tau_c_ps } => {
            let mut rng = rng(derive_seed(seed, "chaotic"));
            let re = OrnsteinUhlenbeck::new(*tau_c_ps, dt_ps, &mut rng);
            let im = OrnsteinUhlenbeck::new(*tau_c_ps, dt_ps, &mut rng);
            Box::new(Chaotic {
                rate: *rate,
                re,
                im,
                rng,
            })
        }
        SourceModel::Modulated {
            base,
            period_ps,
            depth,
        } => {
            let mut rng = rng(derive_seed(seed, "modulation-phase"));
            let phase = rng.random_range(0.0..TAU);
            Box::new(Modulated {
                base: single_beam(base, dt_ps, derive_seed(seed, "modulated-base")),
                depth: *depth,
                rot: Rotator::new(*period_ps, dt_ps, phase),
            })
        }
        SourceModel::LogGaussianCox(p) => {
            Box::new(LogGaussian::new(p, dt_ps, derive_seed(seed, "lgcp")))
        }
        _ => unreachable!("two-beam model passed as single beam"),
    }
}

enum Inner {
    Single(Box<dyn Beam>),
    Pair(Box<dyn BeamPair>),
}

/// Streaming sampler: produces the same samples regardless of how the
/// requested lengths are chunked.
pub struct TraceGenerator {
    inner: Inner,
    dt_ps: u64,
    produced: u64,
}

impl TraceGenerator {
    pub fn new(model: &SourceModel, dt_ps: u64, seed: u64) -> Result<Self> {
        model.validate()?;
        model.check_dt(dt_ps)?;
        let inner = match model {
            SourceModel::PulseTrainMultimode { .. } => {
                Inner::Pair(Box::new(PulseTrain::new(model, dt_ps, seed)?))
            }
            SourceModel::CorrelatedPair {
                total,
                mode,
                rho,
                delta_ps,
            } => Inner::Pair(Box::new(Pair::new(
                total, mode, *rho, *delta_ps, dt_ps, seed,
            ))),
            SourceModel::Independent { total, mode } => Inner::Pair(Box::new(Split(
                single_beam(total, dt_ps, derive_seed(seed, "independent-total")),
                single_beam(mode, dt_ps, derive_seed(seed, "independent-mode")),
            ))),
            single => Inner::Single(single_beam(single, dt_ps, seed)),
        };
        Ok(TraceGenerator {
            inner,
            dt_ps,
            produced: 0,
        })
    }

    pub fn beam_count(&self) -> usize {
        match self.inner {
            Inner::Single(_) => 1,
            Inner::Pair(_) => 2,
        }
    }

    pub fn dt_ps(&self) -> u64 {
        self.dt_ps
    }

    /// Samples produced so far.
    pub fn position(&self) -> u64 {
        self.produced
    }

    /// Replaces the contents of `beams[..beam_count()]` with the next `n`
    /// samples of each beam.
    pub fn fill(&mut self, beams: &mut [Vec<f64>], n: usize) {
        assert!(
            beams.len() >= self.beam_count(),
            "one buffer per beam required"
        );
        for b in beams.iter_mut().take(self.beam_count()) {
            b.clear();
            b.resize(n, 0.0);
        }
        match &mut self.inner {
            Inner::Single(beam) => beam.fill(&mut beams[0]),
            Inner::Pair(pair) => {
                let (total, rest) = beams.split_at_mut(1);
                pair.fill(&mut total[0], &mut rest[0]);
            }
        }
        self.produced += n as u64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ou_is_stationary_unit_variance() {
        let mut r = rng(1);
        let mut ou = OrnsteinUhlenbeck::new(10.0, 5, &mut r);
        let n = 400_000;
        let (mut s, mut s2, mut lag1) = (0.0, 0.0, 0.0);
        let mut prev = ou.step(&mut r);
        for _ in 0..n {
            let x = ou.step(&mut r);
            s += x;
            s2 += x * x;
            lag1 += x * prev;
            prev = x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
        let rho = lag1 / n as f64;
        assert!((rho - (-0.5f64).exp()).abs() < 0.01, "lag-1 {rho}");
    }

    #[test]
    fn rotator_tracks_exact_phase() {
        let mut r = Rotator::new(40_000.0, 3_000, 0.3);
        for k in 0..5_000u64 {
            let (c, s) = r.next();
            let angle = TAU * (k as f64 * 3_000.0) / 40_000.0 + 0.3;
            assert!((c - angle.cos()).abs() < 1e-12);
            assert!((s - angle.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn pulse_modes_on_counts_overlaps() {
        let m = SourceModel::PulseTrainMultimode {
            n_modes: 4,
            t_rep_ps: 400,
            duty: Some(0.5),
            total_rate: 1.0,
        };
        let p = PulseTrain::new(&m, 10, 3).unwrap();
        for k in 0..200 {
            let direct = (0..4).filter(|&j| p.mode_rate(j, k) > 0.0).count() as u64;
            assert_eq!(p.modes_on(k), direct);
        }
    }
}
