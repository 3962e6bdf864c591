//! Bench elements as stream-to-stream transforms: beamsplitters, neutral
//! density filters, propagation delays and click detectors.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng};
use crate::tags::{TagStream, TimeTag};

/// Single-photon avalanche diode imperfections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub dead_time_ps: u64,
    /// Counts per second.
    pub dark_rate: f64,
    pub jitter_sigma_ps: f64,
}

impl DetectorModel {
    pub const IDEAL: DetectorModel = DetectorModel {
        efficiency: 1.0,
        dead_time_ps: 0,
        dark_rate: 0.0,
        jitter_sigma_ps: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        check_probability("efficiency", self.efficiency)?;
        if !(self.dark_rate.is_finite() && self.dark_rate >= 0.0) {
            return Err(Error::param("dark_rate", "must be finite and >= 0"));
        }
        if !(self.jitter_sigma_ps.is_finite() && self.jitter_sigma_ps >= 0.0) {
            return Err(Error::param("jitter_sigma_ps", "must be finite and >= 0"));
        }
        Ok(())
    }
}

fn check_probability(name: &'static str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::param(name, "must lie in [0, 1]"))
    }
}

fn rebuild(s: &TagStream, tags: Vec<TimeTag>) -> TagStream {
    TagStream::from_parts_unchecked(
        s.resolution_ps(),
        s.duration_ps(),
        s.channel_count(),
        tags,
        s.provenance().to_string(),
    )
}

/// Routes each tag to the first output with probability `ratio`.
pub fn split(s: &TagStream, ratio: f64, seed: u64) -> Result<(TagStream, TagStream)> {
    check_probability("ratio", ratio)?;
    let mut r = rng(seed);
    let mut a = Vec::with_capacity((s.len() as f64 * ratio) as usize + 16);
    let mut b = Vec::with_capacity((s.len() as f64 * (1.0 - ratio)) as usize + 16);
    for &tag in s.tags() {
        // random::<f64>() is in [0, 1), so ratio 1 sends everything to `a`.
        if r.random::<f64>() < ratio {
            a.push(tag);
        } else {
            b.push(tag);
        }
    }
    Ok((rebuild(s, a), rebuild(s, b)))
}

/// [`split`] that reuses the input's buffer for the first output.
pub fn split_owned(s: TagStream, ratio: f64, seed: u64) -> Result<(TagStream, TagStream)> {
    check_probability("ratio", ratio)?;
    let mut r = rng(seed);
    let shell = rebuild(&s, Vec::new());
    let mut tags = s.into_tags();
    let mut b = Vec::with_capacity((tags.len() as f64 * (1.0 - ratio)) as usize + 16);
    tags.retain(|&tag| {
        let keep = r.random::<f64>() < ratio;
        if !keep {
            b.push(tag);
        }
        keep
    });
    tags.shrink_to_fit();
    Ok((rebuild(&shell, tags), rebuild(&shell, b)))
}

/// Shifts every tag by `delta_ps` and extends the duration accordingly.
pub fn delay(s: &TagStream, delta_ps: u64) -> Result<TagStream> {
    if !delta_ps.is_multiple_of(s.resolution_ps()) {
        return Err(Error::param(
            "delta_ps",
            "must be a multiple of the resolution",
        ));
    }
    let duration = s
        .duration_ps()
        .checked_add(delta_ps)
        .ok_or(Error::TimestampOverflow)?;
    let tags = s
        .tags()
        .iter()
        .map(|tag| TimeTag::new(tag.t + delta_ps, tag.channel))
        .collect();
    Ok(TagStream::from_parts_unchecked(
        s.resolution_ps(),
        duration,
        s.channel_count(),
        tags,
        s.provenance().to_string(),
    ))
}

/// Independent Bernoulli survival of each tag.
pub fn attenuate(s: &TagStream, transmission: f64, seed: u64) -> Result<TagStream> {
    check_probability("transmission", transmission)?;
    let mut r = rng(seed);
    let tags = s
        .tags()
        .iter()
        .copied()
        .filter(|_| r.random::<f64>() < transmission)
        .collect();
    Ok(rebuild(s, tags))
}

/// [`attenuate`] in place.
pub fn attenuate_owned(s: TagStream, transmission: f64, seed: u64) -> Result<TagStream> {
    check_probability("transmission", transmission)?;
    let mut r = rng(seed);
    let shell = rebuild(&s, Vec::new());
    let mut tags = s.into_tags();
    tags.retain(|_| r.random::<f64>() < transmission);
    Ok(rebuild(&shell, tags))
}

/// Applies a detector to the tags of `channel`; other channels pass through.
///
/// Order of effects: efficiency thinning, Gaussian jitter (tags pushed
/// outside the acquisition are lost), Poisson dark counts over the whole
/// duration, then non-paralyzable dead time.
pub fn detect(s: &TagStream, d: &DetectorModel, channel: u8, seed: u64) -> Result<TagStream> {
    d.validate()?;
    if channel >= s.channel_count() {
        return Err(Error::UnknownChannel {
            index: 0,
            channel,
            count: s.channel_count(),
        });
    }
    let res = s.resolution_ps();
    let duration = s.duration_ps();
    let (mine, others): (Vec<TimeTag>, Vec<TimeTag>) =
        s.tags().iter().partition(|tag| tag.channel == channel);

    let mut r = rng(derive_seed(seed, "efficiency"));
    let mut times: Vec<u64> = mine
        .iter()
        .filter(|_| r.random::<f64>() < d.efficiency)
        .map(|tag| tag.t)
        .collect();

    if d.jitter_sigma_ps > 0.0 {
        let mut r = rng(derive_seed(seed, "jitter"));
        let normal = Normal::new(0.0, d.jitter_sigma_ps).expect("validated sigma");
        times = times
            .into_iter()
            .filter_map(|t| {
                let shifted = t as f64 + normal.sample(&mut r);
                let ticks = (shifted / res as f64).round();
                let t = ticks * res as f64;
                (t >= 0.0 && t < duration as f64).then_some(t as u64)
            })
            .collect();
        times.sort_unstable();
    }

    let expected_dark = d.dark_rate * duration as f64 * 1e-12;
    if expected_dark > 0.0 {
        let mut r = rng(derive_seed(seed, "dark"));
        let count = Poisson::new(expected_dark)
            .map_err(|e| Error::param("dark_rate", e.to_string()))?
            .sample(&mut r) as u64;
        let ticks = duration.div_ceil(res);
        let mut dark: Vec<u64> = (0..count)
            .map(|_| r.random_range(0..ticks) * res)
            .filter(|&t| t < duration)
            .collect();
        dark.sort_unstable();
        times = merge_sorted(&times, &dark);
    }

    if d.dead_time_ps > 0 {
        let mut last: Option<u64> = None;
        times.retain(|&t| match last {
            Some(prev) if t - prev < d.dead_time_ps => false,
            _ => {
                last = Some(t);
                true
            }
        });
    }

    let detected: Vec<TimeTag> = times
        .into_iter()
        .map(|t| TimeTag::new(t, channel))
        .collect();
    let tags = if others.is_empty() {
        detected
    } else {
        let mut all = others;
        all.extend(detected);
        all.sort_by_key(|tag| (tag.t, tag.channel));
        all
    };
    Ok(rebuild(s, tags))
}

fn merge_sorted(a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if b[j] < a[i] {
            out.push(b[j]);
            j += 1;
        } else {
            out.push(a[i]);
            i += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tags::merge;

    fn poisson_stream(n: u64, duration: u64, seed: u64) -> TagStream {
        let mut r = rng(seed);
        let tags = (0..n)
            .map(|_| TimeTag::new(r.random_range(0..duration), 0))
            .collect();
        TagStream::from_unsorted(1, duration, 1, tags).unwrap()
    }

    #[test]
    fn owned_variants_match() {
        let s = poisson_stream(1_000, 1_000_000, 3);
        let (a, b) = split(&s, 0.3, 9).unwrap();
        let (a2, b2) = split_owned(s.clone(), 0.3, 9).unwrap();
        assert_eq!((a, b), (a2, b2));
        assert_eq!(
            attenuate(&s, 0.6, 4).unwrap(),
            attenuate_owned(s, 0.6, 4).unwrap()
        );
    }

    #[test]
    fn split_extremes_and_conservation() {
        let s = poisson_stream(10_000, 1_000_000_000, 1);
        let (a, b) = split(&s, 1.0, 9).unwrap();
        assert_eq!(a, s);
        assert!(b.is_empty());
        let (a, b) = split(&s, 0.0, 9).unwrap();
        assert!(a.is_empty());
        assert_eq!(b.len(), s.len());

        let (a, b) = split(&s, 0.5, 9).unwrap();
        assert_eq!(a.len() + b.len(), s.len());
        // Binomial(10⁴, ½): 5000 ± 200 at 4σ.
        assert!((a.len() as i64 - 5_000).abs() < 200);
        assert_eq!(merge(&a, &b).unwrap().tags(), s.tags());
        assert!(split(&s, 1.5, 0).is_err());
    }

    #[test]
    fn delay_shifts_and_extends() {
        let s = TagStream::new(1, 100, 1, vec![TimeTag::new(10, 0), TimeTag::new(20, 0)]).unwrap();
        assert_eq!(delay(&s, 0).unwrap(), s);
        let d = delay(&s, 40_000).unwrap();
        assert_eq!(d.channel_times(0), vec![40_010, 40_020]);
        assert_eq!(d.duration_ps(), 40_100);
        let big = TagStream::empty(1, u64::MAX - 5, 1).unwrap();
        assert!(matches!(delay(&big, 10), Err(Error::TimestampOverflow)));
    }

    #[test]
    fn attenuate_extremes() {
        let s = poisson_stream(1_000, 1_000_000, 2);
        assert_eq!(attenuate(&s, 1.0, 3).unwrap(), s);
        assert!(attenuate(&s, 0.0, 3).unwrap().is_empty());
        let half = attenuate(&s, 0.5, 3).unwrap();
        assert!(half.len() < s.len() && !half.is_empty());
    }

    #[test]
    fn ideal_detector_is_identity() {
        let s = poisson_stream(5_000, 1_000_000_000, 4);
        assert_eq!(detect(&s, &DetectorModel::IDEAL, 0, 1).unwrap(), s);
    }

    #[test]
    fn non_paralyzable_dead_time() {
        let s = TagStream::new(
            1,
            10_000,
            1,
            vec![
                TimeTag::new(0, 0),
                TimeTag::new(1_000, 0),
                TimeTag::new(2_000, 0),
            ],
        )
        .unwrap();
        let d = DetectorModel {
            dead_time_ps: 1_500,
            ..DetectorModel::IDEAL
        };
        assert_eq!(
            detect(&s, &d, 0, 1).unwrap().channel_times(0),
            vec![0, 2_000]
        );
    }

    #[test]
    fn dead_time_gap_and_monotonicity() {
        let s = poisson_stream(200_000, 100_000_000, 5);
        let d = DetectorModel {
            dead_time_ps: 1_000,
            ..DetectorModel::IDEAL
        };
        let out = detect(&s, &d, 0, 2).unwrap();
        assert!(out.len() <= s.len());
        let t = out.channel_times(0);
        assert!(t.windows(2).all(|w| w[1] - w[0] >= 1_000));
    }

    #[test]
    fn dark_counts_on_empty_stream() {
        // 100 c/s over 1000 s: 10⁵ ± 1.3·10³ at 4σ.
        let s = TagStream::empty(1, 1_000_000_000_000_000, 1).unwrap();
        let d = DetectorModel {
            dark_rate: 100.0,
            ..DetectorModel::IDEAL
        };
        let out = detect(&s, &d, 0, 8).unwrap();
        assert!((out.len() as f64 - 1e5).abs() < 1_300.0, "{}", out.len());
        out.validate().unwrap();
    }

    #[test]
    fn detect_leaves_other_channels_alone() {
        let s = TagStream::new(
            1,
            10_000,
            2,
            vec![TimeTag::new(5, 1), TimeTag::new(7, 0), TimeTag::new(8, 1)],
        )
        .unwrap();
        let d = DetectorModel {
            efficiency: 0.0,
            ..DetectorModel::IDEAL
        };
        let out = detect(&s, &d, 0, 1).unwrap();
        assert_eq!(out.channel_times(1), vec![5, 8]);
        assert_eq!(out.count(0), 0);
    }

    #[test]
    fn jitter_keeps_stream_valid_and_deterministic() {
        let s = poisson_stream(10_000, 10_000_000, 6);
        let d = DetectorModel {
            jitter_sigma_ps: 300.0,
            ..DetectorModel::IDEAL
        };
        let a = detect(&s, &d, 0, 4).unwrap();
        let b = detect(&s, &d, 0, 4).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
    }
}
