//! Pairwise-delay histograms and their g²(τ) normalisation.
//!
//! All ordered pairs (t_a, t_b) with t_b − t_a inside the window are counted
//! (multi-start, multi-stop). Bin k covers the half-open lag interval
//! `[tau_min + k·w, tau_min + (k + 1)·w)`.
//!
//! The estimator is g2[k] = counts[k] · T_k / (n_a · n_b · w), where T is the
//! common acquisition time and T_k = T² / (T − |m_k|) accounts for the
//! reduced overlap at lag m_k, the mean integer lag of bin k.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tags::TagStream;

pub const CSV_HEADER: &str = "tau_ps,counts,g2,g2_err";

/// Tags of `a` per parallel work unit.
const SEGMENT: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelogramSpec {
    pub bin_width_ps: u64,
    pub tau_min_ps: i64,
    pub tau_max_ps: i64,
}

impl CorrelogramSpec {
    pub fn new(bin_width_ps: u64, tau_min_ps: i64, tau_max_ps: i64) -> Result<Self> {
        let spec = CorrelogramSpec {
            bin_width_ps,
            tau_min_ps,
            tau_max_ps,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// ±`half_window_ps` with bins of `bin_width_ps`.
    pub fn symmetric(bin_width_ps: u64, half_window_ps: i64) -> Result<Self> {
        Self::new(bin_width_ps, -half_window_ps, half_window_ps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bin_width_ps == 0 || self.bin_width_ps > i64::MAX as u64 {
            return Err(Error::param("bin_width_ps", "must be positive"));
        }
        if self.tau_min_ps >= self.tau_max_ps {
            return Err(Error::param("tau_max_ps", "must exceed tau_min_ps"));
        }
        let span = self
            .tau_max_ps
            .checked_sub(self.tau_min_ps)
            .ok_or(Error::TimestampOverflow)?;
        if !(span as u64).is_multiple_of(self.bin_width_ps) {
            return Err(Error::param(
                "bin_width_ps",
                "window length must be a multiple of the bin width",
            ));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        ((self.tau_max_ps - self.tau_min_ps) as u64 / self.bin_width_ps) as usize
    }

    pub fn bin_lo(&self, k: usize) -> i64 {
        self.tau_min_ps + (k as u64 * self.bin_width_ps) as i64
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        self.bin_lo(k) as f64 + 0.5 * self.bin_width_ps as f64
    }

    /// Mean of the integer lags in bin k.
    fn bin_mean_lag(&self, k: usize) -> f64 {
        let lo = self.bin_lo(k);
        let hi = lo + self.bin_width_ps as i64;
        (lo + hi - 1) as f64 * 0.5
    }

    pub fn bin_of(&self, lag: i64) -> Option<usize> {
        if lag < self.tau_min_ps || lag >= self.tau_max_ps {
            return None;
        }
        Some(((lag - self.tau_min_ps) as u64 / self.bin_width_ps) as usize)
    }

    /// The spec whose bin k holds exactly the negated integer lags of bin
    /// `n − 1 − k` of `self`.
    pub fn mirrored(&self) -> Self {
        CorrelogramSpec {
            bin_width_ps: self.bin_width_ps,
            tau_min_ps: 1 - self.tau_max_ps,
            tau_max_ps: 1 - self.tau_min_ps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelogramMeta {
    pub n_a: u64,
    pub n_b: u64,
    pub duration_ps: u64,
    pub channels: (u8, u8),
    /// One of the inputs had no tags; every bin is zero.
    pub empty_input: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correlogram {
    pub spec: CorrelogramSpec,
    pub counts: Vec<u64>,
    pub g2: Vec<f64>,
    /// g2 / √counts, zero for empty bins.
    pub g2_err: Vec<f64>,
    /// g2 contributed by one coincidence in each bin (1 / expected counts
    /// at g² = 1).
    pub norm: Vec<f64>,
    /// `None` when loaded from CSV.
    pub meta: Option<CorrelogramMeta>,
}

impl Correlogram {
    fn from_counts(spec: CorrelogramSpec, counts: Vec<u64>, meta: CorrelogramMeta) -> Self {
        let t = meta.duration_ps as f64;
        let denom = meta.n_a as f64 * meta.n_b as f64 * spec.bin_width_ps as f64;
        let norm: Vec<f64> = (0..spec.n_bins())
            .map(|k| {
                let overlap = t - spec.bin_mean_lag(k).abs();
                if denom > 0.0 && overlap > 0.0 {
                    (t * t / overlap) / denom
                } else {
                    0.0
                }
            })
            .collect();
        let g2: Vec<f64> = counts
            .iter()
            .zip(&norm)
            .map(|(&c, &n)| c as f64 * n)
            .collect();
        let g2_err = counts
            .iter()
            .zip(&g2)
            .map(|(&c, &g)| if c > 0 { g / (c as f64).sqrt() } else { 0.0 })
            .collect();
        Correlogram {
            spec,
            counts,
            g2,
            g2_err,
            norm,
            meta: Some(meta),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_bins())
            .map(|k| self.spec.bin_center(k))
            .collect()
    }

    pub fn is_empty_bin(&self, k: usize) -> bool {
        self.counts[k] == 0
    }

    /// Coincidences expected in bin k for uncorrelated streams.
    pub fn expected_uncorrelated(&self, k: usize) -> f64 {
        if self.norm[k] > 0.0 {
            1.0 / self.norm[k]
        } else {
            0.0
        }
    }

    /// Checks g2[k] = counts[k] · norm[k] and the error definition.
    pub fn check_normalization(&self) -> bool {
        (0..self.n_bins()).all(|k| {
            let g = self.counts[k] as f64 * self.norm[k];
            let e = if self.counts[k] > 0 {
                g / (self.counts[k] as f64).sqrt()
            } else {
                0.0
            };
            self.g2[k] == g && self.g2_err[k] == e
        })
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut sink = BufWriter::new(sink);
        writeln!(sink, "{CSV_HEADER}")?;
        for k in 0..self.n_bins() {
            writeln!(
                sink,
                "{},{},{},{}",
                self.spec.bin_center(k),
                self.counts[k],
                self.g2[k],
                self.g2_err[k]
            )?;
        }
        sink.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    /// Parses the CSV form. The bin grid is recovered from the centers;
    /// `norm` is recovered from non-empty bins and copied into empty ones
    /// from the nearest non-empty neighbour.
    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let reader = BufReader::new(source);
        let mut rows: Vec<(f64, u64, f64, f64)> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let bad = |reason: &str| Error::Csv {
                line: i + 1,
                reason: reason.to_string(),
            };
            if i == 0 {
                if line.trim() != CSV_HEADER {
                    return Err(bad("expected header `tau_ps,counts,g2,g2_err`"));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != 4 {
                return Err(bad("expected four fields"));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("bad number"));
            let counts = fields[1]
                .trim()
                .parse::<u64>()
                .map_err(|_| bad("bad count"))?;
            rows.push((num(fields[0])?, counts, num(fields[2])?, num(fields[3])?));
        }
        if rows.len() < 2 {
            return Err(Error::Csv {
                line: rows.len() + 1,
                reason: "at least two bins are needed to recover the bin grid".into(),
            });
        }
        let width = rows[1].0 - rows[0].0;
        if !(width >= 1.0 && width.fract() == 0.0) {
            return Err(Error::Csv {
                line: 3,
                reason: "bin centers are not on an integer grid".into(),
            });
        }
        let tau_min = (rows[0].0 - width / 2.0).round() as i64;
        let spec = CorrelogramSpec::new(
            width as u64,
            tau_min,
            tau_min + (width as i64) * rows.len() as i64,
        )?;
        for (k, row) in rows.iter().enumerate() {
            if (row.0 - spec.bin_center(k)).abs() > 1e-6 * width.max(1.0) {
                return Err(Error::Csv {
                    line: k + 2,
                    reason: "bin centers are not evenly spaced".into(),
                });
            }
        }
        let counts: Vec<u64> = rows.iter().map(|r| r.1).collect();
        let g2: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let g2_err: Vec<f64> = rows.iter().map(|r| r.3).collect();
        let mut norm: Vec<Option<f64>> = rows
            .iter()
            .map(|r| (r.1 > 0).then(|| r.2 / r.1 as f64))
            .collect();
        let known: Vec<usize> = (0..norm.len()).filter(|&k| norm[k].is_some()).collect();
        if !known.is_empty() {
            for k in 0..norm.len() {
                if norm[k].is_none() {
                    let nearest = *known
                        .iter()
                        .min_by_key(|&&j| (j as i64 - k as i64).unsigned_abs())
                        .unwrap();
                    norm[k] = norm[nearest];
                }
            }
        }
        Ok(Correlogram {
            spec,
            counts,
            g2,
            g2_err,
            norm: norm.into_iter().map(|n| n.unwrap_or(0.0)).collect(),
            meta: None,
        })
    }

    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(File::open(path)?)
    }
}

/// One detector channel of a stream.
#[derive(Debug, Clone, Copy)]
pub struct Channel<'a> {
    pub stream: &'a TagStream,
    pub channel: u8,
}

impl<'a> Channel<'a> {
    pub fn new(stream: &'a TagStream, channel: u8) -> Self {
        Channel { stream, channel }
    }

    /// Both refer to the very same tags, so each tag would pair with itself.
    fn is_same(&self, other: &Channel<'_>) -> bool {
        std::ptr::eq(self.stream, other.stream) && self.channel == other.channel
    }
}

struct Prepared {
    a: Vec<i64>,
    b: Vec<i64>,
    exclude_self: bool,
    meta: CorrelogramMeta,
}

fn prepare(a: Channel<'_>, b: Channel<'_>, spec: &CorrelogramSpec) -> Result<Prepared> {
    spec.validate()?;
    if a.stream.resolution_ps() != b.stream.resolution_ps() {
        return Err(Error::ResolutionMismatch(
            a.stream.resolution_ps(),
            b.stream.resolution_ps(),
        ));
    }
    let duration = a.stream.duration_ps().min(b.stream.duration_ps());
    let limit = i64::MAX as u64 / 4;
    if a.stream.duration_ps() > limit || b.stream.duration_ps() > limit {
        return Err(Error::param(
            "duration_ps",
            "too long for signed lag arithmetic",
        ));
    }
    let times = |c: &Channel<'_>| -> Vec<i64> {
        c.stream
            .tags()
            .iter()
            .filter(|tag| tag.channel == c.channel)
            .map(|tag| tag.t as i64)
            .collect()
    };
    let ta = times(&a);
    let tb = times(&b);
    let meta = CorrelogramMeta {
        n_a: ta.len() as u64,
        n_b: tb.len() as u64,
        duration_ps: duration,
        channels: (a.channel, b.channel),
        empty_input: ta.is_empty() || tb.is_empty(),
    };
    Ok(Prepared {
        exclude_self: a.is_same(&b),
        a: ta,
        b: tb,
        meta,
    })
}

/// Sliding two-pointer sweep for `a[offset..offset + a.len()]`.
fn sweep(
    a: &[i64],
    offset: usize,
    b: &[i64],
    exclude_self: bool,
    spec: &CorrelogramSpec,
) -> Vec<u64> {
    let mut hist = vec![0u64; spec.n_bins()];
    let Some(&first) = a.first() else {
        return hist;
    };
    let w = spec.bin_width_ps as i64;
    let mut lo = b.partition_point(|&t| t < first + spec.tau_min_ps);
    for (i, &ta) in a.iter().enumerate() {
        let start = ta + spec.tau_min_ps;
        while lo < b.len() && b[lo] < start {
            lo += 1;
        }
        let end = ta + spec.tau_max_ps;
        let mut j = lo;
        while j < b.len() && b[j] < end {
            if !(exclude_self && j == offset + i) {
                hist[((b[j] - start) / w) as usize] += 1;
            }
            j += 1;
        }
    }
    hist
}

/// g²(τ) between two channels, τ = t_b − t_a.
///
/// When `a` and `b` are the same channel of the same stream, a tag is never
/// paired with itself. Work is split into fixed segments of `a` whose
/// integer histograms are summed, so the result is identical for any thread
/// count.
pub fn correlate(a: Channel<'_>, b: Channel<'_>, spec: &CorrelogramSpec) -> Result<Correlogram> {
    let p = prepare(a, b, spec)?;
    let n = spec.n_bins();
    let counts =
        p.a.par_chunks(SEGMENT)
            .enumerate()
            .map(|(s, seg)| sweep(seg, s * SEGMENT, &p.b, p.exclude_self, spec))
            .reduce(
                || vec![0u64; n],
                |mut acc, h| {
                    acc.iter_mut().zip(h).for_each(|(x, y)| *x += y);
                    acc
                },
            );
    Ok(Correlogram::from_counts(*spec, counts, p.meta))
}

/// Literal O(N·M) double loop over all pairs; the oracle for [`correlate`].
pub fn correlate_brute(
    a: Channel<'_>,
    b: Channel<'_>,
    spec: &CorrelogramSpec,
) -> Result<Correlogram> {
    let p = prepare(a, b, spec)?;
    let mut counts = vec![0u64; spec.n_bins()];
    for (i, &ta) in p.a.iter().enumerate() {
        for (j, &tb) in p.b.iter().enumerate() {
            if p.exclude_self && i == j {
                continue;
            }
            if let Some(k) = spec.bin_of(tb - ta) {
                counts[k] += 1;
            }
        }
    }
    Ok(Correlogram::from_counts(*spec, counts, p.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tags::TimeTag;

    const NS: i64 = 1_000;

    fn stream(times: &[(u64, u8)], duration: u64) -> TagStream {
        let tags = times.iter().map(|&(t, c)| TimeTag::new(t, c)).collect();
        TagStream::from_unsorted(1, duration, 2, tags).unwrap()
    }

    #[test]
    fn single_tag_self_pair_is_excluded() {
        let s = stream(&[(0, 0)], 1_000);
        let spec = CorrelogramSpec::symmetric(10, 100).unwrap();
        let c = correlate(Channel::new(&s, 0), Channel::new(&s, 0), &spec).unwrap();
        assert!(c.counts.iter().all(|&x| x == 0));
        // A copy is a different detector and does pair.
        let copy = s.clone();
        let c = correlate(Channel::new(&s, 0), Channel::new(&copy, 0), &spec).unwrap();
        assert_eq!(c.counts.iter().sum::<u64>(), 1);
    }

    #[test]
    fn golden_small_table() {
        // a = {0, 10, 20} ns, b = {5, 15} ns, 10 ns bins over [−20, 20) ns.
        // Lags b − a: 5, 15, −5, 5, −15, −5 ns.
        let s = stream(
            &[(0, 0), (10_000, 0), (20_000, 0), (5_000, 1), (15_000, 1)],
            100_000,
        );
        let spec = CorrelogramSpec::symmetric(10 * NS as u64, 20 * NS).unwrap();
        let c = correlate(Channel::new(&s, 0), Channel::new(&s, 1), &spec).unwrap();
        assert_eq!(c.counts, vec![1, 2, 2, 1]);
        let brute = correlate_brute(Channel::new(&s, 0), Channel::new(&s, 1), &spec).unwrap();
        assert_eq!(c, brute);
    }

    #[test]
    fn bins_are_half_open() {
        let s = stream(&[(100, 0), (110, 1), (120, 1)], 1_000);
        let spec = CorrelogramSpec::new(10, 0, 20).unwrap();
        let c = correlate(Channel::new(&s, 0), Channel::new(&s, 1), &spec).unwrap();
        // Lag 10 lands in [10, 20), lag 20 is outside.
        assert_eq!(c.counts, vec![0, 1]);
    }

    #[test]
    fn empty_input_gives_flagged_zeros() {
        let s = stream(&[(5, 0)], 1_000);
        let spec = CorrelogramSpec::symmetric(10, 50).unwrap();
        let c = correlate(Channel::new(&s, 0), Channel::new(&s, 1), &spec).unwrap();
        assert!(c.meta.as_ref().unwrap().empty_input);
        assert!(c.g2.iter().all(|&g| g == 0.0));
        assert!(c.check_normalization());
    }

    #[test]
    fn resolution_mismatch_rejected() {
        let a = TagStream::empty(1, 100, 1).unwrap();
        let b = TagStream::empty(2, 100, 1).unwrap();
        let spec = CorrelogramSpec::symmetric(10, 50).unwrap();
        assert!(matches!(
            correlate(Channel::new(&a, 0), Channel::new(&b, 0), &spec),
            Err(Error::ResolutionMismatch(1, 2))
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(CorrelogramSpec::new(0, -10, 10).is_err());
        assert!(CorrelogramSpec::new(3, -10, 10).is_err());
        assert!(CorrelogramSpec::new(5, 10, 10).is_err());
        let s = CorrelogramSpec::new(5, -10, 10).unwrap();
        assert_eq!(s.n_bins(), 4);
        assert_eq!(s.bin_of(-10), Some(0));
        assert_eq!(s.bin_of(9), Some(3));
        assert_eq!(s.bin_of(10), None);
    }

    #[test]
    fn normalization_identity_and_csv_round_trip() {
        let s = stream(&[(0, 0), (7, 1), (30, 0), (33, 1), (90, 1)], 1_000);
        let spec = CorrelogramSpec::symmetric(4, 40).unwrap();
        let c = correlate(Channel::new(&s, 0), Channel::new(&s, 1), &spec).unwrap();
        assert!(c.check_normalization());
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"tau_ps,counts,g2,g2_err\n-38,"));
        let back = Correlogram::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.spec, c.spec);
        assert_eq!(back.counts, c.counts);
        assert_eq!(back.g2, c.g2);
        assert_eq!(back.g2_err, c.g2_err);
    }
}
