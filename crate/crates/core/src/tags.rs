//! Time-tag data model and the `.ptt` / CSV stream formats.
//!
//! A [`TagStream`] is an immutable, sorted list of detector clicks with its
//! acquisition metadata. Timestamps are integer picoseconds; the binary
//! format stores them in units of the stream resolution.
//!
//! Binary layout (all integers little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `PTAG`                  |
//! | 4      | 2    | version (= 1)                 |
//! | 6      | 8    | resolution_ps                 |
//! | 14     | 8    | duration_ps                   |
//! | 22     | 1    | channel_count                 |
//! | 23     | 7    | reserved, zero                |
//! | 30     | 9·n  | records: u64 ticks, u8 channel|

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PTAG";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 30;
pub const RECORD_LEN: usize = 9;
pub const CSV_HEADER: &str = "t_ps,channel";

/// A single detector click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeTag {
    /// Picoseconds since acquisition start.
    pub t: u64,
    pub channel: u8,
}

impl TimeTag {
    pub fn new(t: u64, channel: u8) -> Self {
        TimeTag { t, channel }
    }
}

/// Sorted detection events of one acquisition.
///
/// The declared channel set is `0..channel_count`, which is what the binary
/// header can express.
#[derive(Debug, Clone, PartialEq)]
pub struct TagStream {
    resolution_ps: u64,
    duration_ps: u64,
    channel_count: u8,
    tags: Vec<TimeTag>,
    provenance: String,
}

impl TagStream {
    pub fn empty(resolution_ps: u64, duration_ps: u64, channel_count: u8) -> Result<Self> {
        Self::new(resolution_ps, duration_ps, channel_count, Vec::new())
    }

    /// Builds a stream from tags that must already be sorted by `(t, channel)`.
    pub fn new(
        resolution_ps: u64,
        duration_ps: u64,
        channel_count: u8,
        tags: Vec<TimeTag>,
    ) -> Result<Self> {
        let stream = TagStream {
            resolution_ps,
            duration_ps,
            channel_count,
            tags,
            provenance: String::new(),
        };
        stream.validate()?;
        Ok(stream)
    }

    /// Stable-sorts `tags` by `(t, channel)` before validating.
    pub fn from_unsorted(
        resolution_ps: u64,
        duration_ps: u64,
        channel_count: u8,
        mut tags: Vec<TimeTag>,
    ) -> Result<Self> {
        tags.sort_by_key(|tag| (tag.t, tag.channel));
        Self::new(resolution_ps, duration_ps, channel_count, tags)
    }

    /// Internal constructor for transforms that preserve every invariant.
    pub(crate) fn from_parts_unchecked(
        resolution_ps: u64,
        duration_ps: u64,
        channel_count: u8,
        tags: Vec<TimeTag>,
        provenance: String,
    ) -> Self {
        let stream = TagStream {
            resolution_ps,
            duration_ps,
            channel_count,
            tags,
            provenance,
        };
        debug_assert!(stream.validate().is_ok());
        stream
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution_ps == 0 {
            return Err(Error::param("resolution_ps", "must be positive"));
        }
        if self.duration_ps == 0 {
            return Err(Error::param("duration_ps", "must be positive"));
        }
        let mut prev: Option<(u64, u8)> = None;
        for (index, tag) in self.tags.iter().enumerate() {
            if tag.t >= self.duration_ps {
                return Err(Error::TagBeyondDuration {
                    index,
                    t: tag.t,
                    duration: self.duration_ps,
                });
            }
            if tag.channel >= self.channel_count {
                return Err(Error::UnknownChannel {
                    index,
                    channel: tag.channel,
                    count: self.channel_count,
                });
            }
            if tag.t % self.resolution_ps != 0 {
                return Err(Error::OffGrid {
                    index,
                    t: tag.t,
                    resolution: self.resolution_ps,
                });
            }
            let key = (tag.t, tag.channel);
            if prev.is_some_and(|p| p > key) {
                return Err(Error::Unsorted(index));
            }
            prev = Some(key);
        }
        Ok(())
    }

    pub fn resolution_ps(&self) -> u64 {
        self.resolution_ps
    }

    pub fn duration_ps(&self) -> u64 {
        self.duration_ps
    }

    pub fn channel_count(&self) -> u8 {
        self.channel_count
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn into_tags(self) -> Vec<TimeTag> {
        self.tags
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn count(&self, channel: u8) -> usize {
        self.tags
            .iter()
            .filter(|tag| tag.channel == channel)
            .count()
    }

    /// Sorted timestamps of one channel.
    pub fn channel_times(&self, channel: u8) -> Vec<u64> {
        self.tags
            .iter()
            .filter(|tag| tag.channel == channel)
            .map(|tag| tag.t)
            .collect()
    }

    /// Moves every tag onto `channel`, widening the channel set if needed.
    pub fn relabel(self, channel: u8) -> Result<Self> {
        let count = self.channel_count.max(
            channel
                .checked_add(1)
                .ok_or_else(|| Error::param("channel", "255 is reserved"))?,
        );
        let tags = self
            .tags
            .into_iter()
            .map(|tag| TimeTag::new(tag.t, channel))
            .collect();
        // Times are unchanged and all channels are now equal, so order holds.
        Ok(Self::from_parts_unchecked(
            self.resolution_ps,
            self.duration_ps,
            count,
            tags,
            self.provenance,
        ))
    }
}

/// Multiset union of two streams, sorted; `a` wins ties on equal `(t, channel)`.
pub fn merge(a: &TagStream, b: &TagStream) -> Result<TagStream> {
    if a.resolution_ps != b.resolution_ps {
        return Err(Error::ResolutionMismatch(a.resolution_ps, b.resolution_ps));
    }
    let mut tags = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.tags.len() && j < b.tags.len() {
        let (ta, tb) = (a.tags[i], b.tags[j]);
        if (tb.t, tb.channel) < (ta.t, ta.channel) {
            tags.push(tb);
            j += 1;
        } else {
            tags.push(ta);
            i += 1;
        }
    }
    tags.extend_from_slice(&a.tags[i..]);
    tags.extend_from_slice(&b.tags[j..]);
    let provenance = match (a.provenance.is_empty(), b.provenance.is_empty()) {
        (true, _) => b.provenance.clone(),
        (_, true) => a.provenance.clone(),
        _ => format!("{}; {}", a.provenance, b.provenance),
    };
    Ok(TagStream::from_parts_unchecked(
        a.resolution_ps,
        a.duration_ps.max(b.duration_ps),
        a.channel_count.max(b.channel_count),
        tags,
        provenance,
    ))
}

pub fn encode_stream(stream: &TagStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&stream.resolution_ps.to_le_bytes());
    out.extend_from_slice(&stream.duration_ps.to_le_bytes());
    out.push(stream.channel_count);
    out.extend_from_slice(&[0u8; 7]);
    for tag in &stream.tags {
        out.extend_from_slice(&(tag.t / stream.resolution_ps).to_le_bytes());
        out.push(tag.channel);
    }
    out
}

pub fn write_stream<W: Write>(stream: &TagStream, sink: W) -> Result<()> {
    let mut sink = BufWriter::new(sink);
    sink.write_all(&encode_stream(stream))?;
    sink.flush()?;
    Ok(())
}

pub fn decode_stream(bytes: &[u8]) -> Result<TagStream> {
    if bytes.len() < 4 {
        return Err(Error::Truncated(bytes.len()));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(bytes.len()));
    }
    let u64_at = |off: usize| u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let resolution_ps = u64_at(6);
    let duration_ps = u64_at(14);
    let channel_count = bytes[22];
    if bytes[23..HEADER_LEN].iter().any(|&b| b != 0) {
        return Err(Error::NonZeroReserved);
    }
    let payload = &bytes[HEADER_LEN..];
    if !payload.len().is_multiple_of(RECORD_LEN) {
        let whole = payload.len() / RECORD_LEN;
        return Err(Error::Truncated(HEADER_LEN + whole * RECORD_LEN));
    }
    if resolution_ps == 0 {
        return Err(Error::param("resolution_ps", "must be positive"));
    }
    let mut tags = Vec::with_capacity(payload.len() / RECORD_LEN);
    let mut prev: Option<(u64, u8)> = None;
    for (index, record) in payload.chunks_exact(RECORD_LEN).enumerate() {
        let ticks = u64::from_le_bytes(record[..8].try_into().unwrap());
        let channel = record[8];
        let t = ticks
            .checked_mul(resolution_ps)
            .ok_or(Error::TimestampOverflow)?;
        if prev.is_some_and(|p| p > (t, channel)) {
            return Err(Error::Unsorted(index));
        }
        prev = Some((t, channel));
        tags.push(TimeTag::new(t, channel));
    }
    TagStream::new(resolution_ps, duration_ps, channel_count, tags)
}

pub fn read_stream<R: Read>(mut source: R) -> Result<TagStream> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_stream(&bytes)
}

pub fn write_stream_file(stream: &TagStream, path: impl AsRef<Path>) -> Result<()> {
    write_stream(stream, File::create(path)?)
}

pub fn read_stream_file(path: impl AsRef<Path>) -> Result<TagStream> {
    read_stream(File::open(path)?)
}

pub fn write_stream_csv<W: Write>(stream: &TagStream, sink: W) -> Result<()> {
    let mut sink = BufWriter::new(sink);
    writeln!(sink, "{CSV_HEADER}")?;
    for tag in &stream.tags {
        writeln!(sink, "{},{}", tag.t, tag.channel)?;
    }
    sink.flush()?;
    Ok(())
}

/// Reads the CSV form. The CSV carries no header metadata, so the resolution
/// is 1 ps, the channel count is one past the largest channel seen and the
/// duration defaults to one past the last timestamp.
pub fn read_stream_csv<R: Read>(source: R, duration_ps: Option<u64>) -> Result<TagStream> {
    let reader = BufReader::new(source);
    let mut tags = Vec::new();
    let mut lines = reader.lines();
    let header = lines.next().transpose()?;
    match header {
        Some(line) if line.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::Csv {
                line: 1,
                reason: format!("expected header `{CSV_HEADER}`"),
            })
        }
    }
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| Error::Csv {
            line: line_no,
            reason: reason.to_string(),
        };
        let (t, channel) = line
            .trim()
            .split_once(',')
            .ok_or_else(|| bad("expected two fields"))?;
        let t: u64 = t.trim().parse().map_err(|_| bad("bad timestamp"))?;
        let channel: u8 = channel.trim().parse().map_err(|_| bad("bad channel"))?;
        tags.push(TimeTag::new(t, channel));
    }
    let channel_count = tags
        .iter()
        .map(|tag| tag.channel)
        .max()
        .map_or(1, |c| c.saturating_add(1));
    let duration_ps = match duration_ps {
        Some(d) => d,
        None => tags.iter().map(|tag| tag.t).max().map_or(1, |t| t + 1),
    };
    TagStream::new(1, duration_ps, channel_count, tags)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(tags: &[(u64, u8)]) -> TagStream {
        let tags = tags.iter().map(|&(t, c)| TimeTag::new(t, c)).collect();
        TagStream::new(1, 1_000, 4, tags).unwrap()
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let s = stream(&[(1, 0), (5, 2), (5, 3)]);
        let e = TagStream::empty(1, 1_000, 4).unwrap();
        assert_eq!(merge(&s, &e).unwrap(), s);
        assert_eq!(merge(&e, &s).unwrap(), s);
    }

    #[test]
    fn merge_orders_by_time() {
        let a = stream(&[(10, 0)]);
        let b = stream(&[(5, 1)]);
        let m = merge(&a, &b).unwrap();
        assert_eq!(m.tags(), &[TimeTag::new(5, 1), TimeTag::new(10, 0)]);
    }

    #[test]
    fn merge_rejects_resolution_mismatch() {
        let a = TagStream::empty(1, 100, 1).unwrap();
        let b = TagStream::empty(2, 100, 1).unwrap();
        assert!(matches!(
            merge(&a, &b),
            Err(Error::ResolutionMismatch(1, 2))
        ));
    }

    #[test]
    fn merge_takes_longest_duration() {
        let a = TagStream::empty(1, 100, 1).unwrap();
        let b = TagStream::empty(1, 300, 2).unwrap();
        let m = merge(&a, &b).unwrap();
        assert_eq!(m.duration_ps(), 300);
        assert_eq!(m.channel_count(), 2);
    }

    #[test]
    fn empty_stream_round_trips_bit_exact() {
        let s = TagStream::empty(4, 1_000_000, 4).unwrap();
        let bytes = encode_stream(&s);
        assert_eq!(bytes.len(), HEADER_LEN);
        let back = decode_stream(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode_stream(&back), bytes);
    }

    #[test]
    fn header_layout() {
        let s = TagStream::new(2, 1_000, 3, vec![TimeTag::new(4, 2)]).unwrap();
        let bytes = encode_stream(&s);
        assert_eq!(&bytes[..4], b"PTAG");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..14], &2u64.to_le_bytes());
        assert_eq!(&bytes[14..22], &1_000u64.to_le_bytes());
        assert_eq!(bytes[22], 3);
        assert_eq!(&bytes[23..30], &[0; 7]);
        assert_eq!(&bytes[30..38], &2u64.to_le_bytes());
        assert_eq!(bytes[38], 2);
    }

    #[test]
    fn decode_errors_are_distinct() {
        let s = stream(&[(1, 0), (7, 1)]);
        let good = encode_stream(&s);

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_stream(&bad_magic), Err(Error::BadMagic)));

        let truncated = &good[..good.len() - 3];
        assert!(matches!(decode_stream(truncated), Err(Error::Truncated(_))));
        assert!(matches!(
            decode_stream(&good[..12]),
            Err(Error::Truncated(_))
        ));

        let mut unsorted = good.clone();
        unsorted[HEADER_LEN..HEADER_LEN + 8].copy_from_slice(&9u64.to_le_bytes());
        assert!(matches!(decode_stream(&unsorted), Err(Error::Unsorted(1))));

        let mut beyond = good.clone();
        beyond[HEADER_LEN + 9..HEADER_LEN + 17].copy_from_slice(&1_000u64.to_le_bytes());
        assert!(matches!(
            decode_stream(&beyond),
            Err(Error::TagBeyondDuration {
                index: 1,
                t: 1_000,
                ..
            })
        ));

        let mut reserved = good.clone();
        reserved[25] = 1;
        assert!(matches!(
            decode_stream(&reserved),
            Err(Error::NonZeroReserved)
        ));

        let mut channel = good;
        channel[HEADER_LEN + 8] = 9;
        assert!(matches!(
            decode_stream(&channel),
            Err(Error::UnknownChannel { .. })
        ));
    }

    #[test]
    fn equal_timestamps_sort_by_channel() {
        let s = TagStream::from_unsorted(
            1,
            100,
            4,
            vec![TimeTag::new(3, 2), TimeTag::new(3, 0), TimeTag::new(1, 3)],
        )
        .unwrap();
        assert_eq!(
            s.tags(),
            &[TimeTag::new(1, 3), TimeTag::new(3, 0), TimeTag::new(3, 2)]
        );
        assert!(matches!(
            TagStream::new(1, 100, 4, vec![TimeTag::new(3, 2), TimeTag::new(3, 0)]),
            Err(Error::Unsorted(1))
        ));
    }

    #[test]
    fn off_grid_timestamps_rejected() {
        assert!(matches!(
            TagStream::new(10, 100, 1, vec![TimeTag::new(15, 0)]),
            Err(Error::OffGrid { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let s = stream(&[(1, 0), (5, 2), (5, 3)]);
        let mut buf = Vec::new();
        write_stream_csv(&s, &mut buf).unwrap();
        assert!(buf.starts_with(b"t_ps,channel\n1,0\n"));
        let back = read_stream_csv(buf.as_slice(), Some(1_000)).unwrap();
        assert_eq!(back.tags(), s.tags());
        assert!(matches!(
            read_stream_csv("t,c\n".as_bytes(), None),
            Err(Error::Csv { line: 1, .. })
        ));
    }

    #[test]
    fn relabel_moves_all_tags() {
        let s = stream(&[(1, 0), (5, 1)]).relabel(6).unwrap();
        assert_eq!(s.channel_count(), 7);
        assert!(s.tags().iter().all(|t| t.channel == 6));
    }
}
