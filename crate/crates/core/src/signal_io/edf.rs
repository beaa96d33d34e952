//! Minimal European Data Format reader (signals only, no EDF+ annotations).

use std::path::Path;

use super::{Result, SignalIoError};

const FIXED_HEADER_LEN: usize = 256;
const PER_SIGNAL_HEADER_LEN: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct EdfSignalHeader {
    pub label: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub samples_per_record: usize,
}

impl EdfSignalHeader {
    fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min) as f64
    }

    fn to_physical(&self, digital: i16) -> f64 {
        (digital as f64 - self.digital_min as f64) * self.gain() + self.physical_min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub header_bytes: usize,
    pub num_records: usize,
    pub record_duration_secs: f64,
    pub signals: Vec<EdfSignalHeader>,
}

impl EdfHeader {
    fn record_len_samples(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record).sum()
    }

    /// Integral sampling rate of signal `i`.
    pub fn sample_rate(&self, i: usize) -> Option<u32> {
        let rate = self.signals[i].samples_per_record as f64 / self.record_duration_secs;
        let rounded = rate.round();
        ((rate - rounded).abs() < 1e-9 && rounded > 0.0).then_some(rounded as u32)
    }
}

fn field<'a>(bytes: &'a [u8], start: usize, len: usize, path: &Path, what: &str) -> Result<&'a str> {
    let raw = bytes
        .get(start..start + len)
        .ok_or_else(|| malformed(path, format!("truncated while reading {what}")))?;
    std::str::from_utf8(raw)
        .map(str::trim)
        .map_err(|_| malformed(path, format!("{what} is not ASCII")))
}

fn parse_num<T: std::str::FromStr>(s: &str, path: &Path, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| malformed(path, format!("{what} {s:?} is not a number")))
}

fn malformed(path: &Path, reason: String) -> SignalIoError {
    SignalIoError::MalformedHeader {
        path: path.to_path_buf(),
        reason,
    }
}

pub fn parse_header(bytes: &[u8], path: &Path) -> Result<EdfHeader> {
    if bytes.len() < FIXED_HEADER_LEN {
        return Err(malformed(path, "file shorter than the fixed EDF header".into()));
    }
    let version = field(bytes, 0, 8, path, "version")?;
    if version != "0" {
        return Err(malformed(path, format!("unsupported version {version:?}")));
    }
    let header_bytes: usize = parse_num(field(bytes, 184, 8, path, "header size")?, path, "header size")?;
    let num_records: i64 = parse_num(field(bytes, 236, 8, path, "record count")?, path, "record count")?;
    let record_duration_secs: f64 =
        parse_num(field(bytes, 244, 8, path, "record duration")?, path, "record duration")?;
    let ns: usize = parse_num(field(bytes, 252, 4, path, "signal count")?, path, "signal count")?;

    if header_bytes != FIXED_HEADER_LEN + ns * PER_SIGNAL_HEADER_LEN {
        return Err(malformed(
            path,
            format!("header size {header_bytes} inconsistent with {ns} signals"),
        ));
    }
    if num_records < 0 {
        return Err(malformed(path, "record count unknown (-1)".into()));
    }
    if !(record_duration_secs > 0.0) {
        return Err(malformed(path, "record duration must be positive".into()));
    }

    // Per-signal fields are stored column-wise: all labels, then all
    // transducers, and so on.
    let col = |offset: usize, width: usize, i: usize| FIXED_HEADER_LEN + offset * ns + i * width;
    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let label = field(bytes, col(0, 16, i), 16, path, "label")?.to_string();
        let physical_dimension = field(bytes, col(96, 8, i), 8, path, "physical dimension")?.to_string();
        let physical_min = parse_num(field(bytes, col(104, 8, i), 8, path, "physical min")?, path, "physical min")?;
        let physical_max = parse_num(field(bytes, col(112, 8, i), 8, path, "physical max")?, path, "physical max")?;
        let digital_min = parse_num(field(bytes, col(120, 8, i), 8, path, "digital min")?, path, "digital min")?;
        let digital_max = parse_num(field(bytes, col(128, 8, i), 8, path, "digital max")?, path, "digital max")?;
        let samples_per_record = parse_num(
            field(bytes, col(216, 8, i), 8, path, "samples per record")?,
            path,
            "samples per record",
        )?;
        if digital_max <= digital_min {
            return Err(malformed(path, format!("signal {label:?}: digital max <= min")));
        }
        signals.push(EdfSignalHeader {
            label,
            physical_dimension,
            physical_min,
            physical_max,
            digital_min,
            digital_max,
            samples_per_record,
        });
    }

    Ok(EdfHeader {
        header_bytes,
        num_records: num_records as usize,
        record_duration_secs,
        signals,
    })
}

/// Extracts one channel in physical units, returning `(samples, rate_hz)`.
pub(super) fn read_channel(bytes: &[u8], path: &Path, channel: &str) -> Result<(Vec<f64>, u32)> {
    let header = parse_header(bytes, path)?;
    let idx = header
        .signals
        .iter()
        .position(|s| s.label == channel)
        .ok_or_else(|| SignalIoError::ChannelAbsent {
            requested: channel.to_string(),
            available: header.signals.iter().map(|s| s.label.clone()).collect(),
        })?;
    let rate = header
        .sample_rate(idx)
        .ok_or_else(|| malformed(path, format!("channel {channel:?} has a non-integral sample rate")))?;

    let record_len = header.record_len_samples();
    let needed = header.header_bytes + header.num_records * record_len * 2;
    if bytes.len() < needed {
        return Err(malformed(
            path,
            format!("data section truncated: {} bytes, expected {needed}", bytes.len()),
        ));
    }

    let sig = &header.signals[idx];
    let offset_in_record: usize = header.signals[..idx].iter().map(|s| s.samples_per_record).sum();
    let mut out = Vec::with_capacity(header.num_records * sig.samples_per_record);
    for r in 0..header.num_records {
        let base = header.header_bytes + (r * record_len + offset_in_record) * 2;
        for chunk in bytes[base..base + sig.samples_per_record * 2].chunks_exact(2) {
            out.push(sig.to_physical(i16::from_le_bytes([chunk[0], chunk[1]])));
        }
    }
    Ok((out, rate))
}

/// Writes a plain EDF file with one-second records. Channels must share the
/// same length, which must be a multiple of `rate_hz`.
pub fn write_edf(channels: &[(&str, &[f64])], rate_hz: u32) -> Vec<u8> {
    let ns = channels.len();
    let n = channels.first().map_or(0, |c| c.1.len());
    let rate = rate_hz as usize;
    assert!(channels.iter().all(|c| c.1.len() == n), "channel lengths differ");
    assert!(n % rate == 0, "length must be whole seconds");
    let num_records = n / rate;

    let pad = |s: &str, w: usize| format!("{s:<w$}").into_bytes()[..w].to_vec();
    let mut out = Vec::new();
    out.extend(pad("0", 8));
    out.extend(pad("X X X X", 80));
    out.extend(pad("Startdate X X X X", 80));
    out.extend(pad("01.01.01", 8));
    out.extend(pad("00.00.00", 8));
    out.extend(pad(&(FIXED_HEADER_LEN + ns * PER_SIGNAL_HEADER_LEN).to_string(), 8));
    out.extend(pad("", 44));
    out.extend(pad(&num_records.to_string(), 8));
    out.extend(pad("1", 8));
    out.extend(pad(&ns.to_string(), 4));

    let ranges: Vec<(f64, f64)> = channels
        .iter()
        .map(|(_, x)| {
            let lo = x.iter().copied().fold(f64::INFINITY, f64::min).floor() - 1.0;
            let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil() + 1.0;
            (lo, hi)
        })
        .collect();
    let fmt_num = |v: f64| {
        let s = format!("{v}");
        if s.len() > 8 {
            format!("{v:.0}")
        } else {
            s
        }
    };
    for (label, _) in channels {
        out.extend(pad(label, 16));
    }
    for _ in channels {
        out.extend(pad("AgAgCl electrode", 80));
    }
    for _ in channels {
        out.extend(pad("uV", 8));
    }
    for (lo, _) in &ranges {
        out.extend(pad(&fmt_num(*lo), 8));
    }
    for (_, hi) in &ranges {
        out.extend(pad(&fmt_num(*hi), 8));
    }
    for _ in channels {
        out.extend(pad("-32768", 8));
    }
    for _ in channels {
        out.extend(pad("32767", 8));
    }
    for _ in channels {
        out.extend(pad("", 80));
    }
    for _ in channels {
        out.extend(pad(&rate.to_string(), 8));
    }
    for _ in channels {
        out.extend(pad("", 32));
    }

    for r in 0..num_records {
        for ((_, x), (lo, hi)) in channels.iter().zip(&ranges) {
            let gain = (hi - lo) / 65535.0;
            for &v in &x[r * rate..(r + 1) * rate] {
                let d = ((v - lo) / gain - 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend(d.to_le_bytes());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_quantization() {
        let a: Vec<f64> = (0..250).map(|i| (i as f64 * 0.1).sin() * 40.0).collect();
        let b: Vec<f64> = (0..250).map(|i| i as f64 * 0.2 - 20.0).collect();
        let bytes = write_edf(&[("C4-A1", &a), ("C3-A2", &b)], 125);
        let p = Path::new("t.edf");
        let header = parse_header(&bytes, p).unwrap();
        assert_eq!(header.num_records, 2);
        assert_eq!(header.sample_rate(1), Some(125));
        let (got, rate) = read_channel(&bytes, p, "C3-A2").unwrap();
        assert_eq!(rate, 125);
        assert_eq!(got.len(), 250);
        for (g, w) in got.iter().zip(&b) {
            assert!((g - w).abs() < 1e-3, "{g} vs {w}");
        }
    }

    #[test]
    fn truncated_data_rejected() {
        let a = vec![0.0; 125];
        let bytes = write_edf(&[("C4-A1", &a)], 125);
        let err = read_channel(&bytes[..bytes.len() - 2], Path::new("t.edf"), "C4-A1").unwrap_err();
        assert!(matches!(err, SignalIoError::MalformedHeader { .. }));
    }

    #[test]
    fn bad_version_rejected() {
        let mut bytes = write_edf(&[("C4-A1", &[0.0; 125])], 125);
        bytes[0] = b'9';
        assert!(parse_header(&bytes, Path::new("t.edf")).is_err());
    }
}
