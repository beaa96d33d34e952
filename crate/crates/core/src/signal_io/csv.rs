use std::path::Path;

use super::{Result, SignalIoError};

pub(super) struct ParsedCsv {
    pub header: Option<String>,
    pub samples: Vec<f64>,
}

/// One sample per line, with an optional non-numeric first line.
pub(super) fn parse_csv(bytes: &[u8], path: &Path) -> Result<ParsedCsv> {
    let text = std::str::from_utf8(bytes).map_err(|e| SignalIoError::MalformedHeader {
        path: path.to_path_buf(),
        reason: format!("not UTF-8: {e}"),
    })?;
    let mut header = None;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.parse::<f64>() {
            Ok(v) if v.is_finite() => samples.push(v),
            Ok(_) => {
                return Err(SignalIoError::NonFinite {
                    index: samples.len(),
                })
            }
            Err(_) if i == 0 => header = Some(line.to_string()),
            Err(_) => {
                return Err(SignalIoError::MalformedHeader {
                    path: path.to_path_buf(),
                    reason: format!("line {}: {line:?} is not a number", i + 1),
                })
            }
        }
    }
    if samples.is_empty() {
        return Err(SignalIoError::MalformedHeader {
            path: path.to_path_buf(),
            reason: "no samples".into(),
        });
    }
    Ok(ParsedCsv { header, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_optional() {
        let p = Path::new("x.csv");
        let a = parse_csv(b"1.5\n-2\n", p).unwrap();
        assert_eq!(a.header, None);
        assert_eq!(a.samples, vec![1.5, -2.0]);
        let b = parse_csv(b"C3-A2\n1.5\n-2\n", p).unwrap();
        assert_eq!(b.header.as_deref(), Some("C3-A2"));
        assert_eq!(b.samples.len(), 2);
    }

    #[test]
    fn garbage_after_header_rejected() {
        let err = parse_csv(b"1.0\nabc\n", Path::new("x.csv")).err().unwrap();
        assert!(matches!(err, SignalIoError::MalformedHeader { .. }));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            parse_csv(b"1\nNaN\n", Path::new("x.csv")),
            Err(SignalIoError::NonFinite { index: 1 })
        ));
    }
}
