use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{EvalError, Result};
use crate::signal_io::Stage;

/// Expert and model stage sequences of one night.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hypnogram {
    truth: Vec<Stage>,
    pred: Vec<Stage>,
}

// Conventional hypnogram ordering, top to bottom.
fn level(s: Stage) -> usize {
    match s {
        Stage::Wake => 0,
        Stage::Rem => 1,
        Stage::N1 => 2,
        Stage::N2 => 3,
        Stage::N3 => 4,
    }
}

const LEVELS: [Stage; 5] = [Stage::Wake, Stage::Rem, Stage::N1, Stage::N2, Stage::N3];

impl Hypnogram {
    pub fn new(truth: Vec<Stage>, pred: Vec<Stage>) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(EvalError::LengthMismatch {
                truth: truth.len(),
                pred: pred.len(),
            });
        }
        Ok(Self { truth, pred })
    }

    pub fn truth(&self) -> &[Stage] {
        &self.truth
    }

    pub fn pred(&self) -> &[Stage] {
        &self.pred
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn mismatches(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.truth[i] != self.pred[i]).collect()
    }

    /// Header `epoch_index,true,pred,match`, then one line per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch_index,true,pred,match\n");
        for (i, (t, p)) in self.truth.iter().zip(&self.pred).enumerate() {
            let _ = writeln!(out, "{i},{t},{p},{}", u8::from(t == p));
        }
        out
    }

    /// Two-lane step plot, expert on top, model below, mismatched epochs in red.
    pub fn to_svg(&self) -> String {
        const LANE_H: f64 = 120.0;
        const GAP: f64 = 40.0;
        const LEFT: f64 = 60.0;
        const TOP: f64 = 30.0;
        let n = self.len().max(1);
        let dx = (900.0 / n as f64).max(0.5);
        let width = LEFT + dx * n as f64 + 20.0;
        let height = TOP + 2.0 * LANE_H + GAP + 30.0;
        let step = LANE_H / 4.0;

        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
             font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        );
        for (lane, (title, seq)) in [("Expert", &self.truth), ("Model", &self.pred)].iter().enumerate() {
            let y0 = TOP + lane as f64 * (LANE_H + GAP);
            let _ = writeln!(svg, "<text x=\"{LEFT}\" y=\"{:.1}\">{title}</text>", y0 - 8.0);
            for s in LEVELS {
                let y = y0 + level(s) as f64 * step;
                let _ = writeln!(
                    svg,
                    "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{s}</text>",
                    LEFT - 6.0,
                    y + 4.0
                );
            }
            if lane == 1 {
                for i in self.mismatches() {
                    let x = LEFT + i as f64 * dx;
                    let _ = writeln!(
                        svg,
                        "<rect class=\"mismatch\" x=\"{x:.2}\" y=\"{:.1}\" width=\"{dx:.2}\" height=\"{LANE_H:.1}\" fill=\"red\" fill-opacity=\"0.35\"/>",
                        y0 - 4.0
                    );
                }
            }
            let mut d = String::new();
            for (i, &s) in seq.iter().enumerate() {
                let (x, y) = (LEFT + i as f64 * dx, y0 + level(s) as f64 * step);
                let _ = write!(d, "{}{x:.2},{y:.1} H{:.2} ", if i == 0 { "M" } else { "L" }, x + dx);
            }
            if !d.is_empty() {
                let _ = writeln!(svg, "<path d=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"1.2\"/>", d.trim_end());
            }
        }
        let _ = writeln!(
            svg,
            "<text x=\"{LEFT}\" y=\"{:.1}\">epoch index (0 to {})</text>",
            height - 8.0,
            self.len().saturating_sub(1)
        );
        svg.push_str("</svg>\n");
        svg
    }
}

/// Writes `<path>.svg` and `<path>.csv` (any extension on `path` is replaced)
/// and returns both paths.
pub fn export_hypnogram(truth: &[Stage], pred: &[Stage], path: &Path) -> Result<(PathBuf, PathBuf)> {
    let h = Hypnogram::new(truth.to_vec(), pred.to_vec())?;
    let svg = path.with_extension("svg");
    let csv = path.with_extension("csv");
    for (p, body) in [(&svg, h.to_svg()), (&csv, h.to_csv())] {
        std::fs::write(p, body).map_err(|source| EvalError::Io {
            path: p.display().to_string(),
            source,
        })?;
    }
    Ok((svg, csv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_has_no_highlight() {
        let s: Vec<Stage> = (0..30).map(|i| Stage::ALL[(i / 3) % 5]).collect();
        let h = Hypnogram::new(s.clone(), s).unwrap();
        assert!(h.mismatches().is_empty());
        assert!(!h.to_svg().contains("class=\"mismatch\""));
        assert_eq!(h.to_csv().lines().count(), 31);
    }

    #[test]
    fn mismatch_marked() {
        let h = Hypnogram::new(vec![Stage::Wake, Stage::N2, Stage::N3], vec![Stage::Wake, Stage::N1, Stage::N3]).unwrap();
        assert_eq!(h.mismatches(), vec![1]);
        assert_eq!(h.to_svg().matches("class=\"mismatch\"").count(), 1);
        assert_eq!(h.to_csv().lines().nth(2), Some("1,N2,N1,0"));
    }

    #[test]
    fn errors() {
        assert!(matches!(Hypnogram::new(vec![Stage::Wake], vec![]), Err(EvalError::LengthMismatch { .. })));
        let r = export_hypnogram(&[Stage::Wake], &[Stage::Wake], Path::new("/nonexistent/dir/h"));
        assert!(matches!(r, Err(EvalError::Io { .. })));
    }
}
