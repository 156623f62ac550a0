//! Plain-text matches file: one `x y xh yh d_coarse d_fine valid` line per query.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Point2;
use crate::matching::MatchResult;

/// A correspondence as stored on disk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchRecord {
    pub query: Point2,
    pub matched: Point2,
    pub d_coarse: f64,
    pub d_fine: f64,
    pub valid: bool,
}

impl MatchRecord {
    pub fn displacement(&self) -> (f64, f64) {
        (self.matched.x - self.query.x, self.matched.y - self.query.y)
    }
}

impl From<&MatchResult> for MatchRecord {
    fn from(m: &MatchResult) -> Self {
        Self {
            query: m.query,
            matched: m.refined,
            d_coarse: m.d_coarse,
            d_fine: m.d_fine,
            valid: m.valid,
        }
    }
}

pub fn format_matches(records: &[MatchRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {}",
            r.query.x,
            r.query.y,
            r.matched.x,
            r.matched.y,
            r.d_coarse,
            r.d_fine,
            u8::from(r.valid)
        );
    }
    out
}

pub fn parse_matches(text: &str) -> Result<Vec<MatchRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let mut v = [0.0f64; 6];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad number {f:?}"),
            })?;
        }
        let valid = match fields[6] {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("valid flag must be 0 or 1, got {other:?}"),
                })
            }
        };
        out.push(MatchRecord {
            query: Point2::new(v[0], v[1]),
            matched: Point2::new(v[2], v[3]),
            d_coarse: v[4],
            d_fine: v[5],
            valid,
        });
    }
    Ok(out)
}

pub fn write_matches(records: &[MatchRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_matches(records)).map_err(|e| Error::io(path, e))
}

pub fn read_matches(path: impl AsRef<Path>) -> Result<Vec<MatchRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matches(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let recs = vec![
            MatchRecord {
                query: Point2::new(1.0, 2.0),
                matched: Point2::new(3.25, 4.0),
                d_coarse: 0.125,
                d_fine: 0.1,
                valid: true,
            },
            MatchRecord {
                query: Point2::new(0.0, 0.0),
                matched: Point2::new(0.0, 7.0),
                d_coarse: 1.0,
                d_fine: 0.0,
                valid: false,
            },
        ];
        assert_eq!(parse_matches(&format_matches(&recs)).unwrap(), recs);
        assert!(parse_matches("1 2 3 4 5 6\n").is_err());
        assert!(parse_matches("1 2 3 4 5 6 2\n").is_err());
    }
}
