use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Point2;

/// `(x, x', y)`: a location in the reference image, one in the target image,
/// and whether they match.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triplet {
    pub x: Point2,
    pub x_prime: Point2,
    pub positive: bool,
}

impl Triplet {
    pub const fn positive(x: Point2, x_prime: Point2) -> Self {
        Self {
            x,
            x_prime,
            positive: true,
        }
    }

    pub const fn negative(x: Point2, x_prime: Point2) -> Self {
        Self {
            x,
            x_prime,
            positive: false,
        }
    }

    pub fn label(&self) -> u8 {
        u8::from(self.positive)
    }
}

/// Labelled correspondences between one reference and one target image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub reference: String,
    pub target: String,
    pub triplets: Vec<Triplet>,
}

impl CorrespondenceSet {
    pub fn new(reference: impl Into<String>, target: impl Into<String>, triplets: Vec<Triplet>) -> Self {
        Self {
            reference: reference.into(),
            target: target.into(),
            triplets,
        }
    }

    /// Serializes as `PAIR <ref> <tgt>` followed by `x y x' y' label` lines.
    pub fn to_text(&self) -> String {
        let mut out = format!("PAIR {} {}\n", self.reference, self.target);
        for t in &self.triplets {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                t.x.x,
                t.x.y,
                t.x_prime.x,
                t.x_prime.y,
                t.label()
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (line, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing PAIR header".into(),
        })?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "PAIR" {
            return Err(Error::Parse {
                line,
                msg: "expected `PAIR <ref_path> <tgt_path>`".into(),
            });
        }
        let mut set = CorrespondenceSet::new(parts[1], parts[2], Vec::new());
        for (line, text) in lines {
            let fields: Vec<&str> = text.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected 5 fields, found {}", fields.len()),
                });
            }
            let mut v = [0.0f64; 4];
            for (slot, f) in v.iter_mut().zip(&fields) {
                *slot = f.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad number {f:?}"),
                })?;
                if !slot.is_finite() {
                    return Err(Error::Parse {
                        line,
                        msg: "coordinates must be finite".into(),
                    });
                }
            }
            let positive = match fields[4] {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("label must be 0 or 1, got {other:?}"),
                    })
                }
            };
            set.triplets.push(Triplet {
                x: Point2::new(v[0], v[1]),
                x_prime: Point2::new(v[2], v[3]),
                positive,
            });
        }
        Ok(set)
    }
}

pub fn read_correspondences(path: impl AsRef<Path>) -> Result<CorrespondenceSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CorrespondenceSet::parse(&text)
}

pub fn write_correspondences(set: &CorrespondenceSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, set.to_text()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_example() {
        let text = "PAIR a.pgm b.pgm\n1 2 3.5 4 1\n# comment\n\n0 0 10 10 0\n";
        let set = CorrespondenceSet::parse(text).unwrap();
        assert_eq!(set.reference, "a.pgm");
        assert_eq!(set.triplets.len(), 2);
        assert_eq!(set.triplets[0], Triplet::positive(Point2::new(1.0, 2.0), Point2::new(3.5, 4.0)));
        assert!(!set.triplets[1].positive);
    }

    #[test]
    fn parse_errors() {
        assert!(CorrespondenceSet::parse("").is_err());
        assert!(CorrespondenceSet::parse("PAIRS a b\n").is_err());
        assert!(matches!(
            CorrespondenceSet::parse("PAIR a b\n1 2 3 4\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(CorrespondenceSet::parse("PAIR a b\n1 2 3 4 2\n").is_err());
        assert!(CorrespondenceSet::parse("PAIR a b\n1 x 3 4 1\n").is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip(pts in prop::collection::vec((-1e4f64..1e4, -1e4f64..1e4, -1e4f64..1e4, -1e4f64..1e4, any::<bool>()), 0..20)) {
            let triplets = pts.iter().map(|&(a, b, c, d, y)| Triplet {
                x: Point2::new(a, b), x_prime: Point2::new(c, d), positive: y,
            }).collect();
            let set = CorrespondenceSet::new("ref.pgm", "tgt.pgm", triplets);
            prop_assert_eq!(CorrespondenceSet::parse(&set.to_text()).unwrap(), set);
        }
    }
}
