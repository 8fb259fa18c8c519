use std::path::Path;

use crate::cloud::Point3;
use crate::error::{Error, Result};

/// Hand-picked reference points in reconstruction coordinates, with measured
/// metric distances (cm) between some of them, and the picked plant-base point.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub points: Vec<Point3>,
    pub pairs: Vec<LandmarkPair>,
    /// Plant base in the same (unscaled) coordinates as `points`.
    pub base: Option<Point3>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkPair {
    pub r: usize,
    pub s: usize,
    pub distance_cm: f64,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point3>, pairs: Vec<LandmarkPair>, base: Option<Point3>) -> Result<Self> {
        for (k, p) in pairs.iter().enumerate() {
            if p.r == p.s {
                return Err(Error::InvalidInput(format!("pair {k} joins landmark {} to itself", p.r)));
            }
            if p.r >= points.len() || p.s >= points.len() {
                return Err(Error::InvalidInput(format!(
                    "pair {k} references landmark {} but only {} landmarks exist",
                    p.r.max(p.s),
                    points.len()
                )));
            }
            if !(p.distance_cm > 0.0 && p.distance_cm.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "pair {k} has non-positive distance {}",
                    p.distance_cm
                )));
            }
        }
        Ok(LandmarkSet { points, pairs, base })
    }

    /// Parses the landmark text format:
    ///
    /// ```text
    /// base x y z
    /// lm x y z          # landmark 0
    /// lm x y z          # landmark 1
    /// pair r s d_cm     # 0-based landmark indices
    /// ```
    ///
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        let mut pairs = Vec::new();
        let mut base = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Format(format!("landmark line {}: '{}'", lineno + 1, raw.trim()));
            let tok: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            match tok.as_slice() {
                ["base", x, y, z] => {
                    if base.is_some() {
                        return Err(Error::Format("landmark file has more than one base line".into()));
                    }
                    base = Some([num(x)?, num(y)?, num(z)?]);
                }
                ["lm", x, y, z] => points.push([num(x)?, num(y)?, num(z)?]),
                ["pair", r, s, d] => pairs.push(LandmarkPair {
                    r: r.parse().map_err(|_| bad())?,
                    s: s.parse().map_err(|_| bad())?,
                    distance_cm: num(d)?,
                }),
                _ => return Err(bad()),
            }
        }
        LandmarkSet::new(points, pairs, base)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(b) = self.base {
            s.push_str(&format!("base {} {} {}\n", b[0], b[1], b[2]));
        }
        for p in &self.points {
            s.push_str(&format!("lm {} {} {}\n", p[0], p[1], p[2]));
        }
        for p in &self.pairs {
            s.push_str(&format!("pair {} {} {}\n", p.r, p.s, p.distance_cm));
        }
        s
    }
}

/// Metric scale factor: mean measured distance over mean reconstructed
/// distance, both taken over the listed pairs.
pub fn scale_factor(landmarks: &LandmarkSet) -> Result<f64> {
    if landmarks.pairs.is_empty() {
        return Err(Error::InvalidInput("no landmark pairs with measured distances".into()));
    }
    let mut recon = 0.0;
    let mut truth = 0.0;
    for p in &landmarks.pairs {
        let d = crate::cloud::dist2(&landmarks.points[p.r], &landmarks.points[p.s]).sqrt();
        if d == 0.0 {
            return Err(Error::Degenerate(format!(
                "landmarks {} and {} coincide",
                p.r, p.s
            )));
        }
        recon += d;
        truth += p.distance_cm;
    }
    let k = landmarks.pairs.len() as f64;
    Ok((truth / k) / (recon / k))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(r: usize, s: usize, d: f64) -> LandmarkPair {
        LandmarkPair { r, s, distance_cm: d }
    }

    #[test]
    fn single_pair_ratio() {
        let l = LandmarkSet::new(vec![[0.0; 3], [2.0, 0.0, 0.0]], vec![pair(0, 1, 10.0)], None).unwrap();
        assert_eq!(scale_factor(&l).unwrap(), 5.0);
    }

    #[test]
    fn averages_over_pairs() {
        let l = LandmarkSet::new(
            vec![[0.0; 3], [2.0, 0.0, 0.0], [0.0, 4.0, 0.0]],
            vec![pair(0, 1, 10.0), pair(0, 2, 20.0)],
            None,
        )
        .unwrap();
        assert_eq!(scale_factor(&l).unwrap(), 5.0);
    }

    #[test]
    fn rejects_bad_pairs() {
        assert!(LandmarkSet::new(vec![[0.0; 3]; 2], vec![pair(1, 1, 1.0)], None).is_err());
        assert!(LandmarkSet::new(vec![[0.0; 3]; 2], vec![pair(0, 2, 1.0)], None).is_err());
        assert!(LandmarkSet::new(vec![[0.0; 3]; 2], vec![pair(0, 1, 0.0)], None).is_err());
        let coincident = LandmarkSet::new(vec![[1.0; 3]; 2], vec![pair(0, 1, 3.0)], None).unwrap();
        assert!(matches!(scale_factor(&coincident), Err(Error::Degenerate(_))));
        let empty = LandmarkSet::new(vec![[1.0; 3]; 2], vec![], None).unwrap();
        assert!(scale_factor(&empty).is_err());
    }

    #[test]
    fn parses_and_prints() {
        let text = "base 0 0 1.5\n# rulers\nlm 0 0 0\nlm 1 0 0  # tip\npair 0 1 12.5\n";
        let l = LandmarkSet::parse(text).unwrap();
        assert_eq!(l.base, Some([0.0, 0.0, 1.5]));
        assert_eq!(l.pairs, vec![pair(0, 1, 12.5)]);
        assert_eq!(LandmarkSet::parse(&l.to_text()).unwrap(), l);
        assert!(LandmarkSet::parse("lm 1 2\n").is_err());
    }
}
