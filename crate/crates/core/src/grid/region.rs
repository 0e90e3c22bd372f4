use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Open axis-aligned box `(lo, hi)` in tangential coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.lo.iter().zip(&self.hi).zip(x).all(|((l, h), v)| l < v && v < h)
    }

    pub fn contains_closed(&self, x: &[f64]) -> bool {
        self.lo.iter().zip(&self.hi).zip(x).all(|((l, h), v)| l <= v && v <= h)
    }

    pub fn closed_overlap(&self, other: &AxisBox) -> bool {
        (0..self.lo.len()).all(|i| self.lo[i] <= other.hi[i] && other.lo[i] <= self.hi[i])
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        let mut d2 = 0.0;
        for i in 0..self.lo.len() {
            let e = (self.lo[i] - x[i]).max(x[i] - self.hi[i]).max(0.0);
            d2 += e * e;
        }
        d2.sqrt()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }
}

/// Union of open boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Region {
    pub boxes: Vec<AxisBox>,
}

impl Region {
    pub fn single(lo: &[f64], hi: &[f64]) -> Self {
        Region {
            boxes: vec![AxisBox {
                lo: lo.to_vec(),
                hi: hi.to_vec(),
            }],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains(x))
    }

    pub fn contains_closed(&self, x: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains_closed(x))
    }

    /// Distance to the closure.
    pub fn distance(&self, x: &[f64]) -> f64 {
        self.boxes.iter().map(|b| b.distance(x)).fold(f64::INFINITY, f64::min)
    }

    fn check_shape(&self, name: &str, dim: usize, extent: f64) -> Result<()> {
        if self.boxes.is_empty() {
            return Err(Error::Config(format!("regions.{name} is empty")));
        }
        for (k, b) in self.boxes.iter().enumerate() {
            if b.lo.len() != dim || b.hi.len() != dim {
                return Err(Error::Config(format!("regions.{name}[{k}] must have {dim} coordinates")));
            }
            for i in 0..dim {
                if !(b.lo[i] < b.hi[i]) {
                    return Err(Error::Config(format!("regions.{name}[{k}] has lo >= hi on axis {i}")));
                }
                if b.lo[i] < -extent || b.hi[i] > extent {
                    return Err(Error::Config(format!(
                        "regions.{name}[{k}] lies outside the tangential box [-{extent}, {extent}]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `closure(self) ⊂ other`, decided exactly on the breakpoint lattice of
    /// both unions.
    pub fn compactly_inside(&self, other: &Region) -> bool {
        let dim = self.boxes[0].lo.len();
        let mut axes: Vec<Vec<f64>> = Vec::with_capacity(dim);
        for i in 0..dim {
            let mut v: Vec<f64> = self
                .boxes
                .iter()
                .chain(&other.boxes)
                .flat_map(|b| [b.lo[i], b.hi[i]])
                .collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            let mut samples = Vec::with_capacity(2 * v.len());
            for k in 0..v.len() {
                samples.push(v[k]);
                if k + 1 < v.len() {
                    samples.push(0.5 * (v[k] + v[k + 1]));
                }
            }
            axes.push(samples);
        }
        let total: usize = axes.iter().map(Vec::len).product();
        let mut p = vec![0.0; dim];
        for mut idx in 0..total {
            for i in 0..dim {
                let n = axes[i].len();
                p[i] = axes[i][idx % n];
                idx /= n;
            }
            if self.contains_closed(&p) && !other.contains(&p) {
                return false;
            }
        }
        true
    }

    pub fn closures_intersect(&self, other: &Region) -> bool {
        self.boxes
            .iter()
            .any(|a| other.boxes.iter().any(|b| a.closed_overlap(b)))
    }
}

/// The nested tangential regions `Ω' ⋐ Ω ⋐ Ω₁` and the exterior window `W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub omega_prime: Region,
    pub omega: Region,
    pub omega_one: Region,
    pub window_w: Region,
}

impl RegionSpec {
    pub fn validate(&self, dim: usize, extent: f64) -> Result<()> {
        self.omega_prime.check_shape("omega_prime", dim, extent)?;
        self.omega.check_shape("omega", dim, extent)?;
        self.omega_one.check_shape("omega_one", dim, extent)?;
        self.window_w.check_shape("window_w", dim, extent)?;
        if !self.omega_prime.compactly_inside(&self.omega) {
            return Err(Error::Geometry("omega_prime is not compactly contained in omega".into()));
        }
        if !self.omega.compactly_inside(&self.omega_one) {
            return Err(Error::Geometry("omega is not compactly contained in omega_one".into()));
        }
        if self.window_w.closures_intersect(&self.omega_one) {
            return Err(Error::Geometry("closure of W meets closure of omega_one".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_containment_is_exact() {
        let a = Region::single(&[-1.0, -1.0], &[1.0, 1.0]);
        let b = Region::single(&[-1.5, -1.5], &[1.5, 1.5]);
        assert!(a.compactly_inside(&b));
        assert!(!b.compactly_inside(&a));
        // touching faces are not compact containment
        let c = Region::single(&[-1.0, -1.0], &[1.5, 1.5]);
        assert!(!c.compactly_inside(&b));
        // a union of two boxes covering a seam
        let u = Region {
            boxes: vec![
                AxisBox { lo: vec![-2.0, -2.0], hi: vec![0.1, 2.0] },
                AxisBox { lo: vec![-0.1, -2.0], hi: vec![2.0, 2.0] },
            ],
        };
        assert!(b.compactly_inside(&u));
        let split = Region {
            boxes: vec![
                AxisBox { lo: vec![-2.0, -2.0], hi: vec![0.0, 2.0] },
                AxisBox { lo: vec![0.0, -2.0], hi: vec![2.0, 2.0] },
            ],
        };
        assert!(!b.compactly_inside(&split));
    }

    #[test]
    fn toml_roundtrip() {
        let r = RegionSpec {
            omega_prime: Region::single(&[-0.5], &[0.5]),
            omega: Region::single(&[-1.0], &[1.0]),
            omega_one: Region::single(&[-1.5], &[1.5]),
            window_w: Region::single(&[2.0], &[3.0]),
        };
        let s = toml::to_string(&r).unwrap();
        let back: RegionSpec = toml::from_str(&s).unwrap();
        assert_eq!(r, back);
    }
}
