//! Lattice points, finite shapes and boxes in Z and Z².
//!
//! One-dimensional sites are stored with a zero second coordinate, so the
//! derived `Ord` is the lexicographic order in both dimensions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Site(pub i64, pub i64);

impl Site {
    pub const ORIGIN: Site = Site(0, 0);

    pub fn line(x: i64) -> Site {
        Site(x, 0)
    }

    pub fn add(self, o: Site) -> Site {
        Site(self.0 + o.0, self.1 + o.1)
    }

    pub fn sub(self, o: Site) -> Site {
        Site(self.0 - o.0, self.1 - o.1)
    }

    /// ℓ∞ distance.
    pub fn dist(self, o: Site) -> i64 {
        (self.0 - o.0).abs().max((self.1 - o.1).abs())
    }

    pub fn coords(self, dim: u8) -> Vec<i64> {
        if dim == 1 {
            vec![self.0]
        } else {
            vec![self.0, self.1]
        }
    }

    /// The 2·dim lattice neighbours.
    pub fn neighbours(self, dim: u8) -> impl Iterator<Item = Site> {
        let steps: &'static [(i64, i64)] = if dim == 1 {
            &[(-1, 0), (1, 0)]
        } else {
            &[(-1, 0), (0, -1), (0, 1), (1, 0)]
        };
        steps.iter().map(move |&(dx, dy)| Site(self.0 + dx, self.1 + dy))
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.0, self.1)
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.0, self.1)
    }
}

/// Sorts and deduplicates a list of cells.
pub fn normalize(cells: &mut Vec<Site>) {
    cells.sort_unstable();
    cells.dedup();
}

/// Translate of `cells` whose lexicographic minimum is the origin.
pub fn canonicalize(cells: &[Site]) -> Result<Vec<Site>> {
    let min = *cells.iter().min().ok_or(Error::EmptyShape)?;
    let mut out: Vec<Site> = cells.iter().map(|c| c.sub(min)).collect();
    normalize(&mut out);
    Ok(out)
}

/// ℓ∞ diameter of a finite set (0 for singletons).
pub fn diameter(cells: &[Site]) -> i64 {
    let (lo, hi) = bounding_box(cells);
    (hi.0 - lo.0).max(hi.1 - lo.1)
}

/// Coordinatewise minimum and maximum.
pub fn bounding_box(cells: &[Site]) -> (Site, Site) {
    let mut lo = Site(i64::MAX, i64::MAX);
    let mut hi = Site(i64::MIN, i64::MIN);
    for c in cells {
        lo = Site(lo.0.min(c.0), lo.1.min(c.1));
        hi = Site(hi.0.max(c.0), hi.1.max(c.1));
    }
    (lo, hi)
}

pub fn translate(cells: &[Site], by: Site) -> Vec<Site> {
    cells.iter().map(|c| c.add(by)).collect()
}

pub fn is_connected(cells: &[Site], dim: u8) -> bool {
    if cells.is_empty() {
        return true;
    }
    let set: std::collections::HashSet<Site> = cells.iter().copied().collect();
    let mut seen = std::collections::HashSet::with_capacity(cells.len());
    let mut stack = vec![cells[0]];
    seen.insert(cells[0]);
    while let Some(c) = stack.pop() {
        for n in c.neighbours(dim) {
            if set.contains(&n) && seen.insert(n) {
                stack.push(n);
            }
        }
    }
    seen.len() == set.len()
}

/// Axis-aligned box of sites, inclusive bounds. In one dimension the second
/// coordinate range is `0..=0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub dim: u8,
    pub lo: Site,
    pub hi: Site,
}

impl Window {
    pub fn new(dim: u8, lo: Site, hi: Site) -> Result<Window> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidArgument(format!("dimension {dim}")));
        }
        if hi.0 < lo.0 || hi.1 < lo.1 || (dim == 1 && (lo.1 != 0 || hi.1 != 0)) {
            return Err(Error::InvalidArgument(format!("empty window {lo}..{hi}")));
        }
        Ok(Window { dim, lo, hi })
    }

    /// `a..=b` on the line.
    pub fn interval(a: i64, b: i64) -> Result<Window> {
        Window::new(1, Site(a, 0), Site(b, 0))
    }

    /// `[x0, x0+w) × [y0, y0+h)` in the plane.
    pub fn rect(x0: i64, y0: i64, w: i64, h: i64) -> Result<Window> {
        Window::new(2, Site(x0, y0), Site(x0 + w - 1, y0 + h - 1))
    }

    pub fn len(&self) -> usize {
        ((self.hi.0 - self.lo.0 + 1) * (self.hi.1 - self.lo.1 + 1)) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, s: Site) -> bool {
        s.0 >= self.lo.0 && s.0 <= self.hi.0 && s.1 >= self.lo.1 && s.1 <= self.hi.1
    }

    /// Sites in lexicographic order.
    pub fn sites(&self) -> Vec<Site> {
        let mut out = Vec::with_capacity(self.len());
        for x in self.lo.0..=self.hi.0 {
            for y in self.lo.1..=self.hi.1 {
                out.push(Site(x, y));
            }
        }
        out
    }

    /// Position of `s` in `sites()`.
    pub fn index(&self, s: Site) -> Option<usize> {
        if !self.contains(s) {
            return None;
        }
        let h = self.hi.1 - self.lo.1 + 1;
        Some(((s.0 - self.lo.0) * h + (s.1 - self.lo.1)) as usize)
    }

    /// Enlarges the box by `m` in every lattice direction.
    pub fn grow(&self, m: i64) -> Window {
        if self.dim == 1 {
            Window { dim: 1, lo: Site(self.lo.0 - m, 0), hi: Site(self.hi.0 + m, 0) }
        } else {
            Window {
                dim: 2,
                lo: Site(self.lo.0 - m, self.lo.1 - m),
                hi: Site(self.hi.0 + m, self.hi.1 + m),
            }
        }
    }
}

/// All sites within ℓ∞ distance `r` of `c`, lexicographic order.
pub fn ball(c: Site, r: i64, dim: u8) -> impl Iterator<Item = Site> {
    let ry = if dim == 1 { 0 } else { r };
    (-r..=r).flat_map(move |dx| (-ry..=ry).map(move |dy| Site(c.0 + dx, c.1 + dy)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_shapes() {
        assert_eq!(canonicalize(&[Site::line(3)]).unwrap(), vec![Site::ORIGIN]);
        assert_eq!(
            canonicalize(&[Site::line(2), Site::line(5)]).unwrap(),
            vec![Site::line(0), Site::line(3)]
        );
        assert_eq!(
            canonicalize(&[Site(1, 1), Site(1, 2), Site(2, 1)]).unwrap(),
            vec![Site(0, 0), Site(0, 1), Site(1, 0)]
        );
        assert!(matches!(canonicalize(&[]), Err(Error::EmptyShape)));
    }

    #[test]
    fn window_indexing_matches_site_order() {
        let w = Window::rect(-1, 2, 3, 2).unwrap();
        for (i, s) in w.sites().into_iter().enumerate() {
            assert_eq!(w.index(s), Some(i));
        }
        assert_eq!(w.index(Site(5, 5)), None);
    }

    #[test]
    fn connectivity() {
        assert!(is_connected(&[Site(0, 0), Site(0, 1), Site(1, 1)], 2));
        assert!(!is_connected(&[Site(0, 0), Site(1, 1)], 2));
        assert!(is_connected(&[Site::line(0), Site::line(1)], 1));
    }
}
