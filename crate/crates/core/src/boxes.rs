//! Exact set arithmetic on the unit torus `[0,1)^d`.
//!
//! Coordinates are 64-bit fixed-point fractions: the value `x: u64` stands for
//! `x / 2^64`, so translation mod 1 is wrapping addition and is exact.
//! Interval endpoints are `u128` in `[0, 2^64]`, half-open.

use smallvec::SmallVec;
use std::fmt;

/// `2^64`, the length of the whole circle in fixed-point units.
pub const ONE: u128 = 1 << 64;
const SCALE: f64 = 18_446_744_073_709_551_616.0;

/// A point of `[0,1)^d` in fixed-point coordinates.
pub type Point = SmallVec<[u64; 8]>;

pub fn to_unit(x: u64) -> f64 {
    x as f64 / SCALE
}

/// Nearest fixed-point representative of `x mod 1`.
pub fn from_unit(x: f64) -> u64 {
    let f = x.rem_euclid(1.0);
    let v = (f * SCALE).round();
    if v >= SCALE {
        0
    } else {
        v as u64
    }
}

/// Fixed-point representative of `num/den mod 1`, rounded down.
pub fn from_ratio(num: u64, den: u64) -> u64 {
    assert!(den > 0, "zero denominator");
    (((num % den) as u128 * ONE) / den as u128) as u64
}

pub fn len_to_unit(len: u128) -> f64 {
    len as f64 / SCALE
}

/// Distance on the circle `min(|x-y|, 1-|x-y|)`.
pub fn circle_dist(a: u64, b: u64) -> f64 {
    let d = a.wrapping_sub(b);
    to_unit(d.min(d.wrapping_neg()))
}

/// Half-open interval `[lo, hi)` of `[0,1)` in fixed-point units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interval {
    pub lo: u128,
    pub hi: u128,
}

impl Interval {
    pub const FULL: Interval = Interval { lo: 0, hi: ONE };

    pub fn new(lo: u128, hi: u128) -> Self {
        debug_assert!(lo < hi && hi <= ONE, "bad interval [{lo}, {hi})");
        Interval { lo, hi }
    }

    /// Interval from real endpoints in `[0,1]`.
    pub fn from_unit(lo: f64, hi: f64) -> Option<Self> {
        let conv = |x: f64| -> u128 {
            if x >= 1.0 {
                ONE
            } else if x <= 0.0 {
                0
            } else {
                (x * SCALE).round() as u128
            }
        };
        let (l, h) = (conv(lo), conv(hi));
        (l < h).then_some(Interval { lo: l, hi: h })
    }

    pub fn len(&self) -> u128 {
        self.hi - self.lo
    }

    pub fn is_full(&self) -> bool {
        self.lo == 0 && self.hi == ONE
    }

    pub fn contains(&self, x: u64) -> bool {
        let x = x as u128;
        self.lo <= x && x < self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo < hi).then_some(Interval { lo, hi })
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo.max(other.lo) < self.hi.min(other.hi)
    }

    /// Translate by `shift` mod 1; a wrapped image comes back in two parts.
    pub fn translate(&self, shift: u64) -> (Interval, Option<Interval>) {
        if self.is_full() {
            return (*self, None);
        }
        let lo = (self.lo + shift as u128) % ONE;
        let hi = lo + self.len();
        if hi <= ONE {
            (Interval { lo, hi }, None)
        } else {
            (
                Interval { lo, hi: ONE },
                Some(Interval {
                    lo: 0,
                    hi: hi - ONE,
                }),
            )
        }
    }

    /// Translation without wrap, if the image stays inside `[0,1)`.
    pub fn translate_nowrap(&self, shift: u64) -> Option<Interval> {
        match self.translate(shift) {
            (iv, None) => Some(iv),
            _ => None,
        }
    }

    /// Split at `cut` (strictly inside) into lower and upper parts.
    pub fn split_at(&self, cut: u128) -> (Interval, Interval) {
        debug_assert!(self.lo < cut && cut < self.hi);
        (
            Interval {
                lo: self.lo,
                hi: cut,
            },
            Interval {
                lo: cut,
                hi: self.hi,
            },
        )
    }

    /// The part of `self` not covered by `other`: up to two pieces.
    pub fn subtract(&self, other: &Interval) -> SmallVec<[Interval; 2]> {
        let mut out = SmallVec::new();
        match self.intersect(other) {
            None => out.push(*self),
            Some(cut) => {
                if self.lo < cut.lo {
                    out.push(Interval {
                        lo: self.lo,
                        hi: cut.lo,
                    });
                }
                if cut.hi < self.hi {
                    out.push(Interval {
                        lo: cut.hi,
                        hi: self.hi,
                    });
                }
            }
        }
        out
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.12}, {:.12})", len_to_unit(self.lo), len_to_unit(self.hi))
    }
}

/// Half-open box, a product of intervals.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cuboid {
    pub sides: SmallVec<[Interval; 4]>,
}

impl Cuboid {
    pub fn new(sides: impl IntoIterator<Item = Interval>) -> Self {
        Cuboid {
            sides: sides.into_iter().collect(),
        }
    }

    pub fn full(dim: usize) -> Self {
        Cuboid {
            sides: std::iter::repeat_n(Interval::FULL, dim).collect(),
        }
    }

    pub fn interval(iv: Interval) -> Self {
        Cuboid::new([iv])
    }

    pub fn dim(&self) -> usize {
        self.sides.len()
    }

    /// Lebesgue measure.
    pub fn volume(&self) -> f64 {
        self.sides.iter().map(|s| len_to_unit(s.len())).product()
    }

    pub fn contains(&self, p: &[u64]) -> bool {
        debug_assert_eq!(p.len(), self.dim());
        self.sides.iter().zip(p).all(|(s, &x)| s.contains(x))
    }

    pub fn intersect(&self, other: &Cuboid) -> Option<Cuboid> {
        debug_assert_eq!(self.dim(), other.dim());
        let mut sides = SmallVec::new();
        for (a, b) in self.sides.iter().zip(&other.sides) {
            sides.push(a.intersect(b)?);
        }
        Some(Cuboid { sides })
    }

    pub fn overlaps(&self, other: &Cuboid) -> bool {
        self.sides
            .iter()
            .zip(&other.sides)
            .all(|(a, b)| a.overlaps(b))
    }

    pub fn contains_box(&self, other: &Cuboid) -> bool {
        self.sides
            .iter()
            .zip(&other.sides)
            .all(|(a, b)| a.lo <= b.lo && b.hi <= a.hi)
    }

    /// `self \ other` as at most `2d` disjoint boxes.
    pub fn subtract(&self, other: &Cuboid) -> Vec<Cuboid> {
        let Some(cut) = self.intersect(other) else {
            return vec![self.clone()];
        };
        let mut out = Vec::new();
        let mut core = self.clone();
        for axis in 0..self.dim() {
            let side = core.sides[axis];
            for part in side.subtract(&cut.sides[axis]) {
                let mut b = core.clone();
                b.sides[axis] = part;
                out.push(b);
            }
            core.sides[axis] = cut.sides[axis];
        }
        out
    }

    /// Translate every coordinate by `shift` mod 1, splitting wrapped sides.
    pub fn translate(&self, shift: &[u64]) -> SmallVec<[Cuboid; 2]> {
        debug_assert_eq!(shift.len(), self.dim());
        let mut out: SmallVec<[Cuboid; 2]> = SmallVec::new();
        out.push(Cuboid {
            sides: SmallVec::new(),
        });
        for (side, &s) in self.sides.iter().zip(shift) {
            let (a, b) = side.translate(s);
            match b {
                None => out.iter_mut().for_each(|c| c.sides.push(a)),
                Some(b) => {
                    let mut extra: SmallVec<[Cuboid; 2]> = out.clone();
                    out.iter_mut().for_each(|c| c.sides.push(a));
                    extra.iter_mut().for_each(|c| c.sides.push(b));
                    out.extend(extra);
                }
            }
        }
        out
    }

    /// Translation without wrap on any axis.
    pub fn translate_nowrap(&self, shift: &[u64]) -> Option<Cuboid> {
        let mut sides = SmallVec::new();
        for (side, &s) in self.sides.iter().zip(shift) {
            sides.push(side.translate_nowrap(s)?);
        }
        Some(Cuboid { sides })
    }

    /// Split into `parts` slabs of (nearly) equal measure along `axis`.
    pub fn slice(&self, axis: usize, parts: usize) -> Vec<Cuboid> {
        let side = self.sides[axis];
        let len = side.len();
        let parts_u = parts as u128;
        (0..parts_u)
            .filter_map(|j| {
                let lo = side.lo + len * j / parts_u;
                let hi = side.lo + len * (j + 1) / parts_u;
                (lo < hi).then(|| {
                    let mut b = self.clone();
                    b.sides[axis] = Interval { lo, hi };
                    b
                })
            })
            .collect()
    }

    /// A representative interior point (lower corner).
    pub fn corner(&self) -> Point {
        self.sides.iter().map(|s| s.lo as u64).collect()
    }

    /// Product with another box, coordinates concatenated.
    pub fn product(&self, other: &Cuboid) -> Cuboid {
        Cuboid {
            sides: self.sides.iter().chain(&other.sides).copied().collect(),
        }
    }
}

impl fmt::Display for Cuboid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.sides.iter().enumerate() {
            if i > 0 {
                write!(f, " x ")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

/// Finite union of pairwise disjoint boxes of a common dimension.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct BoxSet {
    dim: usize,
    boxes: Vec<Cuboid>,
}

impl BoxSet {
    pub fn empty(dim: usize) -> Self {
        BoxSet {
            dim,
            boxes: Vec::new(),
        }
    }

    pub fn full(dim: usize) -> Self {
        BoxSet {
            dim,
            boxes: vec![Cuboid::full(dim)],
        }
    }

    /// Builds a set from boxes assumed pairwise disjoint.
    pub fn from_disjoint(dim: usize, boxes: Vec<Cuboid>) -> Self {
        debug_assert!(boxes.iter().all(|b| b.dim() == dim));
        BoxSet { dim, boxes }
    }

    /// Union of arbitrary (possibly overlapping) boxes.
    pub fn union_of(dim: usize, boxes: impl IntoIterator<Item = Cuboid>) -> Self {
        let mut set = BoxSet::empty(dim);
        for b in boxes {
            set.insert(b);
        }
        set
    }

    /// Adds `b`, keeping the family disjoint.
    pub fn insert(&mut self, b: Cuboid) {
        let mut pending = vec![b];
        for existing in &self.boxes {
            pending = pending
                .into_iter()
                .flat_map(|p| p.subtract(existing))
                .collect();
            if pending.is_empty() {
                return;
            }
        }
        self.boxes.extend(pending);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn boxes(&self) -> &[Cuboid] {
        &self.boxes
    }

    pub fn into_boxes(self) -> Vec<Cuboid> {
        self.boxes
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.boxes.iter().map(Cuboid::volume).sum()
    }

    pub fn contains(&self, p: &[u64]) -> bool {
        self.boxes.iter().any(|b| b.contains(p))
    }

    pub fn is_full(&self) -> bool {
        (self.measure() - 1.0).abs() < 1e-15
    }

    pub fn intersect_box(&self, b: &Cuboid) -> BoxSet {
        BoxSet {
            dim: self.dim,
            boxes: self.boxes.iter().filter_map(|x| x.intersect(b)).collect(),
        }
    }

    pub fn intersect(&self, other: &BoxSet) -> BoxSet {
        let idx = BoxIndex::new(other.boxes.iter().cloned().map(|b| (b, ())).collect());
        let mut boxes = Vec::new();
        for b in &self.boxes {
            for (ob, _) in idx.overlapping(b) {
                if let Some(x) = b.intersect(ob) {
                    boxes.push(x);
                }
            }
        }
        BoxSet {
            dim: self.dim,
            boxes,
        }
    }

    /// `b \ self` as disjoint boxes.
    pub fn subtract_from(&self, b: &Cuboid) -> Vec<Cuboid> {
        let mut pending = vec![b.clone()];
        for x in &self.boxes {
            if !x.overlaps(b) {
                continue;
            }
            pending = pending.into_iter().flat_map(|p| p.subtract(x)).collect();
            if pending.is_empty() {
                break;
            }
        }
        pending
    }

    pub fn difference(&self, other: &BoxSet) -> BoxSet {
        BoxSet {
            dim: self.dim,
            boxes: self
                .boxes
                .iter()
                .flat_map(|b| other.subtract_from(b))
                .collect(),
        }
    }

    pub fn complement(&self) -> BoxSet {
        BoxSet {
            dim: self.dim,
            boxes: self.subtract_from(&Cuboid::full(self.dim)),
        }
    }

    /// Product with the full box of `extra` further coordinates.
    pub fn lift(&self, extra: usize) -> BoxSet {
        let tail = Cuboid::full(extra);
        BoxSet {
            dim: self.dim + extra,
            boxes: self.boxes.iter().map(|b| b.product(&tail)).collect(),
        }
    }
}

/// True iff no two boxes in `boxes` overlap. Sweep over the first axis.
pub fn pairwise_disjoint(boxes: &[Cuboid]) -> bool {
    if boxes.is_empty() {
        return true;
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by_key(|&i| boxes[i].sides[0].lo);
    let mut active: Vec<usize> = Vec::new();
    for &i in &order {
        let lo = boxes[i].sides[0].lo;
        active.retain(|&j| boxes[j].sides[0].hi > lo);
        if active.iter().any(|&j| boxes[j].overlaps(&boxes[i])) {
            return false;
        }
        active.push(i);
    }
    true
}

/// Splits `b` into the parts covered by `cells` and the leftover boxes.
pub fn carve<T: Clone>(
    index: &BoxIndex<T>,
    b: &Cuboid,
    hit: &mut Vec<(Cuboid, T)>,
) -> Vec<Cuboid> {
    let mut covered = Vec::new();
    for (c, v) in index.overlapping(b) {
        if let Some(x) = b.intersect(c) {
            covered.push(x.clone());
            hit.push((x, v.clone()));
        }
    }
    remainder(b, &covered)
}

/// `b` minus a family of disjoint sub-boxes of `b`.
pub fn remainder(b: &Cuboid, parts: &[Cuboid]) -> Vec<Cuboid> {
    if parts.is_empty() {
        return vec![b.clone()];
    }
    if b.dim() == 1 {
        let mut ivs: Vec<Interval> = parts.iter().map(|p| p.sides[0]).collect();
        ivs.sort();
        let mut out = Vec::new();
        let mut at = b.sides[0].lo;
        for iv in ivs {
            if iv.lo > at {
                out.push(Cuboid::interval(Interval::new(at, iv.lo)));
            }
            at = at.max(iv.hi);
        }
        if at < b.sides[0].hi {
            out.push(Cuboid::interval(Interval::new(at, b.sides[0].hi)));
        }
        return out;
    }
    BoxSet::from_disjoint(b.dim(), parts.to_vec()).subtract_from(b)
}

/// Labelled disjoint boxes with an overlap query along the first axis.
#[derive(Clone, Debug)]
pub struct BoxIndex<T> {
    entries: Vec<(Cuboid, T)>,
    max_width: u128,
}

impl<T> BoxIndex<T> {
    pub fn new(mut entries: Vec<(Cuboid, T)>) -> Self {
        entries.sort_by(|a, b| a.0.sides[0].lo.cmp(&b.0.sides[0].lo));
        let max_width = entries
            .iter()
            .map(|(b, _)| b.sides[0].len())
            .max()
            .unwrap_or(0);
        BoxIndex { entries, max_width }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(Cuboid, T)] {
        &self.entries
    }

    fn candidate_range(&self, lo: u128, hi: u128) -> std::ops::Range<usize> {
        let start_key = lo.saturating_sub(self.max_width);
        let start = self
            .entries
            .partition_point(|(b, _)| b.sides[0].lo < start_key);
        let end = self.entries.partition_point(|(b, _)| b.sides[0].lo < hi);
        start..end.max(start)
    }

    /// Entries whose box overlaps `q`.
    pub fn overlapping<'a>(&'a self, q: &'a Cuboid) -> impl Iterator<Item = &'a (Cuboid, T)> + 'a {
        let r = self.candidate_range(q.sides[0].lo, q.sides[0].hi);
        self.entries[r].iter().filter(move |(b, _)| b.overlaps(q))
    }

    /// Entry containing the point, if any.
    pub fn locate(&self, p: &[u64]) -> Option<&(Cuboid, T)> {
        let x = p[0] as u128;
        let r = self.candidate_range(x, x + 1);
        self.entries[r].iter().find(|(b, _)| b.contains(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(a: f64, b: f64) -> Interval {
        Interval::from_unit(a, b).unwrap()
    }

    #[test]
    fn wrap_translation_splits() {
        let (a, b) = iv(0.75, 1.0).translate(from_unit(0.5));
        assert_eq!(a, iv(0.25, 0.5));
        assert!(b.is_none());
        let (a, b) = iv(0.5, 0.875).translate(from_unit(0.25));
        assert_eq!(a, iv(0.75, 1.0));
        assert_eq!(b, Some(iv(0.0, 0.125)));
    }

    #[test]
    fn subtract_tiles_the_box() {
        let outer = Cuboid::new([iv(0.0, 1.0), iv(0.0, 1.0)]);
        let hole = Cuboid::new([iv(0.25, 0.5), iv(0.5, 0.75)]);
        let rest = outer.subtract(&hole);
        assert_eq!(rest.len(), 4);
        assert!(pairwise_disjoint(&rest));
        let m: f64 = rest.iter().map(Cuboid::volume).sum();
        assert!((m + hole.volume() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn insert_keeps_disjoint() {
        let mut s = BoxSet::empty(1);
        s.insert(Cuboid::interval(iv(0.0, 0.5)));
        s.insert(Cuboid::interval(iv(0.25, 0.75)));
        assert!(pairwise_disjoint(s.boxes()));
        assert!((s.measure() - 0.75).abs() < 1e-15);
        assert!((s.complement().measure() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn index_finds_overlaps() {
        let idx = BoxIndex::new(
            (0..8)
                .map(|j| (Cuboid::interval(iv(j as f64 / 8.0, (j + 1) as f64 / 8.0)), j))
                .collect(),
        );
        let q = Cuboid::interval(iv(0.3, 0.55));
        let hits: Vec<i32> = idx.overlapping(&q).map(|(_, j)| *j).collect();
        assert_eq!(hits, vec![2, 3, 4]);
        assert_eq!(idx.locate(&[from_unit(0.9)]).map(|e| e.1), Some(7));
    }

    #[test]
    fn circle_distance_wraps() {
        assert!((circle_dist(from_unit(0.95), from_unit(0.05)) - 0.1).abs() < 1e-15);
        assert_eq!(circle_dist(0, 1 << 63), 0.5);
    }
}
