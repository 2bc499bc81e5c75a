//! Exact transport of boxes under piecewise translations.
//!
//! A tracked box remembers the total shift applied so far, so the piece of
//! the starting box it came from is recovered by translating back.

use crate::boxes::{carve, BoxIndex, BoxSet, Cuboid};
use crate::error::{LabError, Result};
use crate::systems::{PiecewiseTranslation, Shift};
use smallvec::SmallVec;

#[derive(Clone, Debug, PartialEq)]
pub struct TrackedBox {
    /// Current position; never wraps.
    pub cur: Cuboid,
    /// Total translation from the origin.
    pub off: Shift,
}

impl TrackedBox {
    pub fn start(b: Cuboid) -> Self {
        let off = std::iter::repeat_n(0, b.dim()).collect();
        TrackedBox { cur: b, off }
    }

    /// Same history, narrowed to `part` of the current position. A side
    /// that was the whole circle is cut where its origin would wrap, so each
    /// returned box has a non-wrapping origin.
    pub fn narrow(&self, part: Cuboid) -> SmallVec<[TrackedBox; 2]> {
        let mut out: SmallVec<[TrackedBox; 2]> = SmallVec::new();
        out.push(TrackedBox {
            cur: part,
            off: self.off.clone(),
        });
        for axis in 0..self.cur.dim() {
            let o = self.off[axis] as u128;
            if !self.cur.sides[axis].is_full() || o == 0 {
                continue;
            }
            let mut next = SmallVec::new();
            for tb in out {
                let side = tb.cur.sides[axis];
                if !side.is_full() && side.lo < o && o < side.hi {
                    let (a, b) = side.split_at(o);
                    for s in [a, b] {
                        let mut c = tb.cur.clone();
                        c.sides[axis] = s;
                        next.push(TrackedBox {
                            cur: c,
                            off: tb.off.clone(),
                        });
                    }
                } else {
                    next.push(tb);
                }
            }
            out = next;
        }
        out
    }

    /// The part of the starting box that sits at `cur`.
    pub fn origin(&self) -> Cuboid {
        let mut sides = SmallVec::new();
        for (side, &o) in self.cur.sides.iter().zip(&self.off) {
            if side.is_full() {
                sides.push(*side);
                continue;
            }
            let (a, b) = side.translate(o.wrapping_neg());
            debug_assert!(b.is_none(), "origin of a tracked box wraps");
            sides.push(a);
        }
        Cuboid { sides }
    }
}

/// One step of `map` applied to `tb`, split where the map or the wrap-around
/// cuts it.
pub fn advance(map: &PiecewiseTranslation, tb: &TrackedBox, out: &mut Vec<TrackedBox>) {
    for (piece, shift) in map.pieces().overlapping(&tb.cur) {
        let Some(part) = tb.cur.intersect(piece) else {
            continue;
        };
        let off: Shift = tb.off.iter().zip(shift).map(|(a, b)| a.wrapping_add(*b)).collect();
        for sub in tb.narrow(part) {
            for img in sub.cur.translate(shift) {
                out.push(TrackedBox {
                    cur: img,
                    off: off.clone(),
                });
            }
        }
    }
}

/// `steps` applications of `map` to `b`.
pub fn push(map: &PiecewiseTranslation, b: &Cuboid, steps: u64) -> Vec<TrackedBox> {
    let mut state = vec![TrackedBox::start(b.clone())];
    let mut next = Vec::new();
    for _ in 0..steps {
        next.clear();
        for tb in &state {
            advance(map, tb, &mut next);
        }
        std::mem::swap(&mut state, &mut next);
    }
    state
}

/// First-return partition of `base`: disjoint origin pieces with their
/// return times. Fails if some mass has not returned after `max_steps`.
pub fn first_return(map: &PiecewiseTranslation, base: &BoxSet, max_steps: u64) -> Result<Vec<(Cuboid, u64)>> {
    let index: BoxIndex<()> = BoxIndex::new(base.boxes().iter().map(|b| (b.clone(), ())).collect());
    let mut state: Vec<TrackedBox> = base.boxes().iter().cloned().map(TrackedBox::start).collect();
    let mut out = Vec::new();
    let mut moved = Vec::new();
    for t in 1..=max_steps {
        moved.clear();
        for tb in &state {
            advance(map, tb, &mut moved);
        }
        state.clear();
        for tb in moved.drain(..) {
            let mut hit = Vec::new();
            let rest = carve(&index, &tb.cur, &mut hit);
            for (h, _) in hit {
                out.extend(tb.narrow(h).iter().map(|x| (x.origin(), t)));
            }
            state.extend(rest.into_iter().flat_map(|r| tb.narrow(r)));
        }
        if state.is_empty() {
            return Ok(coalesce(out));
        }
    }
    Err(LabError::Precondition(format!(
        "first return not reached within {max_steps} steps"
    )))
}

/// Merges one-dimensional neighbours with equal labels; other dimensions are
/// returned sorted but unmerged.
fn coalesce(mut v: Vec<(Cuboid, u64)>) -> Vec<(Cuboid, u64)> {
    v.sort_by(|a, b| a.0.cmp(&b.0));
    if v.first().is_none_or(|x| x.0.dim() != 1) {
        return v;
    }
    let mut out: Vec<(Cuboid, u64)> = Vec::with_capacity(v.len());
    for (c, t) in v {
        if let Some(last) = out.last_mut() {
            if last.1 == t && last.0.sides[0].hi == c.sides[0].lo {
                last.0.sides[0].hi = c.sides[0].hi;
                continue;
            }
        }
        out.push((c, t));
    }
    out
}
