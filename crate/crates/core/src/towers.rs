//! Rokhlin towers from first-return (Kac) columns, purification with respect
//! to a cocycle and a set, and the level-pairing involutions.

use crate::boxes::{carve, len_to_unit, pairwise_disjoint, BoxIndex, BoxSet, Cuboid, Interval, ONE};
use crate::cocycles::{Cocycle, FiniteFullGroupElement};
use crate::error::{invalid, LabError, Result};
use crate::groups::Element;
use crate::systems::{convergent_denominators, norm_multiple, BaseSystem, PiecewiseTranslation, Shift, SystemKind};
use crate::walk::{self, TrackedBox};
use rand::seq::SliceRandom;
use rand::Rng;
use smallvec::SmallVec;
use std::collections::HashSet;

/// Default cap on the number of pure columns.
pub const DEFAULT_COLUMN_CAP: usize = 1_000_000;

/// One column: a base box and the shift carrying it to each level.
#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub base: Cuboid,
    /// `offsets[i]` carries the base onto level `i`.
    pub offsets: Vec<Shift>,
    /// Cocycle value per level; empty before purification.
    pub values: Vec<Element>,
    /// Membership of each level in the reference set; empty before
    /// purification.
    pub in_c: Vec<bool>,
}

impl Column {
    pub fn height(&self) -> usize {
        self.offsets.len()
    }

    pub fn level(&self, i: usize) -> Cuboid {
        let parts = self.base.translate(&self.offsets[i]);
        debug_assert_eq!(parts.len(), 1);
        parts.into_iter().next().unwrap()
    }

    pub fn mass(&self) -> f64 {
        self.base.volume()
    }
}

#[derive(Clone, Debug)]
pub struct RokhlinTower {
    pub dim: usize,
    pub height: usize,
    pub columns: Vec<Column>,
    /// Distinct first-return times of the Kac base.
    pub kac_heights: Vec<u64>,
    /// Measure of the Kac base the tower was cut from.
    pub kac_base: f64,
    pub purified: bool,
}

impl RokhlinTower {
    /// Measure of the union of the levels.
    pub fn coverage(&self) -> f64 {
        self.columns.iter().map(Column::mass).sum::<f64>() * self.height as f64
    }

    pub fn residual(&self) -> f64 {
        (1.0 - self.coverage()).max(0.0)
    }

    /// `N = floor(h/2)`.
    pub fn half(&self) -> usize {
        self.height / 2
    }

    /// Lower half `0..N`.
    pub fn lower(&self) -> std::ops::Range<usize> {
        0..self.half()
    }

    /// Upper half `h-N..h`.
    pub fn upper(&self) -> std::ops::Range<usize> {
        self.height - self.half()..self.height
    }

    /// Central level index for odd heights.
    pub fn central(&self) -> Option<usize> {
        (self.height % 2 == 1).then_some(self.half())
    }

    /// All level boxes.
    pub fn level_boxes(&self) -> Vec<Cuboid> {
        self.columns
            .iter()
            .flat_map(|c| (0..c.height()).map(move |i| c.level(i)))
            .collect()
    }

    /// Exact pairwise disjointness of every level.
    pub fn levels_disjoint(&self) -> bool {
        pairwise_disjoint(&self.level_boxes())
    }

    /// Number of distinct per-level annotation patterns.
    pub fn classes(&self) -> usize {
        let set: HashSet<(Vec<Element>, Vec<bool>)> = self
            .columns
            .iter()
            .map(|c| (c.values.clone(), c.in_c.clone()))
            .collect();
        set.len()
    }

    /// Text dump: one line per (column, level) with the level's side
    /// endpoints, the cocycle value and the membership flag.
    pub fn dump(&self, fmt_value: impl Fn(&Element) -> String) -> String {
        let mut s = String::from("# column level sides... value in_c\n");
        for (ci, c) in self.columns.iter().enumerate() {
            for i in 0..c.height() {
                s.push_str(&format!("{ci} {i}"));
                for side in &c.level(i).sides {
                    s.push_str(&format!(" {} {}", len_to_unit(side.lo), len_to_unit(side.hi)));
                }
                let v = c.values.get(i).map_or_else(|| "-".to_string(), &fmt_value);
                let f = c.in_c.get(i).map_or("-", |&b| if b { "1" } else { "0" });
                s.push_str(&format!(" {v} {f}\n"));
            }
        }
        s
    }
}

/// Per-level annotation produced while growing columns.
type Tag = Option<(Element, bool)>;

enum Entry {
    Fresh(TrackedBox, usize),
    Refined(TrackedBox, usize, Tag),
}

/// Grows columns of height `h` from `start` by depth-first transport,
/// splitting each level with `refine`.
fn grow_columns(
    map: &PiecewiseTranslation,
    start: Cuboid,
    h: usize,
    refine: &mut dyn FnMut(&Cuboid, &mut Vec<(Cuboid, Tag)>) -> Result<()>,
    out: &mut Vec<Column>,
    cap: usize,
) -> Result<()> {
    let mut stack = vec![Entry::Fresh(TrackedBox::start(start), 0)];
    let mut offs: Vec<Shift> = Vec::with_capacity(h);
    let mut tags: Vec<Tag> = Vec::with_capacity(h);
    let mut parts = Vec::new();
    let mut moved = Vec::new();
    while let Some(e) = stack.pop() {
        match e {
            Entry::Fresh(tb, level) => {
                parts.clear();
                refine(&tb.cur, &mut parts)?;
                for (p, tag) in parts.drain(..) {
                    for sub in tb.narrow(p) {
                        stack.push(Entry::Refined(sub, level, tag.clone()));
                    }
                }
            }
            Entry::Refined(tb, level, tag) => {
                offs.truncate(level);
                tags.truncate(level);
                offs.push(tb.off.clone());
                tags.push(tag);
                if level + 1 == h {
                    emit(&tb.origin(), &offs, &tags, out);
                    if out.len() > cap {
                        return Err(LabError::TooManyColumns { count: out.len(), cap });
                    }
                    continue;
                }
                moved.clear();
                walk::advance(map, &tb, &mut moved);
                for m in moved.drain(..) {
                    stack.push(Entry::Fresh(m, level + 1));
                }
            }
        }
    }
    Ok(())
}

/// Emits the column over `origin`, cutting it so no level wraps.
fn emit(origin: &Cuboid, offs: &[Shift], tags: &[Tag], out: &mut Vec<Column>) {
    let mut bases = vec![origin.clone()];
    for axis in 0..origin.dim() {
        let side = origin.sides[axis];
        if side.is_full() {
            continue;
        }
        let mut cuts: Vec<u128> = offs
            .iter()
            .map(|o| (ONE - o[axis] as u128) % ONE)
            .filter(|&c| side.lo < c && c < side.hi)
            .collect();
        if cuts.is_empty() {
            continue;
        }
        cuts.sort_unstable();
        cuts.dedup();
        let mut next = Vec::new();
        for b in bases {
            let mut lo = side.lo;
            for &c in cuts.iter().chain(std::iter::once(&side.hi)) {
                let mut x = b.clone();
                x.sides[axis] = Interval::new(lo, c);
                next.push(x);
                lo = c;
            }
        }
        bases = next;
    }
    let values: Vec<Element> = tags.iter().filter_map(|t| t.as_ref().map(|x| x.0.clone())).collect();
    let in_c: Vec<bool> = tags.iter().filter_map(|t| t.as_ref().map(|x| x.1)).collect();
    for b in bases {
        out.push(Column {
            base: b,
            offsets: offs.to_vec(),
            values: values.clone(),
            in_c: in_c.clone(),
        });
    }
}

fn no_refine(b: &Cuboid, out: &mut Vec<(Cuboid, Tag)>) -> Result<()> {
    out.push((b.clone(), None));
    Ok(())
}

/// First-return partition of `base` under the system.
pub fn kac_partition(system: &BaseSystem, base: &Cuboid, max_steps: u64) -> Result<Vec<(Cuboid, u64)>> {
    let set = BoxSet::from_disjoint(base.dim(), vec![base.clone()]);
    walk::first_return(system.exact_map()?, &set, max_steps)
}

/// Cuts each Kac column into blocks of height `h`; the leftover top levels
/// become residual.
fn chop(map: &PiecewiseTranslation, kac: &[(Cuboid, u64)], h: usize, cap: usize) -> Result<Vec<Column>> {
    let mut cols = Vec::new();
    for (piece, ret) in kac {
        let blocks = *ret as usize / h;
        let mut state = vec![TrackedBox::start(piece.clone())];
        let mut next = Vec::new();
        for b in 0..blocks {
            for tb in &state {
                grow_columns(map, tb.cur.clone(), h, &mut no_refine, &mut cols, cap)?;
            }
            if b + 1 == blocks {
                break;
            }
            for _ in 0..h {
                next.clear();
                for tb in &state {
                    walk::advance(map, tb, &mut next);
                }
                std::mem::swap(&mut state, &mut next);
            }
        }
    }
    Ok(cols)
}

fn predicted_coverage(kac: &[(Cuboid, u64)], h: usize) -> f64 {
    kac.iter()
        .map(|(p, t)| p.volume() * ((*t as usize / h) * h) as f64)
        .sum()
}

fn distinct_heights(kac: &[(Cuboid, u64)]) -> Vec<u64> {
    let mut v: Vec<u64> = kac.iter().map(|k| k.1).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Tower of height `h` covering at least `1 - eps`, Kac base at the origin.
pub fn build_tower(system: &BaseSystem, h: usize, eps: f64) -> Result<RokhlinTower> {
    build_tower_at(system, h, eps, 0)
}

/// As [`build_tower`], with the Kac base placed at `offset`.
pub fn build_tower_at(system: &BaseSystem, h: usize, eps: f64, offset: u64) -> Result<RokhlinTower> {
    if h == 0 {
        return Err(invalid("h", "tower height must be at least 1"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("eps", "coverage slack must lie in (0,1)"));
    }
    match system.kind() {
        SystemKind::Extension(sk) => {
            let inner = build_tower_at(&sk.base, h, eps, offset)?;
            Ok(lift(inner, sk.group.arity()))
        }
        SystemKind::Rotation { alpha } => rotation_tower(system, *alpha, h, eps, offset),
        SystemKind::Odometer { depth } => odometer_tower(system, *depth, h, eps, offset),
    }
}

fn lift(t: RokhlinTower, extra: usize) -> RokhlinTower {
    let tail = Cuboid::full(extra);
    let columns = t
        .columns
        .into_iter()
        .map(|c| Column {
            base: c.base.product(&tail),
            offsets: c
                .offsets
                .into_iter()
                .map(|o| o.into_iter().chain(std::iter::repeat_n(0, extra)).collect())
                .collect(),
            values: Vec::new(),
            in_c: Vec::new(),
        })
        .collect();
    RokhlinTower {
        dim: t.dim + extra,
        height: t.height,
        columns,
        kac_heights: t.kac_heights,
        kac_base: t.kac_base,
        purified: false,
    }
}

fn rotation_tower(system: &BaseSystem, alpha: u64, h: usize, eps: f64, offset: u64) -> Result<RokhlinTower> {
    let map = system.exact_map()?;
    let qs = convergent_denominators(alpha, 64);
    let mut best = 0.0f64;
    for k in 1..qs.len().saturating_sub(1) {
        let w = norm_multiple(alpha, qs[k]);
        if w < 1e-15 {
            break;
        }
        let width = (w * 18_446_744_073_709_551_616.0) as u128;
        if width == 0 {
            break;
        }
        // Return times are at most q_k + q_{k+1}; cheap bound for the upper
        // end of the scan.
        let bound = qs[k] + qs[k + 1] + 2;
        if (bound as f64) * 1.0 > 5e7 {
            break;
        }
        if (qs[k + 1] as usize) < h {
            continue;
        }
        let lo = (offset as u128).min(ONE - width);
        let base = Cuboid::interval(Interval::new(lo, lo + width));
        let kac = kac_partition(system, &base, bound)?;
        let cov = predicted_coverage(&kac, h);
        best = best.max(cov);
        if cov >= 1.0 - eps {
            let columns = chop(map, &kac, h, DEFAULT_COLUMN_CAP)?;
            return Ok(RokhlinTower {
                dim: 1,
                height: h,
                columns,
                kac_heights: distinct_heights(&kac),
                kac_base: base.volume(),
                purified: false,
            });
        }
    }
    Err(LabError::UnattainableCoverage {
        requested: 1.0 - eps,
        best,
    })
}

fn odometer_tower(system: &BaseSystem, depth: u32, h: usize, eps: f64, offset: u64) -> Result<RokhlinTower> {
    let map = system.exact_map()?;
    let mut best = 0.0f64;
    for k in 0..=depth {
        let period = 1usize << k;
        if period < h {
            continue;
        }
        let cov = ((period / h) * h) as f64 / period as f64;
        best = best.max(cov);
        if cov >= 1.0 - eps {
            let width = ONE >> k;
            let lo = (offset as u128 / width) * width;
            let base = Cuboid::interval(Interval::new(lo, lo + width));
            let kac = kac_partition(system, &base, period as u64 + 1)?;
            let columns = chop(map, &kac, h, DEFAULT_COLUMN_CAP)?;
            return Ok(RokhlinTower {
                dim: 1,
                height: h,
                columns,
                kac_heights: distinct_heights(&kac),
                kac_base: base.volume(),
                purified: false,
            });
        }
    }
    Err(LabError::UnattainableCoverage {
        requested: 1.0 - eps,
        best,
    })
}

/// Refines the columns so that on every level the cocycle is constant and
/// the level lies inside or outside `c`.
pub fn purify(tower: &RokhlinTower, system: &BaseSystem, phi0: &Cocycle, c: &BoxSet, cap: usize) -> Result<RokhlinTower> {
    if phi0.dim() != tower.dim || c.dim() != tower.dim || system.dim() != tower.dim {
        return Err(LabError::DomainMismatch("tower, cocycle and set live on different spaces".into()));
    }
    if !phi0.is_finite_valued() {
        return Err(LabError::Precondition("purification needs a finite-valued cocycle".into()));
    }
    let map = system.exact_map()?;
    let cidx: BoxIndex<()> = BoxIndex::new(c.boxes().iter().map(|b| (b.clone(), ())).collect());
    let mut split = Vec::new();
    let mut refine = |b: &Cuboid, out: &mut Vec<(Cuboid, Tag)>| -> Result<()> {
        split.clear();
        phi0.split(b, &mut split)?;
        for (part, v) in split.drain(..) {
            let mut hit = Vec::new();
            let rest = carve(&cidx, &part, &mut hit);
            for (x, _) in hit {
                out.push((x, Some((v.clone(), true))));
            }
            for x in rest {
                out.push((x, Some((v.clone(), false))));
            }
        }
        Ok(())
    };
    let mut columns = Vec::new();
    for col in &tower.columns {
        grow_columns(map, col.base.clone(), tower.height, &mut refine, &mut columns, cap)?;
    }
    Ok(RokhlinTower {
        dim: tower.dim,
        height: tower.height,
        columns,
        kac_heights: tower.kac_heights.clone(),
        kac_base: tower.kac_base,
        purified: true,
    })
}

/// Counts of reference-set levels in the two halves of each column.
#[derive(Clone, Debug, PartialEq)]
pub struct CLevelStats {
    /// `(lower count, upper count, column mass)`.
    pub per_column: Vec<(usize, usize, f64)>,
    /// Mass fraction of the tower in columns where both counts reach
    /// `mu(C) N (1 - slack) / 2`.
    pub aggregate_fraction: f64,
}

pub fn c_level_stats(tower: &RokhlinTower, c_measure: f64, slack: f64) -> Result<CLevelStats> {
    if !tower.purified {
        return Err(LabError::Precondition("tower is not purified".into()));
    }
    let n = tower.half();
    let need = 0.5 * c_measure * n as f64 * (1.0 - slack);
    let mut per_column = Vec::with_capacity(tower.columns.len());
    let (mut good, mut total) = (0.0, 0.0);
    for col in &tower.columns {
        let lo = tower.lower().filter(|&i| col.in_c[i]).count();
        let up = tower.upper().filter(|&i| col.in_c[i]).count();
        let m = col.mass();
        per_column.push((lo, up, m));
        total += m;
        if lo as f64 >= need && up as f64 >= need {
            good += m;
        }
    }
    Ok(CLevelStats {
        per_column,
        aggregate_fraction: if total > 0.0 { good / total } else { 0.0 },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairingMode {
    /// The i-th lower C-level of a column swaps with its i-th upper C-level.
    CMatched,
    /// One uniform permutation for all columns: lower level `j` swaps with
    /// upper level `pi(j)`.
    UniformPermutation,
}

impl std::str::FromStr for PairingMode {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c-matched" => Ok(PairingMode::CMatched),
            "uniform-permutation" => Ok(PairingMode::UniformPermutation),
            _ => Err(LabError::Parse {
                what: "pairing mode",
                input: s.into(),
                reason: "expected c-matched or uniform-permutation".into(),
            }),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PairingInvolution {
    pub tau: FiniteFullGroupElement,
    /// The permutation in uniform mode: lower level `j` goes to upper level
    /// `h - N + pi[j]`.
    pub pi: Option<Vec<usize>>,
    /// `(column, lower level, upper level)` for every swap performed.
    pub matched: Vec<(usize, usize, usize)>,
}

/// Builds the swap involution. C-membership comes from the purification
/// flags, so c-matched mode needs a purified tower.
pub fn random_pairing<R: Rng + ?Sized>(tower: &RokhlinTower, rng: &mut R, mode: PairingMode) -> Result<PairingInvolution> {
    let n = tower.half();
    let up0 = tower.height - n;
    let mut matched = Vec::new();
    let mut pi_out = None;
    match mode {
        PairingMode::CMatched => {
            if !tower.purified {
                return Err(LabError::Precondition("c-matched pairing needs a purified tower".into()));
            }
            for (ci, col) in tower.columns.iter().enumerate() {
                let lows = tower.lower().filter(|&i| col.in_c[i]);
                let ups = tower.upper().filter(|&i| col.in_c[i]);
                matched.extend(lows.zip(ups).map(|(j, u)| (ci, j, u)));
            }
        }
        PairingMode::UniformPermutation => {
            let mut pi: Vec<usize> = (0..n).collect();
            pi.shuffle(rng);
            for ci in 0..tower.columns.len() {
                matched.extend((0..n).map(|j| (ci, j, up0 + pi[j])));
            }
            pi_out = Some(pi);
        }
    }
    let mut cells = Vec::with_capacity(2 * matched.len());
    for &(ci, j, u) in &matched {
        let col = &tower.columns[ci];
        let s = (u - j) as i64;
        cells.push((col.level(j), s));
        cells.push((col.level(u), -s));
    }
    Ok(PairingInvolution {
        tau: FiniteFullGroupElement::unchecked(tower.dim, cells),
        pi: pi_out,
        matched,
    })
}

/// Rounds a shift vector to reals, for dumps and diagnostics.
pub fn shift_to_unit(s: &Shift) -> SmallVec<[f64; 4]> {
    s.iter().map(|&x| crate::boxes::to_unit(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::Group;
    use crate::rng::seeded;
    use crate::systems::{golden_rotation, make_odometer};

    #[test]
    fn odometer_tower_is_exact() {
        let o = make_odometer(20).unwrap();
        let t = build_tower(&o, 1 << 10, 1e-9).unwrap();
        assert_eq!(t.residual(), 0.0);
        assert_eq!(t.kac_heights, vec![1024]);
        assert!(t.levels_disjoint());
    }

    #[test]
    fn golden_kac_has_two_heights() {
        let g = golden_rotation();
        let alpha = g.alpha().unwrap();
        let q = convergent_denominators(alpha, 10);
        let w = norm_multiple(alpha, q[5]);
        let base = Cuboid::interval(Interval::from_unit(0.0, w).unwrap());
        let kac = kac_partition(&g, &base, 100).unwrap();
        let hs = distinct_heights(&kac);
        assert_eq!(hs.len(), 2, "{hs:?}");
        let total: f64 = kac.iter().map(|(p, t)| p.volume() * *t as f64).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn golden_small_tower() {
        let g = golden_rotation();
        let t = build_tower(&g, 5, 0.5).unwrap();
        assert!(t.coverage() >= 0.5);
        assert!(t.levels_disjoint());
    }

    #[test]
    fn purify_counts() {
        let o = make_odometer(20).unwrap();
        let t = build_tower(&o, 4, 1e-9).unwrap();
        let one = Cocycle::identity(1, Group::Cyclic(2));
        let whole = BoxSet::full(1);
        let p = purify(&t, &o, &one, &whole, DEFAULT_COLUMN_CAP).unwrap();
        assert_eq!(p.columns.len(), t.columns.len());
        assert_eq!(p.classes(), 1);
        let half = BoxSet::from_disjoint(1, vec![Cuboid::interval(Interval::from_unit(0.0, 0.5).unwrap())]);
        let p = purify(&t, &o, &one, &half, DEFAULT_COLUMN_CAP).unwrap();
        assert!(p.classes() <= 16);
        let stats = c_level_stats(&p, 0.5, 0.5).unwrap();
        assert_eq!(stats.per_column.len(), p.columns.len());
    }

    #[test]
    fn uniform_pairing_with_one_level() {
        let o = make_odometer(10).unwrap();
        let t = build_tower(&o, 3, 0.3).unwrap();
        let mut rng = seeded(1);
        let p = random_pairing(&t, &mut rng, PairingMode::UniformPermutation).unwrap();
        assert_eq!(p.pi, Some(vec![0]));
        assert!(p.matched.iter().all(|&(_, j, u)| j == 0 && u == 2));
        p.tau.validate(&o).unwrap();
    }
}
