//! Cocycles `Y -> G` on box-partitioned domains, the cocycle metric, and
//! elements of the finite full group.

use crate::boxes::{carve, from_unit, len_to_unit, pairwise_disjoint, remainder, to_unit, BoxIndex, BoxSet, Cuboid, Interval, ONE};
use crate::error::{invalid, LabError, Result};
use crate::groups::{Element, Group};
use crate::rng::mix64;
use crate::systems::{BaseSystem, Shift};
use crate::walk::{self, TrackedBox};
use smallvec::SmallVec;
use std::sync::Arc;

/// How a tuple component reads its argument from the domain point.
#[derive(Clone, Debug, PartialEq)]
pub enum PointMap {
    Identity,
    /// Picks the listed coordinates, in order.
    Select(Vec<usize>),
    /// Adds `shift` to every coordinate (zeros leave a coordinate alone).
    Translate(Shift),
}

impl PointMap {
    fn apply(&self, y: &[u64]) -> SmallVec<[u64; 8]> {
        match self {
            PointMap::Identity => SmallVec::from_slice(y),
            PointMap::Select(idx) => idx.iter().map(|&i| y[i]).collect(),
            PointMap::Translate(s) => y.iter().zip(s).map(|(a, b)| a.wrapping_add(*b)).collect(),
        }
    }
}

/// Grid override used for random cocycles: inside `region`, the value on the
/// dyadic cell `(p, q)` is `values[draw(seed, p, q)]`.
#[derive(Clone, Debug)]
pub struct GridPatch {
    pub base: Cocycle,
    pub region: BoxIndex<()>,
    /// Depth of the dyadic partition of coordinate 0.
    pub p_bits: u32,
    /// Depth per axis of the dyadic partition of coordinates `1..`.
    pub q_bits: u32,
    pub values: Vec<Element>,
    pub seed: u64,
}

/// Index of the value drawn on grid cell `(p, q)` among `m` choices.
pub fn grid_draw(seed: u64, p: u64, q: u64, m: usize) -> usize {
    let h = mix64(seed ^ mix64(p.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ mix64(q.wrapping_add(0xD1B5_4A32_D192_ED03))));
    ((h as u128 * m as u128) >> 64) as usize
}

/// Dyadic cell index of `x` at depth `bits`.
pub fn dyadic_index(x: u64, bits: u32) -> u64 {
    if bits == 0 {
        0
    } else {
        x >> (64 - bits)
    }
}

impl GridPatch {
    fn q_index(&self, y: &[u64]) -> u64 {
        y[1..]
            .iter()
            .fold(0u64, |acc, &c| (acc << self.q_bits) | dyadic_index(c, self.q_bits))
    }

    pub fn draw_at(&self, y: &[u64]) -> &Element {
        let p = dyadic_index(y[0], self.p_bits);
        &self.values[grid_draw(self.seed, p, self.q_index(y), self.values.len())]
    }
}

#[derive(Clone, Debug)]
pub enum CocycleKind {
    /// Finitely many cells covering the domain.
    Cells(BoxIndex<Element>),
    /// `cells` take precedence over `base`.
    Override { base: Cocycle, cells: BoxIndex<Element> },
    /// `phi(y) = y[offset..offset+d]` into `T^d`.
    Coordinate { offset: usize },
    Grid(GridPatch),
    /// `(c_1(m_1 y), c_2(m_2 y), ...)` into the product of the targets.
    Tuple(Vec<(Cocycle, PointMap)>),
}

/// A measurable map from `[0,1)^dim` into `target`.
#[derive(Clone, Debug)]
pub struct Cocycle {
    dim: usize,
    target: Group,
    kind: Arc<CocycleKind>,
}

impl Cocycle {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn target(&self) -> &Group {
        &self.target
    }

    pub fn kind(&self) -> &CocycleKind {
        &self.kind
    }

    fn wrap(dim: usize, target: Group, kind: CocycleKind) -> Self {
        Cocycle {
            dim,
            target,
            kind: Arc::new(kind),
        }
    }

    /// `phi ≡ g`.
    pub fn constant(dim: usize, target: Group, g: Element) -> Result<Self> {
        if !target.contains(&g) {
            return Err(LabError::NotInGroup(target.format_element(&g)));
        }
        Ok(Cocycle::wrap(
            dim,
            target,
            CocycleKind::Cells(BoxIndex::new(vec![(Cuboid::full(dim), g)])),
        ))
    }

    /// `phi ≡ e`.
    pub fn identity(dim: usize, target: Group) -> Self {
        let e = target.identity();
        Cocycle::constant(dim, target, e).expect("identity is a member")
    }

    /// Finitely many disjoint cells; the uncovered part takes `fallback`.
    pub fn from_cells(dim: usize, target: Group, cells: Vec<(Cuboid, Element)>, fallback: Element) -> Result<Self> {
        for (c, g) in &cells {
            if c.dim() != dim {
                return Err(LabError::DomainMismatch(format!("cell of dimension {} in a {dim}-dimensional domain", c.dim())));
            }
            if !target.contains(g) {
                return Err(LabError::NotInGroup(target.format_element(g)));
            }
        }
        if !target.contains(&fallback) {
            return Err(LabError::NotInGroup(target.format_element(&fallback)));
        }
        let boxes: Vec<Cuboid> = cells.iter().map(|c| c.0.clone()).collect();
        if !pairwise_disjoint(&boxes) {
            return Err(invalid("cells", "cells overlap"));
        }
        let mut all = cells;
        for gap in remainder_general(&Cuboid::full(dim), &boxes) {
            all.push((gap, fallback.clone()));
        }
        Ok(Cocycle::wrap(dim, target, CocycleKind::Cells(BoxIndex::new(all))))
    }

    /// `base` overridden on disjoint `cells`.
    pub fn with_override(base: &Cocycle, cells: Vec<(Cuboid, Element)>) -> Result<Self> {
        let boxes: Vec<Cuboid> = cells.iter().map(|c| c.0.clone()).collect();
        if !pairwise_disjoint(&boxes) {
            return Err(invalid("cells", "override cells overlap"));
        }
        if cells.iter().any(|(c, g)| c.dim() != base.dim || !base.target.contains(g)) {
            return Err(LabError::DomainMismatch("override cell does not fit the cocycle".into()));
        }
        Ok(Cocycle::wrap(
            base.dim,
            base.target.clone(),
            CocycleKind::Override {
                base: base.clone(),
                cells: BoxIndex::new(cells),
            },
        ))
    }

    /// `phi(y) = (y_offset, ..., y_{offset+d-1})` into `T^d`.
    pub fn coordinate(dim: usize, offset: usize, d: usize) -> Result<Self> {
        if offset + d > dim || d == 0 {
            return Err(LabError::DomainMismatch(format!("coordinates {offset}..{} of a {dim}-dimensional domain", offset + d)));
        }
        Ok(Cocycle::wrap(dim, Group::Torus(d), CocycleKind::Coordinate { offset }))
    }

    pub fn grid(patch: GridPatch) -> Result<Self> {
        if patch.values.is_empty() {
            return Err(invalid("values", "grid needs at least one value"));
        }
        let (dim, target) = (patch.base.dim, patch.base.target.clone());
        if patch.values.iter().any(|v| !target.contains(v)) {
            return Err(LabError::NotInGroup("grid value".into()));
        }
        if (dim - 1) as u32 * patch.q_bits > 63 || patch.p_bits > 63 {
            return Err(invalid("grid", "grid too fine"));
        }
        Ok(Cocycle::wrap(dim, target, CocycleKind::Grid(patch)))
    }

    /// Tuple cocycle; the target is the right-nested product of the parts'
    /// targets.
    pub fn tuple(dim: usize, parts: Vec<(Cocycle, PointMap)>) -> Result<Self> {
        if parts.is_empty() {
            return Err(invalid("parts", "tuple needs at least one part"));
        }
        for (c, m) in &parts {
            let ok = match m {
                PointMap::Identity => c.dim == dim,
                PointMap::Select(idx) => idx.len() == c.dim && idx.iter().all(|&i| i < dim),
                PointMap::Translate(s) => s.len() == dim && c.dim == dim,
            };
            if !ok {
                return Err(LabError::DomainMismatch("tuple part does not fit the domain".into()));
            }
        }
        let target = parts
            .iter()
            .rev()
            .map(|(c, _)| c.target.clone())
            .reduce(|acc, g| Group::product(g, acc))
            .unwrap();
        Ok(Cocycle::wrap(dim, target, CocycleKind::Tuple(parts)))
    }

    /// Value at a point.
    pub fn eval(&self, y: &[u64]) -> Element {
        match &*self.kind {
            CocycleKind::Cells(idx) => idx
                .locate(y)
                .map(|e| e.1.clone())
                .unwrap_or_else(|| self.target.identity()),
            CocycleKind::Override { base, cells } => match cells.locate(y) {
                Some((_, g)) => g.clone(),
                None => base.eval(y),
            },
            CocycleKind::Coordinate { offset } => {
                Element::from_slice(&y[*offset..*offset + self.target.arity()])
            }
            CocycleKind::Grid(p) => {
                if p.region.locate(y).is_some() {
                    p.draw_at(y).clone()
                } else {
                    p.base.eval(y)
                }
            }
            CocycleKind::Tuple(parts) => {
                let mut out = Element(SmallVec::new());
                for (c, m) in parts {
                    out.0.extend_from_slice(&c.eval(&m.apply(y)).0);
                }
                out
            }
        }
    }

    /// Whether [`Cocycle::split`] is available.
    pub fn is_finite_valued(&self) -> bool {
        match &*self.kind {
            CocycleKind::Cells(_) => true,
            CocycleKind::Override { base, .. } => base.is_finite_valued(),
            CocycleKind::Coordinate { .. } => false,
            CocycleKind::Grid(p) => p.base.is_finite_valued(),
            CocycleKind::Tuple(parts) => parts.iter().all(|(c, _)| c.is_finite_valued()),
        }
    }

    /// Partition of `b` into boxes on which the cocycle is constant.
    pub fn split(&self, b: &Cuboid, out: &mut Vec<(Cuboid, Element)>) -> Result<()> {
        match &*self.kind {
            CocycleKind::Cells(idx) => {
                for (c, v) in idx.overlapping(b) {
                    if let Some(x) = b.intersect(c) {
                        out.push((x, v.clone()));
                    }
                }
                Ok(())
            }
            CocycleKind::Override { base, cells } => {
                for rest in carve(cells, b, out) {
                    base.split(&rest, out)?;
                }
                Ok(())
            }
            CocycleKind::Coordinate { .. } => Err(LabError::Unsupported(
                "coordinate cocycle has no finite partition; discretize it first".into(),
            )),
            CocycleKind::Grid(p) => {
                let mut inside = Vec::new();
                for rest in carve(&p.region, b, &mut inside) {
                    p.base.split(&rest, out)?;
                }
                for (part, _) in inside {
                    for cell in grid_cells(&part, p.p_bits, p.q_bits) {
                        let v = p.draw_at(&cell.corner()).clone();
                        out.push((cell, v));
                    }
                }
                Ok(())
            }
            CocycleKind::Tuple(parts) => {
                let mut acc: Vec<(Cuboid, Element)> = vec![(b.clone(), Element(SmallVec::new()))];
                for (c, m) in parts {
                    let pieces = pull_back_split(c, m, b)?;
                    let idx = BoxIndex::new(pieces);
                    let mut next = Vec::with_capacity(acc.len());
                    for (a, va) in &acc {
                        for (p, vp) in idx.overlapping(a) {
                            if let Some(x) = a.intersect(p) {
                                next.push((x, Element::concat(va, vp)));
                            }
                        }
                    }
                    acc = next;
                }
                out.extend(acc);
                Ok(())
            }
        }
    }

    /// The full cell list over the domain.
    pub fn cells(&self) -> Result<Vec<(Cuboid, Element)>> {
        let mut out = Vec::new();
        self.split(&Cuboid::full(self.dim), &mut out)?;
        Ok(out)
    }

    /// Piecewise-constant approximation on the dyadic grid of depth `bits`
    /// along the coordinates the cocycle reads, using cell midpoints.
    pub fn discretize(&self, bits: u32) -> Result<Cocycle> {
        if self.is_finite_valued() {
            return Ok(self.clone());
        }
        match &*self.kind {
            CocycleKind::Coordinate { offset } => {
                let d = self.target.arity();
                if bits as usize * d > 22 || bits == 0 || bits > 40 {
                    return Err(invalid("bits", "discretization grid too fine or empty"));
                }
                let n = 1u64 << bits;
                let width = ONE >> bits;
                let mut cells = Vec::with_capacity((n as usize).pow(d as u32));
                let total = n.pow(d as u32);
                for idx in 0..total {
                    let mut c = Cuboid::full(self.dim);
                    let mut val = SmallVec::new();
                    let mut rest = idx;
                    for axis in 0..d {
                        let j = (rest % n) as u128;
                        rest /= n;
                        c.sides[offset + axis] = Interval::new(j * width, (j + 1) * width);
                        val.push((j * width + width / 2) as u64);
                    }
                    cells.push((c, Element(val)));
                }
                Ok(Cocycle::wrap(self.dim, self.target.clone(), CocycleKind::Cells(BoxIndex::new(cells))))
            }
            CocycleKind::Tuple(parts) => {
                let parts = parts
                    .iter()
                    .map(|(c, m)| Ok((c.discretize(bits)?, m.clone())))
                    .collect::<Result<Vec<_>>>()?;
                Cocycle::tuple(self.dim, parts)
            }
            CocycleKind::Override { base, cells } => Cocycle::with_override(&base.discretize(bits)?, cells.entries().to_vec()),
            CocycleKind::Grid(p) => {
                let mut q = p.clone();
                q.base = p.base.discretize(bits)?;
                Cocycle::grid(q)
            }
            CocycleKind::Cells(_) => unreachable!(),
        }
    }

    /// Line-oriented dump: one cell per line, the side endpoints followed by
    /// the value literal. For a one-dimensional domain this is `lo hi value`.
    pub fn to_text(&self) -> Result<String> {
        let mut cells = self.cells()?;
        cells.sort_by(|a, b| a.0.cmp(&b.0));
        let mut s = String::new();
        for (c, g) in cells {
            for side in &c.sides {
                s.push_str(&format!("{} {} ", len_to_unit(side.lo), len_to_unit(side.hi)));
            }
            s.push_str(&self.target.format_element(&g));
            s.push('\n');
        }
        Ok(s)
    }

    /// Parses the format written by [`Cocycle::to_text`]. Blank lines and
    /// `#` comments are skipped; gaps take the identity.
    pub fn from_text(dim: usize, target: Group, text: &str) -> Result<Cocycle> {
        let mut cells = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 2 * dim + 1 {
                return Err(LabError::Parse {
                    what: "cocycle cell",
                    input: line.to_string(),
                    reason: format!("line {}: expected {} fields", lineno + 1, 2 * dim + 1),
                });
            }
            let mut sides = Vec::new();
            for a in 0..dim {
                let lo: f64 = toks[2 * a].parse().map_err(|_| parse_line(line, lineno, "bad endpoint"))?;
                let hi: f64 = toks[2 * a + 1].parse().map_err(|_| parse_line(line, lineno, "bad endpoint"))?;
                sides.push(Interval::from_unit(lo, hi).ok_or_else(|| parse_line(line, lineno, "empty side"))?);
            }
            let g = target.parse_element(toks[2 * dim])?;
            cells.push((Cuboid::new(sides), g));
        }
        let e = target.identity();
        Cocycle::from_cells(dim, target, cells, e)
    }
}

fn parse_line(line: &str, lineno: usize, reason: &str) -> LabError {
    LabError::Parse {
        what: "cocycle cell",
        input: line.to_string(),
        reason: format!("line {}: {reason}", lineno + 1),
    }
}

fn remainder_general(b: &Cuboid, parts: &[Cuboid]) -> Vec<Cuboid> {
    let inside: Vec<Cuboid> = parts.iter().filter_map(|p| p.intersect(b)).collect();
    remainder(b, &inside)
}

/// Splits `b` along the dyadic grid (depth `p_bits` on axis 0, `q_bits` on
/// the others).
fn grid_cells(b: &Cuboid, p_bits: u32, q_bits: u32) -> Vec<Cuboid> {
    let mut out = vec![b.clone()];
    for axis in 0..b.dim() {
        let bits = if axis == 0 { p_bits } else { q_bits };
        let w = ONE >> bits;
        let mut next = Vec::new();
        for c in out {
            let side = c.sides[axis];
            let mut lo = side.lo;
            while lo < side.hi {
                let hi = ((lo / w + 1) * w).min(side.hi);
                let mut x = c.clone();
                x.sides[axis] = Interval::new(lo, hi);
                next.push(x);
                lo = hi;
            }
        }
        out = next;
    }
    out
}

/// Splits the part cocycle over the image of `b` and pulls the cells back
/// into `b`'s coordinates.
fn pull_back_split(c: &Cocycle, m: &PointMap, b: &Cuboid) -> Result<Vec<(Cuboid, Element)>> {
    let mut out = Vec::new();
    match m {
        PointMap::Identity => c.split(b, &mut out)?,
        PointMap::Select(idx) => {
            let q = Cuboid::new(idx.iter().map(|&i| b.sides[i]));
            let mut tmp = Vec::new();
            c.split(&q, &mut tmp)?;
            for (p, v) in tmp {
                let mut x = b.clone();
                for (j, &i) in idx.iter().enumerate() {
                    // Repeated indices must agree on the intersection.
                    match x.sides[i].intersect(&p.sides[j]) {
                        Some(s) => x.sides[i] = s,
                        None => continue,
                    }
                }
                if idx.iter().enumerate().all(|(j, &i)| p.sides[j].overlaps(&x.sides[i])) {
                    out.push((x, v));
                }
            }
        }
        PointMap::Translate(s) => {
            let neg: Shift = s.iter().map(|x| x.wrapping_neg()).collect();
            for q in b.translate(s) {
                let mut tmp = Vec::new();
                c.split(&q, &mut tmp)?;
                for (p, v) in tmp {
                    for back in p.translate(&neg) {
                        if let Some(x) = back.intersect(b) {
                            out.push((x, v.clone()));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `phi_n(y) = phi(T^{n-1} y) ... phi(y)` for `n > 0`, the identity for
/// `n = 0`, and `phi_{-n}(y) = phi_n(T^{-n} y)^{-1}`.
pub fn cocycle_power(phi: &Cocycle, base: &BaseSystem, n: i64, y: &[u64]) -> Element {
    let g = phi.target();
    let mut p: SmallVec<[u64; 8]> = SmallVec::from_slice(y);
    let mut v = g.identity();
    if n >= 0 {
        for _ in 0..n {
            v = g.compose(&phi.eval(&p), &v);
            base.forward(&mut p);
        }
    } else {
        for _ in 0..(-n) {
            base.backward(&mut p);
            v = g.compose(&g.inverse(&phi.eval(&p)), &v);
        }
    }
    v
}

/// Exact `phi_n` on a box: disjoint origin pieces of `b` with their values.
///
/// Each tracked box is moved once per step; the values live on a partition
/// of its origin, and steps on which the cocycle is constant only update a
/// pending left factor.
pub fn power_pieces(phi: &Cocycle, base: &BaseSystem, n: i64, b: &Cuboid) -> Result<Vec<(Cuboid, Element)>> {
    struct Walker {
        tb: TrackedBox,
        pending: Element,
        pieces: Vec<(Cuboid, Element)>,
    }
    let fwd = base.exact_map()?;
    let bwd = base.exact_inverse()?;
    let g = phi.target();
    let mut state = vec![Walker {
        tb: TrackedBox::start(b.clone()),
        pending: g.identity(),
        pieces: vec![(b.clone(), g.identity())],
    }];
    let mut split = Vec::new();
    let mut moved = Vec::new();
    // Left-multiplies the values by phi (or its inverse) read at the
    // walker's current position.
    let mut absorb = |w: &mut Walker, invert: bool| -> Result<()> {
        split.clear();
        phi.split(&w.tb.cur, &mut split)?;
        let val = |v: &Element| if invert { g.inverse(v) } else { v.clone() };
        if split.len() == 1 {
            w.pending = g.compose(&val(&split[0].1), &w.pending);
            return Ok(());
        }
        let mut next = Vec::with_capacity(w.pieces.len() + split.len());
        for (part, v) in split.drain(..) {
            let c = g.compose(&val(&v), &w.pending);
            for sub in w.tb.narrow(part) {
                let o = sub.origin();
                for (piece, pv) in &w.pieces {
                    if let Some(x) = piece.intersect(&o) {
                        next.push((x, g.compose(&c, pv)));
                    }
                }
            }
        }
        w.pieces = next;
        w.pending = g.identity();
        Ok(())
    };
    let mut step = |w: Walker, map, out: &mut Vec<Walker>| {
        moved.clear();
        walk::advance(map, &w.tb, &mut moved);
        if moved.len() == 1 {
            out.push(Walker {
                tb: moved.pop().unwrap(),
                ..w
            });
            return;
        }
        for child in moved.drain(..) {
            let o = child.origin();
            let pieces: Vec<(Cuboid, Element)> = w
                .pieces
                .iter()
                .filter_map(|(p, v)| p.intersect(&o).map(|x| (x, v.clone())))
                .collect();
            if !pieces.is_empty() {
                out.push(Walker {
                    tb: child,
                    pending: w.pending.clone(),
                    pieces,
                });
            }
        }
    };
    for _ in 0..n.unsigned_abs() {
        let mut next = Vec::with_capacity(state.len());
        for mut w in state {
            if n > 0 {
                absorb(&mut w, false)?;
                step(w, fwd, &mut next);
            } else {
                let mut tmp = Vec::new();
                step(w, bwd, &mut tmp);
                for mut c in tmp {
                    absorb(&mut c, true)?;
                    next.push(c);
                }
            }
        }
        state = next;
    }
    Ok(state
        .into_iter()
        .flat_map(|w| {
            let p = w.pending;
            w.pieces.into_iter().map(move |(x, v)| (x, g.compose(&p, &v)))
        })
        .collect())
}

/// `inf { eps : nu(d_G(phi, psi) > eps) < eps }`, computed exactly over the
/// joint cell partition.
pub fn cocycle_metric(phi: &Cocycle, psi: &Cocycle) -> Result<f64> {
    if phi.dim != psi.dim {
        return Err(LabError::DomainMismatch("cocycles live on different domains".into()));
    }
    if phi.target != psi.target {
        return Err(LabError::DomainMismatch("cocycles have different targets".into()));
    }
    let g = &phi.target;
    let a = BoxIndex::new(phi.cells()?);
    let mut masses: Vec<(f64, f64)> = Vec::new();
    for (c, v) in psi.cells()? {
        for (c2, w) in a.overlapping(&c) {
            if let Some(x) = c.intersect(c2) {
                masses.push((g.dist(&v, w), x.volume()));
            }
        }
    }
    Ok(metric_from_masses(masses))
}

/// Breakpoint scan over the distribution of distances: `masses` lists
/// `(distance, mass)`.
pub fn metric_from_masses(mut masses: Vec<(f64, f64)>) -> f64 {
    masses.push((0.0, 0.0));
    masses.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut levels: Vec<(f64, f64)> = Vec::new();
    for (d, m) in masses {
        match levels.last_mut() {
            Some(last) if last.0 == d => last.1 += m,
            _ => levels.push((d, m)),
        }
    }
    // tail[j] = mass strictly above levels[j-1], i.e. at levels j..
    let mut tail = vec![0.0; levels.len() + 1];
    for j in (0..levels.len()).rev() {
        tail[j] = tail[j + 1] + levels[j].1;
    }
    let mut best = f64::INFINITY;
    for j in 0..levels.len() {
        let u = levels[j].0;
        let t = tail[j + 1];
        let next = levels.get(j + 1).map_or(f64::INFINITY, |l| l.0);
        let cand = u.max(t);
        if cand < next {
            best = best.min(cand);
        }
    }
    best
}

/// Element of the finite full group: `y -> T^{s_j} y` on cell `P_j`, the
/// identity off the cells.
#[derive(Clone, Debug)]
pub struct FiniteFullGroupElement {
    dim: usize,
    cells: BoxIndex<i64>,
}

impl FiniteFullGroupElement {
    pub fn identity(dim: usize) -> Self {
        FiniteFullGroupElement {
            dim,
            cells: BoxIndex::new(Vec::new()),
        }
    }

    /// Builds and validates: cells disjoint, images disjoint and inside the
    /// support, so the map is a measure-preserving bijection.
    pub fn new(base: &BaseSystem, cells: Vec<(Cuboid, i64)>) -> Result<Self> {
        let el = FiniteFullGroupElement::unchecked(base.dim(), cells);
        el.validate(base)?;
        Ok(el)
    }

    pub fn unchecked(dim: usize, cells: Vec<(Cuboid, i64)>) -> Self {
        FiniteFullGroupElement {
            dim,
            cells: BoxIndex::new(cells),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[(Cuboid, i64)] {
        self.cells.entries()
    }

    pub fn exponent_at(&self, y: &[u64]) -> i64 {
        self.cells.locate(y).map_or(0, |e| e.1)
    }

    pub fn apply(&self, base: &BaseSystem, y: &mut [u64]) {
        let s = self.exponent_at(y);
        base.iterate(y, s);
    }

    /// Images `T^{s_j} P_j` as disjoint box lists.
    pub fn images(&self, base: &BaseSystem) -> Result<Vec<Cuboid>> {
        let fwd = base.exact_map()?;
        let bwd = base.exact_inverse()?;
        let mut out = Vec::new();
        for (c, s) in self.cells.entries() {
            out.extend(walk::push(if *s >= 0 { fwd } else { bwd }, c, s.unsigned_abs()).into_iter().map(|t| t.cur));
        }
        Ok(out)
    }

    pub fn support(&self) -> BoxSet {
        BoxSet::from_disjoint(self.dim, self.cells.entries().iter().map(|c| c.0.clone()).collect())
    }

    pub fn validate(&self, base: &BaseSystem) -> Result<()> {
        let boxes: Vec<Cuboid> = self.cells.entries().iter().map(|c| c.0.clone()).collect();
        if !pairwise_disjoint(&boxes) {
            return Err(invalid("tau", "cells overlap"));
        }
        let images = self.images(base)?;
        if !pairwise_disjoint(&images) {
            return Err(invalid("tau", "images overlap"));
        }
        let support = self.support();
        let img = BoxSet::from_disjoint(self.dim, images);
        let inside = img.intersect(&support).measure();
        if (inside - support.measure()).abs() > 1e-12 || (img.measure() - support.measure()).abs() > 1e-12 {
            return Err(invalid("tau", "images do not tile the support"));
        }
        Ok(())
    }

    /// Whether `tau(C) = C`, checked exactly.
    pub fn preserves(&self, base: &BaseSystem, c: &BoxSet) -> Result<bool> {
        let fwd = base.exact_map()?;
        let bwd = base.exact_inverse()?;
        let idx = BoxIndex::new(c.boxes().iter().map(|b| (b.clone(), ())).collect());
        for (cell, s) in self.cells.entries() {
            for part in c.intersect_box(cell).into_boxes() {
                let imgs = walk::push(if *s >= 0 { fwd } else { bwd }, &part, s.unsigned_abs());
                for t in imgs {
                    let inside: f64 = idx
                        .overlapping(&t.cur)
                        .filter_map(|(b, _)| b.intersect(&t.cur))
                        .map(|x| x.volume())
                        .sum();
                    if (inside - t.cur.volume()).abs() > 1e-15 {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }
}

/// `phi_tau(y) = phi_{s(y)}(y)`.
pub fn tau_twist(phi: &Cocycle, tau: &FiniteFullGroupElement, base: &BaseSystem, y: &[u64]) -> Element {
    cocycle_power(phi, base, tau.exponent_at(y), y)
}

/// Parses a cocycle literal over a `dim`-dimensional base:
/// `const:g`, `identity-coord`, or `cells:[(a,b):g,...]` (one-dimensional).
pub fn parse_cocycle(s: &str, dim: usize, target: &Group) -> Result<Cocycle> {
    let t = s.trim();
    let err = |r: &str| LabError::Parse {
        what: "cocycle",
        input: s.to_string(),
        reason: r.to_string(),
    };
    if let Some(g) = t.strip_prefix("const:") {
        return Cocycle::constant(dim, target.clone(), target.parse_element(g)?);
    }
    if t == "identity-coord" {
        let Group::Torus(d) = target else {
            return Err(err("identity-coord needs a torus target"));
        };
        return Cocycle::coordinate(dim, 0, *d);
    }
    if let Some(body) = t.strip_prefix("cells:[").and_then(|r| r.strip_suffix(']')) {
        if dim != 1 {
            return Err(err("cell literals describe one-dimensional bases"));
        }
        let mut cells = Vec::new();
        let mut rest = body.trim();
        while !rest.is_empty() {
            let inner = rest.strip_prefix('(').ok_or_else(|| err("expected '('"))?;
            let close = inner.find(')').ok_or_else(|| err("expected ')'"))?;
            let (a, b) = inner[..close].split_once(',').ok_or_else(|| err("expected (a,b)"))?;
            let after = inner[close + 1..].trim_start().strip_prefix(':').ok_or_else(|| err("expected ':'"))?;
            let end = after.find(",(").unwrap_or(after.len());
            let g = target.parse_element(after[..end].trim())?;
            let a: f64 = a.trim().parse().map_err(|_| err("bad endpoint"))?;
            let b: f64 = b.trim().parse().map_err(|_| err("bad endpoint"))?;
            let iv = Interval::from_unit(a, b).ok_or_else(|| err("empty interval"))?;
            cells.push((Cuboid::interval(iv), g));
            rest = after[end..].trim_start().trim_start_matches(',').trim_start();
        }
        return Cocycle::from_cells(1, target.clone(), cells, target.identity());
    }
    Err(err("expected const:g, identity-coord or cells:[...]"))
}

/// Convenience: a point from real coordinates.
pub fn point(xs: &[f64]) -> SmallVec<[u64; 8]> {
    xs.iter().map(|&x| from_unit(x)).collect()
}

/// Convenience: a real from a fixed-point coordinate.
pub fn unit(x: u64) -> f64 {
    to_unit(x)
}
