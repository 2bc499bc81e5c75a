//! Compact groups with exact arithmetic: tori, cyclic groups, O(2) and
//! direct products, plus quotients by finite subgroups.

use crate::boxes::{circle_dist, from_ratio, from_unit, to_unit};
use crate::error::{invalid, LabError, Result};
use num_complex::Complex64;
use rand::Rng;
use smallvec::SmallVec;
use std::collections::HashSet;
use std::f64::consts::TAU;
use std::fmt;

/// Group element as raw coordinates.
///
/// Torus axes are fixed-point fractions of a turn, cyclic components are
/// residues, an O(2) element is `[angle, s]` with `s = 1` for reflections.
/// Products concatenate the coordinates of their factors.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(pub SmallVec<[u64; 4]>);

impl Element {
    pub fn coords(&self) -> &[u64] {
        &self.0
    }

    pub fn from_slice(c: &[u64]) -> Self {
        Element(SmallVec::from_slice(c))
    }

    pub fn concat(a: &Element, b: &Element) -> Self {
        Element(a.0.iter().chain(b.0.iter()).copied().collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    /// `T^d`.
    Torus(usize),
    /// `Z/m`.
    Cyclic(u64),
    Product(Box<Group>, Box<Group>),
    /// Rotations and reflections of the plane.
    O2,
}

/// One character (or character trace for O(2)) of a factor, addressed by the
/// coordinate offset of that factor inside the element.
#[derive(Clone, Debug, PartialEq)]
pub struct Character {
    pub offset: usize,
    pub kind: CharacterKind,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CharacterKind {
    Circle { freq: i64 },
    Cyclic { m: u64, freq: u64 },
    /// `det` on O(2): `+1` for rotations, `-1` for reflections.
    Det,
    /// Trace of the 2-dimensional irreducible representation of level `n`.
    Trace { n: u64 },
}

impl Character {
    pub fn eval(&self, g: &Element) -> Complex64 {
        let c = &g.0[self.offset..];
        match self.kind {
            CharacterKind::Circle { freq } => {
                let phase = (freq as u64).wrapping_mul(c[0]);
                Complex64::from_polar(1.0, TAU * to_unit(phase))
            }
            CharacterKind::Cyclic { m, freq } => {
                let k = ((freq as u128 * c[0] as u128) % m as u128) as u64;
                Complex64::from_polar(1.0, TAU * k as f64 / m as f64)
            }
            CharacterKind::Det => Complex64::new(if c[1] == 0 { 1.0 } else { -1.0 }, 0.0),
            CharacterKind::Trace { n } => {
                if c[1] == 0 {
                    Complex64::new(2.0 * (TAU * to_unit(n.wrapping_mul(c[0]))).cos(), 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
        }
    }

    /// Whether the character is multiplicative (a genuine 1-dim character).
    pub fn is_linear(&self) -> bool {
        !matches!(self.kind, CharacterKind::Trace { .. })
    }

    /// Integral against Haar measure.
    pub fn haar_integral(&self) -> f64 {
        match self.kind {
            CharacterKind::Circle { freq } => (freq == 0) as u8 as f64,
            CharacterKind::Cyclic { m, freq } => (freq % m == 0) as u8 as f64,
            CharacterKind::Det | CharacterKind::Trace { .. } => 0.0,
        }
    }
}

/// Number of circle frequencies per torus axis in the built-in family.
pub const CIRCLE_FREQS: i64 = 8;

impl Group {
    pub fn torus(d: usize) -> Group {
        Group::Torus(d)
    }

    pub fn product(a: Group, b: Group) -> Group {
        Group::Product(Box::new(a), Box::new(b))
    }

    /// Number of raw coordinates of an element.
    pub fn arity(&self) -> usize {
        match self {
            Group::Torus(d) => *d,
            Group::Cyclic(_) => 1,
            Group::Product(a, b) => a.arity() + b.arity(),
            Group::O2 => 2,
        }
    }

    pub fn is_abelian(&self) -> bool {
        match self {
            Group::O2 => false,
            Group::Product(a, b) => a.is_abelian() && b.is_abelian(),
            _ => true,
        }
    }

    /// Order of the group if finite.
    pub fn order(&self) -> Option<u64> {
        match self {
            Group::Torus(0) => Some(1),
            Group::Torus(_) | Group::O2 => None,
            Group::Cyclic(m) => Some(*m),
            Group::Product(a, b) => a.order()?.checked_mul(b.order()?),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.order().is_some()
    }

    pub fn identity(&self) -> Element {
        Element(std::iter::repeat_n(0, self.arity()).collect())
    }

    pub fn is_identity(&self, g: &Element) -> bool {
        g.0.iter().all(|&c| c == 0)
    }

    /// Membership of raw coordinates.
    pub fn contains(&self, g: &Element) -> bool {
        g.0.len() == self.arity() && self.contains_at(&g.0)
    }

    fn contains_at(&self, c: &[u64]) -> bool {
        match self {
            Group::Torus(_) => true,
            Group::Cyclic(m) => c[0] < *m,
            Group::O2 => c[1] <= 1,
            Group::Product(a, b) => {
                let k = a.arity();
                a.contains_at(&c[..k]) && b.contains_at(&c[k..])
            }
        }
    }

    /// `a · b`.
    pub fn compose(&self, a: &Element, b: &Element) -> Element {
        let mut out = Element(SmallVec::from_elem(0, self.arity()));
        self.compose_into(&a.0, &b.0, &mut out.0);
        out
    }

    fn compose_into(&self, a: &[u64], b: &[u64], out: &mut [u64]) {
        match self {
            Group::Torus(d) => {
                for i in 0..*d {
                    out[i] = a[i].wrapping_add(b[i]);
                }
            }
            Group::Cyclic(m) => out[0] = ((a[0] as u128 + b[0] as u128) % *m as u128) as u64,
            Group::O2 => {
                let rot = if a[1] == 1 { b[0].wrapping_neg() } else { b[0] };
                out[0] = a[0].wrapping_add(rot);
                out[1] = a[1] ^ b[1];
            }
            Group::Product(x, y) => {
                let k = x.arity();
                x.compose_into(&a[..k], &b[..k], &mut out[..k]);
                y.compose_into(&a[k..], &b[k..], &mut out[k..]);
            }
        }
    }

    pub fn inverse(&self, a: &Element) -> Element {
        let mut out = a.clone();
        self.inverse_in_place(&mut out.0);
        out
    }

    fn inverse_in_place(&self, c: &mut [u64]) {
        match self {
            Group::Torus(_) => c.iter_mut().for_each(|x| *x = x.wrapping_neg()),
            Group::Cyclic(m) => c[0] = (*m - c[0]) % *m,
            Group::O2 => {
                if c[1] == 0 {
                    c[0] = c[0].wrapping_neg();
                }
            }
            Group::Product(x, y) => {
                let k = x.arity();
                let (l, r) = c.split_at_mut(k);
                x.inverse_in_place(l);
                y.inverse_in_place(r);
            }
        }
    }

    /// `g^n` by repeated squaring.
    pub fn pow(&self, g: &Element, n: i64) -> Element {
        let base = if n < 0 { self.inverse(g) } else { g.clone() };
        let mut e = n.unsigned_abs();
        let mut acc = self.identity();
        let mut sq = base;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.compose(&acc, &sq);
            }
            sq = self.compose(&sq, &sq);
            e >>= 1;
        }
        acc
    }

    /// Bi-invariant metric.
    pub fn dist(&self, a: &Element, b: &Element) -> f64 {
        self.dist_at(&a.0, &b.0)
    }

    fn dist_at(&self, a: &[u64], b: &[u64]) -> f64 {
        match self {
            Group::Torus(d) => (0..*d).map(|i| circle_dist(a[i], b[i])).fold(0.0, f64::max),
            Group::Cyclic(m) => {
                let diff = a[0].abs_diff(b[0]);
                diff.min(m - diff) as f64 / *m as f64
            }
            Group::O2 => {
                if a[1] == b[1] {
                    circle_dist(a[0], b[0])
                } else {
                    1.0
                }
            }
            Group::Product(x, y) => {
                let k = x.arity();
                x.dist_at(&a[..k], &b[..k])
                    .max(y.dist_at(&a[k..], &b[k..]))
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Group::Torus(0) => 0.0,
            Group::Torus(_) => 0.5,
            Group::Cyclic(m) => (m / 2) as f64 / *m as f64,
            Group::O2 => 1.0,
            Group::Product(a, b) => a.diameter().max(b.diameter()),
        }
    }

    /// Haar-distributed element.
    pub fn haar_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Element {
        let mut out = Element(SmallVec::from_elem(0, self.arity()));
        self.sample_into(rng, &mut out.0);
        out
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [u64]) {
        match self {
            Group::Torus(_) => out.iter_mut().for_each(|x| *x = rng.random()),
            Group::Cyclic(m) => out[0] = rng.random_range(0..*m),
            Group::O2 => {
                out[0] = rng.random();
                out[1] = rng.random_range(0..2);
            }
            Group::Product(x, y) => {
                let k = x.arity();
                x.sample_into(rng, &mut out[..k]);
                y.sample_into(rng, &mut out[k..]);
            }
        }
    }

    /// All elements of a finite group, in lexicographic order.
    pub fn elements(&self) -> Option<Vec<Element>> {
        let n = self.order()?;
        if n > 1 << 24 {
            return None;
        }
        Some(match self {
            Group::Torus(_) => vec![self.identity()],
            Group::Cyclic(m) => (0..*m).map(|i| Element::from_slice(&[i])).collect(),
            Group::Product(a, b) => {
                let (ea, eb) = (a.elements()?, b.elements()?);
                let mut v = Vec::with_capacity(ea.len() * eb.len());
                for x in &ea {
                    for y in &eb {
                        v.push(Element::concat(x, y));
                    }
                }
                v
            }
            Group::O2 => unreachable!(),
        })
    }

    /// The built-in character family: circle frequencies `1..=8` per torus
    /// axis, every character of `Z/m`, and `det` plus the first eight traces
    /// on O(2). Products list the characters of each factor.
    pub fn characters(&self) -> Vec<Character> {
        let mut out = Vec::new();
        self.push_characters(0, "", &mut out);
        out
    }

    fn push_characters(&self, offset: usize, prefix: &str, out: &mut Vec<Character>) {
        match self {
            Group::Torus(d) => {
                for axis in 0..*d {
                    for freq in 1..=CIRCLE_FREQS {
                        out.push(Character {
                            offset: offset + axis,
                            kind: CharacterKind::Circle { freq },
                            label: format!("{prefix}t{axis}^{freq}"),
                        });
                    }
                }
            }
            Group::Cyclic(m) => {
                for freq in 1..*m {
                    out.push(Character {
                        offset,
                        kind: CharacterKind::Cyclic { m: *m, freq },
                        label: format!("{prefix}z{m}^{freq}"),
                    });
                }
            }
            Group::O2 => {
                out.push(Character {
                    offset,
                    kind: CharacterKind::Det,
                    label: format!("{prefix}det"),
                });
                for n in 1..=CIRCLE_FREQS as u64 {
                    out.push(Character {
                        offset,
                        kind: CharacterKind::Trace { n },
                        label: format!("{prefix}tr{n}"),
                    });
                }
            }
            Group::Product(a, b) => {
                a.push_characters(offset, &format!("{prefix}L."), out);
                b.push_characters(offset + a.arity(), &format!("{prefix}R."), out);
            }
        }
    }

    /// Key of the cell containing `g` when continuous coordinates are cut
    /// into `m` equal arcs; discrete coordinates are kept as they are.
    fn cell_key(&self, c: &[u64], m: u64, out: &mut Vec<u64>) {
        match self {
            Group::Torus(d) => {
                for &x in &c[..*d] {
                    out.push(((x as u128 * m as u128) >> 64) as u64);
                }
            }
            Group::Cyclic(_) => out.push(c[0]),
            Group::O2 => {
                out.push(((c[0] as u128 * m as u128) >> 64) as u64);
                out.push(c[1]);
            }
            Group::Product(a, b) => {
                let k = a.arity();
                a.cell_key(&c[..k], m, out);
                b.cell_key(&c[k..], m, out);
            }
        }
    }

    fn continuous_dim(&self) -> usize {
        match self {
            Group::Torus(d) => *d,
            Group::Cyclic(_) => 0,
            Group::O2 => 1,
            Group::Product(a, b) => a.continuous_dim() + b.continuous_dim(),
        }
    }

    fn discrete_size(&self) -> u64 {
        match self {
            Group::Torus(_) => 1,
            Group::Cyclic(m) => *m,
            Group::O2 => 2,
            Group::Product(a, b) => a.discrete_size().saturating_mul(b.discrete_size()),
        }
    }

    /// Parses one element literal: components separated by `;`, torus
    /// coordinates as decimals or `p/q`, cyclic residues as integers, O(2)
    /// elements as `r<angle>` or `s<angle>`.
    pub fn parse_element(&self, s: &str) -> Result<Element> {
        let parts: Vec<&str> = s.split(';').map(str::trim).collect();
        let mut out = SmallVec::new();
        let used = self.parse_parts(&parts, s, &mut out)?;
        if used != parts.len() {
            return Err(parse_err("element", s, "too many components"));
        }
        Ok(Element(out))
    }

    fn parse_parts(&self, parts: &[&str], src: &str, out: &mut SmallVec<[u64; 4]>) -> Result<usize> {
        let need = |n: usize| -> Result<()> {
            if parts.len() < n {
                Err(parse_err("element", src, "too few components"))
            } else {
                Ok(())
            }
        };
        match self {
            Group::Torus(d) => {
                need(*d)?;
                for p in &parts[..*d] {
                    out.push(parse_turn(p).ok_or_else(|| parse_err("element", src, "bad torus coordinate"))?);
                }
                Ok(*d)
            }
            Group::Cyclic(m) => {
                need(1)?;
                let v: i64 = parts[0]
                    .parse()
                    .map_err(|_| parse_err("element", src, "bad residue"))?;
                out.push(v.rem_euclid(*m as i64) as u64);
                Ok(1)
            }
            Group::O2 => {
                need(1)?;
                let p = parts[0];
                let (flag, rest) = match p.chars().next() {
                    Some('r') => (0, &p[1..]),
                    Some('s') => (1, &p[1..]),
                    _ => return Err(parse_err("element", src, "O(2) element must start with r or s")),
                };
                out.push(parse_turn(rest).ok_or_else(|| parse_err("element", src, "bad angle"))?);
                out.push(flag);
                Ok(1)
            }
            Group::Product(a, b) => {
                let k = a.parse_parts(parts, src, out)?;
                Ok(k + b.parse_parts(&parts[k..], src, out)?)
            }
        }
    }

    /// Human-readable element literal, inverse of [`Group::parse_element`] up
    /// to rounding of torus coordinates.
    pub fn format_element(&self, g: &Element) -> String {
        let mut parts = Vec::new();
        self.format_parts(&g.0, &mut parts);
        parts.join(";")
    }

    fn format_parts(&self, c: &[u64], out: &mut Vec<String>) {
        match self {
            Group::Torus(d) => out.extend(c[..*d].iter().map(|&x| format!("{}", to_unit(x)))),
            Group::Cyclic(_) => out.push(c[0].to_string()),
            Group::O2 => out.push(format!("{}{}", if c[1] == 0 { 'r' } else { 's' }, to_unit(c[0]))),
            Group::Product(a, b) => {
                let k = a.arity();
                a.format_parts(&c[..k], out);
                b.format_parts(&c[k..], out);
            }
        }
    }
}

fn parse_err(what: &'static str, input: &str, reason: &str) -> LabError {
    LabError::Parse {
        what,
        input: input.to_string(),
        reason: reason.to_string(),
    }
}

/// Parses `x` or `p/q` as a fraction of a turn.
pub fn parse_turn(s: &str) -> Option<u64> {
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let p: i64 = p.trim().parse().ok()?;
        let q: u64 = q.trim().parse().ok()?;
        if q == 0 {
            return None;
        }
        return Some(from_ratio(p.rem_euclid(q as i64) as u64, q));
    }
    let v: f64 = s.parse().ok()?;
    v.is_finite().then(|| from_unit(v))
}

impl std::str::FromStr for Group {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Group> {
        let t = s.trim();
        let err = |r: &str| parse_err("group", s, r);
        if t == "o2" {
            return Ok(Group::O2);
        }
        if let Some(d) = t.strip_prefix("torus:") {
            let d: usize = d.parse().map_err(|_| err("bad torus dimension"))?;
            if d == 0 || d > 8 {
                return Err(err("torus dimension must be in 1..=8"));
            }
            return Ok(Group::Torus(d));
        }
        if let Some(m) = t.strip_prefix("cyclic:") {
            let m: u64 = m.parse().map_err(|_| err("bad cyclic order"))?;
            if m == 0 {
                return Err(err("cyclic order must be positive"));
            }
            return Ok(Group::Cyclic(m));
        }
        if let Some(inner) = t.strip_prefix("product(").and_then(|r| r.strip_suffix(')')) {
            let mut depth = 0i32;
            for (i, ch) in inner.char_indices() {
                match ch {
                    '(' => depth += 1,
                    ')' => depth -= 1,
                    ',' if depth == 0 => {
                        let a: Group = inner[..i].parse()?;
                        let b: Group = inner[i + 1..].parse()?;
                        return Ok(Group::product(a, b));
                    }
                    _ => {}
                }
            }
            return Err(err("product needs two factors"));
        }
        Err(err("expected torus:d, cyclic:m, product(A,B) or o2"))
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Torus(d) => write!(f, "torus:{d}"),
            Group::Cyclic(m) => write!(f, "cyclic:{m}"),
            Group::Product(a, b) => write!(f, "product({a},{b})"),
            Group::O2 => write!(f, "o2"),
        }
    }
}

/// Finite family `f_1..f_m` whose `a/10`-balls cover the group.
#[derive(Clone, Debug)]
pub struct EpsilonNet {
    pub radius: f64,
    pub elements: Vec<Element>,
}

impl EpsilonNet {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Distance from `g` to the nearest net point.
    pub fn gap(&self, group: &Group, g: &Element) -> f64 {
        self.elements
            .iter()
            .map(|f| group.dist(f, g))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Net of radius `a/10`: uniform grids of `ceil(5/a)` points per circle,
/// every element of a finite factor, products of nets for products.
pub fn eps_net(group: &Group, a: f64) -> Result<EpsilonNet> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(invalid("a", format!("net radius parameter must be positive, got {a}")));
    }
    let r = a / 10.0;
    Ok(EpsilonNet {
        radius: r,
        elements: net_points(group, r),
    })
}

fn circle_grid(r: f64) -> Vec<u64> {
    let m = ((1.0 / (2.0 * r)) - 1e-9).ceil().max(1.0) as u64;
    (0..m).map(|j| from_ratio(j, m)).collect()
}

fn net_points(group: &Group, r: f64) -> Vec<Element> {
    match group {
        Group::Torus(d) => {
            let grid = circle_grid(r);
            let mut pts = vec![Element(SmallVec::new())];
            for _ in 0..*d {
                pts = pts
                    .iter()
                    .flat_map(|p| {
                        grid.iter().map(move |&x| {
                            let mut q = p.clone();
                            q.0.push(x);
                            q
                        })
                    })
                    .collect();
            }
            pts
        }
        Group::Cyclic(m) => {
            let reach = (r * *m as f64 + 1e-9).floor() as u64;
            let step = (2 * reach + 1).max(1);
            (0..*m)
                .step_by(step as usize)
                .map(|i| Element::from_slice(&[i]))
                .collect()
        }
        Group::O2 => {
            if r >= 1.0 {
                return vec![group.identity()];
            }
            let grid = circle_grid(r);
            (0..2)
                .flat_map(|s| grid.iter().map(move |&x| Element::from_slice(&[x, s])))
                .collect()
        }
        Group::Product(a, b) => {
            let (na, nb) = (net_points(a, r), net_points(b, r));
            na.iter()
                .flat_map(|x| nb.iter().map(move |y| Element::concat(x, y)))
                .collect()
        }
    }
}

/// Closed subgroup `H` of `K`.
#[derive(Clone, Debug, PartialEq)]
pub enum Subgroup {
    /// Explicit finite list, closed under composition and inverse.
    Finite(Vec<Element>),
    /// A closed subgroup known only by name.
    Opaque(String),
}

impl Subgroup {
    pub fn trivial(group: &Group) -> Subgroup {
        Subgroup::Finite(vec![group.identity()])
    }

    pub fn is_trivial(&self) -> bool {
        matches!(self, Subgroup::Finite(v) if v.len() == 1)
    }

    pub fn elements(&self) -> Option<&[Element]> {
        match self {
            Subgroup::Finite(v) => Some(v),
            Subgroup::Opaque(_) => None,
        }
    }
}

/// Quotient `K/H` with the Hausdorff metric on cosets.
#[derive(Clone, Debug)]
pub struct HomogeneousSpace {
    pub group: Group,
    pub subgroup: Subgroup,
}

impl HomogeneousSpace {
    /// Validates that a finite `H` is a subgroup of `K`.
    pub fn new(group: Group, subgroup: Subgroup) -> Result<Self> {
        if let Subgroup::Finite(h) = &subgroup {
            let set: HashSet<&Element> = h.iter().collect();
            if h.iter().any(|x| !group.contains(x)) {
                return Err(LabError::NotInGroup("subgroup element".into()));
            }
            if !set.contains(&group.identity()) {
                return Err(invalid("subgroup", "must contain the identity"));
            }
            for x in h {
                if !set.contains(&group.inverse(x)) {
                    return Err(invalid("subgroup", "not closed under inverse"));
                }
                for y in h {
                    if !set.contains(&group.compose(x, y)) {
                        return Err(invalid("subgroup", "not closed under composition"));
                    }
                }
            }
        }
        Ok(HomogeneousSpace { group, subgroup })
    }

    /// `K` itself, `H = {e}`.
    pub fn trivial(group: Group) -> Self {
        let subgroup = Subgroup::trivial(&group);
        HomogeneousSpace { group, subgroup }
    }

    fn finite_h(&self) -> Result<&[Element]> {
        self.subgroup.elements().ok_or_else(|| {
            LabError::UnsupportedSubgroup("coset arithmetic needs a finite subgroup".into())
        })
    }

    /// Canonical representative of `kH`: the smallest `kh` in coordinate order.
    pub fn coset_rep(&self, k: &Element) -> Result<Element> {
        let h = self.finite_h()?;
        Ok(h.iter()
            .map(|x| self.group.compose(k, x))
            .min()
            .expect("subgroup is nonempty"))
    }

    /// Hausdorff distance between `kH` and `k'H`.
    pub fn quotient_dist(&self, k: &Element, k2: &Element) -> Result<f64> {
        let h = self.finite_h()?;
        let a: Vec<Element> = h.iter().map(|x| self.group.compose(k, x)).collect();
        let b: Vec<Element> = h.iter().map(|x| self.group.compose(k2, x)).collect();
        let one_sided = |p: &[Element], q: &[Element]| {
            p.iter()
                .map(|x| q.iter().map(|y| self.group.dist(x, y)).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        Ok(one_sided(&a, &b).max(one_sided(&b, &a)))
    }

    /// `d_K(k, H)`.
    pub fn dist_to_subgroup(&self, k: &Element) -> Result<f64> {
        let h = self.finite_h()?;
        Ok(h.iter()
            .map(|x| self.group.dist(k, x))
            .fold(f64::INFINITY, f64::min))
    }

    /// Haar measure of the closed `r`-neighbourhood of `H`. Exact for `H = {e}`
    /// and for disjoint balls, a union bound otherwise.
    pub fn haar_ball_measure(&self, r: f64) -> Result<f64> {
        let h = self.finite_h()?;
        Ok((h.len() as f64 * ball_measure(&self.group, r)).min(1.0))
    }

    /// Largest `eta` whose neighbourhood of `H` has Haar measure at most
    /// `budget`, by bisection.
    pub fn eta_margin(&self, budget: f64) -> Result<f64> {
        if !(budget > 0.0) {
            return Err(invalid("budget", "must be positive"));
        }
        let (mut lo, mut hi) = (0.0f64, self.group.diameter().max(1e-12));
        if self.haar_ball_measure(hi)? <= budget {
            return Ok(hi);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.haar_ball_measure(mid)? <= budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }
}

/// Haar measure of the closed ball of radius `r` around the identity.
pub fn ball_measure(group: &Group, r: f64) -> f64 {
    if r < 0.0 {
        return 0.0;
    }
    match group {
        Group::Torus(d) => (2.0 * r).min(1.0).powi(*d as i32),
        Group::Cyclic(m) => {
            let reach = (r * *m as f64 + 1e-12).floor() as u64;
            (2 * reach + 1).min(*m) as f64 / *m as f64
        }
        Group::O2 => {
            if r >= 1.0 {
                1.0
            } else {
                (2.0 * r).min(1.0) / 2.0
            }
        }
        Group::Product(a, b) => ball_measure(a, r) * ball_measure(b, r),
    }
}

/// `k0 H k0^{-1} ∩ H`.
pub fn conjugate_intersection(space: &HomogeneousSpace, k0: &Element) -> Result<Subgroup> {
    let g = &space.group;
    if !g.contains(k0) {
        return Err(LabError::NotInGroup(g.format_element(k0)));
    }
    if g.is_abelian() {
        return Ok(space.subgroup.clone());
    }
    let h = space.subgroup.elements().ok_or_else(|| {
        LabError::UnsupportedSubgroup("conjugation of a subgroup without a finite description".into())
    })?;
    let set: HashSet<&Element> = h.iter().collect();
    let k0inv = g.inverse(k0);
    // x ∈ k0 H k0^{-1} iff k0^{-1} x k0 ∈ H.
    let kept = h
        .iter()
        .filter(|x| set.contains(&g.compose(&g.compose(&k0inv, x), k0)))
        .cloned()
        .collect();
    Ok(Subgroup::Finite(kept))
}

/// Outcome of a generator-density scan.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityReport {
    pub n_max: u64,
    pub distinct: u64,
    /// Covering radius of the orbit. Exact on the circle and on finite groups,
    /// a cell-grid upper bound elsewhere.
    pub covering_radius: f64,
    pub exact: bool,
    pub generator: bool,
}

/// Covering radius of `{k, k^2, ..., k^n_max}`; flags a generator when it is
/// below `eps`.
pub fn generator_density_scan(group: &Group, k: &Element, n_max: u64, eps: f64) -> Result<DensityReport> {
    if n_max == 0 {
        return Err(invalid("n_max", "must be at least 1"));
    }
    if !group.contains(k) {
        return Err(LabError::NotInGroup(group.format_element(k)));
    }
    let mut orbit = Vec::with_capacity(n_max.min(1 << 24) as usize);
    let mut x = k.clone();
    for _ in 0..n_max {
        orbit.push(x.clone());
        x = group.compose(&x, k);
    }
    let (radius, distinct, exact) = if let Group::Torus(1) = group {
        let mut pts: Vec<u64> = orbit.iter().map(|e| e.0[0]).collect();
        pts.sort_unstable();
        pts.dedup();
        let mut gap = pts[0].wrapping_sub(*pts.last().unwrap());
        if pts.len() == 1 {
            gap = u64::MAX;
        }
        for w in pts.windows(2) {
            gap = gap.max(w[1] - w[0]);
        }
        // A gap of the full circle is 2^64, saturated to u64::MAX.
        let radius = if pts.len() == 1 { 0.5 } else { to_unit(gap) / 2.0 };
        (radius, pts.len() as u64, true)
    } else if let Some(all) = group.elements() {
        let set: HashSet<Element> = orbit.into_iter().collect();
        let radius = all
            .iter()
            .map(|g| set.iter().map(|o| group.dist(g, o)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max);
        (radius, set.len() as u64, true)
    } else {
        let cd = group.continuous_dim() as u32;
        let disc = group.discrete_size();
        let distinct = orbit.iter().collect::<HashSet<_>>().len() as u64;
        let mut best = group.diameter();
        let mut m: u64 = 2;
        loop {
            let cells = m.checked_pow(cd).and_then(|c| c.checked_mul(disc));
            match cells {
                Some(c) if c <= 1 << 22 && c <= n_max => {}
                _ => break,
            }
            let mut seen = HashSet::new();
            let mut key = Vec::new();
            for o in &orbit {
                key.clear();
                group.cell_key(&o.0, m, &mut key);
                seen.insert(key.clone());
            }
            if seen.len() as u64 == cells.unwrap() {
                best = 1.0 / m as f64;
            } else {
                break;
            }
            m *= 2;
        }
        (best, distinct, false)
    };
    Ok(DensityReport {
        n_max,
        distinct,
        covering_radius: radius,
        exact,
        generator: radius < eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn el(g: &Group, s: &str) -> Element {
        g.parse_element(s).unwrap()
    }

    #[test]
    fn descriptors_round_trip() {
        for s in ["torus:1", "torus:2", "cyclic:4", "product(torus:1,cyclic:2)", "o2"] {
            let g: Group = s.parse().unwrap();
            assert_eq!(g.to_string(), s);
        }
        assert!("torus:x".parse::<Group>().is_err());
        assert!("product(torus:1)".parse::<Group>().is_err());
    }

    #[test]
    fn torus_net_sizes() {
        let t1 = Group::Torus(1);
        let net = eps_net(&t1, 0.2).unwrap();
        assert_eq!(net.len(), 25);
        assert!((to_unit(net.elements[1].0[0]) - 0.04).abs() < 1e-15);
        assert_eq!(eps_net(&Group::Torus(2), 0.2).unwrap().len(), 625);
        assert_eq!(eps_net(&t1, 0.1).unwrap().len(), 50);
        assert!(eps_net(&t1, 0.0).is_err());
        assert!(eps_net(&t1, -1.0).is_err());
    }

    #[test]
    fn cyclic_nets() {
        let z4 = Group::Cyclic(4);
        let net = eps_net(&z4, 10.0).unwrap();
        assert!(net.len() <= 4 && !net.is_empty());
        let z2 = Group::Cyclic(2);
        assert_eq!(eps_net(&z2, 0.5).unwrap().len(), 2);
    }

    #[test]
    fn o2_conjugate_intersection() {
        let g = Group::O2;
        let h = Subgroup::Finite(vec![g.identity(), el(&g, "s0")]);
        let space = HomogeneousSpace::new(g.clone(), h).unwrap();
        let k0 = el(&g, "r1/8");
        let hk = conjugate_intersection(&space, &k0).unwrap();
        assert_eq!(hk, Subgroup::Finite(vec![g.identity()]));
        // The conjugated reflection is the one with angle 1/4.
        let c = g.compose(&g.compose(&k0, &el(&g, "s0")), &g.inverse(&k0));
        assert_eq!(c, el(&g, "s1/4"));
        // Half a turn commutes with every reflection.
        let hk = conjugate_intersection(&space, &el(&g, "r1/2")).unwrap();
        assert_eq!(hk.elements().unwrap().len(), 2);
    }

    #[test]
    fn abelian_and_trivial_intersections() {
        let t = Group::Torus(1);
        let h = Subgroup::Finite(vec![el(&t, "0"), el(&t, "1/2")]);
        let space = HomogeneousSpace::new(t.clone(), h.clone()).unwrap();
        assert_eq!(conjugate_intersection(&space, &el(&t, "0.3")).unwrap(), h);
        let opaque = HomogeneousSpace {
            group: Group::O2,
            subgroup: Subgroup::Opaque("closed".into()),
        };
        assert!(matches!(
            conjugate_intersection(&opaque, &Group::O2.identity()),
            Err(LabError::UnsupportedSubgroup(_))
        ));
    }

    #[test]
    fn density_scan_examples() {
        let t = Group::Torus(1);
        let golden = from_unit((5f64.sqrt() - 1.0) / 2.0);
        let rep = generator_density_scan(&t, &Element::from_slice(&[golden]), 10_000, 0.01).unwrap();
        assert!(rep.generator && rep.covering_radius < 0.01);
        let rep = generator_density_scan(&t, &el(&t, "1/4"), 10_000, 0.01).unwrap();
        assert!(!rep.generator);
        assert_eq!(rep.distinct, 4);
        assert!((rep.covering_radius - 0.125).abs() < 1e-15);
        let z5 = Group::Cyclic(5);
        let rep = generator_density_scan(&z5, &el(&z5, "1"), 5, 1e-9).unwrap();
        assert!(rep.generator && rep.distinct == 5);
    }

    #[test]
    fn eta_for_circle() {
        let space = HomogeneousSpace::trivial(Group::Torus(1));
        let eta = space.eta_margin(0.02).unwrap();
        assert!((eta - 0.01).abs() < 1e-12);
    }

    #[test]
    fn o2_metric_and_inverse() {
        let g = Group::O2;
        let mut rng = seeded(1);
        for _ in 0..1000 {
            let (a, b, c) = (g.haar_sample(&mut rng), g.haar_sample(&mut rng), g.haar_sample(&mut rng));
            assert!(g.is_identity(&g.compose(&a, &g.inverse(&a))));
            let lhs = g.dist(&g.compose(&c, &a), &g.compose(&c, &b));
            assert!((lhs - g.dist(&a, &b)).abs() < 1e-12);
            let rhs = g.dist(&g.compose(&a, &c), &g.compose(&b, &c));
            assert!((rhs - g.dist(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn o2_characters() {
        let g = Group::O2;
        let chars = g.characters();
        let tr1 = chars.iter().find(|c| c.label == "tr1").unwrap();
        assert!((tr1.eval(&el(&g, "r1/4")).re).abs() < 1e-12);
        assert!((tr1.eval(&g.identity()).re - 2.0).abs() < 1e-12);
    }

    #[test]
    fn product_elements_parse() {
        let g: Group = "product(torus:1,cyclic:2)".parse().unwrap();
        let x = el(&g, "0.25;1");
        assert_eq!(g.format_element(&x), "0.25;1");
        assert!(g.parse_element("0.25").is_err());
        assert!(g.parse_element("0.25;1;3").is_err());
    }
}
