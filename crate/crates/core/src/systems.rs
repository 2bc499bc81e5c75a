//! Measure-preserving base systems, skew products and the ergodic
//! components of relative squares.

use crate::boxes::{circle_dist, from_unit, to_unit, BoxIndex, Cuboid, Point, ONE};
use crate::cocycles::{Cocycle, PointMap};
use crate::error::{invalid, LabError, Result};
use crate::groups::{conjugate_intersection, Element, Group, HomogeneousSpace, Subgroup};
use rand::Rng;
use smallvec::SmallVec;
use std::sync::Arc;

/// Translation vector, one fixed-point entry per coordinate.
pub type Shift = SmallVec<[u64; 4]>;

/// A map of `[0,1)^d` that translates each box of a finite partition.
#[derive(Clone, Debug)]
pub struct PiecewiseTranslation {
    dim: usize,
    pieces: BoxIndex<Shift>,
}

impl PiecewiseTranslation {
    pub fn new(dim: usize, pieces: Vec<(Cuboid, Shift)>) -> Self {
        PiecewiseTranslation {
            dim,
            pieces: BoxIndex::new(pieces),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pieces(&self) -> &BoxIndex<Shift> {
        &self.pieces
    }

    pub fn apply(&self, p: &mut [u64]) {
        if let Some((_, s)) = self.pieces.locate(p) {
            for (x, d) in p.iter_mut().zip(s) {
                *x = x.wrapping_add(*d);
            }
        }
    }

    /// The inverse map: images of the pieces with negated shifts.
    pub fn inverse(&self) -> PiecewiseTranslation {
        let mut out = Vec::new();
        for (c, s) in self.pieces.entries() {
            let neg: Shift = s.iter().map(|x| x.wrapping_neg()).collect();
            for img in c.translate(s) {
                out.push((img, neg.clone()));
            }
        }
        PiecewiseTranslation::new(self.dim, out)
    }
}

#[derive(Clone, Debug)]
pub enum SystemKind {
    /// `x -> x + alpha`.
    Rotation { alpha: u64 },
    /// Adding machine on the first `depth` binary digits, most significant
    /// digit first; lower digits ride along.
    Odometer { depth: u32 },
    /// A skew product with a torus fiber, used as a base in its own right.
    Extension(Box<SkewProductSystem>),
}

/// An invertible measure-preserving map of `[0,1)^d` with Lebesgue measure.
#[derive(Clone, Debug)]
pub struct BaseSystem {
    kind: SystemKind,
    dim: usize,
    label: String,
    fwd: Option<Arc<PiecewiseTranslation>>,
    bwd: Option<Arc<PiecewiseTranslation>>,
}

/// Partial quotients of `x` in `(0,1)`, stopping early when a remainder is
/// within `tol` of an integer.
pub fn continued_fraction(x: f64, depth: usize, tol: f64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut r = x.fract();
    for _ in 0..depth {
        if r < tol || r > 1.0 - tol {
            break;
        }
        let inv = 1.0 / r;
        out.push(inv.floor() as u64);
        r = inv.fract();
    }
    out
}

/// Whether the expansion terminates within the first dozen terms.
pub fn looks_rational(x: f64) -> bool {
    continued_fraction(x, 12, 1e-9).len() < 12
}

/// Denominators `q_0 = 1, q_1, ...` of the convergents of `alpha / 2^64`,
/// by exact Euclid.
pub fn convergent_denominators(alpha: u64, count: usize) -> Vec<u64> {
    let (mut num, mut den) = (alpha as u128, ONE);
    // alpha/2^64 = [0; a1, a2, ...]
    let (mut q_prev, mut q) = (0u128, 1u128);
    let mut out = vec![1u64];
    while out.len() < count && num != 0 {
        let a = den / num;
        let r = den - a * num;
        let q_next = a * q + q_prev;
        if q_next > u64::MAX as u128 {
            break;
        }
        out.push(q_next as u64);
        q_prev = q;
        q = q_next;
        den = num;
        num = r;
    }
    out
}

/// `||q alpha||`, distance to the nearest integer.
pub fn norm_multiple(alpha: u64, q: u64) -> f64 {
    circle_dist(q.wrapping_mul(alpha), 0)
}

/// Rotation by an irrational `alpha`; rationals are rejected.
pub fn make_rotation(alpha: f64) -> Result<BaseSystem> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("rotation angle must lie in (0,1), got {alpha}")));
    }
    if looks_rational(alpha) {
        return Err(LabError::RationalAngle(alpha));
    }
    Ok(rotation_fixed(from_unit(alpha), format!("rotation:{alpha}")))
}

fn rotation_fixed(alpha: u64, label: String) -> BaseSystem {
    let fwd = PiecewiseTranslation::new(1, vec![(Cuboid::full(1), SmallVec::from_slice(&[alpha]))]);
    let bwd = fwd.inverse();
    BaseSystem {
        kind: SystemKind::Rotation { alpha },
        dim: 1,
        label,
        fwd: Some(Arc::new(fwd)),
        bwd: Some(Arc::new(bwd)),
    }
}

/// Golden rotation by `(sqrt 5 - 1)/2`.
pub fn golden_rotation() -> BaseSystem {
    let mut s = make_rotation((5f64.sqrt() - 1.0) / 2.0).expect("golden angle is irrational");
    s.label = "rotation:golden".into();
    s
}

/// Rotation by `sqrt 2 - 1`.
pub fn sqrt2_rotation() -> BaseSystem {
    let mut s = make_rotation(2f64.sqrt() - 1.0).expect("irrational");
    s.label = "rotation:sqrt2".into();
    s
}

/// Dyadic odometer on the first `depth` digits, `1 <= depth <= 63`.
pub fn make_odometer(depth: u32) -> Result<BaseSystem> {
    if !(1..=63).contains(&depth) {
        return Err(invalid("depth", "odometer depth must be in 1..=63"));
    }
    let mut pieces = Vec::new();
    for j in 0..depth {
        let lo = ONE - (ONE >> j);
        let hi = ONE - (ONE >> (j + 1));
        let shift = ((ONE >> (j + 1)) as u64).wrapping_sub(lo as u64);
        pieces.push((Cuboid::interval(crate::boxes::Interval::new(lo, hi)), SmallVec::from_slice(&[shift])));
    }
    let lo = ONE - (ONE >> depth);
    pieces.push((
        Cuboid::interval(crate::boxes::Interval::new(lo, ONE)),
        SmallVec::from_slice(&[(lo as u64).wrapping_neg()]),
    ));
    let fwd = PiecewiseTranslation::new(1, pieces);
    let bwd = fwd.inverse();
    Ok(BaseSystem {
        kind: SystemKind::Odometer { depth },
        dim: 1,
        label: format!("odometer:{depth}"),
        fwd: Some(Arc::new(fwd)),
        bwd: Some(Arc::new(bwd)),
    })
}

fn top_mask(j: u32) -> u64 {
    if j == 0 {
        0
    } else {
        !0u64 << (64 - j)
    }
}

/// Parses `rotation:golden`, `rotation:sqrt2`, `rotation:<alpha>` or
/// `odometer:<depth>`.
pub fn parse_system(s: &str) -> Result<BaseSystem> {
    let t = s.trim();
    let err = |r: &str| LabError::Parse {
        what: "system",
        input: s.to_string(),
        reason: r.to_string(),
    };
    if let Some(rest) = t.strip_prefix("rotation:") {
        return match rest {
            "golden" => Ok(golden_rotation()),
            "sqrt2" => Ok(sqrt2_rotation()),
            x => make_rotation(x.parse().map_err(|_| err("bad rotation angle"))?),
        };
    }
    if let Some(rest) = t.strip_prefix("odometer:") {
        return make_odometer(rest.parse().map_err(|_| err("bad odometer depth"))?);
    }
    Err(err("expected rotation:<angle> or odometer:<depth>"))
}

impl BaseSystem {
    pub fn kind(&self) -> &SystemKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Rotation angle, for rotations.
    pub fn alpha(&self) -> Option<u64> {
        match self.kind {
            SystemKind::Rotation { alpha } => Some(alpha),
            _ => None,
        }
    }

    /// The torus extension of the point or of a base: offset of the fiber
    /// coordinates and the fiber group. A rotation counts as a `T^1`
    /// extension of the one-point system.
    pub fn fiber(&self) -> Option<(usize, Group)> {
        match &self.kind {
            SystemKind::Rotation { .. } => Some((0, Group::Torus(1))),
            SystemKind::Odometer { .. } => None,
            SystemKind::Extension(sk) => Some((sk.base.dim, sk.group.clone())),
        }
    }

    pub fn forward(&self, p: &mut [u64]) {
        match &self.kind {
            SystemKind::Rotation { alpha } => p[0] = p[0].wrapping_add(*alpha),
            SystemKind::Odometer { depth } => {
                let x = p[0];
                let j = x.leading_ones();
                p[0] = if j >= *depth {
                    x & !top_mask(*depth)
                } else {
                    (x & !top_mask(j)) | (1u64 << (63 - j))
                };
            }
            SystemKind::Extension(sk) => sk.step(p),
        }
    }

    pub fn backward(&self, p: &mut [u64]) {
        match &self.kind {
            SystemKind::Rotation { alpha } => p[0] = p[0].wrapping_sub(*alpha),
            SystemKind::Odometer { depth } => {
                let x = p[0];
                let j = x.leading_zeros();
                p[0] = if j >= *depth {
                    x | top_mask(*depth)
                } else {
                    (x | top_mask(j)) & !(1u64 << (63 - j))
                };
            }
            SystemKind::Extension(sk) => sk.step_back(p),
        }
    }

    /// `T^n`, any sign.
    pub fn iterate(&self, p: &mut [u64], n: i64) {
        if let SystemKind::Rotation { alpha } = self.kind {
            p[0] = p[0].wrapping_add(alpha.wrapping_mul(n as u64));
            return;
        }
        if n >= 0 {
            (0..n).for_each(|_| self.forward(p));
        } else {
            (0..-n).for_each(|_| self.backward(p));
        }
    }

    /// The map as an exact piecewise translation.
    pub fn exact_map(&self) -> Result<&PiecewiseTranslation> {
        self.fwd
            .as_deref()
            .ok_or_else(|| LabError::Unsupported(format!("{} has no exact box representation", self.label)))
    }

    pub fn exact_inverse(&self) -> Result<&PiecewiseTranslation> {
        self.bwd
            .as_deref()
            .ok_or_else(|| LabError::Unsupported(format!("{} has no exact box representation", self.label)))
    }

    /// A Lebesgue-distributed point.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        (0..self.dim).map(|_| rng.random()).collect()
    }
}

/// `T_phi(y, g) = (T y, phi(y) g)` on `Y x G`. Points list the base
/// coordinates followed by the group coordinates.
#[derive(Clone, Debug)]
pub struct SkewProductSystem {
    pub base: BaseSystem,
    pub group: Group,
    pub cocycle: Cocycle,
}

pub fn make_skew_product(base: BaseSystem, group: Group, phi: Cocycle) -> Result<SkewProductSystem> {
    if phi.dim() != base.dim() {
        return Err(LabError::DomainMismatch(format!(
            "cocycle on {} coordinates over a {}-dimensional base",
            phi.dim(),
            base.dim()
        )));
    }
    if phi.target() != &group {
        return Err(LabError::DomainMismatch(format!("cocycle into {} for fiber {group}", phi.target())));
    }
    Ok(SkewProductSystem {
        base,
        group,
        cocycle: phi,
    })
}

impl SkewProductSystem {
    pub fn dim(&self) -> usize {
        self.base.dim + self.group.arity()
    }

    pub fn step(&self, p: &mut [u64]) {
        let d = self.base.dim;
        let v = self.cocycle.eval(&p[..d]);
        let g = self.group.compose(&v, &Element::from_slice(&p[d..]));
        p[d..].copy_from_slice(&g.0);
        self.base.forward(&mut p[..d]);
    }

    pub fn step_back(&self, p: &mut [u64]) {
        let d = self.base.dim;
        self.base.backward(&mut p[..d]);
        let v = self.group.inverse(&self.cocycle.eval(&p[..d]));
        let g = self.group.compose(&v, &Element::from_slice(&p[d..]));
        p[d..].copy_from_slice(&g.0);
    }

    /// `(nu x Haar)`-distributed point.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let mut p = self.base.sample(rng);
        p.extend_from_slice(&self.group.haar_sample(rng).0);
        p
    }

    /// Turns a torus-fiber skew product into a base system. The exact box
    /// map exists when the cocycle is finite-valued and the base has one.
    pub fn into_base(self) -> Result<BaseSystem> {
        let Group::Torus(d) = self.group else {
            return Err(LabError::DomainMismatch(format!(
                "only torus fibers give box-coordinate bases, got {}",
                self.group
            )));
        };
        let dim = self.base.dim + d;
        let (fwd, bwd) = match (self.base.fwd.as_deref(), self.cocycle.is_finite_valued()) {
            (Some(bmap), true) => {
                let tail = Cuboid::full(d);
                let mut pieces = Vec::new();
                let mut split = Vec::new();
                for (piece, shift) in bmap.pieces().entries() {
                    split.clear();
                    self.cocycle.split(piece, &mut split)?;
                    for (part, v) in &split {
                        let s: Shift = shift.iter().chain(v.0.iter()).copied().collect();
                        pieces.push((part.product(&tail), s));
                    }
                }
                let f = PiecewiseTranslation::new(dim, pieces);
                let b = f.inverse();
                (Some(Arc::new(f)), Some(Arc::new(b)))
            }
            _ => (None, None),
        };
        let label = format!("extension({},{})", self.base.label, self.group);
        Ok(BaseSystem {
            kind: SystemKind::Extension(Box::new(self)),
            dim,
            label,
            fwd,
            bwd,
        })
    }
}

/// `phi_{(k_1..k_n)}(y) = (phi(y), phi(y k_1), ..., phi(y k_n))` over a torus
/// extension `y`, and its skew product into `G^{n+1}`.
pub fn translated_tuple_system(y: &BaseSystem, k_list: &[Element], phi: &Cocycle) -> Result<SkewProductSystem> {
    let (offset, k) = y
        .fiber()
        .ok_or_else(|| LabError::DomainMismatch(format!("{} is not a group extension", y.label)))?;
    for (i, a) in k_list.iter().enumerate() {
        if !k.contains(a) {
            return Err(LabError::NotInGroup(k.format_element(a)));
        }
        if k_list[..i].contains(a) {
            return Err(LabError::DuplicateElement);
        }
    }
    let mut parts = vec![(phi.clone(), PointMap::Identity)];
    for a in k_list {
        let mut s: Shift = SmallVec::from_elem(0, y.dim());
        s[offset..offset + a.0.len()].copy_from_slice(&a.0);
        parts.push((phi.clone(), PointMap::Translate(s)));
    }
    let tuple = if k_list.is_empty() {
        phi.clone()
    } else {
        Cocycle::tuple(y.dim(), parts)?
    };
    let g = tuple.target().clone();
    make_skew_product(y.clone(), g, tuple)
}

/// Fiber `V` of the Rokhlin cocycle.
#[derive(Clone, Debug, PartialEq)]
pub enum FiberSpace {
    Point,
    Torus(usize),
}

impl FiberSpace {
    pub fn dim(&self) -> usize {
        match self {
            FiberSpace::Point => 0,
            FiberSpace::Torus(d) => *d,
        }
    }
}

/// `S_{(z,kH)}` acting on `V`.
#[derive(Clone, Debug)]
pub enum RokhlinCocycle {
    Identity,
    /// Rotation of `V = T^d` by a cocycle on the coordinates `(z, k)`.
    Rotation(Cocycle),
}

/// The ergodic component of `X x_Z X` indexed by `k0`.
///
/// Points are laid out as `z, k1, k2, v1, v2` where `k1, k2` are canonical
/// coset representatives of `kH` and `k k0 H`.
#[derive(Clone, Debug)]
pub struct RelativeSquareComponent {
    pub z: BaseSystem,
    pub space: HomogeneousSpace,
    pub gamma: Cocycle,
    pub k0: Element,
    pub h_k0: Subgroup,
    pub fiber: FiberSpace,
    pub s: RokhlinCocycle,
}

pub fn relative_square_component(
    z: BaseSystem,
    space: HomogeneousSpace,
    gamma: Cocycle,
    k0: Element,
    fiber: FiberSpace,
    s: RokhlinCocycle,
) -> Result<RelativeSquareComponent> {
    let k = &space.group;
    if gamma.target() != k {
        return Err(LabError::DomainMismatch(format!("gamma takes values in {}, not {k}", gamma.target())));
    }
    if gamma.dim() != z.dim() {
        return Err(LabError::DomainMismatch("gamma is not defined on the base".into()));
    }
    if !k.contains(&k0) {
        return Err(LabError::NotInGroup(k.format_element(&k0)));
    }
    if space.subgroup.elements().is_none() {
        return Err(LabError::UnsupportedSubgroup("components need a finite subgroup".into()));
    }
    if let RokhlinCocycle::Rotation(c) = &s {
        if c.dim() != z.dim() + k.arity() || c.target() != &Group::Torus(fiber.dim()) || fiber.dim() == 0 {
            return Err(LabError::DomainMismatch("Rokhlin cocycle does not fit (z, k) -> rotations of V".into()));
        }
    }
    let h_k0 = conjugate_intersection(&space, &k0)?;
    Ok(RelativeSquareComponent {
        z,
        space,
        gamma,
        k0,
        h_k0,
        fiber,
        s,
    })
}

impl RelativeSquareComponent {
    pub fn dim(&self) -> usize {
        self.z.dim() + 2 * self.space.group.arity() + 2 * self.fiber.dim()
    }

    fn layout(&self) -> (usize, usize, usize) {
        (self.z.dim(), self.space.group.arity(), self.fiber.dim())
    }

    /// Coordinates `(z, k, v)` of the first copy.
    pub fn first_copy(&self) -> Vec<usize> {
        let (dz, ak, dv) = self.layout();
        (0..dz + ak).chain(dz + 2 * ak..dz + 2 * ak + dv).collect()
    }

    /// Coordinates `(z, k k0, v)` of the second copy.
    pub fn second_copy(&self) -> Vec<usize> {
        let (dz, ak, dv) = self.layout();
        (0..dz)
            .chain(dz + ak..dz + 2 * ak)
            .chain(dz + 2 * ak + dv..dz + 2 * ak + 2 * dv)
            .collect()
    }

    fn rep(&self, k: &Element) -> Element {
        self.space.coset_rep(k).expect("finite subgroup")
    }

    /// A `mu_{k0}`-distributed point.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let g = &self.space.group;
        let mut p = self.z.sample(rng);
        let k = g.haar_sample(rng);
        p.extend_from_slice(&self.rep(&k).0);
        p.extend_from_slice(&self.rep(&g.compose(&k, &self.k0)).0);
        for _ in 0..2 * self.fiber.dim() {
            p.push(rng.random());
        }
        p
    }

    /// `T_{k0}`.
    pub fn step(&self, p: &mut [u64]) {
        let (dz, ak, dv) = self.layout();
        let g = &self.space.group;
        let gz = self.gamma.eval(&p[..dz]);
        if let RokhlinCocycle::Rotation(c) = &self.s {
            for copy in 0..2 {
                let mut arg: SmallVec<[u64; 8]> = SmallVec::from_slice(&p[..dz]);
                arg.extend_from_slice(&p[dz + copy * ak..dz + (copy + 1) * ak]);
                let r = c.eval(&arg);
                let at = dz + 2 * ak + copy * dv;
                for i in 0..dv {
                    p[at + i] = p[at + i].wrapping_add(r.0[i]);
                }
            }
        }
        for copy in 0..2 {
            let at = dz + copy * ak;
            let k = Element::from_slice(&p[at..at + ak]);
            let nk = self.rep(&g.compose(&gz, &k));
            p[at..at + ak].copy_from_slice(&nk.0);
        }
        self.z.forward(&mut p[..dz]);
    }

    /// `(z, kH, k k0 H) -> (z, k H_{k0})`, with the canonical representative
    /// for `H_{k0}`.
    pub fn correspond(&self, p: &[u64]) -> Result<(Point, Element)> {
        let (dz, ak, _) = self.layout();
        let g = &self.space.group;
        let k1 = Element::from_slice(&p[dz..dz + ak]);
        let k2 = Element::from_slice(&p[dz + ak..dz + 2 * ak]);
        let hk = HomogeneousSpace {
            group: g.clone(),
            subgroup: self.h_k0.clone(),
        };
        for h in self.space.subgroup.elements().expect("finite subgroup") {
            let k = g.compose(&k1, h);
            if self.rep(&g.compose(&k, &self.k0)) == k2 {
                return Ok((SmallVec::from_slice(&p[..dz]), hk.coset_rep(&k)?));
            }
        }
        Err(LabError::Precondition("point is not on the component".into()))
    }

    /// The quotient action `(z, k H_{k0}) -> (T z, gamma(z) k H_{k0})`.
    pub fn quotient_step(&self, z: &mut [u64], k: &Element) -> Result<Element> {
        let g = &self.space.group;
        let hk = HomogeneousSpace {
            group: g.clone(),
            subgroup: self.h_k0.clone(),
        };
        let nk = hk.coset_rep(&g.compose(&self.gamma.eval(z), k))?;
        self.z.forward(z);
        Ok(nk)
    }
}

/// Convenience for tests and examples: a real angle from a fixed-point one.
pub fn angle(x: u64) -> f64 {
    to_unit(x)
}
