//! Birkhoff-average scores against character test functions, a probe for
//! relative ergodicity on relative-square components, and the algebraic
//! obstruction for finite extending groups.

use crate::boxes::{to_unit, Cuboid, Interval, Point};
use crate::cocycles::Cocycle;
use crate::error::{LabError, Result};
use crate::groups::{Character, CharacterKind, Element, Group, HomogeneousSpace};
use crate::rng::{derive_seed, seeded, LabRng};
use crate::systems::{relative_square_component, BaseSystem, FiberSpace, RelativeSquareComponent, RokhlinCocycle, SkewProductSystem};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use smallvec::SmallVec;
use std::f64::consts::TAU;

/// A measure-preserving map with a way to draw invariant-measure points.
pub trait Dynamics: Sync {
    fn dim(&self) -> usize;
    fn step(&self, p: &mut [u64]);
    fn sample(&self, rng: &mut LabRng) -> Point;
}

impl Dynamics for BaseSystem {
    fn dim(&self) -> usize {
        BaseSystem::dim(self)
    }
    fn step(&self, p: &mut [u64]) {
        self.forward(p)
    }
    fn sample(&self, rng: &mut LabRng) -> Point {
        BaseSystem::sample(self, rng)
    }
}

impl Dynamics for SkewProductSystem {
    fn dim(&self) -> usize {
        SkewProductSystem::dim(self)
    }
    fn step(&self, p: &mut [u64]) {
        SkewProductSystem::step(self, p)
    }
    fn sample(&self, rng: &mut LabRng) -> Point {
        SkewProductSystem::sample(self, rng)
    }
}

impl Dynamics for RelativeSquareComponent {
    fn dim(&self) -> usize {
        RelativeSquareComponent::dim(self)
    }
    fn step(&self, p: &mut [u64]) {
        RelativeSquareComponent::step(self, p)
    }
    fn sample(&self, rng: &mut LabRng) -> Point {
        RelativeSquareComponent::sample(self, rng)
    }
}

/// `T_psi` over a relative-square component with
/// `psi = (phi on the first copy, phi on the second copy)`. Points are the
/// component coordinates followed by `g1` and `g2`.
#[derive(Clone, Debug)]
pub struct PsiExtension {
    pub component: RelativeSquareComponent,
    pub phi: Cocycle,
    first: Vec<usize>,
    second: Vec<usize>,
}

impl PsiExtension {
    pub fn new(component: RelativeSquareComponent, phi: Cocycle) -> Result<Self> {
        let first = component.first_copy();
        if phi.dim() != first.len() {
            return Err(LabError::DomainMismatch("phi is not defined on one copy of the component".into()));
        }
        let second = component.second_copy();
        Ok(PsiExtension {
            component,
            phi,
            first,
            second,
        })
    }

    pub fn group(&self) -> &Group {
        self.phi.target()
    }

    /// `psi` at a component point.
    pub fn psi(&self, p: &[u64]) -> (Element, Element) {
        let y1: Point = self.first.iter().map(|&i| p[i]).collect();
        let y2: Point = self.second.iter().map(|&i| p[i]).collect();
        (self.phi.eval(&y1), self.phi.eval(&y2))
    }
}

impl Dynamics for PsiExtension {
    fn dim(&self) -> usize {
        self.component.dim() + 2 * self.group().arity()
    }
    fn step(&self, p: &mut [u64]) {
        let d = self.component.dim();
        let ar = self.group().arity();
        let g = self.group();
        let (v1, v2) = self.psi(&p[..d]);
        let g1 = g.compose(&v1, &Element::from_slice(&p[d..d + ar]));
        let g2 = g.compose(&v2, &Element::from_slice(&p[d + ar..d + 2 * ar]));
        p[d..d + ar].copy_from_slice(&g1.0);
        p[d + ar..d + 2 * ar].copy_from_slice(&g2.0);
        self.component.step(&mut p[..d]);
    }
    fn sample(&self, rng: &mut LabRng) -> Point {
        let mut p = self.component.sample(rng);
        p.extend_from_slice(&self.group().haar_sample(rng).0);
        p.extend_from_slice(&self.group().haar_sample(rng).0);
        p
    }
}

/// `f(p) = prod exp(2 pi i k x_c) * prod chi(p)`, optionally its real part.
/// Character offsets are positions in the point.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction {
    pub id: String,
    /// `(coordinate, frequency)` Fourier modes on the base.
    pub modes: Vec<(usize, i64)>,
    pub chars: Vec<Character>,
    pub real_part: bool,
}

impl TestFunction {
    pub fn eval(&self, p: &[u64]) -> Complex64 {
        let mut phase = 0u64;
        for &(c, k) in &self.modes {
            phase = phase.wrapping_add((k as u64).wrapping_mul(p[c]));
        }
        let mut v = Complex64::from_polar(1.0, TAU * to_unit(phase));
        if !self.chars.is_empty() {
            let e = Element(SmallVec::from_slice(p));
            for ch in &self.chars {
                v *= ch.eval(&e);
            }
        }
        if self.real_part {
            Complex64::new(v.re, 0.0)
        } else {
            v
        }
    }

    /// Exact integral against the invariant product measure.
    pub fn integral(&self) -> f64 {
        let base = if self.modes.iter().all(|m| m.1 == 0) { 1.0 } else { 0.0 };
        base * self.chars.iter().map(Character::haar_integral).product::<f64>()
    }

    pub fn mode(coord: usize, k: i64) -> Self {
        TestFunction {
            id: format!("e{k}(x{coord})"),
            modes: vec![(coord, k)],
            chars: Vec::new(),
            real_part: false,
        }
    }

    /// A character of the group stored at `offset` in the point.
    pub fn character(ch: &Character, offset: usize) -> Self {
        let mut c = ch.clone();
        c.offset += offset;
        TestFunction {
            id: format!("{}@{offset}", ch.label),
            modes: Vec::new(),
            chars: vec![c],
            real_part: false,
        }
    }

    pub fn times(mut self, other: TestFunction) -> Self {
        self.id = format!("{}*{}", self.id, other.id);
        self.modes.extend(other.modes);
        self.chars.extend(other.chars);
        self
    }

    pub fn real(mut self) -> Self {
        self.id = format!("Re[{}]", self.id);
        self.real_part = true;
        self
    }
}

/// Base modes `1..=4` on the first coordinate, each fiber character, and
/// the first mode times each fiber character.
pub fn standard_family(base_dim: usize, fiber: Option<&Group>) -> Vec<TestFunction> {
    let mut out: Vec<TestFunction> = (1..=4).map(|k| TestFunction::mode(0, k)).collect();
    if let Some(g) = fiber {
        for ch in g.characters() {
            out.push(TestFunction::character(&ch, base_dim));
        }
        for ch in g.characters() {
            out.push(TestFunction::mode(0, 1).times(TestFunction::character(&ch, base_dim)));
        }
    }
    out
}

/// `chi1(g1) chi2(g2) u(z)` on a psi-extension: for each character `chi`,
/// the pairs `(chi, conj chi)`, `(chi, chi)`, `(chi, 1)`, `(1, chi)`, with
/// `u` the constant or the first base mode.
pub fn relative_family(ext: &PsiExtension) -> Vec<TestFunction> {
    let d = ext.component.dim();
    let ar = ext.group().arity();
    let mut out = Vec::new();
    for ch in ext.group().characters().into_iter().filter(Character::is_linear) {
        let conj = conjugate(&ch);
        let a = || TestFunction::character(&ch, d);
        let pairs = [
            a().times(TestFunction::character(&conj, d + ar)),
            a().times(TestFunction::character(&ch, d + ar)),
            a(),
            TestFunction::character(&ch, d + ar),
        ];
        for f in pairs {
            out.push(TestFunction::mode(0, 1).times(f.clone()));
            out.push(f);
        }
    }
    out
}

fn conjugate(ch: &Character) -> Character {
    let kind = match ch.kind {
        CharacterKind::Circle { freq } => CharacterKind::Circle { freq: -freq },
        CharacterKind::Cyclic { m, freq } => CharacterKind::Cyclic { m, freq: (m - freq % m) % m },
        ref k => k.clone(),
    };
    Character {
        offset: ch.offset,
        kind,
        label: format!("conj({})", ch.label),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub function: String,
    pub start: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErgodicityReport {
    pub n: u64,
    pub starts: usize,
    pub rows: Vec<ScoreRow>,
    pub threshold: Option<f64>,
}

impl ErgodicityReport {
    pub fn max_score(&self) -> f64 {
        self.rows.iter().map(|r| r.score).fold(0.0, f64::max)
    }

    pub fn max_for(&self, function: &str) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.function == function)
            .map(|r| r.score)
            .reduce(f64::max)
    }

    pub fn mean_for(&self, function: &str) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.function == function).map(|r| r.score).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Whether every score stays at or below the threshold.
    pub fn within_threshold(&self) -> Option<bool> {
        self.threshold.map(|t| self.max_score() <= t)
    }
}

/// `|n^-1 sum_{j<n} f(T^j x) - int f|` for every function and each of
/// `starts` sampled initial points.
pub fn birkhoff_score(system: &dyn Dynamics, family: &[TestFunction], n: u64, starts: usize, rng: &mut LabRng) -> Result<ErgodicityReport> {
    let pts: Vec<Point> = (0..starts).map(|_| system.sample(rng)).collect();
    Ok(birkhoff_from(system, family, n, &pts))
}

/// Same as [`birkhoff_score`] from given initial points.
pub fn birkhoff_from(system: &dyn Dynamics, family: &[TestFunction], n: u64, starts: &[Point]) -> ErgodicityReport {
    let per_start: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|x0| {
            let mut p = x0.clone();
            let mut sums = vec![Complex64::new(0.0, 0.0); family.len()];
            for _ in 0..n {
                for (s, f) in sums.iter_mut().zip(family) {
                    *s += f.eval(&p);
                }
                system.step(&mut p);
            }
            sums.iter()
                .zip(family)
                .map(|(s, f)| (s / n.max(1) as f64 - f.integral()).norm())
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(family.len() * starts.len());
    for (fi, f) in family.iter().enumerate() {
        for (si, scores) in per_start.iter().enumerate() {
            rows.push(ScoreRow {
                function: f.id.clone(),
                start: si,
                score: scores[fi],
            });
        }
    }
    ErgodicityReport {
        n,
        starts: starts.len(),
        rows,
        threshold: None,
    }
}

/// Birkhoff scores of `chi1(g1) chi2(g2) u` under `T_psi` on the component.
pub fn relative_ergodicity_probe(
    component: &RelativeSquareComponent,
    phi: &Cocycle,
    n: u64,
    starts: usize,
    rng: &mut LabRng,
) -> Result<ErgodicityReport> {
    let ext = PsiExtension::new(component.clone(), phi.clone())?;
    let family = relative_family(&ext);
    birkhoff_score(&ext, &family, n, starts, rng)
}

/// The probe repeated over a grid of `k0`, one report per `k0`.
pub fn relative_probe_grid(
    base: &RelativeSquareComponent,
    phi: &Cocycle,
    k0s: &[Element],
    n: u64,
    starts: usize,
    seed: u64,
) -> Result<Vec<(Element, ErgodicityReport)>> {
    k0s.iter()
        .enumerate()
        .map(|(i, k0)| {
            let comp = relative_square_component(
                base.z.clone(),
                base.space.clone(),
                base.gamma.clone(),
                k0.clone(),
                base.fiber.clone(),
                base.s.clone(),
            )?;
            let mut rng = seeded(derive_seed(seed, i as u64));
            Ok((k0.clone(), relative_ergodicity_probe(&comp, phi, n, starts, &mut rng)?))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObstructionReport {
    pub samples: usize,
    pub obstructed: usize,
}

/// For `samples` random finite-valued `phi` on `Z x K` with `K` finite,
/// checks on the diagonal component `k0 = e` that both entries of `psi`
/// agree on every cell and that `g2 g1^-1` is conserved along orbits.
pub fn finite_group_obstruction_check(
    z: &BaseSystem,
    k: &Group,
    g: &Group,
    samples: usize,
    rng: &mut LabRng,
) -> Result<ObstructionReport> {
    if !k.is_finite() {
        return Err(LabError::Precondition(format!("K = {k} is infinite; the obstruction concerns finite K")));
    }
    let elems_k = k.elements().expect("finite group lists its elements");
    let elems_g = g.elements();
    let space = HomogeneousSpace::trivial(k.clone());
    let ak = k.arity();
    let mut obstructed = 0;
    for _ in 0..samples {
        let z_cells = rng.random_range(1..=8usize);
        let mut cells = Vec::new();
        for zc in Cuboid::full(z.dim()).slice(0, z_cells) {
            for kel in &elems_k {
                let mut b = zc.clone();
                for &c in &kel.0 {
                    b.sides.push(Interval::new(c as u128, c as u128 + 1));
                }
                let v = match &elems_g {
                    Some(list) => list[rng.random_range(0..list.len())].clone(),
                    None => g.haar_sample(rng),
                };
                cells.push((b, v));
            }
        }
        let phi = Cocycle::from_cells(z.dim() + ak, g.clone(), cells.clone(), g.identity())?;
        let gamma_vals = &elems_k;
        let gamma_cells: Vec<(Cuboid, Element)> = Cuboid::full(z.dim())
            .slice(0, 2)
            .into_iter()
            .map(|c| (c, gamma_vals[rng.random_range(0..gamma_vals.len())].clone()))
            .collect();
        let gamma = Cocycle::from_cells(z.dim(), k.clone(), gamma_cells, k.identity())?;
        let comp = relative_square_component(z.clone(), space.clone(), gamma, k.identity(), FiberSpace::Point, RokhlinCocycle::Identity)?;
        let ext = PsiExtension::new(comp, phi)?;
        let mut ok = true;
        // every cell: the diagonal point reads the same cell twice
        for (b, _) in &cells {
            let mut p: Point = b.corner();
            let kk: Vec<u64> = p[z.dim()..].to_vec();
            p.extend_from_slice(&kk);
            let (v1, v2) = ext.psi(&p);
            ok &= v1 == v2;
        }
        // orbits: g2 g1^-1 never changes
        for _ in 0..4 {
            let mut p = ext.sample(rng);
            let d = ext.component.dim();
            let ar = g.arity();
            let inv = |p: &[u64]| g.compose(&Element::from_slice(&p[d + ar..d + 2 * ar]), &g.inverse(&Element::from_slice(&p[d..d + ar])));
            let start = inv(&p);
            for _ in 0..64 {
                ext.step(&mut p);
                ok &= inv(&p) == start;
            }
        }
        if ok {
            obstructed += 1;
        }
    }
    Ok(ObstructionReport { samples, obstructed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{golden_rotation, make_skew_product};

    #[test]
    fn rotation_score_is_small() {
        let r = golden_rotation();
        let fam = vec![TestFunction::mode(0, 1)];
        let rep = birkhoff_score(&r, &fam, 10_000, 4, &mut seeded(3)).unwrap();
        assert!(rep.max_score() < 2e-4);
    }

    #[test]
    fn product_system_is_detected() {
        let g = Group::torus(1);
        let sys = make_skew_product(golden_rotation(), g.clone(), Cocycle::identity(1, g.clone())).unwrap();
        let ch = &g.characters()[0];
        let fam = vec![TestFunction::character(ch, 1).real()];
        let rep = birkhoff_score(&sys, &fam, 1000, 8, &mut seeded(5)).unwrap();
        assert!(rep.max_score() > 0.4);
    }

    #[test]
    fn obstruction_on_cyclic_and_rejection_on_torus() {
        let z = golden_rotation();
        let rep = finite_group_obstruction_check(&z, &Group::Cyclic(3), &Group::Cyclic(2), 10, &mut seeded(1)).unwrap();
        assert_eq!(rep.obstructed, 10);
        assert!(finite_group_obstruction_check(&z, &Group::torus(1), &Group::Cyclic(2), 1, &mut seeded(1)).is_err());
    }
}
