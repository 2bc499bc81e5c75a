//! Constructive perturbations that put a cocycle into the open sets `U`:
//! the simple case over a rotation or odometer, and the relative-square case
//! over a torus extension.

use crate::boxes::{from_unit, BoxIndex, BoxSet, Cuboid, Interval, ONE};
use crate::cocycles::{
    cocycle_metric, grid_draw, power_pieces, Cocycle, FiniteFullGroupElement, GridPatch, PointMap,
};
use crate::error::{invalid, LabError, Result};
use crate::groups::{eps_net, Element, Group, HomogeneousSpace};
use crate::rng::{derive_seed, mix64, seeded};
use crate::systems::{make_skew_product, BaseSystem, FiberSpace, Shift, SystemKind};
use crate::towers::{build_tower_at, purify, random_pairing, c_level_stats, PairingMode, RokhlinTower, DEFAULT_COLUMN_CAP};
use smallvec::SmallVec;
use std::collections::{BTreeMap, HashMap};

#[derive(Clone, Debug)]
pub struct PerturbationParams {
    /// Reference set; on the base in the simple case, on `Z x K x K` in the
    /// relative case.
    pub c: BoxSet,
    pub a: f64,
    /// Allowed fraction of failing `k0` (relative case).
    pub b: f64,
    pub delta: f64,
    /// `[g]` in the simple case, `[g1, g2]` in the relative case.
    pub target: Vec<Element>,
    /// Requested half-height; raised to the smallest admissible value.
    pub n: usize,
    pub seed: u64,
    /// Seed of the `k0` grid, kept fixed across a seed sweep.
    pub k0_seed: u64,
    pub k0_grid: usize,
    /// How many times the simple case may double `N` before giving up.
    pub max_doublings: u32,
    /// Constant `K` in the `O(1/N)` of the cell-overlap step.
    pub del_constant: f64,
    pub column_cap: usize,
}

impl PerturbationParams {
    pub fn new(c: BoxSet, a: f64, delta: f64, target: Vec<Element>) -> Self {
        PerturbationParams {
            c,
            a,
            b: 0.2,
            delta,
            target,
            n: 0,
            seed: 0,
            k0_seed: 0,
            k0_grid: 64,
            max_doublings: 3,
            del_constant: 10.0,
            column_cap: DEFAULT_COLUMN_CAP,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(invalid("a", "closeness radius must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta", "must lie in (0,1)"));
        }
        if !(self.c.measure() > 0.0) {
            return Err(invalid("C", "reference set has measure zero"));
        }
        Ok(())
    }
}

/// One row of the per-`k0` table.
#[derive(Clone, Debug, PartialEq)]
pub struct K0Row {
    pub k0: Element,
    /// Measure of the good set inside `C_{k0}`.
    pub lhs: f64,
    /// `mu_{k0}(C)`.
    pub c_measure: f64,
    /// `c_a mu_{k0}(C)^2`.
    pub threshold: f64,
    pub pass: bool,
}

/// Which values were drawn where.
#[derive(Clone, Debug)]
pub enum DrawLog {
    /// Deterministic slice assignment.
    Slices(Vec<(Cuboid, Element)>),
    /// Hashed draws on the dyadic `(p, q)` grid inside `region`; cell values
    /// are `values[grid_draw(seed, p, q, values.len())]`.
    Grid {
        seed: u64,
        p_bits: u32,
        q_bits: u32,
        region: Vec<Cuboid>,
        values: Vec<Element>,
    },
}

#[derive(Clone, Debug)]
pub struct PerturbationResult {
    pub phi: Cocycle,
    pub tau: FiniteFullGroupElement,
    /// `d(phi, phi0)`, exact.
    pub distance: f64,
    /// Simple case: good mass over `nu(C)`. Relative case: the smallest
    /// `lhs / mu_{k0}(C)^2` over the grid.
    pub fraction: f64,
    pub c_a: f64,
    pub passed: bool,
    pub half_height: usize,
    pub net_size: usize,
    /// Relative case only.
    pub k0_table: Vec<K0Row>,
    /// Relative case: fraction of the grid that passed.
    pub k0_pass_fraction: f64,
    pub draws: DrawLog,
    pub seed: u64,
    /// Mass fraction of columns with balanced C-levels (simple case).
    pub balanced_columns: f64,
}

/// Outcome of a membership check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UCheck {
    pub passed: bool,
    pub fraction: f64,
    pub good: f64,
    pub c_measure: f64,
}

/// Exact test of `nu{y in C : d(phi_tau(y), g) < a} > c_a nu(C)`.
pub fn check_u_simple(
    phi: &Cocycle,
    base: &BaseSystem,
    tau: &FiniteFullGroupElement,
    c: &BoxSet,
    a: f64,
    c_a: f64,
    g: &Element,
) -> Result<UCheck> {
    let group = phi.target();
    let c_measure = c.measure();
    if !(c_measure > 0.0) {
        return Err(invalid("C", "reference set has measure zero"));
    }
    if !tau.preserves(base, c)? {
        return Err(LabError::Precondition("tau does not map C onto itself".into()));
    }
    let mut good = 0.0;
    let mut moved = 0.0;
    for (cell, s) in tau.cells() {
        for part in c.intersect_box(cell).into_boxes() {
            moved += part.volume();
            for (piece, v) in power_pieces(phi, base, *s, &part)? {
                if group.dist(&v, g) < a {
                    good += piece.volume();
                }
            }
        }
    }
    if group.dist(&group.identity(), g) < a {
        good += c_measure - moved;
    }
    Ok(UCheck {
        passed: good > c_a * c_measure,
        fraction: good / c_measure,
        good,
        c_measure,
    })
}

/// `c_a = (1/m)(1/2 - 10 delta)`.
pub fn simple_c_a(m: usize, delta: f64) -> f64 {
    (0.5 - 10.0 * delta) / m as f64
}

/// Smallest `N` whose central levels fit in the budget `delta`.
fn central_budget_n(delta: f64) -> usize {
    ((1.0 / delta - 1.0) / 2.0).ceil().max(1.0) as usize
}

/// Perturbs `phi0` on the central levels of a pure tower so that the
/// c-matched pairing puts it into `U(C, a, c_a, g)`.
pub fn perturb_simple(phi0: &Cocycle, base: &BaseSystem, group: &Group, params: &PerturbationParams) -> Result<PerturbationResult> {
    params.check()?;
    if !matches!(base.kind(), SystemKind::Rotation { .. } | SystemKind::Odometer { .. }) {
        return Err(LabError::Unsupported("the simple case runs over rotations and odometers".into()));
    }
    if phi0.target() != group || phi0.dim() != base.dim() {
        return Err(LabError::DomainMismatch("cocycle does not map the base into the group".into()));
    }
    if !phi0.is_finite_valued() {
        return Err(LabError::Precondition("phi0 must be finite-valued".into()));
    }
    if params.c.dim() != base.dim() {
        return Err(LabError::DomainMismatch("C does not live on the base".into()));
    }
    let [g] = params.target.as_slice() else {
        return Err(invalid("target", "the simple case takes one target"));
    };
    if !group.contains(g) {
        return Err(LabError::NotInGroup(group.format_element(g)));
    }
    let net = eps_net(group, params.a)?;
    let m = net.len();
    let c_a = simple_c_a(m, params.delta);
    if c_a <= 0.0 {
        return Err(invalid("delta", "c_a = (1/m)(1/2 - 10 delta) must be positive"));
    }
    let mut n = params.n.max(central_budget_n(params.delta));
    for _ in 0..=params.max_doublings {
        let h = 2 * n + 1;
        let tower = build_tower_at(base, h, params.delta, mix64(params.seed))?;
        let pure = purify(&tower, base, phi0, &params.c, params.column_cap)?;
        let balanced = c_level_stats(&pure, params.c.measure(), 0.5)?.aggregate_fraction;
        let pairing = random_pairing(&pure, &mut seeded(params.seed), PairingMode::CMatched)?;
        let slices = central_slices(&pure, &net.elements);
        let phi = Cocycle::with_override(phi0, slices.clone())?;
        let check = check_u_simple(&phi, base, &pairing.tau, &params.c, params.a, c_a, g)?;
        let distance = cocycle_metric(phi0, &phi)?;
        let res = PerturbationResult {
            phi,
            tau: pairing.tau,
            distance,
            fraction: check.fraction,
            c_a,
            passed: check.passed && distance <= params.delta,
            half_height: n,
            net_size: m,
            k0_table: Vec::new(),
            k0_pass_fraction: f64::NAN,
            draws: DrawLog::Slices(slices),
            seed: params.seed,
            balanced_columns: balanced,
        };
        if res.passed {
            return Ok(res);
        }
        n *= 2;
    }
    Err(LabError::HalfHeightCap { cap: n / 2 })
}

/// Central level of every column cut into `m` equal slices along the first
/// axis, slice `l` carrying `values[l]`.
fn central_slices(tower: &RokhlinTower, values: &[Element]) -> Vec<(Cuboid, Element)> {
    let Some(c) = tower.central() else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(tower.columns.len() * values.len());
    for col in &tower.columns {
        for (s, v) in col.level(c).slice(0, values.len()).into_iter().zip(values) {
            if s.volume() > 0.0 {
                out.push((s, v.clone()));
            }
        }
    }
    out
}

/// Data of the relative case: `Y = Z x K` via `gamma`, the homogeneous
/// space `K/H`, the fiber `V` and the cocycle `phi0 : Y -> G`.
#[derive(Clone, Debug)]
pub struct RelativeInstance {
    pub z: BaseSystem,
    pub space: HomogeneousSpace,
    pub gamma: Cocycle,
    pub fiber: FiberSpace,
    pub phi0: Cocycle,
}

/// Constants the relative construction derives from the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RelativeConstants {
    pub net: Vec<Element>,
    pub c_a: f64,
    pub eta: f64,
    /// Depth of the dyadic partition of each `K` axis.
    pub l: u32,
    /// Depth of the dyadic partition of `Z`.
    pub l_prime: u32,
    pub half_height: usize,
    pub coverage_eps: f64,
}

impl RelativeInstance {
    fn k_dim(&self) -> Result<usize> {
        match &self.space.group {
            Group::Torus(d) => Ok(*d),
            g if g.is_finite() => Err(LabError::FiniteExtension(format!("K = {g} is finite; the diagonal component obstructs relative ergodicity"))),
            g => Err(LabError::Unsupported(format!("relative perturbation needs a torus K, got {g}"))),
        }
    }

    fn validate(&self, params: &PerturbationParams) -> Result<(usize, Group)> {
        params.check()?;
        let d = self.k_dim()?;
        if !self.space.subgroup.is_trivial() {
            return Err(LabError::UnsupportedSubgroup("only H = {e} is supported".into()));
        }
        if self.fiber != FiberSpace::Point {
            return Err(LabError::Unsupported("only a one-point fiber V is supported".into()));
        }
        if self.z.dim() != 1 || !matches!(self.z.kind(), SystemKind::Rotation { .. } | SystemKind::Odometer { .. }) {
            return Err(LabError::Unsupported("Z must be a rotation or an odometer".into()));
        }
        if self.gamma.dim() != 1 || self.gamma.target() != &self.space.group || !self.gamma.is_finite_valued() {
            return Err(LabError::DomainMismatch("gamma must be a finite-valued Z -> K cocycle".into()));
        }
        if self.phi0.dim() != 1 + d || !self.phi0.is_finite_valued() {
            return Err(LabError::DomainMismatch("phi0 must be a finite-valued cocycle on Z x K".into()));
        }
        if params.c.dim() != 1 + 2 * d {
            return Err(LabError::DomainMismatch("C must live on Z x K x K".into()));
        }
        if !(params.b > 0.0 && params.b < 1.0) {
            return Err(invalid("b", "must lie in (0,1)"));
        }
        let g = self.phi0.target().clone();
        if params.target.len() != 2 || params.target.iter().any(|x| !g.contains(x)) {
            return Err(invalid("target", "the relative case takes two targets in G"));
        }
        Ok((d, g))
    }

    /// The extension `Y` as a box-coordinate system.
    pub fn y_system(&self) -> Result<BaseSystem> {
        make_skew_product(self.z.clone(), self.space.group.clone(), self.gamma.clone())?.into_base()
    }

    /// `psi0 = (phi0, phi0(. k0))` on `Y`.
    pub fn pair_cocycle(&self, phi: &Cocycle, k0: &Element) -> Result<Cocycle> {
        let mut s: Shift = SmallVec::from_elem(0, phi.dim());
        s[1..].copy_from_slice(&k0.0);
        Cocycle::tuple(phi.dim(), vec![(phi.clone(), PointMap::Identity), (phi.clone(), PointMap::Translate(s))])
    }

    pub fn constants(&self, params: &PerturbationParams) -> Result<RelativeConstants> {
        let (d, g) = self.validate(params)?;
        let net = eps_net(&g, params.a)?.elements;
        let m = net.len() as f64;
        let c_a = 1.0 / (100.0 * m * m);
        let eta = self.space.eta_margin(params.b / 10.0)?;
        let l = (1..=30u32)
            .find(|&l| 0.5f64.powi(l as i32) < eta)
            .ok_or_else(|| invalid("b", "margin too small for the K partition"))?;
        let p = 1.0 / (m * m);
        let cells = 2f64.powi((l as usize * d) as i32);
        let bound = p * p * params.b / (40.0 * (cells + 1.0));
        let mc = params.c.measure();
        let l_prime = (1..=40u32)
            .find(|&lp| 6.0 * 0.5f64.powi(lp as i32) / cells / (mc * mc) <= bound)
            .ok_or_else(|| invalid("b", "P partition would exceed 40 bits"))?;
        let n = params
            .n
            .max(central_budget_n(params.delta))
            .max((4.0 * params.del_constant).ceil() as usize);
        Ok(RelativeConstants {
            net,
            c_a,
            eta,
            l,
            l_prime,
            half_height: n,
            coverage_eps: params.delta / 10.0,
        })
    }
}

/// `C_{k0} = {(z, k) : (z, k, k k0) in C}` for a torus `K` and `H = {e}`.
pub fn component_slice(c: &BoxSet, d: usize, k0: &Element) -> BoxSet {
    let mut out = Vec::new();
    for b in c.boxes() {
        let mut acc = vec![Cuboid::new([b.sides[0]])];
        for t in 0..d {
            let first = b.sides[1 + t];
            let second = b.sides[1 + d + t];
            // k in second - k0
            let (s1, s2) = second.translate(k0.0[t].wrapping_neg());
            let mut sides = Vec::new();
            for s in std::iter::once(s1).chain(s2) {
                if let Some(x) = first.intersect(&s) {
                    sides.push(x);
                }
            }
            acc = acc
                .into_iter()
                .flat_map(|a| {
                    sides.iter().map(move |s| {
                        let mut a = a.clone();
                        a.sides.push(*s);
                        a
                    })
                })
                .collect();
        }
        out.extend(acc);
    }
    BoxSet::from_disjoint(1 + d, out)
}

/// Pieces of `kbox` on which both `Q(k)` and `Q(k k0)` are constant:
/// `(length, q, q')` with `q` folded over the axes.
fn k_pieces(kbox: &[Interval], k0: &Element, l: u32) -> Vec<(f64, u64, u64)> {
    let step = ONE >> l;
    let mut acc: Vec<(f64, u64, u64)> = vec![(1.0, 0, 0)];
    for (t, side) in kbox.iter().enumerate() {
        let shift = k0.0[t] as u128;
        let mut cuts: Vec<u128> = Vec::new();
        let mut x = side.lo.div_ceil(step) * step;
        while x < side.hi {
            cuts.push(x);
            x += step;
        }
        // where k + k0 crosses a multiple of the step
        let first = (step - shift % step) % step;
        let mut x = first + (side.lo.saturating_sub(first)).div_ceil(step) * step;
        while x < side.hi {
            cuts.push(x);
            x += step;
        }
        cuts.push(side.lo);
        cuts.push(side.hi);
        cuts.sort_unstable();
        cuts.dedup();
        let mut axis = Vec::with_capacity(cuts.len());
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi <= lo {
                continue;
            }
            let q = (lo >> (64 - l)) as u64;
            let q2 = (((lo + shift) % ONE) >> (64 - l)) as u64;
            axis.push(((hi - lo) as f64 / ONE as f64, q, q2));
        }
        acc = acc
            .into_iter()
            .flat_map(|(len, q, q2)| axis.iter().map(move |&(al, aq, aq2)| (len * al, (q << l) | aq, (q2 << l) | aq2)))
            .collect();
    }
    acc
}

/// One seed of the relative construction, measured on a grid of `k0`.
pub fn perturb_relative(inst: &RelativeInstance, params: &PerturbationParams) -> Result<PerturbationResult> {
    let (d, g) = inst.validate(params)?;
    let consts = inst.constants(params)?;
    let k = inst.space.group.clone();
    let y = inst.y_system()?;
    let n = consts.half_height;
    let h = 2 * n + 1;
    let seed = params.seed;
    let tower = build_tower_at(&y, h, consts.coverage_eps, mix64(seed))?;
    let pairing = random_pairing(&tower, &mut seeded(derive_seed(seed, 0)), PairingMode::UniformPermutation)?;
    let pi = pairing.pi.clone().expect("uniform mode records pi");

    let region: Vec<Cuboid> = tower.columns.iter().map(|c| c.level(n)).collect();
    let grid_seed = derive_seed(seed, 1);
    let patch = GridPatch {
        base: inst.phi0.clone(),
        region: BoxIndex::new(region.iter().map(|b| (b.clone(), ())).collect()),
        p_bits: consts.l_prime,
        q_bits: consts.l,
        values: consts.net.clone(),
        seed: grid_seed,
    };
    let phi = Cocycle::grid(patch)?;
    let distance = cocycle_metric(&inst.phi0, &phi)?;

    let mut grid_rng = seeded(derive_seed(params.k0_seed, 0x6b30));
    let mut k0s = Vec::with_capacity(params.k0_grid);
    let mut tries = 0usize;
    while k0s.len() < params.k0_grid {
        tries += 1;
        if tries > 1000 * params.k0_grid.max(1) {
            return Err(LabError::Precondition("could not sample k0 away from H".into()));
        }
        let k0 = k.haar_sample(&mut grid_rng);
        if inst.space.dist_to_subgroup(&k0)? > consts.eta {
            k0s.push(k0);
        }
    }

    let ctx = RelCtx {
        inst,
        y: &y,
        tower: &tower,
        pi: &pi,
        g: &g,
        consts: &consts,
        grid_seed,
        a: params.a,
        targets: (&params.target[0], &params.target[1]),
        cap: params.column_cap,
    };
    let mut table = Vec::with_capacity(k0s.len());
    for k0 in k0s {
        let c_k0 = component_slice(&params.c, d, &k0);
        let mc = c_k0.measure();
        let lhs = ctx.lhs(&k0, &c_k0)?;
        let threshold = consts.c_a * mc * mc;
        table.push(K0Row {
            k0,
            lhs,
            c_measure: mc,
            threshold,
            pass: lhs > threshold,
        });
    }
    let passing = table.iter().filter(|r| r.pass).count() as f64 / table.len().max(1) as f64;
    let fraction = table
        .iter()
        .map(|r| if r.c_measure > 0.0 { r.lhs / (r.c_measure * r.c_measure) } else { 0.0 })
        .fold(f64::INFINITY, f64::min);
    Ok(PerturbationResult {
        phi,
        tau: pairing.tau,
        distance,
        fraction,
        c_a: consts.c_a,
        passed: passing >= 1.0 - params.b && distance <= params.delta,
        half_height: n,
        net_size: consts.net.len(),
        k0_table: table,
        k0_pass_fraction: passing,
        draws: DrawLog::Grid {
            seed: grid_seed,
            p_bits: consts.l_prime,
            q_bits: consts.l,
            region,
            values: consts.net,
        },
        seed,
        balanced_columns: f64::NAN,
    })
}

/// Runs seeds `derive_seed(params.seed, i)` for `i < seeds` and stops at the
/// first success. Returns every attempted result.
pub fn relative_seed_sweep(inst: &RelativeInstance, params: &PerturbationParams, seeds: usize) -> Result<Vec<PerturbationResult>> {
    let mut out = Vec::new();
    for i in 0..seeds {
        let mut p = params.clone();
        p.seed = derive_seed(params.seed, i as u64);
        p.k0_seed = params.k0_seed;
        let r = perturb_relative(inst, &p)?;
        let done = r.passed;
        out.push(r);
        if done {
            break;
        }
    }
    Ok(out)
}

struct RelCtx<'a> {
    inst: &'a RelativeInstance,
    y: &'a BaseSystem,
    tower: &'a RokhlinTower,
    pi: &'a [usize],
    g: &'a Group,
    consts: &'a RelativeConstants,
    grid_seed: u64,
    a: f64,
    targets: (&'a Element, &'a Element),
    cap: usize,
}

impl RelCtx<'_> {
    /// Which net values put a coordinate within `a` of its target, given the
    /// prefix products around the central level.
    fn mask(&self, h: &Element, hp: &Element, target: &Element, upper: bool) -> Vec<bool> {
        let g = self.g;
        self.consts
            .net
            .iter()
            .map(|f| {
                let v = g.compose(&g.compose(hp, f), h);
                let v = if upper { g.inverse(&v) } else { v };
                g.dist(&v, target) < self.a
            })
            .collect()
    }

    /// Exact measure of `{y in C_{k0} : d(psi_tau(y), (g1, g2)) < a}`.
    fn lhs(&self, k0: &Element, c_k0: &BoxSet) -> Result<f64> {
        let g = self.g;
        let ar = g.arity();
        let n = self.tower.half();
        let psi0 = self.inst.pair_cocycle(&self.inst.phi0, k0)?;
        let pure = purify(self.tower, self.y, &psi0, c_k0, self.cap)?;
        let comp = |e: &Element, i: usize| Element::from_slice(&e.0[i * ar..(i + 1) * ar]);
        let pair_id = Element::concat(&g.identity(), &g.identity());

        let mut classes: HashMap<(Vec<bool>, Vec<bool>), usize> = HashMap::new();
        // (class, central k-box) -> dyadic P cell -> weight
        let mut agg: BTreeMap<(usize, Cuboid), BTreeMap<u64, f64>> = BTreeMap::new();
        let mut paired = 0.0;
        let lp = self.consts.l_prime;
        let pstep = ONE >> lp;
        for col in &pure.columns {
            let vals = &col.values;
            // h[j] = v_{N-1} ... v_j, hp[u] = v_{u-1} ... v_{N+1}
            let mut hs = vec![pair_id.clone(); n + 1];
            for j in (0..n).rev() {
                hs[j] = product_compose(g, ar, &hs[j + 1], &vals[j]);
            }
            let mut hps = vec![pair_id.clone(); 2 * n + 1];
            for u in n + 1..2 * n {
                hps[u + 1] = product_compose(g, ar, &vals[u], &hps[u]);
            }
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for j in 0..n {
                let u = n + 1 + self.pi[j];
                for (level, upper) in [(j, false), (u, true)] {
                    if !col.in_c[level] {
                        continue;
                    }
                    paired += col.mass();
                    let (h, hp) = (&hs[j], &hps[u]);
                    let m1 = self.mask(&comp(h, 0), &comp(hp, 0), self.targets.0, upper);
                    let m2 = self.mask(&comp(h, 1), &comp(hp, 1), self.targets.1, upper);
                    if !m1.iter().any(|&x| x) || !m2.iter().any(|&x| x) {
                        continue;
                    }
                    let next = classes.len();
                    let id = *classes.entry((m1, m2)).or_insert(next);
                    *counts.entry(id).or_insert(0) += 1;
                }
            }
            if counts.is_empty() {
                continue;
            }
            let central = col.level(n);
            let iz = central.sides[0];
            let kbox = Cuboid::new(central.sides[1..].iter().copied());
            for (id, cnt) in counts {
                let w = agg.entry((id, kbox.clone())).or_default();
                let mut p = iz.lo / pstep;
                while p * pstep < iz.hi {
                    let lo = (p * pstep).max(iz.lo);
                    let hi = ((p + 1) * pstep).min(iz.hi);
                    *w.entry(p as u64).or_insert(0.0) += cnt as f64 * (hi - lo) as f64 / ONE as f64;
                    p += 1;
                }
            }
        }
        let mut class_of = vec![(Vec::new(), Vec::new()); classes.len()];
        for (k, id) in classes {
            class_of[id] = k;
        }
        let m = self.consts.net.len();
        let mut total = 0.0;
        for ((id, kbox), weights) in &agg {
            let (m1, m2) = &class_of[*id];
            let pieces = k_pieces(&kbox.sides, k0, self.consts.l);
            for (&p, &w) in weights {
                let mut s = 0.0;
                for &(len, q, q2) in &pieces {
                    if m1[grid_draw(self.grid_seed, p, q, m)] && m2[grid_draw(self.grid_seed, p, q2, m)] {
                        s += len;
                    }
                }
                total += w * s;
            }
        }
        let e = g.identity();
        if g.dist(&e, self.targets.0) < self.a && g.dist(&e, self.targets.1) < self.a {
            total += (c_k0.measure() - paired).max(0.0);
        }
        Ok(total)
    }
}

/// Componentwise product in `G x G` of elements stored as concatenations.
fn product_compose(g: &Group, ar: usize, x: &Element, y: &Element) -> Element {
    let a = g.compose(&Element::from_slice(&x.0[..ar]), &Element::from_slice(&y.0[..ar]));
    let b = g.compose(&Element::from_slice(&x.0[ar..]), &Element::from_slice(&y.0[ar..]));
    Element::concat(&a, &b)
}

/// Fixed test family on a `dim`-dimensional base: the whole space, halves
/// and quarters along the first axis.
pub fn dyadic_test_family(dim: usize) -> Vec<BoxSet> {
    let mut out = vec![BoxSet::full(dim)];
    for parts in [2usize, 4] {
        for b in Cuboid::full(dim).slice(0, parts) {
            out.push(BoxSet::from_disjoint(dim, vec![b]));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanRow {
    pub target: Element,
    pub height: usize,
    /// Minimum over the test family of the best fraction over pairings.
    pub score: f64,
    /// Index of the test set attaining the minimum.
    pub worst_set: usize,
}

/// Essential-value proxy: for each target and tower height, the minimum
/// over dyadic test sets of the best c-matched fraction over `seeds` towers.
/// Non-finite cocycles are discretized at depth `bits`.
pub fn essential_value_scan(
    phi: &Cocycle,
    base: &BaseSystem,
    targets: &[Element],
    a: f64,
    heights: &[usize],
    seeds: usize,
    bits: u32,
) -> Result<Vec<ScanRow>> {
    if targets.is_empty() {
        return Err(invalid("targets", "need at least one target"));
    }
    let g = phi.target();
    let phid = phi.discretize(bits)?;
    let family = dyadic_test_family(base.dim());
    let e = g.identity();
    let mut rows = Vec::new();
    for &h in heights {
        // best[target][set]
        let mut best: Vec<Vec<f64>> = targets
            .iter()
            .map(|t| vec![if g.dist(&e, t) < a { 1.0 } else { 0.0 }; family.len()])
            .collect();
        for s in 0..seeds {
            let tower = build_tower_at(base, h, 0.1, mix64(derive_seed(0x5ca9, s as u64)))?;
            for (ci, c) in family.iter().enumerate() {
                let pure = purify(&tower, base, &phid, c, DEFAULT_COLUMN_CAP)?;
                let pairing = random_pairing(&pure, &mut seeded(0), PairingMode::CMatched)?;
                let fr = matched_fractions(&pure, &pairing.matched, g, targets, a, c.measure());
                for (t, f) in fr.into_iter().enumerate() {
                    best[t][ci] = best[t][ci].max(f);
                }
            }
        }
        for (t, target) in targets.iter().enumerate() {
            let (worst_set, score) = best[t]
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
            rows.push(ScanRow {
                target: target.clone(),
                height: h,
                score,
                worst_set,
            });
        }
    }
    Ok(rows)
}

/// Fractions from the per-level values of a pure tower: the swap of `j` and
/// `u` gives `v_{u-1} ... v_j` on level `j` and its inverse on level `u`.
fn matched_fractions(
    tower: &RokhlinTower,
    matched: &[(usize, usize, usize)],
    g: &Group,
    targets: &[Element],
    a: f64,
    c_measure: f64,
) -> Vec<f64> {
    let mut good = vec![0.0; targets.len()];
    let mut moved = 0.0;
    for &(ci, j, u) in matched {
        let col = &tower.columns[ci];
        let mut v = g.identity();
        for lvl in j..u {
            v = g.compose(&col.values[lvl], &v);
        }
        let vi = g.inverse(&v);
        moved += 2.0 * col.mass();
        for (t, target) in targets.iter().enumerate() {
            if g.dist(&v, target) < a {
                good[t] += col.mass();
            }
            if g.dist(&vi, target) < a {
                good[t] += col.mass();
            }
        }
    }
    let e = g.identity();
    for (t, target) in targets.iter().enumerate() {
        if g.dist(&e, target) < a {
            good[t] += (c_measure - moved).max(0.0);
        }
    }
    good.into_iter().map(|x| x / c_measure).collect()
}

/// A constant `K`-valued cocycle on a one-dimensional base.
pub fn constant_rotation_gamma(k: &Group, beta: &[f64]) -> Result<Cocycle> {
    let e = Element(beta.iter().map(|&b| from_unit(b)).collect());
    Cocycle::constant(1, k.clone(), e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{golden_rotation, make_odometer};

    #[test]
    fn k_pieces_cover_the_box() {
        let k0 = Element::from_slice(&[from_unit(0.3)]);
        let ps = k_pieces(&[Interval::FULL], &k0, 3);
        let total: f64 = ps.iter().map(|p| p.0).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(ps.len(), 16);
        for &(_, q, q2) in &ps {
            assert!(q2 == (q + 2) % 8 || q2 == (q + 3) % 8, "{q} {q2}");
        }
        for q in 0..8 {
            assert_eq!(ps.iter().filter(|p| p.1 == q).count(), 2);
        }
    }

    #[test]
    fn trivial_membership() {
        let base = golden_rotation();
        let g = Group::torus(1);
        let third = g.parse_element("1/3").unwrap();
        let phi = Cocycle::constant(1, g.clone(), third.clone()).unwrap();
        let tau = FiniteFullGroupElement::unchecked(1, vec![(Cuboid::full(1), 1)]);
        let r = check_u_simple(&phi, &base, &tau, &BoxSet::full(1), 0.1, 0.008, &third).unwrap();
        assert_eq!(r.fraction, 1.0);
        let e = Cocycle::identity(1, g.clone());
        let id = FiniteFullGroupElement::identity(1);
        let r = check_u_simple(&e, &base, &id, &BoxSet::full(1), 0.1, 0.008, &third).unwrap();
        assert_eq!(r.fraction, 0.0);
        assert!(!r.passed);
    }

    #[test]
    fn simple_over_cyclic_two() {
        let base = make_odometer(30).unwrap();
        let g = Group::Cyclic(2);
        let one = g.parse_element("1").unwrap();
        let phi0 = Cocycle::identity(1, g.clone());
        let params = PerturbationParams::new(BoxSet::full(1), 0.5, 0.01, vec![one]);
        let r = perturb_simple(&phi0, &base, &g, &params).unwrap();
        assert_eq!(r.net_size, 2);
        assert!((r.c_a - 0.5 * 0.4).abs() < 1e-12);
        assert!(r.passed && r.distance <= 0.01);
    }

    #[test]
    fn null_c_rejected() {
        let base = golden_rotation();
        let g = Group::torus(1);
        let phi0 = Cocycle::identity(1, g.clone());
        let params = PerturbationParams::new(BoxSet::empty(1), 0.1, 0.01, vec![g.identity()]);
        assert!(perturb_simple(&phi0, &base, &g, &params).is_err());
    }

    #[test]
    fn finite_k_rejected() {
        let k = Group::Cyclic(2);
        let inst = RelativeInstance {
            z: golden_rotation(),
            space: HomogeneousSpace::trivial(k.clone()),
            gamma: Cocycle::identity(1, k.clone()),
            fiber: FiberSpace::Point,
            phi0: Cocycle::identity(2, Group::Cyclic(2)),
        };
        let g = Group::Cyclic(2);
        let one = g.parse_element("1").unwrap();
        let params = PerturbationParams::new(BoxSet::full(3), 0.1, 0.05, vec![one.clone(), one]);
        assert!(matches!(perturb_relative(&inst, &params), Err(LabError::FiniteExtension(_))));
    }
}
