use distal_lab::boxes::{BoxSet, Cuboid, Interval, Point};
use distal_lab::cocycles::{parse_cocycle, Cocycle};
use distal_lab::groups::Group;
use distal_lab::rng::seeded;
use distal_lab::systems::{convergent_denominators, golden_rotation, make_odometer, norm_multiple, sqrt2_rotation, BaseSystem};
use distal_lab::towers::{
    build_tower, build_tower_at, c_level_stats, kac_partition, purify, random_pairing, PairingMode, RokhlinTower, DEFAULT_COLUMN_CAP,
};
use distal_lab::LabError;
use proptest::prelude::*;
use rand::Rng;
use smallvec::SmallVec;

fn iv(a: f64, b: f64) -> Cuboid {
    Cuboid::interval(Interval::from_unit(a, b).unwrap())
}

fn set(parts: &[(f64, f64)]) -> BoxSet {
    BoxSet::union_of(1, parts.iter().map(|&(a, b)| iv(a, b)))
}

#[test]
fn odometer_towers_are_exact() {
    let o = make_odometer(20).unwrap();
    for k in [1, 4, 10] {
        let t = build_tower(&o, 1 << k, 1e-9).unwrap();
        assert_eq!(t.residual(), 0.0);
        assert!(t.levels_disjoint());
    }
}

#[test]
fn golden_kac_returns_are_two_consecutive_denominator_combinations() {
    let g = golden_rotation();
    let alpha = g.alpha().unwrap();
    let q = convergent_denominators(alpha, 12);
    for k in 3..9 {
        let base = iv(0.0, norm_multiple(alpha, q[k]));
        let kac = kac_partition(&g, &base, 1000).unwrap();
        let mut hs: Vec<u64> = kac.iter().map(|p| p.1).collect();
        hs.sort_unstable();
        hs.dedup();
        assert_eq!(hs.len(), 2, "k={k}: {hs:?}");
        let combos: Vec<u64> = (1..q.len()).flat_map(|i| [q[i], q[i] + q[i - 1]]).collect();
        assert!(hs.iter().all(|h| combos.contains(h)), "k={k}: {hs:?} vs {q:?}");
        // Kac: the return-time integral is 1.
        let total: f64 = kac.iter().map(|(p, t)| p.volume() * *t as f64).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn small_golden_tower_coverage_is_exact() {
    let g = golden_rotation();
    let t = build_tower(&g, 5, 0.5).unwrap();
    assert!(t.coverage() >= 0.5);
    let levels: f64 = t.level_boxes().iter().map(Cuboid::volume).sum();
    assert!((levels - t.coverage()).abs() < 1e-12);
    let base: f64 = t.columns.iter().map(|c| c.mass()).sum();
    assert!((t.coverage() - 5.0 * base).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn towers_are_disjoint_and_cover(h in 1usize..160, eps in 0.01f64..0.6, which in 0usize..3, offset: u64) {
        let sys: BaseSystem = [golden_rotation(), sqrt2_rotation(), make_odometer(20).unwrap()][which].clone();
        match build_tower_at(&sys, h, eps, offset) {
            Ok(t) => {
                prop_assert!(t.levels_disjoint());
                prop_assert!(t.coverage() >= 1.0 - eps - 1e-12);
                prop_assert!(t.columns.iter().all(|c| c.height() == h));
            }
            Err(LabError::UnattainableCoverage { best, requested }) => prop_assert!(best < requested),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}

fn assert_pure(t: &RokhlinTower, phi: &Cocycle, c: &BoxSet, seed: u64) {
    let mut rng = seeded(seed);
    for col in &t.columns {
        for i in 0..col.height() {
            let level = col.level(i);
            for _ in 0..100 {
                let p: Point = level.sides.iter().map(|s| (s.lo + (rng.random::<f64>() * s.len() as f64) as u128).min(s.hi - 1) as u64).collect();
                assert_eq!(phi.eval(&p), col.values[i]);
                assert_eq!(c.contains(&p), col.in_c[i]);
            }
        }
    }
}

#[test]
fn purified_columns_are_pure() {
    let t1 = Group::Torus(1);
    let z3 = Group::Cyclic(3);
    let cases: Vec<(BaseSystem, Cocycle, BoxSet, usize)> = vec![
        (golden_rotation(), parse_cocycle("cells:[(0,0.3):0.1,(0.3,0.55):0.5]", 1, &t1).unwrap(), set(&[(0.1, 0.45), (0.7, 0.8)]), 21),
        (sqrt2_rotation(), parse_cocycle("cells:[(0.2,0.9):2,(0.9,1):1]", 1, &z3).unwrap(), set(&[(0.0, 0.5)]), 11),
        (make_odometer(16).unwrap(), parse_cocycle("cells:[(0,0.5):1]", 1, &z3).unwrap(), set(&[(0.25, 0.6)]), 9),
    ];
    for (k, (sys, phi, c, h)) in cases.into_iter().enumerate() {
        let t = build_tower(&sys, h, 0.2).unwrap();
        let p = purify(&t, &sys, &phi, &c, DEFAULT_COLUMN_CAP).unwrap();
        assert!(p.purified && p.levels_disjoint());
        assert!((p.coverage() - t.coverage()).abs() < 1e-12);
        assert_pure(&p, &phi, &c, k as u64);
    }
}

#[test]
fn purify_examples() {
    let o = make_odometer(20).unwrap();
    let t = build_tower(&o, 4, 1e-9).unwrap();
    let z2 = Group::Cyclic(2);
    let constant = parse_cocycle("const:1", 1, &z2).unwrap();
    let p = purify(&t, &o, &constant, &BoxSet::full(1), DEFAULT_COLUMN_CAP).unwrap();
    assert_eq!(p.columns.len(), t.columns.len());
    assert_eq!(p.classes(), 1);
    let p = purify(&t, &o, &constant, &set(&[(0.0, 0.5)]), DEFAULT_COLUMN_CAP).unwrap();
    assert!(p.classes() <= 16);
    let two = parse_cocycle("cells:[(0,0.5):1]", 1, &z2).unwrap();
    for h in [3usize, 5, 8] {
        let t = build_tower(&golden_rotation(), h, 0.3).unwrap();
        let p = purify(&t, &golden_rotation(), &two, &BoxSet::full(1), DEFAULT_COLUMN_CAP).unwrap();
        assert!(p.classes() <= 1 << h);
    }
    assert!(matches!(
        purify(&build_tower(&golden_rotation(), 50, 0.1).unwrap(), &golden_rotation(), &two, &BoxSet::full(1), 3),
        Err(LabError::TooManyColumns { .. })
    ));
}

#[test]
fn c_level_stats_examples() {
    let o = make_odometer(20).unwrap();
    let z2 = Group::Cyclic(2);
    let e = Cocycle::identity(1, z2);
    let t = build_tower(&o, 9, 0.1).unwrap();
    let n = t.half();
    let whole = purify(&t, &o, &e, &BoxSet::full(1), DEFAULT_COLUMN_CAP).unwrap();
    let s = c_level_stats(&whole, 1.0, 0.0).unwrap();
    assert!(s.per_column.iter().all(|&(lo, up, _)| lo == n && up == n));
    assert_eq!(s.aggregate_fraction, 1.0);
    let empty = purify(&t, &o, &e, &BoxSet::empty(1), DEFAULT_COLUMN_CAP).unwrap();
    let s = c_level_stats(&empty, 0.0, 0.0).unwrap();
    assert!(s.per_column.iter().all(|&(lo, up, _)| lo == 0 && up == 0));
    let t = build_tower(&o, 1 << 10, 1e-9).unwrap();
    let half = purify(&t, &o, &e, &set(&[(0.0, 0.5)]), DEFAULT_COLUMN_CAP).unwrap();
    let s = c_level_stats(&half, 0.5, 0.5).unwrap();
    assert!(s.aggregate_fraction >= 0.9, "{}", s.aggregate_fraction);
    assert!(c_level_stats(&t, 0.5, 0.5).is_err());
}

fn apply_twice_is_identity(t: &RokhlinTower, sys: &BaseSystem, mode: PairingMode, seed: u64) {
    let mut rng = seeded(seed);
    let pairing = random_pairing(t, &mut rng, mode).unwrap();
    pairing.tau.validate(sys).unwrap();
    for &(ci, j, u) in &pairing.matched {
        assert!(ci < t.columns.len() && t.lower().contains(&j) && t.upper().contains(&u));
    }
    for _ in 0..10_000 {
        let p: Point = SmallVec::from_slice(&[rng.random()]);
        let mut q = p.clone();
        pairing.tau.apply(sys, &mut q);
        pairing.tau.apply(sys, &mut q);
        assert_eq!(p, q);
    }
}

#[test]
fn pairings_are_involutions() {
    let g = golden_rotation();
    let z2 = Group::Cyclic(2);
    let phi = parse_cocycle("cells:[(0,0.4):1]", 1, &z2).unwrap();
    let t = build_tower(&g, 41, 0.1).unwrap();
    let p = purify(&t, &g, &phi, &set(&[(0.2, 0.7)]), DEFAULT_COLUMN_CAP).unwrap();
    apply_twice_is_identity(&p, &g, PairingMode::CMatched, 1);
    apply_twice_is_identity(&p, &g, PairingMode::UniformPermutation, 2);
    let o = make_odometer(20).unwrap();
    let t = build_tower(&o, 33, 0.1).unwrap();
    apply_twice_is_identity(&t, &o, PairingMode::UniformPermutation, 3);
}

#[test]
fn pairing_examples() {
    let o = make_odometer(20).unwrap();
    let e = Cocycle::identity(1, Group::Cyclic(2));
    let t = build_tower(&o, 9, 0.1).unwrap();
    let mut rng = seeded(4);
    let none = purify(&t, &o, &e, &BoxSet::empty(1), DEFAULT_COLUMN_CAP).unwrap();
    let p = random_pairing(&none, &mut rng, PairingMode::CMatched).unwrap();
    assert!(p.matched.is_empty() && p.tau.cells().is_empty());
    let all = purify(&t, &o, &e, &BoxSet::full(1), DEFAULT_COLUMN_CAP).unwrap();
    let p = random_pairing(&all, &mut rng, PairingMode::CMatched).unwrap();
    assert_eq!(p.matched.len(), 4 * all.columns.len());
    assert!(p.matched.iter().all(|&(_, j, u)| u == 4 + 1 + j));
    let t3 = build_tower(&o, 3, 0.3).unwrap();
    for s in 0..10 {
        let p = random_pairing(&t3, &mut seeded(s), PairingMode::UniformPermutation).unwrap();
        assert!(p.matched.iter().all(|&(_, j, u)| j == 0 && u == 2));
    }
    assert!(random_pairing(&t, &mut rng, PairingMode::CMatched).is_err());
}

#[test]
fn uniform_pairing_overlap_respects_the_permutation_bound() {
    // C holds the first M lower and the first M upper levels of the tower;
    // a uniform pairing maps more than gamma^2 N / 2 of them into C with
    // frequency at least 1 - 10(1-gamma)/(N gamma^2), up to 4 sigma.
    let (n, gamma) = (50usize, 0.5f64);
    let m = (gamma * n as f64) as usize;
    let o = make_odometer(20).unwrap();
    let t = build_tower(&o, 2 * n + 1, 0.05).unwrap();
    let col = &t.columns[0];
    let mut c = BoxSet::empty(1);
    for i in (0..m).chain(n + 1..n + 1 + m) {
        c.insert(col.level(i));
    }
    let e = Cocycle::identity(1, Group::Cyclic(2));
    let p = purify(&t, &o, &e, &c, DEFAULT_COLUMN_CAP).unwrap();
    let col = p.columns.iter().position(|c| c.in_c.iter().filter(|&&b| b).count() == 2 * m).unwrap();
    let trials = 10_000;
    let mut rng = seeded(5);
    let mut hits = 0;
    for _ in 0..trials {
        let pairing = random_pairing(&p, &mut rng, PairingMode::UniformPermutation).unwrap();
        let cc = &p.columns[col];
        let k = pairing.matched.iter().filter(|&&(ci, j, u)| ci == col && cc.in_c[j] && cc.in_c[u]).count();
        if k as f64 > 0.5 * gamma * gamma * n as f64 {
            hits += 1;
        }
    }
    let bound = 1.0 - 10.0 * (1.0 - gamma) / (n as f64 * gamma * gamma);
    let freq = hits as f64 / trials as f64;
    assert!(freq >= bound - 4.0 * (bound * (1.0 - bound) / trials as f64).sqrt(), "{freq} vs {bound}");
}
