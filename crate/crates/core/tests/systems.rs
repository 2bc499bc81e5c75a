use distal_lab::boxes::{circle_dist, from_unit, to_unit, Point};
use distal_lab::cocycles::{cocycle_power, parse_cocycle, Cocycle};
use distal_lab::groups::{Group, HomogeneousSpace, Subgroup};
use distal_lab::rng::seeded;
use distal_lab::systems::{
    golden_rotation, make_odometer, make_rotation, make_skew_product, parse_system, relative_square_component, sqrt2_rotation,
    translated_tuple_system, BaseSystem, FiberSpace, RokhlinCocycle, SkewProductSystem,
};
use distal_lab::LabError;
use proptest::prelude::*;
use smallvec::SmallVec;
use std::collections::HashSet;

fn skews() -> Vec<SkewProductSystem> {
    let t1 = Group::Torus(1);
    let z2 = Group::Cyclic(2);
    vec![
        make_skew_product(golden_rotation(), t1.clone(), Cocycle::coordinate(1, 0, 1).unwrap()).unwrap(),
        make_skew_product(sqrt2_rotation(), z2.clone(), parse_cocycle("cells:[(0,0.3):1,(0.5,0.9):1]", 1, &z2).unwrap()).unwrap(),
        make_skew_product(make_odometer(20).unwrap(), Group::O2, Cocycle::constant(1, Group::O2, Group::O2.parse_element("s0.1").unwrap()).unwrap())
            .unwrap(),
    ]
}

#[test]
fn base_maps_are_invertible() {
    for sys in [golden_rotation(), sqrt2_rotation(), make_odometer(20).unwrap(), parse_system("rotation:0.3819660112501051").unwrap()] {
        let mut rng = seeded(1);
        for _ in 0..100_000 {
            let p = sys.sample(&mut rng);
            let mut q = p.clone();
            sys.forward(&mut q);
            sys.backward(&mut q);
            assert_eq!(p, q);
        }
    }
}

#[test]
fn skew_products_are_invertible_and_factor() {
    for sk in skews() {
        let mut rng = seeded(2);
        for _ in 0..100_000 {
            let p = sk.sample(&mut rng);
            let mut q = p.clone();
            sk.step(&mut q);
            let mut b: Point = SmallVec::from_slice(&p[..1]);
            sk.base.forward(&mut b);
            assert_eq!(&q[..1], &b[..]);
            sk.step_back(&mut q);
            assert_eq!(p, q);
        }
    }
}

#[test]
fn skew_orbits_follow_cocycle_powers() {
    for sk in skews() {
        let mut rng = seeded(3);
        for _ in 0..200 {
            let p = sk.sample(&mut rng);
            let mut q = p.clone();
            for n in 1..=50i64 {
                sk.step(&mut q);
                let phin = cocycle_power(&sk.cocycle, &sk.base, n, &p[..1]);
                let g = sk.group.compose(&phin, &distal_lab::Element::from_slice(&p[1..]));
                let mut y: Point = SmallVec::from_slice(&p[..1]);
                sk.base.iterate(&mut y, n);
                assert_eq!(&q[..1], &y[..]);
                assert!(sk.group.dist(&g, &distal_lab::Element::from_slice(&q[1..])) < 1e-12, "{} n={n}", sk.group);
            }
        }
    }
}

#[test]
fn anzai_skew_preserves_product_measure() {
    // Pearson test on a 4 x 8 grid of Y x G; 31 degrees of freedom, the
    // 1e-3 critical value is 61.1.
    let sk = &skews()[0];
    let mut rng = seeded(4);
    let n = 100_000;
    let mut counts = [0u64; 32];
    for _ in 0..n {
        let mut p = sk.sample(&mut rng);
        sk.step(&mut p);
        let i = (to_unit(p[0]) * 4.0) as usize;
        let j = (to_unit(p[1]) * 8.0) as usize;
        counts[i * 8 + j] += 1;
    }
    let e = n as f64 / 32.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    assert!(chi2 < 61.1, "chi2 {chi2}");
}

#[test]
fn skew_product_examples() {
    // Identity cocycle: the fiber coordinate never moves.
    let e = make_skew_product(golden_rotation(), Group::Torus(1), Cocycle::identity(1, Group::Torus(1))).unwrap();
    let mut p: Point = SmallVec::from_slice(&[from_unit(0.2), from_unit(0.7)]);
    for _ in 0..100 {
        e.step(&mut p);
        assert_eq!(p[1], from_unit(0.7));
    }
    // A constant nontrivial Z/2 value flips the fiber every step.
    let z2 = Group::Cyclic(2);
    let flip = make_skew_product(golden_rotation(), z2.clone(), parse_cocycle("const:1", 1, &z2).unwrap()).unwrap();
    let mut p: Point = SmallVec::from_slice(&[from_unit(0.2), 0]);
    for i in 1..=20u64 {
        flip.step(&mut p);
        assert_eq!(p[1], i % 2);
    }
    // Anzai square: (y + 2 alpha, g + 2y + alpha).
    let anzai = &skews()[0];
    let al = to_unit(golden_rotation().alpha().unwrap());
    let mut p: Point = SmallVec::from_slice(&[from_unit(0.41), from_unit(0.05)]);
    anzai.step(&mut p);
    anzai.step(&mut p);
    assert!(circle_dist(p[0], from_unit(0.41 + 2.0 * al)) < 1e-12);
    assert!(circle_dist(p[1], from_unit(0.05 + 0.82 + al)) < 1e-12);
    // Domain mismatch.
    assert!(make_skew_product(golden_rotation(), Group::Cyclic(2), Cocycle::identity(1, Group::Torus(1))).is_err());
}

#[test]
fn rotation_angles_are_checked() {
    assert!(matches!(make_rotation(0.25), Err(LabError::RationalAngle(_))));
    let g = golden_rotation();
    let mut y: Point = SmallVec::from_slice(&[from_unit(0.5)]);
    g.forward(&mut y);
    assert!((to_unit(y[0]) - (0.5 + (5f64.sqrt() - 1.0) / 2.0 - 1.0)).abs() < 1e-12);
}

fn o2_component() -> distal_lab::systems::RelativeSquareComponent {
    let k = Group::O2;
    let h = Subgroup::Finite(vec![k.identity(), k.parse_element("s0").unwrap()]);
    let space = HomogeneousSpace::new(k.clone(), h).unwrap();
    let gamma = parse_cocycle("cells:[(0,0.5):r0.1,(0.5,1):s0.3]", 1, &k).unwrap();
    relative_square_component(golden_rotation(), space, gamma, k.parse_element("r1/8").unwrap(), FiberSpace::Point, RokhlinCocycle::Identity)
        .unwrap()
}

#[test]
fn component_correspondence_is_injective_and_equivariant() {
    let comp = o2_component();
    assert!(comp.h_k0.is_trivial());
    let mut rng = seeded(5);
    let mut inputs = HashSet::new();
    let mut outputs = HashSet::new();
    for _ in 0..10_000 {
        let mut p = comp.sample(&mut rng);
        let (z, k) = comp.correspond(&p).unwrap();
        inputs.insert(p.clone());
        outputs.insert((z.clone(), k.clone()));
        let mut z2 = z;
        let want = comp.quotient_step(&mut z2, &k).unwrap();
        comp.step(&mut p);
        let (z3, got) = comp.correspond(&p).unwrap();
        assert_eq!(z3, z2);
        assert!(Group::O2.dist(&got, &want) <= 1e-12);
    }
    assert_eq!(inputs.len(), outputs.len());
}

#[test]
fn group_component_is_rigidly_coupled() {
    let k = Group::Torus(2);
    let gamma = Cocycle::constant(1, k.clone(), k.parse_element("0.31;0.77").unwrap()).unwrap();
    let k0 = k.parse_element("0.2;0.45").unwrap();
    let comp =
        relative_square_component(golden_rotation(), HomogeneousSpace::trivial(k.clone()), gamma, k0.clone(), FiberSpace::Point, RokhlinCocycle::Identity)
            .unwrap();
    assert_eq!(comp.h_k0, Subgroup::trivial(&k));
    let mut rng = seeded(6);
    for _ in 0..100 {
        let mut p = comp.sample(&mut rng);
        for _ in 0..50 {
            comp.step(&mut p);
            let k1 = distal_lab::Element::from_slice(&p[1..3]);
            assert_eq!(k.compose(&k1, &k0).0.as_slice(), &p[3..5]);
        }
    }
    assert!(relative_square_component(
        golden_rotation(),
        HomogeneousSpace::trivial(k.clone()),
        Cocycle::identity(1, Group::Torus(1)),
        k.identity(),
        FiberSpace::Point,
        RokhlinCocycle::Identity
    )
    .is_err());
}

#[test]
fn component_preserves_its_measure() {
    // Push mu_{k0} forward once and compare the (z, k1) histogram with the
    // uniform one; 15 degrees of freedom, 1e-3 critical value 37.7.
    let comp = o2_component();
    let mut rng = seeded(7);
    let n = 64_000;
    let mut counts = [0u64; 16];
    for _ in 0..n {
        let mut p = comp.sample(&mut rng);
        comp.step(&mut p);
        let i = (to_unit(p[0]) * 4.0) as usize;
        let j = (to_unit(p[1]) * 4.0) as usize;
        counts[i * 4 + j] += 1;
    }
    let e = n as f64 / 16.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    assert!(chi2 < 37.7, "chi2 {chi2}");
}

#[test]
fn tuple_cocycles() {
    let y = make_skew_product(golden_rotation(), Group::Torus(1), Cocycle::constant(1, Group::Torus(1), from_unit_el(0.3)).unwrap())
        .unwrap()
        .into_base()
        .unwrap();
    let t1 = Group::Torus(1);
    let phi_y = Cocycle::coordinate(2, 1, 1).unwrap();
    let k1 = t1.parse_element("1/3").unwrap();
    let k2 = t1.parse_element("0.9").unwrap();
    let sys = translated_tuple_system(&y, &[k1.clone(), k2.clone()], &phi_y).unwrap();
    assert_eq!(sys.group.arity(), 3);
    let mut rng = seeded(8);
    for _ in 0..1000 {
        let p = y.sample(&mut rng);
        let v = sys.cocycle.eval(&p);
        let k = p[1];
        for (i, shift) in [0, k1.0[0], k2.0[0]].into_iter().enumerate() {
            assert_eq!(v.0[i], k.wrapping_add(shift));
        }
    }
    let ident = translated_tuple_system(&y, std::slice::from_ref(&k1), &Cocycle::identity(2, t1.clone())).unwrap();
    assert!(ident.group.is_identity(&ident.cocycle.eval(&[1, 2])));
    let plain = translated_tuple_system(&y, &[], &phi_y).unwrap();
    assert_eq!(plain.group, t1);
    // A rotation is a circle extension of a point; an odometer is not a
    // group extension here.
    assert!(translated_tuple_system(&golden_rotation(), std::slice::from_ref(&k1), &Cocycle::coordinate(1, 0, 1).unwrap()).is_ok());
    assert!(translated_tuple_system(&make_odometer(8).unwrap(), &[k1], &Cocycle::identity(1, t1.clone())).is_err());
}

fn from_unit_el(x: f64) -> distal_lab::Element {
    distal_lab::Element::from_slice(&[from_unit(x)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn iterate_agrees_with_repeated_steps(x in 0.0f64..1.0, n in -60i64..60, which in 0usize..3) {
        let sys: BaseSystem = [golden_rotation(), sqrt2_rotation(), make_odometer(24).unwrap()][which].clone();
        let mut a: Point = SmallVec::from_slice(&[from_unit(x)]);
        sys.iterate(&mut a, n);
        let mut b: Point = SmallVec::from_slice(&[from_unit(x)]);
        for _ in 0..n.unsigned_abs() {
            if n > 0 { sys.forward(&mut b) } else { sys.backward(&mut b) }
        }
        prop_assert_eq!(a, b);
    }
}
