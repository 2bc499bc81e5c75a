//! One test per acceptance criterion. Each prints a single PASS/FAIL line
//! straight to stderr, so the lines show up even when the harness captures
//! output.

use distal_lab::boxes::{Cuboid, Point};
use distal_lab::cocycles::{cocycle_metric, cocycle_power, Cocycle};
use distal_lab::diagnostics::{birkhoff_score, finite_group_obstruction_check, TestFunction};
use distal_lab::experiment::{relative_instance, run_experiment, ExperimentConfig, ExperimentReport};
use distal_lab::genericizer::{perturb_relative, perturb_simple, relative_seed_sweep, simple_c_a, PerturbationParams, RelativeInstance};
use distal_lab::groups::{generator_density_scan, Element, Group, HomogeneousSpace};
use distal_lab::lemmalab::{random_del_instance, verify_del, verify_randomp, verify_simple, BlockSpec};
use distal_lab::rng::{derive_seed, seeded};
use distal_lab::systems::{convergent_denominators, golden_rotation, make_odometer, norm_multiple, parse_system, BaseSystem, FiberSpace};
use distal_lab::towers::{build_tower, kac_partition};
use distal_lab::{BoxSet, LabError};
use rand::Rng;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

fn report(id: &str, what: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("acceptance {id:<3} {what}: {verdict} ({detail})\n");
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

/// Criteria run one at a time so that wall-clock limits time only their own
/// work, not whatever else the harness schedules next to them.
fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/configs")
}

fn config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&config_dir().join(name)).unwrap()
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

#[test]
fn c01_permutation_overlap_grid() {
    let _serial = serial();
    let t = Instant::now();
    let mut worst = f64::INFINITY;
    let mut checked = 0;
    let mut failed = Vec::new();
    for (i, gamma) in [0.3, 0.5, 0.8].into_iter().enumerate() {
        for (j, n) in [50, 200, 1000].into_iter().enumerate() {
            let r = verify_randomp(gamma, n, 10_000, &mut seeded(derive_seed(1, (3 * i + j) as u64))).unwrap();
            if r.vacuous {
                continue;
            }
            checked += 1;
            worst = worst.min(r.empirical - (r.bound - r.margin));
            if !r.pass {
                failed.push(format!("gamma={gamma} N={n}"));
            }
        }
    }
    let el = t.elapsed();
    let pass = failed.is_empty() && el < Duration::from_secs(60);
    report("1", "permutation overlap grid", pass, format!("{checked} non-vacuous points, smallest slack {worst:.4}, {}", secs(el)));
    assert!(failed.is_empty(), "{failed:?}");
    assert!(el < Duration::from_secs(60));
}

#[test]
fn c02_cell_mass_bound() {
    let _serial = serial();
    let t = Instant::now();
    let mut rng = seeded(2);
    let mut violations = 0;
    for _ in 0..10_000 {
        let (m, o, d) = random_del_instance(&mut rng);
        if !verify_del(&m, &o, &d).unwrap().holds {
            violations += 1;
        }
    }
    let el = t.elapsed();
    let pass = violations == 0 && el < Duration::from_secs(10);
    report("2", "cell mass bound", pass, format!("{violations} violations in 10000 rational instances, {}", secs(el)));
    assert_eq!(violations, 0);
    assert!(el < Duration::from_secs(10));
}

#[test]
fn c03_dependent_sum_concentration_grid() {
    let _serial = serial();
    let t = Instant::now();
    let mut checked = 0;
    let mut worst = f64::INFINITY;
    let mut failed = Vec::new();
    let mut k = 0u64;
    for p in [0.3, 0.5] {
        for l in [0usize, 1, 4] {
            for n in [500usize, 2000] {
                let w = vec![1.0 / n as f64; n];
                for spec in [BlockSpec::Copies, BlockSpec::Anticorrelated] {
                    for p2 in [p, (p + 1.0) / 2.0, 1.0] {
                        k += 1;
                        let r = verify_simple(p, p2, l, &w, spec, 10_000, &mut seeded(derive_seed(3, k))).unwrap();
                        if r.vacuous {
                            continue;
                        }
                        checked += 1;
                        worst = worst.min(r.empirical - (r.bound - r.margin));
                        if !r.pass {
                            failed.push(format!("p={p} p'={p2} L={l} n={n} {spec:?}"));
                        }
                    }
                }
            }
        }
    }
    let el = t.elapsed();
    let pass = failed.is_empty() && el < Duration::from_secs(120);
    report("3", "dependent sum concentration grid", pass, format!("{checked} non-vacuous points, smallest slack {worst:.4}, {}", secs(el)));
    assert!(failed.is_empty(), "{failed:?}");
    assert!(el < Duration::from_secs(120));
}

fn random_cells(g: &Group, rng: &mut distal_lab::rng::LabRng) -> Cocycle {
    let parts = rng.random_range(1..=8usize);
    let cells: Vec<(Cuboid, Element)> = Cuboid::full(1).slice(0, parts).into_iter().map(|b| (b, g.haar_sample(rng))).collect();
    Cocycle::from_cells(1, g.clone(), cells, g.identity()).unwrap()
}

#[test]
fn c04_cocycle_algebra() {
    let _serial = serial();
    let systems: Vec<BaseSystem> = vec![golden_rotation(), parse_system("rotation:sqrt2").unwrap(), make_odometer(24).unwrap()];
    let groups = [Group::Torus(1), Group::Cyclic(3), Group::O2, Group::Torus(2)];
    let mut rng = seeded(4);
    let (mut worst_comp, mut worst_tri) = (0.0f64, f64::NEG_INFINITY);
    for i in 0..10_000 {
        let base = &systems[i % systems.len()];
        let g = &groups[i % groups.len()];
        let phi = random_cells(g, &mut rng);
        let y = base.sample(&mut rng);
        let n = rng.random_range(-40i64..=40);
        let m = rng.random_range(-40i64..=40);
        let mut ty: Point = y.clone();
        base.iterate(&mut ty, m);
        let lhs = cocycle_power(&phi, base, n + m, &y);
        let rhs = g.compose(&cocycle_power(&phi, base, n, &ty), &cocycle_power(&phi, base, m, &y));
        worst_comp = worst_comp.max(g.dist(&lhs, &rhs));

        let (a, b, c) = (random_cells(g, &mut rng), random_cells(g, &mut rng), random_cells(g, &mut rng));
        let ab = cocycle_metric(&a, &b).unwrap();
        let bc = cocycle_metric(&b, &c).unwrap();
        let ac = cocycle_metric(&a, &c).unwrap();
        worst_tri = worst_tri.max(ac - ab - bc);
    }
    let pass = worst_comp <= 1e-10 && worst_tri <= 1e-10;
    report("4", "cocycle algebra", pass, format!("max composition error {worst_comp:.2e}, max triangle excess {worst_tri:.2e}"));
    assert!(worst_comp <= 1e-10);
    assert!(worst_tri <= 1e-10);
}

#[test]
fn c05_tower_exactness() {
    let _serial = serial();
    let mut notes = Vec::new();
    let mut ok = true;
    let o = make_odometer(20).unwrap();
    for k in [1u32, 5, 10, 15] {
        let t = build_tower(&o, 1 << k, 1e-9).unwrap();
        ok &= t.residual() == 0.0 && t.levels_disjoint();
    }
    notes.push("odometer residual 0 at h = 2, 32, 1024, 32768".to_string());
    let g = golden_rotation();
    let alpha = g.alpha().unwrap();
    let q = convergent_denominators(alpha, 14);
    for k in 2..12 {
        let base = Cuboid::interval(distal_lab::Interval::from_unit(0.0, norm_multiple(alpha, q[k])).unwrap());
        let kac = kac_partition(&g, &base, 10_000).unwrap();
        let mut hs: Vec<u64> = kac.iter().map(|p| p.1).collect();
        hs.sort_unstable();
        hs.dedup();
        ok &= hs.len() == 2;
        ok &= hs.iter().all(|h| (1..q.len()).any(|i| *h == q[i] || *h == q[i] + q[i - 1]));
    }
    notes.push("golden Kac columns have two return times at 10 base sizes".into());
    for h in [5usize, 13, 89, 300] {
        let t = build_tower(&g, h, 0.5).unwrap();
        ok &= t.levels_disjoint();
    }
    report("5", "tower exactness", ok, notes.join("; "));
    assert!(ok);
}

#[test]
fn c06_simple_perturbation() {
    let _serial = serial();
    let cfg = config("perturb-simple.toml");
    let t = Instant::now();
    let base = golden_rotation();
    let t1 = Group::Torus(1);
    let mut params = PerturbationParams::new(BoxSet::full(1), 0.1, 0.01, vec![t1.parse_element("1/3").unwrap()]);
    let want_c_a = simple_c_a(50, 0.01);
    let mut passed = 0;
    let mut worst_d = 0.0f64;
    let mut worst_fraction = f64::INFINITY;
    for i in 0..32 {
        params.seed = derive_seed(cfg.seed, i);
        let r = perturb_simple(&Cocycle::identity(1, t1.clone()), &base, &t1, &params).unwrap();
        assert_eq!(r.net_size, 50);
        assert_eq!(r.c_a, want_c_a);
        worst_d = worst_d.max(r.distance);
        worst_fraction = worst_fraction.min(r.fraction);
        if r.passed && r.distance <= 0.01 {
            passed += 1;
        }
    }
    let el = t.elapsed();
    let pass = passed == 32 && el < Duration::from_secs(60);
    report(
        "6",
        "simple perturbation",
        pass,
        format!("{passed}/32 seeds, worst fraction {worst_fraction:.4} vs c_a {want_c_a}, worst d {worst_d:.5}, {}", secs(el)),
    );
    assert_eq!(passed, 32);
    assert!(el < Duration::from_secs(60));
}

#[test]
fn c07_relative_perturbation() {
    let _serial = serial();
    let cfg = config("perturb-relative.toml");
    let t = Instant::now();
    let (inst, params) = relative_instance(&cfg).unwrap();
    assert_eq!(inst.space.group, Group::Torus(1));
    assert!(inst.space.subgroup.is_trivial());
    assert_eq!(params.b, 0.2);
    assert_eq!(params.k0_grid, 64);
    let results = relative_seed_sweep(&inst, &params, 32).unwrap();
    let el = t.elapsed();
    let best = results.iter().max_by(|a, b| a.k0_pass_fraction.total_cmp(&b.k0_pass_fraction)).unwrap();
    let m = best.net_size as f64;
    assert_eq!(best.c_a, 1.0 / (100.0 * m * m));
    assert_eq!(best.k0_table.len(), 64);
    let pass = results.iter().any(|r| r.passed && r.k0_pass_fraction >= 0.8) && el < Duration::from_secs(600);
    report(
        "7",
        "relative perturbation",
        pass,
        format!(
            "{} seed(s) tried, best grid fraction {:.3}, c_a {}, d {:.5}, {}",
            results.len(),
            best.k0_pass_fraction,
            best.c_a,
            best.distance,
            secs(el)
        ),
    );
    assert!(pass);
}

fn score_rows(rep: &ExperimentReport, n: &str, function: impl Fn(&str) -> bool) -> Vec<f64> {
    rep.rows
        .iter()
        .filter(|r| r[2] == n && function(&r[0]))
        .map(|r| r[3].parse().unwrap())
        .collect()
}

#[test]
fn c08a_rotation_character_score() {
    let _serial = serial();
    let t = Instant::now();
    let rep = birkhoff_score(&golden_rotation(), &[TestFunction::mode(0, 1)], 10_000, 8, &mut seeded(8)).unwrap();
    let s = rep.max_score();
    let el = t.elapsed();
    let pass = s <= 6e-5 && el < Duration::from_secs(120);
    report("8a", "rotation character score", pass, format!("max score {s:.4e} at n = 10^4, limit 6e-5"));
    assert!(s <= 6e-5, "score {s}");
}

#[test]
fn c08b_product_detection() {
    let _serial = serial();
    let rep = run_experiment(&config("ergodicity-product.toml")).unwrap();
    let mut ok = true;
    let mut best = Vec::new();
    for n in ["100", "10000"] {
        let m = score_rows(&rep, n, |_| true).into_iter().fold(0.0, f64::max);
        best.push(format!("{m:.3} at n = {n}"));
        ok &= m > 0.4;
    }
    report("8b", "product system detection", ok, best.join(", "));
    assert!(ok);
}

#[test]
fn c08c_anzai_score() {
    let _serial = serial();
    let t = Instant::now();
    let cfg = config("ergodicity-anzai.toml");
    let rep = run_experiment(&cfg).unwrap();
    let joint = score_rows(&rep, "1000000", |f| f == "e1(x0)*t0^1@1").into_iter().fold(0.0, f64::max);
    let el = t.elapsed();
    let pass = joint < 0.05 && el < Duration::from_secs(120);
    report("8c", "skew product score", pass, format!("max score {joint:.4e} at n = 10^6, {}", secs(el)));
    assert!(joint < 0.05);
    assert!(el < Duration::from_secs(120));
}

#[test]
fn c09_finite_extension_obstruction() {
    let _serial = serial();
    let z = golden_rotation();
    let r = finite_group_obstruction_check(&z, &Group::Cyclic(2), &Group::Cyclic(2), 100, &mut seeded(9)).unwrap();
    let k = Group::Cyclic(2);
    let inst = RelativeInstance {
        z,
        space: HomogeneousSpace::trivial(k.clone()),
        gamma: Cocycle::identity(1, k.clone()),
        fiber: FiberSpace::Point,
        phi0: Cocycle::identity(2, Group::Cyclic(2)),
    };
    let one = Group::Cyclic(2).parse_element("1").unwrap();
    let params = PerturbationParams::new(BoxSet::full(3), 0.1, 0.05, vec![one.clone(), one]);
    let rejected = matches!(perturb_relative(&inst, &params), Err(LabError::FiniteExtension(_)));
    let pass = r.obstructed == 100 && rejected;
    report("9", "finite extension obstruction", pass, format!("{}/100 obstructed, finite K rejected: {rejected}", r.obstructed));
    assert_eq!(r.obstructed, 100);
    assert!(rejected);
}

#[test]
fn c10_generator_scan() {
    let _serial = serial();
    let t = Group::Torus(1);
    let golden = t.parse_element("0.6180339887498949").unwrap();
    let g = generator_density_scan(&t, &golden, 10_000, 0.01).unwrap();
    let quarter = t.parse_element("1/4").unwrap();
    let flagged = [1u64, 2, 3, 4, 10, 100, 10_000]
        .into_iter()
        .any(|n| generator_density_scan(&t, &quarter, n, 0.01).unwrap().generator);
    let pass = g.generator && !flagged;
    report("10", "generator scan", pass, format!("golden radius {:.2e}, 1/4 flagged: {flagged}", g.covering_radius));
    assert!(g.generator);
    assert!(!flagged);
}

#[test]
fn c11_determinism() {
    let _serial = serial();
    let mut names: Vec<String> = std::fs::read_dir(config_dir())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".toml"))
        .collect();
    names.sort();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let mut differing = Vec::new();
    for name in &names {
        let cfg = config(name);
        let a = run_experiment(&cfg).unwrap().csv();
        let b = pool.install(|| run_experiment(&cfg).unwrap().csv());
        if a != b {
            differing.push(name.clone());
        }
    }
    let pass = differing.is_empty();
    report("11", "determinism", pass, format!("{} configs run twice, differing: {differing:?}", names.len()));
    assert!(pass);
}
