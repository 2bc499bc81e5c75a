//! Finite-resolution laboratory for skew products over compact groups.

pub mod boxes;
pub mod cocycles;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod genericizer;
pub mod groups;
pub mod lemmalab;
pub mod rng;
pub mod systems;
pub mod towers;
pub mod walk;

pub use boxes::{BoxIndex, BoxSet, Cuboid, Interval, Point, ONE};
pub use cocycles::{
    cocycle_metric, cocycle_power, parse_cocycle, tau_twist, Cocycle, FiniteFullGroupElement,
    PointMap,
};
pub use error::{LabError, Result};
pub use groups::{
    conjugate_intersection, eps_net, generator_density_scan, Character, DensityReport, Element,
    EpsilonNet, Group, HomogeneousSpace, Subgroup,
};
pub use systems::{
    make_odometer, make_rotation, make_skew_product, parse_system, relative_square_component,
    translated_tuple_system, BaseSystem, FiberSpace, RelativeSquareComponent, RokhlinCocycle,
    SkewProductSystem,
};
pub use towers::{
    build_tower, build_tower_at, c_level_stats, purify, random_pairing, CLevelStats, Column,
    PairingInvolution, PairingMode, RokhlinTower,
};
pub use genericizer::{
    check_u_simple, essential_value_scan, perturb_relative, perturb_simple, relative_seed_sweep,
    PerturbationParams, PerturbationResult, RelativeInstance,
};
pub use diagnostics::{
    birkhoff_score, finite_group_obstruction_check, relative_ergodicity_probe, Dynamics,
    ErgodicityReport, TestFunction,
};
pub use lemmalab::{lemma_grid, verify_del, verify_randomp, verify_simple, BlockSpec, LemmaGrid, LemmaRow};
pub use experiment::{emit_plotdata, run_experiment, ExperimentConfig, ExperimentKind, ExperimentReport, PerturbMode, PlotKind};
