use std::sync::Arc;

use fragcoag_core::coagulation::{CoagulationOperator, TruncatedCoagulation};
use fragcoag_core::fragmentation::FragmentationOperator;
use fragcoag_core::grid::{weighted_norm, MassGrid, NormMode, SpatialGrid, StateField};
use fragcoag_core::kernels::{AbsorptionRate, CoagulationKernel, DaughterKernel};
use fragcoag_core::solver::*;
use fragcoag_core::transport::{Evolution, SemigroupAction};

fn grids(n: usize, m_max: f64) -> (Arc<MassGrid>, Arc<SpatialGrid>) {
    (
        Arc::new(MassGrid::uniform(m_max, n).unwrap()),
        Arc::new(SpatialGrid::unit_interval()),
    )
}

fn exp_datum(mg: &Arc<MassGrid>, sg: &Arc<SpatialGrid>, c: f64) -> StateField {
    StateField::from_fn(mg.clone(), sg.clone(), NormMode::Sup, move |_, m| c * (-m).exp())
}

fn identity() -> LinearModel {
    LinearModel::transport_only(SemigroupAction::Identity)
}

/// Sink `0.3 m`, fragmentation `a = m`, `b = 2/s`, constant coagulation.
fn full_model(mg: &Arc<MassGrid>, sg: &Arc<SpatialGrid>) -> (SemigroupAction, FragmentationOperator, CoagulationOperator) {
    let sink = SemigroupAction::Absorption { rate: AbsorptionRate::power(0.3, 1.0) };
    let frag = FragmentationOperator::new(
        mg.clone(),
        sg.clone(),
        &AbsorptionRate::power(1.0, 1.0),
        &DaughterKernel::uniform_binary(),
    )
    .unwrap();
    let coag = CoagulationOperator::new(mg.clone(), sg.clone(), CoagulationKernel::constant(1.0)).unwrap();
    (sink, frag, coag)
}

#[test]
fn constant_kernel_number_decay() {
    let (mg, sg) = grids(150, 30.0);
    let u0 = exp_datum(&mg, &sg, 1.0);
    let op = CoagulationOperator::new(mg, sg, CoagulationKernel::constant(1.0)).unwrap();
    let cfg = MildSolveConfig { window: 0.1, dt: 0.005, picard_tol: 1e-11, ..Default::default() };
    let traj = continue_maximal(&u0, &cfg, &identity(), &op, 0.0, 1.0).unwrap();
    assert_eq!(traj.termination, Termination::Horizon);
    let n0 = traj.report.rows[0].m0;
    let last = traj.report.rows.last().unwrap();
    let exact = n0 / (1.0 + n0 * last.t / 2.0);
    assert!((last.t - 1.0).abs() < 1e-12);
    assert!((last.m0 - exact).abs() / exact < 1e-4);
    assert!(traj.times().windows(2).all(|w| w[1] > w[0]));
    for l in &traj.ledgers {
        assert!(l.reconciles(1e-4), "{l:?}");
    }
}

#[test]
fn zero_kernel_converges_in_one_iteration_to_linear_flow() {
    let (mg, sg) = grids(60, 20.0);
    let u0 = exp_datum(&mg, &sg, 0.5);
    let frag = FragmentationOperator::new(
        mg.clone(),
        sg.clone(),
        &AbsorptionRate::power(1.0, 1.0),
        &DaughterKernel::uniform_binary(),
    )
    .unwrap();
    let linear = LinearModel::new(SemigroupAction::Identity, Some(frag), 0.1).unwrap();
    let op = CoagulationOperator::new(mg, sg, CoagulationKernel::constant(0.0)).unwrap();
    let tc = TruncatedCoagulation::new(op, 2.0, 1.0).unwrap();
    assert_eq!(tc.a_q, 0.0);
    let cfg = MildSolveConfig { window: 0.2, dt: 0.01, ..Default::default() };
    let traj = mild_solve(&u0, &cfg, &linear, &tc).unwrap();
    assert_eq!(traj.windows[0].iterations, 1);
    let expected = linear.evolve(0.01, &u0).unwrap();
    let got = &traj.snapshots[1].1;
    assert_eq!(got.values(), expected.values());
}

#[test]
fn split_agrees_with_mild_for_coagulation() {
    let (mg, sg) = grids(150, 30.0);
    let u0 = exp_datum(&mg, &sg, 1.0);
    let op = CoagulationOperator::new(mg, sg, CoagulationKernel::constant(1.0)).unwrap();
    let cfg = MildSolveConfig { window: 0.1, dt: 0.005, picard_tol: 1e-11, ..Default::default() };
    let mild = continue_maximal(&u0, &cfg, &identity(), &op, 0.0, 1.0).unwrap();
    let parts = SplitParts { coagulation: Some(op), ..Default::default() };
    let split = split_solve(&u0, 1.0, 0.005, &parts, &SplitOptions { r: 0.0, ..Default::default() }).unwrap();
    let a = mild.final_state();
    let b = split.final_state();
    let rel = weighted_norm(&a.sub(b).unwrap(), 0.0).unwrap() / weighted_norm(a, 0.0).unwrap();
    assert!(rel < 5e-3, "{rel}");
}

#[test]
fn shift_placement_does_not_change_the_solution() {
    let (mg, sg) = grids(80, 20.0);
    let u0 = exp_datum(&mg, &sg, 0.5);
    let op = CoagulationOperator::new(mg, sg, CoagulationKernel::constant(1.0)).unwrap();
    let tc = TruncatedCoagulation::new(op, 4.0, 0.0).unwrap();
    let cfg = MildSolveConfig { window: 0.1, dt: 0.005, picard_tol: 1e-12, ..Default::default() };
    let shifted = mild_solve(&u0, &cfg, &identity(), &tc).unwrap();
    let plain = mild_solve(&u0, &cfg, &identity(), &tc.unshifted()).unwrap();
    let a = shifted.final_state();
    let b = plain.final_state();
    let rel = weighted_norm(&a.sub(b).unwrap(), 0.0).unwrap() / weighted_norm(a, 0.0).unwrap();
    assert!(rel < 1e-5, "{rel}");
}

#[test]
fn window_chaining_is_consistent() {
    let (mg, sg) = grids(80, 20.0);
    let u0 = exp_datum(&mg, &sg, 0.5);
    let (_, frag, coag) = full_model(&mg, &sg);
    let linear = LinearModel::new(SemigroupAction::Identity, Some(frag), 0.05).unwrap();
    let tc = TruncatedCoagulation::new(coag, 4.0, 1.0).unwrap();
    let tol = 1e-10;
    let long = MildSolveConfig { window: 0.2, dt: 0.01, picard_tol: tol, ..Default::default() };
    let short = MildSolveConfig { window: 0.1, ..long.clone() };
    let whole = mild_solve(&u0, &long, &linear, &tc).unwrap();
    let first = mild_solve(&u0, &short, &linear, &tc).unwrap();
    let second = mild_solve(first.final_state(), &short, &linear, &tc).unwrap();
    let gap = weighted_norm(&whole.final_state().sub(second.final_state()).unwrap(), 1.0).unwrap();
    assert!(gap <= 2.0 * tol, "{gap}");
}

#[test]
fn zero_datum_stays_zero() {
    let (mg, sg) = grids(40, 10.0);
    let u0 = exp_datum(&mg, &sg, 0.0);
    let op = CoagulationOperator::new(mg, sg, CoagulationKernel::constant(1.0)).unwrap();
    let traj = continue_maximal(&u0, &MildSolveConfig::default(), &identity(), &op, 1.0, 5.0).unwrap();
    assert_eq!(traj.termination, Termination::Horizon);
    assert_eq!(traj.final_time(), 5.0);
    assert!(traj.report.rows.iter().all(|r| r.m0 == 0.0 && r.m1 == 0.0));
}

#[test]
fn linear_model_runs_to_any_horizon() {
    let (mg, sg) = grids(60, 20.0);
    let u0 = exp_datum(&mg, &sg, 0.5);
    let (sink, frag, _) = full_model(&mg, &sg);
    let linear = LinearModel::new(sink, Some(frag), 0.05).unwrap();
    let zero = CoagulationOperator::new(mg, sg, CoagulationKernel::constant(0.0)).unwrap();
    let cfg = MildSolveConfig { window: 1.0, dt: 0.05, ..Default::default() };
    let traj = continue_maximal(&u0, &cfg, &linear, &zero, 1.0, 10.0).unwrap();
    assert_eq!(traj.termination, Termination::Horizon);
    let n0 = traj.report.rows[0].norm_r;
    assert!(traj.report.rows.iter().all(|r| r.norm_r <= 1.5 * n0));
}

#[test]
fn split_ledger_reconciles_with_every_part_active() {
    let (mg, sg) = grids(60, 12.0);
    let u0 = exp_datum(&mg, &sg, 1.0).with_mode(NormMode::Integral);
    let (sink, frag, coag) = full_model(&mg, &sg);
    let parts = SplitParts { transport: Some(sink), fragmentation: Some(frag), coagulation: Some(coag) };
    let traj = split_solve(&u0, 1.0, 0.01, &parts, &SplitOptions::default()).unwrap();
    let last = traj.ledgers.last().unwrap();
    assert!(last.leakage > 0.0);
    for l in &traj.ledgers {
        assert!(l.reconciles(1e-10), "{l:?} residual {}", l.residual());
    }
    for (_, s) in &traj.snapshots {
        assert!(s.is_nonnegative());
    }
}

#[test]
fn split_defect_is_second_order() {
    let (mg, sg) = grids(80, 20.0);
    let u0 = exp_datum(&mg, &sg, 0.5);
    let (sink, frag, coag) = full_model(&mg, &sg);
    let linear = LinearModel::new(sink.clone(), Some(frag.clone()), 0.0025).unwrap();
    let tc = TruncatedCoagulation::new(coag.clone(), 2.0, 1.0).unwrap();
    let cfg = MildSolveConfig { window: 0.5, dt: 0.0025, picard_tol: 1e-12, ..Default::default() };
    let reference = mild_solve(&u0, &cfg, &linear, &tc).unwrap();
    let parts = SplitParts { transport: Some(sink), fragmentation: Some(frag), coagulation: Some(coag) };
    let defect = |dt: f64| {
        let s = split_solve(&u0, 0.5, dt, &parts, &SplitOptions::default()).unwrap();
        weighted_norm(&s.final_state().sub(reference.final_state()).unwrap(), 1.0).unwrap()
    };
    let (d1, d2) = (defect(0.05), defect(0.025));
    let ratio = d1 / d2;
    assert!(ratio > 3.0 && ratio < 5.0, "{d1} {d2} {ratio}");
}

#[test]
fn picard_iterates_from_linear_flow_are_monotone_for_small_data() {
    let (mg, sg) = grids(80, 20.0);
    let u0 = exp_datum(&mg, &sg, 0.25);
    let op = CoagulationOperator::new(mg, sg, CoagulationKernel::constant(1.0)).unwrap();
    let tc = TruncatedCoagulation::new(op, 1.0, 0.0).unwrap();
    let cfg = MildSolveConfig { window: 0.1, dt: 0.005, ..Default::default() };
    let traj = mild_solve(&u0, &cfg, &identity(), &tc).unwrap();
    assert!(traj.windows[0].monotonicity_defect <= 1e-12, "{:?}", traj.windows[0]);
}

#[test]
fn rejects_data_outside_half_ball() {
    let (mg, sg) = grids(40, 10.0);
    let u0 = exp_datum(&mg, &sg, 1.0);
    let op = CoagulationOperator::new(mg, sg, CoagulationKernel::constant(1.0)).unwrap();
    let tc = TruncatedCoagulation::new(op, 2.0, 0.0).unwrap();
    assert!(mild_solve(&u0, &MildSolveConfig::default(), &identity(), &tc).is_err());
}
