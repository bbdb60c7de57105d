//! Closed-loop properties on the five by five interior mesh.

use std::sync::Arc;

use nalgebra::DVector;
use prhc::certify::IndexVariant;
use prhc::dynamics::{simulate, FullModel, TimeGrid};
use prhc::ocp::solve;
use prhc::rhc::{compare, run_fom_rhc, run_rom_rhc, RhcConfig};
use prhc::setup::Scenario;
use prhc::validate::small_scenario;

/// Small mesh on `[0, 4]` with the benchmark's horizon and sampling time.
fn scenario() -> Scenario {
    Scenario { final_time: 4.0, time_points: 161, ..small_scenario() }
}

fn config(s: &Scenario, gate: f64) -> RhcConfig {
    RhcConfig { gate, ..s.rhc_config() }
}

#[test]
fn zero_initial_state_needs_no_control() {
    let s = scenario();
    let disc = Arc::new(s.discretization().unwrap());
    let y0 = DVector::zeros(disc.n_dofs());
    let r = run_fom_rhc(&s.rhc_config(), disc, &y0).unwrap();
    assert_eq!(r.total_cost, 0.0);
    assert!(r.control.values.iter().all(|u| u.iter().all(|&v| v == 0.0)));
    assert!(r.records.iter().all(|rec| rec.lower == 1.0));
}

#[test]
fn committed_trajectory_is_one_continuous_simulation() {
    let s = scenario();
    let disc = Arc::new(s.discretization().unwrap());
    let y0 = s.initial_state(&disc);
    let r = run_fom_rhc(&s.rhc_config(), disc.clone(), &y0).unwrap();
    let grid = TimeGrid::new(s.tau(), 0, r.control.steps()).unwrap();
    let model = FullModel::new(disc, 8);
    let replay = simulate(&model, &grid, &y0, &r.control).unwrap();
    assert_eq!(replay.states, r.states.states, "restart states must be the committed states bit for bit");
}

#[test]
fn longer_horizons_decay_faster() {
    let s = scenario();
    let disc = Arc::new(s.discretization().unwrap());
    let y0 = s.initial_state(&disc);
    let short = run_fom_rhc(&Scenario { horizon: 0.8, ..s.clone() }.rhc_config(), disc.clone(), &y0).unwrap();
    let long = run_fom_rhc(&Scenario { horizon: 1.2, ..s.clone() }.rhc_config(), disc.clone(), &y0).unwrap();
    let (a, b) = (short.decay_rate(&disc), long.decay_rate(&disc));
    assert!(a < 0.0 && b < a, "decay rates {a} (T = 0.8) and {b} (T = 1.2)");
}

#[test]
fn complete_basis_reproduces_the_full_order_index() {
    let s = Scenario { validation: true, ..scenario() };
    let disc = Arc::new(s.discretization().unwrap());
    let y0 = s.initial_state(&disc);
    for variant in [IndexVariant::Mixed, IndexVariant::FullReduced] {
        let mut cfg = config(&Scenario { variant, ..s.clone() }, 0.01);
        cfg.pod.energy = 1.0;
        cfg.pod.noise_floor = 0.0;
        let r = run_rom_rhc(&cfg, disc.clone(), &y0).unwrap();
        assert!(r.is_complete());
        for rec in r.accepted() {
            let alpha = rec.alpha_fom.unwrap();
            assert!(rec.dim == disc.n_dofs(), "{rec:?}");
            assert!((rec.lower - alpha).abs() <= 1e-8 && (rec.upper - alpha).abs() <= 1e-8, "{variant:?} {rec:?}");
        }
    }
}

#[test]
fn reduced_loop_tracks_the_full_order_loop_and_certifies_its_cost() {
    let s = scenario();
    let disc = Arc::new(s.discretization().unwrap());
    let y0 = s.initial_state(&disc);
    let full = run_fom_rhc(&s.rhc_config(), disc.clone(), &y0).unwrap();
    let (amin, _, _) = full.index_stats().unwrap();
    let gate = 0.5 * amin;
    let reduced = run_rom_rhc(&config(&s, gate), disc.clone(), &y0).unwrap();
    assert!(reduced.is_complete());
    let c = compare(&disc, &reduced, &full);
    assert!(c.cost < 1e-4 && c.control < 1e-4 && c.state < 1e-4, "{c:?}");
    assert!(reduced.accepted().all(|rec| rec.lower >= gate && rec.lower <= rec.upper));
    // suboptimality surrogate
    let grid = TimeGrid::new(s.tau(), 0, s.horizon_steps()).unwrap();
    let model = FullModel::new(disc, grid.steps + 2);
    let v0 = solve(&model, &grid, &s.cost, &y0, None, None, &s.solver).unwrap().value;
    assert!(gate * reduced.total_cost <= v0 + 1e-8, "{} * {} > {v0}", gate, reduced.total_cost);
}

#[test]
fn raising_the_gate_never_saves_updates() {
    let s = scenario();
    let disc = Arc::new(s.discretization().unwrap());
    let y0 = s.initial_state(&disc);
    let mut last = 0;
    for gate in [0.01, 0.1, 0.2, 0.3] {
        let mut cfg = config(&s, gate);
        cfg.pod.max_dim = 4;
        cfg.total_steps = 44;
        let r = run_rom_rhc(&cfg, disc.clone(), &y0).unwrap();
        let updates = r.counters.model_updates;
        assert!(updates >= last, "gate {gate}: {updates} updates after {last}");
        last = updates;
    }
    assert!(last > 1);
}
