mod common;

use std::path::Path;

use evsched::arrivals::{ArrivalModel, Family, ParamBox, Theta};
use evsched::baselines::{cumulative_cost, run_fcfs, solve_sp, SamplePath};
use evsched::bellman::{empirical_bellman, InnerSolverConfig, StageProblem};
use evsched::config::Config;
use evsched::dispatch::{disaggregate, dispatch_path, DispatchConfig, Dispatcher};
use evsched::feasible::{contains, gamma, gamma_prime, linmin_value, GammaPrimeSlack};
use evsched::fvi::{train, TrainConfig, TrainedModels};
use evsched::instance::Instance;
use evsched::model::{ArrivalVector, BlockLayout, Bounds, FleetState, Menu};
use evsched::rng::StreamFactory;
use evsched::value::{RegressorConfig, Zero};
use evsched::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(name: &str) -> Config {
    Config::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sp_matches_dense_lp(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (inst, path) = common::random_sp_case(&mut rng);
        match (common::sp_lp(&inst, &path), solve_sp(&inst, &path)) {
            (Some(lp), Ok(plan)) => prop_assert!(common::rel_close(plan.total_cost(), lp, 1e-6), "{} vs {lp}", plan.total_cost()),
            (None, Err(Error::Infeasible { .. })) => {}
            (lp, sp) => prop_assert!(false, "lp {lp:?} sp {:?}", sp.map(|p| p.total_cost())),
        }
    }

    #[test]
    fn sp_plans_are_feasible_and_cheapest(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (inst, path) = common::random_sp_case(&mut rng);
        let Ok(sp) = solve_sp(&inst, &path) else { return Ok(()) };
        for (x, u) in sp.states.iter().zip(&sp.allocations) {
            prop_assert!(contains(&gamma(&inst.menu, &inst.layout, x), u, 1e-6));
        }
        prop_assert!((sp.total_energy() - path.demand(&inst)).abs() < 1e-6);
        if let Ok(fcfs) = run_fcfs(&inst, &path) {
            prop_assert!(sp.total_cost() <= fcfs.total_cost() + 1e-6 * sp.total_cost().abs().max(1.0));
        }
    }

    #[test]
    fn fcfs_stays_in_gamma(seed in any::<u64>(), upper in prop::sample::select(vec![f64::INFINITY, 10.0, 4.0, 2.5])) {
        let menu = common::menus()[1].clone();
        let inst = Instance::uniform(menu.clone(), &[1.0, -2.0, 0.5, 3.0, -1.0, 0.0], Bounds::new(0.0, upper)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut path = SamplePath::empty(6, menu.len());
        for (t, w) in path.arrivals.iter_mut().enumerate() {
            for (i, item) in menu.items().iter().enumerate() {
                if t + item.window <= 6 {
                    w.0[i] = rng.gen_range(0..=2);
                }
            }
        }
        match run_fcfs(&inst, &path) {
            Ok(plan) => {
                for (x, u) in plan.states.iter().zip(&plan.allocations) {
                    prop_assert!(contains(&gamma(&inst.menu, &inst.layout, x), u, 1e-6));
                }
                prop_assert!((plan.total_energy() - path.demand(&inst)).abs() < 1e-6);
                let sums = plan.cumulative_costs();
                for t in 0..=6 {
                    let want = if t == 0 { 0.0 } else { sums[t - 1] };
                    prop_assert!((cumulative_cost(&plan.allocations, &inst.costs, t) - want).abs() < 1e-9);
                }
            }
            Err(e) => prop_assert!(matches!(e, Error::Infeasible { .. }), "{e}"),
        }
    }

    #[test]
    fn zero_value_bellman_is_linmin(idx in 0usize..4, seed in any::<u64>()) {
        let menu = common::menus()[idx].clone();
        let layout = BlockLayout::new(&menu);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = common::random_state(&menu, &layout, 2, Bounds::new(0.0, rng.gen_range(5.0..200.0)), &mut rng);
        let p = gamma(&menu, &layout, &x);
        prop_assume!(!p.is_empty());
        let costs: Vec<f64> = (0..layout.dim()).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let samples = vec![ArrivalVector::zeros(menu.len())];
        let sp = StageProblem { layout: &layout, slot: 0, costs: &costs, next: &Zero, samples: &samples, d_next: x.d };
        let sol = empirical_bellman(&sp, &x, &p, &InnerSolverConfig::default()).unwrap();
        let want = linmin_value(&p, &costs).unwrap();
        prop_assert!((sol.value - want).abs() <= 1e-9 * want.abs().max(1.0), "{} vs {want}", sol.value);
    }

    #[test]
    fn bellman_trace_never_increases(seed in any::<u64>()) {
        let (menu, layout, x) = two_free();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: f64 = rng.gen_range(0.0..4.0);
        let b: f64 = rng.gen_range(0.0..4.0);
        let bump: f64 = rng.gen_range(-3.0..3.0);
        let v = move |y: &FleetState| (y.z[1] - a).powi(2) + bump * (y.z[0] - b).abs() + (y.z[0] * y.z[1]).sin();
        let costs = [rng.gen_range(-2.0..2.0), 0.0, rng.gen_range(-2.0..2.0)];
        let samples = vec![ArrivalVector(vec![1]), ArrivalVector(vec![0])];
        let sp = StageProblem { layout: &layout, slot: 0, costs: &costs, next: &v, samples: &samples, d_next: x.d };
        let p = gamma(&menu, &layout, &x);
        let sol = empirical_bellman(&sp, &x, &p, &InnerSolverConfig::default()).unwrap();
        prop_assert!(!sol.trace.is_empty());
        prop_assert!(sol.trace.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(*sol.trace.last().unwrap(), sol.value);
    }
}

/// One item `(4 kWh, 3 slots)` at 2 kW with cohorts in blocks 1 and 2.
fn two_free() -> (Menu, BlockLayout, FleetState) {
    let menu = common::menu(&[(4.0, 3)], 2.0, 1.0);
    let layout = BlockLayout::new(&menu);
    let mut x = FleetState::empty(&layout, Bounds::new(0.0, 3.0));
    x.y[2] = 1;
    x.z[2] = 4.0;
    x.y[1] = 1;
    x.z[1] = 3.0;
    (menu, layout, x)
}

#[test]
fn frank_wolfe_matches_grid_search() {
    let (menu, layout, x) = two_free();
    let v = |y: &FleetState| (y.z[1] - 1.5).powi(2) + 2.0 * (y.z[0] - 2.0).powi(2);
    let costs = [0.0, -1.0, 0.5];
    let samples = vec![ArrivalVector(vec![0])];
    let sp = StageProblem {
        layout: &layout,
        slot: 0,
        costs: &costs,
        next: &v,
        samples: &samples,
        d_next: x.d,
    };
    let cfg = InnerSolverConfig {
        max_iterations: 5000,
        gap_tolerance: 1e-8,
        ..InnerSolverConfig::default()
    };
    let sol = empirical_bellman(&sp, &x, &gamma(&menu, &layout, &x), &cfg).unwrap();

    // u1 acts on the block-1 cohort (z = 3), u2 on the block-2 cohort (z = 4).
    let objective = |u1: f64, u2: f64| {
        costs[1] * u1 + costs[2] * u2 + (4.0 - u2 - 1.5).powi(2) + 2.0 * (3.0 - u1 - 2.0).powi(2)
    };
    let steps = 2000;
    let h = 2.0 / steps as f64;
    let mut grid = f64::INFINITY;
    for i in 0..=steps {
        for j in 0..=steps {
            let (u1, u2) = (i as f64 * h, j as f64 * h);
            if u1 + u2 <= 3.0 + 1e-12 {
                grid = grid.min(objective(u1, u2));
            }
        }
    }
    assert!(sol.value <= grid + sol.gap + 1e-6, "{} vs {grid}", sol.value);
    assert!(sol.value >= grid - 1e-4, "{} vs {grid}", sol.value);
    assert!((objective(sol.u.0[1], sol.u.0[2]) - sol.value).abs() < 1e-9);
}

#[test]
fn fcfs_serves_earlier_arrivals_first() {
    let menu = common::menu(&[(20.0, 4)], 10.0, 1.0);
    let inst = Instance::uniform(menu.clone(), &[0.0; 5], Bounds::new(0.0, 10.0)).unwrap();
    let mut path = SamplePath::empty(5, 1);
    path.arrivals[0].0[0] = 1;
    path.arrivals[1].0[0] = 1;
    let plan = run_fcfs(&inst, &path).unwrap();
    let served: Vec<(f64, f64)> = plan
        .states
        .iter()
        .zip(&plan.allocations)
        .map(|(x, u)| {
            let by_age: Vec<f64> = (0..4).filter(|&d| x.z[d] > 0.0).map(|d| u.0[d]).collect();
            (by_age.first().copied().unwrap_or(0.0), by_age.get(1).copied().unwrap_or(0.0))
        })
        .collect();
    assert_eq!(served, vec![(10.0, 0.0), (10.0, 0.0), (10.0, 0.0), (10.0, 0.0), (0.0, 0.0)]);
    assert_eq!(plan.total_energy(), 40.0);
}

#[test]
fn sp_reports_binding_slots() {
    let menu = common::menu(&[(10.0, 1)], 10.0, 1.0);
    let inst = Instance::uniform(menu, &[0.0; 3], Bounds::new(0.0, 15.0)).unwrap();
    let mut path = SamplePath::empty(3, 1);
    path.arrivals[1].0[0] = 2;
    match solve_sp(&inst, &path) {
        Err(Error::Infeasible { binding_slots, .. }) => assert_eq!(binding_slots, vec![2]),
        other => panic!("expected infeasible, got {other:?}"),
    }
}

fn point_law(menu: &Menu, counts: &[u32]) -> ArrivalModel {
    ArrivalModel::new(
        menu,
        Family::Deterministic,
        counts.iter().map(|&c| vec![c as f64]).collect(),
        counts.iter().map(|&c| vec![c]).collect(),
        Theta::default(),
        ParamBox::default(),
    )
    .unwrap()
}

fn dispatcher<'a>(inst: &'a Instance, models: &'a TrainedModels, law: &'a ArrivalModel, id: u64) -> Dispatcher<'a> {
    Dispatcher {
        instance: inst,
        models,
        forecast: law,
        cfg: DispatchConfig::default(),
        inner: InnerSolverConfig::default(),
        factory: StreamFactory::new(0).child("dispatch", 0),
        path_id: id,
    }
}

#[test]
fn single_ev_waits_for_the_cheap_slot() {
    let menu = common::menu(&[(10.0, 2)], 10.0, 1.0);
    let inst = Instance::uniform(menu.clone(), &[0.0, -4.4, 0.0], Bounds::new(0.0, 10000.0)).unwrap();
    let law = point_law(&menu, &[1, 0, 0]);
    let cfg = TrainConfig {
        k: 4,
        l: 32,
        regressor: RegressorConfig::LinearBasis { extras: 4 },
        ..TrainConfig::default()
    };
    let models = train(&inst, &law, &cfg, &InnerSolverConfig::default(), &StreamFactory::new(0)).unwrap();
    let arrivals = vec![ArrivalVector(vec![1]), ArrivalVector(vec![0]), ArrivalVector(vec![0])];
    let plan = dispatch_path(&dispatcher(&inst, &models, &law, 0), &arrivals).unwrap();
    let totals: Vec<f64> = plan.allocations.iter().map(|u| u.total()).collect();
    assert!(totals[0].abs() < 1e-6 && (totals[1] - 10.0).abs() < 1e-6, "{totals:?}");
    assert!((plan.fractions[1][0] - 1.0).abs() < 1e-6);
    assert!((plan.total_cost() + 44.0).abs() < 1e-6);

    let empty = vec![ArrivalVector(vec![0]); 3];
    let plan = dispatch_path(&dispatcher(&inst, &models, &law, 1), &empty).unwrap();
    assert!(plan.allocations.iter().all(|u| u.total() == 0.0));
    assert_eq!(plan.total_cost(), 0.0);
}

#[test]
fn adp_plans_respect_every_constraint() {
    let cfg = config("tiny.toml");
    let inst = cfg.instance().unwrap();
    let law = cfg.arrival_model(&inst.menu).unwrap();
    let factory = StreamFactory::new(cfg.seeds.master);
    let models = train(&inst, &law, &cfg.fvi, &cfg.inner_solver, &factory).unwrap();
    for id in 0..20 {
        let path = SamplePath::draw(&law, &factory, id);
        let plan = dispatch_path(&dispatcher(&inst, &models, &law, id), &path.arrivals).unwrap();
        for (s, (x, u)) in plan.states.iter().zip(&plan.allocations).enumerate() {
            let p = gamma_prime(&inst.menu, &inst.layout, x, GammaPrimeSlack::Exact);
            assert!(contains(&p, u, 1e-6), "path {id} slot {s}");
            for j in inst.layout.active_slots() {
                assert!((0.0..=1.0 + 1e-9).contains(&plan.fractions[s][j]));
                if inst.layout.is_departing(j) {
                    assert_eq!(u.0[j], x.z[j]);
                }
            }
            let b = inst.bounds[s];
            assert!(u.total() >= b.lower - 1e-6 && u.total() <= b.upper + 1e-6);
        }
        assert!((plan.total_energy() - path.demand(&inst)).abs() < 1e-6);
        let timelines = disaggregate(&inst, &plan);
        let delivered: f64 = timelines.iter().map(|e| e.energy_per_ev() * e.count as f64).sum();
        assert!((delivered - path.demand(&inst)).abs() < 1e-6);
        for e in &timelines {
            let m = inst.menu.items()[e.item].energy_kwh;
            assert!((e.energy_per_ev() - m).abs() < 1e-6, "cohort {e:?}");
        }
    }
}

#[test]
fn dispatch_never_reads_future_arrivals() {
    let cfg = config("tiny.toml");
    let inst = cfg.instance().unwrap();
    let law = cfg.arrival_model(&inst.menu).unwrap();
    let factory = StreamFactory::new(cfg.seeds.master);
    let models = train(&inst, &law, &cfg.fvi, &cfg.inner_solver, &factory).unwrap();
    let a = SamplePath::draw(&law, &factory, 3);
    let mut b = a.clone();
    let last = inst.horizon() - 1;
    b.arrivals[last].0[0] = if a.arrivals[last].0[0] == 0 { law.cap(last, 0) } else { 0 };
    let pa = dispatch_path(&dispatcher(&inst, &models, &law, 3), &a.arrivals).unwrap();
    let pb = dispatch_path(&dispatcher(&inst, &models, &law, 3), &b.arrivals).unwrap();
    assert_eq!(pa.allocations[..last], pb.allocations[..last]);
}

#[test]
fn training_is_reproducible() {
    let cfg = config("tiny.toml");
    let inst = cfg.instance().unwrap();
    let law = cfg.arrival_model(&inst.menu).unwrap();
    let run = || train(&inst, &law, &cfg.fvi, &cfg.inner_solver, &StreamFactory::new(5)).unwrap();
    let (a, b) = (run(), run());
    for s in 0..inst.horizon() {
        assert_eq!(a.at(s).to_checkpoint(s + 1), b.at(s).to_checkpoint(s + 1));
    }
}
