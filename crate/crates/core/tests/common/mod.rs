#![allow(dead_code)]

use evsched::baselines::SamplePath;
use evsched::feasible::ActionPolytope;
use evsched::instance::Instance;
use evsched::model::{BlockLayout, Bounds, FleetState, Menu, MenuItem};
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::Rng;

pub fn menu(items: &[(f64, usize)], rate: f64, hours: f64) -> Menu {
    Menu::new(
        items
            .iter()
            .map(|&(energy_kwh, window)| MenuItem { energy_kwh, window })
            .collect(),
        rate,
        hours,
    )
    .unwrap()
}

/// A handful of structurally different menus.
pub fn menus() -> Vec<Menu> {
    vec![
        menu(&[(1.0, 1), (1.0, 2)], 1.0, 1.0),
        menu(&[(1.0, 1), (1.0, 2), (2.0, 2)], 1.0, 1.0),
        menu(&[(2.0, 1), (3.0, 2), (4.0, 3)], 4.0, 0.5),
        Menu::table2(),
    ]
}

/// Random state with `y <= y_max` and `z` reachable for its block.
pub fn random_state<R: Rng>(menu: &Menu, layout: &BlockLayout, y_max: u32, d: Bounds, rng: &mut R) -> FleetState {
    let mut x = FleetState::empty(layout, d);
    let per_ev = menu.per_ev_slot_energy();
    for j in layout.active_slots() {
        let y = rng.gen_range(0..=y_max);
        x.y[j] = y;
        let hi = (layout.energy(j) * y as f64).min(per_ev * y as f64 * (layout.delta(j) + 1) as f64);
        x.z[j] = if rng.gen_bool(0.2) { hi } else { rng.gen::<f64>() * hi };
    }
    x
}

/// Minimum of `cost . u` over the polytope by listing its vertices.
///
/// Every vertex fixes all but at most one coordinate at a box bound; the
/// remaining one, if any, sits where the aggregate constraint is tight.
pub fn vertex_min(p: &ActionPolytope, cost: &[f64], tol: f64) -> Option<f64> {
    let n = p.dim();
    if (0..n).any(|j| p.lb[j] > p.ub[j] + tol) {
        return None;
    }
    let free: Vec<usize> = (0..n).filter(|&j| p.ub[j] > p.lb[j]).collect();
    assert!(free.len() <= 12, "too many free coordinates for enumeration");
    let fixed_sum: f64 = (0..n).filter(|j| !free.contains(j)).map(|j| p.lb[j]).sum();
    let fixed_cost: f64 = (0..n).filter(|j| !free.contains(j)).map(|j| cost[j] * p.lb[j]).sum();
    let in_window = |s: f64| s >= p.lower - tol && s <= p.upper + tol;
    let mut best: Option<f64> = None;
    let mut keep = |v: f64| best = Some(best.map_or(v, |b: f64| b.min(v)));
    let f = free.len();
    for mask in 0u32..(1 << f) {
        let pick = |i: usize| if mask >> i & 1 == 1 { p.ub[free[i]] } else { p.lb[free[i]] };
        let sum: f64 = fixed_sum + (0..f).map(pick).sum::<f64>();
        let value: f64 = fixed_cost + (0..f).map(|i| cost[free[i]] * pick(i)).sum::<f64>();
        if in_window(sum) {
            keep(value);
        }
        for target in [p.lower, p.upper] {
            if !target.is_finite() || !in_window(target) {
                continue;
            }
            for i in 0..f {
                let j = free[i];
                let u = target - (sum - pick(i));
                if u >= p.lb[j] - tol && u <= p.ub[j] + tol {
                    keep(value - cost[j] * pick(i) + cost[j] * u);
                }
            }
        }
    }
    best
}

/// Hindsight optimum as a dense LP, one variable per cohort and slot.
/// `None` when the LP is infeasible.
pub fn sp_lp(instance: &Instance, path: &SamplePath) -> Option<f64> {
    let layout = &instance.layout;
    let per_ev = instance.menu.per_ev_slot_energy();
    let horizon = instance.horizon();
    let mut pb = Problem::new(OptimizationDirection::Minimize);
    let mut per_slot = vec![Vec::new(); horizon];
    for (t, w) in path.arrivals.iter().enumerate().take(horizon) {
        for (i, &count) in w.0.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let item = instance.menu.items()[i];
            let last = t + item.window - 1;
            if last >= horizon {
                return None;
            }
            let mut cohort = Vec::new();
            for s in t..=last {
                let j = layout.slot(last - s, i);
                let v = pb.add_var(instance.costs.row(s)[j], (0.0, per_ev * count as f64));
                cohort.push((v, 1.0));
                per_slot[s].push((v, 1.0));
            }
            pb.add_constraint(cohort, ComparisonOp::Eq, item.energy_kwh * count as f64);
        }
    }
    for (s, vars) in per_slot.into_iter().enumerate() {
        let b = instance.bounds[s];
        if vars.is_empty() {
            if b.lower > 0.0 {
                return None;
            }
            continue;
        }
        if b.lower > 0.0 {
            pb.add_constraint(vars.clone(), ComparisonOp::Ge, b.lower);
        }
        if b.upper.is_finite() {
            pb.add_constraint(vars, ComparisonOp::Le, b.upper);
        }
    }
    match pb.solve() {
        Ok(sol) => Some(sol.objective()),
        Err(minilp::Error::Infeasible) => None,
        Err(e) => panic!("lp failed: {e}"),
    }
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

/// Box plus window with at most five free coordinates.
pub fn random_polytope<R: Rng>(rng: &mut R) -> (ActionPolytope, Vec<f64>) {
    let n = rng.gen_range(1..=8);
    let mut lb = vec![0.0; n];
    let mut ub = vec![0.0; n];
    let mut equality = vec![false; n];
    let mut free = 0;
    for j in 0..n {
        lb[j] = if rng.gen_bool(0.4) { 0.0 } else { rng.gen_range(0.0..5.0) };
        if free < 5 && rng.gen_bool(0.7) {
            ub[j] = lb[j] + rng.gen_range(0.1..5.0);
            free += 1;
        } else {
            ub[j] = lb[j];
            equality[j] = true;
        }
    }
    let lo: f64 = lb.iter().sum();
    let hi: f64 = ub.iter().sum();
    let lower = match rng.gen_range(0..4) {
        0 => 0.0,
        1 => hi + rng.gen_range(0.1..2.0),
        _ => lo + rng.gen::<f64>() * (hi - lo),
    };
    let upper = match rng.gen_range(0..4) {
        0 => f64::INFINITY,
        1 => (lo - rng.gen_range(0.1..2.0)).max(0.0),
        _ => lower.max(lo) + rng.gen::<f64>() * (hi - lower.max(lo)).max(0.0),
    };
    let cost = (0..n)
        .map(|_| {
            if rng.gen_bool(0.3) {
                rng.gen_range(-3..=3) as f64
            } else {
                rng.gen_range(-5.0..5.0)
            }
        })
        .collect();
    (
        ActionPolytope {
            lb,
            ub,
            equality,
            lower,
            upper,
        },
        cost,
    )
}

/// Small instance with random per-position prices and bounds, plus a path
/// whose cohorts all depart within the horizon.
pub fn random_sp_case<R: Rng>(rng: &mut R) -> (Instance, SamplePath) {
    let all = menus();
    let menu = all[rng.gen_range(0..3)].clone();
    let layout = BlockLayout::new(&menu);
    let horizon = rng.gen_range(2..=6);
    let rows = (0..horizon)
        .map(|_| {
            (0..layout.dim())
                .map(|j| {
                    if layout.is_active(j) {
                        rng.gen_range(-5..=5) as f64 + if rng.gen_bool(0.5) { 0.25 } else { 0.0 }
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let bounds = (0..horizon)
        .map(|_| {
            let lower = if rng.gen_bool(0.2) { rng.gen_range(0..=2) as f64 * 0.5 } else { 0.0 };
            let upper = if rng.gen_bool(0.3) {
                f64::INFINITY
            } else {
                lower + rng.gen_range(1..=12) as f64 * 0.5
            };
            Bounds::new(lower, upper)
        })
        .collect();
    let instance = Instance::new(menu.clone(), evsched::model::CostSchedule::from_rows(rows), bounds).unwrap();
    let mut path = SamplePath::empty(horizon, menu.len());
    for (t, w) in path.arrivals.iter_mut().enumerate() {
        for (i, item) in menu.items().iter().enumerate() {
            if t + item.window <= horizon && rng.gen_bool(0.5) {
                w.0[i] = rng.gen_range(1..=2);
            }
        }
    }
    (instance, path)
}
