//! Hindsight static program (SP) and first-come-first-serve (FCFS).

use crate::arrivals::ArrivalModel;
use crate::dispatch::DispatchPlan;
use crate::error::{Error, Result};
use crate::feasible::gamma;
use crate::flow::BoundedFlow;
use crate::instance::Instance;
use crate::model::{stage_cost, transition, AllocationVector, ArrivalVector, CostSchedule, RESIDUAL_TOLERANCE};
use crate::rng::StreamFactory;

/// Flow units per kWh.
pub const FLOW_SCALE: f64 = 100.0;

/// One realization of the arrival process, `arrivals[t]` for slot `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub id: u64,
    pub arrivals: Vec<ArrivalVector>,
}

impl SamplePath {
    pub fn draw(model: &ArrivalModel, factory: &StreamFactory, id: u64) -> Self {
        let mut rng = factory.stream("paths", id, 0);
        Self {
            id,
            arrivals: (0..model.horizon()).map(|t| model.sample(t, &mut rng)).collect(),
        }
    }

    pub fn empty(horizon: usize, n_items: usize) -> Self {
        Self {
            id: 0,
            arrivals: vec![ArrivalVector::zeros(n_items); horizon],
        }
    }

    /// Total demanded energy `sum m w`.
    pub fn demand(&self, instance: &Instance) -> f64 {
        self.arrivals.iter().map(|w| w.energy(&instance.menu)).sum()
    }
}

fn to_units(kwh: f64) -> i64 {
    (kwh * FLOW_SCALE).round() as i64
}

/// Exact hindsight optimum as a min-cost flow.
///
/// Nodes are a source, one node per cohort, one per slot and a sink. Each
/// cohort must receive exactly `m y`, at most `r y h` per slot of its
/// window, and slot totals stay within `[d1, d2]` (rounded inward).
pub fn solve_sp(instance: &Instance, path: &SamplePath) -> Result<DispatchPlan> {
    let horizon = instance.horizon();
    let layout = &instance.layout;
    let per_ev = instance.menu.per_ev_slot_energy();
    let cohorts: Vec<(usize, usize, u32)> = path
        .arrivals
        .iter()
        .enumerate()
        .take(horizon)
        .flat_map(|(t, w)| {
            w.0.iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(move |(i, &c)| (t, i, c))
        })
        .collect();
    let source = 0;
    let sink = 1;
    let slot_node = |s: usize| 2 + cohorts.len() + s;
    let mut net = BoundedFlow::new(2 + cohorts.len() + horizon);
    let mut serve = Vec::new();
    for (c, &(t, i, count)) in cohorts.iter().enumerate() {
        let item = instance.menu.items()[i];
        let demand = to_units(item.energy_kwh * count as f64);
        net.add(source, 2 + c, demand, demand, 0.0);
        let last = t + item.window - 1;
        if last >= horizon {
            return Err(Error::Infeasible {
                reason: format!(
                    "cohort arriving at slot {} departs after the horizon",
                    t + 1
                ),
                binding_slots: vec![],
            });
        }
        for s in t..=last {
            let j = layout.slot(last - s, i);
            let cap = to_units(per_ev * count as f64);
            let cost = instance.costs.row(s)[j] / FLOW_SCALE;
            let arc = net.add(2 + c, slot_node(s), 0, cap, cost);
            serve.push((arc, s, j));
        }
    }
    let mut slot_arcs = Vec::with_capacity(horizon);
    for s in 0..horizon {
        let b = instance.bounds[s];
        let lower = (b.lower * FLOW_SCALE - 1e-9).ceil().max(0.0) as i64;
        let upper = if b.upper.is_finite() {
            (b.upper * FLOW_SCALE + 1e-9).floor() as i64
        } else {
            i64::MAX / 4
        };
        slot_arcs.push(net.add(slot_node(s), sink, lower, upper, 0.0));
    }
    net.add(sink, source, 0, i64::MAX / 4, 0.0);

    let solution = net.solve().map_err(|err| {
        let side = &err.source_side;
        let mut binding: Vec<usize> = (0..horizon)
            .filter(|&s| side[slot_node(s)] && !side[sink])
            .map(|s| s + 1)
            .collect();
        if binding.is_empty() {
            binding = (0..horizon)
                .filter(|&s| instance.bounds[s].lower > 0.0)
                .map(|s| s + 1)
                .collect();
        }
        Error::Infeasible {
            reason: format!(
                "{:.2} kWh of demand cannot be scheduled within the slot bounds",
                err.shortfall as f64 / FLOW_SCALE
            ),
            binding_slots: binding,
        }
    })?;

    let mut allocations = vec![AllocationVector::zeros(layout.dim()); horizon];
    for &(arc, s, j) in &serve {
        allocations[s].0[j] += solution.flows[arc] as f64 / FLOW_SCALE;
    }
    DispatchPlan::replay(instance, &path.arrivals, allocations)
}

/// Charges every present cohort at full rate as soon as it arrives.
///
/// Departing cohorts take their remaining residual first. The rest are
/// served by arrival slot (earlier first), then larger offset, then layout
/// order, until the upper bound binds.
pub fn run_fcfs(instance: &Instance, path: &SamplePath) -> Result<DispatchPlan> {
    let horizon = instance.horizon();
    let layout = &instance.layout;
    let zero = ArrivalVector::zeros(layout.n_items());
    let mut x = instance.initial_state(path.arrivals.first().unwrap_or(&zero))?;
    let mut allocations = Vec::with_capacity(horizon);
    for s in 0..horizon {
        let p = gamma(&instance.menu, layout, &x);
        let mut u = AllocationVector::zeros(layout.dim());
        let mut total = 0.0;
        for j in layout.active_slots().filter(|&j| layout.is_departing(j)) {
            if x.z[j] > p.ub[j] + RESIDUAL_TOLERANCE * x.z[j].max(1.0) {
                return Err(Error::Infeasible {
                    reason: format!(
                        "departing cohort at slot {} owes {:.3} kWh but can take {:.3}",
                        s + 1,
                        x.z[j],
                        p.ub[j]
                    ),
                    binding_slots: vec![s + 1],
                });
            }
            u.0[j] = x.z[j];
            total += x.z[j];
        }
        if total > p.upper + RESIDUAL_TOLERANCE * total.max(1.0) {
            return Err(Error::Infeasible {
                reason: format!(
                    "departing cohorts need {total:.3} kWh above the bound {:.3} at slot {}",
                    p.upper,
                    s + 1
                ),
                binding_slots: vec![s + 1],
            });
        }
        let mut order: Vec<usize> = layout
            .active_slots()
            .filter(|&j| !layout.is_departing(j) && p.ub[j] > 0.0)
            .collect();
        order.sort_by_key(|&j| {
            let arrival = layout.arrival_of(j, s).unwrap_or(0);
            (arrival, std::cmp::Reverse(layout.delta(j)), j)
        });
        for j in order {
            let room = p.upper - total;
            if room <= 0.0 {
                break;
            }
            let take = p.ub[j].min(room);
            u.0[j] = take;
            total += take;
        }
        if total < p.lower - RESIDUAL_TOLERANCE * p.lower.max(1.0) {
            return Err(Error::Infeasible {
                reason: format!(
                    "full-rate charging delivers {total:.3} kWh below the lower bound {:.3}",
                    p.lower
                ),
                binding_slots: vec![s + 1],
            });
        }
        let w = path.arrivals.get(s + 1).unwrap_or(&zero);
        x = transition(layout, &x, &u, w, instance.bounds_at(s + 1))?;
        allocations.push(u);
    }
    DispatchPlan::replay(instance, &path.arrivals, allocations)
}

/// `J_t = sum_{s < t} c_s . u_s`.
pub fn cumulative_cost(allocations: &[AllocationVector], costs: &CostSchedule, t: usize) -> f64 {
    allocations
        .iter()
        .take(t)
        .enumerate()
        .map(|(s, u)| stage_cost(costs, s, u))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Bounds, Menu};

    fn weekday_costs() -> Vec<f64> {
        (0..24)
            .map(|s| match (7 + s) % 24 {
                7..=14 => 0.0,
                15..=18 => 7.4,
                19..=22 => 0.0,
                _ => -4.4,
            })
            .collect()
    }

    fn single(arrival_hour: usize, m: f64, n: usize) -> (Instance, SamplePath) {
        let menu = Menu::table2();
        let inst = Instance::uniform(menu.clone(), &weekday_costs(), Bounds::new(0.0, 10000.0)).unwrap();
        let item = menu
            .items()
            .iter()
            .position(|i| i.energy_kwh == m && i.window == n)
            .unwrap();
        let mut path = SamplePath::empty(24, menu.len());
        path.arrivals[(arrival_hour + 24 - 7) % 24].0[item] = 1;
        (inst, path)
    }

    #[test]
    fn sp_late_arrival_fills_off_peak() {
        let (inst, path) = single(20, 30.0, 6);
        let plan = solve_sp(&inst, &path).unwrap();
        assert!((plan.total_cost() - -132.0).abs() < 1e-9);
        let (inst, path) = single(19, 30.0, 6);
        let plan = solve_sp(&inst, &path).unwrap();
        assert!((plan.total_cost() - -88.0).abs() < 1e-9);
    }

    #[test]
    fn fcfs_charges_immediately() {
        let (inst, path) = single(7, 20.0, 4);
        let plan = run_fcfs(&inst, &path).unwrap();
        assert_eq!(plan.allocations[0].total(), 10.0);
        assert_eq!(plan.allocations[1].total(), 10.0);
        assert!(plan.allocations[2..].iter().all(|u| u.total() == 0.0));
    }

    #[test]
    fn empty_path_costs_nothing() {
        let (inst, _) = single(7, 10.0, 1);
        let path = SamplePath::empty(24, inst.menu.len());
        assert_eq!(solve_sp(&inst, &path).unwrap().total_cost(), 0.0);
        assert_eq!(run_fcfs(&inst, &path).unwrap().total_cost(), 0.0);
    }

    #[test]
    fn cumulative_cost_prefix() {
        let (inst, path) = single(7, 20.0, 4);
        let plan = run_fcfs(&inst, &path).unwrap();
        assert_eq!(cumulative_cost(&plan.allocations, &inst.costs, 0), 0.0);
        let total = cumulative_cost(&plan.allocations, &inst.costs, 24);
        assert_eq!(total, plan.total_cost());
    }
}
