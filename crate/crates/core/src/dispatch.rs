//! Forward pass: act on the tightened polytope with trained value models.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::arrivals::ArrivalModel;
use crate::bellman::{empirical_bellman, InnerSolverConfig, StageProblem};
use crate::error::{Error, Result};
use crate::feasible::{gamma_prime, GammaPrimeSlack};
use crate::fvi::{draw_samples, TrainedModels};
use crate::instance::Instance;
use crate::model::{stage_cost, transition, AllocationVector, ArrivalVector, CategoryId, FleetState};
use crate::rng::StreamFactory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DispatchConfig {
    /// Fresh forecast draws per slot.
    pub k_forward: usize,
    pub gamma_prime_slack: GammaPrimeSlack,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        Self {
            k_forward: 64,
            gamma_prime_slack: GammaPrimeSlack::Exact,
        }
    }
}

/// The decision rule for one path. It sees the current state only.
pub struct Dispatcher<'a> {
    pub instance: &'a Instance,
    pub models: &'a TrainedModels,
    /// Forecast law used for the expectation, not the realized path.
    pub forecast: &'a ArrivalModel,
    pub cfg: DispatchConfig,
    pub inner: InnerSolverConfig,
    pub factory: StreamFactory,
    pub path_id: u64,
}

impl Dispatcher<'_> {
    pub fn act(&self, s: usize, x: &FleetState) -> Result<AllocationVector> {
        let inst = self.instance;
        let p = gamma_prime(&inst.menu, &inst.layout, x, self.cfg.gamma_prime_slack);
        if p.is_empty() {
            return Err(Error::InfeasibleStage {
                slot: s + 1,
                reason: format!(
                    "tightened polytope is empty: forced {:.3} kWh, window [{:.3}, {:.3}], reachable {:.3}",
                    p.sum_lb(),
                    p.lower,
                    p.upper,
                    p.sum_ub()
                ),
            });
        }
        let samples = draw_samples(
            self.forecast,
            s + 1,
            self.cfg.k_forward.max(1),
            &self.factory,
            "forward",
            self.path_id,
        );
        let sp = StageProblem {
            layout: &inst.layout,
            slot: s,
            costs: inst.costs.row(s),
            next: self.models.at(s + 1),
            samples: &samples,
            d_next: inst.bounds_at(s + 1),
        };
        let sol = empirical_bellman(&sp, x, &p, &self.inner)?;
        let u = sol
            .u
            .0
            .iter()
            .zip(p.lb.iter().zip(&p.ub))
            .map(|(&v, (&l, &h))| v.clamp(l, h.max(l)))
            .collect();
        Ok(AllocationVector(u))
    }
}

/// A realized schedule in layout coordinates, shared by every policy.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchPlan {
    /// State at each slot before acting.
    pub states: Vec<FleetState>,
    pub allocations: Vec<AllocationVector>,
    /// `u / (r y h)` per slot and position, zero where no EVs are present.
    pub fractions: Vec<Vec<f64>>,
    pub stage_costs: Vec<f64>,
}

impl DispatchPlan {
    pub fn total_cost(&self) -> f64 {
        self.stage_costs.iter().sum()
    }

    pub fn total_energy(&self) -> f64 {
        self.allocations.iter().map(AllocationVector::total).sum()
    }

    /// Cumulative cost after each slot.
    pub fn cumulative_costs(&self) -> Vec<f64> {
        self.stage_costs
            .iter()
            .scan(0.0, |acc, c| {
                *acc += c;
                Some(*acc)
            })
            .collect()
    }

    pub fn cumulative_energy(&self) -> Vec<f64> {
        self.allocations
            .iter()
            .scan(0.0, |acc, u| {
                *acc += u.total();
                Some(*acc)
            })
            .collect()
    }

    /// Rolls `allocations` forward from the path and records fractions and costs.
    pub fn replay(instance: &Instance, arrivals: &[ArrivalVector], allocations: Vec<AllocationVector>) -> Result<Self> {
        let horizon = instance.horizon();
        let mut x = instance.initial_state(&arrivals[0])?;
        let mut states = Vec::with_capacity(horizon);
        let mut fractions = Vec::with_capacity(horizon);
        let mut stage_costs = Vec::with_capacity(horizon);
        let zero = ArrivalVector::zeros(instance.layout.n_items());
        for (s, u) in allocations.iter().enumerate() {
            fractions.push(fractions_of(instance, &x, u));
            stage_costs.push(stage_cost(&instance.costs, s, u));
            let w = arrivals.get(s + 1).unwrap_or(&zero);
            let next = transition(&instance.layout, &x, u, w, instance.bounds_at(s + 1))?;
            states.push(std::mem::replace(&mut x, next));
        }
        Ok(Self {
            states,
            allocations,
            fractions,
            stage_costs,
        })
    }

    /// CSV rows `slot, category, u, phi, cumulative_cost` for present cohorts.
    pub fn write_csv<W: Write>(&self, instance: &Instance, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["slot", "category", "u", "phi", "cumulative_cost"])?;
        let cumulative = self.cumulative_costs();
        for (s, (x, u)) in self.states.iter().zip(&self.allocations).enumerate() {
            for j in instance.layout.active_slots() {
                if x.y[j] == 0 {
                    continue;
                }
                let Some(cat) = instance.layout.category_of(j, s) else {
                    continue;
                };
                let item = instance.menu.items()[cat.item];
                w.write_record([
                    (s + 1).to_string(),
                    format!("{}:{}:{}", cat.arrival + 1, item.energy_kwh, item.window),
                    u.0[j].to_string(),
                    self.fractions[s][j].to_string(),
                    cumulative[s].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn fractions_of(instance: &Instance, x: &FleetState, u: &AllocationVector) -> Vec<f64> {
    let per_ev = instance.menu.per_ev_slot_energy();
    (0..instance.layout.dim())
        .map(|j| {
            if x.y[j] == 0 {
                0.0
            } else {
                (u.0[j] / (per_ev * x.y[j] as f64)).clamp(0.0, 1.0)
            }
        })
        .collect()
}

/// Runs the forward pass along a realized arrival path (`arrivals[t]` for slot `t`).
pub fn dispatch_path(dispatcher: &Dispatcher<'_>, arrivals: &[ArrivalVector]) -> Result<DispatchPlan> {
    let inst = dispatcher.instance;
    let horizon = inst.horizon();
    let zero = ArrivalVector::zeros(inst.layout.n_items());
    let mut x = inst.initial_state(arrivals.first().unwrap_or(&zero))?;
    let mut allocations = Vec::with_capacity(horizon);
    for s in 0..horizon {
        let u = dispatcher.act(s, &x)?;
        let w = arrivals.get(s + 1).unwrap_or(&zero);
        x = transition(&inst.layout, &x, &u, w, inst.bounds_at(s + 1))?;
        allocations.push(u);
    }
    DispatchPlan::replay(inst, arrivals, allocations)
}

/// Charging of one cohort's EVs within one slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotCharge {
    pub slot: usize,
    pub fraction: f64,
    /// Energy each EV receives in the slot.
    pub energy_per_ev: f64,
    /// Start and end of the charging burst, in hours from the slot start.
    pub start_hours: f64,
    pub end_hours: f64,
}

/// Per-EV timeline shared by all EVs of a cohort.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvTimeline {
    pub arrival: usize,
    pub item: usize,
    pub count: u32,
    pub charges: Vec<SlotCharge>,
}

impl EvTimeline {
    pub fn energy_per_ev(&self) -> f64 {
        self.charges.iter().map(|c| c.energy_per_ev).sum()
    }
}

/// Splits cohort allocations into identical per-EV schedules.
pub fn disaggregate(instance: &Instance, plan: &DispatchPlan) -> Vec<EvTimeline> {
    let per_ev = instance.menu.per_ev_slot_energy();
    let h = instance.menu.slot_hours();
    let mut out: Vec<EvTimeline> = Vec::new();
    for (s, x) in plan.states.iter().enumerate() {
        for j in instance.layout.active_slots() {
            if x.y[j] == 0 {
                continue;
            }
            let Some(CategoryId { arrival, item }) = instance.layout.category_of(j, s) else {
                continue;
            };
            let phi = plan.fractions[s][j];
            let charge = SlotCharge {
                slot: s,
                fraction: phi,
                energy_per_ev: phi * per_ev,
                start_hours: 0.0,
                end_hours: phi * h,
            };
            match out.iter_mut().find(|e| e.arrival == arrival && e.item == item) {
                Some(e) => e.charges.push(charge),
                None => out.push(EvTimeline {
                    arrival,
                    item,
                    count: x.y[j],
                    charges: vec![charge],
                }),
            }
        }
    }
    out
}
