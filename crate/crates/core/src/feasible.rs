//! Per-state action polytopes and exact linear minimization over them.
//!
//! Every polytope here is a box `lb <= u <= ub` intersected with one
//! aggregate window `L <= sum(u) <= U`. Linear minimization over such a set
//! is a continuous knapsack and the greedy fill below is exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AllocationVector, BlockLayout, FleetState, Menu};

/// Default membership tolerance in kWh.
pub const MEMBERSHIP_TOLERANCE: f64 = 1e-6;

/// How many future slots the forward-feasibility bound credits a cohort with.
///
/// After acting at slot `s` a cohort in block `delta` still has `delta` slots
/// left. `Exact` uses that count. `Conservative` uses `delta - 1`, the
/// coefficient `t + n - s - 2`, which forces completion one slot early.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaPrimeSlack {
    Conservative,
    #[default]
    Exact,
}

/// Box plus aggregate window.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionPolytope {
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    /// Positions pinned to `lb = ub = z` (departing cohorts).
    pub equality: Vec<bool>,
    pub lower: f64,
    pub upper: f64,
}

impl ActionPolytope {
    pub fn dim(&self) -> usize {
        self.lb.len()
    }

    pub fn sum_lb(&self) -> f64 {
        self.lb.iter().sum()
    }

    pub fn sum_ub(&self) -> f64 {
        self.ub.iter().sum()
    }

    /// Whether no allocation satisfies the box and window within `tol`.
    pub fn is_empty_within(&self, tol: f64) -> bool {
        if self.lb.iter().zip(&self.ub).any(|(l, u)| *l > *u + tol) {
            return true;
        }
        self.lower > self.upper + tol || self.sum_lb() > self.upper + tol || self.sum_ub() < self.lower - tol
    }

    pub fn is_empty(&self) -> bool {
        self.is_empty_within(MEMBERSHIP_TOLERANCE)
    }

    fn empty_error(&self) -> Error {
        Error::EmptyPolytope {
            sum_lb: self.sum_lb(),
            sum_ub: self.sum_ub(),
            lower: self.lower,
            upper: self.upper,
        }
    }

    /// Positions with room between their bounds.
    pub fn free_coordinates(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&j| self.ub[j] > self.lb[j])
            .collect()
    }
}

/// Feasible set at `x`: `0 <= u <= min(r y, z)`, `u = z` for departing
/// cohorts, and `d1 <= sum(u) <= d2`.
pub fn gamma(menu: &Menu, layout: &BlockLayout, x: &FleetState) -> ActionPolytope {
    let dim = layout.dim();
    let per_ev = menu.per_ev_slot_energy();
    let mut lb = vec![0.0; dim];
    let mut ub = vec![0.0; dim];
    let mut equality = vec![false; dim];
    for j in layout.active_slots() {
        let cap = per_ev * x.y[j] as f64;
        ub[j] = cap.min(x.z[j]);
        if layout.delta(j) == 0 {
            lb[j] = x.z[j];
            equality[j] = true;
        }
    }
    ActionPolytope {
        lb,
        ub,
        equality,
        lower: x.d.lower,
        upper: x.d.upper,
    }
}

/// `gamma(x)` tightened so every cohort can still finish at full rate in its
/// remaining slots after this one.
pub fn gamma_prime(
    menu: &Menu,
    layout: &BlockLayout,
    x: &FleetState,
    slack: GammaPrimeSlack,
) -> ActionPolytope {
    let mut p = gamma(menu, layout, x);
    let per_ev = menu.per_ev_slot_energy();
    for j in layout.active_slots() {
        let delta = layout.delta(j);
        if delta == 0 {
            continue;
        }
        let remaining = match slack {
            GammaPrimeSlack::Conservative => delta - 1,
            GammaPrimeSlack::Exact => delta,
        };
        let reachable = per_ev * x.y[j] as f64 * remaining as f64;
        p.lb[j] = (x.z[j] - reachable).max(0.0);
    }
    p
}

/// Membership with tolerance on every box side and the window.
pub fn contains(p: &ActionPolytope, u: &AllocationVector, tol: f64) -> bool {
    if u.0.len() != p.dim() {
        return false;
    }
    let inside_box = u
        .0
        .iter()
        .zip(p.lb.iter().zip(&p.ub))
        .all(|(&v, (&l, &h))| v >= l - tol && v <= h + tol);
    let total = u.total();
    inside_box && total >= p.lower - tol && total <= p.upper + tol
}

/// Exact minimizer of `cost . u` over `p`.
///
/// Starts at `lb`, raises the cheapest coordinates until the lower window is
/// met, then keeps raising strictly negative-cost coordinates (cheapest
/// first) until the upper window binds. Ties go to the lower layout index.
pub fn linmin(p: &ActionPolytope, cost: &[f64]) -> Result<AllocationVector> {
    if cost.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            what: "linmin cost",
            expected: p.dim(),
            got: cost.len(),
        });
    }
    if p.is_empty() {
        return Err(p.empty_error());
    }
    let mut u: Vec<f64> = p.lb.iter().zip(&p.ub).map(|(l, h)| l.min(*h)).collect();
    let mut total: f64 = u.iter().sum();

    let mut order = p.free_coordinates();
    order.sort_by(|&a, &b| cost[a].total_cmp(&cost[b]).then(a.cmp(&b)));

    let mut need = p.lower - total;
    for &j in &order {
        if need <= 0.0 {
            break;
        }
        let step = (p.ub[j] - u[j]).min(need);
        u[j] += step;
        total += step;
        need -= step;
    }
    for &j in &order {
        if cost[j] >= 0.0 {
            break;
        }
        let room = p.upper - total;
        if room <= 0.0 {
            break;
        }
        let step = (p.ub[j] - u[j]).min(room);
        u[j] += step;
        total += step;
    }
    Ok(AllocationVector(u))
}

/// Objective value of `linmin`, convenience for oracles.
pub fn linmin_value(p: &ActionPolytope, cost: &[f64]) -> Result<f64> {
    let u = linmin(p, cost)?;
    Ok(u.0.iter().zip(cost).map(|(a, b)| a * b).sum())
}
