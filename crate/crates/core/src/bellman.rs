//! The empirical Bellman operator and value-function diagnostics.
//!
//! The inner problem at a state `x` is
//! `min_u c_s . u + (1/k) sum_i v(f(x, u, W_i, d_{s+1}))` over a polytope.
//! Allocations only move residuals of shifted cohorts, and arrivals only
//! enter the injection positions, so each next state is the shifted state
//! with the sample's arrivals written over a disjoint set of positions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasible::{linmin, ActionPolytope};
use crate::model::{partial_order_leq, AllocationVector, ArrivalVector, BlockLayout, Bounds, FleetState};
use crate::rng::StreamFactory;
use crate::value::ValueFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    FrankWolfe,
    /// One linearization of the value term at the lower-bound vertex.
    LinearOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnerSolverConfig {
    pub method: InnerMethod,
    pub max_iterations: usize,
    /// Duality-gap tolerance relative to `max(1, |objective|)`.
    pub gap_tolerance: f64,
    /// Starts in total: `linmin(c)`, the lower-bound vertex, then random vertices.
    pub multistarts: usize,
    pub seed: u64,
}

impl Default for InnerSolverConfig {
    fn default() -> Self {
        Self {
            method: InnerMethod::FrankWolfe,
            max_iterations: 100,
            gap_tolerance: 1e-4,
            multistarts: 3,
            seed: 0,
        }
    }
}

impl InnerSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_tolerance > 0.0) {
            return Err(Error::Config("inner_solver.gap_tolerance must be positive".into()));
        }
        if self.multistarts == 0 {
            return Err(Error::Config("inner_solver.multistarts must be at least 1".into()));
        }
        Ok(())
    }
}

/// One stage of the backward or forward recursion.
pub struct StageProblem<'a, V: ValueFunction + ?Sized> {
    pub layout: &'a BlockLayout,
    pub slot: usize,
    pub costs: &'a [f64],
    pub next: &'a V,
    pub samples: &'a [ArrivalVector],
    pub d_next: Bounds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub value: f64,
    pub u: AllocationVector,
    /// Smallest duality gap observed at any iterate.
    pub gap: f64,
    pub iterations: usize,
    /// Whether some start reached the gap tolerance.
    pub converged: bool,
    /// Best value so far after every iteration, across starts.
    pub trace: Vec<f64>,
}

/// Relative step for finite-difference gradients.
pub const FD_STEP: f64 = 1e-4;

struct Objective<'p, 'a, V: ValueFunction + ?Sized> {
    sp: &'p StageProblem<'a, V>,
    /// `(source, target)` for every shifted active position.
    shift: Vec<(usize, usize)>,
    base: FleetState,
    injections: Vec<Vec<(usize, u32, f64)>>,
    x: &'p FleetState,
    fd_scale: Vec<f64>,
}

impl<'p, 'a, V: ValueFunction + ?Sized> Objective<'p, 'a, V> {
    fn new(sp: &'p StageProblem<'a, V>, x: &'p FleetState, p: &ActionPolytope) -> Result<Self> {
        let layout = sp.layout;
        let k = layout.n_items();
        if sp.samples.is_empty() {
            return Err(Error::Config("stage problem needs at least one arrival sample".into()));
        }
        let mut base = FleetState::empty(layout, sp.d_next);
        let mut shift = Vec::new();
        for j in k..layout.dim() {
            if layout.is_active(j) {
                shift.push((j, j - k));
                base.y[j - k] = x.y[j];
            }
        }
        let injections = sp
            .samples
            .iter()
            .map(|w| {
                (0..layout.n_items())
                    .map(|i| {
                        let j = layout.injection_slot(i);
                        (j, w.0[i], w.0[i] as f64 * layout.energy(j))
                    })
                    .collect()
            })
            .collect();
        let fd_scale = (0..layout.dim()).map(|j| FD_STEP * p.ub[j].max(1e-3)).collect();
        Ok(Self {
            sp,
            shift,
            base,
            injections,
            x,
            fd_scale,
        })
    }

    fn shifted(&self, u: &[f64]) -> FleetState {
        let mut next = self.base.clone();
        for &(j, t) in &self.shift {
            next.z[t] = (self.x.z[j] - u[j]).max(0.0);
        }
        next
    }

    fn mean_value(&self, next: &mut FleetState) -> f64 {
        let mut total = 0.0;
        for inj in &self.injections {
            for &(j, y, z) in inj {
                next.y[j] = y;
                next.z[j] = z;
            }
            total += self.sp.next.value(next);
        }
        total / self.injections.len() as f64
    }

    fn value(&self, u: &[f64]) -> Result<f64> {
        let linear: f64 = self.sp.costs.iter().zip(u).map(|(c, v)| c * v).sum();
        let mut next = self.shifted(u);
        let v = linear + self.mean_value(&mut next);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteObjective(v))
        }
    }

    fn grad(&self, u: &[f64], p: &ActionPolytope) -> Vec<f64> {
        let mut g = self.sp.costs.to_vec();
        let mut next = self.shifted(u);
        let mut analytic = vec![0.0; next.dim()];
        let mut have_analytic = true;
        for inj in &self.injections {
            for &(j, y, z) in inj {
                next.y[j] = y;
                next.z[j] = z;
            }
            match self.sp.next.grad_z(&next) {
                Some(gz) => analytic.iter_mut().zip(gz).for_each(|(a, b)| *a += b),
                None => {
                    have_analytic = false;
                    break;
                }
            }
        }
        if have_analytic {
            let n = self.injections.len() as f64;
            for &(j, t) in &self.shift {
                g[j] -= analytic[t] / n;
            }
            return g;
        }
        for &(j, t) in &self.shift {
            if p.ub[j] <= p.lb[j] {
                continue;
            }
            let h = self.fd_scale[j];
            let mut probe = self.shifted(u);
            let mid = probe.z[t];
            probe.z[t] = mid + h;
            let up = self.mean_value(&mut probe);
            probe.z[t] = mid - h;
            let down = self.mean_value(&mut probe);
            g[j] -= (up - down) / (2.0 * h);
        }
        g
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Approximate minimizer of the empirical Bellman objective over `p`.
pub fn empirical_bellman<V: ValueFunction + ?Sized>(
    sp: &StageProblem<'_, V>,
    x: &FleetState,
    p: &ActionPolytope,
    cfg: &InnerSolverConfig,
) -> Result<InnerSolution> {
    let obj = Objective::new(sp, x, p)?;
    let mut starts = vec![linmin(p, sp.costs)?];
    if cfg.multistarts > 1 {
        starts.push(linmin(p, &vec![0.0; p.dim()])?);
    }
    if cfg.multistarts > 2 {
        let factory = StreamFactory::new(cfg.seed);
        for s in 2..cfg.multistarts {
            let mut rng = factory.stream("solver_start", sp.slot as u64, s as u64);
            let cost: Vec<f64> = (0..p.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            starts.push(linmin(p, &cost)?);
        }
    }

    let mut best_u = starts[0].0.clone();
    let mut best = obj.value(&best_u)?;
    let mut best_gap = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut trace = Vec::new();

    match cfg.method {
        InnerMethod::LinearOnly => {
            let start = starts[starts.len().min(2) - 1].0.clone();
            let g = obj.grad(&start, p);
            let vertex = linmin(p, &g)?;
            let fv = obj.value(&vertex.0)?;
            if fv < best {
                best = fv;
                best_u = vertex.0.clone();
            }
            best_gap = (dot(&g, &start) - dot(&g, &vertex.0)).max(0.0);
            trace.push(best);
            iterations = 1;
        }
        InnerMethod::FrankWolfe => {
            for start in &starts {
                let mut u = start.0.clone();
                let mut fu = obj.value(&u)?;
                if fu < best {
                    best = fu;
                    best_u = u.clone();
                }
                for it in 0..cfg.max_iterations {
                    iterations += 1;
                    let g = obj.grad(&u, p);
                    let vertex = linmin(p, &g)?;
                    let gap = (dot(&g, &u) - dot(&g, &vertex.0)).max(0.0);
                    best_gap = best_gap.min(gap);
                    let fv = obj.value(&vertex.0)?;
                    if fv < best {
                        best = fv;
                        best_u = vertex.0.clone();
                    }
                    if gap <= cfg.gap_tolerance * fu.abs().max(1.0) {
                        converged = true;
                        trace.push(best);
                        break;
                    }
                    let step = 2.0 / (it as f64 + 2.0);
                    for (a, b) in u.iter_mut().zip(&vertex.0) {
                        *a += step * (b - *a);
                    }
                    fu = obj.value(&u)?;
                    if fu < best {
                        best = fu;
                        best_u = u.clone();
                    }
                    trace.push(best);
                }
            }
        }
    }

    Ok(InnerSolution {
        value: best,
        u: AllocationVector(best_u),
        gap: best_gap,
        iterations,
        converged,
        trace,
    })
}

/// Indices of pairs `(x, x')` with `x <= x'` where `v` increases beyond `tol`,
/// i.e. `v(x) < v(x') - tol`.
pub fn monotonicity_check<V: ValueFunction + ?Sized>(
    layout: &BlockLayout,
    v: &V,
    pairs: &[(FleetState, FleetState)],
    tol: f64,
) -> Vec<usize> {
    pairs
        .iter()
        .enumerate()
        .filter(|(_, (a, b))| {
            debug_assert!(partial_order_leq(layout, a, b));
            v.value(a) < v.value(b) - tol
        })
        .map(|(i, _)| i)
        .collect()
}

/// Largest `|v(x) - v(x')| / |x - x'|_inf` over the pairs.
pub fn lipschitz_estimate<V: ValueFunction + ?Sized>(v: &V, pairs: &[(FleetState, FleetState)]) -> f64 {
    pairs
        .iter()
        .filter_map(|(a, b)| {
            let dist = a.sup_distance(b);
            if dist > 0.0 {
                Some((v.value(a) - v.value(b)).abs() / dist)
            } else {
                None
            }
        })
        .fold(0.0, f64::max)
}

/// Stage-wise constants from `L_s = |c_s|_1 L_G + L_{s+1} (1 + L_G)` with
/// `L_{T+1} = 0` and `L_G = max(r, 1)`.
pub fn lipschitz_recursion_bound(cost_l1: &[f64], rate_kw: f64) -> Vec<f64> {
    let lg = rate_kw.max(1.0);
    let mut out = vec![0.0; cost_l1.len()];
    let mut next = 0.0;
    for s in (0..cost_l1.len()).rev() {
        out[s] = cost_l1[s] * lg + next * (1.0 + lg);
        next = out[s];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonexpansionReport {
    /// `max_x |H v1(x) - H v2(x)|` over the sampled states.
    pub operator_gap: f64,
    /// `max |v1 - v2|` over the reference and visited next states.
    pub input_gap: f64,
    pub allowance: f64,
    pub holds: bool,
}

/// Checks `|H v1 - H v2| <= |v1 - v2| + 2 tol` on `states` with shared samples.
///
/// The right-hand sup runs over `reference` plus every next state reached
/// by either inner solution.
pub fn nonexpansiveness_check<V1, V2, P>(
    layout: &BlockLayout,
    slot: usize,
    costs: &[f64],
    samples: &[ArrivalVector],
    d_next: Bounds,
    v1: &V1,
    v2: &V2,
    states: &[FleetState],
    reference: &[FleetState],
    polytope: P,
    cfg: &InnerSolverConfig,
) -> Result<NonexpansionReport>
where
    V1: ValueFunction + ?Sized,
    V2: ValueFunction + ?Sized,
    P: Fn(&FleetState) -> ActionPolytope,
{
    let sp1 = StageProblem {
        layout,
        slot,
        costs,
        next: v1,
        samples,
        d_next,
    };
    let sp2 = StageProblem {
        layout,
        slot,
        costs,
        next: v2,
        samples,
        d_next,
    };
    let diff = |x: &FleetState| (v1.value(x) - v2.value(x)).abs();
    let mut input_gap = reference.iter().map(diff).fold(0.0, f64::max);
    let mut operator_gap: f64 = 0.0;
    let mut allowance: f64 = 0.0;
    for x in states {
        let p = polytope(x);
        let a = empirical_bellman(&sp1, x, &p, cfg)?;
        let b = empirical_bellman(&sp2, x, &p, cfg)?;
        operator_gap = operator_gap.max((a.value - b.value).abs());
        allowance = allowance.max(2.0 * cfg.gap_tolerance * a.value.abs().max(b.value.abs()).max(1.0));
        for u in [&a.u, &b.u] {
            for w in samples {
                let next = crate::model::transition(layout, x, u, w, d_next)?;
                input_gap = input_gap.max(diff(&next));
            }
        }
    }
    Ok(NonexpansionReport {
        operator_gap,
        input_gap,
        allowance,
        holds: operator_gap <= input_gap + allowance,
    })
}
