//! Exact backward induction on a discretized state space.
//!
//! Only for tiny instances. Each live position carries an integer count
//! `y <= cap` and a residual on the grid `0, m/res, 2m/res, ...` up to the
//! box limit for that `y`. Expectations use the exact arrival pmfs; the
//! inner minimization scans actions that land the next residuals on grid
//! nodes, plus the `linmin` vertex, and reads next-stage values by
//! multilinear interpolation in `z`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arrivals::ArrivalModel;
use crate::error::{Error, Result};
use crate::feasible::{gamma, linmin};
use crate::instance::Instance;
use crate::model::{transition, AllocationVector, ArrivalVector, Bounds, FleetState};
use crate::value::{StateBox, ValueFunction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Grid step is `m / resolution` per position.
    pub resolution: usize,
    /// Largest number of grid states allowed in one stage.
    pub max_states: usize,
    /// Largest number of candidate actions allowed at one state.
    pub max_actions: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            resolution: 8,
            max_states: 200_000,
            max_actions: 20_000,
        }
    }
}

/// Tabulated values on one stage's grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactTable {
    pub stage: usize,
    dim: usize,
    live: Vec<usize>,
    departing: Vec<bool>,
    /// `grids[p][y]` is the residual grid of live position `p` at count `y`.
    grids: Vec<Vec<Vec<f64>>>,
    /// `offsets[p][y]` is the index of `(y, 0)` in position `p`'s digit range.
    offsets: Vec<Vec<usize>>,
    radix: Vec<usize>,
    d: Bounds,
    pub values: Vec<f64>,
}

impl ExactTable {
    fn new(instance: &Instance, bx: &StateBox, stage: usize, resolution: usize, max_states: usize) -> Result<Self> {
        let layout = &instance.layout;
        let live = bx.live_slots();
        let mut grids = Vec::new();
        let mut offsets = Vec::new();
        let mut radix = Vec::new();
        let mut total: usize = 1;
        for &j in &live {
            let step = layout.energy(j) / resolution as f64;
            let mut per_y = Vec::new();
            let mut offs = Vec::new();
            let mut count = 0;
            for y in 0..=bx.y_max[j] {
                let hi = bx.z_limit(j, y);
                let mut g = Vec::new();
                let mut i = 0usize;
                loop {
                    let v = step * i as f64;
                    if v >= hi - 1e-12 * hi.max(1.0) {
                        break;
                    }
                    g.push(v);
                    i += 1;
                }
                g.push(hi);
                offs.push(count);
                count += g.len();
                per_y.push(g);
            }
            total = total
                .checked_mul(count)
                .filter(|&t| t <= max_states)
                .ok_or_else(|| {
                    Error::InstanceTooLarge(format!(
                        "stage {} grid exceeds {max_states} states",
                        stage + 1
                    ))
                })?;
            grids.push(per_y);
            offsets.push(offs);
            radix.push(count);
        }
        Ok(Self {
            stage,
            dim: layout.dim(),
            departing: live.iter().map(|&j| layout.is_departing(j)).collect(),
            live,
            grids,
            offsets,
            radix,
            d: bx.d,
            values: vec![0.0; total],
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn digits(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.radix.len()];
        for (p, r) in self.radix.iter().enumerate() {
            out[p] = idx % r;
            idx /= r;
        }
        out
    }

    /// `(y, z)` of live position `p` for digit `digit`.
    fn decode(&self, p: usize, digit: usize) -> (u32, f64) {
        let offs = &self.offsets[p];
        let y = match offs.binary_search(&digit) {
            Ok(y) => y,
            Err(y) => y - 1,
        };
        (y as u32, self.grids[p][y][digit - offs[y]])
    }

    /// Grid state at `idx`.
    pub fn state(&self, idx: usize) -> FleetState {
        let mut x = FleetState {
            y: vec![0; self.dim],
            z: vec![0.0; self.dim],
            d: self.d,
        };
        for (p, digit) in self.digits(idx).into_iter().enumerate() {
            let (y, z) = self.decode(p, digit);
            x.y[self.live[p]] = y;
            x.z[self.live[p]] = z;
        }
        x
    }

    pub fn states(&self) -> Vec<FleetState> {
        (0..self.len()).map(|i| self.state(i)).collect()
    }

    /// Compact per-state coordinates `(y, z)` for each live position.
    fn coordinates(&self) -> Vec<Vec<(u32, f64)>> {
        (0..self.len())
            .map(|i| {
                self.digits(i)
                    .into_iter()
                    .enumerate()
                    .map(|(p, d)| self.decode(p, d))
                    .collect()
            })
            .collect()
    }

    fn interpolate(&self, x: &FleetState) -> f64 {
        const TOL: f64 = 1e-9;
        for j in 0..self.dim {
            if !self.live.contains(&j) && (x.y[j] != 0 || x.z[j].abs() > TOL) {
                return f64::INFINITY;
            }
        }
        let mut axes: Vec<[(usize, f64); 2]> = Vec::with_capacity(self.live.len());
        for (p, &j) in self.live.iter().enumerate() {
            let y = x.y[j] as usize;
            let Some(g) = self.grids[p].get(y) else {
                return f64::INFINITY;
            };
            let z = x.z[j];
            let last = *g.last().unwrap();
            if z < -TOL || z > last + TOL * last.max(1.0) {
                return f64::INFINITY;
            }
            let z = z.clamp(0.0, last);
            let base = self.offsets[p][y];
            let i = g.partition_point(|&v| v <= z).saturating_sub(1);
            if i + 1 >= g.len() || g[i] == z {
                axes.push([(base + i, 1.0), (base + i, 0.0)]);
            } else {
                let w = (z - g[i]) / (g[i + 1] - g[i]);
                axes.push([(base + i, 1.0 - w), (base + i + 1, w)]);
            }
        }
        let mut total = 0.0;
        for corner in 0..(1usize << axes.len()) {
            let mut weight = 1.0;
            let mut idx = 0;
            let mut stride = 1;
            for (p, axis) in axes.iter().enumerate() {
                let (digit, w) = axis[(corner >> p) & 1];
                weight *= w;
                idx += digit * stride;
                stride *= self.radix[p];
            }
            if weight == 0.0 {
                continue;
            }
            let v = self.values[idx];
            if !v.is_finite() {
                return f64::INFINITY;
            }
            total += weight * v;
        }
        total
    }

    /// `(min, max)` over finite entries.
    pub fn value_range(&self) -> (f64, f64) {
        self.values
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Exhaustive scan of comparable grid pairs: returns `(pairs, violations,
    /// largest increase)` where a violation is `v(x) < v(x') - tol` for `x <= x'`.
    pub fn monotonicity_scan(&self, tol: f64) -> (u64, u64, f64) {
        let coords = self.coordinates();
        let n = coords.len();
        (0..n)
            .into_par_iter()
            .map(|a| {
                let mut pairs = 0u64;
                let mut bad = 0u64;
                let mut worst: f64 = 0.0;
                for b in 0..n {
                    if a == b || !self.leq(&coords[a], &coords[b]) {
                        continue;
                    }
                    let (va, vb) = (self.values[a], self.values[b]);
                    if !va.is_finite() || !vb.is_finite() {
                        continue;
                    }
                    pairs += 1;
                    if va < vb - tol {
                        bad += 1;
                        worst = worst.max(vb - va);
                    }
                }
                (pairs, bad, worst)
            })
            .reduce(|| (0, 0, 0.0), |x, y| (x.0 + y.0, x.1 + y.1, x.2.max(y.2)))
    }

    fn leq(&self, a: &[(u32, f64)], b: &[(u32, f64)]) -> bool {
        a.iter().zip(b).zip(&self.departing).all(|((pa, pb), &dep)| {
            pa.0 <= pb.0 && if dep { pa.1 == pb.1 } else { pa.1 <= pb.1 }
        })
    }

    /// Largest `|v(x) - v(x')| / |x - x'|_inf` over all pairs of finite entries.
    pub fn lipschitz_scan(&self) -> f64 {
        let coords = self.coordinates();
        let n = coords.len();
        (0..n)
            .into_par_iter()
            .map(|a| {
                let mut worst: f64 = 0.0;
                if !self.values[a].is_finite() {
                    return worst;
                }
                for b in (a + 1)..n {
                    if !self.values[b].is_finite() {
                        continue;
                    }
                    let dist = coords[a]
                        .iter()
                        .zip(&coords[b])
                        .map(|(p, q)| (p.0 as f64 - q.0 as f64).abs().max((p.1 - q.1).abs()))
                        .fold(0.0, f64::max);
                    if dist > 0.0 {
                        worst = worst.max((self.values[a] - self.values[b]).abs() / dist);
                    }
                }
                worst
            })
            .reduce(|| 0.0, f64::max)
    }
}

impl ValueFunction for ExactTable {
    fn value(&self, x: &FleetState) -> f64 {
        self.interpolate(x)
    }
}

/// Optimal values for every stage, `tables[s]` for 0-based slot `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactOracle {
    pub tables: Vec<ExactTable>,
}

/// Exact joint pmf of the arrival vector at slot `t` as `(vector, probability)`.
pub fn joint_pmf(arrivals: &ArrivalModel, t: usize) -> Vec<(ArrivalVector, f64)> {
    let n = arrivals.n_items();
    if t >= arrivals.horizon() {
        return vec![(ArrivalVector::zeros(n), 1.0)];
    }
    let pmf = arrivals.pmf(t);
    let mut out = vec![(Vec::<u32>::new(), 1.0)];
    for item in pmf {
        let mut next = Vec::new();
        for (w, p) in &out {
            for (k, &q) in item.iter().enumerate() {
                if q > 0.0 {
                    let mut v = w.clone();
                    v.push(k as u32);
                    next.push((v, p * q));
                }
            }
        }
        out = next;
    }
    out.into_iter().map(|(v, p)| (ArrivalVector(v), p)).collect()
}

impl ExactOracle {
    pub fn solve(instance: &Instance, arrivals: &ArrivalModel, cfg: &OracleConfig) -> Result<Self> {
        let horizon = instance.horizon();
        let mut tables: Vec<ExactTable> = Vec::with_capacity(horizon);
        for s in 0..horizon {
            let bx = instance.state_box(arrivals, s);
            tables.push(ExactTable::new(instance, &bx, s, cfg.resolution, cfg.max_states)?);
        }
        for s in (0..horizon).rev() {
            let outcomes = joint_pmf(arrivals, s + 1);
            let d_next = instance.bounds_at(s + 1);
            let (done, rest) = tables.split_at_mut(s + 1);
            let next = rest.first();
            let table = &mut done[s];
            let states = table.states();
            let values = states
                .par_iter()
                .map(|x| stage_value(instance, s, x, next, &outcomes, d_next, cfg))
                .collect::<Result<Vec<f64>>>()?;
            table.values = values;
        }
        Ok(Self { tables })
    }

    /// CSV: stage, index, then `y_j` and `z_j` for every layout slot, then value.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let dim = self.tables.first().map_or(0, |t| t.dim);
        let mut header = vec!["stage".to_string(), "index".to_string()];
        header.extend((0..dim).map(|j| format!("y{j}")));
        header.extend((0..dim).map(|j| format!("z{j}")));
        header.push("value".into());
        w.write_record(&header)?;
        for t in &self.tables {
            for i in 0..t.len() {
                let x = t.state(i);
                let mut row = vec![(t.stage + 1).to_string(), i.to_string()];
                row.extend(x.y.iter().map(|v| v.to_string()));
                row.extend(x.z.iter().map(|v| v.to_string()));
                row.push(t.values[i].to_string());
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn stage_value(
    instance: &Instance,
    s: usize,
    x: &FleetState,
    next: Option<&ExactTable>,
    outcomes: &[(ArrivalVector, f64)],
    d_next: Bounds,
    cfg: &OracleConfig,
) -> Result<f64> {
    let layout = &instance.layout;
    let p = gamma(&instance.menu, layout, x);
    if p.is_empty() {
        return Ok(f64::INFINITY);
    }
    let costs = instance.costs.row(s);
    let free = p.free_coordinates();
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(free.len());
    let mut count: usize = 1;
    for &j in &free {
        let step = layout.energy(j) / cfg.resolution as f64;
        let mut vals = vec![p.lb[j], p.ub[j]];
        let mut i = 0usize;
        loop {
            let target = x.z[j] - step * i as f64;
            if target < p.lb[j] - 1e-12 {
                break;
            }
            if target <= p.ub[j] + 1e-12 {
                vals.push(target.clamp(p.lb[j], p.ub[j]));
            }
            i += 1;
        }
        vals.sort_by(f64::total_cmp);
        vals.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        count = count.saturating_mul(vals.len());
        axes.push(vals);
    }
    if count > cfg.max_actions {
        return Err(Error::InstanceTooLarge(format!(
            "{count} candidate actions at stage {}",
            s + 1
        )));
    }
    let evaluate = |u: &AllocationVector| -> Result<f64> {
        let total = u.total();
        if total < p.lower - 1e-9 || total > p.upper + 1e-9 {
            return Ok(f64::INFINITY);
        }
        let linear: f64 = costs.iter().zip(&u.0).map(|(c, v)| c * v).sum();
        let Some(next) = next else {
            return Ok(linear);
        };
        let mut expect = 0.0;
        for (w, prob) in outcomes {
            let nx = transition(layout, x, u, w, d_next)?;
            let v = next.value(&nx);
            if !v.is_finite() {
                return Ok(f64::INFINITY);
            }
            expect += prob * v;
        }
        Ok(linear + expect)
    };

    let mut best = evaluate(&linmin(&p, costs)?)?;
    let mut u = AllocationVector(p.lb.iter().zip(&p.ub).map(|(l, h)| l.min(*h)).collect());
    let mut digits = vec![0usize; free.len()];
    for _ in 0..count {
        for (k, &j) in free.iter().enumerate() {
            u.0[j] = axes[k][digits[k]];
        }
        best = best.min(evaluate(&u)?);
        for k in 0..digits.len() {
            digits[k] += 1;
            if digits[k] < axes[k].len() {
                break;
            }
            digits[k] = 0;
        }
    }
    Ok(best)
}
