//! Value-function regressors and the fit-to-samples projection.
//!
//! Two regressor classes are provided. [`LinearBasis`] is least squares over
//! a fixed feature map and is the default; [`Mlp`] is a dense softplus
//! network trained by full-batch gradient descent. Both normalize their
//! inputs by the per-stage [`StateBox`].

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arrivals::ArrivalModel;
use crate::error::{Error, Result};
use crate::model::{Bounds, BlockLayout, FleetState, Menu};

/// Anything that can score a state.
pub trait ValueFunction: Sync {
    fn value(&self, x: &FleetState) -> f64;

    /// Analytic gradient with respect to `z`, when the class has one.
    fn grad_z(&self, _x: &FleetState) -> Option<Vec<f64>> {
        None
    }
}

/// The terminal value `v_{T+1} = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Zero;

impl ValueFunction for Zero {
    fn value(&self, _x: &FleetState) -> f64 {
        0.0
    }

    fn grad_z(&self, x: &FleetState) -> Option<Vec<f64>> {
        Some(vec![0.0; x.dim()])
    }
}

impl<F: Fn(&FleetState) -> f64 + Sync> ValueFunction for F {
    fn value(&self, x: &FleetState) -> f64 {
        self(x)
    }
}

/// Per-stage sampling box: `y_j <= y_max[j]`, `z_j <= z_max[j]`, fixed `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBox {
    pub y_max: Vec<u32>,
    pub z_max: Vec<f64>,
    pub d: Bounds,
}

impl StateBox {
    /// Box of states reachable at slot `s`: the cohort at `(delta, item)`
    /// arrived at `s + delta + 1 - n` and holds at most `min(m y, r y h (delta + 1))`.
    pub fn for_stage(menu: &Menu, layout: &BlockLayout, arrivals: &ArrivalModel, s: usize, d: Bounds) -> Self {
        let dim = layout.dim();
        let per_ev = menu.per_ev_slot_energy();
        let mut y_max = vec![0u32; dim];
        let mut z_max = vec![0.0; dim];
        for j in layout.active_slots() {
            if let Some(t) = layout.arrival_of(j, s) {
                let cap = arrivals.cap(t, layout.item(j));
                y_max[j] = cap;
                let full = (layout.delta(j) + 1) as f64 * per_ev;
                z_max[j] = (layout.energy(j) * cap as f64).min(full * cap as f64);
            }
        }
        Self { y_max, z_max, d }
    }

    pub fn dim(&self) -> usize {
        self.y_max.len()
    }

    /// Largest state in the box.
    pub fn corner(&self) -> FleetState {
        FleetState {
            y: self.y_max.clone(),
            z: self.z_max.clone(),
            d: self.d,
        }
    }

    /// Positions that can hold a cohort.
    pub fn live_slots(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.y_max[j] > 0).collect()
    }

    /// Upper bound on `z_j` given `y_j`.
    pub fn z_limit(&self, j: usize, y: u32) -> f64 {
        if self.y_max[j] == 0 {
            return 0.0;
        }
        self.z_max[j] * y as f64 / self.y_max[j] as f64
    }

    pub fn contains(&self, x: &FleetState, tol: f64) -> bool {
        (0..self.dim()).all(|j| {
            x.y[j] <= self.y_max[j] && x.z[j] >= -tol && x.z[j] <= self.z_limit(j, x.y[j]) + tol
        })
    }
}

/// Uniform states from the box: `y` uniform on the integer box, then `z`
/// uniform on `[0, min(m y, r y h (delta + 1))]`.
pub fn sample_states<R: Rng + ?Sized>(bx: &StateBox, l: usize, rng: &mut R) -> Vec<FleetState> {
    (0..l)
        .map(|_| {
            let mut y = vec![0u32; bx.dim()];
            let mut z = vec![0.0; bx.dim()];
            for j in 0..bx.dim() {
                if bx.y_max[j] == 0 {
                    continue;
                }
                y[j] = rng.gen_range(0..=bx.y_max[j]);
                let hi = bx.z_limit(j, y[j]);
                if hi > 0.0 {
                    z[j] = rng.gen::<f64>() * hi;
                }
            }
            FleetState { y, z, d: bx.d }
        })
        .collect()
}

fn finite_or_zero(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// A state coordinate used inside a monomial feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Y(usize),
    Z(usize),
}

impl Var {
    fn eval(&self, x: &FleetState) -> f64 {
        match *self {
            Var::Y(j) => x.y[j] as f64,
            Var::Z(j) => x.z[j],
        }
    }
}

/// One basis function of [`LinearBasis`].
#[derive(Debug, Clone, PartialEq)]
pub enum Feature {
    Const,
    Y(usize),
    Z(usize),
    SumZ,
    /// `sum_j min(r h y_j, z_j)`.
    SumCap,
    DLower,
    DUpper,
    /// `min(z_j, r h y_j k)`.
    Ladder { slot: usize, k: usize },
    Mono(Vec<Var>),
}

impl Feature {
    fn encode(&self) -> String {
        match self {
            Feature::Const => "const".into(),
            Feature::Y(j) => format!("y:{j}"),
            Feature::Z(j) => format!("z:{j}"),
            Feature::SumZ => "sum_z".into(),
            Feature::SumCap => "sum_cap".into(),
            Feature::DLower => "d_lower".into(),
            Feature::DUpper => "d_upper".into(),
            Feature::Ladder { slot, k } => format!("ladder:{slot}:{k}"),
            Feature::Mono(vars) => {
                let parts: Vec<String> = vars
                    .iter()
                    .map(|v| match v {
                        Var::Y(j) => format!("y{j}"),
                        Var::Z(j) => format!("z{j}"),
                    })
                    .collect();
                format!("mono:{}", parts.join(","))
            }
        }
    }

    fn decode(s: &str) -> Result<Self> {
        let bad = || Error::Checkpoint(format!("unknown feature `{s}`"));
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad());
        let mut it = s.splitn(3, ':');
        let head = it.next().ok_or_else(bad)?;
        Ok(match head {
            "const" => Feature::Const,
            "sum_z" => Feature::SumZ,
            "sum_cap" => Feature::SumCap,
            "d_lower" => Feature::DLower,
            "d_upper" => Feature::DUpper,
            "y" => Feature::Y(num(it.next().ok_or_else(bad)?)?),
            "z" => Feature::Z(num(it.next().ok_or_else(bad)?)?),
            "ladder" => {
                let slot = num(it.next().ok_or_else(bad)?)?;
                let k = num(it.next().ok_or_else(bad)?)?;
                Feature::Ladder { slot, k }
            }
            "mono" => {
                let body = it.next().ok_or_else(bad)?;
                let vars = body
                    .split(',')
                    .map(|p| {
                        let (tag, idx) = p.split_at(1);
                        match tag {
                            "y" => Ok(Var::Y(num(idx)?)),
                            "z" => Ok(Var::Z(num(idx)?)),
                            _ => Err(bad()),
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Feature::Mono(vars)
            }
            _ => return Err(bad()),
        })
    }

    fn eval(&self, x: &FleetState, per_ev: f64, live: &[usize]) -> f64 {
        match self {
            Feature::Const => 1.0,
            Feature::Y(j) => x.y[*j] as f64,
            Feature::Z(j) => x.z[*j],
            Feature::SumZ => live.iter().map(|&j| x.z[j]).sum(),
            Feature::SumCap => live
                .iter()
                .map(|&j| (per_ev * x.y[j] as f64).min(x.z[j]))
                .sum(),
            Feature::DLower => finite_or_zero(x.d.lower),
            Feature::DUpper => finite_or_zero(x.d.upper),
            Feature::Ladder { slot, k } => x.z[*slot].min(per_ev * x.y[*slot] as f64 * *k as f64),
            Feature::Mono(vars) => vars.iter().map(|v| v.eval(x)).product(),
        }
    }

    /// Adds `weight * d feature / d z` into `grad`.
    fn accumulate_grad_z(&self, x: &FleetState, per_ev: f64, live: &[usize], weight: f64, grad: &mut [f64]) {
        match self {
            Feature::Z(j) => grad[*j] += weight,
            Feature::SumZ => live.iter().for_each(|&j| grad[j] += weight),
            Feature::SumCap => {
                for &j in live {
                    if x.z[j] < per_ev * x.y[j] as f64 {
                        grad[j] += weight;
                    }
                }
            }
            Feature::Ladder { slot, k } => {
                if x.z[*slot] < per_ev * x.y[*slot] as f64 * *k as f64 {
                    grad[*slot] += weight;
                }
            }
            Feature::Mono(vars) => {
                for (i, v) in vars.iter().enumerate() {
                    if let Var::Z(j) = v {
                        let rest: f64 = vars
                            .iter()
                            .enumerate()
                            .filter(|&(o, _)| o != i)
                            .map(|(_, w)| w.eval(x))
                            .product();
                        grad[*j] += weight * rest;
                    }
                }
            }
            _ => {}
        }
    }
}

/// Core features plus up to `extras` additional ones, in a fixed order.
///
/// Returns the list and how many extras were actually available.
pub fn feature_map(menu: &Menu, layout: &BlockLayout, bx: &StateBox, extras: usize) -> (Vec<Feature>, usize) {
    let live = bx.live_slots();
    let mut core = vec![Feature::Const];
    core.extend(live.iter().map(|&j| Feature::Z(j)));
    core.extend(live.iter().map(|&j| Feature::Y(j)));
    core.extend([Feature::SumZ, Feature::SumCap, Feature::DLower, Feature::DUpper]);

    let per_ev = menu.per_ev_slot_energy();
    let mut more = Vec::new();
    for &j in &live {
        for k in 1..=layout.delta(j) {
            if per_ev * (k as f64) < layout.energy(j) {
                more.push(Feature::Ladder { slot: j, k });
            }
        }
    }
    for &j in &live {
        more.push(Feature::Mono(vec![Var::Z(j), Var::Z(j)]));
        more.push(Feature::Mono(vec![Var::Y(j), Var::Z(j)]));
        more.push(Feature::Mono(vec![Var::Y(j), Var::Y(j)]));
    }
    for (i, &a) in live.iter().enumerate() {
        for &b in &live[i + 1..] {
            more.push(Feature::Mono(vec![Var::Z(a), Var::Z(b)]));
        }
    }
    for (i, &a) in live.iter().enumerate() {
        for &b in &live[i + 1..] {
            more.push(Feature::Mono(vec![Var::Y(a), Var::Y(b)]));
        }
    }
    for &a in &live {
        for &b in &live {
            if a != b {
                more.push(Feature::Mono(vec![Var::Y(a), Var::Z(b)]));
            }
        }
    }
    for &j in &live {
        more.push(Feature::Mono(vec![Var::Z(j); 3]));
        more.push(Feature::Mono(vec![Var::Z(j), Var::Z(j), Var::Y(j)]));
        more.push(Feature::Mono(vec![Var::Z(j), Var::Y(j), Var::Y(j)]));
        more.push(Feature::Mono(vec![Var::Y(j); 3]));
    }
    let used = extras.min(more.len());
    core.extend(more.into_iter().take(used));
    (core, used)
}

/// Least squares over a fixed feature map, features scaled to `[0, 1]` on the box.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBasis {
    features: Vec<Feature>,
    live: Vec<usize>,
    per_ev: f64,
    scales: Vec<f64>,
    weights: Vec<f64>,
    dim: usize,
}

/// Ridge weight on the mean squared error, intercept excluded.
pub const RIDGE: f64 = 1e-8;

const REFINE_STEPS: usize = 4;

impl LinearBasis {
    /// Zero-weight model on the feature map for `bx`.
    pub fn new(menu: &Menu, layout: &BlockLayout, bx: &StateBox, extras: usize) -> Self {
        let (features, _) = feature_map(menu, layout, bx, extras);
        Self::with_features(features, menu.per_ev_slot_energy(), bx)
    }

    pub fn with_features(features: Vec<Feature>, per_ev: f64, bx: &StateBox) -> Self {
        let live = bx.live_slots();
        let corner = bx.corner();
        let scales = features
            .iter()
            .map(|f| {
                let v = f.eval(&corner, per_ev, &live).abs();
                if v > 0.0 && v.is_finite() {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        let n = features.len();
        Self {
            features,
            live,
            per_ev,
            scales,
            weights: vec![0.0; n],
            dim: bx.dim(),
        }
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Sets the weights on the normalized features.
    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.features.len() {
            return Err(Error::DimensionMismatch {
                what: "linear basis weights",
                expected: self.features.len(),
                got: weights.len(),
            });
        }
        self.weights = weights;
        Ok(())
    }

    /// Normalized feature vector.
    pub fn phi(&self, x: &FleetState) -> Vec<f64> {
        self.features
            .iter()
            .zip(&self.scales)
            .map(|(f, s)| f.eval(x, self.per_ev, &self.live) / s)
            .collect()
    }

    /// Exact ridge least squares on `data`.
    pub fn fit(&mut self, data: &FitDataset) -> Result<()> {
        if data.states.is_empty() {
            return Err(Error::Config("cannot fit on an empty dataset".into()));
        }
        let n = data.states.len();
        let p = self.features.len();
        let mut design = DMatrix::<f64>::zeros(n, p);
        for (r, x) in data.states.iter().enumerate() {
            for (c, v) in self.phi(x).into_iter().enumerate() {
                design[(r, c)] = v;
            }
        }
        let targets = DVector::from_column_slice(&data.targets);
        let scale = 1.0 / n as f64;
        let exact = design.transpose() * &design * scale;
        let mut gram = exact.clone();
        for (c, f) in self.features.iter().enumerate() {
            if *f != Feature::Const {
                gram[(c, c)] += RIDGE;
            }
        }
        let rhs = design.transpose() * targets * scale;
        let chol = gram
            .cholesky()
            .ok_or(Error::SingularNormalEquations { ridge: RIDGE })?;
        // Iterated refinement removes the ridge bias on well-determined directions.
        let mut w = chol.solve(&rhs);
        for _ in 0..REFINE_STEPS {
            w += chol.solve(&(&rhs - &exact * &w));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularNormalEquations { ridge: RIDGE });
        }
        self.weights = w.iter().copied().collect();
        Ok(())
    }
}

impl ValueFunction for LinearBasis {
    fn value(&self, x: &FleetState) -> f64 {
        self.features
            .iter()
            .zip(self.scales.iter().zip(&self.weights))
            .filter(|(_, (_, w))| **w != 0.0)
            .map(|(f, (s, w))| w * f.eval(x, self.per_ev, &self.live) / s)
            .sum()
    }

    fn grad_z(&self, x: &FleetState) -> Option<Vec<f64>> {
        let mut g = vec![0.0; self.dim];
        for (f, (s, w)) in self.features.iter().zip(self.scales.iter().zip(&self.weights)) {
            if *w != 0.0 {
                f.accumulate_grad_z(x, self.per_ev, &self.live, w / s, &mut g);
            }
        }
        Some(g)
    }
}

/// Hyperparameters of the dense network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    /// Hidden width; `None` means twice the state dimension.
    pub width: Option<usize>,
    pub depth: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
    pub min_improvement: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            width: None,
            depth: 8,
            learning_rate: 0.005,
            epochs: 2000,
            patience: 50,
            min_improvement: 1e-8,
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dense softplus network on box-normalized `[y, z, d]` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// Multiplier per input coordinate.
    input_scale: Vec<f64>,
    target_mean: f64,
    target_scale: f64,
    /// `(rows, cols, weights row-major, bias)` per layer; last layer has one row.
    layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Mlp {
    /// Seeded network with fan-in scaled uniform weights.
    pub fn new<R: Rng + ?Sized>(bx: &StateBox, cfg: &MlpConfig, rng: &mut R) -> Self {
        let n = bx.dim();
        let input_dim = 2 * n + 2;
        let width = cfg.width.unwrap_or(2 * input_dim).max(1);
        let mut input_scale = vec![0.0; input_dim];
        for j in 0..n {
            input_scale[j] = if bx.y_max[j] > 0 { 1.0 / bx.y_max[j] as f64 } else { 0.0 };
            input_scale[n + j] = if bx.z_max[j] > 0.0 { 1.0 / bx.z_max[j] } else { 0.0 };
        }
        let d_scale = |v: f64| if v.is_finite() && v > 0.0 { 1.0 / v } else { 0.0 };
        input_scale[2 * n] = d_scale(bx.d.lower);
        input_scale[2 * n + 1] = d_scale(bx.d.upper);

        let mut sizes = vec![input_dim];
        sizes.extend(std::iter::repeat(width).take(cfg.depth));
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (cols, rows) = (w[0], w[1]);
                let bound = 1.0 / (cols as f64).sqrt();
                Layer {
                    rows,
                    cols,
                    w: (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect(),
                    b: (0..rows).map(|_| rng.gen_range(-bound..=bound)).collect(),
                }
            })
            .collect();
        Self {
            input_scale,
            target_mean: 0.0,
            target_scale: 1.0,
            layers,
        }
    }

    fn input(&self, x: &FleetState) -> Vec<f64> {
        let v = x.to_vector();
        v.iter()
            .zip(&self.input_scale)
            .map(|(a, s)| if *s == 0.0 { 0.0 } else { a * s })
            .collect()
    }

    fn forward(&self, input: &[f64]) -> f64 {
        let mut h = input.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = layer.b.clone();
            for (r, out) in next.iter_mut().enumerate() {
                let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
                *out += row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
            }
            if i < last {
                next.iter_mut().for_each(|v| *v = softplus(*v));
            }
            h = next;
        }
        h[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Full-batch gradient descent on the mean squared error of the
    /// normalized targets. Stops early once the loss improved by less than
    /// `min_improvement` over `patience` epochs.
    pub fn fit(&mut self, data: &FitDataset, cfg: &MlpConfig) -> Result<FitReport> {
        if data.states.is_empty() {
            return Err(Error::Config("cannot fit on an empty dataset".into()));
        }
        let n = data.targets.len();
        let mean = data.targets.iter().sum::<f64>() / n as f64;
        let var = data.targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n as f64;
        self.target_mean = mean;
        self.target_scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        let targets: Vec<f64> = data
            .targets
            .iter()
            .map(|t| (t - self.target_mean) / self.target_scale)
            .collect();

        let input_dim = self.input_scale.len();
        let mut x0 = DMatrix::<f64>::zeros(input_dim, n);
        for (c, s) in data.states.iter().enumerate() {
            x0.set_column(c, &DVector::from_vec(self.input(s)));
        }
        let t = DMatrix::from_row_slice(1, n, &targets);

        let mut ws: Vec<DMatrix<f64>> = self
            .layers
            .iter()
            .map(|l| DMatrix::from_row_slice(l.rows, l.cols, &l.w))
            .collect();
        let mut bs: Vec<DVector<f64>> = self.layers.iter().map(|l| DVector::from_vec(l.b.clone())).collect();
        let last = ws.len() - 1;
        let mut history: Vec<f64> = Vec::new();
        let mut epochs_run = 0;

        for _ in 0..cfg.epochs {
            let mut pre: Vec<DMatrix<f64>> = Vec::with_capacity(ws.len());
            let mut acts: Vec<DMatrix<f64>> = vec![x0.clone()];
            for (i, (w, b)) in ws.iter().zip(&bs).enumerate() {
                let mut z = w * acts.last().unwrap();
                for mut col in z.column_iter_mut() {
                    col += b;
                }
                let a = if i < last { z.map(softplus) } else { z.clone() };
                pre.push(z);
                acts.push(a);
            }
            let err = acts.last().unwrap() - &t;
            let loss = err.iter().map(|e| e * e).sum::<f64>() / n as f64;
            if !loss.is_finite() {
                return Err(Error::NonFiniteObjective(loss));
            }
            history.push(loss);
            epochs_run += 1;
            if history.len() > cfg.patience {
                let before = history[history.len() - 1 - cfg.patience];
                if before - loss < cfg.min_improvement {
                    break;
                }
            }
            let mut delta = err * (2.0 / n as f64);
            for i in (0..ws.len()).rev() {
                let grad_w = &delta * acts[i].transpose();
                let grad_b = delta.column_sum();
                let next_delta = if i > 0 {
                    let back = ws[i].transpose() * &delta;
                    Some(back.component_mul(&pre[i - 1].map(sigmoid)))
                } else {
                    None
                };
                ws[i] -= grad_w * cfg.learning_rate;
                bs[i] -= grad_b * cfg.learning_rate;
                if let Some(d) = next_delta {
                    delta = d;
                }
            }
        }

        for (layer, (w, b)) in self.layers.iter_mut().zip(ws.iter().zip(&bs)) {
            for r in 0..layer.rows {
                for c in 0..layer.cols {
                    layer.w[r * layer.cols + c] = w[(r, c)];
                }
            }
            layer.b = b.iter().copied().collect();
        }
        Ok(FitReport {
            epochs: epochs_run,
            final_loss: history.last().copied().unwrap_or(0.0) * self.target_scale.powi(2),
        })
    }
}

impl ValueFunction for Mlp {
    fn value(&self, x: &FleetState) -> f64 {
        self.target_mean + self.target_scale * self.forward(&self.input(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub epochs: usize,
    /// Mean squared error in original units.
    pub final_loss: f64,
}

/// Sampled states and their Bellman targets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitDataset {
    pub states: Vec<FleetState>,
    pub targets: Vec<f64>,
}

/// Regressor class and size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegressorConfig {
    /// Core features plus `extras` more (ladders, then polynomial terms).
    LinearBasis { extras: usize },
    Mlp(MlpConfig),
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig::LinearBasis { extras: 8 }
    }
}

/// A fitted per-stage value model.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueModel {
    Zero,
    Linear(LinearBasis),
    Mlp(Mlp),
}

impl ValueFunction for ValueModel {
    fn value(&self, x: &FleetState) -> f64 {
        match self {
            ValueModel::Zero => 0.0,
            ValueModel::Linear(m) => m.value(x),
            ValueModel::Mlp(m) => m.value(x),
        }
    }

    fn grad_z(&self, x: &FleetState) -> Option<Vec<f64>> {
        match self {
            ValueModel::Zero => Zero.grad_z(x),
            ValueModel::Linear(m) => m.grad_z(x),
            ValueModel::Mlp(_) => None,
        }
    }
}

/// Fits a fresh model of class `cfg` on `data`.
pub fn fit<R: Rng + ?Sized>(
    cfg: &RegressorConfig,
    menu: &Menu,
    layout: &BlockLayout,
    bx: &StateBox,
    data: &FitDataset,
    rng: &mut R,
) -> Result<ValueModel> {
    match cfg {
        RegressorConfig::LinearBasis { extras } => {
            let mut m = LinearBasis::new(menu, layout, bx, *extras);
            m.fit(data)?;
            Ok(ValueModel::Linear(m))
        }
        RegressorConfig::Mlp(mc) => {
            let mut m = Mlp::new(bx, mc, rng);
            m.fit(data, mc)?;
            Ok(ValueModel::Mlp(m))
        }
    }
}

/// Largest excess of the fitted sup-distance over the target sup-distance,
/// both measured on `states`, across all target pairs.
pub fn nonexpansion_diagnostic<F, V>(mut fit_fn: F, pairs: &[(V, V)], states: &[FleetState]) -> Result<f64>
where
    F: FnMut(&dyn Fn(&FleetState) -> f64) -> Result<ValueModel>,
    V: Fn(&FleetState) -> f64,
{
    let mut worst = f64::NEG_INFINITY;
    for (v1, v2) in pairs {
        let f1 = fit_fn(v1)?;
        let f2 = fit_fn(v2)?;
        let fitted = states
            .iter()
            .map(|x| (f1.value(x) - f2.value(x)).abs())
            .fold(0.0, f64::max);
        let target = states
            .iter()
            .map(|x| (v1(x) - v2(x)).abs())
            .fold(0.0, f64::max);
        worst = worst.max(fitted - target);
    }
    Ok(worst)
}

const CHECKPOINT_FORMAT: &str = "vmck";
const CHECKPOINT_VERSION: u32 = 1;
const SEPARATOR: &str = "---";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    kind: String,
    stage: usize,
    dim: usize,
    #[serde(default)]
    features: Vec<String>,
    #[serde(default)]
    live: Vec<usize>,
    #[serde(default)]
    layers: Vec<[usize; 2]>,
    /// Named float blocks in the order they appear after the separator.
    blocks: Vec<(String, usize)>,
}

impl ValueModel {
    /// Structured-text checkpoint; floats use shortest round-trip notation.
    pub fn to_checkpoint(&self, stage: usize) -> String {
        let mut blocks: Vec<(String, Vec<f64>)> = Vec::new();
        let mut header = Header {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: String::new(),
            stage,
            dim: 0,
            features: Vec::new(),
            live: Vec::new(),
            layers: Vec::new(),
            blocks: Vec::new(),
        };
        match self {
            ValueModel::Zero => header.kind = "zero".into(),
            ValueModel::Linear(m) => {
                header.kind = "linear_basis".into();
                header.dim = m.dim;
                header.features = m.features.iter().map(Feature::encode).collect();
                header.live = m.live.clone();
                blocks.push(("per_ev".into(), vec![m.per_ev]));
                blocks.push(("scales".into(), m.scales.clone()));
                blocks.push(("weights".into(), m.weights.clone()));
            }
            ValueModel::Mlp(m) => {
                header.kind = "mlp".into();
                header.dim = (m.input_scale.len() - 2) / 2;
                header.layers = m.layers.iter().map(|l| [l.rows, l.cols]).collect();
                blocks.push(("input_scale".into(), m.input_scale.clone()));
                blocks.push(("target".into(), vec![m.target_mean, m.target_scale]));
                for (i, l) in m.layers.iter().enumerate() {
                    blocks.push((format!("w{i}"), l.w.clone()));
                    blocks.push((format!("b{i}"), l.b.clone()));
                }
            }
        }
        header.blocks = blocks.iter().map(|(n, v)| (n.clone(), v.len())).collect();
        let mut out = toml::to_string(&header).expect("header serializes");
        out.push_str(SEPARATOR);
        out.push('\n');
        for (_, values) in &blocks {
            for v in values {
                let _ = writeln!(out, "{v:e}");
            }
        }
        out
    }

    /// Parses a checkpoint written by [`ValueModel::to_checkpoint`].
    /// Returns the model and its stage index.
    pub fn from_checkpoint(text: &str) -> Result<(Self, usize)> {
        let (head, body) = text
            .split_once(&format!("\n{SEPARATOR}\n"))
            .ok_or_else(|| Error::Checkpoint("missing header separator".into()))?;
        let header: Header = toml::from_str(head).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                header.format, header.version
            )));
        }
        let values = body
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Checkpoint(format!("bad number `{l}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let expected: usize = header.blocks.iter().map(|(_, n)| n).sum();
        if values.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} numbers, found {}",
                values.len()
            )));
        }
        let mut blocks = std::collections::HashMap::new();
        let mut at = 0;
        for (name, n) in &header.blocks {
            blocks.insert(name.clone(), values[at..at + n].to_vec());
            at += n;
        }
        let take = |name: &str| {
            blocks
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing block `{name}`")))
        };
        let model = match header.kind.as_str() {
            "zero" => ValueModel::Zero,
            "linear_basis" => {
                let features = header
                    .features
                    .iter()
                    .map(|s| Feature::decode(s))
                    .collect::<Result<Vec<_>>>()?;
                let scales = take("scales")?;
                let weights = take("weights")?;
                let per_ev = take("per_ev")?;
                if scales.len() != features.len() || weights.len() != features.len() || per_ev.len() != 1 {
                    return Err(Error::Checkpoint("feature block sizes disagree".into()));
                }
                if header.live.iter().any(|&j| j >= header.dim) {
                    return Err(Error::Checkpoint("live slot outside the layout".into()));
                }
                ValueModel::Linear(LinearBasis {
                    features,
                    live: header.live.clone(),
                    per_ev: per_ev[0],
                    scales,
                    weights,
                    dim: header.dim,
                })
            }
            "mlp" => {
                let input_scale = take("input_scale")?;
                let target = take("target")?;
                if target.len() != 2 {
                    return Err(Error::Checkpoint("target block must hold two numbers".into()));
                }
                let mut layers = Vec::new();
                for (i, [rows, cols]) in header.layers.iter().enumerate() {
                    let w = take(&format!("w{i}"))?;
                    let b = take(&format!("b{i}"))?;
                    if w.len() != rows * cols || b.len() != *rows {
                        return Err(Error::Checkpoint(format!("layer {i} has the wrong size")));
                    }
                    layers.push(Layer {
                        rows: *rows,
                        cols: *cols,
                        w,
                        b,
                    });
                }
                if layers.is_empty() || layers[0].cols != input_scale.len() {
                    return Err(Error::Checkpoint("network input width disagrees".into()));
                }
                ValueModel::Mlp(Mlp {
                    input_scale,
                    target_mean: target[0],
                    target_scale: target[1],
                    layers,
                })
            }
            other => return Err(Error::Checkpoint(format!("unknown model kind `{other}`"))),
        };
        Ok((model, header.stage))
    }

    pub fn save(&self, stage: usize, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint(stage))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, usize)> {
        Self::from_checkpoint(&std::fs::read_to_string(path)?)
    }
}

/// File name of the checkpoint for 1-based stage `s`.
pub fn checkpoint_name(stage: usize) -> String {
    format!("stage_{stage}.vmck")
}
