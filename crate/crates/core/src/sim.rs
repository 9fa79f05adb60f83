//! Monte Carlo experiments: policy comparison, variance robustness, bound
//! stress and the property suite on the tiny instance.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arrivals::{ArrivalModel, Family, Theta};
use crate::baselines::{run_fcfs, solve_sp, SamplePath};
use crate::bellman::{lipschitz_recursion_bound, nonexpansiveness_check, InnerSolverConfig};
use crate::dispatch::{dispatch_path, DispatchConfig, DispatchPlan, Dispatcher};
use crate::error::{Error, Result};
use crate::feasible::gamma;
use crate::fvi::{convergence_report, median, sup_error, train, ConvergenceRow, ConvergenceSummary, TrainConfig, TrainedModels};
use crate::instance::Instance;
use crate::model::{AllocationVector, ArrivalVector};
use crate::oracle::{ExactOracle, OracleConfig};
use crate::rng::StreamFactory;
use crate::value::{sample_states, LinearBasis, RegressorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Adp,
    Sp,
    Fcfs,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Adp, Algorithm::Sp, Algorithm::Fcfs];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Adp => "adp",
            Algorithm::Sp => "sp",
            Algorithm::Fcfs => "fcfs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

/// Failure of one algorithm on one path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFailure {
    pub message: String,
    pub infeasible: bool,
}

impl From<Error> for RunFailure {
    fn from(e: Error) -> Self {
        let infeasible = matches!(e, Error::Infeasible { .. } | Error::InfeasibleStage { .. });
        Self {
            message: e.to_string(),
            infeasible,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRun {
    pub path: u64,
    /// Energy requested by all arrivals on the path.
    pub demand: f64,
    pub plans: Vec<(Algorithm, std::result::Result<DispatchPlan, RunFailure>)>,
}

impl PathRun {
    pub fn plan(&self, alg: Algorithm) -> Option<&DispatchPlan> {
        self.plans.iter().find(|(a, _)| *a == alg).and_then(|(_, r)| r.as_ref().ok())
    }

    pub fn profit(&self, alg: Algorithm) -> Option<f64> {
        self.plan(alg).map(|p| 0.0 - p.total_cost())
    }
}

/// Everything the forward pass needs besides the path.
#[derive(Clone, Copy)]
pub struct Policies<'a> {
    pub instance: &'a Instance,
    /// Needed when [`Algorithm::Adp`] is requested.
    pub models: Option<&'a TrainedModels>,
    pub forecast: &'a ArrivalModel,
    pub dispatch: DispatchConfig,
    pub inner: InnerSolverConfig,
    pub factory: &'a StreamFactory,
}

impl Policies<'_> {
    fn run(&self, alg: Algorithm, path: &SamplePath) -> Result<DispatchPlan> {
        match alg {
            Algorithm::Sp => solve_sp(self.instance, path),
            Algorithm::Fcfs => run_fcfs(self.instance, path),
            Algorithm::Adp => {
                let models = self
                    .models
                    .ok_or_else(|| Error::Checkpoint("adp needs trained value models".into()))?;
                let d = Dispatcher {
                    instance: self.instance,
                    models,
                    forecast: self.forecast,
                    cfg: self.dispatch,
                    inner: self.inner,
                    factory: self.factory.child("dispatch", 0),
                    path_id: path.id,
                };
                dispatch_path(&d, &path.arrivals)
            }
        }
    }
}

/// Paths `0..n` of `law`, drawn from the `paths` streams.
pub fn draw_paths(law: &ArrivalModel, factory: &StreamFactory, n: usize) -> Vec<SamplePath> {
    (0..n as u64).map(|id| SamplePath::draw(law, factory, id)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub runs: Vec<PathRun>,
}

/// One row of the per-path SP bound check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub path: u64,
    pub sp_cost: f64,
    pub other_cost: f64,
    pub algorithm: Algorithm,
    pub holds: bool,
}

pub fn run_comparison(policies: &Policies<'_>, paths: &[SamplePath], algorithms: &[Algorithm]) -> Comparison {
    let runs = paths
        .par_iter()
        .map(|path| PathRun {
            path: path.id,
            demand: path.demand(policies.instance),
            plans: algorithms
                .iter()
                .map(|&a| (a, policies.run(a, path).map_err(RunFailure::from)))
                .collect(),
        })
        .collect();
    Comparison { runs }
}

impl Comparison {
    pub fn failures(&self) -> Vec<(u64, Algorithm, &RunFailure)> {
        self.runs
            .iter()
            .flat_map(|r| {
                r.plans
                    .iter()
                    .filter_map(move |(a, res)| res.as_ref().err().map(|e| (r.path, *a, e)))
            })
            .collect()
    }

    /// `J_SP <= J_alg + tol max(1, |J_SP|)` for every path where both ran.
    pub fn sp_bound_checks(&self, tol: f64) -> Vec<BoundCheck> {
        let mut out = Vec::new();
        for r in &self.runs {
            let Some(sp) = r.plan(Algorithm::Sp) else { continue };
            let sp_cost = sp.total_cost();
            for alg in [Algorithm::Adp, Algorithm::Fcfs] {
                if let Some(p) = r.plan(alg) {
                    let other_cost = p.total_cost();
                    out.push(BoundCheck {
                        path: r.path,
                        sp_cost,
                        other_cost,
                        algorithm: alg,
                        holds: sp_cost <= other_cost + tol * sp_cost.abs().max(1.0),
                    });
                }
            }
        }
        out
    }

    /// Largest gap between delivered and requested energy, and largest
    /// per-slot excursion outside the bounds, over all successful plans.
    pub fn completion_error(&self, instance: &Instance) -> (f64, f64) {
        let mut energy: f64 = 0.0;
        let mut bounds: f64 = 0.0;
        for r in &self.runs {
            for (_, res) in &r.plans {
                let Ok(p) = res else { continue };
                energy = energy.max((p.total_energy() - r.demand).abs());
                for (s, u) in p.allocations.iter().enumerate() {
                    let b = instance.bounds[s];
                    let total = u.total();
                    bounds = bounds.max(b.lower - total).max(total - b.upper);
                }
            }
        }
        (energy, bounds.max(0.0))
    }

    pub fn profits(&self, alg: Algorithm) -> Vec<Option<f64>> {
        self.runs.iter().map(|r| r.profit(alg)).collect()
    }

    /// Rows `path, algorithm, slot, cumulative_cost, cumulative_profit`.
    pub fn write_comparison_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path", "algorithm", "slot", "cumulative_cost", "cumulative_profit"])?;
        for r in &self.runs {
            for (a, res) in &r.plans {
                let Ok(p) = res else { continue };
                for (s, c) in p.cumulative_costs().iter().enumerate() {
                    w.write_record([
                        r.path.to_string(),
                        a.name().to_string(),
                        (s + 1).to_string(),
                        c.to_string(),
                        (0.0 - c).to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Rows `path, algorithm, slot, energy, cumulative_energy, demand`.
    pub fn write_energy_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path", "algorithm", "slot", "energy", "cumulative_energy", "demand"])?;
        for r in &self.runs {
            for (a, res) in &r.plans {
                let Ok(p) = res else { continue };
                for (s, (u, e)) in p.allocations.iter().zip(p.cumulative_energy()).enumerate() {
                    w.write_record([
                        r.path.to_string(),
                        a.name().to_string(),
                        (s + 1).to_string(),
                        u.total().to_string(),
                        e.to_string(),
                        r.demand.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// A plan reduced to what is needed to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredPlan {
    pub path: u64,
    pub algorithm: Algorithm,
    pub arrivals: Vec<ArrivalVector>,
    pub allocations: Vec<AllocationVector>,
}

pub fn save_plans(path: &Path, plans: &[StoredPlan]) -> Result<()> {
    std::fs::write(path, serde_json::to_string(plans)?)?;
    Ok(())
}

pub fn load_plans(path: &Path) -> Result<Vec<StoredPlan>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

impl Comparison {
    pub fn stored(&self, paths: &[SamplePath]) -> Vec<StoredPlan> {
        let mut out = Vec::new();
        for r in &self.runs {
            let Some(path) = paths.iter().find(|p| p.id == r.path) else { continue };
            for (a, res) in &r.plans {
                if let Ok(p) = res {
                    out.push(StoredPlan {
                        path: r.path,
                        algorithm: *a,
                        arrivals: path.arrivals.clone(),
                        allocations: p.allocations.clone(),
                    });
                }
            }
        }
        out
    }

    /// Rebuilds a comparison by replaying stored allocations.
    pub fn from_stored(instance: &Instance, stored: &[StoredPlan]) -> Result<Self> {
        let mut runs: Vec<PathRun> = Vec::new();
        for sp in stored {
            let plan = DispatchPlan::replay(instance, &sp.arrivals, sp.allocations.clone())?;
            let demand: f64 = sp.arrivals.iter().map(|w| w.energy(&instance.menu)).sum();
            match runs.iter_mut().find(|r| r.path == sp.path) {
                Some(r) => r.plans.push((sp.algorithm, Ok(plan))),
                None => runs.push(PathRun {
                    path: sp.path,
                    demand,
                    plans: vec![(sp.algorithm, Ok(plan))],
                }),
            }
        }
        Ok(Self { runs })
    }

    /// One dispatch CSV per successful plan, named `{algorithm}_path{id}.csv`.
    pub fn write_plan_csvs(&self, instance: &Instance, dir: &Path) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir)?;
        let mut names = Vec::new();
        for r in &self.runs {
            for (a, res) in &r.plans {
                let Ok(p) = res else { continue };
                let name = format!("{}_path{}.csv", a.name(), r.path);
                p.write_csv(instance, std::fs::File::create(dir.join(&name))?)?;
                names.push(name);
            }
        }
        Ok(names)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessPoint {
    pub variance: f64,
    pub adp_profits: Vec<Option<f64>>,
    pub sp_profits: Vec<Option<f64>>,
    pub fcfs_profits: Vec<Option<f64>>,
    pub median_adp_profit: f64,
    /// Bootstrap standard error of the median ADP profit.
    pub median_se: f64,
    pub sp_bound_holds: bool,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Robustness {
    pub points: Vec<RobustnessPoint>,
    /// `|m_{i+1} - m_i| / |m_i|` over adjacent grid points.
    pub max_relative_change: f64,
    /// Every adjacent jump lies within two combined standard errors.
    pub jumps_within_band: bool,
}

fn bootstrap_median_se(values: &[f64], factory: &StreamFactory, key: u64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mut rng = factory.stream("bootstrap", key, 0);
    let reps = 1000;
    let meds: Vec<f64> = (0..reps)
        .map(|_| {
            let mut sample: Vec<f64> = (0..values.len())
                .map(|_| values[rng.gen_range(0..values.len())])
                .collect();
            median(&mut sample)
        })
        .collect();
    let mean = meds.iter().sum::<f64>() / reps as f64;
    (meds.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt()
}

/// Replays the policies on rounded-Gaussian paths with each variance; the
/// ADP forecast stays the base law.
pub fn run_robustness(policies: &Policies<'_>, variances: &[f64], n_paths: usize, tol: f64) -> Result<Robustness> {
    let base = policies.forecast;
    let gaussian = base.with_family(Family::Gaussian)?;
    let mut points = Vec::with_capacity(variances.len());
    for (i, &variance) in variances.iter().enumerate() {
        let law = gaussian.perturb(Theta {
            mean_scale: base.theta().mean_scale,
            variance,
        })?;
        let paths = draw_paths(&law, policies.factory, n_paths);
        let cmp = run_comparison(policies, &paths, &Algorithm::ALL);
        let adp = cmp.profits(Algorithm::Adp);
        let mut ok: Vec<f64> = adp.iter().flatten().copied().collect();
        let median_se = bootstrap_median_se(&ok, policies.factory, i as u64);
        points.push(RobustnessPoint {
            variance,
            median_adp_profit: median(&mut ok),
            median_se,
            sp_bound_holds: cmp.sp_bound_checks(tol).iter().all(|c| c.holds),
            failures: cmp.failures().len(),
            adp_profits: adp,
            sp_profits: cmp.profits(Algorithm::Sp),
            fcfs_profits: cmp.profits(Algorithm::Fcfs),
        });
    }
    let mut max_relative_change: f64 = 0.0;
    let mut jumps_within_band = true;
    for w in points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let jump = (b.median_adp_profit - a.median_adp_profit).abs();
        max_relative_change = max_relative_change.max(jump / a.median_adp_profit.abs().max(1e-12));
        let band = 2.0 * (a.median_se.powi(2) + b.median_se.powi(2)).sqrt();
        jumps_within_band &= jump <= band;
    }
    Ok(Robustness {
        points,
        max_relative_change,
        jumps_within_band,
    })
}

impl Robustness {
    /// Rows `variance, path, algorithm, profit`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["variance", "path", "algorithm", "profit"])?;
        for p in &self.points {
            for (alg, profits) in [
                (Algorithm::Adp, &p.adp_profits),
                (Algorithm::Sp, &p.sp_profits),
                (Algorithm::Fcfs, &p.fcfs_profits),
            ] {
                for (path, v) in profits.iter().enumerate() {
                    let cell = v.map_or_else(|| "failed".to_string(), |v| v.to_string());
                    w.write_record([p.variance.to_string(), path.to_string(), alg.name().to_string(), cell])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundLevel {
    pub upper: f64,
    pub comparison: Comparison,
    /// Per path and algorithm, 1-based slots where the total hits the upper bound.
    pub active: Vec<(u64, Algorithm, Vec<usize>)>,
    pub train_seconds: f64,
}

impl BoundLevel {
    pub fn median_profit(&self, alg: Algorithm) -> f64 {
        let mut v: Vec<f64> = self.comparison.profits(alg).into_iter().flatten().collect();
        median(&mut v)
    }

    pub fn active_count(&self, alg: Algorithm) -> usize {
        self.active
            .iter()
            .filter(|(_, a, _)| *a == alg)
            .map(|(_, _, s)| s.len())
            .sum()
    }
}

/// Slots where the plan's total reaches `upper` within a relative `1e-6`.
pub fn active_slots(plan: &DispatchPlan, upper: f64) -> Vec<usize> {
    if !upper.is_finite() {
        return Vec::new();
    }
    plan.allocations
        .iter()
        .enumerate()
        .filter(|(_, u)| u.total() >= upper - 1e-6 * upper.max(1.0))
        .map(|(s, _)| s + 1)
        .collect()
}

/// Retrains and replays every policy for each upper bound on shared paths.
pub fn run_bound_stress(
    policies: &Policies<'_>,
    train_cfg: &TrainConfig,
    uppers: &[f64],
    paths: &[SamplePath],
) -> Result<Vec<BoundLevel>> {
    let mut out = Vec::with_capacity(uppers.len());
    for &upper in uppers {
        let instance = policies.instance.with_upper_bound(upper)?;
        let started = Instant::now();
        let models = train(&instance, policies.forecast, train_cfg, &policies.inner, policies.factory)?;
        let train_seconds = started.elapsed().as_secs_f64();
        let level = Policies {
            instance: &instance,
            models: Some(&models),
            ..*policies
        };
        let comparison = run_comparison(&level, paths, &Algorithm::ALL);
        let active = comparison
            .runs
            .iter()
            .flat_map(|r| {
                r.plans.iter().filter_map(move |(a, res)| {
                    res.as_ref().ok().map(|p| (r.path, *a, active_slots(p, upper)))
                })
            })
            .collect();
        out.push(BoundLevel {
            upper,
            comparison,
            active,
            train_seconds,
        });
    }
    Ok(out)
}

/// Rows `upper, path, algorithm, slot, energy, active, profit`.
pub fn write_bounds_csv<W: Write>(levels: &[BoundLevel], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["upper", "path", "algorithm", "slot", "energy", "active", "profit"])?;
    for level in levels {
        for r in &level.comparison.runs {
            for (a, res) in &r.plans {
                let Ok(p) = res else {
                    w.write_record([
                        level.upper.to_string(),
                        r.path.to_string(),
                        a.name().to_string(),
                        String::new(),
                        String::new(),
                        String::new(),
                        "failed".into(),
                    ])?;
                    continue;
                };
                let active = active_slots(p, level.upper);
                for (s, u) in p.allocations.iter().enumerate() {
                    w.write_record([
                        level.upper.to_string(),
                        r.path.to_string(),
                        a.name().to_string(),
                        (s + 1).to_string(),
                        u.total().to_string(),
                        active.contains(&(s + 1)).to_string(),
                        (0.0 - p.total_cost()).to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Knobs of [`run_property_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct PropertySuiteConfig {
    pub oracle: OracleConfig,
    pub inner: InnerSolverConfig,
    pub sweep: Vec<(usize, usize, usize)>,
    pub sweep_seeds: u64,
    pub nonexpansion_pairs: usize,
    pub nonexpansion_states: usize,
    /// Largest admissible final sweep error relative to the value range.
    pub convergence_threshold: f64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageMonotonicity {
    pub stage: usize,
    pub pairs: u64,
    pub violations: u64,
    pub worst_increase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageLipschitz {
    pub stage: usize,
    pub estimate: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonexpansionSummary {
    pub trials: usize,
    pub holding: usize,
    /// Largest `operator_gap - input_gap - allowance`; nonpositive when all hold.
    pub worst_excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceCheck {
    pub rows: Vec<ConvergenceRow>,
    pub summary: Vec<ConvergenceSummary>,
    pub value_range: f64,
    pub strictly_decreasing: bool,
    pub final_relative_error: f64,
    pub threshold: f64,
    pub holds: bool,
}

/// Trained checkpoints compared against the oracle at the first stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointCheck {
    pub relative_sup_error: f64,
    pub threshold: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub monotonicity: Vec<StageMonotonicity>,
    pub lipschitz: Vec<StageLipschitz>,
    pub nonexpansion: NonexpansionSummary,
    pub convergence: ConvergenceCheck,
    pub checkpoint: Option<CheckpointCheck>,
    pub seconds: f64,
    pub passed: bool,
}

impl PropertyReport {
    pub fn monotonicity_holds(&self) -> bool {
        self.monotonicity.iter().all(|m| m.violations == 0)
    }

    pub fn lipschitz_holds(&self) -> bool {
        self.lipschitz.iter().all(|l| l.holds)
    }

    pub fn nonexpansion_holds(&self) -> bool {
        self.nonexpansion.holding == self.nonexpansion.trials
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Monotonicity and Lipschitz scans of the exact tables.
pub fn oracle_checks(instance: &Instance, oracle: &ExactOracle) -> (Vec<StageMonotonicity>, Vec<StageLipschitz>) {
    let scale = oracle
        .tables
        .iter()
        .map(|t| {
            let (lo, hi) = t.value_range();
            lo.abs().max(hi.abs())
        })
        .fold(1.0, f64::max);
    let mono = oracle
        .tables
        .iter()
        .map(|t| {
            let (pairs, violations, worst_increase) = t.monotonicity_scan(1e-6 * scale);
            StageMonotonicity {
                stage: t.stage + 1,
                pairs,
                violations,
                worst_increase,
            }
        })
        .collect();
    let l1: Vec<f64> = (0..instance.horizon()).map(|s| instance.costs.l1_norm(s)).collect();
    let bounds = lipschitz_recursion_bound(&l1, instance.menu.rate_kw());
    let lip = oracle
        .tables
        .iter()
        .map(|t| {
            let estimate = t.lipschitz_scan();
            let bound = bounds[t.stage];
            StageLipschitz {
                stage: t.stage + 1,
                estimate,
                bound,
                holds: estimate <= bound * (1.0 + 1e-9),
            }
        })
        .collect();
    (mono, lip)
}

/// Random LinearBasis pairs on the second stage's box, backed up one stage
/// through the empirical operator at sampled first-stage states.
pub fn nonexpansion_trials(
    instance: &Instance,
    arrivals: &ArrivalModel,
    extras: usize,
    pairs: usize,
    n_states: usize,
    inner: &InnerSolverConfig,
    factory: &StreamFactory,
) -> Result<NonexpansionSummary> {
    let s = 0;
    let bx_now = instance.state_box(arrivals, s);
    let bx_next = instance.state_box(arrivals, s + 1);
    let mut rng = factory.stream("nonexpansion_states", 0, 0);
    let states: Vec<_> = sample_states(&bx_now, n_states, &mut rng)
        .into_iter()
        .filter(|x| !gamma(&instance.menu, &instance.layout, x).is_empty())
        .collect();
    let reference = sample_states(&bx_next, n_states, &mut rng);
    let samples = crate::fvi::draw_samples(arrivals, s + 1, 8, factory, "nonexpansion_noise", 0);
    let template = LinearBasis::new(&instance.menu, &instance.layout, &bx_next, extras);
    let reports = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = factory.stream("nonexpansion_pairs", i as u64, 0);
            let n = template.features().len();
            let draw = |rng: &mut crate::rng::Stream| {
                let mut v = template.clone();
                let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
                v.set_weights(w).map(|_| v)
            };
            let v1 = draw(&mut rng)?;
            let v2 = draw(&mut rng)?;
            nonexpansiveness_check(
                &instance.layout,
                s,
                instance.costs.row(s),
                &samples,
                instance.bounds_at(s + 1),
                &v1,
                &v2,
                &states,
                &reference,
                |x| gamma(&instance.menu, &instance.layout, x),
                inner,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NonexpansionSummary {
        trials: reports.len(),
        holding: reports.iter().filter(|r| r.holds).count(),
        worst_excess: reports
            .iter()
            .map(|r| r.operator_gap - r.input_gap - r.allowance)
            .fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Sup error of the first-stage fit against the oracle on all grid states,
/// per `(k, l, extras)` and seed.
pub fn convergence_sweep(
    instance: &Instance,
    arrivals: &ArrivalModel,
    oracle: &ExactOracle,
    sweep: &[(usize, usize, usize)],
    seeds: u64,
    inner: &InnerSolverConfig,
    master_seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    let held_out = oracle.tables[0].states();
    let mut rows = Vec::new();
    for &(k, l, d) in sweep {
        for seed in 0..seeds {
            let cfg = TrainConfig {
                k,
                l,
                regressor: RegressorConfig::LinearBasis { extras: d },
                ..TrainConfig::default()
            };
            let started = Instant::now();
            let factory = StreamFactory::new(master_seed.wrapping_add(seed));
            let models = train(instance, arrivals, &cfg, inner, &factory)?;
            rows.push(ConvergenceRow {
                k,
                l,
                d,
                seed,
                sup_error: sup_error(models.at(0), &oracle.tables[0], &held_out),
                seconds: started.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(rows)
}

/// Oracle-backed checks on a tiny instance, optionally including trained models.
pub fn run_property_suite(
    instance: &Instance,
    arrivals: &ArrivalModel,
    cfg: &PropertySuiteConfig,
    models: Option<&TrainedModels>,
) -> Result<PropertyReport> {
    let started = Instant::now();
    let oracle = ExactOracle::solve(instance, arrivals, &cfg.oracle)?;
    let (monotonicity, lipschitz) = oracle_checks(instance, &oracle);
    let factory = StreamFactory::new(cfg.master_seed);
    let extras = cfg.sweep.last().map_or(0, |t| t.2);
    let nonexpansion = nonexpansion_trials(
        instance,
        arrivals,
        extras,
        cfg.nonexpansion_pairs,
        cfg.nonexpansion_states,
        &cfg.inner,
        &factory,
    )?;
    let rows = convergence_sweep(instance, arrivals, &oracle, &cfg.sweep, cfg.sweep_seeds, &cfg.inner, cfg.master_seed)?;
    let summary = convergence_report(&rows);
    let (lo, hi) = oracle.tables[0].value_range();
    let value_range = hi - lo;
    let strictly_decreasing = summary.windows(2).all(|w| w[1].median_error < w[0].median_error);
    let final_relative_error = summary.last().map_or(f64::NAN, |s| s.median_error / value_range.max(1e-12));
    let convergence = ConvergenceCheck {
        rows,
        summary,
        value_range,
        strictly_decreasing,
        final_relative_error,
        threshold: cfg.convergence_threshold,
        holds: strictly_decreasing && final_relative_error < cfg.convergence_threshold,
    };
    let checkpoint = models.map(|m| {
        let held_out = oracle.tables[0].states();
        let relative_sup_error = sup_error(m.at(0), &oracle.tables[0], &held_out) / value_range.max(1e-12);
        CheckpointCheck {
            relative_sup_error,
            threshold: cfg.convergence_threshold,
            holds: relative_sup_error < cfg.convergence_threshold,
        }
    });
    let mut report = PropertyReport {
        monotonicity,
        lipschitz,
        nonexpansion,
        convergence,
        checkpoint,
        seconds: 0.0,
        passed: false,
    };
    report.passed = report.monotonicity_holds()
        && report.lipschitz_holds()
        && report.nonexpansion_holds()
        && report.convergence.holds
        && report.checkpoint.as_ref().map_or(true, |c| c.holds);
    report.seconds = started.elapsed().as_secs_f64();
    Ok(report)
}
