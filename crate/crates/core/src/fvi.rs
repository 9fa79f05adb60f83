//! Backward fitted value iteration.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arrivals::ArrivalModel;
use crate::bellman::{empirical_bellman, InnerSolverConfig, StageProblem};
use crate::error::{Error, Result};
use crate::feasible::{gamma, gamma_prime, ActionPolytope, GammaPrimeSlack};
use crate::instance::Instance;
use crate::model::{ArrivalVector, FleetState};
use crate::rng::StreamFactory;
use crate::value::{checkpoint_name, fit, sample_states, FitDataset, RegressorConfig, StateBox, ValueFunction, ValueModel};

/// Polytope used for the training targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainPolytope {
    #[default]
    Gamma,
    GammaPrime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Noise samples per stage.
    pub k: usize,
    /// State samples per stage.
    pub l: usize,
    pub regressor: RegressorConfig,
    pub polytope: TrainPolytope,
    pub slack: GammaPrimeSlack,
    /// Redraws allowed for a sampled state whose polytope is empty.
    pub max_redraws: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 64,
            l: 64,
            regressor: RegressorConfig::default(),
            polytope: TrainPolytope::Gamma,
            slack: GammaPrimeSlack::Exact,
            max_redraws: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.l == 0 {
            return Err(Error::Config("fvi.k and fvi.l must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    /// 1-based stage.
    pub stage: usize,
    pub seconds: f64,
    pub redraws: usize,
    pub unconverged: usize,
    /// Mean squared fit residual on the training states.
    pub fit_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    /// `models[s]` approximates the value at 0-based slot `s`.
    pub models: Vec<ValueModel>,
    pub reports: Vec<StageReport>,
}

impl TrainedModels {
    /// Model for slot `s`, zero past the horizon.
    pub fn at(&self, s: usize) -> &ValueModel {
        const ZERO: ValueModel = ValueModel::Zero;
        self.models.get(s).unwrap_or(&ZERO)
    }

    pub fn horizon(&self) -> usize {
        self.models.len()
    }

    /// Writes `stage_{s}.vmck` for `s = 1..=T`.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for (s, m) in self.models.iter().enumerate() {
            let path = dir.join(checkpoint_name(s + 1));
            m.save(s + 1, &path)?;
            paths.push(path);
        }
        Ok(paths)
    }

    pub fn load(dir: &Path, horizon: usize) -> Result<Self> {
        let mut models = Vec::with_capacity(horizon);
        for s in 1..=horizon {
            let path = dir.join(checkpoint_name(s));
            if !path.exists() {
                return Err(Error::Checkpoint(format!("missing {}", path.display())));
            }
            let (m, stage) = ValueModel::load(&path)?;
            if stage != s {
                return Err(Error::Checkpoint(format!(
                    "{} declares stage {stage}",
                    path.display()
                )));
            }
            models.push(m);
        }
        Ok(Self {
            models,
            reports: Vec::new(),
        })
    }
}

pub fn stage_polytope(instance: &Instance, x: &FleetState, kind: TrainPolytope, slack: GammaPrimeSlack) -> ActionPolytope {
    match kind {
        TrainPolytope::Gamma => gamma(&instance.menu, &instance.layout, x),
        TrainPolytope::GammaPrime => gamma_prime(&instance.menu, &instance.layout, x, slack),
    }
}

/// Draws `k` arrival vectors for slot `t` from one stream.
pub fn draw_samples(arrivals: &ArrivalModel, t: usize, k: usize, factory: &StreamFactory, purpose: &str, a: u64) -> Vec<ArrivalVector> {
    let mut rng = factory.stream(purpose, a, t as u64);
    (0..k).map(|_| arrivals.sample(t, &mut rng)).collect()
}

/// Trains one model per slot, from the last slot back to the first.
pub fn train(
    instance: &Instance,
    arrivals: &ArrivalModel,
    cfg: &TrainConfig,
    inner: &InnerSolverConfig,
    factory: &StreamFactory,
) -> Result<TrainedModels> {
    cfg.validate()?;
    inner.validate()?;
    let horizon = instance.horizon();
    let mut models: Vec<ValueModel> = vec![ValueModel::Zero; horizon];
    let mut reports = Vec::with_capacity(horizon);
    for s in (0..horizon).rev() {
        let started = Instant::now();
        let bx = instance.state_box(arrivals, s);
        let (states, redraws) = sample_feasible_states(instance, &bx, cfg, factory, s)?;
        let samples = draw_samples(arrivals, s + 1, cfg.k, factory, "train_noise", 0);
        let next: &ValueModel = if s + 1 < horizon { &models[s + 1] } else { &ValueModel::Zero };
        let sp = StageProblem {
            layout: &instance.layout,
            slot: s,
            costs: instance.costs.row(s),
            next,
            samples: &samples,
            d_next: instance.bounds_at(s + 1),
        };
        let solved: Vec<(f64, bool)> = states
            .par_iter()
            .enumerate()
            .map(|(j, x)| {
                let p = stage_polytope(instance, x, cfg.polytope, cfg.slack);
                empirical_bellman(&sp, x, &p, inner)
                    .map(|sol| (sol.value, sol.converged))
                    .map_err(|e| Error::Training {
                        stage: s + 1,
                        state: j,
                        source: Box::new(e),
                    })
            })
            .collect::<Result<_>>()?;
        let data = FitDataset {
            targets: solved.iter().map(|(v, _)| *v).collect(),
            states,
        };
        let mut rng = factory.stream("mlp_init", s as u64, 0);
        let model = fit(&cfg.regressor, &instance.menu, &instance.layout, &bx, &data, &mut rng).map_err(|e| {
            Error::Training {
                stage: s + 1,
                state: 0,
                source: Box::new(e),
            }
        })?;
        let fit_mse = data
            .states
            .iter()
            .zip(&data.targets)
            .map(|(x, t)| (model.value(x) - t).powi(2))
            .sum::<f64>()
            / data.targets.len() as f64;
        models[s] = model;
        reports.push(StageReport {
            stage: s + 1,
            seconds: started.elapsed().as_secs_f64(),
            redraws,
            unconverged: solved.iter().filter(|(_, c)| !c).count(),
            fit_mse,
        });
    }
    reports.reverse();
    Ok(TrainedModels { models, reports })
}

fn sample_feasible_states(
    instance: &Instance,
    bx: &StateBox,
    cfg: &TrainConfig,
    factory: &StreamFactory,
    s: usize,
) -> Result<(Vec<FleetState>, usize)> {
    let mut rng = factory.stream("train_states", s as u64, 0);
    let mut out = Vec::with_capacity(cfg.l);
    let mut redraws = 0;
    while out.len() < cfg.l {
        let mut tries = 0;
        loop {
            let x = sample_states(bx, 1, &mut rng).pop().expect("one state");
            if !stage_polytope(instance, &x, cfg.polytope, cfg.slack).is_empty() {
                out.push(x);
                break;
            }
            tries += 1;
            redraws += 1;
            if tries > cfg.max_redraws {
                return Err(Error::Training {
                    stage: s + 1,
                    state: out.len(),
                    source: Box::new(Error::InfeasibleStage {
                        slot: s + 1,
                        reason: format!("no state with a nonempty polytope in {tries} draws"),
                    }),
                });
            }
        }
    }
    Ok((out, redraws))
}

/// One sweep cell: a `(k, l, d)` triple under one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub k: usize,
    pub l: usize,
    pub d: usize,
    pub seed: u64,
    pub sup_error: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceSummary {
    pub k: usize,
    pub l: usize,
    pub d: usize,
    pub seeds: usize,
    pub median_error: f64,
    pub median_seconds: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median error and runtime per configuration, in first-seen order.
pub fn convergence_report(rows: &[ConvergenceRow]) -> Vec<ConvergenceSummary> {
    let mut keys: Vec<(usize, usize, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.k, r.l, r.d)) {
            keys.push((r.k, r.l, r.d));
        }
    }
    keys.into_iter()
        .map(|(k, l, d)| {
            let cell: Vec<&ConvergenceRow> = rows.iter().filter(|r| (r.k, r.l, r.d) == (k, l, d)).collect();
            let mut errs: Vec<f64> = cell.iter().map(|r| r.sup_error).collect();
            let mut secs: Vec<f64> = cell.iter().map(|r| r.seconds).collect();
            ConvergenceSummary {
                k,
                l,
                d,
                seeds: cell.len(),
                median_error: median(&mut errs),
                median_seconds: median(&mut secs),
            }
        })
        .collect()
}

/// CSV with one row per seed followed by one `median` row per configuration.
pub fn write_convergence_csv<W: std::io::Write>(rows: &[ConvergenceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "l", "d", "seed", "sup_error", "seconds"])?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.l.to_string(),
            r.d.to_string(),
            r.seed.to_string(),
            r.sup_error.to_string(),
            r.seconds.to_string(),
        ])?;
    }
    for s in convergence_report(rows) {
        w.write_record([
            s.k.to_string(),
            s.l.to_string(),
            s.d.to_string(),
            "median".into(),
            s.median_error.to_string(),
            s.median_seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Largest `|v(x) - reference(x)|` over `states` where the reference is finite.
pub fn sup_error<A: ValueFunction + ?Sized, B: ValueFunction + ?Sized>(v: &A, reference: &B, states: &[FleetState]) -> f64 {
    states
        .iter()
        .filter_map(|x| {
            let r = reference.value(x);
            r.is_finite().then(|| (v.value(x) - r).abs())
        })
        .fold(0.0, f64::max)
}

/// Reproducibility record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub config_sha256: String,
    pub master_seed: u64,
    pub horizon: usize,
    pub k: usize,
    pub l: usize,
    #[serde(default)]
    pub stage_seconds: Vec<f64>,
    #[serde(default)]
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize, seed: u64, e: f64) -> ConvergenceRow {
        ConvergenceRow {
            k,
            l: 16,
            d: 8,
            seed,
            sup_error: e,
            seconds: 1.0,
        }
    }

    #[test]
    fn report_has_median_per_configuration() {
        let rows: Vec<_> = (0..5).map(|s| row(4, s, s as f64)).collect();
        let summary = convergence_report(&rows);
        assert_eq!(summary.len(), 1);
        assert_eq!(summary[0].median_error, 2.0);
        assert_eq!(summary[0].seeds, 5);
        let mut out = Vec::new();
        write_convergence_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + 5 + 1);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
