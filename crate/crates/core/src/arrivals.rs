//! Parameterized arrival laws per slot and menu item.
//!
//! Each `(slot, item)` count is an independent bounded integer variable on
//! `{0, ..., cap}`. Probability mass beyond the cap is moved onto the cap;
//! Gaussian draws are rounded to the nearest integer and clamped to
//! `[0, cap]`. Cohorts whose window would extend past the horizon are never
//! offered, so their cap is zero.
//!
//! Sampling inverts the exact cumulative pmf, so empirical frequencies and
//! [`ArrivalModel::pmf`] describe the same law.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{ArrivalVector, Menu};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Poisson,
    Gaussian,
    Deterministic,
    Empirical,
}

/// Perturbation parameters: a multiplier on every mean and the Gaussian variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theta {
    pub mean_scale: f64,
    pub variance: f64,
}

impl Default for Theta {
    fn default() -> Self {
        Self {
            mean_scale: 1.0,
            variance: 5.0,
        }
    }
}

/// Compact box of admissible parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBox {
    pub mean_scale: (f64, f64),
    pub variance: (f64, f64),
}

impl Default for ParamBox {
    fn default() -> Self {
        Self {
            mean_scale: (0.5, 2.0),
            variance: (0.0, 50.0),
        }
    }
}

impl ParamBox {
    pub fn check(&self, theta: &Theta) -> Result<()> {
        let within = |name, v: f64, (lo, hi): (f64, f64)| {
            if v.is_finite() && v >= lo && v <= hi {
                Ok(())
            } else {
                Err(Error::ParameterOutOfBox { name, value: v, lo, hi })
            }
        };
        within("mean_scale", theta.mean_scale, self.mean_scale)?;
        within("variance", theta.variance, self.variance)
    }
}

/// Arrival law for every slot of the horizon and every menu item.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalModel {
    family: Family,
    base_means: Vec<Vec<f64>>,
    caps: Vec<Vec<u32>>,
    /// Only for [`Family::Empirical`]: one base pmf per slot and item.
    empirical: Option<Vec<Vec<Vec<f64>>>>,
    theta: Theta,
    param_box: ParamBox,
    pmfs: Vec<Vec<Vec<f64>>>,
    cdfs: Vec<Vec<Vec<f64>>>,
}

impl ArrivalModel {
    /// Builds a model from per-slot, per-item means and caps (`[slot][item]`).
    pub fn new(
        menu: &Menu,
        family: Family,
        base_means: Vec<Vec<f64>>,
        caps: Vec<Vec<u32>>,
        theta: Theta,
        param_box: ParamBox,
    ) -> Result<Self> {
        if family == Family::Empirical {
            return Err(Error::Config(
                "empirical arrival laws are built with ArrivalModel::empirical".into(),
            ));
        }
        Self::build(menu, family, base_means, caps, None, theta, param_box)
    }

    /// Explicit pmfs (`[slot][item][count]`); mass beyond the cap moves to the cap.
    pub fn empirical(menu: &Menu, pmfs: Vec<Vec<Vec<f64>>>, caps: Vec<Vec<u32>>) -> Result<Self> {
        let means = pmfs
            .iter()
            .map(|row| {
                row.iter()
                    .map(|p| p.iter().enumerate().map(|(k, q)| k as f64 * q).sum())
                    .collect()
            })
            .collect();
        Self::build(
            menu,
            Family::Empirical,
            means,
            caps,
            Some(pmfs),
            Theta {
                mean_scale: 1.0,
                variance: 0.0,
            },
            ParamBox::default(),
        )
    }

    /// No arrivals at all.
    pub fn none(menu: &Menu, horizon: usize) -> Self {
        Self::new(
            menu,
            Family::Deterministic,
            vec![vec![0.0; menu.len()]; horizon],
            vec![vec![0; menu.len()]; horizon],
            Theta::default(),
            ParamBox::default(),
        )
        .expect("zero model is valid")
    }

    fn build(
        menu: &Menu,
        family: Family,
        base_means: Vec<Vec<f64>>,
        mut caps: Vec<Vec<u32>>,
        empirical: Option<Vec<Vec<Vec<f64>>>>,
        theta: Theta,
        param_box: ParamBox,
    ) -> Result<Self> {
        let horizon = base_means.len();
        if caps.len() != horizon {
            return Err(Error::DimensionMismatch {
                what: "arrival caps (slots)",
                expected: horizon,
                got: caps.len(),
            });
        }
        for (t, (means, cap_row)) in base_means.iter().zip(caps.iter_mut()).enumerate() {
            if means.len() != menu.len() || cap_row.len() != menu.len() {
                return Err(Error::DimensionMismatch {
                    what: "arrival means/caps (items)",
                    expected: menu.len(),
                    got: means.len().min(cap_row.len()),
                });
            }
            for (i, item) in menu.items().iter().enumerate() {
                if !(means[i] >= 0.0 && means[i].is_finite()) {
                    return Err(Error::Config(format!(
                        "arrival mean at slot {} item {} must be finite and nonnegative",
                        t + 1,
                        i
                    )));
                }
                if t + item.window > horizon {
                    cap_row[i] = 0;
                }
            }
        }
        param_box.check(&theta)?;
        let mut model = Self {
            family,
            base_means,
            caps,
            empirical,
            theta,
            param_box,
            pmfs: Vec::new(),
            cdfs: Vec::new(),
        };
        model.tabulate();
        Ok(model)
    }

    fn tabulate(&mut self) {
        let mut pmfs = Vec::with_capacity(self.horizon());
        for t in 0..self.horizon() {
            let row: Vec<Vec<f64>> = (0..self.n_items())
                .map(|i| self.item_pmf(t, i))
                .collect();
            pmfs.push(row);
        }
        self.cdfs = pmfs
            .iter()
            .map(|row| {
                row.iter()
                    .map(|p| {
                        let mut acc = 0.0;
                        let mut c: Vec<f64> = p
                            .iter()
                            .map(|q| {
                                acc += q;
                                acc
                            })
                            .collect();
                        if let Some(last) = c.last_mut() {
                            *last = 1.0;
                        }
                        c
                    })
                    .collect()
            })
            .collect();
        self.pmfs = pmfs;
    }

    fn item_pmf(&self, t: usize, i: usize) -> Vec<f64> {
        let cap = self.caps[t][i] as usize;
        let mean = self.base_means[t][i] * self.theta.mean_scale;
        let mut p = match self.family {
            Family::Poisson => poisson_pmf(mean, cap),
            Family::Gaussian => rounded_gaussian_pmf(mean, self.theta.variance, cap),
            Family::Deterministic => point_mass(mean.round() as usize, cap),
            Family::Empirical => {
                let base = &self.empirical.as_ref().expect("empirical pmfs")[t][i];
                fold_onto_cap(base, cap)
            }
        };
        normalize(&mut p);
        p
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn horizon(&self) -> usize {
        self.base_means.len()
    }

    pub fn n_items(&self) -> usize {
        self.caps.first().map_or(0, |r| r.len())
    }

    pub fn theta(&self) -> Theta {
        self.theta
    }

    pub fn param_box(&self) -> ParamBox {
        self.param_box
    }

    /// Effective cap for arrivals at slot `t`, zero outside the horizon.
    pub fn cap(&self, t: usize, item: usize) -> u32 {
        self.caps.get(t).map_or(0, |r| r[item])
    }

    pub fn caps(&self) -> &[Vec<u32>] {
        &self.caps
    }

    pub fn base_means(&self) -> &[Vec<f64>] {
        &self.base_means
    }

    /// Exact pmf per item at slot `t`, supported on `0..=cap`.
    pub fn pmf(&self, t: usize) -> &[Vec<f64>] {
        &self.pmfs[t]
    }

    /// Mean of the truncated law.
    pub fn mean(&self, t: usize, item: usize) -> f64 {
        self.pmfs[t][item]
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum()
    }

    /// Expected arrival energy at slot `t`.
    pub fn expected_energy(&self, menu: &Menu, t: usize) -> f64 {
        menu.items()
            .iter()
            .enumerate()
            .map(|(i, item)| item.energy_kwh * self.mean(t, i))
            .sum()
    }

    /// One independent draw per item at slot `t`. Slots past the horizon
    /// have no arrivals.
    pub fn sample<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> ArrivalVector {
        if t >= self.horizon() {
            return ArrivalVector::zeros(self.n_items());
        }
        ArrivalVector(
            self.cdfs[t]
                .iter()
                .map(|cdf| {
                    if cdf.len() == 1 {
                        return 0;
                    }
                    let u: f64 = rng.gen();
                    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1) as u32
                })
                .collect(),
        )
    }

    /// The same model at parameters `theta`.
    pub fn perturb(&self, theta: Theta) -> Result<Self> {
        self.param_box.check(&theta)?;
        let mut next = self.clone();
        next.theta = theta;
        next.tabulate();
        Ok(next)
    }

    /// Same means and caps under another family.
    pub fn with_family(&self, family: Family) -> Result<Self> {
        if family == Family::Empirical {
            return Err(Error::Config("cannot switch into the empirical family".into()));
        }
        let mut next = self.clone();
        next.family = family;
        next.empirical = None;
        next.tabulate();
        Ok(next)
    }

    /// Union bound on the total-variation distance between the joint laws of
    /// two models at slot `t` (sum of per-item distances).
    pub fn tv_distance(&self, other: &ArrivalModel, t: usize) -> f64 {
        self.pmfs[t]
            .iter()
            .zip(&other.pmfs[t])
            .map(|(p, q)| total_variation(p, q))
            .sum()
    }
}

/// Total-variation distance between two pmfs on `{0, 1, ...}`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n)
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

fn poisson_pmf(mean: f64, cap: usize) -> Vec<f64> {
    if mean <= 0.0 || cap == 0 {
        return point_mass(0, cap);
    }
    let mut p = vec![0.0; cap + 1];
    let log_mean = mean.ln();
    let mut head = 0.0;
    for (k, slot) in p.iter_mut().enumerate().take(cap) {
        *slot = (-mean + k as f64 * log_mean - ln_gamma(k as f64 + 1.0)).exp();
        head += *slot;
    }
    p[cap] = (1.0 - head).max(0.0);
    p
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn rounded_gaussian_pmf(mean: f64, variance: f64, cap: usize) -> Vec<f64> {
    if variance <= 0.0 {
        return point_mass(mean.round().max(0.0) as usize, cap);
    }
    if cap == 0 {
        return vec![1.0];
    }
    let sd = variance.sqrt();
    let cdf = |x: f64| std_normal_cdf((x - mean) / sd);
    let mut p = vec![0.0; cap + 1];
    p[0] = cdf(0.5);
    for (k, slot) in p.iter_mut().enumerate().take(cap).skip(1) {
        *slot = cdf(k as f64 + 0.5) - cdf(k as f64 - 0.5);
    }
    p[cap] = 1.0 - cdf(cap as f64 - 0.5);
    p
}

fn point_mass(k: usize, cap: usize) -> Vec<f64> {
    let mut p = vec![0.0; cap + 1];
    p[k.min(cap)] = 1.0;
    p
}

fn fold_onto_cap(base: &[f64], cap: usize) -> Vec<f64> {
    let mut p = vec![0.0; cap + 1];
    for (k, q) in base.iter().enumerate() {
        p[k.min(cap)] += q.max(0.0);
    }
    p
}

fn normalize(p: &mut [f64]) {
    let total: f64 = p.iter().sum();
    if total > 0.0 {
        p.iter_mut().for_each(|q| *q /= total);
    } else if let Some(first) = p.first_mut() {
        *first = 1.0;
    }
}
