//! Engine configuration file.
//!
//! ```toml
//! [menu]
//! unit_kwh = 10.0
//! max_units = 3
//! max_window = 6
//! rate_kw = 10.0
//!
//! [prices]
//! horizon = 24
//! ranges = [{ from = 1, to = 24, cents = 0.0 }]
//!
//! [bounds]
//! upper = 10000.0
//!
//! [arrivals]
//! family = "poisson"
//! totals = [10.0, 10.0]
//! ```
//!
//! Unknown keys are rejected. Prices are given as 1-based inclusive slot
//! ranges and must cover every slot exactly once.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arrivals::{ArrivalModel, Family, ParamBox, Theta};
use crate::bellman::InnerSolverConfig;
use crate::dispatch::DispatchConfig;
use crate::error::{Error, Result};
use crate::fvi::TrainConfig;
use crate::instance::Instance;
use crate::model::{Bounds, Menu, MenuItem};
use crate::oracle::OracleConfig;
use crate::sim::PropertySuiteConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub menu: MenuSection,
    pub prices: PriceSection,
    pub bounds: BoundsSection,
    pub arrivals: ArrivalSection,
    #[serde(default)]
    pub fvi: TrainConfig,
    #[serde(default)]
    pub inner_solver: InnerSolverConfig,
    #[serde(default)]
    pub dispatch: DispatchConfig,
    #[serde(default)]
    pub seeds: SeedSection,
    #[serde(default)]
    pub experiments: ExperimentSection,
    #[serde(default)]
    pub oracle: OracleConfig,
}

/// Either an explicit item list or the feasible grid
/// `{unit, ..., max_units unit} x {1, ..., max_window}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MenuSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<Vec<MenuItem>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_kwh: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_units: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_window: Option<usize>,
    pub rate_kw: f64,
    #[serde(default = "one")]
    pub slot_hours: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceSection {
    pub horizon: usize,
    /// Clock hour at which slot 1 starts; only used for labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_hour: Option<usize>,
    pub ranges: Vec<PriceRange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceRange {
    pub from: usize,
    pub to: usize,
    /// Cents per kWh.
    pub cents: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    #[serde(default)]
    pub lower: f64,
    pub upper: f64,
}

/// Means come from `means` (`[slot][item]`) or from `totals` per slot split
/// by `item_weights` (uniform by default). Caps come from `caps`, a scalar
/// `cap`, or default to `ceil(mean + 5 sqrt(mean) + 2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalSection {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub means: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub totals: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caps: Option<Vec<Vec<u32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<u32>,
    /// Only for the empirical family: `[slot][item][count]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pmfs: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub theta: Theta,
    #[serde(default)]
    pub param_box: ParamBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSection {
    pub master: u64,
    pub paths: usize,
}

impl Default for SeedSection {
    fn default() -> Self {
        Self { master: 0, paths: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Gaussian variances for the robustness study.
    pub variances: Vec<f64>,
    /// Upper bounds for the bound stress study.
    pub upper_bounds: Vec<f64>,
    /// `(k, l, extras)` triples for the convergence sweep.
    pub sweep: Vec<(usize, usize, usize)>,
    pub sweep_seeds: u64,
    /// Random LinearBasis pairs for the nonexpansion check.
    pub nonexpansion_pairs: usize,
    pub nonexpansion_states: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            variances: vec![5.0, 10.0],
            upper_bounds: vec![10000.0, 8000.0, 6000.0],
            sweep: vec![(4, 16, 8), (16, 64, 16), (64, 256, 32)],
            sweep_seeds: 5,
            nonexpansion_pairs: 100,
            nonexpansion_states: 100,
        }
    }
}

fn config_error(what: impl Into<String>) -> Error {
    Error::Config(what.into())
}

impl Config {
    /// Parses and validates; errors carry the offending line or field.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => config_error(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let menu = self.menu()?;
        self.costs_per_slot()?;
        if !(self.bounds.lower >= 0.0 && self.bounds.lower <= self.bounds.upper) {
            return Err(config_error(format!(
                "bounds: [{}, {}] is not an interval in [0, inf)",
                self.bounds.lower, self.bounds.upper
            )));
        }
        self.fvi.validate()?;
        self.inner_solver.validate()?;
        if self.dispatch.k_forward == 0 {
            return Err(config_error("dispatch.k_forward must be at least 1"));
        }
        if self.oracle.resolution == 0 {
            return Err(config_error("oracle.resolution must be at least 1"));
        }
        if self.experiments.upper_bounds.iter().any(|&u| !(u >= self.bounds.lower)) {
            return Err(config_error("experiments.upper_bounds must not fall below bounds.lower"));
        }
        self.arrival_model(&menu)?;
        Ok(())
    }

    pub fn menu(&self) -> Result<Menu> {
        let m = &self.menu;
        match (&m.items, m.unit_kwh, m.max_units, m.max_window) {
            (Some(items), None, None, None) => Menu::new(items.clone(), m.rate_kw, m.slot_hours),
            (None, Some(unit), Some(units), Some(window)) => {
                Menu::feasible_grid(unit, units, window, m.rate_kw, m.slot_hours)
            }
            _ => Err(config_error(
                "menu: give either `items` or all of `unit_kwh`, `max_units`, `max_window`",
            )),
        }
    }

    /// Scalar price per slot, 0-based.
    pub fn costs_per_slot(&self) -> Result<Vec<f64>> {
        let p = &self.prices;
        if p.horizon == 0 {
            return Err(config_error("prices.horizon must be at least 1"));
        }
        let mut out: Vec<Option<f64>> = vec![None; p.horizon];
        for (i, r) in p.ranges.iter().enumerate() {
            if r.from == 0 || r.from > r.to || r.to > p.horizon {
                return Err(config_error(format!(
                    "prices.ranges[{i}]: slots {}..={} outside 1..={}",
                    r.from, r.to, p.horizon
                )));
            }
            if !r.cents.is_finite() {
                return Err(config_error(format!("prices.ranges[{i}]: price must be finite")));
            }
            for slot in r.from..=r.to {
                if out[slot - 1].replace(r.cents).is_some() {
                    return Err(config_error(format!("prices.ranges[{i}]: slot {slot} priced twice")));
                }
            }
        }
        out.iter()
            .enumerate()
            .map(|(s, c)| c.ok_or_else(|| config_error(format!("prices: slot {} has no price", s + 1))))
            .collect()
    }

    /// Property suite settings with a 5% convergence threshold.
    pub fn property_suite(&self) -> PropertySuiteConfig {
        PropertySuiteConfig {
            oracle: self.oracle,
            inner: self.inner_solver,
            sweep: self.experiments.sweep.clone(),
            sweep_seeds: self.experiments.sweep_seeds,
            nonexpansion_pairs: self.experiments.nonexpansion_pairs,
            nonexpansion_states: self.experiments.nonexpansion_states,
            convergence_threshold: 0.05,
            master_seed: self.seeds.master,
        }
    }

    pub fn instance(&self) -> Result<Instance> {
        let menu = self.menu()?;
        Instance::uniform(
            menu,
            &self.costs_per_slot()?,
            Bounds::new(self.bounds.lower, self.bounds.upper),
        )
    }

    pub fn arrival_model(&self, menu: &Menu) -> Result<ArrivalModel> {
        let a = &self.arrivals;
        let horizon = self.prices.horizon;
        let n_items = menu.len();
        let check_rows = |what: &str, rows: usize, cols: Option<usize>| -> Result<()> {
            if rows != horizon {
                return Err(config_error(format!("arrivals.{what}: {rows} rows for {horizon} slots")));
            }
            if let Some(c) = cols {
                if c != n_items {
                    return Err(config_error(format!(
                        "arrivals.{what}: rows need {n_items} entries, one per menu item"
                    )));
                }
            }
            Ok(())
        };

        let caps_for = |means: &[Vec<f64>]| -> Result<Vec<Vec<u32>>> {
            match (&a.caps, a.cap) {
                (Some(_), Some(_)) => Err(config_error("arrivals: give `caps` or `cap`, not both")),
                (Some(caps), None) => {
                    check_rows("caps", caps.len(), None)?;
                    for row in caps {
                        check_rows("caps", horizon, Some(row.len()))?;
                    }
                    Ok(caps.clone())
                }
                (None, Some(c)) => Ok(vec![vec![c; n_items]; horizon]),
                (None, None) => Ok(means
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|&l| (l + 5.0 * l.sqrt() + 2.0).ceil() as u32)
                            .collect()
                    })
                    .collect()),
            }
        };

        if a.family == Family::Empirical {
            let pmfs = a
                .pmfs
                .clone()
                .ok_or_else(|| config_error("arrivals: the empirical family needs `pmfs`"))?;
            check_rows("pmfs", pmfs.len(), None)?;
            for row in &pmfs {
                check_rows("pmfs", horizon, Some(row.len()))?;
            }
            let support: Vec<Vec<u32>> = pmfs
                .iter()
                .map(|row| row.iter().map(|p| p.len().saturating_sub(1) as u32).collect())
                .collect();
            let caps = match (&a.caps, a.cap) {
                (None, None) => support,
                _ => caps_for(&[])?,
            };
            return ArrivalModel::empirical(menu, pmfs, caps);
        }
        if a.pmfs.is_some() {
            return Err(config_error("arrivals.pmfs is only valid for the empirical family"));
        }
        let means = match (&a.means, &a.totals) {
            (Some(m), None) => {
                if a.item_weights.is_some() {
                    return Err(config_error("arrivals.item_weights only applies to `totals`"));
                }
                check_rows("means", m.len(), None)?;
                for row in m {
                    check_rows("means", horizon, Some(row.len()))?;
                }
                m.clone()
            }
            (None, Some(totals)) => {
                check_rows("totals", totals.len(), None)?;
                let weights = a.item_weights.clone().unwrap_or_else(|| vec![1.0; n_items]);
                if weights.len() != n_items || weights.iter().any(|w| !(*w >= 0.0)) {
                    return Err(config_error(format!(
                        "arrivals.item_weights: need {n_items} nonnegative entries"
                    )));
                }
                let sum: f64 = weights.iter().sum();
                if !(sum > 0.0) {
                    return Err(config_error("arrivals.item_weights must not all be zero"));
                }
                totals
                    .iter()
                    .map(|t| weights.iter().map(|w| t * w / sum).collect())
                    .collect()
            }
            _ => return Err(config_error("arrivals: give exactly one of `means` or `totals`")),
        };
        let caps = caps_for(&means)?;
        ArrivalModel::new(menu, a.family, means, caps, a.theta, a.param_box)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
[menu]
items = [{ energy_kwh = 1.0, window = 1 }, { energy_kwh = 1.0, window = 2 }]
rate_kw = 1.0

[prices]
horizon = 3
ranges = [{ from = 1, to = 2, cents = -1.0 }, { from = 3, to = 3, cents = 0.0 }]

[bounds]
upper = 100.0

[arrivals]
family = "poisson"
totals = [1.0, 1.0, 1.0]
cap = 2
"#;

    #[test]
    fn round_trip_is_identity() {
        let cfg = Config::parse(SMALL).unwrap();
        let again = Config::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = SMALL.replace("rate_kw = 1.0", "rate_kw = 1.0\nrate_kwh = 2.0");
        let err = Config::parse(&text).unwrap_err().to_string();
        assert!(err.contains("rate_kwh"), "{err}");
    }

    #[test]
    fn uncovered_slot_is_rejected() {
        let text = SMALL.replace("{ from = 3, to = 3, cents = 0.0 }", "");
        let text = text.replace("cents = -1.0 }, ]", "cents = -1.0 }]");
        let err = Config::parse(&text).unwrap_err().to_string();
        assert!(err.contains("slot 3"), "{err}");
    }

    #[test]
    fn builds_instance_and_law() {
        let cfg = Config::parse(SMALL).unwrap();
        let inst = cfg.instance().unwrap();
        assert_eq!(inst.horizon(), 3);
        assert_eq!(inst.costs.row(0)[0], -1.0);
        let law = cfg.arrival_model(&inst.menu).unwrap();
        assert_eq!(law.mean(0, 0) + law.mean(0, 1) > 0.0, true);
        assert_eq!(law.cap(0, 1), 2);
    }
}
