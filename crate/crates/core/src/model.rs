//! Service menu, category layout, fleet state and the exact state dynamics.
//!
//! EVs are aggregated into cohorts keyed by `(arrival slot, energy, window)`.
//! A cohort present at slot `s` sits in block `delta = t + n - 1 - s` of the
//! padded layout, i.e. blocks are ordered by how many slots remain until the
//! cohort departs. Block 0 holds cohorts that must be fully served in the
//! current slot. Every block reserves one position per menu item; positions
//! whose item window is too short to ever reach that block are structural
//! zeros.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative floor under which a negative residual is treated as rounding.
pub const RESIDUAL_TOLERANCE: f64 = 1e-9;

/// One service contract: deliver `energy_kwh` within `window` slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MenuItem {
    pub energy_kwh: f64,
    pub window: usize,
}

/// The service menu offered to arriving EVs, plus the common charging rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Menu {
    items: Vec<MenuItem>,
    rate_kw: f64,
    slot_hours: f64,
    max_window: usize,
}

impl Menu {
    /// Builds a menu, ordering items by window then energy.
    ///
    /// Every item must be chargeable within its window at the common rate.
    pub fn new(mut items: Vec<MenuItem>, rate_kw: f64, slot_hours: f64) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidMenu("menu has no items".into()));
        }
        if !(rate_kw > 0.0 && rate_kw.is_finite()) {
            return Err(Error::InvalidMenu(format!("rate must be positive, got {rate_kw}")));
        }
        if !(slot_hours > 0.0 && slot_hours.is_finite()) {
            return Err(Error::InvalidMenu(format!(
                "slot length must be positive, got {slot_hours}"
            )));
        }
        for item in &items {
            if item.window == 0 {
                return Err(Error::InvalidMenu("item window must be at least one slot".into()));
            }
            if !(item.energy_kwh > 0.0 && item.energy_kwh.is_finite()) {
                return Err(Error::InvalidMenu(format!(
                    "item energy must be positive, got {}",
                    item.energy_kwh
                )));
            }
            let reachable = rate_kw * slot_hours * item.window as f64;
            if item.energy_kwh > reachable * (1.0 + 1e-12) {
                return Err(Error::InvalidMenu(format!(
                    "item ({} kWh, {} slots) needs more than {} kWh reachable at {} kW",
                    item.energy_kwh, item.window, reachable, rate_kw
                )));
            }
        }
        items.sort_by(|a, b| {
            a.window
                .cmp(&b.window)
                .then(a.energy_kwh.total_cmp(&b.energy_kwh))
        });
        for pair in items.windows(2) {
            if pair[0] == pair[1] {
                return Err(Error::InvalidMenu(format!(
                    "duplicate item ({} kWh, {} slots)",
                    pair[0].energy_kwh, pair[0].window
                )));
            }
        }
        let max_window = items.iter().map(|i| i.window).max().unwrap_or(1);
        Ok(Self {
            items,
            rate_kw,
            slot_hours,
            max_window,
        })
    }

    /// Every `(m, n)` with `m` in `unit, 2 unit, ..., max_units unit` and `n` in
    /// `1..=max_window` that can be charged within its window.
    pub fn feasible_grid(
        unit_kwh: f64,
        max_units: usize,
        max_window: usize,
        rate_kw: f64,
        slot_hours: f64,
    ) -> Result<Self> {
        let mut items = Vec::new();
        for n in 1..=max_window {
            for units in 1..=max_units {
                let energy_kwh = unit_kwh * units as f64;
                if energy_kwh <= rate_kw * slot_hours * n as f64 * (1.0 + 1e-12) {
                    items.push(MenuItem {
                        energy_kwh,
                        window: n,
                    });
                }
            }
        }
        Self::new(items, rate_kw, slot_hours)
    }

    /// The 15-item menu with 10 kWh units, up to 30 kWh and 6 one-hour slots at 10 kW.
    pub fn table2() -> Self {
        Self::feasible_grid(10.0, 3, 6, 10.0, 1.0).expect("static menu is valid")
    }

    pub fn items(&self) -> &[MenuItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn rate_kw(&self) -> f64 {
        self.rate_kw
    }

    pub fn slot_hours(&self) -> f64 {
        self.slot_hours
    }

    /// Energy one EV can take in one slot.
    pub fn per_ev_slot_energy(&self) -> f64 {
        self.rate_kw * self.slot_hours
    }

    pub fn max_window(&self) -> usize {
        self.max_window
    }

    pub fn max_energy_kwh(&self) -> f64 {
        self.items
            .iter()
            .map(|i| i.energy_kwh)
            .fold(0.0, f64::max)
    }

    /// Energies offered with window `n`.
    pub fn energies_with_window(&self, n: usize) -> Vec<f64> {
        self.items
            .iter()
            .filter(|i| i.window == n)
            .map(|i| i.energy_kwh)
            .collect()
    }
}

/// A cohort: EVs arriving at `arrival` (0-based slot) that chose menu item `item`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CategoryId {
    pub arrival: usize,
    pub item: usize,
}

impl CategoryId {
    /// Last slot in which the cohort is connected.
    pub fn departure(&self, menu: &Menu) -> usize {
        self.arrival + menu.items()[self.item].window - 1
    }

    /// Whether the cohort is connected at slot `s`.
    pub fn present_at(&self, menu: &Menu, s: usize) -> bool {
        self.arrival <= s && s <= self.departure(menu)
    }

    /// Layout slot occupied by this cohort at slot `s`, if present.
    pub fn layout_slot(&self, layout: &BlockLayout, menu: &Menu, s: usize) -> Option<usize> {
        if !self.present_at(menu, s) {
            return None;
        }
        Some(layout.slot(self.departure(menu) - s, self.item))
    }
}

/// Padded, time-invariant ordering of cohorts by remaining slots.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    n_items: usize,
    n_blocks: usize,
    windows: Vec<usize>,
    energies: Vec<f64>,
    active: Vec<bool>,
}

impl BlockLayout {
    pub fn new(menu: &Menu) -> Self {
        let n_items = menu.len();
        let n_blocks = menu.max_window();
        let windows: Vec<usize> = menu.items().iter().map(|i| i.window).collect();
        let energies: Vec<f64> = menu.items().iter().map(|i| i.energy_kwh).collect();
        let mut active = vec![false; n_items * n_blocks];
        for delta in 0..n_blocks {
            for (item, &n) in windows.iter().enumerate() {
                active[delta * n_items + item] = n > delta;
            }
        }
        Self {
            n_items,
            n_blocks,
            windows,
            energies,
            active,
        }
    }

    /// Padded dimension `N * |menu|` of `y`, `z` and `u`.
    pub fn dim(&self) -> usize {
        self.n_items * self.n_blocks
    }

    /// Dimension of the full state `[y, z, d]`.
    pub fn state_dim(&self) -> usize {
        2 * self.dim() + 2
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn slot(&self, delta: usize, item: usize) -> usize {
        debug_assert!(delta < self.n_blocks && item < self.n_items);
        delta * self.n_items + item
    }

    pub fn delta(&self, slot: usize) -> usize {
        slot / self.n_items
    }

    pub fn item(&self, slot: usize) -> usize {
        slot % self.n_items
    }

    pub fn is_active(&self, slot: usize) -> bool {
        self.active[slot]
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    /// Active slots in layout order.
    pub fn active_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim()).filter(move |&j| self.active[j])
    }

    /// Active slot whose cohort departs after the current slot.
    pub fn is_departing(&self, slot: usize) -> bool {
        self.active[slot] && self.delta(slot) == 0
    }

    pub fn energy(&self, slot: usize) -> f64 {
        self.energies[self.item(slot)]
    }

    pub fn window(&self, slot: usize) -> usize {
        self.windows[self.item(slot)]
    }

    /// Slot where newly arrived EVs choosing `item` enter.
    pub fn injection_slot(&self, item: usize) -> usize {
        self.slot(self.windows[item] - 1, item)
    }

    /// Arrival slot of the cohort sitting at `slot` at time `s`, or `None`
    /// when that cohort would have arrived before the horizon start.
    pub fn arrival_of(&self, slot: usize, s: usize) -> Option<usize> {
        if !self.active[slot] {
            return None;
        }
        let ahead = s + self.delta(slot) + 1;
        ahead.checked_sub(self.window(slot))
    }

    /// Category of the cohort sitting at `slot` at time `s`.
    pub fn category_of(&self, slot: usize, s: usize) -> Option<CategoryId> {
        self.arrival_of(slot, s).map(|arrival| CategoryId {
            arrival,
            item: self.item(slot),
        })
    }
}

/// Aggregate per-slot bounds `(d1, d2)` on total allocated energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn ample() -> Self {
        Self {
            lower: 0.0,
            upper: f64::INFINITY,
        }
    }
}

/// Aggregated fleet state `x = [y, z, d]` in the padded layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetState {
    pub y: Vec<u32>,
    pub z: Vec<f64>,
    pub d: Bounds,
}

impl FleetState {
    pub fn empty(layout: &BlockLayout, d: Bounds) -> Self {
        Self {
            y: vec![0; layout.dim()],
            z: vec![0.0; layout.dim()],
            d,
        }
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    pub fn total_residual(&self) -> f64 {
        self.z.iter().sum()
    }

    /// Flattened `[y, z, d1, d2]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.dim() + 2);
        v.extend(self.y.iter().map(|&y| y as f64));
        v.extend_from_slice(&self.z);
        v.push(self.d.lower);
        v.push(self.d.upper);
        v
    }

    /// Sup-norm distance between two states of the same layout.
    pub fn sup_distance(&self, other: &FleetState) -> f64 {
        let dy = self
            .y
            .iter()
            .zip(&other.y)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .fold(0.0, f64::max);
        let dz = self
            .z
            .iter()
            .zip(&other.z)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let dd = (self.d.lower - other.d.lower)
            .abs()
            .max(finite_gap(self.d.upper, other.d.upper));
        dy.max(dz).max(dd)
    }

    /// Checks the structural, residual and bound invariants.
    pub fn validate(&self, layout: &BlockLayout) -> Result<()> {
        check_dim("state y", layout.dim(), self.y.len())?;
        check_dim("state z", layout.dim(), self.z.len())?;
        for j in 0..layout.dim() {
            if !layout.is_active(j) && (self.y[j] != 0 || self.z[j] != 0.0) {
                return Err(Error::InvalidMenu(format!(
                    "structural zero slot {j} carries a cohort"
                )));
            }
            let cap = layout.energy(j) * self.y[j] as f64;
            if self.z[j] < -RESIDUAL_TOLERANCE || self.z[j] > cap + RESIDUAL_TOLERANCE * cap.max(1.0) {
                return Err(Error::NegativeResidual {
                    slot: j,
                    value: self.z[j],
                });
            }
        }
        Ok(())
    }
}

fn finite_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

/// New arrivals at one slot, one count per menu item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalVector(pub Vec<u32>);

impl ArrivalVector {
    pub fn zeros(n_items: usize) -> Self {
        Self(vec![0; n_items])
    }

    /// Total energy demanded by these arrivals.
    pub fn energy(&self, menu: &Menu) -> f64 {
        self.0
            .iter()
            .zip(menu.items())
            .map(|(&w, item)| w as f64 * item.energy_kwh)
            .sum()
    }

    pub fn count(&self) -> u64 {
        self.0.iter().map(|&w| w as u64).sum()
    }
}

/// Energy allocated per layout slot in one time slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationVector(pub Vec<f64>);

impl AllocationVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Marginal cost per kWh for every slot and layout position.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSchedule {
    rows: Vec<Vec<f64>>,
}

impl CostSchedule {
    /// One scalar cost per slot applied to every active layout position.
    pub fn uniform(per_slot: &[f64], layout: &BlockLayout) -> Self {
        let rows = per_slot
            .iter()
            .map(|&c| {
                (0..layout.dim())
                    .map(|j| if layout.is_active(j) { c } else { 0.0 })
                    .collect()
            })
            .collect();
        Self { rows }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    pub fn horizon(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.rows[s]
    }

    /// One-norm of the cost row, the Lipschitz constant of `u -> c_s . u`.
    pub fn l1_norm(&self, s: usize) -> f64 {
        self.rows[s].iter().map(|c| c.abs()).sum()
    }
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// Exact state transition `x_{s+1} = f(x_s, u_s, w, d_{s+1})`.
///
/// Blocks shift down by one, the departing block drops out, and arrivals
/// enter at `delta = n - 1` with `y += w` and `z += m w`.
pub fn transition(
    layout: &BlockLayout,
    x: &FleetState,
    u: &AllocationVector,
    w: &ArrivalVector,
    d_next: Bounds,
) -> Result<FleetState> {
    let dim = layout.dim();
    check_dim("state", dim, x.z.len())?;
    check_dim("allocation", dim, u.0.len())?;
    check_dim("arrivals", layout.n_items(), w.0.len())?;
    let k = layout.n_items();
    let mut y = vec![0u32; dim];
    let mut z = vec![0.0; dim];
    for j in k..dim {
        if !layout.is_active(j) {
            continue;
        }
        let mut residual = x.z[j] - u.0[j];
        let scale = x.z[j].abs().max(1.0);
        if residual < 0.0 {
            if residual < -RESIDUAL_TOLERANCE * scale {
                return Err(Error::NegativeResidual {
                    slot: j,
                    value: residual,
                });
            }
            residual = 0.0;
        }
        y[j - k] = x.y[j];
        z[j - k] = residual;
    }
    for (item, &count) in w.0.iter().enumerate() {
        let j = layout.injection_slot(item);
        y[j] += count;
        z[j] += layout.energy(j) * count as f64;
    }
    Ok(FleetState { y, z, d: d_next })
}

/// Stage cost `c_s . u`.
pub fn stage_cost(costs: &CostSchedule, s: usize, u: &AllocationVector) -> f64 {
    costs
        .row(s)
        .iter()
        .zip(&u.0)
        .map(|(c, u)| c * u)
        .sum()
}

/// Partial order on states: `y <= y'`, equal residuals on departing cohorts,
/// `z <= z'` on the rest, and `d <= d'`.
pub fn partial_order_leq(layout: &BlockLayout, x: &FleetState, other: &FleetState) -> bool {
    if x.y.iter().zip(&other.y).any(|(a, b)| a > b) {
        return false;
    }
    for j in 0..layout.dim() {
        if layout.delta(j) == 0 {
            if x.z[j] != other.z[j] {
                return false;
            }
        } else if x.z[j] > other.z[j] {
            return false;
        }
    }
    x.d.lower <= other.d.lower && x.d.upper <= other.d.upper
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_item_menu() -> Menu {
        Menu::new(
            vec![
                MenuItem {
                    energy_kwh: 20.0,
                    window: 2,
                },
                MenuItem {
                    energy_kwh: 10.0,
                    window: 1,
                },
            ],
            10.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn table2_dimensions() {
        let menu = Menu::table2();
        assert_eq!(menu.len(), 15);
        let layout = BlockLayout::new(&menu);
        assert_eq!(layout.dim(), 90);
        assert_eq!(layout.state_dim(), 182);
        assert_eq!(layout.active_count(), 59);
    }

    #[test]
    fn single_item_layout() {
        let menu = Menu::new(
            vec![MenuItem {
                energy_kwh: 10.0,
                window: 1,
            }],
            10.0,
            1.0,
        )
        .unwrap();
        let layout = BlockLayout::new(&menu);
        assert_eq!(layout.dim(), 1);
        assert_eq!(layout.active_count(), 1);
    }

    #[test]
    fn three_item_layout_counts_active_by_window() {
        let items = [(1.0, 1), (1.0, 2), (2.0, 2)]
            .iter()
            .map(|&(energy_kwh, window)| MenuItem { energy_kwh, window })
            .collect();
        let menu = Menu::new(items, 1.0, 1.0).unwrap();
        let layout = BlockLayout::new(&menu);
        assert_eq!(layout.dim(), 6);
        assert_eq!(layout.active_count(), 5);
        // block 1 position of the one-slot item is structural
        assert!(!layout.is_active(layout.slot(1, 0)));
    }

    #[test]
    fn item_order_is_window_then_energy() {
        let menu = Menu::table2();
        let keys: Vec<(usize, f64)> = menu.items().iter().map(|i| (i.window, i.energy_kwh)).collect();
        assert_eq!(keys[0], (1, 10.0));
        assert_eq!(keys[1], (2, 10.0));
        assert_eq!(keys[2], (2, 20.0));
        assert_eq!(keys[14], (6, 30.0));
    }

    #[test]
    fn menu_rejects_unchargeable_item() {
        let err = Menu::new(
            vec![MenuItem {
                energy_kwh: 30.0,
                window: 2,
            }],
            10.0,
            1.0,
        );
        assert!(matches!(err, Err(Error::InvalidMenu(_))));
        // longer slots make the same item valid
        assert!(Menu::new(
            vec![MenuItem {
                energy_kwh: 30.0,
                window: 2
            }],
            10.0,
            1.5
        )
        .is_ok());
    }

    #[test]
    fn menu_rejects_duplicates() {
        let item = MenuItem {
            energy_kwh: 10.0,
            window: 1,
        };
        assert!(Menu::new(vec![item, item], 10.0, 1.0).is_err());
    }

    #[test]
    fn arrival_enters_last_block_of_its_window() {
        let menu = two_item_menu();
        let layout = BlockLayout::new(&menu);
        let x = FleetState::empty(&layout, Bounds::new(0.0, 100.0));
        let u = AllocationVector::zeros(layout.dim());
        // items sorted: (10,1) then (20,2)
        let w = ArrivalVector(vec![0, 1]);
        let next = transition(&layout, &x, &u, &w, Bounds::new(0.0, 50.0)).unwrap();
        let j = layout.slot(1, 1);
        assert_eq!(next.y[j], 1);
        assert_eq!(next.z[j], 20.0);
        assert_eq!(next.d, Bounds::new(0.0, 50.0));
        assert_eq!(next.total_residual(), 20.0);
    }

    #[test]
    fn zero_transition_only_updates_bounds() {
        let menu = Menu::table2();
        let layout = BlockLayout::new(&menu);
        let x = FleetState::empty(&layout, Bounds::new(0.0, 1.0));
        let next = transition(
            &layout,
            &x,
            &AllocationVector::zeros(layout.dim()),
            &ArrivalVector::zeros(menu.len()),
            Bounds::new(0.0, 2.0),
        )
        .unwrap();
        assert_eq!(next, FleetState::empty(&layout, Bounds::new(0.0, 2.0)));
    }

    #[test]
    fn residual_is_reduced_by_allocation_and_shifted() {
        let menu = two_item_menu();
        let layout = BlockLayout::new(&menu);
        let mut x = FleetState::empty(&layout, Bounds::ample());
        let j = layout.slot(1, 1);
        x.y[j] = 1;
        x.z[j] = 15.0;
        let mut u = AllocationVector::zeros(layout.dim());
        u.0[j] = 10.0;
        let next = transition(&layout, &x, &u, &ArrivalVector::zeros(2), Bounds::ample()).unwrap();
        let down = layout.slot(0, 1);
        assert_eq!(next.z[down], 5.0);
        assert_eq!(next.y[down], 1);
    }

    #[test]
    fn over_allocation_is_rejected() {
        let menu = two_item_menu();
        let layout = BlockLayout::new(&menu);
        let mut x = FleetState::empty(&layout, Bounds::ample());
        let j = layout.slot(1, 1);
        x.y[j] = 1;
        x.z[j] = 5.0;
        let mut u = AllocationVector::zeros(layout.dim());
        u.0[j] = 6.0;
        let err = transition(&layout, &x, &u, &ArrivalVector::zeros(2), Bounds::ample());
        assert!(matches!(err, Err(Error::NegativeResidual { .. })));
    }

    #[test]
    fn transition_checks_dimensions() {
        let menu = two_item_menu();
        let layout = BlockLayout::new(&menu);
        let x = FleetState::empty(&layout, Bounds::ample());
        let err = transition(
            &layout,
            &x,
            &AllocationVector::zeros(3),
            &ArrivalVector::zeros(2),
            Bounds::ample(),
        );
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn stage_cost_examples() {
        let menu = Menu::table2();
        let layout = BlockLayout::new(&menu);
        let costs = CostSchedule::uniform(&[7.4, -4.4], &layout);
        let mut u = AllocationVector::zeros(layout.dim());
        u.0[0] = 60.0;
        u.0[layout.slot(3, 10)] = 40.0;
        assert!((stage_cost(&costs, 0, &u) - 740.0).abs() < 1e-9);
        assert_eq!(stage_cost(&costs, 0, &AllocationVector::zeros(layout.dim())), 0.0);
        let mut v = AllocationVector::zeros(layout.dim());
        v.0[0] = 30.0;
        assert!((stage_cost(&costs, 1, &v) + 132.0).abs() < 1e-9);
    }

    #[test]
    fn partial_order_cases() {
        let menu = two_item_menu();
        let layout = BlockLayout::new(&menu);
        let mut x = FleetState::empty(&layout, Bounds::new(0.0, 10.0));
        let j1 = layout.slot(1, 1);
        let j0 = layout.slot(0, 0);
        x.y[j1] = 2;
        x.z[j1] = 10.0;
        x.y[j0] = 1;
        x.z[j0] = 5.0;
        assert!(partial_order_leq(&layout, &x, &x));

        let mut more = x.clone();
        more.z[j1] = 12.0;
        assert!(partial_order_leq(&layout, &x, &more));
        assert!(!partial_order_leq(&layout, &more, &x));

        let mut departing = x.clone();
        departing.z[j0] = 6.0;
        assert!(!partial_order_leq(&layout, &x, &departing));
    }

    #[test]
    fn category_slot_mapping() {
        let menu = Menu::table2();
        let layout = BlockLayout::new(&menu);
        let item = menu
            .items()
            .iter()
            .position(|i| i.window == 4 && i.energy_kwh == 20.0)
            .unwrap();
        let cat = CategoryId { arrival: 5, item };
        assert_eq!(cat.departure(&menu), 8);
        assert_eq!(cat.layout_slot(&layout, &menu, 4), None);
        let j = cat.layout_slot(&layout, &menu, 6).unwrap();
        assert_eq!(layout.delta(j), 2);
        assert_eq!(layout.category_of(j, 6), Some(cat));
        assert_eq!(cat.layout_slot(&layout, &menu, 9), None);
    }
}
