//! A scheduling instance: menu, layout, cost and bound schedules.

use crate::arrivals::ArrivalModel;
use crate::error::{Error, Result};
use crate::model::{transition, AllocationVector, ArrivalVector, BlockLayout, Bounds, CostSchedule, FleetState, Menu};
use crate::value::StateBox;

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub menu: Menu,
    pub layout: BlockLayout,
    pub costs: CostSchedule,
    pub bounds: Vec<Bounds>,
}

impl Instance {
    pub fn new(menu: Menu, costs: CostSchedule, bounds: Vec<Bounds>) -> Result<Self> {
        let layout = BlockLayout::new(&menu);
        if bounds.len() != costs.horizon() {
            return Err(Error::DimensionMismatch {
                what: "bound schedule",
                expected: costs.horizon(),
                got: bounds.len(),
            });
        }
        if costs.horizon() == 0 {
            return Err(Error::Config("horizon must be at least one slot".into()));
        }
        for s in 0..costs.horizon() {
            if costs.row(s).len() != layout.dim() {
                return Err(Error::DimensionMismatch {
                    what: "cost row",
                    expected: layout.dim(),
                    got: costs.row(s).len(),
                });
            }
        }
        for (s, b) in bounds.iter().enumerate() {
            if !(b.lower >= 0.0 && b.lower <= b.upper) {
                return Err(Error::Config(format!(
                    "slot {} bounds [{}, {}] are not an interval in [0, inf)",
                    s + 1,
                    b.lower,
                    b.upper
                )));
            }
        }
        Ok(Self {
            menu,
            layout,
            costs,
            bounds,
        })
    }

    /// Same scalar cost on every active position and the same bounds every slot.
    pub fn uniform(menu: Menu, per_slot: &[f64], bounds: Bounds) -> Result<Self> {
        let layout = BlockLayout::new(&menu);
        let costs = CostSchedule::uniform(per_slot, &layout);
        Self::new(menu, costs, vec![bounds; per_slot.len()])
    }

    pub fn horizon(&self) -> usize {
        self.costs.horizon()
    }

    /// Bounds in force at slot `s`; past the horizon the last slot's bounds.
    pub fn bounds_at(&self, s: usize) -> Bounds {
        self.bounds[s.min(self.horizon() - 1)]
    }

    pub fn state_box(&self, arrivals: &ArrivalModel, s: usize) -> StateBox {
        StateBox::for_stage(&self.menu, &self.layout, arrivals, s, self.bounds_at(s))
    }

    /// `x_1`: the empty station after the first slot's arrivals.
    pub fn initial_state(&self, w: &ArrivalVector) -> Result<FleetState> {
        let empty = FleetState::empty(&self.layout, self.bounds_at(0));
        transition(
            &self.layout,
            &empty,
            &AllocationVector::zeros(self.layout.dim()),
            w,
            self.bounds_at(0),
        )
    }

    /// Same instance with every slot's upper bound replaced.
    pub fn with_upper_bound(&self, upper: f64) -> Result<Self> {
        let bounds = self.bounds.iter().map(|b| Bounds::new(b.lower, upper)).collect();
        Self::new(self.menu.clone(), self.costs.clone(), bounds)
    }
}
