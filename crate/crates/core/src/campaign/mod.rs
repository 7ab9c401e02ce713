//! Simulator of the automated measurement campaign: traversal planning,
//! virtual positioners, the TCP capture trigger and the runner tying them
//! together.

mod capture;
mod positioner;
mod runner;

use std::time::Duration;

pub use capture::{
    send_trigger_bytes, trigger_capture, CaptureService, ChannelSource, ReplaySource, SyntheticSource, TriggerMessage, TriggerOutcome,
    ACK, NAK,
};
pub use positioner::{
    serve_positioner, InProcessPositioner, PositionerBank, PositionerLink, PositionerState, TcpPositioner,
    POSITIONER_ACCURACY_MM,
};
pub use runner::{run_campaign, run_campaign_with, CampaignOutcome, CampaignSetup, ServiceHandle};

use crate::error::{invalid, Result};
use crate::grid::{grid_positions, SampleGrid, Traversal};
use crate::model::Position3;

/// Side of one positioner table's work area.
pub const TABLE_EXTENT_MM: f64 = 1250.0;
/// Most positioners a single run drives.
pub const MAX_POSITIONERS: usize = 4;

/// Waypoints of every positioner plus the timing model.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignPlan {
    pub positioners: Vec<PositionerPlan>,
    /// Pause at each node while the channel is recorded.
    pub dwell_s: f64,
    /// Mean time per node, moving and capturing included.
    pub step_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionerPlan {
    pub positioner_id: u8,
    /// Room-frame position of the table's machine origin.
    pub table_origin: Position3,
    pub table_extent_mm: f64,
    pub waypoints: Vec<Position3>,
}

impl PositionerPlan {
    /// Machine coordinates of `p` relative to the table origin.
    pub fn to_machine(&self, p: &Position3) -> (f64, f64) {
        (p.x - self.table_origin.x, p.y - self.table_origin.y)
    }
}

impl CampaignPlan {
    pub const DEFAULT_DWELL_S: f64 = 0.5;
    pub const DEFAULT_STEP_S: f64 = 0.7;

    pub fn waypoint_count(&self) -> usize {
        self.positioners.iter().map(|p| p.waypoints.len()).sum()
    }

    /// Campaign length: one step per waypoint.
    pub fn duration_estimate(&self) -> Duration {
        Duration::from_secs_f64(self.waypoint_count() as f64 * self.step_s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dwell_s >= 0.0 && self.step_s >= 0.0) || !self.dwell_s.is_finite() || !self.step_s.is_finite() {
            return Err(invalid("dwell and step times must be finite and nonnegative"));
        }
        if self.positioners.len() > MAX_POSITIONERS {
            return Err(invalid(format!("at most {MAX_POSITIONERS} positioners per run")));
        }
        for plan in &self.positioners {
            for p in &plan.waypoints {
                let (x, y) = plan.to_machine(p);
                let limit = plan.table_extent_mm + 1e-9;
                if !(x >= -1e-9 && x <= limit && y >= -1e-9 && y <= limit) {
                    return Err(invalid(format!(
                        "waypoint {p} outside the work area of positioner {}",
                        plan.positioner_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Single-positioner plan visiting every node of `grid` once. The table's
/// machine origin is taken to be the grid origin.
pub fn plan_traversal(grid: &SampleGrid, pattern: Traversal) -> Result<CampaignPlan> {
    plan_campaign(std::slice::from_ref(grid), pattern)
}

/// One positioner per grid, each traversed with `pattern`.
pub fn plan_campaign(grids: &[SampleGrid], pattern: Traversal) -> Result<CampaignPlan> {
    let positioners = grids
        .iter()
        .map(|g| {
            g.validate()?;
            Ok(PositionerPlan {
                positioner_id: g.positioner_id,
                table_origin: g.origin,
                table_extent_mm: TABLE_EXTENT_MM.max(g.x_extent_mm).max(g.y_extent_mm),
                waypoints: grid_positions(g, pattern),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let plan = CampaignPlan {
        positioners,
        dwell_s: CampaignPlan::DEFAULT_DWELL_S,
        step_s: CampaignPlan::DEFAULT_STEP_S,
    };
    plan.validate()?;
    Ok(plan)
}

/// Time source for dwell and travel.
pub trait Clock: Send {
    fn sleep(&mut self, d: Duration);
    fn elapsed(&self) -> Duration;
}

/// Advances instantly; keeps the total that would have elapsed.
#[derive(Debug, Default, Clone)]
pub struct SimulatedClock {
    elapsed: Duration,
}

impl Clock for SimulatedClock {
    fn sleep(&mut self, d: Duration) {
        self.elapsed += d;
    }

    fn elapsed(&self) -> Duration {
        self.elapsed
    }
}

#[derive(Debug, Clone)]
pub struct WallClock {
    start: std::time::Instant,
}

impl Default for WallClock {
    fn default() -> Self {
        Self { start: std::time::Instant::now() }
    }
}

impl Clock for WallClock {
    fn sleep(&mut self, d: Duration) {
        std::thread::sleep(d);
    }

    fn elapsed(&self) -> Duration {
        self.start.elapsed()
    }
}
