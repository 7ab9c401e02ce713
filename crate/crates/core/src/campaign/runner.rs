//! Drives positioners and the capture trigger through a plan.

use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use super::capture::{spawn_capture_service, trigger_capture, CaptureService, SyntheticSource, TriggerMessage, TriggerOutcome};
use super::positioner::{InProcessPositioner, PositionerBank, PositionerLink, PositionerState};
use super::{CampaignPlan, Clock, SimulatedClock};
use crate::channel::{ChannelConfig, NoiseSpec, Scatterer};
use crate::dataset::{DatasetIndex, INDEX_FILE};
use crate::error::{invalid, Error, Result};
use crate::model::{RadioConfig, SampleId, MAX_USERS};
use crate::topology::{ArrayGeometry, TopologyKind};

/// A capture service running on a background thread.
pub struct ServiceHandle {
    pub addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<Result<CaptureService>>>,
}

impl ServiceHandle {
    pub fn spawn(service: CaptureService, bind: impl ToSocketAddrs) -> Result<Self> {
        let listener = TcpListener::bind(bind)?;
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let thread = spawn_capture_service(service, listener, shutdown.clone());
        Ok(Self { addr, shutdown, thread: Some(thread) })
    }

    fn signal(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
    }

    /// Stops the service and hands it back.
    pub fn stop(mut self) -> Result<CaptureService> {
        self.signal();
        let thread = self.thread.take().expect("service joined twice");
        thread.join().map_err(|_| Error::Io(std::io::Error::other("capture service panicked")))?
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        if let Some(thread) = self.thread.take() {
            self.signal();
            let _ = thread.join();
        }
    }
}

/// Scene the in-process capture service synthesises from.
#[derive(Debug, Clone)]
pub struct CampaignSetup {
    pub topology: TopologyKind,
    pub geometry: ArrayGeometry,
    pub radio: RadioConfig,
    pub channel: ChannelConfig,
    pub scatterers: Vec<Scatterer>,
    pub noise: NoiseSpec,
    pub trigger_timeout: Duration,
}

impl CampaignSetup {
    pub fn new(geometry: ArrayGeometry, radio: RadioConfig) -> Self {
        Self {
            topology: geometry.kind,
            geometry,
            radio,
            channel: ChannelConfig::default(),
            scatterers: Vec::new(),
            noise: NoiseSpec::noiseless(),
            trigger_timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CampaignOutcome {
    pub index: DatasetIndex,
    /// Time on the campaign clock.
    pub elapsed: Duration,
    pub index_path: PathBuf,
}

/// Runs `plan` against an already reachable positioner link and capture
/// endpoint. Positioner `i` of the plan is tool `T<i>` on the link and user
/// `positioner_id` in the index. Positioners take turns one waypoint at a
/// time; sample ids count waypoints from zero. The index is written to
/// `index.base_dir` when the run completes.
pub fn run_campaign_with(
    plan: &CampaignPlan,
    link: &mut dyn PositionerLink,
    capture_addr: SocketAddr,
    mut index: DatasetIndex,
    clock: &mut dyn Clock,
    trigger_timeout: Duration,
) -> Result<CampaignOutcome> {
    plan.validate()?;
    if plan.positioners.iter().any(|p| p.positioner_id >= MAX_USERS) {
        return Err(invalid(format!("positioner ids must be below {MAX_USERS}")));
    }
    let dwell = Duration::from_secs_f64(plan.dwell_s);
    let rest = Duration::from_secs_f64((plan.step_s - plan.dwell_s).max(0.0));
    let longest = plan.positioners.iter().map(|p| p.waypoints.len()).max().unwrap_or(0);
    let mut homed = vec![false; plan.positioners.len()];
    let mut counter = 0usize;

    let expect_ok = |link: &mut dyn PositionerLink, cmd: &str, waypoint: usize| -> Result<()> {
        let reply = link.command(cmd)?;
        if reply != "ok" {
            return Err(Error::Positioner { waypoint, reply });
        }
        Ok(())
    };

    for step in 0..longest {
        for (slot, pp) in plan.positioners.iter().enumerate() {
            let Some(target) = pp.waypoints.get(step) else { continue };
            expect_ok(link, &format!("T{slot}"), counter)?;
            if !homed[slot] {
                expect_ok(link, "G28", counter)?;
                homed[slot] = true;
            }
            let (mx, my) = pp.to_machine(target);
            expect_ok(link, &format!("G0 X{mx} Y{my}"), counter)?;
            clock.sleep(dwell);

            let id = SampleId::from_counter(counter)?;
            let outcome = trigger_capture(capture_addr, &TriggerMessage::from(id), trigger_timeout)
                .map_err(|e| Error::Capture { waypoint: counter, source: Box::new(e) })?;
            if outcome == TriggerOutcome::Nak {
                return Err(Error::Capture { waypoint: counter, source: Box::new(Error::Nak(id.to_string())) });
            }
            index.push(id, *target, pp.positioner_id)?;
            clock.sleep(rest);
            counter += 1;
        }
    }

    let index_path = index.base_dir.join(INDEX_FILE);
    index.save(&index_path)?;
    Ok(CampaignOutcome { index, elapsed: clock.elapsed(), index_path })
}

/// Runs `plan` end to end in one process: a simulated positioner bank, a
/// synthetic capture service on a loopback port and a simulated clock.
pub fn run_campaign(plan: &CampaignPlan, setup: &CampaignSetup, output_dir: impl AsRef<Path>) -> Result<CampaignOutcome> {
    let output_dir = output_dir.as_ref();
    std::fs::create_dir_all(output_dir)?;
    let bank = Arc::new(Mutex::new(PositionerBank::new(
        plan.positioners
            .iter()
            .map(|p| PositionerState::new(p.table_origin, p.table_extent_mm))
            .collect(),
    )));
    let source = SyntheticSource::new(setup.geometry.clone(), setup.radio.clone(), setup.channel, bank.clone())
        .with_scatterers(setup.scatterers.clone())
        .with_noise(setup.noise);
    let service = ServiceHandle::spawn(CaptureService::new(output_dir, Box::new(source)), "127.0.0.1:0")?;
    let index = DatasetIndex::new(output_dir, Some(setup.topology), setup.radio.clone());
    let mut link = InProcessPositioner(bank);
    let mut clock = SimulatedClock::default();
    let outcome = run_campaign_with(plan, &mut link, service.addr, index, &mut clock, setup.trigger_timeout);
    service.stop()?;
    outcome
}
