//! TCP capture trigger: the client sends a 6-byte file stem, the service
//! snapshots the channel, writes `<stem>.bin` and answers one byte.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::positioner::PositionerBank;
use crate::channel::{add_noise, synth_channel, ChannelConfig, NoiseSpec, Scatterer};
use crate::dataset::write_sample;
use crate::error::{Error, Result};
use crate::model::{CsiSample, RadioConfig, SampleId};
use crate::topology::ArrayGeometry;

pub const ACK: u8 = 0x06;
pub const NAK: u8 = 0x15;

/// Validated trigger payload; doubles as the sample file stem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TriggerMessage(SampleId);

impl TriggerMessage {
    pub fn new(payload: &[u8]) -> Result<Self> {
        SampleId::from_bytes(payload).map(Self)
    }

    pub fn payload(&self) -> &[u8; 6] {
        self.0.as_bytes()
    }

    pub fn sample_id(&self) -> SampleId {
        self.0
    }
}

impl From<SampleId> for TriggerMessage {
    fn from(id: SampleId) -> Self {
        Self(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerOutcome {
    Ack,
    Nak,
}

/// Where captured CSI comes from.
pub trait ChannelSource: Send {
    fn snapshot(&mut self) -> Result<CsiSample>;
}

/// Synthetic channel at the carriage of whichever positioner moved last.
/// The positioner index is used as user id.
pub struct SyntheticSource {
    pub geometry: ArrayGeometry,
    pub radio: RadioConfig,
    pub channel: ChannelConfig,
    pub scatterers: Vec<Scatterer>,
    pub bank: Arc<Mutex<PositionerBank>>,
    /// SNR of the captures; each snapshot uses seed `noise.seed + n` for the
    /// `n`-th capture.
    pub noise: NoiseSpec,
    captures: u64,
}

impl SyntheticSource {
    pub fn new(
        geometry: ArrayGeometry,
        radio: RadioConfig,
        channel: ChannelConfig,
        bank: Arc<Mutex<PositionerBank>>,
    ) -> Self {
        Self {
            geometry,
            radio,
            channel,
            scatterers: Vec::new(),
            bank,
            noise: NoiseSpec::noiseless(),
            captures: 0,
        }
    }

    pub fn with_scatterers(mut self, scatterers: Vec<Scatterer>) -> Self {
        self.scatterers = scatterers;
        self
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Self {
        self.noise = noise;
        self
    }
}

impl ChannelSource for SyntheticSource {
    fn snapshot(&mut self) -> Result<CsiSample> {
        let (user, position) = {
            let bank = self.bank.lock().expect("positioner bank poisoned");
            let user = bank.last_moved().unwrap_or(bank.selected());
            let state = bank
                .positioners
                .get(user)
                .ok_or_else(|| Error::InvalidParameter("positioner bank is empty".into()))?;
            (user, state.actual_position())
        };
        let user_id = u8::try_from(user).map_err(|_| Error::InvalidParameter(format!("positioner {user}")))?;
        let clean = synth_channel(&self.geometry, position, &self.radio, &self.channel, &self.scatterers, user_id)?;
        let spec = NoiseSpec { seed: self.noise.seed.wrapping_add(self.captures), ..self.noise };
        self.captures += 1;
        add_noise(&clean, &spec)
    }
}

/// Plays back recorded samples in order, wrapping around at the end.
pub struct ReplaySource {
    samples: Vec<CsiSample>,
    next: usize,
}

impl ReplaySource {
    pub fn new(samples: Vec<CsiSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("replay source has no samples".into()));
        }
        Ok(Self { samples, next: 0 })
    }
}

impl ChannelSource for ReplaySource {
    fn snapshot(&mut self) -> Result<CsiSample> {
        let s = self.samples[self.next].clone();
        self.next = (self.next + 1) % self.samples.len();
        Ok(s)
    }
}

pub struct CaptureService {
    output_dir: PathBuf,
    source: Box<dyn ChannelSource>,
    captured: Vec<SampleId>,
    fail_writes: bool,
}

impl CaptureService {
    pub fn new(output_dir: impl Into<PathBuf>, source: Box<dyn ChannelSource>) -> Self {
        Self { output_dir: output_dir.into(), source, captured: Vec::new(), fail_writes: false }
    }

    pub fn output_dir(&self) -> &Path {
        &self.output_dir
    }

    /// Ids written so far, in arrival order.
    pub fn captured(&self) -> &[SampleId] {
        &self.captured
    }

    /// Makes every following write fail, for fault testing.
    pub fn set_fail_writes(&mut self, fail: bool) {
        self.fail_writes = fail;
    }

    /// Handles one trigger payload and returns the reply byte.
    pub fn handle(&mut self, payload: &[u8]) -> u8 {
        match self.capture(payload) {
            Ok(id) => {
                self.captured.push(id);
                ACK
            }
            Err(_) => NAK,
        }
    }

    fn capture(&mut self, payload: &[u8]) -> Result<SampleId> {
        let id = SampleId::from_bytes(payload)?;
        let csi = self.source.snapshot()?;
        if self.fail_writes {
            return Err(Error::Io(std::io::Error::other("injected write failure")));
        }
        write_sample(self.output_dir.join(format!("{id}.bin")), &csi)?;
        Ok(id)
    }

    /// Accepts connections until `shutdown` is set, one request per
    /// connection, strictly in arrival order.
    pub fn serve(&mut self, listener: TcpListener, shutdown: &AtomicBool) -> Result<()> {
        for conn in listener.incoming() {
            if shutdown.load(Ordering::SeqCst) {
                break;
            }
            let Ok(mut stream) = conn else { continue };
            let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
            let mut payload = [0u8; 6];
            let reply = match stream.read_exact(&mut payload) {
                Ok(()) => self.handle(&payload),
                Err(_) => NAK,
            };
            let _ = stream.write_all(&[reply]);
        }
        Ok(())
    }
}

/// Runs a service on its own thread until `shutdown` is set.
pub(crate) fn spawn_capture_service(
    mut service: CaptureService,
    listener: TcpListener,
    shutdown: Arc<AtomicBool>,
) -> std::thread::JoinHandle<Result<CaptureService>> {
    std::thread::spawn(move || {
        service.serve(listener, &shutdown)?;
        Ok(service)
    })
}

/// Sends one trigger and waits for the reply byte.
pub fn trigger_capture(addr: SocketAddr, message: &TriggerMessage, timeout: Duration) -> Result<TriggerOutcome> {
    send_trigger_bytes(addr, message.payload(), timeout)
}

/// Like [`trigger_capture`] but sends arbitrary bytes, leaving validation to
/// the service. The length must still be six.
pub fn send_trigger_bytes(addr: SocketAddr, payload: &[u8], timeout: Duration) -> Result<TriggerOutcome> {
    if payload.len() != SampleId::LEN {
        return Err(Error::InvalidSampleId(String::from_utf8_lossy(payload).into_owned()));
    }
    let timed_out = |e: std::io::Error| match e.kind() {
        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut => Error::Timeout(format!("capture at {addr}")),
        _ => Error::Io(e),
    };
    let mut stream = TcpStream::connect_timeout(&addr, timeout).map_err(timed_out)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    stream.write_all(payload).map_err(timed_out)?;
    let mut reply = [0u8; 1];
    stream.read_exact(&mut reply).map_err(timed_out)?;
    match reply[0] {
        ACK => Ok(TriggerOutcome::Ack),
        NAK => Ok(TriggerOutcome::Nak),
        other => Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unexpected reply byte {other:#04x}"),
        ))),
    }
}
