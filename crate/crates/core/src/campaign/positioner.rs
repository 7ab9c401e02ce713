//! Virtual CNC positioner speaking a G-code subset over LF-terminated ASCII.
//!
//! | command              | reply                                   |
//! |----------------------|-----------------------------------------|
//! | `G28`                | home to machine `(0, 0)`, `ok`          |
//! | `G0 X<mm> Y<mm>`     | move (`G1` accepted too), `ok`          |
//! | `M114`               | `ok X<mm> Y<mm>`, commanded position    |
//! | `T<n>`               | select positioner `n` of a bank, `ok`   |
//!
//! Failures reply `error:parse`, `error:bounds` or `error:unhomed` and leave
//! the state unchanged.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Position3;

/// Repeatability bound of the tables.
pub const POSITIONER_ACCURACY_MM: f64 = 0.1;

const OK: &str = "ok\n";
const ERR_PARSE: &str = "error:parse\n";
const ERR_BOUNDS: &str = "error:bounds\n";
const ERR_UNHOMED: &str = "error:unhomed\n";

#[derive(Debug, Clone)]
pub struct PositionerState {
    /// Room-frame point of machine `(0, 0)`.
    pub origin: Position3,
    pub extent_mm: f64,
    commanded: (f64, f64),
    actual: (f64, f64),
    homed: bool,
    error_rng: Option<(f64, ChaCha8Rng)>,
}

impl PositionerState {
    pub fn new(origin: Position3, extent_mm: f64) -> Self {
        Self { origin, extent_mm, commanded: (0.0, 0.0), actual: (0.0, 0.0), homed: false, error_rng: None }
    }

    /// Adds a uniform placement error of at most `max_mm` (Euclidean, capped at
    /// [`POSITIONER_ACCURACY_MM`]) to every move.
    pub fn with_placement_error(mut self, max_mm: f64, seed: u64) -> Self {
        let bound = max_mm.clamp(0.0, POSITIONER_ACCURACY_MM);
        self.error_rng = (bound > 0.0).then(|| (bound, ChaCha8Rng::seed_from_u64(seed)));
        self
    }

    pub fn is_homed(&self) -> bool {
        self.homed
    }

    pub fn commanded(&self) -> (f64, f64) {
        self.commanded
    }

    /// Where the carriage really is, room frame.
    pub fn actual_position(&self) -> Position3 {
        self.origin + Position3::new(self.actual.0, self.actual.1, 0.0)
    }

    fn in_bounds(&self, v: f64) -> bool {
        v.is_finite() && (0.0..=self.extent_mm).contains(&v)
    }

    fn move_to(&mut self, x: f64, y: f64) {
        self.commanded = (x, y);
        self.actual = match &mut self.error_rng {
            None => (x, y),
            Some((bound, rng)) => {
                let per_axis = *bound / std::f64::consts::SQRT_2;
                (x + rng.random_range(-per_axis..=per_axis), y + rng.random_range(-per_axis..=per_axis))
            }
        };
    }

    /// Runs one command line and returns the reply, newline included.
    pub fn execute(&mut self, command: &str) -> String {
        let line = command.trim_end_matches(['\n', '\r']);
        let mut tokens = line.split_ascii_whitespace();
        let Some(op) = tokens.next() else {
            return ERR_PARSE.into();
        };
        match op.to_ascii_uppercase().as_str() {
            "G28" => {
                if tokens.next().is_some() {
                    return ERR_PARSE.into();
                }
                self.homed = true;
                self.move_to(0.0, 0.0);
                OK.into()
            }
            "G0" | "G1" => {
                let (mut x, mut y) = (None, None);
                for tok in tokens {
                    let (axis, value) = tok.split_at(1);
                    let Ok(v) = value.parse::<f64>() else {
                        return ERR_PARSE.into();
                    };
                    let slot = match axis {
                        "X" | "x" => &mut x,
                        "Y" | "y" => &mut y,
                        _ => return ERR_PARSE.into(),
                    };
                    if slot.replace(v).is_some() {
                        return ERR_PARSE.into();
                    }
                }
                if x.is_none() && y.is_none() {
                    return ERR_PARSE.into();
                }
                if !self.homed {
                    return ERR_UNHOMED.into();
                }
                let (tx, ty) = (x.unwrap_or(self.commanded.0), y.unwrap_or(self.commanded.1));
                if !self.in_bounds(tx) || !self.in_bounds(ty) {
                    return ERR_BOUNDS.into();
                }
                self.move_to(tx, ty);
                OK.into()
            }
            "M114" if tokens.next().is_none() => {
                format!("ok X{} Y{}\n", self.commanded.0, self.commanded.1)
            }
            _ => ERR_PARSE.into(),
        }
    }
}

/// Several positioners behind one command stream; `T<n>` picks the target.
#[derive(Debug, Clone)]
pub struct PositionerBank {
    pub positioners: Vec<PositionerState>,
    selected: usize,
    last_moved: Option<usize>,
}

impl PositionerBank {
    pub fn new(positioners: Vec<PositionerState>) -> Self {
        Self { positioners, selected: 0, last_moved: None }
    }

    pub fn selected(&self) -> usize {
        self.selected
    }

    /// Positioner that most recently completed a move (or homing).
    pub fn last_moved(&self) -> Option<usize> {
        self.last_moved
    }

    pub fn execute(&mut self, command: &str) -> String {
        let line = command.trim_end_matches(['\n', '\r']).trim();
        if let Some(rest) = line.strip_prefix(['T', 't']) {
            return match rest.parse::<usize>() {
                Ok(n) if n < self.positioners.len() => {
                    self.selected = n;
                    OK.into()
                }
                _ => ERR_PARSE.into(),
            };
        }
        let Some(p) = self.positioners.get_mut(self.selected) else {
            return ERR_PARSE.into();
        };
        let reply = p.execute(line);
        let op = line.split_ascii_whitespace().next().unwrap_or("").to_ascii_uppercase();
        if reply == OK && matches!(op.as_str(), "G0" | "G1" | "G28") {
            self.last_moved = Some(self.selected);
        }
        reply
    }
}

/// Anything that can carry positioner commands.
pub trait PositionerLink {
    /// Sends one command (without trailing newline) and returns the reply line.
    fn command(&mut self, line: &str) -> Result<String>;
}

#[derive(Debug, Clone)]
pub struct InProcessPositioner(pub Arc<Mutex<PositionerBank>>);

impl PositionerLink for InProcessPositioner {
    fn command(&mut self, line: &str) -> Result<String> {
        let mut bank = self.0.lock().expect("positioner bank poisoned");
        Ok(bank.execute(line).trim_end().to_string())
    }
}

pub struct TcpPositioner {
    reader: BufReader<TcpStream>,
}

impl TcpPositioner {
    pub fn connect(addr: SocketAddr, timeout: Duration) -> Result<Self> {
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(Self { reader: BufReader::new(stream) })
    }
}

impl PositionerLink for TcpPositioner {
    fn command(&mut self, line: &str) -> Result<String> {
        let stream = self.reader.get_mut();
        stream.write_all(line.as_bytes())?;
        stream.write_all(b"\n")?;
        let mut reply = String::new();
        match self.reader.read_line(&mut reply) {
            Ok(0) => Err(Error::Io(std::io::ErrorKind::UnexpectedEof.into())),
            Ok(_) => Ok(reply.trim_end().to_string()),
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                Err(Error::Timeout(format!("positioner reply to `{line}`")))
            }
            Err(e) => Err(e.into()),
        }
    }
}

/// Serves the bank over TCP until `shutdown` is set. Clients are handled one
/// at a time; each may send any number of lines.
pub fn serve_positioner(listener: TcpListener, bank: Arc<Mutex<PositionerBank>>, shutdown: Arc<AtomicBool>) -> Result<()> {
    for conn in listener.incoming() {
        if shutdown.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = conn else { continue };
        let _ = stream.set_nodelay(true);
        let Ok(mut writer) = stream.try_clone() else { continue };
        let reader = BufReader::new(stream);
        for line in reader.lines() {
            let Ok(line) = line else { break };
            if shutdown.load(Ordering::SeqCst) {
                return Ok(());
            }
            let reply = bank.lock().expect("positioner bank poisoned").execute(&line);
            if writer.write_all(reply.as_bytes()).is_err() {
                break;
            }
        }
    }
    Ok(())
}
