//! Shared domain values: positions, CSI samples and the radio configuration.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use num_complex::Complex64;

use crate::config::KeyValues;
use crate::error::{invalid, Error, Result};

/// Number of uplink pilot slots, and hence users, per frame.
pub const MAX_USERS: u8 = 12;

/// A point in the local frame, in millimetres.
///
/// The origin sits at the centre of the URA in the horizontal plane; `z` is
/// the height above the floor, so the URA centre is `(0, 0, 1000)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3 {
    pub const ORIGIN: Position3 = Position3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance_mm(&self, other: &Position3) -> f64 {
        (*self - *other).norm()
    }

    pub fn dot(&self, other: &Position3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Unit vector in the same direction; `None` for the zero vector.
    pub fn normalized(&self) -> Option<Position3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| *self * (1.0 / n))
    }
}

impl Add for Position3 {
    type Output = Position3;
    fn add(self, rhs: Position3) -> Position3 {
        Position3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Position3 {
    type Output = Position3;
    fn sub(self, rhs: Position3) -> Position3 {
        Position3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Position3 {
    type Output = Position3;
    fn mul(self, rhs: f64) -> Position3 {
        Position3::new(self.x * rhs, self.y * rhs, self.z * rhs)
    }
}

impl fmt::Display for Position3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Six-byte sample identifier over `[0-9A-Za-z_-]`, used verbatim as a file stem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleId([u8; 6]);

impl SampleId {
    pub const LEN: usize = 6;

    pub fn is_valid_byte(b: u8) -> bool {
        b.is_ascii_alphanumeric() || b == b'_' || b == b'-'
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != Self::LEN || !bytes.iter().all(|&b| Self::is_valid_byte(b)) {
            return Err(Error::InvalidSampleId(String::from_utf8_lossy(bytes).into_owned()));
        }
        let mut id = [0u8; 6];
        id.copy_from_slice(bytes);
        Ok(Self(id))
    }

    /// Zero-padded decimal counter, `0..=999_999`.
    pub fn from_counter(counter: usize) -> Result<Self> {
        if counter > 999_999 {
            return Err(invalid(format!("sample counter {counter} exceeds six digits")));
        }
        Self::from_bytes(format!("{counter:06}").as_bytes())
    }

    pub fn as_bytes(&self) -> &[u8; 6] {
        &self.0
    }

    pub fn as_str(&self) -> &str {
        // Only ASCII bytes are ever admitted.
        std::str::from_utf8(&self.0).expect("sample id is ASCII")
    }
}

impl Default for SampleId {
    fn default() -> Self {
        Self(*b"000000")
    }
}

impl FromStr for SampleId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::from_bytes(s.as_bytes())
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One channel snapshot of one user: `antennas × subcarriers` complex gains.
///
/// Entries are stored antenna-major, so `h[m * subcarriers + k]` is the gain
/// of antenna `m` on pilot subcarrier `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiSample {
    antennas: usize,
    subcarriers: usize,
    h: Vec<Complex64>,
    pub label: Option<Position3>,
    user_id: u8,
    pub sample_id: SampleId,
}

impl CsiSample {
    pub fn new(antennas: usize, subcarriers: usize, h: Vec<Complex64>) -> Result<Self> {
        if antennas == 0 || subcarriers == 0 {
            return Err(Error::DimensionMismatch(format!(
                "CSI needs at least one antenna and one subcarrier, got {antennas}x{subcarriers}"
            )));
        }
        if h.len() != antennas * subcarriers {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {antennas}x{subcarriers} matrix",
                h.len()
            )));
        }
        if let Some(pos) = h.iter().position(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(invalid(format!("non-finite CSI entry at index {pos}")));
        }
        Ok(Self {
            antennas,
            subcarriers,
            h,
            label: None,
            user_id: 0,
            sample_id: SampleId::default(),
        })
    }

    pub fn from_fn(
        antennas: usize,
        subcarriers: usize,
        mut f: impl FnMut(usize, usize) -> Complex64,
    ) -> Result<Self> {
        let mut h = Vec::with_capacity(antennas * subcarriers);
        for m in 0..antennas {
            for k in 0..subcarriers {
                h.push(f(m, k));
            }
        }
        Self::new(antennas, subcarriers, h)
    }

    pub fn with_label(mut self, label: Position3) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_user(mut self, user_id: u8) -> Result<Self> {
        self.set_user_id(user_id)?;
        Ok(self)
    }

    pub fn with_sample_id(mut self, id: SampleId) -> Self {
        self.sample_id = id;
        self
    }

    pub fn set_user_id(&mut self, user_id: u8) -> Result<()> {
        if user_id >= MAX_USERS {
            return Err(invalid(format!("user id {user_id} outside [0, {MAX_USERS})")));
        }
        self.user_id = user_id;
        Ok(())
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn user_id(&self) -> u8 {
        self.user_id
    }

    pub fn get(&self, antenna: usize, subcarrier: usize) -> Complex64 {
        self.h[antenna * self.subcarriers + subcarrier]
    }

    /// All entries, antenna-major. Doubles as the wideband (subcarrier-stacked) vector.
    pub fn entries(&self) -> &[Complex64] {
        &self.h
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [Complex64] {
        &mut self.h
    }

    /// Channel across the array on one subcarrier.
    pub fn column(&self, subcarrier: usize) -> Vec<Complex64> {
        (0..self.antennas).map(|m| self.get(m, subcarrier)).collect()
    }

    pub fn frobenius_norm_sqr(&self) -> f64 {
        self.h.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn same_shape(&self, other: &CsiSample) -> bool {
        self.antennas == other.antennas && self.subcarriers == other.subcarriers
    }

    /// Copy with every entry multiplied by `factor`.
    pub fn scaled(&self, factor: Complex64) -> CsiSample {
        let mut out = self.clone();
        out.h.iter_mut().for_each(|c| *c *= factor);
        out
    }
}

/// Frame and link parameters of the testbed.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioConfig {
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub total_subcarriers: usize,
    pub pilot_count: usize,
    pub interleave_factor: usize,
    pub tx_power_dbm: f64,
    pub rx_gain_db: f64,
    pub symbol_duration_s: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            carrier_hz: 2.61e9,
            subcarrier_spacing_hz: 15e3,
            total_subcarriers: 1200,
            pilot_count: 100,
            interleave_factor: 12,
            tx_power_dbm: 18.5,
            rx_gain_db: 15.0,
            symbol_duration_s: 7.1e-6,
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_hz", self.carrier_hz),
            ("subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("symbol_duration_s", self.symbol_duration_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.tx_power_dbm.is_finite() || !self.rx_gain_db.is_finite() {
            return Err(invalid("power levels must be finite"));
        }
        if self.pilot_count == 0 || self.interleave_factor == 0 {
            return Err(invalid("pilot_count and interleave_factor must be positive"));
        }
        if self.pilot_count * self.interleave_factor != self.total_subcarriers {
            return Err(invalid(format!(
                "pilot_count x interleave_factor = {} but total_subcarriers = {}",
                self.pilot_count * self.interleave_factor,
                self.total_subcarriers
            )));
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        crate::channel::SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn tx_power_w(&self) -> f64 {
        10f64.powf(self.tx_power_dbm / 10.0) * 1e-3
    }

    /// Overrides defaults with whatever keys are present.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut cfg = Self::default();
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = kv.parsed(stringify!($field))? { cfg.$field = v; }
            )*};
        }
        take!(
            carrier_hz,
            subcarrier_spacing_hz,
            total_subcarriers,
            pilot_count,
            interleave_factor,
            tx_power_dbm,
            rx_gain_db,
            symbol_duration_s
        );
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("carrier_hz", self.carrier_hz);
        kv.insert("subcarrier_spacing_hz", self.subcarrier_spacing_hz);
        kv.insert("total_subcarriers", self.total_subcarriers);
        kv.insert("pilot_count", self.pilot_count);
        kv.insert("interleave_factor", self.interleave_factor);
        kv.insert("tx_power_dbm", self.tx_power_dbm);
        kv.insert("rx_gain_db", self.rx_gain_db);
        kv.insert("symbol_duration_s", self.symbol_duration_s);
        kv
    }
}
