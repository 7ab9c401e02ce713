//! Synthetic CSI: free-space line of sight, point scatterers and receiver noise.
//!
//! Gains use the Friis field factor `lambda / (4 pi d)` with unit antenna
//! gains; transmit power is applied later by the link budget, never here.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::model::{CsiSample, Position3, RadioConfig};
use crate::topology::ArrayGeometry;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    /// Element pattern `max(0, cos theta)^q`; 0 is isotropic.
    pub pattern_exponent: f64,
    /// Adds the scatterer paths when set; plain line of sight otherwise.
    pub rician_enabled: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { pattern_exponent: 0.0, rician_enabled: false }
    }
}

impl ChannelConfig {
    fn validate(&self) -> Result<()> {
        if !(self.pattern_exponent >= 0.0 && self.pattern_exponent.is_finite()) {
            return Err(invalid(format!(
                "pattern exponent must be nonnegative, got {}",
                self.pattern_exponent
            )));
        }
        Ok(())
    }
}

/// Point reflector with complex reflection coefficient `|gamma| <= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub position: Position3,
    pub reflection: Complex64,
}

impl Scatterer {
    pub fn new(position: Position3, reflection: Complex64) -> Result<Self> {
        if !position.is_finite() || !reflection.re.is_finite() || !reflection.im.is_finite() {
            return Err(invalid("scatterer must be finite"));
        }
        if reflection.norm() > 1.0 + 1e-12 {
            return Err(invalid(format!("|gamma| = {} exceeds 1", reflection.norm())));
        }
        Ok(Self { position, reflection })
    }
}

/// Reads `x_mm,y_mm,z_mm,gamma_re,gamma_im` rows (header line required).
pub fn load_scatterers(path: impl AsRef<Path>) -> Result<Vec<Scatterer>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = row + 2;
        if record.len() != 5 {
            return Err(Error::Malformed { line, message: format!("expected 5 columns, got {}", record.len()) });
        }
        let mut v = [0.0f64; 5];
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = record[i].parse().map_err(|_| Error::Malformed {
                line,
                message: format!("bad number {:?}", &record[i]),
            })?;
        }
        out.push(Scatterer::new(Position3::new(v[0], v[1], v[2]), Complex64::new(v[3], v[4]))?);
    }
    Ok(out)
}

pub fn write_scatterers(scatterers: &[Scatterer], mut out: impl Write) -> Result<()> {
    writeln!(out, "x_mm,y_mm,z_mm,gamma_re,gamma_im")?;
    for s in scatterers {
        let p = s.position;
        writeln!(out, "{},{},{},{},{}", p.x, p.y, p.z, s.reflection.re, s.reflection.im)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Per-entry SNR against the sample's mean entry power; `+inf` disables noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self { snr_db: f64::INFINITY, seed: 0 }
    }
}

/// Pilot subcarrier frequencies of `user_id`: every `interleave_factor`-th
/// slot starting at `user_id`, indexed symmetrically around the carrier.
pub fn pilot_frequencies(radio: &RadioConfig, user_id: usize) -> Result<Vec<f64>> {
    radio.validate()?;
    if user_id >= radio.interleave_factor {
        return Err(invalid(format!(
            "user id {user_id} outside [0, {})",
            radio.interleave_factor
        )));
    }
    let half = (radio.total_subcarriers / 2) as i64;
    Ok((0..radio.pilot_count)
        .map(|k| {
            let slot = (radio.interleave_factor * k + user_id) as i64 - half;
            radio.carrier_hz + slot as f64 * radio.subcarrier_spacing_hz
        })
        .collect())
}

/// Free-space gain of one path of length `d_m` at frequency `f`.
fn path_gain(f: f64, d_m: f64) -> Complex64 {
    let lambda = SPEED_OF_LIGHT / f;
    let phase = -2.0 * PI * f * d_m / SPEED_OF_LIGHT;
    Complex64::from_polar(lambda / (4.0 * PI * d_m), phase)
}

fn element_gain(facing: &Position3, to_target: &Position3, q: f64) -> f64 {
    if q == 0.0 {
        return 1.0;
    }
    let cos = facing.dot(to_target) / to_target.norm();
    cos.max(0.0).powf(q)
}

fn check_distance(a: &Position3, b: &Position3, what: &str) -> Result<f64> {
    let d = a.distance_mm(b);
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::DegenerateGeometry(format!("{what} coincide at {a}")));
    }
    Ok(d / 1000.0)
}

/// Line-of-sight CSI of a user at `user` transmitting on pilot set `user_id`.
pub fn los_channel(
    geom: &ArrayGeometry,
    user: Position3,
    radio: &RadioConfig,
    cfg: &ChannelConfig,
    user_id: u8,
) -> Result<CsiSample> {
    multipath_channel(geom, user, radio, cfg, &[], user_id)
}

/// Line of sight plus one single-bounce path per scatterer.
///
/// The scatterer term is `gamma * lambda / (4 pi (d1 + d2)) * exp(-i 2 pi f (d1 + d2) / c)`
/// with `d1` element to scatterer and `d2` scatterer to user. The element
/// pattern is evaluated towards the first hop of each path.
pub fn multipath_channel(
    geom: &ArrayGeometry,
    user: Position3,
    radio: &RadioConfig,
    cfg: &ChannelConfig,
    scatterers: &[Scatterer],
    user_id: u8,
) -> Result<CsiSample> {
    cfg.validate()?;
    if geom.is_empty() {
        return Err(Error::DegenerateGeometry("array has no elements".into()));
    }
    if !user.is_finite() {
        return Err(invalid("user position must be finite"));
    }
    let freqs = pilot_frequencies(radio, user_id as usize)?;
    let q = cfg.pattern_exponent;

    struct Path {
        gain: f64,
        reflection: Complex64,
        length_m: f64,
    }

    let mut h = Vec::with_capacity(geom.len() * freqs.len());
    for element in &geom.elements {
        let mut paths = Vec::with_capacity(1 + scatterers.len());
        let d = check_distance(&element.position, &user, "element and user")?;
        paths.push(Path {
            gain: element_gain(&element.facing, &(user - element.position), q),
            reflection: Complex64::new(1.0, 0.0),
            length_m: d,
        });
        for s in scatterers {
            let d1 = check_distance(&element.position, &s.position, "element and scatterer")?;
            let d2 = check_distance(&s.position, &user, "scatterer and user")?;
            paths.push(Path {
                gain: element_gain(&element.facing, &(s.position - element.position), q),
                reflection: s.reflection,
                length_m: d1 + d2,
            });
        }
        for &f in &freqs {
            let mut acc = Complex64::new(0.0, 0.0);
            for p in &paths {
                acc += p.reflection * p.gain * path_gain(f, p.length_m);
            }
            h.push(acc);
        }
    }
    let sample = CsiSample::new(geom.len(), freqs.len(), h)?;
    Ok(sample.with_label(user).with_user(user_id)?)
}

/// Generates with scatterers only when `cfg.rician_enabled` is set.
pub fn synth_channel(
    geom: &ArrayGeometry,
    user: Position3,
    radio: &RadioConfig,
    cfg: &ChannelConfig,
    scatterers: &[Scatterer],
    user_id: u8,
) -> Result<CsiSample> {
    let scatterers = if cfg.rician_enabled { scatterers } else { &[] };
    multipath_channel(geom, user, radio, cfg, scatterers, user_id)
}

/// Adds circularly-symmetric complex Gaussian noise of per-entry variance
/// `||h||_F^2 / (M F) * 10^(-snr/10)`.
pub fn add_noise(csi: &CsiSample, spec: &NoiseSpec) -> Result<CsiSample> {
    if spec.snr_db == f64::INFINITY {
        return Ok(csi.clone());
    }
    if spec.snr_db.is_nan() {
        return Err(invalid("SNR must not be NaN"));
    }
    let entries = (csi.antennas() * csi.subcarriers()) as f64;
    let variance = csi.frobenius_norm_sqr() / entries * 10f64.powf(-spec.snr_db / 10.0);
    let sigma = (variance / 2.0).sqrt();
    if !sigma.is_finite() {
        return Err(invalid(format!("noise level diverges at {} dB", spec.snr_db)));
    }
    let mut out = csi.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for c in out.entries_mut() {
        *c += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
    }
    Ok(out)
}
