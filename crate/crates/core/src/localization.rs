//! Fingerprint localization: deterministic CSI features and k-nearest-neighbour
//! matching against a labelled database.
//!
//! Any model mapping CSI to a position can stand in through [`Localizer`].

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::{write_atomic, FORMAT_VERSION};
use crate::error::{invalid, Error, Result};
use crate::model::{CsiSample, Position3, SampleId};
use crate::topology::TopologyKind;

pub const FINGERPRINT_MAGIC: [u8; 4] = *b"FPDB";
const FPDB_HEADER_LEN: usize = 16;
/// Guard added to neighbour distances under inverse-distance weighting.
pub const IDW_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureMode {
    /// Interleaved re/im of every entry, divided by the Frobenius norm.
    #[default]
    RawUnitNorm,
    /// Entry magnitudes, unit-normalised.
    MagnitudeOnly,
    /// Phase of every entry relative to antenna 0 on the same subcarrier, in `(-pi, pi]`.
    PhaseRelative,
}

impl FeatureMode {
    fn code(self) -> u8 {
        match self {
            FeatureMode::RawUnitNorm => 0,
            FeatureMode::MagnitudeOnly => 1,
            FeatureMode::PhaseRelative => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(FeatureMode::RawUnitNorm),
            1 => Ok(FeatureMode::MagnitudeOnly),
            2 => Ok(FeatureMode::PhaseRelative),
            other => Err(invalid(format!("unknown feature mode code {other}"))),
        }
    }
}

impl FromStr for FeatureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "raw" | "raw_unit_norm" => Ok(FeatureMode::RawUnitNorm),
            "magnitude" | "magnitude_only" => Ok(FeatureMode::MagnitudeOnly),
            "phase" | "phase_relative" | "phase_relative_to_first_antenna" => Ok(FeatureMode::PhaseRelative),
            other => Err(invalid(format!("unknown feature mode `{other}`"))),
        }
    }
}

pub fn extract_features(csi: &CsiSample, mode: FeatureMode) -> Result<Vec<f64>> {
    let fro = csi.frobenius_norm_sqr().sqrt();
    if fro == 0.0 {
        return Err(invalid(format!("sample {} has an all-zero channel", csi.sample_id)));
    }
    Ok(match mode {
        FeatureMode::RawUnitNorm => csi.entries().iter().flat_map(|c| [c.re / fro, c.im / fro]).collect(),
        FeatureMode::MagnitudeOnly => csi.entries().iter().map(|c| c.norm() / fro).collect(),
        FeatureMode::PhaseRelative => {
            let f = csi.subcarriers();
            csi.entries()
                .iter()
                .enumerate()
                .map(|(i, c)| (c * csi.get(0, i % f).conj()).arg())
                .collect()
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDb {
    pub mode: FeatureMode,
    pub topology: Option<TopologyKind>,
    pub ids: Vec<SampleId>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<Position3>,
}

impl FingerprintDb {
    pub fn new(mode: FeatureMode, topology: Option<TopologyKind>) -> Self {
        Self { mode, topology, ids: Vec::new(), features: Vec::new(), labels: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn push(&mut self, csi: &CsiSample) -> Result<()> {
        let label = csi.label.ok_or_else(|| Error::Unlabelled(csi.sample_id.to_string()))?;
        let feature = extract_features(csi, self.mode)?;
        if !self.is_empty() && feature.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "feature length {} differs from database length {}",
                feature.len(),
                self.dim()
            )));
        }
        self.ids.push(csi.sample_id);
        self.features.push(feature);
        self.labels.push(label);
        Ok(())
    }

    /// Serialises to the `FPDB` container:
    ///
    /// ```text
    /// 0   4  magic "FPDB"
    /// 4   1  version (1)
    /// 5   1  feature mode (0 raw, 1 magnitude, 2 phase)
    /// 6   1  topology (0 none, 1 ura, 2 ula, 3 da)
    /// 7   1  reserved
    /// 8   4  entry count, u32
    /// 12  4  feature length, u32
    /// 16  per entry: sample id (6 B), 2 reserved, x y z (f64), features (f64)
    /// ```
    pub fn encode(&self) -> Result<Vec<u8>> {
        let count = u32::try_from(self.len()).map_err(|_| Error::DimensionOverflow(self.len()))?;
        let dim = u32::try_from(self.dim()).map_err(|_| Error::DimensionOverflow(self.dim()))?;
        let mut out = Vec::with_capacity(FPDB_HEADER_LEN + self.len() * (32 + 8 * self.dim()));
        out.extend_from_slice(&FINGERPRINT_MAGIC);
        out.push(FORMAT_VERSION);
        out.push(self.mode.code());
        out.push(match self.topology {
            None => 0,
            Some(TopologyKind::Ura) => 1,
            Some(TopologyKind::Ula) => 2,
            Some(TopologyKind::Da) => 3,
        });
        out.push(0);
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&dim.to_le_bytes());
        for ((id, label), feature) in self.ids.iter().zip(&self.labels).zip(&self.features) {
            out.extend_from_slice(id.as_bytes());
            out.extend_from_slice(&[0, 0]);
            for v in [label.x, label.y, label.z].iter().chain(feature) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FPDB_HEADER_LEN {
            return Err(Error::Truncated { expected: FPDB_HEADER_LEN as u64, found: bytes.len() as u64 });
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != FINGERPRINT_MAGIC {
            return Err(Error::BadMagic { expected: FINGERPRINT_MAGIC, found: magic });
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(Error::VersionMismatch { expected: FORMAT_VERSION, found: bytes[4] });
        }
        let mode = FeatureMode::from_code(bytes[5])?;
        let topology = match bytes[6] {
            0 => None,
            1 => Some(TopologyKind::Ura),
            2 => Some(TopologyKind::Ula),
            3 => Some(TopologyKind::Da),
            other => return Err(invalid(format!("unknown topology code {other}"))),
        };
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes")) as usize;
        let (count, dim) = (u32_at(8), u32_at(12));
        let stride = 32 + 8 * dim;
        let expected = (FPDB_HEADER_LEN + count * stride) as u64;
        if (bytes.len() as u64) < expected {
            return Err(Error::Truncated { expected, found: bytes.len() as u64 });
        }
        if (bytes.len() as u64) > expected {
            return Err(Error::DimensionMismatch("trailing bytes after fingerprint entries".into()));
        }
        let f64_at = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes"));
        let mut db = FingerprintDb::new(mode, topology);
        for e in 0..count {
            let base = FPDB_HEADER_LEN + e * stride;
            db.ids.push(SampleId::from_bytes(&bytes[base..base + 6])?);
            db.labels.push(Position3::new(f64_at(base + 8), f64_at(base + 16), f64_at(base + 24)));
            db.features.push((0..dim).map(|i| f64_at(base + 32 + 8 * i)).collect());
        }
        Ok(db)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.encode()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::decode(&fs::read(path)?)
    }
}

/// One feature per labelled sample, in input order. Only the database itself
/// grows; samples are dropped as soon as their feature is taken.
pub fn build_fingerprints<I>(samples: I, mode: FeatureMode, topology: Option<TopologyKind>) -> Result<FingerprintDb>
where
    I: IntoIterator<Item = Result<CsiSample>>,
{
    let mut db = FingerprintDb::new(mode, topology);
    for sample in samples {
        db.push(&sample?)?;
    }
    Ok(db)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    Uniform,
    #[default]
    InverseDistance,
}

impl FromStr for Weighting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(Weighting::Uniform),
            "inverse_distance" | "idw" => Ok(Weighting::InverseDistance),
            other => Err(invalid(format!("unknown weighting `{other}`"))),
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k nearest database entries to `feature`, skipping `exclude`; ties keep
/// database order. Returns `(index, euclidean distance)`.
fn nearest(db: &FingerprintDb, feature: &[f64], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = db
        .features
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, f)| (i, squared_distance(f, feature)))
        .collect();
    // stable: equal distances stay in database order
    scored.sort_by(|a, b| a.1.total_cmp(&b.1));
    scored.truncate(k);
    scored.into_iter().map(|(i, d)| (i, d.sqrt())).collect()
}

fn combine(db: &FingerprintDb, neighbours: &[(usize, f64)], weighting: Weighting) -> Position3 {
    let mut acc = Position3::ORIGIN;
    let mut total = 0.0;
    for &(i, d) in neighbours {
        let w = match weighting {
            Weighting::Uniform => 1.0,
            Weighting::InverseDistance => 1.0 / (d + IDW_EPSILON),
        };
        acc = acc + db.labels[i] * w;
        total += w;
    }
    acc * (1.0 / total)
}

fn check_k(db: &FingerprintDb, k: usize, available: usize) -> Result<()> {
    if db.is_empty() {
        return Err(Error::Empty("fingerprint database is empty".into()));
    }
    if k == 0 || k > available {
        return Err(invalid(format!("k = {k} must be in [1, {available}]")));
    }
    Ok(())
}

/// (Weighted) mean label of the `k` nearest fingerprints in feature space.
pub fn knn_locate(db: &FingerprintDb, query: &CsiSample, k: usize, weighting: Weighting) -> Result<Position3> {
    check_k(db, k, db.len())?;
    let feature = extract_features(query, db.mode)?;
    if feature.len() != db.dim() {
        return Err(Error::DimensionMismatch(format!(
            "query feature length {} vs database {}",
            feature.len(),
            db.dim()
        )));
    }
    Ok(combine(db, &nearest(db, &feature, k, None), weighting))
}

/// Maps CSI to a position estimate.
pub trait Localizer {
    fn locate(&self, csi: &CsiSample) -> Result<Position3>;
}

#[derive(Debug, Clone)]
pub struct KnnLocalizer<'a> {
    pub db: &'a FingerprintDb,
    pub k: usize,
    pub weighting: Weighting,
}

impl Localizer for KnnLocalizer<'_> {
    fn locate(&self, csi: &CsiSample) -> Result<Position3> {
        knn_locate(self.db, csi, self.k, self.weighting)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationReport {
    /// Per-query Euclidean error, mm.
    pub errors: Vec<(SampleId, f64)>,
    pub mean_mm: f64,
    pub median_mm: f64,
    /// Nearest-rank 95th percentile.
    pub p95_mm: f64,
}

impl LocalizationReport {
    pub fn from_errors(errors: Vec<(SampleId, f64)>) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::Empty("no localization queries".into()));
        }
        let mut sorted: Vec<f64> = errors.iter().map(|e| e.1).collect();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mean_mm = sorted.iter().sum::<f64>() / n as f64;
        let median_mm = if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Ok(Self { errors, mean_mm, median_mm, p95_mm: sorted[rank - 1] })
    }

    /// `sample_id,err_mm`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "sample_id,err_mm")?;
        for (id, e) in &self.errors {
            writeln!(out, "{id},{e:.6}")?;
        }
        Ok(())
    }
}

/// Localises every labelled test sample with any [`Localizer`].
pub fn evaluate<L, I>(localizer: &L, test: I) -> Result<LocalizationReport>
where
    L: Localizer + ?Sized,
    I: IntoIterator<Item = Result<CsiSample>>,
{
    let mut errors = Vec::new();
    for sample in test {
        let sample = sample?;
        let truth = sample.label.ok_or_else(|| Error::Unlabelled(sample.sample_id.to_string()))?;
        let estimate = localizer.locate(&sample)?;
        errors.push((sample.sample_id, estimate.distance_mm(&truth)));
    }
    LocalizationReport::from_errors(errors)
}

/// kNN evaluation of `db` on a labelled test set.
pub fn evaluate_localizer<I>(db: &FingerprintDb, test: I, k: usize, weighting: Weighting) -> Result<LocalizationReport>
where
    I: IntoIterator<Item = Result<CsiSample>>,
{
    evaluate(&KnnLocalizer { db, k, weighting }, test)
}

/// Each entry located against all the others.
pub fn leave_one_out(db: &FingerprintDb, k: usize, weighting: Weighting) -> Result<LocalizationReport> {
    check_k(db, k, db.len().saturating_sub(1))?;
    let errors = (0..db.len())
        .map(|i| {
            let est = combine(db, &nearest(db, &db.features[i], k, Some(i)), weighting);
            (db.ids[i], est.distance_mm(&db.labels[i]))
        })
        .collect();
    LocalizationReport::from_errors(errors)
}
