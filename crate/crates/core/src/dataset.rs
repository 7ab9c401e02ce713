//! On-disk CSI samples and the label index that ties them to positions.
//!
//! Sample file layout, little-endian throughout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "CSI1"
//! 4       1     version (1)
//! 5       1     reserved, 0
//! 6       2     M (antennas), u16
//! 8       2     F (subcarriers), u16
//! 10      2     reserved, 0
//! 12      8*M*F entries, antenna-major, each f32 I then f32 Q
//! ```
//!
//! Entries are stored as `f32`, so a write/read roundtrip is exact for
//! samples whose components are representable in single precision.
//!
//! The index is a CSV `sample_id,user_id,x_mm,y_mm,z_mm` preceded by `#`
//! comment lines carrying `key = value` metadata (topology and radio config).
//! Sample files live next to the index as `<sample_id>.bin`.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::model::{CsiSample, Position3, RadioConfig, SampleId};
use crate::topology::TopologyKind;

pub const SAMPLE_MAGIC: [u8; 4] = *b"CSI1";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 12;
pub const INDEX_FILE: &str = "index.csv";
const INDEX_COLUMNS: &str = "sample_id,user_id,x_mm,y_mm,z_mm";

/// Decoded fixed header of a container file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleHeader {
    pub magic: [u8; 4],
    pub version: u8,
    pub antennas: u16,
    pub subcarriers: u16,
}

impl SampleHeader {
    pub fn body_len(&self) -> u64 {
        8 * u64::from(self.antennas) * u64::from(self.subcarriers)
    }

    pub fn file_len(&self) -> u64 {
        HEADER_LEN as u64 + self.body_len()
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(&self.magic);
        out[4] = self.version;
        out[6..8].copy_from_slice(&self.antennas.to_le_bytes());
        out[8..10].copy_from_slice(&self.subcarriers.to_le_bytes());
        out
    }

    /// Parses and checks magic and version.
    pub fn decode(bytes: &[u8], expected_magic: [u8; 4]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated { expected: HEADER_LEN as u64, found: bytes.len() as u64 });
        }
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[..4]);
        if magic != expected_magic {
            return Err(Error::BadMagic { expected: expected_magic, found: magic });
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(Error::VersionMismatch { expected: FORMAT_VERSION, found: bytes[4] });
        }
        Ok(Self {
            magic,
            version: bytes[4],
            antennas: u16::from_le_bytes([bytes[6], bytes[7]]),
            subcarriers: u16::from_le_bytes([bytes[8], bytes[9]]),
        })
    }
}

/// Expected size of a sample file for an `antennas x subcarriers` matrix.
pub fn sample_file_len(antennas: usize, subcarriers: usize) -> u64 {
    HEADER_LEN as u64 + 8 * antennas as u64 * subcarriers as u64
}

pub fn encode_sample(csi: &CsiSample) -> Result<Vec<u8>> {
    let to_u16 = |n: usize| u16::try_from(n).map_err(|_| Error::DimensionOverflow(n));
    let header = SampleHeader {
        magic: SAMPLE_MAGIC,
        version: FORMAT_VERSION,
        antennas: to_u16(csi.antennas())?,
        subcarriers: to_u16(csi.subcarriers())?,
    };
    let mut out = Vec::with_capacity(header.file_len() as usize);
    out.extend_from_slice(&header.encode());
    for c in csi.entries() {
        out.extend_from_slice(&(c.re as f32).to_le_bytes());
        out.extend_from_slice(&(c.im as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_sample(bytes: &[u8]) -> Result<CsiSample> {
    let header = SampleHeader::decode(bytes, SAMPLE_MAGIC)?;
    let expected = header.file_len();
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::Truncated { expected, found });
    }
    if found > expected {
        return Err(Error::DimensionMismatch(format!(
            "{} trailing bytes after a {}x{} body",
            found - expected,
            header.antennas,
            header.subcarriers
        )));
    }
    let f32_at = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
    let h = (0..header.antennas as usize * header.subcarriers as usize)
        .map(|i| {
            let off = HEADER_LEN + 8 * i;
            Complex64::new(f64::from(f32_at(off)), f64::from(f32_at(off + 4)))
        })
        .collect();
    CsiSample::new(header.antennas as usize, header.subcarriers as usize, h)
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(
        ".{name}.{}.{}.tmp",
        std::process::id(),
        TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| {
        let mut file = File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_data()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Writes one sample file atomically; returns the byte count.
pub fn write_sample(path: impl AsRef<Path>, csi: &CsiSample) -> Result<u64> {
    let bytes = encode_sample(csi)?;
    write_atomic(path.as_ref(), &bytes)?;
    Ok(bytes.len() as u64)
}

/// Reads a sample file. When the file stem is a valid sample id it is
/// attached to the returned sample.
pub fn read_sample(path: impl AsRef<Path>) -> Result<CsiSample> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let mut csi = decode_sample(&bytes)?;
    if let Some(id) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()) {
        csi.sample_id = id;
    }
    Ok(csi)
}

/// Header of a sample file without reading the body.
pub fn read_header(path: impl AsRef<Path>) -> Result<(SampleHeader, u64)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut file = File::open(path)?;
    let len = file.metadata()?.len();
    let mut buf = Vec::with_capacity(HEADER_LEN);
    Read::by_ref(&mut file).take(HEADER_LEN as u64).read_to_end(&mut buf)?;
    Ok((SampleHeader::decode(&buf, SAMPLE_MAGIC)?, len))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample_id: SampleId,
    pub path: PathBuf,
    pub label: Position3,
    pub user_id: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub records: Vec<SampleRecord>,
    pub topology: Option<TopologyKind>,
    pub radio: RadioConfig,
    /// Directory holding the sample files.
    pub base_dir: PathBuf,
}

impl DatasetIndex {
    pub fn new(base_dir: impl Into<PathBuf>, topology: Option<TopologyKind>, radio: RadioConfig) -> Self {
        Self { records: Vec::new(), topology, radio, base_dir: base_dir.into() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn sample_path(&self, id: &SampleId) -> PathBuf {
        self.base_dir.join(format!("{id}.bin"))
    }

    /// Appends a record for `id`; rejects ids already present.
    pub fn push(&mut self, sample_id: SampleId, label: Position3, user_id: u8) -> Result<()> {
        if self.records.iter().any(|r| r.sample_id == sample_id) {
            return Err(Error::DuplicateId(sample_id.to_string()));
        }
        let path = self.sample_path(&sample_id);
        self.records.push(SampleRecord { sample_id, path, label, user_id });
        Ok(())
    }

    /// Lazily reads each sample in index order; only one is resident at a time.
    pub fn samples(&self) -> impl Iterator<Item = Result<(SampleRecord, CsiSample)>> + '_ {
        self.records.iter().map(|rec| {
            let mut csi = read_sample(&rec.path)?;
            csi.label = Some(rec.label);
            csi.sample_id = rec.sample_id;
            csi.set_user_id(rec.user_id)?;
            Ok((rec.clone(), csi))
        })
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        if let Some(t) = self.topology {
            writeln!(out, "# topology = {t}")?;
        }
        for line in self.radio.to_key_values().render().lines() {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "{INDEX_COLUMNS}")?;
        for r in &self.records {
            let p = r.label;
            writeln!(out, "{},{},{},{},{}", r.sample_id, r.user_id, p.x, p.y, p.z)?;
        }
        Ok(())
    }

    /// Writes the index CSV atomically.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        write_atomic(path.as_ref(), &buf)
    }
}

/// Loads an index CSV. Sample files are resolved next to it and must exist.
pub fn load_index(path: impl AsRef<Path>) -> Result<DatasetIndex> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let reader = BufReader::new(File::open(path)?);

    let mut meta = String::new();
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut header_seen = false;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            meta.push_str(comment);
            meta.push('\n');
            continue;
        }
        if !header_seen {
            if trimmed != INDEX_COLUMNS {
                return Err(Error::Malformed {
                    line: lineno,
                    message: format!("expected header `{INDEX_COLUMNS}`"),
                });
            }
            header_seen = true;
            continue;
        }
        let malformed = |message: String| Error::Malformed { line: lineno, message };
        let cols: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if cols.len() != 5 {
            return Err(malformed(format!("expected 5 columns, got {}", cols.len())));
        }
        let sample_id: SampleId = cols[0]
            .parse()
            .map_err(|_| malformed(format!("invalid sample id {:?}", cols[0])))?;
        let user_id: u8 = cols[1]
            .parse()
            .ok()
            .filter(|u| *u < crate::model::MAX_USERS)
            .ok_or_else(|| malformed(format!("invalid user id {:?}", cols[1])))?;
        let mut xyz = [0.0f64; 3];
        for (slot, raw) in xyz.iter_mut().zip(&cols[2..]) {
            *slot = raw
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| malformed(format!("invalid coordinate {raw:?}")))?;
        }
        if !seen.insert(sample_id) {
            return Err(Error::DuplicateId(sample_id.to_string()));
        }
        let file = base_dir.join(format!("{sample_id}.bin"));
        if !file.exists() {
            return Err(Error::MissingFile(file));
        }
        records.push(SampleRecord {
            sample_id,
            path: file,
            label: Position3::new(xyz[0], xyz[1], xyz[2]),
            user_id,
        });
    }

    let kv = KeyValues::parse(&meta)?;
    let topology = kv.get("topology").map(str::parse).transpose()?;
    let radio = RadioConfig::from_key_values(&kv)?;
    Ok(DatasetIndex { records, topology, radio, base_dir })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(m: usize, f: usize, seed: u32) -> CsiSample {
        CsiSample::from_fn(m, f, |a, k| {
            let v = (a * 31 + k * 7) as u32 ^ seed;
            Complex64::new(v as f32 as f64 * 0.25, -(v as f32 as f64) * 0.5)
        })
        .unwrap()
    }

    #[test]
    fn file_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        assert_eq!(write_sample(&p, &sample(64, 100, 1)).unwrap(), 51_212);
        assert_eq!(fs::metadata(&p).unwrap().len(), 51_212);
        assert_eq!(write_sample(&p, &sample(1, 1, 1)).unwrap(), 20);
        assert_eq!(sample_file_len(64, 100), 51_212);
    }

    #[test]
    fn header_bytes() {
        let bytes = encode_sample(&sample(3, 2, 0)).unwrap();
        assert_eq!(&bytes[..12], &[b'C', b'S', b'I', b'1', 1, 0, 3, 0, 2, 0, 0, 0]);
    }

    #[test]
    fn roundtrip_and_id_from_stem() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("000042.bin");
        let s = sample(4, 5, 9);
        write_sample(&p, &s).unwrap();
        let back = read_sample(&p).unwrap();
        assert_eq!(back.entries(), s.entries());
        assert_eq!(back.sample_id.as_str(), "000042");
    }

    #[test]
    fn distinct_error_kinds() {
        let good = encode_sample(&sample(2, 2, 0)).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_sample(&bad_magic), Err(Error::BadMagic { .. })));

        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(matches!(decode_sample(&bad_version), Err(Error::VersionMismatch { found: 2, .. })));

        assert!(matches!(decode_sample(&good[..good.len() - 1]), Err(Error::Truncated { .. })));
        assert!(matches!(decode_sample(&good[..5]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn dimension_overflow() {
        let wide = CsiSample::new(1, 70_000, vec![Complex64::new(0.0, 0.0); 70_000]).unwrap();
        assert!(matches!(encode_sample(&wide), Err(Error::DimensionOverflow(70_000))));
    }

    #[test]
    fn no_temp_files_left_behind() {
        let dir = tempfile::tempdir().unwrap();
        write_sample(dir.path().join("x.bin"), &sample(2, 2, 0)).unwrap();
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("x.bin")]);
    }

    #[test]
    fn index_roundtrip_and_streaming() {
        let dir = tempfile::tempdir().unwrap();
        let mut idx = DatasetIndex::new(dir.path(), Some(TopologyKind::Da), RadioConfig::default());
        for i in 0..3 {
            let id = SampleId::from_counter(i).unwrap();
            write_sample(idx.sample_path(&id), &sample(2, 3, i as u32)).unwrap();
            idx.push(id, Position3::new(i as f64 * 5.0, 1000.25, 1000.0), (i % 12) as u8).unwrap();
        }
        let path = dir.path().join(INDEX_FILE);
        idx.save(&path).unwrap();
        let loaded = load_index(&path).unwrap();
        assert_eq!(loaded, idx);
        let streamed: Vec<_> = loaded.samples().collect::<Result<_>>().unwrap();
        assert_eq!(streamed.len(), 3);
        assert_eq!(streamed[2].1.label, Some(Position3::new(10.0, 1000.25, 1000.0)));
        assert_eq!(streamed[1].1.user_id(), 1);
    }

    #[test]
    fn empty_index_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(INDEX_FILE);
        fs::write(&path, "").unwrap();
        let idx = load_index(&path).unwrap();
        assert!(idx.is_empty());
        assert_eq!(idx.topology, None);
    }

    #[test]
    fn duplicate_ids_named() {
        let dir = tempfile::tempdir().unwrap();
        write_sample(dir.path().join("000001.bin"), &sample(1, 1, 0)).unwrap();
        let path = dir.path().join(INDEX_FILE);
        fs::write(&path, format!("{INDEX_COLUMNS}\n000001,0,0,0,0\n000001,1,5,0,0\n")).unwrap();
        match load_index(&path) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "000001"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(INDEX_FILE);
        fs::write(&path, format!("{INDEX_COLUMNS}\n000001,0,zero,0,0\n")).unwrap();
        assert!(matches!(load_index(&path), Err(Error::Malformed { line: 2, .. })));
        fs::write(&path, format!("{INDEX_COLUMNS}\n000002,0,0,0,0\n")).unwrap();
        assert!(matches!(load_index(&path), Err(Error::MissingFile(_))));
        assert!(matches!(load_index(dir.path().join("nope.csv")), Err(Error::MissingFile(_))));
    }
}
