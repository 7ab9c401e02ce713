//! Antenna array layouts and the room frame they live in.
//!
//! The frame puts the URA centre at the horizontal origin with the array in
//! the `y = 0` plane facing `+y`. The four positioner tables sit in a 2x2
//! block starting `standoff_mm` in front of the array. Every offset here is a
//! placeholder for the measured scene coordinates and can be overridden
//! from a config file or replaced wholesale by a coordinate list.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::config::KeyValues;
use crate::error::{invalid, Error, Result};
use crate::grid::SampleGrid;
use crate::model::Position3;

/// Elements in every testbed topology.
pub const ELEMENT_COUNT: usize = 64;
/// Elements per side of the URA and per DA panel.
pub const PANEL_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopologyKind {
    Ura,
    Ula,
    Da,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 3] = [TopologyKind::Ura, TopologyKind::Ula, TopologyKind::Da];

    pub fn as_str(&self) -> &'static str {
        match self {
            TopologyKind::Ura => "ura",
            TopologyKind::Ula => "ula",
            TopologyKind::Da => "da",
        }
    }
}

impl FromStr for TopologyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ura" => Ok(TopologyKind::Ura),
            "ula" => Ok(TopologyKind::Ula),
            "da" => Ok(TopologyKind::Da),
            other => Err(Error::UnknownTopology(other.to_string())),
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayElement {
    pub position: Position3,
    /// Boresight direction, unit norm.
    pub facing: Position3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    pub kind: TopologyKind,
    pub elements: Vec<ArrayElement>,
}

impl ArrayGeometry {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Reads `element_id,x_mm,y_mm,z_mm,nx,ny,nz`. Rows may come in any order;
    /// ids must cover `0..n` exactly once. Facing vectors are renormalised.
    pub fn from_coordinate_csv(path: impl AsRef<Path>, kind: TopologyKind) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut slots: Vec<Option<ArrayElement>> = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let line = row + 2;
            let malformed = |message: String| Error::Malformed { line, message };
            if record.len() != 7 {
                return Err(malformed(format!("expected 7 columns, got {}", record.len())));
            }
            let id: usize = record[0]
                .parse()
                .map_err(|_| malformed(format!("bad element id {:?}", &record[0])))?;
            let mut v = [0.0f64; 6];
            for (i, slot) in v.iter_mut().enumerate() {
                *slot = record[i + 1]
                    .parse()
                    .map_err(|_| malformed(format!("bad number {:?}", &record[i + 1])))?;
            }
            let position = Position3::new(v[0], v[1], v[2]);
            let facing = Position3::new(v[3], v[4], v[5])
                .normalized()
                .ok_or_else(|| malformed("zero facing vector".into()))?;
            if !position.is_finite() {
                return Err(malformed("non-finite position".into()));
            }
            if slots.len() <= id {
                slots.resize(id + 1, None);
            }
            if slots[id].replace(ArrayElement { position, facing }).is_some() {
                return Err(malformed(format!("duplicate element id {id}")));
            }
        }
        let elements = slots
            .into_iter()
            .enumerate()
            .map(|(i, e)| e.ok_or_else(|| invalid(format!("element id {i} missing from list"))))
            .collect::<Result<Vec<_>>>()?;
        if elements.is_empty() {
            return Err(Error::Empty("coordinate list has no elements".into()));
        }
        Ok(Self { kind, elements })
    }

    pub fn write_coordinate_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "element_id,x_mm,y_mm,z_mm,nx,ny,nz")?;
        for (i, e) in self.elements.iter().enumerate() {
            let (p, n) = (e.position, e.facing);
            writeln!(out, "{i},{},{},{},{},{},{}", p.x, p.y, p.z, n.x, n.y, n.z)?;
        }
        Ok(())
    }
}

/// Placement of the positioner tables and the user antennas.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayout {
    /// Distance from the URA plane to the near edge of the ROI.
    pub standoff_mm: f64,
    /// Side of one positioner's square work area.
    pub positioner_extent_mm: f64,
    /// Clearance between neighbouring work areas.
    pub positioner_gap_mm: f64,
    pub user_height_mm: f64,
    pub resolution_mm: f64,
}

impl Default for SceneLayout {
    fn default() -> Self {
        Self {
            standoff_mm: 1000.0,
            positioner_extent_mm: 1250.0,
            positioner_gap_mm: 50.0,
            user_height_mm: 1000.0,
            resolution_mm: 5.0,
        }
    }
}

impl SceneLayout {
    pub const POSITIONERS: u8 = 4;

    pub fn roi_width_mm(&self) -> f64 {
        2.0 * self.positioner_extent_mm + self.positioner_gap_mm
    }

    pub fn roi_centre(&self) -> Position3 {
        Position3::new(0.0, self.standoff_mm + self.roi_width_mm() / 2.0, self.user_height_mm)
    }

    /// Work area of positioner `id` (0..4): columns left to right, rows near to far.
    pub fn positioner_grid(&self, id: u8) -> Result<SampleGrid> {
        if id >= Self::POSITIONERS {
            return Err(invalid(format!("positioner id {id} outside [0, 4)")));
        }
        let pitch = self.positioner_extent_mm + self.positioner_gap_mm;
        let col = f64::from(id % 2);
        let row = f64::from(id / 2);
        let origin = Position3::new(
            -self.roi_width_mm() / 2.0 + col * pitch,
            self.standoff_mm + row * pitch,
            self.user_height_mm,
        );
        SampleGrid::new(
            origin,
            self.positioner_extent_mm,
            self.positioner_extent_mm,
            self.resolution_mm,
            id,
        )
    }

    pub fn positioner_grids(&self) -> Result<Vec<SampleGrid>> {
        (0..Self::POSITIONERS).map(|id| self.positioner_grid(id)).collect()
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut s = Self::default();
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = kv.parsed(stringify!($field))? { s.$field = v; }
            )*};
        }
        take!(standoff_mm, positioner_extent_mm, positioner_gap_mm, user_height_mm, resolution_mm);
        if !(s.resolution_mm > 0.0) || s.positioner_extent_mm < 0.0 || s.positioner_gap_mm < 0.0 {
            return Err(invalid("layout extents must be nonnegative and resolution positive"));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyParams {
    /// Centre-to-centre element pitch.
    pub spacing_mm: f64,
    pub array_height_mm: f64,
    /// Distance from the ROI centre to each DA panel centre.
    pub da_radius_mm: f64,
    /// Point the DA panels surround and face.
    pub roi_centre: Position3,
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self::for_layout(&SceneLayout::default())
    }
}

impl TopologyParams {
    pub fn for_layout(layout: &SceneLayout) -> Self {
        Self {
            spacing_mm: 70.0,
            array_height_mm: 1000.0,
            da_radius_mm: 2500.0,
            roi_centre: layout.roi_centre(),
        }
    }

    pub fn from_key_values(kv: &KeyValues, layout: &SceneLayout) -> Result<Self> {
        let mut p = Self::for_layout(layout);
        if let Some(v) = kv.parsed("spacing_mm")? {
            p.spacing_mm = v;
        }
        if let Some(v) = kv.parsed("array_height_mm")? {
            p.array_height_mm = v;
        }
        if let Some(v) = kv.parsed("da_radius_mm")? {
            p.da_radius_mm = v;
        }
        Ok(p)
    }
}

/// Lays out the 64 elements of `kind`.
///
/// * URA: 8x8 in the `y = 0` plane, centred at `array_height_mm`, facing `+y`.
///   Index is `row * 8 + col` with rows bottom to top and columns along `+x`.
/// * ULA: 64 elements along `x` at `y = 0`, centred on the origin, facing `+y`.
///   The first and last centres are `63 * spacing` apart.
/// * DA: eight 8-element panels whose centres sit on a circle of
///   `da_radius_mm` around the ROI centre at angles `k * 45 deg`, each panel
///   tangent to the circle and facing the centre.
pub fn build_topology(kind: TopologyKind, params: &TopologyParams) -> Result<ArrayGeometry> {
    let s = params.spacing_mm;
    if !(s.is_finite() && s > 0.0) {
        return Err(invalid(format!("element spacing must be positive, got {s}")));
    }
    if !params.array_height_mm.is_finite() || !params.roi_centre.is_finite() {
        return Err(invalid("array height and ROI centre must be finite"));
    }
    let h = params.array_height_mm;
    let boresight = Position3::new(0.0, 1.0, 0.0);
    let centred = |i: usize, n: usize| (i as f64 - (n as f64 - 1.0) / 2.0) * s;

    let elements = match kind {
        TopologyKind::Ura => (0..ELEMENT_COUNT)
            .map(|i| {
                let (row, col) = (i / PANEL_SIZE, i % PANEL_SIZE);
                ArrayElement {
                    position: Position3::new(centred(col, PANEL_SIZE), 0.0, h + centred(row, PANEL_SIZE)),
                    facing: boresight,
                }
            })
            .collect(),
        TopologyKind::Ula => (0..ELEMENT_COUNT)
            .map(|i| ArrayElement {
                position: Position3::new(centred(i, ELEMENT_COUNT), 0.0, h),
                facing: boresight,
            })
            .collect(),
        TopologyKind::Da => {
            let r = params.da_radius_mm;
            if !(r.is_finite() && r > 0.0) {
                return Err(invalid(format!("octagon radius must be positive, got {r}")));
            }
            let c = params.roi_centre;
            let mut elements = Vec::with_capacity(ELEMENT_COUNT);
            for panel in 0..ELEMENT_COUNT / PANEL_SIZE {
                let phi = panel as f64 * std::f64::consts::FRAC_PI_4;
                let (sin, cos) = phi.sin_cos();
                let centre = Position3::new(c.x + r * cos, c.y + r * sin, h);
                let facing = Position3::new(-cos, -sin, 0.0);
                let tangent = Position3::new(-sin, cos, 0.0);
                for j in 0..PANEL_SIZE {
                    elements.push(ArrayElement {
                        position: centre + tangent * centred(j, PANEL_SIZE),
                        facing,
                    });
                }
            }
            elements
        }
    };
    Ok(ArrayGeometry { kind, elements })
}
