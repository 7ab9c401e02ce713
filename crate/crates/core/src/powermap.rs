//! Spatial maps of received power when beamforming towards one user.

use std::io::Write;

use rayon::prelude::*;

use crate::channel::{synth_channel, ChannelConfig, Scatterer};
use crate::error::{invalid, Error, Result};
use crate::grid::{SampleGrid, Traversal};
use crate::model::{CsiSample, Position3, RadioConfig};
use crate::precoding::{precode, received_power, LinkBudget, PrecodingScheme, PrecodingWeights};
use crate::topology::ArrayGeometry;

#[derive(Debug, Clone, PartialEq)]
pub struct PowerMap {
    pub grid: SampleGrid,
    /// Linear received power per node, raster order (`iy * nx + ix`).
    pub values: Vec<f64>,
    pub target: Option<Position3>,
    /// Divisor applied by [`PowerMap::normalized`]; the map's own maximum
    /// until [`normalize_jointly`] sets a shared one.
    pub reference: f64,
}

impl PowerMap {
    fn from_values(grid: SampleGrid, values: Vec<f64>, target: Option<Position3>) -> Self {
        let reference = max_of(&values);
        Self { grid, values, target, reference }
    }

    pub fn max(&self) -> f64 {
        max_of(&self.values)
    }

    pub fn normalized(&self) -> Vec<f64> {
        if self.reference > 0.0 {
            self.values.iter().map(|v| v / self.reference).collect()
        } else {
            vec![0.0; self.values.len()]
        }
    }

    pub fn normalized_db(&self) -> Vec<f64> {
        self.normalized().into_iter().map(|v| 10.0 * v.log10()).collect()
    }

    /// Raster index of the largest value; lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn argmax_node(&self) -> (usize, usize) {
        let i = self.argmax();
        (i % self.grid.nx(), i / self.grid.nx())
    }

    /// Largest normalised-dB step between 4-neighbour nodes.
    pub fn max_adjacent_db_jump(&self) -> f64 {
        let db = self.normalized_db();
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let mut worst: f64 = 0.0;
        for iy in 0..ny {
            for ix in 0..nx {
                let here = db[iy * nx + ix];
                if ix + 1 < nx {
                    worst = worst.max((db[iy * nx + ix + 1] - here).abs());
                }
                if iy + 1 < ny {
                    worst = worst.max((db[(iy + 1) * nx + ix] - here).abs());
                }
            }
        }
        worst
    }

    /// `x_mm,y_mm,power_db` in raster order, power normalised by the reference.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "x_mm,y_mm,power_db")?;
        let db = self.normalized_db();
        for ((ix, iy), v) in self.grid.indices(Traversal::Raster).into_iter().zip(db) {
            let p = self.grid.node(ix, iy);
            writeln!(out, "{},{},{:.6}", p.x, p.y, v)?;
        }
        Ok(())
    }

    /// Binary 16-bit PGM (P5, big-endian samples). dB values are mapped
    /// linearly from `[min_db, max_db]` onto `[0, 65535]` and clamped.
    /// The top image row is the far edge of the grid (largest `y`).
    pub fn write_pgm(&self, mut out: impl Write, min_db: f64, max_db: f64) -> Result<()> {
        if !(max_db > min_db) {
            return Err(invalid(format!("empty dynamic range {min_db}..{max_db} dB")));
        }
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        write!(out, "P5\n{nx} {ny}\n65535\n")?;
        let db = self.normalized_db();
        let mut body = Vec::with_capacity(nx * ny * 2);
        for iy in (0..ny).rev() {
            for ix in 0..nx {
                let v = db[iy * nx + ix];
                let t = if v.is_nan() { 0.0 } else { ((v - min_db) / (max_db - min_db)).clamp(0.0, 1.0) };
                let gray = (t * 65535.0).round() as u16;
                body.extend_from_slice(&gray.to_be_bytes());
            }
        }
        out.write_all(&body)?;
        Ok(())
    }
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

/// Gives every map the same reference: the maximum over all of them.
pub fn normalize_jointly(maps: &mut [PowerMap]) {
    let reference = maps.iter().map(PowerMap::max).fold(0.0, f64::max);
    for map in maps.iter_mut() {
        map.reference = reference;
    }
}

/// Beam weights towards `target` alone.
fn target_weights(target: &CsiSample, scheme: PrecodingScheme) -> Result<PrecodingWeights> {
    precode(&[target], scheme)
}

/// Power map over measured or precomputed samples, one per grid node in
/// raster order. Weights are computed once from `target`.
pub fn power_map<I>(
    grid: &SampleGrid,
    samples: I,
    target: &CsiSample,
    scheme: PrecodingScheme,
    budget: &LinkBudget,
) -> Result<PowerMap>
where
    I: IntoIterator<Item = Result<CsiSample>>,
{
    let weights = target_weights(target, scheme)?;
    let mut values = Vec::with_capacity(grid.len());
    for sample in samples {
        let sample = sample?;
        if !sample.same_shape(target) {
            return Err(Error::DimensionMismatch(format!(
                "node {} is {}x{}, target is {}x{}",
                values.len(),
                sample.antennas(),
                sample.subcarriers(),
                target.antennas(),
                target.subcarriers()
            )));
        }
        values.push(received_power(&sample, &weights, 0, budget)?.mean);
    }
    if values.len() != grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} samples for a {}-node grid",
            values.len(),
            grid.len()
        )));
    }
    Ok(PowerMap::from_values(grid.clone(), values, target.label))
}

/// Power map over labelled samples in any order. Each sample lands on the
/// grid node nearest its label; every node must be hit exactly once.
pub fn power_map_labelled<I>(
    grid: &SampleGrid,
    samples: I,
    target: &CsiSample,
    scheme: PrecodingScheme,
    budget: &LinkBudget,
) -> Result<PowerMap>
where
    I: IntoIterator<Item = Result<CsiSample>>,
{
    let weights = target_weights(target, scheme)?;
    let nx = grid.nx();
    let mut values: Vec<Option<f64>> = vec![None; grid.len()];
    for sample in samples {
        let sample = sample?;
        let label = sample.label.ok_or_else(|| Error::Unlabelled(sample.sample_id.to_string()))?;
        let (ix, iy) = grid.nearest_node(&label);
        if grid.node(ix, iy).distance_mm(&Position3::new(label.x, label.y, grid.origin.z)) > grid.resolution_mm / 2.0 {
            return Err(invalid(format!("sample {} at {label} is off the grid", sample.sample_id)));
        }
        let slot = &mut values[iy * nx + ix];
        if slot.is_some() {
            return Err(Error::DuplicateId(format!("grid node ({ix}, {iy}) of sample {}", sample.sample_id)));
        }
        *slot = Some(received_power(&sample, &weights, 0, budget)?.mean);
    }
    let missing = values.iter().filter(|v| v.is_none()).count();
    if missing > 0 {
        return Err(Error::DimensionMismatch(format!("{missing} of {} grid nodes have no sample", grid.len())));
    }
    let values = values.into_iter().map(|v| v.unwrap_or_default()).collect();
    Ok(PowerMap::from_values(grid.clone(), values, target.label))
}

/// Everything needed to synthesise the channel at an arbitrary point.
#[derive(Debug, Clone)]
pub struct SyntheticScene<'a> {
    pub geometry: &'a ArrayGeometry,
    pub radio: &'a RadioConfig,
    pub channel: &'a ChannelConfig,
    pub scatterers: &'a [Scatterer],
    pub user_id: u8,
}

impl SyntheticScene<'_> {
    pub fn csi_at(&self, p: Position3) -> Result<CsiSample> {
        synth_channel(self.geometry, p, self.radio, self.channel, self.scatterers, self.user_id)
    }
}

/// Power map over synthetic channels at every node of `grid`.
///
/// Nodes are evaluated in parallel; each node is independent so the result
/// is identical to a sequential evaluation.
pub fn synthetic_power_map(
    grid: &SampleGrid,
    scene: &SyntheticScene<'_>,
    target: Position3,
    scheme: PrecodingScheme,
    budget: &LinkBudget,
) -> Result<PowerMap> {
    let target_csi = scene.csi_at(target)?;
    let weights = target_weights(&target_csi, scheme)?;
    let values = grid
        .indices(Traversal::Raster)
        .into_par_iter()
        .map(|(ix, iy)| {
            let csi = scene.csi_at(grid.node(ix, iy))?;
            Ok(received_power(&csi, &weights, 0, budget)?.mean)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(PowerMap::from_values(grid.clone(), values, Some(target)))
}
