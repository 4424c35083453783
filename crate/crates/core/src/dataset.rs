//! Signed-distance training points built from scans.
//!
//! Every surface hit becomes an *anchor*: its normal is approximated from the
//! nearest same-obstacle neighbour in the scan, and points are laid out along
//! that normal at offsets pΔ for p ∈ [−n₋, n₊], each labeled with pΔ.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lidar::Scan;
use crate::Vec2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OffsetConfig {
    pub delta: f64,
    pub n_minus: usize,
    pub n_plus: usize,
}

impl Default for OffsetConfig {
    fn default() -> Self {
        OffsetConfig {
            delta: 0.1,
            n_minus: 1,
            n_plus: 5,
        }
    }
}

impl OffsetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::ConfigInvalid("offset delta must be > 0".into()));
        }
        Ok(())
    }

    pub fn points_per_anchor(&self) -> usize {
        self.n_minus + self.n_plus + 1
    }

    pub fn offsets(&self) -> impl Iterator<Item = i64> {
        -(self.n_minus as i64)..=(self.n_plus as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub z: Vec2,
    pub y: f64,
    pub obstacle_id: usize,
    pub anchor: usize,
}

/// Labeled points; samples sharing an anchor are stored contiguously.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDataset {
    pub samples: Vec<Sample>,
}

impl SurfaceDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn inputs(&self) -> Vec<Vec2> {
        self.samples.iter().map(|s| s.z).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y).collect()
    }

    /// (z, y) pairs.
    pub fn pairs(&self) -> Vec<(Vec2, f64)> {
        self.samples.iter().map(|s| (s.z, s.y)).collect()
    }

    /// Contiguous runs of samples that share an anchor.
    pub fn anchor_groups(&self) -> impl Iterator<Item = &[Sample]> {
        self.samples.chunk_by(|a, b| a.anchor == b.anchor)
    }

    pub fn anchor_count(&self) -> usize {
        self.anchor_groups().count()
    }

    /// Restricts to one obstacle, keeping anchor numbering.
    pub fn for_obstacle(&self, obstacle_id: usize) -> SurfaceDataset {
        SurfaceDataset {
            samples: self
                .samples
                .iter()
                .filter(|s| s.obstacle_id == obstacle_id)
                .copied()
                .collect(),
        }
    }

    /// Appends `other`, renumbering its anchors past the current maximum so
    /// groups stay distinct.
    pub fn append(&mut self, other: &SurfaceDataset) {
        let base = self.samples.iter().map(|s| s.anchor + 1).max().unwrap_or(0);
        let mut remap = std::collections::HashMap::new();
        for s in &other.samples {
            let next = base + remap.len();
            let a = *remap.entry(s.anchor).or_insert(next);
            self.samples.push(Sample { anchor: a, ..*s });
        }
    }

    /// `x,y,label,obstacle_id,anchor`
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,label,obstacle_id,anchor")?;
        for s in &self.samples {
            writeln!(w, "{},{},{},{},{}", s.z.x, s.z.y, s.y, s.obstacle_id, s.anchor)?;
        }
        Ok(())
    }
}

/// The surface point of an anchor group (its label-0 sample).
pub fn anchor_point(group: &[Sample]) -> Option<Vec2> {
    group.iter().find(|s| s.y == 0.0).map(|s| s.z)
}

/// Unit normal at hit `hit_index`, perpendicular to the segment joining it to
/// its nearest neighbour on the same obstacle and oriented toward the sensor.
pub fn approximate_normal(scan: &Scan, hit_index: usize) -> Result<Vec2> {
    let hit = &scan.hits[hit_index];
    let neighbour = scan
        .hits
        .iter()
        .enumerate()
        .filter(|(j, h)| *j != hit_index && h.obstacle_id == hit.obstacle_id)
        .map(|(_, h)| (h.point, (h.point - hit.point).norm_squared()))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let insufficient = || Error::InsufficientNeighbors {
        hit: hit_index,
        obstacle: hit.obstacle_id,
    };
    let (other, d2) = neighbour.ok_or_else(insufficient)?;
    if d2 == 0.0 {
        return Err(insufficient());
    }
    let seg = other - hit.point;
    let mut n = Vec2::new(-seg.y, seg.x) / seg.norm();
    if n.dot(&(scan.sensor_pose.position() - hit.point)) < 0.0 {
        n = -n;
    }
    Ok(n)
}

/// Builds the offset dataset for every hit that admits a normal; hits that do
/// not are skipped. Anchor ids are hit indices within the scan.
pub fn build_offset_dataset(scan: &Scan, cfg: &OffsetConfig) -> SurfaceDataset {
    let mut samples = Vec::with_capacity(scan.hits.len() * cfg.points_per_anchor());
    for (i, hit) in scan.hits.iter().enumerate() {
        let n = match approximate_normal(scan, i) {
            Ok(n) => n,
            Err(e) => {
                log::debug!("skipping hit {i}: {e}");
                continue;
            }
        };
        for p in cfg.offsets() {
            let off = p as f64 * cfg.delta;
            samples.push(Sample {
                z: hit.point + n * off,
                y: off,
                obstacle_id: hit.obstacle_id,
                anchor: i,
            });
        }
    }
    SurfaceDataset { samples }
}
