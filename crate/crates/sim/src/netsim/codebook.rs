use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    pub index: usize,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub gain_dbi: f64,
}

impl Beam {
    /// Boresight in the transmitter's local frame.
    pub fn local_direction(&self) -> Vec3 {
        let (az, el) = (self.azimuth_deg.to_radians(), self.elevation_deg.to_radians());
        Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid codebook: {0}")]
pub struct CodebookError(pub String);

/// Transmit beams, swept in index order. A path is served at full gain only
/// by the beam whose boresight is angularly closest to the path's departure
/// direction; every other beam sees it at the sidelobe gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamCodebook {
    beams: Vec<Beam>,
    pub sweep_dwell_s: f64,
    pub sidelobe_gain_dbi: f64,
}

impl BeamCodebook {
    pub fn new(mut beams: Vec<Beam>, sweep_dwell_s: f64, sidelobe_gain_dbi: f64) -> Result<Self, CodebookError> {
        if beams.is_empty() {
            return Err(CodebookError("codebook has no beams".into()));
        }
        beams.sort_by_key(|b| b.index);
        if beams.windows(2).any(|w| w[0].index == w[1].index) {
            return Err(CodebookError("beam indices must be unique".into()));
        }
        if !(sweep_dwell_s > 0.0) {
            return Err(CodebookError("sweep_dwell_s must be > 0".into()));
        }
        Ok(Self { beams, sweep_dwell_s, sidelobe_gain_dbi })
    }

    /// `count` beams in the horizontal plane starting at `start_deg`, `step_deg` apart.
    pub fn azimuth_fan(
        count: usize,
        start_deg: f64,
        step_deg: f64,
        elevation_deg: f64,
        gain_dbi: f64,
        sweep_dwell_s: f64,
        sidelobe_gain_dbi: f64,
    ) -> Result<Self, CodebookError> {
        let beams = (0..count)
            .map(|i| Beam { index: i, azimuth_deg: start_deg + step_deg * i as f64, elevation_deg, gain_dbi })
            .collect();
        Self::new(beams, sweep_dwell_s, sidelobe_gain_dbi)
    }

    pub fn beams(&self) -> &[Beam] {
        &self.beams
    }

    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    pub fn beam(&self, index: usize) -> Option<&Beam> {
        self.beams.iter().find(|b| b.index == index)
    }

    /// Full sweep duration.
    pub fn sweep_time_s(&self) -> f64 {
        self.sweep_dwell_s * self.beams.len() as f64
    }

    /// Beam index closest to `world_dir` as seen from `tx`. Ties keep the lower index.
    pub fn nearest_beam(&self, tx: &Pose, world_dir: &Vec3) -> usize {
        let local = tx.dir_to_local(world_dir).normalize();
        let mut best = (f64::NEG_INFINITY, self.beams[0].index);
        for b in &self.beams {
            let c = b.local_direction().dot(&local);
            if c > best.0 {
                best = (c, b.index);
            }
        }
        best.1
    }

    /// Transmit gain of `beam` toward `world_dir`.
    pub fn effective_gain_dbi(&self, beam: usize, tx: &Pose, world_dir: &Vec3) -> f64 {
        if self.nearest_beam(tx, world_dir) == beam {
            self.beam(beam).map_or(self.sidelobe_gain_dbi, |b| b.gain_dbi)
        } else {
            self.sidelobe_gain_dbi
        }
    }
}
