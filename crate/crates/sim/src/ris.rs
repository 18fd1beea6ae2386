//! Large intelligent surface model: planar element grid, phase-profile
//! synthesis (steering and focusing), discrete phase quantization and the
//! array factor that turns a profile into a reflection gain.
//!
//! Elements are isotropic with a scalar gain; there is no mutual coupling or
//! polarization. The panel's local +x axis is its outward normal and the
//! elements lie in the local y-z plane, centered on the panel pose.
//!
//! Directions passed to this module are unit vectors pointing *away* from
//! the panel: toward the source for the incident side and toward the
//! destination for the outgoing side. With that convention the specular
//! direction satisfies `u_in + u_out ∥ normal`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::{wrap_phase, Pose, Vec3};

pub const SPEED_OF_LIGHT_MPS: f64 = 299_792_458.0;

/// Floor applied to reflection gains so link budgets stay finite.
pub const GAIN_FLOOR_DB: f64 = -200.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RisError {
    #[error("direction is behind the panel plane")]
    BacksidePanel,
    #[error("profile is {profile_rows}x{profile_cols} but the panel is {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize, profile_rows: usize, profile_cols: usize },
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error("invalid phase profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveContext {
    pub frequency_hz: f64,
}

impl WaveContext {
    pub fn new(frequency_hz: f64) -> Self {
        assert!(frequency_hz > 0.0, "frequency must be positive");
        Self { frequency_hz }
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT_MPS / self.frequency_hz
    }

    pub fn wavenumber(&self) -> f64 {
        TAU / self.wavelength_m()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RisPanel {
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    pub pose: Pose,
    pub element_gain_dbi: f64,
    /// Phase resolution of the hardware; 0 means continuous.
    pub quantization_bits: u8,
}

impl RisPanel {
    pub fn validate(&self) -> Result<(), RisError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(RisError::InvalidPanel("rows and cols must be >= 1".into()));
        }
        if !(self.spacing_m > 0.0 && self.spacing_m.is_finite()) {
            return Err(RisError::InvalidPanel("spacing_m must be > 0".into()));
        }
        if self.quantization_bits > 16 {
            return Err(RisError::InvalidPanel("quantization_bits must be <= 16".into()));
        }
        Ok(())
    }

    pub fn element_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn normal(&self) -> Vec3 {
        self.pose.forward()
    }

    /// Element offset from the panel center, world axes. Row-major order.
    pub fn element_offset(&self, row: usize, col: usize) -> Vec3 {
        let y = (col as f64 - (self.cols as f64 - 1.0) / 2.0) * self.spacing_m;
        let z = (row as f64 - (self.rows as f64 - 1.0) / 2.0) * self.spacing_m;
        self.pose.orientation * Vec3::new(0.0, y, z)
    }

    pub fn element_offsets(&self) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.element_count());
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(self.element_offset(r, c));
            }
        }
        out
    }

    fn check_illuminated(&self, dir: &Vec3) -> Result<Vec3, RisError> {
        let u = dir.normalize();
        if !(u.dot(&self.normal()) > 0.0) {
            return Err(RisError::BacksidePanel);
        }
        Ok(u)
    }

    fn check_shape(&self, profile: &PhaseProfile) -> Result<(), RisError> {
        if profile.rows != self.rows || profile.cols != self.cols {
            return Err(RisError::ShapeMismatch {
                rows: self.rows,
                cols: self.cols,
                profile_rows: profile.rows,
                profile_cols: profile.cols,
            });
        }
        Ok(())
    }
}

/// Per-element phases in `[0, 2π)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseProfile {
    pub rows: usize,
    pub cols: usize,
    pub phases_rad: Vec<f64>,
    /// 0 for a continuous profile, otherwise the number of phase bits.
    pub quantization_bits: u8,
}

impl PhaseProfile {
    pub fn uniform(rows: usize, cols: usize, phase: f64) -> Self {
        Self { rows, cols, phases_rad: vec![wrap_phase(phase); rows * cols], quantization_bits: 0 }
    }

    /// Builds a profile from a caller-supplied matrix. Quantized input is
    /// snapped onto the exact level values and must lie within 1e-9 rad of them.
    pub fn from_matrix(matrix: &[Vec<f64>], quantization_bits: u8) -> Result<Self, RisError> {
        let rows = matrix.len();
        let cols = matrix.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 {
            return Err(RisError::InvalidProfile("empty matrix".into()));
        }
        if matrix.iter().any(|r| r.len() != cols) {
            return Err(RisError::InvalidProfile("ragged matrix".into()));
        }
        if quantization_bits > 16 {
            return Err(RisError::InvalidProfile("quantization_bits must be <= 16".into()));
        }
        let mut phases_rad = Vec::with_capacity(rows * cols);
        for (i, &p) in matrix.iter().flatten().enumerate() {
            if !p.is_finite() {
                return Err(RisError::InvalidProfile(format!("element {i} is not finite")));
            }
            let w = wrap_phase(p);
            if quantization_bits == 0 {
                phases_rad.push(w);
                continue;
            }
            let k = nearest_level(w, quantization_bits);
            let level = level_phase(k, quantization_bits);
            if crate::geometry::circular_diff(w, level).abs() > 1e-9 {
                return Err(RisError::InvalidProfile(format!(
                    "element {i} ({p}) is not a {quantization_bits}-bit level"
                )));
            }
            phases_rad.push(level);
        }
        Ok(Self { rows, cols, phases_rad, quantization_bits })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.phases_rad[row * self.cols + col]
    }

    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        self.phases_rad.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn element_count(&self) -> usize {
        self.rows * self.cols
    }
}

/// Linear phase gradient that co-phases all element contributions from
/// `incident_dir` toward `target_dir`: `φ = -k r·(u_in + u_out)`.
pub fn design_steering_profile(
    panel: &RisPanel,
    incident_dir: &Vec3,
    target_dir: &Vec3,
    wave: &WaveContext,
) -> Result<PhaseProfile, RisError> {
    panel.validate()?;
    let u_in = panel.check_illuminated(incident_dir)?;
    let u_out = panel.check_illuminated(target_dir)?;
    let k = wave.wavenumber();
    let sum = u_in + u_out;
    let phases_rad = panel.element_offsets().iter().map(|r| wrap_phase(-k * r.dot(&sum))).collect();
    Ok(PhaseProfile { rows: panel.rows, cols: panel.cols, phases_rad, quantization_bits: 0 })
}

/// Equalizes the spherical-wave path phase through every element, so that
/// `φ - k(|s - r| + |f - r|)` is the same for all elements.
pub fn design_focusing_profile(
    panel: &RisPanel,
    source_pos: &Vec3,
    focus_pos: &Vec3,
    wave: &WaveContext,
) -> Result<PhaseProfile, RisError> {
    panel.validate()?;
    let center = panel.pose.position;
    panel.check_illuminated(&(source_pos - center))?;
    panel.check_illuminated(&(focus_pos - center))?;
    let k = wave.wavenumber();
    let phases_rad = panel
        .element_offsets()
        .iter()
        .map(|off| {
            let r = center + off;
            wrap_phase(k * ((source_pos - r).norm() + (focus_pos - r).norm()))
        })
        .collect();
    Ok(PhaseProfile { rows: panel.rows, cols: panel.cols, phases_rad, quantization_bits: 0 })
}

fn level_phase(k: u32, bits: u8) -> f64 {
    k as f64 * TAU / (1u32 << bits) as f64
}

/// Index of the nearest of the `2^bits` levels on the circle. Exact ties go
/// to the lower index.
fn nearest_level(phase: f64, bits: u8) -> u32 {
    let levels = 1u32 << bits;
    let x = wrap_phase(phase) / (TAU / levels as f64);
    let lower = (x.floor() as u32).min(levels - 1);
    let upper = (lower + 1) % levels;
    let frac = x - lower as f64;
    if frac < 0.5 {
        lower
    } else if frac > 0.5 {
        upper
    } else {
        lower.min(upper)
    }
}

/// Rounds every phase to the nearest of the `2^bits` levels `2πk/2^bits`.
/// The per-element circular error is at most `π/2^bits`.
pub fn quantize_profile(profile: &PhaseProfile, bits: u8) -> PhaseProfile {
    assert!((1..=16).contains(&bits), "quantization needs 1..=16 bits");
    let phases_rad = profile.phases_rad.iter().map(|&p| level_phase(nearest_level(p, bits), bits)).collect();
    PhaseProfile { rows: profile.rows, cols: profile.cols, phases_rad, quantization_bits: bits }
}

/// `AF = Σ exp(j(φ_n + k r_n·(u_in + u_out)))`.
pub fn array_factor(
    panel: &RisPanel,
    profile: &PhaseProfile,
    incident_dir: &Vec3,
    outgoing_dir: &Vec3,
    wave: &WaveContext,
) -> Result<Complex64, RisError> {
    panel.check_shape(profile)?;
    let k = wave.wavenumber();
    let sum = incident_dir.normalize() + outgoing_dir.normalize();
    let mut af = Complex64::new(0.0, 0.0);
    for r in 0..panel.rows {
        for c in 0..panel.cols {
            let arg = profile.get(r, c) + k * panel.element_offset(r, c).dot(&sum);
            af += Complex64::from_polar(1.0, arg);
        }
    }
    Ok(af)
}

/// Absolute reflection gain `20·log10|AF| + element_gain_dbi`, floored at
/// [`GAIN_FLOOR_DB`].
pub fn reflection_gain_db(
    panel: &RisPanel,
    profile: &PhaseProfile,
    incident_dir: &Vec3,
    outgoing_dir: &Vec3,
    wave: &WaveContext,
) -> Result<f64, RisError> {
    let af = array_factor(panel, profile, incident_dir, outgoing_dir, wave)?;
    Ok(gain_from_magnitude(af.norm(), panel.element_gain_dbi))
}

pub fn gain_from_magnitude(af_magnitude: f64, element_gain_dbi: f64) -> f64 {
    if af_magnitude <= 0.0 {
        return GAIN_FLOOR_DB;
    }
    (20.0 * af_magnitude.log10() + element_gain_dbi).max(GAIN_FLOOR_DB)
}

/// Upper bound on the reflection gain: full co-phasing of every element.
pub fn max_reflection_gain_db(panel: &RisPanel) -> f64 {
    20.0 * (panel.element_count() as f64).log10() + panel.element_gain_dbi
}

/// Worst-case circular error of an n-bit quantizer.
pub fn max_quantization_error(bits: u8) -> f64 {
    PI / (1u32 << bits) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::circular_diff;

    fn panel(rows: usize, cols: usize, wave: &WaveContext) -> RisPanel {
        RisPanel {
            rows,
            cols,
            spacing_m: wave.wavelength_m() / 2.0,
            pose: Pose::at(Vec3::zeros()),
            element_gain_dbi: 5.0,
            quantization_bits: 0,
        }
    }

    #[test]
    fn normal_incidence_specular_is_uniform() {
        let wave = WaveContext::new(28e9);
        let p = panel(4, 4, &wave);
        let prof = design_steering_profile(&p, &Vec3::x(), &Vec3::x(), &wave).unwrap();
        let first = prof.phases_rad[0];
        // u_in + u_out is along the normal, which is orthogonal to every element offset.
        for &ph in &prof.phases_rad {
            assert!(circular_diff(ph, first).abs() < 1e-12);
        }
    }

    #[test]
    fn thirty_degree_steering_has_quarter_wave_step() {
        let wave = WaveContext::new(28e9);
        let p = panel(1, 4, &wave);
        let theta = 30f64.to_radians();
        let target = Vec3::new(theta.cos(), theta.sin(), 0.0);
        let prof = design_steering_profile(&p, &Vec3::x(), &target, &wave).unwrap();
        for c in 0..3 {
            let step = circular_diff(prof.get(0, c + 1), prof.get(0, c));
            assert!((step + PI / 2.0).abs() < 1e-9, "step {step}");
        }
    }

    #[test]
    fn backside_directions_are_rejected() {
        let wave = WaveContext::new(28e9);
        let p = panel(2, 2, &wave);
        assert_eq!(
            design_steering_profile(&p, &-Vec3::x(), &Vec3::x(), &wave).unwrap_err(),
            RisError::BacksidePanel
        );
        assert_eq!(
            design_focusing_profile(&p, &Vec3::new(1.0, 0.0, 0.0), &Vec3::new(-1.0, 0.2, 0.0), &wave).unwrap_err(),
            RisError::BacksidePanel
        );
    }

    #[test]
    fn quantize_nearest_level_and_ties() {
        let prof = PhaseProfile { rows: 1, cols: 1, phases_rad: vec![1.6], quantization_bits: 0 };
        assert_eq!(quantize_profile(&prof, 1).phases_rad[0], PI);

        // Exactly midway between level 0 (0) and level 1 (π/2) at 2 bits.
        let mid = PhaseProfile { rows: 1, cols: 1, phases_rad: vec![PI / 4.0], quantization_bits: 0 };
        assert_eq!(quantize_profile(&mid, 2).phases_rad[0], 0.0);
        // Midway across the wrap between level 3 (3π/2) and level 0.
        let wrap = PhaseProfile { rows: 1, cols: 1, phases_rad: vec![7.0 * PI / 4.0], quantization_bits: 0 };
        assert_eq!(quantize_profile(&wrap, 2).phases_rad[0], 0.0);
    }

    #[test]
    fn zero_profile_specular_sums_to_n() {
        let wave = WaveContext::new(28e9);
        let p = panel(8, 8, &wave);
        let zero = PhaseProfile::uniform(8, 8, 0.0);
        let theta = 20f64.to_radians();
        let u_in = Vec3::new(theta.cos(), theta.sin(), 0.0);
        let u_out = Vec3::new(theta.cos(), -theta.sin(), 0.0);
        let af = array_factor(&p, &zero, &u_in, &u_out, &wave).unwrap();
        assert!((af - Complex64::new(64.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn reflection_gain_values() {
        let wave = WaveContext::new(28e9);
        let p = panel(16, 16, &wave);
        assert!((gain_from_magnitude(256.0, 5.0) - 53.16).abs() < 0.005);
        assert_eq!(gain_from_magnitude(0.0, 5.0), GAIN_FLOOR_DB);
        assert!((max_reflection_gain_db(&p) - (20.0 * 256f64.log10() + 5.0)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let wave = WaveContext::new(28e9);
        let p = panel(2, 2, &wave);
        let prof = PhaseProfile::uniform(2, 3, 0.0);
        assert!(matches!(
            array_factor(&p, &prof, &Vec3::x(), &Vec3::x(), &wave),
            Err(RisError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn from_matrix_snaps_and_rejects() {
        let m = vec![vec![0.0, PI / 2.0 + 1e-12], vec![PI, 3.0 * PI / 2.0]];
        let prof = PhaseProfile::from_matrix(&m, 2).unwrap();
        assert_eq!(prof.get(0, 1), PI / 2.0);
        assert!(PhaseProfile::from_matrix(&[vec![0.3]], 2).is_err());
        assert!(PhaseProfile::from_matrix(&[vec![0.3], vec![0.1, 0.2]], 0).is_err());
    }
}
