//! Pixel ↔ visual-angle conversion for a physical screen.
//!
//! All angles are arcminutes. Pixel pitch is taken from the horizontal axis;
//! [`ScreenProfile::validate`] rejects displays whose pixels are not square
//! to within 1%.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Arcminutes in one radian (`60 · 180 / π` ≈ 3437.75).
pub const ARCMIN_PER_RADIAN: f64 = 60.0 * 180.0 / core::f64::consts::PI;

/// Largest representable angle (exclusive): 90°.
pub const MAX_ANGLE_ARCMIN: f64 = 90.0 * 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(&'static str),
}

/// Physical display geometry and luminance range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenProfile {
    pub width_mm: f64,
    pub height_mm: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub max_luminance_cdm2: f64,
    pub black_luminance_cdm2: f64,
}

impl ScreenProfile {
    pub fn new(
        width_mm: f64,
        height_mm: f64,
        width_px: u32,
        height_px: u32,
        max_luminance_cdm2: f64,
        black_luminance_cdm2: f64,
    ) -> Result<Self, GeometryError> {
        let screen = Self {
            width_mm,
            height_mm,
            width_px,
            height_px,
            max_luminance_cdm2,
            black_luminance_cdm2,
        };
        screen.validate()?;
        Ok(screen)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.width_mm > 0.0 && self.height_mm > 0.0) {
            return Err(GeometryError::InvalidGeometry("physical size must be positive"));
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(GeometryError::InvalidGeometry("resolution must be positive"));
        }
        let pitch_w = self.width_mm / f64::from(self.width_px);
        let pitch_h = self.height_mm / f64::from(self.height_px);
        if (pitch_w - pitch_h).abs() > 0.01 * pitch_w {
            return Err(GeometryError::InvalidGeometry("pixels are not square within 1%"));
        }
        if !(self.black_luminance_cdm2 >= 0.0
            && self.black_luminance_cdm2 < self.max_luminance_cdm2
            && self.max_luminance_cdm2.is_finite())
        {
            return Err(GeometryError::InvalidGeometry(
                "luminance range must satisfy 0 <= black < max",
            ));
        }
        Ok(())
    }

    /// Millimetres per pixel (horizontal axis).
    pub fn pitch_mm(&self) -> f64 {
        self.width_mm / f64::from(self.width_px)
    }

    /// Usable luminance increment above black, cd/m².
    pub fn luminance_range(&self) -> f64 {
        self.max_luminance_cdm2 - self.black_luminance_cdm2
    }

    /// A 27" 8K desktop display. Fine enough pitch that 1′ features stay
    /// renderable from 25 cm onwards; used by the simulator fixtures.
    pub fn desktop_8k() -> Self {
        Self {
            width_mm: 597.0,
            height_mm: 336.0,
            width_px: 7680,
            height_px: 4320,
            max_luminance_cdm2: 300.0,
            black_luminance_cdm2: 0.3,
        }
    }
}

/// One reading of the distance and ambient-light sensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewingSample {
    pub distance_mm: f64,
    pub ambient_lux: f64,
    pub timestamp_ms: i64,
}

impl ViewingSample {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.distance_mm > 0.0 && self.distance_mm.is_finite()) {
            return Err(GeometryError::InvalidGeometry("viewing distance must be positive"));
        }
        if !(self.ambient_lux >= 0.0 && self.ambient_lux.is_finite()) {
            return Err(GeometryError::InvalidGeometry("ambient illuminance must be >= 0"));
        }
        Ok(())
    }
}

/// Visual angle subtended by `size_px` pixels at `distance_mm`.
pub fn px_to_arcmin(
    size_px: f64,
    screen: &ScreenProfile,
    distance_mm: f64,
) -> Result<f64, GeometryError> {
    if !(distance_mm > 0.0 && distance_mm.is_finite()) {
        return Err(GeometryError::InvalidGeometry("viewing distance must be positive"));
    }
    if !(size_px >= 0.0 && size_px.is_finite()) {
        return Err(GeometryError::InvalidGeometry("size must be >= 0"));
    }
    let half = size_px * screen.pitch_mm() / (2.0 * distance_mm);
    Ok(2.0 * libm::atan(half) * ARCMIN_PER_RADIAN)
}

/// Fractional pixel extent subtending `angle_arcmin` at `distance_mm`.
pub fn arcmin_to_px(
    angle_arcmin: f64,
    screen: &ScreenProfile,
    distance_mm: f64,
) -> Result<f64, GeometryError> {
    if !(distance_mm > 0.0 && distance_mm.is_finite()) {
        return Err(GeometryError::InvalidGeometry("viewing distance must be positive"));
    }
    if !(0.0..MAX_ANGLE_ARCMIN).contains(&angle_arcmin) {
        return Err(GeometryError::InvalidGeometry("angle must be in [0, 90°)"));
    }
    let half = libm::tan(angle_arcmin / ARCMIN_PER_RADIAN / 2.0);
    Ok(2.0 * distance_mm * half / screen.pitch_mm())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quarter_mm_screen() -> ScreenProfile {
        ScreenProfile::new(480.0, 270.0, 1920, 1080, 250.0, 0.25).unwrap()
    }

    #[test]
    fn zero_size_is_zero_angle() {
        assert_eq!(px_to_arcmin(0.0, &quarter_mm_screen(), 600.0).unwrap(), 0.0);
        assert_eq!(arcmin_to_px(0.0, &quarter_mm_screen(), 600.0).unwrap(), 0.0);
    }

    #[test]
    fn hundred_pixels_at_600mm() {
        let s = quarter_mm_screen();
        let exact = px_to_arcmin(100.0, &s, 600.0).unwrap();
        let small_angle = (25.0 / 600.0) * 3437.75;
        assert!((exact - 143.22).abs() < 0.005, "{exact}");
        assert!((exact - small_angle).abs() / small_angle < 1e-3);
        let back = arcmin_to_px(exact, &s, 600.0).unwrap();
        assert!((back - 100.0).abs() < 1e-6);
        assert!((arcmin_to_px(143.22, &s, 600.0).unwrap() - 100.0).abs() < 0.01);
    }

    #[test]
    fn two_arcmin_at_600mm() {
        let px = arcmin_to_px(2.0, &quarter_mm_screen(), 600.0).unwrap();
        let oracle = (2.0 / 3437.75) * 600.0 / 0.25;
        assert!((px - oracle).abs() < 1e-3, "{px} vs {oracle}");
        assert!((px - 1.396).abs() < 1e-3);
    }

    #[test]
    fn round_trip_small_sizes() {
        let s = quarter_mm_screen();
        for x in [1.0, 10.0, 500.0] {
            let a = px_to_arcmin(x, &s, 600.0).unwrap();
            let back = arcmin_to_px(a, &s, 600.0).unwrap();
            assert!(((back - x) / x).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = quarter_mm_screen();
        assert!(px_to_arcmin(10.0, &s, 0.0).is_err());
        assert!(px_to_arcmin(10.0, &s, -5.0).is_err());
        assert!(arcmin_to_px(90.0 * 60.0, &s, 600.0).is_err());
        assert!(arcmin_to_px(1.0, &s, 0.0).is_err());
        assert!(ScreenProfile::new(480.0, 300.0, 1920, 1080, 250.0, 0.25).is_err());
        assert!(ScreenProfile::new(480.0, 270.0, 0, 1080, 250.0, 0.25).is_err());
        assert!(ScreenProfile::new(480.0, 270.0, 1920, 1080, 250.0, 250.0).is_err());
        assert!(ScreenProfile::desktop_8k().validate().is_ok());
    }
}
