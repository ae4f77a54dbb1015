//! Isoluminant color probes along cone-confusion axes.
//!
//! Colors are linear RGB in `[0, 1]³`. A fixed pair of 3×3 matrices maps
//! linear RGB → XYZ → LMS cone excitations; luminance is the Y row of the
//! first matrix. For an axis the missing cone class (L for protan, M for
//! deutan, S for tritan) carries the excursion and the L or M cone is
//! counter-modulated so Y stays constant. The requested contrast is the
//! root-sum-square of the three cone Weber contrasts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{invert3, mat_mul, mat_vec};
use crate::stimulus::ColorAxis;

pub type LinearRgb = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ColorError {
    #[error("color excursion leaves the display gamut")]
    GamutExceeded,
    #[error("cone contrast {0} outside [0, 1]")]
    InvalidContrast(f64),
    #[error("background must lie inside [0, 1]^3 with positive cone excitations")]
    InvalidBackground,
    #[error("cone transform is singular")]
    SingularTransform,
}

/// Linear RGB → cone excitation transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeTransform {
    /// Linear RGB → CIE XYZ; row 1 is the luminance row.
    pub rgb_to_xyz: [[f64; 3]; 3],
    /// CIE XYZ → LMS.
    pub xyz_to_lms: [[f64; 3]; 3],
}

impl Default for ConeTransform {
    /// sRGB (D65) primaries with Hunt–Pointer–Estevez cone fundamentals.
    fn default() -> Self {
        Self {
            rgb_to_xyz: [
                [0.4124, 0.3576, 0.1805],
                [0.2126, 0.7152, 0.0722],
                [0.0193, 0.1192, 0.9505],
            ],
            xyz_to_lms: [
                [0.38971, 0.68898, -0.07868],
                [-0.22981, 1.18340, 0.04641],
                [0.0, 0.0, 1.0],
            ],
        }
    }
}

impl ConeTransform {
    pub fn rgb_to_lms(&self) -> [[f64; 3]; 3] {
        mat_mul(&self.xyz_to_lms, &self.rgb_to_xyz)
    }

    pub fn luminance(&self, rgb: LinearRgb) -> f64 {
        let y = self.rgb_to_xyz[1];
        y[0] * rgb[0] + y[1] * rgb[1] + y[2] * rgb[2]
    }

    /// Linear-RGB displacement for unit RSS cone contrast along `axis` at
    /// `background`.
    pub fn unit_direction(
        &self,
        axis: ColorAxis,
        background: LinearRgb,
    ) -> Result<LinearRgb, ColorError> {
        if background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(ColorError::InvalidBackground);
        }
        let to_lms = self.rgb_to_lms();
        let to_rgb = invert3(&to_lms).ok_or(ColorError::SingularTransform)?;
        let lms = mat_vec(&to_lms, background);
        if lms.iter().any(|c| *c <= 0.0) {
            return Err(ColorError::InvalidBackground);
        }
        // Luminance weights expressed in cone coordinates.
        let y = self.rgb_to_xyz[1];
        let mut y_lms = [0.0; 3];
        for (j, w) in y_lms.iter_mut().enumerate() {
            *w = (0..3).map(|k| y[k] * to_rgb[k][j]).sum();
        }
        let (missing, compensating) = match axis {
            ColorAxis::Protan => (0, 1),
            ColorAxis::Deutan => (1, 0),
            ColorAxis::Tritan => (2, 0),
        };
        let mut d = [0.0; 3];
        d[missing] = lms[missing];
        d[compensating] = -y_lms[missing] * d[missing] / y_lms[compensating];
        let rss = libm::sqrt((0..3).map(|k| (d[k] / lms[k]) * (d[k] / lms[k])).sum());
        for v in &mut d {
            *v /= rss;
        }
        Ok(mat_vec(&to_rgb, d))
    }

    /// Largest contrast along `axis` that keeps the target in gamut.
    pub fn max_contrast(&self, axis: ColorAxis, background: LinearRgb) -> Result<f64, ColorError> {
        let dir = self.unit_direction(axis, background)?;
        let mut room = f64::INFINITY;
        for k in 0..3 {
            if dir[k] > 0.0 {
                room = room.min((1.0 - background[k]) / dir[k]);
            } else if dir[k] < 0.0 {
                room = room.min(background[k] / -dir[k]);
            }
        }
        Ok(room)
    }
}

/// Target and background colors for a color-axis probe of `contrast`.
pub fn color_axis_colors(
    axis: ColorAxis,
    contrast: f64,
    background: LinearRgb,
    transform: &ConeTransform,
) -> Result<(LinearRgb, LinearRgb), ColorError> {
    if !(0.0..=1.0).contains(&contrast) {
        return Err(ColorError::InvalidContrast(contrast));
    }
    let dir = transform.unit_direction(axis, background)?;
    if contrast == 0.0 {
        return Ok((background, background));
    }
    let mut target = [0.0; 3];
    for k in 0..3 {
        target[k] = background[k] + contrast * dir[k];
        if !(0.0..=1.0).contains(&target[k]) {
            return Err(ColorError::GamutExceeded);
        }
    }
    Ok((target, background))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRAY: LinearRgb = [0.5, 0.5, 0.5];

    fn cone_contrast(t: &ConeTransform, target: LinearRgb, bg: LinearRgb) -> [f64; 3] {
        let m = t.rgb_to_lms();
        let a = mat_vec(&m, target);
        let b = mat_vec(&m, bg);
        [(a[0] - b[0]) / b[0], (a[1] - b[1]) / b[1], (a[2] - b[2]) / b[2]]
    }

    #[test]
    fn zero_contrast_is_background() {
        let t = ConeTransform::default();
        for axis in ColorAxis::ALL {
            let (target, bg) = color_axis_colors(axis, 0.0, GRAY, &t).unwrap();
            assert_eq!(target, bg);
        }
    }

    #[test]
    fn deutan_mid_gray_is_isoluminant() {
        let t = ConeTransform::default();
        let (target, bg) = color_axis_colors(ColorAxis::Deutan, 0.1, GRAY, &t).unwrap();
        assert_ne!(target, bg);
        let ratio = t.luminance(target) / t.luminance(bg);
        assert!((0.995..=1.005).contains(&ratio), "{ratio}");
        let cc = cone_contrast(&t, target, bg);
        let rss = libm::sqrt(cc.iter().map(|c| c * c).sum());
        assert!((rss - 0.1).abs() < 1e-9);
        // The M cone carries the positive excursion, S is untouched.
        assert!(cc[1] > 0.0 && cc[0] < 0.0 && cc[2].abs() < 1e-12);
    }

    #[test]
    fn protan_near_gamut_edge_exceeds() {
        let t = ConeTransform::default();
        let edge = [0.9, 0.9, 0.9];
        assert_eq!(
            color_axis_colors(ColorAxis::Protan, 0.9, edge, &t),
            Err(ColorError::GamutExceeded)
        );
    }

    #[test]
    fn mid_gray_gamut_limits() {
        let t = ConeTransform::default();
        let p = t.max_contrast(ColorAxis::Protan, GRAY).unwrap();
        let d = t.max_contrast(ColorAxis::Deutan, GRAY).unwrap();
        let s = t.max_contrast(ColorAxis::Tritan, GRAY).unwrap();
        assert!((p - 0.1419).abs() < 1e-3 && (d - 0.1419).abs() < 1e-3, "{p} {d}");
        assert!(s > 0.8);
    }

    #[test]
    fn rejects_out_of_range() {
        let t = ConeTransform::default();
        assert_eq!(
            color_axis_colors(ColorAxis::Tritan, 1.5, GRAY, &t),
            Err(ColorError::InvalidContrast(1.5))
        );
        assert_eq!(
            color_axis_colors(ColorAxis::Tritan, 0.1, [1.2, 0.5, 0.5], &t),
            Err(ColorError::InvalidBackground)
        );
        assert_eq!(
            color_axis_colors(ColorAxis::Tritan, 0.1, [0.0, 0.0, 0.0], &t),
            Err(ColorError::InvalidBackground)
        );
    }
}
