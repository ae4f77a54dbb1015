//! Impairment screens built from psychometric fits.
//!
//! Every screen compares thresholds as ratios of linear intensities and asks
//! for two things before it flags: the ratio reaches the configured factor and
//! the bootstrap intervals involved are disjoint. `effect_size` is the excess
//! ratio (ratio − 1) when both hold and 0 otherwise, so `NoFlag` is exactly
//! `effect_size < flag_ratio − 1`.
//!
//! A fit pinned to the bottom of its search range only bounds its threshold
//! from above, and one pinned to the top only from below. Inside a ratio each
//! side enters at the value least favorable to flagging: the impaired side at
//! [`low`], the reference side at [`high`].

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{exp10, log10};
use crate::psychometric::PsychometricFit;
use crate::session::DistanceBin;
use crate::stimulus::ColorAxis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Screen {
    Refraction,
    Astigmatism,
    ColorVision,
    Scotopic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScreenKind {
    MyopiaSuspect,
    HyperopiaSuspect,
    AstigmatismSuspect { axis_deg: f64 },
    CvdSuspect { axis: ColorAxis },
    NyctalopiaSuspect,
    NoFlag,
}

/// One fit that fed a screen decision, in linear units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub label: String,
    pub threshold: f64,
    pub ci: (f64, f64),
    pub n_trials: u32,
}

impl Evidence {
    pub fn new(label: impl Into<String>, fit: &PsychometricFit) -> Self {
        Self { label: label.into(), threshold: fit.threshold(), ci: fit.ci_linear(), n_trials: fit.n_trials }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub screen: Screen,
    pub kind: ScreenKind,
    pub effect_size: f64,
    pub evidence: Vec<Evidence>,
    /// Refraction only: whether the mean viewing distance points the same way
    /// as the acuity pattern.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_corroborated: Option<bool>,
}

impl ScreenResult {
    pub fn flagged(&self) -> bool {
        self.kind != ScreenKind::NoFlag
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ScreenError {
    #[error("insufficient data: {0}")]
    InsufficientData(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreenConfig {
    pub refraction_ratio: f64,
    pub myopia_mean_distance_mm: f64,
    pub hyperopia_mean_distance_mm: f64,
    pub astigmatism_ratio: f64,
    pub min_orientation_axes: usize,
    pub min_axis_trials: u32,
    pub cvd_ratio: f64,
    pub scotopic_ratio: f64,
    pub min_scotopic_trials: u32,
    /// Population acuity threshold in photopic light (arcmin), as estimated
    /// by this pipeline for an unimpaired observer.
    pub photopic_reference_arcmin: f64,
    /// Population dim-light increment threshold (cd/m²), estimated likewise.
    pub scotopic_reference_cdm2: f64,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self {
            refraction_ratio: 2.0,
            myopia_mean_distance_mm: 450.0,
            hyperopia_mean_distance_mm: 900.0,
            astigmatism_ratio: 2.0,
            min_orientation_axes: 4,
            min_axis_trials: 40,
            cvd_ratio: 2.0,
            scotopic_ratio: 2.0,
            min_scotopic_trials: 40,
            photopic_reference_arcmin: 1.2,
            scotopic_reference_cdm2: 0.024,
        }
    }
}

/// Mean and standard deviation of viewing distance (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub mean_mm: f64,
    pub sd_mm: f64,
}

/// Smallest log threshold the fit vouches for.
fn low(f: &PsychometricFit) -> f64 {
    if f.alpha_pinned && f.ceiling_flag { f.ci_alpha.0 } else { f.threshold_alpha }
}

/// Largest log threshold the fit vouches for.
fn high(f: &PsychometricFit) -> f64 {
    if f.alpha_pinned && f.floor_flag { f.ci_alpha.1 } else { f.threshold_alpha }
}

/// Censoring-aware ratio of `impaired` over `reference`, linear.
fn ratio(impaired: &PsychometricFit, reference: &PsychometricFit) -> f64 {
    exp10(low(impaired) - high(reference))
}

/// `a`'s interval lies strictly above `b`'s point estimate.
fn ci_above_estimate(a: &PsychometricFit, b: &PsychometricFit) -> bool {
    a.ci_alpha.0 > high(b)
}

/// `a`'s interval lies strictly above `b`'s interval.
fn ci_above(a: &PsychometricFit, b: &PsychometricFit) -> bool {
    a.ci_alpha.0 > b.ci_alpha.1
}

fn no_flag(screen: Screen, evidence: Vec<Evidence>) -> ScreenResult {
    ScreenResult { screen, kind: ScreenKind::NoFlag, effect_size: 0.0, evidence, distance_corroborated: None }
}

/// Myopia: acuity thresholds much worse far than near; hyperopia: the mirror.
///
/// Uses the nearest and farthest bins present. The far interval must exclude
/// the near estimate (or vice versa).
pub fn refraction_screen(
    fits: &[(DistanceBin, PsychometricFit)],
    distance: DistanceStats,
    cfg: &ScreenConfig,
) -> Result<ScreenResult, ScreenError> {
    let mut fits: Vec<&(DistanceBin, PsychometricFit)> = fits.iter().collect();
    fits.sort_by_key(|(b, _)| *b);
    fits.dedup_by_key(|(b, _)| *b);
    if fits.len() < 2 {
        return Err(ScreenError::InsufficientData("refraction needs two distance bins"));
    }
    let near = &fits[0].1;
    let far = &fits[fits.len() - 1].1;
    let evidence = fits.iter().map(|(b, f)| Evidence::new(b.name(), f)).collect();

    let (r_myopia, r_hyperopia) = (ratio(far, near), ratio(near, far));
    let (kind, corroborated, r) = if r_myopia >= cfg.refraction_ratio && ci_above_estimate(far, near) {
        (ScreenKind::MyopiaSuspect, distance.mean_mm < cfg.myopia_mean_distance_mm, r_myopia)
    } else if r_hyperopia >= cfg.refraction_ratio && ci_above_estimate(near, far) {
        (ScreenKind::HyperopiaSuspect, distance.mean_mm > cfg.hyperopia_mean_distance_mm, r_hyperopia)
    } else {
        return Ok(no_flag(Screen::Refraction, evidence));
    };
    Ok(ScreenResult {
        screen: Screen::Refraction,
        kind,
        effect_size: r - 1.0,
        evidence,
        distance_corroborated: Some(corroborated),
    })
}

/// Orientation-selective loss. The cylinder axis is estimated from a second
/// harmonic fit of log threshold over grating axis; the grating axis with the
/// worst threshold is perpendicular to the cylinder axis.
pub fn astigmatism_index(
    fits: &[(f64, PsychometricFit)],
    cfg: &ScreenConfig,
) -> Result<ScreenResult, ScreenError> {
    let mut axes: Vec<f64> = fits.iter().map(|(a, _)| *a).collect();
    axes.sort_by(f64::total_cmp);
    axes.dedup();
    if axes.len() < cfg.min_orientation_axes || fits.len() != axes.len() {
        return Err(ScreenError::InsufficientData("astigmatism needs distinct fits for four axes"));
    }
    if fits.iter().any(|(_, f)| f.n_trials < cfg.min_axis_trials) {
        return Err(ScreenError::InsufficientData("too few trials on an orientation axis"));
    }
    let evidence = fits
        .iter()
        .map(|(a, f)| Evidence::new(alloc::format!("{a}"), f))
        .collect();

    let by_alpha = |a: &&(f64, PsychometricFit), b: &&(f64, PsychometricFit)| {
        a.1.threshold_alpha.total_cmp(&b.1.threshold_alpha)
    };
    let best = fits.iter().min_by(by_alpha).expect("non-empty");
    let worst = fits.iter().max_by(by_alpha).expect("non-empty");
    let anisotropy = ratio(&worst.1, &best.1);
    if anisotropy < cfg.astigmatism_ratio || !ci_above(&worst.1, &best.1) {
        return Ok(no_flag(Screen::Astigmatism, evidence));
    }

    // log θ(ψ) ≈ c + a·cos 2ψ + b·sin 2ψ; the projections recover (a, b) for
    // evenly spaced axes and stay a sensible estimate otherwise.
    let (mut a, mut b) = (0.0, 0.0);
    let mean = fits.iter().map(|(_, f)| f.threshold_alpha).sum::<f64>() / fits.len() as f64;
    for (psi, f) in fits {
        let t = 2.0 * psi.to_radians();
        a += (f.threshold_alpha - mean) * libm::cos(t);
        b += (f.threshold_alpha - mean) * libm::sin(t);
    }
    let worst_axis = libm::atan2(b, a).to_degrees() / 2.0;
    let axis = worst_axis + 90.0;
    let axis_deg = axis - 180.0 * libm::floor(axis / 180.0);

    Ok(ScreenResult {
        screen: Screen::Astigmatism,
        kind: ScreenKind::AstigmatismSuspect { axis_deg },
        effect_size: anisotropy - 1.0,
        evidence,
        distance_corroborated: None,
    })
}

/// Color-vision deficiency along one confusion axis: that axis's threshold
/// exceeds the mean of the other two by `cvd_ratio` with an interval disjoint
/// from both.
pub fn cvd_classify(
    fits: &[(ColorAxis, PsychometricFit)],
    cfg: &ScreenConfig,
) -> Result<ScreenResult, ScreenError> {
    let get = |axis: ColorAxis| fits.iter().find(|(a, _)| *a == axis).map(|(_, f)| f);
    let all: Vec<(ColorAxis, &PsychometricFit)> = ColorAxis::ALL
        .iter()
        .map(|a| get(*a).map(|f| (*a, f)))
        .collect::<Option<_>>()
        .ok_or(ScreenError::InsufficientData("color screen needs all three axes"))?;
    let evidence = all.iter().map(|(a, f)| Evidence::new(a.name(), f)).collect();

    let mut best: Option<(ColorAxis, f64)> = None;
    for (i, (axis, fit)) in all.iter().enumerate() {
        let others: Vec<&PsychometricFit> =
            all.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, (_, f))| *f).collect();
        let reference = others.iter().map(|f| exp10(high(f))).sum::<f64>() / others.len() as f64;
        let ratio = exp10(low(fit)) / reference;
        let disjoint = others.iter().all(|o| ci_above(fit, o));
        if ratio >= cfg.cvd_ratio && disjoint && best.is_none_or(|(_, r)| ratio > r) {
            best = Some((*axis, ratio));
        }
    }
    Ok(match best {
        Some((axis, ratio)) => ScreenResult {
            screen: Screen::ColorVision,
            kind: ScreenKind::CvdSuspect { axis },
            effect_size: ratio - 1.0,
            evidence,
            distance_corroborated: None,
        },
        None => no_flag(Screen::ColorVision, evidence),
    })
}

/// Night blindness: dim-light threshold, relative to its population
/// reference, much worse than photopic acuity relative to its reference.
pub fn scotopic_ratio(
    photopic: Option<&PsychometricFit>,
    scotopic: Option<&PsychometricFit>,
    cfg: &ScreenConfig,
) -> Result<ScreenResult, ScreenError> {
    let scot = scotopic.ok_or(ScreenError::InsufficientData("no dim-light fit"))?;
    let phot = photopic.ok_or(ScreenError::InsufficientData("no photopic acuity fit"))?;
    if scot.n_trials < cfg.min_scotopic_trials || phot.n_trials < cfg.min_scotopic_trials {
        return Err(ScreenError::InsufficientData("too few trials for the dim-light screen"));
    }
    let evidence = Vec::from([Evidence::new("photopic", phot), Evidence::new("scotopic", scot)]);

    let shift_s = log10(cfg.scotopic_reference_cdm2);
    let shift_p = log10(cfg.photopic_reference_arcmin);
    let r = ratio(scot, phot) * exp10(shift_p - shift_s);
    let disjoint = scot.ci_alpha.0 - shift_s > phot.ci_alpha.1 - shift_p;
    if r < cfg.scotopic_ratio || !disjoint {
        return Ok(no_flag(Screen::Scotopic, evidence));
    }
    Ok(ScreenResult {
        screen: Screen::Scotopic,
        kind: ScreenKind::NyctalopiaSuspect,
        effect_size: r - 1.0,
        evidence,
        distance_corroborated: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(threshold: f64, half_ci_log: f64) -> PsychometricFit {
        let a = log10(threshold);
        PsychometricFit {
            threshold_alpha: a,
            slope_beta: 8.0,
            guess_gamma: 0.25,
            lapse_lambda: 0.02,
            ci_alpha: (a - half_ci_log, a + half_ci_log),
            n_trials: 50,
            floor_flag: false,
            ceiling_flag: false,
            alpha_pinned: false,
            log_likelihood: 0.0,
        }
    }

    fn dist(mean_mm: f64) -> DistanceStats {
        DistanceStats { mean_mm, sd_mm: 100.0 }
    }

    #[test]
    fn myopia_pattern() {
        let fits = [
            (DistanceBin::Near, fit(1.2, 0.05)),
            (DistanceBin::Mid, fit(1.5, 0.05)),
            (DistanceBin::Far, fit(4.0, 0.05)),
        ];
        let r = refraction_screen(&fits, dist(350.0), &ScreenConfig::default()).unwrap();
        assert_eq!(r.kind, ScreenKind::MyopiaSuspect);
        assert!((r.effect_size - (4.0 / 1.2 - 1.0)).abs() < 1e-9);
        assert_eq!(r.distance_corroborated, Some(true));
    }

    #[test]
    fn hyperopia_pattern() {
        let fits = [(DistanceBin::Near, fit(4.0, 0.05)), (DistanceBin::Far, fit(1.3, 0.05))];
        let r = refraction_screen(&fits, dist(1100.0), &ScreenConfig::default()).unwrap();
        assert_eq!(r.kind, ScreenKind::HyperopiaSuspect);
        assert_eq!(r.distance_corroborated, Some(true));
    }

    #[test]
    fn flat_refraction_no_flag() {
        let fits = [
            (DistanceBin::Near, fit(1.2, 0.1)),
            (DistanceBin::Mid, fit(1.2, 0.1)),
            (DistanceBin::Far, fit(1.2, 0.1)),
        ];
        let r = refraction_screen(&fits, dist(700.0), &ScreenConfig::default()).unwrap();
        assert_eq!(r.kind, ScreenKind::NoFlag);
        assert_eq!(r.effect_size, 0.0);
    }

    #[test]
    fn floor_fit_enters_at_its_upper_bound() {
        // Near staircase never left the plateau: α̂ sits at the search edge.
        let mut near = fit(0.38, 0.0);
        near.floor_flag = true;
        near.alpha_pinned = true;
        near.ci_alpha.1 = log10(0.78);
        let mut fits = [(DistanceBin::Near, near), (DistanceBin::Far, fit(1.2, 0.05))];
        let r = refraction_screen(&fits, dist(700.0), &ScreenConfig::default()).unwrap();
        assert_eq!(r.kind, ScreenKind::NoFlag);
        fits[1].1 = fit(2.0, 0.05);
        let r = refraction_screen(&fits, dist(700.0), &ScreenConfig::default()).unwrap();
        assert_eq!(r.kind, ScreenKind::MyopiaSuspect);
        assert!((r.effect_size - (2.0 / 0.78 - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn wide_interval_blocks_flag() {
        let fits = [(DistanceBin::Near, fit(1.2, 0.05)), (DistanceBin::Far, fit(4.0, 0.6))];
        let r = refraction_screen(&fits, dist(350.0), &ScreenConfig::default()).unwrap();
        assert_eq!(r.kind, ScreenKind::NoFlag);
    }

    #[test]
    fn refraction_needs_two_bins() {
        let fits = [(DistanceBin::Near, fit(1.2, 0.05))];
        assert!(refraction_screen(&fits, dist(350.0), &ScreenConfig::default()).is_err());
    }

    #[test]
    fn isotropic_orientation_no_flag() {
        let fits: Vec<_> = [0.0, 45.0, 90.0, 135.0].map(|a| (a, fit(0.02, 0.05))).into();
        let r = astigmatism_index(&fits, &ScreenConfig::default()).unwrap();
        assert_eq!(r.kind, ScreenKind::NoFlag);
    }

    #[test]
    fn astigmatic_axis_recovered() {
        // Cylinder at 90: the 0° grating is worst, 90° best.
        let fits = [
            (0.0, fit(0.41, 0.05)),
            (45.0, fit(0.21, 0.05)),
            (90.0, fit(0.02, 0.05)),
            (135.0, fit(0.21, 0.05)),
        ];
        let r = astigmatism_index(&fits, &ScreenConfig::default()).unwrap();
        let ScreenKind::AstigmatismSuspect { axis_deg } = r.kind else { panic!("{r:?}") };
        assert!((axis_deg - 90.0).abs() < 1e-9);
        assert!((r.effect_size - (0.41 / 0.02 - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn astigmatism_needs_four_axes() {
        let fits: Vec<_> = [0.0, 60.0, 120.0].map(|a| (a, fit(0.02, 0.05))).into();
        assert!(astigmatism_index(&fits, &ScreenConfig::default()).is_err());
    }

    #[test]
    fn cvd_axes() {
        let cfg = ScreenConfig::default();
        let equal: Vec<_> = ColorAxis::ALL.map(|a| (a, fit(0.02, 0.05))).into();
        assert_eq!(cvd_classify(&equal, &cfg).unwrap().kind, ScreenKind::NoFlag);
        let deutan = [
            (ColorAxis::Protan, fit(0.02, 0.05)),
            (ColorAxis::Deutan, fit(0.2, 0.05)),
            (ColorAxis::Tritan, fit(0.02, 0.05)),
        ];
        let r = cvd_classify(&deutan, &cfg).unwrap();
        assert_eq!(r.kind, ScreenKind::CvdSuspect { axis: ColorAxis::Deutan });
        assert!((r.effect_size - 9.0).abs() < 1e-9);
        assert!(cvd_classify(&deutan[..2], &cfg).is_err());
    }

    #[test]
    fn scotopic_cases() {
        let cfg = ScreenConfig::default();
        let r = scotopic_ratio(Some(&fit(1.2, 0.05)), Some(&fit(0.024, 0.05)), &cfg).unwrap();
        assert_eq!(r.kind, ScreenKind::NoFlag);
        let r = scotopic_ratio(Some(&fit(1.2, 0.05)), Some(&fit(0.072, 0.05)), &cfg).unwrap();
        assert_eq!(r.kind, ScreenKind::NyctalopiaSuspect);
        assert!((r.effect_size - 2.0).abs() < 1e-9);
        assert!(scotopic_ratio(Some(&fit(1.2, 0.05)), None, &cfg).is_err());
    }

    #[test]
    fn json_shape() {
        let r = ScreenResult {
            screen: Screen::ColorVision,
            kind: ScreenKind::CvdSuspect { axis: ColorAxis::Deutan },
            effect_size: 1.0,
            evidence: Vec::new(),
            distance_corroborated: None,
        };
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["kind"]["kind"], "cvd_suspect");
        assert_eq!(v["kind"]["axis"], "deutan");
        assert_eq!(v["screen"], "color_vision");
    }
}
