//! Simulated child with known impairments.
//!
//! The optics here are the ground truth of the simulation, not a clinical
//! model. Defocus for sphere `S`, accommodation `A` and distance `d`:
//! myope `E = max(0, |S| − 1/d)`, otherwise `E = max(0, 1/d + S − A)`.
//! Blur adds in quadrature to baseline acuity with a blur disc of
//! `3.44 · pupil_mm · E` arcmin (pupil in mm times defocus in D gives
//! milliradians; 1 mrad = 3.44 arcmin).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ScreenProfile, ViewingSample};
use crate::math::{exp10, log10, logistic};
use crate::schema::SchemaV1;
use crate::session::{
    bin_view, AmbientBin, BinEdges, NextTrial, Response, SessionConfig, SessionError, SessionState,
    TrialRecord,
};
use crate::stimulus::{Channel, ColorAxis, ProbeMode, StimulusConfig, StimulusSpec};

/// Arcmin of blur per mm of pupil per diopter of defocus.
pub const BLUR_ARCMIN_PER_MM_D: f64 = 3.44;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpairmentProfile {
    pub v: SchemaV1,
    /// Diopters; negative is myopia.
    pub sphere_s: f64,
    pub cyl_c: f64,
    pub axis_phi_deg: f64,
    pub accommodation_a: f64,
    pub pupil_photopic_mm: f64,
    pub pupil_mesopic_mm: f64,
    pub pupil_scotopic_mm: f64,
    pub baseline_acuity_arcmin: f64,
    pub cvd_type: Option<ColorAxis>,
    pub cvd_severity: f64,
    pub nyctalopia_factor: f64,
    pub lapse_lambda: f64,
    pub slope_beta: f64,
    /// Unimpaired RSS cone-contrast threshold on every color axis.
    pub base_color_contrast: f64,
    /// Unimpaired grating contrast threshold.
    pub base_orientation_contrast: f64,
    /// Unimpaired dim-light increment threshold (cd/m²).
    pub base_scotopic_cdm2: f64,
    pub comfort_distance_m: f64,
    pub comfort_sigma_log10: f64,
}

impl Default for ImpairmentProfile {
    fn default() -> Self {
        Self {
            v: SchemaV1,
            sphere_s: 0.0,
            cyl_c: 0.0,
            axis_phi_deg: 0.0,
            accommodation_a: 8.0,
            pupil_photopic_mm: 4.0,
            pupil_mesopic_mm: 5.0,
            pupil_scotopic_mm: 6.0,
            baseline_acuity_arcmin: 1.0,
            cvd_type: None,
            cvd_severity: 0.0,
            nyctalopia_factor: 1.0,
            lapse_lambda: 0.02,
            slope_beta: 8.0,
            base_color_contrast: 0.02,
            base_orientation_contrast: 0.02,
            base_scotopic_cdm2: 0.02,
            comfort_distance_m: 0.7,
            comfort_sigma_log10: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObserverError {
    #[error("stimulus is not renderable")]
    InfeasibleStimulus,
    #[error("invalid profile: {0}")]
    InvalidProfile(&'static str),
    #[error("n_trials must be at least 1")]
    NoTrials,
    #[error(transparent)]
    Session(#[from] SessionError),
}

impl ImpairmentProfile {
    pub fn emmetrope() -> Self {
        Self::default()
    }

    pub fn myope(sphere_s: f64) -> Self {
        Self { sphere_s, ..Self::default() }
    }

    pub fn hyperope(sphere_s: f64, accommodation_a: f64) -> Self {
        Self { sphere_s, accommodation_a, ..Self::default() }
    }

    pub fn astigmat(cyl_c: f64, axis_phi_deg: f64) -> Self {
        Self { cyl_c, axis_phi_deg, ..Self::default() }
    }

    pub fn cvd(axis: ColorAxis, severity: f64) -> Self {
        Self { cvd_type: Some(axis), cvd_severity: severity, ..Self::default() }
    }

    pub fn nyctalope(factor: f64) -> Self {
        Self { nyctalopia_factor: factor, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ObserverError> {
        let bad = |m| Err(ObserverError::InvalidProfile(m));
        if !(0.0..=1.0).contains(&self.cvd_severity) {
            return bad("cvd_severity must be in [0, 1]");
        }
        if !(self.nyctalopia_factor >= 1.0) {
            return bad("nyctalopia_factor must be >= 1");
        }
        if !(self.cyl_c >= 0.0) || !(0.0..180.0).contains(&self.axis_phi_deg) {
            return bad("cylinder must be >= 0 with axis in [0, 180)");
        }
        if !(self.accommodation_a >= 0.0) {
            return bad("accommodation must be >= 0");
        }
        let positive = [
            self.pupil_photopic_mm,
            self.pupil_mesopic_mm,
            self.pupil_scotopic_mm,
            self.baseline_acuity_arcmin,
            self.slope_beta,
            self.base_color_contrast,
            self.base_orientation_contrast,
            self.base_scotopic_cdm2,
            self.comfort_distance_m,
        ];
        if positive.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return bad("pupils, thresholds, slope and comfort distance must be positive");
        }
        if !(0.0..1.0).contains(&self.lapse_lambda) || !(self.comfort_sigma_log10 >= 0.0) {
            return bad("lapse must be in [0, 1) and sigma >= 0");
        }
        Ok(())
    }

    pub fn pupil_mm(&self, ambient: AmbientBin) -> f64 {
        match ambient {
            AmbientBin::Photopic => self.pupil_photopic_mm,
            AmbientBin::Mesopic => self.pupil_mesopic_mm,
            AmbientBin::Scotopic => self.pupil_scotopic_mm,
        }
    }

    /// Distances (m) at which defocus is zero, as `(min, max)`; `None` when
    /// no distance is sharp.
    pub fn sharp_zone(&self) -> Option<(f64, f64)> {
        if self.sphere_s < 0.0 {
            Some((0.0, 1.0 / -self.sphere_s))
        } else if self.accommodation_a > self.sphere_s {
            Some((1.0 / (self.accommodation_a - self.sphere_s), f64::INFINITY))
        } else {
            None
        }
    }
}

pub fn defocus_diopters(profile: &ImpairmentProfile, distance_m: f64) -> f64 {
    let vergence = 1.0 / distance_m;
    if profile.sphere_s < 0.0 {
        (-profile.sphere_s - vergence).max(0.0)
    } else {
        (vergence + profile.sphere_s - profile.accommodation_a).max(0.0)
    }
}

/// Acuity-equivalent blur threshold (arcmin) for an effective defocus.
fn blurred_acuity(profile: &ImpairmentProfile, pupil_mm: f64, defocus: f64) -> f64 {
    let blur = BLUR_ARCMIN_PER_MM_D * pupil_mm * defocus;
    libm::sqrt(profile.baseline_acuity_arcmin * profile.baseline_acuity_arcmin + blur * blur)
}

/// Intensity at the inflection of the observer's psychometric function, in
/// the channel's own units.
pub fn effective_threshold(
    profile: &ImpairmentProfile,
    channel: &Channel,
    view: &ViewingSample,
    bins: &BinEdges,
) -> f64 {
    let (_, ambient) = bin_view(view, bins);
    let pupil = profile.pupil_mm(ambient);
    let e = defocus_diopters(profile, view.distance_mm / 1000.0);
    match channel {
        Channel::Acuity => blurred_acuity(profile, pupil, e),
        Channel::Orientation { axis_deg } => {
            let s = libm::sin((axis_deg - profile.axis_phi_deg).to_radians());
            let theta = blurred_acuity(profile, pupil, e + profile.cyl_c * s * s);
            profile.base_orientation_contrast * theta / profile.baseline_acuity_arcmin
        }
        Channel::ColorAxis { axis } => {
            if profile.cvd_type == Some(*axis) {
                profile.base_color_contrast * (1.0 + 9.0 * profile.cvd_severity)
            } else {
                profile.base_color_contrast
            }
        }
        Channel::Scotopic => profile.base_scotopic_cdm2 * profile.nyctalopia_factor,
    }
}

/// Probability of a correct answer to `spec` seen from `view`.
pub fn p_correct(profile: &ImpairmentProfile, spec: &StimulusSpec, view: &ViewingSample, bins: &BinEdges) -> f64 {
    let theta = effective_threshold(profile, &spec.channel, view, bins);
    let gamma = 1.0 / f64::from(spec.alternatives());
    let z = (log10(spec.intensity) - log10(theta)) * profile.slope_beta;
    gamma + (1.0 - gamma - profile.lapse_lambda) * logistic(z)
}

pub fn respond<R: Rng + ?Sized>(
    profile: &ImpairmentProfile,
    spec: &StimulusSpec,
    view: &ViewingSample,
    bins: &BinEdges,
    rng: &mut R,
) -> Result<Response, ObserverError> {
    if !spec.feasible {
        return Err(ObserverError::InfeasibleStimulus);
    }
    let p = p_correct(profile, spec, view, bins);
    Ok(if rng.random::<f64>() < p { Response::Correct } else { Response::Incorrect })
}

/// Comfortable viewing distance (m): log-normal around the comfort distance,
/// clamped into the zone where the child sees sharply.
pub fn preferred_distance<R: Rng + ?Sized>(profile: &ImpairmentProfile, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    let d = profile.comfort_distance_m * exp10(profile.comfort_sigma_log10 * z);
    match profile.sharp_zone() {
        Some((lo, hi)) => d.clamp(lo, hi),
        None => d,
    }
}

/// Ambient light per trial: a repeating cycle of `(trials, lux)` blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbientSchedule {
    pub cycle: Vec<(u32, f64)>,
}

impl Default for AmbientSchedule {
    /// Mostly daylight play with some evening play in a dark room.
    fn default() -> Self {
        Self { cycle: Vec::from([(16, 300.0), (1, 40.0), (3, 3.0)]) }
    }
}

impl AmbientSchedule {
    pub fn constant(lux: f64) -> Self {
        Self { cycle: Vec::from([(1, lux)]) }
    }

    pub fn lux_at(&self, trial: usize) -> f64 {
        let period: u32 = self.cycle.iter().map(|(n, _)| n).sum();
        if period == 0 {
            return 300.0;
        }
        let mut pos = (trial % period as usize) as u32;
        for (n, lux) in &self.cycle {
            if pos < *n {
                return *lux;
            }
            pos -= n;
        }
        unreachable!("position within period")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub trial_interval_ms: i64,
    pub response_time_ms: u64,
    pub mode: ProbeMode,
    /// Fraction of trials played from a seat the room imposes instead of the
    /// preferred distance.
    pub room_seat_fraction: f64,
    pub room_seat_min_m: f64,
    pub room_seat_max_m: f64,
    pub session: SessionConfig,
    pub stimulus: StimulusConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            trial_interval_ms: 12_000,
            response_time_ms: 800,
            mode: ProbeMode::MiniGame,
            room_seat_fraction: 0.5,
            room_seat_min_m: 0.25,
            room_seat_max_m: 2.0,
            session: SessionConfig::default(),
            stimulus: StimulusConfig::default(),
        }
    }
}

impl SimConfig {
    /// Viewing distance (m) for one trial.
    pub fn sample_distance<R: Rng + ?Sized>(&self, profile: &ImpairmentProfile, rng: &mut R) -> f64 {
        if rng.random::<f64>() < self.room_seat_fraction {
            let (lo, hi) = (libm::log(self.room_seat_min_m), libm::log(self.room_seat_max_m));
            libm::exp(lo + (hi - lo) * rng.random::<f64>())
        } else {
            preferred_distance(profile, rng)
        }
    }
}

/// Identity and timing of one simulated session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionPlan {
    pub child_id: String,
    pub session_id: String,
    pub start_ms: i64,
    /// Probe attempts; deferred attempts produce no record.
    pub n_trials: usize,
    pub seed: u64,
}

/// Plays one session and returns its event log.
pub fn run_session(
    profile: &ImpairmentProfile,
    screen: &ScreenProfile,
    schedule: &AmbientSchedule,
    plan: &SessionPlan,
    cfg: &SimConfig,
) -> Result<Vec<TrialRecord>, ObserverError> {
    profile.validate()?;
    if plan.n_trials == 0 {
        return Err(ObserverError::NoTrials);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut state = SessionState::new(
        plan.child_id.clone(),
        plan.session_id.clone(),
        *screen,
        plan.seed ^ 0xA5A5_5A5A_C3C3_3C3C,
        cfg.session.clone(),
        cfg.stimulus.clone(),
    );
    for i in 0..plan.n_trials {
        let view = ViewingSample {
            distance_mm: 1000.0 * cfg.sample_distance(profile, &mut rng),
            ambient_lux: schedule.lux_at(i),
            timestamp_ms: plan.start_ms + i as i64 * cfg.trial_interval_ms,
        };
        let NextTrial::Probe(spec) = state.next_trial(&view, cfg.mode) else {
            continue;
        };
        let response = respond(profile, &spec, &view, &cfg.session.bins, &mut rng)?;
        state.record_response(TrialRecord {
            v: SchemaV1,
            session_id: plan.session_id.clone(),
            trial_id: format!("{}-{i:05}", plan.session_id),
            spec,
            view,
            response,
            response_time_ms: cfg.response_time_ms,
            credit_awarded: false,
        })?;
    }
    Ok(state.trials().to_vec())
}

/// A series of sessions, one every `interval_ms`, where session `k` is played
/// with `profile_at(k)`.
pub fn run_course(
    child_id: &str,
    profile_at: impl Fn(usize) -> ImpairmentProfile,
    screen: &ScreenProfile,
    schedule: &AmbientSchedule,
    n_sessions: usize,
    trials_per_session: usize,
    interval_ms: i64,
    seed: u64,
    cfg: &SimConfig,
) -> Result<Vec<TrialRecord>, ObserverError> {
    let mut log = Vec::new();
    for k in 0..n_sessions {
        let plan = SessionPlan {
            child_id: child_id.into(),
            session_id: format!("{child_id}-s{k:03}"),
            start_ms: k as i64 * interval_ms,
            n_trials: trials_per_session,
            seed: seed.wrapping_mul(1_000_003).wrapping_add(k as u64),
        };
        log.extend(run_session(&profile_at(k), screen, schedule, &plan, cfg)?);
    }
    Ok(log)
}
