//! Parametric probe descriptions for the four screening channels.
//!
//! A [`StimulusSpec`] is what the game UI renders and what the simulated
//! observer answers. Intensities are physical: gap size in arcmin (acuity),
//! RSS cone contrast (color axes), Michelson contrast of a fixed-frequency
//! grating (orientation) and luminance increment in cd/m² (dim light).

use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::{color_axis_colors, ColorError, ConeTransform, LinearRgb};
use crate::geometry::{arcmin_to_px, GeometryError, ScreenProfile, ViewingSample};
use crate::schema::SchemaV1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorAxis {
    Protan,
    Deutan,
    Tritan,
}

impl ColorAxis {
    pub const ALL: [ColorAxis; 3] = [ColorAxis::Protan, ColorAxis::Deutan, ColorAxis::Tritan];

    pub fn name(self) -> &'static str {
        match self {
            ColorAxis::Protan => "protan",
            ColorAxis::Deutan => "deutan",
            ColorAxis::Tritan => "tritan",
        }
    }
}

/// What a probe measures.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Channel {
    Acuity,
    ColorAxis { axis: ColorAxis },
    Orientation { axis_deg: f64 },
    Scotopic,
}

impl Channel {
    pub fn color(axis: ColorAxis) -> Self {
        Channel::ColorAxis { axis }
    }

    pub fn orientation(axis_deg: f64) -> Result<Self, StimulusError> {
        let ch = Channel::Orientation { axis_deg };
        ch.validate()?;
        Ok(ch)
    }

    pub fn validate(&self) -> Result<(), StimulusError> {
        match self {
            Channel::Orientation { axis_deg } if !(0.0..180.0).contains(axis_deg) => {
                Err(StimulusError::InvalidChannel)
            }
            _ => Ok(()),
        }
    }

    /// Stable label used in report keys, e.g. `orientation/45`.
    pub fn label(&self) -> alloc::string::String {
        use alloc::format;
        match self {
            Channel::Acuity => "acuity".into(),
            Channel::ColorAxis { axis } => format!("color/{}", axis.name()),
            Channel::Orientation { axis_deg } => format!("orientation/{axis_deg}"),
            Channel::Scotopic => "scotopic".into(),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Channel::Acuity => 0,
            Channel::ColorAxis { .. } => 1,
            Channel::Orientation { .. } => 2,
            Channel::Scotopic => 3,
        }
    }
}

impl Ord for Channel {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Channel::ColorAxis { axis: a }, Channel::ColorAxis { axis: b }) => a.cmp(b),
            (Channel::Orientation { axis_deg: a }, Channel::Orientation { axis_deg: b }) => {
                a.total_cmp(b)
            }
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for Channel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Channel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Channel {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    /// Dedicated mini-game, e.g. during a loading break.
    MiniGame,
    /// Probe disguised as an object of the main game.
    Integrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum StimulusError {
    #[error("dim-light probes need ambient <= {max_lux} lux, got {lux}")]
    AmbientTooBright { lux: f64, max_lux: f64 },
    #[error("intensity {0} outside the channel bounds")]
    InvalidIntensity(f64),
    #[error("orientation axis must be in [0, 180)")]
    InvalidChannel,
    #[error("alphabet needs at least two symbols")]
    InvalidAlphabet,
    #[error("probe does not fit on the screen")]
    DoesNotFit,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Color(#[from] ColorError),
}

/// Per-axis backgrounds for color probes (linear RGB).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorBackgrounds {
    pub protan: LinearRgb,
    pub deutan: LinearRgb,
    pub tritan: LinearRgb,
}

impl ColorBackgrounds {
    pub fn for_axis(&self, axis: ColorAxis) -> LinearRgb {
        match axis {
            ColorAxis::Protan => self.protan,
            ColorAxis::Deutan => self.deutan,
            ColorAxis::Tritan => self.tritan,
        }
    }
}

impl Default for ColorBackgrounds {
    // Chosen to leave >= 0.5 RSS cone contrast of gamut room on each axis.
    fn default() -> Self {
        Self {
            protan: [0.05, 0.25, 0.05],
            deutan: [0.95, 0.05, 0.05],
            tritan: [0.5, 0.5, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StimulusConfig {
    /// Landolt-C outer diameter in gap widths.
    pub landolt_diameter_gaps: f64,
    pub color_symbol_arcmin: f64,
    pub grating_cycles_per_degree: f64,
    pub grating_patch_arcmin: f64,
    pub scotopic_target_arcmin: f64,
    /// Dim-light probes are refused above this ambient level.
    pub scotopic_max_lux: f64,
    /// Critical features smaller than this are marked infeasible.
    pub min_feature_px: f64,
    pub cone_transform: ConeTransform,
    pub color_backgrounds: ColorBackgrounds,
}

impl Default for StimulusConfig {
    fn default() -> Self {
        Self {
            landolt_diameter_gaps: 5.0,
            color_symbol_arcmin: 60.0,
            grating_cycles_per_degree: 6.0,
            grating_patch_arcmin: 120.0,
            scotopic_target_arcmin: 60.0,
            scotopic_max_lux: 10.0,
            min_feature_px: 1.0,
            cone_transform: ConeTransform::default(),
            color_backgrounds: ColorBackgrounds::default(),
        }
    }
}

impl StimulusConfig {
    /// Angular size of the feature that must be resolved, and of the whole
    /// probe, for `channel` at `intensity`.
    fn feature_and_extent_arcmin(&self, channel: &Channel, intensity: f64) -> (f64, f64) {
        match channel {
            Channel::Acuity => (intensity, intensity * self.landolt_diameter_gaps),
            Channel::ColorAxis { .. } => (self.color_symbol_arcmin, self.color_symbol_arcmin),
            Channel::Orientation { .. } => {
                // One bar is half a grating period.
                let bar = 60.0 / self.grating_cycles_per_degree / 2.0;
                (bar, self.grating_patch_arcmin)
            }
            Channel::Scotopic => (self.scotopic_target_arcmin, self.scotopic_target_arcmin),
        }
    }
}

/// One probe as rendered by the UI and answered by the observer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusSpec {
    #[serde(default)]
    pub v: SchemaV1,
    pub channel: Channel,
    pub intensity: f64,
    pub target_descriptor: u32,
    pub distractor_descriptors: Vec<u32>,
    pub position_px: (f64, f64),
    pub rendered_size_px: f64,
    pub mode: ProbeMode,
    pub feasible: bool,
}

impl StimulusSpec {
    /// Number of response alternatives.
    pub fn alternatives(&self) -> u32 {
        self.distractor_descriptors.len() as u32 + 1
    }

    /// Checks the invariants a received spec must satisfy.
    pub fn validate(&self, screen: &ScreenProfile) -> Result<(), StimulusError> {
        self.channel.validate()?;
        check_intensity(&self.channel, self.intensity, screen)?;
        if self.distractor_descriptors.is_empty()
            || self.distractor_descriptors.contains(&self.target_descriptor)
        {
            return Err(StimulusError::InvalidAlphabet);
        }
        let (x, y) = self.position_px;
        if !(0.0..=f64::from(screen.width_px)).contains(&x)
            || !(0.0..=f64::from(screen.height_px)).contains(&y)
        {
            return Err(StimulusError::DoesNotFit);
        }
        if !(self.rendered_size_px >= 0.0) {
            return Err(StimulusError::InvalidIntensity(self.rendered_size_px));
        }
        Ok(())
    }
}

/// Inputs for [`make_stimulus`] besides the display context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRequest {
    pub channel: Channel,
    pub intensity: f64,
    pub mode: ProbeMode,
    pub alphabet_size: u32,
    pub seed: u64,
}

fn check_intensity(
    channel: &Channel,
    intensity: f64,
    screen: &ScreenProfile,
) -> Result<(), StimulusError> {
    let ok = match channel {
        Channel::Acuity => intensity > 0.0 && intensity.is_finite(),
        Channel::ColorAxis { .. } | Channel::Orientation { .. } => {
            intensity > 0.0 && intensity <= 1.0
        }
        Channel::Scotopic => intensity > 0.0 && intensity <= screen.luminance_range(),
    };
    if ok {
        Ok(())
    } else {
        Err(StimulusError::InvalidIntensity(intensity))
    }
}

/// Builds the probe for `req` on `screen` as seen from `view`.
///
/// Placement and symbol choice come from a ChaCha8 stream seeded with
/// `req.seed`, so identical inputs give an identical spec.
pub fn make_stimulus(
    req: &ProbeRequest,
    screen: &ScreenProfile,
    view: &ViewingSample,
    cfg: &StimulusConfig,
) -> Result<StimulusSpec, StimulusError> {
    view.validate()?;
    req.channel.validate()?;
    if req.alphabet_size < 2 {
        return Err(StimulusError::InvalidAlphabet);
    }
    if matches!(req.channel, Channel::Scotopic) && view.ambient_lux > cfg.scotopic_max_lux {
        return Err(StimulusError::AmbientTooBright {
            lux: view.ambient_lux,
            max_lux: cfg.scotopic_max_lux,
        });
    }
    check_intensity(&req.channel, req.intensity, screen)?;
    if let Channel::ColorAxis { axis } = req.channel {
        color_axis_colors(
            axis,
            req.intensity,
            cfg.color_backgrounds.for_axis(axis),
            &cfg.cone_transform,
        )?;
    }

    let (feature_arcmin, extent_arcmin) = cfg.feature_and_extent_arcmin(&req.channel, req.intensity);
    let rendered_size_px = arcmin_to_px(feature_arcmin, screen, view.distance_mm)?;
    let extent_px = arcmin_to_px(extent_arcmin, screen, view.distance_mm)
        .map_err(|_| StimulusError::DoesNotFit)?;
    let (w, h) = (f64::from(screen.width_px), f64::from(screen.height_px));
    if extent_px > w || extent_px > h {
        return Err(StimulusError::DoesNotFit);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let half = extent_px / 2.0;
    let x = half + rng.random::<f64>() * (w - extent_px);
    let y = half + rng.random::<f64>() * (h - extent_px);
    let target = rng.random_range(0..req.alphabet_size);
    let distractors = (0..req.alphabet_size).filter(|s| *s != target).collect();

    Ok(StimulusSpec {
        v: SchemaV1,
        channel: req.channel,
        intensity: req.intensity,
        target_descriptor: target,
        distractor_descriptors: distractors,
        position_px: (x, y),
        rendered_size_px,
        mode: req.mode,
        feasible: rendered_size_px >= cfg.min_feature_px,
    })
}

/// Linear-RGB target and background a UI should draw for a color probe.
pub fn probe_colors(
    spec: &StimulusSpec,
    cfg: &StimulusConfig,
) -> Option<Result<(LinearRgb, LinearRgb), ColorError>> {
    match spec.channel {
        Channel::ColorAxis { axis } => Some(color_axis_colors(
            axis,
            spec.intensity,
            cfg.color_backgrounds.for_axis(axis),
            &cfg.cone_transform,
        )),
        _ => None,
    }
}
