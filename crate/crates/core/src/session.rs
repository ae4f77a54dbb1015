//! Covert probe scheduling inside a play session.
//!
//! Each condition cell keeps its own staircase. The cell of a channel is the
//! part of the viewing context its screen depends on: acuity is binned by
//! distance and ambient light, every other channel by ambient light only.
//! [`SessionState::next_trial`] picks the eligible channel with the fewest
//! recorded trials in its cell and emits a feasible probe at that cell's
//! staircase intensity, or defers.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, ScreenProfile, ViewingSample};
use crate::schema::SchemaV1;
use crate::staircase::{Staircase, StaircaseParams};
use crate::stimulus::{
    make_stimulus, Channel, ColorAxis, ProbeMode, ProbeRequest, StimulusConfig, StimulusError,
    StimulusSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceBin {
    Near,
    Mid,
    Far,
}

impl DistanceBin {
    pub const ALL: [DistanceBin; 3] = [DistanceBin::Near, DistanceBin::Mid, DistanceBin::Far];

    pub fn name(self) -> &'static str {
        match self {
            DistanceBin::Near => "near",
            DistanceBin::Mid => "mid",
            DistanceBin::Far => "far",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmbientBin {
    Scotopic,
    Mesopic,
    Photopic,
}

impl AmbientBin {
    pub fn name(self) -> &'static str {
        match self {
            AmbientBin::Scotopic => "scotopic",
            AmbientBin::Mesopic => "mesopic",
            AmbientBin::Photopic => "photopic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinEdges {
    pub near_mid_mm: f64,
    pub mid_far_mm: f64,
    pub scotopic_max_lux: f64,
    pub photopic_min_lux: f64,
}

impl Default for BinEdges {
    fn default() -> Self {
        Self { near_mid_mm: 450.0, mid_far_mm: 900.0, scotopic_max_lux: 10.0, photopic_min_lux: 100.0 }
    }
}

/// Distance and ambient bins of a viewing sample. Lower edges belong to the
/// upper distance bin; ambient `<= scotopic_max_lux` is scotopic and
/// `>= photopic_min_lux` photopic.
pub fn bin_view(view: &ViewingSample, edges: &BinEdges) -> (DistanceBin, AmbientBin) {
    let distance = if view.distance_mm < edges.near_mid_mm {
        DistanceBin::Near
    } else if view.distance_mm < edges.mid_far_mm {
        DistanceBin::Mid
    } else {
        DistanceBin::Far
    };
    let ambient = if view.ambient_lux <= edges.scotopic_max_lux {
        AmbientBin::Scotopic
    } else if view.ambient_lux < edges.photopic_min_lux {
        AmbientBin::Mesopic
    } else {
        AmbientBin::Photopic
    };
    (distance, ambient)
}

/// A channel together with the condition cell it is tracked in.
///
/// `distance` is `Some` only for acuity cells; an acuity stratum with
/// `distance: None` denotes acuity pooled over all distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Stratum {
    pub channel: Channel,
    pub distance: Option<DistanceBin>,
    pub ambient: AmbientBin,
}

impl Stratum {
    pub fn for_view(channel: Channel, view: &ViewingSample, edges: &BinEdges) -> Self {
        let (distance, ambient) = bin_view(view, edges);
        let distance = matches!(channel, Channel::Acuity).then_some(distance);
        Self { channel, distance, ambient }
    }

    /// Report key, e.g. `acuity/far/photopic` or `color/deutan/photopic`.
    pub fn label(&self) -> String {
        match (self.channel, self.distance) {
            (Channel::Acuity, Some(d)) => format!("acuity/{}/{}", d.name(), self.ambient.name()),
            (Channel::Acuity, None) => format!("acuity/all/{}", self.ambient.name()),
            (ch, _) => format!("{}/{}", ch.label(), self.ambient.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Correct,
    Incorrect,
    NoResponse,
}

/// One probe outcome; the unit of the append-only event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    #[serde(default)]
    pub v: SchemaV1,
    #[serde(default)]
    pub session_id: String,
    pub trial_id: String,
    pub spec: StimulusSpec,
    pub view: ViewingSample,
    pub response: Response,
    pub response_time_ms: u64,
    pub credit_awarded: bool,
}

impl TrialRecord {
    /// Checks the probe and viewing covariates; identifiers are the
    /// ingesting service's concern.
    pub fn validate(&self, screen: &ScreenProfile) -> Result<(), StimulusError> {
        self.view.validate()?;
        self.spec.validate(screen)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub channels: Vec<Channel>,
    pub acuity: StaircaseParams,
    pub color: StaircaseParams,
    pub orientation: StaircaseParams,
    pub scotopic: StaircaseParams,
    pub budget_mini_game: u32,
    pub budget_integrated: u32,
    pub budget_window_ms: i64,
    pub alphabet_size: u32,
    pub bins: BinEdges,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let mut channels = Vec::from([Channel::Acuity]);
        channels.extend(ColorAxis::ALL.map(Channel::color));
        channels.extend([0.0, 45.0, 90.0, 135.0].map(|a| Channel::Orientation { axis_deg: a }));
        channels.push(Channel::Scotopic);
        Self {
            channels,
            acuity: StaircaseParams::new(2.0, 0.5, 60.0),
            color: StaircaseParams::new(0.03, 0.002, 0.45),
            orientation: StaircaseParams::new(0.03, 0.002, 1.0),
            scotopic: StaircaseParams::new(0.03, 0.001, 2.0),
            budget_mini_game: 6,
            budget_integrated: 3,
            budget_window_ms: 60_000,
            alphabet_size: 4,
            bins: BinEdges::default(),
        }
    }
}

impl SessionConfig {
    pub fn staircase_params(&self, channel: &Channel) -> StaircaseParams {
        match channel {
            Channel::Acuity => self.acuity,
            Channel::ColorAxis { .. } => self.color,
            Channel::Orientation { .. } => self.orientation,
            Channel::Scotopic => self.scotopic,
        }
    }

    pub fn budget(&self, mode: ProbeMode) -> u32 {
        match mode {
            ProbeMode::MiniGame => self.budget_mini_game,
            ProbeMode::Integrated => self.budget_integrated,
        }
    }

    /// Channels that may be probed under `ambient`: dim-light probes only in
    /// the dark, everything else only outside it.
    pub fn eligible_channels(&self, ambient: AmbientBin) -> impl Iterator<Item = Channel> + '_ {
        self.channels.iter().copied().filter(move |ch| {
            matches!(ch, Channel::Scotopic) == (ambient == AmbientBin::Scotopic)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeferReason {
    BudgetExhausted,
    NoEligibleChannel,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NextTrial {
    Probe(StimulusSpec),
    Defer(DeferReason),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("trial {0} already recorded")]
    DuplicateTrial(String),
    #[error("no staircase configured for channel {0}")]
    UnknownChannel(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Mutable state of one child's play session. Single writer.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub child_id: String,
    pub session_id: String,
    pub screen: ScreenProfile,
    pub rng_seed: u64,
    config: SessionConfig,
    stimulus: StimulusConfig,
    staircases: BTreeMap<Stratum, Staircase>,
    counts: BTreeMap<Stratum, u32>,
    trials: Vec<TrialRecord>,
    trial_ids: BTreeSet<String>,
    recent_probes: VecDeque<i64>,
    issued: u64,
}

impl SessionState {
    pub fn new(
        child_id: impl Into<String>,
        session_id: impl Into<String>,
        screen: ScreenProfile,
        rng_seed: u64,
        config: SessionConfig,
        stimulus: StimulusConfig,
    ) -> Self {
        Self {
            child_id: child_id.into(),
            session_id: session_id.into(),
            screen,
            rng_seed,
            config,
            stimulus,
            staircases: BTreeMap::new(),
            counts: BTreeMap::new(),
            trials: Vec::new(),
            trial_ids: BTreeSet::new(),
            recent_probes: VecDeque::new(),
            issued: 0,
        }
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn trials(&self) -> &[TrialRecord] {
        &self.trials
    }

    pub fn staircase(&self, stratum: &Stratum) -> Option<&Staircase> {
        self.staircases.get(stratum)
    }

    /// Current intensity of the staircase for `stratum` (its start value if
    /// the cell has not been probed yet).
    pub fn intensity(&self, stratum: &Stratum) -> f64 {
        self.staircases
            .get(stratum)
            .map(Staircase::intensity)
            .unwrap_or_else(|| self.config.staircase_params(&stratum.channel).start)
    }

    pub fn trial_count(&self, stratum: &Stratum) -> u32 {
        self.counts.get(stratum).copied().unwrap_or(0)
    }

    /// Probes issued in the budget window ending at `now_ms`.
    pub fn probes_last_window(&self, now_ms: i64) -> usize {
        self.recent_probes
            .iter()
            .filter(|t| now_ms - **t < self.config.budget_window_ms)
            .count()
    }

    pub fn next_trial(&mut self, view: &ViewingSample, mode: ProbeMode) -> NextTrial {
        if view.validate().is_err() {
            return NextTrial::Defer(DeferReason::NoEligibleChannel);
        }
        let now = view.timestamp_ms;
        let window = self.config.budget_window_ms;
        while self.recent_probes.front().is_some_and(|t| now - *t >= window) {
            self.recent_probes.pop_front();
        }
        if self.probes_last_window(now) >= self.config.budget(mode) as usize {
            return NextTrial::Defer(DeferReason::BudgetExhausted);
        }

        let (_, ambient) = bin_view(view, &self.config.bins);
        let mut candidates: Vec<(u32, usize, Stratum)> = self
            .config
            .eligible_channels(ambient)
            .enumerate()
            .map(|(order, ch)| {
                let stratum = Stratum::for_view(ch, view, &self.config.bins);
                (self.trial_count(&stratum), order, stratum)
            })
            .collect();
        if candidates.is_empty() {
            return NextTrial::Defer(DeferReason::NoEligibleChannel);
        }
        candidates.sort_by_key(|(count, order, _)| (*count, *order));

        let seed = mix_seed(self.rng_seed, self.issued);
        for (_, _, stratum) in candidates {
            let req = ProbeRequest {
                channel: stratum.channel,
                intensity: self.intensity(&stratum),
                mode,
                alphabet_size: self.config.alphabet_size,
                seed,
            };
            if let Ok(spec) = make_stimulus(&req, &self.screen, view, &self.stimulus) {
                if spec.feasible {
                    self.issued += 1;
                    self.recent_probes.push_back(now);
                    return NextTrial::Probe(spec);
                }
            }
        }
        NextTrial::Defer(DeferReason::Infeasible)
    }

    /// Appends `trial`, moves its cell's staircase and returns whether the
    /// child earns credit. NoResponse moves the staircase like an error.
    pub fn record_response(&mut self, mut trial: TrialRecord) -> Result<bool, SessionError> {
        if self.trial_ids.contains(&trial.trial_id) {
            return Err(SessionError::DuplicateTrial(trial.trial_id));
        }
        let channel = trial.spec.channel;
        if !self.config.channels.contains(&channel) {
            return Err(SessionError::UnknownChannel(channel.label()));
        }
        trial.view.validate()?;
        let stratum = Stratum::for_view(channel, &trial.view, &self.config.bins);
        let params = self.config.staircase_params(&channel);
        self.staircases
            .entry(stratum)
            .or_insert_with(|| Staircase::new(params))
            .update(trial.response == Response::Correct);
        *self.counts.entry(stratum).or_insert(0) += 1;

        let credit = trial.response == Response::Correct;
        trial.credit_awarded = credit;
        if trial.session_id.is_empty() {
            trial.session_id.clone_from(&self.session_id);
        }
        self.trial_ids.insert(trial.trial_id.clone());
        self.trials.push(trial);
        Ok(credit)
    }
}

/// SplitMix64 finalizer over the session seed and probe counter.
fn mix_seed(seed: u64, counter: u64) -> u64 {
    let mut z = seed ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
