use serde::{Deserialize, Serialize};

use crate::geometry::ScreenProfile;
use crate::monitor::DetectorConfig;
use crate::psychometric::FitConfig;
use crate::schema::SchemaV1;
use crate::screening::ScreenConfig;
use crate::session::SessionConfig;
use crate::stimulus::StimulusConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Screens use sessions ending within this span of the newest session.
    pub screen_window_ms: i64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { screen_window_ms: 30 * 24 * 3_600_000 }
    }
}

/// Every tunable of the pipeline. Missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub v: SchemaV1,
    /// Display assumed for children registered without their own profile.
    pub screen: ScreenProfile,
    pub session: SessionConfig,
    pub stimulus: StimulusConfig,
    pub fit: FitConfig,
    pub screens: ScreenConfig,
    pub detector: DetectorConfig,
    pub analysis: AnalysisConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            v: SchemaV1,
            screen: ScreenProfile::desktop_8k(),
            session: SessionConfig::default(),
            stimulus: StimulusConfig::default(),
            fit: FitConfig::default(),
            screens: ScreenConfig::default(),
            detector: DetectorConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}
