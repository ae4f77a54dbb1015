//! Threshold series across sessions, deterioration alerts and the parent
//! report.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{exp10, log10};
use crate::psychometric::PsychometricFit;
use crate::schema::SchemaV1;
use crate::screening::ScreenResult;
use crate::session::Stratum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub timestamp_ms: i64,
    /// Linear intensity units.
    pub threshold: f64,
    pub ci: (f64, f64),
    pub n_trials: u32,
}

impl SeriesPoint {
    pub fn from_fit(fit: &PsychometricFit, timestamp_ms: i64) -> Self {
        Self { timestamp_ms, threshold: fit.threshold(), ci: fit.ci_linear(), n_trials: fit.n_trials }
    }
}

/// Thresholds of one stratum over time; timestamps strictly increase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSeries {
    pub child_id: String,
    pub label: String,
    pub stratum: Stratum,
    pub points: Vec<SeriesPoint>,
}

impl EstimateSeries {
    pub fn new(child_id: impl Into<String>, stratum: Stratum) -> Self {
        Self { child_id: child_id.into(), label: stratum.label(), stratum, points: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MonitorError {
    #[error("timestamp {got} is not after the last point at {last}")]
    OutOfOrder { last: i64, got: i64 },
    #[error("unknown child")]
    NotFound,
}

pub fn update_series(series: &mut EstimateSeries, fit: &PsychometricFit, timestamp_ms: i64) -> Result<(), MonitorError> {
    push_point(series, SeriesPoint::from_fit(fit, timestamp_ms))
}

pub fn push_point(series: &mut EstimateSeries, point: SeriesPoint) -> Result<(), MonitorError> {
    if let Some(last) = series.points.last() {
        if point.timestamp_ms <= last.timestamp_ms {
            return Err(MonitorError::OutOfOrder { last: last.timestamp_ms, got: point.timestamp_ms });
        }
    }
    series.points.push(point);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub recent_window: usize,
    pub baseline_window: usize,
    pub ratio: f64,
    /// Normal quantile for the pooled window intervals.
    pub z: f64,
    pub min_points: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { recent_window: 5, baseline_window: 10, ratio: 1.5, z: 1.96, min_points: 8 }
    }
}

impl DetectorConfig {
    pub fn required_points(&self) -> usize {
        self.min_points.max(self.recent_window + self.baseline_window)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    #[serde(default)]
    pub v: SchemaV1,
    pub child_id: String,
    pub channel: String,
    pub window: (i64, i64),
    pub effect_size: f64,
    pub recommendation_text: String,
}

/// Mean log10 threshold and its standard error. Each point's standard error
/// is read off its 95% interval.
fn window_stats(points: &[SeriesPoint]) -> (f64, f64) {
    let n = points.len() as f64;
    let mean = points.iter().map(|p| log10(p.threshold)).sum::<f64>() / n;
    let var = points
        .iter()
        .map(|p| {
            let se = (log10(p.ci.1) - log10(p.ci.0)) / (2.0 * 1.96);
            se * se
        })
        .sum::<f64>();
    (mean, libm::sqrt(var) / n)
}

/// Two-window test on the newest points: geometric-mean threshold of the
/// recent window against the baseline window just before it. Fires when the
/// ratio reaches `cfg.ratio` and the windows' pooled intervals are disjoint.
/// Improvements never fire.
pub fn detect_change(series: &EstimateSeries, cfg: &DetectorConfig) -> Option<Alert> {
    let n = series.points.len();
    if n < cfg.required_points() || cfg.recent_window == 0 || cfg.baseline_window == 0 {
        return None;
    }
    let recent = &series.points[n - cfg.recent_window..];
    let baseline = &series.points[n - cfg.recent_window - cfg.baseline_window..n - cfg.recent_window];
    let (m_r, se_r) = window_stats(recent);
    let (m_b, se_b) = window_stats(baseline);
    let ratio = exp10(m_r - m_b);
    let disjoint = m_r - cfg.z * se_r > m_b + cfg.z * se_b;
    if ratio < cfg.ratio || !disjoint {
        return None;
    }
    Some(Alert {
        v: SchemaV1,
        child_id: series.child_id.clone(),
        channel: series.label.clone(),
        window: (recent[0].timestamp_ms, recent[recent.len() - 1].timestamp_ms),
        effect_size: ratio - 1.0,
        recommendation_text: recommendation(&series.stratum, ratio),
    })
}

fn recommendation(stratum: &Stratum, ratio: f64) -> String {
    use crate::stimulus::Channel;
    let what = match stratum.channel {
        Channel::Acuity => "Fine detail",
        Channel::ColorAxis { .. } => "Color discrimination",
        Channel::Orientation { .. } => "Seeing lines in one direction",
        Channel::Scotopic => "Seeing in dim light",
    };
    alloc::format!(
        "{what} ({}) has become about {ratio:.1} times harder over recent sessions. \
         This is not a diagnosis; consider an eye examination.",
        stratum.label()
    )
}

/// Runs the detector over every prefix and keeps the first alert of each run
/// of consecutive detections.
pub fn scan_alerts(series: &EstimateSeries, cfg: &DetectorConfig) -> Vec<Alert> {
    let mut alerts = Vec::new();
    let mut prefix = EstimateSeries { points: Vec::new(), ..series.clone() };
    let mut active = false;
    for p in &series.points {
        prefix.points.push(p.clone());
        match detect_change(&prefix, cfg) {
            Some(alert) if !active => {
                alerts.push(alert);
                active = true;
            }
            Some(_) => {}
            None => active = false,
        }
    }
    alerts
}

/// Latest fit of one stratum within the report window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub label: String,
    pub stratum: Stratum,
    pub n_trials: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<PsychometricFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    #[serde(default)]
    pub v: SchemaV1,
    pub child_id: String,
    pub n_trials: u64,
    pub n_sessions: u64,
    pub channels: Vec<ChannelSummary>,
    pub series: Vec<EstimateSeries>,
    pub screens: Vec<ScreenResult>,
    pub alerts: Vec<Alert>,
}

impl Report {
    pub fn flagged(&self) -> impl Iterator<Item = &ScreenResult> {
        self.screens.iter().filter(|s| s.flagged())
    }
}

/// Assembles the report with every list in a canonical order, so equal
/// inputs give equal documents regardless of the order they arrive in.
pub fn build_report(
    child_id: &str,
    n_trials: u64,
    n_sessions: u64,
    mut channels: Vec<ChannelSummary>,
    mut series: Vec<EstimateSeries>,
    mut screens: Vec<ScreenResult>,
    mut alerts: Vec<Alert>,
) -> Report {
    channels.sort_by(|a, b| a.stratum.cmp(&b.stratum));
    series.sort_by(|a, b| a.stratum.cmp(&b.stratum));
    screens.sort_by_key(|s| s.screen);
    alerts.sort_by(|a, b| (a.window.1, &a.channel).cmp(&(b.window.1, &b.channel)));
    Report {
        v: SchemaV1,
        child_id: child_id.into(),
        n_trials,
        n_sessions,
        channels,
        series,
        screens,
        alerts,
    }
}
