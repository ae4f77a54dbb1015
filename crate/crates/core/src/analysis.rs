//! Everything derived from a child's trial log.
//!
//! [`derive`] is a pure function of the log (as a multiset per session) and
//! the config, which makes replay and incremental maintenance agree. The
//! expensive part, fitting, goes through a [`FitCache`] keyed by the exact
//! aggregated level table, so a long-lived cache returns bit-identical fits.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::config::Config;
use crate::math::{mean, std_dev};
use crate::monitor::{build_report, push_point, scan_alerts, ChannelSummary, EstimateSeries, Report, SeriesPoint};
use crate::psychometric::{fit_table, FitConfig, FitError, LevelTable, Observation, PsychometricFit};
use crate::screening::{
    astigmatism_index, cvd_classify, refraction_screen, scotopic_ratio, DistanceStats, ScreenResult,
};
use crate::session::{AmbientBin, DistanceBin, Response, Stratum, TrialRecord};
use crate::stimulus::Channel;

type TableKey = (u32, Vec<(u64, u32, u32)>);

/// Memoized fits keyed by alternatives and level table.
#[derive(Debug, Clone, Default)]
pub struct FitCache {
    fits: BTreeMap<TableKey, Result<PsychometricFit, FitError>>,
    config: Option<FitConfig>,
}

impl FitCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.fits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fits.is_empty()
    }

    pub fn fit(&mut self, table: &LevelTable, m: u32, cfg: &FitConfig) -> Result<PsychometricFit, FitError> {
        if self.config.as_ref() != Some(cfg) {
            self.fits.clear();
            self.config = Some(cfg.clone());
        }
        let key = (m, table.levels.iter().map(|l| (l.intensity.to_bits(), l.n, l.k)).collect());
        self.fits.entry(key).or_insert_with(|| fit_table(table, m, cfg)).clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivedState {
    pub report: Report,
}

/// Trials of one stratum. Only answered trials with the stratum's number of
/// alternatives enter the fit; NoResponse is inattention, not inability.
#[derive(Debug, Default)]
struct Pool {
    m: Option<u32>,
    obs: Vec<Observation>,
    n_trials: u32,
}

impl Pool {
    fn push(&mut self, trial: &TrialRecord) {
        self.n_trials += 1;
        if trial.response == Response::NoResponse {
            return;
        }
        let m = trial.spec.alternatives();
        // The first fitted trial fixes γ; a stratum never mixes guess rates.
        if *self.m.get_or_insert(m) == m {
            self.obs.push(Observation {
                intensity: trial.spec.intensity,
                correct: trial.response == Response::Correct,
            });
        }
    }

    fn fit(&self, cache: &mut FitCache, cfg: &FitConfig) -> Option<PsychometricFit> {
        let table = LevelTable::from_observations(&self.obs).ok()?;
        cache.fit(&table, self.m?, cfg).ok()
    }
}

/// Strata a trial contributes to: its cell, plus pooled acuity for acuity
/// trials. Mesopic trials feed no fit.
fn strata_of(trial: &TrialRecord, cfg: &Config) -> Vec<Stratum> {
    let cell = Stratum::for_view(trial.spec.channel, &trial.view, &cfg.session.bins);
    if cell.ambient == AmbientBin::Mesopic {
        return Vec::new();
    }
    let mut out = Vec::from([cell]);
    if cell.channel == Channel::Acuity {
        out.push(Stratum { distance: None, ..cell });
    }
    out
}

fn pools<'a>(trials: impl Iterator<Item = &'a TrialRecord>, cfg: &Config) -> BTreeMap<Stratum, Pool> {
    let mut pools: BTreeMap<Stratum, Pool> = BTreeMap::new();
    for t in trials {
        for s in strata_of(t, cfg) {
            pools.entry(s).or_default().push(t);
        }
    }
    pools
}

pub fn derive(child_id: &str, trials: &[TrialRecord], cfg: &Config) -> DerivedState {
    derive_cached(child_id, trials, cfg, &mut FitCache::new())
}

pub fn derive_cached(child_id: &str, trials: &[TrialRecord], cfg: &Config, cache: &mut FitCache) -> DerivedState {
    let mut sessions: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
    for t in trials {
        sessions.entry(t.session_id.as_str()).or_default().push(t);
    }
    // Sessions in time order of their last trial; ties by id.
    let mut ordered: Vec<(i64, &str, Vec<&TrialRecord>)> = sessions
        .into_iter()
        .map(|(id, ts)| (ts.iter().map(|t| t.view.timestamp_ms).max().unwrap_or(0), id, ts))
        .collect();
    ordered.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    let mut series: BTreeMap<Stratum, EstimateSeries> = BTreeMap::new();
    for (end_ms, _, ts) in &ordered {
        for (stratum, pool) in pools(ts.iter().copied(), cfg) {
            if let Some(fit) = pool.fit(cache, &cfg.fit) {
                let s = series.entry(stratum).or_insert_with(|| EstimateSeries::new(child_id, stratum));
                // Two sessions ending at the same instant: the later id is dropped.
                let _ = push_point(s, SeriesPoint::from_fit(&fit, *end_ms));
            }
        }
    }

    let newest = ordered.last().map(|s| s.0).unwrap_or(0);
    let window: Vec<&TrialRecord> = ordered
        .iter()
        .filter(|s| newest - s.0 <= cfg.analysis.screen_window_ms)
        .flat_map(|s| s.2.iter().copied())
        .collect();
    let window_pools = pools(window.iter().copied(), cfg);
    let mut fits: BTreeMap<Stratum, PsychometricFit> = BTreeMap::new();
    let mut channels = Vec::new();
    for (stratum, pool) in &window_pools {
        let fit = pool.fit(cache, &cfg.fit);
        if let Some(f) = &fit {
            fits.insert(*stratum, f.clone());
        }
        channels.push(ChannelSummary { label: stratum.label(), stratum: *stratum, n_trials: pool.n_trials, fit });
    }

    let screens = screens(&fits, &window, cfg);
    let alerts = series.values().flat_map(|s| scan_alerts(s, &cfg.detector)).collect();
    let report = build_report(
        child_id,
        trials.len() as u64,
        ordered.len() as u64,
        channels,
        series.into_values().filter(|s| !s.points.is_empty()).collect(),
        screens,
        alerts,
    );
    DerivedState { report }
}

/// Runs every screen whose inputs are available, all on photopic fits except
/// the dim-light channel.
fn screens(fits: &BTreeMap<Stratum, PsychometricFit>, window: &[&TrialRecord], cfg: &Config) -> Vec<ScreenResult> {
    let photopic = |channel: Channel, distance: Option<DistanceBin>| {
        fits.get(&Stratum { channel, distance, ambient: AmbientBin::Photopic })
    };
    let mut out = Vec::new();

    let by_distance: Vec<(DistanceBin, PsychometricFit)> = DistanceBin::ALL
        .iter()
        .filter_map(|d| photopic(Channel::Acuity, Some(*d)).map(|f| (*d, f.clone())))
        .collect();
    if !window.is_empty() {
        let d: Vec<f64> = window.iter().map(|t| t.view.distance_mm).collect();
        let stats = DistanceStats { mean_mm: mean(&d), sd_mm: std_dev(&d) };
        out.extend(refraction_screen(&by_distance, stats, &cfg.screens).ok());
    }

    let by_axis: Vec<(f64, PsychometricFit)> = fits
        .iter()
        .filter(|(s, _)| s.ambient == AmbientBin::Photopic)
        .filter_map(|(s, f)| match s.channel {
            Channel::Orientation { axis_deg } => Some((axis_deg, f.clone())),
            _ => None,
        })
        .collect();
    out.extend(astigmatism_index(&by_axis, &cfg.screens).ok());

    let by_color: Vec<_> = fits
        .iter()
        .filter(|(s, _)| s.ambient == AmbientBin::Photopic)
        .filter_map(|(s, f)| match s.channel {
            Channel::ColorAxis { axis } => Some((axis, f.clone())),
            _ => None,
        })
        .collect();
    out.extend(cvd_classify(&by_color, &cfg.screens).ok());

    let scot = fits.get(&Stratum { channel: Channel::Scotopic, distance: None, ambient: AmbientBin::Scotopic });
    out.extend(scotopic_ratio(photopic_reference(&by_distance), scot, &cfg.screens).ok());
    out
}

/// Photopic acuity the dim-light screen normalizes by: the median-threshold
/// distance bin (lower median for an even count). Pooling across distances
/// mixes sharp and blurred trials for a child with refractive error and gives
/// a fit that describes neither.
fn photopic_reference(by_distance: &[(DistanceBin, PsychometricFit)]) -> Option<&PsychometricFit> {
    let mut fits: Vec<&PsychometricFit> = by_distance.iter().map(|(_, f)| f).collect();
    fits.sort_by(|a, b| a.threshold_alpha.total_cmp(&b.threshold_alpha));
    fits.get(fits.len().checked_sub(1)? / 2).copied()
}

/// Distinct session ids in first-appearance order.
pub fn session_ids(trials: &[TrialRecord]) -> Vec<String> {
    let mut seen = alloc::collections::BTreeSet::new();
    trials
        .iter()
        .filter(|t| seen.insert(t.session_id.as_str()))
        .map(|t| t.session_id.clone())
        .collect()
}
