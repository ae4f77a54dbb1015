//! Invariants of the pure pipeline, checked on generated inputs.

use gamediag_core::color::ConeTransform;
use gamediag_core::geometry::{arcmin_to_px, px_to_arcmin, ScreenProfile, ViewingSample};
use gamediag_core::monitor::{detect_change, push_point, DetectorConfig, EstimateSeries, SeriesPoint};
use gamediag_core::observer::{self, defocus_diopters, ImpairmentProfile};
use gamediag_core::psychometric::{
    coarse_grid, fit_psychometric, fit_table, log_likelihood, mle, FitConfig, LevelTable, Observation,
    PsychometricFit, SearchBox,
};
use gamediag_core::screening::{astigmatism_index, cvd_classify, refraction_screen, DistanceStats, ScreenConfig};
use gamediag_core::session::{AmbientBin, BinEdges, DistanceBin, NextTrial, SessionConfig, Stratum};
use gamediag_core::staircase::{Staircase, StaircaseParams};
use gamediag_core::stimulus::{make_stimulus, probe_colors, ProbeRequest, StimulusConfig};
use gamediag_core::{Channel, ColorAxis, ProbeMode, Response, SchemaV1, SessionState, TrialRecord};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn screen() -> ScreenProfile {
    ScreenProfile::desktop_8k()
}

fn view(distance_mm: f64, ambient_lux: f64, timestamp_ms: i64) -> ViewingSample {
    ViewingSample { distance_mm, ambient_lux, timestamp_ms }
}

/// Binary responses from a logistic observer, `per_level` at each of
/// `levels` log-spaced intensities around `alpha`.
fn simulate(alpha: f64, beta: f64, levels: usize, per_level: usize, seed: u64) -> Vec<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = Vec::new();
    for i in 0..levels {
        let x = alpha - 0.3 + 0.6 * i as f64 / (levels - 1) as f64;
        let p = 0.25 + 0.73 / (1.0 + (-(x - alpha) * beta * std::f64::consts::LN_10).exp());
        for _ in 0..per_level {
            obs.push(Observation { intensity: 10f64.powf(x), correct: rng.random::<f64>() < p });
        }
    }
    obs
}

/// Bootstrap trimmed so generated cases stay fast; the invariants do not
/// depend on the resample count.
fn quick_fit() -> FitConfig {
    FitConfig { bootstrap_resamples: 20, ..FitConfig::default() }
}

fn fit_at(threshold: f64, half_ci_log: f64) -> PsychometricFit {
    let a = threshold.log10();
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

fn shifted(f: &PsychometricFit, log_c: f64) -> PsychometricFit {
    PsychometricFit {
        threshold_alpha: f.threshold_alpha + log_c,
        ci_alpha: (f.ci_alpha.0 + log_c, f.ci_alpha.1 + log_c),
        ..f.clone()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn visual_angle_grows_with_size_and_shrinks_with_distance(
        size in 0.1f64..2000.0,
        grow in 1.001f64..3.0,
        d in 200.0f64..5000.0,
    ) {
        let s = screen();
        let a = px_to_arcmin(size, &s, d).unwrap();
        prop_assert!(px_to_arcmin(size * grow, &s, d).unwrap() > a);
        prop_assert!(px_to_arcmin(size, &s, d * grow).unwrap() < a);
        let back = arcmin_to_px(a, &s, d).unwrap();
        prop_assert!((back - size).abs() <= 1e-9 * size);
    }

    #[test]
    fn staircase_stays_in_bounds(responses in prop::collection::vec(any::<bool>(), 0..400)) {
        let params = StaircaseParams::new(2.0, 0.5, 60.0);
        let mut s = Staircase::new(params);
        for r in responses {
            s.update(r);
            prop_assert!(s.intensity() >= params.min && s.intensity() <= params.max);
        }
    }

    #[test]
    fn stimulus_is_deterministic_and_ordered(
        seed in any::<u64>(),
        gap in 0.5f64..20.0,
        grow in 1.01f64..2.0,
        d in 250.0f64..2000.0,
    ) {
        let cfg = StimulusConfig::default();
        let v = view(d, 300.0, 0);
        let req = ProbeRequest { channel: Channel::Acuity, intensity: gap, mode: ProbeMode::MiniGame, alphabet_size: 4, seed };
        let a = make_stimulus(&req, &screen(), &v, &cfg).unwrap();
        let b = make_stimulus(&req, &screen(), &v, &cfg).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let bigger = make_stimulus(&ProbeRequest { intensity: gap * grow, ..req }, &screen(), &v, &cfg).unwrap();
        prop_assert!(bigger.rendered_size_px > a.rendered_size_px);
    }

    #[test]
    fn color_probes_are_in_gamut_isoluminant_and_ordered(
        axis in prop::sample::select(ColorAxis::ALL.to_vec()),
        c in 0.002f64..0.4,
        grow in 1.01f64..1.1,
    ) {
        let cfg = StimulusConfig::default();
        let req = ProbeRequest { channel: Channel::color(axis), intensity: c, mode: ProbeMode::MiniGame, alphabet_size: 4, seed: 1 };
        let v = view(600.0, 300.0, 0);
        let excursion = |spec| {
            let (t, b): ([f64; 3], [f64; 3]) = probe_colors(&spec, &cfg).unwrap().unwrap();
            prop_assert!(t.iter().chain(&b).all(|x| (0.0..=1.0).contains(x)));
            let tr = ConeTransform::default();
            let ratio = tr.luminance(t) / tr.luminance(b);
            prop_assert!((ratio - 1.0).abs() <= 0.005, "luminance ratio {}", ratio);
            Ok(t.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        };
        let (Ok(lo), Ok(hi)) = (
            make_stimulus(&req, &screen(), &v, &cfg),
            make_stimulus(&ProbeRequest { intensity: c * grow, ..req }, &screen(), &v, &cfg),
        ) else {
            // Beyond the background's gamut the probe is refused, not clipped.
            return Ok(());
        };
        prop_assert!(excursion(hi)? > excursion(lo)?);
    }

    #[test]
    fn session_budget_and_append_only(
        gaps in prop::collection::vec(0i64..20_000, 1..120),
        lux in prop::collection::vec(prop::sample::select(vec![3.0, 40.0, 300.0]), 120),
        seed in any::<u64>(),
    ) {
        let mut s = SessionState::new("kid", "s", screen(), seed, SessionConfig::default(), StimulusConfig::default());
        let mut t = 0;
        let mut probes = Vec::new();
        for (i, gap) in gaps.iter().enumerate() {
            t += gap;
            let v = view(600.0, lux[i], t);
            if let NextTrial::Probe(spec) = s.next_trial(&v, ProbeMode::MiniGame) {
                prop_assert!(spec.channel != Channel::Scotopic || v.ambient_lux <= 10.0);
                probes.push(t);
                let before = serde_json::to_value(s.trials()).unwrap();
                let trial = TrialRecord {
                    v: SchemaV1,
                    session_id: "s".into(),
                    trial_id: format!("t{i}"),
                    spec,
                    view: v,
                    response: if i % 4 == 0 { Response::Incorrect } else { Response::Correct },
                    response_time_ms: 700,
                    credit_awarded: false,
                };
                s.record_response(trial).unwrap();
                let (after, before) = (serde_json::to_value(s.trials()).unwrap(), before.as_array().unwrap().clone());
                let after = after.as_array().unwrap();
                prop_assert_eq!(after.len(), before.len() + 1);
                prop_assert_eq!(&after[..before.len()], &before[..]);
            }
        }
        for &end in &probes {
            let in_window = probes.iter().filter(|&&p| p <= end && end - p < 60_000).count();
            prop_assert!(in_window <= 6, "{} probes in the minute ending at {}", in_window, end);
        }
    }

    #[test]
    fn observer_is_monotone_in_intensity(
        s in -4.0f64..4.0,
        c in 0.0f64..3.0,
        d in 250.0f64..2000.0,
        x in 0.5f64..20.0,
        drop in 1.01f64..4.0,
    ) {
        let p = ImpairmentProfile { sphere_s: s, cyl_c: c, ..ImpairmentProfile::emmetrope() };
        let cfg = StimulusConfig::default();
        let req = ProbeRequest { channel: Channel::Acuity, intensity: x, mode: ProbeMode::MiniGame, alphabet_size: 4, seed: 0 };
        let v = view(d, 300.0, 0);
        let hi = make_stimulus(&req, &screen(), &v, &cfg).unwrap();
        let lo = make_stimulus(&ProbeRequest { intensity: x / drop, ..req }, &screen(), &v, &cfg).unwrap();
        let bins = BinEdges::default();
        prop_assert!(observer::p_correct(&p, &lo, &v, &bins) <= observer::p_correct(&p, &hi, &v, &bins));
    }

    #[test]
    fn emmetrope_needs_no_correction_beyond_near_point(a in 1.0f64..15.0, d in 0.0f64..10.0) {
        let p = ImpairmentProfile { accommodation_a: a, ..ImpairmentProfile::emmetrope() };
        prop_assert_eq!(defocus_diopters(&p, 1.0 / a + d), 0.0);
    }

    #[test]
    fn alert_decision_ignores_common_scale(
        log_t in prop::collection::vec(-0.3f64..0.6, 8..30),
        half_ci in 0.02f64..0.3,
        log_c in -3.0f64..3.0,
    ) {
        let cfg = DetectorConfig { recent_window: 3, baseline_window: 4, ..DetectorConfig::default() };
        let stratum = Stratum { channel: Channel::Acuity, distance: None, ambient: AmbientBin::Photopic };
        let build = |shift: f64| {
            let mut s = EstimateSeries::new("kid", stratum);
            for (i, l) in log_t.iter().enumerate() {
                let t = 10f64.powf(l + shift);
                let f = 10f64.powf(half_ci);
                push_point(&mut s, SeriesPoint { timestamp_ms: i as i64, threshold: t, ci: (t / f, t * f), n_trials: 48 }).unwrap();
            }
            s
        };
        let (a, b) = (detect_change(&build(0.0), &cfg), detect_change(&build(log_c), &cfg));
        prop_assert_eq!(a.is_some(), b.is_some());
        if let (Some(a), Some(b)) = (a, b) {
            prop_assert!((a.effect_size - b.effect_size).abs() < 1e-9);
        }
    }

    #[test]
    fn no_alert_below_minimum_points(log_t in prop::collection::vec(-2.0f64..2.0, 0..8)) {
        // Windows small enough that only the minimum-point rule can refuse.
        let cfg = DetectorConfig { recent_window: 1, baseline_window: 1, ..DetectorConfig::default() };
        let stratum = Stratum { channel: Channel::Acuity, distance: None, ambient: AmbientBin::Photopic };
        let mut s = EstimateSeries::new("kid", stratum);
        for (i, l) in log_t.iter().enumerate() {
            let t = 10f64.powf(*l);
            push_point(&mut s, SeriesPoint { timestamp_ms: i as i64, threshold: t, ci: (t * 0.999, t * 1.001), n_trials: 48 }).unwrap();
        }
        prop_assert!(detect_change(&s, &cfg).is_none());
    }

    #[test]
    fn ratio_screens_ignore_common_scale(
        t in prop::collection::vec(0.5f64..8.0, 4),
        half_ci in prop::collection::vec(0.01f64..0.4, 4),
        log_c in -2.0f64..2.0,
    ) {
        let cfg = ScreenConfig::default();
        let fits: Vec<PsychometricFit> = t.iter().zip(&half_ci).map(|(t, h)| fit_at(*t, *h)).collect();
        let moved: Vec<PsychometricFit> = fits.iter().map(|f| shifted(f, log_c)).collect();
        let same = |a: gamediag_core::ScreenResult, b: gamediag_core::ScreenResult| {
            prop_assert_eq!(a.kind == gamediag_core::ScreenKind::NoFlag, b.kind == gamediag_core::ScreenKind::NoFlag);
            prop_assert!((a.effect_size - b.effect_size).abs() < 1e-9 * (1.0 + a.effect_size));
            Ok(())
        };
        let bins = |f: &[PsychometricFit]| vec![(DistanceBin::Near, f[0].clone()), (DistanceBin::Mid, f[1].clone()), (DistanceBin::Far, f[2].clone())];
        let dist = DistanceStats { mean_mm: 600.0, sd_mm: 200.0 };
        same(refraction_screen(&bins(&fits), dist, &cfg).unwrap(), refraction_screen(&bins(&moved), dist, &cfg).unwrap())?;
        let axes = |f: &[PsychometricFit]| [0.0, 45.0, 90.0, 135.0].iter().zip(f).map(|(a, f)| (*a, f.clone())).collect::<Vec<_>>();
        same(astigmatism_index(&axes(&fits), &cfg).unwrap(), astigmatism_index(&axes(&moved), &cfg).unwrap())?;
        let colors = |f: &[PsychometricFit]| ColorAxis::ALL.iter().zip(f).map(|(a, f)| (*a, f.clone())).collect::<Vec<_>>();
        same(cvd_classify(&colors(&fits), &cfg).unwrap(), cvd_classify(&colors(&moved), &cfg).unwrap())?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fit_ignores_trial_order(seed in any::<u64>(), alpha in -1.0f64..1.5) {
        let obs = simulate(alpha, 8.0, 6, 10, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut shuffled = obs.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let cfg = quick_fit();
        prop_assert_eq!(fit_psychometric(&obs, 4, &cfg).unwrap(), fit_psychometric(&shuffled, 4, &cfg).unwrap());
    }

    #[test]
    fn threshold_moves_with_intensity_scale(seed in any::<u64>(), log_c in -2.0f64..2.0) {
        let table = LevelTable::from_observations(&simulate(0.2, 8.0, 6, 10, seed)).unwrap();
        let cfg = quick_fit();
        let a = fit_table(&table, 4, &cfg).unwrap();
        let b = fit_table(&table.scaled(10f64.powf(log_c)), 4, &cfg).unwrap();
        prop_assert!((b.threshold_alpha - a.threshold_alpha - log_c).abs() < 1e-4, "{:?} vs {:?}", a, b);
        prop_assert!((b.slope_beta - a.slope_beta).abs() < 1e-2 * a.slope_beta);
    }

    #[test]
    fn refined_fit_dominates_grid(seed in any::<u64>(), alpha in -1.0f64..1.5, beta in 2.0f64..20.0) {
        let table = LevelTable::from_observations(&simulate(alpha, beta, 7, 8, seed)).unwrap();
        let cfg = FitConfig::default();
        let (_, ll) = mle(&table, 4, &cfg).unwrap();
        let bx = SearchBox::for_table(&table, &cfg).unwrap();
        let grid_best = coarse_grid(&bx, &cfg).iter().map(|p| log_likelihood(&table, p, 0.25)).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(ll >= grid_best - 1e-12, "mle {} < grid {}", ll, grid_best);
    }
}
