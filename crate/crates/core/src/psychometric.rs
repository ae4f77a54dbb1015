//! Maximum-likelihood psychometric fits.
//!
//! Model: `P(correct | x) = γ + (1 − γ − λ) · L((log10 x − α) · β)` with `L`
//! the standard logistic, `γ = 1/m` fixed and `λ ∈ [0, lapse_max]`.
//!
//! Observations are first aggregated into a [`LevelTable`] sorted by
//! intensity. Every later step (likelihood, grid, refinement, bootstrap)
//! reads only the table, so a fit depends on the multiset of observations and
//! not on their order.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{exp10, log10, logistic, quantile_sorted, sorted};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub intensity: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum FitError {
    #[error("need at least {min_trials} trials at {min_levels} levels, got {trials} trials at {levels} levels")]
    InsufficientData { trials: usize, levels: usize, min_trials: usize, min_levels: usize },
    #[error("intensity {0} is not a positive finite number")]
    InvalidIntensity(f64),
    #[error("need at least two response alternatives")]
    InvalidAlternatives,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub min_trials: usize,
    pub min_levels: usize,
    pub lapse_max: f64,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    /// Grid over α extends this far (log10) beyond the tested levels; the
    /// refined α is confined to the same range.
    pub alpha_margin: f64,
    pub alpha_points: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta_points: usize,
    pub lambda_points: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            min_trials: 40,
            min_levels: 3,
            lapse_max: 0.06,
            bootstrap_resamples: 200,
            bootstrap_seed: 0x5EED,
            alpha_margin: 0.5,
            alpha_points: 41,
            beta_min: 4.0,
            beta_max: 16.0,
            beta_points: 10,
            lambda_points: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
}

/// Trials at one tested intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub intensity: f64,
    pub n: u32,
    pub k: u32,
}

/// Observations aggregated per distinct intensity, ascending.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelTable {
    pub levels: Vec<Level>,
}

impl LevelTable {
    pub fn from_observations(obs: &[Observation]) -> Result<Self, FitError> {
        let mut xs: Vec<(f64, bool)> = Vec::with_capacity(obs.len());
        for o in obs {
            if !(o.intensity > 0.0 && o.intensity.is_finite()) {
                return Err(FitError::InvalidIntensity(o.intensity));
            }
            xs.push((o.intensity, o.correct));
        }
        xs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut levels: Vec<Level> = Vec::new();
        for (x, c) in xs {
            match levels.last_mut() {
                Some(l) if l.intensity.to_bits() == x.to_bits() => {
                    l.n += 1;
                    l.k += u32::from(c);
                }
                _ => levels.push(Level { intensity: x, n: 1, k: u32::from(c) }),
            }
        }
        Ok(Self { levels })
    }

    pub fn n_trials(&self) -> usize {
        self.levels.iter().map(|l| l.n as usize).sum()
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// log10 of the lowest and highest tested intensity.
    pub fn log_range(&self) -> Option<(f64, f64)> {
        Some((log10(self.levels.first()?.intensity), log10(self.levels.last()?.intensity)))
    }

    /// Same table with every intensity multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            levels: self.levels.iter().map(|l| Level { intensity: l.intensity * c, ..*l }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsychometricFit {
    /// log10 intensity at the inflection of the logistic.
    pub threshold_alpha: f64,
    pub slope_beta: f64,
    pub guess_gamma: f64,
    pub lapse_lambda: f64,
    /// Bootstrap 95% interval for α (log10 units).
    pub ci_alpha: (f64, f64),
    pub n_trials: u32,
    pub floor_flag: bool,
    pub ceiling_flag: bool,
    /// α̂ sits on the edge of the search box: the data bound the threshold
    /// from one side only and the point estimate is not informative.
    #[serde(default)]
    pub alpha_pinned: bool,
    pub log_likelihood: f64,
}

impl PsychometricFit {
    /// Threshold in linear intensity units.
    pub fn threshold(&self) -> f64 {
        exp10(self.threshold_alpha)
    }

    pub fn ci_linear(&self) -> (f64, f64) {
        (exp10(self.ci_alpha.0), exp10(self.ci_alpha.1))
    }

    pub fn p_correct(&self, intensity: f64) -> f64 {
        p_correct(
            log10(intensity),
            &Params { alpha: self.threshold_alpha, beta: self.slope_beta, lambda: self.lapse_lambda },
            self.guess_gamma,
        )
    }
}

pub fn p_correct(log_x: f64, p: &Params, gamma: f64) -> f64 {
    gamma + (1.0 - gamma - p.lambda) * logistic((log_x - p.alpha) * p.beta)
}

/// Bernoulli log-likelihood of the table, summed in table order.
const LL_EPS: f64 = 1e-12;

pub fn log_likelihood(table: &LevelTable, p: &Params, gamma: f64) -> f64 {
    let mut ll = 0.0;
    for l in &table.levels {
        let pc = p_correct(log10(l.intensity), p, gamma).clamp(LL_EPS, 1.0 - LL_EPS);
        let (k, miss) = (f64::from(l.k), f64::from(l.n - l.k));
        if l.k > 0 {
            ll += k * libm::log(pc);
        }
        if miss > 0.0 {
            ll += miss * libm::log(1.0 - pc);
        }
    }
    ll
}

/// Parameter box searched by the fitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBox {
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
    pub lambda: (f64, f64),
}

impl SearchBox {
    pub fn for_table(table: &LevelTable, cfg: &FitConfig) -> Option<Self> {
        let (lo, hi) = table.log_range()?;
        Some(Self {
            alpha: (lo - cfg.alpha_margin, hi + cfg.alpha_margin),
            beta: (cfg.beta_min, cfg.beta_max),
            lambda: (0.0, cfg.lapse_max),
        })
    }

    fn project(&self, p: Params) -> Params {
        Params {
            alpha: p.alpha.clamp(self.alpha.0, self.alpha.1),
            beta: p.beta.clamp(self.beta.0, self.beta.1),
            lambda: p.lambda.clamp(self.lambda.0, self.lambda.1),
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    (0..n).map(move |i| if i + 1 == n && n > 1 { hi } else { lo + step * i as f64 })
}

/// The coarse grid: α linear, β log-spaced, λ linear, each including both
/// box edges.
pub fn coarse_grid(bx: &SearchBox, cfg: &FitConfig) -> Vec<Params> {
    let mut grid = Vec::with_capacity(cfg.alpha_points * cfg.beta_points * cfg.lambda_points);
    let (lb0, lb1) = (log10(bx.beta.0), log10(bx.beta.1));
    for alpha in linspace(bx.alpha.0, bx.alpha.1, cfg.alpha_points) {
        for lb in linspace(lb0, lb1, cfg.beta_points) {
            for lambda in linspace(bx.lambda.0, bx.lambda.1, cfg.lambda_points) {
                grid.push(Params { alpha, beta: exp10(lb), lambda });
            }
        }
    }
    grid
}

/// Best grid point; ties keep the earliest.
pub fn grid_search(table: &LevelTable, gamma: f64, bx: &SearchBox, cfg: &FitConfig) -> (Params, f64) {
    let mut best = (Params { alpha: bx.alpha.0, beta: bx.beta.0, lambda: 0.0 }, f64::NEG_INFINITY);
    for p in coarse_grid(bx, cfg) {
        let ll = log_likelihood(table, &p, gamma);
        if ll > best.1 {
            best = (p, ll);
        }
    }
    best
}

/// Nelder–Mead ascent in (α, log10 β, λ) over the projected box.
///
/// The start point is a vertex of the initial simplex and vertices are only
/// ever replaced by better ones, so the result is never worse than `start`.
/// Nelder–Mead in (α, log10 β, λ), projected onto the box. Stops when the
/// simplex spans less than `tol` in every coordinate.
fn refine(table: &LevelTable, gamma: f64, bx: &SearchBox, start: Params, max_evals: usize, tol: f64) -> (Params, f64) {
    let to_params = |v: &[f64; 3]| {
        bx.project(Params { alpha: v[0], beta: exp10(v[1]), lambda: v[2] })
    };
    // Same sum as `log_likelihood`, with the logs of the levels hoisted out.
    let cells: Vec<(f64, f64, f64)> = table
        .levels
        .iter()
        .map(|l| (log10(l.intensity), f64::from(l.k), f64::from(l.n - l.k)))
        .collect();
    let f = |v: &[f64; 3]| {
        let p = to_params(v);
        let mut nll = 0.0;
        for &(x, k, miss) in &cells {
            let pc = p_correct(x, &p, gamma).clamp(LL_EPS, 1.0 - LL_EPS);
            if k > 0.0 {
                nll -= k * libm::log(pc);
            }
            if miss > 0.0 {
                nll -= miss * libm::log(1.0 - pc);
            }
        }
        nll
    };

    let x0 = [start.alpha, log10(start.beta), start.lambda];
    let steps = [0.05, 0.1, 0.01];
    let mut simplex = [(x0, f(&x0)); 4];
    for (i, s) in steps.iter().enumerate() {
        let mut v = x0;
        // Step inwards when at the upper edge so the simplex stays non-degenerate.
        v[i] += if i == 2 && x0[2] + s > bx.lambda.1 { -s } else { *s };
        simplex[i + 1] = (v, f(&v));
    }
    let mut evals = 4;

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[3].1);
        let mut spread: f64 = 0.0;
        for (v, _) in &simplex[1..] {
            for i in 0..3 {
                spread = spread.max(libm::fabs(v[i] - simplex[0].0[i]));
            }
        }
        if worst - best < tol * 1e-3 && spread < tol {
            break;
        }
        let mut centroid = [0.0; 3];
        for (v, _) in &simplex[..3] {
            for i in 0..3 {
                centroid[i] += v[i] / 3.0;
            }
        }
        let along = |t: f64| {
            let w = simplex[3].0;
            [0, 1, 2].map(|i| centroid[i] + t * (w[i] - centroid[i]))
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[3] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[3].1 {
                let xc = along(-0.5);
                (xc, f(&xc))
            } else {
                let xc = along(0.5);
                (xc, f(&xc))
            };
            evals += 1;
            if fc < simplex[3].1.min(fr) {
                simplex[3] = (xc, fc);
            } else {
                let b = simplex[0].0;
                for (v, fv) in simplex[1..].iter_mut() {
                    *v = [0, 1, 2].map(|i| b[i] + 0.5 * (v[i] - b[i]));
                    *fv = f(v);
                }
                evals += 3;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (v, fv) = simplex[0];
    (to_params(&v), -fv)
}

fn check(table: &LevelTable, m: u32, cfg: &FitConfig) -> Result<(), FitError> {
    if m < 2 {
        return Err(FitError::InvalidAlternatives);
    }
    let (trials, levels) = (table.n_trials(), table.n_levels());
    if trials < cfg.min_trials || levels < cfg.min_levels.max(1) {
        return Err(FitError::InsufficientData {
            trials,
            levels,
            min_trials: cfg.min_trials,
            min_levels: cfg.min_levels,
        });
    }
    Ok(())
}

/// Maximum-likelihood estimate without the bootstrap interval.
pub fn mle(table: &LevelTable, m: u32, cfg: &FitConfig) -> Result<(Params, f64), FitError> {
    check(table, m, cfg)?;
    let gamma = 1.0 / f64::from(m);
    let bx = SearchBox::for_table(table, cfg).expect("checked non-empty");
    let (start, _) = grid_search(table, gamma, &bx, cfg);
    Ok(refine(table, gamma, &bx, start, 600, 1e-7))
}

/// Resamples the table's trials with replacement; level `i` contributes its
/// `k` correct trials followed by its `n − k` errors to the canonical list.
fn resample(table: &LevelTable, rng: &mut ChaCha8Rng) -> LevelTable {
    let cum: Vec<u32> = table
        .levels
        .iter()
        .scan(0u32, |acc, l| {
            *acc += l.n;
            Some(*acc)
        })
        .collect();
    let total = *cum.last().unwrap_or(&0);
    let mut levels: Vec<Level> = table.levels.iter().map(|l| Level { n: 0, k: 0, ..*l }).collect();
    for _ in 0..total {
        let idx = rng.random_range(0..total);
        let li = cum.partition_point(|c| *c <= idx);
        let offset = idx - if li == 0 { 0 } else { cum[li - 1] };
        levels[li].n += 1;
        levels[li].k += u32::from(offset < table.levels[li].k);
    }
    levels.retain(|l| l.n > 0);
    LevelTable { levels }
}

const PIN_TOL: f64 = 1e-6;

/// Fits an aggregated table. See [`fit_psychometric`].
pub fn fit_table(table: &LevelTable, m: u32, cfg: &FitConfig) -> Result<PsychometricFit, FitError> {
    let (best, ll) = mle(table, m, cfg)?;
    let gamma = 1.0 / f64::from(m);
    let bx = SearchBox::for_table(table, cfg).expect("checked non-empty");

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.bootstrap_seed);
    let mut alphas = Vec::with_capacity(cfg.bootstrap_resamples);
    for _ in 0..cfg.bootstrap_resamples {
        let boot = resample(table, &mut rng);
        // The box stays that of the original data so resamples share α's range.
        let (p, _) = refine(&boot, gamma, &bx, best, 250, 1e-4);
        alphas.push(p.alpha);
    }
    let ci_alpha = if alphas.is_empty() {
        (best.alpha, best.alpha)
    } else {
        let s = sorted(alphas);
        (
            quantile_sorted(&s, 0.025).min(best.alpha),
            quantile_sorted(&s, 0.975).max(best.alpha),
        )
    };

    let (lo, hi) = table.log_range().expect("checked non-empty");
    Ok(PsychometricFit {
        threshold_alpha: best.alpha,
        slope_beta: best.beta,
        guess_gamma: gamma,
        lapse_lambda: best.lambda,
        ci_alpha,
        n_trials: table.n_trials() as u32,
        floor_flag: best.alpha < lo,
        ceiling_flag: best.alpha > hi,
        alpha_pinned: best.alpha <= bx.alpha.0 + PIN_TOL || best.alpha >= bx.alpha.1 - PIN_TOL,
        log_likelihood: ll,
    })
}

/// Fits the psychometric function to `obs` for an `m`-alternative task.
///
/// Coarse grid over the search box, Nelder–Mead refinement from the best grid
/// point, then `bootstrap_resamples` nonparametric resamples for the 95%
/// percentile interval of α (widened if needed to contain α̂).
pub fn fit_psychometric(obs: &[Observation], m: u32, cfg: &FitConfig) -> Result<PsychometricFit, FitError> {
    fit_table(&LevelTable::from_observations(obs)?, m, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simulate(alpha: f64, beta: f64, lambda: f64, gamma: f64, per_level: usize, seed: u64) -> Vec<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = (log10(0.5), log10(8.0));
        let mut obs = Vec::new();
        for i in 0..8 {
            let lx = lo + (hi - lo) * i as f64 / 7.0;
            let p = gamma + (1.0 - gamma - lambda) / (1.0 + libm::exp(-(lx - alpha) * beta));
            for _ in 0..per_level {
                obs.push(Observation { intensity: exp10(lx), correct: rng.random::<f64>() < p });
            }
        }
        obs
    }

    #[test]
    fn insufficient_data() {
        let obs: Vec<_> = (0..39).map(|i| Observation { intensity: 1.0 + (i % 3) as f64, correct: true }).collect();
        assert!(matches!(
            fit_psychometric(&obs, 4, &FitConfig::default()),
            Err(FitError::InsufficientData { trials: 39, .. })
        ));
        let obs: Vec<_> = (0..60).map(|i| Observation { intensity: 1.0 + (i % 2) as f64, correct: true }).collect();
        assert!(matches!(
            fit_psychometric(&obs, 4, &FitConfig::default()),
            Err(FitError::InsufficientData { levels: 2, .. })
        ));
    }

    #[test]
    fn rejects_bad_intensity() {
        let obs = [Observation { intensity: -1.0, correct: true }];
        assert_eq!(fit_psychometric(&obs, 4, &FitConfig::default()), Err(FitError::InvalidIntensity(-1.0)));
    }

    #[test]
    fn all_correct_hits_floor() {
        let obs: Vec<_> = (0..60)
            .map(|i| Observation { intensity: [1.0, 2.0, 4.0][i % 3], correct: true })
            .collect();
        let fit = fit_psychometric(&obs, 4, &FitConfig::default()).unwrap();
        assert!(fit.floor_flag);
        assert!(fit.threshold_alpha <= 0.0);
    }

    #[test]
    fn all_wrong_hits_ceiling() {
        let obs: Vec<_> = (0..60)
            .map(|i| Observation { intensity: [1.0, 2.0, 4.0][i % 3], correct: false })
            .collect();
        let fit = fit_psychometric(&obs, 4, &FitConfig::default()).unwrap();
        assert!(fit.ceiling_flag);
    }

    #[test]
    fn recovers_threshold() {
        let obs = simulate(log10(2.0), 8.0, 0.02, 0.25, 50, 7);
        let fit = fit_psychometric(&obs, 4, &FitConfig::default()).unwrap();
        assert!((fit.threshold_alpha - log10(2.0)).abs() < 0.15, "{fit:?}");
        assert!(fit.ci_alpha.0 <= fit.threshold_alpha && fit.threshold_alpha <= fit.ci_alpha.1);
        assert!(fit.ci_alpha.1 - fit.ci_alpha.0 < 0.5);
        assert!(!fit.floor_flag && !fit.ceiling_flag);
        assert_eq!(fit.n_trials, 400);
        assert_eq!(fit.guess_gamma, 0.25);
    }

    #[test]
    fn refinement_beats_grid() {
        let obs = simulate(log10(1.3), 5.0, 0.0, 0.25, 30, 3);
        let table = LevelTable::from_observations(&obs).unwrap();
        let cfg = FitConfig::default();
        let bx = SearchBox::for_table(&table, &cfg).unwrap();
        let (_, grid_ll) = grid_search(&table, 0.25, &bx, &cfg);
        let (_, ll) = mle(&table, 4, &cfg).unwrap();
        assert!(ll >= grid_ll);
    }

    #[test]
    fn order_invariant() {
        let mut obs = simulate(log10(3.0), 6.0, 0.02, 0.25, 10, 11);
        let a = fit_psychometric(&obs, 4, &FitConfig::default()).unwrap();
        obs.reverse();
        obs.rotate_left(17);
        let b = fit_psychometric(&obs, 4, &FitConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resample_preserves_size() {
        let obs = simulate(0.0, 8.0, 0.0, 0.25, 10, 1);
        let table = LevelTable::from_observations(&obs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let boot = resample(&table, &mut rng);
        assert_eq!(boot.n_trials(), table.n_trials());
        assert!(boot.levels.iter().all(|l| l.k <= l.n));
    }
}
