//! Transformed up-down staircase (3-down-1-up by default).
//!
//! Intensity moves on a log10 lattice whose spacing is the finest step size
//! (initial step halved `halvings` times), so the staircase revisits exactly
//! the same intensities instead of accumulating rounding drift.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{exp10, log10};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaircaseParams {
    pub start: f64,
    pub min: f64,
    pub max: f64,
    /// Initial step in log10 units.
    pub step_log10: f64,
    /// The step is halved after each of the first `halvings` reversals.
    pub halvings: u32,
    /// Consecutive correct responses needed for a step down.
    pub down: u32,
}

impl StaircaseParams {
    pub fn new(start: f64, min: f64, max: f64) -> Self {
        Self { start, min, max, step_log10: 0.1, halvings: 2, down: 3 }
    }

    pub fn is_valid(&self) -> bool {
        self.min > 0.0
            && self.min <= self.start
            && self.start <= self.max
            && self.step_log10 > 0.0
            && self.down >= 1
            && self.halvings < 16
    }

    fn unit(&self) -> f64 {
        self.step_log10 / f64::from(1u32 << self.halvings)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Staircase {
    pub params: StaircaseParams,
    /// Lattice index relative to `params.start`.
    level: i32,
    step_units: i32,
    min_level: i32,
    max_level: i32,
    correct_run: u32,
    last_direction: Option<Direction>,
    reversals: Vec<f64>,
}

impl Staircase {
    pub fn new(params: StaircaseParams) -> Self {
        debug_assert!(params.is_valid(), "{params:?}");
        let unit = params.unit();
        let min_level = libm::ceil(log10(params.min / params.start) / unit - 1e-9) as i32;
        let max_level = libm::floor(log10(params.max / params.start) / unit + 1e-9) as i32;
        Self {
            params,
            level: 0,
            step_units: 1 << params.halvings,
            min_level,
            max_level,
            correct_run: 0,
            last_direction: None,
            reversals: Vec::new(),
        }
    }

    pub fn intensity(&self) -> f64 {
        self.params.start * exp10(f64::from(self.level) * self.params.unit())
    }

    pub fn step_log10(&self) -> f64 {
        f64::from(self.step_units) * self.params.unit()
    }

    pub fn correct_run(&self) -> u32 {
        self.correct_run
    }

    /// Intensities at which the direction of travel changed.
    pub fn reversals(&self) -> &[f64] {
        &self.reversals
    }

    pub fn update(&mut self, correct: bool) {
        let direction = if correct {
            self.correct_run += 1;
            if self.correct_run < self.params.down {
                return;
            }
            Direction::Down
        } else {
            Direction::Up
        };
        self.correct_run = 0;

        let reversed = self.last_direction.is_some_and(|d| d != direction);
        if reversed {
            self.reversals.push(self.intensity());
        }
        let delta = match direction {
            Direction::Down => -self.step_units,
            Direction::Up => self.step_units,
        };
        self.level = (self.level + delta).clamp(self.min_level, self.max_level);
        self.last_direction = Some(direction);
        if reversed && self.reversals.len() <= self.params.halvings as usize {
            self.step_units = (self.step_units / 2).max(1);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acuity() -> Staircase {
        Staircase::new(StaircaseParams::new(10.0, 0.5, 60.0))
    }

    #[test]
    fn three_correct_steps_down() {
        let mut s = acuity();
        s.update(true);
        s.update(true);
        assert_eq!(s.intensity(), 10.0);
        s.update(true);
        assert!((s.intensity() - 7.943).abs() < 1e-3);
        assert!((s.intensity() - 10.0 * libm::pow(10.0, -0.1)).abs() < 1e-12);
    }

    #[test]
    fn incorrect_after_down_returns_to_start() {
        let mut s = acuity();
        for _ in 0..3 {
            s.update(true);
        }
        s.update(false);
        assert_eq!(s.intensity(), 10.0);
        assert_eq!(s.reversals().len(), 1);
        assert!((s.step_log10() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn step_halves_only_twice() {
        let mut s = acuity();
        // down, up, down, up: three reversals.
        for _ in 0..3 {
            s.update(true);
        }
        s.update(false);
        for _ in 0..3 {
            s.update(true);
        }
        s.update(false);
        assert_eq!(s.reversals().len(), 3);
        assert!((s.step_log10() - 0.025).abs() < 1e-12);
    }

    #[test]
    fn incorrect_resets_run() {
        let mut s = acuity();
        s.update(true);
        s.update(true);
        s.update(false);
        assert_eq!(s.correct_run(), 0);
        assert!((s.intensity() - 10.0 * libm::pow(10.0, 0.1)).abs() < 1e-9);
    }

    #[test]
    fn stays_in_bounds() {
        let mut s = Staircase::new(StaircaseParams::new(10.0, 5.0, 12.0));
        for _ in 0..50 {
            s.update(false);
        }
        assert!(s.intensity() <= 12.0);
        for _ in 0..300 {
            s.update(true);
        }
        assert!(s.intensity() >= 5.0);
    }

    #[test]
    fn revisits_identical_levels() {
        let mut s = acuity();
        let start = s.intensity();
        for _ in 0..3 {
            s.update(true);
        }
        s.update(false);
        s.update(false);
        for _ in 0..3 {
            s.update(true);
        }
        assert_eq!(s.intensity().to_bits(), start.to_bits());
    }
}
