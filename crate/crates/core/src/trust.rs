//! Circular and posterior-variance trust regions.

use nalgebra::DVector;

use crate::gp::GpModel;

/// Growth and shrink factors of the trust-region bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustConfig {
    pub circle_factor: f64,
    pub sigma_factor: f64,
    pub sigma_floor: f64,
    /// Consecutive evaluations without progress before shrinking.
    pub patience: usize,
    pub initial_sigma: f64,
    /// Initial circle radius as a fraction of the box diagonal.
    pub initial_radius_fraction: f64,
    /// Smallest circle radius as a fraction of the box diagonal.
    pub min_radius_fraction: f64,
}

impl Default for TrustConfig {
    fn default() -> Self {
        Self {
            circle_factor: 2.0,
            sigma_factor: 1.5,
            sigma_floor: 1e-8,
            patience: 2,
            initial_sigma: 0.5,
            initial_radius_fraction: 0.1,
            min_radius_fraction: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrustState {
    /// Upper bound on `||x - x_best||^2`.
    pub ub_circle: f64,
    /// Upper bound on `sigma_f^2 / sigma_K^2`.
    pub ub_sigma: f64,
    pub no_progress_count: usize,
    /// Floor for `ub_circle`.
    pub min_circle: f64,
    /// Whether the circle and sigma regions were active at the last proposal.
    pub last_active: (bool, bool),
}

impl TrustState {
    pub fn initial(lb: &DVector<f64>, ub: &DVector<f64>, config: &TrustConfig) -> Self {
        let diameter = (ub - lb).norm();
        let r = config.initial_radius_fraction * diameter;
        let r_min = config.min_radius_fraction * diameter;
        Self {
            ub_circle: r * r,
            ub_sigma: config.initial_sigma.min(1.0),
            no_progress_count: 0,
            min_circle: (r_min * r_min).max(f64::MIN_POSITIVE),
            last_active: (false, false),
        }
    }

    pub fn radius(&self) -> f64 {
        self.ub_circle.sqrt()
    }

    /// Halves the circle bound and divides the sigma bound once.
    pub fn shrink(&self, config: &TrustConfig) -> Self {
        Self {
            ub_circle: (self.ub_circle / config.circle_factor).max(self.min_circle),
            ub_sigma: (self.ub_sigma / config.sigma_factor).max(config.sigma_floor),
            no_progress_count: 0,
            min_circle: self.min_circle,
            last_active: self.last_active,
        }
    }

    pub fn update(&self, made_progress: bool, any_tr_active: bool, config: &TrustConfig) -> Self {
        if made_progress {
            let mut next = self.clone();
            next.no_progress_count = 0;
            if any_tr_active {
                next.ub_circle = (self.ub_circle * config.circle_factor).min(f64::MAX);
                next.ub_sigma = (self.ub_sigma * config.sigma_factor).min(1.0);
            }
            return next;
        }
        let count = self.no_progress_count + 1;
        if count >= config.patience {
            self.shrink(config)
        } else {
            Self {
                no_progress_count: count,
                ..self.clone()
            }
        }
    }
}

/// Trust-region update with the default factors.
pub fn update_bounds(state: &TrustState, made_progress: bool, any_tr_active: bool) -> TrustState {
    state.update(made_progress, any_tr_active, &TrustConfig::default())
}

/// `||x - x_best||^2` and its gradient.
pub fn tr_circle(x: &[f64], x_best: &[f64]) -> (f64, DVector<f64>) {
    let d = DVector::from_fn(x.len(), |i, _| x[i] - x_best[i]);
    (d.norm_squared(), d * 2.0)
}

/// Normalized posterior variance `sigma_f^2(x) / sigma_K^2`, in `[0, 1]`.
pub fn tr_sigma(model: &GpModel, x: &[f64]) -> (f64, DVector<f64>) {
    let p = model.posterior(x);
    (p.var_ratio, p.var_ratio_grad)
}

/// Whether `value` is within a relative `1e-6` of `bound` (or above it).
pub fn is_active(value: f64, bound: f64) -> bool {
    value >= bound - 1e-6 * bound.abs().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(c: f64, s: f64) -> TrustState {
        TrustState {
            ub_circle: c,
            ub_sigma: s,
            no_progress_count: 0,
            min_circle: f64::MIN_POSITIVE,
            last_active: (false, false),
        }
    }

    #[test]
    fn circle_examples() {
        assert_eq!(tr_circle(&[1.0, 2.0], &[1.0, 2.0]).0, 0.0);
        let (v, g) = tr_circle(&[3.0, 4.0], &[0.0, 0.0]);
        assert_eq!(v, 25.0);
        assert_eq!(g.as_slice(), &[6.0, 8.0]);
    }

    #[test]
    fn grow_on_progress_when_active() {
        let s = update_bounds(&state(1.0, 0.5), true, true);
        assert_eq!(s.ub_circle, 2.0);
        assert_eq!(s.ub_sigma, 0.75);
        let s = update_bounds(&state(1.0, 0.8), true, true);
        assert_eq!(s.ub_sigma, 1.0);
        let s = update_bounds(&state(1.0, 0.5), true, false);
        assert_eq!((s.ub_circle, s.ub_sigma), (1.0, 0.5));
    }

    #[test]
    fn shrink_after_two_failures() {
        let s1 = update_bounds(&state(1.0, 0.5), false, true);
        assert_eq!((s1.ub_circle, s1.ub_sigma, s1.no_progress_count), (1.0, 0.5, 1));
        let s2 = update_bounds(&s1, false, false);
        assert_eq!(s2.ub_circle, 0.5);
        assert!((s2.ub_sigma - 0.5 / 1.5).abs() < 1e-16);
        assert_eq!(s2.no_progress_count, 0);
        let reset = update_bounds(&update_bounds(&s1, true, false), false, false);
        assert_eq!(reset.ub_circle, 1.0);
    }

    #[test]
    fn bounds_stay_in_range() {
        let mut s = state(1.0, 0.5);
        for i in 0..2000 {
            s = update_bounds(&s, i % 7 == 0, true);
            assert!(s.ub_sigma > 0.0 && s.ub_sigma <= 1.0);
            assert!(s.ub_circle > 0.0);
        }
        let mut s = state(1.0, 0.5);
        for k in 1..=10 {
            s = update_bounds(&update_bounds(&s, false, false), false, false);
            assert_eq!(s.ub_circle, 0.5f64.powi(k));
        }
        assert!(s.ub_sigma >= 1e-8);
    }

    #[test]
    fn initial_bounds() {
        let s = TrustState::initial(
            &DVector::from_element(2, -10.0),
            &DVector::from_element(2, 10.0),
            &TrustConfig::default(),
        );
        assert!((s.ub_circle - 8.0).abs() < 1e-12);
        assert_eq!(s.ub_sigma, 0.5);
    }
}
