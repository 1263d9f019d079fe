//! Transition profile h and the Robin coefficient (1/eps) h(d/eps).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::region::BoundaryLevelSet;

/// Profile equal to 1 on (-inf, -1] and 0 on [1, inf).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransitionProfile {
    /// h(t) = 1 - s((t + 1) / 2) with s(x) = x^2 (3 - 2x).
    #[default]
    Smoothstep,
}

impl TransitionProfile {
    pub fn h(&self, t: f64) -> f64 {
        match self {
            TransitionProfile::Smoothstep => {
                if t <= -1.0 {
                    1.0
                } else if t >= 1.0 {
                    0.0
                } else {
                    let x = 0.5 * (t + 1.0);
                    1.0 - x * x * (3.0 - 2.0 * x)
                }
            }
        }
    }

    pub fn dh(&self, t: f64) -> f64 {
        match self {
            TransitionProfile::Smoothstep => {
                if t.abs() >= 1.0 {
                    0.0
                } else {
                    let x = 0.5 * (t + 1.0);
                    -3.0 * x * (1.0 - x)
                }
            }
        }
    }
}

pub fn default_profile() -> TransitionProfile {
    TransitionProfile::Smoothstep
}

/// Per-vertex Robin coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobinCoefficient {
    pub eps: f64,
    pub values: Vec<f64>,
    /// Whether values carry the 1/eps prefactor.
    pub scaled: bool,
    /// Set when at least one value was clipped by [`RobinCoefficient::apply_cap`].
    pub cap_bound: bool,
}

impl RobinCoefficient {
    /// Clips values at `1e12 / diameter`.
    pub fn apply_cap(mut self, diameter: f64) -> Self {
        let cap = 1e12 / diameter;
        for v in &mut self.values {
            if *v > cap {
                *v = cap;
                self.cap_bound = true;
            }
        }
        self
    }
}

/// Robin coefficient value for signed distance `d`.
pub fn robin_value(d: f64, eps: f64, profile: TransitionProfile, scaled: bool) -> f64 {
    let h = profile.h(d / eps);
    if scaled {
        h / eps
    } else {
        h
    }
}

/// Robin coefficient from signed distances `phi`.
pub fn robin_from_distance(
    phi: &[f64],
    eps: f64,
    profile: TransitionProfile,
    scaled: bool,
) -> Result<RobinCoefficient> {
    if !(eps > 0.0) {
        return Err(Error::param(format!("smoothing length {eps} must be positive")));
    }
    let values = phi.iter().map(|&d| robin_value(d, eps, profile, scaled)).collect();
    Ok(RobinCoefficient {
        eps,
        values,
        scaled,
        cap_bound: false,
    })
}

/// (1/eps) h(phi/eps) at every vertex of the level set's loop.
pub fn robin_coefficient(ls: &BoundaryLevelSet, eps: f64, profile: TransitionProfile) -> Result<RobinCoefficient> {
    robin_from_distance(&ls.phi, eps, profile, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn profile_examples() {
        let h = default_profile();
        assert_eq!(h.h(-1.0), 1.0);
        assert_eq!(h.h(0.0), 0.5);
        assert_eq!(h.dh(1.5), 0.0);
        assert_eq!(h.dh(-1.5), 0.0);
        assert_eq!(h.h(1.0), 0.0);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let h = default_profile();
        for i in -20..=20 {
            let t = i as f64 * 0.07;
            let fd = (h.h(t + 1e-6) - h.h(t - 1e-6)) / 2e-6;
            assert!((fd - h.dh(t)).abs() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn integral_of_derivative_is_minus_one() {
        let h = default_profile();
        let q: f64 = crate::quadrature::gauss_legendre_01(4)
            .iter()
            .map(|&(x, w)| 2.0 * w * h.dh(2.0 * x - 1.0))
            .sum();
        assert!((q + 1.0).abs() < 1e-14);
    }

    #[test]
    fn coefficient_examples() {
        let eps = 0.01;
        let r = robin_from_distance(&[-2.0 * eps, 2.0 * eps, 0.0], eps, default_profile(), true).unwrap();
        assert_eq!(r.values, vec![1.0 / eps, 0.0, 0.5 / eps]);
        assert!(robin_from_distance(&[0.0], 0.0, default_profile(), true).is_err());
        let unscaled = robin_from_distance(&[0.0], eps, default_profile(), false).unwrap();
        assert_eq!(unscaled.values, vec![0.5]);
    }

    #[test]
    fn cap_reports_binding() {
        let r = robin_from_distance(&[-1.0], 1e-14, default_profile(), true)
            .unwrap()
            .apply_cap(2.0);
        assert!(r.cap_bound);
        assert_eq!(r.values[0], 5e11);
    }

    proptest! {
        #[test]
        fn profile_bounds_and_monotone(a in -3.0..3.0f64, b in -3.0..3.0f64) {
            let h = default_profile();
            prop_assert!((0.0..=1.0).contains(&h.h(a)));
            prop_assert!(h.dh(a) <= 0.0);
            if a <= b {
                prop_assert!(h.h(a) >= h.h(b));
            }
        }

        #[test]
        fn coefficient_in_range(d in -1.0..1.0f64, eps in 1e-4..0.5f64) {
            let v = robin_value(d, eps, default_profile(), true);
            prop_assert!((0.0..=1.0 / eps).contains(&v));
            if d <= -eps { prop_assert_eq!(v, 1.0 / eps); }
            if d >= eps { prop_assert_eq!(v, 0.0); }
        }
    }
}
