//! Parameter planning: splitting a total error budget between the hash grid
//! and the window counters.
//!
//! A sketch with hash error `e_cm` and window error `e_sw` answers point
//! queries with combined error `e_sw + e_cm + e_sw*e_cm`. For a given total
//! budget there is a one-parameter family of valid splits; the planner picks
//! the member that minimizes worst-case memory, in closed form.

use crate::error::{Error, Result};
use crate::windows::Backend;

/// Query type the split is optimized for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryProfile {
    Point,
    InnerProduct,
}

impl QueryProfile {
    pub fn label(self) -> &'static str {
        match self {
            QueryProfile::Point => "point",
            QueryProfile::InnerProduct => "inner",
        }
    }

    pub(crate) fn to_wire(self) -> u8 {
        match self {
            QueryProfile::Point => 0,
            QueryProfile::InnerProduct => 1,
        }
    }

    pub(crate) fn from_wire(v: u8) -> Result<Self> {
        match v {
            0 => Ok(QueryProfile::Point),
            1 => Ok(QueryProfile::InnerProduct),
            other => Err(Error::Format(format!("unknown query profile {other}"))),
        }
    }
}

/// Resolved sketch parameters: the error split and the grid dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SketchPlan {
    /// Total relative error target.
    pub epsilon: f64,
    /// Total failure probability.
    pub delta: f64,
    pub profile: QueryProfile,
    pub backend: Backend,
    /// Window-counter share of the error budget.
    pub epsilon_sw: f64,
    /// Hash-grid share of the error budget.
    pub epsilon_cm: f64,
    /// Failure probability of the window counters (0 for deterministic
    /// backends).
    pub delta_sw: f64,
    /// Failure probability of the hash grid.
    pub delta_cm: f64,
    /// Grid width `w = ⌈e / epsilon_cm⌉`.
    pub width: u32,
    /// Grid depth `d = ⌈ln(1 / delta_cm)⌉`.
    pub depth: u32,
}

/// The hash-grid error that pairs with `epsilon_sw` under the profile's
/// combination identity, or `None` when `epsilon_sw` already exhausts the
/// budget.
pub fn epsilon_cm_for(profile: QueryProfile, epsilon: f64, epsilon_sw: f64) -> Option<f64> {
    let cm = match profile {
        QueryProfile::Point => (epsilon - epsilon_sw) / (1.0 + epsilon_sw),
        QueryProfile::InnerProduct => {
            let window_part = epsilon_sw * epsilon_sw + 2.0 * epsilon_sw;
            (epsilon - window_part) / ((1.0 + epsilon_sw) * (1.0 + epsilon_sw))
        }
    };
    (cm > 0.0).then_some(cm)
}

/// Worst-case memory objective of a split, up to constants: deterministic
/// counters cost `1/e_sw` each, sampled counters `1/e_sw^2`, and the grid
/// multiplies by `1/e_cm`.
pub fn memory_objective(backend: Backend, epsilon_sw: f64, epsilon_cm: f64) -> f64 {
    match backend {
        Backend::RandomizedWave => 1.0 / (epsilon_sw * epsilon_sw * epsilon_cm),
        _ => 1.0 / (epsilon_sw * epsilon_cm),
    }
}

fn point_split_deterministic(epsilon: f64) -> (f64, f64) {
    let s = (1.0 + epsilon).sqrt() - 1.0;
    (s, s)
}

fn inner_split_deterministic(epsilon: f64) -> (f64, f64) {
    // Real root of x^3 + 3x^2 + (4 + e)x - e = 0, the stationary point of
    // the memory objective under the inner-product identity.
    let disc = (28.0 + 57.0 * epsilon + 30.0 * epsilon * epsilon
        + epsilon * epsilon * epsilon)
        .sqrt();
    let core = (9.0 + 9.0 * epsilon + 3.0f64.sqrt() * disc).cbrt();
    let sw = -1.0 - (3.0 + 3.0 * epsilon) / (3.0f64.powf(4.0 / 3.0) * core)
        + core / 3.0f64.powf(2.0 / 3.0);
    let cm = epsilon_cm_for(QueryProfile::InnerProduct, epsilon, sw)
        .expect("closed-form split inside budget");
    (sw, cm)
}

fn point_split_randomized(epsilon: f64) -> (f64, f64) {
    // Root of 2x^2 + (3 - e)x - 2e = 0: the sampled counter costs 1/e_sw^2,
    // which shifts the optimum towards a larger window share.
    let s = (epsilon * epsilon + 10.0 * epsilon + 9.0).sqrt();
    let sw = (epsilon - 3.0 + s) / 4.0;
    let cm = epsilon_cm_for(QueryProfile::Point, epsilon, sw)
        .expect("closed-form split inside budget");
    (sw, cm)
}

impl SketchPlan {
    /// Picks the memory-minimizing error split for the given totals, query
    /// profile and backend.
    pub fn new(
        epsilon: f64,
        delta: f64,
        profile: QueryProfile,
        backend: Backend,
    ) -> Result<SketchPlan> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon {epsilon} outside (0, 1)"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta {delta} outside (0, 1)")));
        }
        let (epsilon_sw, epsilon_cm, delta_sw, delta_cm) = match backend {
            Backend::RandomizedWave => {
                if profile == QueryProfile::InnerProduct {
                    return Err(Error::InvalidParameter(
                        "randomized-wave counters carry no inner-product guarantee; \
                         use a deterministic backend"
                            .into(),
                    ));
                }
                let (sw, cm) = point_split_randomized(epsilon);
                (sw, cm, delta / 2.0, delta / 2.0)
            }
            _ => {
                let (sw, cm) = match profile {
                    QueryProfile::Point => point_split_deterministic(epsilon),
                    QueryProfile::InnerProduct => inner_split_deterministic(epsilon),
                };
                (sw, cm, 0.0, delta)
            }
        };
        let width = (std::f64::consts::E / epsilon_cm).ceil() as u32;
        let depth = ((1.0 / delta_cm).ln().ceil() as u32).max(1);
        Ok(SketchPlan {
            epsilon,
            delta,
            profile,
            backend,
            epsilon_sw,
            epsilon_cm,
            delta_sw,
            delta_cm,
            width: width.max(1),
            depth,
        })
    }

    /// The profile's error-combination identity evaluated at this split;
    /// equals `epsilon` up to float rounding.
    pub fn combined_epsilon(&self) -> f64 {
        match self.profile {
            QueryProfile::Point => {
                self.epsilon_sw + self.epsilon_cm + self.epsilon_sw * self.epsilon_cm
            }
            QueryProfile::InnerProduct => {
                self.epsilon_sw * self.epsilon_sw
                    + 2.0 * self.epsilon_sw
                    + self.epsilon_cm * (1.0 + self.epsilon_sw) * (1.0 + self.epsilon_sw)
            }
        }
    }

    pub fn counters(&self) -> usize {
        self.width as usize * self.depth as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_split_matches_closed_form() {
        let p = SketchPlan::new(0.1, 0.1, QueryProfile::Point, Backend::ExponentialHistogram)
            .unwrap();
        let expected = 1.1f64.sqrt() - 1.0;
        assert!((p.epsilon_sw - expected).abs() < 1e-12);
        assert!((p.epsilon_cm - expected).abs() < 1e-12);
        assert!((p.combined_epsilon() - 0.1).abs() < 1e-12);
        assert_eq!(p.width, (std::f64::consts::E / p.epsilon_cm).ceil() as u32);
        assert_eq!(p.depth, 3);
    }

    #[test]
    fn splits_shrink_with_epsilon_and_width_grows() {
        let mut prev_sw = f64::INFINITY;
        let mut prev_w = 0;
        for eps in [0.5, 0.2, 0.1, 0.05, 0.01, 0.001] {
            let p =
                SketchPlan::new(eps, 0.1, QueryProfile::Point, Backend::ExponentialHistogram)
                    .unwrap();
            assert!(p.epsilon_sw < prev_sw);
            assert!(p.width > prev_w);
            prev_sw = p.epsilon_sw;
            prev_w = p.width;
        }
        assert!(prev_sw < 1e-3);
    }

    #[test]
    fn inner_split_satisfies_identity_and_matches_numeric_minimum() {
        for eps in [0.05, 0.1, 0.2, 0.3] {
            let p = SketchPlan::new(
                eps,
                0.1,
                QueryProfile::InnerProduct,
                Backend::ExponentialHistogram,
            )
            .unwrap();
            assert!((p.combined_epsilon() - eps).abs() < 1e-12);
            // Brute-force the constrained minimizer of the memory objective.
            let mut best = (f64::INFINITY, 0.0);
            let mut sw = eps / 10_000.0;
            while sw < eps / 2.0 {
                if let Some(cm) = epsilon_cm_for(QueryProfile::InnerProduct, eps, sw) {
                    let obj = memory_objective(Backend::ExponentialHistogram, sw, cm);
                    if obj < best.0 {
                        best = (obj, sw);
                    }
                }
                sw += eps / 10_000.0;
            }
            assert!(
                (best.1 - p.epsilon_sw).abs() < 1e-4 * eps + 1e-6,
                "eps {eps}: numeric {} vs closed form {}",
                best.1,
                p.epsilon_sw
            );
        }
    }

    #[test]
    fn randomized_split_matches_paper_form_and_halves_delta() {
        let p =
            SketchPlan::new(0.1, 0.1, QueryProfile::Point, Backend::RandomizedWave).unwrap();
        let s = (0.01f64 + 1.0 + 9.0).sqrt();
        let sw = (0.1 - 3.0 + s) / 4.0;
        let cm = (3.0 * 0.1 - s + 3.0) / (0.1 + s + 1.0);
        assert!((p.epsilon_sw - sw).abs() < 1e-12);
        assert!((p.epsilon_cm - cm).abs() < 1e-9);
        assert!((p.combined_epsilon() - 0.1).abs() < 1e-12);
        assert!((p.delta_sw - 0.05).abs() < 1e-15);
        assert!((p.delta_cm - 0.05).abs() < 1e-15);
    }

    #[test]
    fn every_split_is_a_local_minimum_of_memory() {
        for (profile, backend) in [
            (QueryProfile::Point, Backend::ExponentialHistogram),
            (QueryProfile::InnerProduct, Backend::ExponentialHistogram),
            (QueryProfile::Point, Backend::RandomizedWave),
        ] {
            for eps in [0.05, 0.1, 0.25] {
                let p = SketchPlan::new(eps, 0.1, profile, backend).unwrap();
                let here = memory_objective(backend, p.epsilon_sw, p.epsilon_cm);
                for bump in [0.99, 1.01] {
                    let sw = p.epsilon_sw * bump;
                    let cm = epsilon_cm_for(profile, eps, sw).unwrap();
                    assert!(
                        memory_objective(backend, sw, cm) > here,
                        "{profile:?}/{backend:?} eps {eps}: perturbation {bump} not worse"
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_degenerate_budgets() {
        assert!(SketchPlan::new(1.0, 0.1, QueryProfile::Point, Backend::ExponentialHistogram)
            .is_err());
        assert!(SketchPlan::new(0.1, 1.0, QueryProfile::Point, Backend::ExponentialHistogram)
            .is_err());
        assert!(SketchPlan::new(0.0, 0.1, QueryProfile::Point, Backend::ExponentialHistogram)
            .is_err());
        assert!(
            SketchPlan::new(0.1, 0.1, QueryProfile::InnerProduct, Backend::RandomizedWave)
                .is_err()
        );
    }
}
