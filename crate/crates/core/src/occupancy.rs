//! Empirical discounted state-action occupancy and total-variation distance.

use std::collections::BTreeMap;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyEstimate {
    pub bucketing: String,
    /// `(state bucket, action) -> mass`; the masses sum to one.
    pub mass: BTreeMap<(u64, usize), f64>,
}

impl OccupancyEstimate {
    /// Histogram with weight `γ^t` for step `t` of every episode, normalised
    /// to total mass one (the `(1 − γ)` factor cancels in the normalisation).
    /// Absorbing self-loops are skipped.
    pub fn from_trajectories(
        trajectories: &[Trajectory],
        env: &dyn Environment,
        gamma: f64,
    ) -> Result<Self> {
        let mut mass = BTreeMap::new();
        let mut total = 0.0;
        for traj in trajectories {
            let mut w = 1.0;
            for t in traj.transitions.iter().filter(|t| !t.absorbing) {
                *mass.entry((env.state_bucket(&t.state), t.action)).or_insert(0.0) += w;
                total += w;
                w *= gamma;
            }
        }
        if total == 0.0 {
            return Err(Error::usage("occupancy of an empty trajectory set"));
        }
        mass.values_mut().for_each(|m| *m /= total);
        Ok(OccupancyEstimate {
            bucketing: env.bucketing_id(),
            mass,
        })
    }

    /// Build directly from raw counts (normalised here).
    pub fn from_counts(bucketing: &str, counts: impl IntoIterator<Item = ((u64, usize), f64)>) -> Result<Self> {
        let mut mass: BTreeMap<(u64, usize), f64> = BTreeMap::new();
        for (k, v) in counts {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::usage("occupancy counts must be finite and non-negative"));
            }
            *mass.entry(k).or_insert(0.0) += v;
        }
        let total: f64 = mass.values().sum();
        if total <= 0.0 {
            return Err(Error::usage("occupancy counts sum to zero"));
        }
        mass.retain(|_, v| *v > 0.0);
        mass.values_mut().for_each(|m| *m /= total);
        Ok(OccupancyEstimate {
            bucketing: bucketing.to_string(),
            mass,
        })
    }

    pub fn total(&self) -> f64 {
        self.mass.values().sum()
    }
}

/// `½ Σ |ρ_a − ρ_b|` over the union of supports.
pub fn occupancy_distance(a: &OccupancyEstimate, b: &OccupancyEstimate) -> Result<f64> {
    if a.bucketing != b.bucketing {
        return Err(Error::usage(format!(
            "occupancy bucketings differ: {} vs {}",
            a.bucketing, b.bucketing
        )));
    }
    let mut sum = 0.0;
    for (k, pa) in &a.mass {
        sum += (pa - b.mass.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, pb) in &b.mass {
        if !a.mass.contains_key(k) {
            sum += pb;
        }
    }
    Ok((0.5 * sum).min(1.0))
}
