//! Per-epoch sample sizes: proportional, optimal (Neyman) and adaptive
//! allocation, with bounded largest-remainder integerization.

use serde::{Deserialize, Serialize};

use crate::designs::{discard_count, AllocationTrace, DesignKind, SampleState};
use crate::error::{Error, Result};
use crate::population::FunctionalPopulation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationKind {
    Proportional,
    Neyman,
    Adaptive,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AllocationPolicy {
    pub kind: AllocationKind,
    /// Total sample size per epoch.
    pub total: usize,
    /// Minimum per-stratum size.
    #[serde(default = "default_floor")]
    pub floor: usize,
}

fn default_floor() -> usize {
    2
}

impl AllocationPolicy {
    pub fn validate(&self, n_strata: usize, n_units: usize) -> Result<()> {
        if self.floor < 1 {
            return Err(Error::Validation("allocation floor must be at least 1".into()));
        }
        if self.kind == AllocationKind::Adaptive && self.floor < 2 {
            return Err(Error::Validation(
                "adaptive allocation needs a floor of at least 2 (sample variances)".into(),
            ));
        }
        if self.total < n_strata * self.floor {
            return Err(Error::Validation(format!(
                "total {} cannot cover {} strata at floor {}",
                self.total, n_strata, self.floor
            )));
        }
        if self.total > n_units {
            return Err(Error::Validation(format!(
                "total {} exceeds the population size {}",
                self.total, n_units
            )));
        }
        Ok(())
    }
}

/// Bounded largest-remainder apportionment: integer sizes proportional to
/// `weights`, summing to `n`, within `[lo_h, hi_h]`. Ties go to the lower
/// stratum index.
pub fn apportion(weights: &[f64], n: usize, lo: &[usize], hi: &[usize]) -> Result<Vec<usize>> {
    let h_count = weights.len();
    if lo.len() != h_count || hi.len() != h_count {
        return Err(Error::Validation("apportionment inputs disagree on strata".into()));
    }
    for h in 0..h_count {
        if lo[h] > hi[h] {
            return Err(Error::Validation(format!("stratum {h}: empty size interval [{}, {}]", lo[h], hi[h])));
        }
        if !(weights[h].is_finite() && weights[h] >= 0.0) {
            return Err(Error::Validation(format!("stratum {h}: invalid weight {}", weights[h])));
        }
    }
    let lo_sum: usize = lo.iter().sum();
    let hi_sum: usize = hi.iter().sum();
    if n < lo_sum || n > hi_sum {
        return Err(Error::Validation(format!(
            "total {n} outside the feasible range [{lo_sum}, {hi_sum}]"
        )));
    }

    let mut fixed: Vec<Option<usize>> = vec![None; h_count];
    loop {
        let active: Vec<usize> = (0..h_count).filter(|&h| fixed[h].is_none()).collect();
        if active.is_empty() {
            break;
        }
        let n_rem = n - fixed.iter().flatten().sum::<usize>();
        let mut w_sum: f64 = active.iter().map(|&h| weights[h]).sum();
        let flat = w_sum <= 0.0;
        if flat {
            w_sum = active.len() as f64;
        }
        let target = |h: usize| -> f64 {
            let w = if flat { 1.0 } else { weights[h] };
            n_rem as f64 * w / w_sum
        };
        // Pin strata whose target escapes their interval, then recompute.
        let mut changed = false;
        for &h in &active {
            if target(h) > hi[h] as f64 {
                fixed[h] = Some(hi[h]);
                changed = true;
            }
        }
        if changed {
            continue;
        }
        for &h in &active {
            if target(h) < lo[h] as f64 {
                fixed[h] = Some(lo[h]);
                changed = true;
            }
        }
        if changed {
            continue;
        }
        // Largest-remainder integerization of the remaining targets.
        let mut base: Vec<(usize, usize, f64)> = active
            .iter()
            .map(|&h| {
                let t = target(h);
                let b = t.floor() as usize;
                (h, b, t - b as f64)
            })
            .collect();
        let assigned: usize = base.iter().map(|&(_, b, _)| b).sum();
        let mut seats = n_rem - assigned;
        base.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
        for &(h, b, _) in &base {
            let extra = if seats > 0 && b < hi[h] { 1 } else { 0 };
            seats -= extra;
            fixed[h] = Some(b + extra);
        }
        if seats > 0 {
            // Fractional parts exhausted against caps; hand the rest to any
            // stratum with headroom, lowest index first.
            for h in 0..h_count {
                while seats > 0 && fixed[h].unwrap_or(0) < hi[h] {
                    fixed[h] = Some(fixed[h].unwrap() + 1);
                    seats -= 1;
                }
            }
        }
        break;
    }
    Ok(fixed.into_iter().map(|f| f.expect("all strata assigned")).collect())
}

/// Proportional allocation `n_h = (N_h / N) n`, largest-remainder corrected.
pub fn proportional_alloc(strata_sizes: &[usize], n: usize, floor: usize) -> Result<Vec<usize>> {
    let weights: Vec<f64> = strata_sizes.iter().map(|&s| s as f64).collect();
    let lo = vec![floor; strata_sizes.len()];
    apportion(&weights, n, &lo, strata_sizes)
}

/// Result of a Neyman allocation; `fallback` marks a degenerate variance
/// vector resolved proportionally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeymanSizes {
    pub sizes: Vec<usize>,
    pub fallback: bool,
}

/// Neyman allocation `n_h = c N_h sqrt(variance_h)` within `[lo, hi]`.
pub fn neyman_alloc_bounded(
    strata_sizes: &[usize],
    variances: &[f64],
    n: usize,
    lo: &[usize],
    hi: &[usize],
) -> Result<NeymanSizes> {
    if variances.len() != strata_sizes.len() {
        return Err(Error::Validation("one variance per stratum required".into()));
    }
    if variances.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Validation("variances must be finite and nonnegative".into()));
    }
    let fallback = variances.iter().all(|&v| v == 0.0);
    let weights: Vec<f64> = if fallback {
        strata_sizes.iter().map(|&s| s as f64).collect()
    } else {
        strata_sizes
            .iter()
            .zip(variances)
            .map(|(&s, &v)| s as f64 * v.sqrt())
            .collect()
    };
    Ok(NeymanSizes { sizes: apportion(&weights, n, lo, hi)?, fallback })
}

/// Unconstrained-bounds Neyman allocation: floor to `N_h`.
pub fn neyman_alloc(
    strata_sizes: &[usize],
    variances: &[f64],
    n: usize,
    floor: usize,
) -> Result<NeymanSizes> {
    let lo = vec![floor; strata_sizes.len()];
    neyman_alloc_bounded(strata_sizes, variances, n, &lo, strata_sizes)
}

/// Plug-in variance estimates: the sample variance of `X_k(t)`, `k` in the
/// realized sample of each stratum, at grid index `t_idx`.
pub fn sample_variances(
    pop: &FunctionalPopulation<f64>,
    state: &SampleState,
    t_idx: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pop.n_strata());
    for h in 0..pop.n_strata() {
        let sample = &state.per_stratum[h];
        if sample.len() < 2 {
            return Err(Error::Validation(format!(
                "stratum {h} has {} sampled units; adaptive allocation needs at least 2",
                sample.len()
            )));
        }
        let units = pop.stratum_units(h);
        let values: Vec<f64> = sample.iter().map(|&k| *pop.value(units[k as usize], t_idx)).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        out.push(ss / (values.len() - 1) as f64);
    }
    Ok(out)
}

/// Adaptive allocation: Neyman with the plug-in variances of the current
/// sample, read at the last grid point before the replacement time.
pub fn adaptive_alloc(
    pop: &FunctionalPopulation<f64>,
    state: &SampleState,
    last_obs_idx: usize,
    n: usize,
    lo: &[usize],
    hi: &[usize],
) -> Result<NeymanSizes> {
    let variances = sample_variances(pop, state, last_obs_idx)?;
    neyman_alloc_bounded(&pop.strata_sizes(), &variances, n, lo, hi)
}

/// Plan a whole allocation trace for a design of `m` replacements.
///
/// Proportional traces repeat one row. Neyman traces follow the true stratum
/// variances at each replacement time, chained through the transition
/// feasibility bounds implied by the replacement rates. Adaptive traces plan
/// proportionally (the realized sizes are decided at run time).
pub fn plan_trace(
    policy: &AllocationPolicy,
    pop: &FunctionalPopulation<f64>,
    kind: DesignKind,
    alpha: &[f64],
    tau_indices: &[usize],
) -> Result<AllocationTrace> {
    let strata_sizes = pop.strata_sizes();
    policy.validate(strata_sizes.len(), pop.n_units())?;
    let m = tau_indices.len();
    match policy.kind {
        AllocationKind::Proportional | AllocationKind::Adaptive => {
            let row = proportional_alloc(&strata_sizes, policy.total, policy.floor)?;
            Ok(AllocationTrace::constant(row, m))
        }
        AllocationKind::Neyman => {
            if kind == DesignKind::FixedPanel {
                // Sizes cannot change; optimize once at tau_0.
                let variances: Vec<f64> =
                    pop.stratum_variances_at(0)?.into_iter().collect();
                let row = neyman_alloc(&strata_sizes, &variances, policy.total, policy.floor)?.sizes;
                return Ok(AllocationTrace::constant(row, m));
            }
            let mut sizes = Vec::with_capacity(m + 1);
            let v0 = pop.stratum_variances_at(0)?;
            let mut current =
                neyman_alloc(&strata_sizes, &v0, policy.total, policy.floor)?.sizes;
            sizes.push(current.clone());
            for &tau in tau_indices {
                let variances = pop.stratum_variances_at(tau)?;
                let (lo, hi) = transition_bounds(kind, alpha, &strata_sizes, &current, policy.floor);
                current =
                    neyman_alloc_bounded(&strata_sizes, &variances, policy.total, &lo, &hi)?.sizes;
                sizes.push(current.clone());
            }
            Ok(AllocationTrace { sizes })
        }
    }
}

/// Feasible next-epoch size interval given the current sizes, intersected
/// with the policy floor.
pub fn transition_bounds(
    kind: DesignKind,
    alpha: &[f64],
    strata_sizes: &[usize],
    current: &[usize],
    floor: usize,
) -> (Vec<usize>, Vec<usize>) {
    let h_count = strata_sizes.len();
    let mut lo = Vec::with_capacity(h_count);
    let mut hi = Vec::with_capacity(h_count);
    for h in 0..h_count {
        match kind {
            DesignKind::FullReplacement => {
                lo.push(floor);
                hi.push(strata_sizes[h]);
            }
            _ => {
                let d = discard_count(alpha[h], current[h]);
                lo.push((current[h] - d).max(floor));
                hi.push(strata_sizes[h] - d);
            }
        }
    }
    (lo, hi)
}
