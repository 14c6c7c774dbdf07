//! Rotation designs: validation, sample-path realization as Markov chains
//! over index sets, and the inclusion-probability kernels they induce.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{FunctionalPopulation, TimeGrid};
use crate::rng::ReplicationStreams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    FixedPanel,
    FullReplacement,
    PartialReplacement,
    ConventionalRotation,
}

impl DesignKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DesignKind::FixedPanel => "fixed_panel",
            DesignKind::FullReplacement => "full_replacement",
            DesignKind::PartialReplacement => "partial_replacement",
            DesignKind::ConventionalRotation => "conventional_rotation",
        }
    }
}

/// Replacement-time density `g` tabulated on the population grid. The tables
/// are normalized so the trapezoid integral of `g` over `[0, T]` is one.
#[derive(Debug, Clone)]
pub struct DensityTable {
    values: Vec<f64>,
    cumulative: Vec<f64>,
}

impl DensityTable {
    pub fn uniform(grid_len: usize, duration: f64) -> Self {
        let g = 1.0 / duration;
        let values = vec![g; grid_len];
        let cumulative = (0..grid_len)
            .map(|i| i as f64 / (grid_len - 1) as f64)
            .collect();
        DensityTable { values, cumulative }
    }

    /// Tabulate from raw nonnegative values on the grid.
    pub fn from_values(raw: Vec<f64>, spacing: f64) -> Result<Self> {
        if raw.len() < 2 {
            return Err(Error::Validation("density table needs at least two points".into()));
        }
        if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation("density values must be finite and nonnegative".into()));
        }
        let mut mass = 0.0;
        for w in raw.windows(2) {
            mass += 0.5 * (w[0] + w[1]) * spacing;
        }
        if mass <= 0.0 {
            return Err(Error::Validation("density has zero mass".into()));
        }
        let values: Vec<f64> = raw.iter().map(|v| v / mass).collect();
        let mut cumulative = Vec::with_capacity(values.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in values.windows(2) {
            acc += 0.5 * (w[0] + w[1]) * spacing;
            cumulative.push(acc);
        }
        Ok(DensityTable { values, cumulative })
    }

    pub fn g_at(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Antiderivative `G` at grid index `i`, with `G(0) = 0` and `G(T) = 1`.
    pub fn cumulative_at(&self, i: usize) -> f64 {
        self.cumulative[i]
    }
}

/// Rotation pattern for conventional designs: for each epoch and stratum, the
/// within-stratum label slots that form the sample.
#[derive(Debug, Clone)]
pub struct RotationPattern {
    /// `[epoch][stratum] -> sorted slot list`.
    pub slots: Vec<Vec<Vec<u32>>>,
}

impl RotationPattern {
    /// Classic cyclic window: the sample of stratum `h` starts as slots
    /// `0..n_h(0)` and shifts forward by the discard count at each epoch.
    pub fn cyclic(strata_sizes: &[usize], sizes: &[Vec<usize>], discards: &[Vec<usize>]) -> Self {
        let h_count = strata_sizes.len();
        let mut starts = vec![0usize; h_count];
        let mut slots = Vec::with_capacity(sizes.len());
        for (r, row) in sizes.iter().enumerate() {
            let mut epoch = Vec::with_capacity(h_count);
            for h in 0..h_count {
                if r > 0 {
                    starts[h] = (starts[h] + discards[r - 1][h]) % strata_sizes[h];
                }
                let mut set: Vec<u32> = (0..row[h])
                    .map(|i| ((starts[h] + i) % strata_sizes[h]) as u32)
                    .collect();
                set.sort_unstable();
                epoch.push(set);
            }
            slots.push(epoch);
        }
        RotationPattern { slots }
    }

    fn validate(&self, strata_sizes: &[usize], sizes: &[Vec<usize>]) -> Result<()> {
        if self.slots.len() != sizes.len() {
            return Err(Error::Validation(format!(
                "pattern covers {} epochs, design has {}",
                self.slots.len(),
                sizes.len()
            )));
        }
        for (r, epoch) in self.slots.iter().enumerate() {
            if epoch.len() != strata_sizes.len() {
                return Err(Error::Validation(format!("pattern epoch {r} misses strata")));
            }
            for (h, set) in epoch.iter().enumerate() {
                if set.len() != sizes[r][h] {
                    return Err(Error::Validation(format!(
                        "pattern epoch {r} stratum {h} lists {} slots, allocation wants {}",
                        set.len(),
                        sizes[r][h]
                    )));
                }
                let mut seen = set.clone();
                seen.sort_unstable();
                seen.dedup();
                if seen.len() != set.len() {
                    return Err(Error::Validation(format!(
                        "pattern epoch {r} stratum {h} repeats a slot"
                    )));
                }
                if set.iter().any(|&s| s as usize >= strata_sizes[h]) {
                    return Err(Error::Validation(format!(
                        "pattern epoch {r} stratum {h} references a slot outside 0..{}",
                        strata_sizes[h]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Declarative design, prior to validation against a population and grid.
#[derive(Debug, Clone)]
pub struct DesignSpec {
    pub kind: DesignKind,
    /// Replacement times `tau_1 < ... < tau_m`, in hours, inside `(0, T)`.
    pub taus_hours: Vec<f64>,
    /// Per-stratum replacement rates.
    pub alpha: Vec<f64>,
    /// Replacement-time density; uniform when absent.
    pub density: Option<Vec<f64>>,
    /// Rotation pattern, conventional designs only.
    pub pattern: Option<RotationPattern>,
}

impl DesignSpec {
    /// `m` replacement times at `tau_r = r T / (m + 1)`.
    pub fn uniform_taus(duration: f64, m: usize) -> Vec<f64> {
        (1..=m).map(|r| duration * r as f64 / (m + 1) as f64).collect()
    }
}

/// Per-epoch planned sample sizes, one row per epoch `0..=m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationTrace {
    pub sizes: Vec<Vec<usize>>,
}

impl AllocationTrace {
    /// The same sizes at every epoch.
    pub fn constant(sizes: Vec<usize>, epochs: usize) -> Self {
        AllocationTrace { sizes: vec![sizes; epochs + 1] }
    }
}

/// A design checked against a population: snapped replacement times, integer
/// retained/discard counts, and the probability kernels they determine.
#[derive(Debug, Clone)]
pub struct ValidatedDesign {
    kind: DesignKind,
    /// Grid indices of `tau_1..tau_m`.
    tau_idx: Vec<usize>,
    /// Snapped `tau_r` in hours.
    tau_hours: Vec<f64>,
    /// Epoch of every grid index.
    epoch_by_index: Vec<u32>,
    alpha: Vec<f64>,
    /// Planned `n_h(tau_r)`, `[epoch][stratum]`.
    sizes: Vec<Vec<usize>>,
    /// `round(alpha_h * n_h(tau_{r-1}))`, `[epoch-1][stratum]`.
    discards: Vec<Vec<usize>>,
    /// Epochs/strata where the discard count was rounded.
    rounded: Vec<(usize, usize)>,
    strata_sizes: Vec<usize>,
    grid_len: usize,
    spacing_hours: f64,
    duration_hours: f64,
    density: DensityTable,
    pattern: Option<RotationPattern>,
}

/// Snap replacement times to grid indices; they must lie strictly inside
/// `(0, T)` and stay strictly increasing after snapping.
pub fn snap_taus<S: Scalar>(grid: &TimeGrid<S>, taus_hours: &[f64]) -> Result<Vec<usize>> {
    let spacing = grid.spacing().to_real();
    let duration = grid.duration().to_real();
    let mut tau_idx = Vec::with_capacity(taus_hours.len());
    for &t in taus_hours {
        if t <= 0.0 || t >= duration {
            return Err(Error::Validation(format!(
                "replacement time {t} must lie strictly inside (0, {duration})"
            )));
        }
        let idx = (t / spacing).round() as usize;
        if ((t / spacing) - idx as f64).abs() > 0.5 + 1e-9 {
            return Err(Error::Validation(format!("replacement time {t} is too far from the grid")));
        }
        if idx == 0 || idx >= grid.len() - 1 {
            return Err(Error::Validation(format!(
                "replacement time {t} snaps to a grid boundary"
            )));
        }
        tau_idx.push(idx);
    }
    if tau_idx.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation(
            "replacement times must be strictly increasing after snapping".into(),
        ));
    }
    Ok(tau_idx)
}

/// Check a design and allocation against a population.
pub fn validate_design<S: Scalar>(
    spec: &DesignSpec,
    trace: &AllocationTrace,
    pop: &FunctionalPopulation<S>,
) -> Result<ValidatedDesign> {
    validate_design_on_grid(spec, trace, pop.grid(), &pop.strata_sizes())
}

/// Grid-level variant for callers without a full population at hand.
pub fn validate_design_on_grid<S: Scalar>(
    spec: &DesignSpec,
    trace: &AllocationTrace,
    grid: &TimeGrid<S>,
    strata_sizes: &[usize],
) -> Result<ValidatedDesign> {
    let h_count = strata_sizes.len();
    let spacing = grid.spacing().to_real();
    let duration = grid.duration().to_real();

    if spec.alpha.len() != h_count {
        return Err(Error::Validation(format!(
            "design lists {} replacement rates for {} strata",
            spec.alpha.len(),
            h_count
        )));
    }
    for (h, &a) in spec.alpha.iter().enumerate() {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::Validation(format!("alpha for stratum {h} must lie in [0, 1], got {a}")));
        }
        if spec.kind == DesignKind::FixedPanel && a != 0.0 {
            return Err(Error::Validation("fixed panels require alpha = 0".into()));
        }
    }

    // Snap replacement times to the grid.
    let tau_idx = snap_taus(grid, &spec.taus_hours)?;
    let tau_hours: Vec<f64> = tau_idx.iter().map(|&i| i as f64 * spacing).collect();
    let m = tau_idx.len();

    if trace.sizes.len() != m + 1 {
        return Err(Error::Validation(format!(
            "allocation lists {} epochs, design has {}",
            trace.sizes.len(),
            m + 1
        )));
    }
    for (r, row) in trace.sizes.iter().enumerate() {
        if row.len() != h_count {
            return Err(Error::Validation(format!("allocation epoch {r} misses strata")));
        }
        for (h, &n) in row.iter().enumerate() {
            if n < 1 || n > strata_sizes[h] {
                return Err(Error::Validation(format!(
                    "allocation epoch {r} stratum {h}: n = {n} outside 1..={}",
                    strata_sizes[h]
                )));
            }
        }
    }

    // Discard counts and transition feasibility.
    let mut discards = Vec::with_capacity(m);
    let mut rounded = Vec::new();
    for r in 1..=m {
        let mut row = Vec::with_capacity(h_count);
        for h in 0..h_count {
            let n_prev = trace.sizes[r - 1][h];
            let n_next = trace.sizes[r][h];
            let d = match spec.kind {
                DesignKind::FullReplacement => 0,
                DesignKind::FixedPanel
                | DesignKind::PartialReplacement
                | DesignKind::ConventionalRotation => {
                    let exact = spec.alpha[h] * n_prev as f64;
                    let d = discard_count(spec.alpha[h], n_prev);
                    if (exact - d as f64).abs() > 1e-9 {
                        rounded.push((r, h));
                    }
                    d
                }
            };
            if spec.kind != DesignKind::FullReplacement {
                let retained = n_prev
                    .checked_sub(d)
                    .ok_or_else(|| Error::Validation(format!(
                        "epoch {r} stratum {h}: discard {d} exceeds sample size {n_prev}"
                    )))?;
                if n_next < retained {
                    return Err(Error::Validation(format!(
                        "epoch {r} stratum {h}: requested size {n_next} below the {retained} retained units"
                    )));
                }
                if n_next - retained > strata_sizes[h] - n_prev {
                    return Err(Error::Validation(format!(
                        "epoch {r} stratum {h}: {} additions requested but only {} units unsampled",
                        n_next - retained,
                        strata_sizes[h] - n_prev
                    )));
                }
            }
            if spec.kind == DesignKind::FixedPanel && n_next != n_prev {
                return Err(Error::Validation("fixed panels require constant sample sizes".into()));
            }
            row.push(d);
        }
        discards.push(row);
    }

    let mut epoch_by_index = vec![0u32; grid.len()];
    let mut epoch = 0u32;
    for (i, e) in epoch_by_index.iter_mut().enumerate() {
        while (epoch as usize) < m && tau_idx[epoch as usize] <= i {
            epoch += 1;
        }
        *e = epoch;
    }

    let density = match &spec.density {
        Some(raw) => {
            if raw.len() != grid.len() {
                return Err(Error::Validation(format!(
                    "density table has {} points, grid has {}",
                    raw.len(),
                    grid.len()
                )));
            }
            DensityTable::from_values(raw.clone(), spacing)?
        }
        None => DensityTable::uniform(grid.len(), duration),
    };

    let pattern = match spec.kind {
        DesignKind::ConventionalRotation => {
            let pattern = spec
                .pattern
                .clone()
                .ok_or_else(|| Error::Validation("conventional rotation needs a pattern".into()))?;
            pattern.validate(strata_sizes, &trace.sizes)?;
            Some(pattern)
        }
        _ => {
            if spec.pattern.is_some() {
                return Err(Error::Validation(
                    "rotation patterns only apply to conventional designs".into(),
                ));
            }
            None
        }
    };

    Ok(ValidatedDesign {
        kind: spec.kind,
        tau_idx,
        tau_hours,
        epoch_by_index,
        alpha: spec.alpha.clone(),
        sizes: trace.sizes.clone(),
        discards,
        rounded,
        strata_sizes: strata_sizes.to_vec(),
        grid_len: grid.len(),
        spacing_hours: spacing,
        duration_hours: duration,
        density,
        pattern,
    })
}

impl ValidatedDesign {
    pub fn kind(&self) -> DesignKind {
        self.kind
    }

    /// Number of replacements `m`.
    pub fn replacements(&self) -> usize {
        self.tau_idx.len()
    }

    pub fn tau_indices(&self) -> &[usize] {
        &self.tau_idx
    }

    pub fn tau_hours(&self) -> &[f64] {
        &self.tau_hours
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn strata_sizes(&self) -> &[usize] {
        &self.strata_sizes
    }

    pub fn n_strata(&self) -> usize {
        self.strata_sizes.len()
    }

    pub fn grid_len(&self) -> usize {
        self.grid_len
    }

    pub fn planned_sizes(&self) -> &[Vec<usize>] {
        &self.sizes
    }

    pub fn planned_discards(&self) -> &[Vec<usize>] {
        &self.discards
    }

    /// Epochs and strata where `alpha_h * n_h` needed rounding.
    pub fn rounding_events(&self) -> &[(usize, usize)] {
        &self.rounded
    }

    pub fn density(&self) -> &DensityTable {
        &self.density
    }

    pub fn pattern(&self) -> Option<&RotationPattern> {
        self.pattern.as_ref()
    }

    /// Number of sample replacements before time `t`: `nu(t)` with
    /// `tau_{nu(t)} <= t < tau_{nu(t)+1}` and `nu(T) = m`.
    pub fn epoch_of_time(&self, t: f64) -> Result<usize> {
        let eps = self.spacing_hours * 1e-9;
        if t < -eps || t > self.duration_hours + eps {
            return Err(Error::Range(format!(
                "time {t} outside the observation window [0, {}]",
                self.duration_hours
            )));
        }
        Ok(self.tau_hours.iter().take_while(|&&tau| tau <= t + eps).count())
    }

    /// `nu(t)` for a grid index.
    pub fn epoch_of_index(&self, i: usize) -> usize {
        self.epoch_by_index[i] as usize
    }

    /// Kernels over the planned sizes.
    pub fn rates(&self) -> RateSchedule<'_> {
        RateSchedule {
            kind: self.kind,
            alpha: &self.alpha,
            strata_sizes: &self.strata_sizes,
            sizes: &self.sizes,
        }
    }

    /// Sampling rate `f_h(tau_r)` as an exact count ratio.
    pub fn rate<S: Scalar>(&self, h: usize, epoch: usize) -> S {
        self.rates().rate(h, epoch)
    }

    /// Effective replacement rate of epoch `r >= 1`: the integer discard
    /// count over the previous sample size. Equals the nominal `alpha_h`
    /// whenever `alpha_h * n_h` is integral.
    pub fn effective_alpha<S: Scalar>(&self, h: usize, epoch: usize) -> S {
        self.rates().effective_alpha(h, epoch)
    }

    /// Epoch-product kernel `lambda_h` between two epochs.
    pub fn lambda<S: Scalar>(&self, h: usize, epoch_a: usize, epoch_b: usize) -> S {
        self.rates().lambda(h, epoch_a, epoch_b)
    }

    /// One-unit transition probabilities between ordered epochs
    /// (`epoch_t <= epoch_u`): `P(k in s(u) | k in s(t))` and
    /// `P(k in s(u) | k not in s(t))`.
    pub fn retention<S: Scalar>(&self, h: usize, epoch_t: usize, epoch_u: usize) -> (S, S) {
        self.rates().retention(h, epoch_t, epoch_u)
    }

    /// Second-order self-inclusion probability `pi_kk` between two epochs.
    pub fn pi_kk<S: Scalar>(&self, h: usize, epoch_a: usize, epoch_b: usize) -> S {
        self.rates().pi_kk(h, epoch_a, epoch_b)
    }

    /// Asymptotic two-unit chain: the product of the per-epoch transition
    /// matrices of `(I_k + I_l)` between two epochs. States count how many of
    /// the two distinguished units are sampled.
    pub fn two_unit_chain<S: Scalar>(&self, h: usize, epoch_a: usize, epoch_b: usize) -> [[S; 3]; 3] {
        self.rates().two_unit_chain(h, epoch_a, epoch_b)
    }
}

/// Discard count applied at a replacement: `round(alpha * n_prev)`, half
/// away from zero.
pub fn discard_count(alpha: f64, n_prev: usize) -> usize {
    (alpha * n_prev as f64).round() as usize
}

/// Inclusion-probability kernels over an explicit size schedule. Estimation
/// uses the realized sizes of a path; analytics uses the planned ones. All
/// probabilities are exact rational functions of the integer counts.
#[derive(Debug, Clone, Copy)]
pub struct RateSchedule<'a> {
    pub kind: DesignKind,
    pub alpha: &'a [f64],
    pub strata_sizes: &'a [usize],
    pub sizes: &'a [Vec<usize>],
}

impl RateSchedule<'_> {
    /// Kernels over the realized sizes of a path.
    pub fn for_path<'a>(vd: &'a ValidatedDesign, path: &'a SamplePath) -> RateSchedule<'a> {
        RateSchedule {
            kind: vd.kind,
            alpha: &vd.alpha,
            strata_sizes: &vd.strata_sizes,
            sizes: &path.sizes,
        }
    }

    pub fn rate<S: Scalar>(&self, h: usize, epoch: usize) -> S {
        S::count_ratio(self.sizes[epoch][h], self.strata_sizes[h])
    }

    pub fn effective_alpha<S: Scalar>(&self, h: usize, epoch: usize) -> S {
        let n_prev = self.sizes[epoch - 1][h];
        S::count_ratio(discard_count(self.alpha[h], n_prev), n_prev)
    }

    /// `lambda_h` between two epochs: the product of
    /// `(1 - alpha_h - f_h(tau_r)) / (1 - f_h(tau_{r-1}))` with census factors
    /// set to one. Under full replacement the kernel degenerates to the
    /// Kronecker delta of the epochs.
    pub fn lambda<S: Scalar>(&self, h: usize, epoch_a: usize, epoch_b: usize) -> S {
        let (lo, hi) = if epoch_a <= epoch_b { (epoch_a, epoch_b) } else { (epoch_b, epoch_a) };
        if self.kind == DesignKind::FullReplacement {
            return if lo == hi { S::one() } else { S::zero() };
        }
        let mut acc = S::one();
        for r in lo + 1..=hi {
            if self.sizes[r - 1][h] == self.strata_sizes[h] {
                continue;
            }
            let alpha: S = self.effective_alpha(h, r);
            let f_r: S = self.rate(h, r);
            let f_prev: S = self.rate(h, r - 1);
            acc = acc * (S::one() - alpha - f_r) / (S::one() - f_prev);
        }
        acc
    }

    /// `P(k in s(u) | k in s(t))` and `P(k in s(u) | k not in s(t))` for
    /// ordered epochs. The same two formulas cover full replacement through
    /// the degenerate lambda.
    pub fn retention<S: Scalar>(&self, h: usize, epoch_t: usize, epoch_u: usize) -> (S, S) {
        debug_assert!(epoch_t <= epoch_u);
        let lam: S = self.lambda(h, epoch_t, epoch_u);
        let f_t: S = self.rate(h, epoch_t);
        let f_u: S = self.rate(h, epoch_u);
        (
            (S::one() - f_t.clone()) * lam.clone() + f_u.clone(),
            f_u - f_t * lam,
        )
    }

    pub fn pi_kk<S: Scalar>(&self, h: usize, epoch_a: usize, epoch_b: usize) -> S {
        let (lo, hi) = if epoch_a <= epoch_b { (epoch_a, epoch_b) } else { (epoch_b, epoch_a) };
        let f_lo: S = self.rate(h, lo);
        f_lo * self.retention::<S>(h, lo, hi).0
    }

    pub fn two_unit_chain<S: Scalar>(&self, h: usize, epoch_a: usize, epoch_b: usize) -> [[S; 3]; 3] {
        let (lo, hi) = if epoch_a <= epoch_b { (epoch_a, epoch_b) } else { (epoch_b, epoch_a) };
        let mut product = identity3::<S>();
        for r in lo + 1..=hi {
            let alpha: S = self.effective_alpha(h, r);
            let f_r: S = self.rate(h, r);
            let f_prev: S = self.rate(h, r - 1);
            // beta_r = P(k in s(tau_r) | k not in s(tau_{r-1})).
            let beta = (f_r - (S::one() - alpha.clone()) * f_prev.clone())
                / (S::one() - f_prev);
            let step = two_unit_step(&alpha, &beta);
            product = mat3_mul(&product, &step);
        }
        product
    }
}

fn identity3<S: Scalar>() -> [[S; 3]; 3] {
    let z = S::zero;
    let o = S::one;
    [[o(), z(), z()], [z(), o(), z()], [z(), z(), o()]]
}

fn two_unit_step<S: Scalar>(alpha: &S, beta: &S) -> [[S; 3]; 3] {
    let one = S::one();
    let a = alpha.clone();
    let b = beta.clone();
    let na = one.clone() - a.clone();
    let nb = one.clone() - b.clone();
    let two = S::from_count(2);
    [
        [nb.clone() * nb.clone(), two.clone() * nb.clone() * b.clone(), b.clone() * b.clone()],
        [
            a.clone() * nb.clone(),
            a.clone() * b.clone() + na.clone() * nb.clone(),
            na.clone() * b.clone(),
        ],
        [a.clone() * a.clone(), two * na.clone() * a.clone(), na.clone() * na],
    ]
}

fn mat3_mul<S: Scalar>(x: &[[S; 3]; 3], y: &[[S; 3]; 3]) -> [[S; 3]; 3] {
    let mut out = identity3::<S>();
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let mut acc = S::zero();
            for k in 0..3 {
                acc = acc + x[i][k].clone() * y[k][j].clone();
            }
            *cell = acc;
        }
    }
    out
}

/// Realized per-stratum samples at one epoch, as sorted within-stratum
/// indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleState {
    pub per_stratum: Vec<Vec<u32>>,
}

impl SampleState {
    pub fn sizes(&self) -> Vec<usize> {
        self.per_stratum.iter().map(|s| s.len()).collect()
    }

    pub fn contains(&self, h: usize, unit: u32) -> bool {
        self.per_stratum[h].binary_search(&unit).is_ok()
    }
}

/// A realized time-varying sample: one state per epoch plus the realized
/// sizes (which may differ from the plan under adaptive allocation).
#[derive(Debug, Clone)]
pub struct SamplePath {
    pub states: Vec<SampleState>,
    pub sizes: Vec<Vec<usize>>,
}

impl SamplePath {
    pub fn state(&self, epoch: usize) -> &SampleState {
        &self.states[epoch]
    }

    pub fn rate<S: Scalar>(&self, strata_sizes: &[usize], h: usize, epoch: usize) -> S {
        S::count_ratio(self.sizes[epoch][h], strata_sizes[h])
    }
}

/// Feasible size interval for the next epoch, per stratum.
#[derive(Debug, Clone)]
pub struct SizeBounds {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

fn srswor(rng: &mut impl Rng, pool: usize, k: usize) -> Vec<u32> {
    let mut picked: Vec<u32> = rand::seq::index::sample(rng, pool, k)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    picked.sort_unstable();
    picked
}

/// Independent SRSWOR in each stratum at `tau_0`.
pub fn initial_sample(vd: &ValidatedDesign, streams: &ReplicationStreams) -> SampleState {
    let per_stratum = (0..vd.n_strata())
        .map(|h| srswor(&mut streams.sample(h, 0), vd.strata_sizes[h], vd.sizes[0][h]))
        .collect();
    SampleState { per_stratum }
}

/// Full replacement: a fresh SRSWOR, independent of the current state.
pub fn step_full(
    vd: &ValidatedDesign,
    next_sizes: &[usize],
    epoch: usize,
    streams: &ReplicationStreams,
) -> SampleState {
    let per_stratum = (0..vd.n_strata())
        .map(|h| srswor(&mut streams.sample(h, epoch), vd.strata_sizes[h], next_sizes[h]))
        .collect();
    SampleState { per_stratum }
}

/// Partial replacement: discard `round(alpha_h n_h)` units by SRSWOR within
/// the sample, then add units by SRSWOR within the unsampled part.
pub fn step_partial(
    vd: &ValidatedDesign,
    state: &SampleState,
    next_sizes: &[usize],
    epoch: usize,
    streams: &ReplicationStreams,
) -> Result<SampleState> {
    let mut per_stratum = Vec::with_capacity(vd.n_strata());
    for h in 0..vd.n_strata() {
        let current = &state.per_stratum[h];
        let n_prev = current.len();
        let n_total = vd.strata_sizes[h];
        let discard = discard_count(vd.alpha[h], n_prev);
        let retained_count = n_prev.checked_sub(discard).ok_or_else(|| {
            Error::Validation(format!("stratum {h}: discard {discard} exceeds sample {n_prev}"))
        })?;
        let n_next = next_sizes[h];
        if n_next < retained_count || n_next - retained_count > n_total - n_prev {
            return Err(Error::Validation(format!(
                "stratum {h}: infeasible transition {n_prev} -> {n_next} with discard {discard}"
            )));
        }
        let additions = n_next - retained_count;
        let mut rng = streams.sample(h, epoch);

        let discard_pos = srswor(&mut rng, n_prev, discard);
        let mut keep = Vec::with_capacity(retained_count);
        let mut di = 0;
        for (pos, &unit) in current.iter().enumerate() {
            if di < discard_pos.len() && discard_pos[di] as usize == pos {
                di += 1;
            } else {
                keep.push(unit);
            }
        }

        // Complement of the pre-replacement sample; discarded units are not
        // eligible for re-entry at the same epoch.
        let mut complement = Vec::with_capacity(n_total - n_prev);
        let mut ci = 0;
        for unit in 0..n_total as u32 {
            if ci < current.len() && current[ci] == unit {
                ci += 1;
            } else {
                complement.push(unit);
            }
        }
        let add_pos = srswor(&mut rng, complement.len(), additions);
        for &p in &add_pos {
            keep.push(complement[p as usize]);
        }
        keep.sort_unstable();
        assert_eq!(keep.len(), n_next, "realized sample size must match the allocation");
        per_stratum.push(keep);
    }
    Ok(SampleState { per_stratum })
}

/// Realize a full path. `next_sizes` is consulted at each replacement epoch
/// with the current state and the feasible per-stratum bounds; fixed
/// allocations just return their planned row.
pub fn realize_path<F>(
    vd: &ValidatedDesign,
    streams: &ReplicationStreams,
    mut next_sizes: F,
) -> Result<SamplePath>
where
    F: FnMut(usize, &SampleState, &SizeBounds) -> Result<Vec<usize>>,
{
    if vd.kind == DesignKind::ConventionalRotation {
        return Err(Error::Validation(
            "conventional rotation paths are realized from a pattern".into(),
        ));
    }
    let m = vd.replacements();
    let mut states = Vec::with_capacity(m + 1);
    let mut sizes = Vec::with_capacity(m + 1);
    let state0 = initial_sample(vd, streams);
    sizes.push(state0.sizes());
    states.push(state0);
    for r in 1..=m {
        let current = states.last().expect("nonempty");
        let current_sizes = &sizes[r - 1];
        let bounds = feasible_bounds(vd, current_sizes);
        let requested = next_sizes(r, current, &bounds)?;
        for h in 0..vd.n_strata() {
            if requested[h] < bounds.lo[h] || requested[h] > bounds.hi[h] {
                return Err(Error::Validation(format!(
                    "epoch {r} stratum {h}: size {} outside feasible [{}, {}]",
                    requested[h], bounds.lo[h], bounds.hi[h]
                )));
            }
        }
        let next = match vd.kind {
            DesignKind::FullReplacement => step_full(vd, &requested, r, streams),
            DesignKind::FixedPanel | DesignKind::PartialReplacement => {
                step_partial(vd, current, &requested, r, streams)?
            }
            DesignKind::ConventionalRotation => unreachable!(),
        };
        for (h, s) in next.per_stratum.iter().enumerate() {
            assert_eq!(s.len(), requested[h], "per-epoch cardinality invariant");
        }
        sizes.push(next.sizes());
        states.push(next);
    }
    Ok(SamplePath { states, sizes })
}

/// Feasible next-epoch sizes given the current realized sizes.
pub fn feasible_bounds(vd: &ValidatedDesign, current_sizes: &[usize]) -> SizeBounds {
    let h_count = vd.n_strata();
    let mut lo = Vec::with_capacity(h_count);
    let mut hi = Vec::with_capacity(h_count);
    for h in 0..h_count {
        match vd.kind {
            DesignKind::FullReplacement => {
                lo.push(1);
                hi.push(vd.strata_sizes[h]);
            }
            _ => {
                let d = discard_count(vd.alpha[h], current_sizes[h]);
                lo.push((current_sizes[h] - d).max(1));
                hi.push(vd.strata_sizes[h] - d);
            }
        }
    }
    SizeBounds { lo, hi }
}

/// Compose a pattern with explicit per-stratum label permutations.
pub fn apply_pattern(
    vd: &ValidatedDesign,
    pattern: &RotationPattern,
    permutations: &[Vec<u32>],
) -> SamplePath {
    let mut states = Vec::with_capacity(pattern.slots.len());
    let mut sizes = Vec::with_capacity(pattern.slots.len());
    for epoch in &pattern.slots {
        let per_stratum: Vec<Vec<u32>> = epoch
            .iter()
            .enumerate()
            .map(|(h, slots)| {
                let mut units: Vec<u32> = slots.iter().map(|&s| permutations[h][s as usize]).collect();
                units.sort_unstable();
                units
            })
            .collect();
        let state = SampleState { per_stratum };
        sizes.push(state.sizes());
        states.push(state);
    }
    let _ = vd;
    SamplePath { states, sizes }
}

/// Conventional rotation: draw one uniform label permutation per stratum,
/// then read the whole path off the pattern.
pub fn conventional_path(
    vd: &ValidatedDesign,
    pattern: &RotationPattern,
    streams: &ReplicationStreams,
) -> Result<SamplePath> {
    pattern.validate(&vd.strata_sizes, &vd.sizes)?;
    let permutations: Vec<Vec<u32>> = (0..vd.n_strata())
        .map(|h| {
            let mut perm: Vec<u32> = (0..vd.strata_sizes[h] as u32).collect();
            perm.shuffle(&mut streams.permutation(h));
            perm
        })
        .collect();
    Ok(apply_pattern(vd, pattern, &permutations))
}
