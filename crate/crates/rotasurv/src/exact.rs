//! Exact distributions over realized samples.
//!
//! Two engines back the oracle layer:
//!
//! * [`SubsetChain`] tracks the exact law of `s_h ∩ D` for a small set `D` of
//!   distinguished units across replacement epochs. Transitions are
//!   hypergeometric ratios, so the chain stays exact for strata of any size
//!   and yields joint indicator moments of up to `|D|` units at two times.
//! * [`for_each_stratum_path`] enumerates every realizable sample path of a
//!   stratum together with its probability, for instances small enough to
//!   enumerate. This is the brute-force ground truth the rest of the crate is
//!   checked against.
//!
//! Both engines are generic over the scalar, so the same code produces exact
//! rational probabilities or fast floating-point ones.

use crate::designs::{DesignKind, ValidatedDesign};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Falling factorial `x (x-1) ... (x-k+1)` as a scalar; zero when `x < k`.
fn falling<S: Scalar>(x: usize, k: usize) -> S {
    if k > x {
        return S::zero();
    }
    let mut acc = S::one();
    for i in 0..k {
        acc = acc * S::from_count(x - i);
    }
    acc
}

/// Exact Markov chain of `s_h(tau_r) ∩ D` for `|D|` distinguished units of
/// stratum `h`. States are bitmasks over `D`.
pub struct SubsetChain<S> {
    dd: usize,
    /// `[epoch][mask]` marginal distribution.
    marginals: Vec<Vec<S>>,
    /// `[epoch - 1][from][to]` transition matrices.
    transitions: Vec<Vec<Vec<S>>>,
}

impl<S: Scalar> SubsetChain<S> {
    /// Build the chain from the planned sizes and discard counts of a
    /// validated design. `dd` is the number of distinguished units.
    pub fn new(vd: &ValidatedDesign, h: usize, dd: usize) -> Result<Self> {
        if dd == 0 || dd > 8 {
            return Err(Error::Validation("distinguished subsets support 1..=8 units".into()));
        }
        let n_total = vd.strata_sizes()[h];
        if dd > n_total {
            return Err(Error::Validation(format!(
                "stratum {h} has {n_total} units, fewer than the {dd} distinguished"
            )));
        }
        if vd.kind() == DesignKind::ConventionalRotation {
            return Err(Error::Validation(
                "subset chains apply to SRSWOR-driven designs only".into(),
            ));
        }
        let states = 1usize << dd;
        let sizes = vd.planned_sizes();
        let discards = vd.planned_discards();

        // SRSWOR initial law: P(s0 ∩ D = A) = (n)_|A| (N-n)_(dd-|A|) / (N)_dd.
        let n0 = sizes[0][h];
        let denom0 = falling::<S>(n_total, dd);
        let mut dist: Vec<S> = (0..states)
            .map(|mask| {
                let k = mask.count_ones() as usize;
                falling::<S>(n0, k) * falling::<S>(n_total - n0, dd - k) / denom0.clone()
            })
            .collect();
        let mut marginals = vec![dist.clone()];
        let mut transitions = Vec::new();

        for r in 1..sizes.len() {
            let n_prev = sizes[r - 1][h];
            let n_next = sizes[r][h];
            let matrix = match vd.kind() {
                DesignKind::FullReplacement => full_transition::<S>(n_total, n_next, dd, states),
                _ => {
                    let d = discards[r - 1][h];
                    let additions = n_next - (n_prev - d);
                    partial_transition::<S>(n_total, n_prev, d, additions, dd, states)
                }
            };
            let mut next = vec![S::zero(); states];
            for (from, p) in dist.iter().enumerate() {
                if p.is_zero() {
                    continue;
                }
                for (to, cell) in next.iter_mut().enumerate() {
                    *cell += p.clone() * matrix[from][to].clone();
                }
            }
            marginals.push(next.clone());
            transitions.push(matrix);
            dist = next;
        }
        Ok(SubsetChain { dd, marginals, transitions })
    }

    pub fn state_count(&self) -> usize {
        1 << self.dd
    }

    /// Marginal law of `s(tau_r) ∩ D`.
    pub fn marginal(&self, epoch: usize) -> &[S] {
        &self.marginals[epoch]
    }

    /// Joint law of the intersection at two ordered epochs.
    pub fn joint(&self, epoch_a: usize, epoch_b: usize) -> Vec<Vec<S>> {
        let (lo, hi) = if epoch_a <= epoch_b { (epoch_a, epoch_b) } else { (epoch_b, epoch_a) };
        let states = self.state_count();
        // Conditional transition from lo to hi.
        let mut cond: Vec<Vec<S>> = (0..states)
            .map(|i| (0..states).map(|j| if i == j { S::one() } else { S::zero() }).collect())
            .collect();
        for r in lo..hi {
            let step = &self.transitions[r];
            let mut next = vec![vec![S::zero(); states]; states];
            for i in 0..states {
                for k in 0..states {
                    if cond[i][k].is_zero() {
                        continue;
                    }
                    for (j, cell) in next[i].iter_mut().enumerate() {
                        *cell += cond[i][k].clone() * step[k][j].clone();
                    }
                }
            }
            cond = next;
        }
        let start = self.marginal(lo);
        (0..states)
            .map(|i| cond[i].iter().map(|c| start[i].clone() * c.clone()).collect())
            .collect()
    }

    /// Exact joint indicator moment `E[ prod_{i in need_a} I_i(tau_a) *
    /// prod_{j in need_b} I_j(tau_b) ]` for bitmasks over `D`.
    pub fn moment(&self, epoch_a: usize, need_a: u32, epoch_b: usize, need_b: u32) -> S {
        let (lo, hi, need_lo, need_hi) = if epoch_a <= epoch_b {
            (epoch_a, epoch_b, need_a, need_b)
        } else {
            (epoch_b, epoch_a, need_b, need_a)
        };
        let joint = self.joint(lo, hi);
        let mut acc = S::zero();
        for (m1, row) in joint.iter().enumerate() {
            if m1 as u32 & need_lo != need_lo {
                continue;
            }
            for (m2, p) in row.iter().enumerate() {
                if m2 as u32 & need_hi == need_hi {
                    acc += p.clone();
                }
            }
        }
        acc
    }
}

fn partial_transition<S: Scalar>(
    n_total: usize,
    n_prev: usize,
    discard: usize,
    additions: usize,
    dd: usize,
    states: usize,
) -> Vec<Vec<S>> {
    let mut matrix = vec![vec![S::zero(); states]; states];
    for (from, row) in matrix.iter_mut().enumerate() {
        let k = from.count_ones() as usize;
        if k > n_prev || dd - k > n_total - n_prev {
            continue; // unreachable state
        }
        let keep_denom = falling::<S>(n_prev, k);
        let add_denom = falling::<S>(n_total - n_prev, dd - k);
        for (to, cell) in row.iter_mut().enumerate() {
            let from_mask = from as u32;
            let to_mask = to as u32;
            let dropped = (from_mask & !to_mask).count_ones() as usize;
            let kept = (from_mask & to_mask).count_ones() as usize;
            let entered = (to_mask & !from_mask).count_ones() as usize;
            let outside = dd - k;
            // Discarded units cannot re-enter at the same epoch.
            let keep_part =
                falling::<S>(discard, dropped) * falling::<S>(n_prev - discard, kept);
            let add_part = falling::<S>(additions, entered)
                * falling::<S>(n_total - n_prev - additions, outside - entered);
            *cell = keep_part * add_part / (keep_denom.clone() * add_denom.clone());
        }
    }
    matrix
}

fn full_transition<S: Scalar>(n_total: usize, n_next: usize, dd: usize, states: usize) -> Vec<Vec<S>> {
    let denom = falling::<S>(n_total, dd);
    let row: Vec<S> = (0..states)
        .map(|mask| {
            let k = mask.count_ones() as usize;
            falling::<S>(n_next, k) * falling::<S>(n_total - n_next, dd - k) / denom.clone()
        })
        .collect();
    vec![row; states]
}

/// Number of distinct sample paths of stratum `h` under the planned design:
/// the product over epochs of the per-epoch outcome counts.
pub fn stratum_path_count(vd: &ValidatedDesign, h: usize) -> u128 {
    let n_total = vd.strata_sizes()[h];
    let sizes = vd.planned_sizes();
    let mut count = binomial_u128(n_total, sizes[0][h]);
    for r in 1..sizes.len() {
        let n_prev = sizes[r - 1][h];
        let n_next = sizes[r][h];
        let step = match vd.kind() {
            DesignKind::FullReplacement => binomial_u128(n_total, n_next),
            _ => {
                let d = vd.planned_discards()[r - 1][h];
                let a = n_next - (n_prev - d);
                binomial_u128(n_prev, d).saturating_mul(binomial_u128(n_total - n_prev, a))
            }
        };
        count = count.saturating_mul(step);
    }
    count
}

fn binomial_u128(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let mut acc: u128 = 1;
    for i in 0..k.min(n - k) {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Visit every sample path of stratum `h` (as one bitmask per epoch) with its
/// exact probability. Errors when the instance exceeds `cap` paths.
pub fn for_each_stratum_path<S, F>(vd: &ValidatedDesign, h: usize, cap: u128, mut visit: F) -> Result<()>
where
    S: Scalar,
    F: FnMut(&[u32], &S),
{
    let n_total = vd.strata_sizes()[h];
    if n_total > 24 {
        return Err(Error::Capacity(format!(
            "stratum {h} has {n_total} units; path enumeration is limited to 24"
        )));
    }
    if vd.kind() == DesignKind::ConventionalRotation {
        return Err(Error::Validation(
            "conventional paths are a deterministic pattern; nothing to enumerate".into(),
        ));
    }
    let count = stratum_path_count(vd, h);
    if count > cap {
        return Err(Error::Capacity(format!(
            "stratum {h} has {count} sample paths, more than the cap of {cap}; use Monte Carlo"
        )));
    }
    let sizes = vd.planned_sizes();
    let m = sizes.len() - 1;
    let mut states = Vec::with_capacity(m + 1);
    let init_count = binomial_u128(n_total, sizes[0][h]);
    let init_prob = S::one() / S::from_count(init_count as usize);

    let full_mask: u32 = if n_total == 32 { u32::MAX } else { (1u32 << n_total) - 1 };
    for_each_mask(full_mask, sizes[0][h], &mut |mask| {
        states.push(mask);
        descend(vd, h, n_total, 1, m, &init_prob, &mut states, &mut visit);
        states.pop();
    });
    Ok(())
}

fn descend<S, F>(
    vd: &ValidatedDesign,
    h: usize,
    n_total: usize,
    r: usize,
    m: usize,
    prob: &S,
    states: &mut Vec<u32>,
    visit: &mut F,
) where
    S: Scalar,
    F: FnMut(&[u32], &S),
{
    if r > m {
        visit(states, prob);
        return;
    }
    let sizes = vd.planned_sizes();
    let n_prev = sizes[r - 1][h];
    let n_next = sizes[r][h];
    let current = *states.last().expect("path nonempty");
    let full_mask: u32 = if n_total == 32 { u32::MAX } else { (1u32 << n_total) - 1 };
    match vd.kind() {
        DesignKind::FullReplacement => {
            let step_prob =
                prob.clone() / S::from_count(binomial_u128(n_total, n_next) as usize);
            for_each_mask(full_mask, n_next, &mut |mask| {
                states.push(mask);
                descend(vd, h, n_total, r + 1, m, &step_prob, states, visit);
                states.pop();
            });
        }
        _ => {
            let d = vd.planned_discards()[r - 1][h];
            let a = n_next - (n_prev - d);
            let outcomes =
                binomial_u128(n_prev, d).saturating_mul(binomial_u128(n_total - n_prev, a));
            let step_prob = prob.clone() / S::from_count(outcomes as usize);
            let complement = full_mask & !current;
            for_each_mask(current, n_prev - d, &mut |retained| {
                for_each_mask(complement, a, &mut |added| {
                    states.push(retained | added);
                    descend(vd, h, n_total, r + 1, m, &step_prob, states, visit);
                    states.pop();
                });
            });
        }
    }
}

/// Sorted unit indices of a bitmask state.
pub fn mask_to_indices(mask: u32) -> Vec<u32> {
    (0..32).filter(|b| mask & (1 << b) != 0).collect()
}

/// Visit every joint sample path of all strata (as a [`SamplePath`]) with its
/// exact probability. The joint path space is the product of the per-stratum
/// spaces, so this is for genuinely tiny instances.
pub fn for_each_joint_path<S, F>(vd: &ValidatedDesign, cap: u128, mut visit: F) -> Result<()>
where
    S: Scalar,
    F: FnMut(&crate::designs::SamplePath, &S),
{
    use crate::designs::{SamplePath, SampleState};

    let h_count = vd.strata_sizes().len();
    let mut per_stratum: Vec<Vec<(Vec<u32>, S)>> = Vec::with_capacity(h_count);
    let mut total: u128 = 1;
    for h in 0..h_count {
        total = total.saturating_mul(stratum_path_count(vd, h));
        if total > cap {
            return Err(Error::Capacity(format!(
                "joint path space exceeds the cap of {cap}; use Monte Carlo"
            )));
        }
        let mut paths = Vec::new();
        for_each_stratum_path::<S, _>(vd, h, cap, |states, p| {
            paths.push((states.to_vec(), p.clone()));
        })?;
        per_stratum.push(paths);
    }

    let epochs = vd.planned_sizes().len();
    let mut choice = vec![0usize; h_count];
    loop {
        let mut prob = S::one();
        let mut states = Vec::with_capacity(epochs);
        for e in 0..epochs {
            let per = (0..h_count)
                .map(|h| mask_to_indices(per_stratum[h][choice[h]].0[e]))
                .collect();
            states.push(SampleState { per_stratum: per });
        }
        for h in 0..h_count {
            prob = prob * per_stratum[h][choice[h]].1.clone();
        }
        let sizes = states.iter().map(|s| s.sizes()).collect();
        visit(&SamplePath { states, sizes }, &prob);

        // Advance the mixed-radix counter.
        let mut h = 0;
        loop {
            if h == h_count {
                return Ok(());
            }
            choice[h] += 1;
            if choice[h] < per_stratum[h].len() {
                break;
            }
            choice[h] = 0;
            h += 1;
        }
    }
}

/// Visit every `k`-element submask of `pool`.
fn for_each_mask(pool: u32, k: usize, f: &mut impl FnMut(u32)) {
    let bits: Vec<u32> = (0..32).filter(|b| pool & (1 << b) != 0).collect();
    let n = bits.len();
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let mask = idx.iter().fold(0u32, |m, &i| m | (1 << bits[i]));
        f(mask);
        // Advance the lexicographic combination.
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
