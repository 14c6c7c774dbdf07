//! Closed-form covariance of the HT estimator, MISE, and the variance of the
//! integrated squared error: exact small-instance oracle plus large-sample
//! formulas.

use std::io::Write;
use std::path::Path;

use crate::designs::{DesignKind, ValidatedDesign};
use crate::error::{Error, Result};
use crate::exact::{for_each_stratum_path, SubsetChain};
use crate::population::{trapezoid_weights, FunctionalPopulation, TimeGrid};
use crate::scalar::{FloatScalar, Scalar};

/// Default cap on the per-stratum path count of the exact oracle.
pub const EXACT_PATH_CAP: u128 = 1_000_000;

/// Covariance surface of the HT estimator over the grid.
#[derive(Debug, Clone)]
pub struct CovKernel<S> {
    grid: TimeGrid<S>,
    /// Row-major `G x G`, symmetric.
    values: Vec<S>,
}

impl<S: Scalar> CovKernel<S> {
    pub fn new(grid: TimeGrid<S>, values: Vec<S>) -> Result<Self> {
        let g = grid.len();
        if values.len() != g * g {
            return Err(Error::Validation(format!(
                "kernel has {} entries for a {g} point grid",
                values.len()
            )));
        }
        let tol = S::from_real(1e-12);
        for i in 0..g {
            if values[i * g + i] < -tol.clone() {
                return Err(Error::Validation(format!("negative kernel diagonal at {i}")));
            }
            for j in 0..i {
                let d = values[i * g + j].clone() - values[j * g + i].clone();
                if d.abs() > tol {
                    return Err(Error::Validation(format!("kernel asymmetry at ({i}, {j})")));
                }
            }
        }
        Ok(CovKernel { grid, values })
    }

    pub fn grid(&self) -> &TimeGrid<S> {
        &self.grid
    }

    pub fn get(&self, i: usize, j: usize) -> &S {
        &self.values[i * self.grid.len() + j]
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }
}

impl CovKernel<f64> {
    /// Dense CSV with a leading grid header row and a leading time column.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(out, "t")?;
        for t in self.grid.points() {
            write!(out, ",{t}")?;
        }
        writeln!(out)?;
        let g = self.grid.len();
        for i in 0..g {
            write!(out, "{}", self.grid.point(i))?;
            for j in 0..g {
                write!(out, ",{}", self.get(i, j))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty kernel file".into()))?;
        let times: Vec<f64> = header
            .split(',')
            .skip(1)
            .map(|s| s.parse().map_err(|_| Error::Format(format!("bad header time `{s}`"))))
            .collect::<Result<_>>()?;
        let grid = TimeGrid::new(times)?;
        let g = grid.len();
        let mut values = Vec::with_capacity(g * g);
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != g + 1 {
                return Err(Error::Format(format!("kernel row {i} has {} fields", fields.len())));
            }
            for s in &fields[1..] {
                values.push(s.parse().map_err(|_| Error::Format(format!("bad value `{s}`")))?);
            }
        }
        CovKernel::new(grid, values)
    }
}

/// Covariance of the HT estimator under full replacement: block diagonal
/// across epochs, SRSWOR covariance within an epoch.
pub fn cov_full<S: Scalar>(
    pop: &FunctionalPopulation<S>,
    vd: &ValidatedDesign,
) -> Result<CovKernel<S>> {
    if vd.kind() != DesignKind::FullReplacement {
        return Err(Error::Validation("cov_full needs a full replacement design".into()));
    }
    cov_kernel(pop, vd)
}

/// Covariance of the HT estimator under partial replacement (fixed panels
/// included): the lambda kernel damps the SRSWOR covariance across epochs.
pub fn cov_partial<S: Scalar>(
    pop: &FunctionalPopulation<S>,
    vd: &ValidatedDesign,
) -> Result<CovKernel<S>> {
    if !matches!(vd.kind(), DesignKind::PartialReplacement | DesignKind::FixedPanel) {
        return Err(Error::Validation(
            "cov_partial needs a partial replacement or fixed panel design".into(),
        ));
    }
    cov_kernel(pop, vd)
}

/// Shared assembly: `(1/N) sum_h (N_h/N) (1 - f_h(min)) / f_h(max) *
/// gamma_h(t, t') * lambda_h(t, t')`, where full replacement's lambda is the
/// Kronecker delta of the epochs.
fn cov_kernel<S: Scalar>(
    pop: &FunctionalPopulation<S>,
    vd: &ValidatedDesign,
) -> Result<CovKernel<S>> {
    let g = pop.grid().len();
    let n = S::from_count(pop.n_units());
    let epochs = vd.replacements() + 1;
    let mut values = vec![S::zero(); g * g];
    for h in 0..pop.n_strata() {
        let gamma = pop.stratum_cov_matrix(h)?;
        let share = S::count_ratio(pop.stratum_units(h).len(), pop.n_units());
        // lambda and rate factors only depend on the epoch pair.
        let mut factor = vec![S::zero(); epochs * epochs];
        for ea in 0..epochs {
            let f_lo: S = vd.rate(h, ea);
            for eb in ea..epochs {
                let f_hi: S = vd.rate(h, eb);
                let lam: S = vd.lambda(h, ea, eb);
                let v = share.clone() * (S::one() - f_lo.clone()) / f_hi * lam / n.clone();
                factor[ea * epochs + eb] = v.clone();
                factor[eb * epochs + ea] = v;
            }
        }
        for i in 0..g {
            let ei = vd.epoch_of_index(i);
            for j in i..g {
                let ej = vd.epoch_of_index(j);
                let f = &factor[ei * epochs + ej];
                if f.is_zero() {
                    continue;
                }
                let v = f.clone() * gamma[i * g + j].clone();
                values[i * g + j] += v.clone();
                if i != j {
                    values[j * g + i] += v;
                }
            }
        }
    }
    CovKernel::new(pop.grid().clone(), values)
}

/// Mean integrated squared error of the (unbiased) HT estimator: the
/// trapezoid integral of the kernel diagonal.
pub fn mise<S: Scalar>(kernel: &CovKernel<S>) -> S {
    let weights = trapezoid_weights(kernel.grid());
    let mut acc = S::zero();
    for (i, w) in weights.iter().enumerate() {
        acc += w.clone() * kernel.get(i, i).clone();
    }
    acc
}

/// Large-sample Var(ISE) under full replacement:
/// `(2 / (m N^2)) \int ( sum_h (N_h/N) ((1-f_h)/f_h) gamma_h(t,t) )^2 / g(t) dt`.
pub fn var_ise_full_asym<S: Scalar>(
    pop: &FunctionalPopulation<S>,
    vd: &ValidatedDesign,
) -> Result<S> {
    if vd.kind() != DesignKind::FullReplacement {
        return Err(Error::Validation("Var(ISE) full form needs a full replacement design".into()));
    }
    let m = vd.replacements();
    if m == 0 {
        return Err(Error::Validation("full replacement asymptotics need m >= 1".into()));
    }
    let g_len = pop.grid().len();
    let weights = trapezoid_weights(pop.grid());
    let diag: Vec<Vec<S>> = (0..pop.n_strata())
        .map(|h| (0..g_len).map(|i| pop.stratum_covariance(h, i, i)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let mut acc = S::zero();
    for i in 0..g_len {
        let e = vd.epoch_of_index(i);
        let mut inner = S::zero();
        for h in 0..pop.n_strata() {
            let f: S = vd.rate(h, e);
            let share = S::count_ratio(pop.stratum_units(h).len(), pop.n_units());
            inner += share * (S::one() - f.clone()) / f * diag[h][i].clone();
        }
        let g_t = S::from_real(vd.density().g_at(i));
        acc += weights[i].clone() * inner.clone() * inner / g_t;
    }
    let n2 = S::from_count(pop.n_units() * pop.n_units());
    Ok(S::from_count(2) * acc / (S::from_count(m) * n2))
}

/// Large-sample Var(ISE) under partial replacement:
/// `(2 / N^2) \iint ( sum_h (N_h/N) ((1-f_h(min))/f_h(max)) lambda_h gamma_h )^2`.
pub fn var_ise_partial_asym<S: Scalar>(
    pop: &FunctionalPopulation<S>,
    vd: &ValidatedDesign,
) -> Result<S> {
    if !matches!(vd.kind(), DesignKind::PartialReplacement | DesignKind::FixedPanel) {
        return Err(Error::Validation(
            "Var(ISE) partial form needs a partial replacement or fixed panel design".into(),
        ));
    }
    let kernel_input = cov_kernel_inner(pop, vd)?;
    Ok(double_quadrature(pop, &kernel_input))
}

/// Corollary form with the exponential kernel `exp(-c_h |G(t) - G(t')|)` in
/// place of lambda; sample sizes must be constant over time.
pub fn var_ise_corollary<S: FloatScalar>(
    pop: &FunctionalPopulation<S>,
    vd: &ValidatedDesign,
    decay: &[S],
) -> Result<S> {
    if decay.len() != pop.n_strata() {
        return Err(Error::Validation("one decay rate per stratum required".into()));
    }
    if decay.iter().any(|c| *c < S::zero()) {
        return Err(Error::Validation("decay rates must be nonnegative".into()));
    }
    let sizes = vd.planned_sizes();
    if sizes.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Validation(
            "the exponential-kernel form assumes constant sample sizes".into(),
        ));
    }
    let g_len = pop.grid().len();
    let mut inner = vec![S::zero(); g_len * g_len];
    for h in 0..pop.n_strata() {
        let gamma = pop.stratum_cov_matrix(h)?;
        let share = S::count_ratio(pop.stratum_units(h).len(), pop.n_units());
        let f: S = vd.rate(h, 0);
        let scale = share * (S::one() - f) / f;
        for i in 0..g_len {
            let gi = S::from_real(vd.density().cumulative_at(i));
            for j in i..g_len {
                let gj = S::from_real(vd.density().cumulative_at(j));
                let decay_factor = (-decay[h] * num_traits::Float::abs(gi - gj)).exp();
                let v = scale * decay_factor * gamma[i * g_len + j];
                inner[i * g_len + j] += v;
                if i != j {
                    inner[j * g_len + i] += v;
                }
            }
        }
    }
    Ok(double_quadrature(pop, &inner))
}

/// Inner sum of the partial-replacement Var(ISE) integrand on the grid.
fn cov_kernel_inner<S: Scalar>(
    pop: &FunctionalPopulation<S>,
    vd: &ValidatedDesign,
) -> Result<Vec<S>> {
    let g = pop.grid().len();
    let epochs = vd.replacements() + 1;
    let mut inner = vec![S::zero(); g * g];
    for h in 0..pop.n_strata() {
        let gamma = pop.stratum_cov_matrix(h)?;
        let share = S::count_ratio(pop.stratum_units(h).len(), pop.n_units());
        let mut factor = vec![S::zero(); epochs * epochs];
        for ea in 0..epochs {
            let f_lo: S = vd.rate(h, ea);
            for eb in ea..epochs {
                let f_hi: S = vd.rate(h, eb);
                let lam: S = vd.lambda(h, ea, eb);
                let v = share.clone() * (S::one() - f_lo.clone()) / f_hi * lam;
                factor[ea * epochs + eb] = v.clone();
                factor[eb * epochs + ea] = v;
            }
        }
        for i in 0..g {
            let ei = vd.epoch_of_index(i);
            for j in i..g {
                let ej = vd.epoch_of_index(j);
                let v = factor[ei * epochs + ej].clone() * gamma[i * g + j].clone();
                inner[i * g + j] += v.clone();
                if i != j {
                    inner[j * g + i] += v;
                }
            }
        }
    }
    Ok(inner)
}

/// `(2 / N^2) sum_{ij} w_i w_j inner(i,j)^2`.
fn double_quadrature<S: Scalar>(pop: &FunctionalPopulation<S>, inner: &[S]) -> S {
    let g = pop.grid().len();
    let weights = trapezoid_weights(pop.grid());
    let mut acc = S::zero();
    for i in 0..g {
        for j in 0..g {
            let v = &inner[i * g + j];
            acc += weights[i].clone() * weights[j].clone() * v.clone() * v.clone();
        }
    }
    let n2 = S::from_count(pop.n_units() * pop.n_units());
    S::from_count(2) * acc / n2
}

/// Exact Var(ISE) by probability-weighted enumeration of all sample paths,
/// stratum by stratum. The ISE uses the same trapezoid rule as the Monte
/// Carlo harness, so the two are directly comparable.
///
/// Within-stratum fourth moments combine with cross-strata second moments
/// through independence:
/// `Var(ISE) = (1/N^4) sum_{ij} w_i w_j [ sum_h Cov(e_h(i)^2, e_h(j)^2)
///   + 2 ((sum_h M2_h(i,j))^2 - sum_h M2_h(i,j)^2) ]`
/// with `e_h` the stratum estimation error and `M2_h` its second moment.
pub fn var_ise_exact_small<S: Scalar>(
    pop: &FunctionalPopulation<S>,
    vd: &ValidatedDesign,
    cap: u128,
) -> Result<S> {
    let g = pop.grid().len();
    let h_count = pop.n_strata();
    let mut m2 = Vec::with_capacity(h_count);
    let mut m4 = Vec::with_capacity(h_count);
    for h in 0..h_count {
        let units = pop.stratum_units(h);
        let n_h = units.len();
        // Stratum totals sum_{k in U_h} X_k(i).
        let mut totals = vec![S::zero(); g];
        for &u in units {
            for (t, v) in totals.iter_mut().zip(pop.unit_curve(u)) {
                *t += v.clone();
            }
        }
        let mut m2_h = vec![S::zero(); g * g];
        let mut m4_h = vec![S::zero(); g * g];
        let bounds = {
            let taus = vd.tau_indices();
            let mut b = Vec::with_capacity(taus.len() + 1);
            let mut start = 0usize;
            for &t in taus {
                b.push((start, t));
                start = t;
            }
            b.push((start, g));
            b
        };
        for_each_stratum_path::<S, _>(vd, h, cap, |states, p| {
            // e_h(i) = (N_h / n) sum_{k in s} X_k(i) - totals(i), piecewise
            // over epochs.
            let mut err = vec![S::zero(); g];
            for (e, &mask) in states.iter().enumerate() {
                let (start, end) = bounds[e];
                let scale = S::count_ratio(n_h, mask.count_ones() as usize);
                let mut sample_sum = vec![S::zero(); end - start];
                for b in 0..n_h {
                    if mask & (1 << b) != 0 {
                        let curve = pop.unit_curve(units[b]);
                        for (s, v) in sample_sum.iter_mut().zip(&curve[start..end]) {
                            *s += v.clone();
                        }
                    }
                }
                for (offset, s) in sample_sum.into_iter().enumerate() {
                    let i = start + offset;
                    err[i] = scale.clone() * s - totals[i].clone();
                }
            }
            for i in 0..g {
                for j in i..g {
                    let prod = err[i].clone() * err[j].clone();
                    let v2 = p.clone() * prod.clone();
                    let v4 = p.clone() * prod.clone() * prod;
                    m2_h[i * g + j] += v2.clone();
                    m4_h[i * g + j] += v4.clone();
                    if i != j {
                        m2_h[j * g + i] += v2;
                        m4_h[j * g + i] += v4;
                    }
                }
            }
        })?;
        m2.push(m2_h);
        m4.push(m4_h);
    }

    let weights = trapezoid_weights(pop.grid());
    let mut acc = S::zero();
    for i in 0..g {
        for j in 0..g {
            let mut within = S::zero();
            let mut sum2 = S::zero();
            let mut sumsq = S::zero();
            for h in 0..h_count {
                let m2_ij = m2[h][i * g + j].clone();
                within += m4[h][i * g + j].clone()
                    - m2[h][i * g + i].clone() * m2[h][j * g + j].clone();
                sum2 += m2_ij.clone();
                sumsq += m2_ij.clone() * m2_ij;
            }
            let cross = S::from_count(2) * (sum2.clone() * sum2 - sumsq);
            acc += weights[i].clone() * weights[j].clone() * (within + cross);
        }
    }
    let n = S::from_count(pop.n_units());
    let n4 = n.clone() * n.clone() * n.clone() * n;
    Ok(acc / n4)
}

/// The two fourth-order indicator-moment combinations of four distinct units
/// at two times, from the exact subset chain.
pub fn fourth_order_c<S: Scalar>(
    vd: &ValidatedDesign,
    h: usize,
    t_idx: usize,
    u_idx: usize,
) -> Result<(S, S)> {
    if vd.strata_sizes()[h] < 4 {
        return Err(Error::Validation(format!(
            "stratum {h} has fewer than 4 units; the fourth-order moments need 4"
        )));
    }
    let chain = SubsetChain::<S>::new(vd, h, 4)?;
    let e_t = vd.epoch_of_index(t_idx);
    let e_u = vd.epoch_of_index(u_idx);
    // Units i*, j*, k*, l* are bits 0..3; unprimed factors sit at t,
    // primed ones at t'.
    let m = |need_t: u32, need_u: u32| chain.moment(e_t, need_t, e_u, need_u);
    let c1 = m(0b0001, 0b0100) - m(0b0011, 0b0100) - m(0b0001, 0b1100) + m(0b0011, 0b1100);
    let two = S::from_count(2);
    let four = S::from_count(4);
    let c2 = two.clone() * m(0b0101, 0b0101) - four * m(0b0011, 0b0101)
        + two * m(0b0011, 0b1100);
    Ok((c1, c2))
}
