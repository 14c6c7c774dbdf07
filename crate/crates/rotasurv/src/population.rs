//! Stratified populations of curves on a shared time grid, and the
//! deterministic moments every other module consumes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{FloatScalar, Scalar};

/// Relative tolerance on grid uniformity.
const GRID_REL_TOL: f64 = 1e-9;

/// Uniform time grid on `[0, T]`, in hours.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<S> {
    points: Vec<S>,
    spacing: S,
}

impl<S: Scalar> TimeGrid<S> {
    /// Build a grid from explicit points; they must start at 0, increase
    /// strictly and be uniformly spaced within `1e-9` relative tolerance.
    pub fn new(points: Vec<S>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Validation("time grid needs at least two points".into()));
        }
        let spacing = points[1].clone() - points[0].clone();
        if spacing <= S::zero() {
            return Err(Error::Validation("time grid must be strictly increasing".into()));
        }
        let tol = spacing.clone() * S::from_real(GRID_REL_TOL);
        if points[0].abs() > tol {
            return Err(Error::Validation("time grid must start at 0".into()));
        }
        for i in 1..points.len() {
            let step = points[i].clone() - points[i - 1].clone();
            if (step - spacing.clone()).abs() > tol {
                return Err(Error::Validation(format!(
                    "time grid spacing is not uniform at index {i}"
                )));
            }
        }
        Ok(TimeGrid { points, spacing })
    }

    /// Grid `0, spacing, ..., (len-1) * spacing`.
    pub fn uniform(spacing: S, len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::Validation("time grid needs at least two points".into()));
        }
        if spacing <= S::zero() {
            return Err(Error::Validation("grid spacing must be positive".into()));
        }
        let points = (0..len).map(|i| S::from_count(i) * spacing.clone()).collect();
        Ok(TimeGrid { points, spacing })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[S] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &S {
        &self.points[i]
    }

    pub fn spacing(&self) -> &S {
        &self.spacing
    }

    /// End of the observation window, `T`.
    pub fn duration(&self) -> &S {
        self.points.last().expect("nonempty grid")
    }

    /// Index of the grid point nearest to `t`; errors if `t` is outside
    /// `[0, T]` beyond half a grid step.
    pub fn nearest_index(&self, t: &S, what: &str) -> Result<usize> {
        let steps = (t.clone() / self.spacing.clone()).to_real();
        let k = steps.round();
        if k < -0.5 || k > (self.len() - 1) as f64 + 0.5 {
            return Err(Error::Range(format!("{what} {t} outside the grid [0, {}]", self.duration())));
        }
        Ok((k.max(0.0) as usize).min(self.len() - 1))
    }

    /// Interpret `value` as a whole number of grid steps; mid-cell values are
    /// rejected rather than interpolated.
    pub fn whole_steps(&self, value: &S, what: &str) -> Result<usize> {
        if *value < S::zero() {
            return Err(Error::Range(format!("{what} must be nonnegative")));
        }
        let steps = (value.clone() / self.spacing.clone()).to_real();
        let k = steps.round();
        if (steps - k).abs() > 1e-6 {
            return Err(Error::Validation(format!(
                "{what} {value} is not a multiple of the grid spacing {}",
                self.spacing
            )));
        }
        Ok(k as usize)
    }
}

/// Trapezoid quadrature weights for a uniform grid.
pub fn trapezoid_weights<S: Scalar>(grid: &TimeGrid<S>) -> Vec<S> {
    let s = grid.spacing();
    let mut w = vec![s.clone(); grid.len()];
    w[0] = s.clone() * S::half();
    let last = grid.len() - 1;
    w[last] = s.clone() * S::half();
    w
}

/// One curve sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSeries<S> {
    grid: TimeGrid<S>,
    values: Vec<S>,
}

impl<S: Scalar> CurveSeries<S> {
    pub fn new(grid: TimeGrid<S>, values: Vec<S>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Validation(format!(
                "series has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !is_finite(v)) {
            return Err(Error::Data(format!("non-finite series value at index {i}")));
        }
        Ok(CurveSeries { grid, values })
    }

    pub fn grid(&self) -> &TimeGrid<S> {
        &self.grid
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &S {
        &self.values[i]
    }

    /// Trapezoid-rule integral over `[0, T]`.
    pub fn integrate(&self) -> S {
        let weights = trapezoid_weights(&self.grid);
        let mut acc = S::zero();
        for (w, v) in weights.iter().zip(self.values.iter()) {
            acc = acc + w.clone() * v.clone();
        }
        acc
    }
}

fn is_finite<S: Scalar>(x: &S) -> bool {
    x.to_f64().is_some_and(|v| v.is_finite())
}

/// Finite population of curves partitioned into strata.
///
/// Units keep their input order; strata are indexed `0..H` by sorted label.
#[derive(Debug, Clone)]
pub struct FunctionalPopulation<S> {
    grid: TimeGrid<S>,
    /// Row-major `N x grid.len()`.
    values: Vec<S>,
    labels: Vec<String>,
    /// Per stratum, the global unit indices it contains.
    strata_units: Vec<Vec<usize>>,
    /// Per unit, its stratum index.
    unit_stratum: Vec<usize>,
}

impl<S: Scalar> FunctionalPopulation<S> {
    /// Assemble from one row per unit. Strata are derived from the labels.
    pub fn from_rows(grid: TimeGrid<S>, rows: Vec<(String, Vec<S>)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("population has no units".into()));
        }
        let width = grid.len();
        let mut values = Vec::with_capacity(rows.len() * width);
        let mut row_labels = Vec::with_capacity(rows.len());
        for (i, (label, row)) in rows.into_iter().enumerate() {
            if row.len() != width {
                return Err(Error::Format(format!(
                    "unit {} has {} values, expected {}",
                    i,
                    row.len(),
                    width
                )));
            }
            if let Some(j) = row.iter().position(|v| !is_finite(v)) {
                return Err(Error::Data(format!("non-finite curve value at unit {i}, column {j}")));
            }
            row_labels.push(label);
            values.extend(row);
        }
        let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, label) in row_labels.iter().enumerate() {
            by_label.entry(label.as_str()).or_default().push(i);
        }
        let labels: Vec<String> = by_label.keys().map(|l| l.to_string()).collect();
        let strata_units: Vec<Vec<usize>> = by_label.into_values().collect();
        let mut unit_stratum = vec![0usize; row_labels.len()];
        for (h, units) in strata_units.iter().enumerate() {
            for &u in units {
                unit_stratum[u] = h;
            }
        }
        Ok(FunctionalPopulation { grid, values, labels, strata_units, unit_stratum })
    }

    pub fn grid(&self) -> &TimeGrid<S> {
        &self.grid
    }

    pub fn n_units(&self) -> usize {
        self.unit_stratum.len()
    }

    pub fn n_strata(&self) -> usize {
        self.strata_units.len()
    }

    pub fn strata_sizes(&self) -> Vec<usize> {
        self.strata_units.iter().map(|u| u.len()).collect()
    }

    pub fn stratum_label(&self, h: usize) -> &str {
        &self.labels[h]
    }

    pub fn stratum_units(&self, h: usize) -> &[usize] {
        &self.strata_units[h]
    }

    pub fn unit_stratum(&self, unit: usize) -> usize {
        self.unit_stratum[unit]
    }

    pub fn value(&self, unit: usize, t_idx: usize) -> &S {
        &self.values[unit * self.grid.len() + t_idx]
    }

    pub fn unit_curve(&self, unit: usize) -> &[S] {
        let w = self.grid.len();
        &self.values[unit * w..(unit + 1) * w]
    }

    /// Pointwise average over all units.
    pub fn population_mean(&self) -> CurveSeries<S> {
        let w = self.grid.len();
        let n = S::from_count(self.n_units());
        let mut acc = vec![S::zero(); w];
        for unit in 0..self.n_units() {
            for (a, v) in acc.iter_mut().zip(self.unit_curve(unit)) {
                *a += v.clone();
            }
        }
        let values = acc.into_iter().map(|a| a / n.clone()).collect();
        CurveSeries { grid: self.grid.clone(), values }
    }

    /// Pointwise average over one stratum.
    pub fn stratum_mean(&self, h: usize) -> Result<CurveSeries<S>> {
        let units = self.checked_stratum(h)?;
        let w = self.grid.len();
        let n = S::from_count(units.len());
        let mut acc = vec![S::zero(); w];
        for &unit in units {
            for (a, v) in acc.iter_mut().zip(self.unit_curve(unit)) {
                *a += v.clone();
            }
        }
        let values = acc.into_iter().map(|a| a / n.clone()).collect();
        Ok(CurveSeries { grid: self.grid.clone(), values })
    }

    /// Covariance `gamma_h(t, t')` with divisor `N_h - 1`.
    pub fn stratum_covariance(&self, h: usize, t_idx: usize, u_idx: usize) -> Result<S> {
        let units = self.checked_stratum(h)?;
        if units.len() < 2 {
            return Err(Error::UndefinedMoment(format!(
                "stratum {h} has a single unit; covariance needs at least two"
            )));
        }
        let n = S::from_count(units.len());
        let mut mean_t = S::zero();
        let mut mean_u = S::zero();
        for &unit in units {
            mean_t += self.value(unit, t_idx).clone();
            mean_u += self.value(unit, u_idx).clone();
        }
        mean_t /= n.clone();
        mean_u /= n.clone();
        let mut acc = S::zero();
        for &unit in units {
            let dt = self.value(unit, t_idx).clone() - mean_t.clone();
            let du = self.value(unit, u_idx).clone() - mean_u.clone();
            acc += dt * du;
        }
        Ok(acc / (n - S::one()))
    }

    /// Full covariance surface of a stratum as a row-major `G x G` matrix.
    pub fn stratum_cov_matrix(&self, h: usize) -> Result<Vec<S>> {
        let units = self.checked_stratum(h)?;
        if units.len() < 2 {
            return Err(Error::UndefinedMoment(format!(
                "stratum {h} has a single unit; covariance needs at least two"
            )));
        }
        let w = self.grid.len();
        let mean = self.stratum_mean(h)?;
        let centered: Vec<Vec<S>> = units
            .iter()
            .map(|&unit| {
                self.unit_curve(unit)
                    .iter()
                    .zip(mean.values())
                    .map(|(v, m)| v.clone() - m.clone())
                    .collect()
            })
            .collect();
        let denom = S::from_count(units.len() - 1);
        let mut out = vec![S::zero(); w * w];
        for i in 0..w {
            for j in i..w {
                let mut acc = S::zero();
                for c in &centered {
                    acc += c[i].clone() * c[j].clone();
                }
                let v = acc / denom.clone();
                out[i * w + j] = v.clone();
                out[j * w + i] = v;
            }
        }
        Ok(out)
    }

    /// Per-stratum variances `gamma_h(t, t)` at one grid point.
    pub fn stratum_variances_at(&self, t_idx: usize) -> Result<Vec<S>> {
        (0..self.n_strata()).map(|h| self.stratum_covariance(h, t_idx, t_idx)).collect()
    }

    fn checked_stratum(&self, h: usize) -> Result<&Vec<usize>> {
        self.strata_units
            .get(h)
            .ok_or_else(|| Error::Range(format!("stratum index {h} out of range")))
    }
}

impl<S: FloatScalar> FunctionalPopulation<S> {
    /// Average autocorrelation of a stratum at the given lag:
    /// the integral of `rho_h(t, t + lag)` for `t` in `[0, T - lag]`.
    pub fn avg_autocorrelation(&self, h: usize, lag: &S) -> Result<S> {
        let k = self.grid.whole_steps(lag, "autocorrelation lag")?;
        let g = self.grid.len();
        if k >= g {
            return Err(Error::Range(format!("lag {lag} must be smaller than the window")));
        }
        let units = self.checked_stratum(h)?;
        if units.len() < 2 {
            return Err(Error::UndefinedMoment(format!("stratum {h} needs at least two units")));
        }
        let mean = self.stratum_mean(h)?;
        let centered: Vec<Vec<S>> = units
            .iter()
            .map(|&unit| {
                self.unit_curve(unit)
                    .iter()
                    .zip(mean.values())
                    .map(|(v, m)| *v - *m)
                    .collect()
            })
            .collect();
        let var_at = |i: usize| -> S {
            let mut acc = S::zero();
            for c in &centered {
                acc = acc + c[i] * c[i];
            }
            acc
        };
        let cov_at = |i: usize, j: usize| -> S {
            let mut acc = S::zero();
            for c in &centered {
                acc = acc + c[i] * c[j];
            }
            acc
        };
        // The (N_h - 1) divisors cancel in the correlation.
        let mut rho = Vec::with_capacity(g - k);
        for i in 0..g - k {
            let v0 = var_at(i);
            let v1 = var_at(i + k);
            if v0 <= S::zero() || v1 <= S::zero() {
                return Err(Error::UndefinedCorrelation(format!(
                    "stratum {h} has zero variance at grid index {}",
                    if v0 <= S::zero() { i } else { i + k }
                )));
            }
            rho.push(cov_at(i, i + k) / (v0 * v1).sqrt());
        }
        // Trapezoid over the shortened window.
        let s = *self.grid.spacing();
        let mut acc = S::zero();
        for (i, r) in rho.iter().enumerate() {
            let w = if i == 0 || i == rho.len() - 1 { s * S::half() } else { s };
            acc = acc + w * *r;
        }
        Ok(acc)
    }
}

impl FunctionalPopulation<f64> {
    /// Read a population from CSV: header `stratum,t=<v1>,t=<v2>,...`, one
    /// unit per row.
    pub fn load_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Data(format!("population file not found: {}", path.display())));
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_path(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            .clone();
        if headers.len() < 3 || headers.get(0) != Some("stratum") {
            return Err(Error::Format(
                "header must be `stratum,t=<v1>,t=<v2>,...` with at least two time columns".into(),
            ));
        }
        let mut times = Vec::with_capacity(headers.len() - 1);
        for field in headers.iter().skip(1) {
            let t = field
                .strip_prefix("t=")
                .ok_or_else(|| Error::Format(format!("time column `{field}` must look like `t=<value>`")))?;
            let v: f64 = t
                .parse()
                .map_err(|_| Error::Format(format!("unparsable time value `{t}` in header")))?;
            times.push(v);
        }
        let grid = TimeGrid::new(times)?;
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Format(format!("row {}: {e}", i + 1)))?;
            let label = record.get(0).unwrap_or_default().to_string();
            if label.is_empty() {
                return Err(Error::Format(format!("row {}: empty stratum label", i + 1)));
            }
            let mut values = Vec::with_capacity(grid.len());
            for field in record.iter().skip(1) {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Format(format!("row {}: unparsable value `{field}`", i + 1)))?;
                values.push(v);
            }
            rows.push((label, values));
        }
        Self::from_rows(grid, rows)
    }

    /// Write the CSV form read back by [`FunctionalPopulation::load_csv`].
    /// Values round-trip bit-identically.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(out, "stratum")?;
        for t in self.grid.points() {
            write!(out, ",t={t}")?;
        }
        writeln!(out)?;
        for unit in 0..self.n_units() {
            write!(out, "{}", self.labels[self.unit_stratum[unit]])?;
            for v in self.unit_curve(unit) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use num_rational::BigRational;

    fn grid(spacing: f64, len: usize) -> TimeGrid<f64> {
        TimeGrid::uniform(spacing, len).unwrap()
    }

    fn pop_from(labels_rows: Vec<(&str, Vec<f64>)>, spacing: f64) -> FunctionalPopulation<f64> {
        let len = labels_rows[0].1.len();
        let rows = labels_rows.into_iter().map(|(l, r)| (l.to_string(), r)).collect();
        FunctionalPopulation::from_rows(grid(spacing, len), rows).unwrap()
    }

    #[test]
    fn grid_requires_uniform_spacing() {
        assert!(TimeGrid::new(vec![0.0, 0.5, 1.0]).is_ok());
        assert!(TimeGrid::new(vec![0.0, 0.5, 1.2]).is_err());
        assert!(TimeGrid::new(vec![0.1, 0.6, 1.1]).is_err());
        assert!(TimeGrid::new(vec![0.0, -0.5, -1.0]).is_err());
    }

    #[test]
    fn population_mean_of_opposite_curves_is_zero() {
        let g = grid(0.1, 32);
        let sin: Vec<f64> = g.points().iter().map(|t| t.sin()).collect();
        let neg: Vec<f64> = sin.iter().map(|v| -v).collect();
        let pop = FunctionalPopulation::from_rows(
            g,
            vec![("a".into(), sin), ("a".into(), neg)],
        )
        .unwrap();
        for v in pop.population_mean().values() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn population_mean_single_unit_is_identity() {
        let pop = pop_from(vec![("a", vec![1.0, 2.0, 3.0])], 1.0);
        assert_eq!(pop.population_mean().values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn population_mean_of_constants() {
        let pop = pop_from(
            vec![
                ("a", vec![1.0, 1.0]),
                ("a", vec![2.0, 2.0]),
                ("b", vec![3.0, 3.0]),
                ("b", vec![6.0, 6.0]),
            ],
            1.0,
        );
        assert_eq!(pop.population_mean().values(), &[3.0, 3.0]);
    }

    #[test]
    fn stratum_mean_reductions() {
        let pop = pop_from(
            vec![("a", vec![0.0, 0.0]), ("a", vec![2.0, 2.0]), ("b", vec![5.0, 5.0])],
            1.0,
        );
        assert_eq!(pop.stratum_mean(0).unwrap().values(), &[1.0, 1.0]);
        assert_eq!(pop.stratum_mean(1).unwrap().values(), &[5.0, 5.0]);
        // H = 1 reduces to the population mean.
        let single = pop_from(vec![("a", vec![1.0, 3.0]), ("a", vec![3.0, 5.0])], 1.0);
        assert_eq!(single.stratum_mean(0).unwrap().values(), single.population_mean().values());
    }

    #[test]
    fn two_point_stratum_covariance() {
        let pop = pop_from(vec![("a", vec![0.0, 0.0]), ("a", vec![2.0, 2.0])], 1.0);
        for (t, u) in [(0, 0), (0, 1), (1, 1)] {
            assert_eq!(pop.stratum_covariance(0, t, u).unwrap(), 2.0);
        }
    }

    #[test]
    fn identical_curves_have_zero_covariance() {
        let pop = pop_from(vec![("a", vec![4.0, 7.0]), ("a", vec![4.0, 7.0])], 1.0);
        assert_eq!(pop.stratum_covariance(0, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn covariance_requires_two_units() {
        let pop = pop_from(vec![("a", vec![1.0, 2.0]), ("b", vec![1.0, 2.0])], 1.0);
        assert!(matches!(
            pop.stratum_covariance(0, 0, 0),
            Err(Error::UndefinedMoment(_))
        ));
    }

    /// Independent one-pass moment formula as an oracle for the two-pass
    /// covariance: E[XY] - E[X]E[Y], rescaled to the N-1 divisor.
    #[test]
    fn covariance_matches_one_pass_oracle() {
        let mut rows = Vec::new();
        let mut state = 9u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..17 {
            rows.push(("a", (0..5).map(|_| next() * 3.0 - 1.0).collect::<Vec<f64>>()));
        }
        let n = rows.len() as f64;
        let pop = pop_from(rows.clone(), 1.0);
        for t in 0..5 {
            for u in 0..5 {
                let sx: f64 = rows.iter().map(|r| r.1[t]).sum();
                let sy: f64 = rows.iter().map(|r| r.1[u]).sum();
                let sxy: f64 = rows.iter().map(|r| r.1[t] * r.1[u]).sum();
                let oracle = (sxy - sx * sy / n) / (n - 1.0);
                assert_abs_diff_eq!(pop.stratum_covariance(0, t, u).unwrap(), oracle, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mixing_identity_and_cauchy_schwarz() {
        let pop = pop_from(
            vec![
                ("a", vec![1.0, 4.0, 2.0]),
                ("a", vec![0.0, 1.0, 5.0]),
                ("a", vec![2.5, 3.0, 1.0]),
                ("b", vec![7.0, 2.0, 0.5]),
                ("b", vec![6.0, 8.0, 1.5]),
            ],
            0.5,
        );
        let sizes = pop.strata_sizes();
        let n = pop.n_units() as f64;
        let mean = pop.population_mean();
        for i in 0..3 {
            let mixed: f64 = (0..pop.n_strata())
                .map(|h| sizes[h] as f64 / n * pop.stratum_mean(h).unwrap().value(i))
                .sum();
            assert_abs_diff_eq!(mixed, *mean.value(i), epsilon = 1e-12);
        }
        for h in 0..pop.n_strata() {
            for t in 0..3 {
                for u in 0..3 {
                    let c = pop.stratum_covariance(h, t, u).unwrap();
                    let c_sym = pop.stratum_covariance(h, u, t).unwrap();
                    assert_abs_diff_eq!(c, c_sym, epsilon = 1e-14);
                    let vt = pop.stratum_covariance(h, t, t).unwrap();
                    let vu = pop.stratum_covariance(h, u, u).unwrap();
                    assert!(vt >= 0.0);
                    assert!(c * c <= vt * vu + 1e-12);
                }
            }
        }
    }

    #[test]
    fn integrate_constant_and_ramp() {
        let g = grid(0.5, 5); // T = 2
        let c = CurveSeries::new(g.clone(), vec![3.0; 5]).unwrap();
        assert_abs_diff_eq!(c.integrate(), 6.0, epsilon = 1e-12);
        // Linear ramp 0 -> 1 on [0, 1]: trapezoid is exact.
        let g1 = grid(0.25, 5);
        let ramp = CurveSeries::new(g1.clone(), g1.points().to_vec()).unwrap();
        assert_abs_diff_eq!(ramp.integrate(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn integrate_sine_against_antiderivative() {
        let n = 1000usize;
        let spacing = std::f64::consts::PI / (n - 1) as f64;
        let g = grid(spacing, n);
        let sin = CurveSeries::new(g.clone(), g.points().iter().map(|t| t.sin()).collect()).unwrap();
        assert_abs_diff_eq!(sin.integrate(), 2.0, epsilon = 1e-5);
    }

    #[test]
    fn integrate_is_exact_in_rationals() {
        let g: TimeGrid<BigRational> =
            TimeGrid::uniform(BigRational::count_ratio(1, 2), 5).unwrap();
        let series =
            CurveSeries::new(g.clone(), vec![BigRational::from_count(3); 5]).unwrap();
        assert_eq!(series.integrate(), BigRational::from_count(6));
    }

    #[test]
    fn constant_in_time_curves_have_unit_autocorrelation() {
        let pop = pop_from(
            vec![("a", vec![1.0; 8]), ("a", vec![4.0; 8]), ("a", vec![-2.0; 8])],
            0.5,
        );
        // T = 3.5, lag 1.0 -> integral of rho = T - lag = 2.5.
        assert_abs_diff_eq!(pop.avg_autocorrelation(0, &1.0).unwrap(), 2.5, epsilon = 1e-12);
        // Lag 0 -> T.
        assert_abs_diff_eq!(pop.avg_autocorrelation(0, &0.0).unwrap(), 3.5, epsilon = 1e-12);
    }

    #[test]
    fn autocorrelation_rejects_zero_variance() {
        let pop = pop_from(vec![("a", vec![1.0; 4]), ("a", vec![1.0; 4])], 1.0);
        assert!(matches!(
            pop.avg_autocorrelation(0, &1.0),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn strata_are_counted_from_labels() {
        let pop = pop_from(
            vec![("a", vec![1.0, 2.0]), ("a", vec![2.0, 3.0]), ("b", vec![0.0, 1.0])],
            0.5,
        );
        assert_eq!(pop.n_units(), 3);
        assert_eq!(pop.n_strata(), 2);
        assert_eq!(pop.strata_sizes(), vec![2, 1]);
        assert_eq!(pop.grid().spacing(), &0.5);
    }

    #[test]
    fn csv_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pop.csv");
        let pop = pop_from(
            vec![
                ("res", vec![0.1, 0.30000000000000004, 2.5e-17]),
                ("sme", vec![1.0 / 3.0, -7.25, 1e300]),
                ("res", vec![4.0, 5.0, 6.0]),
            ],
            0.5,
        );
        pop.save_csv(&path).unwrap();
        let back = FunctionalPopulation::load_csv(&path).unwrap();
        assert_eq!(back.n_units(), 3);
        assert_eq!(back.strata_sizes(), pop.strata_sizes());
        for u in 0..3 {
            assert_eq!(back.unit_curve(u), pop.unit_curve(u), "unit {u} must round-trip exactly");
        }
    }

    #[test]
    fn ragged_csv_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "stratum,t=0,t=1\na,1.0,2.0\nb,3.0\n").unwrap();
        assert!(matches!(FunctionalPopulation::load_csv(&path), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_value_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.csv");
        std::fs::write(&path, "stratum,t=0,t=1\na,1.0,NaN\na,1.0,2.0\n").unwrap();
        assert!(matches!(FunctionalPopulation::load_csv(&path), Err(Error::Data(_))));
    }

    #[test]
    fn missing_file_is_a_data_error() {
        assert!(matches!(
            FunctionalPopulation::load_csv(Path::new("/nonexistent/p.csv")),
            Err(Error::Data(_))
        ));
    }
}
