//! Seeded Monte Carlo replications over scenario grids, ISE aggregation and
//! design comparison.
//!
//! Replications are embarrassingly parallel; every replication derives its
//! own generator streams from `(master seed, cell, replication)`, and
//! aggregation is an ordered reduction over the replication index, so
//! reports are byte-identical for any worker count.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{
    adaptive_alloc, sample_variances, transition_bounds, AllocationKind, AllocationPolicy,
};
use crate::analytics::{cov_full, cov_partial, mise, var_ise_full_asym, var_ise_partial_asym};
use crate::designs::{
    apply_pattern, discard_count, realize_path, snap_taus, validate_design, AllocationTrace,
    DesignKind, DesignSpec, RotationPattern, SamplePath, ValidatedDesign,
};
use crate::error::{Error, Result};
use crate::estimators::{composite_series, ht_series, ise, EstimatorSeries};
use crate::population::{CurveSeries, FunctionalPopulation};
use crate::rng::{derive_key, ReplicationStreams};
use crate::scalar::Scalar;

const CELL_TAG: u64 = 0x10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    Ht,
    Composite,
}

/// Design shape shared by every cell of a scenario; the replacement rate
/// comes from the cell's alpha.
#[derive(Debug, Clone)]
pub struct ScenarioDesign {
    pub kind: DesignKind,
    pub taus_hours: Vec<f64>,
    pub density: Option<Vec<f64>>,
    /// Explicit rotation pattern (conventional designs); generated cyclically
    /// when absent.
    pub pattern: Option<RotationPattern>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub design: ScenarioDesign,
    pub allocation: AllocationPolicy,
    pub estimator: EstimatorChoice,
    pub alpha_grid: Vec<f64>,
    /// Composite weight grid; ignored for HT.
    pub q_grid: Vec<f64>,
    /// Composite lag grid in hours; ignored for HT.
    pub delta_grid: Vec<f64>,
    pub replications: usize,
    pub master_seed: u64,
    /// Share the replication randomness across grid cells.
    pub common_random_numbers: bool,
    /// Grid-index pairs at which the empirical covariance of the estimator
    /// is recorded.
    pub cov_pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_hours: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McStandardErrors {
    /// Standard error of the mean ISE.
    pub mean: f64,
    /// Standard error of the ISE variance (fourth-moment formula).
    pub var: f64,
    /// Delta-method standard error of the ISE standard deviation.
    pub sd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFlags {
    /// Total degenerate-overlap fallbacks across replications.
    pub degenerate_overlap: u64,
    /// The design rounded some `alpha * n` discard counts.
    pub rounded_discards: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyticBlock {
    pub mise: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub var_ise: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovSample {
    pub t_hours: f64,
    pub u_hours: f64,
    /// Sample covariance of the estimator across replications.
    pub value: f64,
    /// Large-sample standard error of that covariance.
    pub se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointStat {
    pub t_hours: f64,
    /// Mean of the estimator at `t` across replications.
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub scenario_id: String,
    pub params: CellParams,
    /// Monte Carlo mean ISE.
    pub mise: f64,
    pub sd_ise: f64,
    pub mc_se: McStandardErrors,
    pub flags: CellFlags,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic: Option<AnalyticBlock>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub empirical_cov: Vec<CovSample>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub point_stats: Vec<PointStat>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationReport {
    pub schema_version: u32,
    pub scenario_id: String,
    pub design_kind: String,
    pub allocation: String,
    pub estimator: String,
    pub replications: usize,
    pub master_seed: u64,
    pub common_random_numbers: bool,
    pub spacing_hours: f64,
    pub duration_hours: f64,
    pub cells: Vec<CellReport>,
}

impl Scenario {
    fn validate(&self, pop: &FunctionalPopulation<f64>) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::Validation("at least one replication required".into()));
        }
        if self.alpha_grid.is_empty() {
            return Err(Error::Validation("alpha grid is empty".into()));
        }
        if self.alpha_grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Validation("alpha values must lie in [0, 1]".into()));
        }
        if self.estimator == EstimatorChoice::Composite {
            if self.q_grid.is_empty() || self.delta_grid.is_empty() {
                return Err(Error::Validation("composite scenarios need Q and delta grids".into()));
            }
            if self.q_grid.iter().any(|q| !(0.0..=1.0).contains(q)) {
                return Err(Error::Validation("Q values must lie in [0, 1]".into()));
            }
            if !matches!(self.design.kind, DesignKind::PartialReplacement | DesignKind::FixedPanel) {
                return Err(Error::Validation(
                    "the composite estimator needs a partial replacement design".into(),
                ));
            }
        }
        let g = pop.grid().len();
        for &(t, u) in &self.cov_pairs {
            if t >= g || u >= g {
                return Err(Error::Validation(format!("covariance pair ({t}, {u}) outside the grid")));
            }
        }
        self.allocation.validate(pop.n_strata(), pop.n_units())?;
        Ok(())
    }

    /// The scenario's parameter cells, in emission order.
    pub fn cells(&self) -> Vec<CellParams> {
        let mut out = Vec::new();
        match self.estimator {
            EstimatorChoice::Ht => {
                for &alpha in &self.alpha_grid {
                    out.push(CellParams { alpha, q: None, delta_hours: None });
                }
            }
            EstimatorChoice::Composite => {
                for &delta in &self.delta_grid {
                    for &alpha in &self.alpha_grid {
                        for &q in &self.q_grid {
                            out.push(CellParams { alpha, q: Some(q), delta_hours: Some(delta) });
                        }
                    }
                }
            }
        }
        out
    }
}

struct RepOutcome {
    ise: f64,
    degenerate: u64,
    at_points: Vec<f64>,
}

/// Run every cell of a scenario against a population.
pub fn run_scenario(
    scenario: &Scenario,
    pop: &FunctionalPopulation<f64>,
) -> Result<SimulationReport> {
    scenario.validate(pop)?;
    let truth = pop.population_mean();
    let cells = scenario.cells();
    let mut reports = Vec::with_capacity(cells.len());
    for (ci, params) in cells.iter().enumerate() {
        reports.push(run_cell(scenario, pop, &truth, ci, params)?);
    }
    Ok(SimulationReport {
        schema_version: 1,
        scenario_id: scenario.id.clone(),
        design_kind: scenario.design.kind.as_str().to_string(),
        allocation: format!("{:?}", scenario.allocation.kind).to_lowercase(),
        estimator: match scenario.estimator {
            EstimatorChoice::Ht => "ht".into(),
            EstimatorChoice::Composite => "composite".into(),
        },
        replications: scenario.replications,
        master_seed: scenario.master_seed,
        common_random_numbers: scenario.common_random_numbers,
        spacing_hours: pop.grid().spacing().to_real(),
        duration_hours: pop.grid().duration().to_real(),
        cells: reports,
    })
}

fn cell_id(base: &str, params: &CellParams) -> String {
    let mut id = format!("{base}/alpha={}", params.alpha);
    if let Some(q) = params.q {
        id.push_str(&format!("/q={q}"));
    }
    if let Some(d) = params.delta_hours {
        id.push_str(&format!("/delta={d}"));
    }
    id
}

fn run_cell(
    scenario: &Scenario,
    pop: &FunctionalPopulation<f64>,
    truth: &CurveSeries<f64>,
    cell_index: usize,
    params: &CellParams,
) -> Result<CellReport> {
    let h_count = pop.n_strata();
    let strata_sizes = pop.strata_sizes();
    let alpha = vec![params.alpha; h_count];
    let tau_idx = snap_taus(pop.grid(), &scenario.design.taus_hours)?;
    let trace = crate::allocation::plan_trace(
        &scenario.allocation,
        pop,
        scenario.design.kind,
        &alpha,
        &tau_idx,
    )?;
    let pattern = match scenario.design.kind {
        DesignKind::ConventionalRotation => Some(match &scenario.design.pattern {
            Some(p) => p.clone(),
            None => cyclic_pattern(&strata_sizes, &trace, &alpha),
        }),
        _ => None,
    };
    let spec = DesignSpec {
        kind: scenario.design.kind,
        taus_hours: scenario.design.taus_hours.clone(),
        alpha: alpha.clone(),
        density: scenario.design.density.clone(),
        pattern,
    };
    let vd = validate_design(&spec, &trace, pop)?;

    // Analytic benchmarks exist for deterministic-size SRSWOR designs.
    let analytic = if scenario.estimator == EstimatorChoice::Ht
        && scenario.allocation.kind != AllocationKind::Adaptive
    {
        match vd.kind() {
            DesignKind::FullReplacement => {
                let k = cov_full(pop, &vd)?;
                let var_ise = if vd.replacements() >= 1 {
                    Some(var_ise_full_asym(pop, &vd)?)
                } else {
                    None
                };
                Some(AnalyticBlock { mise: mise(&k), var_ise })
            }
            DesignKind::PartialReplacement | DesignKind::FixedPanel => {
                let k = cov_partial(pop, &vd)?;
                Some(AnalyticBlock { mise: mise(&k), var_ise: Some(var_ise_partial_asym(pop, &vd)?) })
            }
            DesignKind::ConventionalRotation => None,
        }
    } else {
        None
    };

    // Distinct grid indices needed for covariance pairs and point stats.
    let mut indices: Vec<usize> = scenario
        .cov_pairs
        .iter()
        .flat_map(|&(t, u)| [t, u])
        .collect();
    indices.sort_unstable();
    indices.dedup();

    let cell_master = if scenario.common_random_numbers {
        scenario.master_seed
    } else {
        derive_key(scenario.master_seed, &[CELL_TAG, cell_index as u64])
    };

    let outcomes: Result<Vec<RepOutcome>> = (0..scenario.replications)
        .into_par_iter()
        .map(|rep| {
            run_replication(scenario, pop, truth, &vd, &trace, params, cell_master, rep, &indices)
                .map_err(|e| {
                    Error::Validation(format!("replication {rep} failed: {e}"))
                })
        })
        .collect();
    let outcomes = outcomes?;

    // Ordered aggregation (replication index order is fixed by construction).
    let r = outcomes.len() as f64;
    let mean = outcomes.iter().map(|o| o.ise).sum::<f64>() / r;
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for o in &outcomes {
        let d = o.ise - mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    let var = if outcomes.len() > 1 { m2 / (r - 1.0) } else { 0.0 };
    let sd = var.sqrt();
    let se_mean = sd / r.sqrt();
    let m4 = m4 / r;
    let se_var = if outcomes.len() > 3 {
        ((m4 - var * var * (r - 3.0) / (r - 1.0)) / r).max(0.0).sqrt()
    } else {
        0.0
    };
    let se_sd = if sd > 0.0 { se_var / (2.0 * sd) } else { 0.0 };
    let degenerate: u64 = outcomes.iter().map(|o| o.degenerate).sum();

    let lookup = |idx: usize| indices.binary_search(&idx).expect("collected index");
    let point_stats: Vec<PointStat> = indices
        .iter()
        .enumerate()
        .map(|(slot, &idx)| {
            let xs: Vec<f64> = outcomes.iter().map(|o| o.at_points[slot]).collect();
            let mean = xs.iter().sum::<f64>() / r;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                / (r - 1.0).max(1.0);
            PointStat { t_hours: pop.grid().point(idx).to_real(), mean, sd: var.sqrt() }
        })
        .collect();
    let empirical_cov: Vec<CovSample> = scenario
        .cov_pairs
        .iter()
        .map(|&(t, u)| {
            let xs: Vec<f64> = outcomes.iter().map(|o| o.at_points[lookup(t)]).collect();
            let ys: Vec<f64> = outcomes.iter().map(|o| o.at_points[lookup(u)]).collect();
            let value = empirical_cov(&xs, &ys);
            let vx = empirical_cov(&xs, &xs);
            let vy = empirical_cov(&ys, &ys);
            // Large-sample variance of a sample covariance.
            let se = ((vx * vy + value * value) / r).sqrt();
            CovSample {
                t_hours: pop.grid().point(t).to_real(),
                u_hours: pop.grid().point(u).to_real(),
                value,
                se,
            }
        })
        .collect();

    Ok(CellReport {
        scenario_id: cell_id(&scenario.id, params),
        params: params.clone(),
        mise: mean,
        sd_ise: sd,
        mc_se: McStandardErrors { mean: se_mean, var: se_var, sd: se_sd },
        flags: CellFlags {
            degenerate_overlap: degenerate,
            rounded_discards: !vd.rounding_events().is_empty(),
        },
        analytic,
        empirical_cov,
        point_stats,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_replication(
    scenario: &Scenario,
    pop: &FunctionalPopulation<f64>,
    truth: &CurveSeries<f64>,
    vd: &ValidatedDesign,
    trace: &AllocationTrace,
    params: &CellParams,
    cell_master: u64,
    rep: usize,
    indices: &[usize],
) -> Result<RepOutcome> {
    let streams = ReplicationStreams::new(cell_master, rep as u64);
    let path = realize(scenario, pop, vd, trace, &streams)?;
    let est: EstimatorSeries<f64> = match scenario.estimator {
        EstimatorChoice::Ht => ht_series(pop, vd, &path)?,
        EstimatorChoice::Composite => composite_series(
            pop,
            vd,
            &path,
            &params.q.expect("composite cell has q"),
            &params.delta_hours.expect("composite cell has delta"),
        )?,
    };
    let ise_value = ise(&est.series, truth)?;
    Ok(RepOutcome {
        ise: ise_value,
        degenerate: est.degenerate_times.len() as u64,
        at_points: indices.iter().map(|&i| *est.series.value(i)).collect(),
    })
}

/// Realize one sample path according to the design kind and allocation.
fn realize(
    scenario: &Scenario,
    pop: &FunctionalPopulation<f64>,
    vd: &ValidatedDesign,
    trace: &AllocationTrace,
    streams: &ReplicationStreams,
) -> Result<SamplePath> {
    match vd.kind() {
        DesignKind::ConventionalRotation => realize_conventional(scenario, pop, vd, trace, streams),
        _ => match scenario.allocation.kind {
            AllocationKind::Proportional | AllocationKind::Neyman => {
                realize_path(vd, streams, |r, _, _| Ok(trace.sizes[r].clone()))
            }
            AllocationKind::Adaptive => {
                let floor = scenario.allocation.floor;
                let total = scenario.allocation.total;
                realize_path(vd, streams, |r, state, bounds| {
                    let last_obs = vd.tau_indices()[r - 1] - 1;
                    let lo: Vec<usize> =
                        bounds.lo.iter().map(|&l| l.max(floor)).collect();
                    Ok(adaptive_alloc(pop, state, last_obs, total, &lo, &bounds.hi)?.sizes)
                })
            }
        },
    }
}

/// Conventional rotation: one label permutation per stratum, a rotation
/// pattern fixed up front, and (under adaptive allocation) a one-shot size
/// adjustment at the first replacement based on the first-epoch data.
fn realize_conventional(
    scenario: &Scenario,
    pop: &FunctionalPopulation<f64>,
    vd: &ValidatedDesign,
    trace: &AllocationTrace,
    streams: &ReplicationStreams,
) -> Result<SamplePath> {
    use rand::seq::SliceRandom;
    let strata_sizes = pop.strata_sizes();
    let permutations: Vec<Vec<u32>> = (0..pop.n_strata())
        .map(|h| {
            let mut perm: Vec<u32> = (0..strata_sizes[h] as u32).collect();
            perm.shuffle(&mut streams.permutation(h));
            perm
        })
        .collect();

    let pattern = if scenario.allocation.kind == AllocationKind::Adaptive
        && vd.replacements() >= 1
    {
        // Observe the first-epoch sample on [0, tau_1), size the panel as
        // n_h proportional to N_h (integral of the estimated variance)^(1/2),
        // then freeze.
        let first_slots: Vec<Vec<u32>> =
            (0..pop.n_strata()).map(|h| (0..trace.sizes[0][h] as u32).collect()).collect();
        let state0 = crate::designs::SampleState {
            per_stratum: first_slots
                .iter()
                .enumerate()
                .map(|(h, slots)| {
                    let mut units: Vec<u32> =
                        slots.iter().map(|&s| permutations[h][s as usize]).collect();
                    units.sort_unstable();
                    units
                })
                .collect(),
        };
        let spacing = pop.grid().spacing().to_real();
        let last = vd.tau_indices()[0] - 1;
        let mut integrated = vec![0.0f64; pop.n_strata()];
        for i in 0..=last {
            let w = if i == 0 || i == last { 0.5 * spacing } else { spacing };
            for (h, acc) in integrated.iter_mut().enumerate() {
                *acc += w * sample_variances(pop, &state0, i)?[h];
            }
        }
        let weights: Vec<f64> = strata_sizes
            .iter()
            .zip(&integrated)
            .map(|(&nh, &v)| nh as f64 * v.max(0.0).sqrt())
            .collect();
        let alpha = vd.alpha();
        let current = &trace.sizes[0];
        let (lo0, hi0) = transition_bounds(
            DesignKind::ConventionalRotation,
            alpha,
            &strata_sizes,
            current,
            scenario.allocation.floor,
        );
        // Keep the frozen sizes transition-feasible for every later epoch.
        let hi: Vec<usize> = hi0
            .iter()
            .enumerate()
            .map(|(h, &cap)| cap.min((strata_sizes[h] as f64 / (1.0 + alpha[h])).floor() as usize))
            .collect();
        let lo: Vec<usize> = lo0.iter().zip(&hi).map(|(&l, &h)| l.min(h)).collect();
        let frozen = crate::allocation::apportion(&weights, scenario.allocation.total, &lo, &hi)?;
        let mut sizes = vec![trace.sizes[0].clone()];
        for _ in 0..vd.replacements() {
            sizes.push(frozen.clone());
        }
        let discards: Vec<Vec<usize>> = (1..sizes.len())
            .map(|r| {
                (0..pop.n_strata())
                    .map(|h| discard_count(alpha[h], sizes[r - 1][h]))
                    .collect()
            })
            .collect();
        RotationPattern::cyclic(&strata_sizes, &sizes, &discards)
    } else {
        vd.pattern()
            .cloned()
            .ok_or_else(|| Error::Validation("conventional design lost its pattern".into()))?
    };
    Ok(apply_pattern(vd, &pattern, &permutations))
}

/// Cyclic rotation pattern matching a planned trace.
pub fn cyclic_pattern(
    strata_sizes: &[usize],
    trace: &AllocationTrace,
    alpha: &[f64],
) -> RotationPattern {
    let discards: Vec<Vec<usize>> = (1..trace.sizes.len())
        .map(|r| {
            (0..strata_sizes.len())
                .map(|h| discard_count(alpha[h], trace.sizes[r - 1][h]))
                .collect()
        })
        .collect();
    RotationPattern::cyclic(strata_sizes, &trace.sizes, &discards)
}

/// Sample covariance across replications.
pub fn empirical_cov(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "empirical covariance needs at least two replications");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1.0)
}

/// Comparison of several reports over their shared parameter cells.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub reports: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub params: CellParams,
    pub metric: String,
    /// One value per compared report.
    pub values: Vec<f64>,
    /// Value relative to the first report.
    pub ratios: Vec<f64>,
}

/// Compare reports cell by cell. All reports must share the population grid.
pub fn compare_reports(reports: &[SimulationReport]) -> Result<ComparisonTable> {
    if reports.len() < 2 {
        return Err(Error::Validation("comparison needs at least two reports".into()));
    }
    let base = &reports[0];
    for r in &reports[1..] {
        if (r.spacing_hours - base.spacing_hours).abs() > 1e-12
            || (r.duration_hours - base.duration_hours).abs() > 1e-12
        {
            return Err(Error::Validation("reports disagree on the population grid".into()));
        }
    }
    let mut rows = Vec::new();
    for cell in &base.cells {
        let mut mise_values = vec![cell.mise];
        let mut sd_values = vec![cell.sd_ise];
        let mut complete = true;
        for r in &reports[1..] {
            match r.cells.iter().find(|c| c.params == cell.params) {
                Some(c) => {
                    mise_values.push(c.mise);
                    sd_values.push(c.sd_ise);
                }
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if !complete {
            continue;
        }
        for (metric, values) in [("mise", mise_values), ("sd_ise", sd_values)] {
            let ratios = values.iter().map(|v| v / values[0]).collect();
            rows.push(ComparisonRow {
                params: cell.params.clone(),
                metric: metric.into(),
                values,
                ratios,
            });
        }
    }
    Ok(ComparisonTable {
        reports: reports.iter().map(|r| r.scenario_id.clone()).collect(),
        rows,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl ComparisonTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(out, "alpha,q,delta_hours,metric")?;
        for name in &self.reports {
            write!(out, ",{name}")?;
        }
        for name in &self.reports {
            write!(out, ",ratio:{name}")?;
        }
        writeln!(out)?;
        for row in &self.rows {
            write!(
                out,
                "{},{},{},{}",
                row.params.alpha,
                fmt_opt(row.params.q),
                fmt_opt(row.params.delta_hours),
                row.metric
            )?;
            for v in &row.values {
                write!(out, ",{v}")?;
            }
            for v in &row.ratios {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

impl SimulationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Long-format CSV: one row per cell and metric.
    pub fn write_long_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "scenario_id,alpha,q,delta_hours,metric,value")?;
        for cell in &self.cells {
            let mut emit = |metric: &str, value: f64| -> std::io::Result<()> {
                writeln!(
                    out,
                    "{},{},{},{},{metric},{value}",
                    cell.scenario_id,
                    cell.params.alpha,
                    fmt_opt(cell.params.q),
                    fmt_opt(cell.params.delta_hours),
                )
            };
            emit("mise", cell.mise)?;
            emit("sd_ise", cell.sd_ise)?;
            emit("mc_se_mean", cell.mc_se.mean)?;
            emit("mc_se_sd", cell.mc_se.sd)?;
            emit("degenerate_overlap", cell.flags.degenerate_overlap as f64)?;
            if let Some(a) = &cell.analytic {
                emit("analytic_mise", a.mise)?;
                if let Some(v) = a.var_ise {
                    emit("analytic_var_ise", v)?;
                }
            }
        }
        Ok(())
    }

    /// Optimal `(alpha, Q)` and minimum MISE per composite lag `delta`.
    pub fn composite_optima(&self) -> Vec<(f64, f64, f64, f64)> {
        let mut deltas: Vec<f64> = self
            .cells
            .iter()
            .filter_map(|c| c.params.delta_hours)
            .collect();
        deltas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        deltas.dedup();
        deltas
            .into_iter()
            .filter_map(|delta| {
                self.cells
                    .iter()
                    .filter(|c| c.params.delta_hours == Some(delta))
                    .min_by(|a, b| a.mise.partial_cmp(&b.mise).unwrap())
                    .map(|c| (delta, c.params.alpha, c.params.q.unwrap_or(1.0), c.mise))
            })
            .collect()
    }

    pub fn write_composite_optima_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "delta_hours,alpha_opt,q_opt,min_mise")?;
        for (delta, alpha, q, best) in self.composite_optima() {
            writeln!(out, "{delta},{alpha},{q},{best}")?;
        }
        Ok(())
    }
}
