//! Acceptance suite: one test per criterion, each printing a pass line with
//! the measured quantities. Exact claims run in rational arithmetic; Monte
//! Carlo claims run against seeded replications with stated tolerances.

use std::time::Instant;

use num_rational::BigRational;
use rotasurv::allocation::{AllocationKind, AllocationPolicy};
use rotasurv::analytics::{
    cov_full, cov_partial, var_ise_corollary, var_ise_exact_small, EXACT_PATH_CAP,
};
use rotasurv::designs::{
    realize_path, validate_design, validate_design_on_grid, AllocationTrace, DesignKind,
    DesignSpec, SamplePath, ValidatedDesign,
};
use rotasurv::error::Error;
use rotasurv::estimators::{change_estimate, composite_series, ht_series, integral_estimate, ise};
use rotasurv::exact::{for_each_joint_path, for_each_stratum_path, SubsetChain};
use rotasurv::harness::{run_scenario, EstimatorChoice, Scenario, ScenarioDesign};
use rotasurv::population::{FunctionalPopulation, TimeGrid};
use rotasurv::rng::ReplicationStreams;
use rotasurv::scalar::Scalar;
use rotasurv::synth::{synth_population, MeanCurveSpec, SynthPopulationSpec, SynthStratumSpec};

type Q = BigRational;

fn qu(n: usize) -> Q {
    Q::from_count(n)
}

fn qr(n: usize, d: usize) -> Q {
    Q::count_ratio(n, d)
}

// ---------------------------------------------------------------------------
// Criterion 1: exhaustive-enumeration suite on tiny designs.
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_exhaustive_enumeration() {
    let start = Instant::now();

    // Two strata of 4 units, n_h = 2, m = 2 replacements, alpha = 1/2.
    let grid: TimeGrid<Q> = TimeGrid::uniform(qu(1), 13).unwrap();
    let rows: Vec<(String, Vec<Q>)> = [
        ("a", 1usize, 2usize),
        ("a", 4, 0),
        ("a", 2, 3),
        ("a", 6, 1),
        ("b", 3, 1),
        ("b", 0, 2),
        ("b", 5, 0),
        ("b", 2, 2),
    ]
    .iter()
    .map(|&(label, base, slope)| {
        (label.to_string(), (0..13).map(|t| qu(base) + qu(slope) * qu(t)).collect())
    })
    .collect();
    let pop: FunctionalPopulation<Q> = FunctionalPopulation::from_rows(grid.clone(), rows).unwrap();
    let spec = DesignSpec {
        kind: DesignKind::PartialReplacement,
        taus_hours: vec![4.0, 8.0],
        alpha: vec![0.5, 0.5],
        density: None,
        pattern: None,
    };
    let trace = AllocationTrace::constant(vec![2, 2], 2);
    let vd = validate_design(&spec, &trace, &pop).unwrap();

    // Proposition 1: every 2-subset of each stratum has marginal probability
    // exactly 1/6 at every epoch, hence unit marginals are exactly n/N.
    for h in 0..2 {
        let mut by_epoch: Vec<std::collections::HashMap<u32, Q>> = vec![Default::default(); 3];
        for_each_stratum_path::<Q, _>(&vd, h, EXACT_PATH_CAP, |states, p| {
            for (r, &mask) in states.iter().enumerate() {
                *by_epoch[r].entry(mask).or_insert_with(|| qu(0)) += p.clone();
            }
        })
        .unwrap();
        for (r, dist) in by_epoch.iter().enumerate() {
            assert_eq!(dist.len(), 6, "stratum {h} epoch {r}: all 6 subsets reachable");
            for (mask, prob) in dist {
                assert_eq!(*prob, qr(1, 6), "stratum {h} epoch {r} subset {mask:#06b}");
            }
        }
        let chain = SubsetChain::<Q>::new(&vd, h, 1).unwrap();
        for r in 0..=2 {
            assert_eq!(chain.marginal(r)[1], qr(1, 2), "unit marginal at epoch {r}");
        }
    }

    // Exact unbiasedness of the HT, change and integral estimators over the
    // joint path space.
    let mean = pop.population_mean();
    let target_integral = mean.integrate();
    let (t_idx, u_idx) = (2usize, 10usize);
    let change_target = mean.value(u_idx).clone() - mean.value(t_idx).clone();
    let mut e_ht = vec![qu(0); 13];
    let mut e_int = qu(0);
    let mut e_change = qu(0);
    let mut mass = qu(0);
    for_each_joint_path::<Q, _>(&vd, 100_000_000, |path, p| {
        let est = ht_series(&pop, &vd, path).unwrap();
        for (acc, v) in e_ht.iter_mut().zip(est.series.values()) {
            *acc += p.clone() * v.clone();
        }
        e_int += p.clone() * integral_estimate(&est);
        e_change += p.clone() * change_estimate(&pop, &vd, path, t_idx, u_idx).unwrap();
        mass += p.clone();
    })
    .unwrap();
    assert_eq!(mass, qu(1), "path probabilities sum to one");
    assert_eq!(&e_ht[..], mean.values(), "HT estimator exactly unbiased");
    assert_eq!(e_int, target_integral, "integral estimator exactly unbiased");
    assert_eq!(e_change, change_target, "change estimator exactly unbiased");

    // Lemma-style retention probabilities against the enumerated
    // conditionals, at 1e-12 in floating point.
    let vd_f = {
        let grid_f: TimeGrid<f64> = TimeGrid::uniform(1.0, 13).unwrap();
        validate_design_on_grid(&spec, &trace, &grid_f, &[4, 4]).unwrap()
    };
    for h in 0..2 {
        let chain = SubsetChain::<Q>::new(&vd, h, 1).unwrap();
        for e_a in 0..=2usize {
            for e_b in e_a..=2 {
                let joint = chain.joint(e_a, e_b);
                let p_in = (joint[1][1].clone() / chain.marginal(e_a)[1].clone()).to_real();
                let p_out = (joint[0][1].clone() / chain.marginal(e_a)[0].clone()).to_real();
                let (f_in, f_out) = vd_f.retention::<f64>(h, e_a, e_b);
                assert!(
                    (p_in - f_in).abs() <= 1e-12 && (p_out - f_out).abs() <= 1e-12,
                    "retention at epochs ({e_a}, {e_b}): ({p_in}, {p_out}) vs ({f_in}, {f_out})"
                );
            }
        }
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "runtime {elapsed:?} exceeds 5 s");
    println!(
        "criterion 1: PASS - exact SRSWOR marginals (1/6), exact HT/change/integral \
         unbiasedness, retention within 1e-12, in {elapsed:.2?}"
    );
}

// ---------------------------------------------------------------------------
// Shared synthetic populations for the Monte Carlo criteria.
// ---------------------------------------------------------------------------

fn pop_400_two_strata(seed: u64) -> FunctionalPopulation<f64> {
    synth_population(&SynthPopulationSpec {
        seed,
        spacing_hours: 0.5,
        duration_hours: 27.0,
        strata: vec![
            SynthStratumSpec {
                label: "a".into(),
                size: 200,
                mean: MeanCurveSpec { offset: 10.0, amplitude: 2.0, ..Default::default() },
                variance: 4.0,
                decay: 0.05,
            },
            SynthStratumSpec {
                label: "b".into(),
                size: 200,
                mean: MeanCurveSpec { offset: 5.0, amplitude: 1.0, ..Default::default() },
                variance: 1.0,
                decay: 0.05,
            },
        ],
    })
    .unwrap()
}

fn scenario_on(
    pop_id: &str,
    kind: DesignKind,
    taus: Vec<f64>,
    allocation: AllocationPolicy,
    alpha_grid: Vec<f64>,
    replications: usize,
    seed: u64,
    cov_pairs: Vec<(usize, usize)>,
) -> Scenario {
    Scenario {
        id: pop_id.into(),
        design: ScenarioDesign { kind, taus_hours: taus, density: None, pattern: None },
        allocation,
        estimator: EstimatorChoice::Ht,
        alpha_grid,
        q_grid: vec![],
        delta_grid: vec![],
        replications,
        master_seed: seed,
        common_random_numbers: true,
        cov_pairs,
    }
}

fn proportional(total: usize) -> AllocationPolicy {
    AllocationPolicy { kind: AllocationKind::Proportional, total, floor: 2 }
}

// ---------------------------------------------------------------------------
// Criterion 2: empirical covariance vs Theorems 1-2 at 25 pairs.
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_analytic_covariance() {
    let start = Instant::now();
    let pop = pop_400_two_strata(804_001);
    let taus: Vec<f64> = (1..=8).map(|r| 3.0 * r as f64).collect();
    let points = [2usize, 13, 24, 35, 46];
    let pairs: Vec<(usize, usize)> =
        points.iter().flat_map(|&t| points.iter().map(move |&u| (t, u))).collect();
    let r = 20_000usize;

    let mut worst_z = 0.0f64;
    for (kind, alpha) in [
        (DesignKind::PartialReplacement, 0.25f64),
        (DesignKind::FullReplacement, 0.0),
    ] {
        let scenario = scenario_on(
            "cov",
            kind,
            taus.clone(),
            proportional(40),
            vec![alpha],
            r,
            804_100,
            pairs.clone(),
        );
        let report = run_scenario(&scenario, &pop).unwrap();
        let cell = &report.cells[0];

        // The analytic kernel for the same design.
        let spec = DesignSpec {
            kind,
            taus_hours: taus.clone(),
            alpha: vec![alpha; 2],
            density: None,
            pattern: None,
        };
        let trace = AllocationTrace::constant(vec![20, 20], 8);
        let vd = validate_design(&spec, &trace, &pop).unwrap();
        let kernel = match kind {
            DesignKind::FullReplacement => cov_full(&pop, &vd).unwrap(),
            _ => cov_partial(&pop, &vd).unwrap(),
        };

        for sample in &cell.empirical_cov {
            let t = (sample.t_hours / 0.5).round() as usize;
            let u = (sample.u_hours / 0.5).round() as usize;
            let analytic = *kernel.get(t, u);
            let z = (sample.value - analytic).abs() / sample.se;
            worst_z = worst_z.max(z);
            assert!(
                z <= 4.0,
                "{kind:?} pair ({t}, {u}): empirical {} vs analytic {analytic}, z = {z:.2}",
                sample.value
            );
            if kind == DesignKind::FullReplacement && vd.epoch_of_index(t) != vd.epoch_of_index(u)
            {
                assert_eq!(analytic, 0.0);
                assert!(
                    sample.value.abs() <= 4.0 * sample.se,
                    "cross-epoch pair ({t}, {u}) must vanish: {}",
                    sample.value
                );
            }
        }

        // Unbiasedness at scale at every tracked point.
        let truth = pop.population_mean();
        for stat in &cell.point_stats {
            let idx = (stat.t_hours / 0.5).round() as usize;
            let se = stat.sd / (r as f64).sqrt();
            let z = (stat.mean - truth.value(idx)).abs() / se;
            assert!(z <= 4.0, "mean estimate at t = {}: z = {z:.2}", stat.t_hours);
        }
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "runtime {elapsed:?} exceeds 2 min");
    println!(
        "criterion 2: PASS - 25 pairs x 2 designs within 4 MC se of Theorems 1-2 \
         (worst |z| = {worst_z:.2}), R = 20000, in {elapsed:.2?}"
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: alpha = 1 - f equals full replacement entrywise.
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_equivalence_point() {
    let pop = pop_400_two_strata(804_003);
    let taus: Vec<f64> = (1..=8).map(|r| 3.0 * r as f64).collect();
    let mut worst = 0.0f64;
    for (n_h, alpha) in [(40usize, 0.8f64), (100, 0.5)] {
        let spec_p = DesignSpec {
            kind: DesignKind::PartialReplacement,
            taus_hours: taus.clone(),
            alpha: vec![alpha; 2],
            density: None,
            pattern: None,
        };
        let spec_f = DesignSpec {
            kind: DesignKind::FullReplacement,
            taus_hours: taus.clone(),
            alpha: vec![0.0; 2],
            density: None,
            pattern: None,
        };
        let trace = AllocationTrace::constant(vec![n_h, n_h], 8);
        let vd_p = validate_design(&spec_p, &trace, &pop).unwrap();
        let vd_f = validate_design(&spec_f, &trace, &pop).unwrap();
        let kp = cov_partial(&pop, &vd_p).unwrap();
        let kf = cov_full(&pop, &vd_f).unwrap();
        for (a, b) in kp.values().iter().zip(kf.values()) {
            let d = (a - b).abs();
            worst = worst.max(d);
            assert!(d <= 1e-12, "kernel entries differ by {d}");
        }
    }
    println!(
        "criterion 3: PASS - alpha = 1 - f kernels equal the full replacement kernel \
         entrywise (worst gap {worst:.2e} <= 1e-12)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: exact Var(ISE) oracle vs 1e6 Monte Carlo replications.
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_exact_var_ise_oracle() {
    use rayon::prelude::*;

    let start = Instant::now();
    let grid = TimeGrid::uniform(1.0, 5).unwrap();
    let rows: Vec<(String, Vec<f64>)> = [(1.0f64, 2.0f64), (4.0, 0.0), (2.0, 3.0), (6.0, 1.0)]
        .iter()
        .map(|&(base, slope)| {
            ("a".to_string(), (0..5).map(|t| base + slope * t as f64).collect())
        })
        .collect();
    let pop = FunctionalPopulation::from_rows(grid, rows).unwrap();
    let spec = DesignSpec {
        kind: DesignKind::PartialReplacement,
        taus_hours: vec![2.0],
        alpha: vec![0.5],
        density: None,
        pattern: None,
    };
    let trace = AllocationTrace::constant(vec![2], 1);
    let vd = validate_design(&spec, &trace, &pop).unwrap();

    let exact = var_ise_exact_small(&pop, &vd, EXACT_PATH_CAP).unwrap();

    let reps = 1_000_000usize;
    let truth = pop.population_mean();
    let ises: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let streams = ReplicationStreams::new(804_004, rep as u64);
            let path = realize_path(&vd, &streams, |r, _, _| Ok(vd.planned_sizes()[r].clone()))
                .unwrap();
            let est = ht_series(&pop, &vd, &path).unwrap();
            ise(&est.series, &truth).unwrap()
        })
        .collect();
    let r = reps as f64;
    let mean = ises.iter().sum::<f64>() / r;
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for v in &ises {
        let d = v - mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    let var = m2 / (r - 1.0);
    let m4 = m4 / r;
    let se_var = ((m4 - var * var * (r - 3.0) / (r - 1.0)) / r).sqrt();
    let z = (var - exact).abs() / se_var;
    assert!(
        z <= 3.0,
        "exact Var(ISE) {exact} vs Monte Carlo {var} (se {se_var}), z = {z:.2}"
    );

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 180.0, "runtime {elapsed:?} exceeds 3 min");
    println!(
        "criterion 4: PASS - exact Var(ISE) = {exact:.6e}, MC = {var:.6e} over 1e6 \
         replications (z = {z:.2} <= 3), in {elapsed:.2?}"
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: Theorem 3 scaling in m under full replacement.
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_full_replacement_scaling() {
    let start = Instant::now();
    let pop = synth_population(&SynthPopulationSpec {
        seed: 804_005,
        spacing_hours: 1.0,
        duration_hours: 231.0,
        strata: vec![SynthStratumSpec {
            label: "a".into(),
            size: 400,
            mean: MeanCurveSpec { offset: 10.0, amplitude: 2.0, ..Default::default() },
            variance: 4.0,
            decay: 0.005,
        }],
    })
    .unwrap();

    let mut vars = Vec::new();
    let mut asyms = Vec::new();
    for m in [10usize, 20] {
        let taus: Vec<f64> = (1..=m).map(|r| 231.0 * r as f64 / (m + 1) as f64).collect();
        let scenario = scenario_on(
            "thm3",
            DesignKind::FullReplacement,
            taus,
            proportional(100),
            vec![0.0],
            20_000,
            804_500 + m as u64,
            vec![],
        );
        let report = run_scenario(&scenario, &pop).unwrap();
        let cell = &report.cells[0];
        let var = cell.sd_ise * cell.sd_ise;
        let asym = cell.analytic.as_ref().unwrap().var_ise.unwrap();
        let gap = (var - asym).abs() / asym;
        assert!(
            gap <= 0.25,
            "m = {m}: empirical Var(ISE) {var} vs asymptotic {asym}, off by {:.1}%",
            gap * 100.0
        );
        vars.push(var);
        asyms.push(asym);
    }
    let ratio = vars[0] / vars[1];
    assert!(
        (ratio - 2.0).abs() <= 0.4,
        "Var(ISE) ratio m=10 / m=20 is {ratio:.3}, outside 2 +- 20%"
    );

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 180.0, "runtime {elapsed:?} exceeds 3 min");
    println!(
        "criterion 5: PASS - Var(ISE) ratio {ratio:.3} (target 2 +- 20%), empirical vs \
         asymptotic within 25% ({:.1}%, {:.1}%), in {elapsed:.2?}",
        (vars[0] / asyms[0] - 1.0).abs() * 100.0,
        (vars[1] / asyms[1] - 1.0).abs() * 100.0
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: Corollary-type exponential-kernel fit under partial
// replacement.
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_corollary_fit() {
    let start = Instant::now();
    let m = 50usize;
    let pop = synth_population(&SynthPopulationSpec {
        seed: 804_006,
        spacing_hours: 1.0,
        duration_hours: 102.0,
        strata: vec![SynthStratumSpec {
            label: "a".into(),
            size: 1000,
            mean: MeanCurveSpec { offset: 8.0, amplitude: 1.5, ..Default::default() },
            variance: 4.0,
            decay: 0.05,
        }],
    })
    .unwrap();
    let taus: Vec<f64> = (1..=m).map(|r| 2.0 * r as f64).collect();
    let f = 0.5f64;

    let mut worst_gap = 0.0f64;
    for c in [1.0f64, 4.0] {
        let alpha = c * (1.0 - f) / m as f64;
        let scenario = scenario_on(
            "corollary",
            DesignKind::PartialReplacement,
            taus.clone(),
            proportional(500),
            vec![alpha],
            20_000,
            804_600,
            vec![],
        );
        let report = run_scenario(&scenario, &pop).unwrap();
        let var = report.cells[0].sd_ise * report.cells[0].sd_ise;

        let spec = DesignSpec {
            kind: DesignKind::PartialReplacement,
            taus_hours: taus.clone(),
            alpha: vec![alpha],
            density: None,
            pattern: None,
        };
        let trace = AllocationTrace::constant(vec![500], m);
        let vd = validate_design(&spec, &trace, &pop).unwrap();
        let coro = var_ise_corollary(&pop, &vd, &[c]).unwrap();
        let gap = (var - coro).abs() / coro;
        worst_gap = worst_gap.max(gap);
        assert!(
            gap <= 0.25,
            "c = {c}: empirical Var(ISE) {var} vs exponential-kernel value {coro}, \
             off by {:.1}%",
            gap * 100.0
        );
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "runtime {elapsed:?} exceeds 5 min");
    println!(
        "criterion 6: PASS - empirical Var(ISE) within 25% of the exponential-kernel \
         value for c in {{1, 4}} (worst gap {:.1}%), in {elapsed:.2?}",
        worst_gap * 100.0
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: constant-allocation phenomenology and Neyman gains.
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_design_phenomenology() {
    let start = Instant::now();
    let pop = pop_400_two_strata(804_007);
    let taus: Vec<f64> = (1..=8).map(|r| 3.0 * r as f64).collect();
    let alpha_grid = vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let scenario = scenario_on(
        "phenomenology",
        DesignKind::PartialReplacement,
        taus.clone(),
        proportional(20),
        alpha_grid.clone(),
        20_000,
        804_700,
        vec![],
    );
    let report = run_scenario(&scenario, &pop).unwrap();

    // Constant allocation: the mean ISE does not depend on alpha.
    let base = &report.cells[0];
    for cell in &report.cells[1..] {
        let se = (base.mc_se.mean.powi(2) + cell.mc_se.mean.powi(2)).sqrt();
        let z = (cell.mise - base.mise).abs() / se;
        assert!(
            z <= 4.0,
            "mean ISE at alpha = {} deviates from alpha = 0: z = {z:.2}",
            cell.params.alpha
        );
    }
    // The ISE standard deviation is monotone nonincreasing in alpha, with
    // adjacent violations bounded by 2 MC standard errors.
    for w in report.cells.windows(2) {
        let slack = 2.0 * (w[0].mc_se.sd.powi(2) + w[1].mc_se.sd.powi(2)).sqrt();
        assert!(
            w[1].sd_ise <= w[0].sd_ise + slack,
            "sd(ISE) rises from {} at alpha = {} to {} at alpha = {}",
            w[0].sd_ise,
            w[0].params.alpha,
            w[1].sd_ise,
            w[1].params.alpha
        );
    }
    let sd_first = report.cells.first().unwrap().sd_ise;
    let sd_last = report.cells.last().unwrap().sd_ise;

    // Neyman allocation beats proportional by at least 10% on a
    // heteroscedastic population (sd ratio 3).
    let hetero = synth_population(&SynthPopulationSpec {
        seed: 804_070,
        spacing_hours: 0.5,
        duration_hours: 27.0,
        strata: vec![
            SynthStratumSpec {
                label: "a".into(),
                size: 200,
                mean: MeanCurveSpec { offset: 10.0, amplitude: 2.0, ..Default::default() },
                variance: 9.0,
                decay: 0.05,
            },
            SynthStratumSpec {
                label: "b".into(),
                size: 200,
                mean: MeanCurveSpec { offset: 5.0, ..Default::default() },
                variance: 1.0,
                decay: 0.05,
            },
        ],
    })
    .unwrap();
    let mut mises = Vec::new();
    for kind in [AllocationKind::Neyman, AllocationKind::Proportional] {
        let scenario = scenario_on(
            "alloc",
            DesignKind::PartialReplacement,
            taus.clone(),
            AllocationPolicy { kind, total: 20, floor: 2 },
            vec![0.2],
            10_000,
            804_701,
            vec![],
        );
        mises.push(run_scenario(&scenario, &hetero).unwrap().cells[0].mise);
    }
    let (neyman, prop) = (mises[0], mises[1]);
    assert!(
        neyman <= 0.9 * prop,
        "Neyman MISE {neyman} must undercut proportional {prop} by at least 10%"
    );

    let elapsed = start.elapsed();
    println!(
        "criterion 7: PASS - mean ISE flat in alpha, sd(ISE) {sd_first:.3e} -> {sd_last:.3e} \
         monotone nonincreasing, Neyman/proportional MISE = {:.3}, in {elapsed:.2?}",
        neyman / prop
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: composite reductions and composite gains under strong
// temporal correlation.
// ---------------------------------------------------------------------------

fn fixed_trace_path(vd: &ValidatedDesign, seed: u64, rep: u64) -> SamplePath {
    let streams = ReplicationStreams::new(seed, rep);
    realize_path(vd, &streams, |r, _, _| Ok(vd.planned_sizes()[r].clone())).unwrap()
}

#[test]
fn criterion_8_composite_estimator() {
    let start = Instant::now();

    // Bit-exact reductions on a realized path.
    let pop = pop_400_two_strata(804_008);
    let taus: Vec<f64> = (1..=8).map(|r| 3.0 * r as f64).collect();
    let spec = DesignSpec {
        kind: DesignKind::PartialReplacement,
        taus_hours: taus.clone(),
        alpha: vec![0.25; 2],
        density: None,
        pattern: None,
    };
    let trace = AllocationTrace::constant(vec![20, 20], 8);
    let vd = validate_design(&spec, &trace, &pop).unwrap();
    let path = fixed_trace_path(&vd, 804_800, 0);
    let ht = ht_series(&pop, &vd, &path).unwrap();
    for (q, delta) in [(1.0f64, 6.0f64), (0.4, 0.0)] {
        let c = composite_series(&pop, &vd, &path, &q, &delta).unwrap();
        assert_eq!(c.series.values(), ht.series.values(), "reduction at Q={q}, delta={delta}");
    }
    let spec_fixed = DesignSpec {
        kind: DesignKind::FixedPanel,
        taus_hours: taus.clone(),
        alpha: vec![0.0; 2],
        density: None,
        pattern: None,
    };
    let vd_fixed = validate_design(&spec_fixed, &trace, &pop).unwrap();
    let path_fixed = fixed_trace_path(&vd_fixed, 804_800, 1);
    let ht_fixed = ht_series(&pop, &vd_fixed, &path_fixed).unwrap();
    let c_fixed = composite_series(&pop, &vd_fixed, &path_fixed, &0.3, &6.0).unwrap();
    assert_eq!(c_fixed.series.values(), ht_fixed.series.values(), "fixed panel reduction");

    // Strongly correlated population: some composite cell strictly beats HT.
    let sticky = synth_population(&SynthPopulationSpec {
        seed: 804_080,
        spacing_hours: 0.5,
        duration_hours: 27.0,
        strata: vec![SynthStratumSpec {
            label: "a".into(),
            size: 200,
            mean: MeanCurveSpec { offset: 10.0, amplitude: 2.0, ..Default::default() },
            variance: 4.0,
            decay: 0.001,
        }],
    })
    .unwrap();
    let base = Scenario {
        id: "composite".into(),
        design: ScenarioDesign {
            kind: DesignKind::PartialReplacement,
            taus_hours: taus.clone(),
            density: None,
            pattern: None,
        },
        allocation: proportional(10),
        estimator: EstimatorChoice::Composite,
        alpha_grid: vec![0.5],
        q_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        delta_grid: vec![3.0, 12.0],
        replications: 4000,
        master_seed: 804_801,
        common_random_numbers: true,
        cov_pairs: vec![],
    };
    let composite_report = run_scenario(&base, &sticky).unwrap();
    let mut ht_scenario = base.clone();
    ht_scenario.estimator = EstimatorChoice::Ht;
    let ht_report = run_scenario(&ht_scenario, &sticky).unwrap();
    let ht_mise = ht_report.cells[0].mise;
    let best = composite_report
        .cells
        .iter()
        .min_by(|a, b| a.mise.partial_cmp(&b.mise).unwrap())
        .unwrap();
    // The Q = 1 cells coincide with HT bit-exactly under common random
    // numbers, so the minimum can only improve on HT.
    let q1_cell = composite_report
        .cells
        .iter()
        .find(|c| c.params.q == Some(1.0))
        .unwrap();
    assert_eq!(q1_cell.mise, ht_mise, "Q = 1 cell must reproduce HT exactly");
    assert!(
        best.mise < ht_mise,
        "best composite cell {} must strictly improve on HT {ht_mise}",
        best.mise
    );

    let elapsed = start.elapsed();
    println!(
        "criterion 8: PASS - reductions bit-exact; best composite cell (alpha={}, Q={:?}, \
         delta={:?}) improves MISE by {:.1}% over HT, in {elapsed:.2?}",
        best.params.alpha,
        best.params.q.unwrap(),
        best.params.delta_hours.unwrap(),
        (1.0 - best.mise / ht_mise) * 100.0
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: byte-identical reports across worker counts.
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_worker_determinism() {
    let pop = pop_400_two_strata(804_009);
    let taus: Vec<f64> = (1..=8).map(|r| 3.0 * r as f64).collect();
    let mut scenario = scenario_on(
        "determinism",
        DesignKind::PartialReplacement,
        taus,
        AllocationPolicy { kind: AllocationKind::Adaptive, total: 20, floor: 2 },
        vec![0.2, 0.6],
        300,
        804_900,
        vec![(2, 13), (24, 46)],
    );
    scenario.common_random_numbers = true;
    let mut outputs = Vec::new();
    for workers in [1usize, 4, 8] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
        let json = pool.install(|| run_scenario(&scenario, &pop).unwrap().to_json());
        outputs.push(json);
    }
    assert_eq!(outputs[0], outputs[1], "1 vs 4 workers");
    assert_eq!(outputs[1], outputs[2], "4 vs 8 workers");
    println!(
        "criterion 9: PASS - byte-identical reports across 1, 4 and 8 workers \
         ({} bytes)",
        outputs[0].len()
    );
}

// ---------------------------------------------------------------------------
// Guard: the exact oracle rejects oversized instances instead of stalling.
// ---------------------------------------------------------------------------

#[test]
fn exact_oracle_capacity_guard() {
    let pop = pop_400_two_strata(804_010);
    let spec = DesignSpec {
        kind: DesignKind::PartialReplacement,
        taus_hours: vec![13.5],
        alpha: vec![0.25; 2],
        density: None,
        pattern: None,
    };
    let trace = AllocationTrace::constant(vec![20, 20], 1);
    let vd = validate_design(&spec, &trace, &pop).unwrap();
    assert!(matches!(
        var_ise_exact_small(&pop, &vd, EXACT_PATH_CAP),
        Err(Error::Capacity(_))
    ));
}
