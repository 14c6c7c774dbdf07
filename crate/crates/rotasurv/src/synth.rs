//! Synthetic curve populations.
//!
//! Each stratum is a Gaussian ensemble around a parametric mean curve with an
//! exponential temporal kernel `variance * exp(-decay * |t - t'|)`, simulated
//! exactly on the grid as an Ornstein-Uhlenbeck recursion. The exponential
//! kernel makes these populations the natural test bed for the exponential
//! decay covariance approximations used elsewhere in the crate.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{FunctionalPopulation, TimeGrid};
use crate::rng::{self, tag};

/// Parametric mean curve `offset + amplitude * sin(2 pi (t - phase) / period) + trend * t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanCurveSpec {
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "default_period")]
    pub period_hours: f64,
    #[serde(default)]
    pub phase_hours: f64,
    #[serde(default)]
    pub trend_per_hour: f64,
}

fn default_period() -> f64 {
    24.0
}

impl Default for MeanCurveSpec {
    fn default() -> Self {
        MeanCurveSpec {
            offset: 0.0,
            amplitude: 0.0,
            period_hours: default_period(),
            phase_hours: 0.0,
            trend_per_hour: 0.0,
        }
    }
}

impl MeanCurveSpec {
    pub fn eval(&self, t: f64) -> f64 {
        let cyclic = if self.amplitude != 0.0 {
            let w = 2.0 * std::f64::consts::PI / self.period_hours;
            self.amplitude * (w * (t - self.phase_hours)).sin()
        } else {
            0.0
        };
        self.offset + cyclic + self.trend_per_hour * t
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthStratumSpec {
    pub label: String,
    pub size: usize,
    #[serde(default)]
    pub mean: MeanCurveSpec,
    /// Pointwise variance level of the stratum, `gamma_h(t, t)`.
    pub variance: f64,
    /// Exponential decay rate of the temporal kernel, per hour.
    pub decay: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthPopulationSpec {
    pub seed: u64,
    pub spacing_hours: f64,
    pub duration_hours: f64,
    pub strata: Vec<SynthStratumSpec>,
}

impl SynthPopulationSpec {
    fn validate(&self) -> Result<()> {
        if self.strata.is_empty() {
            return Err(Error::Validation("synthetic spec has no strata".into()));
        }
        for s in &self.strata {
            if s.size < 2 {
                return Err(Error::Validation(format!(
                    "stratum `{}` needs at least two units, got {}",
                    s.label, s.size
                )));
            }
            if s.variance < 0.0 {
                return Err(Error::Validation(format!("stratum `{}` has negative variance", s.label)));
            }
            if s.decay < 0.0 {
                return Err(Error::Validation(format!("stratum `{}` has negative decay", s.label)));
            }
            if s.mean.amplitude != 0.0 && s.mean.period_hours <= 0.0 {
                return Err(Error::Validation(format!(
                    "stratum `{}` has a cyclic mean with nonpositive period",
                    s.label
                )));
            }
        }
        if self.spacing_hours <= 0.0 {
            return Err(Error::Validation("grid spacing must be positive".into()));
        }
        if self.duration_hours <= self.spacing_hours {
            return Err(Error::Validation("duration must exceed the grid spacing".into()));
        }
        Ok(())
    }

    /// Target temporal kernel of a stratum, `gamma_h(t, t')`.
    pub fn target_kernel(&self, h: usize, t: f64, u: f64) -> f64 {
        let s = &self.strata[h];
        s.variance * (-s.decay * (t - u).abs()).exp()
    }
}

/// Generate the population. Deterministic for a given spec and seed.
pub fn synth_population(spec: &SynthPopulationSpec) -> Result<FunctionalPopulation<f64>> {
    spec.validate()?;
    let steps = (spec.duration_hours / spec.spacing_hours).round() as usize;
    if ((spec.duration_hours / spec.spacing_hours) - steps as f64).abs() > 1e-9 {
        return Err(Error::Validation(
            "duration must be a whole number of grid steps".into(),
        ));
    }
    let grid = TimeGrid::uniform(spec.spacing_hours, steps + 1)?;
    let mut rows = Vec::new();
    for (h, stratum) in spec.strata.iter().enumerate() {
        let mut rng = rng::stream(spec.seed, &[tag::SYNTH, h as u64]);
        let sd = stratum.variance.sqrt();
        // One-step autocorrelation of the exact OU discretization.
        let rho = (-stratum.decay * spec.spacing_hours).exp();
        let innovation_sd = sd * (1.0 - rho * rho).sqrt();
        let mean: Vec<f64> = grid.points().iter().map(|&t| stratum.mean.eval(t)).collect();
        for _ in 0..stratum.size {
            let mut z: f64 = sd * rng.sample::<f64, _>(StandardNormal);
            let mut row = Vec::with_capacity(grid.len());
            row.push(mean[0] + z);
            for m in &mean[1..] {
                z = rho * z + innovation_sd * rng.sample::<f64, _>(StandardNormal);
                row.push(m + z);
            }
            rows.push((stratum.label.clone(), row));
        }
    }
    FunctionalPopulation::from_rows(grid, rows)
}
