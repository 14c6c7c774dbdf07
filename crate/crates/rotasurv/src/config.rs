//! Structured run configuration: one TOML file describes the population
//! source, design, allocation, estimator and scenario grids.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::allocation::AllocationPolicy;
use crate::designs::{DesignKind, DesignSpec, RotationPattern};
use crate::error::{Error, Result};
use crate::harness::{EstimatorChoice, Scenario, ScenarioDesign};
use crate::population::FunctionalPopulation;
use crate::synth::SynthPopulationSpec;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub population: PopulationConfig,
    pub design: DesignConfig,
    pub allocation: AllocationPolicy,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub analyze: AnalyzeConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory of the config file; file references resolve against it.
    #[serde(skip)]
    base_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    /// CSV population file (`stratum,t=...` header).
    pub csv: Option<PathBuf>,
    /// Synthetic population specification.
    pub synthetic: Option<SynthPopulationSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub kind: DesignKind,
    /// Explicit replacement times, in hours.
    pub taus_hours: Option<Vec<f64>>,
    /// Shorthand: `m` uniformly spaced replacements `tau_r = r T / (m + 1)`.
    pub replacements: Option<usize>,
    /// Tabulated replacement-time density over the grid.
    pub density: Option<Vec<f64>>,
    /// Rotation pattern CSV (`epoch,stratum,slot` rows), conventional only.
    pub pattern_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default = "default_method")]
    pub method: EstimatorChoice,
    #[serde(default)]
    pub q_grid: Vec<f64>,
    #[serde(default)]
    pub delta_hours_grid: Vec<f64>,
}

fn default_method() -> EstimatorChoice {
    EstimatorChoice::Ht
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig { method: default_method(), q_grid: Vec::new(), delta_hours_grid: Vec::new() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub replications: usize,
    pub seed: u64,
    pub alpha_grid: Vec<f64>,
    #[serde(default = "default_true")]
    pub common_random_numbers: bool,
    /// Grid-index pairs for empirical covariance tracking.
    #[serde(default)]
    pub cov_pairs: Vec<(usize, usize)>,
    /// Worker threads; 0 leaves the choice to the runtime.
    #[serde(default)]
    pub workers: usize,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Also run the exact small-instance Var(ISE) oracle.
    #[serde(default)]
    pub exact_var_ise: bool,
    /// Emit the covariance kernel CSV per alpha.
    #[serde(default = "default_true")]
    pub kernels: bool,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig { exact_var_ise: false, kernels: true }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_pop_name")]
    pub population_csv: String,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_pop_name() -> String {
    "population.csv".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_out_dir(), population_csv: default_pop_name() }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if self.schema_version != 1 {
            return Err(Error::Config(format!(
                "schema_version: expected 1, got {}",
                self.schema_version
            )));
        }
        match (&self.population.csv, &self.population.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "population: exactly one of `csv` and `synthetic` must be set".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "population: one of `csv` and `synthetic` is required".into(),
                ))
            }
            _ => {}
        }
        match (&self.design.taus_hours, self.design.replacements) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "design: set either `taus_hours` or `replacements`, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "design: one of `taus_hours` and `replacements` is required".into(),
                ))
            }
            _ => {}
        }
        if self.design.pattern_csv.is_some() && self.design.kind != DesignKind::ConventionalRotation
        {
            return Err(Error::Config(
                "design.pattern_csv: patterns apply to conventional rotation only".into(),
            ));
        }
        if self.scenario.alpha_grid.is_empty() {
            return Err(Error::Config("scenario.alpha_grid: must be nonempty".into()));
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Load or synthesize the population, with an optional seed override for
    /// the synthetic source.
    pub fn population(&self, seed_override: Option<u64>) -> Result<FunctionalPopulation<f64>> {
        match (&self.population.csv, &self.population.synthetic) {
            (Some(csv), None) => FunctionalPopulation::load_csv(&self.resolve(csv)),
            (None, Some(spec)) => {
                let mut spec = spec.clone();
                if let Some(seed) = seed_override {
                    spec.seed = seed;
                }
                crate::synth::synth_population(&spec)
            }
            _ => unreachable!("validated"),
        }
    }

    pub fn synthetic_spec(&self) -> Result<&SynthPopulationSpec> {
        self.population.synthetic.as_ref().ok_or_else(|| {
            Error::Config("this command needs a synthetic population spec".into())
        })
    }

    /// Replacement times in hours for a population of duration `T`.
    pub fn taus_hours(&self, duration: f64) -> Vec<f64> {
        match (&self.design.taus_hours, self.design.replacements) {
            (Some(taus), _) => taus.clone(),
            (None, Some(m)) => DesignSpec::uniform_taus(duration, m),
            (None, None) => unreachable!("validated"),
        }
    }

    /// Build the scenario against a population.
    pub fn scenario(
        &self,
        pop: &FunctionalPopulation<f64>,
        id: &str,
        seed_override: Option<u64>,
    ) -> Result<Scenario> {
        let duration = *pop.grid().duration();
        let pattern = match &self.design.pattern_csv {
            Some(p) => Some(load_pattern_csv(&self.resolve(p), pop.n_strata())?),
            None => None,
        };
        Ok(Scenario {
            id: id.to_string(),
            design: ScenarioDesign {
                kind: self.design.kind,
                taus_hours: self.taus_hours(duration),
                density: self.design.density.clone(),
                pattern,
            },
            allocation: self.allocation,
            estimator: self.estimator.method,
            alpha_grid: self.scenario.alpha_grid.clone(),
            q_grid: self.estimator.q_grid.clone(),
            delta_grid: self.estimator.delta_hours_grid.clone(),
            replications: self.scenario.replications,
            master_seed: seed_override.unwrap_or(self.scenario.seed),
            common_random_numbers: self.scenario.common_random_numbers,
            cov_pairs: self.scenario.cov_pairs.clone(),
        })
    }

    pub fn out_dir(&self, cli_override: Option<&Path>) -> PathBuf {
        match cli_override {
            Some(p) => p.to_path_buf(),
            None => self.resolve(&self.output.dir),
        }
    }
}

/// Rotation pattern file: `epoch,stratum,slot` rows, one row per slot.
pub fn load_pattern_csv(path: &Path, n_strata: usize) -> Result<RotationPattern> {
    if !path.exists() {
        return Err(Error::Data(format!("pattern file not found: {}", path.display())));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<(usize, usize, u32)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("pattern row {i}: {e}")))?;
        if record.len() != 3 {
            return Err(Error::Format(format!("pattern row {i}: expected epoch,stratum,slot")));
        }
        let parse = |j: usize| -> Result<usize> {
            record
                .get(j)
                .unwrap_or_default()
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("pattern row {i}: bad field {j}")))
        };
        rows.push((parse(0)?, parse(1)?, parse(2)? as u32));
    }
    let epochs = rows.iter().map(|r| r.0).max().map_or(0, |m| m + 1);
    let mut slots = vec![vec![Vec::new(); n_strata]; epochs];
    for (epoch, stratum, slot) in rows {
        if stratum >= n_strata {
            return Err(Error::Validation(format!(
                "pattern references stratum {stratum}, population has {n_strata}"
            )));
        }
        slots[epoch][stratum].push(slot);
    }
    for epoch in &mut slots {
        for set in epoch.iter_mut() {
            set.sort_unstable();
        }
    }
    Ok(RotationPattern { slots })
}
