use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// All four total variations of a function and their comparison table.
    Tv,
    /// Tangent-bundle estimate of the measure.
    Fibers,
    /// Relaxed and tangential relaxed slopes and the inclusion check.
    W11,
    /// The derivation of a field: isometry, modulus, pairing and Leibniz.
    Derivation,
    /// Rasterize a field, decompose it into curves and verify the marginals.
    Superpose,
    /// Every check above on a builtin scenario.
    EquivalenceReport,
}

#[derive(Debug, Parser)]
#[command(
    name = "bvgrid",
    version,
    about = "BV and W^{1,1} calculus of weighted grids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Measure document (JSON).
    #[arg(long, global = true)]
    measure: Option<PathBuf>,
    /// Function document (JSON), or a function name when `--scenario` is set.
    #[arg(long, global = true)]
    function: Option<String>,
    /// Increasing divergence bounds.
    #[arg(long = "M-schedule", value_delimiter = ',', global = true)]
    m_schedule: Vec<f64>,
    /// Decreasing mollification scales.
    #[arg(long = "eps-schedule", value_delimiter = ',', global = true)]
    eps_schedule: Vec<f64>,
    /// Tolerances as `key=value` pairs; keys: gap, trace, incl, adm, equiv, stab.
    #[arg(long, value_delimiter = ',', global = true)]
    tol: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,
    /// Builtin scenario.
    #[arg(long, global = true)]
    scenario: Option<String>,
    /// Seed of the randomized probes.
    #[arg(long, default_value_t = 0, global = true)]
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tolerances {
    /// Relative primal-dual gap of the dual solvers.
    pub gap_tol: f64,
    /// Stabilization of relaxation traces and slope stages.
    pub trace_tol: f64,
    /// Inclusion slack; `None` means `10 h Lip(f)`.
    pub incl_tol: Option<f64>,
    /// Admissibility of fields.
    pub tol: f64,
    /// Largest accepted relative gap between formulations.
    pub equiv_tol: f64,
    /// Relative increment declaring the M-sweep saturated.
    pub stab_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            gap_tol: 1e-6,
            trace_tol: 0.05,
            incl_tol: None,
            tol: 1e-9,
            equiv_tol: 0.05,
            stab_tol: 1e-2,
        }
    }
}

impl Tolerances {
    fn set(&mut self, item: &str) -> Result<(), CliError> {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("tolerance {item:?} is not key=value")))?;
        let v: f64 = value.trim().parse().map_err(|_| {
            CliError::Usage(format!("tolerance {key} has a non-numeric value {value:?}"))
        })?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::Usage(format!(
                "tolerance {key} must be positive and finite, got {v}"
            )));
        }
        match key.trim() {
            "gap" => self.gap_tol = v,
            "trace" => self.trace_tol = v,
            "incl" => self.incl_tol = Some(v),
            "adm" => self.tol = v,
            "equiv" => self.equiv_tol = v,
            "stab" => self.stab_tol = v,
            other => return Err(CliError::Usage(format!("unknown tolerance key {other:?}"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub measure: Option<PathBuf>,
    pub function: Option<String>,
    pub scenario: Option<String>,
    /// Empty means the default sweep `(1/4, 1, 4, 16)/h`.
    pub m_schedule: Vec<f64>,
    /// Empty means `(8, 6, 4, 3, 2) h`.
    pub eps_schedule: Vec<f64>,
    pub tolerances: Tolerances,
    pub out: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            measure: None,
            function: None,
            scenario: None,
            m_schedule: Vec::new(),
            eps_schedule: Vec::new(),
            tolerances: Tolerances::default(),
            out: PathBuf::from("out"),
            seed: 0,
        }
    }

    /// Parses command line arguments, the program name included.
    pub fn from_args<I, S>(args: I) -> Result<Self, CliError>
    where
        I: IntoIterator<Item = S>,
        S: Into<std::ffi::OsString> + Clone,
    {
        let cli = Cli::try_parse_from(args)?;
        let mut tolerances = Tolerances::default();
        for item in &cli.tol {
            tolerances.set(item)?;
        }
        let config = Self {
            command: cli.command,
            measure: cli.measure,
            function: cli.function,
            scenario: cli.scenario,
            m_schedule: cli.m_schedule,
            eps_schedule: cli.eps_schedule,
            tolerances,
            out: cli.out,
            seed: cli.seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let t = &self.tolerances;
        for (name, v) in [
            ("gap", t.gap_tol),
            ("trace", t.trace_tol),
            ("adm", t.tol),
            ("equiv", t.equiv_tol),
            ("stab", t.stab_tol),
            ("incl", t.incl_tol.unwrap_or(1.0)),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Usage(format!(
                    "tolerance {name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.m_schedule.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(CliError::Usage(
                "M schedule entries must be positive and finite".into(),
            ));
        }
        if !self.m_schedule.is_empty()
            && (self.m_schedule.len() < 2 || self.m_schedule.windows(2).any(|w| w[1] <= w[0]))
        {
            return Err(CliError::Usage(
                "M schedule must be increasing with at least two entries".into(),
            ));
        }
        if self
            .eps_schedule
            .iter()
            .any(|&x| !(x > 0.0 && x.is_finite()))
        {
            return Err(CliError::Usage(
                "eps schedule entries must be positive and finite".into(),
            ));
        }
        if self.eps_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return Err(CliError::Usage(
                "eps schedule must be strictly decreasing".into(),
            ));
        }
        if self.scenario.is_some() && self.measure.is_some() {
            return Err(CliError::Usage(
                "--scenario and --measure are exclusive".into(),
            ));
        }
        if self.scenario.is_none() && self.measure.is_none() {
            return Err(CliError::Usage(
                "one of --scenario or --measure is required".into(),
            ));
        }
        Ok(())
    }
}
