use std::path::Path;
use std::sync::Arc;

use bvgrid::grid::{GridFunction, GridMeasure, GridVectorField};
use bvgrid::io::{load_function, load_measure};
use bvgrid::scenarios::{scenario, Scenario};

use crate::{CliError, MeasureSummary, RunConfig};

pub(crate) struct Inputs {
    pub scenario: Option<Scenario>,
    pub measure: Arc<GridMeasure<f64>>,
    /// Selected functions in a fixed order.
    pub functions: Vec<(String, GridFunction<f64>)>,
}

impl Inputs {
    pub fn load(config: &RunConfig) -> Result<Self, CliError> {
        if let Some(name) = &config.scenario {
            let sc = scenario(name).map_err(|e| CliError::Usage(e.to_string()))?;
            let functions = match &config.function {
                Some(f) => vec![(
                    f.clone(),
                    sc.function(f)
                        .map_err(|e| CliError::Usage(e.to_string()))?
                        .clone(),
                )],
                None => sc.functions.clone(),
            };
            return Ok(Self {
                measure: sc.measure.clone(),
                scenario: Some(sc),
                functions,
            });
        }
        let path = config.measure.as_deref().expect("validated");
        let measure = Arc::new(load_measure::<f64>(path)?);
        let functions = match &config.function {
            Some(f) => {
                let p = Path::new(f);
                let name = p
                    .file_stem()
                    .map_or_else(|| f.clone(), |s| s.to_string_lossy().into_owned());
                vec![(name, load_function(p, &measure)?)]
            }
            None => Vec::new(),
        };
        Ok(Self {
            scenario: None,
            measure,
            functions,
        })
    }

    pub fn summary(&self) -> MeasureSummary {
        let m = &self.measure;
        MeasureSummary {
            shape: m.shape().to_vec(),
            spacing: m.spacing(),
            total_mass: m.total_mass(),
            support_cells: m.support_len(),
        }
    }

    pub fn first_function(&self) -> Result<&(String, GridFunction<f64>), CliError> {
        self.functions
            .first()
            .ok_or_else(|| CliError::Usage("this command needs --function".into()))
    }

    pub fn builtin_field(&self) -> Option<&GridVectorField<f64>> {
        self.scenario.as_ref().and_then(|s| s.field.as_ref())
    }

    pub fn full_support(&self) -> bool {
        self.measure.support_len() == self.measure.len()
    }
}
