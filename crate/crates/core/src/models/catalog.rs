//! JSON item-bank / catalog files.
//!
//! ```json
//! {"kind": "m2pl", "p": 2,
//!  "experiments": [{"z": [1, 0], "b": -0.1}, {"z": [0, 1], "b": 0}],
//!  "box": {"lower": [-3, -3], "upper": [3, 3]}}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BaseRegistry, ExperimentModel, ExperimentSpec, ModelKind, ParameterBox};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExperimentRecord {
    Pair {
        i: usize,
        j: usize,
    },
    Linear {
        z: Vec<f64>,
        #[serde(default)]
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogFile {
    pub kind: ModelKind,
    pub p: usize,
    pub experiments: Vec<ExperimentRecord>,
    #[serde(rename = "box")]
    pub bbox: CatalogBox,
}

impl CatalogFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn build(&self) -> Result<ExperimentModel> {
        self.build_with(&BaseRegistry::default())
    }

    pub fn build_with(&self, registry: &BaseRegistry) -> Result<ExperimentModel> {
        if self.bbox.lower.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                found: self.bbox.lower.len(),
            });
        }
        let bbox = ParameterBox::new(self.bbox.lower.clone(), self.bbox.upper.clone())?;
        let specs = self
            .experiments
            .iter()
            .enumerate()
            .map(|(a, rec)| match (self.kind, rec) {
                (ModelKind::Btl, &ExperimentRecord::Pair { i, j }) => Ok(ExperimentSpec::Btl { i, j }),
                (ModelKind::M2pl, ExperimentRecord::Linear { z, b, .. }) => Ok(ExperimentSpec::M2pl { z: z.clone(), b: *b }),
                (ModelKind::Glm, ExperimentRecord::Linear { z, b, base }) => Ok(ExperimentSpec::Glm {
                    z: z.clone(),
                    b: *b,
                    base: registry.get(base.as_deref().unwrap_or("logit"))?,
                }),
                _ => Err(Error::InvalidArgument(format!(
                    "experiment {a} does not match catalog kind {}",
                    self.kind
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        ExperimentModel::instantiate(self.kind, specs, bbox)
    }

    pub fn from_model(model: &ExperimentModel) -> Self {
        let experiments = model
            .ids()
            .map(|a| match model.spec(a) {
                ExperimentSpec::Btl { i, j } => ExperimentRecord::Pair { i: *i, j: *j },
                ExperimentSpec::M2pl { z, b } => ExperimentRecord::Linear { z: z.clone(), b: *b, base: None },
                ExperimentSpec::Glm { z, b, base } => ExperimentRecord::Linear {
                    z: z.clone(),
                    b: *b,
                    base: Some(base.name().to_string()),
                },
            })
            .collect();
        CatalogFile {
            kind: model.kind(),
            p: model.dim(),
            experiments,
            bbox: CatalogBox {
                lower: model.bbox().lower().iter().copied().collect(),
                upper: model.bbox().upper().iter().copied().collect(),
            },
        }
    }
}
