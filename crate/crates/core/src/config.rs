//! JSON scenario files. Matrices are nested row arrays; dimensions are inferred and
//! cross-checked when the scenario is built.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bounds::CertificateFile;
use crate::error::{PlateError, Result};
use crate::linalg::{from_rows, Mat, Vector};
use crate::mhplate::{LoopConfig, DEFAULT_WINDOW_LEN};
use crate::model::{ContinuousModel, PerceptionMethod};
use crate::sim::{BoundValidation, Experiment, GraphSpec, Scenario, DEFAULT_EULER_DT};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub a: Rows,
    pub b: Rows,
    pub w: Rows,
    pub c: Rows,
    pub x0: Vec<f64>,
    pub p0: Rows,
    pub dt_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub steps: u32,
    pub r: Rows,
    pub cpu: f64,
    #[serde(default)]
    pub penalty: Option<f64>,
    #[serde(default)]
    pub lambda_load: Option<f64>,
    #[serde(default)]
    pub lambda_att: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub tf: f64,
    pub lambda: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { tf: 1.0, lambda: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub occlusions: Vec<(f64, f64)>,
    /// Per-method noise actually applied to detections; `null` keeps the nominal `R`.
    pub true_r: Vec<Option<Rows>>,
    pub adaptive_r: bool,
    pub window_len: usize,
    pub seed: u64,
    pub runs: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_EULER_DT,
            horizon: 10.0,
            occlusions: Vec::new(),
            true_r: Vec::new(),
            adaptive_r: false,
            window_len: DEFAULT_WINDOW_LEN,
            seed: 0,
            runs: 1,
        }
    }
}

impl SimConfig {
    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig { adaptive_r: self.adaptive_r, window_len: self.window_len, occlusions: self.occlusions.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelConfig,
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub graph: GraphSpec,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub bounds: BoundValidation,
    #[serde(default)]
    pub experiment: Option<Experiment>,
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> PlateError {
    PlateError::Config { path: path.into(), message: message.into() }
}

fn matrix(path: &str, rows: &Rows) -> Result<Mat> {
    from_rows(rows).map_err(|_| config_err(path, "rows have different lengths"))
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(path, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn model(&self) -> Result<ContinuousModel> {
        let m = &self.model;
        Ok(ContinuousModel {
            a: matrix("model.a", &m.a)?,
            b: matrix("model.b", &m.b)?,
            w: matrix("model.w", &m.w)?,
            c: matrix("model.c", &m.c)?,
            x0: Vector::from_vec(m.x0.clone()),
            p0: matrix("model.p0", &m.p0)?,
            dt_s: m.dt_s,
        })
    }

    pub fn methods(&self) -> Result<Vec<PerceptionMethod>> {
        self.methods
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let path = |f: &str| format!("methods[{i}].{f}");
                let penalty = match (m.penalty, m.lambda_load, m.lambda_att) {
                    (Some(p), None, None) => p,
                    (None, load, att) if load.is_some() || att.is_some() => PerceptionMethod::load_attention_penalty(
                        m.steps,
                        m.cpu,
                        self.model.dt_s,
                        load.unwrap_or(0.0),
                        att.unwrap_or(0.0),
                    ),
                    (None, None, None) => return Err(config_err(path("penalty"), "give `penalty` or `lambda_load`/`lambda_att`")),
                    _ => return Err(config_err(path("penalty"), "`penalty` excludes `lambda_load`/`lambda_att`")),
                };
                Ok(PerceptionMethod::new(i + 1, m.steps, matrix(&path("r"), &m.r)?, m.cpu, penalty))
            })
            .collect()
    }

    /// Validated model, methods and their discretization.
    pub fn scenario(&self) -> Result<Scenario> {
        let sc = Scenario::new(self.model()?, self.methods()?)?;
        if self.model.x0.len() != sc.model().nx() {
            return Err(PlateError::Dimension(format!("x0 has {} entries, A is {}x{}", self.model.x0.len(), sc.model().nx(), sc.model().nx())));
        }
        Ok(sc)
    }

    /// Detection noise per method, nominal where not overridden.
    pub fn true_r(&self, scenario: &Scenario) -> Result<Vec<Option<Mat>>> {
        if self.sim.true_r.len() > scenario.methods.len() {
            return Err(config_err("sim.true_r", "more entries than methods"));
        }
        self.sim
            .true_r
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.as_ref()
                    .map(|rows| {
                        let m = matrix(&format!("sim.true_r[{i}]"), rows)?;
                        let nz = scenario.model().nz();
                        if m.shape() != (nz, nz) {
                            return Err(PlateError::Dimension(format!("sim.true_r[{i}] must be {nz}x{nz}")));
                        }
                        Ok(m)
                    })
                    .transpose()
            })
            .collect()
    }

    pub fn certificate(&self) -> Option<&CertificateFile> {
        self.bounds.certificate.as_ref()
    }
}

/// Flag overrides applied on top of a loaded file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub tf: Option<f64>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(tf) = self.tf {
            cfg.cost.tf = tf;
            if let Some(Experiment::CostHistogram(e)) = &mut cfg.experiment {
                e.tf = tf;
            }
            if let Some(Experiment::MovingHorizon(e)) = &mut cfg.experiment {
                e.tf = tf;
            }
        }
        if let Some(seed) = self.seed {
            cfg.sim.seed = seed;
        }
        if let Some(runs) = self.runs {
            cfg.sim.runs = runs;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRACKING: &str = r#"{
        "model": {
            "a": [[0,1,0,0],[0,0,0,0],[0,0,0,1],[0,0,0,0]],
            "b": [[0,0],[1,0],[0,0],[0,1]],
            "w": [[0.5,0],[0,0.5]],
            "c": [[1,0,0,0],[0,0,1,0]],
            "x0": [0,0,0,0],
            "p0": [[4,0,0,0],[0,4,0,0],[0,0,4,0],[0,0,0,4]],
            "dt_s": 0.03333333333333333
        },
        "methods": [
            {"steps": 3, "r": [[0.5,0],[0,0.5]], "cpu": 0.5, "penalty": 0.05},
            {"steps": 9, "r": [[0.05,0],[0,0.05]], "cpu": 0.8, "lambda_load": 1.0}
        ]
    }"#;

    #[test]
    fn parses_the_tracking_scenario() {
        let cfg = ScenarioConfig::from_json(TRACKING).unwrap();
        let sc = cfg.scenario().unwrap();
        assert_eq!(sc.model(), &crate::scenario::tracking_model());
        let expect = crate::scenario::tracking_methods();
        assert_eq!(sc.methods[0], expect[0]);
        assert!((sc.methods[1].penalty - 0.24).abs() < 1e-12);
        assert_eq!(cfg.cost, CostConfig::default());
    }

    #[test]
    fn schema_errors_name_the_path() {
        let bad = TRACKING.replace("\"cpu\": 0.8", "\"cpu\": \"high\"");
        match ScenarioConfig::from_json(&bad) {
            Err(PlateError::Config { path, .. }) => assert_eq!(path, "methods[1].cpu"),
            other => panic!("{other:?}"),
        }
        let bad = TRACKING.replace("\"dt_s\"", "\"dts\"");
        assert!(matches!(ScenarioConfig::from_json(&bad), Err(PlateError::Config { .. })));
    }

    #[test]
    fn dimension_mismatch_is_a_validation_error() {
        let bad = TRACKING.replace("\"x0\": [0,0,0,0]", "\"x0\": [0,0,0]");
        let err = ScenarioConfig::from_json(&bad).unwrap().scenario().unwrap_err();
        assert!(err.is_validation());
        let bad = TRACKING.replace("[[0.5,0],[0,0.5]], \"cpu\"", "[[0.5,0,0],[0,0.5,0],[0,0,1]], \"cpu\"");
        assert!(ScenarioConfig::from_json(&bad).unwrap().scenario().unwrap_err().is_validation());
    }

    #[test]
    fn missing_penalty_is_reported() {
        let bad = TRACKING.replace(", \"penalty\": 0.05", "");
        match ScenarioConfig::from_json(&bad).unwrap().scenario() {
            Err(PlateError::Config { path, .. }) => assert_eq!(path, "methods[0].penalty"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut cfg = ScenarioConfig::from_json(TRACKING).unwrap();
        Overrides { tf: Some(2.0), seed: Some(9), runs: Some(3) }.apply(&mut cfg);
        assert_eq!((cfg.cost.tf, cfg.sim.seed, cfg.sim.runs), (2.0, 9, 3));
    }
}
