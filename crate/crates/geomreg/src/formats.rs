//! JSON forms of standardization statistics, Gram matrices and trained models.
//!
//! Matrices are stored row-major with explicit shape. Struct fields serialize
//! in declaration order, so reports have a stable key order.

use std::fs;
use std::path::Path;

use geomreg_core::data::StandardizationStats;
use geomreg_core::gram::StabilizedGram;
use geomreg_core::mlp::{Head, Layer, MlpModel};
use geomreg_core::penalty::PenaltyConfig;
use geomreg_core::pipeline::FittedNetwork;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixJson {
    fn from(m: &DMatrix<f64>) -> Self {
        MatrixJson {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

impl MatrixJson {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(CliError::Data {
                path: "<json>".into(),
                message: format!("matrix data has {} entries, shape is {}×{}", self.data.len(), self.rows, self.cols),
            });
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsJson {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub constant_flags: Vec<bool>,
}

impl From<&StandardizationStats> for StatsJson {
    fn from(s: &StandardizationStats) -> Self {
        StatsJson {
            means: s.means.clone(),
            stds: s.stds.clone(),
            constant_flags: s.constant_flags.clone(),
        }
    }
}

impl StatsJson {
    pub fn to_stats(&self) -> StandardizationStats {
        StandardizationStats {
            means: self.means.clone(),
            stds: self.stds.clone(),
            constant_flags: self.constant_flags.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramJson {
    pub dim: usize,
    pub delta: f64,
    pub c_n: MatrixJson,
    pub c_delta: MatrixJson,
    /// Eigenvalues of `c_delta`, non-increasing.
    pub eigenvalues: Vec<f64>,
}

impl From<&StabilizedGram> for GramJson {
    fn from(g: &StabilizedGram) -> Self {
        GramJson {
            dim: g.dim(),
            delta: g.delta(),
            c_n: g.c_n().into(),
            c_delta: g.c_delta().into(),
            eigenvalues: g.eigenvalues().iter().copied().collect(),
        }
    }
}

impl GramJson {
    pub fn to_gram(&self) -> Result<StabilizedGram> {
        Ok(StabilizedGram::from_gram_matrix(self.c_n.to_matrix()?, self.delta)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerJson {
    /// `fan_in × fan_out`.
    pub weight: MatrixJson,
    pub offset: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    /// `"linear"` or `"softmax"`.
    pub head: String,
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<LayerJson>,
}

impl From<&MlpModel> for ModelJson {
    fn from(m: &MlpModel) -> Self {
        ModelJson {
            head: match m.head() {
                Head::Linear => "linear".into(),
                Head::Softmax { .. } => "softmax".into(),
            },
            layer_sizes: m.layer_sizes(),
            layers: m
                .layers()
                .iter()
                .map(|l| LayerJson {
                    weight: (&l.weight).into(),
                    offset: l.offset.iter().copied().collect(),
                })
                .collect(),
        }
    }
}

impl ModelJson {
    pub fn to_model(&self) -> Result<MlpModel> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(Layer {
                    weight: l.weight.to_matrix()?,
                    offset: DVector::from_vec(l.offset.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let head = match self.head.as_str() {
            "linear" => Head::Linear,
            "softmax" => Head::Softmax {
                classes: layers.last().map_or(0, |l| l.offset.len()),
            },
            other => {
                return Err(CliError::Data {
                    path: "<json>".into(),
                    message: format!("unknown head `{other}`"),
                })
            }
        };
        Ok(MlpModel::new(layers, head)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyJson {
    pub family: String,
    pub param_names: Vec<String>,
    pub params: Vec<f64>,
    pub gram: Option<GramJson>,
}

impl From<&PenaltyConfig> for PenaltyJson {
    fn from(p: &PenaltyConfig) -> Self {
        let family = p.family();
        PenaltyJson {
            family: family.name().into(),
            param_names: family.param_names().iter().map(|s| s.to_string()).collect(),
            params: p.params(),
            gram: p.gram().map(|g| GramJson::from(&**g)),
        }
    }
}

/// Everything needed to predict on raw feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModelJson {
    pub feature_names: Option<Vec<String>>,
    pub class_names: Option<Vec<String>>,
    /// Raw feature columns kept by screening.
    pub selected_features: Option<Vec<usize>>,
    pub standardization: StatsJson,
    pub penalty: PenaltyJson,
    pub model: ModelJson,
}

impl FittedModelJson {
    pub fn new(fitted: &FittedNetwork, feature_names: Option<&[String]>, class_names: Option<&[String]>) -> Self {
        FittedModelJson {
            feature_names: feature_names.map(<[String]>::to_vec),
            class_names: class_names.map(<[String]>::to_vec),
            selected_features: fitted.selected.clone(),
            standardization: (&fitted.stats).into(),
            penalty: (&fitted.penalty).into(),
            model: (&fitted.model).into(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::json(path.display().to_string(), e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::json(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use geomreg_core::data::standardize;
    use geomreg_core::gram::build_gram;
    use geomreg_core::mlp::{forward, init_model};

    #[test]
    fn stats_keys_and_round_trip() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 3.0, 5.0, 5.0, 5.0]);
        let (stats, _) = standardize(&x).unwrap();
        let json = serde_json::to_value(StatsJson::from(&stats)).unwrap();
        let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["constant_flags", "means", "stds"]);
        let back: StatsJson = serde_json::from_value(json).unwrap();
        assert_eq!(back.to_stats(), stats);
    }

    #[test]
    fn matrix_is_row_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let j = MatrixJson::from(&m);
        assert_eq!(j.data, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(j.to_matrix().unwrap(), m);
        let bad = MatrixJson { rows: 2, cols: 2, data: vec![1.0] };
        assert!(bad.to_matrix().is_err());
    }

    #[test]
    fn gram_round_trip() {
        let h = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, -1.0, 0.2, 0.3, -0.7, 2.0, 1.0]);
        let g = build_gram(&h, 1e-3).unwrap();
        let text = serde_json::to_string(&GramJson::from(&g)).unwrap();
        let back: GramJson = serde_json::from_str(&text).unwrap();
        let g2 = back.to_gram().unwrap();
        assert_eq!(g2.c_n(), g.c_n());
        assert_eq!(g2.c_delta(), g.c_delta());
    }

    #[test]
    fn model_round_trip_preserves_outputs() {
        for head in [Head::Linear, Head::Softmax { classes: 3 }] {
            let out = head.output_dim();
            let model = init_model(&[4, 5, 3, out], head, 7).unwrap();
            let text = serde_json::to_string(&ModelJson::from(&model)).unwrap();
            let back: ModelJson = serde_json::from_str(&text).unwrap();
            let m2 = back.to_model().unwrap();
            let x = DMatrix::from_fn(6, 4, |i, j| (i as f64 - j as f64) * 0.3);
            assert_eq!(forward(&model, &x).unwrap(), forward(&m2, &x).unwrap());
        }
    }

    #[test]
    fn unknown_head_rejected() {
        let model = init_model(&[2, 3, 1], Head::Linear, 1).unwrap();
        let mut j = ModelJson::from(&model);
        j.head = "tanh".into();
        assert!(j.to_model().is_err());
    }
}
