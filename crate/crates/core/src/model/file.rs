use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{SanModel, SyncTransition, Topology};
use crate::{Error, Result};

/// On-disk form of a [`SanModel`] (JSON).
///
/// ```json
/// {
///   "k": 1,
///   "state_counts": [2],
///   "local": [[[0, 2], [0, 0]]],
///   "syncs": [{"rate": 1.0, "factors": ["I"]}],
///   "pi0_factors": [[1, 0]],
///   "topology": [[1]]
/// }
/// ```
///
/// A sync factor is either a nested array or the string `"I"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub k: usize,
    pub state_counts: Vec<usize>,
    pub local: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub syncs: Vec<SyncSpec>,
    pub pi0_factors: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<Vec<Vec<u8>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncSpec {
    pub rate: f64,
    pub factors: Vec<FactorSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactorSpec {
    Named(String),
    Matrix(Vec<Vec<f64>>),
}

fn matrix_from_rows(rows: &[Vec<f64>], n: usize, field: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Model(format!("{field}: expected a {n}x{n} matrix")));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Model(format!("{field}: entries must be finite")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Model(format!("parse error: {e}")))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn to_model(&self) -> Result<SanModel> {
        let k = self.k;
        if self.state_counts.len() != k {
            return Err(Error::Model(format!(
                "state_counts has {} entries, expected k = {k}",
                self.state_counts.len()
            )));
        }
        if self.local.len() != k {
            return Err(Error::Model(format!("local has {} entries, expected k = {k}", self.local.len())));
        }
        let local = self
            .local
            .iter()
            .zip(&self.state_counts)
            .enumerate()
            .map(|(i, (rows, &n))| matrix_from_rows(rows, n, &format!("local[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let mut syncs = Vec::with_capacity(self.syncs.len());
        for (t, s) in self.syncs.iter().enumerate() {
            if !s.rate.is_finite() {
                return Err(Error::Model(format!("syncs[{t}].rate must be finite")));
            }
            if s.factors.len() != k {
                return Err(Error::Model(format!(
                    "syncs[{t}].factors has {} entries, expected k = {k}",
                    s.factors.len()
                )));
            }
            let factors = s
                .factors
                .iter()
                .zip(&self.state_counts)
                .enumerate()
                .map(|(i, (f, &n))| match f {
                    FactorSpec::Named(name) if name == "I" => Ok(DMatrix::identity(n, n)),
                    FactorSpec::Named(name) => Err(Error::Model(format!(
                        "syncs[{t}].factors[{i}]: unknown shorthand {name:?}, only \"I\" is allowed"
                    ))),
                    FactorSpec::Matrix(rows) => {
                        matrix_from_rows(rows, n, &format!("syncs[{t}].factors[{i}]"))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            syncs.push(SyncTransition { rate: s.rate, factors });
        }
        let topology = self.topology.as_deref().map(Topology::from_rows).transpose()?;
        SanModel::new(local, syncs, self.pi0_factors.clone(), topology)
    }

    pub fn from_model(model: &SanModel) -> Self {
        let syncs = model
            .syncs()
            .iter()
            .map(|s| SyncSpec {
                rate: s.rate,
                factors: s
                    .factors
                    .iter()
                    .map(|f| {
                        if *f == DMatrix::identity(f.nrows(), f.ncols()) {
                            FactorSpec::Named("I".into())
                        } else {
                            FactorSpec::Matrix(matrix_rows(f))
                        }
                    })
                    .collect(),
            })
            .collect();
        Self {
            k: model.k(),
            state_counts: model.state_counts(),
            local: model.local().iter().map(matrix_rows).collect(),
            syncs,
            pi0_factors: model.pi0_factors().to_vec(),
            topology: Some(model.topology().rows()),
        }
    }
}

impl SanModel {
    pub fn from_json(text: &str) -> Result<Self> {
        ModelFile::from_json(text)?.to_model()
    }

    pub fn to_json(&self) -> String {
        ModelFile::from_model(self).to_json()
    }
}
