//! Discretely observed profiles and labelled datasets.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::Grid;
use crate::error::{Error, Result};

/// `P` functional covariates observed on one common grid; one `n x C`
/// matrix per covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub grid: Grid,
    pub covariate_ids: Vec<String>,
    #[serde(with = "matrices")]
    pub values: Vec<DMatrix<f64>>,
}

mod matrices {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrapped(#[serde(with = "crate::persist::matrix")] DMatrix<f64>);

    pub fn serialize<S: Serializer>(v: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|m| Wrapped(m.clone())).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        Ok(Vec::<Wrapped>::deserialize(d)?.into_iter().map(|w| w.0).collect())
    }
}

impl ProfileSet {
    pub fn new(grid: Grid, covariate_ids: Vec<String>, values: Vec<DMatrix<f64>>) -> Result<Self> {
        if covariate_ids.len() != values.len() || values.is_empty() {
            return Err(Error::Schema(format!(
                "{} covariate ids for {} value matrices",
                covariate_ids.len(),
                values.len()
            )));
        }
        let n = values[0].nrows();
        for (id, m) in covariate_ids.iter().zip(&values) {
            if m.ncols() != grid.len() {
                return Err(Error::Schema(format!(
                    "covariate {id} has {} grid columns, expected {}",
                    m.ncols(),
                    grid.len()
                )));
            }
            if m.nrows() != n {
                return Err(Error::Schema(format!(
                    "covariate {id} has {} samples, expected {n}",
                    m.nrows()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("covariate {id} has non-finite values")));
            }
        }
        Ok(Self {
            grid,
            covariate_ids,
            values,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.values[0].nrows()
    }

    pub fn n_covariates(&self) -> usize {
        self.values.len()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            grid: self.grid.clone(),
            covariate_ids: self.covariate_ids.clone(),
            values: self.values.iter().map(|m| m.select_rows(rows)).collect(),
        }
    }

    /// Checks that `other` was observed on the same grid and covariates.
    pub fn check_compatible(&self, grid: &Grid, covariate_ids: &[String]) -> Result<()> {
        if self.grid.len() != grid.len()
            || self
                .grid
                .points()
                .iter()
                .zip(grid.points())
                .any(|(a, b)| (a - b).abs() > 1e-9)
        {
            return Err(Error::Schema(format!(
                "profile grid ({} points) does not match the frozen grid ({} points)",
                self.grid.len(),
                grid.len()
            )));
        }
        if self.covariate_ids != covariate_ids {
            return Err(Error::Schema(format!(
                "covariates {:?} do not match the frozen covariates {:?}",
                self.covariate_ids, covariate_ids
            )));
        }
        Ok(())
    }
}

/// Profiles with aligned sample ids and scalar responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub profiles: ProfileSet,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(ids: Vec<String>, profiles: ProfileSet, y: Vec<f64>) -> Result<Self> {
        if ids.len() != y.len() || profiles.n_samples() != y.len() {
            return Err(Error::Schema(format!(
                "{} ids, {} profiles and {} responses",
                ids.len(),
                profiles.n_samples(),
                y.len()
            )));
        }
        Ok(Self { ids, profiles, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            profiles: self.profiles.select(rows),
            y: rows.iter().map(|&i| self.y[i]).collect(),
        }
    }
}
