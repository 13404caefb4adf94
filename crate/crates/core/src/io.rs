//! Long-format CSV files and ingestion of externally recorded profiles.
//!
//! Profiles are stored one observation per row (`sample_id, covariate_id,
//! t, value`), responses one sample per row (`sample_id, y`).

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::basis::{smooth_irregular, BSplineBasis, FunctionalData, Grid, Penalty};
use crate::data::{Dataset, ProfileSet};
use crate::error::{Error, Result};
use crate::persist::write_atomic;
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub sample_id: String,
    pub covariate_id: String,
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub sample_id: String,
    pub y: f64,
}

fn read_records<T: serde::de::DeserializeOwned, R: Read>(reader: R) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

fn write_records<T: Serialize, W: Write>(records: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_profiles<R: Read>(reader: R) -> Result<Vec<ProfileRecord>> {
    read_records(reader)
}

pub fn read_responses<R: Read>(reader: R) -> Result<Vec<ResponseRecord>> {
    read_records(reader)
}

pub fn write_profiles<W: Write>(records: &[ProfileRecord], writer: W) -> Result<()> {
    write_records(records, writer)
}

pub fn write_responses<W: Write>(records: &[ResponseRecord], writer: W) -> Result<()> {
    write_records(records, writer)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn save_csv<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    write_records(records, &mut buf)?;
    write_atomic(path, &buf)
}

pub fn load_profile_records(path: &Path) -> Result<Vec<ProfileRecord>> {
    read_profiles(open(path)?)
}

pub fn load_response_records(path: &Path) -> Result<Vec<ResponseRecord>> {
    read_responses(open(path)?)
}

pub fn save_profile_records(path: &Path, records: &[ProfileRecord]) -> Result<()> {
    save_csv(path, records)
}

pub fn save_response_records(path: &Path, records: &[ResponseRecord]) -> Result<()> {
    save_csv(path, records)
}

/// Observations of one (sample, covariate) pair, in increasing `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub t: Vec<f64>,
    pub values: Vec<f64>,
}

/// Records grouped by sample and covariate, both in order of first
/// appearance. `series[i][p]` belongs to sample `i`, covariate `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedProfiles {
    pub sample_ids: Vec<String>,
    pub covariate_ids: Vec<String>,
    pub series: Vec<Vec<Series>>,
}

/// Validates and groups long-format records. Within a sample and covariate
/// `t` must be strictly increasing in file order, and every sample must
/// carry every covariate.
pub fn group_records(records: &[ProfileRecord]) -> Result<GroupedProfiles> {
    if records.is_empty() {
        return Err(Error::Data("no profile records".into()));
    }
    let mut sample_index: HashMap<&str, usize> = HashMap::new();
    let mut covariate_index: HashMap<&str, usize> = HashMap::new();
    let mut sample_ids = Vec::new();
    let mut covariate_ids = Vec::new();
    let mut cells: HashMap<(usize, usize), Series> = HashMap::new();
    for (row, r) in records.iter().enumerate() {
        if !r.t.is_finite() || !r.value.is_finite() {
            return Err(Error::Data(format!("row {}: non-finite t or value", row + 1)));
        }
        if !(0.0..=1.0).contains(&r.t) {
            return Err(Error::Data(format!("row {}: t = {} outside [0, 1]", row + 1, r.t)));
        }
        let i = *sample_index.entry(&r.sample_id).or_insert_with(|| {
            sample_ids.push(r.sample_id.clone());
            sample_ids.len() - 1
        });
        let p = *covariate_index.entry(&r.covariate_id).or_insert_with(|| {
            covariate_ids.push(r.covariate_id.clone());
            covariate_ids.len() - 1
        });
        let s = cells.entry((i, p)).or_insert_with(|| Series { t: Vec::new(), values: Vec::new() });
        if let Some(&last) = s.t.last() {
            if r.t == last {
                return Err(Error::Data(format!(
                    "row {}: duplicate t = {} for sample {} covariate {}",
                    row + 1,
                    r.t,
                    r.sample_id,
                    r.covariate_id
                )));
            }
            if r.t < last {
                return Err(Error::Data(format!(
                    "row {}: non-monotone t for sample {} covariate {} ({} after {last})",
                    row + 1,
                    r.sample_id,
                    r.covariate_id,
                    r.t
                )));
            }
        }
        s.t.push(r.t);
        s.values.push(r.value);
    }
    let mut series = Vec::with_capacity(sample_ids.len());
    for (i, id) in sample_ids.iter().enumerate() {
        let mut row = Vec::with_capacity(covariate_ids.len());
        for (p, cov) in covariate_ids.iter().enumerate() {
            let s = cells.remove(&(i, p)).ok_or_else(|| {
                Error::Data(format!("incomplete grid: sample {id} has no observations of covariate {cov}"))
            })?;
            row.push(s);
        }
        series.push(row);
    }
    Ok(GroupedProfiles {
        sample_ids,
        covariate_ids,
        series,
    })
}

/// Converts records observed on one common grid spanning `[0, 1]`.
pub fn records_to_profiles(records: &[ProfileRecord]) -> Result<(Vec<String>, ProfileSet)> {
    let g = group_records(records)?;
    let reference = &g.series[0][0].t;
    for (id, row) in g.sample_ids.iter().zip(&g.series) {
        for (cov, s) in g.covariate_ids.iter().zip(row) {
            if &s.t != reference {
                return Err(Error::Data(format!(
                    "incomplete grid: sample {id} covariate {cov} has {} points, not the {} shared grid points",
                    s.t.len(),
                    reference.len()
                )));
            }
        }
    }
    let grid = Grid::new(reference.clone())?;
    let values = (0..g.covariate_ids.len())
        .map(|p| DMatrix::from_fn(g.sample_ids.len(), grid.len(), |i, j| g.series[i][p].values[j]))
        .collect();
    let profiles = ProfileSet::new(grid, g.covariate_ids, values)?;
    Ok((g.sample_ids, profiles))
}

pub fn profiles_to_records(ids: &[String], profiles: &ProfileSet) -> Vec<ProfileRecord> {
    let mut out = Vec::with_capacity(ids.len() * profiles.n_covariates() * profiles.grid.len());
    for (i, id) in ids.iter().enumerate() {
        for (cov, m) in profiles.covariate_ids.iter().zip(&profiles.values) {
            for (j, &t) in profiles.grid.points().iter().enumerate() {
                out.push(ProfileRecord {
                    sample_id: id.clone(),
                    covariate_id: cov.clone(),
                    t,
                    value: m[(i, j)],
                });
            }
        }
    }
    out
}

/// Responses reordered to `ids`; every id must appear exactly once on
/// both sides.
pub fn align_responses(ids: &[String], responses: &[ResponseRecord]) -> Result<Vec<f64>> {
    let mut by_id: HashMap<&str, f64> = HashMap::with_capacity(responses.len());
    for r in responses {
        if !r.y.is_finite() {
            return Err(Error::Data(format!("non-finite response for sample {}", r.sample_id)));
        }
        if by_id.insert(&r.sample_id, r.y).is_some() {
            return Err(Error::Data(format!("duplicate response for sample {}", r.sample_id)));
        }
    }
    let known: HashSet<&str> = ids.iter().map(String::as_str).collect();
    if let Some(orphan) = responses.iter().find(|r| !known.contains(r.sample_id.as_str())) {
        return Err(Error::Data(format!("orphan response: sample {} has no profiles", orphan.sample_id)));
    }
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Data(format!("orphan profile: sample {id} has no response")))
        })
        .collect()
}

pub fn load_dataset(profiles: &Path, responses: &Path) -> Result<Dataset> {
    let (ids, set) = records_to_profiles(&load_profile_records(profiles)?)?;
    let y = align_responses(&ids, &load_response_records(responses)?)?;
    Dataset::new(ids, set, y)
}

pub fn save_dataset(data: &Dataset, profiles: &Path, responses: &Path) -> Result<()> {
    save_profile_records(profiles, &profiles_to_records(&data.ids, &data.profiles))?;
    let ys: Vec<ResponseRecord> = data
        .ids
        .iter()
        .zip(&data.y)
        .map(|(id, &y)| ResponseRecord { sample_id: id.clone(), y })
        .collect();
    save_response_records(responses, &ys)
}

/// Response derived as the root mean square of `inside - setpoint` over
/// the retained observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmsSpec {
    pub inside: String,
    pub setpoint: String,
}

/// Fractions of the ingested samples assigned to each Phase I role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub tuning: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSpec {
    /// Leading fraction of the domain to discard.
    pub trim: f64,
    pub order: usize,
    pub n_basis: usize,
    pub penalty: Penalty,
    /// Uniform grid size on which smoothed curves are written out.
    pub output_points: usize,
    pub rms: Option<RmsSpec>,
    pub split: Option<SplitSpec>,
}

impl Default for IngestSpec {
    fn default() -> Self {
        Self {
            trim: 0.0,
            order: 4,
            n_basis: 70,
            penalty: Penalty::default_gcv(),
            output_points: 100,
            rms: None,
            split: None,
        }
    }
}

impl IngestSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.trim) {
            return Err(Error::Config(format!("trim must lie in [0, 1), got {}", self.trim)));
        }
        if let Some(s) = &self.split {
            let parts = [s.train, s.validation, s.tuning];
            if parts.iter().any(|&f| !(f > 0.0 && f < 1.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "split fractions must be positive and sum to 1, got {parts:?}"
                )));
            }
        }
        BSplineBasis::new(self.order, self.n_basis)?;
        Grid::uniform(self.output_points)?;
        Ok(())
    }
}

/// Affine map of `[trim, 1]` onto `[0, 1]`; the identity when `trim` is 0.
pub fn remap(t: f64, trim: f64) -> f64 {
    if trim == 0.0 {
        t
    } else {
        ((t - trim) / (1.0 - trim)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub ids: Vec<String>,
    pub functional: Vec<FunctionalData>,
    /// Smoothing parameter chosen for each covariate.
    pub lambdas: Vec<f64>,
    pub y: Option<Vec<f64>>,
    /// Trimmed and re-mapped observations; ingesting them again with no
    /// trim reproduces `functional` exactly.
    pub canonical: Vec<ProfileRecord>,
}

impl Ingested {
    /// Smoothed curves on `grid`.
    pub fn profiles(&self, grid: &Grid) -> Result<ProfileSet> {
        ProfileSet::new(
            grid.clone(),
            self.functional.iter().map(|f| f.covariate_id.clone()).collect(),
            self.functional.iter().map(|f| f.eval(grid)).collect(),
        )
    }

    pub fn dataset(&self, grid: &Grid) -> Result<Dataset> {
        let y = self
            .y
            .clone()
            .ok_or_else(|| Error::Config("no responses were supplied or derived".into()))?;
        Dataset::new(self.ids.clone(), self.profiles(grid)?, y)
    }
}

fn rms_response(g: &GroupedProfiles, spec: &RmsSpec) -> Result<Vec<f64>> {
    let find = |name: &str| {
        g.covariate_ids
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Config(format!("RMS response needs covariate {name}, which is absent")))
    };
    let (a, b) = (find(&spec.inside)?, find(&spec.setpoint)?);
    g.sample_ids
        .iter()
        .zip(&g.series)
        .map(|(id, row)| {
            let (x, s) = (&row[a], &row[b]);
            if x.t != s.t {
                return Err(Error::Data(format!(
                    "sample {id}: {} and {} are observed at different t",
                    spec.inside, spec.setpoint
                )));
            }
            let ms = x.values.iter().zip(&s.values).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / x.t.len() as f64;
            Ok(ms.sqrt())
        })
        .collect()
}

/// Trims, re-maps and smooths long-format profiles. Responses come either
/// from `responses` or from the RMS rule in `spec`, never both.
pub fn ingest(records: &[ProfileRecord], responses: Option<&[ResponseRecord]>, spec: &IngestSpec) -> Result<Ingested> {
    spec.validate()?;
    let grouped = group_records(records)?;
    let cut = spec.trim * (1.0 - 1e-12);
    let mut canonical = Vec::with_capacity(records.len());
    let mut kept = grouped.clone();
    for (i, row) in kept.series.iter_mut().enumerate() {
        for (p, s) in row.iter_mut().enumerate() {
            let (t, v): (Vec<f64>, Vec<f64>) = s
                .t
                .iter()
                .zip(&s.values)
                .filter(|(&t, _)| t >= cut)
                .map(|(&t, &v)| (remap(t, spec.trim), v))
                .unzip();
            if t.is_empty() {
                return Err(Error::Data(format!(
                    "sample {} covariate {} has no observations after trimming",
                    grouped.sample_ids[i], grouped.covariate_ids[p]
                )));
            }
            if t.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Data(format!(
                    "sample {} covariate {}: trimmed points collapse onto the same t",
                    grouped.sample_ids[i], grouped.covariate_ids[p]
                )));
            }
            for (&t, &value) in t.iter().zip(&v) {
                canonical.push(ProfileRecord {
                    sample_id: grouped.sample_ids[i].clone(),
                    covariate_id: grouped.covariate_ids[p].clone(),
                    t,
                    value,
                });
            }
            *s = Series { t, values: v };
        }
    }

    let basis = BSplineBasis::new(spec.order, spec.n_basis)?;
    let mut functional = Vec::with_capacity(kept.covariate_ids.len());
    let mut lambdas = Vec::with_capacity(kept.covariate_ids.len());
    for (p, cov) in kept.covariate_ids.iter().enumerate() {
        let samples: Vec<(Vec<f64>, Vec<f64>)> = kept
            .series
            .iter()
            .map(|row| (row[p].t.clone(), row[p].values.clone()))
            .collect();
        let fit = smooth_irregular(&samples, &basis, &spec.penalty, cov)?;
        log::info!("covariate {cov}: lambda {:.3e}, mean df {:.2}", fit.lambda, fit.df);
        lambdas.push(fit.lambda);
        functional.push(fit.data);
    }

    let y = match (responses, &spec.rms) {
        (Some(_), Some(_)) => {
            return Err(Error::Config("responses were supplied and an RMS response was requested".into()))
        }
        (Some(r), None) => Some(align_responses(&kept.sample_ids, r)?),
        (None, Some(rms)) => Some(rms_response(&kept, rms)?),
        (None, None) => None,
    };
    Ok(Ingested {
        ids: kept.sample_ids,
        functional,
        lambdas,
        y,
        canonical,
    })
}

/// Seeded split of a dataset into train, validation and tuning parts.
pub fn split_dataset(data: &Dataset, split: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let n = data.len();
    let n_train = (split.train * n as f64).round() as usize;
    let n_val = (split.validation * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Data(format!("{n} samples cannot be split as {split:?}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(split.seed, &[7]));
    let (train, rest) = order.split_at(n_train);
    let (val, tuning) = rest.split_at(n_val);
    Ok((data.select(train), data.select(val), data.select(tuning)))
}
