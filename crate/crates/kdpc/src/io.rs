//! Plain-text persistence for datasets and fitted predictors.
//!
//! Matrices are stored as headerless CSV with Rust's default float
//! formatting, which prints the shortest string that parses back to the same
//! bits; save/load round trips are therefore exact. Each bundle carries a
//! `meta.toml` with dimensions and a SHA-256 content hash that is recomputed
//! and checked on load.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::kernel::KernelSpec;
use crate::predictor::Predictors;
use crate::{Error, Result};

/// Write a matrix as CSV, one row per line.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m[(i, j)]);
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a matrix written by [`write_matrix_csv`]. All rows must have the
/// same width and every cell must parse as a float.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for cell in line.split(',') {
            let v = cell.trim().parse::<f64>().map_err(|_| {
                Error::Artifact(format!(
                    "{}: line {}: cannot parse {cell:?} as a float",
                    path.display(),
                    lineno + 1
                ))
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Artifact(format!(
                    "{}: line {} has {} cells, expected {}",
                    path.display(),
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Artifact(format!(
            "{}: no matrix rows",
            path.display()
        )));
    }
    let nrows = rows.len();
    let ncols = rows[0].len();
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// SHA-256 over matrix dimensions and little-endian float bytes, plus a list
/// of structural integers. Hex-encoded.
pub fn matrix_bundle_hash(matrices: &[&DMatrix<f64>], dims: &[usize]) -> String {
    let mut hasher = Sha256::new();
    for d in dims {
        hasher.update((*d as u64).to_le_bytes());
    }
    for m in matrices {
        hasher.update((m.nrows() as u64).to_le_bytes());
        hasher.update((m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        let _ = write!(hex, "{b:02x}");
    }
    hex
}

/// Content hash of a window dataset.
pub fn dataset_hash(ds: &Dataset) -> String {
    matrix_bundle_hash(
        &[&ds.d_ini, &ds.d_f_u, &ds.y_f],
        &[ds.t_ini, ds.n_horizon, ds.n_u, ds.n_y],
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    t_ini: usize,
    n_horizon: usize,
    n_u: usize,
    n_y: usize,
    columns: usize,
    sha256: String,
}

impl Dataset {
    /// Write `d_ini.csv`, `d_f_u.csv`, `y_f.csv`, and `meta.toml` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_matrix_csv(&dir.join("d_ini.csv"), &self.d_ini)?;
        write_matrix_csv(&dir.join("d_f_u.csv"), &self.d_f_u)?;
        write_matrix_csv(&dir.join("y_f.csv"), &self.y_f)?;
        let meta = DatasetMeta {
            t_ini: self.t_ini,
            n_horizon: self.n_horizon,
            n_u: self.n_u,
            n_y: self.n_y,
            columns: self.columns(),
            sha256: dataset_hash(self),
        };
        let text = toml::to_string_pretty(&meta)
            .map_err(|e| Error::Artifact(format!("dataset meta: {e}")))?;
        fs::write(dir.join("meta.toml"), text)?;
        Ok(())
    }

    /// Load a bundle written by [`Dataset::save`], verifying dimensions and
    /// the content hash.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta_text = fs::read_to_string(dir.join("meta.toml"))?;
        let meta: DatasetMeta = toml::from_str(&meta_text)
            .map_err(|e| Error::Artifact(format!("dataset meta: {e}")))?;
        let ds = Dataset {
            d_ini: read_matrix_csv(&dir.join("d_ini.csv"))?,
            d_f_u: read_matrix_csv(&dir.join("d_f_u.csv"))?,
            y_f: read_matrix_csv(&dir.join("y_f.csv"))?,
            t_ini: meta.t_ini,
            n_horizon: meta.n_horizon,
            n_u: meta.n_u,
            n_y: meta.n_y,
        };
        let expect_ini_rows = (ds.n_u + ds.n_y) * ds.t_ini;
        if ds.d_ini.nrows() != expect_ini_rows
            || ds.d_f_u.nrows() != ds.n_u * ds.n_horizon
            || ds.y_f.nrows() != ds.n_y * ds.n_horizon
            || ds.d_ini.ncols() != meta.columns
            || ds.d_f_u.ncols() != meta.columns
            || ds.y_f.ncols() != meta.columns
        {
            return Err(Error::Artifact(format!(
                "{}: matrix shapes disagree with meta.toml",
                dir.display()
            )));
        }
        let actual = dataset_hash(&ds);
        if actual != meta.sha256 {
            return Err(Error::Artifact(format!(
                "{}: content hash {actual} does not match recorded {}",
                dir.display(),
                meta.sha256
            )));
        }
        Ok(ds)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictorMeta {
    lambda: f64,
    mu: f64,
    kernel_past: KernelSpec,
    kernel_future: KernelSpec,
    t_ini: usize,
    n_horizon: usize,
    n_u: usize,
    n_y: usize,
    dataset_hash_past: String,
    dataset_hash_future: String,
    sha256: String,
}

fn predictor_hash(p: &Predictors) -> String {
    matrix_bundle_hash(
        &[&p.p1, &p.p2, &p.past_points],
        &[p.t_ini, p.n_horizon, p.n_u, p.n_y],
    )
}

impl Predictors {
    /// Write `p1.csv`, `p2.csv`, `past_points.csv`, and `meta.toml` into
    /// `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_matrix_csv(&dir.join("p1.csv"), &self.p1)?;
        write_matrix_csv(&dir.join("p2.csv"), &self.p2)?;
        write_matrix_csv(&dir.join("past_points.csv"), &self.past_points)?;
        let meta = PredictorMeta {
            lambda: self.lambda,
            mu: self.mu,
            kernel_past: self.kernel_past,
            kernel_future: self.kernel_future,
            t_ini: self.t_ini,
            n_horizon: self.n_horizon,
            n_u: self.n_u,
            n_y: self.n_y,
            dataset_hash_past: self.dataset_hash_past.clone(),
            dataset_hash_future: self.dataset_hash_future.clone(),
            sha256: predictor_hash(self),
        };
        let text = toml::to_string_pretty(&meta)
            .map_err(|e| Error::Artifact(format!("predictor meta: {e}")))?;
        fs::write(dir.join("meta.toml"), text)?;
        Ok(())
    }

    /// Load a bundle written by [`Predictors::save`], verifying dimensions
    /// and the content hash.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta_text = fs::read_to_string(dir.join("meta.toml"))?;
        let meta: PredictorMeta = toml::from_str(&meta_text)
            .map_err(|e| Error::Artifact(format!("predictor meta: {e}")))?;
        let p = Predictors {
            p1: read_matrix_csv(&dir.join("p1.csv"))?,
            p2: read_matrix_csv(&dir.join("p2.csv"))?,
            kernel_past: meta.kernel_past,
            kernel_future: meta.kernel_future,
            past_points: read_matrix_csv(&dir.join("past_points.csv"))?,
            t_ini: meta.t_ini,
            n_horizon: meta.n_horizon,
            n_u: meta.n_u,
            n_y: meta.n_y,
            lambda: meta.lambda,
            mu: meta.mu,
            dataset_hash_past: meta.dataset_hash_past,
            dataset_hash_future: meta.dataset_hash_future,
        };
        let t = p.past_points.ncols();
        if p.p1.ncols() != t
            || p.p1.nrows() != p.n_y * p.n_horizon
            || p.p2.nrows() != p.n_y * p.n_horizon
            || p.p2.ncols() != p.n_u * p.n_horizon
            || p.past_points.nrows() != (p.n_u + p.n_y) * p.t_ini
        {
            return Err(Error::Artifact(format!(
                "{}: matrix shapes disagree with meta.toml",
                dir.display()
            )));
        }
        let actual = predictor_hash(&p);
        if actual != meta.sha256 {
            return Err(Error::Artifact(format!(
                "{}: content hash {actual} does not match recorded {}",
                dir.display(),
                meta.sha256
            )));
        }
        Ok(p)
    }
}
