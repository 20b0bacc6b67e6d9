//! On-disk factorization bundle: `meta.json`, `assignment.npy` and one
//! `u_<i>.npy` / `v_<i>.npy` pair per cluster.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::npy::{load_ids, load_matrix, save_ids, save_matrix};
use crate::error::{MessiError, Result};
use crate::messi::{Block, MessiFactorization};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub format_version: u32,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub dims: Vec<usize>,
    pub q: f64,
    pub seed: u64,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub params: u64,
    pub compression_rate: f64,
    pub cluster_sizes: Vec<usize>,
    /// Squared residual of each block against the source matrix.
    pub block_residuals: Vec<f64>,
}

fn u_name(i: usize) -> String {
    format!("u_{i}.npy")
}

fn v_name(i: usize) -> String {
    format!("v_{i}.npy")
}

fn mismatch(dir: &Path, msg: impl std::fmt::Display) -> MessiError {
    MessiError::Format(format!("bundle {}: {msg}", dir.display()))
}

/// Writes the bundle into a temporary sibling directory and renames it into
/// place; on error nothing is left at `dir`.
pub fn save_bundle(f: &MessiFactorization, meta: &BundleMeta, dir: &Path) -> Result<()> {
    check_meta(f, meta, dir)?;
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| MessiError::io(&parent, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".bundle-")
        .tempdir_in(&parent)
        .map_err(|e| MessiError::io(&parent, e))?;

    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| MessiError::Format(format!("cannot encode meta: {e}")))?;
    let meta_path = staging.path().join("meta.json");
    fs::write(&meta_path, json).map_err(|e| MessiError::io(&meta_path, e))?;
    save_ids(f.assignment(), &staging.path().join("assignment.npy"))?;
    for (i, block) in f.blocks().iter().enumerate() {
        save_matrix(&block.u, &staging.path().join(u_name(i)))?;
        save_matrix(&block.v, &staging.path().join(v_name(i)))?;
    }

    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| MessiError::io(dir, e))?;
    }
    let staged = staging.keep();
    fs::rename(&staged, dir).map_err(|e| {
        let _ = fs::remove_dir_all(&staged);
        MessiError::io(dir, e)
    })
}

fn check_meta(f: &MessiFactorization, meta: &BundleMeta, dir: &Path) -> Result<()> {
    if meta.format_version != BUNDLE_FORMAT_VERSION {
        return Err(mismatch(
            dir,
            format!("format_version {} (expected {BUNDLE_FORMAT_VERSION})", meta.format_version),
        ));
    }
    let checks = [
        ("n", meta.n == f.n()),
        ("d", meta.d == f.d()),
        ("k", meta.k == f.k()),
        ("dims", meta.dims == f.dims()),
        ("params", meta.params == f.param_count()),
        ("cluster_sizes", meta.cluster_sizes == f.cluster_sizes()),
        ("block_residuals", meta.block_residuals.len() == f.k()),
    ];
    for (field, ok) in checks {
        if !ok {
            return Err(mismatch(dir, format!("meta field '{field}' disagrees with the factors")));
        }
    }
    Ok(())
}

/// Loads and validates a bundle.
pub fn load_bundle(dir: &Path) -> Result<(MessiFactorization, BundleMeta)> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| MessiError::io(&meta_path, e))?;
    let meta: BundleMeta = serde_json::from_str(&text)
        .map_err(|e| MessiError::Format(format!("{}: {e}", meta_path.display())))?;
    if meta.dims.len() != meta.k {
        return Err(mismatch(
            dir,
            format!("meta lists {} dims for k = {}", meta.dims.len(), meta.k),
        ));
    }

    let assignment = load_ids(&dir.join("assignment.npy"))?;
    if assignment.len() != meta.n {
        return Err(mismatch(
            dir,
            format!("assignment has {} entries, meta says n = {}", assignment.len(), meta.n),
        ));
    }
    if let Some(&c) = assignment.iter().find(|&&c| c >= meta.k) {
        return Err(mismatch(dir, format!("assignment holds cluster id {c} >= k = {}", meta.k)));
    }
    let mut row_ids = vec![Vec::new(); meta.k];
    for (row, &c) in assignment.iter().enumerate() {
        row_ids[c].push(row);
    }
    let mut blocks = Vec::with_capacity(meta.k);
    for (i, ids) in row_ids.into_iter().enumerate() {
        let u = load_matrix(&dir.join(u_name(i)))?;
        let v = load_matrix(&dir.join(v_name(i)))?;
        if v.shape() != (meta.dims[i], meta.d) {
            return Err(mismatch(
                dir,
                format!(
                    "{} is {}x{}, meta expects {}x{}",
                    v_name(i),
                    v.rows(),
                    v.cols(),
                    meta.dims[i],
                    meta.d
                ),
            ));
        }
        if u.shape() != (ids.len(), meta.dims[i]) {
            return Err(mismatch(
                dir,
                format!(
                    "{} is {}x{}, assignment and dims expect {}x{}",
                    u_name(i),
                    u.rows(),
                    u.cols(),
                    ids.len(),
                    meta.dims[i]
                ),
            ));
        }
        blocks.push(Block { row_ids: ids, u, v });
    }
    let extra = dir.join(u_name(meta.k));
    if extra.exists() {
        return Err(mismatch(dir, format!("found {} but meta says k = {}", u_name(meta.k), meta.k)));
    }
    let f = MessiFactorization::from_parts(meta.n, meta.d, assignment, blocks)
        .map_err(|e| mismatch(dir, e))?;
    check_meta(&f, &meta, dir)?;
    Ok((f, meta))
}
