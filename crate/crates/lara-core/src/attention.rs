//! The localization module: estimate the probability p̂ that a sample is
//! positive by attending only over its metric neighborhood, then select
//! the samples whose estimate clears a threshold.
//!
//! Training-phase selection queries each training point against the index
//! built over the (transformed) training set itself, optionally excluding
//! the query point; testing-phase selection queries test points against
//! the training index and reads only training labels.

use std::path::Path;

use ndarray::ArrayView2;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metric::MahalanobisMetric;
use crate::neighbors::{AnnIndex, NeighborSet};

/// Guards the reciprocal weight against exact-duplicate points.
const RECIPROCAL_DELTA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborScheme {
    /// Top-k nearest neighbors.
    KNeighbor,
    /// Top-k filtered to squared distance below a radius.
    RNeighbor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    /// Every neighbor counts equally: p̂ is the mean neighbor label.
    Identical,
    /// Neighbors weighted by the reciprocal of their squared distance.
    ReciprocalDistance,
}

/// Neighborhood and threshold settings for selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionConfig {
    pub scheme: NeighborScheme,
    pub k: usize,
    /// Radius for the R-neighbor scheme, compared against squared distance.
    pub radius: Option<f64>,
    pub weight: WeightKind,
    /// Selection keeps samples with p̂ strictly greater than this.
    pub thres: f64,
    /// Exclude the query itself during training-phase estimation; with
    /// reciprocal weights the self-term (distance zero) would otherwise
    /// dominate and select everything.
    pub exclude_self: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            scheme: NeighborScheme::KNeighbor,
            k: 150,
            radius: None,
            weight: WeightKind::Identical,
            thres: 0.5,
            exclude_self: true,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::param("k", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.thres) {
            return Err(Error::param("thres", "must lie in [0, 1]"));
        }
        match (self.scheme, self.radius) {
            (NeighborScheme::RNeighbor, None) => {
                Err(Error::param("radius", "required for the R-neighbor scheme"))
            }
            (NeighborScheme::RNeighbor, Some(r)) if !(r > 0.0) => {
                Err(Error::param("radius", "must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Per-query outcome of a selection pass. `p_hat` is aligned to the queried
/// set; `None` marks queries whose neighborhood was empty (possible under
/// the R-neighbor scheme), which are never selected.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub selected_ids: Vec<usize>,
    pub p_hat: Vec<Option<f64>>,
    pub undefined_count: usize,
}

impl SelectionResult {
    fn from_estimates(p_hat: Vec<Option<f64>>, thres: f64) -> Self {
        let selected_ids = p_hat
            .iter()
            .enumerate()
            .filter_map(|(i, p)| match p {
                Some(p) if *p > thres => Some(i),
                _ => None,
            })
            .collect();
        let undefined_count = p_hat.iter().filter(|p| p.is_none()).count();
        SelectionResult {
            selected_ids,
            p_hat,
            undefined_count,
        }
    }
}

/// Neighborhood label average per the configured weighting; `None` when the
/// neighbor set is empty.
pub fn estimate_p(
    neighbor_labels: &[u8],
    neighbor_sq_dists: &[f64],
    weight: WeightKind,
) -> Result<Option<f64>> {
    if neighbor_labels.len() != neighbor_sq_dists.len() {
        return Err(Error::LengthMismatch {
            left: neighbor_labels.len(),
            right: neighbor_sq_dists.len(),
        });
    }
    if neighbor_labels.is_empty() {
        return Ok(None);
    }
    let p = match weight {
        WeightKind::Identical => {
            let sum: f64 = neighbor_labels.iter().map(|&l| l as f64).sum();
            sum / neighbor_labels.len() as f64
        }
        WeightKind::ReciprocalDistance => {
            let mut num = 0.0;
            let mut den = 0.0;
            for (&label, &sq) in neighbor_labels.iter().zip(neighbor_sq_dists) {
                let w = 1.0 / (sq + RECIPROCAL_DELTA);
                num += label as f64 * w;
                den += w;
            }
            num / den
        }
    };
    Ok(Some(p))
}

fn query_neighbors(
    index: &AnnIndex,
    query: ndarray::ArrayView1<'_, f64>,
    cfg: &AttentionConfig,
    exclude_id: Option<usize>,
) -> Result<NeighborSet> {
    match cfg.scheme {
        NeighborScheme::KNeighbor => index.k_neighbor(query, cfg.k, exclude_id),
        NeighborScheme::RNeighbor => {
            let radius = cfg.radius.expect("validated");
            index.r_neighbor(query, cfg.k, radius, exclude_id)
        }
    }
}

fn estimate_over_queries(
    queries: ArrayView2<'_, f64>,
    labels: &[u8],
    index: &AnnIndex,
    cfg: &AttentionConfig,
    exclude_self: bool,
) -> Result<Vec<Option<f64>>> {
    let mut p_hat = Vec::with_capacity(queries.nrows());
    let mut label_buf = Vec::with_capacity(cfg.k);
    for (i, query) in queries.rows().into_iter().enumerate() {
        let exclude = if exclude_self { Some(i) } else { None };
        let neighbors = query_neighbors(index, query, cfg, exclude)?;
        label_buf.clear();
        label_buf.extend(neighbors.ids.iter().map(|&j| labels[j]));
        p_hat.push(estimate_p(&label_buf, &neighbors.sq_dists, cfg.weight)?);
    }
    Ok(p_hat)
}

/// Training-phase selection: estimate p̂ for every training point against
/// the index over the same (transformed) training set and keep points with
/// p̂ strictly above the threshold.
pub fn select_training(
    train: &Dataset,
    metric: &MahalanobisMetric,
    index: &AnnIndex,
    cfg: &AttentionConfig,
) -> Result<SelectionResult> {
    cfg.validate()?;
    let labels = train.label_slice()?;
    if index.len() != train.len() {
        return Err(Error::LengthMismatch {
            left: index.len(),
            right: train.len(),
        });
    }
    let transformed = metric.transform(train.features())?;
    let p_hat = estimate_over_queries(
        transformed.view(),
        labels,
        index,
        cfg,
        cfg.exclude_self,
    )?;
    Ok(SelectionResult::from_estimates(p_hat, cfg.thres))
}

/// Testing-phase selection: queries are test feature rows, the index and
/// labels come from the training set, and self-exclusion does not apply.
/// Test labels are deliberately not a parameter — the phase cannot read
/// them.
pub fn select_testing(
    test_features: ArrayView2<'_, f64>,
    train_labels: &[u8],
    metric: &MahalanobisMetric,
    index: &AnnIndex,
    cfg: &AttentionConfig,
) -> Result<SelectionResult> {
    cfg.validate()?;
    if index.len() != train_labels.len() {
        return Err(Error::LengthMismatch {
            left: index.len(),
            right: train_labels.len(),
        });
    }
    let transformed = metric.transform(test_features)?;
    let p_hat = estimate_over_queries(transformed.view(), train_labels, index, cfg, false)?;
    Ok(SelectionResult::from_estimates(p_hat, cfg.thres))
}

/// Writes a selection as `id,p_hat,selected` CSV; undefined estimates are
/// serialized as the literal `undefined`.
pub fn write_selection(result: &SelectionResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("id,p_hat,selected\n");
    let selected: std::collections::HashSet<usize> =
        result.selected_ids.iter().cloned().collect();
    for (i, p) in result.p_hat.iter().enumerate() {
        let p_str = match p {
            Some(p) => p.to_string(),
            None => "undefined".to_string(),
        };
        out.push_str(&format!(
            "{i},{p_str},{}\n",
            u8::from(selected.contains(&i))
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("write `{}`", path.display()), e))
}

/// Reads a selection written by [`write_selection`].
pub fn read_selection(path: impl AsRef<Path>) -> Result<SelectionResult> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("read `{}`", path.display()), e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "id,p_hat,selected" {
        return Err(Error::UnexpectedColumn {
            path: path.display().to_string(),
            column: header.to_string(),
        });
    }
    let mut p_hat = Vec::new();
    let mut selected_ids = Vec::new();
    for (idx, line) in lines.enumerate() {
        let row = idx + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 3 {
            return Err(Error::ParseCell {
                row,
                column: "<row width>".into(),
                value: format!("{} fields", cells.len()),
            });
        }
        let id: usize = cells[0].parse().map_err(|_| Error::ParseCell {
            row,
            column: "id".into(),
            value: cells[0].to_string(),
        })?;
        if id != idx {
            return Err(Error::ParseCell {
                row,
                column: "id".into(),
                value: cells[0].to_string(),
            });
        }
        let p = match cells[1] {
            "undefined" => None,
            raw => Some(raw.parse::<f64>().map_err(|_| Error::ParseCell {
                row,
                column: "p_hat".into(),
                value: raw.to_string(),
            })?),
        };
        p_hat.push(p);
        match cells[2] {
            "1" => selected_ids.push(idx),
            "0" => {}
            raw => {
                return Err(Error::ParseCell {
                    row,
                    column: "selected".into(),
                    value: raw.to_string(),
                })
            }
        }
    }
    let undefined_count = p_hat.iter().filter(|p| p.is_none()).count();
    Ok(SelectionResult {
        selected_ids,
        p_hat,
        undefined_count,
    })
}
