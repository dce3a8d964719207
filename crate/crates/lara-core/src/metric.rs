//! Squared Mahalanobis distances: a validated PSD matrix `M` with a cached
//! factor `L` (`M = LᵀL`), identity / inverse-covariance baselines, and a
//! sparse metric-learning routine that pulls same-class pairs together
//! under a log-det barrier.
//!
//! Distances are squared forms throughout; no square roots are taken
//! anywhere in the pipeline, so radii and thresholds compare against the
//! quadratic form directly.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Eigenvalue floor used when projecting onto the PSD cone during learning;
/// keeps iterates invertible for the log-det term.
const EIG_FLOOR: f64 = 1e-8;

/// Most negative eigenvalue tolerated when constructing a metric.
const PSD_TOL: f64 = -1e-8;

/// A positive semidefinite matrix `M` defining the squared distance
/// `d_M(x, y) = (x−y)ᵀ M (x−y)`, with a factor `L` such that `LᵀL = M` so
/// that `d_M(x, y) = ‖Lx − Ly‖²` and Euclidean machinery applies to
/// transformed points.
#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisMetric {
    matrix: Array2<f64>,
    factor: Array2<f64>,
    is_identity: bool,
}

/// Baselines available when metric learning is disabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Identity,
    InverseCovariance,
}

/// Configuration for [`learn_sdml`]. Defaults are pinned for
/// reproducibility: identity initialization, fixed step size, seeded pair
/// subsampling capped at `max_pairs` per iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricLearnConfig {
    /// L1 penalty on off-diagonal entries.
    pub sparsity_weight: f64,
    /// Weight of the −log det M barrier; must be positive or M → 0 wins.
    pub logdet_weight: f64,
    pub max_iters: usize,
    pub step_size: f64,
    /// Convergence tolerance on the max-norm change of M between iterations.
    pub tol: f64,
    /// Cap on same-class pairs consumed per iteration.
    pub max_pairs: usize,
    pub seed: u64,
}

impl Default for MetricLearnConfig {
    fn default() -> Self {
        MetricLearnConfig {
            sparsity_weight: 0.05,
            logdet_weight: 1.0,
            max_iters: 500,
            step_size: 1e-2,
            tol: 1e-6,
            max_pairs: 200_000,
            seed: 0,
        }
    }
}

impl MetricLearnConfig {
    fn validate(&self) -> Result<()> {
        if !(self.logdet_weight > 0.0) {
            return Err(Error::param("logdet_weight", "must be positive"));
        }
        if !(self.sparsity_weight >= 0.0) {
            return Err(Error::param("sparsity_weight", "must be non-negative"));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::param("step_size", "must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param("tol", "must be positive"));
        }
        if self.max_pairs == 0 {
            return Err(Error::param("max_pairs", "must be at least 1"));
        }
        Ok(())
    }
}

/// Result of [`learn_sdml`]: the best iterate seen, whether the tolerance
/// was reached before the iteration budget, and the iterations consumed.
#[derive(Debug, Clone)]
pub struct SdmlOutcome {
    pub metric: MahalanobisMetric,
    pub converged: bool,
    pub iterations: usize,
}

fn to_na(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_row_iterator(m.nrows(), m.ncols(), m.iter().cloned())
}

fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

impl MahalanobisMetric {
    /// The exact identity metric: `M = L = I`.
    pub fn identity(dim: usize) -> Self {
        let eye = Array2::eye(dim);
        MahalanobisMetric {
            matrix: eye.clone(),
            factor: eye,
            is_identity: true,
        }
    }

    /// Validates symmetry and positive semidefiniteness, then caches a
    /// factor `L` with `LᵀL = M`. Eigenvalues in `[−1e−8, 0)` are treated
    /// as rounding noise and clipped to zero (the stored matrix is the
    /// clipped one, so the reconstruction invariant holds).
    pub fn from_matrix(matrix: Array2<f64>) -> Result<Self> {
        let d = matrix.nrows();
        if matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: matrix.ncols(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("metric matrix has non-finite entries"));
        }
        for i in 0..d {
            for j in (i + 1)..d {
                let tol = 1e-9 * matrix[[i, j]].abs().max(1.0);
                if (matrix[[i, j]] - matrix[[j, i]]).abs() > tol {
                    return Err(Error::param("matrix", "must be symmetric"));
                }
            }
        }
        // Exact symmetrization; commutative addition makes s_ij == s_ji bitwise.
        let mut sym = matrix.clone();
        for i in 0..d {
            for j in 0..d {
                sym[[i, j]] = 0.5 * (matrix[[i, j]] + matrix[[j, i]]);
            }
        }

        let diagonal = sym
            .indexed_iter()
            .all(|((i, j), &v)| i == j || v == 0.0);
        if diagonal {
            let mut m = Array2::zeros((d, d));
            let mut l = Array2::zeros((d, d));
            let mut is_identity = true;
            for i in 0..d {
                let v = sym[[i, i]];
                if v < PSD_TOL {
                    return Err(Error::numeric(format!(
                        "matrix is not positive semidefinite (diagonal entry {v})"
                    )));
                }
                let clipped = v.max(0.0);
                m[[i, i]] = clipped;
                l[[i, i]] = clipped.sqrt();
                is_identity &= clipped == 1.0;
            }
            return Ok(MahalanobisMetric {
                matrix: m,
                factor: l,
                is_identity,
            });
        }

        let eig = SymmetricEigen::new(to_na(&sym));
        let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < PSD_TOL {
            return Err(Error::numeric(format!(
                "matrix is not positive semidefinite (eigenvalue {min_eig})"
            )));
        }
        let clipped: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
        // factor = Λ^{1/2} Qᵀ, so LᵀL = Q Λ Qᵀ.
        let mut factor = Array2::zeros((d, d));
        for i in 0..d {
            let s = clipped[i].sqrt();
            for j in 0..d {
                factor[[i, j]] = s * eig.eigenvectors[(j, i)];
            }
        }
        let stored = if min_eig >= 0.0 {
            sym
        } else {
            // Rebuild from clipped eigenvalues and resymmetrize the product.
            let q = &eig.eigenvectors;
            let mut m = DMatrix::zeros(d, d);
            for k in 0..d {
                let col = q.column(k);
                let lam = clipped[k];
                for i in 0..d {
                    for j in 0..d {
                        m[(i, j)] += lam * col[i] * col[j];
                    }
                }
            }
            let mut arr = from_na(&m);
            for i in 0..d {
                for j in 0..i {
                    let avg = 0.5 * (arr[[i, j]] + arr[[j, i]]);
                    arr[[i, j]] = avg;
                    arr[[j, i]] = avg;
                }
            }
            arr
        };

        let metric = MahalanobisMetric {
            matrix: stored,
            factor,
            is_identity: false,
        };
        metric.check_reconstruction()?;
        Ok(metric)
    }

    fn check_reconstruction(&self) -> Result<()> {
        let product = self.factor.t().dot(&self.factor);
        let scale = self
            .matrix
            .iter()
            .fold(0.0f64, |acc, &v| acc.max(v.abs()));
        let tol = 1e-9 * (1.0 + scale);
        let max_err = (&product - &self.matrix)
            .iter()
            .fold(0.0f64, |acc, &v| acc.max(v.abs()));
        if max_err > tol {
            return Err(Error::numeric(format!(
                "factorization residual {max_err} exceeds tolerance {tol}"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn factor(&self) -> ArrayView2<'_, f64> {
        self.factor.view()
    }

    /// Squared Mahalanobis form `(x−y)ᵀ M (x−y)`, clamped at zero if
    /// rounding produces a tiny negative. The evaluation order is fixed and
    /// sign-symmetric, so `distance(x, y) == distance(y, x)` bitwise.
    pub fn distance(&self, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        if y.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: y.len(),
            });
        }
        let mut total = 0.0;
        for i in 0..d {
            let ri = x[i] - y[i];
            let mut inner = 0.0;
            for j in 0..d {
                inner += self.matrix[[i, j]] * (x[j] - y[j]);
            }
            total += ri * inner;
        }
        Ok(total.max(0.0))
    }

    /// Maps points into the space where squared Euclidean distance equals
    /// the metric: returns `points · Lᵀ`.
    pub fn transform(&self, points: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if points.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: points.ncols(),
            });
        }
        if self.is_identity {
            return Ok(points.to_owned());
        }
        Ok(points.dot(&self.factor.t()))
    }

    /// Single-point version of [`transform`].
    pub fn transform_point(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if self.is_identity {
            return Ok(x.to_owned());
        }
        Ok(self.factor.dot(&x))
    }
}

/// Identity or inverse-covariance baseline. The covariance path needs data
/// with more records than dimensions and adds a ridge of `1e−6·trace/d`
/// before inverting.
pub fn baseline_metric(
    kind: BaselineKind,
    ds: Option<&Dataset>,
    dim: usize,
) -> Result<MahalanobisMetric> {
    match kind {
        BaselineKind::Identity => Ok(MahalanobisMetric::identity(dim)),
        BaselineKind::InverseCovariance => {
            let ds = ds.ok_or_else(|| {
                Error::param("ds", "inverse-covariance baseline requires a dataset")
            })?;
            if ds.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: ds.dim(),
                });
            }
            let n = ds.len();
            if n <= dim {
                return Err(Error::numeric(format!(
                    "covariance needs more than dim={dim} records, got {n}"
                )));
            }
            let x = ds.features();
            let mean = x.mean_axis(ndarray::Axis(0)).expect("n > 0");
            let mut cov = Array2::<f64>::zeros((dim, dim));
            for row in x.rows() {
                for i in 0..dim {
                    let di = row[i] - mean[i];
                    for j in i..dim {
                        cov[[i, j]] += di * (row[j] - mean[j]);
                    }
                }
            }
            let denom = (n - 1) as f64;
            for i in 0..dim {
                for j in i..dim {
                    cov[[i, j]] /= denom;
                    cov[[j, i]] = cov[[i, j]];
                }
            }
            let trace: f64 = (0..dim).map(|i| cov[[i, i]]).sum();
            let ridge = 1e-6 * trace / dim as f64;
            for i in 0..dim {
                cov[[i, i]] += ridge;
            }
            let chol = Cholesky::new(to_na(&cov))
                .ok_or_else(|| Error::numeric("sample covariance is singular beyond ridge repair"))?;
            let inv = from_na(&chol.inverse());
            // The Cholesky inverse is symmetric up to rounding; construction
            // resymmetrizes.
            MahalanobisMetric::from_matrix(inv)
        }
    }
}

/// Mean outer-product accumulator over same-class difference vectors.
struct PairScatter {
    sum: Array2<f64>,
    count: usize,
}

impl PairScatter {
    fn new(dim: usize) -> Self {
        PairScatter {
            sum: Array2::zeros((dim, dim)),
            count: 0,
        }
    }

    fn add_pair(&mut self, x: ArrayView2<'_, f64>, i: usize, j: usize) {
        let d = x.ncols();
        let (ri, rj) = (x.row(i), x.row(j));
        for a in 0..d {
            let da = ri[a] - rj[a];
            for b in 0..d {
                self.sum[[a, b]] += da * (ri[b] - rj[b]);
            }
        }
        self.count += 1;
    }

    fn mean(&self) -> Array2<f64> {
        &self.sum / self.count.max(1) as f64
    }
}

/// All same-class pairs, expressed through the per-class scatter identity
/// Σ_{i<j∈c}(xᵢ−xⱼ)(xᵢ−xⱼ)ᵀ = n_c·Σ_{i∈c}(xᵢ−μ_c)(xᵢ−μ_c)ᵀ.
fn full_pair_scatter(x: ArrayView2<'_, f64>, classes: &[Vec<usize>]) -> (Array2<f64>, usize) {
    let d = x.ncols();
    let mut sum = Array2::<f64>::zeros((d, d));
    let mut pairs = 0usize;
    for members in classes {
        let nc = members.len();
        if nc < 2 {
            continue;
        }
        let mut mean = vec![0.0; d];
        for &i in members {
            for a in 0..d {
                mean[a] += x[[i, a]];
            }
        }
        for m in mean.iter_mut() {
            *m /= nc as f64;
        }
        for &i in members {
            for a in 0..d {
                let da = x[[i, a]] - mean[a];
                for b in 0..d {
                    sum[[a, b]] += nc as f64 * da * (x[[i, b]] - mean[b]);
                }
            }
        }
        pairs += nc * (nc - 1) / 2;
    }
    (sum / pairs.max(1) as f64, pairs)
}

fn sample_pair_scatter(
    x: ArrayView2<'_, f64>,
    classes: &[Vec<usize>],
    pair_counts: &[usize],
    total_pairs: usize,
    n_pairs: usize,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let mut scatter = PairScatter::new(x.ncols());
    for _ in 0..n_pairs {
        // Class weighted by its pair count, then a uniform unordered pair.
        let mut ticket = rng.random_range(0..total_pairs);
        let mut class = 0;
        while ticket >= pair_counts[class] {
            ticket -= pair_counts[class];
            class += 1;
        }
        let members = &classes[class];
        let i = rng.random_range(0..members.len());
        let mut j = rng.random_range(0..members.len() - 1);
        if j >= i {
            j += 1;
        }
        scatter.add_pair(x, members[i], members[j]);
    }
    scatter.mean()
}

fn soft_threshold_offdiag(m: &mut Array2<f64>, amount: f64) {
    let d = m.nrows();
    for i in 0..d {
        for j in 0..d {
            if i != j {
                let v = m[[i, j]];
                m[[i, j]] = v.signum() * (v.abs() - amount).max(0.0);
            }
        }
    }
}

/// Projects onto symmetric matrices with eigenvalues ≥ `EIG_FLOOR`.
fn psd_project(m: &Array2<f64>) -> Array2<f64> {
    let d = m.nrows();
    let mut sym = m.clone();
    for i in 0..d {
        for j in 0..i {
            let avg = 0.5 * (sym[[i, j]] + sym[[j, i]]);
            sym[[i, j]] = avg;
            sym[[j, i]] = avg;
        }
    }
    let eig = SymmetricEigen::new(to_na(&sym));
    let mut out = Array2::<f64>::zeros((d, d));
    for k in 0..d {
        let lam = eig.eigenvalues[k].max(EIG_FLOOR);
        for i in 0..d {
            for j in 0..=i {
                let v = lam * eig.eigenvectors[(i, k)] * eig.eigenvectors[(j, k)];
                out[[i, j]] += v;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            out[[j, i]] = out[[i, j]];
        }
    }
    out
}

fn logdet_and_inverse(m: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let chol = Cholesky::new(to_na(m))
        .ok_or_else(|| Error::numeric("metric iterate is not positive definite"))?;
    let logdet = 2.0
        * chol
            .l()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>();
    Ok((logdet, from_na(&chol.inverse())))
}

fn objective(
    m: &Array2<f64>,
    s_eval: &Array2<f64>,
    logdet_weight: f64,
    sparsity_weight: f64,
) -> Result<f64> {
    let (logdet, _) = logdet_and_inverse(m)?;
    let fit = (s_eval * m).sum();
    let d = m.nrows();
    let mut l1 = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                l1 += m[[i, j]].abs();
            }
        }
    }
    Ok(fit - logdet_weight * logdet + sparsity_weight * l1)
}

/// Learns a sparse Mahalanobis metric by proximal projected gradient on
///
/// `mean_{same-class pairs} d_M(xᵢ, xⱼ) − logdet_weight·log det M
///  + sparsity_weight·Σ_{i≠j}|M_ij|`
///
/// from an identity start. Same-class pairs are averaged (not summed) so
/// the objective scale does not depend on how many pairs are subsampled.
/// When the class structure yields at most `max_pairs` pairs the full pair
/// set is used every iteration; otherwise `max_pairs` pairs are redrawn per
/// iteration from the config seed. Returns the best iterate by objective
/// value along with a convergence flag.
pub fn learn_sdml(ds: &Dataset, cfg: &MetricLearnConfig) -> Result<SdmlOutcome> {
    cfg.validate()?;
    let labels = ds.label_slice()?;
    let x = ds.features();
    let d = ds.dim();
    if d == 0 {
        return Err(Error::EmptyInput {
            context: "metric learning features",
        });
    }

    let mut classes: Vec<Vec<usize>> = vec![Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        classes[l as usize].push(i);
    }
    let pair_counts: Vec<usize> = classes.iter().map(|c| c.len() * c.len().saturating_sub(1) / 2).collect();
    let total_pairs: usize = pair_counts.iter().sum();
    if total_pairs == 0 {
        return Err(Error::EmptyInput {
            context: "same-class pairs",
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let use_full = total_pairs <= cfg.max_pairs;
    let (s_fixed, _) = if use_full {
        full_pair_scatter(x, &classes)
    } else {
        (Array2::zeros((d, d)), 0)
    };
    // A fixed evaluation scatter makes best-iterate tracking deterministic
    // even when the per-iteration gradient is subsampled.
    let s_eval = if use_full {
        s_fixed.clone()
    } else {
        sample_pair_scatter(
            x,
            &classes,
            &pair_counts,
            total_pairs,
            cfg.max_pairs.min(20_000),
            &mut rng,
        )
    };

    let mut m = Array2::<f64>::eye(d);
    let mut best = m.clone();
    let mut best_obj = objective(&m, &s_eval, cfg.logdet_weight, cfg.sparsity_weight)?;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        iterations += 1;
        let s_iter = if use_full {
            s_fixed.clone()
        } else {
            sample_pair_scatter(
                x,
                &classes,
                &pair_counts,
                total_pairs,
                cfg.max_pairs,
                &mut rng,
            )
        };
        let (_, m_inv) = logdet_and_inverse(&m)?;
        let mut next = &m - &((&s_iter - &(m_inv * cfg.logdet_weight)) * cfg.step_size);
        soft_threshold_offdiag(&mut next, cfg.step_size * cfg.sparsity_weight);
        let next = psd_project(&next);

        let change = (&next - &m)
            .iter()
            .fold(0.0f64, |acc, &v| acc.max(v.abs()));
        let scale = m.iter().fold(1.0f64, |acc, &v| acc.max(v.abs()));
        m = next;

        let obj = objective(&m, &s_eval, cfg.logdet_weight, cfg.sparsity_weight)?;
        if obj < best_obj {
            best_obj = obj;
            best = m.clone();
        }
        if change <= cfg.tol * scale {
            converged = true;
            break;
        }
    }

    Ok(SdmlOutcome {
        metric: MahalanobisMetric::from_matrix(best)?,
        converged,
        iterations,
    })
}

/// Writes `M` as CSV preceded by a `dim=<d>` header line.
pub fn write_metric(metric: &MahalanobisMetric, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let d = metric.dim();
    let mut out = String::new();
    out.push_str(&format!("dim={d}\n"));
    for i in 0..d {
        let row: Vec<String> = (0..d).map(|j| metric.matrix[[i, j]].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("write `{}`", path.display()), e))
}

/// Reads a metric written by [`write_metric`].
pub fn read_metric(path: impl AsRef<Path>) -> Result<MahalanobisMetric> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("read `{}`", path.display()), e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::EmptyInput {
        context: "metric file",
    })?;
    let d: usize = header
        .strip_prefix("dim=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::ParseCell {
            row: 0,
            column: "dim".into(),
            value: header.to_string(),
        })?;
    let mut m = Array2::zeros((d, d));
    for i in 0..d {
        let line = lines.next().ok_or(Error::InsufficientData {
            needed: d + 1,
            got: i + 1,
        })?;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != d {
            return Err(Error::ParseCell {
                row: i + 1,
                column: "<row width>".into(),
                value: format!("{} fields", cells.len()),
            });
        }
        for (j, cell) in cells.iter().enumerate() {
            m[[i, j]] = cell.trim().parse().map_err(|_| Error::ParseCell {
                row: i + 1,
                column: format!("m{j}"),
                value: cell.to_string(),
            })?;
        }
    }
    MahalanobisMetric::from_matrix(m)
}
