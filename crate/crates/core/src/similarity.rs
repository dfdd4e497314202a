//! Temperature-scaled cosine similarity between projected image and prompt
//! embeddings.
//!
//! The encoders themselves live outside this crate; everything here starts
//! from their numeric outputs.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row norms accepted by [`similarity_scores`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Row-major embeddings, one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(DMatrix<f64>);

impl EmbeddingMatrix {
    /// Rejects empty shapes and all-zero rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = dense_from_rows(rows)?;
        for (i, row) in m.row_iter().enumerate() {
            if row.iter().all(|v| *v == 0.0) {
                return Err(Error::ZeroNorm { row: i });
            }
        }
        Ok(Self(m))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.0.row(i).iter().copied().collect()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Linear map from raw encoder space into the shared embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix(DMatrix<f64>);

impl ProjectionMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        dense_from_rows(rows).map(Self)
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }
}

fn dense_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return Err(Error::dim("matrix must have at least one row and one column"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != d) {
        return Err(Error::dim(format!(
            "row {i} has {} entries, expected {d}",
            rows[i].len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix entries must be finite"));
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

/// Per-image similarity scores, one per class prompt, in class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityVector {
    pub image_id: String,
    pub scores: Vec<f64>,
}

/// Projects raw embeddings and scales every row to unit L2 norm.
pub fn project_and_normalize(raw: &EmbeddingMatrix, proj: &ProjectionMatrix) -> Result<EmbeddingMatrix> {
    if raw.ncols() != proj.nrows() {
        return Err(Error::dim(format!(
            "embeddings have {} columns but projection has {} rows",
            raw.ncols(),
            proj.nrows()
        )));
    }
    let mut z = &raw.0 * &proj.0;
    for (i, mut row) in z.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm { row: i });
        }
        row /= norm;
    }
    Ok(EmbeddingMatrix(z))
}

/// `S = (Z_img · Z_txtᵀ) · exp(temperature_log)`.
pub fn similarity_scores(
    z_images: &EmbeddingMatrix,
    z_texts: &EmbeddingMatrix,
    temperature_log: f64,
) -> Result<DMatrix<f64>> {
    if z_images.ncols() != z_texts.ncols() {
        return Err(Error::dim(format!(
            "image embeddings have {} columns, text embeddings {}",
            z_images.ncols(),
            z_texts.ncols()
        )));
    }
    check_unit_rows(z_images)?;
    check_unit_rows(z_texts)?;
    Ok(&z_images.0 * z_texts.0.transpose() * temperature_log.exp())
}

fn check_unit_rows(m: &EmbeddingMatrix) -> Result<()> {
    for (i, row) in m.0.row_iter().enumerate() {
        let norm = row.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::Normalization { row: i, norm });
        }
    }
    Ok(())
}

/// One [`SimilarityVector`] per image row; `z_prompts` rows follow class order.
pub fn per_image_similarity(
    z_images: Option<&EmbeddingMatrix>,
    z_prompts: &EmbeddingMatrix,
    temperature_log: f64,
    image_ids: &[String],
) -> Result<Vec<SimilarityVector>> {
    let Some(z_images) = z_images else {
        return if image_ids.is_empty() {
            Ok(Vec::new())
        } else {
            Err(Error::dim(format!(
                "{} image ids but no image embeddings",
                image_ids.len()
            )))
        };
    };
    if image_ids.len() != z_images.nrows() {
        return Err(Error::dim(format!(
            "{} image ids for {} embeddings",
            image_ids.len(),
            z_images.nrows()
        )));
    }
    let s = similarity_scores(z_images, z_prompts, temperature_log)?;
    Ok(image_ids
        .iter()
        .enumerate()
        .map(|(i, id)| SimilarityVector {
            image_id: id.clone(),
            scores: s.row(i).iter().copied().collect(),
        })
        .collect())
}

/// Elementwise mean, summed sequentially in input order.
pub fn mean_similarity(vectors: &[SimilarityVector]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::EmptyDataset("no similarity vectors".into()))?;
    let d = first.scores.len();
    let mut acc = vec![0.0; d];
    for v in vectors {
        if v.scores.len() != d {
            return Err(Error::dim(format!(
                "image {} has {} scores, expected {d}",
                v.image_id,
                v.scores.len()
            )));
        }
        for (a, s) in acc.iter_mut().zip(&v.scores) {
            *a += s;
        }
    }
    let n = vectors.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}
