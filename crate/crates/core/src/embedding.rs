//! Embedding vectors, per-modality banks and the similarity primitives used
//! throughout the crate. Scalars are `f64` in memory.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Text,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Text => "text",
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Visual => Modality::Text,
            Modality::Text => Modality::Visual,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "visual" | "v" => Ok(Modality::Visual),
            "text" | "t" | "language" => Ok(Modality::Text),
            other => Err(Error::Parameter(format!("unknown modality {other:?}"))),
        }
    }
}

/// A finite real vector tagged with the modality that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    modality: Modality,
}

impl Embedding {
    pub fn new(values: Vec<f64>, modality: Modality) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Dimension(
                "embedding must have at least one dimension".into(),
            ));
        }
        check_finite(&values)?;
        Ok(Self { values, modality })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Parameter(format!("non-finite value at index {i}"))),
        None => Ok(()),
    }
}

fn check_same_dim(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("{} vs {}", a.len(), b.len())));
    }
    Ok(())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Cosine similarity of two raw vectors, clamped to `[-1, 1]`.
///
/// Each product `a[i] * b[i]` is commutative and the sum runs in index order,
/// so `cosine(a, b) == cosine(b, a)` bit for bit.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_same_dim(a, b)?;
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector(
            "cosine similarity of a zero vector".into(),
        ));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Unit-length copy of `v`.
pub fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let n = l2_norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateVector(
            "cannot normalize a zero vector".into(),
        ));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    cosine(&a.values, &b.values)
}

pub fn normalize(v: &Embedding) -> Result<Embedding> {
    Ok(Embedding {
        values: normalized(&v.values)?,
        modality: v.modality,
    })
}

/// N embeddings of a single modality, each labelled with a task id.
///
/// Rows are stored contiguously in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank {
    modality: Modality,
    dim: usize,
    task_ids: Vec<String>,
    data: Vec<f64>,
}

impl EmbeddingBank {
    pub fn new(modality: Modality, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("bank dimension must be positive".into()));
        }
        Ok(Self {
            modality,
            dim,
            task_ids: Vec::new(),
            data: Vec::new(),
        })
    }

    /// Builds a bank from `(task_id, values)` pairs.
    pub fn from_rows<S, I>(modality: Modality, dim: usize, rows: I) -> Result<Self>
    where
        S: Into<String>,
        I: IntoIterator<Item = (S, Vec<f64>)>,
    {
        let mut bank = Self::new(modality, dim)?;
        for (id, values) in rows {
            bank.push(id, &values)?;
        }
        Ok(bank)
    }

    pub fn push(&mut self, task_id: impl Into<String>, values: &[f64]) -> Result<()> {
        let task_id = task_id.into();
        if task_id.is_empty() {
            return Err(Error::Parameter(format!(
                "row {}: empty task_id",
                self.len()
            )));
        }
        if values.len() != self.dim {
            return Err(Error::Dimension(format!(
                "row {}: expected {} values, got {}",
                self.len(),
                self.dim,
                values.len()
            )));
        }
        check_finite(values)?;
        self.task_ids.push(task_id);
        self.data.extend_from_slice(values);
        Ok(())
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.task_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.task_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn task_id(&self, i: usize) -> &str {
        &self.task_ids[i]
    }

    pub fn task_ids(&self) -> &[String] {
        &self.task_ids
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = (&str, &[f64])> + '_ {
        self.task_ids
            .iter()
            .map(String::as_str)
            .zip(self.data.chunks_exact(self.dim))
    }

    /// Row `i` as an [`Embedding`].
    pub fn embedding(&self, i: usize) -> Embedding {
        Embedding {
            values: self.row(i).to_vec(),
            modality: self.modality,
        }
    }

    /// The raw row-major payload.
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Distinct task ids in lexicographic order.
    pub fn task_set(&self) -> BTreeSet<&str> {
        self.task_ids.iter().map(String::as_str).collect()
    }

    /// Componentwise mean of all rows.
    pub fn mean(&self) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyBank(format!(
                "{} bank has no rows",
                self.modality
            )));
        }
        let mut acc = vec![0.0; self.dim];
        for row in self.data.chunks_exact(self.dim) {
            for (a, x) in acc.iter_mut().zip(row) {
                *a += x;
            }
        }
        let n = self.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    /// A new bank of the same modality with every row mapped by `f`.
    pub fn map_rows<F>(&self, dim: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, &[f64]) -> Result<Vec<f64>>,
    {
        let mut out = Self::new(self.modality, dim)?;
        for (i, (id, row)) in self.rows().enumerate() {
            let mapped = f(i, row)?;
            out.push(id, &mapped)?;
        }
        Ok(out)
    }

    /// Same rows, relabelled with another modality.
    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    /// Rows reordered so that output row `i` is input row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::Parameter(
                "permutation length differs from row count".into(),
            ));
        }
        let mut out = Self::new(self.modality, self.dim)?;
        for &i in order {
            out.push(self.task_id(i), self.row(i))?;
        }
        Ok(out)
    }
}
