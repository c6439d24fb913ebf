//! Training-free modality-gap removal.
//!
//! `Centralize` subtracts each modality's reference mean; `Delete` drops the
//! coordinates whose cross-modal mean gap is largest. Both are fit once on a
//! reference split and then frozen.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::per_dimension_mean_gap;
use crate::embedding::{Embedding, EmbeddingBank, Modality};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CollapseTransform {
    Centralize {
        visual_mean: Vec<f64>,
        text_mean: Vec<f64>,
        source_dim: usize,
        /// Identity of the split the means were estimated on.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fit_source: Option<String>,
    },
    Delete {
        deleted_dims: Vec<usize>,
        source_dim: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fit_source: Option<String>,
    },
}

impl CollapseTransform {
    pub fn kind_name(&self) -> &'static str {
        match self {
            CollapseTransform::Centralize { .. } => "centralize",
            CollapseTransform::Delete { .. } => "delete",
        }
    }

    pub fn source_dim(&self) -> usize {
        match self {
            CollapseTransform::Centralize { source_dim, .. }
            | CollapseTransform::Delete { source_dim, .. } => *source_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            CollapseTransform::Centralize { source_dim, .. } => *source_dim,
            CollapseTransform::Delete {
                deleted_dims,
                source_dim,
                ..
            } => source_dim - deleted_dims.len(),
        }
    }

    pub fn with_fit_source(mut self, source: impl Into<String>) -> Self {
        match &mut self {
            CollapseTransform::Centralize { fit_source, .. }
            | CollapseTransform::Delete { fit_source, .. } => *fit_source = Some(source.into()),
        }
        self
    }

    /// Checks the structural invariants (used after deserializing).
    pub fn validate(&self) -> Result<()> {
        match self {
            CollapseTransform::Centralize {
                visual_mean,
                text_mean,
                source_dim,
                ..
            } => {
                if visual_mean.len() != *source_dim || text_mean.len() != *source_dim {
                    return Err(Error::Dimension(format!(
                        "centralize means have lengths {}/{} but source_dim is {source_dim}",
                        visual_mean.len(),
                        text_mean.len()
                    )));
                }
                crate::embedding::check_finite(visual_mean)?;
                crate::embedding::check_finite(text_mean)
            }
            CollapseTransform::Delete {
                deleted_dims,
                source_dim,
                ..
            } => {
                if deleted_dims.is_empty() {
                    return Err(Error::Parameter(
                        "delete transform removes no dimensions".into(),
                    ));
                }
                if deleted_dims.len() >= *source_dim {
                    return Err(Error::Parameter(
                        "delete transform removes every dimension".into(),
                    ));
                }
                if deleted_dims.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Parameter(
                        "deleted_dims must be strictly ascending".into(),
                    ));
                }
                if deleted_dims.last().is_some_and(|&d| d >= *source_dim) {
                    return Err(Error::Dimension("deleted dimension out of range".into()));
                }
                Ok(())
            }
        }
    }

    /// Applies whichever operation this transform encodes.
    pub fn apply(&self, e: &Embedding) -> Result<Embedding> {
        match self {
            CollapseTransform::Centralize { .. } => apply_centralize(self, e),
            CollapseTransform::Delete { .. } => apply_delete(self, e),
        }
    }

    /// Raw-slice version of [`CollapseTransform::apply`].
    pub fn apply_values(&self, values: &[f64], modality: Modality) -> Result<Vec<f64>> {
        if values.len() != self.source_dim() {
            return Err(Error::Dimension(format!(
                "transform expects dim {}, got {}",
                self.source_dim(),
                values.len()
            )));
        }
        Ok(match self {
            CollapseTransform::Centralize {
                visual_mean,
                text_mean,
                ..
            } => {
                let mean = match modality {
                    Modality::Visual => visual_mean,
                    Modality::Text => text_mean,
                };
                values.iter().zip(mean).map(|(x, m)| x - m).collect()
            }
            CollapseTransform::Delete { deleted_dims, .. } => {
                let mut skip = deleted_dims.iter().peekable();
                values
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &x)| {
                        if skip.peek() == Some(&&i) {
                            skip.next();
                            None
                        } else {
                            Some(x)
                        }
                    })
                    .collect()
            }
        })
    }

    pub fn apply_bank(&self, bank: &EmbeddingBank) -> Result<EmbeddingBank> {
        bank.map_rows(self.output_dim(), |_, row| {
            self.apply_values(row, bank.modality())
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transform serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(s)
            .map_err(|e| Error::Parameter(format!("bad transform JSON: {e}")))?;
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

fn check_reference(v: &EmbeddingBank, l: &EmbeddingBank) -> Result<()> {
    if v.dim() != l.dim() {
        return Err(Error::Dimension(format!(
            "reference dims {} and {}",
            v.dim(),
            l.dim()
        )));
    }
    if v.is_empty() || l.is_empty() {
        return Err(Error::EmptyBank("reference banks must be non-empty".into()));
    }
    Ok(())
}

/// Stores the empirical per-modality means of the reference banks.
pub fn fit_centralize(
    reference_v: &EmbeddingBank,
    reference_l: &EmbeddingBank,
) -> Result<CollapseTransform> {
    check_reference(reference_v, reference_l)?;
    Ok(CollapseTransform::Centralize {
        visual_mean: reference_v.mean()?,
        text_mean: reference_l.mean()?,
        source_dim: reference_v.dim(),
        fit_source: None,
    })
}

pub fn apply_centralize(t: &CollapseTransform, e: &Embedding) -> Result<Embedding> {
    if !matches!(t, CollapseTransform::Centralize { .. }) {
        return Err(Error::TransformKind {
            expected: "centralize",
            actual: t.kind_name(),
        });
    }
    Embedding::new(t.apply_values(e.values(), e.modality())?, e.modality())
}

/// Selects the `k` coordinates with the largest absolute mean gap; ties go to
/// the lower index.
pub fn fit_delete(
    reference_v: &EmbeddingBank,
    reference_l: &EmbeddingBank,
    k: usize,
) -> Result<CollapseTransform> {
    check_reference(reference_v, reference_l)?;
    let gaps = per_dimension_mean_gap(reference_v, reference_l)?;
    delete_from_gaps(&gaps, k)
}

/// The delete transform for an explicit per-dimension gap profile.
pub fn delete_from_gaps(gaps: &[f64], k: usize) -> Result<CollapseTransform> {
    let dim = gaps.len();
    if k < 1 || k >= dim {
        return Err(Error::Parameter(format!(
            "delete k must satisfy 1 <= k < dim ({dim}), got {k}"
        )));
    }
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| gaps[b].total_cmp(&gaps[a]).then(a.cmp(&b)));
    let mut deleted: Vec<usize> = order.into_iter().take(k).collect();
    deleted.sort_unstable();
    Ok(CollapseTransform::Delete {
        deleted_dims: deleted,
        source_dim: dim,
        fit_source: None,
    })
}

pub fn apply_delete(t: &CollapseTransform, e: &Embedding) -> Result<Embedding> {
    if !matches!(t, CollapseTransform::Delete { .. }) {
        return Err(Error::TransformKind {
            expected: "delete",
            actual: t.kind_name(),
        });
    }
    Embedding::new(t.apply_values(e.values(), e.modality())?, e.modality())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank(m: Modality, rows: &[&[f64]]) -> EmbeddingBank {
        EmbeddingBank::from_rows(
            m,
            rows[0].len(),
            rows.iter()
                .enumerate()
                .map(|(i, r)| (format!("t{i}"), r.to_vec())),
        )
        .unwrap()
    }

    fn emb(v: &[f64], m: Modality) -> Embedding {
        Embedding::new(v.to_vec(), m).unwrap()
    }

    #[test]
    fn fit_centralize_means() {
        let v = bank(Modality::Visual, &[&[2.0, 0.0], &[4.0, 0.0]]);
        let l = bank(Modality::Text, &[&[1.0, 1.0]]);
        match fit_centralize(&v, &l).unwrap() {
            CollapseTransform::Centralize {
                visual_mean,
                text_mean,
                ..
            } => {
                assert_eq!(visual_mean, vec![3.0, 0.0]);
                assert_eq!(text_mean, vec![1.0, 1.0]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn apply_centralize_examples() {
        let t = CollapseTransform::Centralize {
            visual_mean: vec![3.0, 0.0],
            text_mean: vec![0.0, 1.0],
            source_dim: 2,
            fit_source: None,
        };
        let out = apply_centralize(&t, &emb(&[3.0, 0.0], Modality::Visual)).unwrap();
        assert_eq!(out.values(), &[0.0, 0.0]);
        let out = apply_centralize(&t, &emb(&[3.0, 0.0], Modality::Text)).unwrap();
        assert_eq!(out.values(), &[3.0, -1.0]);

        let zero = CollapseTransform::Centralize {
            visual_mean: vec![0.0; 3],
            text_mean: vec![0.0; 3],
            source_dim: 3,
            fit_source: None,
        };
        let e = emb(&[0.1, -2.0, 7.5], Modality::Text);
        assert_eq!(apply_centralize(&zero, &e).unwrap(), e);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let d = delete_from_gaps(&[0.1, 5.0, 0.2], 1).unwrap();
        let e = emb(&[1.0, 2.0, 3.0], Modality::Visual);
        assert!(matches!(
            apply_centralize(&d, &e),
            Err(Error::TransformKind { .. })
        ));
        let c = CollapseTransform::Centralize {
            visual_mean: vec![0.0; 3],
            text_mean: vec![0.0; 3],
            source_dim: 3,
            fit_source: None,
        };
        assert!(matches!(
            apply_delete(&c, &e),
            Err(Error::TransformKind { .. })
        ));
    }

    #[test]
    fn delete_selection() {
        let dims = |t: CollapseTransform| match t {
            CollapseTransform::Delete { deleted_dims, .. } => deleted_dims,
            _ => unreachable!(),
        };
        assert_eq!(
            dims(delete_from_gaps(&[0.1, 5.0, 0.2], 1).unwrap()),
            vec![1]
        );
        assert_eq!(
            dims(delete_from_gaps(&[3.0, 3.0, 1.0], 2).unwrap()),
            vec![0, 1]
        );
        assert_eq!(
            dims(delete_from_gaps(&[0.0, 0.0, 0.0], 1).unwrap()),
            vec![0]
        );
        assert!(matches!(
            delete_from_gaps(&[1.0, 2.0], 2),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            delete_from_gaps(&[1.0, 2.0], 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn fit_delete_uses_gap_profile() {
        let v = bank(Modality::Visual, &[&[0.1, 5.0, 0.2]]);
        let l = bank(Modality::Text, &[&[0.0, 0.0, 0.0]]);
        assert_eq!(
            fit_delete(&v, &l, 1).unwrap(),
            delete_from_gaps(&[0.1, 5.0, 0.2], 1).unwrap()
        );
        assert!(matches!(fit_delete(&v, &l, 3), Err(Error::Parameter(_))));
    }

    #[test]
    fn apply_delete_examples() {
        let t = delete_from_gaps(&[0.0, 1.0, 0.0], 1).unwrap();
        let out = apply_delete(&t, &emb(&[7.0, 8.0, 9.0], Modality::Visual)).unwrap();
        assert_eq!(out.values(), &[7.0, 9.0]);
        let t = CollapseTransform::Delete {
            deleted_dims: vec![0, 2],
            source_dim: 4,
            fit_source: None,
        };
        let out = apply_delete(&t, &emb(&[1.0, 2.0, 3.0, 4.0], Modality::Text)).unwrap();
        assert_eq!(out.values(), &[2.0, 4.0]);
        assert!(matches!(
            apply_delete(&t, &emb(&[1.0, 2.0, 3.0], Modality::Text)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn json_shapes() {
        let t = CollapseTransform::Delete {
            deleted_dims: vec![1],
            source_dim: 3,
            fit_source: None,
        };
        let v: serde_json::Value = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(v["kind"], "delete");
        assert_eq!(v["deleted_dims"], serde_json::json!([1]));
        assert_eq!(CollapseTransform::from_json(&t.to_json()).unwrap(), t);

        let c = CollapseTransform::Centralize {
            visual_mean: vec![0.5, 1.0],
            text_mean: vec![-0.5, 0.25],
            source_dim: 2,
            fit_source: Some("ref.ebank".into()),
        };
        let v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(v["kind"], "centralize");
        assert_eq!(v["fit_source"], "ref.ebank");
        assert_eq!(CollapseTransform::from_json(&c.to_json()).unwrap(), c);

        assert!(CollapseTransform::from_json(
            r#"{"kind":"delete","deleted_dims":[2,1],"source_dim":3}"#
        )
        .is_err());
    }
}
