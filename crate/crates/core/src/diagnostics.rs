//! Modality-gap diagnostics: mean gap vectors, the matched-pair similarity
//! heatmap, cross-modal retrieval accuracy and a 2-D PCA view of pooled banks.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, l2_norm, EmbeddingBank, Modality};
use crate::error::{Error, Result};

fn check_pair(a: &EmbeddingBank, b: &EmbeddingBank) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "banks have dims {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `mean(bank_v) - mean(bank_l)`, componentwise.
pub fn gap_vector(bank_v: &EmbeddingBank, bank_l: &EmbeddingBank) -> Result<Vec<f64>> {
    check_pair(bank_v, bank_l)?;
    let mv = bank_v.mean()?;
    let ml = bank_l.mean()?;
    Ok(mv.iter().zip(&ml).map(|(a, b)| a - b).collect())
}

/// `|gap_vector|`, componentwise.
pub fn per_dimension_mean_gap(bank_v: &EmbeddingBank, bank_l: &EmbeddingBank) -> Result<Vec<f64>> {
    Ok(gap_vector(bank_v, bank_l)?
        .into_iter()
        .map(f64::abs)
        .collect())
}

/// Mean row of every task, keyed (and therefore ordered) by task id.
pub fn task_means(bank: &EmbeddingBank) -> BTreeMap<String, Vec<f64>> {
    let mut acc: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for (id, row) in bank.rows() {
        let entry = acc
            .entry(id.to_owned())
            .or_insert_with(|| (vec![0.0; bank.dim()], 0));
        entry.0.iter_mut().zip(row).for_each(|(a, x)| *a += x);
        entry.1 += 1;
    }
    acc.into_iter()
        .map(|(id, (mut sum, n))| {
            sum.iter_mut().for_each(|s| *s /= n as f64);
            (id, sum)
        })
        .collect()
}

fn symmetric_difference(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> Vec<String> {
    a.symmetric_difference(b).map(|s| s.to_string()).collect()
}

/// K x K cosine similarities between per-task mean embeddings; rows are
/// visual tasks, columns text tasks, both in lexicographic task-id order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityMatrix {
    pub task_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn diagonal_mean(&self) -> f64 {
        let k = self.task_ids.len();
        (0..k).map(|i| self.values[i][i]).sum::<f64>() / k as f64
    }

    /// Mean over all `i != j` entries; `NaN` when K = 1.
    pub fn off_diagonal_mean(&self) -> f64 {
        let k = self.task_ids.len();
        let mut sum = 0.0;
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if i != j {
                    sum += v;
                }
            }
        }
        sum / (k * (k - 1)) as f64
    }
}

pub fn matched_pair_similarity_matrix(
    bank_v: &EmbeddingBank,
    bank_l: &EmbeddingBank,
) -> Result<SimilarityMatrix> {
    check_pair(bank_v, bank_l)?;
    let (sv, sl) = (bank_v.task_set(), bank_l.task_set());
    if sv != sl {
        return Err(Error::TaskMismatch(symmetric_difference(&sv, &sl)));
    }
    if sv.is_empty() {
        return Err(Error::EmptyBank("no tasks to compare".into()));
    }
    let mv = task_means(bank_v);
    let ml = task_means(bank_l);
    let values = mv
        .values()
        .map(|v| {
            ml.values()
                .map(|l| cosine(v, l))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimilarityMatrix {
        task_ids: mv.into_keys().collect(),
        values,
    })
}

/// Fraction of query rows for which at least one of the `k` gallery rows most
/// cosine-similar to it carries the same task id.
///
/// Gallery candidates are ranked by similarity, then task id, then row index.
pub fn retrieval_topk_accuracy(
    query: &EmbeddingBank,
    gallery: &EmbeddingBank,
    k: usize,
) -> Result<f64> {
    check_pair(query, gallery)?;
    if k < 1 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if k > gallery.len() {
        return Err(Error::Parameter(format!(
            "k = {k} exceeds gallery size {}",
            gallery.len()
        )));
    }
    if query.is_empty() {
        return Err(Error::EmptyBank("query bank has no rows".into()));
    }
    let gallery_tasks = gallery.task_set();
    let missing: Vec<String> = query
        .task_set()
        .difference(&gallery_tasks)
        .map(|s| s.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::TaskMismatch(missing));
    }

    let mut hits = 0usize;
    let mut scored: Vec<(f64, &str, usize)> = Vec::with_capacity(gallery.len());
    for (qid, q) in query.rows() {
        scored.clear();
        for (gi, (gid, g)) in gallery.rows().enumerate() {
            scored.push((cosine(q, g)?, gid, gi));
        }
        scored.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| a.1.cmp(b.1))
                .then_with(|| a.2.cmp(&b.2))
        });
        if scored[..k].iter().any(|(_, gid, _)| *gid == qid) {
            hits += 1;
        }
    }
    Ok(hits as f64 / query.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaPoint {
    pub modality: Modality,
    pub task_id: String,
    pub x: f64,
    pub y: f64,
}

/// Projects the pooled, mean-centred rows of `banks` onto their top two
/// principal components. Each axis is oriented so that its first loading
/// larger than `1e-9` in magnitude is positive.
pub fn pca_project_2d(banks: &[&EmbeddingBank]) -> Result<Vec<PcaPoint>> {
    let dim = banks
        .first()
        .map(|b| b.dim())
        .ok_or_else(|| Error::EmptyBank("no banks given".into()))?;
    if let Some(b) = banks.iter().find(|b| b.dim() != dim) {
        return Err(Error::Dimension(format!(
            "banks have dims {dim} and {}",
            b.dim()
        )));
    }
    let n: usize = banks.iter().map(|b| b.len()).sum();
    if n < 2 {
        return Err(Error::EmptyBank(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }

    let mut mean = vec![0.0; dim];
    for b in banks {
        for (_, row) in b.rows() {
            mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for b in banks {
        for (_, row) in b.rows() {
            let c: Vec<f64> = row.iter().zip(&mean).map(|(x, m)| x - m).collect();
            for i in 0..dim {
                for j in i..dim {
                    cov[(i, j)] += c[i] * c[j];
                }
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let axes: Vec<Vec<f64>> = order
        .iter()
        .take(2)
        .map(|&c| {
            let mut axis: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            if let Some(first) = axis.iter().find(|v| v.abs() > 1e-9) {
                if *first < 0.0 {
                    axis.iter_mut().for_each(|v| *v = -*v);
                }
            }
            axis
        })
        .collect();

    let project = |c: &[f64], axis: Option<&Vec<f64>>| {
        axis.map_or(0.0, |a| a.iter().zip(c).map(|(x, y)| x * y).sum())
    };
    let mut out = Vec::with_capacity(n);
    for b in banks {
        for (id, row) in b.rows() {
            let c: Vec<f64> = row.iter().zip(&mean).map(|(x, m)| x - m).collect();
            out.push(PcaPoint {
                modality: b.modality(),
                task_id: id.to_owned(),
                x: project(&c, axes.first()),
                y: project(&c, axes.get(1)),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub dim: usize,
    pub per_dim_abs_mean_gap: Vec<f64>,
    pub gap_vector: Vec<f64>,
    pub gap_norm: f64,
    pub matched_pair_mean_cosine: f64,
    pub retrieval_top1_v2t: f64,
    pub retrieval_top1_t2v: f64,
}

pub fn gap_report(bank_v: &EmbeddingBank, bank_l: &EmbeddingBank) -> Result<GapReport> {
    let matrix = matched_pair_similarity_matrix(bank_v, bank_l)?;
    let gap = gap_vector(bank_v, bank_l)?;
    Ok(GapReport {
        dim: bank_v.dim(),
        per_dim_abs_mean_gap: gap.iter().map(|g| g.abs()).collect(),
        gap_norm: l2_norm(&gap),
        gap_vector: gap,
        matched_pair_mean_cosine: matrix.diagonal_mean(),
        retrieval_top1_v2t: retrieval_topk_accuracy(bank_v, bank_l, 1)?,
        retrieval_top1_t2v: retrieval_topk_accuracy(bank_l, bank_v, 1)?,
    })
}

#[derive(Serialize)]
struct ExportedReport<'a> {
    #[serde(flatten)]
    report: &'a GapReport,
    task_aggregation: &'static str,
    off_diagonal_mean_cosine: Option<f64>,
    num_tasks: usize,
    rows_visual: usize,
    rows_text: usize,
}

/// Writes `gap_report.json`, `simmatrix.csv`, `perdim_gap.csv` and `pca2d.csv`
/// into `out_dir`.
pub fn export_diagnostics(
    bank_v: &EmbeddingBank,
    bank_l: &EmbeddingBank,
    out_dir: &Path,
) -> Result<GapReport> {
    let report = gap_report(bank_v, bank_l)?;
    let matrix = matched_pair_similarity_matrix(bank_v, bank_l)?;
    let points = pca_project_2d(&[bank_v, bank_l])?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let k = matrix.task_ids.len();
    let exported = ExportedReport {
        report: &report,
        task_aggregation: "mean",
        off_diagonal_mean_cosine: (k > 1).then(|| matrix.off_diagonal_mean()),
        num_tasks: k,
        rows_visual: bank_v.len(),
        rows_text: bank_l.len(),
    };
    let json_path = out_dir.join("gap_report.json");
    let json = serde_json::to_string_pretty(&exported).expect("report serializes");
    std::fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;

    let mut sim = vec![std::iter::once("visual_task".to_string())
        .chain(matrix.task_ids.iter().cloned())
        .collect::<Vec<_>>()];
    for (id, row) in matrix.task_ids.iter().zip(&matrix.values) {
        sim.push(
            std::iter::once(id.clone())
                .chain(row.iter().map(|v| v.to_string()))
                .collect(),
        );
    }
    write_csv(&out_dir.join("simmatrix.csv"), &sim)?;

    let mut perdim = vec![vec!["dim".into(), "gap".into(), "abs_gap".into()]];
    for (i, g) in report.gap_vector.iter().enumerate() {
        perdim.push(vec![i.to_string(), g.to_string(), g.abs().to_string()]);
    }
    write_csv(&out_dir.join("perdim_gap.csv"), &perdim)?;

    let mut pca = vec![vec![
        "modality".into(),
        "task_id".into(),
        "x".into(),
        "y".into(),
    ]];
    for p in &points {
        pca.push(vec![
            p.modality.to_string(),
            p.task_id.clone(),
            p.x.to_string(),
            p.y.to_string(),
        ]);
    }
    write_csv(&out_dir.join("pca2d.csv"), &pca)?;
    Ok(report)
}

pub(crate) fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row.iter().map(|c| csv_cell(c)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
