//! Input coordinates for data without intrinsic coordinates, and dataset loading.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VonError};
use crate::points::{DistanceMatrix, GraphCollection, PointSet};

/// Each point's row of the distance matrix becomes its coordinate vector.
pub fn distance_init(d: &DistanceMatrix) -> PointSet {
    PointSet::new(d.as_slice().to_vec(), d.n(), d.n()).expect("distance matrices are finite")
}

/// Mean-centered projection onto the top `out_dim` principal directions.
pub fn pca_embed(ps: &PointSet, out_dim: usize) -> Result<PointSet> {
    project(ps, out_dim, true)
}

/// Truncated SVD projection; like [`pca_embed`] without centering.
pub fn tsvd_embed(ps: &PointSet, out_dim: usize) -> Result<PointSet> {
    project(ps, out_dim, false)
}

fn project(ps: &PointSet, out_dim: usize, center: bool) -> Result<PointSet> {
    let (n, d) = (ps.n(), ps.dim());
    if out_dim == 0 || out_dim > n.min(d) {
        return Err(VonError::Domain(format!("out_dim must be in 1..={}, got {out_dim}", n.min(d))));
    }
    let mut x = DMatrix::from_row_slice(n, d, ps.coords());
    if center {
        for j in 0..d {
            let mean = x.column(j).mean();
            x.column_mut(j).add_scalar_mut(-mean);
        }
    }
    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let mut basis = DMatrix::zeros(d, out_dim);
    for (c, &k) in order.iter().take(out_dim).enumerate() {
        let mut dir: Vec<f64> = v_t.row(k).iter().copied().collect();
        // fixed sign: first clearly nonzero loading is positive
        if dir.iter().find(|v| v.abs() > 1e-12).is_some_and(|&v| v < 0.0) {
            dir.iter_mut().for_each(|v| *v = -*v);
        }
        for (r, v) in dir.into_iter().enumerate() {
            basis[(r, c)] = v;
        }
    }
    let y = x * basis;
    let mut out = PointSet::new(y.transpose().as_slice().to_vec(), n, out_dim)?;
    if let Some(l) = ps.labels() {
        out = out.with_labels(l.to_vec())?;
    }
    if let Some(ids) = ps.item_ids() {
        out = out.with_item_ids(ids.to_vec())?;
    }
    Ok(out)
}

/// Elementwise mean of the adjacency matrices; row `i` is vertex `i`'s coordinates.
pub fn average_adjacency_coords(g: &GraphCollection) -> PointSet {
    let n = g.n();
    let mut mean = vec![0.0; n * n];
    for m in g.matrices() {
        for (a, b) in mean.iter_mut().zip(m) {
            *a += b;
        }
    }
    let k = g.len() as f64;
    mean.iter_mut().for_each(|v| *v /= k);
    PointSet::new(mean, n, n).expect("adjacency entries are finite")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Points,
    Graphs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub kind: DatasetKind,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub has_labels: bool,
    pub files: Vec<PathBuf>,
    #[serde(default)]
    pub thumbnail_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetData {
    Points(PointSet),
    Graphs(GraphCollection),
}

impl DatasetData {
    pub fn n(&self) -> usize {
        match self {
            DatasetData::Points(p) => p.n(),
            DatasetData::Graphs(g) => g.n(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    /// Directory the manifest's relative paths resolve against.
    pub root: PathBuf,
    pub data: DatasetData,
}

impl Dataset {
    pub fn thumbnail_dir(&self) -> Option<PathBuf> {
        self.manifest.thumbnail_dir.as_ref().map(|d| self.root.join(d))
    }

    /// Point coordinates, or averaged adjacency rows for graph data.
    pub fn coordinates(&self) -> PointSet {
        match &self.data {
            DatasetData::Points(p) => p.clone(),
            DatasetData::Graphs(g) => average_adjacency_coords(g),
        }
    }
}

const LABEL_COLUMN: &str = "label";
const ID_COLUMN: &str = "id";

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| VonError::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| VonError::Parse {
        file: manifest_path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    if manifest.files.is_empty() {
        return Err(VonError::Parse { file: manifest_path.to_path_buf(), line: 0, msg: "manifest lists no files".into() });
    }
    let data = match manifest.kind {
        DatasetKind::Points => {
            if manifest.files.len() != 1 {
                return Err(VonError::Parse {
                    file: manifest_path.to_path_buf(),
                    line: 0,
                    msg: format!("points datasets take exactly one file, got {}", manifest.files.len()),
                });
            }
            let ps = read_points_csv(&root.join(&manifest.files[0]), manifest.has_labels)?;
            if let Some(dim) = manifest.dim.filter(|&d| d != ps.dim()) {
                return Err(VonError::Parse {
                    file: root.join(&manifest.files[0]),
                    line: 0,
                    msg: format!("manifest declares dim {dim}, file has {} coordinate columns", ps.dim()),
                });
            }
            DatasetData::Points(ps)
        }
        DatasetKind::Graphs => {
            let mut mats = Vec::with_capacity(manifest.files.len());
            let mut n = None;
            for f in &manifest.files {
                let path = root.join(f);
                let (m, k) = read_matrix_csv(&path)?;
                if *n.get_or_insert(k) != k {
                    return Err(VonError::Parse {
                        file: path,
                        line: 0,
                        msg: format!("matrix is {k}x{k}, earlier steps are {}x{}", n.unwrap(), n.unwrap()),
                    });
                }
                mats.push(m);
            }
            DatasetData::Graphs(GraphCollection::new(mats, n.unwrap())?)
        }
    };
    Ok(Dataset { manifest, root, data })
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> VonError {
    VonError::Parse { file: file.to_path_buf(), line, msg: msg.into() }
}

fn read_records(path: &Path) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_path(path).map_err(
        |e| match e.into_kind() {
            csv::ErrorKind::Io(io) => VonError::io(path, io),
            other => parse_err(path, 0, format!("{other:?}")),
        },
    )?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn parse_cell(path: &Path, line: usize, col: usize, s: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| parse_err(path, line, format!("column {col}: `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("column {col}: non-finite value `{s}`")));
    }
    Ok(v)
}

fn is_header(rec: &csv::StringRecord) -> bool {
    rec.iter().any(|s| s.parse::<f64>().is_err())
}

/// Reads a point CSV. A header row is optional; with one, columns named
/// `label` and `id` are read as labels and item ids.
pub fn read_points_csv(path: &Path, has_labels: bool) -> Result<PointSet> {
    let mut records = read_records(path)?;
    let header: Option<Vec<String>> = match records.first() {
        Some((_, r)) if is_header(r) => Some(r.iter().map(str::to_string).collect()),
        _ => None,
    };
    if header.is_some() {
        records.remove(0);
    }
    if records.is_empty() {
        return Err(parse_err(path, 0, "no data rows"));
    }
    let width = header.as_ref().map_or(records[0].1.len(), Vec::len);
    // without a header, declared labels are the trailing column
    let label_col = match &header {
        Some(h) => h.iter().position(|c| c == LABEL_COLUMN),
        None => has_labels.then(|| width - 1),
    };
    let id_col = header.as_ref().and_then(|h| h.iter().position(|c| c == ID_COLUMN));
    if has_labels && label_col.is_none() {
        return Err(parse_err(path, 1, "manifest declares labels but the header has no `label` column"));
    }
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for (line, rec) in &records {
        if rec.len() != width {
            return Err(parse_err(path, *line, format!("expected {width} columns, found {}", rec.len())));
        }
        for (c, s) in rec.iter().enumerate() {
            if Some(c) == id_col {
                ids.push(s.to_string());
            } else if Some(c) == label_col {
                labels.push(s.parse::<i64>().map_err(|_| parse_err(path, *line, format!("column {c}: bad label `{s}`")))?);
            } else {
                coords.push(parse_cell(path, *line, c, s)?);
            }
        }
    }
    let dim = width - usize::from(label_col.is_some()) - usize::from(id_col.is_some());
    if dim == 0 {
        return Err(parse_err(path, 1, "no coordinate columns"));
    }
    let mut ps = PointSet::new(coords, records.len(), dim).map_err(|e| parse_err(path, 0, e.to_string()))?;
    if label_col.is_some() && has_labels {
        ps = ps.with_labels(labels)?;
    }
    if id_col.is_some() {
        ps = ps.with_item_ids(ids)?;
    }
    Ok(ps)
}

/// Reads a square numeric matrix without a header.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<f64>, usize)> {
    let records = read_records(path)?;
    let n = records.len();
    if n == 0 {
        return Err(parse_err(path, 0, "empty matrix"));
    }
    let mut m = Vec::with_capacity(n * n);
    for (line, rec) in &records {
        if rec.len() != n {
            return Err(parse_err(path, *line, format!("expected {n} columns for a square matrix, found {}", rec.len())));
        }
        for (c, s) in rec.iter().enumerate() {
            let v = parse_cell(path, *line, c, s)?;
            if v < 0.0 {
                return Err(parse_err(path, *line, format!("column {c}: negative weight {v}")));
            }
            m.push(v);
        }
    }
    Ok((m, n))
}
