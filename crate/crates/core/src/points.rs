//! Point sets, orderings, distance matrices and graph collections.
//!
//! Everything here is immutable once constructed; constructors validate the
//! invariants so downstream code can index without re-checking.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VonError};

/// `n` points with `d`-dimensional coordinates, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    n: usize,
    dim: usize,
    coords: Vec<f64>,
    labels: Option<Vec<i64>>,
    item_ids: Option<Vec<String>>,
}

impl PointSet {
    pub fn new(coords: Vec<f64>, n: usize, dim: usize) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(VonError::InvalidPointSet(format!("need n >= 1 and d >= 1, got n = {n}, d = {dim}")));
        }
        if coords.len() != n * dim {
            return Err(VonError::InvalidPointSet(format!(
                "{} coordinates do not fill a {n}x{dim} matrix",
                coords.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|v| !v.is_finite()) {
            return Err(VonError::InvalidPointSet(format!(
                "non-finite coordinate at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { n, dim, coords, labels: None, item_ids: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(VonError::InvalidPointSet(format!(
                "row {bad} has {} columns, expected {dim}",
                rows[bad].len()
            )));
        }
        Self::new(rows.concat(), n, dim)
    }

    pub fn with_labels(mut self, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(VonError::InvalidPointSet(format!("{} labels for {} points", labels.len(), self.n)));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_item_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n {
            return Err(VonError::InvalidPointSet(format!("{} item ids for {} points", ids.len(), self.n)));
        }
        self.item_ids = Some(ids);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn item_ids(&self) -> Option<&[String]> {
        self.item_ids.as_deref()
    }

    /// Column `j` as an owned vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Sub-point-set with rows taken in the order of `indices`. Labels and ids follow.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n) {
            return Err(VonError::InvalidPointSet(format!("index {bad} out of range for n = {}", self.n)));
        }
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.row(i));
        }
        let mut out = Self::new(coords, indices.len(), self.dim)?;
        out.labels = self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        out.item_ids = self.item_ids.as_ref().map(|l| indices.iter().map(|&i| l[i].clone()).collect());
        Ok(out)
    }
}

/// A permutation of point indices. Position `t` holds the index emitted at step `t`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Ordering(Vec<usize>);

impl Ordering {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        if !validate_ordering(&perm, n) {
            return Err(VonError::InvalidOrdering(format!("{perm:?} is not a permutation of 0..{n}")));
        }
        Ok(Self(perm))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    /// Inverse permutation: `positions()[i]` is the slot of point `i`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.0.len()];
        for (t, &i) in self.0.iter().enumerate() {
            pos[i] = t;
        }
        pos
    }

    pub fn reversed(&self) -> Self {
        reverse(self)
    }
}

impl TryFrom<Vec<usize>> for Ordering {
    type Error = VonError;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Ordering> for Vec<usize> {
    fn from(o: Ordering) -> Self {
        o.0
    }
}

impl std::ops::Index<usize> for Ordering {
    type Output = usize;

    fn index(&self, t: usize) -> &usize {
        &self.0[t]
    }
}

/// True iff `perm` is a permutation of `0..n`.
pub fn validate_ordering(perm: &[usize], n: usize) -> bool {
    if perm.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &i in perm {
        if i >= n || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

pub fn reverse(o: &Ordering) -> Ordering {
    Ordering(o.0.iter().rev().copied().collect())
}

/// Symmetric, zero-diagonal, finite, nonnegative `n x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(d: Vec<f64>, n: usize) -> Result<Self> {
        if d.len() != n * n {
            return Err(VonError::Domain(format!("{} entries do not fill a {n}x{n} distance matrix", d.len())));
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(VonError::Domain(format!("distance diagonal ({i},{i}) is {}", d[i * n + i])));
            }
            for j in 0..n {
                let v = d[i * n + j];
                if !v.is_finite() || v < 0.0 {
                    return Err(VonError::Domain(format!("distance ({i},{j}) = {v} is not finite and nonnegative")));
                }
                if v != d[j * n + i] {
                    return Err(VonError::Domain(format!("distance matrix asymmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { n, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.d
    }
}

/// Euclidean distances between all pairs of points.
pub fn pairwise_distances(ps: &PointSet) -> DistanceMatrix {
    let n = ps.n();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let a = ps.row(i);
        for j in (i + 1)..n {
            let b = ps.row(j);
            let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            let v = s.sqrt();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    DistanceMatrix { n, d }
}

/// `k` nonnegative `n x n` matrices over a shared vertex set.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphCollection {
    n: usize,
    adjacency: Vec<Vec<f64>>,
}

impl GraphCollection {
    pub fn new(adjacency: Vec<Vec<f64>>, n: usize) -> Result<Self> {
        if adjacency.is_empty() {
            return Err(VonError::Domain("graph collection needs at least one matrix".into()));
        }
        for (t, m) in adjacency.iter().enumerate() {
            if m.len() != n * n {
                return Err(VonError::Domain(format!("matrix {t} has {} entries, expected {}", m.len(), n * n)));
            }
            if let Some(pos) = m.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(VonError::Domain(format!(
                    "matrix {t} entry ({}, {}) = {} is not finite and nonnegative",
                    pos / n,
                    pos % n,
                    m[pos]
                )));
            }
        }
        Ok(Self { n, adjacency })
    }

    pub fn single(m: Vec<f64>, n: usize) -> Result<Self> {
        Self::new(vec![m], n)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn matrix(&self, t: usize) -> &[f64] {
        &self.adjacency[t]
    }

    pub fn matrices(&self) -> impl Iterator<Item = &[f64]> {
        self.adjacency.iter().map(Vec::as_slice)
    }

    /// The induced sub-collection on `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n) {
            return Err(VonError::Domain(format!("vertex {bad} out of range for n = {}", self.n)));
        }
        let k = indices.len();
        let adjacency = self
            .adjacency
            .iter()
            .map(|m| indices.iter().flat_map(|&i| indices.iter().map(move |&j| m[i * self.n + j])).collect())
            .collect();
        Self::new(adjacency, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(rows: &[&[f64]]) -> PointSet {
        PointSet::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn validate_examples() {
        assert!(validate_ordering(&[0, 1, 2], 3));
        assert!(validate_ordering(&[2, 0, 1], 3));
        assert!(!validate_ordering(&[0, 0, 2], 3));
        assert!(!validate_ordering(&[0, 1, 3], 3));
        assert!(!validate_ordering(&[0, 1], 3));
    }

    #[test]
    fn distance_examples() {
        let d = pairwise_distances(&pts(&[&[0.0, 0.0], &[3.0, 4.0]]));
        assert_eq!(d.get(0, 1), 5.0);
        let d = pairwise_distances(&pts(&[&[1.5, -2.0]]));
        assert_eq!(d.as_slice(), &[0.0]);
        let d = pairwise_distances(&pts(&[&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0]]));
        assert_eq!(d.get(0, 2), 2.0);
        assert_eq!(d.get(0, 1), 1.0);
        assert_eq!(d.get(1, 2), 1.0);
    }

    #[test]
    fn reverse_examples() {
        assert_eq!(reverse(&Ordering::identity(3)).as_slice(), &[2, 1, 0]);
        assert_eq!(reverse(&Ordering::new(vec![0]).unwrap()).as_slice(), &[0]);
    }

    #[test]
    fn point_set_rejects_bad_input() {
        assert!(PointSet::new(vec![], 0, 2).is_err());
        assert!(PointSet::new(vec![1.0, f64::NAN], 1, 2).is_err());
        assert!(PointSet::new(vec![1.0, 2.0, 3.0], 2, 2).is_err());
        let ps = PointSet::new(vec![1.0, 2.0], 2, 1).unwrap();
        assert!(ps.clone().with_labels(vec![1]).is_err());
        assert!(ps.with_item_ids(vec!["a".into(), "b".into()]).is_ok());
    }

    #[test]
    fn subset_carries_labels() {
        let ps = pts(&[&[0.0], &[1.0], &[2.0]]).with_labels(vec![7, 8, 9]).unwrap();
        let s = ps.subset(&[2, 0]).unwrap();
        assert_eq!(s.coords(), &[2.0, 0.0]);
        assert_eq!(s.labels(), Some(&[9, 7][..]));
        assert!(ps.subset(&[3]).is_err());
    }

    #[test]
    fn distance_matrix_validation() {
        assert!(DistanceMatrix::new(vec![0.0, 1.0, 2.0, 0.0], 2).is_err());
        assert!(DistanceMatrix::new(vec![1.0, 1.0, 1.0, 0.0], 2).is_err());
        assert!(DistanceMatrix::new(vec![0.0, 1.0, 1.0, 0.0], 2).is_ok());
    }

    #[test]
    fn ordering_serde_validates() {
        let o: Ordering = serde_json::from_str("[2,0,1]").unwrap();
        assert_eq!(o.positions(), vec![1, 2, 0]);
        assert!(serde_json::from_str::<Ordering>("[0,0]").is_err());
    }

    fn shuffled(n: usize, seed: u64) -> Vec<usize> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        v
    }

    proptest! {
        #[test]
        fn validate_matches_sorted_identity(perm in prop::collection::vec(0usize..8, 0..8)) {
            let n = perm.len();
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            prop_assert_eq!(validate_ordering(&perm, n), sorted == (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn reverse_is_involution(n in 1usize..40, seed: u64) {
            let o = Ordering::new(shuffled(n, seed)).unwrap();
            prop_assert_eq!(reverse(&reverse(&o)), o);
        }

        #[test]
        fn triangle_inequality(coords in prop::collection::vec(-100.0f64..100.0, 3..30)) {
            let n = coords.len() / 3;
            let ps = PointSet::new(coords[..n * 3].to_vec(), n, 3).unwrap();
            let d = pairwise_distances(&ps);
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(d.get(i, j), d.get(j, i));
                    for k in 0..n {
                        prop_assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k) + 1e-9);
                    }
                }
            }
        }
    }
}
