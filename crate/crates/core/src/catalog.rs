//! Enumeration of the independent detectable sensor subsets that back the
//! observer bank.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// Relative singular-value threshold used for every PBH rank test.
pub const RANK_TOL: f64 = 1e-9;
/// Eigenvalues with modulus at or above `1 - MARGINAL_TOL` are treated as
/// unstable or marginal.
pub const MARGINAL_TOL: f64 = 1e-6;
const CLUSTER_TOL: f64 = 1e-5;

/// A sensor subset `J_j` with its stacked output rows.
#[derive(Clone, Debug)]
pub struct SensorSubset {
    /// 1-based sensor indices, strictly increasing.
    pub indices: Vec<usize>,
    pub c_sub: Mat,
}

impl SensorSubset {
    pub fn new(indices: Vec<usize>, c_rows: &Mat) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("sensor subset must be non-empty"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("subset indices must be strictly increasing"));
        }
        if indices[0] == 0 || *indices.last().unwrap() > c_rows.nrows() {
            return Err(Error::invalid("subset index out of range"));
        }
        let zero_based: Vec<usize> = indices.iter().map(|i| i - 1).collect();
        let c_sub = linalg::select_rows(c_rows, &zero_based);
        Ok(Self { indices, c_sub })
    }

    pub fn card(&self) -> usize {
        self.indices.len()
    }

    pub fn contains(&self, sensor: usize) -> bool {
        self.indices.binary_search(&sensor).is_ok()
    }

    pub fn is_disjoint_from(&self, sensors: &[usize]) -> bool {
        sensors.iter().all(|s| !self.contains(*s))
    }

    /// Measurements of this subset picked out of the full sensor vector.
    pub fn pick(&self, y: &linalg::Vector) -> linalg::Vector {
        linalg::Vector::from_iterator(self.card(), self.indices.iter().map(|&i| y[i - 1]))
    }
}

#[derive(Clone, Debug)]
pub struct SubsetCatalog {
    pub subsets: Vec<SensorSubset>,
    pub p: usize,
    /// Largest q with q < p/2.
    pub q_tolerable: usize,
}

impl SubsetCatalog {
    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    pub fn max_cardinality(&self) -> usize {
        self.subsets.iter().map(|s| s.card()).max().unwrap_or(0)
    }

    /// Whether `max card <= q_tolerable < p/2` holds for this family.
    pub fn cardinality_bound_holds(&self) -> bool {
        self.max_cardinality() <= self.q_tolerable && 2 * self.q_tolerable < self.p
    }

    pub fn index_lists(&self) -> Vec<Vec<usize>> {
        self.subsets.iter().map(|s| s.indices.clone()).collect()
    }

    /// Rebuild a catalog from explicit index lists (e.g. loaded from JSON).
    pub fn from_index_lists(lists: &[Vec<usize>], c_rows: &Mat) -> Result<Self> {
        let subsets = lists
            .iter()
            .map(|l| SensorSubset::new(l.clone(), c_rows))
            .collect::<Result<Vec<_>>>()?;
        let p = c_rows.nrows();
        Ok(Self { subsets, p, q_tolerable: p.saturating_sub(1) / 2 })
    }

    pub fn summary(&self) -> CatalogSummary {
        CatalogSummary {
            p: self.p,
            q_tolerable: self.q_tolerable,
            max_cardinality: self.max_cardinality(),
            subsets: self.index_lists(),
        }
    }
}

/// JSON audit form of a catalog.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogSummary {
    pub p: usize,
    pub q_tolerable: usize,
    pub max_cardinality: usize,
    pub subsets: Vec<Vec<usize>>,
}

/// Unstable or marginal eigenvalues of `a`, with near-coincident values merged.
///
/// Defective eigenvalues come back from the QR iteration spread around the
/// true value; the cluster mean is far more accurate than any member.
pub fn marginal_eigenvalues(a: &Mat) -> Vec<Complex<f64>> {
    let mut clusters: Vec<(Complex<f64>, usize)> = Vec::new();
    for l in linalg::eigenvalues(a) {
        if let Some(c) = clusters.iter_mut().find(|(m, cnt)| (*m / *cnt as f64 - l).norm() < CLUSTER_TOL) {
            c.0 += l;
            c.1 += 1;
        } else {
            clusters.push((l, 1));
        }
    }
    clusters
        .into_iter()
        .map(|(s, c)| s / c as f64)
        .filter(|l| l.norm() >= 1.0 - MARGINAL_TOL)
        .collect()
}

/// Discrete-time PBH detectability of the pair `(a, c)`.
pub fn is_detectable(a: &Mat, c: &Mat) -> bool {
    let n = a.nrows();
    if c.nrows() > 0 && c.ncols() != n {
        return false;
    }
    let c = if c.nrows() == 0 { Mat::zeros(0, n) } else { c.clone() };
    marginal_eigenvalues(a)
        .into_iter()
        .all(|l| linalg::pbh_rank(a, &c, l, RANK_TOL) == n)
}

fn mask_indices(mask: u32, p: usize) -> Vec<usize> {
    (0..p).filter(|i| mask & (1 << i) != 0).map(|i| i + 1).collect()
}

/// All non-empty subsets of `{1..p}` in ascending (cardinality, lexicographic) order.
pub fn candidate_subsets(p: usize) -> Vec<Vec<usize>> {
    let mut all: Vec<Vec<usize>> = (1..(1u32 << p)).map(|m| mask_indices(m, p)).collect();
    all.sort_by(|x, y| x.len().cmp(&y.len()).then_with(|| x.cmp(y)));
    all
}

/// Build the minimal family of detectable sensor subsets.
pub fn build_catalog(a: &Mat, c_rows: &Mat) -> Result<SubsetCatalog> {
    let p = c_rows.nrows();
    if p == 0 {
        return Err(Error::invalid("at least one sensor is required"));
    }
    if p > 16 {
        return Err(Error::invalid(format!("{p} sensors is beyond exhaustive enumeration")));
    }
    if !a.is_square() || c_rows.ncols() != a.nrows() {
        return Err(Error::invalid("dimension mismatch between a and c_rows"));
    }
    linalg::ensure_finite(a, "a")?;
    linalg::ensure_finite(c_rows, "c_rows")?;

    let mut kept: Vec<SensorSubset> = Vec::new();
    for idx in candidate_subsets(p) {
        if kept.iter().any(|k| k.indices.iter().all(|i| idx.binary_search(i).is_ok())) {
            continue;
        }
        let subset = SensorSubset::new(idx, c_rows)?;
        if is_detectable(a, &subset.c_sub) {
            kept.push(subset);
        }
    }
    if kept.is_empty() {
        return Err(Error::SynthesisImpossible);
    }
    Ok(SubsetCatalog { subsets: kept, p, q_tolerable: (p - 1) / 2 })
}

/// 1-based indices `j` of the subsets that share no sensor with `attacked`.
pub fn reliable_subsets(catalog: &SubsetCatalog, attacked: &[usize]) -> Vec<usize> {
    catalog
        .subsets
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_disjoint_from(attacked))
        .map(|(j, _)| j + 1)
        .collect()
}
