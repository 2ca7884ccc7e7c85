//! Dynamic time warping over multichannel sequences.
//!
//! Steps are the unit moves `(1,0)`, `(0,1)`, `(1,1)` without slope weights;
//! the local cost is the Euclidean norm of the channel-difference vector.
//! An optional Sakoe-Chiba band restricts cells to `|i - j| <= band`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Series;
use crate::error::{CfxError, Result};

/// Sakoe-Chiba band choice.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    /// Half-width `T / 10`.
    #[default]
    Auto,
    Unbanded,
    Fixed(usize),
}

impl Band {
    pub fn resolve(self, n_timesteps: usize) -> Option<usize> {
        match self {
            Band::Auto => Some(n_timesteps / 10),
            Band::Unbanded => None,
            Band::Fixed(w) => Some(w),
        }
    }
}

#[inline]
fn local_cost(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = f64::from(*x) - f64::from(*y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// DTW between two row-major sequences sharing `channels` columns.
pub fn dtw(a: &[f32], b: &[f32], channels: usize, band: Option<usize>) -> Result<f64> {
    if channels == 0 || !a.len().is_multiple_of(channels) || !b.len().is_multiple_of(channels) {
        return Err(CfxError::Shape {
            expected: format!("multiples of {channels} channels"),
            got: format!("{} and {} values", a.len(), b.len()),
        });
    }
    let n = a.len() / channels;
    let m = b.len() / channels;
    if n == 0 || m == 0 {
        return Err(CfxError::Empty("DTW input sequence"));
    }
    let w = match band {
        Some(w) if w < n.abs_diff(m) => {
            return Err(CfxError::InvalidArgument(format!(
                "band {w} cannot connect lengths {n} and {m}"
            )))
        }
        Some(w) => w,
        None => n.max(m),
    };

    // 1-based columns; index 0 is the virtual boundary
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        let lo = i.saturating_sub(w).max(1);
        let hi = (i + w).min(m);
        cur[lo - 1] = f64::INFINITY;
        let row_a = &a[(i - 1) * channels..i * channels];
        for j in lo..=hi {
            let best = prev[j].min(prev[j - 1]).min(cur[j - 1]);
            cur[j] = local_cost(row_a, &b[(j - 1) * channels..j * channels]) + best;
        }
        if hi < m {
            cur[hi + 1] = f64::INFINITY;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

pub fn dtw_distance(a: &Series, b: &Series, band: Option<usize>) -> Result<f64> {
    if a.n_channels() != b.n_channels() {
        return Err(CfxError::Shape {
            expected: format!("{} channels", a.n_channels()),
            got: format!("{} channels", b.n_channels()),
        });
    }
    dtw(a.values(), b.values(), a.n_channels(), band)
}

/// Symmetric matrix of pairwise DTW distances with record ids.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
    ids: Vec<String>,
}

impl DistanceMatrix {
    /// Validates symmetry, zero diagonal, finiteness and non-negativity.
    pub fn from_rows(d: Vec<Vec<f64>>, ids: Vec<String>) -> Result<DistanceMatrix> {
        let n = d.len();
        if ids.len() != n || d.iter().any(|r| r.len() != n) {
            return Err(CfxError::Shape {
                expected: format!("{n}x{n} matrix with {n} ids"),
                got: format!("{} ids", ids.len()),
            });
        }
        for i in 0..n {
            if d[i][i] != 0.0 {
                return Err(CfxError::InvalidArgument(format!("d[{i}][{i}] must be 0")));
            }
            for j in 0..n {
                let v = d[i][j];
                if !v.is_finite() || v < 0.0 {
                    return Err(CfxError::InvalidArgument(format!(
                        "d[{i}][{j}] = {v} is not a finite non-negative distance"
                    )));
                }
                if v != d[j][i] {
                    return Err(CfxError::InvalidArgument(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(DistanceMatrix {
            n,
            d: d.into_iter().flatten().collect(),
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.d.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }
}

/// Computes every unordered pair once (in parallel) and mirrors it.
pub fn distance_matrix(records: &[Series], band: Option<usize>) -> Result<DistanceMatrix> {
    let n = records.len();
    if n < 2 {
        return Err(CfxError::InvalidArgument(format!(
            "a distance matrix needs at least 2 records, got {n}"
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| dtw_distance(&records[i], &records[j], band))
        .collect::<Result<Vec<f64>>>()?;
    let mut d = vec![0.0; n * n];
    for (&(i, j), v) in pairs.iter().zip(values) {
        d[i * n + j] = v;
        d[j * n + i] = v;
    }
    Ok(DistanceMatrix {
        n,
        d,
        ids: records.iter().map(|r| r.record_id().to_string()).collect(),
    })
}
