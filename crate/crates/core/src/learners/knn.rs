use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use super::{check_xy, Family, FittedLearner, LearnerKind, LearnerSpec, Model, TermExpansion};
use crate::error::{Error, Result};

/// k-nearest-neighbour regression (Euclidean distance, ties by row index).
pub fn fit_nearest_neighbor(x: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> Result<FittedLearner> {
    check_xy(x, y)?;
    if k == 0 || k > x.nrows() {
        return Err(Error::SpecError(format!(
            "nearest neighbor needs 1 <= k <= n, got k = {k}, n = {}",
            x.nrows()
        )));
    }
    let spec = LearnerSpec {
        kind: LearnerKind::NearestNeighbor { k },
        family: Family::Continuous,
        expansion: TermExpansion::MainTerms,
    };
    Ok(FittedLearner::raw(
        spec,
        Model::NearestNeighbor {
            x: x.clone(),
            y: y.iter().copied().collect(),
            k,
        },
        x,
        true,
    ))
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

pub(crate) fn predict(train: &DMatrix<f64>, y: &[f64], k: usize, query: &DMatrix<f64>) -> DVector<f64> {
    let n = train.nrows();
    let p = train.ncols();
    // Row-major copy for cache-friendly distance loops.
    let rows: Vec<f64> = (0..n).flat_map(|i| (0..p).map(move |j| (i, j))).map(|(i, j)| train[(i, j)]).collect();
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut q = vec![0.0; p];
    DVector::from_fn(query.nrows(), |r, _| {
        for j in 0..p {
            q[j] = query[(r, j)];
        }
        dist.clear();
        for i in 0..n {
            let row = &rows[i * p..(i + 1) * p];
            let d: f64 = row.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
            dist.push((d, i));
        }
        if k < n {
            dist.select_nth_unstable_by(k - 1, by_distance_then_index);
        }
        dist[..k].iter().map(|&(_, i)| y[i]).sum::<f64>() / k as f64
    })
}
