#![allow(dead_code)]

use std::sync::Arc;

use bvgrid::grid::{GridFunction, GridMeasure};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform(shape: &[usize]) -> Arc<GridMeasure<f64>> {
    let h = 1.0 / shape[0] as f64;
    Arc::new(GridMeasure::uniform(shape.to_vec(), h).unwrap())
}

pub fn with_weights(shape: &[usize], w: Vec<f64>) -> Arc<GridMeasure<f64>> {
    let h = 1.0 / shape[0] as f64;
    Arc::new(GridMeasure::new(shape.to_vec(), h, vec![0.0; shape.len()], w).unwrap())
}

/// Sum of clipped cones of three shapes (Euclidean, sup and taxicab), each
/// compactly supported, with random centers, heights and slopes.
pub fn random_lipschitz(m: &Arc<GridMeasure<f64>>, seed: u64) -> GridFunction<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = m.dim();
    let k = rng.gen_range(1..4);
    let cones: Vec<(Vec<f64>, f64, f64, usize)> = (0..k)
        .map(|_| {
            let c = (0..d).map(|_| rng.gen_range(0.2..0.8)).collect();
            (
                c,
                rng.gen_range(0.5..4.0),
                rng.gen_range(0.05..0.3),
                rng.gen_range(0..3),
            )
        })
        .collect();
    GridFunction::from_fn(m.clone(), |x| {
        cones
            .iter()
            .map(|(c, slope, r, kind)| {
                let diffs = x.iter().zip(c).map(|(a, b)| (a - b).abs());
                let dist = match kind {
                    0 => diffs.map(|t| t * t).sum::<f64>().sqrt(),
                    1 => diffs.fold(0.0, f64::max),
                    _ => diffs.sum(),
                };
                slope * (r - dist).max(0.0)
            })
            .sum()
    })
}

/// Orthonormal basis of the null space of `a`, from the full SVD of `aᵀa`.
pub fn null_space(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let ata = a.transpose() * a;
    let eig = ata.symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cols: Vec<usize> = (0..n)
        .filter(|&j| eig.eigenvalues[j] <= rel_tol * top.max(1.0))
        .collect();
    DMatrix::from_fn(n, cols.len(), |r, c| eig.eigenvectors[(r, cols[c])])
}

/// Rank of a matrix by singular values above `rel_tol` of the largest.
pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}
