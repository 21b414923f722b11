//! Exact k-nearest-neighbor mean distances.
//!
//! Both paths compute each distance with the same expression and reduce the
//! k smallest values in ascending order, so the grid search reproduces the
//! brute-force result bit for bit.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Below this many points the brute-force scan is used.
pub const BRUTE_FORCE_BELOW: usize = 4096;

#[inline]
fn dist(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Neighbor candidate ordered by distance, then index.
#[derive(PartialEq)]
struct Far(f64, usize);

impl Eq for Far {}

impl PartialOrd for Far {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Far {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Bounded max-heap holding the k nearest candidates seen so far.
struct KBest {
    k: usize,
    heap: BinaryHeap<Far>,
}

impl KBest {
    fn new(k: usize) -> Self {
        KBest {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, d: f64, j: usize) {
        let cand = Far(d, j);
        if self.heap.len() < self.k {
            self.heap.push(cand);
        } else if self.heap.peek().is_some_and(|w| cand < *w) {
            self.heap.pop();
            self.heap.push(cand);
        }
    }

    fn worst(&self) -> f64 {
        if self.heap.len() < self.k {
            f64::INFINITY
        } else {
            self.heap.peek().map_or(f64::INFINITY, |f| f.0)
        }
    }

    fn sorted(self) -> Vec<Far> {
        let mut v = self.heap.into_vec();
        v.sort();
        v
    }

    fn mean(self) -> f64 {
        let v = self.sorted();
        let mut s = 0.0;
        for f in &v {
            s += f.0;
        }
        s / v.len() as f64
    }

    fn indices(self) -> Vec<usize> {
        self.sorted().into_iter().map(|f| f.1).collect()
    }
}

fn check(n: usize, queries: &[usize], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if n <= k {
        return Err(Error::InvalidArgument(format!(
            "kNN needs more than k={k} points, have {n}; use a smaller k"
        )));
    }
    if let Some(&q) = queries.iter().find(|&&q| q >= n) {
        return Err(Error::Index { index: q, len: n });
    }
    Ok(())
}

/// Mean distance from each query to its `k` nearest other points.
/// Dispatches to the grid search for large inputs.
pub fn knn_mean_distance(centers: &[Vector3<f64>], queries: &[usize], k: usize) -> Result<Vec<f64>> {
    if centers.len() < BRUTE_FORCE_BELOW {
        knn_brute(centers, queries, k)
    } else {
        knn_grid(centers, queries, k)
    }
}

/// Indices of the `k` nearest other points of each query, nearest first
/// (ties broken by ascending index).
pub fn knn_indices(centers: &[Vector3<f64>], queries: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    check(centers.len(), queries, k)?;
    if centers.len() < BRUTE_FORCE_BELOW {
        Ok(queries.par_iter().map(|&q| brute(centers, q, k).indices()).collect())
    } else {
        let grid = Grid::build(centers);
        Ok(queries.par_iter().map(|&q| grid.query(centers, q, k).indices()).collect())
    }
}

fn brute(centers: &[Vector3<f64>], q: usize, k: usize) -> KBest {
    let mut best = KBest::new(k);
    let p = &centers[q];
    for (j, c) in centers.iter().enumerate() {
        if j != q {
            best.offer(dist(p, c), j);
        }
    }
    best
}

/// O(N) scan per query.
pub fn knn_brute(centers: &[Vector3<f64>], queries: &[usize], k: usize) -> Result<Vec<f64>> {
    check(centers.len(), queries, k)?;
    Ok(queries.par_iter().map(|&q| brute(centers, q, k).mean()).collect())
}

/// Uniform-grid bucketing with shell-by-shell expansion; exact.
pub fn knn_grid(centers: &[Vector3<f64>], queries: &[usize], k: usize) -> Result<Vec<f64>> {
    check(centers.len(), queries, k)?;
    let grid = Grid::build(centers);
    Ok(queries
        .par_iter()
        .map(|&q| grid.query(centers, q, k).mean())
        .collect())
}

struct Grid {
    origin: Vector3<f64>,
    cell: f64,
    dims: [usize; 3],
    /// Cell `c` holds `order[start[c]..start[c + 1]]`.
    start: Vec<usize>,
    order: Vec<usize>,
}

impl Grid {
    fn build(points: &[Vector3<f64>]) -> Grid {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let span = hi - lo;
        let longest = span.max();
        let n = points.len() as f64;
        // Roughly two points per cell along the densest layout, with the
        // total cell count bounded by a small multiple of N.
        let per_axis = (n / 2.0).cbrt().ceil().max(1.0);
        let mut cell = if longest > 0.0 { longest / per_axis } else { 1.0 };
        let cells = |c: f64| -> [usize; 3] { [0, 1, 2].map(|a| (span[a] / c).floor() as usize + 1) };
        let mut dims = cells(cell);
        while dims.iter().product::<usize>() > 4 * points.len() + 8 {
            cell *= 1.5;
            dims = cells(cell);
        }
        let ncell: usize = dims.iter().product();
        let idx_of = |p: &Vector3<f64>| -> usize {
            let c = [0, 1, 2].map(|a| (((p[a] - lo[a]) / cell).floor() as usize).min(dims[a] - 1));
            (c[2] * dims[1] + c[1]) * dims[0] + c[0]
        };
        let mut start = vec![0usize; ncell + 1];
        let ids: Vec<usize> = points.iter().map(idx_of).collect();
        for &c in &ids {
            start[c + 1] += 1;
        }
        for c in 0..ncell {
            start[c + 1] += start[c];
        }
        let mut cursor = start.clone();
        let mut order = vec![0usize; points.len()];
        for (i, &c) in ids.iter().enumerate() {
            order[cursor[c]] = i;
            cursor[c] += 1;
        }
        Grid {
            origin: lo,
            cell,
            dims,
            start,
            order,
        }
    }

    fn coord(&self, p: &Vector3<f64>) -> [i64; 3] {
        [0, 1, 2].map(|a| (((p[a] - self.origin[a]) / self.cell).floor() as i64).clamp(0, self.dims[a] as i64 - 1))
    }

    fn query(&self, points: &[Vector3<f64>], q: usize, k: usize) -> KBest {
        let p = &points[q];
        let c = self.coord(p);
        let mut best = KBest::new(k);
        let max_r = *self.dims.iter().max().unwrap() as i64;
        for r in 0..=max_r {
            self.visit_shell(c, r, |j| {
                if j != q {
                    best.offer(dist(p, &points[j]), j);
                }
            });
            // Every unvisited point lies outside the cube of cells within
            // Chebyshev radius r, hence at least `bound` away.
            let mut bound = f64::INFINITY;
            let mut covers_all = true;
            for a in 0..3 {
                let lo_idx = c[a] - r;
                let hi_idx = c[a] + r + 1;
                if lo_idx > 0 {
                    covers_all = false;
                    bound = bound.min(p[a] - (self.origin[a] + lo_idx as f64 * self.cell));
                }
                if hi_idx < self.dims[a] as i64 {
                    covers_all = false;
                    bound = bound.min(self.origin[a] + hi_idx as f64 * self.cell - p[a]);
                }
            }
            // Strict, with slack for rounding in the cell assignment: a point
            // exactly at the bound could still win a tie on index.
            if covers_all || best.worst() < bound - 1e-9 * self.cell {
                break;
            }
        }
        best
    }

    fn visit_shell(&self, c: [i64; 3], r: i64, mut f: impl FnMut(usize)) {
        let d = self.dims.map(|v| v as i64);
        let range = |a: usize| ((c[a] - r).max(0), (c[a] + r).min(d[a] - 1));
        let (x0, x1) = range(0);
        let (y0, y1) = range(1);
        let (z0, z1) = range(2);
        for z in z0..=z1 {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let cheb = (x - c[0]).abs().max((y - c[1]).abs()).max((z - c[2]).abs());
                    if cheb != r {
                        continue;
                    }
                    let cell = ((z * d[1] + y) * d[0] + x) as usize;
                    for &j in &self.order[self.start[cell]..self.start[cell + 1]] {
                        f(j);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> Vec<Vector3<f64>> {
        xs.iter().map(|&x| Vector3::new(x, 0.0, 0.0)).collect()
    }

    #[test]
    fn collinear_triple_k1() {
        let pts = line(&[0.0, 1.0, 2.0]);
        assert_eq!(knn_brute(&pts, &[0, 1, 2], 1).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(knn_grid(&pts, &[0, 1, 2], 1).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn collinear_triple_k2() {
        let pts = line(&[0.0, 1.0, 2.0]);
        assert_eq!(knn_brute(&pts, &[0, 1, 2], 2).unwrap(), vec![1.5, 1.0, 1.5]);
        assert_eq!(knn_grid(&pts, &[0, 1, 2], 2).unwrap(), vec![1.5, 1.0, 1.5]);
    }

    #[test]
    fn duplicate_point_has_zero_distance() {
        let pts = line(&[3.0, 3.0, 10.0]);
        assert_eq!(knn_mean_distance(&pts, &[0], 1).unwrap(), vec![0.0]);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let pts = line(&[0.0, 1.0]);
        let err = knn_mean_distance(&pts, &[0], 2).unwrap_err();
        assert!(err.to_string().contains("smaller k"));
    }

    #[test]
    fn indices_are_nearest_first_with_index_ties() {
        let pts = line(&[0.0, 1.0, -1.0, 3.0]);
        assert_eq!(knn_indices(&pts, &[0], 3).unwrap(), vec![vec![1, 2, 3]]);
    }

    #[test]
    fn coincident_cloud_uses_grid_safely() {
        let pts = vec![Vector3::new(1.0, 1.0, 1.0); 40];
        assert_eq!(knn_grid(&pts, &[0, 39], 16).unwrap(), vec![0.0, 0.0]);
    }
}
