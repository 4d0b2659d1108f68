//! Cell-list construction of fixed-radius neighbor lists.

use rayon::prelude::*;

use crate::grid::{Boundary, Domain};

/// Compressed rows of `(j, |x_i - x_j|)` for all `j != i` within the cutoff,
/// each row sorted by `j`.
#[derive(Debug, Clone)]
pub struct NeighborList {
    pub cutoff: f64,
    pub cell_size: f64,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    dists: Vec<f64>,
}

impl NeighborList {
    /// Builds the list for `n = positions.len() / dim` points.
    pub fn build(domain: &Domain, positions: &[f64], cutoff: f64) -> Self {
        let dim = domain.dim;
        let n = positions.len() / dim;
        let l = domain.extent;
        let coincident = n > 0 && positions.chunks(dim).all(|p| p == &positions[..dim]);
        let per_axis = if !cutoff.is_finite() || coincident {
            1
        } else {
            let cap = ((4 * n.max(1)) as f64).powf(1.0 / dim as f64).max(1.0) as usize;
            ((l / cutoff).floor() as usize).clamp(1, cap.max(1))
        };
        let cell_size = l / per_axis as f64;
        let cell_of = |p: &[f64]| -> usize {
            let mut idx = 0;
            for a in (0..dim).rev() {
                let k = ((p[a] / cell_size) as usize).min(per_axis - 1);
                idx = idx * per_axis + k;
            }
            idx
        };
        let n_cells = per_axis.pow(dim as u32);
        // counting sort keeps particles ascending within each cell
        let cells: Vec<usize> = positions.chunks(dim).map(cell_of).collect();
        let mut start = vec![0usize; n_cells + 1];
        for &c in &cells {
            start[c + 1] += 1;
        }
        for c in 0..n_cells {
            start[c + 1] += start[c];
        }
        let mut fill = start.clone();
        let mut members = vec![0u32; n];
        for (i, &c) in cells.iter().enumerate() {
            members[fill[c]] = i as u32;
            fill[c] += 1;
        }

        let neighbor_cells = |c: usize| -> Vec<usize> {
            let mut m = [0isize; 3];
            let mut rest = c;
            for slot in m.iter_mut().take(dim) {
                *slot = (rest % per_axis) as isize;
                rest /= per_axis;
            }
            let mut out = Vec::with_capacity(27);
            let span = |a: usize| if a < dim { -1..=1 } else { 0..=0 };
            for dz in span(2) {
                for dy in span(1) {
                    'x: for dx in span(0) {
                        let off = [dx, dy, dz];
                        let mut idx = 0usize;
                        for a in (0..dim).rev() {
                            let mut k = m[a] + off[a];
                            let p = per_axis as isize;
                            if k < 0 || k >= p {
                                match domain.boundary {
                                    Boundary::Periodic => k = k.rem_euclid(p),
                                    Boundary::ZeroFlux => continue 'x,
                                }
                            }
                            idx = idx * per_axis + k as usize;
                        }
                        out.push(idx);
                    }
                }
            }
            out.sort_unstable();
            out.dedup();
            out
        };

        let rows: Vec<Vec<(u32, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let xi = &positions[i * dim..(i + 1) * dim];
                let mut row = Vec::new();
                for c in neighbor_cells(cells[i]) {
                    for &j in &members[start[c]..start[c + 1]] {
                        let j = j as usize;
                        if j == i {
                            continue;
                        }
                        let r = domain.distance(xi, &positions[j * dim..(j + 1) * dim]);
                        if r <= cutoff {
                            row.push((j as u32, r));
                        }
                    }
                }
                row.sort_unstable_by_key(|e| e.0);
                row
            })
            .collect();

        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let total: usize = rows.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(total);
        let mut dists = Vec::with_capacity(total);
        for row in rows {
            for (j, r) in row {
                cols.push(j);
                dists.push(r);
            }
            row_ptr.push(cols.len());
        }
        Self { cutoff, cell_size, row_ptr, cols, dists }
    }

    pub fn len(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of stored directed pairs.
    pub fn pair_count(&self) -> usize {
        self.cols.len()
    }

    /// Neighbors of `i` as `(j, distance)`, ascending in `j`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().map(|&j| j as usize).zip(self.dists[r].iter().copied())
    }

    pub fn row_indices(&self, i: usize) -> &[u32] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub(crate) fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    /// `j` in row `i` exactly when `i` in row `j`.
    pub fn is_symmetric(&self) -> bool {
        (0..self.len()).all(|i| {
            self.row_indices(i)
                .iter()
                .all(|&j| self.row_indices(j as usize).binary_search(&(i as u32)).is_ok())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(domain: &Domain, pos: &[f64], cutoff: f64) -> Vec<Vec<usize>> {
        let d = domain.dim;
        let n = pos.len() / d;
        (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && domain.distance(&pos[i * d..i * d + d], &pos[j * d..j * d + d]) <= cutoff)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_in_all_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in 1..=3 {
            for boundary in [Boundary::Periodic, Boundary::ZeroFlux] {
                let dom = Domain::new(dim, 1.0, boundary).unwrap();
                let n = 300;
                let pos: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>()).collect();
                for cutoff in [0.05, 0.2, 0.45, 2.0] {
                    let nl = NeighborList::build(&dom, &pos, cutoff);
                    let b = brute(&dom, &pos, cutoff);
                    for i in 0..n {
                        let got: Vec<usize> = nl.row(i).map(|e| e.0).collect();
                        assert_eq!(got, b[i], "dim {dim} {boundary:?} cutoff {cutoff} row {i}");
                    }
                    assert!(nl.is_symmetric());
                }
            }
        }
    }

    #[test]
    fn separated_clusters_do_not_interact() {
        let dom = Domain::new(1, 10.0, Boundary::ZeroFlux).unwrap();
        let pos = vec![1.0, 1.1, 1.2, 8.0, 8.1];
        let nl = NeighborList::build(&dom, &pos, 1.0);
        for i in 0..3 {
            assert!(nl.row(i).all(|(j, _)| j < 3));
        }
        for i in 3..5 {
            assert!(nl.row(i).all(|(j, _)| j >= 3));
        }
    }

    #[test]
    fn coincident_points_use_one_cell() {
        let dom = Domain::new(2, 1.0, Boundary::Periodic).unwrap();
        let pos = vec![0.5; 20];
        let nl = NeighborList::build(&dom, &pos, 0.01);
        assert_eq!(nl.cell_size, 1.0);
        assert_eq!(nl.pair_count(), 10 * 9);
    }
}
