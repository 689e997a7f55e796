//! Finite boxes V_n = Z^d ∩ [1, n]^d with free boundary conditions.
//!
//! Sites are listed in lexicographic coordinate order (first coordinate most
//! significant) and addressed by their index in that list. Edges join sites
//! at L1 distance one; each unordered pair appears once as (i, j) with i < j.

use crate::error::{Error, Result};
use serde::Serialize;

/// Hard cap on the number of sites a lattice will materialize. Enumeration
/// and chain capacities sit far below this; the cap guards index arithmetic
/// and the coordinate table allocation.
pub const MAX_SITES: u64 = 1 << 22;

/// A finite box of Z^d with its nearest-neighbor edge set.
#[derive(Debug, Clone)]
pub struct Lattice {
    d: usize,
    n: usize,
    volume: u64,
    /// Coordinates, flattened row-major: site i occupies [i*d, (i+1)*d).
    coords: Vec<u32>,
    edges: Vec<(u32, u32)>,
    /// CSR neighbor lists: neighbors of i are nbr_data[nbr_off[i]..nbr_off[i+1]].
    nbr_off: Vec<u32>,
    nbr_data: Vec<u32>,
}

impl Lattice {
    /// Builds the box [1, n]^d. Rejects d < 1, n < 1, and volumes beyond
    /// [`MAX_SITES`].
    pub fn build(d: usize, n: usize) -> Result<Self> {
        if d < 1 {
            return Err(Error::InvalidDimension(d));
        }
        if n < 1 {
            return Err(Error::InvalidSide(n));
        }
        let volume_wide = (n as u128).pow(d as u32);
        if volume_wide > MAX_SITES as u128 {
            return Err(Error::VolumeOverflow {
                volume: volume_wide,
                capacity: MAX_SITES,
            });
        }
        let volume = volume_wide as u64;

        let mut coords = Vec::with_capacity(volume as usize * d);
        let mut cur = vec![1u32; d];
        'outer: loop {
            coords.extend_from_slice(&cur);
            // advance the least-significant coordinate; carry leftward
            for k in (0..d).rev() {
                if cur[k] < n as u32 {
                    cur[k] += 1;
                    for c in cur.iter_mut().skip(k + 1) {
                        *c = 1;
                    }
                    continue 'outer;
                }
                if k == 0 {
                    break 'outer;
                }
            }
        }
        debug_assert_eq!(coords.len() as u64, volume * d as u64);

        // stride of coordinate axis k in the lexicographic index
        let mut strides = vec![1u64; d];
        for k in (0..d.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * n as u64;
        }

        let mut edges = Vec::new();
        for i in 0..volume as usize {
            let c = &coords[i * d..(i + 1) * d];
            for k in 0..d {
                if c[k] < n as u32 {
                    edges.push((i as u32, (i as u64 + strides[k]) as u32));
                }
            }
        }
        edges.sort_unstable();

        let mut degree = vec![0u32; volume as usize];
        for &(a, b) in &edges {
            degree[a as usize] += 1;
            degree[b as usize] += 1;
        }
        let mut nbr_off = Vec::with_capacity(volume as usize + 1);
        nbr_off.push(0u32);
        for &deg in &degree {
            nbr_off.push(nbr_off.last().unwrap() + deg);
        }
        let mut cursor: Vec<u32> = nbr_off[..volume as usize].to_vec();
        let mut nbr_data = vec![0u32; 2 * edges.len()];
        for &(a, b) in &edges {
            nbr_data[cursor[a as usize] as usize] = b;
            cursor[a as usize] += 1;
            nbr_data[cursor[b as usize] as usize] = a;
            cursor[b as usize] += 1;
        }
        for i in 0..volume as usize {
            nbr_data[nbr_off[i] as usize..nbr_off[i + 1] as usize].sort_unstable();
        }

        Ok(Self {
            d,
            n,
            volume,
            coords,
            edges,
            nbr_off,
            nbr_data,
        })
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn side(&self) -> usize {
        self.n
    }

    /// Number of sites |V_n| = n^d.
    pub fn volume(&self) -> u64 {
        self.volume
    }

    /// Coordinates of site `i` in [1, n]^d.
    pub fn coords(&self, i: u32) -> &[u32] {
        &self.coords[i as usize * self.d..(i as usize + 1) * self.d]
    }

    /// Nearest-neighbor pairs (i, j), i < j, sorted.
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    /// Neighbors of site `x` in ascending index order.
    pub fn neighbors(&self, x: u32) -> &[u32] {
        &self.nbr_data[self.nbr_off[x as usize] as usize..self.nbr_off[x as usize + 1] as usize]
    }

    /// Lexicographic index of the site with the given coordinates.
    pub fn site_index(&self, coords: &[u32]) -> Option<u32> {
        if coords.len() != self.d {
            return None;
        }
        let mut idx = 0u64;
        for &c in coords {
            if c < 1 || c > self.n as u32 {
                return None;
            }
            idx = idx * self.n as u64 + (c as u64 - 1);
        }
        Some(idx as u32)
    }

    /// Counts summary for reporting.
    pub fn info(&self) -> LatticeInfo {
        LatticeInfo {
            d: self.d,
            n: self.n,
            sites: self.volume,
            edges: self.edges.len() as u64,
        }
    }
}

/// Site and edge counts as reported by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct LatticeInfo {
    pub d: usize,
    pub n: usize,
    pub sites: u64,
    pub edges: u64,
}

/// Closed-form edge count d * n^(d-1) * (n-1) of the free-boundary box.
pub fn edge_count(d: usize, n: usize) -> u64 {
    (d as u64) * (n as u64).pow(d as u32 - 1) * (n as u64 - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: all site pairs at L1 distance one.
    fn brute_force_edges(lat: &Lattice) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        let v = lat.volume() as usize;
        for i in 0..v {
            for j in (i + 1)..v {
                let dist: u32 = lat
                    .coords(i as u32)
                    .iter()
                    .zip(lat.coords(j as u32))
                    .map(|(a, b)| a.abs_diff(*b))
                    .sum();
                if dist == 1 {
                    out.push((i as u32, j as u32));
                }
            }
        }
        out
    }

    #[test]
    fn edges_match_brute_force_scan() {
        for (d, n) in [(1, 1), (1, 7), (2, 3), (2, 4), (3, 3), (4, 2)] {
            let lat = Lattice::build(d, n).unwrap();
            assert_eq!(
                lat.edges(),
                brute_force_edges(&lat).as_slice(),
                "d={d} n={n}"
            );
        }
    }

    #[test]
    fn edge_count_formula_holds_exhaustively() {
        for d in 1..=3 {
            for n in 1..=6 {
                let lat = Lattice::build(d, n).unwrap();
                assert_eq!(lat.edges().len() as u64, edge_count(d, n), "d={d} n={n}");
            }
        }
    }

    #[test]
    fn square_three_by_three_has_twelve_edges() {
        let lat = Lattice::build(2, 3).unwrap();
        assert_eq!(lat.volume(), 9);
        assert_eq!(lat.edges().len(), 12);
    }

    #[test]
    fn chain_is_a_path_graph() {
        let lat = Lattice::build(1, 5).unwrap();
        assert_eq!(lat.edges(), &[(0, 1), (1, 2), (2, 3), (3, 4)]);
        assert_eq!(lat.neighbors(0), &[1]);
        assert_eq!(lat.neighbors(2), &[1, 3]);
    }

    #[test]
    fn single_site_has_no_edges() {
        let lat = Lattice::build(3, 1).unwrap();
        assert_eq!(lat.volume(), 1);
        assert!(lat.edges().is_empty());
        assert!(lat.neighbors(0).is_empty());
    }

    #[test]
    fn sites_are_lexicographic_and_indexable() {
        let lat = Lattice::build(2, 3).unwrap();
        assert_eq!(lat.coords(0), &[1, 1]);
        assert_eq!(lat.coords(1), &[1, 2]);
        assert_eq!(lat.coords(3), &[2, 1]);
        for i in 0..lat.volume() as u32 {
            let c = lat.coords(i).to_vec();
            assert_eq!(lat.site_index(&c), Some(i));
        }
        assert_eq!(lat.site_index(&[0, 1]), None);
        assert_eq!(lat.site_index(&[4, 1]), None);
    }

    #[test]
    fn neighbor_lists_are_symmetric_and_sorted() {
        let lat = Lattice::build(3, 3).unwrap();
        for x in 0..lat.volume() as u32 {
            let nb = lat.neighbors(x);
            assert!(nb.windows(2).all(|w| w[0] < w[1]));
            for &y in nb {
                assert!(lat.neighbors(y).contains(&x));
            }
        }
    }

    #[test]
    fn invalid_shapes_are_rejected() {
        assert!(matches!(
            Lattice::build(0, 3),
            Err(Error::InvalidDimension(0))
        ));
        assert!(matches!(Lattice::build(2, 0), Err(Error::InvalidSide(0))));
        assert!(matches!(
            Lattice::build(9, 64),
            Err(Error::VolumeOverflow { .. })
        ));
    }
}
