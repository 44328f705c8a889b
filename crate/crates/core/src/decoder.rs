//! Minimum-weight matching decoder for X-syndromes.
//!
//! Every single-qubit Z error is a unit-weight edge between the one or two
//! X-checks it flips; errors on the top (bottom) row flip a single check and
//! attach it to the top (bottom) boundary node. Shortest paths come from a
//! breadth-first search per node with neighbours visited in ascending qubit
//! order, which fixes one canonical path per pair.
//!
//! Defects are matched exactly by dynamic programming over defect subsets
//! (each defect pairs with another or with the nearer boundary). Above
//! [`MAX_EXACT_DEFECTS`] a greedy nearest-pair matching is used instead and
//! reported through [`DecodeOutcome::exact`].

use std::collections::VecDeque;

use crate::error::Result;
use crate::surface_code::{PauliZMask, SurfaceCode, Syndrome};

pub const MAX_EXACT_DEFECTS: usize = 22;

const UNREACHABLE: u32 = u32::MAX;

/// Shortest-path structure over X-checks plus two boundary nodes.
#[derive(Clone, Debug)]
pub struct MatchingGraph {
    n: usize,
    num_checks: usize,
    /// `(neighbour, qubit)` lists; nodes `num_checks` and `num_checks + 1`
    /// are the top and bottom boundaries.
    adjacency: Vec<Vec<(usize, usize)>>,
    /// Pairwise minimum Z-chain lengths.
    pub pairwise_distance: Vec<Vec<u32>>,
    /// `parent[src][v] = (previous node, qubit)` in the BFS tree of `src`.
    parent: Vec<Vec<Option<(usize, usize)>>>,
}

/// Result of decoding with the exactness flag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodeOutcome {
    pub correction: PauliZMask,
    pub exact: bool,
    /// Total matching weight (sum of path lengths).
    pub weight: u32,
}

impl MatchingGraph {
    pub fn build(code: &SurfaceCode) -> MatchingGraph {
        let m = code.num_x_checks();
        let nodes = m + 2;
        let mut adjacency = vec![Vec::new(); nodes];
        for q in 0..code.n {
            let checks = code.x_checks_of_qubit(q);
            match checks.as_slice() {
                [a, b] => {
                    adjacency[*a].push((*b, q));
                    adjacency[*b].push((*a, q));
                }
                [a] => {
                    let (r, _) = code.qubit_coords(q);
                    let boundary = if r == 0 { m } else { m + 1 };
                    adjacency[*a].push((boundary, q));
                    adjacency[boundary].push((*a, q));
                }
                _ => {}
            }
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(_, q)| q);
        }
        let mut pairwise_distance = vec![vec![UNREACHABLE; nodes]; nodes];
        let mut parent = vec![vec![None; nodes]; nodes];
        for src in 0..nodes {
            let dist = &mut pairwise_distance[src];
            let par = &mut parent[src];
            dist[src] = 0;
            let mut queue = VecDeque::from([src]);
            while let Some(v) = queue.pop_front() {
                // paths do not pass through the boundary
                if v >= m && v != src {
                    continue;
                }
                for &(w, q) in &adjacency[v] {
                    if dist[w] == UNREACHABLE {
                        dist[w] = dist[v] + 1;
                        par[w] = Some((v, q));
                        queue.push_back(w);
                    }
                }
            }
        }
        MatchingGraph {
            n: code.n,
            num_checks: m,
            adjacency,
            pairwise_distance,
            parent,
        }
    }

    pub fn num_checks(&self) -> usize {
        self.num_checks
    }

    pub fn top(&self) -> usize {
        self.num_checks
    }

    pub fn bottom(&self) -> usize {
        self.num_checks + 1
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    /// Distance from check `c` to the nearer boundary, and that boundary.
    pub fn boundary_distance(&self, c: usize) -> (u32, usize) {
        let top = self.pairwise_distance[c][self.top()];
        let bottom = self.pairwise_distance[c][self.bottom()];
        if top <= bottom {
            (top, self.top())
        } else {
            (bottom, self.bottom())
        }
    }

    /// Qubits of the canonical shortest path between two nodes.
    pub fn path_mask(&self, from: usize, to: usize) -> PauliZMask {
        let mut mask = PauliZMask::zeros(self.n);
        let mut v = to;
        while v != from {
            let (prev, q) = self.parent[from][v].expect("nodes are connected");
            mask.0[q] ^= 1;
            v = prev;
        }
        mask
    }

    /// Correction `D(s)` with `h_x . D(s) = s`.
    pub fn decode(&self, s: &Syndrome) -> Result<PauliZMask> {
        Ok(self.decode_detailed(s)?.correction)
    }

    pub fn decode_detailed(&self, s: &Syndrome) -> Result<DecodeOutcome> {
        if s.len() != self.num_checks {
            return Err(crate::Error::LengthMismatch {
                expected: self.num_checks,
                actual: s.len(),
            });
        }
        let defects: Vec<usize> = (0..s.len()).filter(|&i| s.0[i] == 1).collect();
        let (pairs, exact) = if defects.len() <= MAX_EXACT_DEFECTS {
            (self.match_exact(&defects), true)
        } else {
            log::warn!("{} defects: falling back to greedy matching", defects.len());
            (self.match_greedy(&defects), false)
        };
        let mut correction = PauliZMask::zeros(self.n);
        let mut weight = 0;
        for (a, b) in pairs {
            let b = b.unwrap_or_else(|| self.boundary_distance(a).1);
            weight += self.pairwise_distance[a][b];
            correction = correction.xor(&self.path_mask(a, b));
        }
        Ok(DecodeOutcome {
            correction,
            exact,
            weight,
        })
    }

    /// Optimal pairing; `None` partner means the boundary. Ties go to the
    /// boundary first, then to the lowest-index partner.
    fn match_exact(&self, defects: &[usize]) -> Vec<(usize, Option<usize>)> {
        let k = defects.len();
        if k == 0 {
            return Vec::new();
        }
        let full = (1usize << k) - 1;
        let mut cost = vec![u32::MAX; 1 << k];
        // 0 = boundary, j + 1 = partner j
        let mut choice = vec![0u8; 1 << k];
        cost[0] = 0;
        let bd: Vec<u32> = defects
            .iter()
            .map(|&c| self.boundary_distance(c).0)
            .collect();
        for mask in 1..=full {
            let i = mask.trailing_zeros() as usize;
            let without_i = mask & !(1 << i);
            let mut best = cost[without_i].saturating_add(bd[i]);
            let mut pick = 0u8;
            let mut rest = without_i;
            while rest != 0 {
                let j = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                let c = cost[without_i & !(1 << j)]
                    .saturating_add(self.pairwise_distance[defects[i]][defects[j]]);
                if c < best {
                    best = c;
                    pick = (j + 1) as u8;
                }
            }
            cost[mask] = best;
            choice[mask] = pick;
        }
        let mut pairs = Vec::new();
        let mut mask = full;
        while mask != 0 {
            let i = mask.trailing_zeros() as usize;
            match choice[mask] {
                0 => {
                    pairs.push((defects[i], None));
                    mask &= !(1 << i);
                }
                j => {
                    let j = (j - 1) as usize;
                    pairs.push((defects[i], Some(defects[j])));
                    mask &= !(1 << i) & !(1 << j);
                }
            }
        }
        pairs
    }

    fn match_greedy(&self, defects: &[usize]) -> Vec<(usize, Option<usize>)> {
        let mut candidates: Vec<(u32, usize, usize)> = Vec::new();
        for i in 0..defects.len() {
            candidates.push((self.boundary_distance(defects[i]).0, i, usize::MAX));
            for j in (i + 1)..defects.len() {
                candidates.push((self.pairwise_distance[defects[i]][defects[j]], i, j));
            }
        }
        candidates.sort_unstable();
        let mut used = vec![false; defects.len()];
        let mut pairs = Vec::new();
        for (_, i, j) in candidates {
            if used[i] || (j != usize::MAX && used[j]) {
                continue;
            }
            used[i] = true;
            if j == usize::MAX {
                pairs.push((defects[i], None));
            } else {
                used[j] = true;
                pairs.push((defects[i], Some(defects[j])));
            }
        }
        pairs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn brute_min_weight(code: &SurfaceCode, s: &Syndrome) -> usize {
        (0..1usize << code.n)
            .map(|i| PauliZMask::from_index(i, code.n))
            .filter(|e| &code.syndrome_of(e).unwrap() == s)
            .map(|e| e.weight())
            .min()
            .unwrap()
    }

    #[test]
    fn corner_checks_touch_the_boundary() {
        let code = SurfaceCode::build(3).unwrap();
        let g = MatchingGraph::build(&code);
        // the X-check holding qubit 0 sits in the top-left corner
        let c = code.x_checks_of_qubit(0)[0];
        assert_eq!(g.boundary_distance(c).0, 1);
        for v in 0..g.num_checks() + 2 {
            assert_eq!(g.pairwise_distance[v][v], 0);
        }
        for a in 0..4 {
            for b in 0..4 {
                assert!(g.pairwise_distance[a][b] as usize <= code.d);
            }
        }
    }

    #[test]
    fn triangle_inequality_and_path_syndromes() {
        for d in [3, 5, 7] {
            let code = SurfaceCode::build(d).unwrap();
            let g = MatchingGraph::build(&code);
            let m = g.num_checks();
            for a in 0..m {
                for b in 0..m {
                    for c in 0..m {
                        let dab = g.pairwise_distance[a][b];
                        assert!(dab <= g.pairwise_distance[a][c] + g.pairwise_distance[c][b]);
                    }
                    if a != b {
                        let s = code.syndrome_of(&g.path_mask(a, b)).unwrap();
                        let mut expect = Syndrome::zeros(m);
                        expect.0[a] = 1;
                        expect.0[b] = 1;
                        assert_eq!(s, expect);
                        assert_eq!(g.path_mask(a, b).weight() as u32, g.pairwise_distance[a][b]);
                    }
                }
                let (_, bnode) = g.boundary_distance(a);
                let s = code.syndrome_of(&g.path_mask(a, bnode)).unwrap();
                assert_eq!(s.weight(), 1);
                assert_eq!(s.0[a], 1);
            }
        }
    }

    #[test]
    fn trivial_syndrome_decodes_to_identity() {
        let code = SurfaceCode::build(5).unwrap();
        let g = MatchingGraph::build(&code);
        let out = g.decode_detailed(&Syndrome::zeros(12)).unwrap();
        assert_eq!(out.correction.weight(), 0);
        assert!(out.exact);
    }

    #[test]
    fn d3_matches_exhaustive_minimum() {
        let code = SurfaceCode::build(3).unwrap();
        let g = MatchingGraph::build(&code);
        for i in 0..16 {
            let s = Syndrome::from_index(i, 4);
            let corr = g.decode(&s).unwrap();
            assert_eq!(code.syndrome_of(&corr).unwrap(), s);
            assert_eq!(
                corr.weight(),
                brute_min_weight(&code, &s),
                "syndrome {}",
                s.to_bitstring()
            );
        }
    }

    #[test]
    fn single_boundary_defect_gets_unit_correction() {
        let code = SurfaceCode::build(3).unwrap();
        let g = MatchingGraph::build(&code);
        let c = code.x_checks_of_qubit(0)[0];
        let mut s = Syndrome::zeros(4);
        s.0[c] = 1;
        assert_eq!(g.decode(&s).unwrap().weight(), 1);
    }

    #[test]
    fn fuzzed_syndromes_are_reproduced() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for d in [3, 5, 7] {
            let code = SurfaceCode::build(d).unwrap();
            let g = MatchingGraph::build(&code);
            for _ in 0..500 {
                let s = Syndrome(
                    (0..code.num_x_checks())
                        .map(|_| rng.gen_range(0..2u8))
                        .collect(),
                );
                let corr = g.decode(&s).unwrap();
                assert_eq!(code.syndrome_of(&corr).unwrap(), s);
                assert_eq!(corr, g.decode(&s).unwrap());
            }
        }
    }

    #[test]
    fn greedy_fallback_still_corrects() {
        let code = SurfaceCode::build(7).unwrap();
        let g = MatchingGraph::build(&code);
        let s = Syndrome(vec![1; code.num_x_checks()]);
        let out = g.decode_detailed(&s).unwrap();
        assert!(!out.exact);
        assert_eq!(code.syndrome_of(&out.correction).unwrap(), s);
    }

    #[test]
    fn logical_error_rate_drops_with_distance() {
        let p = 0.05;
        let trials = 20_000;
        let mut rates = Vec::new();
        for d in [3, 5, 7] {
            let code = SurfaceCode::build(d).unwrap();
            let g = MatchingGraph::build(&code);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(d as u64);
            let mut fails = 0;
            for _ in 0..trials {
                let e = PauliZMask(
                    (0..code.n)
                        .map(|_| u8::from(rng.gen::<f64>() < p))
                        .collect(),
                );
                let s = code.syndrome_of(&e).unwrap();
                let residual = e.xor(&g.decode(&s).unwrap());
                fails += code.logical_parity(&residual).unwrap() as usize;
            }
            rates.push(fails as f64 / trials as f64);
        }
        assert!(rates[0] > rates[1] && rates[1] > rates[2], "{rates:?}");
    }
}
