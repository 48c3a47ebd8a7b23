//! The L×L torus: coordinates, wrap-around Manhattan distance, and distance shells.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A node on the torus. Coordinates are always reduced modulo the side length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    row: u32,
    col: u32,
}

impl NodeId {
    pub fn row(self) -> u32 {
        self.row
    }

    pub fn col(self) -> u32 {
        self.col
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// Square torus of side `L`, holding `n = L²` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    side: u32,
}

impl TorusGrid {
    pub fn new(side: u32) -> Result<Self> {
        if side < 2 {
            return Err(Error::Domain(format!("torus side must be at least 2, got {side}")));
        }
        // Node indices are u32.
        if (side as u64) * (side as u64) > u32::MAX as u64 {
            return Err(Error::Domain(format!("torus side {side} is too large")));
        }
        Ok(Self { side })
    }

    /// Builds the grid for `n` nodes; `n` must be a perfect square.
    pub fn from_node_count(n: u64) -> Result<Self> {
        let side = (n as f64).sqrt().round() as u64;
        if side * side != n {
            return Err(Error::Domain(format!("node count {n} is not a perfect square")));
        }
        Self::new(u32::try_from(side).map_err(|_| Error::Domain(format!("node count {n} is too large")))?)
    }

    pub fn side(self) -> u32 {
        self.side
    }

    pub fn node_count(self) -> usize {
        (self.side as usize) * (self.side as usize)
    }

    /// Node at `(row, col)`, wrapped onto the torus.
    pub fn node(self, row: i64, col: i64) -> NodeId {
        let l = self.side as i64;
        NodeId {
            row: row.rem_euclid(l) as u32,
            col: col.rem_euclid(l) as u32,
        }
    }

    /// Row-major index of `u`.
    pub fn index(self, u: NodeId) -> usize {
        u.row as usize * self.side as usize + u.col as usize
    }

    pub fn from_index(self, idx: usize) -> NodeId {
        let l = self.side as usize;
        debug_assert!(idx < l * l);
        NodeId {
            row: (idx / l) as u32,
            col: (idx % l) as u32,
        }
    }

    pub fn contains(self, u: NodeId) -> bool {
        u.row < self.side && u.col < self.side
    }

    /// Shifts `u` by a signed offset.
    pub fn offset(self, u: NodeId, drow: i64, dcol: i64) -> NodeId {
        self.node(u.row as i64 + drow, u.col as i64 + dcol)
    }

    /// Largest distance attained on this torus: `2·⌊L/2⌋`.
    pub fn max_distance(self) -> u32 {
        2 * (self.side / 2)
    }

    fn axis_distance(self, a: u32, b: u32) -> u32 {
        let delta = a.abs_diff(b);
        delta.min(self.side - delta)
    }

    /// Wrap-around Manhattan distance.
    pub fn distance(self, u: NodeId, v: NodeId) -> u32 {
        self.axis_distance(u.row, v.row) + self.axis_distance(u.col, v.col)
    }

    /// Number of offsets along one axis whose wrapped length is `a`.
    fn axis_multiplicity(self, a: u32) -> u64 {
        let half = self.side / 2;
        if a == 0 {
            1
        } else if a < half || (a == half && self.side % 2 == 1) {
            2
        } else if a == half {
            1
        } else {
            0
        }
    }

    fn check_shell(self, d: u32) -> Result<()> {
        if d == 0 || d > self.max_distance() {
            return Err(Error::Domain(format!(
                "distance {d} outside 1..={} on a torus of side {}",
                self.max_distance(),
                self.side
            )));
        }
        Ok(())
    }

    /// Number of nodes at distance exactly `d` from any fixed node.
    pub fn count_at_distance(self, d: u32) -> Result<u64> {
        self.check_shell(d)?;
        let half = self.side / 2;
        let lo = d.saturating_sub(half);
        let hi = d.min(half);
        Ok((lo..=hi)
            .map(|a| self.axis_multiplicity(a) * self.axis_multiplicity(d - a))
            .sum())
    }

    /// Canonical signed representatives of axis offsets, ascending:
    /// `-(⌈L/2⌉-1) ..= ⌊L/2⌋`.
    fn axis_range(self) -> std::ops::RangeInclusive<i64> {
        let l = self.side as i64;
        -((l + 1) / 2 - 1)..=l / 2
    }

    /// Offsets `(Δrow, Δcol)` of the distance-`d` shell in canonical row-major order.
    pub fn shell_offsets(self, d: u32) -> Result<Vec<(i64, i64)>> {
        self.check_shell(d)?;
        let d = d as i64;
        let range = self.axis_range();
        let (lo, hi) = (*range.start(), *range.end());
        let mut out = Vec::new();
        for drow in range {
            let rest = d - drow.abs();
            if rest < 0 {
                continue;
            }
            if rest == 0 {
                out.push((drow, 0));
                continue;
            }
            if -rest >= lo {
                out.push((drow, -rest));
            }
            if rest <= hi {
                out.push((drow, rest));
            }
        }
        Ok(out)
    }

    /// Every node at distance exactly `d` from `u`, in canonical row-major offset order.
    pub fn nodes_at_distance(self, u: NodeId, d: u32) -> Result<Vec<NodeId>> {
        Ok(self
            .shell_offsets(d)?
            .into_iter()
            .map(|(dr, dc)| self.offset(u, dr, dc))
            .collect())
    }

    /// Distinct nodes `v ≠ u` with `distance(u, v) ≤ radius`, as offsets.
    ///
    /// On small tori different signed offsets can wrap onto the same node, so the
    /// result is computed over canonical representatives only.
    pub fn ball_offsets(self, radius: u32) -> Vec<(i64, i64)> {
        let radius = radius.min(self.max_distance());
        let mut out = Vec::new();
        for d in 1..=radius {
            out.extend(self.shell_offsets(d).expect("shell in range"));
        }
        out
    }

    /// Iterates over all nodes in row-major order.
    pub fn nodes(self) -> impl Iterator<Item = NodeId> {
        let n = self.node_count();
        (0..n).map(move |i| self.from_index(i))
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use proptest::prelude::*;

    use super::*;

    /// Exhaustive oracle: distance of every node from the origin, tallied.
    fn brute_counts(grid: TorusGrid) -> Vec<u64> {
        let mut counts = vec![0u64; grid.max_distance() as usize + 1];
        for v in grid.nodes() {
            // Independent distance: min over explicit wrap candidates.
            let l = grid.side() as i64;
            let axis = |a: u32| {
                let a = a as i64;
                a.min(l - a)
            };
            counts[(axis(v.row()) + axis(v.col())) as usize] += 1;
        }
        counts
    }

    #[test]
    fn distance_examples() {
        let g4 = TorusGrid::new(4).unwrap();
        assert_eq!(g4.distance(g4.node(0, 0), g4.node(3, 3)), 2);
        assert_eq!(g4.distance(g4.node(1, 2), g4.node(1, 2)), 0);
        let g6 = TorusGrid::new(6).unwrap();
        assert_eq!(g6.distance(g6.node(0, 0), g6.node(3, 3)), 6);
    }

    #[test]
    fn count_examples_match_oracle() {
        let g = TorusGrid::new(8).unwrap();
        let oracle = brute_counts(g);
        assert_eq!(oracle[1], 4);
        assert_eq!(oracle[3], 12);
        assert_eq!(oracle[8], 1);
        assert_eq!(g.count_at_distance(1).unwrap(), 4);
        assert_eq!(g.count_at_distance(3).unwrap(), 12);
        assert_eq!(g.count_at_distance(8).unwrap(), 1);
    }

    #[test]
    fn count_matches_enumeration_up_to_16() {
        for side in 2..=16 {
            let g = TorusGrid::new(side).unwrap();
            let oracle = brute_counts(g);
            let mut total = 0;
            for d in 1..=g.max_distance() {
                let c = g.count_at_distance(d).unwrap();
                assert_eq!(c, oracle[d as usize], "L={side} d={d}");
                assert_eq!(g.nodes_at_distance(g.node(3, 1), d).unwrap().len() as u64, c);
                total += c;
            }
            assert_eq!(total as usize, g.node_count() - 1);
        }
    }

    #[test]
    fn out_of_range_shells_rejected() {
        let g = TorusGrid::new(8).unwrap();
        assert!(g.count_at_distance(0).is_err());
        assert!(g.count_at_distance(9).is_err());
        assert!(g.nodes_at_distance(g.node(0, 0), 9).is_err());
        let odd = TorusGrid::new(7).unwrap();
        assert_eq!(odd.max_distance(), 6);
        assert!(odd.count_at_distance(7).is_err());
    }

    #[test]
    fn axis_neighbours_shell() {
        let g = TorusGrid::new(4).unwrap();
        let got: BTreeSet<_> = g.nodes_at_distance(g.node(0, 0), 1).unwrap().into_iter().collect();
        let want: BTreeSet<_> = [(0, 1), (1, 0), (0, 3), (3, 0)]
            .into_iter()
            .map(|(r, c)| g.node(r, c))
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn far_shell_on_small_torus() {
        let g = TorusGrid::new(4).unwrap();
        let u = g.node(2, 2);
        let shell = g.nodes_at_distance(u, 4).unwrap();
        let oracle: BTreeSet<_> = g.nodes().filter(|&v| g.distance(u, v) == 4).collect();
        assert_eq!(shell.len(), oracle.len());
        assert_eq!(shell.len(), 1);
        assert_eq!(shell.into_iter().collect::<BTreeSet<_>>(), oracle);
        assert!(oracle.contains(&g.node(0, 0)));
    }

    #[test]
    fn shell_order_is_row_major_on_offsets() {
        let g = TorusGrid::new(9).unwrap();
        let offsets = g.shell_offsets(3).unwrap();
        let mut sorted = offsets.clone();
        sorted.sort();
        assert_eq!(offsets, sorted);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(TorusGrid::new(1).is_err());
        assert!(TorusGrid::from_node_count(15).is_err());
        assert_eq!(TorusGrid::from_node_count(1 << 12).unwrap().side(), 64);
    }

    #[test]
    fn ball_offsets_are_distinct_on_tiny_tori() {
        for side in 2..=6 {
            let g = TorusGrid::new(side).unwrap();
            let u = g.node(1, 1);
            let ball: Vec<_> = g.ball_offsets(2).into_iter().map(|(r, c)| g.offset(u, r, c)).collect();
            let set: BTreeSet<_> = ball.iter().copied().collect();
            assert_eq!(set.len(), ball.len());
            let oracle: BTreeSet<_> = g
                .nodes()
                .filter(|&v| v != u && g.distance(u, v) <= 2)
                .collect();
            assert_eq!(set, oracle);
        }
    }

    fn grid_and_nodes() -> impl Strategy<Value = (u32, [(i64, i64); 3], (i64, i64))> {
        (2u32..40).prop_flat_map(|l| {
            let c = 0..l as i64;
            (
                Just(l),
                [(c.clone(), c.clone()), (c.clone(), c.clone()), (c.clone(), c.clone())],
                (-100i64..100, -100i64..100),
            )
        })
    }

    proptest! {
        #[test]
        fn metric_properties((side, pts, shift) in grid_and_nodes()) {
            let g = TorusGrid::new(side).unwrap();
            let [u, v, w] = pts.map(|(r, c)| g.node(r, c));
            prop_assert_eq!(g.distance(u, v), g.distance(v, u));
            prop_assert_eq!(g.distance(u, v) == 0, u == v);
            prop_assert!(g.distance(u, v) <= g.max_distance());
            prop_assert!(g.distance(u, w) <= g.distance(u, v) + g.distance(v, w));
            let (dr, dc) = shift;
            prop_assert_eq!(
                g.distance(g.offset(u, dr, dc), g.offset(v, dr, dc)),
                g.distance(u, v)
            );
        }

        #[test]
        fn shells_partition_the_torus(side in 2u32..14, r in 0i64..14, c in 0i64..14) {
            let g = TorusGrid::new(side).unwrap();
            let u = g.node(r, c);
            let mut seen = BTreeSet::new();
            for d in 1..=g.max_distance() {
                for v in g.nodes_at_distance(u, d).unwrap() {
                    prop_assert_eq!(g.distance(u, v), d);
                    prop_assert!(seen.insert(v));
                }
            }
            prop_assert!(!seen.contains(&u));
            prop_assert_eq!(seen.len(), g.node_count() - 1);
        }
    }
}
