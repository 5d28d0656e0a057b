//! Node-grid wiring for the nested-skip segmentation network.
//!
//! The network is a triangular grid of nodes `X(i,j)` with row `i` (depth
//! level) in `0..=depth` and column `j` in `0..=depth-i`. Row `i` operates at
//! spatial resolution `input / 2^i` with `base_channels * 2^i` channels.
//!
//! Wiring rules:
//! * `X(0,0)` consumes the network input.
//! * `X(i,0)`, `i >= 1` consumes `Down(X(i-1,0))` (the encoder chain).
//! * `X(i,j)`, `j >= 1` consumes the same-row skips `X(i,0..j-1)` plus
//!   `Up(X(i+1,j-1))`, and — in the modified variant — `Down(X(i-1,j))`
//!   whenever `i >= 1`. There is never a Down term at row 0 and never an Up
//!   term at row `depth` (that row has no `j >= 1` nodes).
//!
//! Evaluation is column-major: `j` ascending, and `i` ascending within a
//! column. Every input of a node then precedes it, so the graph is acyclic.

use serde::{Deserialize, Serialize};

/// Human-readable node name, used in error messages and parameter names.
pub fn node_name(i: usize, j: usize) -> String {
    format!("X({i},{j})")
}

/// Input wiring of a single grid node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeWiring {
    pub i: usize,
    pub j: usize,
    /// Same-row skip inputs, column-ascending: `X(i,0) .. X(i,j-1)`.
    pub skips: Vec<(usize, usize)>,
    /// Upsampled input `Up(X(i+1,j-1))`, if any.
    pub up: Option<(usize, usize)>,
    /// Downsampled input `Down(X(i-1,j))`: the encoder edge when `j == 0`,
    /// the dense-grid down edge when `j >= 1` (modified variant only).
    pub down: Option<(usize, usize)>,
}

impl NodeWiring {
    /// Number of inputs fused at this node (fan-in).
    pub fn fan_in(&self) -> usize {
        self.skips.len() + usize::from(self.up.is_some()) + usize::from(self.down.is_some())
    }
}

/// Build the full wiring list in evaluation (column-major) order.
pub fn build_wiring(depth: usize, modified: bool) -> Vec<NodeWiring> {
    let mut nodes = Vec::new();
    for j in 0..=depth {
        for i in 0..=(depth - j) {
            let mut w = NodeWiring {
                i,
                j,
                skips: Vec::new(),
                up: None,
                down: None,
            };
            if j == 0 {
                if i >= 1 {
                    w.down = Some((i - 1, 0));
                }
            } else {
                w.skips = (0..j).map(|jj| (i, jj)).collect();
                w.up = Some((i + 1, j - 1));
                if modified && i >= 1 {
                    w.down = Some((i - 1, j));
                }
            }
            nodes.push(w);
        }
    }
    nodes
}

/// Total node count of the triangular grid: `(depth+1)(depth+2)/2`.
pub fn node_count(depth: usize) -> usize {
    (depth + 1) * (depth + 2) / 2
}

/// Check that a wiring list is a consistent triangular grid: every node of
/// the grid present exactly once in column-major order, and every referenced
/// input names a node that exists. Returns the offending node name on error.
pub fn validate_wiring(depth: usize, wiring: &[NodeWiring]) -> Result<(), String> {
    let exists = |i: usize, j: usize| i <= depth && j <= depth - i;
    let expected = node_count(depth);
    if wiring.len() != expected {
        return Err(format!(
            "wiring lists {} nodes, the depth-{depth} grid has {expected}",
            wiring.len()
        ));
    }
    let mut idx = 0usize;
    for j in 0..=depth {
        for i in 0..=(depth - j) {
            let w = &wiring[idx];
            if (w.i, w.j) != (i, j) {
                return Err(format!(
                    "wiring entry {idx} is {}, expected {} (column-major order)",
                    node_name(w.i, w.j),
                    node_name(i, j)
                ));
            }
            idx += 1;
        }
    }
    for w in wiring {
        for &(si, sj) in &w.skips {
            if !exists(si, sj) {
                return Err(format!(
                    "{} references absent node {}",
                    node_name(w.i, w.j),
                    node_name(si, sj)
                ));
            }
        }
        if let Some((ui, uj)) = w.up {
            if !exists(ui, uj) {
                return Err(format!(
                    "{} references absent node {}",
                    node_name(w.i, w.j),
                    node_name(ui, uj)
                ));
            }
        }
        if let Some((di, dj)) = w.down {
            if !exists(di, dj) {
                return Err(format!(
                    "{} references absent node {}",
                    node_name(w.i, w.j),
                    node_name(di, dj)
                ));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_four_grid_has_fifteen_nodes_in_rows_of_descending_length() {
        let wiring = build_wiring(4, true);
        assert_eq!(wiring.len(), 15);
        assert_eq!(node_count(4), 15);
        // Row i holds depth + 1 - i nodes: 5, 4, 3, 2, 1.
        for i in 0..=4 {
            let row = wiring.iter().filter(|w| w.i == i).count();
            assert_eq!(row, 5 - i, "row {i}");
        }
        validate_wiring(4, &wiring).unwrap();
    }

    #[test]
    fn fan_in_matches_the_wiring_rule() {
        let depth = 4;
        let wiring = build_wiring(depth, true);
        for w in &wiring {
            if w.j == 0 {
                if w.i == 0 {
                    assert_eq!(w.fan_in(), 0, "X(0,0) consumes the image");
                } else {
                    assert_eq!(w.fan_in(), 1, "encoder node {}", node_name(w.i, w.j));
                    assert_eq!(w.down, Some((w.i - 1, 0)));
                }
            } else if w.i == 0 {
                // Row 0: j skips + Up, no Down.
                assert_eq!(w.fan_in(), w.j + 1, "{}", node_name(w.i, w.j));
                assert!(w.down.is_none());
            } else {
                // Interior: j skips + Up + Down.
                assert_eq!(w.fan_in(), w.j + 2, "{}", node_name(w.i, w.j));
                assert_eq!(w.down, Some((w.i - 1, w.j)));
            }
            if w.j >= 1 {
                assert_eq!(w.up, Some((w.i + 1, w.j - 1)));
                assert_eq!(
                    w.skips,
                    (0..w.j).map(|jj| (w.i, jj)).collect::<Vec<_>>(),
                    "skips of {}",
                    node_name(w.i, w.j)
                );
            }
        }
        // No node in the bottom row has an Up input (it has no j >= 1 nodes).
        assert!(wiring
            .iter()
            .filter(|w| w.i == depth)
            .all(|w| w.up.is_none() && w.j == 0));
    }

    #[test]
    fn dropping_down_terms_recovers_the_standard_nested_skip_wiring() {
        let modified = build_wiring(4, true);
        let standard = build_wiring(4, false);
        assert_eq!(modified.len(), standard.len());
        for (m, s) in modified.iter().zip(&standard) {
            assert_eq!((m.i, m.j), (s.i, s.j));
            assert_eq!(m.skips, s.skips);
            assert_eq!(m.up, s.up);
            if m.j == 0 {
                // Encoder chain is shared by both variants.
                assert_eq!(m.down, s.down);
            } else {
                assert!(s.down.is_none(), "standard variant has no down fusion");
                if m.i >= 1 {
                    assert_eq!(m.down, Some((m.i - 1, m.j)));
                } else {
                    assert!(m.down.is_none(), "no down term at row 0");
                }
            }
        }
    }

    #[test]
    fn depth_one_boundary_example() {
        let wiring = build_wiring(1, true);
        assert_eq!(wiring.len(), 3);
        let names: Vec<(usize, usize)> = wiring.iter().map(|w| (w.i, w.j)).collect();
        assert_eq!(names, vec![(0, 0), (1, 0), (0, 1)]);
        let x01 = &wiring[2];
        assert_eq!(x01.skips, vec![(0, 0)]);
        assert_eq!(x01.up, Some((1, 0)));
        assert!(x01.down.is_none(), "no Down at row 0");
    }

    #[test]
    fn inputs_precede_their_consumers_in_evaluation_order() {
        for depth in 1..=5 {
            let wiring = build_wiring(depth, true);
            let pos = |i: usize, j: usize| {
                wiring
                    .iter()
                    .position(|w| (w.i, w.j) == (i, j))
                    .expect("node exists")
            };
            for (idx, w) in wiring.iter().enumerate() {
                let mut inputs = w.skips.clone();
                inputs.extend(w.up);
                inputs.extend(w.down);
                for (ii, jj) in inputs {
                    assert!(
                        pos(ii, jj) < idx,
                        "depth {depth}: input {} of {} does not precede it",
                        node_name(ii, jj),
                        node_name(w.i, w.j)
                    );
                }
            }
        }
    }

    #[test]
    fn validation_names_the_absent_node() {
        let mut wiring = build_wiring(2, true);
        wiring[3].skips.push((9, 9));
        let err = validate_wiring(2, &wiring).unwrap_err();
        assert!(err.contains("X(9,9)"), "got: {err}");

        let mut wiring = build_wiring(2, true);
        wiring.pop();
        assert!(validate_wiring(2, &wiring).is_err());
    }
}
