//! Cross-agent object association.
//!
//! Collaborator boxes are moved into the ego frame with the current relative-pose estimate,
//! every box gets a star graph over its K nearest neighbours, and candidate pairs within
//! `tau2` are scored by edge consistency plus centroid proximity. A maximum-weight
//! bipartite assignment is then pruned at `tau1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DetectedBox, Pose2, Transform2};

/// Matching hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchParams {
    /// Minimum similarity for a retained pair.
    pub tau1: f64,
    /// Maximum centroid distance for a candidate pair, meters.
    pub tau2: f64,
    /// Weight of distance similarity against edge similarity.
    pub lambda: f64,
    /// Star-graph leaves per center.
    pub k: usize,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            tau1: 0.5,
            tau2: 3.0,
            lambda: 1.0,
            k: 5,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("matching.tau1", self.tau1),
            ("matching.tau2", self.tau2),
            ("matching.lambda", self.lambda),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarLeaf {
    pub index: usize,
    /// Pose of the leaf box relative to the center box.
    pub edge_transform: Transform2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarGraph {
    pub center: usize,
    pub leaves: Vec<StarLeaf>,
}

impl StarGraph {
    fn leaf(&self, index: usize) -> Option<&StarLeaf> {
        self.leaves.iter().find(|l| l.index == index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    /// Index into the ego box list.
    pub p: usize,
    /// Index into the collaborator box list.
    pub q: usize,
    pub score: f64,
}

/// One-to-one correspondence between two box lists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub pairs: Vec<MatchPair>,
}

impl Assignment {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn total_score(&self) -> f64 {
        self.pairs.iter().map(|m| m.score).sum()
    }

    pub fn is_one_to_one(&self) -> bool {
        let mut ps: Vec<_> = self.pairs.iter().map(|m| m.p).collect();
        let mut qs: Vec<_> = self.pairs.iter().map(|m| m.q).collect();
        ps.sort_unstable();
        qs.sort_unstable();
        let n = ps.len();
        ps.dedup();
        qs.dedup();
        ps.len() == n && qs.len() == n
    }
}

/// Re-expresses collaborator boxes in the ego frame through `rel = ξ_i⁻¹ ∘ ξ_j`.
pub fn transform_boxes(boxes: &[DetectedBox], rel: &Pose2) -> Vec<DetectedBox> {
    boxes.iter().map(|b| b.transformed(rel)).collect()
}

/// Star graph around `center_idx` with its `k` nearest boxes (ties by index) as leaves.
pub fn build_star_graph(center_idx: usize, boxes: &[DetectedBox], k: usize) -> StarGraph {
    let center = boxes[center_idx].center;
    let mut others: Vec<(f64, usize)> = boxes
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != center_idx)
        .map(|(i, b)| (center.distance(&b.center), i))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let leaves = others
        .into_iter()
        .take(k)
        .map(|(_, i)| StarLeaf {
            index: i,
            edge_transform: center.relative(&boxes[i].center).to_matrix(),
        })
        .collect();
    StarGraph {
        center: center_idx,
        leaves,
    }
}

/// For each ego box, the nearest collaborator box within `tau2` (ties to the lower index).
///
/// Several ego boxes may share a candidate; this is a candidate map, not an assignment.
pub fn initial_match(ego: &[DetectedBox], other: &[DetectedBox], tau2: f64) -> Vec<Option<usize>> {
    ego.iter()
        .map(|p| {
            let mut best: Option<(f64, usize)> = None;
            for (q, b) in other.iter().enumerate() {
                let d = p.center.distance(&b.center);
                if d <= tau2 && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, q));
                }
            }
            best.map(|(_, q)| q)
        })
        .collect()
}

/// `exp(-‖T_pm · T_qn⁻¹ − I‖_F)`.
///
/// For rigid transforms the deviation of `A` and `A⁻¹` from identity have equal Frobenius
/// norm, so swapping the arguments leaves the value unchanged. That symmetry does not hold
/// for general 3×3 matrices.
pub fn edge_consistency(t_pm: &Transform2, t_qn: &Transform2) -> f64 {
    // (T_pm − T_qn)·T_qn⁻¹ equals T_pm·T_qn⁻¹ − I and is exactly zero for identical inputs
    let dev = (t_pm.matrix() - t_qn.matrix()) * t_qn.inverse().matrix();
    (-dev.norm()).exp()
}

/// Mean edge consistency over leaves `m` of `gp` whose candidate `a_ij[m]` is a leaf of `gq`.
/// Returns 0 when no leaf pairs up.
pub fn edge_similarity(gp: &StarGraph, gq: &StarGraph, a_ij: &[Option<usize>]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for leaf in &gp.leaves {
        let Some(n) = a_ij.get(leaf.index).copied().flatten() else {
            continue;
        };
        if let Some(other) = gq.leaf(n) {
            sum += edge_consistency(&leaf.edge_transform, &other.edge_transform);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// `exp(-dis(p, q))` on centroid distance.
pub fn distance_similarity(p: &DetectedBox, q: &DetectedBox) -> f64 {
    (-p.center.distance(&q.center)).exp()
}

pub fn combine_similarity(edge: f64, dis: f64, lambda: f64) -> f64 {
    edge + lambda * dis
}

/// `S(p, q) = S_edge + λ·S_dis`.
pub fn graph_similarity(
    p: &DetectedBox,
    q: &DetectedBox,
    gp: &StarGraph,
    gq: &StarGraph,
    a_ij: &[Option<usize>],
    lambda: f64,
) -> f64 {
    combine_similarity(edge_similarity(gp, gq, a_ij), distance_similarity(p, q), lambda)
}

/// Maximum-weight one-to-one assignment on a rectangular score matrix.
///
/// Rectangular inputs are padded with zero-score dummies; pairs landing on a dummy are
/// dropped. Returns `(row, col)` pairs sorted by row.
pub fn max_weight_assignment(scores: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = scores.len();
    let cols = scores.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let n = rows.max(cols);
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            -scores[i][j]
        } else {
            0.0
        }
    };
    let row_to_col = hungarian_min(n, cost);
    row_to_col
        .into_iter()
        .enumerate()
        .filter(|&(i, j)| i < rows && j < cols)
        .collect()
}

/// Kuhn–Munkres with potentials on an `n × n` cost function, O(n³).
///
/// Strict comparisons make the scan prefer the lowest column index on ties.
fn hungarian_min(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[j]: row (1-based) assigned to column j; column 0 is the virtual root
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    row_to_col
}

/// Global assignment first, then drop pairs scoring below `tau1`.
pub fn optimal_assignment(scores: &[Vec<f64>], tau1: f64) -> Assignment {
    let pairs = max_weight_assignment(scores)
        .into_iter()
        .map(|(p, q)| MatchPair {
            p,
            q,
            score: scores[p][q],
        })
        .filter(|m| m.score >= tau1)
        .collect();
    Assignment { pairs }
}

/// Similarity matrix between ego boxes and collaborator boxes already in the ego frame.
/// Pairs farther apart than `tau2` score 0.
pub fn similarity_matrix(ego: &[DetectedBox], other_in_ego: &[DetectedBox], params: &MatchParams) -> Vec<Vec<f64>> {
    let a_ij = initial_match(ego, other_in_ego, params.tau2);
    let ego_graphs: Vec<StarGraph> = (0..ego.len()).map(|i| build_star_graph(i, ego, params.k)).collect();
    let other_graphs: Vec<StarGraph> = (0..other_in_ego.len())
        .map(|i| build_star_graph(i, other_in_ego, params.k))
        .collect();
    ego.iter()
        .enumerate()
        .map(|(p, bp)| {
            other_in_ego
                .iter()
                .enumerate()
                .map(|(q, bq)| {
                    if bp.center.distance(&bq.center) > params.tau2 {
                        0.0
                    } else {
                        graph_similarity(bp, bq, &ego_graphs[p], &other_graphs[q], &a_ij, params.lambda)
                    }
                })
                .collect()
        })
        .collect()
}

/// Full association between the ego boxes and a collaborator's boxes (in the sender frame).
///
/// `rel` is the current estimate of the sender pose in the ego frame.
pub fn match_agents(ego: &[DetectedBox], other: &[DetectedBox], rel: &Pose2, params: &MatchParams) -> Assignment {
    if ego.is_empty() || other.is_empty() {
        return Assignment::default();
    }
    let moved = transform_boxes(other, rel);
    optimal_assignment(&similarity_matrix(ego, &moved, params), params.tau1)
}
