//! Static k-d tree over a flat row-major point array, specialised for the two
//! queries the estimators need: neighbour counts at several radii at once,
//! and k nearest neighbours.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 16;

struct Node {
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

pub struct KdTree {
    dim: usize,
    /// Points in tree order.
    points: Vec<f64>,
    /// Tree position -> original index.
    order: Vec<usize>,
    nodes: Vec<Node>,
    /// `2 * dim` floats per node: lower corner then upper corner.
    bounds: Vec<f64>,
}

#[derive(PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl KdTree {
    pub fn new(points: &[f64], dim: usize) -> Self {
        assert!(dim > 0 && points.len().is_multiple_of(dim));
        let n = points.len() / dim;
        let mut order: Vec<usize> = (0..n).collect();
        let mut tree = KdTree {
            dim,
            points: Vec::new(),
            order: Vec::new(),
            nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 1),
            bounds: Vec::new(),
        };
        if n > 0 {
            tree.build(points, &mut order, 0, n);
        }
        tree.points = order
            .iter()
            .flat_map(|&i| points[i * dim..(i + 1) * dim].iter().copied())
            .collect();
        tree.order = order;
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn build(&mut self, points: &[f64], order: &mut [usize], start: usize, end: usize) -> usize {
        let d = self.dim;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &i in &order[start..end] {
            for k in 0..d {
                let x = points[i * d + k];
                lo[k] = lo[k].min(x);
                hi[k] = hi[k].max(x);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            start,
            end,
            children: None,
        });
        self.bounds.extend_from_slice(&lo);
        self.bounds.extend_from_slice(&hi);
        if end - start > LEAF_SIZE {
            let axis = (0..d)
                .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
                .unwrap_or(0);
            if hi[axis] > lo[axis] {
                let mid = (start + end) / 2;
                order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                    points[a * d + axis].total_cmp(&points[b * d + axis])
                });
                let left = self.build(points, order, start, mid);
                let right = self.build(points, order, mid, end);
                self.nodes[id].children = Some((left, right));
            }
        }
        id
    }

    /// Squared distances from `q` to the nearest and farthest points of a node's box.
    fn box_dist2(&self, node: usize, q: &[f64]) -> (f64, f64) {
        let d = self.dim;
        let b = &self.bounds[2 * d * node..2 * d * (node + 1)];
        let (mut near, mut far) = (0.0, 0.0);
        for k in 0..d {
            let (lo, hi) = (b[k], b[d + k]);
            let x = q[k];
            let gap = if x < lo {
                lo - x
            } else if x > hi {
                x - hi
            } else {
                0.0
            };
            let reach = (x - lo).abs().max((hi - x).abs());
            near += gap * gap;
            far += reach * reach;
        }
        (near, far)
    }

    fn dist2(&self, pos: usize, q: &[f64]) -> f64 {
        let p = &self.points[pos * self.dim..(pos + 1) * self.dim];
        p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// `counts[k]` = number of points within distance `radii[k]` of `q`
    /// (closed balls, `q` itself included if present). `radii` must be increasing.
    pub fn count_within(&self, q: &[f64], radii: &[f64]) -> Vec<usize> {
        let r2: Vec<f64> = radii.iter().map(|r| r * r).collect();
        let mut counts = vec![0; radii.len()];
        if !self.is_empty() {
            self.count_node(0, q, &r2, 0, r2.len(), &mut counts);
        }
        counts
    }

    fn count_node(
        &self,
        node: usize,
        q: &[f64],
        r2: &[f64],
        lo: usize,
        hi: usize,
        counts: &mut [usize],
    ) {
        let (near, far) = self.box_dist2(node, q);
        // radii below `lo` miss the box, radii from `hi` on contain it
        let lo = lo + r2[lo..hi].partition_point(|&r| r < near);
        let full = lo + r2[lo..hi].partition_point(|&r| r < far);
        let n = &self.nodes[node];
        for c in &mut counts[full..hi] {
            *c += n.end - n.start;
        }
        if lo >= full {
            return;
        }
        match n.children {
            Some((l, r)) => {
                self.count_node(l, q, r2, lo, full, counts);
                self.count_node(r, q, r2, lo, full, counts);
            }
            None => {
                for pos in n.start..n.end {
                    let d2 = self.dist2(pos, q);
                    let first = lo + r2[lo..full].partition_point(|&r| r < d2);
                    for c in &mut counts[first..full] {
                        *c += 1;
                    }
                }
            }
        }
    }

    /// Distances to the `k` nearest points of `q`, ascending, skipping the
    /// point with original index `exclude`.
    pub fn nearest(&self, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<f64> {
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        if !self.is_empty() && k > 0 {
            self.nearest_node(0, q, k, exclude, &mut heap);
        }
        let mut out: Vec<f64> = heap.into_iter().map(|c| c.0.sqrt()).collect();
        out.sort_by(f64::total_cmp);
        out
    }

    fn nearest_node(
        &self,
        node: usize,
        q: &[f64],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        let (near, _) = self.box_dist2(node, q);
        if heap.len() == k && near > heap.peek().map_or(f64::INFINITY, |c| c.0) {
            return;
        }
        let n = &self.nodes[node];
        match n.children {
            Some((l, r)) => {
                let (dl, _) = self.box_dist2(l, q);
                let (dr, _) = self.box_dist2(r, q);
                let (first, second) = if dl <= dr { (l, r) } else { (r, l) };
                self.nearest_node(first, q, k, exclude, heap);
                self.nearest_node(second, q, k, exclude, heap);
            }
            None => {
                for pos in n.start..n.end {
                    if Some(self.order[pos]) == exclude {
                        continue;
                    }
                    let d2 = self.dist2(pos, q);
                    if heap.len() < k {
                        heap.push(Candidate(d2, pos));
                    } else if d2 < heap.peek().map_or(f64::INFINITY, |c| c.0) {
                        heap.pop();
                        heap.push(Candidate(d2, pos));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn brute_counts(points: &[f64], d: usize, q: &[f64], radii: &[f64]) -> Vec<usize> {
        radii
            .iter()
            .map(|r| {
                points
                    .chunks(d)
                    .filter(|p| {
                        p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= r * r
                    })
                    .count()
            })
            .collect()
    }

    #[test]
    fn counts_match_brute_force() {
        let mut r = rng::stream(3, 0);
        for d in 1..=3 {
            let pts: Vec<f64> = (0..2000 * d).map(|_| r.gen::<f64>()).collect();
            let tree = KdTree::new(&pts, d);
            let radii = [0.01, 0.05, 0.1, 0.3, 2.0];
            for _ in 0..20 {
                let q: Vec<f64> = (0..d).map(|_| r.gen::<f64>()).collect();
                assert_eq!(
                    tree.count_within(&q, &radii),
                    brute_counts(&pts, d, &q, &radii)
                );
            }
        }
    }

    #[test]
    fn nearest_matches_brute_force() {
        let mut r = rng::stream(4, 0);
        let d = 2;
        let pts: Vec<f64> = (0..3000 * d).map(|_| r.gen::<f64>()).collect();
        let tree = KdTree::new(&pts, d);
        for idx in [0usize, 17, 2999] {
            let q = &pts[idx * d..(idx + 1) * d];
            let got = tree.nearest(q, 10, Some(idx));
            let mut all: Vec<f64> = pts
                .chunks(d)
                .enumerate()
                .filter(|(i, _)| *i != idx)
                .map(|(_, p)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
                .collect();
            all.sort_by(f64::total_cmp);
            assert_eq!(got, all[..10].to_vec());
        }
    }

    #[test]
    fn duplicate_points() {
        let pts = vec![0.5; 100];
        let tree = KdTree::new(&pts, 1);
        assert_eq!(tree.count_within(&[0.5], &[0.0, 1.0]), vec![100, 100]);
        assert_eq!(tree.nearest(&[0.5], 3, Some(0)), vec![0.0; 3]);
    }
}
