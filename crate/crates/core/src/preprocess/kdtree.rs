//! Static 3-d tree for nearest-neighbour queries.

use crate::Vec3;

#[derive(Clone, Copy, Debug)]
struct Node {
    point: usize,
    axis: u8,
    left: u32,
    right: u32,
}

const NONE: u32 = u32::MAX;

/// Balanced k-d tree over a fixed point set.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vec3>,
    nodes: Vec<Node>,
    root: u32,
}

impl KdTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build(&points, &mut idx, &mut nodes);
        Self { points, nodes, root }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    /// Index of and squared distance to the closest stored point.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.root == NONE {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, q, &mut best);
        Some(best)
    }

    fn search(&self, n: u32, q: &Vec3, best: &mut (usize, f64)) {
        let node = self.nodes[n as usize];
        let p = self.points[node.point];
        let d2 = (p - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && node.point < best.0) {
            *best = (node.point, d2);
        }
        let diff = q[node.axis as usize] - p[node.axis as usize];
        let (near, far) = if diff < 0.0 { (node.left, node.right) } else { (node.right, node.left) };
        if near != NONE {
            self.search(near, q, best);
        }
        if far != NONE && diff * diff <= best.1 {
            self.search(far, q, best);
        }
    }
}

fn build(points: &[Vec3], idx: &mut [usize], nodes: &mut Vec<Node>) -> u32 {
    if idx.is_empty() {
        return NONE;
    }
    // split on the widest axis
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &i in idx.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    let mid = idx.len() / 2;
    idx.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    let at = nodes.len();
    nodes.push(Node { point: idx[mid], axis: axis as u8, left: NONE, right: NONE });
    let (left, rest) = idx.split_at_mut(mid);
    let l = build(points, left, nodes);
    let r = build(points, &mut rest[1..], nodes);
    nodes[at].left = l;
    nodes[at].right = r;
    at as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec3> = (0..2000).map(|_| Vec3::new(rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0), rng.random())).collect();
        let tree = KdTree::new(pts.clone());
        for _ in 0..300 {
            let q = Vec3::new(rng.random_range(-60.0..60.0), rng.random_range(-8.0..8.0), rng.random_range(-1.0..2.0));
            let (i, d2) = tree.nearest(&q).unwrap();
            let brute = pts.iter().map(|p| (p - q).norm_squared()).fold(f64::INFINITY, f64::min);
            assert_eq!(d2, brute);
            assert_eq!((pts[i] - q).norm_squared(), brute);
        }
        assert!(KdTree::new(vec![]).nearest(&Vec3::zeros()).is_none());
    }

    #[test]
    fn duplicate_points() {
        let tree = KdTree::new(vec![Vec3::zeros(); 10]);
        assert_eq!(tree.nearest(&Vec3::new(1.0, 0.0, 0.0)).unwrap().1, 1.0);
    }
}
