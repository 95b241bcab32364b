//! Exact nearest-neighbour search over 3D points.

/// Static kd-tree. Each point carries an ordering key; among equidistant
/// neighbours the smallest key wins.
#[derive(Debug, Clone)]
pub struct KdTree<K> {
    points: Vec<[f64; 3]>,
    keys: Vec<K>,
    /// Implicit balanced tree: node `lo..hi` splits at `mid = (lo + hi) / 2`.
    order: Vec<usize>,
}

impl<K: Ord + Copy> KdTree<K> {
    pub fn new(points: Vec<[f64; 3]>, keys: Vec<K>) -> Self {
        assert_eq!(points.len(), keys.len());
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(&points, &mut order, 0);
        KdTree { points, keys, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index (into the construction arrays) of the nearest point, with its squared distance.
    pub fn nearest(&self, q: [f64; 3]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.order.len(), 0, &mut best);
        Some(best)
    }

    fn better(&self, cand: usize, d2: f64, best: &(usize, f64)) -> bool {
        d2 < best.1 || (d2 == best.1 && best.0 != usize::MAX && self.keys[cand] < self.keys[best.0])
    }

    fn search(&self, q: [f64; 3], lo: usize, hi: usize, depth: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = self.points[idx];
        let d2 = dist2(p, q);
        if self.better(idx, d2, best) || best.0 == usize::MAX {
            *best = (idx, d2);
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, depth + 1, best);
        // `<=` keeps equidistant candidates on the far side reachable for the tie rule
        if diff * diff <= best.1 {
            self.search(q, far.0, far.1, depth + 1, best);
        }
    }
}

fn build(points: &[[f64; 3]], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |a, b| points[*a][axis].total_cmp(&points[*b][axis]));
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}

pub fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}
