use crate::design2d::SpatialPoint;

/// Static 2D tree over a fixed point set with exact nearest-neighbour
/// queries. Ties in distance go to the lowest original index.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<SpatialPoint>,
    /// Original indices in tree order; node `lo..hi` has its split at the midpoint.
    order: Vec<usize>,
}

impl KdTree {
    pub fn new(points: &[SpatialPoint]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(points, &mut order, 0);
        Self {
            points: points.to_vec(),
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[SpatialPoint] {
        &self.points
    }

    /// Index and squared distance of the nearest point.
    pub fn nearest(&self, q: SpatialPoint) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.order.len(), 0, &mut best);
        Some(best)
    }

    fn search(&self, q: SpatialPoint, lo: usize, hi: usize, depth: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = self.points[idx];
        let d = q.distance_squared(&p);
        if d < best.1 || (d == best.1 && idx < best.0) {
            *best = (idx, d);
        }
        let diff = if depth.is_multiple_of(2) { q.x1 - p.x1 } else { q.x2 - p.x2 };
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, depth + 1, best);
        // `<=` keeps equidistant candidates with lower indices reachable.
        if diff * diff <= best.1 {
            self.search(q, far.0, far.1, depth + 1, best);
        }
    }
}

fn build(points: &[SpatialPoint], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let key = |i: &usize| {
        if depth.is_multiple_of(2) {
            points[*i].x1
        } else {
            points[*i].x2
        }
    };
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |a, b| key(a).total_cmp(&key(b)).then(a.cmp(b)));
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}
