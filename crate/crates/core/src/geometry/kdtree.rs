use nalgebra::Vector3;

use super::{GeometryError, PointCloud};

const LEAF_SIZE: usize = 8;

/// Static 3-D tree over a point cloud.
///
/// The layout is implicit: the node covering `order[lo..hi]` splits at
/// `mid = (lo + hi) / 2`, and `axes[mid]` holds its split axis. Ties in
/// distance are broken by the smaller point index, so every query returns
/// exactly what a linear scan would.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    order: Vec<u32>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn build(cloud: &PointCloud) -> Result<Self, GeometryError> {
        Self::from_points(cloud.points.clone())
    }

    pub fn from_points(points: Vec<Vector3<f64>>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut axes = vec![0u8; points.len()];
        build_range(&points, &mut order, &mut axes, 0);
        Ok(Self {
            points,
            order,
            axes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &Vector3<f64> {
        &self.points[index]
    }

    /// Nearest stored point within `max_dist` (inclusive) of `query`.
    pub fn nearest(&self, query: &Vector3<f64>, max_dist: f64) -> Option<(usize, f64)> {
        let mut best = Best {
            d2: max_dist * max_dist,
            index: u32::MAX,
        };
        self.search_nearest(query, 0, self.order.len(), &mut best);
        (best.index != u32::MAX).then(|| (best.index as usize, best.d2.sqrt()))
    }

    /// The `k` nearest points sorted by increasing distance.
    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.search_knn(query, k, 0, self.order.len(), &mut heap);
        heap.into_iter()
            .map(|(d2, i)| (i as usize, d2.sqrt()))
            .collect()
    }

    fn search_nearest(&self, q: &Vector3<f64>, lo: usize, hi: usize, best: &mut Best) {
        if hi - lo <= LEAF_SIZE {
            for &idx in &self.order[lo..hi] {
                let d2 = (self.points[idx as usize] - q).norm_squared();
                best.offer(d2, idx);
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let axis = self.axes[mid] as usize;
        let idx = self.order[mid];
        let split = self.points[idx as usize][axis];
        let diff = q[axis] - split;
        best.offer((self.points[idx as usize] - q).norm_squared(), idx);
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search_nearest(q, near.0, near.1, best);
        if diff * diff <= best.d2 {
            self.search_nearest(q, far.0, far.1, best);
        }
    }

    fn search_knn(
        &self,
        q: &Vector3<f64>,
        k: usize,
        lo: usize,
        hi: usize,
        heap: &mut Vec<(f64, u32)>,
    ) {
        if hi - lo <= LEAF_SIZE {
            for &idx in &self.order[lo..hi] {
                offer_knn(heap, k, (self.points[idx as usize] - q).norm_squared(), idx);
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let axis = self.axes[mid] as usize;
        let idx = self.order[mid];
        let diff = q[axis] - self.points[idx as usize][axis];
        offer_knn(heap, k, (self.points[idx as usize] - q).norm_squared(), idx);
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search_knn(q, k, near.0, near.1, heap);
        let bound = if heap.len() < k {
            f64::INFINITY
        } else {
            heap[heap.len() - 1].0
        };
        if diff * diff <= bound {
            self.search_knn(q, k, far.0, far.1, heap);
        }
    }
}

struct Best {
    d2: f64,
    index: u32,
}

impl Best {
    fn offer(&mut self, d2: f64, index: u32) {
        if d2 < self.d2 || (d2 == self.d2 && index < self.index) {
            self.d2 = d2;
            self.index = index;
        }
    }
}

/// Keeps `heap` sorted by `(d2, index)` and at most `k` long.
fn offer_knn(heap: &mut Vec<(f64, u32)>, k: usize, d2: f64, index: u32) {
    let key = (d2, index);
    if heap.len() == k {
        let last = heap[k - 1];
        if !(key < last) {
            return;
        }
        heap.pop();
    }
    let pos = heap.partition_point(|e| *e < key);
    heap.insert(pos, key);
}

fn build_range(points: &[Vector3<f64>], order: &mut [u32], axes: &mut [u8], offset: usize) {
    let n = order.len();
    if n <= LEAF_SIZE {
        return;
    }
    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    for &i in order.iter() {
        let p = &points[i as usize];
        min = min.inf(p);
        max = max.sup(p);
    }
    let axis = (max - min).imax();
    let mid = n / 2;
    order.select_nth_unstable_by(mid, |a, b| {
        points[*a as usize][axis]
            .total_cmp(&points[*b as usize][axis])
            .then(a.cmp(b))
    });
    axes[offset + mid] = axis as u8;
    let (left, right) = order.split_at_mut(mid);
    build_range(points, left, axes, offset);
    build_range(points, &mut right[1..], axes, offset + mid + 1);
}
