//! Symmetric positive-definite solve with envelope (skyline) storage.
//!
//! Row `r` stores the lower-triangular entries from its first structural
//! nonzero column up to the diagonal. Cholesky fill stays inside this
//! envelope, so banded pose chains factor in time linear in their length.

#[derive(Debug, Clone)]
pub(crate) struct Envelope {
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl Envelope {
    /// `first[r]` is the first stored column of row `r` (`≤ r`).
    pub fn new(first: Vec<usize>) -> Self {
        let mut offset = Vec::with_capacity(first.len() + 1);
        let mut total = 0;
        for (r, f) in first.iter().enumerate() {
            debug_assert!(*f <= r);
            offset.push(total);
            total += r - f + 1;
        }
        offset.push(total);
        Self {
            first,
            offset,
            data: vec![0.0; total],
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    fn index(&self, r: usize, c: usize) -> usize {
        debug_assert!(c <= r && c >= self.first[r], "({r}, {c}) outside envelope");
        self.offset[r] + c - self.first[r]
    }

    /// Adds `v` at `(r, c)`, `c ≤ r`.
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        let k = self.index(r, c);
        self.data[k] += v;
    }

    pub fn diagonal(&self, r: usize) -> f64 {
        self.data[self.index(r, r)]
    }

    pub fn set_diagonal(&mut self, r: usize, v: f64) {
        let k = self.index(r, r);
        self.data[k] = v;
    }

    /// In-place Cholesky `A = L Lᵀ`; `None` when a pivot is not positive.
    pub fn factor(mut self) -> Option<Self> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            for j in fi..=i {
                let fj = self.first[j];
                let oj = self.offset[j];
                let k0 = fi.max(fj);
                let mut s = self.data[oi + j - fi];
                let (row_i, row_j) = (&self.data[oi + k0 - fi..oi + j - fi], &self.data[oj + k0 - fj..oj + j - fj]);
                s -= row_i.iter().zip(row_j).map(|(a, b)| a * b).sum::<f64>();
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    self.data[oi + i - fi] = s.sqrt();
                } else {
                    self.data[oi + j - fi] = s / self.data[oj + j - fj];
                }
            }
        }
        Some(self)
    }

    /// Solves `L Lᵀ x = b` with a factored envelope.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            let s: f64 = self.data[oi..oi + i - fi].iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / self.data[oi + i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let oi = self.offset[i];
            y[i] /= self.data[oi + i - fi];
            let xi = y[i];
            for (k, l) in (fi..i).zip(&self.data[oi..oi + i - fi]) {
                y[k] -= l * xi;
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 40;
        // banded SPD matrix with a few long-range couplings
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = 10.0;
            for j in i.saturating_sub(3)..i {
                let v = rng.gen_range(-1.0..1.0);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        a[(35, 2)] = 0.5;
        a[(2, 35)] = 0.5;
        let first: Vec<usize> = (0..n)
            .map(|r| (0..=r).find(|c| a[(r, *c)] != 0.0).unwrap())
            .collect();
        let mut env = Envelope::new(first.clone());
        for r in 0..n {
            for c in first[r]..=r {
                env.add(r, c, a[(r, c)]);
            }
        }
        let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let x = env.factor().unwrap().solve(b.as_slice());
        let expected = a.cholesky().unwrap().solve(&b);
        for i in 0..n {
            assert!((x[i] - expected[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_is_rejected() {
        let mut env = Envelope::new(vec![0, 0]);
        env.add(0, 0, 1.0);
        env.add(1, 0, 2.0);
        env.add(1, 1, 1.0);
        assert!(env.factor().is_none());
    }
}
