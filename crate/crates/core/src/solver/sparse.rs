//! Envelope (skyline) Cholesky factorization for the normal equations of
//! large, mostly banded problems such as pose chains with a few loop edges.

use nalgebra::DVector;

#[derive(Debug, Clone)]
pub struct SkylineMatrix {
    first: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl SkylineMatrix {
    /// `first[i]` is the first structurally nonzero column of row `i` (≤ i).
    pub fn new(first: Vec<usize>) -> Self {
        let rows = first.iter().enumerate().map(|(i, &f)| vec![0.0; i - f + 1]).collect();
        Self { first, rows }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    /// Adds `v` to entry `(i, j)` of the lower triangle (`j ≤ i`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i && j >= self.first[i], "entry ({i},{j}) outside envelope");
        let f = self.first[i];
        self.rows[i][j - f] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if j < self.first[i] {
            0.0
        } else {
            self.rows[i][j - self.first[i]]
        }
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        *self.rows[i].last().unwrap()
    }

    pub fn add_diagonal(&mut self, i: usize, v: f64) {
        *self.rows[i].last_mut().unwrap() += v;
    }

    /// In-place `L Lᵀ` factorization; `None` when not positive definite.
    pub fn cholesky(mut self) -> Option<SkylineCholesky> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let mut s = self.rows[i][j - fi];
                if k0 < j {
                    let (ri, rj) = if i == j {
                        (&self.rows[i][k0 - fi..j - fi], &self.rows[i][k0 - fi..j - fi])
                    } else {
                        (&self.rows[i][k0 - fi..j - fi], &self.rows[j][k0 - fj..j - fj])
                    };
                    s -= ri.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>();
                }
                if j < i {
                    let d = *self.rows[j].last().unwrap();
                    self.rows[i][j - fi] = s / d;
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    self.rows[i][j - fi] = s.sqrt();
                }
            }
        }
        Some(SkylineCholesky { l: self })
    }
}

#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    l: SkylineMatrix,
}

impl SkylineCholesky {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.l.dim();
        let mut y = b.clone();
        for i in 0..n {
            let f = self.l.first[i];
            let row = &self.l.rows[i];
            let mut s = y[i];
            for j in f..i {
                s -= row[j - f] * y[j];
            }
            y[i] = s / row[i - f];
        }
        for i in (0..n).rev() {
            let f = self.l.first[i];
            let row = &self.l.rows[i];
            y[i] /= row[i - f];
            let yi = y[i];
            for j in f..i {
                y[j] -= row[j - f] * yi;
            }
        }
        y
    }
}
