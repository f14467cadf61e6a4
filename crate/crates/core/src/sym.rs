//! Symmetric `n×n` matrices for `n ≤ 3`, stored as the upper triangle in
//! row-major order: `(0,0), (0,1), …, (0,n-1), (1,1), …`.

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// Number of stored entries of an `n×n` symmetric matrix.
pub const fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of entry `(i, j)` in the packed upper-triangle storage.
pub fn packed_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + j
}

/// Row/column pair of each packed position, in storage order.
pub fn packed_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(packed_len(n));
    for i in 0..n {
        for j in i..n {
            out.push((i, j));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMatrix {
    n: usize,
    e: [f64; 6],
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        assert!((1..=3).contains(&n), "SymMatrix dimension must be 1, 2 or 3");
        SymMatrix { n, e: [0.0; 6] }
    }

    pub fn identity(n: usize) -> Self {
        Self::scalar(n, 1.0)
    }

    pub fn scalar(n: usize, c: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, c);
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds from packed upper-triangle entries.
    pub fn from_packed(n: usize, packed: &[f64]) -> Self {
        assert_eq!(packed.len(), packed_len(n));
        let mut m = Self::zeros(n);
        m.e[..packed.len()].copy_from_slice(packed);
        m
    }

    /// Symmetric part of a full row-major matrix.
    pub fn from_full(n: usize, a: &[[f64; 3]; 3]) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, 0.5 * (a[i][j] + a[j][i]));
            }
        }
        m
    }

    /// `u ⊗ u`.
    pub fn outer(u: &[f64]) -> Self {
        let n = u.len();
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, u[i] * u[j]);
            }
        }
        m
    }

    /// Symmetrised outer product `½(u⊗v + v⊗u)`.
    pub fn sym_outer(u: &[f64], v: &[f64]) -> Self {
        let n = u.len();
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, 0.5 * (u[i] * v[j] + u[j] * v[i]));
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn packed(&self) -> &[f64] {
        &self.e[..packed_len(self.n)]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.e[packed_index(self.n, i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.e[packed_index(self.n, i, j)] = v;
    }

    pub fn to_full(&self) -> [[f64; 3]; 3] {
        let mut a = [[0.0; 3]; 3];
        for (i, row) in a.iter_mut().enumerate().take(self.n) {
            for (j, x) in row.iter_mut().enumerate().take(self.n) {
                *x = self.get(i, j);
            }
        }
        a
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// `⟨w, M w⟩`.
    pub fn quad(&self, w: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += w[i] * self.get(i, j) * w[j];
            }
        }
        s
    }

    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * w[j]).sum())
            .collect()
    }

    /// `M²`.
    pub fn square(&self) -> Self {
        self.mul_sym(self)
    }

    /// Symmetric part of `A B`.
    pub fn mul_sym(&self, other: &SymMatrix) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                let mut ab = 0.0;
                let mut ba = 0.0;
                for k in 0..n {
                    ab += self.get(i, k) * other.get(k, j);
                    ba += other.get(i, k) * self.get(k, j);
                }
                m.set(i, j, 0.5 * (ab + ba));
            }
        }
        m
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut m = *self;
        m.e.iter_mut().for_each(|x| *x *= c);
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.packed().iter().fold(0.0f64, |a, x| a.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.packed().iter().all(|x| x.is_finite())
    }

    /// Inverse; `None` when singular.
    pub fn inverse(&self) -> Option<Self> {
        let a = self.to_full();
        let n = self.n;
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let mut m = Self::zeros(n);
        match n {
            1 => m.set(0, 0, 1.0 / a[0][0]),
            2 => {
                m.set(0, 0, a[1][1] / det);
                m.set(1, 1, a[0][0] / det);
                m.set(0, 1, -a[0][1] / det);
            }
            _ => {
                for i in 0..3 {
                    for j in i..3 {
                        // cofactor C_ji / det, symmetric so C_ij works too
                        let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                        let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                        let cof = a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
                        m.set(i, j, cof / det);
                    }
                }
            }
        }
        Some(m)
    }

    pub fn det(&self) -> f64 {
        let a = self.to_full();
        match self.n {
            1 => a[0][0],
            2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
            _ => {
                a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                    - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                    + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
            }
        }
    }
}

impl Add for SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: SymMatrix) -> SymMatrix {
        assert_eq!(self.n, rhs.n);
        let mut m = self;
        for k in 0..6 {
            m.e[k] += rhs.e[k];
        }
        m
    }
}

impl AddAssign for SymMatrix {
    fn add_assign(&mut self, rhs: SymMatrix) {
        *self = *self + rhs;
    }
}

impl Sub for SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: SymMatrix) -> SymMatrix {
        self + (-rhs)
    }
}

impl Neg for SymMatrix {
    type Output = SymMatrix;
    fn neg(self) -> SymMatrix {
        self.scale(-1.0)
    }
}

impl Mul<SymMatrix> for f64 {
    type Output = SymMatrix;
    fn mul(self, rhs: SymMatrix) -> SymMatrix {
        rhs.scale(self)
    }
}

#[derive(Serialize, Deserialize)]
struct SymMatrixRepr {
    dim: usize,
    upper: Vec<f64>,
}

impl Serialize for SymMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SymMatrixRepr {
            dim: self.n,
            upper: self.packed().to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = SymMatrixRepr::deserialize(d)?;
        if !(1..=3).contains(&r.dim) || r.upper.len() != packed_len(r.dim) {
            return Err(serde::de::Error::custom(format!(
                "symmetric matrix needs dim in 1..=3 and dim(dim+1)/2 entries, got dim {} with {} entries",
                r.dim,
                r.upper.len()
            )));
        }
        Ok(SymMatrix::from_packed(r.dim, &r.upper))
    }
}
