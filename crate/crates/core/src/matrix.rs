//! Dense complex matrices, 2x2 blocks, and the normalized error metric.
//!
//! Matrices are stored row-major in double precision. Sizes in this library
//! are modest (N up to a few hundred), so the implementations favor clarity
//! over blocked or vectorized kernels. The one performance-relevant access
//! pattern, applying a 2x2 block to a pair of adjacent rows or columns, has
//! dedicated in-place methods.

use num_complex::Complex64;

use crate::{MeshError, Result};

pub type C64 = Complex64;

/// A 2x2 complex block in row-major order: `b[row][col]`.
pub type Block2 = [[C64; 2]; 2];

pub fn block_identity() -> Block2 {
    [
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
    ]
}

pub fn block_mul(a: &Block2, b: &Block2) -> Block2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

pub fn block_dagger(b: &Block2) -> Block2 {
    [
        [b[0][0].conj(), b[1][0].conj()],
        [b[0][1].conj(), b[1][1].conj()],
    ]
}

/// Frobenius norm of the entrywise difference of two 2x2 blocks.
pub fn block_diff_norm(a: &Block2, b: &Block2) -> f64 {
    let mut s = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            s += (a[r][c] - b[r][c]).norm_sqr();
        }
    }
    s.sqrt()
}

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMat {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = ComplexMat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, C64::new(1.0, 0.0));
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = ComplexMat::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.set(r, c, f(r, c));
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> C64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: C64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn column(&self, c: usize) -> Vec<C64> {
        (0..self.rows).map(|r| self.at(r, c)).collect()
    }

    pub fn row(&self, r: usize) -> Vec<C64> {
        self.data[r * self.cols..(r + 1) * self.cols].to_vec()
    }

    pub fn mul(&self, rhs: &ComplexMat) -> ComplexMat {
        assert_eq!(
            self.cols, rhs.rows,
            "matrix product dimension mismatch: {}x{} * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = ComplexMat::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(r, k);
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                for c in 0..rhs.cols {
                    let v = out.at(r, c) + a * rhs.at(k, c);
                    out.set(r, c, v);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len(), "matrix-vector dimension mismatch");
        let mut out = vec![C64::new(0.0, 0.0); self.rows];
        for r in 0..self.rows {
            let mut acc = C64::new(0.0, 0.0);
            for c in 0..self.cols {
                acc += self.at(r, c) * v[c];
            }
            out[r] = acc;
        }
        out
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> ComplexMat {
        ComplexMat::from_fn(self.cols, self.rows, |r, c| self.at(c, r).conj())
    }

    pub fn sub(&self, rhs: &ComplexMat) -> ComplexMat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(rhs.data.iter()) {
            *a -= b;
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `‖M†M − I‖_F` for a square matrix.
    pub fn unitarity_residual(&self) -> f64 {
        assert_eq!(self.rows, self.cols, "unitarity check needs a square matrix");
        let mut acc = 0.0;
        for i in 0..self.cols {
            for j in 0..self.cols {
                let mut g = C64::new(0.0, 0.0);
                for r in 0..self.rows {
                    g += self.at(r, i).conj() * self.at(r, j);
                }
                if i == j {
                    g -= 1.0;
                }
                acc += g.norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// Checks `‖M†M − I‖_F < tol`, returning a descriptive error otherwise.
    pub fn require_unitary(&self, tol: f64) -> Result<()> {
        let residual = self.unitarity_residual();
        if residual < tol {
            Ok(())
        } else {
            Err(MeshError::NotUnitary {
                residual,
                tolerance: tol,
            })
        }
    }

    /// In-place `self <- embed(b) * self`: mixes rows `top` and `top+1`.
    pub fn left_apply_block(&mut self, top: usize, b: &Block2) {
        debug_assert!(top + 1 < self.rows);
        let n = self.cols;
        for c in 0..n {
            let x = self.data[top * n + c];
            let y = self.data[(top + 1) * n + c];
            self.data[top * n + c] = b[0][0] * x + b[0][1] * y;
            self.data[(top + 1) * n + c] = b[1][0] * x + b[1][1] * y;
        }
    }

    /// In-place `self <- self * embed(b)`: mixes columns `top` and `top+1`.
    pub fn right_apply_block(&mut self, top: usize, b: &Block2) {
        debug_assert!(top + 1 < self.cols);
        let n = self.cols;
        for r in 0..self.rows {
            let x = self.data[r * n + top];
            let y = self.data[r * n + top + 1];
            self.data[r * n + top] = x * b[0][0] + y * b[1][0];
            self.data[r * n + top + 1] = x * b[0][1] + y * b[1][1];
        }
    }

    pub fn scale_row(&mut self, r: usize, factor: C64) {
        let n = self.cols;
        for c in 0..n {
            self.data[r * n + c] *= factor;
        }
    }

    pub fn scale_col(&mut self, c: usize, factor: C64) {
        for r in 0..self.rows {
            self.data[r * self.cols + c] *= factor;
        }
    }
}

/// Embeds a 2x2 block into an N x N identity at rows/cols `(top_wire, top_wire + 1)`.
pub fn embed_block(n: usize, top_wire: usize, b: &ComplexMat) -> Result<ComplexMat> {
    if b.rows() != 2 || b.cols() != 2 {
        return Err(MeshError::DimensionMismatch(format!(
            "embed_block expects a 2x2 block, got {}x{}",
            b.rows(),
            b.cols()
        )));
    }
    if top_wire + 1 >= n {
        return Err(MeshError::InvalidParameter(format!(
            "top_wire {} out of range for size {}",
            top_wire, n
        )));
    }
    let mut m = ComplexMat::identity(n);
    m.set(top_wire, top_wire, b.at(0, 0));
    m.set(top_wire, top_wire + 1, b.at(0, 1));
    m.set(top_wire + 1, top_wire, b.at(1, 0));
    m.set(top_wire + 1, top_wire + 1, b.at(1, 1));
    Ok(m)
}

/// Normalized distance `‖U − Û‖_F / √N` between two same-sized square matrices.
///
/// For unitary arguments the value lies in [0, 2].
pub fn matrix_error(u: &ComplexMat, uhat: &ComplexMat) -> Result<f64> {
    if u.rows() != uhat.rows() || u.cols() != uhat.cols() || u.rows() != u.cols() {
        return Err(MeshError::DimensionMismatch(format!(
            "matrix_error expects equal square matrices, got {}x{} and {}x{}",
            u.rows(),
            u.cols(),
            uhat.rows(),
            uhat.cols()
        )));
    }
    Ok(u.sub(uhat).frobenius_norm() / (u.rows() as f64).sqrt())
}

/// Serializes a square matrix: first line is N, then one line per row holding
/// 2N comma-separated floats alternating real,imag, with enough digits for an
/// exact f64 round trip.
pub fn matrix_to_string(m: &ComplexMat) -> String {
    assert_eq!(m.rows(), m.cols(), "matrix file format is square-only");
    let n = m.rows();
    let mut out = String::new();
    out.push_str(&format!("{}\n", n));
    for r in 0..n {
        let mut fields = Vec::with_capacity(2 * n);
        for c in 0..n {
            let z = m.at(r, c);
            fields.push(format!("{:.17e}", z.re));
            fields.push(format!("{:.17e}", z.im));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_str(s: &str) -> Result<ComplexMat> {
    let mut lines = s.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| MeshError::Parse("empty matrix file".into()))?;
    let n: usize = header
        .trim()
        .parse()
        .map_err(|e| MeshError::Parse(format!("bad size line {:?}: {}", header, e)))?;
    let mut m = ComplexMat::zeros(n, n);
    for r in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| MeshError::Parse(format!("missing row {} of {}", r + 1, n)))?;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 * n {
            return Err(MeshError::Parse(format!(
                "row {} has {} fields, expected {}",
                r + 1,
                fields.len(),
                2 * n
            )));
        }
        for c in 0..n {
            let re: f64 = fields[2 * c]
                .parse()
                .map_err(|e| MeshError::Parse(format!("row {} col {}: {}", r + 1, c + 1, e)))?;
            let im: f64 = fields[2 * c + 1]
                .parse()
                .map_err(|e| MeshError::Parse(format!("row {} col {}: {}", r + 1, c + 1, e)))?;
            m.set(r, c, C64::new(re, im));
        }
    }
    Ok(m)
}

pub fn write_matrix(path: &std::path::Path, m: &ComplexMat) -> Result<()> {
    std::fs::write(path, matrix_to_string(m))?;
    Ok(())
}

pub fn read_matrix(path: &std::path::Path) -> Result<ComplexMat> {
    let s = std::fs::read_to_string(path)?;
    matrix_from_str(&s)
}
