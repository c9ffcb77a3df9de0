//! Dense matrices over exact rationals.
//!
//! The algorithms here are deliberately pedestrian — Gauss–Jordan with
//! first-nonzero pivoting, canonical kernel bases, symplectic Gram–Schmidt —
//! because every downstream artifact (cutset matrices, kernel embeddings,
//! Darboux frames) must be *reproducible*: the same circuit always yields the
//! same matrices, entry for entry, so tests can pin them.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::{One, Signed, Zero};

use crate::rational::{rat_to_f64, Rat};

/// Dense row-major matrix of exact rationals.
#[derive(Clone, PartialEq, Eq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<Rat>,
}

impl core::fmt::Debug for Mat {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                write!(f, "{} ", crate::rational::fmt_rat(&self[(r, c)]))?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl core::ops::Index<(usize, usize)> for Mat {
    type Output = Rat;
    fn index(&self, (r, c): (usize, usize)) -> &Rat {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Rat {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![Rat::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Rat::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<Rat>>) -> Self {
        let nr = rows.len();
        let nc = rows.first().map_or(0, |r| r.len());
        assert!(
            rows.iter().all(|r| r.len() == nc),
            "ragged row lengths in Mat::from_rows"
        );
        Mat {
            rows: nr,
            cols: nc,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Rat) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = f(r, c);
            }
        }
        m
    }

    /// Builds an `n x 1` column vector.
    pub fn col_vec(entries: Vec<Rat>) -> Self {
        Mat {
            rows: entries.len(),
            cols: 1,
            data: entries,
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[Rat] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<Rat> {
        (0..self.rows).map(|r| self[(r, c)].clone()).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|x| x.is_zero())
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |r, c| self[(c, r)].clone())
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.cols, other.rows,
            "dimension mismatch in matrix product"
        );
        let mut out = Mat::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = &self[(r, k)];
                if a.is_zero() {
                    continue;
                }
                for c in 0..other.cols {
                    let b = &other[(k, c)];
                    if !b.is_zero() {
                        let prod = a * b;
                        out[(r, c)] += prod;
                    }
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[Rat]) -> Vec<Rat> {
        assert_eq!(self.cols, v.len(), "dimension mismatch in matrix-vector");
        (0..self.rows)
            .map(|r| {
                let mut acc = Rat::zero();
                for c in 0..self.cols {
                    if !self[(r, c)].is_zero() && !v[c].is_zero() {
                        acc += &self[(r, c)] * &v[c];
                    }
                }
                acc
            })
            .collect()
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert!(self.rows == other.rows && self.cols == other.cols);
        Mat::from_fn(self.rows, self.cols, |r, c| &self[(r, c)] + &other[(r, c)])
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert!(self.rows == other.rows && self.cols == other.cols);
        Mat::from_fn(self.rows, self.cols, |r, c| &self[(r, c)] - &other[(r, c)])
    }

    pub fn scale(&self, k: &Rat) -> Mat {
        Mat::from_fn(self.rows, self.cols, |r, c| &self[(r, c)] * k)
    }

    pub fn neg(&self) -> Mat {
        Mat::from_fn(self.rows, self.cols, |r, c| -self[(r, c)].clone())
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows);
        Mat::from_fn(self.rows, self.cols + other.cols, |r, c| {
            if c < self.cols {
                self[(r, c)].clone()
            } else {
                other[(r, c - self.cols)].clone()
            }
        })
    }

    /// Vertical concatenation.
    pub fn vstack(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols);
        Mat::from_fn(self.rows + other.rows, self.cols, |r, c| {
            if r < self.rows {
                self[(r, c)].clone()
            } else {
                other[(r - self.rows, c)].clone()
            }
        })
    }

    /// Block-diagonal concatenation.
    pub fn block_diag(&self, other: &Mat) -> Mat {
        Mat::from_fn(
            self.rows + other.rows,
            self.cols + other.cols,
            |r, c| {
                if r < self.rows && c < self.cols {
                    self[(r, c)].clone()
                } else if r >= self.rows && c >= self.cols {
                    other[(r - self.rows, c - self.cols)].clone()
                } else {
                    Rat::zero()
                }
            },
        )
    }

    /// Copies the listed columns, in the listed order.
    pub fn select_cols(&self, cols: &[usize]) -> Mat {
        Mat::from_fn(self.rows, cols.len(), |r, c| self[(r, cols[c])].clone())
    }

    pub fn select_rows(&self, rows: &[usize]) -> Mat {
        Mat::from_fn(rows.len(), self.cols, |r, c| self[(rows[r], c)].clone())
    }

    pub fn is_antisymmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows)
                .all(|r| (r..self.cols).all(|c| self[(r, c)] == -self[(c, r)].clone()))
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|r| (r..self.cols).all(|c| self[(r, c)] == self[(c, r)]))
    }

    pub fn to_f64(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(rat_to_f64).collect())
            .collect()
    }

    /// Reduced row echelon form with deterministic pivoting: columns are
    /// scanned left to right and the first row carrying a nonzero entry
    /// becomes the pivot. Returns the reduced matrix and pivot column list.
    pub fn rref(&self) -> (Mat, Vec<usize>) {
        let mut m = self.clone();
        let mut pivots = Vec::new();
        let mut pivot_row = 0usize;
        for col in 0..m.cols {
            if pivot_row == m.rows {
                break;
            }
            let Some(src) = (pivot_row..m.rows).find(|&r| !m[(r, col)].is_zero()) else {
                continue;
            };
            m.swap_rows(pivot_row, src);
            let inv = {
                let p = m[(pivot_row, col)].clone();
                p.recip()
            };
            for c in col..m.cols {
                let scaled = &m[(pivot_row, c)] * &inv;
                m[(pivot_row, c)] = scaled;
            }
            for r in 0..m.rows {
                if r == pivot_row || m[(r, col)].is_zero() {
                    continue;
                }
                let factor = m[(r, col)].clone();
                for c in col..m.cols {
                    let delta = &factor * &m[(pivot_row, c)];
                    m[(r, c)] -= delta;
                }
            }
            pivots.push(col);
            pivot_row += 1;
        }
        (m, pivots)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for c in 0..self.cols {
            self.data.swap(a * self.cols + c, b * self.cols + c);
        }
    }

    pub fn rank(&self) -> usize {
        self.rref().1.len()
    }

    /// Canonical null-space basis: from the RREF, each free variable is set
    /// to one in turn (in increasing column order) with the others zero, and
    /// the pivot variables are back-substituted. Returns a matrix whose
    /// columns are the basis vectors; zero columns mean a trivial kernel.
    pub fn kernel_basis(&self) -> Mat {
        self.kernel_basis_with_order(&(0..self.cols).collect::<Vec<_>>())
    }

    /// Null-space basis computed after a column re-ordering: the RREF walks
    /// `order` instead of natural column order, so earlier entries of `order`
    /// preferentially become pivot (dependent) variables and later entries
    /// become the free variables spanning the kernel. The returned vectors
    /// live in the *original* column indexing.
    pub fn kernel_basis_with_order(&self, order: &[usize]) -> Mat {
        self.kernel_with_free_vars(order).0
    }

    /// Same as [`Mat::kernel_basis_with_order`], additionally reporting the
    /// free (original) column index that defines each basis vector — the row
    /// where that vector carries its unit entry.
    pub fn kernel_with_free_vars(&self, order: &[usize]) -> (Mat, Vec<usize>) {
        assert_eq!(order.len(), self.cols, "order must permute all columns");
        let permuted = self.select_cols(order);
        let (rref, pivots) = permuted.rref();
        let pivot_set: Vec<bool> = {
            let mut s = vec![false; self.cols];
            for &p in &pivots {
                s[p] = true;
            }
            s
        };
        let free: Vec<usize> = (0..self.cols).filter(|&c| !pivot_set[c]).collect();
        let mut basis = Mat::zeros(self.cols, free.len());
        for (k, &f) in free.iter().enumerate() {
            basis[(order[f], k)] = Rat::one();
            for (r, &p) in pivots.iter().enumerate() {
                let coeff = -rref[(r, f)].clone();
                if !coeff.is_zero() {
                    basis[(order[p], k)] = coeff;
                }
            }
        }
        let free_original: Vec<usize> = free.iter().map(|&f| order[f]).collect();
        (basis, free_original)
    }

    /// Exact inverse; `None` when singular.
    pub fn inverse(&self) -> Option<Mat> {
        assert_eq!(self.rows, self.cols, "inverse of a non-square matrix");
        let n = self.rows;
        let aug = self.hstack(&Mat::identity(n));
        let (rref, pivots) = aug.rref();
        if pivots.len() != n || pivots.iter().enumerate().any(|(i, &p)| p != i) {
            return None;
        }
        Some(Mat::from_fn(n, n, |r, c| rref[(r, n + c)].clone()))
    }

    /// Solves `self * x = b` for square invertible `self`.
    pub fn solve(&self, b: &[Rat]) -> Option<Vec<Rat>> {
        let inv = self.inverse()?;
        Some(inv.mul_vec(b))
    }

    /// Span equality of the column spaces, decided exactly via ranks.
    pub fn col_span_eq(&self, other: &Mat) -> bool {
        if self.rows != other.rows {
            return false;
        }
        let ra = self.rank();
        let rb = other.rank();
        ra == rb && self.hstack(other).rank() == ra
    }

    /// Span equality of the row spaces.
    pub fn row_span_eq(&self, other: &Mat) -> bool {
        self.transpose().col_span_eq(&other.transpose())
    }

    /// Exact positive-semidefiniteness test for a symmetric matrix, by
    /// symmetric elimination: every pivot must be positive, and a zero
    /// diagonal entry must head an entirely zero row.
    pub fn is_psd(&self) -> bool {
        assert!(self.is_symmetric(), "PSD test requires a symmetric matrix");
        let mut m = self.clone();
        let n = m.rows;
        let mut active: Vec<usize> = (0..n).collect();
        while !active.is_empty() {
            // Zero-diagonal indices must carry a zero row among the active
            // block, otherwise some 2x2 principal minor is negative.
            let mut next_active = Vec::new();
            let mut pivot = None;
            for &i in &active {
                if m[(i, i)].is_positive() && pivot.is_none() {
                    pivot = Some(i);
                } else if m[(i, i)].is_negative() {
                    return false;
                }
            }
            let Some(p) = pivot else {
                // All active diagonal entries are zero: PSD iff the active
                // block is entirely zero.
                return active
                    .iter()
                    .all(|&i| active.iter().all(|&j| m[(i, j)].is_zero()));
            };
            let d = m[(p, p)].clone();
            for &i in &active {
                if i == p {
                    continue;
                }
                let f = &m[(i, p)] / &d;
                for &j in &active {
                    if j == p {
                        continue;
                    }
                    let delta = &f * &m[(p, j)];
                    m[(i, j)] -= delta;
                }
                next_active.push(i);
            }
            active = next_active;
        }
        true
    }
}

/// Result of bringing an antisymmetric form to canonical block shape.
pub struct DarbouxFrame {
    /// Change of basis: `s.transpose() * a * s` equals
    /// `[[0, I_p], [-I_p, 0]]` block-diag a zero block.
    pub s: Mat,
    /// Number of canonical pairs `p`.
    pub pairs: usize,
    /// Dimension of the residual zero block.
    pub zeros: usize,
}

/// Symplectic Gram–Schmidt on an antisymmetric matrix.
///
/// Deterministic variant: take the lowest-index basis vector whose row is not
/// yet annihilated, pair it with the lowest-index partner against which the
/// form is nonzero, normalize the partner so the pairing is one, and project
/// the pairing out of the remaining basis. Columns of `s` are ordered as all
/// pair "positions", then all "momenta", then the zero directions.
pub fn darboux_congruence(a: &Mat) -> DarbouxFrame {
    assert!(a.is_antisymmetric(), "Darboux requires an antisymmetric form");
    let n = a.nrows();
    let pairing = |u: &[Rat], v: &[Rat]| -> Rat {
        let av = a.mul_vec(v);
        u.iter()
            .zip(av.iter())
            .map(|(x, y)| x * y)
            .fold(Rat::zero(), |acc, t| acc + t)
    };
    let mut remaining: Vec<Vec<Rat>> = (0..n)
        .map(|i| {
            let mut e = vec![Rat::zero(); n];
            e[i] = Rat::one();
            e
        })
        .collect();
    let mut positions: Vec<Vec<Rat>> = Vec::new();
    let mut momenta: Vec<Vec<Rat>> = Vec::new();
    let mut zeros: Vec<Vec<Rat>> = Vec::new();
    while let Some(u) = remaining.first().cloned() {
        let partner = (1..remaining.len()).find(|&j| !pairing(&u, &remaining[j]).is_zero());
        let Some(j) = partner else {
            zeros.push(remaining.remove(0));
            continue;
        };
        let mut w = remaining.remove(j);
        remaining.remove(0);
        let norm = pairing(&u, &w).recip();
        for x in w.iter_mut() {
            *x *= &norm;
        }
        for v in remaining.iter_mut() {
            let cu = pairing(&u, v);
            let cw = pairing(&w, v);
            for k in 0..n {
                // v := v - a(u,v) w + a(w,v) u keeps v orthogonal to the pair.
                let delta = &cu * &w[k] - &cw * &u[k];
                v[k] -= delta;
            }
        }
        positions.push(u);
        momenta.push(w);
    }
    let pairs = positions.len();
    let zcount = zeros.len();
    let cols: Vec<Vec<Rat>> = positions.into_iter().chain(momenta).chain(zeros).collect();
    let s = Mat::from_fn(n, n, |r, c| cols[c][r].clone());
    DarbouxFrame {
        s,
        pairs,
        zeros: zcount,
    }
}

/// The canonical block `[[0, I_p], [-I_p, 0]]` padded with `z` zero rows/cols.
pub fn canonical_block(pairs: usize, zeros: usize) -> Mat {
    let n = 2 * pairs + zeros;
    let mut m = Mat::zeros(n, n);
    for i in 0..pairs {
        m[(i, pairs + i)] = Rat::one();
        m[(pairs + i, i)] = -Rat::one();
    }
    m
}
