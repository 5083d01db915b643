//! Arithmetic over `Z_q` and `Z_q^n`.
//!
//! Indices are digit vectors with digit `0` least significant when ranked,
//! so that ranking enumerates `Z_q^b` in the same order the subsampled
//! transform stores its bins. The text form prints the most significant
//! digit first, which makes a digit string read as the base-`q` numeral of
//! the rank.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;

use crate::error::{usage, Error, Result};

/// Largest alphabet with a single-character digit representation.
pub const MAX_TEXT_ALPHABET: u32 = 36;

/// Number of elements of `Z_q^n`, or an error if it does not fit in a `u64`.
pub fn space_size(q: u32, n: usize) -> Result<u64> {
    if q < 2 {
        return usage(format!("alphabet size must be at least 2, got {q}"));
    }
    let mut size: u64 = 1;
    for _ in 0..n {
        size = size.checked_mul(q as u64).ok_or_else(|| {
            Error::Resource(format!("q^n = {q}^{n} does not fit in 64 bits"))
        })?;
    }
    Ok(size)
}

/// An element of `Z_q^n`. Used both for function inputs and frequencies.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QIndex {
    q: u32,
    digits: Vec<u32>,
}

impl QIndex {
    pub fn new(q: u32, digits: Vec<u32>) -> Result<Self> {
        if q < 2 {
            return usage(format!("alphabet size must be at least 2, got {q}"));
        }
        if let Some(d) = digits.iter().find(|&&d| d >= q) {
            return usage(format!("digit {d} out of range for q = {q}"));
        }
        Ok(Self { q, digits })
    }

    /// Builds an index from arbitrary integers, reducing each mod `q`.
    pub fn from_reduced(q: u32, digits: impl IntoIterator<Item = u64>) -> Self {
        Self {
            q,
            digits: digits.into_iter().map(|d| (d % q as u64) as u32).collect(),
        }
    }

    pub fn zero(q: u32, n: usize) -> Self {
        Self { q, digits: vec![0; n] }
    }

    /// The `r`-th standard basis vector.
    pub fn unit(q: u32, n: usize, r: usize) -> Self {
        let mut digits = vec![0; n];
        digits[r] = 1 % q;
        Self { q, digits }
    }

    #[inline]
    pub fn q(&self) -> u32 {
        self.q
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.digits.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }

    #[inline]
    pub fn digits(&self) -> &[u32] {
        &self.digits
    }

    #[inline]
    pub fn digit(&self, i: usize) -> u32 {
        self.digits[i]
    }

    pub fn is_zero(&self) -> bool {
        self.digits.iter().all(|&d| d == 0)
    }

    /// Hamming weight.
    pub fn weight(&self) -> usize {
        self.digits.iter().filter(|&&d| d != 0).count()
    }

    /// Mixed-radix rank, least significant digit first.
    ///
    /// Callers must ensure `q^n` fits in a `u64` (see [`space_size`]).
    pub fn rank(&self) -> u64 {
        self.digits
            .iter()
            .rev()
            .fold(0u64, |acc, &d| acc.wrapping_mul(self.q as u64).wrapping_add(d as u64))
    }

    pub fn unrank(q: u32, n: usize, rank: u64) -> Result<Self> {
        let size = space_size(q, n)?;
        if rank >= size {
            return usage(format!("rank {rank} out of range for {q}^{n}"));
        }
        let mut digits = Vec::with_capacity(n);
        let mut r = rank;
        for _ in 0..n {
            digits.push((r % q as u64) as u32);
            r /= q as u64;
        }
        Ok(Self { q, digits })
    }

    fn check_compatible(&self, other: &QIndex) -> Result<()> {
        if self.q != other.q || self.len() != other.len() {
            return usage(format!(
                "index shape mismatch: (q={}, n={}) vs (q={}, n={})",
                self.q,
                self.len(),
                other.q,
                other.len()
            ));
        }
        Ok(())
    }

    /// Digitwise addition mod `q`.
    pub fn add(&self, other: &QIndex) -> Result<QIndex> {
        self.check_compatible(other)?;
        let q = self.q;
        let digits = self.digits.iter().zip(&other.digits).map(|(a, b)| (a + b) % q).collect();
        Ok(QIndex { q, digits })
    }

    /// Digitwise subtraction mod `q`.
    pub fn sub(&self, other: &QIndex) -> Result<QIndex> {
        self.check_compatible(other)?;
        let q = self.q;
        let digits = self.digits.iter().zip(&other.digits).map(|(a, b)| (a + q - b) % q).collect();
        Ok(QIndex { q, digits })
    }

    /// Text form: one character per digit, most significant (last) digit first.
    pub fn to_text(&self) -> String {
        debug_assert!(self.q <= MAX_TEXT_ALPHABET);
        self.digits
            .iter()
            .rev()
            .map(|&d| char::from_digit(d, MAX_TEXT_ALPHABET).unwrap_or('?'))
            .collect()
    }

    pub fn parse_text(q: u32, text: &str) -> Result<Self> {
        if q > MAX_TEXT_ALPHABET {
            return Err(Error::Unsupported(format!(
                "text form supports q <= {MAX_TEXT_ALPHABET}, got {q}"
            )));
        }
        let mut digits = Vec::with_capacity(text.len());
        for ch in text.chars().rev() {
            let d = ch
                .to_digit(MAX_TEXT_ALPHABET)
                .filter(|&d| d < q)
                .ok_or_else(|| Error::Usage(format!("invalid digit '{ch}' for q = {q} in \"{text}\"")))?;
            digits.push(d);
        }
        QIndex::new(q, digits)
    }
}

impl fmt::Debug for QIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "QIndex(q={}, {:?})", self.q, self.digits)
    }
}

impl fmt::Display for QIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.q <= MAX_TEXT_ALPHABET {
            f.write_str(&self.to_text())
        } else {
            write!(f, "{:?}", self.digits)
        }
    }
}

/// Iterates `Z_q^n` in rank order.
pub fn enumerate(q: u32, n: usize) -> Result<impl Iterator<Item = QIndex>> {
    let size = space_size(q, n)?;
    let mut current = QIndex::zero(q, n);
    let mut remaining = size;
    Ok(std::iter::from_fn(move || {
        if remaining == 0 {
            return None;
        }
        remaining -= 1;
        let out = current.clone();
        for d in current.digits.iter_mut() {
            *d += 1;
            if *d < q {
                break;
            }
            *d = 0;
        }
        Some(out)
    }))
}

/// `<x, y>` over `Z_q`.
pub fn inner_product(x: &QIndex, y: &QIndex) -> Result<u32> {
    x.check_compatible(y)?;
    Ok(dot_mod(x.digits(), y.digits(), x.q))
}

#[inline]
pub(crate) fn dot_mod(x: &[u32], y: &[u32], q: u32) -> u32 {
    let sum: u64 = x.iter().zip(y).map(|(&a, &b)| a as u64 * b as u64).sum();
    (sum % q as u64) as u32
}

/// Dense matrix over `Z_q`, row major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ZqMatrix {
    q: u32,
    rows: usize,
    cols: usize,
    data: Vec<u32>,
}

impl ZqMatrix {
    pub fn new(q: u32, rows: usize, cols: usize, data: Vec<u32>) -> Result<Self> {
        if q < 2 {
            return usage(format!("alphabet size must be at least 2, got {q}"));
        }
        if data.len() != rows * cols {
            return usage(format!("matrix data has {} entries, expected {rows}x{cols}", data.len()));
        }
        if let Some(v) = data.iter().find(|&&v| v >= q) {
            return usage(format!("matrix entry {v} out of range for q = {q}"));
        }
        Ok(Self { q, rows, cols, data })
    }

    pub fn zeros(q: u32, rows: usize, cols: usize) -> Self {
        Self { q, rows, cols, data: vec![0; rows * cols] }
    }

    pub fn identity(q: u32, n: usize) -> Self {
        let mut m = Self::zeros(q, n, n);
        for i in 0..n {
            m.data[i * n + i] = 1;
        }
        m
    }

    /// Builds a matrix whose rows are the given indices.
    pub fn from_rows(q: u32, cols: usize, rows: &[QIndex]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.q() != q || r.len() != cols {
                return usage("row shape does not match matrix");
            }
            data.extend_from_slice(r.digits());
        }
        Self::new(q, rows.len(), cols, data)
    }

    #[inline]
    pub fn q(&self) -> u32 {
        self.q
    }
    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }
    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u32 {
        self.data[r * self.cols + c]
    }
    pub fn set(&mut self, r: usize, c: usize, v: u32) {
        self.data[r * self.cols + c] = v % self.q;
    }
    #[inline]
    pub fn row(&self, r: usize) -> &[u32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
    pub fn column(&self, c: usize) -> Vec<u32> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> ZqMatrix {
        let mut t = ZqMatrix::zeros(self.q, self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.get(r, c);
            }
        }
        t
    }

    /// `M x` over `Z_q` on raw digit slices.
    pub(crate) fn apply(&self, x: &[u32]) -> Vec<u32> {
        (0..self.rows).map(|r| dot_mod(self.row(r), x, self.q)).collect()
    }

    /// `M^T x` over `Z_q` on raw digit slices.
    pub(crate) fn apply_transpose(&self, x: &[u32]) -> Vec<u32> {
        let q = self.q as u64;
        let mut acc = vec![0u64; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0 {
                continue;
            }
            for (a, &m) in acc.iter_mut().zip(self.row(r)) {
                *a += m as u64 * xr as u64;
            }
        }
        acc.into_iter().map(|a| (a % q) as u32).collect()
    }

    /// `M^T x` as an index of length `cols`.
    pub fn transpose_mul(&self, x: &QIndex) -> Result<QIndex> {
        if x.q() != self.q || x.len() != self.rows {
            return usage(format!(
                "cannot apply transpose of {}x{} matrix to length-{} index",
                self.rows,
                self.cols,
                x.len()
            ));
        }
        Ok(QIndex { q: self.q, digits: self.apply_transpose(x.digits()) })
    }

    /// Rows rendered as digit strings, first column leftmost.
    pub fn to_row_strings(&self) -> Vec<String> {
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .map(|&d| char::from_digit(d, MAX_TEXT_ALPHABET).unwrap_or('?'))
                    .collect()
            })
            .collect()
    }

    pub fn from_row_strings(q: u32, cols: usize, rows: &[String]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let before = data.len();
            for ch in row.chars() {
                let d = ch
                    .to_digit(MAX_TEXT_ALPHABET)
                    .filter(|&d| d < q)
                    .ok_or_else(|| Error::Usage(format!("invalid matrix digit '{ch}' for q = {q}")))?;
                data.push(d);
            }
            if data.len() - before != cols {
                return usage(format!("matrix row \"{row}\" has wrong width, expected {cols}"));
            }
        }
        Self::new(q, rows.len(), cols, data)
    }
}

/// `M x` over `Z_q`.
pub fn mat_vec(m: &ZqMatrix, x: &QIndex) -> Result<QIndex> {
    if x.q() != m.q() || x.len() != m.cols() {
        return usage(format!(
            "cannot apply {}x{} matrix to length-{} index",
            m.rows(),
            m.cols(),
            x.len()
        ));
    }
    Ok(QIndex { q: m.q(), digits: m.apply(x.digits()) })
}

/// Precomputed powers of `omega = exp(2 pi i / q)`.
#[derive(Clone, Debug)]
pub struct RootOfUnity {
    q: u32,
    powers: Vec<Complex64>,
}

impl RootOfUnity {
    pub fn new(q: u32) -> Self {
        let powers = (0..q)
            .map(|a| Complex64::from_polar(1.0, 2.0 * PI * a as f64 / q as f64))
            .collect();
        Self { q, powers }
    }

    #[inline]
    pub fn q(&self) -> u32 {
        self.q
    }

    /// `omega^a`, with `a` taken mod `q`.
    #[inline]
    pub fn pow(&self, a: u64) -> Complex64 {
        self.powers[(a % self.q as u64) as usize]
    }

    /// `omega^{-a}`.
    #[inline]
    pub fn pow_neg(&self, a: u64) -> Complex64 {
        let q = self.q as u64;
        self.powers[((q - a % q) % q) as usize]
    }
}

/// Quantizes the phase of `z` to the nearest `q`-th root of unity sector.
///
/// Returns `floor(q / (2 pi) * arg(z e^{i pi / q}))` reduced into `[0, q)`.
/// Boundary phases follow the floor.
pub fn arg_q(z: Complex64, q: u32) -> Result<u32> {
    if z.re == 0.0 && z.im == 0.0 {
        return Err(Error::Domain("phase of zero is undefined".into()));
    }
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::Domain(format!("phase of non-finite value {z}")));
    }
    let qf = q as f64;
    let rotated = z * Complex64::from_polar(1.0, PI / qf);
    let sector = (qf / (2.0 * PI) * rotated.arg()).floor() as i64;
    Ok(sector.rem_euclid(q as i64) as u32)
}
