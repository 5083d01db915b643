//! Dense reference transforms, the subsampled transform, and spectrum files.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use num_complex::Complex64;

use crate::error::{usage, Error, Result};
use crate::oracle::FunctionOracle;
use crate::qary::{dot_mod, enumerate, space_size, QIndex, RootOfUnity, ZqMatrix};

/// Relative magnitude below which `dense_forward` drops a coefficient.
pub const PRUNE_TOLERANCE: f64 = 1e-8;

/// A function on `Z_q^n` stored densely in rank order.
#[derive(Clone, Debug)]
pub struct DenseSignal {
    q: u32,
    n: usize,
    values: Vec<Complex64>,
}

impl DenseSignal {
    pub fn new(q: u32, n: usize, values: Vec<Complex64>) -> Result<Self> {
        let size = space_size(q, n)?;
        if values.len() as u64 != size {
            return usage(format!("dense signal needs {size} values, got {}", values.len()));
        }
        Ok(Self { q, n, values })
    }

    pub fn q(&self) -> u32 {
        self.q
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
    pub fn at(&self, m: &QIndex) -> Complex64 {
        self.values[m.rank() as usize]
    }
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Sparse map from frequency to coefficient. Exact zeros are never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSpectrum {
    q: u32,
    n: usize,
    entries: BTreeMap<QIndex, Complex64>,
}

impl SparseSpectrum {
    pub fn new(q: u32, n: usize) -> Self {
        Self { q, n, entries: BTreeMap::new() }
    }

    pub fn from_entries(
        q: u32,
        n: usize,
        entries: impl IntoIterator<Item = (QIndex, Complex64)>,
    ) -> Result<Self> {
        let mut s = Self::new(q, n);
        for (k, v) in entries {
            s.insert(k, v)?;
        }
        Ok(s)
    }

    pub fn q(&self) -> u32 {
        self.q
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn len(&self) -> usize {
        self.entries.len()
    }
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sets `F[k] = v`; a zero value removes the key.
    pub fn insert(&mut self, k: QIndex, v: Complex64) -> Result<()> {
        if k.q() != self.q || k.len() != self.n {
            return usage(format!("key {k:?} does not belong to Z_{}^{}", self.q, self.n));
        }
        if v.re == 0.0 && v.im == 0.0 {
            self.entries.remove(&k);
        } else {
            self.entries.insert(k, v);
        }
        Ok(())
    }

    pub fn get(&self, k: &QIndex) -> Complex64 {
        self.entries.get(k).copied().unwrap_or_default()
    }

    pub fn contains(&self, k: &QIndex) -> bool {
        self.entries.contains_key(k)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&QIndex, &Complex64)> {
        self.entries.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &QIndex> {
        self.entries.keys()
    }

    pub fn energy(&self) -> f64 {
        self.entries.values().map(|v| v.norm_sqr()).sum()
    }

    /// Same support, every coefficient within `tol`.
    pub fn matches(&self, other: &SparseSpectrum, tol: f64) -> bool {
        self.len() == other.len()
            && self
                .entries
                .iter()
                .all(|(k, v)| other.entries.get(k).is_some_and(|w| (v - w).norm() <= tol))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "q={} n={}", self.q, self.n)?;
        for (k, v) in &self.entries {
            writeln!(out, "{} {:.16e} {:.16e}", k.to_text(), v.re, v.im)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let table = read_value_table(input)?;
        let mut s = SparseSpectrum::new(table.q, table.n);
        for (k, v) in table.entries {
            s.insert(k, v)?;
        }
        Ok(s)
    }
}

/// Parsed contents of the shared `q=<q> n=<n>` / `<digits> <re> <im>` format.
#[derive(Clone, Debug)]
pub struct ValueTable {
    pub q: u32,
    pub n: usize,
    pub entries: Vec<(QIndex, Complex64)>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn parse_header(line_no: usize, line: &str) -> Result<(u32, usize)> {
    let mut q = None;
    let mut n = None;
    for field in line.split_whitespace() {
        match field.split_once('=') {
            Some(("q", v)) => q = v.parse::<u32>().ok(),
            Some(("n", v)) => n = v.parse::<usize>().ok(),
            _ => return Err(parse_err(line_no, format!("unexpected header field \"{field}\""))),
        }
    }
    match (q, n) {
        (Some(q), Some(n)) if q >= 2 => Ok((q, n)),
        _ => Err(parse_err(line_no, "header must be `q=<q> n=<n>` with q >= 2")),
    }
}

/// Reads a value table. Blank lines and `#` comments are skipped.
pub fn read_value_table<R: BufRead>(input: R) -> Result<ValueTable> {
    let mut header = None;
    let mut entries = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((q, n)) = header else {
            header = Some(parse_header(line_no, line)?);
            continue;
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [digits, re, im] = fields[..] else {
            return Err(parse_err(line_no, "expected `<digits> <re> <im>`"));
        };
        if digits.chars().count() != n {
            return Err(parse_err(line_no, format!("index \"{digits}\" does not have {n} digits")));
        }
        let k = QIndex::parse_text(q, digits).map_err(|e| parse_err(line_no, e.to_string()))?;
        let re: f64 = re.parse().map_err(|_| parse_err(line_no, format!("bad real part \"{re}\"")))?;
        let im: f64 = im.parse().map_err(|_| parse_err(line_no, format!("bad imaginary part \"{im}\"")))?;
        entries.push((k, Complex64::new(re, im)));
    }
    let (q, n) = header.ok_or_else(|| parse_err(0, "missing `q=<q> n=<n>` header"))?;
    Ok(ValueTable { q, n, entries })
}

/// In-place unnormalized transform over `Z_q^b` along every axis:
/// `X[j] = sum_l x[l] omega^{-<j,l>}`, with indices in rank order.
///
/// Runs `b` passes of `q`-point DFTs, `O(B b q)` multiply-adds in total.
pub fn radix_q_transform(values: &mut [Complex64], q: u32, b: usize, roots: &RootOfUnity) {
    let q = q as usize;
    debug_assert_eq!(values.len(), q.pow(b as u32));
    let total = values.len();
    let mut line = vec![Complex64::default(); q];
    let mut stride = 1usize;
    for _ in 0..b {
        let block = stride * q;
        for base in (0..total).step_by(block) {
            for offset in 0..stride {
                let start = base + offset;
                for (a, slot) in line.iter_mut().enumerate() {
                    *slot = values[start + a * stride];
                }
                for j in 0..q {
                    let mut acc = Complex64::default();
                    for (l, &x) in line.iter().enumerate() {
                        acc += x * roots.pow_neg((j * l) as u64);
                    }
                    values[start + j * stride] = acc;
                }
            }
        }
        stride = block;
    }
}

/// `F[k] = (1/N) sum_m f[m] omega^{-<m,k>}`, pruned relative to the peak.
pub fn dense_forward(f: &DenseSignal) -> SparseSpectrum {
    let roots = RootOfUnity::new(f.q);
    let mut values = f.values.clone();
    radix_q_transform(&mut values, f.q, f.n, &roots);
    let scale = 1.0 / values.len() as f64;
    let peak = values.iter().map(|v| v.norm()).fold(0.0, f64::max) * scale;
    let mut out = SparseSpectrum::new(f.q, f.n);
    for (k, v) in enumerate(f.q, f.n).expect("signal size already validated").zip(values) {
        let v = v * scale;
        if v.norm() >= PRUNE_TOLERANCE * peak && v.norm() > 0.0 {
            out.entries.insert(k, v);
        }
    }
    out
}

/// `f[m] = sum_{k in supp F} F[k] omega^{<m,k>}`.
pub fn dense_inverse(spectrum: &SparseSpectrum) -> Result<DenseSignal> {
    let (q, n) = (spectrum.q, spectrum.n);
    let roots = RootOfUnity::new(q);
    let terms: Vec<(&[u32], Complex64)> = spectrum.iter().map(|(k, v)| (k.digits(), *v)).collect();
    let values = enumerate(q, n)?
        .map(|m| {
            terms
                .iter()
                .map(|(k, v)| v * roots.pow(dot_mod(m.digits(), k, q) as u64))
                .sum()
        })
        .collect();
    DenseSignal::new(q, n, values)
}

/// The affine query set `{M l + d : l in Z_q^b}` in rank order of `l`.
pub fn affine_points(matrix: &ZqMatrix, offset: &QIndex) -> Vec<QIndex> {
    let q = matrix.q();
    let n = matrix.rows();
    let b = matrix.cols();
    let columns: Vec<Vec<u32>> = (0..b).map(|c| matrix.column(c)).collect();
    let count = (q as usize).pow(b as u32);
    let mut out = Vec::with_capacity(count);
    let mut ell = vec![0u32; b];
    let mut point: Vec<u32> = offset.digits().to_vec();
    for _ in 0..count {
        out.push(QIndex::from_reduced(q, point.iter().map(|&d| d as u64)));
        // increment l and update M l + d incrementally
        for i in 0..b {
            ell[i] += 1;
            for r in 0..n {
                point[r] = (point[r] + columns[i][r]) % q;
            }
            if ell[i] < q {
                break;
            }
            // wrapped: q copies of column i add up to zero mod q
            ell[i] = 0;
        }
    }
    out
}

/// Converts oracle samples `f[M l + d]` (rank order of `l`) into `U[j]`.
pub fn subsampled_from_samples(mut samples: Vec<Complex64>, q: u32, b: usize, roots: &RootOfUnity) -> Vec<Complex64> {
    radix_q_transform(&mut samples, q, b, roots);
    let scale = 1.0 / samples.len() as f64;
    for v in &mut samples {
        *v *= scale;
    }
    samples
}

/// `U[j] = (1/B) sum_l f[M l + d] omega^{-<j,l>}` for all `j in Z_q^b`.
pub fn subsample_transform(
    oracle: &dyn FunctionOracle,
    matrix: &ZqMatrix,
    offset: &QIndex,
) -> Result<Vec<Complex64>> {
    if matrix.q() != oracle.q() || matrix.rows() != oracle.n() {
        return usage("subsampling matrix does not match the oracle's domain");
    }
    if offset.q() != oracle.q() || offset.len() != oracle.n() {
        return usage("offset does not match the oracle's domain");
    }
    let points = affine_points(matrix, offset);
    let samples = oracle.query_batch(&points)?;
    let roots = RootOfUnity::new(matrix.q());
    Ok(subsampled_from_samples(samples, matrix.q(), matrix.cols(), &roots))
}

/// `||estimate - truth||^2 / ||truth||^2` over the union of supports.
pub fn nmse(estimate: &SparseSpectrum, truth: &SparseSpectrum) -> Result<f64> {
    let denom = truth.energy();
    if denom == 0.0 {
        return Err(Error::Domain("NMSE is undefined for an all-zero reference".into()));
    }
    let mut num: f64 = truth.iter().map(|(k, v)| (estimate.get(k) - v).norm_sqr()).sum();
    num += estimate
        .iter()
        .filter(|(k, _)| !truth.contains(k))
        .map(|(_, v)| v.norm_sqr())
        .sum::<f64>();
    Ok(num / denom)
}
