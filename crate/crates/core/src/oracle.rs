//! Query boundary: function oracles with noise injection, caching and
//! sample accounting.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{usage, Error, Result};
use crate::qary::{dot_mod, space_size, QIndex, RootOfUnity};
use crate::spectral::{read_value_table, SparseSpectrum};

/// Raw and distinct query counts seen by an oracle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueryCounters {
    pub raw: u64,
    pub unique: u64,
}

/// Black-box access to `f: Z_q^n -> C`.
///
/// Implementations must tolerate concurrent calls.
pub trait FunctionOracle: Send + Sync {
    fn q(&self) -> u32;
    fn n(&self) -> usize;

    /// Evaluates `f` at every point, preserving order.
    fn query_batch(&self, points: &[QIndex]) -> Result<Vec<Complex64>>;

    fn query(&self, m: &QIndex) -> Result<Complex64> {
        Ok(self.query_batch(std::slice::from_ref(m))?[0])
    }

    fn counters(&self) -> QueryCounters;

    /// Fails early if some point can never be answered.
    fn check_coverage(&self, _points: &[QIndex]) -> Result<()> {
        Ok(())
    }
}

fn check_point(q: u32, n: usize, m: &QIndex) -> Result<()> {
    if m.q() != q || m.len() != n {
        return usage(format!("query {m:?} is outside Z_{q}^{n}"));
    }
    Ok(())
}

/// One `CN(0, sigma2)` draw keyed by `(seed, rank, occurrence)`.
///
/// Keying on the index rather than on call order keeps draws identical
/// under any scheduling of concurrent queries.
pub fn keyed_noise(seed: u64, rank: u64, occurrence: u64, sigma2: f64) -> Complex64 {
    if sigma2 == 0.0 {
        return Complex64::default();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rank);
    rng.set_word_pos((occurrence as u128) << 24);
    let scale = (sigma2 / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(&mut rng);
    let im: f64 = StandardNormal.sample(&mut rng);
    Complex64::new(re * scale, im * scale)
}

#[derive(Default)]
struct NoiseBook {
    cache: HashMap<u64, Complex64>,
    draws: HashMap<u64, u64>,
}

/// Evaluates `f[m] = sum_k F[k] omega^{<m,k>}` lazily from a sparse
/// spectrum, adding keyed complex Gaussian noise.
///
/// Memory is `O(S + unique queries)`; the dense signal is never formed.
pub struct SpectrumOracle {
    q: u32,
    n: usize,
    terms: Vec<(Vec<u32>, Complex64)>,
    roots: RootOfUnity,
    sigma2: f64,
    noise_seed: u64,
    caching: bool,
    book: Mutex<NoiseBook>,
    raw: AtomicU64,
}

impl SpectrumOracle {
    pub fn new(spectrum: &SparseSpectrum, sigma2: f64, noise_seed: u64, caching: bool) -> Result<Self> {
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return usage(format!("noise variance must be finite and non-negative, got {sigma2}"));
        }
        space_size(spectrum.q(), spectrum.n())?;
        Ok(Self {
            q: spectrum.q(),
            n: spectrum.n(),
            terms: spectrum.iter().map(|(k, v)| (k.digits().to_vec(), *v)).collect(),
            roots: RootOfUnity::new(spectrum.q()),
            sigma2,
            noise_seed,
            caching,
            book: Mutex::new(NoiseBook::default()),
            raw: AtomicU64::new(0),
        })
    }

    pub fn noiseless(spectrum: SparseSpectrum) -> Self {
        Self::new(&spectrum, 0.0, 0, true).expect("noiseless oracle is always valid")
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn caching(&self) -> bool {
        self.caching
    }

    /// Noise-free value of `f` at `m`.
    pub fn clean_value(&self, m: &[u32]) -> Complex64 {
        self.terms
            .iter()
            .map(|(k, v)| v * self.roots.pow(dot_mod(m, k, self.q) as u64))
            .sum()
    }
}

impl FunctionOracle for SpectrumOracle {
    fn q(&self) -> u32 {
        self.q
    }
    fn n(&self) -> usize {
        self.n
    }

    fn query_batch(&self, points: &[QIndex]) -> Result<Vec<Complex64>> {
        for m in points {
            check_point(self.q, self.n, m)?;
        }
        self.raw.fetch_add(points.len() as u64, Ordering::Relaxed);

        // Assign occurrence numbers in batch order under the lock, evaluate
        // outside it.
        let mut out = vec![None; points.len()];
        let mut pending: Vec<(usize, u64, u64)> = Vec::new();
        {
            let mut book = self.book.lock().expect("oracle lock poisoned");
            let mut first_in_batch: HashMap<u64, usize> = HashMap::new();
            for (i, m) in points.iter().enumerate() {
                let rank = m.rank();
                if self.caching {
                    if let Some(v) = book.cache.get(&rank) {
                        out[i] = Some(*v);
                        continue;
                    }
                    if first_in_batch.contains_key(&rank) {
                        continue;
                    }
                    first_in_batch.insert(rank, i);
                }
                let count = book.draws.entry(rank).or_insert(0);
                pending.push((i, rank, *count));
                *count += 1;
            }
        }

        let evaluated: Vec<(usize, u64, Complex64)> = pending
            .par_iter()
            .map(|&(i, rank, occ)| {
                let v = self.clean_value(points[i].digits())
                    + keyed_noise(self.noise_seed, rank, occ, self.sigma2);
                (i, rank, v)
            })
            .collect();

        let mut book = self.book.lock().expect("oracle lock poisoned");
        for &(i, rank, v) in &evaluated {
            out[i] = Some(v);
            if self.caching {
                book.cache.insert(rank, v);
            }
        }
        drop(book);
        if self.caching {
            // duplicates inside this batch
            let book = self.book.lock().expect("oracle lock poisoned");
            for (i, slot) in out.iter_mut().enumerate() {
                if slot.is_none() {
                    *slot = book.cache.get(&points[i].rank()).copied();
                }
            }
        }
        out.into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| Error::Invariant(format!("no value produced for query {i}"))))
            .collect()
    }

    fn counters(&self) -> QueryCounters {
        let book = self.book.lock().expect("oracle lock poisoned");
        QueryCounters { raw: self.raw.load(Ordering::Relaxed), unique: book.draws.len() as u64 }
    }
}

/// Pure lookup into a file of precomputed samples.
pub struct TableOracle {
    q: u32,
    n: usize,
    values: HashMap<u64, Complex64>,
    raw: AtomicU64,
    seen: Mutex<std::collections::HashSet<u64>>,
}

impl TableOracle {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn from_reader<R: BufRead>(input: R) -> Result<Self> {
        let table = read_value_table(input)?;
        space_size(table.q, table.n)?;
        let mut values = HashMap::with_capacity(table.entries.len());
        for (k, v) in table.entries {
            if values.insert(k.rank(), v).is_some() {
                return usage(format!("sample table lists index {k} more than once"));
            }
        }
        Ok(Self {
            q: table.q,
            n: table.n,
            values,
            raw: AtomicU64::new(0),
            seen: Mutex::new(Default::default()),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn missing(m: &QIndex) -> Error {
    Error::Oracle { index: m.to_string(), message: "index not present in sample table".into() }
}

impl FunctionOracle for TableOracle {
    fn q(&self) -> u32 {
        self.q
    }
    fn n(&self) -> usize {
        self.n
    }

    fn query_batch(&self, points: &[QIndex]) -> Result<Vec<Complex64>> {
        let mut out = Vec::with_capacity(points.len());
        let mut seen = self.seen.lock().expect("oracle lock poisoned");
        for m in points {
            check_point(self.q, self.n, m)?;
            let rank = m.rank();
            out.push(*self.values.get(&rank).ok_or_else(|| missing(m))?);
            seen.insert(rank);
        }
        self.raw.fetch_add(points.len() as u64, Ordering::Relaxed);
        Ok(out)
    }

    fn counters(&self) -> QueryCounters {
        QueryCounters {
            raw: self.raw.load(Ordering::Relaxed),
            unique: self.seen.lock().expect("oracle lock poisoned").len() as u64,
        }
    }

    fn check_coverage(&self, points: &[QIndex]) -> Result<()> {
        for m in points {
            check_point(self.q, self.n, m)?;
            if !self.values.contains_key(&m.rank()) {
                return Err(missing(m));
            }
        }
        Ok(())
    }
}

/// Indices passed to one subprocess invocation.
pub const SUBPROCESS_BATCH: usize = 1024;

/// Runs an external evaluator: `argv = [cmd, args..., digits...]`, one
/// `<re> <im>` (or bare `<re>`) line per index on stdout.
pub struct SubprocessOracle {
    q: u32,
    n: usize,
    program: String,
    args: Vec<String>,
    cache: Mutex<HashMap<u64, Complex64>>,
    raw: AtomicU64,
}

impl SubprocessOracle {
    pub fn new(q: u32, n: usize, template: &str) -> Result<Self> {
        let mut parts = template.split_whitespace().map(str::to_owned);
        let program = parts.next().ok_or_else(|| Error::Usage("empty oracle command".into()))?;
        space_size(q, n)?;
        Ok(Self {
            q,
            n,
            program,
            args: parts.collect(),
            cache: Mutex::new(HashMap::new()),
            raw: AtomicU64::new(0),
        })
    }

    fn run_chunk(&self, chunk: &[&QIndex]) -> Result<Vec<Complex64>> {
        let fail = |m: &QIndex, message: String| Error::Oracle { index: m.to_string(), message };
        let output = Command::new(&self.program)
            .args(&self.args)
            .args(chunk.iter().map(|m| m.to_text()))
            .output()
            .map_err(|e| fail(chunk[0], format!("failed to launch `{}`: {e}", self.program)))?;
        if !output.status.success() {
            return Err(fail(chunk[0], format!("`{}` exited with {}", self.program, output.status)));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        let lines: Vec<&str> = stdout.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != chunk.len() {
            let at = chunk[lines.len().min(chunk.len() - 1)];
            return Err(fail(
                at,
                format!("expected {} output lines, got {}", chunk.len(), lines.len()),
            ));
        }
        chunk
            .iter()
            .zip(lines)
            .map(|(m, line)| parse_complex(line).ok_or_else(|| fail(m, format!("unparseable output \"{line}\""))))
            .collect()
    }
}

fn parse_complex(line: &str) -> Option<Complex64> {
    let mut fields = line.split_whitespace();
    let re: f64 = fields.next()?.parse().ok()?;
    let im: f64 = match fields.next() {
        Some(f) => f.parse().ok()?,
        None => 0.0,
    };
    if fields.next().is_some() {
        return None;
    }
    Some(Complex64::new(re, im))
}

impl FunctionOracle for SubprocessOracle {
    fn q(&self) -> u32 {
        self.q
    }
    fn n(&self) -> usize {
        self.n
    }

    fn query_batch(&self, points: &[QIndex]) -> Result<Vec<Complex64>> {
        for m in points {
            check_point(self.q, self.n, m)?;
        }
        self.raw.fetch_add(points.len() as u64, Ordering::Relaxed);
        let todo: Vec<&QIndex> = {
            let cache = self.cache.lock().expect("oracle lock poisoned");
            let mut fresh = std::collections::HashSet::new();
            points
                .iter()
                .filter(|m| !cache.contains_key(&m.rank()) && fresh.insert(m.rank()))
                .collect()
        };
        let results: Vec<Vec<Complex64>> = todo
            .par_chunks(SUBPROCESS_BATCH)
            .map(|chunk| self.run_chunk(chunk))
            .collect::<Result<_>>()?;
        let mut cache = self.cache.lock().expect("oracle lock poisoned");
        for (m, v) in todo.iter().zip(results.into_iter().flatten()) {
            cache.insert(m.rank(), v);
        }
        Ok(points.iter().map(|m| cache[&m.rank()]).collect())
    }

    fn counters(&self) -> QueryCounters {
        QueryCounters {
            raw: self.raw.load(Ordering::Relaxed),
            unique: self.cache.lock().expect("oracle lock poisoned").len() as u64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_sparse() -> (QIndex, Complex64, SparseSpectrum) {
        let k = QIndex::new(3, vec![2, 0, 1]).unwrap();
        let v = Complex64::new(0.3, -1.2);
        let s = SparseSpectrum::from_entries(3, 3, [(k.clone(), v)]).unwrap();
        (k, v, s)
    }

    #[test]
    fn noiseless_oracle_is_exact_character() {
        let (k, v, s) = one_sparse();
        let oracle = SpectrumOracle::noiseless(s);
        let w = RootOfUnity::new(3);
        for m in crate::qary::enumerate(3, 3).unwrap() {
            let expected = v * w.pow(crate::qary::inner_product(&m, &k).unwrap() as u64);
            assert!((oracle.query(&m).unwrap() - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn caching_controls_noise_freshness() {
        let (_, _, s) = one_sparse();
        let m = QIndex::new(3, vec![1, 1, 1]).unwrap();
        let cached = SpectrumOracle::new(&s, 0.5, 7, true).unwrap();
        let a = cached.query_batch(&[m.clone(), m.clone()]).unwrap();
        let b = cached.query(&m).unwrap();
        assert_eq!(a[0], a[1]);
        assert_eq!(a[0], b);
        assert_eq!(cached.counters(), QueryCounters { raw: 3, unique: 1 });

        let fresh = SpectrumOracle::new(&s, 0.5, 7, false).unwrap();
        let c = fresh.query_batch(&[m.clone(), m.clone()]).unwrap();
        assert_ne!(c[0], c[1]);
        // first draw matches the cached oracle's single draw
        assert_eq!(c[0], a[0]);
        assert_eq!(fresh.counters(), QueryCounters { raw: 2, unique: 1 });

        // determinism across instances
        let again = SpectrumOracle::new(&s, 0.5, 7, false).unwrap();
        assert_eq!(again.query_batch(&[m.clone(), m]).unwrap(), c);
    }

    #[test]
    fn noise_has_requested_variance() {
        let sigma2 = 2.0;
        let draws: Vec<_> = (0..20_000u64).map(|r| keyed_noise(3, r, 0, sigma2)).collect();
        let mean_sq = draws.iter().map(|z| z.norm_sqr()).sum::<f64>() / draws.len() as f64;
        let re_sq = draws.iter().map(|z| z.re * z.re).sum::<f64>() / draws.len() as f64;
        assert!((mean_sq - sigma2).abs() < 0.05 * sigma2, "{mean_sq}");
        assert!((re_sq - sigma2 / 2.0).abs() < 0.05 * sigma2, "{re_sq}");
    }

    #[test]
    fn table_oracle_lookup_and_errors() {
        let text = "q=2 n=2\n00 1 0\n01 0 1\n";
        let t = TableOracle::from_reader(text.as_bytes()).unwrap();
        let x = QIndex::parse_text(2, "01").unwrap();
        assert_eq!(t.query(&x).unwrap(), Complex64::new(0.0, 1.0));
        let y = QIndex::parse_text(2, "11").unwrap();
        match t.query(&y) {
            Err(Error::Oracle { index, .. }) => assert_eq!(index, "11"),
            other => panic!("expected oracle error, got {other:?}"),
        }
        assert!(t.check_coverage(&[x, y]).is_err());
        assert!(TableOracle::from_reader("q=2 n=2\n00 1 0\n00 1 0\n".as_bytes()).is_err());
    }

    #[test]
    fn parse_complex_forms() {
        assert_eq!(parse_complex("1.5 -2"), Some(Complex64::new(1.5, -2.0)));
        assert_eq!(parse_complex("0"), Some(Complex64::new(0.0, 0.0)));
        assert_eq!(parse_complex("a b"), None);
        assert_eq!(parse_complex("1 2 3"), None);
    }
}
