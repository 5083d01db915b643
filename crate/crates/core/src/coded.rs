//! Offsets from the parity-check matrix of a shortened subfield subcode of
//! a Reed-Solomon code, so that low-weight frequencies can be read back
//! from their syndromes.
//!
//! Over `F_{q^c}` with `c = ceil(log_q n)`, pick `n` distinct evaluation
//! points `alpha_i` and form the `2t x n` Vandermonde matrix
//! `[alpha_i^r]`, `r = 0..2t`. Any `2t` of its columns are independent, so
//! every nonzero vector of weight at most `2t` has a nonzero syndrome.
//! Restricting to vectors over `F_q` and expanding each extension-field row
//! over the polynomial basis gives a `2tc x n` matrix over `F_q` with the
//! same kernel on `F_q^n`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::qary::{space_size, QIndex, ZqMatrix};

/// Upper bound on the syndrome table size.
pub const MAX_TABLE_ENTRIES: u64 = 5_000_000;

pub fn is_prime(q: u32) -> bool {
    q >= 2 && (2..).take_while(|d| d * d <= q).all(|d| q % d != 0)
}

/// Smallest `c` with `q^c >= n`.
pub fn extension_degree(q: u32, n: usize) -> usize {
    let mut c = 0;
    let mut size = 1u64;
    while size < n as u64 {
        size *= q as u64;
        c += 1;
    }
    c
}

/// Arithmetic in `F_q[x] / (modulus)`, elements as coefficient vectors
/// of length `degree`, constant term first.
#[derive(Clone, Debug)]
pub struct ExtensionField {
    q: u32,
    modulus: Vec<u32>,
}

impl ExtensionField {
    /// Uses the lexicographically smallest monic irreducible of degree `c`.
    pub fn new(q: u32, c: usize) -> Self {
        Self { q, modulus: smallest_irreducible(q, c) }
    }

    pub fn with_modulus(q: u32, modulus: Vec<u32>) -> Result<Self> {
        if modulus.last() != Some(&1) || modulus.iter().any(|&d| d >= q) || !is_irreducible(&modulus, q) {
            return Err(Error::Construction(format!("{modulus:?} is not a monic irreducible over F_{q}")));
        }
        Ok(Self { q, modulus })
    }

    pub fn degree(&self) -> usize {
        self.modulus.len() - 1
    }

    /// Monic modulus coefficients, constant term first.
    pub fn modulus(&self) -> &[u32] {
        &self.modulus
    }

    /// The element whose coefficients are the base-`q` digits of `i`.
    pub fn element(&self, mut i: u64) -> Vec<u32> {
        (0..self.degree())
            .map(|_| {
                let d = (i % self.q as u64) as u32;
                i /= self.q as u64;
                d
            })
            .collect()
    }

    pub fn one(&self) -> Vec<u32> {
        let mut e = vec![0; self.degree()];
        if !e.is_empty() {
            e[0] = 1;
        }
        e
    }

    pub fn mul(&self, a: &[u32], b: &[u32]) -> Vec<u32> {
        let q = self.q as u64;
        let c = self.degree();
        let mut prod = vec![0u64; 2 * c.max(1)];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                prod[i + j] = (prod[i + j] + x as u64 * y as u64) % q;
            }
        }
        // reduce by the monic modulus from the top down
        for deg in (c..prod.len()).rev() {
            let lead = prod[deg];
            if lead == 0 {
                continue;
            }
            for (k, &m) in self.modulus.iter().enumerate() {
                let idx = deg - c + k;
                prod[idx] = (prod[idx] + (q - lead) * m as u64) % q;
            }
        }
        prod.truncate(c);
        prod.into_iter().map(|v| v as u32).collect()
    }
}

/// Polynomial remainder over `F_q`; both inputs constant term first.
fn poly_rem(num: &[u32], den: &[u32], q: u32) -> Vec<u32> {
    let q64 = q as u64;
    let mut r: Vec<u64> = num.iter().map(|&x| x as u64).collect();
    let dd = den.len() - 1;
    let lead_inv = mod_inverse(den[dd], q) as u64;
    while r.len() > dd {
        let top = r.len() - 1;
        let coef = r[top] * lead_inv % q64;
        if coef != 0 {
            for (k, &d) in den.iter().enumerate() {
                let idx = top - dd + k;
                r[idx] = (r[idx] + (q64 - coef) * d as u64 % q64) % q64;
            }
        }
        r.pop();
    }
    r.into_iter().map(|v| v as u32).collect()
}

fn mod_inverse(a: u32, q: u32) -> u32 {
    // q prime: a^(q-2)
    let (mut base, mut exp, mut acc) = (a as u64 % q as u64, q as u64 - 2, 1u64);
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % q as u64;
        }
        base = base * base % q as u64;
        exp >>= 1;
    }
    acc as u32
}

fn is_irreducible(poly: &[u32], q: u32) -> bool {
    let deg = poly.len() - 1;
    if deg <= 1 {
        return deg == 1;
    }
    // trial division by every monic polynomial of degree 1..=deg/2
    for d in 1..=deg / 2 {
        let count = (q as u64).pow(d as u32);
        for low in 0..count {
            let mut div: Vec<u32> = (0..d).map(|i| ((low / (q as u64).pow(i as u32)) % q as u64) as u32).collect();
            div.push(1);
            if poly_rem(poly, &div, q).iter().all(|&x| x == 0) {
                return false;
            }
        }
    }
    true
}

/// Lexicographically smallest monic irreducible polynomial of degree `c`
/// over `F_q` (lower coefficients read as a base-`q` counter).
pub fn smallest_irreducible(q: u32, c: usize) -> Vec<u32> {
    let count = (q as u64).pow(c as u32);
    for low in 0..count {
        let mut poly: Vec<u32> = (0..c).map(|i| ((low / (q as u64).pow(i as u32)) % q as u64) as u32).collect();
        poly.push(1);
        if is_irreducible(&poly, q) {
            return poly;
        }
    }
    unreachable!("irreducible polynomials exist in every degree")
}

/// Offset matrix `D` (the parity-check matrix) plus its syndrome decoder.
#[derive(Clone, Debug)]
pub struct CodedOffsetPlan {
    q: u32,
    n: usize,
    t: usize,
    field: ExtensionField,
    parity_check: ZqMatrix,
    table: HashMap<Vec<u32>, QIndex>,
    warnings: Vec<String>,
}

/// Serializable form of a [`CodedOffsetPlan`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodedOffsetRecord {
    pub q: u32,
    pub n: usize,
    pub t: usize,
    pub extension_degree: usize,
    /// Monic modulus of `F_{q^c}`, constant term first.
    pub irreducible: Vec<u32>,
    /// Rows of the parity-check matrix as digit strings.
    pub parity_check: Vec<String>,
}

impl CodedOffsetPlan {
    pub fn q(&self) -> u32 {
        self.q
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn t(&self) -> usize {
        self.t
    }
    pub fn extension_degree(&self) -> usize {
        self.field.degree()
    }
    pub fn field(&self) -> &ExtensionField {
        &self.field
    }
    /// Number of offset rows, `2 t ceil(log_q n)`.
    pub fn rows(&self) -> usize {
        self.parity_check.rows()
    }
    pub fn parity_check(&self) -> &ZqMatrix {
        &self.parity_check
    }
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
    pub fn table_len(&self) -> usize {
        self.table.len()
    }

    /// Rows of `D` as offsets in `Z_q^n`.
    pub fn offsets(&self) -> Vec<QIndex> {
        (0..self.rows())
            .map(|r| QIndex::new(self.q, self.parity_check.row(r).to_vec()).expect("entries reduced"))
            .collect()
    }

    pub fn syndrome(&self, k: &QIndex) -> Result<Vec<u32>> {
        if k.q() != self.q || k.len() != self.n {
            return usage("index does not match the code length");
        }
        Ok(self.parity_check.apply(k.digits()))
    }

    /// The unique `k` of weight at most `t` with `H k = s`, if any.
    pub fn syndrome_decode(&self, s: &[u32]) -> Option<QIndex> {
        if s.len() != self.rows() {
            return None;
        }
        self.table.get(s).cloned()
    }

    pub fn to_record(&self) -> CodedOffsetRecord {
        CodedOffsetRecord {
            q: self.q,
            n: self.n,
            t: self.t,
            extension_degree: self.extension_degree(),
            irreducible: self.field.modulus().to_vec(),
            parity_check: self.parity_check.to_row_strings(),
        }
    }

    /// Rebuilds from a record and checks it reproduces the stored matrix.
    pub fn from_record(record: &CodedOffsetRecord) -> Result<Self> {
        let field = ExtensionField::with_modulus(record.q, record.irreducible.clone())?;
        let plan = build_with_field(record.q, record.n, record.t, field)?;
        if plan.parity_check.to_row_strings() != record.parity_check {
            return Err(Error::Construction("stored parity-check matrix does not match its construction".into()));
        }
        Ok(plan)
    }
}

/// Builds the `2tc x n` parity-check offsets for prime `q`.
pub fn build_parity_check(q: u32, n: usize, t: usize) -> Result<CodedOffsetPlan> {
    if !is_prime(q) {
        return Err(Error::Unsupported(format!(
            "coded offsets need a field; q = {q} is not prime"
        )));
    }
    if n < 2 {
        return usage("coded offsets need n >= 2");
    }
    let c = extension_degree(q, n);
    build_with_field(q, n, t, ExtensionField::new(q, c))
}

fn build_with_field(q: u32, n: usize, t: usize, field: ExtensionField) -> Result<CodedOffsetPlan> {
    if !is_prime(q) {
        return Err(Error::Unsupported(format!("q = {q} is not prime")));
    }
    let c = field.degree();
    if c != extension_degree(q, n) {
        return usage(format!("extension degree {c} does not match ceil(log_{q} {n})"));
    }
    let mut warnings = Vec::new();
    if 2 * t * c > n {
        warnings.push(format!(
            "2tc = {} offsets exceed n = {n}; identity offsets would be cheaper",
            2 * t * c
        ));
    }

    let points: Vec<Vec<u32>> = (0..n as u64).map(|i| field.element(i)).collect();
    let rows = 2 * t * c;
    let mut h = ZqMatrix::zeros(q, rows, n);
    for (i, alpha) in points.iter().enumerate() {
        let mut power = field.one();
        for r in 0..2 * t {
            for (s, &coord) in power.iter().enumerate() {
                h.set(r * c + s, i, coord);
            }
            power = field.mul(&power, alpha);
        }
    }

    let table = syndrome_table(q, n, t, &h)?;
    Ok(CodedOffsetPlan { q, n, t, field, parity_check: h, table, warnings })
}

/// Number of vectors in `F_q^n` of weight at most `t`.
pub fn low_weight_count(q: u32, n: usize, t: usize) -> u64 {
    let mut total = 0u64;
    let mut binom = 1u64;
    for w in 0..=t.min(n) {
        if w > 0 {
            binom = binom * (n - w + 1) as u64 / w as u64;
        }
        total = total.saturating_add(binom.saturating_mul((q as u64 - 1).saturating_pow(w as u32)));
    }
    total
}

fn syndrome_table(q: u32, n: usize, t: usize, h: &ZqMatrix) -> Result<HashMap<Vec<u32>, QIndex>> {
    let total = low_weight_count(q, n, t);
    if total > MAX_TABLE_ENTRIES {
        return Err(Error::Resource(format!(
            "syndrome table would hold {total} entries (limit {MAX_TABLE_ENTRIES})"
        )));
    }
    let mut table = HashMap::with_capacity(total as usize);
    let mut insert = |k: QIndex| -> Result<()> {
        let s = h.apply(k.digits());
        if let Some(prev) = table.insert(s, k.clone()) {
            return Err(Error::Construction(format!("syndrome collision between {prev:?} and {k:?}")));
        }
        Ok(())
    };
    insert(QIndex::zero(q, n))?;
    for w in 1..=t.min(n) {
        for_each_support(n, w, &mut |support| {
            // every assignment of nonzero values to the support
            let combos = space_size(q - 1, w).unwrap_or(1);
            for code in 0..combos {
                let mut digits = vec![0u32; n];
                let mut rest = code;
                for &pos in support {
                    digits[pos] = (rest % (q as u64 - 1)) as u32 + 1;
                    rest /= q as u64 - 1;
                }
                insert(QIndex::new(q, digits).expect("digits in range"))?;
            }
            Ok(())
        })?;
    }
    Ok(table)
}

fn for_each_support(n: usize, w: usize, f: &mut dyn FnMut(&[usize]) -> Result<()>) -> Result<()> {
    let mut idx: Vec<usize> = (0..w).collect();
    loop {
        f(&idx)?;
        // next combination in lexicographic order
        let mut i = w;
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            if idx[i] != i + n - w {
                break;
            }
            if i == 0 {
                return Ok(());
            }
        }
        idx[i] += 1;
        for j in i + 1..w {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qary::enumerate;

    #[test]
    fn primes() {
        let p: Vec<u32> = (0..30).filter(|&q| is_prime(q)).collect();
        assert_eq!(p, vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29]);
    }

    #[test]
    fn irreducibles() {
        // x^2 + 1 is irreducible over F_3; x^2 + x + 2 is the first in our order? check by roots
        let m = smallest_irreducible(3, 2);
        assert_eq!(m.len(), 3);
        for x in 0..3u64 {
            let val = (m[0] as u64 + m[1] as u64 * x + x * x) % 3;
            assert_ne!(val, 0, "{m:?} has root {x}");
        }
        assert_eq!(smallest_irreducible(2, 3), vec![1, 1, 0, 1]);
        assert_eq!(smallest_irreducible(5, 1), vec![0, 1]);
    }

    #[test]
    fn field_multiplicative_group_is_cyclic_of_right_order() {
        let f = ExtensionField::new(3, 2);
        // every nonzero element satisfies a^(q^c - 1) = 1
        for i in 1..9u64 {
            let a = f.element(i);
            let mut p = f.one();
            for _ in 0..8 {
                p = f.mul(&p, &a);
            }
            assert_eq!(p, f.one(), "element {i}");
        }
    }

    #[test]
    fn q3_n9_t1() {
        let plan = build_parity_check(3, 9, 1).unwrap();
        assert_eq!(plan.extension_degree(), 2);
        assert_eq!(plan.rows(), 4);
        assert_eq!(plan.table_len(), 19);
        let mut k = QIndex::zero(3, 9);
        k = k.add(&QIndex::new(3, {
            let mut d = vec![0; 9];
            d[4] = 2;
            d
        }).unwrap()).unwrap();
        let s = plan.syndrome(&k).unwrap();
        assert_eq!(plan.syndrome_decode(&s), Some(k));
        assert_eq!(plan.syndrome_decode(&[0, 0, 0, 0]), Some(QIndex::zero(3, 9)));
    }

    #[test]
    fn q5_n5_t1_needs_no_expansion() {
        let plan = build_parity_check(5, 5, 1).unwrap();
        assert_eq!(plan.extension_degree(), 1);
        assert_eq!(plan.rows(), 2);
        assert_eq!(plan.table_len(), 21);
        // rows are 1 and alpha over the points 0..5 of F_5
        assert_eq!(plan.parity_check().to_row_strings(), vec!["11111", "01234"]);
    }

    #[test]
    fn t0_only_recovers_zero() {
        let plan = build_parity_check(3, 4, 0).unwrap();
        assert_eq!(plan.rows(), 0);
        assert_eq!(plan.syndrome_decode(&[]), Some(QIndex::zero(3, 4)));
    }

    #[test]
    fn unknown_syndrome_fails() {
        let plan = build_parity_check(3, 9, 1).unwrap();
        let known: std::collections::HashSet<_> = plan.table.keys().cloned().collect();
        let miss = enumerate(3, 4).unwrap().map(|s| s.digits().to_vec()).find(|s| !known.contains(s)).unwrap();
        assert_eq!(plan.syndrome_decode(&miss), None);
        assert_eq!(plan.syndrome_decode(&[0, 0]), None);
    }

    #[test]
    fn composite_alphabet_is_unsupported() {
        assert!(matches!(build_parity_check(4, 8, 1), Err(Error::Unsupported(_))));
    }

    #[test]
    fn oversized_plan_warns() {
        let plan = build_parity_check(2, 4, 2).unwrap();
        assert_eq!(plan.rows(), 8);
        assert!(!plan.warnings().is_empty());
    }

    #[test]
    fn record_round_trip() {
        let plan = build_parity_check(3, 9, 2).unwrap();
        let rec = plan.to_record();
        let back = CodedOffsetPlan::from_record(&rec).unwrap();
        assert_eq!(back.parity_check(), plan.parity_check());
        let mut bad = rec.clone();
        bad.parity_check[0] = "000000000".into();
        assert!(CodedOffsetPlan::from_record(&bad).is_err());
    }

    #[test]
    fn low_weight_counts() {
        assert_eq!(low_weight_count(3, 9, 1), 19);
        assert_eq!(low_weight_count(3, 9, 2), 19 + 36 * 4);
        assert_eq!(low_weight_count(5, 5, 1), 21);
    }
}
