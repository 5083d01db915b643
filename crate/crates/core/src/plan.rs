//! Subsampling matrices and offsets for each detection regime.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coded::{build_parity_check, CodedOffsetPlan, CodedOffsetRecord};
use crate::error::{usage, Error, Result};
use crate::qary::{space_size, QIndex, ZqMatrix};
use crate::spectral::affine_points;

/// Attempts at drawing a surjective random subsampling matrix.
const MAX_MATRIX_DRAWS: usize = 1000;

/// Which bin detector the offsets are designed for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "noiseless")]
    Noiseless,
    #[serde(rename = "robust-nl")]
    RobustNearLinear,
    #[serde(rename = "robust-sl")]
    RobustSubLinear,
    #[serde(rename = "coded")]
    Coded,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Noiseless => "noiseless",
            Regime::RobustNearLinear => "robust-nl",
            Regime::RobustSubLinear => "robust-sl",
            Regime::Coded => "coded",
        }
    }

    pub fn is_robust(&self) -> bool {
        matches!(self, Regime::RobustNearLinear | Regime::RobustSubLinear)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noiseless" => Ok(Regime::Noiseless),
            "robust-nl" | "robust-near-linear" => Ok(Regime::RobustNearLinear),
            "robust-sl" | "robust-sub-linear" => Ok(Regime::RobustSubLinear),
            "coded" => Ok(Regime::Coded),
            other => usage(format!(
                "unknown regime \"{other}\" (expected noiseless, robust-nl, robust-sl or coded)"
            )),
        }
    }
}

/// Smallest `b <= n` with `q^b >= eta * sparsity`.
pub fn default_b(q: u32, n: usize, sparsity: usize, eta: f64) -> usize {
    let target = (eta * sparsity as f64).max(1.0);
    let mut b = 0;
    let mut size = 1.0;
    while size < target && b < n {
        size *= q as f64;
        b += 1;
    }
    b
}

/// Default number of groups.
pub const DEFAULT_GROUPS: usize = 3;

/// Determinant of a small integer matrix by fraction-free elimination.
fn integer_det(mut a: Vec<Vec<i128>>) -> i128 {
    let n = a.len();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n {
        if a[k][k] == 0 {
            let Some(swap) = (k + 1..n).find(|&r| a[r][k] != 0) else {
                return 0;
            };
            a.swap(k, swap);
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) / prev;
            }
        }
        prev = a[k][k];
    }
    sign * a[n - 1][n - 1]
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Whether `k -> M^T k` maps `Z_q^n` onto `Z_q^b`: the `b x b` minors of
/// `M` must generate the unit ideal of `Z_q`.
pub fn is_surjective(m: &ZqMatrix) -> bool {
    let (n, b, q) = (m.rows(), m.cols(), m.q() as u64);
    if b == 0 {
        return true;
    }
    if b > n {
        return false;
    }
    let mut rows: Vec<usize> = (0..b).collect();
    let mut g = q;
    loop {
        let minor: Vec<Vec<i128>> =
            rows.iter().map(|&r| (0..b).map(|c| m.get(r, c) as i128).collect()).collect();
        let det = integer_det(minor).rem_euclid(q as i128) as u64;
        g = gcd(g, det);
        if g == 1 {
            return true;
        }
        // next row subset
        let mut i = b;
        loop {
            if i == 0 {
                return false;
            }
            i -= 1;
            if rows[i] != i + n - b {
                break;
            }
        }
        rows[i] += 1;
        for j in i + 1..b {
            rows[j] = rows[j - 1] + 1;
        }
    }
}

/// `C` subsampling matrices of shape `n x b`.
///
/// When the groups fit side by side (`C b <= n`) group `c` selects digits
/// `c b .. (c+1) b`. Otherwise each matrix is drawn uniformly among those
/// whose transpose is onto `Z_q^b`.
pub fn make_subsampling_matrices(
    q: u32,
    n: usize,
    b: usize,
    groups: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ZqMatrix>> {
    if b > n {
        return usage(format!("b = {b} exceeds n = {n}"));
    }
    if groups == 0 {
        return usage("need at least one subsampling group");
    }
    if groups * b <= n {
        return Ok((0..groups)
            .map(|c| {
                let mut m = ZqMatrix::zeros(q, n, b);
                for i in 0..b {
                    m.set(c * b + i, i, 1);
                }
                m
            })
            .collect());
    }
    (0..groups)
        .map(|_| {
            for _ in 0..MAX_MATRIX_DRAWS {
                let data = (0..n * b).map(|_| rng.random_range(0..q)).collect();
                let m = ZqMatrix::new(q, n, b, data)?;
                if is_surjective(&m) {
                    return Ok(m);
                }
            }
            Err(Error::Construction(format!("no surjective {n}x{b} matrix over Z_{q} found")))
        })
        .collect()
}

/// How offsets are laid out for one group.
#[derive(Clone, Copy, Debug)]
pub enum OffsetScheme<'a> {
    /// Zero offset followed by the `n` unit vectors.
    Identity,
    /// `count` offsets uniform over `Z_q^n`.
    Random { count: usize },
    /// `blocks` random bases, each followed by its `n` unit shifts.
    Modulated { blocks: usize },
    /// Zero offset followed by the rows of a parity-check matrix.
    Coded(&'a CodedOffsetPlan),
}

fn random_index(q: u32, n: usize, rng: &mut ChaCha8Rng) -> QIndex {
    QIndex::from_reduced(q, (0..n).map(|_| rng.random_range(0..q) as u64))
}

/// Ordered offset rows for one group.
pub fn make_offsets(scheme: OffsetScheme<'_>, q: u32, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<QIndex>> {
    match scheme {
        OffsetScheme::Identity => {
            let mut rows = vec![QIndex::zero(q, n)];
            rows.extend((0..n).map(|r| QIndex::unit(q, n, r)));
            Ok(rows)
        }
        OffsetScheme::Random { count } => {
            if count == 0 {
                return usage("need at least one random offset");
            }
            Ok((0..count).map(|_| random_index(q, n, rng)).collect())
        }
        OffsetScheme::Modulated { blocks } => {
            if blocks == 0 {
                return usage("need at least one modulated offset block");
            }
            let mut rows = Vec::with_capacity(blocks * (n + 1));
            for _ in 0..blocks {
                let base = random_index(q, n, rng);
                rows.extend(modulated_block(&base));
            }
            Ok(rows)
        }
        OffsetScheme::Coded(code) => {
            if code.q() != q || code.n() != n {
                return usage("coded offset plan does not match (q, n)");
            }
            let mut rows = vec![QIndex::zero(q, n)];
            rows.extend(code.offsets());
            Ok(rows)
        }
    }
}

/// `[d, d + e_0, ..., d + e_{n-1}]`.
pub fn modulated_block(base: &QIndex) -> Vec<QIndex> {
    let (q, n) = (base.q(), base.len());
    let mut rows = Vec::with_capacity(n + 1);
    rows.push(base.clone());
    for r in 0..n {
        rows.push(base.add(&QIndex::unit(q, n, r)).expect("same shape"));
    }
    rows
}

/// Parameters from which a plan is generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub q: u32,
    pub n: usize,
    pub b: usize,
    pub groups: usize,
    pub regime: Regime,
    /// Random offsets (near-linear) or modulated blocks (sub-linear).
    pub p1: usize,
    /// Degree bound `t` for coded offsets.
    pub degree_bound: usize,
    pub seed: u64,
}

/// One subsampling group: `M_c` and its ordered offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsamplingGroup {
    pub matrix: ZqMatrix,
    pub offsets: Vec<QIndex>,
}

impl SubsamplingGroup {
    pub fn bins(&self) -> usize {
        (self.matrix.q() as usize).pow(self.matrix.cols() as u32)
    }
}

#[derive(Clone, Debug)]
pub struct SamplingPlan {
    config: PlanConfig,
    groups: Vec<SubsamplingGroup>,
    coded: Option<CodedOffsetPlan>,
}

impl SamplingPlan {
    pub fn generate(config: &PlanConfig) -> Result<Self> {
        let PlanConfig { q, n, b, groups, regime, p1, degree_bound, seed } = *config;
        space_size(q, n)?;
        if n == 0 {
            return usage("n must be at least 1");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let matrices = make_subsampling_matrices(q, n, b, groups, &mut rng)?;
        let coded = match regime {
            Regime::Coded => Some(build_parity_check(q, n, degree_bound)?),
            _ => None,
        };
        let mut out = Vec::with_capacity(groups);
        for matrix in matrices {
            let scheme = match regime {
                Regime::Noiseless => OffsetScheme::Identity,
                Regime::RobustNearLinear => OffsetScheme::Random { count: p1 },
                Regime::RobustSubLinear => OffsetScheme::Modulated { blocks: p1 },
                Regime::Coded => OffsetScheme::Coded(coded.as_ref().expect("built above")),
            };
            let offsets = make_offsets(scheme, q, n, &mut rng)?;
            out.push(SubsamplingGroup { matrix, offsets });
        }
        Ok(Self { config: config.clone(), groups: out, coded })
    }

    pub fn config(&self) -> &PlanConfig {
        &self.config
    }
    pub fn q(&self) -> u32 {
        self.config.q
    }
    pub fn n(&self) -> usize {
        self.config.n
    }
    pub fn b(&self) -> usize {
        self.config.b
    }
    pub fn regime(&self) -> Regime {
        self.config.regime
    }
    pub fn groups(&self) -> &[SubsamplingGroup] {
        &self.groups
    }
    pub fn group(&self, c: usize) -> &SubsamplingGroup {
        &self.groups[c]
    }
    pub fn coded(&self) -> Option<&CodedOffsetPlan> {
        self.coded.as_ref()
    }
    /// `B = q^b`.
    pub fn bins(&self) -> usize {
        (self.config.q as usize).pow(self.config.b as u32)
    }

    /// Oracle inputs of group `c`, offset-major then `l` in rank order.
    pub fn query_points(&self, c: usize) -> Vec<QIndex> {
        let g = &self.groups[c];
        g.offsets.iter().flat_map(|d| affine_points(&g.matrix, d)).collect()
    }

    /// Total oracle queries issued by the plan, counting repeats.
    pub fn raw_query_count(&self) -> u64 {
        self.groups.iter().map(|g| (g.offsets.len() * g.bins()) as u64).sum()
    }

    pub fn to_record(&self) -> PlanRecord {
        PlanRecord {
            q: self.config.q,
            n: self.config.n,
            b: self.config.b,
            c_groups: self.config.groups,
            regime: self.config.regime,
            p1: self.config.p1,
            degree_bound: self.config.degree_bound,
            seed: self.config.seed,
            groups: self
                .groups
                .iter()
                .map(|g| GroupRecord {
                    matrix: g.matrix.to_row_strings(),
                    offsets: g.offsets.iter().map(QIndex::to_text).collect(),
                })
                .collect(),
            coded: self.coded.as_ref().map(CodedOffsetPlan::to_record),
        }
    }

    pub fn from_record(record: &PlanRecord) -> Result<Self> {
        let config = PlanConfig {
            q: record.q,
            n: record.n,
            b: record.b,
            groups: record.c_groups,
            regime: record.regime,
            p1: record.p1,
            degree_bound: record.degree_bound,
            seed: record.seed,
        };
        space_size(config.q, config.n)?;
        if record.groups.len() != config.groups {
            return usage(format!("plan lists {} groups, header says {}", record.groups.len(), config.groups));
        }
        let coded = match (&record.coded, config.regime) {
            (Some(rec), Regime::Coded) => Some(CodedOffsetPlan::from_record(rec)?),
            (None, Regime::Coded) => return usage("coded plan is missing its parity-check record"),
            _ => None,
        };
        let mut groups = Vec::with_capacity(record.groups.len());
        for g in &record.groups {
            let matrix = ZqMatrix::from_row_strings(config.q, config.b, &g.matrix)?;
            if matrix.rows() != config.n {
                return usage(format!("subsampling matrix has {} rows, expected {}", matrix.rows(), config.n));
            }
            let offsets = g
                .offsets
                .iter()
                .map(|s| {
                    if s.chars().count() != config.n {
                        return usage(format!("offset \"{s}\" does not have {} digits", config.n));
                    }
                    QIndex::parse_text(config.q, s)
                })
                .collect::<Result<Vec<_>>>()?;
            groups.push(SubsamplingGroup { matrix, offsets });
        }
        let plan = Self { config, groups, coded };
        plan.validate()?;
        Ok(plan)
    }

    /// Checks the offset layout the detector for this regime relies on.
    pub fn validate(&self) -> Result<()> {
        let (q, n) = (self.q(), self.n());
        for (c, g) in self.groups.iter().enumerate() {
            if g.matrix.cols() != self.b() || g.matrix.rows() != n {
                return usage(format!("group {c}: matrix shape mismatch"));
            }
            let ok = match self.regime() {
                Regime::Noiseless => {
                    g.offsets.len() == n + 1
                        && g.offsets[0].is_zero()
                        && (0..n).all(|r| g.offsets[r + 1] == QIndex::unit(q, n, r))
                }
                Regime::RobustNearLinear => !g.offsets.is_empty(),
                Regime::RobustSubLinear => {
                    !g.offsets.is_empty()
                        && g.offsets.len() % (n + 1) == 0
                        && g.offsets.chunks(n + 1).all(|block| block == modulated_block(&block[0]).as_slice())
                }
                Regime::Coded => {
                    let code = self.coded.as_ref().expect("checked at load");
                    g.offsets.len() == code.rows() + 1
                        && g.offsets[0].is_zero()
                        && g.offsets[1..] == code.offsets()[..]
                }
            };
            if !ok {
                return usage(format!("group {c}: offsets do not follow the {} layout", self.regime()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRecord {
    /// Rows of `M_c` (n rows of b digits).
    pub matrix: Vec<String>,
    pub offsets: Vec<String>,
}

/// JSON form of a [`SamplingPlan`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub q: u32,
    pub n: usize,
    pub b: usize,
    pub c_groups: usize,
    pub regime: Regime,
    pub p1: usize,
    #[serde(default)]
    pub degree_bound: usize,
    pub seed: u64,
    pub groups: Vec<GroupRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coded: Option<CodedOffsetRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(q: u32, n: usize, b: usize, groups: usize, regime: Regime, p1: usize) -> PlanConfig {
        PlanConfig { q, n, b, groups, regime, p1, degree_bound: 1, seed: 42 }
    }

    fn idx(q: u32, d: &[u32]) -> QIndex {
        QIndex::new(q, d.to_vec()).unwrap()
    }

    #[test]
    fn identity_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ms = make_subsampling_matrices(3, 4, 2, 2, &mut rng).unwrap();
        // group 0 selects digits {0, 1}, group 1 digits {2, 3}
        let k = idx(3, &[1, 2, 0, 1]);
        assert_eq!(ms[0].transpose_mul(&k).unwrap(), idx(3, &[1, 2]));
        assert_eq!(ms[1].transpose_mul(&k).unwrap(), idx(3, &[0, 1]));
        let full = make_subsampling_matrices(3, 4, 4, 1, &mut rng).unwrap();
        assert_eq!(full[0], ZqMatrix::identity(3, 4));
    }

    #[test]
    fn random_matrices_are_seeded_and_surjective() {
        let a = make_subsampling_matrices(2, 4, 2, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = make_subsampling_matrices(2, 4, 2, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|m| m.rows() == 4 && m.cols() == 2 && is_surjective(m)));
        assert!(make_subsampling_matrices(2, 2, 3, 1, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
    }

    #[test]
    fn surjectivity_over_rings() {
        // column (2, 0) over Z_4 only reaches even values
        assert!(!is_surjective(&ZqMatrix::new(4, 2, 1, vec![2, 0]).unwrap()));
        assert!(is_surjective(&ZqMatrix::new(4, 2, 1, vec![2, 3]).unwrap()));
        // minors 2 and 3 over Z_6 generate the unit ideal together
        let m = ZqMatrix::new(6, 2, 1, vec![2, 3]).unwrap();
        assert!(is_surjective(&m));
        assert!(!is_surjective(&ZqMatrix::new(6, 2, 1, vec![2, 4]).unwrap()));
    }

    #[test]
    fn noiseless_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rows = make_offsets(OffsetScheme::Identity, 3, 2, &mut rng).unwrap();
        assert_eq!(rows, vec![idx(3, &[0, 0]), idx(3, &[1, 0]), idx(3, &[0, 1])]);
    }

    #[test]
    fn modulated_block_example() {
        let rows = modulated_block(&idx(4, &[1, 2, 0]));
        assert_eq!(rows, vec![idx(4, &[1, 2, 0]), idx(4, &[2, 2, 0]), idx(4, &[1, 3, 0]), idx(4, &[1, 2, 1])]);
    }

    #[test]
    fn modulated_offsets_differ_by_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = make_offsets(OffsetScheme::Modulated { blocks: 5 }, 4, 6, &mut rng).unwrap();
        assert_eq!(rows.len(), 5 * 7);
        for block in rows.chunks(7) {
            for r in 0..6 {
                assert_eq!(block[r + 1].sub(&block[0]).unwrap(), QIndex::unit(4, 6, r));
            }
        }
    }

    #[test]
    fn random_offsets_are_reproducible() {
        let a = make_offsets(OffsetScheme::Random { count: 16 }, 3, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = make_offsets(OffsetScheme::Random { count: 16 }, 3, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a, b);
        assert!(make_offsets(OffsetScheme::Random { count: 0 }, 3, 5, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn regime_parsing() {
        assert_eq!("robust-sl".parse::<Regime>().unwrap(), Regime::RobustSubLinear);
        assert!(matches!("fast".parse::<Regime>(), Err(Error::Usage(_))));
    }

    #[test]
    fn query_counts() {
        let plan = SamplingPlan::generate(&cfg(3, 6, 2, 3, Regime::Noiseless, 0)).unwrap();
        assert_eq!(plan.raw_query_count(), 3 * 7 * 9);
        assert_eq!(plan.query_points(0).len(), 7 * 9);
        let plan = SamplingPlan::generate(&cfg(4, 5, 2, 2, Regime::RobustSubLinear, 3)).unwrap();
        assert_eq!(plan.raw_query_count(), 2 * 3 * 6 * 16);
    }

    #[test]
    fn identity_blocks_span_when_they_cover_n() {
        // union of the column spaces hits every coordinate
        let plan = SamplingPlan::generate(&cfg(3, 6, 2, 3, Regime::Noiseless, 0)).unwrap();
        let mut covered = vec![false; 6];
        for g in plan.groups() {
            for c in 0..g.matrix.cols() {
                for (r, &v) in g.matrix.column(c).iter().enumerate() {
                    covered[r] |= v != 0;
                }
            }
        }
        assert!(covered.iter().all(|&x| x));
    }

    #[test]
    fn plan_json_round_trip_is_byte_stable() {
        for regime in [Regime::Noiseless, Regime::RobustNearLinear, Regime::RobustSubLinear, Regime::Coded] {
            let plan = SamplingPlan::generate(&cfg(3, 9, 2, 3, regime, 4)).unwrap();
            let json = serde_json::to_string(&plan.to_record()).unwrap();
            let again = serde_json::to_string(&SamplingPlan::generate(&cfg(3, 9, 2, 3, regime, 4)).unwrap().to_record()).unwrap();
            assert_eq!(json, again);
            let back = SamplingPlan::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
            assert_eq!(back.groups(), plan.groups());
        }
    }

    #[test]
    fn tampered_plans_are_rejected() {
        let plan = SamplingPlan::generate(&cfg(3, 4, 2, 2, Regime::RobustSubLinear, 2)).unwrap();
        let mut rec = plan.to_record();
        rec.groups[0].offsets[1] = "0000".into();
        assert!(SamplingPlan::from_record(&rec).is_err());
    }

    #[test]
    fn default_b_covers_sparsity() {
        assert_eq!(default_b(4, 8, 20, 1.0), 3);
        assert_eq!(default_b(3, 6, 10, 2.0), 3);
        assert_eq!(default_b(2, 3, 100, 1.0), 3);
    }
}
