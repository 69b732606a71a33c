//! Measurement-matrix construction and diagnostics: Sylvester Hadamard,
//! scrambled binary Hadamard (SH), seeded row subsets, fill factor and the
//! singular spectrum.

pub mod spip;

pub use spip::{read_spip, write_spip};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::imaging::{perfect_sqrt, PatternKind, PatternMatrix};
use crate::rng::{self, stream};

/// Largest supported Sylvester order (`2^14 = 16384` pixels, i.e. 128 x 128 images).
pub const MAX_HADAMARD_ORDER: u32 = 14;

/// `2^k x 2^k` matrix with entries in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HadamardMatrix {
    order: u32,
    entries: Vec<i8>,
}

impl HadamardMatrix {
    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn size(&self) -> usize {
        1 << self.order
    }

    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.entries[row * self.size() + col]
    }

    pub fn entries(&self) -> &[i8] {
        &self.entries
    }
}

/// `H_0 = [1]`, `H_{j+1} = [[H_j, H_j], [H_j, -H_j]]`.
pub fn sylvester_hadamard(k: u32) -> Result<HadamardMatrix> {
    if k > MAX_HADAMARD_ORDER {
        return Err(Error::SizeLimit(format!(
            "Hadamard order {k} exceeds the limit {MAX_HADAMARD_ORDER}"
        )));
    }
    let mut size = 1usize;
    let mut entries = vec![1i8];
    for _ in 0..k {
        let next = size * 2;
        let mut grown = vec![0i8; next * next];
        for r in 0..size {
            for c in 0..size {
                let v = entries[r * size + c];
                grown[r * next + c] = v;
                grown[r * next + c + size] = v;
                grown[(r + size) * next + c] = v;
                grown[(r + size) * next + c + size] = -v;
            }
        }
        entries = grown;
        size = next;
    }
    Ok(HadamardMatrix { order: k, entries })
}

/// Closed form of the Sylvester entry: `(-1)^popcount(r & c)`.
#[inline]
fn sylvester_positive(row: usize, col: usize) -> bool {
    (row & col).count_ones() % 2 == 0
}

/// Row and column permutations applied to a Hadamard matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScrambleSpec {
    pub seed: u64,
    pub row_perm: Vec<usize>,
    pub col_perm: Vec<usize>,
}

impl ScrambleSpec {
    /// Seed 0 means identity permutations; any other seed draws two independent Fisher-Yates shuffles.
    pub fn from_seed(n: usize, seed: u64) -> Self {
        let mut row_perm: Vec<usize> = (0..n).collect();
        let mut col_perm = row_perm.clone();
        if seed != 0 {
            let mut rng = rng::seeded(seed, stream::SCRAMBLE);
            row_perm.shuffle(&mut rng);
            col_perm.shuffle(&mut rng);
        }
        Self {
            seed,
            row_perm,
            col_perm,
        }
    }

    fn row(&self, i: usize) -> Vec<f32> {
        let h = self.row_perm[i];
        self.col_perm
            .iter()
            .map(|&c| if sylvester_positive(h, c) { 1.0 } else { 0.0 })
            .collect()
    }

    /// Index of the scrambled row that came from the all-ones Hadamard row.
    fn dc_row(&self) -> usize {
        self.row_perm.iter().position(|&r| r == 0).unwrap_or(0)
    }
}

fn check_sh_size(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() || perfect_sqrt(n).is_none() {
        return Err(Error::invalid(format!(
            "SH pattern size must be a power of two and a perfect square, got {n}"
        )));
    }
    if n.trailing_zeros() > MAX_HADAMARD_ORDER {
        return Err(Error::SizeLimit(format!("SH pattern size {n} exceeds 2^{MAX_HADAMARD_ORDER}")));
    }
    Ok(())
}

/// Full `n x n` scrambled binary Hadamard matrix (`-1 -> 0`).
pub fn scrambled_hadamard(n: usize, seed: u64) -> Result<PatternMatrix> {
    check_sh_size(n)?;
    let spec = ScrambleSpec::from_seed(n, seed);
    let entries = (0..n).flat_map(|i| spec.row(i)).collect();
    PatternMatrix::new(n, n, entries, PatternKind::BinarySh, seed)
}

/// Same result as `select_rows(&scrambled_hadamard(n, seed)?, m, seed)` without
/// materialising the full `n x n` matrix.
pub fn scrambled_hadamard_subset(n: usize, m: usize, seed: u64) -> Result<PatternMatrix> {
    check_sh_size(n)?;
    if m == 0 || m > n {
        return Err(Error::invalid(format!("cannot select {m} rows from {n}")));
    }
    let spec = ScrambleSpec::from_seed(n, seed);
    let rows = if m == n {
        (0..n).collect()
    } else {
        subset_indices(n, m, Some(spec.dc_row()), seed)
    };
    let entries = rows.iter().flat_map(|&i| spec.row(i)).collect();
    PatternMatrix::new(m, n, entries, PatternKind::BinarySh, seed)
}

/// Sorted row indices: the DC row (if any) plus a uniform sample of the rest.
fn subset_indices(total: usize, m: usize, dc: Option<usize>, seed: u64) -> Vec<usize> {
    let mut rng = rng::seeded(seed, stream::SELECT);
    let candidates: Vec<usize> = (0..total).filter(|&i| Some(i) != dc).collect();
    let take = m - usize::from(dc.is_some());
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, candidates.len(), take)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    picked.extend(dc);
    picked.sort_unstable();
    picked
}

/// Seeded uniform subset of `m` rows, kept in their original order. The
/// all-ones row, when present, is always included.
pub fn select_rows(patterns: &PatternMatrix, m: usize, seed: u64) -> Result<PatternMatrix> {
    if m == 0 || m > patterns.m() {
        return Err(Error::invalid(format!("cannot select {m} rows from {}", patterns.m())));
    }
    if m == patterns.m() {
        return Ok(patterns.clone());
    }
    let dc = patterns.rows().position(|r| r.iter().all(|&e| e == 1.0));
    let rows = subset_indices(patterns.m(), m, dc, seed);
    let entries = rows.iter().flat_map(|&i| patterns.row(i).iter().copied()).collect();
    PatternMatrix::new(m, patterns.n(), entries, patterns.kind(), patterns.seed())
}

/// Fraction of ones, `(1/mn) sum e_ij`.
pub fn fill_factor(patterns: &PatternMatrix) -> Result<f64> {
    if !patterns.kind().is_binary() {
        return Err(Error::invalid("fill factor is defined for binary patterns only"));
    }
    let ones = patterns.entries().iter().filter(|&&e| e == 1.0).count();
    Ok(ones as f64 / patterns.entries().len() as f64)
}

/// Singular values in descending order, from the eigenvalues of the smaller Gram matrix.
pub fn singular_spectrum(patterns: &PatternMatrix) -> Vec<f64> {
    let (m, n) = (patterns.m(), patterns.n());
    let p = DMatrix::from_fn(m, n, |i, j| patterns.entries()[i * n + j] as f64);
    let gram = if m <= n { &p * p.transpose() } else { p.transpose() * &p };
    let mut values: Vec<f64> = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .collect();
    values.sort_by(|a, b| b.total_cmp(a));
    values.resize(m, 0.0);
    values
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternDiagnostics {
    pub fill_factor: f64,
    pub singular_values: Vec<f64>,
}

impl PatternDiagnostics {
    /// `fill_factor,<v>` followed by one `sv,<i>,<value>` line per singular value.
    pub fn to_csv(&self) -> String {
        let mut out = format!("fill_factor,{}\n", self.fill_factor);
        for (i, s) in self.singular_values.iter().enumerate() {
            out.push_str(&format!("sv,{i},{s}\n"));
        }
        out
    }
}

pub fn diagnose(patterns: &PatternMatrix) -> Result<PatternDiagnostics> {
    Ok(PatternDiagnostics {
        fill_factor: fill_factor(patterns)?,
        singular_values: singular_spectrum(patterns),
    })
}

/// Closed-form singular values of the full `n x n` binary SH matrix `(H + J) / 2`:
/// one `(sqrt(n^2 + 8n) + n) / 4`, `n - 2` copies of `sqrt(n) / 2`, and one
/// `(sqrt(n^2 + 8n) - n) / 4`. Row/column scrambling leaves them unchanged.
pub fn binary_hadamard_spectrum(n: usize) -> Vec<f64> {
    let nf = n as f64;
    let root = (nf * nf + 8.0 * nf).sqrt();
    if n == 1 {
        return vec![1.0];
    }
    let mut v = Vec::with_capacity(n);
    v.push((root + nf) / 4.0);
    v.extend(std::iter::repeat(nf.sqrt() / 2.0).take(n - 2));
    v.push((root - nf) / 4.0);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::hash_map::DefaultHasher;
    use std::collections::HashSet;
    use std::hash::{Hash, Hasher};

    #[test]
    fn sylvester_small_orders() {
        assert_eq!(sylvester_hadamard(0).unwrap().entries(), &[1]);
        assert_eq!(sylvester_hadamard(1).unwrap().entries(), &[1, 1, 1, -1]);
        assert!(matches!(sylvester_hadamard(15), Err(Error::SizeLimit(_))));
    }

    #[test]
    fn sylvester_order_six_is_orthogonal() {
        let h = sylvester_hadamard(6).unwrap();
        let n = h.size();
        for i in 0..n {
            for j in 0..n {
                let dot: i64 = (0..n).map(|k| h.get(i, k) as i64 * h.get(j, k) as i64).sum();
                assert_eq!(dot, if i == j { n as i64 } else { 0 });
            }
        }
    }

    #[test]
    fn closed_form_matches_recursion() {
        let h = sylvester_hadamard(5).unwrap();
        for r in 0..32 {
            for c in 0..32 {
                assert_eq!(h.get(r, c) == 1, sylvester_positive(r, c));
            }
        }
    }

    #[test]
    fn identity_scramble_n4() {
        let p = scrambled_hadamard(4, 0).unwrap();
        let expect = [1., 1., 1., 1., 1., 0., 1., 0., 1., 1., 0., 0., 1., 0., 0., 1.];
        assert_eq!(p.entries(), &expect);
        assert_eq!(p.kind(), PatternKind::BinarySh);
    }

    #[test]
    fn scramble_is_deterministic_and_validated() {
        assert_eq!(scrambled_hadamard(64, 9).unwrap(), scrambled_hadamard(64, 9).unwrap());
        assert_ne!(scrambled_hadamard(64, 9).unwrap(), scrambled_hadamard(64, 10).unwrap());
        assert!(scrambled_hadamard(8, 1).is_err());
        assert!(scrambled_hadamard(36, 1).is_err());
    }

    #[test]
    fn fill_factor_counts_ones() {
        let ones = PatternMatrix::new(2, 4, vec![1.0; 8], PatternKind::BinaryLearned, 0).unwrap();
        assert_eq!(fill_factor(&ones).unwrap(), 1.0);
        let eye = PatternMatrix::new(1, 4, vec![1.0, 0.0, 0.0, 1.0], PatternKind::BinaryLearned, 0).unwrap();
        assert_eq!(fill_factor(&eye).unwrap(), 0.5);
        let cont = PatternMatrix::new(1, 4, vec![0.3; 4], PatternKind::Continuous, 0).unwrap();
        assert!(fill_factor(&cont).is_err());
    }

    #[test]
    fn sh_fill_factor_matches_row_weights() {
        let n = 4096usize;
        let expect = (n as f64 / 2.0 * (n as f64 - 1.0) + n as f64) / (n * n) as f64;
        for seed in [0, 3, 17] {
            let p = scrambled_hadamard(n, seed).unwrap();
            assert_eq!(fill_factor(&p).unwrap(), expect);
        }
    }

    #[test]
    fn scrambling_preserves_row_weights() {
        let mut base: Vec<usize> = scrambled_hadamard(256, 0)
            .unwrap()
            .rows()
            .map(|r| r.iter().filter(|&&e| e == 1.0).count())
            .collect();
        let mut scr: Vec<usize> = scrambled_hadamard(256, 44)
            .unwrap()
            .rows()
            .map(|r| r.iter().filter(|&&e| e == 1.0).count())
            .collect();
        base.sort_unstable();
        scr.sort_unstable();
        assert_eq!(base, scr);
    }

    fn row_hash(r: &[f32]) -> u64 {
        let mut h = DefaultHasher::new();
        r.iter().map(|e| e.to_bits()).collect::<Vec<_>>().hash(&mut h);
        h.finish()
    }

    #[test]
    fn selection_keeps_dc_and_is_subset() {
        let full = scrambled_hadamard(256, 5).unwrap();
        let sub = select_rows(&full, 40, 7).unwrap();
        assert_eq!(sub.m(), 40);
        let all: HashSet<u64> = full.rows().map(row_hash).collect();
        assert!(sub.rows().all(|r| all.contains(&row_hash(r))));
        assert!(sub.rows().any(|r| r.iter().all(|&e| e == 1.0)));
        assert_eq!(sub, select_rows(&full, 40, 7).unwrap());
        assert_eq!(select_rows(&full, 256, 1).unwrap(), full);
        assert!(select_rows(&full, 257, 1).is_err());
    }

    #[test]
    fn subset_path_matches_full_path() {
        for (n, m, seed) in [(64, 10, 1u64), (256, 77, 12), (1024, 102, 0)] {
            let a = select_rows(&scrambled_hadamard(n, seed).unwrap(), m, seed).unwrap();
            let b = scrambled_hadamard_subset(n, m, seed).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn select_409_of_4096() {
        let p = scrambled_hadamard_subset(4096, 409, 21).unwrap();
        assert_eq!((p.m(), p.n()), (409, 4096));
        let cp = crate::imaging::compression_percentage(p.m(), p.n()).unwrap();
        assert!((cp - 90.01).abs() < 0.005);
    }

    #[test]
    fn spectrum_of_identity_and_orthogonal_rows() {
        let eye = PatternMatrix::identity(16).unwrap();
        assert!(singular_spectrum(&eye).iter().all(|s| (s - 1.0).abs() < 1e-9));
        // Rows of a Sylvester matrix scaled by 3 are orthogonal with norm 3 * sqrt(n).
        let h = sylvester_hadamard(4).unwrap();
        let rows = 6;
        let entries: Vec<f32> = (0..rows * 16).map(|i| 3.0 * h.entries()[i] as f32).collect();
        let p = PatternMatrix::new(rows, 16, entries, PatternKind::Continuous, 0).unwrap();
        for s in singular_spectrum(&p) {
            assert!((s - 12.0).abs() < 1e-9 * 12.0);
        }
    }

    #[test]
    fn spectrum_matches_dense_svd() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let entries: Vec<f32> = (0..32 * 256).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let p = PatternMatrix::new(32, 256, entries.clone(), PatternKind::BinaryLearned, 0).unwrap();
        let ours = singular_spectrum(&p);
        let dense = DMatrix::from_fn(32, 256, |i, j| entries[i * 256 + j] as f64);
        let mut svd: Vec<f64> = dense.svd(false, false).singular_values.iter().copied().collect();
        svd.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in ours.iter().zip(&svd) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn full_sh_spectrum_is_analytic() {
        let n = 256;
        let p = scrambled_hadamard(n, 8).unwrap();
        let got = singular_spectrum(&p);
        let want = binary_hadamard_spectrum(n);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-6 * b, "{a} vs {b}");
        }
        assert!((want[0] - n as f64 / 2.0).abs() < 1.01);
    }

    #[test]
    fn diagnostics_csv() {
        let eye = PatternMatrix::identity(4).unwrap();
        let csv = diagnose(&eye).unwrap().to_csv();
        assert!(csv.starts_with("fill_factor,0.25\nsv,0,"));
        assert_eq!(csv.lines().count(), 5);
    }
}
