//! Rating ingestion: text COO parsing, CSR/CSC construction, hold-out
//! splitting, synthetic low-rank data and the binary cache format.
//!
//! A [`SparseRatings`] keeps both orientations of the same matrix because
//! update-X walks rows (CSR) while update-Θ walks columns (CSC).

use std::io::{BufRead, Read, Write};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::factors::FactorMatrix;
use crate::linalg::{derive_seed, dot};

pub const CACHE_MAGIC: &[u8; 4] = b"CMFR";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingTriple {
    pub user: u32,
    pub item: u32,
    pub rating: f32,
}

impl RatingTriple {
    pub fn new(user: u32, item: u32, rating: f32) -> Self {
        RatingTriple { user, item, rating }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Delimiter {
    #[default]
    Tab,
    Comma,
}

impl Delimiter {
    pub fn as_char(self) -> char {
        match self {
            Delimiter::Tab => '\t',
            Delimiter::Comma => ',',
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    pub delimiter: Delimiter,
    /// Input indices start at 1; subtract one on read.
    pub one_based: bool,
    /// Declared `(m, n)`; inferred as max index + 1 when absent.
    pub dims: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CooData {
    pub triples: Vec<RatingTriple>,
    pub m: usize,
    pub n: usize,
}

/// Parses `user<delim>item<delim>rating` lines. Blank lines and lines whose
/// first non-space character is `#` are skipped. Triples keep file order.
pub fn parse_coo<R: BufRead>(reader: R, opts: &ParseOptions) -> Result<CooData> {
    let delim = opts.delimiter.as_char();
    let mut triples = Vec::new();
    let (mut max_u, mut max_v) = (0usize, 0usize);

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split(delim).map(str::trim);
        let (Some(u), Some(v), Some(r)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 3 fields separated by {delim:?}"),
            });
        };
        if fields.next().is_some() {
            return Err(Error::Parse {
                line: lineno,
                message: "more than 3 fields".into(),
            });
        }
        let user = parse_index(u, lineno, opts.one_based, "user")?;
        let item = parse_index(v, lineno, opts.one_based, "item")?;
        let rating: f32 = r.parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("bad rating {r:?}"),
        })?;
        if !rating.is_finite() {
            return Err(Error::NonFiniteRating {
                line: lineno,
                value: rating,
            });
        }
        max_u = max_u.max(user as usize + 1);
        max_v = max_v.max(item as usize + 1);
        triples.push(RatingTriple { user, item, rating });
    }

    let (m, n) = opts.dims.unwrap_or((max_u, max_v));
    Ok(CooData { triples, m, n })
}

fn parse_index(field: &str, line: usize, one_based: bool, what: &str) -> Result<u32> {
    let raw: u64 = field.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad {what} index {field:?}"),
    })?;
    let idx = if one_based {
        raw.checked_sub(1).ok_or_else(|| Error::Parse {
            line,
            message: format!("{what} index 0 in 1-based input"),
        })?
    } else {
        raw
    };
    u32::try_from(idx).map_err(|_| Error::Parse {
        line,
        message: format!("{what} index {idx} exceeds u32"),
    })
}

/// Writes triples as text COO (0-based).
pub fn write_coo<W: Write>(mut w: W, triples: &[RatingTriple], delimiter: Delimiter) -> Result<()> {
    let d = delimiter.as_char();
    for t in triples {
        writeln!(w, "{}{d}{}{d}{}", t.user, t.item, t.rating)?;
    }
    w.flush()?;
    Ok(())
}

/// One orientation of a compressed sparse matrix: CSR when lanes are rows,
/// CSC when lanes are columns.
#[derive(Debug, Clone, Copy)]
pub struct CompressedView<'a> {
    pub ptr: &'a [usize],
    pub idx: &'a [u32],
    pub val: &'a [f32],
    /// Length of the other dimension.
    pub inner_dim: usize,
}

impl<'a> CompressedView<'a> {
    #[inline]
    pub fn lanes(&self) -> usize {
        self.ptr.len() - 1
    }

    #[inline]
    pub fn lane(&self, i: usize) -> (&'a [u32], &'a [f32]) {
        let (s, e) = (self.ptr[i], self.ptr[i + 1]);
        (&self.idx[s..e], &self.val[s..e])
    }

    #[inline]
    pub fn lane_len(&self, i: usize) -> usize {
        self.ptr[i + 1] - self.ptr[i]
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }
}

/// A rating matrix held as paired CSR and CSC structures. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRatings {
    m: usize,
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    row_val: Vec<f32>,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    col_val: Vec<f32>,
}

impl SparseRatings {
    /// Builds both orientations. Duplicate `(user, item)` pairs collapse to
    /// the last occurrence in input order.
    pub fn build(triples: &[RatingTriple], m: usize, n: usize) -> Result<Self> {
        if m > u32::MAX as usize + 1 || n > u32::MAX as usize + 1 {
            return Err(Error::InvalidArgument(format!(
                "dimensions {m}x{n} exceed 32-bit indexing"
            )));
        }
        for (position, t) in triples.iter().enumerate() {
            if t.user as usize >= m || t.item as usize >= n {
                return Err(Error::IndexOutOfBounds {
                    position,
                    user: t.user as u64,
                    item: t.item as u64,
                    m,
                    n,
                });
            }
            if !t.rating.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "triple #{position} has non-finite rating {}",
                    t.rating
                )));
            }
        }

        // Sort positions by (user, item, input order) and keep the last of each run.
        let mut order: Vec<u32> = (0..triples.len() as u32).collect();
        order.sort_unstable_by_key(|&k| {
            let t = &triples[k as usize];
            (t.user, t.item, k)
        });
        let mut keep: Vec<u32> = Vec::with_capacity(order.len());
        for (pos, &k) in order.iter().enumerate() {
            let t = &triples[k as usize];
            let last_of_run = order.get(pos + 1).is_none_or(|&next| {
                let u = &triples[next as usize];
                u.user != t.user || u.item != t.item
            });
            if last_of_run {
                keep.push(k);
            }
        }
        drop(order);
        let nnz = keep.len();

        let mut row_ptr = vec![0usize; m + 1];
        let mut col_idx = Vec::with_capacity(nnz);
        let mut row_val = Vec::with_capacity(nnz);
        let mut col_count = vec![0usize; n + 1];
        for &k in &keep {
            let t = &triples[k as usize];
            row_ptr[t.user as usize + 1] += 1;
            col_count[t.item as usize + 1] += 1;
            col_idx.push(t.item);
            row_val.push(t.rating);
        }
        for i in 0..m {
            row_ptr[i + 1] += row_ptr[i];
        }
        for j in 0..n {
            col_count[j + 1] += col_count[j];
        }
        let col_ptr = col_count.clone();

        // Counting sort into CSC; rows arrive in increasing order, so each column stays sorted.
        let mut next = col_count;
        let mut row_idx = vec![0u32; nnz];
        let mut col_val = vec![0f32; nnz];
        for u in 0..m {
            for p in row_ptr[u]..row_ptr[u + 1] {
                let v = col_idx[p] as usize;
                let dst = next[v];
                row_idx[dst] = u as u32;
                col_val[dst] = row_val[p];
                next[v] += 1;
            }
        }

        Ok(SparseRatings {
            m,
            n,
            row_ptr,
            col_idx,
            row_val,
            col_ptr,
            row_idx,
            col_val,
        })
    }

    pub fn from_coo(coo: &CooData) -> Result<Self> {
        Self::build(&coo.triples, coo.m, coo.n)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn csr(&self) -> CompressedView<'_> {
        CompressedView {
            ptr: &self.row_ptr,
            idx: &self.col_idx,
            val: &self.row_val,
            inner_dim: self.n,
        }
    }

    pub fn csc(&self) -> CompressedView<'_> {
        CompressedView {
            ptr: &self.col_ptr,
            idx: &self.row_idx,
            val: &self.col_val,
            inner_dim: self.m,
        }
    }

    /// Entries in CSR order (row-major, columns increasing).
    pub fn iter_csr(&self) -> impl Iterator<Item = RatingTriple> + '_ {
        (0..self.m).flat_map(move |u| {
            (self.row_ptr[u]..self.row_ptr[u + 1])
                .map(move |p| RatingTriple::new(u as u32, self.col_idx[p], self.row_val[p]))
        })
    }

    /// Entries in CSC order (column-major, rows increasing).
    pub fn iter_csc(&self) -> impl Iterator<Item = RatingTriple> + '_ {
        (0..self.n).flat_map(move |v| {
            (self.col_ptr[v]..self.col_ptr[v + 1])
                .map(move |p| RatingTriple::new(self.row_idx[p], v as u32, self.col_val[p]))
        })
    }

    /// Canonical triples (sorted by user then item, deduplicated).
    pub fn to_triples(&self) -> Vec<RatingTriple> {
        self.iter_csr().collect()
    }

    pub fn memory_bytes(&self) -> usize {
        (self.row_ptr.len() + self.col_ptr.len()) * std::mem::size_of::<usize>()
            + (self.col_idx.len() + self.row_idx.len()) * 4
            + (self.row_val.len() + self.col_val.len()) * 4
    }

    /// Binary cache: `CMFR`, version u32, m u64, n u64, nnz u64, then
    /// row_ptr (u64 x m+1), col_idx (u32 x nnz), values (f32 x nnz), then
    /// col_ptr (u64 x n+1), row_idx (u32 x nnz), values (f32 x nnz). Little-endian.
    pub fn write_cache<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(self.m as u64).to_le_bytes())?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.nnz() as u64).to_le_bytes())?;
        write_ptr(&mut w, &self.row_ptr)?;
        write_u32s(&mut w, &self.col_idx)?;
        write_f32s(&mut w, &self.row_val)?;
        write_ptr(&mut w, &self.col_ptr)?;
        write_u32s(&mut w, &self.row_idx)?;
        write_f32s(&mut w, &self.col_val)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_cache<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Format("not a CMFR ratings cache".into()));
        }
        let version = read_u32(&mut r, "version")?;
        if version != CACHE_VERSION {
            return Err(Error::Format(format!("unsupported cache version {version}")));
        }
        let m = read_u64(&mut r, "m")? as usize;
        let n = read_u64(&mut r, "n")? as usize;
        let nnz = read_u64(&mut r, "nnz")? as usize;
        let row_ptr = read_ptr(&mut r, m + 1, "row_ptr")?;
        let col_idx = read_u32s(&mut r, nnz, "col_idx")?;
        let row_val = read_f32s(&mut r, nnz, "csr values")?;
        let col_ptr = read_ptr(&mut r, n + 1, "col_ptr")?;
        let row_idx = read_u32s(&mut r, nnz, "row_idx")?;
        let col_val = read_f32s(&mut r, nnz, "csc values")?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after CSC arrays".into()));
        }
        let ratings = SparseRatings {
            m,
            n,
            row_ptr,
            col_idx,
            row_val,
            col_ptr,
            row_idx,
            col_val,
        };
        ratings.validate()?;
        Ok(ratings)
    }

    /// Checks the structural invariants; used on untrusted input.
    pub fn validate(&self) -> Result<()> {
        let nnz = self.nnz();
        check_ptr(&self.row_ptr, nnz, "row_ptr")?;
        check_ptr(&self.col_ptr, nnz, "col_ptr")?;
        if self.row_val.len() != nnz || self.row_idx.len() != nnz || self.col_val.len() != nnz {
            return Err(Error::Format("array lengths disagree with nnz".into()));
        }
        for u in 0..self.m {
            let cols = &self.col_idx[self.row_ptr[u]..self.row_ptr[u + 1]];
            if cols.iter().any(|&v| v as usize >= self.n) {
                return Err(Error::Format(format!("row {u} has a column index >= n")));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Format(format!("row {u} columns not strictly increasing")));
            }
        }
        if self.row_idx.iter().any(|&u| u as usize >= self.m) {
            return Err(Error::Format("CSC row index >= m".into()));
        }
        if self.row_val.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite rating".into()));
        }
        let mut a: Vec<_> = self.iter_csr().map(triple_key).collect();
        let mut b: Vec<_> = self.iter_csc().map(triple_key).collect();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Err(Error::Format("CSR and CSC disagree".into()));
        }
        Ok(())
    }
}

fn triple_key(t: RatingTriple) -> (u32, u32, u32) {
    (t.user, t.item, t.rating.to_bits())
}

fn check_ptr(ptr: &[usize], nnz: usize, what: &str) -> Result<()> {
    if ptr.first() != Some(&0) || ptr.last() != Some(&nnz) {
        return Err(Error::Format(format!("{what} must start at 0 and end at nnz")));
    }
    if ptr.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Format(format!("{what} is decreasing")));
    }
    Ok(())
}

fn write_ptr<W: Write>(w: &mut W, ptr: &[usize]) -> Result<()> {
    for &p in ptr {
        w.write_all(&(p as u64).to_le_bytes())?;
    }
    Ok(())
}

fn write_u32s<W: Write>(w: &mut W, xs: &[u32]) -> Result<()> {
    for &x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, xs: &[f32]) -> Result<()> {
    for &x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated while reading {what}")),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R, len: usize, what: &str) -> Result<Vec<u8>> {
    // Grow in bounded steps so a corrupt header cannot force a huge allocation.
    const STEP: usize = 1 << 24;
    let mut out = Vec::new();
    while out.len() < len {
        let take = STEP.min(len - out.len());
        let start = out.len();
        out.resize(start + take, 0);
        read_exact(r, &mut out[start..], what)?;
    }
    Ok(out)
}

fn read_ptr<R: Read>(r: &mut R, count: usize, what: &str) -> Result<Vec<usize>> {
    let bytes = read_bytes(r, count.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?, what)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect())
}

fn read_u32s<R: Read>(r: &mut R, count: usize, what: &str) -> Result<Vec<u32>> {
    let bytes = read_bytes(r, count.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?, what)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, count: usize, what: &str) -> Result<Vec<f32>> {
    let bytes = read_bytes(r, count.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?, what)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Random hold-out split. `|test| = round(test_fraction * total)`; both
/// halves keep input order.
pub fn split_holdout(
    triples: &[RatingTriple],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<RatingTriple>, Vec<RatingTriple>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let total = triples.len();
    let n_test = (test_fraction * total as f64).round() as usize;
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut is_test = vec![false; total];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let mut train = Vec::with_capacity(total - n_test);
    let mut test = Vec::with_capacity(n_test);
    for (t, flag) in triples.iter().zip(is_test) {
        if flag {
            test.push(*t);
        } else {
            train.push(*t);
        }
    }
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub m: usize,
    pub n: usize,
    pub f: usize,
    pub density: f64,
    pub noise_sigma: f32,
    pub seed: u64,
}

/// Ground truth behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub x_true: FactorMatrix,
    pub theta_true: FactorMatrix,
    pub noise_sigma: f32,
}

/// Low-rank synthetic ratings: factors i.i.d. `uniform[-0.5, 0.5]`,
/// `round(density*m*n)` distinct positions, rating = `x_u . theta_v` plus
/// Gaussian noise. Output is sorted by (user, item).
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<(Vec<RatingTriple>, SyntheticTruth)> {
    if cfg.f == 0 {
        return Err(Error::InvalidArgument("f must be at least 1".into()));
    }
    if !(cfg.density > 0.0 && cfg.density <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "density must lie in (0, 1], got {}",
            cfg.density
        )));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be finite and non-negative, got {}",
            cfg.noise_sigma
        )));
    }
    let cells = cfg.m.checked_mul(cfg.n).ok_or_else(|| {
        Error::InvalidArgument("m*n overflows".into())
    })?;
    let count = (cfg.density * cells as f64).round() as usize;
    if count < 1 {
        return Err(Error::InvalidArgument(format!(
            "density {} of a {}x{} matrix selects no entries",
            cfg.density, cfg.m, cfg.n
        )));
    }
    if cfg.m > u32::MAX as usize || cfg.n > u32::MAX as usize {
        return Err(Error::InvalidArgument("dimensions exceed 32-bit indexing".into()));
    }

    let x_true = FactorMatrix::random_uniform(cfg.m, cfg.f, 0.5, derive_seed(cfg.seed, 1))?;
    let theta_true = FactorMatrix::random_uniform(cfg.n, cfg.f, 0.5, derive_seed(cfg.seed, 2))?;

    let mut pos_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3));
    let mut positions = index::sample(&mut pos_rng, cells, count).into_vec();
    positions.sort_unstable();

    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 4));
    let noise = Normal::new(0.0f32, cfg.noise_sigma.max(0.0))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let triples = positions
        .into_iter()
        .map(|p| {
            let (u, v) = (p / cfg.n, p % cfg.n);
            let mut r = dot(x_true.row(u), theta_true.row(v));
            if cfg.noise_sigma > 0.0 {
                r += noise.sample(&mut noise_rng);
            }
            RatingTriple::new(u as u32, v as u32, r)
        })
        .collect();

    Ok((
        triples,
        SyntheticTruth {
            x_true,
            theta_true,
            noise_sigma: cfg.noise_sigma,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_str(s: &str) -> Result<CooData> {
        parse_coo(s.as_bytes(), &ParseOptions::default())
    }

    #[test]
    fn parses_smallest_input() {
        let coo = parse_str("0\t0\t5.0\n1\t2\t3.0").unwrap();
        assert_eq!(coo.triples.len(), 2);
        assert_eq!((coo.m, coo.n), (2, 3));
        assert_eq!(coo.triples[1], RatingTriple::new(1, 2, 3.0));
    }

    #[test]
    fn empty_stream_is_empty_matrix() {
        let coo = parse_str("").unwrap();
        assert!(coo.triples.is_empty());
        assert_eq!((coo.m, coo.n), (0, 0));
        let r = SparseRatings::from_coo(&coo).unwrap();
        assert_eq!(r.nnz(), 0);
    }

    #[test]
    fn comments_csv_and_one_based() {
        let opts = ParseOptions {
            delimiter: Delimiter::Comma,
            one_based: true,
            dims: None,
        };
        let coo = parse_coo("# header\n1,1,2.5\n\n 3 , 2 , 1\n".as_bytes(), &opts).unwrap();
        assert_eq!(coo.triples, vec![RatingTriple::new(0, 0, 2.5), RatingTriple::new(2, 1, 1.0)]);
        assert_eq!((coo.m, coo.n), (3, 2));
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        match parse_str("0\t0\t1\n0\t1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse_str("0\t0\tabc") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_str("0\t0\tNaN"),
            Err(Error::NonFiniteRating { line: 1, .. })
        ));
        assert!(matches!(parse_str("0\t0\tinf"), Err(Error::NonFiniteRating { .. })));
        assert!(matches!(parse_str("-1\t0\t1"), Err(Error::Parse { .. })));
    }

    #[test]
    fn duplicate_resolved_last_wins() {
        // 10 lines, (3,1) appears twice: 2.0 then 4.5.
        let text = "0\t0\t1\n0\t2\t2\n1\t1\t3\n2\t0\t4\n3\t1\t2.0\n\
                    1\t3\t5\n2\t2\t1\n3\t3\t2\n3\t1\t4.5\n0\t3\t1\n";
        let coo = parse_str(text).unwrap();
        assert_eq!(coo.triples.len(), 10);
        let r = SparseRatings::from_coo(&coo).unwrap();
        assert_eq!(r.nnz(), 9);
        let (cols, vals) = r.csr().lane(3);
        assert_eq!(cols, &[1, 3]);
        assert_eq!(vals, &[4.5, 2.0]);
        let (rows, vals) = r.csc().lane(1);
        assert_eq!(rows, &[1, 3]);
        assert_eq!(vals, &[3.0, 4.5]);
    }

    #[test]
    fn identity_pattern() {
        let t = vec![RatingTriple::new(0, 0, 1.0), RatingTriple::new(1, 1, 1.0)];
        let r = SparseRatings::build(&t, 2, 2).unwrap();
        assert_eq!(r.csr().ptr, &[0, 1, 2]);
        assert_eq!(r.csr().idx, &[0, 1]);
        assert_eq!(r.csc().ptr, &[0, 1, 2]);
    }

    #[test]
    fn out_of_range_names_triple() {
        let t = vec![RatingTriple::new(0, 0, 1.0), RatingTriple::new(0, 5, 1.0)];
        match SparseRatings::build(&t, 2, 3) {
            Err(Error::IndexOutOfBounds { position, item, .. }) => {
                assert_eq!(position, 1);
                assert_eq!(item, 5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_rows_and_columns_allowed() {
        let t = vec![RatingTriple::new(2, 3, 1.0)];
        let r = SparseRatings::build(&t, 4, 5).unwrap();
        assert_eq!(r.csr().lane_len(0), 0);
        assert_eq!(r.csr().lane_len(2), 1);
        assert_eq!(r.csc().lane_len(3), 1);
        r.validate().unwrap();
    }

    #[test]
    fn split_fraction_and_determinism() {
        let t: Vec<_> = (0..100).map(|i| RatingTriple::new(i, 0, i as f32)).collect();
        let (train, test) = split_holdout(&t, 0.10, 42).unwrap();
        assert_eq!(test.len(), 10);
        assert_eq!(train.len(), 90);
        let mut all: Vec<u32> = train.iter().chain(&test).map(|t| t.user).collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let again = split_holdout(&t, 0.10, 42).unwrap();
        assert_eq!(again, (train, test));
        assert!(split_holdout(&t, 0.0, 1).is_err());
        assert!(split_holdout(&t, 1.0, 1).is_err());
        assert!(split_holdout(&t, f64::NAN, 1).is_err());
    }

    #[test]
    fn noiseless_synthetic_equals_dot_products() {
        let cfg = SynthConfig {
            m: 30,
            n: 20,
            f: 4,
            density: 0.3,
            noise_sigma: 0.0,
            seed: 5,
        };
        let (t, truth) = gen_synthetic(&cfg).unwrap();
        assert_eq!(t.len(), 180);
        for r in &t {
            let exact = crate::linalg::dot_f64(
                truth.x_true.row(r.user as usize),
                truth.theta_true.row(r.item as usize),
            );
            assert!((r.rating as f64 - exact).abs() < 1e-6);
        }
        assert!(truth.x_true.as_slice().iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn synthetic_rank_one_dense_reconstruction() {
        let cfg = SynthConfig {
            m: 4,
            n: 4,
            f: 1,
            density: 1.0,
            noise_sigma: 0.0,
            seed: 9,
        };
        let (t, truth) = gen_synthetic(&cfg).unwrap();
        assert_eq!(t.len(), 16);
        // Dense reconstruction x * theta^T, cell by cell in row-major order.
        let mut k = 0;
        for u in 0..4 {
            for v in 0..4 {
                let expected = truth.x_true.row(u)[0] * truth.theta_true.row(v)[0];
                assert_eq!(t[k], RatingTriple::new(u as u32, v as u32, expected));
                k += 1;
            }
        }
    }

    #[test]
    fn synthetic_is_reproducible_and_validated() {
        let cfg = SynthConfig {
            m: 50,
            n: 40,
            f: 3,
            density: 0.1,
            noise_sigma: 0.1,
            seed: 11,
        };
        assert_eq!(gen_synthetic(&cfg).unwrap(), gen_synthetic(&cfg).unwrap());
        let bad = SynthConfig { density: 0.0, ..cfg.clone() };
        assert!(gen_synthetic(&bad).is_err());
        let tiny = SynthConfig { m: 2, n: 2, density: 0.1, ..cfg.clone() };
        assert!(gen_synthetic(&tiny).is_err());
        let no_f = SynthConfig { f: 0, ..cfg };
        assert!(gen_synthetic(&no_f).is_err());
    }

    #[test]
    fn cache_roundtrip_and_truncation() {
        let t = vec![
            RatingTriple::new(0, 1, 1.5),
            RatingTriple::new(2, 0, -2.0),
            RatingTriple::new(2, 3, 4.0),
        ];
        let r = SparseRatings::build(&t, 3, 4).unwrap();
        let mut buf = Vec::new();
        r.write_cache(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"CMFR");
        assert_eq!(buf.len(), 4 + 4 + 24 + 8 * 4 + 3 * 8 + 8 * 5 + 3 * 8);
        let back = SparseRatings::read_cache(buf.as_slice()).unwrap();
        assert_eq!(back, r);
        assert!(matches!(
            SparseRatings::read_cache(&buf[..buf.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(SparseRatings::read_cache(bad.as_slice()), Err(Error::Format(_))));
    }
}
