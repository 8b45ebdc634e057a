use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cmf_core::data::{CooData, Delimiter, ParseOptions, CACHE_MAGIC};
use cmf_core::{parse_coo, RatingTriple, SparseRatings};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TextDelimiter {
    #[default]
    Tab,
    Comma,
}

impl From<TextDelimiter> for Delimiter {
    fn from(d: TextDelimiter) -> Self {
        match d {
            TextDelimiter::Tab => Delimiter::Tab,
            TextDelimiter::Comma => Delimiter::Comma,
        }
    }
}

/// How a ratings file is read. Binary caches are recognized by their magic
/// bytes; everything else is parsed as delimited text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TextFormat {
    pub delimiter: TextDelimiter,
    pub one_based: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
    pub nnz: usize,
    pub m: usize,
    pub n: usize,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let mut file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut hasher = Sha256::new();
    let bytes = std::io::copy(&mut file, &mut hasher).with_context(|| format!("cannot read {}", path.display()))?;
    Ok((hex::encode(hasher.finalize()), bytes))
}

fn is_cache(path: &Path) -> Result<bool> {
    let mut file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut magic = [0u8; 4];
    let mut read = 0;
    while read < 4 {
        match file.read(&mut magic[read..])? {
            0 => break,
            k => read += k,
        }
    }
    Ok(read == 4 && &magic == CACHE_MAGIC)
}

pub enum Loaded {
    Cache(SparseRatings),
    Text(CooData),
}

impl Loaded {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Loaded::Cache(r) => (r.m(), r.n()),
            Loaded::Text(c) => (c.m, c.n),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            Loaded::Cache(r) => r.nnz(),
            Loaded::Text(c) => c.triples.len(),
        }
    }
}

pub fn load(path: &Path, format: TextFormat, dims: Option<(usize, usize)>) -> Result<Loaded> {
    let ctx = || format!("reading {}", path.display());
    if is_cache(path)? {
        let file = File::open(path).with_context(ctx)?;
        let ratings = SparseRatings::read_cache(BufReader::new(file)).with_context(ctx)?;
        return Ok(Loaded::Cache(ratings));
    }
    let file = File::open(path).with_context(ctx)?;
    let opts = ParseOptions {
        delimiter: format.delimiter.into(),
        one_based: format.one_based,
        dims,
    };
    Ok(Loaded::Text(parse_coo(BufReader::new(file), &opts).with_context(ctx)?))
}

pub fn fingerprint(role: &str, path: &Path, loaded: &Loaded) -> Result<Fingerprint> {
    let (sha256, bytes) = sha256_file(path)?;
    let (m, n) = loaded.dims();
    Ok(Fingerprint {
        role: role.to_string(),
        path: path.to_path_buf(),
        sha256,
        bytes,
        nnz: loaded.nnz(),
        m,
        n,
    })
}

/// A training matrix plus an optional held-out set, sharing one shape.
pub struct Split {
    pub train: SparseRatings,
    pub test: Vec<RatingTriple>,
    pub fingerprints: Vec<Fingerprint>,
}

impl Split {
    pub fn dims(&self) -> (usize, usize) {
        (self.train.m(), self.train.n())
    }
}

/// Loads `train` and `test`. Text inputs without explicit dims take the
/// larger inferred shape of the two files so both index the same model.
pub fn load_split(
    train: &Path,
    test: Option<&Path>,
    format: TextFormat,
    dims: Option<(usize, usize)>,
) -> Result<Split> {
    let train_l = load(train, format, dims)?;
    let test_l = test.map(|p| load(p, format, dims)).transpose()?;
    let mut fingerprints = vec![fingerprint("train", train, &train_l)?];
    if let (Some(p), Some(l)) = (test, &test_l) {
        fingerprints.push(fingerprint("test", p, l)?);
    }
    let (m, n) = match (&train_l, &test_l, dims) {
        (_, _, Some(d)) => d,
        (Loaded::Cache(r), _, None) => (r.m(), r.n()),
        (Loaded::Text(c), t, None) => {
            let (tm, tn) = t.as_ref().map(Loaded::dims).unwrap_or((0, 0));
            (c.m.max(tm), c.n.max(tn))
        }
    };
    let train_r = match train_l {
        Loaded::Cache(r) => r,
        Loaded::Text(c) => SparseRatings::build(&c.triples, m, n).with_context(|| format!("building {}", train.display()))?,
    };
    let test_t = match test_l {
        None => Vec::new(),
        Some(Loaded::Cache(r)) => r.to_triples(),
        Some(Loaded::Text(c)) => c.triples,
    };
    Ok(Split {
        train: train_r,
        test: test_t,
        fingerprints,
    })
}

/// Fails when a file no longer matches the fingerprint recorded for it.
pub fn verify(fp: &Fingerprint) -> Result<()> {
    let (sha, _) = sha256_file(&fp.path)?;
    anyhow::ensure!(
        sha == fp.sha256,
        crate::DataError(format!(
            "{} changed since the manifest was written (sha256 {} != {})",
            fp.path.display(),
            sha,
            fp.sha256
        ))
    );
    Ok(())
}
