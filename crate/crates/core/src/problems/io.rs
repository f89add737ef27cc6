//! Plain-text dataset files.
//!
//! ```text
//! safe-l2o-dataset v1 kind=<lasso|l1l1|nnls> m=<m> n=<n> tau=<τ> train=<N> test=<M> seed=<s> dist=<seen|unseen>
//! <m lines: rows of A, n values each>
//! <for each train instance, then each test instance:
//!     one line with the m entries of d,
//!     one line with the n entries of the generating code>
//! ```
//!
//! Values are space separated decimals with 17 significant digits, which
//! round-trips every `f64` exactly. Lines starting with `#` are comments.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::generate::{Dataset, DatasetHeader};
use super::{Dictionary, ProblemInstance};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &str = "safe-l2o-dataset v1";

fn write_row<W: Write>(w: &mut W, values: impl Iterator<Item = f64>) -> std::io::Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            w.write_all(b" ")?;
        }
        first = false;
        write!(w, "{v:.16e}")?;
    }
    w.write_all(b"\n")
}

pub fn write_dataset_to<W: Write>(ds: &Dataset, w: &mut W) -> std::io::Result<()> {
    let h = &ds.header;
    writeln!(
        w,
        "{DATASET_MAGIC} kind={} m={} n={} tau={:.16e} train={} test={} seed={} dist={}",
        h.kind, h.m, h.n, h.tau, h.n_train, h.n_test, h.seed, h.dist
    )?;
    let a = ds.dictionary().a();
    for row in a.row_iter() {
        write_row(w, row.iter().copied())?;
    }
    for p in ds.train().iter().chain(ds.test()) {
        write_row(w, p.d().iter().copied())?;
        let code = p.generating_code().cloned().unwrap_or_else(|| DVector::zeros(h.n));
        write_row(w, code.iter().copied())?;
    }
    Ok(())
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    write_dataset_to(ds, &mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

fn parse_header(line: &str) -> Result<DatasetHeader> {
    let rest = line
        .strip_prefix(DATASET_MAGIC)
        .ok_or_else(|| Error::Parse(format!("not a dataset file (expected {DATASET_MAGIC:?})")))?;
    let mut kind = None;
    let mut m = None;
    let mut n = None;
    let mut tau = None;
    let mut n_train = None;
    let mut n_test = None;
    let mut seed = None;
    let mut dist = None;
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("malformed header field {field:?}")))?;
        let bad = |_| Error::Parse(format!("bad value for {key}: {value:?}"));
        match key {
            "kind" => kind = Some(value.parse()?),
            "m" => m = Some(value.parse().map_err(bad)?),
            "n" => n = Some(value.parse().map_err(bad)?),
            "tau" => tau = Some(value.parse().map_err(|_| Error::Parse(format!("bad tau {value:?}")))?),
            "train" => n_train = Some(value.parse().map_err(bad)?),
            "test" => n_test = Some(value.parse().map_err(bad)?),
            "seed" => seed = Some(value.parse().map_err(|_| Error::Parse(format!("bad seed {value:?}")))?),
            "dist" => dist = Some(value.parse()?),
            other => return Err(Error::Parse(format!("unknown header field {other:?}"))),
        }
    }
    let missing = |k: &str| Error::Parse(format!("header is missing {k}"));
    Ok(DatasetHeader {
        kind: kind.ok_or_else(|| missing("kind"))?,
        m: m.ok_or_else(|| missing("m"))?,
        n: n.ok_or_else(|| missing("n"))?,
        tau: tau.ok_or_else(|| missing("tau"))?,
        n_train: n_train.ok_or_else(|| missing("train"))?,
        n_test: n_test.ok_or_else(|| missing("test"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
        dist: dist.ok_or_else(|| missing("dist"))?,
    })
}

fn parse_row(line: Option<std::io::Result<String>>, len: usize, what: &str) -> Result<Vec<f64>> {
    let line = line
        .ok_or_else(|| Error::Parse(format!("unexpected end of file reading {what}")))?
        .map_err(|e| Error::Parse(format!("reading {what}: {e}")))?;
    let values = line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad number {t:?} in {what}"))))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != len {
        return Err(Error::Parse(format!("{what}: expected {len} values, found {}", values.len())));
    }
    Ok(values)
}

pub fn read_dataset_from<R: BufRead>(r: R) -> Result<Dataset> {
    let mut lines = r.lines().filter(|l| !matches!(l, Ok(s) if s.starts_with('#')));
    let first = lines
        .next()
        .ok_or_else(|| Error::Parse("empty dataset file".into()))?
        .map_err(|e| Error::Parse(e.to_string()))?;
    let header = parse_header(&first)?;
    let (m, n) = (header.m, header.n);
    let mut a = DMatrix::zeros(m, n);
    for i in 0..m {
        let row = parse_row(lines.next(), n, "dictionary row")?;
        for (j, v) in row.into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    let dict = Arc::new(Dictionary::new(a)?);
    let mut read_split = |count: usize| -> Result<Vec<ProblemInstance>> {
        (0..count)
            .map(|_| {
                let d = DVector::from_vec(parse_row(lines.next(), m, "observation")?);
                let x = DVector::from_vec(parse_row(lines.next(), n, "generating code")?);
                ProblemInstance::new(header.kind, dict.clone(), d, header.tau)?.with_generating_code(x)
            })
            .collect()
    };
    let train = read_split(header.n_train)?;
    let test = read_split(header.n_test)?;
    Ok(Dataset::from_parts(header, dict, train, test))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let f = File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    read_dataset_from(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{generate_lasso, DistributionTag};

    #[test]
    fn round_trip_is_exact() {
        let ds = generate_lasso(6, 9, 0.001, 3, 2, DistributionTag::Unseen, 42).unwrap();
        let mut buf = Vec::new();
        write_dataset_to(&ds, &mut buf).unwrap();
        let back = read_dataset_from(buf.as_slice()).unwrap();
        assert_eq!(back.header, ds.header);
        assert_eq!(back.dictionary().a(), ds.dictionary().a());
        for (x, y) in back.test().iter().zip(ds.test()) {
            assert_eq!(x.d(), y.d());
            assert_eq!(x.generating_code(), y.generating_code());
        }
        let mut again = Vec::new();
        write_dataset_to(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn comment_lines_are_skipped() {
        let ds = generate_lasso(3, 4, 0.001, 1, 1, DistributionTag::Seen, 7).unwrap();
        let mut buf = b"# config {}\n".to_vec();
        write_dataset_to(&ds, &mut buf).unwrap();
        let back = read_dataset_from(buf.as_slice()).unwrap();
        assert_eq!(back.test()[0].d(), ds.test()[0].d());
    }

    #[test]
    fn header_errors() {
        assert!(read_dataset_from("hello\n".as_bytes()).is_err());
        let truncated = format!("{DATASET_MAGIC} kind=lasso m=1 n=1 tau=0 train=1 test=0 seed=1 dist=seen\n1.0\n");
        assert!(read_dataset_from(truncated.as_bytes()).is_err());
        let missing = format!("{DATASET_MAGIC} kind=lasso m=1\n");
        assert!(read_dataset_from(missing.as_bytes()).is_err());
    }
}
