//! Plain-text parameter files.
//!
//! ```text
//! safe-l2o-params v1 scheme=<alista|lista-cp|dladmm|nnlspg> layers=<K> m=<m> n=<n>
//! <tensor blocks>
//! ```
//!
//! Each tensor block is a line `<name> <rows> <cols>` followed by one line
//! holding the entries in row-major order. Blocks appear in a fixed order:
//! the shared matrix first (`W` for ALISTA, `W1` for DLADMM), then layer by
//! layer (`k` counts from 1):
//!
//! * ALISTA: `theta.k 1 1`, `gamma.k 1 1`
//! * LISTA-CP: `theta.k 1 1`, `W.k m n`
//! * DLADMM: `alpha.k m 1`, `beta.k n 1`, `gamma.k m 1`, `sigma.k n 1`, `xi.k m 1`
//! * NNLS-PG: `zeta.k n m`
//!
//! Lines starting with `#` are comments and are skipped on reading.
//!
//! Values use the shortest decimal form that parses back to the same `f64`,
//! so files round-trip bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{AlistaLayer, DladmmLayer, ListaCpLayer, NnlspgLayer, SchemeKind, SchemeParams};
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: &str = "safe-l2o-params v1";

fn write_tensor<W: Write>(w: &mut W, name: &str, t: &DMatrix<f64>) -> std::io::Result<()> {
    writeln!(w, "{name} {} {}", t.nrows(), t.ncols())?;
    let mut first = true;
    for i in 0..t.nrows() {
        for j in 0..t.ncols() {
            if !first {
                w.write_all(b" ")?;
            }
            first = false;
            write!(w, "{:e}", t[(i, j)])?;
        }
    }
    w.write_all(b"\n")
}

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Write parameters; `(m, n)` are recorded for schemes whose tensors do not
/// determine them (an ALISTA file always carries `W`).
pub fn write_params_to<W: Write>(params: &SchemeParams, m: usize, n: usize, w: &mut W) -> Result<()> {
    if let Some(dims) = params.dims() {
        if dims != (m, n) {
            return Err(Error::dims(format!("parameters are {dims:?}, header says ({m}, {n})")));
        }
    }
    let io = |e| Error::Io { path: "<writer>".into(), source: e };
    writeln!(w, "{PARAMS_MAGIC} scheme={} layers={} m={m} n={n}", params.kind(), params.depth()).map_err(io)?;
    let mut put = |name: String, t: &DMatrix<f64>| write_tensor(w, &name, t).map_err(io);
    match params {
        SchemeParams::Alista { w: wm, layers } => {
            put("W".into(), wm)?;
            for (k, l) in layers.iter().enumerate() {
                put(format!("theta.{}", k + 1), &scalar(l.theta))?;
                put(format!("gamma.{}", k + 1), &scalar(l.gamma))?;
            }
        }
        SchemeParams::ListaCp { layers } => {
            for (k, l) in layers.iter().enumerate() {
                put(format!("theta.{}", k + 1), &scalar(l.theta))?;
                put(format!("W.{}", k + 1), &l.w)?;
            }
        }
        SchemeParams::Dladmm { w1, layers } => {
            put("W1".into(), w1)?;
            for (k, l) in layers.iter().enumerate() {
                for (name, v) in [("alpha", &l.alpha), ("beta", &l.beta), ("gamma", &l.gamma), ("sigma", &l.sigma), ("xi", &l.xi)] {
                    put(format!("{name}.{}", k + 1), &column(v))?;
                }
            }
        }
        SchemeParams::Nnlspg { layers } => {
            for (k, l) in layers.iter().enumerate() {
                put(format!("zeta.{}", k + 1), &l.zeta)?;
            }
        }
    }
    Ok(())
}

pub fn write_params(params: &SchemeParams, m: usize, n: usize, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    write_params_to(params, m, n, &mut w).map_err(|e| match e {
        Error::Io { source, .. } => io_err(source),
        other => other,
    })?;
    w.flush().map_err(io_err)
}

struct Reader<I> {
    lines: I,
    line_no: usize,
}

impl<I: Iterator<Item = std::io::Result<String>>> Reader<I> {
    fn line(&mut self) -> Result<String> {
        loop {
            self.line_no += 1;
            match self.lines.next() {
                Some(Ok(l)) if l.starts_with('#') => continue,
                Some(Ok(l)) => return Ok(l),
                Some(Err(e)) => return Err(Error::Parse(format!("line {}: {e}", self.line_no))),
                None => return Err(Error::Parse(format!("unexpected end of file at line {}", self.line_no))),
            }
        }
    }

    fn tensor(&mut self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let head = self.line()?;
        let fields: Vec<&str> = head.split_whitespace().collect();
        let expected = [name.to_string(), rows.to_string(), cols.to_string()];
        if fields != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Parse(format!(
                "line {}: expected tensor header {:?}, found {head:?}",
                self.line_no,
                expected.join(" ")
            )));
        }
        let body = self.line()?;
        let values = body
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("line {}: {e}", self.line_no)))?;
        if values.len() != rows * cols {
            return Err(Error::Parse(format!(
                "line {}: tensor {name} has {} values, expected {}",
                self.line_no,
                values.len(),
                rows * cols
            )));
        }
        Ok(DMatrix::from_row_slice(rows, cols, &values))
    }

    fn scalar(&mut self, name: &str) -> Result<f64> {
        Ok(self.tensor(name, 1, 1)?[(0, 0)])
    }

    fn vector(&mut self, name: &str, len: usize) -> Result<DVector<f64>> {
        Ok(self.tensor(name, len, 1)?.column(0).into_owned())
    }
}

/// Parsed header: scheme kind, depth and `(m, n)`.
fn parse_header(line: &str) -> Result<(SchemeKind, usize, usize, usize)> {
    let rest = line
        .strip_prefix(PARAMS_MAGIC)
        .ok_or_else(|| Error::Parse(format!("not a parameter file (expected {PARAMS_MAGIC:?})")))?;
    let (mut kind, mut layers, mut m, mut n) = (None, None, None, None);
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("malformed header field {field:?}")))?;
        let count = || value.parse::<usize>().map_err(|_| Error::Parse(format!("bad count in {field:?}")));
        match key {
            "scheme" => kind = Some(value.parse::<SchemeKind>()?),
            "layers" => layers = Some(count()?),
            "m" => m = Some(count()?),
            "n" => n = Some(count()?),
            _ => return Err(Error::Parse(format!("unknown header field {key:?}"))),
        }
    }
    let missing = |what| Error::Parse(format!("header is missing {what}"));
    Ok((
        kind.ok_or_else(|| missing("scheme"))?,
        layers.ok_or_else(|| missing("layers"))?,
        m.ok_or_else(|| missing("m"))?,
        n.ok_or_else(|| missing("n"))?,
    ))
}

/// Read parameters; returns them with the recorded `(m, n)`.
pub fn read_params_from<R: BufRead>(r: R) -> Result<(SchemeParams, usize, usize)> {
    let mut rd = Reader { lines: r.lines(), line_no: 0 };
    let (kind, depth, m, n) = parse_header(&rd.line()?)?;
    let params = match kind {
        SchemeKind::Alista => {
            let w = rd.tensor("W", m, n)?;
            let mut layers = Vec::with_capacity(depth);
            for k in 1..=depth {
                let theta = rd.scalar(&format!("theta.{k}"))?;
                let gamma = rd.scalar(&format!("gamma.{k}"))?;
                layers.push(AlistaLayer { theta, gamma });
            }
            SchemeParams::Alista { w, layers }
        }
        SchemeKind::ListaCp => {
            let mut layers = Vec::with_capacity(depth);
            for k in 1..=depth {
                let theta = rd.scalar(&format!("theta.{k}"))?;
                let w = rd.tensor(&format!("W.{k}"), m, n)?;
                layers.push(ListaCpLayer { theta, w });
            }
            SchemeParams::ListaCp { layers }
        }
        SchemeKind::Dladmm => {
            let w1 = rd.tensor("W1", m, n)?;
            let mut layers = Vec::with_capacity(depth);
            for k in 1..=depth {
                layers.push(DladmmLayer {
                    alpha: rd.vector(&format!("alpha.{k}"), m)?,
                    beta: rd.vector(&format!("beta.{k}"), n)?,
                    gamma: rd.vector(&format!("gamma.{k}"), m)?,
                    sigma: rd.vector(&format!("sigma.{k}"), n)?,
                    xi: rd.vector(&format!("xi.{k}"), m)?,
                });
            }
            SchemeParams::Dladmm { w1, layers }
        }
        SchemeKind::Nnlspg => {
            let mut layers = Vec::with_capacity(depth);
            for k in 1..=depth {
                layers.push(NnlspgLayer { zeta: rd.tensor(&format!("zeta.{k}"), n, m)? });
            }
            SchemeParams::Nnlspg { layers }
        }
    };
    Ok((params, m, n))
}

pub fn read_params(path: &Path) -> Result<(SchemeParams, usize, usize)> {
    let f = File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    read_params_from(BufReader::new(f))
}
