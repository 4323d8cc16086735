//! Dense parameter tables and their on-disk formats.
//!
//! Complex tables store `2k` reals per row: the `k` real parts followed by the
//! `k` imaginary parts. Relation tables store `k` phase angles, so the induced
//! rotation `cos θ + i sin θ` has modulus one by construction.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableKind {
    Entity,
    RelationPhase,
    Prototype,
    GcnWeight,
}

impl TableKind {
    fn code(self) -> u8 {
        match self {
            TableKind::Entity => 0,
            TableKind::RelationPhase => 1,
            TableKind::Prototype => 2,
            TableKind::GcnWeight => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => TableKind::Entity,
            1 => TableKind::RelationPhase,
            2 => TableKind::Prototype,
            3 => TableKind::GcnWeight,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            TableKind::Entity => "entity",
            TableKind::RelationPhase => "relation-phase",
            TableKind::Prototype => "prototype",
            TableKind::GcnWeight => "gcn-weight",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        [
            TableKind::Entity,
            TableKind::RelationPhase,
            TableKind::Prototype,
            TableKind::GcnWeight,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum Initializer {
    /// Uniform in `[-b, b]` with `b = scale · 6 / √dim`; phase tables ignore
    /// the bound and draw from `[-π, π)`.
    Uniform { scale: f64 },
    /// Glorot uniform, `b = √(6 / (rows + width))`.
    Glorot,
    Zeros,
}

impl Default for Initializer {
    fn default() -> Self {
        Initializer::Uniform { scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    kind: TableKind,
    rows: usize,
    dim: usize,
    complex: bool,
    values: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize, kind: TableKind, complex: bool) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "table must have positive size, got {rows}x{dim}"
            )));
        }
        if complex && kind == TableKind::RelationPhase {
            return Err(Error::Shape("phase tables are real-valued".into()));
        }
        let width = if complex { 2 * dim } else { dim };
        Ok(Self {
            kind,
            rows,
            dim,
            complex,
            values: vec![0.0; rows * width],
        })
    }

    pub fn from_values(
        kind: TableKind,
        rows: usize,
        dim: usize,
        complex: bool,
        values: Vec<f64>,
    ) -> Result<Self> {
        let mut t = Self::zeros(rows, dim, kind, complex)?;
        if values.len() != t.values.len() {
            return Err(Error::Shape(format!(
                "expected {} values, got {}",
                t.values.len(),
                values.len()
            )));
        }
        t.values = values;
        Ok(t)
    }

    pub fn kind(&self) -> TableKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Embedding dimension `k`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_complex(&self) -> bool {
        self.complex
    }

    /// Reals per row.
    pub fn width(&self) -> usize {
        if self.complex {
            2 * self.dim
        } else {
            self.dim
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.width();
        &mut self.values[i * w..(i + 1) * w]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn export_text(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        write!(w, "{} {} {}", self.rows, self.dim, self.kind.name()).map_err(io)?;
        if self.complex {
            write!(w, " complex").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" ")).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn import_text(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let header = lines
            .next()
            .ok_or_else(|| Error::EmptyInput(path.display().to_string()))?
            .map_err(|e| Error::io(path, e))?;
        let tok: Vec<&str> = header.split_whitespace().collect();
        if !(3..=4).contains(&tok.len()) {
            return Err(parse_err(1, "header must be `rows dim kind [complex]`".into()));
        }
        let rows: usize = tok[0]
            .parse()
            .map_err(|_| parse_err(1, "bad row count".into()))?;
        let dim: usize = tok[1]
            .parse()
            .map_err(|_| parse_err(1, "bad dim".into()))?;
        let kind = TableKind::from_name(tok[2])
            .ok_or_else(|| parse_err(1, format!("unknown kind `{}`", tok[2])))?;
        let complex = match tok.get(3) {
            None => false,
            Some(&"complex") => true,
            Some(other) => return Err(parse_err(1, format!("unknown flag `{other}`"))),
        };
        let mut t = Self::zeros(rows, dim, kind, complex)?;
        let width = t.width();
        let mut i = 0;
        for (idx, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            if i >= rows {
                return Err(parse_err(idx + 2, "more rows than declared".into()));
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(idx + 2, format!("bad float: {e}")))?;
            if vals.len() != width {
                return Err(parse_err(
                    idx + 2,
                    format!("expected {width} values, got {}", vals.len()),
                ));
            }
            t.row_mut(i).copy_from_slice(&vals);
            i += 1;
        }
        if i != rows {
            return Err(Error::Shape(format!("declared {rows} rows, read {i}")));
        }
        Ok(t)
    }

    const MAGIC: [u8; 4] = *b"PKGE";

    /// 16-byte header (magic, kind, complex flag, 2 reserved, rows u32, dim u32),
    /// then little-endian f64 values row-major.
    pub fn export_binary(&self, path: &Path) -> Result<()> {
        let rows = u32::try_from(self.rows).map_err(|_| Error::Shape("too many rows".into()))?;
        let dim = u32::try_from(self.dim).map_err(|_| Error::Shape("dim too large".into()))?;
        let mut buf = Vec::with_capacity(16 + 8 * self.values.len());
        buf.extend_from_slice(&Self::MAGIC);
        buf.push(self.kind.code());
        buf.push(u8::from(self.complex));
        buf.extend_from_slice(&[0, 0]);
        buf.extend_from_slice(&rows.to_le_bytes());
        buf.extend_from_slice(&dim.to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn import_binary(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: m.to_owned(),
        };
        if bytes.len() < 16 || bytes[..4] != Self::MAGIC {
            return Err(bad("missing embedding header"));
        }
        let kind = TableKind::from_code(bytes[4]).ok_or_else(|| bad("unknown kind code"))?;
        let complex = bytes[5] != 0;
        let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let mut t = Self::zeros(rows, dim, kind, complex)?;
        let body = &bytes[16..];
        if body.len() != 8 * t.values.len() {
            return Err(bad("payload length does not match shape"));
        }
        for (v, chunk) in t.values.iter_mut().zip(body.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(t)
    }
}

/// Creates a table and fills it according to `scheme`.
pub fn init_table(
    rows: usize,
    dim: usize,
    kind: TableKind,
    complex: bool,
    scheme: Initializer,
    rng: &mut Rng,
) -> Result<EmbeddingTable> {
    let mut t = EmbeddingTable::zeros(rows, dim, kind, complex)?;
    let bound = match (kind, scheme) {
        (_, Initializer::Zeros) => return Ok(t),
        (TableKind::RelationPhase, _) => None,
        (_, Initializer::Uniform { scale }) => Some(scale * 6.0 / (dim as f64).sqrt()),
        (_, Initializer::Glorot) => Some((6.0 / (rows + t.width()) as f64).sqrt()),
    };
    match bound {
        None => {
            for v in &mut t.values {
                *v = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            }
        }
        Some(b) if b > 0.0 => {
            for v in &mut t.values {
                *v = rng.random_range(-b..=b);
            }
        }
        Some(_) => {}
    }
    Ok(t)
}

/// Unit complex number for a phase angle.
#[inline]
pub fn phase_to_unit(theta: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (c, s)
}

#[inline]
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn init_is_deterministic() {
        let mk = || {
            init_table(
                5,
                4,
                TableKind::Entity,
                true,
                Initializer::default(),
                &mut stream(3, Stream::EntityInit),
            )
            .unwrap()
        };
        let (a, b) = (mk(), mk());
        assert_eq!(
            a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.width(), 8);
        let bound = 6.0 / 2.0;
        assert!(a.values().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn init_schemes() {
        let mut rng = stream(1, Stream::EntityInit);
        let z = init_table(3, 3, TableKind::Prototype, false, Initializer::Zeros, &mut rng).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        let p = init_table(50, 8, TableKind::RelationPhase, false, Initializer::default(), &mut rng)
            .unwrap();
        let pi = std::f64::consts::PI;
        assert!(p.values().iter().all(|&v| (-pi..pi).contains(&v)));
        assert!(init_table(0, 3, TableKind::Entity, false, Initializer::Zeros, &mut rng).is_err());
    }

    #[test]
    fn phase_modulus_is_one() {
        let mut rng = stream(2, Stream::RelationInit);
        let p = init_table(100, 16, TableKind::RelationPhase, false, Initializer::default(), &mut rng)
            .unwrap();
        for &theta in p.values() {
            let (c, s) = phase_to_unit(theta);
            assert!(((c * c + s * s).sqrt() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn text_and_binary_round_trip() {
        let mut rng = stream(9, Stream::EntityInit);
        let t = init_table(4, 3, TableKind::Entity, true, Initializer::default(), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let txt = dir.path().join("e.txt");
        t.export_text(&txt).unwrap();
        assert_eq!(EmbeddingTable::import_text(&txt).unwrap(), t);
        let bin = dir.path().join("e.bin");
        t.export_binary(&bin).unwrap();
        assert_eq!(std::fs::metadata(&bin).unwrap().len(), 16 + 8 * 24);
        assert_eq!(EmbeddingTable::import_binary(&bin).unwrap(), t);
    }

    #[test]
    fn text_import_rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.txt");
        std::fs::write(&p, "2 2 entity\n1 2\n3\n").unwrap();
        assert!(EmbeddingTable::import_text(&p).is_err());
    }
}
