//! Embedding tables and similarity kernels.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("zero vector")]
    ZeroVector,
    #[error("non-finite value")]
    NonFinite,
    #[error("unknown id {0}")]
    MissingId(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for EmbedError {
    fn from(e: std::io::Error) -> Self {
        EmbedError::Io(e.to_string())
    }
}

/// Dense finite vector of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::DimMismatch {
                expected: 1,
                got: 0,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(Vector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit-norm copy; errors on the zero vector.
    pub fn normalized(&self) -> Result<Vector, EmbedError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(EmbedError::ZeroVector);
        }
        Ok(Vector(self.0.iter().map(|v| v / n).collect()))
    }

    /// Component-wise mean of a non-empty set of equal-dimension vectors.
    pub fn mean<'a, I>(vectors: I) -> Result<Vector, EmbedError>
    where
        I: IntoIterator<Item = &'a Vector>,
    {
        let mut acc: Option<Vec<f64>> = None;
        let mut n = 0usize;
        for v in vectors {
            match acc.as_mut() {
                None => acc = Some(v.0.clone()),
                Some(a) => {
                    if a.len() != v.dim() {
                        return Err(EmbedError::DimMismatch {
                            expected: a.len(),
                            got: v.dim(),
                        });
                    }
                    a.iter_mut().zip(&v.0).for_each(|(x, y)| *x += y);
                }
            }
            n += 1;
        }
        let acc = acc.ok_or(EmbedError::ZeroVector)?;
        Ok(Vector(acc.into_iter().map(|x| x / n as f64).collect()))
    }
}

pub fn dot(a: &Vector, b: &Vector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum())
}

pub fn cosine(a: &Vector, b: &Vector) -> Result<f64, EmbedError> {
    let d = dot(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((d / (na * nb)).clamp(-1.0, 1.0))
}

/// Deterministic unit-norm vector seeded from `sha256(seed, id)`.
pub fn synthetic_embed(id: &str, dim: usize, seed: u64) -> Vector {
    assert!(dim > 0, "synthetic_embed requires dim > 0");
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(key);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            return Vector(v.into_iter().map(|x| x / n).collect());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Concept,
    Context,
}

impl fmt::Display for TableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TableKind::Concept => "concept",
            TableKind::Context => "context",
        })
    }
}

impl FromStr for TableKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "concept" => Ok(TableKind::Concept),
            "context" => Ok(TableKind::Context),
            other => Err(format!("unknown table kind {other:?}")),
        }
    }
}

/// Identifier → vector map with a shared dimension.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    kind: TableKind,
    entries: BTreeMap<String, Vector>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, kind: TableKind) -> Self {
        EmbeddingTable {
            dim,
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, v: Vector) -> Result<(), EmbedError> {
        let id = id.into();
        if v.dim() != self.dim {
            return Err(EmbedError::DimMismatch {
                expected: self.dim,
                got: v.dim(),
            });
        }
        if self.entries.contains_key(&id) {
            return Err(EmbedError::DuplicateId(id));
        }
        self.entries.insert(id, v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> TableKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Result<&Vector, EmbedError> {
        self.entries
            .get(id)
            .ok_or_else(|| EmbedError::MissingId(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Vector)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Parses the text format: a `dim=<n> kind=<concept|context>` header,
    /// then `id v1 v2 ... vn` per line.
    pub fn read<R: Read>(reader: R, kind: TableKind) -> Result<Self, EmbedError> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| EmbedError::ParseError {
                line: 1,
                message: "missing header".into(),
            })?;
        let (dim, declared) = parse_header(&header)?;
        if declared != kind {
            return Err(EmbedError::ParseError {
                line: 1,
                message: format!("table kind is {declared}, expected {kind}"),
            });
        }
        let mut table = EmbeddingTable::new(dim, kind);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            let mut parts = line.split_whitespace();
            let Some(id) = parts.next() else { continue };
            let values = parts
                .map(|p| {
                    p.parse::<f64>().map_err(|e| EmbedError::ParseError {
                        line: lineno,
                        message: format!("{p:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let v = Vector::new(values).map_err(|e| match e {
                EmbedError::NonFinite => EmbedError::ParseError {
                    line: lineno,
                    message: "non-finite value".into(),
                },
                _ => EmbedError::DimMismatch {
                    expected: dim,
                    got: 0,
                },
            })?;
            table.insert(id, v)?;
        }
        Ok(table)
    }

    pub fn load(path: &Path, kind: TableKind) -> Result<Self, EmbedError> {
        let f = std::fs::File::open(path)?;
        Self::read(f, kind)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), EmbedError> {
        writeln!(w, "dim={} kind={}", self.dim, self.kind)?;
        for (id, v) in &self.entries {
            write!(w, "{id}")?;
            for x in v.values() {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn parse_header(header: &str) -> Result<(usize, TableKind), EmbedError> {
    let bad = |m: String| EmbedError::ParseError {
        line: 1,
        message: m,
    };
    let mut dim = None;
    let mut kind = None;
    for tok in header.split_whitespace() {
        match tok.split_once('=') {
            Some(("dim", v)) => dim = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            Some(("kind", v)) => kind = Some(v.parse::<TableKind>().map_err(bad)?),
            _ => return Err(bad(format!("unexpected header token {tok:?}"))),
        }
    }
    match (dim, kind) {
        (Some(d), Some(k)) if d > 0 => Ok((d, k)),
        _ => Err(bad("header must be `dim=<n> kind=<concept|context>`".into())),
    }
}

/// Vector lookup by identifier, either from a loaded table or synthesized on demand.
#[derive(Debug, Clone)]
pub enum EmbeddingSource {
    Table(EmbeddingTable),
    Synthetic { dim: usize, seed: u64 },
}

impl EmbeddingSource {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingSource::Table(t) => t.dim(),
            EmbeddingSource::Synthetic { dim, .. } => *dim,
        }
    }

    pub fn vector(&self, id: &str) -> Result<Vector, EmbedError> {
        match self {
            EmbeddingSource::Table(t) => t.get(id).cloned(),
            EmbeddingSource::Synthetic { dim, seed } => Ok(synthetic_embed(id, *dim, *seed)),
        }
    }

    pub fn has(&self, id: &str) -> bool {
        match self {
            EmbeddingSource::Table(t) => t.contains(id),
            EmbeddingSource::Synthetic { .. } => true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn load_three_by_eight() {
        let mut s = String::from("dim=8 kind=concept\n");
        for id in ["a", "b", "c"] {
            s.push_str(id);
            for i in 0..8 {
                s.push_str(&format!(" {}", i as f64 * 0.5));
            }
            s.push('\n');
        }
        let t = EmbeddingTable::read(s.as_bytes(), TableKind::Concept).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.dim(), 8);
    }

    #[test]
    fn load_rejects_bad_rows() {
        let mixed = "dim=2 kind=context\na 1 2\nb 1 2 3\n";
        assert!(matches!(
            EmbeddingTable::read(mixed.as_bytes(), TableKind::Context),
            Err(EmbedError::DimMismatch { expected: 2, got: 3 })
        ));
        let dup = "dim=2 kind=context\na 1 2\na 3 4\n";
        assert_eq!(
            EmbeddingTable::read(dup.as_bytes(), TableKind::Context).unwrap_err(),
            EmbedError::DuplicateId("a".into())
        );
        let junk = "dim=2 kind=context\na 1 x\n";
        assert!(matches!(
            EmbeddingTable::read(junk.as_bytes(), TableKind::Context),
            Err(EmbedError::ParseError { line: 2, .. })
        ));
        let wrong_kind = "dim=2 kind=concept\na 1 2\n";
        assert!(matches!(
            EmbeddingTable::read(wrong_kind.as_bytes(), TableKind::Context),
            Err(EmbedError::ParseError { line: 1, .. })
        ));
    }

    #[test]
    fn table_write_round_trips() {
        let mut t = EmbeddingTable::new(3, TableKind::Concept);
        t.insert("x", synthetic_embed("x", 3, 1)).unwrap();
        t.insert("y", v(&[0.1, -2.5e-7, 3.0])).unwrap();
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let back = EmbeddingTable::read(&buf[..], TableKind::Concept).unwrap();
        assert_eq!(back.get("x").unwrap(), t.get("x").unwrap());
        assert_eq!(back.get("y").unwrap(), t.get("y").unwrap());
        assert_eq!(back.get("z").unwrap_err(), EmbedError::MissingId("z".into()));
    }

    #[test]
    fn synthetic_is_deterministic_and_distinct() {
        assert_eq!(synthetic_embed("A", 4, 7), synthetic_embed("A", 4, 7));
        assert_ne!(synthetic_embed("A", 4, 7), synthetic_embed("A", 4, 8));
        let mut seen = HashSet::new();
        for i in 0..1000 {
            let e = synthetic_embed(&format!("C{i:07}"), 4, 7);
            let key: Vec<u64> = e.values().iter().map(|x| x.to_bits()).collect();
            assert!(seen.insert(key), "collision at {i}");
        }
    }

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(dot(&v(&[1.0, 2.0]), &v(&[3.0, 4.0])).unwrap(), 11.0);
        assert!(matches!(
            dot(&v(&[1.0]), &v(&[1.0, 2.0])),
            Err(EmbedError::DimMismatch { .. })
        ));
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[0.3, -1.2, 4.0]);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 2.0])).unwrap(), 0.0);
        let c = cosine(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(
            cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])).unwrap_err(),
            EmbedError::ZeroVector
        );
    }

    proptest! {
        #[test]
        fn synthetic_is_unit_norm(id in "[A-Za-z0-9]{1,12}", dim in 1usize..64, seed in any::<u64>()) {
            let e = synthetic_embed(&id, dim, seed);
            prop_assert!((e.norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn cosine_symmetric_bounded_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 4),
            b in proptest::collection::vec(-10.0f64..10.0, 4),
            s in 0.01f64..100.0,
        ) {
            let (va, vb) = (v(&a), v(&b));
            prop_assume!(va.norm() > 1e-6 && vb.norm() > 1e-6);
            let c = cosine(&va, &vb).unwrap();
            prop_assert!((-1.0..=1.0).contains(&c));
            prop_assert!((c - cosine(&vb, &va).unwrap()).abs() < 1e-12);
            let scaled = v(&a.iter().map(|x| x * s).collect::<Vec<_>>());
            prop_assert!((c - cosine(&scaled, &vb).unwrap()).abs() < 1e-9);
            prop_assert!(dot(&va, &va).unwrap() >= 0.0);
        }
    }
}
