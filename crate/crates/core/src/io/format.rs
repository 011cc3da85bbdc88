//! OODM matrix files, OODL label files, and their CSV mirrors.
//!
//! OODM layout (little-endian):
//!
//! ```text
//! "OODM" | version u32 = 1 | dtype u8 | kind u8 | reserved [u8; 3] = 0
//!        | n_rows u64 | n_cols u64 | n_rows * n_cols values, row-major
//! ```
//!
//! dtype 0 is `f32`; dtype 1 is `f64` and is only used for kind 2 (scores).
//! OODL layout: `"OODL" | version u32 = 1 | n u64 | n * u32`.

use std::path::Path;

use crate::error::{OodError, Result};
use crate::io::container::{read_file, ByteReader, ByteWriter};
use crate::io::matrix::{EmbeddingMatrix, LabelVector, Matrix, ProbabilityMatrix, ScoreVector};

pub const MATRIX_MAGIC: &[u8; 4] = b"OODM";
pub const LABEL_MAGIC: &[u8; 4] = b"OODL";
pub const HEADER_LEN: usize = 29;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MatrixKind {
    Embeddings = 0,
    Probabilities = 1,
    Scores = 2,
}

impl MatrixKind {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(MatrixKind::Embeddings),
            1 => Ok(MatrixKind::Probabilities),
            2 => Ok(MatrixKind::Scores),
            other => Err(OodError::UnsupportedKind(other)),
        }
    }

    fn name(self) -> &'static str {
        match self {
            MatrixKind::Embeddings => "embeddings",
            MatrixKind::Probabilities => "probabilities",
            MatrixKind::Scores => "scores",
        }
    }
}

/// A decoded OODM file.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredMatrix {
    Embeddings(EmbeddingMatrix),
    Probabilities(ProbabilityMatrix),
    Scores(ScoreVector),
}

impl StoredMatrix {
    pub fn kind(&self) -> MatrixKind {
        match self {
            StoredMatrix::Embeddings(_) => MatrixKind::Embeddings,
            StoredMatrix::Probabilities(_) => MatrixKind::Probabilities,
            StoredMatrix::Scores(_) => MatrixKind::Scores,
        }
    }
}

/// Borrowed view of anything `write_matrix` accepts.
#[derive(Debug, Clone, Copy)]
pub enum MatrixRef<'a> {
    Embeddings(&'a EmbeddingMatrix),
    Probabilities(&'a ProbabilityMatrix),
    Scores(&'a ScoreVector),
}

impl<'a> From<&'a EmbeddingMatrix> for MatrixRef<'a> {
    fn from(m: &'a EmbeddingMatrix) -> Self {
        MatrixRef::Embeddings(m)
    }
}

impl<'a> From<&'a ProbabilityMatrix> for MatrixRef<'a> {
    fn from(m: &'a ProbabilityMatrix) -> Self {
        MatrixRef::Probabilities(m)
    }
}

impl<'a> From<&'a ScoreVector> for MatrixRef<'a> {
    fn from(s: &'a ScoreVector) -> Self {
        MatrixRef::Scores(s)
    }
}

impl<'a> From<&'a StoredMatrix> for MatrixRef<'a> {
    fn from(m: &'a StoredMatrix) -> Self {
        match m {
            StoredMatrix::Embeddings(e) => MatrixRef::Embeddings(e),
            StoredMatrix::Probabilities(p) => MatrixRef::Probabilities(p),
            StoredMatrix::Scores(s) => MatrixRef::Scores(s),
        }
    }
}

fn header(w: &mut ByteWriter, dtype: u8, kind: MatrixKind, n_rows: usize, n_cols: usize) {
    w.u8(dtype);
    w.u8(kind as u8);
    w.bytes(&[0, 0, 0]);
    w.usize(n_rows);
    w.usize(n_cols);
}

fn encode_f32(kind: MatrixKind, m: &Matrix) -> Result<Vec<u8>> {
    if let Some(pos) = m.data().iter().position(|v| !v.is_finite()) {
        return Err(OodError::NonFinite {
            row: pos / m.n_cols(),
            col: pos % m.n_cols(),
        });
    }
    let mut w = ByteWriter::with_magic(MATRIX_MAGIC);
    header(&mut w, DTYPE_F32, kind, m.n_rows(), m.n_cols());
    for &v in m.data() {
        w.f32(v);
    }
    Ok(w.into_bytes())
}

/// Serialises a matrix to OODM bytes. Output depends only on the values.
pub fn encode_matrix<'a>(m: impl Into<MatrixRef<'a>>) -> Result<Vec<u8>> {
    match m.into() {
        MatrixRef::Embeddings(e) => encode_f32(MatrixKind::Embeddings, e.as_matrix()),
        MatrixRef::Probabilities(p) => encode_f32(MatrixKind::Probabilities, p.as_matrix()),
        MatrixRef::Scores(s) => {
            if let Some(row) = s.iter().position(|v| !v.is_finite()) {
                return Err(OodError::NonFinite { row, col: 0 });
            }
            let mut w = ByteWriter::with_magic(MATRIX_MAGIC);
            header(&mut w, DTYPE_F64, MatrixKind::Scores, s.len(), 1);
            for &v in s.iter() {
                w.f64(v);
            }
            Ok(w.into_bytes())
        }
    }
}

pub fn write_matrix<'a>(path: impl AsRef<Path>, m: impl Into<MatrixRef<'a>>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_matrix(m)?;
    std::fs::write(path, bytes).map_err(|e| OodError::io(path, e))
}

pub fn decode_matrix(bytes: &[u8]) -> Result<StoredMatrix> {
    let mut r = ByteReader::new(bytes);
    r.expect_header(MATRIX_MAGIC)?;
    let dtype = r.u8()?;
    let kind = MatrixKind::from_code(r.u8()?)?;
    r.take(3)?;
    let n_rows = r.usize()?;
    let n_cols = r.usize()?;
    let width = match (dtype, kind) {
        (DTYPE_F32, _) => 4,
        (DTYPE_F64, MatrixKind::Scores) => 8,
        (other, _) => return Err(OodError::UnsupportedDtype(other)),
    };
    let declared = (n_rows as u64)
        .checked_mul(n_cols as u64)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| OodError::Shape(format!("{n_rows}x{n_cols} overflows")))?;
    if declared != r.remaining() as u64 {
        return Err(OodError::TruncatedPayload {
            expected: declared,
            found: r.remaining() as u64,
        });
    }
    let payload = r.take(r.remaining())?;
    if width == 8 {
        if n_cols != 1 {
            return Err(OodError::Shape(format!("score file must have 1 column, has {n_cols}")));
        }
        let scores = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        return ScoreVector::new(scores).map(StoredMatrix::Scores);
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let m = Matrix::new(n_rows, n_cols, data)?;
    Ok(match kind {
        MatrixKind::Embeddings => StoredMatrix::Embeddings(m.into()),
        MatrixKind::Probabilities => StoredMatrix::Probabilities(m.try_into()?),
        MatrixKind::Scores => {
            if n_cols != 1 {
                return Err(OodError::Shape(format!("score file must have 1 column, has {n_cols}")));
            }
            StoredMatrix::Scores(ScoreVector::new(m.data().iter().map(|&v| v as f64).collect())?)
        }
    })
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<StoredMatrix> {
    decode_matrix(&read_file(path.as_ref())?)
}

fn wrong_kind(path: &Path, want: MatrixKind, got: MatrixKind) -> OodError {
    OodError::Shape(format!(
        "{}: expected {} file, found {}",
        path.display(),
        want.name(),
        got.name()
    ))
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false)
}

/// Reads embeddings from an OODM file or, for `.csv` paths, a headerless CSV.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    if is_csv(path) {
        return read_matrix_csv(path).map(EmbeddingMatrix::from);
    }
    match read_matrix(path)? {
        StoredMatrix::Embeddings(e) => Ok(e),
        other => Err(wrong_kind(path, MatrixKind::Embeddings, other.kind())),
    }
}

pub fn read_probabilities(path: impl AsRef<Path>) -> Result<ProbabilityMatrix> {
    let path = path.as_ref();
    if is_csv(path) {
        return ProbabilityMatrix::try_from(read_matrix_csv(path)?);
    }
    match read_matrix(path)? {
        StoredMatrix::Probabilities(p) => Ok(p),
        other => Err(wrong_kind(path, MatrixKind::Probabilities, other.kind())),
    }
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreVector> {
    let path = path.as_ref();
    match read_matrix(path)? {
        StoredMatrix::Scores(s) => Ok(s),
        other => Err(wrong_kind(path, MatrixKind::Scores, other.kind())),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> OodError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => OodError::io(path, io),
        other => OodError::Shape(format!("{}: {other:?}", path.display())),
    }
}

/// Headerless comma-separated matrix, one row per line.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field.parse::<f32>().map_err(|_| {
                    OodError::Shape(format!("{}: bad number {field:?} at ({i}, {j})", path.display()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(OodError::Empty(format!("{}", path.display())));
    }
    Matrix::from_rows(&rows)
}

pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| OodError::io(path, e))
}

/// CSV mirror of a score file: `row,score` header then one line per row.
pub fn write_scores_csv(path: impl AsRef<Path>, scores: &ScoreVector) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["row", "score"]).map_err(|e| csv_error(path, e))?;
    for (i, s) in scores.iter().enumerate() {
        w.write_record([i.to_string(), format!("{s:e}")])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| OodError::io(path, e))
}

pub fn encode_labels(labels: &LabelVector) -> Vec<u8> {
    let mut w = ByteWriter::with_magic(LABEL_MAGIC);
    w.usize(labels.len());
    for &l in labels.labels() {
        w.u32(l);
    }
    w.into_bytes()
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelVector) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_labels(labels)).map_err(|e| OodError::io(path, e))
}

pub fn decode_labels(bytes: &[u8], n_classes: usize) -> Result<LabelVector> {
    let mut r = ByteReader::new(bytes);
    r.expect_header(LABEL_MAGIC)?;
    let n = r.u64()?;
    let declared = n.checked_mul(4).ok_or_else(|| OodError::Shape("label count overflows".into()))?;
    if declared != r.remaining() as u64 {
        return Err(OodError::TruncatedPayload {
            expected: declared,
            found: r.remaining() as u64,
        });
    }
    let labels = r
        .take(r.remaining())?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LabelVector::new(labels, n_classes)
}

fn parse_csv_labels(text: &str, n_classes: usize) -> Result<LabelVector> {
    let mut labels = Vec::new();
    for (row, line) in text.lines().map(str::trim).filter(|l| !l.is_empty()).enumerate() {
        let field = line.split(',').next().unwrap_or("").trim();
        let value: i64 = field
            .parse()
            .map_err(|_| OodError::Shape(format!("bad label {field:?} at row {row}")))?;
        if value < 0 {
            return Err(OodError::NegativeLabel { row, label: value });
        }
        if value as u64 >= n_classes as u64 {
            return Err(OodError::LabelOutOfRange {
                row,
                label: value,
                n_classes,
            });
        }
        labels.push(value as u32);
    }
    if labels.is_empty() {
        return Err(OodError::Empty("label file".into()));
    }
    LabelVector::new(labels, n_classes)
}

/// Reads a binary OODL file, or a single-column CSV when the magic is absent.
pub fn read_labels(path: impl AsRef<Path>, n_classes: usize) -> Result<LabelVector> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    if bytes.is_empty() {
        return Err(OodError::Empty(format!("{}", path.display())));
    }
    if bytes.starts_with(LABEL_MAGIC) {
        return decode_labels(&bytes, n_classes);
    }
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| OodError::Shape(format!("{}: not a label file", path.display())))?;
    parse_csv_labels(text, n_classes)
}

/// Largest label + 1 in a label file, without range checks beyond non-negativity.
pub fn infer_n_classes(path: impl AsRef<Path>) -> Result<usize> {
    let labels = read_labels(path, u32::MAX as usize)?;
    Ok(labels.labels().iter().copied().max().map(|m| m as usize + 1).unwrap_or(0))
}
