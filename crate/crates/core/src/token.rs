//! Location "translation": continuous corners to discrete location tokens and
//! back, plus 2D sine-cosine initialization of the token embedding table.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Axis, Error, Result};
use crate::layout::{AnnotatedBox, GridSpec, LocationToken};

/// Lexical template for location tokens.
pub const TOKEN_TEMPLATE: &str = "<L_{i}>";

/// Sine-cosine temperature.
pub const EMBEDDING_TEMPERATURE: f64 = 10_000.0;

/// The `w_bins * h_bins` location tokens of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenVocabulary {
    grid: GridSpec,
}

impl TokenVocabulary {
    pub fn new(grid: GridSpec) -> Self {
        Self { grid }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.token_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn token(&self, index: usize) -> Result<LocationToken> {
        if index < self.len() {
            Ok(LocationToken(index))
        } else {
            Err(Error::TokenRange { index, size: self.len() })
        }
    }

    pub fn render(&self, token: LocationToken) -> String {
        token.to_string()
    }

    /// Parses a lexical form and checks it against the vocabulary size.
    pub fn parse(&self, text: &str) -> Result<LocationToken> {
        let token = LocationToken::parse(text)
            .ok_or_else(|| Error::Argument(format!("malformed location token {text:?}")))?;
        self.token(token.index())
    }

    pub fn tokens(&self) -> impl Iterator<Item = LocationToken> {
        (0..self.len()).map(LocationToken)
    }
}

fn bin_of(value: f64, extent: u32, bins: u32, axis: Axis) -> Result<u32> {
    let limit = extent as f64;
    if !(0.0..=limit).contains(&value) {
        return Err(Error::CoordinateRange { axis, value, limit });
    }
    let bin = (value / limit * bins as f64).floor() as u32;
    // value == extent lands one past the last bin
    Ok(bin.min(bins - 1))
}

/// Maps a corner to the token of the bin containing it.
pub fn encode_corner(x: f64, y: f64, grid: &GridSpec) -> Result<LocationToken> {
    let x_bin = bin_of(x, grid.width, grid.w_bins, Axis::X)?;
    let y_bin = bin_of(y, grid.height, grid.h_bins, Axis::Y)?;
    Ok(LocationToken(y_bin as usize * grid.w_bins as usize + x_bin as usize))
}

/// Column and row of a token's bin.
pub fn token_bin(token: LocationToken, grid: &GridSpec) -> Result<(u32, u32)> {
    if token.index() >= grid.token_count() {
        return Err(Error::TokenRange { index: token.index(), size: grid.token_count() });
    }
    let w = grid.w_bins as usize;
    Ok(((token.index() % w) as u32, (token.index() / w) as u32))
}

/// Center of the token's bin in pixels.
pub fn decode_token(token: LocationToken, grid: &GridSpec) -> Result<(f64, f64)> {
    let (xb, yb) = token_bin(token, grid)?;
    Ok((
        (xb as f64 + 0.5) * grid.width as f64 / grid.w_bins as f64,
        (yb as f64 + 0.5) * grid.height as f64 / grid.h_bins as f64,
    ))
}

/// Class name followed by the top-left and bottom-right corner tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxPhrase {
    pub class_name: String,
    pub top_left: LocationToken,
    pub bottom_right: LocationToken,
}

impl fmt::Display for BoxPhrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.class_name, self.top_left, self.bottom_right)
    }
}

pub fn encode_box(b: &AnnotatedBox, grid: &GridSpec) -> Result<BoxPhrase> {
    Ok(BoxPhrase {
        class_name: b.class_name.clone(),
        top_left: encode_corner(b.bbox.x1, b.bbox.y1, grid)?,
        bottom_right: encode_corner(b.bbox.x2, b.bbox.y2, grid)?,
    })
}

/// Initial embedding rows for every location token, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rows: usize,
    data: Vec<f32>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Fills `out` with the 1D sinusoidal encoding of `pos`: even slots sin, odd slots cos.
fn sincos_1d(pos: f64, out: &mut [f32]) {
    let d = out.len() as f64;
    for (k, pair) in out.chunks_exact_mut(2).enumerate() {
        let arg = pos / EMBEDDING_TEMPERATURE.powf(2.0 * k as f64 / d);
        pair[0] = arg.sin() as f32;
        pair[1] = arg.cos() as f32;
    }
}

/// 2D sine-cosine table: the first `dim / 2` columns encode the bin column,
/// the rest encode the bin row.
pub fn build_embeddings(vocab: &TokenVocabulary, dim: usize) -> Result<EmbeddingTable> {
    if dim == 0 || !dim.is_multiple_of(4) {
        return Err(Error::Argument(format!("embedding dim {dim} must be a positive multiple of 4")));
    }
    let grid = vocab.grid();
    let rows = vocab.len();
    let mut data = vec![0f32; rows * dim];
    let half = dim / 2;
    for (i, row) in data.chunks_exact_mut(dim).enumerate() {
        let x_bin = i % grid.w_bins as usize;
        let y_bin = i / grid.w_bins as usize;
        let (xs, ys) = row.split_at_mut(half);
        sincos_1d(x_bin as f64, xs);
        sincos_1d(y_bin as f64, ys);
    }
    Ok(EmbeddingTable { dim, rows, data })
}

pub const EMBEDDING_MAGIC: &[u8; 4] = b"GEOE";
pub const EMBEDDING_HEADER_LEN: usize = 12;

/// Serializes as `"GEOE"`, u32 rows, u32 dim, then little-endian f32 rows.
pub fn encode_embeddings(table: &EmbeddingTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(EMBEDDING_HEADER_LEN + table.data.len() * 4);
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(table.rows as u32).to_le_bytes());
    out.extend_from_slice(&(table.dim as u32).to_le_bytes());
    for v in &table.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingTable> {
    if bytes.len() < EMBEDDING_HEADER_LEN {
        return Err(Error::Decode(format!("embedding file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != EMBEDDING_MAGIC {
        return Err(Error::Decode("bad embedding magic".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(EMBEDDING_HEADER_LEN))
        .ok_or_else(|| Error::Decode("embedding size overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::Decode(format!("expected {expected} bytes for {rows}x{dim}, got {}", bytes.len())));
    }
    let data = bytes[EMBEDDING_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(EmbeddingTable { dim, rows, data })
}

/// JSON sidecar describing an exported table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub w_bins: u32,
    pub h_bins: u32,
    pub width: u32,
    pub height: u32,
    pub template: String,
    pub rows: usize,
    pub dim: usize,
    pub temperature: f64,
}

impl EmbeddingSidecar {
    pub fn new(vocab: &TokenVocabulary, table: &EmbeddingTable) -> Self {
        let g = vocab.grid();
        Self {
            w_bins: g.w_bins,
            h_bins: g.h_bins,
            width: g.width,
            height: g.height,
            template: TOKEN_TEMPLATE.into(),
            rows: table.rows,
            dim: table.dim,
            temperature: EMBEDDING_TEMPERATURE,
        }
    }
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes)
}

pub fn write_embeddings(table: &EmbeddingTable, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(&encode_embeddings(table))
}
