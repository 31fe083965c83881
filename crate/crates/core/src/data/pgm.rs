//! 8-bit binary PGM (P5) images.

use std::fs;
use std::path::Path;

use ndarray::{ArrayView1, ArrayView2};

use super::write_atomic;
use crate::error::{Error, Result};

const SEPARATOR: u8 = 255;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Min-max maps `values` onto `0..=255`; a constant input maps to 128.
fn normalize<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> Result<Vec<u8>> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values.clone() {
        if !v.is_finite() {
            return Err(Error::NonFinite("image values".into()));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = hi - lo;
    Ok(values
        .map(|&v| {
            if range > 0.0 {
                ((v - lo) / range * 255.0).round() as u8
            } else {
                128
            }
        })
        .collect())
}

fn render_single(values: ArrayView2<'_, f64>) -> Result<GrayImage> {
    Ok(GrayImage {
        width: values.ncols(),
        height: values.nrows(),
        pixels: normalize(values.iter())?,
    })
}

pub fn write_pgm(values: ArrayView2<'_, f64>, path: &Path) -> Result<()> {
    write_atomic(path, &render_single(values)?.encode())
}

/// Lays out flattened `tile_h × tile_w` images (one per row of `tiles`) on a
/// `grid_rows × grid_cols` grid with one-pixel separators. Each tile is
/// normalized on its own.
pub fn render_grid(
    tiles: ArrayView2<'_, f64>,
    tile_h: usize,
    tile_w: usize,
    grid_rows: usize,
    grid_cols: usize,
) -> Result<GrayImage> {
    if tiles.ncols() != tile_h * tile_w {
        return Err(Error::Dimension {
            what: "tile pixels",
            expected: tile_h * tile_w,
            got: tiles.ncols(),
        });
    }
    let width = grid_cols * tile_w + grid_cols.saturating_sub(1);
    let height = grid_rows * tile_h + grid_rows.saturating_sub(1);
    let mut pixels = vec![SEPARATOR; width * height];
    for (t, tile) in tiles.rows().into_iter().take(grid_rows * grid_cols).enumerate() {
        let bytes = normalize_row(tile)?;
        let (gr, gc) = (t / grid_cols, t % grid_cols);
        let (top, left) = (gr * (tile_h + 1), gc * (tile_w + 1));
        for r in 0..tile_h {
            let start = (top + r) * width + left;
            pixels[start..start + tile_w].copy_from_slice(&bytes[r * tile_w..(r + 1) * tile_w]);
        }
    }
    Ok(GrayImage { width, height, pixels })
}

fn normalize_row(row: ArrayView1<'_, f64>) -> Result<Vec<u8>> {
    normalize(row.iter())
}

pub fn write_filter_grid(
    tiles: ArrayView2<'_, f64>,
    tile_h: usize,
    tile_w: usize,
    grid_rows: usize,
    grid_cols: usize,
    path: &Path,
) -> Result<()> {
    let image = render_grid(tiles, tile_h, tile_w, grid_rows, grid_cols)?;
    write_atomic(path, &image.encode())
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::InvalidParameter(format!("{}: {msg}", path.display()));
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    pos += 1;
    let pixels = bytes
        .get(pos..pos + width * height)
        .ok_or_else(|| bad("truncated pixel data"))?
        .to_vec();
    Ok(GrayImage { width, height, pixels })
}
