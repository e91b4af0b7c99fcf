//! Deterministic mapping from image-token sequences to a grid canvas and
//! bit-exact plain-pixmap export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{cell_content, cell_token, Color, Shape, TokenId, EMPTY_CELL};

/// Grid geometry. The training task uses 6x6; reward tests exercise a
/// 2x2 variant exhaustively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub rows: usize,
    pub cols: usize,
}

impl GridDims {
    pub const DEFAULT: GridDims = GridDims { rows: 6, cols: 6 };

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }
}

pub type CellContent = Option<(Shape, Color)>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub dims: GridDims,
    /// Row-major; `None` is an empty cell.
    pub cells: Vec<CellContent>,
}

impl Grid {
    pub fn get(&self, row: usize, col: usize) -> CellContent {
        self.cells[row * self.dims.cols + col]
    }

    /// Inverse of `render`: the unique token sequence drawing this grid.
    pub fn to_tokens(&self) -> Vec<TokenId> {
        self.cells
            .iter()
            .map(|c| match c {
                None => EMPTY_CELL,
                Some((s, col)) => cell_token(*s, *col),
            })
            .collect()
    }
}

/// Fills cell `j` of the grid with image token `j`, row-major. Bijective
/// between valid sequences and grids.
pub fn render(image_seq: &[TokenId], dims: GridDims) -> Result<Grid> {
    if image_seq.len() != dims.cell_count() {
        return Err(Error::LengthMismatch {
            expected: dims.cell_count(),
            got: image_seq.len(),
        });
    }
    let cells = image_seq
        .iter()
        .map(|&t| {
            cell_content(t).ok_or(Error::Format(format!("token {t} is not an image token")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Grid { dims, cells })
}

pub const CELL_PIXELS: usize = 16;

const PALETTE_EMPTY: [u8; 3] = [245, 245, 245];

fn palette(color: Color) -> [u8; 3] {
    match color {
        Color::Red => [220, 40, 40],
        Color::Green => [40, 180, 70],
        Color::Blue => [50, 90, 220],
        Color::Yellow => [230, 200, 40],
    }
}

/// Whether local pixel (px, py) of a 16x16 cell lies inside the shape mask.
/// Integer inequalities only, so every build draws identical pixels:
/// - square: the cell minus a 2-pixel margin,
/// - circle: squared distance from the cell center (7.5, 7.5) at most 6.5^2,
/// - triangle: upright, apex at the top center, base along py = 13.
fn in_mask(shape: Shape, px: usize, py: usize) -> bool {
    let (x2, y2) = (2 * px as i64 - 15, 2 * py as i64 - 15); // doubled, center-origin
    match shape {
        Shape::Square => (2..=13).contains(&px) && (2..=13).contains(&py),
        Shape::Circle => x2 * x2 + y2 * y2 <= 169,
        Shape::Triangle => (2..=13).contains(&py) && x2.abs() <= py as i64 - 2,
    }
}

/// Renders the grid to an ASCII "P3" portable pixmap. Byte-identical for
/// identical grids.
pub fn to_ppm(grid: &Grid) -> String {
    let width = grid.dims.cols * CELL_PIXELS;
    let height = grid.dims.rows * CELL_PIXELS;
    let mut out = format!("P3\n{width} {height}\n255\n");
    for y in 0..height {
        for x in 0..width {
            let (row, col) = (y / CELL_PIXELS, x / CELL_PIXELS);
            let (py, px) = (y % CELL_PIXELS, x % CELL_PIXELS);
            let rgb = match grid.get(row, col) {
                Some((shape, color)) if in_mask(shape, px, py) => palette(color),
                _ => PALETTE_EMPTY,
            };
            if x > 0 {
                out.push(' ');
            }
            out.push_str(&format!("{} {} {}", rgb[0], rgb[1], rgb[2]));
        }
        out.push('\n');
    }
    out
}

pub fn export_image(grid: &Grid, path: &Path) -> Result<()> {
    std::fs::write(path, to_ppm(grid))?;
    Ok(())
}
