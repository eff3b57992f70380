//! Preview frames: small binary PPM plots of the action trajectory anchored
//! at every `PREVIEW_STRIDE`-th frame.

use crate::datamodel::{ActionChunk, ChannelGroup};

pub const PREVIEW_STRIDE: usize = 10;
pub const PREVIEW_SIZE: usize = 64;

const BACKGROUND: [u8; 3] = [18, 18, 24];
const PALETTE: [[u8; 3]; 4] = [[240, 90, 80], [80, 170, 250], [120, 220, 110], [240, 200, 80]];

pub fn preview_name(index: usize) -> String {
    format!("preview_{index:05}.ppm")
}

/// Renders the position groups of `chunk`, projected onto the x-y plane and
/// scaled to fit the image. One colour per group.
pub fn render_preview(chunk: &ActionChunk) -> Vec<u8> {
    let size = PREVIEW_SIZE;
    let mut pixels = vec![BACKGROUND; size * size];
    let v = chunk.values();
    let cols: Vec<usize> = chunk
        .layout()
        .offsets()
        .filter(|(_, g)| *g == ChannelGroup::Position)
        .map(|(c, _)| c)
        .collect();

    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for row in v.rows() {
        for &c in &cols {
            for a in 0..2 {
                lo[a] = lo[a].min(row[c + a]);
                hi[a] = hi[a].max(row[c + a]);
            }
        }
    }
    let span = (0..2).map(|a| hi[a] - lo[a]).fold(1e-9, f64::max);
    let margin = 4.0;
    let scale = (size as f64 - 2.0 * margin - 1.0) / span;
    for (g, &c) in cols.iter().enumerate() {
        for row in v.rows() {
            let px = (margin + (row[c] - lo[0]) * scale).round() as usize;
            let py = (margin + (hi[1] - row[c + 1]) * scale).round() as usize;
            if px < size && py < size {
                pixels[py * size + px] = PALETTE[g % PALETTE.len()];
            }
        }
    }

    let mut out = format!("P6\n{size} {size}\n255\n").into_bytes();
    out.extend(pixels.into_iter().flatten());
    out
}
