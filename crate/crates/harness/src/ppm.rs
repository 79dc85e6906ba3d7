//! Binary PPM (P6) strips for one-row images.

use std::path::Path;

use cellroute::Image;
use cellroute_flatland::write_atomic;

use crate::Result;

/// Rows each one-row image is repeated over.
pub const STRIP_HEIGHT: usize = 16;

/// Encodes rows of RGB values in `[0, 1]` as P6, each row repeated
/// `STRIP_HEIGHT` times.
pub fn encode_strips(rows: &[&[f64]], width: usize) -> Vec<u8> {
    let height = rows.len() * STRIP_HEIGHT;
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for row in rows {
        assert_eq!(row.len(), width * 3, "row length");
        let bytes: Vec<u8> = row.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        for _ in 0..STRIP_HEIGHT {
            out.extend_from_slice(&bytes);
        }
    }
    out
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    write_atomic(path, &encode_strips(&[image.data()], image.width()))?;
    Ok(())
}

/// Intensity map of non-negative `values` (one per pixel) in a highlight
/// colour over a dark base, optionally blended over `under`.
pub fn highlight(values: &[f64], under: Option<&[f64]>) -> Vec<f64> {
    const HIGHLIGHT: [f64; 3] = [1.0, 0.55, 0.0];
    let max = values.iter().cloned().fold(0.0, f64::max);
    let mut out = Vec::with_capacity(values.len() * 3);
    for (i, &v) in values.iter().enumerate() {
        let a = if max > 0.0 { v / max } else { 0.0 };
        for c in 0..3 {
            let base = under.map_or(0.08, |u| 0.5 * u[3 * i + c]);
            out.push(base * (1.0 - a) + HIGHLIGHT[c] * a);
        }
    }
    out
}

/// Width and height from a P6 header.
pub fn parse_header(bytes: &[u8]) -> Option<(usize, usize)> {
    let mut tokens = bytes
        .split(|b| b.is_ascii_whitespace())
        .filter(|t| !t.is_empty())
        .take(3)
        .map(|t| std::str::from_utf8(t).ok());
    if tokens.next()?? != "P6" {
        return None;
    }
    let w = tokens.next()??.parse().ok()?;
    let h = tokens.next()??.parse().ok()?;
    Some((w, h))
}
