//! Counting coloured regions in a rendered row by nearest palette colour.

use cellroute::Image;
use cellroute_flatland::{BACKGROUND, PALETTE};

/// Pixels closer than this (Euclidean, RGB) to the background are empty.
pub const BACKGROUND_RADIUS: f64 = 0.1;
/// Shortest run of one palette class that counts as a region.
pub const MIN_RUN: usize = 2;

/// Palette index of a pixel, or `None` for background.
pub fn classify(rgb: [f64; 3]) -> Option<usize> {
    let d = rgb.iter().zip(BACKGROUND).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    if d < BACKGROUND_RADIUS {
        return None;
    }
    let norm = |c: &[f64; 3]| c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n = norm(&rgb).max(1e-12);
    PALETTE
        .iter()
        .enumerate()
        .map(|(i, p)| (i, rgb.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() / (n * norm(p))))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// Number of distinct palette classes that cover at least one run of
/// `MIN_RUN` adjacent pixels.
pub fn count_regions(image: &Image) -> usize {
    let classes: Vec<Option<usize>> = (0..image.width()).map(|i| classify(image.pixel(i))).collect();
    let mut seen = [false; PALETTE.len()];
    let mut i = 0;
    while i < classes.len() {
        let mut j = i + 1;
        while j < classes.len() && classes[j] == classes[i] {
            j += 1;
        }
        if let Some(c) = classes[i] {
            if j - i >= MIN_RUN {
                seen[c] = true;
            }
        }
        i = j;
    }
    seen.iter().filter(|&&s| s).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pixels: &[[f64; 3]]) -> Image {
        Image::new(pixels.len(), pixels.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn shaded_palette_colours_are_recognised() {
        for (i, p) in PALETTE.iter().enumerate() {
            assert_eq!(classify(p.map(|c| c * 0.75)), Some(i));
        }
        assert_eq!(classify(BACKGROUND), None);
    }

    #[test]
    fn short_runs_do_not_count() {
        let bg = BACKGROUND;
        let img = row(&[bg, PALETTE[0], PALETTE[0], bg, PALETTE[1], bg, PALETTE[2], PALETTE[2], PALETTE[0]]);
        assert_eq!(count_regions(&img), 2);
    }
}
