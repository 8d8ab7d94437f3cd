use crate::error::{Error, Result};

/// Row (or column) boundaries of an `n`-way split of `extent`:
/// `floor(j · extent / n)` for `j = 0..=n`.
pub fn grid_bounds(extent: usize, parts: usize) -> Vec<usize> {
    (0..=parts).map(|j| j * extent / parts).collect()
}

/// Per-cell sums of an `h × w` map over a `2^level × 2^level` grid.
pub fn cell_counts(map: &[f32], h: usize, w: usize, level: u32) -> Vec<f64> {
    let parts = 1usize << level;
    let (rows, cols) = (grid_bounds(h, parts), grid_bounds(w, parts));
    let mut out = vec![0.0; parts * parts];
    for cy in 0..parts {
        for cx in 0..parts {
            let mut s = 0.0;
            for y in rows[cy]..rows[cy + 1] {
                for x in cols[cx]..cols[cx + 1] {
                    s += map[y * w + x] as f64;
                }
            }
            out[cy * parts + cx] = s;
        }
    }
    out
}

fn check_density(name: &str, map: &[f32], h: usize, w: usize) -> Result<()> {
    if map.len() != h * w {
        return Err(Error::invalid(format!("{name} has {} values, expected {h}×{w}", map.len())));
    }
    if let Some(v) = map.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::invalid(format!("{name} holds negative or NaN density {v}")));
    }
    Ok(())
}

/// `Σ_j |P^j − G^j|` over the `4^level` cells of one image.
pub fn game_single(pred: &[f32], gt: &[f32], h: usize, w: usize, level: u32) -> Result<f64> {
    check_density("prediction", pred, h, w)?;
    check_density("ground truth", gt, h, w)?;
    let p = cell_counts(pred, h, w, level);
    let g = cell_counts(gt, h, w, level);
    Ok(p.iter().zip(&g).map(|(a, b)| (a - b).abs()).sum())
}

/// Grid average mean absolute error over images: each item is `(pred, gt)`.
pub fn game(pairs: &[(&[f32], &[f32])], h: usize, w: usize, level: u32) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("GAME needs at least one image"));
    }
    let mut total = 0.0;
    for (p, g) in pairs {
        total += game_single(p, g, h, w, level)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Root mean squared count error.
pub fn rmse_counts(preds: &[f64], gts: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(Error::invalid(format!(
            "RMSE needs equal non-empty lists, got {} and {}",
            preds.len(),
            gts.len()
        )));
    }
    let mse = preds.iter().zip(gts).map(|(p, g)| (p - g).powi(2)).sum::<f64>() / preds.len() as f64;
    Ok(mse.sqrt())
}
