//! Rate grids given on the command line.

use anyhow::{bail, Context, Result};

/// Parses `start:stop:points` (evenly spaced, both ends included) or a
/// comma-separated list of rates.
pub fn parse(text: &str) -> Result<Vec<f64>> {
    let text = text.trim();
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let [a, b, k] = parts[..] else {
            bail!("grid {text:?} must look like start:stop:points");
        };
        let a: f64 = a.trim().parse().with_context(|| format!("grid start {a:?}"))?;
        let b: f64 = b.trim().parse().with_context(|| format!("grid stop {b:?}"))?;
        let k: usize = k.trim().parse().with_context(|| format!("grid points {k:?}"))?;
        if k == 0 {
            bail!("grid needs at least one point");
        }
        if k == 1 {
            return Ok(vec![a]);
        }
        let step = (b - a) / (k - 1) as f64;
        // the last point is set exactly so the grid ends on `stop`
        return Ok((0..k).map(|i| if i + 1 == k { b } else { a + i as f64 * step }).collect());
    }
    let grid = text
        .split(',')
        .map(|x| x.trim().parse::<f64>().with_context(|| format!("rate {x:?}")))
        .collect::<Result<Vec<_>>>()?;
    if grid.is_empty() {
        bail!("empty grid");
    }
    Ok(grid)
}
