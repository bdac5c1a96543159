//! Inequality of per-user data production.
//!
//! All statistics treat the counts as an unordered multiset; ties in the
//! ascending sort do not affect any result.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn validate(counts: &[u64]) -> Result<u128> {
    if counts.is_empty() {
        return Err(Error::Undefined("empty production distribution".into()));
    }
    let total: u128 = counts.iter().map(|&c| c as u128).sum();
    if total == 0 {
        return Err(Error::Undefined(
            "production distribution has no positive count".into(),
        ));
    }
    Ok(total)
}

fn sorted(counts: &[u64]) -> Vec<u64> {
    let mut v = counts.to_vec();
    v.sort_unstable();
    v
}

/// Sample Gini index `Σᵢⱼ|xᵢ−xⱼ| / (2n²μ)`, computed from the ascending sort
/// as `Σᵢ (2i − n − 1)·x₍ᵢ₎ / (n·Σx)` with one-based `i`.
pub fn gini(counts: &[u64]) -> Result<f64> {
    let total = validate(counts)?;
    let xs = sorted(counts);
    let n = xs.len() as i128;
    let weighted: i128 = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| (2 * (i as i128 + 1) - n - 1) * x as i128)
        .sum();
    Ok(weighted as f64 / (n as f64 * total as f64))
}

/// Lorenz curve vertices at the user boundaries: `(0,0)` followed by
/// `(i/n, share of the i smallest producers)` for every user.
pub fn lorenz_points(counts: &[u64]) -> Result<Vec<(f64, f64)>> {
    let total = validate(counts)? as f64;
    let xs = sorted(counts);
    let n = xs.len() as f64;
    let mut points = Vec::with_capacity(xs.len() + 1);
    points.push((0.0, 0.0));
    let mut cum: u128 = 0;
    for (i, &x) in xs.iter().enumerate() {
        cum += x as u128;
        points.push(((i + 1) as f64 / n, cum as f64 / total));
    }
    // Exact endpoint regardless of float accumulation.
    if let Some(last) = points.last_mut() {
        *last = (1.0, 1.0);
    }
    Ok(points)
}

/// Lorenz curve sampled on `grid` (population shares in `[0,1]`), linearly
/// interpolated between user-boundary vertices.
pub fn lorenz(counts: &[u64], grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let vertices = lorenz_points(counts)?;
    let n = (vertices.len() - 1) as f64;
    grid.iter()
        .map(|&p| {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "Lorenz grid value {p} outside [0,1]"
                )));
            }
            let pos = p * n;
            let lo = (pos.floor() as usize).min(vertices.len() - 1);
            let hi = (lo + 1).min(vertices.len() - 1);
            let frac = pos - lo as f64;
            let l = vertices[lo].1 + frac * (vertices[hi].1 - vertices[lo].1);
            Ok((p, l))
        })
        .collect()
}

/// Evenly spaced grid `0, 1/steps, …, 1`.
pub fn uniform_grid(steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| i as f64 / steps as f64).collect()
}

/// Share of all data held by the `⌈top_fraction·n⌉` highest producers.
pub fn top_share(counts: &[u64], top_fraction: f64) -> Result<f64> {
    let total = validate(counts)?;
    if !(top_fraction > 0.0 && top_fraction < 1.0) {
        return Err(Error::Config(format!(
            "top fraction must lie in (0,1), got {top_fraction}"
        )));
    }
    let xs = sorted(counts);
    let k = (top_fraction * xs.len() as f64).ceil() as usize;
    let top: u128 = xs.iter().rev().take(k).map(|&x| x as u128).sum();
    Ok(top as f64 / total as f64)
}

/// Per-city inequality summary written as `inequality.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub gini: f64,
    pub lorenz: Vec<[f64; 2]>,
    pub top_20_share: f64,
    pub users: usize,
    pub total_pings: u64,
}

impl InequalityReport {
    pub fn from_counts(counts: &[u64], grid_steps: usize) -> Result<Self> {
        let lorenz = lorenz(counts, &uniform_grid(grid_steps))?
            .into_iter()
            .map(|(p, l)| [p, l])
            .collect();
        Ok(Self {
            gini: gini(counts)?,
            lorenz,
            top_20_share: top_share(counts, 0.2)?,
            users: counts.len(),
            total_pings: counts.iter().sum(),
        })
    }
}

/// Lorenz plot: line of equality in red, observed curve in black.
pub fn lorenz_svg(report: &InequalityReport, title: &str) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 40.0;
    let px = |p: f64| PAD + p * SIZE;
    let py = |l: f64| PAD + (1.0 - l) * SIZE;
    let path: Vec<String> = report
        .lorenz
        .iter()
        .map(|[p, l]| format!("{:.2},{:.2}", px(*p), py(*l)))
        .collect();
    let full = SIZE + 2.0 * PAD;
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{full}\" height=\"{full}\">\n",
            "<rect x=\"{pad}\" y=\"{pad}\" width=\"{size}\" height=\"{size}\" fill=\"none\" stroke=\"#888\"/>\n",
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y1}\" stroke=\"red\"/>\n",
            "<polyline points=\"{path}\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>\n",
            "<text x=\"{pad}\" y=\"25\" font-family=\"sans-serif\" font-size=\"14\">{title} (Gini {gini:.3})</text>\n",
            "</svg>\n"
        ),
        full = full,
        pad = PAD,
        size = SIZE,
        x0 = px(0.0),
        y0 = py(0.0),
        x1 = px(1.0),
        y1 = py(1.0),
        path = path.join(" "),
        title = title,
        gini = report.gini,
    )
}
