use crate::error::{Error, Result};

/// 1-based ranks with ties given their average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Invalid(format!(
            "correlation needs two equal series of length >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        // A constant series carries no rank information.
        return Ok(0.0);
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    pearson(&ranks(a), &ranks(b))
}

/// Shared-edge histogram: `bins + 1` edges spanning all `values`, counts per
/// series. The last bin is closed on the right.
pub fn histogram(series: &[&[f64]], bins: usize) -> Result<(Vec<f64>, Vec<Vec<usize>>)> {
    if bins == 0 {
        return Err(Error::Invalid("histogram needs at least one bin".into()));
    }
    let all = series.iter().flat_map(|s| s.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Empty("histogram of empty or non-finite data".into()));
    }
    let hi = if hi > lo { hi } else { lo + 1.0 };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
    let counts = series
        .iter()
        .map(|s| {
            let mut c = vec![0usize; bins];
            for &v in s.iter() {
                let k = (((v - lo) / width) as usize).min(bins - 1);
                c[k] += 1;
            }
            c
        })
        .collect();
    Ok((edges, counts))
}

pub fn mean(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Empty("mean of an empty series".into()));
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}
