//! Least-squares helpers for convergence-order fits.

/// Straight-line fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Weighted residual standard deviation.
    pub sigma: f64,
}

/// Weighted least squares. Needs at least two points with positive weight.
pub fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n || w.len() != n {
        return None;
    }
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        return None;
    }
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        sxx += w[i] * (x[i] - mx) * (x[i] - mx);
        sxy += w[i] * (x[i] - mx) * (y[i] - my);
    }
    if !(sxx > 0.0) {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sigma = if n > 2 {
        let ss: f64 = (0..n).map(|i| w[i] * (y[i] - intercept - slope * x[i]).powi(2)).sum();
        (ss / sw * n as f64 / (n - 2) as f64).sqrt()
    } else {
        0.0
    };
    Some(LineFit { slope, intercept, sigma })
}

/// Unweighted log-log slope.
pub fn loglog_slope(h: &[f64], err: &[f64]) -> Option<f64> {
    let lx: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    weighted_line(&lx, &ly, &vec![1.0; h.len()]).map(|f| f.slope)
}

/// Result of an asymptotic order fit over a step ladder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderFit {
    /// Weighted log-log slope.
    pub slope: f64,
    /// Unweighted log-log slope over the same points.
    pub plain_slope: f64,
    /// Number of ladder points kept.
    pub points: usize,
    /// Whether the largest step was discarded as an outlier.
    pub dropped_largest: bool,
}

/// Log-log order fit over a step ladder.
///
/// The error of an order-`p` quantity is `c h^p (1 + O(h))`, so in log space
/// the deviation from the line grows like `h`. Points are weighted by
/// `(h_min / h)^2` to estimate the asymptotic slope, and the largest step is
/// dropped when its weighted residual exceeds three residual deviations.
pub fn asymptotic_order(h: &[f64], err: &[f64]) -> Option<OrderFit> {
    let mut idx: Vec<usize> = (0..h.len()).filter(|&i| h[i] > 0.0 && err[i] > 0.0).collect();
    idx.sort_by(|&a, &b| h[a].total_cmp(&h[b]));
    let fit_on = |idx: &[usize]| -> Option<(LineFit, f64, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let hmin = h[idx[0]];
        let lx: Vec<f64> = idx.iter().map(|&i| h[i].ln()).collect();
        let ly: Vec<f64> = idx.iter().map(|&i| err[i].ln()).collect();
        let w: Vec<f64> = idx.iter().map(|&i| (hmin / h[i]).powi(2)).collect();
        let fit = weighted_line(&lx, &ly, &w)?;
        let plain = weighted_line(&lx, &ly, &vec![1.0; lx.len()])?.slope;
        Some((fit, plain, lx, ly, w))
    };
    if idx.len() < 2 {
        return None;
    }
    let (fit, plain, lx, ly, w) = fit_on(&idx)?;
    let last = idx.len() - 1;
    let resid = (ly[last] - fit.intercept - fit.slope * lx[last]) * w[last].sqrt();
    if idx.len() > 3 && resid.abs() > 3.0 * fit.sigma {
        idx.pop();
        let (fit, plain, ..) = fit_on(&idx)?;
        return Some(OrderFit {
            slope: fit.slope,
            plain_slope: plain,
            points: idx.len(),
            dropped_largest: true,
        });
    }
    Some(OrderFit {
        slope: fit.slope,
        plain_slope: plain,
        points: idx.len(),
        dropped_largest: false,
    })
}

/// Limit of `value(h) / h^2` as `h -> 0` by a weighted linear fit in `h`
/// (weights `(h_min / h)^2`).
pub fn quadratic_coefficient_limit(h: &[f64], value: &[f64]) -> Option<f64> {
    let hmin = h.iter().cloned().fold(f64::INFINITY, f64::min);
    let ratio: Vec<f64> = h.iter().zip(value).map(|(a, b)| b / (a * a)).collect();
    let w: Vec<f64> = h.iter().map(|a| (hmin / a).powi(2)).collect();
    weighted_line(h, &ratio, &w).map(|f| f.intercept)
}
