//! Classical reference forecasters: simple exponential smoothing, AR with
//! exogenous regressors fitted by least squares, and last-value repetition.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("empty series")]
    Empty,
    #[error("alpha {0} outside (0, 1]")]
    Alpha(f64),
    #[error("difference order {0} not in {{0, 1}}")]
    DiffOrder(usize),
    #[error("{rows} usable rows cannot identify {cols} coefficients")]
    TooShort { rows: usize, cols: usize },
    #[error("design matrix has rank {rank} < {cols} columns")]
    Rank { rank: usize, cols: usize },
    #[error("exogenous input mismatch: {0}")]
    Exog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsParams {
    pub alpha: f64,
    /// Initial level; the first observation when `None`.
    pub init: Option<f64>,
}

/// Final smoothed level of `series`.
pub fn es_level(series: &[f64], params: &EsParams) -> Result<f64, BaselineError> {
    if !(params.alpha > 0.0 && params.alpha <= 1.0) {
        return Err(BaselineError::Alpha(params.alpha));
    }
    let first = *series.first().ok_or(BaselineError::Empty)?;
    let mut level = params.init.unwrap_or(first);
    for &y in series {
        level = params.alpha * y + (1.0 - params.alpha) * level;
    }
    Ok(level)
}

/// Flat `h`-step extrapolation of the final level.
pub fn es_forecast(series: &[f64], alpha: f64, h: usize) -> Result<Vec<f64>, BaselineError> {
    let level = es_level(series, &EsParams { alpha, init: None })?;
    Ok(vec![level; h])
}

/// Candidate smoothing constants searched by [`es_select_alpha`].
pub const ES_ALPHA_GRID: [f64; 10] = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 1.0];

/// Alpha minimising the in-sample one-step-ahead squared error.
pub fn es_select_alpha(series: &[f64]) -> Result<f64, BaselineError> {
    let first = *series.first().ok_or(BaselineError::Empty)?;
    let mut best = (f64::INFINITY, 1.0);
    for &alpha in &ES_ALPHA_GRID {
        let mut level = first;
        let mut sse = 0.0;
        for &y in &series[1..] {
            sse += (y - level).powi(2);
            level = alpha * y + (1.0 - alpha) * level;
        }
        if sse < best.0 {
            best = (sse, alpha);
        }
    }
    Ok(best.1)
}

/// Repeats the last observation.
pub fn naive_forecast(series: &[f64], h: usize) -> Result<Vec<f64>, BaselineError> {
    let last = *series.last().ok_or(BaselineError::Empty)?;
    Ok(vec![last; h])
}

/// Fitted `Δ^d y_t = c + Σ φ_i Δ^d y_{t-i} + β·x_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArxParams {
    pub ar_order: usize,
    pub diff_order: usize,
    pub intercept: f64,
    pub ar: Vec<f64>,
    pub exog: Vec<f64>,
}

fn difference(series: &[f64], d: usize) -> Vec<f64> {
    match d {
        0 => series.to_vec(),
        _ => series.windows(2).map(|w| w[1] - w[0]).collect(),
    }
}

fn exog_width(exog: &[Vec<f64>], n: usize) -> Result<usize, BaselineError> {
    if exog.is_empty() {
        return Ok(0);
    }
    if exog.len() != n {
        return Err(BaselineError::Exog(format!("{} exogenous rows for {n} observations", exog.len())));
    }
    let k = exog[0].len();
    if exog.iter().any(|r| r.len() != k) {
        return Err(BaselineError::Exog("ragged exogenous rows".into()));
    }
    Ok(k)
}

/// Regression design: rows `[1, lags..., exog...]` and the differenced target.
/// `exog` is empty or has one row per observation of `series`.
pub fn arx_design(
    series: &[f64],
    exog: &[Vec<f64>],
    p: usize,
    d: usize,
) -> Result<(DMatrix<f64>, DVector<f64>), BaselineError> {
    if d > 1 {
        return Err(BaselineError::DiffOrder(d));
    }
    if series.is_empty() {
        return Err(BaselineError::Empty);
    }
    let k = exog_width(exog, series.len())?;
    let w = difference(series, d);
    let cols = 1 + p + k;
    let rows = w.len().saturating_sub(p);
    if rows <= cols {
        return Err(BaselineError::TooShort { rows, cols });
    }
    let mut x = DMatrix::zeros(rows, cols);
    let mut y = DVector::zeros(rows);
    for r in 0..rows {
        let t = r + p;
        x[(r, 0)] = 1.0;
        for i in 1..=p {
            x[(r, i)] = w[t - i];
        }
        if k > 0 {
            // w[t] corresponds to series[t + d]
            for (j, v) in exog[t + d].iter().enumerate() {
                x[(r, 1 + p + j)] = *v;
            }
        }
        y[r] = w[t];
    }
    Ok((x, y))
}

/// Ordinary least squares through an SVD; rank-deficient designs are errors.
pub fn arx_fit(series: &[f64], exog: &[Vec<f64>], p: usize, d: usize) -> Result<ArxParams, BaselineError> {
    let (x, y) = arx_design(series, exog, p, d)?;
    let (rows, cols) = x.shape();
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * (rows.max(cols) as f64);
    let rank = svd.rank(tol);
    if rank < cols {
        return Err(BaselineError::Rank { rank, cols });
    }
    let beta = svd.solve(&y, tol).map_err(|_| BaselineError::Rank { rank, cols })?;
    Ok(ArxParams {
        ar_order: p,
        diff_order: d,
        intercept: beta[0],
        ar: beta.rows(1, p).iter().copied().collect(),
        exog: beta.rows(1 + p, cols - 1 - p).iter().copied().collect(),
    })
}

/// Recursive `h`-step forecast continuing `history`; predicted values replace
/// unknown lags, and differencing is inverted by cumulative summation.
pub fn arx_forecast(
    params: &ArxParams,
    history: &[f64],
    future_exog: &[Vec<f64>],
    h: usize,
) -> Result<Vec<f64>, BaselineError> {
    let p = params.ar_order;
    let d = params.diff_order;
    if history.len() < p + d || history.is_empty() {
        return Err(BaselineError::TooShort {
            rows: history.len(),
            cols: p + d,
        });
    }
    if !params.exog.is_empty() && future_exog.len() < h {
        return Err(BaselineError::Exog(format!("{} future rows for horizon {h}", future_exog.len())));
    }
    let mut w = difference(history, d);
    let mut last = *history.last().unwrap();
    let mut out = Vec::with_capacity(h);
    for k in 0..h {
        let mut next = params.intercept;
        for (i, phi) in params.ar.iter().enumerate() {
            next += phi * w[w.len() - 1 - i];
        }
        if !params.exog.is_empty() {
            let row = &future_exog[k];
            if row.len() != params.exog.len() {
                return Err(BaselineError::Exog("future exogenous width differs from fit".into()));
            }
            next += params.exog.iter().zip(row).map(|(b, x)| b * x).sum::<f64>();
        }
        w.push(next);
        last = if d == 1 { last + next } else { next };
        out.push(last);
    }
    Ok(out)
}

/// Orders searched by [`arx_select`].
pub const ARX_P_GRID: [usize; 5] = [1, 2, 3, 4, 5];
pub const ARX_D_GRID: [usize; 2] = [0, 1];

/// Order selected on an inner holdout (the tail of the training series).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArxSelection {
    pub params: ArxParams,
    pub holdout_rmse: f64,
}

/// Grid-searches `p`, `d` by holdout RMSE, then refits on the whole series.
/// Orders whose design is singular or too short are skipped.
pub fn arx_select(series: &[f64], exog: &[Vec<f64>], holdout: usize) -> Result<ArxSelection, BaselineError> {
    let n = series.len();
    if n == 0 {
        return Err(BaselineError::Empty);
    }
    exog_width(exog, n)?;
    let split = n.saturating_sub(holdout);
    let mut best: Option<(f64, usize, usize)> = None;
    let mut last_err = BaselineError::TooShort { rows: n, cols: 2 };
    for &d in &ARX_D_GRID {
        for &p in &ARX_P_GRID {
            let (tr_exog, fut_exog) = if exog.is_empty() { (&exog[..0], &exog[..0]) } else { exog.split_at(split) };
            let fit = match arx_fit(&series[..split], tr_exog, p, d) {
                Ok(f) => f,
                Err(e) => {
                    last_err = e;
                    continue;
                }
            };
            let Ok(pred) = arx_forecast(&fit, &series[..split], fut_exog, n - split) else { continue };
            let mse = series[split..].iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                / (n - split).max(1) as f64;
            if mse.is_finite() && best.is_none_or(|b| mse < b.0) {
                best = Some((mse, p, d));
            }
        }
    }
    let (mse, p, d) = best.ok_or(last_err)?;
    Ok(ArxSelection {
        params: arx_fit(series, exog, p, d)?,
        holdout_rmse: mse.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn es_hand_cases() {
        assert_eq!(es_forecast(&[4.0; 6], 0.3, 3).unwrap(), vec![4.0; 3]);
        assert_eq!(es_forecast(&[0.0, 10.0], 0.5, 2).unwrap(), vec![5.0, 5.0]);
        assert_eq!(es_forecast(&[1.0, 7.0, 2.0], 1.0, 2).unwrap(), vec![2.0, 2.0]);
        assert_eq!(es_forecast(&[1.0], 0.0, 1), Err(BaselineError::Alpha(0.0)));
        assert_eq!(es_forecast(&[1.0], 1.5, 1), Err(BaselineError::Alpha(1.5)));
        assert_eq!(es_forecast(&[], 0.5, 1), Err(BaselineError::Empty));
        let lvl = es_level(&[2.0], &EsParams { alpha: 0.5, init: Some(0.0) }).unwrap();
        assert_eq!(lvl, 1.0);
    }

    #[test]
    fn es_alpha_selection_prefers_tracking_on_a_walk() {
        let s: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert_eq!(es_select_alpha(&s).unwrap(), 1.0);
    }

    #[test]
    fn naive_cases() {
        assert_eq!(naive_forecast(&[1.0, 2.0, 3.0], 2).unwrap(), vec![3.0, 3.0]);
        assert_eq!(naive_forecast(&[], 2), Err(BaselineError::Empty));
    }

    proptest! {
        #[test]
        fn es_alpha_one_is_naive(v in prop::collection::vec(-1e3f64..1e3, 1..40), h in 0usize..10) {
            prop_assert_eq!(es_forecast(&v, 1.0, h).unwrap(), naive_forecast(&v, h).unwrap());
        }
    }

    #[test]
    fn ar1_coefficient_recovered() {
        let mut s = vec![5.0];
        for _ in 0..60 {
            s.push(0.8 * s.last().unwrap());
        }
        let fit = arx_fit(&s, &[], 1, 0).unwrap();
        assert!((fit.ar[0] - 0.8).abs() < 1e-6, "{fit:?}");
        assert!(fit.intercept.abs() < 1e-6);
    }

    #[test]
    fn ramp_with_differencing() {
        let s: Vec<f64> = (0..20).map(|i| 3.0 + 2.0 * i as f64).collect();
        let fit = arx_fit(&s, &[], 0, 1).unwrap();
        let f = arx_forecast(&fit, &s, &[], 3).unwrap();
        for (k, v) in f.iter().enumerate() {
            assert!((v - (3.0 + 2.0 * (20 + k) as f64)).abs() < 1e-9);
        }
    }

    #[test]
    fn intercept_only_is_mean() {
        let s = [1.0, 4.0, 2.0, 9.0];
        let fit = arx_fit(&s, &[], 0, 0).unwrap();
        let f = arx_forecast(&fit, &s, &[], 2).unwrap();
        assert!((f[0] - 4.0).abs() < 1e-12 && (f[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn singular_design_is_rank_error() {
        // constant series: lag column equals the intercept column
        let s = [2.0; 12];
        assert!(matches!(arx_fit(&s, &[], 1, 0), Err(BaselineError::Rank { .. })));
        assert!(matches!(arx_fit(&[1.0, 2.0], &[], 1, 0), Err(BaselineError::TooShort { .. })));
        assert!(matches!(arx_fit(&s, &[], 1, 2), Err(BaselineError::DiffOrder(2))));
    }

    #[test]
    fn residuals_orthogonal_to_regressors() {
        let n = 80;
        let s: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64).sin() * 3.0 + i as f64 * 0.1).collect();
        let ex: Vec<Vec<f64>> = (0..n).map(|i| vec![(i % 7) as f64, ((i * 3) % 5) as f64]).collect();
        for (p, d) in [(1, 0), (3, 0), (2, 1)] {
            let fit = arx_fit(&s, &ex, p, d).unwrap();
            let (x, y) = arx_design(&s, &ex, p, d).unwrap();
            let mut beta = vec![fit.intercept];
            beta.extend(&fit.ar);
            beta.extend(&fit.exog);
            let r = &y - &x * DVector::from_vec(beta);
            let xr = x.transpose() * r;
            assert!(xr.amax() < 1e-8, "p={p} d={d}: {}", xr.amax());
        }
    }

    #[test]
    fn exogenous_signal_is_learned() {
        let n = 60;
        let ex: Vec<Vec<f64>> = (0..n + 5).map(|i| vec![((i * 7) % 13) as f64]).collect();
        let s: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * ex[i][0]).collect();
        let sel = arx_select(&s, &ex[..n], 10).unwrap();
        let f = arx_forecast(&sel.params, &s, &ex[n..], 5).unwrap();
        for k in 0..5 {
            assert!((f[k] - (1.0 + 2.0 * ex[n + k][0])).abs() < 1e-6);
        }
        assert!(arx_select(&s, &ex[..n - 1], 10).is_err());
    }
}
