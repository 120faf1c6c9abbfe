//! Growth-form fits, power laws, finite-size data collapse and the
//! slow-mode probability estimate.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::ln_binomial;
use crate::observables::TimeSeries;
use crate::rng::{stream, Purpose};
use rand::Rng;

/// Reference exponents of the parity-conserving class.
pub const Z_PC: f64 = 1.744;
pub const ALPHA_PC: f64 = 0.286;

/// Closed time interval used by a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub t_min: f64,
    pub t_max: f64,
}

impl Window {
    pub fn new(t_min: f64, t_max: f64) -> Self {
        Window { t_min, t_max }
    }

    /// Drops `t < 10` and the last 20% of the recorded range.
    pub fn default_for(series: &TimeSeries) -> Self {
        let last = series.times.last().copied().unwrap_or(0) as f64;
        Window::new(10.0, 0.8 * last)
    }

    /// From `t_min` up to the last time before fewer than `min_valid` of the
    /// realizations remain unmasked.
    pub fn resolved(series: &TimeSeries, t_min: f64, min_valid: f64) -> Self {
        let full = series.n_valid.iter().copied().max().unwrap_or(0) as f64;
        let mut t_max = t_min;
        for (i, &t) in series.times.iter().enumerate() {
            if (series.n_valid[i] as f64) < min_valid * full || !series.mean[i].is_finite() {
                break;
            }
            t_max = t as f64;
        }
        Window::new(t_min, t_max)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_min && t <= self.t_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    SqrtTLnT,
    SqrtT,
    Linear,
    LnT,
}

impl Form {
    pub const ALL: [Form; 4] = [Form::SqrtTLnT, Form::SqrtT, Form::Linear, Form::LnT];

    pub fn x(&self, t: f64) -> f64 {
        match self {
            Form::SqrtTLnT => (t * t.ln()).sqrt(),
            Form::SqrtT => t.sqrt(),
            Form::Linear => t,
            Form::LnT => t.ln(),
        }
    }

    fn min_t(&self) -> f64 {
        match self {
            Form::SqrtTLnT => 2.0,
            Form::LnT => 1.0,
            _ => 0.0,
        }
    }
}

impl fmt::Display for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Form::SqrtTLnT => "sqrt_tlnt",
            Form::SqrtT => "sqrt_t",
            Form::Linear => "linear",
            Form::LnT => "ln_t",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub form: String,
    pub params: BTreeMap<String, f64>,
    /// Bootstrap standard errors, when computed.
    #[serde(default)]
    pub param_errors: BTreeMap<String, f64>,
    /// `sqrt(Σ residual²)` in the fitted coordinates.
    pub residual_norm: f64,
    pub r_squared: f64,
    pub window: Window,
    pub n_points: usize,
}

impl FitResult {
    pub fn param(&self, name: &str) -> f64 {
        self.params.get(name).copied().unwrap_or(f64::NAN)
    }
}

struct LineFit {
    slope: f64,
    intercept: f64,
    ssr: f64,
    r2: f64,
}

fn line_fit(x: &[f64], y: &[f64], through_origin: bool) -> Result<LineFit> {
    let n = x.len();
    let needed = if through_origin { 1 } else { 2 };
    if n < needed + 1 {
        return Err(Error::Fit(format!("need at least {} points, got {n}", needed + 1)));
    }
    let nf = n as f64;
    let (mx, my) = (x.iter().sum::<f64>() / nf, y.iter().sum::<f64>() / nf);
    let (slope, intercept) = if through_origin {
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        if sxx == 0.0 {
            return Err(Error::Fit("degenerate abscissa".into()));
        }
        (x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / sxx, 0.0)
    } else {
        let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
        if sxx <= f64::EPSILON * nf * mx.abs().max(1.0) {
            return Err(Error::Fit("degenerate abscissa".into()));
        }
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let s = sxy / sxx;
        (s, my - s * mx)
    };
    let ssr: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let sst: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else if ssr == 0.0 { 1.0 } else { 0.0 };
    Ok(LineFit {
        slope,
        intercept,
        ssr,
        r2,
    })
}

fn window_points(series: &TimeSeries, window: Window) -> Result<Vec<(f64, f64)>> {
    if !(window.t_min <= window.t_max) {
        return Err(Error::Fit(format!("empty window [{}, {}]", window.t_min, window.t_max)));
    }
    let first = series.times.first().copied().unwrap_or(0) as f64;
    let last = series.times.last().copied().unwrap_or(0) as f64;
    if series.is_empty() || window.t_max < first || window.t_min > last {
        return Err(Error::Fit(format!(
            "window [{}, {}] outside data range [{first}, {last}]",
            window.t_min, window.t_max
        )));
    }
    Ok(series
        .valid_points()
        .into_iter()
        .filter(|(t, _, _)| window.contains(*t))
        .map(|(t, y, _)| (t, y))
        .collect())
}

/// Least-squares `y = λ·f(t) + c` (or `y = λ·f(t)` through the origin).
pub fn fit_form(series: &TimeSeries, window: Window, form: Form, through_origin: bool) -> Result<FitResult> {
    if window.t_min < form.min_t() {
        return Err(Error::Fit(format!("{form} needs t >= {}", form.min_t())));
    }
    let pts = window_points(series, window)?;
    let x: Vec<f64> = pts.iter().map(|p| form.x(p.0)).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let lf = line_fit(&x, &y, through_origin)?;
    let mut params = BTreeMap::new();
    params.insert("lambda".into(), lf.slope);
    if !through_origin {
        params.insert("intercept".into(), lf.intercept);
    }
    Ok(FitResult {
        form: if through_origin { format!("{form}_origin") } else { form.to_string() },
        params,
        param_errors: BTreeMap::new(),
        residual_norm: lf.ssr.sqrt(),
        r_squared: lf.r2,
        window,
        n_points: pts.len(),
    })
}

pub fn fit_sqrt_tlnt(series: &TimeSeries, window: Window) -> Result<FitResult> {
    fit_form(series, window, Form::SqrtTLnT, false)
}

pub fn fit_sqrt_tlnt_origin(series: &TimeSeries, window: Window) -> Result<FitResult> {
    fit_form(series, window, Form::SqrtTLnT, true)
}

/// Every growth form on the same window, in [`Form::ALL`] order.
pub fn compare_forms(series: &TimeSeries, window: Window) -> Result<Vec<FitResult>> {
    Form::ALL.iter().map(|&f| fit_form(series, window, f, false)).collect()
}

/// `y = A·t^{−a}` by regression in log-log coordinates. Non-positive points
/// are dropped first.
pub fn fit_power_law(series: &TimeSeries, window: Window) -> Result<FitResult> {
    let pts: Vec<(f64, f64)> = window_points(series, window)?
        .into_iter()
        .filter(|&(t, y)| t > 0.0 && y > 0.0)
        .collect();
    if pts.is_empty() {
        return Err(Error::Fit("no positive points in window".into()));
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let lf = line_fit(&x, &y, false)?;
    let mut params = BTreeMap::new();
    params.insert("exponent".into(), -lf.slope);
    params.insert("amplitude".into(), lf.intercept.exp());
    Ok(FitResult {
        form: "power_law".into(),
        params,
        param_errors: BTreeMap::new(),
        residual_norm: lf.ssr.sqrt(),
        r_squared: lf.r2,
        window,
        n_points: pts.len(),
    })
}

// ---------------------------------------------------------------------------
// Data collapse

/// Scaling ansatz used by [`collapse_fit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollapseForm {
    /// Curves `n(t)` labelled by `L`: abscissa `t/L^z`, ordinate `n·t^α`.
    Density,
    /// Curves `C(x)` labelled by `t`: abscissa `x/t^{1/z}`, ordinate
    /// `C·t^{1/z}`. Only `z` is fitted.
    Spatial,
}

impl CollapseForm {
    fn rescale(&self, label: f64, u: f64, y: f64, alpha: f64, z: f64) -> (f64, f64) {
        match self {
            CollapseForm::Density => (u / label.powf(z), y * u.powf(alpha)),
            CollapseForm::Spatial => (u / label.powf(1.0 / z), y * label.powf(1.0 / z)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Grid {
    pub fn new(min: f64, max: f64, step: f64) -> Self {
        Grid { min, max, step }
    }

    fn values(&self) -> Vec<f64> {
        if self.step <= 0.0 || self.max < self.min {
            return vec![self.min];
        }
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.min + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseResult {
    pub alpha: f64,
    pub z: f64,
    pub cost: f64,
    /// `(α, z, cost)` over the coarse grid; infinite cost where curves fail
    /// to overlap.
    pub landscape: Vec<(f64, f64, f64)>,
    pub fit: FitResult,
}

/// One curve of a collapse: a label (`L` or `t`) and its `(u, y)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: f64,
    pub points: Vec<(f64, f64)>,
}

impl Curve {
    /// Unmasked points of `series` with `t` inside `window`.
    pub fn from_series(label: f64, series: &TimeSeries, window: Window) -> Self {
        Curve {
            label,
            points: series
                .valid_points()
                .into_iter()
                .filter(|(t, _, _)| window.contains(*t))
                .map(|(t, y, _)| (t, y))
                .collect(),
        }
    }
}

const COLLAPSE_GRID: usize = 64;
/// Coarse cells refined, and zoom levels per cell (each shrinks the step 4x).
const REFINE_SEEDS: usize = 4;
const REFINE_LEVELS: usize = 3;

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&v| v < x);
    if i == 0 {
        return ys[0];
    }
    if i >= xs.len() {
        return ys[xs.len() - 1];
    }
    let (x0, x1) = (xs[i - 1], xs[i]);
    let w = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
    ys[i - 1] + w * (ys[i] - ys[i - 1])
}

/// Normalized variance about the pointwise mean curve:
/// `Σ_g var_g / Σ_g mean_g²` over a common grid in the overlap of all
/// rescaled curves.
fn collapse_cost(curves: &[Curve], form: CollapseForm, alpha: f64, z: f64) -> Result<f64> {
    let log = form == CollapseForm::Density;
    let mut scaled = Vec::with_capacity(curves.len());
    for c in curves {
        let mut pts: Vec<(f64, f64)> = c
            .points
            .iter()
            .map(|&(u, y)| form.rescale(c.label, u, y, alpha, z))
            .filter(|&(x, y)| x.is_finite() && y.is_finite() && (!log || x > 0.0))
            .map(|(x, y)| (if log { x.ln() } else { x }, y))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.len() < 2 {
            return Err(Error::Fit(format!("curve {} has fewer than two usable points", c.label)));
        }
        scaled.push(pts);
    }
    let lo = scaled.iter().map(|p| p[0].0).fold(f64::NEG_INFINITY, f64::max);
    let hi = scaled.iter().map(|p| p[p.len() - 1].0).fold(f64::INFINITY, f64::min);
    if lo >= hi {
        let (i, _) = scaled
            .iter()
            .enumerate()
            .max_by(|a, b| a.1[0].0.total_cmp(&b.1[0].0))
            .expect("non-empty");
        return Err(Error::Fit(format!(
            "rescaled curves do not overlap; curve {} starts beyond the others' range",
            curves[i].label
        )));
    }
    let cols: Vec<(Vec<f64>, Vec<f64>)> = scaled
        .iter()
        .map(|p| (p.iter().map(|q| q.0).collect(), p.iter().map(|q| q.1).collect()))
        .collect();
    let (mut var_sum, mut mean_sq) = (0.0, 0.0);
    let k = curves.len() as f64;
    for g in 0..COLLAPSE_GRID {
        let x = lo + (hi - lo) * g as f64 / (COLLAPSE_GRID - 1) as f64;
        let vals: Vec<f64> = cols.iter().map(|(xs, ys)| interp(xs, ys, x)).collect();
        let m = vals.iter().sum::<f64>() / k;
        var_sum += vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / k;
        mean_sq += m * m;
    }
    if mean_sq == 0.0 {
        return Err(Error::Fit("collapsed curve is identically zero".into()));
    }
    Ok(var_sum / mean_sq)
}

/// Grid search over `(α, z)`, then repeated zooming around the best few
/// cells. The spatial form ignores `alphas` and reports `α = 1/z`.
pub fn collapse_fit(curves: &[Curve], form: CollapseForm, alphas: Grid, zs: Grid) -> Result<CollapseResult> {
    if curves.len() < 3 {
        return Err(Error::Fit(format!("collapse needs at least 3 curves, got {}", curves.len())));
    }
    let alpha_vals = match form {
        CollapseForm::Density => alphas.values(),
        CollapseForm::Spatial => vec![0.0],
    };
    let cells: Vec<(f64, f64)> = alpha_vals
        .iter()
        .flat_map(|&a| zs.values().into_iter().map(move |z| (a, z)))
        .collect();
    let landscape: Vec<(f64, f64, f64)> = cells
        .par_iter()
        .map(|&(a, z)| (a, z, collapse_cost(curves, form, a, z).unwrap_or(f64::INFINITY)))
        .collect();
    let mut ranked: Vec<(f64, f64, f64)> = landscape.iter().copied().filter(|c| c.2.is_finite()).collect();
    if ranked.is_empty() {
        // Surface the overlap diagnostic of the first cell.
        let (a, z) = cells[0];
        collapse_cost(curves, form, a, z)?;
        return Err(Error::Fit("no grid cell produced a finite cost".into()));
    }
    ranked.sort_by(|a, b| a.2.total_cmp(&b.2));
    let cost_at = |a: f64, z: f64| collapse_cost(curves, form, a, z).unwrap_or(f64::INFINITY);
    let (alpha, z, cost) = ranked
        .iter()
        .take(REFINE_SEEDS)
        .map(|&seed| {
            let (mut best, mut sa, mut sz) = (seed, alphas.step, zs.step);
            for _ in 0..REFINE_LEVELS {
                let a_vals = match form {
                    CollapseForm::Density => Grid::new(best.0 - 2.0 * sa, best.0 + 2.0 * sa, sa / 4.0).values(),
                    CollapseForm::Spatial => vec![0.0],
                };
                let z_vals = Grid::new(best.1 - 2.0 * sz, best.1 + 2.0 * sz, sz / 4.0).values();
                let fine: Vec<(f64, f64)> = a_vals
                    .iter()
                    .flat_map(|&a| z_vals.iter().map(move |&z| (a, z)))
                    .collect();
                best = fine
                    .par_iter()
                    .map(|&(a, z)| (a, z, cost_at(a, z)))
                    .collect::<Vec<_>>()
                    .into_iter()
                    .chain([best])
                    .min_by(|a, b| a.2.total_cmp(&b.2))
                    .expect("non-empty refinement");
                sa /= 4.0;
                sz /= 4.0;
            }
            best
        })
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .expect("at least one seed");
    let alpha = if form == CollapseForm::Spatial { 1.0 / z } else { alpha };
    let mut params = BTreeMap::new();
    params.insert("alpha".into(), alpha);
    params.insert("z".into(), z);
    let (t_min, t_max) = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.0))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(t), b.max(t)));
    Ok(CollapseResult {
        alpha,
        z,
        cost,
        landscape,
        fit: FitResult {
            form: match form {
                CollapseForm::Density => "collapse_density".into(),
                CollapseForm::Spatial => "collapse_spatial".into(),
            },
            params,
            param_errors: BTreeMap::new(),
            residual_norm: cost.sqrt(),
            r_squared: f64::NAN,
            window: Window::new(t_min, t_max),
            n_points: curves.iter().map(|c| c.points.len()).sum(),
        },
    })
}

// ---------------------------------------------------------------------------
// Slow-mode probability

/// `(exact, approx)` with `exact = −2[ln C(L−2Δl, νL) − ln C(L, νL)]` and
/// `approx = 8νΔl`.
pub fn psapprox(l: u64, dl: u64, nu: f64) -> Result<(f64, f64)> {
    let q = nu * l as f64;
    if !(0.0..=1.0).contains(&nu) || (q - q.round()).abs() > 1e-9 {
        return Err(Error::Domain(format!("nu*L = {q} is not an integer in [0, L]")));
    }
    let q = q.round() as u64;
    if 2 * dl + q > l {
        return Err(Error::Domain(format!("need 2*dl + nu*L <= L, got {} > {l}", 2 * dl + q)));
    }
    let exact = -2.0 * (ln_binomial(l - 2 * dl, q) - ln_binomial(l, q));
    Ok((exact, 8.0 * nu * dl as f64))
}

// ---------------------------------------------------------------------------
// Coefficient versus filling

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub nu: f64,
    pub lambda: f64,
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaTable {
    pub rows: Vec<LambdaRow>,
    /// Slope of `λ = s·ν` through the origin over `ν <= nu_max`.
    pub slope: f64,
    pub nu_max: f64,
    pub residuals: Vec<f64>,
    /// Largest `|residual|` divided by the spread of the fitted `λ`.
    pub max_relative_residual: f64,
}

/// Fit every series with `y = λ√(t ln t) + c` on its window, then fit
/// `λ(ν)` through the origin for `ν <= nu_max`.
pub fn lambda_vs_nu(entries: &[(f64, TimeSeries, Window)], nu_max: f64) -> Result<LambdaTable> {
    let rows: Vec<LambdaRow> = entries
        .iter()
        .map(|(nu, s, w)| {
            let fit = fit_sqrt_tlnt(s, *w)?;
            Ok(LambdaRow {
                nu: *nu,
                lambda: fit.param("lambda"),
                fit,
            })
        })
        .collect::<Result<_>>()?;
    let sel: Vec<&LambdaRow> = rows.iter().filter(|r| r.nu <= nu_max + 1e-12).collect();
    let x: Vec<f64> = sel.iter().map(|r| r.nu).collect();
    let y: Vec<f64> = sel.iter().map(|r| r.lambda).collect();
    let lf = line_fit(&x, &y, true)?;
    let residuals: Vec<f64> = x.iter().zip(&y).map(|(a, b)| b - lf.slope * a).collect();
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let spread = hi - lo;
    let worst = residuals.iter().map(|r| r.abs()).fold(0.0, f64::max);
    Ok(LambdaTable {
        rows,
        slope: lf.slope,
        nu_max,
        residuals,
        max_relative_residual: if spread > 0.0 { worst / spread } else { f64::INFINITY },
    })
}

// ---------------------------------------------------------------------------
// Bootstrap

/// Standard deviation of each parameter of `fit` over `n` resamples of the
/// realizations behind `series`. Resamples whose fit fails are skipped.
pub fn bootstrap_fit(
    series: &TimeSeries,
    n: usize,
    seed: u64,
    fit: impl Fn(&TimeSeries) -> Result<FitResult> + Sync,
) -> Result<BTreeMap<String, f64>> {
    let rows = &series.samples;
    if rows.is_empty() {
        return Err(Error::Fit("series carries no per-realization samples".into()));
    }
    let times: Vec<usize> = series.times.iter().map(|&t| t as usize).collect();
    let draws: Vec<BTreeMap<String, f64>> = (0..n)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = stream(seed, Purpose::Bootstrap, &[i as u64]);
            let pick: Vec<Vec<f64>> = (0..rows.len()).map(|_| rows[rng.random_range(0..rows.len())].clone()).collect();
            let resampled = TimeSeries::from_samples(&times, pick, &series.meta.estimator);
            fit(&resampled).ok().map(|f| f.params)
        })
        .collect();
    if draws.len() < 2 {
        return Err(Error::Fit("too few successful bootstrap fits".into()));
    }
    let mut out = BTreeMap::new();
    for key in draws[0].keys() {
        let vals: Vec<f64> = draws.iter().filter_map(|d| d.get(key).copied()).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        out.insert(key.clone(), var.sqrt());
    }
    Ok(out)
}
