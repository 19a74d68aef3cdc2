//! Tikhonov solves and L-curve selection of the regularization parameter.
//!
//! Each grid α is evaluated by running the identification loop over a
//! calibration window and aggregating the measurement misfit left after the
//! force correction and the identified-force norm. The force feeds back into
//! the state, so the curve is only guaranteed to behave like an L while both
//! norms stay monotone; the corner is searched on that leading segment.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::identify::{measurement_columns, IdentifySession, IdentifySetup};
use crate::numerics::{factorize, SymMatrix};
use crate::signals::SignalSeries;

/// Minimum number of calibration samples.
pub const MIN_CALIBRATION_SAMPLES: usize = 10;
/// Corners with a smaller log-log curvature are treated as absent.
pub const MIN_CORNER_CURVATURE: f64 = 1e-3;

/// Minimizer of `‖rhs − H f‖² + α‖f‖²`.
pub fn tikhonov_solve(h: &DMatrix<f64>, rhs: &[f64], alpha: f64) -> Result<DVector<f64>> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "α must be non-negative, got {alpha}"
        )));
    }
    if rhs.len() != h.nrows() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            found: rhs.len(),
        });
    }
    let n = h.ncols();
    let normal = SymMatrix::symmetrized(h.transpose() * h + DMatrix::identity(n, n) * alpha);
    let f = factorize(&normal).map_err(|_| Error::SingularNormalMatrix)?;
    f.solve((h.transpose() * DVector::from_column_slice(rhs)).as_slice())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LCurvePoint {
    pub alpha: f64,
    pub residual_norm: f64,
    pub solution_norm: f64,
}

#[derive(Debug, Clone)]
pub struct LCurveSelection {
    pub alpha: f64,
    pub index: usize,
    /// One point per grid α, in grid order.
    pub points: Vec<LCurvePoint>,
    /// Length of the leading monotone segment searched for the corner.
    pub admissible: usize,
    /// Set when no corner could be found and the fallback was used.
    pub degenerate: bool,
}

/// `n` log-spaced values over `[lo, hi]·scale`.
pub fn log_grid(lo: f64, hi: f64, scale: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo * scale];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64) * scale)
        .collect()
}

/// Default 50-point grid spanning `[1e-12, 1e2]·‖A‖²` for operator `A`.
pub fn default_grid(setup: &IdentifySetup) -> Vec<f64> {
    let norm = setup.operator().norm();
    log_grid(1e-12, 1e2, norm * norm, 50)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidGrid("empty grid".into()));
    }
    if grid.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidGrid(
            "grid values must be positive and finite".into(),
        ));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(
            "grid must be strictly increasing".into(),
        ));
    }
    if grid.len() == 2 {
        return Err(Error::InvalidGrid(
            "a curvature needs at least three points".into(),
        ));
    }
    Ok(())
}

/// Runs the loop at `setup.alpha` over the window and returns the aggregated
/// misfit `‖y − ŷ^I − A f‖` and force norm.
pub fn lcurve_point(
    setup: Arc<IdentifySetup>,
    window: &SignalSeries,
    cols: &[usize],
) -> Result<LCurvePoint> {
    let alpha = setup.alpha;
    let a = setup.operator();
    let mut session = IdentifySession::new(setup);
    let (mut res, mut sol) = (0.0, 0.0);
    let mut y = vec![0.0; cols.len()];
    for row in window.rows() {
        for (yi, &j) in y.iter_mut().zip(cols) {
            *yi = row[j];
        }
        let r = session.step(&y)?;
        res += (&r.innovation - &a * &r.force).norm_squared();
        sol += r.force.norm_squared();
    }
    Ok(LCurvePoint {
        alpha,
        residual_norm: res.sqrt(),
        solution_norm: sol.sqrt(),
    })
}

/// Number of leading points along which the residual norm does not
/// decrease and the solution norm does not increase.
pub fn monotone_prefix(points: &[LCurvePoint]) -> usize {
    let tol = 1e-12;
    points
        .windows(2)
        .position(|w| {
            w[1].residual_norm < w[0].residual_norm * (1.0 - tol)
                || w[1].solution_norm > w[0].solution_norm * (1.0 + tol)
        })
        .map_or(points.len(), |i| i + 1)
}

/// Signed three-point curvature in the log-log plane; positive for a left
/// turn when walking towards larger α (the L corner).
pub fn curvatures(points: &[LCurvePoint]) -> Vec<f64> {
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|p| {
            (
                p.residual_norm.max(f64::MIN_POSITIVE).log10(),
                p.solution_norm.max(f64::MIN_POSITIVE).log10(),
            )
        })
        .collect();
    let mut out = vec![0.0; points.len()];
    for i in 1..points.len().saturating_sub(1) {
        let (p, q, r) = (xy[i - 1], xy[i], xy[i + 1]);
        let (ax, ay) = (q.0 - p.0, q.1 - p.1);
        let (bx, by) = (r.0 - q.0, r.1 - q.1);
        let la = ax.hypot(ay);
        let lb = bx.hypot(by);
        let lc = (r.0 - p.0).hypot(r.1 - p.1);
        if la < 1e-12 || lb < 1e-12 || lc < 1e-12 {
            continue;
        }
        out[i] = 2.0 * (ax * by - ay * bx) / (la * lb * lc);
    }
    out
}

/// Index of the maximum positive curvature, or `(0, true)` when there is no corner.
pub fn select_corner(points: &[LCurvePoint]) -> (usize, bool) {
    let kappa = curvatures(points);
    let (idx, best) =
        kappa.iter().enumerate().fold(
            (0, 0.0),
            |(bi, bk), (i, &k)| if k > bk { (i, k) } else { (bi, bk) },
        );
    if best > MIN_CORNER_CURVATURE {
        (idx, false)
    } else {
        (0, true)
    }
}

/// Picks α on `grid` by the L-curve corner over a calibration window.
/// Grid points are evaluated on parallel threads; results keep grid order.
pub fn lcurve_select(
    template: &IdentifySetup,
    calibration: &SignalSeries,
    grid: &[f64],
) -> Result<LCurveSelection> {
    check_grid(grid)?;
    if calibration.n_samples() < MIN_CALIBRATION_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "calibration window needs at least {MIN_CALIBRATION_SAMPLES} samples, got {}",
            calibration.n_samples()
        )));
    }
    let labels: Vec<String> = template
        .model
        .measured_labels()
        .iter()
        .map(ToString::to_string)
        .collect();
    let cols = measurement_columns(&labels, template.input, template.params.dt, calibration)?;
    if grid.len() == 1 {
        log::warn!("single-point α grid: curvature rule not applicable");
        return Ok(LCurveSelection {
            alpha: grid[0],
            index: 0,
            points: Vec::new(),
            admissible: 1,
            degenerate: true,
        });
    }

    let setups = grid
        .iter()
        .map(|&a| template.with_alpha(a).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(grid.len());
    let chunk = grid.len().div_ceil(workers);
    let points: Vec<LCurvePoint> = std::thread::scope(|scope| {
        let handles: Vec<_> = setups
            .chunks(chunk)
            .map(|part| {
                let cols = &cols;
                scope.spawn(move || {
                    part.iter()
                        .map(|s| lcurve_point(s.clone(), calibration, cols))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("L-curve worker panicked"))
            .collect::<Result<Vec<Vec<_>>>>()
    })?
    .into_iter()
    .flatten()
    .collect();

    let admissible = monotone_prefix(&points);
    if admissible < points.len() {
        log::info!(
            "L-curve leaves the monotone regime at α = {:e}; corner searched on {admissible} of {} points",
            grid[admissible],
            points.len()
        );
    }
    let (index, degenerate) = select_corner(&points[..admissible]);
    if degenerate {
        log::warn!("L-curve has no corner; falling back to the smallest α");
    }
    Ok(LCurveSelection {
        alpha: grid[index],
        index,
        points,
        admissible,
        degenerate,
    })
}

pub fn write_lcurve_csv(path: &Path, points: &[LCurvePoint]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "alpha,residual_norm,solution_norm")?;
    for p in points {
        writeln!(
            w,
            "{:e},{:e},{:e}",
            p.alpha, p.residual_norm, p.solution_norm
        )?;
    }
    w.flush()?;
    Ok(())
}
