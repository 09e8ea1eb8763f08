//! Small derivative-free minimizers: Brent's bounded scalar search and
//! Nelder-Mead for the low-dimensional hyperparameter fits.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMin {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
}

/// Brent's method on `[lo, hi]`: golden-section steps with parabolic
/// interpolation. Stops when the bracket is narrower than `~2 * xtol`.
pub fn brent_minimize<F>(mut f: F, lo: f64, hi: f64, xtol: f64, max_iter: usize) -> Result<ScalarMin>
where
    F: FnMut(f64) -> f64,
{
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(Error::invalid(format!("bad bracket [{lo}, {hi}]")));
    }
    const GOLD: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = (lo, hi);
    let mut x = a + GOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let eps = f64::EPSILON.sqrt();

    for iter in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = eps * x.abs() * 1e-4 + xtol;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            return Ok(ScalarMin {
                x,
                fx,
                iterations: iter,
            });
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Err(Error::numeric(
        format!("Brent search did not converge in {max_iter} iterations"),
        vec![format!("bracket [{a}, {b}], best x = {x}, f(x) = {fx}")],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Convergence when the largest vertex distance from the best vertex drops below this.
    pub diameter_tol: f64,
    pub max_iter: usize,
    /// Initial simplex edge along each coordinate.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            diameter_tol: 1e-6,
            max_iter: 2000,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Standard Nelder-Mead (reflection 1, expansion 2, contraction 1/2, shrink 1/2).
///
/// Non-finite objective values are treated as `+inf`, so the simplex retreats
/// from regions where the objective is undefined.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Result<NelderMeadResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    if dim == 0 {
        return Err(Error::invalid("Nelder-Mead needs at least one parameter"));
    }
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(x0.to_vec());
    for i in 0..dim {
        let mut p = x0.to_vec();
        p[i] += opts.initial_step;
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(p, &mut evals)).collect();
    if values.iter().all(|v| v.is_infinite()) {
        return Err(Error::numeric(
            "objective is non-finite on the whole initial simplex",
            vec![format!("x0 = {x0:?}")],
        ));
    }

    let mut trace: Vec<String> = Vec::new();
    for iter in 0..opts.max_iter {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let diameter = simplex[1..]
            .iter()
            .map(|p| dist(p, &simplex[0]))
            .fold(0.0, f64::max);
        if diameter < opts.diameter_tol {
            return Ok(NelderMeadResult {
                x: simplex.swap_remove(0),
                fx: values[0],
                iterations: iter,
                evaluations: evals,
            });
        }
        if iter % 100 == 0 {
            trace.push(format!("iter {iter}: f = {:.10e}, diameter = {diameter:.3e}", values[0]));
        }

        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|p| p[j]).sum::<f64>() / dim as f64)
            .collect();
        let worst = &simplex[dim];
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(worst)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < values[0] {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[dim] = xe;
                values[dim] = fe;
            } else {
                simplex[dim] = xr;
                values[dim] = fr;
            }
            continue;
        }
        if fr < values[dim - 1] {
            simplex[dim] = xr;
            values[dim] = fr;
            continue;
        }
        // outside contraction if the reflection improved on the worst vertex
        let xc = if fr < values[dim] { along(0.5) } else { along(-0.5) };
        let fc = eval(&xc, &mut evals);
        if fc < values[dim].min(fr) {
            simplex[dim] = xc;
            values[dim] = fc;
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].clone();
        for i in 1..=dim {
            for j in 0..dim {
                simplex[i][j] = best[j] + 0.5 * (simplex[i][j] - best[j]);
            }
            values[i] = eval(&simplex[i], &mut evals);
        }
    }
    trace.push(format!("best f = {:.10e} at {:?}", values[0], simplex[0]));
    Err(Error::numeric(
        format!("Nelder-Mead did not converge in {} iterations", opts.max_iter),
        trace,
    ))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_interior_minimum() {
        let r = brent_minimize(|x| (x - 0.3).powi(2) + 1.0, 0.0, 2.0, 1e-10, 500).unwrap();
        assert!((r.x - 0.3).abs() < 1e-8);
        assert!((r.fx - 1.0).abs() < 1e-15);
    }

    #[test]
    fn brent_approaches_boundary() {
        let r = brent_minimize(|x| x, 0.0, 1.0, 1e-9, 500).unwrap();
        assert!(r.x < 1e-8);
    }

    #[test]
    fn brent_rejects_bad_bracket() {
        assert!(brent_minimize(|x| x, 1.0, 0.0, 1e-9, 10).is_err());
    }

    #[test]
    fn brent_reports_nonconvergence() {
        let err = brent_minimize(|x| (x - 0.5).powi(2), 0.0, 1.0, 1e-12, 3).unwrap_err();
        assert!(matches!(err, Error::NumericFailure { .. }));
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions {
            diameter_tol: 1e-9,
            max_iter: 5000,
            initial_step: 0.5,
        };
        let r = nelder_mead(rosen, &[-1.2, 1.0], &opts).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-5, "{:?}", r.x);
        assert!((r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn nelder_mead_quadratic_4d() {
        let target = [0.73, -2.9, 0.07, 0.2];
        let f = |x: &[f64]| {
            x.iter()
                .zip(&target)
                .enumerate()
                .map(|(i, (a, b))| (i as f64 + 1.0) * (a - b).powi(2))
                .sum::<f64>()
        };
        let r = nelder_mead(f, &[0.0; 4], &NelderMeadOptions::default()).unwrap();
        for (a, b) in r.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn nelder_mead_avoids_undefined_region() {
        // undefined for x < 0
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.05).powi(2) };
        let r = nelder_mead(f, &[0.5], &NelderMeadOptions::default()).unwrap();
        assert!((r.x[0] - 0.05).abs() < 1e-5);
    }

    #[test]
    fn nelder_mead_iteration_cap() {
        let opts = NelderMeadOptions {
            max_iter: 5,
            ..Default::default()
        };
        let err = nelder_mead(|x| x[0] * x[0], &[10.0], &opts).unwrap_err();
        match err {
            Error::NumericFailure { diagnostics, .. } => assert!(!diagnostics.is_empty()),
            e => panic!("unexpected {e:?}"),
        }
    }
}
