use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimplexConfig {
    /// Edge length of the starting simplex in each coordinate.
    pub step: f64,
    /// Stop when every vertex lies within this distance of the best one.
    pub x_tol: f64,
    /// Or when the objective spread across vertices falls below this.
    pub f_tol: f64,
    pub max_evals: usize,
    /// Fresh simplices built around the optimum after convergence.
    pub restarts: usize,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        Self {
            step: 0.2,
            x_tol: 1e-7,
            f_tol: 1e-10,
            max_evals: 4000,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

/// Non-finite values rank below everything finite.
fn score(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Maximizes `f` with the Nelder-Mead simplex method (reflection 1,
/// expansion 2, contraction ½, shrink ½).
pub fn nelder_mead(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], cfg: &SimplexConfig) -> Result<SimplexResult> {
    let f0 = score(f(x0));
    if !f0.is_finite() {
        return Err(Error::OptimizerFailed(format!(
            "objective is not finite at the starting point {x0:?}"
        )));
    }
    if x0.is_empty() {
        return Ok(SimplexResult {
            x: Vec::new(),
            value: f0,
            evals: 1,
        });
    }
    let mut evals = 1;
    let mut best = (x0.to_vec(), f0);
    for round in 0..=cfg.restarts {
        let step = if round == 0 { cfg.step } else { cfg.step * 0.5 };
        let (x, v, used, converged) = run(&mut f, &best.0, best.1, step, cfg, cfg.max_evals.saturating_sub(evals))?;
        evals += used;
        let improved = v > best.1;
        if v >= best.1 {
            best = (x, v);
        }
        if !converged {
            if round == cfg.restarts {
                return Err(Error::OptimizerFailed(format!(
                    "no convergence within {} evaluations",
                    cfg.max_evals
                )));
            }
            continue;
        }
        if round > 0 && !improved {
            break;
        }
    }
    Ok(SimplexResult {
        x: best.0,
        value: best.1,
        evals,
    })
}

fn run(
    f: &mut impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    f0: f64,
    step: f64,
    cfg: &SimplexConfig,
    budget: usize,
) -> Result<(Vec<f64>, f64, usize, bool)> {
    let k = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        score(f(x))
    };
    let mut pts: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f0)];
    for i in 0..k {
        let mut x = x0.to_vec();
        x[i] += step;
        let mut v = eval(&x, &mut evals);
        if !v.is_finite() {
            x[i] = x0[i] - step;
            v = eval(&x, &mut evals);
        }
        pts.push((x, v));
    }
    loop {
        // Descending order: pts[0] is best, pts[k] worst.
        pts.sort_by(|a, b| b.1.total_cmp(&a.1));
        let spread = pts[0].1 - pts[k].1;
        let diam = pts[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&pts[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diam < cfg.x_tol || (spread.is_finite() && spread < cfg.f_tol) {
            return Ok((pts[0].0.clone(), pts[0].1, evals, true));
        }
        if evals >= budget {
            return Ok((pts[0].0.clone(), pts[0].1, evals, false));
        }
        let centroid: Vec<f64> = (0..k)
            .map(|d| pts[..k].iter().map(|(x, _)| x[d]).sum::<f64>() / k as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[k].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr > pts[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            pts[k] = if fe > fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr > pts[k - 1].1 {
            pts[k] = (xr, fr);
            continue;
        }
        if fr > pts[k].1 {
            let xc = along(0.5);
            let fc = eval(&xc, &mut evals);
            if fc >= fr {
                pts[k] = (xc, fc);
                continue;
            }
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc, &mut evals);
            if fc > pts[k].1 {
                pts[k] = (xc, fc);
                continue;
            }
        }
        // Shrink towards the best vertex.
        let best = pts[0].0.clone();
        for p in pts.iter_mut().skip(1) {
            let x: Vec<f64> = p.0.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
            let v = eval(&x, &mut evals);
            *p = (x, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let target = [0.3, -1.2, 2.0];
        let f = |x: &[f64]| -x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let cfg = SimplexConfig {
            x_tol: 1e-9,
            f_tol: 1e-16,
            ..Default::default()
        };
        let r = nelder_mead(f, &[0.0, 0.0, 0.0], &cfg).unwrap();
        for (a, b) in r.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-6, "{:?}", r.x);
        }
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| -(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2));
        let cfg = SimplexConfig {
            x_tol: 1e-9,
            f_tol: 1e-14,
            ..Default::default()
        };
        let r = nelder_mead(f, &[-1.2, 1.0], &cfg).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn one_dimension_and_walls() {
        // −∞ outside (0, 1) acts as a wall the simplex retreats from.
        let f = |x: &[f64]| {
            if x[0] <= 0.0 || x[0] >= 1.0 {
                f64::NEG_INFINITY
            } else {
                -(x[0] - 0.9).powi(2)
            }
        };
        let r = nelder_mead(f, &[0.5], &SimplexConfig::default()).unwrap();
        assert!((r.x[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn bad_start_fails() {
        let f = |_: &[f64]| f64::NAN;
        assert!(matches!(
            nelder_mead(f, &[0.0], &SimplexConfig::default()),
            Err(Error::OptimizerFailed(_))
        ));
    }
}
