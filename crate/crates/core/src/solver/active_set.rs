//! Dual active-set projection onto `{1ᵀx = 0, x_u - x_l ≥ δ}`.
//!
//! This is the Goldfarb-Idnani method specialised to the identity Hessian:
//! start from the centered point with the equality active, repeatedly add
//! the most violated inequality, and step along the projection of its normal
//! onto the null space of the active normals, dropping constraints whose
//! multiplier would turn negative.

use nalgebra::{DMatrix, DVector};

use super::{Pair, SolverError};

const MAX_ITERATIONS: usize = 100_000;

pub(crate) struct Projection {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn normal(n: usize, pair: Pair) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[pair.1] += 1.0;
    v[pair.0] -= 1.0;
    v
}

fn slack(x: &DVector<f64>, pair: Pair) -> f64 {
    x[pair.1] - x[pair.0] - pair.2
}

/// Solves `min ‖x - x0‖²` over the polyhedron. Returns an infeasibility
/// error when the margins admit no point.
pub(crate) fn project_polyhedral(x0: &[f64], pairs: &[Pair]) -> Result<Projection, SolverError> {
    let n = x0.len();
    let mean = x0.iter().sum::<f64>() / n as f64;
    let mut x = DVector::from_iterator(n, x0.iter().map(|v| v - mean));
    let scale = 1.0 + x.amax() + pairs.iter().map(|p| p.2).fold(0.0, f64::max);
    let tol = 1e-13 * scale;
    let ones = DVector::from_element(n, 1.0);
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let mut iterations = 0;

    loop {
        let mut worst: Option<(usize, f64)> = None;
        for (k, &p) in pairs.iter().enumerate() {
            if active.contains(&k) {
                continue;
            }
            let s = slack(&x, p);
            if s < -tol && worst.is_none_or(|(_, w)| s < w) {
                worst = Some((k, s));
            }
        }
        let Some((p, _)) = worst else {
            return Ok(Projection {
                x: x.iter().cloned().collect(),
                iterations,
                converged: true,
            });
        };
        let np = normal(n, pairs[p]);
        let mut up = 0.0;
        loop {
            iterations += 1;
            if iterations > MAX_ITERATIONS {
                return Ok(Projection {
                    x: x.iter().cloned().collect(),
                    iterations,
                    converged: false,
                });
            }
            let mut cols = vec![ones.clone()];
            cols.extend(active.iter().map(|&k| normal(n, pairs[k])));
            let nmat = DMatrix::from_columns(&cols);
            let gram = nmat.transpose() * &nmat;
            let rhs = nmat.transpose() * &np;
            let r = match gram.clone().cholesky() {
                Some(c) => c.solve(&rhs),
                None => gram
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| SolverError::Infeasible("active normals became dependent".into()))?,
            };
            let z = &np - &nmat * &r;
            let zz = z.norm_squared();

            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (j, &u) in mult.iter().enumerate() {
                let rj = r[j + 1];
                if rj > 1e-12 {
                    let t = u / rj;
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            let t2 = if zz > 1e-14 {
                -slack(&x, pairs[p]) / zz
            } else {
                f64::INFINITY
            };
            if t1.is_infinite() && t2.is_infinite() {
                return Err(SolverError::Infeasible(format!(
                    "ordering margins cannot all hold (pair {} -> {})",
                    pairs[p].0, pairs[p].1
                )));
            }
            let t = t1.min(t2);
            if zz > 1e-14 {
                x += &z * t;
            }
            for (j, u) in mult.iter_mut().enumerate() {
                *u -= t * r[j + 1];
            }
            up += t;
            if t2 <= t1 {
                active.push(p);
                mult.push(up);
                break;
            }
            let j = drop.expect("partial step has a blocking constraint");
            active.remove(j);
            mult.remove(j);
        }
    }
}
