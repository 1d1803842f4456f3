//! Test-side generators and oracles. Nothing here calls the library's
//! solvers or enumeration helpers.

#![allow(dead_code)]

use rand::Rng;
use tree_opo::constraints::{ConstraintSet, OrderingPair, Origin};

/// Random acyclic constraint set: pairs follow a hidden random order.
pub fn random_dag<R: Rng>(rng: &mut R, n: usize, margin: f64) -> ConstraintSet {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let density: f64 = rng.gen_range(0.0..0.7);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(density) {
                pairs.push(OrderingPair::new(order[i], order[j], margin, Origin::Pair));
            }
        }
    }
    ConstraintSet::new(n, pairs).expect("acyclic by construction")
}

pub fn binary_rewards<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect()
}

pub fn centered(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - m).collect()
}

pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn pop_var(v: &[f64]) -> f64 {
    norm_sq(&centered(v)) / v.len() as f64
}

/// Largest amount by which `a` breaks `a_l + margin <= a_u`.
pub fn worst_violation(a: &[f64], cs: &ConstraintSet, margin: f64) -> f64 {
    cs.pairs()
        .iter()
        .map(|p| a[p.lower] + margin.max(p.margin) - a[p.upper])
        .fold(0.0, f64::max)
}

/// Projection of the centered rewards onto `{1ᵀa = 0, ‖a‖² <= N, a_l <= a_u}`
/// by enumerating faces: every subset of pairs held tight merges indices into
/// groups, the face projection is the group mean of r0, pulled radially into
/// the ball. The closest feasible candidate is the projection. Exponential in
/// the pair count; meant for N <= 4.
pub fn face_projection(r: &[f64], cs: &ConstraintSet) -> Vec<f64> {
    let n = r.len();
    let r0 = centered(r);
    let pairs = cs.pairs();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << pairs.len()) {
        let mut group: Vec<usize> = (0..n).collect();
        fn root(g: &mut [usize], i: usize) -> usize {
            let mut i = i;
            while g[i] != i {
                g[i] = g[g[i]];
                i = g[i];
            }
            i
        }
        for (k, p) in pairs.iter().enumerate() {
            if mask & (1 << k) != 0 {
                let (a, b) = (root(&mut group, p.lower), root(&mut group, p.upper));
                group[a] = b;
            }
        }
        let roots: Vec<usize> = (0..n).map(|i| root(&mut group, i)).collect();
        let mut a: Vec<f64> = (0..n)
            .map(|i| {
                let members: Vec<usize> = (0..n).filter(|&j| roots[j] == roots[i]).collect();
                members.iter().map(|&j| r0[j]).sum::<f64>() / members.len() as f64
            })
            .collect();
        let norm = norm_sq(&a);
        if norm > n as f64 {
            let s = (n as f64 / norm).sqrt();
            a.iter_mut().for_each(|x| *x *= s);
        }
        if pairs.iter().any(|p| a[p.lower] > a[p.upper] + 1e-12) {
            continue;
        }
        let d = dist(&a, &r0);
        if best.as_ref().is_none_or(|(b, _)| d < *b) {
            best = Some((d, a));
        }
    }
    best.expect("the all-tight face is feasible").1
}

/// Squared norm of the min-norm point of `{1ᵀa = 0, a_u - a_l >= δ}` by
/// cyclic Dykstra over the half-spaces, started at the origin. Half-space
/// projections keep the sum, so the hyperplane is never left.
pub fn min_norm_sq(n: usize, cs: &ConstraintSet, margin: f64) -> f64 {
    let pairs: Vec<(usize, usize, f64)> = cs
        .pairs()
        .iter()
        .map(|p| (p.lower, p.upper, p.margin.max(margin)))
        .collect();
    let mut x = vec![0.0; n];
    let mut inc = vec![vec![0.0; n]; pairs.len()];
    for _ in 0..500_000 {
        let mut change = 0.0f64;
        for (k, &(l, u, d)) in pairs.iter().enumerate() {
            let y: Vec<f64> = x.iter().zip(&inc[k]).map(|(a, b)| a + b).collect();
            let mut p = y.clone();
            let gap = d - (p[u] - p[l]);
            if gap > 0.0 {
                p[l] -= gap / 2.0;
                p[u] += gap / 2.0;
            }
            for i in 0..n {
                inc[k][i] = y[i] - p[i];
                change = change.max((p[i] - x[i]).abs());
            }
            x = p;
        }
        if change < 1e-14 {
            break;
        }
    }
    norm_sq(&x)
}

/// Softmax of a logit row.
pub fn softmax(l: &[f64]) -> Vec<f64> {
    let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = l.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}
