//! Gauss-Hermite quadrature for integrals against a normal density.
//!
//! Nodes are roots of the physicists' Hermite polynomial `H_n`, found by
//! Newton iteration on the orthonormal recurrence; weights integrate against
//! `exp(-x^2)` over the real line.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Default number of nodes for the integrals over log-tau.
pub const DEFAULT_NODES: usize = 41;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("Gauss-Hermite rule needs at least one node"));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let pim4 = PI.powf(-0.25);
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0_f64;
        for i in 0..m {
            // Initial guesses for the largest roots, then extrapolate from
            // the previously found ones.
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            let mut converged = false;
            for _ in 0..100 {
                let (p1, dp) = orthonormal_hermite(n, z, pim4);
                pp = dp;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::numeric(
                    format!("Hermite root {i} of {n} did not converge"),
                    vec![format!("last z = {z}")],
                ));
            }
            let (_, dp) = orthonormal_hermite(n, z, pim4);
            pp = if dp != 0.0 { dp } else { pp };
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        // ascending order
        nodes.reverse();
        weights.reverse();
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫ exp(-x^2) f(x) dx`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Abscissae and log-weights for `E[g(X)]`, `X ~ N(mean, sd^2)`.
    ///
    /// The log-weights sum (in probability space) to one.
    pub fn normal_points(&self, mean: f64, sd: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let scale = std::f64::consts::SQRT_2 * sd;
        let ln_sqrt_pi = 0.5 * PI.ln();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mean + scale * x, w.ln() - ln_sqrt_pi))
    }
}

/// Orthonormal Hermite value and derivative at `z`.
fn orthonormal_hermite(n: usize, z: f64, pim4: f64) -> (f64, f64) {
    let mut p1 = pim4;
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
    }
    let dp = (2.0 * n as f64).sqrt() * p2;
    (p1, dp)
}

/// Numerically stable `log(sum(exp(x)))`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial_odd(m: u32) -> f64 {
        // (2m-1)!!
        (1..=m).map(|k| (2 * k - 1) as f64).product()
    }

    #[test]
    fn exact_moments_up_to_degree_2n_minus_1() {
        for n in [1usize, 2, 5, 10, 20, 41, 80] {
            let gh = GaussHermite::new(n).unwrap();
            assert_eq!(gh.len(), n);
            for p in (0..2 * n as u32).step_by(2).take(30) {
                // ∫ x^p e^{-x^2} = Γ((p+1)/2) = (p-1)!! √π / 2^{p/2}
                let exact = double_factorial_odd(p / 2) * PI.sqrt() / 2f64.powi((p / 2) as i32);
                let got = gh.integrate(|x| x.powi(p as i32));
                assert!((got - exact).abs() <= 1e-11 * exact.max(1.0), "n={n} p={p}: {got} vs {exact}");
            }
            let odd = gh.integrate(|x| x.powi(3));
            assert!(odd.abs() < 1e-12);
        }
    }

    #[test]
    fn nodes_sorted_and_symmetric() {
        let gh = GaussHermite::new(DEFAULT_NODES).unwrap();
        assert!(gh.nodes().windows(2).all(|w| w[0] < w[1]));
        for i in 0..gh.len() {
            assert!((gh.nodes()[i] + gh.nodes()[gh.len() - 1 - i]).abs() < 1e-12);
        }
        assert!(gh.nodes()[DEFAULT_NODES / 2].abs() < 1e-14);
    }

    #[test]
    fn cosine_against_closed_form() {
        let gh = GaussHermite::new(20).unwrap();
        let got = gh.integrate(f64::cos);
        assert!((got - PI.sqrt() * (-0.25f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn normal_points_give_lognormal_mean() {
        let gh = GaussHermite::new(DEFAULT_NODES).unwrap();
        let mean: f64 = gh
            .normal_points(-3.0, 0.5)
            .map(|(x, lw)| (lw + x).exp())
            .sum();
        assert!((mean - (-3.0f64 + 0.125).exp()).abs() < 1e-13);
    }

    #[test]
    fn lse() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn zero_nodes_rejected() {
        assert!(GaussHermite::new(0).is_err());
    }
}
