//! Smooth minimum and smooth argmin over extended reals.
//!
//! `min_β(v) = -(1/β) · log Σ exp(-β v_i)` and its gradient, the softmin
//! weights `Φ_β(v)_i = exp(-β v_i) / Σ exp(-β v_k)`.
//!
//! `f64::INFINITY` marks an absent branch: it contributes no mass and always
//! receives an exactly-zero weight and gradient. All log-sum-exp evaluations
//! are shifted by the finite minimum so that large `β` never overflows.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Inverse temperature of the smoothing. Positive and finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Beta(f64);

impl Beta {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value.is_finite() {
            Ok(Self(value))
        } else {
            invalid(format!("beta must be positive and finite, got {value}"))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Beta {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Beta::new(value)
    }
}

impl From<Beta> for f64 {
    fn from(b: Beta) -> f64 {
        b.0
    }
}

fn finite_min(v: &[f64]) -> Option<f64> {
    v.iter().copied().filter(|x| x.is_finite()).fold(None, |acc, x| Some(acc.map_or(x, |m: f64| m.min(x))))
}

fn check_entries(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return invalid("softmin of an empty vector");
    }
    if v.iter().any(|x| x.is_nan() || *x == f64::NEG_INFINITY) {
        return invalid("softmin input must be finite or +inf");
    }
    Ok(())
}

/// Smooth minimum `min_β(v)`. Returns `+inf` iff every entry is `+inf`.
pub fn softmin_value(v: &[f64], beta: Beta) -> Result<f64> {
    check_entries(v)?;
    let Some(m) = finite_min(v) else {
        return Ok(f64::INFINITY);
    };
    let b = beta.get();
    let s: f64 = v.iter().filter(|x| x.is_finite()).map(|&x| (-b * (x - m)).exp()).sum();
    Ok(m - s.ln() / b)
}

/// Softmin weights `Φ_β(v)`; zero exactly on `+inf` entries.
pub fn softmin_weights(v: &[f64], beta: Beta) -> Result<Vec<f64>> {
    check_entries(v)?;
    let m = finite_min(v).ok_or(Error::NoFiniteBranch)?;
    let b = beta.get();
    let mut w: Vec<f64> = v.iter().map(|&x| if x.is_finite() { (-b * (x - m)).exp() } else { 0.0 }).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= z);
    Ok(w)
}

/// Vector-Jacobian product of `(softmin_value, softmin_weights)`.
///
/// Given `∂L/∂value` and `∂L/∂weights`, returns `∂L/∂v`. Uses
/// `∂value/∂v = w` and `∂w_a/∂v_b = β w_a (w_b - δ_ab)`.
pub fn softmin_vjp(v: &[f64], beta: Beta, upstream_value_grad: f64, upstream_weight_grads: &[f64]) -> Result<Vec<f64>> {
    if upstream_weight_grads.len() != v.len() {
        return invalid(format!(
            "weight gradient length {} does not match input length {}",
            upstream_weight_grads.len(),
            v.len()
        ));
    }
    let w = softmin_weights(v, beta)?;
    let dot: f64 = w.iter().zip(upstream_weight_grads).map(|(a, g)| a * g).sum();
    let b = beta.get();
    Ok(w.iter()
        .zip(upstream_weight_grads)
        .map(|(&wb, &gb)| if wb == 0.0 { 0.0 } else { upstream_value_grad * wb + b * wb * (dot - gb) })
        .collect())
}

/// Two-branch softmin used in the hot loops.
///
/// Returns `(w_a, w_b, min_β(a, b))` for a finite `a` and a finite-or-infinite `b`.
#[inline]
pub(crate) fn softmin_pair(a: f64, b: f64, beta: f64) -> (f64, f64, f64) {
    if !b.is_finite() {
        return (1.0, 0.0, a);
    }
    if a <= b {
        let e = (-beta * (b - a)).exp();
        let z = 1.0 + e;
        (1.0 / z, e / z, a - z.ln() / beta)
    } else {
        let e = (-beta * (a - b)).exp();
        let z = 1.0 + e;
        (e / z, 1.0 / z, b - z.ln() / beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const INF: f64 = f64::INFINITY;

    fn beta(b: f64) -> Beta {
        Beta::new(b).unwrap()
    }

    #[test]
    fn beta_rejects_nonpositive_and_nonfinite() {
        assert!(Beta::new(0.0).is_err());
        assert!(Beta::new(-1.0).is_err());
        assert!(Beta::new(f64::NAN).is_err());
        assert!(Beta::new(INF).is_err());
        assert!(serde_json::from_str::<Beta>("-2.0").is_err());
        assert_eq!(serde_json::from_str::<Beta>("30.0").unwrap().get(), 30.0);
    }

    #[test]
    fn value_examples() {
        assert_eq!(softmin_value(&[3.0, INF], beta(1.0)).unwrap(), 3.0);
        let v = softmin_value(&[0.0, 0.0], beta(1.0)).unwrap();
        assert!((v + std::f64::consts::LN_2).abs() < 1e-15);
        // The twenty 0 -> 3 walk costs of the 4-node |i - j| fixture.
        let mut costs = vec![3.0; 4];
        costs.extend([5.0; 4]);
        costs.extend([7.0; 7]);
        costs.extend([9.0; 5]);
        let v = softmin_value(&costs, beta(1.0)).unwrap();
        assert!((v - 1.456286513519836).abs() < 1e-12);
        assert_eq!(softmin_value(&[INF, INF], beta(1.0)).unwrap(), INF);
    }

    #[test]
    fn empty_and_all_infinite_errors() {
        assert!(matches!(softmin_value(&[], beta(1.0)), Err(Error::Validation(_))));
        assert!(matches!(softmin_weights(&[INF, INF], beta(1.0)), Err(Error::NoFiniteBranch)));
        assert!(softmin_value(&[f64::NAN], beta(1.0)).is_err());
    }

    #[test]
    fn weight_examples() {
        for a in [-4.0, 0.0, 2.5, 1e6] {
            for b in [0.1, 1.0, 100.0] {
                let w = softmin_weights(&[a, a], beta(b)).unwrap();
                assert_eq!(w, vec![0.5, 0.5]);
            }
        }
        assert_eq!(softmin_weights(&[3.0, INF], beta(1.0)).unwrap(), vec![1.0, 0.0]);
        let w = softmin_weights(&[3.0, 5.0], beta(1.0)).unwrap();
        assert!((w[0] - 0.8807970779778823).abs() < 1e-12);
        assert!((w[1] - 0.11920292202211755).abs() < 1e-12);
    }

    #[test]
    fn vjp_examples() {
        let g = softmin_vjp(&[3.0, 5.0], beta(1.0), 1.0, &[0.0, 0.0]).unwrap();
        assert!((g[0] - 0.8807970779778823).abs() < 1e-12);
        assert!((g[1] - 0.11920292202211755).abs() < 1e-12);
        let g = softmin_vjp(&[1.0, 7.0, INF], beta(3.0), 0.0, &[0.0; 3]).unwrap();
        assert_eq!(g, vec![0.0; 3]);
        let g = softmin_vjp(&[1.0, INF], beta(1.0), 2.0, &[1.0, 5.0]).unwrap();
        assert_eq!(g[1], 0.0);
        assert!(softmin_vjp(&[1.0, 2.0], beta(1.0), 1.0, &[1.0]).is_err());
    }

    #[test]
    fn vjp_matches_central_differences() {
        // Scalar loss L(v) = c0 * value(v) + Σ c_a * w_a(v).
        let v = [0.3, -1.2, 2.0, 0.7, 1.1];
        let cw = [0.4, -1.3, 0.9, 2.2, -0.5];
        let c0 = 1.7;
        let b = beta(2.0);
        let loss = |v: &[f64]| {
            let w = softmin_weights(v, b).unwrap();
            c0 * softmin_value(v, b).unwrap() + w.iter().zip(&cw).map(|(x, c)| x * c).sum::<f64>()
        };
        let g = softmin_vjp(&v, b, c0, &cw).unwrap();
        let h = 1e-5;
        for i in 0..v.len() {
            let mut p = v;
            let mut m = v;
            p[i] += h;
            m[i] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
            assert!(rel < 1e-6, "component {i}: fd {fd} vs adjoint {}", g[i]);
        }
    }

    #[test]
    fn pair_matches_vector_form() {
        for (a, b, bt) in [(3.0, 5.0, 1.0), (5.0, 3.0, 2.0), (1.0, INF, 1.0), (2.0, 2.0, 100.0), (1.0, 900.0, 1000.0)] {
            let (ws, wd, m) = softmin_pair(a, b, bt);
            let w = softmin_weights(&[a, b], beta(bt)).unwrap();
            let v = softmin_value(&[a, b], beta(bt)).unwrap();
            assert!((ws - w[0]).abs() < 1e-15 && (wd - w[1]).abs() < 1e-15);
            assert!((m - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn hard_limit_at_large_beta() {
        let v = [4.0, 1.0, 2.5, INF];
        let b = beta(1e4);
        assert!((softmin_value(&v, b).unwrap() - 1.0).abs() < 1e-3);
        let w = softmin_weights(&v, b).unwrap();
        assert!((w[1] - 1.0).abs() < 1e-3);
        let w = softmin_weights(&[2.0, 2.0, 9.0], b).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-3 && (w[1] - 0.5).abs() < 1e-3);
        // No overflow far from the minimum.
        let v = softmin_value(&[1e3, 2e3], beta(1e4)).unwrap();
        assert_eq!(v, 1e3);
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![4 => -50.0..50.0f64, 1 => Just(INF)], 1..8)
            .prop_filter("needs a finite entry", |v| v.iter().any(|x| x.is_finite()))
    }

    proptest! {
        #[test]
        fn value_bounds(v in vec_strategy(), b in 0.05..50.0f64) {
            let m = v.iter().copied().fold(INF, f64::min);
            let s = softmin_value(&v, beta(b)).unwrap();
            prop_assert!(s <= m + 1e-12);
            prop_assert!(s >= m - (v.len() as f64).ln() / b - 1e-12);
        }

        #[test]
        fn weights_are_a_distribution(v in vec_strategy(), b in 0.05..50.0f64) {
            let w = softmin_weights(&v, beta(b)).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (wi, vi) in w.iter().zip(&v) {
                prop_assert!(*wi >= 0.0);
                if !vi.is_finite() { prop_assert_eq!(*wi, 0.0); }
            }
        }

        #[test]
        fn shift_covariance(v in vec_strategy(), b in 0.05..20.0f64, c in -10.0..10.0f64) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let s0 = softmin_value(&v, beta(b)).unwrap();
            let s1 = softmin_value(&shifted, beta(b)).unwrap();
            prop_assert!((s1 - (s0 + c)).abs() < 1e-9);
            let w0 = softmin_weights(&v, beta(b)).unwrap();
            let w1 = softmin_weights(&shifted, beta(b)).unwrap();
            for (x, y) in w0.iter().zip(&w1) { prop_assert!((x - y).abs() < 1e-12); }
        }

        #[test]
        fn monotone_in_each_entry(v in vec_strategy(), b in 0.05..20.0f64, idx in 0usize..8, d in 0.0..5.0f64) {
            let i = idx % v.len();
            prop_assume!(v[i].is_finite());
            let mut u = v.clone();
            u[i] += d;
            prop_assert!(softmin_value(&u, beta(b)).unwrap() >= softmin_value(&v, beta(b)).unwrap() - 1e-12);
        }

        #[test]
        fn value_gradient_equals_weights(v in prop::collection::vec(-2.0..2.0f64, 2..6), b in 0.2..2.0f64) {
            let w = softmin_weights(&v, beta(b)).unwrap();
            let h = 1e-5;
            for i in 0..v.len() {
                let mut p = v.clone();
                let mut m = v.clone();
                p[i] += h;
                m[i] -= h;
                let fd = (softmin_value(&p, beta(b)).unwrap() - softmin_value(&m, beta(b)).unwrap()) / (2.0 * h);
                let rel = (fd - w[i]).abs() / fd.abs().max(w[i].abs()).max(1e-8);
                prop_assert!(rel < 1e-6, "fd {} vs w {}", fd, w[i]);
            }
        }
    }
}
