//! Kernel SVM trained by stochastic subgradient descent on the hinge loss
//! (kernelized Pegasos), with a Platt-style logistic link fit on the
//! training decision values.
//!
//! There is no explicit bias; the kernel gets a constant `+1` so the
//! implicit feature space carries one.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{sigmoid, TrainSet};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf,
    Poly,
}

impl Kernel {
    pub const MENU: [Kernel; 3] = [Kernel::Linear, Kernel::Rbf, Kernel::Poly];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Linear => "linear",
            Kernel::Rbf => "rbf",
            Kernel::Poly => "poly",
        }
    }

    pub fn parse(s: &str) -> Option<Kernel> {
        Kernel::MENU.into_iter().find(|k| k.name() == s)
    }

    /// `gamma` is ignored for the linear kernel.
    pub fn eval(self, gamma: f64, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Kernel::Linear => dot(a, b),
            Kernel::Rbf => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
            Kernel::Poly => (gamma * dot(a, b) + 1.0).powi(3),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub kernel: Kernel,
    pub gamma: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            kernel: Kernel::Rbf,
            gamma: 0.05,
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::param("c_svm", "must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::param("g_svm", "must be positive"));
        }
        Ok(())
    }
}

/// Iterations: ten passes' worth, bounded.
fn iteration_budget(n: usize) -> usize {
    (10 * n).clamp(1000, 10_000)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSvm {
    pub kernel: Kernel,
    pub gamma: f64,
    pub support: Vec<Vec<f64>>,
    /// Signed dual coefficients, already divided by `lambda * T`.
    pub coef: Vec<f64>,
    pub platt_a: f64,
    pub platt_b: f64,
}

impl KernelSvm {
    pub fn fit(data: &TrainSet, params: &SvmParams, seed: u64) -> Result<Self> {
        params.validate()?;
        data.require_binary()?;
        let n = data.len();
        let ys: Vec<f64> = data
            .y
            .iter()
            .map(|&c| if c == 1 { 1.0 } else { -1.0 })
            .collect();
        let k = |i: usize, j: usize| params.kernel.eval(params.gamma, &data.x[i], &data.x[j]) + 1.0;
        let gram: Option<Vec<f64>> = (n <= 3000).then(|| {
            let mut g = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v = k(i, j);
                    g[i * n + j] = v;
                    g[j * n + i] = v;
                }
            }
            g
        });
        let kij = |i: usize, j: usize| gram.as_ref().map_or_else(|| k(i, j), |g| g[i * n + j]);

        let lambda = 1.0 / (params.c * n as f64);
        let iters = iteration_budget(n);
        let mut rng = seed::rng(seed);
        let mut alpha = vec![0u32; n];
        let mut active: Vec<usize> = Vec::new();
        for t in 1..=iters {
            let i = rng.random_range(0..n);
            let s: f64 = active
                .iter()
                .map(|&j| alpha[j] as f64 * ys[j] * kij(j, i))
                .sum();
            if ys[i] * s / (lambda * t as f64) < 1.0 {
                if alpha[i] == 0 {
                    active.push(i);
                }
                alpha[i] += 1;
            }
        }
        active.sort_unstable();
        let scale = 1.0 / (lambda * iters as f64);
        let coef: Vec<f64> = active
            .iter()
            .map(|&j| alpha[j] as f64 * ys[j] * scale)
            .collect();
        let decisions: Vec<f64> = (0..n)
            .map(|i| active.iter().zip(&coef).map(|(&j, c)| c * kij(j, i)).sum())
            .collect();
        let (platt_a, platt_b) = platt(&decisions, &data.y);
        Ok(KernelSvm {
            kernel: params.kernel,
            gamma: params.gamma,
            support: active.iter().map(|&j| data.x[j].clone()).collect(),
            coef,
            platt_a,
            platt_b,
        })
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(s, c)| c * (self.kernel.eval(self.gamma, s, x) + 1.0))
            .sum()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.platt_a * self.decision(x) + self.platt_b)
    }
}

/// Fits `P(y=1 | f) = sigmoid(a f + b)` by Newton's method on the
/// cross-entropy with Platt's smoothed targets.
fn platt(f: &[f64], y: &[usize]) -> (f64, f64) {
    let n_pos = y.iter().filter(|&&c| c == 1).count() as f64;
    let n_neg = y.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let t: Vec<f64> = y.iter().map(|&c| if c == 1 { hi } else { lo }).collect();
    let loss = |a: f64, b: f64| -> f64 {
        f.iter()
            .zip(&t)
            .map(|(&fi, &ti)| {
                let m = a * fi + b;
                let sp = if m > 0.0 {
                    m + (-m).exp().ln_1p()
                } else {
                    m.exp().ln_1p()
                };
                sp - ti * m
            })
            .sum()
    };
    let (mut a, mut b) = (1.0, ((n_pos + 1.0) / (n_neg + 1.0)).ln());
    let mut cur = loss(a, b);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 1e-12, 0.0, 1e-12);
        for (&fi, &ti) in f.iter().zip(&t) {
            let p = sigmoid(a * fi + b);
            let d = p - ti;
            let w = p * (1.0 - p);
            ga += d * fi;
            gb += d;
            haa += w * fi * fi;
            hab += w * fi;
            hbb += w;
        }
        if ga.abs() < 1e-10 && gb.abs() < 1e-10 {
            break;
        }
        let det = haa * hbb - hab * hab;
        let (da, db) = if det.abs() > 1e-300 {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga, gb)
        };
        let mut step = 1.0;
        let mut improved = false;
        while step > 1e-10 {
            let (na, nb) = (a - step * da, b - step * db);
            let l = loss(na, nb);
            if l < cur - 1e-4 * step * (ga * da + gb * db) {
                a = na;
                b = nb;
                cur = l;
                improved = true;
                break;
            }
            step /= 2.0;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::testing::{accuracy, blobs};

    #[test]
    fn kernel_examples() {
        for x in [[0.0, 0.0], [3.5, -2.0], [1e3, 7.0]] {
            assert_eq!(Kernel::Rbf.eval(0.7, &x, &x), 1.0);
        }
        assert_eq!(Kernel::Linear.eval(5.0, &[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(Kernel::Poly.eval(0.5, &[1.0, 2.0], &[2.0, 1.0]), 27.0);
        assert_eq!(Kernel::parse("rbf"), Some(Kernel::Rbf));
        assert_eq!(Kernel::parse("sigmoid"), None);
    }

    #[test]
    fn two_point_problem() {
        let data = TrainSet::new(vec![vec![-1.0], vec![1.0]], vec![0, 1]).unwrap();
        let p = SvmParams {
            kernel: Kernel::Linear,
            ..Default::default()
        };
        let m = KernelSvm::fit(&data, &p, 3).unwrap();
        assert!(m.decision(&[-1.0]) < 0.0 && m.predict_proba(&[-1.0]) < 0.5);
        assert!(m.decision(&[1.0]) > 0.0 && m.predict_proba(&[1.0]) > 0.5);
    }

    #[test]
    fn single_class_rejected() {
        let data = TrainSet::new(vec![vec![0.0], vec![1.0]], vec![0, 0]).unwrap();
        assert!(KernelSvm::fit(&data, &SvmParams::default(), 1).is_err());
    }

    #[test]
    fn all_kernels_separate_blobs() {
        let train = blobs(500, 8, 6.0, 31);
        let test = blobs(500, 8, 6.0, 32);
        for kernel in Kernel::MENU {
            let p = SvmParams {
                kernel,
                ..Default::default()
            };
            let m = KernelSvm::fit(&train, &p, 2).unwrap();
            let acc = accuracy(|x| m.predict_proba(x), &test);
            assert!(acc >= 0.95, "{kernel:?}: {acc}");
            assert_eq!(m, KernelSvm::fit(&train, &p, 2).unwrap());
        }
    }

    #[test]
    fn platt_orders_probabilities_with_decisions() {
        let train = blobs(200, 4, 2.0, 5);
        let m = KernelSvm::fit(&train, &SvmParams::default(), 1).unwrap();
        assert!(m.platt_a > 0.0);
    }
}
