//! Sampling and variation operators on gene lists.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{complete_specs, GeneKind, GeneSpec, GeneValue};
use crate::error::Result;
use crate::seed::{self, Rng};

pub(crate) fn sample_gene(spec: &GeneSpec, rng: &mut Rng) -> GeneValue {
    match &spec.kind {
        GeneKind::Continuous { lo, hi } => GeneValue::Real(rng.random_range(*lo..=*hi)),
        GeneKind::LogContinuous { lo, hi } => {
            GeneValue::Real(rng.random_range(lo.ln()..=hi.ln()).exp().clamp(*lo, *hi))
        }
        GeneKind::Integer { lo, hi } => GeneValue::Int(rng.random_range(*lo..=*hi)),
        GeneKind::Categorical { menu } => {
            GeneValue::Cat(menu[rng.random_range(0..menu.len())].clone())
        }
    }
}

pub(crate) fn sample_with(specs: &[GeneSpec], rng: &mut Rng) -> Vec<GeneValue> {
    specs.iter().map(|s| sample_gene(s, rng)).collect()
}

/// Uniform sample of every gene (log-uniform for log genes). Requires all 20 genes.
pub fn random_vector(specs: &[GeneSpec], seed: u64) -> Result<Vec<GeneValue>> {
    let specs = complete_specs(specs)?;
    Ok(sample_with(&specs, &mut seed::rng(seed)))
}

/// Step fraction at which integer genes move by exactly 1..3.
pub const BASE_SIGMA: f64 = 0.1;

/// Perturbs one gene: Gaussian step of `sigma_frac` of the range for real
/// genes (in log space for log genes), a +-1..3 step for integers (scaled
/// by `sigma_frac / BASE_SIGMA` when that exceeds 1), a fresh menu draw for
/// categoricals. Always clamped to bounds.
pub(crate) fn perturb(spec: &GeneSpec, v: &GeneValue, sigma_frac: f64, rng: &mut Rng) -> GeneValue {
    let z = |rng: &mut Rng| -> f64 { StandardNormal.sample(rng) };
    match (&spec.kind, v) {
        (GeneKind::Continuous { lo, hi }, GeneValue::Real(x)) => {
            GeneValue::Real((x + z(rng) * sigma_frac * (hi - lo)).clamp(*lo, *hi))
        }
        (GeneKind::LogContinuous { lo, hi }, GeneValue::Real(x)) => {
            let (a, b) = (lo.ln(), hi.ln());
            let l = (x.ln() + z(rng) * sigma_frac * (b - a)).clamp(a, b);
            // exp(ln(hi)) need not round-trip; snap bounds exactly
            let y = if l == a {
                *lo
            } else if l == b {
                *hi
            } else {
                l.exp().clamp(*lo, *hi)
            };
            GeneValue::Real(y)
        }
        (GeneKind::Integer { lo, hi }, GeneValue::Int(x)) => {
            let scale = (sigma_frac / BASE_SIGMA).max(1.0);
            let step = (rng.random_range(1..=3) as f64 * scale).min(i64::MAX as f64 / 4.0) as i64;
            let signed = if rng.random_bool(0.5) { step } else { -step };
            GeneValue::Int((x + signed).clamp(*lo, *hi))
        }
        _ => sample_gene(spec, rng),
    }
}

/// Mutates each gene independently with probability `rate`.
pub fn mutate(
    v: &[GeneValue],
    specs: &[GeneSpec],
    rate: f64,
    sigma_frac: f64,
    seed: u64,
) -> Vec<GeneValue> {
    mutate_with(v, specs, rate, sigma_frac, &mut seed::rng(seed))
}

pub(crate) fn mutate_with(
    v: &[GeneValue],
    specs: &[GeneSpec],
    rate: f64,
    sigma_frac: f64,
    rng: &mut Rng,
) -> Vec<GeneValue> {
    v.iter()
        .zip(specs)
        .map(|(g, s)| {
            if rate > 0.0 && rng.random_bool(rate.min(1.0)) {
                perturb(s, g, sigma_frac, rng)
            } else {
                g.clone()
            }
        })
        .collect()
}

/// Uniform crossover: where `mask[i]` child 1 takes `a[i]` and child 2 `b[i]`, else swapped.
pub fn crossover_with_mask(
    a: &[GeneValue],
    b: &[GeneValue],
    mask: &[bool],
) -> (Vec<GeneValue>, Vec<GeneValue>) {
    a.iter()
        .zip(b)
        .zip(mask)
        .map(|((x, y), &m)| {
            if m {
                (x.clone(), y.clone())
            } else {
                (y.clone(), x.clone())
            }
        })
        .unzip()
}

pub fn crossover(a: &[GeneValue], b: &[GeneValue], seed: u64) -> (Vec<GeneValue>, Vec<GeneValue>) {
    crossover_with(a, b, &mut seed::rng(seed))
}

pub(crate) fn crossover_with(
    a: &[GeneValue],
    b: &[GeneValue],
    rng: &mut Rng,
) -> (Vec<GeneValue>, Vec<GeneValue>) {
    let mask: Vec<bool> = (0..a.len()).map(|_| rng.random_bool(0.5)).collect();
    crossover_with_mask(a, b, &mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tuner::{default_specs, validate_genes, GENE_NAMES};

    fn pos(name: &str) -> usize {
        GENE_NAMES.iter().position(|n| *n == name).unwrap()
    }

    #[test]
    fn random_vectors_respect_bounds() {
        let specs = default_specs();
        let (d, k) = (pos("d_xgb"), pos("k_svm"));
        let mut kernels = std::collections::BTreeSet::new();
        for s in 0..1000 {
            let v = random_vector(&specs, s).unwrap();
            validate_genes(&v, &specs).unwrap();
            match &v[d] {
                GeneValue::Int(x) => assert!((1..=12).contains(x)),
                other => panic!("{other:?}"),
            }
            kernels.insert(v[k].to_string());
        }
        assert_eq!(kernels.len(), 3);
        assert_eq!(
            random_vector(&specs, 4).unwrap(),
            random_vector(&specs, 4).unwrap()
        );
    }

    #[test]
    fn mutation_limits() {
        let specs = default_specs();
        let v = random_vector(&specs, 1).unwrap();
        assert_eq!(mutate(&v, &specs, 0.0, 0.1, 9), v);
        for s in 0..50 {
            let m = mutate(&v, &specs, 1.0, 1e9, s);
            validate_genes(&m, &specs).unwrap();
            for (g, sp) in m.iter().zip(&specs) {
                match (&sp.kind, g) {
                    (GeneKind::Continuous { lo, hi }, GeneValue::Real(x))
                    | (GeneKind::LogContinuous { lo, hi }, GeneValue::Real(x)) => {
                        assert!(x == lo || x == hi, "{} = {x}", sp.name)
                    }
                    (GeneKind::Integer { lo, hi }, GeneValue::Int(x)) => {
                        assert!(x == lo || x == hi, "{} = {x}", sp.name)
                    }
                    _ => {}
                }
            }
        }
        // at the base step integers move by 1..3 (or stop at a bound)
        for s in 0..200 {
            let m = mutate(&v, &specs, 1.0, BASE_SIGMA, s);
            for ((g, sp), orig) in m.iter().zip(&specs).zip(&v) {
                if let (GeneKind::Integer { lo, hi }, GeneValue::Int(x), GeneValue::Int(o)) =
                    (&sp.kind, g, orig)
                {
                    assert!((1..=3).contains(&(x - o).abs()) || x == lo || x == hi);
                }
            }
        }
    }

    #[test]
    fn crossover_examples() {
        let specs = default_specs();
        let a = random_vector(&specs, 1).unwrap();
        let b = random_vector(&specs, 2).unwrap();
        assert_eq!(crossover(&a, &a, 5), (a.clone(), a.clone()));
        assert_eq!(
            crossover_with_mask(&a, &b, &[true; 20]),
            (a.clone(), b.clone())
        );
        for s in 0..1000 {
            let (c1, c2) = crossover(&a, &b, s);
            for i in 0..20 {
                assert!(c1[i] == a[i] || c1[i] == b[i]);
                assert!(c2[i] == a[i] || c2[i] == b[i]);
            }
            validate_genes(&c1, &specs).unwrap();
            validate_genes(&c2, &specs).unwrap();
        }
    }
}
