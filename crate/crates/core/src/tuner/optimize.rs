use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ops::{crossover_with, mutate_with, perturb, sample_with};
use super::{complete_specs, GeneKind, GeneSpec, GeneValue, HyperVector};
use crate::cotrain::{initial_supervised_phase, CoTrainConfig, Experiment};
use crate::dataset::{Dataset, DatasetSplit};
use crate::error::{Error, Result};
use crate::{par, seed};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Ga,
    Sa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TunerConfig {
    pub algorithm: Algorithm,
    /// Objective evaluations, memo hits included.
    pub budget: usize,
    pub population: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    /// Gaussian mutation step as a fraction of a gene's range.
    pub mutation_sigma: f64,
    pub tournament: usize,
    pub initial_temperature: f64,
    pub cooling_rate: f64,
    pub seed: u64,
}

impl Default for TunerConfig {
    fn default() -> Self {
        TunerConfig {
            algorithm: Algorithm::Ga,
            budget: 200,
            population: 20,
            mutation_rate: 0.1,
            crossover_rate: 0.9,
            mutation_sigma: 0.1,
            tournament: 3,
            initial_temperature: 0.05,
            cooling_rate: 0.95,
            seed: 0,
        }
    }
}

impl TunerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::param("budget", "must be at least 1"));
        }
        if self.algorithm == Algorithm::Ga && self.population == 0 {
            return Err(Error::param("population", "must be at least 1"));
        }
        for (name, r) in [
            ("mutation_rate", self.mutation_rate),
            ("crossover_rate", self.crossover_rate),
            ("cooling_rate", self.cooling_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::param(name, "must be in [0, 1]"));
            }
        }
        if !(self.mutation_sigma >= 0.0 && self.mutation_sigma.is_finite()) {
            return Err(Error::param("mutation_sigma", "must be >= 0"));
        }
        if !(self.initial_temperature >= 0.0 && self.initial_temperature.is_finite()) {
            return Err(Error::param("initial_temperature", "must be >= 0"));
        }
        if self.tournament == 0 {
            return Err(Error::param("tournament", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// 1-based evaluation index.
    pub index: usize,
    pub score: f64,
    pub best: f64,
    pub genes: Vec<GeneValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub best: Vec<GeneValue>,
    pub best_score: f64,
    pub trace: Vec<TraceRow>,
    /// Last GA population (empty for SA).
    pub final_population: Vec<Vec<GeneValue>>,
}

type Objective<'o> = dyn Fn(&[GeneValue]) -> Result<f64> + Sync + 'o;

/// Evaluation bookkeeping: memo, budget, trace.
struct Evaluator<'o> {
    objective: &'o Objective<'o>,
    memo: HashMap<String, f64>,
    trace: Vec<TraceRow>,
    budget: usize,
    best: Option<(f64, Vec<GeneValue>)>,
}

fn key(v: &[GeneValue]) -> String {
    serde_json::to_string(v).expect("genes serialize")
}

fn describe(v: &[GeneValue]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl<'o> Evaluator<'o> {
    fn remaining(&self) -> usize {
        self.budget - self.trace.len()
    }

    /// Scores `batch` in order (new vectors concurrently), truncated to the budget.
    fn eval(&mut self, batch: &[Vec<GeneValue>]) -> Result<Vec<f64>> {
        let batch = &batch[..batch.len().min(self.remaining())];
        let keys: Vec<String> = batch.iter().map(|v| key(v)).collect();
        let mut fresh: Vec<usize> = Vec::new();
        for (i, k) in keys.iter().enumerate() {
            if !self.memo.contains_key(k) && !fresh.iter().any(|&j| keys[j] == *k) {
                fresh.push(i);
            }
        }
        let obj = self.objective;
        let scores = par::map(&fresh, |&i| obj(&batch[i]));
        for (&i, s) in fresh.iter().zip(scores) {
            let s = s.map_err(|e| match e {
                e @ Error::BadObjective { .. } => e,
                e => Error::ObjectiveFailed {
                    vector: describe(&batch[i]),
                    source: Box::new(e),
                },
            })?;
            if !(s.is_finite() && (0.0..=1.0).contains(&s)) {
                return Err(Error::BadObjective {
                    score: s,
                    vector: describe(&batch[i]),
                });
            }
            self.memo.insert(keys[i].clone(), s);
        }
        let mut out = Vec::with_capacity(batch.len());
        for (v, k) in batch.iter().zip(&keys) {
            let s = self.memo[k];
            if self.best.as_ref().is_none_or(|(b, _)| s > *b) {
                self.best = Some((s, v.clone()));
            }
            self.trace.push(TraceRow {
                index: self.trace.len() + 1,
                score: s,
                best: self.best.as_ref().map(|b| b.0).unwrap_or(s),
                genes: v.clone(),
            });
            out.push(s);
        }
        Ok(out)
    }
}

fn tournament(scores: &[f64], k: usize, rng: &mut seed::Rng) -> usize {
    let mut best = rng.random_range(0..scores.len());
    for _ in 1..k {
        let c = rng.random_range(0..scores.len());
        if scores[c] > scores[best] || (scores[c] == scores[best] && c < best) {
            best = c;
        }
    }
    best
}

/// Maximizes `objective` over gene lists described by `specs`.
///
/// `inject` vectors (e.g. the defaults) seed the GA population / SA start.
/// A GA population larger than the budget is shrunk to it.
pub fn optimize(
    objective: &Objective<'_>,
    config: &TunerConfig,
    specs: &[GeneSpec],
    inject: &[Vec<GeneValue>],
) -> Result<TuneOutcome> {
    config.validate()?;
    let specs = complete_specs(specs)?;
    for v in inject {
        super::validate_genes(v, &specs)?;
    }
    let mut ev = Evaluator {
        objective,
        memo: HashMap::new(),
        trace: Vec::new(),
        budget: config.budget,
        best: None,
    };
    let final_population = match config.algorithm {
        Algorithm::Ga => genetic(&mut ev, config, &specs, inject)?,
        Algorithm::Sa => {
            annealing(&mut ev, config, &specs, inject)?;
            Vec::new()
        }
    };
    let (best_score, best) = ev.best.expect("budget >= 1 evaluates something");
    Ok(TuneOutcome {
        best,
        best_score,
        trace: ev.trace,
        final_population,
    })
}

fn genetic(
    ev: &mut Evaluator<'_>,
    cfg: &TunerConfig,
    specs: &[GeneSpec],
    inject: &[Vec<GeneValue>],
) -> Result<Vec<Vec<GeneValue>>> {
    let p = if cfg.population > cfg.budget {
        log::warn!(
            "population {} exceeds budget {}; shrinking",
            cfg.population,
            cfg.budget
        );
        cfg.budget
    } else {
        cfg.population
    };
    let mut rng = seed::rng_for(cfg.seed, &[seed::TAG_TUNER, 0]);
    let mut pop: Vec<Vec<GeneValue>> = inject.iter().take(p).cloned().collect();
    while pop.len() < p {
        pop.push(sample_with(specs, &mut rng));
    }
    let mut scores = ev.eval(&pop)?;
    pop.truncate(scores.len());
    let mut generation = 1u64;
    while ev.remaining() > 0 {
        let mut rng = seed::rng_for(cfg.seed, &[seed::TAG_TUNER, generation]);
        let elite = (0..pop.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
        let mut children: Vec<Vec<GeneValue>> = Vec::with_capacity(p);
        while children.len() + 1 < p {
            let a = &pop[tournament(&scores, cfg.tournament, &mut rng)];
            let b = &pop[tournament(&scores, cfg.tournament, &mut rng)];
            let (c1, c2) = if rng.random_bool(cfg.crossover_rate) {
                crossover_with(a, b, &mut rng)
            } else {
                (a.clone(), b.clone())
            };
            for c in [c1, c2] {
                if children.len() + 1 < p {
                    children.push(mutate_with(
                        &c,
                        specs,
                        cfg.mutation_rate,
                        cfg.mutation_sigma,
                        &mut rng,
                    ));
                }
            }
        }
        let child_scores = ev.eval(&children)?;
        children.truncate(child_scores.len());
        let mut next = vec![pop[elite].clone()];
        let mut next_scores = vec![scores[elite]];
        next.extend(children);
        next_scores.extend(child_scores);
        pop = next;
        scores = next_scores;
        generation += 1;
    }
    Ok(pop)
}

fn annealing(
    ev: &mut Evaluator<'_>,
    cfg: &TunerConfig,
    specs: &[GeneSpec],
    inject: &[Vec<GeneValue>],
) -> Result<()> {
    let mut rng = seed::rng_for(cfg.seed, &[seed::TAG_TUNER, 0]);
    let mut cur = inject
        .first()
        .cloned()
        .unwrap_or_else(|| sample_with(specs, &mut rng));
    let mut cur_score = ev.eval(std::slice::from_ref(&cur))?[0];
    let mut temp = cfg.initial_temperature;
    while ev.remaining() > 0 {
        let g = rng.random_range(0..specs.len());
        let mut cand = cur.clone();
        // categoricals with one entry cannot move; retry is pointless, so re-draw anyway
        cand[g] = perturb(&specs[g], &cur[g], cfg.mutation_sigma, &mut rng);
        let s = ev.eval(std::slice::from_ref(&cand))?[0];
        let delta = s - cur_score;
        let u: f64 = rng.random();
        if delta >= 0.0 || (temp > 0.0 && u < (delta / temp).exp()) {
            cur = cand;
            cur_score = s;
        }
        temp *= cfg.cooling_rate;
    }
    Ok(())
}

/// `1 - mean per-gene distance` to `target`, each gene's distance
/// normalized by its range (log range for log genes; 0/1 for categoricals).
pub fn planted_objective(
    target: Vec<GeneValue>,
    specs: Vec<GeneSpec>,
) -> impl Fn(&[GeneValue]) -> Result<f64> + Sync {
    move |v: &[GeneValue]| {
        let d: f64 = v
            .iter()
            .zip(&target)
            .zip(&specs)
            .map(|((a, b), s)| match (&s.kind, a, b) {
                (GeneKind::Continuous { lo, hi }, GeneValue::Real(x), GeneValue::Real(y)) => {
                    (x - y).abs() / (hi - lo)
                }
                (GeneKind::LogContinuous { lo, hi }, GeneValue::Real(x), GeneValue::Real(y)) => {
                    (x.ln() - y.ln()).abs() / (hi.ln() - lo.ln())
                }
                (GeneKind::Integer { lo, hi }, GeneValue::Int(x), GeneValue::Int(y)) => {
                    (x - y).abs() as f64 / (hi - lo) as f64
                }
                _ => (a != b) as u8 as f64,
            })
            .sum();
        Ok((1.0 - d / target.len() as f64).clamp(0.0, 1.0))
    }
}

/// Tunes the pipeline: objective = combined validation mAP after the
/// supervised phase with the candidate vector. The defaults are injected.
pub fn tune_pipeline(
    dataset: &Dataset,
    split: &DatasetSplit,
    cotrain: &CoTrainConfig,
    run_seed: u64,
    tuner: &TunerConfig,
    specs: &[GeneSpec],
) -> Result<(HyperVector, TuneOutcome)> {
    let objective = |genes: &[GeneValue]| -> Result<f64> {
        let hv = HyperVector::from_genes(genes)?;
        let exp = Experiment::new(dataset, split, hv.to_pipeline(), cotrain.clone(), run_seed)?;
        let state = initial_supervised_phase(&exp)?;
        Ok(state.history[0].val_map_combined)
    };
    let specs = complete_specs(specs)?;
    let default = HyperVector::default().to_genes();
    let inject: Vec<Vec<GeneValue>> = if specs.iter().zip(&default).all(|(s, g)| s.contains(g)) {
        vec![default]
    } else {
        log::warn!("default vector lies outside the configured bounds; not injected");
        Vec::new()
    };
    let out = optimize(&objective, tuner, &specs, &inject)?;
    Ok((HyperVector::from_genes(&out.best)?, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tuner::{default_specs, random_vector, validate_genes};

    fn planted(seed: u64) -> (Vec<GeneValue>, impl Fn(&[GeneValue]) -> Result<f64> + Sync) {
        let specs = default_specs();
        let target = random_vector(&specs, 1000 + seed).unwrap();
        (target.clone(), planted_objective(target, specs))
    }

    #[test]
    fn planted_target_scores_one() {
        let (t, f) = planted(1);
        assert_eq!(f(&t).unwrap(), 1.0);
    }

    #[test]
    fn budget_one_evaluates_once() {
        let (_, f) = planted(2);
        for algorithm in [Algorithm::Ga, Algorithm::Sa] {
            let cfg = TunerConfig {
                algorithm,
                budget: 1,
                seed: 3,
                ..Default::default()
            };
            let out = optimize(&f, &cfg, &default_specs(), &[]).unwrap();
            assert_eq!(out.trace.len(), 1);
            assert_eq!(out.best, out.trace[0].genes);
        }
    }

    #[test]
    fn traces_are_monotone_and_in_bounds() {
        let (_, f) = planted(3);
        let specs = default_specs();
        for algorithm in [Algorithm::Ga, Algorithm::Sa] {
            let cfg = TunerConfig {
                algorithm,
                budget: 300,
                seed: 5,
                ..Default::default()
            };
            let out = optimize(&f, &cfg, &specs, &[]).unwrap();
            assert_eq!(out.trace.len(), 300);
            for w in out.trace.windows(2) {
                assert!(w[1].best >= w[0].best);
            }
            for r in &out.trace {
                validate_genes(&r.genes, &specs).unwrap();
            }
            assert_eq!(out, optimize(&f, &cfg, &specs, &[]).unwrap());
        }
    }

    #[test]
    fn no_variation_keeps_initial_population() {
        let (_, f) = planted(4);
        let specs = default_specs();
        let cfg = TunerConfig {
            budget: 100,
            population: 10,
            mutation_rate: 0.0,
            crossover_rate: 0.0,
            seed: 2,
            ..Default::default()
        };
        let out = optimize(&f, &cfg, &specs, &[]).unwrap();
        let initial: Vec<&Vec<GeneValue>> = out.trace[..10].iter().map(|r| &r.genes).collect();
        for v in &out.final_population {
            assert!(initial.contains(&v));
        }
    }

    #[test]
    fn zero_temperature_rejects_worse_moves() {
        // objective increases with d_xgb only; from d_xgb = 12 every move is worse or equal
        let f = |v: &[GeneValue]| -> Result<f64> {
            match v[1] {
                GeneValue::Int(d) => Ok(d as f64 / 12.0),
                _ => unreachable!(),
            }
        };
        let start = HyperVector {
            d_xgb: 12,
            ..HyperVector::default()
        };
        let cfg = TunerConfig {
            algorithm: Algorithm::Sa,
            budget: 60,
            initial_temperature: 0.0,
            seed: 1,
            ..Default::default()
        };
        let out = optimize(&f, &cfg, &default_specs(), &[start.to_genes()]).unwrap();
        assert_eq!(out.best_score, 1.0);
        // the current point never leaves d_xgb = 12: every accepted score is 1
        assert!(out.trace.iter().all(|r| r.best == 1.0));
    }

    #[test]
    fn bad_objective_is_reported() {
        let f = |_: &[GeneValue]| -> Result<f64> { Ok(f64::NAN) };
        let cfg = TunerConfig {
            budget: 3,
            ..Default::default()
        };
        assert!(matches!(
            optimize(&f, &cfg, &default_specs(), &[]),
            Err(Error::BadObjective { .. })
        ));
        let g = |_: &[GeneValue]| -> Result<f64> { Ok(1.5) };
        assert!(optimize(&g, &cfg, &default_specs(), &[]).is_err());
    }

    #[test]
    fn memo_hits_count_toward_budget() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let calls = AtomicUsize::new(0);
        let f = |_: &[GeneValue]| -> Result<f64> {
            calls.fetch_add(1, Ordering::SeqCst);
            Ok(0.5)
        };
        let v = HyperVector::default().to_genes();
        let cfg = TunerConfig {
            budget: 8,
            population: 4,
            mutation_rate: 0.0,
            crossover_rate: 0.0,
            ..Default::default()
        };
        let out = optimize(
            &f,
            &cfg,
            &default_specs(),
            &[v.clone(), v.clone(), v.clone(), v],
        )
        .unwrap();
        assert_eq!(out.trace.len(), 8);
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }
}
