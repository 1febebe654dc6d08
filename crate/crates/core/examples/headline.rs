//! Supervised-only vs self-training vs co-training on synthetic dense scenes.
//!
//! cargo run --release -p densecotrain --example headline -- [seeds] [n_labeled] [n_unlabeled]

use std::time::Instant;

use densecotrain::cotrain::{
    run_cotraining, CoTrainConfig, ExchangeMode, Experiment, PipelineParams, RunOptions,
};
use densecotrain::dataset::{
    generate_synthetic_dataset, select_and_split, Dataset, DensityVariation, SceneSpec,
    SplitFractions,
};

fn main() -> densecotrain::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let seeds = args.first().copied().unwrap_or(5) as u64;
    let n_lab = args.get(1).copied().unwrap_or(200);
    let n_unl = args.get(2).copied().unwrap_or(800);
    let t0 = Instant::now();
    let mut sums = [0.0; 3];
    for seed in 1..=seeds {
        let spec = SceneSpec {
            overlap_factor: 0.4,
            ..SceneSpec::default()
        };
        let (recs, _) =
            generate_synthetic_dataset(n_lab + n_unl, &spec, &DensityVariation::default(), seed)?;
        let split = select_and_split(&recs, n_lab, n_unl, SplitFractions::default(), seed)?;
        let mut ds = Dataset::new(recs);
        ds.apply_split(&split);
        let arm = |max_rounds, mode| -> densecotrain::Result<_> {
            let cfg = CoTrainConfig {
                max_rounds,
                mode,
                ..CoTrainConfig::default()
            };
            let exp = Experiment::new(&ds, &split, PipelineParams::default(), cfg, seed)?;
            run_cotraining(&exp, &RunOptions::default())
        };
        let sup = arm(0, ExchangeMode::Cross)?;
        let selft = arm(2, ExchangeMode::SelfTrain)?;
        let co = arm(2, ExchangeMode::Cross)?;
        let m = [&sup, &selft, &co].map(|o| o.test.combined.map_or_zero());
        for (s, v) in sums.iter_mut().zip(m) {
            *s += v;
        }
        println!(
            "seed {seed}: supervised {:.4} self {:.4} co {:.4} | A {:.4}/{:.4}/{:.4} B {:.4}/{:.4}/{:.4} | best rounds {}/{}",
            m[0], m[1], m[2],
            sup.test.view_a.map_or_zero(), selft.test.view_a.map_or_zero(), co.test.view_a.map_or_zero(),
            sup.test.view_b.map_or_zero(), selft.test.view_b.map_or_zero(), co.test.view_b.map_or_zero(),
            selft.best_round, co.best_round,
        );
        for r in &co.history {
            println!(
                "  co round {}: val A {:.4} B {:.4} C {:.4} gen {}/{} prec {:?}/{:?}",
                r.round,
                r.val_map_a,
                r.val_map_b,
                r.val_map_combined,
                r.generated_by_a,
                r.generated_by_b,
                r.precision_a.map(|p| (p * 1000.0).round() / 1000.0),
                r.precision_b.map(|p| (p * 1000.0).round() / 1000.0)
            );
        }
    }
    let n = seeds as f64;
    println!(
        "mean: supervised {:.4} self {:.4} co {:.4} ({:.1}s)",
        sums[0] / n,
        sums[1] / n,
        sums[2] / n,
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}
