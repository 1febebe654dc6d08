//! Rayon fan-out vs the sequential reference on two hot paths: per-image
//! detection + NMS, and random-forest training (trees are independent).
//!
//! cargo bench -p densecotrain --bench parallel_vs_sequential

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use densecotrain::dataset::{generate_synthetic_dataset, DensityVariation, SceneSpec};
use densecotrain::detector::{
    skill_from_params, Detector, DetectorParams, Profile, SimConfig, SyntheticDetector,
};
use densecotrain::ensemble::forest::{RandomForest, RfParams};
use densecotrain::ensemble::testing::blobs;
use densecotrain::par;

fn detection(c: &mut Criterion) {
    let (images, _) =
        generate_synthetic_dataset(64, &SceneSpec::default(), &DensityVariation::default(), 1)
            .unwrap();
    let sim = SimConfig::default();
    let params = DetectorParams::default_for(Profile::Contextual);
    let det = SyntheticDetector::new(
        Profile::Contextual,
        params.clone(),
        skill_from_params(&params, Profile::Contextual, &sim),
        sim,
    );
    let work = |img: &densecotrain::dataset::ImageRecord| det.detect(img, 7).len();

    let mut g = c.benchmark_group("detect_64_scenes");
    g.bench_function("sequential", |b| b.iter(|| par::map_seq(&images, work)));
    g.bench_function("rayon", |b| b.iter(|| par::map(&images, work)));
    g.finish();
}

fn forest(c: &mut Criterion) {
    let data = blobs(1000, 16, 3.0, 2);
    let params = RfParams::default();
    let mut g = c.benchmark_group("random_forest_fit");
    g.sample_size(10);
    for threads in [1, 0] {
        // 0 lets rayon pick (all cores)
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let label = if threads == 1 {
            "single".to_string()
        } else {
            format!("all_{}", pool.current_num_threads())
        };
        g.bench_with_input(BenchmarkId::new("pool", label), &threads, |b, _| {
            b.iter(|| pool.install(|| RandomForest::fit(&data, &params, 3).unwrap().trees.len()))
        });
    }
    g.finish();
}

criterion_group!(benches, detection, forest);
criterion_main!(benches);
