use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use densecotrain::cotrain::{run_cotraining, ExchangeMode, Experiment, RunOptions};
use densecotrain::dataset::{
    generate_synthetic_dataset, load_annotations, select_and_split, write_annotations,
    DensityVariation, SceneSpec, SplitFractions, OBJECT_CLASS,
};
use densecotrain::geom::ScoredBox;
use densecotrain::interchange::load_predictions;
use densecotrain::metrics::{evaluate, EvalImage, EvalReport};
use densecotrain::tuner::{tune_pipeline, Algorithm, HyperVector};
use densecotrain::Error;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::reports::{self, RunReport, Timings, TuneReport};
use crate::svg::{line_plot, Series};

/// Flags shared by every command.
pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub const DEFAULT_OUT: &str = "out";

impl Globals {
    fn run_config(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        Ok(cfg)
    }

    fn seed(&self) -> CliResult<u64> {
        match (self.seed, &self.config) {
            (Some(s), _) => Ok(s),
            (None, Some(_)) => self.run_config()?.seed(),
            (None, None) => Err(CliError::usage("missing required flag --seed")),
        }
    }

    fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }
}

fn out_of(cfg: &RunConfig) -> PathBuf {
    cfg.out
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

pub struct SynthGen {
    pub images: usize,
    pub rows: Option<u32>,
    pub cols: Option<u32>,
    pub overlap: Option<f64>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub box_w: Option<f64>,
    pub box_h: Option<f64>,
    pub jitter: Option<f64>,
}

pub fn synth_gen(g: &Globals, a: &SynthGen) -> CliResult<()> {
    let seed = g.seed()?;
    let mut scene = SceneSpec::default();
    let mut variation = DensityVariation::default();
    if let Some(p) = &g.config {
        if let crate::config::DatasetSource::Synthetic {
            scene: s,
            variation: v,
        } = RunConfig::load(p)?.dataset
        {
            scene = s;
            variation = v;
        }
    }
    scene.grid_rows = a.rows.unwrap_or(scene.grid_rows);
    scene.grid_cols = a.cols.unwrap_or(scene.grid_cols);
    scene.overlap_factor = a.overlap.unwrap_or(scene.overlap_factor);
    scene.image_width = a.width.unwrap_or(scene.image_width);
    scene.image_height = a.height.unwrap_or(scene.image_height);
    scene.box_w = a.box_w.unwrap_or(scene.box_w);
    scene.box_h = a.box_h.unwrap_or(scene.box_h);
    scene.jitter = a.jitter.unwrap_or(scene.jitter);
    let (records, manifest) = generate_synthetic_dataset(a.images, &scene, &variation, seed)?;

    let out = g.out_dir();
    let mut csv = Vec::new();
    let rows = write_annotations(&mut csv, &records, &[OBJECT_CLASS.to_string()])?;
    reports::write_bytes(&out.join("annotations.csv"), &csv)?;
    reports::write_json(&out.join("manifest.json"), &manifest)?;
    println!("images {} boxes {rows}", records.len());
    Ok(())
}

pub struct Split {
    pub annotations: PathBuf,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub fractions: Option<[f64; 3]>,
}

pub fn split(g: &Globals, a: &Split) -> CliResult<()> {
    let seed = g.seed()?;
    let fractions = a
        .fractions
        .map(|[train, val, test]| SplitFractions { train, val, test })
        .unwrap_or_default();
    let ann = load_annotations(&a.annotations)?;
    for w in &ann.warnings {
        log::warn!("{w}");
    }
    let split = select_and_split(&ann.records, a.n_labeled, a.n_unlabeled, fractions, seed)?;
    reports::write_json(&g.out_dir().join("split.json"), &split)?;
    println!(
        "train {} val {} test {} unlabeled {}",
        split.train.len(),
        split.val.len(),
        split.test.len(),
        split.unlabeled_pool.len()
    );
    Ok(())
}

pub struct Evaluate {
    pub predictions: PathBuf,
    pub annotations: PathBuf,
    pub max_dets: usize,
    pub pr_svg: bool,
}

fn metric(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn format_eval(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mAP {}", metric(r.map_coco));
    for t in &r.ap_per_threshold {
        let _ = writeln!(s, "AP@{:.2} {}", t.iou, metric(t.ap));
    }
    let _ = writeln!(s, "AP.75 {}", metric(r.ap75));
    let _ = writeln!(s, "AR@{} {}", r.max_dets, metric(r.ar300));
    s
}

pub fn evaluate_cmd(g: &Globals, a: &Evaluate) -> CliResult<()> {
    if a.max_dets == 0 {
        return Err(CliError::usage("--max-dets must be at least 1"));
    }
    let ann = load_annotations(&a.annotations)?;
    let preds = load_predictions(&a.predictions)?;
    for id in preds.keys() {
        if !ann.records.iter().any(|r| &r.image_id == id) {
            return Err(CliError::usage(format!(
                "{}: image `{id}` is not in {}",
                a.predictions.display(),
                a.annotations.display()
            )));
        }
    }
    let dets: Vec<Vec<ScoredBox>> = ann
        .records
        .iter()
        .map(|r| {
            preds
                .get(&r.image_id)
                .map(|d| d.iter().map(|x| x.scored).collect())
                .unwrap_or_default()
        })
        .collect();
    let gts: Vec<_> = ann.records.iter().map(|r| r.labeled_boxes()).collect();
    let images: Vec<EvalImage<'_>> = dets
        .iter()
        .zip(&gts)
        .map(|(d, t)| EvalImage::new(d, t))
        .collect();
    let report = evaluate(&images, a.max_dets);
    for w in &report.warnings {
        log::warn!("{w}");
    }
    print!("{}", format_eval(&report));

    let out = g.out_dir();
    reports::write_json(&out.join("eval_report.json"), &report)?;
    if a.pr_svg {
        for c in &report.pr_curves {
            let svg = line_plot(
                &format!("Precision-recall at IoU {:.2}", c.iou),
                "recall",
                "precision",
                &[Series {
                    name: "interpolated",
                    points: c.points.clone(),
                }],
                Some((0.0, 1.0)),
            );
            reports::write_bytes(&out.join(format!("pr_iou{:.2}.svg", c.iou)), svg.as_bytes())?;
        }
    }
    Ok(())
}

pub struct Cotrain {
    pub hyper: Option<PathBuf>,
    pub self_train: bool,
    pub resume: bool,
    pub max_rounds: Option<usize>,
    pub tau_conf: Option<f64>,
    pub n_labeled: Option<usize>,
    pub n_unlabeled: Option<usize>,
}

pub fn cotrain(g: &Globals, a: &Cotrain) -> CliResult<()> {
    let t0 = Instant::now();
    let mut cfg = g.run_config()?;
    let mut trace_ref = None;
    if let Some(p) = &a.hyper {
        cfg.hyper = Some(reports::read_json::<HyperVector>(p)?);
        let trace = p.with_file_name(reports::TRACE_CSV);
        if trace.exists() {
            trace_ref = Some(trace.display().to_string());
        }
    }
    if a.self_train {
        cfg.cotrain.mode = ExchangeMode::SelfTrain;
    }
    if let Some(r) = a.max_rounds {
        cfg.cotrain.max_rounds = r;
    }
    if let Some(t) = a.tau_conf {
        cfg.cotrain.tau_conf = t;
    }
    cfg.n_labeled = a.n_labeled.unwrap_or(cfg.n_labeled);
    cfg.n_unlabeled = a.n_unlabeled.unwrap_or(cfg.n_unlabeled);
    cfg.validate()?;
    let seed = cfg.seed()?;
    let out = out_of(&cfg);

    let (ds, split) = cfg.materialize()?;
    let fingerprint = Experiment::labeled_fingerprint(&ds, &split)?;
    let exp = Experiment::new(&ds, &split, cfg.pipeline(), cfg.cotrain.clone(), seed)?;
    reports::write_json(&out.join(reports::CONFIG_ECHO), &cfg)?;
    let ckpt = out.join("checkpoints");
    let outcome = run_cotraining(
        &exp,
        &RunOptions {
            checkpoint_dir: Some(&ckpt),
            resume: a.resume,
        },
    )?;
    if Experiment::labeled_fingerprint(&ds, &split)? != fingerprint {
        return Err(CliError::runtime("labeled set changed during the run"));
    }

    reports::write_bytes(
        &out.join(reports::HISTORY_CSV),
        &reports::history_csv(&outcome.history)?,
    )?;
    let report = RunReport {
        format: reports::REPORT_FORMAT.into(),
        version: reports::REPORT_VERSION,
        config: cfg,
        labeled_fingerprint: format!("{fingerprint:016x}"),
        best_round: outcome.best_round,
        test: outcome.test,
        history: outcome.history,
        tuning_trace: trace_ref,
        timings: Timings {
            total_seconds: t0.elapsed().as_secs_f64(),
        },
    };
    reports::write_json(&out.join(reports::RUN_REPORT), &report)?;
    print!("{}", summary_table(&report));
    Ok(())
}

pub struct Tune {
    pub algorithm: Option<Algorithm>,
    pub budget: Option<usize>,
    pub population: Option<usize>,
    pub n_labeled: Option<usize>,
    pub n_unlabeled: Option<usize>,
}

pub fn tune(g: &Globals, a: &Tune) -> CliResult<()> {
    let t0 = Instant::now();
    let mut cfg = g.run_config()?;
    if let Some(alg) = a.algorithm {
        cfg.tuner.algorithm = alg;
    }
    cfg.tuner.budget = a.budget.unwrap_or(cfg.tuner.budget);
    cfg.tuner.population = a.population.unwrap_or(cfg.tuner.population);
    cfg.n_labeled = a.n_labeled.unwrap_or(cfg.n_labeled);
    cfg.n_unlabeled = a.n_unlabeled.unwrap_or(cfg.n_unlabeled);
    cfg.validate()?;
    let seed = cfg.seed()?;
    // the run seed drives the search too
    cfg.tuner.seed = seed;
    let out = out_of(&cfg);
    let (ds, split) = cfg.materialize()?;
    reports::write_json(&out.join(reports::CONFIG_ECHO), &cfg)?;

    let (best, outcome) =
        match tune_pipeline(&ds, &split, &cfg.cotrain, seed, &cfg.tuner, &cfg.gene_specs) {
            Ok(r) => r,
            Err(e) => {
                if let Error::BadObjective { vector, .. } | Error::ObjectiveFailed { vector, .. } =
                    &e
                {
                    let path = out.join("failed_vector.txt");
                    reports::write_bytes(&path, format!("{vector}\n").as_bytes())?;
                    log::error!("offending vector written to {}", path.display());
                }
                return Err(e.into());
            }
        };
    reports::write_json(&out.join(reports::BEST_HYPER), &best)?;
    reports::write_bytes(
        &out.join(reports::TRACE_CSV),
        &reports::trace_csv(&outcome.trace)?,
    )?;
    let report = TuneReport {
        format: "densecotrain-tune-report".into(),
        version: reports::REPORT_VERSION,
        config: cfg,
        best_score: outcome.best_score,
        evaluations: outcome.trace.len(),
        trace: reports::TRACE_CSV.into(),
        timings: Timings {
            total_seconds: t0.elapsed().as_secs_f64(),
        },
    };
    reports::write_json(&out.join(reports::TUNE_REPORT), &report)?;
    println!(
        "best {:.4} after {} evaluations",
        outcome.best_score,
        outcome.trace.len()
    );
    Ok(())
}

pub fn summary_table(r: &RunReport) -> String {
    let mut s = format!("{:<10}{:>8}{:>8}{:>8}\n", "view", "mAP", "AP.75", "AR300");
    for (name, e) in [
        ("A", &r.test.view_a),
        ("B", &r.test.view_b),
        ("combined", &r.test.combined),
    ] {
        let _ = writeln!(
            s,
            "{name:<10}{:>8}{:>8}{:>8}",
            metric(e.map_coco),
            metric(e.ap75),
            metric(e.ar300)
        );
    }
    s
}

pub fn report(g: &Globals, run: &Path) -> CliResult<()> {
    let path = run.join(reports::RUN_REPORT);
    if !path.exists() {
        return Err(CliError::io(
            run,
            format!("missing artifacts: {}", reports::RUN_REPORT),
        ));
    }
    let r: RunReport = reports::read_json(&path)?;
    print!("{}", summary_table(&r));

    let out = g.out.clone().unwrap_or_else(|| run.to_path_buf());
    let series = |name, f: fn(&densecotrain::cotrain::RoundRecord) -> f64| Series {
        name,
        points: r.history.iter().map(|h| (h.round as f64, f(h))).collect(),
    };
    let svg = line_plot(
        "Validation mAP per round",
        "round",
        "mAP",
        &[
            series("view A", |h| h.val_map_a),
            series("view B", |h| h.val_map_b),
            series("combined", |h| h.val_map_combined),
        ],
        None,
    );
    reports::write_bytes(&out.join("val_map.svg"), svg.as_bytes())?;

    let trace = [
        Some(run.join(reports::TRACE_CSV)),
        r.tuning_trace.as_ref().map(PathBuf::from),
    ]
    .into_iter()
    .flatten()
    .find(|p| p.exists());
    match trace {
        Some(t) => {
            let pts = reports::read_trace_best(&t)?;
            let svg = line_plot(
                "Tuning trace",
                "evaluation",
                "best so far",
                &[Series {
                    name: "best",
                    points: pts,
                }],
                None,
            );
            reports::write_bytes(&out.join("tuning_trace.svg"), svg.as_bytes())?;
        }
        None => log::info!("no tuning trace; skipping that plot"),
    }
    Ok(())
}
