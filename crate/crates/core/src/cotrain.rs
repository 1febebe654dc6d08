//! The co-training loop.
//!
//! View A is the localizer, view B the contextual detector. Each view runs
//! its detector on the unlabeled pool, vets the candidates with its own
//! ensemble, and the confident object boxes become training data for the
//! *other* view. Retraining is simulated against hidden ground truth (see
//! [`crate::detector::retrain`]); evaluation re-scores every detection by
//! the geometric mean of detector score and ensemble object probability.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetSplit, ImageRecord};
use crate::detector::{
    best_gt_iou, emit_features, retrain, supervised_skill, typical_size, Detection, Detector,
    DetectorParams, Profile, PseudoEvidence, SimConfig, SkillModel, SyntheticDetector, OBJECT_IOU,
};
use crate::ensemble::{Ensemble, EnsembleParams, EnsemblePrediction, TrainSet, OBJECT};
use crate::error::{Error, Result};
use crate::geom::{iou, nms, BBox, LabeledBox, ScoredBox};
use crate::metrics::{evaluate, EvalImage, EvalReport};
use crate::{par, seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViewId {
    A,
    B,
}

impl ViewId {
    pub fn profile(self) -> Profile {
        match self {
            ViewId::A => Profile::Localizer,
            ViewId::B => Profile::Contextual,
        }
    }

    pub fn other(self) -> ViewId {
        match self {
            ViewId::A => ViewId::B,
            ViewId::B => ViewId::A,
        }
    }

    fn tag(self) -> u64 {
        self.profile().tag()
    }
}

impl std::fmt::Display for ViewId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ViewId::A => "A",
            ViewId::B => "B",
        })
    }
}

/// Who consumes whose pseudo-labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExchangeMode {
    /// A's labels train B and vice versa.
    #[default]
    Cross,
    /// Each view trains on its own labels (ablation baseline).
    SelfTrain,
}

/// Hyperparameters of both views and the shared classifier blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub localizer: DetectorParams,
    pub contextual: DetectorParams,
    pub ensemble: EnsembleParams,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            localizer: DetectorParams::default_for(Profile::Localizer),
            contextual: DetectorParams::default_for(Profile::Contextual),
            ensemble: EnsembleParams::default(),
        }
    }
}

impl PipelineParams {
    pub fn detector(&self, view: ViewId) -> &DetectorParams {
        match view {
            ViewId::A => &self.localizer,
            ViewId::B => &self.contextual,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.localizer.validate()?;
        self.contextual.validate()?;
        self.ensemble.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoTrainConfig {
    /// Minimum fused confidence for a pseudo-label.
    pub tau_conf: f64,
    pub max_rounds: usize,
    /// Minimum validation mAP gain that counts as progress.
    pub epsilon: f64,
    /// Consecutive non-improving rounds before stopping; 0 disables.
    pub patience: usize,
    pub pseudo_nms_iou: f64,
    pub combined_nms_iou: f64,
    pub mode: ExchangeMode,
    /// Use only the first `n` unlabeled images (sorted by id).
    pub unlabeled_limit: Option<usize>,
    pub max_dets: usize,
    /// Cap on ensemble training examples per class.
    pub ensemble_cap_per_class: usize,
    /// Random background boxes added per labeled image for ensemble training.
    pub negatives_per_image: usize,
    pub sim: SimConfig,
}

impl Default for CoTrainConfig {
    fn default() -> Self {
        CoTrainConfig {
            tau_conf: 0.8,
            max_rounds: 5,
            epsilon: 0.005,
            patience: 2,
            pseudo_nms_iou: 0.5,
            combined_nms_iou: 0.5,
            mode: ExchangeMode::Cross,
            unlabeled_limit: None,
            max_dets: crate::metrics::DEFAULT_MAX_DETS,
            ensemble_cap_per_class: 600,
            negatives_per_image: 4,
            sim: SimConfig::default(),
        }
    }
}

impl CoTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_conf > 0.0 && self.tau_conf <= 1.0) {
            return Err(Error::param("tau_conf", "must be in (0, 1]"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::param("epsilon", "must be >= 0"));
        }
        for (name, v) in [
            ("pseudo_nms_iou", self.pseudo_nms_iou),
            ("combined_nms_iou", self.combined_nms_iou),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::param(name, "must be in (0, 1]"));
            }
        }
        if self.max_dets == 0 {
            return Err(Error::param("max_dets", "must be at least 1"));
        }
        if self.ensemble_cap_per_class < 2 {
            return Err(Error::param("ensemble_cap_per_class", "must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub label: u32,
    pub confidence: f64,
    pub source_view: ViewId,
    pub round: usize,
}

/// Accepted labels keyed by image id.
pub type PseudoLabelSet = BTreeMap<String, Vec<PseudoLabel>>;

pub fn count_labels(set: &PseudoLabelSet) -> usize {
    set.values().map(Vec::len).sum()
}

/// One view's trained state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewState {
    pub id: ViewId,
    pub detector: SyntheticDetector,
    pub ensemble: Ensemble,
    /// Skill after the supervised phase; every retrain starts from here.
    pub supervised: SkillModel,
    pub labeled_gts: usize,
    /// Per unlabeled image, ground-truth indices the supervised detector
    /// misses on its own (hidden-oracle bookkeeping).
    pub missed: BTreeMap<String, Vec<usize>>,
}

impl ViewState {
    pub fn blind_spots(&self) -> usize {
        self.missed.values().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub val_map_a: f64,
    pub val_map_b: f64,
    pub val_map_combined: f64,
    /// Labels generated by each view this round.
    pub generated_by_a: usize,
    pub generated_by_b: usize,
    pub accepted_for_a: usize,
    pub accepted_for_b: usize,
    /// Oracle audit: fraction of this round's labels with IoU >= 0.5 to a ground truth.
    pub precision_a: Option<f64>,
    pub precision_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoTrainState {
    pub round: usize,
    pub view_a: ViewState,
    pub view_b: ViewState,
    pub accepted_for_a: PseudoLabelSet,
    pub accepted_for_b: PseudoLabelSet,
    /// Entry 0 is the supervised phase.
    pub history: Vec<RoundRecord>,
}

impl CoTrainState {
    pub fn view(&self, v: ViewId) -> &ViewState {
        match v {
            ViewId::A => &self.view_a,
            ViewId::B => &self.view_b,
        }
    }

    pub fn accepted_for(&self, v: ViewId) -> &PseudoLabelSet {
        match v {
            ViewId::A => &self.accepted_for_a,
            ViewId::B => &self.accepted_for_b,
        }
    }
}

/// Everything a run reads: the images of each split, parameters, seed.
///
/// Test images are only reachable through [`Experiment::test_images`],
/// which counts accesses.
pub struct Experiment<'a> {
    pub dataset: &'a Dataset,
    pub train: Vec<&'a ImageRecord>,
    pub val: Vec<&'a ImageRecord>,
    pub unlabeled: Vec<&'a ImageRecord>,
    test_ids: Vec<String>,
    test_touches: AtomicUsize,
    pub params: PipelineParams,
    pub config: CoTrainConfig,
    pub seed: u64,
}

impl<'a> Experiment<'a> {
    pub fn new(
        dataset: &'a Dataset,
        split: &DatasetSplit,
        params: PipelineParams,
        config: CoTrainConfig,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        config.validate()?;
        split.check_disjoint()?;
        if split.train.is_empty() {
            return Err(Error::EmptyTraining("split has no training images".into()));
        }
        let mut pool = split.unlabeled_pool.clone();
        pool.sort();
        if let Some(n) = config.unlabeled_limit {
            pool.truncate(n);
        }
        Ok(Experiment {
            dataset,
            train: dataset.resolve(&split.train)?,
            val: dataset.resolve(&split.val)?,
            unlabeled: dataset.resolve(&pool)?,
            test_ids: split.test.clone(),
            test_touches: AtomicUsize::new(0),
            params,
            config,
            seed,
        })
    }

    pub fn test_images(&self) -> Result<Vec<&'a ImageRecord>> {
        self.test_touches.fetch_add(1, Ordering::SeqCst);
        self.dataset.resolve(&self.test_ids)
    }

    pub fn test_touches(&self) -> usize {
        self.test_touches.load(Ordering::SeqCst)
    }

    /// Detection seed for one view on one image; fixed across rounds.
    pub fn detect_seed(&self, view: ViewId, image_id: &str) -> u64 {
        seed::derive(
            self.seed,
            &[seed::TAG_DETECT, view.tag(), seed::hash_str(image_id)],
        )
    }

    /// Hash of the labeled train/val/test records.
    pub fn labeled_fingerprint(dataset: &Dataset, split: &DatasetSplit) -> Result<u64> {
        let recs = dataset.resolve(&split.labeled_ids().cloned().collect::<Vec<_>>())?;
        Ok(seed::hash_str(&serde_json::to_string(&recs)?))
    }
}

fn random_background_box(image: &ImageRecord, rng: &mut seed::Rng) -> Option<BBox> {
    let (w, h) = (image.width as f64, image.height as f64);
    let (bw, bh) = typical_size(image);
    let fw = (bw * rng.random_range(0.5..1.5)).min(w);
    let fh = (bh * rng.random_range(0.5..1.5)).min(h);
    let x = rng.random_range(0.0..=(w - fw));
    let y = rng.random_range(0.0..=(h - fh));
    BBox::new(x, y, x + fw, y + fh).ok()
}

/// Keeps at most `cap` of `items`, sampled without replacement, in original order.
fn cap_sample<T>(items: Vec<T>, cap: usize, rng: &mut seed::Rng) -> Vec<T> {
    if items.len() <= cap {
        return items;
    }
    let mut keep = index::sample(rng, items.len(), cap).into_vec();
    keep.sort_unstable();
    let mut keep = keep.into_iter().peekable();
    items
        .into_iter()
        .enumerate()
        .filter_map(|(i, t)| {
            if keep.peek() == Some(&i) {
                keep.next();
                Some(t)
            } else {
                None
            }
        })
        .collect()
}

fn covered(dets: &[Detection], gt: &BBox) -> bool {
    dets.iter().any(|d| iou(&d.scored.bbox, gt) >= OBJECT_IOU)
}

/// Supervised training of one view on the labeled train images.
pub fn train_view(exp: &Experiment<'_>, view: ViewId) -> Result<ViewState> {
    let cfg = &exp.config;
    let profile = view.profile();
    let params = exp.params.detector(view).clone();
    let labeled_gts: usize = exp.train.iter().map(|r| r.gts.len()).sum();
    let supervised = supervised_skill(&params, profile, &cfg.sim, labeled_gts)?;
    let detector = SyntheticDetector::new(profile, params, supervised, cfg.sim.clone());

    // ensemble examples: raw candidates plus random background boxes
    let per_image = par::map(&exp.train, |img| {
        let s = exp.detect_seed(view, &img.image_id);
        let mut ex: Vec<(Vec<f64>, usize)> = detector
            .propose(img, s)
            .into_iter()
            .map(|d| {
                let class = (best_gt_iou(&d.scored.bbox, img) >= OBJECT_IOU) as usize;
                (d.features, class)
            })
            .collect();
        let mut rng = seed::rng_for(
            exp.seed,
            &[
                seed::TAG_NEGATIVES,
                view.tag(),
                seed::hash_str(&img.image_id),
            ],
        );
        for _ in 0..cfg.negatives_per_image {
            if let Some(b) = random_background_box(img, &mut rng) {
                let is_object = best_gt_iou(&b, img) >= OBJECT_IOU;
                ex.push((
                    emit_features(&b, is_object, profile, &cfg.sim, s),
                    is_object as usize,
                ));
            }
        }
        ex
    });
    let (pos, neg): (Vec<_>, Vec<_>) = per_image.into_iter().flatten().partition(|e| e.1 == OBJECT);
    let mut rng = seed::rng_for(exp.seed, &[seed::TAG_ENSEMBLE, view.tag(), 0]);
    let pos = cap_sample(pos, cfg.ensemble_cap_per_class, &mut rng);
    let neg = cap_sample(neg, cfg.ensemble_cap_per_class, &mut rng);
    if pos.is_empty() && neg.is_empty() {
        return Err(Error::EmptyTraining(format!(
            "view {view}: no ensemble examples"
        )));
    }
    let (x, y): (Vec<_>, Vec<_>) = neg.into_iter().chain(pos).unzip();
    let data = TrainSet::new(x, y)?;
    let ensemble = Ensemble::train(
        &data,
        &exp.params.ensemble,
        seed::derive(exp.seed, &[seed::TAG_ENSEMBLE, view.tag(), 1]),
    )?;

    // reference pass: which hidden objects this view misses by itself
    let missed: BTreeMap<String, Vec<usize>> = par::map(&exp.unlabeled, |img| {
        let dets = detector.detect(img, exp.detect_seed(view, &img.image_id));
        let m: Vec<usize> = img
            .gts
            .iter()
            .enumerate()
            .filter(|(_, g)| !covered(&dets, &g.bbox))
            .map(|(j, _)| j)
            .collect();
        (img.image_id.clone(), m)
    })
    .into_iter()
    .collect();

    log::debug!(
        "view {view}: supervised recall {:.3}, ensemble on {} examples, {} blind spots",
        supervised.base_recall,
        data.len(),
        missed.values().map(Vec::len).sum::<usize>()
    );
    Ok(ViewState {
        id: view,
        detector,
        ensemble,
        supervised,
        labeled_gts,
        missed,
    })
}

/// Detections of a view on one image, each with its ensemble verdict.
pub fn vetted_detections(
    state: &ViewState,
    exp: &Experiment<'_>,
    image: &ImageRecord,
) -> Vec<(Detection, EnsemblePrediction)> {
    state
        .detector
        .detect(image, exp.detect_seed(state.id, &image.image_id))
        .into_iter()
        .map(|d| {
            let p = state.ensemble.predict(&d.features);
            (d, p)
        })
        .collect()
}

/// Evaluation-time boxes: score replaced by `sqrt(score * p_object)`.
pub fn scored_for_eval(
    state: &ViewState,
    exp: &Experiment<'_>,
    image: &ImageRecord,
) -> Vec<ScoredBox> {
    state
        .detector
        .detect(image, exp.detect_seed(state.id, &image.image_id))
        .into_iter()
        .map(|d| {
            let p = state.ensemble.member_probs(&d.features).iter().sum::<f64>() / 3.0;
            ScoredBox {
                score: (d.scored.score * p).sqrt().clamp(0.0, 1.0),
                ..d.scored
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewReports {
    pub view_a: EvalReport,
    pub view_b: EvalReport,
    pub combined: EvalReport,
}

/// Per-image boxes of both views and their merged, NMS-deduplicated union.
pub fn predictions(
    state: &CoTrainState,
    exp: &Experiment<'_>,
    images: &[&ImageRecord],
) -> Vec<[Vec<ScoredBox>; 3]> {
    par::map(images, |img| {
        let a = scored_for_eval(&state.view_a, exp, img);
        let b = scored_for_eval(&state.view_b, exp, img);
        let merged: Vec<ScoredBox> = a.iter().chain(&b).copied().collect();
        let c = nms(&merged, exp.config.combined_nms_iou);
        [a, b, c]
    })
}

pub fn evaluate_views(
    state: &CoTrainState,
    exp: &Experiment<'_>,
    images: &[&ImageRecord],
) -> ViewReports {
    let preds = predictions(state, exp, images);
    let gts: Vec<Vec<LabeledBox>> = images.iter().map(|r| r.labeled_boxes()).collect();
    let report = |k: usize| {
        let ev: Vec<EvalImage<'_>> = preds
            .iter()
            .zip(&gts)
            .map(|(p, g)| EvalImage::new(&p[k], g))
            .collect();
        evaluate(&ev, exp.config.max_dets)
    };
    ViewReports {
        view_a: report(0),
        view_b: report(1),
        combined: report(2),
    }
}

/// Ensemble-vetted pseudo-labels from one view over `images`.
///
/// Keeps detections the ensemble calls object with fused confidence
/// `>= tau`, deduplicated per image by NMS on confidence.
pub fn generate_pseudo_labels(
    state: &ViewState,
    exp: &Experiment<'_>,
    images: &[&ImageRecord],
    tau: f64,
    nms_iou: f64,
    round: usize,
) -> Result<Vec<PseudoLabel>> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::param("tau_conf", "must be in (0, 1]"));
    }
    let per_image = par::map(images, |img| {
        let kept: Vec<ScoredBox> = vetted_detections(state, exp, img)
            .into_iter()
            .filter(|(_, p)| p.label == OBJECT && p.confidence >= tau)
            .map(|(d, p)| ScoredBox {
                score: p.confidence,
                ..d.scored
            })
            .collect();
        nms(&kept, nms_iou)
            .into_iter()
            .map(|b| PseudoLabel {
                image_id: img.image_id.clone(),
                bbox: b.bbox,
                label: b.label,
                confidence: b.score,
                source_view: state.id,
                round,
            })
            .collect::<Vec<_>>()
    });
    Ok(per_image.into_iter().flatten().collect())
}

/// Oracle audit of labels from the student's point of view.
pub fn audit(
    labels: &[PseudoLabel],
    student: &ViewState,
    dataset: &Dataset,
) -> Vec<PseudoEvidence> {
    labels
        .iter()
        .map(|l| {
            let Some(img) = dataset.get(&l.image_id) else {
                return PseudoEvidence {
                    correct: false,
                    informative: false,
                    loc_error: 0.0,
                };
            };
            let best = img
                .gts
                .iter()
                .enumerate()
                .map(|(j, g)| (j, iou(&l.bbox, &g.bbox)))
                .fold(None, |acc: Option<(usize, f64)>, (j, v)| match acc {
                    Some((_, bv)) if bv >= v => acc,
                    _ => Some((j, v)),
                });
            match best {
                Some((j, v)) if v >= OBJECT_IOU => {
                    let g = img.gts[j].bbox.coords();
                    let b = l.bbox.coords();
                    let mse = g
                        .iter()
                        .zip(&b)
                        .map(|(p, q)| (p - q) * (p - q))
                        .sum::<f64>()
                        / 4.0;
                    PseudoEvidence {
                        correct: true,
                        informative: student
                            .missed
                            .get(&l.image_id)
                            .is_some_and(|m| m.contains(&j)),
                        loc_error: mse.sqrt(),
                    }
                }
                _ => PseudoEvidence {
                    correct: false,
                    informative: false,
                    loc_error: 0.0,
                },
            }
        })
        .collect()
}

/// Fraction of labels with IoU >= 0.5 to some hidden ground truth.
pub fn pseudo_label_precision(labels: &[PseudoLabel], dataset: &Dataset) -> Option<f64> {
    if labels.is_empty() {
        return None;
    }
    let ok = labels
        .iter()
        .filter(|l| {
            dataset
                .get(&l.image_id)
                .is_some_and(|img| best_gt_iou(&l.bbox, img) >= OBJECT_IOU)
        })
        .count();
    Some(ok as f64 / labels.len() as f64)
}

fn retrain_view(
    view: &mut ViewState,
    accepted: &PseudoLabelSet,
    exp: &Experiment<'_>,
) -> Result<()> {
    let labels: Vec<PseudoLabel> = accepted.values().flatten().cloned().collect();
    let evidence = audit(&labels, view, exp.dataset);
    view.detector.skill = retrain(
        &view.supervised,
        view.id.profile(),
        &exp.config.sim,
        view.labeled_gts,
        &evidence,
        view.blind_spots(),
    )?;
    Ok(())
}

/// New labels for an image replace that image's older ones.
fn replace_per_image(set: &mut PseudoLabelSet, labels: Vec<PseudoLabel>) {
    let mut by_image: PseudoLabelSet = BTreeMap::new();
    for l in labels {
        by_image.entry(l.image_id.clone()).or_default().push(l);
    }
    set.extend(by_image);
}

fn record(
    state: &CoTrainState,
    exp: &Experiment<'_>,
    round: usize,
    gen: [&[PseudoLabel]; 2],
) -> RoundRecord {
    let val = evaluate_views(state, exp, &exp.val);
    RoundRecord {
        round,
        val_map_a: val.view_a.map_or_zero(),
        val_map_b: val.view_b.map_or_zero(),
        val_map_combined: val.combined.map_or_zero(),
        generated_by_a: gen[0].len(),
        generated_by_b: gen[1].len(),
        accepted_for_a: count_labels(&state.accepted_for_a),
        accepted_for_b: count_labels(&state.accepted_for_b),
        precision_a: pseudo_label_precision(gen[0], exp.dataset),
        precision_b: pseudo_label_precision(gen[1], exp.dataset),
    }
}

/// Trains both views on labeled data only and records round 0.
pub fn initial_supervised_phase(exp: &Experiment<'_>) -> Result<CoTrainState> {
    let (a, b) = par::join(|| train_view(exp, ViewId::A), || train_view(exp, ViewId::B));
    let mut state = CoTrainState {
        round: 0,
        view_a: a?,
        view_b: b?,
        accepted_for_a: BTreeMap::new(),
        accepted_for_b: BTreeMap::new(),
        history: Vec::new(),
    };
    let r = record(&state, exp, 0, [&[], &[]]);
    state.history.push(r);
    Ok(state)
}

/// One simultaneous exchange: both views label the pool with their
/// round-start state, labels are routed per the mode, both views retrain.
pub fn exchange_round(state: &mut CoTrainState, exp: &Experiment<'_>) -> Result<()> {
    let cfg = &exp.config;
    let round = state.round + 1;
    let (from_a, from_b) = par::join(
        || {
            generate_pseudo_labels(
                &state.view_a,
                exp,
                &exp.unlabeled,
                cfg.tau_conf,
                cfg.pseudo_nms_iou,
                round,
            )
        },
        || {
            generate_pseudo_labels(
                &state.view_b,
                exp,
                &exp.unlabeled,
                cfg.tau_conf,
                cfg.pseudo_nms_iou,
                round,
            )
        },
    );
    let (from_a, from_b) = (from_a?, from_b?);
    let (for_a, for_b) = match cfg.mode {
        ExchangeMode::Cross => (from_b.clone(), from_a.clone()),
        ExchangeMode::SelfTrain => (from_a.clone(), from_b.clone()),
    };
    replace_per_image(&mut state.accepted_for_a, for_a);
    replace_per_image(&mut state.accepted_for_b, for_b);
    retrain_view(&mut state.view_a, &state.accepted_for_a, exp)?;
    retrain_view(&mut state.view_b, &state.accepted_for_b, exp)?;
    state.round = round;
    let r = record(state, exp, round, [&from_a, &from_b]);
    log::info!(
        "round {round}: val mAP A {:.4} B {:.4} combined {:.4}; labels A->{} B->{}",
        r.val_map_a,
        r.val_map_b,
        r.val_map_combined,
        r.generated_by_a,
        r.generated_by_b
    );
    state.history.push(r);
    Ok(())
}

/// Patience rule: stop once `patience` consecutive rounds passed in which
/// neither view beat its best earlier validation mAP by at least `epsilon`.
/// Entry 0 of each series is the supervised phase.
pub fn should_stop(val_a: &[f64], val_b: &[f64], epsilon: f64, patience: usize) -> bool {
    if patience == 0 || val_a.is_empty() {
        return false;
    }
    let (mut best_a, mut best_b) = (val_a[0], val_b[0]);
    let mut stalled = 0;
    for r in 1..val_a.len() {
        let gain = |v: f64, best: f64| v - best >= epsilon - 1e-12;
        if gain(val_a[r], best_a) || gain(val_b[r], best_b) {
            stalled = 0;
        } else {
            stalled += 1;
        }
        best_a = best_a.max(val_a[r]);
        best_b = best_b.max(val_b[r]);
    }
    stalled >= patience
}

pub const CHECKPOINT_FORMAT: &str = "densecotrain-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    fingerprint: u64,
    state: CoTrainState,
}

/// Covers the settings and the data: a checkpoint from a run on other
/// labeled records or another pool is refused.
fn run_fingerprint(exp: &Experiment<'_>) -> Result<u64> {
    let ids = |v: &[&ImageRecord]| v.iter().map(|r| r.image_id.clone()).collect::<Vec<_>>();
    let echo = serde_json::to_string(&(
        (&exp.params, &exp.config, exp.seed),
        (&exp.train, &exp.val, &exp.test_ids),
        ids(&exp.unlabeled),
    ))?;
    Ok(seed::hash_str(&echo))
}

pub fn checkpoint_path(dir: &Path, round: usize) -> PathBuf {
    dir.join(format!("checkpoint_{round:03}.json"))
}

fn save_checkpoint(dir: &Path, state: &CoTrainState, fingerprint: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let doc = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        fingerprint,
        state: state.clone(),
    };
    let path = checkpoint_path(dir, state.round);
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_vec(&doc)?).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}

fn load_checkpoint(path: &Path, fingerprint: u64) -> Result<CoTrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let doc: Checkpoint = serde_json::from_slice(&bytes)?;
    if doc.format != CHECKPOINT_FORMAT || doc.version != CHECKPOINT_VERSION {
        return Err(Error::param(
            "checkpoint",
            format!(
                "{} is not a v{CHECKPOINT_VERSION} checkpoint",
                path.display()
            ),
        ));
    }
    if doc.fingerprint != fingerprint {
        return Err(Error::param(
            "checkpoint",
            format!(
                "{} was written by a run with a different config or seed",
                path.display()
            ),
        ));
    }
    Ok(doc.state)
}

/// Most recent checkpoint in `dir`, if any.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<(usize, PathBuf)>> {
    if !dir.exists() {
        return Ok(None);
    }
    let mut best = None;
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(r) = name
            .strip_prefix("checkpoint_")
            .and_then(|s| s.strip_suffix(".json"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            if best.as_ref().is_none_or(|(b, _)| r > *b) {
                best = Some((r, path));
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions<'p> {
    /// Directory for per-round checkpoints.
    pub checkpoint_dir: Option<&'p Path>,
    /// Continue from the latest checkpoint in `checkpoint_dir`.
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoTrainOutcome {
    pub final_state: CoTrainState,
    /// Round whose state produced the test reports (best combined validation mAP).
    pub best_round: usize,
    pub test: ViewReports,
    pub history: Vec<RoundRecord>,
}

fn best_round(history: &[RoundRecord]) -> usize {
    let mut best = 0;
    for (i, r) in history.iter().enumerate() {
        if r.val_map_combined > history[best].val_map_combined {
            best = i;
        }
    }
    history[best].round
}

/// Initial phase, exchange rounds until the budget or patience runs out,
/// then one test evaluation of the best-validation state.
pub fn run_cotraining(exp: &Experiment<'_>, opts: &RunOptions<'_>) -> Result<CoTrainOutcome> {
    let cfg = &exp.config;
    let fingerprint = run_fingerprint(exp)?;
    let resumed = match (opts.resume, opts.checkpoint_dir) {
        (true, Some(dir)) => match latest_checkpoint(dir)? {
            Some((r, path)) => {
                log::info!("resuming from round {r} ({})", path.display());
                Some(load_checkpoint(&path, fingerprint)?)
            }
            None => None,
        },
        _ => None,
    };
    let mut state = match resumed {
        Some(s) => s,
        None => {
            let s = initial_supervised_phase(exp)?;
            if let Some(dir) = opts.checkpoint_dir {
                save_checkpoint(dir, &s, fingerprint)?;
            }
            s
        }
    };
    let mut best_state = state.clone();
    if opts.resume {
        let b = best_round(&state.history);
        if b != state.round {
            if let Some(dir) = opts.checkpoint_dir {
                best_state = load_checkpoint(&checkpoint_path(dir, b), fingerprint)?;
            }
        }
    }
    loop {
        let va: Vec<f64> = state.history.iter().map(|r| r.val_map_a).collect();
        let vb: Vec<f64> = state.history.iter().map(|r| r.val_map_b).collect();
        if state.round >= cfg.max_rounds || should_stop(&va, &vb, cfg.epsilon, cfg.patience) {
            break;
        }
        if let Err(e) = exchange_round(&mut state, exp) {
            log::error!(
                "round {} failed: {e}; last checkpoint kept",
                state.round + 1
            );
            return Err(e);
        }
        if let Some(dir) = opts.checkpoint_dir {
            save_checkpoint(dir, &state, fingerprint)?;
        }
        if state.history.last().map(|r| r.val_map_combined)
            > best_state.history.last().map(|r| r.val_map_combined)
        {
            best_state = state.clone();
        }
    }
    let test = exp.test_images()?;
    let reports = evaluate_views(&best_state, exp, &test);
    Ok(CoTrainOutcome {
        best_round: best_state.round,
        test: reports,
        history: state.history.clone(),
        final_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{
        generate_synthetic_dataset, select_and_split, DensityVariation, SceneSpec, SplitFractions,
    };

    fn world(n_lab: usize, n_unl: usize, seed: u64) -> (Dataset, DatasetSplit) {
        let (recs, _) = generate_synthetic_dataset(
            n_lab + n_unl,
            &SceneSpec::default(),
            &DensityVariation::default(),
            seed,
        )
        .unwrap();
        let split = select_and_split(&recs, n_lab, n_unl, SplitFractions::default(), seed).unwrap();
        let mut ds = Dataset::new(recs);
        ds.apply_split(&split);
        (ds, split)
    }

    #[test]
    fn stopping_rule_trace() {
        let t = [0.40, 0.41, 0.412, 0.413];
        for n in 1..=3 {
            assert!(
                !should_stop(&t[..n], &t[..n], 0.005, 2),
                "stopped after {n}"
            );
        }
        assert!(should_stop(&t, &t, 0.005, 2));
        // one view still improving keeps the run going
        let b = [0.30, 0.31, 0.32, 0.33];
        assert!(!should_stop(&t, &b, 0.005, 2));
        assert!(!should_stop(&t, &t, 0.005, 0));
    }

    #[test]
    fn replace_policy_supersedes_per_image() {
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let l = |id: &str, round| PseudoLabel {
            image_id: id.into(),
            bbox: b,
            label: 0,
            confidence: 0.9,
            source_view: ViewId::A,
            round,
        };
        let mut set = PseudoLabelSet::new();
        replace_per_image(&mut set, vec![l("x", 1), l("x", 1), l("y", 1)]);
        replace_per_image(&mut set, vec![l("x", 2)]);
        assert_eq!(set["x"].len(), 1);
        assert_eq!(set["x"][0].round, 2);
        assert_eq!(set["y"][0].round, 1);
    }

    #[test]
    fn cap_sample_keeps_order() {
        let mut rng = seed::rng(3);
        let v = cap_sample((0..100).collect::<Vec<_>>(), 10, &mut rng);
        assert_eq!(v.len(), 10);
        assert!(v.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn small_run_end_to_end() {
        let (ds, split) = world(200, 100, 5);
        let cfg = CoTrainConfig {
            max_rounds: 1,
            ..Default::default()
        };
        let exp = Experiment::new(&ds, &split, PipelineParams::default(), cfg, 5).unwrap();
        let state = initial_supervised_phase(&exp).unwrap();
        assert!(state.accepted_for_a.is_empty() && state.accepted_for_b.is_empty());
        assert_eq!(state.history.len(), 1);
        assert!(state.history[0].val_map_a > 0.1 && state.history[0].val_map_b > 0.1);

        let strict =
            generate_pseudo_labels(&state.view_a, &exp, &exp.unlabeled, 1.0, 0.5, 1).unwrap();
        assert!(strict.iter().all(|l| l.confidence >= 1.0));

        let mut next = state.clone();
        exchange_round(&mut next, &exp).unwrap();
        assert_eq!(next.round, 1);
        assert_eq!(next.history.len(), 2);
        assert!(next
            .accepted_for_a
            .values()
            .flatten()
            .all(|l| l.source_view == ViewId::B));
        assert!(next
            .accepted_for_b
            .values()
            .flatten()
            .all(|l| l.source_view == ViewId::A));
        assert!(next
            .accepted_for_a
            .values()
            .flatten()
            .all(|l| l.confidence >= 0.8));
        let pool: std::collections::HashSet<&String> = split.unlabeled_pool.iter().collect();
        assert!(next.accepted_for_b.keys().all(|k| pool.contains(k)));

        let out = run_cotraining(&exp, &RunOptions::default()).unwrap();
        assert_eq!(exp.test_touches(), 1);
        assert_eq!(out.history, next.history);
    }

    #[test]
    fn zero_rounds_is_the_supervised_phase() {
        let (ds, split) = world(30, 10, 8);
        let cfg = CoTrainConfig {
            max_rounds: 0,
            ..Default::default()
        };
        let exp = Experiment::new(&ds, &split, PipelineParams::default(), cfg, 8).unwrap();
        let out = run_cotraining(&exp, &RunOptions::default()).unwrap();
        assert_eq!(out.best_round, 0);
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.final_state, initial_supervised_phase(&exp).unwrap());
    }

    #[test]
    fn empty_train_split_rejected() {
        let (ds, mut split) = world(10, 5, 1);
        split.train.clear();
        assert!(Experiment::new(
            &ds,
            &split,
            PipelineParams::default(),
            CoTrainConfig::default(),
            1
        )
        .is_err());
    }
}
