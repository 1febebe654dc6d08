//! Detector abstraction and the two synthetic detector profiles.
//!
//! The localizer profile stands in for a region-proposal detector: tight
//! boxes, but recall drops quickly on occluded objects. The contextual
//! profile stands in for a single-shot detector with a global view: looser
//! boxes, little sensitivity to occlusion.
//!
//! Hyperparameters drive a [`SkillModel`] through a saturating training curve,
//! and the skill model drives [`SyntheticDetector::detect`]. Each ground-truth
//! box owns a latent draw per view, so a view's misses are systematic (the same
//! boxes are hard for it every round) while the two views miss independently.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Beta, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::ImageRecord;
use crate::error::{Error, Result};
use crate::geom::{iou, nms, BBox, Scored, ScoredBox};
use crate::seed;

pub const DEFAULT_FEATURE_DIM: usize = 16;
/// Detections with at least this IoU to a ground truth are objects.
pub const OBJECT_IOU: f64 = 0.5;
pub const BATCH_SIZES: [u32; 4] = [4, 8, 16, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Precise localization, occlusion-sensitive (the region-proposal role).
    Localizer,
    /// Context-aware, occlusion-robust, looser boxes (the single-shot role).
    Contextual,
}

impl Profile {
    pub fn tag(self) -> u64 {
        match self {
            Profile::Localizer => 1,
            Profile::Contextual => 2,
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Profile::Localizer => "localizer",
            Profile::Contextual => "contextual",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorScale {
    Small,
    Medium,
    Large,
    Mixed,
}

impl AnchorScale {
    pub const MENU: [AnchorScale; 4] = [
        AnchorScale::Small,
        AnchorScale::Medium,
        AnchorScale::Large,
        AnchorScale::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnchorScale::Small => "small",
            AnchorScale::Medium => "medium",
            AnchorScale::Large => "large",
            AnchorScale::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::MENU.into_iter().find(|a| a.name() == s)
    }
}

/// Box-size regime of a scene, by `sqrt(w * h)`: small < 32 <= medium < 96 <= large.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeRegime {
    Small,
    Medium,
    Large,
}

impl SizeRegime {
    pub fn of(box_w: f64, box_h: f64) -> Self {
        let s = (box_w * box_h).sqrt();
        if s < 32.0 {
            SizeRegime::Small
        } else if s < 96.0 {
            SizeRegime::Medium
        } else {
            SizeRegime::Large
        }
    }

    fn matches(self, a: AnchorScale) -> bool {
        matches!(
            (self, a),
            (SizeRegime::Small, AnchorScale::Small)
                | (SizeRegime::Medium, AnchorScale::Medium)
                | (SizeRegime::Large, AnchorScale::Large)
        )
    }
}

/// One view's detector hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub epochs: u32,
    pub confidence_threshold: f64,
    pub nms_iou: f64,
    pub batch_size: u32,
    pub learning_rate: f64,
    /// Only meaningful for the localizer.
    pub anchor_scales: Option<AnchorScale>,
}

impl DetectorParams {
    pub fn default_for(profile: Profile) -> Self {
        match profile {
            Profile::Localizer => DetectorParams {
                epochs: 40,
                confidence_threshold: 0.3,
                nms_iou: 0.5,
                batch_size: 16,
                learning_rate: 1e-3,
                anchor_scales: Some(AnchorScale::Medium),
            },
            Profile::Contextual => DetectorParams {
                epochs: 40,
                confidence_threshold: 0.3,
                nms_iou: 0.5,
                batch_size: 16,
                learning_rate: 2e-3,
                anchor_scales: None,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be positive"));
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold < 1.0) {
            return Err(Error::param("confidence_threshold", "must be in (0, 1)"));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return Err(Error::param("nms_iou", "must be in (0, 1)"));
        }
        if !BATCH_SIZES.contains(&self.batch_size) {
            return Err(Error::param(
                "batch_size",
                format!("{} not in {BATCH_SIZES:?}", self.batch_size),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate", "must be positive"));
        }
        Ok(())
    }
}

/// What a trained detector can do, in simulation terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillModel {
    pub base_recall: f64,
    /// Recall lost per unit of occlusion (max neighbor IoU).
    pub occlusion_penalty: f64,
    /// Std of per-coordinate localization noise, pixels.
    pub jitter_sigma: f64,
    /// Mean false positives per image.
    pub fp_rate: f64,
}

impl SkillModel {
    pub fn effective_recall(&self, occlusion: f64) -> f64 {
        (self.base_recall - self.occlusion_penalty * occlusion).clamp(0.0, 1.0)
    }
}

/// Per-profile constants of the simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileConstants {
    /// Recall reachable with unlimited training.
    pub ceiling: f64,
    /// Rate of the saturating epochs curve.
    pub kappa: f64,
    /// Learning rate at which training is most effective.
    pub lr_optimum: f64,
    /// Width of the learning-rate bump, in decades.
    pub lr_width: f64,
    pub jitter_sigma: f64,
    /// Lower bound on jitter after any amount of retraining.
    pub jitter_floor: f64,
    pub occlusion_penalty: f64,
    pub fp_rate: f64,
    /// Direction of the object/background mean offset in the first feature plane.
    pub feature_angle_deg: f64,
}

impl ProfileConstants {
    pub fn default_for(profile: Profile) -> Self {
        match profile {
            Profile::Localizer => ProfileConstants {
                ceiling: 0.97,
                kappa: 0.1,
                lr_optimum: 1e-3,
                lr_width: 0.5,
                jitter_sigma: 1.5,
                jitter_floor: 0.75,
                occlusion_penalty: 1.4,
                fp_rate: 2.0,
                feature_angle_deg: 0.0,
            },
            Profile::Contextual => ProfileConstants {
                ceiling: 0.95,
                kappa: 0.1,
                lr_optimum: 2e-3,
                lr_width: 0.5,
                jitter_sigma: 5.0,
                jitter_floor: 1.0,
                occlusion_penalty: 0.3,
                fp_rate: 3.0,
                feature_angle_deg: 60.0,
            },
        }
    }

    /// Learning-rate efficiency: a Gaussian bump in log10 space peaking at
    /// `lr_optimum`, so rates past the optimum degrade training.
    pub fn lr_efficiency(&self, lr: f64) -> f64 {
        let d = lr.log10() - self.lr_optimum.log10();
        (-d * d / (2.0 * self.lr_width * self.lr_width)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub dim: usize,
    /// Distance between object and background means, in noise std units.
    pub separation: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            dim: DEFAULT_FEATURE_DIM,
            separation: 5.0,
        }
    }
}

/// How detector scores are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    /// True detections score `clamp(gain * IoU + U(-noise, noise), 0, 1)`.
    pub gain: f64,
    pub noise: f64,
    /// False positives score `fp_scale * Beta(fp_alpha, fp_beta)`.
    pub fp_alpha: f64,
    pub fp_beta: f64,
    pub fp_scale: f64,
}

impl Default for ScoreModel {
    fn default() -> Self {
        ScoreModel {
            gain: 1.0,
            noise: 0.08,
            fp_alpha: 2.0,
            fp_beta: 5.0,
            fp_scale: 1.0,
        }
    }
}

/// Constants of the retraining rule, see [`retrain`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningRule {
    /// Labeled ground-truth count at which supervised recall reaches 63% of its curve value.
    pub labeled_scale: f64,
    /// Pseudo-label count scale of the volume saturation.
    pub volume_scale: f64,
    pub recall_gain: f64,
    pub occlusion_gain: f64,
    pub jitter_gain: f64,
    /// Rate at which looser teacher boxes pull jitter up.
    pub jitter_harm: f64,
    /// Recall lost per unit fraction of wrong pseudo-labels (at full volume).
    pub wrong_recall_penalty: f64,
    /// Relative jitter increase per unit fraction of wrong pseudo-labels.
    pub wrong_jitter_penalty: f64,
}

impl Default for LearningRule {
    fn default() -> Self {
        LearningRule {
            labeled_scale: 3000.0,
            volume_scale: 2000.0,
            recall_gain: 0.5,
            occlusion_gain: 0.6,
            jitter_gain: 0.6,
            jitter_harm: 0.1,
            wrong_recall_penalty: 0.3,
            wrong_jitter_penalty: 0.5,
        }
    }
}

/// All constants of the synthetic detector world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub localizer: ProfileConstants,
    pub contextual: ProfileConstants,
    pub features: FeatureConfig,
    pub scores: ScoreModel,
    pub learning: LearningRule,
    pub scene_regime: SizeRegime,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            localizer: ProfileConstants::default_for(Profile::Localizer),
            contextual: ProfileConstants::default_for(Profile::Contextual),
            features: FeatureConfig::default(),
            scores: ScoreModel::default(),
            learning: LearningRule::default(),
            scene_regime: SizeRegime::Medium,
        }
    }
}

impl SimConfig {
    pub fn constants(&self, profile: Profile) -> &ProfileConstants {
        match profile {
            Profile::Localizer => &self.localizer,
            Profile::Contextual => &self.contextual,
        }
    }
}

fn batch_factor(bs: u32) -> f64 {
    1.0 + 0.1 * (bs as f64 / 16.0).log2().abs()
}

fn anchor_factor(profile: Profile, anchors: Option<AnchorScale>, regime: SizeRegime) -> f64 {
    match (profile, anchors) {
        (Profile::Contextual, _) | (Profile::Localizer, None) => 1.0,
        (Profile::Localizer, Some(AnchorScale::Mixed)) => 1.2,
        (Profile::Localizer, Some(a)) if regime.matches(a) => 1.0,
        (Profile::Localizer, Some(_)) => 1.5,
    }
}

/// Maps hyperparameters to skill.
///
/// `base_recall = ceiling * (1 - exp(-kappa * epochs * g(lr)))` with `g` the
/// learning-rate bump. Jitter grows with distance of the batch size from 16
/// and, for the localizer, when anchor scales miss the scene's size regime.
pub fn skill_from_params(params: &DetectorParams, profile: Profile, cfg: &SimConfig) -> SkillModel {
    let c = cfg.constants(profile);
    let drive = c.kappa * params.epochs as f64 * c.lr_efficiency(params.learning_rate);
    SkillModel {
        base_recall: c.ceiling * (1.0 - (-drive).exp()),
        occlusion_penalty: c.occlusion_penalty,
        jitter_sigma: c.jitter_sigma
            * batch_factor(params.batch_size)
            * anchor_factor(profile, params.anchor_scales, cfg.scene_regime),
        fp_rate: c.fp_rate,
    }
}

/// Skill after supervised training on `labeled_gts` exact annotations.
pub fn supervised_skill(
    params: &DetectorParams,
    profile: Profile,
    cfg: &SimConfig,
    labeled_gts: usize,
) -> Result<SkillModel> {
    if labeled_gts == 0 {
        return Err(Error::EmptyTraining(format!(
            "{profile} view has no labeled annotations"
        )));
    }
    let mut s = skill_from_params(params, profile, cfg);
    s.base_recall *= 1.0 - (-(labeled_gts as f64) / cfg.learning.labeled_scale).exp();
    Ok(s)
}

/// Oracle audit of one accepted pseudo-label, from the student's side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoEvidence {
    /// IoU >= 0.5 with a hidden ground truth.
    pub correct: bool,
    /// Correct, and the matched object is one the student missed on its own.
    pub informative: bool,
    /// RMS corner error against the matched ground truth, pixels (correct labels only).
    pub loc_error: f64,
}

/// Retraining effect of pseudo-labels on top of the supervised skill.
///
/// With `n` accepted labels, `c` correct, `k` informative, `wrong = (n - c) / n`
/// and volume saturation `v(m) = 1 - exp(-m / volume_scale)`:
///
/// - learning signal `L = (k / max(blind_spots, k)) * v(k)`;
/// - occlusion penalty shrinks by `occlusion_gain * L`;
/// - base recall closes `recall_gain * L` of its gap to the ceiling, then
///   loses `wrong_recall_penalty * wrong * v(n)`;
/// - jitter moves toward the RMS error `e` of correct labels, at rate
///   `jitter_gain * v(c)` when `e` is tighter and `jitter_harm * v(c)` when
///   looser, then grows by `wrong_jitter_penalty * wrong * v(n)` (relative);
/// - everything is bounded by the profile ceiling and jitter floor.
///
/// No pseudo-labels leaves `supervised` unchanged.
pub fn retrain(
    supervised: &SkillModel,
    profile: Profile,
    cfg: &SimConfig,
    labeled_gts: usize,
    evidence: &[PseudoEvidence],
    blind_spots: usize,
) -> Result<SkillModel> {
    if labeled_gts == 0 && evidence.is_empty() {
        return Err(Error::EmptyTraining(format!("{profile} view retrain")));
    }
    if evidence.is_empty() {
        return Ok(*supervised);
    }
    let c = cfg.constants(profile);
    let rule = &cfg.learning;
    let vol = |m: usize| 1.0 - (-(m as f64) / rule.volume_scale).exp();

    let n = evidence.len();
    let correct: Vec<&PseudoEvidence> = evidence.iter().filter(|e| e.correct).collect();
    let informative = evidence.iter().filter(|e| e.informative).count();
    let wrong = (n - correct.len()) as f64 / n as f64;

    let coverage = if informative == 0 {
        0.0
    } else {
        informative as f64 / blind_spots.max(informative) as f64
    };
    let signal = coverage * vol(informative);

    let mut s = *supervised;
    s.occlusion_penalty *= 1.0 - rule.occlusion_gain * signal;
    s.base_recall += (c.ceiling - s.base_recall).max(0.0) * rule.recall_gain * signal;
    s.base_recall -= rule.wrong_recall_penalty * wrong * vol(n);
    s.base_recall = s.base_recall.clamp(0.0, c.ceiling);

    if !correct.is_empty() {
        let mse = correct
            .iter()
            .map(|e| e.loc_error * e.loc_error)
            .sum::<f64>()
            / correct.len() as f64;
        let teacher = mse.sqrt();
        let rate = if teacher < s.jitter_sigma {
            rule.jitter_gain
        } else {
            rule.jitter_harm
        };
        s.jitter_sigma += rate * vol(correct.len()) * (teacher - s.jitter_sigma);
    }
    s.jitter_sigma *= 1.0 + rule.wrong_jitter_penalty * wrong * vol(n);
    s.jitter_sigma = s.jitter_sigma.max(c.jitter_floor);
    Ok(s)
}

/// A candidate box with its feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub scored: ScoredBox,
    pub features: Vec<f64>,
}

impl Scored for Detection {
    fn scored(&self) -> &ScoredBox {
        &self.scored
    }
}

/// Anything that turns an image into candidate detections.
pub trait Detector: Sync {
    fn detect(&self, image: &ImageRecord, seed: u64) -> Vec<Detection>;
}

/// Class-conditional Gaussian features for a candidate box.
///
/// Objects center on `+separation/2 * u`, background on `-separation/2 * u`,
/// where `u` is the profile's unit direction in the first coordinate plane,
/// plus unit isotropic noise. Deterministic in `(bbox, is_object, seed)`.
pub fn emit_features(
    bbox: &BBox,
    is_object: bool,
    profile: Profile,
    cfg: &SimConfig,
    seed: u64,
) -> Vec<f64> {
    let f = &cfg.features;
    let [x1, y1, x2, y2] = bbox.coords();
    let mut rng = seed::rng_for(
        seed,
        &[
            seed::TAG_FEATURES,
            x1.to_bits(),
            y1.to_bits(),
            x2.to_bits(),
            y2.to_bits(),
            is_object as u64,
            profile.tag(),
        ],
    );
    let angle = cfg.constants(profile).feature_angle_deg * PI / 180.0;
    let half = if is_object {
        f.separation / 2.0
    } else {
        -f.separation / 2.0
    };
    (0..f.dim)
        .map(|i| {
            let mean = match i {
                0 => half * angle.cos(),
                1 => half * angle.sin(),
                _ => 0.0,
            };
            let z: f64 = StandardNormal.sample(&mut rng);
            mean + z
        })
        .collect()
}

/// Best IoU of `b` against the image's ground truth.
pub fn best_gt_iou(b: &BBox, image: &ImageRecord) -> f64 {
    image
        .gts
        .iter()
        .map(|g| iou(b, &g.bbox))
        .fold(0.0, f64::max)
}

/// Synthetic detector: a profile, its hyperparameters and current skill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDetector {
    pub profile: Profile,
    pub params: DetectorParams,
    pub skill: SkillModel,
    pub sim: SimConfig,
}

impl SyntheticDetector {
    pub fn new(
        profile: Profile,
        params: DetectorParams,
        skill: SkillModel,
        sim: SimConfig,
    ) -> Self {
        SyntheticDetector {
            profile,
            params,
            skill,
            sim,
        }
    }

    /// Raw candidates before score filtering and NMS.
    pub fn propose(&self, image: &ImageRecord, seed: u64) -> Vec<Detection> {
        let (w, h) = (image.width as f64, image.height as f64);
        let scores = &self.sim.scores;
        let sigma = self.skill.jitter_sigma;
        let mut out = Vec::with_capacity(image.gts.len() + 4);

        for (j, gt) in image.gts.iter().enumerate() {
            let mut rng = seed::rng_for(seed, &[seed::TAG_DETECT, j as u64]);
            let latent: f64 = rng.random();
            let z: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            let noise: f64 = rng.random_range(-1.0..1.0) * scores.noise;
            if latent >= self.skill.effective_recall(gt.occlusion) {
                continue;
            }
            let [x1, y1, x2, y2] = gt.bbox.coords();
            let Some(bbox) = BBox::new(
                x1 + sigma * z[0],
                y1 + sigma * z[1],
                x2 + sigma * z[2],
                y2 + sigma * z[3],
            )
            .ok()
            .and_then(|b| b.clamp_to(w, h)) else {
                continue;
            };
            let overlap = iou(&bbox, &gt.bbox);
            let score = (scores.gain * overlap + noise).clamp(0.0, 1.0);
            let is_object = best_gt_iou(&bbox, image) >= OBJECT_IOU;
            out.push(Detection {
                scored: ScoredBox {
                    bbox,
                    score,
                    label: gt.label,
                },
                features: emit_features(&bbox, is_object, self.profile, &self.sim, seed),
            });
        }

        let mut rng = seed::rng_for(seed, &[seed::TAG_DETECT, u64::MAX]);
        let n_fp = if self.skill.fp_rate > 0.0 {
            Poisson::new(self.skill.fp_rate)
                .map(|p| p.sample(&mut rng) as usize)
                .unwrap_or(0)
        } else {
            0
        };
        if n_fp > 0 {
            let (bw, bh) = typical_size(image);
            let beta = Beta::new(scores.fp_alpha, scores.fp_beta).expect("positive beta params");
            for _ in 0..n_fp {
                let fw = (bw * rng.random_range(0.5..1.5)).min(w);
                let fh = (bh * rng.random_range(0.5..1.5)).min(h);
                let x = rng.random_range(0.0..=(w - fw));
                let y = rng.random_range(0.0..=(h - fh));
                let score = (scores.fp_scale * beta.sample(&mut rng)).clamp(0.0, 1.0);
                let Ok(bbox) = BBox::new(x, y, x + fw, y + fh) else {
                    continue;
                };
                let is_object = best_gt_iou(&bbox, image) >= OBJECT_IOU;
                out.push(Detection {
                    scored: ScoredBox {
                        bbox,
                        score,
                        label: 0,
                    },
                    features: emit_features(&bbox, is_object, self.profile, &self.sim, seed),
                });
            }
        }
        out
    }
}

/// Mean ground-truth size, or an eighth of the image when there is none.
pub fn typical_size(image: &ImageRecord) -> (f64, f64) {
    if image.gts.is_empty() {
        return (image.width as f64 / 8.0, image.height as f64 / 8.0);
    }
    let n = image.gts.len() as f64;
    (
        image.gts.iter().map(|g| g.bbox.width()).sum::<f64>() / n,
        image.gts.iter().map(|g| g.bbox.height()).sum::<f64>() / n,
    )
}

impl Detector for SyntheticDetector {
    /// Candidates filtered at the confidence threshold, then NMS at the IoU gene.
    fn detect(&self, image: &ImageRecord, seed: u64) -> Vec<Detection> {
        let kept: Vec<Detection> = self
            .propose(image, seed)
            .into_iter()
            .filter(|d| d.scored.score >= self.params.confidence_threshold)
            .collect();
        nms(&kept, self.params.nms_iou)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic_dataset, DensityVariation, SceneSpec};

    fn sim() -> SimConfig {
        SimConfig::default()
    }

    #[test]
    fn saturating_curve_hits_ceiling_and_floor() {
        let cfg = sim();
        for profile in [Profile::Localizer, Profile::Contextual] {
            let c = cfg.constants(profile);
            let mut p = DetectorParams::default_for(profile);
            p.epochs = 60;
            p.learning_rate = c.lr_optimum;
            let s = skill_from_params(&p, profile, &cfg);
            assert!(
                (c.ceiling - s.base_recall) <= 0.02,
                "{profile}: {}",
                s.base_recall
            );

            p.epochs = 1;
            p.learning_rate = 1e-5;
            let s = skill_from_params(&p, profile, &cfg);
            assert!(s.base_recall < 0.05, "{profile}: {}", s.base_recall);
        }
    }

    #[test]
    fn learning_rate_past_the_knee_degrades() {
        let cfg = sim();
        let mut p = DetectorParams::default_for(Profile::Localizer);
        let at_opt = skill_from_params(&p, Profile::Localizer, &cfg).base_recall;
        p.learning_rate = 1e-2;
        assert!(skill_from_params(&p, Profile::Localizer, &cfg).base_recall < at_opt);
    }

    #[test]
    fn profiles_are_ordered() {
        let cfg = sim();
        let p = DetectorParams::default_for(Profile::Localizer);
        let loc = skill_from_params(&p, Profile::Localizer, &cfg);
        let ctx = skill_from_params(&p, Profile::Contextual, &cfg);
        assert!(loc.jitter_sigma < ctx.jitter_sigma);
        assert!(loc.occlusion_penalty > ctx.occlusion_penalty);
    }

    #[test]
    fn anchor_mismatch_loosens_localizer() {
        let cfg = sim();
        let mut p = DetectorParams::default_for(Profile::Localizer);
        let matched = skill_from_params(&p, Profile::Localizer, &cfg).jitter_sigma;
        p.anchor_scales = Some(AnchorScale::Large);
        let off = skill_from_params(&p, Profile::Localizer, &cfg).jitter_sigma;
        p.anchor_scales = Some(AnchorScale::Mixed);
        let mixed = skill_from_params(&p, Profile::Localizer, &cfg).jitter_sigma;
        assert!(matched < mixed && mixed < off);
    }

    fn scene(overlap: f64, seed: u64) -> ImageRecord {
        let spec = SceneSpec {
            overlap_factor: overlap,
            jitter: 0.0,
            seed,
            ..Default::default()
        };
        crate::dataset::generate_synthetic_scene(&spec).unwrap()
    }

    fn detector(skill: SkillModel, ct: f64) -> SyntheticDetector {
        let mut params = DetectorParams::default_for(Profile::Localizer);
        params.confidence_threshold = ct;
        SyntheticDetector::new(Profile::Localizer, params, skill, sim())
    }

    #[test]
    fn noiseless_detector_reproduces_ground_truth() {
        let im = scene(0.2, 1);
        let skill = SkillModel {
            base_recall: 1.0,
            occlusion_penalty: 0.0,
            jitter_sigma: 0.0,
            fp_rate: 0.0,
        };
        let dets = detector(skill, 1e-9).detect(&im, 5);
        assert_eq!(dets.len(), im.gts.len());
        for g in &im.gts {
            assert!(dets.iter().any(|d| d.scored.bbox == g.bbox));
        }
    }

    #[test]
    fn high_threshold_empties_output() {
        let im = scene(0.0, 1);
        let skill = SkillModel {
            base_recall: 1.0,
            occlusion_penalty: 0.0,
            jitter_sigma: 4.0,
            fp_rate: 3.0,
        };
        let det = detector(skill, 0.99);
        let all_low = det.propose(&im, 2).iter().all(|d| d.scored.score < 0.99);
        assert!(all_low);
        assert!(det.detect(&im, 2).is_empty());
    }

    #[test]
    fn recall_is_binomial() {
        let skill = SkillModel {
            base_recall: 0.8,
            occlusion_penalty: 0.0,
            jitter_sigma: 0.0,
            fp_rate: 0.0,
        };
        let det = detector(skill, 1e-9);
        // 21 disjoint 48-box scenes give 1008 boxes; use the first 1000
        let mut total_gt = 0;
        let mut hits = 0;
        for s in 0..21u64 {
            let im = scene(0.0, s);
            let take = (1000 - total_gt).min(im.gts.len());
            let mut trimmed = im.clone();
            trimmed.gts.truncate(take);
            total_gt += take;
            hits += det.detect(&trimmed, 100 + s).len();
        }
        assert_eq!(total_gt, 1000);
        assert!((760..=840).contains(&hits), "{hits}");
    }

    #[test]
    fn detect_is_deterministic_and_respects_its_filters() {
        let (recs, _) =
            generate_synthetic_dataset(4, &SceneSpec::default(), &DensityVariation::default(), 3)
                .unwrap();
        let cfg = sim();
        for profile in [Profile::Localizer, Profile::Contextual] {
            let p = DetectorParams::default_for(profile);
            let d = SyntheticDetector::new(
                profile,
                p.clone(),
                skill_from_params(&p, profile, &cfg),
                cfg.clone(),
            );
            for im in &recs {
                let a = d.detect(im, 9);
                assert_eq!(a, d.detect(im, 9));
                assert!(a.iter().all(|x| x.scored.score >= p.confidence_threshold));
                assert!(a.iter().all(|x| x.features.len() == DEFAULT_FEATURE_DIM));
                for (i, x) in a.iter().enumerate() {
                    for y in &a[i + 1..] {
                        assert!(iou(&x.scored.bbox, &y.scored.bbox) < p.nms_iou);
                    }
                }
            }
        }
    }

    #[test]
    fn features_are_deterministic_and_separable() {
        let cfg = sim();
        let b = BBox::new(1.0, 2.0, 30.0, 40.0).unwrap();
        assert_eq!(
            emit_features(&b, true, Profile::Localizer, &cfg, 4),
            emit_features(&b, true, Profile::Localizer, &cfg, 4)
        );

        let mut wide = cfg.clone();
        wide.features.separation = 6.0;
        let mut correct = 0;
        let n = 10_000;
        for i in 0..n {
            let obj = i % 2 == 0;
            let x = emit_features(&b, obj, Profile::Localizer, &wide, i as u64);
            if (x[0] > 0.0) == obj {
                correct += 1;
            }
        }
        assert!(correct as f64 / n as f64 >= 0.99, "{correct}");

        let mut flat = cfg.clone();
        flat.features.separation = 0.0;
        let mut correct = 0;
        for i in 0..n {
            let obj = i % 2 == 0;
            let x = emit_features(&b, obj, Profile::Localizer, &flat, i as u64);
            if (x[0] > 0.0) == obj {
                correct += 1;
            }
        }
        let acc = correct as f64 / n as f64;
        assert!((acc - 0.5).abs() < 0.03, "{acc}");
    }

    fn ev(correct: bool, informative: bool, loc_error: f64) -> PseudoEvidence {
        PseudoEvidence {
            correct,
            informative,
            loc_error,
        }
    }

    #[test]
    fn retrain_rules() {
        let cfg = sim();
        let p = DetectorParams::default_for(Profile::Localizer);
        let base = supervised_skill(&p, Profile::Localizer, &cfg, 5000).unwrap();
        assert_eq!(
            retrain(&base, Profile::Localizer, &cfg, 5000, &[], 0).unwrap(),
            base
        );
        assert!(retrain(&base, Profile::Localizer, &cfg, 0, &[], 0).is_err());
        assert!(supervised_skill(&p, Profile::Localizer, &cfg, 0).is_err());

        let good: Vec<_> = (0..4000).map(|i| ev(true, i % 2 == 0, 1.0)).collect();
        let after = retrain(&base, Profile::Localizer, &cfg, 5000, &good, 3000).unwrap();
        assert!(after.base_recall >= base.base_recall);
        assert!(after.occlusion_penalty < base.occlusion_penalty);

        let half_bad: Vec<_> = (0..4000)
            .map(|i| {
                if i % 2 == 0 {
                    ev(true, i % 4 == 0, 1.0)
                } else {
                    ev(false, false, 0.0)
                }
            })
            .collect();
        let worse = retrain(&base, Profile::Localizer, &cfg, 5000, &half_bad, 3000).unwrap();
        assert!(worse.base_recall < after.base_recall);
        assert!(worse.jitter_sigma > after.jitter_sigma);
    }

    #[test]
    fn tighter_teachers_reduce_jitter_and_looser_ones_barely_move_it() {
        let cfg = sim();
        let p = DetectorParams::default_for(Profile::Contextual);
        let base = supervised_skill(&p, Profile::Contextual, &cfg, 5000).unwrap();
        let tight: Vec<_> = (0..3000).map(|_| ev(true, false, 1.5)).collect();
        let t = retrain(&base, Profile::Contextual, &cfg, 5000, &tight, 0).unwrap();
        assert!(t.jitter_sigma < base.jitter_sigma - 1.0);
        assert_eq!(t.base_recall, base.base_recall);

        let loose: Vec<_> = (0..3000).map(|_| ev(true, false, 9.0)).collect();
        let l = retrain(&base, Profile::Contextual, &cfg, 5000, &loose, 0).unwrap();
        assert!(l.jitter_sigma > base.jitter_sigma);
        assert!(l.jitter_sigma - base.jitter_sigma < base.jitter_sigma - t.jitter_sigma);
    }
}
