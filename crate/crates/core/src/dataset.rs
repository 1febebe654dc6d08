//! Annotation ingestion, labeled/unlabeled selection, and synthetic scenes.
//!
//! The CSV schema is one box per row:
//!
//! ```text
//! image_name,x1,y1,x2,y2,class,image_width,image_height
//! ```
//!
//! A header line is optional; it is recognized by a non-numeric second column.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{iou, BBox, LabeledBox};
use crate::seed;

pub const OBJECT_CLASS: &str = "object";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub label: u32,
    /// Max IoU with any other box in the same image.
    pub occlusion: f64,
}

impl GroundTruth {
    pub fn labeled_box(&self) -> LabeledBox {
        LabeledBox {
            bbox: self.bbox,
            label: self.label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub gts: Vec<GroundTruth>,
    /// Unlabeled images keep their boxes only as a hidden oracle.
    pub labeled: bool,
}

impl ImageRecord {
    /// Builds a record and fills in per-box occlusion.
    pub fn new(
        image_id: impl Into<String>,
        file_name: impl Into<String>,
        width: u32,
        height: u32,
        boxes: Vec<LabeledBox>,
    ) -> Self {
        let occ = occlusion_levels(&boxes.iter().map(|b| b.bbox).collect::<Vec<_>>());
        ImageRecord {
            image_id: image_id.into(),
            file_name: file_name.into(),
            width,
            height,
            gts: boxes
                .into_iter()
                .zip(occ)
                .map(|(b, occlusion)| GroundTruth {
                    bbox: b.bbox,
                    label: b.label,
                    occlusion,
                })
                .collect(),
            labeled: true,
        }
    }

    pub fn labeled_boxes(&self) -> Vec<LabeledBox> {
        self.gts.iter().map(GroundTruth::labeled_box).collect()
    }
}

/// For each box, the max IoU with any other box.
pub fn occlusion_levels(boxes: &[BBox]) -> Vec<f64> {
    boxes
        .iter()
        .enumerate()
        .map(|(i, a)| {
            boxes
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, b)| iou(a, b))
                .fold(0.0, f64::max)
        })
        .collect()
}

fn stem(name: &str) -> &str {
    match name.rfind('.') {
        Some(i) if i > 0 => &name[..i],
        _ => name,
    }
}

/// Image identifier for a file name: the name without its extension.
pub fn image_id_for(name: &str) -> String {
    stem(name).to_string()
}

#[derive(Debug, Clone, Default)]
pub struct Annotations {
    pub records: Vec<ImageRecord>,
    /// Class names indexed by label id; `object` is always id 0.
    pub classes: Vec<String>,
    pub warnings: Vec<String>,
    pub accepted_rows: usize,
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Annotations> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(file, &path.display().to_string())
}

pub fn parse_annotations<R: Read>(reader: R, source: &str) -> Result<Annotations> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut out = Annotations {
        classes: vec![OBJECT_CLASS.to_string()],
        ..Default::default()
    };
    let mut class_ids: HashMap<String, u32> = HashMap::from([(OBJECT_CLASS.to_string(), 0)]);
    // image name -> (width, height, boxes), in first-seen order
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, (u32, u32, Vec<LabeledBox>)> = HashMap::new();

    const FIELDS: [&str; 8] = [
        "image_name",
        "x1",
        "y1",
        "x2",
        "y2",
        "class",
        "image_width",
        "image_height",
    ];

    for (idx, row) in rdr.records().enumerate() {
        let row = row?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(idx + 1);
        let err = |field: &str, reason: String| Error::Parse {
            path: source.to_string(),
            line,
            field: field.to_string(),
            reason,
        };
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        if idx == 0 && row.len() >= 2 && row[1].parse::<f64>().is_err() {
            continue;
        }
        if row.len() != FIELDS.len() {
            return Err(err(
                "row",
                format!("expected {} fields, found {}", FIELDS.len(), row.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            let v: f64 = row[i]
                .parse()
                .map_err(|_| err(FIELDS[i], format!("not a number: {:?}", &row[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(FIELDS[i], "non-finite".into()))
            }
        };
        let dim = |i: usize| -> Result<u32> {
            match row[i].parse::<u32>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(err(
                    FIELDS[i],
                    format!("not a positive integer: {:?}", &row[i]),
                )),
            }
        };
        let name = row[0].to_string();
        if name.is_empty() {
            return Err(err("image_name", "empty".into()));
        }
        let (x1, y1, x2, y2) = (num(1)?, num(2)?, num(3)?, num(4)?);
        let class = row[5].to_string();
        let (w, h) = (dim(6)?, dim(7)?);

        let (cx1, cy1, cx2, cy2) = (
            x1.clamp(0.0, w as f64),
            y1.clamp(0.0, h as f64),
            x2.clamp(0.0, w as f64),
            y2.clamp(0.0, h as f64),
        );
        let bbox = match BBox::new(cx1, cy1, cx2, cy2) {
            Ok(b) => {
                if (cx1, cy1, cx2, cy2) != (x1, y1, x2, y2) {
                    let msg = format!("{source}:{line}: box clamped to image bounds {w}x{h}");
                    log::warn!("{msg}");
                    out.warnings.push(msg);
                }
                b
            }
            Err(_) => {
                let msg = format!(
                    "{source}:{line}: row rejected, empty box ({x1}, {y1}, {x2}, {y2}) after clamping"
                );
                log::warn!("{msg}");
                out.warnings.push(msg);
                continue;
            }
        };
        let next = class_ids.len() as u32;
        let label = *class_ids.entry(class.clone()).or_insert_with(|| {
            out.classes.push(class.clone());
            next
        });

        let entry = grouped.entry(name.clone()).or_insert_with(|| {
            order.push(name.clone());
            (w, h, Vec::new())
        });
        if (entry.0, entry.1) != (w, h) {
            return Err(err(
                "image_width",
                format!(
                    "size {w}x{h} disagrees with earlier rows ({}x{})",
                    entry.0, entry.1
                ),
            ));
        }
        entry.2.push(LabeledBox { bbox, label });
        out.accepted_rows += 1;
    }

    out.records = order
        .into_iter()
        .map(|name| {
            let (w, h, boxes) = grouped.remove(&name).unwrap();
            ImageRecord::new(image_id_for(&name), name, w, h, boxes)
        })
        .collect();
    Ok(out)
}

/// Writes records in the annotation CSV schema, with a header line.
pub fn write_annotations<W: Write>(
    writer: W,
    records: &[ImageRecord],
    classes: &[String],
) -> Result<usize> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "image_name",
        "x1",
        "y1",
        "x2",
        "y2",
        "class",
        "image_width",
        "image_height",
    ])?;
    let mut rows = 0;
    for r in records {
        for g in &r.gts {
            let class = classes
                .get(g.label as usize)
                .cloned()
                .unwrap_or_else(|| format!("class{}", g.label));
            let [x1, y1, x2, y2] = g.bbox.coords();
            wtr.write_record([
                r.file_name.clone(),
                x1.to_string(),
                y1.to_string(),
                x2.to_string(),
                y2.to_string(),
                class,
                r.width.to_string(),
                r.height.to_string(),
            ])?;
            rows += 1;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::param("fractions", "each fraction must be in [0, 1]"));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::param("fractions", format!("sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes: floor for train and val, remainder to test.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // 0.7 * 2000 lands a hair under 1400 in binary floating point
        let floor = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
        let train = floor(self.train).min(n);
        let val = floor(self.val).min(n - train);
        (train, val, n - train - val)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub unlabeled_pool: Vec<String>,
}

impl DatasetSplit {
    pub fn labeled_ids(&self) -> impl Iterator<Item = &String> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    /// Checks pairwise disjointness of all four sets.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for id in self.labeled_ids().chain(&self.unlabeled_pool) {
            if !seen.insert(id) {
                return Err(Error::param("split", format!("image {id} appears twice")));
            }
        }
        Ok(())
    }
}

/// Seeded uniform selection of labeled and unlabeled images, then the
/// train/val/test split of the labeled part. Each subset is sorted by id.
pub fn select_and_split(
    records: &[ImageRecord],
    n_labeled: usize,
    n_unlabeled: usize,
    fractions: SplitFractions,
    seed: u64,
) -> Result<DatasetSplit> {
    fractions.validate()?;
    if n_labeled == 0 {
        return Err(Error::param("n_labeled", "must be at least 1"));
    }
    let required = n_labeled + n_unlabeled;
    if required > records.len() {
        return Err(Error::InsufficientRecords {
            required,
            available: records.len(),
        });
    }
    let mut ids: Vec<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::param("records", "duplicate image ids"));
    }
    let mut rng = seed::rng_for(seed, &[seed::TAG_SPLIT]);
    ids.shuffle(&mut rng);

    let (n_train, n_val, _) = fractions.sizes(n_labeled);
    let take = |range: std::ops::Range<usize>| {
        let mut v: Vec<String> = ids[range].iter().map(|s| s.to_string()).collect();
        v.sort();
        v
    };
    Ok(DatasetSplit {
        train: take(0..n_train),
        val: take(n_train..n_train + n_val),
        test: take(n_train + n_val..n_labeled),
        unlabeled_pool: take(n_labeled..required),
    })
}

/// Parameters of one synthetic shelf scene: a grid of equally sized boxes
/// whose spacing is shrunk by `overlap_factor`, with Gaussian center jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub image_width: u32,
    pub image_height: u32,
    pub grid_rows: u32,
    pub grid_cols: u32,
    pub box_w: f64,
    pub box_h: f64,
    pub jitter: f64,
    pub overlap_factor: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            image_width: 512,
            image_height: 512,
            grid_rows: 6,
            grid_cols: 8,
            box_w: 48.0,
            box_h: 64.0,
            jitter: 1.0,
            overlap_factor: 0.4,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::param("grid", "rows and cols must be positive"));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::param("image size", "must be positive"));
        }
        if !(self.box_w > 0.0 && self.box_h > 0.0) {
            return Err(Error::param("box size", "must be positive"));
        }
        if self.box_w > self.image_width as f64 || self.box_h > self.image_height as f64 {
            return Err(Error::param(
                "box size",
                format!(
                    "{}x{} exceeds image {}x{}",
                    self.box_w, self.box_h, self.image_width, self.image_height
                ),
            ));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::param("jitter", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.overlap_factor) {
            return Err(Error::param("overlap_factor", "must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Places the grid, jitters centers, clips to the image.
///
/// A box that loses more than half its area to clipping is dropped.
pub fn generate_synthetic_scene(spec: &SceneSpec) -> Result<ImageRecord> {
    spec.validate()?;
    let mut rng = seed::rng_for(spec.seed, &[seed::TAG_SCENE]);
    let noise = Normal::new(0.0, spec.jitter.max(f64::MIN_POSITIVE)).expect("valid std");
    let (w, h) = (spec.image_width as f64, spec.image_height as f64);
    let sx = spec.box_w * (1.0 - spec.overlap_factor);
    let sy = spec.box_h * (1.0 - spec.overlap_factor);
    let extent_x = (spec.grid_cols - 1) as f64 * sx + spec.box_w;
    let extent_y = (spec.grid_rows - 1) as f64 * sy + spec.box_h;
    let x0 = (w - extent_x) / 2.0 + spec.box_w / 2.0;
    let y0 = (h - extent_y) / 2.0 + spec.box_h / 2.0;

    let mut boxes = Vec::with_capacity((spec.grid_rows * spec.grid_cols) as usize);
    for r in 0..spec.grid_rows {
        for c in 0..spec.grid_cols {
            let (mut cx, mut cy) = (x0 + c as f64 * sx, y0 + r as f64 * sy);
            if spec.jitter > 0.0 {
                cx += noise.sample(&mut rng);
                cy += noise.sample(&mut rng);
            }
            let raw = BBox::from_center(cx, cy, spec.box_w, spec.box_h)?;
            if let Some(clipped) = raw.clamp_to(w, h) {
                if clipped.area() >= 0.5 * raw.area() {
                    boxes.push(LabeledBox {
                        bbox: clipped,
                        label: 0,
                    });
                }
            }
        }
    }
    let id = format!("scene_{:016x}", spec.seed);
    Ok(ImageRecord::new(
        id.clone(),
        format!("{id}.jpg"),
        spec.image_width,
        spec.image_height,
        boxes,
    ))
}

/// Optional per-image density ranges (inclusive).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DensityVariation {
    pub rows: Option<(u32, u32)>,
    pub cols: Option<(u32, u32)>,
    pub overlap: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestImage {
    pub image_id: String,
    pub seed: u64,
    pub grid_rows: u32,
    pub grid_cols: u32,
    pub overlap_factor: f64,
}

/// Sidecar document recording how a synthetic dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub n_images: usize,
    pub template: SceneSpec,
    pub variation: DensityVariation,
    pub images: Vec<ManifestImage>,
}

pub fn synthetic_image_id(index: usize) -> String {
    format!("synth_{index:06}")
}

/// `n_images` scenes with per-image seeds `derive(seed, [scene, index])`.
pub fn generate_synthetic_dataset(
    n_images: usize,
    template: &SceneSpec,
    variation: &DensityVariation,
    seed: u64,
) -> Result<(Vec<ImageRecord>, SyntheticManifest)> {
    if n_images == 0 {
        return Err(Error::param("n_images", "must be at least 1"));
    }
    template.validate()?;
    let specs: Vec<SceneSpec> = (0..n_images)
        .map(|i| {
            let s = seed::derive(seed, &[seed::TAG_SCENE, i as u64]);
            let mut rng = seed::rng(s);
            let mut spec = template.clone();
            spec.seed = s;
            if let Some((lo, hi)) = variation.rows {
                spec.grid_rows = rng.random_range(lo..=hi);
            }
            if let Some((lo, hi)) = variation.cols {
                spec.grid_cols = rng.random_range(lo..=hi);
            }
            if let Some((lo, hi)) = variation.overlap {
                spec.overlap_factor = if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                };
            }
            spec
        })
        .collect();
    let scenes = crate::par::map_range(n_images, |i| {
        generate_synthetic_scene(&specs[i]).map(|mut rec| {
            rec.image_id = synthetic_image_id(i);
            rec.file_name = format!("{}.jpg", rec.image_id);
            rec
        })
    });
    let records = scenes.into_iter().collect::<Result<Vec<_>>>()?;
    let manifest = SyntheticManifest {
        format: "densecotrain-synthetic".into(),
        version: 1,
        seed,
        n_images,
        template: template.clone(),
        variation: variation.clone(),
        images: records
            .iter()
            .zip(&specs)
            .map(|(r, s)| ManifestImage {
                image_id: r.image_id.clone(),
                seed: s.seed,
                grid_rows: s.grid_rows,
                grid_cols: s.grid_cols,
                overlap_factor: s.overlap_factor,
            })
            .collect(),
    };
    Ok((records, manifest))
}

/// Records indexed by id.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<ImageRecord>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl Dataset {
    pub fn new(records: Vec<ImageRecord>) -> Self {
        let index = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.image_id.clone(), i))
            .collect();
        Dataset { records, index }
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn resolve<'a>(&'a self, ids: &[String]) -> Result<Vec<&'a ImageRecord>> {
        ids.iter()
            .map(|id| {
                self.get(id)
                    .ok_or_else(|| Error::param("image_id", format!("unknown image {id}")))
            })
            .collect()
    }

    /// Marks pool images unlabeled and everything else labeled.
    pub fn apply_split(&mut self, split: &DatasetSplit) {
        for r in &mut self.records {
            r.labeled = true;
        }
        for id in &split.unlabeled_pool {
            if let Some(&i) = self.index.get(id) {
                self.records[i].labeled = false;
            }
        }
    }
}
