//! Referring expressions from ground-truth geometry and segment metadata.
//!
//! Every expression carries a structured [`Predicate`] next to its text.
//! A predicate selects instances by category and attribute subset, then
//! optionally filters by a spatial relation. The generator only emits
//! expressions whose predicate selects exactly the target instance.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::library::SegmentRecord;
use crate::mask::BBox;

#[derive(Debug, Error)]
pub enum ExprError {
    #[error("expression backend unreachable: {0}")]
    Unreachable(String),
    #[error("expression backend returned status {0}")]
    Status(u16),
    #[error("expression backend response is malformed: {0}")]
    Malformed(String),
    #[error("expression backend config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialRelation {
    LeftOf,
    RightOf,
    Above,
    Below,
    Leftmost,
    Rightmost,
    Topmost,
    Bottommost,
    Largest,
    Smallest,
    FrameLeft,
    FrameRight,
    FrameTop,
    FrameBottom,
    FrameCenter,
}

impl SpatialRelation {
    pub fn inverse(self) -> Option<SpatialRelation> {
        use SpatialRelation::*;
        match self {
            LeftOf => Some(RightOf),
            RightOf => Some(LeftOf),
            Above => Some(Below),
            Below => Some(Above),
            _ => None,
        }
    }

    fn phrase(self) -> &'static str {
        use SpatialRelation::*;
        match self {
            LeftOf => "to the left of",
            RightOf => "to the right of",
            Above => "above",
            Below => "below",
            Leftmost => "leftmost",
            Rightmost => "rightmost",
            Topmost => "topmost",
            Bottommost => "bottommost",
            Largest => "largest",
            Smallest => "smallest",
            FrameLeft => "left",
            FrameRight => "right",
            FrameTop => "top",
            FrameBottom => "bottom",
            FrameCenter => "center",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpressionType {
    Attribute,
    Spatial,
    Mixed,
}

impl ExpressionType {
    pub const ALL: [ExpressionType; 3] = [ExpressionType::Attribute, ExpressionType::Spatial, ExpressionType::Mixed];
}

/// Ordered, duplicate-free attribute tags.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeSet(Vec<String>);

impl AttributeSet {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(tags: I) -> Self {
        let mut out: Vec<String> = Vec::new();
        for t in tags {
            let t = t.into().trim().to_lowercase();
            if !t.is_empty() && !out.contains(&t) {
                out.push(t);
            }
        }
        Self(out)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn contains_all(&self, other: &[String]) -> bool {
        other.iter().all(|a| self.0.contains(a))
    }
}

const STOP_WORDS: &[&str] = &[
    "a", "an", "the", "of", "on", "in", "with", "and", "or", "at", "by", "for", "from", "to", "into", "onto", "this",
    "that", "these", "those", "some", "one", "two", "three", "is", "are", "photo", "picture", "image", "isolated",
    "against", "over", "under", "its", "their", "single",
];

fn tokenize(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn head_matches(token: &str, head: &str) -> bool {
    token == head || token.strip_suffix('s') == Some(head) || token.strip_suffix("es") == Some(head)
}

/// Attribute tags of a segment. Without tags, the adjectives directly in
/// front of the category noun in the prompt are used: words are collected
/// backward from the category until a stop word or the start of the prompt.
pub fn extract_attributes(record: &SegmentRecord) -> AttributeSet {
    if !record.attributes.is_empty() {
        return AttributeSet::new(record.attributes.iter().cloned());
    }
    let tokens = tokenize(&record.prompt);
    let cat = tokenize(&record.category);
    let Some(head) = cat.last() else {
        return AttributeSet::default();
    };
    let n = cat.len();
    let start = (0..tokens.len()).find(|&i| {
        i + n <= tokens.len()
            && tokens[i..i + n - 1] == cat[..n - 1]
            && head_matches(&tokens[i + n - 1], head)
    });
    let Some(start) = start else {
        return AttributeSet::default();
    };
    let mut adjectives: Vec<&str> = tokens[..start]
        .iter()
        .rev()
        .take_while(|t| !STOP_WORDS.contains(&t.as_str()) && !t.chars().all(|c| c.is_ascii_digit()))
        .map(String::as_str)
        .collect();
    adjectives.reverse();
    AttributeSet::new(adjectives)
}

fn center(b: &BBox) -> (f64, f64) {
    b.center()
}

/// Fraction of the canvas dimension two centers must differ by before a
/// pairwise relation is asserted.
pub const MIN_CENTER_GAP: f64 = 0.10;

/// Pairwise relation of box `a` relative to box `b` on a `canvas_w x canvas_h`
/// canvas. The axis with the larger center offset decides (ties go to the
/// horizontal axis), and the offset must be at least 10% of the canvas
/// extent along that axis.
pub fn spatial_relation(a: &BBox, b: &BBox, canvas_w: u32, canvas_h: u32) -> Option<SpatialRelation> {
    let (ax, ay) = center(a);
    let (bx, by) = center(b);
    let (dx, dy) = (bx - ax, by - ay);
    if dx.abs() >= dy.abs() {
        if dx.abs() >= MIN_CENTER_GAP * canvas_w as f64 && dx != 0.0 {
            return Some(if dx > 0.0 { SpatialRelation::LeftOf } else { SpatialRelation::RightOf });
        }
    } else if dy.abs() >= MIN_CENTER_GAP * canvas_h as f64 {
        return Some(if dy > 0.0 { SpatialRelation::Above } else { SpatialRelation::Below });
    }
    None
}

/// Position of a box relative to the image frame.
///
/// Left/right and top/bottom split the canvas at 45% / 55%; center is the
/// middle third on both axes.
pub fn frame_relations(b: &BBox, canvas_w: u32, canvas_h: u32) -> Vec<SpatialRelation> {
    let (cx, cy) = center(b);
    let (w, h) = (canvas_w as f64, canvas_h as f64);
    let mut out = Vec::new();
    if cx < 0.45 * w {
        out.push(SpatialRelation::FrameLeft);
    } else if cx > 0.55 * w {
        out.push(SpatialRelation::FrameRight);
    }
    if cy < 0.45 * h {
        out.push(SpatialRelation::FrameTop);
    } else if cy > 0.55 * h {
        out.push(SpatialRelation::FrameBottom);
    }
    if (w / 3.0..=2.0 * w / 3.0).contains(&cx) && (h / 3.0..=2.0 * h / 3.0).contains(&cy) {
        out.push(SpatialRelation::FrameCenter);
    }
    out
}

/// "the {attributes} {category}"
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Descriptor {
    pub category: String,
    #[serde(default)]
    pub attributes: Vec<String>,
}

impl Descriptor {
    fn matches(&self, inst: &ExprInstance) -> bool {
        inst.category == self.category && inst.attributes.contains_all(&self.attributes)
    }
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("the ")?;
        for a in &self.attributes {
            write!(f, "{a} ")?;
        }
        f.write_str(&self.category)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RelationPredicate {
    /// Some instance matching `anchor` stands in `relation` to the target.
    Pairwise { relation: SpatialRelation, anchor: Descriptor },
    /// Extreme among the instances matching the target descriptor.
    Superlative { relation: SpatialRelation },
    /// All listed frame relations hold.
    Frame { relations: Vec<SpatialRelation> },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Predicate {
    pub target: Descriptor,
    #[serde(default)]
    pub relation: Option<RelationPredicate>,
}

/// Ground truth for one annotated instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExprInstance {
    pub ann_id: u64,
    pub category: String,
    pub attributes: AttributeSet,
    pub bbox: BBox,
    pub area: u64,
    #[serde(default)]
    pub prompt: String,
}

fn superlative_key(rel: SpatialRelation, inst: &ExprInstance) -> f64 {
    let (cx, cy) = center(&inst.bbox);
    match rel {
        SpatialRelation::Leftmost => cx,
        SpatialRelation::Rightmost => -cx,
        SpatialRelation::Topmost => cy,
        SpatialRelation::Bottommost => -cy,
        SpatialRelation::Smallest => inst.area as f64,
        SpatialRelation::Largest => -(inst.area as f64),
        _ => f64::NAN,
    }
}

impl Predicate {
    /// Ann ids of every instance the predicate selects.
    pub fn resolve(&self, instances: &[ExprInstance], canvas_w: u32, canvas_h: u32) -> Vec<u64> {
        let candidates: Vec<&ExprInstance> = instances.iter().filter(|i| self.target.matches(i)).collect();
        let selected: Vec<&ExprInstance> = match &self.relation {
            None => candidates,
            Some(RelationPredicate::Pairwise { relation, anchor }) => candidates
                .into_iter()
                .filter(|x| {
                    instances.iter().any(|y| {
                        y.ann_id != x.ann_id
                            && anchor.matches(y)
                            && spatial_relation(&x.bbox, &y.bbox, canvas_w, canvas_h) == Some(*relation)
                    })
                })
                .collect(),
            Some(RelationPredicate::Superlative { relation }) => {
                let best = candidates
                    .iter()
                    .map(|i| superlative_key(*relation, i))
                    .fold(f64::INFINITY, f64::min);
                candidates
                    .into_iter()
                    .filter(|i| superlative_key(*relation, i) == best)
                    .collect()
            }
            Some(RelationPredicate::Frame { relations }) => candidates
                .into_iter()
                .filter(|i| {
                    let held = frame_relations(&i.bbox, canvas_w, canvas_h);
                    relations.iter().all(|r| held.contains(r))
                })
                .collect(),
        };
        selected.iter().map(|i| i.ann_id).collect()
    }

    pub fn render(&self) -> String {
        match &self.relation {
            None => self.target.to_string(),
            Some(RelationPredicate::Pairwise { relation, anchor }) => {
                format!("{} {} {}", self.target, relation.phrase(), anchor)
            }
            Some(RelationPredicate::Superlative { relation }) => {
                let mut words = vec!["the", relation.phrase()];
                words.extend(self.target.attributes.iter().map(String::as_str));
                words.push(&self.target.category);
                words.join(" ")
            }
            Some(RelationPredicate::Frame { relations }) => {
                let place = match relations.as_slice() {
                    [SpatialRelation::FrameLeft] => "on the left side of the image".to_string(),
                    [SpatialRelation::FrameRight] => "on the right side of the image".to_string(),
                    [SpatialRelation::FrameTop] => "at the top of the image".to_string(),
                    [SpatialRelation::FrameBottom] => "at the bottom of the image".to_string(),
                    [SpatialRelation::FrameCenter] => "in the center of the image".to_string(),
                    rels => {
                        let mut rels = rels.to_vec();
                        // vertical word first: "top left"
                        rels.sort_by_key(|r| !matches!(r, SpatialRelation::FrameTop | SpatialRelation::FrameBottom));
                        let words: Vec<&str> = rels.iter().map(|r| r.phrase()).collect();
                        format!("in the {} part of the image", words.join(" "))
                    }
                };
                format!("{} {}", self.target, place)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expression {
    pub text: String,
    #[serde(rename = "type")]
    pub kind: ExpressionType,
    pub target_ann_id: u64,
    /// Same-category instances in the image other than the target.
    pub distractor_count: u32,
    pub predicate: Predicate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExprConfig {
    pub per_type_min: usize,
    pub per_type_max: usize,
    /// Minimum lead of a superlative's winner over the runner-up, as a
    /// fraction of the canvas extent (positions) or of the winner's area (sizes).
    pub superlative_margin: f64,
}

impl Default for ExprConfig {
    fn default() -> Self {
        Self { per_type_min: 3, per_type_max: 6, superlative_margin: 0.05 }
    }
}

/// An image's instances as seen by an expression backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageBundle {
    pub image_id: u64,
    pub width: u32,
    pub height: u32,
    pub instances: Vec<ExprInstance>,
}

impl ImageBundle {
    pub fn distractors(&self, ann_id: u64) -> u32 {
        let Some(target) = self.instances.iter().find(|i| i.ann_id == ann_id) else {
            return 0;
        };
        self.instances.iter().filter(|i| i.category == target.category).count() as u32 - 1
    }

    fn is_unique(&self, p: &Predicate, target: u64) -> bool {
        p.resolve(&self.instances, self.width, self.height) == [target]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExpressionSet {
    pub expressions: Vec<Expression>,
    /// Types that produced fewer than the configured minimum, with their counts.
    pub shortfalls: Vec<(ExpressionType, usize)>,
    /// Backend-level warnings (dropped expressions and the like).
    pub warnings: Vec<String>,
}

/// Non-empty attribute subsets of size one or two, plus the full set.
fn attribute_subsets(attrs: &AttributeSet) -> Vec<Vec<String>> {
    let a = attrs.as_slice();
    let mut out: Vec<Vec<String>> = a.iter().map(|x| vec![x.clone()]).collect();
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            out.push(vec![a[i].clone(), a[j].clone()]);
        }
    }
    if a.len() > 2 {
        out.push(a.to_vec());
    }
    out
}

fn has_margin(bundle: &ImageBundle, target: &ExprInstance, desc: &Descriptor, rel: SpatialRelation, margin: f64) -> bool {
    let mut keys: Vec<f64> = bundle
        .instances
        .iter()
        .filter(|i| desc.matches(i) && i.ann_id != target.ann_id)
        .map(|i| superlative_key(rel, i))
        .collect();
    if keys.is_empty() {
        return false;
    }
    keys.sort_by(f64::total_cmp);
    let lead = keys[0] - superlative_key(rel, target);
    let scale = match rel {
        SpatialRelation::Leftmost | SpatialRelation::Rightmost => bundle.width as f64,
        SpatialRelation::Topmost | SpatialRelation::Bottommost => bundle.height as f64,
        _ => target.area.max(1) as f64,
    };
    lead >= margin * scale
}

/// Relation predicates available to `target` (excluding the target descriptor).
fn relation_candidates(bundle: &ImageBundle, target: &ExprInstance, desc: &Descriptor, cfg: &ExprConfig) -> Vec<RelationPredicate> {
    let mut out = Vec::new();
    for other in &bundle.instances {
        if other.ann_id == target.ann_id {
            continue;
        }
        let Some(relation) = spatial_relation(&target.bbox, &other.bbox, bundle.width, bundle.height) else {
            continue;
        };
        let mut anchors = vec![Descriptor { category: other.category.clone(), attributes: vec![] }];
        anchors.extend(other.attributes.as_slice().iter().map(|a| Descriptor {
            category: other.category.clone(),
            attributes: vec![a.clone()],
        }));
        // Anchors must themselves identify a single instance.
        if let Some(anchor) = anchors
            .into_iter()
            .find(|d| bundle.instances.iter().filter(|i| d.matches(i)).count() == 1)
        {
            out.push(RelationPredicate::Pairwise { relation, anchor });
        }
    }
    use SpatialRelation::*;
    for rel in [Leftmost, Rightmost, Topmost, Bottommost, Largest, Smallest] {
        if has_margin(bundle, target, desc, rel, cfg.superlative_margin) {
            out.push(RelationPredicate::Superlative { relation: rel });
        }
    }
    let frames = frame_relations(&target.bbox, bundle.width, bundle.height);
    for f in &frames {
        out.push(RelationPredicate::Frame { relations: vec![*f] });
    }
    let horizontal = frames.iter().find(|r| matches!(r, FrameLeft | FrameRight));
    let vertical = frames.iter().find(|r| matches!(r, FrameTop | FrameBottom));
    if let (Some(h), Some(v)) = (horizontal, vertical) {
        out.push(RelationPredicate::Frame { relations: vec![*v, *h] });
    }
    out
}

/// Every unique-resolving candidate of one type, with its target.
pub fn candidate_predicates(bundle: &ImageBundle, kind: ExpressionType, cfg: &ExprConfig) -> Vec<(u64, Predicate)> {
    let mut out = Vec::new();
    let mut seen: HashSet<Predicate> = HashSet::new();
    for target in &bundle.instances {
        let descs: Vec<Descriptor> = match kind {
            ExpressionType::Spatial => vec![Descriptor { category: target.category.clone(), attributes: vec![] }],
            ExpressionType::Attribute | ExpressionType::Mixed => attribute_subsets(&target.attributes)
                .into_iter()
                .map(|attributes| Descriptor { category: target.category.clone(), attributes })
                .collect(),
        };
        for desc in descs {
            let preds: Vec<Predicate> = if kind == ExpressionType::Attribute {
                vec![Predicate { target: desc, relation: None }]
            } else {
                relation_candidates(bundle, target, &desc, cfg)
                    .into_iter()
                    .map(|r| Predicate { target: desc.clone(), relation: Some(r) })
                    .collect()
            };
            for p in preds {
                if bundle.is_unique(&p, target.ann_id) && seen.insert(p.clone()) {
                    out.push((target.ann_id, p));
                }
            }
        }
    }
    out
}

/// Picks up to `k` candidates, cycling over targets so one instance does
/// not absorb every expression.
fn pick_round_robin<R: Rng + ?Sized>(mut pool: Vec<(u64, Predicate)>, k: usize, rng: &mut R) -> Vec<(u64, Predicate)> {
    pool.shuffle(rng);
    let mut by_target: BTreeMap<u64, Vec<(u64, Predicate)>> = BTreeMap::new();
    let mut order = Vec::new();
    for c in pool {
        if !by_target.contains_key(&c.0) {
            order.push(c.0);
        }
        by_target.entry(c.0).or_default().push(c);
    }
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let mut progressed = false;
        for t in &order {
            if out.len() == k {
                break;
            }
            if let Some(c) = by_target.get_mut(t).and_then(Vec::pop) {
                out.push(c);
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    out
}

/// Template backend: 3-6 unique-resolving expressions per type.
pub fn generate_expressions<R: Rng + ?Sized>(bundle: &ImageBundle, cfg: &ExprConfig, rng: &mut R) -> ExpressionSet {
    let mut set = ExpressionSet::default();
    for kind in ExpressionType::ALL {
        let k = rng.random_range(cfg.per_type_min..=cfg.per_type_max.max(cfg.per_type_min));
        let pool = candidate_predicates(bundle, kind, cfg);
        let picked = pick_round_robin(pool, k, rng);
        if picked.len() < cfg.per_type_min {
            set.shortfalls.push((kind, picked.len()));
        }
        for (target, predicate) in picked {
            set.expressions.push(Expression {
                text: predicate.render(),
                kind,
                target_ann_id: target,
                distractor_count: bundle.distractors(target),
                predicate,
            });
        }
    }
    set
}

pub trait ExpressionBackend: Send + Sync {
    fn generate(&self, bundle: &ImageBundle, seed: u64) -> Result<ExpressionSet, ExprError>;
}

#[derive(Clone, Debug, Default)]
pub struct TemplateBackend {
    pub config: ExprConfig,
}

impl ExpressionBackend for TemplateBackend {
    fn generate(&self, bundle: &ImageBundle, seed: u64) -> Result<ExpressionSet, ExprError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(generate_expressions(bundle, &self.config, &mut rng))
    }
}

/// Instruction sent to the language-model backend ahead of the ground truth.
pub const LLM_PROMPT: &str = "\
You write referring expressions for objects in a synthetic image. You are given every object's \
id, category, attributes, generation prompt, bounding box [x, y, w, h] in pixels (origin top-left) \
and visible area. Write 3-6 attribute-based, 3-6 spatial and 3-6 mixed expressions. Each must \
refer to exactly one object. Reply with a JSON list of objects with keys ann_id, text, type \
(attribute|spatial|mixed) and predicate, where predicate is {\"target\": {\"category\", \
\"attributes\"}, \"relation\": null | {\"kind\": \"pairwise\", \"relation\", \"anchor\"} | \
{\"kind\": \"superlative\", \"relation\"} | {\"kind\": \"frame\", \"relations\"}}.";

#[derive(Deserialize)]
struct LlmExpression {
    ann_id: u64,
    text: String,
    #[serde(rename = "type")]
    kind: ExpressionType,
    predicate: Option<Predicate>,
}

/// Keeps backend replies whose target exists and whose predicate resolves
/// to exactly that target; everything else becomes a warning.
fn validate_replies(bundle: &ImageBundle, replies: Vec<LlmExpression>) -> ExpressionSet {
    let mut set = ExpressionSet::default();
    for r in replies {
        if !bundle.instances.iter().any(|i| i.ann_id == r.ann_id) {
            set.warnings.push(format!("dropped `{}`: unknown ann_id {}", r.text, r.ann_id));
            continue;
        }
        let Some(predicate) = r.predicate else {
            set.warnings.push(format!("dropped `{}`: no predicate", r.text));
            continue;
        };
        if !bundle.is_unique(&predicate, r.ann_id) {
            set.warnings.push(format!("dropped `{}`: predicate does not single out {}", r.text, r.ann_id));
            continue;
        }
        if r.text.trim().is_empty() {
            set.warnings.push(format!("dropped empty expression for {}", r.ann_id));
            continue;
        }
        set.expressions.push(Expression {
            distractor_count: bundle.distractors(r.ann_id),
            text: r.text,
            kind: r.kind,
            target_ann_id: r.ann_id,
            predicate,
        });
    }
    for w in &set.warnings {
        log::warn!("image {}: {w}", bundle.image_id);
    }
    set
}

/// Posts `{prompt, ground_truth}` as JSON and validates the returned list.
pub struct HttpExpressionBackend {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpExpressionBackend {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, ExprError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ExprError::Config(e.to_string()))?;
        Ok(Self { endpoint: endpoint.into(), client })
    }
}

impl ExpressionBackend for HttpExpressionBackend {
    fn generate(&self, bundle: &ImageBundle, _seed: u64) -> Result<ExpressionSet, ExprError> {
        let body = serde_json::json!({ "prompt": LLM_PROMPT, "ground_truth": bundle });
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .map_err(|e| ExprError::Unreachable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(ExprError::Status(resp.status().as_u16()));
        }
        let text = resp.text().map_err(|e| ExprError::Unreachable(e.to_string()))?;
        let replies: Vec<LlmExpression> = serde_json::from_str(&text).map_err(|e| ExprError::Malformed(e.to_string()))?;
        Ok(validate_replies(bundle, replies))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExprBackendKind {
    #[default]
    Template,
    Http,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExprBackendConfig {
    pub backend: ExprBackendKind,
    pub endpoint: Option<String>,
    pub timeout_secs: u64,
    #[serde(flatten)]
    pub template: ExprConfig,
}

impl Default for ExprBackendConfig {
    fn default() -> Self {
        Self {
            backend: ExprBackendKind::Template,
            endpoint: None,
            timeout_secs: 120,
            template: ExprConfig::default(),
        }
    }
}

impl ExprBackendConfig {
    pub fn build(&self) -> Result<Box<dyn ExpressionBackend>, ExprError> {
        match self.backend {
            ExprBackendKind::Template => Ok(Box::new(TemplateBackend { config: self.template.clone() })),
            ExprBackendKind::Http => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| ExprError::Config("http backend needs an endpoint".into()))?;
                Ok(Box::new(HttpExpressionBackend::new(endpoint, Duration::from_secs(self.timeout_secs))?))
            }
        }
    }
}
