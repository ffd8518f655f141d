//! Brute-force reference implementations.
//!
//! These are deliberately naive per-pixel and per-instance scans that do not
//! call into the production compositor, layout sampler or expression
//! evaluator. Tests and `validate` compare the fast paths against them.

use std::collections::{BTreeSet, HashMap};

use crate::layout::LayoutSpec;
use crate::mask::{BBox, Mask};
use crate::refexpr::{Predicate, RelationPredicate, SpatialRelation};

/// Canvas-sized visible masks by "topmost owner wins": every pixel goes to
/// the highest-z instance (last in `originals`) whose original mask covers it.
pub fn brute_force_visible_masks(originals: &[Mask]) -> Vec<Mask> {
    let Some(first) = originals.first() else {
        return Vec::new();
    };
    let (w, h) = (first.width(), first.height());
    let mut out: Vec<Mask> = originals.iter().map(|_| Mask::new(w, h)).collect();
    for y in 0..h {
        for x in 0..w {
            let mut owner = None;
            for (i, m) in originals.iter().enumerate() {
                if m.get(x, y) {
                    owner = Some(i);
                }
            }
            if let Some(i) = owner {
                out[i].set(x, y, true);
            }
        }
    }
    out
}

/// Canvas-sized mask of one placement, by inverse-mapping every canvas pixel
/// into the source mask.
pub fn rasterize_reference(mask: &Mask, scale: f64, center: (f64, f64), canvas: (u32, u32)) -> Mask {
    let (w, h) = (mask.width(), mask.height());
    let sw = ((w as f64 * scale).round() as i64).max(1);
    let sh = ((h as f64 * scale).round() as i64).max(1);
    let left = (center.0 - sw as f64 / 2.0).floor() as i64;
    let top = (center.1 - sh as f64 / 2.0).floor() as i64;
    Mask::from_fn(canvas.0, canvas.1, |x, y| {
        let u = x as i64 - left;
        let v = y as i64 - top;
        if u < 0 || v < 0 || u >= sw || v >= sh {
            return false;
        }
        let sx = (((u as f64 + 0.5) * w as f64 / sw as f64).floor() as u32).min(w - 1);
        let sy = (((v as f64 + 0.5) * h as f64 / sh as f64).floor() as u32).min(h - 1);
        mask.get(sx, sy)
    })
}

/// Fraction of each placement's on-canvas pixels hidden by higher-z
/// placements, index-aligned with `layout.placements`.
pub fn check_overlap_constraint(layout: &LayoutSpec, masks: &HashMap<String, Mask>) -> Vec<f64> {
    let canvas = (layout.canvas_w, layout.canvas_h);
    let mut order: Vec<usize> = (0..layout.placements.len()).collect();
    order.sort_by_key(|&i| layout.placements[i].z);
    let originals: Vec<Mask> = order
        .iter()
        .map(|&i| {
            let p = &layout.placements[i];
            let m = &masks[&p.segment_id];
            rasterize_reference(m, p.scale, (p.center_x, p.center_y), canvas)
        })
        .collect();
    let visible = brute_force_visible_masks(&originals);
    let mut out = vec![0.0; layout.placements.len()];
    for (k, &i) in order.iter().enumerate() {
        let area = originals[k].count();
        out[i] = if area == 0 {
            0.0
        } else {
            (area - visible[k].count()) as f64 / area as f64
        };
    }
    out
}

/// One annotated instance as the relation oracle sees it.
#[derive(Clone, Debug)]
pub struct OracleInstance {
    pub ann_id: u64,
    pub category: String,
    pub attributes: Vec<String>,
    pub bbox: BBox,
    pub area: u64,
}

fn cx(b: &BBox) -> f64 {
    b.x as f64 + b.w as f64 / 2.0
}

fn cy(b: &BBox) -> f64 {
    b.y as f64 + b.h as f64 / 2.0
}

fn pair_holds(rel: SpatialRelation, a: &BBox, b: &BBox, w: u32, h: u32) -> bool {
    let dx = cx(b) - cx(a);
    let dy = cy(b) - cy(a);
    let horizontal = dx.abs() >= dy.abs();
    let hgap = dx.abs() >= 0.1 * w as f64 && dx != 0.0;
    let vgap = dy.abs() >= 0.1 * h as f64;
    match rel {
        SpatialRelation::LeftOf => horizontal && hgap && dx > 0.0,
        SpatialRelation::RightOf => horizontal && hgap && dx < 0.0,
        SpatialRelation::Above => !horizontal && vgap && dy > 0.0,
        SpatialRelation::Below => !horizontal && vgap && dy < 0.0,
        _ => false,
    }
}

fn frame_holds(rel: SpatialRelation, b: &BBox, w: u32, h: u32) -> bool {
    let (x, y) = (cx(b), cy(b));
    let (w, h) = (w as f64, h as f64);
    match rel {
        SpatialRelation::FrameLeft => x < 0.45 * w,
        SpatialRelation::FrameRight => x > 0.55 * w,
        SpatialRelation::FrameTop => y < 0.45 * h,
        SpatialRelation::FrameBottom => y > 0.55 * h,
        SpatialRelation::FrameCenter => x >= w / 3.0 && x <= 2.0 * w / 3.0 && y >= h / 3.0 && y <= 2.0 * h / 3.0,
        _ => false,
    }
}

fn describes(category: &str, attributes: &[String], inst: &OracleInstance) -> bool {
    inst.category == category && attributes.iter().all(|a| inst.attributes.iter().any(|b| b == a))
}

/// Every instance the predicate selects, by exhaustive evaluation.
pub fn relation_oracle(predicate: &Predicate, instances: &[OracleInstance], canvas_w: u32, canvas_h: u32) -> BTreeSet<u64> {
    let t = &predicate.target;
    let mut out = BTreeSet::new();
    for x in instances {
        if !describes(&t.category, &t.attributes, x) {
            continue;
        }
        let ok = match &predicate.relation {
            None => true,
            Some(RelationPredicate::Pairwise { relation, anchor }) => instances.iter().any(|y| {
                y.ann_id != x.ann_id
                    && describes(&anchor.category, &anchor.attributes, y)
                    && pair_holds(*relation, &x.bbox, &y.bbox, canvas_w, canvas_h)
            }),
            Some(RelationPredicate::Superlative { relation }) => instances
                .iter()
                .filter(|y| describes(&t.category, &t.attributes, y))
                .all(|y| match relation {
                    SpatialRelation::Leftmost => cx(&x.bbox) <= cx(&y.bbox),
                    SpatialRelation::Rightmost => cx(&x.bbox) >= cx(&y.bbox),
                    SpatialRelation::Topmost => cy(&x.bbox) <= cy(&y.bbox),
                    SpatialRelation::Bottommost => cy(&x.bbox) >= cy(&y.bbox),
                    SpatialRelation::Largest => x.area >= y.area,
                    SpatialRelation::Smallest => x.area <= y.area,
                    _ => false,
                }),
            Some(RelationPredicate::Frame { relations }) => {
                relations.iter().all(|r| frame_holds(*r, &x.bbox, canvas_w, canvas_h))
            }
        };
        if ok {
            out.insert(x.ann_id);
        }
    }
    out
}
