//! Generates referring expressions for a hand-built scene and checks each
//! against the independent relation oracle.
//!
//!     cargo run --example referring_expressions

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use segforge::oracle::{relation_oracle, OracleInstance};
use segforge::refexpr::{generate_expressions, AttributeSet, ExprConfig, ExprInstance, ImageBundle};
use segforge::BBox;

fn inst(ann_id: u64, category: &str, attrs: &[&str], x: u32, y: u32, side: u32) -> ExprInstance {
    ExprInstance {
        ann_id,
        category: category.into(),
        attributes: AttributeSet::new(attrs.iter().copied()),
        bbox: BBox { x, y, w: side, h: side },
        area: u64::from(side * side),
        prompt: String::new(),
    }
}

fn main() {
    let bundle = ImageBundle {
        image_id: 1,
        width: 200,
        height: 200,
        instances: vec![
            inst(1, "apple", &["red"], 10, 90, 20),
            inst(2, "apple", &["green"], 150, 20, 30),
            inst(3, "cup", &["blue", "striped"], 90, 140, 50),
            inst(4, "apple", &["red", "dotted"], 160, 160, 16),
        ],
    };
    let set = generate_expressions(&bundle, &ExprConfig::default(), &mut ChaCha8Rng::seed_from_u64(5));
    let oracle: Vec<OracleInstance> = bundle
        .instances
        .iter()
        .map(|i| OracleInstance {
            ann_id: i.ann_id,
            category: i.category.clone(),
            attributes: i.attributes.as_slice().to_vec(),
            bbox: i.bbox,
            area: i.area,
        })
        .collect();
    for e in &set.expressions {
        let matched = relation_oracle(&e.predicate, &oracle, bundle.width, bundle.height);
        assert_eq!(matched.into_iter().collect::<Vec<_>>(), vec![e.target_ann_id]);
        println!("{:<9} -> {}  {:?}  ({} distractors)", format!("{:?}", e.kind), e.target_ann_id, e.text, e.distractor_count);
    }
    if !set.shortfalls.is_empty() {
        println!("shortfalls: {:?}", set.shortfalls);
    }
}
