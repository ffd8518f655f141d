//! Encodes masks as COCO RLE, builds a two-image dataset, writes it and
//! validates it.
//!
//!     cargo run --example annotate_coco [out_dir]

use std::path::PathBuf;

use segforge::annotate::{decode_rle, emit_coco, encode_rle, validate_annotations, CocoImage, DatasetBuilder, InstanceDraft};
use segforge::layout::SizeBin;
use segforge::library::SegmentSource;
use segforge::Mask;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("segforge-annotate"));
    std::fs::create_dir_all(&out)?;

    let disc = Mask::from_fn(8, 6, |x, y| (x as i32 - 3).pow(2) + (y as i32 - 3).pow(2) <= 4);
    let rle = encode_rle(&disc);
    println!("size {:?}, counts {:?}", rle.size, rle.counts);
    assert_eq!(decode_rle(&rle)?, disc);

    let mut builder = DatasetBuilder::new();
    for image_id in 1..=2u64 {
        let left = Mask::from_fn(64, 48, |x, y| x < 20 && y > 10 && y < 40);
        let right = Mask::from_fn(64, 48, |x, y| x >= 30 && (x + y) % 7 != 0);
        let drafts = vec![
            InstanceDraft::from_mask("box", &left, "box", vec!["red".into()], SizeBin::Small, "box-0001", SegmentSource::Synthetic, false)?,
            InstanceDraft::from_mask("kite", &right, "striped kite", vec!["striped".into()], SizeBin::Medium, "kite-0003", SegmentSource::Synthetic, false)?,
        ];
        let file_name = format!("{image_id:012}.png");
        let ids = builder.add_image(CocoImage { id: image_id, file_name, width: 64, height: 48, num_objects: 2, seed: 0 }, drafts)?;
        println!("image {image_id}: annotation ids {ids:?}");
    }
    let path = emit_coco(&builder.finish(), &out)?;
    let report = validate_annotations(&out)?;
    println!("{}: {} annotations, {} violations", path.display(), report.annotations, report.violations.len());
    Ok(())
}
