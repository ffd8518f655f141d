#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use segforge::demo::{write_demo_library, DemoSpec};
use segforge::oracle::OracleInstance;
use segforge::annotate::CocoDataset;
use segforge::pipeline::{DatasetMode, LibraryConfig, PipelineConfig};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Procedural library under `dir/library` and a config writing to `dir/out`.
pub fn demo_config(dir: &Path, mode: DatasetMode, num_images: u64, canvas: u32) -> PipelineConfig {
    let lib = write_demo_library(&dir.join("library"), &DemoSpec::default()).expect("demo library");
    let mut config = PipelineConfig {
        global_seed: 99,
        num_images,
        mode,
        library: LibraryConfig { manifest: Some(lib.manifest), ..Default::default() },
        output_dir: dir.join("out"),
        workers: 1,
        ..Default::default()
    };
    config.layout.canvas_w = canvas;
    config.layout.canvas_h = canvas;
    config
}

/// Annotations grouped by image, in the shape the relation oracle expects.
pub fn oracle_instances(ds: &CocoDataset) -> BTreeMap<u64, Vec<OracleInstance>> {
    let names: BTreeMap<u64, &str> = ds.categories.iter().map(|c| (c.id, c.name.as_str())).collect();
    let mut out: BTreeMap<u64, Vec<OracleInstance>> = ds.images.iter().map(|i| (i.id, Vec::new())).collect();
    for a in &ds.annotations {
        out.entry(a.image_id).or_default().push(OracleInstance {
            ann_id: a.id,
            category: names[&a.category_id].to_string(),
            attributes: a.attributes.clone(),
            bbox: a.bbox,
            area: a.area,
        });
    }
    out
}
