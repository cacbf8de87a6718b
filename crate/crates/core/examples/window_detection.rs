//! Tiles a large image into the dynamic image pyramid, assigns object sizes to
//! layers, and merges overlapping detections coming from different windows.
//!
//! cargo run --release --example window_detection -- [width] [height]

use cascade_sgg::detection::{build_dip, export_detections, merge_window_detections, Detection};
use cascade_sgg::geometry::{BoxMode, OrientedBox, RotatedRect};
use cascade_sgg::model::CategoryVocabulary;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let width: u32 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(6000);
    let height: u32 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(4000);
    let dip = build_dip(width, height, 4, 1024)?;
    let windows = dip.windows();
    for l in &dip.layers {
        let n = windows.iter().filter(|w| w.layer == l.index).count();
        let hi = l.size_hi.map_or("inf".to_string(), |h| h.to_string());
        println!("layer {}: {}x{} (1/{}) owns [{}, {hi}) in {n} windows", l.index, l.width, l.height, l.scale, l.size_lo);
    }
    for size in [12.0, 40.0, 100.0, 900.0] {
        println!("object of size {size} -> layer {}", dip.layer_for_size(size));
    }

    // The same ship seen by two neighbouring windows (once mislabelled as a
    // dock), plus a second ship moored alongside.
    let vocab = CategoryVocabulary::toy();
    let class = |name| vocab.object_index(name).ok_or_else(|| anyhow::anyhow!("no class {name}"));
    let (ship_class, dock_class) = (class("ship")?, class("dock")?);
    let ship = |dx: f64, angle: f64| OrientedBox::from_rotated_rect(RotatedRect { cx: 1020.0 + dx, cy: 500.0, width: 90.0, height: 16.0, angle });
    let dets = vec![
        Detection { id: 0, bbox: ship(0.0, 0.40)?, class_index: ship_class, confidence: 0.91, window: 0 },
        Detection { id: 1, bbox: ship(3.0, 0.42)?, class_index: ship_class, confidence: 0.84, window: 1 },
        Detection { id: 2, bbox: ship(0.0, 0.40)?, class_index: dock_class, confidence: 0.30, window: 1 },
        Detection { id: 3, bbox: ship(0.0, 0.40)?.translated(0.0, 40.0), class_index: ship_class, confidence: 0.77, window: 1 },
    ];
    let kept = merge_window_detections(&dets, 0.5, BoxMode::Obb);
    println!("{} detections -> {} after rotated NMS", dets.len(), kept.len());
    print!("{}", export_detections(&kept, &vocab));
    Ok(())
}
