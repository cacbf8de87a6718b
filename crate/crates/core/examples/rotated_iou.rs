//! Rotated IoU against the horizontal-box approximation for a few footprints,
//! including the shifted unit squares whose IoU is exactly 1/3.
//!
//! cargo run --release --example rotated_iou

use std::f64::consts::PI;

use cascade_sgg::geometry::{box_iou, boundary_gap, BoxMode, OrientedBox, RotatedRect};

fn rect(cx: f64, cy: f64, width: f64, height: f64, angle: f64) -> anyhow::Result<OrientedBox> {
    Ok(OrientedBox::from_rotated_rect(RotatedRect { cx, cy, width, height, angle })?)
}

fn main() -> anyhow::Result<()> {
    let cases = [
        ("shifted squares", OrientedBox::axis_aligned(0.0, 0.0, 1.0, 1.0)?, OrientedBox::axis_aligned(0.5, 0.0, 1.5, 1.0)?),
        ("ship vs rotated copy", rect(50.0, 50.0, 80.0, 12.0, 0.0)?, rect(50.0, 50.0, 80.0, 12.0, PI / 12.0)?),
        ("moored side by side", rect(50.0, 50.0, 80.0, 12.0, PI / 4.0)?, rect(60.0, 40.0, 80.0, 12.0, PI / 4.0)?),
        ("crossing runways", rect(0.0, 0.0, 300.0, 20.0, 0.3)?, rect(0.0, 0.0, 300.0, 20.0, -1.2)?),
        ("disjoint", rect(0.0, 0.0, 10.0, 10.0, 0.0)?, rect(30.0, 0.0, 10.0, 10.0, 0.5)?),
    ];
    println!("{:<22} {:>8} {:>8} {:>8}", "case", "obb", "hbb", "gap");
    for (name, a, b) in cases {
        let obb = box_iou(&a, &b, BoxMode::Obb)?;
        let hbb = box_iou(&a, &b, BoxMode::Hbb)?;
        println!("{name:<22} {obb:>8.4} {hbb:>8.4} {:>8.2}", boundary_gap(&a, &b));
    }
    Ok(())
}
