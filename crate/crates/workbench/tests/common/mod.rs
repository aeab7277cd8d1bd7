#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use defgrid_core::grid::Point;
use defgrid_core::tracer::rasterize_polygon;
use defgrid_workbench::io::{encode_mask_png, encode_pgm8, encode_png_rgb};

pub const SIZE: usize = 40;

/// Three flat regions: a left band, a right band, and a lower-left block.
pub fn region_of(x: usize, y: usize) -> u8 {
    if x >= 17 {
        1
    } else if y >= 26 && x < 9 {
        2
    } else {
        0
    }
}

pub fn regions_png() -> Vec<u8> {
    let colours = [[30u8, 40, 200], [220, 180, 20], [20, 160, 60]];
    let rgb: Vec<u8> = (0..SIZE * SIZE).flat_map(|i| colours[region_of(i % SIZE, i / SIZE) as usize]).collect();
    encode_png_rgb(SIZE, SIZE, &rgb)
}

pub fn regions_gt_pgm() -> Vec<u8> {
    let labels: Vec<u8> = (0..SIZE * SIZE).map(|i| region_of(i % SIZE, i / SIZE)).collect();
    encode_pgm8(SIZE, SIZE, &labels)
}

pub fn object_polygon() -> Vec<Point> {
    vec![Point::new(9.3, 7.8), Point::new(31.6, 10.2), Point::new(28.4, 31.7), Point::new(11.2, 27.5)]
}

/// A quadrilateral object on a textured background.
pub fn object_png() -> Vec<u8> {
    let mask = rasterize_polygon(&object_polygon(), SIZE, SIZE).unwrap();
    let rgb: Vec<u8> = (0..SIZE * SIZE)
        .flat_map(|i| {
            if mask.data()[i] {
                [230, 90, 40]
            } else {
                [40 + (i % 7) as u8, 60, 90]
            }
        })
        .collect();
    encode_png_rgb(SIZE, SIZE, &rgb)
}

pub fn object_mask_png() -> Vec<u8> {
    encode_mask_png(&rasterize_polygon(&object_polygon(), SIZE, SIZE).unwrap())
}

pub fn seeds_json() -> String {
    serde_json::to_string(&object_polygon()).unwrap()
}

pub fn defgrid(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_defgrid")).args(args).current_dir(cwd).output().expect("run defgrid")
}

pub fn write_fixtures(dir: &Path) {
    std::fs::write(dir.join("regions.png"), regions_png()).unwrap();
    std::fs::write(dir.join("regions_gt.pgm"), regions_gt_pgm()).unwrap();
    std::fs::write(dir.join("object.png"), object_png()).unwrap();
    std::fs::write(dir.join("object_mask.png"), object_mask_png()).unwrap();
    std::fs::write(dir.join("seeds.json"), seeds_json()).unwrap();
}
