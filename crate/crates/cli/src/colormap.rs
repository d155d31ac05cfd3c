//! Fixed turbo-like colormap for depth visualisation.
//!
//! Each channel is a degree-5 polynomial in `x ∈ [0, 1]`; depth is mapped to
//! `x = 1 − encode(depth)` with the run's depth encoding, so near is red
//! and far is blue. Output bytes depend only on the depth values.

use grin_core::data::{DepthMap, Image};
use grin_core::depth::DepthRange;

const R: [f64; 6] = [0.13572138, 4.61539260, -42.66032258, 132.13108234, -152.94239396, 59.28637943];
const G: [f64; 6] = [0.09140261, 2.19418839, 4.84296658, -14.18503333, 4.27729857, 2.82956604];
const B: [f64; 6] = [0.10667330, 12.64194608, -60.58204836, 110.36276771, -89.90310912, 27.34824973];

fn poly(c: &[f64; 6], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

pub fn turbo(x: f64) -> [f64; 3] {
    let x = x.clamp(0.0, 1.0);
    [poly(&R, x), poly(&G, x), poly(&B, x)].map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

pub fn colorize(depth: &DepthMap, range: &DepthRange) -> Image {
    let mut img = Image::filled(depth.width, depth.height, 0.0);
    for v in 0..depth.height {
        for u in 0..depth.width {
            let d = depth.get(u, v);
            let rgb = if d > 0.0 { turbo(1.0 - range.encode_clamped(d).0) } else { [0.0; 3] };
            img.set_pixel(u, v, rgb);
        }
    }
    img
}
