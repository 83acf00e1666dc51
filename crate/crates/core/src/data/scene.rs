use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Image;

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [0; 3].map(|_| rng.gen_range(20.0..200.0))
}

/// Deterministic synthetic "clean" picture: a tilted two-color gradient
/// with a faint sinusoidal texture and a few flat rectangles and discs.
pub fn clean_scene(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c0, c1) = (color(&mut rng), color(&mut rng));
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (ux, uy) = (phi.cos(), phi.sin());
    let freq: f64 = rng.gen_range(0.2..0.6);
    let amp: f64 = rng.gen_range(4.0..12.0);

    enum Shape {
        Rect(f64, f64, f64, f64),
        Disc(f64, f64, f64),
    }
    let (wf, hf) = (width as f64, height as f64);
    let shapes: Vec<(Shape, [f64; 3])> = (0..rng.gen_range(2..=4))
        .map(|_| {
            let shape = if rng.gen_bool(0.5) {
                let x0 = rng.gen_range(0.0..wf);
                let y0 = rng.gen_range(0.0..hf);
                let sw = rng.gen_range(0.15..0.5) * wf;
                let sh = rng.gen_range(0.15..0.5) * hf;
                Shape::Rect(x0, y0, x0 + sw, y0 + sh)
            } else {
                let r = rng.gen_range(0.1..0.3) * wf.min(hf);
                Shape::Disc(rng.gen_range(0.0..wf), rng.gen_range(0.0..hf), r)
            };
            (shape, color(&mut rng))
        })
        .collect();

    let mut data = Vec::with_capacity(width * height * 3);
    let diag = (wf * wf + hf * hf).sqrt();
    for y in 0..height {
        for x in 0..width {
            let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = (((xf - wf / 2.0) * ux + (yf - hf / 2.0) * uy) / diag + 0.5).clamp(0.0, 1.0);
            let tex = amp * (freq * (xf * uy - yf * ux)).sin();
            let mut px = [0; 3].map(|_| 0.0);
            for c in 0..3 {
                px[c] = c0[c] * (1.0 - t) + c1[c] * t + tex;
            }
            for (shape, col) in &shapes {
                let inside = match *shape {
                    Shape::Rect(x0, y0, x1, y1) => xf >= x0 && xf < x1 && yf >= y0 && yf < y1,
                    Shape::Disc(cx, cy, r) => (xf - cx).powi(2) + (yf - cy).powi(2) <= r * r,
                };
                if inside {
                    px = *col;
                }
            }
            data.extend(px.iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
        }
    }
    Image::new(width, height, data).expect("nonempty scene")
}
