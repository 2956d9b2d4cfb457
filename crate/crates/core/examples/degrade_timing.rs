use std::time::Instant;

use psfr_core::degrade::{degrade, sample_params};
use psfr_core::imaging::Image8;

fn main() {
    let mut img = Image8::filled(512, 512, [0, 0, 0]);
    for y in 0..512 {
        for x in 0..512 {
            img.put(x, y, [(x / 2) as u8, (y / 2) as u8, ((x ^ y) & 255) as u8]);
        }
    }
    let t = Instant::now();
    let n = 200;
    for seed in 0..n {
        let p = sample_params(seed);
        let t0 = Instant::now();
        degrade(&img, &p).unwrap();
        if seed < 12 {
            println!("{:?} {} {:.1} ms", p.blur_kind, p.blur_size, t0.elapsed().as_secs_f64() * 1e3);
        }
    }
    println!("mean {:.1} ms", t.elapsed().as_secs_f64() * 1e3 / n as f64);
}
