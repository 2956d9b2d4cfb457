use std::time::Instant;

use psfr_core::parsing::pixel_accuracy;
use psfr_core::pipeline::{Dataset, FpnTrainer, PipelineConfig, PsfrTrainer};

fn main() {
    let what = std::env::args().nth(1).unwrap_or_default();
    let steps: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let mut cfg = PipelineConfig::toy();
    cfg.train.max_steps = steps;
    if what == "fpn" {
        let ds = Dataset::synthetic(16, 7).unwrap().prepare(64).unwrap();
        let mut tr = FpnTrainer::<f32>::new(cfg).unwrap();
        let t = Instant::now();
        for s in 0..steps {
            let l = tr.step(&ds).unwrap();
            if s % 50 == 0 || s + 1 == steps {
                println!("{s} {:.4} {:.4} {:.1}s", l.l_parse, l.l_pix, t.elapsed().as_secs_f64());
            }
        }
        let mut acc = 0.0;
        for i in 0..ds.len() {
            let p = psfr_core::degrade::sample_params(1000 + i as u64);
            let lq = ds.degraded(i, &p).unwrap();
            let x = psfr_core::imaging::images_to_tensor::<f32>(&[lq]).unwrap();
            let pred = tr.fpn().parse(&x).unwrap();
            acc += pixel_accuracy(&pred, ds.labels(i)).unwrap();
        }
        println!("acc {:.4}", acc / ds.len() as f64);
    } else {
        let ds = Dataset::synthetic(8, 7).unwrap().prepare(64).unwrap();
        let mut tr = PsfrTrainer::<f32>::new(cfg, None).unwrap();
        let t = Instant::now();
        for s in 0..steps {
            let l = tr.step(&ds).unwrap();
            if s % 50 == 0 || s + 1 == steps {
                println!("{s} ss {:.5} rec {:.4} g {:.3} d {:.3} {:.1}s", l.l_ss, l.l_rec, l.l_g, l.l_d, t.elapsed().as_secs_f64());
            }
        }
        let mut total = 0.0;
        for i in 0..ds.len() {
            let p = psfr_core::degrade::sample_params(1000 + i as u64);
            let lq = ds.degraded(i, &p).unwrap();
            let x = psfr_core::imaging::images_to_tensor::<f32>(&[lq]).unwrap();
            let out = tr.generator().generate(&x, ds.labels(i)).unwrap();
            let img = psfr_core::imaging::tensor_to_images(&out).remove(0);
            total += psfr_core::metrics::psnr(&img, ds.hq(i)).unwrap();
        }
        println!("psnr {:.2}", total / ds.len() as f64);
    }
}
