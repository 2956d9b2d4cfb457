use std::time::Instant;

use psfr_autograd::{Graph, Mode, Tensor};
use psfr_core::parsing::{fpn_loss, Fpn, FpnConfig};
use psfr_core::pipeline::Dataset;
use rand::SeedableRng;

fn main() {
    let ds = Dataset::synthetic(16, 7).unwrap().prepare(64).unwrap();
    let t = Instant::now();
    for s in 0..5 {
        ds.batch::<f32>(1, s, 8).unwrap();
    }
    println!("batch {:.3}s", t.elapsed().as_secs_f64() / 5.0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let fpn = Fpn::<f32>::new(FpnConfig::toy(), &mut rng).unwrap();
    let b = ds.batch::<f32>(1, 0, 8).unwrap();
    for _ in 0..3 {
        let t = Instant::now();
        let mut g = Graph::new();
        let p = fpn.bind(&mut g, Mode::Train, true);
        let x = g.input(b.lq.clone());
        let out = fpn.forward(&mut g, &p, x).unwrap();
        let gt = g.input(b.hq.clone());
        let loss = fpn_loss(&mut g, out.logits, out.restored, &b.labels, gt).unwrap();
        let f = t.elapsed().as_secs_f64();
        let _ = g.backward(loss.total).unwrap();
        println!("fwd {:.3}s total {:.3}s", f, t.elapsed().as_secs_f64());
    }
    let x = Tensor::<f32>::zeros(&[8, 32, 64, 64]);
    let w = Tensor::<f32>::zeros(&[16, 32, 3, 3]);
    let t = Instant::now();
    for _ in 0..5 {
        psfr_autograd::conv::forward(&x, &w, None, 1, 1);
    }
    let dt = t.elapsed().as_secs_f64() / 5.0;
    println!("conv 32->16 @64 b8: {:.4}s = {:.1} GFLOP/s", dt, 2.0 * 8.0 * 4096.0 * 16.0 * 288.0 / dt / 1e9);
}
