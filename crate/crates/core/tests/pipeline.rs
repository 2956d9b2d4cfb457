use psfr_core::discriminator::DiscConfig;
use psfr_core::generator::{GenConfig, OutActivation};
use psfr_core::imaging::Image8;
use psfr_core::parsing::FpnConfig;
use psfr_core::pipeline::*;

fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::toy();
    cfg.train.resolution = 64;
    cfg.train.batch_psfr = 2;
    cfg.train.batch_fpn = 2;
    cfg.fpn = FpnConfig { in_resolution: 64, base_channels: 8, max_channels: 16, num_down: 1, num_resblocks: 1, num_up: 1, ..FpnConfig::toy() };
    cfg.generator = GenConfig {
        base_resolution: 16,
        num_blocks: 3,
        channel_schedule: vec![16, 16, 8],
        const_channels: 16,
        style_hidden: 8,
        out_activation: OutActivation::Tanh,
    };
    cfg.discriminator = DiscConfig { base_channels: 8, max_channels: 32 };
    cfg
}

fn data(n: usize, res: usize) -> PreparedDataset {
    Dataset::synthetic(n, 3).unwrap().prepare(res).unwrap()
}

fn window_means(xs: &[f64], w: usize) -> Vec<f64> {
    xs.chunks(w).filter(|c| c.len() == w).map(|c| c.iter().sum::<f64>() / w as f64).collect()
}

#[test]
fn config_roundtrip_and_mismatch_detection() {
    let cfg = small_config();
    cfg.validate().unwrap();
    assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    let mut bad = cfg.clone();
    bad.fpn.in_resolution = 128;
    assert!(bad.validate().is_err());
    let mut bad = cfg.clone();
    bad.train.resolution = 48;
    assert!(bad.validate().is_err());
    let mut small = cfg;
    small.train.resolution = 32;
    small.fpn.in_resolution = 32;
    small.generator.base_resolution = 8;
    assert!(small.validate().is_err());
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ds = data(2, 64);
    let mut tr = PsfrTrainer::<f32>::new(small_config(), None).unwrap();
    tr.step(&ds).unwrap();
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    tr.checkpoint().save(&a).unwrap();
    let loaded = Checkpoint::<f32>::load(&a).unwrap();
    loaded.save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let rebuilt = PsfrTrainer::<f32>::from_checkpoint(&loaded, None).unwrap();
    assert_eq!(rebuilt.checkpoint().to_bytes(), loaded.to_bytes());
    assert!(Checkpoint::<f64>::load(&a).is_err());
    assert!(FpnTrainer::<f32>::from_checkpoint(&loaded).is_err());
}

#[test]
fn resumed_psfr_training_replays_the_unbroken_run() {
    let ds = data(3, 64);
    let mut full = PsfrTrainer::<f32>::new(small_config(), None).unwrap();
    let unbroken: Vec<PsfrStepLog> = (0..6).map(|_| full.step(&ds).unwrap()).collect();

    let mut first = PsfrTrainer::<f32>::new(small_config(), None).unwrap();
    let mut logs: Vec<PsfrStepLog> = (0..3).map(|_| first.step(&ds).unwrap()).collect();
    let bytes = first.checkpoint().to_bytes();
    drop(first);
    let mut resumed = PsfrTrainer::<f32>::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), None).unwrap();
    assert_eq!(resumed.steps_done(), 3);
    logs.extend((0..3).map(|_| resumed.step(&ds).unwrap()));
    assert_eq!(logs, unbroken);
    assert_eq!(resumed.checkpoint().to_bytes(), full.checkpoint().to_bytes());
}

#[test]
fn resumed_fpn_training_replays_the_unbroken_run() {
    let ds = data(3, 64);
    let mut full = FpnTrainer::<f32>::new(small_config()).unwrap();
    let unbroken: Vec<FpnStepLog> = (0..5).map(|_| full.step(&ds).unwrap()).collect();
    let mut first = FpnTrainer::<f32>::new(small_config()).unwrap();
    let mut logs: Vec<FpnStepLog> = (0..2).map(|_| first.step(&ds).unwrap()).collect();
    let ckpt = Checkpoint::from_bytes(&first.checkpoint().to_bytes()).unwrap();
    let mut resumed = FpnTrainer::<f32>::from_checkpoint(&ckpt).unwrap();
    logs.extend((0..3).map(|_| resumed.step(&ds).unwrap()));
    assert_eq!(logs, unbroken);
}

#[test]
fn run_writes_csv_and_appends_on_resume() {
    let dir = tempfile::tempdir().unwrap();
    let ds = data(2, 64);
    let mut cfg = small_config();
    cfg.train.max_steps = 2;
    let opts = RunOptions { checkpoint: Some(dir.path().join("p.ckpt")), log: Some(dir.path().join("p.csv")) };
    let mut tr = PsfrTrainer::<f32>::new(cfg, None).unwrap();
    tr.run(&ds, &opts).unwrap();
    let ckpt = Checkpoint::<f32>::load(opts.checkpoint.as_ref().unwrap()).unwrap();
    assert_eq!(ckpt.step, 2);
    let mut more = PsfrTrainer::<f32>::from_checkpoint(&ckpt, None).unwrap();
    let mut cfg = more.config().clone();
    cfg.train.max_steps = 3;
    let mut ckpt = ckpt;
    ckpt.config = cfg.to_toml();
    more = PsfrTrainer::<f32>::from_checkpoint(&ckpt, None).unwrap();
    more.run(&ds, &opts).unwrap();
    let csv = std::fs::read_to_string(opts.log.as_ref().unwrap()).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,l_ss,l_rec,l_g,l_d,total");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("2,"));
}

#[test]
fn fpn_overfits_one_image() {
    let ds = data(1, 64);
    let mut cfg = small_config();
    cfg.train.batch_fpn = 1;
    let mut tr = FpnTrainer::<f32>::new(cfg).unwrap();
    let losses: Vec<f64> = (0..200).map(|_| tr.step(&ds).unwrap().total).collect();
    let w = window_means(&losses, 20);
    assert!(w[w.len() - 1] < 0.5 * w[0], "windows {w:?}");
}

#[test]
fn pure_reconstruction_objective_decreases() {
    let ds = data(2, 64);
    let mut cfg = small_config();
    cfg.train.weights.lambda_ss = 0.0;
    cfg.train.weights.lambda_adv = 0.0;
    let mut tr = PsfrTrainer::<f32>::new(cfg, None).unwrap();
    let losses: Vec<f64> = (0..300).map(|_| tr.step(&ds).unwrap().l_rec).collect();
    let w = window_means(&losses, 100);
    assert!(w.windows(2).all(|p| p[1] < p[0]), "windows {w:?}");
}

#[test]
fn discriminator_updates_before_generator() {
    let ds = data(2, 64);
    let mut tr = PsfrTrainer::<f32>::new(small_config(), None).unwrap();
    for _ in 0..2 {
        assert_eq!(tr.step(&ds).unwrap().trace, vec![Phase::Disc, Phase::Gen]);
    }
}

#[test]
fn fpn_label_source_requires_a_network() {
    let mut cfg = small_config();
    cfg.train.label_source = LabelSource::Fpn;
    assert!(PsfrTrainer::<f32>::new(cfg.clone(), None).is_err());
    let fpn = load_fpn(&FpnTrainer::<f32>::new(small_config()).unwrap().checkpoint()).unwrap();
    let mut tr = PsfrTrainer::<f32>::new(cfg, Some(fpn)).unwrap();
    tr.step(&data(2, 64)).unwrap();
}

#[test]
fn restore_is_deterministic_and_zeroing_all_levels_ignores_input() {
    let ds = data(2, 64);
    let mut ft = FpnTrainer::<f32>::new(small_config()).unwrap();
    ft.step(&ds).unwrap();
    let mut pt = PsfrTrainer::<f32>::new(small_config(), None).unwrap();
    pt.step(&ds).unwrap();
    let restorer = Restorer::from_checkpoints(&ft.checkpoint(), &pt.checkpoint()).unwrap();
    let a = synthetic_face(10).hq;
    let b = Image8::filled(300, 200, [20, 200, 90]);

    let r1 = restorer.restore(&a, &[]).unwrap();
    let r2 = restorer.restore(&a, &[]).unwrap();
    assert_eq!(r1.hq.pixels(), r2.hq.pixels());
    assert_eq!(r1.labels, r2.labels);
    assert_eq!((r1.hq.width(), r1.hq.height()), (64, 64));
    assert_eq!((r1.labels.width(), r1.labels.height()), (64, 64));

    let all: Vec<usize> = (0..restorer.num_levels()).collect();
    let za = restorer.restore(&a, &all).unwrap();
    let zb = restorer.restore(&b, &all).unwrap();
    assert_eq!(za.hq.pixels(), zb.hq.pixels());
    assert_ne!(za.hq.pixels(), r1.hq.pixels());
    assert!(restorer.restore(&a, &[restorer.num_levels()]).is_err());

    let dir = tempfile::tempdir().unwrap();
    dump_pyramid(&r1.pyramid, dir.path()).unwrap();
    for i in 1..=restorer.num_levels() {
        assert!(dir.path().join(format!("lq_{i}.png")).exists());
        assert!(dir.path().join(format!("parse_{i}.png")).exists());
    }
}

#[test]
fn batches_draw_fresh_degradations_each_step() {
    let ds = data(4, 64);
    let b0 = ds.batch::<f32>(9, 0, 4).unwrap();
    let b1 = ds.batch::<f32>(9, 1, 4).unwrap();
    let again = ds.batch::<f32>(9, 0, 4).unwrap();
    assert_eq!(b0.lq.data(), again.lq.data());
    assert_eq!(b0.params, again.params);
    assert!(b0.params.iter().zip(&b1.params).any(|(x, y)| x != y));
    let mut seen = b0.params.clone();
    seen.dedup();
    assert_eq!(seen.len(), 4);
}

#[test]
fn evaluation_report() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    let face = synthetic_face(4).hq;
    face.save_png(&gt.join("x.png")).unwrap();
    face.save_png(&pred.join("x.png")).unwrap();
    let mut off = face.clone();
    off.pixels_mut().iter_mut().for_each(|v| *v = v.saturating_sub(8));
    face.save_png(&gt.join("y.png")).unwrap();
    off.save_png(&pred.join("y.png")).unwrap();
    let rows = evaluate_dirs(&pred, &gt).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].psnr, f64::INFINITY);
    assert!(rows[1].psnr.is_finite() && rows[1].ms_ssim.is_some());
    let csv = report_csv(&rows);
    assert!(csv.starts_with("file,psnr,ssim,ms_ssim\n"));
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
}
