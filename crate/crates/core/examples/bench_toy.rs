use std::time::Instant;
use warpflow::synth::{gen_toy_video, ToySceneSpec};
use warpflow::training::{fit_toy2d, TrainConfig};

fn run(label: &str, cfg: TrainConfig, ds: &warpflow::training::Dataset) {
    let t = Instant::now();
    let _ = fit_toy2d(ds, &cfg, None).unwrap();
    let n = (cfg.epochs * cfg.iters_per_epoch) as f64;
    eprintln!("{label}: {:.1} ms/iter", t.elapsed().as_secs_f64() * 1000.0 / n);
}

fn main() {
    let spec = ToySceneSpec::default();
    let (ds, _gt) = gen_toy_video(&spec, 7);
    let base = TrainConfig { epochs: 1, iters_per_epoch: 20, eval_frames: 1, eval_flow_samples: 8, ..TrainConfig::toy_desk() };
    run("full       ", base.clone(), &ds);
    run("noflow     ", TrainConfig { use_flow: false, ..base.clone() }, &ds);
    run("flow-only  ", TrainConfig { rays_per_batch: 1, gauge_points_per_batch: 1, ..base.clone() }, &ds);
    run("photo-only ", TrainConfig { use_flow: false, gauge_points_per_batch: 1, ..base.clone() }, &ds);
    run("flow256    ", TrainConfig { flow_rays_per_batch: 256, ..base.clone() }, &ds);
}
