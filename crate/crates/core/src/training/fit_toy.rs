//! Fitting loop for the 2D deformable-image problem.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diffcore::map::PointMap2;
use crate::diffcore::tape::{Grads, Tape, Var};
use crate::fields::radiance::Grid2D;
use crate::fields::warp::TapedMlpWarp2;
use crate::kinematics::IntegrationConfig;
use crate::real::Real;
use crate::renderer::toy2d;
use crate::training::loss::ConsistencyMask;
use crate::training::model::ToyModel;
use crate::training::{
    beta_schedule, lr_schedule, Adam, Dataset, EpochRow, FitError, TrainConfig, TrainReport,
};

fn mix(a: u64, b: u64) -> u64 {
    let mut x = a ^ b.wrapping_mul(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x ^ (x >> 31)
}

struct PhotoItem {
    frame: usize,
    px: [f64; 2],
    target: [f64; 3],
}

struct FlowItem {
    from_t: f64,
    dt: f64,
    px: [f64; 2],
    target: [f64; 2],
    ray_id: u64,
}

#[derive(Default)]
struct ChunkOut {
    grads: Option<Grads>,
    photo_sq: f64,
    flow_abs: f64,
    gauge_sum: f64,
}

/// Pairs supervised under the configured frame offsets, with their pass
/// masks and the pixel lists to sample from.
struct FlowPool {
    /// (pair index, from-frame, dt in normalized time)
    pairs: Vec<(usize, usize, f64)>,
    /// mask-true pixel indices per entry of `pairs`
    pixels: Vec<Vec<u32>>,
}

fn build_flow_pool(ds: &Dataset, masks: &[ConsistencyMask], offsets: &[i64]) -> FlowPool {
    let mut pairs = Vec::new();
    let mut pixels = Vec::new();
    for (idx, pair) in ds.flows.iter().enumerate() {
        let dt_frames = pair.to as i64 - pair.from as i64;
        if !offsets.contains(&dt_frames) {
            continue;
        }
        let list: Vec<u32> = masks[idx]
            .mask
            .iter()
            .enumerate()
            .filter_map(|(i, m)| if *m { Some(i as u32) } else { None })
            .collect();
        if !list.is_empty() {
            pairs.push((idx, pair.from, ds.times[pair.to] - ds.times[pair.from]));
            pixels.push(list);
        }
    }
    FlowPool { pairs, pixels }
}

pub struct ToyFit {
    pub report: TrainReport,
    pub model: ToyModel,
}

pub fn fit_toy2d(
    ds: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<ToyFit, FitError> {
    let (w, h) = (ds.width, ds.height);
    let canonical_frame = cfg.canonical_frame_index.unwrap_or_else(|| ds.middle_frame());
    let t0 = ds.times[canonical_frame];

    let mut model = ToyModel::new(cfg.warp.clone(), w, h, mix(cfg.seed, 0x10d));
    if cfg.grid_init_from_canonical {
        model.grid = Grid2D::from_data(w, h, ds.frames[canonical_frame].clone());
    }

    let masks = ds.consistency_masks(cfg.tau_fb);
    let pool = build_flow_pool(ds, &masks, &cfg.delta_t_frames);
    if cfg.use_flow && pool.pairs.is_empty() {
        return Err(FitError::NoFlowPairs);
    }

    let sizes = model.block_sizes();
    let mut adam = Adam::new(&sizes);
    let total_iters = cfg.total_iters();
    let n_chunks = 32usize;
    let mut rows: Vec<EpochRow> = Vec::new();

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg.lr_init, cfg.lr_decay_factor, cfg.lr_decay_epochs);
        for it in 0..cfg.iters_per_epoch {
            let giter = epoch * cfg.iters_per_epoch + it;
            let beta = if cfg.use_flow {
                beta_schedule(giter, total_iters, cfg.beta_init, cfg.beta_final)
            } else {
                0.0
            };
            let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, giter as u64));

            // Batch assembly: rays from a small set of frames, flow rays
            // from consistency-passing pixels, gauge points over the canvas.
            let frame_pool: Vec<usize> = rand::seq::index::sample(
                &mut rng,
                ds.frame_count(),
                cfg.frames_per_batch.min(ds.frame_count()),
            )
            .into_vec();
            let photo: Vec<PhotoItem> = (0..cfg.rays_per_batch)
                .map(|_| {
                    let frame = frame_pool[rng.gen_range(0..frame_pool.len())];
                    let x = rng.gen_range(0..w);
                    let y = rng.gen_range(0..h);
                    PhotoItem {
                        frame,
                        px: [x as f64, y as f64],
                        target: ds.pixel(frame, x, y),
                    }
                })
                .collect();
            let flow: Vec<FlowItem> = if cfg.use_flow {
                (0..cfg.flow_rays_per_batch)
                    .map(|k| {
                        let pi = rng.gen_range(0..pool.pairs.len());
                        let (pair_idx, from, dt) = pool.pairs[pi];
                        let pix = pool.pixels[pi][rng.gen_range(0..pool.pixels[pi].len())] as usize;
                        let (x, y) = (pix % w, pix / w);
                        let f = ds.flows[pair_idx].flow.at(x, y);
                        FlowItem {
                            from_t: ds.times[from],
                            dt,
                            px: [x as f64, y as f64],
                            target: [f[0] as f64, f[1] as f64],
                            ray_id: giter as u64 * 1_000_003 + k as u64,
                        }
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let gauge_pts: Vec<[f64; 2]> = (0..cfg.gauge_points_per_batch)
                .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect();

            let int_cfg = IntegrationConfig {
                steps: cfg.rk4_steps,
                jitter_sigma: cfg.jitter_sigma,
                rng_seed: cfg.seed,
                eps_det: cfg.eps_det,
            };
            let photo_norm = 1.0 / (3.0 * photo.len().max(1) as f64);
            let flow_norm = beta / (2.0 * flow.len().max(1) as f64);
            let gauge_norm = cfg.gauge_weight / gauge_pts.len().max(1) as f64;

            let model_ref = &model;
            let chunks: Vec<ChunkOut> = (0..n_chunks)
                .into_par_iter()
                .map(|c| {
                    let tape = Tape::new();
                    let (wb, grid_block) = model_ref.register(&tape);
                    let warp = TapedMlpWarp2 { warp: &model_ref.warp, tape: &tape, blocks: &wb };
                    let mut out = ChunkOut::default();
                    let mut loss = Var::Const(0.0);

                    let mut photo_sq = Var::Const(0.0);
                    for item in photo.iter().skip(c).step_by(n_chunks) {
                        let color = toy2d::render_pixel_taped(
                            &warp,
                            &model_ref.grid,
                            &tape,
                            grid_block,
                            item.px,
                            Var::Const(ds.times[item.frame]),
                        );
                        for k in 0..3 {
                            let d = color[k] - Var::Const(item.target[k]);
                            photo_sq = photo_sq + d * d;
                        }
                    }
                    out.photo_sq = photo_sq.value();
                    loss = loss + photo_sq * Var::Const(photo_norm);

                    let mut flow_abs = Var::Const(0.0);
                    for item in flow.iter().skip(c).step_by(n_chunks) {
                        if let Some(f) = toy2d::render_flow_2d(
                            &warp,
                            item.px,
                            Var::Const(item.from_t),
                            item.dt,
                            w,
                            h,
                            &int_cfg,
                            item.ray_id,
                        ) {
                            flow_abs = flow_abs
                                + (f[0] - Var::Const(item.target[0])).abs()
                                + (f[1] - Var::Const(item.target[1])).abs();
                        }
                    }
                    out.flow_abs = flow_abs.value();
                    loss = loss + flow_abs * Var::Const(flow_norm);

                    let mut gauge_sum = Var::Const(0.0);
                    for p in gauge_pts.iter().skip(c).step_by(n_chunks) {
                        let q = warp.eval(p.map(Var::Const), Var::Const(t0));
                        let mut d2 = Var::Const(0.0);
                        for k in 0..2 {
                            let d = q[k] - Var::Const(p[k]);
                            d2 = d2 + d * d;
                        }
                        gauge_sum = gauge_sum + d2.sqrt();
                    }
                    out.gauge_sum = gauge_sum.value();
                    loss = loss + gauge_sum * Var::Const(gauge_norm);

                    out.grads = tape.param_gradient(loss).ok();
                    out
                })
                .collect();

            // Deterministic merge in chunk order.
            let mut merged: Option<Grads> = None;
            let (mut photo_sq, mut flow_abs, mut gauge_sum) = (0.0, 0.0, 0.0);
            for c in chunks {
                photo_sq += c.photo_sq;
                flow_abs += c.flow_abs;
                gauge_sum += c.gauge_sum;
                if let Some(g) = c.grads {
                    match &mut merged {
                        Some(m) => m.accumulate(&g),
                        None => merged = Some(g),
                    }
                }
            }
            let loss_value =
                photo_sq * photo_norm + flow_abs * flow_norm + gauge_sum * gauge_norm;
            if !loss_value.is_finite() {
                let detail = format!(
                    "photo_sq={photo_sq} flow_abs={flow_abs} gauge_sum={gauge_sum} beta={beta}"
                );
                if let Some(dir) = out_dir {
                    let dump = serde_json::json!({
                        "iter": giter, "photo_sq": photo_sq, "flow_abs": flow_abs,
                        "gauge_sum": gauge_sum, "beta": beta, "lr": lr,
                    });
                    let _ = std::fs::write(dir.join("abort_dump.json"), dump.to_string());
                }
                return Err(FitError::NonFiniteLoss { iter: giter, detail });
            }
            if let Some(g) = merged {
                adam.begin_step();
                model.for_each_block_mut(|i, p| {
                    if let Some(gb) = g.block_slice(i as u32) {
                        adam.update_block(i, p, gb, lr);
                    }
                });
            }
        }

        let beta_now = beta_schedule(
            (epoch + 1) * cfg.iters_per_epoch,
            total_iters,
            cfg.beta_init,
            cfg.beta_final,
        );
        let row = EpochRow {
            epoch,
            psnr: eval_psnr(&model, ds, cfg.eval_frames),
            flow_epe: eval_epe(&model, ds, &pool, cfg, cfg.eval_flow_samples),
            gauge: eval_gauge(&model, t0),
            beta: if cfg.use_flow { beta_now } else { 0.0 },
            lr,
        };
        rows.push(row);
        if let Some(dir) = out_dir {
            std::fs::write(dir.join("metrics.csv"), crate::training::metrics_csv(&rows))?;
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                let _ = model.save(&dir.join(format!("ckpt_epoch_{epoch:04}.ckpt")));
            }
        }
    }

    let final_psnr = eval_psnr(&model, ds, ds.frame_count());
    let final_flow_epe = eval_epe(&model, ds, &pool, cfg, 4 * cfg.eval_flow_samples);
    let final_gauge = eval_gauge(&model, t0);
    if let Some(dir) = out_dir {
        let _ = model.save(&dir.join("final.ckpt"));
    }
    Ok(ToyFit {
        report: TrainReport { rows, final_psnr, final_flow_epe, final_gauge },
        model,
    })
}

/// PSNR over `n_frames` evenly spread frames (peak 1, capped at 99 dB).
pub fn eval_psnr(model: &ToyModel, ds: &Dataset, n_frames: usize) -> f64 {
    let n_frames = n_frames.clamp(1, ds.frame_count());
    let idxs: Vec<usize> = if n_frames == 1 {
        vec![ds.middle_frame()]
    } else {
        (0..n_frames).map(|i| i * (ds.frame_count() - 1) / (n_frames - 1)).collect()
    };
    let mut sq = 0.0;
    let mut count = 0usize;
    for &f in &idxs {
        let rendered: Vec<f64> = (0..ds.height)
            .into_par_iter()
            .flat_map_iter(|y| {
                let model = &model;
                let ds_t = ds.times[f];
                (0..ds.width).flat_map(move |x| {
                    toy2d::render_pixel(&model.warp, &model.grid, [x as f64, y as f64], ds_t)
                        .into_iter()
                })
            })
            .collect();
        for (r, t) in rendered.iter().zip(&ds.frames[f]) {
            sq += (r - t) * (r - t);
            count += 1;
        }
    }
    let mse = sq / count as f64;
    if mse <= 1e-12 {
        99.0
    } else {
        (10.0 * (1.0 / mse).log10()).min(99.0)
    }
}

/// Mean endpoint error of rendered flows against the dataset flows on
/// consistency-passing pixels, jitter off.
fn eval_epe(model: &ToyModel, ds: &Dataset, pool: &FlowPool, cfg: &TrainConfig, n: usize) -> f64 {
    if pool.pairs.is_empty() {
        return f64::NAN;
    }
    let int_cfg = IntegrationConfig {
        steps: cfg.rk4_steps,
        jitter_sigma: 0.0,
        rng_seed: 0,
        eps_det: cfg.eps_det,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0xE7A1));
    let items: Vec<(usize, usize)> = (0..n)
        .map(|_| {
            let pi = rng.gen_range(0..pool.pairs.len());
            let pix = pool.pixels[pi][rng.gen_range(0..pool.pixels[pi].len())] as usize;
            (pi, pix)
        })
        .collect();
    let errs: Vec<f64> = items
        .par_iter()
        .filter_map(|&(pi, pix)| {
            let (pair_idx, from, dt) = pool.pairs[pi];
            let (x, y) = (pix % ds.width, pix / ds.width);
            let target = ds.flows[pair_idx].flow.at(x, y);
            toy2d::render_flow_2d::<f64, _>(
                &model.warp,
                [x as f64, y as f64],
                ds.times[from],
                dt,
                ds.width,
                ds.height,
                &int_cfg,
                0,
            )
            .map(|f| {
                ((f[0] - target[0] as f64).powi(2) + (f[1] - target[1] as f64).powi(2)).sqrt()
            })
        })
        .collect();
    if errs.is_empty() {
        f64::NAN
    } else {
        errs.iter().sum::<f64>() / errs.len() as f64
    }
}

/// Mean deformation magnitude at the canonical time over a canvas grid, in
/// normalized units.
fn eval_gauge(model: &ToyModel, t0: f64) -> f64 {
    let n = 24;
    let pts: Vec<[f64; 2]> = (0..n * n)
        .map(|i| {
            let x = (i % n) as f64 / (n - 1) as f64 * 2.0 - 1.0;
            let y = (i / n) as f64 / (n - 1) as f64 * 2.0 - 1.0;
            [x, y]
        })
        .collect();
    crate::training::loss::gauge_loss2(&model.warp, &pts, t0)
}
