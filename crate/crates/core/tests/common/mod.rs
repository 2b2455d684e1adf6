#![allow(dead_code)]

use gba_core::data::{BoxBev, Scene};
use gba_core::detector::{batch_loss, ModelParams, RasterSpec, Sample};
use gba_core::rng::Xoshiro256;

pub fn small_spec() -> RasterSpec {
    RasterSpec {
        grid: 8,
        extent: 8.0,
    }
}

/// Random scene with a few boxes, perimeter points and clutter.
pub fn random_scene(rng: &mut Xoshiro256, id: u32, extent: f64) -> Scene {
    let n_boxes = 1 + rng.below(3) as usize;
    let mut boxes = Vec::new();
    let mut points = Vec::new();
    for _ in 0..n_boxes {
        let w = 0.8 + rng.next_f64() * 1.5;
        let l = 0.8 + rng.next_f64() * 2.0;
        let cx = w / 2.0 + rng.next_f64() * (extent - w);
        let cy = l / 2.0 + rng.next_f64() * (extent - l);
        boxes.push(BoxBev { cx, cy, w, l });
        for _ in 0..20 {
            let t = rng.next_f64();
            points.push([cx - w / 2.0 + t * w, cy - l / 2.0]);
            points.push([cx + w / 2.0, cy - l / 2.0 + t * l]);
        }
    }
    for _ in 0..10 {
        points.push([rng.next_f64() * extent, rng.next_f64() * extent]);
    }
    Scene { id, points, boxes }
}

/// Randomized parameters including non-zero biases.
pub fn random_params(seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::<f64>::init(seed);
    let mut rng = Xoshiro256::seed_from_u64(seed ^ 0xB1A5);
    for t in [&mut p.conv1_b, &mut p.conv2_b, &mut p.reg_b] {
        for v in t.data_mut() {
            *v = rng.next_f64() * 0.2 - 0.1;
        }
    }
    p.hm_b.data_mut()[0] = -1.0 + rng.next_f64();
    p
}

/// Central finite-difference gradient of the batch-mean total loss.
pub fn numeric_gradient(params: &ModelParams<f64>, batch: &[&Sample<f64>], h: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut work = params.clone();
    for ti in 0..8 {
        let n = params.tensors()[ti].len();
        let mut g = vec![0.0; n];
        for (j, gj) in g.iter_mut().enumerate() {
            let orig = work.tensors()[ti].data()[j];
            work.tensors_mut()[ti].data_mut()[j] = orig + h;
            let plus = batch_loss(&work, batch).total;
            work.tensors_mut()[ti].data_mut()[j] = orig - h;
            let minus = batch_loss(&work, batch).total;
            work.tensors_mut()[ti].data_mut()[j] = orig;
            *gj = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Denominator floor for [`relative_error`]. Central differences at
/// `h = 1e-5` carry roughly `1e-11` absolute roundoff, so gradients smaller
/// than this are compared on an absolute scale.
pub const GRAD_SCALE_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, GRAD_SCALE_FLOOR)`.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_SCALE_FLOOR)
}

pub mod ap_oracle {
    //! Exhaustive reference for greedy center matching and 101-point AP,
    //! using exact rationals.

    use num_rational::Ratio;

    #[derive(Debug, Clone, Copy)]
    pub struct Det {
        pub scene: u32,
        pub x: f64,
        pub y: f64,
        pub score: f64,
    }

    #[derive(Debug, Clone, Copy)]
    pub struct Gt {
        pub scene: u32,
        pub x: f64,
        pub y: f64,
    }

    /// Labels in rank order.
    pub fn labels(dets: &[Det], gts: &[Gt], threshold: f64) -> Vec<bool> {
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&a, &b| {
            let (da, db) = (dets[a], dets[b]);
            db.score
                .partial_cmp(&da.score)
                .unwrap()
                .then(da.scene.cmp(&db.scene))
                .then(a.cmp(&b))
        });
        let dist: Vec<Vec<f64>> = dets
            .iter()
            .map(|d| {
                gts.iter()
                    .map(|g| {
                        if g.scene == d.scene {
                            ((d.x - g.x).powi(2) + (d.y - g.y).powi(2)).sqrt()
                        } else {
                            f64::INFINITY
                        }
                    })
                    .collect()
            })
            .collect();
        let mut used = vec![false; gts.len()];
        let mut out = Vec::new();
        for &di in &order {
            let mut pick: Option<usize> = None;
            for gj in 0..gts.len() {
                if used[gj] || !(dist[di][gj] < threshold) {
                    continue;
                }
                pick = match pick {
                    Some(p) if dist[di][p] <= dist[di][gj] => Some(p),
                    _ => Some(gj),
                };
            }
            if let Some(p) = pick {
                used[p] = true;
            }
            out.push(pick.is_some());
        }
        out
    }

    pub fn average_precision(labels: &[bool], n_gt: usize) -> f64 {
        if n_gt == 0 {
            return if labels.is_empty() { 1.0 } else { 0.0 };
        }
        let n_gt = n_gt as i64;
        let mut total = Ratio::from_integer(0i64);
        for i in 0..=100i64 {
            let r = Ratio::new(i, 100);
            let mut best = Ratio::from_integer(0i64);
            for k in 1..=labels.len() {
                let tp = labels[..k].iter().filter(|&&l| l).count() as i64;
                if Ratio::new(tp, n_gt) >= r {
                    best = best.max(Ratio::new(tp, k as i64));
                }
            }
            total += best;
        }
        let ap = total / Ratio::from_integer(101);
        *ap.numer() as f64 / *ap.denom() as f64
    }
}

pub mod schedule_check {
    use std::collections::BTreeSet;

    use gba_core::{
        build_plan, epoch_plan, reduce_source, serialize_plan, DatasetRef, Domain, GbaConfig, ScheduleMode,
    };

    /// Independent restatement of the pool-size rule.
    pub fn expected_pool(size: usize, n: u32, cfg: &GbaConfig) -> usize {
        match cfg.mode {
            ScheduleMode::Ba => size,
            ScheduleMode::SingleDomain => match cfg.start_domain {
                Domain::Source => size,
                Domain::Target => 0,
            },
            ScheduleMode::Gba => {
                let k = u64::from(n / cfg.epoch_interval);
                let removed = (k * u64::from(cfg.reduce_percent)).min(100);
                (size as u128 * (100 - removed) as u128 / 100) as usize
            }
        }
    }

    /// Checks every plan invariant for `(cfg, sizes)`; returns the first
    /// violation.
    pub fn check(cfg: &GbaConfig, source: usize, target: usize) -> Result<(), String> {
        let src = DatasetRef::source(source);
        let tgt = DatasetRef::target(target);
        let plan = build_plan(cfg, src, tgt).map_err(|e| e.to_string())?;
        let again = build_plan(cfg, src, tgt).map_err(|e| e.to_string())?;
        if serialize_plan(&plan) != serialize_plan(&again) {
            return Err("non-deterministic serialization".into());
        }
        if plan.epochs.len() != cfg.total_epochs as usize {
            return Err("wrong epoch count".into());
        }
        let b = cfg.batch_size as usize;
        let two_domain = cfg.mode != ScheduleMode::SingleDomain;
        let mut prev_pool: Option<Vec<u32>> = None;
        for (i, ep) in plan.epochs.iter().enumerate() {
            let n = i as u32 + 1;
            let ctx = |msg: &str| format!("epoch {n}: {msg}");
            if ep.epoch != n {
                return Err(ctx("epoch number"));
            }
            let lazy = epoch_plan(n, cfg, src, tgt).map_err(|e| e.to_string())?;
            if &lazy != ep {
                return Err(ctx("lazy epoch differs from eager plan"));
            }
            let pool = expected_pool(source, n, cfg);
            if ep.source_pool_size != pool {
                return Err(ctx(&format!("pool {} != {}", ep.source_pool_size, pool)));
            }
            let mut seen_src: Vec<u32> = Vec::new();
            let mut seen_tgt: Vec<u32> = Vec::new();
            let mut short = [0usize; 2];
            for batch in &ep.batches {
                if batch.ids.is_empty() || batch.ids.len() > b {
                    return Err(ctx("batch length out of bounds"));
                }
                let slot = (batch.domain == Domain::Target) as usize;
                if batch.ids.len() < b {
                    short[slot] += 1;
                }
                match batch.domain {
                    Domain::Source => seen_src.extend(&batch.ids),
                    Domain::Target => seen_tgt.extend(&batch.ids),
                }
            }
            if short.iter().any(|&s| s > 1) {
                return Err(ctx("more than one short batch in a domain"));
            }
            // exact coverage, no repetition
            let want_tgt: Vec<u32> = if two_domain || cfg.start_domain == Domain::Target {
                (0..target as u32).collect()
            } else {
                Vec::new()
            };
            let mut sorted_tgt = seen_tgt.clone();
            sorted_tgt.sort_unstable();
            if sorted_tgt != want_tgt {
                return Err(ctx("target coverage"));
            }
            let stage = cfg.stage_of(n);
            let want_src: BTreeSet<u32> = if pool == 0 {
                BTreeSet::new()
            } else {
                reduce_source(src, stage, cfg.reduce_percent, cfg.seed).ids.into_iter().collect()
            };
            if seen_src.len() != want_src.len() || seen_src.iter().copied().collect::<BTreeSet<_>>() != want_src {
                return Err(ctx("source coverage"));
            }
            // alternation prefix
            let ns = ep.count(Domain::Source);
            let nt = ep.count(Domain::Target);
            let prefix = 2 * ns.min(nt);
            let mut expect = cfg.start_domain;
            for batch in &ep.batches[..prefix] {
                if batch.domain != expect {
                    return Err(ctx("alternation prefix"));
                }
                expect = expect.other();
            }
            // nested pools: each pool is a subset of the previous one
            if cfg.mode == ScheduleMode::Gba {
                let ids = reduce_source(src, stage, cfg.reduce_percent, cfg.seed).ids;
                if let Some(prev) = &prev_pool {
                    if ids.len() > prev.len() || ids[..] != prev[..ids.len()] {
                        return Err(ctx("pools not nested"));
                    }
                }
                prev_pool = Some(ids);
            }
        }
        // stage-0 epochs agree with batch alternation
        if cfg.mode == ScheduleMode::Gba {
            let ba = GbaConfig {
                mode: ScheduleMode::Ba,
                ..cfg.clone()
            };
            let ba_plan = build_plan(&ba, src, tgt).map_err(|e| e.to_string())?;
            for (g, a) in plan.epochs.iter().zip(&ba_plan.epochs) {
                if g.stage == 0 && g != a {
                    return Err(format!("epoch {}: GBA and BA disagree at stage 0", g.epoch));
                }
            }
        }
        Ok(())
    }
}

/// Batch-mean total loss together with every branch it took: ReLU activity
/// plus the sign of each supervised L1 residual. Finite differences are only
/// meaningful between points that share this signature.
fn loss_and_branches(params: &ModelParams<f64>, batch: &[&Sample<f64>]) -> (f64, Vec<i8>) {
    use gba_core::detector::{forward, scene_loss};
    let mut total = 0.0;
    let mut sig = Vec::new();
    for s in batch {
        let out = forward(params, &s.input);
        total += scene_loss(&out, &s.targets).0.total;
        sig.extend(out.tape.active_units().into_iter().map(i8::from));
        let plane = s.targets.heatmap.len();
        for &idx in &s.targets.mask {
            for c in 0..4 {
                let k = c * plane + idx;
                sig.push((out.reg.data()[k] - s.targets.reg.data()[k]).signum() as i8);
            }
        }
    }
    (total * (1.0 / batch.len() as f64), sig)
}

/// Worst relative error between analytic and central-difference gradients
/// on one random instance (two scenes, G = 8), with its location and the
/// number of coordinates skipped as nonsmooth.
///
/// A coordinate whose +-h probes change the branch signature is retried with
/// a smaller step (down to 1e-7); if every step still crosses a kink the
/// coordinate is skipped, since no finite difference describes it.
pub fn gradient_instance_error(instance: u64) -> (f64, String, usize) {
    use gba_core::detector::{loss_and_gradients, PARAM_NAMES};
    let spec = small_spec();
    let mut rng = Xoshiro256::seed_from_u64(1000 + instance);
    let scenes: Vec<_> = (0..2).map(|i| random_scene(&mut rng, i, spec.extent)).collect();
    let samples: Vec<Sample<f64>> = scenes.iter().map(|s| Sample::from_scene(s, &spec)).collect();
    let batch: Vec<&Sample<f64>> = samples.iter().collect();
    let params = random_params(instance);
    let (_, grads) = loss_and_gradients(&params, &batch).expect("finite loss");
    let (_, base) = loss_and_branches(&params, &batch);
    let mut work = params.clone();
    let mut worst = (0.0, String::new());
    let mut skipped = 0;
    for (ti, name) in PARAM_NAMES.iter().enumerate() {
        for j in 0..params.tensors()[ti].len() {
            let a = grads.tensors()[ti].data()[j];
            let orig = params.tensors()[ti].data()[j];
            let mut numeric = None;
            for h in [1e-5, 1e-6, 1e-7] {
                work.tensors_mut()[ti].data_mut()[j] = orig + h;
                let (plus, sig_p) = loss_and_branches(&work, &batch);
                work.tensors_mut()[ti].data_mut()[j] = orig - h;
                let (minus, sig_m) = loss_and_branches(&work, &batch);
                work.tensors_mut()[ti].data_mut()[j] = orig;
                if sig_p == base && sig_m == base {
                    numeric = Some((plus - minus) / (2.0 * h));
                    break;
                }
            }
            let Some(n) = numeric else {
                skipped += 1;
                continue;
            };
            let e = relative_error(a, n);
            if e > worst.0 {
                worst = (e, format!("{name}[{j}]: analytic {a:e}, numeric {n:e}"));
            }
        }
    }
    (worst.0, worst.1, skipped)
}
