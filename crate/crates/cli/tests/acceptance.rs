//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs as a plain binary (`harness = false`) so the lines always
//! reach the terminal.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use vbreathnet::data::{
    balance_classes, build_manifest, curate, gaussian_blur, generate_synthetic,
    laplacian_variance, split_train_test, ClassLabel, CurationParams, DatasetManifest,
    GrayImage, ManifestDataset, Provenance, Sample, Split, SynthParams, Transform,
    MANIFEST_VERSION,
};
use vbreathnet::eval::{class_metrics, round2, ConfusionMatrix};
use vbreathnet::explain::{gradcam, top_decile_inside};
use vbreathnet::model::{Checkpoint, Layer, LayerSpec, Model, ModelConfig};
use vbreathnet::nn::{BatchNorm2d, Conv2d, Dense, MaxPool2d, Mode, Padding};
use vbreathnet::train::{
    cross_entropy, evaluate_loss, train_epochs, Dataset, InMemoryDataset, LrSchedule, TrainConfig,
    TrainOutcome,
};
use vbreathnet::{Rng, Tensor};

const BIN: &str = env!("CARGO_BIN_EXE_vbreathnet");
const SEED: u64 = 42;

type Check = Result<(bool, String), String>;

fn main() {
    let t0 = Instant::now();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Check| {
        let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        if !pass {
            failed += 1;
        }
        println!("{} [{n:>2}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    };

    report(1, "gradient correctness", gradients());
    report(2, "conv oracle equivalence", conv_oracle());
    report(3, "parameter count", param_count());
    report(4, "learning-rate table", lr_table());
    report(5, "metrics reproduction", metrics());
    let desk = desk_training();
    let trained = desk.as_ref().ok().map(|(_, o, _)| o.model.clone());
    report(6, "desk-scale training", desk.as_ref().map(|(c, _, _)| c.clone()).map_err(Clone::clone));
    report(7, "gradcam localization", match &desk {
        Ok((_, outcome, dir)) => localization(&outcome.model, dir.path()),
        Err(_) => Err("no trained model".into()),
    });
    report(8, "gradcam hand oracle", gradcam_oracle());
    report(9, "curation properties", curation());
    report(10, "end-to-end reproducibility", reproducibility());
    report(11, "checkpoint round trip", checkpoint_round_trip(trained));

    println!("acceptance finished in {:.1} s, {failed} failing", t0.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn e(err: impl std::fmt::Display) -> String {
    err.to_string()
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

// ---------------------------------------------------------------- 1

/// `||a - b|| / max(||a||, ||b||)`.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

fn f64s(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Central differences of `loss` with respect to each element of `x`.
fn central(x: &Tensor, h: f32, mut loss: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut xp = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = xp.data()[i];
            xp.data_mut()[i] = orig + h;
            let up = loss(&xp);
            xp.data_mut()[i] = orig - h;
            let down = loss(&xp);
            xp.data_mut()[i] = orig;
            (up - down) / ((orig + h) as f64 - (orig - h) as f64)
        })
        .collect()
}

fn rand_shape(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn gradients() -> Check {
    const INSTANCES: usize = 20;
    const H: f32 = 1e-3;
    let t0 = Instant::now();
    let mut rng = Rng::new(SEED);
    let mut worst = [0.0f64; 5];

    let mut conv_done = 0;
    while conv_done < INSTANCES {
        let (cin, cout) = (rand_shape(&mut rng, 1, 3), rand_shape(&mut rng, 1, 3));
        let k = rand_shape(&mut rng, 1, 3);
        let stride = rand_shape(&mut rng, 1, 2);
        let pad = if rng.below(2) == 0 { Padding::Same } else { Padding::Explicit(rng.below(2)) };
        let mut conv = Conv2d::new(cin, cout, (k, k), stride, pad).map_err(e)?;
        conv.weight = Tensor::uniform(conv.weight.shape().to_vec(), -1.0, 1.0, &mut rng);
        conv.bias = Tensor::uniform([cout], -1.0, 1.0, &mut rng);
        let hw = rand_shape(&mut rng, 3, 6);
        let x = Tensor::uniform([2, cin, hw, hw], -1.0, 1.0, &mut rng);
        let Ok((y, cache)) = conv.forward(&x) else { continue };
        conv_done += 1;
        let r = Tensor::uniform(y.shape().to_vec(), -1.0, 1.0, &mut rng);
        let g = conv.backward(&cache, &r).map_err(e)?;
        let num_x = central(&x, H, |xp| dot(&conv.forward(xp).unwrap().0, &r));
        let num_w = central(&conv.weight, H, |wp| {
            let mut c = conv.clone();
            c.weight = wp.clone();
            dot(&c.forward(&x).unwrap().0, &r)
        });
        let num_b = central(&conv.bias, H, |bp| {
            let mut c = conv.clone();
            c.bias = bp.clone();
            dot(&c.forward(&x).unwrap().0, &r)
        });
        for err in [
            rel_err(&f64s(&g.input), &num_x),
            rel_err(&f64s(&g.weight), &num_w),
            rel_err(&f64s(&g.bias), &num_b),
        ] {
            worst[0] = worst[0].max(err);
        }
    }

    for _ in 0..INSTANCES {
        let c = rand_shape(&mut rng, 1, 3);
        let mut bn = BatchNorm2d::new(c, 0.9, 1e-5).map_err(e)?;
        bn.gamma = Tensor::uniform([c], 0.5, 1.5, &mut rng);
        bn.beta = Tensor::uniform([c], -0.5, 0.5, &mut rng);
        let (n, hw) = (rand_shape(&mut rng, 2, 4), rand_shape(&mut rng, 2, 4));
        let x = Tensor::uniform([n, c, hw, hw], -2.0, 2.0, &mut rng);
        let (y, cache) = bn.forward(&x, Mode::Train).map_err(e)?;
        let r = Tensor::uniform(y.shape().to_vec(), -1.0, 1.0, &mut rng);
        let g = bn.backward(&cache, &r).map_err(e)?;
        let f = |b: &BatchNorm2d, xp: &Tensor| dot(&b.forward(xp, Mode::Train).unwrap().0, &r);
        let num_x = central(&x, H, |xp| f(&bn, xp));
        let num_g = central(&bn.gamma, H, |gp| {
            let mut b = bn.clone();
            b.gamma = gp.clone();
            f(&b, &x)
        });
        let num_b = central(&bn.beta, H, |bp| {
            let mut b = bn.clone();
            b.beta = bp.clone();
            f(&b, &x)
        });
        for err in [
            rel_err(&f64s(&g.input), &num_x),
            rel_err(&f64s(&g.gamma), &num_g),
            rel_err(&f64s(&g.beta), &num_b),
        ] {
            worst[1] = worst[1].max(err);
        }
    }

    // Max pool inside pool → dense → softmax + cross-entropy. Inputs are a
    // shuffled grid with 0.05 spacing so no FD step crosses a tie.
    for _ in 0..INSTANCES {
        let (n, c) = (2, rand_shape(&mut rng, 1, 2));
        let hw = rand_shape(&mut rng, 3, 6);
        // Valid pooling needs an even extent; "same" pads odd ones.
        let pad = if hw.is_multiple_of(2) && rng.below(2) == 0 { Padding::Explicit(0) } else { Padding::Same };
        let pool = MaxPool2d::new((2, 2), 2, pad).map_err(e)?;
        let mut levels: Vec<f32> = (0..n * c * hw * hw).map(|i| i as f32 * 0.05 - 1.0).collect();
        rng.shuffle(&mut levels);
        let x = Tensor::new([n, c, hw, hw], levels).map_err(e)?;
        let (p, _) = pool.forward(&x).map_err(e)?;
        let feat = p.len() / n;
        let mut dense = Dense::new(feat, 3).map_err(e)?;
        dense.weight = Tensor::uniform([3, feat], -1.0, 1.0, &mut rng);
        dense.bias = Tensor::uniform([3], -0.5, 0.5, &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
        let loss = |xp: &Tensor| -> f64 {
            let (p, _) = pool.forward(xp).unwrap();
            let (z, _) = dense.forward(&p.reshape([n, feat]).unwrap()).unwrap();
            cross_entropy(&vbreathnet::nn::softmax(&z).unwrap(), &labels).unwrap().0
        };
        let (p, pcache) = pool.forward(&x).map_err(e)?;
        let pshape = p.shape().to_vec();
        let (z, dcache) = dense.forward(&p.reshape([n, feat]).map_err(e)?).map_err(e)?;
        let (_, gz) = cross_entropy(&vbreathnet::nn::softmax(&z).map_err(e)?, &labels).map_err(e)?;
        let gp = dense.backward(&dcache, &gz).map_err(e)?.input.reshape(pshape).map_err(e)?;
        let gx = pool.backward(&pcache, &gp).map_err(e)?;
        worst[2] = worst[2].max(rel_err(&f64s(&gx), &central(&x, H, loss)));
    }

    for _ in 0..INSTANCES {
        let (n, fin, fout) =
            (rand_shape(&mut rng, 1, 4), rand_shape(&mut rng, 1, 8), rand_shape(&mut rng, 1, 5));
        let mut d = Dense::new(fin, fout).map_err(e)?;
        d.weight = Tensor::uniform([fout, fin], -1.0, 1.0, &mut rng);
        d.bias = Tensor::uniform([fout], -1.0, 1.0, &mut rng);
        let x = Tensor::uniform([n, fin], -1.0, 1.0, &mut rng);
        let (y, cache) = d.forward(&x).map_err(e)?;
        let r = Tensor::uniform(y.shape().to_vec(), -1.0, 1.0, &mut rng);
        let g = d.backward(&cache, &r).map_err(e)?;
        let num_x = central(&x, H, |xp| dot(&d.forward(xp).unwrap().0, &r));
        let num_w = central(&d.weight, H, |wp| {
            let mut dd = d.clone();
            dd.weight = wp.clone();
            dot(&dd.forward(&x).unwrap().0, &r)
        });
        let num_b = central(&d.bias, H, |bp| {
            let mut dd = d.clone();
            dd.bias = bp.clone();
            dot(&dd.forward(&x).unwrap().0, &r)
        });
        for err in [
            rel_err(&f64s(&g.input), &num_x),
            rel_err(&f64s(&g.weight), &num_w),
            rel_err(&f64s(&g.bias), &num_b),
        ] {
            worst[3] = worst[3].max(err);
        }
    }

    for _ in 0..INSTANCES {
        let n = rand_shape(&mut rng, 1, 6);
        let z = Tensor::uniform([n, 3], -3.0, 3.0, &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
        let ce = |zp: &Tensor| {
            cross_entropy(&vbreathnet::nn::softmax(zp).unwrap(), &labels).unwrap().0
        };
        let (_, g) = cross_entropy(&vbreathnet::nn::softmax(&z).map_err(e)?, &labels).map_err(e)?;
        worst[4] = worst[4].max(rel_err(&f64s(&g), &central(&z, H, ce)));
    }

    let elapsed = t0.elapsed();
    let pass = worst.iter().all(|&w| w < 1e-3) && elapsed < Duration::from_secs(60);
    Ok((
        pass,
        format!(
            "{INSTANCES} instances each; max rel err conv {:.1e}, bn {:.1e}, maxpool {:.1e}, \
             dense {:.1e}, softmax+ce {:.1e} (< 1e-3); {}",
            worst[0], worst[1], worst[2], worst[3], worst[4], secs(elapsed)
        ),
    ))
}

// ---------------------------------------------------------------- 2

/// Six-loop convolution with its own padding arithmetic.
fn direct_conv(layer: &Conv2d, x: &Tensor) -> Option<Tensor> {
    let (n, c, h, w) = x.dims4().ok()?;
    let (kh, kw) = layer.kernel;
    let s = layer.stride;
    let (top, left, oh, ow) = match layer.padding {
        Padding::Explicit(p) => {
            let (ph, pw) = (h + 2 * p, w + 2 * p);
            // Windows must tile the padded plane exactly.
            if ph < kh || pw < kw || (ph - kh) % s != 0 || (pw - kw) % s != 0 {
                return None;
            }
            (p, p, (h + 2 * p - kh) / s + 1, (w + 2 * p - kw) / s + 1)
        }
        Padding::Same => {
            let (oh, ow) = (h.div_ceil(s), w.div_ceil(s));
            let th = ((oh - 1) * s + kh).saturating_sub(h);
            let tw = ((ow - 1) * s + kw).saturating_sub(w);
            (th / 2, tw / 2, oh, ow)
        }
    };
    let o = layer.out_channels;
    let mut out = vec![0.0f32; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = layer.bias.data()[oc] as f64;
                    for ch in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let y = (i * s + u) as isize - top as isize;
                                let xx = (j * s + v) as isize - left as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                let wv = layer.weight.data()[((oc * c + ch) * kh + u) * kw + v];
                                let xv = x.data()[((b * c + ch) * h + y as usize) * w + xx as usize];
                                acc += wv as f64 * xv as f64;
                            }
                        }
                    }
                    out[((b * o + oc) * oh + i) * ow + j] = acc as f32;
                }
            }
        }
    }
    Tensor::new([n, o, oh, ow], out).ok()
}

fn conv_oracle() -> Check {
    const CASES: usize = 100;
    let t0 = Instant::now();
    let mut rng = Rng::new(SEED + 2);
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut same = 0;
    let mut rejected = 0;
    while done < CASES {
        let (cin, cout) = (rand_shape(&mut rng, 1, 4), rand_shape(&mut rng, 1, 4));
        let (kh, kw) = (rand_shape(&mut rng, 1, 5), rand_shape(&mut rng, 1, 5));
        let stride = rand_shape(&mut rng, 1, 3);
        let pad = if rng.below(2) == 0 { Padding::Same } else { Padding::Explicit(rng.below(3)) };
        let (h, w) = (rand_shape(&mut rng, 3, 12), rand_shape(&mut rng, 3, 12));
        let mut conv = Conv2d::new(cin, cout, (kh, kw), stride, pad).map_err(e)?;
        conv.weight = Tensor::uniform(conv.weight.shape().to_vec(), -1.0, 1.0, &mut rng);
        conv.bias = Tensor::uniform([cout], -1.0, 1.0, &mut rng);
        let x = Tensor::uniform([rand_shape(&mut rng, 1, 2), cin, h, w], -1.0, 1.0, &mut rng);
        let Some(want) = direct_conv(&conv, &x) else {
            if conv.forward(&x).is_ok() {
                return Ok((false, format!("accepted non-integral geometry {conv:?} on {:?}", x.shape())));
            }
            rejected += 1;
            continue;
        };
        let (got, _) = conv.forward(&x).map_err(e)?;
        if got.shape() != want.shape() {
            return Ok((false, format!("shape {:?} vs oracle {:?} for {conv:?}", got.shape(), want.shape())));
        }
        worst = worst.max(rel_err(&f64s(&got), &f64s(&want)));
        same += usize::from(pad == Padding::Same);
        done += 1;
    }
    let elapsed = t0.elapsed();
    Ok((
        worst < 1e-5 && elapsed < Duration::from_secs(30),
        format!(
            "{CASES} cases ({same} same-padded), max rel err {worst:.1e} (< 1e-5); \
             {rejected} non-integral geometries rejected as config errors; {}",
            secs(elapsed)
        ),
    ))
}

// ---------------------------------------------------------------- 3

fn param_count() -> Check {
    const PUBLISHED: f64 = 792_291.0;
    let cfg = ModelConfig::reference();
    let counted = cfg.count_params().map_err(e)?;
    let model = Model::build(&cfg, &mut Rng::new(cfg.seed)).map_err(e)?;
    let allocated: usize = model.params().iter().map(|t| t.len()).sum();

    // Layer-by-layer: 3×3 convs with bias, two BN scalars per channel,
    // six 2× pools take 256 to 4, then 1024 → 512 → 3.
    let filters = [1usize, 128, 64, 32, 64, 128, 64];
    let conv: usize = filters.windows(2).map(|p| p[1] * p[0] * 9 + p[1]).sum();
    let bn: usize = filters[1..].iter().map(|f| 2 * f).sum();
    let flat = 4 * 4 * 64;
    let hand = conv + bn + (flat * 512 + 512) + (512 * 3 + 3);

    let dev = (counted as f64 - PUBLISHED).abs() / PUBLISHED;
    Ok((
        dev <= 0.02 && counted == allocated && counted == hand,
        format!(
            "count {counted}, allocated {allocated}, hand sum {hand}; {:.2}% from 792,291 (≤ 2%)",
            dev * 100.0
        ),
    ))
}

// ---------------------------------------------------------------- 4

fn lr_table() -> Check {
    let s = LrSchedule::default();
    let mut mismatches = Vec::new();
    let mut literal = |epochs: std::ops::RangeInclusive<usize>, want: f64| {
        for ep in epochs {
            if s.lr_at_epoch(ep) != want {
                mismatches.push(format!("epoch {ep}: {} != {want}", s.lr_at_epoch(ep)));
            }
        }
    };
    literal(0..=4, 0.001);
    literal(5..=9, 0.0005);
    literal(10..=14, 0.00025);
    literal(15..=19, 0.000125);
    literal(20..=24, 0.0000625);
    literal(50..=60, 0.000001);
    literal(1000..=1004, 0.000001);
    // Every epoch against 0.001 / 2^k, floored.
    for ep in 0..200usize {
        let want = (0.001 / f64::powi(2.0, (ep / 5) as i32)).max(1e-6);
        if s.lr_at_epoch(ep) != want {
            mismatches.push(format!("epoch {ep}: {} != {want}", s.lr_at_epoch(ep)));
        }
    }
    let first_floor = (0..).find(|&ep| s.lr_at_epoch(ep) == 1e-6).unwrap_or(0);
    Ok((
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("exact for epochs 0-199 and spot checks; floor 1e-6 from epoch {first_floor}")
        } else {
            mismatches.join("; ")
        },
    ))
}

// ---------------------------------------------------------------- 5

fn metrics() -> Check {
    // Rows true, columns predicted. Column sums give the precisions,
    // row sums the recalls: Normal 47/50, 47/47; Covid 54/54, 54/60;
    // Pneumonia 97/100, 97/97.
    let counts = [[47, 0, 0], [3, 54, 3], [0, 0, 97]];
    let cm = ConfusionMatrix { counts };
    let rows = class_metrics(&cm).map_err(e)?;
    let want = [(0.94, 1.00, 0.97), (1.00, 0.90, 0.95), (0.97, 1.00, 0.98)];
    let mut ok = true;
    let mut got = Vec::new();
    for (m, (p, r, f)) in rows.classes.iter().zip(want) {
        let (mp, mr, mf) = (
            round2(m.precision.unwrap_or(f64::NAN)),
            round2(m.recall.unwrap_or(f64::NAN)),
            round2(m.f1.unwrap_or(f64::NAN)),
        );
        ok &= mp == p && mr == r && mf == f;
        got.push(format!("{} {mp:.2}/{mr:.2}/{mf:.2}", m.class));
    }
    Ok((ok, format!("P/R/F1 {} (expect 0.97, 0.95, 0.98)", got.join(", "))))
}

// ---------------------------------------------------------------- 6, 7

fn train_desk(manifest: &DatasetManifest) -> Result<(TrainOutcome, Duration), String> {
    let train = InMemoryDataset::collect(&ManifestDataset::new(manifest, Some(Split::Train))).map_err(e)?;
    let test = InMemoryDataset::collect(&ManifestDataset::new(manifest, Some(Split::Test))).map_err(e)?;
    let cfg = ModelConfig::desk_scale();
    let model = Model::build(&cfg, &mut Rng::new(cfg.seed)).map_err(e)?;
    let tc = TrainConfig { epochs: 40, batch_size: 8, ..TrainConfig::default() };
    let t0 = Instant::now();
    let out = train_epochs(model, &train, &test, &tc, &Rng::new(SEED)).map_err(e)?;
    Ok((out, t0.elapsed()))
}

type Desk = ((bool, String), TrainOutcome, tempfile::TempDir);

fn desk_training() -> Result<Desk, String> {
    let dir = tempfile::tempdir().map_err(e)?;
    let params = SynthParams { per_class: 60, size: 64 };
    generate_synthetic(dir.path(), &params, SEED).map_err(e)?;
    let manifest = build_manifest(dir.path(), &CurationParams::default(), SEED).map_err(e)?;
    let counts = manifest.class_counts(None);

    let (first, elapsed) = train_desk(&manifest)?;
    let (second, _) = train_desk(&manifest)?;
    let deterministic = first.best.to_bytes().map_err(e)? == second.best.to_bytes().map_err(e)?
        && first.last.to_bytes().map_err(e)? == second.last.to_bytes().map_err(e)?
        && first.report.to_csv() == second.report.to_csv();

    let train = InMemoryDataset::collect(&ManifestDataset::new(&manifest, Some(Split::Train))).map_err(e)?;
    let test = InMemoryDataset::collect(&ManifestDataset::new(&manifest, Some(Split::Test))).map_err(e)?;
    let (_, train_acc) = evaluate_loss(&first.model, &train, 32).map_err(e)?;
    let (_, test_acc) = evaluate_loss(&first.model, &test, 32).map_err(e)?;
    let last = first.report.records.last().ok_or("no epochs")?;
    let epochs = first.report.records.len();

    let pass = train_acc >= 0.95
        && last.train_accuracy >= 0.95
        && test_acc >= 0.90
        && epochs <= 50
        && elapsed < Duration::from_secs(300)
        && deterministic;
    let detail = format!(
        "{counts:?} images, {epochs} epochs: train acc {train_acc:.3} (inference) / {:.3} \
         (running, last epoch), held-out acc {test_acc:.3}; {} per run; rerun identical: {deterministic}",
        last.train_accuracy,
        secs(elapsed)
    );
    Ok(((pass, detail), first, dir))
}

fn localization(model: &Model, root: &Path) -> Check {
    const PER_CLASS: usize = 10;
    let manifest = build_manifest(root, &CurationParams::default(), SEED).map_err(e)?;
    let gt = vbreathnet::data::GroundTruth::load(&root.join(vbreathnet::data::GROUND_TRUTH_FILE))
        .map_err(e)?;
    let view = ManifestDataset::new(&manifest, Some(Split::Test));
    let mut taken = [0usize; 3];
    let mut scores = [Vec::new(), Vec::new(), Vec::new()];
    for i in 0..view.len() {
        let s = view.sample(i);
        let c = s.label.index();
        if taken[c] == PER_CLASS {
            continue;
        }
        taken[c] += 1;
        let entry = gt.find(&s.path).ok_or_else(|| format!("no ground truth for {}", s.path))?;
        let img = view.image(i).map_err(e)?;
        let cam = gradcam(model, &img.to_tensor(), c, None).map_err(e)?;
        scores[c].push(top_decile_inside(&cam.heatmap, &entry.patch));
    }
    let all: Vec<f64> = scores.iter().flatten().copied().collect();
    if all.len() != 3 * PER_CLASS {
        return Ok((false, format!("only {} test images", all.len())));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let avg = mean(&all);
    Ok((
        avg >= 0.5,
        format!(
            "{} test images, top-decile inside patch {avg:.3} (≥ 0.5); per class {:.2}/{:.2}/{:.2}",
            all.len(),
            mean(&scores[0]),
            mean(&scores[1]),
            mean(&scores[2])
        ),
    ))
}

// ---------------------------------------------------------------- 8

/// 4×4 ramp input, 1×1 conv with channels `x` and `15 − x`, dense head.
/// Class 0 weights every channel-0 cell by 0.5 and channel-1 cell by 0.25,
/// so α = (0.5, 0.25) and the map is 0.5p + 0.25(15 − p) = 3.75 + 0.25p,
/// min-max normalized to p/15. Class 1 has α = (−0.5, 0.5): the map is
/// 7.5 − p, rectified to max(0, 7.5 − p), normalized by 7.5.
fn gradcam_oracle() -> Check {
    let cfg = ModelConfig {
        input_shape: [1, 4, 4],
        seed: 0,
        layers: vec![
            LayerSpec::Conv { filters: 2, kernel: [1, 1], stride: 1, padding: Padding::Same },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 3 },
            LayerSpec::Softmax,
        ],
    };
    let mut m = Model::zeroed(&cfg).map_err(e)?;
    if let Layer::Conv(c) = &mut m.layers_mut()[0] {
        c.weight.data_mut().copy_from_slice(&[1.0, -1.0]);
        c.bias.data_mut().copy_from_slice(&[0.0, 15.0]);
    }
    if let Layer::Dense(d) = &mut m.layers_mut()[2] {
        for (row, (a, b)) in d.weight.data_mut().chunks_mut(32).zip([(0.5, 0.25), (-0.5, 0.5), (0.1, 0.1)]) {
            row[..16].fill(a);
            row[16..].fill(b);
        }
    }
    let x = Tensor::from_fn([1, 4, 4], |p| p as f32);
    type HandMap = fn(f32) -> f32;
    let cases: [(usize, [f32; 2], HandMap); 2] = [
        (0, [0.5, 0.25], |p| p / 15.0),
        (1, [-0.5, 0.5], |p| (7.5 - p).max(0.0) / 7.5),
    ];
    let mut worst = 0.0f32;
    for (class, alpha, map) in cases {
        let cam = gradcam(&m, &x, class, Some(0)).map_err(e)?;
        for (got, want) in cam.weights.iter().zip(alpha) {
            worst = worst.max((got - want).abs());
        }
        for (p, &v) in cam.heatmap.values.data().iter().enumerate() {
            worst = worst.max((v - map(p as f32)).abs());
        }
    }
    Ok((worst < 1e-5, format!("max abs deviation from hand values {worst:.1e} (< 1e-5)")))
}

// ---------------------------------------------------------------- 9

fn curation() -> Check {
    let dir = tempfile::tempdir().map_err(e)?;
    let root = dir.path().join("blur");
    generate_synthetic(&root, &SynthParams { per_class: 34, size: 64 }, SEED).map_err(e)?;
    let mut files: Vec<_> = ClassLabel::ALL
        .iter()
        .flat_map(|c| fs::read_dir(root.join(c.dir_name())).unwrap())
        .map(|d| d.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    files.sort();
    files.truncate(100);
    let mut lower = 0;
    for (i, f) in files.iter().enumerate() {
        let img = GrayImage::load(f).map_err(e)?;
        let sigma = [0.8, 1.5, 3.0][i % 3];
        let blurred = gaussian_blur(&img, sigma).map_err(e)?;
        if laplacian_variance(&blurred).map_err(e)? < laplacian_variance(&img).map_err(e)? {
            lower += 1;
        }
    }

    // Unequal raw classes, padded to a common target.
    let raw = dir.path().join("unbalanced");
    generate_synthetic(&raw, &SynthParams { per_class: 12, size: 32 }, SEED).map_err(e)?;
    for (class, drop) in [(ClassLabel::Covid, 5), (ClassLabel::Pneumonia, 2)] {
        let mut imgs: Vec<_> = fs::read_dir(raw.join(class.dir_name()))
            .map_err(e)?
            .map(|d| d.unwrap().path())
            .collect();
        imgs.sort();
        for p in imgs.into_iter().take(drop) {
            fs::remove_file(p).map_err(e)?;
        }
    }
    let params = CurationParams { target_per_class: Some(20), resolution: [32, 32], ..Default::default() };
    let curated = curate(&raw, &params, SEED).map_err(e)?;
    let raw_counts = curated.class_counts(None);
    let balanced = balance_classes(&curated, 20, &mut Rng::new(SEED)).map_err(e)?;
    let built = build_manifest(&raw, &params, SEED).map_err(e)?;
    let balanced_ok = balanced.class_counts(None) == [20; 3]
        && built.class_counts(None) == [20; 3];

    // 3200 per class: plain originals, and 400 sources with 7 augments each.
    let mut split_ok = true;
    for group in [1usize, 8] {
        let m = synthetic_manifest(3200, group);
        let s = split_train_test(&m, 0.8, &mut Rng::new(SEED)).map_err(e)?;
        split_ok &= s.class_counts(Some(Split::Train)) == [2560; 3]
            && s.class_counts(Some(Split::Test)) == [640; 3];
    }

    Ok((
        lower == 100 && balanced_ok && split_ok,
        format!(
            "blur lowered sharpness {lower}/100; raw {raw_counts:?} balanced to {:?} \
             (train split {:?}, sources kept whole); 3200/class split 2560/640: {split_ok}",
            built.class_counts(None),
            built.class_counts(Some(Split::Train))
        ),
    ))
}

/// In-memory manifest with `per_class` samples per class in groups of
/// `group` (one original plus augmented copies).
fn synthetic_manifest(per_class: usize, group: usize) -> DatasetManifest {
    let mut samples = Vec::new();
    for class in ClassLabel::ALL {
        for i in 0..per_class {
            let src = format!("{}/img_{:05}.png", class.dir_name(), i / group);
            let k = i % group;
            let provenance = if k == 0 {
                Provenance::Original
            } else {
                Provenance::Augmented {
                    source: src.clone(),
                    transform: Transform {
                        rotation_deg: k as f32,
                        translate_x: 0.0,
                        translate_y: 0.0,
                        zoom: 1.0,
                        brightness: 0.0,
                    },
                }
            };
            samples.push(Sample {
                path: if k == 0 { src } else { format!("{src}#aug{k}") },
                label: class,
                blur_score: 1.0,
                contrast_score: 0.2,
                split: None,
                provenance,
            });
        }
    }
    DatasetManifest {
        format_version: MANIFEST_VERSION,
        root: "unused".into(),
        seed: SEED,
        params: CurationParams::default(),
        samples,
        rejected: Vec::new(),
    }
}

// ---------------------------------------------------------------- 10

fn reproducibility() -> Check {
    const OUTPUTS: [&str; 8] = [
        "data/synthetic/ground_truth.json",
        "runs/curate/manifest.json",
        "runs/train/best.ckpt",
        "runs/train/last.ckpt",
        "runs/train/train_report.csv",
        "runs/train/train_report.json",
        "runs/eval/metrics.txt",
        "runs/eval/metrics.json",
    ];
    let t0 = Instant::now();
    let dirs = [tempfile::tempdir().map_err(e)?, tempfile::tempdir().map_err(e)?];
    for dir in &dirs {
        for cmd in ["synth", "curate", "train", "eval"] {
            let out = Command::new(BIN)
                .arg(cmd)
                .current_dir(dir.path())
                .env("RUST_LOG", "warn")
                .output()
                .map_err(e)?;
            if !out.status.success() {
                return Ok((false, format!("{cmd} failed: {}", String::from_utf8_lossy(&out.stderr).trim())));
            }
        }
    }
    let mut differing = Vec::new();
    for rel in OUTPUTS {
        let a = fs::read(dirs[0].path().join(rel)).map_err(|err| format!("{rel}: {err}"))?;
        let b = fs::read(dirs[1].path().join(rel)).map_err(|err| format!("{rel}: {err}"))?;
        if a != b {
            differing.push(rel);
        }
    }
    Ok((
        differing.is_empty(),
        if differing.is_empty() {
            format!("two default synth→curate→train→eval runs, {} outputs byte-identical; {}", OUTPUTS.len(), secs(t0.elapsed()))
        } else {
            format!("differing outputs: {}", differing.join(", "))
        },
    ))
}

// ---------------------------------------------------------------- 11

fn checkpoint_round_trip(trained: Option<Model>) -> Check {
    let dir = tempfile::tempdir().map_err(e)?;
    let mut rng = Rng::new(SEED + 11);
    let reference = {
        let cfg = ModelConfig::reference();
        let mut m = Model::build(&cfg, &mut Rng::new(cfg.seed)).map_err(e)?;
        // Non-trivial running statistics so inference exercises them.
        for b in m.buffers_mut() {
            let shape = b.shape().to_vec();
            *b = Tensor::uniform(shape, 0.5, 1.5, &mut rng);
        }
        m
    };
    let mut models = vec![("reference", reference)];
    if let Some(m) = trained {
        models.push(("trained desk", m));
    }
    let mut details = Vec::new();
    let mut ok = true;
    for (name, model) in models {
        let path = dir.path().join(format!("{}.ckpt", name.replace(' ', "_")));
        Checkpoint::from_model(&model).save(&path).map_err(e)?;
        let loaded = Checkpoint::load(&path).map_err(e)?.to_model().map_err(e)?;
        let [c, h, w] = model.config().input_shape;
        let mut identical = 0;
        for _ in 0..10 {
            let x = Tensor::uniform([1, c, h, w], 0.0, 1.0, &mut rng);
            let a = model.infer(&x).map_err(e)?;
            let b = loaded.infer(&x).map_err(e)?;
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            if bits(a.logits()) == bits(b.logits()) && bits(a.probs()) == bits(b.probs()) {
                identical += 1;
            }
        }
        ok &= identical == 10;
        details.push(format!("{name} {identical}/10"));
    }
    Ok((ok, format!("bitwise-identical forward after save/load: {}", details.join(", "))))
}
