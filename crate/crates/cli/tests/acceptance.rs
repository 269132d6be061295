//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any criterion fails.
//!
//! The real-backend comparison is opt-in: set `ALE_ACCEPTANCE_REAL=1`.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ale_core::bench::{ManifestImage, ManifestObject};
use ale_core::mask::dilation_radius;
use ale_core::prompt::mock_tokenize;
use ale_core::seed::rng_from_seed;
use ale_core::{
    backend_for_kind, dilate_mask, encode_object_restricted, generate_scenarios, resolve_schedule, rgb_cam_blend,
    run_edit, standard_attention, tels, tils, AttentionContext, AttributeDictionaries, BackendKind, DiffusionBackend,
    EditConfig, EditRequest, EditType, EosStrategy, GridFilter, Image, Latent, Manifest, Mask, Matrix, MockEncoder,
    MockSimilarity, NoiseCoupling, ObjectPromptPair, ProbeBackend, PromptSide, RegionMasks, Resolution,
    SimilarityScorer, StaticMaskProvider, TextEncoder, ToyBackend,
};
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::seq::SliceRandom;
use rand::Rng;

type Check = fn() -> Result<String, String>;

struct Criterion {
    id: u8,
    name: &'static str,
    limit: Option<Duration>,
    check: Check,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let secs = |s| Some(Duration::from_secs(s));
    let criteria = [
        Criterion { id: 1, name: "background blend exactness", limit: secs(10), check: bb_exactness },
        Criterion { id: 2, name: "virtual inversion exactness", limit: secs(5), check: virtual_inversion },
        Criterion { id: 3, name: "region-guided attention locality", limit: secs(10), check: rgb_cam_locality },
        Criterion { id: 4, name: "region-guided attention reduction", limit: None, check: rgb_cam_reduction },
        Criterion { id: 5, name: "object-restricted splice", limit: None, check: ore_splice },
        Criterion { id: 6, name: "TELS/TILS brute-force equivalence", limit: None, check: leakage_oracle },
        Criterion { id: 7, name: "identity-backend coupling", limit: None, check: identity_coupling },
        Criterion { id: 8, name: "injection schedule semantics", limit: None, check: schedule_semantics },
        Criterion { id: 9, name: "dilation radius at 768px", limit: None, check: dilation_hyperparameter },
        Criterion { id: 10, name: "benchmark grid size and determinism", limit: secs(5), check: benchmark_grid },
        Criterion { id: 11, name: "end-to-end CLI determinism", limit: None, check: cli_determinism },
    ];

    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(c.check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(&p))));
        let elapsed = start.elapsed();
        let result = match (result, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("[PASS] {:>2} {} ({detail}; {elapsed:.2?})", c.id, c.name),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {:>2} {} ({why}; {elapsed:.2?})", c.id, c.name);
            }
        }
    }

    if std::env::var_os("ALE_ACCEPTANCE_REAL").is_some() {
        match real_backend_ablation() {
            Ok(detail) => println!("[PASS] 12 real-backend leakage ablation ({detail})"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] 12 real-backend leakage ablation ({why})");
            }
        }
    } else {
        println!("[SKIP] 12 real-backend leakage ablation (opt-in: set ALE_ACCEPTANCE_REAL=1; not CI-gating)");
    }

    let _ = panic::take_hook();
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all gating acceptance criteria passed");
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn pairs(specs: &[&str]) -> Vec<ObjectPromptPair> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| ObjectPromptPair::parse(i + 1, s).unwrap())
        .collect()
}

fn textured(res: Resolution) -> Image {
    Image::from_fn(res.width, res.height, |c, y, x| {
        (((x * 7 + y * 3 + c * 29) % 61) as f32 / 60.0) * 0.8 + 0.1
    })
}

fn random_rect(rng: &mut impl Rng, res: Resolution) -> Mask {
    let h = rng.gen_range(res.height / 6..res.height / 2);
    let w = rng.gen_range(res.width / 6..res.width / 2);
    let y0 = rng.gen_range(0..res.height - h);
    let x0 = rng.gen_range(0..res.width - w);
    Mask::from_fn(res, |y, x| (y0..y0 + h).contains(&y) && (x0..x0 + w).contains(&x))
}

fn bb_exactness() -> Result<String, String> {
    let backend = ToyBackend::from_golden().map_err(|e| e.to_string())?;
    let encoder = MockEncoder::default();
    let res = backend.image_resolution();
    let mut rng = rng_from_seed(11);
    let masks = vec![random_rect(&mut rng, res), random_rect(&mut rng, res)];
    let req = EditRequest {
        image: textured(res),
        pairs: pairs(&["a wolf->a cat", "a chair->a golden chair"]),
        config: EditConfig { seed: 5, ..EditConfig::default() },
        stripped_prompts: None,
    };
    let out = run_edit(&req, &backend, &encoder, &mut StaticMaskProvider::new(masks)).map_err(|e| e.to_string())?;
    let latent_res = backend.latent_shape().resolution();
    let background = &out
        .masks
        .as_ref()
        .and_then(|m| m.level(latent_res))
        .ok_or("no latent-resolution masks")?
        .background;
    let n = latent_res.pixels();
    let (z, z0) = (out.final_target.as_slice(), out.z0_src.as_slice());
    let mut checked = 0;
    let mut foreground_changed = false;
    for (i, (a, b)) in z.iter().zip(z0).enumerate() {
        if background.at(i % n) {
            ensure(a.to_bits() == b.to_bits(), || format!("background element {i}: {a} vs {b}"))?;
            checked += 1;
        } else if a != b {
            foreground_changed = true;
        }
    }
    ensure(checked > 0, || "background is empty".into())?;
    ensure(foreground_changed, || "edit changed nothing inside the objects".into())?;
    Ok(format!("{checked} background values bit-identical"))
}

fn virtual_inversion() -> Result<String, String> {
    let backend = ToyBackend::from_golden().map_err(|e| e.to_string())?;
    let res = backend.image_resolution();
    let req = EditRequest {
        image: textured(res),
        pairs: pairs(&["a vase->a blue vase", "a book->a red book"]),
        config: EditConfig { seed: 3, debug: true, ..EditConfig::default() },
        stripped_prompts: None,
    };
    let mut rng = rng_from_seed(2);
    let masks = vec![random_rect(&mut rng, res), random_rect(&mut rng, res)];
    let out = run_edit(&req, &backend, &MockEncoder::default(), &mut StaticMaskProvider::new(masks))
        .map_err(|e| e.to_string())?;
    ensure(out.trace.steps.len() == 15, || format!("{} steps", out.trace.steps.len()))?;
    for s in &out.trace.steps {
        ensure(s.inversion_error == Some(0.0), || format!("step {}: library error {:?}", s.step, s.inversion_error))?;
        // Independent evaluation of ε̂ = (z − √ᾱ z0)/√(1−ᾱ), then
        // (z − √(1−ᾱ) ε̂)/√ᾱ, in the same order with exact rationals.
        let z = s.z_src.as_ref().ok_or("debug trace lacks z_src")?;
        let exact = |v: f64| BigRational::from_float(v).unwrap();
        let (a, b) = (exact(s.alpha.sqrt()), exact((1.0 - s.alpha).sqrt()));
        for (i, (&zi, &z0)) in z.as_slice().iter().zip(out.z0_src.as_slice()).enumerate() {
            let (zr, z0r) = (exact(f64::from(zi)), exact(f64::from(z0)));
            let eps = (&zr - &a * &z0r) / &b;
            let clean = ((&zr - &b * &eps) / &a).to_f64().unwrap() as f32;
            ensure(clean == z0, || format!("step {} element {i}: {clean} vs {z0}", s.step))?;
        }
    }
    Ok("max abs error 0 at all 15 steps".into())
}

fn random_stochastic(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::from_fn(rows, cols, |_, _| rng.gen_range(0.01f32..1.0));
    for r in 0..rows {
        let sum: f32 = m.row(r).iter().sum();
        let row: Vec<f32> = m.row(r).iter().map(|v| v / sum).collect();
        m.set_row(r, &row);
    }
    m
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0f32..1.0))
}

/// Random labelling of every pixel into background or one of `k` objects.
fn random_partition(rng: &mut impl Rng, res: Resolution, k: usize) -> (Vec<Option<usize>>, RegionMasks) {
    let labels: Vec<Option<usize>> = (0..res.pixels())
        .map(|_| {
            let l = rng.gen_range(0..=k);
            (l < k).then_some(l)
        })
        .collect();
    let mask_of = |want: Option<usize>| Mask::from_fn(res, |y, x| labels[y * res.width + x] == want);
    let regions = RegionMasks {
        objects: (0..k).map(|i| mask_of(Some(i))).collect(),
        background: mask_of(None),
    };
    (labels, regions)
}

fn rgb_cam_locality() -> Result<String, String> {
    let mut rng = rng_from_seed(33);
    let res = Resolution::new(8, 8);
    let (tokens, dv) = (12, 6);
    let mut inside_nonzero = 0;
    for trial in 0..100 {
        let k = if trial % 2 == 0 { 2 } else { 3 };
        let (labels, regions) = random_partition(&mut rng, res, k);
        let map = random_stochastic(&mut rng, res.pixels(), tokens);
        let values: Vec<Matrix> = (0..k).map(|_| random_matrix(&mut rng, tokens, dv)).collect();
        let base = random_matrix(&mut rng, tokens, dv);
        let ctx = AttentionContext { map: &map, values: &values, base_values: &base, masks: &regions, resolution: res };
        let before = rgb_cam_blend(&ctx).map_err(|e| e.to_string())?;
        let j = rng.gen_range(0..k);
        let mut perturbed = values.clone();
        perturbed[j].add_assign(&random_matrix(&mut rng, tokens, dv));
        let after = rgb_cam_blend(&AttentionContext { values: &perturbed, ..ctx }).map_err(|e| e.to_string())?;
        let mut changed_inside = false;
        for (p, label) in labels.iter().enumerate() {
            let diff = before.row(p).iter().zip(after.row(p)).any(|(a, b)| a.to_bits() != b.to_bits());
            if *label == Some(j) {
                changed_inside |= diff;
            } else {
                ensure(!diff, || format!("trial {trial}: pixel {p} outside object {j} changed"))?;
            }
        }
        inside_nonzero += usize::from(changed_inside);
    }
    ensure(inside_nonzero >= 99, || format!("inside change in only {inside_nonzero}/100 trials"))?;
    Ok(format!("outside diff exactly 0 in 100/100, inside nonzero in {inside_nonzero}/100"))
}

fn rgb_cam_reduction() -> Result<String, String> {
    let mut rng = rng_from_seed(44);
    let mut worst = 0f32;
    for _ in 0..50 {
        let res = Resolution::new(rng.gen_range(2..9), rng.gen_range(2..9));
        let (tokens, dv) = (rng.gen_range(3..16), rng.gen_range(1..8));
        let map = random_stochastic(&mut rng, res.pixels(), tokens);
        let v1 = random_matrix(&mut rng, tokens, dv);
        let base = random_matrix(&mut rng, tokens, dv);
        let regions = RegionMasks { objects: vec![Mask::full(res)], background: Mask::empty(res) };
        let values = [v1.clone()];
        let ctx = AttentionContext { map: &map, values: &values, base_values: &base, masks: &regions, resolution: res };
        let blended = rgb_cam_blend(&ctx).map_err(|e| e.to_string())?;
        let library = standard_attention(&map, &v1);
        for p in 0..res.pixels() {
            for c in 0..dv {
                let oracle: f64 = (0..tokens).map(|t| f64::from(map.get(p, t)) * f64::from(v1.get(t, c))).sum();
                worst = worst.max((blended.get(p, c) - oracle as f32).abs());
                worst = worst.max((library.get(p, c) - oracle as f32).abs());
            }
        }
    }
    ensure(worst <= 1e-6, || format!("max abs diff {worst:e}"))?;
    Ok(format!("max abs diff {worst:e} over 50 trials"))
}

const COLORS: &[&str] = &["red", "blue", "green", "golden", "purple", "white", "black"];
const OBJECTS: &[&str] = &["car", "dog", "cup", "lamp", "chair", "apple", "boat", "vase"];
const MATERIALS: &[&str] = &["wooden", "glass", "marble", "metal"];

fn random_phrase(rng: &mut impl Rng) -> String {
    let mut words = vec!["a"];
    if rng.gen_bool(0.6) {
        words.push(COLORS.choose(rng).unwrap());
    }
    if rng.gen_bool(0.4) {
        words.push(MATERIALS.choose(rng).unwrap());
    }
    words.push(OBJECTS.choose(rng).unwrap());
    words.join(" ")
}

fn bits(row: &[f32]) -> Vec<u32> {
    row.iter().map(|v| v.to_bits()).collect()
}

/// Expected rows of each object in the joined prompt, from token counts.
fn oracle_spans(prompts: &[String]) -> Vec<std::ops::Range<usize>> {
    let connective = mock_tokenize(" and ").len();
    let mut start = 1;
    prompts
        .iter()
        .map(|p| {
            let len = mock_tokenize(p).len();
            let span = start..start + len;
            start += len + connective;
            span
        })
        .collect()
}

fn ore_splice() -> Result<String, String> {
    let encoder = MockEncoder::default();
    let mut rng = rng_from_seed(55);
    for trial in 0..50 {
        let k = rng.gen_range(1..=3);
        let targets: Vec<String> = (0..k).map(|_| random_phrase(&mut rng)).collect();
        let make = |targets: &[String]| -> Vec<ObjectPromptPair> {
            targets
                .iter()
                .enumerate()
                .map(|(i, t)| ObjectPromptPair::new(i + 1, format!("a thing {i}"), t.clone()).unwrap())
                .collect()
        };
        let ore = encode_object_restricted(&make(&targets), PromptSide::Target, &encoder, EosStrategy::Ore, None)
            .map_err(|e| e.to_string())?;
        let spans = oracle_spans(&targets);
        ensure(ore.spans == spans, || format!("trial {trial}: spans {:?} vs oracle {spans:?}", ore.spans))?;
        for (i, (span, t)) in spans.iter().zip(&targets).enumerate() {
            let isolated = encoder.encode(t).map_err(|e| e.to_string())?;
            for (offset, row) in span.clone().enumerate() {
                ensure(bits(ore.base.rows.row(row)) == bits(isolated.rows.row(1 + offset)), || {
                    format!("trial {trial}: object {i} row {row} differs from isolated encoding")
                })?;
            }
        }

        let j = rng.gen_range(0..k);
        let mut changed = targets.clone();
        while changed[j] == targets[j] {
            changed[j] = random_phrase(&mut rng);
        }
        let ore2 = encode_object_restricted(&make(&changed), PromptSide::Target, &encoder, EosStrategy::Ore, None)
            .map_err(|e| e.to_string())?;
        for i in (0..k).filter(|&i| i != j) {
            ensure(ore.per_object[i] == ore2.per_object[i], || format!("trial {trial}: E'_{i} changed"))?;
            let (a, b) = (&ore.spans[i], &ore2.spans[i]);
            for (ra, rb) in a.clone().zip(b.clone()) {
                ensure(bits(ore.base.rows.row(ra)) == bits(ore2.base.rows.row(rb)), || {
                    format!("trial {trial}: spliced rows of object {i} changed")
                })?;
            }
        }
    }
    Ok("50 prompt sets spliced bit-exactly, neighbours unaffected".into())
}

/// Zeroes every pixel outside `keep`.
fn keep_only(img: &Image, keep: &Mask) -> Image {
    Image::from_fn(img.width(), img.height(), |c, y, x| if keep.get(y, x) { img.get(c, y, x) } else { 0.0 })
}

fn leakage_oracle() -> Result<String, String> {
    let scorer = MockSimilarity;
    let mut rng = rng_from_seed(66);
    let res = Resolution::new(24, 24);
    let mut cases = 0;
    for k in 1..=3 {
        for _ in 0..5 {
            let (_, regions) = random_partition(&mut rng, res, k);
            let img = Image::from_fn(res.width, res.height, |_, _, _| rng.gen_range(0.0f32..1.0));
            let targets: Vec<String> = (0..k).map(|_| random_phrase(&mut rng)).collect();
            let t = tels(&img, &regions, &targets, &scorer).map_err(|e| e.to_string())?;
            let bg = keep_only(&img, &regions.background);
            let mut sum = 0.0;
            for target in &targets {
                sum += scorer.score(&bg, target);
            }
            let oracle_tels = sum / k as f64;
            ensure(t == oracle_tels, || format!("K={k}: TELS {t} vs oracle {oracle_tels}"))?;

            let ti = tils(&img, &regions, &targets, &scorer).map_err(|e| e.to_string())?;
            let mut pairs = Vec::new();
            for j in 0..k {
                for i in 0..k {
                    if i != j {
                        pairs.push(scorer.score(&keep_only(&img, &regions.objects[j]), &targets[i]));
                    }
                }
            }
            let oracle_tils = (!pairs.is_empty()).then(|| pairs.iter().sum::<f64>() / pairs.len() as f64);
            ensure(ti == oracle_tils, || format!("K={k}: TILS {ti:?} vs oracle {oracle_tils:?}"))?;
            ensure((k == 1) == ti.is_none(), || format!("K={k}: TILS presence {ti:?}"))?;
            cases += 1;
        }
    }
    Ok(format!("{cases} cases exact, TILS absent for one object"))
}

fn identity_run(coupling: NoiseCoupling) -> Result<(Vec<(Latent, Latent)>, Latent, Latent), String> {
    let toy = ToyBackend::from_golden().map_err(|e| e.to_string())?;
    let backend = ProbeBackend::identity(toy, 0.9);
    let res = backend.image_resolution();
    let req = EditRequest {
        image: textured(res),
        pairs: pairs(&["a cat->a dog"]),
        config: EditConfig {
            seed: 9,
            debug: true,
            background_blend: false,
            noise_coupling: coupling,
            ..EditConfig::default()
        },
        stripped_prompts: None,
    };
    let mut rng = rng_from_seed(8);
    let masks = vec![random_rect(&mut rng, res)];
    let out = run_edit(&req, &backend, &MockEncoder::default(), &mut StaticMaskProvider::new(masks))
        .map_err(|e| e.to_string())?;
    let steps = out
        .trace
        .steps
        .iter()
        .map(|s| (s.z_src.clone().unwrap(), s.z_tgt.clone().unwrap()))
        .collect();
    Ok((steps, out.final_source, out.final_target))
}

fn identity_coupling() -> Result<String, String> {
    let (steps, src, tgt) = identity_run(NoiseCoupling::Shared)?;
    ensure(steps.len() == 15, || format!("{} steps", steps.len()))?;
    for (n, (s, t)) in steps.iter().enumerate() {
        ensure(s.bit_eq(t), || format!("step {n}: trajectories differ by {}", s.max_abs_diff(t)))?;
    }
    ensure(src.bit_eq(&tgt), || "final latents differ".into())?;
    let (steps, src, tgt) = identity_run(NoiseCoupling::Independent)?;
    let diverged = steps.iter().skip(1).any(|(s, t)| !s.bit_eq(t)) || !src.bit_eq(&tgt);
    ensure(diverged, || "negative control: independent noise did not break equality".into())?;
    Ok("shared noise bit-identical over 15 steps; independent noise diverges".into())
}

fn schedule_semantics() -> Result<String, String> {
    for (fraction, steps, expected) in [(1.0, 15, 15), (0.0, 15, 0), (0.6, 15, 9), (0.5, 15, 8)] {
        let s = resolve_schedule(fraction, steps).map_err(|e| e.to_string())?;
        let oracle: BTreeSet<usize> = (0..expected).collect();
        ensure(s.active_steps == oracle, || {
            format!("({fraction}, {steps}) -> {:?}, expected first {expected}", s.active_steps)
        })?;
    }
    let published = [
        (EditType::Color, 1.0),
        (EditType::Object, 0.5),
        (EditType::Material, 0.6),
        (EditType::ColorObject, 0.5),
        (EditType::ObjectMaterial, 0.5),
    ];
    for (t, f) in published {
        let got = EditConfig::for_edit_type(t).resolved_schedule_fraction();
        ensure(got == f, || format!("{t}: default fraction {got}, expected {f}"))?;
    }
    Ok("15/0/9/8 active steps; per-type defaults 1.0/0.5/0.6/0.5/0.5".into())
}

fn dilation_hyperparameter() -> Result<String, String> {
    let res = Resolution::square(768);
    let radius = dilation_radius(0.01, res);
    ensure(radius == 7, || format!("radius {radius}"))?;
    let mut rng = rng_from_seed(99);
    let mut mask = Mask::empty(res);
    mask.set(0, 0, true);
    mask.set(767, 400, true);
    for _ in 0..40 {
        let (y, x) = (rng.gen_range(0..768), rng.gen_range(0..768));
        for dy in 0..rng.gen_range(1..6) {
            for dx in 0..rng.gen_range(1..6) {
                mask.set((y + dy).min(767), (x + dx).min(767), true);
            }
        }
    }
    // Oracle: paint a (2r+1)² square around every foreground pixel.
    let r = 7i64;
    let mut oracle = Mask::empty(res);
    for y in 0..768i64 {
        for x in 0..768i64 {
            if !mask.get(y as usize, x as usize) {
                continue;
            }
            for yy in (y - r).max(0)..=(y + r).min(767) {
                for xx in (x - r).max(0)..=(x + r).min(767) {
                    oracle.set(yy as usize, xx as usize, true);
                }
            }
        }
    }
    let dilated = dilate_mask(&mask, 0.01);
    ensure(dilated == oracle, || "dilation differs from the square-element oracle".into())?;
    Ok(format!("radius 7, {} foreground pixels after dilation match oracle", oracle.count()))
}

fn manifest(n: usize) -> Manifest {
    let names = ["cat", "chair", "lamp", "cup", "dog"];
    Manifest {
        images: (0..n)
            .map(|i| ManifestImage {
                id: format!("img{i:02}"),
                path: PathBuf::new(),
                objects: names
                    .iter()
                    .take(3 + i % 3)
                    .map(|o| ManifestObject { name: o.to_string(), color: None, material: None, mask: None })
                    .collect(),
            })
            .collect(),
    }
}

fn benchmark_grid() -> Result<String, String> {
    let dicts = AttributeDictionaries::default();
    let full = generate_scenarios(&manifest(20), &dicts, 2024, &GridFilter::default()).map_err(|e| e.to_string())?;
    ensure(full.len() == 20 * 5 * 3 * 10, || format!("{} scenarios for 20 images", full.len()))?;
    let ids: BTreeSet<&str> = full.iter().map(|s| s.scenario_id.as_str()).collect();
    ensure(ids.len() == full.len(), || "duplicate scenario ids".into())?;
    let small = generate_scenarios(&manifest(2), &dicts, 2024, &GridFilter::default()).map_err(|e| e.to_string())?;
    ensure(small.len() == 300, || format!("{} scenarios for 2 images", small.len()))?;
    let again = generate_scenarios(&manifest(20), &dicts, 2024, &GridFilter::default()).map_err(|e| e.to_string())?;
    let bytes = |s: &[ale_core::Scenario]| serde_json::to_vec(s).unwrap();
    ensure(bytes(&full) == bytes(&again), || "regeneration differs".into())?;
    Ok("3000 and 300 scenarios, regeneration byte-identical".into())
}

fn write_cli_fixture(dir: &Path) -> PathBuf {
    let res = Resolution::square(96);
    let img = textured(res);
    let path = dir.join("scene.png");
    img.save_png(&path).unwrap();
    let masks = dir.join("masks");
    fs::create_dir_all(&masks).unwrap();
    Mask::from_fn(res, |y, x| y < 40 && x < 48).save_png(&masks.join("scene_obj1.png")).unwrap();
    Mask::from_fn(res, |y, x| y > 50 && x > 30).save_png(&masks.join("scene_obj2.png")).unwrap();
    path
}

fn cli_edit(dir: &Path, image: &Path, out: &str, extra: &[&str]) -> Result<(Vec<u8>, Vec<u8>), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_ale"))
        .env_remove("ALE_CONFIG")
        .args(["edit", "--image"])
        .arg(image)
        .args(["--pair", "a wolf->a cat", "--pair", "a chair->a red chair", "--masks"])
        .arg(dir.join("masks"))
        .args(["--seed", "1234", "--edit-type", "color+object", "--out"])
        .arg(dir.join(out))
        .args(extra)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || {
        format!("exit {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr))
    })?;
    let read = |name: &str| fs::read(dir.join(out).join(name)).map_err(|e| e.to_string());
    Ok((read("scene_edited.png")?, read("scene_edited.json")?))
}

fn cli_determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let image = write_cli_fixture(dir.path());
    let a = cli_edit(dir.path(), &image, "a", &[])?;
    let b = cli_edit(dir.path(), &image, "b", &[])?;
    ensure(a.0 == b.0, || "edited images differ".into())?;
    ensure(a.1 == b.1, || "sidecars differ".into())?;
    let sidecar = dir.path().join("a/scene_edited.json");
    let replay = Command::new(env!("CARGO_BIN_EXE_ale"))
        .env("ALE_CONFIG", &sidecar)
        .args(["edit", "--image"])
        .arg(&image)
        .args(["--pair", "a wolf->a cat", "--pair", "a chair->a red chair", "--masks"])
        .arg(dir.path().join("masks"))
        .arg("--out")
        .arg(dir.path().join("c"))
        .output()
        .map_err(|e| e.to_string())?;
    ensure(replay.status.success(), || String::from_utf8_lossy(&replay.stderr).into_owned())?;
    let c = fs::read(dir.path().join("c/scene_edited.png")).map_err(|e| e.to_string())?;
    ensure(c == a.0, || "replay from sidecar differs".into())?;
    Ok(format!("image ({} B) and sidecar byte-identical; sidecar replay identical", a.0.len()))
}

fn real_backend_ablation() -> Result<String, String> {
    backend_for_kind(BackendKind::Real).map_err(|e| e.to_string())?;
    Err("a real backend loaded, but no real similarity scorer is wired in".into())
}
