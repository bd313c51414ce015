//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use image::{DynamicImage, GrayImage, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sagi_core::chat::ScriptedEndpoint;
use sagi_core::eval::{load_detector_dir, run_benchmark, write_report, EvalOptions, GroupAxis, GroupingSpec};
use sagi_core::gateway::{mock_inpaint_workers, run_pipeline, PipelineConfig};
use sagi_core::human_bench::demographics::{
    AgeRange, AiFamiliarity, CurrentEducation, Education, Gender, PhotographyKnowledge,
};
use sagi_core::human_bench::{
    chi_square_independence, filter_participants, ContingencyTable, DemographicFactor, Demographics, ParticipantTally,
};
use sagi_core::imageio::{is_masked, open_mask, open_rgb, to_png_b64};
use sagi_core::manifest::{
    assign_splits, to_jsonl, validate, DatasetManifest, DatasetTarget, SplitPolicy, Target, ImageRecord, InpaintRecord, MaskRecord, Pipeline, Preservation,
    SourceDataset, Split, ViolationKind,
};
use sagi_core::metrics::{
    detection_accuracy, fidelity, loc_map_to_det, pixel_iou, roc_auc, Label, LocMap,
};
use sagi_core::saor::{
    parse_llm_reply, InventoryItem, LlmConfig, MockLlm, ParseError, PriorEdit, PromptStage, SemanticContext,
};
use sagi_core::synthetic::{generate_dataset, write_synthetic_detector, SyntheticSpec};
use sagi_core::ugda::{
    assess, classify, stage2_compare, CompareCall, ComparativeVerdict, OrderedChoice, UgdaState, VlmConfig,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(elapsed: Duration, budget: Duration, what: &str) -> Result<(), String> {
    if elapsed > budget {
        Err(format!("{what} took {elapsed:.2?}, budget {budget:.0?}"))
    } else {
        Ok(())
    }
}

// ---------------------------------------------------------------- UGDA rule

use ComparativeVerdict::{Both as B, Inpainted as I, Original as O};

/// Hand-written: deceiving when the inpainted image wins in either order, or
/// both orders call the pair equally realistic.
const RULE_TABLE: [(ComparativeVerdict, ComparativeVerdict, bool); 9] = [
    (O, O, false),
    (O, I, true),
    (O, B, false),
    (I, O, true),
    (I, I, true),
    (I, B, true),
    (B, O, false),
    (B, I, true),
    (B, B, true),
];

const REALISTIC: &str = "Assessment: lighting and texture are consistent.\nVerdict: Yes";
const UNREALISTIC: &str = "Assessment: the object floats above the table.\nVerdict: No";

fn phrase(choice: OrderedChoice) -> &'static str {
    match choice {
        OrderedChoice::First => "Assessment: the second image has a seam.\nVerdict: First is more realistic",
        OrderedChoice::Second => "Assessment: the first image has a seam.\nVerdict: Second is more realistic",
        OrderedChoice::Both => "Assessment: no visible artefacts in either.\nVerdict: Both look realistic",
    }
}

/// The presentation-order answer that means `v` for a given call.
fn choice_for(call: CompareCall, v: ComparativeVerdict) -> OrderedChoice {
    match (call, v) {
        (_, B) => OrderedChoice::Both,
        (CompareCall::OriginalFirst, O) | (CompareCall::InpaintedFirst, I) => OrderedChoice::First,
        _ => OrderedChoice::Second,
    }
}

fn tiny(seed: u8) -> DynamicImage {
    DynamicImage::ImageRgb8(RgbImage::from_fn(6, 4, |x, y| Rgb([seed, x as u8 * 10, y as u8 * 20])))
}

fn ugda_rule_table() -> Outcome {
    let start = Instant::now();
    let (orig, inp) = (tiny(1), tiny(2));
    let cfg = VlmConfig::default();
    let mut deceiving = 0;
    for (s1, s2, expected) in RULE_TABLE {
        ensure!(classify(s1, s2) == expected, "classify({s1:?}, {s2:?}) != {expected}");
        let vlm = ScriptedEndpoint::new([
            REALISTIC,
            phrase(choice_for(CompareCall::OriginalFirst, s1)),
            phrase(choice_for(CompareCall::InpaintedFirst, s2)),
        ]);
        let out = assess(&orig, &inp, &vlm, &cfg).map_err(|e| format!("assess({s1:?}, {s2:?}): {}", e.error))?;
        let state = if expected { UgdaState::Deceiving } else { UgdaState::Intermediate };
        ensure!(out.state == state, "({s1:?}, {s2:?}) gave {:?}, expected {state:?}", out.state);
        ensure!(out.s1 == Some(s1) && out.s2 == Some(s2), "({s1:?}, {s2:?}) recovered as {:?}/{:?}", out.s1, out.s2);
        ensure!(vlm.call_count() == 3, "({s1:?}, {s2:?}) made {} calls", vlm.call_count());
        deceiving += expected as usize;
    }

    let vlm = ScriptedEndpoint::new([UNREALISTIC, phrase(OrderedChoice::Second), phrase(OrderedChoice::First)]);
    let out = assess(&orig, &inp, &vlm, &cfg).map_err(|e| e.error.to_string())?;
    ensure!(out.state == UgdaState::FailedInitialCheck, "stage-1 rejection gave {:?}", out.state);
    ensure!(out.s1.is_none() && out.s2.is_none(), "stage-1 rejection still compared");
    ensure!(vlm.call_count() == 1, "stage-1 rejection made {} calls", vlm.call_count());

    within(start.elapsed(), Duration::from_secs(1), "rule table")?;
    Ok(format!(
        "9/9 pairs match; {deceiving} deceiving, {} intermediate; stage-1 rejection stops after 1 call",
        9 - deceiving
    ))
}

// ------------------------------------------------------------ order mapping

fn order_mapping() -> Outcome {
    use OrderedChoice::{Both as CB, First, Second};
    let oracle = [
        (CompareCall::OriginalFirst, First, O),
        (CompareCall::OriginalFirst, Second, I),
        (CompareCall::OriginalFirst, CB, B),
        (CompareCall::InpaintedFirst, First, I),
        (CompareCall::InpaintedFirst, Second, O),
        (CompareCall::InpaintedFirst, CB, B),
    ];
    for (call, choice, want) in oracle {
        ensure!(call.resolve(choice) == want, "{call:?} × {choice:?} -> {:?}, expected {want:?}", call.resolve(choice));
    }

    let (orig, inp) = (tiny(3), tiny(4));
    let (orig_b64, inp_b64) = (to_png_b64(&orig).unwrap(), to_png_b64(&inp).unwrap());
    let lookup = |call: CompareCall, c: OrderedChoice| oracle.iter().find(|o| o.0 == call && o.1 == c).unwrap().2;
    for c1 in [First, Second, CB] {
        for c2 in [First, Second, CB] {
            let vlm = ScriptedEndpoint::new([phrase(c1), phrase(c2)]);
            let cmp = stage2_compare(&orig, &inp, &vlm, &VlmConfig::default()).map_err(|e| e.to_string())?;
            ensure!(
                cmp.s1 == lookup(CompareCall::OriginalFirst, c1) && cmp.s2 == lookup(CompareCall::InpaintedFirst, c2),
                "replies ({c1:?}, {c2:?}) mapped to ({:?}, {:?})",
                cmp.s1,
                cmp.s2
            );
            let reqs = vlm.requests();
            ensure!(reqs.len() == 2, "{} comparison calls", reqs.len());
            let shown = |i: usize| reqs[i].messages.iter().flat_map(|m| m.images.clone()).collect::<Vec<_>>();
            ensure!(shown(0) == vec![orig_b64.clone(), inp_b64.clone()], "call 1 image order wrong");
            ensure!(shown(1) == vec![inp_b64.clone(), orig_b64.clone()], "call 2 image order wrong");
        }
    }
    Ok("6/6 cells match; 9 scripted reply pairs resolve correctly with original-first then inpainted-first".into())
}

// ------------------------------------------------------------ metric oracles

fn iou_oracle(loc: &[f64], gt: &[u8], w: usize, t: f64) -> f64 {
    let p: HashSet<(usize, usize)> =
        loc.iter().enumerate().filter(|(_, &v)| v >= t).map(|(i, _)| (i % w, i / w)).collect();
    let g: HashSet<(usize, usize)> =
        gt.iter().enumerate().filter(|(_, &v)| v > 127).map(|(i, _)| (i % w, i / w)).collect();
    let union = p.union(&g).count();
    if union == 0 {
        1.0
    } else {
        p.intersection(&g).count() as f64 / union as f64
    }
}

fn auc_oracle(scores: &[f64], pos: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if pos[i] && !pos[j] {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

/// MSE and MAE (×10³ on [0,1] intensities) and windowed SSIM by direct loops.
fn fidelity_oracle(a: &RgbImage, b: &RgbImage) -> (f64, f64, f64) {
    let (w, h) = a.dimensions();
    let (mut se, mut ae, mut n) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let d = a.get_pixel(x, y)[c] as f64 / 255.0 - b.get_pixel(x, y)[c] as f64 / 255.0;
                se += d * d;
                ae += d.abs();
                n += 1.0;
            }
        }
    }
    let (ww, wh) = (w.min(8), h.min(8));
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut ssim = 0.0;
    for c in 0..3 {
        let (mut sum, mut windows) = (0.0, 0.0);
        for y0 in 0..=h - wh {
            for x0 in 0..=w - ww {
                let mut pa = Vec::new();
                let mut pb = Vec::new();
                for y in y0..y0 + wh {
                    for x in x0..x0 + ww {
                        pa.push(a.get_pixel(x, y)[c] as f64 / 255.0);
                        pb.push(b.get_pixel(x, y)[c] as f64 / 255.0);
                    }
                }
                let k = pa.len() as f64;
                let ma = pa.iter().sum::<f64>() / k;
                let mb = pb.iter().sum::<f64>() / k;
                let va = pa.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / k;
                let vb = pb.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / k;
                let cov = pa.iter().zip(&pb).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / k;
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                windows += 1.0;
            }
        }
        ssim += sum / windows / 3.0;
    }
    (se / n * 1e3, ae / n * 1e3, ssim)
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_611);
    let (mut worst_auc, mut worst_mse, mut worst_ssim) = (0.0f64, 0.0f64, 0.0f64);
    for case in 0..200 {
        let (w, h) = (rng.random_range(1..=12u32), rng.random_range(1..=12u32));
        let len = (w * h) as usize;
        // Quantized values so the threshold and ties are actually hit.
        let loc: Vec<f64> = (0..len).map(|_| rng.random_range(0..=8u32) as f64 / 8.0).collect();
        let gt: Vec<u8> = (0..len).map(|_| [0u8, 100, 127, 128, 200, 255][rng.random_range(0..6)]).collect();
        let t = rng.random_range(0..=8u32) as f64 / 8.0;
        let map = LocMap::new(w, h, loc.clone()).map_err(|e| e.to_string())?;
        let mask = GrayImage::from_raw(w, h, gt.clone()).unwrap();
        let got = pixel_iou(&map, &mask, t).map_err(|e| e.to_string())?;
        let want = iou_oracle(&loc, &gt, w as usize, t);
        ensure!(got == want, "case {case}: pixel_iou {got} vs oracle {want}");

        let max = loc.iter().fold(f64::NEG_INFINITY, |m, &v| if v > m { v } else { m });
        let det = loc_map_to_det(&map).map_err(|e| e.to_string())?;
        ensure!(det == max, "case {case}: loc_map_to_det {det} vs {max}");

        let n = rng.random_range(2..=40usize);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..=10u32) as f64 / 10.0).collect();
        let mut pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        pos[0] = true;
        pos[1] = false;
        let labels: Vec<Label> =
            pos.iter().map(|&p| if p { Label::Inpainted } else { Label::Authentic }).collect();
        let correct = (0..n).filter(|&i| (scores[i] >= t) == pos[i]).count();
        let acc = detection_accuracy(&scores, &labels, t).map_err(|e| e.to_string())?;
        ensure!(acc == correct as f64 / n as f64, "case {case}: detection_accuracy {acc}");

        let auc = roc_auc(&scores, &pos).map_err(|e| e.to_string())?;
        let d = (auc - auc_oracle(&scores, &pos)).abs();
        worst_auc = worst_auc.max(d);
        ensure!(d <= 1e-12, "case {case}: roc_auc off by {d:e}");

        let (fw, fh) = (rng.random_range(1..=16u32), rng.random_range(1..=16u32));
        let a = RgbImage::from_fn(fw, fh, |_, _| Rgb([rng.random(), rng.random(), rng.random()]));
        let b = if rng.random_bool(0.2) {
            a.clone()
        } else {
            RgbImage::from_fn(fw, fh, |x, y| {
                let p = a.get_pixel(x, y);
                Rgb([p[0].wrapping_add(rng.random_range(0..40)), p[1], rng.random()])
            })
        };
        let f = fidelity(&a, &b).map_err(|e| e.to_string())?;
        let (mse, mae, ssim) = fidelity_oracle(&a, &b);
        let dm = (f.mse - mse).abs().max((f.mae - mae).abs());
        worst_mse = worst_mse.max(dm);
        worst_ssim = worst_ssim.max((f.ssim - ssim).abs());
        ensure!(dm <= 1e-9, "case {case}: MSE/MAE off by {dm:e}");
        ensure!((f.ssim - ssim).abs() <= 1e-6, "case {case}: SSIM {} vs {ssim}", f.ssim);
        if mse == 0.0 {
            ensure!(f.psnr.is_infinite(), "case {case}: identical images gave PSNR {}", f.psnr);
        } else {
            ensure!((f.psnr - 10.0 * (1e3 / mse).log10()).abs() <= 1e-9, "case {case}: PSNR {}", f.psnr);
        }
    }
    within(start.elapsed(), Duration::from_secs(30), "metric oracles")?;
    Ok(format!(
        "200 fixtures; IoU/accuracy/det exact; max |ΔAUC| {worst_auc:.1e}, |ΔMSE/MAE| {worst_mse:.1e}, |ΔSSIM| {worst_ssim:.1e}"
    ))
}

// ---------------------------------------------------------- SP bit-exactness

const ALL_PIPELINES: [Pipeline; 6] = [
    Pipeline::BrushNet,
    Pipeline::ControlNet,
    Pipeline::HdPainter,
    Pipeline::InpaintAnything,
    Pipeline::PowerPaint,
    Pipeline::RemoveAnything,
];

/// Generates a synthetic dataset in `dir` and runs both inpainting rounds
/// with outputs written next to it.
fn pipeline_run(dir: &Path, n: usize, seed: u64) -> Result<(DatasetManifest, usize, usize), String> {
    let source = generate_dataset(dir, &SyntheticSpec { n_images: n, seed, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let workers = mock_inpaint_workers(&ALL_PIPELINES);
    let cfg = PipelineConfig::new(dir, seed);
    let out = run_pipeline(&source, &workers, &MockLlm, &cfg, None).map_err(|e| e.to_string())?;
    ensure!(out.failures.is_empty(), "{} job failures, first: {:?}", out.failures.len(), out.failures.first());
    Ok((out.manifest, out.plan.jobs.len(), out.plan.eligible))
}

fn sp_bit_exact() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (man, jobs, eligible) = pipeline_run(dir.path(), 600, 11)?;
    ensure!(eligible == 600, "{eligible} round-1 records eligible for a second round");
    ensure!(jobs == 100, "{jobs} double-round jobs planned");
    let round2 = man.inpaints.iter().filter(|r| r.round == 2).count();
    ensure!(round2 == 100, "{round2} round-2 records produced");
    let report = validate(&man);
    ensure!(report.is_clean(), "manifest violations: {:?}", report.violations.first());

    let mut checked = 0;
    for rec in man.inpaints.iter().filter(|r| r.preservation == Preservation::Sp) {
        let source_path = match man.image(&rec.parent_image_id) {
            Some(img) => img.path.clone(),
            None => man.inpaint(&rec.parent_image_id).ok_or("dangling parent")?.inpainted_path.clone(),
        };
        let source = open_rgb(man.resolve(&source_path)).map_err(|e| e.to_string())?;
        let mask_rec = man.mask(&rec.mask_id).ok_or("dangling mask")?;
        let mask = open_mask(man.resolve(&mask_rec.mask_path)).map_err(|e| e.to_string())?;
        let output = open_rgb(man.resolve(&rec.inpainted_path)).map_err(|e| e.to_string())?;
        ensure!(output.dimensions() == source.dimensions(), "{}: size changed", rec.id);
        for (x, y, px) in output.enumerate_pixels() {
            if !is_masked(&mask, x, y) {
                ensure!(px == source.get_pixel(x, y), "{}: unmasked pixel ({x},{y}) differs", rec.id);
            }
        }
        checked += 1;
    }
    ensure!(checked > 0, "no SP outputs to check");
    within(start.elapsed(), Duration::from_secs(120), "pipeline")?;
    Ok(format!(
        "{} records, {jobs} double-round jobs, {checked} SP outputs byte-identical outside the mask ({:.1?})",
        man.inpaints.len(),
        start.elapsed()
    ))
}

// ----------------------------------------------------------- split integrity

fn image(id: String, dataset: SourceDataset) -> ImageRecord {
    ImageRecord {
        id,
        source_dataset: dataset,
        path: "x.png".into(),
        width: 4,
        height: 4,
        split: Split::Train,
        authentic: true,
        caption: None,
    }
}

fn split_integrity() -> Outcome {
    let start = Instant::now();
    let table: [(SourceDataset, usize, usize, usize, bool); 3] = [
        (SourceDataset::Coco, 59_708, 1_950, 2_922, false),
        (SourceDataset::Raise, 19_741, 4_262, 1_671, false),
        (SourceDataset::OpenImages, 0, 0, 5_585, true),
    ];
    let mut records = Vec::new();
    let mut datasets = Vec::new();
    for (ds, tr, va, te, ood) in table {
        records.extend((0..tr + va + te).map(|i| image(format!("{ds}-{i:06}"), ds)));
        datasets.push(DatasetTarget {
            dataset: ds,
            train: Target::Count(tr),
            val: Target::Count(va),
            test: Target::Count(te),
            ood_source: ood,
        });
    }
    let policy = SplitPolicy { seed: 2025, datasets };
    let assignment = assign_splits(&records, &policy).map_err(|e| e.to_string())?;
    ensure!(assignment.unassigned.is_empty(), "{} images unassigned", assignment.unassigned.len());
    let mut got: BTreeMap<(SourceDataset, Split), usize> = BTreeMap::new();
    for r in &records {
        *got.entry((r.source_dataset, assignment.split_of(&r.id).ok_or("missing split")?)).or_default() += 1;
    }
    for (ds, tr, va, te, ood) in table {
        let test_split = if ood { Split::TestOod } else { Split::TestId };
        for (split, want) in [(Split::Train, tr), (Split::Val, va), (test_split, te)] {
            let have = got.get(&(ds, split)).copied().unwrap_or(0);
            ensure!(have == want, "{ds} {split:?}: {have} != {want}");
        }
    }
    ensure!(assignment == assign_splits(&records, &policy).unwrap(), "assignment not reproducible");

    // Co-split closure on random derivative chains.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let pools = [SourceDataset::Coco, SourceDataset::Raise, SourceDataset::OpenImages];
    let mut images = Vec::new();
    let mut masks = Vec::new();
    for i in 0..300 {
        let ds = pools[i % 3];
        let id = format!("root{i:03}");
        for k in 0..2 {
            masks.push(MaskRecord {
                id: format!("{id}_m{k}"),
                image_id: id.clone(),
                object_label: ["cup", "dog"][k].into(),
                mask_path: format!("{id}_m{k}.png"),
                area_fraction: 0.1,
            });
        }
        images.push(image(id, ds));
    }
    let wrong = [Split::Train, Split::Val, Split::TestId, Split::TestOod];
    let mut inpaints = Vec::new();
    for c in 0..1_000 {
        let root = rng.random_range(0..300);
        let k = rng.random_range(0..2);
        let r1 = format!("chain{c:04}_r1");
        inpaints.push(inpaint(&r1, &format!("root{root:03}"), &format!("root{root:03}_m{k}"), 1, wrong[rng.random_range(0..4)]));
        if rng.random_bool(0.5) {
            inpaints.push(inpaint(
                &format!("chain{c:04}_r2"),
                &r1,
                &format!("root{root:03}_m{}", 1 - k),
                2,
                wrong[rng.random_range(0..4)],
            ));
        }
    }
    let man = DatasetManifest::new(images, masks, inpaints).map_err(|e| e.to_string())?;
    let closure_policy = SplitPolicy {
        seed: 5,
        datasets: vec![
            fractions(SourceDataset::Coco, 0.8, 0.1, 0.1, false),
            fractions(SourceDataset::Raise, 0.7, 0.15, 0.15, false),
            fractions(SourceDataset::OpenImages, 0.0, 0.0, 1.0, true),
        ],
    };
    let applied = assign_splits(&man.images, &closure_policy)
        .and_then(|a| a.apply(&man))
        .map_err(|e| e.to_string())?;
    ensure!(applied.inpaints.len() == man.inpaints.len(), "derivatives dropped");
    for rec in &applied.inpaints {
        let root = applied.root_image(rec).ok_or("dangling chain")?;
        ensure!(rec.split == root.split, "{} in {:?}, root {} in {:?}", rec.id, rec.split, root.id, root.split);
        for link in applied.inpaint_chain(rec) {
            ensure!(link.split == root.split, "{} breaks its chain's split", link.id);
        }
    }
    ensure!(validate(&applied).count(ViolationKind::SplitMismatch) == 0, "validator reports split mismatches");
    within(start.elapsed(), Duration::from_secs(10), "split checks")?;
    Ok(format!("8 table cells exact; {} chain records share their root's split", applied.inpaints.len()))
}

fn fractions(dataset: SourceDataset, tr: f64, va: f64, te: f64, ood: bool) -> DatasetTarget {
    DatasetTarget {
        dataset,
        train: Target::Fraction(tr),
        val: Target::Fraction(va),
        test: Target::Fraction(te),
        ood_source: ood,
    }
}

fn inpaint(id: &str, parent: &str, mask: &str, round: u32, split: Split) -> InpaintRecord {
    InpaintRecord {
        id: id.into(),
        parent_image_id: parent.into(),
        mask_id: mask.into(),
        prompt: Some(sagi_core::saor::PromptSpec::new("cup", "a mug")),
        pipeline: Pipeline::BrushNet,
        model_name: "m".into(),
        preservation: Preservation::Sp,
        round,
        inpainted_path: format!("{id}.png"),
        split,
        ugda: None,
        provenance: None,
    }
}

// ------------------------------------------------------------- SAOR corpus

type Expect = Result<(&'static str, &'static str), ParseError>;

fn saor_corpus() -> Outcome {
    use ParseError::*;
    use PromptStage::{FirstInpaint as F, Removal as R};
    let inv: Vec<String> = ["person", "umbrella", "dog", "traffic light"].map(String::from).to_vec();
    let corpus: Vec<(&str, PromptStage, Expect)> = vec![
        ("Object: dog\nPrompt: Inpaint the masked area with a golden retriever", F, Ok(("dog", "a golden retriever"))),
        ("Object: Dog\nPrompt: inpaint the masked area with a husky.", F, Ok(("dog", "a husky."))),
        ("**Object:** umbrella\n**Prompt:** Inpaint the masked area with... a red umbrella", F, Ok(("umbrella", "a red umbrella"))),
        ("Object: \"person\"\nPrompt: \"Inpaint the masked area with a man in a raincoat\"", F, Ok(("person", "a man in a raincoat"))),
        ("Prompt: Inpaint the masked area with a cat\nObject: dog", F, Ok(("dog", "a cat"))),
        ("Object: traffic light\nPrompt: a green traffic light", F, Ok(("traffic light", "a green traffic light"))),
        ("Object: dog\nPrompt: Inpaint the masked area with Inpaint the masked area with a fox", F, Ok(("dog", "a fox"))),
        ("Object: dog\nPrompt: Inpaint the masked area with a small\nbrown puppy", F, Ok(("dog", "a small brown puppy"))),
        ("- Object: person\n- Prompt: Inpaint the masked area with: a woman", F, Ok(("person", "a woman"))),
        ("Sure! Here is my choice.\nObject: umbrella\nPrompt: Inpaint the masked area with a blue parasol", F, Ok(("umbrella", "a blue parasol"))),
        ("OBJECT:   Traffic Light  \nPROMPT: Inpaint the masked area with a stop sign", F, Ok(("traffic light", "a stop sign"))),
        ("# Object: dog.\nPrompt: Inpaint the masked area with a wolf", F, Ok(("dog", "a wolf"))),
        ("Prompt: Inpaint the masked area with a cat", F, Err(MissingObjectLine)),
        ("", F, Err(MissingObjectLine)),
        ("I would replace the dog with a cat.", F, Err(MissingObjectLine)),
        ("Object: dog", F, Err(MissingPromptLine)),
        ("Object: cat\nPrompt: Inpaint the masked area with a lion", F, Err(ObjectNotInInventory("cat".into()))),
        ("Object: dogs\nPrompt: Inpaint the masked area with a lion", F, Err(ObjectNotInInventory("dogs".into()))),
        ("Object: dog\nPrompt: Inpaint the masked area with", F, Err(EmptyPromptAfterStrip)),
        ("Object: dog\nPrompt: Inpaint the masked area with...", F, Err(EmptyPromptAfterStrip)),
        ("Object: person", R, Ok(("person", ""))),
        ("Object: umbrella\nPrompt: remove it", R, Ok(("umbrella", ""))),
        ("Object: car", R, Err(ObjectNotInInventory("car".into()))),
        ("Remove the person.", R, Err(MissingObjectLine)),
    ];
    for (i, (reply, stage, expect)) in corpus.iter().enumerate() {
        let got = parse_llm_reply(reply, &inv, *stage).map(|p| (p.object_label, p.prompt_text));
        let want = expect.clone().map(|(l, p)| (l.to_string(), p.to_string()));
        ensure!(got == want, "reply #{i} {reply:?}: got {got:?}, expected {want:?}");
    }

    // Second round: the previously edited object is not offered.
    let ctx = SemanticContext {
        caption: "a person with an umbrella".into(),
        inventory: vec![InventoryItem::new("person", "m0", 0.3), InventoryItem::new("umbrella", "m1", 0.1)],
        prior_edit: Some(PriorEdit { object_label: "person".into(), prompt: "a knight".into() }),
    };
    let offered = ctx.offered_labels(PromptStage::SecondInpaint);
    ensure!(offered == vec!["umbrella".to_string()], "second round offered {offered:?}");
    let again = parse_llm_reply("Object: person\nPrompt: Inpaint the masked area with a robot", &offered, PromptStage::SecondInpaint);
    ensure!(again == Err(ObjectNotInInventory("person".into())), "prior object accepted: {again:?}");

    let llm = LlmConfig::default();
    ensure!((llm.temperature, llm.top_p, llm.max_tokens) == (1.2, 0.8, 40), "LLM defaults {llm:?}");
    let vlm = VlmConfig::default();
    ensure!((vlm.temperature, vlm.top_p, vlm.max_tokens) == (0.1, 1.0, 2048), "VLM defaults {vlm:?}");
    Ok(format!("{} scripted replies + second-round exclusion; defaults 1.2/0.8/40 and 0.1/1.0/2048", corpus.len()))
}

// ---------------------------------------------------------------- statistics

fn demographics(i: usize) -> Demographics {
    Demographics {
        gender: [Gender::Male, Gender::Female, Gender::Other][i % 3],
        age_range: [AgeRange::From18To24, AgeRange::From25To34][i % 2],
        education: Education::Eqf6,
        current_education: CurrentEducation::NotStudying,
        ai_familiarity: [AiFamiliarity::Very, AiFamiliarity::NotFamiliar][i % 2],
        photography: PhotographyKnowledge::Basic,
    }
}

fn statistics() -> Outcome {
    let uniform = ContingencyTable::new(
        vec!["a".into(), "b".into(), "c".into()],
        vec!["correct".into(), "incorrect".into()],
        vec![vec![12, 12], vec![12, 12], vec![12, 12]],
    )
    .unwrap();
    let u = chi_square_independence(&uniform).map_err(|e| e.to_string())?;
    ensure!(u.chi2 == 0.0 && u.p_value == 1.0 && u.cramers_v == 0.0, "uniform table gave {u:?}");

    let t = ContingencyTable::new(
        vec!["x".into(), "y".into()],
        vec!["correct".into(), "incorrect".into()],
        vec![vec![20, 10], vec![10, 20]],
    )
    .unwrap();
    let r = chi_square_independence(&t).map_err(|e| e.to_string())?;
    // Expected count 15 in every cell: chi2 = 4 · 5² / 15.
    let chi2 = 4.0 * 25.0 / 15.0;
    let v = (chi2 / 60.0f64).sqrt();
    let p = statrs::function::erf::erfc((chi2 / 2.0f64).sqrt());
    ensure!((r.chi2 - 20.0 / 3.0).abs() <= 1e-9 && (r.chi2 - chi2).abs() <= 1e-9, "chi2 {}", r.chi2);
    ensure!((r.cramers_v - v).abs() <= 1e-9, "V {} vs {v}", r.cramers_v);
    ensure!((r.p_value - p).abs() <= 1e-9, "p {} vs {p}", r.p_value);
    ensure!(r.df == 1 && r.n == 60, "df {} n {}", r.df, r.n);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let roster: Vec<ParticipantTally> = (0..80)
        .map(|i| {
            let votes = if i < 6 { [0, 19, 20, 21, 1, 40][i] } else { rng.random_range(0..45u64) };
            let correct = rng.random_range(0..=votes);
            ParticipantTally { session_id: format!("p{i:02}"), demographics: demographics(i), correct, incorrect: votes - correct }
        })
        .collect();
    let want: BTreeSet<&str> =
        roster.iter().filter(|p| p.correct + p.incorrect >= 20).map(|p| p.session_id.as_str()).collect();
    let kept: BTreeSet<&str> = filter_participants(&roster, 20).iter().map(|p| p.session_id.as_str()).collect();
    ensure!(kept == want, "filter kept {} of expected {}", kept.len(), want.len());
    ensure!(!kept.contains("p01") && kept.contains("p02"), "boundary at 20 votes mishandled");
    let votes: u64 = roster.iter().filter(|p| want.contains(p.session_id.as_str())).map(|p| p.correct + p.incorrect).sum();
    let table = ContingencyTable::from_participants(&roster, DemographicFactor::Gender, 20);
    ensure!(table.total() == votes, "table holds {} votes, kept participants cast {votes}", table.total());
    Ok(format!(
        "uniform (0, 1, 0); [[20,10],[10,20]] chi2 {:.6} V {:.6} p {:.6}; filter kept {}/{}",
        r.chi2,
        r.cramers_v,
        r.p_value,
        kept.len(),
        roster.len()
    ))
}

// --------------------------------------------------------------- determinism

fn full_run(dir: &Path) -> Result<(String, Vec<u8>, Vec<u8>), String> {
    let (man, _, _) = pipeline_run(dir, 120, 4)?;
    let det = dir.join("detector");
    write_synthetic_detector(&man, &det, 0.3, 8).map_err(|e| e.to_string())?;
    let outputs = load_detector_dir(&det).map_err(|e| e.to_string())?;
    let grouping = GroupingSpec::new([GroupAxis::Split, GroupAxis::Pipeline, GroupAxis::Preservation, GroupAxis::Rounds])
        .map_err(|e| e.to_string())?;
    let report = run_benchmark(&man, &outputs, "synthetic", &grouping, &EvalOptions::default()).map_err(|e| e.to_string())?;
    let csv = dir.join("report.csv");
    write_report(&report, &csv).map_err(|e| e.to_string())?;
    let read = |p: &Path| std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    Ok((to_jsonl(&man), read(&csv)?, read(&csv.with_extension("json"))?))
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = full_run(a.path())?;
    let second = full_run(b.path())?;
    ensure!(first.0 == second.0, "manifests differ");
    ensure!(first.1 == second.1, "report CSVs differ");
    ensure!(first.2 == second.2, "report sidecars differ");
    let rows = first.1.iter().filter(|&&c| c == b'\n').count();
    Ok(format!("manifest {} bytes and {rows}-line CSV identical across runs", first.0.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("UGDA rule table", ugda_rule_table),
        ("order-mapping truth table", order_mapping),
        ("metric oracles", metric_oracles),
        ("SP bit-exactness", sp_bit_exact),
        ("split integrity", split_integrity),
        ("SAOR parser corpus", saor_corpus),
        ("statistics", statistics),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
