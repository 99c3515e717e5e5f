//! Acceptance criteria. Each test prints one `criterion N ... PASS|FAIL` line
//! and then asserts it.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use facepad::cascade::{anchor_scales, cascade_decide, mock_detections, svm_box_decision, CascadeConfig};
use facepad::classify::{compute_metrics, scores_to_jsonl, Label, ScoredSample, Threshold};
use facepad::codebook::{encode_bovw, squared_distance, train_codebook, Codebook};
use facepad::fisherface::FisherFace;
use facepad::imagecore::{resize_bilinear, GrayImage, FACE_HEIGHT, FACE_WIDTH};
use facepad::modelio::ModelFile;
use facepad::pipeline::{evaluate, read_manifest, train_all, ManifestEntry, Mode, RunConfig, ThresholdChoice};
use facepad::spmt::{class_specific_face, pyramid_regions, ClassTag, SpmtModel, DEFAULT_LEVELS};
use facepad::synth::{
    gen_stereo_scene, gen_texture, gen_texture_dataset, write_synthetic_dataset, StereoScene, Surface, TextureRecipe,
    DEFAULT_RELIEF,
};
use facepad::texture::{face_block_descriptors, mslbp_face, MslbpFace, MSLBP_BITS, MSLBP_OPERATORS};
use facepad::tfbd::{
    build_template, extract_tfbd, horn_solve, landmark_depth, register, AbstractLandmark, CameraCalib,
    RegistrationConfig, TemplateFace, NUM_LANDMARKS,
};
use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Written straight to stdout so the line shows up without `--nocapture`.
fn report(n: usize, name: &str, pass: bool, elapsed: Duration, detail: &str) -> bool {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {n:>2} {name:<28} {verdict}  ({:.2}s) {detail}\n", elapsed.as_secs_f64());
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    pass
}

fn curved() -> Surface {
    Surface::Curved { relief: DEFAULT_RELIEF }
}

#[test]
fn criterion_01_dimensions() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let face = gen_texture(&TextureRecipe::genuine(), &mut rng);

    let blocks = face_block_descriptors(&face).unwrap();
    let block_ok = blocks.iter().all(|b| b.hist.len() == 361);

    let regions = pyramid_regions(DEFAULT_LEVELS).unwrap().len();

    let codes = mslbp_face(&face);
    let width: usize = MSLBP_OPERATORS.iter().map(|c| c.p).sum();
    let top_bit_used = codes.codes.iter().any(|c| c >> (MSLBP_BITS - 1) == 1);
    let code_ok = width == 48 && MSLBP_BITS == 48 && codes.codes.iter().all(|c| c >> 48 == 0) && top_bit_used;

    let textons: Vec<f64> = (0..256 * MSLBP_BITS).map(|_| rng.random_range(0.0..1.0)).collect();
    let codebook = Codebook::from_textons(textons).unwrap();
    let bovw = encode_bovw(&codes, &codebook);
    let model = SpmtModel {
        levels: DEFAULT_LEVELS,
        genuine: class_specific_face(std::slice::from_ref(&bovw), ClassTag::Genuine, 256).unwrap(),
        fake: class_specific_face(std::slice::from_ref(&bovw), ClassTag::Fake, 256).unwrap(),
        codebook,
        fisher: FisherFace::uniform(FACE_HEIGHT, FACE_WIDTH),
        pca: None,
    };
    let raw = model.extract(&face).unwrap().raw.len();

    let calib = CameraCalib::parallel(500.0, 500.0, 320.0, 240.0, 10.0).unwrap();
    let (pair, _) = gen_stereo_scene(&StereoScene::standard(curved(), 0.0, 1)).unwrap();
    let template = build_template(std::slice::from_ref(&pair), &calib).unwrap();
    let tfbd = extract_tfbd(&pair, &calib, &template, RegistrationConfig::default())
        .unwrap()
        .descriptor
        .depths
        .len();

    let elapsed = start.elapsed();
    let pass = block_ok && regions == 7 && raw == 5376 && tfbd == 68 && code_ok && elapsed < Duration::from_secs(1);
    let detail = format!("block 361:{block_ok} regions {regions} raw {raw} tfbd {tfbd} code bits {width}");
    assert!(report(1, "dimensional fidelity", pass, elapsed, &detail));
}

#[test]
fn criterion_02_bovw_exactness() {
    let start = Instant::now();
    let data = gen_texture_dataset(6, &[TextureRecipe::genuine(), TextureRecipe::attack()], 2).unwrap();
    let faces: Vec<MslbpFace> = data.iter().map(|(img, _)| mslbp_face(img)).collect();
    let codebook = train_codebook(&faces, 0.1, 256, 2).unwrap();

    // Half the pixels are arbitrary 48-bit codes, half come from real faces.
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let codes: Vec<u64> = (0..10_000)
        .map(|i| {
            if i % 2 == 0 {
                rng.random::<u64>() & ((1 << 48) - 1)
            } else {
                let f = &faces[rng.random_range(0..faces.len())];
                f.codes[rng.random_range(0..f.codes.len())]
            }
        })
        .collect();
    let probe = MslbpFace {
        height: 100,
        width: 100,
        codes: codes.clone(),
    };
    let encoded = encode_bovw(&probe, &codebook);
    let agree = codes
        .iter()
        .zip(&encoded.indices)
        .filter(|(&c, &k)| {
            let mut best = (f64::INFINITY, 0);
            for j in 0..codebook.len() {
                let d = squared_distance(c, codebook.texton(j));
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1 == usize::from(k)
        })
        .count();
    let elapsed = start.elapsed();
    let pass = codebook.len() == 256 && agree == codes.len() && elapsed < Duration::from_secs(5);
    assert!(report(2, "BOVW exactness", pass, elapsed, &format!("{agree}/10000 agree")));
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let axis = Unit::new_normalize(Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ));
    Rotation3::from_axis_angle(&axis, rng.random_range(-3.1..3.1)).into_inner()
}

#[test]
fn criterion_03_absolute_orientation() {
    let start = Instant::now();
    let calib = CameraCalib::parallel(500.0, 500.0, 320.0, 240.0, 10.0).unwrap();
    let (pair, _) = gen_stereo_scene(&StereoScene::standard(curved(), 0.0, 3)).unwrap();
    let template = build_template(std::slice::from_ref(&pair), &calib).unwrap();
    let targets: Vec<Vector3<f64>> = template.landmarks.iter().map(|l| l.to_vector()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (mut worst_rms, mut worst_orth, mut worst_round) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let r = random_rotation(&mut rng);
        let s = rng.random_range(0.3..3.0);
        let t = Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        // Source is the template moved by the inverse, so the solve must recover (s, R, t).
        let moved: Vec<Vector3<f64>> = targets.iter().map(|p| r.transpose() * (p - t) / s).collect();

        let sim = horn_solve(&moved, &targets, 1.0).unwrap();
        let rms = (moved.iter().zip(&targets).map(|(p, q)| (sim.apply(p) - q).norm_squared()).sum::<f64>()
            / NUM_LANDMARKS as f64)
            .sqrt();
        let orth = (sim.rotation.transpose() * sim.rotation - Matrix3::identity()).abs().max();

        let lm: Vec<AbstractLandmark> = moved.iter().map(AbstractLandmark::from_vector).collect();
        let one = register(&lm, &template, RegistrationConfig { n_max: 1, ..Default::default() }).unwrap();

        worst_rms = worst_rms.max(rms);
        worst_orth = worst_orth.max(orth);
        worst_round = worst_round.max(one.history[0].sqrt());
    }
    let elapsed = start.elapsed();
    let pass = worst_rms < 1e-8 && worst_round < 1e-8 && worst_orth < 1e-9 && elapsed < Duration::from_secs(5);
    let detail = format!("rms {worst_rms:.2e} round rms {worst_round:.2e} orthonormality {worst_orth:.2e}");
    assert!(report(3, "absolute orientation", pass, elapsed, &detail));
}

#[test]
fn criterion_04_stereo_round_trip() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let parallel = CameraCalib::parallel(500.0, 480.0, 320.0, 240.0, 10.0).unwrap();
    let r = Rotation3::from_euler_angles(0.02, -0.05, 0.01).into_inner();
    let k = Matrix3::new(520.0, 0.0, 310.0, 0.0, 515.0, 250.0, 0.0, 0.0, 1.0);
    let general = CameraCalib::new(k, k, r, Vector3::new(-12.0, 0.4, 0.3), "mm").unwrap();

    let (mut worst, mut worst_closed) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let p = Vector3::new(rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0), rng.random_range(40.0..120.0));
        for calib in [&parallel, &general] {
            let (l, rr) = calib.project(&p);
            let z = landmark_depth(l, rr, calib).unwrap();
            worst = worst.max((z - p.z).abs() / p.z);
        }
        // The left camera sits at +b along x, so the positive disparity is u_r - u_l.
        let (l, rr) = parallel.project(&p);
        let closed = 500.0 * 10.0 / (rr.0 - l.0);
        worst_closed = worst_closed.max((closed - p.z).abs() / p.z);
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-9 && worst_closed < 1e-9 && elapsed < Duration::from_secs(1);
    let detail = format!("relative error {worst:.2e}, closed form {worst_closed:.2e}");
    assert!(report(4, "stereo round trip", pass, elapsed, &detail));
}

#[test]
fn criterion_05_structure_discrimination() {
    let start = Instant::now();
    let base: u64 = 0;
    let noise = 0.5;
    let captures: Vec<_> = (0..20)
        .map(|i| gen_stereo_scene(&StereoScene::standard(curved(), noise, base * 100_000 + 50_000 + i)).unwrap().0)
        .collect();
    let calib = StereoScene::standard(curved(), noise, 0).calib;
    let template: TemplateFace = build_template(&captures, &calib).unwrap();
    let cfg = RegistrationConfig::default();

    let mut wins = 0;
    for t in 0..100u64 {
        let error = |surface, seed| {
            let (pair, _) = gen_stereo_scene(&StereoScene::standard(surface, noise, seed)).unwrap();
            extract_tfbd(&pair, &calib, &template, cfg).unwrap().mean_error
        };
        let c = error(curved(), base * 100_000 + 2 * t);
        let p = error(Surface::Plane, base * 100_000 + 2 * t + 1);
        wins += usize::from(c < p);
    }
    let elapsed = start.elapsed();
    let pass = wins >= 95 && elapsed < Duration::from_secs(30);
    assert!(report(5, "structure discrimination", pass, elapsed, &format!("curved lower in {wins}/100 trials")));
}

#[test]
fn criterion_06_anchor_scales() {
    let start = Instant::now();
    let got = anchor_scales(0.2, 0.9, 4).unwrap();
    let want = [0.2, 13.0 / 30.0, 2.0 / 3.0, 0.9];
    let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let pass = got.len() == 4 && err < 1e-12;
    assert!(report(6, "anchor scales", pass, start.elapsed(), &format!("{got:?}")));
}

fn sample(score: f64, genuine: bool) -> ScoredSample {
    ScoredSample {
        score,
        label: if genuine { Label::Genuine } else { Label::Attack },
        attack_type: None,
    }
}

#[test]
fn criterion_07_metrics() {
    let start = Instant::now();
    let hand = [sample(0.9, true), sample(0.6, true), sample(0.4, false), sample(0.7, false)];
    let r = compute_metrics(&hand, &Threshold::Fixed(0.5), 0.01).unwrap();
    let hand_ok = r.far == 0.5 && r.frr == 0.0 && r.hter == 0.25 && r.apcer == 0.5 && r.bpcer == 0.0;

    let sep: Vec<_> = (0..50).map(|i| sample(1.0 + i as f64, true)).chain((0..50).map(|i| sample(-1.0 - i as f64, false))).collect();
    let r = compute_metrics(&sep, &Threshold::Eer, 0.01).unwrap();
    let sep_ok = r.eer == 0.0 && r.auc == 1.0;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let random: Vec<_> = (0..10_000).map(|i| sample(rng.random_range(0.0..1.0), i % 2 == 0)).collect();
    let r = compute_metrics(&random, &Threshold::Eer, 0.01).unwrap();
    let random_ok = (r.auc - 0.5).abs() <= 0.05;

    let mixed: Vec<_> = (0..2000).map(|i| sample(rng.random_range(-2.0..2.0) + if i % 3 == 0 { 0.7 } else { 0.0 }, i % 3 == 0)).collect();
    let warped: Vec<_> = mixed.iter().map(|s| sample(s.score.exp() * 3.0 + 1.0, s.label.is_genuine())).collect();
    let a = compute_metrics(&mixed, &Threshold::Eer, 0.01).unwrap();
    let b = compute_metrics(&warped, &Threshold::Eer, 0.01).unwrap();
    let invariant = a.eer == b.eer && a.auc == b.auc;

    let elapsed = start.elapsed();
    let pass = hand_ok && sep_ok && random_ok && invariant && elapsed < Duration::from_secs(5);
    let detail = format!("hand {hand_ok} separated {sep_ok} random auc {:.4} monotone {invariant}", r.auc);
    assert!(report(7, "metrics correctness", pass, elapsed, &detail));
}

fn split_entries(entries: &[ManifestEntry], frac: f64) -> (Vec<ManifestEntry>, Vec<ManifestEntry>) {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for label in [Label::Genuine, Label::Attack] {
        let class: Vec<_> = entries.iter().filter(|e| e.label == label).cloned().collect();
        let cut = (class.len() as f64 * frac).round() as usize;
        train.extend_from_slice(&class[..cut]);
        test.extend_from_slice(&class[cut..]);
    }
    (train, test)
}

#[test]
fn criterion_08_cascade_identities() {
    let dir = tempfile::tempdir().unwrap();
    let ds = write_synthetic_dataset(dir.path(), 20, false, 8).unwrap();
    let entries = read_manifest(&ds.manifest).unwrap();
    let bundle = train_all(&entries, &RunConfig { seed: 8, ..Default::default() }).unwrap();

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let scenes: Vec<(String, GrayImage)> = (0..4)
        .map(|i| {
            let recipe = if i % 2 == 0 { TextureRecipe::genuine() } else { TextureRecipe::attack() };
            let tile = gen_texture(&recipe, &mut rng);
            (format!("scene{i}"), resize_bilinear(&tile, 240, 320).unwrap())
        })
        .collect();
    let shapes: Vec<_> = scenes.iter().map(|(id, img)| (id.clone(), img.height(), img.width())).collect();
    let records = mock_detections(&shapes, 50, 88);

    let (mut total, mut det_ok, mut svm_ok) = (0, 0, 0);
    for (id, img) in &scenes {
        let recs: Vec<_> = records.iter().filter(|r| &r.image_id == id).cloned().collect();
        let off = CascadeConfig { theta_c: 0.0, ..bundle.cascade };
        let all = CascadeConfig { theta_c: 1.0, ..bundle.cascade };
        let a = cascade_decide(img, &recs, &off, &bundle.spmt, &bundle.spmt_svm).unwrap();
        let b = cascade_decide(img, &recs, &all, &bundle.spmt, &bundle.spmt_svm).unwrap();
        total += a.len();
        det_ok += a.iter().filter(|d| d.final_label == Some(d.record.label)).count();
        svm_ok += b
            .iter()
            .filter(|d| {
                let (label, _) =
                    svm_box_decision(img, &d.record.bbox().unwrap(), all.expand_ratio, &bundle.spmt, &bundle.spmt_svm)
                        .unwrap();
                d.final_label == Some(label)
            })
            .count();
    }
    let elapsed = start.elapsed();
    let pass = records.len() == 200 && total > 0 && det_ok == total && svm_ok == total && elapsed < Duration::from_secs(10);
    let detail = format!("{} records, {total} kept; detector {det_ok}/{total}, svm {svm_ok}/{total}", records.len());
    assert!(report(8, "cascade ablation identities", pass, elapsed, &detail));
}

#[test]
fn criterion_09_desk_scale_sanity() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let ds = write_synthetic_dataset(dir.path(), 200, false, 9).unwrap();
    let entries = read_manifest(&ds.manifest).unwrap();
    let (train, test) = split_entries(&entries, 0.7);
    let bundle = train_all(&train, &RunConfig { seed: 9, ..Default::default() }).unwrap();
    let (report_, _) = evaluate(&test, &bundle, Mode::Spmt, &ThresholdChoice::Operating, 0.01).unwrap();
    let elapsed = start.elapsed();
    let pass = report_.accuracy >= 0.90 && elapsed < Duration::from_secs(300);
    let detail = format!(
        "train {} test {} accuracy {:.4} EER {:.4}",
        train.len(),
        test.len(),
        report_.accuracy,
        report_.eer
    );
    assert!(report(9, "desk-scale sanity", pass, elapsed, &detail));
}

fn one_run(dir: &Path) -> (Vec<u8>, String) {
    let ds = write_synthetic_dataset(dir, 16, true, 10).unwrap();
    let entries = read_manifest(&ds.manifest).unwrap();
    let (train, test) = split_entries(&entries, 0.75);
    let cfg = RunConfig {
        seed: 10,
        calibration: ds.calibration.clone(),
        ..Default::default()
    };
    let bundle = train_all(&train, &cfg).unwrap();
    let (_, scores) = evaluate(&test, &bundle, Mode::Fused, &ThresholdChoice::Operating, 0.01).unwrap();
    (bundle.to_bytes(), scores_to_jsonl(&scores))
}

#[test]
fn criterion_10_determinism() {
    let start = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (bundle_a, scores_a) = one_run(a.path());
    let (bundle_b, scores_b) = one_run(b.path());
    let pass = bundle_a == bundle_b && scores_a == scores_b && !scores_a.is_empty();
    let detail = format!("bundle {} bytes, {} score lines", bundle_a.len(), scores_a.lines().count());
    assert!(report(10, "determinism", pass, start.elapsed(), &detail));
}
