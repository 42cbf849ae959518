//! Acceptance suite: one test per shipped criterion. Each prints a
//! `[PASS] criterion N` line with its runtime (run with `-- --nocapture` to
//! see them) and fails loudly otherwise.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use laryngo_core::audio::{
    decisions_to_vocal_segments, score_chunks, slide_chunks, stft_magnitude, ChunkDecision,
    KwsConfig, VowelScorer,
};
use laryngo_core::classify::{side_verdict, Side, DEFAULT_DELTA};
use laryngo_core::geometry::{analyze_frame, vfdyn, FoldGeometry, GeometryConfig};
use laryngo_core::mask::{diffusion_init_mean, gaw, MaskSequence};
use laryngo_core::model::{GlottisMask, TimeSegment};
use laryngo_core::synth::{
    gen_ellipse_mask, gen_osc_sequence, gen_strobe_video, gen_vowel_audio, EllipseParams,
    GroundTruth, OscParams, StrobeParams, VowelParams,
};
use laryngo_core::video::{empty_frame_mask, fluctuation_f, hsv_track, select_strobe, split_nonempty, HsvChannel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn finish(name: &str, limit_s: f64, start: Instant) {
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < limit_s,
        "{name}: runtime {elapsed:.2} s exceeds the {limit_s} s limit"
    );
    println!("[PASS] {name} ({elapsed:.2} s / {limit_s} s)");
}

/// Criterion 1: the prior-mean formula is exact at its endpoints and
/// complement-symmetric for 1000 random alphas. Runtime < 1 s.
#[test]
fn criterion_1_prior_mean_exactness() {
    let start = Instant::now();
    let inside = GlottisMask::new(1, 1, vec![true]).unwrap();
    let outside = GlottisMask::new(1, 1, vec![false]).unwrap();
    assert_eq!(diffusion_init_mean(&inside, 0.0).unwrap().mu[0], 0.0);
    assert_eq!(diffusion_init_mean(&outside, 0.0).unwrap().mu[0], 1e-3);
    // Exact to floating point: equals the formula's own evaluation, within
    // one ulp of the printed 0.3e-3 value.
    let at_cap = diffusion_init_mean(&inside, 0.3).unwrap().mu[0];
    assert_eq!(at_cap, (1.0 - (0.3 * 0.0 + (1.0 - 0.3) * 1.0)) * 1e-3);
    assert!((at_cap - 0.3e-3).abs() < 1e-18);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let alpha = rng.gen_range(0.0..=0.3);
        let a = diffusion_init_mean(&inside, alpha).unwrap().mu[0];
        let b = diffusion_init_mean(&outside, alpha).unwrap().mu[0];
        assert!((a + b - 1e-3).abs() < 1e-18, "alpha {alpha}");
    }
    assert!(diffusion_init_mean(&inside, 0.5).is_err());
    finish("criterion 1: prior-mean formula exactness", 1.0, start);
}

/// Criterion 2: fluctuation statistic on monotone, alternating and 10^4
/// random sequences (term-accounting identity). Runtime < 5 s.
#[test]
fn criterion_2_fluctuation_formula() {
    let start = Instant::now();
    // A sequence over t_0..t_n has n+1 samples and n-1 terms.
    for n in 2..60usize {
        let inc: Vec<f64> = (0..=n).map(|i| i as f64).collect();
        assert_eq!(fluctuation_f(&inc).unwrap(), ((n - 1) as f64, 0));
        let alt: Vec<f64> = (0..=n).map(|i| (i % 2) as f64).collect();
        assert_eq!(fluctuation_f(&alt).unwrap(), (-((n - 1) as f64), n - 1));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let len = rng.gen_range(3..50usize);
        let values: Vec<f64> = (0..len)
            .map(|_| (rng.gen_range(-6i32..=6) as f64) / 3.0)
            .collect();
        let (f_t, reversals) = fluctuation_f(&values).unwrap();
        let zero_terms = values
            .windows(3)
            .filter(|w| (w[1] - w[0]) * (w[2] - w[1]) == 0.0)
            .count();
        assert_eq!(
            f_t + 2.0 * reversals as f64 + zero_terms as f64,
            (len - 2) as f64
        );
    }
    finish("criterion 2: fluctuation formula and identity", 5.0, start);
}

fn battery_ellipse(rotation_deg: f64) -> GlottisMask {
    let p = EllipseParams {
        width: 560,
        height: 560,
        center_x: 279.63,
        center_y: 279.19,
        semi_minor: 66.0,
        semi_major: 210.0,
        rotation_deg,
    };
    gen_ellipse_mask(&p).unwrap().0
}

fn angles(geo: &FoldGeometry) -> (Vec<f64>, Vec<f64>) {
    let a = geo.angles.as_ref().expect("angles");
    (a.left.clone(), a.right.clone())
}

/// Criterion 3: midline direction, left/right symmetry, rotation
/// equivariance and mirror flip on rasterized ellipses (minor axis 132 px,
/// rotations 0/15/30/45 degrees). Runtime < 30 s.
#[test]
fn criterion_3_mask_geometry() {
    let start = Instant::now();
    let cfg = GeometryConfig::default();
    let base = analyze_frame(&battery_ellipse(0.0), &cfg);
    let (base_l, base_r) = angles(&base);
    for rot in [0.0, 15.0, 30.0, 45.0] {
        let mask = battery_ellipse(rot);
        let geo = analyze_frame(&mask, &cfg);
        assert!(geo.degenerate.is_none(), "rot {rot}");
        let c = geo.center.unwrap();
        let dp = geo.d_prime.unwrap();
        let dir = (dp.x - c.x).atan2(dp.y - c.y).to_degrees();
        assert!((dir - rot).abs() < 2.0, "rot {rot}: direction {dir}");

        let (l, r) = angles(&geo);
        for k in 0..l.len() {
            assert!((l[k] - r[k]).abs() < 2.0, "rot {rot} level {}", k + 1);
        }
        for (a, b) in l.iter().chain(&r).zip(base_l.iter().chain(&base_r)) {
            assert!((a - b).abs() < 3.0, "rot {rot}: {a} vs {b}");
        }

        let mirrored = analyze_frame(&mask.mirror_horizontal(), &cfg);
        let (ml, mr) = angles(&mirrored);
        for k in 0..l.len() {
            assert!((l[k] - mr[k]).abs() < 1.0, "rot {rot} mirror level {}", k + 1);
            assert!((r[k] - ml[k]).abs() < 1.0, "rot {rot} mirror level {}", k + 1);
        }
    }
    finish("criterion 3: mask geometry on rasterized ellipses", 30.0, start);
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (
        a.iter().sum::<f64>() / n,
        b.iter().sum::<f64>() / n,
    );
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let (va, vb): (f64, f64) = (
        a.iter().map(|x| (x - ma) * (x - ma)).sum(),
        b.iter().map(|y| (y - mb) * (y - mb)).sum(),
    );
    cov / (va * vb).sqrt()
}

/// Criterion 4: area waveform exact on rectangles, Pearson r >= 0.99 against
/// the analytic area of a sinusoidal sequence. Runtime < 10 s.
#[test]
fn criterion_4_area_waveform() {
    let start = Instant::now();
    let rect = |w: usize, h: usize| {
        let mut m = GlottisMask::blank(12, 12);
        for y in 0..h {
            for x in 0..w {
                m.set(x, y, true);
            }
        }
        m
    };
    let seq = MaskSequence::new(25.0, vec![rect(10, 10), rect(7, 3), rect(1, 1)]).unwrap();
    assert_eq!(gaw(&seq).values, vec![100.0, 21.0, 1.0]);

    let (seq, truth) = gen_osc_sequence(
        &OscParams {
            amp_left: 5.0,
            amp_right: 5.0,
            frames: 80,
            ..OscParams::default()
        },
        4,
    )
    .unwrap();
    let GroundTruth::OscSequence { areas, .. } = truth else {
        panic!()
    };
    let r = pearson(&gaw(&seq).values, &areas);
    assert!(r >= 0.99, "Pearson r = {r}");
    finish("criterion 4: glottal area waveform", 10.0, start);
}

/// Criterion 5: 100 seeded sequences with 5x amplitude asymmetry classify
/// the correct side at least 99 times; the equal-amplitude control abstains.
/// Runtime < 60 s.
#[test]
fn criterion_5_side_determination() {
    let start = Instant::now();
    let cfg = GeometryConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut correct = 0;
    for trial in 0..100 {
        let strong = rng.gen_range(6.0..9.0);
        let left_is_weak = rng.gen_bool(0.5);
        let (amp_left, amp_right) = if left_is_weak {
            (strong / 5.0, strong)
        } else {
            (strong, strong / 5.0)
        };
        let params = OscParams {
            amp_left,
            amp_right,
            frames: 36,
            freq_hz: rng.gen_range(1.5..3.5),
            phase_left: rng.gen_range(0.0..std::f64::consts::TAU),
            phase_right: rng.gen_range(0.0..std::f64::consts::TAU),
            noise_std: 0.01,
            ..OscParams::default()
        };
        let (seq, truth) = gen_osc_sequence(&params, rng.gen()).unwrap();
        let GroundTruth::OscSequence { paralyzed, .. } = truth else {
            panic!()
        };
        let verdict = side_verdict(&vfdyn(&seq, &cfg).unwrap(), DEFAULT_DELTA).unwrap();
        if verdict.side == paralyzed {
            correct += 1;
        } else {
            eprintln!("trial {trial}: {paralyzed:?} classified as {:?}", verdict.side);
        }
    }
    assert!(correct >= 99, "{correct}/100 correct");

    let (seq, _) = gen_osc_sequence(
        &OscParams {
            amp_left: 6.0,
            amp_right: 6.0,
            frames: 36,
            ..OscParams::default()
        },
        55,
    )
    .unwrap();
    let control = side_verdict(&vfdyn(&seq, &GeometryConfig::default()).unwrap(), DEFAULT_DELTA)
        .unwrap();
    assert_eq!(control.side, Side::Indeterminate);
    finish("criterion 5: paralysis side determination", 60.0, start);
}

/// Criterion 6: two-burst audio at SNR 10 dB recovers both segments with
/// IoU >= 0.9 using the built-in scorer; a perfect sidecar recovers the
/// boundaries within one hop. Runtime < 20 s.
#[test]
fn criterion_6_vocalization_spotting() {
    let start = Instant::now();
    let bursts = vec![
        TimeSegment {
            start_s: 2.0,
            end_s: 4.0,
        },
        TimeSegment {
            start_s: 7.0,
            end_s: 9.0,
        },
    ];
    let (clip, _) = gen_vowel_audio(
        &VowelParams {
            duration_s: 11.0,
            segments: bursts.clone(),
            noise_snr_db: Some(10.0),
            ..VowelParams::default()
        },
        6,
    )
    .unwrap();
    let cfg = KwsConfig {
        threshold: VowelScorer::OPERATING_THRESHOLD,
        ..KwsConfig::fine()
    };
    let spec = stft_magnitude(&clip, &cfg).unwrap();
    let chunks = slide_chunks(&spec, &cfg).unwrap();
    let scorer = VowelScorer::new(clip.sample_rate, cfg.n_fft);
    let decisions = score_chunks(&chunks, &scorer).unwrap();
    let found = decisions_to_vocal_segments(&decisions, &cfg, spec.frame_hop_s);
    assert_eq!(found.len(), 2, "{found:?}");
    for (got, want) in found.iter().zip(&bursts) {
        let iou = got.iou(want);
        assert!(iou >= 0.9, "IoU {iou} for {got:?} vs {want:?}");
    }

    // Perfect sidecar: posterior 1 exactly while the chunk start lies in a
    // burst. Boundaries recovered within one hop.
    let hop = spec.frame_hop_s;
    let perfect: Vec<ChunkDecision> = chunks
        .iter()
        .map(|c| {
            let t = c.frame_index as f64 * hop;
            ChunkDecision {
                frame_index: c.frame_index,
                posterior: if bursts.iter().any(|b| t >= b.start_s && t < b.end_s) {
                    1.0
                } else {
                    0.0
                },
            }
        })
        .collect();
    let replayed = decisions_to_vocal_segments(&perfect, &KwsConfig::fine(), hop);
    assert_eq!(replayed.len(), 2);
    for (got, want) in replayed.iter().zip(&bursts) {
        assert!((got.start_s - want.start_s).abs() <= hop + 1e-9);
        assert!((got.end_s - want.end_s).abs() <= hop + 1e-9);
    }
    finish("criterion 6: vocalization spotting", 20.0, start);
}

/// Criterion 7: 50 seeded synthetic exam videos always select the strobing
/// segment; steady segments always count zero reversals. Runtime < 20 s.
#[test]
fn criterion_7_strobe_selection() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..50 {
        let params = StrobeParams {
            fps: rng.gen_range(20.0..30.0),
            steady_frames: rng.gen_range(10..40),
            gap_frames: rng.gen_range(3..8),
            strobe_frames: rng.gen_range(12..50),
            tail_frames: rng.gen_range(8..30),
            bright: rng.gen_range(0.4..0.7),
            delta: rng.gen_range(0.1..0.3),
            ..StrobeParams::default()
        };
        let (video, truth) = gen_strobe_video(&params).unwrap();
        let GroundTruth::StrobeVideo {
            nonempty_segments,
            strobe_index,
            ..
        } = truth
        else {
            panic!()
        };
        let track = hsv_track(&video);
        let empty = empty_frame_mask(&track, params.fps, 0.02);
        let segments = split_nonempty(&empty);
        assert_eq!(segments.len(), 3, "trial {trial}");
        let report = select_strobe(&track, &segments, params.fps, HsvChannel::Value).unwrap();
        assert_eq!(report.selected, nonempty_segments[strobe_index], "trial {trial}");
        for (i, &rev) in report.reversal_counts.iter().enumerate() {
            if i != strobe_index {
                assert_eq!(rev, 0, "trial {trial} segment {i}");
            } else {
                assert!(rev >= (params.strobe_frames - 2) * 8 / 10, "trial {trial}");
            }
        }
    }
    finish("criterion 7: strobe segment selection", 20.0, start);
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_laryngo"))
        .args(args)
        .output()
        .expect("spawn laryngo")
}

fn dir_digest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

/// Criterion 8: the `analyze` command on a full synthetic exam bundle finds
/// the highlights with IoU >= 0.85, calls the correct paralysis side, and
/// reruns byte-identically. Runtime < 60 s.
#[test]
fn criterion_8_end_to_end_analyze() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.json");
    std::fs::write(
        &spec_path,
        r#"{"seed": 8, "kind": "exam", "params": {
            "fps": 25.0, "duration_s": 20.0, "sample_rate": 16000,
            "vocal_segments": [{"start_s": 3.0, "end_s": 8.0}, {"start_s": 12.0, "end_s": 17.0}],
            "visible_segments": [{"start_s": 2.5, "end_s": 8.5}, {"start_s": 11.5, "end_s": 17.5}],
            "amp_left": 8.0, "amp_right": 0.0, "noise_snr_db": 10.0
        }}"#,
    )
    .unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, r#"{"kws": {"n_fft": 400, "hop": 64}}"#).unwrap();

    let bundle = dir.path().join("bundle");
    let out = run_cli(&[
        "synth",
        "--spec",
        spec_path.to_str().unwrap(),
        "--out",
        bundle.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let analyze = |out_dir: &Path| {
        let out = run_cli(&[
            "analyze",
            "--audio",
            bundle.join("audio.wav").to_str().unwrap(),
            "--frames",
            bundle.join("frames").to_str().unwrap(),
            "--masks",
            bundle.join("masks").to_str().unwrap(),
            "--detections",
            bundle.join("detections.csv").to_str().unwrap(),
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    let run1 = dir.path().join("run1");
    let run2 = dir.path().join("run2");
    analyze(&run1);
    analyze(&run2);
    assert_eq!(dir_digest(&run1), dir_digest(&run2), "reruns differ");

    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(bundle.join("ground_truth.json")).unwrap())
            .unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run1.join("report.json")).unwrap()).unwrap();

    let gt_highlights = truth["highlights"].as_array().unwrap();
    let highlights = report["highlights"].as_array().unwrap();
    assert_eq!(highlights.len(), gt_highlights.len());
    for (got, want) in highlights.iter().zip(gt_highlights) {
        let (gs, ge) = (got["start_s"].as_f64().unwrap(), got["end_s"].as_f64().unwrap());
        let (ws, we) = (
            want["start_s"].as_f64().unwrap(),
            want["end_s"].as_f64().unwrap(),
        );
        let inter = (ge.min(we) - gs.max(ws)).max(0.0);
        let union = ge.max(we) - gs.min(ws);
        assert!(inter / union >= 0.85, "IoU {}", inter / union);
    }
    assert_eq!(
        report["side"]["side"].as_str().unwrap(),
        truth["paralyzed"].as_str().unwrap()
    );
    finish("criterion 8: end-to-end analyze", 60.0, start);
}
