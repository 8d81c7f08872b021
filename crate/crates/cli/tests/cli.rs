//! End-to-end tests of the `srlab` binary: exit codes, file outputs, and
//! determinism contracts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sr_core::data::{save_image, ImageRGB};
use sr_core::rng::RngState;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_srlab")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

/// Smooth synthetic image (blurred multi-scale noise).
fn synthetic_image(seed: u64, h: usize, w: usize) -> ImageRGB {
    let mut rng = RngState::derive(seed, &[0xC11]);
    let ch = (h / 8).max(2);
    let cw = (w / 8).max(2);
    let mut planes = Vec::new();
    for _ in 0..3 {
        let coarse: Vec<f64> = (0..ch * cw).map(|_| rng.uniform()).collect();
        let up = sr_core::data::resample_plane(&coarse, ch, cw, h, w, false);
        let plane: Vec<f64> = up
            .iter()
            .map(|v| (0.2 + 0.6 * v + 0.05 * rng.uniform()).clamp(0.0, 1.0))
            .collect();
        planes.push(plane);
    }
    ImageRGB::from_fn(h, w, |c, y, x| planes[c][y * w + x])
}

fn write_images(dir: &Path, count: usize, h: usize, w: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..count {
        let img = synthetic_image(seed + i as u64, h, w);
        save_image(&img, &dir.join(format!("img{i:02}.png"))).unwrap();
    }
}

fn write_config(path: &Path, data_dir: &Path, out_dir: &Path, extra: &str) {
    let text = format!(
        r#"
[model]
block = "rrdrb"
noise = true
num_blocks = 1
num_features = 8
growth_channels = 4

[discriminator]
base_channels = 8
downsample_stages = 3

[data]
train_dir = "{}"
hr_crop = 32
batch = 2

[train]
seed = 7
pretrain_iters = 6
gan_iters = 3
checkpoint_every = 3
output_dir = "{}"
init_checkpoint = "{}"
{extra}

[loss]
feature_depth = 2
"#,
        data_dir.display(),
        out_dir.display(),
        out_dir.join("checkpoints/pretrain_iter0000006.ckpt").display(),
    );
    std::fs::write(path, text).unwrap();
}

struct TrainFixture {
    _tmp: tempfile::TempDir,
    config: PathBuf,
    out_dir: PathBuf,
}

fn train_fixture() -> TrainFixture {
    let tmp = tempfile::tempdir().unwrap();
    let data_dir = tmp.path().join("data");
    write_images(&data_dir.join("HR"), 4, 48, 48, 50);
    let out_dir = tmp.path().join("out");
    let config = tmp.path().join("run.toml");
    write_config(&config, &data_dir, &out_dir, "");
    TrainFixture {
        _tmp: tmp,
        config,
        out_dir,
    }
}

#[test]
fn train_smoke_completes_and_writes_checkpoints() {
    let fx = train_fixture();
    let out = run(&[
        "train",
        "--config",
        fx.config.to_str().unwrap(),
        "--phase",
        "pretrain",
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    let ckpt = fx.out_dir.join("checkpoints/pretrain_iter0000006.ckpt");
    assert!(ckpt.is_file());
    assert!(fx.out_dir.join("logs/train_pretrain.csv").is_file());

    // gan phase initialized from the pretrain checkpoint
    let out = run(&[
        "train",
        "--config",
        fx.config.to_str().unwrap(),
        "--phase",
        "gan",
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    assert!(fx.out_dir.join("checkpoints/gan_iter0000003.ckpt").is_file());
}

#[test]
fn train_missing_hr_dir_is_exit_2_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let data_dir = tmp.path().join("nothing-here");
    let config = tmp.path().join("run.toml");
    write_config(&config, &data_dir, &tmp.path().join("out"), "");
    let out = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--phase",
        "pretrain",
    ]);
    assert_eq!(exit_code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("nothing-here"), "{}", stderr(&out));
}

#[test]
fn resume_with_wrong_config_hash_is_exit_1() {
    let fx = train_fixture();
    let out = run(&[
        "train",
        "--config",
        fx.config.to_str().unwrap(),
        "--phase",
        "pretrain",
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    let ckpt = fx.out_dir.join("checkpoints/pretrain_iter0000003.ckpt");
    // different seed => different config hash
    let out = run(&[
        "train",
        "--config",
        fx.config.to_str().unwrap(),
        "--phase",
        "pretrain",
        "--resume",
        ckpt.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert_eq!(exit_code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("hash"), "{}", stderr(&out));
}

#[test]
fn unknown_flags_and_keys_are_fatal() {
    let out = run(&["train", "--confug", "x.toml", "--phase", "pretrain"]);
    assert_eq!(exit_code(&out), 1);

    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    let fx = train_fixture();
    let base = std::fs::read_to_string(&fx.config).unwrap();
    std::fs::write(&config, format!("{base}\nmystery_key = 3\n")).unwrap();
    let out = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--phase",
        "pretrain",
    ]);
    assert_eq!(exit_code(&out), 1, "{}", stderr(&out));
}

#[test]
fn deterministic_false_is_rejected() {
    let fx = train_fixture();
    let out = run(&[
        "train",
        "--config",
        fx.config.to_str().unwrap(),
        "--phase",
        "pretrain",
        "--deterministic",
        "false",
    ]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn train_twice_is_byte_identical() {
    let fx = train_fixture();
    let args = [
        "train",
        "--config",
        fx.config.to_str().unwrap(),
        "--phase",
        "pretrain",
    ];
    assert_eq!(exit_code(&run(&args)), 0);
    let ckpt_path = fx.out_dir.join("checkpoints/pretrain_iter0000006.ckpt");
    let first = std::fs::read(&ckpt_path).unwrap();
    assert_eq!(exit_code(&run(&args)), 0);
    let second = std::fs::read(&ckpt_path).unwrap();
    assert_eq!(first, second);
}

fn trained_weights(fx: &TrainFixture) -> PathBuf {
    let out = run(&[
        "train",
        "--config",
        fx.config.to_str().unwrap(),
        "--phase",
        "pretrain",
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    // sr accepts the checkpoint directly; also derive a bare weight file to
    // exercise both container formats
    let ckpt_path = fx.out_dir.join("checkpoints/pretrain_iter0000006.ckpt");
    let ckpt = sr_core::training::Checkpoint::load(&ckpt_path).unwrap();
    let weights = fx.out_dir.join("gen.weights");
    std::fs::write(&weights, &ckpt.generator).unwrap();

    let from_ckpt = fx.out_dir.join("sr_from_ckpt");
    let input_dir = fx.out_dir.join("probe_in");
    write_images(&input_dir, 1, 16, 16, 777);
    let out = run(&[
        "sr",
        "--weights",
        ckpt_path.to_str().unwrap(),
        "--input",
        input_dir.to_str().unwrap(),
        "--output",
        from_ckpt.to_str().unwrap(),
        "--noise",
        "off",
    ]);
    assert_eq!(exit_code(&out), 0, "checkpoint as weights: {}", stderr(&out));
    let probe = sr_core::data::load_image(&from_ckpt.join("img00.png")).unwrap();
    assert_eq!((probe.height(), probe.width()), (64, 64));
    weights
}

#[test]
fn sr_shapes_noise_toggle_and_determinism() {
    let fx = train_fixture();
    let weights = trained_weights(&fx);
    let input_dir = fx.out_dir.join("inputs");
    write_images(&input_dir, 1, 32, 32, 500);

    let sr_a = fx.out_dir.join("sr_a");
    let sr_b = fx.out_dir.join("sr_b");
    for (dir, seed) in [(&sr_a, "1"), (&sr_b, "1")] {
        let out = run(&[
            "sr",
            "--weights",
            weights.to_str().unwrap(),
            "--input",
            input_dir.to_str().unwrap(),
            "--output",
            dir.to_str().unwrap(),
            "--seed",
            seed,
            "--noise",
            "off",
        ]);
        assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    }
    // 32x32 -> 128x128
    let img = sr_core::data::load_image(&sr_a.join("img00.png")).unwrap();
    assert_eq!((img.height(), img.width()), (128, 128));
    // --noise off twice: byte-identical
    assert_eq!(
        std::fs::read(sr_a.join("img00.png")).unwrap(),
        std::fs::read(sr_b.join("img00.png")).unwrap()
    );

    // noise on with different seeds: localized texture differences
    // (nonzero max difference, small mean difference)
    let gen = sr_core::models::Generator::from_weights(&weights).unwrap();
    for p in gen.parameters() {
        if p.name.ends_with("noise_scale") {
            p.tensor.update_data(|d| d.fill(0.05));
        }
    }
    let noisy_weights = fx.out_dir.join("gen_noisy.weights");
    gen.save_weights(&noisy_weights).unwrap();
    let sr_n1 = fx.out_dir.join("sr_n1");
    let sr_n2 = fx.out_dir.join("sr_n2");
    for (dir, seed) in [(&sr_n1, "1"), (&sr_n2, "2")] {
        let out = run(&[
            "sr",
            "--weights",
            noisy_weights.to_str().unwrap(),
            "--input",
            input_dir.to_str().unwrap(),
            "--output",
            dir.to_str().unwrap(),
            "--seed",
            seed,
            "--noise",
            "on",
        ]);
        assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    }
    let a = sr_core::data::load_image(&sr_n1.join("img00.png")).unwrap();
    let b = sr_core::data::load_image(&sr_n2.join("img00.png")).unwrap();
    let mut max_diff = 0.0f64;
    let mut sum_diff = 0.0f64;
    for c in 0..3 {
        for (x, y) in a.plane(c).iter().zip(b.plane(c)) {
            let d = (x - y).abs();
            max_diff = max_diff.max(d);
            sum_diff += d;
        }
    }
    let mean_diff = sum_diff / (3 * 128 * 128) as f64;
    assert!(max_diff > 0.0, "different seeds should change some pixels");
    assert!(mean_diff < 0.1, "noise should stay localized, mean {mean_diff}");
}

#[test]
fn sr_noise_on_without_noise_weights_is_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = sr_core::models::GeneratorSpec {
        num_blocks: 1,
        num_features: 8,
        growth_channels: 4,
        noise_enabled: false,
        ..sr_core::models::GeneratorSpec::default()
    };
    let gen = sr_core::models::Generator::new(&spec, &mut RngState::new(0)).unwrap();
    let weights = tmp.path().join("plain.weights");
    gen.save_weights(&weights).unwrap();
    let input_dir = tmp.path().join("in");
    write_images(&input_dir, 1, 16, 16, 1);
    let out = run(&[
        "sr",
        "--weights",
        weights.to_str().unwrap(),
        "--input",
        input_dir.to_str().unwrap(),
        "--output",
        tmp.path().join("out").to_str().unwrap(),
        "--noise",
        "on",
    ]);
    assert_eq!(exit_code(&out), 1, "{}", stderr(&out));
}

struct EvalFixture {
    _tmp: tempfile::TempDir,
    hr_dir: PathBuf,
    model_path: PathBuf,
    root: PathBuf,
}

fn eval_fixture() -> EvalFixture {
    let tmp = tempfile::tempdir().unwrap();
    let hr_dir = tmp.path().join("hr");
    write_images(&hr_dir, 3, 96, 96, 900);
    let pristine = tmp.path().join("pristine");
    write_images(&pristine, 4, 96, 96, 950);
    let model_path = tmp.path().join("niqe.bin");
    let out = run(&[
        "fit-niqe",
        "--pristine-dir",
        pristine.to_str().unwrap(),
        "--out",
        model_path.to_str().unwrap(),
        "--patch-size",
        "24",
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    let root = tmp.path().to_path_buf();
    EvalFixture {
        _tmp: tmp,
        hr_dir,
        model_path,
        root,
    }
}

#[test]
fn eval_identical_dirs_give_infinite_psnr_and_golden_header() {
    let fx = eval_fixture();
    let report = fx.root.join("report.csv");
    let out = run(&[
        "eval",
        "--sr-dir",
        fx.hr_dir.to_str().unwrap(),
        "--hr-dir",
        fx.hr_dir.to_str().unwrap(),
        "--niqe-model",
        fx.model_path.to_str().unwrap(),
        "--ma-file",
        {
            let ma = fx.root.join("ma.csv");
            std::fs::write(&ma, "img00.png,10\nimg01.png,10\nimg02.png,10\n").unwrap();
            Box::leak(ma.into_os_string().into_string().unwrap().into_boxed_str())
        },
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&report).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "filename,psnr_y,niqe,ma,perceptual_index"
    );
    let mut mean_line = String::new();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 5);
        assert_eq!(cells[1], "inf");
        if cells[0] == "mean" {
            mean_line = line.to_string();
        } else {
            // ma = 10 => perceptual index = niqe / 2
            let niqe: f64 = cells[2].parse().unwrap();
            let pi: f64 = cells[4].parse().unwrap();
            assert!((pi - niqe / 2.0).abs() < 1e-5, "{line}");
        }
    }
    assert!(!mean_line.is_empty(), "mean row present");
}

#[test]
fn eval_stem_mismatch_is_exit_2_listing_missing() {
    let fx = eval_fixture();
    let sr_dir = fx.root.join("sr_partial");
    std::fs::create_dir_all(&sr_dir).unwrap();
    std::fs::copy(fx.hr_dir.join("img00.png"), sr_dir.join("img00.png")).unwrap();
    let out = run(&[
        "eval",
        "--sr-dir",
        sr_dir.to_str().unwrap(),
        "--hr-dir",
        fx.hr_dir.to_str().unwrap(),
        "--niqe-model",
        fx.model_path.to_str().unwrap(),
        "--out",
        fx.root.join("r.csv").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("img01") && err.contains("img02"), "{err}");
}

#[test]
fn fit_niqe_is_deterministic_and_needs_two_images() {
    let fx = eval_fixture();
    let again = fx.root.join("niqe2.bin");
    let out = run(&[
        "fit-niqe",
        "--pristine-dir",
        fx.root.join("pristine").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
        "--patch-size",
        "24",
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        std::fs::read(&fx.model_path).unwrap(),
        std::fs::read(&again).unwrap()
    );

    let empty = fx.root.join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let out = run(&[
        "fit-niqe",
        "--pristine-dir",
        empty.to_str().unwrap(),
        "--out",
        fx.root.join("x.bin").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn numerical_abort_is_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let data_dir = tmp.path().join("data");
    write_images(&data_dir.join("HR"), 2, 48, 48, 70);
    let config = tmp.path().join("run.toml");
    // an absurd learning rate reliably drives the loss non-finite
    write_config(
        &config,
        &data_dir,
        &tmp.path().join("out"),
        "base_lr = 1e18\n",
    );
    let out = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--phase",
        "pretrain",
    ]);
    assert_eq!(exit_code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite"), "{}", stderr(&out));
}

#[test]
fn help_exits_zero_and_documents_flags() {
    for sub in ["train", "sr", "eval", "fit-niqe"] {
        let out = run(&[sub, "--help"]);
        assert_eq!(exit_code(&out), 0);
        let text = String::from_utf8_lossy(&out.stdout).to_string();
        assert!(text.contains("--"), "{sub} help lists flags");
    }
}
