//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sr_core::data::{load_image, save_image};
use sr_core::metrics::{niqe_score, psnr_y, render_report, NiqeModel, QualityReport};
use sr_core::models::Generator;
use sr_core::rng::RngState;
use sr_core::training::{pretrain_psnr, resume_training, train_gan, Checkpoint, Phase};
use sr_core::{Error, Result};

use crate::config::RunConfigFile;
use crate::{NoiseArg, PhaseArg};

pub fn train(
    config_path: &Path,
    phase: PhaseArg,
    resume: Option<&Path>,
    seed: Option<u64>,
    deterministic: bool,
) -> Result<()> {
    if !deterministic {
        return Err(Error::Config(
            "non-deterministic training is not implemented; omit --deterministic or pass true"
                .into(),
        ));
    }
    let file = RunConfigFile::load(config_path)?;
    let phase = match phase {
        PhaseArg::Pretrain => Phase::PsnrPretrain,
        PhaseArg::Gan => Phase::Gan,
    };
    let cfg = file.train_config(phase, seed);
    let data = sr_core::data::DatasetIndex::build(&file.data.train_dir)?;
    let out_dir = file.train.output_dir.clone();

    let result = match resume {
        Some(ckpt_path) => {
            let ckpt = Checkpoint::load(ckpt_path)?;
            println!(
                "resuming {} from iteration {} of {}",
                phase_name(phase),
                ckpt.iteration,
                cfg.total_iters
            );
            resume_training(&cfg, &data, &ckpt, Some(&out_dir))?
        }
        None => match phase {
            Phase::PsnrPretrain => {
                println!(
                    "pretraining for {} iterations on {} images",
                    cfg.total_iters,
                    data.len()
                );
                pretrain_psnr(&cfg, &data, Some(&out_dir))?
            }
            Phase::Gan => {
                let init = match &file.train.init_checkpoint {
                    Some(path) if !path.as_os_str().is_empty() => {
                        Some(Checkpoint::load(path)?)
                    }
                    _ => None,
                };
                if init.is_none() {
                    println!("note: no init_checkpoint configured; generator starts fresh");
                }
                println!(
                    "gan training for {} iterations on {} images",
                    cfg.total_iters,
                    data.len()
                );
                train_gan(&cfg, &data, init.as_ref(), Some(&out_dir))?
            }
        },
    };

    if let Some(last) = result.log.last() {
        println!(
            "done: iteration {} loss_total {:.6} (log and checkpoints under {})",
            last.iter,
            last.loss_total,
            out_dir.display()
        );
    }
    Ok(())
}

fn phase_name(phase: Phase) -> &'static str {
    match phase {
        Phase::PsnrPretrain => "pretrain",
        Phase::Gan => "gan",
    }
}

fn png_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(Error::Data(format!(
            "input not found: {}",
            path.display()
        )));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no .png files in {}",
            path.display()
        )));
    }
    Ok(files)
}

/// Load a generator from a weight file or, when given a training
/// checkpoint, from its embedded generator payload.
fn load_generator(path: &Path) -> Result<Generator> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"SRCK") {
        let ckpt = Checkpoint::from_bytes(&bytes, path)?;
        return ckpt.restore_generator();
    }
    Generator::from_weight_bytes(&bytes, path)
}

pub fn super_resolve(
    weights: &Path,
    input: &Path,
    output: &Path,
    seed: u64,
    noise: NoiseArg,
) -> Result<()> {
    let gen = load_generator(weights)?;
    let use_noise = match noise {
        NoiseArg::Auto => gen.spec().noise_enabled,
        NoiseArg::On => {
            if !gen.spec().noise_enabled {
                return Err(Error::Config(
                    "--noise on requires weights trained with noise injection".into(),
                ));
            }
            true
        }
        NoiseArg::Off => false,
    };
    std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let mut rng = RngState::derive(seed, &[0x5A]);
    for file in png_files(input)? {
        let img = load_image(&file)?;
        let sr = gen.super_resolve(&img, &mut rng, use_noise)?;
        let name = file
            .file_name()
            .ok_or_else(|| Error::Data(format!("bad file name: {}", file.display())))?;
        let out_path = output.join(name);
        save_image(&sr, &out_path)?;
        println!(
            "{} ({}x{}) -> {} ({}x{})",
            file.display(),
            img.width(),
            img.height(),
            out_path.display(),
            sr.width(),
            sr.height()
        );
    }
    Ok(())
}

fn stem_map(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut map = BTreeMap::new();
    for file in png_files(dir)? {
        let stem = file
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Data(format!("bad file name: {}", file.display())))?
            .to_string();
        map.insert(stem, file);
    }
    Ok(map)
}

fn load_ma_file(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.to_lowercase().starts_with("filename")) {
            continue;
        }
        let (name, value) = line.split_once(',').ok_or_else(|| {
            Error::Data(format!(
                "{}:{}: expected `filename,ma`",
                path.display(),
                lineno + 1
            ))
        })?;
        let value: f64 = value.trim().parse().map_err(|_| {
            Error::Data(format!(
                "{}:{}: bad ma value '{}'",
                path.display(),
                lineno + 1,
                value
            ))
        })?;
        let stem = Path::new(name.trim())
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(name.trim())
            .to_string();
        map.insert(stem, value);
    }
    Ok(map)
}

pub fn eval(
    sr_dir: &Path,
    hr_dir: &Path,
    niqe_model: &Path,
    ma_file: Option<&Path>,
    ma_const: Option<f64>,
    crop_border: usize,
    out: &Path,
) -> Result<()> {
    let sr_map = stem_map(sr_dir)?;
    let hr_map = stem_map(hr_dir)?;
    let missing_sr: Vec<&String> = hr_map.keys().filter(|k| !sr_map.contains_key(*k)).collect();
    let missing_hr: Vec<&String> = sr_map.keys().filter(|k| !hr_map.contains_key(*k)).collect();
    if !missing_sr.is_empty() || !missing_hr.is_empty() {
        return Err(Error::Data(format!(
            "stem mismatch between directories; missing in sr-dir: [{}], missing in hr-dir: [{}]",
            missing_sr
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", "),
            missing_hr
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }

    let model = NiqeModel::load(niqe_model)?;
    let ma_map = ma_file.map(load_ma_file).transpose()?;

    let mut rows = Vec::new();
    for (stem, sr_path) in &sr_map {
        let sr = load_image(sr_path)?;
        let hr = load_image(&hr_map[stem])?;
        let psnr = psnr_y(&sr, &hr, crop_border)?;
        let niqe = niqe_score(&sr, &model)?;
        let ma = match (&ma_map, ma_const) {
            (Some(map), _) => Some(*map.get(stem).ok_or_else(|| {
                Error::Data(format!("ma-file has no entry for stem '{stem}'"))
            })?),
            (None, Some(c)) => Some(c),
            (None, None) => None,
        };
        rows.push(QualityReport::new(format!("{stem}.png"), psnr, niqe, ma));
    }
    let csv = render_report(&rows);
    std::fs::write(out, &csv).map_err(|e| Error::io(out, e))?;
    // echo the mean row for quick reading
    if let Some(mean_line) = csv.lines().last() {
        println!("{}", sr_core::metrics::REPORT_HEADER);
        println!("{mean_line}");
    }
    println!("report written to {}", out.display());
    Ok(())
}

pub fn fit_niqe(pristine_dir: &Path, out: &Path, patch_size: usize) -> Result<()> {
    let files = png_files(pristine_dir)?;
    if files.len() < 2 {
        return Err(Error::Data(format!(
            "pristine corpus needs at least 2 images, found {}",
            files.len()
        )));
    }
    let mut corpus = Vec::with_capacity(files.len());
    for file in &files {
        corpus.push(load_image(file)?);
    }
    let model = sr_core::metrics::fit_pristine_model(&corpus, patch_size)?;
    model.save(out)?;
    println!(
        "fitted NIQE model from {} images (patch {}) -> {}",
        corpus.len(),
        patch_size,
        out.display()
    );
    Ok(())
}
