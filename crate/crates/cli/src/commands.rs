use std::path::{Path, PathBuf};

use pkinns::evaluation::{
    derivative_agreement, discovery_text, export_run, extrapolation_mse, write_manifest, RunArtifacts,
};
use pkinns::pk::{
    add_noise, integrate_substeps, read_trajectory_csv, split_train_test, uniform_grid, write_trajectory_csv,
    NoisyDataset,
};
use pkinns::sr::{discover, report_csv, Discovery};
use pkinns::trainer::{train, PkinnModel, TrainReport};

use crate::config::{NoiseLevel, NoiseSelection, RunConfig, Stage};
use crate::error::{io, CliError};

pub const CLEAN_FILE: &str = "clean.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const TRAINING_FILE: &str = "training.csv";
pub const DISCOVERY_CSV: &str = "discovery.csv";
pub const DISCOVERY_TXT: &str = "discovery.txt";
pub const CONFIG_ECHO: &str = "config.txt";

pub fn noisy_file(level: NoiseLevel) -> String {
    format!("noisy_{}.csv", level.value())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io(dir))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(io(&path))?;
    Ok(PathBuf::from(name))
}

/// Subcommands other than `simulate` and `pipeline` work on one dataset.
fn single_level(cfg: &RunConfig, command: &str) -> Result<NoiseLevel, CliError> {
    match cfg.noise {
        NoiseSelection::One(l) => Ok(l),
        NoiseSelection::All => Err(CliError::Config(format!(
            "`{command}` works on one noise level; use `--noise all` with `simulate` or `pipeline`"
        ))),
    }
}

fn full_grid(cfg: &RunConfig) -> Vec<f64> {
    uniform_grid(cfg.t_start, cfg.t_end, cfg.n_points)
}

fn training_grid(cfg: &RunConfig) -> Vec<f64> {
    full_grid(cfg).into_iter().filter(|&t| t < cfg.t_split).collect()
}

pub fn simulate_level(cfg: &RunConfig, level: NoiseLevel) -> Result<NoisyDataset, CliError> {
    let clean = integrate_substeps(&cfg.params, cfg.x_init.into(), &full_grid(cfg), cfg.substeps)?;
    Ok(add_noise(&clean, cfg.sigma(level), cfg.stage_seed(Stage::Simulate, level))?)
}

/// Writes `clean.csv` and one `noisy_<value>.csv` per selected level.
pub fn simulate(cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    create_dir(dir)?;
    let mut written = Vec::new();
    for level in cfg.noise.levels() {
        let ds = simulate_level(cfg, level)?;
        if written.is_empty() {
            write_trajectory_csv(&ds.clean, &dir.join(CLEAN_FILE))?;
            written.push(PathBuf::from(CLEAN_FILE));
        }
        let name = noisy_file(level);
        write_trajectory_csv(&ds.noisy, &dir.join(&name))?;
        written.push(PathBuf::from(name));
    }
    Ok(written)
}

pub fn load_dataset(cfg: &RunConfig, level: NoiseLevel, data_dir: &Path) -> Result<NoisyDataset, CliError> {
    let clean = read_trajectory_csv(&data_dir.join(CLEAN_FILE))?;
    let noisy = read_trajectory_csv(&data_dir.join(noisy_file(level)))?;
    if clean.times() != noisy.times() {
        return Err(pkinns::Error::Shape(format!(
            "{} and {} are on different time grids",
            CLEAN_FILE,
            noisy_file(level)
        ))
        .into());
    }
    Ok(NoisyDataset {
        clean,
        noisy,
        noise_sigma: cfg.sigma(level),
        seed: cfg.stage_seed(Stage::Simulate, level),
    })
}

pub fn train_level(cfg: &RunConfig, level: NoiseLevel, data: &NoisyDataset) -> Result<(PkinnModel, TrainReport), CliError> {
    let (train_set, _) = split_train_test(data, cfg.t_split)?;
    let tc = cfg.train_config(level);
    let mut model = PkinnModel::with_architecture(&cfg.x_hidden, &cfg.f_hidden, cfg.mode, tc.seed)?;
    model.loss_weights = cfg.loss_weights;
    Ok(train(&model, &train_set, &tc)?)
}

fn write_training(dir: &Path, model: &PkinnModel, report: &TrainReport) -> Result<Vec<PathBuf>, CliError> {
    create_dir(dir)?;
    model.save(&dir.join(CHECKPOINT_FILE))?;
    report.write_csv(&dir.join(TRAINING_FILE))?;
    Ok(vec![PathBuf::from(CHECKPOINT_FILE), PathBuf::from(TRAINING_FILE)])
}

pub fn cmd_train(cfg: &RunConfig, data_dir: &Path, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let level = single_level(cfg, "train")?;
    let data = load_dataset(cfg, level, data_dir)?;
    let (model, report) = train_level(cfg, level, &data)?;
    if let Some(last) = report.trace.last() {
        println!("epoch {}: loss {:e} (data {:e})", last.epoch, last.loss.total, last.loss.data);
    }
    write_training(dir, &model, &report)
}

pub fn discover_level(cfg: &RunConfig, level: NoiseLevel, model: &PkinnModel) -> Result<Vec<Discovery>, CliError> {
    let grid = training_grid(cfg);
    let settings = cfg.discovery_settings(level);
    cfg.method
        .methods()
        .into_iter()
        .map(|m| discover(model, &grid, m, &settings).map_err(CliError::from))
        .collect()
}

pub fn cmd_discover(cfg: &RunConfig, checkpoint: &Path, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let level = single_level(cfg, "discover")?;
    let model = PkinnModel::load(checkpoint)?;
    let discoveries = discover_level(cfg, level, &model)?;
    create_dir(dir)?;
    let text = discovery_text(&discoveries, Some(&cfg.params));
    print!("{text}");
    Ok(vec![
        write(dir, DISCOVERY_CSV, &report_csv(&discoveries, 1))?,
        write(dir, DISCOVERY_TXT, &text)?,
    ])
}

fn evaluation_artifacts(cfg: &RunConfig, model: &PkinnModel, data: NoisyDataset) -> Result<RunArtifacts, CliError> {
    let (_, test) = split_train_test(&data, cfg.t_split)?;
    let pred = model.predict(data.times())?;
    Ok(RunArtifacts {
        derivatives: Some(derivative_agreement(model, &training_grid(cfg))?),
        extrapolation: Some(extrapolation_mse(model, &test)?),
        curves: Some((data, pred, cfg.t_split)),
        truth: Some(cfg.params),
        ..Default::default()
    })
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path, data_dir: &Path, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let level = single_level(cfg, "evaluate")?;
    let model = PkinnModel::load(checkpoint)?;
    let data = load_dataset(cfg, level, data_dir)?;
    let artifacts = evaluation_artifacts(cfg, &model, data)?;
    if let Some(r) = &artifacts.extrapolation {
        println!("extrapolation mse: {:e} {:e} {:e}", r.mse[0], r.mse[1], r.mse[2]);
    }
    Ok(export_run(&artifacts, dir)?)
}

/// One complete run for a single noise level. Stage errors carry the
/// stage name.
pub fn pipeline_level(cfg: &RunConfig, level: NoiseLevel, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let cfg = RunConfig {
        noise: NoiseSelection::One(level),
        ..cfg.clone()
    };
    let mut files = vec![];
    create_dir(dir).map_err(|e| e.in_stage("simulate"))?;
    files.push(write(dir, CONFIG_ECHO, &cfg.echo()).map_err(|e| e.in_stage("simulate"))?);
    files.extend(simulate(&cfg, dir).map_err(|e| e.in_stage("simulate"))?);
    let data = load_dataset(&cfg, level, dir).map_err(|e| e.in_stage("simulate"))?;

    let (model, report) = train_level(&cfg, level, &data).map_err(|e| e.in_stage("train"))?;
    files.extend(write_training(dir, &model, &report).map_err(|e| e.in_stage("train"))?);

    let discoveries = discover_level(&cfg, level, &model).map_err(|e| e.in_stage("discover"))?;
    files.push(write(dir, DISCOVERY_CSV, &report_csv(&discoveries, 1)).map_err(|e| e.in_stage("discover"))?);

    let mut artifacts = evaluation_artifacts(&cfg, &model, data).map_err(|e| e.in_stage("evaluate"))?;
    artifacts.discoveries = discoveries;
    artifacts.extra_files = files;
    export_run(&artifacts, dir).map_err(|e| CliError::from(e).in_stage("export"))
}

/// Runs every selected level. With `--noise all` each level gets its own
/// subdirectory and runs on its own thread; the top-level directory holds
/// the config echo and a manifest over all sub-runs.
pub fn cmd_pipeline(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    match cfg.noise {
        NoiseSelection::One(level) => {
            pipeline_level(cfg, level, dir)?;
        }
        NoiseSelection::All => {
            create_dir(dir)?;
            let results: Vec<_> = std::thread::scope(|s| {
                let handles: Vec<_> = NoiseLevel::ALL
                    .iter()
                    .map(|&l| {
                        let sub = dir.join(l.name());
                        s.spawn(move || pipeline_level(cfg, l, &sub).map(|files| (l, files)))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("pipeline thread panicked")).collect()
            });
            let mut listed = vec![write(dir, CONFIG_ECHO, &cfg.echo())?];
            for r in results {
                let (level, files) = r?;
                listed.extend(files.into_iter().map(|f| Path::new(level.name()).join(f)));
            }
            write_manifest(dir, &listed)?;
        }
    }
    println!("run written to {}", dir.display());
    Ok(())
}
