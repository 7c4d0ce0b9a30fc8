//! Subcommand handlers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use roverplan::eval::{
    evaluate, export_trajectory_overlay, export_value_map, sample_starts, DEFAULT_STARTS_PER_MAP,
};
use roverplan::gridworld::{
    build_dataset, generate_maps, map_seed, Action, Dataset, Environment, Pos, Split, MANIFEST_FILE,
};
use roverplan::models::{Arch, Model, ModelSpec};
use roverplan::netcore::L2Mode;
use roverplan::planner::{
    adjudicate, plan as plan_one, plan_multi, trajectory_json, ConstantAction, ExpertPolicy,
    Policy, UniformRandom,
};
use roverplan::terrain::render_crater_scene;
use roverplan::training::{train_with, EpochReport, Hyperparams, TrainOptions};
use serde_json::json;

use crate::args::{
    parse_cell, with_config, EvalArgs, GenArgs, PlanArgs, PolicyArgs, TrainArgs, VizArgs,
};
use crate::{CliError, EXIT_FINGERPRINT};

pub const RUN_CONFIG: &str = "run.json";
pub const TRAIN_LOG: &str = "train.log";
pub const METRICS: &str = "metrics.json";
pub const TRAJECTORIES: &str = "trajectories.jsonl";

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T, CliError> {
    v.clone()
        .ok_or_else(|| CliError::usage(format!("missing required flag --{flag}")))
}

/// Builds the directory under a temporary sibling name and renames it into
/// place, so readers never see a half-written dataset.
fn write_dir_atomically(
    out: &Path,
    fill: impl FnOnce(&Path) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let name = out
        .file_name()
        .ok_or_else(|| CliError::usage(format!("bad output path {}", out.display())))?;
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    let tmp = parent.join(format!(
        ".{}.tmp-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir(&tmp)?;
    if let Err(e) = fill(&tmp) {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if out.exists() {
        let replaceable = out.join(MANIFEST_FILE).exists() || fs::read_dir(out)?.next().is_none();
        if !replaceable {
            let _ = fs::remove_dir_all(&tmp);
            return Err(CliError::usage(format!(
                "{} exists and is not a dataset directory",
                out.display()
            )));
        }
        fs::remove_dir_all(out)?;
    }
    fs::rename(&tmp, out)?;
    Ok(())
}

pub fn gen(cli: GenArgs) -> Result<(), CliError> {
    let a = with_config(cli.clone(), cli.config.as_deref())?;
    let out = required(&a.out, "out")?;
    let count = a.count.unwrap_or(100);
    let size = a.size.unwrap_or(16);
    let seed = a.seed.unwrap_or(0);
    let test_fraction = a.test_fraction.unwrap_or(1.0 / 7.0);
    if count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    let (envs, generator): (Vec<Environment>, _) = match a.kind.as_deref().unwrap_or("grid") {
        "grid" => {
            let density = a.density.unwrap_or(0.2);
            if !(0.0..1.0).contains(&density) {
                return Err(CliError::usage(format!(
                    "--density must lie in [0,1), got {density}"
                )));
            }
            let maps = generate_maps(seed, count, size, size, density)?;
            let gen = json!({ "kind": "grid", "count": count, "size": size, "density": density, "seed": seed });
            (maps.into_iter().map(Environment::from).collect(), gen)
        }
        "crater" => {
            let craters = a.craters.unwrap_or(6);
            let rmin = a.radius_min.unwrap_or(size as f64 / 16.0);
            let rmax = a.radius_max.unwrap_or(size as f64 / 6.0);
            let scenes = (0..count)
                .map(|i| {
                    render_crater_scene(map_seed(seed, i), size, size, craters, (rmin, rmax))
                        .map(Environment::from)
                })
                .collect::<roverplan::Result<Vec<_>>>()?;
            let gen = json!({
                "kind": "crater", "count": count, "size": size, "craters": craters,
                "radius_min": rmin, "radius_max": rmax, "seed": seed,
            });
            (scenes, gen)
        }
        other => {
            return Err(CliError::usage(format!(
                "--kind must be grid or crater, got {other:?}"
            )))
        }
    };
    let dataset = build_dataset(envs, seed, test_fraction)?;
    let mut manifest = None;
    write_dir_atomically(&out, |dir| {
        manifest = Some(dataset.save(dir, generator)?);
        Ok(())
    })?;
    let m = manifest.expect("manifest written");
    println!(
        "wrote {} maps ({} train, {} test, {} samples) to {}",
        m.count,
        m.train.len(),
        m.test.len(),
        m.entries,
        out.display()
    );
    Ok(())
}

fn load_dataset(path: &Option<PathBuf>) -> Result<Dataset, CliError> {
    let dir = required(path, "data")?;
    if !dir.join(MANIFEST_FILE).is_file() {
        return Err(CliError::usage(format!(
            "{} is not a dataset directory",
            dir.display()
        )));
    }
    Ok(Dataset::load(&dir)?.0)
}

fn parse_arch(name: &str) -> Result<Arch, CliError> {
    Ok(name.parse::<Arch>()?)
}

/// Epoch number from an `epoch_NNNN.ckpt` file name.
fn epoch_from_name(path: &Path) -> Option<usize> {
    path.file_stem()?
        .to_str()?
        .strip_prefix("epoch_")?
        .parse()
        .ok()
}

pub fn train(cli: TrainArgs) -> Result<(), CliError> {
    let mut a = with_config(cli.clone(), cli.config.as_deref())?;
    let dataset = load_dataset(&a.data)?;
    let out = required(&a.out, "out")?;

    let arch = parse_arch(a.model.arch.get_or_insert_with(|| "dbcnn".into()))?;
    let d = Hyperparams::for_arch(arch);
    let (h, w, c) = dataset.input_shape()?;
    let spec = ModelSpec::new(arch, h, w, c)
        .with_coord_augment(*a.model.coord_augment.get_or_insert(false));
    let k = *a.model.vin_k.get_or_insert(spec.vin_iterations);
    let spec = spec.with_vin_iterations(k);
    let l2_mode: L2Mode =
        serde_json::from_value(json!(a.l2_mode.get_or_insert_with(|| "squared".into())))
            .map_err(|_| CliError::usage("--l2-mode must be squared or norm"))?;
    let hyper = Hyperparams {
        epochs: *a.epochs.get_or_insert(d.epochs),
        batch_size: *a.batch.get_or_insert(d.batch_size),
        learning_rate: *a.lr.get_or_insert(d.learning_rate),
        lambda: *a.lambda.get_or_insert(d.lambda),
        seed: *a.seed.get_or_insert(d.seed),
        l2_mode,
        clip_norm: *a.clip_norm.get_or_insert(d.clip_norm),
    };
    hyper.validate()?;
    let checkpoint_every = *a.checkpoint_every.get_or_insert(0);

    let mut model = Model::build(spec, hyper.seed)?;
    let start_epoch = match &a.resume {
        None if a.start_epoch.is_some_and(|e| e > 0) => {
            return Err(CliError::usage("--start-epoch needs --resume"));
        }
        None => 0,
        Some(ckpt) => {
            model.load_weights(ckpt)?;
            let e = a.start_epoch.or_else(|| epoch_from_name(ckpt)).ok_or_else(|| {
                CliError::usage("cannot tell the resumed epoch from the checkpoint name; pass --start-epoch")
            })?;
            a.start_epoch = Some(e);
            e
        }
    };

    fs::create_dir_all(&out)?;
    let mut resolved = serde_json::to_string_pretty(&a)?;
    resolved.push('\n');
    fs::write(out.join(RUN_CONFIG), resolved)?;

    let log_path = out.join(TRAIN_LOG);
    // a resumed run keeps the lines of the epochs it builds on
    let mut kept = format!("{}\n", EpochReport::LOG_HEADER);
    if start_epoch > 0 {
        if let Ok(text) = fs::read_to_string(&log_path) {
            for line in text.lines().skip(1) {
                let epoch = line
                    .split('\t')
                    .next()
                    .and_then(|e| e.parse::<usize>().ok());
                if epoch.is_some_and(|e| e <= start_epoch) {
                    kept.push_str(line);
                    kept.push('\n');
                }
            }
        }
    }
    fs::write(&log_path, kept)?;
    let mut log = fs::OpenOptions::new().append(true).open(&log_path)?;
    let opts = TrainOptions {
        start_epoch,
        checkpoint_dir: Some(out.clone()),
        checkpoint_every,
    };
    let result = train_with(&mut model, &dataset, &hyper, &opts, |r| {
        let line = r.log_line();
        writeln!(log, "{line}")?;
        log.flush()?;
        println!("{line}");
        Ok(())
    })?;
    if let Some(p) = result.final_checkpoint {
        log::info!("final checkpoint {}", p.display());
    }
    Ok(())
}

struct LoadedPolicy {
    policy: Box<dyn Policy + Sync>,
    tag: String,
    epoch_seconds: Vec<f64>,
}

/// Seconds column of the `train.log` next to a checkpoint, if present.
fn logged_epoch_seconds(ckpt: &Path) -> Vec<f64> {
    let Some(dir) = ckpt.parent() else {
        return Vec::new();
    };
    let Ok(text) = fs::read_to_string(dir.join(TRAIN_LOG)) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter_map(|l| l.split('\t').nth(3)?.parse().ok())
        .collect()
}

fn load_policy(p: &PolicyArgs, dataset: &Dataset) -> Result<LoadedPolicy, CliError> {
    let arch = p.model.arch.as_deref().map(str::to_ascii_lowercase);
    let stub = |policy: Box<dyn Policy + Sync>, tag: &str| LoadedPolicy {
        policy,
        tag: tag.into(),
        epoch_seconds: Vec::new(),
    };
    match arch.as_deref() {
        Some("oracle") => return Ok(stub(Box::new(ExpertPolicy), "oracle")),
        Some("constant") => return Ok(stub(Box::new(ConstantAction(Action::East)), "constant")),
        Some("random") => {
            return Ok(stub(
                Box::new(UniformRandom {
                    seed: p.seed.unwrap_or(0),
                }),
                "random",
            ));
        }
        _ => {}
    }
    let ckpt = p.checkpoint.clone().ok_or_else(|| {
        CliError::usage("a network policy needs --checkpoint (or --arch oracle|constant|random)")
    })?;
    let stored = Model::load(&ckpt)?;
    let model = match arch {
        None => stored,
        Some(name) => {
            // flags the user left out default to the checkpoint's own values
            let s = stored.spec();
            let spec = ModelSpec::new(parse_arch(&name)?, s.height, s.width, s.channels)
                .with_coord_augment(p.model.coord_augment.unwrap_or(s.coord_augment))
                .with_vin_iterations(p.model.vin_k.unwrap_or(s.vin_iterations));
            let mut m = Model::build(spec, 0)?;
            m.load_weights(&ckpt)?;
            m
        }
    };
    let s = model.spec();
    let shape = dataset.input_shape()?;
    if (s.height, s.width, s.channels) != shape {
        return Err(CliError::new(
            EXIT_FINGERPRINT,
            format!(
                "checkpoint expects {}x{}x{} inputs but the dataset holds {}x{}x{}",
                s.height, s.width, s.channels, shape.0, shape.1, shape.2
            ),
        ));
    }
    Ok(LoadedPolicy {
        tag: s.arch.as_str().into(),
        epoch_seconds: logged_epoch_seconds(&ckpt),
        policy: Box::new(model),
    })
}

fn emit(out: &Option<PathBuf>, file: &str, text: &str) -> Result<(), CliError> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(file), text)?;
    }
    print!("{text}");
    Ok(())
}

pub fn eval(cli: EvalArgs) -> Result<(), CliError> {
    let a = with_config(cli.clone(), cli.config.as_deref())?;
    let dataset = load_dataset(&a.policy.data)?;
    let loaded = load_policy(&a.policy, &dataset)?;
    let report = evaluate(
        loaded.policy.as_ref(),
        &dataset,
        &loaded.tag,
        a.policy.seed.unwrap_or(0),
        a.starts_per_map.unwrap_or(DEFAULT_STARTS_PER_MAP),
        loaded.epoch_seconds,
    )?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    emit(&a.policy.out, METRICS, &text)
}

fn read_starts(a: &PlanArgs) -> Result<Vec<Pos>, CliError> {
    let mut cells = a
        .start
        .iter()
        .map(|s| parse_cell(s))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(path) = &a.starts_file {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        for line in text.lines().map(str::trim) {
            if !line.is_empty() && !line.starts_with('#') {
                cells.push(parse_cell(line)?);
            }
        }
    }
    if cells.is_empty() {
        return Err(CliError::usage(
            "plan needs --start ROW,COL or --starts-file",
        ));
    }
    Ok(cells.into_iter().map(|(r, c)| Pos::new(r, c)).collect())
}

pub fn plan(cli: PlanArgs) -> Result<(), CliError> {
    let a = with_config(cli.clone(), cli.config.as_deref())?;
    let dataset = load_dataset(&a.policy.data)?;
    let loaded = load_policy(&a.policy, &dataset)?;
    let map_id = a.map.unwrap_or(0);
    let rec = dataset.records.get(map_id).ok_or_else(|| {
        CliError::usage(format!(
            "--map {map_id} out of range ({} maps)",
            dataset.records.len()
        ))
    })?;
    let starts = read_starts(&a)?;
    let policy = loaded.policy.as_ref();
    let trajectories = match starts.as_slice() {
        [single] => vec![plan_one(policy, rec, *single)?],
        many => plan_multi(policy, rec, many)?,
    };
    log::info!("forward passes: {}", policy.forward_passes());
    let text: String = trajectories
        .iter()
        .map(|t| trajectory_json(map_id, rec, t) + "\n")
        .collect();
    emit(&a.policy.out, TRAJECTORIES, &text)
}

pub fn viz(cli: VizArgs) -> Result<(), CliError> {
    let a = with_config(cli.clone(), cli.config.as_deref())?;
    let out = required(&a.policy.out, "out")?;
    let dataset = load_dataset(&a.policy.data)?;
    let loaded = load_policy(&a.policy, &dataset)?;
    let seed = a.policy.seed.unwrap_or(0);
    let ids = if a.maps.is_empty() {
        let mut ids = dataset.map_ids(Split::Test);
        if ids.is_empty() {
            ids = dataset.map_ids(Split::Train);
        }
        ids.truncate(a.count.unwrap_or(4));
        ids
    } else {
        if let Some(bad) = a.maps.iter().find(|&&i| i >= dataset.records.len()) {
            return Err(CliError::usage(format!("--maps index {bad} out of range")));
        }
        a.maps.clone()
    };
    fs::create_dir_all(&out)?;
    let policy = loaded.policy.as_ref();
    for id in ids {
        let rec = &dataset.records[id];
        let value_name = format!("value_{id:06}.pgm");
        let overlay_name = format!("overlay_{id:06}.ppm");
        export_value_map(policy, rec, &out.join(&value_name))?;
        let starts = sample_starts(rec, a.starts_per_map.unwrap_or(4), seed, id);
        let trajectories = plan_multi(policy, rec, &starts)?;
        export_trajectory_overlay(rec, &trajectories, &out.join(&overlay_name))?;
        let safe = trajectories.iter().filter(|t| adjudicate(t)).count();
        println!(
            "map {id}: {value_name} {overlay_name} ({safe}/{} safe)",
            trajectories.len()
        );
    }
    Ok(())
}
