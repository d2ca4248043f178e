use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ctxkernel::context::{write_context, ContextGrad, Variant};
use ctxkernel::dataset::{load_dataset, Dataset, Split};
use ctxkernel::featmap::{InitMapConfig, InitMapKind, RangePolicy};
use ctxkernel::grid::NeighborhoodSystem;
use ctxkernel::metrics::evaluate;
use ctxkernel::rng;
use ctxkernel::svm::{EnsembleModel, SvmConfig, SvmModel};
use ctxkernel::trainer::{self, choose_gamma, gradcheck, initial_params, pooled_maps, Checkpoint, GammaChoice, TrainConfig, TrainingSet};
use ctxkernel::Error;
use rand::Rng;

use crate::config::{ConfigError, InitMapTag, RunConfig, SplitTag};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) | Failure::Core(Error::InvalidParameter(_)) => 1,
            Failure::Core(e) if e.is_numerical() => 3,
            Failure::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

type Outcome = Result<(), Failure>;

fn split(tag: SplitTag) -> Split {
    match tag {
        SplitTag::Train => Split::Train,
        SplitTag::Test => Split::Test,
    }
}

fn init_config(config: &RunConfig, dataset: &Dataset) -> InitMapConfig {
    let kind = match config.init_map {
        InitMapTag::Linear => InitMapKind::Linear,
        InitMapTag::Poly2 => InitMapKind::Poly2,
        InitMapTag::Hi => {
            let observed = dataset.max_feature(Split::Train);
            let max_value = config.hi_max.unwrap_or(if observed > 0.0 { observed } else { 1.0 });
            InitMapKind::Hi { levels: config.hi_levels, max_value }
        }
    };
    InitMapConfig { kind, l2_normalize: config.l2_normalize, range: RangePolicy::Strict }
}

fn train_config(config: &RunConfig) -> TrainConfig {
    TrainConfig {
        variant: config.variant,
        depth: config.depth,
        radius: config.radius,
        gamma: match config.gamma {
            Some(g) => GammaChoice::Fixed(g),
            None => GammaChoice::Factor(config.gamma_factor),
        },
        pooling: config.pooling,
        learning_rate: config.learning_rate,
        decay: config.decay,
        max_alternations: config.max_alternations,
        tolerance: config.tolerance,
        clip_norm: config.clip_norm,
        backtracking: config.backtracking,
        svm: SvmConfig {
            cost: config.svm_cost,
            concept_costs: config.svm_costs.clone(),
            max_iter: config.svm_max_iter,
            tol: config.svm_tol,
        },
        seed: config.seed,
    }
}

/// `D_t = d0' Σ_{i<=t} C^i` for every layer.
fn layer_dims(mapped: usize, directions: usize, depth: usize) -> Vec<usize> {
    let mut dims = vec![mapped];
    for _ in 0..depth {
        let last = *dims.last().expect("starts non-empty");
        dims.push(mapped + directions * last);
    }
    dims
}

pub fn validate(config: &RunConfig) -> Outcome {
    let manifest = config.manifest()?;
    let dataset = load_dataset(manifest)?;
    let init = init_config(config, &dataset);
    init.kind.validate()?;
    let support = NeighborhoodSystem::build(dataset.grid, config.radius)?;
    let train_count = dataset.indices(Split::Train).len();
    let mapped = init.kind.output_dim(dataset.d0);
    let dims = layer_dims(mapped, support.directions(), config.depth);

    let mut out = String::new();
    let _ = writeln!(out, "manifest      {}", manifest.display());
    let _ = writeln!(out, "grid          {}x{} ({} cells)", dataset.grid.width(), dataset.grid.height(), dataset.grid.cells());
    let _ = writeln!(out, "d0            {}", dataset.d0);
    let _ = writeln!(out, "concepts      {} ({})", dataset.concepts(), dataset.concept_names.join(","));
    let _ = writeln!(out, "samples       {} (train {train_count}, test {})", dataset.len(), dataset.len() - train_count);
    let _ = writeln!(out, "init map      {} (d0' = {mapped})", init.kind);
    let _ = writeln!(
        out,
        "neighborhood  C = {}, radius {}, {} support entries",
        support.directions(),
        config.radius,
        support.support_size()
    );
    let _ = writeln!(out, "layer dims    {:?}", dims);
    let _ = writeln!(out, "D_T           {} (T = {})", dims[config.depth], config.depth);
    if train_count == 0 {
        let _ = writeln!(out, "max_gamma     n/a (no training images)");
    } else {
        let data = TrainingSet::from_dataset(&dataset, Split::Train, &init)?;
        let bound = choose_gamma(&data.initial, &support, GammaChoice::Factor(1.0))?;
        let _ = writeln!(out, "max_gamma     {bound:.6e} (normalized context, min over training images)");
        let gamma = config.gamma.unwrap_or(config.gamma_factor * bound);
        let _ = writeln!(out, "gamma         {gamma:.6e}");
        for k in 0..data.concepts() {
            let positives = data.labels.column(k).iter().filter(|&&y| y > 0.0).count();
            if positives == 0 || positives == data.len() {
                log::warn!("concept {} has {positives} of {} training positives", dataset.concept_names[k], data.len());
            }
        }
    }
    print!("{out}");
    Ok(())
}

pub fn train(config: &RunConfig) -> Outcome {
    let dataset = load_dataset(config.manifest()?)?;
    let init = init_config(config, &dataset);
    let data = TrainingSet::from_dataset(&dataset, Split::Train, &init)?;
    let tc = train_config(config);
    let state = trainer::train(&data, &tc)?;
    let log = state.log_lines();
    for line in &log {
        println!("{line}");
    }
    let ensemble = if config.ensemble {
        let (maps, _) = pooled_maps(&state.params, &data.initial)?;
        Some(EnsembleModel::train(
            &maps,
            &data.labels,
            config.ensemble_members,
            config.ensemble_neg_ratio,
            &tc.svm,
            config.seed,
        )?)
    } else {
        None
    };
    let converged = state.converged;
    let alternations = state.history.len();
    let loss = state.history.last().map_or(f64::NAN, |a| a.loss);
    let checkpoint = Checkpoint { params: state.params, model: state.model, ensemble, init, seed: config.seed, log };
    checkpoint.save(&config.output_dir)?;
    println!(
        "{} training: {alternations} alternations, converged {converged}, objective {loss:.6e}",
        config.variant
    );
    println!("checkpoint {}", config.output_dir.display());
    Ok(())
}

fn report_paths(dir: &Path, config: &RunConfig) -> (PathBuf, PathBuf) {
    let split = match config.eval_split {
        SplitTag::Train => "train",
        SplitTag::Test => "test",
    };
    let stem = format!("report_{}_{split}", config.protocol.as_str());
    (dir.join(format!("{stem}.txt")), dir.join(format!("{stem}.kv")))
}

pub fn eval(config: &RunConfig) -> Outcome {
    let dir = config.checkpoint_dir();
    let checkpoint = Checkpoint::load(dir)?;
    let dataset = load_dataset(config.manifest()?)?;
    if dataset.concepts() != checkpoint.model.concepts() {
        return Err(Error::CheckpointMismatch(format!(
            "dataset has {} concepts, checkpoint {}",
            dataset.concepts(),
            checkpoint.model.concepts()
        ))
        .into());
    }
    if dataset.grid.cells() != checkpoint.params.cells() {
        return Err(Error::CheckpointMismatch(format!(
            "dataset grid has {} cells, checkpoint {}",
            dataset.grid.cells(),
            checkpoint.params.cells()
        ))
        .into());
    }
    // unseen histograms may exceed the training maximum
    let mut init = checkpoint.init;
    if matches!(init.kind, InitMapKind::Hi { .. }) {
        init.range = RangePolicy::ClipAbove;
    }
    let data = TrainingSet::from_dataset(&dataset, split(config.eval_split), &init)?;
    if data.is_empty() {
        return Err(Error::BadValue { context: "eval".into(), message: "the evaluated split has no samples".into() }.into());
    }
    let (maps, _) = pooled_maps(&checkpoint.params, &data.initial)?;
    if maps.dim() != checkpoint.model.dim() {
        return Err(Error::CheckpointMismatch(format!(
            "pooled maps have dimension {}, checkpoint {}",
            maps.dim(),
            checkpoint.model.dim()
        ))
        .into());
    }
    let scores = if config.ensemble {
        let ensemble = checkpoint
            .ensemble
            .as_ref()
            .ok_or_else(|| Error::CheckpointMismatch("ensemble scoring requested but the checkpoint has none".into()))?;
        ensemble.scores(&maps)?
    } else {
        checkpoint.model.scores(&maps)?
    };
    let report = evaluate(config.protocol, &scores, &data.labels, config.top_n)?;
    let table = report.to_table();
    print!("{table}");
    let (txt, kv) = report_paths(dir, config);
    fs::write(&txt, &table).map_err(Error::from)?;
    fs::write(&kv, report.to_kv()).map_err(Error::from)?;
    println!("report {}", txt.display());
    Ok(())
}

pub fn export_context(config: &RunConfig) -> Outcome {
    let dir = config.checkpoint_dir();
    let checkpoint = Checkpoint::load(dir)?;
    let path = config.export.clone().unwrap_or_else(|| dir.join("context_export.txt"));
    write_context(&path, &checkpoint.params)?;
    let edges = fs::read_to_string(&path)
        .map_err(Error::from)?
        .lines()
        .filter(|l| l.starts_with("ctx "))
        .count();
    println!("{edges} edges written to {}", path.display());
    Ok(())
}

pub fn gradcheck_cmd(config: &RunConfig) -> Outcome {
    let dataset = load_dataset(config.manifest()?)?;
    let init = init_config(config, &dataset);
    let mut data = TrainingSet::from_dataset(&dataset, Split::Train, &init)?;
    let take = config.gradcheck_images.min(data.len());
    if take == 0 {
        return Err(Error::BadValue { context: "gradcheck".into(), message: "no training images".into() }.into());
    }
    data.initial.truncate(take);
    data.labels = data.labels.slice(ndarray::s![..take, ..]).to_owned();
    let mapped = init.kind.output_dim(dataset.d0);
    if dataset.grid.cells() > 9 || mapped > 6 || config.depth > 3 {
        log::warn!("gradcheck is meant for small instances (n <= 9, d0' <= 6, T <= 3); this may be slow");
    }

    let tc = train_config(config);
    let mut params = initial_params(&data, &tc)?;
    if config.variant == Variant::Classwise {
        params = params.to_classwise(data.concepts())?;
    }
    // move off the handcrafted start so every layer differs
    let mut noise = ContextGrad::zeros_like(&params);
    let mut rng = rng::stream(config.seed, rng::domain::GRADCHECK, 0);
    for stack in noise.stacks.iter_mut() {
        for t in 0..stack.depth() {
            for m in stack.layer_mut(t) {
                m.mapv_inplace(|_| rng.random_range(-0.1..0.1));
            }
        }
    }
    params.tie_layers(&mut noise);
    params.apply_step(&noise, 1.0)?;

    let (maps, _) = pooled_maps(&params, &data.initial)?;
    let model = SvmModel::train(&maps, &data.labels, &tc.svm, None)?;
    let report = gradcheck(&data, &params, &model, config.gradcheck_step)?;
    println!("variant         {}", params.variant());
    println!("images          {take}");
    println!("entries         {}", report.entries);
    println!("max |grad|      {:.6e}", report.max_abs_grad);
    println!("kink gap        {:.4}", report.kink_gap);
    println!("max rel error   {:.6e}", report.max_rel_error);
    if !report.max_rel_error.is_finite() {
        return Err(Error::NonFinite("gradient check".into()).into());
    }
    Ok(())
}
