use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use activation_hue::activation::{energy_map, EnergyMap, LabeledImage};
use activation_hue::classifier::{likelihood, match_pixels, unit_pixels, ClassifierParams};
use activation_hue::geometry::{
    angular_bias_from_records, collect_matches, location_histogram, radial_tangential, shuffle_labels, Extent,
    MatchFilter, MatchRecord, Weighting,
};
use activation_hue::hue_loss::{gradcheck, GradcheckConfig, LabelMode};
use activation_hue::io::{
    csv_float, load_images, read_ahix, read_ahue, read_manifest, write_ahix, write_ahue, write_manifest,
    ManifestRecord,
};
use activation_hue::memory::{ForestConfig, IndexConfig, IndexMode, MemoryStore};
use activation_hue::synth::{generate_activations, generate_images, ActivationSynthSpec, SynthSpec};
use activation_hue::trainer::{compare, train, Augmentation, LossMode, TrainConfig};
use activation_hue::{Error, Parallelism};
use anyhow::{Context, Result};
use serde_json::json;

use crate::report::{report_path, write_json, write_text, RunReport};
use crate::*;

/// Flag combinations clap cannot express; reported with exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Ok(false) means the command ran but its check failed (exit 1).
pub fn run(cli: Cli, argv: Vec<String>) -> Result<bool> {
    let start = Instant::now();
    match cli.command {
        Command::Index(IndexCommand::Build(a)) => index_build(a, RunReport::new("index build", argv), start),
        Command::Classify(a) => classify(a, RunReport::new("classify", argv), start),
        Command::Stats(s) => stats(s, argv, start),
        Command::Loss(LossCommand::Gradcheck(a)) => loss_gradcheck(a, RunReport::new("loss gradcheck", argv), start),
        Command::Train(a) => train_cmd(a, RunReport::new("train", argv), start),
        Command::Synth(SynthCommand::Generate(a)) => synth_generate(a, RunReport::new("synth generate", argv), start),
    }
}

fn par(sequential: bool) -> Parallelism {
    if sequential {
        Parallelism::Sequential
    } else {
        Parallelism::Parallel
    }
}

fn label_mode(m: LabelModeArg) -> LabelMode {
    match m {
        LabelModeArg::EquallySpaced => LabelMode::EquallySpaced,
        LabelModeArg::RandomPermutation => LabelMode::RandomPermutation,
        LabelModeArg::RandomAngles => LabelMode::RandomAngles,
    }
}

fn filter(f: FilterArg) -> MatchFilter {
    match f {
        FilterArg::Same => MatchFilter::Same,
        FilterArg::Different => MatchFilter::Different,
        FilterArg::All => MatchFilter::All,
    }
}

fn finish(mut report: RunReport, common: &Common, outputs: Vec<PathBuf>, start: Instant) -> Result<()> {
    report.outputs = outputs;
    report.finish(start.elapsed(), &report_path(&common.out, common.report.as_deref()))
}

fn index_build(a: IndexBuildArgs, mut report: RunReport, start: Instant) -> Result<bool> {
    let images = load_images(&read_manifest(&a.manifest)?)?;
    let mut store = MemoryStore::new();
    let (mut inserted, mut skipped) = (0, 0);
    for img in &images {
        let s = store
            .insert(&img.image, img.class_id, img.image_id)
            .with_context(|| format!("image {}", img.image_id))?;
        inserted += s.inserted;
        skipped += s.skipped;
    }
    if !a.no_freeze {
        let config = match a.mode {
            IndexModeArg::Exact => IndexConfig::Exact,
            IndexModeArg::Tree => IndexConfig::Tree(ForestConfig {
                trees: a.trees,
                leaf_size: a.leaf_size,
                search_k: a.search_k,
                seed: a.seed,
            }),
        };
        store.freeze(config, par(a.common.sequential))?;
    }
    write_ahix(&store, &a.common.out)?;
    report.seeds = vec![a.seed];
    report.summary = json!({
        "images": images.len(),
        "entries": inserted,
        "skipped_zero_pixels": skipped,
        "dim": store.dim(),
        "frozen": store.is_frozen(),
    });
    finish(report, &a.common, vec![a.common.out.clone()], start)?;
    Ok(true)
}

/// Load a frozen index and translate --mode into query parameters.
fn open_index(r: &RetrievalArgs, par: Parallelism) -> Result<(MemoryStore, ClassifierParams)> {
    let store = read_ahix(&r.index)?;
    if !store.is_frozen() {
        return Err(Error::NotFrozen.into());
    }
    if r.mode == Some(IndexModeArg::Tree) && store.mode() != Some(IndexMode::Tree) {
        return Err(Error::Config(format!("{} has no forest; rebuild with --mode tree", r.index.display())).into());
    }
    let params = ClassifierParams {
        k: r.k,
        epsilon: r.epsilon,
        exclude_image: None,
        force_exact: r.mode == Some(IndexModeArg::Exact),
        par,
    };
    Ok((store, params))
}

fn classify(a: ClassifyArgs, mut report: RunReport, start: Instant) -> Result<bool> {
    if a.retrieval.leave_one_out && a.image_id.is_none() {
        return Err(UsageError("--leave-one-out needs --image-id".into()).into());
    }
    let (store, mut params) = open_index(&a.retrieval, par(a.common.sequential))?;
    if a.retrieval.leave_one_out {
        params.exclude_image = a.image_id;
    }
    let query = read_ahue(&a.query)?;
    let table = likelihood(&query, &store, &params)?;
    let mut outputs = vec![a.common.out.clone()];
    if let Some(path) = &a.matches_out {
        let (pixels, _) = unit_pixels(&query);
        let mut csv = String::from("pixel,row,col,rank,entry,distance,kernel,class_id,image_id\n");
        for m in match_pixels(&pixels, &store, &params)? {
            for (rank, (n, k)) in m.result.neighbors.iter().zip(&m.kernels).enumerate() {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    m.pixel,
                    m.pixel / query.width(),
                    m.pixel % query.width(),
                    rank,
                    n.index,
                    csv_float(n.distance),
                    csv_float(*k),
                    store.class_id(n.index),
                    store.image_id(n.index)
                ));
            }
        }
        write_text(path, &csv)?;
        outputs.push(path.clone());
    }
    write_json(
        &a.common.out,
        &json!({
            "decision": table.decision,
            "scores": table.scores,
            "k": table.k,
            "epsilon": table.epsilon,
            "query_pixels": table.query_pixels,
            "skipped_pixels": table.skipped_pixels,
            "capped": table.capped,
            "per_pixel_matches_path": a.matches_out,
        }),
    )?;
    report.summary = json!({ "decision": table.decision });
    finish(report, &a.common, outputs, start)?;
    Ok(true)
}

fn load_queries(path: &Path) -> Result<Vec<LabeledImage>> {
    let queries = load_images(&read_manifest(path)?)?;
    if queries.is_empty() {
        return Err(Error::EmptyQuery.into());
    }
    Ok(queries)
}

fn grid_csv(width: usize, values: &[f64]) -> String {
    values
        .chunks(width)
        .map(|row| row.iter().map(|v| csv_float(*v)).collect::<Vec<_>>().join(",") + "\n")
        .collect()
}

fn stats(cmd: StatsCommand, argv: Vec<String>, start: Instant) -> Result<bool> {
    match cmd {
        StatsCommand::Energy(a) => {
            let mut report = RunReport::new("stats energy", argv);
            let queries = load_queries(&a.queries)?;
            let maps: Vec<EnergyMap> = queries.iter().map(|q| energy_map(&q.image)).collect();
            let mean = EnergyMap::mean(&maps)?;
            let mut by_class: BTreeMap<u32, Vec<EnergyMap>> = BTreeMap::new();
            for (q, m) in queries.iter().zip(maps) {
                by_class.entry(q.class_id).or_default().push(m);
            }
            let per_class = by_class
                .into_iter()
                .map(|(c, maps)| Ok((c, EnergyMap::mean(&maps)?)))
                .collect::<Result<BTreeMap<u32, EnergyMap>>>()?;
            write_json(&a.common.out, &json!({ "images": queries.len(), "mean": mean, "per_class": per_class }))?;
            let mut outputs = vec![a.common.out.clone()];
            if let Some(path) = &a.csv {
                write_text(path, &grid_csv(mean.width, &mean.values))?;
                outputs.push(path.clone());
            }
            report.summary = json!({ "images": queries.len() });
            finish(report, &a.common, outputs, start)?;
            Ok(true)
        }
        StatsCommand::Matches(a) => match_stats("stats matches", a, argv, start),
        StatsCommand::Angular(a) => match_stats("stats angular", a, argv, start),
        StatsCommand::Radtan(a) => match_stats("stats radtan", a, argv, start),
    }
}

fn match_stats(command: &str, a: MatchStatsArgs, argv: Vec<String>, start: Instant) -> Result<bool> {
    let mut report = RunReport::new(command, argv);
    let (store, params) = open_index(&a.retrieval, par(a.common.sequential))?;
    let queries = load_queries(&a.queries)?;
    let records: Vec<MatchRecord> = collect_matches(&queries, &store, &params, a.retrieval.leave_one_out)?;
    let flt = filter(a.filter);
    let mut outputs = vec![a.common.out.clone()];
    let body = match command {
        "stats matches" => {
            let (w, h) = (queries[0].image.width(), queries[0].image.height());
            let bins = a.bins.unwrap_or(w);
            let hist = location_histogram(&records, flt, bins, Extent::of_image(w, h))?;
            if let Some(path) = &a.csv {
                write_text(path, &hist.to_csv())?;
                outputs.push(path.clone());
            }
            json!({ "records": records.len(), "filter": flt, "histogram": hist })
        }
        "stats angular" => {
            let weighting = match a.weighting {
                WeightingArg::Uniform => Weighting::Uniform,
                WeightingArg::Kernel => Weighting::Kernel,
            };
            report.seeds = vec![a.seed];
            let observed = angular_bias_from_records(&records, weighting);
            let shuffled = angular_bias_from_records(&shuffle_labels(&records, a.seed), weighting);
            json!({ "records": records.len(), "observed": observed, "shuffled_label_null": shuffled, "null_seed": a.seed })
        }
        _ => {
            let v = radial_tangential(&records, flt);
            json!({
                "records": records.len(),
                "filter": flt,
                "variance": v,
                "tangential_to_radial": v.sigma_t2 / v.sigma_r2,
            })
        }
    };
    write_json(&a.common.out, &body)?;
    report.summary = json!({ "records": records.len(), "k": params.k });
    finish(report, &a.common, outputs, start)?;
    Ok(true)
}

fn loss_gradcheck(a: GradcheckArgs, mut report: RunReport, start: Instant) -> Result<bool> {
    let config = GradcheckConfig {
        classes: a.classes,
        trials: a.trials,
        seed: a.seed,
        mode: label_mode(a.mode),
        step: a.step,
        ..GradcheckConfig::default()
    };
    let result = gradcheck(&config)?;
    write_json(&a.common.out, &result)?;
    report.seeds = vec![a.seed];
    report.summary = json!({ "passed": result.passed, "max_rel_error": result.max_rel_error });
    finish(report, &a.common, vec![a.common.out.clone()], start)?;
    if !result.passed {
        eprintln!("gradient check failed: max relative error {:e} >= {:e}", result.max_rel_error, result.threshold);
    }
    Ok(result.passed)
}

fn train_cmd(a: TrainArgs, mut report: RunReport, start: Instant) -> Result<bool> {
    let (images, labels) = if a.data == "synth" {
        let d = generate_images(&SynthSpec { per_class: a.per_class, ..SynthSpec::default() }, a.seed)?;
        (d.images, d.labels)
    } else {
        let items = load_images(&read_manifest(Path::new(&a.data).join("manifest.jsonl"))?)?;
        items.into_iter().map(|i| (i.image, i.class_id)).unzip()
    };
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        lr_min: a.lr_min,
        seed: a.seed,
        loss_mode: LossMode::OnehotHue,
        label_mode: label_mode(a.label_mode),
        folds: a.folds,
        augmentation: if a.no_augment {
            Augmentation { hflip: false, random_crop_pad: 0 }
        } else {
            Augmentation::default()
        },
        hue_hidden: a.hue_hidden,
        hue_weight: a.hue_weight,
        par: par(a.common.sequential),
        ..TrainConfig::default()
    };
    let modes: Vec<LossMode> = match a.loss {
        LossArg::Onehot => vec![LossMode::Onehot],
        LossArg::OnehotHue => vec![LossMode::OnehotHue],
        LossArg::Both => LossMode::ALL.to_vec(),
    };
    let mut outputs = vec![a.common.out.clone()];
    if modes.len() == 1 && a.seeds.len() <= 1 {
        let seed = a.seeds.first().copied().unwrap_or(a.seed);
        let result = train(&images, &labels, &TrainConfig { seed, loss_mode: modes[0], ..config })?;
        write_json(&a.common.out, &result)?;
        report.seeds = vec![a.seed, seed];
        report.summary = json!({
            "final_train_accuracy": result.folds.iter().map(|f| f.final_train_accuracy).collect::<Vec<_>>(),
            "val_summary": result.val_summary,
        });
    } else {
        if a.folds < 2 {
            return Err(UsageError("comparing loss modes or seeds needs --folds >= 2".into()).into());
        }
        let seeds = if a.seeds.is_empty() { vec![a.seed] } else { a.seeds.clone() };
        let result = compare(&images, &labels, &config, &modes, &seeds)?;
        write_json(&a.common.out, &result)?;
        if let Some(path) = &a.csv {
            write_text(path, &result.to_csv())?;
            outputs.push(path.clone());
        }
        report.seeds = std::iter::once(a.seed).chain(seeds).collect();
        report.summary = serde_json::to_value(&result.table)?;
    }
    finish(report, &a.common, outputs, start)?;
    Ok(true)
}

fn synth_generate(a: SynthArgs, mut report: RunReport, start: Instant) -> Result<bool> {
    let items: Vec<LabeledImage> = match a.kind {
        SynthKind::Images => {
            let spec = SynthSpec { classes: a.classes, per_class: a.per_class.unwrap_or(100), ..SynthSpec::default() };
            report.summary = serde_json::to_value(&spec)?;
            let d = generate_images(&spec, a.seed)?;
            d.images
                .into_iter()
                .zip(d.labels)
                .enumerate()
                .map(|(i, (image, class_id))| LabeledImage { image, class_id, image_id: i as u32 })
                .collect()
        }
        SynthKind::Activations => {
            let spec = ActivationSynthSpec {
                classes: a.classes,
                per_class: a.per_class.unwrap_or(80),
                ..ActivationSynthSpec::default()
            };
            report.summary = serde_json::to_value(&spec)?;
            generate_activations(&spec, a.seed)?
        }
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut records = Vec::with_capacity(items.len());
    for item in &items {
        let name = format!("img_{:05}.ahue", item.image_id);
        write_ahue(&item.image, a.out.join(&name))?;
        records.push(ManifestRecord { path: name.into(), class_id: item.class_id, image_id: item.image_id });
    }
    let manifest = a.out.join("manifest.jsonl");
    write_manifest(&manifest, &records)?;
    report.seeds = vec![a.seed];
    report.outputs = vec![a.out.clone(), manifest];
    report.finish(start.elapsed(), &a.report.unwrap_or_else(|| a.out.join("run.json")))?;
    Ok(true)
}
