use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use patchkit::curation::{self, ExternalSignals, Homography};
use patchkit::datasetops::{
    self, BatchSource, BatchSpec, ComposeSpec, ComposeStrategy, DatasetSource, ReductionMode,
    SamplingStrategy, SetHardness,
};
use patchkit::descriptor::{describe_batch, BaselineDescriptor};
use patchkit::detector::{
    self, MapSource, PyramidParams, Representative, ResponseKind, ResponseNormalization,
};
use patchkit::eval::{self, RankedQuery};
use patchkit::metric::{self, BatchEmbeddings, LabeledEmbeddings};
use patchkit::patches::{self, Recipe};
use patchkit::rng::{seeded, stream};
use patchkit::{compress, io, Image, Patch};
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::tables::{read_column, read_csv, read_scores};
use crate::{
    AugmentArgs, Cli, ClusterArgs, CombineArg, Command, CurateArgs, DescribeArgs, DetectArgs,
    DetectMode, EvalCommand, ExtractArgs, LossArgs, MethodArg, Normalization, PcaCommand,
    RecipeArg, ReduceArgs, ReduceMode, RepresentativeArg, ResponseArg, SampleArgs, ShiftArgs,
    SourceArg, StrategyArg,
};

fn emit(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed;
    match &cli.command {
        Command::Detect(a) => detect(a, seed),
        Command::Extract(a) => extract(a, seed),
        Command::Augment(a) => augment(a, seed),
        Command::Describe(a) => describe(a),
        Command::Loss(a) => loss(a),
        Command::Reduce(a) => reduce(a, seed),
        Command::Sample(a) => sample(a, seed),
        Command::Eval(e) => evaluate(e),
        Command::Pca(p) => pca(p),
        Command::Curate(a) => curate(a),
        Command::ClusterViews(a) => cluster(a, seed),
        Command::Shift(a) => shift(a),
    }
}

fn load_view(dir: &Path) -> Result<Vec<Image>> {
    let paths = io::list_images(dir)?;
    ensure!(!paths.is_empty(), "no images in {}", dir.display());
    paths.par_iter().map(|p| Ok(io::load_image(p)?)).collect()
}

fn detect(a: &DetectArgs, seed: u64) -> Result<()> {
    let images = if a.input.is_dir() {
        load_view(&a.input)?
    } else {
        vec![io::load_image(&a.input)?]
    };
    let mut rng = seeded(seed);
    let summary = match a.mode {
        DetectMode::Detect => {
            let params = PyramidParams {
                sigma: a.sigma,
                k1: a.k1,
                k2: a.k2,
                base_scale: a.bs,
                threshold: a.threshold,
                max_points: a.max_points,
                normalization: match a.normalization {
                    Normalization::ScaleNormalized => ResponseNormalization::ScaleNormalized,
                    Normalization::InversePower => ResponseNormalization::InversePower,
                },
            };
            let kind = match a.representative {
                RepresentativeArg::Random => Representative::Random,
                RepresentativeArg::Mean => Representative::Mean,
                RepresentativeArg::Median => Representative::Median,
            };
            let img = detector::representative_image(&images, kind, &mut rng)?;
            let report = detector::detect_report(&img, &params)?;
            io::write_keypoints(&report.keypoints, &a.out)?;
            json!({
                "keypoints": report.keypoints.len(),
                "threshold": report.threshold,
                "restarts": report.restarts,
            })
        }
        DetectMode::Sample => {
            let response = match a.response {
                ResponseArg::Uniform => ResponseKind::Uniform,
                ResponseArg::Hessian => ResponseKind::Hessian,
                ResponseArg::SqrtHessian => ResponseKind::SqrtHessian,
                ResponseArg::SqrtHessianNms => ResponseKind::SqrtHessianNms {
                    window: a.nms_window,
                },
            };
            let source = match a.source {
                SourceArg::Random => MapSource::RandomImage,
                SourceArg::Mean => MapSource::MeanImage,
                SourceArg::Median => MapSource::MedianImage,
                SourceArg::Average => MapSource::AverageResponses,
            };
            let map = detector::probability_map(&images, response, source, &mut rng)?;
            let kps =
                detector::sample_keypoints(&map, a.count, (a.min_scale, a.max_scale), &mut rng)?;
            io::write_keypoints(&kps, &a.out)?;
            json!({ "keypoints": kps.len() })
        }
    };
    emit(&summary)
}

fn extract(a: &ExtractArgs, seed: u64) -> Result<()> {
    let images = load_view(&a.view_dir)?;
    let mut kps = io::read_keypoints(&a.keypoints)?;
    if a.random_angles {
        let mut rng = seeded(seed);
        for kp in &mut kps {
            kp.angle = rng.random_range(0.0..360.0);
        }
    }
    let sets = patches::extract_patch_sets(&images, &kps, a.patch_size, a.view_id, a.first_label)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for set in &sets {
        io::write_patch_set(set, &a.out)?;
    }
    emit(&json!({
        "images": images.len(),
        "sets": sets.len(),
        "dropped": kps.len() - sets.len(),
    }))
}

fn augment(a: &AugmentArgs, seed: u64) -> Result<()> {
    let sets = io::read_patch_store(&a.input)?;
    let recipe = match a.recipe {
        RecipeArg::Amos => Recipe::Amos,
        RecipeArg::Liberty => Recipe::Liberty,
    };
    let out = patches::augment_sets(&sets, recipe, seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for set in &out {
        io::write_patch_set(set, &a.out)?;
    }
    emit(&json!({ "sets": out.len(), "side": out.first().map(|s| s.side()) }))
}

fn describe(a: &DescribeArgs) -> Result<()> {
    let sets = io::read_patch_store(&a.patches)?;
    let mut chosen: Vec<&Patch> = Vec::new();
    let mut labels = Vec::new();
    for set in &sets {
        match a.view_index {
            Some(i) => {
                let p = set.patches.get(i).with_context(|| {
                    format!("set {} has {} patches, no index {i}", set.label, set.len())
                })?;
                chosen.push(p);
                labels.push(set.label);
            }
            None => {
                chosen.extend(&set.patches);
                labels.extend(std::iter::repeat_n(set.label, set.len()));
            }
        }
    }
    let descriptor = match a.method {
        MethodArg::Baseline => BaselineDescriptor,
    };
    let resized = chosen
        .par_iter()
        .map(|p| patches::resize_patch(p, BaselineDescriptor::SIDE))
        .collect::<patchkit::Result<Vec<_>>>()?;
    let emb = describe_batch(&resized, &descriptor)?;
    ensure!(
        emb.rows() > 0,
        "no patches to describe in {}",
        a.patches.display()
    );
    io::write_embeddings(&emb, &a.out)?;
    if let Some(path) = &a.labels_out {
        let mut w = BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        );
        writeln!(w, "label")?;
        for l in &labels {
            writeln!(w, "{l}")?;
        }
        w.flush()?;
    }
    emit(&json!({ "rows": emb.rows(), "dim": emb.cols() }))
}

fn loss(a: &LossArgs) -> Result<()> {
    let batch = BatchEmbeddings::new(io::read_embeddings(&a.a)?, io::read_embeddings(&a.b)?)?;
    if a.generalized {
        let labeled = match &a.labels {
            Some(path) => {
                let labels: Vec<u64> = read_column(path)?;
                let n = batch.len();
                let labels = if labels.len() == n {
                    labels.iter().chain(&labels).copied().collect()
                } else {
                    labels
                };
                LabeledEmbeddings::new(batch.a.stack(&batch.b)?, labels)?
            }
            None => batch.to_labeled()?,
        };
        let r = metric::generalized_loss(&labeled, a.margin)?;
        emit(&json!({ "total": r.total, "per_anchor": r.per_anchor, "labels": r.labels }))
    } else {
        let r = metric::hard_triplet_loss(&batch, a.margin)?;
        let hardness = metric::hardness_scores(&batch)?;
        emit(&json!({ "total": r.total, "per_anchor": r.per_anchor, "hardness": hardness }))
    }
}

fn reduce(a: &ReduceArgs, seed: u64) -> Result<()> {
    let h: Vec<SetHardness> = read_csv(&a.hardness)?;
    let mode = match a.mode {
        ReduceMode::Low => ReductionMode::Low,
        ReduceMode::Medium => ReductionMode::Medium,
        ReduceMode::High => ReductionMode::High,
    };
    let sel = datasetops::reduce_dataset(&h, a.target, mode, &mut seeded(seed))?;
    let mut w = BufWriter::new(
        File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?,
    );
    writeln!(w, "label,count,indices")?;
    for s in &sel {
        let idx = s
            .indices
            .as_ref()
            .map(|v| {
                v.iter()
                    .map(|i| i.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .unwrap_or_default();
        writeln!(w, "{},{},{}", s.label, s.count, idx)?;
    }
    w.flush()?;
    emit(&json!({
        "sets": sel.len(),
        "patches": sel.iter().map(|s| s.count).sum::<usize>(),
    }))
}

fn sample(a: &SampleArgs, seed: u64) -> Result<()> {
    let spec = BatchSpec {
        batch_size: a.batch_size,
        positives_per_set: a.positives,
        n_source_views: a.source_views,
        strategy: match a.strategy {
            StrategyArg::Uniform => SamplingStrategy::Uniform,
            StrategyArg::ImagePairs => SamplingStrategy::ImagePairs,
            StrategyArg::NoCollisions => SamplingStrategy::NoCollisions,
        },
    };
    let mut sources: Vec<Box<dyn BatchSource + Send>> = Vec::new();
    for (d, dirs) in a.dataset.iter().enumerate() {
        let mut metas = Vec::new();
        for dir in dirs.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            metas.extend(io::read_set_meta(dir)?);
        }
        ensure!(
            !metas.is_empty(),
            "dataset {d} ({dirs}) holds no patch sets"
        );
        let views = datasetops::group_views(metas);
        sources.push(Box::new(DatasetSource::new(
            views,
            spec.clone(),
            stream(seed, d as u64 + 1),
        )?));
    }
    let compose = ComposeSpec {
        strategy: match a.combine {
            CombineArg::PerEpoch => ComposeStrategy::PerEpoch,
            CombineArg::PerBatch => ComposeStrategy::PerBatch,
            CombineArg::InBatch => ComposeStrategy::InBatch,
        },
        batch_size: a.batch_size,
        positives_per_set: a.positives,
        batches_per_epoch: a.batches_per_epoch.unwrap_or(a.batches),
        weights: a.weights.clone(),
    };
    let composer = datasetops::compose_multi(sources, compose, seeded(seed))?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let path = a.out.join("batches.jsonl");
    let mut w = BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    );
    let (mut patches, mut short) = (0usize, 0usize);
    for (i, batch) in composer.take(a.batches).enumerate() {
        let batch = batch?;
        patches += batch.len();
        short += usize::from(batch.short);
        let items: Vec<[u64; 3]> = batch
            .items
            .iter()
            .map(|it| [it.dataset as u64, it.label, it.patch as u64])
            .collect();
        serde_json::to_writer(
            &mut w,
            &json!({ "batch": i, "short": batch.short, "items": items }),
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    emit(&json!({ "batches": a.batches, "patches": patches, "short_batches": short }))
}

fn split_scores(path: &Path) -> Result<RankedQuery> {
    let rows = read_scores(path)?;
    Ok(RankedQuery::new(
        rows.iter().map(|r| r.score).collect(),
        rows.iter().map(|r| r.label).collect(),
    )?)
}

fn evaluate(cmd: &EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Matching { reference, tgt, gt } => {
            let r = io::read_embeddings(reference)?;
            let t = io::read_embeddings(tgt)?;
            let gt: Vec<usize> = match gt {
                Some(p) => read_column(p)?,
                None => (0..r.rows()).collect(),
            };
            let map = eval::matching_map(&r, &t, &gt)?;
            emit(&json!({ "map": map, "queries": gt.len() }))
        }
        EvalCommand::Fpr95 { scores } => {
            let q = split_scores(scores)?;
            let p = q.positives();
            emit(
                &json!({ "fpr95": eval::fpr95(&q)?, "positives": p, "negatives": q.labels.len() - p }),
            )
        }
        EvalCommand::Ap { scores } => {
            let q = split_scores(scores)?;
            let p = q.positives();
            emit(
                &json!({ "ap": eval::average_precision(&q)?, "positives": p, "negatives": q.labels.len() - p }),
            )
        }
        EvalCommand::Retrieval { scores } => {
            let mut groups: BTreeMap<u64, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
            for row in read_scores(scores)? {
                let q = row.query.context("retrieval rows need a query column")?;
                let g = groups.entry(q).or_default();
                g.0.push(row.score);
                g.1.push(row.label);
            }
            let queries = groups
                .into_values()
                .map(|(s, l)| RankedQuery::new(s, l))
                .collect::<patchkit::Result<Vec<_>>>()?;
            emit(&json!({ "map": eval::retrieval_map(&queries)?, "queries": queries.len() }))
        }
        EvalCommand::Maa { errors, max, step } => {
            let e: Vec<f64> = read_column(errors)?;
            emit(&json!({ "maa": eval::maa(&e, *max, *step)?, "pairs": e.len(), "max_deg": max }))
        }
    }
}

fn pca(cmd: &PcaCommand) -> Result<()> {
    match cmd {
        PcaCommand::Fit { input, k, out } => {
            let x = io::read_embeddings(input)?;
            let fit = compress::pca_fit(&x, *k)?;
            compress::write_model(&fit.model, out)?;
            emit(&json!({
                "d": fit.model.input_dim(),
                "k": fit.model.output_dim(),
                "explained_variance": fit.explained_variance,
                "total_variance": fit.total_variance,
            }))
        }
        PcaCommand::Apply {
            model,
            input,
            no_renorm,
            out,
        } => {
            let m = compress::read_model(model)?;
            let y = compress::pca_apply(&m, &io::read_embeddings(input)?, !no_renorm)?;
            io::write_embeddings(&y, out)?;
            emit(&json!({ "rows": y.rows(), "dim": y.cols() }))
        }
    }
}

fn curate(a: &CurateArgs) -> Result<()> {
    let externals: BTreeMap<String, ExternalSignals> = match &a.externals {
        Some(p) => serde_json::from_str(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )
        .with_context(|| format!("parsing {}", p.display()))?,
        None => BTreeMap::new(),
    };
    let mut cameras: Vec<_> = fs::read_dir(&a.cameras)
        .with_context(|| format!("listing {}", a.cameras.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    cameras.retain(|p| p.is_dir());
    cameras.sort();

    let mut reports = Vec::with_capacity(cameras.len());
    for dir in &cameras {
        let camera = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let flags = io::list_images(dir)?
            .par_iter()
            .map(|p| {
                let img = io::load_image(p)?;
                let file = p
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let ext = externals
                    .get(&format!("{camera}/{file}"))
                    .copied()
                    .unwrap_or_default();
                Ok(curation::image_filters(&img, &ext))
            })
            .collect::<Result<Vec<_>>>()?;
        reports.push(curation::evaluate_camera(&camera, flags));
    }
    fs::write(&a.out, serde_json::to_string_pretty(&reports)?)
        .with_context(|| format!("writing {}", a.out.display()))?;
    let kept: Vec<&str> = reports
        .iter()
        .filter(|r| r.kept)
        .map(|r| r.camera.as_str())
        .collect();
    emit(&json!({ "cameras": reports.len(), "kept": kept }))
}

fn parse_pair(key: &str) -> Result<(usize, usize)> {
    let (i, j) = key
        .split_once(',')
        .with_context(|| format!("pair key {key:?} is not \"i,j\""))?;
    Ok((i.trim().parse()?, j.trim().parse()?))
}

fn cluster(a: &ClusterArgs, seed: u64) -> Result<()> {
    let text =
        fs::read_to_string(&a.pairs).with_context(|| format!("reading {}", a.pairs.display()))?;
    let raw: BTreeMap<String, Option<Homography>> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.pairs.display()))?;
    let mut pairs = BTreeMap::new();
    let mut max_index = None::<usize>;
    for (key, h) in raw {
        let (i, j) = parse_pair(&key)?;
        max_index = max_index.max(Some(i.max(j)));
        if let Some(h) = h {
            pairs.insert((i, j), h);
        }
    }
    let count = match (a.count, max_index) {
        (Some(c), Some(m)) if m >= c => bail!("pair index {m} outside {c} images"),
        (Some(c), _) => c,
        (None, m) => m.map_or(0, |m| m + 1),
    };
    let views = curation::cluster_views(count, &pairs);
    let main = curation::keep_main_view(&views, &mut seeded(seed));
    fs::write(
        &a.out,
        serde_json::to_string_pretty(&json!({ "views": views, "main_view": main }))?,
    )
    .with_context(|| format!("writing {}", a.out.display()))?;
    emit(
        &json!({ "images": count, "views": views.len(), "main_view": main.as_ref().map(Vec::len) }),
    )
}

fn shift(a: &ShiftArgs) -> Result<()> {
    let kps = io::read_keypoints(&a.keypoints)?;
    let moved = patches::shift_keypoints(&kps, a.dx, a.dy);
    io::write_keypoints(&moved, &a.out)?;
    emit(&json!({ "keypoints": moved.len() }))
}
