use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use mvrm_core::classify::{
    infer_states, mean_average_precision, pool_average, read_predictions, svm_train, write_predictions, Prediction,
};
use mvrm_core::config::{Precision, RunConfig};
use mvrm_core::data::{Manifest, ManifestEntry, Split};
use mvrm_core::encoding::{encode_groups, late_fuse, Codebook};
use mvrm_core::seq2seq::{load_checkpoint, Encoder};
use mvrm_core::{Error, ParamStore, Real, RngState, Tensor};
use serde::{Deserialize, Serialize};

use crate::{CmdResult, Encoding};

pub const FEATURES_FILE: &str = "features.jsonl";

/// One video's encodings: a fully normalized VLAD vector per state group
/// and the average-pooled hidden state.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureRow {
    id: String,
    vlad: Vec<Vec<f64>>,
    pool: Vec<f64>,
}

fn data_err(msg: String) -> Error {
    Error::Data(msg)
}

pub fn encode(ckpt: &Path, manifest: &Path, centers: Option<usize>, out: &Path) -> CmdResult {
    let (_, cfg) = load_checkpoint::<f64>(ckpt)?;
    match cfg.precision {
        Precision::F32 => encode_as::<f32>(ckpt, manifest, centers, out),
        Precision::F64 => encode_as::<f64>(ckpt, manifest, centers, out),
    }
}

fn encode_as<F: Real>(ckpt: &Path, manifest: &Path, centers: Option<usize>, out: &Path) -> CmdResult {
    let (src, cfg) = load_checkpoint::<F>(ckpt)?;
    let centers = centers.unwrap_or(cfg.centers);
    if centers == 0 {
        return Err(Error::InvalidArgument("--centers must be at least 1".into()).into());
    }
    let m = Manifest::load(manifest)?;
    let videos: Vec<Tensor<F>> = m.entries.iter().map(|e| m.load_features(e)).collect::<Result<_, _>>()?;
    let Some(first) = videos.first() else {
        return Err(data_err(format!("{}: manifest is empty", manifest.display())).into());
    };
    let (store, encoder) = restore_encoder(&src, &cfg, first.cols())?;
    let states: Vec<Tensor<f64>> = videos
        .iter()
        .map(|v| infer_states(&store, &encoder, v, cfg.infer_steps))
        .collect::<Result<_, _>>()?;

    let mcfg = cfg.mgru()?;
    let train: Vec<&Tensor<f64>> = m
        .entries
        .iter()
        .zip(&states)
        .filter(|(e, _)| e.split == Split::Train)
        .map(|(_, s)| s)
        .collect();
    if train.is_empty() {
        return Err(data_err(format!("{}: no train videos to fit codebooks on", manifest.display())).into());
    }
    fs::create_dir_all(out)?;
    let mut rng = RngState::new(cfg.seed);
    let mut books = Vec::with_capacity(mcfg.k());
    for g in 0..mcfg.k() {
        let (lo, hi) = mcfg.group_range(g);
        let rows: Vec<Vec<f64>> = train
            .iter()
            .flat_map(|s| (0..s.rows()).map(move |r| s.row_slice(r)[lo..hi].to_vec()))
            .collect();
        let book = Codebook::fit(&Tensor::from_rows(&rows)?, centers, cfg.pca_dim, cfg.kmeans_iters, &mut rng)?;
        book.save(&out.join(format!("codebook-{g}.vcbk")))?;
        books.push(book);
    }

    let mut text = String::new();
    for (e, s) in m.entries.iter().zip(&states) {
        let vlad = encode_groups(s, &mcfg, &books)?.into_iter().map(|v| v.values).collect();
        let row = FeatureRow { id: e.id.clone(), vlad, pool: pool_average(s)? };
        text.push_str(&serde_json::to_string(&row)?);
        text.push('\n');
    }
    fs::write(out.join(FEATURES_FILE), text)?;
    println!("encoded {} videos with {} groups of {} centers", m.entries.len(), mcfg.k(), centers);
    Ok(())
}

/// Rebuilds the encoder described by `cfg` and copies its weights from `src`.
pub fn restore_encoder<F: Real>(src: &ParamStore<F>, cfg: &RunConfig, dim: usize) -> Result<(ParamStore<F>, Encoder), Error> {
    let mut store = ParamStore::new();
    let encoder = Encoder::new(&mut store, cfg.mgru()?, dim, &mut RngState::new(cfg.seed))?;
    let copied = store
        .load_prefix(src, &format!("{}.", Encoder::PREFIX))
        .map_err(|e| data_err(format!("checkpoint does not fit the features: {e}")))?;
    if copied == 0 {
        return Err(data_err("checkpoint holds no encoder weights".into()));
    }
    Ok((store, encoder))
}

fn read_features_file(path: &Path) -> Result<Vec<FeatureRow>, Error> {
    let text = fs::read_to_string(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| data_err(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn stack(rows: &[&Vec<f64>]) -> Result<Tensor<f64>, Error> {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
}

pub fn classify(features: &Path, labels: &Path, c: f64, encoding: Encoding, out: Option<&Path>) -> CmdResult {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument("--C must be positive".into()).into());
    }
    let rows = read_features_file(features)?;
    let m = Manifest::load(labels)?;
    let by_id: HashMap<&str, &ManifestEntry> = m.entries.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in &rows {
        let e = by_id
            .get(r.id.as_str())
            .ok_or_else(|| data_err(format!("video `{}` is missing from {}", r.id, labels.display())))?;
        match e.split {
            Split::Train => {
                let y = e.label.ok_or_else(|| data_err(format!("video `{}` has no label", e.id)))?;
                train.push((r, y));
            }
            Split::Test => test.push(r),
            Split::Val => {}
        }
    }
    let y: Vec<usize> = train.iter().map(|(_, y)| *y).collect();
    let classes: Vec<usize> = y.iter().copied().filter(|&l| l != 0).collect::<BTreeSet<_>>().into_iter().collect();
    if classes.is_empty() {
        return Err(data_err("no labeled event videos in the train split".into()).into());
    }
    if test.is_empty() {
        return Err(data_err("no test videos to score".into()).into());
    }

    let scores: Vec<Vec<f64>> = match encoding {
        Encoding::Pool => {
            let x = stack(&train.iter().map(|(r, _)| &r.pool).collect::<Vec<_>>())?;
            let svm = svm_train(&x, &y, &classes, c)?;
            test.iter().map(|r| svm.decision(&r.pool)).collect()
        }
        Encoding::Vlad => {
            let groups = train[0].0.vlad.len();
            if rows.iter().any(|r| r.vlad.len() != groups) {
                return Err(data_err("videos disagree on the number of VLAD groups".into()).into());
            }
            let mut per_group = Vec::with_capacity(groups);
            for g in 0..groups {
                let x = stack(&train.iter().map(|(r, _)| &r.vlad[g]).collect::<Vec<_>>())?;
                let svm = svm_train(&x, &y, &classes, c)?;
                per_group.push(test.iter().map(|r| svm.decision(&r.vlad[g])).collect::<Vec<_>>());
            }
            (0..test.len())
                .map(|i| late_fuse(&per_group.iter().map(|g| g[i].clone()).collect::<Vec<_>>()))
                .collect::<Result<_, _>>()?
        }
    };

    let mut preds = Vec::with_capacity(test.len() * classes.len());
    for (r, s) in test.iter().zip(&scores) {
        for (&class_id, &score) in classes.iter().zip(s) {
            preds.push(Prediction { video_id: r.id.clone(), class_id, score });
        }
    }
    let default_out = features.with_file_name("predictions.csv");
    let out = out.unwrap_or(&default_out);
    write_predictions(out, &preds)?;
    println!("scored {} videos on {} classes into {}", test.len(), classes.len(), out.display());
    Ok(())
}

pub fn eval_map(pred: &Path, truth: &Path, out: Option<&Path>) -> CmdResult {
    let preds = read_predictions(pred)?;
    let m = Manifest::load(truth)?;
    let labels_by_id: HashMap<&str, Option<usize>> = m.entries.iter().map(|e| (e.id.as_str(), e.label)).collect();

    let mut videos: Vec<&str> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for p in &preds {
        if !index.contains_key(p.video_id.as_str()) {
            index.insert(&p.video_id, videos.len());
            videos.push(&p.video_id);
        }
    }
    let classes: Vec<usize> = preds.iter().map(|p| p.class_id).filter(|&c| c != 0).collect::<BTreeSet<_>>().into_iter().collect();
    if classes.is_empty() {
        return Err(data_err(format!("{}: no event-class predictions", pred.display())).into());
    }
    let mut scores = vec![vec![f64::NAN; videos.len()]; classes.len()];
    for p in preds.iter().filter(|p| p.class_id != 0) {
        let c = classes.binary_search(&p.class_id).expect("collected above");
        scores[c][index[p.video_id.as_str()]] = p.score;
    }
    for (c, row) in classes.iter().zip(&scores) {
        if let Some(v) = row.iter().position(|s| s.is_nan()) {
            return Err(data_err(format!("no score for video `{}` and class {c}", videos[v])).into());
        }
    }
    let labels: Vec<usize> = videos
        .iter()
        .map(|v| match labels_by_id.get(v) {
            Some(Some(l)) => Ok(*l),
            Some(None) => Err(data_err(format!("video `{v}` has no label in {}", truth.display()))),
            None => Err(data_err(format!("video `{v}` is missing from {}", truth.display()))),
        })
        .collect::<Result<_, _>>()?;
    let r = mean_average_precision(&scores, &labels, &classes)?;
    for (c, ap) in &r.per_class {
        println!("class={c} ap={ap:.4}");
    }
    println!("mAP={:.4}", r.map);
    if let Some(path) = out {
        let mut f = fs::File::create(path)?;
        writeln!(f, "{}", r.to_json())?;
    }
    Ok(())
}
