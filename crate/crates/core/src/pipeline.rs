//! File-level steps run by the command-line tool. Each step reads and
//! writes inside one collection directory:
//!
//! ```text
//! interactions.csv  split.csv                      ingest
//! features/{image,text,price,transaction}.csv
//! features/users.csv                               featurize
//! model.mars  trace.csv                            train
//! eval/{metrics.csv,attention.csv,summary.txt}     evaluate
//! best_config.txt  search.csv                      search
//! power_law.csv  attention.csv                     analyze
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::{
    compute_price_labels, drop_incomplete_items, filter_users, load_transactions, power_law_report, read_interactions,
    read_split, split_interactions, write_interactions, write_split, DatasetError, InteractionMatrix, Split,
    TransactionLog, MIN_USER_INTERACTIONS,
};
use crate::evaluation::{attention_report, evaluate, EvalError, EvalReport};
use crate::features::{
    assemble_text_embedding, build_item_scalar_features, build_user_features, load_image_manifest,
    load_precomputed_embeddings, load_traits, read_image, select_traits, tile_scalar, train_image_autoencoder,
    write_embeddings, zscore_columns, FeatureError, ItemFeatureSet, Modality, UserFeatureMatrix, WordVectorStore,
    SCALAR_TILE_DIM, USER_FEATURE_DIM, WORD_VECTOR_DIM,
};
use crate::numerics::Tensor;
use crate::training::{
    decode, encode, infer, parse_key_values, random_search, Checkpoint, Model, SearchOutcome, SearchSpace,
    TrainConfig, TrainError, TrainOutcome, TrainingData,
};

/// Autoencoder epochs when the config does not set `cae_epochs`.
pub const DEFAULT_CAE_EPOCHS: usize = 10;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_at(parent))?;
    }
    fs::write(path, text).map_err(io_at(path))
}

/// Flat `key = value` settings. Relative paths resolve against the
/// directory of the file they came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
    base: PathBuf,
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_at(path))?;
        let values = parse_key_values(&text)?;
        Ok(Settings {
            values,
            base: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn from_map(values: BTreeMap<String, String>, base: &Path) -> Self {
        Settings {
            values,
            base: base.to_path_buf(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(|p| self.base.join(p))
    }

    fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key)
            .ok_or_else(|| PipelineError::Config(format!("setting {key:?} is required")))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| PipelineError::Config(format!("{key} = {v} is not a valid value"))),
        }
    }

    /// Training settings: defaults overridden by recognized keys.
    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig::from_map(&self.values)?)
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

/// Paths of one collection directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_path_buf() }
    }

    pub fn interactions(&self) -> PathBuf {
        self.root.join("interactions.csv")
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("split.csv")
    }

    pub fn feature(&self, m: Modality) -> PathBuf {
        self.root.join("features").join(format!("{m}.csv"))
    }

    pub fn user_features(&self) -> PathBuf {
        self.root.join("features").join("users.csv")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model.mars")
    }

    pub fn trace(&self) -> PathBuf {
        self.root.join("trace.csv")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestSummary {
    pub collection: String,
    pub raw_events: usize,
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub pairs: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl IngestSummary {
    pub fn to_text(&self) -> String {
        format!(
            "collection = {}\nraw_events = {}\nusers = {}\nitems = {}\ninteractions = {}\npairs = {}\ntrain = {}\nvalidation = {}\ntest = {}\n",
            self.collection,
            self.raw_events,
            self.users,
            self.items,
            self.interactions,
            self.pairs,
            self.train,
            self.validation,
            self.test
        )
    }
}

fn read_item_list(path: &Path) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// The collection's log restricted to `complete_items` when configured.
fn item_filtered_log(settings: &Settings, collection: &str) -> Result<TransactionLog> {
    let log = load_transactions(&settings.require_path("transactions")?, collection)?;
    Ok(match settings.path("complete_items") {
        Some(p) => drop_incomplete_items(&log, &read_item_list(&p)?),
        None => log,
    })
}

/// Reads the transaction export, labels price movements, drops light users
/// and writes the interactions with a seeded split.
pub fn ingest(settings: &Settings, collection: &str, seed: u64, layout: &Layout) -> Result<IngestSummary> {
    let log = item_filtered_log(settings, collection)?;
    let labels = compute_price_labels(&log);
    let min = settings.parsed("min_interactions", MIN_USER_INTERACTIONS)?;
    let kept = filter_users(&log, min, None)?;
    let matrix = InteractionMatrix::from_log(&kept, &labels)?;
    let split = split_interactions(&matrix, seed)?;
    fs::create_dir_all(&layout.root).map_err(io_at(&layout.root))?;
    write_interactions(&matrix, &layout.interactions())?;
    write_split(&matrix, &split, &layout.split())?;
    Ok(IngestSummary {
        collection: collection.to_string(),
        raw_events: log.len(),
        users: matrix.n_users(),
        items: matrix.n_items(),
        interactions: matrix.interactions().len(),
        pairs: matrix.pairs().len(),
        train: split.count(Split::Train),
        validation: split.count(Split::Validation),
        test: split.count(Split::Test),
    })
}

/// Width of an embedding CSV, read from its header or first row.
fn embedding_width(path: &Path) -> Result<usize> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if let Some(Ok(d)) = header.split(',').nth(1).map(|d| d.trim().parse::<usize>()) {
        return Ok(d);
    }
    Ok(lines.next().map_or(0, |row| row.split(',').count().saturating_sub(1)))
}

fn load_embeddings(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    Ok(load_precomputed_embeddings(path, embedding_width(path)?)?)
}

fn image_features(settings: &Settings, items: &[String], seed: u64) -> Result<BTreeMap<String, Vec<f64>>> {
    if let Some(p) = settings.path("image_embeddings") {
        return load_embeddings(&p);
    }
    let manifest = settings.path("image_manifest").ok_or_else(|| {
        PipelineError::Config("featurize needs image_embeddings or image_manifest".into())
    })?;
    let wanted: BTreeSet<&str> = items.iter().map(String::as_str).collect();
    let mut tokens = Vec::new();
    let mut images = Vec::new();
    for (token, path) in load_image_manifest(&manifest)? {
        if wanted.contains(token.as_str()) {
            images.push(read_image(&path)?);
            tokens.push(token);
        }
    }
    let epochs = settings.parsed("cae_epochs", DEFAULT_CAE_EPOCHS)?;
    let (model, _) = train_image_autoencoder(&images, epochs, seed)?;
    let mut out = BTreeMap::new();
    for (token, img) in tokens.into_iter().zip(&images) {
        out.insert(token, model.encode(img)?);
    }
    Ok(out)
}

fn text_features(settings: &Settings, items: &[String]) -> Result<BTreeMap<String, Vec<f64>>> {
    if let Some(p) = settings.path("text_embeddings") {
        return load_embeddings(&p);
    }
    let (Some(traits), Some(words)) = (settings.path("traits"), settings.path("word_vectors")) else {
        return Err(PipelineError::Config(
            "featurize needs text_embeddings, or traits and word_vectors".into(),
        ));
    };
    let table = load_traits(&traits)?;
    let dim = settings.parsed("word_vector_dim", WORD_VECTOR_DIM)?;
    let store = WordVectorStore::load(&words, dim)?;
    let selected = select_traits(&table, items);
    let empty = BTreeMap::new();
    Ok(items
        .iter()
        .map(|item| {
            let traits = table.get(item).unwrap_or(&empty);
            (item.clone(), assemble_text_embedding(traits, &store, &selected))
        })
        .collect())
}

/// Z-scores one scalar per item across `items` and tiles it.
fn tiled(items: &[String], value: impl Fn(&str) -> f64) -> Result<BTreeMap<String, Vec<f64>>> {
    let raw = Tensor::matrix(items.len(), 1, items.iter().map(|i| value(i)).collect())
        .map_err(FeatureError::from)?;
    let z = zscore_columns(&raw);
    Ok(items
        .iter()
        .enumerate()
        .map(|(r, item)| (item.clone(), tile_scalar(z.row(r)[0], SCALAR_TILE_DIM)))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturizeSummary {
    pub items: usize,
    pub users: usize,
    pub dims: [usize; 4],
}

/// Builds the four item modalities and the user features for the ingested
/// collection.
pub fn featurize(settings: &Settings, collection: &str, seed: u64, layout: &Layout) -> Result<FeaturizeSummary> {
    let matrix = read_interactions(&layout.interactions())?;
    let items = matrix.items().to_vec();
    let log = item_filtered_log(settings, collection)?;
    let scalars = build_item_scalar_features(&log);
    let scalar = |item: &str, pick: fn(&crate::features::ItemScalars) -> f64| scalars.get(item).map_or(0.0, pick);

    let maps = [
        image_features(settings, &items, seed)?,
        text_features(settings, &items)?,
        tiled(&items, |i| scalar(i, |s| s.price))?,
        tiled(&items, |i| scalar(i, |s| s.holding_days))?,
    ];
    let set = ItemFeatureSet::from_maps(&items, [&maps[0], &maps[1], &maps[2], &maps[3]])?;
    for (m, map) in Modality::ALL.iter().zip(&maps) {
        let kept: BTreeMap<String, Vec<f64>> = items.iter().map(|i| (i.clone(), map[i].clone())).collect();
        let path = layout.feature(*m);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_at(parent))?;
        }
        write_embeddings(&path, &kept)?;
    }

    let users = build_user_features(&log, matrix.users())?;
    let mut text = String::from("user,avg_price_eth,avg_holding_days,transactions\n");
    for (u, name) in matrix.users().iter().enumerate() {
        let r = users.values().row(u);
        let _ = writeln!(text, "{name},{},{},{}", r[0], r[1], r[2]);
    }
    write_file(&layout.user_features(), &text)?;
    Ok(FeaturizeSummary {
        items: items.len(),
        users: matrix.n_users(),
        dims: set.dims(),
    })
}

fn read_user_features(path: &Path, users: &[String]) -> Result<UserFeatureMatrix> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    let mut rows: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        let mut fields = line.split(',');
        let name = fields.next().unwrap_or_default();
        let values: std::result::Result<Vec<f64>, _> = fields.map(|f| f.trim().parse::<f64>()).collect();
        match values {
            Ok(v) if v.len() == USER_FEATURE_DIM => {
                rows.insert(name, v);
            }
            _ => {
                return Err(FeatureError::Parse {
                    path: path.display().to_string(),
                    line: k + 1,
                    message: format!("expected user and {USER_FEATURE_DIM} numbers"),
                }
                .into())
            }
        }
    }
    let mut ordered = Vec::with_capacity(users.len());
    for u in users {
        let row = rows
            .get(u.as_str())
            .ok_or_else(|| PipelineError::Config(format!("{} has no row for user {u}", path.display())))?;
        ordered.push(row.clone());
    }
    Ok(UserFeatureMatrix::new(Tensor::from_rows(&ordered).map_err(FeatureError::from)?))
}

/// Loads everything `train`, `evaluate` and `search` need.
pub fn load_training_data(layout: &Layout) -> Result<TrainingData> {
    let matrix = read_interactions(&layout.interactions())?;
    let split = read_split(&layout.split(), &matrix)?;
    let maps = Modality::ALL.map(|m| load_embeddings(&layout.feature(m)));
    let [a, b, c, d] = maps;
    let (a, b, c, d) = (a?, b?, c?, d?);
    let features = ItemFeatureSet::from_maps(matrix.items(), [&a, &b, &c, &d])?;
    let users = read_user_features(&layout.user_features(), matrix.users())?;
    Ok(TrainingData::new(matrix, split, &features, &users.normalized())?)
}

fn trace_csv(outcome: &TrainOutcome) -> String {
    let mut out = String::from("epoch,loss,rec_loss,price_loss,val_recall\n");
    for r in &outcome.trace {
        let recall = r.val_recall.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.loss, r.rec_loss, r.price_loss, recall);
    }
    out
}

/// The checkpoint written for a training run.
pub fn checkpoint_of(outcome: &TrainOutcome, cfg: &TrainConfig) -> Checkpoint {
    let mut metrics = BTreeMap::new();
    if let Some(r) = outcome.best_val_recall {
        metrics.insert(format!("val_recall@{}", cfg.select_k), r);
    }
    if let Some(last) = outcome.trace.last() {
        metrics.insert("final_loss".into(), last.loss);
    }
    Checkpoint {
        dims: outcome.model.dims,
        config: cfg.clone(),
        epoch: outcome.best_epoch,
        metrics,
        params: outcome.model.params.clone(),
    }
}

/// Trains and writes the checkpoint (to `checkpoint`, or the layout's
/// default) and the per-epoch trace.
pub fn train_collection(layout: &Layout, cfg: &TrainConfig, checkpoint: Option<&Path>) -> Result<TrainOutcome> {
    let data = load_training_data(layout)?;
    let outcome = crate::training::train(&data, cfg)?;
    let bytes = encode(&checkpoint_of(&outcome, cfg))?;
    let path = checkpoint.map_or_else(|| layout.checkpoint(), Path::to_path_buf);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_at(parent))?;
    }
    fs::write(&path, bytes).map_err(io_at(&path))?;
    write_file(&layout.trace(), &trace_csv(&outcome))?;
    Ok(outcome)
}

/// Loads a checkpoint, returning it with a short identifier derived from
/// its bytes.
pub fn open_checkpoint(path: &Path) -> Result<(Checkpoint, String)> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    let ck = decode(&bytes)?;
    Ok((ck, format!("{:08x}", crc32fast::hash(&bytes))))
}

fn model_for(data: &TrainingData, ck: &Checkpoint) -> Result<Model> {
    let expected = data.dims(&ck.config);
    if expected != ck.dims {
        return Err(PipelineError::Config(format!(
            "checkpoint shapes {:?} do not match this collection {:?}",
            ck.dims, expected
        )));
    }
    Ok(ck.model())
}

/// Evaluates a checkpoint on the test split and writes the report into
/// `out_dir`.
pub fn evaluate_collection(layout: &Layout, checkpoint: &Path, ks: &[usize], seed: u64, out_dir: &Path) -> Result<EvalReport> {
    let (ck, id) = open_checkpoint(checkpoint)?;
    let data = load_training_data(layout)?;
    let model = model_for(&data, &ck)?;
    let mut metadata: BTreeMap<String, String> =
        ck.config.to_map().into_iter().map(|(k, v)| (format!("config.{k}"), v)).collect();
    metadata.insert("eval_seed".into(), seed.to_string());
    metadata.insert("checkpoint".into(), checkpoint.display().to_string());
    metadata.insert("checkpoint_id".into(), id);
    metadata.insert("checkpoint_epoch".into(), ck.epoch.to_string());
    let report = evaluate(&model, &data, Split::Test, seed, ks, metadata)?;
    fs::create_dir_all(out_dir).map_err(io_at(out_dir))?;
    report.write_to(out_dir, data.matrix.users())?;
    Ok(report)
}

/// Random search over `space`, writing the best config and every trial.
pub fn search_collection(
    layout: &Layout,
    base: &TrainConfig,
    space: &SearchSpace,
    trials: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<SearchOutcome> {
    let data = load_training_data(layout)?;
    let outcome = random_search(&data, base, space, trials, seed)?;
    let mut csv = String::from("trial,dim,alpha,batch_size,hops,lambda,val_recall\n");
    for (k, t) in outcome.trials.iter().enumerate() {
        let c = &t.config;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            k + 1,
            c.dim,
            c.alpha,
            c.batch_size,
            c.hops,
            c.lambda,
            t.val_recall
        );
    }
    write_file(&out_dir.join("search.csv"), &csv)?;
    write_file(&out_dir.join("best_config.txt"), &outcome.best.to_text())?;
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyzeSummary {
    pub item_slope: Option<f64>,
    pub user_slope: Option<f64>,
    pub attention_users: Option<usize>,
}

/// Writes the degree histogram and, given a checkpoint, every user's raw
/// attention scores.
pub fn analyze_collection(layout: &Layout, checkpoint: Option<&Path>, out_dir: &Path) -> Result<AnalyzeSummary> {
    let matrix = read_interactions(&layout.interactions())?;
    let report = power_law_report(&matrix);
    let mut csv = String::from("degree,items,users\n");
    for r in &report.rows {
        let _ = writeln!(csv, "{},{},{}", r.degree, r.items, r.users);
    }
    let slope = |s: Option<f64>| s.map(|v| v.to_string()).unwrap_or_else(|| "none".into());
    let _ = write!(
        csv,
        "# item_slope = {}\n# user_slope = {}\n",
        slope(report.item_slope),
        slope(report.user_slope)
    );
    write_file(&out_dir.join("power_law.csv"), &csv)?;

    let mut attention_users = None;
    if let Some(path) = checkpoint {
        let (ck, _) = open_checkpoint(path)?;
        let data = load_training_data(layout)?;
        let model = model_for(&data, &ck)?;
        let inference = infer(&data, &model.params, model.dims.hops)?;
        let users: Vec<usize> = (0..data.matrix.n_users()).collect();
        let attention = attention_report(&inference.scores, &users);
        let report = EvalReport {
            metadata: BTreeMap::new(),
            model: crate::evaluation::MetricTable { ks: vec![], rows: vec![] },
            popularity: crate::evaluation::MetricTable { ks: vec![], rows: vec![] },
            attention,
            skipped_users: 0,
            exhausted_users: 0,
        };
        write_file(&out_dir.join("attention.csv"), &report.attention_csv(data.matrix.users()))?;
        let mut summary = String::new();
        for (m, s) in Modality::ALL.iter().zip(&report.attention.summary) {
            let _ = writeln!(summary, "{m}: mean {} q1 {} median {} q3 {}", s.mean, s.q1, s.median, s.q3);
        }
        write_file(&out_dir.join("attention_summary.txt"), &summary)?;
        attention_users = Some(users.len());
    }
    Ok(AnalyzeSummary {
        item_slope: report.item_slope,
        user_slope: report.user_slope,
        attention_users,
    })
}
