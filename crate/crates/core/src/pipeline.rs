//! End-to-end runs: feature generation, fusion, collective decoding and
//! evaluation. Each stage writes its artifacts to the output directory and
//! a manifest recording the configuration that produced them; with
//! `resume` a stage whose manifest matches the current configuration is
//! loaded instead of recomputed.
//!
//! Similarity matrices cover the test pairs only. Rows follow the order of
//! the test split; columns hold the test targets in a seeded shuffle so
//! that the gold pairs do not sit on the diagonal.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collective::{
    a2c_align, count_multiplicities, greedy_independent, hungarian, induced_neighbors,
    preliminary_filter, stable_matching, AlignmentEnvironment, AlignmentResult, Provenance,
    RlConfig,
};
use crate::embed::{train, TrainConfig, TrainOutput};
use crate::error::{Error, Result};
use crate::eval::{fusion_poc, hits_mrr, prf, EvalReport};
use crate::fusion::{adaptive_fuse, all_confident_correspondences, FusionConfig, FusionReport};
use crate::kg::{
    load_alignment, load_kg, read_file, resolve_alignment, split_alignment, write_alignment, write_file,
    AlignmentDataset, KnowledgeGraph,
};
use crate::matrix_io::{read_matrix, write_matrix, MatrixFormat};
use crate::names::{display_label, load_word_vectors, name_embedding_matrix, string_sim_matrix, WordVectorTable};
use crate::simmat::{sim_matrix_with_diagnostics, DistanceMeasure, FeatureTag, SimilarityMatrix};
use crate::synth::DatasetFiles;

/// Decoder applied to the fused matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Stable,
    Hungarian,
    #[default]
    Rl,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Stable => "stable",
            Strategy::Hungarian => "hungarian",
            Strategy::Rl => "rl",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "stable" | "sm" => Ok(Strategy::Stable),
            "hungarian" => Ok(Strategy::Hungarian),
            "rl" => Ok(Strategy::Rl),
            other => Err(Error::Argument(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Where the dataset lives. Any file left unset defaults to its name
/// inside `dir` (see [`DatasetFiles`]). Gold pairs come either from the
/// `train`/`test` (and optional `val`) files or from `alignment`, split at
/// random with `train_frac` and `val_frac`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub dir: Option<PathBuf>,
    pub kg1_triples: Option<PathBuf>,
    pub kg1_names: Option<PathBuf>,
    pub kg2_triples: Option<PathBuf>,
    pub kg2_names: Option<PathBuf>,
    pub alignment: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            dir: None,
            kg1_triples: None,
            kg1_names: None,
            kg2_triples: None,
            kg2_names: None,
            alignment: None,
            train: None,
            val: None,
            test: None,
            vectors: None,
            train_frac: 0.24,
            val_frac: 0.06,
        }
    }
}

/// Gold-pair source after path resolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitSource {
    Files {
        train: PathBuf,
        val: Option<PathBuf>,
        test: PathBuf,
    },
    Random {
        alignment: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedDataset {
    pub kg1_triples: PathBuf,
    pub kg1_names: PathBuf,
    pub kg2_triples: PathBuf,
    pub kg2_names: PathBuf,
    pub split: SplitSource,
    pub vectors: Option<PathBuf>,
}

fn existing(path: PathBuf, what: &str) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Config(format!("{what} file {} does not exist", path.display())))
    }
}

impl DatasetConfig {
    /// A dataset stored in the default layout under `dir`.
    pub fn from_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            ..Self::default()
        }
    }

    pub fn resolve(&self) -> Result<ResolvedDataset> {
        let defaults = self.dir.as_deref().map(DatasetFiles::in_dir);
        let pick = |explicit: &Option<PathBuf>, default: Option<PathBuf>, what: &str| -> Result<PathBuf> {
            let path = explicit
                .clone()
                .or(default)
                .ok_or_else(|| Error::Config(format!("no {what} file given and no dataset dir")))?;
            existing(path, what)
        };
        let d = defaults.as_ref();
        let split = match (&self.train, &self.test) {
            (Some(train), Some(test)) => SplitSource::Files {
                train: existing(train.clone(), "train")?,
                val: self.val.clone().map(|v| existing(v, "val")).transpose()?,
                test: existing(test.clone(), "test")?,
            },
            (None, None) => SplitSource::Random {
                alignment: pick(&self.alignment, d.map(|f| f.alignment.clone()), "alignment")?,
            },
            _ => return Err(Error::Config("`train` and `test` must be given together".into())),
        };
        let vectors = match &self.vectors {
            Some(v) => Some(existing(v.clone(), "word vector")?),
            None => d.map(|f| f.vectors.clone()).filter(|p| p.is_file()),
        };
        Ok(ResolvedDataset {
            kg1_triples: pick(&self.kg1_triples, d.map(|f| f.triples1.clone()), "kg1 triples")?,
            kg1_names: pick(&self.kg1_names, d.map(|f| f.names1.clone()), "kg1 names")?,
            kg2_triples: pick(&self.kg2_triples, d.map(|f| f.triples2.clone()), "kg2 triples")?,
            kg2_names: pick(&self.kg2_names, d.map(|f| f.names2.clone()), "kg2 names")?,
            split,
            vectors,
        })
    }

    fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.dir,
            &mut self.kg1_triples,
            &mut self.kg1_names,
            &mut self.kg2_triples,
            &mut self.kg2_names,
            &mut self.alignment,
            &mut self.train,
            &mut self.val,
            &mut self.test,
            &mut self.vectors,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Per-stage seeds that replace the global seed when set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedOverrides {
    pub split: Option<u64>,
    pub embedding: Option<u64>,
    pub shuffle: Option<u64>,
    pub rl: Option<u64>,
}

/// Complete run configuration. The `rng_seed` fields inside `embedding`
/// and `rl` are replaced by the global seed or the matching entry of
/// `seeds` before any stage runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub seeds: SeedOverrides,
    /// Worker threads for the parallel matrix code; all cores when unset.
    pub threads: Option<usize>,
    pub features: Vec<FeatureTag>,
    pub measure: DistanceMeasure,
    pub embedding: TrainConfig,
    pub fusion: FusionConfig,
    pub rl: RlConfig,
    pub strategy: Strategy,
    pub matrix_format: MatrixFormat,
    pub hits_at: Vec<usize>,
    /// Length of the ranked lists written to `ranked.tsv`; full when unset.
    pub ranked_depth: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            output_dir: PathBuf::from("kgalign-out"),
            seed: 0,
            seeds: SeedOverrides::default(),
            threads: None,
            features: vec![FeatureTag::Structural, FeatureTag::Semantic, FeatureTag::String],
            measure: DistanceMeasure::default(),
            embedding: TrainConfig::default(),
            fusion: FusionConfig::default(),
            rl: RlConfig::default(),
            strategy: Strategy::default(),
            matrix_format: MatrixFormat::default(),
            hits_at: vec![1, 10],
            ranked_depth: None,
        }
    }
}

impl PipelineConfig {
    /// Parses a TOML config. Relative paths are taken relative to the
    /// directory of `path`.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = read_file(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            cfg.dataset.rebase(base);
            if cfg.output_dir.is_relative() {
                cfg.output_dir = base.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn split_seed(&self) -> u64 {
        self.seeds.split.unwrap_or(self.seed)
    }

    pub fn shuffle_seed(&self) -> u64 {
        self.seeds.shuffle.unwrap_or(self.seed)
    }

    /// Copy with the stage seeds filled in.
    pub fn effective(&self) -> Self {
        let mut cfg = self.clone();
        cfg.embedding.rng_seed = self.seeds.embedding.unwrap_or(self.seed);
        cfg.rl.rng_seed = self.seeds.rl.unwrap_or(self.seed);
        cfg
    }

    pub fn validate(&self) -> Result<ResolvedDataset> {
        if self.features.is_empty() {
            return Err(Error::Config("at least one feature is required".into()));
        }
        let mut seen = self.features.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.features.len() || self.features.contains(&FeatureTag::Fused) {
            return Err(Error::Config("features must be distinct and not `fused`".into()));
        }
        if self.hits_at.contains(&0) {
            return Err(Error::Config("hits_at values must be >= 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        self.embedding.validate()?;
        self.fusion.validate()?;
        self.rl.validate()?;
        self.dataset.resolve()
    }
}

/// Graphs, gold split and word vectors of one run.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
    pub split: AlignmentDataset,
    pub vectors: Option<WordVectorTable>,
}

fn resolved_pairs(path: &Path, kg1: &KnowledgeGraph, kg2: &KnowledgeGraph) -> Result<Vec<(usize, usize)>> {
    resolve_alignment(&load_alignment(path)?, kg1, kg2)
}

pub fn load_dataset(resolved: &ResolvedDataset, cfg: &DatasetConfig, split_seed: u64) -> Result<Dataset> {
    let kg1 = load_kg(&resolved.kg1_triples, &resolved.kg1_names)?;
    let kg2 = load_kg(&resolved.kg2_triples, &resolved.kg2_names)?;
    let split = match &resolved.split {
        SplitSource::Files { train, val, test } => AlignmentDataset::new(
            resolved_pairs(train, &kg1, &kg2)?,
            match val {
                Some(v) => resolved_pairs(v, &kg1, &kg2)?,
                None => Vec::new(),
            },
            resolved_pairs(test, &kg1, &kg2)?,
        )?,
        SplitSource::Random { alignment } => split_alignment(
            &resolved_pairs(alignment, &kg1, &kg2)?,
            cfg.train_frac,
            cfg.val_frac,
            split_seed,
        )?,
    };
    if split.test.is_empty() {
        return Err(Error::Integrity("the test split is empty".into()));
    }
    let vectors = resolved.vectors.as_deref().map(load_word_vectors).transpose()?;
    Ok(Dataset { kg1, kg2, split, vectors })
}

/// Graph indices behind the rows and columns of the test matrices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixAxes {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl MatrixAxes {
    /// Rows in test order; columns are the test targets shuffled under
    /// `seed`.
    pub fn for_test(test: &[(usize, usize)], seed: u64) -> Self {
        let rows = test.iter().map(|&(s, _)| s).collect();
        let mut cols: Vec<usize> = test.iter().map(|&(_, t)| t).collect();
        cols.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self { rows, cols }
    }

    /// Maps graph-index pairs into matrix coordinates, dropping pairs that
    /// fall outside the axes.
    pub fn to_matrix(&self, pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
        let row: HashMap<usize, usize> = self.rows.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let col: HashMap<usize, usize> = self.cols.iter().enumerate().map(|(j, &t)| (t, j)).collect();
        pairs
            .iter()
            .filter_map(|(s, t)| Some((*row.get(s)?, *col.get(t)?)))
            .collect()
    }
}

/// Per-feature side information from [`build_features`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureDiagnostics {
    pub oov_sources: Option<usize>,
    pub oov_targets: Option<usize>,
    pub zero_denominator_events: BTreeMap<FeatureTag, usize>,
    pub final_embedding_loss: Option<f64>,
    /// Requested features that could not be computed.
    pub skipped: Vec<FeatureTag>,
}

#[derive(Debug, Clone)]
pub struct FeatureOutput {
    pub matrices: Vec<SimilarityMatrix>,
    pub diagnostics: FeatureDiagnostics,
    pub embeddings: Option<TrainOutput>,
}

fn select(names: &[String], idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| display_label(&names[i]).to_owned()).collect()
}

/// Computes the requested similarity matrices over `axes`. `cfg` should be
/// an [`PipelineConfig::effective`] config.
pub fn build_features(data: &Dataset, axes: &MatrixAxes, cfg: &PipelineConfig) -> Result<FeatureOutput> {
    let mut matrices = Vec::new();
    let mut diag = FeatureDiagnostics::default();
    let mut embeddings = None;
    for &tag in &cfg.features {
        match tag {
            FeatureTag::Structural => {
                if data.split.train.is_empty() {
                    log::warn!("no training seeds; skipping the structural feature");
                    diag.skipped.push(tag);
                    continue;
                }
                log::info!(
                    "training structural embeddings ({} seeds, {} epochs)",
                    data.split.train.len(),
                    cfg.embedding.epochs
                );
                let out = train(&data.kg1, &data.kg2, &data.split.train, &cfg.embedding)?;
                diag.final_embedding_loss = out.loss_history.last().copied();
                let (m, d) = sim_matrix_with_diagnostics(
                    &out.z1.select_rows(&axes.rows),
                    &out.z2.select_rows(&axes.cols),
                    cfg.measure,
                    tag,
                )?;
                diag.zero_denominator_events.insert(tag, d.zero_denominator_events);
                matrices.push(m);
                embeddings = Some(out);
            }
            FeatureTag::Semantic => {
                let Some(table) = &data.vectors else {
                    log::warn!("no word vectors; skipping the semantic feature");
                    diag.skipped.push(tag);
                    continue;
                };
                let src = name_embedding_matrix(&select(data.kg1.names(), &axes.rows), table);
                let tgt = name_embedding_matrix(&select(data.kg2.names(), &axes.cols), table);
                let (mut m, d) = sim_matrix_with_diagnostics(&src.rows, &tgt.rows, cfg.measure, tag)?;
                m.neutralize(&src.oov_mask, &tgt.oov_mask);
                diag.oov_sources = Some(src.oov_count());
                diag.oov_targets = Some(tgt.oov_count());
                diag.zero_denominator_events.insert(tag, d.zero_denominator_events);
                matrices.push(m);
            }
            FeatureTag::String => {
                matrices.push(string_sim_matrix(
                    &select(data.kg1.names(), &axes.rows),
                    &select(data.kg2.names(), &axes.cols),
                )?);
            }
            FeatureTag::Fused => unreachable!("rejected by validation"),
        }
    }
    if matrices.is_empty() {
        return Err(Error::Config("none of the requested features could be computed".into()));
    }
    Ok(FeatureOutput {
        matrices,
        diagnostics: diag,
        embeddings,
    })
}

/// Runs `strategy` on a matrix whose rows and columns are the graph
/// entities `axes`. The graphs supply the coherence signal for `rl`.
pub fn decode(
    strategy: Strategy,
    m: &SimilarityMatrix,
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    axes: &MatrixAxes,
    rl: &RlConfig,
) -> Result<AlignmentResult> {
    if strategy != Strategy::Rl {
        return decode_with_neighbors(strategy, m, Vec::new(), Vec::new(), rl);
    }
    decode_with_neighbors(
        strategy,
        m,
        induced_neighbors(kg1, &axes.rows)?,
        induced_neighbors(kg2, &axes.cols)?,
        rl,
    )
}

/// Like [`decode`] with the neighbor lists given in matrix coordinates.
/// Only `rl` reads them.
pub fn decode_with_neighbors(
    strategy: Strategy,
    m: &SimilarityMatrix,
    source_neighbors: Vec<Vec<usize>>,
    target_neighbors: Vec<Vec<usize>>,
    rl: &RlConfig,
) -> Result<AlignmentResult> {
    Ok(match strategy {
        Strategy::Greedy => greedy_independent(m),
        Strategy::Stable => stable_matching(m),
        Strategy::Hungarian => hungarian(m),
        Strategy::Rl => {
            rl.validate()?;
            let prelim = preliminary_filter(m, rl.preliminary_rounds);
            let env = AlignmentEnvironment::new(m.clone(), source_neighbors, target_neighbors, &prelim, rl.tau)?;
            a2c_align(&env, rl)?.result
        }
    })
}

/// Ranked target lists of the given rows, truncated to `depth`.
pub fn ranked_lists(m: &SimilarityMatrix, rows: impl IntoIterator<Item = usize>, depth: Option<usize>) -> HashMap<usize, Vec<usize>> {
    rows.into_iter()
        .map(|i| {
            let mut list = m.ranked_targets(i);
            if let Some(d) = depth {
                list.truncate(d);
            }
            (i, list)
        })
        .collect()
}

/// Metrics of `result` against gold pairs in matrix coordinates.
pub fn evaluate(
    result: &AlignmentResult,
    fused: &SimilarityMatrix,
    gold: &[(usize, usize)],
    confident: Option<&[(usize, usize)]>,
    ks: &[usize],
) -> Result<EvalReport> {
    let predictions = result.pairs();
    let scores = prf(&predictions, gold)?;
    let ranked = ranked_lists(fused, gold.iter().map(|&(s, _)| s), None);
    let ranks = hits_mrr(&ranked, gold, ks)?;
    let mut report = EvalReport::new(scores, Some(ranks), count_multiplicities(result), predictions.len(), gold.len());
    report.poc = confident.and_then(|c| fusion_poc(c, gold));
    Ok(report)
}

// ---- artifact files ----

pub fn write_axis(path: &Path, ids: &[String]) -> Result<()> {
    let mut out = String::new();
    for (i, id) in ids.iter().enumerate() {
        out.push_str(&format!("{i}\t{id}\n"));
    }
    write_file(path, out.as_bytes())
}

pub fn read_axis(path: &Path) -> Result<Vec<String>> {
    let text = read_file(path)?;
    let mut ids = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (idx, id) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `index<TAB>id`"))?;
        if idx.trim().parse::<usize>().ok() != Some(ids.len()) {
            return Err(Error::parse(path, i + 1, format!("expected index {}", ids.len())));
        }
        ids.push(id.to_owned());
    }
    Ok(ids)
}

/// Writes `source_id<TAB>target_id<TAB>provenance` lines.
pub fn write_result(path: &Path, result: &AlignmentResult, row_ids: &[String], col_ids: &[String]) -> Result<()> {
    let mut out = String::new();
    for (s, d) in result.iter() {
        out.push_str(&format!("{}\t{}\t{}\n", row_ids[s], col_ids[d.target], d.provenance));
    }
    write_file(path, out.as_bytes())
}

/// Reads a result file. The provenance column is optional.
pub fn read_result(path: &Path) -> Result<Vec<(String, String, Option<Provenance>)>> {
    let text = read_file(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split('\t').collect();
        let provenance = match fields.len() {
            2 => None,
            3 => Some(fields[2].trim().parse().map_err(|e: Error| Error::parse(path, i + 1, e.to_string()))?),
            n => return Err(Error::parse(path, i + 1, format!("expected 2 or 3 columns, found {n}"))),
        };
        rows.push((fields[0].trim().to_owned(), fields[1].trim().to_owned(), provenance));
    }
    Ok(rows)
}

/// Writes `source_id<TAB>target_1<TAB>…` lines, best target first.
pub fn write_ranked(path: &Path, ranked: &HashMap<usize, Vec<usize>>, row_ids: &[String], col_ids: &[String]) -> Result<()> {
    let mut keys: Vec<&usize> = ranked.keys().collect();
    keys.sort();
    let mut out = String::new();
    for s in keys {
        out.push_str(&row_ids[*s]);
        for &t in &ranked[s] {
            out.push('\t');
            out.push_str(&col_ids[t]);
        }
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn read_ranked(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let text = read_file(path)?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let mut fields = line.split('\t').map(|f| f.trim().to_owned());
            let source = fields.next().unwrap_or_default();
            (source, fields.collect())
        })
        .collect())
}

/// Evaluates prediction, gold and optional ranked-list files that refer to
/// entities by external id.
pub fn evaluate_files(pred: &Path, gold: &Path, ranked: Option<&Path>, ks: &[usize]) -> Result<EvalReport> {
    let mut src = crate::kg::IdMap::new();
    let mut tgt = crate::kg::IdMap::new();
    let gold: Vec<(usize, usize)> = load_alignment(gold)?
        .iter()
        .map(|(s, t)| (src.intern(s), tgt.intern(t)))
        .collect();
    let mut result = AlignmentResult::new();
    for (s, t, p) in read_result(pred)? {
        let s = src.intern(&s);
        if result.target_of(s).is_some() {
            return Err(Error::Integrity(format!("source {} predicted twice", src.ids()[s])));
        }
        result.insert(s, tgt.intern(&t), p.unwrap_or(Provenance::Greedy));
    }
    let predictions = result.pairs();
    let ranks = match ranked {
        Some(path) => {
            let lists: HashMap<usize, Vec<usize>> = read_ranked(path)?
                .into_iter()
                .map(|(s, ts)| (src.intern(&s), ts.iter().map(|t| tgt.intern(t)).collect()))
                .collect();
            Some(hits_mrr(&lists, &gold, ks)?)
        }
        None => None,
    };
    Ok(EvalReport::new(
        prf(&predictions, &gold)?,
        ranks,
        count_multiplicities(&result),
        predictions.len(),
        gold.len(),
    ))
}

// ---- orchestration ----

#[derive(Serialize, Deserialize)]
struct Manifest {
    fingerprint: String,
    tags: Vec<FeatureTag>,
    diagnostics: Option<FeatureDiagnostics>,
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes")
}

fn read_manifest(path: &Path) -> Option<Manifest> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    write_file(path, json(manifest).as_bytes())
}

/// File names inside the output directory.
#[derive(Debug, Clone)]
pub struct OutputLayout {
    pub dir: PathBuf,
    pub format: MatrixFormat,
}

impl OutputLayout {
    pub fn rows(&self) -> PathBuf {
        self.dir.join("rows.tsv")
    }
    pub fn cols(&self) -> PathBuf {
        self.dir.join("cols.tsv")
    }
    /// Test pairs by external id.
    pub fn gold(&self) -> PathBuf {
        self.dir.join("gold.tsv")
    }
    pub fn feature_matrix(&self, tag: FeatureTag) -> PathBuf {
        self.dir.join(format!("{tag}.{}", self.format.extension()))
    }
    pub fn embedding(&self, side: usize) -> PathBuf {
        self.dir.join(format!("kg{side}_embedding.{}", self.format.extension()))
    }
    pub fn features_manifest(&self) -> PathBuf {
        self.dir.join("features.json")
    }
    pub fn fused(&self) -> PathBuf {
        self.feature_matrix(FeatureTag::Fused)
    }
    pub fn fusion_report_text(&self) -> PathBuf {
        self.dir.join("fusion_report.txt")
    }
    pub fn fusion_report_json(&self) -> PathBuf {
        self.dir.join("fusion_report.json")
    }
    pub fn fusion_manifest(&self) -> PathBuf {
        self.dir.join("fusion.json")
    }
    pub fn alignment(&self) -> PathBuf {
        self.dir.join("alignment.tsv")
    }
    pub fn ranked(&self) -> PathBuf {
        self.dir.join("ranked.tsv")
    }
    pub fn align_manifest(&self) -> PathBuf {
        self.dir.join("align.json")
    }
    pub fn report_text(&self) -> PathBuf {
        self.dir.join("report.txt")
    }
    pub fn report_json(&self) -> PathBuf {
        self.dir.join("report.json")
    }
    pub fn table(&self) -> PathBuf {
        self.dir.join("table.txt")
    }
}

/// Last stage to run in [`run_stages`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Features,
    Fusion,
    Align,
    Eval,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Features => "features",
            Stage::Fusion => "fusion",
            Stage::Align => "align",
            Stage::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub axes: MatrixAxes,
    pub gold: Vec<(usize, usize)>,
    pub matrices: Vec<SimilarityMatrix>,
    pub fused: Option<SimilarityMatrix>,
    pub fusion: Option<FusionReport>,
    pub result: Option<AlignmentResult>,
    pub report: Option<EvalReport>,
    /// Stages whose artifacts were loaded from a previous run.
    pub reused: Vec<Stage>,
}

/// Trains the structural embeddings on the training split and writes both
/// graphs' embeddings to the output directory.
pub fn run_embedding(cfg: &PipelineConfig) -> Result<TrainOutput> {
    let resolved = cfg.validate()?;
    let cfg = cfg.effective();
    let data = load_dataset(&resolved, &cfg.dataset, cfg.split_seed()).map_err(|e| e.in_stage("load"))?;
    let out = train(&data.kg1, &data.kg2, &data.split.train, &cfg.embedding).map_err(|e| e.in_stage("embed"))?;
    let layout = OutputLayout {
        dir: cfg.output_dir.clone(),
        format: cfg.matrix_format,
    };
    std::fs::create_dir_all(&layout.dir).map_err(|e| Error::io(&layout.dir, e))?;
    write_matrix(&layout.embedding(1), out.z1.as_array(), cfg.matrix_format)?;
    write_matrix(&layout.embedding(2), out.z2.as_array(), cfg.matrix_format)?;
    Ok(out)
}

pub fn run_pipeline(cfg: &PipelineConfig, resume: bool) -> Result<PipelineOutcome> {
    run_stages(cfg, resume, Stage::Eval)
}

/// Runs the stages up to and including `last`.
pub fn run_stages(cfg: &PipelineConfig, resume: bool, last: Stage) -> Result<PipelineOutcome> {
    let resolved = cfg.validate()?;
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?
            .install(|| run_inner(cfg, &resolved, resume, last)),
        None => run_inner(cfg, &resolved, resume, last),
    }
}

fn run_inner(cfg: &PipelineConfig, resolved: &ResolvedDataset, resume: bool, last: Stage) -> Result<PipelineOutcome> {
    let cfg = cfg.effective();
    let layout = OutputLayout {
        dir: cfg.output_dir.clone(),
        format: cfg.matrix_format,
    };
    std::fs::create_dir_all(&layout.dir).map_err(|e| Error::io(&layout.dir, e))?;

    let data = load_dataset(resolved, &cfg.dataset, cfg.split_seed()).map_err(|e| e.in_stage("load"))?;
    let axes = MatrixAxes::for_test(&data.split.test, cfg.shuffle_seed());
    let gold = axes.to_matrix(&data.split.test);
    let row_ids: Vec<String> = axes.rows.iter().map(|&i| data.kg1.entities().ids()[i].clone()).collect();
    let col_ids: Vec<String> = axes.cols.iter().map(|&j| data.kg2.entities().ids()[j].clone()).collect();
    let mut reused = Vec::new();

    // features
    let features_fp = json(&(
        resolved,
        cfg.dataset.train_frac,
        cfg.dataset.val_frac,
        cfg.split_seed(),
        cfg.shuffle_seed(),
        &cfg.features,
        cfg.measure,
        &cfg.embedding,
        cfg.matrix_format,
    ));
    let cached = resume
        .then(|| read_manifest(&layout.features_manifest()))
        .flatten()
        .filter(|m| m.fingerprint == features_fp);
    let matrices = match cached {
        Some(manifest) => {
            log::info!("reusing cached feature matrices");
            reused.push(Stage::Features);
            manifest
                .tags
                .iter()
                .map(|&tag| SimilarityMatrix::new(read_matrix(&layout.feature_matrix(tag))?, tag))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.in_stage("features"))?
        }
        None => {
            let out = build_features(&data, &axes, &cfg).map_err(|e| e.in_stage("features"))?;
            let write = || -> Result<()> {
                write_axis(&layout.rows(), &row_ids)?;
                write_axis(&layout.cols(), &col_ids)?;
                let gold_ids: Vec<(String, String)> = gold
                    .iter()
                    .map(|&(i, j)| (row_ids[i].clone(), col_ids[j].clone()))
                    .collect();
                write_alignment(&layout.gold(), &gold_ids)?;
                for m in &out.matrices {
                    write_matrix(&layout.feature_matrix(m.tag()), m.scores(), cfg.matrix_format)?;
                }
                if let Some(e) = &out.embeddings {
                    write_matrix(&layout.embedding(1), e.z1.as_array(), cfg.matrix_format)?;
                    write_matrix(&layout.embedding(2), e.z2.as_array(), cfg.matrix_format)?;
                }
                write_manifest(
                    &layout.features_manifest(),
                    &Manifest {
                        fingerprint: features_fp.clone(),
                        tags: out.matrices.iter().map(SimilarityMatrix::tag).collect(),
                        diagnostics: Some(out.diagnostics.clone()),
                    },
                )
            };
            write().map_err(|e| e.in_stage("features"))?;
            out.matrices
        }
    };
    let mut outcome = PipelineOutcome {
        axes,
        gold,
        matrices,
        fused: None,
        fusion: None,
        result: None,
        report: None,
        reused,
    };
    if last == Stage::Features {
        return Ok(outcome);
    }

    // fusion: the report is cheap to recompute, so only the matrix is cached
    let fusion_fp = json(&(&features_fp, &cfg.fusion));
    let (mut fused, report) = adaptive_fuse(&outcome.matrices, &cfg.fusion).map_err(|e| e.in_stage("fusion"))?;
    let fusion_cached = resume
        && outcome.reused.contains(&Stage::Features)
        && read_manifest(&layout.fusion_manifest()).is_some_and(|m| m.fingerprint == fusion_fp);
    if fusion_cached {
        outcome.reused.push(Stage::Fusion);
        fused = SimilarityMatrix::new(read_matrix(&layout.fused())?, FeatureTag::Fused).map_err(|e| e.in_stage("fusion"))?;
    } else {
        let write = || -> Result<()> {
            write_matrix(&layout.fused(), fused.scores(), cfg.matrix_format)?;
            write_file(&layout.fusion_report_text(), report.to_key_value().as_bytes())?;
            write_file(&layout.fusion_report_json(), json(&report).as_bytes())?;
            write_manifest(
                &layout.fusion_manifest(),
                &Manifest {
                    fingerprint: fusion_fp.clone(),
                    tags: vec![FeatureTag::Fused],
                    diagnostics: None,
                },
            )
        };
        write().map_err(|e| e.in_stage("fusion"))?;
    }
    let confident: Vec<(usize, usize)> = all_confident_correspondences(&outcome.matrices)
        .into_iter()
        .flatten()
        .map(|c| (c.source, c.target))
        .collect();
    outcome.fusion = Some(report);
    if last == Stage::Fusion {
        outcome.fused = Some(fused);
        return Ok(outcome);
    }

    // collective decoding
    let align_fp = json(&(&fusion_fp, cfg.strategy, &cfg.rl));
    let align_cached = resume
        && outcome.reused.contains(&Stage::Fusion)
        && read_manifest(&layout.align_manifest()).is_some_and(|m| m.fingerprint == align_fp);
    let result = if align_cached {
        outcome.reused.push(Stage::Align);
        load_result_in_axes(&layout.alignment(), &row_ids, &col_ids).map_err(|e| e.in_stage("align"))?
    } else {
        log::info!("decoding with strategy {}", cfg.strategy);
        let result = decode(cfg.strategy, &fused, &data.kg1, &data.kg2, &outcome.axes, &cfg.rl)
            .map_err(|e| e.in_stage("align"))?;
        let write = || -> Result<()> {
            write_result(&layout.alignment(), &result, &row_ids, &col_ids)?;
            let ranked = ranked_lists(&fused, 0..fused.n_src(), cfg.ranked_depth);
            write_ranked(&layout.ranked(), &ranked, &row_ids, &col_ids)?;
            write_manifest(
                &layout.align_manifest(),
                &Manifest {
                    fingerprint: align_fp.clone(),
                    tags: Vec::new(),
                    diagnostics: None,
                },
            )
        };
        write().map_err(|e| e.in_stage("align"))?;
        result
    };
    if last == Stage::Align {
        outcome.fused = Some(fused);
        outcome.result = Some(result);
        return Ok(outcome);
    }

    // evaluation
    let report = evaluate(&result, &fused, &outcome.gold, Some(&confident), &cfg.hits_at).map_err(|e| e.in_stage("eval"))?;
    let method = match cfg.strategy {
        Strategy::Rl => format!("rl-{}", cfg.rl.mode),
        s => s.to_string(),
    };
    let write = || -> Result<()> {
        write_file(&layout.report_text(), report.to_key_value().as_bytes())?;
        write_file(&layout.report_json(), json(&report).as_bytes())?;
        write_file(&layout.table(), format!("{}\n", report.table_row(&method)).as_bytes())
    };
    write().map_err(|e| e.in_stage("eval"))?;
    outcome.fused = Some(fused);
    outcome.result = Some(result);
    outcome.report = Some(report);
    Ok(outcome)
}

fn load_result_in_axes(path: &Path, row_ids: &[String], col_ids: &[String]) -> Result<AlignmentResult> {
    let row: HashMap<&str, usize> = row_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let col: HashMap<&str, usize> = col_ids.iter().enumerate().map(|(j, s)| (s.as_str(), j)).collect();
    let mut result = AlignmentResult::new();
    for (s, t, p) in read_result(path)? {
        let (Some(&i), Some(&j)) = (row.get(s.as_str()), col.get(t.as_str())) else {
            return Err(Error::Integrity(format!("cached pair ({s}, {t}) is outside the test matrix")));
        };
        result.insert(i, j, p.unwrap_or(Provenance::Greedy));
    }
    Ok(result)
}
