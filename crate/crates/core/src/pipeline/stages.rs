use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use super::manifest::{RunManifest, StageRecord};
use super::{PipelineConfig, PipelineError};
use crate::carousel::{build_carousels, Carousel};
use crate::eval::{GroupLabel, Judgments};
use crate::fsio;
use crate::gatne::{build_corpus, pairs_to_bytes, train_with_corpus, walks_to_bytes};
use crate::ingest::{
    aspects_by_item, build_graph, extract_triples, node_sets, parse_aspects, parse_catalog, parse_sessions,
    parse_similarity, write_jsonl, EdgeType, KnowledgeGraph, MultiplexGraph, NodeSets,
};
use crate::kge::train_kge;
use crate::matrix::EmbeddingMatrix;
use crate::par::ThreadMode;
use crate::recall::{FlatIndex, RecallSet};
use crate::synth::generate_synthetic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Synth,
    Ingest,
    Graph,
    TrainKge,
    TrainGatne,
    Index,
    Recall,
    Carousels,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Graph,
        Stage::TrainKge,
        Stage::TrainGatne,
        Stage::Index,
        Stage::Recall,
        Stage::Carousels,
        Stage::Eval,
    ];

    /// Every stage after synthetic data generation, in dependency order.
    pub const PIPELINE: [Stage; 8] = [
        Stage::Ingest,
        Stage::Graph,
        Stage::TrainKge,
        Stage::TrainGatne,
        Stage::Index,
        Stage::Recall,
        Stage::Carousels,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Graph => "graph",
            Stage::TrainKge => "train-kge",
            Stage::TrainGatne => "train-gatne",
            Stage::Index => "index",
            Stage::Recall => "recall",
            Stage::Carousels => "carousels",
            Stage::Eval => "eval",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.name() == s)
    }

    /// Stages whose artifacts this one reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Synth | Stage::Ingest | Stage::Graph => &[],
            Stage::TrainKge => &[Stage::Ingest],
            Stage::TrainGatne => &[Stage::Graph, Stage::TrainKge],
            Stage::Index => &[Stage::Graph, Stage::TrainGatne],
            Stage::Recall => &[Stage::Graph, Stage::TrainGatne, Stage::Index],
            Stage::Carousels => &[Stage::Recall],
            Stage::Eval => &[Stage::Recall, Stage::Carousels],
        }
    }

    fn config_slice(self, c: &PipelineConfig) -> serde_json::Value {
        let r = &c.recall;
        match self {
            Stage::Synth => json!(c.synth_config()),
            Stage::Ingest => json!(c.parse_mode),
            Stage::Graph => json!([c.parse_mode, c.anchors]),
            Stage::TrainKge => json!(c.kge_config()),
            Stage::TrainGatne => json!(c.gatne_config()),
            Stage::Index => json!([r.edge_type, r.normalize]),
            Stage::Recall => json!([r.edge_type, r.normalize, r.size]),
            Stage::Carousels => json!([c.parse_mode, r.min_support, r.header_policy, r.top_k_headers]),
            Stage::Eval => json!(c.eval),
        }
    }

    /// Hash of this stage's config slice chained with its upstream hashes.
    pub fn config_hash(self, config: &PipelineConfig) -> String {
        let upstream: Vec<String> = self.upstream().iter().map(|u| u.config_hash(config)).collect();
        let doc = json!({ "stage": self.name(), "config": self.config_slice(config), "upstream": upstream });
        fsio::sha256_hex(doc.to_string().as_bytes())
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Artifact {
    Triples,
    Graph,
    NodeSets,
    BaseEmbeddings,
    Walks,
    Pairs,
    Embeddings(EdgeType),
    Index,
    Recall,
    Carousels,
    Metrics,
}

impl Artifact {
    pub fn name(self) -> String {
        match self {
            Artifact::Triples => "triples".into(),
            Artifact::Graph => "graph".into(),
            Artifact::NodeSets => "node_sets".into(),
            Artifact::BaseEmbeddings => "base_embeddings".into(),
            Artifact::Walks => "walks".into(),
            Artifact::Pairs => "pairs".into(),
            Artifact::Embeddings(r) => format!("embeddings.{}", r.name()),
            Artifact::Index => "index".into(),
            Artifact::Recall => "recall".into(),
            Artifact::Carousels => "carousels".into(),
            Artifact::Metrics => "metrics".into(),
        }
    }

    pub fn file_name(self) -> String {
        let ext = match self {
            Artifact::Triples => "tsv",
            Artifact::NodeSets | Artifact::Metrics => "json",
            Artifact::Recall | Artifact::Carousels => "jsonl",
            _ => "bin",
        };
        format!("{}.{ext}", self.name())
    }

    pub fn producer(self) -> Stage {
        match self {
            Artifact::Triples => Stage::Ingest,
            Artifact::Graph | Artifact::NodeSets => Stage::Graph,
            Artifact::BaseEmbeddings => Stage::TrainKge,
            Artifact::Walks | Artifact::Pairs | Artifact::Embeddings(_) => Stage::TrainGatne,
            Artifact::Index => Stage::Index,
            Artifact::Recall => Stage::Recall,
            Artifact::Carousels => Stage::Carousels,
            Artifact::Metrics => Stage::Eval,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Accept upstream artifacts produced under a different config.
    pub force: bool,
}

struct Ctx<'a> {
    config: &'a PipelineConfig,
    mode: ThreadMode,
    dir: PathBuf,
    manifest: RunManifest,
    force: bool,
    record: StageRecord,
}

impl Ctx<'_> {
    fn read_artifact(&mut self, a: Artifact) -> Result<Vec<u8>, PipelineError> {
        let path = self.dir.join(a.file_name());
        if !path.exists() {
            return Err(PipelineError::MissingArtifact { name: a.name() });
        }
        let producer = a.producer();
        if let Some(rec) = self.manifest.stages.get(producer.name()) {
            if rec.config_hash != producer.config_hash(self.config) {
                if !self.force {
                    return Err(PipelineError::ConfigMismatch { stage: producer.name().into(), artifact: a.name() });
                }
                log::warn!("using {} from a differently configured {producer} run (forced)", a.name());
            }
        }
        let bytes = std::fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
        self.record.inputs.insert(a.name(), fsio::sha256_hex(&bytes));
        Ok(bytes)
    }

    fn read_input(&mut self, name: &str, path: &Path) -> Result<Vec<u8>, PipelineError> {
        if !path.exists() {
            return Err(PipelineError::MissingArtifact { name: format!("{name} ({})", path.display()) });
        }
        let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
        self.record.inputs.insert(name.into(), fsio::sha256_hex(&bytes));
        Ok(bytes)
    }

    fn write_file(&mut self, name: String, path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
        fsio::write_atomic(path, bytes).map_err(|e| PipelineError::io(path, e))?;
        self.record.outputs.insert(name, fsio::sha256_hex(bytes));
        Ok(())
    }

    fn write_artifact(&mut self, a: Artifact, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.dir.join(a.file_name());
        self.write_file(a.name(), &path, bytes)
    }

    fn count(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.record.counters.insert(key.into(), value.into());
    }

    fn skipped(&mut self, key: &str, n: usize) {
        if n > 0 {
            log::warn!("{key}: skipped {n} malformed lines");
        }
        self.count(&format!("skipped_{key}"), n);
    }
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(bytes: &[u8], what: &str) -> Result<Vec<T>, PipelineError> {
    bytes
        .split(|&b| b == b'\n')
        .filter(|l| !l.iter().all(u8::is_ascii_whitespace))
        .enumerate()
        .map(|(i, l)| serde_json::from_slice(l).map_err(|e| PipelineError::Data(format!("{what} line {}: {e}", i + 1))))
        .collect()
}

fn load_matrix(bytes: &[u8], what: &str) -> Result<EmbeddingMatrix, PipelineError> {
    EmbeddingMatrix::from_bytes(bytes).map_err(|e| PipelineError::Data(format!("{what}: {e}")))
}

fn synth(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let cfg = ctx.config.synth_config();
    ctx.record.seed = cfg.seed;
    let data = generate_synthetic(&cfg, ctx.mode).map_err(|e| PipelineError::Config(e.to_string()))?;
    let paths = ctx.config.paths.clone();
    let similarity: String = data.similarity.iter().map(|(a, b)| format!("{a}\t{b}\n")).collect();
    let labels: Vec<GroupLabel> = Judgments::from_groups(data.clusters.clone()).labels();
    ctx.write_file("sessions".into(), &paths.sessions, &write_jsonl(&data.sessions))?;
    ctx.write_file("catalog".into(), &paths.catalog, &write_jsonl(&data.catalog))?;
    ctx.write_file("aspects".into(), &paths.aspects, &write_jsonl(&data.aspects))?;
    ctx.write_file("similarity".into(), &paths.similarity, similarity.as_bytes())?;
    ctx.write_file("judgments".into(), &paths.judgments, &write_jsonl(&labels))?;
    ctx.count("items", data.catalog.len());
    ctx.count("events", data.sessions.len());
    ctx.count("aspect_annotations", data.aspects.len());
    ctx.count("similarity_pairs", data.similarity.len());
    Ok(())
}

fn ingest(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let paths = ctx.config.paths.clone();
    let mode = ctx.config.parse_mode;
    let (catalog, skipped) = parse_catalog(&ctx.read_input("catalog", &paths.catalog)?[..], mode).map_err(PipelineError::data)?;
    ctx.skipped("catalog", skipped);
    let aspects = parse_aspects(&ctx.read_input("aspects", &paths.aspects)?[..], mode).map_err(PipelineError::data)?;
    ctx.skipped("aspects", aspects.skipped);
    let sim = parse_similarity(&ctx.read_input("similarity", &paths.similarity)?[..], mode).map_err(PipelineError::data)?;
    ctx.skipped("similarity", sim.skipped);
    let kg = extract_triples(&catalog, &aspects.records, &sim.records);
    ctx.write_artifact(Artifact::Triples, kg.to_tsv().as_bytes())?;
    ctx.count("triples", kg.triples().len());
    ctx.count("entities", kg.entity_count());
    ctx.count("items", kg.item_count());
    Ok(())
}

fn graph(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let paths = ctx.config.paths.clone();
    let mode = ctx.config.parse_mode;
    let sessions = parse_sessions(&ctx.read_input("sessions", &paths.sessions)?[..], mode).map_err(PipelineError::data)?;
    ctx.skipped("sessions", sessions.skipped);
    let (catalog, skipped) = parse_catalog(&ctx.read_input("catalog", &paths.catalog)?[..], mode).map_err(PipelineError::data)?;
    ctx.skipped("catalog", skipped);
    let aspects = parse_aspects(&ctx.read_input("aspects", &paths.aspects)?[..], mode).map_err(PipelineError::data)?;
    ctx.skipped("aspects", aspects.skipped);

    let (g, stats) = build_graph(&sessions.records, &catalog, ctx.mode);
    let sets = node_sets(&sessions.records, &aspects.records, &g, ctx.config.anchors);
    ctx.write_artifact(Artifact::Graph, &g.to_bytes())?;
    ctx.write_artifact(Artifact::NodeSets, &json_bytes(&sets))?;
    ctx.count("nodes", g.node_count());
    for r in EdgeType::ALL {
        ctx.count(&format!("edges_{}", r.name()), g.edge_count(r));
    }
    ctx.count("sessions", stats.sessions);
    ctx.count("dropped_events", stats.dropped_events);
    ctx.count("cross_category_pairs", stats.cross_category_pairs);
    ctx.count("v_a", sets.v_a.len());
    ctx.count("v_b", sets.v_b.len());
    ctx.count("anchors", sets.anchors.len());
    Ok(())
}

fn train_kge_stage(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let cfg = ctx.config.kge_config();
    ctx.record.seed = cfg.seed;
    let kg = KnowledgeGraph::from_tsv(&ctx.read_artifact(Artifact::Triples)?[..]).map_err(PipelineError::data)?;
    let trained = train_kge(kg.triples(), kg.entity_count(), &cfg, ctx.mode).map_err(PipelineError::data)?;
    let base = trained.model.item_embeddings(&kg).map_err(PipelineError::data)?;
    ctx.write_artifact(Artifact::BaseEmbeddings, &base.to_bytes())?;
    ctx.count("epochs", trained.epoch_losses.len());
    if let Some(&l) = trained.epoch_losses.last() {
        ctx.count("final_loss", l);
    }
    ctx.count("rows", base.rows());
    Ok(())
}

fn read_graph(ctx: &mut Ctx) -> Result<MultiplexGraph, PipelineError> {
    MultiplexGraph::from_bytes(&ctx.read_artifact(Artifact::Graph)?).map_err(PipelineError::data)
}

fn read_node_sets(ctx: &mut Ctx) -> Result<NodeSets, PipelineError> {
    serde_json::from_slice(&ctx.read_artifact(Artifact::NodeSets)?).map_err(|e| PipelineError::Data(format!("node_sets: {e}")))
}

fn train_gatne_stage(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let cfg = ctx.config.gatne_config();
    ctx.record.seed = cfg.seed;
    let g = read_graph(ctx)?;
    let base = load_matrix(&ctx.read_artifact(Artifact::BaseEmbeddings)?, "base_embeddings")?;
    let corpus = build_corpus(&g, &cfg, ctx.mode);
    ctx.write_artifact(Artifact::Walks, &walks_to_bytes(&corpus.walks, cfg.seed))?;
    ctx.write_artifact(Artifact::Pairs, &pairs_to_bytes(&corpus.pairs, cfg.seed, cfg.window))?;
    let trained = train_with_corpus(&g, &base, &corpus, &cfg, ctx.mode).map_err(PipelineError::data)?;
    for (r, m) in &trained.embeddings {
        ctx.write_artifact(Artifact::Embeddings(*r), &m.to_bytes())?;
    }
    ctx.count("walks", corpus.walks.len());
    ctx.count("pairs", corpus.pairs.len());
    ctx.count("self_pairs_skipped", trained.self_pairs_skipped);
    ctx.count("epochs", trained.epoch_losses.len());
    if let Some(&l) = trained.epoch_losses.last() {
        ctx.count("final_loss", l);
    }
    Ok(())
}

fn index(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let r = ctx.config.recall.edge_type;
    let emb = load_matrix(&ctx.read_artifact(Artifact::Embeddings(r))?, "embeddings")?;
    let sets = read_node_sets(ctx)?;
    let items: std::collections::BTreeSet<String> =
        sets.v_b.iter().filter(|i| emb.row_index(i).is_some()).cloned().collect();
    ctx.count("v_b_without_embedding", sets.v_b.len() - items.len());
    let idx = FlatIndex::build(&emb, &items, ctx.config.recall.normalize).map_err(PipelineError::data)?;
    ctx.write_artifact(Artifact::Index, &idx.matrix().to_bytes())?;
    ctx.count("rows", idx.len());
    Ok(())
}

fn recall(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let rc = ctx.config.recall.clone();
    // embeddings first: they are the deeper dependency
    let emb = load_matrix(&ctx.read_artifact(Artifact::Embeddings(rc.edge_type))?, "embeddings")?;
    let rows = load_matrix(&ctx.read_artifact(Artifact::Index)?, "index")?;
    let sets = read_node_sets(ctx)?;
    let idx = FlatIndex::from_matrix(rows, rc.normalize).map_err(PipelineError::data)?;
    let anchors: Vec<String> = sets.anchors.iter().filter(|a| emb.row_index(a).is_some()).cloned().collect();
    ctx.count("anchors_without_embedding", sets.anchors.len() - anchors.len());
    let sets = idx.query_batch(&emb, &anchors, rc.size, ctx.mode).map_err(PipelineError::data)?;
    ctx.write_artifact(Artifact::Recall, &write_jsonl(&sets))?;
    ctx.count("anchors", sets.len());
    Ok(())
}

fn carousels(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let recalls: Vec<RecallSet> = parse_jsonl(&ctx.read_artifact(Artifact::Recall)?, "recall")?;
    let path = ctx.config.paths.aspects.clone();
    let aspects = parse_aspects(&ctx.read_input("aspects", &path)?[..], ctx.config.parse_mode).map_err(PipelineError::data)?;
    ctx.skipped("aspects", aspects.skipped);
    let by_item = aspects_by_item(&aspects.records);
    let (cs, suppressed) = build_carousels(&recalls, &by_item, &ctx.config.recall.carousel_options(), ctx.mode);
    ctx.write_artifact(Artifact::Carousels, &write_jsonl(&cs))?;
    ctx.count("carousels", cs.len());
    ctx.count("suppressed_carousels", suppressed);
    Ok(())
}

fn eval(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let k = ctx.config.eval.k;
    let recalls: Vec<RecallSet> = parse_jsonl(&ctx.read_artifact(Artifact::Recall)?, "recall")?;
    let cs: Vec<Carousel> = parse_jsonl(&ctx.read_artifact(Artifact::Carousels)?, "carousels")?;
    let path = ctx.config.paths.judgments.clone();
    let labels: Vec<GroupLabel> = parse_jsonl(&ctx.read_input("judgments", &path)?, "judgments")?;
    let judgments = Judgments::from_labels(&labels);

    let mean_ndcg = |lists: Vec<(&str, Vec<String>)>| {
        let scores: Vec<f64> = lists
            .iter()
            .filter(|(a, _)| !judgments.ideal(a, k).iter().all(|&g| g == 0))
            .map(|(a, items)| judgments.ndcg(a, items, k))
            .collect();
        let mean = if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 };
        (mean, scores.len())
    };
    let (ndcg, evaluated) =
        mean_ndcg(recalls.iter().map(|r| (r.anchor.as_str(), r.entries.iter().map(|e| e.0.clone()).collect())).collect());
    let (carousel_ndcg, carousels_evaluated) =
        mean_ndcg(cs.iter().map(|c| (c.anchor.as_str(), c.items.clone())).collect());
    let metrics = json!({
        "ndcg@k": ndcg,
        "anchors_evaluated": evaluated,
        "k": k,
        "gain": "linear",
        "carousel_ndcg@k": carousel_ndcg,
        "carousels_evaluated": carousels_evaluated,
    });
    ctx.write_artifact(Artifact::Metrics, &json_bytes(&metrics))?;
    ctx.count("ndcg", ndcg);
    ctx.count("anchors_evaluated", evaluated);
    Ok(())
}

fn full_config_hash(config: &PipelineConfig) -> String {
    let mut c = config.clone();
    c.threads = Default::default();
    fsio::sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
}

/// Runs one stage and records it in the manifest.
pub fn run_stage(stage: Stage, config: &PipelineConfig, options: RunOptions) -> Result<StageRecord, PipelineError> {
    config.validate()?;
    let mode = config.thread_mode()?;
    let dir = config.paths.artifacts.clone();
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
    let manifest = RunManifest::load(&dir)?.unwrap_or_default();
    let record = StageRecord { config_hash: stage.config_hash(config), ..Default::default() };
    let mut ctx = Ctx { config, mode, dir, manifest, force: options.force, record };

    log::info!("stage {stage}: start");
    let started = Instant::now();
    match stage {
        Stage::Synth => synth(&mut ctx),
        Stage::Ingest => ingest(&mut ctx),
        Stage::Graph => graph(&mut ctx),
        Stage::TrainKge => train_kge_stage(&mut ctx),
        Stage::TrainGatne => train_gatne_stage(&mut ctx),
        Stage::Index => index(&mut ctx),
        Stage::Recall => recall(&mut ctx),
        Stage::Carousels => carousels(&mut ctx),
        Stage::Eval => eval(&mut ctx),
    }?;
    ctx.record.seconds = started.elapsed().as_secs_f64();
    log::info!("stage {stage}: done in {:.2}s", ctx.record.seconds);

    let Ctx { mut manifest, record, dir, .. } = ctx;
    manifest.config_hash = full_config_hash(config);
    manifest.seed = config.seed;
    manifest.thread_mode = format!("{mode:?}").to_lowercase();
    manifest.stages.insert(stage.name().to_string(), record.clone());
    manifest.save(&dir)?;
    Ok(record)
}

/// Runs stages in order, stopping at the first failure.
pub fn run(stages: &[Stage], config: &PipelineConfig, options: RunOptions) -> Result<BTreeMap<Stage, StageRecord>, PipelineError> {
    let mut out = BTreeMap::new();
    for &s in stages {
        out.insert(s, run_stage(s, config, options)?);
    }
    Ok(out)
}
