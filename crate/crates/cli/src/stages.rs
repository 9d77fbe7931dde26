use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use cok_core::client::{build_client, ClientError, ClientMode, MockClient, ModelClient, ProbeCache};
use cok_core::eval::{evaluate, PredictionRecord};
use cok_core::explore::{
    explore_all, render_trace, synthesize, FactOracle, KgOracle, Outcome, ProbeOracle, Query,
    TraceRecord,
};
use cok_core::generation::{
    build_corpus, generate_samples, query_instances, query_record, render_question, reserved_words, sample_id,
    CoKSample, Naming,
};
use cok_core::mining::{compose_library, filter_rules, ground_rule, mine_two_hop_rules, ComposeConfig};
use cok_core::rule::{RuleRecord, MAX_HOP, MIN_HOP};
use cok_core::selection::{
    anonymize, balance_instances, leakage_filter, probe_filter, AnonymizationMap, PoolRecord, Provenance,
    SelectionPool, Setting,
};
use cok_core::synth::{generate_triples, SynthConfig};
use cok_core::templates::{generate_templates, FactMatcher, TemplateSet};
use cok_core::{KnowledgeGraph, RuleFilter, RuleStats, Threshold, Triple};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{stage_seed, Config};
use crate::manifest::{digest, RunManifest, StageRecord};
use crate::{CliError, Command, ExploreMode, OracleArg, PolisherArg, SettingArg};

const STORE: &str = "store.json";
const RULES_2HOP: &str = "rules_2hop.jsonl";
const RULES: &str = "rules.jsonl";
const REL_TEMPLATES: &str = "relations.tsv";
const Q_TEMPLATES: &str = "questions.tsv";
const POOL: &str = "pool.jsonl";
const ANON_MAP: &str = "anonymization.tsv";
const SAMPLES: &str = "samples.jsonl";
const CORPUS: &str = "corpus.jsonl";
const TE_SAMPLES: &str = "te_samples.jsonl";
const PREDICTIONS: &str = "predictions.jsonl";
const TRAIN: &str = "train.jsonl";
const TEST: &str = "test.jsonl";
const TRAIN_RULES: &str = "train_rules.txt";
const REPORT_JSON: &str = "report.json";
const REPORT_TXT: &str = "report.txt";

const NO_ANSWER: &str = "No supported reasoning path was found.";

fn data<E: std::fmt::Display>(what: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Data(format!("{what}: {e}"))
}

fn client_error(e: ClientError) -> CliError {
    CliError::Client(e.to_string())
}

struct Stage<'a> {
    dir: &'a Path,
    name: &'static str,
    seed: u64,
    rec: StageRecord,
}

impl<'a> Stage<'a> {
    fn new(dir: &'a Path, cfg: &Config, name: &'static str) -> Result<Self, CliError> {
        let seed = stage_seed(cfg.parsed("seed")?, name);
        let rec = StageRecord { seed, config_hash: cfg.hash(), ..Default::default() };
        Ok(Self { dir, name, seed, rec })
    }

    fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    fn exists(&self, file: &str) -> bool {
        self.path(file).is_file()
    }

    fn read(&mut self, file: &str) -> Result<Vec<u8>, CliError> {
        let bytes = std::fs::read(self.path(file)).map_err(|e| {
            CliError::Data(format!("missing input `{file}` in {} ({e})", self.dir.display()))
        })?;
        self.rec.inputs.insert(file.to_owned(), digest(&bytes));
        Ok(bytes)
    }

    fn read_text(&mut self, file: &str) -> Result<String, CliError> {
        String::from_utf8(self.read(file)?).map_err(data(file))
    }

    fn write(&mut self, file: &str, bytes: &[u8]) -> Result<(), CliError> {
        std::fs::write(self.path(file), bytes).map_err(data(file))?;
        self.rec.outputs.insert(file.to_owned(), digest(bytes));
        Ok(())
    }

    fn param(&mut self, key: &str, value: impl ToString) {
        self.rec.params.insert(key.to_owned(), value.to_string());
    }

    fn count(&mut self, key: &str, value: usize) {
        self.rec.counts.insert(key.to_owned(), value as u64);
    }

    fn commit(self, cfg: &Config) -> Result<(), CliError> {
        let mut m = RunManifest::open(self.dir, cfg.parsed("seed")?, cfg.hash())?;
        m.stages.insert(self.name.to_owned(), self.rec);
        m.save(self.dir)
    }

    fn kg(&mut self) -> Result<KnowledgeGraph, CliError> {
        let bytes = self.read(STORE)?;
        KnowledgeGraph::load(bytes.as_slice()).map_err(data(STORE))
    }

    fn rules(&mut self, kg: &KnowledgeGraph, file: &str) -> Result<Vec<RuleStats>, CliError> {
        let records: Vec<RuleRecord> = from_jsonl(&self.read_text(file)?, file)?;
        records.iter().map(|r| r.to_stats(kg).map_err(data(file))).collect()
    }

    fn templates(&mut self) -> Result<TemplateSet, CliError> {
        let rel = self.read_text(REL_TEMPLATES)?;
        let q = self.read_text(Q_TEMPLATES)?;
        TemplateSet::parse(&rel, &q).map_err(data("templates"))
    }

    fn anonymization(&mut self, kg: &KnowledgeGraph, setting: Setting) -> Result<Option<AnonymizationMap>, CliError> {
        if setting != Setting::Anonymized {
            return Ok(None);
        }
        let text = self.read_text(ANON_MAP)?;
        AnonymizationMap::from_tsv(kg, &text, 0).map(Some).map_err(data(ANON_MAP))
    }

    fn pool(&mut self, kg: &KnowledgeGraph, library: &[RuleStats]) -> Result<SelectionPool, CliError> {
        let records: Vec<PoolRecord> = from_jsonl(&self.read_text(POOL)?, POOL)?;
        let setting = records.first().map_or(Setting::Anonymized, |r| r.setting);
        let anon = self.anonymization(kg, setting)?;
        SelectionPool::from_records(kg, library, &records, anon, Provenance::default()).map_err(data(POOL))
    }

    fn samples(&mut self, file: &str) -> Result<Vec<CoKSample>, CliError> {
        from_jsonl(&self.read_text(file)?, file)
    }
}

fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("records serialize");
        out.push(b'\n');
    }
    out
}

fn from_jsonl<T: DeserializeOwned>(text: &str, file: &str) -> Result<Vec<T>, CliError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Data(format!("{file} line {}: {e}", i + 1))))
        .collect()
}

/// Name of a workdir-relative file argument.
fn workdir_file(arg: Option<&Path>, default: &str) -> Result<String, CliError> {
    match arg {
        None => Ok(default.to_owned()),
        Some(p) => p
            .to_str()
            .map(str::to_owned)
            .ok_or_else(|| CliError::Usage(format!("non-UTF-8 path {}", p.display()))),
    }
}

fn probe_client(
    cfg: &Config,
    table: Option<&Path>,
    kg: &KnowledgeGraph,
    templates: &TemplateSet,
    naming: &Naming,
) -> Result<Box<dyn ModelClient>, CliError> {
    let client_cfg = cfg.client()?;
    let known = match (client_cfg.mode, table) {
        (ClientMode::Live, _) => Vec::new(),
        (ClientMode::Mock, None) => {
            return Err(CliError::Usage("the mock probe client needs --probe-table".into()));
        }
        (ClientMode::Mock, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(data("probe table"))?;
            let mut sentences = Vec::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let f: Vec<&str> = line.split('\t').collect();
                if f.len() != 3 {
                    return Err(CliError::Data(format!("probe table line {}: expected three columns", i + 1)));
                }
                let t = kg.resolve(f[0], f[1], f[2]).map_err(data("probe table"))?;
                sentences.push(cok_core::generation::render_fact(&t, templates, naming).map_err(data("probe table"))?);
            }
            sentences
        }
    };
    build_client(&client_cfg, known).map_err(client_error)
}

pub(crate) fn dispatch(dir: &Path, mut cfg: Config, command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { triples, noise, out } => synth(dir, &cfg, triples, noise, out),
        Command::Ingest { input } => ingest(dir, &cfg, &input),
        Command::Stats => stats(dir, &cfg),
        Command::Mine { min_support, min_confidence } => {
            cfg.set_opt("min_support", min_support)?;
            cfg.set_opt("min_confidence", min_confidence)?;
            mine(dir, &cfg)
        }
        Command::Compose { max_hop, composed_min_support } => {
            cfg.set_opt("max_hop", max_hop)?;
            cfg.set_opt("composed_min_support", composed_min_support)?;
            compose(dir, &cfg)
        }
        Command::Select { setting, per_rule, oracle, probe_table } => {
            cfg.set_opt(
                "setting",
                setting.map(|s| match s {
                    SettingArg::Anonymized => "anonymized",
                    SettingArg::Regular => "regular",
                }),
            )?;
            cfg.set_opt("per_rule", per_rule)?;
            select(dir, &cfg, oracle, probe_table.as_deref())
        }
        Command::Generate { polisher, corpus } => {
            cfg.set_opt(
                "polisher",
                polisher.map(|p| match p {
                    PolisherArg::Mock => "mock",
                    PolisherArg::Live => "live",
                }),
            )?;
            generate(dir, &cfg, corpus)
        }
        Command::Explore { mode, max_trials, oracle, probe_table, samples } => {
            cfg.set_opt("max_trials", max_trials)?;
            match mode {
                ExploreMode::Synthesize => explore_synthesize(dir, &cfg, oracle, probe_table.as_deref()),
                ExploreMode::Answer => {
                    let file = workdir_file(samples.as_deref(), TEST)?;
                    explore_answer(dir, &cfg, oracle, probe_table.as_deref(), &file)
                }
            }
        }
        Command::Split { samples, train_rule_fraction, id_holdout } => {
            cfg.set_opt("train_rule_fraction", train_rule_fraction)?;
            cfg.set_opt("id_holdout", id_holdout)?;
            split(dir, &cfg, samples.as_deref().unwrap_or(SAMPLES))
        }
        Command::Evaluate { predictions, samples, bucket_size } => {
            cfg.set_opt("bucket_size", bucket_size)?;
            let predictions = workdir_file(predictions.as_deref(), PREDICTIONS)?;
            let samples = workdir_file(samples.as_deref(), TEST)?;
            evaluate_stage(dir, &cfg, &predictions, &samples)
        }
    }
}

fn synth(dir: &Path, cfg: &Config, triples: usize, noise: f64, out: Option<PathBuf>) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(CliError::Usage("--noise must be within [0, 1]".into()));
    }
    let mut st = Stage::new(dir, cfg, "synth")?;
    let rows = generate_triples(&SynthConfig { triples, seed: st.seed, noise });
    let text: String = rows.iter().map(|(h, r, t)| format!("{h}\t{r}\t{t}\n")).collect();
    st.param("triples", triples);
    st.param("noise", noise);
    st.count("triples", rows.len());
    match out {
        None => st.write("kg.tsv", text.as_bytes())?,
        Some(path) => {
            std::fs::write(&path, &text).map_err(data("synth output"))?;
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("kg.tsv");
            st.rec.outputs.insert(format!("external:{name}"), digest(text.as_bytes()));
        }
    }
    st.commit(cfg)
}

fn ingest(dir: &Path, cfg: &Config, input: &Path) -> Result<(), CliError> {
    let mut st = Stage::new(dir, cfg, "ingest")?;
    let bytes = std::fs::read(input).map_err(|e| CliError::Data(format!("missing input {}: {e}", input.display())))?;
    let name = input.file_name().and_then(|n| n.to_str()).unwrap_or("input");
    st.rec.inputs.insert(format!("external:{name}"), digest(&bytes));
    let kg = KnowledgeGraph::from_reader(bytes.as_slice()).map_err(data(name))?;
    let mut out = Vec::new();
    kg.save(&mut out).map_err(data(STORE))?;
    st.write(STORE, &out)?;
    let s = kg.stats();
    st.count("entities", s.entities);
    st.count("relations", s.relations);
    st.count("triples", s.triples);
    st.commit(cfg)
}

fn stats(dir: &Path, cfg: &Config) -> Result<(), CliError> {
    let mut st = Stage::new(dir, cfg, "stats")?;
    let s = st.kg()?.stats();
    println!("entities\t{}\nrelations\t{}\ntriples\t{}", s.entities, s.relations, s.triples);
    Ok(())
}

fn rule_filter(cfg: &Config, support_key: &str) -> Result<RuleFilter, CliError> {
    let min_confidence: Threshold = cfg.parsed("min_confidence")?;
    Ok(RuleFilter { min_support: cfg.parsed(support_key)?, min_confidence })
}

fn mine(dir: &Path, cfg: &Config) -> Result<(), CliError> {
    let mut st = Stage::new(dir, cfg, "mine")?;
    let filter = rule_filter(cfg, "min_support")?;
    let workers: usize = cfg.parsed("workers")?;
    let kg = st.kg()?;
    let mined = mine_two_hop_rules(&kg, workers.max(1));
    let kept = filter_rules(&mined, filter);
    let records: Vec<RuleRecord> = kept.iter().map(|s| RuleRecord::from_stats(&kg, s)).collect();
    st.write(RULES_2HOP, &to_jsonl(&records))?;
    st.param("min_support", filter.min_support);
    st.param("min_confidence", cfg.get("min_confidence"));
    st.count("rules_mined", mined.len());
    st.count("rules_kept", kept.len());
    log::info!("mined {} two-hop rules, kept {}", mined.len(), kept.len());
    st.commit(cfg)
}

fn compose(dir: &Path, cfg: &Config) -> Result<(), CliError> {
    let mut st = Stage::new(dir, cfg, "compose")?;
    let max_hop: usize = cfg.parsed("max_hop")?;
    if !(MIN_HOP..=MAX_HOP).contains(&max_hop) {
        return Err(CliError::Usage(format!("--max-hop must be within {MIN_HOP}..={MAX_HOP}")));
    }
    let filter = rule_filter(cfg, "composed_min_support")?;
    let workers: usize = cfg.parsed("workers")?;
    let kg = st.kg()?;
    let two_hop = st.rules(&kg, RULES_2HOP)?;
    let composed = compose_library(&kg, &two_hop, ComposeConfig { max_hop, filter, workers: workers.max(1) });
    let library: Vec<RuleStats> = two_hop.iter().chain(&composed).cloned().collect();
    let records: Vec<RuleRecord> = library.iter().map(|s| RuleRecord::from_stats(&kg, s)).collect();
    st.write(RULES, &to_jsonl(&records))?;
    st.param("max_hop", max_hop);
    st.param("composed_min_support", filter.min_support);
    st.param("min_confidence", cfg.get("min_confidence"));
    for hop in MIN_HOP..=MAX_HOP {
        st.count(&format!("rules_{hop}hop"), library.iter().filter(|s| s.rule.hop() == hop).count());
    }
    st.commit(cfg)
}

fn ensure_templates(st: &mut Stage, cfg: &Config, kg: &KnowledgeGraph) -> Result<TemplateSet, CliError> {
    if st.exists(REL_TEMPLATES) && st.exists(Q_TEMPLATES) {
        return st.templates();
    }
    let relations = kg.relation_names().iter().map(String::as_str);
    let set = match cfg.get("templates") {
        "builtin" => TemplateSet::fallback(relations),
        "live" => {
            let mut client_cfg = cfg.client()?;
            client_cfg.mode = ClientMode::Live;
            let client = build_client(&client_cfg, Vec::new()).map_err(client_error)?;
            generate_templates(relations, client.as_ref())
        }
        other => return Err(CliError::Usage(format!("templates must be builtin or live, got `{other}`"))),
    };
    st.write(REL_TEMPLATES, set.relations_tsv().as_bytes())?;
    st.write(Q_TEMPLATES, set.questions_tsv().as_bytes())?;
    Ok(set)
}

fn select(dir: &Path, cfg: &Config, oracle: Option<OracleArg>, probe_table: Option<&Path>) -> Result<(), CliError> {
    let setting: Setting = cfg.parsed("setting")?;
    match (setting, oracle) {
        (Setting::Regular, Some(OracleArg::Kg)) => {
            return Err(CliError::Usage(
                "--setting regular filters instances by probing a model; use --oracle probe".into(),
            ));
        }
        (Setting::Regular, None) => {
            return Err(CliError::Usage("--setting regular requires --oracle probe".into()));
        }
        (Setting::Anonymized, Some(OracleArg::Probe)) => {
            return Err(CliError::Usage("--oracle probe applies only to --setting regular".into()));
        }
        _ => {}
    }
    let per_rule: usize = cfg.parsed("per_rule")?;
    if per_rule == 0 {
        return Err(CliError::Usage("--per-rule must be at least 1".into()));
    }
    let mut st = Stage::new(dir, cfg, "select")?;
    let kg = st.kg()?;
    let library = st.rules(&kg, RULES)?;
    let templates = ensure_templates(&mut st, cfg, &kg)?;

    let mut per_rule_map = BTreeMap::new();
    for s in &library {
        per_rule_map.insert(s.id.clone(), ground_rule(&kg, &s.rule, true));
    }
    let pool = balance_instances(per_rule_map, per_rule, st.seed, setting).map_err(data("select"))?;
    let mut pool = leakage_filter(pool);
    let mut anon_text = None;
    match setting {
        Setting::Regular => {
            let naming = Naming::new(&kg, None);
            let client = probe_client(cfg, probe_table, &kg, &templates, &naming)?;
            let cache = ProbeCache::new(client.as_ref());
            let oracle = |t: &Triple| match cok_core::generation::render_fact(t, &templates, &naming) {
                Ok(sentence) => cache.probe(&sentence),
                Err(_) => cok_core::client::Verdict::Undecided,
            };
            pool = probe_filter(pool, oracle, cfg.parsed("parallelism")?);
        }
        Setting::Anonymized => {
            let (p, map) = anonymize(pool, &kg, st.seed, &reserved_words(&templates)).map_err(data("select"))?;
            anon_text = Some(map.to_tsv(&kg));
            pool = p;
        }
    }
    if let Some(text) = anon_text {
        st.write(ANON_MAP, text.as_bytes())?;
    }
    st.write(POOL, &to_jsonl(&pool.records(&kg)))?;
    st.param("setting", setting);
    st.param("per_rule", per_rule);
    st.count("rules_in", library.len());
    st.count("rules_kept", pool.per_rule.len());
    st.count("instances", pool.len());
    for (k, v) in &pool.provenance.dropped {
        st.count(&format!("dropped_{k}"), *v);
    }
    for (k, v) in &pool.provenance.rules_dropped {
        st.count(&format!("rules_dropped_{k}"), *v);
    }
    st.commit(cfg)
}

fn polisher(cfg: &Config) -> Result<Box<dyn ModelClient>, CliError> {
    match cfg.get("polisher") {
        "mock" => Ok(Box::new(MockClient::default())),
        "live" => {
            let mut client_cfg = cfg.client()?;
            client_cfg.mode = ClientMode::Live;
            build_client(&client_cfg, Vec::new()).map_err(client_error)
        }
        other => Err(CliError::Usage(format!("polisher must be mock or live, got `{other}`"))),
    }
}

fn generate(dir: &Path, cfg: &Config, corpus: bool) -> Result<(), CliError> {
    let client = polisher(cfg)?;
    let parallelism: usize = cfg.parsed("parallelism")?;
    let mut st = Stage::new(dir, cfg, "generate")?;
    let kg = st.kg()?;
    let library = st.rules(&kg, RULES)?;
    let templates = st.templates()?;
    let pool = st.pool(&kg, &library)?;
    let samples =
        generate_samples(&kg, &pool, &templates, Some(client.as_ref()), parallelism).map_err(data("generate"))?;
    st.write(SAMPLES, &to_jsonl(&samples))?;
    st.param("polisher", cfg.get("polisher"));
    st.count("samples", samples.len());
    st.count("skipped_ambiguous", pool.len() - samples.len());
    if corpus {
        let docs = build_corpus(&kg, &pool, &templates, Some(client.as_ref()), st.seed, parallelism)
            .map_err(data("corpus"))?;
        st.write(CORPUS, &to_jsonl(&docs))?;
        st.count("corpus_docs", docs.len());
    }
    st.commit(cfg)
}

/// Oracle selected on the command line, with its backing client kept alive.
enum OracleBox<'a> {
    Kg(KgOracle<'a>),
    Probe(ProbeOracle<'a>),
}

impl FactOracle for OracleBox<'_> {
    fn holds(&self, fact: &Triple) -> bool {
        match self {
            OracleBox::Kg(o) => o.holds(fact),
            OracleBox::Probe(o) => o.holds(fact),
        }
    }
}

fn max_trials(cfg: &Config, candidates: usize) -> Result<usize, CliError> {
    let n: usize = cfg.parsed("max_trials")?;
    Ok(if n == 0 { candidates.max(1) } else { n })
}

fn explore_synthesize(dir: &Path, cfg: &Config, oracle: OracleArg, probe_table: Option<&Path>) -> Result<(), CliError> {
    let mut st = Stage::new(dir, cfg, "explore-synthesize")?;
    let kg = st.kg()?;
    let library = st.rules(&kg, RULES)?;
    let templates = st.templates()?;
    let pool = st.pool(&kg, &library)?;
    let naming = Naming::of_pool(&kg, &pool);
    let client = match oracle {
        OracleArg::Probe => Some(probe_client(cfg, probe_table, &kg, &templates, &naming)?),
        OracleArg::Kg => None,
    };
    let cache = client.as_ref().map(|c| ProbeCache::new(c.as_ref()));
    let oracle_box = match &cache {
        Some(cache) => OracleBox::Probe(ProbeOracle { cache, templates: &templates, naming }),
        None => OracleBox::Kg(KgOracle(&kg)),
    };
    let trials = max_trials(cfg, library.len())?;
    let mut out = Vec::new();
    let (mut with_errors, mut skipped) = (0, 0);
    for q in query_instances(&kg, &pool) {
        let trace = synthesize(&kg, &q, &library, &oracle_box, trials).map_err(data("explore"))?;
        if trace.outcome != Outcome::Success {
            skipped += 1;
            continue;
        }
        if trace.errors() > 0 {
            with_errors += 1;
        }
        let answer = render_trace(&kg, &trace, &templates, &naming, None).map_err(data("explore"))?;
        let (_, golden) = cok_core::generation::known_and_golden(&q.instance.head_fact, q.side);
        out.push(CoKSample {
            id: sample_id("te", out.len() + 1),
            setting: pool.setting,
            hop: q.instance.rule.hop(),
            rule_id: q.rule_id.to_owned(),
            question: render_question(q.instance, q.side, &templates, &naming).map_err(data("explore"))?,
            answer,
            golden_entity: naming.entity(golden).to_owned(),
            query: query_record(&q, &naming),
            trace: Some(TraceRecord::from_trace(&kg, &trace, &naming)),
        });
    }
    st.write(TE_SAMPLES, &to_jsonl(&out))?;
    st.param("oracle", format!("{oracle:?}").to_lowercase());
    st.param("max_trials", trials);
    st.count("samples", out.len());
    st.count("samples_with_errors", with_errors);
    st.count("skipped_unsupported", skipped);
    st.commit(cfg)
}

fn explore_answer(
    dir: &Path,
    cfg: &Config,
    oracle: OracleArg,
    probe_table: Option<&Path>,
    samples_file: &str,
) -> Result<(), CliError> {
    let mut st = Stage::new(dir, cfg, "explore-answer")?;
    let kg = st.kg()?;
    let library = st.rules(&kg, RULES)?;
    let templates = st.templates()?;
    let samples = st.samples(samples_file)?;
    let setting = samples.first().map_or(Setting::Anonymized, |s| s.setting);
    let anon = st.anonymization(&kg, setting)?;
    let naming = Naming::new(&kg, anon.as_ref());
    let client = match oracle {
        OracleArg::Probe => Some(probe_client(cfg, probe_table, &kg, &templates, &naming)?),
        OracleArg::Kg => None,
    };
    let cache = client.as_ref().map(|c| ProbeCache::new(c.as_ref()));
    let oracle_box = match &cache {
        Some(cache) => OracleBox::Probe(ProbeOracle { cache, templates: &templates, naming }),
        None => OracleBox::Kg(KgOracle(&kg)),
    };
    let queries = samples
        .iter()
        .map(|s| {
            let head = kg
                .relation_id(&s.query.relation)
                .ok_or_else(|| CliError::Data(format!("sample {}: unknown relation `{}`", s.id, s.query.relation)))?;
            let known = naming.resolve(&s.query.known_entity).ok_or_else(|| {
                CliError::Data(format!("sample {}: unknown entity `{}`", s.id, s.query.known_entity))
            })?;
            Ok(Query { head, known, side: s.query.side })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let trials = max_trials(cfg, library.len())?;
    let workers: usize = cfg.parsed("workers")?;
    let traces = explore_all(&kg, &queries, &library, &oracle_box, trials, workers).map_err(data("explore"))?;
    let mut records = Vec::with_capacity(samples.len());
    let mut exhausted = 0;
    for (s, t) in samples.iter().zip(&traces) {
        let output = if t.outcome == Outcome::Success {
            render_trace(&kg, t, &templates, &naming, None).map_err(data("explore"))?
        } else {
            exhausted += 1;
            NO_ANSWER.to_owned()
        };
        records.push(PredictionRecord { id: s.id.clone(), output });
    }
    st.write(PREDICTIONS, &to_jsonl(&records))?;
    st.param("oracle", format!("{oracle:?}").to_lowercase());
    st.param("max_trials", trials);
    st.count("predictions", records.len());
    st.count("exhausted", exhausted);
    st.commit(cfg)
}

fn split(dir: &Path, cfg: &Config, samples_file: &str) -> Result<(), CliError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let frac: f64 = cfg.parsed("train_rule_fraction")?;
    let holdout: f64 = cfg.parsed("id_holdout")?;
    if !(0.0..=1.0).contains(&frac) || !(0.0..=1.0).contains(&holdout) {
        return Err(CliError::Usage("split fractions must be within [0, 1]".into()));
    }
    let mut st = Stage::new(dir, cfg, "split")?;
    let samples = st.samples(samples_file)?;
    let mut by_rule: BTreeMap<&str, Vec<&CoKSample>> = BTreeMap::new();
    for s in &samples {
        by_rule.entry(s.rule_id.as_str()).or_default().push(s);
    }
    let mut rules: Vec<&str> = by_rule.keys().copied().collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(st.seed);
    rules.shuffle(&mut rng);
    let n = rules.len();
    let mut n_train = (frac * n as f64).round() as usize;
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    }
    let train_rules: HashSet<&str> = rules[..n_train.min(n)].iter().copied().collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (rule, group) in &by_rule {
        if !train_rules.contains(rule) {
            test.extend(group.iter().map(|s| (*s).clone()));
            continue;
        }
        let mut group = group.clone();
        group.shuffle(&mut rng);
        let len = group.len();
        let k = if len >= 2 { ((holdout * len as f64).ceil() as usize).clamp(1, len - 1) } else { 0 };
        test.extend(group[..k].iter().map(|s| (*s).clone()));
        train.extend(group[k..].iter().map(|s| (*s).clone()));
    }
    train.sort_by(|a: &CoKSample, b| a.id.cmp(&b.id));
    test.sort_by(|a: &CoKSample, b| a.id.cmp(&b.id));
    let mut rule_list: Vec<&str> = train_rules.into_iter().collect();
    rule_list.sort_unstable();
    let rule_text: String = rule_list.iter().map(|r| format!("{r}\n")).collect();
    st.write(TRAIN, &to_jsonl(&train))?;
    st.write(TEST, &to_jsonl(&test))?;
    st.write(TRAIN_RULES, rule_text.as_bytes())?;
    st.param("samples", samples_file);
    st.param("train_rule_fraction", frac);
    st.param("id_holdout", holdout);
    st.count("train", train.len());
    st.count("test", test.len());
    st.count("train_rules", rule_list.len());
    st.commit(cfg)
}

fn evaluate_stage(dir: &Path, cfg: &Config, predictions_file: &str, samples_file: &str) -> Result<(), CliError> {
    let mut st = Stage::new(dir, cfg, "evaluate")?;
    let kg = st.kg()?;
    let library = st.rules(&kg, RULES)?;
    let templates = st.templates()?;
    let samples = st.samples(samples_file)?;
    let records: Vec<PredictionRecord> = from_jsonl(&st.read_text(predictions_file)?, predictions_file)?;
    let training: HashSet<String> = st.read_text(TRAIN_RULES)?.lines().filter(|l| !l.is_empty()).map(str::to_owned).collect();
    let setting = samples.first().map_or(Setting::Anonymized, |s| s.setting);
    let anon = st.anonymization(&kg, setting)?;
    let naming = Naming::new(&kg, anon.as_ref());
    let matcher = FactMatcher::new(&templates, &naming.names());
    let bucket: usize = cfg.parsed("bucket_size")?;
    let report = evaluate(&samples, &records, &training, &naming, &library, &matcher, (bucket > 0).then_some(bucket))
        .map_err(data("evaluate"))?;
    let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
    json.push(b'\n');
    let table = report.to_table();
    st.write(REPORT_JSON, &json)?;
    st.write(REPORT_TXT, table.as_bytes())?;
    print!("{table}");
    st.param("predictions", predictions_file);
    st.param("samples", samples_file);
    st.count("samples", report.samples);
    st.count("missing_predictions", report.missing_predictions);
    st.commit(cfg)
}
