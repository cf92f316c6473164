#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cabq::cache::Cache;
use cabq::io::{self, QuestionRecord};
use cabq::oracles::GoldOracle;
use cabq::pipeline::{run_benchmark, Deps, PipelineConfig, Report};
use cabq_core::engine::SearchConfig;
use cabq_core::extraction::{DictionaryLinker, MentionDict, ScriptedSuggester};
use cabq_core::oracle::Oracle;
use cabq_core::Graph;

pub fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn graph_path() -> PathBuf {
    manifest().join("../core/fixtures/olympic.graph")
}

pub fn dict_path() -> PathBuf {
    manifest().join("../core/fixtures/olympic.dict.json")
}

pub fn questions_path() -> PathBuf {
    manifest().join("fixtures/olympic.questions.jsonl")
}

pub fn suggester_path() -> PathBuf {
    manifest().join("fixtures/olympic.suggester.json")
}

/// One beam slot and a depth that reaches the single-filter plans.
pub fn golden_config() -> PipelineConfig {
    PipelineConfig {
        search: SearchConfig { beam_width: 1, max_depth: 6, score_threshold: 1.0, ..SearchConfig::default() },
        ..PipelineConfig::default()
    }
}

pub struct Fixture {
    pub graph: Graph,
    pub hash: String,
    pub dict: MentionDict,
    pub questions: Vec<QuestionRecord>,
    pub suggester: ScriptedSuggester,
    pub linker: DictionaryLinker,
}

impl Fixture {
    pub fn load() -> Self {
        let loaded = io::read_graph(&graph_path()).unwrap();
        let dict = io::read_dict(&dict_path()).unwrap();
        Fixture {
            graph: loaded.graph,
            hash: loaded.hash,
            linker: DictionaryLinker::new(dict.clone()),
            dict,
            questions: io::read_questions(&questions_path()).unwrap(),
            suggester: io::read_suggester(&suggester_path()).unwrap(),
        }
    }

    pub fn gold(&self) -> GoldOracle {
        GoldOracle::new(
            &self.graph,
            &self.dict,
            self.questions.iter().filter_map(|q| q.answers.as_deref().map(|a| (q.id.as_str(), a))),
        )
    }

    pub fn cache(&self, dir: &Path) -> Cache {
        Cache::new(dir, &self.hash)
    }

    pub fn run(&self, questions: &[QuestionRecord], cfg: &PipelineConfig, oracle: &dyn Oracle, cache: &Cache) -> Report {
        let deps = Deps { graph: &self.graph, linker: &self.linker, suggester: &self.suggester, oracle, cache };
        run_benchmark(questions, cfg, &deps)
    }
}
