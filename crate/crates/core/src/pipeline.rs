//! End-to-end commands behind the CLI. Every command writes its artifacts under one output
//! directory together with a `manifest.json` holding the config hash, the seeds and the
//! SHA-256 of every artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalReport};
use crate::geometry::{
    compute_language_vectors, lda_fit, lda_project, select_from_distances, DistanceProfile,
    LanguageVectorTable, Ridge, ShiftArea,
};
use crate::intervention::ShiftPlan;
use crate::lang::LangId;
use crate::numkit::Matrix;
use crate::repstore::{read_dump, sentence_vectors, write_dump, ActivationDump, PoolingMethod};
use crate::toymodel::{init_params, make_parallel_corpus, Corpus, ModelConfig, SyntheticCorpusSpec, ToyModelParams};
use crate::training::{
    derive_seed, dump_activations, shifted_profiles, train_stage1, train_stage2, CalibrationConfig,
    DumpMode, TrainingConfig, TrainingLog, Variant,
};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything a run depends on. Missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub corpus: SyntheticCorpusSpec,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub calibration: CalibrationConfig,
    pub eval: EvalConfig,
    /// Variant trained by `pipeline` and `train`.
    pub variant: Variant,
    pub beta_sweep: Vec<f64>,
    pub lda: LdaExportConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            corpus: SyntheticCorpusSpec::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            calibration: CalibrationConfig::default(),
            eval: EvalConfig::default(),
            variant: Variant::ShifCon,
            beta_sweep: vec![0.1, 0.3, 0.5],
            lda: LdaExportConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaExportConfig {
    /// Defaults to the middle layer.
    pub layer: Option<usize>,
    /// 1-based discriminant indices.
    pub components: Vec<usize>,
    pub pooling: PoolingMethod,
}

impl Default for LdaExportConfig {
    fn default() -> Self {
        Self {
            layer: None,
            components: vec![1, 3],
            pooling: PoolingMethod::Mean,
        }
    }
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    pub layers: Option<(usize, usize)>,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn with_overrides(mut self, o: &Overrides) -> Self {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(beta) = o.beta {
            self.calibration.beta = beta;
        }
        if let Some(layers) = o.layers {
            self.calibration.manual_area = Some(layers);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        self.calibration.validate(self.model.num_layers)?;
        self.eval.validate()?;
        let vocab = self.corpus.scheme().vocab_size();
        if self.model.vocab_size != vocab {
            return Err(Error::Config(format!(
                "model vocab_size {} does not match the corpus vocabulary of {vocab}",
                self.model.vocab_size
            )));
        }
        let longest = self.corpus.max_sentence_len + 2;
        if self.model.max_positions < longest {
            return Err(Error::Config(format!(
                "max_positions {} is shorter than the longest framed sentence ({longest})",
                self.model.max_positions
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn sha256(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }

    fn seeds(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("master".to_string(), self.seed),
            ("init".to_string(), self.init_seed()),
            ("corpus_transitions".to_string(), self.corpus.transition_seed),
        ])
    }

    fn init_seed(&self) -> u64 {
        derive_seed(self.seed, "init")
    }
}

/// Parses `A:B` into a layer pair.
pub fn parse_layers(text: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("layer area `{text}` is not of the form A:B"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Record of one command run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    /// Path relative to the output directory → SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Output directory that hashes everything written through it.
struct OutDir {
    root: PathBuf,
    artifacts: BTreeMap<String, String>,
}

impl OutDir {
    fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            artifacts: BTreeMap::new(),
        })
    }

    fn path(&self, name: &str) -> Result<PathBuf> {
        let p = self.root.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(p)
    }

    fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name)?;
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        self.artifacts.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.bytes(name, text.as_bytes())
    }

    /// Lets `write` produce the file, then records its hash.
    fn file(&mut self, name: &str, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        let p = self.path(name)?;
        write(&p)?;
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        self.artifacts.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn finish(mut self, command: &str, cfg: &PipelineConfig) -> Result<Manifest> {
        self.json("config.json", cfg)?;
        let manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: cfg.sha256()?,
            seeds: cfg.seeds(),
            artifacts: self.artifacts,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let p = self.root.join(MANIFEST_FILE);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(manifest)
    }
}

/// Serialized form of a [`ShiftPlan`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub dominant_language: LangId,
    pub area: ShiftArea,
    pub enabled: bool,
    pub vectors: LanguageVectorTable,
}

impl PlanFile {
    pub fn from_plan(plan: &ShiftPlan) -> Self {
        Self {
            dominant_language: plan.dominant(),
            area: plan.area().clone(),
            enabled: plan.is_enabled(),
            vectors: plan.vectors().clone(),
        }
    }

    pub fn into_plan(self) -> Result<ShiftPlan> {
        ShiftPlan::new(self.dominant_language, self.area, self.vectors, self.enabled)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<ShiftPlan> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: PlanFile = serde_json::from_str(&text)?;
        file.into_plan()
    }
}

/// Shift-projected distance profiles of every non-dominant language and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub profiles: Vec<DistanceProfile>,
    pub mean: Vec<f64>,
}

impl ProfileSet {
    pub fn compute(
        dump: &ActivationDump,
        vectors: &LanguageVectorTable,
        dominant: LangId,
        cal: &CalibrationConfig,
    ) -> Result<Self> {
        let profiles = shifted_profiles(
            dump,
            vectors,
            dominant,
            cal.variance_threshold,
            Ridge::Relative(cal.relative_ridge),
        )?;
        let mean = DistanceProfile::average(&profiles)?;
        Ok(Self { profiles, mean })
    }

    /// Columns `layer,mean` followed by one column per non-dominant language.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,mean");
        for p in &self.profiles {
            out.push_str(&format!(",lang{}", p.language_pair.0));
        }
        out.push('\n');
        for (i, m) in self.mean.iter().enumerate() {
            out.push_str(&format!("{},{m}", i + 1));
            for p in &self.profiles {
                out.push_str(&format!(",{}", p.layers[i].distance));
            }
            out.push('\n');
        }
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn area_for(mean_profile: &[f64], cal: &CalibrationConfig) -> Result<ShiftArea> {
    match cal.manual_area {
        Some((a, b)) => ShiftArea::manual(a, b, mean_profile.len()),
        None => select_from_distances(mean_profile, cal.beta),
    }
}

/// Stage-1 model with its calibration, shared by every stage-2 run of a command.
struct Stage1 {
    corpus: Corpus,
    params: ToyModelParams,
    log: TrainingLog,
    dump: ActivationDump,
    vectors: LanguageVectorTable,
    profiles: ProfileSet,
    area: ShiftArea,
}

impl Stage1 {
    fn plan(&self, area: ShiftArea) -> Result<ShiftPlan> {
        ShiftPlan::new(self.corpus.spec.dominant_language, area, self.vectors.clone(), true)
    }
}

fn run_stage1(cfg: &PipelineConfig) -> Result<Stage1> {
    cfg.validate()?;
    let corpus = make_parallel_corpus(&cfg.corpus).map_err(|e| e.in_stage("corpus"))?;
    let mut params = init_params(&cfg.model, cfg.init_seed()).map_err(|e| e.in_stage("init"))?;
    let mut log = TrainingLog::default();
    train_stage1(&mut params, &corpus, &cfg.training, cfg.seed, &mut log).map_err(|e| e.in_stage("stage1"))?;
    let languages = corpus.spec.languages();
    let dump = dump_activations(&params, &corpus, &corpus.calibration, &languages, DumpMode::Native, "stage1")
        .map_err(|e| e.in_stage("dump"))?;
    let vectors = compute_language_vectors(&dump, cfg.calibration.pooling).map_err(|e| e.in_stage("vectors"))?;
    let profiles = ProfileSet::compute(&dump, &vectors, corpus.spec.dominant_language, &cfg.calibration)
        .map_err(|e| e.in_stage("profile"))?;
    let area = area_for(&profiles.mean, &cfg.calibration).map_err(|e| e.in_stage("select"))?;
    Ok(Stage1 {
        corpus,
        params,
        log,
        dump,
        vectors,
        profiles,
        area,
    })
}

fn write_stage1(out: &mut OutDir, s1: &Stage1) -> Result<()> {
    out.file("corpus.shfc", |p| s1.corpus.write(p))?;
    out.file("stage1/model.shfc", |p| s1.params.write(p))?;
    out.bytes("stage1/train_log.jsonl", s1.log.to_jsonl()?.as_bytes())?;
    out.file("stage1/dump.shfc", |p| write_dump(&s1.dump, p))?;
    out.json("stage1/vectors.json", &s1.vectors)?;
    out.json("stage1/profile.json", &s1.profiles)?;
    out.bytes("stage1/profile.csv", s1.profiles.to_csv().as_bytes())?;
    out.json("stage1/area.json", &s1.area)
}

struct Stage2 {
    params: ToyModelParams,
    plan: ShiftPlan,
    log: TrainingLog,
    report: EvalReport,
}

fn run_stage2(cfg: &PipelineConfig, s1: &Stage1, variant: Variant, area: &ShiftArea) -> Result<Stage2> {
    let mut params = s1.params.clone();
    let mut log = TrainingLog::default();
    let plan = train_stage2(
        &mut params,
        &s1.corpus,
        &cfg.training,
        cfg.seed,
        variant,
        s1.plan(area.clone())?,
        &mut log,
    )
    .map_err(|e| e.in_stage("stage2"))?;
    let report = evaluate(
        &params,
        &s1.corpus,
        variant,
        Some(&plan),
        area,
        &cfg.calibration,
        &cfg.eval,
    )
    .map_err(|e| e.in_stage("eval"))?;
    Ok(Stage2 {
        params,
        plan,
        log,
        report,
    })
}

fn write_stage2(out: &mut OutDir, dir: &str, s2: &Stage2) -> Result<()> {
    out.file(&format!("{dir}/model.shfc"), |p| s2.params.write(p))?;
    out.json(&format!("{dir}/plan.json"), &PlanFile::from_plan(&s2.plan))?;
    out.bytes(&format!("{dir}/train_log.jsonl"), s2.log.to_jsonl()?.as_bytes())?;
    out.json(&format!("{dir}/report.json"), &s2.report)
}

fn stage1_report(cfg: &PipelineConfig, s1: &Stage1) -> Result<EvalReport> {
    evaluate(
        &s1.params,
        &s1.corpus,
        Variant::MsftOnly,
        None,
        &s1.area,
        &cfg.calibration,
        &cfg.eval,
    )
    .map_err(|e| e.in_stage("eval"))
}

/// `1 − after / before`.
fn reduction(before: f64, after: f64) -> f64 {
    1.0 - after / before
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub area: ShiftArea,
    pub mean_profile: Vec<f64>,
    pub stage1: EvalReport,
    pub stage2: EvalReport,
    /// Relative reduction of the mean area distance from stage 1 to stage 2.
    pub distance_reduction: f64,
}

/// Corpus, stage 1, dump, vectors, profile, area selection, stage 2 and evaluation.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<(PipelineReport, Manifest)> {
    let mut dir = OutDir::create(out)?;
    let s1 = run_stage1(cfg)?;
    write_stage1(&mut dir, &s1)?;
    let stage1 = stage1_report(cfg, &s1)?;
    let s2 = run_stage2(cfg, &s1, cfg.variant, &s1.area)?;
    write_stage2(&mut dir, "stage2", &s2)?;
    let report = PipelineReport {
        seed: cfg.seed,
        area: s1.area.clone(),
        mean_profile: s1.profiles.mean.clone(),
        distance_reduction: reduction(stage1.area_distance.mean, s2.report.area_distance.mean),
        stage1,
        stage2: s2.report,
    };
    dir.json("report.json", &report)?;
    let manifest = dir.finish("pipeline", cfg)?;
    Ok((report, manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub shift: bool,
    pub mcl: bool,
    pub non_dominant_accuracy: f64,
    pub non_dominant_consistency: f64,
    pub area_distance: f64,
    pub distance_reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub seed: u64,
    pub area: ShiftArea,
    pub stage1: EvalReport,
    pub reports: Vec<EvalReport>,
    pub table: Vec<AblationRow>,
}

impl AblationReport {
    pub fn get(&self, variant: Variant) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "variant,shift,mcl,non_dominant_accuracy,non_dominant_consistency,area_distance,distance_reduction\n",
        );
        out.push_str(&format!(
            "stage1,false,false,{},{},{},0\n",
            self.stage1.non_dominant_accuracy, self.stage1.non_dominant_consistency, self.stage1.area_distance.mean
        ));
        for r in &self.table {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.variant,
                r.shift,
                r.mcl,
                r.non_dominant_accuracy,
                r.non_dominant_consistency,
                r.area_distance,
                r.distance_reduction
            ));
        }
        out
    }
}

/// Trains the given variants from one shared stage-1 checkpoint and compares them.
pub fn run_ablation(cfg: &PipelineConfig, variants: &[Variant], out: &Path) -> Result<(AblationReport, Manifest)> {
    if variants.is_empty() {
        return Err(Error::Config("no variants to compare".into()));
    }
    let mut dir = OutDir::create(out)?;
    let s1 = run_stage1(cfg)?;
    write_stage1(&mut dir, &s1)?;
    let stage1 = stage1_report(cfg, &s1)?;
    let mut reports = Vec::new();
    for &variant in variants {
        let s2 = run_stage2(cfg, &s1, variant, &s1.area).map_err(|e| e.in_stage(variant.name()))?;
        write_stage2(&mut dir, &format!("variants/{variant}"), &s2)?;
        reports.push(s2.report);
    }
    let table = reports
        .iter()
        .map(|r| AblationRow {
            variant: r.variant,
            shift: r.shift,
            mcl: r.mcl,
            non_dominant_accuracy: r.non_dominant_accuracy,
            non_dominant_consistency: r.non_dominant_consistency,
            area_distance: r.area_distance.mean,
            distance_reduction: reduction(stage1.area_distance.mean, r.area_distance.mean),
        })
        .collect();
    let report = AblationReport {
        seed: cfg.seed,
        area: s1.area.clone(),
        stage1,
        reports,
        table,
    };
    dir.json("ablation.json", &report)?;
    dir.bytes("ablation.csv", report.to_csv().as_bytes())?;
    let manifest = dir.finish("ablate", cfg)?;
    Ok((report, manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub beta: f64,
    pub area: Option<ShiftArea>,
    pub report: Option<EvalReport>,
    /// Error message when this β failed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub stage1_sha256: String,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "beta,l_to,l_bk,non_dominant_accuracy,non_dominant_consistency,area_distance,status\n",
        );
        for r in &self.rows {
            match (&r.area, &r.report) {
                (Some(a), Some(rep)) => out.push_str(&format!(
                    "{},{},{},{},{},{},ok\n",
                    r.beta,
                    a.l_to,
                    a.l_bk,
                    rep.non_dominant_accuracy,
                    rep.non_dominant_consistency,
                    rep.area_distance.mean
                )),
                _ => out.push_str(&format!(
                    "{},,,,,,\"{}\"\n",
                    r.beta,
                    r.error.as_deref().unwrap_or("failed").replace('"', "'")
                )),
            }
        }
        out
    }
}

/// One ShifCon stage-2 run per β from a shared stage-1 checkpoint. Failures of single β
/// values are recorded and the sweep continues.
pub fn run_beta_sweep(cfg: &PipelineConfig, betas: &[f64], out: &Path) -> Result<(SweepReport, Manifest)> {
    if betas.is_empty() {
        return Err(Error::Config("empty beta list".into()));
    }
    let mut dir = OutDir::create(out)?;
    let s1 = run_stage1(cfg)?;
    write_stage1(&mut dir, &s1)?;
    let stage1_sha256 = dir.artifacts["stage1/model.shfc"].clone();
    let mut rows = Vec::new();
    for &beta in betas {
        let run = || -> Result<(ShiftArea, Stage2)> {
            let area = select_from_distances(&s1.profiles.mean, beta)?;
            let s2 = run_stage2(cfg, &s1, Variant::ShifCon, &area)?;
            Ok((area, s2))
        };
        match run() {
            Ok((area, s2)) => {
                write_stage2(&mut dir, &format!("beta_{beta}"), &s2)?;
                rows.push(SweepRow {
                    beta,
                    area: Some(area),
                    report: Some(s2.report),
                    error: None,
                });
            }
            Err(e) => rows.push(SweepRow {
                beta,
                area: None,
                report: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let report = SweepReport { stage1_sha256, rows };
    dir.json("beta_sweep.json", &report)?;
    dir.bytes("beta_sweep.csv", report.to_csv().as_bytes())?;
    let manifest = dir.finish("beta-sweep", cfg)?;
    Ok((report, manifest))
}

/// Pooled per-sentence LDA coordinates of a dump at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaExport {
    pub layer: usize,
    pub components: Vec<usize>,
    /// (language, sentence index, coordinates)
    pub rows: Vec<(LangId, usize, Vec<f64>)>,
}

impl LdaExport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("language,sentence");
        for c in &self.components {
            out.push_str(&format!(",lda{c}"));
        }
        out.push('\n');
        for (lang, i, coords) in &self.rows {
            out.push_str(&format!("{lang},{i}"));
            for v in coords {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn export_lda(
    dump: &ActivationDump,
    layer: usize,
    components: &[usize],
    pooling: PoolingMethod,
) -> Result<LdaExport> {
    if components.is_empty() {
        return Err(Error::Config("no LDA components requested".into()));
    }
    if dump.languages.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "LDA export needs at least 2 languages, the dump has {}",
            dump.languages.len()
        )));
    }
    let mut rows_x: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut index = Vec::new();
    for &lang in &dump.languages {
        let sv = sentence_vectors(dump, lang, layer, pooling)?;
        for i in 0..sv.rows() {
            rows_x.push(sv.row(i).to_vec());
            labels.push(lang);
            index.push(i);
        }
    }
    let x = Matrix::from_rows(&rows_x)?;
    let fitted = (dump.languages.len() - 1).min(dump.hidden_dim);
    let proj = lda_fit(&x, &labels, fitted)?;
    let coords = lda_project(&proj, &x, components)?;
    Ok(LdaExport {
        layer,
        components: components.to_vec(),
        rows: (0..coords.rows())
            .map(|r| (labels[r], index[r], coords.row(r).to_vec()))
            .collect(),
    })
}

/// Writes `lda.csv` for a dump file.
pub fn cmd_export_lda(
    cfg: &PipelineConfig,
    dump_path: &Path,
    layer: Option<usize>,
    components: Option<&[usize]>,
    out: &Path,
) -> Result<Manifest> {
    let dump = read_dump(dump_path)?;
    let layer = layer.or(cfg.lda.layer).unwrap_or(dump.num_layers.div_ceil(2));
    let components = components.unwrap_or(&cfg.lda.components);
    let export = export_lda(&dump, layer, components, cfg.lda.pooling)?;
    let mut dir = OutDir::create(out)?;
    dir.bytes("lda.csv", export.to_csv().as_bytes())?;
    dir.finish("export-lda", cfg)
}

fn load_corpus_and_model(cfg: &PipelineConfig, checkpoint: &Path) -> Result<(Corpus, ToyModelParams)> {
    cfg.validate()?;
    let corpus = make_parallel_corpus(&cfg.corpus)?;
    let params = ToyModelParams::read(checkpoint)?;
    if params.config != cfg.model {
        return Err(Error::Config("checkpoint model config differs from the config file".into()));
    }
    Ok((corpus, params))
}

/// Two-stage training of `cfg.variant`.
pub fn cmd_train(cfg: &PipelineConfig, out: &Path) -> Result<Manifest> {
    let mut dir = OutDir::create(out)?;
    let s1 = run_stage1(cfg)?;
    write_stage1(&mut dir, &s1)?;
    let mut params = s1.params.clone();
    let mut log = TrainingLog::default();
    let plan = train_stage2(
        &mut params,
        &s1.corpus,
        &cfg.training,
        cfg.seed,
        cfg.variant,
        s1.plan(s1.area.clone())?,
        &mut log,
    )
    .map_err(|e| e.in_stage("stage2"))?;
    dir.file("model.shfc", |p| params.write(p))?;
    dir.json("plan.json", &PlanFile::from_plan(&plan))?;
    dir.bytes("train_log.jsonl", log.to_jsonl()?.as_bytes())?;
    dir.finish("train", cfg)
}

/// Calibration-split activations of a checkpoint, hooked when a plan is given.
pub fn cmd_dump(cfg: &PipelineConfig, checkpoint: &Path, plan: Option<&Path>, out: &Path) -> Result<Manifest> {
    let (corpus, params) = load_corpus_and_model(cfg, checkpoint)?;
    let plan = plan.map(PlanFile::read).transpose()?;
    let mode = match &plan {
        Some(p) if p.is_enabled() => DumpMode::DominantLike(p),
        _ => DumpMode::Native,
    };
    let languages = corpus.spec.languages();
    let dump = dump_activations(&params, &corpus, &corpus.calibration, &languages, mode, "checkpoint")?;
    let mut dir = OutDir::create(out)?;
    dir.file("dump.shfc", |p| write_dump(&dump, p))?;
    dir.finish("dump", cfg)
}

pub fn cmd_vectors(cfg: &PipelineConfig, dump_path: &Path, out: &Path) -> Result<Manifest> {
    let dump = read_dump(dump_path)?;
    let vectors = compute_language_vectors(&dump, cfg.calibration.pooling)?;
    let mut dir = OutDir::create(out)?;
    dir.json("vectors.json", &vectors)?;
    dir.finish("vectors", cfg)
}

pub fn cmd_profile(cfg: &PipelineConfig, dump_path: &Path, vectors: Option<&Path>, out: &Path) -> Result<Manifest> {
    let dump = read_dump(dump_path)?;
    let vectors = match vectors {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => compute_language_vectors(&dump, cfg.calibration.pooling)?,
    };
    let profiles = ProfileSet::compute(&dump, &vectors, cfg.corpus.dominant_language, &cfg.calibration)?;
    let mut dir = OutDir::create(out)?;
    dir.json("profile.json", &profiles)?;
    dir.bytes("profile.csv", profiles.to_csv().as_bytes())?;
    dir.finish("profile", cfg)
}

pub fn cmd_select(cfg: &PipelineConfig, profile: &Path, out: &Path) -> Result<Manifest> {
    let profiles = ProfileSet::read(profile)?;
    let area = area_for(&profiles.mean, &cfg.calibration)?;
    let mut dir = OutDir::create(out)?;
    dir.json("area.json", &area)?;
    dir.finish("select", cfg)
}

/// Evaluates a checkpoint. Without a plan the area for the distance diagnostic comes from
/// a fresh calibration of the checkpoint itself.
pub fn cmd_eval(cfg: &PipelineConfig, checkpoint: &Path, plan: Option<&Path>, out: &Path) -> Result<Manifest> {
    let (corpus, params) = load_corpus_and_model(cfg, checkpoint)?;
    let plan = plan.map(PlanFile::read).transpose()?;
    let area = match &plan {
        Some(p) => p.area().clone(),
        None => {
            let dump = dump_activations(
                &params,
                &corpus,
                &corpus.calibration,
                &corpus.spec.languages(),
                DumpMode::Native,
                "checkpoint",
            )?;
            let vectors = compute_language_vectors(&dump, cfg.calibration.pooling)?;
            let profiles = ProfileSet::compute(&dump, &vectors, corpus.spec.dominant_language, &cfg.calibration)?;
            area_for(&profiles.mean, &cfg.calibration)?
        }
    };
    let variant = match &plan {
        Some(p) if p.is_enabled() => cfg.variant,
        _ => Variant::MsftOnly,
    };
    let report = evaluate(&params, &corpus, variant, plan.as_ref(), &area, &cfg.calibration, &cfg.eval)?;
    let mut dir = OutDir::create(out)?;
    dir.json("report.json", &report)?;
    dir.finish("eval", cfg)
}
