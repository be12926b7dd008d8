//! Subcommand implementations behind the `cfx` binary.
//!
//! Every command writes its outputs plus a manifest capturing the config
//! hash and the hashes of its input files; re-running with identical config
//! and inputs reproduces the manifests byte for byte. A lock file guards a
//! run directory against concurrent writers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::adapter::AdapterModel;
use crate::baselines::{sa_baseline, sample_baseline, walk_baseline, DecodeOpts, SaSchedule};
use crate::chem::Molecule;
use crate::config::RunConfig;
use crate::dataset::{prep, DatasetBundle};
use crate::explain::{evaluate_pool, infer, CandidatePool, ExplanationReport, InferOptions};
use crate::fp::fnv1a64;
use crate::gnn::{train_classifier, GnnModel};
use crate::ppo::{train_adapter, RolloutCtx};
use crate::toydata;
use crate::vae::{train_vae, VaeModel};
use crate::vocab::{mine_vocab, FragmentVocab};
use crate::Rng;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing prerequisite: {what} (run `cfx {produced_by}` first)")]
    MissingPrerequisite { what: String, produced_by: String },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// Exit codes: 0 ok, 2 config error, 3 missing prerequisite, 4 runtime
    /// failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingPrerequisite { .. } => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

macro_rules! runtime_from {
    ($($ty:ty),+) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Runtime(e.to_string())
            }
        })+
    };
}

runtime_from!(
    std::io::Error,
    crate::chem::ChemError,
    crate::gnn::GnnError,
    crate::vae::VaeError,
    crate::vocab::VocabError,
    crate::adapter::AdapterError,
    crate::ppo::PpoError,
    crate::explain::ExplainError,
    crate::baselines::BaselineError,
    crate::dataset::DatasetError
);

impl From<crate::config::ConfigError> for CliError {
    fn from(e: crate::config::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

/// Exclusive writer lock on a run directory; removed on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<RunLock, CliError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Runtime(
                format!(
                    "run directory is locked by another writer ({}); remove the stale lock if no run is active",
                    path.display()
                ),
            )),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// A run directory plus its configuration.
pub struct Workspace {
    pub config: RunConfig,
    pub dir: PathBuf,
}

impl Workspace {
    pub fn new(config: RunConfig, dir: PathBuf) -> Self {
        Workspace { config, dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn require(&self, name: &str, produced_by: &str) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        if !p.exists() {
            return Err(CliError::MissingPrerequisite {
                what: p.display().to_string(),
                produced_by: produced_by.to_string(),
            });
        }
        Ok(p)
    }

    fn file_hash(path: &Path) -> Result<String, CliError> {
        let bytes = std::fs::read(path)?;
        Ok(format!("{:016x}", fnv1a64(&bytes)))
    }

    /// Write `<command>.manifest.json` with config hash and input hashes.
    fn manifest(
        &self,
        command: &str,
        inputs: &[&Path],
        outputs: &[&Path],
    ) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Manifest {
            command: String,
            config_hash: String,
            inputs: BTreeMap<String, String>,
            outputs: Vec<String>,
        }
        let mut input_map = BTreeMap::new();
        for p in inputs {
            input_map.insert(p.display().to_string(), Self::file_hash(p)?);
        }
        let manifest = Manifest {
            command: command.to_string(),
            config_hash: self.config.hash_hex(),
            inputs: input_map,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(self.path(&format!("{command}.manifest.json")), json)?;
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let json = serde_json::to_string_pretty(value).expect("value serializes");
        std::fs::write(&path, json)?;
        Ok(path)
    }

    fn write_jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut text = String::new();
        for row in rows {
            text.push_str(&serde_json::to_string(row).expect("row serializes"));
            text.push('\n');
        }
        std::fs::write(&path, text)?;
        Ok(path)
    }

    fn load_bundle(&self) -> Result<DatasetBundle, CliError> {
        let path = self.require("bundle.json", "prep")?;
        Ok(DatasetBundle::load(&path)?)
    }

    fn load_gnn(&self) -> Result<GnnModel, CliError> {
        let path = self.require("gnn.ckpt", "train-gnn")?;
        Ok(GnnModel::load(&path)?)
    }

    fn load_adapter(&self) -> Result<AdapterModel, CliError> {
        let path = self.require("adapter.ckpt", "train-adapter")?;
        Ok(AdapterModel::load(&path)?)
    }

    /// Explained inputs: test-split molecules the classifier assigns to the
    /// explain class.
    pub fn explained_inputs(
        &self,
        bundle: &DatasetBundle,
        gnn: &GnnModel,
    ) -> Result<Vec<Molecule>, CliError> {
        let mut out = Vec::new();
        for (mol, _) in bundle.molecules("test")? {
            if gnn.predict_label(&mol)? == self.config.explain_class {
                out.push(mol);
            }
        }
        if out.is_empty() {
            return Err(CliError::Runtime(
                "no test molecules are predicted as the explain class".into(),
            ));
        }
        Ok(out)
    }
}

// ---- commands ----

pub fn cmd_gen_toy(ws: &Workspace, count: usize) -> Result<(), CliError> {
    let _lock = RunLock::acquire(&ws.dir)?;
    let rows = toydata::generate(count, ws.config.seed);
    let csv = ws.path("toy.csv");
    toydata::write_csv(&csv, &rows)?;
    ws.manifest("gen-toy", &[], &[&csv])?;
    println!("wrote {} molecules to {}", rows.len(), csv.display());
    Ok(())
}

pub fn cmd_prep(ws: &Workspace, csv: &Path) -> Result<(), CliError> {
    let _lock = RunLock::acquire(&ws.dir)?;
    if !csv.exists() {
        return Err(CliError::MissingPrerequisite {
            what: csv.display().to_string(),
            produced_by: "gen-toy (or provide your own csv)".into(),
        });
    }
    let bundle = prep(csv, &ws.config)?;
    let out = ws.path("bundle.json");
    bundle.save(&out)?;
    ws.manifest("prep", &[csv], &[&out])?;
    println!(
        "bundle: {} train / {} valid / {} test (skipped {}, dropped {} rare-atom, {} duplicate)",
        bundle.train.len(),
        bundle.valid.len(),
        bundle.test.len(),
        bundle.provenance.rows_skipped,
        bundle.provenance.dropped_rare_atoms,
        bundle.provenance.dropped_duplicates,
    );
    Ok(())
}

pub fn cmd_train_gnn(ws: &Workspace) -> Result<(), CliError> {
    let _lock = RunLock::acquire(&ws.dir)?;
    let bundle_path = ws.require("bundle.json", "prep")?;
    let bundle = DatasetBundle::load(&bundle_path)?;
    let train = bundle.molecules("train")?;
    let valid = bundle.molecules("valid")?;
    let mut rng = Rng::stream(ws.config.seed, "gnn-train");
    let (model, logs) = train_classifier(
        &train,
        &valid,
        &ws.config.gnn_cfg(),
        &ws.config.gnn_train_cfg(),
        &mut rng,
    )?;
    let ckpt = ws.path("gnn.ckpt");
    model.save(&ckpt, ws.config.hash())?;
    let log_path = ws.write_jsonl("gnn_train.jsonl", &logs)?;
    ws.manifest("train-gnn", &[&bundle_path], &[&ckpt, &log_path])?;
    let best = logs
        .iter()
        .map(|l| l.valid_acc)
        .fold(f32::NEG_INFINITY, f32::max);
    println!("trained classifier: best validation accuracy {best:.3}");
    Ok(())
}

pub fn cmd_mine_vocab(ws: &Workspace) -> Result<(), CliError> {
    let _lock = RunLock::acquire(&ws.dir)?;
    let bundle_path = ws.require("bundle.json", "prep")?;
    let bundle = DatasetBundle::load(&bundle_path)?;
    let corpus: Vec<Molecule> = bundle
        .molecules("train")?
        .into_iter()
        .map(|(m, _)| m)
        .collect();
    let vocab = mine_vocab(&corpus, ws.config.vocab_size)?;
    let out = ws.path("vocab.json");
    vocab.save(&out)?;
    ws.manifest("mine-vocab", &[&bundle_path], &[&out])?;
    println!("mined {} vocabulary entries", vocab.len());
    Ok(())
}

pub fn cmd_train_vae(ws: &Workspace, no_pretrain: bool) -> Result<(), CliError> {
    let _lock = RunLock::acquire(&ws.dir)?;
    let bundle_path = ws.require("bundle.json", "prep")?;
    let vocab_path = ws.require("vocab.json", "mine-vocab")?;
    let bundle = DatasetBundle::load(&bundle_path)?;
    let vocab = FragmentVocab::load(&vocab_path)?;
    let ckpt = ws.path("vae.ckpt");
    if no_pretrain {
        // Ablation: a randomly initialized, frozen generator.
        let mut rng = Rng::stream(ws.config.seed, "vae-init");
        let model = VaeModel::init(&ws.config.vae_cfg(), vocab.len(), &mut rng);
        model.save(&ckpt, ws.config.hash())?;
        ws.manifest("train-vae", &[&bundle_path, &vocab_path], &[&ckpt])?;
        println!("saved randomly initialized generator (no pretraining)");
        return Ok(());
    }
    let corpus: Vec<Molecule> = bundle
        .molecules("train")?
        .into_iter()
        .map(|(m, _)| m)
        .collect();
    let mut rng = Rng::stream(ws.config.seed, "vae-train");
    let (model, logs) = train_vae(
        &corpus,
        &vocab,
        &ws.config.vae_cfg(),
        &ws.config.vae_train_cfg(),
        &mut rng,
    )?;
    model.save(&ckpt, ws.config.hash())?;
    let log_path = ws.write_jsonl("vae_train.jsonl", &logs)?;
    ws.manifest("train-vae", &[&bundle_path, &vocab_path], &[&ckpt, &log_path])?;
    let last = logs.last().expect("at least one epoch");
    println!(
        "trained generator: loss {:.3}, fragment accuracy {:.3}",
        last.loss, last.frag_accuracy
    );
    Ok(())
}

/// Input molecules for adapter training: train-split molecules predicted as
/// the explain class, optionally capped.
fn adapter_inputs(ws: &Workspace, bundle: &DatasetBundle, gnn: &GnnModel) -> Result<Vec<Molecule>, CliError> {
    let mut inputs = Vec::new();
    for (mol, _) in bundle.molecules("train")? {
        if gnn.predict_label(&mol)? == ws.config.explain_class {
            inputs.push(mol);
        }
    }
    if inputs.is_empty() {
        return Err(CliError::Runtime(
            "no training molecules are predicted as the explain class".into(),
        ));
    }
    if ws.config.adapter_inputs_cap > 0 && inputs.len() > ws.config.adapter_inputs_cap {
        inputs.truncate(ws.config.adapter_inputs_cap);
    }
    Ok(inputs)
}

pub fn cmd_train_adapter(ws: &Workspace) -> Result<(), CliError> {
    let _lock = RunLock::acquire(&ws.dir)?;
    let bundle_path = ws.require("bundle.json", "prep")?;
    let gnn_path = ws.require("gnn.ckpt", "train-gnn")?;
    let vocab_path = ws.require("vocab.json", "mine-vocab")?;
    let vae_path = ws.require("vae.ckpt", "train-vae")?;
    let bundle = DatasetBundle::load(&bundle_path)?;
    let gnn = GnnModel::load(&gnn_path)?;
    let vocab = FragmentVocab::load(&vocab_path)?;
    let vae = VaeModel::load(&vae_path)?;
    let inputs = adapter_inputs(ws, &bundle, &gnn)?;

    let params = ws.config.score_params();
    let ctx = RolloutCtx {
        gnn: &gnn,
        vae: &vae,
        vocab: &vocab,
        inputs: &inputs,
        params: &params,
        beam: ws.config.beam,
        temperature: ws.config.temperature,
    };
    let mut rng = Rng::stream(ws.config.seed, "adapter-train");
    let (adapter, logs) = train_adapter(
        &ctx,
        &ws.config.adapter_cfg(),
        &ws.config.adapter_train_cfg(),
        &mut rng,
    )?;
    let ckpt = ws.path("adapter.ckpt");
    adapter.save(&ckpt, ws.config.hash())?;
    let log_path = ws.write_jsonl("adapter_train.jsonl", &logs)?;
    ws.manifest(
        "train-adapter",
        &[&bundle_path, &gnn_path, &vocab_path, &vae_path],
        &[&ckpt, &log_path],
    )?;
    let first = logs.first().map(|l| l.mean_reward).unwrap_or(0.0);
    let best = logs
        .iter()
        .map(|l| l.mean_reward)
        .fold(f32::NEG_INFINITY, f32::max);
    println!("aligned adapter: mean episode reward {first:.3} -> best {best:.3}");
    Ok(())
}

pub struct ExplainFlags {
    pub final_only: bool,
    pub no_adapter_training: bool,
}

pub fn cmd_explain(ws: &Workspace, flags: &ExplainFlags) -> Result<ExplanationReport, CliError> {
    let _lock = RunLock::acquire(&ws.dir)?;
    let bundle_path = ws.require("bundle.json", "prep")?;
    let gnn_path = ws.require("gnn.ckpt", "train-gnn")?;
    let vocab_path = ws.require("vocab.json", "mine-vocab")?;
    let vae_path = ws.require("vae.ckpt", "train-vae")?;
    let bundle = DatasetBundle::load(&bundle_path)?;
    let gnn = GnnModel::load(&gnn_path)?;
    let vocab = FragmentVocab::load(&vocab_path)?;
    let vae = VaeModel::load(&vae_path)?;

    let mut manifest_inputs = vec![
        bundle_path.clone(),
        gnn_path.clone(),
        vocab_path.clone(),
        vae_path.clone(),
    ];
    let adapter = if flags.no_adapter_training {
        // Ablation: a randomly initialized adapter shifts the latent mean
        // without any training.
        let mut rng = Rng::stream(ws.config.seed, "adapter-init");
        AdapterModel::init_random(&ws.config.adapter_cfg(), &mut rng)
    } else {
        let path = ws.require("adapter.ckpt", "train-adapter")?;
        manifest_inputs.push(path);
        ws.load_adapter()?
    };

    let inputs = ws.explained_inputs(&bundle, &gnn)?;
    let opts = InferOptions {
        t_steps: ws.config.t_infer,
        k: ws.config.k,
        beam: ws.config.beam,
        temperature: ws.config.temperature,
        final_only: flags.final_only,
        mode: ws.config.selection(),
        params: ws.config.score_params(),
    };
    let mut rng = Rng::stream(ws.config.seed, "infer");
    let (report, pool) = infer(
        &inputs,
        &gnn,
        &vae,
        &adapter,
        &vocab,
        &opts,
        &mut rng,
        ws.config.hash_hex(),
        ws.config.seed,
    )?;
    let report_path = ws.write_json("report.json", &report)?;
    let pool_path = ws.write_json("pool_rlhex.json", &pool)?;
    let refs: Vec<&Path> = manifest_inputs.iter().map(|p| p.as_path()).collect();
    ws.manifest("explain", &refs, &[&report_path, &pool_path])?;
    println!(
        "explanation set: {} candidates, coverage {:.3}, cost {}",
        report.candidates.len(),
        report.coverage,
        report
            .cost
            .map(|c| format!("{c:.3}"))
            .unwrap_or_else(|| "n/a".into()),
    );
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Sample,
    Sa,
    Walk,
}

impl BaselineMethod {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineMethod::Sample => "sample",
            BaselineMethod::Sa => "sa",
            BaselineMethod::Walk => "walk",
        }
    }
}

pub fn cmd_baseline(ws: &Workspace, method: BaselineMethod) -> Result<(), CliError> {
    let _lock = RunLock::acquire(&ws.dir)?;
    let bundle_path = ws.require("bundle.json", "prep")?;
    let gnn_path = ws.require("gnn.ckpt", "train-gnn")?;
    let bundle = DatasetBundle::load(&bundle_path)?;
    let gnn = GnnModel::load(&gnn_path)?;
    let inputs = ws.explained_inputs(&bundle, &gnn)?;
    let params = ws.config.score_params();
    let opts = DecodeOpts {
        beam: ws.config.beam,
        temperature: ws.config.temperature,
    };
    let mut rng = Rng::stream(ws.config.seed, &format!("baseline-{}", method.name()));

    let mut manifest_inputs = vec![bundle_path.clone(), gnn_path.clone()];
    let pool_mols: Vec<Molecule> = match method {
        BaselineMethod::Sample | BaselineMethod::Sa => {
            let vocab_path = ws.require("vocab.json", "mine-vocab")?;
            let vae_path = ws.require("vae.ckpt", "train-vae")?;
            let vocab = FragmentVocab::load(&vocab_path)?;
            let vae = VaeModel::load(&vae_path)?;
            manifest_inputs.push(vocab_path);
            manifest_inputs.push(vae_path);
            match method {
                BaselineMethod::Sample => sample_baseline(
                    &inputs,
                    &vae,
                    &gnn,
                    &vocab,
                    params.target_class,
                    ws.config.t_infer,
                    &opts,
                    &mut rng,
                )?,
                _ => sa_baseline(
                    &inputs,
                    &vae,
                    &gnn,
                    &vocab,
                    &params,
                    ws.config.t_infer,
                    &opts,
                    &SaSchedule::default(),
                    false,
                    &mut rng,
                )?,
            }
        }
        BaselineMethod::Walk => {
            // Budget framing: max_steps = t_infer per input mirrors the
            // per-input iteration accounting (i * |G| total steps).
            walk_baseline(
                &inputs,
                &gnn,
                &ws.config.elements,
                ws.config.t_infer,
                &mut rng,
            )?
        }
    };
    let pool = CandidatePool {
        method: method.name().into(),
        config_hash: ws.config.hash_hex(),
        seed: ws.config.seed,
        delta: params.delta,
        fp_radius: params.fp.radius,
        fp_nbits: params.fp.nbits,
        target_class: params.target_class,
        smiles: pool_mols
            .iter()
            .map(crate::chem::canonical_key)
            .collect::<Result<_, _>>()?,
    };
    let pool_path = ws.write_json(&format!("pool_{}.json", method.name()), &pool)?;
    let refs: Vec<&Path> = manifest_inputs.iter().map(|p| p.as_path()).collect();
    ws.manifest(&format!("baseline-{}", method.name()), &refs, &[&pool_path])?;
    println!("{} pool: {} candidates", method.name(), pool.smiles.len());
    Ok(())
}

pub fn cmd_evaluate(ws: &Workspace, pool_path: &Path) -> Result<ExplanationReport, CliError> {
    let _lock = RunLock::acquire(&ws.dir)?;
    if !pool_path.exists() {
        return Err(CliError::MissingPrerequisite {
            what: pool_path.display().to_string(),
            produced_by: "explain or baseline".into(),
        });
    }
    let text = std::fs::read_to_string(pool_path)?;
    let pool: CandidatePool =
        serde_json::from_str(&text).map_err(|e| CliError::Runtime(e.to_string()))?;
    let params = ws.config.score_params();
    // Metric comparisons across different distance settings are meaningless.
    if pool.delta != params.delta
        || pool.fp_radius != params.fp.radius
        || pool.fp_nbits != params.fp.nbits
    {
        return Err(CliError::Config(format!(
            "pool was built with delta={} fp=({}, {}), current config has delta={} fp=({}, {})",
            pool.delta,
            pool.fp_radius,
            pool.fp_nbits,
            params.delta,
            params.fp.radius,
            params.fp.nbits
        )));
    }
    let bundle = ws.load_bundle()?;
    let gnn = ws.load_gnn()?;
    let inputs = ws.explained_inputs(&bundle, &gnn)?;
    let mols = pool.molecules()?;
    let report = evaluate_pool(
        &mols,
        &inputs,
        &gnn,
        &params,
        ws.config.k,
        ws.config.selection(),
        &pool.method,
        ws.config.hash_hex(),
        pool.seed,
    )?;
    let out = ws.write_json(&format!("evaluate_{}.json", pool.method), &report)?;
    ws.manifest(
        &format!("evaluate-{}", pool.method),
        &[pool_path, &ws.path("bundle.json"), &ws.path("gnn.ckpt")],
        &[&out],
    )?;
    println!(
        "{}: coverage {:.3}, cost {}",
        pool.method,
        report.coverage,
        report
            .cost
            .map(|c| format!("{c:.3}"))
            .unwrap_or_else(|| "n/a".into()),
    );
    Ok(report)
}

pub fn cmd_sweep_k(ws: &Workspace, pool_path: &Path, max_k: usize) -> Result<(), CliError> {
    let _lock = RunLock::acquire(&ws.dir)?;
    if !pool_path.exists() {
        return Err(CliError::MissingPrerequisite {
            what: pool_path.display().to_string(),
            produced_by: "explain or baseline".into(),
        });
    }
    let text = std::fs::read_to_string(pool_path)?;
    let pool: CandidatePool =
        serde_json::from_str(&text).map_err(|e| CliError::Runtime(e.to_string()))?;
    let params = ws.config.score_params();
    if pool.delta != params.delta
        || pool.fp_radius != params.fp.radius
        || pool.fp_nbits != params.fp.nbits
    {
        return Err(CliError::Config(
            "pool distance settings do not match the current config".into(),
        ));
    }
    let bundle = ws.load_bundle()?;
    let gnn = ws.load_gnn()?;
    let inputs = ws.explained_inputs(&bundle, &gnn)?;
    let mols = pool.molecules()?;

    let mut csv = String::from("k,coverage,cost\n");
    for k in 1..=max_k {
        let report = evaluate_pool(
            &mols,
            &inputs,
            &gnn,
            &params,
            k,
            ws.config.selection(),
            &pool.method,
            ws.config.hash_hex(),
            pool.seed,
        )?;
        csv.push_str(&format!(
            "{k},{},{}\n",
            report.coverage,
            report.cost.map(|c| c.to_string()).unwrap_or_default()
        ));
    }
    let out = ws.path(&format!("sweep_{}.csv", pool.method));
    std::fs::write(&out, csv)?;
    ws.manifest(
        &format!("sweep-k-{}", pool.method),
        &[pool_path, &ws.path("bundle.json"), &ws.path("gnn.ckpt")],
        &[&out],
    )?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Coverage of a pool evaluated directly (used by tests and examples).
pub fn pool_coverage(
    pool: &CandidatePool,
    inputs: &[Molecule],
    k: usize,
    ws: &Workspace,
    gnn: &GnnModel,
) -> Result<f32, CliError> {
    let mols = pool.molecules()?;
    let report = evaluate_pool(
        &mols,
        inputs,
        gnn,
        &ws.config.score_params(),
        k,
        ws.config.selection(),
        &pool.method,
        ws.config.hash_hex(),
        pool.seed,
    )?;
    Ok(report.coverage)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_excludes_second_writer() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(RunLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(
            CliError::MissingPrerequisite {
                what: "f".into(),
                produced_by: "c".into()
            }
            .exit_code(),
            3
        );
        assert_eq!(CliError::Runtime("x".into()).exit_code(), 4);
    }

    #[test]
    fn missing_prerequisite_names_producer() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(RunConfig::default(), dir.path().to_path_buf());
        let err = ws.load_bundle().unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("prep"));
    }
}
