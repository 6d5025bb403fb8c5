//! Pipeline stages. Each reads its inputs from and writes its outputs to an
//! artifact tree rooted at one directory; see [`Layout`].

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use cpf_core::calibrate::{train_mtl_1, train_mtl_n, CalibrationSample, Calibrator, CalibratorFile, TrainReport};
use cpf_core::eval::{
    benchmark, build_dataset, disturbance_sweep, label_correlations, pearson_csv, split_dataset, sweep_csv, EvalReport,
    Method, Splits,
};
use cpf_core::replay::{CampaignCriteria, LogIndex, ReplayResult, ResponseSource, UrfTable};
use cpf_core::synthlog::io::{ACTION_LOG, AUCTION_LOG, URF_LOG, UTS_LOG, WORLD_FILE};
use cpf_core::synthlog::{
    gen_action_log, gen_day_logs, gen_world, read_logs, subseed, write_logs, ActionRecord, AuctionRecord, Context as Ctx,
    LogManifest, TrueDelivery, UrfRecord, UtsRecord, World, WorldResponses,
};
use cpf_core::urf::{action_samples, auc, emit_urf_log, evaluate_urf, train_urf, UrfBundle, URF_SCHEMA_VERSION};

use crate::config::PipelineConfig;

// Stream labels under the master seed.
const WORLD_STREAM: u64 = 1;
const LOG_STREAM: u64 = 2;
const ACTION_STREAM: u64 = 3;
const URF_STREAM: u64 = 4;
const DATASET_STREAM: u64 = 5;
const SPLIT_STREAM: u64 = 6;
const MMOE_STREAM: u64 = 7;

pub const TRAIN_FILE: &str = "train.ndjson";
pub const VALID_FILE: &str = "valid.ndjson";
pub const EVAL_FILE: &str = "eval.ndjson";
pub const URF_MODEL_FILE: &str = "urf.json";
pub const MTL_N_FILE: &str = "calibrator.json";
pub const MTL_1_FILE: &str = "calibrator_mtl1.json";

/// Fixed artifact locations below the output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn world(&self) -> PathBuf {
        self.root.join(WORLD_FILE)
    }
    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }
    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }
    pub fn urf_model(&self) -> PathBuf {
        self.models().join(URF_MODEL_FILE)
    }
    pub fn mtl_n(&self) -> PathBuf {
        self.models().join(MTL_N_FILE)
    }
    pub fn mtl_1(&self) -> PathBuf {
        self.models().join(MTL_1_FILE)
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn gen_world_stage(cfg: &PipelineConfig, out: &Layout) -> Result<World> {
    let world = gen_world(&cfg.world, subseed(cfg.seed, WORLD_STREAM))?;
    write_json(&out.world(), &world)?;
    Ok(world)
}

/// Day auction log, UTS relation, action log and manifest.
pub fn gen_logs_stage(cfg: &PipelineConfig, out: &Layout) -> Result<LogManifest> {
    let world: World = read_json(&out.world())?;
    let logs = out.logs();
    std::fs::create_dir_all(&logs).with_context(|| format!("creating {}", logs.display()))?;
    let l = &cfg.logs;
    let (auctions, uts) = gen_day_logs(&world, l.n_requests, l.scale_factor, subseed(cfg.seed, LOG_STREAM))?;
    let actions = gen_action_log(&world, l.n_actions, subseed(cfg.seed, ACTION_STREAM))?;
    write_logs(logs.join(AUCTION_LOG), &auctions)?;
    write_logs(logs.join(UTS_LOG), &uts)?;
    write_logs(logs.join(ACTION_LOG), &actions)?;
    write_json(&logs.join(WORLD_FILE), &world)?;
    let manifest = LogManifest {
        log_date: l.log_date.clone(),
        scale_factor: l.scale_factor,
        n_requests: l.n_requests,
        seed: cfg.seed,
    };
    manifest.save(&logs)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UrfScore {
    pub auc: f64,
    pub logloss: f64,
    /// AUC of the latent true probabilities on the same held-out rows.
    pub bayes_auc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UrfEval {
    pub n_train: usize,
    pub n_test: usize,
    pub ctr: UrfScore,
    pub cvr: UrfScore,
    /// Held-out AUC of a click model fitted to permuted labels.
    pub permutation_auc: f64,
}

/// Fits the click and conversion models on the action log and scores them
/// on the held-out tail.
pub fn train_urf_stage(cfg: &PipelineConfig, out: &Layout) -> Result<UrfEval> {
    let logs = out.logs();
    let world: World = read_json(&logs.join(WORLD_FILE))?;
    let actions: Vec<ActionRecord> = read_logs(logs.join(ACTION_LOG))?;
    let n_test = (actions.len() as f64 * cfg.logs.urf_holdout).round() as usize;
    ensure!(n_test > 0 && n_test < actions.len(), "action log too small for a held-out split");
    let (train_log, test_log) = actions.split_at(actions.len() - n_test);
    let ctx = |a: &ActionRecord| Ctx {
        user_id: a.user_id,
        advertiser_id: a.advertiser_id,
        hour: a.hour,
        adzone_id: a.adzone_id,
    };

    let mut fitted = Vec::new();
    let mut scores = Vec::new();
    for (k, conversion) in [false, true].into_iter().enumerate() {
        let train = action_samples::<f64>(train_log, &world, conversion)?;
        let test = action_samples::<f64>(test_log, &world, conversion)?;
        let hyper = cpf_core::urf::UrfHyper { seed: subseed(cfg.seed, URF_STREAM + 100 * k as u64), ..cfg.urf.clone() };
        let (model, trace) = train_urf(&train, &hyper)?;
        tracing::info!(conversion, loss = ?trace.epoch_loss.last(), "urf model trained");
        let labels: Vec<bool> = test.iter().map(|s| s.label).collect();
        let pred: Vec<f64> = test.iter().map(|s| model.predict_raw(&s.fields, &s.dense)).collect::<Result<_, _>>()?;
        let truth: Vec<f64> = test_log
            .iter()
            .map(|a| {
                let c = ctx(a);
                if conversion { world.true_pcvr(&c) } else { world.true_pctr(&c) }
                    .context("action log references an unknown user or advertiser")
            })
            .collect::<Result<_>>()?;
        let (auc_v, logloss) = evaluate_urf(&pred, &labels)?;
        scores.push(UrfScore { auc: auc_v, logloss, bayes_auc: auc(&truth, &labels)? });
        fitted.push(model);
        if !conversion {
            let mut perm: Vec<bool> = train.iter().map(|s| s.label).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(subseed(cfg.seed, URF_STREAM + 1000)));
            let shuffled: Vec<_> = train.iter().cloned().zip(perm).map(|(mut s, l)| {
                s.label = l;
                s
            }).collect();
            let (null_model, _) = train_urf(&shuffled, &hyper)?;
            let null_pred: Vec<f64> =
                test.iter().map(|s| null_model.predict_raw(&s.fields, &s.dense)).collect::<Result<_, _>>()?;
            scores.push(UrfScore { auc: auc(&null_pred, &labels)?, logloss: f64::NAN, bayes_auc: f64::NAN });
        }
    }
    let cvr = fitted.pop().context("missing conversion model")?;
    let ctr = fitted.pop().context("missing click model")?;
    let bundle = UrfBundle {
        schema_version: URF_SCHEMA_VERSION,
        version: format!("urf-{}-{}", cfg.logs.log_date, cfg.seed),
        ctr,
        cvr,
    };
    ensure_parent(&out.urf_model())?;
    bundle.save(out.urf_model())?;
    let eval = UrfEval {
        n_train: train_log.len(),
        n_test,
        ctr: scores[0],
        cvr: scores[2],
        permutation_auc: scores[1].auc,
    };
    write_json(&out.report().join("urf_eval.json"), &eval)?;
    Ok(eval)
}

/// Writes `urf.ndjson` for every sampled request and advertiser.
pub fn emit_urf_stage(out: &Layout) -> Result<usize> {
    let logs = out.logs();
    let world: World = read_json(&logs.join(WORLD_FILE))?;
    let auctions: Vec<AuctionRecord> = read_logs(logs.join(AUCTION_LOG))?;
    let models = UrfBundle::load(out.urf_model())?;
    let advertisers: Vec<u32> = world.advertisers.iter().map(|a| a.advertiser_id).collect();
    let urf = emit_urf_log(&models, &world, &auctions, &advertisers)?;
    write_logs(logs.join(URF_LOG), &urf)?;
    Ok(urf.len())
}

/// Sampled-bucket replay index over a log directory. The scale factor comes
/// from `scale_override` or the manifest.
pub fn load_replay_index(logs: &Path, scale_override: Option<f64>) -> Result<(LogIndex<f64>, Option<LogManifest>)> {
    let manifest = LogManifest::load(logs)?;
    let scale = match (scale_override, &manifest) {
        (Some(s), _) => s,
        (None, Some(m)) => m.scale_factor,
        (None, None) => bail!("{} has no manifest.json; pass --scale-factor", logs.display()),
    };
    let auctions: Vec<AuctionRecord> = read_logs(logs.join(AUCTION_LOG))?;
    let uts: Vec<UtsRecord> = read_logs(logs.join(UTS_LOG))?;
    let urf: Vec<UrfRecord> = read_logs(logs.join(URF_LOG))?;
    let index = LogIndex::build(auctions, &uts, true, scale)?.with_urf(&urf)?;
    Ok((index, manifest))
}

pub fn replay_criteria(logs: &Path, criteria: &CampaignCriteria<f64>, scale: Option<f64>) -> Result<ReplayResult<f64>> {
    let (index, _) = load_replay_index(logs, scale)?;
    Ok(cpf_core::replay::replay(criteria, &index)?)
}

/// Samples campaigns, replays them over the sampled bucket, simulates their
/// true delivery over the full log and splits them.
pub fn build_dataset_stage(cfg: &PipelineConfig, out: &Layout) -> Result<Splits<f64>> {
    let logs = out.logs();
    let world: World = read_json(&logs.join(WORLD_FILE))?;
    let (replay_index, _) = load_replay_index(&logs, None)?;
    let auctions: Vec<AuctionRecord> = read_logs(logs.join(AUCTION_LOG))?;
    let uts: Vec<UtsRecord> = read_logs(logs.join(UTS_LOG))?;
    let full = LogIndex::build(auctions, &uts, false, 1.0)?;
    // true probabilities looked up once per (auction, advertiser)
    let advertisers: Vec<u32> = world.advertisers.iter().map(|a| a.advertiser_id).collect();
    let latent = WorldResponses { world: &world };
    let responses = UrfTable::tabulate(&full, &advertisers, |r, a| {
        latent.responses(0, r, a).unwrap_or((f64::NAN, f64::NAN))
    });
    let truth = TrueDelivery::new(&world, &full, &responses, cfg.strategy.clone())?;
    let d = &cfg.dataset;
    let samples = build_dataset(
        &world,
        &replay_index,
        &truth,
        d.n_campaigns,
        &cfg.sampler,
        subseed(cfg.seed, DATASET_STREAM),
    )?;
    let splits = split_dataset(samples, d.n_valid, d.n_eval, subseed(cfg.seed, SPLIT_STREAM))?;
    let dir = out.dataset();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_logs(dir.join(TRAIN_FILE), &splits.train)?;
    write_logs(dir.join(VALID_FILE), &splits.valid)?;
    write_logs(dir.join(EVAL_FILE), &splits.eval)?;
    Ok(splits)
}

pub fn load_split(dir: &Path, file: &str) -> Result<Vec<CalibrationSample<f64>>> {
    Ok(read_logs(dir.join(file))?)
}

pub fn load_splits(dir: &Path) -> Result<Splits<f64>> {
    Ok(Splits {
        train: load_split(dir, TRAIN_FILE)?,
        valid: load_split(dir, VALID_FILE)?,
        eval: load_split(dir, EVAL_FILE)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratorReports {
    pub mtl_n: Vec<TrainReport>,
    pub mtl_1: Vec<TrainReport>,
}

/// Trains MTL_N and the MTL_1 ablation on the same splits and seed.
pub fn train_calibrator_stage(cfg: &PipelineConfig, out: &Layout) -> Result<CalibratorReports> {
    let splits = load_splits(&out.dataset())?;
    let hyper = cpf_core::calibrate::MmoeHyper { seed: subseed(cfg.seed, MMOE_STREAM) ^ cfg.mmoe.seed, ..cfg.mmoe.clone() };
    let (multi, mtl_n) = train_mtl_n(&splits.train, &splits.valid, &hyper)?;
    let (single, mtl_1) = train_mtl_1(&splits.train, &splits.valid, &hyper)?;
    ensure_parent(&out.mtl_n())?;
    let tag = format!("{}-{}", cfg.logs.log_date, cfg.seed);
    CalibratorFile::new(format!("mtl_n-{tag}"), multi).save(&out.mtl_n())?;
    CalibratorFile::new(format!("mtl_1-{tag}"), single).save(&out.mtl_1())?;
    let reports = CalibratorReports { mtl_n, mtl_1 };
    write_json(&out.report().join("training.json"), &reports)?;
    Ok(reports)
}

fn load_calibrator(path: &Path) -> Result<Calibrator<f64>> {
    Ok(CalibratorFile::<f64>::load(path)?.calibrator)
}

/// Benchmark report plus label correlations. Models that are absent are
/// left out of the comparison.
pub fn evaluate_stage(out: &Layout) -> Result<EvalReport> {
    let dir = out.dataset();
    let eval = load_split(&dir, EVAL_FILE)?;
    let mut seen = Vec::new();
    for f in [TRAIN_FILE, VALID_FILE] {
        if dir.join(f).exists() {
            seen.extend(load_split(&dir, f)?);
        }
    }
    let mut models = Vec::new();
    for (method, path) in [(Method::Mtl1, out.mtl_1()), (Method::MtlN, out.mtl_n())] {
        if path.exists() {
            models.push((method, load_calibrator(&path)?));
        }
    }
    let refs: Vec<(Method, &Calibrator<f64>)> = models.iter().map(|(m, c)| (*m, c)).collect();
    let report = benchmark(&eval, &seen, &refs)?;
    let rdir = out.report();
    write_text(&rdir.join("report.csv"), &report.to_csv())?;
    write_text(&rdir.join("report.md"), &report.to_markdown())?;
    seen.extend(eval);
    if seen.len() >= 2 {
        write_text(&rdir.join("pearson.csv"), &pearson_csv(&label_correlations(&seen)?))?;
    }
    Ok(report)
}

/// pctr disturbance sweep of replay and MTL_N on the evaluation split.
pub fn disturb_stage(cfg: &PipelineConfig, out: &Layout) -> Result<()> {
    ensure!(!cfg.disturbances.is_empty(), "no disturbance factors configured");
    let eval = load_split(&out.dataset(), EVAL_FILE)?;
    let (index, _) = load_replay_index(&out.logs(), None)?;
    let calibrator = load_calibrator(&out.mtl_n())?;
    let rows = disturbance_sweep(&eval, &index, &calibrator, &cfg.disturbances)?;
    write_text(&out.report().join("disturbance.csv"), &sweep_csv(&rows))
}

/// Every stage in order.
pub fn run_all(cfg: &PipelineConfig, out: &Layout) -> Result<EvalReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&out.root).with_context(|| format!("creating {}", out.root.display()))?;
    write_json(&out.root.join("config.json"), cfg)?;
    let steps: [(&str, &dyn Fn() -> Result<()>); 6] = [
        ("gen-world", &|| gen_world_stage(cfg, out).map(drop)),
        ("gen-logs", &|| gen_logs_stage(cfg, out).map(drop)),
        ("train-urf", &|| train_urf_stage(cfg, out).map(drop)),
        ("emit-urf", &|| emit_urf_stage(out).map(drop)),
        ("build-dataset", &|| build_dataset_stage(cfg, out).map(drop)),
        ("train-calibrator", &|| train_calibrator_stage(cfg, out).map(drop)),
    ];
    for (name, step) in steps {
        let t = std::time::Instant::now();
        step().with_context(|| format!("stage {name}"))?;
        tracing::info!(stage = name, secs = t.elapsed().as_secs_f64(), "done");
    }
    let report = evaluate_stage(out).context("stage evaluate")?;
    disturb_stage(cfg, out).context("stage disturb")?;
    Ok(report)
}
