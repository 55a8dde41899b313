use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ecvit_core::certify::{evaluate, patch_key, vote_from_logits, Certifier, CertifyConfig, Evaluation};
use ecvit_core::data::{load_splits, LabeledImage};
use ecvit_core::oracle::{
    attention_equivalence, empirical_patch_attack, geometry_check, soundness_check, CheckReport, VoteSets,
};
use ecvit_core::psim::{finetune_band, run_stage, train_clean, EpochMetrics, Supervision, TargetStore};
use ecvit_core::smoothing::BandSpec;
use ecvit_core::tokenizer::{fit_codebook, TeacherModel};
use ecvit_core::vit::{
    batched_certify_forward, certification_flops, certify_logits, per_position_forward, plan_windows,
    read_checkpoint, write_checkpoint, AttentionMode, Engine, ModelParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, Phase};

fn unix_time() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn meta(command: &str) -> serde_json::Value {
    json!({ "meta": { "command": command, "unix_time": unix_time() } })
}

struct JsonLines {
    out: BufWriter<File>,
}

impl JsonLines {
    fn create(path: &Path) -> Result<Self, CliError> {
        Ok(Self { out: BufWriter::new(File::create(path).phase(&format!("create {}", path.display()))?) })
    }

    fn line<T: Serialize>(&mut self, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string(value).map_err(|e| CliError::Io(e.to_string()))?;
        writeln!(self.out, "{text}").phase("write results")
    }

    fn finish(mut self) -> Result<(), CliError> {
        self.out.flush().phase("write results")
    }
}

pub fn load_data(cfg: &RunConfig) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>), CliError> {
    load_splits(&cfg.dataset_spec(), cfg.data.path.as_deref()).map_err(|e| match e {
        ecvit_core::Error::Contract(msg) => CliError::Usage(msg),
        other => CliError::Core { phase: "data".into(), source: other },
    })
}

fn save_params(params: &ModelParams<f64>, path: &Path) -> Result<(), CliError> {
    let file = File::create(path).phase(&format!("create {}", path.display()))?;
    write_checkpoint(&params.cast::<f32>(), BufWriter::new(file)).phase("write checkpoint")
}

/// Loads an `ECVT` checkpoint and checks it against the configured model.
pub fn load_params(cfg: &RunConfig, path: &Path) -> Result<ModelParams<f32>, CliError> {
    let file = File::open(path).phase(&format!("open checkpoint {}", path.display()))?;
    let tensors = read_checkpoint(std::io::BufReader::new(file)).phase("read checkpoint")?;
    ModelParams::from_tensors(&cfg.model_config(), tensors).phase("load checkpoint")
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoints: Vec<PathBuf>,
    pub metrics: Vec<EpochMetrics>,
}

/// Fits the tokenizer (or pre-trains the teacher), runs every stage and the
/// fine-tune phase, and writes one checkpoint per phase.
///
/// With `baseline` the curriculum is replaced by a single
/// classification-only stage on `b`-wide bands with the same epoch budget.
pub fn cmd_train(cfg: &RunConfig, out: &Path, baseline: bool) -> Result<TrainOutcome, CliError> {
    fs::create_dir_all(out).phase(&format!("create {}", out.display()))?;
    fs::write(out.join("effective_config.toml"), cfg.to_toml()).phase("write effective config")?;
    let mut plan = cfg.train_plan()?;
    if baseline {
        plan = plan.classification_baseline(cfg.model_side());
    }
    let (train, _) = load_data(cfg)?;
    let mut metrics = Vec::new();
    let targets = if plan.stages.iter().any(|s| s.lambda > 0.0) {
        Some(match cfg.train.supervision {
            Supervision::Vae => {
                let cb = fit_codebook(&train, cfg.model.patch_size, cfg.train.codebook_size, cfg.train.seed)
                    .phase("tokenizer")?;
                let file = File::create(out.join("codebook.eccb")).phase("create codebook")?;
                cb.write(BufWriter::new(file)).phase("write codebook")?;
                TargetStore::from_codebook(&cb, &train).phase("tokenizer")?
            }
            Supervision::Distill => {
                let mut teacher = ModelParams::init(&cfg.teacher_config(), cfg.train.seed ^ 0x7EAC).phase("teacher")?;
                train_clean(&mut teacher, &train, cfg.train.teacher_epochs, &plan, &mut metrics).phase("teacher")?;
                save_params(&teacher, &out.join("teacher.ecvt"))?;
                TargetStore::from_teacher(&TeacherModel::new(teacher), &train).phase("teacher")?
            }
        })
    } else {
        None
    };
    let mut params = ModelParams::init(&cfg.model_config(), cfg.train.seed).phase("init")?;
    let mut checkpoints = Vec::new();
    for stage in &plan.stages {
        let name = format!("stage {}", stage.index);
        let t = targets.as_ref().filter(|_| stage.lambda > 0.0);
        run_stage(&mut params, stage, &train, t, &plan, &mut metrics).phase(&name)?;
        let path = out.join(format!("stage{}.ecvt", stage.index));
        save_params(&params, &path)?;
        checkpoints.push(path);
    }
    finetune_band(&mut params, &train, &plan, &mut metrics).phase("finetune")?;
    let path = out.join("final.ecvt");
    save_params(&params, &path)?;
    checkpoints.push(path);
    write_metrics(&out.join("metrics.jsonl"), "train", &metrics)?;
    Ok(TrainOutcome { checkpoints, metrics })
}

fn write_metrics(path: &Path, command: &str, metrics: &[EpochMetrics]) -> Result<(), CliError> {
    let mut lines = JsonLines::create(path)?;
    lines.line(&meta(command))?;
    for m in metrics {
        lines.line(m)?;
    }
    lines.finish()
}

/// Band-unit fine-tuning of an existing checkpoint.
pub fn cmd_finetune(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out).phase(&format!("create {}", out.display()))?;
    fs::write(out.join("effective_config.toml"), cfg.to_toml()).phase("write effective config")?;
    let plan = cfg.train_plan()?;
    let (train, _) = load_data(cfg)?;
    let mut params = load_params(cfg, checkpoint)?.cast::<f64>();
    let mut metrics = Vec::new();
    finetune_band(&mut params, &train, &plan, &mut metrics).phase("finetune")?;
    let path = out.join("final.ecvt");
    save_params(&params, &path)?;
    write_metrics(&out.join("metrics.jsonl"), "finetune", &metrics)?;
    Ok(path)
}

pub fn summary_table(cfg: &CertifyConfig, eval: &Evaluation) -> String {
    let s = &eval.summary;
    let mut head = format!("{:>5} {:>6} {:>8}", "band", "theta", "clean");
    let mut row = format!("{:>5} {:>6.2} {:>8.2}", cfg.band_width, cfg.theta, 100.0 * s.clean_accuracy);
    for (k, v) in &s.certified_accuracy {
        head.push_str(&format!(" {k:>8}"));
        row.push_str(&format!(" {:>8.2}", 100.0 * v));
    }
    head.push_str(&format!(" {:>8} {:>8} {:>10}", "abstain", "margin", "s/image"));
    row.push_str(&format!(
        " {:>8.2} {:>8.2} {:>10.4}",
        100.0 * s.abstain_rate,
        s.mean_margin,
        eval.seconds_per_image
    ));
    format!("{head}\n{row}")
}

/// Certifies the test split and writes one JSON line per image plus a
/// summary line.
pub fn cmd_certify(cfg: &RunConfig, checkpoint: &Path, results: &Path) -> Result<Evaluation, CliError> {
    let params = load_params(cfg, checkpoint)?;
    let (_, test) = load_data(cfg)?;
    let ccfg = cfg.certify_config();
    ccfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(dir) = results.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).phase(&format!("create {}", dir.display()))?;
    }
    let eval = evaluate(&params, &test, &ccfg).phase("certify")?;
    for &m in &ccfg.patch_sizes {
        if m * ccfg.scale + ccfg.model_band_width() - 1 > cfg.model_side() {
            eprintln!(
                "warning: patch {} with band {} exceeds the image width; nothing is certifiable",
                patch_key(m),
                ccfg.band_width
            );
        }
    }
    let mut lines = JsonLines::create(results)?;
    for r in &eval.records {
        lines.line(r)?;
    }
    lines.line(&json!({
        "summary": eval.summary,
        "meta": { "unix_time": unix_time(), "seconds_per_image": eval.seconds_per_image },
    }))?;
    lines.finish()?;
    Ok(eval)
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub image_side: usize,
    pub patch_size: usize,
    pub band: usize,
    pub global_attention_flops: u64,
    pub band_unit_attention_flops: u64,
    pub attention_flop_ratio: f64,
    pub predicted_ratio: f64,
    pub global_total_flops: u64,
    pub band_unit_total_flops: u64,
    pub batched_forwards: usize,
    pub naive_forwards: usize,
    pub images_timed: usize,
    pub global_seconds: f64,
    pub band_unit_seconds: f64,
    pub speedup: f64,
}

/// Analytic FLOPs and measured certification time of per-position global
/// forwards against batched band-unit windows.
pub fn bench(params: &ModelParams<f32>, images: &[LabeledImage], band: usize, wrap: bool) -> Result<BenchReport, CliError> {
    let mcfg = &params.config;
    let w = mcfg.image_side;
    let p = mcfg.patch_size;
    let g = certification_flops(mcfg, AttentionMode::Global, band);
    let bu = certification_flops(mcfg, AttentionMode::BandUnit, band);
    let predicted = (((band.div_ceil(p) + 1) * p) as f64 / w as f64).powi(2);
    let plan = plan_windows(mcfg, band, wrap).phase("bench")?;
    let bu_params = params.with_attention_mode(AttentionMode::BandUnit);

    let start = Instant::now();
    for item in images {
        per_position_forward(&item.image, params, band, wrap, Engine::Global).phase("bench")?;
    }
    let global_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    for item in images {
        batched_certify_forward(&item.image, &bu_params, &plan).phase("bench")?;
    }
    let band_unit_seconds = start.elapsed().as_secs_f64();
    Ok(BenchReport {
        image_side: w,
        patch_size: p,
        band,
        global_attention_flops: g.attention,
        band_unit_attention_flops: bu.attention,
        attention_flop_ratio: bu.attention as f64 / g.attention as f64,
        predicted_ratio: predicted,
        global_total_flops: g.total(),
        band_unit_total_flops: bu.total(),
        batched_forwards: plan.num_forwards(),
        naive_forwards: w,
        images_timed: images.len(),
        global_seconds,
        band_unit_seconds,
        speedup: global_seconds / band_unit_seconds.max(1e-12),
    })
}

fn params_or_fresh(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<ModelParams<f32>, CliError> {
    match checkpoint {
        Some(p) => load_params(cfg, p),
        None => ModelParams::init(&cfg.model_config(), cfg.train.seed).phase("init"),
    }
}

pub fn cmd_bench(cfg: &RunConfig, checkpoint: Option<&Path>, images: usize) -> Result<BenchReport, CliError> {
    let params = params_or_fresh(cfg, checkpoint)?;
    let (_, test) = load_data(cfg)?;
    let n = images.min(test.len());
    bench(&params, &test[..n], cfg.model_band(), cfg.certify.band_wrap)
}

#[derive(Clone, Debug)]
pub struct OracleOptions {
    pub tables: usize,
    pub equivalence_cases: usize,
    pub attack_trials: usize,
    /// Cap on attacked certified images (`None` = all).
    pub attack_images: Option<usize>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { tables: 1000, equivalence_cases: 100, attack_trials: 200, attack_images: None }
    }
}

fn report(check: &str, passed: bool, detail: String) -> CheckReport {
    CheckReport { check: check.to_string(), passed, detail }
}

/// Restriction identity in f64 and f32 over seeded (image, band) cases, and
/// bit-identity of the batched plan.
pub fn equivalence_report(params: &ModelParams<f32>, images: &[LabeledImage], cases: usize, seed: u64) -> Result<CheckReport, CliError> {
    let p64 = params.cast::<f64>().with_attention_mode(AttentionMode::BandUnit);
    let p32 = params.with_attention_mode(AttentionMode::BandUnit);
    let w = params.config.image_side;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst64, mut worst32) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let img = &images[rng.gen_range(0..images.len())].image;
        let band = BandSpec::new(rng.gen_range(0..w), rng.gen_range(1..=w));
        worst64 = worst64.max(attention_equivalence(&p64, img, &band).phase("oracle")?);
        worst32 = worst32.max(attention_equivalence(&p32, img, &band).phase("oracle")?);
    }
    let mut batched_ok = true;
    for item in images.iter().take(8) {
        for b in [1, 2, 4, w / 2, w] {
            let batched = certify_logits(&item.image, &p32, b, true, Engine::BandUnit).phase("oracle")?;
            let single = per_position_forward(&item.image, &p32, b, true, Engine::BandUnit).phase("oracle")?;
            batched_ok &= batched == single;
        }
    }
    let passed = worst64 < 1e-10 && worst32 < 1e-5 && batched_ok;
    Ok(report(
        "attention_equivalence",
        passed,
        format!("{cases} cases: max diff f64 {worst64:.3e}, f32 {worst32:.3e}; batched plan bit-identical: {batched_ok}"),
    ))
}

/// Random patch contents against every certified test image.
pub fn attack_report(
    params: &ModelParams<f32>,
    images: &[LabeledImage],
    ccfg: &CertifyConfig,
    trials: usize,
    cap: Option<usize>,
    seed: u64,
) -> Result<CheckReport, CliError> {
    let certifier = Certifier::default();
    let mut attacked = 0;
    let mut flips = Vec::new();
    let mut evaluations = 0;
    for (id, item) in images.iter().enumerate() {
        let logits = certify_logits(&item.image, params, ccfg.model_band_width(), ccfg.wrap, ccfg.engine).phase("oracle")?;
        let votes = vote_from_logits(&logits, ccfg).phase("oracle")?;
        for &m in &ccfg.patch_sizes {
            if cap.is_some_and(|c| attacked >= c) {
                break;
            }
            if !certifier.certify(&votes, m * ccfg.scale, ccfg.model_band_width()).certified {
                continue;
            }
            attacked += 1;
            let r = empirical_patch_attack(params, &item.image, ccfg, m, trials, seed ^ id as u64).phase("oracle")?;
            evaluations += r.evaluations;
            if r.attack_found {
                flips.push(format!("image {id} m={m}"));
            }
        }
    }
    Ok(report(
        "empirical_patch_attack",
        flips.is_empty(),
        format!(
            "{attacked} certified (image, m) pairs, {evaluations} patched votings, flips: {}",
            if flips.is_empty() { "none".to_string() } else { flips.join(", ") }
        ),
    ))
}

/// Runs all oracle checks; any failure becomes an oracle error after the
/// report is written.
pub fn cmd_oracle(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    opts: &OracleOptions,
    sink: &mut dyn FnMut(&CheckReport),
) -> Result<Vec<CheckReport>, CliError> {
    let mut reports = Vec::new();
    let mut emit = |r: CheckReport, reports: &mut Vec<CheckReport>| {
        sink(&r);
        reports.push(r);
    };

    let start = Instant::now();
    let geom = geometry_check(64);
    emit(
        report(
            "geometry",
            geom.is_none(),
            match geom {
                None => format!("all (w, m, b) with w <= 64 match m + b - 1 ({:.2}s)", start.elapsed().as_secs_f64()),
                Some((w, m, b, got)) => format!("w={w} m={m} b={b}: brute force {got}, formula {}", m + b - 1),
            },
        ),
        &mut reports,
    );

    let tables = VoteSets::seeded(cfg.train.seed, opts.tables, 32, 10);
    let s = soundness_check(&Certifier::default(), &tables, 16);
    emit(
        report(
            "certificate_soundness",
            s.passed(),
            format!(
                "{} tables, {} verdicts, {} certified, {} violations, {} sharpness failures, {} adversary mismatches",
                s.tables, s.verdicts, s.certified, s.violations, s.sharpness_failures, s.adversary_mismatches
            ),
        ),
        &mut reports,
    );

    let params = params_or_fresh(cfg, checkpoint)?;
    let (_, test) = load_data(cfg)?;
    emit(equivalence_report(&params, &test, opts.equivalence_cases, cfg.train.seed)?, &mut reports);
    let ccfg = cfg.certify_config();
    emit(attack_report(&params, &test, &ccfg, opts.attack_trials, opts.attack_images, cfg.train.seed)?, &mut reports);

    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.check.as_str()).collect();
    if failed.is_empty() {
        Ok(reports)
    } else {
        Err(CliError::Oracle(failed.join(", ")))
    }
}
