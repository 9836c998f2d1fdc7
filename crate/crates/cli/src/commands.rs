use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use locodec::config::{ExperimentKind, RunConfig};
use locodec::decoders::{load_state, save_state};
use locodec::dsp::Band;
use locodec::protocols::{
    generate_synthetic_fleet, results_csv, run_band_analysis, run_offset_analysis, run_region_analysis,
    run_single_sessions, run_transfer_matrix, score_session, DataAudit, EvalResult, ExperimentPlan, RegionMatrix,
    Strategy, ZeroShotNormalizer,
};
use locodec::session::{apply_inclusion_gate, ingest_session, write_session, GateOutcome, Normalizer, Session, SessionFormat};
use locodec::util::write_atomic;
use locodec::{Error, Result};

use crate::output::{OutDir, Provenance};
use crate::{Common, PlanFlags};

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn flag<T: std::str::FromStr>(name: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| Error::Config(format!("--{name}: {e}")))
}

fn apply_plan_flags(cfg: &mut RunConfig, f: &PlanFlags) -> Result<()> {
    if let Some(s) = &f.strategy {
        cfg.experiment.strategy = flag::<Strategy>("strategy", s)?;
    }
    if let Some(b) = &f.band {
        cfg.experiment.band = flag::<Band>("band", b)?;
    }
    if let Some(r) = &f.regions {
        cfg.experiment.regions = r.clone();
    }
    if let Some(o) = f.offset_ms {
        cfg.experiment.offset_ms = o;
    }
    if let Some(t) = f.iqr_threshold {
        cfg.data.iqr_threshold = Some(t);
    }
    cfg.validate()
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let n = match jobs {
        Some(0) => return Err(Error::Config("--jobs must be at least 1".into())),
        Some(n) => n,
        None => num_cpus::get_physical(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?;
    pool.install(f)
}

fn format_of(path: &Path, requested: &str) -> Result<SessionFormat> {
    match requested {
        "auto" => SessionFormat::from_path(path).ok_or_else(|| {
            Error::Format(format!("{}: cannot tell the format from the extension; pass --format", path.display()))
        }),
        "csv" => Ok(SessionFormat::CanonicalCsv),
        "bin" | "lcdc" => Ok(SessionFormat::CanonicalBin),
        other => Err(Error::Config(format!("--format must be csv, bin or auto, got {other:?}"))),
    }
}

pub fn read_session(path: &Path) -> Result<Session> {
    ingest_session(path, format_of(path, "auto")?)
}

fn load_sessions(cfg: &RunConfig, explicit: &[PathBuf]) -> Result<Vec<Session>> {
    if !explicit.is_empty() {
        return explicit.iter().map(|p| read_session(p)).collect();
    }
    if cfg.data.synthetic {
        return generate_synthetic_fleet(&cfg.synth).map_err(|e| Error::Config(format!("synth: {e}")));
    }
    if cfg.data.sessions.is_empty() {
        return Err(Error::Config("no sessions: set data.sessions or data.synthetic".into()));
    }
    cfg.data.sessions.iter().map(|p| read_session(p)).collect()
}

fn gate_report(out: &GateOutcome) -> String {
    let mut s = String::from("session_id,rat_id,iqr,threshold,verdict\n");
    let rat = |id: &str| {
        out.included
            .iter()
            .chain(&out.excluded)
            .chain(&out.flagged)
            .find(|x| x.id() == id)
            .map(|x| x.rat_id().to_string())
            .unwrap_or_default()
    };
    for (id, iqr) in &out.iqrs {
        let verdict = if out.included.iter().any(|x| x.id() == id) { "included" } else { "excluded" };
        let _ = writeln!(s, "{id},{},{iqr},{},{verdict}", rat(id), out.threshold);
    }
    for f in &out.flagged {
        let _ = writeln!(s, "{},{},,{},flagged", f.id(), f.rat_id(), out.threshold);
    }
    s
}

fn session_rel(s: &Session, fmt: SessionFormat) -> String {
    format!("sessions/{}.{}", s.id(), fmt.extension())
}

fn write_sessions(dir: &mut OutDir, sessions: &[Session], fmt: SessionFormat) -> Result<()> {
    for s in sessions {
        let rel = session_rel(s, fmt);
        write_session(s, &dir.path(&rel), fmt)?;
        dir.record(&rel)?;
        if fmt == SessionFormat::CanonicalCsv {
            dir.record(&format!("sessions/{}.manifest", s.id()))?;
        }
    }
    Ok(())
}

pub fn ingest(paths: &[PathBuf], format: &str, iqr: Option<f64>, common: &Common) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(t) = iqr {
        cfg.data.iqr_threshold = Some(t);
    }
    cfg.validate()?;
    let mut dir = OutDir::new(&cfg.output.dir, provenance(&cfg));
    let mut sessions = Vec::new();
    let mut failed = Vec::new();
    for p in paths {
        match format_of(p, format).and_then(|f| ingest_session(p, f)) {
            Ok(s) => sessions.push(s),
            Err(e) => {
                log::error!("{}: {e}", p.display());
                failed.push(format!("{}: {e}", p.display()));
            }
        }
    }
    let fmt = cfg.session_format()?;
    write_sessions(&mut dir, &sessions, fmt)?;
    if !sessions.is_empty() {
        let outcome = apply_inclusion_gate(sessions, cfg.data.gate())?;
        dir.write_csv("gate_report.csv", &gate_report(&outcome))?;
    }
    finish(dir, &cfg)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Format(format!("{} of {} inputs failed: {}", failed.len(), paths.len(), failed.join("; "))))
    }
}

pub fn synth(common: &Common) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = common.seed {
        cfg.synth.seed = s;
    }
    let sessions = generate_synthetic_fleet(&cfg.synth).map_err(|e| Error::Config(format!("synth: {e}")))?;
    let mut dir = OutDir::new(&cfg.output.dir, provenance(&cfg));
    write_sessions(&mut dir, &sessions, cfg.session_format()?)?;
    finish(dir, &cfg)
}

fn provenance(cfg: &RunConfig) -> Provenance {
    Provenance {
        config_hash: cfg.hash(),
        seed: cfg.seed,
    }
}

fn finish(mut dir: OutDir, cfg: &RunConfig) -> Result<()> {
    dir.write("config.resolved.toml", cfg.resolved().as_bytes())?;
    dir.finish()
}

/// Stored next to each model: what `eval` needs to rebuild the test inputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub config_hash: String,
    pub seed: u64,
    pub session_id: String,
    pub strategy: Strategy,
    pub regions: String,
    pub band: Band,
    pub offset_ms: i64,
    pub normalizer: Normalizer,
}

fn sidecar_path(model: &Path) -> PathBuf {
    model.with_extension("json")
}

/// Adds provenance to the summary (last) line of a training curve.
fn tag_jsonl(jsonl: &str, prov: &Provenance) -> String {
    let mut lines: Vec<String> = jsonl.lines().map(str::to_string).collect();
    if let Some(last) = lines.last_mut() {
        if let Ok(serde_json::Value::Object(mut m)) = serde_json::from_str::<serde_json::Value>(last) {
            m.insert("config_hash".into(), prov.config_hash.clone().into());
            m.insert("seed".into(), prov.seed.into());
            *last = serde_json::Value::Object(m).to_string();
        }
    }
    lines.join("\n") + "\n"
}

fn audit_csv(audits: &[&DataAudit]) -> String {
    let mut s = String::from("session_id,stage,samples_used,test_samples,overlap\n");
    for a in audits {
        for (stage, set) in &a.used {
            let _ = writeln!(
                s,
                "{},{stage},{},{},{}",
                a.session_id,
                set.count(),
                a.test.count(),
                set.intersection_count(&a.test)
            );
        }
    }
    s
}

pub fn train(explicit: &[PathBuf], common: &Common, flags: &PlanFlags) -> Result<()> {
    let mut cfg = load_config(common)?;
    apply_plan_flags(&mut cfg, flags)?;
    let plan = cfg.plan()?;
    if !plan.strategy.is_single() {
        return Err(Error::Config(format!("train needs single_80 or single_10, got {}", plan.strategy)));
    }
    let sessions = load_sessions(&cfg, explicit)?;
    let runs = with_pool(common.jobs, || run_single_sessions(&sessions, &plan))?;
    let prov = provenance(&cfg);
    let mut dir = OutDir::new(&cfg.output.dir, prov.clone());
    for run in &runs {
        let id = &run.result.session_id;
        let rel = format!("models/{id}.lcmd");
        save_state(&run.decoder, &dir.path(&rel))?;
        dir.record(&rel)?;
        let side = ModelSidecar {
            config_hash: prov.config_hash.clone(),
            seed: prov.seed,
            session_id: id.clone(),
            strategy: plan.strategy,
            regions: plan.regions.label(),
            band: plan.band,
            offset_ms: plan.offset_ms,
            normalizer: run.normalizer.clone(),
        };
        let text = serde_json::to_string_pretty(&side).expect("json") + "\n";
        dir.write(&format!("models/{id}.json"), text.as_bytes())?;
        dir.write(&format!("reports/{id}.train.jsonl"), tag_jsonl(&run.report.to_jsonl(), &prov).as_bytes())?;
    }
    let rows: Vec<EvalResult> = runs.iter().map(|r| r.result.clone()).collect();
    dir.write_csv("results.csv", &results_csv(&rows))?;
    let audits: Vec<&DataAudit> = runs.iter().map(|r| &r.audit).collect();
    dir.write_csv("audit.csv", &audit_csv(&audits))?;
    finish(dir, &cfg)
}

pub fn eval(model: &Path, session: &Path, offset_ms: Option<i64>, out: Option<&Path>) -> Result<()> {
    let decoder = load_state(model)?;
    let side_path = sidecar_path(model);
    let text = std::fs::read_to_string(&side_path).map_err(|e| Error::Io {
        path: side_path.clone(),
        source: e,
    })?;
    let side: ModelSidecar =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", side_path.display())))?;
    let s = read_session(session)?;
    let plan = ExperimentPlan {
        regions: flag("regions", &side.regions)?,
        band: side.band,
        offset_ms: offset_ms.unwrap_or(side.offset_ms),
        master_seed: side.seed,
        zero_shot_normalizer: ZeroShotNormalizer::Source,
        ..ExperimentPlan::new(side.strategy, decoder.spec.clone(), Default::default())
    };
    let scored = score_session(&s, &plan, &decoder, &side.normalizer)?;
    let prov = Provenance {
        config_hash: side.config_hash,
        seed: side.seed,
    };
    let text = prov.csv_line() + &results_csv(&[scored.result]);
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn region_matrix_csv(m: &RegionMatrix) -> String {
    let mut s = String::from("region_set,median_r,median_r2,n_sessions,skipped\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in &m.cells {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            c.regions.label(),
            opt(c.median_r),
            opt(c.median_r2),
            c.results.len(),
            c.skipped.join(";")
        );
    }
    s
}

pub fn experiment(common: &Common, flags: &PlanFlags) -> Result<()> {
    let mut cfg = load_config(common)?;
    apply_plan_flags(&mut cfg, flags)?;
    let plan = cfg.plan()?;
    let sessions = load_sessions(&cfg, &[])?;
    let gate = cfg.data.gate();
    let outcome = apply_inclusion_gate(sessions, gate)?;
    if outcome.included.is_empty() {
        return Err(Error::Plan(format!("no session passed the inclusion gate ({gate:?})")));
    }
    let mut dir = OutDir::new(&cfg.output.dir, provenance(&cfg));
    dir.write_csv("gate_report.csv", &gate_report(&outcome))?;
    let sessions = outcome.included;
    let kind = cfg.experiment.kind;
    if kind != ExperimentKind::Decode && plan.strategy != Strategy::Single80 {
        return Err(Error::Config(format!("experiment.kind {kind:?} runs single_80 only")));
    }
    let offsets = cfg.experiment.offsets_ms.clone();
    let rows = with_pool(common.jobs, || -> Result<Vec<EvalResult>> {
        match kind {
            ExperimentKind::Decode if plan.strategy.is_single() => {
                let runs = run_single_sessions(&sessions, &plan)?;
                let audits: Vec<&DataAudit> = runs.iter().map(|r| &r.audit).collect();
                dir.write_csv("audit.csv", &audit_csv(&audits))?;
                Ok(runs.into_iter().map(|r| r.result).collect())
            }
            ExperimentKind::Decode => {
                let out = run_transfer_matrix(&sessions, &plan)?;
                let audits: Vec<&DataAudit> = out.audits.iter().collect();
                dir.write_csv("audit.csv", &audit_csv(&audits))?;
                let mut pairs = String::from("source,target,r,r2\n");
                for p in &out.pairs {
                    let _ = writeln!(pairs, "{},{},{},{}", p.source, p.target, p.r, p.r2);
                }
                dir.write_csv("pairs.csv", &pairs)?;
                Ok(out.results)
            }
            ExperimentKind::Regions => {
                let m = run_region_analysis(&sessions, &plan)?;
                dir.write_csv("region_matrix.csv", &region_matrix_csv(&m))?;
                Ok(m.results().cloned().collect())
            }
            ExperimentKind::Bands => {
                let cells = run_band_analysis(&sessions, &plan)?;
                let mut s = String::from("band,session_id,energy\n");
                for c in &cells {
                    for (r, e) in c.results.iter().zip(&c.energies) {
                        let _ = writeln!(s, "{},{},{e}", c.band.as_str(), r.session_id);
                    }
                }
                dir.write_csv("band_energy.csv", &s)?;
                Ok(cells.into_iter().flat_map(|c| c.results).collect())
            }
            ExperimentKind::Offsets => {
                let a = run_offset_analysis(&sessions, &plan, &offsets)?;
                let mut s = String::from("model,offset_ms,median_r,median_r2,ci_lo,ci_hi\n");
                for m in &a.summaries {
                    let (lo, hi) = m.ci_r.map(|c| (c.lo.to_string(), c.hi.to_string())).unwrap_or_default();
                    let _ = writeln!(s, "{},{},{},{},{lo},{hi}", m.model, m.offset_ms, m.median_r, m.median_r2);
                }
                dir.write_csv("offset_summary.csv", &s)?;
                let mut s = String::from("lag_ms,median_autocorr\n");
                for (lag, v) in &a.autocorr_median {
                    let _ = writeln!(s, "{lag},{v}");
                }
                dir.write_csv("autocorr.csv", &s)?;
                let mut s = String::from("model,direction,c0,c1,c2\n");
                for f in &a.fits {
                    let _ = writeln!(s, "{},{},{},{},{}", f.model, f.direction, f.coeffs[0], f.coeffs[1], f.coeffs[2]);
                }
                dir.write_csv("offset_fits.csv", &s)?;
                Ok(a.results)
            }
        }
    })?;
    dir.write_csv("results.csv", &results_csv(&rows))?;
    finish(dir, &cfg)
}
