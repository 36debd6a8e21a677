// SPDX-License-Identifier: MIT OR Apache-2.0

//! `truthprune` command-line driver.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error. Failures print
//! `error[<code>]: <message>` on stderr.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde::Serialize;

use truthprune::allocation::{
    check_bound, check_target, owl_profile, swl_profile, tplo_profile, uniform_profile, AllocationMethod,
    SparsityProfile,
};
use truthprune::corpus::{
    build_enrichment_prompt, enrich_statements, load_source_texts, CommandClient, EnrichConfig, RetryPolicy,
};
use truthprune::importance::{apply_mask, build_mask, layer_outlier_ratio, ImportanceMatrix, MaskGroup};
use truthprune::interchange::{archive_importance, load_labels, LayeredActivations};
use truthprune::metrics::{
    emit_report, load_mc_instances, load_verdicts, mc_scores, summarize_verdicts, JudgeRow, Mc2Mode, McRow, Report,
    ReportFormat,
};
use truthprune::pipeline::{run_toy_e2e, ToyE2eConfig};
use truthprune::probes::{holdout_eval, HoldoutConfig, ProbeKind};
use truthprune::separability::{lsd_profile_scoped, LsdScope, SeparabilityProfile};
use truthprune::tensorio::{Archive, TensorRecord};
use truthprune::Error;

#[derive(Debug, Parser, Serialize)]
#[command(name = "truthprune", version, about = "Truthfulness-aware layer-wise pruning toolkit")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
enum Cmd {
    /// Per-layer separability of true/false activations.
    Lsd {
        #[arg(long)]
        acts: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Restrict to one topic.
        #[arg(long)]
        topic: Option<String>,
        /// Write the separability profile as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-layer outlier ratios from weights and input column norms.
    Outliers {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        m_factor: f32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Layer-wise sparsity allocation.
    Allocate {
        #[arg(long)]
        method: AllocationMethod,
        #[arg(long, default_value_t = 0.5)]
        sparsity: f64,
        #[arg(long, default_value_t = 0.08)]
        lambda: f64,
        #[arg(long, default_value_t = 10)]
        prefix_k: usize,
        /// Separability profile JSON (swl, tplo).
        #[arg(long)]
        sep: Option<PathBuf>,
        /// Outlier ratio JSON (owl, tplo).
        #[arg(long)]
        outliers: Option<PathBuf>,
        /// Layer count for the uniform profile when no input file is given.
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mask weights by activation-aware importance at per-layer sparsities.
    Prune {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, default_value = "per-row")]
        group: MaskGroup,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hold-one-topic-out probe evaluation.
    Probe {
        #[arg(long)]
        kind: ProbeKind,
        #[arg(long)]
        acts: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 12)]
        layer: u32,
        #[arg(long, default_value_t = 5)]
        seeds: u32,
        /// Label written to the `method` column.
        #[arg(long, default_value = "dense")]
        method: String,
        /// Write per-run rows as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multiple-choice scores, optionally with judge verdicts.
    McScore {
        #[arg(long)]
        input: PathBuf,
        /// Score MC2 as the mean normalized mass of the correct answers.
        #[arg(long)]
        mc2_mean_mass: bool,
        #[arg(long)]
        judge: Option<PathBuf>,
        #[arg(long, default_value = "model")]
        method: String,
        /// Report directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enrich statements through the command named by TRUTHPRUNE_ENRICH_CMD.
    Enrich {
        /// JSONL rows `{id, text}`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Failed items as JSONL.
        #[arg(long)]
        failures: Option<PathBuf>,
        #[arg(long, default_value_t = 120)]
        timeout_secs: u64,
        #[arg(long, default_value_t = 4)]
        max_attempts: u32,
        #[arg(long, default_value_t = 4)]
        in_flight: usize,
        /// Print the prompts instead of calling the client.
        #[arg(long)]
        dry_run: bool,
    },
    /// Toy model end to end: plant, calibrate, allocate, prune, measure.
    ToyE2e {
        #[arg(long, default_value_t = 0.5)]
        sparsity: f64,
        /// Allocation methods (repeatable); all when omitted.
        #[arg(long)]
        method: Vec<AllocationMethod>,
        #[arg(long, default_value_t = 0.08)]
        lambda: f64,
        /// OWL prefix for TPLO; scaled from 10 of 32 layers when omitted.
        #[arg(long)]
        prefix_k: Option<usize>,
        #[arg(long, default_value_t = 12)]
        layers: u32,
        #[arg(long, default_value_t = 48)]
        per_topic: usize,
        #[arg(long, default_value_t = 2)]
        gap: u32,
        #[arg(long, default_value_t = 3)]
        probe_seeds: u32,
        /// Report directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

// ----------------------------------------------------------------------------
// errors

enum Failure {
    Usage(String),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

type Res<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Domain(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Res<T> {
    let s = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(serde_json::from_str(&s).map_err(Error::from)?)
}

fn write_text(path: Option<&Path>, text: &str) -> Res<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| io_err(Path::new("<stdout>"), e))
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Res<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(Error::from)?;
    s.push('\n');
    Ok(s)
}

// ----------------------------------------------------------------------------
// validation

fn validate(cli: &Cli) -> Res<()> {
    if cli.jobs == Some(0) {
        return Err(usage("--jobs must be positive"));
    }
    let bound = |s: f64, l: f64| check_bound(s, l).map_err(|e| usage(e.to_string()));
    match &cli.command {
        Cmd::Outliers { m_factor, .. } if !(*m_factor > 0.0) => Err(usage("--m-factor must be positive")),
        Cmd::Allocate {
            method,
            sparsity,
            lambda,
            sep,
            outliers,
            layers,
            ..
        } => {
            bound(*sparsity, *lambda)?;
            let need_sep = matches!(method, AllocationMethod::Swl | AllocationMethod::Tplo);
            let need_out = matches!(method, AllocationMethod::Owl | AllocationMethod::Tplo);
            if need_sep && sep.is_none() {
                return Err(usage(format!("--method {method} needs --sep")));
            }
            if need_out && outliers.is_none() {
                return Err(usage(format!("--method {method} needs --outliers")));
            }
            if *method == AllocationMethod::Uniform && layers.is_none() && sep.is_none() && outliers.is_none() {
                return Err(usage("--method uniform needs --layers, --sep or --outliers"));
            }
            Ok(())
        }
        Cmd::Probe { seeds: 0, .. } => Err(usage("--seeds must be positive")),
        Cmd::Enrich {
            max_attempts, in_flight, ..
        } if *max_attempts == 0 || *in_flight == 0 => Err(usage("--max-attempts and --in-flight must be positive")),
        Cmd::ToyE2e {
            sparsity,
            lambda,
            layers,
            per_topic,
            gap,
            probe_seeds,
            ..
        } => {
            check_target(*sparsity).map_err(|e| usage(e.to_string()))?;
            bound(*sparsity, *lambda)?;
            if *layers < 2 || *per_topic < 4 || *gap == 0 || *probe_seeds == 0 {
                return Err(usage(
                    "--layers ≥ 2, --per-topic ≥ 4, --gap ≥ 1 and --probe-seeds ≥ 1 are required",
                ));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

// ----------------------------------------------------------------------------
// subcommands

#[derive(Serialize, serde::Deserialize)]
struct OutlierFile {
    m_factor: f32,
    layers: Vec<u32>,
    ratios: Vec<f64>,
}

fn load_acts(acts: &Path, labels: &Path) -> Res<LayeredActivations> {
    let archive = Archive::load(acts)?;
    let labels = load_labels(labels)?;
    Ok(LayeredActivations::from_archive(&archive, &labels)?)
}

fn cmd_lsd(acts: &Path, labels: &Path, topic: Option<&str>, out: Option<&Path>) -> Res<()> {
    let la = load_acts(acts, labels)?;
    let scope = topic.map_or(LsdScope::Pooled, |t| LsdScope::Topic(t.to_string()));
    let prof = lsd_profile_scoped(&la.dataset, &scope)?;
    let mut csv = String::from("layer,lsd,sep_pd\n");
    for (k, l) in la.layers.iter().enumerate() {
        csv.push_str(&format!("{l},{},{}\n", prof.lsd[k], prof.sep_pd[k]));
    }
    write_text(None, &csv)?;
    if let Some(p) = out {
        write_text(Some(p), &to_json(&prof)?)?;
    }
    Ok(())
}

fn cmd_outliers(weights: &Path, m_factor: f32, out: Option<&Path>) -> Res<()> {
    let archive = Archive::load(weights)?;
    let scores = archive_importance(&archive)?;
    let mut file = OutlierFile {
        m_factor,
        layers: Vec::new(),
        ratios: Vec::new(),
    };
    for (l, mats) in &scores {
        let ms: Vec<ImportanceMatrix> = mats.iter().map(|(_, s)| s.clone()).collect();
        file.layers.push(*l);
        file.ratios.push(layer_outlier_ratio(&ms, m_factor)? as f64);
    }
    let mut csv = String::from("layer,outlier_ratio\n");
    for (l, r) in file.layers.iter().zip(&file.ratios) {
        csv.push_str(&format!("{l},{r}\n"));
    }
    write_text(None, &csv)?;
    if let Some(p) = out {
        write_text(Some(p), &to_json(&file)?)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_allocate(
    method: AllocationMethod,
    s: f64,
    lambda: f64,
    prefix_k: usize,
    sep: Option<&Path>,
    outliers: Option<&Path>,
    layers: Option<usize>,
    out: Option<&Path>,
) -> Res<()> {
    let sep: Option<SeparabilityProfile> = sep.map(read_json).transpose()?;
    let ratios: Option<OutlierFile> = outliers.map(read_json).transpose()?;
    let profile = match method {
        AllocationMethod::Uniform => {
            let n = layers
                .or(sep.as_ref().map(|p| p.num_layers()))
                .or(ratios.as_ref().map(|r| r.ratios.len()))
                .expect("validated");
            uniform_profile(n, s)?
        }
        AllocationMethod::Swl => swl_profile(sep.as_ref().expect("validated"), s, lambda)?,
        AllocationMethod::Owl => owl_profile(&ratios.expect("validated").ratios, s, lambda)?,
        AllocationMethod::Tplo => {
            let swl = swl_profile(sep.as_ref().expect("validated"), s, lambda)?;
            let owl = owl_profile(&ratios.expect("validated").ratios, s, lambda)?;
            if prefix_k > swl.num_layers() {
                return Err(usage(format!("--prefix-k {prefix_k} exceeds {} layers", swl.num_layers())));
            }
            tplo_profile(&swl, &owl, prefix_k, s)?
        }
    };
    write_text(out, &to_json(&profile)?)
}

fn cmd_prune(weights: &Path, profile: &Path, group: MaskGroup, out: &Path) -> Res<()> {
    let mut archive = Archive::load(weights)?;
    let profile: SparsityProfile = read_json(profile)?;
    let scores = archive_importance(&archive)?;
    let mut summary = String::from("tensor,layer,sparsity,zeros,total\n");
    for (l, mats) in &scores {
        let s = *profile.sparsity.get(*l as usize).ok_or_else(|| {
            Failure::Domain(Error::ProfileMismatch(format!(
                "profile has {} layers; weights reach layer {l}",
                profile.num_layers()
            )))
        })?;
        for (name, sc) in mats {
            let mask = build_mask(sc, s, group)?;
            let w = archive.require(name)?.to_matrix()?;
            let masked = apply_mask(&w, &mask)?;
            let zeros = mask.keep_flags().iter().filter(|k| !**k).count();
            summary.push_str(&format!("{name},{l},{s},{zeros},{}\n", masked.len()));
            let rec = archive.records.iter_mut().find(|r| &r.name == name).expect("present");
            *rec = TensorRecord::from_matrix(name.clone(), &masked);
        }
    }
    archive.save(out)?;
    write_text(None, &summary)
}

#[allow(clippy::too_many_arguments)]
fn cmd_probe(
    kind: ProbeKind,
    acts: &Path,
    labels: &Path,
    layer: u32,
    seeds: u32,
    seed: u64,
    method: &str,
    out: Option<&Path>,
) -> Res<()> {
    let la = load_acts(acts, labels)?;
    let pos = la.position(layer)?;
    let cfg = HoldoutConfig {
        seeds,
        seed,
        method: method.to_string(),
        ..Default::default()
    };
    let mut rep = holdout_eval(&la.dataset, kind, pos as u32, &cfg)?;
    for r in &mut rep.rows {
        r.layer = layer;
    }
    let mut text = String::from("topic,mean,std\n");
    for t in rep.summary() {
        text.push_str(&format!("{},{:.6},{:.6}\n", t.topic, t.mean, t.std));
    }
    text.push_str(&format!("average,{:.6},{:.6}\n", rep.mean_accuracy(), rep.pooled_std()));
    write_text(None, &text)?;
    if let Some(p) = out {
        rep.save_csv(p)?;
    }
    Ok(())
}

fn cmd_mc(input: &Path, mean_mass: bool, judge: Option<&Path>, method: &str, out: Option<&Path>) -> Res<()> {
    let inst = load_mc_instances(input)?;
    let mode = if mean_mass { Mc2Mode::MeanMass } else { Mc2Mode::MassComparison };
    let scores = mc_scores(&inst, mode)?;
    let mut report = Report {
        config: serde_json::json!({ "input": input, "mc2_mode": mode }),
        mc: vec![McRow {
            method: method.to_string(),
            scores,
        }],
        ..Default::default()
    };
    if let Some(j) = judge {
        report.judge.push(JudgeRow {
            method: method.to_string(),
            summary: summarize_verdicts(&load_verdicts(j)?)?,
        });
    }
    write_text(None, &to_json(&serde_json::json!({ "mc": report.mc, "judge": report.judge }))?)?;
    if let Some(dir) = out {
        emit_report(&report, dir, &[ReportFormat::Json, ReportFormat::Csv])?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_enrich(
    input: &Path,
    out: &Path,
    failures: Option<&Path>,
    timeout_secs: u64,
    max_attempts: u32,
    in_flight: usize,
    dry_run: bool,
) -> Res<()> {
    let items = load_source_texts(input)?;
    if dry_run {
        let mut s = String::new();
        for it in &items {
            let p = build_enrichment_prompt(&it.text)?;
            s.push_str(&serde_json::to_string(&serde_json::json!({ "id": it.id, "prompt": p })).map_err(Error::from)?);
            s.push('\n');
        }
        return write_text(Some(out), &s);
    }
    let client = CommandClient::from_env(Duration::from_secs(timeout_secs))?;
    let cfg = EnrichConfig {
        retry: RetryPolicy {
            max_attempts,
            ..Default::default()
        },
        max_in_flight: in_flight,
    };
    let outcome = enrich_statements(&items, &client, &cfg);
    outcome.save_jsonl(out)?;
    if let Some(p) = failures {
        let mut s = String::new();
        for f in &outcome.failures {
            s.push_str(&serde_json::to_string(f).map_err(Error::from)?);
            s.push('\n');
        }
        write_text(Some(p), &s)?;
    }
    for f in &outcome.failures {
        eprintln!("warning[item_failed]: {}: {}", f.id, f.reason);
    }
    write_text(
        None,
        &format!("enriched {} of {} items\n", outcome.records.len(), items.len()),
    )
}

fn toy_config(cli: &Cli) -> ToyE2eConfig {
    let Cmd::ToyE2e {
        sparsity,
        method,
        lambda,
        prefix_k,
        layers,
        per_topic,
        gap,
        probe_seeds,
        ..
    } = &cli.command
    else {
        unreachable!("toy config requested for another subcommand")
    };
    let mut cfg = ToyE2eConfig {
        seed: cli.seed,
        sparsity: *sparsity,
        lambda: *lambda,
        prefix_k: *prefix_k,
        probe_seeds: *probe_seeds,
        ..Default::default()
    };
    if !method.is_empty() {
        cfg.methods = method.clone();
    }
    cfg.model.num_layers = *layers;
    cfg.corpus.n_per_topic = *per_topic;
    cfg.corpus.gap = *gap;
    cfg
}

fn cmd_toy(cfg: &ToyE2eConfig, out: Option<&Path>) -> Res<()> {
    let report = run_toy_e2e(cfg)?;
    if let Some(dir) = out {
        emit_report(&report, dir, &[ReportFormat::Json, ReportFormat::Csv])?;
    }
    let mut text = String::from("method,mean_lsd,probe_accuracy,perplexity\n");
    let mut methods = vec!["dense".to_string()];
    methods.extend(cfg.methods.iter().map(|m| m.to_string()));
    for m in &methods {
        let lsd: Vec<f64> = report.separability.iter().filter(|r| &r.method == m).map(|r| r.lsd).collect();
        let mean_lsd = lsd.iter().sum::<f64>() / lsd.len().max(1) as f64;
        let probes = truthprune::probes::EvalReport {
            rows: report.probes.rows.iter().filter(|r| &r.method == m).cloned().collect(),
        };
        let ppl = report.perplexity.iter().find(|r| &r.method == m).map_or(f64::NAN, |r| r.perplexity);
        text.push_str(&format!("{m},{mean_lsd:.6},{:.6},{ppl:.4}\n", probes.mean_accuracy()));
    }
    text.push_str(&format!("content_hash,{}\n", report.content_hash()?));
    write_text(None, &text)
}

fn run(cli: &Cli) -> Res<()> {
    validate(cli)?;
    if cli.print_config {
        let mut v = serde_json::to_value(cli).map_err(Error::from)?;
        if matches!(cli.command, Cmd::ToyE2e { .. }) {
            v["resolved"] = serde_json::to_value(toy_config(cli)).map_err(Error::from)?;
        }
        return write_text(None, &to_json(&v)?);
    }
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| usage(format!("cannot size thread pool: {e}")))?;
    }
    match &cli.command {
        Cmd::Lsd {
            acts,
            labels,
            topic,
            out,
        } => cmd_lsd(acts, labels, topic.as_deref(), out.as_deref()),
        Cmd::Outliers { weights, m_factor, out } => cmd_outliers(weights, *m_factor, out.as_deref()),
        Cmd::Allocate {
            method,
            sparsity,
            lambda,
            prefix_k,
            sep,
            outliers,
            layers,
            out,
        } => cmd_allocate(
            *method,
            *sparsity,
            *lambda,
            *prefix_k,
            sep.as_deref(),
            outliers.as_deref(),
            *layers,
            out.as_deref(),
        ),
        Cmd::Prune {
            weights,
            profile,
            group,
            out,
        } => cmd_prune(weights, profile, *group, out),
        Cmd::Probe {
            kind,
            acts,
            labels,
            layer,
            seeds,
            method,
            out,
        } => cmd_probe(*kind, acts, labels, *layer, *seeds, cli.seed, method, out.as_deref()),
        Cmd::McScore {
            input,
            mc2_mean_mass,
            judge,
            method,
            out,
        } => cmd_mc(input, *mc2_mean_mass, judge.as_deref(), method, out.as_deref()),
        Cmd::Enrich {
            input,
            out,
            failures,
            timeout_secs,
            max_attempts,
            in_flight,
            dry_run,
        } => cmd_enrich(
            input,
            out,
            failures.as_deref(),
            *timeout_secs,
            *max_attempts,
            *in_flight,
            *dry_run,
        ),
        Cmd::ToyE2e { out, .. } => cmd_toy(&toy_config(cli), out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error[usage_error]: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(1)
        }
    }
}
