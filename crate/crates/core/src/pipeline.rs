// SPDX-License-Identifier: MIT OR Apache-2.0

//! Desk-scale end-to-end run on the toy model.
//!
//! One run seed fixes everything: the model is initialised and given the
//! planted truth circuit, the synthetic statements are generated, dense
//! separability picks the probe layer, a mixed calibration set (text sampled
//! from the dense model plus statement text) drives importance scoring, and
//! every allocation method is pruned and measured on separability, hold-out
//! probe accuracy and held-out perplexity.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::allocation::{
    owl_profile, swl_profile, tplo_profile, uniform_profile, AllocationMethod, SparsityProfile, DEFAULT_LAMBDA,
    DEFAULT_PREFIX_K, DEFAULT_TARGET,
};
use crate::corpus::{build_calibration, gen_synthetic_corpus, CalibrationSpec, SyntheticConfig, SyntheticCorpus};
use crate::error::{Error, Result};
use crate::importance::{layer_outlier_ratio, DEFAULT_M_FACTOR};
use crate::metrics::{LsdRow, PerplexityRow, Report};
use crate::probes::{holdout_eval, EvalReport, HoldoutConfig, ProbeKind};
use crate::rng::stream_rng;
use crate::separability::{lsd_profile, ActivationDataset, SeparabilityProfile};
use crate::toymodel::{layer_importance, prune_model, SignalLayout, ToyModel, ToyModelConfig};

/// Layer count of the reference model that the default prefix length refers
/// to; shorter models scale it proportionally.
pub const REFERENCE_LAYERS: usize = 32;

const TEXT_STREAM: u64 = 77;
const HELDOUT_STREAM: u64 = 78;

/// Strength of the planted circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalParams {
    pub amplitude: f32,
    pub background: f32,
    pub copy_gain: f32,
    pub write_gain: f32,
}

impl Default for SignalParams {
    fn default() -> Self {
        Self {
            amplitude: SignalLayout::DEFAULT_AMPLITUDE,
            background: SignalLayout::DEFAULT_BACKGROUND,
            copy_gain: SignalLayout::DEFAULT_COPY_GAIN,
            write_gain: SignalLayout::DEFAULT_WRITE_GAIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyE2eConfig {
    /// Run seed; overrides the seeds inside `model` and `corpus`.
    pub seed: u64,
    pub model: ToyModelConfig,
    pub corpus: SyntheticConfig,
    pub signal: SignalParams,
    pub sparsity: f64,
    pub lambda: f64,
    pub m_factor: f32,
    /// OWL prefix length for TPLO; `None` scales the reference default to
    /// the model depth.
    pub prefix_k: Option<usize>,
    pub methods: Vec<AllocationMethod>,
    /// Calibration windows of sampled text.
    pub calib_text: usize,
    /// Calibration windows of statement text.
    pub calib_statements: usize,
    pub calib_len: usize,
    pub heldout_sequences: usize,
    pub heldout_len: usize,
    pub probe: ProbeKind,
    /// Probe layer; `None` takes the most separable dense layer.
    pub probe_layer: Option<u32>,
    pub probe_seeds: u32,
}

impl Default for ToyE2eConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ToyModelConfig::default(),
            corpus: SyntheticConfig::default(),
            signal: SignalParams::default(),
            sparsity: DEFAULT_TARGET,
            lambda: DEFAULT_LAMBDA,
            m_factor: DEFAULT_M_FACTOR,
            prefix_k: None,
            methods: AllocationMethod::ALL.to_vec(),
            calib_text: 16,
            calib_statements: 16,
            calib_len: 64,
            heldout_sequences: 16,
            heldout_len: 64,
            probe: ProbeKind::Lr,
            probe_layer: None,
            probe_seeds: 3,
        }
    }
}

impl ToyE2eConfig {
    pub fn effective_prefix_k(&self) -> usize {
        let l = self.model.num_layers as usize;
        self.prefix_k
            .unwrap_or_else(|| (l * DEFAULT_PREFIX_K).div_ceil(REFERENCE_LAYERS))
            .min(l)
    }
}

/// Separability and perplexity of one model.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub dataset: ActivationDataset,
    pub lsd: SeparabilityProfile,
    pub perplexity: f64,
}

/// Everything derived from the run seed before any pruning.
#[derive(Debug)]
pub struct ToyWorld {
    pub cfg: ToyE2eConfig,
    pub model: ToyModel,
    pub corpus: SyntheticCorpus,
    pub calib: Vec<Vec<u32>>,
    pub heldout: Vec<Vec<u32>>,
    pub dense: Measurement,
    outliers: OnceLock<Vec<f64>>,
}

fn sample_texts(model: &ToyModel, n: usize, len: usize, seed: u64, stream: u64) -> Result<Vec<Vec<u32>>> {
    use rand::Rng;
    let mut rng = stream_rng(seed, stream);
    let vocab = model.vocab() as u32;
    (0..n)
        .map(|_| {
            let start = rng.random_range(0..vocab);
            model.sample(&[start], len - 1, 1.0, &mut rng)
        })
        .collect()
}

impl ToyWorld {
    pub fn build(cfg: &ToyE2eConfig) -> Result<Self> {
        let mut cfg = cfg.clone();
        cfg.model.seed = cfg.seed;
        cfg.corpus.seed = cfg.seed;
        if cfg.calib_len < 2 || cfg.heldout_len < 2 || cfg.heldout_sequences == 0 {
            return Err(Error::Config("calibration and held-out sequences need at least 2 tokens".into()));
        }
        let mut corpus = gen_synthetic_corpus(&cfg.corpus, cfg.model.vocab, cfg.model.d_model)?;
        let p = &cfg.signal;
        corpus.layout.amplitude = p.amplitude;
        corpus.layout.background = p.background;
        corpus.layout.copy_gain = p.copy_gain;
        corpus.layout.write_gain = p.write_gain;
        let model = ToyModel::init(&cfg.model)?.plant_signal(&corpus.layout)?;

        // twice the requested mass so windows have room to move
        let text: Vec<u32> = sample_texts(&model, 2 * cfg.calib_text.max(1), cfg.calib_len, cfg.seed, TEXT_STREAM)?.concat();
        let spec = CalibrationSpec {
            n_source_a: cfg.calib_text,
            n_source_b: cfg.calib_statements,
            seq_len: cfg.calib_len,
            seed: cfg.seed,
        };
        let calib = build_calibration(&spec, &text, &corpus.token_stream())?.sequences;
        let heldout = sample_texts(&model, cfg.heldout_sequences, cfg.heldout_len, cfg.seed, HELDOUT_STREAM)?;

        let dense = measure(&model, &corpus, &heldout)?;
        Ok(Self {
            cfg,
            model,
            corpus,
            calib,
            heldout,
            dense,
            outliers: OnceLock::new(),
        })
    }

    /// Per-layer outlier ratios of the dense model on the calibration set.
    pub fn outlier_ratios(&self) -> Result<&[f64]> {
        if let Some(r) = self.outliers.get() {
            return Ok(r);
        }
        let scores = layer_importance(&self.model, &self.calib)?;
        let r = scores
            .iter()
            .map(|s| layer_outlier_ratio(s, self.cfg.m_factor).map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.outliers.get_or_init(|| r))
    }

    pub fn profile(&self, method: AllocationMethod, s: f64) -> Result<SparsityProfile> {
        let l = self.model.num_layers();
        let lambda = self.cfg.lambda;
        match method {
            AllocationMethod::Uniform => uniform_profile(l, s),
            AllocationMethod::Swl => swl_profile(&self.dense.lsd, s, lambda),
            AllocationMethod::Owl => owl_profile(self.outlier_ratios()?, s, lambda),
            AllocationMethod::Tplo => {
                let swl = swl_profile(&self.dense.lsd, s, lambda)?;
                let owl = owl_profile(self.outlier_ratios()?, s, lambda)?;
                tplo_profile(&swl, &owl, self.cfg.effective_prefix_k(), s)
            }
        }
    }

    pub fn prune(&self, profile: &SparsityProfile) -> Result<ToyModel> {
        prune_model(&self.model, profile, &self.calib)
    }

    pub fn measure(&self, model: &ToyModel) -> Result<Measurement> {
        measure(model, &self.corpus, &self.heldout)
    }

    pub fn probe_layer(&self) -> u32 {
        self.cfg.probe_layer.unwrap_or(self.dense.lsd.best_layer as u32)
    }

    pub fn probe(&self, ds: &ActivationDataset, method: &str) -> Result<EvalReport> {
        let hc = HoldoutConfig {
            seeds: self.cfg.probe_seeds,
            seed: self.cfg.seed,
            method: method.to_string(),
            ..Default::default()
        };
        holdout_eval(ds, self.cfg.probe, self.probe_layer(), &hc)
    }
}

fn measure(model: &ToyModel, corpus: &SyntheticCorpus, heldout: &[Vec<u32>]) -> Result<Measurement> {
    let dataset = corpus.activations(model)?;
    let lsd = lsd_profile(&dataset)?;
    let perplexity = model.perplexity(heldout)?;
    Ok(Measurement {
        dataset,
        lsd,
        perplexity,
    })
}

fn lsd_rows(method: &str, target: f64, seed: u64, p: &SeparabilityProfile) -> Vec<LsdRow> {
    p.lsd
        .iter()
        .enumerate()
        .map(|(l, &v)| LsdRow {
            method: method.to_string(),
            target,
            seed,
            layer: l as u32,
            lsd: v,
        })
        .collect()
}

/// Runs the whole pipeline and returns the report.
pub fn run_toy_e2e(cfg: &ToyE2eConfig) -> Result<Report> {
    if cfg.methods.is_empty() {
        return Err(Error::Config("no allocation method requested".into()));
    }
    let world = ToyWorld::build(cfg)?;
    let seed = world.cfg.seed;
    let mut report = Report {
        config: serde_json::to_value(&world.cfg)?,
        ..Default::default()
    };
    report.separability.extend(lsd_rows("dense", 0.0, seed, &world.dense.lsd));
    report.perplexity.push(PerplexityRow {
        method: "dense".into(),
        target: 0.0,
        seed,
        perplexity: world.dense.perplexity,
    });
    report.probes.extend(world.probe(&world.dense.dataset, "dense")?);
    for &method in &cfg.methods {
        let profile = world.profile(method, cfg.sparsity)?;
        let pruned = world.prune(&profile)?;
        let m = world.measure(&pruned)?;
        report.separability.extend(lsd_rows(method.as_str(), cfg.sparsity, seed, &m.lsd));
        report.perplexity.push(PerplexityRow {
            method: method.to_string(),
            target: cfg.sparsity,
            seed,
            perplexity: m.perplexity,
        });
        report.probes.extend(world.probe(&m.dataset, method.as_str())?);
        report.profiles.push(profile);
    }
    Ok(report)
}
