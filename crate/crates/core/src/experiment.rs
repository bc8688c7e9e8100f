//! End-to-end pipelines: dataset in memory, pretraining arms, probe suites,
//! the distractor ablation and the static-bias diagnostic.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::distractor::DistractorVariant;
use crate::error::{Error, Result};
use crate::eval::probe::{fit_on_videos, static_probe};
use crate::eval::{bias_correlation, video_features, BiasDiagnostic, FeatureKind, LinearProbe, ProbeConfig, ProbeResult};
use crate::synthdata::{generate_in_memory, GeneratorConfig, Split, SyntheticDatasetManifest, VideoRecord};
use crate::train::{pretrain, ClipGeometry, StepMetrics, Trainer};
use crate::video::Video;

/// A dataset held in memory, records and videos in manifest order.
pub struct Dataset {
    pub manifest: SyntheticDatasetManifest,
    pub records: Vec<VideoRecord>,
    pub videos: Vec<Video>,
}

impl Dataset {
    pub fn generate(config: &GeneratorConfig) -> Result<Self> {
        let (manifest, videos) = generate_in_memory(config)?;
        Ok(Self {
            records: manifest.records.clone(),
            manifest,
            videos,
        })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let manifest = SyntheticDatasetManifest::load(dir)?;
        let mut records = Vec::new();
        let mut videos = Vec::new();
        for split in Split::ALL {
            for (r, v) in manifest.load_split(split)? {
                records.push(r);
                videos.push(v);
            }
        }
        Ok(Self { manifest, records, videos })
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    /// Videos of `split` with their labels, in manifest order.
    pub fn split(&self, split: Split) -> Vec<(&Video, usize)> {
        self.records
            .iter()
            .zip(&self.videos)
            .filter(|(r, _)| r.split == split)
            .map(|(r, v)| (v, r.class_label))
            .collect()
    }

    pub fn train_videos(&self) -> Vec<Video> {
        self.split(Split::Train).into_iter().map(|(v, _)| v.clone()).collect()
    }
}

/// Probe results of one encoder on the evaluation splits.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArmEval {
    pub inbias: ProbeResult,
    pub antibias: ProbeResult,
    pub actor: ProbeResult,
    #[serde(skip)]
    pub probe: Option<LinearProbe>,
}

pub const EVAL_SPLITS: [Split; 3] = [Split::TestInbias, Split::TestAntibias, Split::TestActor];

/// Fits one probe on the train split and scores every evaluation split.
pub fn evaluate_arm(data: &Dataset, trainer: &Trainer) -> Result<ArmEval> {
    let cfg = ProbeConfig::from_eval(&trainer.config.eval);
    let geometry = ClipGeometry::from_config(&trainer.config);
    let feats = |split: Split, n: usize| -> Result<(Vec<Vec<Vec<f32>>>, Vec<usize>)> {
        let (v, l): (Vec<&Video>, Vec<usize>) = data.split(split).into_iter().unzip();
        Ok((video_features(&trainer.encoder, &trainer.params, &v, geometry, n, FeatureKind::Projection)?, l))
    };
    let (tf, tl) = feats(Split::Train, cfg.train_clips)?;
    let probe = fit_on_videos(&tf, &tl, data.num_classes(), &cfg)?;
    let mut results = Vec::with_capacity(3);
    for split in EVAL_SPLITS {
        let (f, l) = feats(split, cfg.num_clips)?;
        results.push(probe.evaluate(split.name(), &f, &l)?);
    }
    let [inbias, antibias, actor]: [ProbeResult; 3] = results.try_into().unwrap();
    Ok(ArmEval {
        inbias,
        antibias,
        actor,
        probe: Some(probe),
    })
}

/// Static accuracy per class from a probe trained and tested on disjoint
/// halves of the static split, using `trainer`'s features.
pub fn static_accuracy(data: &Dataset, trainer: &Trainer) -> Result<ProbeResult> {
    let cfg = ProbeConfig::from_eval(&trainer.config.eval);
    let geometry = ClipGeometry::from_config(&trainer.config);
    let (v, l): (Vec<&Video>, Vec<usize>) = data.split(Split::TestStatic).into_iter().unzip();
    // All clips of a static video are equal, so one clip per video suffices.
    let f = video_features(&trainer.encoder, &trainer.params, &v, geometry, 1, FeatureKind::Projection)?;
    static_probe(&f, &l, data.num_classes(), &cfg)
}

/// One pretraining run plus its evaluation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArmReport {
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
    pub final_loss: f64,
    pub eval: ArmEval,
}

pub fn run_arm(data: &Dataset, config: &ExperimentConfig, sink: &mut dyn FnMut(&StepMetrics)) -> Result<(Trainer, ArmReport)> {
    let train = data.train_videos();
    let mut last = f64::NAN;
    let trainer = pretrain(config, &train, &mut |m: &StepMetrics| {
        last = m.loss;
        sink(m)
    })?;
    let eval = evaluate_arm(data, &trainer)?;
    let report = ArmReport {
        variant: config.distractor.variant.name().to_string(),
        seed: config.seed,
        config_hash: config.hash(),
        final_loss: last,
        eval,
    };
    Ok((trainer, report))
}

/// Anti-bias probe accuracy of one distractor variant across seeds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seeds: Vec<u64>,
    pub antibias_top1: Vec<f64>,
    pub inbias_top1: Vec<f64>,
    pub actor_top1: Vec<f64>,
    pub antibias_mean: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

/// Pretrains and probes every variant of [`DistractorVariant::ALL`] for each
/// seed. Arms differ only in the distractor variant.
pub fn ablate_distractors(
    data: &Dataset,
    base: &ExperimentConfig,
    seeds: &[u64],
    on_arm: &mut dyn FnMut(&ArmReport, &Trainer),
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(DistractorVariant::ALL.len());
    for variant in DistractorVariant::ALL {
        let mut row = AblationRow {
            variant: variant.name().to_string(),
            seeds: seeds.to_vec(),
            antibias_top1: Vec::new(),
            inbias_top1: Vec::new(),
            actor_top1: Vec::new(),
            antibias_mean: 0.0,
        };
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.distractor.variant = variant;
            let (trainer, report) = run_arm(data, &cfg, &mut |_| {})?;
            row.antibias_top1.push(report.eval.antibias.top1);
            row.inbias_top1.push(report.eval.inbias.top1);
            row.actor_top1.push(report.eval.actor.top1);
            on_arm(&report, &trainer);
        }
        row.antibias_mean = row.antibias_top1.iter().sum::<f64>() / seeds.len() as f64;
        rows.push(row);
    }
    Ok(AblationTable { rows })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub baseline_inbias: ProbeResult,
    pub be_inbias: ProbeResult,
    pub static_probe: ProbeResult,
    pub diagnostic: BiasDiagnostic,
    /// `(static accuracy, improvement)` per class, for a scatter plot.
    pub scatter: Vec<(f64, f64)>,
}

/// Correlates per-class static accuracy (from the baseline encoder) with
/// the per-class in-bias improvement of the BE encoder over the baseline.
pub fn diagnose(data: &Dataset, baseline: &Trainer, be: &Trainer) -> Result<DiagnoseReport> {
    let b = evaluate_arm(data, baseline)?;
    let e = evaluate_arm(data, be)?;
    diagnose_from(data, baseline, b.inbias, e.inbias)
}

/// [`diagnose`] with precomputed in-bias probe results.
pub fn diagnose_from(data: &Dataset, baseline: &Trainer, baseline_inbias: ProbeResult, be_inbias: ProbeResult) -> Result<DiagnoseReport> {
    let static_probe = static_accuracy(data, baseline)?;
    let diagnostic = bias_correlation(&baseline_inbias, &be_inbias, &static_probe)?;
    let scatter = diagnostic
        .static_acc_per_class
        .iter()
        .cloned()
        .zip(diagnostic.rel_improvement_per_class.iter().cloned())
        .collect();
    Ok(DiagnoseReport {
        baseline_inbias,
        be_inbias,
        static_probe,
        diagnostic,
        scatter,
    })
}
