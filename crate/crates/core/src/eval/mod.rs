//! Segmentation metrics and the real versus real-plus-synthetic protocol.

mod metrics;
mod segnet;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use metrics::{compute_metrics, hausdorff, squared_distance_transform, surface, MetricsReport};
pub use segnet::{segmentation_loss, train_segnet, SegNetConfig, TinySegNet};

use crate::data::{Provenance, TumorCube};
use crate::error::{Error, Result};
use crate::io::{write_atomic, write_json};
use crate::model::Generator;
use crate::tensor::Scalar;
use crate::train::synthesize_cube;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub segnet: SegNetConfig,
    /// Phantom split sizes used by the `eval` command.
    pub n_train: usize,
    pub n_aug: usize,
    pub n_test: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { segnet: SegNetConfig::default(), n_train: 8, n_aug: 8, n_test: 4 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("eval needs at least one training and one test cube".into()));
        }
        self.segnet.validate()
    }
}

/// Mean metrics of one protocol arm over the test set. Undefined RVD/HD
/// cases are left out of their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: String,
    pub train_cubes: usize,
    pub dice: f64,
    pub jaccard: f64,
    pub voe: f64,
    pub rvd: Option<f64>,
    pub hd: Option<f64>,
    pub final_loss: f64,
    pub cases: Vec<MetricsReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub dice: f64,
    pub jaccard: f64,
    pub voe: f64,
    pub rvd: Option<f64>,
    pub hd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub seed: u64,
    pub synthetic_cubes: usize,
    pub test_cubes: usize,
    pub baseline: ArmReport,
    pub augmented: ArmReport,
    /// `augmented - baseline`.
    pub delta: MetricDeltas,
}

fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.flatten().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn run_arm<S: Scalar>(arm: &str, cfg: &SegNetConfig, train_set: &[TumorCube], test: &[TumorCube], seed: u64) -> Result<ArmReport> {
    let (net, losses) = train_segnet::<S>(cfg, train_set, seed)?;
    let cases = test.iter().map(|c| compute_metrics(&net.predict(&c.y, cfg.threshold)?, &c.m_st)).collect::<Result<Vec<_>>>()?;
    let n = cases.len() as f64;
    Ok(ArmReport {
        arm: arm.into(),
        train_cubes: train_set.len(),
        dice: cases.iter().map(|c| c.dice).sum::<f64>() / n,
        jaccard: cases.iter().map(|c| c.jaccard).sum::<f64>() / n,
        voe: cases.iter().map(|c| c.voe).sum::<f64>() / n,
        rvd: mean_opt(cases.iter().map(|c| c.rvd)),
        hd: mean_opt(cases.iter().map(|c| c.hd)),
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
        cases,
    })
}

/// Cubes whose tumor region is replaced by generator output.
pub fn synthesize_cubes<S: Scalar>(gen: &Generator<S>, sources: &[TumorCube]) -> Result<Vec<TumorCube>> {
    sources
        .iter()
        .map(|c| {
            Ok(TumorCube {
                y: synthesize_cube(gen, &c.y, &c.m_st)?,
                provenance: Provenance { source: format!("synthetic:{}", c.provenance.source), component: c.provenance.component },
                ..c.clone()
            })
        })
        .collect()
}

/// Trains a baseline segmenter on `real_train` and an augmented one on
/// `real_train` plus cubes synthesized from `aug_source`, with identical
/// seeds and settings, and scores both on `test`. Without a generator the
/// augmented arm sees exactly the baseline data.
pub fn evaluate_protocol<S: Scalar>(
    cfg: &SegNetConfig,
    real_train: &[TumorCube],
    aug_source: &[TumorCube],
    test: &[TumorCube],
    generator: Option<&Generator<S>>,
    seed: u64,
) -> Result<ProtocolReport> {
    if test.is_empty() {
        return Err(Error::arg("evaluate_protocol", "test set is empty"));
    }
    if real_train.is_empty() {
        return Err(Error::arg("evaluate_protocol", "real training set is empty"));
    }
    let synthetic = match generator {
        Some(g) => synthesize_cubes(g, aug_source)?,
        None => Vec::new(),
    };
    let mut augmented_set = real_train.to_vec();
    augmented_set.extend(synthetic.iter().cloned());
    let baseline = run_arm::<S>("real", cfg, real_train, test, seed)?;
    let augmented = run_arm::<S>("real+synthetic", cfg, &augmented_set, test, seed)?;
    let diff = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| a - b);
    let delta = MetricDeltas {
        dice: augmented.dice - baseline.dice,
        jaccard: augmented.jaccard - baseline.jaccard,
        voe: augmented.voe - baseline.voe,
        rvd: diff(augmented.rvd, baseline.rvd),
        hd: diff(augmented.hd, baseline.hd),
    };
    Ok(ProtocolReport { seed, synthetic_cubes: synthetic.len(), test_cubes: test.len(), baseline, augmented, delta })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"))
}

/// One row per arm plus a `delta` row: `arm,Dice,Jaccard,VOE,RVD,HD`.
pub fn report_csv(r: &ProtocolReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(["arm", "Dice", "Jaccard", "VOE", "RVD", "HD"]).map_err(csv_err)?;
    for a in [&r.baseline, &r.augmented] {
        w.write_record([a.arm.clone(), cell(Some(a.dice)), cell(Some(a.jaccard)), cell(Some(a.voe)), cell(a.rvd), cell(a.hd)]).map_err(csv_err)?;
    }
    let d = &r.delta;
    w.write_record(["delta".to_string(), cell(Some(d.dice)), cell(Some(d.jaccard)), cell(Some(d.voe)), cell(d.rvd), cell(d.hd)]).map_err(csv_err)?;
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Writes `report.json` and `report.csv` into `dir`.
pub fn write_report(dir: &Path, r: &ProtocolReport) -> Result<()> {
    write_json(&dir.join("report.json"), r)?;
    write_atomic(&dir.join("report.csv"), report_csv(r)?.as_bytes())
}
