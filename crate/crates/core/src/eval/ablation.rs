//! Variant registries and the train-then-evaluate matrix runner.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::arch::{FusionOp, Model, ModelConfig};
use crate::data::{fit_norm_stats, Dataset, NormStats, Sample, ANGLES_DEG};
use crate::error::{Error, Result};
use crate::tensor::{DType, Element};
use crate::train::{history_csv, train, TrainConfig};

use super::predict::evaluate_normalized;
use super::report::EvalReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixMode {
    /// Modality comparison: ours, 5-channel early fusion, angles only, phase only.
    Models,
    /// Fusion operator and depth comparison.
    Fusion,
    /// One angle channel removed per row.
    Loo,
}

impl MatrixMode {
    pub fn name(self) -> &'static str {
        match self {
            MatrixMode::Models => "models",
            MatrixMode::Fusion => "fusion",
            MatrixMode::Loo => "loo",
        }
    }
}

impl fmt::Display for MatrixMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MatrixMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "models" => Ok(MatrixMode::Models),
            "fusion" => Ok(MatrixMode::Fusion),
            "loo" => Ok(MatrixMode::Loo),
            _ => Err(Error::config(format!("unknown mode `{s}` (models, fusion, loo)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub model: ModelConfig,
}

/// Rows of a matrix, derived from `base` (whose fusion settings are replaced).
pub fn variants(mode: MatrixMode, base: &ModelConfig) -> Vec<Variant> {
    let v = |name: &str, op: FusionOp, stage: usize| Variant {
        name: name.to_string(),
        model: ModelConfig {
            angle_channel_mask: [true; 4],
            ..base.clone()
        }
        .with_fusion(op, stage),
    };
    match mode {
        MatrixMode::Models => vec![
            v("ours", FusionOp::Mha, 2),
            v("5-channel", FusionOp::EarlyFusion, 2),
            v("angles-only", FusionOp::AnglesOnly, 2),
            v("phase-only", FusionOp::PhaseOnly, 2),
        ],
        MatrixMode::Fusion => vec![
            v("mha@2", FusionOp::Mha, 2),
            v("concat@2", FusionOp::Concat1x1, 2),
            v("crossgate@2", FusionOp::CrossGate, 2),
            v("early", FusionOp::EarlyFusion, 2),
            v("mha@3", FusionOp::Mha, 3),
            v("mha@1", FusionOp::Mha, 1),
        ],
        MatrixMode::Loo => (0..4)
            .map(|drop| {
                let mut row = v(&format!("drop-{}", ANGLES_DEG[drop]), FusionOp::Mha, 2);
                row.model.angle_channel_mask[drop] = false;
                row
            })
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct MatrixRow {
    pub variant: Variant,
    pub report: EvalReport,
    pub param_count: usize,
    pub train_config_hash: String,
    /// `history.csv` contents of the row's training run.
    pub history: String,
}

#[derive(Debug, Clone)]
pub struct AblationMatrix {
    pub mode: MatrixMode,
    pub train_config: TrainConfig,
    pub rows: Vec<MatrixRow>,
}

pub const MATRIX_HEADER: &str = "variant,mean_dice,std_dice,mean_iou,std_iou";

impl AblationMatrix {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{MATRIX_HEADER}\n");
        for r in &self.rows {
            let e = &r.report;
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.variant.name, e.mean_dice, e.std_dice, e.mean_iou, e.std_iou
            );
        }
        s
    }

    /// `variant,train_config_hash,param_count` per row.
    pub fn meta_csv(&self) -> String {
        let mut s = String::from("variant,train_config_hash,param_count\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.variant.name, r.train_config_hash, r.param_count);
        }
        s
    }

    /// Line-plot data of a leave-one-out matrix: dropped angle against scores.
    pub fn loo_plot_csv(&self) -> String {
        let mut s = String::from("dropped_angle_deg,mean_dice,mean_iou\n");
        for r in &self.rows {
            let dropped = (0..4).find(|&c| !r.variant.model.angle_channel_mask[c]);
            let deg = dropped.map_or(String::from("none"), |c| ANGLES_DEG[c].to_string());
            let _ = writeln!(s, "{deg},{},{}", r.report.mean_dice, r.report.mean_iou);
        }
        s
    }

    /// Writes `matrix.csv`, `matrix_meta.csv`, `train_config.txt`, per-row
    /// `eval_<variant>.csv` and `history_<variant>.csv`, and `loo_plot.csv`
    /// for leave-one-out runs.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: &str| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        put("matrix.csv", &self.to_csv())?;
        put("matrix_meta.csv", &self.meta_csv())?;
        put("train_config.txt", &self.train_config.to_kv().to_text())?;
        for r in &self.rows {
            put(&format!("eval_{}.csv", r.variant.name), &r.report.to_csv())?;
            put(&format!("history_{}.csv", r.variant.name), &r.history)?;
        }
        if self.mode == MatrixMode::Loo {
            put("loo_plot.csv", &self.loo_plot_csv())?;
        }
        Ok(())
    }
}

fn run_row<E: Element>(v: &Variant, tc: &TrainConfig, train_set: &[Sample], test: &[Sample]) -> Result<MatrixRow> {
    let mut model = Model::<E>::build(&v.model)?;
    let outcome = train(&mut model, train_set, tc, None)?;
    let report = evaluate_normalized(&model, test)?;
    Ok(MatrixRow {
        variant: v.clone(),
        report,
        param_count: model.param_count(),
        train_config_hash: tc.hash(),
        history: history_csv(&outcome.history),
    })
}

/// Trains every variant from scratch under the same `tc` and evaluates it on
/// the test split. Normalization is fit on the training split only. Rows run
/// on up to `jobs` threads; results do not depend on `jobs`.
pub fn run_matrix(
    mode: MatrixMode,
    base: &ModelConfig,
    tc: &TrainConfig,
    data: &Dataset,
    jobs: usize,
) -> Result<AblationMatrix> {
    let rows = variants(mode, base);
    for v in &rows {
        v.model.validate()?;
        tc.validate_for(v.model.size_divisor())?;
    }
    let stats = fit_norm_stats(&data.train)?;
    let norm = |xs: &[Sample], s: &NormStats| xs.iter().map(|x| s.normalize(x)).collect::<Result<Vec<_>>>();
    let train_set = norm(&data.train, &stats)?;
    let test = norm(&data.test, &stats)?;
    let run = |v: &Variant| match tc.dtype {
        DType::F64 => run_row::<f64>(v, tc, &train_set, &test),
        _ => run_row::<f32>(v, tc, &train_set, &test),
    };

    let jobs = jobs.clamp(1, rows.len());
    let results: Vec<Mutex<Option<Result<MatrixRow>>>> = rows.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= rows.len() {
                    break;
                }
                let r = run(&rows[i]);
                *results[i].lock().expect("unpoisoned") = Some(r);
            });
        }
    });
    let rows = results
        .into_iter()
        .map(|m| m.into_inner().expect("unpoisoned").expect("every row ran"))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationMatrix {
        mode,
        train_config: tc.clone(),
        rows,
    })
}

pub fn run_model_matrix(base: &ModelConfig, tc: &TrainConfig, data: &Dataset, jobs: usize) -> Result<AblationMatrix> {
    run_matrix(MatrixMode::Models, base, tc, data, jobs)
}

pub fn run_fusion_matrix(base: &ModelConfig, tc: &TrainConfig, data: &Dataset, jobs: usize) -> Result<AblationMatrix> {
    run_matrix(MatrixMode::Fusion, base, tc, data, jobs)
}

pub fn run_leave_one_out(base: &ModelConfig, tc: &TrainConfig, data: &Dataset, jobs: usize) -> Result<AblationMatrix> {
    run_matrix(MatrixMode::Loo, base, tc, data, jobs)
}
