use std::fs;
use std::path::Path;

use qpmseg::arch::{load_checkpoint, read_manifest, Model, ModelConfig};
use qpmseg::data::{fit_norm_stats, load_split, save_split, stats, Dataset, NormStats, Sample, SynthConfig};
use qpmseg::eval::{annotation, evaluate_masks, overlay as render_overlay, predict_mask, run_matrix, Confusion, EvalReport};
use qpmseg::train::{TrainConfig, TrainOutcome};
use qpmseg::{qts, verify, DType, Element, KvMap, Tensor};

use crate::failure::{Failure, Outcome};
use crate::runspec::{prefixed, prepare_out, resolve, write_effective, write_text};
use crate::{AblateArgs, EvalArgs, GradcheckArgs, OverlayArgs, SynthArgs, TrainArgs};

pub fn synth(a: &SynthArgs) -> Outcome {
    if a.n == 0 {
        return Err(Failure::usage("--n must be at least 1"));
    }
    let mut cfg = SynthConfig {
        n: a.n + a.n_test,
        height: a.size,
        width: a.size,
        confluence: a.confluence,
        phase_snr: a.phase_snr,
        seed: a.seed,
        ..SynthConfig::default()
    };
    if let Some(v) = a.intensity_noise {
        cfg.intensity_noise = v;
    }
    cfg.validate()?;
    prepare_out(&a.out, a.force)?;
    for split in ["train", "test"] {
        let dir = a.out.join(split);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
        }
    }
    let mut all = qpmseg::data::synth::generate(&cfg)?;
    let test = all.split_off(a.n);
    save_split(&a.out, "train", &all)?;
    if !test.is_empty() {
        save_split(&a.out, "test", &test)?;
    }
    let mut kv = KvMap::new();
    kv.insert("n", a.n);
    kv.insert("n_test", a.n_test);
    kv.insert("size", a.size);
    kv.insert("confluence", a.confluence);
    kv.insert("phase_snr", cfg.phase_snr);
    kv.insert("phase_noise_corr", cfg.phase_noise_corr);
    kv.insert("intensity_noise", cfg.intensity_noise);
    kv.insert("seed", a.seed);
    write_effective(&a.out, "synth", kv)?;
    println!("wrote {} train and {} test samples to {}", all.len(), test.len(), a.out.display());
    Ok(())
}

fn normalized(samples: &[Sample], st: &NormStats) -> Outcome<Vec<Sample>> {
    Ok(samples.iter().map(|s| st.normalize(s)).collect::<qpmseg::Result<Vec<_>>>()?)
}

fn fit_and_save<E: Element>(
    mc: &ModelConfig,
    tc: &TrainConfig,
    train_set: &[Sample],
    out: &Path,
) -> qpmseg::Result<(TrainOutcome, usize)> {
    let mut model = Model::<E>::build(mc)?;
    let outcome = qpmseg::train::train_with(&mut model, train_set, tc, Some(out), |r| {
        eprintln!(
            "epoch {:>4}/{}  lr {:.6}  loss {:.5} (dice {:.5}, ce {:.5})  train_dice {:.4}",
            r.epoch + 1,
            tc.epochs,
            r.lr,
            r.loss_total,
            r.loss_dice,
            r.loss_ce,
            r.train_dice
        );
    })?;
    Ok((outcome, model.param_count()))
}

pub fn train(a: &TrainArgs) -> Outcome {
    let (mc, tc) = resolve(&a.config)?;
    mc.validate()?;
    tc.validate_for(mc.size_divisor())?;
    let raw = load_split(&a.data, "train")?;
    prepare_out(&a.out, a.force)?;
    let mut kv = KvMap::new();
    kv.insert("data", a.data.display());
    kv.merge(&prefixed("model.", &mc.to_kv()));
    kv.merge(&prefixed("train.", &tc.to_kv()));
    write_effective(&a.out, "train", kv)?;

    let st = fit_norm_stats(&raw)?;
    st.save(&a.out.join(stats::FILE))?;
    let train_set = normalized(&raw, &st)?;
    let (outcome, params) = match tc.dtype {
        DType::F64 => fit_and_save::<f64>(&mc, &tc, &train_set, &a.out),
        _ => fit_and_save::<f32>(&mc, &tc, &train_set, &a.out),
    }?;
    for sub in ["best", "final"] {
        st.save(&a.out.join(sub).join(stats::FILE))?;
    }
    println!(
        "trained {} ({params} parameters) for {} epochs; best train_dice {:.4} at epoch {}",
        mc.fusion_op,
        tc.epochs,
        outcome.best_train_dice,
        outcome.best_epoch + 1
    );
    Ok(())
}

/// A checkpoint of either floating dtype with its normalization stats.
enum Loaded {
    F32(Model<f32>),
    F64(Model<f64>),
}

fn load_model(dir: &Path) -> Outcome<(Loaded, NormStats)> {
    let manifest = read_manifest(dir)?;
    let model = match manifest.get("dtype") {
        Some("f64") => Loaded::F64(load_checkpoint::<f64>(dir)?.0),
        Some("f32") => Loaded::F32(load_checkpoint::<f32>(dir)?.0),
        other => {
            return Err(Failure::Runtime(format!(
                "{}: unsupported checkpoint dtype {other:?}",
                dir.display()
            )))
        }
    };
    let st = NormStats::load(&dir.join(stats::FILE))?;
    Ok((model, st))
}

impl Loaded {
    fn predict(&self, s: &Sample, st: &NormStats) -> Outcome<Tensor<u8>> {
        Ok(match self {
            Loaded::F32(m) => predict_mask(m, s, st)?,
            Loaded::F64(m) => predict_mask(m, s, st)?,
        })
    }
}

fn summary(r: &EvalReport) -> String {
    format!(
        "{} samples: dice {:.4} ± {:.4}, iou {:.4} ± {:.4}",
        r.per_sample.len(),
        r.mean_dice,
        r.std_dice,
        r.mean_iou,
        r.std_iou
    )
}

pub fn eval(a: &EvalArgs) -> Outcome {
    let samples = load_split(&a.data, &a.split)?;
    let preds: Vec<Tensor<u8>> = match (&a.checkpoint, &a.predictions) {
        (Some(ckpt), _) => {
            let (model, st) = load_model(ckpt)?;
            samples.iter().map(|s| model.predict(s, &st)).collect::<Outcome<_>>()?
        }
        (None, Some(dir)) => samples
            .iter()
            .map(|s| qts::read::<u8>(dir.join(format!("{}.qts", s.id))).map_err(|e| Failure::Runtime(e.to_string())))
            .collect::<Outcome<_>>()?,
        (None, None) => return Err(Failure::usage("pass --checkpoint or --predictions")),
    };
    let report = evaluate_masks(&preds, &samples)?;
    prepare_out(&a.out, a.force)?;
    let mut kv = KvMap::new();
    kv.insert("data", a.data.display());
    kv.insert("split", &a.split);
    if let Some(c) = &a.checkpoint {
        kv.insert("checkpoint", c.display());
        let pred_dir = a.out.join("predictions");
        fs::create_dir_all(&pred_dir).map_err(|e| Failure::Runtime(format!("{}: {e}", pred_dir.display())))?;
        for (s, p) in samples.iter().zip(&preds) {
            qts::write(pred_dir.join(format!("{}.qts", s.id)), p).map_err(|e| Failure::Runtime(e.to_string()))?;
        }
    }
    if let Some(p) = &a.predictions {
        kv.insert("predictions", p.display());
    }
    write_effective(&a.out, "eval", kv)?;
    write_text(&a.out.join("eval.csv"), report.to_csv())?;
    println!("{}", summary(&report));
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> Outcome {
    let (mc, tc) = resolve(&a.config)?;
    if a.jobs == 0 {
        return Err(Failure::usage("--jobs must be at least 1"));
    }
    let data = Dataset::load(&a.data)?;
    prepare_out(&a.out, a.force)?;
    let mut kv = KvMap::new();
    kv.insert("data", a.data.display());
    kv.insert("mode", a.mode);
    kv.insert("jobs", a.jobs);
    kv.merge(&prefixed("model.", &mc.to_kv()));
    kv.merge(&prefixed("train.", &tc.to_kv()));
    write_effective(&a.out, "ablate", kv)?;
    let matrix = run_matrix(a.mode, &mc, &tc, &data, a.jobs)?;
    matrix.write(&a.out)?;
    print!("{}", matrix.to_csv());
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Outcome {
    if !(a.tol > 0.0 && a.composite_tol > 0.0) {
        return Err(Failure::usage("tolerances must be positive"));
    }
    let reports = verify::full_suite(a.tol, a.composite_tol)?;
    let mut csv = String::from("check,max_rel_err,tol,checked,passed\n");
    for r in &reports {
        println!(
            "{:<6} {:<40} {:.3e} (tol {:.0e}, {} entries)",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.max_rel_err,
            r.tol,
            r.checked
        );
        csv.push_str(&format!("{},{},{},{},{}\n", r.name, r.max_rel_err, r.tol, r.checked, r.passed()));
    }
    if let Some(dir) = &a.out {
        prepare_out(dir, a.force)?;
        let mut kv = KvMap::new();
        kv.insert("tol", a.tol);
        kv.insert("composite_tol", a.composite_tol);
        write_effective(dir, "gradcheck", kv)?;
        write_text(&dir.join("gradcheck.csv"), csv)?;
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} of {} gradient checks failed", reports.len())));
    }
    println!("all {} gradient checks passed", reports.len());
    Ok(())
}

pub fn overlay(a: &OverlayArgs) -> Outcome {
    let samples = load_split(&a.data, &a.split)?;
    let (model, st) = load_model(&a.checkpoint)?;
    prepare_out(&a.out, a.force)?;
    let mut kv = KvMap::new();
    kv.insert("data", a.data.display());
    kv.insert("split", &a.split);
    kv.insert("checkpoint", a.checkpoint.display());
    write_effective(&a.out, "overlay", kv)?;
    for s in &samples {
        let pred = model.predict(s, &st)?;
        // Background: the phase map as the network sees it, in [0,1].
        let phase = st.normalize_phase(&s.phase)?;
        let img = render_overlay(&pred, &s.mask, &phase)?;
        let c = Confusion::new(pred.data(), s.mask.data());
        write_text(&a.out.join(format!("overlay_{}.ppm", s.id)), img.to_ppm())?;
        write_text(&a.out.join(format!("overlay_{}.txt", s.id)), annotation(&s.id, &c))?;
    }
    println!("wrote {} overlays to {}", samples.len(), a.out.display());
    Ok(())
}
