//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. `ACCEPTANCE_ONLY=6,8` restricts the run.

#[path = "../common/mod.rs"]
mod common;

use std::process::ExitCode;
use std::time::Instant;

use candle_core::Device;
use common::checks::{self, Check};
use common::smoke::{reconstruction_l2, smoke_config, smoke_data, train_steps, SMOKE_STEPS};
use rand::Rng;
use tsnet_core::dataio::Dataset;
use tsnet_core::networks::{BranchMode, CombineMode, Generator};
use tsnet_core::retarget::{RetargetJob, Retargeter};
use tsnet_core::trainer::{load_generator, StepMetrics, Trainer};

fn timed(limit_secs: f64, f: impl FnOnce() -> Check) -> Check {
    let start = Instant::now();
    let out = f()?;
    let secs = start.elapsed().as_secs_f64();
    if secs >= limit_secs {
        return Err(format!("{out}; took {secs:.1}s, limit {limit_secs}s"));
    }
    Ok(format!("{out} ({secs:.1}s)"))
}

fn finite(m: &[StepMetrics]) -> bool {
    m.iter().all(|m| {
        [m.d_loss, m.gan, m.vgg, m.fm, m.tra, m.gdl, m.total]
            .iter()
            .all(|v| v.is_finite())
    })
}

struct Smoke {
    trainer: Trainer,
    first_total: f64,
    final_total: f64,
    l2: f64,
}

fn smoke_run(
    branch: BranchMode,
    combine: CombineMode,
    tra: bool,
    data: &Dataset,
) -> Result<Smoke, String> {
    let mut cfg = smoke_config();
    cfg.branch_mode = branch;
    cfg.combine_mode = combine;
    if !tra {
        cfg.beta = 0.0;
    }
    let (t, m) = train_steps(&cfg, data, SMOKE_STEPS)?;
    if !finite(&m) {
        return Err(format!(
            "{branch:?}/{combine:?}/tra={tra}: non-finite metrics"
        ));
    }
    let l2 = reconstruction_l2(t.generator(), data, cfg.k)?;
    if !l2.is_finite() {
        return Err(format!("{branch:?}/{combine:?}/tra={tra}: non-finite L2"));
    }
    Ok(Smoke {
        trainer: t,
        first_total: m[0].total,
        final_total: m[m.len() - 1].total,
        l2,
    })
}

fn overfit(s: &Result<Smoke, String>) -> Check {
    let s = s.as_ref().map_err(Clone::clone)?;
    let ratio = s.final_total / s.first_total;
    let msg = format!(
        "L2 {:.5} (< 0.01), total {:.3} -> {:.3}, ratio {:.3} (< 0.25)",
        s.l2, s.first_total, s.final_total, ratio
    );
    if s.l2 < 0.01 && ratio < 0.25 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn ablation(data: &Dataset, reference: &Result<Smoke, String>) -> Check {
    let mut l2 = std::collections::BTreeMap::new();
    let mut failures = Vec::new();
    for branch in [
        BranchMode::Dual,
        BranchMode::TransformOnly,
        BranchMode::SynthOnly,
    ] {
        for combine in [CombineMode::Concat, CombineMode::Matting] {
            for tra in [true, false] {
                let reused = branch == BranchMode::Dual && combine == CombineMode::Concat && tra;
                let run = if reused {
                    reference.as_ref().map(|s| s.l2).map_err(Clone::clone)
                } else {
                    smoke_run(branch, combine, tra, data).map(|s| s.l2)
                };
                match run {
                    Ok(v) => {
                        eprintln!("  ablation {branch:?}/{combine:?}/tra={tra}: L2 {v:.5}");
                        l2.insert((format!("{branch:?}"), format!("{combine:?}"), tra), v);
                    }
                    Err(e) => failures.push(e),
                }
            }
        }
    }
    if !failures.is_empty() {
        return Err(failures.join("; "));
    }
    let key = |tra| ("TransformOnly".to_string(), "Concat".to_string(), tra);
    let (with, without) = (l2[&key(true)], l2[&key(false)]);
    let msg =
        format!("12 configs finite; transform_only L2 without TRA {without:.5} vs with {with:.5}");
    if without > with {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn resume_determinism(data: &Dataset) -> Check {
    let e2s = |e: tsnet_core::Error| e.to_string();
    let cfg = smoke_config();
    let (full, all) = train_steps(&cfg, data, 100)?;
    let (mut first, _) = train_steps(&cfg, data, 50)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ckpt = dir.path().join("step50.safetensors");
    first.save_checkpoint(&ckpt).map_err(e2s)?;
    let mut resumed = Trainer::load_checkpoint(&ckpt, &Device::Cpu).map_err(e2s)?;
    let rest = resumed.run_steps(data, 50, |_| Ok(())).map_err(e2s)?;
    if rest[..] != all[50..] {
        let i = rest
            .iter()
            .zip(&all[50..])
            .position(|(a, b)| a != b)
            .unwrap_or(0);
        return Err(format!(
            "step {} differs: {:?} vs {:?}",
            50 + i,
            rest[i],
            all[50 + i]
        ));
    }

    let final_ckpt = dir.path().join("final.safetensors");
    resumed.save_checkpoint(&final_ckpt).map_err(e2s)?;
    let (loaded, _) = load_generator(&final_ckpt, &Device::Cpu).map_err(e2s)?;
    let job = RetargetJob {
        subject: &data.clips[0],
        driving: &data.clips[1],
        k: cfg.k,
        seed: 17,
        normalize: true,
        style: data.style,
    };
    let outputs = [
        full.generator(),
        resumed.generator(),
        &loaded,
        full.generator(),
    ]
    .iter()
    .map(|g| g.retarget(&job).map(|o| o.frames))
    .collect::<Result<Vec<_>, _>>()
    .map_err(e2s)?;
    if outputs.windows(2).any(|w| w[0] != w[1]) {
        return Err("retargeted frames differ between runs".into());
    }
    Ok(format!(
        "steps 50..100 identical after resume; {} retargeted frames bit-identical",
        outputs[0].len()
    ))
}

fn mask_only(g: &Generator, data: &Dataset) -> Check {
    let mut r = common::rng(99);
    let mut frames = 0;
    for (s, d) in [(0, 1), (1, 0)] {
        let driving = &data.clips[d];
        let mut noisy = driving.clone();
        for f in &mut noisy.frames {
            for v in f.data_mut() {
                *v = r.random();
            }
        }
        let job = |driving| RetargetJob {
            subject: &data.clips[s],
            driving,
            k: g.config().k,
            seed: 3,
            normalize: true,
            style: data.style,
        };
        let a = g.retarget(&job(driving)).map_err(|e| e.to_string())?;
        let b = g.retarget(&job(&noisy)).map_err(|e| e.to_string())?;
        if a.frames != b.frames {
            return Err(format!(
                "noise in clip {} changed the output",
                driving.clip_id
            ));
        }
        frames += a.frames.len();
    }
    Ok(format!(
        "{frames} cross-identity frames unchanged under driving noise"
    ))
}

fn main() -> ExitCode {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut failed = 0;
    let mut report = |n: u32, name: &str, c: Check| match c {
        Ok(msg) => println!("PASS {n} {name}: {msg}"),
        Err(msg) => {
            failed += 1;
            println!("FAIL {n} {name}: {msg}");
        }
    };

    if wanted(1) {
        report(
            1,
            "geometry oracles",
            timed(60.0, || checks::geometry_oracles(120, 1)),
        );
    }
    if wanted(2) {
        report(
            2,
            "mask-aware equivalence",
            checks::mask_aware_equivalence(50, 2),
        );
    }
    if wanted(3) {
        report(3, "gradient checks", checks::gradient_checks(10, 3));
    }
    if wanted(4) {
        report(4, "loss identities", checks::loss_identities(4));
    }
    if wanted(5) {
        report(
            5,
            "shape and limit invariants",
            checks::shape_and_limit_invariants(5),
        );
    }

    let data = smoke_data();
    let reference = if wanted(6) || wanted(7) || wanted(9) {
        let start = Instant::now();
        let r = smoke_run(BranchMode::Dual, CombineMode::Concat, true, &data);
        eprintln!("  smoke run took {:.1}s", start.elapsed().as_secs_f64());
        Some(r)
    } else {
        None
    };
    if wanted(6) {
        report(
            6,
            "overfit smoke test",
            overfit(reference.as_ref().unwrap()),
        );
    }
    if wanted(7) {
        report(
            7,
            "ablation matrix",
            ablation(&data, reference.as_ref().unwrap()),
        );
    }
    if wanted(8) {
        report(8, "pipeline determinism", resume_determinism(&data));
    }
    if wanted(9) {
        let c = match reference.as_ref().unwrap() {
            Ok(s) => mask_only(s.trainer.generator(), &data),
            Err(e) => Err(e.clone()),
        };
        report(9, "mask-only conditioning", c);
    }

    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
