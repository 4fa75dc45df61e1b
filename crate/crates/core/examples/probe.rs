use std::time::Instant;

use ruletwin::experiment::{build_world, evaluate_twin, ExperimentPreset};
use ruletwin::pipeline::{evolve, run_baseline, BaselineMode, EvolutionConfig, QueryClient};
use ruletwin::seed::derive_seed;

fn env_f(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}
fn env_u(name: &str, default: usize) -> usize {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let name = std::env::var("PRESET").unwrap_or_else(|_| "s1t1".into());
    let mut preset = ExperimentPreset::named(&name).unwrap();
    preset.finetune.epochs = env_u("FT_EPOCHS", preset.finetune.epochs);
    preset.finetune.learning_rate = env_f("FT_LR", preset.finetune.learning_rate);
    preset.pretrain.epochs = env_u("PT_EPOCHS", preset.pretrain.epochs);
    let repeats = env_u("REPEATS", 1);
    let extra_mult = env_f("EXTRA_MULT", 1.0);

    let t0 = Instant::now();
    let world = build_world(&preset).unwrap();
    println!("build_world: {:.1}s", t0.elapsed().as_secs_f64());

    for r in 0..repeats {
        let base_cfg = EvolutionConfig {
            search: preset.search.clone(),
            training: preset.finetune.clone(),
            budget: Some(preset.budget),
            seed: derive_seed(preset.seed, &format!("repeat/{r}")),
            ..EvolutionConfig::default()
        };
        let probe_extra = if (extra_mult - 1.0).abs() > 1e-9 {
            Some((preset.budget as f64 * 2.0 * extra_mult) as usize)
        } else {
            None
        };
        let cfg = EvolutionConfig { extra_sample_size: probe_extra, ..base_cfg };
        let client = QueryClient::in_process(world.target_rules.clone());
        let t1 = Instant::now();
        let (twin, report) =
            evolve(&world.source_twin, &world.diff, &client, &world.candidates, &cfg).unwrap();
        let evolve_secs = t1.elapsed().as_secs_f64();
        let bundle = evaluate_twin(&twin, &world.eval, &world.diff).unwrap();

        let nps = report.chosen.as_ref().unwrap().objectives.ss;
        let matched =
            EvolutionConfig { extra_sample_size: Some(report.sampled_size), ..cfg.clone() };
        let t3 = Instant::now();
        let (tfs_twin, _) = run_baseline(
            BaselineMode::Tfs,
            &world.source_twin,
            &world.diff,
            &QueryClient::in_process(world.target_rules.clone()),
            &world.candidates,
            &matched,
            nps,
        )
        .unwrap();
        let tfs_secs = t3.elapsed().as_secs_f64();
        let tfs = evaluate_twin(&tfs_twin, &world.eval, &world.diff).unwrap();
        let (ots_twin, _) = run_baseline(
            BaselineMode::Ots,
            &world.source_twin,
            &world.diff,
            &QueryClient::in_process(world.target_rules.clone()),
            &world.candidates,
            &matched,
            nps,
        )
        .unwrap();
        let ots = evaluate_twin(&ots_twin, &world.eval, &world.diff).unwrap();
        let (rs_twin, _) = run_baseline(
            BaselineMode::Rs,
            &world.source_twin,
            &world.diff,
            &QueryClient::in_process(world.target_rules.clone()),
            &world.candidates,
            &matched,
            nps,
        )
        .unwrap();
        let rs = evaluate_twin(&rs_twin, &world.eval, &world.diff).unwrap();
        let new_f1 = |b: &ruletwin::experiment::EvalBundle| -> f64 {
            let v: Vec<f64> = b.per_new_rule.iter().map(|(_, m)| m.macro_f1).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        println!(
            "r{r}: ss={} q={} | evo all={:.4} base={:.4} new={:.4} | tfs all={:.4} | ots base={:.4} | rs all={:.4} new={:.4} | gap_tfs={:+.4} gap_ots_base={:+.4} gap_rs={:+.4} | evolve {:.0}s tfs {:.0}s",
            nps,
            report.query_count,
            bundle.all.macro_f1,
            bundle.base.macro_f1,
            new_f1(&bundle),
            tfs.all.macro_f1,
            ots.base.macro_f1,
            rs.all.macro_f1,
            new_f1(&rs),
            bundle.all.macro_f1 - tfs.all.macro_f1,
            bundle.base.macro_f1 - ots.base.macro_f1,
            bundle.all.macro_f1 - rs.all.macro_f1,
            evolve_secs,
            tfs_secs,
        );
    }
    println!("total: {:.1}s", t0.elapsed().as_secs_f64());
}
