use std::time::Instant;

use ruletwin::experiment::{render_rq2, run_rq2, ExperimentPreset};

fn main() {
    let repeats: usize = std::env::var("REPEATS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(10);
    let presets = ExperimentPreset::all_standard();
    let t0 = Instant::now();
    let report = run_rq2(&presets, repeats).unwrap();
    println!("{}", render_rq2(&report));
    for block in &report.presets {
        let evo = &block.methods[0];
        let rs = &block.methods[1];
        let f1_cmp = block
            .comparisons
            .iter()
            .find(|c| c.metric == "macro_f1" && matches!(c.scope, ruletwin::metrics::MetricScope::All))
            .unwrap();
        println!(
            "{}: evo median {:.4} rs median {:.4} diff {:+.4} a12 {:.3} p {:.3}",
            block.preset.name,
            evo.all.median.macro_f1,
            rs.all.median.macro_f1,
            evo.all.median.macro_f1 - rs.all.median.macro_f1,
            f1_cmp.test.a12,
            f1_cmp.test.p_value,
        );
    }
    println!("total: {:.1}s", t0.elapsed().as_secs_f64());
}
