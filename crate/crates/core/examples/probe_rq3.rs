use std::time::Instant;

use ruletwin::experiment::{render_rq3, run_rq3, ExperimentPreset};

fn main() {
    let name = std::env::var("PRESET").unwrap_or_else(|_| "s1t1".into());
    let repeats: usize = std::env::var("REPEATS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(3);
    let preset = ExperimentPreset::named(&name).unwrap();
    let t0 = Instant::now();
    let report = run_rq3(std::slice::from_ref(&preset), &[100, 200, 400, 800], repeats).unwrap();
    println!("{}", render_rq3(&report));
    for cell in &report.presets[0].sizes {
        println!(
            "size {:>4}: f1 per repeat {:?}",
            cell.candidate_size, cell.per_repeat_f1
        );
    }
    println!("total: {:.1}s", t0.elapsed().as_secs_f64());
}
