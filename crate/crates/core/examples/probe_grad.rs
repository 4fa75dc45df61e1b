//! Temporary probe: which fixture seeds hit finite-difference kinks at eps=1e-5.

use ruletwin::model::{gradient_check, init_module, ModuleArch};

fn main() {
    let arch = ModuleArch {
        conv_filters: [2, 3, 4, 4],
        kernel: 3,
        dense_units: 6,
        head_width: 5,
    };
    let smooth = |len: usize, phase: f32| -> Vec<f32> {
        (0..len)
            .map(|i| ((i as f32 * 0.7 + phase).sin() * 0.45 + 0.5).clamp(0.0, 1.0))
            .collect()
    };
    for seed in 0..40u64 {
        let module = init_module(&arch, 24, 16, 1000 + seed).unwrap();
        let b1 = smooth(24, seed as f32 * 0.31);
        let b2 = smooth(16, seed as f32 * 1.17 + 0.5);
        let report = gradient_check(&module, &b1, &b2, (seed % 4) as usize, 1e-5).unwrap();
        println!("seed {seed:2}  max_rel_err {:.3e}", report.max_relative_error);
    }
}
