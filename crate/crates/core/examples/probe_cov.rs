//! Temporary probe: per-seed exhaustive-front coverage at nc=12.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ruletwin::dataset::{generate_messages, label_dataset, GenerateConfig};
use ruletwin::rules::generate::{generate_ruleset, RuleGenSpec};
use ruletwin::schema::default_schema;
use ruletwin::selection::{
    evaluate_solution, ibea_search, CandidateSet, DiversityMode, SearchConfig, Solution,
};

fn main() {
    let nc = 12usize;
    let schema = default_schema();
    let rules =
        generate_ruleset(&schema, &RuleGenSpec::new(3, [0.6, 0.4, 0.0], "oracle", 99)).unwrap();
    let data = generate_messages(
        &schema,
        Some(&rules),
        &GenerateConfig { count: nc, violation_rate: 0.4, seed: 99 ^ 0x9e37 },
    )
    .unwrap();
    let truth = label_dataset(&data, &rules).unwrap();
    // Predictions shaped like a trained twin's: a dominant mode that usually
    // agrees with the truth, with varying confidence.
    let mut rng = ChaCha8Rng::seed_from_u64(99 ^ 0x51ed);
    let predictions: Vec<Vec<[f64; 4]>> = (0..nc)
        .map(|i| {
            (0..3)
                .map(|r| {
                    let t = truth.labels[i][r].index();
                    let right = rng.gen_bool(0.85);
                    let mode = if right { t } else { (t + rng.gen_range(1..4)) % 4 };
                    let conf: f64 = if right {
                        rng.gen_range(0.8..0.97)
                    } else {
                        rng.gen_range(0.45..0.65)
                    };
                    let mut pv = [0.0f64; 4];
                    let mut rest = [0.0f64; 3];
                    let mut total = 0.0;
                    for x in rest.iter_mut() {
                        *x = rng.gen_range(0.05..1.0);
                        total += *x;
                    }
                    let mut k = 0;
                    for (c, p) in pv.iter_mut().enumerate() {
                        if c == mode {
                            *p = conf;
                        } else {
                            *p = (1.0 - conf) * rest[k] / total;
                            k += 1;
                        }
                    }
                    pv
                })
                .collect()
        })
        .collect();
    let cs = CandidateSet::build(
        data,
        rules.rule_ids(),
        predictions,
        truth.labels,
        DiversityMode::Divergence,
    )
    .unwrap();

    let mut all: Vec<[f64; 5]> = Vec::new();
    for mask in 1u32..1 << nc {
        if mask.count_ones() < 2 {
            continue;
        }
        let idx: Vec<usize> = (0..nc).filter(|b| mask >> b & 1 == 1).collect();
        let sol = Solution::from_indices(nc, &idx).unwrap();
        all.push(evaluate_solution(&sol, &cs).to_minimization());
    }
    let dominates = |a: &[f64; 5], b: &[f64; 5]| -> bool {
        a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
    };
    let mut pareto: Vec<[f64; 5]> = Vec::new();
    'outer: for v in &all {
        for other in &all {
            if dominates(other, v) {
                continue 'outer;
            }
        }
        if !pareto.contains(v) {
            pareto.push(*v);
        }
    }
    println!("pareto vectors: {}", pareto.len());

    for (pop, evals) in [(100usize, 10000usize), (100, 20000), (100, 30000), (200, 30000)] {
        let mut covs = Vec::new();
        for seed in 0..5u64 {
            let cfg = SearchConfig {
                population_size: pop,
                max_evaluations: evals,
                seed,
                ..SearchConfig::default()
            };
            let front = ibea_search(&cs, &cfg).unwrap();
            let vectors: Vec<[f64; 5]> =
                front.iter().map(|(_, o)| o.to_minimization()).collect();
            let covered = pareto
                .iter()
                .filter(|p| {
                    vectors
                        .iter()
                        .any(|v| v.iter().zip(p.iter()).all(|(a, b)| (a - b).abs() <= 1e-9))
                })
                .count();
            covs.push(covered as f64 / pareto.len() as f64);
        }
        covs.sort_by(f64::total_cmp);
        println!(
            "pop {pop:3} evals {evals:5}: coverages {:?} median {:.3}",
            covs.iter().map(|c| (c * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            covs[2]
        );
    }
}
