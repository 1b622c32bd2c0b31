use std::path::PathBuf;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use h2jet::exec::{map_indexed, Execution};
use h2jet::experiment::{compare, CompareSpec, ScenarioData, TrainOverrides};
use h2jet::neural::Backbone;
use h2jet::oracle::{integrate, ScenarioConfig, StepControl};
use h2jet::scenario::parse_scenario;

const SCENARIOS: [&str; 3] = ["subsonic", "under_expanded_vertical", "under_expanded_horizontal"];

fn scenario(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.scn"));
    parse_scenario(&path).unwrap().config
}

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn bench_compare(c: &mut Criterion) {
    let data: Vec<ScenarioData> =
        SCENARIOS.iter().map(|n| ScenarioData::synthetic(scenario(n), 5, 20, 0.0, 0).unwrap()).collect();
    let overrides = TrainOverrides { epochs: Some(50), width: Some(10), ..Default::default() };
    let mut group = c.benchmark_group("compare_grid");
    group.sample_size(10);
    for (label, execution) in modes() {
        let spec = CompareSpec {
            scenarios: data.clone(),
            backbones: vec![Backbone::Graph, Backbone::Dense],
            seeds: vec![0, 1],
            overrides,
            execution,
        };
        group.bench_with_input(BenchmarkId::from_parameter(label), &spec, |b, spec| {
            b.iter(|| black_box(compare(spec).unwrap()))
        });
    }
    group.finish();
}

fn bench_oracle(c: &mut Criterion) {
    // The shipped scenarios at several step sizes.
    let work: Vec<(ScenarioConfig, StepControl)> = SCENARIOS
        .iter()
        .flat_map(|n| {
            let cfg = scenario(n);
            [1.0, 0.5, 0.25, 0.125].map(|f| {
                let mut ctrl = StepControl::for_scenario(&cfg);
                ctrl.h *= f;
                (cfg.clone(), ctrl)
            })
        })
        .collect();
    let mut group = c.benchmark_group("oracle_batch");
    group.sample_size(10);
    for (label, execution) in modes() {
        group.bench_function(label, |b| {
            b.iter(|| black_box(map_indexed(&work, execution, |(cfg, ctrl)| integrate(cfg, ctrl).unwrap().s_end())))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_compare, bench_oracle);
criterion_main!(benches);
