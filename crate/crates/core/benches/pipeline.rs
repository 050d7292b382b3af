use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use eras_core::exec::ExecMode;
use eras_core::pipeline::{analyze_windows, index_panel, segment_all, PipelineConfig};
use eras_core::synth::{generate, SynthConfig};

fn bench_modes(c: &mut Criterion) {
    let panel = generate(&SynthConfig::default()).expect("synthetic panel");
    let cfg = PipelineConfig {
        lambdas: vec![8.0, 4.0, 2.0, 1.0],
        ..PipelineConfig::default()
    };

    let mut windows = c.benchmark_group("windows");
    for mode in [ExecMode::Sequential, ExecMode::Parallel] {
        windows.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| analyze_windows(&panel, &cfg.window, &cfg.coverage, mode).unwrap())
        });
    }
    windows.finish();

    let analyses = analyze_windows(&panel, &cfg.window, &cfg.coverage, ExecMode::Sequential).unwrap();
    let indices = index_panel(&analyses, cfg.eccentricity).unwrap();
    let mut sweep = c.benchmark_group("lambda_sweep");
    sweep.sample_size(10);
    for mode in [ExecMode::Sequential, ExecMode::Parallel] {
        sweep.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| segment_all(&indices, &cfg, mode).unwrap())
        });
    }
    sweep.finish();
}

criterion_group!(benches, bench_modes);
criterion_main!(benches);
