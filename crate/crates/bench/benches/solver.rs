use criterion::{criterion_group, criterion_main, Criterion};

use bcosb::channel::{synth_channel, whiten};
use bcosb::config::desk_grid;
use bcosb::solver::default_psd_grid;
use bcosb::{
    per_tone_lagrangian_max, solve_per_modem, solve_total_power, BandPlan, NoiseSpec, PowerBudget, ScenarioSpec,
    SolverParams, WeightVector,
};

fn params() -> SolverParams {
    SolverParams { psd_grid: default_psd_grid(desk_grid().spacing_hz), eps_power_rel: 1e-3, ..SolverParams::default() }
}

fn per_tone(c: &mut Criterion) {
    let grid = desk_grid();
    let channel = synth_channel(&ScenarioSpec::default(), &grid).unwrap();
    let white = whiten(&channel, &NoiseSpec::default(), &grid).unwrap();
    let blocks = white.user_blocks(40);
    let w = WeightVector::pair(0.6).unwrap();
    let p = params();
    c.bench_function("per_tone_grid_search_2x2", |b| {
        b.iter(|| per_tone_lagrangian_max(&blocks, &w, 1.0, &p).unwrap())
    });
}

fn solves(c: &mut Criterion) {
    let grid = desk_grid();
    let plan = BandPlan::full(&grid);
    let channel = synth_channel(&ScenarioSpec::default(), &grid).unwrap();
    let noise = NoiseSpec::default();
    let w = WeightVector::pair(0.6).unwrap();
    let p = params();
    let total = PowerBudget::total_dbm(17.5).unwrap();
    let per_modem = PowerBudget::per_modem_dbm(&[14.5, 14.5]).unwrap();

    let mut group = c.benchmark_group("desk_128_tones");
    group.sample_size(10);
    group.bench_function("total_power", |b| {
        b.iter(|| solve_total_power(&channel, &noise, &grid, &plan, &w, &total, &p).unwrap())
    });
    group.bench_function("per_modem", |b| {
        b.iter(|| solve_per_modem(&channel, &noise, &grid, &plan, &w, &per_modem, &p).unwrap())
    });
    group.finish();
}

criterion_group!(benches, per_tone, solves);
criterion_main!(benches);
