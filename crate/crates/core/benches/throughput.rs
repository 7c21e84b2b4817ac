//! Episode-batch throughput: the work-stealing map against the sequential
//! fallback, on the batch shapes the trainer and the sweeps actually use.
//!
//! Build with `--no-default-features` to measure the fully sequential
//! build; by default the parallel path is compiled in and compared against
//! `map_indexed_seq` from the same binary.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use gridgame::exec;
use gridgame::rng::{child_seed, tag};
use gridgame::snfg::run_episode;
use gridgame::{Level0Attacker, Level0Defender, ScenarioParams};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn episode_mean(params: &ScenarioParams, seed: u64, steps: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut defender = Level0Defender::new(params);
    let mut attacker = Level0Attacker::new(params);
    let records = run_episode(params, 0.5, &mut defender, &mut attacker, steps, &mut rng).expect("level-0 episode");
    records.iter().map(|r| r.r_d).sum::<f64>() / records.len() as f64
}

fn bench_episode_batches(c: &mut Criterion) {
    let params = ScenarioParams::default();
    let steps = 100usize;
    let mut group = c.benchmark_group("episode_batches");
    group.sample_size(10);

    for &episodes in &[64usize, 512] {
        group.throughput(Throughput::Elements((episodes * steps) as u64));
        group.bench_with_input(BenchmarkId::new("default", episodes), &episodes, |b, &n| {
            b.iter(|| {
                let means = exec::map_indexed(n, |i| episode_mean(&params, child_seed(7, tag::SIMULATE, i as u64), steps));
                means.iter().sum::<f64>()
            })
        });
        group.bench_with_input(BenchmarkId::new("sequential", episodes), &episodes, |b, &n| {
            b.iter(|| {
                let means =
                    exec::map_indexed_seq(n, |i| episode_mean(&params, child_seed(7, tag::SIMULATE, i as u64), steps));
                means.iter().sum::<f64>()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_episode_batches);
criterion_main!(benches);
