use pbatch_core::harness::{bench_kernels, BenchConfig};

fn main() {
    let cfg = BenchConfig {
        sizes: vec![4096],
        weight_bits: vec![1, 4, 8],
        act_bits: vec![32],
        iters: 20,
        runs: 2,
        seed: 1,
        baselines: true,
    };
    let report = bench_kernels(&cfg).unwrap();
    print!("{}", report.format_table());
}
