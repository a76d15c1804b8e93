//! Kernel benchmarking: wall-clock matvec timings across methods, sizes and
//! precisions, with a packed-bytes memory model next to each measurement.
//!
//! Protocol: each measurement times `iters` matvec calls and keeps the best
//! of `runs` repetitions. Quantization of weights happens outside the timed
//! region (offline preprocessing); activation processing (fixed-point cast,
//! bitplane transpose, or per-call scaling) happens inside it.

use std::hint::black_box;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::baseline::{
    apply_f16_weights, apply_int_weights, prepare_f16_weights, prepare_int_weights,
    IntQuantConfig,
};
use crate::dense::Matrix;
use crate::engine::{pbatch_matvec, reference_float_matvec, PBatchConfig};
use crate::error::Result;
use crate::nn::activation_frac_bits;
use crate::quantizer::decompose_bitlayers;

/// Shortest acceptable timed run; below this the iteration count is raised.
const MIN_RUN_SECONDS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Float32,
    Float16,
    Int { bits: u32 },
    Pbatch { n: u32, k: u32 },
}

impl KernelKind {
    pub fn label(&self) -> String {
        match *self {
            KernelKind::Float32 => "Float32".into(),
            KernelKind::Float16 => "Float16".into(),
            KernelKind::Int { bits } => format!("Int{bits}"),
            KernelKind::Pbatch { n, k } => format!("PBatch-{n} (a={k})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub kernel: KernelKind,
    pub size: usize,
    pub iters: u64,
    pub runs: u32,
    pub best_seconds: f64,
    pub seconds_per_iter: f64,
    /// Bytes of the weight operand under this kernel's storage format.
    pub weight_bytes: u64,
    /// `float32 bytes / weight_bytes`; the ideal figure for `n`-bit layers
    /// plus a sign layer is `32 / (n + 1)` up to padding.
    pub mem_ratio_vs_float: f64,
    pub speedup_vs_float: f64,
    pub iters_adjusted: bool,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,size,iters,runs,best_seconds,seconds_per_iter,weight_bytes,mem_ratio_vs_float,speedup_vs_float,iters_adjusted\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.9},{:.9e},{},{:.4},{:.3},{}\n",
                r.kernel.label(),
                r.size,
                r.iters,
                r.runs,
                r.best_seconds,
                r.seconds_per_iter,
                r.weight_bytes,
                r.mem_ratio_vs_float,
                r.speedup_vs_float,
                r.iters_adjusted
            ));
        }
        out
    }

    pub fn format_table(&self) -> String {
        let mut out = format!(
            "{:<18} {:>6} {:>8} {:>12} {:>12} {:>10} {:>9}\n",
            "method", "size", "iters", "s/iter", "weight B", "mem x", "speedup"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<18} {:>6} {:>8} {:>12.3e} {:>12} {:>10.2} {:>9.2}{}\n",
                r.kernel.label(),
                r.size,
                r.iters,
                r.seconds_per_iter,
                r.weight_bytes,
                r.mem_ratio_vs_float,
                r.speedup_vs_float,
                if r.iters_adjusted { " *" } else { "" }
            ));
        }
        if self.rows.iter().any(|r| r.iters_adjusted) {
            out.push_str("* iteration count raised to meet timer resolution\n");
        }
        out
    }

    pub fn row(&self, kernel: KernelKind, size: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.kernel == kernel && r.size == size)
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub weight_bits: Vec<u32>,
    pub act_bits: Vec<u32>,
    pub iters: u64,
    pub runs: u32,
    pub seed: u64,
    /// Include the Float16/Int8/Int4/Int1 comparison rows.
    pub baselines: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![512, 1024, 2048, 4096],
            weight_bits: vec![1, 2, 4, 8],
            act_bits: vec![8, 16, 32],
            iters: 1000,
            runs: 10,
            seed: 0x5eed,
            baselines: true,
        }
    }
}

/// Time `iters` calls of `f`, best of `runs`; raises `iters` first if a probe
/// run is too short for the timer.
fn measure(mut f: impl FnMut(), iters: u64, runs: u32) -> (f64, u64, bool) {
    let mut iters = iters.max(1);
    let mut adjusted = false;
    loop {
        let t = Instant::now();
        for _ in 0..iters {
            f();
        }
        let secs = t.elapsed().as_secs_f64();
        if secs >= MIN_RUN_SECONDS || iters >= 1 << 24 {
            let mut best = secs;
            for _ in 1..runs {
                let t = Instant::now();
                for _ in 0..iters {
                    f();
                }
                best = best.min(t.elapsed().as_secs_f64());
            }
            return (best, iters, adjusted);
        }
        let factor = (MIN_RUN_SECONDS / secs.max(1e-9)).ceil() as u64;
        iters = (iters * factor.clamp(2, 1024)).min(1 << 24);
        adjusted = true;
    }
}

/// Benchmark float32/float16/integer baselines and packed bitlayer kernels
/// over square matrices of the given sizes.
pub fn bench_kernels(cfg: &BenchConfig) -> Result<BenchReport> {
    let mut report = BenchReport::default();
    for &size in &cfg.sizes {
        let mut rng = StdRng::seed_from_u64(cfg.seed ^ size as u64);
        let w = Matrix::from_vec(
            size,
            size,
            (0..size * size).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        )?;
        let x: Vec<f32> = (0..size).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let float_bytes = w.float_bytes();

        // float32 reference first: everything else reports speedup against it
        let (best, iters, adjusted) = measure(
            || {
                black_box(reference_float_matvec(black_box(&w), black_box(&x)).unwrap());
            },
            cfg.iters,
            cfg.runs,
        );
        let float_per_iter = best / iters as f64;
        report.rows.push(BenchRow {
            kernel: KernelKind::Float32,
            size,
            iters,
            runs: cfg.runs,
            best_seconds: best,
            seconds_per_iter: float_per_iter,
            weight_bytes: float_bytes,
            mem_ratio_vs_float: 1.0,
            speedup_vs_float: 1.0,
            iters_adjusted: adjusted,
        });

        if cfg.baselines {
            let f16 = prepare_f16_weights(&w);
            let (best, iters, adjusted) = measure(
                || {
                    black_box(apply_f16_weights(black_box(&f16), black_box(&x)).unwrap());
                },
                cfg.iters,
                cfg.runs,
            );
            report.rows.push(BenchRow {
                kernel: KernelKind::Float16,
                size,
                iters,
                runs: cfg.runs,
                best_seconds: best,
                seconds_per_iter: best / iters as f64,
                weight_bytes: f16.packed_bytes(),
                mem_ratio_vs_float: float_bytes as f64 / f16.packed_bytes() as f64,
                speedup_vs_float: float_per_iter / (best / iters as f64),
                iters_adjusted: adjusted,
            });
        }

        for bits in [8u32, 4, 1] {
            if !cfg.baselines {
                break;
            }
            let prep = prepare_int_weights(&w, IntQuantConfig::new(bits))?;
            let (best, iters, adjusted) = measure(
                || {
                    black_box(apply_int_weights(black_box(&prep), black_box(&x)).unwrap());
                },
                cfg.iters,
                cfg.runs,
            );
            report.rows.push(BenchRow {
                kernel: KernelKind::Int { bits },
                size,
                iters,
                runs: cfg.runs,
                best_seconds: best,
                seconds_per_iter: best / iters as f64,
                weight_bytes: prep.packed_bytes(),
                mem_ratio_vs_float: float_bytes as f64 / prep.packed_bytes() as f64,
                speedup_vs_float: float_per_iter / (best / iters as f64),
                iters_adjusted: adjusted,
            });
        }

        for &n in &cfg.weight_bits {
            let layer = decompose_bitlayers(&w, n, 16)?;
            for &k in &cfg.act_bits {
                let pcfg = PBatchConfig {
                    weight_bits: n,
                    activation_bits: k,
                    weight_frac_bits: 16,
                    activation_frac_bits: activation_frac_bits(k),
                };
                let (best, iters, adjusted) = measure(
                    || {
                        black_box(
                            pbatch_matvec(black_box(&layer), black_box(&x), black_box(&pcfg))
                                .unwrap(),
                        );
                    },
                    cfg.iters,
                    cfg.runs,
                );
                report.rows.push(BenchRow {
                    kernel: KernelKind::Pbatch { n, k },
                    size,
                    iters,
                    runs: cfg.runs,
                    best_seconds: best,
                    seconds_per_iter: best / iters as f64,
                    weight_bytes: layer.packed_bytes(),
                    mem_ratio_vs_float: float_bytes as f64 / layer.packed_bytes() as f64,
                    speedup_vs_float: float_per_iter / (best / iters as f64),
                    iters_adjusted: adjusted,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modeled_memory_ratios() {
        let cfg = BenchConfig {
            sizes: vec![64],
            weight_bits: vec![1, 7],
            act_bits: vec![8],
            iters: 2,
            runs: 1,
            seed: 1,
            baselines: true,
        };
        let report = bench_kernels(&cfg).unwrap();
        // cols = 64 is word-aligned, so the packed ratio is exactly 32/(n+1)
        let p1 = report.row(KernelKind::Pbatch { n: 1, k: 8 }, 64).unwrap();
        assert_eq!(p1.mem_ratio_vs_float, 16.0);
        let p7 = report.row(KernelKind::Pbatch { n: 7, k: 8 }, 64).unwrap();
        assert_eq!(p7.mem_ratio_vs_float, 4.0);
        let f = report.row(KernelKind::Float32, 64).unwrap();
        assert_eq!(f.speedup_vs_float, 1.0);
        assert_eq!(f.weight_bytes, 64 * 64 * 4);
    }

    #[test]
    fn tiny_iters_get_adjusted() {
        let cfg = BenchConfig {
            sizes: vec![64],
            weight_bits: vec![],
            act_bits: vec![],
            iters: 1,
            runs: 1,
            seed: 2,
            baselines: false,
        };
        let report = bench_kernels(&cfg).unwrap();
        let f = report.row(KernelKind::Float32, 64).unwrap();
        assert!(f.iters_adjusted, "a 64x64 matvec cannot fill 1 ms in one iteration");
        assert!(f.iters > 1);
        assert!(f.best_seconds >= MIN_RUN_SECONDS * 0.5);
    }

    #[test]
    fn csv_and_table_render() {
        let cfg = BenchConfig {
            sizes: vec![64],
            weight_bits: vec![2],
            act_bits: vec![8],
            iters: 2,
            runs: 1,
            seed: 3,
            baselines: true,
        };
        let report = bench_kernels(&cfg).unwrap();
        let csv = report.to_csv();
        assert!(csv.lines().count() > 3);
        assert!(csv.starts_with("method,size"));
        assert!(report.format_table().contains("PBatch-2 (a=8)"));
    }
}
