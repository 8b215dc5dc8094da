use acrsc::reg::QuadraticTestRegularizer;
use acrsc::solve::rate::{log_grid, rate_sweep, RateSweepCase};

fn main() {
    for seed in 1u64..=20 {
        let deltas = log_grid(1e-3, 1e-1, 9);
        let mut case = RateSweepCase::quadratic_seeded(48, 64, deltas, 0.5, seed).unwrap();
        case.noise_dir = None;
        let cfg = case.default_solve_config();
        let res = rate_sweep(&case, &QuadraticTestRegularizer, &cfg).unwrap();
        println!("seed {seed}: slope {:.4}", res.slope);
    }
}
