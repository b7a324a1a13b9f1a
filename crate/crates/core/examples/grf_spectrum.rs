//! Sample Burgers initial conditions from the periodic Gaussian random field
//! and compare empirical mode variances with the covariance spectrum.
//!
//! cargo run --release --example grf_spectrum

use madpde::grf::{sample_grf, GrfSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> madpde::Result<()> {
    let spec = GrfSpec::burgers();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 4000;
    let samples: Vec<_> = (0..n).map(|_| sample_grf(&spec, &mut rng)).collect::<Result<_, _>>()?;
    println!("{:>4} {:>12} {:>12} {:>12}", "k", "analytic", "cos var", "sin var");
    for k in 0..=8 {
        let cos = samples.iter().map(|s| s.cos[k].powi(2)).sum::<f64>() / n as f64;
        let sin = if k == 0 {
            f64::NAN
        } else {
            samples.iter().map(|s| s.sin[k - 1].powi(2)).sum::<f64>() / n as f64
        };
        println!("{k:>4} {:>12.4e} {cos:>12.4e} {sin:>12.4e}", spec.mode_variance(k));
    }
    let u0 = &samples[0];
    let xs: Vec<String> = (0..8).map(|j| format!("{:+.3}", u0.evaluate_at(j as f64 / 8.0))).collect();
    println!("first sample at x = 0, 1/8, ..., 7/8: {}", xs.join(" "));
    Ok(())
}
