//! Solve viscous Burgers from a random initial condition with the
//! pseudo-spectral RK4 solver and cross-check against Crank-Nicolson.
//!
//! cargo run --release --example burgers_oracle -- [out.bin]

use madpde::grf::{sample_grf, GrfSpec};
use madpde::oracles::{burgers_crank_nicolson, burgers_solve, relative_l2, ReferenceField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> madpde::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let u0 = sample_grf(&GrfSpec::burgers(), &mut rng)?;
    let spectral = burgers_solve(&u0, 0.01, 512, 10)?;
    let cn = burgers_crank_nicolson(&u0, 0.01, 512, 10, 2e-4)?;
    println!("spectral vs Crank-Nicolson relative L2: {:.3e}", relative_l2(&cn.values, &spectral.values)?);

    let nt1 = spectral.axes[1].points.len();
    for n in [0, nt1 / 2, nt1 - 1] {
        let slice: Vec<f64> = (0..spectral.axes[0].points.len()).map(|j| spectral.values[j * nt1 + n]).collect();
        let max = slice.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mean = slice.iter().sum::<f64>() / slice.len() as f64;
        println!("t = {:.2}: max |u| {max:.4}, mean {mean:+.6}", spectral.axes[1].points[n]);
    }

    if let Some(path) = std::env::args().nth(1) {
        spectral.save(path.as_ref())?;
        let back = ReferenceField::load(path.as_ref())?;
        println!("saved and reloaded {} values to {path}", back.values.len());
    }
    Ok(())
}
