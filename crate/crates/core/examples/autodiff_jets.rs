//! Second-order input derivatives of a sine network through jets whose
//! coefficients live on the reverse-mode tape, and parameter gradients of a
//! loss built from them.
//!
//! cargo run --release --example autodiff_jets

use madpde::diffcore::Tape;
use madpde::network::{
    coords_from_points, forward, init_siren, Activation, Direction, InputEncoding, LatentVector, NetworkConfig,
    TapedModel, Trainable,
};

fn main() -> madpde::Result<()> {
    let cfg = NetworkConfig {
        input_dim: 2,
        latent_dim: 1,
        hidden_layers: 3,
        width: 16,
        output_dim: 1,
        activation: Activation::Sine,
        first_layer_omega: 3.0,
        input_encoding: InputEncoding::Identity,
        output_scale: 1.0,
    };
    let params = init_siren(&cfg, 0);
    let z = LatentVector(vec![0.2]);
    let p = [0.3, 0.7];

    let mut tape = Tape::new();
    let model = TapedModel::register(&mut tape, &cfg, &params, &z, Trainable::ALL)?;
    let coords = coords_from_points(&[p.to_vec()]);
    let jets = model.forward_jets(&mut tape, coords.view(), &[Direction::second(0), Direction::second(1)])?;
    let u = &jets[0];

    let f = |x: f64, y: f64| forward(&params, &cfg, &[x, y], &z).map(|v| v[0]);
    let h = 1e-4;
    for axis in 0..2 {
        let e = |d: f64| if axis == 0 { (p[0] + d, p[1]) } else { (p[0], p[1] + d) };
        let (xp, yp) = e(h);
        let (xm, ym) = e(-h);
        let fd1 = (f(xp, yp)? - f(xm, ym)?) / (2.0 * h);
        let fd2 = (f(xp, yp)? - 2.0 * f(p[0], p[1])? + f(xm, ym)?) / (h * h);
        println!(
            "axis {axis}: d1 {:+.8} (fd {fd1:+.8})  d2 {:+.8} (fd {fd2:+.8})",
            tape.value(u.d1(axis)?)[[0, 0]],
            tape.value(u.d2(axis)?)[[0, 0]]
        );
    }

    // Laplacian squared, differentiated with respect to every weight and the latent.
    let lap = tape.add(u.d2(0)?, u.d2(1)?);
    let loss = tape.mean_square(lap);
    let mut wrt = model.param_vars();
    wrt.push(model.latent.expect("latent registered"));
    let grads = tape.gradient(loss, &wrt)?;
    let norm: f64 = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
    println!("(Δu)² = {:.6e}, gradient norm over {} parameter blocks = {norm:.6e}", tape.value(loss)[[0, 0]], grads.len());
    Ok(())
}
