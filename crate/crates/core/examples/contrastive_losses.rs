//! Evaluates the supervised contrastive, NT-Xent and cross-entropy losses
//! on small hand-made batches, with their gradients.
//!
//! cargo run --example contrastive_losses

use automac::losses::{cross_entropy_loss, ntxent_loss, supcon_loss};
use ndarray::array;

fn main() -> automac::Result<()> {
    let z = array![[1.0f32, 0.1], [0.9, 0.2], [-0.1, 1.0], [0.0, 0.8]];
    for tau in [0.07, 0.5, 1.0] {
        let grouped = supcon_loss(z.view(), &[0, 0, 1, 1], tau)?;
        let mixed = supcon_loss(z.view(), &[0, 1, 0, 1], tau)?;
        println!("supcon tau {tau}: aligned labels {:.4}, crossed labels {:.4}", grouped.loss, mixed.loss);
    }

    let a = array![[1.0f32, 0.0], [0.0, 1.0]];
    let b = array![[0.9f32, 0.1], [0.1, 0.9]];
    let nt = ntxent_loss(a.view(), b.view(), 0.5)?;
    println!("nt-xent over two pairs: {:.4}, gradient rows {}", nt.loss, nt.grad.nrows());

    let logits = array![[2.0f32, 0.5, -1.0], [0.1, 0.2, 3.0]];
    let ce = cross_entropy_loss(logits.view(), &[0, 2])?;
    println!("cross-entropy: {:.4}", ce.loss);
    Ok(())
}
