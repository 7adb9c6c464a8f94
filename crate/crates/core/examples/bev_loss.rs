//! Evaluates the combined training loss on a random instance and checks
//! its analytic gradients with finite differences.

use bevlift::bev_loss::{bev_loss, LossWeights};
use bevlift::gradcheck::{grad_check, random_loss_inputs};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> bevlift::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let inputs = random_loss_inputs(&mut rng)?;
    let loss = bev_loss(&inputs, &LossWeights::default())?;
    println!(
        "seg {:.5}  obj {:.5}  depth {:.5}  consistency {:.5}  reg {:.5}  total {:.5}",
        loss.seg, loss.obj, loss.depth, loss.consistency, loss.reg, loss.total
    );

    for row in grad_check(0, 20)? {
        println!(
            "{:<15} checked {:4} skipped {:2} max error {:.2e}",
            row.component, row.checked, row.skipped, row.max_rel_error
        );
    }
    Ok(())
}
