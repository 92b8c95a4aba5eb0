//! Trains a PINN on a registry problem and prints the error curve.
//!
//! Usage: `train PROBLEM DIM [STEPS] [BATCH] [WIDTH] [SHARE_BLOCK] [GPINN_WEIGHT GPINN_BATCH]`

use jetstorm_core::pinn::{pde_registry, train, LossSpec, ModelSpec, PinnModel, TrainConfig};

fn arg<T: std::str::FromStr>(args: &[String], i: usize) -> Option<T> {
    args.get(i).and_then(|s| s.parse().ok())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let name = args.get(1).map(String::as_str).unwrap_or("allen-cahn-2body");
    let dim: usize = arg(&args, 2).unwrap_or(100);
    let steps: usize = arg(&args, 3).unwrap_or(10_000);
    let batch: usize = arg(&args, 4).unwrap_or(16);
    let width: usize = arg(&args, 5).unwrap_or(128);
    let share: usize = arg(&args, 6).unwrap_or(0);
    let gpinn_weight: f64 = arg(&args, 7).unwrap_or(0.0);
    let gpinn_batch: Option<usize> = arg(&args, 8);

    let problem = pde_registry(name, dim, 0)?;
    let spec = ModelSpec::new(problem.input_len())
        .width(width)
        .share_block((share > 0).then_some(share))
        .spatial(dim);
    let mut model = PinnModel::new(spec, 0)?;
    let config = TrainConfig {
        steps,
        loss: LossSpec {
            batch: (batch < dim).then_some(batch),
            gpinn_weight,
            gpinn_batch,
            ..LossSpec::default()
        },
        ..TrainConfig::default()
    };
    let out = train(&mut model, &problem, &config, |row| {
        if let Some(e) = row.rel_l2 {
            println!(
                "step {:6}  loss {:.3e}  rel_l2 {:.3e}  {:.0} s",
                row.step,
                row.loss,
                e,
                row.wall_ms / 1e3
            );
        }
    })?;
    println!("final rel_l2 {:.4e}", out.final_rel_l2.unwrap_or(f64::NAN));
    Ok(())
}
