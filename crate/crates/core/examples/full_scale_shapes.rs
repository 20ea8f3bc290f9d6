//! Layer-by-layer activation shapes and parameter counts of both full-size
//! architectures, computed from the configuration without allocating weights.

use stvc::models::ModelConfig;

fn main() -> stvc::Result<()> {
    for cfg in [ModelConfig::cnn3d(), ModelConfig::convlstm2d()] {
        println!("{} (config hash {})", cfg.variant.name(), cfg.hash());
        for (name, shape) in cfg.trace_shapes()? {
            println!("  {name:<10} {shape:?}");
        }
        println!();
    }
    Ok(())
}
