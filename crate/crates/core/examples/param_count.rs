//! Prints the parameter count of every variant for the full and desk profiles.

use awgunet::model::{build_model, ModelConfig, Variant};

fn main() -> awgunet::Result<()> {
    for (profile, base) in [("full", ModelConfig::default()), ("desk", ModelConfig::desk())] {
        for v in Variant::ALL {
            let (_, store) = build_model::<f32>(&base.clone().with_variant(v))?;
            println!("{profile:<5} {:<4} {:>11} parameters in {} tensors", v.roman(), store.param_count(), store.len());
        }
    }
    Ok(())
}
