//! Parameter budgets: RHN cells by depth, and whole models for a few
//! configurations at the default vocabulary sizes.
//!
//! ```text
//! cargo run --example parameter_count
//! ```

use rhnmt::model::{ModelConfig, NmtModel};
use rhnmt::rhn::RhnCellConfig;

fn main() -> rhnmt::Result<()> {
    let n = 256;
    println!("{:>6} {:>12} {:>12}", "depth", "cell", "coupled");
    for depth in 1..=5 {
        let cell = |coupled_carry| RhnCellConfig {
            input_size: n,
            hidden_size: n,
            depth,
            coupled_carry,
        };
        println!(
            "{depth:>6} {:>12} {:>12}",
            cell(false).parameter_count(),
            cell(true).parameter_count()
        );
    }
    println!(
        "two depth-1 cells: {}",
        2 * RhnCellConfig {
            input_size: n,
            hidden_size: n,
            depth: 1,
            coupled_carry: false
        }
        .parameter_count()
    );

    println!();
    println!(
        "{:>6} {:>6} {:>6} {:>5} {:>12}",
        "hidden", "depth", "layers", "beta", "model"
    );
    for (hidden, depth, layers, beta) in [(128, 1, 2, 0.0), (128, 2, 2, 0.1), (256, 2, 2, 0.1), (256, 3, 1, 0.1)] {
        let config = ModelConfig {
            hidden,
            depth,
            layers,
            src_vocab_size: 17_000,
            tgt_vocab_size: 7_700,
            coupled_carry: false,
            dropout: 0.2,
            beta,
        };
        let model = NmtModel::new(config, 0)?;
        println!(
            "{hidden:>6} {depth:>6} {layers:>6} {beta:>5} {:>12}",
            model.count_parameters()
        );
    }
    Ok(())
}
