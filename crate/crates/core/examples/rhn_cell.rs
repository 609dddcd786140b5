//! Runs one RHN cell over a short random sequence and prints how the state
//! evolves, with and without coupled carry gates.
//!
//! ```text
//! cargo run --example rhn_cell
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rhnmt::rhn::{RhnCell, RhnCellConfig};
use rhnmt::{Graph, ParamStore, Tensor};

fn main() -> rhnmt::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs: Vec<Tensor> = (0..4).map(|_| Tensor::uniform(&[1, 3], 1.0, &mut rng)).collect();
    for coupled_carry in [false, true] {
        let mut store = ParamStore::new();
        let config = RhnCellConfig {
            input_size: 3,
            hidden_size: 5,
            depth: 3,
            coupled_carry,
        };
        let cell = RhnCell::new(&mut store, "cell", config, &mut rng)?;
        println!("coupled_carry = {coupled_carry}: {} parameters", cell.parameter_count());
        let mut g = Graph::new();
        let xs: Vec<_> = inputs.iter().map(|x| g.constant(x.clone())).collect();
        let s0 = g.constant(Tensor::zeros(&[1, 5]));
        for (t, s) in cell.unroll(&mut g, &store, &xs, s0)?.into_iter().enumerate() {
            let row: Vec<String> = g.value(s).data().iter().map(|v| format!("{v:+.4}")).collect();
            println!("  s_{} = [{}]", t + 1, row.join(", "));
        }
    }
    Ok(())
}
