//! Greedy and beam search over a hand-written next-token table where the
//! greedy choice is a trap: `a` is likeliest first, but `b <eos>` is the
//! best sequence once scores are normalized by length.
//!
//! ```text
//! cargo run --example beam_search
//! ```

use std::collections::HashMap;

use rhnmt::decode::{beam_decode, greedy_decode, BeamConfig, StepModel, StepOutput};

const NAMES: [&str; 6] = ["<pad>", "<unk>", "<sos>", "<eos>", "a", "b"];

/// Next-token probabilities keyed by everything emitted so far.
struct Table(HashMap<Vec<usize>, [f64; 3]>);

impl StepModel for Table {
    type State = Vec<usize>;

    fn vocab_size(&self) -> usize {
        NAMES.len()
    }

    fn initial_state(&self) -> Vec<usize> {
        Vec::new()
    }

    fn step(&self, prev: &[usize], states: &[Vec<usize>]) -> rhnmt::Result<StepOutput<Vec<usize>>> {
        let mut rows = Vec::new();
        let mut next = Vec::new();
        for (state, &p) in states.iter().zip(prev) {
            let mut emitted = state.clone();
            if p != rhnmt::data::SOS {
                emitted.push(p);
            }
            let [eos, a, b] = self.0.get(&emitted).copied().unwrap_or([0.5, 0.25, 0.25]);
            let tiny: f64 = 1e-4;
            let z = (eos + a + b) / (1.0 - 3.0 * tiny);
            rows.push(vec![
                tiny.ln(),
                tiny.ln(),
                tiny.ln(),
                (eos / z).ln(),
                (a / z).ln(),
                (b / z).ln(),
            ]);
            next.push(emitted);
        }
        Ok((rows, next))
    }
}

fn show(tokens: &[usize]) -> String {
    if tokens.is_empty() {
        return "(empty)".into();
    }
    tokens.iter().map(|&t| NAMES[t]).collect::<Vec<_>>().join(" ")
}

fn main() -> rhnmt::Result<()> {
    let table = Table(HashMap::from([
        (vec![], [0.1, 0.5, 0.4]),
        (vec![4], [0.3, 0.35, 0.35]),
        (vec![5], [0.9, 0.05, 0.05]),
        (vec![4, 4], [0.6, 0.2, 0.2]),
        (vec![4, 5], [0.2, 0.1, 0.7]),
    ]));
    let greedy = greedy_decode(&table, 3)?;
    println!("greedy: {:<8} log p {:.4}", show(&greedy.tokens), greedy.log_prob);
    for beam_width in [2, 5] {
        println!("beam width {beam_width}:");
        for d in beam_decode(&table, BeamConfig { beam_width, max_len: 3 })? {
            println!(
                "  {:<8} log p {:8.4}  per step {:8.4}",
                show(&d.tokens),
                d.log_prob,
                d.log_prob / d.steps() as f64
            );
        }
    }
    Ok(())
}
