//! Trains the same model under several reconstruction weights and reports
//! the decoder loss, the reconstruction loss and their weighted total.
//!
//! ```text
//! cargo run --release --example beta_sweep
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rhnmt::data::{encode_corpus, VocabOptions, Vocabulary};
use rhnmt::model::{ModelConfig, NmtModel};
use rhnmt::train::{train, TrainingConfig};

fn main() -> rhnmt::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let lines: Vec<(String, String)> = (0..200)
        .map(|_| {
            let len = rng.random_range(3..=7);
            let src: Vec<usize> = (0..len).map(|_| rng.random_range(0..12)).collect();
            let s = src.iter().map(|w| format!("x{w}")).collect::<Vec<_>>().join(" ");
            let t = src.iter().rev().map(|w| format!("y{w}")).collect::<Vec<_>>().join(" ");
            (s, t)
        })
        .collect();
    let opts = VocabOptions::default();
    let src = Vocabulary::build(lines.iter().map(|(s, _)| s.as_str()), &opts)?;
    let tgt = Vocabulary::build(lines.iter().map(|(_, t)| t.as_str()), &opts)?;
    let pairs = encode_corpus(&lines, &src, &tgt, 100);

    println!("{:>5} {:>10} {:>9} {:>9} {:>9}", "beta", "params", "L_d", "L_r", "L");
    for beta in [0.0, 0.1, 0.5, 1.0] {
        let config = ModelConfig {
            hidden: 32,
            depth: 2,
            layers: 1,
            src_vocab_size: src.len(),
            tgt_vocab_size: tgt.len(),
            coupled_carry: false,
            dropout: 0.0,
            beta,
        };
        let mut model = NmtModel::new(config, 4)?;
        let training = TrainingConfig {
            dropout: 0.0,
            beta,
            epochs: 40,
            ..TrainingConfig::default()
        };
        let log = train(&mut model, &pairs, None, &training, &mut ())?;
        let tail = &log.steps[log.steps.len() - 7..];
        let mean = |f: fn(&rhnmt::train::StepRecord) -> f64| tail.iter().map(f).sum::<f64>() / tail.len() as f64;
        println!(
            "{beta:>5} {:>10} {:>9.4} {:>9.4} {:>9.4}",
            model.count_parameters(),
            mean(|r| r.l_d),
            mean(|r| r.l_r),
            mean(|r| r.total)
        );
    }
    Ok(())
}
