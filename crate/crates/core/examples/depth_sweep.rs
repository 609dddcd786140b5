//! Trains one model per recurrence depth L = 1..4 on a synthetic language
//! pair and prints training perplexity against update step as TSV, one
//! column per depth. The runs share a seed and run in parallel.
//!
//! ```text
//! cargo run --release --example depth_sweep -- [steps] > depth_sweep.tsv
//! ```

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rhnmt::data::{encode_corpus, EncodedPair, VocabOptions, Vocabulary};
use rhnmt::metrics::corpus_perplexity;
use rhnmt::model::{ModelConfig, NmtModel};
use rhnmt::train::{train, TrainingConfig, TrainingLog};

/// Word-for-word translation through a fixed lexicon, with adjacent words
/// swapped on the target side.
fn toy_pairs(size: usize, seed: u64) -> rhnmt::Result<(usize, usize, Vec<EncodedPair>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lexicon: HashMap<usize, usize> = (0..20).map(|i| (i, (i * 7 + 3) % 20)).collect();
    let lines: Vec<(String, String)> = (0..size)
        .map(|_| {
            let src: Vec<usize> = (0..rng.random_range(3..=8)).map(|_| rng.random_range(0..20)).collect();
            let mut tgt: Vec<usize> = src.iter().map(|w| lexicon[w]).collect();
            tgt.chunks_mut(2).for_each(|p| p.reverse());
            let join = |ws: &[usize], p: &str| ws.iter().map(|w| format!("{p}{w}")).collect::<Vec<_>>().join(" ");
            (join(&src, "s"), join(&tgt, "t"))
        })
        .collect();
    let opts = VocabOptions::default();
    let src = Vocabulary::build(lines.iter().map(|(s, _)| s.as_str()), &opts)?;
    let tgt = Vocabulary::build(lines.iter().map(|(_, t)| t.as_str()), &opts)?;
    Ok((src.len(), tgt.len(), encode_corpus(&lines, &src, &tgt, 100)))
}

fn run(depth: usize, pairs: &[EncodedPair], vocab: (usize, usize), steps: usize) -> rhnmt::Result<(TrainingLog, f64)> {
    let config = ModelConfig {
        hidden: 32,
        depth,
        layers: 1,
        src_vocab_size: vocab.0,
        tgt_vocab_size: vocab.1,
        coupled_carry: false,
        dropout: 0.2,
        beta: 0.1,
    };
    let mut model = NmtModel::new(config, 11)?;
    let training = TrainingConfig {
        epochs: usize::MAX,
        max_steps: Some(steps),
        ..TrainingConfig::default()
    };
    let log = train(&mut model, pairs, None, &training, &mut ())?;
    Ok((log, corpus_perplexity(&model, pairs, 32)?))
}

fn main() -> rhnmt::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let (src_len, tgt_len, pairs) = toy_pairs(500, 3)?;
    let runs: Vec<(TrainingLog, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = (1..=4)
            .map(|depth| {
                let pairs = &pairs;
                s.spawn(move || run(depth, pairs, (src_len, tgt_len), steps))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect::<Vec<_>>()
    })
    .into_iter()
    .collect::<rhnmt::Result<_>>()?;

    println!("step\tL=1\tL=2\tL=3\tL=4");
    for i in (0..steps).step_by(25).chain([steps - 1]) {
        let cols: Vec<String> = runs
            .iter()
            .map(|(log, _)| format!("{:.4}", log.steps[i].perplexity))
            .collect();
        println!("{}\t{}", i + 1, cols.join("\t"));
    }
    for (depth, (_, ppl)) in runs.iter().enumerate() {
        eprintln!("L={}: final training-set perplexity {ppl:.4}", depth + 1);
    }
    Ok(())
}
