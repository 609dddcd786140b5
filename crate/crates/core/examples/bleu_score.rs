//! Corpus BLEU on whitespace-tokenized text, under both brevity variants.
//!
//! ```text
//! cargo run --example bleu_score
//! ```

use rhnmt::metrics::{corpus_bleu, tokenize_lines, Brevity};

fn main() -> rhnmt::Result<()> {
    let references = tokenize_lines(&["the cat sat on the mat", "there is a cat on the mat"]);
    let systems = [
        ("exact", vec!["the cat sat on the mat", "there is a cat on the mat"]),
        ("short", vec!["the cat sat", "there is a cat"]),
        ("garbled", vec!["the the the the", "mat the on cat"]),
        ("close", vec!["the cat sat on a mat", "there is a cat on the mat"]),
    ];
    for (name, lines) in systems {
        let candidates = tokenize_lines(&lines);
        let ratio = corpus_bleu(&candidates, &references, Brevity::Ratio)?;
        let standard = corpus_bleu(&candidates, &references, Brevity::Exponential)?;
        let p: Vec<String> = ratio.precisions.iter().map(|p| format!("{p:.3}")).collect();
        println!(
            "{name:>8}: BLEU {:.4} (brevity {:.3}), exponential brevity {:.4}, precisions [{}]",
            ratio.score,
            ratio.brevity,
            standard.score,
            p.join(", ")
        );
    }
    println!();
    let candidates = tokenize_lines(&["the cat sat on a mat"]);
    println!("{}", corpus_bleu(&candidates, &references[..1], Brevity::Ratio)?);
    Ok(())
}
