//! Compares tape gradients with central finite differences, first for a
//! small expression and then for every parameter of a tiny translation
//! model with attention and a reconstructor.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use rhnmt::data::{EncodedPair, PaddedBatch};
use rhnmt::gradcheck::{check_inputs, check_model};
use rhnmt::model::{ModelConfig, NmtModel};
use rhnmt::Tensor;

fn main() -> rhnmt::Result<()> {
    let a = Tensor::from_rows(&[vec![0.3, -0.7], vec![1.1, 0.2]])?;
    let b = Tensor::from_rows(&[vec![0.5, 0.1, -0.4], vec![-0.9, 0.6, 0.8]])?;
    let report = check_inputs(&[a, b], |g, v| {
        let ab = g.matmul(v[0], v[1])?;
        let t = g.tanh(ab);
        let s = g.sigmoid(t);
        Ok(g.sum(s))
    })?;
    println!("sum(sigmoid(tanh(A B))): {report:?}");

    let config = ModelConfig {
        hidden: 4,
        depth: 2,
        layers: 2,
        src_vocab_size: 7,
        tgt_vocab_size: 8,
        coupled_carry: false,
        dropout: 0.0,
        beta: 0.5,
    };
    let mut model = NmtModel::new(config, 3)?;
    let pairs = [
        EncodedPair {
            src: vec![4, 5, 6, 3],
            tgt_in: vec![2, 4, 7],
            tgt_out: vec![4, 7, 3],
            reference: Vec::new(),
        },
        EncodedPair {
            src: vec![5, 3],
            tgt_in: vec![2, 6, 5, 4],
            tgt_out: vec![6, 5, 4, 3],
            reference: Vec::new(),
        },
    ];
    let batch = PaddedBatch::from_pairs(&[&pairs[0], &pairs[1]])?;
    let ids: Vec<_> = model.params().ids().collect();
    let report = check_model(&mut model, &ids, Some(6), |g, m| Ok(m.losses(g, &batch, 0.5)?.total))?;
    println!("full model, {} parameter tensors: {report:?}", ids.len());
    println!("passed: {}", report.passed());
    Ok(())
}
