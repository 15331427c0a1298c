//! CTC on a hand-made score matrix: loss, greedy decoding and prefix beam
//! search over the default 35-character alphabet.
//!
//! ```text
//! cargo run --example ctc_decode -- VALVE
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scriptorium::ctc::{beam_search, ctc_loss, greedy_decode, Alphabet, TimeLogits};

fn main() -> scriptorium::Result<()> {
    let word = std::env::args().nth(1).unwrap_or_else(|| "VALVE".into());
    let alphabet = Alphabet::default();
    let labels = alphabet.encode(&word)?;
    let (c, blank) = (alphabet.classes(), alphabet.blank());

    // Two frames per letter: the letter, then a noisy blank.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let steps = 2 * labels.len();
    let mut scores = vec![0.0; steps * c];
    for (t, row) in scores.chunks_exact_mut(c).enumerate() {
        row.iter_mut().for_each(|s| *s = rng.gen_range(-1.0..1.0));
        let hot = if t % 2 == 0 { labels[t / 2] } else { blank };
        row[hot] += 4.0;
    }
    let logits = TimeLogits::from_scores(steps, c, scores)?;

    let loss = ctc_loss(&logits, &word, &alphabet)?;
    println!("target={word} T={steps} loss={:.4} p={:.4}", loss.loss, (-loss.loss).exp());
    println!("greedy: {}", greedy_decode(&logits, &alphabet));
    for (prefix, logp) in beam_search(&logits, 4) {
        println!("beam:   {:<12} log p = {logp:.4}", alphabet.decode(&prefix));
    }
    Ok(())
}
