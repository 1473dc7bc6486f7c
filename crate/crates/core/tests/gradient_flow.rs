//! One training step on the default model reaches every branch.

use std::collections::BTreeSet;

use mixlab::model::{ModelConfig, ModelParams};
use mixlab::taskgen::build_splits;
use mixlab::trainer::loss_and_grads;

#[test]
fn default_model_gradient_reaches_at_least_99_percent_of_parameters() {
    let (math, nli) = build_splits(1, 200, 40).unwrap();
    let examples: Vec<_> = math.train.iter().take(32).chain(nli.train.iter().take(32)).collect();
    let config = ModelConfig::default();
    let params: ModelParams<f32> = ModelParams::init(config, 1).unwrap();
    let (loss, grads) = loss_and_grads(&params, &examples).unwrap();
    assert!(loss.is_finite());

    // Embedding rows can only be reached by tokens and positions that occur.
    let used_tokens: BTreeSet<usize> = examples
        .iter()
        .flat_map(|e| e.tokens.iter().map(|&t| t as usize))
        .collect();
    let longest = examples.iter().map(|e| e.tokens.len()).max().unwrap();
    let d = config.d_model;
    for (name, rows) in [
        ("embed.token", used_tokens.iter().copied().collect::<Vec<_>>()),
        ("embed.position", (0..longest).collect()),
    ] {
        for r in rows {
            assert!(
                grads[name][r * d..(r + 1) * d].iter().any(|v| *v != 0.0),
                "{name} row {r}"
            );
        }
    }

    let (mut live, mut total) = (0usize, 0usize);
    for (name, g) in grads.iter().filter(|(n, _)| !n.starts_with("embed.")) {
        if name.ends_with("attn.k.bias") {
            // A key bias shifts every score of a query equally, so softmax
            // cancels it and only rounding noise remains.
            assert!(g.iter().all(|v| v.abs() < 1e-5), "{name}");
        } else {
            assert!(g.iter().any(|v| *v != 0.0), "{name} receives no gradient");
        }
        live += g.iter().filter(|v| **v != 0.0).count();
        total += g.len();
    }
    let share = live as f64 / total as f64;
    assert!(
        share >= 0.99,
        "only {:.2}% of parameters have nonzero gradient",
        100.0 * share
    );
}
