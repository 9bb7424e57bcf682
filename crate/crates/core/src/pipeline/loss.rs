use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Mean softmax cross-entropy of `logits[N×C]` against class indices.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::contract(format!(
            "cross_entropy: logits {:?} vs {} labels",
            shape,
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= shape[1]) {
        return Err(Error::contract(format!("label {bad} out of range for {} classes", shape[1])));
    }
    let lp = tape.log_softmax(logits)?;
    let picked = tape.pick(lp, labels)?;
    let m = tape.mean(picked)?;
    tape.scale(m, -1.0)
}

/// `CE(main) + Σ_j w_j · CE(ssl_j)`.
pub fn combined_loss(
    tape: &mut Tape,
    main_logits: Var,
    labels: &[usize],
    ssl_logits: &[Var],
    ssl_labels: &[Vec<usize>],
    weights: &[f64],
) -> Result<Var> {
    let main = cross_entropy(tape, main_logits, labels)?;
    weighted_ssl_sum(tape, Some(main), ssl_logits, ssl_labels, weights)
}

/// `Σ_j w_j · CE(ssl_j)`, optionally added onto `base`.
pub fn weighted_ssl_sum(
    tape: &mut Tape,
    base: Option<Var>,
    ssl_logits: &[Var],
    ssl_labels: &[Vec<usize>],
    weights: &[f64],
) -> Result<Var> {
    if ssl_logits.len() != ssl_labels.len() || ssl_logits.len() != weights.len() {
        return Err(Error::contract(format!(
            "{} SSL logits, {} label sets, {} weights",
            ssl_logits.len(),
            ssl_labels.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::config("SSL weights must be non-negative"));
    }
    let mut total = base;
    for ((&logits, labels), &w) in ssl_logits.iter().zip(ssl_labels).zip(weights) {
        let ce = cross_entropy(tape, logits, labels)?;
        let term = tape.scale(ce, w)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::contract("empty loss"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn logits(tape: &mut Tape, rows: &[[f64; 3]]) -> Var {
        let data = rows.iter().flatten().cloned().collect();
        tape.param(&Tensor::new(vec![rows.len(), 3], data).unwrap())
    }

    #[test]
    fn zero_weights_equal_main_ce() {
        let mut tape = Tape::new();
        let m = logits(&mut tape, &[[1.0, 2.0, 0.5], [0.0, -1.0, 3.0]]);
        let s1 = logits(&mut tape, &[[0.3, 0.1, 0.2], [2.0, 0.0, 0.0]]);
        let s2 = logits(&mut tape, &[[5.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        let l = combined_loss(&mut tape, m, &[1, 2], &[s1, s2], &[vec![0, 1], vec![2, 2]], &[0.0, 0.0]).unwrap();
        let ce = cross_entropy(&mut tape, m, &[1, 2]).unwrap();
        assert_eq!(tape.value(l)[0].to_bits(), tape.value(ce)[0].to_bits());
    }

    #[test]
    fn label_out_of_range() {
        let mut tape = Tape::new();
        let m = logits(&mut tape, &[[1.0, 2.0, 0.5]]);
        assert!(matches!(cross_entropy(&mut tape, m, &[3]), Err(Error::Contract(_))));
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let mut tape = Tape::new();
        let m = logits(&mut tape, &[[0.0, 0.0, 0.0]]);
        let ce = cross_entropy(&mut tape, m, &[1]).unwrap();
        assert!((tape.value(ce)[0] - 3f64.ln()).abs() < 1e-15);
    }
}
