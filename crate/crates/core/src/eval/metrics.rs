use crate::{Error, Result};

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimMismatch { expected: labels.len(), got: scores.len() });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data(format!("metric needs both classes (got {pos} positive, {neg} negative)")));
    }
    Ok((pos, neg))
}

/// Blocks of tied scores, highest score first: `(positives, total)` each.
fn tie_blocks(scores: &[f64], labels: &[bool]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut last = None;
    for i in order {
        // -0.0 and 0.0 tie.
        if last != Some(scores[i]) {
            blocks.push((0, 0));
            last = Some(scores[i]);
        }
        let b = blocks.last_mut().expect("pushed");
        b.0 += labels[i] as usize;
        b.1 += 1;
    }
    blocks
}

/// Area under the ROC curve: the probability that a random positive outranks
/// a random negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    // Twice the Mann-Whitney U, kept integral.
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = neg as u128;
    for (p, total) in tie_blocks(scores, labels) {
        let n_here = (total - p) as u128;
        neg_below -= n_here;
        twice_u += 2 * p as u128 * neg_below + p as u128 * n_here;
    }
    Ok(twice_u as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Average precision with tied scores collapsed: every positive in a tie
/// block gets the precision at the block's lower boundary. Terms are summed
/// in rank order.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut sum = 0.0;
    for (p, total) in tie_blocks(scores, labels) {
        tp += p;
        seen += total;
        let precision = tp as f64 / seen as f64;
        for _ in 0..p {
            sum += precision;
        }
    }
    Ok(sum / pos as f64)
}
