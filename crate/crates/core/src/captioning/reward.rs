//! Unigram alignment reward with a fragmentation penalty: harmonic-style
//! F-mean of precision and recall (recall-weighted 9:1), discounted by
//! `0.5 · (chunks / matches)^3`.

/// Reference position matched by each candidate position, via greedy
/// left-to-right 1-1 alignment.
pub fn align(candidate: &[usize], reference: &[usize]) -> Vec<Option<usize>> {
    let mut used = vec![false; reference.len()];
    candidate
        .iter()
        .map(|tok| {
            let j = reference
                .iter()
                .enumerate()
                .position(|(j, r)| r == tok && !used[j])?;
            used[j] = true;
            Some(j)
        })
        .collect()
}

/// Number of maximal runs of matches that are contiguous in both sequences.
pub fn chunks(alignment: &[Option<usize>]) -> usize {
    let mut count = 0;
    let mut prev: Option<usize> = None;
    for a in alignment {
        match (prev, a) {
            (Some(p), Some(j)) if *j == p + 1 => {}
            (_, Some(_)) => count += 1,
            _ => {}
        }
        prev = *a;
    }
    count
}

/// Reward in `[0, 1]` for `candidate` against `reference` (no BOS/EOS ids).
pub fn proxy_reward(candidate: &[usize], reference: &[usize]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let alignment = align(candidate, reference);
    let m = alignment.iter().flatten().count();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f = p * r / (0.9 * p + 0.1 * r);
    let frag = chunks(&alignment) as f64 / m as f64;
    let penalty = 0.5 * frag.powi(3);
    f * (1.0 - penalty)
}
