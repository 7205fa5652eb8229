//! Naive reference implementations used as test oracles. Written without
//! sorting so they share no code path with the library.

#![allow(dead_code)]

/// 1-based rank of item `i`: items with a higher score come first, equal
/// scores keep input order.
pub fn rank_of(scores: &[f64], i: usize) -> usize {
    1 + (0..scores.len())
        .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
        .count()
}

pub fn reciprocal_rank(scores: &[f64], rel: &[bool]) -> Option<f64> {
    (0..scores.len())
        .filter(|&i| rel[i])
        .map(|i| rank_of(scores, i))
        .min()
        .map(|r| 1.0 / r as f64)
}

pub fn average_precision(scores: &[f64], rel: &[bool]) -> Option<f64> {
    let relevant: Vec<usize> = (0..scores.len()).filter(|&i| rel[i]).collect();
    if relevant.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &i in &relevant {
        let r = rank_of(scores, i);
        let above = relevant.iter().filter(|&&j| rank_of(scores, j) <= r).count();
        total += above as f64 / r as f64;
    }
    Some(total / relevant.len() as f64)
}

pub fn precision_at_k(scores: &[f64], rel: &[bool], k: usize) -> f64 {
    let hits = (0..scores.len())
        .filter(|&i| rel[i] && rank_of(scores, i) <= k)
        .count();
    hits as f64 / k as f64
}

fn dcg_in_order(grades_by_rank: &[u8], k: usize) -> f64 {
    let mut total = 0.0;
    for (pos, &g) in grades_by_rank.iter().enumerate() {
        let rank = pos + 1;
        if rank <= k {
            total += (2f64.powi(g as i32) - 1.0) / (rank as f64 + 1.0).log2();
        }
    }
    total
}

/// Largest DCG over all orderings, by brute force for short lists.
fn ideal_dcg(grades: &[u8], k: usize) -> f64 {
    if grades.len() <= 7 {
        let mut best = 0.0f64;
        let mut perm: Vec<u8> = grades.to_vec();
        heap_permutations(&mut perm, grades.len(), &mut |p| {
            best = best.max(dcg_in_order(p, k));
        });
        best
    } else {
        let mut remaining = grades.to_vec();
        let mut ordered = Vec::new();
        while !remaining.is_empty() {
            let (at, _) = remaining
                .iter()
                .enumerate()
                .fold((0, 0u8), |(bi, bg), (i, &g)| if g > bg { (i, g) } else { (bi, bg) });
            ordered.push(remaining.remove(at));
        }
        dcg_in_order(&ordered, k)
    }
}

fn heap_permutations(items: &mut Vec<u8>, n: usize, visit: &mut impl FnMut(&[u8])) {
    if n <= 1 {
        visit(items);
        return;
    }
    for i in 0..n - 1 {
        heap_permutations(items, n - 1, visit);
        if n.is_multiple_of(2) {
            items.swap(i, n - 1);
        } else {
            items.swap(0, n - 1);
        }
    }
    heap_permutations(items, n - 1, visit);
}

pub fn ndcg_at_k(scores: &[f64], grades: &[u8], k: usize) -> Option<f64> {
    let mut by_rank = vec![0u8; scores.len()];
    for i in 0..scores.len() {
        by_rank[rank_of(scores, i) - 1] = grades[i];
    }
    let ideal = ideal_dcg(grades, k);
    (ideal > 0.0).then(|| dcg_in_order(&by_rank, k) / ideal)
}

/// Mean hinge over all positive/negative combinations, as two plain loops.
pub fn set_pairwise(pos: &[f64], neg: &[f64], margin: f64) -> f64 {
    if pos.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &p in pos {
        for &n in neg {
            let raw = margin - p + n;
            sum += if raw > 0.0 { raw } else { 0.0 };
        }
    }
    sum / (pos.len() * neg.len()) as f64
}
