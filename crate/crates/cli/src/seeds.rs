use crate::Failure;

/// Parses `3`, `0,2,5` or the inclusive range `0..4`.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::Usage(format!("invalid --seed `{spec}` (expected N, N,M,... or A..B)"));
    let spec = spec.trim();
    let seeds: Vec<u64> = if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        spec.split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err(Failure::Usage(format!("--seed `{spec}` repeats a seed")));
    }
    Ok(seeds)
}
