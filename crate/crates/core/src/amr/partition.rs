use super::AmrError;

/// Splits leaves, given in Morton order with their weights, into `parts`
/// contiguous ranges. A range closes once the running weight reaches its
/// share of the total, or when every later range needs exactly one leaf.
pub fn partition(weights: &[f64], parts: usize) -> Result<Vec<u32>, AmrError> {
    if parts == 0 {
        return Err(AmrError::NoParts);
    }
    if parts > weights.len() {
        return Err(AmrError::TooManyParts {
            parts,
            leaves: weights.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    let mut owner = Vec::with_capacity(weights.len());
    let mut part = 0usize;
    let mut acc = 0.0;
    for (n, &w) in weights.iter().enumerate() {
        owner.push(part as u32);
        acc += w;
        if part + 1 == parts {
            continue;
        }
        let leaves_left = weights.len() - n - 1;
        let parts_left = parts - part - 1;
        let share = (part + 1) as f64 * total / parts as f64;
        if leaves_left == parts_left || (acc >= share && leaves_left >= parts_left) {
            part += 1;
        }
    }
    Ok(owner)
}

/// Owned leaf count per part.
pub fn part_sizes(owner: &[u32], parts: usize) -> Vec<usize> {
    let mut sizes = vec![0; parts];
    for &o in owner {
        sizes[o as usize] += 1;
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(partition(&[1.0; 8], 2).unwrap(), [0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(partition(&[7.0, 1.0, 1.0, 1.0], 2).unwrap(), [0, 1, 1, 1]);
        assert!(matches!(
            partition(&[1.0; 2], 3),
            Err(AmrError::TooManyParts { parts: 3, leaves: 2 })
        ));
        assert_eq!(partition(&[9.0, 1.0, 1.0], 3).unwrap(), [0, 1, 2]);
        assert_eq!(partition(&[1.0, 1.0, 100.0], 3).unwrap(), [0, 1, 2]);
    }
}
