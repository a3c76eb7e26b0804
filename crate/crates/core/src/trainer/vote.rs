use crate::error::{Error, Result};

fn check_rows<R: AsRef<[E]>, E>(rows: &[R]) -> Result<usize> {
    let Some(first) = rows.first() else {
        return Err(Error::InvalidConfig("majority vote needs at least one voter".into()));
    };
    let n = first.as_ref().len();
    for (row, r) in rows.iter().enumerate() {
        if r.as_ref().len() != n {
            return Err(Error::RaggedMatrix {
                row,
                expected: n,
                got: r.as_ref().len(),
            });
        }
    }
    Ok(n)
}

/// Per-sample majority over `predictions` (one row of 0/1 labels per voter).
///
/// A tie, only possible with an even number of voters, goes to class 1 when
/// the voters' mean probability is above one half and class 0 when below.
/// Ties without `probabilities`, or with a mean of exactly one half, are
/// unresolved.
pub fn majority_vote(predictions: &[Vec<u8>], probabilities: Option<&[Vec<f64>]>) -> Result<Vec<u8>> {
    let n = check_rows(predictions)?;
    if let Some(p) = probabilities {
        if p.len() != predictions.len() {
            return Err(Error::RaggedMatrix {
                row: p.len(),
                expected: predictions.len(),
                got: p.len(),
            });
        }
        if check_rows(p)? != n {
            return Err(Error::RaggedMatrix {
                row: 0,
                expected: n,
                got: p[0].len(),
            });
        }
    }
    let voters = predictions.len();
    (0..n)
        .map(|j| {
            let ones = predictions.iter().filter(|row| row[j] == 1).count();
            match (2 * ones).cmp(&voters) {
                std::cmp::Ordering::Greater => Ok(1),
                std::cmp::Ordering::Less => Ok(0),
                std::cmp::Ordering::Equal => {
                    let probs = probabilities.ok_or(Error::UnresolvedTie(j))?;
                    let mean = probs.iter().map(|row| row[j]).sum::<f64>() / voters as f64;
                    if mean > 0.5 {
                        Ok(1)
                    } else if mean < 0.5 {
                        Ok(0)
                    } else {
                        Err(Error::UnresolvedTie(j))
                    }
                }
            }
        })
        .collect()
}
