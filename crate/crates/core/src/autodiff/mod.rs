//! Tensor type and reverse-mode gradient tape.

mod tape;
mod tensor;

pub use tape::{EmptyRowPolicy, Tape};
pub use tensor::{NodeRef, Tensor, TensorError};


/// Validates a {0,1} padding mask of shape [batch, steps] and returns the
/// per-row count of real (unmasked) steps. Padding must be a suffix.
pub fn mask_lengths(mask: &Tensor) -> Result<Vec<usize>, TensorError> {
    assert_eq!(mask.rank(), 2, "mask must be [batch, steps]");
    let (batch, steps) = (mask.shape()[0], mask.shape()[1]);
    let mut lengths = Vec::with_capacity(batch);
    for b in 0..batch {
        let row = &mask.data()[b * steps..(b + 1) * steps];
        let mut len = 0;
        let mut seen_pad = false;
        for &v in row {
            if v != 0.0 {
                if seen_pad {
                    return Err(TensorError::NonSuffixMask { row: b });
                }
                len += 1;
            } else {
                seen_pad = true;
            }
        }
        lengths.push(len);
    }
    Ok(lengths)
}
