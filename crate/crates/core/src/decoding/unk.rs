use crate::data::UNK_TOKEN;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Replaces every unknown-word token of `target` by the source token with
/// the highest attention weight in that token's row (leftmost on ties).
/// When the winning position lies past the source words (the
/// end-of-sequence position) the token is left as is.
pub fn replace_unk<T: Scalar>(
    target: &[String],
    attention: &[Tensor<T>],
    source: &[String],
) -> Vec<String> {
    target
        .iter()
        .enumerate()
        .map(|(i, tok)| {
            if tok != UNK_TOKEN {
                return tok.clone();
            }
            match attention.get(i) {
                Some(row) if !row.is_empty() => source
                    .get(row.argmax())
                    .cloned()
                    .unwrap_or_else(|| tok.clone()),
                _ => tok.clone(),
            }
        })
        .collect()
}
