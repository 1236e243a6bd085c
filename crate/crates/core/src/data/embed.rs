use super::DataError;

const SEPARATOR: char = '\u{1f}';

// FNV-1a over the seed bytes followed by the gram bytes; stable across
// platforms and releases, unlike `DefaultHasher`.
fn gram_hash(seed: u64, gram: &[char]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    };
    seed.to_le_bytes().into_iter().for_each(&mut feed);
    let mut buf = [0u8; 4];
    for c in gram {
        c.encode_utf8(&mut buf).bytes().for_each(&mut feed);
    }
    h
}

/// Deterministic stand-in for a frozen cross-encoder: signed counts of
/// hashed character 3-grams of `query ␟ doc`, scaled by `1/√d`.
pub fn toy_embed(query_text: &str, doc_text: &str, d: usize, seed: u64) -> Result<Vec<f64>, DataError> {
    if d < 2 {
        return Err(DataError::EmbedDim(d));
    }
    if query_text.is_empty() || doc_text.is_empty() {
        return Err(DataError::EmptyText);
    }
    let chars: Vec<char> =
        query_text.chars().chain(std::iter::once(SEPARATOR)).chain(doc_text.chars()).collect();
    let scale = 1.0 / (d as f64).sqrt();
    let mut counts = vec![0i64; d];
    for gram in chars.windows(3) {
        let h = gram_hash(seed, gram);
        let sign = if h >> 63 == 0 { 1 } else { -1 };
        counts[(h % d as u64) as usize] += sign;
    }
    // Signed counts can cancel exactly; fall back to the whole-string bucket.
    if counts.iter().all(|&c| c == 0) {
        let h = gram_hash(seed, &chars);
        counts[(h % d as u64) as usize] = 1;
    }
    Ok(counts.into_iter().map(|c| c as f64 * scale).collect())
}
