use super::ReportError;

/// Indices of tokens that match any keyword, sorted and unique.
///
/// Matching is case-insensitive. A token matches when the keyword contains
/// the token (after stripping a leading `##` continuation marker) or the
/// token contains the keyword, so subword pieces of a keyword all match.
pub fn find_keyword_tokens(token_strings: &[String], keywords: &[String]) -> Result<Vec<usize>, ReportError> {
    if token_strings.is_empty() {
        return Err(ReportError::NoTokens);
    }
    let keywords: Vec<String> = keywords
        .iter()
        .map(|k| k.trim().to_lowercase())
        .filter(|k| !k.is_empty())
        .collect();
    if keywords.is_empty() {
        return Err(ReportError::NoKeywords);
    }
    let hits = token_strings
        .iter()
        .enumerate()
        .filter(|(_, tok)| {
            let lower = tok.trim().to_lowercase();
            let piece = lower.strip_prefix("##").unwrap_or(&lower);
            !piece.is_empty() && keywords.iter().any(|k| k.contains(piece) || lower.contains(k.as_str()))
        })
        .map(|(i, _)| i)
        .collect();
    Ok(hits)
}
