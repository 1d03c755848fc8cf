const HONORIFICS: &[&str] = &[
    "dr",
    "mr",
    "mrs",
    "ms",
    "miss",
    "mx",
    "prof",
    "professor",
    "sir",
    "dame",
    "lady",
    "lord",
    "rev",
    "reverend",
    "fr",
    "father",
    "sister",
    "brother",
    "capt",
    "col",
    "gen",
    "hon",
];

/// The first-listed author of a possibly multi-author string.
pub fn first_listed_author(authors: &str) -> &str {
    let mut end = authors.len();
    for sep in [";", "&", " and ", "/", "|"] {
        if let Some(k) = authors.find(sep) {
            end = end.min(k);
        }
    }
    authors[..end].trim()
}

/// First name of the first-listed author: the first whitespace token after
/// honorifics are removed. `"Last, First"` is read as `"First Last"`.
pub fn first_name(authors: &str) -> Option<String> {
    let author = first_listed_author(authors);
    let ordered = match author.split_once(',') {
        Some((last, first)) if !first.trim().is_empty() => {
            format!("{} {}", first.trim(), last.trim())
        }
        _ => author.to_string(),
    };
    ordered
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric() && c != '-' && c != '\''))
        .filter(|t| !t.is_empty())
        .find(|t| !HONORIFICS.contains(&t.to_lowercase().as_str()))
        .map(str::to_string)
}
