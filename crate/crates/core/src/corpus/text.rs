/// Placeholder substituted for every hashtag token.
pub const HASHTAG_TOKEN: &str = "<HASHTAG>";
/// Placeholder substituted for every http(s) URL.
pub const URL_TOKEN: &str = "<URL>";

/// Replaces hashtags and URLs with fixed placeholders, leaving every other
/// character (including the original whitespace) untouched.
///
/// A hashtag is any whitespace-delimited token whose first character is `#`.
/// A URL starts at `http://` or `https://` anywhere inside a token and runs to
/// the next whitespace.
pub fn sanitize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while !rest.is_empty() {
        let ws_len = rest.len() - rest.trim_start().len();
        out.push_str(&rest[..ws_len]);
        rest = &rest[ws_len..];
        let token_len = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let (token, tail) = rest.split_at(token_len);
        rest = tail;
        if token.is_empty() {
            continue;
        }
        if token.starts_with('#') {
            out.push_str(HASHTAG_TOKEN);
        } else if let Some(pos) = url_start(token) {
            out.push_str(&token[..pos]);
            out.push_str(URL_TOKEN);
        } else {
            out.push_str(token);
        }
    }
    out
}

fn url_start(token: &str) -> Option<usize> {
    match (token.find("http://"), token.find("https://")) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}
