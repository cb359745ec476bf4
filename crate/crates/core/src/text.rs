//! Label normalization shared by catalog lookup and grounding.
//!
//! Folding is naive: lowercase, split on whitespace, and strip a
//! plural suffix from each token.

/// Folds a single word: lowercase plus naive plural stripping.
///
/// Rules, first match wins:
/// * `-sses`, `-ches`, `-shes`, `-xes`, `-zes`, `-oes` drop `es`
///   (`glasses` → `glass`, `sandwiches` → `sandwich`, `tomatoes` → `tomato`);
/// * `-ss`, `-us`, `-is` are kept (`glass`, `hummus`, `quinoa` untouched);
/// * any other trailing `s` is dropped (`donuts` → `donut`, `oranges` → `orange`).
pub fn fold_word(word: &str) -> String {
    let w = word.to_lowercase();
    const ES_SUFFIXES: [&str; 6] = ["sses", "ches", "shes", "xes", "zes", "oes"];
    if ES_SUFFIXES.iter().any(|s| w.ends_with(s)) {
        return w[..w.len() - 2].to_string();
    }
    if w.ends_with("ss") || w.ends_with("us") || w.ends_with("is") {
        return w;
    }
    match w.strip_suffix('s') {
        Some(stem) if !stem.is_empty() => stem.to_string(),
        _ => w,
    }
}

/// Folds a phrase into its ordered list of folded tokens.
pub fn fold_tokens(phrase: &str) -> Vec<String> {
    phrase.split_whitespace().map(fold_word).collect()
}

/// Folded lookup key: folded tokens joined by single spaces.
pub fn fold_key(phrase: &str) -> String {
    fold_tokens(phrase).join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plural_rules() {
        assert_eq!(fold_word("Donuts"), "donut");
        assert_eq!(fold_word("oranges"), "orange");
        assert_eq!(fold_word("sandwiches"), "sandwich");
        assert_eq!(fold_word("tomatoes"), "tomato");
        assert_eq!(fold_word("boxes"), "box");
        assert_eq!(fold_word("glass"), "glass");
        assert_eq!(fold_word("hummus"), "hummus");
        assert_eq!(fold_word("s"), "s");
        assert_eq!(fold_word("PIZZA"), "pizza");
    }

    #[test]
    fn keys_collapse_whitespace() {
        assert_eq!(fold_key("  Hot   Dogs "), "hot dog");
        assert_eq!(fold_key(""), "");
    }
}
