use std::path::Path;

use rand::Rng;

use crate::error::BackendError;
use crate::model::SiloLabel;
use crate::seed::SimRng;

pub const DEFAULT_FLOWER_NAMES: &[&str] = &[
    "rose",
    "orchid",
    "tulip",
    "lily",
    "sunflower",
    "daisy",
    "peony",
    "lavender",
    "cherry blossom",
    "lotus",
    "hydrangea",
    "magnolia",
    "dahlia",
    "iris",
    "jasmine",
    "camellia",
    "primrose",
    "marigold",
    "gardenia",
    "poppy",
];

/// One lowercase name per line, UTF-8, order significant. Blank lines are skipped.
pub fn load_name_list(path: &Path) -> Result<Vec<String>, BackendError> {
    let text = std::fs::read_to_string(path).map_err(|source| BackendError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn word_matches(name_word: &str, word: &str, last: bool) -> bool {
    if word == name_word {
        return true;
    }
    // Plural forms count for the final word of a name: "roses", "lilies", "irises".
    last && (word.strip_suffix('s') == Some(name_word)
        || word.strip_suffix("es") == Some(name_word)
        || name_word
            .strip_suffix('y')
            .is_some_and(|stem| word.strip_suffix("ies") == Some(stem)))
}

/// Finds the silo label named in `text`.
///
/// Matching is case-insensitive and whole-word: a name matches a run of consecutive
/// words, where the last word may carry a plural suffix. Names are tried in list
/// order and the first one found anywhere in the text wins; the label id is the
/// name's position in the list.
pub fn extract_label(text: &str, names: &[String]) -> Option<SiloLabel> {
    let tokens = words(text);
    names.iter().enumerate().find_map(|(idx, name)| {
        let parts = words(name);
        if parts.is_empty() || parts.len() > tokens.len() {
            return None;
        }
        let found = tokens.windows(parts.len()).any(|w| {
            w.iter()
                .zip(&parts)
                .enumerate()
                .all(|(j, (tok, part))| word_matches(part, tok, j + 1 == parts.len()))
        });
        found.then(|| SiloLabel::new(idx as u32))
    })
}

const TEMPLATES: &[&str] = &[
    "The {} unfolds its petals like a quiet promise of spring.",
    "A single {} can brighten the dullest garden corner.",
    "Morning dew makes the {} shimmer with delicate light.",
    "The fragrance of the {} lingers long after sunset.",
    "Few sights rival a field of {} swaying in the breeze.",
    "The {} wears its colors with effortless grace.",
    "In full bloom, the {} is a study in elegant symmetry.",
    "The soft curve of a {} petal invites a closer look.",
];

/// Generates `count` short flower sentences, each naming one flower from `names`.
pub fn synthetic_sentences(names: &[String], count: usize, rng: &mut SimRng) -> Vec<String> {
    (0..count)
        .map(|_| {
            let name = &names[rng.random_range(0..names.len())];
            let template = TEMPLATES[rng.random_range(0..TEMPLATES.len())];
            template.replace("{}", name)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn direct_match() {
        let n = names(&["rose", "orchid"]);
        assert_eq!(extract_label("The rose is lovely", &n), Some(SiloLabel::new(0)));
        assert_eq!(extract_label("An ORCHID, surely.", &n), Some(SiloLabel::new(1)));
    }

    #[test]
    fn whole_word_rule() {
        let n = names(&["rose", "primrose"]);
        assert_eq!(extract_label("Primroses glow", &n), Some(SiloLabel::new(1)));
        assert_eq!(extract_label("Roses are red", &n), Some(SiloLabel::new(0)));
        assert_eq!(extract_label("A rosebud", &n), None);
    }

    #[test]
    fn first_name_in_list_order_wins() {
        let n = names(&["tulip", "rose"]);
        assert_eq!(
            extract_label("A rose beside a tulip", &n),
            Some(SiloLabel::new(0))
        );
    }

    #[test]
    fn multi_word_and_plural_y() {
        let n = names(&["cherry blossom", "lily"]);
        assert_eq!(
            extract_label("Cherry  blossoms drift down", &n),
            Some(SiloLabel::new(0))
        );
        assert_eq!(extract_label("Water lilies float", &n), Some(SiloLabel::new(1)));
        assert_eq!(extract_label("A cherry tree", &n), None);
    }

    #[test]
    fn no_match_is_none() {
        let n = names(&["rose"]);
        assert_eq!(extract_label("I cannot decide", &n), None);
        assert_eq!(extract_label("I cannot decide", &n), None);
    }

    #[test]
    fn generated_sentences_carry_their_flower() {
        let n: Vec<String> = DEFAULT_FLOWER_NAMES.iter().map(|s| s.to_string()).collect();
        let mut rng = SimRng::seed_from_u64(4);
        for s in synthetic_sentences(&n, 200, &mut rng) {
            assert!(extract_label(&s, &n).is_some(), "{s}");
        }
    }
}
