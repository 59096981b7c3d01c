//! Category and criticality assignment.
//!
//! Categories come from a weighted rule table over the script URL and
//! source. Criticality follows the user's per-category preference when the
//! category is confident enough, and otherwise falls back to content
//! features that err on the side of keeping the script.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Category, Criticality, ScriptElement};

pub const DEFAULT_RULES: &str = include_str!("../rules/default.rules");

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown category {name:?}")]
    UnknownCategory { line: usize, name: String },
    #[error("line {line}: weight {weight} outside (0, 1]")]
    Weight { line: usize, weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "on", content = "pattern", rename_all = "lowercase")]
pub enum Matcher {
    /// Host equals the pattern or is a subdomain of it.
    Host(String),
    /// Substring of the URL path.
    Path(String),
    /// Substring of the script source.
    Token(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub matcher: Matcher,
    pub category: Category,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    rules: Vec<Rule>,
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet::parse(DEFAULT_RULES).expect("built-in rule table parses")
    }
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>) -> Self {
        RuleSet { rules }
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        RuleSet::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let [kind, pattern, category, weight] = fields[..] else {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("expected `<host|path|token> <pattern> <Category> <weight>`, got {content:?}"),
                });
            };
            let matcher = match kind {
                "host" => Matcher::Host(pattern.to_ascii_lowercase()),
                "path" => Matcher::Path(pattern.to_owned()),
                "token" => Matcher::Token(pattern.to_owned()),
                other => {
                    return Err(ConfigError::Syntax {
                        line,
                        message: format!("unknown rule kind {other:?}"),
                    })
                }
            };
            let category = category
                .parse::<Category>()
                .map_err(|_| ConfigError::UnknownCategory {
                    line,
                    name: category.to_owned(),
                })?;
            let weight: f64 = weight.parse().map_err(|_| ConfigError::Syntax {
                line,
                message: format!("weight {weight:?} is not a number"),
            })?;
            if !(weight > 0.0 && weight <= 1.0) {
                return Err(ConfigError::Weight { line, weight });
            }
            rules.push(Rule {
                matcher,
                category,
                weight,
            });
        }
        Ok(RuleSet { rules })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub category: Category,
    pub confidence: f64,
}

fn host_matches(host: &str, pattern: &str) -> bool {
    host == pattern
        || (host.len() > pattern.len()
            && host.ends_with(pattern)
            && host.as_bytes()[host.len() - pattern.len() - 1] == b'.')
}

/// Category with the largest summed weight over matching rules; ties go to
/// the category whose first matching rule comes earliest.
pub fn classify(element: &ScriptElement, rules: &RuleSet) -> Classification {
    let host = element.src.as_ref().and_then(|s| s.host()).unwrap_or_default();
    let path = element.src.as_ref().map(|s| s.path()).unwrap_or_default();
    let source = String::from_utf8_lossy(element.content_bytes());

    // (category, summed weight, index of first matching rule)
    let mut scores: Vec<(Category, f64, usize)> = Vec::new();
    for (i, rule) in rules.rules.iter().enumerate() {
        let hit = match &rule.matcher {
            Matcher::Host(p) => !host.is_empty() && host_matches(&host, p),
            Matcher::Path(p) => !path.is_empty() && path.contains(p.as_str()),
            Matcher::Token(p) => source.contains(p.as_str()),
        };
        if !hit {
            continue;
        }
        match scores.iter_mut().find(|(c, _, _)| *c == rule.category) {
            Some(entry) => entry.1 += rule.weight,
            None => scores.push((rule.category, rule.weight, i)),
        }
    }
    // scores is ordered by first matching rule, so a strict comparison keeps
    // the earliest category on ties
    let mut best: Option<(Category, f64)> = None;
    for (category, total, _) in scores {
        if best.is_none_or(|(_, w)| total > w) {
            best = Some((category, total));
        }
    }
    match best {
        Some((category, total)) => Classification {
            category,
            confidence: total.min(1.0),
        },
        None => Classification {
            category: Category::Unknown,
            confidence: 0.0,
        },
    }
}

/// Source features of scripts that build or wire up the page.
pub const DOM_FEATURE_TOKENS: &[&str] = &[
    "document.write",
    "createElement(",
    "appendChild(",
    "insertBefore(",
    "replaceChild(",
    "insertAdjacentHTML",
    "innerHTML",
    "outerHTML",
    "addEventListener(",
    "attachEvent(",
    ".append(",
    ".prepend(",
];

/// Source features of beacons, pixels and cookie syncing.
pub const TRACKER_TOKENS: &[&str] = &[
    "sendBeacon(",
    "new Image(",
    "document.cookie",
    "_gaq",
    "gtag(",
    "fbq(",
    "track(",
    "pixel",
    "beacon",
    "cookieSync",
    "cookie_sync",
    "utm_",
];

/// Content-feature verdict used when the category is not trusted.
/// Non-critical only with tracker signals and no DOM work; anything else,
/// including missing content, is kept.
pub fn fallback_criticality(element: &ScriptElement) -> Criticality {
    let source = String::from_utf8_lossy(element.content_bytes());
    if source.is_empty() {
        return Criticality::Critical;
    }
    if DOM_FEATURE_TOKENS.iter().any(|t| source.contains(t)) {
        return Criticality::Critical;
    }
    if TRACKER_TOKENS.iter().any(|t| source.contains(t)) {
        return Criticality::NonCritical;
    }
    Criticality::Critical
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preferences {
    categories: BTreeMap<Category, Criticality>,
    pub confidence_threshold: f64,
}

impl Default for Preferences {
    /// Advertising and analytics are dropped; everything else is kept.
    fn default() -> Self {
        let categories = Category::ALL
            .iter()
            .map(|&c| {
                let crit = match c {
                    Category::Advertising | Category::Analytics => Criticality::NonCritical,
                    _ => Criticality::Critical,
                };
                (c, crit)
            })
            .collect();
        Preferences {
            categories,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
        }
    }
}

impl Preferences {
    pub fn all(criticality: Criticality) -> Self {
        Preferences {
            categories: Category::ALL.iter().map(|&c| (c, criticality)).collect(),
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
        }
    }

    pub fn get(&self, category: Category) -> Criticality {
        self.categories
            .get(&category)
            .copied()
            .unwrap_or(Criticality::Critical)
    }

    pub fn set(&mut self, category: Category, criticality: Criticality) {
        self.categories.insert(category, criticality);
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Preferences::parse(&text)
    }

    /// `Category=critical|noncritical` lines, `threshold=<0..1>`, `#` comments.
    /// Categories not mentioned keep their default.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut prefs = Preferences::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("expected `name=value`, got {content:?}"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if key.eq_ignore_ascii_case("threshold") {
                let t: f64 = value.parse().map_err(|_| ConfigError::Syntax {
                    line,
                    message: format!("threshold {value:?} is not a number"),
                })?;
                if !(0.0..=1.0).contains(&t) {
                    return Err(ConfigError::Syntax {
                        line,
                        message: format!("threshold {t} outside [0, 1]"),
                    });
                }
                prefs.confidence_threshold = t;
                continue;
            }
            let category = key
                .parse::<Category>()
                .map_err(|_| ConfigError::UnknownCategory {
                    line,
                    name: key.to_owned(),
                })?;
            let crit = match value.to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
                "critical" => Criticality::Critical,
                "noncritical" => Criticality::NonCritical,
                _ => {
                    return Err(ConfigError::Syntax {
                        line,
                        message: format!("expected critical or noncritical, got {value:?}"),
                    })
                }
            };
            prefs.set(category, crit);
        }
        Ok(prefs)
    }
}

pub fn assign_criticality(
    classification: Classification,
    prefs: &Preferences,
    element: &ScriptElement,
) -> Criticality {
    if classification.confidence >= prefs.confidence_threshold {
        prefs.get(classification.category)
    } else {
        fallback_criticality(element)
    }
}

/// Classifies every element in place.
pub fn classify_all(elements: &mut [ScriptElement], rules: &RuleSet, prefs: &Preferences) {
    for e in elements.iter_mut() {
        let c = classify(e, rules);
        e.category = c.category;
        e.confidence = c.confidence;
        e.criticality = assign_criticality(c, prefs, e);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CanonicalUrl, ContentHash, ElementId, ScriptKind};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn element(src: Option<&str>, content: &str) -> ScriptElement {
        let hash = ContentHash::of(content.as_bytes());
        let src = src.map(|s| CanonicalUrl::parse(s).unwrap());
        ScriptElement {
            id: ElementId::derive(ScriptKind::External, &hash, None, src.as_ref()),
            kind: if src.is_some() { ScriptKind::External } else { ScriptKind::Inline },
            src,
            doc_range: None,
            content_hash: hash,
            byte_size: content.len() as u64,
            category: Category::Unknown,
            confidence: 0.0,
            criticality: Criticality::Critical,
            parents: vec![],
            body_missing: false,
            content: Some(Arc::from(content.as_bytes())),
        }
    }

    // Independent oracle: substring search over the token lists.
    fn contains_any(hay: &str, set: &[&str]) -> bool {
        set.iter().any(|t| hay.find(t).is_some())
    }

    #[test]
    fn known_trackers_classify_confidently() {
        let rules = RuleSet::default();
        let c = classify(
            &element(Some("https://pagead2.googlesyndication.com/pagead/js/adsbygoogle.js"), ""),
            &rules,
        );
        assert_eq!(c.category, Category::Advertising);
        assert!(c.confidence >= 0.9);
        let c = classify(&element(Some("https://www.google-analytics.com/analytics.js"), ""), &rules);
        assert_eq!(c.category, Category::Analytics);
        assert!(c.confidence >= 0.9);
        let c = classify(&element(Some("https://example.com/site/main.js"), ""), &rules);
        assert_eq!(c, Classification { category: Category::Unknown, confidence: 0.0 });
    }

    #[test]
    fn confidence_is_clamped_sum() {
        let rules = RuleSet::parse("host a.com Video 0.7\npath /v Video 0.6\ntoken x Social 0.2").unwrap();
        let c = classify(&element(Some("https://a.com/v.js"), "x"), &rules);
        assert_eq!(c, Classification { category: Category::Video, confidence: 1.0 });
        let c = classify(&element(None, "x"), &rules);
        assert_eq!(c.category, Category::Social);
        assert!((c.confidence - 0.2).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_first_rule() {
        let rules = RuleSet::parse("token b Social 0.5\ntoken a Video 0.5").unwrap();
        assert_eq!(classify(&element(None, "ab"), &rules).category, Category::Social);
        let rules = RuleSet::parse("token a Video 0.5\ntoken b Social 0.5").unwrap();
        assert_eq!(classify(&element(None, "ab"), &rules).category, Category::Video);
    }

    #[test]
    fn host_rules_respect_label_boundaries() {
        let rules = RuleSet::parse("host doubleclick.net Advertising 0.9").unwrap();
        assert_eq!(
            classify(&element(Some("https://notdoubleclick.net/x.js"), ""), &rules).category,
            Category::Unknown
        );
        assert_eq!(
            classify(&element(Some("https://stats.g.doubleclick.net/x.js"), ""), &rules).category,
            Category::Advertising
        );
    }

    #[test]
    fn fallback_examples() {
        let dom = element(None, "var d=document.createElement('div'); body.appendChild(d);");
        assert!(contains_any("var d=document.createElement('div');", DOM_FEATURE_TOKENS));
        assert_eq!(fallback_criticality(&dom), Criticality::Critical);
        let beacon = element(None, "navigator.sendBeacon('/c', data);");
        assert!(!contains_any("navigator.sendBeacon('/c', data);", DOM_FEATURE_TOKENS));
        assert_eq!(fallback_criticality(&beacon), Criticality::NonCritical);
        assert_eq!(fallback_criticality(&element(None, "")), Criticality::Critical);
        assert_eq!(fallback_criticality(&element(None, "var x = 1 + 2;")), Criticality::Critical);
    }

    #[test]
    fn criticality_follows_preferences_above_threshold() {
        let prefs = Preferences::default();
        let e = element(None, "document.createElement('x')");
        let at = |category, confidence| assign_criticality(Classification { category, confidence }, &prefs, &e);
        assert_eq!(at(Category::Analytics, 0.95), Criticality::NonCritical);
        assert_eq!(at(Category::Content, 0.95), Criticality::Critical);
        assert_eq!(at(Category::Advertising, 0.2), Criticality::Critical);
        assert_eq!(at(Category::Advertising, 0.5), Criticality::NonCritical);
    }

    #[test]
    fn preference_file_parsing() {
        let p = Preferences::parse("# mine\nAnalytics=noncritical\nVideo = NonCritical\nthreshold=0.7\n").unwrap();
        assert_eq!(p.get(Category::Analytics), Criticality::NonCritical);
        assert_eq!(p.get(Category::Video), Criticality::NonCritical);
        assert_eq!(p.confidence_threshold, 0.7);

        let empty = Preferences::parse("").unwrap();
        for c in Category::ALL {
            let expect = if matches!(c, Category::Advertising | Category::Analytics) {
                Criticality::NonCritical
            } else {
                Criticality::Critical
            };
            assert_eq!(empty.get(c), expect, "{c}");
        }
        assert_eq!(empty.get(Category::Unknown), Criticality::Critical);

        match Preferences::parse("\nFoo=critical") {
            Err(ConfigError::UnknownCategory { line: 2, name }) => assert_eq!(name, "Foo"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Preferences::parse("Video=maybe"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(Preferences::parse("threshold=2"), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn rule_file_validation() {
        match RuleSet::parse("host a.com Video 1.5") {
            Err(ConfigError::Weight { line: 1, weight }) => assert_eq!(weight, 1.5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(RuleSet::parse("host a.com Video 0"), Err(ConfigError::Weight { .. })));
        assert!(matches!(
            RuleSet::parse("# c\nhost a.com Nope 0.5"),
            Err(ConfigError::UnknownCategory { line: 2, .. })
        ));
        assert!(matches!(RuleSet::parse("host a.com"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(RuleSet::parse("url a.com Video 0.5"), Err(ConfigError::Syntax { .. })));
        assert!(!RuleSet::default().rules().is_empty());
    }

    proptest! {
        #[test]
        fn removing_tracker_tokens_never_drops_a_script(
            parts in prop::collection::vec(
                prop::sample::select([DOM_FEATURE_TOKENS, TRACKER_TOKENS, &["var a;", " ", "f()"]].concat()),
                0..8,
            ),
            victim in 0usize..TRACKER_TOKENS.len(),
        ) {
            let src = parts.concat();
            let before = fallback_criticality(&element(None, &src));
            let stripped = src.replace(TRACKER_TOKENS[victim], "");
            let after = fallback_criticality(&element(None, &stripped));
            if before == Criticality::Critical {
                prop_assert_eq!(after, Criticality::Critical);
            }
        }

        #[test]
        fn classification_is_deterministic(host in "[a-z]{1,6}\\.(com|net)", body in "[a-zA-Z.(]{0,20}") {
            let rules = RuleSet::default();
            let e = element(Some(&format!("https://{host}/x.js")), &body);
            let a = classify(&e, &rules);
            let b = classify(&e, &rules);
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a.confidence));
        }
    }
}
