//! Classifies script URLs with the built-in rule table and the default
//! preferences.
//!
//!     cargo run --example classify -- https://www.google-analytics.com/analytics.js

use pageslim::classify::{assign_criticality, classify, Preferences, RuleSet};
use pageslim::model::{normalize_url, Category, ContentHash, Criticality, ElementId, ScriptElement, ScriptKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut urls: Vec<String> = std::env::args().skip(1).collect();
    if urls.is_empty() {
        urls = [
            "https://pagead2.googlesyndication.com/pagead/js/adsbygoogle.js",
            "https://www.google-analytics.com/analytics.js",
            "https://www.googletagmanager.com/gtm.js?id=GTM-1",
            "https://platform.twitter.com/widgets.js",
            "https://code.jquery.com/jquery-3.7.1.min.js",
            "https://example.com/site/main.js",
        ]
        .map(String::from)
        .to_vec();
    }
    let rules = RuleSet::default();
    let prefs = Preferences::default();
    for raw in urls {
        let src = normalize_url(&raw, None)?;
        let element = ScriptElement {
            id: ElementId::new(raw.clone()),
            kind: ScriptKind::External,
            src: Some(src),
            doc_range: None,
            content_hash: ContentHash::of(b""),
            byte_size: 0,
            category: Category::Unknown,
            confidence: 0.0,
            criticality: Criticality::Critical,
            parents: Vec::new(),
            body_missing: true,
            content: None,
        };
        let c = classify(&element, &rules);
        let verdict = assign_criticality(c, &prefs, &element);
        println!("{:<14} {:.2}  {:<12} {raw}", c.category.to_string(), c.confidence, verdict.to_string());
    }
    Ok(())
}
