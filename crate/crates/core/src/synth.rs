//! Seeded synthetic TOP corpora for end-to-end checks and benchmarks.
//!
//! Each frame skeleton owns a template of carrier words with slot values
//! drawn from a pseudo-word vocabulary, so every slot value can be copied
//! verbatim from its utterance. Every fifth skeleton nests an intent inside
//! a slot.

use crate::corpus::{Corpus, CorpusError};
use crate::hashing::SplitMix64;

const SYLLABLES: [&str; 16] = ["ka", "lo", "mi", "ru", "te", "sa", "no", "vi", "pe", "zu", "ba", "do", "fi", "go", "ha", "je"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub skeletons: usize,
    pub domains: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { skeletons: 20, domains: 5, train_size: 500, test_size: 100, seed: 0 }
    }
}

#[derive(Debug, Clone)]
struct Template {
    domain: String,
    intent: String,
    /// Carrier words before each slot, plus a trailing group.
    carriers: Vec<Vec<String>>,
    slots: Vec<String>,
    nested: Option<(String, String)>,
}

fn pseudo_word(rng: &mut SplitMix64, syllables: usize) -> String {
    (0..syllables).map(|_| SYLLABLES[rng.next_below(SYLLABLES.len() as u64) as usize]).collect()
}

fn templates(cfg: &SynthConfig, rng: &mut SplitMix64) -> Vec<Template> {
    (0..cfg.skeletons)
        .map(|s| {
            let n_slots = 1 + s % 3;
            let carriers = (0..=n_slots)
                .map(|i| {
                    let len = if i == 0 { 2 } else { 1 };
                    (0..len).map(|_| format!("{}q{s}", pseudo_word(rng, 2))).collect()
                })
                .collect();
            Template {
                domain: format!("domain{}", s % cfg.domains.max(1)),
                intent: format!("in:intent_{s}"),
                carriers,
                slots: (0..n_slots).map(|i| format!("sl:slot_{s}_{i}")).collect(),
                nested: (s % 5 == 4).then(|| (format!("in:inner_{s}"), format!("sl:inner_slot_{s}"))),
            }
        })
        .collect()
}

struct Row {
    domain: String,
    utterance: String,
    semparse: String,
}

fn render(t: &Template, values: &[Vec<String>], prefix: Option<&str>) -> Row {
    let mut words: Vec<String> = prefix.map(|p| vec![p.to_string()]).unwrap_or_default();
    let mut frame = vec![format!("[{}", t.intent)];
    for (i, carrier) in t.carriers.iter().enumerate() {
        words.extend(carrier.iter().cloned());
        frame.extend(carrier.iter().cloned());
        if let Some(label) = t.slots.get(i) {
            let value = &values[i];
            words.extend(value.iter().cloned());
            match (&t.nested, i) {
                (Some((inner, inner_slot)), 0) => {
                    frame.push(format!("[{label} [{inner} [{inner_slot} {} ] ] ]", value.join(" ")));
                }
                _ => frame.push(format!("[{label} {} ]", value.join(" "))),
            }
        }
    }
    frame.push("]".to_string());
    Row { domain: t.domain.clone(), utterance: words.join(" "), semparse: frame.join(" ") }
}

fn corpus(split: &str, rows: &[Row]) -> Result<Corpus, CorpusError> {
    Corpus::from_rows(split, rows.iter().map(|r| (r.domain.as_str(), r.utterance.as_str(), r.semparse.as_str())))
}

/// Returns `(train, test)`. Each test record re-uses the skeleton and slot
/// values of a training record, with one extra leading filler word.
pub fn generate(cfg: &SynthConfig) -> Result<(Corpus, Corpus), CorpusError> {
    let mut rng = SplitMix64::new(cfg.seed);
    let templates = templates(cfg, &mut rng);
    let mut train_rows = Vec::with_capacity(cfg.train_size);
    let mut train_values = Vec::with_capacity(cfg.train_size);
    for i in 0..cfg.train_size {
        let t = &templates[i % templates.len()];
        let values: Vec<Vec<String>> = t
            .slots
            .iter()
            .map(|_| {
                let len = 1 + rng.next_below(2) as usize;
                (0..len).map(|_| pseudo_word(&mut rng, 3)).collect()
            })
            .collect();
        train_rows.push(render(t, &values, None));
        train_values.push((i % templates.len(), values));
    }
    let fillers = ["please", "now", "hey", "ok"];
    let test_rows: Vec<Row> = (0..cfg.test_size)
        .map(|_| {
            let (t, values) = &train_values[rng.next_below(train_values.len() as u64) as usize];
            let filler = fillers[rng.next_below(fillers.len() as u64) as usize];
            render(&templates[*t], values, Some(filler))
        })
        .collect();
    Ok((corpus("train", &train_rows)?, corpus("test", &test_rows)?))
}
