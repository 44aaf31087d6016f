//! TOP seqlogical frames: `[in:intent text [sl:slot value tokens ] ... ]`.
//!
//! Intents (`in:*`) hold text tokens and slots. Slots (`sl:*`) hold either
//! text tokens (the slot value) or exactly one nested intent. Brackets are
//! always their own tokens, so `[sl:timer_name oven]` and
//! `[sl:timer_name oven ]` parse identically.

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

pub const INTENT_PREFIX: &str = "in:";
pub const SLOT_PREFIX: &str = "sl:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopError {
    #[error("empty frame string")]
    Empty,
    #[error("unbalanced brackets at token {position}")]
    UnbalancedBrackets { position: usize },
    #[error("empty node `[ ]` at token {position}")]
    EmptyNode { position: usize },
    #[error("root label `{label}` is not an intent")]
    RootNotIntent { label: String },
    #[error("slot `{label}` mixes text and nested frames")]
    MixedSlotChildren { label: String },
    #[error("tokens outside the root frame at token {position}")]
    TrailingGarbage { position: usize },
    #[error("label `{label}` not allowed under `{parent}`")]
    UnexpectedLabel { label: String, parent: String },
    #[error("invalid label `{0}`")]
    BadLabel(String),
    #[error("invalid text token `{0}`")]
    BadToken(String),
}

/// A parsed frame. The root is always an intent.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ParseTree {
    root: IntentNode,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IntentNode {
    label: String,
    children: Vec<IntentChild>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum IntentChild {
    Text(String),
    Slot(SlotNode),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SlotNode {
    label: String,
    value: SlotValue,
}

/// Slot content: value tokens, or a single nested frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SlotValue {
    Text(Vec<String>),
    Intent(Box<IntentNode>),
}

/// Canonical frame with all slot values removed, e.g.
/// `[in:remove_from_playlist_music [sl:music_genre ] ]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrameSkeleton(String);

impl FrameSkeleton {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for FrameSkeleton {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn valid_atom(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c == '[' || c == ']')
}

fn check_label(label: &str, prefix: &str) -> Result<(), TopError> {
    if valid_atom(label) && label.starts_with(prefix) {
        Ok(())
    } else {
        Err(TopError::BadLabel(label.to_string()))
    }
}

fn check_token(token: &str) -> Result<(), TopError> {
    if valid_atom(token) {
        Ok(())
    } else {
        Err(TopError::BadToken(token.to_string()))
    }
}

impl ParseTree {
    pub fn new(root: IntentNode) -> Self {
        ParseTree { root }
    }

    pub fn root(&self) -> &IntentNode {
        &self.root
    }

    pub fn into_root(self) -> IntentNode {
        self.root
    }
}

impl IntentNode {
    pub fn new(label: impl Into<String>, children: Vec<IntentChild>) -> Result<Self, TopError> {
        let label = label.into();
        check_label(&label, INTENT_PREFIX)?;
        for child in &children {
            if let IntentChild::Text(t) = child {
                check_token(t)?;
            }
        }
        Ok(IntentNode { label, children })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn children(&self) -> &[IntentChild] {
        &self.children
    }

    pub(crate) fn children_mut(&mut self) -> &mut Vec<IntentChild> {
        &mut self.children
    }

    pub fn slots(&self) -> impl Iterator<Item = &SlotNode> {
        self.children.iter().filter_map(|c| match c {
            IntentChild::Slot(s) => Some(s),
            IntentChild::Text(_) => None,
        })
    }
}

impl SlotNode {
    pub fn new(label: impl Into<String>, value: SlotValue) -> Result<Self, TopError> {
        let label = label.into();
        check_label(&label, SLOT_PREFIX)?;
        if let SlotValue::Text(tokens) = &value {
            for t in tokens {
                check_token(t)?;
            }
        }
        Ok(SlotNode { label, value })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn value(&self) -> &SlotValue {
        &self.value
    }

    pub(crate) fn value_mut(&mut self) -> &mut SlotValue {
        &mut self.value
    }

    /// Serialized children, without the slot's own brackets and label.
    pub fn content(&self) -> String {
        let mut out = String::new();
        match &self.value {
            SlotValue::Text(tokens) => out.push_str(&tokens.join(" ")),
            SlotValue::Intent(inner) => write_intent(inner, &mut out),
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tok<'a> {
    Open,
    Close,
    Word(&'a str),
}

fn lex(s: &str) -> Vec<Tok<'_>> {
    let mut toks = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in s.char_indices() {
        if c == '[' || c == ']' || c.is_whitespace() {
            if let Some(st) = start.take() {
                toks.push(Tok::Word(&s[st..i]));
            }
            match c {
                '[' => toks.push(Tok::Open),
                ']' => toks.push(Tok::Close),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(st) = start {
        toks.push(Tok::Word(&s[st..]));
    }
    toks
}

struct Parser<'a> {
    toks: Vec<Tok<'a>>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<Tok<'a>> {
        self.toks.get(self.pos).copied()
    }

    /// Consumes `[ label`, returning the label.
    fn open(&mut self) -> Result<&'a str, TopError> {
        debug_assert_eq!(self.peek(), Some(Tok::Open));
        let at = self.pos;
        self.pos += 1;
        match self.peek() {
            Some(Tok::Word(label)) => {
                self.pos += 1;
                Ok(label)
            }
            Some(Tok::Close) => Err(TopError::EmptyNode { position: at }),
            Some(Tok::Open) => Err(TopError::BadLabel("[".to_string())),
            None => Err(TopError::UnbalancedBrackets { position: at }),
        }
    }

    fn intent_body(&mut self, label: &str) -> Result<IntentNode, TopError> {
        check_label(label, INTENT_PREFIX)?;
        let mut children = Vec::new();
        loop {
            match self.peek() {
                None => return Err(TopError::UnbalancedBrackets { position: self.pos }),
                Some(Tok::Close) => {
                    self.pos += 1;
                    return Ok(IntentNode { label: label.to_string(), children });
                }
                Some(Tok::Word(w)) => {
                    self.pos += 1;
                    children.push(IntentChild::Text(w.to_string()));
                }
                Some(Tok::Open) => {
                    let child = self.open()?;
                    if !child.starts_with(SLOT_PREFIX) {
                        return Err(TopError::UnexpectedLabel {
                            label: child.to_string(),
                            parent: label.to_string(),
                        });
                    }
                    children.push(IntentChild::Slot(self.slot_body(child)?));
                }
            }
        }
    }

    fn slot_body(&mut self, label: &str) -> Result<SlotNode, TopError> {
        check_label(label, SLOT_PREFIX)?;
        let mut tokens = Vec::new();
        let mut nested: Option<IntentNode> = None;
        loop {
            match self.peek() {
                None => return Err(TopError::UnbalancedBrackets { position: self.pos }),
                Some(Tok::Close) => {
                    self.pos += 1;
                    break;
                }
                Some(Tok::Word(w)) => {
                    if nested.is_some() {
                        return Err(TopError::MixedSlotChildren { label: label.to_string() });
                    }
                    self.pos += 1;
                    tokens.push(w.to_string());
                }
                Some(Tok::Open) => {
                    let child = self.open()?;
                    if !child.starts_with(INTENT_PREFIX) {
                        return Err(TopError::UnexpectedLabel {
                            label: child.to_string(),
                            parent: label.to_string(),
                        });
                    }
                    let inner = self.intent_body(child)?;
                    if nested.is_some() || !tokens.is_empty() {
                        return Err(TopError::MixedSlotChildren { label: label.to_string() });
                    }
                    nested = Some(inner);
                }
            }
        }
        let value = match nested {
            Some(inner) => SlotValue::Intent(Box::new(inner)),
            None => SlotValue::Text(tokens),
        };
        Ok(SlotNode { label: label.to_string(), value })
    }
}

/// Parses a bracketed TOP frame string. Whitespace runs are collapsed.
pub fn parse_top(s: &str) -> Result<ParseTree, TopError> {
    let mut p = Parser { toks: lex(s), pos: 0 };
    match p.peek() {
        None => return Err(TopError::Empty),
        Some(Tok::Open) => {}
        Some(Tok::Word(_)) => return Err(TopError::TrailingGarbage { position: 0 }),
        Some(Tok::Close) => return Err(TopError::UnbalancedBrackets { position: 0 }),
    }
    let label = p.open()?;
    if !label.starts_with(INTENT_PREFIX) {
        return Err(TopError::RootNotIntent { label: label.to_string() });
    }
    let root = p.intent_body(label)?;
    match p.peek() {
        None => Ok(ParseTree { root }),
        Some(Tok::Close) => Err(TopError::UnbalancedBrackets { position: p.pos }),
        Some(_) => Err(TopError::TrailingGarbage { position: p.pos }),
    }
}

fn write_intent(node: &IntentNode, out: &mut String) {
    out.push('[');
    out.push_str(&node.label);
    for child in &node.children {
        out.push(' ');
        match child {
            IntentChild::Text(t) => out.push_str(t),
            IntentChild::Slot(s) => write_slot(s, out),
        }
    }
    out.push_str(" ]");
}

fn write_slot(slot: &SlotNode, out: &mut String) {
    out.push('[');
    out.push_str(&slot.label);
    match &slot.value {
        SlotValue::Text(tokens) => {
            for t in tokens {
                out.push(' ');
                out.push_str(t);
            }
        }
        SlotValue::Intent(inner) => {
            out.push(' ');
            write_intent(inner, out);
        }
    }
    out.push_str(" ]");
}

/// `[<label> <child> ... ]` with single spaces.
pub fn serialize(t: &ParseTree) -> String {
    let mut out = String::new();
    write_intent(&t.root, &mut out);
    out
}

impl fmt::Display for ParseTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize(self))
    }
}

fn decouple_intent(node: &IntentNode) -> IntentNode {
    let children = node
        .children
        .iter()
        .filter_map(|c| match c {
            IntentChild::Text(_) => None,
            IntentChild::Slot(s) => Some(IntentChild::Slot(decouple_slot(s))),
        })
        .collect();
    IntentNode { label: node.label.clone(), children }
}

fn decouple_slot(slot: &SlotNode) -> SlotNode {
    let value = match &slot.value {
        SlotValue::Text(tokens) => SlotValue::Text(tokens.clone()),
        SlotValue::Intent(inner) => SlotValue::Intent(Box::new(decouple_intent(inner))),
    };
    SlotNode { label: slot.label.clone(), value }
}

/// Drops text tokens that sit directly under an intent; slot values stay.
pub fn decouple(t: &ParseTree) -> ParseTree {
    ParseTree { root: decouple_intent(&t.root) }
}

fn slot_order(a: &SlotNode, b: &SlotNode) -> Ordering {
    a.label.cmp(&b.label).then_with(|| a.content().cmp(&b.content()))
}

fn sort_intent(node: &mut IntentNode) {
    for child in node.children.iter_mut() {
        if let IntentChild::Slot(s) = child {
            if let SlotValue::Intent(inner) = &mut s.value {
                sort_intent(inner);
            }
        }
    }
    // Text children are gone by now, so every child is a slot.
    node.children.sort_by(|a, b| match (a, b) {
        (IntentChild::Slot(x), IntentChild::Slot(y)) => slot_order(x, y),
        _ => Ordering::Equal,
    });
}

/// Decoupled form with sibling slots sorted by (label, content). Nested
/// intents are sorted independently.
pub fn canonicalize(t: &ParseTree) -> ParseTree {
    let mut root = decouple_intent(&t.root);
    sort_intent(&mut root);
    ParseTree { root }
}

fn strip_values(node: &mut IntentNode) {
    for child in node.children.iter_mut() {
        if let IntentChild::Slot(s) = child {
            match &mut s.value {
                SlotValue::Text(tokens) => tokens.clear(),
                SlotValue::Intent(inner) => strip_values(inner),
            }
        }
    }
}

pub fn skeleton(t: &ParseTree) -> FrameSkeleton {
    let mut canon = canonicalize(t);
    strip_values(&mut canon.root);
    FrameSkeleton(serialize(&canon))
}

fn intent_depth(node: &IntentNode) -> usize {
    1 + node
        .slots()
        .map(|s| match &s.value {
            SlotValue::Intent(inner) => intent_depth(inner),
            SlotValue::Text(_) => 0,
        })
        .max()
        .unwrap_or(0)
}

/// Maximum number of intents on any root-to-leaf path.
pub fn depth(t: &ParseTree) -> usize {
    intent_depth(&t.root)
}

/// All intent and slot labels in document order.
pub fn labels(t: &ParseTree) -> (Vec<&str>, Vec<&str>) {
    fn walk<'t>(node: &'t IntentNode, intents: &mut Vec<&'t str>, slots: &mut Vec<&'t str>) {
        intents.push(&node.label);
        for s in node.slots() {
            slots.push(&s.label);
            if let SlotValue::Intent(inner) = &s.value {
                walk(inner, intents, slots);
            }
        }
    }
    let mut intents = Vec::new();
    let mut slots = Vec::new();
    walk(&t.root, &mut intents, &mut slots);
    (intents, slots)
}

/// `serialize(canonicalize(parse_top(s)))`.
pub fn canonical_string(s: &str) -> Result<String, TopError> {
    parse_top(s).map(|t| serialize(&canonicalize(&t)))
}
