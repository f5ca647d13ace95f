use serde::Serialize;

use super::Tag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    /// `I-X` at sentence start or after `O`.
    OrphanInside,
    /// `I-X` after `B-Y`/`I-Y` with `Y != X`.
    TypeMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
}

/// Positions where the IOB2 automaton rejects `tags`. Empty iff the sequence is valid.
pub fn validate_bio(tags: &[Tag]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut prev = Tag::O;
    for (index, &tag) in tags.iter().enumerate() {
        if let Tag::I(t) = tag {
            match prev.entity_type() {
                None => out.push(Violation {
                    index,
                    kind: ViolationKind::OrphanInside,
                }),
                Some(p) if p != t => out.push(Violation {
                    index,
                    kind: ViolationKind::TypeMismatch,
                }),
                _ => {}
            }
        }
        prev = tag;
    }
    out
}

/// Rewrites every offending `I-X` to `B-X`. The result always validates.
pub fn repair_bio(tags: &mut [Tag]) {
    for v in validate_bio(tags) {
        if let Tag::I(t) = tags[v.index] {
            tags[v.index] = Tag::B(t);
        }
    }
}
