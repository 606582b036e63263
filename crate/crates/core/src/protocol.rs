//! Prompt rendering and strict response parsing.
//!
//! Policies are queried with a fixed template and must reply with exactly
//! `<think>body</think>` followed by `<answer>A</answer>` or
//! `<answer>B</answer>`. Strict means: after trimming surrounding
//! whitespace, nothing may appear outside the two tag pairs except
//! whitespace between them, tags are lowercase, and the answer token is
//! case-sensitive. A response that fails the grammar is classified with a
//! single malformed reason, chosen by a fixed rule order so parsing is
//! deterministic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Binary verdict. `Defect` is answer token "A", `Normal` is "B".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Defect,
    Normal,
}

impl Label {
    /// Answer token emitted inside `<answer>` tags.
    pub fn token(self) -> &'static str {
        match self {
            Label::Defect => "A",
            Label::Normal => "B",
        }
    }

    /// Parse an answer token. Case-sensitive; only "A" and "B" are valid.
    pub fn from_token(token: &str) -> Option<Label> {
        match token {
            "A" => Some(Label::Defect),
            "B" => Some(Label::Normal),
            _ => None,
        }
    }

    pub fn other(self) -> Label {
        match self {
            Label::Defect => Label::Normal,
            Label::Normal => Label::Defect,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Defect => write!(f, "defect"),
            Label::Normal => write!(f, "normal"),
        }
    }
}

/// Query template. The single `{object_name}` slot is substituted by
/// [`render_prompt`]; everything else is emitted byte-for-byte.
pub const PROMPT_TEMPLATE: &str = "This is an image containing a {object_name}. Analyze the given image and determine if there is any defect in the object.\nOutput the thinking process in <think> </think> and final answer in <answer> </answer> tags.\nOptions: (A) defect (B) normal.\nThe output answer format should be as follows:\n<think> ... </think> <answer>A or B</answer>\nPlease strictly follow the format.";

const SLOT: &str = "{object_name}";

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

/// A rendered query for one object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptInstance {
    pub object_name: String,
    pub prompt_text: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("object name is empty")]
    EmptyObjectName,
    #[error("object name contains tag characters: {0:?}")]
    IllegalCharacters(String),
}

/// Render the query template for an object name.
///
/// The name must be non-empty (after trimming) and free of `<`/`>` so it
/// cannot interfere with the tag grammar.
pub fn render_prompt(object_name: &str) -> Result<PromptInstance, ProtocolError> {
    if object_name.trim().is_empty() {
        return Err(ProtocolError::EmptyObjectName);
    }
    if object_name.contains('<') || object_name.contains('>') {
        return Err(ProtocolError::IllegalCharacters(object_name.to_string()));
    }
    Ok(PromptInstance {
        object_name: object_name.to_string(),
        prompt_text: PROMPT_TEMPLATE.replacen(SLOT, object_name, 1),
    })
}

/// Why a response failed the strict grammar. When several rules are
/// violated at once, the reported reason is the first failing one in the
/// declaration order below.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MalformedReason {
    /// An `<answer>` tag opens before the `<think>` tag (both present).
    BadOrder,
    /// No `<think>...</think>` pair could be located.
    MissingThink,
    /// The think body is empty or whitespace-only.
    EmptyThink,
    /// No `<answer>...</answer>` pair after the think block.
    MissingAnswer,
    /// The answer token is not exactly "A" or "B" after trimming.
    BadAnswerToken,
    /// Non-whitespace content outside the two tag pairs.
    TrailingContent,
}

/// Outcome of parsing a policy emission. Malformedness is a value, not an
/// error: the parser is total over arbitrary text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsedResponse {
    WellFormed { think: String, answer: Label },
    Malformed { reason: MalformedReason },
}

impl ParsedResponse {
    pub fn is_well_formed(&self) -> bool {
        matches!(self, ParsedResponse::WellFormed { .. })
    }

    /// The parsed answer, if well-formed.
    pub fn answer(&self) -> Option<Label> {
        match self {
            ParsedResponse::WellFormed { answer, .. } => Some(*answer),
            ParsedResponse::Malformed { .. } => None,
        }
    }
}

/// Canonical serialization of a (think, answer) pair:
/// `<think>{think}</think> <answer>{token}</answer>`.
pub fn canonical_response(think: &str, answer: Label) -> String {
    format!(
        "{THINK_OPEN}{think}{THINK_CLOSE} {ANSWER_OPEN}{}{ANSWER_CLOSE}",
        answer.token()
    )
}

/// Parse a policy emission under the strict grammar.
///
/// Total over arbitrary input: every byte sequence yields either a
/// `WellFormed` value or a `Malformed` reason. The think body is returned
/// verbatim (no trimming) so canonical round-trips are exact.
pub fn parse_response(text: &str) -> ParsedResponse {
    let trimmed = text.trim();

    let think_open = trimmed.find(THINK_OPEN);
    let answer_open = trimmed.find(ANSWER_OPEN);
    if let (Some(t), Some(a)) = (think_open, answer_open) {
        if a < t {
            return malformed(MalformedReason::BadOrder);
        }
    }

    let Some(t_open) = think_open else {
        return malformed(MalformedReason::MissingThink);
    };
    let body_start = t_open + THINK_OPEN.len();
    let Some(close_rel) = trimmed[body_start..].find(THINK_CLOSE) else {
        return malformed(MalformedReason::MissingThink);
    };
    let think_body = &trimmed[body_start..body_start + close_rel];
    if think_body.trim().is_empty() {
        return malformed(MalformedReason::EmptyThink);
    }

    let rest = &trimmed[body_start + close_rel + THINK_CLOSE.len()..];
    let Some(a_open) = rest.find(ANSWER_OPEN) else {
        return malformed(MalformedReason::MissingAnswer);
    };
    let token_start = a_open + ANSWER_OPEN.len();
    let Some(a_close) = rest[token_start..].find(ANSWER_CLOSE) else {
        return malformed(MalformedReason::MissingAnswer);
    };
    let Some(answer) = Label::from_token(rest[token_start..token_start + a_close].trim()) else {
        return malformed(MalformedReason::BadAnswerToken);
    };

    let leading = &trimmed[..t_open];
    let between = &rest[..a_open];
    let trailing = &rest[token_start + a_close + ANSWER_CLOSE.len()..];
    if !leading.trim().is_empty() || !between.trim().is_empty() || !trailing.trim().is_empty() {
        return malformed(MalformedReason::TrailingContent);
    }

    ParsedResponse::WellFormed {
        think: think_body.to_string(),
        answer,
    }
}

fn malformed(reason: MalformedReason) -> ParsedResponse {
    ParsedResponse::Malformed { reason }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn render_substitutes_object_name() {
        let prompt = render_prompt("pill").unwrap();
        assert!(prompt
            .prompt_text
            .starts_with("This is an image containing a pill."));
        assert_eq!(prompt.object_name, "pill");
    }

    #[test]
    fn render_keeps_option_lines() {
        let prompt = render_prompt("bottle").unwrap();
        assert!(prompt.prompt_text.contains("a bottle"));
        assert!(prompt.prompt_text.contains("(A) defect"));
        assert!(prompt.prompt_text.contains("(B) normal"));
        assert!(prompt.prompt_text.ends_with("Please strictly follow the format."));
    }

    #[test]
    fn render_matches_template_bytes() {
        let prompt = render_prompt("pill").unwrap();
        let expected = PROMPT_TEMPLATE.replace("{object_name}", "pill");
        assert_eq!(prompt.prompt_text, expected);
    }

    #[test]
    fn render_slot_used_exactly_once() {
        let prompt = render_prompt("widgetron").unwrap();
        assert_eq!(prompt.prompt_text.matches("widgetron").count(), 1);
        assert!(!prompt.prompt_text.contains(SLOT));
    }

    #[test]
    fn render_rejects_empty_and_tags() {
        assert_eq!(render_prompt(""), Err(ProtocolError::EmptyObjectName));
        assert_eq!(render_prompt("   "), Err(ProtocolError::EmptyObjectName));
        assert_eq!(
            render_prompt("<pill>"),
            Err(ProtocolError::IllegalCharacters("<pill>".to_string()))
        );
    }

    #[test]
    fn parse_well_formed() {
        let parsed = parse_response("<think>scratch on cap</think> <answer>A</answer>");
        assert_eq!(
            parsed,
            ParsedResponse::WellFormed {
                think: "scratch on cap".to_string(),
                answer: Label::Defect,
            }
        );
    }

    #[test]
    fn parse_trims_outer_whitespace_and_inner_token() {
        let parsed = parse_response("  <think>ok</think>\n\n<answer> B </answer>  ");
        assert_eq!(parsed.answer(), Some(Label::Normal));
    }

    #[test]
    fn parse_bad_answer_token() {
        let parsed = parse_response("<think>ok</think> <answer>C</answer>");
        assert_eq!(
            parsed,
            ParsedResponse::Malformed {
                reason: MalformedReason::BadAnswerToken
            }
        );
        // Case-sensitive.
        let lower = parse_response("<think>ok</think> <answer>a</answer>");
        assert_eq!(
            lower,
            ParsedResponse::Malformed {
                reason: MalformedReason::BadAnswerToken
            }
        );
    }

    #[test]
    fn parse_bad_order() {
        let parsed = parse_response("<answer>A</answer> <think>x</think>");
        assert_eq!(
            parsed,
            ParsedResponse::Malformed {
                reason: MalformedReason::BadOrder
            }
        );
    }

    #[test]
    fn all_malformed_reasons_reachable() {
        let cases = [
            ("<answer>A</answer> <think>x</think>", MalformedReason::BadOrder),
            ("no tags at all", MalformedReason::MissingThink),
            ("<think>never closed <answer>A</answer>", MalformedReason::MissingThink),
            ("<think>  </think> <answer>A</answer>", MalformedReason::EmptyThink),
            ("<think>x</think>", MalformedReason::MissingAnswer),
            ("<think>x</think> <answer>A", MalformedReason::MissingAnswer),
            ("<think>x</think> <answer></answer>", MalformedReason::BadAnswerToken),
            ("<think>x</think> <answer>A</answer> extra", MalformedReason::TrailingContent),
            ("pre <think>x</think> <answer>A</answer>", MalformedReason::TrailingContent),
            ("<think>x</think> mid <answer>A</answer>", MalformedReason::TrailingContent),
        ];
        for (text, reason) in cases {
            assert_eq!(
                parse_response(text),
                ParsedResponse::Malformed { reason },
                "input: {text:?}"
            );
        }
    }

    #[test]
    fn reason_order_is_fixed() {
        // EmptyThink outranks TrailingContent when both rules fail.
        let parsed = parse_response("junk <think> </think> <answer>A</answer>");
        assert_eq!(
            parsed,
            ParsedResponse::Malformed {
                reason: MalformedReason::EmptyThink
            }
        );
        // BadAnswerToken outranks TrailingContent.
        let parsed = parse_response("junk <think>x</think> <answer>Q</answer>");
        assert_eq!(
            parsed,
            ParsedResponse::Malformed {
                reason: MalformedReason::BadAnswerToken
            }
        );
    }

    #[test]
    fn parse_is_deterministic() {
        let text = "<think>x</think> <answer>A</answer>";
        assert_eq!(parse_response(text), parse_response(text));
    }

    proptest! {
        #[test]
        fn round_trip_canonical_layout(
            think in "[a-zA-Z0-9 ,.!?'-]{1,60}",
            defect in any::<bool>(),
        ) {
            prop_assume!(!think.trim().is_empty());
            let answer = if defect { Label::Defect } else { Label::Normal };
            let text = canonical_response(&think, answer);
            prop_assert_eq!(
                parse_response(&text),
                ParsedResponse::WellFormed { think, answer }
            );
        }

        #[test]
        fn parser_total_over_arbitrary_text(text in ".*") {
            // Must classify without panicking.
            let _ = parse_response(&text);
        }
    }
}
