use std::sync::Mutex;

use bmq_core::llmgate::prompts::{render_terms_line, IN_CONTEXT_EXAMPLES};
use bmq_core::llmgate::{
    extract_terms, parse_terms_response, ChatBackend, ChatReply, ChatRequest, LlmError, LlmSettings,
};
use proptest::prelude::*;

/// Replies from a fixed queue and records every prompt it saw.
struct Queue {
    replies: Mutex<Vec<&'static str>>,
    seen: Mutex<Vec<String>>,
}

impl Queue {
    fn new(replies: &[&'static str]) -> Self {
        let mut r = replies.to_vec();
        r.reverse();
        Self {
            replies: Mutex::new(r),
            seen: Mutex::new(Vec::new()),
        }
    }
}

impl ChatBackend for Queue {
    fn complete(&self, req: &ChatRequest) -> Result<ChatReply, LlmError> {
        self.seen.lock().unwrap().push(req.user.clone());
        let text = self.replies.lock().unwrap().pop().expect("unexpected extra call");
        Ok(ChatReply {
            text: text.to_string(),
            cache_hit: false,
        })
    }
}

#[test]
fn in_context_examples_parse() {
    for (_, terms) in IN_CONTEXT_EXAMPLES {
        let parsed = parse_terms_response(&render_terms_line(terms)).unwrap();
        assert_eq!(parsed.terms, terms.to_vec());
    }
}

#[test]
fn chatty_reply_uses_last_terms_line() {
    let reply = "Let me think.\nTerms: [draft]\nOn reflection:\nTerms: [Insulin, Type 1 Diabetes]\n";
    assert_eq!(parse_terms_response(reply).unwrap().terms, ["Insulin", "Type 1 Diabetes"]);
}

#[test]
fn bare_bracket_list_is_accepted() {
    assert_eq!(parse_terms_response("[fever , chills,,]").unwrap().terms, ["fever", "chills"]);
}

#[test]
fn empty_list_is_valid_and_not_degraded() {
    let b = Queue::new(&["Terms: []"]);
    let got = extract_terms("q", &b, &LlmSettings::default()).unwrap();
    assert!(got.terms.is_empty());
    assert!(!got.degraded);
}

#[test]
fn malformed_reply_is_a_parse_failure() {
    for bad in ["I cannot help with that", "Terms: none", "", "Terms: ]["] {
        assert!(matches!(parse_terms_response(bad), Err(LlmError::ParseFailure(_))), "{bad:?}");
    }
}

#[test]
fn retry_recovers() {
    let b = Queue::new(&["no idea", "Terms: [malaria]"]);
    let got = extract_terms("q", &b, &LlmSettings::default()).unwrap();
    assert_eq!(got.terms.terms, ["malaria"]);
    assert!(!got.degraded);
    let seen = b.seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    // the retry repeats the format instruction at the end
    assert!(seen[1].ends_with("Output format:\nTerms: [term1, term2, ...]"));
}

#[test]
fn second_failure_degrades_to_empty() {
    let b = Queue::new(&["no idea", "still no idea"]);
    let got = extract_terms("q", &b, &LlmSettings::default()).unwrap();
    assert!(got.terms.is_empty());
    assert!(got.degraded);
}

#[test]
fn backend_errors_propagate() {
    struct Down;
    impl ChatBackend for Down {
        fn complete(&self, _: &ChatRequest) -> Result<ChatReply, LlmError> {
            Err(LlmError::BackendUnavailable("down".into()))
        }
    }
    assert!(matches!(
        extract_terms("q", &Down, &LlmSettings::default()),
        Err(LlmError::BackendUnavailable(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn rendered_terms_round_trip(
        terms in prop::collection::vec("[A-Za-z0-9'()-][A-Za-z0-9' ()-]{0,20}[A-Za-z0-9'()-]", 0..8),
        preamble in "[a-z .]{0,40}",
    ) {
        let refs: Vec<&str> = terms.iter().map(String::as_str).collect();
        let reply = format!("{preamble}\n{}", render_terms_line(&refs));
        let parsed = parse_terms_response(&reply).unwrap();
        prop_assert_eq!(parsed.terms, terms);
    }

    #[test]
    fn parser_never_panics(s in "\\PC{0,200}") {
        let _ = parse_terms_response(&s);
    }
}
