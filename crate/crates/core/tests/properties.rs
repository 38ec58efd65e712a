//! Property tests over the pure text-processing layers.

use cothink_core::trace::{segment_episodes, split_think};
use cothink_core::verify::{judge, normalize, render};
use proptest::prelude::*;

const WORDS: &[&str] = &[
    "so", "then", "compute", "let me verify", "wait,", "on second thought", "x", "42", "=",
    "therefore", "alternatively,", "check", "\n",
];

fn text_strategy() -> impl Strategy<Value = String> {
    proptest::collection::vec(proptest::sample::select(WORDS), 0..40)
        .prop_map(|words| words.join(" "))
}

fn markers(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

proptest! {
    #[test]
    fn segmentation_partitions_the_input(text in text_strategy()) {
        let episodes = segment_episodes(
            &text,
            &markers(cothink_core::config::DEFAULT_EPISODE_MARKERS),
        ).unwrap();
        let concat: String = episodes.iter().map(|e| e.text.as_str()).collect();
        prop_assert_eq!(concat, text);
    }

    #[test]
    fn adding_a_marker_never_decreases_episode_count(text in text_strategy()) {
        let base = markers(&["let me verify", "wait,"]);
        let mut extended = base.clone();
        extended.push("on second thought".into());
        let before = segment_episodes(&text, &base).unwrap().len();
        let after = segment_episodes(&text, &extended).unwrap().len();
        prop_assert!(after >= before, "{} -> {} on {:?}", before, after, text);
    }

    #[test]
    fn split_of_wrapped_content_recovers_it(think in text_strategy(), answer in text_strategy()) {
        // Tag-free content wrapped in tags splits back to itself.
        prop_assume!(!think.contains("<think>") && !think.contains("</think>"));
        prop_assume!(!answer.contains("<think>") && !answer.contains("</think>"));
        let raw = format!("<think>{think}</think>{answer}");
        let split = split_think(&raw, "<think>", "</think>");
        prop_assert!(split.had_think_tags);
        prop_assert_eq!(split.think_text, think);
        prop_assert_eq!(split.answer_text, answer);
    }

    #[test]
    fn normalize_is_idempotent_through_render(num in -10_000i64..10_000, den in 1i64..500) {
        for raw in [num.to_string(), format!("{num}/{den}"), format!("{num}.{:03}", den)] {
            let once = normalize(&raw);
            let twice = normalize(&render(&once));
            prop_assert_eq!(&once, &twice, "raw {}", raw);
        }
    }

    #[test]
    fn judgments_survive_trailing_punctuation(num in -10_000i64..10_000) {
        let gold = normalize(&num.to_string());
        for suffix in [".", ",", " ", "?!", ".  "] {
            let raw = format!("{num}{suffix}");
            prop_assert_eq!(
                judge(Some(&normalize(&raw)), &gold),
                cothink_core::domain::Verdict::Correct,
                "raw {:?}", raw
            );
        }
    }

    #[test]
    fn numeric_judgments_are_symmetric(a in -500i64..500, b in -500i64..500, d in 1i64..40) {
        let left = normalize(&format!("{a}/{d}"));
        let right = normalize(&b.to_string());
        let forward = judge(Some(&left), &right);
        let backward = judge(Some(&right), &left);
        prop_assert_eq!(forward, backward);
    }
}
