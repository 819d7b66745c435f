use canary_core::symbolic::{hg, WS_ALPHABET, ZW_ALPHABET};
use canary_core::{apply_transform, ChainId, Error, TransformId, TransportChain, TransportConfig};
use proptest::prelude::*;

fn t(id: TransformId, s: &str) -> String {
    apply_transform(id, s, &TransportConfig::default()).unwrap()
}

fn messy_text() -> impl Strategy<Value = String> {
    let atoms = prop_oneof![
        5 => "[a-zA-Z]{1,8}",
        3 => Just(" ".to_string()),
        1 => Just("  \t".to_string()),
        1 => Just("\n".to_string()),
        1 => Just("\r\n".to_string()),
        1 => Just(" \n".to_string()),
        1 => "[.,;:!?\"'()-]",
        1 => prop::sample::select(WS_ALPHABET.to_vec()).prop_map(String::from),
        1 => prop::sample::select(ZW_ALPHABET.to_vec()).prop_map(String::from),
        1 => prop::sample::select(vec![
            "\u{0430}", "\u{041D}", "é", "ﬁ", "\u{00A0}", "\u{2014}", "\u{201C}", "\u{00AD}", "\u{2060}", "①", "日本",
        ])
        .prop_map(String::from),
    ];
    prop::collection::vec(atoms, 0..120).prop_map(|v| v.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn idempotent_transforms(text in messy_text()) {
        use TransformId::*;
        for id in [T04, T05, T06, T07, T08, T09, T10, T11] {
            let once = t(id, &text);
            prop_assert_eq!(t(id, &once), once.clone(), "{} not idempotent", id);
        }
    }

    #[test]
    fn non_ascii_strip_leaves_no_alphabet_symbol(text in messy_text()) {
        let out = t(TransformId::T10, &text);
        prop_assert!(out.is_ascii());
        prop_assert!(!out.chars().any(|c| WS_ALPHABET.contains(&c) || ZW_ALPHABET.contains(&c) || hg::is_cyrillic_twin(c)));
    }

    #[test]
    fn passthrough_is_identity(text in messy_text()) {
        prop_assert_eq!(t(TransformId::T00, &text), text);
    }

    #[test]
    fn chains_are_left_folds(text in messy_text()) {
        let config = TransportConfig::default();
        for c in [ChainId::Tier1, ChainId::Tier2, ChainId::Tier3, ChainId::Tier12, ChainId::Tier123] {
            let folded = c.steps().into_iter().fold(text.clone(), |acc, id| t(id, &acc));
            prop_assert_eq!(c.chain().apply(&text, &config).unwrap(), folded);
        }
    }
}

#[test]
fn transform_examples() {
    use TransformId::*;
    assert_eq!(t(T04, "a  \t\nb \u{2009}\n"), "a\nb \u{2009}\n");
    assert_eq!(t(T06, "a \u{2009} b\n\n c"), "a b c");
    assert_eq!(t(T08, "a\u{200B}b\u{FEFF}"), "ab");
    assert_eq!(t(T09, "\u{0410}\u{0430}"), "Aa");
    assert_eq!(t(T10, "caf\u{00E9} \u{2009}x"), "caf x");
    assert_eq!(t(T05, "\u{FB01}"), "fi");
    assert!(t(T07, "a\u{200D}b\u{00AD}c").chars().count() == 3);
}

#[test]
fn external_paraphrase() {
    let chain: TransportChain = "Tier-4".parse().unwrap();
    let missing = TransportConfig::default();
    assert!(!chain.is_available(&missing));
    assert!(matches!(
        chain.apply("x", &missing),
        Err(Error::TransformUnavailable(_))
    ));
    let upper = TransportConfig {
        paraphrase_cmd: Some("tr a-z A-Z".into()),
    };
    assert_eq!(chain.apply("quiet words", &upper).unwrap(), "QUIET WORDS");
    let failing = TransportConfig {
        paraphrase_cmd: Some("exit 4".into()),
    };
    assert!(chain.apply("x", &failing).is_err());
}

#[test]
fn chain_parsing() {
    assert_eq!("tier-1+2".parse::<ChainId>().unwrap(), ChainId::Tier12);
    let c: TransportChain = "T05,T10".parse().unwrap();
    assert_eq!(c.steps, vec![TransformId::T05, TransformId::T10]);
    assert!("T13".parse::<TransportChain>().is_err());
}
