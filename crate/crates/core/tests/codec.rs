use std::path::PathBuf;

use punch_core::wire::{Block, PunchHeader, WireError};

fn fixture(name: &str) -> Vec<u8> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let digits: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    hex::decode(digits).expect("fixture is hex")
}

fn golden() -> Vec<(&'static str, PunchHeader)> {
    vec![
        ("empty_header.hex", PunchHeader::default()),
        (
            "one_xor_pair.hex",
            PunchHeader {
                xored: vec![(7, 3)],
                ..Default::default()
            },
        ),
        (
            "three_report_ids.hex",
            PunchHeader {
                report_ids: vec![1, 2, 3],
                ..Default::default()
            },
        ),
    ]
}

#[test]
fn encodings_match_fixtures() {
    for (name, h) in golden() {
        assert_eq!(h.encode().unwrap(), fixture(name), "{name}");
    }
}

#[test]
fn fixtures_decode_back() {
    for (name, h) in golden() {
        let bytes = fixture(name);
        assert_eq!(PunchHeader::decode(&bytes).unwrap(), (h, bytes.len()), "{name}");
    }
}

#[test]
fn fixture_sizes() {
    assert_eq!(fixture("empty_header.hex").len(), 20);
    assert_eq!(fixture("one_xor_pair.hex").len(), 24);
    // 4 bytes of count plus 6 bytes of ids padded to 8.
    assert_eq!(fixture("three_report_ids.hex").len(), 20 + 8);
}

#[test]
fn truncated_fixture_names_the_block() {
    let bytes = fixture("one_xor_pair.hex");
    assert!(matches!(
        PunchHeader::decode(&bytes[..4]),
        Err(WireError::CountExceedsInput {
            block: Block::Xored,
            ..
        } | WireError::Truncated { block: Block::Xored })
    ));
}
