use std::collections::BTreeSet;
use std::fmt::Write as _;

use malclust::corpus::{Manifest, MalwareType, Selector, REFERENCE_FAMILIES};

fn paper_shaped() -> Manifest {
    let mut text = String::new();
    for (name, t) in REFERENCE_FAMILIES {
        for i in 0..1000 {
            let _ = writeln!(text, "{name}/{i:04}.bin\t{name}\t{t}");
        }
    }
    Manifest::parse(&text, "/corpus").unwrap()
}

#[test]
fn paper_shaped_manifest_has_the_reference_histogram() {
    let m = paper_shaped();
    assert_eq!(m.families().len(), 20);
    assert_eq!(m.len(), 20_000);
    let indices: Vec<usize> = m.families().iter().map(|f| f.index).collect();
    assert_eq!(indices, (0..20).collect::<Vec<_>>());
    let hist = m.type_histogram(true);
    let expected = [
        (MalwareType::Trojan, 8000),
        (MalwareType::VirTool, 3000),
        (MalwareType::PasswordStealer, 3000),
        (MalwareType::Backdoor, 2000),
        (MalwareType::Rogue, 2000),
        (MalwareType::Worm, 1000),
        (MalwareType::Adware, 1000),
    ];
    assert_eq!(hist.len(), 7);
    for (t, count) in expected {
        assert_eq!(hist[&t], count, "{t}");
    }
}

#[test]
fn selectors_on_the_paper_shape() {
    let m = paper_shaped();
    assert_eq!(m.select(&Selector::Families(vec!["Adload".into()])).unwrap().len(), 1000);
    assert!(m.select(&Selector::Families(vec![])).unwrap().is_empty());
    let virtool = m.select(&Selector::Types(vec![MalwareType::VirTool])).unwrap();
    assert_eq!(virtool.len(), 3000);
    let names: BTreeSet<&str> = virtool.iter().map(|e| m.families()[e.family].name.as_str()).collect();
    assert_eq!(names, BTreeSet::from(["CeeInject", "DelfInject", "Obfuscator"]));
}

#[test]
fn family_streams_partition_the_corpus() {
    let m = paper_shaped();
    let mut seen = BTreeSet::new();
    for f in m.families() {
        for e in m.select(&Selector::Families(vec![f.name.clone()])).unwrap() {
            assert!(seen.insert(e.relative.clone()), "{} selected twice", e.relative);
        }
    }
    let all: BTreeSet<String> = m.select(&Selector::All).unwrap().iter().map(|e| e.relative.clone()).collect();
    assert_eq!(seen, all);
}

#[test]
fn loading_is_deterministic_and_checks_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for (i, fam) in ["A", "B", "A", "B", "A"].iter().enumerate() {
        std::fs::write(dir.path().join(format!("{i}.bin")), vec![i as u8; 10 + i]).unwrap();
        let _ = writeln!(text, "{i}.bin\t{fam}\tWorm");
    }
    let path = dir.path().join("m.tsv");
    std::fs::write(&path, &text).unwrap();
    let m = Manifest::load(&path).unwrap();
    let load = || m.load_samples(&Selector::Families(vec!["A".into()]), 2).unwrap();
    let (x, y) = (load(), load());
    assert_eq!(x.len(), 3);
    assert!(x.iter().zip(&y).all(|(a, b)| a.path == b.path && a.bytes == b.bytes));

    std::fs::remove_file(dir.path().join("3.bin")).unwrap();
    assert_eq!(Manifest::load(&path).unwrap_err().kind(), "MissingFile");
    assert_eq!(Manifest::load(dir.path().join("absent.tsv")).unwrap_err().kind(), "MissingFile");

    std::fs::write(dir.path().join("3.bin"), [1u8]).unwrap();
    let m = Manifest::load(&path).unwrap();
    assert_eq!(m.load_samples(&Selector::All, 2).unwrap_err().kind(), "SampleTooShort");
}
