//! Replays the checked-in fuzz seeds through the same entry points as the
//! fuzz targets.

use std::fs;
use std::path::PathBuf;

use mcsim::isa::{disassemble, parse_program};
use mcsim::machine::{MachineConfig, MemoryImage};
use mcsim::registry::Registry;
use mcsim::spgemm::{recode_csc_to_csr, PackedBlock, SparseMatrix};
use mcsim::timing::CostModel;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

/// Seeds whose names start with one of `bad` must be rejected; all others
/// accepted.
fn expect(name: &str, ok: bool, bad: &[&str]) {
    let want = !bad.iter().any(|b| name.starts_with(b));
    assert_eq!(ok, want, "seed {name}");
}

#[test]
fn parse_program_seeds() {
    for (name, data) in seeds("parse_program") {
        let r = parse_program(text(&data));
        expect(&name, r.is_ok(), &["missing_semicolon"]);
        if let Ok(p) = r {
            assert_eq!(parse_program(&disassemble(&p)).unwrap(), p);
        }
    }
}

#[test]
fn machine_config_seeds() {
    for (name, data) in seeds("machine_config") {
        expect(&name, MachineConfig::from_json(text(&data)).is_ok(), &["bad_"]);
    }
}

#[test]
fn mem_descriptor_seeds() {
    for (name, data) in seeds("mem_descriptor") {
        let (len, rest) = data.split_first().unwrap();
        let symbols = MemoryImage::parse_descriptor(text(rest)).unwrap();
        expect(&name, MemoryImage::new(vec![0; *len as usize * 16], symbols).is_ok(), &["out_of_range"]);
    }
}

#[test]
fn manifest_seeds() {
    for (name, data) in seeds("manifest") {
        let r = Registry::from_manifest(text(&data));
        expect(&name, r.is_ok(), &["empty_slots"]);
        if let Ok(reg) = r {
            assert_eq!(Registry::from_manifest(&reg.manifest_json()).unwrap().manifest(), reg.manifest());
        }
    }
}

#[test]
fn cost_model_seeds() {
    for (name, data) in seeds("cost_model") {
        expect(&name, CostModel::from_json(text(&data)).is_ok(), &["zero_"]);
    }
}

#[test]
fn packed_block_seeds() {
    for (name, data) in seeds("packed_block") {
        let r = PackedBlock::decode(&data);
        expect(&name, r.is_ok(), &["overfull_"]);
        if r.is_ok() {
            assert_eq!(recode_csc_to_csr(&data).unwrap().len(), data.len());
        }
    }
}

#[test]
fn matrix_blob_seeds() {
    for (name, data) in seeds("matrix_blob") {
        let r = SparseMatrix::from_blob(&data);
        expect(&name, r.is_ok(), &["bad_"]);
        if let Ok(m) = r {
            assert_eq!(m.to_blob(), data);
        }
    }
}
