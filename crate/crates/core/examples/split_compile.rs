//! Compile the bundled holdout splits and print what ends up where.
//!
//! cargo run --example split_compile

use hierood::hierarchy::{bundled, compile_split, emit_manifest, parse_hierarchy, Holdout};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fgvc = bundled::fgvc_aircraft();
    println!("{}: per-level node counts {:?}", fgvc.id(), fgvc.level_counts());
    let plan = compile_split(&fgvc, &bundled::fgvc_split1())?;
    let manifest = emit_manifest(&plan);
    println!("  split 1: {} ID classes", manifest.num_classes());
    for (level, leaves) in &manifest.ood_sets {
        println!("  {level}: {leaves:?}");
    }

    let ships = bundled::ships_rs();
    let manifest = emit_manifest(&compile_split(&ships, &bundled::ships_military())?);
    println!("{}: ID classes {:?}", ships.id(), manifest.id_classes);

    // a hand-written hierarchy in the indented text format
    let text = "\
@hierarchy toy
root: Toy
  a: A
    a/x: AX
    a/y: AY
  b: B
    b/x: BX
    b/y: BY
";
    let toy = parse_hierarchy(text)?;
    let holdouts: Vec<Holdout> = vec!["b=L1".parse()?, "a/y=L2".parse()?];
    let manifest = emit_manifest(&compile_split(&toy, &holdouts)?);
    print!("{}", manifest.to_json());
    Ok(())
}
