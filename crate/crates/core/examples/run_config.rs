//! Run configuration: defaults, overrides and the text format.

use svkit::config::RunConfig;

fn main() -> svkit::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.set("run.seed", "7")?;
    cfg.set("upstream.plant_layer", "3")?;
    cfg.set("train.batch_size", "4")?;
    cfg.finish()?;
    let text = cfg.dump();
    print!("{text}");

    let back = RunConfig::parse(&text)?;
    assert_eq!(back.dump(), text);

    match RunConfig::parse("aam.margin = -1\n") {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
