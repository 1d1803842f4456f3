//! Drives the command-line front end in-process: generate, train, verify.
//!
//! cargo run --release --example cli_pipeline

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("tree-opo-cli-pipeline");
    std::fs::create_dir_all(&dir)?;
    let config = dir.join("run.conf");
    std::fs::write(
        &config,
        "env.alphabet = 5\nenv.horizon = 5\nenv.targets = 3\nenv.seed = 0\nenv.problems = 2\n\
         teacher.rollouts = 16\ntrain.steps = 500\n",
    )?;
    let config = config.to_string_lossy().into_owned();
    let out = dir.to_string_lossy().into_owned();
    let mut stdout = std::io::stdout();
    let mut stderr = std::io::stderr();
    for args in [
        vec!["tree-opo", "generate", "--config", &config, "--out", &out],
        vec!["tree-opo", "train", "--config", &config, "--out", &out, "--seed", "11"],
        vec!["tree-opo", "verify", "mc-baseline"],
    ] {
        let code = tree_opo::cli::run(&args, &mut stdout, &mut stderr);
        println!("[{}] exit code {code}", args[1]);
    }
    println!("outputs in {}", dir.display());
    Ok(())
}
