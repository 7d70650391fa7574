//! The command-line workflow end to end, driven in-process: train both
//! components, fuse them, evaluate and audit. Pass a directory to keep the
//! outputs; otherwise a temporary one is used.

use docfusion::cli;
use docfusion::synthetic::write_xor_corpus;

fn main() {
    let keep = std::env::args().nth(1);
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = keep.map(std::path::PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());
    write_xor_corpus(&root.join("corpus"), 120, 44, 5).expect("corpus");

    let config = root.join("run.toml");
    std::fs::write(
        &config,
        "manifest = \"corpus/manifest.tsv\"\noutput_dir = \"out\"\nseed = 5\n\n\
         [text]\nvocab_sizes = [50, 100]\nhidden_width = 32\nepochs = 30\nbatch_size = 8\n\n\
         [image]\nside = 44\nepochs = 8\nbatch_size = 16\n\n\
         [fusion]\noof_folds = 3\n",
    )
    .expect("config");
    let c = config.to_str().unwrap();
    let models = root.join("out/models");
    let model = |name: &str| models.join(name).to_string_lossy().into_owned();
    let (text, image) = (model("text-bow-100.dfm"), model("image-mini-alexnet-bn-44.dfm"));

    let steps: [&[&str]; 5] = [
        &["--config", c, "train", "text"],
        &["--config", c, "train", "image"],
        &["--config", c, "fuse", &image, &text],
        &["--config", c, "evaluate", &text, "--split", "test"],
        &["--config", c, "audit"],
    ];
    for step in steps {
        println!("$ docfusion {}", step[2..].join(" "));
        let mut argv = vec!["docfusion"];
        argv.extend_from_slice(step);
        let code = cli::run(argv, &mut std::io::stdout(), &mut std::io::stderr());
        if code != cli::EXIT_OK {
            eprintln!("exit status {code}");
            std::process::exit(code);
        }
    }
}
