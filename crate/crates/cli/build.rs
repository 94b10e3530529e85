use std::process::Command;

fn main() {
    let pkg = std::env::var("CARGO_PKG_VERSION").unwrap_or_default();
    let describe = Command::new("git")
        .args(["describe", "--tags", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_owned())
        .filter(|s| !s.is_empty());
    // A bare hash means there is no tag to describe from.
    let version = match describe {
        Some(d) if d.starts_with('v') => d,
        Some(d) => format!("v{pkg}-g{d}"),
        None => format!("v{pkg}"),
    };
    println!("cargo:rustc-env=EFFORTGEN_VERSION={version}");
    for f in ["../../.git/HEAD", "../../.git/index"] {
        if std::path::Path::new(f).exists() {
            println!("cargo:rerun-if-changed={f}");
        }
    }
}
